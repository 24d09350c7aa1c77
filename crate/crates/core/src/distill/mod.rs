//! Knowledge-distillation training of a trainable preconditioner.
//!
//! The teacher solver runs on a well-conditioned operator with the identity
//! preconditioner. The student runs on the physical operator and is unrolled
//! on a tape; its preconditioner is trained to match the teacher's gradient
//! direction and reconstruction, plus the ground truth.

pub mod optim;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::forward::{grad_fidelity, SensingOperator};
use crate::io::weights;
use crate::precond::{NpoConfig, PrecondContext, Preconditioner, Variant};
use crate::rng;
use crate::solver::{pnp_fista, pnp_fista_on_tape, ProxOperator, SolverConfig};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

pub use optim::{LrSchedule, OptimizerKind, OptimizerState};

/// `|1 - cos(pg, tg)|^2`, with the teacher side detached.
pub fn loss_gradient(tape: &mut Tape, pg: Var, tg: Var) -> Result<Var> {
    let tg = tape.detach(tg);
    let cos = tape.cosine_similarity(pg, tg)?;
    let neg = tape.scale(cos, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    tape.mul(one_minus, one_minus)
}

/// `||x_p - x_t||^2`, with `x_t` detached.
pub fn loss_imitation(tape: &mut Tape, x_p: Var, x_t: Var) -> Result<Var> {
    let x_t = tape.detach(x_t);
    squared_distance(tape, x_p, x_t)
}

/// `||x_p - x_gt||^2`.
pub fn loss_supervised(tape: &mut Tape, x_p: Var, x_gt: Var) -> Result<Var> {
    let x_gt = tape.detach(x_gt);
    squared_distance(tape, x_p, x_gt)
}

fn squared_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    Ok(tape.l2_norm_squared(d))
}

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gradient: f64,
    pub imitation: f64,
    pub supervised: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gradient: 1.0,
            imitation: 1.0,
            supervised: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(gradient: f64, imitation: f64, supervised: f64) -> Result<Self> {
        let w = LossWeights {
            gradient,
            imitation,
            supervised,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn supervised_only() -> Self {
        LossWeights {
            gradient: 0.0,
            imitation: 0.0,
            supervised: 1.0,
        }
    }

    /// True for `(0, 0, >0)`, i.e. plain supervised training.
    pub fn is_supervised_only(&self) -> bool {
        self.gradient == 0.0 && self.imitation == 0.0 && self.supervised > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.gradient, self.imitation, self.supervised];
        if all.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Parameter(format!(
                "loss weights must be finite and >= 0, got {all:?}"
            )));
        }
        if all.iter().all(|l| *l == 0.0) {
            return Err(Error::Parameter("at least one loss weight must be > 0".into()));
        }
        Ok(())
    }
}

/// Weighted sum of the terms whose weight is positive.
pub fn kd_total(tape: &mut Tape, lg: Var, li: Var, ls: Var, weights: &LossWeights) -> Result<Var> {
    weights.validate()?;
    let mut total: Option<Var> = None;
    for (l, w) in [
        (lg, weights.gradient),
        (li, weights.imitation),
        (ls, weights.supervised),
    ] {
        if w > 0.0 {
            let term = tape.scale(l, w);
            total = Some(match total {
                None => term,
                Some(t) => tape.add(t, term)?,
            });
        }
    }
    Ok(total.expect("validated: one weight is positive"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Only used by AdamW.
    pub weight_decay: f64,
    pub seed: u64,
    /// Rescales the batch gradient to this global L2 norm when it is larger.
    pub clip_norm: Option<f64>,
    pub schedule: LrSchedule,
}

impl Default for KdConfig {
    /// Small-problem defaults: a larger step than the 50-epoch schedule below.
    fn default() -> Self {
        KdConfig {
            weights: LossWeights::default(),
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 8,
            optimizer: OptimizerKind::Adam,
            weight_decay: 0.01,
            seed: 0,
            clip_norm: None,
            schedule: LrSchedule::Constant,
        }
    }
}

impl KdConfig {
    /// The long schedule of the original experiments.
    pub fn reference() -> Self {
        KdConfig {
            epochs: 50,
            learning_rate: 1e-5,
            optimizer: OptimizerKind::AdamW,
            ..KdConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter(format!(
                "learning rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Parameter(format!(
                "weight decay {} must be >= 0",
                self.weight_decay
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::Parameter(format!("clip norm {c} must be > 0")));
            }
        }
        Ok(())
    }
}

/// The fixed inputs of a training run.
#[derive(Debug, Clone)]
pub struct DistillProblem {
    pub images: Vec<Tensor>,
    pub y_student: Vec<Tensor>,
    pub y_teacher: Vec<Tensor>,
    pub student_op: SensingOperator,
    pub teacher_op: SensingOperator,
    pub student: SolverConfig,
    pub teacher: SolverConfig,
    pub prox: ProxOperator,
}

impl DistillProblem {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if self.y_student.len() != n || self.y_teacher.len() != n {
            return Err(Error::Contract(format!(
                "dataset sizes differ: {} images, {} student and {} teacher measurements",
                n,
                self.y_student.len(),
                self.y_teacher.len()
            )));
        }
        if n == 0 {
            return Err(Error::Data("training set is empty".into()));
        }
        if self.student_op.n() != self.teacher_op.n() {
            return Err(Error::dims("distill", &[self.student_op.n()], &[self.teacher_op.n()]));
        }
        if self.student.iterations != self.teacher.iterations {
            return Err(Error::Contract(
                "teacher and student must run the same number of iterations".into(),
            ));
        }
        self.student.validate()?;
        self.teacher.validate()?;
        Ok(())
    }
}

/// Teacher reconstruction and its fidelity gradient for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput {
    pub x: Tensor,
    pub grad: Tensor,
}

/// Loss values of one sample or averaged over several.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValues {
    pub gradient: f64,
    pub imitation: f64,
    pub supervised: f64,
    pub total: f64,
}

impl LossValues {
    fn add_scaled(&mut self, o: &LossValues, s: f64) {
        self.gradient += s * o.gradient;
        self.imitation += s * o.imitation;
        self.supervised += s * o.supervised;
        self.total += s * o.total;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    /// 1-based.
    pub epoch: usize,
    pub mean: LossValues,
}

/// One training run: data, solver pair, loss weights, optimizer and the
/// preconditioner being trained.
#[derive(Debug, Clone)]
pub struct DistillSession {
    problem: DistillProblem,
    kd: KdConfig,
    precond: Preconditioner,
    optimizer: OptimizerState,
    history: Vec<EpochLosses>,
    teacher: Vec<Option<TeacherOutput>>,
    teacher_cache: Option<PathBuf>,
    checkpoint_dir: Option<PathBuf>,
}

impl DistillSession {
    pub fn new(problem: DistillProblem, kd: KdConfig, precond: Preconditioner) -> Result<Self> {
        problem.validate()?;
        kd.validate()?;
        if !precond.is_trainable() {
            return Err(Error::Contract(format!(
                "{} preconditioner has nothing to train",
                precond.variant()
            )));
        }
        if precond.n() != problem.student_op.n() {
            return Err(Error::dims("distill", &[precond.n()], &[problem.student_op.n()]));
        }
        if precond.iterations() != problem.student.iterations {
            return Err(Error::Contract(format!(
                "preconditioner built for {} iterations, solver runs {}",
                precond.iterations(),
                problem.student.iterations
            )));
        }
        let teacher = vec![None; problem.len()];
        Ok(DistillSession {
            optimizer: OptimizerState::new(kd.optimizer, kd.learning_rate, kd.weight_decay),
            problem,
            kd,
            precond,
            history: Vec::new(),
            teacher,
            teacher_cache: None,
            checkpoint_dir: None,
        })
    }

    /// Stores teacher outputs at `path` after the first epoch, and reuses the
    /// file on later runs when it matches the dataset size.
    pub fn with_teacher_cache(mut self, path: impl Into<PathBuf>) -> Self {
        self.teacher_cache = Some(path.into());
        self
    }

    /// Writes the parameters to `dir/epoch_NNN.d2gpw` after every epoch.
    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn problem(&self) -> &DistillProblem {
        &self.problem
    }

    pub fn config(&self) -> &KdConfig {
        &self.kd
    }

    pub fn preconditioner(&self) -> &Preconditioner {
        &self.precond
    }

    pub fn preconditioner_mut(&mut self) -> &mut Preconditioner {
        &mut self.precond
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn history(&self) -> &[EpochLosses] {
        &self.history
    }

    /// Runs the teacher for sample `i`, or returns the cached result.
    pub fn teacher_output(&mut self, i: usize) -> Result<&TeacherOutput> {
        if i >= self.teacher.len() {
            return Err(Error::Index {
                index: i,
                max: self.teacher.len().saturating_sub(1),
            });
        }
        if self.teacher[i].is_none() {
            let out = run_teacher(&self.problem, i).map_err(|e| training_error(i, e))?;
            self.teacher[i] = Some(out);
        }
        Ok(self.teacher[i].as_ref().expect("just filled"))
    }

    /// Loss values of sample `i` and the gradient of its total loss with
    /// respect to each preconditioner parameter.
    pub fn sample_gradients(&mut self, i: usize) -> Result<(LossValues, Vec<Vec<f64>>)> {
        let teacher = self.teacher_output(i)?.clone();
        sample_step(&self.problem, &self.precond, &self.kd.weights, &teacher, i).map_err(|e| training_error(i, e))
    }

    /// Adds the batch-mean gradient to the parameters' gradient buffers and
    /// returns the batch-mean losses. Reduction follows the order of `indices`.
    pub fn accumulate_batch(&mut self, indices: &[usize]) -> Result<LossValues> {
        if indices.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let scale = 1.0 / indices.len() as f64;
        let mut mean = LossValues::default();
        for &i in indices {
            let (losses, grads) = self.sample_gradients(i)?;
            for (p, g) in self.precond.params_mut().iter_mut().zip(&grads) {
                p.accumulate_grad(g, scale)?;
            }
            mean.add_scaled(&losses, scale);
        }
        Ok(mean)
    }

    /// Sample order of epoch `epoch` (1-based).
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        epoch_order(self.kd.seed, self.problem.len(), epoch)
    }

    /// One pass over the data with one optimizer step per batch.
    pub fn run_epoch(&mut self) -> Result<EpochLosses> {
        let epoch = self.history.len() + 1;
        if epoch == 1 {
            self.load_teacher_cache()?;
        }
        let order = self.epoch_order(epoch);
        let lr = self.kd.schedule.rate(self.kd.learning_rate, epoch, self.kd.epochs);
        self.optimizer.set_learning_rate(lr);
        let mut sum = LossValues::default();
        for batch in order.chunks(self.kd.batch_size) {
            self.precond.params_mut().zero_grad();
            let mean = self.accumulate_batch(batch)?;
            if let Some(max) = self.kd.clip_norm {
                clip_grad_norm(self.precond.params_mut(), max);
            }
            self.optimizer.step(self.precond.params_mut())?;
            sum.add_scaled(&mean, batch.len() as f64);
        }
        let mut mean = LossValues::default();
        mean.add_scaled(&sum, 1.0 / order.len() as f64);
        let record = EpochLosses { epoch, mean };
        self.history.push(record);
        if epoch == 1 {
            self.store_teacher_cache()?;
        }
        if let Some(dir) = &self.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            weights::save(
                &dir.join(format!("epoch_{epoch:03}.d2gpw")),
                &self.precond.params().to_named(),
            )?;
        }
        Ok(record)
    }

    fn load_teacher_cache(&mut self) -> Result<()> {
        let Some(path) = &self.teacher_cache else {
            return Ok(());
        };
        if !path.exists() {
            return Ok(());
        }
        let named = weights::load(path)?;
        if named.len() != 2 * self.teacher.len() {
            return Ok(());
        }
        let mut it = named.into_iter();
        for slot in self.teacher.iter_mut() {
            let (_, x) = it.next().expect("length checked");
            let (_, grad) = it.next().expect("length checked");
            *slot = Some(TeacherOutput { x, grad });
        }
        Ok(())
    }

    fn store_teacher_cache(&self) -> Result<()> {
        let Some(path) = &self.teacher_cache else {
            return Ok(());
        };
        let mut named = Vec::with_capacity(2 * self.teacher.len());
        for (i, t) in self.teacher.iter().enumerate() {
            let Some(t) = t else {
                return Ok(());
            };
            named.push((format!("teacher.{i}.x"), t.x.clone()));
            named.push((format!("teacher.{i}.grad"), t.grad.clone()));
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        weights::save(path, &named)
    }
}

/// Scales all gradients so their joint L2 norm is at most `max`; returns the
/// norm before scaling.
pub fn clip_grad_norm(params: &mut ParamSet, max: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = max / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

/// Seeded per-epoch permutation of `0..len`.
pub fn epoch_order(seed: u64, len: usize, epoch: usize) -> Vec<usize> {
    let mut rng = rng::seeded(rng::derive_seed(seed, rng::Purpose::Shuffle, epoch as u64));
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

fn training_error(sample: usize, e: Error) -> Error {
    match e {
        Error::Training { .. } => e,
        other => Error::Training {
            sample,
            source: Box::new(other),
        },
    }
}

fn run_teacher(problem: &DistillProblem, i: usize) -> Result<TeacherOutput> {
    let ctx = PrecondContext {
        op: problem.teacher_op.clone(),
        iterations: problem.teacher.iterations,
        npo: NpoConfig::default(),
    };
    let identity = Preconditioner::init(Variant::Identity, &ctx, 0)?;
    let cfg = SolverConfig {
        record_trace: false,
        ..problem.teacher
    };
    let y = &problem.y_teacher[i];
    let run = pnp_fista(&identity, &problem.teacher_op, y, &cfg, &problem.prox, None)?;
    let grad = Tensor::from_vec(problem.teacher_op.fidelity_gradient(run.final_x.data(), y.data()));
    Ok(TeacherOutput { x: run.final_x, grad })
}

fn sample_step(
    problem: &DistillProblem,
    precond: &Preconditioner,
    weights: &LossWeights,
    teacher: &TeacherOutput,
    i: usize,
) -> Result<(LossValues, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let bound = precond.bind(&mut tape, true);
    let y = tape.constant(problem.y_student[i].clone());
    let run = pnp_fista_on_tape(
        &mut tape,
        &bound,
        &problem.student_op,
        y,
        &problem.student,
        &problem.prox,
    )?;
    let x_p = run.final_x;
    let k = problem.student.iterations;
    let gs = grad_fidelity(&mut tape, &problem.student_op, x_p, y)?;
    let pg = bound.apply(&mut tape, gs, k)?;
    let tg = tape.constant(teacher.grad.clone());
    let xt = tape.constant(teacher.x.clone());
    let gt_image = problem.images[i].clone();
    let gt_flat = gt_image.clone().reshape(&[gt_image.len()])?;
    let xgt = tape.constant(gt_flat);

    let lg = loss_gradient(&mut tape, pg, tg)?;
    let li = loss_imitation(&mut tape, x_p, xt)?;
    let ls = loss_supervised(&mut tape, x_p, xgt)?;
    let total = kd_total(&mut tape, lg, li, ls, weights)?;
    let values = LossValues {
        gradient: tape.value(lg).item()?,
        imitation: tape.value(li).item()?,
        supervised: tape.value(ls).item()?,
        total: tape.value(total).item()?,
    };
    if !values.total.is_finite() {
        return Err(Error::Numerical(format!("loss is {}", values.total)));
    }
    let vars = bound.vars().to_vec();
    let grads = tape.backward(total)?;
    let out = vars
        .iter()
        .zip(precond.params().iter())
        .map(|(v, p)| {
            grads
                .get(*v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; p.value.len()])
        })
        .collect();
    Ok((values, out))
}

/// Trained parameters and per-epoch mean losses.
#[derive(Debug, Clone)]
pub struct Trained {
    pub preconditioner: Preconditioner,
    pub history: Vec<EpochLosses>,
}

/// Runs all configured epochs.
pub fn train_npo(mut session: DistillSession) -> Result<Trained> {
    for _ in 0..session.kd.epochs {
        session.run_epoch()?;
    }
    Ok(Trained {
        preconditioner: session.precond,
        history: session.history,
    })
}

/// `epoch,loss_gradient,loss_imitation,loss_supervised,total` rows.
pub fn history_csv(history: &[EpochLosses]) -> String {
    let mut out = String::from("epoch,loss_gradient,loss_imitation,loss_supervised,total\n");
    for h in history {
        let m = &h.mean;
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e}",
            h.epoch, m.gradient, m.imitation, m.supervised, m.total
        );
    }
    out
}

pub fn write_history_csv(path: &Path, history: &[EpochLosses]) -> Result<()> {
    std::fs::write(path, history_csv(history))?;
    Ok(())
}

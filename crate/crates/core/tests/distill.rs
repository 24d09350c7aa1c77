//! Distillation losses, optimizer updates and the training loop.

mod common;

use common::*;
use d2gp::distill::{
    clip_grad_norm, epoch_order, history_csv, kd_total, loss_gradient, loss_imitation, loss_supervised, train_npo,
    DistillProblem, DistillSession, KdConfig, LossWeights, LrSchedule, OptimizerKind, OptimizerState,
};
use d2gp::forward::{build_spc_orthonormal, simulate, NoiseModel};
use d2gp::io::{phantom, weights};
use d2gp::precond::{NpoConfig, PrecondContext, Preconditioner, Variant};
use d2gp::solver::{pnp_fista_on_tape, ProxOperator, SolverConfig};
use d2gp::{Error, ParamSet, Tape, Tensor, Var};
use proptest::prelude::*;

// losses

fn scalar(f: impl FnOnce(&mut Tape) -> d2gp::Result<Var>) -> d2gp::Result<f64> {
    let mut tape = Tape::new();
    let v = f(&mut tape)?;
    tape.value(v).item()
}

fn lg(p: &[f64], t: &[f64]) -> d2gp::Result<f64> {
    scalar(|tape| {
        let a = tape.constant(Tensor::from_vec(p.to_vec()));
        let b = tape.constant(Tensor::from_vec(t.to_vec()));
        loss_gradient(tape, a, b)
    })
}

fn li(p: &[f64], t: &[f64]) -> f64 {
    scalar(|tape| {
        let a = tape.constant(Tensor::from_vec(p.to_vec()));
        let b = tape.constant(Tensor::from_vec(t.to_vec()));
        loss_imitation(tape, a, b)
    })
    .unwrap()
}

fn ls(p: &[f64], t: &[f64]) -> f64 {
    scalar(|tape| {
        let a = tape.constant(Tensor::from_vec(p.to_vec()));
        let b = tape.constant(Tensor::from_vec(t.to_vec()));
        loss_supervised(tape, a, b)
    })
    .unwrap()
}

#[test]
fn gradient_loss_examples() {
    let t = [1.0, -2.0, 0.5];
    assert!(lg(&t, &t).unwrap().abs() < 1e-15);
    assert!((lg(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
    let neg: Vec<f64> = t.iter().map(|v| -v).collect();
    assert!((lg(&neg, &t).unwrap() - 4.0).abs() < 1e-12);
    assert!(matches!(lg(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Degenerate(_))));
    assert!(matches!(lg(&[1.0, 0.0], &[0.0, 0.0]), Err(Error::Degenerate(_))));
}

#[test]
fn imitation_and_supervised_examples() {
    let x = randn(&mut rng(1), &[32]).into_data();
    assert_eq!(li(&x, &x), 0.0);
    let shifted: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
    assert!((li(&shifted, &x) - 32.0).abs() < 1e-12);

    let y = randn(&mut rng(2), &[32]).into_data();
    let mut oracle = 0.0;
    for i in 0..32 {
        oracle += (x[i] - y[i]) * (x[i] - y[i]);
    }
    assert!((li(&x, &y) - oracle).abs() < 1e-12);
    assert_eq!(ls(&x, &y), li(&x, &y));

    assert_eq!(ls(&vec![0.0; 1024], &vec![0.5; 1024]), 256.0);
}

fn total(l: (f64, f64, f64), w: &LossWeights) -> f64 {
    scalar(|tape| {
        let a = tape.constant(Tensor::scalar(l.0));
        let b = tape.constant(Tensor::scalar(l.1));
        let c = tape.constant(Tensor::scalar(l.2));
        kd_total(tape, a, b, c, w)
    })
    .unwrap()
}

#[test]
fn total_loss_examples() {
    assert_eq!(total((2.0, 2.0, 2.0), &LossWeights::default()), 6.0);
    assert_eq!(total((0.3, 7.0, 1.25), &LossWeights::supervised_only()), 1.25);
    assert!(LossWeights::supervised_only().is_supervised_only());
    assert!(matches!(LossWeights::new(0.0, 0.0, 0.0), Err(Error::Parameter(_))));
    assert!(matches!(LossWeights::new(-1.0, 1.0, 0.0), Err(Error::Parameter(_))));
    assert!(matches!(LossWeights::new(f64::NAN, 1.0, 0.0), Err(Error::Parameter(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn loss_ranges(seed in any::<u64>(), len in 1usize..40) {
        let mut r = rng(seed);
        let a = randn(&mut r, &[len]).into_data();
        let b = randn(&mut r, &[len]).into_data();
        prop_assume!(a.iter().any(|v| *v != 0.0) && b.iter().any(|v| *v != 0.0));
        let g = lg(&a, &b).unwrap();
        prop_assert!((0.0..=4.0).contains(&g));
        prop_assert!(li(&a, &b) >= 0.0);
        prop_assert!(ls(&a, &b) >= 0.0);
        let w = LossWeights::new(r.random_range(0.0..2.0), r.random_range(0.0..2.0), 0.5).unwrap();
        prop_assert!(total((g, li(&a, &b), ls(&a, &b)), &w) >= 0.0);
    }

    #[test]
    fn gradient_loss_is_scale_invariant(seed in any::<u64>(), s in 0.01f64..100.0) {
        let mut r = rng(seed);
        let a = randn(&mut r, &[10]).into_data();
        let b = randn(&mut r, &[10]).into_data();
        let scaled: Vec<f64> = a.iter().map(|v| v * s).collect();
        prop_assert!((lg(&a, &b).unwrap() - lg(&scaled, &b).unwrap()).abs() < 1e-12);
    }
}

use rand::Rng;

// optimizer

fn one_param(v: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.push("w", Tensor::from_vec(vec![v])).unwrap();
    p
}

#[test]
fn first_adam_step_closed_form() {
    let mut p = one_param(0.5);
    p.get_mut(0).accumulate_grad(&[1.0], 1.0).unwrap();
    let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-3, 0.0);
    opt.step(&mut p).unwrap();
    let expect = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
    assert!((p.get(0).value.data()[0] - expect).abs() < 1e-15);
    assert_eq!(opt.steps(), 1);
    assert!(p.get(0).grad.is_none(), "gradients are cleared after a step");
}

#[test]
fn adam_matches_hand_rolled_moments() {
    let grads = [0.3, -1.2, 0.7, 0.05, -0.4];
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
    let mut p = one_param(1.0);
    let mut opt = OptimizerState::new(OptimizerKind::Adam, lr, 0.0);
    let (mut m, mut v, mut x) = (0.0, 0.0, 1.0_f64);
    for (t, g) in grads.iter().enumerate() {
        p.get_mut(0).accumulate_grad(&[*g], 1.0).unwrap();
        opt.step(&mut p).unwrap();
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32 + 1));
        let vh = v / (1.0 - b2.powi(t as i32 + 1));
        x -= lr * mh / (vh.sqrt() + eps);
        assert!((p.get(0).value.data()[0] - x).abs() < 1e-14, "step {}", t + 1);
    }
}

#[test]
fn adamw_decays_before_the_adam_step() {
    let mut p = one_param(2.0);
    p.get_mut(0).accumulate_grad(&[0.0], 1.0).unwrap();
    let mut opt = OptimizerState::new(OptimizerKind::AdamW, 0.5, 0.1);
    opt.step(&mut p).unwrap();
    assert!((p.get(0).value.data()[0] - 2.0 * (1.0 - 0.5 * 0.1)).abs() < 1e-15);
}

#[test]
fn adamw_without_decay_is_adam() {
    let mut a = one_param(0.7);
    let mut b = one_param(0.7);
    let mut oa = OptimizerState::new(OptimizerKind::Adam, 3e-3, 0.0);
    let mut ob = OptimizerState::new(OptimizerKind::AdamW, 3e-3, 0.0);
    for g in [0.2, -0.9, 1.5] {
        a.get_mut(0).accumulate_grad(&[g], 1.0).unwrap();
        b.get_mut(0).accumulate_grad(&[g], 1.0).unwrap();
        oa.step(&mut a).unwrap();
        ob.step(&mut b).unwrap();
        assert_eq!(a.get(0).value.data()[0].to_bits(), b.get(0).value.data()[0].to_bits());
    }
}

#[test]
fn zero_learning_rate_is_a_no_op_and_missing_grads_fail() {
    let mut p = one_param(0.25);
    p.get_mut(0).accumulate_grad(&[3.0], 1.0).unwrap();
    let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.0, 0.0);
    opt.step(&mut p).unwrap();
    assert_eq!(p.get(0).value.data()[0], 0.25);
    assert!(matches!(opt.step(&mut p), Err(Error::Contract(_))));
}

#[test]
fn clipping_rescales_to_the_global_norm() {
    let mut p = ParamSet::new();
    p.push("a", Tensor::from_vec(vec![0.0, 0.0])).unwrap();
    p.push("b", Tensor::from_vec(vec![0.0])).unwrap();
    p.get_mut(0).accumulate_grad(&[3.0, 0.0], 1.0).unwrap();
    p.get_mut(1).accumulate_grad(&[4.0], 1.0).unwrap();
    assert_eq!(clip_grad_norm(&mut p, 10.0), 5.0);
    assert_eq!(p.get(0).grad.as_ref().unwrap().data(), &[3.0, 0.0]);
    assert_eq!(clip_grad_norm(&mut p, 1.0), 5.0);
    assert!((p.get(0).grad.as_ref().unwrap().data()[0] - 0.6).abs() < 1e-15);
    assert!((p.get(1).grad.as_ref().unwrap().data()[0] - 0.8).abs() < 1e-15);
    let bad = KdConfig {
        clip_norm: Some(0.0),
        ..KdConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Parameter(_))));
}

// training loop

struct Toy {
    problem: DistillProblem,
    npo: NpoConfig,
}

fn toy(samples: usize, side: usize, k: usize) -> Toy {
    let hs = build_spc_orthonormal(side, 0.25).unwrap();
    let ht = build_spc_orthonormal(side, 1.0).unwrap();
    let n = side * side;
    let images: Vec<Tensor> = (0..samples)
        .map(|i| phantom(side, 10 + i as u64).reshape(&[n]).unwrap())
        .collect();
    let noise = |op, x, s| simulate(op, x, &NoiseModel::new(0.01, s).unwrap()).unwrap();
    let y_student = images
        .iter()
        .enumerate()
        .map(|(i, x)| noise(&hs, x, 100 + i as u64))
        .collect();
    let y_teacher = images
        .iter()
        .enumerate()
        .map(|(i, x)| noise(&ht, x, 200 + i as u64))
        .collect();
    Toy {
        problem: DistillProblem {
            images,
            y_student,
            y_teacher,
            student_op: hs,
            teacher_op: ht,
            student: SolverConfig::new(0.4, 0.05, k).unwrap(),
            teacher: SolverConfig::new(0.7, 0.05, k).unwrap(),
            prox: ProxOperator::DctSoftThreshold,
        },
        npo: NpoConfig {
            channels: 4,
            blocks: 2,
            pe_dim: 8,
            ..NpoConfig::default()
        },
    }
}

impl Toy {
    fn precond(&self, variant: Variant, seed: u64) -> Preconditioner {
        let ctx = PrecondContext {
            op: self.problem.student_op.clone(),
            iterations: self.problem.student.iterations,
            npo: self.npo,
        };
        Preconditioner::init(variant, &ctx, seed).unwrap()
    }

    fn session(&self, kd: KdConfig, variant: Variant) -> DistillSession {
        DistillSession::new(self.problem.clone(), kd, self.precond(variant, 5)).unwrap()
    }
}

fn param_bits(p: &Preconditioner) -> Vec<u64> {
    p.params()
        .iter()
        .flat_map(|q| q.value.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn zero_learning_rate_keeps_initialization() {
    let t = toy(4, 8, 4);
    let kd = KdConfig {
        learning_rate: 0.0,
        epochs: 1,
        batch_size: 2,
        ..KdConfig::default()
    };
    let init = t.precond(Variant::Npo, 5);
    let trained = train_npo(t.session(kd, Variant::Npo)).unwrap();
    assert_eq!(param_bits(&trained.preconditioner), param_bits(&init));
    assert_eq!(trained.history.len(), 1);
}

#[test]
fn cosine_schedule_values() {
    let c = LrSchedule::Cosine;
    assert_eq!(c.rate(2.0, 1, 4), 2.0);
    // epoch 3 of 4 is half way: cos(pi/2) = 0
    assert!((c.rate(2.0, 3, 4) - 1.0).abs() < 1e-15);
    assert!((c.rate(2.0, 4, 4) - (1.0 + (0.75 * std::f64::consts::PI).cos())).abs() < 1e-15);
    let rates: Vec<f64> = (1..=10).map(|e| c.rate(1e-3, e, 10)).collect();
    assert!(rates.windows(2).all(|w| w[1] < w[0]) && rates[9] > 0.0);
    assert_eq!(LrSchedule::Constant.rate(0.3, 7, 10), 0.3);
    assert_eq!(LrSchedule::default(), LrSchedule::Constant);
}

#[test]
fn session_applies_the_schedule_per_epoch() {
    let t = toy(2, 8, 3);
    let kd = KdConfig {
        epochs: 3,
        batch_size: 2,
        schedule: LrSchedule::Cosine,
        ..KdConfig::default()
    };
    let mut s = t.session(kd, Variant::ScalarStep);
    for e in 1..=3 {
        s.run_epoch().unwrap();
        assert_eq!(
            s.optimizer().learning_rate(),
            LrSchedule::Cosine.rate(kd.learning_rate, e, 3)
        );
    }
}

#[test]
fn loss_decreases_on_small_toy() {
    let t = toy(8, 16, 20);
    let kd = KdConfig {
        epochs: 5,
        ..KdConfig::default()
    };
    let trained = train_npo(t.session(kd, Variant::Npo)).unwrap();
    let totals: Vec<f64> = trained.history.iter().map(|h| h.mean.total).collect();
    assert!(totals.windows(2).all(|w| w[1] < w[0]), "{totals:?}");
}

/// Plain supervised training written against the public primitives only.
fn supervised_reference(t: &Toy, kd: &KdConfig, mut p: Preconditioner) -> Vec<f64> {
    let prob = &t.problem;
    let mut opt = OptimizerState::new(kd.optimizer, kd.learning_rate, kd.weight_decay);
    let mut trace = Vec::new();
    for epoch in 1..=kd.epochs {
        let order = epoch_order(kd.seed, prob.len(), epoch);
        let mut sum = 0.0;
        for batch in order.chunks(kd.batch_size) {
            p.params_mut().zero_grad();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_mean = 0.0;
            for &i in batch {
                let mut tape = Tape::new();
                let bound = p.bind(&mut tape, true);
                let y = tape.constant(prob.y_student[i].clone());
                let run = pnp_fista_on_tape(&mut tape, &bound, &prob.student_op, y, &prob.student, &prob.prox).unwrap();
                let gt = tape.constant(prob.images[i].clone());
                let d = tape.sub(run.final_x, gt).unwrap();
                let loss = tape.l2_norm_squared(d);
                let value = tape.value(loss).item().unwrap();
                let vars = bound.vars().to_vec();
                let grads = tape.backward(loss).unwrap();
                for (q, v) in p.params_mut().iter_mut().zip(&vars) {
                    q.accumulate_grad(&grads.grad(*v).into_data(), scale).unwrap();
                }
                batch_mean += scale * value;
            }
            opt.step(p.params_mut()).unwrap();
            sum += batch.len() as f64 * batch_mean;
        }
        trace.push(sum / prob.len() as f64);
    }
    trace
}

#[test]
fn supervised_weights_match_separate_loop() {
    let t = toy(6, 8, 4);
    let kd = KdConfig {
        weights: LossWeights::supervised_only(),
        epochs: 3,
        batch_size: 4,
        learning_rate: 3e-3,
        seed: 17,
        ..KdConfig::default()
    };
    let reference = supervised_reference(&t, &kd, t.precond(Variant::Npo, 5));
    let trained = train_npo(t.session(kd, Variant::Npo)).unwrap();
    for (h, r) in trained.history.iter().zip(&reference) {
        assert!(
            (h.mean.total - r).abs() <= 1e-12 * r.abs(),
            "epoch {}: {} vs {r}",
            h.epoch,
            h.mean.total
        );
        assert_eq!(h.mean.total, h.mean.supervised);
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let t = toy(6, 8, 4);
    let kd = KdConfig {
        epochs: 2,
        batch_size: 4,
        seed: 3,
        ..KdConfig::default()
    };
    let a = train_npo(t.session(kd, Variant::Npo)).unwrap();
    let b = train_npo(t.session(kd, Variant::Npo)).unwrap();
    assert_eq!(param_bits(&a.preconditioner), param_bits(&b.preconditioner));
    assert_eq!(history_csv(&a.history), history_csv(&b.history));
    let bits = |h: &[d2gp::distill::EpochLosses]| -> Vec<u64> { h.iter().map(|e| e.mean.total.to_bits()).collect() };
    assert_eq!(bits(&a.history), bits(&b.history));
}

#[test]
fn epoch_orders_are_seeded_permutations() {
    let a = epoch_order(1, 50, 1);
    let mut sorted = a.clone();
    sorted.sort();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    assert_eq!(a, epoch_order(1, 50, 1));
    assert_ne!(a, epoch_order(1, 50, 2));
    assert_ne!(a, epoch_order(2, 50, 1));
}

fn grad_buffers(s: &DistillSession) -> Vec<f64> {
    s.preconditioner()
        .params()
        .iter()
        .flat_map(|p| p.grad.as_ref().map(|g| g.data().to_vec()).unwrap_or_default())
        .collect()
}

#[test]
fn batch_mean_is_invariant_to_tiling() {
    let t = toy(4, 8, 4);
    for variant in [Variant::Npo, Variant::Convolutional] {
        let mut one = t.session(KdConfig::default(), variant);
        one.accumulate_batch(&[0, 1, 2, 3]).unwrap();
        let whole = grad_buffers(&one);

        let mut two = t.session(KdConfig::default(), variant);
        two.accumulate_batch(&[0, 1]).unwrap();
        two.accumulate_batch(&[2, 3]).unwrap();
        let halves: Vec<f64> = grad_buffers(&two).iter().map(|v| v / 2.0).collect();
        assert!(max_abs_diff(&whole, &halves) < 1e-10, "{variant}");
        assert!(whole.iter().any(|v| *v != 0.0));
    }
}

/// Same losses computed with the teacher outputs as tracked leaves: the
/// preconditioner gradient must not change.
#[test]
fn teacher_branch_contributes_no_gradient() {
    let t = toy(2, 8, 4);
    let mut session = t.session(KdConfig::default(), Variant::Npo);
    // move away from the zero head so every parameter gets gradient
    for q in session.preconditioner_mut().params_mut().iter_mut() {
        let noise = randn(&mut rng(q.value.len() as u64), q.value.shape());
        q.value
            .data_mut()
            .iter_mut()
            .zip(noise.data())
            .for_each(|(v, e)| *v += 0.05 * e);
    }
    let (_, library) = session.sample_gradients(1).unwrap();
    let teacher = session.teacher_output(1).unwrap().clone();

    let p = session.preconditioner();
    let prob = &t.problem;
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, true);
    let y = tape.constant(prob.y_student[1].clone());
    let run = pnp_fista_on_tape(&mut tape, &bound, &prob.student_op, y, &prob.student, &prob.prox).unwrap();
    let gs = d2gp::forward::grad_fidelity(&mut tape, &prob.student_op, run.final_x, y).unwrap();
    let pg = bound.apply(&mut tape, gs, prob.student.iterations).unwrap();
    let tg = tape.leaf(teacher.grad.clone());
    let xt = tape.leaf(teacher.x.clone());
    let gt = tape.constant(prob.images[1].clone());
    let a = loss_gradient(&mut tape, pg, tg).unwrap();
    let b = loss_imitation(&mut tape, run.final_x, xt).unwrap();
    let c = loss_supervised(&mut tape, run.final_x, gt).unwrap();
    let total = kd_total(&mut tape, a, b, c, &LossWeights::default()).unwrap();
    let vars = bound.vars().to_vec();
    let grads = tape.backward(total).unwrap();
    assert!(grads.get(tg).is_none_or(|g| g.iter().all(|v| *v == 0.0)));
    assert!(grads.get(xt).is_none_or(|g| g.iter().all(|v| *v == 0.0)));
    for (v, lib) in vars.iter().zip(&library) {
        assert_eq!(grads.grad(*v).data(), lib.as_slice());
    }
}

#[test]
fn teacher_runs_identity_solver_on_teacher_operator() {
    let t = toy(2, 8, 4);
    let mut session = t.session(KdConfig::default(), Variant::ScalarStep);
    let out = session.teacher_output(0).unwrap().clone();
    let prob = &t.problem;
    let ctx = PrecondContext {
        op: prob.teacher_op.clone(),
        iterations: 4,
        npo: NpoConfig::default(),
    };
    let id = Preconditioner::init(Variant::Identity, &ctx, 0).unwrap();
    let run = d2gp::solver::pnp_fista(
        &id,
        &prob.teacher_op,
        &prob.y_teacher[0],
        &prob.teacher,
        &prob.prox,
        None,
    )
    .unwrap();
    assert_eq!(out.x, run.final_x);
    let g = prob
        .teacher_op
        .fidelity_gradient(run.final_x.data(), prob.y_teacher[0].data());
    assert_eq!(out.grad.data(), g.as_slice());
    assert!(matches!(session.teacher_output(2), Err(Error::Index { .. })));
}

#[test]
fn teacher_cache_and_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("teacher.d2gpw");
    let ckpt = dir.path().join("ckpt");
    let t = toy(4, 8, 4);
    let kd = KdConfig {
        epochs: 2,
        batch_size: 2,
        ..KdConfig::default()
    };
    let first = train_npo(
        t.session(kd, Variant::Npo)
            .with_teacher_cache(&cache)
            .with_checkpoints(&ckpt),
    )
    .unwrap();
    assert!(cache.exists());
    assert_eq!(weights::load(&cache).unwrap().len(), 8);
    let saved = weights::load(&ckpt.join("epoch_002.d2gpw")).unwrap();
    assert_eq!(saved, first.preconditioner.params().to_named());
    assert!(ckpt.join("epoch_001.d2gpw").exists());

    let second = train_npo(t.session(kd, Variant::Npo).with_teacher_cache(&cache)).unwrap();
    assert_eq!(param_bits(&first.preconditioner), param_bits(&second.preconditioner));
}

#[test]
fn history_csv_layout() {
    let t = toy(2, 8, 3);
    let kd = KdConfig {
        epochs: 2,
        ..KdConfig::default()
    };
    let trained = train_npo(t.session(kd, Variant::Pointwise)).unwrap();
    let csv = history_csv(&trained.history);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,loss_gradient,loss_imitation,loss_supervised,total");
    assert_eq!(lines.len(), 3);
    let fields: Vec<f64> = lines[2].split(',').map(|f| f.parse().unwrap()).collect();
    let m = trained.history[1].mean;
    assert_eq!(fields, vec![2.0, m.gradient, m.imitation, m.supervised, m.total]);
}

#[test]
fn session_contracts() {
    let t = toy(3, 8, 4);
    let kd = KdConfig::default();
    assert!(matches!(
        DistillSession::new(t.problem.clone(), kd, t.precond(Variant::Hessian, 0)),
        Err(Error::Contract(_))
    ));

    let mut other_k = t.problem.clone();
    other_k.student.iterations = 5;
    other_k.teacher.iterations = 5;
    assert!(matches!(
        DistillSession::new(other_k, kd, t.precond(Variant::Npo, 0)),
        Err(Error::Contract(_))
    ));

    let mut ragged = t.problem.clone();
    ragged.y_teacher.pop();
    assert!(matches!(
        DistillSession::new(ragged, kd, t.precond(Variant::Npo, 0)),
        Err(Error::Contract(_))
    ));

    let mut empty = t.problem.clone();
    empty.images.clear();
    empty.y_student.clear();
    empty.y_teacher.clear();
    assert!(matches!(
        DistillSession::new(empty, kd, t.precond(Variant::Npo, 0)),
        Err(Error::Data(_))
    ));

    let bad = KdConfig { batch_size: 0, ..kd };
    assert!(matches!(
        DistillSession::new(t.problem.clone(), bad, t.precond(Variant::Npo, 0)),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn divergent_student_names_the_sample() {
    let mut t = toy(3, 8, 80);
    t.problem.student = SolverConfig::new(1e6, 0.0, 80).unwrap();
    t.problem.teacher.rho = 0.0;
    t.problem.teacher.iterations = 80;
    let kd = KdConfig {
        epochs: 1,
        batch_size: 3,
        ..KdConfig::default()
    };
    let err = train_npo(t.session(kd, Variant::ScalarStep)).unwrap_err();
    let first = epoch_order(kd.seed, 3, 1)[0];
    match err {
        Error::Training { sample, source } => {
            assert_eq!(sample, first);
            assert!(matches!(*source, Error::Divergence { .. }), "{source}");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn reference_schedule() {
    let r = KdConfig::reference();
    assert_eq!(
        (r.epochs, r.learning_rate, r.optimizer),
        (50, 1e-5, OptimizerKind::AdamW)
    );
    assert_eq!(r.weight_decay, 0.01);
    assert_eq!(r.weights, LossWeights::default());
}

//! Turns a config into operators, data splits, measurements and the
//! preconditioners a command compares.

use std::path::PathBuf;

use d2gp::distill::DistillProblem;
use d2gp::forward::{build_mri, build_spc_orthonormal, build_sr, simulate, NoiseModel, SensingOperator};
use d2gp::io::{phantom, resize_nearest, weights};
use d2gp::precond::{PrecondContext, Preconditioner, Variant};
use d2gp::rng::{derive_seed, Purpose};
use d2gp::solver::{train_denoiser, DenoiserTraining, ProxOperator, SolverConfig};
use d2gp::Tensor;

use crate::config::{ExperimentConfig, ProxName, Task};
use crate::dataset::{load_dataset, phantom_seed};
use crate::error::{CliError, Context, Result};

/// One aligned split: images with their student and teacher measurements.
#[derive(Debug, Clone, Default)]
pub struct Split {
    pub images: Vec<Tensor>,
    pub y_student: Vec<Tensor>,
    pub y_teacher: Vec<Tensor>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub student_op: SensingOperator,
    pub teacher_op: SensingOperator,
    pub student: SolverConfig,
    pub teacher: SolverConfig,
    pub prox: ProxOperator,
    pub train: Split,
    pub test: Split,
}

/// Seeds derived from the root, recorded in run manifests.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Seeds {
    pub root: u64,
    pub init: u64,
    pub mask_student: u64,
    pub mask_teacher: u64,
    pub denoiser: u64,
}

impl Seeds {
    pub fn new(root: u64) -> Self {
        Seeds {
            root,
            init: derive_seed(root, Purpose::Init, 0),
            mask_student: derive_seed(root, Purpose::Mask, 0),
            mask_teacher: derive_seed(root, Purpose::Mask, 1),
            denoiser: derive_seed(root, Purpose::Init, 1),
        }
    }
}

fn build_pair(cfg: &ExperimentConfig, seeds: &Seeds) -> Result<(SensingOperator, SensingOperator)> {
    let side = cfg.image_side;
    let o = &cfg.operators;
    let pair = match cfg.task {
        Task::Spc => (
            build_spc_orthonormal(side, o.gamma_s).context("student operator")?,
            build_spc_orthonormal(side, o.gamma_t).context("teacher operator")?,
        ),
        Task::Mri => (
            build_mri(side, o.af_s, seeds.mask_student).context("student operator")?,
            build_mri(side, o.af_t, seeds.mask_teacher).context("teacher operator")?,
        ),
        Task::Sr => (
            build_sr(side, o.rf_s, o.blur_size, o.blur_sigma).context("student operator")?,
            build_sr(side, o.rf_t, o.blur_size, o.blur_sigma).context("teacher operator")?,
        ),
    };
    Ok(pair)
}

fn images(cfg: &ExperimentConfig) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let side = cfg.image_side;
    let n = side * side;
    let (train, test) = (cfg.dataset.train, cfg.dataset.test);
    let Some(path) = &cfg.dataset.manifest else {
        let all: Vec<Tensor> = (0..train + test)
            .map(|i| {
                phantom(side, phantom_seed(cfg.seed, i))
                    .reshape(&[n])
                    .expect("square phantom")
            })
            .collect();
        let test_part = all[train..].to_vec();
        let mut train_part = all;
        train_part.truncate(train);
        return Ok((train_part, test_part));
    };
    let (m, pool) = load_dataset(path)?;
    let pool = if m.image_side == side {
        pool
    } else {
        pool.into_iter()
            .map(|t| {
                let img = t.reshape(&[m.image_side, m.image_side]).context("reshape")?;
                resize_nearest(&img, side)
                    .context("resize")?
                    .reshape(&[n])
                    .context("flatten")
            })
            .collect::<Result<_>>()?
    };
    let order = m.split_order();
    let cut = m.train_count();
    if cut < train || order.len() - cut < test {
        return Err(CliError::Core {
            context: path.display().to_string(),
            source: d2gp::Error::Data(format!(
                "manifest splits into {cut} train / {} test images, config asks for {train} / {test}",
                order.len() - cut
            )),
        });
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| pool[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..train]), pick(&order[cut..cut + test])))
}

fn measure(
    images: Vec<Tensor>,
    offset: usize,
    hs: &SensingOperator,
    ht: &SensingOperator,
    cfg: &ExperimentConfig,
) -> Result<Split> {
    let mut split = Split::default();
    for (i, x) in images.into_iter().enumerate() {
        let g = (offset + i) as u64;
        let ns = NoiseModel::new(cfg.noise_sigma, derive_seed(cfg.seed, Purpose::Noise, 2 * g)).context("noise")?;
        let nt = NoiseModel::new(cfg.noise_sigma, derive_seed(cfg.seed, Purpose::Noise, 2 * g + 1)).context("noise")?;
        split.y_student.push(simulate(hs, &x, &ns).context("simulate student")?);
        split.y_teacher.push(simulate(ht, &x, &nt).context("simulate teacher")?);
        split.images.push(x);
    }
    Ok(split)
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let seeds = Seeds::new(config.seed);
        let (student_op, teacher_op) = build_pair(config, &seeds)?;
        let (train_imgs, test_imgs) = images(config)?;
        let n_train = train_imgs.len();
        let train = measure(train_imgs, 0, &student_op, &teacher_op, config)?;
        let test = measure(test_imgs, n_train, &student_op, &teacher_op, config)?;
        let prox = match config.prox {
            ProxName::Identity => ProxOperator::Identity,
            ProxName::Dct => ProxOperator::DctSoftThreshold,
            ProxName::Cnn => {
                let dn = DenoiserTraining::new(config.denoiser.sigma, config.denoiser.epochs, seeds.denoiser);
                let imgs: Vec<Tensor> = train
                    .images
                    .iter()
                    .map(|x| x.clone().reshape(&[config.image_side, config.image_side]))
                    .collect::<d2gp::Result<_>>()
                    .context("denoiser data")?;
                train_denoiser(&imgs, &dn).context("denoiser training")?
            }
        };
        Ok(Experiment {
            student: config.student_solver()?,
            teacher: config.teacher_solver()?,
            config: config.clone(),
            student_op,
            teacher_op,
            prox,
            train,
            test,
        })
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::new(self.config.seed)
    }

    pub fn context(&self) -> PrecondContext {
        PrecondContext {
            op: self.student_op.clone(),
            iterations: self.config.solver.iterations,
            npo: (&self.config.npo).into(),
        }
    }

    pub fn init(&self, variant: Variant) -> Result<Preconditioner> {
        Preconditioner::init(variant, &self.context(), self.seeds().init).context(format!("init {variant}"))
    }

    pub fn distill_problem(&self) -> DistillProblem {
        DistillProblem {
            images: self.train.images.clone(),
            y_student: self.train.y_student.clone(),
            y_teacher: self.train.y_teacher.clone(),
            student_op: self.student_op.clone(),
            teacher_op: self.teacher_op.clone(),
            student: self.student,
            teacher: self.teacher,
            prox: self.prox.clone(),
        }
    }

    pub fn weights_path(&self, label: &str) -> PathBuf {
        self.config.out_dir.join(format!("{label}.d2gpw"))
    }

    /// Parameter count of the configured network, the denominator of the
    /// ratio column.
    pub fn npo_parameters(&self) -> Result<usize> {
        Ok(self.init(Variant::Npo)?.parameter_count())
    }

    /// The preconditioner behind a benchmark method name.
    pub fn resolve(&self, method: &str) -> Result<Method> {
        let fixed = |v: Variant| -> Result<Method> {
            Ok(Method::Student {
                name: method.to_string(),
                precond: self.init(v)?,
            })
        };
        match method {
            "teacher" => {
                let ctx = PrecondContext {
                    op: self.teacher_op.clone(),
                    ..self.context()
                };
                let p = Preconditioner::init(Variant::Identity, &ctx, 0).context("init teacher")?;
                Ok(Method::Teacher { precond: p })
            }
            "baseline" => fixed(Variant::Identity),
            "hessian" => fixed(Variant::Hessian),
            "polynomial" => {
                let mut p = self.init(Variant::Polynomial)?;
                p.set_polynomial(Preconditioner::neumann_coefficients(&self.student_op))
                    .context("polynomial")?;
                Ok(Method::Student {
                    name: method.into(),
                    precond: p,
                })
            }
            "d2gp" | "supervised" => self.trained(method, Variant::Npo),
            other => match other.parse::<Variant>() {
                Ok(v) if v.is_trainable() && v != Variant::Npo => self.trained(other, v),
                _ => Err(CliError::UnknownMethod(other.into())),
            },
        }
    }

    fn trained(&self, name: &str, variant: Variant) -> Result<Method> {
        let path = self.weights_path(name);
        if !path.exists() {
            return Err(CliError::Lookup {
                method: name.into(),
                path,
            });
        }
        let mut p = self.init(variant)?;
        let named = weights::load(&path).context(path.display().to_string())?;
        p.params_mut().load_values(named).context(path.display().to_string())?;
        Ok(Method::Student {
            name: name.into(),
            precond: p,
        })
    }
}

/// A reconstruction method: a student preconditioner or the teacher setup.
#[derive(Debug, Clone)]
pub enum Method {
    Student { name: String, precond: Preconditioner },
    Teacher { precond: Preconditioner },
}

impl Method {
    pub fn name(&self) -> &str {
        match self {
            Method::Student { name, .. } => name,
            Method::Teacher { .. } => "teacher",
        }
    }

    pub fn preconditioner(&self) -> &Preconditioner {
        match self {
            Method::Student { precond, .. } | Method::Teacher { precond } => precond,
        }
    }

    pub fn is_teacher(&self) -> bool {
        matches!(self, Method::Teacher { .. })
    }
}

/// Names accepted by `benchmark`, in table order.
pub const ALL_METHODS: [&str; 10] = [
    "baseline",
    "hessian",
    "polynomial",
    "scalar",
    "conv",
    "pointwise",
    "full-linear",
    "supervised",
    "d2gp",
    "teacher",
];

/// Methods whose spectra `analyze` reports by default.
pub const ANALYZE_METHODS: [&str; 5] = ["baseline", "hessian", "polynomial", "scalar", "d2gp"];

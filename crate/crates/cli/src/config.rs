//! Versioned JSON experiment configuration. Unknown keys are rejected so a
//! misspelled loss weight cannot silently fall back to its default.

use std::path::{Path, PathBuf};

use d2gp::distill::{KdConfig, LossWeights, LrSchedule, OptimizerKind};
use d2gp::precond::{NpoConfig, Variant};
use d2gp::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Context, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Spc,
    Mri,
    Sr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxName {
    Identity,
    Dct,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Adam,
    Adamw,
}

impl From<OptimizerName> for OptimizerKind {
    fn from(o: OptimizerName) -> Self {
        match o {
            OptimizerName::Adam => OptimizerKind::Adam,
            OptimizerName::Adamw => OptimizerKind::AdamW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleName {
    Constant,
    Cosine,
}

impl From<ScheduleName> for LrSchedule {
    fn from(s: ScheduleName) -> Self {
        match s {
            ScheduleName::Constant => LrSchedule::Constant,
            ScheduleName::Cosine => LrSchedule::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    pub gamma_s: f64,
    pub gamma_t: f64,
    pub af_s: f64,
    pub af_t: f64,
    pub rf_s: usize,
    pub rf_t: usize,
    pub blur_size: usize,
    pub blur_sigma: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            gamma_s: 0.2,
            gamma_t: 0.7,
            af_s: 5.0,
            af_t: 1.0,
            rf_s: 4,
            rf_t: 1,
            blur_size: 9,
            blur_sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub alpha_s: f64,
    pub alpha_t: f64,
    pub rho: f64,
    pub iterations: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            alpha_s: 0.4,
            alpha_t: 0.7,
            rho: d2gp::solver::DEFAULT_RHO,
            iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub sigma: f64,
    pub epochs: usize,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        DenoiserSection { sigma: 0.05, epochs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NpoSection {
    pub channels: usize,
    pub blocks: usize,
    pub pe_dim: usize,
    pub dw_kernel: usize,
    pub expansion: usize,
}

impl Default for NpoSection {
    fn default() -> Self {
        let d = NpoConfig::default();
        NpoSection {
            channels: d.channels,
            blocks: d.blocks,
            pe_dim: d.pe_dim,
            dw_kernel: d.dw_kernel,
            expansion: d.expansion,
        }
    }
}

impl From<&NpoSection> for NpoConfig {
    fn from(s: &NpoSection) -> Self {
        NpoConfig {
            channels: s.channels,
            blocks: s.blocks,
            pe_dim: s.pe_dim,
            dw_kernel: s.dw_kernel,
            expansion: s.expansion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdSection {
    pub lambda_g: f64,
    pub lambda_i: f64,
    pub lambda_s: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerName,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub schedule: ScheduleName,
}

impl Default for KdSection {
    fn default() -> Self {
        let r = KdConfig::reference();
        KdSection {
            lambda_g: r.weights.gradient,
            lambda_i: r.weights.imitation,
            lambda_s: r.weights.supervised,
            epochs: r.epochs,
            learning_rate: r.learning_rate,
            batch_size: r.batch_size,
            optimizer: OptimizerName::Adamw,
            weight_decay: r.weight_decay,
            clip_norm: 0.0,
            schedule: ScheduleName::Constant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Manifest written by `gen-data`; synthetic phantoms are generated in
    /// memory when absent.
    pub manifest: Option<PathBuf>,
    pub train: usize,
    pub test: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            manifest: None,
            train: 512,
            test: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub task: Task,
    pub image_side: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub operators: OperatorConfig,
    pub solver: SolverSection,
    pub prox: ProxName,
    pub denoiser: DenoiserSection,
    /// Variant trained by `train`.
    pub preconditioner: String,
    pub npo: NpoSection,
    pub kd: KdSection,
    pub dataset: DatasetSection,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            task: Task::Spc,
            image_side: 32,
            seed: 0,
            noise_sigma: 0.01,
            operators: OperatorConfig::default(),
            solver: SolverSection::default(),
            prox: ProxName::Dct,
            denoiser: DenoiserSection::default(),
            preconditioner: Variant::Npo.name().into(),
            npo: NpoSection::default(),
            kd: KdSection::default(),
            dataset: DatasetSection::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    /// Small single-pixel setup that trains in minutes on one core.
    pub fn desk() -> Self {
        ExperimentConfig {
            image_side: 16,
            operators: OperatorConfig {
                gamma_s: 0.25,
                gamma_t: 1.0,
                ..OperatorConfig::default()
            },
            npo: NpoSection {
                channels: 8,
                ..NpoSection::default()
            },
            kd: KdSection {
                epochs: 30,
                learning_rate: 2e-3,
                batch_size: 1,
                optimizer: OptimizerName::Adam,
                weight_decay: 0.0,
                clip_norm: 10.0,
                schedule: ScheduleName::Cosine,
                ..KdSection::default()
            },
            dataset: DatasetSection {
                manifest: None,
                train: 256,
                test: 32,
            },
            out_dir: PathBuf::from("runs/desk"),
            ..ExperimentConfig::default()
        }
    }

    /// Parses, checks the schema version, resolves relative paths against
    /// the file's directory and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_json(&text).map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.dataset.manifest {
            if m.is_relative() {
                cfg.dataset.manifest = Some(base.join(m));
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate().map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if cfg.version != CONFIG_VERSION {
            return Err(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            ));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Range checks that do not need the filesystem beyond the manifest.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.image_side < 2 {
            return Err(format!("image_side {} must be >= 2", self.image_side));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if self.dataset.train == 0 || self.dataset.test == 0 {
            return Err("dataset.train and dataset.test must be >= 1".into());
        }
        self.variant().map_err(|e| e.to_string())?;
        self.student_solver().map_err(|e| e.to_string())?;
        self.teacher_solver().map_err(|e| e.to_string())?;
        self.kd_config().map_err(|e| e.to_string())?;
        if !(self.kd.clip_norm >= 0.0) {
            return Err(format!("kd.clip_norm {} must be >= 0", self.kd.clip_norm));
        }
        if let Some(m) = &self.dataset.manifest {
            if !m.exists() {
                return Err(format!("dataset manifest {} does not exist", m.display()));
            }
        }
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        self.preconditioner.parse().context("preconditioner")
    }

    pub fn student_solver(&self) -> Result<SolverConfig> {
        SolverConfig::new(self.solver.alpha_s, self.solver.rho, self.solver.iterations).context("solver.alpha_s")
    }

    pub fn teacher_solver(&self) -> Result<SolverConfig> {
        SolverConfig::new(self.solver.alpha_t, self.solver.rho, self.solver.iterations).context("solver.alpha_t")
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.kd.lambda_g, self.kd.lambda_i, self.kd.lambda_s).context("kd lambdas")
    }

    pub fn kd_config(&self) -> Result<KdConfig> {
        let k = &self.kd;
        if k.batch_size == 0 {
            return Err(CliError::Config {
                path: PathBuf::from("kd.batch_size"),
                message: "must be >= 1".into(),
            });
        }
        Ok(KdConfig {
            weights: self.loss_weights()?,
            epochs: k.epochs,
            learning_rate: k.learning_rate,
            batch_size: k.batch_size,
            optimizer: k.optimizer.into(),
            weight_decay: k.weight_decay,
            seed: self.seed,
            clip_norm: (k.clip_norm > 0.0).then_some(k.clip_norm),
            schedule: k.schedule.into(),
        })
    }

    /// Name under which `train` stores its result.
    pub fn train_label(&self) -> Result<String> {
        let v = self.variant()?;
        let w = self.loss_weights()?;
        Ok(match v {
            Variant::Npo if w.is_supervised_only() => "supervised".into(),
            Variant::Npo => "d2gp".into(),
            other => other.name().into(),
        })
    }
}

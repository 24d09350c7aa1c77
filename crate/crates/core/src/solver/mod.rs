//! Preconditioned plug-and-play FISTA.
//!
//! ```text
//! x0 = z1 = 0, t0 = 1
//! for k = 1..K:
//!     x_k = z_k - alpha * P(grad g(z_k), k)
//!     x_k = prox_{alpha rho h}(x_k)
//!     t_k = (1 + sqrt(1 + 4 t_{k-1}^2)) / 2
//!     z_{k+1} = x_k + (t_{k-1} - 1) / t_k * (x_k - x_{k-1})
//! ```
//!
//! The momentum coefficient uses `t_{k-1}` in the numerator, one index
//! behind the textbook FISTA schedule.

mod prox;

use std::fmt::Write as _;

pub use prox::{prox_apply, train_denoiser, Denoiser, DenoiserTraining, ProxOperator};

use crate::analysis::psnr;
use crate::error::{Error, Result};
use crate::forward::{grad_fidelity, SensingOperator};
use crate::precond::{Bound, Preconditioner};
use crate::tensor::{Tape, Tensor, Var};

/// Default regularization weight.
pub const DEFAULT_RHO: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub alpha: f64,
    pub rho: f64,
    pub iterations: usize,
    pub record_trace: bool,
}

impl SolverConfig {
    pub fn new(alpha: f64, rho: f64, iterations: usize) -> Result<Self> {
        let cfg = SolverConfig {
            alpha,
            rho,
            iterations,
            record_trace: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Parameter(format!("step size {} must be > 0", self.alpha)));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::Parameter(format!("regularization {} must be >= 0", self.rho)));
        }
        if self.iterations == 0 {
            return Err(Error::Parameter("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// `t_k` for `k = 1..=count`, starting from `t_0 = 1`.
pub fn momentum_sequence(count: usize) -> Vec<f64> {
    let mut t = 1.0_f64;
    (0..count)
        .map(|_| {
            t = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            t
        })
        .collect()
}

/// Per-iteration diagnostics of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    /// `||H x_k - y||^2`, k = 1..K.
    pub fidelity: Vec<f64>,
    /// PSNR of `x_k` against the ground truth, when one was supplied.
    pub psnr: Vec<f64>,
    /// `t_k`, k = 1..K.
    pub momentum: Vec<f64>,
}

impl Trace {
    /// Element-wise mean over several equally long traces.
    pub fn mean(traces: &[Trace]) -> Result<Trace> {
        let Some(first) = traces.first() else {
            return Ok(Trace::default());
        };
        let avg = |get: fn(&Trace) -> &Vec<f64>| -> Result<Vec<f64>> {
            let len = get(first).len();
            let mut out = vec![0.0; len];
            for t in traces {
                if get(t).len() != len {
                    return Err(Error::Contract("ragged traces".into()));
                }
                out.iter_mut()
                    .zip(get(t))
                    .for_each(|(o, v)| *o += v / traces.len() as f64);
            }
            Ok(out)
        };
        Ok(Trace {
            fidelity: avg(|t| &t.fidelity)?,
            psnr: avg(|t| &t.psnr)?,
            momentum: avg(|t| &t.momentum)?,
        })
    }

    /// `iteration,fidelity,psnr,t_k`; psnr is empty without a ground truth.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,fidelity,psnr,t_k\n");
        for (i, f) in self.fidelity.iter().enumerate() {
            let p = self.psnr.get(i).map(|v| format!("{v:e}")).unwrap_or_default();
            let t = self.momentum.get(i).copied().unwrap_or(f64::NAN);
            let _ = writeln!(out, "{},{f:e},{p},{t:e}", i + 1);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SolverRun {
    pub final_x: Tensor,
    /// `x_1..x_K` when tracing is on.
    pub iterates: Vec<Tensor>,
    pub trace: Trace,
}

/// Result of a run recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapedRun {
    pub final_x: Var,
    /// `x_1..x_K`.
    pub iterates: Vec<Var>,
    pub momentum: Vec<f64>,
}

/// Runs the solver on `tape`. Gradients flow to whatever in `precond` and `y`
/// was recorded as a leaf.
pub fn pnp_fista_on_tape(
    tape: &mut Tape,
    precond: &Bound<'_>,
    op: &SensingOperator,
    y: Var,
    cfg: &SolverConfig,
    prox: &ProxOperator,
) -> Result<TapedRun> {
    cfg.validate()?;
    let n = op.n();
    if tape.value(y).len() != op.measurement_len() {
        return Err(Error::dims("pnp_fista", tape.value(y).shape(), &[op.measurement_len()]));
    }
    let tau = cfg.alpha * cfg.rho;
    let mut x_prev = tape.constant(Tensor::zeros(&[n]));
    let mut z = x_prev;
    let mut t_prev = 1.0_f64;
    let mut iterates = Vec::with_capacity(cfg.iterations);
    let mut momentum = Vec::with_capacity(cfg.iterations);
    for k in 1..=cfg.iterations {
        let grad = grad_fidelity(tape, op, z, y)?;
        let dir = precond.apply(tape, grad, k)?;
        let step = tape.axpy(-cfg.alpha, dir, z)?;
        let x = prox::prox_on_tape(tape, prox, step, tau, op.side())?;
        if !tape.value(x).is_finite() {
            return Err(Error::Divergence { iteration: k });
        }
        let t = (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt()) / 2.0;
        let coef = (t_prev - 1.0) / t;
        z = if coef == 0.0 {
            x
        } else {
            let diff = tape.sub(x, x_prev)?;
            tape.axpy(coef, diff, x)?
        };
        x_prev = x;
        t_prev = t;
        iterates.push(x);
        momentum.push(t);
    }
    Ok(TapedRun {
        final_x: x_prev,
        iterates,
        momentum,
    })
}

/// Runs the solver without tracking gradients.
pub fn pnp_fista(
    precond: &Preconditioner,
    op: &SensingOperator,
    y: &Tensor,
    cfg: &SolverConfig,
    prox: &ProxOperator,
    ground_truth: Option<&Tensor>,
) -> Result<SolverRun> {
    let mut tape = Tape::new();
    let bound = precond.bind(&mut tape, false);
    let yv = tape.constant(y.clone());
    let run = pnp_fista_on_tape(&mut tape, &bound, op, yv, cfg, prox)?;
    let final_x = tape.value(run.final_x).clone();
    let mut trace = Trace {
        momentum: run.momentum,
        ..Trace::default()
    };
    let mut iterates = Vec::new();
    if cfg.record_trace {
        for v in &run.iterates {
            let x = tape.value(*v);
            trace.fidelity.push(op.fidelity(x.data(), y.data()));
            if let Some(gt) = ground_truth {
                trace.psnr.push(psnr(x, gt, 1.0)?);
            }
            iterates.push(x.clone());
        }
    }
    Ok(SolverRun {
        final_x,
        iterates,
        trace,
    })
}

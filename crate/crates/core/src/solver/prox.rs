use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::distill::optim::{OptimizerKind, OptimizerState};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::transforms::Dct2;
use crate::tensor::{Adjoint, LinearOp, ParamSet, Tape, Tensor, Var};

/// Proximal step of the solver.
#[derive(Debug, Clone)]
pub enum ProxOperator {
    Identity,
    /// Exact prox of `tau * ||dct2(x)||_1`.
    DctSoftThreshold,
    /// Plug-and-play residual denoiser `v - net(v)`; ignores `tau`.
    CnnDenoiser(Denoiser),
}

impl ProxOperator {
    pub fn name(&self) -> &'static str {
        match self {
            ProxOperator::Identity => "identity",
            ProxOperator::DctSoftThreshold => "dct_soft_threshold",
            ProxOperator::CnnDenoiser(_) => "cnn_denoiser",
        }
    }
}

fn side_of(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::dims("prox", &[n], &[side, side]));
    }
    Ok(side)
}

pub(crate) fn prox_on_tape(tape: &mut Tape, prox: &ProxOperator, v: Var, tau: f64, side: usize) -> Result<Var> {
    match prox {
        ProxOperator::Identity => Ok(v),
        ProxOperator::DctSoftThreshold => {
            if tau == 0.0 {
                return Ok(v);
            }
            let dct: Arc<dyn LinearOp> = Arc::new(Dct2::square(side));
            let coeffs = tape.linear(v, dct.clone())?;
            let shrunk = tape.soft_threshold(coeffs, tau);
            tape.linear(shrunk, Arc::new(Adjoint(dct)))
        }
        ProxOperator::CnnDenoiser(net) => {
            let vars: Vec<Var> = net.params.iter().map(|p| tape.constant(p.value.clone())).collect();
            net.denoise_on_tape(tape, &vars, v, side)
        }
    }
}

/// Applies the proximal map outside of any training tape.
pub fn prox_apply(prox: &ProxOperator, v: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau >= 0.0) {
        return Err(Error::Parameter(format!("prox threshold {tau} must be >= 0")));
    }
    let side = side_of(v.len())?;
    let mut tape = Tape::new();
    let x = tape.constant(v.clone().reshape(&[v.len()])?);
    let out = prox_on_tape(&mut tape, prox, x, tau, side)?;
    tape.value(out).clone().reshape(v.shape())
}

/// Residual CNN: `layers` 3x3 convolutions, ReLU between them, predicting the noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    params: ParamSet,
    layers: usize,
}

impl Denoiser {
    pub const LAYERS: usize = 5;
    pub const CHANNELS: usize = 32;

    /// He-normal hidden layers and a zero output layer, so the untrained
    /// network predicts zero noise.
    pub fn init(seed: u64) -> Result<Self> {
        Self::with_shape(Self::LAYERS, Self::CHANNELS, seed)
    }

    pub fn with_shape(layers: usize, channels: usize, seed: u64) -> Result<Self> {
        if layers < 2 {
            return Err(Error::Parameter("denoiser needs at least two layers".into()));
        }
        let mut rng = rng::seeded(seed);
        let mut params = ParamSet::new();
        for l in 0..layers {
            let c_in = if l == 0 { 1 } else { channels };
            let c_out = if l + 1 == layers { 1 } else { channels };
            let weight = if l + 1 == layers {
                Tensor::zeros(&[c_out, c_in, 3, 3])
            } else {
                let std = (2.0 / (9 * c_in) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let data = (0..c_out * c_in * 9).map(|_| normal.sample(&mut rng)).collect();
                Tensor::new(vec![c_out, c_in, 3, 3], data)?
            };
            params.push(format!("denoiser.{l}.weight"), weight)?;
            params.push(format!("denoiser.{l}.bias"), Tensor::zeros(&[c_out]))?;
        }
        Ok(Denoiser { params, layers })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn noise_on_tape(&self, tape: &mut Tape, vars: &[Var], v: Var, side: usize) -> Result<Var> {
        let mut h = tape.reshape(v, &[1, side, side])?;
        for l in 0..self.layers {
            h = tape.conv2d(h, vars[2 * l], Some(vars[2 * l + 1]))?;
            if l + 1 < self.layers {
                h = tape.relu(h);
            }
        }
        tape.reshape(h, &[side * side])
    }

    fn denoise_on_tape(&self, tape: &mut Tape, vars: &[Var], v: Var, side: usize) -> Result<Var> {
        let flat = tape.reshape(v, &[side * side])?;
        let noise = self.noise_on_tape(tape, vars, flat, side)?;
        tape.sub(flat, noise)
    }

    pub fn denoise(&self, v: &Tensor) -> Result<Tensor> {
        prox_apply(&ProxOperator::CnnDenoiser(self.clone()), v, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserTraining {
    pub sigma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl DenoiserTraining {
    pub fn new(sigma: f64, epochs: usize, seed: u64) -> Self {
        DenoiserTraining {
            sigma,
            epochs,
            batch_size: 8,
            learning_rate: 1e-3,
            seed,
        }
    }
}

/// Fits a [`Denoiser`] to `(clean, clean + N(0, sigma^2))` pairs by mean squared error.
pub fn train_denoiser(images: &[Tensor], cfg: &DenoiserTraining) -> Result<ProxOperator> {
    train_denoiser_with(Denoiser::init(cfg.seed)?, images, cfg)
}

pub(crate) fn train_denoiser_with(
    mut net: Denoiser,
    images: &[Tensor],
    cfg: &DenoiserTraining,
) -> Result<ProxOperator> {
    if images.is_empty() {
        return Err(Error::Data("denoiser training set is empty".into()));
    }
    let side = side_of(images[0].len())?;
    let normal = Normal::new(0.0, cfg.sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut noise_rng = rng::stream(cfg.seed, rng::Purpose::Noise);
    let mut order_rng = rng::stream(cfg.seed, rng::Purpose::Shuffle);
    let mut opt = OptimizerState::new(OptimizerKind::Adam, cfg.learning_rate, 0.0);
    let mut order: Vec<usize> = (0..images.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            for &i in batch {
                let clean = &images[i];
                if clean.len() != side * side {
                    return Err(Error::dims("train_denoiser", clean.shape(), &[side * side]));
                }
                let noisy: Vec<f64> = clean.data().iter().map(|v| v + normal.sample(&mut noise_rng)).collect();
                let mut tape = Tape::new();
                let vars: Vec<Var> = net.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
                let x = tape.constant(Tensor::from_vec(noisy));
                let target = tape.constant(Tensor::from_vec(clean.data().to_vec()));
                let out = net.denoise_on_tape(&mut tape, &vars, x, side)?;
                let err = tape.sub(out, target)?;
                let sq = tape.mul(err, err)?;
                let loss = tape.mean(sq);
                let grads = tape.backward(loss)?;
                for (p, v) in net.params.iter_mut().zip(&vars) {
                    p.accumulate_grad(&grads.grad(*v).into_data(), 1.0 / batch.len() as f64)?;
                }
            }
            opt.step(&mut net.params)?;
        }
    }
    Ok(ProxOperator::CnnDenoiser(net))
}

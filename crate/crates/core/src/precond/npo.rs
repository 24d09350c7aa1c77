//! The nonlinear preconditioning network: a small ConvNeXt acting on the
//! fidelity gradient viewed as an image, conditioned on the iteration index.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{ParamSet, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

/// Architecture of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NpoConfig {
    /// Feature width `C` of the stem and blocks.
    pub channels: usize,
    pub blocks: usize,
    /// Length `d` of the learned iteration embedding `w`.
    pub pe_dim: usize,
    /// Depthwise kernel size.
    pub dw_kernel: usize,
    /// Pointwise expansion ratio inside each block.
    pub expansion: usize,
}

impl Default for NpoConfig {
    fn default() -> Self {
        NpoConfig {
            channels: 32,
            blocks: 5,
            pe_dim: 128,
            dw_kernel: 7,
            expansion: 4,
        }
    }
}

// Parameter slots, in registration order.
const STEM_W: usize = 0;
const STEM_B: usize = 1;
const PE_W: usize = 2;
const PE_PROJ_W: usize = 3;
const PE_PROJ_B: usize = 4;
const BLOCK_BASE: usize = 5;
const PER_BLOCK: usize = 8;

pub(crate) fn init_params(cfg: &NpoConfig, rng: &mut impl Rng) -> Result<ParamSet> {
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    let mut randn = |shape: &[usize]| {
        let len = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..len).map(|_| normal.sample(rng)).collect())
    };
    let c = cfg.channels;
    let hidden = cfg.expansion * c;
    let k = cfg.dw_kernel;
    let mut p = ParamSet::new();
    p.push("npo.stem.weight", randn(&[c, 1, 3, 3])?)?;
    p.push("npo.stem.bias", Tensor::zeros(&[c]))?;
    p.push("npo.pe.w", randn(&[cfg.pe_dim])?)?;
    p.push("npo.pe.proj.weight", randn(&[c, cfg.pe_dim])?)?;
    p.push("npo.pe.proj.bias", Tensor::zeros(&[c]))?;
    for b in 0..cfg.blocks {
        let pre = format!("npo.blocks.{b}");
        p.push(format!("{pre}.dw.weight"), randn(&[c, 1, k, k])?)?;
        p.push(format!("{pre}.dw.bias"), Tensor::zeros(&[c]))?;
        p.push(format!("{pre}.norm.weight"), Tensor::full(&[c], 1.0))?;
        p.push(format!("{pre}.norm.bias"), Tensor::zeros(&[c]))?;
        p.push(format!("{pre}.pw1.weight"), randn(&[hidden, c, 1, 1])?)?;
        p.push(format!("{pre}.pw1.bias"), Tensor::zeros(&[hidden]))?;
        p.push(format!("{pre}.pw2.weight"), randn(&[c, hidden, 1, 1])?)?;
        p.push(format!("{pre}.pw2.bias"), Tensor::zeros(&[c]))?;
    }
    // zero head: the network starts as the identity through the global residual
    p.push("npo.head.weight", Tensor::zeros(&[1, c, 3, 3]))?;
    p.push("npo.head.bias", Tensor::zeros(&[1]))?;
    Ok(p)
}

/// `phi(k) = w * k`.
pub(crate) fn iteration_encoding(tape: &mut Tape, w: Var, k: usize) -> Var {
    tape.scale(w, k as f64)
}

pub(crate) fn forward(tape: &mut Tape, vars: &[Var], cfg: &NpoConfig, side: usize, grad: Var, k: usize) -> Result<Var> {
    let n = side * side;
    let x = tape.reshape(grad, &[1, side, side])?;

    let mut h = tape.conv2d(x, vars[STEM_W], Some(vars[STEM_B]))?;
    let phi = iteration_encoding(tape, vars[PE_W], k);
    let pe = tape.matvec(vars[PE_PROJ_W], phi)?;
    let pe = tape.add(pe, vars[PE_PROJ_B])?;
    h = tape.add_channel_bias(h, pe)?;

    for b in 0..cfg.blocks {
        let v = &vars[BLOCK_BASE + b * PER_BLOCK..BLOCK_BASE + (b + 1) * PER_BLOCK];
        let r = h;
        let mut t = tape.depthwise_conv2d(h, v[0], Some(v[1]))?;
        t = tape.channel_layer_norm(t, v[2], v[3], LN_EPS)?;
        t = tape.conv2d(t, v[4], Some(v[5]))?;
        t = tape.gelu(t);
        t = tape.conv2d(t, v[6], Some(v[7]))?;
        h = tape.add(r, t)?;
    }

    let head = BLOCK_BASE + cfg.blocks * PER_BLOCK;
    let out = tape.conv2d(h, vars[head], Some(vars[head + 1]))?;
    let out = tape.add(out, x)?;
    tape.reshape(out, &[n])
}

pub(crate) fn pe_weight_index() -> usize {
    PE_W
}

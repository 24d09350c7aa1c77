//! Gradient preconditioners: the classical and learned linear baselines and
//! the nonlinear network ([`Variant::Npo`]).
//!
//! All variants map a length-`n` fidelity gradient and an iteration index
//! `k` (1-based) to a length-`n` direction. Every trainable variant is
//! initialized to the identity map.

mod npo;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use npo::NpoConfig;

use crate::error::{Error, Result};
use crate::forward::{GramOp, SensingOperator};
use crate::rng;
use crate::tensor::{dot, LinearOp, ParamSet, Tape, Tensor, Var};

/// Largest signal length for which a dense `n x n` matrix is allowed.
pub const DENSE_LIMIT: usize = 4096;

/// Polynomial preconditioners use degree 4 (five coefficients).
pub const POLY_COEFFS: usize = 5;

const CONV_KERNEL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Identity,
    Hessian,
    Polynomial,
    ScalarStep,
    Convolutional,
    Pointwise,
    FullLinear,
    Npo,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Identity,
        Variant::Hessian,
        Variant::Polynomial,
        Variant::ScalarStep,
        Variant::Convolutional,
        Variant::Pointwise,
        Variant::FullLinear,
        Variant::Npo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Identity => "identity",
            Variant::Hessian => "hessian",
            Variant::Polynomial => "polynomial",
            Variant::ScalarStep => "scalar",
            Variant::Convolutional => "conv",
            Variant::Pointwise => "pointwise",
            Variant::FullLinear => "full-linear",
            Variant::Npo => "npo",
        }
    }

    /// Whether the variant's parameters are learned from data.
    pub fn is_trainable(self) -> bool {
        matches!(
            self,
            Variant::ScalarStep | Variant::Convolutional | Variant::Pointwise | Variant::FullLinear | Variant::Npo
        )
    }

    fn per_iteration(self) -> bool {
        matches!(
            self,
            Variant::ScalarStep | Variant::Convolutional | Variant::Pointwise | Variant::FullLinear
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown preconditioner {s:?}")))
    }
}

/// What a preconditioner needs to know about the problem it serves.
#[derive(Debug, Clone)]
pub struct PrecondContext {
    /// Student operator; the Hessian and polynomial variants act through its Gram matrix.
    pub op: SensingOperator,
    /// Number of solver iterations `K`.
    pub iterations: usize,
    pub npo: NpoConfig,
}

/// A gradient preconditioner and its parameters.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    variant: Variant,
    side: usize,
    iterations: usize,
    params: ParamSet,
    op: SensingOperator,
    hessian_epsilon: f64,
    npo: NpoConfig,
}

impl Preconditioner {
    /// Identity-equivalent initialization; only the network draws random weights.
    pub fn init(variant: Variant, ctx: &PrecondContext, seed: u64) -> Result<Self> {
        let side = ctx.op.side();
        let n = side * side;
        let k = ctx.iterations;
        if k == 0 {
            return Err(Error::Parameter("iteration count must be >= 1".into()));
        }
        let mut params = ParamSet::new();
        match variant {
            Variant::Identity | Variant::Hessian => {}
            Variant::Polynomial => {
                let mut c = vec![0.0; POLY_COEFFS];
                c[0] = 1.0;
                params.push("poly.coeffs", Tensor::from_vec(c))?;
            }
            Variant::ScalarStep => {
                params.push("scalar.steps", Tensor::full(&[k], 1.0))?;
            }
            Variant::Convolutional => {
                let mut t = Tensor::zeros(&[k, 1, CONV_KERNEL, CONV_KERNEL]);
                let centre = (CONV_KERNEL / 2) * CONV_KERNEL + CONV_KERNEL / 2;
                for i in 0..k {
                    t.data_mut()[i * CONV_KERNEL * CONV_KERNEL + centre] = 1.0;
                }
                params.push("conv.kernels", t)?;
            }
            Variant::Pointwise => {
                params.push("pointwise.masks", Tensor::full(&[k, n], 1.0))?;
            }
            Variant::FullLinear => {
                if n > DENSE_LIMIT {
                    return Err(Error::Capability(format!(
                        "full-linear preconditioner needs n <= {DENSE_LIMIT}, got {n}"
                    )));
                }
                let mut t = Tensor::zeros(&[k, n, n]);
                for i in 0..k {
                    for j in 0..n {
                        t.data_mut()[i * n * n + j * n + j] = 1.0;
                    }
                }
                params.push("full.matrices", t)?;
            }
            Variant::Npo => {
                let mut rng = rng::seeded(seed);
                params = npo::init_params(&ctx.npo, &mut rng)?;
            }
        }
        let hessian_epsilon = if ctx.op.has_full_column_rank() {
            0.0
        } else {
            1e-6 * ctx.op.gram_trace() / n as f64
        };
        Ok(Preconditioner {
            variant,
            side,
            iterations: k,
            params,
            op: ctx.op.clone(),
            hessian_epsilon,
            npo: ctx.npo,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn is_trainable(&self) -> bool {
        self.variant.is_trainable()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n(&self) -> usize {
        self.side * self.side
    }

    pub fn operator(&self) -> &SensingOperator {
        &self.op
    }

    pub fn npo_config(&self) -> &NpoConfig {
        &self.npo
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Exact number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Tikhonov floor of the Hessian solve (0 when `H^T H` is invertible).
    pub fn hessian_epsilon(&self) -> f64 {
        self.hessian_epsilon
    }

    pub fn with_hessian_epsilon(mut self, epsilon: f64) -> Self {
        self.hessian_epsilon = epsilon;
        self
    }

    /// Sets the polynomial coefficients `c_0..c_4` (monomial basis).
    pub fn set_polynomial(&mut self, coeffs: [f64; POLY_COEFFS]) -> Result<()> {
        if self.variant != Variant::Polynomial {
            return Err(Error::Contract(format!(
                "{} has no polynomial coefficients",
                self.variant
            )));
        }
        self.params.get_mut(0).value = Tensor::from_vec(coeffs.to_vec());
        Ok(())
    }

    /// Polynomial approximating `(H^T H)^{-1}` on its range: the degree-4
    /// truncated Neumann series `(1/L) sum_i (I - G/L)^i`, `L` the top eigenvalue.
    pub fn neumann_coefficients(op: &SensingOperator) -> [f64; POLY_COEFFS] {
        let l = gram_lambda_max(op, 200);
        let mut c = [0.0; POLY_COEFFS];
        for (j, cj) in c.iter_mut().enumerate() {
            let binom_sum: f64 = (j..POLY_COEFFS).map(|i| binomial(i, j)).sum();
            *cj = binom_sum * (-1.0 / l).powi(j as i32) / l;
        }
        c
    }

    /// Learned iteration embedding `phi(k) = w * k` (network only).
    pub fn iteration_encoding(&self, k: usize) -> Option<Tensor> {
        if self.variant != Variant::Npo {
            return None;
        }
        let w = &self.params.get(npo::pe_weight_index()).value;
        Some(Tensor::from_vec(w.data().iter().map(|v| v * k as f64).collect()))
    }

    /// Puts the parameters on `tape`, as gradient leaves when `track` is set.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> Bound<'_> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if track {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Bound { precond: self, vars }
    }

    /// Uses vars already on `tape` as the parameters, in [`Self::params`] order.
    /// Shapes must match the stored parameters.
    pub fn bind_vars(&self, tape: &Tape, vars: &[Var]) -> Result<Bound<'_>> {
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} parameters bound to {} vars",
                self.params.len(),
                vars.len()
            )));
        }
        for (p, v) in self.params.iter().zip(vars) {
            if tape.value(*v).shape() != p.value.shape() {
                return Err(Error::dims("bind_vars", tape.value(*v).shape(), p.value.shape()));
            }
        }
        Ok(Bound {
            precond: self,
            vars: vars.to_vec(),
        })
    }

    /// Evaluates the preconditioner outside of any training tape.
    pub fn apply(&self, grad: &Tensor, k: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let g = tape.constant(grad.clone());
        let out = bound.apply(&mut tape, g, k)?;
        Ok(tape.value(out).clone())
    }

    /// Moves accumulated gradients from one backward pass into the parameters.
    pub fn accumulate_grads(&mut self, bound_vars: &[Var], grads: &crate::Gradients, scale: f64) -> Result<()> {
        for (p, v) in self.params.iter_mut().zip(bound_vars) {
            match grads.get(*v) {
                Some(g) => p.accumulate_grad(g, scale)?,
                None => p.accumulate_grad(&vec![0.0; p.value.len()], scale)?,
            }
        }
        Ok(())
    }
}

/// A preconditioner whose parameters live on a particular tape.
#[derive(Debug)]
pub struct Bound<'a> {
    precond: &'a Preconditioner,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn preconditioner(&self) -> &Preconditioner {
        self.precond
    }

    fn check_k(&self, k: usize) -> Result<usize> {
        let max = self.precond.iterations;
        if k == 0 || k > max {
            return Err(Error::Index { index: k, max });
        }
        Ok(k - 1)
    }

    /// Records `P(grad, k)` on `tape`; the result is 1-D of length `n`.
    pub fn apply(&self, tape: &mut Tape, grad: Var, k: usize) -> Result<Var> {
        let p = self.precond;
        let n = p.n();
        if tape.value(grad).len() != n {
            return Err(Error::dims("precondition", tape.value(grad).shape(), &[n]));
        }
        let g = if tape.value(grad).shape() == [n] {
            grad
        } else {
            tape.reshape(grad, &[n])?
        };
        let slot = if p.variant.per_iteration() { self.check_k(k)? } else { 0 };
        match p.variant {
            Variant::Identity => Ok(g),
            Variant::Hessian => {
                let solve = HessianSolve {
                    op: p.op.clone(),
                    epsilon: p.hessian_epsilon,
                };
                tape.linear(g, Arc::new(solve))
            }
            Variant::Polynomial => {
                let gram: Arc<dyn LinearOp> = Arc::new(GramOp(p.op.clone()));
                let coeff = |tape: &mut Tape, j| tape.select(self.vars[0], j);
                let c = coeff(tape, POLY_COEFFS - 1)?;
                let mut acc = tape.mul_scalar(c, g)?;
                for j in (0..POLY_COEFFS - 1).rev() {
                    let ga = tape.linear(acc, gram.clone())?;
                    let c = coeff(tape, j)?;
                    let cg = tape.mul_scalar(c, g)?;
                    acc = tape.add(ga, cg)?;
                }
                Ok(acc)
            }
            Variant::ScalarStep => {
                let s = tape.select(self.vars[0], slot)?;
                tape.mul_scalar(s, g)
            }
            Variant::Convolutional => {
                let kern = tape.select(self.vars[0], slot)?;
                let kern = tape.reshape(kern, &[1, 1, CONV_KERNEL, CONV_KERNEL])?;
                let img = tape.reshape(g, &[1, p.side, p.side])?;
                let out = tape.conv2d(img, kern, None)?;
                tape.reshape(out, &[n])
            }
            Variant::Pointwise => {
                let mask = tape.select(self.vars[0], slot)?;
                tape.mul(mask, g)
            }
            Variant::FullLinear => {
                let mat = tape.select(self.vars[0], slot)?;
                tape.matvec(mat, g)
            }
            Variant::Npo => npo::forward(tape, &self.vars, &p.npo, p.side, g, k),
        }
    }
}

/// `v = (H^T H + eps I)^{-1} g` by conjugate gradients. Symmetric, so it is
/// its own adjoint.
#[derive(Debug, Clone)]
pub struct HessianSolve {
    pub op: SensingOperator,
    pub epsilon: f64,
}

const CG_TOL: f64 = 1e-10;

impl HessianSolve {
    fn gram_shifted(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.op.transpose(&self.op.forward(x));
        if self.epsilon != 0.0 {
            out.iter_mut().zip(x).for_each(|(o, v)| *o += self.epsilon * v);
        }
        out
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let b_norm = dot(b, b).sqrt();
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        for _ in 0..10 * n {
            if rr.sqrt() <= CG_TOL * b_norm {
                return Ok(x);
            }
            let ap = self.gram_shifted(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rr / pap;
            x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
            r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        }
        if rr.sqrt() <= CG_TOL * b_norm {
            return Ok(x);
        }
        Err(Error::Numerical(format!(
            "conjugate gradient did not reach relative residual {CG_TOL:e} in {} iterations",
            10 * n
        )))
    }
}

impl LinearOp for HessianSolve {
    fn input_len(&self) -> usize {
        self.op.n()
    }

    fn output_len(&self) -> usize {
        self.op.n()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.solve(x)
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.solve(y)
    }
}

/// Largest eigenvalue of `H^T H` by power iteration.
pub fn gram_lambda_max(op: &SensingOperator, iterations: usize) -> f64 {
    let n = op.n();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * ((i * 7919) % 101) as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let w = op.transpose(&op.forward(&v));
        lambda = dot(&v, &w);
        v = w;
    }
    lambda
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

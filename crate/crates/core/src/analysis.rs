//! Conditioning analysis: finite-difference linearization of a
//! preconditioner, spectra of the preconditioned Gram matrix, and
//! reconstruction metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::forward::SensingOperator;
use crate::precond::{Preconditioner, DENSE_LIMIT};
use crate::solver::SolverRun;
use crate::tensor::{dot, Tensor};

/// Default finite-difference step for nonlinear preconditioners.
pub const DEFAULT_FD_EPSILON: f64 = 1e-4;

/// Relative cutoff below which singular values count as zero.
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-10;

/// Dense forward-difference Jacobian of `P(., k)` at `base_point`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    /// Row-major `n x n`; column `j` is `(P(x0 + eps e_j) - P(x0)) / eps`.
    pub matrix: Vec<f64>,
    pub n: usize,
    pub base_point: Tensor,
    pub epsilon: f64,
    pub k: usize,
}

impl JacobianEstimate {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.n + col]
    }

    /// Top-left `size x size` block, row-major.
    pub fn crop(&self, size: usize) -> Vec<f64> {
        let s = size.min(self.n);
        let mut out = Vec::with_capacity(s * s);
        for r in 0..s {
            out.extend_from_slice(&self.matrix[r * self.n..r * self.n + s]);
        }
        out
    }

    /// `row,col,value` for the top-left `size x size` block.
    pub fn to_csv(&self, size: usize) -> String {
        let s = size.min(self.n);
        let mut out = String::from("row,col,value\n");
        for r in 0..s {
            for c in 0..s {
                let _ = writeln!(out, "{r},{c},{:e}", self.get(r, c));
            }
        }
        out
    }
}

pub fn jacobian_fd(p: &Preconditioner, x0: &Tensor, epsilon: f64, k: usize) -> Result<JacobianEstimate> {
    let n = p.n();
    if n > DENSE_LIMIT {
        return Err(Error::Capability(format!(
            "dense Jacobian needs n <= {DENSE_LIMIT}, got {n}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "finite-difference step {epsilon} must be > 0"
        )));
    }
    if x0.len() != n {
        return Err(Error::dims("jacobian_fd", x0.shape(), &[n]));
    }
    let base = x0.clone().reshape(&[n])?;
    let p0 = p.apply(&base, k)?;
    let mut matrix = vec![0.0; n * n];
    let mut probe = base.clone();
    for j in 0..n {
        let orig = probe.data()[j];
        probe.data_mut()[j] = orig + epsilon;
        let pj = p.apply(&probe, k)?;
        probe.data_mut()[j] = orig;
        for (i, (a, b)) in pj.data().iter().zip(p0.data()).enumerate() {
            matrix[i * n + j] = (a - b) / epsilon;
        }
    }
    Ok(JacobianEstimate {
        matrix,
        n,
        base_point: base,
        epsilon,
        k,
    })
}

/// Singular values of a linearized preconditioned Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `sigma_max / sigma_min` over the values above the cutoff.
    pub condition_number: f64,
    pub rank: usize,
}

impl SpectrumReport {
    pub fn from_singular_values(mut values: Vec<f64>, threshold: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("empty spectrum".into()));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        let top = values[0];
        if !(top > 0.0) {
            return Err(Error::Degenerate("matrix is zero".into()));
        }
        let cut = threshold * top;
        let rank = values.iter().take_while(|s| **s > cut).count();
        let condition_number = (top / values[rank - 1]).max(1.0);
        Ok(SpectrumReport {
            singular_values: values,
            condition_number,
            rank,
        })
    }

    /// `index,singular_value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,singular_value\n");
        for (i, s) in self.singular_values.iter().enumerate() {
            let _ = writeln!(out, "{i},{s:e}");
        }
        out
    }
}

/// Spectrum of `J (H^T H)`.
pub fn preconditioned_gram_spectrum(
    j: &JacobianEstimate,
    op: &SensingOperator,
    threshold: f64,
) -> Result<SpectrumReport> {
    let n = j.n;
    if op.n() != n || j.matrix.len() != n * n {
        return Err(Error::Contract(format!(
            "Jacobian is {n}x{n} but the operator acts on length {}",
            op.n()
        )));
    }
    let gram = op.gram_dense();
    let mut prod = vec![0.0; n * n];
    for r in 0..n {
        let jr = &j.matrix[r * n..(r + 1) * n];
        let out = &mut prod[r * n..(r + 1) * n];
        for (kk, &a) in jr.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let gk = &gram[kk * n..(kk + 1) * n];
            out.iter_mut().zip(gk).for_each(|(o, g)| *o += a * g);
        }
    }
    SpectrumReport::from_singular_values(singular_values(&prod, n, n)?, threshold)
}

/// Singular values of a row-major `rows x cols` matrix by one-sided Jacobi,
/// sorted descending.
pub fn singular_values(a: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if a.len() != rows * cols {
        return Err(Error::dims("singular_values", &[a.len()], &[rows, cols]));
    }
    // Orthogonalize the columns of the taller orientation.
    let (m, n, mut cols_data) = if rows >= cols {
        (rows, cols, transpose_to_columns(a, rows, cols))
    } else {
        (cols, rows, row_vectors(a, rows, cols))
    };
    const TOL: f64 = 1e-15;
    const MAX_SWEEPS: usize = 60;
    // Columns at rounding-noise level relative to the whole matrix never
    // satisfy the relative test; they carry no resolvable singular value.
    let frob2: f64 = a.iter().map(|v| v * v).sum();
    let negligible = (f64::EPSILON * f64::EPSILON) * frob2;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (left, right) = cols_data.split_at_mut(q);
                let cp = &mut left[p];
                let cq = &mut right[0];
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if gamma == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() || alpha.min(beta) <= negligible {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xv, yv) = (*x, *y);
                    *x = c * xv - s * yv;
                    *y = s * xv + c * yv;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"
        )));
    }
    debug_assert!(cols_data.iter().all(|c| c.len() == m));
    let mut s: Vec<f64> = cols_data.iter().map(|c| dot(c, c).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

fn transpose_to_columns(a: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..cols)
        .map(|c| (0..rows).map(|r| a[r * cols + c]).collect())
        .collect()
}

fn row_vectors(a: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|r| a[r * cols..(r + 1) * cols].to_vec()).collect()
}

/// `10 log10(peak^2 / mse)`; `+inf` when the images are identical.
pub fn psnr(x_hat: &Tensor, x: &Tensor, peak: f64) -> Result<f64> {
    if x_hat.len() != x.len() {
        return Err(Error::dims("psnr", x_hat.shape(), x.shape()));
    }
    if !(peak > 0.0) {
        return Err(Error::Parameter(format!("peak {peak} must be > 0")));
    }
    if x.is_empty() {
        return Err(Error::Degenerate("psnr of empty images".into()));
    }
    let mse = x_hat
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// One row of a long-format convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub label: String,
    /// 1-based.
    pub iteration: usize,
    /// `NaN` when the run had no ground truth.
    pub psnr: f64,
    pub fidelity: f64,
}

pub fn convergence_report(runs: &[SolverRun], labels: &[&str]) -> Result<Vec<ConvergenceRow>> {
    if runs.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} runs but {} labels",
            runs.len(),
            labels.len()
        )));
    }
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    let k = first.trace.fidelity.len();
    let mut rows = Vec::with_capacity(k * runs.len());
    for (run, label) in runs.iter().zip(labels) {
        let t = &run.trace;
        if t.fidelity.len() != k || (!t.psnr.is_empty() && t.psnr.len() != k) {
            return Err(Error::Contract("ragged traces".into()));
        }
        for i in 0..k {
            rows.push(ConvergenceRow {
                label: label.to_string(),
                iteration: i + 1,
                psnr: t.psnr.get(i).copied().unwrap_or(f64::NAN),
                fidelity: t.fidelity[i],
            });
        }
    }
    Ok(rows)
}

/// `label,iteration,psnr,fidelity`.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("label,iteration,psnr,fidelity\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:e},{:e}", r.label, r.iteration, r.psnr, r.fidelity);
    }
    out
}

//! Sensing operators for the single-pixel camera (SPC), single-coil MRI and
//! super-resolution (SR), plus measurement simulation and fidelity gradients.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::transforms::{fwht, sequency_to_natural, Fft2};
use crate::tensor::{dot, Adjoint, LinearOp, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Spc,
    Mri,
    Sr,
    /// Explicit matrix, for toy problems and tests.
    Dense,
}

#[derive(Debug)]
enum Kind {
    Spc {
        /// Natural-order Hadamard rows, listed in sequency order.
        rows: Vec<usize>,
        scale: f64,
    },
    Mri {
        columns: Vec<usize>,
        /// Row-major k-space positions that are sampled.
        sampled: Vec<usize>,
        fft: Fft2,
    },
    Sr {
        kernel: Vec<f64>,
        ksize: usize,
        rf: usize,
    },
    Dense {
        /// Row-major `m x n`.
        matrix: Vec<f64>,
        m: usize,
    },
}

/// A linear forward model `H: R^n -> R^m` over square images.
///
/// MRI measurements are complex; they are stored as `m` real parts followed
/// by `m` imaginary parts, so the real output length is `2m`.
#[derive(Debug, Clone)]
pub struct SensingOperator {
    side: usize,
    inner: Arc<Kind>,
}

fn check_pow2(side: usize) -> Result<()> {
    if side == 0 || !side.is_power_of_two() {
        return Err(Error::Parameter(format!("image side {side} is not a power of two")));
    }
    Ok(())
}

/// SPC operator with rows from the unnormalized Sylvester Hadamard matrix
/// (entries in {-1, +1}); keeps the first `floor(gamma * n)` rows in sequency order.
pub fn build_spc(image_side: usize, gamma: f64) -> Result<SensingOperator> {
    spc_with_scale(image_side, gamma, 1.0)
}

/// Same rows as [`build_spc`] scaled by `1/sqrt(n)`, so the rows are orthonormal
/// and `H^T H` is an orthogonal projector.
pub fn build_spc_orthonormal(image_side: usize, gamma: f64) -> Result<SensingOperator> {
    let n = image_side * image_side;
    spc_with_scale(image_side, gamma, 1.0 / (n as f64).sqrt())
}

fn spc_with_scale(image_side: usize, gamma: f64, scale: f64) -> Result<SensingOperator> {
    check_pow2(image_side)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!("compression ratio {gamma} outside (0, 1]")));
    }
    let n = image_side * image_side;
    let m = ((gamma * n as f64).floor() as usize).max(1);
    let rows = (0..m).map(|s| sequency_to_natural(s, n)).collect();
    Ok(SensingOperator {
        side: image_side,
        inner: Arc::new(Kind::Spc { rows, scale }),
    })
}

/// MRI operator: column (phase-encode) mask sampled from a Gaussian centred
/// on DC, followed by the unitary 2-D DFT.
pub fn build_mri(image_side: usize, af_target: f64, mask_seed: u64) -> Result<SensingOperator> {
    check_pow2(image_side)?;
    if !(af_target >= 1.0) {
        return Err(Error::Parameter(format!("acceleration factor {af_target} < 1")));
    }
    let columns = gaussian_columns(image_side, af_target, mask_seed);
    let mut sampled = Vec::with_capacity(columns.len() * image_side);
    for r in 0..image_side {
        for &c in &columns {
            sampled.push(r * image_side + c);
        }
    }
    Ok(SensingOperator {
        side: image_side,
        inner: Arc::new(Kind::Mri {
            columns,
            sampled,
            fft: Fft2::new(image_side)?,
        }),
    })
}

/// Sorted column indices: DC always, the rest drawn without replacement with
/// weight `exp(-d^2 / 2 s^2)`, `d` the wrapped distance to DC, `s = side / 6`.
fn gaussian_columns(side: usize, af: f64, seed: u64) -> Vec<usize> {
    let count = ((side as f64 / af).round() as usize).clamp(1, side);
    let std = side as f64 / 6.0;
    let mut weights: Vec<f64> = (0..side)
        .map(|c| {
            let d = c.min(side - c) as f64;
            (-d * d / (2.0 * std * std)).exp()
        })
        .collect();
    weights[0] = 0.0;
    let mut chosen = vec![0];
    let mut rng = rng::seeded(seed);
    while chosen.len() < count {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (c, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            pick = Some(c);
            if u < *w {
                break;
            }
            u -= w;
        }
        // weights never all vanish before `count` is reached: every non-DC
        // column has a strictly positive weight
        let c = pick.expect("positive weight remains");
        weights[c] = 0.0;
        chosen.push(c);
    }
    chosen.sort_unstable();
    chosen
}

/// Normalized `size x size` Gaussian; `sigma == 0` gives the delta kernel.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(Error::Parameter(format!("blur size {size} must be odd")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!("blur sigma {sigma} must be >= 0")));
    }
    let h = (size / 2) as f64;
    let mut k = vec![0.0; size * size];
    if sigma == 0.0 {
        k[(size / 2) * size + size / 2] = 1.0;
        return Ok(k);
    }
    for i in 0..size {
        for j in 0..size {
            let (dy, dx) = (i as f64 - h, j as f64 - h);
            k[i * size + j] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// SR operator: circular Gaussian blur then keep every `rf`-th pixel per axis.
pub fn build_sr(image_side: usize, rf: usize, blur_size: usize, blur_sigma: f64) -> Result<SensingOperator> {
    if rf == 0 || image_side == 0 || image_side % rf != 0 {
        return Err(Error::Parameter(format!(
            "image side {image_side} not divisible by resolution factor {rf}"
        )));
    }
    let kernel = gaussian_kernel(blur_size, blur_sigma)?;
    Ok(SensingOperator {
        side: image_side,
        inner: Arc::new(Kind::Sr {
            kernel,
            ksize: blur_size,
            rf,
        }),
    })
}

/// Operator given by an explicit row-major `m x n` matrix, `n = image_side^2`.
pub fn build_dense(image_side: usize, m: usize, matrix: Vec<f64>) -> Result<SensingOperator> {
    let n = image_side * image_side;
    if n == 0 || m == 0 {
        return Err(Error::Parameter("dense operator needs n >= 1 and m >= 1".into()));
    }
    if matrix.len() != m * n {
        return Err(Error::dims("build_dense", &[matrix.len()], &[m, n]));
    }
    Ok(SensingOperator {
        side: image_side,
        inner: Arc::new(Kind::Dense { matrix, m }),
    })
}

impl SensingOperator {
    pub fn modality(&self) -> Modality {
        match *self.inner {
            Kind::Spc { .. } => Modality::Spc,
            Kind::Mri { .. } => Modality::Mri,
            Kind::Sr { .. } => Modality::Sr,
            Kind::Dense { .. } => Modality::Dense,
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Signal length.
    pub fn n(&self) -> usize {
        self.side * self.side
    }

    /// Number of measurements (complex samples for MRI).
    pub fn m(&self) -> usize {
        match &*self.inner {
            Kind::Spc { rows, .. } => rows.len(),
            Kind::Mri { sampled, .. } => sampled.len(),
            Kind::Sr { rf, .. } => (self.side / rf).pow(2),
            Kind::Dense { m, .. } => *m,
        }
    }

    /// Length of the real measurement vector.
    pub fn measurement_len(&self) -> usize {
        match *self.inner {
            Kind::Mri { .. } => 2 * self.m(),
            _ => self.m(),
        }
    }

    /// Selected Hadamard rows (natural order), SPC only.
    pub fn hadamard_rows(&self) -> Option<&[usize]> {
        match &*self.inner {
            Kind::Spc { rows, .. } => Some(rows),
            _ => None,
        }
    }

    /// Binary k-space mask (row-major), MRI only.
    pub fn mask(&self) -> Option<Vec<u8>> {
        match &*self.inner {
            Kind::Mri { columns, .. } => {
                let mut mask = vec![0u8; self.n()];
                for r in 0..self.side {
                    for &c in columns {
                        mask[r * self.side + c] = 1;
                    }
                }
                Some(mask)
            }
            _ => None,
        }
    }

    pub fn blur_kernel(&self) -> Option<&[f64]> {
        match &*self.inner {
            Kind::Sr { kernel, .. } => Some(kernel),
            _ => None,
        }
    }

    /// Achieved undersampling: `n / m` (AF for MRI, `RF^2` for SR, `1/gamma` for SPC).
    pub fn undersampling(&self) -> f64 {
        self.n() as f64 / self.m() as f64
    }

    /// `trace(H^T H) = ||H||_F^2` in closed form.
    pub fn gram_trace(&self) -> f64 {
        match &*self.inner {
            Kind::Spc { rows, scale } => rows.len() as f64 * self.n() as f64 * scale * scale,
            Kind::Mri { sampled, .. } => sampled.len() as f64,
            Kind::Sr { kernel, .. } => self.m() as f64 * dot(kernel, kernel),
            Kind::Dense { matrix, .. } => dot(matrix, matrix),
        }
    }

    /// Whether `H^T H` is known to be invertible by construction.
    pub fn has_full_column_rank(&self) -> bool {
        match &*self.inner {
            Kind::Spc { rows, .. } => rows.len() == self.n(),
            Kind::Mri { sampled, .. } => sampled.len() == self.n(),
            Kind::Sr { .. } | Kind::Dense { .. } => false,
        }
    }

    pub fn as_linear(&self) -> Arc<dyn LinearOp> {
        Arc::new(self.clone())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        match &*self.inner {
            Kind::Spc { rows, scale } => {
                let mut buf = x.to_vec();
                fwht(&mut buf).expect("side is a power of two");
                rows.iter().map(|&r| scale * buf[r]).collect()
            }
            Kind::Mri { sampled, fft, .. } => {
                let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                fft.transform(&mut buf, false);
                let m = sampled.len();
                let mut out = vec![0.0; 2 * m];
                for (i, &p) in sampled.iter().enumerate() {
                    out[i] = buf[p].re;
                    out[m + i] = buf[p].im;
                }
                out
            }
            Kind::Sr { kernel, ksize, rf } => {
                let blurred = circular_correlate(x, self.side, kernel, *ksize, false);
                let lo = self.side / rf;
                let mut out = Vec::with_capacity(lo * lo);
                for r in 0..lo {
                    for c in 0..lo {
                        out.push(blurred[r * rf * self.side + c * rf]);
                    }
                }
                out
            }
            Kind::Dense { matrix, .. } => matrix.chunks_exact(self.n()).map(|row| dot(row, x)).collect(),
        }
    }

    pub fn transpose(&self, y: &[f64]) -> Vec<f64> {
        match &*self.inner {
            Kind::Spc { rows, scale } => {
                let mut buf = vec![0.0; self.n()];
                for (&r, v) in rows.iter().zip(y) {
                    buf[r] = scale * v;
                }
                fwht(&mut buf).expect("side is a power of two");
                buf
            }
            Kind::Mri { sampled, fft, .. } => {
                let m = sampled.len();
                let mut buf = vec![Complex64::default(); self.n()];
                for (i, &p) in sampled.iter().enumerate() {
                    buf[p] = Complex64::new(y[i], y[m + i]);
                }
                fft.transform(&mut buf, true);
                buf.iter().map(|v| v.re).collect()
            }
            Kind::Sr { kernel, ksize, rf } => {
                let lo = self.side / rf;
                let mut up = vec![0.0; self.n()];
                for r in 0..lo {
                    for c in 0..lo {
                        up[r * rf * self.side + c * rf] = y[r * lo + c];
                    }
                }
                circular_correlate(&up, self.side, kernel, *ksize, true)
            }
            Kind::Dense { matrix, .. } => {
                let mut out = vec![0.0; self.n()];
                for (row, v) in matrix.chunks_exact(self.n()).zip(y) {
                    out.iter_mut().zip(row).for_each(|(o, a)| *o += a * v);
                }
                out
            }
        }
    }

    /// `g(x) = ||Hx - y||^2`.
    pub fn fidelity(&self, x: &[f64], y: &[f64]) -> f64 {
        self.forward(x).iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// `H^T (Hx - y)` without recording on a tape.
    pub fn fidelity_gradient(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self.forward(x).iter().zip(y).map(|(a, b)| a - b).collect();
        self.transpose(&r)
    }

    /// Dense `measurement_len x n` matrix, row-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let (n, rows) = (self.n(), self.measurement_len());
        let mut h = vec![0.0; rows * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            for (i, v) in self.forward(&e).into_iter().enumerate() {
                h[i * n + j] = v;
            }
            e[j] = 0.0;
        }
        h
    }

    /// Dense `H^T H`, `n x n` row-major.
    pub fn gram_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut g = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            for (i, v) in self.transpose(&self.forward(&e)).into_iter().enumerate() {
                g[i * n + j] = v;
            }
            e[j] = 0.0;
        }
        g
    }

    /// Writes [`Self::to_dense`] as little-endian `f64`s.
    pub fn write_dense(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for v in self.to_dense() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Circular cross-correlation with a centred kernel (`adjoint` flips it).
fn circular_correlate(x: &[f64], side: usize, kernel: &[f64], ksize: usize, adjoint: bool) -> Vec<f64> {
    let h = (ksize / 2) as isize;
    let s = side as isize;
    let mut out = vec![0.0; side * side];
    for i in 0..ksize {
        for j in 0..ksize {
            let kv = kernel[i * ksize + j];
            if kv == 0.0 {
                continue;
            }
            let (mut dy, mut dx) = (i as isize - h, j as isize - h);
            if adjoint {
                dy = -dy;
                dx = -dx;
            }
            for r in 0..s {
                let sr = (r + dy).rem_euclid(s) as usize;
                for c in 0..s {
                    let sc = (c + dx).rem_euclid(s) as usize;
                    out[r as usize * side + c as usize] += kv * x[sr * side + sc];
                }
            }
        }
    }
    out
}

impl LinearOp for SensingOperator {
    fn input_len(&self) -> usize {
        self.n()
    }

    fn output_len(&self) -> usize {
        self.measurement_len()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x))
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.transpose(y))
    }
}

/// `x -> H^T H x`.
#[derive(Debug, Clone)]
pub struct GramOp(pub SensingOperator);

impl LinearOp for GramOp {
    fn input_len(&self) -> usize {
        self.0.n()
    }

    fn output_len(&self) -> usize {
        self.0.n()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.transpose(&self.0.forward(x)))
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.apply(y)
    }
}

/// I.i.d. zero-mean Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::Parameter(format!("noise sigma {sigma} must be >= 0")));
        }
        Ok(NoiseModel { sigma, seed })
    }
}

/// `y = Hx + e`, `e ~ N(0, sigma^2 I)` drawn from the noise seed.
pub fn simulate(op: &SensingOperator, x: &Tensor, noise: &NoiseModel) -> Result<Tensor> {
    if x.len() != op.n() {
        return Err(Error::dims("simulate", x.shape(), &[op.n()]));
    }
    let mut y = op.forward(x.data());
    if noise.sigma > 0.0 {
        let normal = Normal::new(0.0, noise.sigma).map_err(|e| Error::Parameter(e.to_string()))?;
        let mut rng = rng::seeded(noise.seed);
        y.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Ok(Tensor::from_vec(y))
}

/// Records `H^T (Hx - y)` on the tape.
pub fn grad_fidelity(tape: &mut Tape, op: &SensingOperator, x: Var, y: Var) -> Result<Var> {
    let lin = op.as_linear();
    let flat = if tape.value(x).shape().len() == 1 {
        x
    } else {
        tape.reshape(x, &[op.n()])?
    };
    let hx = tape.linear(flat, lin.clone())?;
    if tape.value(y).len() != op.measurement_len() {
        return Err(Error::dims(
            "grad_fidelity",
            tape.value(y).shape(),
            &[op.measurement_len()],
        ));
    }
    let y = if tape.value(y).shape().len() == 1 {
        y
    } else {
        tape.reshape(y, &[op.measurement_len()])?
    };
    let r = tape.sub(hx, y)?;
    tape.linear(r, Arc::new(Adjoint(lin)))
}

//! Orthogonal image transforms: unitary 2-D DFT (complex data as two real
//! channels), orthonormal 2-D DCT-II and the Sylvester Hadamard transform.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{LinearOp, Tensor};
use crate::error::{Error, Result};

/// Non-power-of-two sizes are reported against the next power of two.
fn require_pow2(what: &'static str, n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::dims(what, &[n], &[n.max(1).next_power_of_two()]));
    }
    Ok(())
}

/// Unitary 2-D DFT on a `side x side` grid.
///
/// As a [`LinearOp`] it maps `[2, side, side]` (real channel, imaginary
/// channel) to the same layout, so its transpose is the inverse transform.
#[derive(Clone)]
pub struct Fft2 {
    side: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2").field("side", &self.side).finish()
    }
}

impl Fft2 {
    pub fn new(side: usize) -> Result<Self> {
        require_pow2("FFT", side)?;
        let mut planner = FftPlanner::new();
        Ok(Fft2 {
            side,
            forward: planner.plan_fft_forward(side),
            inverse: planner.plan_fft_inverse(side),
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// In-place unitary transform of a row-major complex grid.
    pub fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let s = self.side;
        let plan = if inverse { &self.inverse } else { &self.forward };
        plan.process(buf);
        let mut col = vec![Complex64::default(); s];
        for c in 0..s {
            for r in 0..s {
                col[r] = buf[r * s + c];
            }
            plan.process(&mut col);
            for r in 0..s {
                buf[r * s + c] = col[r];
            }
        }
        let scale = 1.0 / s as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }

    fn run(&self, x: &[f64], inverse: bool) -> Vec<f64> {
        let n = self.side * self.side;
        let mut buf: Vec<Complex64> = (0..n).map(|i| Complex64::new(x[i], x[n + i])).collect();
        self.transform(&mut buf, inverse);
        let mut out = vec![0.0; 2 * n];
        for (i, v) in buf.iter().enumerate() {
            out[i] = v.re;
            out[n + i] = v.im;
        }
        out
    }
}

impl LinearOp for Fft2 {
    fn input_len(&self) -> usize {
        2 * self.side * self.side
    }

    fn output_len(&self) -> usize {
        2 * self.side * self.side
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(x, false))
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(y, true))
    }
}

fn paired_side(op: &'static str, x: &Tensor) -> Result<usize> {
    match *x.shape() {
        [2, h, w] if h == w => Ok(h),
        _ => Err(Error::dims(op, x.shape(), &[2, 0, 0])),
    }
}

/// Unitary forward DFT of a `[2, side, side]` tensor.
pub fn fft2(x: &Tensor) -> Result<Tensor> {
    let side = paired_side("fft2", x)?;
    let data = Fft2::new(side)?.run(x.data(), false);
    Tensor::new(x.shape().to_vec(), data)
}

/// Inverse of [`fft2`].
pub fn ifft2(x: &Tensor) -> Result<Tensor> {
    let side = paired_side("ifft2", x)?;
    let data = Fft2::new(side)?.run(x.data(), true);
    Tensor::new(x.shape().to_vec(), data)
}

/// Orthonormal 2-D DCT-II on a `rows x cols` image.
#[derive(Debug, Clone)]
pub struct Dct2 {
    rows: usize,
    cols: usize,
    basis_r: Arc<Vec<f64>>,
    basis_c: Arc<Vec<f64>>,
}

fn dct_basis(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n * n];
    for k in 0..n {
        let a = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            b[k * n + i] = a * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    b
}

impl Dct2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        Dct2 {
            rows,
            cols,
            basis_r: Arc::new(dct_basis(rows)),
            basis_c: Arc::new(dct_basis(cols)),
        }
    }

    pub fn square(side: usize) -> Self {
        Self::new(side, side)
    }

    // forward: Br X Bc^T, inverse: Br^T Y Bc
    fn run(&self, x: &[f64], inverse: bool) -> Vec<f64> {
        let (r, c) = (self.rows, self.cols);
        let (br, bc) = (&self.basis_r, &self.basis_c);
        let mut tmp = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            for k in 0..c {
                tmp[i * c + k] = if inverse {
                    (0..c).map(|j| row[j] * bc[j * c + k]).sum()
                } else {
                    (0..c).map(|j| row[j] * bc[k * c + j]).sum()
                };
            }
        }
        let mut out = vec![0.0; r * c];
        for k in 0..r {
            for i in 0..r {
                let w = if inverse { br[i * r + k] } else { br[k * r + i] };
                if w == 0.0 {
                    continue;
                }
                for j in 0..c {
                    out[k * c + j] += w * tmp[i * c + j];
                }
            }
        }
        out
    }
}

impl LinearOp for Dct2 {
    fn input_len(&self) -> usize {
        self.rows * self.cols
    }

    fn output_len(&self) -> usize {
        self.rows * self.cols
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(x, false))
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(y, true))
    }
}

fn image_rc(op: &'static str, x: &Tensor) -> Result<(usize, usize)> {
    match *x.shape() {
        [r, c] | [1, r, c] => Ok((r, c)),
        _ => Err(Error::dims(op, x.shape(), &[0, 0])),
    }
}

pub fn dct2(x: &Tensor) -> Result<Tensor> {
    let (r, c) = image_rc("dct2", x)?;
    Tensor::new(x.shape().to_vec(), Dct2::new(r, c).run(x.data(), false))
}

pub fn idct2(x: &Tensor) -> Result<Tensor> {
    let (r, c) = image_rc("idct2", x)?;
    Tensor::new(x.shape().to_vec(), Dct2::new(r, c).run(x.data(), true))
}

/// In-place unnormalized fast Walsh-Hadamard transform in natural
/// (Sylvester) order. Applying it twice multiplies by `len`.
pub fn fwht(buf: &mut [f64]) -> Result<()> {
    require_pow2("Hadamard", buf.len())?;
    let mut h = 1;
    while h < buf.len() {
        for block in buf.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// Natural-order row of the Sylvester matrix that has `sequency` sign changes.
pub fn sequency_to_natural(sequency: usize, n: usize) -> usize {
    let bits = n.trailing_zeros();
    let gray = sequency ^ (sequency >> 1);
    if bits == 0 {
        return 0;
    }
    gray.reverse_bits() >> (usize::BITS - bits)
}

/// Dense Sylvester Hadamard matrix (natural order), entries in {-1, +1}.
pub fn hadamard_matrix(n: usize) -> Result<Vec<f64>> {
    require_pow2("Hadamard", n)?;
    Ok((0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            if (i & j).count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect())
}

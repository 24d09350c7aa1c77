//! Raw slice kernels behind the tape primitives. Images are `[C, H, W]`,
//! convolutions use zero "same" padding with odd kernels and stride 1.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel tap offset `d`
/// (input index = output index + d).
#[inline]
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// out[co] += sum_ci w[co,ci] (*) x[ci], for one (co, ci) pair.
fn correlate_plane(out: &mut [f64], x: &[f64], w: &[f64], g: &ConvGeom) {
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    for ky in 0..g.kh {
        let dy = ky as isize - ph;
        let (y0, y1) = valid_range(g.h, dy);
        for kx in 0..g.kw {
            let wv = w[ky * g.kw + kx];
            if wv == 0.0 {
                continue;
            }
            let dx = kx as isize - pw;
            let (x0, x1) = valid_range(g.w, dx);
            if x0 >= x1 {
                continue;
            }
            for y in y0..y1 {
                let src = ((y as isize + dy) as usize) * g.w;
                let xs = (x0 as isize + dx) as usize;
                axpy(
                    &mut out[y * g.w + x0..y * g.w + x1],
                    wv,
                    &x[src + xs..src + xs + (x1 - x0)],
                );
            }
        }
    }
}

/// Adjoint of `correlate_plane` with respect to the input plane.
fn correlate_plane_adjoint(dx_plane: &mut [f64], gout: &[f64], w: &[f64], g: &ConvGeom) {
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    for ky in 0..g.kh {
        let dy = ky as isize - ph;
        let (y0, y1) = valid_range(g.h, dy);
        for kx in 0..g.kw {
            let wv = w[ky * g.kw + kx];
            if wv == 0.0 {
                continue;
            }
            let dx = kx as isize - pw;
            let (x0, x1) = valid_range(g.w, dx);
            if x0 >= x1 {
                continue;
            }
            for y in y0..y1 {
                let dst = ((y as isize + dy) as usize) * g.w;
                let xs = (x0 as isize + dx) as usize;
                axpy(
                    &mut dx_plane[dst + xs..dst + xs + (x1 - x0)],
                    wv,
                    &gout[y * g.w + x0..y * g.w + x1],
                );
            }
        }
    }
}

/// Accumulates d(weight) for one (co, ci) pair.
fn correlate_plane_weight_grad(dw: &mut [f64], gout: &[f64], x: &[f64], g: &ConvGeom) {
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    for ky in 0..g.kh {
        let dy = ky as isize - ph;
        let (y0, y1) = valid_range(g.h, dy);
        for kx in 0..g.kw {
            let dx = kx as isize - pw;
            let (x0, x1) = valid_range(g.w, dx);
            if x0 >= x1 {
                continue;
            }
            let mut acc = 0.0;
            for y in y0..y1 {
                let src = ((y as isize + dy) as usize) * g.w;
                let xs = (x0 as isize + dx) as usize;
                acc += super::dot(&gout[y * g.w + x0..y * g.w + x1], &x[src + xs..src + xs + (x1 - x0)]);
            }
            dw[ky * g.kw + kx] += acc;
        }
    }
}

pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let plane = g.plane();
    let ksz = g.kh * g.kw;
    let mut out = vec![0.0; g.c_out * plane];
    for co in 0..g.c_out {
        let o = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = b {
            o.fill(b[co]);
        }
        if ksz == 1 {
            for ci in 0..g.c_in {
                let wv = w[co * g.c_in + ci];
                if wv != 0.0 {
                    axpy(o, wv, &x[ci * plane..(ci + 1) * plane]);
                }
            }
        } else {
            for ci in 0..g.c_in {
                let wk = &w[(co * g.c_in + ci) * ksz..(co * g.c_in + ci + 1) * ksz];
                correlate_plane(o, &x[ci * plane..(ci + 1) * plane], wk, g);
            }
        }
    }
    out
}

/// Returns (dx, dw, db).
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let plane = g.plane();
    let ksz = g.kh * g.kw;
    let mut dx = need_dx.then(|| vec![0.0; g.c_in * plane]);
    let mut dw = need_dw.then(|| vec![0.0; w.len()]);
    let mut db = vec![0.0; g.c_out];
    for co in 0..g.c_out {
        let go = &gout[co * plane..(co + 1) * plane];
        db[co] = go.iter().sum();
        for ci in 0..g.c_in {
            let widx = (co * g.c_in + ci) * ksz;
            let xi = &x[ci * plane..(ci + 1) * plane];
            if let Some(dx) = dx.as_mut() {
                let dxi = &mut dx[ci * plane..(ci + 1) * plane];
                if ksz == 1 {
                    axpy(dxi, w[widx], go);
                } else {
                    correlate_plane_adjoint(dxi, go, &w[widx..widx + ksz], g);
                }
            }
            if let Some(dw) = dw.as_mut() {
                if ksz == 1 {
                    dw[widx] += super::dot(go, xi);
                } else {
                    correlate_plane_weight_grad(&mut dw[widx..widx + ksz], go, xi, g);
                }
            }
        }
    }
    (dx, dw, db)
}

/// Depthwise variant: `g.c_in == g.c_out`, weights `[C, 1, kh, kw]`.
pub(crate) fn depthwise_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let plane = g.plane();
    let ksz = g.kh * g.kw;
    let mut out = vec![0.0; g.c_out * plane];
    for c in 0..g.c_out {
        let o = &mut out[c * plane..(c + 1) * plane];
        if let Some(b) = b {
            o.fill(b[c]);
        }
        correlate_plane(o, &x[c * plane..(c + 1) * plane], &w[c * ksz..(c + 1) * ksz], g);
    }
    out
}

pub(crate) fn depthwise_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let plane = g.plane();
    let ksz = g.kh * g.kw;
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0; w.len()]);
    let mut db = vec![0.0; g.c_out];
    for c in 0..g.c_out {
        let go = &gout[c * plane..(c + 1) * plane];
        db[c] = go.iter().sum();
        if let Some(dx) = dx.as_mut() {
            correlate_plane_adjoint(&mut dx[c * plane..(c + 1) * plane], go, &w[c * ksz..(c + 1) * ksz], g);
        }
        if let Some(dw) = dw.as_mut() {
            correlate_plane_weight_grad(&mut dw[c * ksz..(c + 1) * ksz], go, &x[c * plane..(c + 1) * plane], g);
        }
    }
    (dx, dw, db)
}

/// Layer norm across channels at every pixel. Returns (output, xhat, rstd).
pub(crate) fn channel_layer_norm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    channels: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = x.len() / channels;
    let mut mean = vec![0.0; plane];
    for c in 0..channels {
        axpy(&mut mean, 1.0 / channels as f64, &x[c * plane..(c + 1) * plane]);
    }
    let mut var = vec![0.0; plane];
    for c in 0..channels {
        for (p, v) in var.iter_mut().enumerate() {
            let d = x[c * plane + p] - mean[p];
            *v += d * d / channels as f64;
        }
    }
    let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        for p in 0..plane {
            let i = c * plane + p;
            xhat[i] = (x[i] - mean[p]) * rstd[p];
            out[i] = xhat[i] * gamma[c] + beta[c];
        }
    }
    (out, xhat, rstd)
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn channel_layer_norm_backward(
    gout: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gamma: &[f64],
    channels: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = rstd.len();
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    let mut mean_dxhat = vec![0.0; plane];
    let mut mean_dxhat_xhat = vec![0.0; plane];
    let inv_c = 1.0 / channels as f64;
    for c in 0..channels {
        for p in 0..plane {
            let i = c * plane + p;
            dgamma[c] += gout[i] * xhat[i];
            dbeta[c] += gout[i];
            let dxh = gout[i] * gamma[c];
            mean_dxhat[p] += dxh * inv_c;
            mean_dxhat_xhat[p] += dxh * xhat[i] * inv_c;
        }
    }
    let mut dx = vec![0.0; gout.len()];
    for c in 0..channels {
        for p in 0..plane {
            let i = c * plane + p;
            let dxh = gout[i] * gamma[c];
            dx[i] = rstd[p] * (dxh - mean_dxhat[p] - xhat[i] * mean_dxhat_xhat[p]);
        }
    }
    (dx, dgamma, dbeta)
}

/// Exact (erf-based) GELU.
#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

//! File formats and dataset plumbing: the weights container, 8-bit PGM,
//! IDX image files, resizing and the synthetic phantom generator.

pub mod weights;

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Decodes a binary PGM (P5). Values are divided by maxval; shape `[h, w]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(format_err(0, "not a binary PGM (P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(format_err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(start, "expected a number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| format_err(start, "number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(pos, "missing whitespace after maxval")),
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(pos, format!("maxval {maxval} outside 1..=65535")));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bpp;
    if bytes.len() - pos < need {
        return Err(format_err(
            bytes.len(),
            format!("truncated pixel data: need {need} bytes"),
        ));
    }
    let px = &bytes[pos..pos + need];
    let scale = maxval as f64;
    let data = if bpp == 1 {
        px.iter().map(|v| *v as f64 / scale).collect()
    } else {
        px.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    Tensor::new(vec![h, w], data)
}

/// Encodes a `[h, w]` image with values in `[0, 1]` as 8-bit P5 (clamped, rounded).
pub fn encode_pgm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match img.shape() {
        [h, w] => (*h, *w),
        [n] => {
            let s = (*n as f64).sqrt().round() as usize;
            if s * s != *n {
                return Err(Error::dims("encode_pgm", img.shape(), &[s, s]));
            }
            (s, s)
        }
        other => return Err(Error::dims("encode_pgm", other, &[0, 0])),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    decode_pgm(&std::fs::read(path)?)
}

pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    std::fs::write(path, encode_pgm(img)?)?;
    Ok(())
}

/// IDX magic of an unsigned-byte rank-3 array (an image stack).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Decodes an IDX image file into `[rows, cols]` tensors scaled by 1/255.
pub fn decode_idx_images(bytes: &[u8]) -> Result<Vec<Tensor>> {
    if bytes.len() < 4 {
        return Err(format_err(0, "truncated IDX magic"));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(
            0,
            format!("IDX magic {magic:#010x} is not an unsigned-byte image stack"),
        ));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let at = 4 + 4 * i;
        let b = bytes
            .get(at..at + 4)
            .ok_or_else(|| format_err(at, "truncated IDX dimensions"))?;
        *d = u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize;
    }
    let [count, rows, cols] = dims;
    let per = rows * cols;
    let start = 16;
    let need = count * per;
    if bytes.len() - start < need {
        return Err(format_err(
            bytes.len(),
            format!("truncated IDX payload: need {need} bytes"),
        ));
    }
    if bytes.len() - start > need {
        return Err(format_err(start + need, "trailing bytes after IDX payload"));
    }
    (0..count)
        .map(|i| {
            let px = &bytes[start + i * per..start + (i + 1) * per];
            Tensor::new(vec![rows, cols], px.iter().map(|v| *v as f64 / 255.0).collect())
        })
        .collect()
}

pub fn read_idx_images(path: &Path) -> Result<Vec<Tensor>> {
    decode_idx_images(&std::fs::read(path)?)
}

/// Nearest-neighbour resize of a `[h, w]` image to `[side, side]`.
pub fn resize_nearest(img: &Tensor, side: usize) -> Result<Tensor> {
    let [h, w] = img.shape() else {
        return Err(Error::dims("resize_nearest", img.shape(), &[0, 0]));
    };
    let (h, w) = (*h, *w);
    if h == 0 || w == 0 || side == 0 {
        return Err(Error::Degenerate("resize of an empty image".into()));
    }
    let src = |i: usize, len: usize| (((i as f64 + 0.5) * len as f64 / side as f64) as usize).min(len - 1);
    let mut out = Vec::with_capacity(side * side);
    for r in 0..side {
        let sr = src(r, h);
        for c in 0..side {
            out.push(img.data()[sr * w + src(c, w)]);
        }
    }
    Tensor::new(vec![side, side], out)
}

const SUPERSAMPLE: usize = 4;

/// Synthetic phantom: 1 to 4 ellipses or rectangles of intensity in
/// `[0.2, 1.0]` on a zero background, edges anti-aliased by 4x4 supersampling.
/// Shape `[side, side]`, values in `[0, 1]`.
pub fn phantom(side: usize, seed: u64) -> Tensor {
    let mut rng = rng::seeded(seed);
    let shapes = rng.random_range(1..=4);
    let mut img = vec![0.0; side * side];
    for _ in 0..shapes {
        let ellipse = rng.random_bool(0.5);
        let cx = rng.random_range(0.2..0.8);
        let cy = rng.random_range(0.2..0.8);
        let a = rng.random_range(0.08..0.3);
        let b = rng.random_range(0.08..0.3);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let intensity = rng.random_range(0.2..=1.0);
        let (sin, cos) = theta.sin_cos();
        let inside = |x: f64, y: f64| {
            let dx = x - cx;
            let dy = y - cy;
            let u = (cos * dx + sin * dy) / a;
            let v = (-sin * dx + cos * dy) / b;
            if ellipse {
                u * u + v * v <= 1.0
            } else {
                u.abs() <= 1.0 && v.abs() <= 1.0
            }
        };
        for r in 0..side {
            for c in 0..side {
                let mut hits = 0;
                for sr in 0..SUPERSAMPLE {
                    for sc in 0..SUPERSAMPLE {
                        let y = (r as f64 + (sr as f64 + 0.5) / SUPERSAMPLE as f64) / side as f64;
                        let x = (c as f64 + (sc as f64 + 0.5) / SUPERSAMPLE as f64) / side as f64;
                        hits += inside(x, y) as usize;
                    }
                }
                if hits > 0 {
                    let cover = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                    let px = &mut img[r * side + c];
                    *px = *px * (1.0 - cover) + intensity * cover;
                }
            }
        }
    }
    Tensor::new(vec![side, side], img).expect("side*side values")
}

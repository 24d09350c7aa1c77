#![allow(dead_code)]

use d2gp::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Uniform values bounded away from `kinks` by at least `gap`.
pub fn randn_away(rng: &mut impl Rng, shape: &[usize], kinks: &[f64], gap: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if kinks.iter().all(|k| (v - k).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Autodiff gradients of a scalar function of several tensors.
pub fn autodiff<F>(f: &F, inputs: &[Tensor]) -> Vec<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    vars.iter().map(|v| grads.grad(*v).into_data()).collect()
}

pub fn eval<F>(f: &F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).item().unwrap()
}

/// Central differences with step `h` for every input coordinate.
pub fn central_fd<F>(f: &F, inputs: &[Tensor], h: f64) -> Vec<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::new();
    for t in 0..inputs.len() {
        let mut g = vec![0.0; inputs[t].len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let fp = eval(f, &work);
            work[t].data_mut()[i] = orig - h;
            let fm = eval(f, &work);
            work[t].data_mut()[i] = orig;
            *gi = (fp - fm) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// `||a - b|| / max(||b||, floor)` over all inputs jointly.
pub fn rel_error(a: &[Vec<f64>], b: &[Vec<f64>], floor: f64) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.len(), y.len());
        for (u, v) in x.iter().zip(y) {
            diff += (u - v) * (u - v);
            norm += v * v;
        }
    }
    diff.sqrt() / norm.sqrt().max(floor)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sylvester Hadamard matrix built by the doubling recursion, `n x n` row-major.
pub fn sylvester(n: usize) -> Vec<f64> {
    let mut h = vec![1.0];
    let mut size = 1;
    while size < n {
        let mut next = vec![0.0; 4 * size * size];
        for r in 0..size {
            for c in 0..size {
                let v = h[r * size + c];
                next[r * 2 * size + c] = v;
                next[r * 2 * size + c + size] = v;
                next[(r + size) * 2 * size + c] = v;
                next[(r + size) * 2 * size + c + size] = -v;
            }
        }
        h = next;
        size *= 2;
    }
    h
}

/// Rows of `h` sorted by their number of sign changes.
pub fn sequency_rows(h: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = h.chunks(n).map(|r| r.to_vec()).collect();
    rows.sort_by_key(|r| r.windows(2).filter(|w| w[0] != w[1]).count());
    rows
}

pub fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| (0..cols).map(|c| a[r * cols + c] * x[c]).sum())
        .collect()
}

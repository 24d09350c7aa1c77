//! Reverse-mode gradients against central finite differences.

mod common;

use std::sync::Arc;

use common::*;
use d2gp::distill::{kd_total, loss_gradient, loss_imitation, loss_supervised, LossWeights};
use d2gp::forward::{build_mri, build_spc, build_sr, grad_fidelity};
use d2gp::precond::{NpoConfig, PrecondContext, Preconditioner, Variant};
use d2gp::solver::{pnp_fista_on_tape, ProxOperator, SolverConfig};
use d2gp::tensor::transforms::{Dct2, Fft2};
use d2gp::tensor::LinearOp;
use d2gp::{Tape, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

/// Reduces a tensor-valued output to a scalar with a fixed random weighting,
/// so the check covers the whole vector-Jacobian product.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let w = randn(&mut rng(seed ^ 0x5eed), &shape);
    let w = tape.constant(w);
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}

fn check<F>(name: &str, f: F, make: impl Fn(u64) -> Vec<Tensor>)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    for seed in 0..INSTANCES {
        let inputs = make(seed);
        let ad = autodiff(&f, &inputs);
        let fd = central_fd(&f, &inputs, H);
        let err = rel_error(&ad, &fd, 1e-8);
        assert!(err < TOL, "{name} instance {seed}: relative error {err:e}");
    }
}

/// Like [`check`] but compares only the first input; the rest are detached
/// targets whose finite differences are not gradients.
fn check_first<F>(name: &str, f: F, make: impl Fn(u64) -> Vec<Tensor>)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    for seed in 0..INSTANCES {
        let inputs = make(seed);
        let ad = autodiff(&f, &inputs);
        let fd = central_fd(&f, &inputs, H);
        let err = rel_error(&ad[..1], &fd[..1], 1e-8);
        assert!(err < TOL, "{name} instance {seed}: relative error {err:e}");
    }
}

macro_rules! unary {
    ($name:ident, $shape:expr, |$t:ident, $a:ident| $body:expr) => {
        #[test]
        fn $name() {
            check(
                stringify!($name),
                |$t: &mut Tape, v: &[Var]| {
                    let $a = v[0];
                    let out = $body;
                    project($t, out, 1)
                },
                |s| vec![randn(&mut rng(s), &$shape)],
            );
        }
    };
}

macro_rules! binary {
    ($name:ident, $sa:expr, $sb:expr, |$t:ident, $a:ident, $b:ident| $body:expr) => {
        #[test]
        fn $name() {
            check(
                stringify!($name),
                |$t: &mut Tape, v: &[Var]| {
                    let ($a, $b) = (v[0], v[1]);
                    let out = $body;
                    project($t, out, 2)
                },
                |s| {
                    let mut r = rng(s);
                    vec![randn(&mut r, &$sa), randn(&mut r, &$sb)]
                },
            );
        }
    };
}

binary!(add, [6], [6], |t, a, b| t.add(a, b).unwrap());
binary!(sub, [6], [6], |t, a, b| t.sub(a, b).unwrap());
binary!(mul, [2, 3], [2, 3], |t, a, b| t.mul(a, b).unwrap());
unary!(scale, [5], |t, a| t.scale(a, -1.7));
unary!(add_scalar, [5], |t, a| t.add_scalar(a, 0.3));
binary!(mul_scalar, [1], [5], |t, s, a| t.mul_scalar(s, a).unwrap());
binary!(axpy, [5], [5], |t, x, y| t.axpy(0.7, x, y).unwrap());
binary!(matvec, [3, 4], [4], |t, a, x| t.matvec(a, x).unwrap());
binary!(matmul, [3, 4], [4, 2], |t, a, b| t.matmul(a, b).unwrap());
unary!(sum, [7], |t, a| {
    let s = t.sum(a);
    t.mul(s, s).unwrap()
});
unary!(mean, [7], |t, a| {
    let s = t.mean(a);
    t.mul(s, s).unwrap()
});
unary!(l2_norm_squared, [7], |t, a| t.l2_norm_squared(a));
binary!(inner, [6], [6], |t, a, b| t.inner(a, b).unwrap());
unary!(gelu, [8], |t, a| t.gelu(a));
binary!(cosine_similarity, [6], [6], |t, a, b| t
    .cosine_similarity(a, b)
    .unwrap());
unary!(reshape, [2, 6], |t, a| t.reshape(a, &[3, 4]).unwrap());
unary!(select, [3, 4], |t, a| t.select(a, 1).unwrap());
binary!(add_channel_bias, [3, 4, 4], [3], |t, x, b| t
    .add_channel_bias(x, b)
    .unwrap());

#[test]
fn relu() {
    check(
        "relu",
        |t: &mut Tape, v: &[Var]| {
            let out = t.relu(v[0]);
            project(t, out, 3)
        },
        |s| vec![randn_away(&mut rng(s), &[9], &[0.0], 1e-3)],
    );
}

#[test]
fn soft_threshold() {
    let tau = 0.3;
    check(
        "soft_threshold",
        |t: &mut Tape, v: &[Var]| {
            let out = t.soft_threshold(v[0], tau);
            project(t, out, 4)
        },
        |s| vec![randn_away(&mut rng(s), &[9], &[-tau, tau], 1e-3)],
    );
}

#[test]
fn channel_layer_norm() {
    check(
        "channel_layer_norm",
        |t: &mut Tape, v: &[Var]| {
            let out = t.channel_layer_norm(v[0], v[1], v[2], 1e-6).unwrap();
            project(t, out, 5)
        },
        |s| {
            let mut r = rng(s);
            vec![randn(&mut r, &[4, 3, 3]), randn(&mut r, &[4]), randn(&mut r, &[4])]
        },
    );
}

#[test]
fn conv2d_with_bias() {
    check(
        "conv2d",
        |t: &mut Tape, v: &[Var]| {
            let out = t.conv2d(v[0], v[1], Some(v[2])).unwrap();
            project(t, out, 6)
        },
        |s| {
            let mut r = rng(s);
            vec![
                randn(&mut r, &[2, 5, 5]),
                randn(&mut r, &[3, 2, 3, 3]),
                randn(&mut r, &[3]),
            ]
        },
    );
}

#[test]
fn conv2d_pointwise_without_bias() {
    check(
        "conv2d 1x1",
        |t: &mut Tape, v: &[Var]| {
            let out = t.conv2d(v[0], v[1], None).unwrap();
            project(t, out, 7)
        },
        |s| {
            let mut r = rng(s);
            vec![randn(&mut r, &[3, 4, 4]), randn(&mut r, &[5, 3, 1, 1])]
        },
    );
}

#[test]
fn depthwise_conv2d() {
    check(
        "depthwise_conv2d",
        |t: &mut Tape, v: &[Var]| {
            let out = t.depthwise_conv2d(v[0], v[1], Some(v[2])).unwrap();
            project(t, out, 8)
        },
        |s| {
            let mut r = rng(s);
            vec![
                randn(&mut r, &[3, 6, 6]),
                randn(&mut r, &[3, 1, 5, 5]),
                randn(&mut r, &[3]),
            ]
        },
    );
}

fn linear_check(name: &str, op: Arc<dyn LinearOp>) {
    let n = op.input_len();
    check_first(
        name,
        |t: &mut Tape, v: &[Var]| {
            let out = t.linear(v[0], op.clone()).unwrap();
            project(t, out, 9)
        },
        |s| vec![randn(&mut rng(s), &[n])],
    );
}

#[test]
fn linear_through_operators() {
    linear_check("spc", build_spc(4, 0.5).unwrap().as_linear());
    linear_check("mri", build_mri(4, 2.0, 3).unwrap().as_linear());
    linear_check("sr", build_sr(4, 2, 3, 1.0).unwrap().as_linear());
    linear_check("dct", Arc::new(Dct2::square(4)));
    linear_check("fft", Arc::new(Fft2::new(4).unwrap()));
}

#[test]
fn detach_blocks_gradient() {
    let x = randn(&mut rng(0), &[4]);
    let g = autodiff(
        &|t: &mut Tape, v: &[Var]| {
            let d = t.detach(v[0]);
            t.inner(d, v[0]).unwrap()
        },
        &[x.clone()],
    );
    // d/dx <stop(x), x> = stop(x)
    assert_eq!(g[0], x.data());
}

#[test]
fn chained_primitives_match_hand_derivative() {
    // f(x) = sum(relu(2x + 1)^2); df/dx_i = 4 (2 x_i + 1) when 2 x_i + 1 > 0
    let x = Tensor::from_vec(vec![0.5, -2.0, 1.5, -0.25]);
    let g = autodiff(
        &|t: &mut Tape, v: &[Var]| {
            let a = t.scale(v[0], 2.0);
            let b = t.add_scalar(a, 1.0);
            let r = t.relu(b);
            t.l2_norm_squared(r)
        },
        &[x.clone()],
    );
    let hand: Vec<f64> = x
        .data()
        .iter()
        .map(|v| {
            if 2.0 * v + 1.0 > 0.0 {
                4.0 * (2.0 * v + 1.0)
            } else {
                0.0
            }
        })
        .collect();
    assert_eq!(g[0], hand);
}

#[test]
fn cosine_gradient_tight_tolerance() {
    for seed in 0..INSTANCES {
        let mut r = rng(100 + seed);
        let inputs = vec![randn(&mut r, &[10]), randn(&mut r, &[10])];
        let f = |t: &mut Tape, v: &[Var]| t.cosine_similarity(v[0], v[1]).unwrap();
        let err = rel_error(&autodiff(&f, &inputs), &central_fd(&f, &inputs, H), 1e-8);
        assert!(err < 1e-6, "instance {seed}: {err:e}");
    }
}

#[test]
fn replay_is_bit_identical() {
    let inputs = vec![randn(&mut rng(3), &[2, 5, 5]), randn(&mut rng(4), &[3, 2, 3, 3])];
    let f = |t: &mut Tape, v: &[Var]| {
        let c = t.conv2d(v[0], v[1], None).unwrap();
        let g = t.gelu(c);
        t.l2_norm_squared(g)
    };
    let a = autodiff(&f, &inputs);
    let b = autodiff(&f, &inputs);
    for (x, y) in a.iter().zip(&b) {
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

// composite losses

#[test]
fn gradient_loss() {
    check_first(
        "loss_gradient",
        |t: &mut Tape, v: &[Var]| loss_gradient(t, v[0], v[1]).unwrap(),
        |s| {
            let mut r = rng(200 + s);
            vec![randn(&mut r, &[16]), randn(&mut r, &[16])]
        },
    );
}

#[test]
fn gradient_loss_ignores_teacher() {
    let mut r = rng(7);
    let inputs = vec![randn(&mut r, &[8]), randn(&mut r, &[8])];
    let g = autodiff(
        &|t: &mut Tape, v: &[Var]| loss_gradient(t, v[0], v[1]).unwrap(),
        &inputs,
    );
    assert!(g[1].iter().all(|v| *v == 0.0));
    assert!(g[0].iter().any(|v| *v != 0.0));
}

#[test]
fn imitation_and_supervised_losses() {
    for (name, f) in [
        (
            "loss_imitation",
            loss_imitation as fn(&mut Tape, Var, Var) -> d2gp::Result<Var>,
        ),
        ("loss_supervised", loss_supervised),
    ] {
        check_first(
            name,
            |t: &mut Tape, v: &[Var]| f(t, v[0], v[1]).unwrap(),
            |s| {
                let mut r = rng(300 + s);
                vec![randn(&mut r, &[16]), randn(&mut r, &[16])]
            },
        );
    }
}

#[test]
fn total_loss() {
    let w = LossWeights::new(0.7, 1.3, 0.4).unwrap();
    check_first(
        "kd_total",
        |t: &mut Tape, v: &[Var]| {
            let lg = loss_gradient(t, v[0], v[1]).unwrap();
            let li = loss_imitation(t, v[0], v[2]).unwrap();
            let ls = loss_supervised(t, v[0], v[3]).unwrap();
            kd_total(t, lg, li, ls, &w).unwrap()
        },
        |s| {
            let mut r = rng(400 + s);
            (0..4).map(|_| randn(&mut r, &[12])).collect()
        },
    );
}

#[test]
fn total_gradient_is_weighted_sum_of_member_gradients() {
    let w = LossWeights::new(0.7, 1.3, 0.4).unwrap();
    let mut r = rng(11);
    let inputs: Vec<Tensor> = (0..4).map(|_| randn(&mut r, &[12])).collect();
    let member = |which: usize| {
        autodiff(
            &move |t: &mut Tape, v: &[Var]| match which {
                0 => loss_gradient(t, v[0], v[1]).unwrap(),
                1 => loss_imitation(t, v[0], v[2]).unwrap(),
                _ => loss_supervised(t, v[0], v[3]).unwrap(),
            },
            &inputs,
        )[0]
        .clone()
    };
    let (gg, gi, gs) = (member(0), member(1), member(2));
    let total = autodiff(
        &|t: &mut Tape, v: &[Var]| {
            let lg = loss_gradient(t, v[0], v[1]).unwrap();
            let li = loss_imitation(t, v[0], v[2]).unwrap();
            let ls = loss_supervised(t, v[0], v[3]).unwrap();
            kd_total(t, lg, li, ls, &w).unwrap()
        },
        &inputs,
    );
    for i in 0..12 {
        let expect = w.gradient * gg[i] + w.imitation * gi[i] + w.supervised * gs[i];
        assert!((total[0][i] - expect).abs() < 1e-12, "coordinate {i}");
    }
}

#[test]
fn fidelity_gradient_on_tape() {
    let op = build_sr(4, 2, 3, 1.0).unwrap();
    check(
        "grad_fidelity",
        |t: &mut Tape, v: &[Var]| {
            let g = grad_fidelity(t, &op, v[0], v[1]).unwrap();
            project(t, g, 10)
        },
        |s| {
            let mut r = rng(500 + s);
            vec![randn(&mut r, &[16]), randn(&mut r, &[4])]
        },
    );
}

// preconditioners and the unrolled solver

fn small_npo() -> NpoConfig {
    NpoConfig {
        channels: 4,
        blocks: 2,
        pe_dim: 8,
        ..NpoConfig::default()
    }
}

/// Replaces every parameter (including the zero head) with small random values
/// so that all parameters receive gradient.
fn randomize(p: &mut Preconditioner, seed: u64, amplitude: f64) {
    let mut r = rng(seed);
    for param in p.params_mut().iter_mut() {
        let noise = randn(&mut r, param.value.shape());
        for (v, e) in param.value.data_mut().iter_mut().zip(noise.data()) {
            *v += amplitude * e;
        }
    }
}

fn params_of(p: &Preconditioner) -> Vec<Tensor> {
    p.params().iter().map(|q| q.value.clone()).collect()
}

#[test]
fn trainable_preconditioners_differentiate() {
    let op = build_spc(8, 0.5).unwrap();
    let ctx = PrecondContext {
        op,
        iterations: 3,
        npo: small_npo(),
    };
    let g = randn(&mut rng(21), &[64]);
    for variant in Variant::ALL
        .into_iter()
        .filter(|v| v.is_trainable() || *v == Variant::Polynomial)
    {
        let mut p = Preconditioner::init(variant, &ctx, 5).unwrap();
        randomize(&mut p, 6, 0.1);
        let f = |t: &mut Tape, v: &[Var]| {
            let bound = p.bind_vars(t, v).unwrap();
            let gv = t.constant(g.clone());
            let out = bound.apply(t, gv, 2).unwrap();
            t.l2_norm_squared(out)
        };
        let inputs = params_of(&p);
        let err = rel_error(&autodiff(&f, &inputs), &central_fd(&f, &inputs, H), 1e-8);
        assert!(err < TOL, "{variant}: relative error {err:e}");
    }
}

#[test]
fn unrolled_solver_with_network_differentiates() {
    let op = build_spc(8, 0.5).unwrap();
    let ctx = PrecondContext {
        op: op.clone(),
        iterations: 3,
        npo: small_npo(),
    };
    let mut p = Preconditioner::init(Variant::Npo, &ctx, 9).unwrap();
    randomize(&mut p, 10, 0.05);
    let x_true = randn(&mut rng(12), &[64]);
    let y = Tensor::from_vec(op.forward(x_true.data()));
    let cfg = SolverConfig::new(0.01, 0.05, 3).unwrap();
    let f = |t: &mut Tape, v: &[Var]| {
        let bound = p.bind_vars(t, v).unwrap();
        let yv = t.constant(y.clone());
        let run = pnp_fista_on_tape(t, &bound, &op, yv, &cfg, &ProxOperator::DctSoftThreshold).unwrap();
        t.l2_norm_squared(run.final_x)
    };
    let inputs = params_of(&p);
    let ad = autodiff(&f, &inputs);
    let fd = central_fd(&f, &inputs, H);
    let err = rel_error(&ad, &fd, 1e-8);
    assert!(err < 1e-3, "relative error {err:e}");
}

//! Distilled nonlinear gradient preconditioning for plug-and-play FISTA.
//!
//! A small trainable network rewrites the data-fidelity gradient of an
//! ill-conditioned "student" solver so that it tracks a "teacher" solver
//! running with a better-conditioned sensing operator. The crate carries
//! everything needed to build, train and inspect such preconditioners:
//!
//! - [`tensor`]: dense tensors and tape-based reverse-mode autodiff,
//! - [`forward`]: single-pixel, MRI and super-resolution sensing operators,
//! - [`precond`]: classical and learned preconditioners, including the network,
//! - [`solver`]: preconditioned plug-and-play FISTA and proximal maps,
//! - [`distill`]: the distillation losses, Adam/AdamW and the training loop,
//! - [`analysis`]: finite-difference Jacobians, Gram spectra and metrics,
//! - [`io`]: weights files, PGM/IDX images and synthetic phantoms.

pub mod analysis;
pub mod distill;
pub mod error;
pub mod forward;
pub mod io;
pub mod precond;
pub mod rng;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Gradients, ParamSet, Parameter, Tape, Tensor, Var};

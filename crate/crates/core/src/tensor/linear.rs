use std::fmt;
use std::sync::Arc;

use crate::error::Result;

/// A real linear map `R^input_len -> R^output_len` with its transpose.
///
/// Implementors must satisfy `<apply(x), y> == <x, adjoint(y)>`; the tape
/// relies on it to backpropagate through the map.
pub trait LinearOp: Send + Sync + fmt::Debug {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>>;
}

/// The transpose of another map, as a map in its own right.
#[derive(Debug, Clone)]
pub struct Adjoint(pub Arc<dyn LinearOp>);

impl LinearOp for Adjoint {
    fn input_len(&self) -> usize {
        self.0.output_len()
    }

    fn output_len(&self) -> usize {
        self.0.input_len()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.adjoint(x)
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.0.apply(y)
    }
}

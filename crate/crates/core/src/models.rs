//! Small built-in forward models.

use crate::error::{Error, Result};
use crate::mcmc::ForwardModel;

fn check_len(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "model input",
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct IdentityModel {
    dim: usize,
}

impl IdentityModel {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl ForwardModel for IdentityModel {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x)?;
        Ok(x.to_vec())
    }
}

/// Coordinate-wise square `u -> u^2`. Two-to-one, so the standard rule
/// is biased on it.
#[derive(Clone, Copy, Debug)]
pub struct SquareModel {
    dim: usize,
}

impl SquareModel {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl ForwardModel for SquareModel {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x)?;
        Ok(x.iter().map(|v| v * v).collect())
    }
}

/// Wraps a closure as a forward model.
pub struct FnModel<F> {
    input_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    pub fn new(input_dim: usize, output_dim: usize, f: F) -> Self {
        Self {
            input_dim,
            output_dim,
            f,
        }
    }
}

impl<F> ForwardModel for FnModel<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_dim, x)?;
        Ok((self.f)(x))
    }
}

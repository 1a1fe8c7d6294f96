//! f64 CPU numerics: matrices, a reverse-mode tape, optimizers, batch norm,
//! a seeded PRNG, and a finite-difference gradient checker.
//!
//! Everything downstream (field fitting, the weight-space encoder, the
//! language head) trains through [`Tape`]; keeping the op set small and each
//! backward rule finite-difference-checked is the whole safety story.

mod batchnorm;
mod gradcheck;
mod matrix;
mod optim;
mod rng;
pub mod scalar;
mod tape;

pub use batchnorm::{BatchNorm, BnMode};
pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::Matrix;
pub use optim::Optimizer;
pub use rng::Rng64;
pub use tape::{relu_mlp, Gradients, Tape, Var};

use sha2::{Digest, Sha256};

/// Errors produced by the numerics layer.
#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("{op} expected a {expected} matrix, got {rows}x{cols}")]
    BadShape {
        op: &'static str,
        expected: String,
        rows: usize,
        cols: usize,
    },
    #[error("backward requires a 1x1 scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("non-finite value in gradient of parameter `{name}`")]
    NonFiniteGrad { name: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("batch norm in train mode needs at least 2 rows, got {rows}")]
    BatchTooSmall { rows: usize },
    #[error("{0}")]
    Invalid(String),
}

/// SHA-256 over the little-endian bytes of a sequence of matrices, as a hex
/// string. Used to pin down "these parameters did not move" contracts.
pub fn param_checksum<'a>(mats: impl IntoIterator<Item = &'a Matrix>) -> String {
    let mut hasher = Sha256::new();
    for m in mats {
        for v in m.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Uniform Kaiming-style init: entries drawn from U(-b, b) with
/// b = sqrt(6 / fan_in). Biases are created separately as zeros.
pub fn kaiming_uniform(fan_in: usize, fan_out: usize, rng: &mut Rng64) -> Matrix {
    let bound = (6.0 / fan_in as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.range(-bound, bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_changes_with_content() {
        let a = Matrix::filled(2, 2, 1.0);
        let mut b = a.clone();
        assert_eq!(param_checksum([&a]), param_checksum([&b]));
        b.set(0, 0, 1.5);
        assert_ne!(param_checksum([&a]), param_checksum([&b]));
    }

    #[test]
    fn kaiming_bound_respected() {
        let mut rng = Rng64::new(7);
        let w = kaiming_uniform(100, 50, &mut rng);
        let bound = (6.0_f64 / 100.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        // should actually use the range, not collapse to tiny values
        assert!(w.data().iter().any(|v| v.abs() > bound * 0.5));
    }
}

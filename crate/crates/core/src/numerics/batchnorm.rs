//! Batch normalization over the row (batch) dimension with learnable
//! per-column affine parameters and EMA running statistics.
//!
//! Train mode normalizes with the batch's population statistics (divide by N)
//! and updates the running stats; eval mode normalizes with the stored
//! running stats and is fully deterministic. The differentiable train-mode
//! path lives on the tape ([`crate::numerics::Tape::batch_norm_train`]); this
//! struct owns the parameters/state and provides the plain forward.

use super::matrix::Matrix;
use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Matrix,
    pub running_var: Matrix,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    /// gamma = 1, beta = 0, running mean = 0, running var = 1.
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Matrix::filled(1, features, 1.0),
            beta: Matrix::zeros(1, features),
            running_mean: Matrix::zeros(1, features),
            running_var: Matrix::filled(1, features, 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.cols()
    }

    /// Plain (no-gradient) forward. Train mode updates the running stats as a
    /// side effect and requires at least two rows.
    pub fn forward(&mut self, x: &Matrix, mode: BnMode) -> Result<Matrix, NumericsError> {
        if x.cols() != self.features() {
            return Err(NumericsError::ShapeMismatch {
                op: "batch_norm",
                lhs_rows: x.rows(),
                lhs_cols: x.cols(),
                rhs_rows: 1,
                rhs_cols: self.features(),
            });
        }
        match mode {
            BnMode::Eval => Ok(self.forward_eval(x)),
            BnMode::Train => {
                if x.rows() < 2 {
                    return Err(NumericsError::BatchTooSmall { rows: x.rows() });
                }
                let n = x.rows() as f64;
                let mut out = Matrix::zeros(x.rows(), x.cols());
                for c in 0..x.cols() {
                    let mut mean = 0.0;
                    for r in 0..x.rows() {
                        mean += x.get(r, c);
                    }
                    mean /= n;
                    let mut var = 0.0;
                    for r in 0..x.rows() {
                        let d = x.get(r, c) - mean;
                        var += d * d;
                    }
                    var /= n;
                    let inv = 1.0 / (var + self.eps).sqrt();
                    for r in 0..x.rows() {
                        let xh = (x.get(r, c) - mean) * inv;
                        out.set(r, c, xh * self.gamma.get(0, c) + self.beta.get(0, c));
                    }
                    let rm = self.running_mean.get(0, c);
                    self.running_mean
                        .set(0, c, (1.0 - self.momentum) * rm + self.momentum * mean);
                    let rv = self.running_var.get(0, c);
                    self.running_var
                        .set(0, c, (1.0 - self.momentum) * rv + self.momentum * var);
                }
                Ok(out)
            }
        }
    }

    /// Eval-mode forward without the &mut requirement.
    pub fn forward_eval(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for c in 0..x.cols() {
            let inv = 1.0 / (self.running_var.get(0, c) + self.eps).sqrt();
            let mean = self.running_mean.get(0, c);
            let g = self.gamma.get(0, c);
            let b = self.beta.get(0, c);
            for r in 0..x.rows() {
                out.set(r, c, (x.get(r, c) - mean) * inv * g + b);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_constant_column_normalizes_to_zero() {
        let mut bn = BatchNorm::new(2);
        let x = Matrix::filled(4, 2, 3.0);
        let y = bn.forward(&x, BnMode::Train).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let bn = BatchNorm::new(3);
        let x = Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.25]).unwrap();
        let y = bn.forward_eval(&x);
        // running mean 0, var 1, gamma 1, beta 0 => y = x / sqrt(1 + eps)
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn two_row_column_normalizes_to_plus_minus_one() {
        let mut bn = BatchNorm::new(1);
        let x = Matrix::col_vector(vec![1.0, 3.0]);
        let y = bn.forward(&x, BnMode::Train).unwrap();
        // mean 2, population var 1
        assert!((y.get(0, 0) + 1.0).abs() < 1e-4);
        assert!((y.get(1, 0) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn train_batch_of_one_rejected() {
        let mut bn = BatchNorm::new(2);
        let x = Matrix::zeros(1, 2);
        let err = bn.forward(&x, BnMode::Train).unwrap_err();
        assert!(matches!(err, NumericsError::BatchTooSmall { rows: 1 }));
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut bn = BatchNorm::new(1);
        let x = Matrix::col_vector(vec![10.0, 10.0, 10.0, 10.0]);
        bn.forward(&x, BnMode::Train).unwrap();
        // EMA with momentum 0.1 from mean 0 toward batch mean 10
        assert!((bn.running_mean.get(0, 0) - 1.0).abs() < 1e-12);
        // batch var is 0, so running var decays from 1 toward 0
        assert!((bn.running_var.get(0, 0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn eval_is_deterministic() {
        let bn = BatchNorm::new(2);
        let x = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(bn.forward_eval(&x), bn.forward_eval(&x));
    }

    #[test]
    fn tape_train_forward_matches_plain_forward() {
        use crate::numerics::{Rng64, Tape};
        let mut rng = Rng64::new(21);
        let x = Matrix::from_fn(6, 3, |_, _| rng.range(-2.0, 2.0));

        let mut bn = BatchNorm::new(3);
        bn.gamma = Matrix::row_vector(vec![1.5, 0.5, -1.0]);
        bn.beta = Matrix::row_vector(vec![0.1, -0.2, 0.3]);

        let mut bn_tape = bn.clone();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let gv = tape.leaf(bn_tape.gamma.clone());
        let bv = tape.leaf(bn_tape.beta.clone());
        let y = tape
            .batch_norm_train(
                xv,
                gv,
                bv,
                &mut bn_tape.running_mean,
                &mut bn_tape.running_var,
                bn_tape.momentum,
                bn_tape.eps,
            )
            .unwrap();

        let plain = bn.forward(&x, BnMode::Train).unwrap();
        assert!(tape.value(y).max_abs_diff(&plain) < 1e-14);
        assert!(bn_tape.running_mean.max_abs_diff(&bn.running_mean) < 1e-15);
        assert!(bn_tape.running_var.max_abs_diff(&bn.running_var) < 1e-15);
    }
}

//! SGD and Adam. One optimizer instance owns the moment state for a fixed
//! ordered set of parameters; callers must pass the same parameters in the
//! same order on every step.

use super::matrix::Matrix;
use super::NumericsError;

pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Vec<Matrix>,
        v: Vec<Matrix>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    /// Adam with the conventional defaults beta1 = 0.9, beta2 = 0.999,
    /// eps = 1e-8.
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => *lr,
        }
    }

    /// Changes the learning rate for subsequent steps (moment state, if any,
    /// is kept), so callers can run warmup/decay schedules.
    pub fn set_learning_rate(&mut self, new_lr: f64) {
        match self {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => *lr = new_lr,
        }
    }

    /// Applies one update in place. `params` and `grads` are parallel slices;
    /// non-finite gradients abort with an error naming the parameter.
    pub fn step(
        &mut self,
        params: &mut [(&str, &mut Matrix)],
        grads: &[Matrix],
    ) -> Result<(), NumericsError> {
        if params.len() != grads.len() {
            return Err(NumericsError::Invalid(format!(
                "optimizer got {} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "optimizer_step",
                    lhs_rows: p.rows(),
                    lhs_cols: p.cols(),
                    rhs_rows: g.rows(),
                    rhs_cols: g.cols(),
                });
            }
            if !g.is_finite() {
                return Err(NumericsError::NonFiniteGrad {
                    name: (*name).to_string(),
                });
            }
        }
        match self {
            Optimizer::Sgd { lr } => {
                for ((_, p), g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= *lr * gv;
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                if m.is_empty() {
                    for g in grads {
                        m.push(Matrix::zeros(g.rows(), g.cols()));
                        v.push(Matrix::zeros(g.rows(), g.cols()));
                    }
                } else if m.len() != grads.len() {
                    return Err(NumericsError::Invalid(format!(
                        "optimizer state holds {} params but step got {}",
                        m.len(),
                        grads.len()
                    )));
                }
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
                    let mi = m[i].data_mut();
                    let vi = v[i].data_mut();
                    for ((pv, &gv), (mv, vv)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(mi.iter_mut().zip(vi.iter_mut()))
                    {
                        *mv = *beta1 * *mv + (1.0 - *beta1) * gv;
                        *vv = *beta2 * *vv + (1.0 - *beta2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= *lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
            }
        }
        Ok(())
    }
}

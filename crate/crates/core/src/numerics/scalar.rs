//! Scalar nonlinearities shared by the tape ops and the plain (no-gradient)
//! evaluation paths, so both sides compute bit-identical values.

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Derivative of relu; the subgradient at exactly 0 is taken as 0.
pub fn drelu(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

/// GeLU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C0 * (x + GELU_C1 * x * x * x)).tanh())
}

pub fn dgelu(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x)
}

/// Smooth-L1 (Huber-style) penalty of a single difference d.
pub fn smooth_l1_term(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}

/// Derivative of `smooth_l1_term` with respect to d.
pub fn dsmooth_l1_term(d: f64, beta: f64) -> f64 {
    (d / beta).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        assert_eq!(relu(-1.5), 0.0);
        assert_eq!(relu(2.5), 2.5);
        assert_eq!(drelu(0.0), 0.0);
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn gelu_at_one() {
        // value of the tanh-approximation form
        assert!((gelu(1.0) - 0.841192).abs() < 1e-5);
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn smooth_l1_cases() {
        assert_eq!(smooth_l1_term(0.0, 1.0), 0.0);
        assert!((smooth_l1_term(0.25, 1.0) - 0.03125).abs() < 1e-15);
        assert!((smooth_l1_term(1.5, 1.0) - 1.0).abs() < 1e-15);
        assert!((smooth_l1_term(-1.5, 1.0) - 1.0).abs() < 1e-15);
    }
}

//! The per-object NeRF MLP: 144 encoded inputs → H, L hidden H→H layers,
//! H → 4 raw outputs (r, g, b, σ). ReLU between all layers except the last.
//!
//! The stored weights are RAW: the output activations (sigmoid on rgb, ReLU
//! on σ) are applied by the renderer, not the network, so that checkpoints
//! and the stacked weight matrix see the true last layer.

use super::encode::{encode_points, ENC_DIM};
use super::{Field, NerfError};
use crate::numerics::{kaiming_uniform, scalar, Matrix, Rng64};

#[derive(Clone, Debug, PartialEq)]
pub struct NerfMlp {
    /// Hidden-layer count L.
    pub l: usize,
    /// Hidden width H.
    pub h: usize,
    /// 144×H input layer.
    pub w_in: Matrix,
    /// 1×H input bias.
    pub b_in: Matrix,
    /// L hidden layers: (H×H weight, 1×H bias).
    pub hidden: Vec<(Matrix, Matrix)>,
    /// H×4 output layer.
    pub w_out: Matrix,
    /// 1×4 output bias.
    pub b_out: Matrix,
}

impl NerfMlp {
    /// Kaiming-uniform initialization (bound √(6/fan_in)), zero biases.
    pub fn init(l: usize, h: usize, rng: &mut Rng64) -> Self {
        assert!(l >= 1 && h >= 4, "degenerate NeRF architecture {}x{}", l, h);
        NerfMlp {
            l,
            h,
            w_in: kaiming_uniform(ENC_DIM, h, rng),
            b_in: Matrix::zeros(1, h),
            hidden: (0..l)
                .map(|_| (kaiming_uniform(h, h, rng), Matrix::zeros(1, h)))
                .collect(),
            w_out: kaiming_uniform(h, 4, rng),
            b_out: Matrix::zeros(1, 4),
        }
    }

    /// All parameter matrices in stacking order.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = vec![&self.w_in, &self.b_in];
        for (w, b) in &self.hidden {
            p.push(w);
            p.push(b);
        }
        p.push(&self.w_out);
        p.push(&self.b_out);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = vec![&mut self.w_in, &mut self.b_in];
        for (w, b) in &mut self.hidden {
            p.push(w);
            p.push(b);
        }
        p.push(&mut self.w_out);
        p.push(&mut self.b_out);
        p
    }

    /// Parameter names in stacking order (for optimizer diagnostics).
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["w_in".to_string(), "b_in".to_string()];
        for i in 0..self.l {
            names.push(format!("w_h{}", i));
            names.push(format!("b_h{}", i));
        }
        names.push("w_out".to_string());
        names.push("b_out".to_string());
        names
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    fn check_shapes(&self) -> Result<(), NerfError> {
        let ok = self.w_in.shape() == (ENC_DIM, self.h)
            && self.b_in.shape() == (1, self.h)
            && self.hidden.len() == self.l
            && self
                .hidden
                .iter()
                .all(|(w, b)| w.shape() == (self.h, self.h) && b.shape() == (1, self.h))
            && self.w_out.shape() == (self.h, 4)
            && self.b_out.shape() == (1, 4);
        if ok {
            Ok(())
        } else {
            Err(NerfError::BadArchitecture {
                l: self.l,
                h: self.h,
            })
        }
    }

    /// Raw (unactivated) N×4 outputs for a batch of points.
    ///
    /// Validates shapes and weight finiteness up front so a corrupted
    /// checkpoint fails loudly instead of rendering NaNs.
    pub fn query_raw(&self, points: &[[f64; 3]]) -> Result<Matrix, NerfError> {
        self.check_shapes()?;
        if !self.params().iter().all(|m| m.is_finite()) {
            return Err(NerfError::NonFiniteWeights);
        }
        let enc = encode_points(points);
        Ok(self.forward_encoded(&enc))
    }

    /// Forward pass from already-encoded inputs (N×144). Infallible: shapes
    /// are guaranteed by construction on every internal call path.
    pub fn forward_encoded(&self, enc: &Matrix) -> Matrix {
        let mut x = enc
            .matmul(&self.w_in)
            .and_then(|m| m.add_row_broadcast(&self.b_in))
            .expect("input layer shapes")
            .map(scalar::relu);
        for (w, b) in &self.hidden {
            x = x
                .matmul(w)
                .and_then(|m| m.add_row_broadcast(b))
                .expect("hidden layer shapes")
                .map(scalar::relu);
        }
        x.matmul(&self.w_out)
            .and_then(|m| m.add_row_broadcast(&self.b_out))
            .expect("output layer shapes")
    }
}

impl Field for NerfMlp {
    fn query(&self, points: &[[f64; 3]], rgb: &mut Vec<[f64; 3]>, sigma: &mut Vec<f64>) {
        let raw = self
            .query_raw(points)
            .expect("NerfMlp used as a field must hold finite, well-shaped weights");
        rgb.clear();
        sigma.clear();
        for i in 0..raw.rows() {
            rgb.push([
                scalar::sigmoid(raw.get(i, 0)),
                scalar::sigmoid(raw.get(i, 1)),
                scalar::sigmoid(raw.get(i, 2)),
            ]);
            sigma.push(scalar::relu(raw.get(i, 3)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-line oracle: scalar loops, no matrix ops.
    fn query_oracle(nerf: &NerfMlp, p: [f64; 3]) -> [f64; 4] {
        let mut enc = vec![0.0; ENC_DIM];
        super::super::encode::positional_encode(p, &mut enc);
        let mut x: Vec<f64> = (0..nerf.h)
            .map(|j| {
                let mut acc = nerf.b_in.get(0, j);
                for i in 0..ENC_DIM {
                    acc += enc[i] * nerf.w_in.get(i, j);
                }
                acc.max(0.0)
            })
            .collect();
        for (w, b) in &nerf.hidden {
            x = (0..nerf.h)
                .map(|j| {
                    let mut acc = b.get(0, j);
                    for i in 0..nerf.h {
                        acc += x[i] * w.get(i, j);
                    }
                    acc.max(0.0)
                })
                .collect();
        }
        let mut out = [0.0; 4];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = nerf.b_out.get(0, j);
            for i in 0..nerf.h {
                acc += x[i] * nerf.w_out.get(i, j);
            }
            *o = acc;
        }
        out
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut rng = Rng64::new(1);
        let mut nerf = NerfMlp::init(2, 8, &mut rng);
        for m in nerf.params_mut() {
            *m = Matrix::zeros(m.rows(), m.cols());
        }
        nerf.b_out = Matrix::row_vector(vec![0.1, 0.2, 0.3, 0.4]);
        let out = nerf.query_raw(&[[0.5, -0.3, 0.9], [2.0, 0.0, 0.0]]).unwrap();
        for i in 0..2 {
            assert_eq!(out.get(i, 0), 0.1);
            assert_eq!(out.get(i, 3), 0.4);
        }
    }

    #[test]
    fn matches_straight_line_oracle() {
        let mut rng = Rng64::new(2);
        let nerf = NerfMlp::init(3, 16, &mut rng);
        let pts: Vec<[f64; 3]> = (0..10)
            .map(|_| [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)])
            .collect();
        let out = nerf.query_raw(&pts).unwrap();
        for (i, &p) in pts.iter().enumerate() {
            let oracle = query_oracle(&nerf, p);
            for j in 0..4 {
                assert!(
                    (out.get(i, j) - oracle[j]).abs() < 1e-12,
                    "point {} channel {}: {} vs {}",
                    i,
                    j,
                    out.get(i, j),
                    oracle[j]
                );
            }
        }
    }

    #[test]
    fn batch_query_equals_concatenated_singles() {
        let mut rng = Rng64::new(3);
        let nerf = NerfMlp::init(1, 8, &mut rng);
        let pts = [[0.1, 0.2, 0.3], [-0.5, 0.0, 1.0], [0.9, -0.9, 0.4]];
        let batch = nerf.query_raw(&pts).unwrap();
        for (i, &p) in pts.iter().enumerate() {
            let single = nerf.query_raw(&[p]).unwrap();
            for j in 0..4 {
                assert_eq!(batch.get(i, j), single.get(0, j));
            }
        }
    }

    #[test]
    fn nan_weights_are_a_query_error() {
        let mut rng = Rng64::new(4);
        let mut nerf = NerfMlp::init(1, 8, &mut rng);
        nerf.w_out.set(0, 0, f64::NAN);
        let err = nerf.query_raw(&[[0.0, 0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, NerfError::NonFiniteWeights));
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let mut r1 = Rng64::new(9);
        let mut r2 = Rng64::new(9);
        let a = NerfMlp::init(3, 64, &mut r1);
        let b = NerfMlp::init(3, 64, &mut r2);
        assert_eq!(a, b);
        assert_eq!(a.b_in, Matrix::zeros(1, 64));
        assert_eq!(a.b_out, Matrix::zeros(1, 4));
        // Kaiming bound for the input layer.
        let bound = (6.0f64 / ENC_DIM as f64).sqrt();
        assert!(a.w_in.data().iter().all(|v| v.abs() <= bound));
        assert!(a.w_in.data().iter().any(|v| v.abs() > bound * 0.5));
    }
}

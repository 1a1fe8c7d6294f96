//! Camera poses on origin-centered view spheres: the 40-view layout (two
//! 19-azimuth elevation rings plus zenith and nadir) and its desk-scale
//! shrinkages.

use super::ScenegenError;

pub const RING_ELEVATION_DEG: f64 = 25.0;

/// A pinhole camera looking at the origin. `rotation` is the camera-to-world
/// matrix whose columns are the camera's right, up, and backward axes, so the
/// camera looks along `-rotation[..][2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: [[f64; 3]; 3],
    pub position: [f64; 3],
    /// Focal length in pixels.
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = norm(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

impl CameraPose {
    /// A camera at `position` aimed at the origin. The up hint is +z, falling
    /// back to +y for (near-)polar positions where +z is degenerate.
    pub fn look_at_origin(
        position: [f64; 3],
        width: usize,
        height: usize,
        focal: f64,
    ) -> Result<Self, ScenegenError> {
        let dist = norm(position);
        if dist < 1e-9 {
            return Err(ScenegenError::DegenerateCamera);
        }
        if width == 0 || height == 0 || focal <= 0.0 {
            return Err(ScenegenError::BadCamera(format!(
                "width={} height={} focal={}",
                width, height, focal
            )));
        }
        let forward = normalize([-position[0], -position[1], -position[2]]);
        let up_hint = if forward[2].abs() > 0.999 {
            [0.0, 1.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        let right = normalize(cross(forward, up_hint));
        let up = cross(right, forward);
        let back = [-forward[0], -forward[1], -forward[2]];
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            rotation[i][0] = right[i];
            rotation[i][1] = up[i];
            rotation[i][2] = back[i];
        }
        Ok(CameraPose {
            rotation,
            position,
            focal,
            width,
            height,
        })
    }

    pub fn distance(&self) -> f64 {
        norm(self.position)
    }

    /// R·v — camera-space direction to world space.
    pub fn rotate_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    /// max |RᵀR − I| over entries.
    pub fn orthonormality_residual(&self) -> f64 {
        let r = &self.rotation;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Distance from the origin to the principal axis (the look-at residual).
    pub fn look_at_residual(&self) -> f64 {
        // Principal axis: position + t·forward, forward = −back column.
        let f = [
            -self.rotation[0][2],
            -self.rotation[1][2],
            -self.rotation[2][2],
        ];
        let t = -(self.position[0] * f[0] + self.position[1] * f[1] + self.position[2] * f[2]);
        let closest = [
            self.position[0] + t * f[0],
            self.position[1] + t * f[1],
            self.position[2] + t * f[2],
        ];
        norm(closest)
    }

    /// Flattened 3×4 [R|t] by rows: (R₀₀ R₀₁ R₀₂ t₀ R₁₀ … t₂).
    pub fn to_rows(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(12);
        for i in 0..3 {
            out.extend_from_slice(&self.rotation[i]);
            out.push(self.position[i]);
        }
        out
    }

    /// Inverse of `to_rows`; intrinsics come from the pipeline config.
    pub fn from_rows(
        rows: &[f64],
        width: usize,
        height: usize,
        focal: f64,
    ) -> Result<Self, ScenegenError> {
        if rows.len() != 12 {
            return Err(ScenegenError::BadCamera(format!(
                "pose row vector has {} entries, need 12",
                rows.len()
            )));
        }
        let mut rotation = [[0.0; 3]; 3];
        let mut position = [0.0; 3];
        for i in 0..3 {
            rotation[i].copy_from_slice(&rows[4 * i..4 * i + 3]);
            position[i] = rows[4 * i + 3];
        }
        let pose = CameraPose {
            rotation,
            position,
            focal,
            width,
            height,
        };
        if pose.orthonormality_residual() > 1e-9 {
            return Err(ScenegenError::BadCamera(
                "pose rotation is not orthonormal".into(),
            ));
        }
        Ok(pose)
    }
}

/// `n` look-at poses on the radius-`radius` view sphere. For n ≥ 4: two
/// elevation rings at ±25° holding n−2 cameras (upper ring gets the extra on
/// odd counts, lower azimuths staggered by half a step), plus one zenith and
/// one nadir view. n=40 reproduces the 19+19+2 reference layout. For n of 2
/// or 3, all cameras sit on the upper ring.
pub fn sample_cameras(
    n: usize,
    width: usize,
    height: usize,
    focal: f64,
    radius: f64,
) -> Result<Vec<CameraPose>, ScenegenError> {
    if n < 2 {
        return Err(ScenegenError::BadCamera(format!(
            "need at least 2 cameras, got {}",
            n
        )));
    }
    let elev = RING_ELEVATION_DEG.to_radians();
    let mut poses: Vec<Result<CameraPose, ScenegenError>> = Vec::with_capacity(n);
    let ring = |count: usize, phi: f64, stagger: f64, poses: &mut Vec<Result<CameraPose, ScenegenError>>| {
        for k in 0..count {
            let theta = 2.0 * std::f64::consts::PI * (k as f64 + stagger) / count as f64;
            let pos = [
                radius * phi.cos() * theta.cos(),
                radius * phi.cos() * theta.sin(),
                radius * phi.sin(),
            ];
            poses.push(CameraPose::look_at_origin(pos, width, height, focal));
        }
    };
    if n < 4 {
        ring(n, elev, 0.0, &mut poses);
    } else {
        let upper = n - 2 - (n - 2) / 2;
        let lower = (n - 2) / 2;
        ring(upper, elev, 0.0, &mut poses);
        ring(lower, -elev, 0.5, &mut poses);
        poses.push(CameraPose::look_at_origin(
            [0.0, 0.0, radius],
            width,
            height,
            focal,
        ));
        poses.push(CameraPose::look_at_origin(
            [0.0, 0.0, -radius],
            width,
            height,
            focal,
        ));
    }
    poses.into_iter().collect()
}

//! The six colored solid primitives scenes are built from. Each shape knows
//! point containment (which defines the analytic density field), its exact
//! volume (the Monte-Carlo oracle target), and a bounding radius used to keep
//! scenes inside the unit sphere.

use serde::{Deserialize, Serialize};

/// Shape kind plus size parameters. All shapes are axis-aligned with their
/// symmetry axis along z, which keeps containment tests closed-form; variety
/// comes from class, size, placement, and color.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Ball of `radius`.
    Sphere { radius: f64 },
    /// Axis-aligned cube with half-extent `half`.
    Cube { half: f64 },
    /// Upright cylinder: `radius`, half-height `half_h`.
    Cylinder { radius: f64, half_h: f64 },
    /// Upright cone: base `radius` at −half_h, apex at +half_h.
    Cone { radius: f64, half_h: f64 },
    /// Ring of `major` radius with a tube of `minor` radius, in the xy plane.
    Torus { major: f64, minor: f64 },
    /// Cylinder of `radius` and half-length `half_l` capped by hemispheres.
    Capsule { radius: f64, half_l: f64 },
}

impl Shape {
    /// The class word for this shape.
    pub fn class_word(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Cube { .. } => "cube",
            Shape::Cylinder { .. } => "cylinder",
            Shape::Cone { .. } => "cone",
            Shape::Torus { .. } => "torus",
            Shape::Capsule { .. } => "capsule",
        }
    }

    /// Containment of a point given in the shape's local frame.
    pub fn contains_local(&self, p: [f64; 3]) -> bool {
        let [x, y, z] = p;
        let r2 = x * x + y * y;
        match *self {
            Shape::Sphere { radius } => r2 + z * z <= radius * radius,
            Shape::Cube { half } => x.abs() <= half && y.abs() <= half && z.abs() <= half,
            Shape::Cylinder { radius, half_h } => z.abs() <= half_h && r2 <= radius * radius,
            Shape::Cone { radius, half_h } => {
                if z.abs() > half_h {
                    return false;
                }
                // Linear taper from full radius at the base to 0 at the apex.
                let allowed = radius * (half_h - z) / (2.0 * half_h);
                r2 <= allowed * allowed
            }
            Shape::Torus { major, minor } => {
                let ring = r2.sqrt() - major;
                ring * ring + z * z <= minor * minor
            }
            Shape::Capsule { radius, half_l } => {
                let dz = (z.abs() - half_l).max(0.0);
                r2 + dz * dz <= radius * radius
            }
        }
    }

    /// Exact volume.
    pub fn volume(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Shape::Sphere { radius } => 4.0 / 3.0 * PI * radius.powi(3),
            Shape::Cube { half } => (2.0 * half).powi(3),
            Shape::Cylinder { radius, half_h } => PI * radius * radius * 2.0 * half_h,
            Shape::Cone { radius, half_h } => PI * radius * radius * 2.0 * half_h / 3.0,
            Shape::Torus { major, minor } => 2.0 * PI * PI * major * minor * minor,
            Shape::Capsule { radius, half_l } => {
                PI * radius * radius * 2.0 * half_l + 4.0 / 3.0 * PI * radius.powi(3)
            }
        }
    }

    /// Radius of the smallest origin-centered ball containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Cube { half } => half * 3.0f64.sqrt(),
            Shape::Cylinder { radius, half_h } => (radius * radius + half_h * half_h).sqrt(),
            Shape::Cone { radius, half_h } => (radius * radius + half_h * half_h).sqrt(),
            Shape::Torus { major, minor } => major + minor,
            Shape::Capsule { radius, half_l } => half_l + radius,
        }
    }
}

/// A placed, colored primitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    /// RGB in [0,1]³.
    pub color: [f64; 3],
    /// The color's name, used by annotation templates.
    pub color_name: String,
}

impl Primitive {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.shape.contains_local([
            p[0] - self.center[0],
            p[1] - self.center[1],
            p[2] - self.center[2],
        ])
    }

    /// |center| + shape bound: the scene-fit check.
    pub fn reach(&self) -> f64 {
        let d = (self.center.iter().map(|v| v * v).sum::<f64>()).sqrt();
        d + self.shape.bounding_radius()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng64;

    /// Monte-Carlo volume oracle: rejection sampling in the bounding box.
    fn mc_volume(shape: &Shape, rng: &mut Rng64, samples: usize) -> f64 {
        let b = shape.bounding_radius();
        let mut hits = 0usize;
        for _ in 0..samples {
            let p = [
                rng.range(-b, b),
                rng.range(-b, b),
                rng.range(-b, b),
            ];
            if shape.contains_local(p) {
                hits += 1;
            }
        }
        (2.0 * b).powi(3) * hits as f64 / samples as f64
    }

    fn all_shapes() -> Vec<Shape> {
        vec![
            Shape::Sphere { radius: 0.5 },
            Shape::Cube { half: 0.4 },
            Shape::Cylinder {
                radius: 0.35,
                half_h: 0.45,
            },
            Shape::Cone {
                radius: 0.45,
                half_h: 0.5,
            },
            Shape::Torus {
                major: 0.4,
                minor: 0.15,
            },
            Shape::Capsule {
                radius: 0.25,
                half_l: 0.3,
            },
        ]
    }

    #[test]
    fn containment_matches_volume_within_two_percent() {
        let mut rng = Rng64::new(42);
        for shape in all_shapes() {
            let est = mc_volume(&shape, &mut rng, 200_000);
            let exact = shape.volume();
            let rel = (est - exact).abs() / exact;
            assert!(
                rel < 0.02,
                "{}: MC {} vs exact {} (rel {})",
                shape.class_word(),
                est,
                exact,
                rel
            );
        }
    }

    #[test]
    fn obvious_containment_cases() {
        for shape in all_shapes() {
            let inside_origin = !matches!(shape, Shape::Torus { .. });
            assert_eq!(shape.contains_local([0.0; 3]), inside_origin);
            let b = shape.bounding_radius();
            assert!(!shape.contains_local([b + 0.01, 0.0, 0.0]));
            assert!(!shape.contains_local([0.0, 0.0, b + 0.01]));
        }
        // Torus contains its ring line, not its center.
        let torus = Shape::Torus {
            major: 0.4,
            minor: 0.15,
        };
        assert!(torus.contains_local([0.4, 0.0, 0.0]));
        assert!(!torus.contains_local([0.0, 0.0, 0.0]));
        // Capsule end caps are round: corner of the circumscribed cylinder is
        // outside, tip of the hemisphere is inside.
        let cap = Shape::Capsule {
            radius: 0.25,
            half_l: 0.3,
        };
        assert!(cap.contains_local([0.0, 0.0, 0.54]));
        assert!(!cap.contains_local([0.24, 0.0, 0.54]));
        // Cone tapers: near the apex only small radii fit.
        let cone = Shape::Cone {
            radius: 0.45,
            half_h: 0.5,
        };
        assert!(cone.contains_local([0.4, 0.0, -0.45]));
        assert!(!cone.contains_local([0.4, 0.0, 0.45]));
    }

    #[test]
    fn bounding_radius_bounds_samples() {
        let mut rng = Rng64::new(43);
        for shape in all_shapes() {
            let b = shape.bounding_radius();
            for _ in 0..2000 {
                let p = [
                    rng.range(-1.0, 1.0),
                    rng.range(-1.0, 1.0),
                    rng.range(-1.0, 1.0),
                ];
                if shape.contains_local(p) {
                    let d = (p.iter().map(|v| v * v).sum::<f64>()).sqrt();
                    assert!(d <= b + 1e-12);
                }
            }
        }
    }

    #[test]
    fn primitive_offsets_containment() {
        let prim = Primitive {
            shape: Shape::Sphere { radius: 0.2 },
            center: [0.5, 0.0, 0.0],
            color: [1.0, 0.0, 0.0],
            color_name: "red".into(),
        };
        assert!(prim.contains([0.5, 0.0, 0.1]));
        assert!(!prim.contains([0.0, 0.0, 0.0]));
        assert!((prim.reach() - 0.7).abs() < 1e-12);
    }
}

//! Procedural scenes: a class-labelled arrangement of 1–3 colored primitives
//! inside the unit sphere, readable both as an analytic radiance field (for
//! ground-truth rendering and NeRF fitting) and as attribute sets (for
//! annotation templates).

use super::camera::CameraPose;
use super::primitives::{Primitive, Shape};
use super::ScenegenError;
use crate::img::{GrayImage, Image};
use crate::nerf::{opacity_to_mask, render_image, Field, RenderConfig};
use crate::numerics::Rng64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Density inside any primitive (per unit length). High enough that one
/// primitive diameter is effectively opaque: e^{−50·0.5} ≈ 1e−11.
pub const SIGMA_MAX: f64 = 50.0;

/// The class vocabulary, in canonical order.
pub const CLASSES: [&str; 6] = ["sphere", "cube", "cylinder", "cone", "torus", "capsule"];

/// Named colors used by primitives; all far from the white background.
pub const COLORS: [(&str, [f64; 3]); 8] = [
    ("red", [0.85, 0.10, 0.10]),
    ("green", [0.10, 0.75, 0.15]),
    ("blue", [0.15, 0.20, 0.85]),
    ("yellow", [0.90, 0.85, 0.10]),
    ("purple", [0.55, 0.15, 0.80]),
    ("orange", [0.95, 0.55, 0.10]),
    ("cyan", [0.10, 0.75, 0.80]),
    ("magenta", [0.85, 0.15, 0.65]),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProceduralScene {
    pub id: String,
    pub class_label: String,
    pub primitives: Vec<Primitive>,
    /// Template inputs: "color" (dominant color name), "parts" (count),
    /// "size" (small/medium/large). Ordered map so serialization is stable.
    pub attributes: BTreeMap<String, String>,
}

impl ProceduralScene {
    /// Max over primitives of |center| + bounding radius.
    pub fn reach(&self) -> f64 {
        self.primitives
            .iter()
            .map(Primitive::reach)
            .fold(0.0, f64::max)
    }

    pub fn attr(&self, key: &str) -> &str {
        self.attributes.get(key).map(String::as_str).unwrap_or("")
    }
}

/// The analytic field: σ = SIGMA_MAX inside any primitive (else 0); color of
/// the nearest containing primitive by center distance, list order breaking
/// ties; white where nothing contains the point (the background there is
/// invisible anyway since σ = 0).
impl Field for ProceduralScene {
    fn query(&self, points: &[[f64; 3]], rgb: &mut Vec<[f64; 3]>, sigma: &mut Vec<f64>) {
        rgb.clear();
        sigma.clear();
        for &p in points {
            let mut best: Option<(f64, [f64; 3])> = None;
            for prim in &self.primitives {
                if prim.contains(p) {
                    let d2 = (0..3).map(|i| (p[i] - prim.center[i]).powi(2)).sum::<f64>();
                    // Strict less-than keeps the first primitive on ties.
                    if best.map_or(true, |(bd, _)| d2 < bd) {
                        best = Some((d2, prim.color));
                    }
                }
            }
            match best {
                Some((_, color)) => {
                    rgb.push(color);
                    sigma.push(SIGMA_MAX);
                }
                None => {
                    rgb.push([1.0, 1.0, 1.0]);
                    sigma.push(0.0);
                }
            }
        }
    }
}

fn size_word(bounding: f64) -> &'static str {
    if bounding < 0.45 {
        "small"
    } else if bounding < 0.58 {
        "medium"
    } else {
        "large"
    }
}

/// A shape of the given class with bounding radius ≈ `scale`.
fn shape_for(class: &str, scale: f64, rng: &mut Rng64) -> Shape {
    match class {
        "sphere" => Shape::Sphere { radius: scale },
        "cube" => Shape::Cube {
            half: scale / 3.0f64.sqrt(),
        },
        "cylinder" => {
            // Split the bound between radius and height, varying the aspect.
            let a = rng.range(0.5, 0.8);
            Shape::Cylinder {
                radius: scale * a,
                half_h: scale * (1.0 - a * a).sqrt(),
            }
        }
        "cone" => {
            let a = rng.range(0.55, 0.8);
            Shape::Cone {
                radius: scale * a,
                half_h: scale * (1.0 - a * a).sqrt(),
            }
        }
        "torus" => {
            let minor = scale * rng.range(0.18, 0.32);
            Shape::Torus {
                major: scale - minor,
                minor,
            }
        }
        "capsule" => {
            let radius = scale * rng.range(0.3, 0.45);
            Shape::Capsule {
                radius,
                half_l: scale - radius,
            }
        }
        other => unreachable!("shape_for called with unvalidated class {other}"),
    }
}

/// Draws a deterministic scene of `class_label`. Layout: one main primitive
/// near the origin plus 0–2 smaller same-class parts attached to it, colors
/// from the fixed palette, everything inside the unit sphere by construction.
pub fn sample_scene(
    rng: &mut Rng64,
    class_label: &str,
    id: String,
) -> Result<ProceduralScene, ScenegenError> {
    if !CLASSES.contains(&class_label) {
        return Err(ScenegenError::UnknownClass {
            class: class_label.to_string(),
        });
    }
    let mut rng = rng.derive("scene", &[]);
    let n_parts = 1 + rng.below(3);
    let main_scale = rng.range(0.38, 0.62);
    let main_center = [
        rng.range(-0.1, 0.1),
        rng.range(-0.1, 0.1),
        rng.range(-0.1, 0.1),
    ];
    let (main_color_name, main_color) = COLORS[rng.below(COLORS.len())];
    let mut primitives = vec![Primitive {
        shape: shape_for(class_label, main_scale, &mut rng),
        center: main_center,
        color: main_color,
        color_name: main_color_name.to_string(),
    }];
    for _ in 1..n_parts {
        let scale = rng.range(0.12, 0.2);
        // Attach to the main primitive: offset by most of its bounding radius
        // in a random direction, which keeps everything well inside the unit
        // sphere (|main center| + 0.9·main bound + part bound < 1).
        let theta = rng.range(0.0, 2.0 * std::f64::consts::PI);
        let z = rng.range(-1.0, 1.0);
        let planar = (1.0 - z * z).sqrt();
        let dir = [planar * theta.cos(), planar * theta.sin(), z];
        let dist = 0.9 * primitives[0].shape.bounding_radius();
        let center = [
            main_center[0] + dist * dir[0],
            main_center[1] + dist * dir[1],
            main_center[2] + dist * dir[2],
        ];
        let (color_name, color) = COLORS[rng.below(COLORS.len())];
        primitives.push(Primitive {
            shape: shape_for(class_label, scale, &mut rng),
            center,
            color,
            color_name: color_name.to_string(),
        });
    }
    let mut attributes = BTreeMap::new();
    attributes.insert("color".to_string(), main_color_name.to_string());
    attributes.insert("parts".to_string(), n_parts.to_string());
    attributes.insert(
        "size".to_string(),
        size_word(primitives[0].shape.bounding_radius()).to_string(),
    );
    let scene = ProceduralScene {
        id,
        class_label: class_label.to_string(),
        primitives,
        attributes,
    };
    debug_assert!(scene.reach() <= 1.0 + 1e-9);
    Ok(scene)
}

/// Ground-truth render: the shared volumetric quadrature applied to the
/// analytic field, with the alpha mask from opacity thresholded at 0.5.
/// Deterministic; callers pass midpoint (non-stratified) configs.
pub fn render_ground_truth(
    scene: &ProceduralScene,
    pose: &CameraPose,
    cfg: &RenderConfig,
) -> Result<(Image, GrayImage), ScenegenError> {
    let mut rng = Rng64::new(0);
    let (image, opacity) = render_image(scene, pose, cfg, &mut rng)?;
    Ok((image, opacity_to_mask(&opacity)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::sample_cameras;

    fn scene_rng(i: u64) -> Rng64 {
        Rng64::new(1234).derive("test-scene", &[i])
    }

    #[test]
    fn same_seed_same_scene() {
        let a = sample_scene(&mut scene_rng(3), "torus", "s3".into()).unwrap();
        let b = sample_scene(&mut scene_rng(3), "torus", "s3".into()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn class_matches_first_primitive() {
        for (i, class) in CLASSES.iter().enumerate() {
            let scene = sample_scene(&mut scene_rng(i as u64), class, format!("s{i}")).unwrap();
            assert_eq!(scene.primitives[0].shape.class_word(), *class);
            assert_eq!(scene.class_label, *class);
        }
    }

    #[test]
    fn thousand_scenes_fit_in_unit_sphere() {
        for i in 0..1000 {
            let class = CLASSES[(i % 6) as usize];
            let scene = sample_scene(&mut scene_rng(i), class, format!("s{i}")).unwrap();
            assert!(
                scene.reach() <= 1.0,
                "scene {} reach {}",
                i,
                scene.reach()
            );
            assert!(!scene.primitives.is_empty());
            for prim in &scene.primitives {
                for c in prim.color {
                    assert!((0.0..=1.0).contains(&c));
                }
            }
        }
    }

    #[test]
    fn unknown_class_is_an_error() {
        let err = sample_scene(&mut scene_rng(0), "pyramid", "x".into()).unwrap_err();
        assert!(err.to_string().contains("pyramid"));
    }

    #[test]
    fn field_rules() {
        let scene = ProceduralScene {
            id: "t".into(),
            class_label: "sphere".into(),
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere { radius: 0.3 },
                    center: [0.0, 0.0, 0.0],
                    color: [1.0, 0.0, 0.0],
                    color_name: "red".into(),
                },
                Primitive {
                    shape: Shape::Sphere { radius: 0.3 },
                    center: [0.4, 0.0, 0.0],
                    color: [0.0, 1.0, 0.0],
                    color_name: "green".into(),
                },
            ],
            attributes: BTreeMap::new(),
        };
        let mut rgb = Vec::new();
        let mut sigma = Vec::new();
        // Far outside: σ = 0. Center of first sphere: red at σ_max. A point
        // in the overlap nearer the second center: green. The exact midpoint
        // ties: first primitive wins.
        scene.query(
            &[
                [2.0, 0.0, 0.0],
                [0.0, 0.0, 0.0],
                [0.25, 0.0, 0.0],
                [0.2, 0.0, 0.0],
            ],
            &mut rgb,
            &mut sigma,
        );
        assert_eq!(sigma[0], 0.0);
        assert_eq!((rgb[1], sigma[1]), ([1.0, 0.0, 0.0], SIGMA_MAX));
        assert_eq!(rgb[2], [0.0, 1.0, 0.0]);
        assert_eq!(rgb[3], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn ground_truth_empty_scene_is_white_with_zero_mask() {
        let scene = ProceduralScene {
            id: "e".into(),
            class_label: "sphere".into(),
            primitives: vec![Primitive {
                // A far-away point-sized sphere nothing can hit.
                shape: Shape::Sphere { radius: 1e-12 },
                center: [0.0, 0.0, 0.0],
                color: [0.0, 0.0, 0.0],
                color_name: "red".into(),
            }],
            attributes: BTreeMap::new(),
        };
        let pose = &sample_cameras(4, 12, 12, 7.0, 2.5).unwrap()[0];
        let cfg = RenderConfig::for_pose(pose, 32, false);
        let (img, mask) = render_ground_truth(&scene, pose, &cfg).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                assert_eq!(img.get(x, y), [1.0, 1.0, 1.0]);
                assert_eq!(mask.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn centered_sphere_projects_to_a_disc_of_predicted_radius() {
        let scene = ProceduralScene {
            id: "d".into(),
            class_label: "sphere".into(),
            primitives: vec![Primitive {
                shape: Shape::Sphere { radius: 0.5 },
                center: [0.0, 0.0, 0.0],
                color: [0.85, 0.1, 0.1],
                color_name: "red".into(),
            }],
            attributes: BTreeMap::new(),
        };
        // Camera on the +z axis (the zenith view).
        let size = 65usize; // odd so a pixel center sits on the axis
        let focal = 40.0;
        let poses = sample_cameras(4, size, size, focal, 2.5).unwrap();
        let pose = &poses[2];
        assert_eq!(pose.position, [0.0, 0.0, 2.5]);
        let cfg = RenderConfig::for_pose(pose, 96, false);
        let (_, mask) = render_ground_truth(&scene, pose, &cfg).unwrap();

        // Pinhole projection: a ball of radius r at distance d subtends
        // an image disc of radius f·r/sqrt(d²−r²) pixels (the silhouette
        // cone is tangent, not central). Measure the mask's horizontal
        // radius through the center row.
        let expected = focal * 0.5 / (2.5f64.powi(2) - 0.25).sqrt();
        let cy = size / 2;
        let mut min_x = usize::MAX;
        let mut max_x = 0;
        for x in 0..size {
            if mask.is_fg(x, cy) {
                min_x = min_x.min(x);
                max_x = max_x.max(x);
            }
        }
        let measured = (max_x - min_x + 1) as f64 / 2.0;
        assert!(
            (measured - expected).abs() <= 1.0,
            "disc radius {} px, predicted {} px",
            measured,
            expected
        );
    }

    #[test]
    fn ground_truth_is_bit_deterministic() {
        let scene = sample_scene(&mut scene_rng(9), "cube", "s9".into()).unwrap();
        let pose = &sample_cameras(4, 16, 16, 9.0, 2.5).unwrap()[1];
        let cfg = RenderConfig::for_pose(pose, 32, false);
        let (a, am) = render_ground_truth(&scene, pose, &cfg).unwrap();
        let (b, bm) = render_ground_truth(&scene, pose, &cfg).unwrap();
        assert_eq!(a.to_ppm_bytes(), b.to_ppm_bytes());
        assert_eq!(am.to_pgm_bytes(), bm.to_pgm_bytes());
    }

    #[test]
    fn shared_quadrature_identity_with_render_image() {
        let scene = sample_scene(&mut scene_rng(10), "cone", "s10".into()).unwrap();
        let pose = &sample_cameras(4, 12, 12, 7.0, 2.5).unwrap()[0];
        let cfg = RenderConfig::for_pose(pose, 24, false);
        let (gt, _) = render_ground_truth(&scene, pose, &cfg).unwrap();
        let (direct, _) = render_image(&scene, pose, &cfg, &mut Rng64::new(0)).unwrap();
        assert_eq!(gt, direct);
    }
}

//! Dataset assembly: multi-view samples with annotations, the class-stratified
//! train/test split, and the JSON-lines manifest that downstream stages read.

use super::annotate::{generate_annotations, Annotations};
use super::camera::CameraPose;
use super::scene::{render_ground_truth, sample_scene, ProceduralScene};
use super::ScenegenError;
use crate::img::{GrayImage, Image};
use crate::nerf::RenderConfig;
use crate::numerics::Rng64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// 90/10 split, stratified per class: within each class the last ~10% of
/// sample indices are the test set (always at least one of each side once a
/// class has two samples).
pub fn split_for(index_in_class: usize, class_count: usize) -> Split {
    if class_count < 2 {
        return Split::Train;
    }
    let train_count = (class_count * 9 / 10).max(1);
    if index_in_class < train_count {
        Split::Train
    } else {
        Split::Test
    }
}

/// One fully materialized sample: the scene, its rendered views, and its
/// language annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample {
    pub scene: ProceduralScene,
    pub views: Vec<(CameraPose, Image, GrayImage)>,
    pub annotations: Annotations,
    pub split: Split,
}

/// Builds the sample for `scene_index`: draws a scene, renders every camera,
/// and annotates. A scene whose object is visible (mask nonempty) in fewer
/// than 90% of views is rejected and redrawn from a fresh stream; geometry
/// construction makes this nearly impossible, but the guard keeps the
/// downstream foreground/background loss well-defined.
pub fn build_sample(
    rng: &Rng64,
    scene_index: u64,
    class_label: &str,
    id: String,
    cameras: &[CameraPose],
    samples_per_ray: usize,
    split: Split,
) -> Result<DatasetSample, ScenegenError> {
    const MAX_ATTEMPTS: u64 = 16;
    for attempt in 0..MAX_ATTEMPTS {
        let mut scene_rng = rng.derive("sample", &[scene_index, attempt]);
        let scene = sample_scene(&mut scene_rng, class_label, id.clone())?;
        let mut views = Vec::with_capacity(cameras.len());
        let mut visible = 0usize;
        for pose in cameras {
            let cfg = RenderConfig::for_pose(pose, samples_per_ray, false);
            let (img, mask) = render_ground_truth(&scene, pose, &cfg)?;
            if mask.fg_count() > 0 {
                visible += 1;
            }
            views.push((pose.clone(), img, mask));
        }
        if visible * 10 >= cameras.len() * 9 {
            let annotations = generate_annotations(&scene, &mut scene_rng);
            return Ok(DatasetSample {
                scene,
                views,
                annotations,
                split,
            });
        }
    }
    Err(ScenegenError::InvisibleScene { id })
}

/// One manifest line. Camera intrinsics are a pipeline-level setting, so the
/// manifest stores only the per-view extrinsics (flattened 3×4 [R|t] rows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub class: String,
    pub nerf_path: String,
    pub views_dir: String,
    pub poses: Vec<Vec<f64>>,
    pub annotations: Annotations,
    pub split: Split,
}

impl ManifestRecord {
    pub fn from_sample(sample: &DatasetSample, nerf_path: String, views_dir: String) -> Self {
        ManifestRecord {
            id: sample.scene.id.clone(),
            class: sample.scene.class_label.clone(),
            nerf_path,
            views_dir,
            poses: sample
                .views
                .iter()
                .map(|(p, _, _)| p.to_rows().to_vec())
                .collect(),
            annotations: sample.annotations.clone(),
            split: sample.split,
        }
    }

    /// Reconstructs view `i`'s camera, supplying the intrinsics the manifest
    /// intentionally omits.
    pub fn pose_at(
        &self,
        i: usize,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<CameraPose, ScenegenError> {
        let rows = self.poses.get(i).ok_or_else(|| ScenegenError::Manifest {
            detail: format!("sample {} has no pose index {}", self.id, i),
        })?;
        CameraPose::from_rows(rows, width, height, focal)
    }
}

/// Writes records as JSON lines. Output is byte-deterministic: one compact
/// JSON object per line in record order, `\n` separators.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<(), ScenegenError> {
    let file = File::create(path).map_err(|e| ScenegenError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| ScenegenError::Manifest {
            detail: format!("serializing sample {}: {}", record.id, e),
        })?;
        writeln!(out, "{line}").map_err(|e| ScenegenError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    out.flush().map_err(|e| ScenegenError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, ScenegenError> {
    let file = File::open(path).map_err(|e| ScenegenError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ScenegenError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| ScenegenError::Manifest {
            detail: format!("{}:{}: {}", path.display(), lineno + 1, e),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::sample_cameras;

    #[test]
    fn split_matches_ninety_ten() {
        let counts = |n: usize| {
            let mut train = 0;
            let mut test = 0;
            for i in 0..n {
                match split_for(i, n) {
                    Split::Train => train += 1,
                    Split::Test => test += 1,
                }
            }
            (train, test)
        };
        assert_eq!(counts(50), (45, 5));
        assert_eq!(counts(10), (9, 1));
        assert_eq!(counts(2), (1, 1));
        assert_eq!(counts(1), (1, 0));
        // Train indices always precede test indices.
        assert_eq!(split_for(44, 50), Split::Train);
        assert_eq!(split_for(45, 50), Split::Test);
    }

    fn tiny_sample() -> DatasetSample {
        let cameras = sample_cameras(4, 16, 16, 9.0, 2.5).unwrap();
        build_sample(
            &Rng64::new(42),
            7,
            "sphere",
            "sphere-007".into(),
            &cameras,
            16,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn build_sample_renders_every_view_and_is_deterministic() {
        let a = tiny_sample();
        assert_eq!(a.views.len(), 4);
        for (_, _, mask) in &a.views {
            assert!(mask.fg_count() > 0, "object invisible in a view");
        }
        assert!(!a.annotations.brief.is_empty());
        let b = tiny_sample();
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_roundtrip_and_field_names() {
        let sample = tiny_sample();
        let record = ManifestRecord::from_sample(
            &sample,
            "nerfs/sphere-007.nrf".into(),
            "data/views/sphere-007".into(),
        );
        assert_eq!(record.poses.len(), 4);
        assert!(record.poses.iter().all(|p| p.len() == 12));

        let line = serde_json::to_string(&record).unwrap();
        for key in [
            "\"id\"",
            "\"class\"",
            "\"nerf_path\"",
            "\"views_dir\"",
            "\"poses\"",
            "\"annotations\"",
            "\"brief\"",
            "\"detailed\"",
            "\"qa\"",
            "\"q\"",
            "\"a\"",
            "\"split\"",
        ] {
            assert!(line.contains(key), "serialized record misses {key}");
        }
        assert!(line.contains("\"split\":\"train\""));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        write_manifest(&path, std::slice::from_ref(&record)).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, vec![record.clone()]);

        // Byte-identical on rewrite.
        let bytes_a = std::fs::read(&path).unwrap();
        write_manifest(&path, std::slice::from_ref(&record)).unwrap();
        assert_eq!(bytes_a, std::fs::read(&path).unwrap());
    }

    #[test]
    fn pose_roundtrip_through_manifest() {
        let sample = tiny_sample();
        let record = ManifestRecord::from_sample(&sample, "n".into(), "v".into());
        let pose = record.pose_at(2, 9.0, 16, 16).unwrap();
        let original = &sample.views[2].0;
        assert_eq!(pose.rotation, original.rotation);
        assert_eq!(pose.position, original.position);
        assert!(record.pose_at(99, 9.0, 16, 16).is_err());
    }

    #[test]
    fn malformed_manifest_line_is_reported_with_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\": \"x\"\n").unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(err.to_string().contains(":1:"), "error was {err}");
    }
}

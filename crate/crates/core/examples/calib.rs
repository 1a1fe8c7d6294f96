//! Scratch calibration: time desk-scale NeRF fits on real procedural scenes.

use nerfchat_core::nerf::{train_nerf, NerfMlp, RenderConfig, TrainConfig};
use nerfchat_core::numerics::Rng64;
use nerfchat_core::scenegen::{render_ground_truth, sample_cameras, sample_scene, CLASSES};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let ray_batch: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(128);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(5e-3);
    let n_scenes: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(3);
    let train_samples: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(64);
    let fg_fraction: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.9);
    let decay_after: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0);
    let lr_final: Option<f64> = args.get(8).map(|s| s.parse().unwrap());
    let anneal_steps: usize = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(0);

    let root = Rng64::new(2024);
    let cameras = sample_cameras(16, 64, 64, 0.55 * 64.0, 2.5).unwrap();
    let init_rng = &mut root.derive("nerf-init", &[]);
    let init = NerfMlp::init(3, 64, init_rng);

    for si in 0..n_scenes {
        let class = CLASSES[(si % 6) as usize];
        let mut srng = root.derive("scene", &[si]);
        let scene = sample_scene(&mut srng, class, format!("{class}-{si}")).unwrap();
        let t0 = Instant::now();
        let views: Vec<_> = cameras
            .iter()
            .map(|pose| {
                let cfg = RenderConfig::for_pose(pose, 64, false);
                let (img, mask) = render_ground_truth(&scene, pose, &cfg).unwrap();
                (pose.clone(), img, mask)
            })
            .collect();
        let render_t = t0.elapsed().as_secs_f64();

        let cfg = TrainConfig {
            steps,
            ray_batch,
            lr,
            train_samples,
            fg_fraction,
            eval_samples: 64,
            eval_interval: 50,
            eval_rays: 512,
            psnr_target: 25.5,
            holdout: 2,
            decay_after,
            lr_final,
            anneal_steps,
            ..TrainConfig::default()
        };
        let mut trng = root.derive("train", &[si]);
        let t1 = Instant::now();
        let out = train_nerf(&views, &init, &cfg, &mut trng).unwrap();
        let train_t = t1.elapsed().as_secs_f64();
        let tail: Vec<_> = out
            .psnr_log
            .iter()
            .filter(|(s, _)| s % 200 == 0 || *s == out.steps_run)
            .map(|(s, p)| format!("{}:{:.2}", s, p))
            .collect();
        println!(
            "{class}-{si}: parts={} render {:.1}s, train {:.1}s ({} steps, {:.1} ms/step), final {:.2} dB, tail [{}]",
            scene.primitives.len(),
            render_t,
            train_t,
            out.steps_run,
            1000.0 * train_t / out.steps_run.max(1) as f64,
            out.final_psnr,
            tail.join(" ")
        );
        if std::env::var("CALIB_DUMP").is_ok() {
            let (pose, gt, _) = &views[views.len() - 2];
            let rcfg = RenderConfig::for_pose(pose, 64, false);
            let mut rr = Rng64::new(0);
            let (fit, _) =
                nerfchat_core::nerf::render_image(&out.nerf, pose, &rcfg, &mut rr).unwrap();
            gt.write_ppm(std::path::Path::new(&format!("/tmp/calib_{class}-{si}_gt.ppm")))
                .unwrap();
            fit.write_ppm(std::path::Path::new(&format!("/tmp/calib_{class}-{si}_fit.ppm")))
                .unwrap();
        }
    }
}

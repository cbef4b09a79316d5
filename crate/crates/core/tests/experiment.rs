//! Manual pilot for the direction tests (ignored; run with --ignored).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparseview_core::correspondence::{
    aggregate_stacks, synthetic_match, MatchGenConfig, MatchStack,
};
use sparseview_core::encoding::EncodingConfig;
use sparseview_core::field::FieldConfig;
use sparseview_core::metrics::evaluate;
use sparseview_core::scene::{preset, Scene};
use sparseview_core::trainer::{train, TrainConfig};
use std::time::Instant;

fn acceptance_config(seed: u64) -> TrainConfig {
    TrainConfig {
        total_steps: 5000,
        lr_init: 2e-2,
        lr_final: 2e-4,
        batch_rays: 176,
        n_pair_rays: 24,
        n_samples: 36,
        t_freq_end: Some(3500),
        near: Some(1.2),
        far: Some(4.2),
        seed,
        field: FieldConfig {
            encoding: EncodingConfig {
                l_pos: 5,
                l_dir: 4,
                include_identity: true,
                ..Default::default()
            },
            hidden_layers: 2,
            hidden_width: 24,
            skip_layer: None,
            color_hidden_width: 12,
            init_seed: seed,
        },
        ..Default::default()
    }
}

fn stacks_for(scene: &Scene, outlier_rate: f64, seed: u64) -> Vec<MatchStack> {
    stacks_with(scene, outlier_rate, seed)
}

fn stacks_with(scene: &Scene, outlier_rate: f64, seed: u64) -> Vec<MatchStack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (per_pair, _) = synthetic_match(
        scene,
        &scene.train_camera_indices(),
        &MatchGenConfig {
            outlier_rate,
            max_keypoints: Some(300),
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    scene
        .train_camera_indices()
        .iter()
        .filter_map(|&ci| {
            let per: Vec<MatchStack> = per_pair
                .iter()
                .filter(|s| s.target_image == ci)
                .cloned()
                .collect();
            (!per.is_empty()).then(|| aggregate_stacks(&per).unwrap())
        })
        .collect()
}

#[test]
#[ignore]
fn pilot_geo_direction() {
    let scene = preset("wall-and-post", 64).unwrap();
    let stacks = stacks_for(&scene, 0.0, 99);
    let test_cams = scene.test_camera_indices();
    for seed in [0u64, 1, 2, 3, 4] {
        for no_geo in [false, true] {
            let mut cfg = acceptance_config(seed);
            if no_geo {
                cfg.lambda_geo = 0.0;
            }
            let t0 = Instant::now();
            let run = train(&scene, &stacks, &cfg, None, None).unwrap();
            let rep = evaluate(&run.params, &cfg, cfg.total_steps, &scene, &test_cams, 90.0)
                .unwrap();
            println!(
                "geo pilot seed {seed} no_geo={no_geo}: {:.1?}  psnr {:.2}  ssim {:.3}  mae {:.4}  kp-mae {:.4}  pairs~{}",
                t0.elapsed(),
                rep.mean_psnr,
                rep.mean_ssim,
                rep.mean_depth_mae.unwrap_or(f64::NAN),
                rep.mean_depth_mae_keypoints.unwrap_or(f64::NAN),
                run.history.last().unwrap().num_pairs_kept,
            );
        }
    }
}

#[test]
#[ignore]
fn pilot_filter_direction() {
    let scene = preset("wall-and-post", 64).unwrap();
    let stacks = stacks_for_outliers(&scene, 0.2, 99);
    let test_cams = scene.test_camera_indices();
    for seed in [0u64, 1, 2, 3, 4] {
        for no_filter in [false, true] {
            let mut cfg = acceptance_config(seed);
            cfg.filter = !no_filter;
            let t0 = Instant::now();
            let run = train(&scene, &stacks, &cfg, None, None).unwrap();
            let rep = evaluate(&run.params, &cfg, cfg.total_steps, &scene, &test_cams, 90.0)
                .unwrap();
            println!(
                "filter pilot seed {seed} no_filter={no_filter}: {:.1?}  psnr {:.2}  ssim {:.3}  mae {:.4}  kp-mae {:.4}  pairs~{}",
                t0.elapsed(),
                rep.mean_psnr,
                rep.mean_ssim,
                rep.mean_depth_mae.unwrap_or(f64::NAN),
                rep.mean_depth_mae_keypoints.unwrap_or(f64::NAN),
                run.history.last().unwrap().num_pairs_kept,
            );
        }
    }
}

fn stacks_for_outliers(scene: &Scene, outlier_rate: f64, seed: u64) -> Vec<MatchStack> {
    stacks_with(scene, outlier_rate, seed)
}

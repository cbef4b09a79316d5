//! Diagnostic pilot (ignored): loss trace, train-view PSNR, density profile.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparseview_core::correspondence::{
    aggregate_stacks, synthetic_match, MatchGenConfig, MatchStack,
};
use sparseview_core::encoding::EncodingConfig;
use sparseview_core::field::{field_eval, FieldConfig};
use sparseview_core::geometry::{generate_ray, point_at};
use sparseview_core::metrics::evaluate;
use sparseview_core::scene::{preset, Scene};
use sparseview_core::trainer::{train, TrainConfig};

fn cfg_for(seed: u64, steps: usize) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        lr_init: 2e-2,
        lr_final: 2e-4,
        batch_rays: 192,
        n_pair_rays: 50,
        n_samples: 40,
        t_freq_end: Some(steps * 7 / 10),
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

fn stacks_for(scene: &Scene, seed: u64) -> Vec<MatchStack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (per_pair, _) = synthetic_match(
        scene,
        &scene.train_camera_indices(),
        &MatchGenConfig {
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
fn diag_loss_trace() {
    let scene = preset("wall-and-post", 64).unwrap();
    let stacks = stacks_for(&scene, 99);
    let cfg = cfg_for(0, 5000);
    let run = train(&scene, &stacks, &cfg, None, None).unwrap();
    for s in run.history.iter().step_by(500) {
        println!(
            "step {:4}: color {:.5} geo {:.5} occ {:.5} lr {:.5e}",
            s.step, s.loss.color_loss, s.loss.geo_loss, s.loss.occ_loss, s.lr
        );
    }
    let last = run.history.last().unwrap();
    println!(
        "final: color {:.5} geo {:.5} occ {:.5}",
        last.loss.color_loss, last.loss.geo_loss, last.loss.occ_loss
    );

    // Train-view vs test-view quality.
    let train_rep = evaluate(
        &run.params,
        &cfg,
        cfg.total_steps,
        &scene,
        &scene.train_camera_indices(),
        90.0,
    )
    .unwrap();
    let test_rep = evaluate(
        &run.params,
        &cfg,
        cfg.total_steps,
        &scene,
        &scene.test_camera_indices(),
        90.0,
    )
    .unwrap();
    println!(
        "train psnr {:.2} ssim {:.3} | test psnr {:.2} ssim {:.3}",
        train_rep.mean_psnr, train_rep.mean_ssim, test_rep.mean_psnr, test_rep.mean_ssim
    );

    // Density profile along the central ray of the first train camera:
    // expect a spike where the post (t ~ 2) or wall (t ~ 3) sits.
    let cam = &scene.cameras[scene.train_camera_indices()[0]];
    let ray = generate_ray(&cam.intrinsics, &cam.pose, (32.0, 32.0)).unwrap();
    print!("sigma along center ray:");
    for i in 0..20 {
        let t = 0.8 + (4.5 - 0.8) * (i as f64 + 0.5) / 20.0;
        let out = field_eval(
            &run.params,
            point_at(&ray, t),
            ray.direction,
            cfg.total_steps,
            cfg.total_steps,
        )
        .unwrap();
        print!(" {:.1}", out.sigma);
    }
    println!();
    print!("oracle sigma:          ");
    for i in 0..20 {
        let t = 0.8 + (4.5 - 0.8) * (i as f64 + 0.5) / 20.0;
        print!(" {:.1}", scene.density(point_at(&ray, t)));
    }
    println!();
}

//! Command-line driver: scene generation, synthetic matching, training,
//! rendering, evaluation, and the ray-threshold ablation sweep.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparseview_core::checkpoint::load_checkpoint;
use sparseview_core::correspondence::{
    load_correspondences, save_correspondences, save_labels, synthetic_match, MatchGenConfig,
    MatchStack,
};
use sparseview_core::metrics::evaluate;
use sparseview_core::renderer::render_view;
use sparseview_core::scene::{oracle_render, preset, Scene, PRESET_NAMES};
use sparseview_core::trainer::{train, TrainConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "sparseview",
    about = "Few-shot neural radiance fields with sparse geometric consistency",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a preset scene config plus oracle views and depth maps.
    MakeScene {
        /// Preset name: two-spheres, boxes-grid, or wall-and-post.
        #[arg(long)]
        preset: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Square image size in pixels.
        #[arg(long, default_value_t = 64)]
        size: u32,
    },
    /// Run the synthetic matcher over the scene's training views.
    Match {
        #[arg(long)]
        scene: PathBuf,
        /// Gaussian pixel noise added to reference pixels.
        #[arg(long, default_value_t = 0.0)]
        noise_px: f64,
        /// Fraction of keypoints replaced by random outliers.
        #[arg(long, default_value_t = 0.0)]
        outlier_rate: f64,
        /// Laplacian-magnitude percentile for keypoint selection.
        #[arg(long, default_value_t = 90.0)]
        percentile: f64,
        /// Cap on keypoints per target view.
        #[arg(long)]
        max_keypoints: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output correspondence file; a .labels sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the radiance field on a scene.
    Train(TrainArgs),
    /// Render a novel view (PNG plus a .depth dump) from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Camera index into the scene config.
        #[arg(long)]
        camera: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the scene's held-out views.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keypoint percentile for the keypoint depth metric.
        #[arg(long, default_value_t = 90.0)]
        percentile: f64,
    },
    /// Sweep the ray-consistency threshold: train and evaluate per value.
    AblateTau {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        matches: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated threshold values in scene units.
        #[arg(long, value_delimiter = ',')]
        taus: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-tau training outputs (default: next to the CSV).
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Correspondence file from `match`; omit to train purely photometric.
    #[arg(long)]
    matches: Option<PathBuf>,
    /// TOML training config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Resume from a checkpoint written by a previous run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the geometry regularization term (lambda_geo = 0).
    #[arg(long)]
    no_geo: bool,
    /// Disable frequency regularization (mask always fully open).
    #[arg(long)]
    no_freq: bool,
    /// Disable the occlusion regularization term (lambda_occ = 0).
    #[arg(long)]
    no_occ: bool,
    /// Disable the geometry-consistent ray filter.
    #[arg(long)]
    no_filter: bool,
}

fn scene_from_dir(dir: &Path) -> Result<Scene> {
    let path = dir.join("scene.toml");
    Scene::load(&path).with_context(|| format!("loading scene {}", path.display()))
}

fn load_stacks(scene: &Scene, path: &Path) -> Result<Vec<MatchStack>> {
    let stacks = load_correspondences(path, &scene.image_dims())
        .with_context(|| format!("loading correspondences {}", path.display()))?;
    Ok(stacks)
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let scene = scene_from_dir(&args.scene)?;
    let mut cfg = match &args.config {
        Some(path) => {
            TrainConfig::load(path).with_context(|| format!("config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_geo {
        cfg.lambda_geo = 0.0;
    }
    if args.no_occ {
        cfg.lambda_occ = 0.0;
    }
    if args.no_freq {
        cfg.freq_reg = false;
    }
    if args.no_filter {
        cfg.filter = false;
    }
    let stacks = match &args.matches {
        Some(path) => load_stacks(&scene, path)?,
        None => Vec::new(),
    };
    let run = train(&scene, &stacks, &cfg, Some(&args.out), args.resume.as_deref())?;
    if let Some(stats) = run.history.last() {
        println!(
            "trained {} steps: total loss {:.6} (color {:.6}, geo {:.6}, occ {:.6})",
            cfg.total_steps, stats.loss.total, stats.loss.color_loss, stats.loss.geo_loss,
            stats.loss.occ_loss
        );
    }
    if let Some(ck) = &run.final_checkpoint {
        println!("checkpoint: {}", ck.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeScene { preset: name, out, size } => {
            let scene = preset(&name, size).with_context(|| {
                format!("known presets: {}", PRESET_NAMES.join(", "))
            })?;
            std::fs::create_dir_all(&out)?;
            scene.save(&out.join("scene.toml"))?;
            for ci in 0..scene.cameras.len() {
                let view = oracle_render(&scene, ci, scene.oracle_n_quad)?;
                view.image.save_png(&out.join(format!("view_{ci:03}.png")))?;
                view.depth.save(&out.join(format!("view_{ci:03}.depth")))?;
            }
            println!(
                "wrote scene '{name}' with {} cameras to {}",
                scene.cameras.len(),
                out.display()
            );
        }
        Command::Match {
            scene,
            noise_px,
            outlier_rate,
            percentile,
            max_keypoints,
            seed,
            out,
        } => {
            let scene = scene_from_dir(&scene)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gen = MatchGenConfig {
                keypoint_percentile: percentile,
                noise_px,
                outlier_rate,
                max_keypoints,
            };
            let (stacks, labels) =
                synthetic_match(&scene, &scene.train_camera_indices(), &gen, &mut rng)?;
            save_correspondences(&out, &stacks)?;
            let labels_path = out.with_extension("labels");
            save_labels(&labels_path, &labels)?;
            let records: usize = stacks.iter().map(|s| s.len()).sum();
            println!(
                "matched {} keypoints ({} records) across {} view pairs; labels at {}",
                labels.len(),
                records,
                stacks.len(),
                labels_path.display()
            );
        }
        Command::Train(args) => run_train(&args)?,
        Command::Render {
            checkpoint,
            scene,
            camera,
            out,
        } => {
            let scene = scene_from_dir(&scene)?;
            let ck = load_checkpoint(&checkpoint)?;
            if camera >= scene.cameras.len() {
                bail!(
                    "camera {camera} out of range (scene has {})",
                    scene.cameras.len()
                );
            }
            let cam = &scene.cameras[camera];
            let cfg = &ck.config;
            let (near, far) = cfg.resolved_bounds(&scene);
            let mask = cfg.mask_weights_at(ck.step, &cfg.field.encoding);
            let (image, depth) = render_view(
                &ck.params,
                &cam.intrinsics,
                &cam.pose,
                near,
                far,
                cfg.n_samples,
                &mask,
            )?;
            image.save_png(&out)?;
            let depth_path = out.with_extension("depth");
            depth.save(&depth_path)?;
            println!("wrote {} and {}", out.display(), depth_path.display());
        }
        Command::Eval {
            checkpoint,
            scene,
            out,
            percentile,
        } => {
            let scene = scene_from_dir(&scene)?;
            let ck = load_checkpoint(&checkpoint)?;
            let report = evaluate(
                &ck.params,
                &ck.config,
                ck.step,
                &scene,
                &scene.test_camera_indices(),
                percentile,
            )?;
            report.save_csv(&out)?;
            println!(
                "psnr {:.2} dB  ssim {:.4}  depth-mae {:.5}  keypoint depth-mae {:.5} -> {}",
                report.mean_psnr,
                report.mean_ssim,
                report.mean_depth_mae.unwrap_or(f64::NAN),
                report.mean_depth_mae_keypoints.unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::AblateTau {
            scene,
            matches,
            config,
            taus,
            out,
            work_dir,
        } => {
            if taus.is_empty() {
                bail!("need at least one tau value");
            }
            let scene = scene_from_dir(&scene)?;
            let base_cfg = match &config {
                Some(path) => TrainConfig::load(path)?,
                None => TrainConfig::default(),
            };
            let stacks = load_stacks(&scene, &matches)?;
            let work = work_dir.unwrap_or_else(|| {
                out.parent().unwrap_or(Path::new(".")).join("ablate_tau_work")
            });
            let mut csv = String::from("tau,psnr,ssim,depth_mae,depth_mae_keypoints\n");
            for &tau in &taus {
                let mut cfg = base_cfg.clone();
                cfg.tau_ray = Some(tau);
                let run_dir = work.join(format!("tau_{tau}"));
                let run = train(&scene, &stacks, &cfg, Some(&run_dir), None)?;
                let report = evaluate(
                    &run.params,
                    &cfg,
                    cfg.total_steps,
                    &scene,
                    &scene.test_camera_indices(),
                    90.0,
                )?;
                println!(
                    "tau {tau}: psnr {:.2}  ssim {:.4}  kp-mae {:.5}",
                    report.mean_psnr,
                    report.mean_ssim,
                    report.mean_depth_mae_keypoints.unwrap_or(f64::NAN)
                );
                writeln!(
                    csv,
                    "{tau},{},{},{},{}",
                    report.mean_psnr,
                    report.mean_ssim,
                    report
                        .mean_depth_mae
                        .map_or("nan".into(), |v| v.to_string()),
                    report
                        .mean_depth_mae_keypoints
                        .map_or("nan".into(), |v| v.to_string())
                )
                .expect("string write");
            }
            std::fs::write(&out, csv)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

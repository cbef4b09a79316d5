//! The training loop: Adam with warmup + exponential decay, two-stage
//! gradient clipping, the mixed pair/photometric ray sampling strategy, and
//! deterministic checkpointed optimization of the radiance field.

use crate::checkpoint::{config_hash, load_checkpoint, save_checkpoint};
use crate::correspondence::{filter_pairs, sample_pairs, MatchStack, PixelKey};
use crate::encoding::{mask_entry_weights, EncodingConfig};
use crate::error::{Error, Result};
use crate::field::{
    backward_encoded, encode_directions, encode_positions, forward_encoded, FieldConfig,
    FieldParams, FieldTape, MlpWeights,
};
use crate::geometry::{generate_ray, point_at, Ray, Vec3};
use crate::io::ImageRgb;
use crate::losses::{
    color_loss, color_loss_backward, geometry_loss, geometry_loss_backward, occlusion_loss,
    total_loss, LossBreakdown,
};
use crate::renderer::{compose_weights, render_backward_ray, stratified_sample, SampleSet};
use crate::scene::{oracle_render, Scene};
use crate::tensor::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Rays per parallel work chunk, expressed in samples.
const CHUNK_SAMPLES: usize = 3072;

fn default_true() -> bool {
    true
}

/// Full training configuration. Config-file keys mirror these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub warmup_steps: usize,
    pub warmup_mult: f64,
    pub clip_value: f64,
    pub clip_norm: f64,
    pub batch_rays: usize,
    /// Correspondence pairs sampled per step (n_t = n_ref).
    pub n_pair_rays: usize,
    pub lambda_geo: f64,
    pub lambda_occ: f64,
    /// Ray-consistency threshold in scene units; absent means
    /// `0.01 * scene diameter`.
    pub tau_ray: Option<f64>,
    /// Frequency-mask horizon; absent means `total_steps`.
    pub t_freq_end: Option<usize>,
    pub seed: u64,
    pub n_samples: usize,
    /// Near/far bounds; absent means the scene's declared bounds.
    pub near: Option<f64>,
    pub far: Option<f64>,
    /// Ablation toggles.
    #[serde(default = "default_true")]
    pub freq_reg: bool,
    #[serde(default = "default_true")]
    pub filter: bool,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub field: FieldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 5000,
            lr_init: 2e-3,
            lr_final: 2e-5,
            warmup_steps: 512,
            warmup_mult: 0.01,
            clip_value: 0.1,
            clip_norm: 0.1,
            batch_rays: 1024,
            n_pair_rays: 50,
            lambda_geo: 0.005,
            lambda_occ: 0.01,
            tau_ray: None,
            t_freq_end: None,
            seed: 0,
            n_samples: 128,
            near: None,
            far: None,
            freq_reg: true,
            filter: true,
            checkpoint_every: 0,
            field: FieldConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init >= self.lr_final && self.lr_final > 0.0) {
            return Err(Error::Config(format!(
                "learning rates must satisfy lr_init >= lr_final > 0 ({} vs {})",
                self.lr_init, self.lr_final
            )));
        }
        if self.batch_rays < 2 * self.n_pair_rays {
            return Err(Error::Config(format!(
                "batch_rays {} must cover 2 * n_pair_rays {}",
                self.batch_rays, self.n_pair_rays
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if !(self.clip_value > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("clip thresholds must be positive".into()));
        }
        if let Some(t) = self.tau_ray {
            if t <= 0.0 {
                return Err(Error::Config("tau_ray must be positive".into()));
            }
        }
        if let Some(end) = self.t_freq_end {
            if end > self.total_steps {
                return Err(Error::Config(format!(
                    "t_freq_end {end} exceeds total_steps {}",
                    self.total_steps
                )));
            }
        }
        self.field.validate()
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TrainConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("train config serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn resolved_tau(&self, scene: &Scene) -> f64 {
        self.tau_ray.unwrap_or(0.01 * scene.diameter)
    }

    pub fn resolved_bounds(&self, scene: &Scene) -> (f64, f64) {
        (
            self.near.unwrap_or(scene.near),
            self.far.unwrap_or(scene.far),
        )
    }

    pub fn t_freq_horizon(&self) -> usize {
        self.t_freq_end.unwrap_or(self.total_steps)
    }

    /// Flattened encoding-entry mask weights in effect at `step`.
    pub fn mask_weights_at(&self, step: usize, enc: &EncodingConfig) -> Vec<f64> {
        let horizon = self.t_freq_horizon();
        if !self.freq_reg || horizon == 0 {
            return vec![1.0; 6 * enc.l_pos];
        }
        mask_entry_weights(step.min(horizon), horizon, enc)
    }

    /// Occlusion-penalty window: the first `ceil(0.1 * n_samples)` samples.
    pub fn k_occ(&self) -> usize {
        ((self.n_samples as f64) * 0.1).ceil() as usize
    }
}

/// Learning rate at `step`: exponential decay from `lr_init` to `lr_final`
/// multiplied by a linear warmup ramp from `warmup_mult` to 1.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    assert!(cfg.total_steps >= 1, "schedule needs at least one step");
    assert!(step <= cfg.total_steps, "step beyond schedule");
    let frac = step as f64 / cfg.total_steps as f64;
    let base = cfg.lr_init * (cfg.lr_final / cfg.lr_init).powf(frac);
    let warm = if cfg.warmup_steps == 0 {
        1.0
    } else {
        let ramp = (step as f64 / cfg.warmup_steps as f64).min(1.0);
        cfg.warmup_mult + (1.0 - cfg.warmup_mult) * ramp
    };
    base * warm
}

/// Two-stage clipping: per-component clamp to `[-clip_value, clip_value]`,
/// then a global rescale when the L2 norm exceeds `clip_norm`.
pub fn clip_gradients(grads: &mut MlpWeights, clip_value: f64, clip_norm: f64) {
    let mut sq_sum = 0.0;
    for (_, s) in grads.named_slices_mut() {
        for g in s.iter_mut() {
            *g = g.clamp(-clip_value, clip_value);
            sq_sum += *g * *g;
        }
    }
    let norm = sq_sum.sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for (_, s) in grads.named_slices_mut() {
            for g in s.iter_mut() {
                *g *= scale;
            }
        }
    }
}

/// First/second moment accumulators plus the shared step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: MlpWeights,
    pub v: MlpWeights,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(weights: &MlpWeights) -> Self {
        OptimizerState {
            m: weights.zeros_like(),
            v: weights.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    weights: &mut MlpWeights,
    grads: &MlpWeights,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    let mut slices = weights.named_slices_mut();
    let mut m_slices = state.m.named_slices_mut();
    let mut v_slices = state.v.named_slices_mut();
    let g_slices = grads.named_slices();
    for i in 0..slices.len() {
        let (name, w) = &mut slices[i];
        let m = &mut m_slices[i].1;
        let v = &mut v_slices[i].1;
        let g = &g_slices[i].1;
        for j in 0..w.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            let next = w[j] - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            if !next.is_finite() {
                return Err(Error::NonFinite {
                    context: "adam update".into(),
                    detail: format!(
                        "{name}[{j}]: w={} g={} m={} v={} at optimizer step {t}",
                        w[j], g[j], m[j], v[j]
                    ),
                });
            }
            w[j] = next;
        }
    }
    Ok(())
}

/// One training view: camera index plus its ground-truth image and the
/// photometric pixel pool (keypoint pixels excluded).
pub struct TrainView {
    pub camera_index: usize,
    pub image: ImageRgb,
    photometric_pool: Vec<(u32, u32)>,
}

impl TrainView {
    pub fn new(camera_index: usize, image: ImageRgb, stack: &MatchStack) -> Self {
        let mut pool = Vec::with_capacity((image.width * image.height) as usize);
        for y in 0..image.height {
            for x in 0..image.width {
                let key = PixelKey::of((x as f64, y as f64));
                if !stack.records.contains_key(&key) {
                    pool.push((x, y));
                }
            }
        }
        TrainView {
            camera_index,
            image,
            photometric_pool: pool,
        }
    }
}

/// A frozen per-step batch: rays, their ground-truth colors, predetermined
/// sample positions, the pair structure, and the active frequency mask.
/// The loss over a frozen batch is a pure function of the field parameters.
pub struct TrainBatch {
    pub rays: Vec<Ray>,
    pub gt_colors: Vec<Vec3>,
    pub samples: Vec<SampleSet>,
    /// (target ray index, reference ray index) per retained pair.
    pub pairs: Vec<(usize, usize)>,
    pub pair_confidence: Vec<f64>,
    pub mask_weights: Vec<f64>,
    pub k_occ: usize,
    pub num_pairs_sampled: usize,
    pub num_pairs_kept: usize,
}

/// Assemble the step batch: sample pairs from the target stack, filter them,
/// then fill the remaining ray budget with photometric rays from
/// correspondence-free pixels. The RNG draw order is fixed.
#[allow(clippy::too_many_arguments)]
pub fn build_train_batch(
    views: &[TrainView],
    stacks: &[MatchStack],
    scene: &Scene,
    cfg: &TrainConfig,
    tau: f64,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainBatch> {
    let cameras = scene.camera_pairs();
    let (near, far) = cfg.resolved_bounds(scene);
    let vi = rng.gen_range(0..views.len());
    let view = &views[vi];
    let cam = &cameras[view.camera_index];

    let sampled = sample_pairs(&stacks[vi], cfg.n_pair_rays, &cameras, rng)?;
    let num_pairs_sampled = sampled.len();
    let retained = if cfg.filter {
        filter_pairs(&sampled, tau)
    } else {
        sampled
    };
    let k = retained.len();

    let photo_count = cfg.batch_rays - 2 * k;
    if photo_count > view.photometric_pool.len() {
        return Err(Error::Config(format!(
            "batch needs {photo_count} photometric rays but the pool has {}",
            view.photometric_pool.len()
        )));
    }

    let n_rays = 2 * k + photo_count;
    let mut rays = Vec::with_capacity(n_rays);
    let mut gt_colors = Vec::with_capacity(n_rays);

    // Layout: pair target rays, pair reference rays, photometric rays.
    for i in 0..k {
        rays.push(retained.target_rays[i]);
        let (u, v) = retained.target_pixels[i];
        gt_colors.push(view.image.sample_bilinear(u, v));
    }
    for i in 0..k {
        rays.push(retained.ref_rays[i]);
        let (u, v) = retained.ref_pixels[i];
        let ref_view = views
            .iter()
            .find(|tv| tv.camera_index == retained.ref_images[i])
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "reference image {} is not a training view",
                    retained.ref_images[i]
                ))
            })?;
        gt_colors.push(ref_view.image.sample_bilinear(u, v));
    }
    let chosen = rand::seq::index::sample(rng, view.photometric_pool.len(), photo_count);
    for idx in chosen.iter() {
        let (x, y) = view.photometric_pool[idx];
        rays.push(generate_ray(&cam.0, &cam.1, (x as f64, y as f64))?);
        gt_colors.push(view.image.get(x, y));
    }

    let samples: Vec<SampleSet> = (0..n_rays)
        .map(|_| stratified_sample(near, far, cfg.n_samples, rng))
        .collect::<Result<_>>()?;

    Ok(TrainBatch {
        rays,
        gt_colors,
        samples,
        pairs: (0..k).map(|i| (i, k + i)).collect(),
        pair_confidence: retained.confidences.clone(),
        mask_weights: cfg.mask_weights_at(step, &cfg.field.encoding),
        k_occ: cfg.k_occ().min(cfg.n_samples),
        num_pairs_sampled,
        num_pairs_kept: k,
    })
}

/// Per-sample field outputs for a frozen batch plus per-ray composites and
/// the recorded per-chunk tapes for the backward pass.
pub struct ForwardCache {
    pub sigma: Vec<f64>,
    pub rgb: Vec<f64>,
    pub weights: Vec<f64>,
    pub trans: Vec<f64>,
    pub ray_color: Vec<Vec3>,
    pub ray_depth: Vec<f64>,
    pub geo_supervised: bool,
    chunks: Vec<(usize, usize)>,
    tapes: Vec<FieldTape>,
}

fn ray_chunks(n_rays: usize, n_samples: usize) -> Vec<(usize, usize)> {
    let rays_per_chunk = (CHUNK_SAMPLES / n_samples).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < n_rays {
        let end = (start + rays_per_chunk).min(n_rays);
        out.push((start, end));
        start = end;
    }
    out
}

fn eval_chunk(params: &FieldParams, batch: &TrainBatch, range: (usize, usize)) -> FieldTape {
    let enc = &params.config.encoding;
    let n = batch.samples[0].len();
    let (r0, r1) = range;
    let mut positions = Vec::with_capacity((r1 - r0) * n);
    let mut ray_dirs = Vec::with_capacity(r1 - r0);
    for r in r0..r1 {
        let ray = &batch.rays[r];
        for &t in &batch.samples[r].t_values {
            positions.push(point_at(ray, t));
        }
        ray_dirs.push(ray.direction);
    }
    // One direction encoding per ray, replicated across its samples.
    let per_ray = encode_directions(enc, &ray_dirs);
    let mut enc_dir = Mat::zeros((r1 - r0) * n, per_ray.cols);
    for r in 0..r1 - r0 {
        let src = per_ray.row(r).to_vec();
        for i in 0..n {
            enc_dir.row_mut(r * n + i).copy_from_slice(&src);
        }
    }
    forward_encoded(
        params,
        encode_positions(enc, &positions, &batch.mask_weights),
        enc_dir,
    )
}

/// Forward pass of the full loss over a frozen batch. Pure in `params`.
pub fn loss_forward(
    params: &FieldParams,
    batch: &TrainBatch,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, ForwardCache)> {
    let n_rays = batch.rays.len();
    let n = cfg.n_samples;
    let total = n_rays * n;

    let chunks = ray_chunks(n_rays, n);
    let tapes: Vec<FieldTape> = chunks
        .par_iter()
        .map(|&range| eval_chunk(params, batch, range))
        .collect();

    let mut sigma = Vec::with_capacity(total);
    let mut rgb = Vec::with_capacity(3 * total);
    for tape in &tapes {
        sigma.extend_from_slice(&tape.sigma);
        rgb.extend_from_slice(&tape.rgb.data);
    }
    if sigma.iter().any(|v| !v.is_finite()) || rgb.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "field forward".into(),
            detail: "non-finite density or color in training batch".into(),
        });
    }

    let mut weights = vec![0.0; total];
    let mut trans = vec![0.0; total];
    let mut ray_color = Vec::with_capacity(n_rays);
    let mut ray_depth = Vec::with_capacity(n_rays);
    for r in 0..n_rays {
        let lo = r * n;
        let hi = lo + n;
        compose_weights(
            &sigma[lo..hi],
            &batch.samples[r].deltas,
            &mut weights[lo..hi],
            &mut trans[lo..hi],
        );
        let mut c = Vec3::ZERO;
        let mut d = 0.0;
        for i in 0..n {
            let w = weights[lo + i];
            c = c + Vec3::new(rgb[3 * (lo + i)], rgb[3 * (lo + i) + 1], rgb[3 * (lo + i) + 2]) * w;
            d += batch.samples[r].t_values[i] * w;
        }
        ray_color.push(c);
        ray_depth.push(d);
    }

    let color = color_loss(&ray_color, &batch.gt_colors)?;

    let (p_t, p_ref): (Vec<Vec3>, Vec<Vec3>) = batch
        .pairs
        .iter()
        .map(|&(ti, ri)| {
            (
                point_at(&batch.rays[ti], ray_depth[ti]),
                point_at(&batch.rays[ri], ray_depth[ri]),
            )
        })
        .unzip();
    let geo = geometry_loss(&p_t, &p_ref, &batch.pair_confidence)?;

    let mut near_density = Mat::zeros(n_rays, batch.k_occ);
    for r in 0..n_rays {
        for i in 0..batch.k_occ {
            near_density.data[r * batch.k_occ + i] = sigma[r * n + i];
        }
    }
    let occ = occlusion_loss(&near_density);

    let breakdown = total_loss(color, geo.value, occ, cfg.lambda_geo, cfg.lambda_occ);
    Ok((
        breakdown,
        ForwardCache {
            sigma,
            rgb,
            weights,
            trans,
            ray_color,
            ray_depth,
            geo_supervised: geo.supervised,
            chunks,
            tapes,
        },
    ))
}

/// Backward pass of the full loss, returning the parameter gradients.
/// Chunks are rematerialized and reduced in a fixed order, so the result is
/// bit-deterministic regardless of thread scheduling.
pub fn loss_backward(
    params: &FieldParams,
    batch: &TrainBatch,
    cfg: &TrainConfig,
    cache: &ForwardCache,
) -> MlpWeights {
    let n_rays = batch.rays.len();
    let n = cfg.n_samples;

    // Upstream gradients per ray.
    let d_color = color_loss_backward(&cache.ray_color, &batch.gt_colors);
    let mut d_depth = vec![0.0; n_rays];
    if cfg.lambda_geo != 0.0 && !batch.pairs.is_empty() {
        let (p_t, p_ref): (Vec<Vec3>, Vec<Vec3>) = batch
            .pairs
            .iter()
            .map(|&(ti, ri)| {
                (
                    point_at(&batch.rays[ti], cache.ray_depth[ti]),
                    point_at(&batch.rays[ri], cache.ray_depth[ri]),
                )
            })
            .unzip();
        let (d_pt, d_pref) = geometry_loss_backward(&p_t, &p_ref, &batch.pair_confidence);
        for (pi, &(ti, ri)) in batch.pairs.iter().enumerate() {
            d_depth[ti] += cfg.lambda_geo * d_pt[pi].dot(batch.rays[ti].direction);
            d_depth[ri] += cfg.lambda_geo * d_pref[pi].dot(batch.rays[ri].direction);
        }
    }
    let occ_grad = cfg.lambda_occ / (n_rays * batch.k_occ) as f64;

    let partials: Vec<MlpWeights> = cache
        .chunks
        .par_iter()
        .zip(&cache.tapes)
        .map(|(&range, tape)| {
            let (r0, r1) = range;
            let s = (r1 - r0) * n;
            let mut d_sigma = vec![0.0; s];
            let mut d_rgb = vec![0.0; 3 * s];
            for r in r0..r1 {
                let lo = (r - r0) * n;
                let glo = r * n;
                for i in 0..batch.k_occ {
                    d_sigma[lo + i] += occ_grad;
                }
                render_backward_ray(
                    &cache.sigma[glo..glo + n],
                    &cache.rgb[3 * glo..3 * (glo + n)],
                    &batch.samples[r],
                    &cache.weights[glo..glo + n],
                    &cache.trans[glo..glo + n],
                    d_color[r],
                    d_depth[r],
                    &mut d_sigma[lo..lo + n],
                    &mut d_rgb[3 * lo..3 * (lo + n)],
                );
            }
            let d_rgb_mat = Mat::from_rows(s, 3, d_rgb);
            let mut partial = params.weights.zeros_like();
            backward_encoded(params, tape, &d_sigma, &d_rgb_mat, &mut partial);
            partial
        })
        .collect();

    let mut grads = params.weights.zeros_like();
    for partial in partials {
        let dst = grads.named_slices_mut();
        let src = partial.named_slices();
        for ((_, d), (_, s)) in dst.into_iter().zip(src) {
            for (a, b) in d.iter_mut().zip(s) {
                *a += b;
            }
        }
    }
    grads
}

/// Per-step statistics, one row of the training log.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub step: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub num_pairs_kept: usize,
    pub num_pairs_sampled: usize,
    pub geo_supervised: bool,
}

/// One optimization step: batch assembly, forward, backward, clip, Adam.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    views: &[TrainView],
    stacks: &[MatchStack],
    scene: &Scene,
    params: &mut FieldParams,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    tau: f64,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StepStats> {
    params.zero_grads();
    let batch = build_train_batch(views, stacks, scene, cfg, tau, step, rng)?;
    let (breakdown, cache) = loss_forward(params, &batch, cfg)?;
    params.grads = loss_backward(params, &batch, cfg, &cache);
    clip_gradients(&mut params.grads, cfg.clip_value, cfg.clip_norm);
    let lr = lr_at(step, cfg);
    adam_step(&mut params.weights, &params.grads, opt, lr)?;
    Ok(StepStats {
        step,
        loss: breakdown,
        lr,
        num_pairs_kept: batch.num_pairs_kept,
        num_pairs_sampled: batch.num_pairs_sampled,
        geo_supervised: cache.geo_supervised,
    })
}

/// Result of a training run.
pub struct TrainRun {
    pub params: FieldParams,
    pub opt: OptimizerState,
    pub history: Vec<StepStats>,
    pub final_checkpoint: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

/// Train the field on a scene's training views.
///
/// `stacks` are aggregated per-target stacks (one per training view at most).
/// When `out_dir` is given, a CSV loss log and checkpoints are written there.
/// `resume` continues a previous run from its checkpoint; the trajectory is
/// identical to an uninterrupted run with the same seed and config.
pub fn train(
    scene: &Scene,
    stacks: &[MatchStack],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    resume: Option<&Path>,
) -> Result<TrainRun> {
    cfg.validate()?;
    scene.validate()?;
    let tau = cfg.resolved_tau(scene);
    let train_indices = scene.train_camera_indices();
    if train_indices.is_empty() {
        return Err(Error::Config("scene has no training cameras".into()));
    }

    // Ground-truth training views from the oracle renderer, plus per-view
    // aggregated stacks (empty when a view has no correspondences).
    let mut views = Vec::with_capacity(train_indices.len());
    let mut view_stacks = Vec::with_capacity(train_indices.len());
    for &ci in &train_indices {
        let stack = stacks
            .iter()
            .find(|s| s.target_image == ci)
            .cloned()
            .unwrap_or_else(|| MatchStack::new(ci));
        let oracle = oracle_render(scene, ci, scene.oracle_n_quad)?;
        views.push(TrainView::new(ci, oracle.image, &stack));
        view_stacks.push(stack);
    }

    let (mut params, mut opt, mut rng, start_step) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if config_hash(&ck.config) != config_hash(cfg) {
                return Err(Error::Checkpoint(
                    "resume config differs from checkpoint config".into(),
                ));
            }
            let rng = ck.rng();
            (ck.params, ck.opt, rng, ck.step)
        }
        None => {
            let mut field_cfg = cfg.field.clone();
            field_cfg.init_seed = cfg.seed;
            let params = FieldParams::init(field_cfg)?;
            let opt = OptimizerState::new(&params.weights);
            (params, opt, ChaCha8Rng::seed_from_u64(cfg.seed), 0)
        }
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let log_path = out_dir.map(|d| d.join("train_log.csv"));
    let mut log_file = match (&log_path, start_step) {
        (Some(p), 0) => {
            let mut f = std::fs::File::create(p)?;
            writeln!(f, "step,color,geo,occ,total,lr,num_pairs_kept")?;
            Some(f)
        }
        (Some(p), _) => {
            let mut f = std::fs::OpenOptions::new()
                .append(true)
                .create(true)
                .open(p)?;
            if f.metadata()?.len() == 0 {
                writeln!(f, "step,color,geo,occ,total,lr,num_pairs_kept")?;
            }
            Some(f)
        }
        (None, _) => None,
    };

    let mut history = Vec::with_capacity(cfg.total_steps.saturating_sub(start_step));
    for step in start_step..cfg.total_steps {
        let stats = train_step(
            &views,
            &view_stacks,
            scene,
            &mut params,
            &mut opt,
            cfg,
            tau,
            step,
            &mut rng,
        )?;
        if let Some(f) = log_file.as_mut() {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                stats.step,
                stats.loss.color_loss,
                stats.loss.geo_loss,
                stats.loss.occ_loss,
                stats.loss.total,
                stats.lr,
                stats.num_pairs_kept
            )?;
        }
        history.push(stats);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = out_dir {
                let path = dir.join(format!("step_{:06}.ckpt", step + 1));
                save_checkpoint(&path, cfg, step + 1, &params, &opt, &rng)?;
            }
        }
    }

    let final_checkpoint = if let Some(dir) = out_dir {
        let path = dir.join("final.ckpt");
        save_checkpoint(&path, cfg, cfg.total_steps, &params, &opt, &rng)?;
        Some(path)
    } else {
        None
    };

    Ok(TrainRun {
        params,
        opt,
        history,
        final_checkpoint,
        log_path,
    })
}

//! Stratified ray sampling and the volume-rendering quadrature producing
//! per-ray color, depth, weights, and transmittance.

use crate::error::{Error, Result};
use crate::field::{self, FieldParams};
use crate::geometry::{generate_ray, point_at, CameraIntrinsics, CameraPose, Ray, Vec3};
use crate::io::{DepthMap, ImageRgb};
use rand::Rng;
use rayon::prelude::*;

/// Cap on a single sample's optical-depth term `sigma * delta`, guarding the
/// exponentials against extreme densities.
pub const MAX_OPTICAL_DEPTH_TERM: f64 = 80.0;

/// Sample distances along a ray and the spacing between them. The last delta
/// closes the interval against `t_far`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub t_values: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.t_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_values.is_empty()
    }
}

fn validate_range(t_near: f64, t_far: f64, n: usize) -> Result<()> {
    if !(t_far > t_near && t_near >= 0.0) || n == 0 {
        return Err(Error::InvalidInput(format!(
            "invalid sampling range [{t_near}, {t_far}] with {n} samples"
        )));
    }
    Ok(())
}

fn deltas_for(t_values: &[f64], t_far: f64) -> Vec<f64> {
    let n = t_values.len();
    (0..n)
        .map(|i| {
            if i + 1 < n {
                t_values[i + 1] - t_values[i]
            } else {
                t_far - t_values[n - 1]
            }
        })
        .collect()
}

/// One uniform draw per equal-width bin of `[t_near, t_far]`.
pub fn stratified_sample(
    t_near: f64,
    t_far: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Result<SampleSet> {
    validate_range(t_near, t_far, n)?;
    let w = (t_far - t_near) / n as f64;
    let t_values: Vec<f64> = (0..n)
        .map(|k| t_near + (k as f64 + rng.gen::<f64>()) * w)
        .collect();
    let deltas = deltas_for(&t_values, t_far);
    Ok(SampleSet { t_values, deltas })
}

/// Deterministic bin-midpoint samples, used for oracle quadrature and
/// evaluation renders.
pub fn midpoint_samples(t_near: f64, t_far: f64, n: usize) -> Result<SampleSet> {
    validate_range(t_near, t_far, n)?;
    let w = (t_far - t_near) / n as f64;
    let t_values: Vec<f64> = (0..n).map(|k| t_near + (k as f64 + 0.5) * w).collect();
    let deltas = deltas_for(&t_values, t_far);
    Ok(SampleSet { t_values, deltas })
}

/// Per-ray output of the volume-rendering quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    pub color: Vec3,
    pub depth: f64,
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
}

/// Compositing weights for one ray. Writes `w_i = T_i (1 - exp(-sigma_i d_i))`
/// and `T_i` into the output slices; returns the final transmittance.
pub(crate) fn compose_weights(
    sigmas: &[f64],
    deltas: &[f64],
    weights: &mut [f64],
    trans: &mut [f64],
) -> f64 {
    let mut t_acc = 1.0;
    for i in 0..sigmas.len() {
        let term = (sigmas[i] * deltas[i]).min(MAX_OPTICAL_DEPTH_TERM);
        let alpha = 1.0 - (-term).exp();
        trans[i] = t_acc;
        weights[i] = t_acc * alpha;
        t_acc *= 1.0 - alpha;
    }
    t_acc
}

/// Composite field outputs along a ray into color and depth.
pub fn render(sigmas: &[f64], colors: &[Vec3], samples: &SampleSet) -> Result<RenderResult> {
    if sigmas.len() != colors.len() {
        return Err(Error::LengthMismatch {
            what: "sigma/color",
            left: sigmas.len(),
            right: colors.len(),
        });
    }
    if sigmas.len() != samples.len() {
        return Err(Error::LengthMismatch {
            what: "sigma/samples",
            left: sigmas.len(),
            right: samples.len(),
        });
    }
    if let Some(bad) = sigmas.iter().find(|s| **s < 0.0) {
        return Err(Error::InvalidInput(format!("negative density {bad}")));
    }
    let n = sigmas.len();
    let mut weights = vec![0.0; n];
    let mut trans = vec![0.0; n];
    compose_weights(sigmas, &samples.deltas, &mut weights, &mut trans);
    let mut color = Vec3::ZERO;
    let mut depth = 0.0;
    for i in 0..n {
        color = color + colors[i] * weights[i];
        depth += samples.t_values[i] * weights[i];
    }
    Ok(RenderResult {
        color,
        depth,
        weights,
        transmittance: trans,
    })
}

/// Backward pass of [`render`] for one ray.
///
/// Adds the gradients w.r.t. per-sample densities and colors into `d_sigma`
/// and `d_rgb` (row-major, 3 per sample), given upstream gradients for the
/// rendered color and depth. `rgb` is the forward per-sample color, row-major.
pub fn render_backward_ray(
    sigmas: &[f64],
    rgb: &[f64],
    samples: &SampleSet,
    weights: &[f64],
    trans: &[f64],
    d_color: Vec3,
    d_depth: f64,
    d_sigma: &mut [f64],
    d_rgb: &mut [f64],
) {
    let n = sigmas.len();
    // g_i = dL/dw_i; suffix sum s_i = sum_{k>i} g_k w_k handles the
    // transmittance coupling of earlier samples to later weights.
    let mut suffix = 0.0;
    let mut g = vec![0.0; n];
    for i in 0..n {
        let c = &rgb[3 * i..3 * i + 3];
        g[i] = d_color.x * c[0] + d_color.y * c[1] + d_color.z * c[2]
            + d_depth * samples.t_values[i];
    }
    for i in (0..n).rev() {
        // d w_i / d term_i = T_i e^{-term_i} = T_i - w_i (no extra exp needed).
        let d_term = g[i] * (trans[i] - weights[i]) - suffix;
        let clamped = sigmas[i] * samples.deltas[i] >= MAX_OPTICAL_DEPTH_TERM;
        if !clamped {
            d_sigma[i] += d_term * samples.deltas[i];
        }
        let dr = &mut d_rgb[3 * i..3 * i + 3];
        dr[0] += weights[i] * d_color.x;
        dr[1] += weights[i] * d_color.y;
        dr[2] += weights[i] * d_color.z;
        suffix += g[i] * weights[i];
    }
}

/// Render a single ray through the field: stratified sampling, batched field
/// evaluation, then compositing. Gradients are not recorded; the training
/// path batches rays instead.
pub fn render_ray(
    params: &FieldParams,
    ray: &Ray,
    t_near: f64,
    t_far: f64,
    n: usize,
    t: usize,
    t_total: usize,
    rng: &mut impl Rng,
) -> Result<RenderResult> {
    let samples = stratified_sample(t_near, t_far, n, rng)?;
    render_ray_with(params, ray, &samples, t, t_total)
}

/// Render a single ray at predetermined sample positions.
pub fn render_ray_with(
    params: &FieldParams,
    ray: &Ray,
    samples: &SampleSet,
    t: usize,
    t_total: usize,
) -> Result<RenderResult> {
    let cfg = &params.config.encoding;
    let positions: Vec<Vec3> = samples.t_values.iter().map(|&ti| point_at(ray, ti)).collect();
    let dirs = vec![ray.direction; samples.len()];
    let mask = crate::encoding::mask_entry_weights(t, t_total, cfg);
    let tape = field::forward_encoded(
        params,
        field::encode_positions(cfg, &positions, &mask),
        field::encode_directions(cfg, &dirs),
    );
    let colors: Vec<Vec3> = (0..samples.len())
        .map(|i| {
            let r = tape.rgb.row(i);
            Vec3::new(r[0], r[1], r[2])
        })
        .collect();
    render(&tape.sigma, &colors, samples)
}

/// Render a full camera view of the learned field with deterministic
/// midpoint sampling, given flattened mask weights for the position encoding.
#[allow(clippy::too_many_arguments)]
pub fn render_view(
    params: &FieldParams,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    near: f64,
    far: f64,
    n_samples: usize,
    mask_weights: &[f64],
) -> Result<(ImageRgb, DepthMap)> {
    let samples = midpoint_samples(near, far, n_samples)?;
    let cfg = &params.config.encoding;
    let (w, h) = (intr.width, intr.height);

    let rows: Vec<Vec<(Vec3, f64)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut positions = Vec::with_capacity(w as usize * n_samples);
            let mut dirs = Vec::with_capacity(w as usize * n_samples);
            for x in 0..w {
                let ray = generate_ray(intr, pose, (x as f64, y as f64)).expect("pixel in bounds");
                for &t in &samples.t_values {
                    positions.push(point_at(&ray, t));
                    dirs.push(ray.direction);
                }
            }
            let tape = field::forward_encoded(
                params,
                field::encode_positions(cfg, &positions, mask_weights),
                field::encode_directions(cfg, &dirs),
            );
            let mut weights = vec![0.0; n_samples];
            let mut trans = vec![0.0; n_samples];
            let mut row = Vec::with_capacity(w as usize);
            for px in 0..w as usize {
                let lo = px * n_samples;
                compose_weights(
                    &tape.sigma[lo..lo + n_samples],
                    &samples.deltas,
                    &mut weights,
                    &mut trans,
                );
                let mut c = Vec3::ZERO;
                let mut d = 0.0;
                for i in 0..n_samples {
                    let r = tape.rgb.row(lo + i);
                    c = c + Vec3::new(r[0], r[1], r[2]) * weights[i];
                    d += samples.t_values[i] * weights[i];
                }
                row.push((c, d));
            }
            row
        })
        .collect();

    let mut image = ImageRgb::new(w, h);
    let mut depth = DepthMap::new(w, h);
    for (y, row) in rows.iter().enumerate() {
        for (x, &(c, d)) in row.iter().enumerate() {
            image.set(x as u32, y as u32, c);
            depth.values[y * w as usize + x] = d;
        }
    }
    Ok((image, depth))
}

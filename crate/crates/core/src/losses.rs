//! Photometric, geometry-consistency, and occlusion losses plus the
//! weighted total objective.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::tensor::Mat;

/// Smoothing added under the square root of the pair distance so the
/// geometry loss stays differentiable at coincident points.
pub const GEO_NORM_EPS2: f64 = 1e-12;

/// Per-term losses and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub color_loss: f64,
    pub geo_loss: f64,
    pub occ_loss: f64,
    pub total: f64,
}

/// Mean squared error over every channel of every ray.
pub fn color_loss(rendered: &[Vec3], ground_truth: &[Vec3]) -> Result<f64> {
    if rendered.len() != ground_truth.len() {
        return Err(Error::LengthMismatch {
            what: "rendered/ground truth",
            left: rendered.len(),
            right: ground_truth.len(),
        });
    }
    if rendered.is_empty() {
        return Err(Error::InvalidInput("color loss over zero rays".into()));
    }
    let sum: f64 = rendered
        .iter()
        .zip(ground_truth)
        .map(|(r, g)| (*r - *g).norm_squared())
        .sum();
    Ok(sum / (3.0 * rendered.len() as f64))
}

/// `dL/drendered` for [`color_loss`].
pub fn color_loss_backward(rendered: &[Vec3], ground_truth: &[Vec3]) -> Vec<Vec3> {
    let scale = 2.0 / (3.0 * rendered.len() as f64);
    rendered
        .iter()
        .zip(ground_truth)
        .map(|(r, g)| (*r - *g) * scale)
        .collect()
}

/// Geometry loss value plus a flag noting whether any supervision applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoLoss {
    pub value: f64,
    /// False when the input was empty or all confidences were zero
    /// ("no geometry supervision this step").
    pub supervised: bool,
}

#[inline]
fn smoothed_dist(d: Vec3) -> f64 {
    (d.norm_squared() + GEO_NORM_EPS2).sqrt()
}

/// Confidence-weighted mean distance between paired 3D points:
/// `sum_i eps_i ||p_t_i - p_ref_i|| / sum_i eps_i` with a smoothed norm.
pub fn geometry_loss(p_t: &[Vec3], p_ref: &[Vec3], eps: &[f64]) -> Result<GeoLoss> {
    if p_t.len() != p_ref.len() || p_t.len() != eps.len() {
        return Err(Error::LengthMismatch {
            what: "paired points/confidences",
            left: p_t.len(),
            right: p_ref.len().max(eps.len()),
        });
    }
    if let Some(bad) = eps.iter().find(|e| **e < 0.0) {
        return Err(Error::InvalidInput(format!("negative confidence {bad}")));
    }
    let eps_sum: f64 = eps.iter().sum();
    if p_t.is_empty() || eps_sum == 0.0 {
        return Ok(GeoLoss {
            value: 0.0,
            supervised: false,
        });
    }
    let weighted: f64 = p_t
        .iter()
        .zip(p_ref)
        .zip(eps)
        .map(|((t, r), e)| e * smoothed_dist(*t - *r))
        .sum();
    Ok(GeoLoss {
        value: weighted / eps_sum,
        supervised: true,
    })
}

/// `(dL/dp_t, dL/dp_ref)` for [`geometry_loss`].
pub fn geometry_loss_backward(p_t: &[Vec3], p_ref: &[Vec3], eps: &[f64]) -> (Vec<Vec3>, Vec<Vec3>) {
    let eps_sum: f64 = eps.iter().sum();
    if p_t.is_empty() || eps_sum == 0.0 {
        return (vec![Vec3::ZERO; p_t.len()], vec![Vec3::ZERO; p_t.len()]);
    }
    let mut d_t = Vec::with_capacity(p_t.len());
    let mut d_r = Vec::with_capacity(p_t.len());
    for ((t, r), e) in p_t.iter().zip(p_ref).zip(eps) {
        let diff = *t - *r;
        let grad = diff * (e / (eps_sum * smoothed_dist(diff)));
        d_t.push(grad);
        d_r.push(-grad);
    }
    (d_t, d_r)
}

/// Mean over rays of the mean density of the first `K` samples along each
/// ray — the near-camera density penalty. `densities` is `n_rays x K`.
pub fn occlusion_loss(densities: &Mat) -> f64 {
    if densities.rows == 0 || densities.cols == 0 {
        return 0.0;
    }
    densities.data.iter().sum::<f64>() / (densities.rows * densities.cols) as f64
}

/// Weighted total objective: `color + lambda_geo * geo + lambda_occ * occ`.
pub fn total_loss(color: f64, geo: f64, occ: f64, lambda_geo: f64, lambda_occ: f64) -> LossBreakdown {
    LossBreakdown {
        color_loss: color,
        geo_loss: geo,
        occ_loss: occ,
        total: color + lambda_geo * geo + lambda_occ * occ,
    }
}

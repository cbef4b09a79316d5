//! Image-quality and depth-error metrics plus held-out view evaluation.

use crate::correspondence::detect_keypoints;
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::io::{DepthMap, ImageRgb};
use crate::renderer::render_view;
use crate::scene::{oracle_render, Scene};
use crate::trainer::TrainConfig;
use std::fmt::Write as _;
use std::path::Path;

/// PSNR in dB, capped at 99 with the `identical` flag when MSE is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr {
    pub db: f64,
    pub identical: bool,
}

pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<Psnr> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::LengthMismatch {
            what: "image dimensions",
            left: (a.width * a.height) as usize,
            right: (b.width * b.height) as usize,
        });
    }
    let n = (a.pixels.len() * 3) as f64;
    let mse: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (*x - *y).norm_squared())
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(Psnr {
            db: 99.0,
            identical: true,
        });
    }
    Ok(Psnr {
        db: 10.0 * (1.0 / mse).log10(),
        identical: false,
    })
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

// Separable valid-mode Gaussian filter.
fn gauss_valid(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let k = gaussian_kernel();
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}

/// Single-scale SSIM, mean over valid 11x11 Gaussian windows and channels,
/// dynamic range 1.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::LengthMismatch {
            what: "image dimensions",
            left: (a.width * a.height) as usize,
            right: (b.width * b.height) as usize,
        });
    }
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let mut total = 0.0;
    for ch in 0..3 {
        let pick = |p: &crate::geometry::Vec3| match ch {
            0 => p.x,
            1 => p.y,
            _ => p.z,
        };
        let xa: Vec<f64> = a.pixels.iter().map(&pick).collect();
        let xb: Vec<f64> = b.pixels.iter().map(&pick).collect();
        let xx: Vec<f64> = xa.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = xb.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x * y).collect();

        let (mu_a, ow, oh) = gauss_valid(&xa, w, h);
        let (mu_b, _, _) = gauss_valid(&xb, w, h);
        let (m_xx, _, _) = gauss_valid(&xx, w, h);
        let (m_yy, _, _) = gauss_valid(&yy, w, h);
        let (m_xy, _, _) = gauss_valid(&xy, w, h);

        let mut acc = 0.0;
        for i in 0..ow * oh {
            let va = m_xx[i] - mu_a[i] * mu_a[i];
            let vb = m_yy[i] - mu_b[i] * mu_b[i];
            let cov = m_xy[i] - mu_a[i] * mu_b[i];
            acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2))
                / ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}

/// Mean absolute depth error over masked pixels.
pub fn depth_mae(pred: &DepthMap, oracle: &DepthMap, mask: &[bool]) -> Result<f64> {
    if pred.width != oracle.width || pred.height != oracle.height {
        return Err(Error::LengthMismatch {
            what: "depth dimensions",
            left: pred.values.len(),
            right: oracle.values.len(),
        });
    }
    if mask.len() != pred.values.len() {
        return Err(Error::LengthMismatch {
            what: "depth/mask",
            left: pred.values.len(),
            right: mask.len(),
        });
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..mask.len() {
        if mask[i] {
            acc += (pred.values[i] - oracle.values[i]).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("empty depth mask".into()));
    }
    Ok(acc / count as f64)
}

/// Metrics for one held-out view.
#[derive(Debug, Clone)]
pub struct ViewEval {
    pub camera_index: usize,
    pub psnr: Psnr,
    pub ssim: f64,
    pub depth_mae: Option<f64>,
    pub depth_mae_keypoints: Option<f64>,
}

/// Evaluation across held-out views with per-view rows and means.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub views: Vec<ViewEval>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_depth_mae: Option<f64>,
    pub mean_depth_mae_keypoints: Option<f64>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("view,psnr,ssim,depth_mae,depth_mae_keypoints,flag\n");
        let fmt_opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| x.to_string());
        for v in &self.views {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                v.camera_index,
                v.psnr.db,
                v.ssim,
                fmt_opt(v.depth_mae),
                fmt_opt(v.depth_mae_keypoints),
                if v.psnr.identical { "identical" } else { "" }
            )
            .expect("string write");
        }
        writeln!(
            out,
            "mean,{},{},{},{},",
            self.mean_psnr,
            self.mean_ssim,
            fmt_opt(self.mean_depth_mae),
            fmt_opt(self.mean_depth_mae_keypoints)
        )
        .expect("string write");
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Evaluate trained parameters against the scene's oracle on the given
/// cameras (by default the held-out test cameras). `step` selects the
/// frequency-mask state the parameters were trained to.
pub fn evaluate(
    params: &FieldParams,
    cfg: &TrainConfig,
    step: usize,
    scene: &Scene,
    cameras: &[usize],
    keypoint_percentile: f64,
) -> Result<EvalReport> {
    let (near, far) = cfg.resolved_bounds(scene);
    let mask = cfg.mask_weights_at(step, &cfg.field.encoding);
    let mut views = Vec::with_capacity(cameras.len());
    for &ci in cameras {
        let cam = &scene.cameras[ci];
        let oracle = oracle_render(scene, ci, scene.oracle_n_quad)?;
        let (image, depth) = render_view(
            params,
            &cam.intrinsics,
            &cam.pose,
            near,
            far,
            cfg.n_samples,
            &mask,
        )?;
        let p = psnr(&image, &oracle.image)?;
        let s = ssim(&image, &oracle.image)?;

        let coverage: Vec<bool> = oracle.opacity.iter().map(|&a| a > 0.5).collect();
        let mae = depth_mae(&depth, &oracle.depth, &coverage).ok();
        let keypoints = detect_keypoints(&oracle.image, keypoint_percentile, None);
        let mut kp_mask = vec![false; coverage.len()];
        for (x, y) in keypoints {
            let idx = (y * oracle.image.width + x) as usize;
            kp_mask[idx] = coverage[idx];
        }
        let mae_kp = depth_mae(&depth, &oracle.depth, &kp_mask).ok();

        views.push(ViewEval {
            camera_index: ci,
            psnr: p,
            ssim: s,
            depth_mae: mae,
            depth_mae_keypoints: mae_kp,
        });
    }

    let mean = |f: &dyn Fn(&ViewEval) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = views.iter().filter_map(f).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let mean_psnr = views.iter().map(|v| v.psnr.db).sum::<f64>() / views.len().max(1) as f64;
    let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / views.len().max(1) as f64;
    Ok(EvalReport {
        mean_psnr,
        mean_ssim,
        mean_depth_mae: mean(&|v: &ViewEval| v.depth_mae),
        mean_depth_mae_keypoints: mean(&|v: &ViewEval| v.depth_mae_keypoints),
        views,
    })
}

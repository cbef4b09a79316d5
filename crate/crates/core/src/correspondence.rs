//! Correspondence ingestion and generation: max-confidence aggregation of
//! per-pair matching stacks, the geometry-consistent ray filter, the
//! synthetic ground-truth matcher, and the paired-ray sampler.

use crate::error::{Error, Result};
use crate::geometry::{
    closest_params, generate_ray, point_at, project, ray_min_distance, CameraIntrinsics,
    CameraPose, Ray,
};
use crate::io::ImageRgb;
use crate::scene::{oracle_render, OracleView, Scene};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// One correspondence: a target pixel matched to a reference pixel with a
/// confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub target_image: usize,
    pub target_pixel: (f64, f64),
    pub ref_image: usize,
    pub ref_pixel: (f64, f64),
    pub confidence: f64,
}

/// Map key for a (non-negative, finite) pixel coordinate pair. IEEE bit
/// order equals numeric order for non-negative floats, so iteration is in
/// raster-friendly deterministic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PixelKey(u64, u64);

impl PixelKey {
    pub fn of(pixel: (f64, f64)) -> PixelKey {
        PixelKey(pixel.0.to_bits(), pixel.1.to_bits())
    }
}

/// Per-target table of correspondences, at most one record per keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchStack {
    pub target_image: usize,
    pub records: BTreeMap<PixelKey, MatchRecord>,
}

impl MatchStack {
    pub fn new(target_image: usize) -> Self {
        MatchStack {
            target_image,
            records: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Insert keeping the higher-confidence record; ties keep the lower
    /// reference image index.
    pub fn insert_max_confidence(&mut self, rec: MatchRecord) {
        let key = PixelKey::of(rec.target_pixel);
        match self.records.get_mut(&key) {
            None => {
                self.records.insert(key, rec);
            }
            Some(existing) => {
                if rec.confidence > existing.confidence
                    || (rec.confidence == existing.confidence && rec.ref_image < existing.ref_image)
                {
                    *existing = rec;
                }
            }
        }
    }
}

/// Merge per-reference stacks for one target image, keeping per keypoint the
/// record with maximum confidence (ties: lowest reference image index).
pub fn aggregate_stacks(stacks: &[MatchStack]) -> Result<MatchStack> {
    let Some(first) = stacks.first() else {
        return Err(Error::InvalidInput("no stacks to aggregate".into()));
    };
    let target = first.target_image;
    if let Some(bad) = stacks.iter().find(|s| s.target_image != target) {
        return Err(Error::InvalidInput(format!(
            "stacks mix target images {target} and {}",
            bad.target_image
        )));
    }
    let mut out = MatchStack::new(target);
    for stack in stacks {
        for rec in stack.records.values() {
            out.insert_max_confidence(*rec);
        }
    }
    Ok(out)
}

/// Equal-length lists of matched target/reference rays and confidences.
#[derive(Debug, Clone, Default)]
pub struct PairedRays {
    pub target_image: usize,
    pub target_rays: Vec<Ray>,
    pub ref_rays: Vec<Ray>,
    pub confidences: Vec<f64>,
    pub target_pixels: Vec<(f64, f64)>,
    pub ref_images: Vec<usize>,
    pub ref_pixels: Vec<(f64, f64)>,
}

impl PairedRays {
    pub fn len(&self) -> usize {
        self.target_rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_rays.is_empty()
    }

    fn push(&mut self, rec: &MatchRecord, target_ray: Ray, ref_ray: Ray) {
        self.target_rays.push(target_ray);
        self.ref_rays.push(ref_ray);
        self.confidences.push(rec.confidence);
        self.target_pixels.push(rec.target_pixel);
        self.ref_images.push(rec.ref_image);
        self.ref_pixels.push(rec.ref_pixel);
    }

    fn keep_indices(&self, keep: &[usize]) -> PairedRays {
        PairedRays {
            target_image: self.target_image,
            target_rays: keep.iter().map(|&i| self.target_rays[i]).collect(),
            ref_rays: keep.iter().map(|&i| self.ref_rays[i]).collect(),
            confidences: keep.iter().map(|&i| self.confidences[i]).collect(),
            target_pixels: keep.iter().map(|&i| self.target_pixels[i]).collect(),
            ref_images: keep.iter().map(|&i| self.ref_images[i]).collect(),
            ref_pixels: keep.iter().map(|&i| self.ref_pixels[i]).collect(),
        }
    }
}

/// Geometry-consistent filter: keep pairs whose ray-to-ray minimum distance
/// is at most `tau_ray`, dropping degenerate (parallel) pairs and pairs whose
/// closest approach lies behind both cameras.
pub fn filter_pairs(pairs: &PairedRays, tau_ray: f64) -> PairedRays {
    assert!(tau_ray > 0.0, "tau_ray must be positive");
    let keep: Vec<usize> = (0..pairs.len())
        .filter(|&i| {
            let rt = &pairs.target_rays[i];
            let rr = &pairs.ref_rays[i];
            let cp = closest_params(rt, rr);
            if cp.degenerate {
                return false;
            }
            if cp.m < 0.0 && cp.n < 0.0 {
                return false;
            }
            ray_min_distance(rt, rr) <= tau_ray
        })
        .collect();
    pairs.keep_indices(&keep)
}

/// Uniformly sample up to `n_t` records without replacement and build the
/// paired back-projected rays.
pub fn sample_pairs(
    stack: &MatchStack,
    n_t: usize,
    cameras: &[(CameraIntrinsics, CameraPose)],
    rng: &mut impl Rng,
) -> Result<PairedRays> {
    let records: Vec<&MatchRecord> = stack.records.values().collect();
    let mut out = PairedRays {
        target_image: stack.target_image,
        ..Default::default()
    };
    if records.is_empty() || n_t == 0 {
        return Ok(out);
    }
    let k = n_t.min(records.len());
    let chosen = rand::seq::index::sample(rng, records.len(), k);
    for idx in chosen.iter() {
        let rec = records[idx];
        let (ti, tp) = cameras
            .get(rec.target_image)
            .ok_or_else(|| Error::InvalidInput(format!("no camera {}", rec.target_image)))?;
        let (ri, rp) = cameras
            .get(rec.ref_image)
            .ok_or_else(|| Error::InvalidInput(format!("no camera {}", rec.ref_image)))?;
        let target_ray = generate_ray(ti, tp, rec.target_pixel)?;
        let ref_ray = generate_ray(ri, rp, rec.ref_pixel)?;
        out.push(rec, target_ray, ref_ray);
    }
    Ok(out)
}

/// High-Laplacian keypoints of an image: interior pixels whose 4-neighbor
/// Laplacian magnitude exceeds the given percentile of all interior pixels,
/// strongest first, optionally capped.
pub fn detect_keypoints(
    image: &ImageRgb,
    percentile: f64,
    max_keypoints: Option<usize>,
) -> Vec<(u32, u32)> {
    let (w, h) = (image.width, image.height);
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let luma = image.luma();
    let at = |x: u32, y: u32| luma[(y * w + x) as usize];
    let mut mags: Vec<(f64, u32, u32)> = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let lap = 4.0 * at(x, y) - at(x - 1, y) - at(x + 1, y) - at(x, y - 1) - at(x, y + 1);
            mags.push((lap.abs(), x, y));
        }
    }
    let mut sorted: Vec<f64> = mags.iter().map(|m| m.0).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((percentile / 100.0) * sorted.len() as f64).floor() as usize;
    let threshold = sorted[rank.min(sorted.len() - 1)];
    let mut selected: Vec<(f64, u32, u32)> =
        mags.into_iter().filter(|m| m.0 > threshold).collect();
    // Strongest first; raster order breaks ties for determinism.
    selected.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    if let Some(cap) = max_keypoints {
        selected.truncate(cap);
    }
    selected.into_iter().map(|(_, x, y)| (x, y)).collect()
}

/// Knobs of the synthetic ground-truth matcher.
#[derive(Debug, Clone, Copy)]
pub struct MatchGenConfig {
    /// Laplacian-magnitude percentile above which pixels become keypoints.
    pub keypoint_percentile: f64,
    /// Std-dev of Gaussian noise added to reference pixels, in pixels.
    pub noise_px: f64,
    /// Fraction of keypoints whose matches are replaced by random outliers.
    pub outlier_rate: f64,
    /// Optional cap on keypoints per target image (strongest kept).
    pub max_keypoints: Option<usize>,
}

impl Default for MatchGenConfig {
    fn default() -> Self {
        MatchGenConfig {
            keypoint_percentile: 90.0,
            noise_px: 0.0,
            outlier_rate: 0.0,
            max_keypoints: None,
        }
    }
}

/// Ground-truth sidecar entry: one per matched keypoint, marking injected
/// outliers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointLabel {
    pub target_image: usize,
    pub target_pixel: (f64, f64),
    pub outlier: bool,
}

/// Synthetic matcher: selects high-frequency keypoints on each oracle view,
/// unprojects them through the oracle depth, and reprojects into every other
/// view. Visible in-bounds projections become records; an `outlier_rate`
/// fraction of keypoints get uniformly random reference pixels with
/// confidence in `[0.5, 1)`. Corruption happens per keypoint (across all of
/// its reference records) so injected outliers survive max-confidence
/// aggregation.
///
/// Returns per-(target, reference) stacks plus keypoint-level labels.
pub fn synthetic_match(
    scene: &Scene,
    camera_indices: &[usize],
    gen: &MatchGenConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<MatchStack>, Vec<KeypointLabel>)> {
    if !(0.0..1.0).contains(&gen.outlier_rate) {
        return Err(Error::Config(format!(
            "outlier_rate {} outside [0, 1)",
            gen.outlier_rate
        )));
    }
    let views: Vec<OracleView> = camera_indices
        .iter()
        .map(|&ci| oracle_render(scene, ci, scene.oracle_n_quad))
        .collect::<Result<_>>()?;
    let occ_tol = 0.02 * (scene.far - scene.near);
    let noise = if gen.noise_px > 0.0 {
        Some(Normal::new(0.0, gen.noise_px).expect("positive std"))
    } else {
        None
    };

    let mut stacks: BTreeMap<(usize, usize), MatchStack> = BTreeMap::new();
    let mut labels = Vec::new();

    for (vi, &cam_t) in camera_indices.iter().enumerate() {
        let view = &views[vi];
        let cam = &scene.cameras[cam_t];
        let keypoints = detect_keypoints(&view.image, gen.keypoint_percentile, gen.max_keypoints);
        for (kx, ky) in keypoints {
            let pix_idx = (ky * view.image.width + kx) as usize;
            if view.opacity[pix_idx] < 0.5 {
                continue; // background keypoint, no well-defined depth
            }
            let target_pixel = (kx as f64, ky as f64);
            let ray = generate_ray(&cam.intrinsics, &cam.pose, target_pixel)?;
            let depth = view.depth.values[pix_idx];
            let point = point_at(&ray, depth);

            // Collect the views that see this 3D point.
            let mut visible: Vec<(usize, usize, f64, f64)> = Vec::new();
            for (vr, &cam_r) in camera_indices.iter().enumerate() {
                if vr == vi {
                    continue;
                }
                let rcam = &scene.cameras[cam_r];
                let Some((u, v)) = project(&rcam.intrinsics, &rcam.pose, point) else {
                    continue;
                };
                let (w, h) = (rcam.intrinsics.width as f64, rcam.intrinsics.height as f64);
                if !(u >= 0.0 && u < w && v >= 0.0 && v < h) {
                    continue;
                }
                let t_along = (point - rcam.pose.translation).norm();
                let nearest = (u.round().clamp(0.0, w - 1.0) as u32)
                    .min(rcam.intrinsics.width - 1);
                let nearest_y =
                    (v.round().clamp(0.0, h - 1.0) as u32).min(rcam.intrinsics.height - 1);
                let z_seen = views[vr].depth.get(nearest, nearest_y);
                if t_along > z_seen + occ_tol {
                    continue; // occluded in the reference view
                }
                visible.push((vr, cam_r, u, v));
            }
            if visible.is_empty() {
                continue;
            }

            let is_outlier = gen.outlier_rate > 0.0 && rng.gen::<f64>() < gen.outlier_rate;
            for (_, cam_r, u, v) in visible {
                let rcam = &scene.cameras[cam_r];
                let (w, h) = (rcam.intrinsics.width as f64, rcam.intrinsics.height as f64);
                let (ref_pixel, confidence) = if is_outlier {
                    let ru = rng.gen_range(0.0..w);
                    let rv = rng.gen_range(0.0..h);
                    (
                        (ru, rv),
                        rng.gen_range(0.5..1.0),
                    )
                } else if let Some(n) = &noise {
                    let du = n.sample(rng);
                    let dv = n.sample(rng);
                    let nu = (u + du).clamp(0.0, w - 1e-6);
                    let nv = (v + dv).clamp(0.0, h - 1e-6);
                    let applied = ((nu - u).powi(2) + (nv - v).powi(2)).sqrt();
                    ((nu, nv), 1.0 / (1.0 + applied))
                } else {
                    ((u, v), 1.0)
                };
                stacks
                    .entry((cam_t, cam_r))
                    .or_insert_with(|| MatchStack::new(cam_t))
                    .insert_max_confidence(MatchRecord {
                        target_image: cam_t,
                        target_pixel,
                        ref_image: cam_r,
                        ref_pixel,
                        confidence,
                    });
            }
            labels.push(KeypointLabel {
                target_image: cam_t,
                target_pixel,
                outlier: is_outlier,
            });
        }
    }
    Ok((stacks.into_values().collect(), labels))
}

/// Write records as whitespace-separated text, one per line:
/// `target_img target_u target_v ref_img ref_u ref_v confidence`.
/// Floats use shortest round-trip decimals.
pub fn save_correspondences(path: &Path, stacks: &[MatchStack]) -> Result<()> {
    let mut text = String::from(
        "# target_img target_u target_v ref_img ref_u ref_v confidence\n",
    );
    for stack in stacks {
        for rec in stack.records.values() {
            writeln!(
                text,
                "{} {} {} {} {} {} {}",
                rec.target_image,
                rec.target_pixel.0,
                rec.target_pixel.1,
                rec.ref_image,
                rec.ref_pixel.0,
                rec.ref_pixel.1,
                rec.confidence
            )
            .expect("string write");
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Write the ground-truth outlier sidecar, one keypoint per line:
/// `target_img target_u target_v outlier_flag`.
pub fn save_labels(path: &Path, labels: &[KeypointLabel]) -> Result<()> {
    let mut text = String::from("# target_img target_u target_v outlier\n");
    for l in labels {
        writeln!(
            text,
            "{} {} {} {}",
            l.target_image,
            l.target_pixel.0,
            l.target_pixel.1,
            u8::from(l.outlier)
        )
        .expect("string write");
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<Vec<KeypointLabel>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line: lineno + 1,
            msg,
        };
        out.push(KeypointLabel {
            target_image: fields[0]
                .parse()
                .map_err(|e| parse_err(format!("target image: {e}")))?,
            target_pixel: (
                fields[1]
                    .parse()
                    .map_err(|e| parse_err(format!("target u: {e}")))?,
                fields[2]
                    .parse()
                    .map_err(|e| parse_err(format!("target v: {e}")))?,
            ),
            outlier: fields[3] == "1",
        });
    }
    Ok(out)
}

/// Load a correspondence file and return one aggregated stack per target
/// image. Rows sharing a (target, keypoint) are merged by max confidence.
/// `dims` gives the (width, height) of each image index for bounds checks.
pub fn load_correspondences(path: &Path, dims: &[(u32, u32)]) -> Result<Vec<MatchStack>> {
    let text = std::fs::read_to_string(path)?;
    let mut per_target: BTreeMap<usize, MatchStack> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(parse_err(format!("expected 7 fields, found {}", fields.len())));
        }
        let target_image: usize = fields[0]
            .parse()
            .map_err(|e| parse_err(format!("target image: {e}")))?;
        let tu: f64 = fields[1].parse().map_err(|e| parse_err(format!("target u: {e}")))?;
        let tv: f64 = fields[2].parse().map_err(|e| parse_err(format!("target v: {e}")))?;
        let ref_image: usize = fields[3]
            .parse()
            .map_err(|e| parse_err(format!("ref image: {e}")))?;
        let ru: f64 = fields[4].parse().map_err(|e| parse_err(format!("ref u: {e}")))?;
        let rv: f64 = fields[5].parse().map_err(|e| parse_err(format!("ref v: {e}")))?;
        let confidence: f64 = fields[6]
            .parse()
            .map_err(|e| parse_err(format!("confidence: {e}")))?;

        let rec = MatchRecord {
            target_image,
            target_pixel: (tu, tv),
            ref_image,
            ref_pixel: (ru, rv),
            confidence,
        };
        validate_record(&rec, dims).map_err(|e| parse_err(e.to_string()))?;
        per_target
            .entry(target_image)
            .or_insert_with(|| MatchStack::new(target_image))
            .insert_max_confidence(rec);
    }
    Ok(per_target.into_values().collect())
}

fn validate_record(rec: &MatchRecord, dims: &[(u32, u32)]) -> Result<()> {
    if rec.target_image == rec.ref_image {
        return Err(Error::InvalidInput(format!(
            "target and reference are the same image {}",
            rec.target_image
        )));
    }
    if !(0.0..=1.0).contains(&rec.confidence) {
        return Err(Error::InvalidInput(format!(
            "confidence {} outside [0, 1]",
            rec.confidence
        )));
    }
    for (img, (u, v)) in [
        (rec.target_image, rec.target_pixel),
        (rec.ref_image, rec.ref_pixel),
    ] {
        let Some(&(w, h)) = dims.get(img) else {
            return Err(Error::InvalidInput(format!("image index {img} out of range")));
        };
        if !(u >= 0.0 && u < w as f64 && v >= 0.0 && v < h as f64) {
            return Err(Error::PixelOutOfBounds {
                u,
                v,
                width: w,
                height: h,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::preset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(target: usize, pixel: (f64, f64), rf: usize, conf: f64) -> MatchRecord {
        MatchRecord {
            target_image: target,
            target_pixel: pixel,
            ref_image: rf,
            ref_pixel: (1.0, 1.0),
            confidence: conf,
        }
    }

    fn stack_of(target: usize, recs: &[MatchRecord]) -> MatchStack {
        let mut s = MatchStack::new(target);
        for r in recs {
            s.insert_max_confidence(*r);
        }
        s
    }

    #[test]
    fn aggregation_keeps_max_confidence() {
        let a = stack_of(0, &[record(0, (3.0, 4.0), 1, 0.9)]);
        let b = stack_of(0, &[record(0, (3.0, 4.0), 2, 0.7)]);
        let merged = aggregate_stacks(&[a, b]).unwrap();
        assert_eq!(merged.len(), 1);
        let rec = merged.records.values().next().unwrap();
        assert_eq!(rec.ref_image, 1);
        assert_eq!(rec.confidence, 0.9);
    }

    #[test]
    fn aggregation_keeps_singletons_and_breaks_ties_low() {
        let a = stack_of(0, &[record(0, (1.0, 1.0), 3, 0.5)]);
        let b = stack_of(
            0,
            &[record(0, (2.0, 2.0), 1, 0.6), record(0, (1.0, 1.0), 2, 0.5)],
        );
        let merged = aggregate_stacks(&[a, b]).unwrap();
        assert_eq!(merged.len(), 2);
        let rec = merged.records.get(&PixelKey::of((1.0, 1.0))).unwrap();
        assert_eq!(rec.ref_image, 2, "equal confidence goes to lower ref index");
    }

    #[test]
    fn aggregation_rejects_mixed_targets() {
        let a = stack_of(0, &[record(0, (1.0, 1.0), 1, 0.5)]);
        let b = stack_of(1, &[record(1, (1.0, 1.0), 0, 0.5)]);
        assert!(aggregate_stacks(&[a, b]).is_err());
    }

    #[test]
    fn aggregation_matches_bruteforce_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n_kp = rng.gen_range(1..30usize);
            let mut per_ref: Vec<MatchStack> = (1..=3).map(|_| MatchStack::new(0)).collect();
            let mut all: Vec<MatchRecord> = Vec::new();
            for k in 0..n_kp {
                let pixel = (k as f64, (k * 2) as f64);
                for (ri, stack) in per_ref.iter_mut().enumerate() {
                    if rng.gen::<f64>() < 0.7 {
                        let rec = record(0, pixel, ri + 1, rng.gen_range(0.0..1.0));
                        stack.insert_max_confidence(rec);
                        all.push(rec);
                    }
                }
            }
            let merged = aggregate_stacks(&per_ref).unwrap();
            // Brute force: group all records per keypoint and argmax.
            let mut expect: BTreeMap<PixelKey, MatchRecord> = BTreeMap::new();
            for rec in &all {
                let key = PixelKey::of(rec.target_pixel);
                match expect.get(&key) {
                    None => {
                        expect.insert(key, *rec);
                    }
                    Some(cur)
                        if rec.confidence > cur.confidence
                            || (rec.confidence == cur.confidence
                                && rec.ref_image < cur.ref_image) =>
                    {
                        expect.insert(key, *rec);
                    }
                    _ => {}
                }
            }
            assert_eq!(merged.records.len(), expect.len());
            for (k, v) in &expect {
                assert_eq!(merged.records.get(k), Some(v));
            }
        }
    }

    #[test]
    fn correspondence_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("matches.txt");
        let scene = preset("two-spheres", 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (stacks, _) = synthetic_match(
            &scene,
            &scene.train_camera_indices(),
            &MatchGenConfig {
                noise_px: 0.7,
                max_keypoints: Some(40),
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        save_correspondences(&path, &stacks).unwrap();
        let loaded = load_correspondences(&path, &scene.image_dims()).unwrap();

        // Loading aggregates across references: compare against in-memory
        // aggregation, exactly (shortest-decimal round trip is lossless).
        let mut targets: Vec<usize> = stacks.iter().map(|s| s.target_image).collect();
        targets.dedup();
        assert_eq!(loaded.len(), targets.len());
        for stack in &loaded {
            let per_ref: Vec<MatchStack> = stacks
                .iter()
                .filter(|s| s.target_image == stack.target_image)
                .cloned()
                .collect();
            let expect = aggregate_stacks(&per_ref).unwrap();
            assert_eq!(stack, &expect);
        }
    }

    #[test]
    fn empty_file_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.txt");
        std::fs::write(&path, "# nothing here\n\n").unwrap();
        assert!(load_correspondences(&path, &[(4, 4), (4, 4)])
            .unwrap()
            .is_empty());
    }

    #[test]
    fn loader_applies_max_confidence_to_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.txt");
        std::fs::write(&path, "0 1 1 1 2 2 0.4\n0 1 1 2 3 3 0.8\n").unwrap();
        let stacks = load_correspondences(&path, &[(8, 8), (8, 8), (8, 8)]).unwrap();
        assert_eq!(stacks.len(), 1);
        let rec = stacks[0].records.values().next().unwrap();
        assert_eq!(rec.confidence, 0.8);
        assert_eq!(rec.ref_image, 2);
    }

    #[test]
    fn loader_reports_line_numbers_and_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "# header\n0 1 1 1 2 2 0.5\n0 1 1 1 99 2 0.5\n").unwrap();
        let err = load_correspondences(&path, &[(8, 8), (8, 8)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:"), "missing line number: {msg}");
    }

    #[test]
    fn exact_matches_triangulate_to_intersecting_rays() {
        let scene = preset("two-spheres", 32).unwrap();
        let train = scene.train_camera_indices();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (stacks, _) = synthetic_match(
            &scene,
            &train,
            &MatchGenConfig {
                max_keypoints: Some(60),
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        assert!(!stacks.is_empty());
        let cameras = scene.camera_pairs();
        let mut count = 0;
        for stack in &stacks {
            for rec in stack.records.values() {
                let (ti, tp) = &cameras[rec.target_image];
                let (ri, rp) = &cameras[rec.ref_image];
                let rt = generate_ray(ti, tp, rec.target_pixel).unwrap();
                let rr = generate_ray(ri, rp, rec.ref_pixel).unwrap();
                assert!(
                    ray_min_distance(&rt, &rr) < 1e-6,
                    "noiseless match should intersect"
                );
                assert_eq!(rec.confidence, 1.0);
                count += 1;
            }
        }
        assert!(count > 20, "expected a healthy number of matches, got {count}");
    }

    #[test]
    fn full_percentile_selects_no_keypoints() {
        let scene = preset("two-spheres", 24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (stacks, labels) = synthetic_match(
            &scene,
            &scene.train_camera_indices(),
            &MatchGenConfig {
                keypoint_percentile: 100.0,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        assert!(stacks.is_empty());
        assert!(labels.is_empty());
    }

    #[test]
    fn outlier_count_is_binomial() {
        let scene = preset("boxes-grid", 48).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rate = 0.2;
        let (_, labels) = synthetic_match(
            &scene,
            &scene.train_camera_indices(),
            &MatchGenConfig {
                outlier_rate: rate,
                max_keypoints: Some(200),
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let n = labels.len() as f64;
        let outliers = labels.iter().filter(|l| l.outlier).count() as f64;
        assert!(n > 100.0);
        let sigma = (n * rate * (1.0 - rate)).sqrt();
        assert!(
            (outliers - n * rate).abs() < 4.0 * sigma,
            "outliers {outliers} vs expected {} +/- {sigma}",
            n * rate
        );
    }

    #[test]
    fn labels_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.labels");
        let labels = vec![
            KeypointLabel {
                target_image: 0,
                target_pixel: (3.0, 7.0),
                outlier: true,
            },
            KeypointLabel {
                target_image: 2,
                target_pixel: (1.5, 2.25),
                outlier: false,
            },
        ];
        save_labels(&path, &labels).unwrap();
        assert_eq!(load_labels(&path).unwrap(), labels);
    }

    #[test]
    fn filter_keeps_tight_pairs_and_drops_loose_ones() {
        let mut pairs = PairedRays::default();
        let rec = record(0, (1.0, 1.0), 1, 1.0);
        // Intersecting pair.
        pairs.push(
            &rec,
            Ray::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0)),
            Ray::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 2.0)),
        );
        // Skew pair at distance 0.5.
        pairs.push(
            &rec,
            Ray::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)),
            Ray::new(Vec3::new(0.0, 0.5, 1.0), Vec3::new(0.0, 0.0, 1.0)),
        );
        let kept = filter_pairs(&pairs, 0.2);
        assert_eq!(kept.len(), 1);
        let all = filter_pairs(&pairs, 1.0);
        assert_eq!(all.len(), 2);
    }

    use crate::geometry::Vec3;

    #[test]
    fn filter_drops_degenerate_and_behind_camera_pairs() {
        let mut pairs = PairedRays::default();
        let rec = record(0, (1.0, 1.0), 1, 1.0);
        // Parallel pair.
        pairs.push(
            &rec,
            Ray::new(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0)),
            Ray::new(Vec3::new(0.001, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0)),
        );
        // Closest approach behind both cameras (both look away from the
        // near-intersection at z < 0).
        pairs.push(
            &rec,
            Ray::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.1, 1.0)),
            Ray::new(Vec3::new(0.5, 0.0, 1.0), Vec3::new(0.1, 0.0, 1.0)),
        );
        let kept = filter_pairs(&pairs, 10.0);
        assert_eq!(kept.len(), 0);
    }

    #[test]
    fn filter_is_idempotent_order_preserving_and_monotone() {
        let scene = preset("boxes-grid", 32).unwrap();
        let train = scene.train_camera_indices();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (stacks, _) = synthetic_match(
            &scene,
            &train,
            &MatchGenConfig {
                noise_px: 1.5,
                outlier_rate: 0.3,
                max_keypoints: Some(120),
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let per_target: Vec<MatchStack> = stacks
            .iter()
            .filter(|s| s.target_image == train[0])
            .cloned()
            .collect();
        let merged = aggregate_stacks(&per_target).unwrap();
        let pairs = sample_pairs(&merged, 1000, &scene.camera_pairs(), &mut rng).unwrap();

        let taus = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
        let mut prev_kept = 0;
        for tau in taus {
            let kept = filter_pairs(&pairs, tau);
            assert!(kept.len() >= prev_kept, "retention not monotone in tau");
            prev_kept = kept.len();
            // Idempotent.
            let twice = filter_pairs(&kept, tau);
            assert_eq!(twice.len(), kept.len());
            // Order preserving: kept pixels appear in input order.
            let mut cursor = 0;
            for tp in &kept.target_pixels {
                while cursor < pairs.len() && pairs.target_pixels[cursor] != *tp {
                    cursor += 1;
                }
                assert!(cursor < pairs.len(), "kept pair not found in order");
            }
        }
    }

    #[test]
    fn sampling_is_without_replacement_and_seeded() {
        let scene = preset("two-spheres", 32).unwrap();
        let train = scene.train_camera_indices();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (stacks, _) = synthetic_match(
            &scene,
            &train,
            &MatchGenConfig {
                max_keypoints: Some(50),
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let per_target: Vec<MatchStack> = stacks
            .iter()
            .filter(|s| s.target_image == train[0])
            .cloned()
            .collect();
        let merged = aggregate_stacks(&per_target).unwrap();
        let cameras = scene.camera_pairs();

        // n_t = 0 gives empty.
        let empty = sample_pairs(&merged, 0, &cameras, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(empty.is_empty());

        // n_t >= stack size returns every record exactly once.
        let all = sample_pairs(&merged, 10_000, &cameras, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(all.len(), merged.len());
        let mut seen: Vec<_> = all.target_pixels.clone();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), merged.len());

        // Fixed seed, fixed sample set.
        let a = sample_pairs(&merged, 7, &cameras, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let b = sample_pairs(&merged, 7, &cameras, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a.target_pixels, b.target_pixels);
        assert_eq!(a.ref_pixels, b.ref_pixels);
    }

    // With exact correspondences, filtered pairs triangulate back to the
    // oracle surface point.
    #[test]
    fn exact_pairs_triangulate_to_oracle_points() {
        let scene = preset("boxes-grid", 32).unwrap();
        let train = scene.train_camera_indices();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (stacks, _) = synthetic_match(
            &scene,
            &train,
            &MatchGenConfig {
                max_keypoints: Some(60),
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let views: Vec<_> = train
            .iter()
            .map(|&ci| oracle_render(&scene, ci, scene.oracle_n_quad).unwrap())
            .collect();
        let cameras = scene.camera_pairs();
        for (vi, &cam_t) in train.iter().enumerate() {
            let per_target: Vec<MatchStack> = stacks
                .iter()
                .filter(|s| s.target_image == cam_t)
                .cloned()
                .collect();
            if per_target.is_empty() {
                continue;
            }
            let merged = aggregate_stacks(&per_target).unwrap();
            let pairs = sample_pairs(&merged, 10_000, &cameras, &mut rng).unwrap();
            let kept = filter_pairs(&pairs, 0.01 * scene.diameter);
            assert_eq!(kept.len(), pairs.len(), "exact pairs all pass the filter");
            for i in 0..kept.len() {
                let cp = closest_params(&kept.target_rays[i], &kept.ref_rays[i]);
                let mid = (point_at(&kept.target_rays[i], cp.m)
                    + point_at(&kept.ref_rays[i], cp.n))
                    * 0.5;
                // Oracle surface point for this keypoint.
                let (x, y) = kept.target_pixels[i];
                let depth = views[vi].depth.get(x as u32, y as u32);
                let expect = point_at(&kept.target_rays[i], depth);
                assert!(
                    (mid - expect).norm() < 1e-4,
                    "triangulated {:?} vs oracle {:?}",
                    mid,
                    expect
                );
            }
        }
    }
}

//! The MLP radiance field: configuration, initialization, batched forward
//! evaluation, and the matching hand-derived backward pass.

use crate::encoding::{self, EncodingConfig};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::tensor::{matmul, matmul_a_bt, matmul_at_b, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Architecture and initialization of the radiance field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub encoding: EncodingConfig,
    /// Number of trunk hidden layers.
    pub hidden_layers: usize,
    /// Width of each trunk hidden layer.
    pub hidden_width: usize,
    /// Hidden layer whose input gets the encoded position re-appended.
    pub skip_layer: Option<usize>,
    /// Width of the color branch hidden layer.
    pub color_hidden_width: usize,
    /// Seed for weight initialization.
    pub init_seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            encoding: EncodingConfig::default(),
            hidden_layers: 4,
            hidden_width: 64,
            skip_layer: Some(2),
            color_hidden_width: 32,
            init_seed: 0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 || self.color_hidden_width == 0 {
            return Err(Error::Config("field layers/widths must be nonzero".into()));
        }
        if let Some(s) = self.skip_layer {
            if s == 0 || s >= self.hidden_layers {
                return Err(Error::Config(format!(
                    "skip_layer {s} must lie in 1..{}",
                    self.hidden_layers
                )));
            }
        }
        if self.encoding.l_pos == 0 {
            return Err(Error::Config("l_pos must be at least 1".into()));
        }
        Ok(())
    }

    fn trunk_in_dim(&self, layer: usize) -> usize {
        let p = self.encoding.pos_len();
        if layer == 0 {
            p
        } else if self.skip_layer == Some(layer) {
            self.hidden_width + p
        } else {
            self.hidden_width
        }
    }
}

/// One dense layer; `w` is `in_dim x out_dim` so activations multiply on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            w: Mat::zeros(in_dim, out_dim),
            b: vec![0.0; out_dim],
        }
    }

    fn init_he(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Dense {
            w: Mat::from_rows(in_dim, out_dim, data),
            b: vec![0.0; out_dim],
        }
    }
}

/// All trainable tensors of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub trunk: Vec<Dense>,
    pub sigma_head: Dense,
    pub color_hidden: Dense,
    pub color_out: Dense,
}

impl MlpWeights {
    pub fn zeros_like(&self) -> MlpWeights {
        let z = |d: &Dense| Dense::zeros(d.w.rows, d.w.cols);
        MlpWeights {
            trunk: self.trunk.iter().map(z).collect(),
            sigma_head: z(&self.sigma_head),
            color_hidden: z(&self.color_hidden),
            color_out: z(&self.color_out),
        }
    }

    /// Named parameter slices in a fixed order (checkpoint and optimizer order).
    pub fn named_slices(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, d) in self.trunk.iter().enumerate() {
            out.push((format!("trunk{i}.w"), d.w.data.as_slice()));
            out.push((format!("trunk{i}.b"), d.b.as_slice()));
        }
        out.push(("sigma.w".into(), self.sigma_head.w.data.as_slice()));
        out.push(("sigma.b".into(), self.sigma_head.b.as_slice()));
        out.push(("color_hidden.w".into(), self.color_hidden.w.data.as_slice()));
        out.push(("color_hidden.b".into(), self.color_hidden.b.as_slice()));
        out.push(("color_out.w".into(), self.color_out.w.data.as_slice()));
        out.push(("color_out.b".into(), self.color_out.b.as_slice()));
        out
    }

    pub fn named_slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, d) in self.trunk.iter_mut().enumerate() {
            out.push((format!("trunk{i}.w"), d.w.data.as_mut_slice()));
            out.push((format!("trunk{i}.b"), d.b.as_mut_slice()));
        }
        out.push(("sigma.w".into(), self.sigma_head.w.data.as_mut_slice()));
        out.push(("sigma.b".into(), self.sigma_head.b.as_mut_slice()));
        out.push((
            "color_hidden.w".into(),
            self.color_hidden.w.data.as_mut_slice(),
        ));
        out.push(("color_hidden.b".into(), self.color_hidden.b.as_mut_slice()));
        out.push(("color_out.w".into(), self.color_out.w.data.as_mut_slice()));
        out.push(("color_out.b".into(), self.color_out.b.as_mut_slice()));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_slices().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_slices()
            .iter()
            .all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }
}

/// Field weights together with gradient accumulators of identical shape.
#[derive(Debug, Clone)]
pub struct FieldParams {
    pub config: FieldConfig,
    pub weights: MlpWeights,
    pub grads: MlpWeights,
}

impl FieldParams {
    /// He-style uniform fan-in initialization with the config seed; biases zero.
    pub fn init(config: FieldConfig) -> Result<FieldParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let w = config.hidden_width;
        let trunk = (0..config.hidden_layers)
            .map(|i| Dense::init_he(config.trunk_in_dim(i), w, &mut rng))
            .collect();
        let sigma_head = Dense::init_he(w, 1, &mut rng);
        let color_in = w + config.encoding.dir_len();
        let color_hidden = Dense::init_he(color_in, config.color_hidden_width, &mut rng);
        let color_out = Dense::init_he(config.color_hidden_width, 3, &mut rng);
        let weights = MlpWeights {
            trunk,
            sigma_head,
            color_hidden,
            color_out,
        };
        let grads = weights.zeros_like();
        Ok(FieldParams {
            config,
            weights,
            grads,
        })
    }

    /// Zero the gradient accumulators (start of a training step).
    pub fn zero_grads(&mut self) {
        for (_, s) in self.grads.named_slices_mut() {
            s.fill(0.0);
        }
    }
}

/// Density and color at a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput {
    pub sigma: f64,
    pub color: Vec3,
}

// Fused softplus value and derivative (sigmoid) from one exponential.
#[inline]
fn softplus_with_sig(x: f64) -> (f64, f64) {
    if x > 0.0 {
        let e = (-x).exp();
        (x + e.ln_1p(), 1.0 / (1.0 + e))
    } else {
        let e = x.exp();
        (e.ln_1p(), e / (1.0 + e))
    }
}

// Hidden-layer activation: squareplus, a smooth softplus-like rectifier that
// needs only a square root. Value 0.5 (x + sqrt(x^2 + 4)), derivative in
// (0, 1) everywhere, so units never die and finite differences stay clean.
#[inline]
fn squareplus_with_grad(x: f64) -> (f64, f64) {
    let root = (x * x + 4.0).sqrt();
    (0.5 * (x + root), 0.5 * (1.0 + x / root))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// In-place bias + squareplus; returns the matching derivative matrix.
fn add_bias_activate(m: &mut Mat, bias: &[f64]) -> Mat {
    let mut sig = Mat::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        for ((v, b), g) in m
            .row_mut(r)
            .iter_mut()
            .zip(bias)
            .zip(sig.row_mut(r).iter_mut())
        {
            let (y, d) = squareplus_with_grad(*v + b);
            *v = y;
            *g = d;
        }
    }
    sig
}

/// Recorded activations of one batched forward pass, consumed by
/// [`backward_encoded`].
pub struct FieldTape {
    enc_pos: Mat,
    trunk_act: Vec<Mat>,
    trunk_sig: Vec<Mat>,
    color_in: Mat,
    color_act: Mat,
    color_sig: Mat,
    sigma_sig: Vec<f64>,
    /// Outputs, also kept on the tape for the backward pass.
    pub sigma: Vec<f64>,
    pub rgb: Mat,
}

/// Encode sample positions into a masked row-per-sample matrix.
///
/// `mask_weights` are the flattened per-entry mask weights
/// (see `encoding::mask_entry_weights`); identity channels are untouched.
pub fn encode_positions(cfg: &EncodingConfig, positions: &[Vec3], mask_weights: &[f64]) -> Mat {
    assert_eq!(mask_weights.len(), 6 * cfg.l_pos);
    let p = cfg.pos_len();
    let offset = if cfg.include_identity { 3 } else { 0 };
    let mut out = Mat::zeros(positions.len(), p);
    let mut scratch = Vec::with_capacity(p);
    for (r, &pos) in positions.iter().enumerate() {
        scratch.clear();
        encoding::encode_into(&mut scratch, pos, cfg.l_pos, cfg.include_identity);
        let row = out.row_mut(r);
        row[..offset].copy_from_slice(&scratch[..offset]);
        for ((o, e), w) in row[offset..]
            .iter_mut()
            .zip(&scratch[offset..])
            .zip(mask_weights)
        {
            *o = e * w;
        }
    }
    out
}

/// Encode view directions, one row per input direction (no masking).
pub fn encode_directions(cfg: &EncodingConfig, dirs: &[Vec3]) -> Mat {
    let d = cfg.dir_len();
    let mut out = Mat::zeros(dirs.len(), d);
    let mut scratch = Vec::with_capacity(d);
    for (r, &dir) in dirs.iter().enumerate() {
        scratch.clear();
        encoding::encode_into(&mut scratch, dir, cfg.l_dir, cfg.include_identity);
        out.row_mut(r).copy_from_slice(&scratch);
    }
    out
}

/// Batched forward pass over pre-encoded positions and directions.
///
/// Returns per-sample density (softplus) and color (sigmoid) along with the
/// tape needed to backpropagate.
pub fn forward_encoded(params: &FieldParams, enc_pos: Mat, enc_dir: Mat) -> FieldTape {
    let cfg = &params.config;
    let w = &params.weights;
    let s = enc_pos.rows;

    let mut trunk_act: Vec<Mat> = Vec::with_capacity(cfg.hidden_layers);
    let mut trunk_sig: Vec<Mat> = Vec::with_capacity(cfg.hidden_layers);
    for (i, layer) in w.trunk.iter().enumerate() {
        let mut pre = Mat::zeros(s, layer.w.cols);
        if i == 0 {
            matmul(&enc_pos, &layer.w, &mut pre, false);
        } else if cfg.skip_layer == Some(i) {
            let prev = &trunk_act[i - 1];
            let input = concat_cols(prev, &enc_pos);
            matmul(&input, &layer.w, &mut pre, false);
        } else {
            matmul(&trunk_act[i - 1], &layer.w, &mut pre, false);
        }
        trunk_sig.push(add_bias_activate(&mut pre, &layer.b));
        trunk_act.push(pre);
    }
    let h_last = trunk_act.last().expect("at least one trunk layer");

    // Density head.
    let mut sigma_raw = Mat::zeros(s, 1);
    matmul(h_last, &w.sigma_head.w, &mut sigma_raw, false);
    let mut sigma = Vec::with_capacity(s);
    let mut sigma_sig = Vec::with_capacity(s);
    for v in &sigma_raw.data {
        let (y, d) = softplus_with_sig(v + w.sigma_head.b[0]);
        sigma.push(y);
        sigma_sig.push(d);
    }

    // Color branch conditioned on the view direction.
    let color_in = concat_cols(h_last, &enc_dir);
    let mut color_act = Mat::zeros(s, w.color_hidden.w.cols);
    matmul(&color_in, &w.color_hidden.w, &mut color_act, false);
    let color_sig = add_bias_activate(&mut color_act, &w.color_hidden.b);

    let mut rgb = Mat::zeros(s, 3);
    matmul(&color_act, &w.color_out.w, &mut rgb, false);
    for r in 0..s {
        for (v, b) in rgb.row_mut(r).iter_mut().zip(&w.color_out.b) {
            *v = sigmoid(*v + b);
        }
    }

    FieldTape {
        enc_pos,
        trunk_act,
        trunk_sig,
        color_in,
        color_act,
        color_sig,
        sigma_sig,
        sigma,
        rgb,
    }
}

/// Backward pass for one recorded forward batch.
///
/// Accumulates `dL/dtheta` into `grads` (repeated calls add), given the loss
/// gradients w.r.t. the per-sample density and color outputs.
pub fn backward_encoded(
    params: &FieldParams,
    tape: &FieldTape,
    d_sigma: &[f64],
    d_rgb: &Mat,
    grads: &mut MlpWeights,
) {
    let cfg = &params.config;
    let w = &params.weights;
    let s = tape.sigma.len();
    assert_eq!(d_sigma.len(), s);
    assert_eq!(d_rgb.rows, s);

    // Color output layer: rgb = sigmoid(color_act * Wo + bo).
    let mut d_rgb_raw = Mat::zeros(s, 3);
    for r in 0..s {
        let y = tape.rgb.row(r);
        let g = d_rgb.row(r);
        let out = d_rgb_raw.row_mut(r);
        for j in 0..3 {
            out[j] = g[j] * y[j] * (1.0 - y[j]);
        }
    }
    matmul_at_b(&tape.color_act, &d_rgb_raw, &mut grads.color_out.w, true);
    accumulate_bias(&d_rgb_raw, &mut grads.color_out.b);
    let mut d_color_act = Mat::zeros(s, w.color_out.w.rows);
    matmul_a_bt(&d_rgb_raw, &w.color_out.w, &mut d_color_act, false);

    // Color hidden layer (softplus).
    apply_softplus_grad(&mut d_color_act, &tape.color_sig);
    matmul_at_b(&tape.color_in, &d_color_act, &mut grads.color_hidden.w, true);
    accumulate_bias(&d_color_act, &mut grads.color_hidden.b);
    let mut d_color_in = Mat::zeros(s, w.color_hidden.w.rows);
    matmul_a_bt(&d_color_act, &w.color_hidden.w, &mut d_color_in, false);

    // Density head: sigma = softplus(h_last * Ws + bs).
    let mut d_sigma_raw = Mat::zeros(s, 1);
    for r in 0..s {
        d_sigma_raw.data[r] = d_sigma[r] * tape.sigma_sig[r];
    }
    let h_last = tape.trunk_act.last().unwrap();
    matmul_at_b(h_last, &d_sigma_raw, &mut grads.sigma_head.w, true);
    accumulate_bias(&d_sigma_raw, &mut grads.sigma_head.b);

    // d(h_last) collects the color branch split plus the density head.
    let width = cfg.hidden_width;
    let mut d_h = Mat::zeros(s, width);
    for r in 0..s {
        let src = d_color_in.row(r);
        let dst = d_h.row_mut(r);
        dst.copy_from_slice(&src[..width]);
        let ds = d_sigma_raw.data[r];
        for (j, v) in dst.iter_mut().enumerate() {
            *v += ds * w.sigma_head.w.data[j];
        }
    }

    // Trunk, deepest layer first.
    for i in (0..cfg.hidden_layers).rev() {
        apply_softplus_grad(&mut d_h, &tape.trunk_sig[i]);
        let layer = &w.trunk[i];
        let g = &mut grads.trunk[i];
        if i == 0 {
            matmul_at_b(&tape.enc_pos, &d_h, &mut g.w, true);
            accumulate_bias(&d_h, &mut g.b);
            break;
        }
        if cfg.skip_layer == Some(i) {
            let input = concat_cols(&tape.trunk_act[i - 1], &tape.enc_pos);
            matmul_at_b(&input, &d_h, &mut g.w, true);
            accumulate_bias(&d_h, &mut g.b);
            let mut d_input = Mat::zeros(s, layer.w.rows);
            matmul_a_bt(&d_h, &layer.w, &mut d_input, false);
            let mut next = Mat::zeros(s, width);
            for r in 0..s {
                next.row_mut(r).copy_from_slice(&d_input.row(r)[..width]);
            }
            d_h = next;
        } else {
            matmul_at_b(&tape.trunk_act[i - 1], &d_h, &mut g.w, true);
            accumulate_bias(&d_h, &mut g.b);
            let mut d_prev = Mat::zeros(s, layer.w.rows);
            matmul_a_bt(&d_h, &layer.w, &mut d_prev, false);
            d_h = d_prev;
        }
    }
}

fn apply_softplus_grad(d: &mut Mat, sig: &Mat) {
    for (g, s) in d.data.iter_mut().zip(&sig.data) {
        *g *= s;
    }
}

fn accumulate_bias(d: &Mat, bias: &mut [f64]) {
    for r in 0..d.rows {
        for (b, g) in bias.iter_mut().zip(d.row(r)) {
            *b += g;
        }
    }
}

fn concat_cols(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows);
    let mut out = Mat::zeros(a.rows, a.cols + b.cols);
    for r in 0..a.rows {
        let row = out.row_mut(r);
        row[..a.cols].copy_from_slice(a.row(r));
        row[a.cols..].copy_from_slice(b.row(r));
    }
    out
}

/// Evaluate the field at a single point with the frequency mask at `(t, T)`.
pub fn field_eval(
    params: &FieldParams,
    x: Vec3,
    d: Vec3,
    t: usize,
    t_total: usize,
) -> Result<FieldOutput> {
    let cfg = &params.config.encoding;
    let mask = encoding::mask_entry_weights(t, t_total, cfg);
    let enc_pos = encode_positions(cfg, &[x], &mask);
    let enc_dir = encode_directions(cfg, &[d]);
    let tape = forward_encoded(params, enc_pos, enc_dir);
    let out = FieldOutput {
        sigma: tape.sigma[0],
        color: Vec3::new(tape.rgb.data[0], tape.rgb.data[1], tape.rgb.data[2]),
    };
    if !out.sigma.is_finite() || !out.color.is_finite() {
        return Err(Error::NonFinite {
            context: "field_eval".into(),
            detail: format!(
                "sigma={}, color=({}, {}, {}) at x=({}, {}, {})",
                out.sigma, out.color.x, out.color.y, out.color.z, x.x, x.y, x.z
            ),
        });
    }
    Ok(out)
}

//! Sinusoidal positional encoding and the coarse-to-fine frequency mask.

use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};

/// How the frequency mask indexes the encoding.
///
/// `Band` applies one mask value per frequency band, broadcast over the
/// band's six sin/cos entries. `Entry` applies the same three-case schedule
/// over the flattened encoding entries instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskIndexing {
    #[default]
    Band,
    Entry,
}

/// Positional-encoding configuration for the radiance field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Number of position frequency bands.
    pub l_pos: usize,
    /// Number of direction frequency bands (never masked).
    pub l_dir: usize,
    /// Whether the raw coordinate triple is prepended to the encoding.
    pub include_identity: bool,
    #[serde(default)]
    pub mask_indexing: MaskIndexing,
}

impl EncodingConfig {
    /// Encoded length for a coordinate triple with `l` bands.
    pub fn encoded_len(&self, l: usize) -> usize {
        (if self.include_identity { 3 } else { 0 }) + 6 * l
    }

    pub fn pos_len(&self) -> usize {
        self.encoded_len(self.l_pos)
    }

    pub fn dir_len(&self) -> usize {
        self.encoded_len(self.l_dir)
    }
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            l_pos: 10,
            l_dir: 4,
            include_identity: true,
            mask_indexing: MaskIndexing::Band,
        }
    }
}

/// Per-band mask values, each in `[0, 1]`, non-increasing with band index.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask {
    pub values: Vec<f64>,
}

impl FrequencyMask {
    pub fn all_ones(l: usize) -> Self {
        FrequencyMask {
            values: vec![1.0; l],
        }
    }
}

// Three-case schedule for 1-based index i at schedule position x = t*L/T:
// 1 when i <= x + 3, frac(x) when x + 3 < i <= x + 6, else 0.
fn mask_case(i: usize, x: f64) -> f64 {
    let i = i as f64;
    let v = if i <= x + 3.0 {
        1.0
    } else if i <= x + 6.0 {
        x - x.floor()
    } else {
        0.0
    };
    v.clamp(0.0, 1.0)
}

/// Frequency mask at iteration `t` of a `T`-step schedule over `l` bands.
///
/// Follows the linear schedule in which roughly `t*l/T + 3` low-frequency
/// bands are fully visible, the next three carry the fractional part of
/// `t*l/T`, and the rest are zeroed.
pub fn frequency_mask(t: usize, t_total: usize, l: usize) -> FrequencyMask {
    assert!(t_total >= 1, "schedule length must be at least 1");
    assert!(t <= t_total, "t must lie in [0, T]");
    let x = t as f64 * l as f64 / t_total as f64;
    FrequencyMask {
        values: (1..=l).map(|i| mask_case(i, x)).collect(),
    }
}

/// Entry-indexed variant of the mask: the same three-case schedule applied
/// to the `6*l` flattened sin/cos entries rather than per band.
pub fn frequency_mask_entries(t: usize, t_total: usize, l: usize) -> Vec<f64> {
    assert!(t_total >= 1, "schedule length must be at least 1");
    let entries = 6 * l;
    let x = t as f64 * entries as f64 / t_total as f64;
    (1..=entries).map(|i| mask_case(i, x)).collect()
}

/// Sinusoidal encoding of a coordinate triple over `l` frequency bands.
///
/// Layout is band-major; band `k` contributes the six entries
/// `[sin(2^k x), cos(2^k x), sin(2^k y), cos(2^k y), sin(2^k z), cos(2^k z)]`.
/// When `include_identity` is set the raw `(x, y, z)` is prepended.
pub fn positional_encoding(x: Vec3, l: usize, include_identity: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity((if include_identity { 3 } else { 0 }) + 6 * l);
    encode_into(&mut out, x, l, include_identity);
    out
}

pub(crate) fn encode_into(out: &mut Vec<f64>, x: Vec3, l: usize, include_identity: bool) {
    if include_identity {
        out.extend_from_slice(&[x.x, x.y, x.z]);
    }
    if l == 0 {
        return;
    }
    // Band k holds sin/cos of 2^k * coordinate; double-angle recurrence
    // avoids a transcendental call per band.
    let mut sc = [x.x.sin_cos(), x.y.sin_cos(), x.z.sin_cos()];
    for band in 0..l {
        for (s, c) in sc {
            out.push(s);
            out.push(c);
        }
        if band + 1 < l {
            for p in sc.iter_mut() {
                let (s, c) = *p;
                *p = (2.0 * s * c, c * c - s * s);
            }
        }
    }
}

/// Masked positional encoding: each band's six entries are multiplied by the
/// band's mask value. Identity channels are never masked.
pub fn masked_encoding(x: Vec3, t: usize, t_total: usize, cfg: &EncodingConfig) -> Vec<f64> {
    let mut enc = positional_encoding(x, cfg.l_pos, cfg.include_identity);
    let weights = mask_entry_weights(t, t_total, cfg);
    let offset = if cfg.include_identity { 3 } else { 0 };
    for (e, w) in enc[offset..].iter_mut().zip(&weights) {
        *e *= w;
    }
    enc
}

/// Flattened per-entry mask weights (length `6 * l_pos`) honoring the
/// configured indexing mode.
pub fn mask_entry_weights(t: usize, t_total: usize, cfg: &EncodingConfig) -> Vec<f64> {
    match cfg.mask_indexing {
        MaskIndexing::Band => {
            let mask = frequency_mask(t, t_total, cfg.l_pos);
            mask.values
                .iter()
                .flat_map(|&v| std::iter::repeat(v).take(6))
                .collect()
        }
        MaskIndexing::Entry => frequency_mask_entries(t, t_total, cfg.l_pos),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mask_at_schedule_start() {
        let m = frequency_mask(0, 100, 16);
        let mut expect = vec![0.0; 16];
        expect[..3].fill(1.0);
        assert_eq!(m.values, expect);
    }

    #[test]
    fn mask_at_schedule_end_is_all_ones() {
        let m = frequency_mask(100, 100, 16);
        assert!(m.values.iter().all(|&v| v == 1.0));
    }

    // Golden vector: t=25, T=100, L=16 gives x = 4, so bands 1-7 are fully
    // visible, bands 8-10 carry frac(4) = 0, and the rest are zero.
    #[test]
    fn mask_golden_vector_quarter_schedule() {
        let m = frequency_mask(25, 100, 16);
        let mut expect = vec![0.0; 16];
        expect[..7].fill(1.0);
        assert_eq!(m.values, expect);
    }

    #[test]
    fn mask_ramp_carries_fractional_part() {
        // t=30, T=100, L=16: x = 4.8, bands 1-7 visible, 8-10 at 0.8.
        let m = frequency_mask(30, 100, 16);
        for i in 0..7 {
            assert_eq!(m.values[i], 1.0);
        }
        for i in 7..10 {
            assert!((m.values[i] - 0.8).abs() < 1e-12);
        }
        for i in 10..16 {
            assert_eq!(m.values[i], 0.0);
        }
    }

    #[test]
    fn mask_non_increasing_in_band() {
        for t in 0..=100 {
            let m = frequency_mask(t, 100, 16);
            for w in m.values.windows(2) {
                assert!(w[0] >= w[1], "mask increased at t={t}: {:?}", m.values);
            }
            assert!(m.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    // Full visibility is monotone: once a band reaches 1 it stays 1 for all
    // later iterations. (Ramp-zone values are not monotone in t; the band
    // count of fully visible bands is.)
    #[test]
    fn mask_visibility_grows_over_time() {
        for t in 0..100 {
            let now = frequency_mask(t, 100, 16);
            let next = frequency_mask(t + 1, 100, 16);
            for i in 0..16 {
                if now.values[i] == 1.0 {
                    assert_eq!(next.values[i], 1.0);
                }
            }
            let full = |m: &FrequencyMask| m.values.iter().filter(|&&v| v == 1.0).count();
            assert!(full(&next) >= full(&now));
        }
    }

    #[test]
    fn encoding_of_origin() {
        let enc = positional_encoding(Vec3::ZERO, 2, false);
        assert_eq!(enc.len(), 12);
        for band in 0..2 {
            for coord in 0..3 {
                assert_eq!(enc[band * 6 + coord * 2], 0.0, "sin(0) entry");
                assert_eq!(enc[band * 6 + coord * 2 + 1], 1.0, "cos(0) entry");
            }
        }
    }

    #[test]
    fn encoding_hits_unit_sine_at_half_pi() {
        let enc = positional_encoding(Vec3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0), 1, false);
        assert!((enc[0] - 1.0).abs() < 1e-15); // sin(pi/2)
        assert!(enc[1].abs() < 1e-15); // cos(pi/2)
    }

    #[test]
    fn encoding_matches_direct_transcendental_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let x = Vec3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let enc = positional_encoding(x, 4, true);
            assert_eq!(enc.len(), 3 + 24);
            assert_eq!(&enc[..3], &[x.x, x.y, x.z]);
            for k in 0..4u32 {
                let f = f64::from(2u32.pow(k));
                let base = 3 + (k as usize) * 6;
                for (j, c) in [x.x, x.y, x.z].into_iter().enumerate() {
                    assert!((enc[base + 2 * j] - (f * c).sin()).abs() < 1e-12);
                    assert!((enc[base + 2 * j + 1] - (f * c).cos()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn masked_encoding_at_schedule_end_equals_plain_encoding() {
        let cfg = EncodingConfig {
            l_pos: 8,
            ..EncodingConfig::default()
        };
        let x = Vec3::new(0.4, -1.2, 2.2);
        assert_eq!(
            masked_encoding(x, 100, 100, &cfg),
            positional_encoding(x, 8, true)
        );
    }

    #[test]
    fn masked_encoding_zeroes_high_bands_at_start() {
        let cfg = EncodingConfig {
            l_pos: 8,
            ..EncodingConfig::default()
        };
        let enc = masked_encoding(Vec3::new(0.7, 0.1, -0.3), 0, 100, &cfg);
        // Identity + first three bands survive; bands 4.. are zero.
        for v in &enc[3 + 3 * 6..] {
            assert_eq!(*v, 0.0);
        }
        assert!(enc[..3 + 18].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn masked_encoding_scales_ramp_band() {
        let cfg = EncodingConfig {
            l_pos: 16,
            ..EncodingConfig::default()
        };
        let x = Vec3::new(0.9, 0.2, -0.5);
        // t=25, T=100: band 8 (index 7) mask value is 0.
        let enc = masked_encoding(x, 25, 100, &cfg);
        for j in 0..6 {
            assert_eq!(enc[3 + 7 * 6 + j], 0.0);
        }
    }

    #[test]
    fn identity_channels_are_never_masked() {
        let cfg = EncodingConfig {
            l_pos: 6,
            ..EncodingConfig::default()
        };
        let x = Vec3::new(1.5, -2.5, 0.25);
        let enc = masked_encoding(x, 0, 100, &cfg);
        assert_eq!(&enc[..3], &[1.5, -2.5, 0.25]);
    }

    #[test]
    fn entry_indexed_mask_has_three_entry_ramp() {
        let weights = frequency_mask_entries(0, 100, 4);
        assert_eq!(weights.len(), 24);
        assert_eq!(&weights[..3], &[1.0, 1.0, 1.0]);
        assert!(weights[3..].iter().all(|&v| v == 0.0));
    }
}

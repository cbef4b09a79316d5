//! Binary checkpoint format: named parameter tensors with shape headers, the
//! optimizer state, the training RNG state, and a hash of the originating
//! config. Round trips are bit-exact.

use crate::error::{Error, Result};
use crate::field::{FieldParams, MlpWeights};
use crate::trainer::{OptimizerState, TrainConfig};
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SVCKPT01";

/// FNV-1a over the canonical TOML encoding of the config.
pub fn config_hash(cfg: &TrainConfig) -> u64 {
    let text = toml::to_string(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Everything needed to resume training exactly where it stopped.
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Next step to execute (steps `0..step` are complete).
    pub step: usize,
    pub params: FieldParams,
    pub opt: OptimizerState,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn rng(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_word_pos(self.rng_word_pos);
        rng
    }
}

fn write_tensor(w: &mut impl Write, name: &str, rows: u32, cols: u32, data: &[f64]) -> Result<()> {
    let bytes = name.as_bytes();
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn weights_tensors(prefix: &str, w: &MlpWeights) -> Vec<(String, u32, u32, Vec<f64>)> {
    let mut out = Vec::new();
    for (i, d) in w.trunk.iter().enumerate() {
        out.push((
            format!("{prefix}trunk{i}.w"),
            d.w.rows as u32,
            d.w.cols as u32,
            d.w.data.clone(),
        ));
        out.push((format!("{prefix}trunk{i}.b"), 1, d.b.len() as u32, d.b.clone()));
    }
    for (name, dense) in [
        ("sigma", &w.sigma_head),
        ("color_hidden", &w.color_hidden),
        ("color_out", &w.color_out),
    ] {
        out.push((
            format!("{prefix}{name}.w"),
            dense.w.rows as u32,
            dense.w.cols as u32,
            dense.w.data.clone(),
        ));
        out.push((
            format!("{prefix}{name}.b"),
            1,
            dense.b.len() as u32,
            dense.b.clone(),
        ));
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &TrainConfig,
    step: usize,
    params: &FieldParams,
    opt: &OptimizerState,
    rng: &ChaCha8Rng,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&config_hash(cfg).to_le_bytes())?;
    let cfg_text = toml::to_string(cfg).expect("config serializes");
    w.write_all(&(cfg_text.len() as u32).to_le_bytes())?;
    w.write_all(cfg_text.as_bytes())?;
    w.write_all(&(step as u64).to_le_bytes())?;
    w.write_all(&(opt.step as u64).to_le_bytes())?;
    w.write_all(&rng.get_seed())?;
    w.write_all(&rng.get_word_pos().to_le_bytes())?;

    let mut tensors = weights_tensors("", &params.weights);
    tensors.extend(weights_tensors("adam_m.", &opt.m));
    tensors.extend(weights_tensors("adam_v.", &opt.v));
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, rows, cols, data) in tensors {
        write_tensor(&mut w, &name, rows, cols, &data)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact_array(r)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact_array::<8>(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic (not a checkpoint)",
            path.display()
        )));
    }
    let stored_hash = read_u64(&mut r)?;
    let cfg_len = read_u32(&mut r)? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)?;
    let cfg_text = String::from_utf8(cfg_bytes)
        .map_err(|e| Error::Checkpoint(format!("config not utf-8: {e}")))?;
    let config: TrainConfig = toml::from_str(&cfg_text)
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    if config_hash(&config) != stored_hash {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }
    let step = read_u64(&mut r)? as usize;
    let opt_step = read_u64(&mut r)? as usize;
    let rng_seed = read_exact_array::<32>(&mut r)?;
    let rng_word_pos = u128::from_le_bytes(read_exact_array::<16>(&mut r)?);

    let mut params = FieldParams::init(config.field.clone())?;
    let mut opt = OptimizerState::new(&params.weights);
    opt.step = opt_step;

    let n_tensors = read_u32(&mut r)? as usize;
    let mut loaded = std::collections::BTreeMap::new();
    for _ in 0..n_tensors {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Checkpoint(format!("tensor name: {e}")))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(read_exact_array(&mut r)?));
        }
        loaded.insert(name, (rows, cols, data));
    }

    for (prefix, target) in [
        ("", &mut params.weights),
        ("adam_m.", &mut opt.m),
        ("adam_v.", &mut opt.v),
    ] {
        for (name, slice) in target.named_slices_mut() {
            let full = format!("{prefix}{name}");
            let (_, _, data) = loaded
                .get(&full)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
            if data.len() != slice.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {full}: stored {} values, expected {}",
                    data.len(),
                    slice.len()
                )));
            }
            slice.copy_from_slice(data);
        }
    }

    Ok(Checkpoint {
        config,
        step,
        params,
        opt,
        rng_seed,
        rng_word_pos,
    })
}

/// Hex SHA-256 of the checkpoint file bytes.
pub fn checkpoint_hash(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    #[test]
    fn checkpoint_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let cfg = TrainConfig::default();
        let mut params = FieldParams::init(cfg.field.clone()).unwrap();
        // Perturb weights so the file is not just the init state.
        for (_, s) in params.weights.named_slices_mut() {
            for (i, v) in s.iter_mut().enumerate() {
                *v += (i as f64 * 0.001).sin() * 1e-3;
            }
        }
        let mut opt = OptimizerState::new(&params.weights);
        opt.step = 17;
        for (_, s) in opt.m.named_slices_mut() {
            s.fill(0.25);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        rng.next_u64();
        rng.next_u64();

        save_checkpoint(&path, &cfg, 42, &params, &opt, &rng).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.opt.step, 17);
        assert_eq!(back.params.weights, params.weights);
        assert_eq!(back.opt.m, opt.m);
        assert_eq!(back.opt.v, opt.v);
        // Restored rng continues the exact stream.
        let mut restored = back.rng();
        let mut original = rng.clone();
        for _ in 0..8 {
            assert_eq!(restored.next_u64(), original.next_u64());
        }
        // Saving again produces identical bytes.
        let path2 = dir.path().join("b.ckpt");
        save_checkpoint(&path2, &cfg, 42, &params, &opt, &rng).unwrap();
        assert_eq!(
            checkpoint_hash(&path).unwrap(),
            checkpoint_hash(&path2).unwrap()
        );
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}

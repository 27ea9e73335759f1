//! Deterministic synthetic action dataset.
//!
//! Class `k` moves every coordinate sinusoidally at `k + 1` cycles per clip:
//! `A * sin(2 pi (k+1) t / T + phase(j, c)) + base(j, c) + noise`, where the
//! phase and base offset are fixed hashes of `(joint, coordinate)` and the
//! noise is i.i.d. Gaussian.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetManifest, ManifestItem, SkeletonSequence, Split};
use crate::error::{arg, Result};
use crate::rng::{mix, splitmix64, unit_f64};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    /// Training sequences per class.
    pub per_class: usize,
    /// Test sequences per class.
    pub test_per_class: usize,
    pub frames: usize,
    pub joints: usize,
    pub amplitude: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { classes: 4, per_class: 100, test_per_class: 50, frames: 64, joints: 25, amplitude: 0.5, noise: 0.1, seed: 0 }
    }
}

/// Phase in `[0, 2 pi)` for a `(joint, coordinate)` pair.
pub fn phase(joint: usize, coord: usize) -> f64 {
    2.0 * PI * unit_f64(splitmix64(mix(0x5048_4153_45, (joint * 3 + coord) as u64)))
}

/// Base offset in `[-1, 1]` for a `(joint, coordinate)` pair.
pub fn base(joint: usize, coord: usize) -> f64 {
    2.0 * unit_f64(splitmix64(mix(0x4241_5345, (joint * 3 + coord) as u64))) - 1.0
}

/// One sample of class `class`; `index` selects the noise stream.
pub fn synth_sequence(cfg: &SynthConfig, class: usize, split: Split, index: usize) -> Result<SkeletonSequence> {
    let (t_len, joints) = (cfg.frames, cfg.joints);
    let stream = mix(mix(mix(cfg.seed, class as u64), split as u64), index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| crate::Error::Argument(e.to_string()))?;
    let freq = 2.0 * PI * (class + 1) as f64 / t_len as f64;
    let mut coords = Vec::with_capacity(t_len * joints * 3);
    for t in 0..t_len {
        for j in 0..joints {
            for c in 0..3 {
                let eps = if cfg.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let v = cfg.amplitude * (freq * t as f64 + phase(j, c)).sin() + base(j, c) + eps;
                coords.push(v as f32);
            }
        }
    }
    let mut seq = SkeletonSequence::new(t_len, joints, coords)?.with_label(class as u32);
    seq.meta = vec![("source".into(), "synthetic".into()), ("index".into(), index.to_string())];
    Ok(seq)
}

/// Builds the dataset in memory, train items first, then test items, each in
/// class-major order.
pub fn synth_sequences(cfg: &SynthConfig) -> Result<Vec<(ManifestItem, SkeletonSequence)>> {
    if cfg.classes == 0 || cfg.per_class == 0 || cfg.frames == 0 || cfg.joints == 0 {
        return arg("synthetic dataset needs classes, per_class, frames and joints >= 1");
    }
    let mut jobs = Vec::new();
    for (split, n) in [(Split::Train, cfg.per_class), (Split::Test, cfg.test_per_class)] {
        for k in 0..cfg.classes {
            for i in 0..n {
                jobs.push((split, k, i));
            }
        }
    }
    let out = crate::parallel::map_indexed(&jobs, |_, &(split, k, i)| {
        let seq = synth_sequence(cfg, k, split, i)?;
        let path = format!("{}_c{k:03}_{i:05}.skl", split.as_str());
        Ok((ManifestItem { path: path.into(), label: k as u32, split }, seq))
    });
    out.into_iter().collect()
}

/// Writes all sequences plus `manifest.tsv` into `dir`.
pub fn synth_dataset(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let items = synth_sequences(cfg)?;
    let written = crate::parallel::map_indexed(&items, |_, (item, seq)| super::save_sequence(seq, dir.join(&item.path)));
    written.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { root: dir.to_path_buf(), items: items.into_iter().map(|(i, _)| i).collect() };
    manifest.save(dir.join("manifest.tsv"))?;
    Ok(manifest)
}

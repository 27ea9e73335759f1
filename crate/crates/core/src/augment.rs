//! Stochastic skeleton augmentations producing the query and key views.

use rand::seq::index::sample;
use rand::Rng;

use crate::data::{resample_time, SkeletonSequence};
use crate::error::{arg, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub shear_amplitude: f64,
    pub jitter_joint_fraction: f64,
    pub jitter_magnitude: f64,
    pub crop_ratio_min: f64,
    pub out_frames: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { shear_amplitude: 0.5, jitter_joint_fraction: 0.15, jitter_magnitude: 0.1, crop_ratio_min: 0.5, out_frames: 64 }
    }
}

impl AugmentConfig {
    /// All magnitudes zero, full-length crop.
    pub fn identity(out_frames: usize) -> Self {
        Self { shear_amplitude: 0.0, jitter_joint_fraction: 0.0, jitter_magnitude: 0.0, crop_ratio_min: 1.0, out_frames }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.shear_amplitude) {
            return arg(format!("shear_amplitude must be >= 0, got {}", self.shear_amplitude));
        }
        if !(0.0..=1.0).contains(&self.jitter_joint_fraction) {
            return arg(format!("jitter_joint_fraction must be in [0, 1], got {}", self.jitter_joint_fraction));
        }
        if !finite_nonneg(self.jitter_magnitude) {
            return arg(format!("jitter_magnitude must be >= 0, got {}", self.jitter_magnitude));
        }
        if !(self.crop_ratio_min > 0.0 && self.crop_ratio_min <= 1.0) {
            return arg(format!("crop_ratio_min must be in (0, 1], got {}", self.crop_ratio_min));
        }
        if self.out_frames == 0 {
            return arg("out_frames must be >= 1");
        }
        Ok(())
    }
}

/// Samples `I + E` with zero-diagonal `E` whose entries are uniform in
/// `[-amplitude, amplitude]`, row-major.
pub fn sample_shear<R: Rng + ?Sized>(amplitude: f64, rng: &mut R) -> [[f64; 3]; 3] {
    let mut s = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if amplitude > 0.0 {
        for (r, row) in s.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                if r != c {
                    *v = rng.random_range(-amplitude..=amplitude);
                }
            }
        }
    }
    s
}

pub fn apply_linear(seq: &SkeletonSequence, m: &[[f64; 3]; 3]) -> SkeletonSequence {
    let coords = seq
        .coords()
        .chunks_exact(3)
        .flat_map(|p| {
            let x = [p[0] as f64, p[1] as f64, p[2] as f64];
            m.map(|row| (row[0] * x[0] + row[1] * x[1] + row[2] * x[2]) as f32)
        })
        .collect();
    seq.with_coords(seq.frames(), coords)
}

pub fn shear<R: Rng + ?Sized>(seq: &SkeletonSequence, amplitude: f64, rng: &mut R) -> SkeletonSequence {
    if amplitude == 0.0 {
        return seq.clone();
    }
    let s = sample_shear(amplitude, rng);
    apply_linear(seq, &s)
}

/// Jitter plus the joints that were selected.
pub fn joint_jitter_with_selection<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (SkeletonSequence, Vec<usize>) {
    let j = seq.joints();
    let count = ((cfg.jitter_joint_fraction * j as f64).round() as usize).min(j);
    if count == 0 || cfg.jitter_magnitude == 0.0 {
        return (seq.clone(), Vec::new());
    }
    let mut picked = sample(rng, j, count).into_vec();
    picked.sort_unstable();
    let m = cfg.jitter_magnitude;
    let mut out = seq.clone();
    for t in 0..seq.frames() {
        for &joint in &picked {
            let p = out.point(t, joint);
            let q = p.map(|c| (c as f64 + rng.random_range(-m..=m)) as f32);
            out.set_point(t, joint, q);
        }
    }
    (out, picked)
}

pub fn joint_jitter<R: Rng + ?Sized>(seq: &SkeletonSequence, cfg: &AugmentConfig, rng: &mut R) -> SkeletonSequence {
    joint_jitter_with_selection(seq, cfg, rng).0
}

/// Crop window `(start, length)` for a sequence of `frames` frames.
pub fn sample_crop<R: Rng + ?Sized>(frames: usize, crop_ratio_min: f64, rng: &mut R) -> (usize, usize) {
    let ratio = if crop_ratio_min >= 1.0 { 1.0 } else { rng.random_range(crop_ratio_min..=1.0) };
    let len = ((ratio * frames as f64).round() as usize).clamp(1, frames);
    let start = if len == frames { 0 } else { rng.random_range(0..=frames - len) };
    (start, len)
}

pub fn crop(seq: &SkeletonSequence, start: usize, len: usize) -> SkeletonSequence {
    let w = seq.joints() * 3;
    seq.with_coords(len, seq.coords()[start * w..(start + len) * w].to_vec())
}

pub fn temporal_crop_resample<R: Rng + ?Sized>(seq: &SkeletonSequence, cfg: &AugmentConfig, rng: &mut R) -> Result<SkeletonSequence> {
    let (start, len) = sample_crop(seq.frames(), cfg.crop_ratio_min, rng);
    resample_time(&crop(seq, start, len), cfg.out_frames)
}

/// One augmented view: crop/resample, then jitter, then shear.
pub fn augment<R: Rng + ?Sized>(seq: &SkeletonSequence, cfg: &AugmentConfig, rng: &mut R) -> Result<SkeletonSequence> {
    let cropped = temporal_crop_resample(seq, cfg, rng)?;
    let jittered = joint_jitter(&cropped, cfg, rng);
    Ok(shear(&jittered, cfg.shear_amplitude, rng))
}

/// Query and key views drawn independently from the same source.
pub fn make_views<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(SkeletonSequence, SkeletonSequence)> {
    cfg.validate()?;
    let q = augment(seq, cfg, rng)?;
    let k = augment(seq, cfg, rng)?;
    Ok((q, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_seq(seed: u64, t: usize, j: usize) -> SkeletonSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SkeletonSequence::new(t, j, (0..t * j * 3).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    }

    #[test]
    fn shear_identity_and_zero() {
        let s = random_seq(1, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(shear(&s, 0.0, &mut rng), s);
        let z = SkeletonSequence::zeros(5, 4).unwrap();
        assert!(shear(&z, 0.7, &mut rng).coords().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn shear_matches_matrix_vector_oracle() {
        let s = random_seq(2, 6, 5);
        let out = shear(&s, 0.5, &mut ChaCha8Rng::seed_from_u64(42));
        let m = sample_shear(0.5, &mut ChaCha8Rng::seed_from_u64(42));
        for r in 0..3 {
            assert_eq!(m[r][r], 1.0);
            for c in 0..3 {
                assert!(m[r][c].abs() <= 1.5);
            }
        }
        for t in 0..6 {
            for j in 0..5 {
                let x = s.point(t, j);
                for r in 0..3 {
                    let mut acc = 0.0f64;
                    for c in 0..3 {
                        acc += m[r][c] * x[c] as f64;
                    }
                    assert_eq!(out.point(t, j)[r], acc as f32);
                }
            }
        }
    }

    #[test]
    fn jitter_identity_cases() {
        let s = random_seq(3, 5, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AugmentConfig { jitter_joint_fraction: 0.0, ..Default::default() };
        assert_eq!(joint_jitter(&s, &cfg, &mut rng), s);
        let cfg = AugmentConfig { jitter_magnitude: 0.0, ..Default::default() };
        assert_eq!(joint_jitter(&s, &cfg, &mut rng), s);
    }

    #[test]
    fn jitter_bound_and_mask() {
        let s = random_seq(4, 8, 20);
        let cfg = AugmentConfig { jitter_joint_fraction: 0.25, jitter_magnitude: 0.1, ..Default::default() };
        let (out, picked) = joint_jitter_with_selection(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(picked.len(), 5);
        for t in 0..8 {
            for j in 0..20 {
                let (a, b) = (s.point(t, j), out.point(t, j));
                if picked.contains(&j) {
                    for c in 0..3 {
                        assert!(((a[c] - b[c]) as f64).abs() <= 0.1 + 1e-6);
                    }
                } else {
                    assert_eq!(a, b);
                }
            }
        }
        assert_ne!(out, s);
    }

    #[test]
    fn crop_identity_and_single_frame() {
        let s = random_seq(5, 12, 3);
        let cfg = AugmentConfig { crop_ratio_min: 1.0, out_frames: 12, ..Default::default() };
        assert_eq!(temporal_crop_resample(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(), s);

        let one = random_seq(6, 1, 3);
        let cfg = AugmentConfig { out_frames: 7, ..Default::default() };
        let r = temporal_crop_resample(&one, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(r.frames(), 7);
        for t in 0..7 {
            assert_eq!(r.frame(t), one.frame(0));
        }
    }

    #[test]
    fn crop_matches_composition_oracle() {
        let s = random_seq(7, 40, 4);
        let cfg = AugmentConfig { crop_ratio_min: 0.3, out_frames: 16, ..Default::default() };
        let out = temporal_crop_resample(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ratio: f64 = rng.random_range(0.3..=1.0);
        let len = ((ratio * 40.0).round() as usize).max(1);
        let start = if len == 40 { 0 } else { rng.random_range(0..=40 - len) };
        let frames: Vec<f32> = (start..start + len).flat_map(|t| s.frame(t).to_vec()).collect();
        let cropped = SkeletonSequence::new(len, 4, frames).unwrap();
        assert_eq!(out, resample_time(&cropped, 16).unwrap());
    }

    #[test]
    fn views_identity_pipeline() {
        let s = random_seq(8, 10, 6);
        let cfg = AugmentConfig::identity(10);
        let (q, k) = make_views(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(q, s);
        assert_eq!(k, s);
    }

    #[test]
    fn views_differ_and_are_deterministic() {
        let s = random_seq(9, 30, 25);
        let cfg = AugmentConfig { out_frames: 16, ..Default::default() };
        let mut differing = 0;
        for trial in 0..100 {
            let (q, k) = make_views(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(trial)).unwrap();
            assert_eq!((q.frames(), k.frames()), (16, 16));
            assert_eq!((q.joints(), k.joints()), (25, 25));
            assert!(q.is_finite() && k.is_finite());
            if q != k {
                differing += 1;
            }
            let again = make_views(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(trial)).unwrap();
            assert_eq!((q, k), again);
        }
        assert!(differing >= 99);
    }

    #[test]
    fn rejects_invalid_config() {
        assert!(AugmentConfig { crop_ratio_min: 0.0, ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { jitter_joint_fraction: 1.5, ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { shear_amplitude: -1.0, ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { out_frames: 0, ..Default::default() }.validate().is_err());
    }
}

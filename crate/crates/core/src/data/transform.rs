use super::{SkeletonSequence, SkeletonTopology};
use crate::error::{arg, Error, Result};

/// Linear-interpolation resampling along time. Output frame `i` samples the
/// input at position `i * (T - 1) / (T_out - 1)`.
pub fn resample_time(seq: &SkeletonSequence, out_frames: usize) -> Result<SkeletonSequence> {
    if out_frames == 0 {
        return arg("resample_time needs out_frames >= 1");
    }
    let t_in = seq.frames();
    if out_frames == t_in {
        return Ok(seq.clone());
    }
    let width = seq.joints() * 3;
    let mut coords = Vec::with_capacity(out_frames * width);
    for i in 0..out_frames {
        let pos = if out_frames == 1 || t_in == 1 { 0.0 } else { (i * (t_in - 1)) as f64 / (out_frames - 1) as f64 };
        let lo = (pos.floor() as usize).min(t_in - 1);
        let hi = (lo + 1).min(t_in - 1);
        let w = pos - lo as f64;
        let (a, b) = (seq.frame(lo), seq.frame(hi));
        coords.extend(a.iter().zip(b).map(|(&a, &b)| {
            let (a, b) = (a as f64, b as f64);
            (a + (b - a) * w) as f32
        }));
    }
    Ok(seq.with_coords(out_frames, coords))
}

/// Bone view: each joint minus its parent; the root becomes zero.
pub fn to_bone(seq: &SkeletonSequence, topo: &SkeletonTopology) -> Result<SkeletonSequence> {
    if topo.joints() != seq.joints() {
        return Err(Error::Argument(format!("topology has {} joints, sequence has {}", topo.joints(), seq.joints())));
    }
    let mut out = seq.with_coords(seq.frames(), vec![0.0; seq.coords().len()]);
    for t in 0..seq.frames() {
        for &(p, c) in &topo.edges {
            let (a, b) = (seq.point(t, c), seq.point(t, p));
            out.set_point(t, c, [a[0] - b[0], a[1] - b[1], a[2] - b[2]]);
        }
    }
    Ok(out)
}

/// Motion view: forward difference along time with a zero last frame.
pub fn to_motion(seq: &SkeletonSequence) -> SkeletonSequence {
    let w = seq.joints() * 3;
    let src = seq.coords();
    let mut coords = vec![0.0f32; src.len()];
    for t in 0..seq.frames().saturating_sub(1) {
        for k in 0..w {
            coords[t * w + k] = src[(t + 1) * w + k] - src[t * w + k];
        }
    }
    seq.with_coords(seq.frames(), coords)
}

/// Input stream fed to the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Joint,
    Bone,
    Motion,
}

impl View {
    pub fn apply(self, seq: &SkeletonSequence, topo: &SkeletonTopology) -> Result<SkeletonSequence> {
        match self {
            View::Joint => Ok(seq.clone()),
            View::Bone => to_bone(seq, topo),
            View::Motion => Ok(to_motion(seq)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            View::Joint => "joint",
            View::Bone => "bone",
            View::Motion => "motion",
        }
    }
}

impl std::str::FromStr for View {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(View::Joint),
            "bone" => Ok(View::Bone),
            "motion" => Ok(View::Motion),
            other => Err(Error::Argument(format!("unknown view {other:?} (joint|bone|motion)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, j: usize) -> SkeletonSequence {
        let coords = (0..t * j * 3).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        SkeletonSequence::new(t, j, coords).unwrap()
    }

    // independent scalar interpolation: evaluates one coordinate track at a
    // real-valued time
    fn interp_track(track: &[f64], pos: f64) -> f64 {
        let i = pos.floor() as usize;
        if i + 1 >= track.len() {
            return track[track.len() - 1];
        }
        let f = pos - i as f64;
        track[i] * (1.0 - f) + track[i + 1] * f
    }

    #[test]
    fn resample_identity_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_seq(&mut rng, 9, 4);
        assert_eq!(resample_time(&s, 9).unwrap(), s);

        let mut coords = vec![0.0f32; 2 * 2 * 3];
        coords[6..].fill(1.0);
        let s = SkeletonSequence::new(2, 2, coords).unwrap();
        let r = resample_time(&s, 3).unwrap();
        assert!(r.frame(1).iter().all(|&c| c == 0.5));
        assert!(r.frame(2).iter().all(|&c| c == 1.0));
    }

    #[test]
    fn resample_single_frame_replicates() {
        let s = SkeletonSequence::new(1, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let r = resample_time(&s, 4).unwrap();
        assert_eq!(r.frames(), 4);
        assert!(r.coords().chunks(3).all(|c| c == [1.0, 2.0, 3.0]));
        assert!(resample_time(&s, 0).is_err());
    }

    #[test]
    fn resample_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_seq(&mut rng, 17, 5);
        let up = resample_time(&s, 64).unwrap();
        let down = resample_time(&up, 17).unwrap();
        for j in 0..5 {
            for c in 0..3 {
                let track: Vec<f64> = (0..17).map(|t| s.point(t, j)[c] as f64).collect();
                let up_track: Vec<f64> = (0..64).map(|i| interp_track(&track, i as f64 * 16.0 / 63.0)).collect();
                for i in 0..64 {
                    assert!((up.point(i, j)[c] as f64 - up_track[i]).abs() < 1e-6);
                }
                for t in 0..17 {
                    let oracle = interp_track(&up_track, t as f64 * 63.0 / 16.0);
                    assert!((down.point(t, j)[c] as f64 - oracle).abs() < 1e-5);
                    // round trip error is bounded by the local second difference
                    let lo = t.saturating_sub(1);
                    let hi = (t + 1).min(16);
                    let span = (lo..=hi).map(|k| track[k]).fold(f64::NEG_INFINITY, f64::max)
                        - (lo..=hi).map(|k| track[k]).fold(f64::INFINITY, f64::min);
                    assert!((down.point(t, j)[c] as f64 - track[t]).abs() <= span + 1e-5);
                }
            }
        }
    }

    #[test]
    fn bone_definition() {
        let topo = SkeletonTopology::chain(2);
        let mut s = SkeletonSequence::zeros(3, 2).unwrap();
        for t in 0..3 {
            s.set_point(t, 0, [t as f32, 1.0, 2.0]);
            s.set_point(t, 1, [t as f32 + 1.0, 1.0, 2.0]);
        }
        let b = to_bone(&s, &topo).unwrap();
        for t in 0..3 {
            assert_eq!(b.point(t, 0), [0.0; 3]);
            assert_eq!(b.point(t, 1), [1.0, 0.0, 0.0]);
        }
        let c = SkeletonSequence::new(2, 2, vec![0.3; 12]).unwrap();
        assert!(to_bone(&c, &topo).unwrap().coords().iter().all(|&x| x == 0.0));
        assert!(to_bone(&c, &SkeletonTopology::chain(3)).is_err());
    }

    #[test]
    fn bone_matches_subtraction_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let topo = SkeletonTopology::ntu25();
        let s = random_seq(&mut rng, 6, 25);
        let b = to_bone(&s, &topo).unwrap();
        let mut parent = [usize::MAX; 25];
        for &(p, c) in &topo.edges {
            parent[c] = p;
        }
        for t in 0..6 {
            for j in 0..25 {
                let want: [f32; 3] = if parent[j] == usize::MAX {
                    [0.0; 3]
                } else {
                    let (a, p) = (s.point(t, j), s.point(t, parent[j]));
                    [a[0] - p[0], a[1] - p[1], a[2] - p[2]]
                };
                assert_eq!(b.point(t, j), want);
            }
        }
    }

    #[test]
    fn motion_cases() {
        let c = SkeletonSequence::new(4, 2, vec![1.5; 24]).unwrap();
        assert!(to_motion(&c).coords().iter().all(|&x| x == 0.0));
        let one = SkeletonSequence::new(1, 2, vec![3.0; 6]).unwrap();
        let m = to_motion(&one);
        assert_eq!(m.frames(), 1);
        assert!(m.coords().iter().all(|&x| x == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_seq(&mut rng, 10, 3);
        let m = to_motion(&s);
        for t in 0..10 {
            for j in 0..3 {
                for k in 0..3 {
                    let want = if t == 9 { 0.0 } else { s.point(t + 1, j)[k] - s.point(t, j)[k] };
                    assert_eq!(m.point(t, j)[k], want);
                }
            }
        }
    }
}

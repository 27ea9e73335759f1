use crate::error::{arg, Result};

/// A single-body skeleton clip: `frames × joints × 3` coordinates stored in
/// (frame, joint, coordinate) order.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: usize,
    joints: usize,
    coords: Vec<f32>,
    pub label: Option<u32>,
    pub meta: Vec<(String, String)>,
}

impl SkeletonSequence {
    pub fn new(frames: usize, joints: usize, coords: Vec<f32>) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return arg(format!("sequence must have T >= 1 and J >= 1, got T={frames} J={joints}"));
        }
        if coords.len() != frames * joints * 3 {
            return arg(format!("expected {} coordinates for T={frames} J={joints}, got {}", frames * joints * 3, coords.len()));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return arg(format!("coordinate {i} is not finite"));
        }
        Ok(Self { frames, joints, coords, label: None, meta: Vec::new() })
    }

    pub fn zeros(frames: usize, joints: usize) -> Result<Self> {
        Self::new(frames, joints, vec![0.0; frames * joints * 3])
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = Some(label);
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn coords(&self) -> &[f32] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f32] {
        &mut self.coords
    }

    #[inline]
    pub fn point(&self, t: usize, j: usize) -> [f32; 3] {
        let o = (t * self.joints + j) * 3;
        [self.coords[o], self.coords[o + 1], self.coords[o + 2]]
    }

    #[inline]
    pub fn set_point(&mut self, t: usize, j: usize, p: [f32; 3]) {
        let o = (t * self.joints + j) * 3;
        self.coords[o..o + 3].copy_from_slice(&p);
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let w = self.joints * 3;
        &self.coords[t * w..(t + 1) * w]
    }

    /// Copy with the same label and metadata but new coordinates.
    pub(crate) fn with_coords(&self, frames: usize, coords: Vec<f32>) -> Self {
        debug_assert_eq!(coords.len(), frames * self.joints * 3);
        Self { frames, joints: self.joints, coords, label: self.label, meta: self.meta.clone() }
    }

    /// `T` rows of `3J` values: each row is one whole skeleton.
    pub fn time_major(&self) -> Vec<f64> {
        self.coords.iter().map(|&c| c as f64).collect()
    }

    /// `J` rows of `3T` values: each row is one joint trajectory. Rows follow
    /// `joint_order`.
    pub fn space_major(&self, joint_order: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coords.len());
        for &j in joint_order {
            for t in 0..self.frames {
                out.extend(self.point(t, j).iter().map(|&c| c as f64));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_nan() {
        assert!(SkeletonSequence::new(0, 3, vec![]).is_err());
        assert!(SkeletonSequence::new(1, 1, vec![0.0; 2]).is_err());
        assert!(SkeletonSequence::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn reshapes() {
        let coords: Vec<f32> = (0..2 * 3 * 3).map(|i| i as f32).collect();
        let s = SkeletonSequence::new(2, 3, coords).unwrap();
        let tm = s.time_major();
        assert_eq!(tm.len(), 2 * 9);
        assert_eq!(&tm[9..12], &[9.0, 10.0, 11.0]);
        let sm = s.space_major(&[0, 1, 2]);
        // joint 1 trajectory: frame 0 then frame 1
        assert_eq!(&sm[6..12], &[3.0, 4.0, 5.0, 12.0, 13.0, 14.0]);
        let rev = s.space_major(&[2, 1, 0]);
        assert_eq!(&rev[0..3], &[6.0, 7.0, 8.0]);
    }
}

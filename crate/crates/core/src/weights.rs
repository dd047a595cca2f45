//! Sparse per-point joint influences (at most four, SMPL convention).

use std::fmt;

pub const MAX_INFLUENCES: usize = 4;

/// Up to four `(joint, weight)` pairs, sorted by descending weight then joint index.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct JointWeights {
    len: u8,
    joints: [u32; MAX_INFLUENCES],
    weights: [f64; MAX_INFLUENCES],
}

impl fmt::Debug for JointWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.iter()).finish()
    }
}

impl JointWeights {
    pub fn single(joint: u32) -> Self {
        let mut w = JointWeights::default();
        w.len = 1;
        w.joints[0] = joint;
        w.weights[0] = 1.0;
        w
    }

    /// Merge duplicate joints, keep the four largest positive weights and
    /// renormalize them to sum to one. `None` if no positive weight remains.
    pub fn top4<I: IntoIterator<Item = (u32, f64)>>(pairs: I) -> Option<Self> {
        let mut acc = WeightAccumulator::default();
        for (j, w) in pairs {
            acc.add(j, w);
        }
        acc.finish()
    }

    /// Build from already-normalized pairs without renormalizing.
    pub fn from_raw(pairs: &[(u32, f64)]) -> Self {
        assert!(pairs.len() <= MAX_INFLUENCES);
        let mut w = JointWeights::default();
        for (i, &(j, v)) in pairs.iter().enumerate() {
            w.joints[i] = j;
            w.weights[i] = v;
        }
        w.len = pairs.len() as u8;
        w
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        (0..self.len()).map(|i| (self.joints[i], self.weights[i]))
    }

    pub fn sum(&self) -> f64 {
        self.iter().map(|(_, w)| w).sum()
    }

    /// Weight of `joint`, zero if absent.
    pub fn get(&self, joint: u32) -> f64 {
        self.iter().find(|&(j, _)| j == joint).map_or(0.0, |(_, w)| w)
    }

    pub fn max_joint(&self) -> Option<u32> {
        self.iter().map(|(j, _)| j).max()
    }
}

/// Sums weights per joint; used for barycentric and trilinear blends.
#[derive(Default, Debug, Clone)]
pub struct WeightAccumulator {
    entries: Vec<(u32, f64)>,
}

impl WeightAccumulator {
    pub fn add(&mut self, joint: u32, weight: f64) {
        if weight == 0.0 {
            return;
        }
        match self.entries.iter_mut().find(|(j, _)| *j == joint) {
            Some(e) => e.1 += weight,
            None => self.entries.push((joint, weight)),
        }
    }

    pub fn add_scaled(&mut self, w: &JointWeights, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for (j, v) in w.iter() {
            self.add(j, v * scale);
        }
    }

    pub fn finish(mut self) -> Option<JointWeights> {
        self.entries.retain(|&(_, w)| w > 0.0 && w.is_finite());
        self.entries
            .sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        self.entries.truncate(MAX_INFLUENCES);
        let total: f64 = self.entries.iter().map(|e| e.1).sum();
        if self.entries.is_empty() || total <= 0.0 {
            return None;
        }
        let mut out = JointWeights::default();
        for (i, &(j, w)) in self.entries.iter().enumerate() {
            out.joints[i] = j;
            out.weights[i] = w / total;
        }
        out.len = self.entries.len() as u8;
        Some(out)
    }
}

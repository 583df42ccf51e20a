//! Raw observation features: semantic one-hots, depth bumps, view angles.
//!
//! Layer normalization is applied to each projected feature vector, which
//! makes it invariant to the overall scale of its input. A raw scalar depth
//! would therefore be indistinguishable from any positive multiple of
//! itself, so depth is featurized with a small radial basis over the
//! normalized range before projection: different depths then produce
//! different activation patterns rather than rescalings of one pattern.

use crate::navsim::{PanoObservation, ViewSemantic, DEFAULT_MAX_RANGE, NUM_VIEWS};

/// Semantic feature width: open space, wall, and 26 landmark classes.
pub const SEMANTIC_CLASSES: usize = 28;
/// Number of radial basis bumps for depth featurization.
pub const DEPTH_BINS: usize = 8;
/// Angle feature width: (sin, cos) of the view heading.
pub const ANGLE_FEATURES: usize = 2;

/// One-hot semantic class for a view.
pub fn semantic_features(sem: ViewSemantic) -> [f64; SEMANTIC_CLASSES] {
    let mut out = [0.0; SEMANTIC_CLASSES];
    let idx = match sem {
        ViewSemantic::Open => 0,
        ViewSemantic::Wall => 1,
        ViewSemantic::Landmark(id) => 2 + (id as usize).min(25),
    };
    out[idx] = 1.0;
    out
}

/// Radial basis featurization of a depth reading normalized by the maximum
/// range. Centers are evenly spaced over [0, 1] with width equal to their
/// spacing.
pub fn depth_features(depth: f64) -> [f64; DEPTH_BINS] {
    let x = (depth / DEFAULT_MAX_RANGE).clamp(0.0, 1.0);
    let spacing = 1.0 / (DEPTH_BINS - 1) as f64;
    let mut out = [0.0; DEPTH_BINS];
    for (i, slot) in out.iter_mut().enumerate() {
        let c = i as f64 * spacing;
        let z = (x - c) / spacing;
        *slot = (-0.5 * z * z).exp();
    }
    out
}

/// Flattened per-view feature matrices for a panorama: semantics
/// `[12, 28]`, depth `[12, 8]`, and angles `[12, 2]` in row-major order.
pub fn observation_features(obs: &PanoObservation) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut sem = Vec::with_capacity(NUM_VIEWS * SEMANTIC_CLASSES);
    let mut depth = Vec::with_capacity(NUM_VIEWS * DEPTH_BINS);
    let mut angle = Vec::with_capacity(NUM_VIEWS * ANGLE_FEATURES);
    for view in &obs.views {
        sem.extend_from_slice(&semantic_features(view.semantic));
        depth.extend_from_slice(&depth_features(view.depth));
        angle.push(view.sin);
        angle.push(view.cos);
    }
    (sem, depth, angle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn semantic_one_hot_is_exclusive() {
        for sem in [
            ViewSemantic::Open,
            ViewSemantic::Wall,
            ViewSemantic::Landmark(0),
            ViewSemantic::Landmark(25),
        ] {
            let f = semantic_features(sem);
            assert_eq!(f.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(f.iter().filter(|&&v| v == 0.0).count(), SEMANTIC_CLASSES - 1);
        }
        assert_ne!(
            semantic_features(ViewSemantic::Open),
            semantic_features(ViewSemantic::Wall)
        );
        assert_ne!(
            semantic_features(ViewSemantic::Landmark(3)),
            semantic_features(ViewSemantic::Landmark(4))
        );
    }

    #[test]
    fn depth_features_separate_depths_up_to_scale() {
        let near = depth_features(0.5);
        let far = depth_features(4.0);
        assert_ne!(near, far);
        let (mut dn, mut df) = (near, far);
        let norm = |v: &mut [f64]| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
        };
        norm(&mut dn);
        norm(&mut df);
        let dot: f64 = dn.iter().zip(&df).map(|(a, b)| a * b).sum();
        assert!(dot < 0.999, "depth patterns must differ in direction, dot = {dot}");
    }

    #[test]
    fn depth_features_are_bounded_and_peak_at_centers() {
        for i in 0..DEPTH_BINS {
            let center = i as f64 / (DEPTH_BINS - 1) as f64 * DEFAULT_MAX_RANGE;
            let f = depth_features(center);
            assert!((f[i] - 1.0).abs() < 1e-12);
            for v in f {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

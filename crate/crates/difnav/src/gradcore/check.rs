//! Finite-difference gradient checking.
//!
//! Compares analytic gradients from [`Graph::backward`] against central
//! differences of the loss. Central differences at step h carry O(h²) error,
//! so with h = 1e-3 a correct gradient sits far below the 1e-4 relative
//! tolerance while a wrong backward rule lands far above it.

use crate::error::Result;
use crate::gradcore::graph::{Graph, NodeId};
use crate::gradcore::tensor::ParamSet;
use crate::rng::stream;
use rand::seq::index::sample;

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Cap on coordinates checked per parameter (0 = all).
    pub max_coords_per_param: usize,
    /// Seed for coordinate subsampling.
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            step: 1e-3,
            tolerance: 1e-4,
            max_coords_per_param: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

impl ParamCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    // The 1e-7 floor keeps near-zero gradients from tripping on central
    // difference noise (~1e-13·|f| at h = 1e-3) while still flagging any
    // error of meaningful absolute size.
    let scale = a.abs().max(n.abs()).max(1e-7);
    (a - n).abs() / scale
}

/// Check analytic gradients of `build`'s scalar loss for every parameter.
///
/// `build` must construct the loss deterministically from the parameter
/// values alone, so the forward value is a pure function of `params`.
pub fn check_gradients<F>(params: &ParamSet, build: F, opts: &CheckOptions) -> Result<Vec<ParamCheck>>
where
    F: Fn(&ParamSet, &mut Graph) -> Result<NodeId>,
{
    let mut analytic = params.clone();
    let mut graph = Graph::new();
    let loss = build(&analytic, &mut graph)?;
    graph.backward(loss, &mut analytic)?;

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(p, &mut g)?;
        Ok(g.scalar_value(l))
    };

    let mut reports = Vec::new();
    let mut scratch = params.clone();
    for (name, tensor) in analytic.iter() {
        let grad = tensor.grad().expect("backward fills every parameter");
        let n = tensor.numel();
        let coords: Vec<usize> = if opts.max_coords_per_param == 0 || opts.max_coords_per_param >= n
        {
            (0..n).collect()
        } else {
            let mut rng = stream(opts.seed, "gradcheck", 0);
            let mut picked = sample(&mut rng, n, opts.max_coords_per_param).into_vec();
            picked.sort_unstable();
            picked
        };

        let mut report = ParamCheck {
            name: name.to_string(),
            coords_checked: coords.len(),
            max_rel_err: 0.0,
            worst_coord: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for &c in &coords {
            let original = scratch.get(name).unwrap().data()[c];
            scratch.get_mut(name).unwrap().data_mut()[c] = original + opts.step;
            let f_plus = eval(&scratch)?;
            scratch.get_mut(name).unwrap().data_mut()[c] = original - opts.step;
            let f_minus = eval(&scratch)?;
            scratch.get_mut(name).unwrap().data_mut()[c] = original;

            let numeric = (f_plus - f_minus) / (2.0 * opts.step);
            let err = rel_err(grad[c], numeric);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_coord = c;
                report.analytic_at_worst = grad[c];
                report.numeric_at_worst = numeric;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Convenience assertion for tests: every parameter passes at the options'
/// tolerance.
pub fn assert_gradients_match<F>(params: &ParamSet, build: F, opts: &CheckOptions)
where
    F: Fn(&ParamSet, &mut Graph) -> Result<NodeId>,
{
    let reports = check_gradients(params, build, opts).expect("gradient check failed to run");
    for r in &reports {
        assert!(
            r.passed(opts.tolerance),
            "gradient mismatch for '{}' at coord {}: analytic {} vs numeric {} (rel err {:.3e})",
            r.name,
            r.worst_coord,
            r.analytic_at_worst,
            r.numeric_at_worst,
            r.max_rel_err
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::tensor::Tensor;
    use rand::Rng;

    #[test]
    fn sum_of_layer_norm_matches_finite_differences() {
        let mut rng = stream(7, "check-test", 0);
        let mut params = ParamSet::new();
        params
            .insert("w", Tensor::uniform_fan_in(vec![4, 4], 4, &mut rng))
            .unwrap();
        // Random gain keeps sum(LN(·)) from collapsing to an identically
        // zero loss, which would leave nothing for the check to compare.
        let gain: Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..1.5)).collect();
        let bias: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        params
            .insert("gain", Tensor::new(vec![4], gain).unwrap())
            .unwrap();
        params
            .insert("bias", Tensor::new(vec![4], bias).unwrap())
            .unwrap();
        let x_data: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();

        assert_gradients_match(
            &params,
            move |p, g| {
                let w = g.param(p, "w")?;
                let gain = g.param(p, "gain")?;
                let bias = g.param(p, "bias")?;
                let x = g.input(vec![3, 4], x_data.clone())?;
                let h = g.matmul(x, w)?;
                let ln = g.layer_norm(h, gain, bias, 1e-5)?;
                Ok(g.sum_all(ln))
            },
            &CheckOptions::default(),
        );
    }

    #[test]
    fn subsampling_checks_at_most_the_cap() {
        let mut params = ParamSet::new();
        params
            .insert("w", Tensor::full(vec![5, 5], 0.3))
            .unwrap();
        let opts = CheckOptions {
            max_coords_per_param: 4,
            ..CheckOptions::default()
        };
        let reports = check_gradients(
            &params,
            |p, g| {
                let w = g.param(p, "w")?;
                let sq = g.mul(w, w)?;
                Ok(g.sum_all(sq))
            },
            &opts,
        )
        .unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].coords_checked, 4);
        assert!(reports[0].passed(opts.tolerance));
    }

    #[test]
    fn broken_gradient_is_detected() {
        use std::cell::Cell;

        // The first build call feeds backward; every later call is a
        // finite-difference probe and returns a doubled loss. Analytic and
        // numeric gradients then disagree by a factor of two, which the
        // check must flag.
        let mut params = ParamSet::new();
        params.insert("w", Tensor::full(vec![3], 0.7)).unwrap();
        let first = Cell::new(true);
        let reports = check_gradients(
            &params,
            move |p, g| {
                let w = g.param(p, "w")?;
                let sq = g.mul(w, w)?;
                let s = g.sum_all(sq);
                let k = if first.get() { 1.0 } else { 2.0 };
                first.set(false);
                Ok(g.scale(s, k))
            },
            &CheckOptions::default(),
        )
        .unwrap();
        assert!(!reports[0].passed(1e-4));
        assert!(reports[0].max_rel_err > 0.4);
    }
}

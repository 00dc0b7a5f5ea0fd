//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Graph, ParamStore, Var};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Step of the five-point central stencil.
    pub step: f64,
    /// Relative errors are `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (evenly strided).
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            floor: 1e-6,
            max_coords_per_param: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Coordinates whose probes crossed a non-differentiable boundary.
    pub excluded: Vec<Coordinate>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance && self.checked > 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of the scalar built by `build` against
/// central differences for every parameter coordinate in `store`. The
/// five-point stencil keeps both truncation and round-off near 1e-11, so
/// gradients of order 1e-7 on losses of order 10 still resolve.
///
/// A coordinate is excluded (and reported) when any probe changes the
/// graph's kink signature, i.e. a hinge, clamp or arg-min selection flips.
pub fn gradient_check<F>(store: &ParamStore, build: F, opts: &GradCheckOptions) -> GradCheckReport
where
    F: Fn(&mut Graph<'_>) -> Var,
{
    let (grads, base_sig) = {
        let mut g = Graph::with_kink_tracking(store);
        let loss = build(&mut g);
        (g.backward(loss), g.kink_signature().unwrap_or(&[]).to_vec())
    };

    let eval = |s: &ParamStore| -> (f64, Vec<u8>) {
        let mut g = Graph::with_kink_tracking(s);
        let loss = build(&mut g);
        (g.scalar(loss), g.kink_signature().unwrap_or(&[]).to_vec())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        excluded: Vec::new(),
    };
    let mut probe = store.clone();
    for id in store.ids() {
        let n = store.get(id).len();
        let stride = match opts.max_coords_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for k in (0..n).step_by(stride) {
            let orig = store.get(id).as_slice()[k];
            let mut at = |offset: f64| {
                probe.get_mut(id).as_mut_slice()[k] = orig + offset * opts.step;
                eval(&probe)
            };
            let probes = [at(2.0), at(1.0), at(-1.0), at(-2.0)];
            probe.get_mut(id).as_mut_slice()[k] = orig;

            let coord = Coordinate {
                param: store.name(id).to_string(),
                index: k,
            };
            if probes.iter().any(|(_, sig)| *sig != base_sig) {
                report.excluded.push(coord);
                continue;
            }
            let f = |i: usize| probes[i].0;
            let numeric = (-f(0) + 8.0 * f(1) - 8.0 * f(2) + f(3)) / (12.0 * opts.step);
            let analytic = grads.get(id).map_or(0.0, |g| g.as_slice()[k]);
            let err = relative_error(analytic, numeric, opts.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(coord);
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[test]
    fn quadratic_toy_loss_is_exact() {
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::row_vector(&[0.3, -1.2, 2.5]));
        let report = gradient_check(
            &store,
            |g| {
                let v = g.param(x);
                let sq = g.square(v);
                let s = g.sum(sq);
                g.scale(s, 1.5)
            },
            &GradCheckOptions::default(),
        );
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn hinge_at_kink_is_excluded_not_failed() {
        let mut store = ParamStore::new();
        // First entry sits exactly on the hinge boundary.
        let x = store.add("x", Matrix::row_vector(&[0.0, 0.8]));
        let report = gradient_check(
            &store,
            |g| {
                let v = g.param(x);
                let h = g.relu(v);
                g.sum(h)
            },
            &GradCheckOptions::default(),
        );
        assert_eq!(report.excluded.len(), 1);
        assert_eq!(report.excluded[0].index, 0);
        assert_eq!(report.checked, 1);
        assert!(report.max_rel_error < 1e-9);
    }

    #[test]
    fn relative_error_uses_floor_for_tiny_gradients() {
        assert!((relative_error(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-12);
        assert!((relative_error(1e-9, 2e-9, 1e-6) - 1e-3).abs() < 1e-12);
    }
}

//! Finite-difference verification of the reverse pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamSet, Tape, Var};

/// One coordinate whose analytic and numeric derivatives disagree.
#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares backward gradients against central differences
/// `(f(x+eps) - f(x-eps)) / (2 eps)` for up to `max_coords_per_param`
/// coordinates of every parameter (seeded subsample when larger).
///
/// `build` must construct the same scalar loss graph each call; tapes are
/// created in eval mode with a fixed seed, so even dropout-free determinism
/// is not left to the caller.
pub fn grad_check(
    params: &mut ParamSet,
    mut build: impl FnMut(&mut Tape, &ParamSet) -> Var,
    eps: f64,
    tol: f64,
    max_coords_per_param: usize,
    seed: u64,
) -> GradCheckReport {
    params.zero_grads();
    let mut tape = Tape::new(false, seed);
    let loss = build(&mut tape, params);
    tape.backward(loss, params);
    let analytic: Vec<Vec<f64>> =
        params.ids().map(|id| params.grad(id).data().to_vec()).collect();

    let mut eval = |params: &ParamSet| -> f64 {
        let mut tape = Tape::new(false, seed);
        let loss = build(&mut tape, params);
        tape.data(loss)[0]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut report = GradCheckReport::default();
    for id in params.ids().collect::<Vec<_>>() {
        let len = params.value(id).len();
        let coords: Vec<usize> = if len <= max_coords_per_param {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, max_coords_per_param).into_vec()
        };
        for coord in coords {
            let orig = params.value(id).data()[coord];
            params.value_mut(id).data_mut()[coord] = orig + eps;
            let f_plus = eval(params);
            params.value_mut(id).data_mut()[coord] = orig - eps;
            let f_minus = eval(params);
            params.value_mut(id).data_mut()[coord] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[id.0][coord];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel >= tol {
                report.failures.push(GradCheckFailure {
                    param: params.name(id).to_string(),
                    coord,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;

    #[test]
    fn quadratic_matches_analytic_closely() {
        let mut set = ParamSet::new();
        let id = set.add("x", Tensor::scalar(3.0));
        let report = grad_check(
            &mut set,
            |tape, set| {
                let x = tape.param(set, set.id("x").unwrap());
                tape.mul(x, x)
            },
            1e-5,
            1e-4,
            16,
            0,
        );
        assert!(report.passed(), "{:?}", report.failures);
        assert_eq!(report.checked, 1);
        assert!(report.max_rel_err < 1e-8, "rel err {}", report.max_rel_err);
        // Gradient of x*x at 3 is 6.
        assert!((set.grad(id).data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn lstm_cell_passes_on_random_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut set = ParamSet::new();
        set.lstm("cell", 3, 4, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = grad_check(
            &mut set,
            move |tape, set| {
                let w = tape.param(set, set.id("cell.w").unwrap());
                let b = tape.param(set, set.id("cell.b").unwrap());
                let xv = tape.constant(Tensor::from_vec(&[3], x.clone()));
                let hv = tape.constant(Tensor::from_vec(&[4], h.clone()));
                let cv = tape.constant(Tensor::from_vec(&[4], c.clone()));
                let (h2, c2) = tape.lstm_cell(w, b, xv, hv, cv);
                let both = tape.concat(&[h2, c2]);
                let sq = tape.mul(both, both);
                tape.sum(sq)
            },
            1e-5,
            1e-4,
            10,
            11,
        );
        assert!(report.passed(), "{:?}", report.failures);
        assert!(report.checked >= 20);
    }

    #[test]
    fn report_lists_coordinates_outside_tolerance() {
        // Central differences on x^3 carry an eps^2 error term; a huge eps
        // makes that visible and must be reported, not hidden.
        let mut set = ParamSet::new();
        set.add("x", Tensor::scalar(1.0));
        let report = grad_check(
            &mut set,
            |tape, set| {
                let x = tape.param(set, set.id("x").unwrap());
                let x2 = tape.mul(x, x);
                tape.mul(x2, x)
            },
            0.5,
            1e-3,
            16,
            0,
        );
        assert!(!report.passed());
        assert_eq!(report.failures.len(), 1);
        let f = &report.failures[0];
        assert_eq!(f.param, "x");
        assert!((f.analytic - 3.0).abs() < 1e-12);
        assert!((f.numeric - 3.25).abs() < 1e-9); // 3 x^2 + eps^2
    }
}

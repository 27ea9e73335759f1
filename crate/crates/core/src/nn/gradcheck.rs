//! Central finite-difference checking of analytic gradients.
//!
//! The numeric side only ever evaluates the scalar function, so it is
//! independent of the tape's backward pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamGrads, ParamStore};

/// Denominator floor: gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone)]
pub struct Report {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
    /// Coordinates whose `+eps` and `-eps` evaluations fell on different
    /// smooth pieces; central differences are meaningless there.
    pub skipped: usize,
    pub max_abs_grad: f64,
}

impl Report {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol && self.checked > self.skipped
    }
}

/// Compares `analytic` against central differences of a smooth `f` with
/// step `eps`. At most `per_tensor` coordinates are drawn from each tensor
/// (all of them when `None`).
pub fn check<F>(store: &ParamStore, analytic: &ParamGrads, f: F, eps: f64, per_tensor: Option<usize>, seed: u64) -> Report
where
    F: Fn(&ParamStore) -> f64 + Sync + Send,
{
    check_piecewise(store, analytic, |s| (f(s), 0), eps, per_tensor, seed)
}

/// [`check`] for piecewise-smooth functions. `f` also returns the branch
/// signature of its evaluation (see `Tape::branch_signature`); coordinates
/// where a gate flips within `eps` are counted as skipped, not compared.
pub fn check_piecewise<F>(store: &ParamStore, analytic: &ParamGrads, f: F, eps: f64, per_tensor: Option<usize>, seed: u64) -> Report
where
    F: Fn(&ParamStore) -> (f64, u64) + Sync + Send,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for id in store.ids() {
        let n = store.get(id).len();
        match per_tensor {
            Some(k) if k < n => coords.extend(sample(&mut rng, n, k).into_iter().map(|i| (id, i))),
            _ => coords.extend((0..n).map(|i| (id, i))),
        }
    }
    let centre = f(store).1;
    let results = crate::parallel::map_indexed(&coords, |_, &(id, i)| {
        let mut s = store.clone();
        let orig = s.get(id).data()[i];
        s.get_mut(id).data_mut()[i] = orig + eps;
        let (up, sig_up) = f(&s);
        s.get_mut(id).data_mut()[i] = orig - eps;
        let (down, sig_down) = f(&s);
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.get(id).data()[i];
        let smooth = sig_up == centre && sig_down == centre;
        (smooth.then(|| rel_err(a, numeric)), a.abs())
    });
    let mut report = Report { max_rel_err: 0.0, worst: String::new(), checked: coords.len(), skipped: 0, max_abs_grad: 0.0 };
    for (&(id, i), &(err, a)) in coords.iter().zip(&results) {
        report.max_abs_grad = report.max_abs_grad.max(a);
        let Some(err) = err else {
            report.skipped += 1;
            continue;
        };
        if err > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = err;
            report.worst = format!("{}[{i}]", store.name(id));
        }
    }
    report
}

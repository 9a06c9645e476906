//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::{Error, Result};

/// Denominator floor for the relative error, so coordinates with vanishing gradients are
/// judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat parameter index of the worst coordinate.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the gradient returned by `f` with central differences at step `eps` on
/// `coords` parameter coordinates drawn with `seed` (all of them if there are fewer).
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64, coords: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Grads)>,
{
    let (loss, grads) = f(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let n = params.size();
    let picked: Vec<usize> = if coords >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, n, coords).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: picked.len(),
    };
    for &k in &picked {
        let x = probe.flat_get(k);
        probe.flat_set(k, x + eps);
        let up = f(&probe)?.0;
        probe.flat_set(k, x - eps);
        let down = f(&probe)?.0;
        probe.flat_set(k, x);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {k}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.flat_get(k);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_err {
            report = GradCheckReport {
                max_rel_err: rel,
                worst: k,
                analytic,
                numeric,
                checked: picked.len(),
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tape;
    use ndarray::array;

    fn quadratic(store: &ParamStore) -> Result<(f64, Grads)> {
        let mut tape = Tape::new(store);
        let id = store.id("p").unwrap();
        let p = tape.param(id);
        let sq = tape.mul(p, p);
        let s = tape.sum(sq);
        let l = tape.scale(s, 0.5);
        Ok((tape.scalar(l), tape.backward(l)))
    }

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new(0);
        store.insert("p", array![[0.3, -1.2, 2.5], [0.0, 4.0, -0.7]]).unwrap();
        let r = grad_check(quadratic, &store, 1e-5, 64, 0).unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut store = ParamStore::new(0);
        let id = store.insert("p", array![[0.3, -1.2, 2.5]]).unwrap();
        let bad = |s: &ParamStore| {
            let (l, mut g) = quadratic(s)?;
            g.get_mut(id)[[0, 1]] *= 1.1;
            Ok((l, g))
        };
        let r = grad_check(bad, &store, 1e-5, 64, 0).unwrap();
        assert!(r.max_rel_err > 1e-2, "{r:?}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut store = ParamStore::new(0);
        store.insert("p", array![[1.0]]).unwrap();
        let f = |s: &ParamStore| {
            let (_, g) = quadratic(s)?;
            Ok((f64::NAN, g))
        };
        assert!(grad_check(f, &store, 1e-5, 1, 0).is_err());
    }
}

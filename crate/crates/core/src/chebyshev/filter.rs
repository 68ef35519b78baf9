//! Gaussian energy filter `exp(-(H - E)^2 / (2 delta))` as a Chebyshev series.
//!
//! Coefficients come from Gauss-Chebyshev quadrature of the weighted inner
//! product on the rescaled axis:
//!
//! ```text
//! c_n = (2 - delta_n0) / K * sum_k g(cos theta_k) cos(n theta_k),  theta_k = pi (k + 1/2) / K
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lanczos::{estimate_spectral_bounds, SpectralBounds, DEFAULT_MARGIN};
use crate::operator::{norm_sqr, SparseOperator, C64};

pub const DEFAULT_FILTER_TOL: f64 = 1e-13;
pub const DEFAULT_FILTER_ORDER_CAP: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPlan {
    pub target_e: f64,
    /// Variance parameter in the exponent.
    pub delta: f64,
    pub a: f64,
    pub b: f64,
    /// Chebyshev coefficients including the `2 - delta_n0` factor.
    pub coeffs: Vec<f64>,
    pub order: usize,
}

pub fn plan_gaussian_filter(h: &SparseOperator, e: f64, delta: f64, tol: f64) -> Result<FilterPlan> {
    let bounds = estimate_spectral_bounds(h, DEFAULT_MARGIN)?;
    plan_filter_with_bounds(&bounds, e, delta, tol, DEFAULT_FILTER_ORDER_CAP)
}

pub fn plan_filter_with_bounds(
    bounds: &SpectralBounds,
    e: f64,
    delta: f64,
    tol: f64,
    order_cap: usize,
) -> Result<FilterPlan> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("filter variance {delta} must be > 0")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("filter tolerance must be > 0".into()));
    }
    let a = bounds.half_span();
    let b = bounds.center();
    let g = |x: f64| {
        let d = a * x + b - e;
        (-d * d / (2.0 * delta)).exp()
    };
    // The rescaled width is sqrt(delta) / a; coefficients decay like
    // exp(-n^2 width^2 / 2), so start near 8 / width.
    let width = delta.sqrt() / a;
    let estimate = (8.0 / width).ceil();
    if estimate > order_cap as f64 {
        return Err(Error::OrderTooLarge {
            required: estimate.min(usize::MAX as f64) as usize,
            cap: order_cap,
        });
    }
    let mut order = (estimate as usize).clamp(16, order_cap);
    loop {
        let coeffs = gauss_chebyshev_coeffs(&g, order, 2 * order);
        let peak = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(f64::MIN_POSITIVE);
        let tail = coeffs[order.saturating_sub(4)..]
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()));
        if tail < tol * peak.max(1.0) {
            let last = coeffs
                .iter()
                .rposition(|c| c.abs() >= tol)
                .unwrap_or(0);
            let keep = (last + 1 + 2).min(order);
            let mut coeffs = coeffs;
            coeffs.truncate(keep + 1);
            return Ok(FilterPlan {
                target_e: e,
                delta,
                a,
                b,
                order: coeffs.len() - 1,
                coeffs,
            });
        }
        if order >= order_cap {
            return Err(Error::OrderTooLarge {
                required: 2 * order,
                cap: order_cap,
            });
        }
        order = (2 * order).min(order_cap);
    }
}

fn gauss_chebyshev_coeffs(g: &impl Fn(f64) -> f64, order: usize, nodes: usize) -> Vec<f64> {
    let k_f = nodes as f64;
    let samples: Vec<(f64, f64)> = (0..nodes)
        .map(|k| {
            let theta = std::f64::consts::PI * (k as f64 + 0.5) / k_f;
            (theta, g(theta.cos()))
        })
        .collect();
    (0..=order)
        .map(|n| {
            let s: f64 = samples
                .iter()
                .map(|&(theta, gv)| gv * (n as f64 * theta).cos())
                .sum();
            let factor = if n == 0 { 1.0 } else { 2.0 };
            factor * s / k_f
        })
        .collect()
}

impl FilterPlan {
    /// Value of the truncated series at physical energy `energy`.
    pub fn evaluate(&self, energy: f64) -> f64 {
        let x = (energy - self.b) / self.a;
        let (mut t_prev, mut t_cur) = (1.0, x);
        let mut acc = self.coeffs[0];
        for (n, c) in self.coeffs.iter().enumerate().skip(1) {
            if n > 1 {
                let t_next = 2.0 * x * t_cur - t_prev;
                t_prev = t_cur;
                t_cur = t_next;
            }
            acc += c * t_cur;
        }
        acc
    }

    /// The exact Gaussian the series approximates.
    pub fn target(&self, energy: f64) -> f64 {
        let d = energy - self.target_e;
        (-d * d / (2.0 * self.delta)).exp()
    }
}

/// Applies the filter; returns the unnormalized vector and its squared norm.
pub fn apply_filter(plan: &FilterPlan, h: &SparseOperator, state: &[C64]) -> Result<(Vec<C64>, f64)> {
    let out = apply_filter_unchecked(plan, h, state)?;
    let n2 = norm_sqr(&out);
    if n2.sqrt() < 1e-14 {
        return Err(Error::EmptyWindow { norm: n2.sqrt() });
    }
    Ok((out, n2))
}

/// As [`apply_filter`] without the empty-window check.
pub fn apply_filter_unchecked(plan: &FilterPlan, h: &SparseOperator, state: &[C64]) -> Result<Vec<C64>> {
    h.check_dim(state.len())?;
    let dim = state.len();
    let inv_a = 1.0 / plan.a;
    let shift = -plan.b * inv_a;
    let c = &plan.coeffs;
    let mut t_prev = state.to_vec();
    let mut t_cur = vec![C64::new(0.0, 0.0); dim];
    h.apply_affine_into(state, &mut t_cur, inv_a, shift, 0.0);
    let c1 = c.get(1).copied().unwrap_or(0.0);
    let mut acc: Vec<C64> = state
        .iter()
        .zip(&t_cur)
        .map(|(&s, &t1)| s * c[0] + t1 * c1)
        .collect();
    for &cn in c.iter().skip(2) {
        h.apply_affine_into(&t_cur, &mut t_prev, 2.0 * inv_a, 2.0 * shift, -1.0);
        std::mem::swap(&mut t_prev, &mut t_cur);
        for (a, &t) in acc.iter_mut().zip(&t_cur) {
            *a += t * cn;
        }
    }
    if acc.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{CouplingSpec, LatticeSpec};
    use crate::model::{build_bath_hamiltonian, BathSpace};
    use crate::operator::{dot, normalize};
    use faer::Mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(dim: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<C64> = (0..dim)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        normalize(&mut v);
        v
    }

    fn bath9() -> SparseOperator {
        build_bath_hamiltonian(&LatticeSpec::new(3).unwrap(), &CouplingSpec::default(), BathSpace::BathOnly)
            .unwrap()
    }

    /// Dense oracle `f(H) x` with `f` applied to the eigenvalues.
    fn dense_function(h: &SparseOperator, f: impl Fn(f64) -> f64, x: &[C64]) -> Vec<C64> {
        let evd = h.to_dense().self_adjoint_eigen(faer::Side::Lower).unwrap();
        let u: Mat<f64> = evd.U().to_owned();
        let s = evd.S().column_vector();
        let n = x.len();
        let mut coef = vec![C64::new(0.0, 0.0); n];
        for k in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..n {
                acc += x[i] * u[(i, k)];
            }
            coef[k] = acc * f(s[k]);
        }
        (0..n).map(|i| (0..n).map(|k| coef[k] * u[(i, k)]).sum()).collect()
    }

    fn max_dev(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn matches_dense_matrix_function() {
        let h = bath9();
        let plan = plan_gaussian_filter(&h, -1.35, 0.1, DEFAULT_FILTER_TOL).unwrap();
        let x = random_state(h.dim(), 1);
        let (y, _) = apply_filter(&plan, &h, &x).unwrap();
        let oracle = dense_function(&h, |e| plan.target(e), &x);
        assert!(max_dev(&y, &oracle) < 1e-8);
    }

    #[test]
    fn squaring_halves_the_variance() {
        let h = bath9();
        let x = random_state(h.dim(), 2);
        let p = plan_gaussian_filter(&h, -1.0, 0.2, DEFAULT_FILTER_TOL).unwrap();
        let half = plan_gaussian_filter(&h, -1.0, 0.1, DEFAULT_FILTER_TOL).unwrap();
        let twice = apply_filter(&p, &h, &apply_filter(&p, &h, &x).unwrap().0).unwrap().0;
        let once = apply_filter(&half, &h, &x).unwrap().0;
        assert!(max_dev(&twice, &once) < 1e-8);
    }

    #[test]
    fn wide_window_is_identity() {
        let h = bath9();
        let span = 2.0 * h.gershgorin_radius();
        let plan = plan_gaussian_filter(&h, 0.0, 1e4 * span * span, DEFAULT_FILTER_TOL).unwrap();
        let x = random_state(h.dim(), 3);
        let (_, n2) = apply_filter(&plan, &h, &x).unwrap();
        assert!((n2 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn eigenvector_peak_and_tail() {
        let h = bath9();
        let evd = h.to_dense().self_adjoint_eigen(faer::Side::Lower).unwrap();
        let k = 200;
        let e_k = evd.S().column_vector()[k];
        let v: Vec<C64> = (0..h.dim()).map(|i| C64::new(evd.U()[(i, k)], 0.0)).collect();
        let delta = 0.01;
        let at_peak = plan_gaussian_filter(&h, e_k, delta, DEFAULT_FILTER_TOL).unwrap();
        let (y, _) = apply_filter(&at_peak, &h, &v).unwrap();
        assert!((dot(&v, &y).re - 1.0).abs() < 1e-9);
        let far = plan_gaussian_filter(&h, e_k - 10.0 * delta.sqrt(), delta, DEFAULT_FILTER_TOL).unwrap();
        let y = apply_filter_unchecked(&far, &h, &v).unwrap();
        assert!(norm_sqr(&y).sqrt() < (-40.0f64).exp() + 1e-11);
    }

    #[test]
    fn positivity_on_random_vectors() {
        let h = bath9();
        let plan = plan_gaussian_filter(&h, -2.0, 0.05, DEFAULT_FILTER_TOL).unwrap();
        for seed in 0..10 {
            let x = random_state(h.dim(), 100 + seed);
            let y = apply_filter_unchecked(&plan, &h, &x).unwrap();
            assert!(dot(&x, &y).re >= -1e-12);
        }
        // Pointwise on the rescaled axis.
        for k in 0..=2000 {
            let e = plan.b + plan.a * (-1.0 + k as f64 / 1000.0);
            assert!(plan.evaluate(e) >= -1e-12);
            assert!((plan.evaluate(e) - plan.target(e)).abs() < 1e-11);
        }
    }

    #[test]
    fn rejects_bad_variance_and_empty_window() {
        let h = bath9();
        assert!(plan_gaussian_filter(&h, 0.0, 0.0, DEFAULT_FILTER_TOL).is_err());
        let bounds = crate::lanczos::estimate_spectral_bounds(&h, 0.02).unwrap();
        assert!(matches!(
            plan_filter_with_bounds(&bounds, 0.0, 1e-9, DEFAULT_FILTER_TOL, 100),
            Err(Error::OrderTooLarge { .. })
        ));
        // Window far outside the spectrum leaves nothing.
        let plan = plan_gaussian_filter(&h, bounds.e_max + 3.0, 0.01, DEFAULT_FILTER_TOL).unwrap();
        let x = random_state(h.dim(), 4);
        assert!(matches!(apply_filter(&plan, &h, &x), Err(Error::EmptyWindow { .. })));
    }
}

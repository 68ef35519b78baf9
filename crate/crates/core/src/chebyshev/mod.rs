//! Real-time propagation and spectral filtering by Chebyshev expansion.

pub mod checkpoint;
pub mod filter;
pub mod propagator;

use std::collections::HashMap;

pub use filter::{apply_filter, plan_filter_with_bounds, plan_gaussian_filter, FilterPlan};
pub use propagator::{plan_propagator, plan_with_bounds, step, PlanOptions, PropagatorPlan, Stepper};

use crate::error::{Error, Result};
use crate::lanczos::{estimate_spectral_bounds, SpectralBounds, DEFAULT_MARGIN};
use crate::operator::{norm, SparseOperator, C64};
use crate::series::TimeSeries;

/// Default `a * dt` per propagation step.
pub const DEFAULT_MAX_ADT: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    /// Largest `a * dt` per Chebyshev step; longer grid intervals are split.
    pub max_adt: f64,
    pub plan: PlanOptions,
    /// Abort when `| |psi(t)| - |psi(0)| |` exceeds this.
    pub norm_tol: f64,
    /// Precomputed spectral bounds; estimated when absent.
    pub bounds: Option<SpectralBounds>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            max_adt: DEFAULT_MAX_ADT,
            plan: PlanOptions::default(),
            norm_tol: 1e-8,
            bounds: None,
        }
    }
}

/// Result of a propagation: the sampled observable and the final state.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub series: TimeSeries,
    pub final_state: Vec<C64>,
    /// Total Chebyshev steps taken.
    pub steps: usize,
}

/// Callback invoked after each grid sample with `(index, t, state, values so far)`.
pub type SampleHook<'a> = dyn FnMut(usize, f64, &[C64], &[f64]) -> Result<()> + 'a;

/// Propagates `state` over `t_grid` (ascending, starting at 0) and records
/// `<psi(t)|observable|psi(t)>`.
pub fn evolve(
    op: &SparseOperator,
    state: &[C64],
    t_grid: &[f64],
    observable: &SparseOperator,
) -> Result<Evolution> {
    evolve_with(op, state, t_grid, observable, &EvolveOptions::default())
}

pub fn evolve_with(
    op: &SparseOperator,
    state: &[C64],
    t_grid: &[f64],
    observable: &SparseOperator,
    opts: &EvolveOptions,
) -> Result<Evolution> {
    if t_grid.first() != Some(&0.0) {
        return Err(Error::InvalidParameter("time grid must start at t = 0".into()));
    }
    let v0 = observable_value(observable, state)?;
    evolve_resume(op, state.to_vec(), t_grid, 0, vec![v0], observable, opts, None)
}

/// Continues a propagation whose state is known at `t_grid[start]`, with the
/// samples `values[..=start]` already recorded.
#[allow(clippy::too_many_arguments)]
pub fn evolve_resume(
    op: &SparseOperator,
    mut psi: Vec<C64>,
    t_grid: &[f64],
    start: usize,
    mut values: Vec<f64>,
    observable: &SparseOperator,
    opts: &EvolveOptions,
    mut hook: Option<&mut SampleHook<'_>>,
) -> Result<Evolution> {
    op.check_dim(psi.len())?;
    observable.check_dim(psi.len())?;
    if t_grid.is_empty() || start >= t_grid.len() || values.len() != start + 1 {
        return Err(Error::InvalidParameter("inconsistent resume point".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("time grid must be strictly ascending".into()));
    }
    let bounds = match opts.bounds {
        Some(b) => b,
        None => estimate_spectral_bounds(op, DEFAULT_MARGIN)?,
    };
    let n0 = norm(&psi);
    let mut plans: HashMap<u64, PropagatorPlan> = HashMap::new();
    let mut stepper = Stepper::new();

    for k in start + 1..t_grid.len() {
        let interval = t_grid[k] - t_grid[k - 1];
        let n_sub = ((bounds.half_span() * interval) / opts.max_adt).ceil().max(1.0) as usize;
        let dt = interval / n_sub as f64;
        let key = dt.to_bits();
        if let std::collections::hash_map::Entry::Vacant(e) = plans.entry(key) {
            e.insert(plan_with_bounds(&bounds, dt, opts.plan)?);
        }
        let plan = &plans[&key];
        for _ in 0..n_sub {
            stepper.step(plan, op, &mut psi)?;
        }
        let drift = (norm(&psi) - n0).abs();
        if drift > opts.norm_tol {
            return Err(Error::NormDrift {
                drift,
                time: t_grid[k],
            });
        }
        values.push(observable_value(observable, &psi)?);
        if let Some(h) = hook.as_deref_mut() {
            h(k, t_grid[k], &psi, &values)?;
        }
    }
    Ok(Evolution {
        series: TimeSeries::new(t_grid.to_vec(), values),
        final_state: psi,
        steps: stepper.steps(),
    })
}

fn observable_value(observable: &SparseOperator, psi: &[C64]) -> Result<f64> {
    let v = observable.expectation(psi)?;
    if v.im.abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "observable expectation has imaginary part {:e}",
            v.im
        )));
    }
    Ok(v.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{CouplingSpec, LatticeSpec};
    use crate::model::WheelModel;
    use crate::operator::normalize;
    use crate::sector::MagnetizationSector;
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

    #[test]
    fn lambda_zero_is_constant() {
        let model = WheelModel::new(LatticeSpec::new(3).unwrap(), CouplingSpec::default()).unwrap();
        let sector = MagnetizationSector::new(10, 5);
        let ops = model.operators(&crate::sector::Basis::Sector(sector.clone()), 0.0);
        // Product state: system up, a basis configuration of the bath.
        let idx = (0..sector.dim()).find(|&i| sector.state(i) & 1 == 1).unwrap();
        let mut psi = vec![C64::new(0.0, 0.0); sector.dim()];
        psi[idx] = C64::new(1.0, 0.0);
        let grid = TimeSeries::uniform_grid(2.0, 50);
        let ev = evolve(&ops.h, &psi, &grid, &ops.sz_sys).unwrap();
        assert!(ev.series.values.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn time_reversal() {
        let model = WheelModel::new(LatticeSpec::new(3).unwrap(), CouplingSpec::default()).unwrap();
        let sector = MagnetizationSector::new(10, 4);
        let ops = model.operators(&crate::sector::Basis::Sector(sector), 0.6);
        let psi0 = random_state(ops.h.dim(), 4);
        let grid = TimeSeries::uniform_grid(1.5, 40);
        let fwd = evolve(&ops.h, &psi0, &grid, &ops.sz_sys).unwrap();
        let bounds = estimate_spectral_bounds(&ops.h, DEFAULT_MARGIN).unwrap();
        let back = plan_with_bounds(&bounds, -1.5, PlanOptions::default()).unwrap();
        let mut psi = fwd.final_state.clone();
        let mut stepper = Stepper::new();
        for _ in 0..40 {
            stepper.step(&back, &ops.h, &mut psi).unwrap();
        }
        let v_back = ops.sz_sys.expectation(&psi).unwrap().re;
        assert!((v_back - fwd.series.values[0]).abs() < 1e-9);
    }

    #[test]
    fn substeps_match_fine_grid() {
        let model = WheelModel::new(LatticeSpec::new(2).unwrap(), CouplingSpec::default()).unwrap();
        let ops = model.operators(&crate::sector::Basis::full(7), 0.3);
        let psi0 = random_state(128, 8);
        let coarse = evolve(&ops.h, &psi0, &TimeSeries::uniform_grid(10.0, 5), &ops.sz_sys).unwrap();
        let fine = evolve(&ops.h, &psi0, &TimeSeries::uniform_grid(0.5, 100), &ops.sz_sys).unwrap();
        for (k, v) in coarse.series.values.iter().enumerate() {
            assert!((v - fine.series.values[20 * k]).abs() < 1e-11);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        let h = SparseOperator::identity(2);
        let psi = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        assert!(evolve(&h, &psi, &[1.0, 2.0], &h).is_err());
        assert!(evolve(&h, &psi, &[0.0, 2.0, 1.0], &h).is_err());
    }

    #[test]
    fn norm_drift_aborts() {
        // Bounds that do not contain the spectrum make the expansion blow up.
        let h = SparseOperator::diagonal(&[-5.0, 5.0]);
        let psi = vec![C64::new(0.6, 0.0), C64::new(0.8, 0.0)];
        let bad = SpectralBounds {
            e_min: -0.5,
            e_max: 0.5,
            ritz_min: -0.5,
            ritz_max: 0.5,
            residual: 0.0,
            iterations: 0,
        };
        let opts = EvolveOptions {
            bounds: Some(bad),
            ..EvolveOptions::default()
        };
        let err = evolve_with(&h, &psi, &[0.0, 1.0, 2.0], &h, &opts);
        assert!(matches!(err, Err(Error::NormDrift { .. }) | Err(Error::NonFinite { .. })));
    }
}

//! Typical pure states for the product initial state `pi_up (x) window(H_bath)`.
//!
//! Each magnetization sector gets its own Gaussian draw, which is projected on
//! the system spin pointing up and passed once through the Gaussian filter
//! `f = exp(-(H_bath - E)^2 / (2 delta))`. The resulting member states represent
//! `rho ~ pi_up f^2` and are combined with weights `dim * |f pi_up phi|^2`.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chebyshev::checkpoint::{self, CheckpointRecord};
use crate::chebyshev::filter::{apply_filter_unchecked, plan_filter_with_bounds, DEFAULT_FILTER_ORDER_CAP, DEFAULT_FILTER_TOL};
use crate::chebyshev::{evolve_resume, EvolveOptions};
use crate::error::{Error, Result};
use crate::lanczos::{estimate_spectral_bounds, DEFAULT_MARGIN};
use crate::lattice::SYSTEM_SITE;
use crate::model::WheelModel;
use crate::operator::{norm_sqr, SparseOperator, C64};
use crate::sector::{binomial, Basis, MagnetizationSector};
use crate::series::TimeSeries;

/// Bath energy per bath spin used when no explicit window center is given.
pub const ENERGY_PER_BATH_SPIN: f64 = -0.15;
pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 0.4;
/// Normalized member weights below this are not propagated.
pub const DEFAULT_MIN_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialStateSpec {
    /// Center of the bath energy window.
    pub energy: f64,
    /// Variance parameter of the filter exponent.
    pub delta: f64,
    /// Inverse temperature the window is meant to represent; informational.
    pub beta_target: f64,
    pub seed: u64,
}

impl InitialStateSpec {
    /// Window at `E = -0.15 (N - 1)` with the default width.
    pub fn for_spins(n_spins: usize, seed: u64) -> Self {
        Self {
            energy: default_energy(n_spins),
            delta: DEFAULT_DELTA,
            beta_target: DEFAULT_BETA,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParameter(format!("window variance {} must be > 0", self.delta)));
        }
        if !self.energy.is_finite() {
            return Err(Error::InvalidParameter("window center must be finite".into()));
        }
        Ok(())
    }

    /// The filter function `f(E)`.
    pub fn filter_value(&self, e: f64) -> f64 {
        let d = e - self.energy;
        (-d * d / (2.0 * self.delta)).exp()
    }
}

pub fn default_energy(n_spins: usize) -> f64 {
    ENERGY_PER_BATH_SPIN * (n_spins as f64 - 1.0)
}

/// Normalized complex Gaussian vector, reproducible from `seed`.
pub fn draw_haar_vector(dim: usize, seed: u64) -> Vec<C64> {
    draw_haar_vector_stream(dim, seed, 0)
}

/// As [`draw_haar_vector`] on an independent stream of the same seed, so that
/// sectors can be drawn concurrently in any order.
pub fn draw_haar_vector_stream(dim: usize, seed: u64, stream: u64) -> Vec<C64> {
    assert!(dim >= 1, "dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut v: Vec<C64> = (0..dim)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im)
        })
        .collect();
    crate::operator::normalize(&mut v);
    v
}

/// Zeroes the amplitudes with the system spin down. The second value is false
/// when the basis holds no system-up configuration at all.
pub fn project_system_up(state: &[C64], basis: &Basis) -> (Vec<C64>, bool) {
    assert_eq!(state.len(), basis.dim());
    let mut any = false;
    let out = state
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if basis.state(i) >> SYSTEM_SITE & 1 == 1 {
                any = true;
                z
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    (out, any)
}

/// One prepared sector state.
#[derive(Debug, Clone)]
pub struct PreparedMember {
    pub state: Vec<C64>,
    /// `dim |f pi_up phi|^2`, an unbiased estimate of `Tr(P f^2 pi_up)` on the sector.
    pub raw_weight: f64,
    /// `dim |f^2 pi_up phi|^2`, the matching estimate of `Tr(P f^4 pi_up)`.
    pub raw_weight_sq: f64,
    pub filter_order: usize,
}

/// Draws, projects and filters one member. `Ok(None)` when the window is empty
/// in this sector or the sector has no system-up state.
pub fn prepare_member(
    basis: &Basis,
    spec: &InitialStateSpec,
    h_bath: &SparseOperator,
    seed: u64,
    stream: u64,
) -> Result<Option<PreparedMember>> {
    spec.validate()?;
    h_bath.check_dim(basis.dim())?;
    let dim = basis.dim();
    let phi = draw_haar_vector_stream(dim, seed, stream);
    let (projected, any) = project_system_up(&phi, basis);
    if !any {
        return Ok(None);
    }
    let bounds = estimate_spectral_bounds(h_bath, DEFAULT_MARGIN)?;
    let plan = plan_filter_with_bounds(&bounds, spec.energy, spec.delta, DEFAULT_FILTER_TOL, DEFAULT_FILTER_ORDER_CAP)?;
    let mut state = apply_filter_unchecked(&plan, h_bath, &projected)?;
    let n2 = norm_sqr(&state);
    if n2.sqrt() < 1e-14 {
        return Ok(None);
    }
    let twice = apply_filter_unchecked(&plan, h_bath, &state)?;
    let inv = 1.0 / n2.sqrt();
    state.iter_mut().for_each(|z| *z *= inv);
    Ok(Some(PreparedMember {
        state,
        raw_weight: dim as f64 * n2,
        raw_weight_sq: dim as f64 * norm_sqr(&twice),
        filter_order: plan.order,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleMember {
    /// `None` for a full-space member.
    pub n_up: Option<u32>,
    pub dim: usize,
    /// Random stream of the member's draw under the ensemble seed.
    pub stream: u64,
    pub raw_weight: f64,
    pub raw_weight_sq: f64,
    /// Normalized weight; the members' weights sum to one.
    pub weight: f64,
    /// Share of system-up configurations of this sector in the unfiltered state.
    pub binomial_weight: f64,
    pub filter_order: usize,
    #[serde(skip)]
    pub state: Vec<C64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedEnsemble {
    pub spec: InitialStateSpec,
    pub n_spins: usize,
    pub members: Vec<EnsembleMember>,
    pub d_eff_estimate: f64,
    /// Normalized weight of members dropped below the propagation threshold.
    pub dropped_weight: f64,
}

impl WeightedEnsemble {
    pub fn total_weight(&self) -> f64 {
        self.members.iter().map(|m| m.weight).sum()
    }

    /// Weighted `<A>` over members, with one operator per member.
    pub fn expectation(&self, ops: &[SparseOperator]) -> Result<f64> {
        assert_eq!(ops.len(), self.members.len());
        let mut acc = 0.0;
        for (m, op) in self.members.iter().zip(ops) {
            acc += m.weight * op.expectation(&m.state)?.re;
        }
        Ok(acc)
    }

    pub fn manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn basis_of(&self, member: &EnsembleMember) -> Basis {
        match member.n_up {
            Some(n_up) => Basis::Sector(MagnetizationSector::new(self.n_spins, n_up)),
            None => Basis::full(self.n_spins),
        }
    }
}

/// Prepares one member per magnetization sector.
pub fn prepare_ensemble(model: &WheelModel, spec: &InitialStateSpec) -> Result<WeightedEnsemble> {
    let n = model.n_spins();
    let bases: Vec<Basis> = (1..=n as u32)
        .map(|n_up| Basis::Sector(MagnetizationSector::new(n, n_up)))
        .collect();
    prepare_on_bases(model, spec, bases, DEFAULT_MIN_WEIGHT)
}

/// A single member on the full `2^N` space; meant for small oracle checks.
pub fn prepare_full_space(model: &WheelModel, spec: &InitialStateSpec) -> Result<WeightedEnsemble> {
    prepare_on_bases(model, spec, vec![Basis::full(model.n_spins())], 0.0)
}

fn prepare_on_bases(
    model: &WheelModel,
    spec: &InitialStateSpec,
    bases: Vec<Basis>,
    min_weight: f64,
) -> Result<WeightedEnsemble> {
    spec.validate()?;
    let n = model.n_spins();
    let prepared: Vec<Option<(Basis, PreparedMember)>> = bases
        .into_par_iter()
        .map(|basis| {
            let stream = basis.sector_id().map_or(u64::from(u32::MAX), u64::from);
            let h_bath = model.bath.to_operator(&basis);
            Ok(prepare_member(&basis, spec, &h_bath, spec.seed, stream)?.map(|p| (basis, p)))
        })
        .collect::<Result<_>>()?;
    let prepared: Vec<(Basis, PreparedMember)> = prepared.into_iter().flatten().collect();
    let t2: f64 = prepared.iter().map(|(_, p)| p.raw_weight).sum();
    let t4: f64 = prepared.iter().map(|(_, p)| p.raw_weight_sq).sum();
    if !(t2 > 0.0) {
        return Err(Error::EmptyWindow { norm: 0.0 });
    }
    let half = 2f64.powi(n as i32 - 1);
    let mut members = Vec::new();
    let mut dropped = 0.0;
    for (basis, p) in prepared {
        let weight = p.raw_weight / t2;
        if weight < min_weight {
            dropped += weight;
            continue;
        }
        let (n_up, binomial_weight) = match basis.sector_id() {
            Some(k) => (Some(k), binomial(n as u64 - 1, k as u64 - 1) as f64 / half),
            None => (None, 1.0),
        };
        members.push(EnsembleMember {
            n_up,
            dim: basis.dim(),
            stream: n_up.map_or(u64::from(u32::MAX), u64::from),
            raw_weight: p.raw_weight,
            raw_weight_sq: p.raw_weight_sq,
            weight,
            binomial_weight,
            filter_order: p.filter_order,
            state: p.state,
        });
    }
    let kept: f64 = members.iter().map(|m| m.weight).sum();
    for m in &mut members {
        m.weight /= kept;
    }
    Ok(WeightedEnsemble {
        spec: *spec,
        n_spins: n,
        members,
        d_eff_estimate: t2 * t2 / t4,
        dropped_weight: dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeffEstimate {
    pub value: f64,
    /// Standard error from the spread over probes.
    pub std_err: f64,
    pub n_probes: usize,
}

/// Stochastic estimate of `1 / Tr rho^2` for `rho ~ pi_up f(H_bath)^2`, the
/// state a typical member represents, from `n_probes` draws per sector.
pub fn effective_dimension(model: &WheelModel, spec: &InitialStateSpec, n_probes: usize) -> Result<DeffEstimate> {
    if n_probes == 0 {
        return Err(Error::InvalidParameter("need at least one probe".into()));
    }
    let n = model.n_spins();
    let per_probe: Vec<(f64, f64)> = (0..n_probes)
        .into_par_iter()
        .map(|k| {
            let mut t2 = 0.0;
            let mut t4 = 0.0;
            for n_up in 1..=n as u32 {
                let basis = Basis::Sector(MagnetizationSector::new(n, n_up));
                let h_bath = model.bath.to_operator(&basis);
                let stream = ((k as u64) << 32) | u64::from(n_up);
                if let Some(p) = prepare_member(&basis, spec, &h_bath, spec.seed, stream)? {
                    t2 += p.raw_weight;
                    t4 += p.raw_weight_sq;
                }
            }
            Ok((t2, t4))
        })
        .collect::<Result<_>>()?;
    let m = n_probes as f64;
    let t2 = per_probe.iter().map(|p| p.0).sum::<f64>() / m;
    let t4 = per_probe.iter().map(|p| p.1).sum::<f64>() / m;
    let value = t2 * t2 / t4;
    // Delta method on the two means.
    let std_err = if n_probes > 1 {
        let grads: Vec<f64> = per_probe
            .iter()
            .map(|&(a, b)| value * (2.0 * (a - t2) / t2 - (b - t4) / t4))
            .collect();
        let var = grads.iter().map(|g| g * g).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        f64::NAN
    };
    Ok(DeffEstimate {
        value,
        std_err,
        n_probes,
    })
}

/// `(sum f^2)^2 / sum f^4` over bath eigenvalues.
pub fn exact_effective_dimension(bath_eigenvalues: &[f64], spec: &InitialStateSpec) -> f64 {
    let (mut t2, mut t4) = (0.0, 0.0);
    for &e in bath_eigenvalues {
        let f2 = spec.filter_value(e).powi(2);
        t2 += f2;
        t4 += f2 * f2;
    }
    t2 * t2 / t4
}

/// Where and how often an ensemble evolution saves its state.
#[derive(Debug, Clone)]
pub struct CheckpointOptions {
    pub path: PathBuf,
    /// Grid samples between saves.
    pub every: usize,
    /// Continue from an existing file at `path`.
    pub resume: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EnsembleOptions {
    pub evolve: EvolveOptions,
    pub checkpoint: Option<CheckpointOptions>,
}

#[derive(Debug, Clone)]
pub struct EnsembleEvolution {
    pub series: TimeSeries,
    /// Per-member series, in member order.
    pub members: Vec<TimeSeries>,
    pub steps: usize,
}

/// Propagates every member under `H(lambda)` on its own sector and returns the
/// weighted `<S^z_sys(t)>`.
pub fn evolve_ensemble(
    model: &WheelModel,
    ensemble: &WeightedEnsemble,
    lambda: f64,
    t_grid: &[f64],
    opts: &EnsembleOptions,
) -> Result<EnsembleEvolution> {
    if t_grid.first() != Some(&0.0) {
        return Err(Error::InvalidParameter("time grid must start at t = 0".into()));
    }
    struct Running {
        h: SparseOperator,
        sz: SparseOperator,
        psi: Vec<C64>,
        values: Vec<f64>,
        digest: u64,
        steps: usize,
    }
    let mut running: Vec<Running> = ensemble
        .members
        .par_iter()
        .map(|m| {
            let basis = ensemble.basis_of(m);
            let h = model.total(lambda).to_operator(&basis);
            let sz = model.observable().to_operator(&basis);
            let v0 = sz.expectation(&m.state)?.re;
            let digest = run_digest(ensemble, m, lambda, &opts.evolve);
            Ok(Running {
                h,
                sz,
                psi: m.state.clone(),
                values: vec![v0],
                digest,
                steps: 0,
            })
        })
        .collect::<Result<_>>()?;
    let bounds: Vec<_> = running
        .par_iter()
        .map(|r| match opts.evolve.bounds {
            Some(b) => Ok(b),
            None => estimate_spectral_bounds(&r.h, DEFAULT_MARGIN),
        })
        .collect::<Result<_>>()?;

    let mut start = 0;
    if let Some(ck) = opts.checkpoint.as_ref().filter(|c| c.resume && c.path.exists()) {
        let records = checkpoint::load(&ck.path)?;
        start = restore(&mut running, &records, ensemble, t_grid, |r| (&mut r.psi, &mut r.values, r.digest))?;
    }

    let every = opts.checkpoint.as_ref().map_or(t_grid.len(), |c| c.every.max(1));
    while start + 1 < t_grid.len() {
        let end = (start + every).min(t_grid.len() - 1);
        let seg = &t_grid[..=end];
        running
            .par_iter_mut()
            .zip(&bounds)
            .try_for_each(|(r, b)| -> Result<()> {
                let o = EvolveOptions {
                    bounds: Some(*b),
                    ..opts.evolve
                };
                let psi = std::mem::take(&mut r.psi);
                let values = std::mem::take(&mut r.values);
                let ev = evolve_resume(&r.h, psi, seg, start, values, &r.sz, &o, None)?;
                r.psi = ev.final_state;
                r.values = ev.series.values;
                r.steps += ev.steps;
                Ok(())
            })?;
        start = end;
        if let Some(ck) = &opts.checkpoint {
            let records: Vec<CheckpointRecord> = running
                .iter()
                .zip(&ensemble.members)
                .map(|(r, m)| CheckpointRecord {
                    n_spins: ensemble.n_spins as u32,
                    n_up: m.n_up.unwrap_or(checkpoint::FULL_SPACE),
                    time_index: start as u64,
                    t: t_grid[start],
                    seed: ensemble.spec.seed,
                    plan_hash: r.digest,
                    weight: m.weight,
                    amplitudes: r.psi.clone(),
                    values: r.values.clone(),
                })
                .collect();
            checkpoint::save(&ck.path, &records)?;
        }
    }

    let members: Vec<TimeSeries> = running
        .iter()
        .map(|r| TimeSeries::new(t_grid.to_vec(), r.values.clone()))
        .collect();
    let parts: Vec<(f64, &TimeSeries)> = ensemble.members.iter().map(|m| m.weight).zip(&members).collect();
    let series = crate::series::weighted_sum(&parts);
    Ok(EnsembleEvolution {
        series,
        steps: running.iter().map(|r| r.steps).sum(),
        members,
    })
}

fn restore<R>(
    running: &mut [R],
    records: &[CheckpointRecord],
    ensemble: &WeightedEnsemble,
    t_grid: &[f64],
    parts: impl Fn(&mut R) -> (&mut Vec<C64>, &mut Vec<f64>, u64),
) -> Result<usize> {
    if records.len() != running.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} members, ensemble has {}",
            records.len(),
            running.len()
        )));
    }
    let start = records.first().map_or(0, |r| r.time_index as usize);
    for ((r, rec), m) in running.iter_mut().zip(records).zip(&ensemble.members) {
        let (psi, values, digest) = parts(r);
        let n_up = m.n_up.unwrap_or(checkpoint::FULL_SPACE);
        if rec.n_up != n_up || rec.plan_hash != digest || rec.seed != ensemble.spec.seed {
            return Err(Error::Checkpoint("checkpoint belongs to a different run".into()));
        }
        let idx = rec.time_index as usize;
        if idx != start
            || idx >= t_grid.len()
            || rec.t.to_bits() != t_grid[idx].to_bits()
            || rec.values.len() != idx + 1
            || rec.amplitudes.len() != psi.len()
        {
            return Err(Error::Checkpoint("inconsistent checkpoint record".into()));
        }
        *psi = rec.amplitudes.clone();
        *values = rec.values.clone();
    }
    Ok(start)
}

fn run_digest(ensemble: &WeightedEnsemble, m: &EnsembleMember, lambda: f64, opts: &EvolveOptions) -> u64 {
    let mut h = Sha256::new();
    h.update((ensemble.n_spins as u64).to_le_bytes());
    h.update(m.stream.to_le_bytes());
    h.update(ensemble.spec.seed.to_le_bytes());
    for v in [ensemble.spec.energy, ensemble.spec.delta, lambda, m.weight, opts.max_adt, opts.plan.tol] {
        h.update(v.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Time at which typicality errors are probed for coupling `lambda`.
pub fn probe_time(lambda: f64) -> f64 {
    2.0 / (lambda * lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalityError {
    pub delta: f64,
    pub d_eff: f64,
    pub mean: f64,
    pub std: f64,
    pub n_draws: usize,
    /// `<S^z_sys(t*)>` per seed, in seed order.
    pub samples: Vec<f64>,
}

/// Spread of `<S^z_sys(t*)>` over independent seeds for each window variance,
/// with `d_eff` from the same draws.
pub fn typicality_error_scaling(
    model: &WheelModel,
    base: &InitialStateSpec,
    lambda: f64,
    deltas: &[f64],
    n_seeds: usize,
) -> Result<Vec<TypicalityError>> {
    if n_seeds < 10 {
        return Err(Error::InvalidParameter(format!("need at least 10 seeds, got {n_seeds}")));
    }
    let t_star = probe_time(lambda);
    let grid = [0.0, t_star];
    deltas
        .iter()
        .map(|&delta| {
            let samples: Vec<(f64, f64)> = (0..n_seeds as u64)
                .map(|k| {
                    let spec = InitialStateSpec {
                        delta,
                        seed: base.seed.wrapping_add(k),
                        ..*base
                    };
                    let ens = prepare_ensemble(model, &spec)?;
                    let ev = evolve_ensemble(model, &ens, lambda, &grid, &EnsembleOptions::default())?;
                    Ok((ev.series.values[1], ens.d_eff_estimate))
                })
                .collect::<Result<_>>()?;
            let m = n_seeds as f64;
            let mean = samples.iter().map(|s| s.0).sum::<f64>() / m;
            let var = samples.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let d_eff = samples.iter().map(|s| s.1).sum::<f64>() / m;
            Ok(TypicalityError {
                delta,
                d_eff,
                mean,
                std: var.sqrt(),
                n_draws: n_seeds,
                samples: samples.iter().map(|s| s.0).collect(),
            })
        })
        .collect()
}

/// Least-squares slope of `log std` against `log d_eff`.
pub fn error_scaling_slope(points: &[TypicalityError]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientData("need two windows for a slope".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.d_eff.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.std.ln()).collect();
    Ok(crate::fit::linear_fit(&xs, &ys)?.slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{CouplingSpec, LatticeSpec};
    use crate::model::{build_bath_hamiltonian, BathSpace};

    fn wheel(l: usize) -> WheelModel {
        WheelModel::new(LatticeSpec::new(l).unwrap(), CouplingSpec::default()).unwrap()
    }

    #[test]
    fn haar_dim_one_and_reproducible() {
        let v = draw_haar_vector(1, 3);
        assert!((v[0].norm() - 1.0).abs() < 1e-15);
        assert_eq!(draw_haar_vector(20, 9), draw_haar_vector(20, 9));
        assert_ne!(draw_haar_vector_stream(20, 9, 1), draw_haar_vector_stream(20, 9, 2));
    }

    #[test]
    fn haar_marginals() {
        let dim = 16;
        let n = 10_000;
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for s in 0..n {
            let v = draw_haar_vector(dim, s);
            for (i, z) in v.iter().enumerate() {
                let p = z.norm_sqr();
                sum[i] += p;
                sum_sq[i] += p * p;
            }
        }
        for i in 0..dim {
            let mean = sum[i] / n as f64;
            let sd = ((sum_sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - 1.0 / 16.0).abs() < 3.0 * sd, "component {i}: {mean}");
        }
    }

    #[test]
    fn haar_overlap_statistics() {
        let dim = 64;
        let mean: f64 = (0..2000u64)
            .map(|s| crate::operator::dot(&draw_haar_vector(dim, 2 * s), &draw_haar_vector(dim, 2 * s + 1)).norm_sqr())
            .sum::<f64>()
            / 2000.0;
        // |<x|y>|^2 is Beta(1, dim - 1) with mean 1/dim and sd about 1/dim.
        assert!((mean * dim as f64 - 1.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn projection() {
        let sector = MagnetizationSector::new(7, 3);
        let basis = Basis::Sector(sector.clone());
        let (p1, any) = project_system_up(&draw_haar_vector(basis.dim(), 1), &basis);
        assert!(any);
        assert_eq!(project_system_up(&p1, &basis).0, p1);

        let mean: f64 = (0..4000u64)
            .map(|s| norm_sqr(&project_system_up(&draw_haar_vector(basis.dim(), s), &basis).0))
            .sum::<f64>()
            / 4000.0;
        let expected = sector.system_up_count() as f64 / sector.dim() as f64;
        assert!((mean - expected).abs() < 0.01, "{mean} vs {expected}");

        let all_up = Basis::Sector(MagnetizationSector::new(7, 7));
        let v = draw_haar_vector(1, 5);
        assert_eq!(project_system_up(&v, &all_up).0, v);
        let none = Basis::Sector(MagnetizationSector::new(7, 0));
        let (z, any) = project_system_up(&draw_haar_vector(1, 5), &none);
        assert!(!any && z[0].norm() == 0.0);
    }

    #[test]
    fn wide_window_recovers_binomial_weights() {
        let model = wheel(2);
        let spec = InitialStateSpec {
            energy: 0.0,
            delta: 1e6,
            beta_target: 0.0,
            seed: 4,
        };
        let ens = prepare_ensemble(&model, &spec).unwrap();
        // Unfiltered, each raw weight is dim |pi_up phi|^2, whose mean is the
        // system-up count; check the normalized weights against it loosely and
        // the exact ratio through many seeds below.
        assert!((ens.total_weight() - 1.0).abs() < 1e-12);
        let mut acc = vec![0.0; ens.members.len()];
        let n_seeds = 400;
        for s in 0..n_seeds {
            let e = prepare_ensemble(&model, &InitialStateSpec { seed: s, ..spec }).unwrap();
            for (a, m) in acc.iter_mut().zip(&e.members) {
                *a += m.raw_weight / n_seeds as f64;
            }
        }
        let total: f64 = acc.iter().sum();
        for (a, m) in acc.iter().zip(&ens.members) {
            assert!((a / total - m.binomial_weight).abs() < 0.02, "{} vs {}", a / total, m.binomial_weight);
        }
    }

    #[test]
    fn prepared_state_is_system_up() {
        let model = wheel(3);
        let spec = InitialStateSpec::for_spins(10, 11);
        assert!((spec.energy + 1.35).abs() < 1e-12);
        let ens = prepare_ensemble(&model, &spec).unwrap();
        for m in &ens.members {
            let basis = ens.basis_of(m);
            let sz = model.observable().to_operator(&basis);
            assert!((sz.expectation(&m.state).unwrap().re - 0.5).abs() < 1e-14);
            assert!((crate::operator::norm(&m.state) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn filtered_bath_energy_in_window() {
        let model = wheel(3);
        let spec = InitialStateSpec::for_spins(10, 2);
        let ens = prepare_ensemble(&model, &spec).unwrap();
        let mut e = 0.0;
        for m in &ens.members {
            let h_bath = model.bath.to_operator(&ens.basis_of(m));
            e += m.weight * h_bath.expectation(&m.state).unwrap().re;
        }
        assert!((e - spec.energy).abs() < 0.2, "{e}");
    }

    #[test]
    fn reproducible_ensembles() {
        let model = wheel(2);
        let spec = InitialStateSpec::for_spins(7, 5);
        let a = prepare_ensemble(&model, &spec).unwrap();
        let b = prepare_ensemble(&model, &spec).unwrap();
        for (x, y) in a.members.iter().zip(&b.members) {
            assert_eq!(x.state, y.state);
            assert_eq!(x.weight.to_bits(), y.weight.to_bits());
        }
    }

    #[test]
    fn effective_dimension_matches_spectrum() {
        let model = wheel(3);
        let spec = InitialStateSpec::for_spins(10, 1);
        let h_bath = build_bath_hamiltonian(&model.lattice, &model.couplings, BathSpace::BathOnly).unwrap();
        let ev = h_bath.to_dense().self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        let exact = exact_effective_dimension(&ev, &spec);
        let est = effective_dimension(&model, &spec, 16).unwrap();
        assert!((est.value / exact - 1.0).abs() < 0.1, "{} vs {exact}", est.value);
    }

    #[test]
    fn effective_dimension_limits() {
        let spec = InitialStateSpec {
            energy: 0.0,
            delta: 1e12,
            beta_target: 0.0,
            seed: 0,
        };
        assert!((exact_effective_dimension(&[0.3; 37], &spec) - 37.0).abs() < 1e-9);
        let narrow = InitialStateSpec { delta: 1e-4, ..spec };
        assert!((exact_effective_dimension(&[0.0, 5.0, 9.0], &narrow) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sector_members_agree_with_full_space_state() {
        let model = wheel(3);
        let spec = InitialStateSpec::for_spins(10, 21);
        let grid = TimeSeries::uniform_grid(2.0, 30);
        let sectors = prepare_ensemble(&model, &spec).unwrap();
        let full = prepare_full_space(&model, &spec).unwrap();
        let a = evolve_ensemble(&model, &sectors, 0.5, &grid, &EnsembleOptions::default()).unwrap();
        let b = evolve_ensemble(&model, &full, 0.5, &grid, &EnsembleOptions::default()).unwrap();
        // Both are typical estimates of the same ensemble; d_eff ~ 100 here.
        let dev = a
            .series
            .values
            .iter()
            .zip(&b.series.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(dev < 0.1, "{dev}");
    }

    #[test]
    fn resumed_evolution_is_bit_identical() {
        let model = wheel(2);
        let spec = InitialStateSpec::for_spins(7, 8);
        let ens = prepare_ensemble(&model, &spec).unwrap();
        let grid = TimeSeries::uniform_grid(1.0, 20);
        let plain = evolve_ensemble(&model, &ens, 0.3, &grid, &EnsembleOptions::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.ckpt");
        let ck = |resume| EnsembleOptions {
            checkpoint: Some(CheckpointOptions {
                path: path.clone(),
                every: 7,
                resume,
            }),
            ..EnsembleOptions::default()
        };
        // An interrupted run: the last save happens at sample 14.
        evolve_ensemble(&model, &ens, 0.3, &grid[..15], &ck(false)).unwrap();
        assert_eq!(checkpoint::load(&path).unwrap()[0].time_index, 14);
        let resumed = evolve_ensemble(&model, &ens, 0.3, &grid, &ck(true)).unwrap();
        assert_eq!(resumed.series.values, plain.series.values);

        // A different coupling is refused.
        evolve_ensemble(&model, &ens, 0.3, &grid[..15], &ck(false)).unwrap();
        assert!(matches!(
            evolve_ensemble(&model, &ens, 0.4, &grid, &ck(true)),
            Err(Error::Checkpoint(_))
        ));
    }
}

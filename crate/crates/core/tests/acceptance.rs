//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `SPINBATH_ACCEPTANCE_ONLY=1,2,6` runs a subset (the rest print SKIP).
//! `SPINBATH_ACCEPTANCE_STRICT=1` exits non-zero when any criterion fails.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use faer::Mat;
use spinbath_core::dynamics::{find_lambda_crit, Regime, DEFAULT_THRESHOLD};
use spinbath_core::fit::linear_fit;
use spinbath_core::gpb::{self, BlockMatrix, DEFAULT_ED_CAP};
use spinbath_core::harness::{run_decay, RunConfig};
use spinbath_core::lattice::{CouplingMode, CouplingSpec, LatticeSpec};
use spinbath_core::model::{SpinModel, Term, WheelModel};
use spinbath_core::operator::C64;
use spinbath_core::scaling::fit_scaling;
use spinbath_core::series::TimeSeries;
use spinbath_core::typicality::{
    error_scaling_slope, evolve_ensemble, prepare_ensemble, typicality_error_scaling, EnsembleOptions,
    InitialStateSpec,
};
use spinbath_core::{chebyshev, Result};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn wheel(l: usize, couplings: CouplingSpec) -> WheelModel {
    WheelModel::new(LatticeSpec::new(l).unwrap(), couplings).unwrap()
}

/// Summary of one propagated configuration.
#[derive(Clone, Debug)]
struct Point {
    avg: f64,
    tau: f64,
    censored: bool,
    residual: Option<f64>,
    regime: Regime,
}

static RUNS: Mutex<Option<HashMap<String, Point>>> = Mutex::new(None);

/// Decay run with `t_max = max(20 * 0.95 / lambda^2, 200)` and
/// `dt = min(0.5, 0.1 / lambda^2)`, memoized.
fn decay(l: usize, lambda: f64, mode: CouplingMode) -> Result<Point> {
    let key = format!("{l}/{lambda}/{mode:?}");
    if let Some(p) = RUNS.lock().unwrap().get_or_insert_with(HashMap::new).get(&key) {
        return Ok(p.clone());
    }
    let mut cfg = RunConfig::default();
    cfg.lattice.l = l;
    cfg.dynamics.lambda = lambda;
    cfg.dynamics.t_max = Some((20.0 * 0.95 / (lambda * lambda)).max(200.0));
    // The exponential fit needs 20 samples between 90% and 5% of the initial deviation.
    cfg.dynamics.dt = (0.1 / (lambda * lambda)).min(0.5);
    cfg.couplings.mode = mode;
    let t0 = Instant::now();
    let run = run_decay(&cfg)?;
    let p = Point {
        avg: run.summary.longtime_avg,
        tau: run.summary.relaxation.tau,
        censored: run.summary.relaxation.censored,
        residual: run.summary.fit.as_ref().map(|f| f.residual),
        regime: run.summary.regime,
    };
    eprintln!(
        "    N={} lambda={lambda} {mode:?}: avg {:.4} tau {:.3}{} regime {} ({:.0?})",
        3 * l + 1,
        p.avg,
        p.tau,
        if p.censored { " (censored)" } else { "" },
        p.regime,
        t0.elapsed()
    );
    RUNS.lock().unwrap().as_mut().unwrap().insert(key, p.clone());
    Ok(p)
}

fn criterion_1() -> Result<Verdict> {
    let lambda = 0.2;
    let model = wheel(3, CouplingSpec::default());
    let ens = prepare_ensemble(&model, &InitialStateSpec::for_spins(10, 0))?;
    let grid: Vec<f64> = (0..=200).map(|k| k as f64).collect();
    let cheb = evolve_ensemble(&model, &ens, lambda, &grid, &EnsembleOptions::default())?;

    // Oracle: psi(t) = U exp(-i E t) U^T psi(0) per sector.
    let mut oracle = vec![0.0; grid.len()];
    for m in &ens.members {
        let basis = ens.basis_of(m);
        let h = model.total(lambda).to_operator(&basis).to_dense();
        let sz = model.observable().to_operator(&basis).to_dense();
        let evd = h.self_adjoint_eigen(faer::Side::Lower).unwrap();
        let u = evd.U().to_owned();
        let e = evd.S().column_vector().to_owned();
        let d = basis.dim();
        let a: Mat<f64> = u.transpose() * &sz * &u;
        let c: Vec<C64> = (0..d).map(|k| (0..d).map(|i| m.state[i] * u[(i, k)]).sum()).collect();
        for (slot, &t) in oracle.iter_mut().zip(&grid) {
            let ct: Vec<C64> = (0..d).map(|k| c[k] * C64::from_polar(1.0, -e[k] * t)).collect();
            let mut v = 0.0;
            for j in 0..d {
                let mut row = C64::new(0.0, 0.0);
                for k in 0..d {
                    row += a[(j, k)] * ct[k];
                }
                v += (ct[j].conj() * row).re;
            }
            *slot += m.weight * v;
        }
    }
    let dev = cheb
        .series
        .values
        .iter()
        .zip(&oracle)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    verdict(dev < 1e-8, format!("max |chebyshev - dense| = {dev:.2e} over t in [0, 200] (need < 1e-8)"))
}

fn criterion_2() -> Result<Verdict> {
    let mut h = SpinModel::new(1);
    h.push(Term::Field { site: 0, h: 0.5 });
    let mut sx = SpinModel::new(1);
    sx.push(Term::TransverseField { site: 0, h: 1.0 });
    let plus = vec![C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0); 2];
    let grid: Vec<f64> = (0..=1000).map(|k| 0.1 * k as f64).collect();
    let ev = chebyshev::evolve(&h.on_full(), &plus, &grid, &sx.on_full())?;
    let dev = grid
        .iter()
        .zip(&ev.series.values)
        .map(|(&t, v)| (v - 0.5 * (0.5 * t).cos()).abs())
        .fold(0.0, f64::max);
    verdict(dev < 1e-12, format!("max |<S^x(t)> - cos(t/2)/2| = {dev:.2e} over t in [0, 100] (need < 1e-12)"))
}

fn criterion_3() -> Result<Verdict> {
    let lambdas = [0.15, 0.2, 0.3];
    let mut ratios = Vec::new();
    for &lambda in &lambdas {
        let p = decay(6, lambda, CouplingMode::Uniform)?;
        ratios.push(if p.censored { f64::NAN } else { p.tau * lambda * lambda });
    }
    let in_band = ratios.iter().all(|r| (r / 0.95 - 1.0).abs() <= 0.25);
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    let spread = (hi - lo) / lo;
    verdict(
        in_band && spread < 0.30,
        format!("N=19 tau*lambda^2 at {lambdas:?} = {ratios:.3?} (band 0.95 +- 25%); spread {:.1}% (need < 30%)", 100.0 * spread),
    )
}

/// `lambda_crit` per bath length on the shared sweep grid.
const SWEEP_LAMBDAS: [f64; 7] = [0.1, 0.15, 0.2, 0.3, 0.5, 0.7, 1.0];

type Curve = Vec<(f64, f64)>;

fn lambda_crit(l: usize) -> Result<(Option<f64>, Curve)> {
    let curve: Vec<(f64, f64)> = SWEEP_LAMBDAS
        .iter()
        .map(|&lambda| Ok((lambda, decay(l, lambda, CouplingMode::Uniform)?.avg)))
        .collect::<Result<_>>()?;
    Ok((find_lambda_crit(&curve, DEFAULT_THRESHOLD).ok(), curve))
}

fn criterion_4() -> Result<Verdict> {
    let strong = decay(4, 1.0, CouplingMode::Uniform)?;
    let weak = decay(4, 0.15, CouplingMode::Uniform)?;
    let model = wheel(4, CouplingSpec::default());
    let eq = gpb::ed_equilibrium(&model, &InitialStateSpec::for_spins(13, 0), 0.15, DEFAULT_ED_CAP)?;

    let res_ok = match (strong.residual, weak.residual) {
        (Some(s), Some(w)) => s > 3.0 * w,
        _ => false,
    };
    let strong_ok = strong.regime == Regime::NonMarkovian && res_ok;
    let thermal = (weak.avg - eq.microcanonical).abs() < 0.03;
    let weak_ok = weak.regime == Regime::Markovian && thermal;

    let (crit, curve) = lambda_crit(4)?;
    let below: Vec<&(f64, f64)> = curve.iter().filter(|(l, _)| crit.is_none_or(|c| *l <= c)).collect();
    let superweak_ok = below.iter().all(|(_, v)| *v > DEFAULT_THRESHOLD);
    let crit_text = match crit {
        Some(c) => format!("lambda_crit(13) = {c:.4}"),
        None => "no threshold crossing on the grid".into(),
    };
    verdict(
        strong_ok && weak_ok && superweak_ok,
        format!(
            "lambda=1: label {}, residual {:?} vs 3x {:?}; lambda=0.15: label {}, avg {:.4} vs ED microcanonical {:.4} \
             (diagonal ensemble {:.4}); {crit_text}: {} of {} weaker points superweak",
            strong.regime,
            strong.residual,
            weak.residual,
            weak.regime,
            weak.avg,
            eq.microcanonical,
            eq.diagonal,
            below.iter().filter(|(_, v)| *v > DEFAULT_THRESHOLD).count(),
            below.len()
        ),
    )
}

fn criterion_5() -> Result<Verdict> {
    let mut crits = Vec::new();
    let mut text = Vec::new();
    for l in [3, 4, 5] {
        let (crit, curve) = lambda_crit(l)?;
        let min = curve.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        text.push(format!(
            "N={}: {}",
            3 * l + 1,
            crit.map(|c| format!("{c:.4}")).unwrap_or_else(|| format!("none (min avg {min:.4})"))
        ));
        crits.push((3 * l + 1, crit));
    }
    let found: Vec<(usize, f64)> = crits.iter().filter_map(|&(n, c)| c.map(|c| (n, c))).collect();
    let decreasing = found.len() == 3 && found.windows(2).all(|w| w[1].1 < w[0].1);
    let fit = if found.len() == 3 { fit_scaling(&found).ok() } else { None };
    let fit_ok = fit.as_ref().is_some_and(|f| f.b > 0.0 && f.residual < 0.2);
    let fit_text = fit
        .map(|f| format!("C2 = {:.3}, b = {:.3}, residual {:.3}", f.c2, f.b, f.residual))
        .unwrap_or_else(|| "no fit".into());
    verdict(decreasing && fit_ok, format!("lambda_crit {}; {fit_text}", text.join(", ")))
}

fn criterion_6() -> Result<Verdict> {
    let lambdas: Vec<f64> = (0..9).map(|k| 0.01 * 10f64.powf(k as f64 / 4.0)).collect();
    let mut slopes = Vec::new();
    let mut ok = true;
    let mut text = Vec::new();
    for l in [3, 4] {
        let n = 3 * l + 1;
        let model = wheel(l, CouplingSpec::default());
        let bases = gpb::sector_bases(n);
        let rho = gpb::product_state_rho(&model, &InitialStateSpec::for_spins(n, 0), &bases)?;
        let h0 = BlockMatrix::from_model(&model.unperturbed(), &bases);
        let v = BlockMatrix::from_model(&model.interaction, &bases);
        let a = BlockMatrix::from_model(&model.observable(), &bases);
        let (c1, _) = gpb::curvature_coefficients(&rho, &h0, &v, &a);
        let roots: Vec<f64> = lambdas
            .iter()
            .map(|&lambda| gpb::initial_curvature(&rho, &h0.add(&v, lambda), &a).sqrt())
            .collect();
        let fit = linear_fit(&lambdas, &roots)?;
        let zero_intercept = fit.intercept.abs() < 1e-8 * fit.slope;
        ok &= c1.abs() < 1e-10 && fit.r2 > 0.999 && zero_intercept;
        text.push(format!(
            "N={n}: c1 = {c1:.1e}, slope {:.5}, intercept {:.1e}, R^2 = {:.12}",
            fit.slope, fit.intercept, fit.r2
        ));
        slopes.push(fit.slope);
    }
    let rel = (slopes[0] - slopes[1]).abs() / slopes[0].max(slopes[1]);
    verdict(ok && rel < 0.05, format!("{}; slopes differ by {:.2}% (need < 5%)", text.join("; "), 100.0 * rel))
}

fn criterion_7() -> Result<Verdict> {
    let model = wheel(3, CouplingSpec::default());
    let state = InitialStateSpec::for_spins(10, 0);
    let lambda = 0.2;
    let spec = gpb::diagonalize_model(&model.total(lambda), DEFAULT_ED_CAP)?;
    let bases = BlockMatrix::layout(&spec);
    let rho = gpb::product_state_rho(&model, &state, &bases)?.in_eigenbasis(&spec);
    let a_mat = BlockMatrix::from_model(&model.observable(), &bases).in_eigenbasis(&spec);
    let dist = gpb::build_gap_distribution(&rho, &a_mat, &spec);

    // Oracle: |rho_jk A_kj| over non-degenerate pairs above the noise floor, normalized.
    let floor = gpb::mass_noise_floor(&rho, &a_mat);
    let mut raw = 0.0;
    for ((blk, r), am) in spec.blocks.iter().zip(&rho.blocks).zip(&a_mat.blocks) {
        let e = &blk.eigenvalues;
        for j in 0..e.len() {
            for k in 0..e.len() {
                let m = (r[(j, k)] * am[(k, j)]).abs();
                if (e[j] - e[k]).abs() > spec.degeneracy_tol && m > floor {
                    raw += m;
                }
            }
        }
    }
    let sum_p = dist.total();
    let raw_err = (dist.raw_mass - raw).abs() / raw;

    let report = gpb::exact_report(&model, &state, lambda, None, DEFAULT_ED_CAP)?;
    let eps = report.epsilon.unwrap();
    let hist = gpb::histogram(&dist, eps)?;
    let integral = hist.integral();
    let a1 = gpb::compute_a(&hist);
    let scaled = gpb::build_gap_distribution(&rho, &a_mat, &spec.scaled(10.0));
    let a10 = gpb::compute_a(&gpb::histogram(&scaled, 10.0 * eps)?);
    let a_err = (a10 - a1).abs() / a1;
    let num = report.numerator.unwrap();
    let ident = (num - report.t_eq.unwrap() * report.curvature.sqrt()).abs() / num;

    let mut bounds = Vec::new();
    for lam in [0.2, 0.1, 0.05] {
        let p = decay(3, lam, CouplingMode::Uniform)?;
        let r = gpb::exact_report(&model, &state, lam, None, DEFAULT_ED_CAP)?.with_relaxation(p.tau, p.censored);
        let b = r.numerator_lower_bound.unwrap();
        bounds.push((lam, b.value, b.censored));
    }
    let grows = bounds.windows(2).all(|w| w[1].1 > w[0].1);
    let ok = (sum_p - 1.0).abs() < 1e-12
        && raw_err < 1e-12
        && (integral - 1.0).abs() < 1e-12
        && a_err < 1e-12
        && ident < 4.0 * f64::EPSILON
        && grows;
    verdict(
        ok,
        format!(
            "sum p - 1 = {:.1e}, raw mass vs oracle {raw_err:.1e}, histogram integral - 1 = {:.1e}, \
             a(10H)/a(H) - 1 = {a_err:.1e}, numerator identity {ident:.1e}; bound (lambda, value, censored) {:?}",
            sum_p - 1.0,
            integral - 1.0,
            bounds
                .iter()
                .map(|(l, v, c)| format!("({l}, {v:.4}, {c})"))
                .collect::<Vec<_>>()
        ),
    )
}

fn criterion_8() -> Result<Verdict> {
    let n = 7;
    let lambda = 0.2;
    let model = wheel(2, CouplingSpec::default());
    let spec = gpb::diagonalize_model(&model.total(lambda), DEFAULT_ED_CAP)?;
    let bases = BlockMatrix::layout(&spec);
    let rho = gpb::infinite_temperature_rho(n, &bases).in_eigenbasis(&spec);
    let a_mat = BlockMatrix::from_model(&model.observable(), &bases).in_eigenbasis(&spec);
    let dist = gpb::build_gap_distribution(&rho, &a_mat, &spec);
    let eps = dist.sigma() / 30.0;
    let hist = gpb::histogram(&dist, eps)?;

    // Series from propagating every system-up basis state, weight 1/d_bath each.
    let dt = 0.25;
    let steps = (gpb::required_duration(eps) / dt).ceil() as usize;
    let grid = TimeSeries::uniform_grid(dt, steps);
    let d_bath = 2f64.powi(n as i32 - 1);
    let mut values = vec![0.0; grid.len()];
    for basis in &bases {
        let ops = model.operators(basis, lambda);
        for i in (0..basis.dim()).filter(|&i| basis.state(i) & 1 == 1) {
            let mut psi = vec![C64::new(0.0, 0.0); basis.dim()];
            psi[i] = C64::new(1.0, 0.0);
            let ev = chebyshev::evolve(&ops.h, &psi, &grid, &ops.sz_sys)?;
            for (v, x) in values.iter_mut().zip(&ev.series.values) {
                *v += x / d_bath;
            }
        }
    }
    let series = TimeSeries::new(grid, values);
    let rep = gpb::fourier_check(&series, &hist)?;

    // Truncated Lorentzian of half width gamma; quadrature oracle for a.
    let gamma = 0.05;
    let a_of = |cutoff: f64| -> Result<f64> {
        let m = 400_000;
        let gaps: Vec<f64> = (0..m).map(|k| -cutoff + 2.0 * cutoff * (k as f64 + 0.5) / m as f64).collect();
        let masses: Vec<f64> = gaps.iter().map(|g| 1.0 / (1.0 + (g / gamma).powi(2))).collect();
        Ok(gpb::compute_a(&gpb::histogram(&gpb::GapDistribution::from_masses(gaps, masses)?, gamma / 20.0)?))
    };
    let oracle = |c: f64| {
        let at = (c / gamma).atan();
        (gamma * (c - gamma * at) / at).sqrt() / (2.0 * gamma * at)
    };
    let (a1, a10) = (a_of(1.0)?, a_of(10.0)?);
    let ratio = a10 / a1;
    let oracle_err = (a1 / oracle(1.0) - 1.0).abs().max((a10 / oracle(10.0) - 1.0).abs());
    verdict(
        rep.l1 < 0.1 && (2.8..=3.5).contains(&ratio) && oracle_err < 0.01,
        format!(
            "N=7 Fourier L1 = {:.4} at eps = {eps:.4}, T = {:.0} (need < 0.1); Lorentzian a(10c)/a(c) = {ratio:.3} \
             (need 2.8..3.5), quadrature mismatch {oracle_err:.1e}",
            rep.l1, rep.duration
        ),
    )
}

fn criterion_9() -> Result<Verdict> {
    let model = wheel(4, CouplingSpec::default());
    let base = InitialStateSpec::for_spins(13, 1000);
    let deltas = [0.025, 0.05, 0.1, 0.2, 0.4];
    // Per-seed values have heavier than Gaussian tails; 100 seeds keep the
    // standard error of the slope near 0.05.
    let points = typicality_error_scaling(&model, &base, 0.2, &deltas, 100)?;
    let slope = error_scaling_slope(&points)?;
    // Zero-mean error: the two halves of the seeds agree within three standard errors.
    let mut stable = true;
    for p in &points {
        let half = |off: usize| {
            let xs: Vec<f64> = p.samples.iter().skip(off).step_by(2).copied().collect();
            let m = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / m;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (mean, var / m)
        };
        let ((m0, v0), (m1, v1)) = (half(0), half(1));
        stable &= (m0 - m1).abs() <= 3.0 * (v0 + v1).sqrt();
    }
    verdict(
        (-0.65..=-0.35).contains(&slope) && stable,
        format!(
            "slope of log std vs log d_eff = {slope:.3} (need -0.65..-0.35); halves agree: {stable}; \
             (d_eff, std) = {:?}",
            points.iter().map(|p| format!("({:.0}, {:.2e})", p.d_eff, p.std)).collect::<Vec<_>>()
        ),
    )
}

fn criterion_10() -> Result<Verdict> {
    let uniform = decay(4, 0.2, CouplingMode::Uniform)?;
    let random = decay(4, 0.2, CouplingMode::Random)?;
    let rel = (random.tau - uniform.tau).abs() / uniform.tau;
    let ok = !uniform.censored && !random.censored && rel <= 0.25 && uniform.regime == random.regime;
    verdict(
        ok,
        format!(
            "N=13 lambda=0.2 tau uniform {:.3}, random {:.3} ({:.1}% apart, need <= 25%); labels {} / {}",
            uniform.tau,
            random.tau,
            100.0 * rel,
            uniform.regime,
            random.regime
        ),
    )
}

type Criterion = fn() -> Result<Verdict>;

fn main() {
    let all: [(u32, &str, Criterion); 10] = [
        (1, "propagator oracle", criterion_1),
        (2, "single-spin precession", criterion_2),
        (3, "golden-rule constant at N=19", criterion_3),
        (4, "regime taxonomy at N=13", criterion_4),
        (5, "lambda_crit monotonicity and scaling", criterion_5),
        (6, "curvature linearity", criterion_6),
        (7, "equilibration-bound chain at N=10", criterion_7),
        (8, "Fourier and Lorentzian checks", criterion_8),
        (9, "typicality error scaling", criterion_9),
        (10, "random couplings", criterion_10),
    ];
    let only: Option<Vec<u32>> = std::env::var("SPINBATH_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("SPINBATH_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = Vec::new();
    for (id, name, f) in all {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            println!("criterion {id:>2} SKIP {name}");
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f);
        let (pass, detail) = match outcome {
            Ok(Ok(v)) => (v.pass, v.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        println!(
            "criterion {id:>2} {} {name}: {detail} [{:.1?}]",
            if pass { "PASS" } else { "FAIL" },
            t0.elapsed()
        );
        if !pass {
            failed.push(id);
        }
    }
    println!("acceptance: {} failed {:?}", failed.len(), failed);
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}

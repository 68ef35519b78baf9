//! Long-time averages, relaxation times, exponential fits and regime labels
//! for magnetization time series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{linear_fit, proportional_fit};
use crate::series::TimeSeries;

pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;
pub const MIN_TAIL_SAMPLES: usize = 100;
pub const DEFAULT_THRESHOLD: f64 = -0.04;
pub const DEFAULT_LAMBDA_NON_MARKOVIAN: f64 = 0.3;
/// Relaxation constant `r` of `tau_rel = r / lambda^2` expected for this model family.
pub const REFERENCE_FGR_CONSTANT: f64 = 0.95;
pub const MIN_FIT_SAMPLES: usize = 20;
/// `max / min` of `tau lambda^2` above which FGR points are flagged.
pub const FGR_SPREAD_WARNING: f64 = 1.5;
/// Initial deviations from equilibrium below this (relative) count as none.
pub const FLAT_DEVIATION: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    pub tail_fraction: f64,
    pub threshold: f64,
    pub lambda_non_markovian: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            tail_fraction: DEFAULT_TAIL_FRACTION,
            threshold: DEFAULT_THRESHOLD,
            lambda_non_markovian: DEFAULT_LAMBDA_NON_MARKOVIAN,
        }
    }
}

/// Mean over the final `tail_fraction` of the time window.
pub fn long_time_average(series: &TimeSeries, tail_fraction: f64) -> Result<f64> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("tail fraction {tail_fraction} not in (0, 1]")));
    }
    if series.is_empty() {
        return Err(Error::SeriesTooShort("empty series".into()));
    }
    let t_end = series.final_time();
    let t_start = t_end - tail_fraction * (t_end - series.times[0]);
    let tail: Vec<f64> = series
        .times
        .iter()
        .zip(&series.values)
        .filter(|(t, _)| **t >= t_start)
        .map(|(_, v)| *v)
        .collect();
    if tail.len() < MIN_TAIL_SAMPLES {
        let needed = (MIN_TAIL_SAMPLES as f64 / tail_fraction).ceil() as usize;
        return Err(Error::SeriesTooShort(format!(
            "tail holds {} samples, need {MIN_TAIL_SAMPLES} (about {needed} samples on a uniform grid)",
            tail.len()
        )));
    }
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationTime {
    /// Crossing time, or the final time when censored.
    pub tau: f64,
    /// The 1/e level was never reached; `tau` is a lower bound.
    pub censored: bool,
}

/// First time the series reaches `eq + (v(0) - eq) / e`, linearly interpolated.
pub fn relaxation_time(series: &TimeSeries, eq_value: f64) -> Result<RelaxationTime> {
    if series.len() < 2 {
        return Err(Error::SeriesTooShort("need at least two samples".into()));
    }
    let v0 = series.values[0];
    let dev0 = v0 - eq_value;
    if dev0.abs() <= FLAT_DEVIATION * v0.abs().max(1.0) {
        // Nothing to relax beyond rounding.
        return Ok(RelaxationTime {
            tau: series.final_time(),
            censored: true,
        });
    }
    let level = eq_value + dev0 / std::f64::consts::E;
    let below = |v: f64| if dev0 >= 0.0 { v <= level } else { v >= level };
    for k in 1..series.len() {
        let v = series.values[k];
        if below(v) {
            let (t0, t1) = (series.times[k - 1], series.times[k]);
            let (v_prev, v_cur) = (series.values[k - 1], v);
            let tau = if v_cur == v_prev {
                t1
            } else {
                t0 + (level - v_prev) / (v_cur - v_prev) * (t1 - t0)
            };
            return Ok(RelaxationTime { tau, censored: false });
        }
    }
    Ok(RelaxationTime {
        tau: series.final_time(),
        censored: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub tau_rel: f64,
    pub eq_value: f64,
    pub amplitude: f64,
    /// RMS deviation of the fitted curve from the data between `t = 0` and
    /// the end of the fit window.
    pub residual: f64,
    pub window: (f64, f64),
    pub n_points: usize,
    /// Set when the window had to be shortened because of non-positive deviations.
    pub shrunk: bool,
}

impl DecayFit {
    pub fn value_at(&self, t: f64) -> f64 {
        self.eq_value + self.amplitude * (-t / self.tau_rel).exp()
    }
}

/// Log-linear fit of `v - eq` over the window where the deviation is between
/// 5% and 90% of its initial value.
pub fn fit_exponential(series: &TimeSeries, eq_value: f64) -> Result<DecayFit> {
    if series.is_empty() {
        return Err(Error::SeriesTooShort("empty series".into()));
    }
    let dev0 = series.values[0] - eq_value;
    if dev0 == 0.0 {
        return Err(Error::InsufficientData("no initial deviation from equilibrium".into()));
    }
    let ratio = |k: usize| (series.values[k] - eq_value) / dev0;
    let first = (0..series.len()).find(|&k| ratio(k) <= 0.9);
    let Some(first) = first else {
        return Err(Error::InsufficientData("deviation never falls below 90%".into()));
    };
    let mut end = first;
    let mut shrunk = false;
    while end < series.len() {
        let r = ratio(end);
        if r < 0.05 {
            if r <= 0.0 {
                shrunk = true;
            }
            break;
        }
        end += 1;
    }
    let n_points = end - first;
    if n_points < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "fit window holds {n_points} samples, need {MIN_FIT_SAMPLES}"
        )));
    }
    if shrunk {
        log::warn!("fit window shortened at t = {} by non-positive deviations", series.times[end.min(series.len() - 1)]);
    }
    let xs = &series.times[first..end];
    let ys: Vec<f64> = (first..end).map(|k| ratio(k).ln()).collect();
    let lf = linear_fit(xs, &ys)?;
    if !(lf.slope < 0.0) {
        return Err(Error::InsufficientData("fitted deviation does not decay".into()));
    }
    let tau_rel = -1.0 / lf.slope;
    let amplitude = dev0 * lf.intercept.exp();
    let fit = DecayFit {
        tau_rel,
        eq_value,
        amplitude,
        residual: 0.0,
        window: (xs[0], xs[xs.len() - 1]),
        n_points,
        shrunk,
    };
    let ss: f64 = (0..end).map(|k| (series.values[k] - fit.value_at(series.times[k])).powi(2)).sum();
    Ok(DecayFit {
        residual: (ss / end as f64).sqrt(),
        ..fit
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Regime {
    NonMarkovian,
    Markovian,
    Superweak,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::NonMarkovian => "nonMarkovian",
            Regime::Markovian => "Markovian",
            Regime::Superweak => "superweak",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub regime: Regime,
    pub longtime_avg: f64,
    pub fit_residual: Option<f64>,
    pub tau_lambda2: Option<f64>,
}

/// Superweak when the long-time average stays above the threshold, otherwise
/// non-Markovian above the coupling boundary and Markovian below it.
pub fn classify(longtime_avg: f64, lambda: f64, opts: &AnalysisOptions) -> Regime {
    if longtime_avg > opts.threshold {
        Regime::Superweak
    } else if lambda > opts.lambda_non_markovian {
        Regime::NonMarkovian
    } else {
        Regime::Markovian
    }
}

pub fn classify_regime(series: &TimeSeries, lambda: f64, opts: &AnalysisOptions) -> Result<RegimeLabel> {
    let summary = analyze(series, lambda, opts)?;
    Ok(RegimeLabel {
        regime: summary.regime,
        longtime_avg: summary.longtime_avg,
        fit_residual: summary.fit.as_ref().map(|f| f.residual),
        tau_lambda2: (!summary.relaxation.censored).then_some(summary.relaxation.tau * lambda * lambda),
    })
}

/// Everything the sweep table records for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub longtime_avg: f64,
    pub relaxation: RelaxationTime,
    pub fit: Option<DecayFit>,
    pub regime: Regime,
}

pub fn analyze(series: &TimeSeries, lambda: f64, opts: &AnalysisOptions) -> Result<DecaySummary> {
    let longtime_avg = long_time_average(series, opts.tail_fraction)?;
    let relaxation = relaxation_time(series, longtime_avg)?;
    let fit = if relaxation.censored {
        None
    } else {
        fit_exponential(series, longtime_avg).ok()
    };
    Ok(DecaySummary {
        longtime_avg,
        relaxation,
        fit,
        regime: classify(longtime_avg, lambda, opts),
    })
}

/// Crossing of `longtime_avg = threshold`, interpolated linearly in `log lambda`.
///
/// Scans from the strongest coupling down and returns the first bracket whose
/// stronger end is at or below the threshold and whose weaker end is above it.
pub fn find_lambda_crit(curve: &[(f64, f64)], threshold: f64) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::InsufficientData("empty curve".into()));
    }
    if curve.iter().any(|&(l, _)| !(l > 0.0)) {
        return Err(Error::InvalidParameter("couplings must be positive".into()));
    }
    let mut pts = curve.to_vec();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
    for w in pts.windows(2) {
        let (l_hi, v_hi) = w[0];
        let (l_lo, v_lo) = w[1];
        if v_hi <= threshold && v_lo > threshold {
            let s = (threshold - v_hi) / (v_lo - v_hi);
            return Ok((l_hi.ln() + s * (l_lo.ln() - l_hi.ln())).exp());
        }
    }
    let nearest = pts
        .iter()
        .min_by(|a, b| (a.1 - threshold).abs().total_cmp(&(b.1 - threshold).abs()))
        .expect("non-empty");
    Err(Error::NoCrossing {
        threshold,
        nearest_lambda: nearest.0,
        nearest_value: nearest.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgrFit {
    pub r: f64,
    /// `tau lambda^2` per input point.
    pub ratios: Vec<f64>,
    /// `max / min` of the ratios.
    pub spread: f64,
    pub warning: Option<String>,
}

/// Least-squares `r` in `tau = r / lambda^2`.
pub fn fit_fgr_constant(points: &[(f64, f64)]) -> Result<FgrFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("need 3 points, got {}", points.len())));
    }
    let xs: Vec<f64> = points.iter().map(|&(l, _)| 1.0 / (l * l)).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, t)| t).collect();
    let r = proportional_fit(&xs, &ys)?;
    let ratios: Vec<f64> = points.iter().map(|&(l, t)| t * l * l).collect();
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = max / min;
    let warning = (spread > FGR_SPREAD_WARNING).then(|| {
        let per: Vec<String> = points
            .iter()
            .zip(&ratios)
            .map(|(&(l, _), q)| format!("lambda={l}: tau*lambda^2={q:.3}"))
            .collect();
        format!("points likely span regimes ({})", per.join(", "))
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(FgrFit {
        r,
        ratios,
        spread,
        warning,
    })
}

/// RMS distance of each series from their mean after rescaling `t -> lambda^2 t`,
/// evaluated on `grid` (rescaled units).
pub fn collapse_distance(runs: &[(f64, &TimeSeries)], grid: &[f64]) -> Result<f64> {
    if runs.len() < 2 || grid.is_empty() {
        return Err(Error::InsufficientData("need two series and a grid".into()));
    }
    for &(l, s) in runs {
        if s.final_time() * l * l < grid[grid.len() - 1] {
            return Err(Error::SeriesTooShort(format!("series at lambda = {l} ends before the grid")));
        }
    }
    let curves: Vec<Vec<f64>> = runs
        .iter()
        .map(|&(l, s)| grid.iter().map(|&x| s.value_at(x / (l * l))).collect())
        .collect();
    let n = curves.len() as f64;
    let mut ss = 0.0;
    for k in 0..grid.len() {
        let mean = curves.iter().map(|c| c[k]).sum::<f64>() / n;
        ss += curves.iter().map(|c| (c[k] - mean).powi(2)).sum::<f64>();
    }
    Ok((ss / (n * grid.len() as f64)).sqrt())
}

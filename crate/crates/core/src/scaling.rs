//! Size scaling of the critical coupling: Gaussian density of states, the
//! perturbative criterion, and the fit `lambda_crit(N) = C2 N^(1/4) e^(-b N)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::gpb::sector_bases;
use crate::model::{SpinModel, WheelModel};
use crate::typicality::default_energy;

/// Half width of the eigenstate window used for the matrix-element scale.
pub const ETH_WINDOW: f64 = 0.5;

/// `Omega(N, E) ~ (2^N / sqrt N) exp(-E^2 / (alpha N))` at inverse temperature `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DosModel {
    pub alpha: f64,
    pub beta: f64,
}

impl DosModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let m = Self { alpha, beta };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need alpha > 0 and finite beta, got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        if self.growth_rate() <= 0.0 {
            log::warn!("density of states does not grow with N at beta = {}", self.beta);
        }
        Ok(())
    }

    /// `log 2 - alpha beta^2 / 4`.
    pub fn growth_rate(&self) -> f64 {
        std::f64::consts::LN_2 - 0.25 * self.alpha * self.beta * self.beta
    }

    /// Decay constant `b` of `lambda_crit`.
    pub fn b(&self) -> f64 {
        0.5 * self.growth_rate()
    }

    /// `alpha` that reproduces a given `b` at this `beta`.
    pub fn alpha_for_b(b: f64, beta: f64) -> f64 {
        4.0 * (std::f64::consts::LN_2 - 2.0 * b) / (beta * beta)
    }
}

/// `ln Omega(N, beta)` without the unknown additive constant.
pub fn log_dos_at_beta(model: &DosModel, n: usize) -> f64 {
    let n = n as f64;
    -0.5 * n.ln() + model.growth_rate() * n
}

/// `Omega(N, beta)` up to a constant factor; only ratios are meaningful.
pub fn dos_at_beta(model: &DosModel, n: usize) -> f64 {
    log_dos_at_beta(model, n).exp()
}

/// `C2 / sqrt(Omega) = C2 N^(1/4) e^(-b N)`.
pub fn predict_lambda_crit(model: &DosModel, n: usize, c2: f64) -> f64 {
    c2 * (-0.5 * log_dos_at_beta(model, n)).exp()
}

/// `lambda^2 C1 Omega pi^2 / 3`; below one the theory predicts no relaxation.
pub fn perturbative_criterion(lambda: f64, model: &DosModel, n: usize, c1: f64) -> f64 {
    lambda * lambda * c1 * dos_at_beta(model, n) * std::f64::consts::PI.powi(2) / 3.0
}

/// The `C2` for which the criterion equals one exactly at the predicted `lambda_crit`.
pub fn matched_c2(c1: f64) -> f64 {
    (3.0 / (c1 * std::f64::consts::PI.powi(2))).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    #[serde(rename = "C2")]
    pub c2: f64,
    pub b: f64,
    /// RMS of `ln lambda_crit` about the fit.
    pub residual: f64,
}

impl ScalingFit {
    pub fn predict(&self, n: usize) -> f64 {
        let n = n as f64;
        self.c2 * n.powf(0.25) * (-self.b * n).exp()
    }

    /// `C2,b,residual` header and value line.
    pub fn csv_footer(&self) -> String {
        format!("C2,b,residual\n{},{},{}\n", self.c2, self.b, self.residual)
    }
}

/// Least squares of `ln lambda - ln(N)/4 = ln C2 - b N`.
pub fn fit_scaling(points: &[(usize, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("scaling fit needs 3 sizes, got {}", points.len())));
    }
    if let Some(&(n, l)) = points.iter().find(|(n, l)| *n == 0 || !(*l > 0.0)) {
        return Err(Error::InvalidParameter(format!("invalid point N = {n}, lambda_crit = {l}")));
    }
    let xs: Vec<f64> = points.iter().map(|&(n, _)| n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|&(n, l)| l.ln() - 0.25 * (n as f64).ln()).collect();
    let lf = linear_fit(&xs, &ys)?;
    let fit = ScalingFit {
        c2: lf.intercept.exp(),
        b: -lf.slope,
        residual: lf.rms,
    };
    if fit.b <= 0.0 {
        log::warn!("fitted b = {} is not positive", fit.b);
    }
    Ok(fit)
}

/// Mean and variance of the spectrum of `model`, from traces of `H` and `H^2`.
pub fn spectral_moments(model: &SpinModel) -> (f64, f64) {
    let bases = sector_bases(model.n_spins());
    let (dim, t1, t2) = bases
        .par_iter()
        .map(|b| {
            let op = model.to_operator(b);
            (b.dim() as f64, op.trace(), op.frobenius_sq())
        })
        .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let mean = t1 / dim;
    (mean, t2 / dim - mean * mean)
}

/// `alpha` of a Gaussian level density with variance `alpha N / 2`.
pub fn alpha_from_variance(variance: f64, n: usize) -> f64 {
    2.0 * variance / n as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EthSample {
    pub energy: f64,
    pub half_width: f64,
    pub n_states: usize,
    /// States per unit energy in the window.
    pub density: f64,
    /// Mean `|<m|H_int|n>|^2` over ordered pairs `m != n` in the window.
    pub mean_sq: f64,
    /// `mean_sq * density`.
    pub c1: f64,
    /// The same product over pairs whose mean energy lies in each third of the window.
    pub c1_sub: Vec<f64>,
}

/// Typical squared matrix element of `H_int` between eigenstates of `H_0`
/// in `[energy - half_width, energy + half_width]`, times the level density.
/// Pairs in different magnetization sectors enter with zero.
pub fn measure_eth_constant(model: &WheelModel, energy: f64, half_width: f64, cap: usize) -> Result<EthSample> {
    if !(half_width > 0.0) {
        return Err(Error::InvalidParameter(format!("window half width {half_width} must be > 0")));
    }
    let bases = sector_bases(model.n_spins());
    if let Some(b) = bases.iter().find(|b| b.dim() > cap) {
        return Err(Error::OverCap { dim: b.dim(), cap });
    }
    let h0 = model.unperturbed();
    // Per sector: energies in the window and the squared elements between them.
    type SectorPairs = (Vec<f64>, Vec<(usize, usize, f64)>);
    let per: Vec<SectorPairs> = bases
        .par_iter()
        .map(|b| {
            let evd = h0
                .to_operator(b)
                .to_dense()
                .self_adjoint_eigen(faer::Side::Lower)
                .map_err(|e| Error::Eigen(format!("{e:?}")))?;
            let s = evd.S().column_vector();
            let keep: Vec<usize> = (0..s.nrows()).filter(|&i| (s[i] - energy).abs() <= half_width).collect();
            if keep.is_empty() {
                return Ok((Vec::new(), Vec::new()));
            }
            let u = evd.U();
            let sub = faer::Mat::<f64>::from_fn(u.nrows(), keep.len(), |i, j| u[(i, keep[j])]);
            let v = model.interaction.to_operator(b).to_dense();
            let vm = sub.transpose() * (&v * &sub);
            let mut pairs = Vec::new();
            for i in 0..keep.len() {
                for j in 0..keep.len() {
                    if i != j {
                        pairs.push((i, j, vm[(i, j)].powi(2)));
                    }
                }
            }
            Ok((keep.iter().map(|&k| s[k]).collect(), pairs))
        })
        .collect::<Result<_>>()?;
    let n_states: usize = per.iter().map(|(e, _)| e.len()).sum();
    if n_states < 2 {
        return Err(Error::InsufficientData(format!("{n_states} eigenstates in the window")));
    }
    let density = n_states as f64 / (2.0 * half_width);
    let sum_sq: f64 = per.iter().flat_map(|(_, p)| p.iter().map(|x| x.2)).sum();
    let mean_sq = sum_sq / (n_states * (n_states - 1)) as f64;

    // Pairs binned by their mean energy; cross-sector pairs count as zeros.
    let third = |x: f64| (((x - energy + half_width) / (2.0 * half_width) * 3.0).floor() as i64).clamp(0, 2) as usize;
    let all: Vec<f64> = per.iter().flat_map(|(e, _)| e.iter().copied()).collect();
    let mut counts = [0usize; 3];
    for (i, &a) in all.iter().enumerate() {
        for (j, &b) in all.iter().enumerate() {
            if i != j {
                counts[third(0.5 * (a + b))] += 1;
            }
        }
    }
    let mut sums = [0.0; 3];
    for (e, p) in &per {
        for &(i, j, x) in p {
            sums[third(0.5 * (e[i] + e[j]))] += x;
        }
    }
    let c1_sub = (0..3)
        .map(|k| if counts[k] == 0 { f64::NAN } else { sums[k] / counts[k] as f64 * density })
        .collect();
    Ok(EthSample {
        energy,
        half_width,
        n_states,
        density,
        mean_sq,
        c1: mean_sq * density,
        c1_sub,
    })
}

/// Window center for the matrix-element scale: bath energy of the initial
/// state plus the Zeeman energy of the up system spin.
pub fn eth_target_energy(model: &WheelModel) -> f64 {
    default_energy(model.n_spins()) + 0.5 * model.couplings.b
}

//! Extremal eigenvalue estimates for Chebyshev rescaling.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::SparseOperator;

/// Default widening of the spectral interval, relative to its half-span.
pub const DEFAULT_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub e_min: f64,
    pub e_max: f64,
    /// Extremal Ritz values before widening.
    pub ritz_min: f64,
    pub ritz_max: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl SpectralBounds {
    pub fn half_span(&self) -> f64 {
        0.5 * (self.e_max - self.e_min)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.e_max + self.e_min)
    }

    pub fn contains(&self, e: f64) -> bool {
        e >= self.e_min && e <= self.e_max
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            max_iter: 600,
            tol: 1e-10,
            seed: 0x5eed,
        }
    }
}

/// Interval containing the spectrum of a symmetric operator, widened by
/// `margin` times the half-span.
pub fn estimate_spectral_bounds(op: &SparseOperator, margin: f64) -> Result<SpectralBounds> {
    estimate_spectral_bounds_with(op, margin, LanczosOptions::default())
}

pub fn estimate_spectral_bounds_with(
    op: &SparseOperator,
    margin: f64,
    opts: LanczosOptions,
) -> Result<SpectralBounds> {
    if !op.is_hermitian() {
        return Err(Error::InvalidParameter(
            "spectral bounds need a hermitian operator".into(),
        ));
    }
    if !(margin >= 0.0) {
        return Err(Error::InvalidParameter(format!("margin {margin} must be >= 0")));
    }
    let dim = op.dim();
    if dim == 0 {
        return Err(Error::InvalidParameter("empty operator".into()));
    }
    let (lo, hi, residual, iterations) = if dim <= 64 {
        let ev = op
            .to_dense()
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi, 0.0, 0)
    } else {
        lanczos_extremes(op, &opts)?
    };
    let half = 0.5 * (hi - lo);
    // Keep a nonzero span for scalar operators.
    let pad = residual + margin * half.max(1e-12 * (1.0 + lo.abs().max(hi.abs())));
    Ok(SpectralBounds {
        e_min: lo - pad,
        e_max: hi + pad,
        ritz_min: lo,
        ritz_max: hi,
        residual,
        iterations,
    })
}

/// Plain Lanczos without reorthogonalization; extremal Ritz values converge
/// first and their residual bounds stay valid after orthogonality is lost.
fn lanczos_extremes(op: &SparseOperator, opts: &LanczosOptions) -> Result<(f64, f64, f64, usize)> {
    let dim = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ dim as u64);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let mut v_prev = vec![0.0; dim];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let scale = op.gershgorin_radius().max(f64::MIN_POSITIVE);
    let mut beta_prev = 0.0;
    let mut last = (0.0, 0.0, f64::INFINITY);

    for k in 0..opts.max_iter.min(dim) {
        let w0 = op.apply_real(&v)?;
        let alpha: f64 = w0.iter().zip(&v).map(|(a, b)| a * b).sum();
        let mut w: Vec<f64> = w0
            .iter()
            .zip(&v)
            .zip(&v_prev)
            .map(|((wi, vi), pi)| wi - alpha * vi - beta_prev * pi)
            .collect();
        let beta = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        alphas.push(alpha);

        let m = alphas.len();
        let invariant = beta <= 1e-12 * scale;
        if invariant || m.is_multiple_of(10) || m == opts.max_iter.min(dim) {
            let (lo, hi, r_lo, r_hi) = tridiagonal_extremes(&alphas, &betas, beta)?;
            let residual = r_lo.max(r_hi);
            last = (lo, hi, residual);
            if invariant || residual <= opts.tol * scale {
                return Ok((lo, hi, residual, k + 1));
            }
        }
        betas.push(beta);
        w.iter_mut().for_each(|x| *x /= beta);
        v_prev = std::mem::replace(&mut v, w);
        beta_prev = beta;
    }
    if alphas.len() == dim {
        // Krylov space exhausted without the invariant test firing.
        return Ok((last.0, last.1, last.2, dim));
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: last.2,
    })
}

/// Extremal eigenvalues of the Lanczos tridiagonal matrix with their residual
/// bounds `|beta_next * s_last|`.
fn tridiagonal_extremes(alphas: &[f64], betas: &[f64], beta_next: f64) -> Result<(f64, f64, f64, f64)> {
    let m = alphas.len();
    let mut t = Mat::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let evd = t
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    // faer returns eigenvalues in ascending order.
    let lo = s[0];
    let hi = s[m - 1];
    let r_lo = (beta_next * u[(m - 1, 0)]).abs();
    let r_hi = (beta_next * u[(m - 1, m - 1)]).abs();
    Ok((lo, hi, r_lo, r_hi))
}

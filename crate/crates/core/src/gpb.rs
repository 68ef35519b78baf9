//! Exact-diagonalization quantities of the equilibration-time bound: gap
//! distribution, its histogram, `a`, `Q`, the initial curvature and its
//! coefficients, and the Fourier comparison for the infinite-temperature state.
//!
//! Operators are held blockwise over magnetization sectors. All matrices are
//! real, and `rho` is block diagonal for every state considered here, so only
//! pairs of eigenstates within one block can carry gap weight.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SpinModel, WheelModel};
use crate::operator::{SparseOperator, C64};
use crate::sector::{Basis, MagnetizationSector};
use crate::series::TimeSeries;
use crate::typicality::{InitialStateSpec, WeightedEnsemble};

/// Largest block handed to the dense eigensolver.
pub const DEFAULT_ED_CAP: usize = 1 << 13;
/// Gaps below this multiple of the spectral span count as degenerate.
pub const DEGENERACY_REL_TOL: f64 = 1e-12;
/// Consecutive histogram L1 distances below this form a plateau.
pub const PLATEAU_L1: f64 = 0.05;
/// Relative size of a pair mass indistinguishable from rounding.
pub const MASS_NOISE_REL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SpectralBlock {
    pub basis: Basis,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Columns are the eigenvectors in the block's Ising basis.
    pub eigenvectors: Mat<f64>,
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    pub blocks: Vec<SpectralBlock>,
    pub degeneracy_tol: f64,
}

fn dense_eigen(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    Ok(((0..s.nrows()).map(|i| s[i]).collect(), evd.U().to_owned()))
}

impl SpectralData {
    fn from_blocks(blocks: Vec<SpectralBlock>) -> Self {
        let mut sd = Self {
            blocks,
            degeneracy_tol: 0.0,
        };
        sd.degeneracy_tol = DEGENERACY_REL_TOL * sd.span().max(f64::MIN_POSITIVE);
        sd
    }

    /// All eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.blocks.iter().flat_map(|b| b.eigenvalues.iter().copied()).collect();
        e.sort_by(f64::total_cmp);
        e
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.eigenvalues.len()).sum()
    }

    pub fn span(&self) -> f64 {
        let e = self.eigenvalues();
        match (e.first(), e.last()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        }
    }

    /// Spectral data of `s H`, sharing the eigenvectors.
    pub fn scaled(&self, s: f64) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|b| SpectralBlock {
                basis: b.basis.clone(),
                eigenvalues: b.eigenvalues.iter().map(|e| e * s).collect(),
                eigenvectors: b.eigenvectors.clone(),
            })
            .collect();
        Self::from_blocks(blocks)
    }

    /// Largest `|H v - E v|` over all eigenpairs, given `H` blockwise.
    pub fn max_residual(&self, h: &BlockMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for (b, m) in self.blocks.iter().zip(&h.blocks) {
            let hv = m * &b.eigenvectors;
            for j in 0..b.eigenvalues.len() {
                let mut r2 = 0.0;
                for i in 0..hv.nrows() {
                    r2 += (hv[(i, j)] - b.eigenvalues[j] * b.eigenvectors[(i, j)]).powi(2);
                }
                worst = worst.max(r2.sqrt());
            }
        }
        worst
    }

    /// Largest entry of `U^T U - 1` over blocks.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for b in &self.blocks {
            let g = b.eigenvectors.transpose() * &b.eigenvectors;
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((g[(i, j)] - target).abs());
                }
            }
        }
        worst
    }
}

/// Dense diagonalization of one operator.
pub fn diagonalize(op: &SparseOperator, cap: usize) -> Result<SpectralData> {
    let n = op.dim();
    if n > cap {
        return Err(Error::OverCap { dim: n, cap });
    }
    let (eigenvalues, eigenvectors) = dense_eigen(&op.to_dense())?;
    let basis = Basis::Full {
        n_spins: n.trailing_zeros() as usize,
    };
    Ok(SpectralData::from_blocks(vec![SpectralBlock {
        basis,
        eigenvalues,
        eigenvectors,
    }]))
}

/// Magnetization sectors of `n_spins`, the block layout used throughout.
pub fn sector_bases(n_spins: usize) -> Vec<Basis> {
    (0..=n_spins as u32)
        .map(|k| Basis::Sector(MagnetizationSector::new(n_spins, k)))
        .collect()
}

/// Sector-wise diagonalization of a magnetization-conserving model.
pub fn diagonalize_model(model: &SpinModel, cap: usize) -> Result<SpectralData> {
    if !model.conserves_magnetization() {
        return Err(Error::InvalidParameter("model does not conserve magnetization".into()));
    }
    let bases = sector_bases(model.n_spins());
    if let Some(b) = bases.iter().find(|b| b.dim() > cap) {
        return Err(Error::OverCap { dim: b.dim(), cap });
    }
    let blocks = bases
        .into_par_iter()
        .map(|basis| {
            let (eigenvalues, eigenvectors) = dense_eigen(&model.to_operator(&basis).to_dense())?;
            Ok(SpectralBlock {
                basis,
                eigenvalues,
                eigenvectors,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralData::from_blocks(blocks))
}

/// A block-diagonal real matrix on the blocks of a [`SpectralData`].
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    pub blocks: Vec<Mat<f64>>,
}

impl BlockMatrix {
    /// Materializes `model` on each basis.
    pub fn from_model(model: &SpinModel, bases: &[Basis]) -> Self {
        Self {
            blocks: bases.iter().map(|b| model.to_operator(b).to_dense()).collect(),
        }
    }

    pub fn layout(spec: &SpectralData) -> Vec<Basis> {
        spec.blocks.iter().map(|b| b.basis.clone()).collect()
    }

    pub fn trace(&self) -> f64 {
        self.blocks
            .iter()
            .map(|m| (0..m.nrows()).map(|i| m[(i, i)]).sum::<f64>())
            .sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|m| m * faer::Scale(s)).collect(),
        }
    }

    pub fn add(&self, other: &Self, s: f64) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a + b * faer::Scale(s))
                .collect(),
        }
    }

    /// `U^T M U` per block.
    pub fn in_eigenbasis(&self, spec: &SpectralData) -> Self {
        Self {
            blocks: self
                .blocks
                .par_iter()
                .zip(&spec.blocks)
                .map(|(m, b)| b.eigenvectors.transpose() * m * &b.eigenvectors)
                .collect(),
        }
    }

    /// Largest absolute eigenvalue.
    pub fn operator_norm(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for m in &self.blocks {
            if m.nrows() == 0 {
                continue;
            }
            let (e, _) = dense_eigen(m)?;
            worst = worst.max(e.iter().fold(0.0f64, |x, v| x.max(v.abs())));
        }
        Ok(worst)
    }
}

/// `Tr(A B)` for block-diagonal matrices.
fn trace_product(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

fn commutator(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    a * b - b * a
}

/// The product state `pi_up f(H_bath)^2 / Z` of the typicality construction,
/// on the sector blocks of `model`.
pub fn product_state_rho(model: &WheelModel, spec: &InitialStateSpec, bases: &[Basis]) -> Result<BlockMatrix> {
    spec.validate()?;
    let blocks: Vec<Mat<f64>> = bases
        .par_iter()
        .map(|basis| {
            let d = basis.dim();
            let (e, u) = dense_eigen(&model.bath.to_operator(basis).to_dense())?;
            let mut uf = u.clone();
            for (k, &ek) in e.iter().enumerate() {
                let w = spec.filter_value(ek).powi(2);
                for i in 0..d {
                    uf[(i, k)] *= w;
                }
            }
            let mut rho = uf * u.transpose();
            for i in 0..d {
                if basis.state(i) & 1 == 0 {
                    for j in 0..d {
                        rho[(i, j)] = 0.0;
                        rho[(j, i)] = 0.0;
                    }
                }
            }
            Ok(rho)
        })
        .collect::<Result<_>>()?;
    let rho = BlockMatrix { blocks };
    let z = rho.trace();
    if !(z > 0.0) {
        return Err(Error::EmptyWindow { norm: z });
    }
    Ok(rho.scaled(1.0 / z))
}

/// `(S^z_sys + 1/2) (x) 1_bath / d_bath`.
pub fn infinite_temperature_rho(n_spins: usize, bases: &[Basis]) -> BlockMatrix {
    let d_bath = 2f64.powi(n_spins as i32 - 1);
    BlockMatrix {
        blocks: bases
            .iter()
            .map(|b| {
                let d = b.dim();
                let mut m = Mat::<f64>::zeros(d, d);
                for i in 0..d {
                    if b.state(i) & 1 == 1 {
                        m[(i, i)] = 1.0 / d_bath;
                    }
                }
                m
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapDistribution {
    /// `G = E_j - E_k`.
    pub gaps: Vec<f64>,
    /// Normalized `p_jk`.
    pub weights: Vec<f64>,
    /// `sum |rho_jk A_kj|` over non-degenerate pairs, before normalization.
    pub raw_mass: f64,
    /// The same sum over degenerate pairs, the diagonal included.
    pub excluded_mass: f64,
}

impl GapDistribution {
    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.gaps.iter().zip(&self.weights).map(|(g, p)| g * p).sum()
    }

    /// Standard deviation of the point masses.
    pub fn sigma(&self) -> f64 {
        let m = self.mean();
        let v: f64 = self.gaps.iter().zip(&self.weights).map(|(g, p)| p * (g - m).powi(2)).sum();
        v.max(0.0).sqrt()
    }

    /// A distribution from explicit masses, normalized.
    pub fn from_masses(gaps: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if gaps.len() != masses.len() || masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::InvalidParameter("masses must be non-negative and match the gaps".into()));
        }
        let raw: f64 = masses.iter().sum();
        let weights = if raw > 0.0 { masses.iter().map(|m| m / raw).collect() } else { masses };
        Ok(Self {
            gaps,
            weights,
            raw_mass: raw,
            excluded_mass: 0.0,
        })
    }
}

/// Largest absolute entry over all blocks.
fn max_abs(m: &BlockMatrix) -> f64 {
    m.blocks
        .iter()
        .flat_map(|b| (0..b.nrows()).flat_map(move |i| (0..b.ncols()).map(move |j| b[(i, j)].abs())))
        .fold(0.0, f64::max)
}

/// Products `|rho_jk A_kj|` at or below this are rounding noise of the
/// change of basis and are counted as excluded.
pub fn mass_noise_floor(rho: &BlockMatrix, a: &BlockMatrix) -> f64 {
    MASS_NOISE_REL * max_abs(rho) * max_abs(a)
}

/// `p_jk ~ |rho_jk A_kj|` over pairs with `|E_j - E_k| > degeneracy_tol`.
/// `rho` and `a` must already be in the eigenbasis.
pub fn build_gap_distribution(rho: &BlockMatrix, a: &BlockMatrix, spec: &SpectralData) -> GapDistribution {
    let floor = mass_noise_floor(rho, a);
    let parts: Vec<(Vec<f64>, Vec<f64>, f64)> = spec
        .blocks
        .par_iter()
        .zip(rho.blocks.par_iter().zip(&a.blocks))
        .map(|(b, (r, am))| {
            let mut gaps = Vec::new();
            let mut masses = Vec::new();
            let mut excluded = 0.0;
            let e = &b.eigenvalues;
            for j in 0..e.len() {
                for k in 0..e.len() {
                    let m = (r[(j, k)] * am[(k, j)]).abs();
                    if m == 0.0 {
                        continue;
                    }
                    let g = e[j] - e[k];
                    if m <= floor || g.abs() <= spec.degeneracy_tol {
                        excluded += m;
                    } else {
                        gaps.push(g);
                        masses.push(m);
                    }
                }
            }
            (gaps, masses, excluded)
        })
        .collect();
    let mut gaps = Vec::new();
    let mut masses = Vec::new();
    let mut excluded_mass = 0.0;
    for (g, m, x) in parts {
        gaps.extend(g);
        masses.extend(m);
        excluded_mass += x;
    }
    let raw_mass: f64 = masses.iter().sum();
    if raw_mass == 0.0 {
        log::warn!("gap distribution is empty: the observable is conserved");
    }
    let weights = masses.iter().map(|m| m / raw_mass).collect();
    GapDistribution {
        gaps,
        weights,
        raw_mass,
        excluded_mass,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapHistogram {
    pub epsilon: f64,
    /// Bin `i` covers `[(k0 + i - 1/2) eps, (k0 + i + 1/2) eps)`.
    pub first_bin: i64,
    pub centers: Vec<f64>,
    pub density: Vec<f64>,
    pub sigma_g: f64,
    pub w_max: f64,
    /// Epsilon is below the smallest spacing between distinct gaps.
    pub sparse: bool,
}

impl GapHistogram {
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.epsilon
    }

    fn edges(&self) -> (f64, f64) {
        let lo = (self.first_bin as f64 - 0.5) * self.epsilon;
        (lo, lo + self.density.len() as f64 * self.epsilon)
    }

    /// Density at `g`, zero outside the covered range.
    pub fn density_at(&self, g: f64) -> f64 {
        let k = (g / self.epsilon).round() as i64 - self.first_bin;
        if k < 0 || k as usize >= self.density.len() {
            0.0
        } else {
            self.density[k as usize]
        }
    }
}

/// Histogram density of the gap distribution on bins centered at `k eps`.
pub fn histogram(dist: &GapDistribution, epsilon: f64) -> Result<GapHistogram> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("bin width {epsilon} must be > 0")));
    }
    if dist.is_empty() {
        return Err(Error::InsufficientData("empty gap distribution".into()));
    }
    let bin = |g: f64| (g / epsilon).round() as i64;
    let k_lo = dist.gaps.iter().map(|&g| bin(g)).min().expect("non-empty");
    let k_hi = dist.gaps.iter().map(|&g| bin(g)).max().expect("non-empty");
    let n_bins = (k_hi - k_lo + 1) as usize;
    if n_bins > 50_000_000 {
        return Err(Error::InvalidParameter(format!("bin width {epsilon} needs {n_bins} bins")));
    }
    let mut mass = vec![0.0; n_bins];
    for (&g, &p) in dist.gaps.iter().zip(&dist.weights) {
        mass[(bin(g) - k_lo) as usize] += p;
    }
    let total: f64 = mass.iter().sum();
    let density: Vec<f64> = mass.iter().map(|m| m / (total * epsilon)).collect();
    let w_max = density.iter().copied().fold(0.0, f64::max);
    let mut sorted = dist.gaps.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup_by(|a, b| (*a - *b).abs() <= 0.0);
    let min_spacing = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let sparse = epsilon < min_spacing;
    if sparse {
        log::warn!("bin width {epsilon} below the smallest gap spacing {min_spacing}");
    }
    Ok(GapHistogram {
        epsilon,
        first_bin: k_lo,
        centers: (0..n_bins).map(|i| (k_lo + i as i64) as f64 * epsilon).collect(),
        density,
        sigma_g: dist.sigma(),
        w_max,
        sparse,
    })
}

/// `int |w1(G) - w2(G)| dG` for two piecewise-constant densities.
pub fn l1_distance(h1: &GapHistogram, h2: &GapHistogram) -> f64 {
    let (a1, b1) = h1.edges();
    let (a2, b2) = h2.edges();
    let mut cuts: Vec<f64> = Vec::with_capacity(h1.density.len() + h2.density.len() + 2);
    for i in 0..=h1.density.len() {
        cuts.push(a1 + i as f64 * h1.epsilon);
    }
    for i in 0..=h2.density.len() {
        cuts.push(a2 + i as f64 * h2.epsilon);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let (lo, hi) = (a1.min(a2), b1.max(b2));
    cuts.retain(|&c| c >= lo && c <= hi);
    cuts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            (h1.density_at(mid) - h2.density_at(mid)).abs() * (w[1] - w[0])
        })
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub a: f64,
    pub w_max: f64,
    /// L1 distance to the next finer-or-coarser grid point; `None` on the last row.
    pub l1_to_next: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonScan {
    pub rows: Vec<EpsilonRow>,
    /// Index range `[start, end]` of the longest run of rows joined by
    /// distances below the plateau threshold, at least two links long.
    pub plateau: Option<(usize, usize)>,
    /// Middle of the plateau.
    pub chosen_epsilon: Option<f64>,
}

/// Histograms over a geometric grid of bin widths with pairwise L1 distances
/// between neighbors.
pub fn epsilon_independence_scan(dist: &GapDistribution, eps_grid: &[f64]) -> Result<EpsilonScan> {
    if eps_grid.len() < 5 {
        return Err(Error::InvalidParameter(format!("need 5 bin widths, got {}", eps_grid.len())));
    }
    let mut eps = eps_grid.to_vec();
    eps.sort_by(f64::total_cmp);
    let hists: Vec<GapHistogram> = eps.iter().map(|&e| histogram(dist, e)).collect::<Result<_>>()?;
    let links: Vec<f64> = hists.windows(2).map(|w| l1_distance(&w[0], &w[1])).collect();
    let rows = hists
        .iter()
        .enumerate()
        .map(|(i, h)| EpsilonRow {
            epsilon: h.epsilon,
            a: compute_a(h),
            w_max: h.w_max,
            l1_to_next: links.get(i).copied(),
        })
        .collect();
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < links.len() {
        if links[i] < PLATEAU_L1 {
            let mut j = i;
            while j + 1 < links.len() && links[j + 1] < PLATEAU_L1 {
                j += 1;
            }
            let run = j - i + 1;
            if run >= 2 && best.is_none_or(|(s, e)| run > e - s) {
                best = Some((i, j + 1));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    if best.is_none() {
        log::warn!("no bin-width plateau; w(G) is not resolved on this grid");
    }
    Ok(EpsilonScan {
        rows,
        plateau: best,
        chosen_epsilon: best.map(|(s, e)| eps[(s + e) / 2]),
    })
}

/// `a = w_max sigma_G`.
pub fn compute_a(hist: &GapHistogram) -> f64 {
    hist.w_max * hist.sigma_g
}

/// `Q = sum_{E_i != E_j} |rho_ij A_ji| / ||A||`.
pub fn compute_q(dist: &GapDistribution, a_norm: f64) -> f64 {
    dist.raw_mass / a_norm
}

/// `Tr([[rho, H], H] A)`, signed; equal to `-d^2/dt^2 <A>` at `t = 0`.
pub fn curvature_trace(rho: &BlockMatrix, h: &BlockMatrix, a: &BlockMatrix) -> f64 {
    rho.blocks
        .par_iter()
        .zip(h.blocks.par_iter().zip(&a.blocks))
        .map(|(r, (hm, am))| trace_product(&commutator(r, hm), &commutator(hm, am)))
        .sum()
}

/// `|Tr([[rho, H], H] A)|`.
pub fn initial_curvature(rho: &BlockMatrix, h: &BlockMatrix, a: &BlockMatrix) -> f64 {
    curvature_trace(rho, h, a).abs()
}

/// `c1 = Tr([H_int, A][rho, H_0])`, `c2 = Tr([H_int, A][rho, H_int])`, so that
/// `Tr([[rho, H], H] A) = lambda c1 + lambda^2 c2` when `[H_0, A] = 0`.
pub fn curvature_coefficients(rho: &BlockMatrix, h0: &BlockMatrix, h_int: &BlockMatrix, a: &BlockMatrix) -> (f64, f64) {
    let per: Vec<(f64, f64)> = rho
        .blocks
        .par_iter()
        .zip(h0.blocks.par_iter().zip(h_int.blocks.par_iter().zip(&a.blocks)))
        .map(|(r, (h0m, (vm, am)))| {
            let va = commutator(vm, am);
            (trace_product(&va, &commutator(r, h0m)), trace_product(&va, &commutator(r, vm)))
        })
        .collect();
    per.iter().fold((0.0, 0.0), |(x, y), (a, b)| (x + a, y + b))
}

/// `<psi|[H,[H,A]]|psi>` by three matrix-vector products.
pub fn pure_state_curvature(h: &SparseOperator, a: &SparseOperator, psi: &[C64]) -> Result<f64> {
    let hpsi = h.apply(psi)?;
    let apsi = a.apply(psi)?;
    let hapsi = h.apply(&apsi)?;
    let ahpsi = a.apply(&hpsi)?;
    let t1 = crate::operator::dot(&hpsi, &hapsi).re;
    let t2 = crate::operator::dot(&hpsi, &ahpsi).re;
    Ok(2.0 * t1 - 2.0 * t2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpbTime {
    /// `pi a ||A||^(1/2) Q^(5/2)`.
    pub numerator: f64,
    /// `None` when the curvature vanishes.
    pub t_eq: Option<f64>,
}

pub fn gpb_time(a: f64, q: f64, a_norm: f64, curvature: f64) -> GpbTime {
    let numerator = std::f64::consts::PI * a * a_norm.sqrt() * q.powf(2.5);
    let t_eq = (curvature > 0.0).then(|| numerator / curvature.sqrt());
    GpbTime { numerator, t_eq }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumeratorBound {
    pub value: f64,
    /// Inherited from a censored relaxation time; `value` is then itself a lower bound.
    pub censored: bool,
}

/// `tau_rel sqrt(curvature)`.
pub fn numerator_lower_bound(tau_rel: f64, censored: bool, curvature: f64) -> NumeratorBound {
    NumeratorBound {
        value: tau_rel * curvature.max(0.0).sqrt(),
        censored,
    }
}

/// `<A(t)>` for `rho = (A + 1/2)/d_bath` from the spectral data:
/// `(1/d_bath) sum_jk |A_jk|^2 cos((E_j - E_k) t)`, `A` in the eigenbasis.
pub fn autocorrelation_series(spec: &SpectralData, a: &BlockMatrix, d_bath: f64, times: &[f64]) -> TimeSeries {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for (b, am) in spec.blocks.iter().zip(&a.blocks) {
        let e = &b.eigenvalues;
        for j in 0..e.len() {
            for k in 0..e.len() {
                let w = am[(j, k)].powi(2);
                if w != 0.0 {
                    pairs.push((e[j] - e[k], w / d_bath));
                }
            }
        }
    }
    let values = times
        .par_iter()
        .map(|&t| pairs.iter().map(|&(g, w)| w * (g * t).cos()).sum())
        .collect();
    TimeSeries::new(times.to_vec(), values)
}

fn hann(t: f64, t_max: f64) -> f64 {
    (std::f64::consts::FRAC_PI_2 * t / t_max).cos().powi(2)
}

/// Checks a uniform grid starting at zero and returns its step.
fn uniform_step(series: &TimeSeries) -> Result<f64> {
    if series.len() < 3 || series.times[0] != 0.0 {
        return Err(Error::SeriesTooShort("need a uniform grid from t = 0".into()));
    }
    let dt = series.times[1] - series.times[0];
    let bad = series
        .times
        .iter()
        .enumerate()
        .any(|(k, &t)| (t - k as f64 * dt).abs() > 1e-9 * dt.max(1.0) * k.max(1) as f64);
    if bad {
        return Err(Error::InvalidParameter("series grid is not uniform".into()));
    }
    Ok(dt)
}

/// Hann-weighted mean of the series on its symmetric extension.
pub fn windowed_mean(series: &TimeSeries) -> Result<f64> {
    uniform_step(series)?;
    let t_max = series.final_time();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, (&t, &v)) in series.times.iter().zip(&series.values).enumerate() {
        let w = hann(t, t_max) * if k == 0 { 1.0 } else { 2.0 };
        num += w * v;
        den += w;
    }
    Ok(num / den)
}

/// `F(w) = (1/2 pi) int_{-T}^{T} h(t) (s(t) - baseline) cos(w t) dt` for an
/// even signal sampled on `[0, T]`, with a Hann window `h`.
pub fn windowed_transform(series: &TimeSeries, baseline: f64, omegas: &[f64]) -> Result<Vec<f64>> {
    let dt = uniform_step(series)?;
    let t_max = series.final_time();
    let hs: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&series.values)
        .enumerate()
        .map(|(k, (&t, &v))| (t, hann(t, t_max) * (v - baseline) * if k == 0 { 1.0 } else { 2.0 }))
        .collect();
    Ok(omegas
        .par_iter()
        .map(|&w| hs.iter().map(|&(t, x)| x * (w * t).cos()).sum::<f64>() * dt / (2.0 * std::f64::consts::PI))
        .collect())
}

/// `int_lo^hi F(w) dw` in closed form for each `(lo, hi)`.
fn transform_bin_masses(series: &TimeSeries, baseline: f64, bins: &[(f64, f64)]) -> Result<Vec<f64>> {
    let dt = uniform_step(series)?;
    let t_max = series.final_time();
    let hs: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&series.values)
        .enumerate()
        .map(|(k, (&t, &v))| (t, hann(t, t_max) * (v - baseline) * if k == 0 { 1.0 } else { 2.0 }))
        .collect();
    Ok(bins
        .par_iter()
        .map(|&(lo, hi)| {
            hs.iter()
                .map(|&(t, x)| if t == 0.0 { x * (hi - lo) } else { x * ((hi * t).sin() - (lo * t).sin()) / t })
                .sum::<f64>()
                * dt
                / (2.0 * std::f64::consts::PI)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierReport {
    /// `sum_bins |m_F - m_w|` after both are normalized to unit mass.
    pub l1: f64,
    pub duration: f64,
    pub required_duration: f64,
    pub baseline: f64,
}

/// Window length needed to resolve bins of width `epsilon`: the Hann main
/// lobe, `4 pi / T` wide, must fit into a quarter bin.
pub fn required_duration(epsilon: f64) -> f64 {
    16.0 * std::f64::consts::PI / epsilon
}

/// Compares the windowed transform of an autocorrelation-type series with the
/// gap histogram, bin by bin.
pub fn fourier_check(series: &TimeSeries, hist: &GapHistogram) -> Result<FourierReport> {
    let need = required_duration(hist.epsilon);
    if series.final_time() < need {
        return Err(Error::SeriesTooShort(format!(
            "duration {} below the {need:.1} needed for bin width {}",
            series.final_time(),
            hist.epsilon
        )));
    }
    let baseline = windowed_mean(series)?;
    let bins: Vec<(f64, f64)> = hist
        .centers
        .iter()
        .map(|&c| (c - 0.5 * hist.epsilon, c + 0.5 * hist.epsilon))
        .collect();
    let m_f = transform_bin_masses(series, baseline, &bins)?;
    let total_f: f64 = m_f.iter().sum();
    if !(total_f > 0.0) {
        return Err(Error::InsufficientData("transform carries no mass on the histogram support".into()));
    }
    let l1 = m_f
        .iter()
        .zip(&hist.density)
        .map(|(mf, w)| (mf / total_f - w * hist.epsilon).abs())
        .sum();
    Ok(FourierReport {
        l1,
        duration: series.final_time(),
        required_duration: need,
        baseline,
    })
}

/// Half width at half maximum of the windowed transform around `w = 0`.
pub fn lorentzian_half_width(series: &TimeSeries, baseline: f64) -> Result<f64> {
    let f = |w: f64| windowed_transform(series, baseline, &[w]).map(|v| v[0]);
    let peak = f(0.0)?;
    if !(peak > 0.0) {
        return Err(Error::InsufficientData("no peak at zero frequency".into()));
    }
    let step = std::f64::consts::PI / series.final_time();
    let mut hi = step;
    while f(hi)? > 0.5 * peak {
        hi += step;
        if hi > 1e3 {
            return Err(Error::InsufficientData("transform never falls to half maximum".into()));
        }
    }
    let mut lo = hi - step;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.5 * peak {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `Tr(rho [H,[H,A]])` over a typicality ensemble, signed.
pub fn ensemble_curvature_trace(model: &WheelModel, ensemble: &WeightedEnsemble, lambda: f64) -> Result<f64> {
    let parts: Vec<f64> = ensemble
        .members
        .par_iter()
        .map(|m| {
            let basis = ensemble.basis_of(m);
            let ops = model.operators(&basis, lambda);
            Ok(m.weight * pure_state_curvature(&ops.h, &ops.sz_sys, &m.state)?)
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

/// `(c1, c2)` over a typicality ensemble from the curvature at `lambda = +-1`.
pub fn ensemble_curvature_coefficients(model: &WheelModel, ensemble: &WeightedEnsemble) -> Result<(f64, f64)> {
    let plus = ensemble_curvature_trace(model, ensemble, 1.0)?;
    let minus = ensemble_curvature_trace(model, ensemble, -1.0)?;
    Ok((0.5 * (plus - minus), 0.5 * (plus + minus)))
}

/// Geometric grid of `n` bin widths spanning one decade below `sigma_g / 10`.
pub fn default_eps_grid(sigma_g: f64, n: usize) -> Vec<f64> {
    let n = n.max(5);
    (0..n)
        .map(|k| sigma_g / 100.0 * 10f64.powf(k as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpbReport {
    pub n_spins: usize,
    pub lambda: f64,
    /// Above the diagonalization cap only the curvature and the bound are filled.
    pub partial: bool,
    pub a: Option<f64>,
    #[serde(rename = "Q")]
    pub q: Option<f64>,
    #[serde(rename = "A_norm")]
    pub a_norm: f64,
    pub curvature: f64,
    #[serde(rename = "T_eq")]
    pub t_eq: Option<f64>,
    pub numerator: Option<f64>,
    pub numerator_lower_bound: Option<NumeratorBound>,
    pub c1: f64,
    pub c2: f64,
    pub excluded_mass: Option<f64>,
    pub epsilon: Option<f64>,
    /// A plateau was found; otherwise `a` is reported per bin width in the scan.
    pub epsilon_plateau: bool,
    pub eps_scan: Option<EpsilonScan>,
    pub histogram: Option<GapHistogram>,
}

impl GpbReport {
    /// Fills the lower bound from a measured relaxation time.
    pub fn with_relaxation(mut self, tau_rel: f64, censored: bool) -> Self {
        self.numerator_lower_bound = Some(numerator_lower_bound(tau_rel, censored, self.curvature));
        self
    }

    /// `lambda,a,Q,curvature,T_eq,numerator,numerator_lower_bound`; empty fields for undefined values.
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.lambda,
            opt(self.a),
            opt(self.q),
            self.curvature,
            opt(self.t_eq),
            opt(self.numerator),
            opt(self.numerator_lower_bound.map(|b| b.value)),
        )
    }
}

pub const GPB_CSV_HEADER: &str = "lambda,a,Q,curvature,T_eq,numerator,numerator_lower_bound";

/// The full chain by dense diagonalization for the product initial state.
pub fn exact_report(
    model: &WheelModel,
    state: &InitialStateSpec,
    lambda: f64,
    eps_grid: Option<&[f64]>,
    cap: usize,
) -> Result<GpbReport> {
    let spec = diagonalize_model(&model.total(lambda), cap)?;
    let bases = BlockMatrix::layout(&spec);
    let rho = product_state_rho(model, state, &bases)?;
    let h0 = BlockMatrix::from_model(&model.unperturbed(), &bases);
    let v = BlockMatrix::from_model(&model.interaction, &bases);
    let a_mat = BlockMatrix::from_model(&model.observable(), &bases);
    let (c1, c2) = curvature_coefficients(&rho, &h0, &v, &a_mat);
    if c1.abs() > 1e-10 {
        log::warn!("c1 = {c1:e} for a state that commutes with H_0");
    }
    let curvature = initial_curvature(&rho, &h0.add(&v, lambda), &a_mat);
    let a_norm = a_mat.operator_norm()?;
    let dist = build_gap_distribution(&rho.in_eigenbasis(&spec), &a_mat.in_eigenbasis(&spec), &spec);
    let q = compute_q(&dist, a_norm);
    let mut report = GpbReport {
        n_spins: model.n_spins(),
        lambda,
        partial: false,
        a: None,
        q: Some(q),
        a_norm,
        curvature,
        t_eq: None,
        numerator: None,
        numerator_lower_bound: None,
        c1,
        c2,
        excluded_mass: Some(dist.excluded_mass),
        epsilon: None,
        epsilon_plateau: false,
        eps_scan: None,
        histogram: None,
    };
    if dist.is_empty() {
        return Ok(report);
    }
    let grid = match eps_grid {
        Some(g) => g.to_vec(),
        None => default_eps_grid(dist.sigma(), 6),
    };
    let scan = epsilon_independence_scan(&dist, &grid)?;
    let eps = scan.chosen_epsilon.unwrap_or(grid[grid.len() / 2]);
    let hist = histogram(&dist, eps)?;
    let a = compute_a(&hist);
    let t = gpb_time(a, q, a_norm, curvature);
    report.a = Some(a);
    report.t_eq = t.t_eq;
    report.numerator = Some(t.numerator);
    report.epsilon = Some(eps);
    report.epsilon_plateau = scan.plateau.is_some();
    report.eps_scan = Some(scan);
    report.histogram = Some(hist);
    Ok(report)
}

/// Curvature and `c1`, `c2` only, from a typicality ensemble.
pub fn partial_report(model: &WheelModel, ensemble: &WeightedEnsemble, lambda: f64) -> Result<GpbReport> {
    let (c1, c2) = ensemble_curvature_coefficients(model, ensemble)?;
    let curvature = ensemble_curvature_trace(model, ensemble, lambda)?.abs();
    // S^z of one site is diagonal with entries +-1/2.
    let a_norm = 0.5;
    Ok(GpbReport {
        n_spins: model.n_spins(),
        lambda,
        partial: true,
        a: None,
        q: None,
        a_norm,
        curvature,
        t_eq: None,
        numerator: None,
        numerator_lower_bound: None,
        c1,
        c2,
        excluded_mass: None,
        epsilon: None,
        epsilon_plateau: false,
        eps_scan: None,
        histogram: None,
    })
}

/// Exact equilibrium values of `S^z_sys` for the product initial state.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EdEquilibrium {
    /// Infinite-time average, degenerate pairs included.
    pub diagonal: f64,
    /// Eigenstate expectations in a Gaussian window of variance `delta / 2` around each
    /// magnetization sector's own mean energy, weighted by the sector's share of the state.
    pub microcanonical: f64,
    /// The same window centered on the mean energy of the whole state.
    pub microcanonical_global: f64,
}

pub fn ed_equilibrium(model: &WheelModel, state: &InitialStateSpec, lambda: f64, cap: usize) -> Result<EdEquilibrium> {
    let spec = diagonalize_model(&model.total(lambda), cap)?;
    let bases = BlockMatrix::layout(&spec);
    let rho = product_state_rho(model, state, &bases)?.in_eigenbasis(&spec);
    let a = BlockMatrix::from_model(&model.observable(), &bases).in_eigenbasis(&spec);
    let window = |e: f64, c: f64| (-(e - c).powi(2) / state.delta).exp();
    let tol = spec.degeneracy_tol;
    let mut diagonal = 0.0;
    let mut energy = 0.0;
    let mut sector_mc = 0.0;
    for ((blk, r), am) in spec.blocks.iter().zip(&rho.blocks).zip(&a.blocks) {
        let e = &blk.eigenvalues;
        let d = e.len();
        let mut w = 0.0;
        let mut ew = 0.0;
        for j in 0..d {
            w += r[(j, j)];
            ew += r[(j, j)] * e[j];
            for k in 0..d {
                if (e[j] - e[k]).abs() <= tol {
                    diagonal += r[(j, k)] * am[(k, j)];
                }
            }
        }
        energy += ew;
        if w > 0.0 {
            let c = ew / w;
            let (num, den) = (0..d).fold((0.0, 0.0), |(n, z), j| {
                let f = window(e[j], c);
                (n + f * am[(j, j)], z + f)
            });
            if den > 0.0 {
                sector_mc += w * num / den;
            }
        }
    }
    let (num, den) = spec
        .blocks
        .iter()
        .zip(&a.blocks)
        .flat_map(|(blk, am)| blk.eigenvalues.iter().enumerate().map(move |(j, &e)| (e, am[(j, j)])))
        .fold((0.0, 0.0), |(n, z), (e, aj)| {
            let f = window(e, energy);
            (n + f * aj, z + f)
        });
    if !(den > 0.0) {
        return Err(Error::EmptyWindow { norm: den });
    }
    Ok(EdEquilibrium {
        diagonal,
        microcanonical: sector_mc,
        microcanonical_global: num / den,
    })
}

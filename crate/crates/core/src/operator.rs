//! Real sparse operators in row-compressed storage.
//!
//! Every Hamiltonian and observable of the spin-wheel model has real matrix
//! elements in the Ising basis, so values are stored as `f64` and act on complex
//! amplitude vectors. A `hermitian` operator is therefore real symmetric.

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sector::MagnetizationSector;

pub type C64 = Complex64;

/// Rows per rayon task in the matvec.
const PAR_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<f64>,
    hermitian: bool,
}

/// Coordinate-list accumulator; duplicates are summed on [`CooBuilder::build`].
#[derive(Debug, Clone)]
pub struct CooBuilder {
    dim: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl CooBuilder {
    pub fn new(dim: usize) -> Self {
        assert!(dim <= u32::MAX as usize);
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, cap: usize) -> Self {
        Self {
            dim,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.entries.push((row as u32, col as u32, value));
    }

    pub fn build(self, hermitian: bool) -> Result<SparseOperator> {
        SparseOperator::from_entries(
            self.dim,
            self.entries
                .into_iter()
                .map(|(r, c, v)| (r as usize, c as usize, v)),
            hermitian,
        )
    }
}

impl SparseOperator {
    /// Assembles from (row, col, value) triplets. Duplicate positions are summed
    /// and entries that cancel to exactly zero are dropped.
    pub fn from_entries<I>(dim: usize, entries: I, hermitian: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut triplets: Vec<(u32, u32, f64)> = Vec::new();
        for (r, c, v) in entries {
            if r >= dim || c >= dim {
                return Err(Error::InvalidParameter(format!(
                    "entry ({r}, {c}) outside dimension {dim}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "entry ({r}, {c}) is not finite"
                )));
            }
            triplets.push((r as u32, c as u32, v));
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut iter = triplets.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                cols.push(c);
                values.push(v);
                row_ptr[r as usize + 1] += 1;
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let op = Self {
            dim,
            row_ptr,
            cols,
            values,
            hermitian,
        };
        if hermitian {
            let asym = op.max_asymmetry();
            if asym > 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "operator flagged hermitian has asymmetry {asym:e}"
                )));
            }
        }
        Ok(op)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: (0..=dim).collect(),
            cols: (0..dim as u32).collect(),
            values: vec![1.0; dim],
            hermitian: true,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0; dim + 1],
            cols: Vec::new(),
            values: Vec::new(),
            hermitian: true,
        }
    }

    /// Diagonal operator.
    pub fn diagonal(values: &[f64]) -> Self {
        Self::from_entries(
            values.len(),
            values.iter().enumerate().map(|(i, &v)| (i, i, v)),
            true,
        )
        .expect("diagonal entries are valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Stored entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(move |k| (r, self.cols[k] as usize, self.values[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.cols[k] as usize, self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&(c as u32)) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// Largest `|H_rc - H_cr|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        self.entries()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius norm squared, `Tr(H^T H)`.
    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Largest absolute row sum; an upper bound on the spectral radius.
    pub fn gershgorin_radius(&self) -> f64 {
        (0..self.dim)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        if s == 0.0 {
            return Self::zero(self.dim);
        }
        out
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &SparseOperator, s: f64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let entries = self
            .entries()
            .chain(other.entries().map(|(r, c, v)| (r, c, s * v)));
        Self::from_entries(self.dim, entries, self.hermitian && other.hermitian)
    }

    /// `y = H x`.
    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        self.check_dim(x.len())?;
        let mut y = vec![C64::new(0.0, 0.0); self.dim];
        self.apply_affine_into(x, &mut y, 1.0, 0.0, 0.0);
        Ok(y)
    }

    pub fn apply_real(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok((0..self.dim)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect())
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: len,
            });
        }
        Ok(())
    }

    /// Fused kernel `y <- alpha * H x + beta * x + gamma * y`.
    ///
    /// Lengths are the caller's responsibility; this is the Chebyshev hot path.
    pub fn apply_affine_into(&self, x: &[C64], y: &mut [C64], alpha: f64, beta: f64, gamma: f64) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        let row_kernel = |r: usize, yr: &mut C64| {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += x[self.cols[k] as usize] * self.values[k];
            }
            let prev = if gamma == 0.0 { C64::new(0.0, 0.0) } else { *yr * gamma };
            *yr = acc * alpha + x[r] * beta + prev;
        };
        if self.dim >= 4 * PAR_ROWS {
            y.par_chunks_mut(PAR_ROWS)
                .enumerate()
                .for_each(|(chunk, ys)| {
                    let base = chunk * PAR_ROWS;
                    for (i, yr) in ys.iter_mut().enumerate() {
                        row_kernel(base + i, yr);
                    }
                });
        } else {
            for (r, yr) in y.iter_mut().enumerate() {
                row_kernel(r, yr);
            }
        }
    }

    /// `<x|H|x>`.
    pub fn expectation(&self, x: &[C64]) -> Result<C64> {
        self.check_dim(x.len())?;
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..self.dim {
            let mut row = C64::new(0.0, 0.0);
            for (c, v) in self.row(r) {
                row += x[c] * v;
            }
            acc += x[r].conj() * row;
        }
        Ok(acc)
    }

    /// Restricts a full-space operator to `sector`. Fails on the first entry
    /// that connects the sector to its complement.
    pub fn restrict_to_sector(&self, sector: &MagnetizationSector) -> Result<Self> {
        let full_dim = 1usize << sector.n_spins();
        self.check_dim(full_dim)?;
        let mut entries = Vec::new();
        for (i, &config) in sector.states().iter().enumerate() {
            for (c, v) in self.row(config as usize) {
                match sector.index_of(c as u32) {
                    Some(j) => entries.push((i, j, v)),
                    None => {
                        return Err(Error::CrossSectorEntry {
                            row: config as usize,
                            col: c,
                            value: v,
                            n_up: sector.n_up(),
                        })
                    }
                }
            }
        }
        if !self.hermitian {
            // Entries entering the sector from outside rows.
            for (r, c, v) in self.entries() {
                if (r as u32).count_ones() != sector.n_up() && (c as u32).count_ones() == sector.n_up() {
                    return Err(Error::CrossSectorEntry {
                        row: r,
                        col: c,
                        value: v,
                        n_up: sector.n_up(),
                    });
                }
            }
        }
        Self::from_entries(sector.dim(), entries, self.hermitian)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.dim, self.dim);
        for (r, c, v) in self.entries() {
            m[(r, c)] += v;
        }
        m
    }
}

/// Inner product `<x|y>`.
pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|a| a.norm_sqr()).sum()
}

pub fn norm(x: &[C64]) -> f64 {
    norm_sqr(x).sqrt()
}

/// Scales `x` to unit norm and returns the previous norm.
pub fn normalize(x: &mut [C64]) -> f64 {
    let n = norm(x);
    if n > 0.0 {
        let inv = 1.0 / n;
        x.iter_mut().for_each(|a| *a *= inv);
    }
    n
}

//! Geometry of the spin wheel: one system spin attached to a 3 x L bath that is
//! periodic along its length.
//!
//! Site 0 is the system spin. Bath site `(i, r)` with `i in 1..=L`, `r in 1..=3`
//! sits at index `1 + 3 (i - 1) + (r - 1)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the system spin.
pub const SYSTEM_SITE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    /// Bath circumference (number of rings of three spins).
    pub l: usize,
}

impl LatticeSpec {
    pub fn new(l: usize) -> Result<Self> {
        let spec = Self { l };
        spec.validate()?;
        Ok(spec)
    }

    /// Lattice with `n` total spins; `n` must be `3L + 1`.
    pub fn from_total_spins(n: usize) -> Result<Self> {
        if n < 1 || !(n - 1).is_multiple_of(3) {
            return Err(Error::InvalidLattice(format!(
                "total spin count {n} is not of the form 3L + 1"
            )));
        }
        Self::new((n - 1) / 3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 2 {
            return Err(Error::InvalidLattice(format!(
                "circumference L = {} < 2 turns periodic bonds into self-bonds",
                self.l
            )));
        }
        // Basis states are stored as u32 bit patterns.
        if self.total_spins() > 31 {
            return Err(Error::InvalidLattice(format!(
                "{} spins exceed the 31-spin basis limit",
                self.total_spins()
            )));
        }
        Ok(())
    }

    /// Total spin count `N = 3L + 1`.
    pub fn total_spins(&self) -> usize {
        3 * self.l + 1
    }

    pub fn bath_spins(&self) -> usize {
        3 * self.l
    }

    /// Site index of bath spin `(i, r)`, both 1-based.
    pub fn bath_site(&self, i: usize, r: usize) -> usize {
        debug_assert!((1..=self.l).contains(&i) && (1..=3).contains(&r));
        1 + 3 * (i - 1) + (r - 1)
    }

    /// Bath bonds in a fixed order: the three longitudinal rings (periodic),
    /// then the rungs (i,1)-(i,2), then the rungs (i,2)-(i,3).
    ///
    /// For `L = 2` the ring bonds `(1,r)-(2,r)` and `(2,r)-(1,r)` both appear.
    pub fn bath_bonds(&self) -> Vec<(usize, usize)> {
        let l = self.l;
        let mut bonds = Vec::with_capacity(5 * l);
        for r in 1..=3 {
            for i in 1..=l {
                let next = if i == l { 1 } else { i + 1 };
                bonds.push((self.bath_site(i, r), self.bath_site(next, r)));
            }
        }
        for i in 1..=l {
            bonds.push((self.bath_site(i, 1), self.bath_site(i, 2)));
        }
        for i in 1..=l {
            bonds.push((self.bath_site(i, 2), self.bath_site(i, 3)));
        }
        bonds
    }

    /// System-bath bonds: the system spin to each spin of column `i = 1`.
    pub fn interaction_bonds(&self) -> Vec<(usize, usize)> {
        (1..=3)
            .map(|r| (SYSTEM_SITE, self.bath_site(1, r)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CouplingMode {
    #[default]
    Uniform,
    Random,
}

impl std::fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CouplingMode::Uniform => f.write_str("uniform"),
            CouplingMode::Random => f.write_str("random"),
        }
    }
}

/// Bath exchange constants and the field on the system spin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouplingSpec {
    pub mode: CouplingMode,
    /// Exchange constant in uniform mode.
    pub j: f64,
    /// Mean of each bond coupling in random mode.
    pub random_mean: f64,
    /// Standard deviation of each bond coupling in random mode.
    pub random_std: f64,
    /// Field on the system spin.
    pub b: f64,
    pub seed: u64,
}

impl Default for CouplingSpec {
    fn default() -> Self {
        Self {
            mode: CouplingMode::Uniform,
            j: 1.0,
            random_mean: 1.0,
            random_std: 0.2,
            b: 0.5,
            seed: 0,
        }
    }
}

impl CouplingSpec {
    pub fn random(seed: u64) -> Self {
        Self {
            mode: CouplingMode::Random,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            CouplingMode::Uniform if !(self.j > 0.0) => Err(Error::InvalidParameter(format!(
                "uniform coupling J = {} must be positive",
                self.j
            ))),
            CouplingMode::Random if !(self.random_std > 0.0) => Err(Error::InvalidParameter(
                format!("random coupling std {} must be positive", self.random_std),
            )),
            _ if !self.b.is_finite() => Err(Error::InvalidParameter("field B not finite".into())),
            _ => Ok(()),
        }
    }

    /// One coupling per bath bond, in the order of [`LatticeSpec::bath_bonds`].
    pub fn bond_couplings(&self, n_bonds: usize) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(match self.mode {
            CouplingMode::Uniform => vec![self.j; n_bonds],
            CouplingMode::Random => {
                let normal = Normal::new(self.random_mean, self.random_std)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..n_bonds).map(|_| normal.sample(&mut rng)).collect()
            }
        })
    }
}

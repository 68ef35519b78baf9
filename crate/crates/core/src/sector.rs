//! Ising bases for the full Hilbert space and for fixed total magnetization.
//!
//! A configuration is a `u32` bit pattern; bit `s` set means site `s` points up.
//! Within a sector, states are ordered by their integer value.

use serde::{Deserialize, Serialize};

use crate::lattice::SYSTEM_SITE;

/// Total-magnetization sector with `n_up` up spins among `n_spins`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MagnetizationSector {
    n_spins: usize,
    n_up: u32,
    states: Vec<u32>,
}

impl MagnetizationSector {
    pub fn new(n_spins: usize, n_up: u32) -> Self {
        assert!(n_spins <= 31, "at most 31 spins are supported");
        assert!(n_up as usize <= n_spins);
        let states = sector_states(n_spins, n_up);
        Self {
            n_spins,
            n_up,
            states,
        }
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn n_up(&self) -> u32 {
        self.n_up
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    /// Total magnetization `n_up - N/2` of every state in the sector.
    pub fn magnetization(&self) -> f64 {
        self.n_up as f64 - 0.5 * self.n_spins as f64
    }

    /// Sector index to Ising configuration.
    pub fn state(&self, index: usize) -> u32 {
        self.states[index]
    }

    pub fn states(&self) -> &[u32] {
        &self.states
    }

    /// Ising configuration to sector index.
    pub fn index_of(&self, config: u32) -> Option<usize> {
        if config.count_ones() != self.n_up {
            return None;
        }
        self.states.binary_search(&config).ok()
    }

    /// Number of states in this sector whose system spin points up.
    pub fn system_up_count(&self) -> usize {
        self.states
            .iter()
            .filter(|&&s| s >> SYSTEM_SITE & 1 == 1)
            .count()
    }
}

/// All configurations of `n_spins` spins with exactly `n_up` bits set, ascending.
fn sector_states(n_spins: usize, n_up: u32) -> Vec<u32> {
    let dim = binomial(n_spins as u64, n_up as u64) as usize;
    let mut states = Vec::with_capacity(dim);
    if n_up == 0 {
        states.push(0);
        return states;
    }
    let limit: u64 = 1u64 << n_spins;
    let mut v: u64 = (1u64 << n_up) - 1;
    while v < limit {
        states.push(v as u32);
        // Gosper's hack: next integer with the same popcount.
        let c = v & v.wrapping_neg();
        let r = v + c;
        v = (((r ^ v) >> 2) / c) | r;
    }
    debug_assert_eq!(states.len(), dim);
    states
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// All `N + 1` magnetization sectors, ordered by `n_up`.
pub fn enumerate_sectors(n_spins: usize) -> Vec<MagnetizationSector> {
    (0..=n_spins as u32)
        .map(|n_up| MagnetizationSector::new(n_spins, n_up))
        .collect()
}

/// A basis on which operators are materialized: the full `2^N` space or one sector.
#[derive(Debug, Clone)]
pub enum Basis {
    Full { n_spins: usize },
    Sector(MagnetizationSector),
}

impl Basis {
    pub fn full(n_spins: usize) -> Self {
        assert!(n_spins <= 31);
        Basis::Full { n_spins }
    }

    pub fn n_spins(&self) -> usize {
        match self {
            Basis::Full { n_spins } => *n_spins,
            Basis::Sector(s) => s.n_spins(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Basis::Full { n_spins } => 1usize << n_spins,
            Basis::Sector(s) => s.dim(),
        }
    }

    pub fn state(&self, index: usize) -> u32 {
        match self {
            Basis::Full { .. } => index as u32,
            Basis::Sector(s) => s.state(index),
        }
    }

    pub fn index_of(&self, config: u32) -> Option<usize> {
        match self {
            Basis::Full { n_spins } => ((config as u64) < (1u64 << n_spins)).then_some(config as usize),
            Basis::Sector(s) => s.index_of(config),
        }
    }

    pub fn sector_id(&self) -> Option<u32> {
        match self {
            Basis::Full { .. } => None,
            Basis::Sector(s) => Some(s.n_up()),
        }
    }
}

/// Serializable identity of a basis, used in manifests and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectorId {
    pub n_spins: usize,
    pub n_up: u32,
}

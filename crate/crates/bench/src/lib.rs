//! Fixtures shared by the benchmarks.

use spinbath_core::lattice::{CouplingSpec, LatticeSpec};
use spinbath_core::model::WheelModel;
use spinbath_core::operator::{SparseOperator, C64};
use spinbath_core::sector::{Basis, MagnetizationSector};
use spinbath_core::typicality::draw_haar_vector;

pub struct SectorSetup {
    pub h: SparseOperator,
    pub h_bath: SparseOperator,
    pub psi: Vec<C64>,
}

/// Operators on the half-filled sector of the `L` wheel and a random state.
pub fn sector_setup(l: usize, lambda: f64) -> SectorSetup {
    let model = WheelModel::new(LatticeSpec::new(l).expect("valid L"), CouplingSpec::default()).expect("model");
    let n = model.n_spins();
    let basis = Basis::Sector(MagnetizationSector::new(n, (n / 2) as u32));
    let ops = model.operators(&basis, lambda);
    SectorSetup {
        psi: draw_haar_vector(basis.dim(), 1),
        h: ops.h,
        h_bath: ops.h_bath,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setup_is_normalized() {
        let s = sector_setup(2, 0.1);
        assert_eq!(s.psi.len(), 35);
        let n: f64 = s.psi.iter().map(|z| z.norm_sqr()).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(s.h.dim(), 35);
    }
}

//! Hamiltonians of the spin wheel as symbolic term lists that can be
//! materialized on the full space or directly inside one magnetization sector.

use crate::error::{Error, Result};
use crate::lattice::{CouplingSpec, LatticeSpec, SYSTEM_SITE};
use crate::operator::{CooBuilder, SparseOperator};
use crate::sector::{Basis, MagnetizationSector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Term {
    /// `J (S^x_a S^x_b + S^y_a S^y_b + S^z_a S^z_b)`.
    Heisenberg { a: usize, b: usize, j: f64 },
    /// `h S^z_site`.
    Field { site: usize, h: f64 },
    /// `h S^x_site`; breaks magnetization conservation.
    TransverseField { site: usize, h: f64 },
}

/// A sum of spin terms on `n_spins` sites.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinModel {
    n_spins: usize,
    terms: Vec<Term>,
}

impl SpinModel {
    pub fn new(n_spins: usize) -> Self {
        Self {
            n_spins,
            terms: Vec::new(),
        }
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn push(&mut self, term: Term) -> &mut Self {
        let max_site = match term {
            Term::Heisenberg { a, b, .. } => a.max(b),
            Term::Field { site, .. } | Term::TransverseField { site, .. } => site,
        };
        assert!(max_site < self.n_spins, "site {max_site} out of range");
        self.terms.push(term);
        self
    }

    /// Whether every term conserves total `S^z`.
    pub fn conserves_magnetization(&self) -> bool {
        !self
            .terms
            .iter()
            .any(|t| matches!(t, Term::TransverseField { .. }))
    }

    /// Concatenates term lists, scaling the other model's terms by `s`.
    pub fn plus(&self, other: &SpinModel, s: f64) -> SpinModel {
        assert_eq!(self.n_spins, other.n_spins);
        let mut out = self.clone();
        for &t in &other.terms {
            out.terms.push(match t {
                Term::Heisenberg { a, b, j } => Term::Heisenberg { a, b, j: s * j },
                Term::Field { site, h } => Term::Field { site, h: s * h },
                Term::TransverseField { site, h } => Term::TransverseField { site, h: s * h },
            });
        }
        out
    }

    /// Matrix of the model in `basis`.
    ///
    /// Panics if the basis belongs to a different spin count, or if a sector
    /// basis is requested for a model that does not conserve magnetization.
    pub fn to_operator(&self, basis: &Basis) -> SparseOperator {
        assert_eq!(basis.n_spins(), self.n_spins, "basis spin count mismatch");
        assert!(
            basis.sector_id().is_none() || self.conserves_magnetization(),
            "non-conserving model cannot live in a sector"
        );
        let dim = basis.dim();
        let mut coo = CooBuilder::with_capacity(dim, dim * (self.terms.len() / 2 + 1));
        for idx in 0..dim {
            let s = basis.state(idx);
            let mut diag = 0.0;
            for term in &self.terms {
                match *term {
                    Term::Heisenberg { a, b, j } => {
                        let up_a = s >> a & 1;
                        let up_b = s >> b & 1;
                        if up_a == up_b {
                            diag += 0.25 * j;
                        } else {
                            diag -= 0.25 * j;
                            let flipped = s ^ (1 << a) ^ (1 << b);
                            let col = basis
                                .index_of(flipped)
                                .expect("flip-flop preserves magnetization");
                            coo.push(idx, col, 0.5 * j);
                        }
                    }
                    Term::Field { site, h } => {
                        diag += if s >> site & 1 == 1 { 0.5 * h } else { -0.5 * h };
                    }
                    Term::TransverseField { site, h } => {
                        let col = basis
                            .index_of(s ^ (1 << site))
                            .expect("full basis contains every flip");
                        coo.push(idx, col, 0.5 * h);
                    }
                }
            }
            if diag != 0.0 {
                coo.push(idx, idx, diag);
            }
        }
        coo.build(true).expect("model terms assemble to a symmetric operator")
    }

    pub fn on_full(&self) -> SparseOperator {
        self.to_operator(&Basis::full(self.n_spins))
    }

    pub fn on_sector(&self, sector: &MagnetizationSector) -> SparseOperator {
        self.to_operator(&Basis::Sector(sector.clone()))
    }
}

/// `S^z` of a single site.
pub fn sz_site(n_spins: usize, site: usize) -> SpinModel {
    let mut m = SpinModel::new(n_spins);
    m.push(Term::Field { site, h: 1.0 });
    m
}

/// Total `S^z`.
pub fn sz_total(n_spins: usize) -> SpinModel {
    let mut m = SpinModel::new(n_spins);
    for site in 0..n_spins {
        m.push(Term::Field { site, h: 1.0 });
    }
    m
}

/// The three pieces of `H = H_sys + H_bath + lambda H_int`, plus the observable.
#[derive(Debug, Clone)]
pub struct WheelModel {
    pub lattice: LatticeSpec,
    pub couplings: CouplingSpec,
    pub system: SpinModel,
    pub bath: SpinModel,
    pub interaction: SpinModel,
}

impl WheelModel {
    pub fn new(lattice: LatticeSpec, couplings: CouplingSpec) -> Result<Self> {
        Ok(Self {
            lattice,
            couplings,
            system: system_model(&lattice, &couplings)?,
            bath: bath_model(&lattice, &couplings)?,
            interaction: interaction_model(&lattice)?,
        })
    }

    pub fn n_spins(&self) -> usize {
        self.lattice.total_spins()
    }

    /// `H_0 = H_sys + H_bath`.
    pub fn unperturbed(&self) -> SpinModel {
        self.system.plus(&self.bath, 1.0)
    }

    pub fn total(&self, lambda: f64) -> SpinModel {
        self.unperturbed().plus(&self.interaction, lambda)
    }

    pub fn observable(&self) -> SpinModel {
        sz_site(self.n_spins(), SYSTEM_SITE)
    }

    /// All operators materialized in one basis.
    pub fn operators(&self, basis: &Basis, lambda: f64) -> ModelOperators {
        let h_sys = self.system.to_operator(basis);
        let h_bath = self.bath.to_operator(basis);
        let h_int = self.interaction.to_operator(basis);
        let h = assemble_total(&h_sys, &h_bath, &h_int, lambda).expect("same basis");
        ModelOperators {
            h_sys,
            h_bath,
            h_int,
            h,
            sz_sys: self.observable().to_operator(basis),
            lambda,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelOperators {
    pub h_sys: SparseOperator,
    pub h_bath: SparseOperator,
    pub h_int: SparseOperator,
    pub h: SparseOperator,
    pub sz_sys: SparseOperator,
    pub lambda: f64,
}

impl ModelOperators {
    pub fn h0(&self) -> SparseOperator {
        self.h_sys.add_scaled(&self.h_bath, 1.0).expect("same basis")
    }
}

fn bath_model(lattice: &LatticeSpec, couplings: &CouplingSpec) -> Result<SpinModel> {
    lattice.validate()?;
    let bonds = lattice.bath_bonds();
    let js = couplings.bond_couplings(bonds.len())?;
    let mut m = SpinModel::new(lattice.total_spins());
    for (&(a, b), &j) in bonds.iter().zip(&js) {
        m.push(Term::Heisenberg { a, b, j });
    }
    Ok(m)
}

fn system_model(lattice: &LatticeSpec, couplings: &CouplingSpec) -> Result<SpinModel> {
    lattice.validate()?;
    couplings.validate()?;
    let mut m = SpinModel::new(lattice.total_spins());
    if couplings.b != 0.0 {
        m.push(Term::Field {
            site: SYSTEM_SITE,
            h: couplings.b,
        });
    }
    Ok(m)
}

fn interaction_model(lattice: &LatticeSpec) -> Result<SpinModel> {
    lattice.validate()?;
    let mut m = SpinModel::new(lattice.total_spins());
    for (a, b) in lattice.interaction_bonds() {
        m.push(Term::Heisenberg { a, b, j: 1.0 });
    }
    Ok(m)
}

/// Where a bath operator acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BathSpace {
    /// The `2^(N-1)` bath space alone.
    BathOnly,
    /// The full `2^N` space, identity on the system spin.
    Full,
}

/// Isotropic Heisenberg bath on the 3 x L wheel.
pub fn build_bath_hamiltonian(
    lattice: &LatticeSpec,
    couplings: &CouplingSpec,
    space: BathSpace,
) -> Result<SparseOperator> {
    let model = bath_model(lattice, couplings)?;
    Ok(match space {
        BathSpace::Full => model.on_full(),
        BathSpace::BathOnly => shift_to_bath_space(&model).on_full(),
    })
}

/// Bath model with site indices shifted down by one (system spin removed).
pub fn shift_to_bath_space(model: &SpinModel) -> SpinModel {
    let mut m = SpinModel::new(model.n_spins() - 1);
    for &t in model.terms() {
        m.push(match t {
            Term::Heisenberg { a, b, j } => {
                assert!(a != SYSTEM_SITE && b != SYSTEM_SITE, "term touches the system spin");
                Term::Heisenberg { a: a - 1, b: b - 1, j }
            }
            Term::Field { site, h } => Term::Field { site: site - 1, h },
            Term::TransverseField { site, h } => Term::TransverseField { site: site - 1, h },
        });
    }
    m
}

/// `B S^z` on the lone system spin (a 2 x 2 operator, basis |down>, |up>).
pub fn build_system_hamiltonian(couplings: &CouplingSpec) -> Result<SparseOperator> {
    couplings.validate()?;
    let mut m = SpinModel::new(1);
    if couplings.b != 0.0 {
        m.push(Term::Field { site: 0, h: couplings.b });
    }
    Ok(m.on_full())
}

/// System spin coupled isotropically to the three spins of column 1, full space.
pub fn build_interaction_hamiltonian(lattice: &LatticeSpec) -> Result<SparseOperator> {
    Ok(interaction_model(lattice)?.on_full())
}

/// `H = H_sys + H_bath + lambda H_int`.
pub fn assemble_total(
    h_sys: &SparseOperator,
    h_bath: &SparseOperator,
    h_int: &SparseOperator,
    lambda: f64,
) -> Result<SparseOperator> {
    for op in [h_bath, h_int] {
        if op.dim() != h_sys.dim() {
            return Err(Error::DimensionMismatch {
                expected: h_sys.dim(),
                found: op.dim(),
            });
        }
    }
    h_sys.add_scaled(h_bath, 1.0)?.add_scaled(h_int, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::C64;
    use crate::sector::enumerate_sectors;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(dim: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..dim)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    fn commutator_dev(a: &SparseOperator, b: &SparseOperator, seed: u64) -> f64 {
        let x = random_vec(a.dim(), seed);
        let ab = a.apply(&b.apply(&x).unwrap()).unwrap();
        let ba = b.apply(&a.apply(&x).unwrap()).unwrap();
        ab.iter().zip(&ba).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn l2_bath_traceless() {
        let lat = LatticeSpec::new(2).unwrap();
        let h = build_bath_hamiltonian(&lat, &CouplingSpec::default(), BathSpace::BathOnly).unwrap();
        assert_eq!(h.dim(), 64);
        assert!(h.trace().abs() < 1e-12);
        // Tr(H^2) = bonds * 2^n * 3/16 for distinct Pauli strings; the doubled
        // L = 2 ring bonds count with coupling 2 on 3 pairs: 3*4 + 4*1 = 16.
        let expected = 16.0 * 64.0 * 3.0 / 16.0;
        assert!((h.frobenius_sq() - expected).abs() < 1e-9);
    }

    #[test]
    fn two_spin_bond_spectrum() {
        let mut m = SpinModel::new(2);
        m.push(Term::Heisenberg { a: 0, b: 1, j: 1.0 });
        let dense = m.on_full().to_dense();
        let mut ev: Vec<f64> = dense
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .unwrap();
        ev.sort_by(f64::total_cmp);
        let expected = [-0.75, 0.25, 0.25, 0.25];
        for (a, b) in ev.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn system_hamiltonian_levels() {
        let h = build_system_hamiltonian(&CouplingSpec::default()).unwrap();
        assert_eq!(h.get(0, 0), -0.25);
        assert_eq!(h.get(1, 1), 0.25);
        let zero = build_system_hamiltonian(&CouplingSpec {
            b: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(zero.nnz(), 0);
    }

    #[test]
    fn interaction_traces_n7() {
        let lat = LatticeSpec::new(2).unwrap();
        let h = build_interaction_hamiltonian(&lat).unwrap();
        assert_eq!(h.trace(), 0.0);
        // Brute force Tr(H_int^2) through dense multiplication.
        let d = h.to_dense();
        let sq = &d * &d;
        let tr: f64 = (0..d.nrows()).map(|i| sq[(i, i)]).sum();
        assert!((tr - 3.0 * 128.0 * 3.0 / 16.0).abs() < 1e-10);
    }

    #[test]
    fn conservation_laws() {
        let lat = LatticeSpec::new(2).unwrap();
        let model = WheelModel::new(lat, CouplingSpec::default()).unwrap();
        let ops = model.operators(&Basis::full(7), 0.7);
        let sz_tot = sz_total(7).on_full();
        assert!(commutator_dev(&ops.h, &sz_tot, 1) < 1e-13);
        assert!(commutator_dev(&ops.h_int, &sz_tot, 2) < 1e-13);
        assert!(commutator_dev(&ops.h0(), &ops.sz_sys, 3) < 1e-13);
        assert!(commutator_dev(&ops.h_sys, &ops.sz_sys, 4) == 0.0);
        assert!(commutator_dev(&ops.h_int, &ops.sz_sys, 5) > 1e-3);
        assert_eq!(ops.h.max_asymmetry(), 0.0);
    }

    #[test]
    fn sector_direct_sum_matches_full() {
        let lat = LatticeSpec::new(3).unwrap();
        let model = WheelModel::new(lat, CouplingSpec::default()).unwrap();
        let full = model.total(0.3).on_full();
        let x = random_vec(full.dim(), 9);
        let y = full.apply(&x).unwrap();
        let mut dev: f64 = 0.0;
        for sector in enumerate_sectors(10) {
            let hs = model.total(0.3).on_sector(&sector);
            let restricted = full.restrict_to_sector(&sector).unwrap();
            assert_eq!(hs, restricted);
            let xs: Vec<C64> = sector.states().iter().map(|&s| x[s as usize]).collect();
            let ys = hs.apply(&xs).unwrap();
            for (i, &s) in sector.states().iter().enumerate() {
                dev = dev.max((ys[i] - y[s as usize]).norm());
            }
        }
        assert!(dev < 1e-13);
    }

    #[test]
    fn restriction_rejects_cross_sector() {
        let mut m = SpinModel::new(3);
        m.push(Term::TransverseField { site: 1, h: 1.0 });
        let sector = MagnetizationSector::new(3, 1);
        assert!(matches!(
            m.on_full().restrict_to_sector(&sector),
            Err(Error::CrossSectorEntry { .. })
        ));
    }

    #[test]
    fn sector_identity_and_total_sz() {
        let sector = MagnetizationSector::new(8, 3);
        let id = SparseOperator::identity(256).restrict_to_sector(&sector).unwrap();
        assert_eq!(id, SparseOperator::identity(sector.dim()));
        let sz = sz_total(8).on_full().restrict_to_sector(&sector).unwrap();
        for i in 0..sector.dim() {
            assert!((sz.get(i, i) - (3.0 - 4.0)).abs() < 1e-14);
        }
        assert_eq!(sz.nnz(), sector.dim());
    }

    #[test]
    fn assembly_commutes_with_restriction() {
        let lat = LatticeSpec::new(2).unwrap();
        let model = WheelModel::new(lat, CouplingSpec::default()).unwrap();
        let full_ops = model.operators(&Basis::full(7), 0.4);
        let sector = MagnetizationSector::new(7, 3);
        let sec_ops = model.operators(&Basis::Sector(sector.clone()), 0.4);
        let restricted = full_ops.h.restrict_to_sector(&sector).unwrap();
        let a = assemble_total(
            &full_ops.h_sys.restrict_to_sector(&sector).unwrap(),
            &full_ops.h_bath.restrict_to_sector(&sector).unwrap(),
            &full_ops.h_int.restrict_to_sector(&sector).unwrap(),
            0.4,
        )
        .unwrap();
        assert_eq!(restricted, a);
        assert_eq!(sec_ops.h, a);
    }
}

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel;
pub mod chebyshev;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod gpb;
pub mod harness;
pub mod lanczos;
pub mod lattice;
pub mod model;
pub mod operator;
pub mod scaling;
pub mod sector;
pub mod series;
pub mod typicality;

pub use error::{Error, Result};
pub use dynamics::{DecaySummary, Regime};
pub use harness::RunConfig;
pub use lattice::{CouplingMode, CouplingSpec, LatticeSpec};
pub use model::{SpinModel, WheelModel};
pub use operator::{SparseOperator, C64};
pub use sector::{Basis, MagnetizationSector};
pub use series::TimeSeries;
pub use typicality::{InitialStateSpec, WeightedEnsemble};

//! Numerical laboratory for extremal eigenvalue gaps of generalized Wigner matrices.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod ensembles;
pub mod error;
pub mod experiments;
pub mod format;
pub mod gaps;
pub mod hsreg;
pub mod mollifier;
pub mod quadrature;
pub mod rng;
pub mod smoothmax;
pub mod spectral;
pub mod stats;

pub use ensembles::{
    build_variance_profile, entry_moment, sample_matrix, three_point_law, Ensemble, EnsembleSpec,
    EntryLaw, LawKind, Matrix, MatrixSample, Part, ProfileKind, ProfileSpec, Symmetry, VarianceProfile,
};
pub use error::{Error, Result};
pub use gaps::GapSelector;
pub use faer::c64;

pub use spectral::{ClassicalLocations, Eigensystem, SpectralDomainGrid, Spectrum};

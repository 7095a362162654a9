//! Exact computer algebra for systems of PDEs viewed as algebraic loci in jet
//! coordinates: prolongation, solved (orthonomic) forms, integrability-condition
//! extraction and completion, symbol matrices with exact generic rank, the
//! quasi-regular-basis test, correspondence-based intersection of two theories,
//! solution transfer, and linear symmetry invariants.
//!
//! All coefficients are arbitrary-precision rationals; there is no floating
//! point anywhere in the crate. Every value is immutable after construction and
//! every operation is a pure function.

pub mod correspondence;
pub mod expr;
pub mod integrability;
pub mod jetgeom;
pub mod linalg;
pub mod symbol;
pub mod symmetry;
pub mod system;

pub use expr::{Atom, BaseFunc, Expr, JetVar, MultiIndex, Rat};
pub use jetgeom::BundleSpec;
pub use system::{PdeSystem, Ranking};

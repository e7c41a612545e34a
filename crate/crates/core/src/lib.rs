//! Exact simulation and rate analysis for spatial Λ-coalescents.
//!
//! The crate is `no_std` and only needs `alloc`. It covers:
//!
//! * [`measure`]: finite measures Λ on `[0,1]` (atoms plus density pieces)
//!   with adaptive quadrature against them,
//! * [`rates`]: the coalescence rates λ_{b,k}, λ_b, γ_b, η_b, the
//!   coming-down-from-infinity classifier and the rate inequality checks,
//! * [`geometry`]: finite geographies, torus construction, random-walk
//!   Green function and the pairwise limit constant κ,
//! * [`partition`]: labelled partitions of `[n]` with least-element ordering,
//! * [`engine`]: the event-driven (jump chain) simulator and its coupled
//!   variant.
//!
//! IO, statistics, experiments and the command line live in the `spcoal`
//! companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod engine;
pub mod error;
mod fenwick;
pub mod geometry;
pub mod math;
pub mod measure;
pub mod partition;
pub mod quadrature;
pub mod rates;
pub mod seeding;

pub use error::{Error, Result};
pub use geometry::{kappa, GeographySpec, Topology, WalkSpec};
pub use measure::{Atom, DensityPiece, DensityShape, LambdaMeasure};
pub use partition::{Label, LabeledPartition};
pub use quadrature::{Estimate, QuadratureConfig, QuadratureRule};
pub use rates::{CdiVerdict, ClassifierConfig, RateKernel, Verdict};

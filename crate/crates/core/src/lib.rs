//! Purely atomic probability measures and the numerics around them.
//!
//! The crate covers exact optimal transport between finite atomic measures,
//! random atomic measures built by stick-breaking or Poisson weights,
//! cylinder functionals with Wasserstein gradients, particle flows driven by
//! non-local vector fields, reconstruction of atomic liftings from sampled
//! curves, a branching curve with an atomless lifting, diagonal capacity
//! estimates and a few computations on the circle and the 2-sphere.
//!
//! All randomness is drawn from [`rng::stream`], keyed by a master seed, a
//! label and an index, so results are reproducible and independent of thread
//! scheduling.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod counterexample;
pub mod cylinder;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod manifold;
pub mod measures;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod superposition;
pub mod transport;

pub use error::{Error, Result};
pub use measures::{em, make_atomic, AtomicMeasure, MeasureCurve, WeightSequence};
pub use stats::Estimate;

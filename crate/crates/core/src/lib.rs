//! Learnable Koopman forecasters whose latent propagator has a guaranteed
//! spectral bound, plus the baselines, training loop and benchmark harness
//! around them.
//!
//! Start with [`model::Model`] for a trainable forecaster,
//! [`koopman::KoopmanOperator`] for the propagators on their own, or
//! [`bench::run_grid`] for whole experiments.

// `!(x < y)` is deliberate: it rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops read closer to the matrix formulas they implement
#![allow(clippy::needless_range_loop)]
#![allow(clippy::large_enum_variant)]

pub mod baselines;
pub mod bench;
pub mod checks;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod forecaster;
pub mod grad;
pub mod koopman;
pub mod linalg;
pub mod model;
pub mod params;
pub mod training;

// Book chapters, compiled as doctests so their snippets stay current.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/stability.md")]
    mod stability {}
    #[doc = include_str!("../../../book/src/low_rank.md")]
    mod low_rank {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}

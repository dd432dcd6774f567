//! Dynamic conceptional contrastive learning (DCCL) for generalized category
//! discovery, operating on feature vectors instead of images.
//!
//! The pipeline alternates two phases:
//!
//! * **Conception generation**: current features are turned into a
//!   label-consolidated similarity graph ([`simgraph`]), which is partitioned
//!   by map-equation minimization ([`infomap`]). Conception prototypes are
//!   mean-initialized into a memory buffer ([`memory`]).
//! * **Dual-level contrastive learning**: a small encoder ([`encoder`]) is
//!   trained with conception-level, dispersion and instance-level contrastive
//!   objectives ([`losses`]), while the memory follows a momentum update.
//!
//! [`trainer`] runs the alternation, [`eval`] scores the result with
//! semi-supervised k-means and Hungarian-matched accuracy, and [`cli`] wires
//! everything to the `dccl` binary.

pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod infomap;
pub mod losses;
pub mod memory;
pub mod rng;
pub mod simgraph;
pub mod trainer;

pub use error::{Error, Result};

//! Planning and verification of unequal error protection (UEP) for semantic bits.
//!
//! Each semantic bit carries a target bit-flip probability. This crate turns a
//! profile of such targets into a transmission plan that spends as little
//! blocklength as possible while meeting every target:
//!
//! - [`repetition`] assigns an odd repetition count per bit (bit-level UEP),
//! - [`grouping`] groups bits of similar protection and picks a block-code rate
//!   per group (block-level UEP), driven by the finite-blocklength analysis in
//!   [`fbl`],
//! - [`pipeline`] pushes payloads through encode, channel and decode and checks
//!   the targets empirically.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod channel;
pub mod error;
pub mod fbl;
pub mod grouping;
pub mod pipeline;
pub mod profiles;
pub mod repetition;

pub use channel::{ChannelMode, ChannelSpec};
pub use error::{Error, Result};
pub use fbl::BlerModel;
pub use grouping::{BlockPlan, CodeRate, CodebookConstraints, RateTable};
pub use pipeline::{ExperimentConfig, Report, Scheme};
pub use profiles::{Permutation, ProtectionProfile};
pub use repetition::RepetitionPlan;

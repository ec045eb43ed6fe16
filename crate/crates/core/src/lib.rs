//! Anonymization of periodically released spontaneous reporting tables.
//!
//! A release is a table of adverse-event reports keyed by case; follow-up
//! reports of a case reappear in later releases. The crate groups records so
//! every published group holds at least `k` cases, bounds the frequency of
//! each sensitive value by `theta`, and publishes quasi-identifiers either
//! generalized (`baseline`) or perturbed with differential-privacy mechanisms
//! (`num`, `all`).

pub mod attacks;
pub mod error;
pub mod grouping;
pub mod io;
pub mod mechanisms;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, Result};
pub use model::{
    NumValue, PrivacyConfig, PublishedRecord, QidSchema, Record, Release, ReleaseHistory, Theta, Variant,
};
pub use pipeline::{anonymize, AnonymizeOutcome};
pub use taxonomy::{NodeId, TaxonomyTree};

//! Screen reference resolution.
//!
//! Resolves spoken requests such as "call the second number" or "take me
//! there" to actionable text entities (phone numbers, email addresses, URLs,
//! postal addresses, dates) found in the OCR text of a phone screen.
//!
//! The crate contains:
//!
//! - [`screen`]: screens, OCR texts, entities, requests and samples.
//! - [`detect`]: pattern-based data detectors that categorize OCR text.
//! - [`corpus`]: a deterministic synthetic corpus generator.
//! - [`heuristic`]: the rule-cascade baseline and two evaluation oracles.
//! - [`features`]: location and string-matching features.
//! - [`srr`]: the modular attention network and its model file format.
//! - [`train`]: hand-derived gradients, Adam and the training loop.
//! - [`eval`]: exact match / top-1 error metrics and report tables.

pub mod corpus;
pub mod detect;
pub mod error;
pub mod eval;
pub mod features;
pub mod heuristic;
pub mod io;
pub mod screen;
pub mod srr;
pub mod train;

pub use error::{Error, Result};
pub use screen::{
    BBox, Entity, EntityCategory, OcrText, ReferenceType, Request, Sample, Screen, Subset,
    SupervisionTag,
};

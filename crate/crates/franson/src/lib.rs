//! Desk-scale simulation of a time-energy entanglement experiment: photon
//! pairs from a continuous-wave-pumped down-conversion source traverse an
//! optional scattering sample and a pair of unbalanced interferometers in the
//! "hugging" configuration, are time-tagged by jittery detectors, and the
//! resulting coincidence fringes are reduced to a contrast value that is
//! compared against Bell-type visibility witnesses.
//!
//! Pipeline, one module per stage:
//!
//! ```text
//! source ──> medium ──> interferometer ──> tagger ──> analysis
//!                                │                        │
//!                                └──────── runner ────────┘
//! ```
//!
//! * [`source`]      – joint spectrum and pair emission statistics
//! * [`medium`]      – ballistic transmission through turbid samples
//! * [`interferometer`] – path splitting, two-photon interference, phase drift
//! * [`tagger`]      – detection, time tags, coincidence histograms
//! * [`analysis`]    – fringe contrast estimation and visibility witnesses
//! * [`runner`]      – scan orchestration, scenario files, reports
//!
//! All randomness flows through caller-supplied seeded generators, so every
//! run is reproducible down to the byte.

pub mod analysis;
pub mod error;
pub mod interferometer;
pub mod medium;
pub mod runner;
pub mod source;
pub mod tagger;
pub mod units;

pub use error::{Error, Result};

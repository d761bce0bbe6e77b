//! Property testing of joint distributions under subcube conditioning.
//!
//! A subcube conditional oracle for a distribution `μ` over `Σ^n` accepts
//! per-coordinate symbol sets `A_1, ..., A_n` and returns a point of
//! `A = A_1 × ... × A_n` with probability proportional to `μ`; if the subcube
//! carries no mass the draw is uniform over the subcube. This crate provides:
//!
//! * [`distributions`] — dense joint tables and product distributions with
//!   exact marginal, prefix and conditional extraction, plus the JSON file
//!   format;
//! * [`metrics`] — total variation and Hellinger distances, conditional and
//!   average conditional distances, the chain-rule decomposition and the
//!   heavy-index level search;
//! * [`oracle`] — a seeded, ledgered simulation of the subcube oracle;
//! * [`basic_testers`] — single-coordinate `(ε, δ)` testers used as inner
//!   subroutines;
//! * [`joint_testers`] — uniformity, identity and independence testers for
//!   joint distributions, with exact query-count prediction;
//! * [`lowerbound`] — the hard family of biased-coin products and exact
//!   verification of its transcript-distance bounds.
//!
//! Everything is deterministic under explicit seeds. All distances use the
//! ½-normalized convention (see [`metrics`]).

#![forbid(unsafe_code)]

pub mod basic_testers;
pub mod distributions;
mod error;
pub mod joint_testers;
pub mod lowerbound;
pub mod metrics;
pub mod oracle;

pub use error::{Error, Result};

use serde::Serialize;

/// Result of a verification whose statement only applies under a premise:
/// either the premise failed (with the reason) or the check ran and produced
/// a report.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome<T> {
    PremiseNotMet { reason: String },
    Verified(T),
}

impl<T> Outcome<T> {
    pub fn is_verified(&self) -> bool {
        matches!(self, Outcome::Verified(_))
    }

    pub fn verified(self) -> Option<T> {
        match self {
            Outcome::Verified(t) => Some(t),
            Outcome::PremiseNotMet { .. } => None,
        }
    }

    pub fn as_verified(&self) -> Option<&T> {
        match self {
            Outcome::Verified(t) => Some(t),
            Outcome::PremiseNotMet { .. } => None,
        }
    }
}

//! Online gradient-equilibrium learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`losses`] holds the per-round loss families and their subgradients.
//! * [`descent`] runs gradient descent and proximal mirror descent over a stream of losses.
//! * [`equilibrium`] measures average gradients, checks the telescoping identities and
//!   evaluates finite-sample bounds, regret and no-move regret.
//! * [`pipelines`] contains the debiasing, decorrelation, quantile and Elo procedures.
//! * [`counterexamples`] builds sequences that separate regret from equilibrium.
//! * [`datagen`] produces seeded synthetic streams.
//! * [`io`] and [`cli`] move streams and reports through CSV and JSON files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod counterexamples;
pub mod datagen;
pub mod descent;
pub mod equilibrium;
mod error;
pub mod io;
pub mod losses;
pub mod pipelines;
pub mod vecops;

pub use error::{Error, Result};

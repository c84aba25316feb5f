//! Classification pipeline for multi-electrode array (MEA) recordings.
//!
//! Stages: bandpass filtering and time splitting ([`dsp`]), threshold-crossing
//! spike detection ([`spikes`]), handcrafted spike/burst features
//! ([`features`]), per-variant sequence assembly ([`sequences`]), from-scratch
//! sequence classifiers ([`models`]), a seeded synthetic data generator
//! ([`synthgen`]), and the evaluation protocol with well-wise splits, voting,
//! and feature importance ([`eval`]). [`io_store`] defines the on-disk
//! formats; [`cli`] wires everything into subcommands.

pub mod cli;
pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod io_store;
pub mod models;
pub mod pipeline;
pub mod sequences;
pub mod spikes;
pub mod synthgen;

pub use error::{PipelineError, Result};

//! Audio-visual late-fusion video classification, built from scratch and
//! verifiable end to end.
//!
//! The crate implements two multimodal architectures — `AttendFusion`
//! (per-modality MLP + scaled dot-product self-attention) and the wider
//! `FcLateFusion` baseline — together with everything needed to falsify
//! their behaviour at desk scale:
//!
//! - a minimal dense [`Tensor`](tensor::Tensor) core (f64, rank 1-3, no autograd),
//! - hand-derived backward passes for every layer, checked against central
//!   finite differences ([`nn`]),
//! - multi-label BCE, GAP@k and micro-F1 ([`metrics`]),
//! - a deterministic synthetic multimodal benchmark with planted
//!   per-modality class structure ([`data`]),
//! - Adam training with checkpointing and early stopping ([`train`]),
//! - a subcommand CLI ([`cli`]) and runnable examples for each capability.
//!
//! All randomness flows through an in-repo splittable PRNG ([`rng`]) so that
//! datasets, weights, and metric reports are bitwise-reproducible from seeds.

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

mod binfmt;

pub use error::{Error, Result};
pub use tensor::Tensor;

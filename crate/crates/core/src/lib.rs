//! Decode valence trajectories from EEG, turn them into affect-conditioned
//! generation prompts, assemble the generated media and evaluate the result.
//!
//! Stages, in pipeline order:
//!
//! * [`data`]: recordings, keypress traces, label alignment, windowing
//! * [`embedder`]: per-session contrastive encoders
//! * [`decoder`]: KNN valence decoding and leave-one-subject-out scoring
//! * [`timeline`]: label runs to affect segments
//! * [`promptgen`]: affect word banks and prompt synthesis
//! * [`genclients`]: music, image and embedding service clients (+ mocks)
//! * [`assembler`]: crossfaded soundtrack and video manifest
//! * [`evalsuite`]: distances, media attributes and statistics
//! * [`pipeline`]: configuration, staged runs and manifests

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembler;
pub mod data;
pub mod decoder;
pub mod embedder;
pub mod error;
pub mod evalsuite;
pub mod genclients;
pub mod pipeline;
pub mod promptgen;
pub mod synth;
pub mod timeline;
pub mod util;

pub use data::{LabeledSeries, Recording, ValenceEvent, ValenceState};
pub use embedder::{EmbedderModel, Embedding, EncoderConfig};
pub use error::{Error, Result};
pub use timeline::{AffectSegment, AffectTimeline};

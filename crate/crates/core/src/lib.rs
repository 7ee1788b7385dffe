//! Many-to-many voice conversion conditioned on speaker identity and
//! emotional style.
//!
//! The pipeline: a WORLD-style vocoder front end produces mel-cepstra, F0 and
//! aperiodicity; a speech-emotion-recognition network supplies a 64-dim
//! utterance-level style vector; an adversarially trained generator maps
//! cepstra across (speaker, style) targets; a conversion path reassembles
//! waveforms; and an objective-evaluation harness scores the result with
//! mel-cepstral distortion over DTW-aligned frames.

pub mod checkpoint;
pub mod config;
pub mod convert;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod ser;
pub mod stargan;
pub mod style;

pub use error::{Error, Result};

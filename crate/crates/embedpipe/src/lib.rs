//! Modular translation through a shared fixed-size sentence-embedding space.
//!
//! Language- and modality-specific encoders are distilled toward a frozen
//! teacher space; decoders are trained against frozen encoders; any encoder
//! then composes with any decoder, including pairs that never co-occurred
//! in training (zero-shot). Everything runs at desk scale on synthetic
//! cipher languages and a synthetic frame modality, so translation ground
//! truth is exact and the zero-shot claims are measurable.

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod models;
pub mod registry;
pub mod suite;
pub mod train;
pub mod space;
pub mod tensor;

//! Measurement toolkit for structural priming in autoregressive language models.
//!
//! The pipeline has four stages, each usable on its own:
//!
//! 1. [`corpus`] generates controlled prime/target dative stimuli (PO/DO
//!    alternation) under nine overlap/similarity conditions.
//! 2. [`scoring`] produces per-token log probabilities for (context,
//!    continuation) pairs through interchangeable backends: an in-repo
//!    interpolated n-gram oracle, a wire client for OpenAI-compatible
//!    logprob endpoints, and a persistent checksummed score cache.
//! 3. [`align`] + [`metrics`] map subword tokens onto syntactic slots and
//!    compute sentence-, slot-, and post-divergence priming effects, with
//!    quadrant and correlation summaries.
//! 4. [`prefs`] + [`regress`] compute per-verb structural preferences and fit
//!    a random-intercept linear mixed model over lexico-semantic factors.
//!
//! Numeric kernels ([`stats`], the n-gram model, the REML fitter) are generic
//! over the scalar type via [`num::Scalar`]; the pipeline data types use the
//! [`Real`] alias below.

pub mod align;
pub mod corpus;
pub mod metrics;
pub mod num;
pub mod prefs;
pub mod regress;
pub mod scoring;
pub mod stats;

/// Concrete scalar used by all pipeline data types and serialized artifacts.
pub type Real = f64;

//! Identify whether a recorded voice command came from a live speaker or a
//! playback device, using acoustic cues only.
//!
//! The pipeline runs clip ingestion ([`corpus`]), per-frame feature extraction
//! ([`features`] on top of [`dsp`]), min/max/mean pooling ([`pooling`]), and a
//! one-vs-one RBF support vector machine ([`svm`]), evaluated by stratified
//! cross-validation ([`eval`]). [`featsel`] ranks pooled dimensions by
//! correlation-based subset selection and [`synthgen`] generates a synthetic
//! labelled corpus for end-to-end checks.

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod featsel;
pub mod features;
pub mod pipeline;
pub mod pooling;
pub mod svm;
pub mod synthgen;

pub use corpus::{AudioClip, CorpusManifest, SampleRecord, SourceLabel};
pub use error::{Error, Result};
pub use eval::{EvalReport, FoldPlan};
pub use featsel::FeatureSubset;
pub use features::FrameFeatureVector;
pub use pooling::PooledFeatureVector;
pub use svm::{SvmConfig, SvmModel};

//! Spoofing-aware speaker verification by probabilistic score fusion.
//!
//! An ASV system scores a test utterance against a claimed speaker by cosine
//! similarity; a CM system scores it for bona fide speech with an affine
//! head on a CM embedding. Both are mapped to probabilities and multiplied:
//!
//! ```text
//! s_sasv = σ(s_cm) · f(s_asv)
//! ```
//!
//! with `f` linear, sigmoid, or a trained logistic calibrator. The CM head
//! can be fine-tuned directly on the fused score. Evaluation reports the
//! SV, SPF and SASV equal error rates.

pub mod domain;
pub mod error;
pub mod fusion;
pub mod io;
pub mod mapping;
pub mod metrics;
pub mod scoring;
pub mod synth;
pub mod trainer;

pub use domain::{Embedding, EmbeddingMap, EnrollmentMap, ScoreRecord, Trial, TrialClass};
pub use error::{Error, Result};
pub use fusion::{fuse, fuse_records, FusionStrategy};
pub use mapping::{apply_mapping, fit_calibrator, CalibratorParams, MappingKind};
pub use metrics::{compute_eer, evaluate, EerResult, MetricSuite};
pub use scoring::{score_all, CmHead, EnrollAggregation};

//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;

/// Tolerance on the cosine range for rounding.
pub const COSINE_SLACK: f64 = 1e-6;

/// Default ASV speaker-embedding dimension.
pub const ASV_DIM: usize = 192;

/// Default CM embedding dimension.
pub const CM_DIM: usize = 160;

/// An identified embedding vector. Stored as float32 on disk, held as f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub id: String,
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }
}

/// Embeddings keyed by utterance id, in file order.
pub type EmbeddingMap = IndexMap<String, Embedding>;

/// Speaker id to its enrollment utterance ids, in first-seen speaker order.
pub type EnrollmentMap = IndexMap<String, Vec<String>>;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The three SASV trial classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrialClass {
    Target,
    NonTarget,
    Spoof,
}

impl TrialClass {
    pub const ALL: [TrialClass; 3] = [TrialClass::Target, TrialClass::NonTarget, TrialClass::Spoof];

    /// Speaker label: 1 when the test speech is the claimed speaker's own bona fide speech.
    pub fn asv_label(self) -> u8 {
        match self {
            TrialClass::Target => 1,
            // A spoof impersonates the claimed speaker, so the ASV sub-label
            // is not meaningful; it is carried as 1 and masked by the CM label.
            TrialClass::Spoof => 1,
            TrialClass::NonTarget => 0,
        }
    }

    /// Countermeasure label: 1 for bona fide speech.
    pub fn cm_label(self) -> u8 {
        match self {
            TrialClass::Target | TrialClass::NonTarget => 1,
            TrialClass::Spoof => 0,
        }
    }

    /// The SASV positive class: target speaker and bona fide.
    pub fn sasv_positive(self) -> bool {
        self == TrialClass::Target
    }

    pub fn is_bonafide(self) -> bool {
        self.cm_label() == 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrialClass::Target => "target",
            TrialClass::NonTarget => "nontarget",
            TrialClass::Spoof => "spoof",
        }
    }
}

impl fmt::Display for TrialClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrialClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "target" => Ok(TrialClass::Target),
            "nontarget" => Ok(TrialClass::NonTarget),
            "spoof" => Ok(TrialClass::Spoof),
            other => Err(other.to_string()),
        }
    }
}

/// A claimed speaker and a test utterance, optionally labeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub speaker_id: String,
    pub test_utt_id: String,
    pub class: Option<TrialClass>,
}

impl Trial {
    pub fn new(
        speaker_id: impl Into<String>,
        test_utt_id: impl Into<String>,
        class: Option<TrialClass>,
    ) -> Self {
        Self {
            speaker_id: speaker_id.into(),
            test_utt_id: test_utt_id.into(),
            class,
        }
    }
}

/// Per-trial subsystem scores and the fused decision score.
///
/// `s_sasv` is `None` until a fusion strategy fills it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub trial: Trial,
    pub s_asv: f64,
    pub s_cm: f64,
    pub s_sasv: Option<f64>,
}

impl ScoreRecord {
    pub fn class(&self) -> Option<TrialClass> {
        self.trial.class
    }
}

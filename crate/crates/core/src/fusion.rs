//! Score-level fusion of ASV and CM scores into the SASV decision score.

use crate::domain::ScoreRecord;
use crate::mapping::{apply_mapping, map_sigmoid, MappingKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionStrategy {
    /// `σ(s_cm) · f(s_asv)`: the posterior product under conditional independence.
    ProductRule(MappingKind),
    /// `σ(s_cm) + σ(s_asv)`.
    MappedSum,
    /// `s_cm · s_asv`.
    RawProduct,
    /// `s_cm + s_asv`, the score-sum baseline.
    RawSum,
}

pub fn fuse(strategy: FusionStrategy, s_asv: f64, s_cm: f64) -> f64 {
    match strategy {
        FusionStrategy::ProductRule(kind) => map_sigmoid(s_cm) * apply_mapping(kind, s_asv),
        FusionStrategy::MappedSum => map_sigmoid(s_cm) + map_sigmoid(s_asv),
        FusionStrategy::RawProduct => s_cm * s_asv,
        FusionStrategy::RawSum => s_cm + s_asv,
    }
}

/// Fills `s_sasv` on every record, preserving order.
pub fn fuse_records(strategy: FusionStrategy, records: &[ScoreRecord]) -> Vec<ScoreRecord> {
    records
        .iter()
        .map(|r| ScoreRecord {
            s_sasv: Some(fuse(strategy, r.s_asv, r.s_cm)),
            ..r.clone()
        })
        .collect()
}

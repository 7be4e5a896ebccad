//! Equal error rate and the SV / SPF / SASV metric suite.
//!
//! Convention: a trial is accepted iff `score >= threshold`. Thresholds are
//! swept over the distinct observed scores, ascending, followed by `+∞`.
//! At each sweep point `FRR = #{pos < t}/P` and `FAR = #{neg >= t}/N`; the
//! difference `FAR - FRR` starts at 1 and is non-increasing. The EER is
//! read at the first point where it reaches zero, or linearly interpolated
//! between the last positive and first negative difference. When the
//! crossing lies past the largest score the reported threshold is that
//! largest score.

use crate::domain::{ScoreRecord, TrialClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    /// Equal error rate as a fraction.
    pub eer: f64,
    pub threshold: f64,
}

/// Which score column a metric is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreColumn {
    Asv,
    Cm,
    #[default]
    Sasv,
}

impl ScoreColumn {
    pub fn get(self, r: &ScoreRecord) -> Option<f64> {
        match self {
            ScoreColumn::Asv => Some(r.s_asv),
            ScoreColumn::Cm => Some(r.s_cm),
            ScoreColumn::Sasv => r.s_sasv,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreColumn::Asv => "s_asv",
            ScoreColumn::Cm => "s_cm",
            ScoreColumn::Sasv => "s_sasv",
        }
    }
}

/// The three EERs; a metric is `None` when one of its classes is absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSuite {
    pub sv_eer: Option<EerResult>,
    pub spf_eer: Option<EerResult>,
    pub sasv_eer: Option<EerResult>,
}

fn check_side(scores: &[f64], what: &'static str, offset: usize) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty(what));
    }
    match scores.iter().position(|s| !s.is_finite()) {
        Some(i) => Err(Error::NonFiniteScore(offset + i)),
        None => Ok(()),
    }
}

pub fn compute_eer(pos: &[f64], neg: &[f64]) -> Result<EerResult> {
    check_side(pos, "positive scores", 0)?;
    check_side(neg, "negative scores", pos.len())?;

    let mut pos = pos.to_vec();
    let mut neg = neg.to_vec();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);

    // Merge the two sorted lists; `pos_below` / `neg_below` count scores
    // strictly below the current threshold.
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev: Option<(f64, f64, f64)> = None; // (threshold, far, frr)
    loop {
        let t = match (pos.get(i), neg.get(j)) {
            (Some(&p), Some(&n)) => p.min(n),
            (Some(&p), None) => p,
            (None, Some(&n)) => n,
            (None, None) => f64::INFINITY,
        };
        let frr = i as f64 / np;
        let far = (nn - j as f64) / nn;
        let diff = far - frr;
        if diff <= 0.0 {
            return Ok(match prev {
                _ if diff == 0.0 => EerResult {
                    eer: far,
                    threshold: t,
                },
                Some((t0, far0, frr0)) => {
                    let d0 = far0 - frr0;
                    let w = d0 / (d0 - diff);
                    EerResult {
                        eer: far0 + w * (far - far0),
                        threshold: if t.is_finite() { t0 + w * (t - t0) } else { t0 },
                    }
                }
                // The first sweep point always has FRR = 0 and FAR = 1.
                None => unreachable!("sweep starts with FAR - FRR = 1"),
            });
        }
        prev = Some((t, far, frr));
        while i < pos.len() && pos[i] == t {
            i += 1;
        }
        while j < neg.len() && neg[j] == t {
            j += 1;
        }
    }
}

/// Splits labeled records into (positive, negative) score lists for one metric.
fn partition(
    records: &[ScoreRecord],
    column: ScoreColumn,
    negatives: &[TrialClass],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (i, r) in records.iter().enumerate() {
        let class = r.class().ok_or(Error::Unlabeled(i))?;
        let s = column.get(r).ok_or_else(|| {
            Error::Config(format!("record {i} has no {} score", column.name()))
        })?;
        if class == TrialClass::Target {
            pos.push(s);
        } else if negatives.contains(&class) {
            neg.push(s);
        }
    }
    Ok((pos, neg))
}

fn metric(records: &[ScoreRecord], column: ScoreColumn, negatives: &[TrialClass]) -> Result<Option<EerResult>> {
    let (pos, neg) = partition(records, column, negatives)?;
    if pos.is_empty() || neg.is_empty() {
        return Ok(None);
    }
    compute_eer(&pos, &neg).map(Some)
}

/// SV, SPF and SASV EERs on one score column.
pub fn evaluate_column(records: &[ScoreRecord], column: ScoreColumn) -> Result<MetricSuite> {
    Ok(MetricSuite {
        sv_eer: metric(records, column, &[TrialClass::NonTarget])?,
        spf_eer: metric(records, column, &[TrialClass::Spoof])?,
        sasv_eer: metric(records, column, &[TrialClass::NonTarget, TrialClass::Spoof])?,
    })
}

/// The metric suite on the fused `s_sasv` column.
pub fn evaluate(records: &[ScoreRecord]) -> Result<MetricSuite> {
    evaluate_column(records, ScoreColumn::Sasv)
}

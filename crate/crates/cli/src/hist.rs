//! Per-class score histograms on one shared set of equal-width bins.
//!
//! Text layout: a `# column <name> bins <n>` line (plus `# degenerate
//! constant <v>` when every score is equal), then for each class present a
//! `class <label> <count>` line followed by one `edge_low edge_high count`
//! row per bin.

use std::fmt::Write as _;

use sasv_fusion::io::format_sig9;
use sasv_fusion::metrics::ScoreColumn;
use sasv_fusion::{Error, ScoreRecord, TrialClass};

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramData {
    pub column: ScoreColumn,
    /// `bins + 1` strictly increasing edges, or `[v, v]` when degenerate.
    pub edges: Vec<f64>,
    /// Counts per bin for each class present; `None` is unlabeled rows.
    pub classes: Vec<(Option<TrialClass>, Vec<u64>)>,
    /// Set when the column is constant.
    pub degenerate: Option<f64>,
}

fn label(c: Option<TrialClass>) -> &'static str {
    c.map_or("unlabeled", TrialClass::as_str)
}

pub fn histogram(records: &[ScoreRecord], column: ScoreColumn, bins: usize) -> Result<HistogramData, Error> {
    if bins == 0 {
        return Err(Error::Config("bins must be positive".into()));
    }
    let values = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            column
                .get(r)
                .ok_or_else(|| Error::Config(format!("row {i} has no {} value", column.name())))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if values.is_empty() {
        return Err(Error::Empty("score rows"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let order = [
        Some(TrialClass::Target),
        Some(TrialClass::NonTarget),
        Some(TrialClass::Spoof),
        None,
    ];
    let present: Vec<Option<TrialClass>> = order
        .into_iter()
        .filter(|c| records.iter().any(|r| r.trial.class == *c))
        .collect();

    if lo == hi {
        let classes = present
            .into_iter()
            .map(|c| (c, vec![records.iter().filter(|r| r.trial.class == c).count() as u64]))
            .collect();
        return Ok(HistogramData {
            column,
            edges: vec![lo, hi],
            classes,
            degenerate: Some(lo),
        });
    }

    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|k| lo + width * k as f64).collect();
    edges.push(hi);
    let mut classes: Vec<(Option<TrialClass>, Vec<u64>)> =
        present.into_iter().map(|c| (c, vec![0; bins])).collect();
    for (r, &v) in records.iter().zip(&values) {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        let slot = classes
            .iter_mut()
            .find(|(c, _)| *c == r.trial.class)
            .expect("class collected above");
        slot.1[k] += 1;
    }
    Ok(HistogramData {
        column,
        edges,
        classes,
        degenerate: None,
    })
}

impl HistogramData {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n_bins = self.edges.len() - 1;
        let _ = writeln!(out, "# column {} bins {}", self.column.name(), n_bins);
        if let Some(v) = self.degenerate {
            let _ = writeln!(out, "# degenerate constant {}", format_sig9(v));
        }
        for (class, counts) in &self.classes {
            let _ = writeln!(out, "class {} {}", label(*class), counts.iter().sum::<u64>());
            for (k, count) in counts.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{} {} {}",
                    format_sig9(self.edges[k]),
                    format_sig9(self.edges[k + 1]),
                    count
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sasv_fusion::Trial;

    fn rec(class: TrialClass, s: f64) -> ScoreRecord {
        ScoreRecord {
            trial: Trial::new("s", "u", Some(class)),
            s_asv: s,
            s_cm: 2.0,
            s_sasv: Some(s),
        }
    }

    #[test]
    fn counts_are_conserved() {
        let recs: Vec<ScoreRecord> = (0..100)
            .map(|i| {
                let class = TrialClass::ALL[i % 3];
                rec(class, (i as f64 * 0.37).sin())
            })
            .collect();
        let h = histogram(&recs, ScoreColumn::Sasv, 10).unwrap();
        assert_eq!(h.edges.len(), 11);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        for (class, counts) in &h.classes {
            let n = recs.iter().filter(|r| r.trial.class == *class).count() as u64;
            assert_eq!(counts.iter().sum::<u64>(), n);
        }
        assert_eq!(h.classes.len(), 3);
    }

    #[test]
    fn constant_column_is_flagged() {
        let recs = vec![rec(TrialClass::Target, 0.5), rec(TrialClass::Spoof, 0.5)];
        let h = histogram(&recs, ScoreColumn::Cm, 10).unwrap();
        assert_eq!(h.degenerate, Some(2.0));
        assert_eq!(h.classes[0].1, vec![1]);
        let text = h.to_text();
        assert!(text.contains("# degenerate constant 2"));
        assert!(text.contains("class spoof 1\n2 2 1\n"));
    }

    #[test]
    fn empty_input_errors() {
        assert!(histogram(&[], ScoreColumn::Sasv, 10).is_err());
        assert!(histogram(&[rec(TrialClass::Target, 0.1)], ScoreColumn::Sasv, 0).is_err());
    }
}

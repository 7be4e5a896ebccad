//! Raw subsystem scores: ASV cosine similarity and the CM affine head.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::domain::{dot, Embedding, EmbeddingMap, EnrollmentMap, ScoreRecord, Trial};
use crate::error::{Error, Result};

/// The trainable fully-connected layer producing the CM logit.
#[derive(Debug, Clone, PartialEq)]
pub struct CmHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl CmHead {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("CM head weights"));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("CM head has non-finite parameters".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    /// Parses the three-line text layout: `dim <n>`, `bias <float>`, then n weights.
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut keyed = |key: &str| -> Result<(usize, String)> {
            let (i, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("missing '{key}' line")))?;
            let rest = line
                .trim()
                .strip_prefix(key)
                .filter(|r| r.starts_with(char::is_whitespace))
                .ok_or_else(|| Error::parse(path, i + 1, format!("expected '{key} <value>'")))?;
            Ok((i + 1, rest.trim().to_string()))
        };
        let (l1, dim) = keyed("dim")?;
        let dim: usize = dim
            .parse()
            .map_err(|e| Error::parse(path, l1, format!("bad dim: {e}")))?;
        let (l2, bias) = keyed("bias")?;
        let bias: f64 = bias
            .parse()
            .map_err(|e| Error::parse(path, l2, format!("bad bias: {e}")))?;
        let (l3, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, "missing weights line"))?;
        let weights = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, l3 + 1, format!("bad weight: {e}")))?;
        if weights.len() != dim {
            return Err(Error::parse(
                path,
                l3 + 1,
                format!("expected {dim} weights, found {}", weights.len()),
            ));
        }
        Self::new(weights, bias).map_err(|e| Error::parse(path, l3 + 1, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dim {}", self.dim());
        let _ = writeln!(out, "bias {:?}", self.bias);
        let weights: Vec<String> = self.weights.iter().map(|w| format!("{w:?}")).collect();
        out.push_str(&weights.join(" "));
        out.push('\n');
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// How several enrollment utterances become one ASV score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnrollAggregation {
    /// Cosine against the normalized mean of the enrollment embeddings.
    #[default]
    EmbeddingMean,
    /// Mean of per-utterance cosine scores.
    ScoreMean,
}

/// Coordinate-wise mean of the enrollment embeddings, L2-normalized.
pub fn enroll_centroid(embeddings: &[&Embedding]) -> Result<Embedding> {
    let first = embeddings.first().ok_or(Error::Empty("enrollment list"))?;
    let dim = first.dim();
    let mut mean = vec![0.0; dim];
    for emb in embeddings {
        if emb.dim() != dim {
            return Err(Error::ShapeMismatch {
                left: dim,
                right: emb.dim(),
            });
        }
        for (m, v) in mean.iter_mut().zip(&emb.values) {
            *m += v;
        }
    }
    let n = embeddings.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm = dot(&mean, &mean).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm(format!("enrollment mean of '{}'", first.id)));
    }
    mean.iter_mut().for_each(|m| *m /= norm);
    Ok(Embedding::new(format!("centroid:{}", first.id), mean))
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine_score(enroll: &Embedding, test: &Embedding) -> Result<f64> {
    if enroll.dim() != test.dim() {
        return Err(Error::ShapeMismatch {
            left: enroll.dim(),
            right: test.dim(),
        });
    }
    let (ne, nt) = (enroll.norm(), test.norm());
    if ne == 0.0 {
        return Err(Error::ZeroNorm(enroll.id.clone()));
    }
    if nt == 0.0 {
        return Err(Error::ZeroNorm(test.id.clone()));
    }
    Ok((dot(&enroll.values, &test.values) / (ne * nt)).clamp(-1.0, 1.0))
}

/// The pre-sigmoid CM logit `w·x + b`.
pub fn cm_score(head: &CmHead, x_cm: &Embedding) -> Result<f64> {
    if head.dim() != x_cm.dim() {
        return Err(Error::ShapeMismatch {
            left: head.dim(),
            right: x_cm.dim(),
        });
    }
    Ok(dot(&head.weights, &x_cm.values) + head.bias)
}

/// Precomputed per-speaker enrollment state for repeated ASV scoring.
pub struct AsvScorer<'a> {
    aggregation: EnrollAggregation,
    enrollment: &'a EnrollmentMap,
    asv_embs: &'a EmbeddingMap,
    centroids: HashMap<&'a str, Embedding>,
}

impl<'a> AsvScorer<'a> {
    pub fn new(
        enrollment: &'a EnrollmentMap,
        asv_embs: &'a EmbeddingMap,
        aggregation: EnrollAggregation,
    ) -> Self {
        Self {
            aggregation,
            enrollment,
            asv_embs,
            centroids: HashMap::new(),
        }
    }

    fn enroll_embs(&self, index: usize, speaker: &str) -> Result<Vec<&'a Embedding>> {
        let utts = self.enrollment.get(speaker).ok_or_else(|| Error::Unresolved {
            index,
            what: "speaker",
            id: speaker.to_string(),
        })?;
        utts.iter()
            .map(|u| {
                self.asv_embs.get(u).ok_or_else(|| Error::Unresolved {
                    index,
                    what: "enrollment utterance",
                    id: u.clone(),
                })
            })
            .collect()
    }

    /// The enrollment centroid for `speaker`, cached after first use.
    pub fn centroid(&mut self, index: usize, speaker: &str) -> Result<&Embedding> {
        let key = match self.enrollment.get_key_value(speaker) {
            Some((k, _)) => k.as_str(),
            None => {
                return Err(Error::Unresolved {
                    index,
                    what: "speaker",
                    id: speaker.to_string(),
                })
            }
        };
        if !self.centroids.contains_key(key) {
            let c = enroll_centroid(&self.enroll_embs(index, speaker)?)?;
            self.centroids.insert(key, c);
        }
        Ok(&self.centroids[key])
    }

    pub fn score(&mut self, index: usize, speaker: &str, test: &Embedding) -> Result<f64> {
        match self.aggregation {
            EnrollAggregation::EmbeddingMean => cosine_score(self.centroid(index, speaker)?, test),
            EnrollAggregation::ScoreMean => {
                let embs = self.enroll_embs(index, speaker)?;
                let mut sum = 0.0;
                for e in &embs {
                    sum += cosine_score(e, test)?;
                }
                Ok(sum / embs.len() as f64)
            }
        }
    }
}

fn lookup<'m>(map: &'m EmbeddingMap, index: usize, id: &str, what: &'static str) -> Result<&'m Embedding> {
    map.get(id).ok_or_else(|| Error::Unresolved {
        index,
        what,
        id: id.to_string(),
    })
}

/// Scores every trial: ASV cosine against the claimed speaker's enrollment
/// and the CM logit of the test utterance. `s_sasv` is left unset.
pub fn score_all(
    trials: &[Trial],
    enrollment: &EnrollmentMap,
    asv_embs: &EmbeddingMap,
    cm_embs: &EmbeddingMap,
    head: &CmHead,
    aggregation: EnrollAggregation,
) -> Result<Vec<ScoreRecord>> {
    let mut asv = AsvScorer::new(enrollment, asv_embs, aggregation);
    trials
        .iter()
        .enumerate()
        .map(|(i, trial)| {
            let x_asv = lookup(asv_embs, i, &trial.test_utt_id, "ASV test utterance")?;
            let x_cm = lookup(cm_embs, i, &trial.test_utt_id, "CM test utterance")?;
            Ok(ScoreRecord {
                trial: trial.clone(),
                s_asv: asv.score(i, &trial.speaker_id, x_asv)?,
                s_cm: cm_score(head, x_cm)?,
                s_sasv: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TrialClass;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new("e", v.to_vec())
    }

    #[test]
    fn centroid_examples() {
        let a = e(&[1.0, 0.0]);
        let b = e(&[0.0, 1.0]);
        assert_eq!(enroll_centroid(&[&a]).unwrap().values, vec![1.0, 0.0]);
        let c = enroll_centroid(&[&a, &b]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.values[0] - h).abs() < 1e-15 && (c.values[1] - h).abs() < 1e-15);
        assert!((c.norm() - 1.0).abs() < 1e-9);
        let neg = e(&[-1.0, 0.0]);
        assert!(matches!(enroll_centroid(&[&a, &neg]), Err(Error::ZeroNorm(_))));
        assert!(matches!(enroll_centroid(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn cosine_examples() {
        let v = e(&[0.3, 0.4]);
        assert_eq!(cosine_score(&v, &v).unwrap(), 1.0);
        assert_eq!(cosine_score(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        let s = cosine_score(&e(&[1.0, 1.0, 0.0]), &e(&[1.0, 0.0, 0.0])).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(
            cosine_score(&e(&[0.0, 0.0]), &v),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn cm_examples() {
        let x = e(&[2.5, -1.0, 3.0]);
        assert_eq!(cm_score(&CmHead::zeros(3), &x).unwrap(), 0.0);
        let basis = CmHead::new(vec![1.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(cm_score(&basis, &x).unwrap(), 2.5);
        let h = CmHead::new(vec![0.5, -1.0], 0.1).unwrap();
        assert!((cm_score(&h, &e(&[2.0, 1.0])).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(cm_score(&h, &x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn head_text_round_trip() {
        let h = CmHead::new(vec![0.1, -2.0 / 3.0, 1e-300], -0.25).unwrap();
        let parsed = CmHead::parse(Path::new("h"), &h.to_text()).unwrap();
        assert_eq!(parsed, h);
        assert!(CmHead::parse(Path::new("h"), "dim 2\nbias 0\n1.0\n").is_err());
        assert!(CmHead::parse(Path::new("h"), "dim 1\n").is_err());
    }

    fn toy_world() -> (EnrollmentMap, EmbeddingMap, EmbeddingMap) {
        let mut enroll = EnrollmentMap::new();
        enroll.insert("s1".into(), vec!["e1".into()]);
        enroll.insert("s2".into(), vec!["e2a".into(), "e2b".into()]);
        let asv: EmbeddingMap = [
            ("e1", vec![1.0, 0.0, 0.0]),
            ("e2a", vec![0.0, 1.0, 0.0]),
            ("e2b", vec![0.0, 1.0, 0.2]),
            ("t1", vec![0.9, 0.1, 0.0]),
            ("t2", vec![0.1, 0.8, 0.3]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), Embedding::new(k, v)))
        .collect();
        let cm: EmbeddingMap = [("t1", vec![1.0, 2.0]), ("t2", vec![-1.0, 0.5])]
            .into_iter()
            .map(|(k, v)| (k.to_string(), Embedding::new(k, v)))
            .collect();
        (enroll, asv, cm)
    }

    #[test]
    fn score_all_shape_and_errors() {
        let (enroll, asv, cm) = toy_world();
        let head = CmHead::new(vec![1.0, -0.5], 0.2).unwrap();
        let trials = vec![
            Trial::new("s1", "t1", Some(TrialClass::Target)),
            Trial::new("s2", "t1", Some(TrialClass::NonTarget)),
            Trial::new("s2", "t2", Some(TrialClass::Target)),
        ];
        let recs = score_all(&trials, &enroll, &asv, &cm, &head, EnrollAggregation::EmbeddingMean).unwrap();
        assert_eq!(recs.len(), 3);
        for r in &recs {
            assert!((-1.0..=1.0).contains(&r.s_asv));
            assert!(r.s_sasv.is_none());
        }
        // CM score depends only on the test utterance.
        assert_eq!(recs[0].s_cm, recs[1].s_cm);
        assert_ne!(recs[0].s_asv, recs[1].s_asv);

        let bad = vec![Trial::new("s1", "t1", None), Trial::new("s9", "t1", None)];
        let err = score_all(&bad, &enroll, &asv, &cm, &head, EnrollAggregation::EmbeddingMean).unwrap_err();
        assert!(matches!(err, Error::Unresolved { index: 1, what: "speaker", ref id } if id == "s9"));

        let bad = vec![Trial::new("s1", "nope", None)];
        assert!(matches!(
            score_all(&bad, &enroll, &asv, &cm, &head, EnrollAggregation::EmbeddingMean),
            Err(Error::Unresolved { index: 0, .. })
        ));
    }

    #[test]
    fn score_mean_aggregation() {
        let (enroll, asv, cm) = toy_world();
        let head = CmHead::zeros(2);
        let trials = vec![Trial::new("s2", "t2", None)];
        let recs = score_all(&trials, &enroll, &asv, &cm, &head, EnrollAggregation::ScoreMean).unwrap();
        let expected = (cosine_score(&asv["e2a"], &asv["t2"]).unwrap()
            + cosine_score(&asv["e2b"], &asv["t2"]).unwrap())
            / 2.0;
        assert!((recs[0].s_asv - expected).abs() < 1e-15);
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 3).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn cosine_properties(a in vec3(), b in vec3(), c in 0.01f64..100.0) {
            let (ea, eb) = (e(&a), e(&b));
            let ab = cosine_score(&ea, &eb).unwrap();
            prop_assert_eq!(ab, cosine_score(&eb, &ea).unwrap());
            prop_assert!(ab.abs() <= 1.0);
            let scaled = e(&a.iter().map(|x| x * c).collect::<Vec<_>>());
            prop_assert!((cosine_score(&ea, &scaled).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cm_score_is_affine(
            w in prop::collection::vec(-2.0f64..2.0, 4),
            bias in -3.0f64..3.0,
            x in prop::collection::vec(-5.0f64..5.0, 4),
            y in prop::collection::vec(-5.0f64..5.0, 4),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let head = CmHead::new(w, bias).unwrap();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = cm_score(&head, &e(&mix)).unwrap();
            let rhs = alpha * cm_score(&head, &e(&x)).unwrap() + beta * cm_score(&head, &e(&y)).unwrap()
                - (alpha + beta - 1.0) * bias;
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            prop_assert!((lhs - rhs).abs() / scale < 1e-12);
        }
    }
}

//! Fine-tuning of the CM head against the fused SASV score.
//!
//! Only the affine CM head is trained; ASV scores are fixed inputs. The
//! objective is a prior-weighted binary cross-entropy on
//! `s_sasv = σ(w·x_cm + b) · f(s_asv)`, where target trials are positive
//! and both non-target and spoof trials are negative:
//!
//! ```text
//! L = ρ · mean_pos(−log s) + (1 − ρ) · mean_neg(−log(1 − s))
//! ```
//!
//! After every epoch the dev trials are re-scored and the head with the
//! lowest dev SASV-EER is kept (the initial head counts as epoch 0).

use crate::domain::{Embedding, EmbeddingMap, EnrollmentMap, ScoreRecord, Trial, TrialClass};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionStrategy};
use crate::mapping::{apply_mapping, map_sigmoid, MappingKind};
use crate::metrics::{evaluate, MetricSuite};
use crate::scoring::{cm_score, cosine_score, AsvScorer, CmHead, EnrollAggregation};
use crate::synth::SeededRng;

/// Scores are clamped to `[EPS, 1 − EPS]` inside the loss.
pub const LOSS_EPS: f64 = 1e-12;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Prior weight ρ of the target class in the loss.
    pub target_prior: f64,
    pub seed: u64,
    /// ASV mapping inside the fused score; linear or sigmoid only.
    pub mapping: MappingKind,
    /// Pairs drawn (fresh) for each epoch.
    pub pairs_per_epoch: usize,
    /// Relative counts of target, non-target and spoof pairs.
    pub class_mix: [usize; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 1024,
            epochs: 200,
            target_prior: 0.1,
            seed: 0,
            mapping: MappingKind::Sigmoid,
            pairs_per_epoch: 3072,
            class_mix: [1, 1, 1],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if matches!(self.mapping, MappingKind::Calibrated(_)) {
            return bad("fine-tuning supports only the linear and sigmoid mappings".into());
        }
        if !(self.target_prior > 0.0 && self.target_prior < 1.0) {
            return bad(format!("target prior must lie in (0, 1), got {}", self.target_prior));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.pairs_per_epoch == 0 {
            return bad("batch size and pairs per epoch must be positive".into());
        }
        if self.class_mix.iter().sum::<usize>() == 0 {
            return bad("class mix must contain at least one class".into());
        }
        Ok(())
    }
}

/// One training example: enrollment centroid, test embeddings, SASV label.
#[derive(Debug, Clone, Copy)]
pub struct TrainPair<'a> {
    pub enroll_centroid: &'a Embedding,
    pub test_asv: &'a Embedding,
    pub test_cm: &'a Embedding,
    /// `true` only for target trials.
    pub label: bool,
}

type UttRef<'a> = (&'a Embedding, &'a Embedding);

struct SpeakerPool<'a> {
    centroid: Embedding,
    bonafide: Vec<UttRef<'a>>,
    spoof: Vec<UttRef<'a>>,
}

/// Training utterances grouped by speaker, built from a labeled trial list:
/// target trials contribute the speaker's bona fide utterances and spoof
/// trials the attacks aimed at that speaker.
pub struct TrainPool<'a> {
    speakers: Vec<SpeakerPool<'a>>,
}

impl<'a> TrainPool<'a> {
    pub fn from_trials(
        trials: &[Trial],
        enrollment: &EnrollmentMap,
        asv: &'a EmbeddingMap,
        cm: &'a EmbeddingMap,
    ) -> Result<Self> {
        let mut scorer = AsvScorer::new(enrollment, asv, EnrollAggregation::EmbeddingMean);
        let mut speakers: Vec<(String, SpeakerPool<'a>)> = Vec::new();
        for (i, t) in trials.iter().enumerate() {
            let class = t.class.ok_or(Error::Unlabeled(i))?;
            if class == TrialClass::NonTarget {
                continue;
            }
            let resolve = |map: &'a EmbeddingMap, what| {
                map.get(&t.test_utt_id).ok_or_else(|| Error::Unresolved {
                    index: i,
                    what,
                    id: t.test_utt_id.clone(),
                })
            };
            let utt = (resolve(asv, "ASV test utterance")?, resolve(cm, "CM test utterance")?);
            let slot = match speakers.iter().position(|(s, _)| *s == t.speaker_id) {
                Some(k) => k,
                None => {
                    let centroid = scorer.centroid(i, &t.speaker_id)?.clone();
                    speakers.push((
                        t.speaker_id.clone(),
                        SpeakerPool {
                            centroid,
                            bonafide: Vec::new(),
                            spoof: Vec::new(),
                        },
                    ));
                    speakers.len() - 1
                }
            };
            let pool = &mut speakers[slot].1;
            if class == TrialClass::Target {
                pool.bonafide.push(utt);
            } else {
                pool.spoof.push(utt);
            }
        }
        Ok(Self {
            speakers: speakers.into_iter().map(|(_, p)| p).collect(),
        })
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }
}

fn pick<'p, T>(rng: &mut SeededRng, items: &'p [T]) -> &'p T {
    &items[rng.index(items.len())]
}

/// Draws `n_pairs` pairs whose classes follow `class_mix` cyclically, in shuffled order.
pub fn build_pairs<'a>(
    rng: &mut SeededRng,
    pool: &'a TrainPool<'a>,
    n_pairs: usize,
    class_mix: [usize; 3],
) -> Result<Vec<TrainPair<'a>>> {
    let pattern: Vec<TrialClass> = TrialClass::ALL
        .iter()
        .zip(class_mix)
        .flat_map(|(&c, k)| std::iter::repeat_n(c, k))
        .collect();
    if pattern.is_empty() {
        return Err(Error::Config("empty class mix".into()));
    }
    let mut classes: Vec<TrialClass> = pattern.iter().cycle().take(n_pairs).copied().collect();
    rng.shuffle(&mut classes);

    let with_bonafide: Vec<&SpeakerPool> = pool.speakers.iter().filter(|s| !s.bonafide.is_empty()).collect();
    let with_spoof: Vec<&SpeakerPool> = pool.speakers.iter().filter(|s| !s.spoof.is_empty()).collect();
    let needs = |c: TrialClass| classes.contains(&c);
    if needs(TrialClass::Target) && with_bonafide.is_empty() {
        return Err(Error::Sampling("target", "no speaker has bona fide utterances".into()));
    }
    if needs(TrialClass::NonTarget) && (pool.speakers.len() < 2 || with_bonafide.is_empty()) {
        return Err(Error::Sampling(
            "nontarget",
            format!("need at least 2 speakers, found {}", pool.speakers.len()),
        ));
    }
    if needs(TrialClass::Spoof) && with_spoof.is_empty() {
        return Err(Error::Sampling("spoof", "no spoofed utterances".into()));
    }

    let pairs = classes
        .into_iter()
        .map(|class| match class {
            TrialClass::Target => {
                let spk = *pick(rng, &with_bonafide);
                let (a, c) = *pick(rng, &spk.bonafide);
                (&spk.centroid, a, c, true)
            }
            TrialClass::NonTarget => {
                // Test speaker first, then a different claimed speaker.
                let k = rng.index(with_bonafide.len());
                let test = with_bonafide[k];
                let j = rng.index(pool.speakers.len() - 1);
                let mut claimed = &pool.speakers[j];
                if std::ptr::eq(claimed, test) {
                    claimed = &pool.speakers[pool.speakers.len() - 1];
                }
                let (a, c) = *pick(rng, &test.bonafide);
                (&claimed.centroid, a, c, false)
            }
            TrialClass::Spoof => {
                let spk = *pick(rng, &with_spoof);
                let (a, c) = *pick(rng, &spk.spoof);
                (&spk.centroid, a, c, false)
            }
        })
        .map(|(enroll_centroid, test_asv, test_cm, label)| TrainPair {
            enroll_centroid,
            test_asv,
            test_cm,
            label,
        })
        .collect();
    Ok(pairs)
}

/// Prior-weighted BCE over fused scores. An absent class contributes zero.
pub fn loss_prior_bce(scores: &[f64], labels: &[bool], prior: f64) -> f64 {
    let (mut pos_sum, mut n_pos, mut neg_sum, mut n_neg) = (0.0, 0usize, 0.0, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        let s = s.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        if y {
            pos_sum -= s.ln();
            n_pos += 1;
        } else {
            neg_sum -= (1.0 - s).ln();
            n_neg += 1;
        }
    }
    let mut loss = 0.0;
    if n_pos > 0 {
        loss += prior * pos_sum / n_pos as f64;
    }
    if n_neg > 0 {
        loss += (1.0 - prior) * neg_sum / n_neg as f64;
    }
    loss
}

struct Forward {
    f_asv: f64,
    logit: f64,
    label: bool,
}

fn forward(head: &CmHead, pair: &TrainPair<'_>, mapping: MappingKind) -> Result<Forward> {
    let s_asv = cosine_score(pair.enroll_centroid, pair.test_asv)?;
    Ok(Forward {
        f_asv: apply_mapping(mapping, s_asv),
        logit: cm_score(head, pair.test_cm)?,
        label: pair.label,
    })
}

/// Loss of `head` on a batch.
pub fn batch_loss(head: &CmHead, batch: &[TrainPair<'_>], prior: f64, mapping: MappingKind) -> Result<f64> {
    let mut scores = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for pair in batch {
        let fw = forward(head, pair, mapping)?;
        scores.push(map_sigmoid(fw.logit) * fw.f_asv);
        labels.push(fw.label);
    }
    Ok(loss_prior_bce(&scores, &labels, prior))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub d_weights: Vec<f64>,
    pub d_bias: f64,
    pub loss: f64,
}

/// `∂s_sasv/∂s_cm = f(s_asv) · σ'(s_cm)`: the per-sample weight the ASV side puts on the CM gradient.
pub fn chain_factor(f_asv: f64, s_cm: f64) -> f64 {
    let p = map_sigmoid(s_cm);
    f_asv * p * (1.0 - p)
}

/// Analytic gradient of the batch loss with respect to the head parameters.
///
/// Samples are reduced in batch order.
pub fn grad_head(
    head: &CmHead,
    batch: &[TrainPair<'_>],
    prior: f64,
    mapping: MappingKind,
) -> Result<HeadGradient> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let fws = batch
        .iter()
        .map(|pair| forward(head, pair, mapping))
        .collect::<Result<Vec<_>>>()?;
    let n_pos = fws.iter().filter(|f| f.label).count();
    let n_neg = fws.len() - n_pos;

    let mut d_weights = vec![0.0; head.dim()];
    let mut d_bias = 0.0;
    let mut scores = Vec::with_capacity(fws.len());
    let mut labels = Vec::with_capacity(fws.len());
    for (fw, pair) in fws.iter().zip(batch) {
        let s = map_sigmoid(fw.logit) * fw.f_asv;
        scores.push(s);
        labels.push(fw.label);
        if !(LOSS_EPS..=1.0 - LOSS_EPS).contains(&s) {
            continue; // clamped: flat loss
        }
        let d_loss_d_s = if fw.label {
            -prior / (n_pos as f64 * s)
        } else {
            (1.0 - prior) / (n_neg as f64 * (1.0 - s))
        };
        let coef = d_loss_d_s * chain_factor(fw.f_asv, fw.logit);
        for (d, x) in d_weights.iter_mut().zip(&pair.test_cm.values) {
            *d += coef * x;
        }
        d_bias += coef;
    }
    Ok(HeadGradient {
        d_weights,
        d_bias,
        loss: loss_prior_bce(&scores, &labels, prior),
    })
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update (β1 = 0.9, β2 = 0.999, ε = 1e-8), in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch {
            left: params.len(),
            right: grads.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g;
        state.v[k] = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Dev trials with ASV scores precomputed; only the CM side changes during training.
pub struct DevSet<'a> {
    trials: Vec<Trial>,
    s_asv: Vec<f64>,
    x_cm: Vec<&'a Embedding>,
}

impl<'a> DevSet<'a> {
    pub fn new(
        trials: &[Trial],
        enrollment: &EnrollmentMap,
        asv: &EmbeddingMap,
        cm: &'a EmbeddingMap,
        aggregation: EnrollAggregation,
    ) -> Result<Self> {
        let mut scorer = AsvScorer::new(enrollment, asv, aggregation);
        let mut s_asv = Vec::with_capacity(trials.len());
        let mut x_cm = Vec::with_capacity(trials.len());
        for (i, t) in trials.iter().enumerate() {
            if t.class.is_none() {
                return Err(Error::Unlabeled(i));
            }
            let unresolved = |what| Error::Unresolved {
                index: i,
                what,
                id: t.test_utt_id.clone(),
            };
            let test = asv.get(&t.test_utt_id).ok_or_else(|| unresolved("ASV test utterance"))?;
            s_asv.push(scorer.score(i, &t.speaker_id, test)?);
            x_cm.push(cm.get(&t.test_utt_id).ok_or_else(|| unresolved("CM test utterance"))?);
        }
        Ok(Self {
            trials: trials.to_vec(),
            s_asv,
            x_cm,
        })
    }

    pub fn records(&self, head: &CmHead, strategy: FusionStrategy) -> Result<Vec<ScoreRecord>> {
        self.trials
            .iter()
            .zip(&self.s_asv)
            .zip(&self.x_cm)
            .map(|((t, &s_asv), x)| {
                let s_cm = cm_score(head, x)?;
                Ok(ScoreRecord {
                    trial: t.clone(),
                    s_asv,
                    s_cm,
                    s_sasv: Some(fuse(strategy, s_asv, s_cm)),
                })
            })
            .collect()
    }

    pub fn evaluate(&self, head: &CmHead, strategy: FusionStrategy) -> Result<MetricSuite> {
        let suite = evaluate(&self.records(head, strategy)?)?;
        if suite.sasv_eer.is_none() {
            return Err(Error::Config(
                "dev trials need target and non-target or spoof trials".into(),
            ));
        }
        Ok(suite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub dev: MetricSuite,
    /// Mean batch loss over the epoch; `None` for the initial snapshot.
    pub loss: Option<f64>,
}

impl EpochRecord {
    pub fn dev_sasv_eer(&self) -> f64 {
        self.dev.sasv_eer.map(|r| r.eer).expect("checked by DevSet::evaluate")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best_head: CmHead,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Runs fine-tuning and returns the head with the lowest dev SASV-EER
/// (earliest epoch on ties, epoch 0 being `initial`).
pub fn train_finetune(
    config: &TrainConfig,
    pool: &TrainPool<'_>,
    dev: &DevSet<'_>,
    initial: &CmHead,
) -> Result<TrainOutcome> {
    config.validate()?;
    let strategy = FusionStrategy::ProductRule(config.mapping);
    let mut rng = SeededRng::new(config.seed);

    let mut head = initial.clone();
    let mut params: Vec<f64> = head.weights.iter().copied().chain([head.bias]).collect();
    let mut adam = AdamState::new(params.len());

    let mut history = vec![EpochRecord {
        epoch: 0,
        dev: dev.evaluate(&head, strategy)?,
        loss: None,
    }];
    let mut best = (history[0].dev_sasv_eer(), 0, head.clone());

    for epoch in 1..=config.epochs {
        let pairs = build_pairs(&mut rng, pool, config.pairs_per_epoch, config.class_mix)?;
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for batch in pairs.chunks(config.batch_size) {
            let g = grad_head(&head, batch, config.target_prior, config.mapping)?;
            let grads: Vec<f64> = g.d_weights.iter().copied().chain([g.d_bias]).collect();
            adam_step(&mut adam, &mut params, &grads, config.learning_rate)?;
            let (w, b) = params.split_at(head.dim());
            head.weights.copy_from_slice(w);
            head.bias = b[0];
            loss_sum += g.loss;
            n_batches += 1;
        }
        let record = EpochRecord {
            epoch,
            dev: dev.evaluate(&head, strategy)?,
            loss: Some(loss_sum / n_batches as f64),
        };
        if record.dev_sasv_eer() < best.0 {
            best = (record.dev_sasv_eer(), epoch, head.clone());
        }
        history.push(record);
    }

    Ok(TrainOutcome {
        best_head: best.2,
        best_epoch: best.1,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_world, perturb_head, WorldSpec};

    fn emb(v: Vec<f64>) -> Embedding {
        Embedding::new("x", v)
    }

    #[test]
    fn loss_examples() {
        let l = loss_prior_bce(&[0.5, 0.5], &[true, false], 0.1);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let l = loss_prior_bce(&[1.0 - 1e-15, 1e-15], &[true, false], 0.1);
        assert!(l < 1e-11);
        // ρ = 0.5 is half the sum of the per-class mean BCEs.
        let s = [0.9, 0.6, 0.2, 0.3, 0.7];
        let y = [true, true, false, false, false];
        let pos = -(0.9f64.ln() + 0.6f64.ln()) / 2.0;
        let neg = -(0.8f64.ln() + 0.7f64.ln() + 0.3f64.ln()) / 3.0;
        assert!((loss_prior_bce(&s, &y, 0.5) - 0.5 * (pos + neg)).abs() < 1e-15);
        assert_eq!(loss_prior_bce(&[0.3], &[false], 0.1), 0.9 * -(0.7f64.ln()));
    }

    #[test]
    fn zero_asv_factor_gives_zero_gradient() {
        let enroll = emb(vec![1.0, 0.0]);
        let test = emb(vec![-1.0, 0.0]);
        let cm = emb(vec![0.5, -0.3, 1.0]);
        let batch = [
            TrainPair { enroll_centroid: &enroll, test_asv: &test, test_cm: &cm, label: true },
            TrainPair { enroll_centroid: &enroll, test_asv: &test, test_cm: &cm, label: false },
        ];
        let head = CmHead::new(vec![0.2, 0.1, -0.4], 0.3).unwrap();
        let g = grad_head(&head, &batch, 0.1, MappingKind::Linear).unwrap();
        // f = 0 puts the positive at the clamp and gives the negative a zero chain factor.
        assert!(g.d_weights.iter().all(|&d| d == 0.0));
        assert_eq!(g.d_bias, 0.0);
    }

    #[test]
    fn larger_asv_score_weighs_cm_gradient_more() {
        let enroll = emb(vec![1.0, 0.0]);
        let near = emb(vec![0.9, 0.1]);
        let far = emb(vec![0.1, 0.9]);
        let cm = emb(vec![1.0]);
        let head = CmHead::new(vec![0.5], -0.2).unwrap();
        for mapping in [MappingKind::Linear, MappingKind::Sigmoid] {
            let g = |t: &Embedding| {
                let batch = [TrainPair { enroll_centroid: &enroll, test_asv: t, test_cm: &cm, label: false }];
                grad_head(&head, &batch, 0.1, mapping).unwrap().d_bias.abs()
            };
            assert!(g(&near) > g(&far));
            let f_near = apply_mapping(mapping, cosine_score(&enroll, &near).unwrap());
            let f_far = apply_mapping(mapping, cosine_score(&enroll, &far).unwrap());
            assert!(chain_factor(f_near, 0.3) > chain_factor(f_far, 0.3));
        }
        assert!(grad_head(&head, &[], 0.1, MappingKind::Linear).is_err());
    }

    #[test]
    fn chain_factor_matches_finite_differences() {
        let h = 1e-6;
        for &(f, z) in &[(0.3, 0.5), (0.9, -2.0), (0.55, 4.0)] {
            let fd = (f * map_sigmoid(z + h) - f * map_sigmoid(z - h)) / (2.0 * h);
            assert!((fd - chain_factor(f, z)).abs() / chain_factor(f, z) < 1e-7);
        }
    }

    #[test]
    fn adam_examples() {
        let mut st = AdamState::new(2);
        let mut p = vec![1.0, -2.0];
        adam_step(&mut st, &mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        let mut st = AdamState::new(1);
        let mut p = vec![0.0];
        let g = 0.37;
        adam_step(&mut st, &mut p, &[g], 1e-3).unwrap();
        let expected = -1e-3 * g / (g + ADAM_EPS);
        assert!((p[0] - expected).abs() < 1e-18);
        let alt = -1e-3 * g / (g.abs() + ADAM_EPS * (1.0 - ADAM_BETA2).sqrt() / (1.0 - ADAM_BETA1));
        assert!((p[0] - alt).abs() < 1e-10);

        let mut st = AdamState::new(1);
        let mut p = vec![0.0];
        let mut prev = 0.0;
        for _ in 0..500 {
            adam_step(&mut st, &mut p, &[5.0], 0.01).unwrap();
            let step = prev - p[0];
            assert!(step > 0.0 && step <= 0.01 * (1.0 + 1e-9));
            prev = p[0];
        }
        assert!(adam_step(&mut st, &mut p, &[1.0, 2.0], 0.1).is_err());
    }

    fn tiny_world() -> crate::synth::World {
        gen_world(&WorldSpec {
            seed: 17,
            n_speakers: 4,
            utts_per_speaker: 6,
            spoofs_per_speaker: 6,
            asv_dim: 16,
            cm_dim: 8,
            ..WorldSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn pair_sampling_contract() {
        let w = tiny_world();
        let pool = TrainPool::from_trials(&w.train, &w.enrollment, &w.asv, &w.cm).unwrap();
        assert_eq!(pool.n_speakers(), 4);
        let pairs = build_pairs(&mut SeededRng::new(1), &pool, 3, [1, 1, 1]).unwrap();
        let mut labels: Vec<bool> = pairs.iter().map(|p| p.label).collect();
        labels.sort();
        assert_eq!(labels, [false, false, true]);

        let ids = |seed| {
            build_pairs(&mut SeededRng::new(seed), &pool, 30, [1, 1, 1])
                .unwrap()
                .iter()
                .map(|p| (p.enroll_centroid.id.clone(), p.test_asv.id.clone(), p.label))
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(9), ids(9));

        // Non-target pairs never claim the test utterance's own speaker.
        for p in build_pairs(&mut SeededRng::new(2), &pool, 60, [0, 1, 0]).unwrap() {
            let spk = &p.test_asv.id[..12];
            assert!(!p.enroll_centroid.id.contains(spk), "{} {}", p.enroll_centroid.id, p.test_asv.id);
        }
    }

    #[test]
    fn one_speaker_cannot_make_nontargets() {
        let w = tiny_world();
        let spk = w.enrollment.keys().find(|k| k.starts_with("train")).unwrap().clone();
        let trials: Vec<Trial> = w.train.iter().filter(|t| t.speaker_id == spk).cloned().collect();
        let pool = TrainPool::from_trials(&trials, &w.enrollment, &w.asv, &w.cm).unwrap();
        assert!(matches!(
            build_pairs(&mut SeededRng::new(1), &pool, 3, [1, 1, 1]),
            Err(Error::Sampling("nontarget", _))
        ));
        assert!(build_pairs(&mut SeededRng::new(1), &pool, 3, [1, 0, 1]).is_ok());
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let w = tiny_world();
        let pool = TrainPool::from_trials(&w.train, &w.enrollment, &w.asv, &w.cm).unwrap();
        let batch = build_pairs(&mut SeededRng::new(4), &pool, 48, [1, 1, 1]).unwrap();
        let mut head = perturb_head(&w.true_head, 0.5, 3);
        let mut params: Vec<f64> = head.weights.iter().copied().chain([head.bias]).collect();
        let mut adam = AdamState::new(params.len());
        let start = batch_loss(&head, &batch, 0.1, MappingKind::Sigmoid).unwrap();
        for _ in 0..50 {
            let g = grad_head(&head, &batch, 0.1, MappingKind::Sigmoid).unwrap();
            let grads: Vec<f64> = g.d_weights.iter().copied().chain([g.d_bias]).collect();
            adam_step(&mut adam, &mut params, &grads, 1e-4).unwrap();
            let (wts, b) = params.split_at(head.dim());
            head = CmHead::new(wts.to_vec(), b[0]).unwrap();
        }
        assert!(batch_loss(&head, &batch, 0.1, MappingKind::Sigmoid).unwrap() < start);
    }

    #[test]
    fn finetune_contracts() {
        let w = tiny_world();
        let pool = TrainPool::from_trials(&w.train, &w.enrollment, &w.asv, &w.cm).unwrap();
        let dev = DevSet::new(&w.dev, &w.enrollment, &w.asv, &w.cm, EnrollAggregation::EmbeddingMean).unwrap();
        let init = perturb_head(&w.true_head, 0.8, 21);

        let none = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train_finetune(&none, &pool, &dev, &init).unwrap();
        assert_eq!(out.best_head, init);
        assert_eq!(out.history.len(), 1);

        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 32,
            pairs_per_epoch: 96,
            learning_rate: 0.01,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train_finetune(&cfg, &pool, &dev, &init).unwrap();
        let b = train_finetune(&cfg, &pool, &dev, &init).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 9);
        let min = a.history.iter().map(|r| r.dev_sasv_eer()).fold(f64::INFINITY, f64::min);
        assert_eq!(a.history[a.best_epoch].dev_sasv_eer(), min);
        assert!(min <= a.history[0].dev_sasv_eer());
        let first_min = a.history.iter().position(|r| r.dev_sasv_eer() == min).unwrap();
        assert_eq!(a.best_epoch, first_min);

        let calibrated = TrainConfig {
            mapping: MappingKind::Calibrated(crate::mapping::CalibratorParams { a: 1.0, b: 0.0 }),
            ..cfg
        };
        assert!(train_finetune(&calibrated, &pool, &dev, &init).is_err());
    }
}

//! Synthetic embedding worlds with controllable ASV and CM separability.
//!
//! Each split (train, dev, eval) has its own speakers. A speaker is a random
//! unit direction in ASV space; bona fide utterances scatter around it and
//! spoofs interpolate toward it from a random source voice. CM embeddings
//! come from a bona fide and a spoof Gaussian cluster placed so that the
//! generated true head sees a logit gap of `cm_margin` between the cluster
//! means. The eval spoof cluster is moved toward the bona fide one.

pub mod oracle;
pub mod rng;

use crate::domain::{Embedding, EmbeddingMap, EnrollmentMap, Trial, TrialClass, ASV_DIM, CM_DIM};
use crate::error::{Error, Result};
use crate::scoring::CmHead;

pub use oracle::{oracle_calibrator, oracle_eer};
pub use rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    /// Speakers per split.
    pub n_speakers: usize,
    /// Bona fide test utterances per speaker.
    pub utts_per_speaker: usize,
    pub spoofs_per_speaker: usize,
    pub enroll_per_speaker: usize,
    pub asv_dim: usize,
    pub cm_dim: usize,
    /// Norm of the within-speaker ASV noise relative to the unit speaker direction.
    pub asv_noise: f64,
    /// Logit gap between the bona fide and spoof cluster means under the true head.
    pub cm_margin: f64,
    /// Per-coordinate standard deviation of the CM clusters.
    pub cm_spread: f64,
    /// Weight of the target speaker's direction in spoof ASV embeddings.
    pub spoof_asv_alpha: f64,
    /// Fraction of the cluster gap the eval spoof mean moves toward bona fide.
    pub eval_spoof_shift: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 2022,
            n_speakers: 10,
            utts_per_speaker: 10,
            spoofs_per_speaker: 10,
            enroll_per_speaker: 3,
            asv_dim: ASV_DIM,
            cm_dim: CM_DIM,
            asv_noise: 1.0,
            cm_margin: 8.0,
            cm_spread: 1.0,
            spoof_asv_alpha: 0.9,
            eval_spoof_shift: 0.3,
        }
    }
}

impl WorldSpec {
    /// A larger world where the CM logit scale dwarfs the ASV cosine scale
    /// (mean |s_cm| / mean |s_asv| near 50) and the clusters overlap enough
    /// for fusion choices to matter.
    pub fn reference() -> Self {
        Self {
            seed: 2022,
            n_speakers: 20,
            asv_noise: 2.0,
            cm_margin: 24.0,
            cm_spread: 6.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_speakers < 2 {
            return bad("n_speakers must be at least 2");
        }
        if self.utts_per_speaker == 0 || self.enroll_per_speaker == 0 {
            return bad("utts_per_speaker and enroll_per_speaker must be positive");
        }
        if self.asv_dim == 0 || self.cm_dim == 0 {
            return bad("dimensions must be positive");
        }
        let positive = [self.asv_noise, self.cm_margin, self.cm_spread];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("asv_noise, cm_margin and cm_spread must be positive");
        }
        if !(0.0..=1.0).contains(&self.spoof_asv_alpha) || !(0.0..=1.0).contains(&self.eval_spoof_shift) {
            return bad("spoof_asv_alpha and eval_spoof_shift must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub asv: EmbeddingMap,
    pub cm: EmbeddingMap,
    /// Enrollment for every speaker of every split.
    pub enrollment: EnrollmentMap,
    pub train: Vec<Trial>,
    pub dev: Vec<Trial>,
    pub eval: Vec<Trial>,
    pub true_head: CmHead,
}

impl World {
    pub fn trials(&self, split: Split) -> &[Trial] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Eval => &self.eval,
        }
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

struct CmGeometry {
    direction: Vec<f64>,
    center: Vec<f64>,
}

impl CmGeometry {
    /// A CM embedding whose true-head logit has mean `logit_mean`.
    fn sample(&self, rng: &mut SeededRng, logit_mean: f64, spread: f64) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.direction)
            .map(|(c, u)| c + logit_mean * u + spread * rng.gaussian())
            .collect()
    }
}

pub fn gen_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);

    let geometry = CmGeometry {
        direction: rng::unit_vector(&mut rng, spec.cm_dim),
        center: rng.gaussian_vec(spec.cm_dim, 1.0),
    };
    let center_logit: f64 = geometry
        .center
        .iter()
        .zip(&geometry.direction)
        .map(|(c, u)| c * u)
        .sum();
    let true_head = CmHead::new(geometry.direction.clone(), -center_logit)?;

    let noise_std = spec.asv_noise / (spec.asv_dim as f64).sqrt();
    let half = spec.cm_margin / 2.0;

    let mut world = World {
        spec: spec.clone(),
        asv: EmbeddingMap::new(),
        cm: EmbeddingMap::new(),
        enrollment: EnrollmentMap::new(),
        train: Vec::new(),
        dev: Vec::new(),
        eval: Vec::new(),
        true_head,
    };

    for split in Split::ALL {
        let spoof_mean = match split {
            Split::Eval => -half + spec.eval_spoof_shift * spec.cm_margin,
            _ => -half,
        };
        let name = split.name();
        let speakers: Vec<String> = (0..spec.n_speakers).map(|i| format!("{name}_spk{i:03}")).collect();
        let directions: Vec<Vec<f64>> = speakers
            .iter()
            .map(|_| rng::unit_vector(&mut rng, spec.asv_dim))
            .collect();

        let bonafide_asv = |rng: &mut SeededRng, dir: &[f64]| {
            normalized(dir.iter().map(|d| d + noise_std * rng.gaussian()).collect())
        };

        let mut trials = Vec::new();
        let mut bonafide: Vec<Vec<String>> = Vec::new();
        for (s, spk) in speakers.iter().enumerate() {
            let dir = &directions[s];
            let mut enroll = Vec::with_capacity(spec.enroll_per_speaker);
            for j in 0..spec.enroll_per_speaker {
                let id = format!("{spk}_enr{j:03}");
                let asv = bonafide_asv(&mut rng, dir);
                let cm = geometry.sample(&mut rng, half, spec.cm_spread);
                world.asv.insert(id.clone(), Embedding::new(id.clone(), asv));
                world.cm.insert(id.clone(), Embedding::new(id.clone(), cm));
                enroll.push(id);
            }
            world.enrollment.insert(spk.clone(), enroll);

            let mut utts = Vec::with_capacity(spec.utts_per_speaker);
            for j in 0..spec.utts_per_speaker {
                let id = format!("{spk}_bf{j:03}");
                let asv = bonafide_asv(&mut rng, dir);
                let cm = geometry.sample(&mut rng, half, spec.cm_spread);
                world.asv.insert(id.clone(), Embedding::new(id.clone(), asv));
                world.cm.insert(id.clone(), Embedding::new(id.clone(), cm));
                trials.push(Trial::new(spk.clone(), id.clone(), Some(TrialClass::Target)));
                utts.push(id);
            }
            bonafide.push(utts);

            for j in 0..spec.spoofs_per_speaker {
                let id = format!("{spk}_sp{j:03}");
                let source = rng::unit_vector(&mut rng, spec.asv_dim);
                let alpha = spec.spoof_asv_alpha;
                let asv = normalized(
                    dir.iter()
                        .zip(&source)
                        .map(|(d, r)| alpha * d + (1.0 - alpha) * r + noise_std * rng.gaussian())
                        .collect(),
                );
                let cm = geometry.sample(&mut rng, spoof_mean, spec.cm_spread);
                world.asv.insert(id.clone(), Embedding::new(id.clone(), asv));
                world.cm.insert(id.clone(), Embedding::new(id.clone(), cm));
                trials.push(Trial::new(spk.clone(), id, Some(TrialClass::Spoof)));
            }
        }

        // One non-target trial per bona fide utterance, claiming another speaker.
        for (s, utts) in bonafide.iter().enumerate() {
            for utt in utts {
                let other = (s + 1 + rng.index(spec.n_speakers - 1)) % spec.n_speakers;
                trials.push(Trial::new(
                    speakers[other].clone(),
                    utt.clone(),
                    Some(TrialClass::NonTarget),
                ));
            }
        }

        match split {
            Split::Train => world.train = trials,
            Split::Dev => world.dev = trials,
            Split::Eval => world.eval = trials,
        }
    }
    Ok(world)
}

/// The true head plus isotropic Gaussian noise on weights and bias.
pub fn perturb_head(head: &CmHead, std: f64, seed: u64) -> CmHead {
    let mut rng = SeededRng::new(seed);
    CmHead {
        weights: head.weights.iter().map(|w| w + std * rng.gaussian()).collect(),
        bias: head.bias + std * rng.gaussian(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{cm_score, cosine_score};

    fn small() -> WorldSpec {
        WorldSpec {
            seed: 5,
            n_speakers: 4,
            utts_per_speaker: 10,
            spoofs_per_speaker: 10,
            ..WorldSpec::default()
        }
    }

    #[test]
    fn construction_contract() {
        let w = gen_world(&small()).unwrap();
        for split in Split::ALL {
            let trials = w.trials(split);
            let count = |c| trials.iter().filter(|t| t.class == Some(c)).count();
            assert_eq!(count(TrialClass::Target), 40);
            assert_eq!(count(TrialClass::Spoof), 40);
            assert_eq!(count(TrialClass::NonTarget), 40);
        }
        for e in w.asv.values() {
            assert_eq!(e.dim(), 192);
            assert!((e.norm() - 1.0).abs() < 1e-9);
        }
        assert_eq!(w.asv.len(), w.cm.len());
        assert!(w.cm.values().all(|e| e.dim() == 160));
        assert_eq!(w.enrollment.len(), 12);
    }

    #[test]
    fn determinism() {
        assert_eq!(gen_world(&small()).unwrap(), gen_world(&small()).unwrap());
        let other = WorldSpec { seed: 6, ..small() };
        assert_ne!(gen_world(&small()).unwrap().asv, gen_world(&other).unwrap().asv);
    }

    #[test]
    fn spec_violations() {
        assert!(gen_world(&WorldSpec { n_speakers: 1, ..small() }).is_err());
        assert!(gen_world(&WorldSpec { asv_noise: 0.0, ..small() }).is_err());
        assert!(gen_world(&WorldSpec { spoof_asv_alpha: 1.5, ..small() }).is_err());
    }

    #[test]
    fn cm_separates_while_spoofs_fool_asv() {
        let w = gen_world(&small()).unwrap();
        let trials = w.trials(Split::Dev);
        let cm_of = |c: TrialClass| -> Vec<f64> {
            trials
                .iter()
                .filter(|t| t.class == Some(c))
                .map(|t| cm_score(&w.true_head, &w.cm[&t.test_utt_id]).unwrap())
                .collect()
        };
        let bona: Vec<f64> = [cm_of(TrialClass::Target), cm_of(TrialClass::NonTarget)].concat();
        let spoof = cm_of(TrialClass::Spoof);
        let min_bona = bona.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_spoof = spoof.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min_bona > max_spoof, "{min_bona} vs {max_spoof}");

        let asv_of = |c: TrialClass| -> Vec<f64> {
            trials
                .iter()
                .filter(|t| t.class == Some(c))
                .map(|t| {
                    let enr = &w.enrollment[&t.speaker_id][0];
                    cosine_score(&w.asv[enr], &w.asv[&t.test_utt_id]).unwrap()
                })
                .collect()
        };
        let target = asv_of(TrialClass::Target);
        let spoofs = asv_of(TrialClass::Spoof);
        let t_max = target.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s_min = spoofs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(s_min < t_max, "spoof ASV scores should overlap targets");
    }

    #[test]
    fn cm_scores_ignore_claimed_speaker_and_asv_has_speaker_gap() {
        let w = gen_world(&small()).unwrap();
        // CM score depends on the utterance only: the non-target trial reuses a
        // target utterance and must get the identical logit.
        for t in w.dev.iter().filter(|t| t.class == Some(TrialClass::NonTarget)) {
            let s = cm_score(&w.true_head, &w.cm[&t.test_utt_id]).unwrap();
            assert_eq!(s, cm_score(&w.true_head, &w.cm[&t.test_utt_id]).unwrap());
        }

        let utts: Vec<(&str, &Embedding)> = w
            .asv
            .iter()
            .filter(|(k, _)| k.starts_with("eval_") && k.contains("_bf"))
            .map(|(k, e)| (&k[..12], e))
            .collect();
        let (mut same, mut cross) = (Vec::new(), Vec::new());
        for (i, (si, ei)) in utts.iter().enumerate() {
            for (sj, ej) in &utts[i + 1..] {
                let c = cosine_score(ei, ej).unwrap();
                if si == sj {
                    same.push(c)
                } else {
                    cross.push(c)
                }
            }
        }
        assert!(same.len() >= 100 && cross.len() >= 100);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&same) - mean(&cross) > 0.0);
    }

    #[test]
    fn perturbation_is_seeded() {
        let h = CmHead::zeros(4);
        assert_eq!(perturb_head(&h, 0.5, 1), perturb_head(&h, 0.5, 1));
        assert_ne!(perturb_head(&h, 0.5, 1), h);
        assert_eq!(perturb_head(&h, 0.0, 1), h);
    }
}

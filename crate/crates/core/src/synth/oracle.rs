//! Brute-force reference implementations used to check the fast paths.
//!
//! These deliberately share no code with `metrics` or `mapping`.

use crate::error::{Error, Result};
use crate::mapping::CalibratorParams;
use crate::metrics::EerResult;

const GRID: usize = 201;

/// Exhaustive-threshold EER.
///
/// Rates are counted directly at every observed score, every midpoint
/// between adjacent distinct scores, and at `±∞`. Candidates with identical
/// (FAR, FRR) are collapsed onto the largest of them, which leaves the
/// observed scores and `+∞` as the sweep. The crossing is then located and
/// interpolated exactly as in [`crate::metrics`].
pub fn oracle_eer(pos: &[f64], neg: &[f64]) -> Result<EerResult> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty("oracle_eer input"));
    }
    let mut observed: Vec<f64> = pos.iter().chain(neg).copied().collect();
    observed.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    observed.dedup();

    let mut candidates = vec![f64::NEG_INFINITY];
    for (k, &u) in observed.iter().enumerate() {
        if k > 0 {
            candidates.push(observed[k - 1] + (u - observed[k - 1]) / 2.0);
        }
        candidates.push(u);
    }
    candidates.push(f64::INFINITY);

    let rates: Vec<(f64, f64, f64)> = candidates
        .iter()
        .map(|&t| {
            let frr = pos.iter().filter(|&&s| s < t).count() as f64 / pos.len() as f64;
            let far = neg.iter().filter(|&&s| s >= t).count() as f64 / neg.len() as f64;
            (t, far, frr)
        })
        .collect();

    let mut sweep: Vec<(f64, f64, f64)> = Vec::new();
    for r in rates {
        match sweep.last_mut() {
            Some(last) if last.1 == r.1 && last.2 == r.2 => *last = r,
            _ => sweep.push(r),
        }
    }

    let k = sweep
        .iter()
        .position(|&(_, far, frr)| far - frr <= 0.0)
        .expect("+inf candidate has FAR - FRR = -1");
    let (t1, far1, frr1) = sweep[k];
    let d1 = far1 - frr1;
    if d1 == 0.0 || k == 0 {
        return Ok(EerResult {
            eer: far1,
            threshold: t1,
        });
    }
    let (t0, far0, frr0) = sweep[k - 1];
    let d0 = far0 - frr0;
    let w = d0 / (d0 - d1);
    Ok(EerResult {
        eer: far0 + w * (far1 - far0),
        threshold: if t1.is_finite() { t0 + w * (t1 - t0) } else { t0 },
    })
}

/// Regularized mean negative log-likelihood, written out directly.
pub fn oracle_objective(a: f64, b: f64, scores: &[f64], labels: &[bool], l2: f64) -> f64 {
    let mut total = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        let z = a * s + b;
        // -log σ(z) for targets, -log(1 - σ(z)) = -log σ(-z) otherwise.
        let m = if y { -z } else { z };
        total += if m > 0.0 {
            m + (1.0 + (-m).exp()).ln()
        } else {
            (1.0 + m.exp()).ln()
        };
    }
    total / scores.len() as f64 + l2 * (a * a + b * b) / 2.0
}

fn grid_search(
    a_range: (f64, f64),
    b_range: (f64, f64),
    scores: &[f64],
    labels: &[bool],
    l2: f64,
) -> (f64, f64, f64) {
    let step = |(lo, hi): (f64, f64), k: usize| lo + (hi - lo) * k as f64 / (GRID - 1) as f64;
    let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
    for i in 0..GRID {
        let a = step(a_range, i);
        for j in 0..GRID {
            let b = step(b_range, j);
            let v = oracle_objective(a, b, scores, labels, l2);
            if v < best.2 {
                best = (a, b, v);
            }
        }
    }
    best
}

/// Grid-search calibrator: a 201×201 grid over a ∈ [0, 50], b ∈ [-25, 25],
/// then two 201×201 refinements spanning one cell either side of the best point.
pub fn oracle_calibrator(scores: &[f64], labels: &[bool], l2: f64) -> Result<CalibratorParams> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if !(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y)) {
        return Err(Error::SingleClass);
    }
    let mut a_range = (0.0, 50.0);
    let mut b_range = (-25.0, 25.0);
    let mut best = grid_search(a_range, b_range, scores, labels, l2);
    for _ in 0..2 {
        let da = (a_range.1 - a_range.0) / (GRID - 1) as f64;
        let db = (b_range.1 - b_range.0) / (GRID - 1) as f64;
        a_range = ((best.0 - da).max(0.0), best.0 + da);
        b_range = (best.1 - db, best.1 + db);
        let refined = grid_search(a_range, b_range, scores, labels, l2);
        if refined.2 <= best.2 {
            best = refined;
        }
    }
    Ok(CalibratorParams {
        a: best.0,
        b: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_eer_examples() {
        let r = oracle_eer(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]).unwrap();
        assert!((r.eer - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(oracle_eer(&[1.0], &[0.0]).unwrap().eer, 0.0);
        assert_eq!(oracle_eer(&[0.0], &[1.0]).unwrap().eer, 1.0);
        assert!(oracle_eer(&[], &[1.0]).is_err());
    }

    #[test]
    fn oracle_calibrator_examples() {
        let scores = [0.8, 0.8, 0.8, -0.8, -0.8, -0.8];
        let labels = [true, true, true, false, false, false];
        let p = oracle_calibrator(&scores, &labels, 0.01).unwrap();
        // Final grid spacing is 50 / 200^3.
        assert!(p.b.abs() <= 50.0 / 200f64.powi(3) + 1e-12, "{}", p.b);

        let p = oracle_calibrator(&[0.3; 4], &[true, false, true, false], 0.01).unwrap();
        assert_eq!(p.a, 0.0);
        assert!(oracle_calibrator(&[0.1], &[true], 0.01).is_err());
    }
}

//! Score-to-probability mappings and the logistic ASV score calibrator.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Default L2 penalty for calibrator fitting.
pub const DEFAULT_L2: f64 = 1e-4;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 500;

/// Scale and offset of the calibrator `σ(a·s + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratorParams {
    pub a: f64,
    pub b: f64,
}

impl CalibratorParams {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let (mut a, mut b) = (None, None);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::parse(path, i + 1, "expected '<key> <value>'"))?;
            let val: f64 = val
                .trim()
                .parse()
                .map_err(|e| Error::parse(path, i + 1, format!("bad value: {e}")))?;
            if !val.is_finite() {
                return Err(Error::parse(path, i + 1, "non-finite calibrator parameter"));
            }
            match key {
                "a" => a = Some(val),
                "b" => b = Some(val),
                other => return Err(Error::parse(path, i + 1, format!("unknown key '{other}'"))),
            }
        }
        match (a, b) {
            (Some(a), Some(b)) => Ok(Self { a, b }),
            _ => Err(Error::parse(path, 0, "calibrator needs both 'a' and 'b'")),
        }
    }

    pub fn to_text(&self) -> String {
        format!("a {:?}\nb {:?}\n", self.a, self.b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// The ASV score mapping `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MappingKind {
    Linear,
    Sigmoid,
    Calibrated(CalibratorParams),
}

/// `(s + 1) / 2`, taking cosine scores to [0, 1].
pub fn map_linear(s: f64) -> f64 {
    (s + 1.0) / 2.0
}

/// Logistic sigmoid, evaluated on the branch that cannot overflow.
pub fn map_sigmoid(s: f64) -> f64 {
    if s < 0.0 {
        let e = s.exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + (-s).exp())
    }
}

pub fn apply_mapping(kind: MappingKind, s: f64) -> f64 {
    match kind {
        MappingKind::Linear => map_linear(s),
        MappingKind::Sigmoid => map_sigmoid(s),
        MappingKind::Calibrated(p) => map_sigmoid(p.a * s + p.b),
    }
}

/// Derivative of [`apply_mapping`] with respect to `s`.
pub fn mapping_derivative(kind: MappingKind, s: f64) -> f64 {
    match kind {
        MappingKind::Linear => 0.5,
        MappingKind::Sigmoid => {
            let p = map_sigmoid(s);
            p * (1.0 - p)
        }
        MappingKind::Calibrated(c) => {
            let p = map_sigmoid(c.a * s + c.b);
            c.a * p * (1.0 - p)
        }
    }
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean negative log-likelihood of `σ(a·s+b)` plus `l2·(a²+b²)/2`.
pub fn calibration_objective(p: CalibratorParams, samples: &[(f64, bool)], l2: f64) -> f64 {
    let nll: f64 = samples
        .iter()
        .map(|&(s, y)| {
            let z = p.a * s + p.b;
            if y {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum::<f64>()
        / samples.len() as f64;
    nll + 0.5 * l2 * (p.a * p.a + p.b * p.b)
}

fn gradient_hessian(a: f64, b: f64, samples: &[(f64, bool)], l2: f64) -> ([f64; 2], [f64; 3]) {
    let n = samples.len() as f64;
    let (mut ga, mut gb) = (0.0, 0.0);
    let (mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0);
    for &(s, y) in samples {
        let p = map_sigmoid(a * s + b);
        let r = p - if y { 1.0 } else { 0.0 };
        ga += r * s;
        gb += r;
        let w = p * (1.0 - p);
        haa += w * s * s;
        hab += w * s;
        hbb += w;
    }
    (
        [ga / n + l2 * a, gb / n + l2 * b],
        [haa / n + l2, hab / n, hbb / n + l2],
    )
}

/// Fits the logistic calibrator on labeled ASV scores (`true` = target).
///
/// Damped Newton with Armijo backtracking, falling back to steepest descent
/// when the Newton direction is unusable. Deterministic.
pub fn fit_calibrator(samples: &[(f64, bool)], l2: f64) -> Result<CalibratorParams> {
    fit_calibrator_capped(samples, l2, MAX_ITER)
}

pub(crate) fn fit_calibrator_capped(
    samples: &[(f64, bool)],
    l2: f64,
    max_iter: usize,
) -> Result<CalibratorParams> {
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::Config(format!("l2 must be nonnegative, got {l2}")));
    }
    if let Some(i) = samples.iter().position(|(s, _)| !s.is_finite()) {
        return Err(Error::NonFiniteScore(i));
    }
    let has_pos = samples.iter().any(|&(_, y)| y);
    let has_neg = samples.iter().any(|&(_, y)| !y);
    if !(has_pos && has_neg) {
        return Err(Error::SingleClass);
    }

    let mut p = CalibratorParams { a: 0.0, b: 0.0 };
    let mut obj = calibration_objective(p, samples, l2);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..max_iter {
        let (g, h) = gradient_hessian(p.a, p.b, samples, l2);
        grad_norm = g[0].hypot(g[1]);
        if grad_norm < GRAD_TOL {
            return Ok(p);
        }
        let det = h[0] * h[2] - h[1] * h[1];
        let newton = (det > 1e-300).then(|| {
            [
                -(h[2] * g[0] - h[1] * g[1]) / det,
                -(-h[1] * g[0] + h[0] * g[1]) / det,
            ]
        });
        let steepest = [-g[0], -g[1]];
        let mut moved = false;
        for (k, dir) in newton.iter().copied().chain(std::iter::once(steepest)).enumerate() {
            let is_newton = k == 0 && newton.is_some();
            let slope = dir[0] * g[0] + dir[1] * g[1];
            if slope.is_nan() || slope >= 0.0 || !dir.iter().all(|d| d.is_finite()) {
                continue;
            }
            let mut t = 1.0;
            while t > 1e-20 {
                let cand = CalibratorParams {
                    a: p.a + t * dir[0],
                    b: p.b + t * dir[1],
                };
                let c_obj = calibration_objective(cand, samples, l2);
                // A full Newton step near the optimum may be flat to rounding.
                let flat = is_newton && t == 1.0 && c_obj <= obj + 4.0 * f64::EPSILON * obj.abs();
                if c_obj <= obj + 1e-4 * t * slope || flat {
                    p = cand;
                    obj = c_obj;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        grad_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_examples() {
        assert_eq!(map_linear(-1.0), 0.0);
        assert_eq!(map_linear(1.0), 1.0);
        assert_eq!(map_linear(0.0), 0.5);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(map_sigmoid(0.0), 0.5);
        assert!((map_sigmoid(2.0) - 0.8807970779778823).abs() < 1e-16);
        for s in [0.3, 2.0, 17.5, 700.0, 1e6] {
            assert!((map_sigmoid(s) + map_sigmoid(-s) - 1.0).abs() < 1e-15);
        }
        assert!(map_sigmoid(-1e6) >= 0.0 && map_sigmoid(1e6) <= 1.0);
        assert!(map_sigmoid(-800.0).is_finite());
    }

    #[test]
    fn apply_examples() {
        assert!((apply_mapping(MappingKind::Linear, 0.2) - 0.6).abs() < 1e-15);
        let zero = MappingKind::Calibrated(CalibratorParams { a: 0.0, b: 0.0 });
        assert_eq!(apply_mapping(zero, 123.0), 0.5);
        let c = MappingKind::Calibrated(CalibratorParams { a: 2.0, b: -1.0 });
        assert_eq!(apply_mapping(c, 0.5), 0.5);
    }

    #[test]
    fn symmetric_data_gives_zero_offset() {
        let mut samples = vec![(0.8, true); 10];
        samples.extend(vec![(-0.8, false); 10]);
        let p = fit_calibrator(&samples, 0.01).unwrap();
        assert!(p.b.abs() < 1e-6, "b = {}", p.b);
        assert!(p.a > 0.0);
    }

    #[test]
    fn constant_scores_are_uninformative() {
        let mut samples = vec![(0.3, true); 7];
        samples.extend(vec![(0.3, false); 7]);
        let p = fit_calibrator(&samples, 0.01).unwrap();
        assert!(p.a.abs() < 1e-6);
        assert!((map_sigmoid(p.b) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_calibrator(&[(0.1, true), (0.2, true)], 0.01),
            Err(Error::SingleClass)
        ));
        assert!(matches!(fit_calibrator(&[], 0.01), Err(Error::SingleClass)));
        assert!(matches!(
            fit_calibrator_capped(&[(0.5, true), (-0.5, false), (0.1, false)], 0.0, 2),
            Err(Error::NoConvergence { iterations: 2, .. })
        ));
        assert!(fit_calibrator(&[(0.1, true)], -1.0).is_err());
    }

    #[test]
    fn params_file_round_trip() {
        let p = CalibratorParams { a: 12.25, b: -1.0 / 3.0 };
        assert_eq!(CalibratorParams::parse(Path::new("c"), &p.to_text()).unwrap(), p);
        assert!(CalibratorParams::parse(Path::new("c"), "a 1\n").is_err());
    }

    proptest! {
        #[test]
        fn mappings_are_strictly_monotone(x in -1.0f64..1.0, dx in 1e-4f64..1.0, a in 0.01f64..10.0, b in -3.0f64..3.0) {
            let y = (x + dx).min(1.0);
            prop_assume!(y > x);
            for kind in [MappingKind::Linear, MappingKind::Sigmoid, MappingKind::Calibrated(CalibratorParams { a, b })] {
                prop_assert!(apply_mapping(kind, x) < apply_mapping(kind, y), "{:?}", kind);
            }
        }

        #[test]
        fn fit_beats_random_probes(
            raw in prop::collection::vec((-1.0f64..1.0, any::<bool>()), 4..30),
            probes in prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 1000),
        ) {
            let mut samples = raw;
            samples.push((0.5, true));
            samples.push((-0.1, false));
            let p = fit_calibrator(&samples, 1e-3).unwrap();
            let best = calibration_objective(p, &samples, 1e-3);
            for (a, b) in probes {
                let probe = calibration_objective(CalibratorParams { a, b }, &samples, 1e-3);
                prop_assert!(best <= probe + 1e-12);
            }
        }
    }
}

//! Transmission-time distribution catalog and the New-Better-than-Used check.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative service or inter-generation time distribution.
///
/// JSON form is internally tagged by `kind`, e.g.
/// `{"kind": "gamma", "shape": 3.0, "scale": 0.0667}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSpec {
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
    ShiftedExponential { shift: f64, rate: f64 },
    Erlang { stages: u32, rate: f64 },
    Deterministic { value: f64 },
    /// `step * N` with `N` geometric on {1, 2, ...} and success probability `p`.
    Geometric { p: f64, step: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidDist(format!("{name} must be positive, got {v}")))
    }
}

impl DistSpec {
    pub fn exponential_with_mean(mean: f64) -> Self {
        DistSpec::Exponential { rate: 1.0 / mean }
    }

    pub fn gamma_with_mean(shape: f64, mean: f64) -> Self {
        DistSpec::Gamma {
            shape,
            scale: mean / shape,
        }
    }

    /// Erlang-`stages` with the given mean.
    pub fn erlang_with_mean(stages: u32, mean: f64) -> Self {
        DistSpec::Erlang {
            stages,
            rate: stages as f64 / mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DistSpec::Exponential { rate } => positive("rate", rate),
            DistSpec::Gamma { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)
            }
            DistSpec::ShiftedExponential { shift, rate } => {
                positive("shift", shift)?;
                positive("rate", rate)
            }
            DistSpec::Erlang { stages, rate } => {
                if stages == 0 {
                    return Err(Error::InvalidDist("stages must be at least 1".into()));
                }
                positive("rate", rate)
            }
            DistSpec::Deterministic { value } => positive("value", value),
            DistSpec::Geometric { p, step } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::InvalidDist(format!("p must be in (0, 1], got {p}")));
                }
                positive("step", step)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistSpec::Exponential { rate } => 1.0 / rate,
            DistSpec::Gamma { shape, scale } => shape * scale,
            DistSpec::ShiftedExponential { shift, rate } => shift + 1.0 / rate,
            DistSpec::Erlang { stages, rate } => stages as f64 / rate,
            DistSpec::Deterministic { value } => value,
            DistSpec::Geometric { p, step } => step / p,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            DistSpec::Exponential { rate } => 1.0 / (rate * rate),
            DistSpec::Gamma { shape, scale } => shape * scale * scale,
            DistSpec::ShiftedExponential { rate, .. } => 1.0 / (rate * rate),
            DistSpec::Erlang { stages, rate } => stages as f64 / (rate * rate),
            DistSpec::Deterministic { .. } => 0.0,
            DistSpec::Geometric { p, step } => step * step * (1.0 - p) / (p * p),
        }
    }

    /// Rate of the memoryless law, if this distribution is exponential.
    pub fn exponential_rate(&self) -> Option<f64> {
        match *self {
            DistSpec::Exponential { rate } => Some(rate),
            DistSpec::Gamma { shape: 1.0, scale } => Some(1.0 / scale),
            DistSpec::Erlang { stages: 1, rate } => Some(rate),
            _ => None,
        }
    }

    pub fn is_exponential(&self) -> bool {
        self.exponential_rate().is_some()
    }

    /// `P[X > x]`.
    pub fn ccdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        match *self {
            DistSpec::Exponential { rate } => (-rate * x).exp(),
            DistSpec::Gamma { shape, scale } => {
                if x == 0.0 {
                    1.0
                } else if shape.fract() == 0.0 && shape <= 64.0 {
                    erlang_ccdf(shape as u32, 1.0 / scale, x)
                } else {
                    statrs::function::gamma::gamma_ur(shape, x / scale)
                }
            }
            DistSpec::ShiftedExponential { shift, rate } => {
                if x < shift {
                    1.0
                } else {
                    (-rate * (x - shift)).exp()
                }
            }
            DistSpec::Erlang { stages, rate } => erlang_ccdf(stages, rate, x),
            DistSpec::Deterministic { value } => {
                if x < value {
                    1.0
                } else {
                    0.0
                }
            }
            DistSpec::Geometric { p, step } => {
                // snap lattice points that land just below an integer
                let r = x / step;
                let k = if (r - r.round()).abs() < 1e-12 * r.abs().max(1.0) { r.round() } else { r.floor() };
                (1.0 - p).powf(k)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DistSpec::Exponential { rate } => Exp::new(rate).expect("validated").sample(rng),
            DistSpec::Gamma { shape, scale } => {
                Gamma::new(shape, scale).expect("validated").sample(rng)
            }
            DistSpec::ShiftedExponential { shift, rate } => {
                shift + Exp::new(rate).expect("validated").sample(rng)
            }
            DistSpec::Erlang { stages, rate } => Gamma::new(stages as f64, 1.0 / rate)
                .expect("validated")
                .sample(rng),
            DistSpec::Deterministic { value } => value,
            DistSpec::Geometric { p, step } => {
                let failures = Geometric::new(p).expect("validated").sample(rng);
                step * (failures as f64 + 1.0)
            }
        }
    }

    /// Grid {0, 0.1 m, ..., 5 m} on each axis, m the mean.
    pub fn default_nbu_grid(&self) -> Vec<(f64, f64)> {
        let m = self.mean();
        let axis: Vec<f64> = (0..=50).map(|k| k as f64 * 0.1 * m).collect();
        axis.iter()
            .flat_map(|&a| axis.iter().map(move |&b| (a, b)))
            .collect()
    }

    pub fn check_nbu(&self, grid: &[(f64, f64)]) -> NbuReport {
        let mut report = NbuReport {
            holds: true,
            worst_violation: f64::NEG_INFINITY,
            worst_at: (0.0, 0.0),
            max_abs_gap: 0.0,
        };
        for &(tau, t) in grid {
            let gap = self.ccdf(tau + t) - self.ccdf(tau) * self.ccdf(t);
            if gap > report.worst_violation {
                report.worst_violation = gap;
                report.worst_at = (tau, t);
            }
            report.max_abs_gap = report.max_abs_gap.max(gap.abs());
        }
        report.holds = report.worst_violation <= NBU_TOLERANCE;
        report
    }
}

pub const NBU_TOLERANCE: f64 = 1e-12;

/// Result of evaluating `F(τ+t) ≤ F(τ)F(t)` on a grid of CCDF points.
#[derive(Clone, Debug, PartialEq)]
pub struct NbuReport {
    pub holds: bool,
    /// Largest `F(τ+t) − F(τ)F(t)` seen; positive values are violations.
    pub worst_violation: f64,
    pub worst_at: (f64, f64),
    /// Largest `|F(τ+t) − F(τ)F(t)|`; zero up to rounding for the exponential.
    pub max_abs_gap: f64,
}

fn erlang_ccdf(stages: u32, rate: f64, x: f64) -> f64 {
    let y = rate * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..stages {
        term *= y / n as f64;
        sum += term;
    }
    (-y).exp() * sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{Purpose, StreamKey};

    #[test]
    fn means() {
        assert_eq!(DistSpec::Exponential { rate: 2.0 }.mean(), 0.5);
        assert_eq!(
            DistSpec::ShiftedExponential {
                shift: 0.5,
                rate: 2.0
            }
            .mean(),
            1.0
        );
        let lambda = 30.0;
        let e = DistSpec::Erlang {
            stages: 2,
            rate: 2.0 * lambda,
        };
        assert!((e.mean() - 1.0 / lambda).abs() < 1e-15);
    }

    #[test]
    fn point_mass() {
        let d = DistSpec::Deterministic { value: 0.5 };
        let mut rng = StreamKey::new(1, Purpose::Service, 0).rng();
        for _ in 0..10 {
            assert_eq!(d.sample(&mut rng), 0.5);
        }
        assert_eq!(d.ccdf(0.4), 1.0);
        assert_eq!(d.ccdf(0.6), 0.0);
    }

    #[test]
    fn ccdf_exponential_at_zero() {
        let d = DistSpec::Exponential { rate: 3.0 };
        assert_eq!(d.ccdf(0.0), 1.0);
        assert!((d.ccdf(0.7) - (-2.1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn erlang_ccdf_matches_density_quadrature() {
        // Simpson's rule on the Erlang-2 density as an independent oracle.
        let lambda = 1.5;
        let rate = 2.0 * lambda;
        let d = DistSpec::Erlang { stages: 2, rate };
        for &x in &[0.1, 0.4, 1.0, 2.5] {
            let n = 20_000;
            let h = x / n as f64;
            let pdf = |u: f64| rate * rate * u * (-rate * u).exp();
            let mut s = pdf(0.0) + pdf(x);
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * pdf(k as f64 * h);
            }
            let cdf = s * h / 3.0;
            assert!((d.ccdf(x) - (1.0 - cdf)).abs() < 1e-10);
            let closed = (-rate * x).exp() * (1.0 + rate * x);
            assert!((d.ccdf(x) - closed).abs() < 1e-14);
        }
    }

    #[test]
    fn gamma_integer_shape_agrees_with_incomplete_gamma() {
        let d = DistSpec::gamma_with_mean(3.0, 0.2);
        for &x in &[0.05, 0.2, 0.6] {
            let DistSpec::Gamma { shape, scale } = d else {
                unreachable!()
            };
            let q = statrs::function::gamma::gamma_ur(shape, x / scale);
            assert!((d.ccdf(x) - q).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(DistSpec::Exponential { rate: 0.0 }.validate().is_err());
        assert!(DistSpec::Gamma {
            shape: -1.0,
            scale: 1.0
        }
        .validate()
        .is_err());
        assert!(DistSpec::Geometric { p: 1.5, step: 1.0 }.validate().is_err());
        assert!(DistSpec::Erlang {
            stages: 0,
            rate: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn nbu_exponential_equality() {
        let d = DistSpec::Exponential { rate: 0.7 };
        let r = d.check_nbu(&d.default_nbu_grid());
        assert!(r.holds);
        assert!(r.max_abs_gap < 1e-12);
    }

    #[test]
    fn nbu_catalog() {
        for d in [
            DistSpec::gamma_with_mean(3.0, 0.2),
            DistSpec::Erlang {
                stages: 2,
                rate: 4.0,
            },
            DistSpec::Deterministic { value: 0.5 },
            DistSpec::ShiftedExponential {
                shift: 0.5,
                rate: 2.0,
            },
            DistSpec::Geometric { p: 0.3, step: 0.1 },
        ] {
            assert!(d.check_nbu(&d.default_nbu_grid()).holds, "{d:?}");
        }
    }

    #[test]
    fn gamma_half_shape_is_not_nbu() {
        // Independent oracle: Q(1/2, y) = erfc(sqrt(y)).
        let d = DistSpec::gamma_with_mean(0.5, 0.2);
        let scale = 0.4;
        let oracle = |x: f64| statrs::function::erf::erfc((x / scale).sqrt());
        let (tau, t) = (0.1, 0.1);
        let gap = oracle(tau + t) - oracle(tau) * oracle(t);
        assert!(gap > 1e-3);
        let err = (d.ccdf(0.2) - oracle(0.2)).abs();
        assert!(err < 1e-9, "{err}");
        let r = d.check_nbu(&d.default_nbu_grid());
        assert!(!r.holds);
        assert!(r.worst_violation > 1e-3);
    }

    #[test]
    fn serde_tagged() {
        let d: DistSpec =
            serde_json::from_str(r#"{"kind":"shifted_exponential","shift":0.5,"rate":2}"#).unwrap();
        assert_eq!(d.mean(), 1.0);
        let back: DistSpec = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }
}

//! Age traces and the functionals computed from them.

mod dominance;
mod gap;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dominance::{
    distributional_dominance, samplewise_dominance, DominanceReport, Violation, DKW_ALPHA,
};
pub use gap::{analytic_gap_bound, gap_report, lower_bound_trace, GapReport};
pub use stats::{paired_summary, Summary};

use crate::engine::{Delivery, SimOutput};
use crate::error::{Error, Result};
use crate::model::NodeId;

/// Sawtooth age process of one node on `[0, horizon]`.
///
/// The age starts at 0 and grows with slope 1; at each breakpoint `(t, a)` it
/// drops to `a` (right-continuous).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeTrace {
    pub node: NodeId,
    pub horizon: f64,
    pub breakpoints: Vec<(f64, f64)>,
}

/// One linear piece of an age trace: the age rises from `start_age` over
/// `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub start_age: f64,
}

impl Segment {
    pub fn end_age(&self) -> f64 {
        self.start_age + (self.end - self.start)
    }
}

/// Builds the age trace from deliveries sorted by time. Only informative
/// deliveries (fresher than everything seen so far) reset the age.
pub fn age_trace(node: NodeId, deliveries: &[Delivery], horizon: f64) -> AgeTrace {
    AgeTrace::from_resets(
        node,
        horizon,
        deliveries.iter().map(|d| (d.time, d.gen_time)),
    )
}

impl AgeTrace {
    /// `resets` yields `(time, generation time)` pairs in time order.
    pub fn from_resets(
        node: NodeId,
        horizon: f64,
        resets: impl IntoIterator<Item = (f64, f64)>,
    ) -> Self {
        let mut u = 0.0;
        let mut breakpoints: Vec<(f64, f64)> = Vec::new();
        for (t, s) in resets {
            if t > horizon {
                break;
            }
            if s <= u {
                continue;
            }
            u = s;
            let age = t - s;
            match breakpoints.last_mut() {
                Some(last) if last.0 == t => last.1 = age,
                _ => breakpoints.push((t, age)),
            }
        }
        Self {
            node,
            horizon,
            breakpoints,
        }
    }

    pub fn from_output(out: &SimOutput, node: NodeId) -> Self {
        Self::from_resets(node, out.horizon, out.u_trace[node].iter().copied())
    }

    /// Age at time `t` (right-continuous).
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&(bt, _)| bt <= t);
        if k == 0 {
            t
        } else {
            let (bt, a) = self.breakpoints[k - 1];
            a + (t - bt)
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        let starts = std::iter::once((0.0, 0.0)).chain(self.breakpoints.iter().copied());
        let ends = self
            .breakpoints
            .iter()
            .map(|b| b.0)
            .chain(std::iter::once(self.horizon));
        starts
            .zip(ends)
            .map(|((start, start_age), end)| Segment {
                start,
                end,
                start_age,
            })
            .filter(|s| s.end > s.start)
    }

    /// Segments clipped to `[from, horizon]`.
    fn segments_from(&self, from: f64) -> impl Iterator<Item = Segment> + '_ {
        self.segments().filter(move |s| s.end > from).map(move |s| {
            if s.start >= from {
                s
            } else {
                Segment {
                    start: from,
                    end: s.end,
                    start_age: s.start_age + (from - s.start),
                }
            }
        })
    }
}

/// Time-average age over the whole horizon.
pub fn time_average(trace: &AgeTrace) -> Result<f64> {
    time_average_after(trace, 0.0)
}

/// Time-average age over `[warmup, horizon]`.
pub fn time_average_after(trace: &AgeTrace, warmup: f64) -> Result<f64> {
    if !(trace.horizon > warmup && warmup >= 0.0) {
        return Err(Error::Metric(format!(
            "empty averaging window [{warmup}, {}]",
            trace.horizon
        )));
    }
    let area: f64 = trace
        .segments_from(warmup)
        .map(|s| {
            let len = s.end - s.start;
            s.start_age * len + 0.5 * len * len
        })
        .sum();
    Ok(area / (trace.horizon - warmup))
}

/// Mean of the age values just before each reset.
pub fn average_peak(trace: &AgeTrace) -> Result<f64> {
    if trace.breakpoints.is_empty() {
        return Err(Error::Metric("no peaks in horizon".into()));
    }
    let mut prev = (0.0, 0.0);
    let mut sum = 0.0;
    for &(t, a) in &trace.breakpoints {
        sum += prev.1 + (t - prev.0);
        prev = (t, a);
    }
    Ok(sum / trace.breakpoints.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `h(x) = floor(x)`.
    Floor,
    /// `h(x) = e^x`.
    Exp,
    /// `h(x) = 1{x > threshold}`.
    Indicator { threshold: f64 },
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyKind::Floor => f.write_str("floor"),
            PenaltyKind::Exp => f.write_str("exp"),
            PenaltyKind::Indicator { threshold } => write!(f, "indicator:{threshold}"),
        }
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "floor" => Ok(PenaltyKind::Floor),
            "exp" => Ok(PenaltyKind::Exp),
            _ => {
                if let Some(d) = s.strip_prefix("indicator:") {
                    let threshold: f64 = d.parse().map_err(|_| {
                        Error::Metric(format!("bad indicator threshold {d:?}"))
                    })?;
                    return Ok(PenaltyKind::Indicator { threshold });
                }
                Err(Error::Metric(format!(
                    "unknown penalty {s:?}; expected floor, exp or indicator:<d>"
                )))
            }
        }
    }
}

/// `∫_0^x floor(u) du`.
fn floor_area(x: f64) -> f64 {
    let k = x.floor();
    k * x - k * (k + 1.0) / 2.0
}

impl PenaltyKind {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            PenaltyKind::Floor => x.floor(),
            PenaltyKind::Exp => x.exp(),
            PenaltyKind::Indicator { threshold } => f64::from(x > threshold),
        }
    }

    /// `∫_a^b h(x) dx` for `a <= b`.
    fn integral(&self, a: f64, b: f64) -> f64 {
        match *self {
            PenaltyKind::Floor => floor_area(b) - floor_area(a),
            PenaltyKind::Exp => b.exp() - a.exp(),
            PenaltyKind::Indicator { threshold } => (b - a.max(threshold)).max(0.0),
        }
    }
}

/// Time-average of `h(age)` over the horizon.
pub fn penalty(trace: &AgeTrace, h: PenaltyKind) -> Result<f64> {
    if !(trace.horizon > 0.0) {
        return Err(Error::Metric("horizon must be positive".into()));
    }
    let total: f64 = trace
        .segments()
        .map(|s| h.integral(s.start_age, s.end_age()))
        .sum();
    Ok(total / trace.horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(horizon: f64, ds: &[(f64, f64)]) -> AgeTrace {
        AgeTrace::from_resets(0, horizon, ds.iter().map(|&(s, a)| (a, s)))
    }

    #[test]
    fn single_delivery() {
        let tr = trace(2.0, &[(0.5, 1.5)]);
        assert_eq!(tr.breakpoints, vec![(1.5, 1.0)]);
        assert_eq!(tr.value_at(1.4), 1.4);
        assert_eq!(tr.value_at(1.5), 1.0);
        assert!((time_average(&tr).unwrap() - 0.875).abs() < 1e-12);
    }

    #[test]
    fn stale_delivery_does_not_reset() {
        let tr = trace(10.0, &[(2.0, 3.0), (1.0, 4.0)]);
        assert_eq!(tr.breakpoints, vec![(3.0, 1.0)]);
    }

    #[test]
    fn pure_ramp() {
        let tr = trace(4.0, &[]);
        assert_eq!(time_average(&tr).unwrap(), 2.0);
        assert_eq!(
            average_peak(&tr).unwrap_err().to_string(),
            "metric error: no peaks in horizon"
        );
    }

    #[test]
    fn peaks() {
        // resets at 2 (2 -> 1) and 5 (4 -> 0.5)
        let tr = trace(6.0, &[(1.0, 2.0), (4.5, 5.0)]);
        assert_eq!(average_peak(&tr).unwrap(), 3.0);
    }

    #[test]
    fn penalties_on_ramp() {
        let tr = trace(2.0, &[]);
        assert_eq!(penalty(&tr, PenaltyKind::Indicator { threshold: 1.0 }).unwrap(), 0.5);
        let tr = trace(1.0, &[]);
        assert!((penalty(&tr, PenaltyKind::Exp).unwrap() - (1f64.exp() - 1.0)).abs() < 1e-12);
        let tr = trace(3.0, &[]);
        // ∫_0^3 floor = 0 + 1 + 2
        assert!((penalty(&tr, PenaltyKind::Floor).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warmup_window() {
        let tr = trace(4.0, &[]);
        // ∫_2^4 t dt / 2 = 3
        assert!((time_average_after(&tr, 2.0).unwrap() - 3.0).abs() < 1e-12);
        assert!(time_average_after(&tr, 4.0).is_err());
    }

    #[test]
    fn penalty_parse() {
        assert_eq!("floor".parse::<PenaltyKind>().unwrap(), PenaltyKind::Floor);
        assert_eq!(
            "indicator:2.5".parse::<PenaltyKind>().unwrap(),
            PenaltyKind::Indicator { threshold: 2.5 }
        );
        assert!("square".parse::<PenaltyKind>().is_err());
    }

    #[test]
    fn simultaneous_resets_collapse() {
        let tr = trace(5.0, &[(0.5, 1.0), (0.8, 1.0)]);
        assert_eq!(tr.breakpoints, vec![(1.0, 0.19999999999999996)]);
        assert_eq!(average_peak(&tr).unwrap(), 1.0);
    }

    /// Deliveries on a 1e-3 grid so that midpoint quadrature cells never
    /// straddle a reset.
    fn deliveries() -> impl Strategy<Value = (f64, Vec<(f64, f64)>)> {
        (1u32..=8, prop::collection::vec((0u32..8000, 0u32..3000), 0..30)).prop_map(
            |(h, raw)| {
                let horizon = f64::from(h);
                let mut ds: Vec<(f64, f64)> = raw
                    .into_iter()
                    .map(|(a, lag)| {
                        let a = f64::from(a) * 1e-3;
                        let s = (a - f64::from(lag) * 1e-3).max(0.0);
                        (s, a)
                    })
                    .collect();
                ds.sort_by(|x, y| x.1.total_cmp(&y.1));
                (horizon, ds)
            },
        )
    }

    /// Midpoint quadrature of `h(t - max{s : a <= t})`, sweeping the sorted
    /// deliveries directly.
    fn quadrature(horizon: f64, ds: &[(f64, f64)], h: impl Fn(f64) -> f64) -> f64 {
        let step = 1e-4;
        let n = (horizon / step).round() as usize;
        let (mut k, mut u, mut sum) = (0, 0.0f64, 0.0);
        for i in 0..n {
            let t = (i as f64 + 0.5) * step;
            while k < ds.len() && ds[k].1 <= t {
                u = u.max(ds[k].0);
                k += 1;
            }
            sum += h(t - u) * step;
        }
        sum / horizon
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn closed_forms_match_quadrature((horizon, ds) in deliveries()) {
            let tr = trace(horizon, &ds);
            let g1 = time_average(&tr).unwrap();
            prop_assert!((g1 - quadrature(horizon, &ds, |x| x)).abs() < 1e-6);
            let fl = penalty(&tr, PenaltyKind::Floor).unwrap();
            prop_assert!((fl - quadrature(horizon, &ds, f64::floor)).abs() < 1e-3);
            let ex = penalty(&tr, PenaltyKind::Exp).unwrap();
            prop_assert!((ex - quadrature(horizon, &ds, f64::exp)).abs() < 1e-3);
        }

        #[test]
        fn resets_never_raise_age((horizon, ds) in deliveries()) {
            let tr = trace(horizon, &ds);
            let mut prev = (0.0, 0.0);
            for &(t, a) in &tr.breakpoints {
                prop_assert!(a >= 0.0);
                prop_assert!(a <= prev.1 + (t - prev.0));
                prev = (t, a);
            }
        }
    }
}

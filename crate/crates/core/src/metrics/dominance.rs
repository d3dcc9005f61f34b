use serde::{Deserialize, Serialize};

use crate::engine::SimOutput;
use crate::error::{Error, Result};
use crate::model::NodeId;

/// Confidence level of the DKW bands is `1 - DKW_ALPHA`.
pub const DKW_ALPHA: f64 = 0.001;

/// Replications required per side for the distributional test.
pub const MIN_REPLICATIONS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub node: NodeId,
    pub seed: u64,
    pub time: f64,
    /// Candidate value (U for samplewise, exceedance probability otherwise).
    pub candidate: f64,
    pub other: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub checks: u64,
    pub violations: u64,
    pub first: Option<Violation>,
}

impl DominanceReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }

    pub fn merge(&mut self, other: DominanceReport) {
        self.checks += other.checks;
        self.violations += other.violations;
        if self.first.is_none() {
            self.first = other.first;
        }
    }
}

/// Checks `U_candidate,j(t) >= U_other,j(t)` at every breakpoint of either
/// run, for every node. Both outputs must come from one coupled execution.
pub fn samplewise_dominance(candidate: &SimOutput, other: &SimOutput) -> Result<DominanceReport> {
    let coupled = match (candidate.coupling, other.coupling) {
        (Some(a), Some(b)) => a.is_coupled_with(&b),
        _ => false,
    };
    if !coupled {
        return Err(Error::Coupling(
            "samplewise dominance needs outputs of the same coupled execution".into(),
        ));
    }
    let mut rep = DominanceReport::default();
    for node in 0..candidate.node_count() {
        let times = candidate.u_trace[node]
            .iter()
            .chain(other.u_trace[node].iter())
            .map(|b| b.0);
        for t in times {
            rep.checks += 1;
            let (ua, ub) = (candidate.u_at(node, t), other.u_at(node, t));
            if ua < ub {
                rep.violations += 1;
                if rep.first.is_none() {
                    rep.first = Some(Violation {
                        node,
                        seed: candidate.seed,
                        time: t,
                        candidate: ua,
                        other: ub,
                    });
                }
            }
        }
    }
    Ok(rep)
}

fn dkw_epsilon(n: usize) -> f64 {
    ((2.0 / DKW_ALPHA).ln() / (2.0 * n as f64)).sqrt()
}

/// Compares empirical `P{Δ_j(t) > x}` of two replication sets at every probe
/// time and threshold. A violation is the candidate's exceedance being above
/// the other's by more than the sum of DKW band widths at two or more
/// adjacent thresholds; every threshold in such a run counts.
pub fn distributional_dominance(
    candidate: &[&SimOutput],
    other: &[&SimOutput],
    probe_times: &[f64],
    thresholds: &[f64],
) -> Result<DominanceReport> {
    if candidate.len() < MIN_REPLICATIONS || other.len() < MIN_REPLICATIONS {
        return Err(Error::Metric(format!(
            "distributional dominance needs at least {MIN_REPLICATIONS} replications per side, got {} and {}",
            candidate.len(),
            other.len()
        )));
    }
    if probe_times.is_empty() || thresholds.is_empty() {
        return Err(Error::Metric("empty probe grid".into()));
    }
    let band = dkw_epsilon(candidate.len()) + dkw_epsilon(other.len());
    let nodes = candidate[0].node_count();
    let mut rep = DominanceReport::default();
    let exceed = |outs: &[&SimOutput], node: NodeId, t: f64, x: f64| {
        let k = outs.iter().filter(|o| t - o.u_at(node, t) > x).count();
        k as f64 / outs.len() as f64
    };
    for node in 0..nodes {
        for &t in probe_times {
            let mut run: Vec<Violation> = Vec::new();
            let flush = |run: &mut Vec<Violation>, rep: &mut DominanceReport| {
                if run.len() >= 2 {
                    rep.violations += run.len() as u64;
                    if rep.first.is_none() {
                        rep.first = Some(run[0]);
                    }
                }
                run.clear();
            };
            for &x in thresholds {
                rep.checks += 1;
                let (pa, pb) = (exceed(candidate, node, t, x), exceed(other, node, t, x));
                if pa - pb > band {
                    run.push(Violation {
                        node,
                        seed: candidate[0].seed,
                        time: t,
                        candidate: pa,
                        other: pb,
                    });
                } else {
                    flush(&mut run, &mut rep);
                }
            }
            flush(&mut run, &mut rep);
        }
    }
    Ok(rep)
}

use serde::{Deserialize, Serialize};

use super::{time_average, AgeTrace};
use crate::engine::SimOutput;
use crate::error::{Error, Result};
use crate::model::{Network, NodeId};
use crate::policy::PolicyKind;

/// Age trace built from the transmission-start times of an infeasible-policy
/// run.
pub fn lower_bound_trace(ip_output: &SimOutput, node: NodeId) -> Result<AgeTrace> {
    if ip_output.policy.kind != PolicyKind::InfeasibleLb || !ip_output.policy.overrides.is_empty()
    {
        return Err(Error::Metric(format!(
            "lower bound needs an infeasible_lb run, got {}",
            ip_output.policy.label()
        )));
    }
    if node >= ip_output.node_count() {
        return Err(Error::Metric(format!("node {node} not in output")));
    }
    Ok(AgeTrace::from_output(ip_output, node))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub node: NodeId,
    /// Time-average age of the policy minus that of the lower bound.
    pub empirical_gap: f64,
    pub analytic_bound: f64,
    /// Nodes on the path from the first hop to `node`.
    pub hop_path: Vec<NodeId>,
    /// Mean transmission time of the link entering each path node.
    pub link_means: Vec<f64>,
}

/// First-hop link mean plus twice the means of the remaining links on the
/// path to `node`. Returns `(bound, path, per-link means)`.
pub fn analytic_gap_bound(net: &Network, node: NodeId) -> Result<(f64, Vec<NodeId>, Vec<f64>)> {
    if node >= net.node_count() {
        return Err(Error::NodeOutOfRange {
            node,
            count: net.node_count(),
        });
    }
    let hd = net.hop_decompose();
    let path = hd.path_to(node).ok_or_else(|| {
        Error::Metric("gap bound needs a network where each node has one incoming link".into())
    })?;
    let means: Vec<f64> = path
        .iter()
        .map(|&n| net.link(net.in_links(n)[0]).dist.mean())
        .collect();
    let bound = means.first().copied().unwrap_or(0.0) + 2.0 * means.iter().skip(1).sum::<f64>();
    Ok((bound, path.to_vec(), means))
}

pub fn gap_report(
    trace_p: &AgeTrace,
    trace_lb: &AgeTrace,
    net: &Network,
) -> Result<GapReport> {
    if trace_p.node != trace_lb.node {
        return Err(Error::Metric(format!(
            "traces belong to different nodes ({} and {})",
            trace_p.node, trace_lb.node
        )));
    }
    if trace_p.horizon != trace_lb.horizon {
        return Err(Error::Metric(format!(
            "traces have different horizons ({} and {})",
            trace_p.horizon, trace_lb.horizon
        )));
    }
    let (analytic_bound, hop_path, link_means) = analytic_gap_bound(net, trace_p.node)?;
    Ok(GapReport {
        node: trace_p.node,
        empirical_gap: time_average(trace_p)? - time_average(trace_lb)?,
        analytic_bound,
        hop_path,
        link_means,
    })
}

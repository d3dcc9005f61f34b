//! Batch experiments: configuration, sweeps, figure presets, CSV output and
//! the coupled-dominance verification battery.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::DistSpec;
use crate::engine::{run_coupled, CouplingMode, SimOutput};
use crate::error::{Error, Result};
use crate::metrics::{
    analytic_gap_bound, average_peak, penalty, samplewise_dominance, time_average, AgeTrace,
    DominanceReport, PenaltyKind, Summary,
};
use crate::model::{Buffer, LinkSpec, Network, NetworkSpec, NodeId};
use crate::par;
use crate::policy::{PolicyKind, PolicySpec};
use crate::stream::derive_seed;
use crate::traffic::{GatewayDelay, GenProcess, TrafficSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    /// Time-average age.
    TimeAverage,
    /// Average peak age.
    AveragePeak,
    /// Time-average of a penalty applied to the age.
    Penalty { h: PenaltyKind },
    /// Time-average age minus that of the lower bound, plus the analytic bound.
    Gap,
}

impl MetricSpec {
    pub fn name(&self) -> String {
        match self {
            MetricSpec::TimeAverage => "g1".into(),
            MetricSpec::AveragePeak => "g2".into(),
            MetricSpec::Penalty { h } => match h {
                PenaltyKind::Floor => "g3_floor".into(),
                PenaltyKind::Exp => "g3_exp".into(),
                PenaltyKind::Indicator { threshold } => format!("g3_indicator_{threshold}"),
            },
            MetricSpec::Gap => "gap".into(),
        }
    }
}

/// Variable swept across experiment points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "var", rename_all = "snake_case")]
pub enum Sweep {
    /// Generation rate; each point uses Erlang-2 inter-generation times with
    /// mean `1/λ`.
    Lambda { values: Vec<f64> },
    /// Gamma shape applied to every link, keeping each link's mean.
    Shape { values: Vec<f64> },
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::Lambda { .. } => "lambda",
            Sweep::Shape { .. } => "shape",
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Sweep::Lambda { values } | Sweep::Shape { values } => values,
        }
    }

    fn apply(&self, x: f64, net: &NetworkSpec, traffic: &TrafficSpec) -> (NetworkSpec, TrafficSpec) {
        let mut net = net.clone();
        let mut traffic = traffic.clone();
        match self {
            Sweep::Lambda { .. } => {
                traffic.generation = GenProcess::Renewal {
                    inter: DistSpec::erlang_with_mean(2, 1.0 / x),
                };
            }
            Sweep::Shape { .. } => {
                for l in &mut net.links {
                    l.dist = DistSpec::gamma_with_mean(x, l.dist.mean());
                }
            }
        }
        (net, traffic)
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_coupling() -> CouplingMode {
    CouplingMode::Independent
}
fn default_reps() -> usize {
    1
}
fn default_metrics() -> Vec<MetricSpec> {
    vec![MetricSpec::TimeAverage]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub network: NetworkSpec,
    pub traffic: TrafficSpec,
    pub policies: Vec<PolicySpec>,
    #[serde(default = "default_coupling")]
    pub coupling: CouplingMode,
    pub horizon: f64,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricSpec>,
    /// Nodes to report; all nodes when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    /// Also run the infeasible policy with unit buffers and report it as
    /// `lower_bound`.
    #[serde(default)]
    pub lower_bound: bool,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("policy list is empty".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("metric list is empty".into()));
        }
        let net = Network::build(&self.network)?;
        for &n in &self.nodes {
            if n >= net.node_count() {
                return Err(Error::Config(format!(
                    "metric node {n} does not exist (network has {} nodes)",
                    net.node_count()
                )));
            }
        }
        self.traffic.validate()?;
        for g in &self.traffic.gateways {
            if !net.is_gateway(*g) {
                return Err(Error::Config(format!(
                    "traffic gateway {g} is not a network gateway"
                )));
            }
        }
        for p in &self.policies {
            p.resolve(&net)?;
        }
        if let Some(sw) = &self.sweep {
            if sw.values().is_empty() {
                return Err(Error::Config(format!("{} sweep grid is empty", sw.name())));
            }
            if let Some(v) = sw.values().iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("{} sweep value {v} must be positive", sw.name())));
            }
        }
        let wants_gap = self.metrics.contains(&MetricSpec::Gap);
        if (self.lower_bound || wants_gap) && !net.tree_restricted() {
            return Err(Error::Config(
                "lower bound and gap metrics need a network where every non-gateway node has one incoming link"
                    .into(),
            ));
        }
        if wants_gap && !self.lower_bound {
            return Err(Error::Config("gap metric needs \"lower_bound\": true".into()));
        }
        Ok(())
    }

    fn points(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(sw) => sw.values().iter().map(|&x| Some(x)).collect(),
            None => vec![None],
        }
    }
}

/// One value in the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub seed: u64,
    pub node: NodeId,
    pub policy: String,
    pub metric: String,
    pub value: f64,
    #[serde(skip)]
    pub point: Option<f64>,
}

pub const LOWER_BOUND_LABEL: &str = "lower_bound";

pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, rep as u64)
}

/// Runs every sweep point and replication. Rows come back ordered by point,
/// replication, policy, node and metric regardless of thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let points = cfg.points();
    let jobs: Vec<(usize, Option<f64>, usize)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, &x)| (0..cfg.replications).map(move |r| (i, x, r)))
        .collect();
    let results = par::map(&jobs, |&(_, x, r)| run_point(cfg, x, r));
    let mut rows = Vec::new();
    for res in results {
        rows.extend(res?);
    }
    Ok(rows)
}

fn run_point(cfg: &ExperimentConfig, x: Option<f64>, rep: usize) -> Result<Vec<MetricRow>> {
    let (net_spec, traffic) = match (&cfg.sweep, x) {
        (Some(sw), Some(x)) => sw.apply(x, &cfg.network, &cfg.traffic),
        _ => (cfg.network.clone(), cfg.traffic.clone()),
    };
    let net = Network::build(&net_spec)?;
    let seed = replication_seed(cfg.seed, rep);
    let packets = traffic.generate(cfg.horizon, seed)?;
    let mut policies = cfg.policies.clone();
    if cfg.lower_bound {
        policies.push(PolicySpec::with_buffer(PolicyKind::InfeasibleLb, Buffer::Finite(1)));
    }
    let outs = run_coupled(&net, &packets, &policies, cfg.coupling, cfg.horizon, seed)?;
    let run_id = match (&cfg.sweep, x) {
        (Some(sw), Some(x)) => format!("{}={x}/r{rep}", sw.name()),
        _ => format!("r{rep}"),
    };
    let nodes: Vec<NodeId> = if cfg.nodes.is_empty() {
        (0..net.node_count()).collect()
    } else {
        cfg.nodes.clone()
    };
    let lb_out = cfg.lower_bound.then(|| outs.last().expect("lower bound run"));
    let mut rows = Vec::new();
    let mut push = |node, policy: String, metric: String, value| {
        rows.push(MetricRow {
            run_id: run_id.clone(),
            seed,
            node,
            policy,
            metric,
            value,
            point: x,
        })
    };
    for (k, out) in outs.iter().enumerate() {
        let is_lb = cfg.lower_bound && k == outs.len() - 1;
        let label = if is_lb {
            LOWER_BOUND_LABEL.to_string()
        } else {
            out.policy.label()
        };
        for &node in &nodes {
            let trace = AgeTrace::from_output(out, node);
            for m in &cfg.metrics {
                let value = match m {
                    MetricSpec::TimeAverage => Some(time_average(&trace)?),
                    // a node with no reset has no peaks; such rows are omitted
                    MetricSpec::AveragePeak => average_peak(&trace).ok(),
                    MetricSpec::Penalty { h } => Some(penalty(&trace, *h)?),
                    MetricSpec::Gap => match lb_out {
                        Some(lb) if !is_lb => {
                            let lb_trace = AgeTrace::from_output(lb, node);
                            Some(time_average(&trace)? - time_average(&lb_trace)?)
                        }
                        _ => None,
                    },
                };
                if let Some(v) = value {
                    push(node, label.clone(), m.name(), v);
                }
            }
        }
    }
    if cfg.metrics.contains(&MetricSpec::Gap) {
        for &node in &nodes {
            let (bound, _, _) = analytic_gap_bound(&net, node)?;
            push(node, "analytic".into(), "gap_bound".into(), bound);
        }
    }
    Ok(rows)
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["run_id", "seed", "node", "policy", "metric", "value"])?;
    for r in rows {
        out.write_record([
            r.run_id.clone(),
            r.seed.to_string(),
            r.node.to_string(),
            r.policy.clone(),
            r.metric.clone(),
            r.value.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Mean and standard error per (point, node, policy, metric).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub point: Option<f64>,
    pub node: NodeId,
    pub policy: String,
    pub metric: String,
    pub summary: Summary,
}

pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Option<f64>, NodeId, String, String)> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let key = (r.point, r.node, r.policy.clone(), r.metric.clone());
        match keys.iter().position(|k| *k == key) {
            Some(i) => values[i].push(r.value),
            None => {
                keys.push(key);
                values.push(vec![r.value]);
            }
        }
    }
    keys.into_iter()
        .zip(values)
        .map(|((point, node, policy, metric), v)| SummaryRow {
            point,
            node,
            policy,
            metric,
            summary: Summary::of(&v),
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(sweep: Option<&Sweep>, rows: &[SummaryRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let var = sweep.map_or("point", |s| s.name());
    out.write_record([var, "node", "policy", "metric", "n", "mean", "std_err"])?;
    for r in rows {
        out.write_record([
            r.point.map_or(String::new(), |x| x.to_string()),
            r.node.to_string(),
            r.policy.clone(),
            r.metric.clone(),
            r.summary.n.to_string(),
            r.summary.mean.to_string(),
            r.summary.std_err.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Five links `(0,1),(0,2),(1,2),(1,3),(2,3)`; node 2 has two incoming links.
pub fn diamond_network(dist: impl Fn(NodeId, NodeId) -> DistSpec, buffer: Buffer) -> NetworkSpec {
    let links = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]
        .into_iter()
        .map(|(from, to)| LinkSpec {
            from,
            to,
            buffer,
            dist: dist(from, to),
        })
        .collect();
    NetworkSpec {
        nodes: 4,
        links,
        gateways: vec![0],
    }
}

pub fn fig5_network(buffer: Buffer) -> NetworkSpec {
    diamond_network(
        |from, to| {
            if (from, to) == (0, 2) {
                DistSpec::exponential_with_mean(0.5)
            } else {
                DistSpec::exponential_with_mean(1.0)
            }
        },
        buffer,
    )
}

/// Gamma shape on links `(0,1)` and `(1,3)` of the fig7 mix.
pub const FIG7_GAMMA_SHAPE: f64 = 2.0;

pub fn fig7_network(buffer: Buffer) -> NetworkSpec {
    diamond_network(
        |from, to| match (from, to) {
            (0, 1) | (1, 3) => DistSpec::gamma_with_mean(FIG7_GAMMA_SHAPE, 1.0),
            _ => DistSpec::ShiftedExponential {
                shift: 0.5,
                rate: 2.0,
            },
        },
        buffer,
    )
}

/// Chain `0→1→2→3→4→5` with two leaf branches on each of nodes 1, 2, 3.
pub fn fig6_network(shape: f64, buffer: Buffer) -> NetworkSpec {
    let mut edges: Vec<(NodeId, NodeId)> = (0..5).map(|i| (i, i + 1)).collect();
    edges.extend([(1, 6), (1, 7), (2, 8), (2, 9), (3, 10), (3, 11)]);
    NetworkSpec {
        nodes: 12,
        links: edges
            .into_iter()
            .map(|(from, to)| LinkSpec {
                from,
                to,
                buffer,
                dist: DistSpec::gamma_with_mean(shape, 0.2),
            })
            .collect(),
        gateways: vec![0],
    }
}

pub fn out_of_order_delay() -> GatewayDelay {
    GatewayDelay::TwoPoint {
        small: 1.0,
        large: 100.0,
        p: 0.5,
    }
}

fn buffered(kind: PolicyKind, b: Buffer) -> PolicySpec {
    PolicySpec::with_buffer(kind, b)
}

pub const PRESETS: [&str; 3] = ["fig5", "fig6", "fig7"];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    use PolicyKind::*;
    let inf = Buffer::Infinite;
    let one = Buffer::Finite(1);
    let cfg = match name {
        "fig5" => ExperimentConfig {
            name: "fig5".into(),
            network: fig5_network(inf),
            traffic: TrafficSpec::erlang2(1.0, out_of_order_delay()),
            policies: vec![
                buffered(PrmpLgfs, one),
                buffered(NonPrmpLgfs, one),
                buffered(NonPrmpLgfs, inf),
                buffered(NonPrmpLcfs, one),
                buffered(NonPrmpLcfs, inf),
                buffered(Fcfs, one),
                buffered(Fcfs, inf),
            ],
            coupling: CouplingMode::Uniformization,
            horizon: 2000.0,
            replications: 30,
            seed: 5,
            metrics: vec![MetricSpec::AveragePeak],
            nodes: vec![2],
            sweep: Some(Sweep::Lambda {
                values: log_grid(0.05, 5.0, 20),
            }),
            lower_bound: false,
        },
        "fig6" => ExperimentConfig {
            name: "fig6".into(),
            network: fig6_network(1.0, one),
            traffic: TrafficSpec::erlang2(30.0, GatewayDelay::Zero),
            policies: vec![
                buffered(PrmpLgfs, one),
                buffered(NonPrmpLgfs, one),
                buffered(NonPrmpLgfs, Buffer::Finite(10)),
                buffered(NonPrmpLgfs, Buffer::Finite(100)),
                buffered(NonPrmpLcfs, one),
                buffered(Fcfs, one),
            ],
            coupling: CouplingMode::Independent,
            horizon: 2000.0,
            replications: 10,
            seed: 6,
            metrics: vec![MetricSpec::TimeAverage, MetricSpec::Gap],
            nodes: vec![5],
            sweep: Some(Sweep::Shape {
                values: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            }),
            lower_bound: true,
        },
        "fig7" => ExperimentConfig {
            name: "fig7".into(),
            network: fig7_network(inf),
            traffic: TrafficSpec::erlang2(1.0, out_of_order_delay()),
            policies: vec![
                buffered(NonPrmpLgfs, one),
                buffered(NonPrmpLgfs, inf),
                buffered(NonPrmpLcfs, one),
                buffered(NonPrmpLcfs, inf),
                buffered(Fcfs, one),
                buffered(Fcfs, inf),
            ],
            coupling: CouplingMode::SharedDraws,
            horizon: 1000.0,
            replications: 20,
            seed: 7,
            metrics: vec![MetricSpec::TimeAverage],
            nodes: vec![3],
            sweep: Some(Sweep::Lambda {
                values: log_grid(0.05, 5.0, 20),
            }),
            lower_bound: false,
        },
        _ => {
            return Err(Error::Config(format!(
                "unknown preset {name:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

/// One comparison of the verification battery.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyCase {
    pub name: String,
    pub candidate: String,
    pub other: String,
    pub mode: CouplingMode,
    /// Cases built to fail are checked for a non-zero violation count.
    pub expect_violations: bool,
    pub report: DominanceReport,
}

impl VerifyCase {
    pub fn passed(&self) -> bool {
        self.expect_violations != self.report.holds()
    }
}

pub struct VerifySettings {
    pub seeds: usize,
    pub horizon: f64,
    pub seed: u64,
    pub lambda: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            seeds: 100,
            horizon: 1000.0,
            seed: 1,
            lambda: 1.0,
        }
    }
}

/// Samplewise dominance of `candidate` over each policy in `others`, summed
/// over `settings.seeds` coupled executions.
pub fn dominance_battery(
    net: &NetworkSpec,
    candidate: &PolicySpec,
    others: &[PolicySpec],
    mode: CouplingMode,
    settings: &VerifySettings,
) -> Result<Vec<DominanceReport>> {
    let net = Network::build(net)?;
    let traffic = TrafficSpec::erlang2(settings.lambda, out_of_order_delay());
    let mut policies = vec![candidate.clone()];
    policies.extend(others.iter().cloned());
    let per_seed = par::replicate(settings.seeds, |r| -> Result<Vec<DominanceReport>> {
        let seed = replication_seed(settings.seed, r);
        let packets = traffic.generate(settings.horizon, seed)?;
        let outs: Vec<SimOutput> =
            run_coupled(&net, &packets, &policies, mode, settings.horizon, seed)?;
        outs[1..]
            .iter()
            .map(|o| samplewise_dominance(&outs[0], o))
            .collect()
    });
    let mut total = vec![DominanceReport::default(); others.len()];
    for reps in per_seed {
        for (t, r) in total.iter_mut().zip(reps?) {
            t.merge(r);
        }
    }
    Ok(total)
}

/// The default ordering suite: preemptive LGFS under uniformization on the
/// diamond network, non-preemptive LGFS under shared draws on the mixed
/// network, a reflexive check and a deliberately inverted one.
pub fn verify_battery(settings: &VerifySettings) -> Result<Vec<VerifyCase>> {
    use PolicyKind::*;
    let inf = Buffer::Infinite;
    let mut cases = Vec::new();
    let mut add = |name: &str,
                   net: &NetworkSpec,
                   cand: PolicySpec,
                   others: Vec<PolicySpec>,
                   mode: CouplingMode,
                   expect_violations: bool|
     -> Result<()> {
        let reports = dominance_battery(net, &cand, &others, mode, settings)?;
        for (o, report) in others.iter().zip(reports) {
            cases.push(VerifyCase {
                name: name.into(),
                candidate: cand.label(),
                other: o.label(),
                mode,
                expect_violations,
                report,
            });
        }
        Ok(())
    };
    let diamond = fig5_network(inf);
    let mixed = fig7_network(inf);
    add(
        "preemptive_lgfs_dominates",
        &diamond,
        PolicySpec::new(PrmpLgfs),
        vec![PolicySpec::new(NonPrmpLgfs), PolicySpec::new(NonPrmpLcfs), PolicySpec::new(Fcfs)],
        CouplingMode::Uniformization,
        false,
    )?;
    add(
        "reflexive",
        &diamond,
        PolicySpec::new(PrmpLgfs),
        vec![PolicySpec::new(PrmpLgfs)],
        CouplingMode::Uniformization,
        false,
    )?;
    add(
        "non_preemptive_lgfs_dominates",
        &mixed,
        PolicySpec::new(NonPrmpLgfs),
        vec![PolicySpec::new(Fcfs), PolicySpec::new(NonPrmpLcfs)],
        CouplingMode::SharedDraws,
        false,
    )?;
    add(
        "inverted_fcfs_as_candidate",
        &diamond,
        PolicySpec::new(Fcfs),
        vec![PolicySpec::new(PrmpLgfs)],
        CouplingMode::Uniformization,
        true,
    )?;
    Ok(cases)
}

use thiserror::Error;

use crate::model::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate link ({0},{1})")]
    DuplicateLink(NodeId, NodeId),
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("unreachable node {0}: no path from any gateway")]
    UnreachableNode(NodeId),
    #[error("empty gateway set")]
    EmptyGateways,
    #[error("node {node} out of range (network has {count} nodes)")]
    NodeOutOfRange { node: NodeId, count: usize },
    #[error("cycle through node {0}: forwarding requires an acyclic network")]
    Cycle(NodeId),
    #[error("invalid distribution: {0}")]
    InvalidDist(String),
    #[error("invalid traffic: {0}")]
    InvalidTraffic(String),
    #[error("trace row {row}: {msg}")]
    Trace { row: usize, msg: String },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid coupling: {0}")]
    Coupling(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

//! Network topology, packets, and hop decomposition.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dist::DistSpec;
use crate::error::{Error, Result};

pub type NodeId = usize;
pub type LinkId = usize;

/// Queue capacity of a link, counting waiting packets only (the packet in
/// service is not part of the buffer).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Buffer {
    Finite(u32),
    Infinite,
}

impl Buffer {
    /// True if a queue currently holding `len` packets can take another one.
    pub fn has_room(self, len: usize) -> bool {
        match self {
            Buffer::Finite(cap) => len < cap as usize,
            Buffer::Infinite => true,
        }
    }

    pub fn is_zero(self) -> bool {
        self == Buffer::Finite(0)
    }
}

impl fmt::Display for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Buffer::Finite(n) => write!(f, "{n}"),
            Buffer::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Buffer {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Buffer::Finite(n) => s.serialize_u32(*n),
            Buffer::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Buffer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(Buffer::Finite(n)),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinite" | "unbounded") => {
                Ok(Buffer::Infinite)
            }
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "buffer must be a non-negative integer or \"inf\", got {t:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub from: NodeId,
    pub to: NodeId,
    pub buffer: Buffer,
    pub dist: DistSpec,
}

fn default_gateways() -> Vec<NodeId> {
    vec![0]
}

/// Serializable topology description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub nodes: usize,
    pub links: Vec<LinkSpec>,
    #[serde(default = "default_gateways")]
    pub gateways: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub buffer: Buffer,
    pub dist: DistSpec,
}

/// A validated, immutable network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    node_count: usize,
    links: Vec<Link>,
    gateways: Vec<NodeId>,
    out_links: Vec<Vec<LinkId>>,
    in_links: Vec<Vec<LinkId>>,
    tree_restricted: bool,
}

impl Network {
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        let n = spec.nodes;
        let check = |node: NodeId| {
            if node < n {
                Ok(())
            } else {
                Err(Error::NodeOutOfRange { node, count: n })
            }
        };
        if spec.gateways.is_empty() {
            return Err(Error::EmptyGateways);
        }
        let mut gateways = Vec::new();
        for &g in &spec.gateways {
            check(g)?;
            if !gateways.contains(&g) {
                gateways.push(g);
            }
        }

        let mut seen = BTreeSet::new();
        let mut links = Vec::with_capacity(spec.links.len());
        let mut out_links = vec![Vec::new(); n];
        let mut in_links = vec![Vec::new(); n];
        for (id, l) in spec.links.iter().enumerate() {
            check(l.from)?;
            check(l.to)?;
            if l.from == l.to {
                return Err(Error::SelfLoop(l.from));
            }
            if !seen.insert((l.from, l.to)) {
                return Err(Error::DuplicateLink(l.from, l.to));
            }
            l.dist.validate()?;
            out_links[l.from].push(id);
            in_links[l.to].push(id);
            links.push(Link {
                id,
                from: l.from,
                to: l.to,
                buffer: l.buffer,
                dist: l.dist.clone(),
            });
        }

        // reachability from the gateway set
        let mut reached = vec![false; n];
        let mut frontier: VecDeque<NodeId> = gateways.iter().copied().collect();
        for &g in &gateways {
            reached[g] = true;
        }
        while let Some(u) = frontier.pop_front() {
            for &l in &out_links[u] {
                let v = links[l].to;
                if !reached[v] {
                    reached[v] = true;
                    frontier.push_back(v);
                }
            }
        }
        if let Some(node) = reached.iter().position(|r| !r) {
            return Err(Error::UnreachableNode(node));
        }

        // Kahn's algorithm; a leftover node sits on a cycle
        let mut indeg: Vec<usize> = in_links.iter().map(Vec::len).collect();
        let mut ready: Vec<NodeId> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut visited = 0;
        while let Some(u) = ready.pop() {
            visited += 1;
            for &l in &out_links[u] {
                let v = links[l].to;
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.push(v);
                }
            }
        }
        if visited < n {
            let node = (0..n).find(|&v| indeg[v] > 0).unwrap_or(0);
            return Err(Error::Cycle(node));
        }

        let tree_restricted = (0..n)
            .filter(|v| !gateways.contains(v))
            .all(|v| in_links[v].len() == 1);

        Ok(Self {
            node_count: n,
            links,
            gateways,
            out_links,
            in_links,
            tree_restricted,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    pub fn gateways(&self) -> &[NodeId] {
        &self.gateways
    }

    pub fn is_gateway(&self, node: NodeId) -> bool {
        self.gateways.contains(&node)
    }

    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out_links[node]
    }

    pub fn in_links(&self, node: NodeId) -> &[LinkId] {
        &self.in_links[node]
    }

    /// Every non-gateway node has exactly one incoming link.
    pub fn tree_restricted(&self) -> bool {
        self.tree_restricted
    }

    pub fn link_between(&self, from: NodeId, to: NodeId) -> Option<LinkId> {
        self.out_links
            .get(from)?
            .iter()
            .copied()
            .find(|&l| self.links[l].to == to)
    }

    pub fn to_spec(&self) -> NetworkSpec {
        NetworkSpec {
            nodes: self.node_count,
            links: self
                .links
                .iter()
                .map(|l| LinkSpec {
                    from: l.from,
                    to: l.to,
                    buffer: l.buffer,
                    dist: l.dist.clone(),
                })
                .collect(),
            gateways: self.gateways.clone(),
        }
    }

    /// Copy of the network with every link buffer replaced.
    pub fn with_buffer(&self, buffer: Buffer) -> Self {
        let mut net = self.clone();
        for l in &mut net.links {
            l.buffer = buffer;
        }
        net
    }

    /// Copy of the network with every link distribution mapped through `f`.
    pub fn map_dists(&self, mut f: impl FnMut(&Link) -> DistSpec) -> Self {
        let mut net = self.clone();
        for l in &mut net.links {
            l.dist = f(l);
        }
        net
    }

    pub fn all_exponential(&self) -> bool {
        self.links.iter().all(|l| l.dist.is_exponential())
    }

    pub fn hop_decompose(&self) -> HopDecomposition {
        HopDecomposition::new(self)
    }
}

/// BFS layering from the gateways, plus the unique gateway path to every
/// node on tree-restricted networks.
#[derive(Clone, Debug, PartialEq)]
pub struct HopDecomposition {
    hop_sets: Vec<Vec<NodeId>>,
    hop_of: Vec<usize>,
    paths: Option<Vec<Vec<NodeId>>>,
}

impl HopDecomposition {
    fn new(net: &Network) -> Self {
        let n = net.node_count();
        let mut hop_of = vec![usize::MAX; n];
        let mut frontier = VecDeque::new();
        for &g in net.gateways() {
            hop_of[g] = 0;
            frontier.push_back(g);
        }
        while let Some(u) = frontier.pop_front() {
            for &l in net.out_links(u) {
                let v = net.link(l).to;
                if hop_of[v] == usize::MAX {
                    hop_of[v] = hop_of[u] + 1;
                    frontier.push_back(v);
                }
            }
        }
        let depth = hop_of.iter().copied().max().unwrap_or(0);
        let mut hop_sets = vec![Vec::new(); depth + 1];
        for (v, &h) in hop_of.iter().enumerate() {
            hop_sets[h].push(v);
        }

        let paths = net.tree_restricted().then(|| {
            (0..n)
                .map(|j| {
                    let mut path = Vec::new();
                    let mut cur = j;
                    while !net.is_gateway(cur) {
                        path.push(cur);
                        cur = net.link(net.in_links(cur)[0]).from;
                    }
                    path.reverse();
                    path
                })
                .collect()
        });

        Self {
            hop_sets,
            hop_of,
            paths,
        }
    }

    /// H_0, H_1, ... where H_0 is the gateway set.
    pub fn hop_sets(&self) -> &[Vec<NodeId>] {
        &self.hop_sets
    }

    pub fn hop_of(&self, node: NodeId) -> usize {
        self.hop_of[node]
    }

    /// Nodes [i_{j,1}, ..., i_{j,k} = j] on the path from the gateway to `node`,
    /// excluding the gateway itself. `None` on networks that are not
    /// tree-restricted.
    pub fn path_to(&self, node: NodeId) -> Option<&[NodeId]> {
        self.paths.as_ref().map(|p| p[node].as_slice())
    }
}

/// Arrival of a packet at one gateway node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GatewayArrival {
    pub gateway: NodeId,
    pub time: f64,
}

/// An update packet: generation time `s_l` and its arrival time(s) at the
/// gateway node(s).
#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub gen_time: f64,
    pub arrivals: Vec<GatewayArrival>,
}

impl Packet {
    pub fn at_gateway(id: u64, gen_time: f64, gateway: NodeId, time: f64) -> Self {
        Self {
            id,
            gen_time,
            arrivals: vec![GatewayArrival { gateway, time }],
        }
    }
}

/// Checks generation-order and causality invariants over a packet list.
pub fn validate_packets(packets: &[Packet]) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    for (row, p) in packets.iter().enumerate() {
        if !p.gen_time.is_finite() || p.gen_time < 0.0 {
            return Err(Error::Trace {
                row,
                msg: format!("packet {}: invalid generation time {}", p.id, p.gen_time),
            });
        }
        if p.gen_time < last {
            return Err(Error::Trace {
                row,
                msg: format!("packet {}: generation times not non-decreasing", p.id),
            });
        }
        last = p.gen_time;
        for a in &p.arrivals {
            if a.time < p.gen_time {
                return Err(Error::Trace {
                    row,
                    msg: format!("packet {}: arrival precedes generation", p.id),
                });
            }
        }
    }
    Ok(())
}

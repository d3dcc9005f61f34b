//! Per-link scheduling disciplines.
//!
//! A [`LinkState`] owns the queue and the in-service slot of one link and
//! applies one of the [`PolicyKind`] rules on every arrival and completion.
//! It never draws randomness; the engine decides how long a service lasts.

use std::cmp::Ordering;
use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Buffer, LinkId, Network, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Preemptive Last-Generated First-Served.
    PrmpLgfs,
    /// Non-preemptive LGFS; a fresh arrival to a full buffer replaces the
    /// stalest queued packet.
    NonPrmpLgfs,
    /// First-come first-served; a full buffer blocks the arriving packet.
    Fcfs,
    /// Non-preemptive last-come first-served; a full buffer evicts the
    /// oldest arrival.
    NonPrmpLcfs,
    /// Infeasible lower-bound policy: a packet counts as delivered when its
    /// transmission starts, while the link stays busy for the real duration.
    InfeasibleLb,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::PrmpLgfs,
        PolicyKind::NonPrmpLgfs,
        PolicyKind::Fcfs,
        PolicyKind::NonPrmpLcfs,
        PolicyKind::InfeasibleLb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::PrmpLgfs => "prmp_lgfs",
            PolicyKind::NonPrmpLgfs => "non_prmp_lgfs",
            PolicyKind::Fcfs => "fcfs",
            PolicyKind::NonPrmpLcfs => "non_prmp_lcfs",
            PolicyKind::InfeasibleLb => "infeasible_lb",
        }
    }

    pub fn is_preemptive(self) -> bool {
        self == PolicyKind::PrmpLgfs
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let valid: Vec<_> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidPolicy(format!(
                    "unknown policy {s:?}; valid kinds: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkOverride {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: PolicyKind,
}

/// A network-wide discipline, optionally with a buffer size applied to every
/// link and per-link discipline overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer: Option<Buffer>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<LinkOverride>,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            buffer: None,
            overrides: Vec::new(),
        }
    }

    pub fn with_buffer(kind: PolicyKind, buffer: Buffer) -> Self {
        Self {
            kind,
            buffer: Some(buffer),
            overrides: Vec::new(),
        }
    }

    /// Short human-readable label such as `non_prmp_lgfs[B=1]`.
    pub fn label(&self) -> String {
        let mut s = self.kind.name().to_string();
        if let Some(b) = self.buffer {
            s.push_str(&format!("[B={b}]"));
        }
        for o in &self.overrides {
            s.push_str(&format!("[{}-{}:{}]", o.from, o.to, o.kind));
        }
        s
    }

    pub fn is_preemptive(&self) -> bool {
        self.kind.is_preemptive() || self.overrides.iter().any(|o| o.kind.is_preemptive())
    }

    /// Effective network (buffer override applied) and per-link discipline.
    pub fn resolve(&self, net: &Network) -> Result<(Network, Vec<PolicyKind>)> {
        let net = match self.buffer {
            Some(b) => net.with_buffer(b),
            None => net.clone(),
        };
        let mut kinds = vec![self.kind; net.links().len()];
        for o in &self.overrides {
            let l = net.link_between(o.from, o.to).ok_or_else(|| {
                Error::InvalidPolicy(format!("override names missing link ({},{})", o.from, o.to))
            })?;
            kinds[l] = o.kind;
        }
        let any_ip = kinds.contains(&PolicyKind::InfeasibleLb);
        if any_ip {
            if kinds.iter().any(|&k| k != PolicyKind::InfeasibleLb) {
                return Err(Error::InvalidPolicy(
                    "infeasible_lb cannot be mixed with other disciplines".into(),
                ));
            }
            if !net.tree_restricted() {
                return Err(Error::InvalidPolicy(
                    "infeasible_lb requires a network where every non-gateway node has one incoming link"
                        .into(),
                ));
            }
            if net.links().iter().any(|l| l.buffer.is_zero()) {
                return Err(Error::InvalidPolicy(
                    "infeasible_lb requires buffer size >= 1 on every link".into(),
                ));
            }
        }
        Ok((net, kinds))
    }
}

/// A packet copy waiting at, or being sent over, one link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Queued {
    /// Index into the engine's packet table.
    pub slot: usize,
    pub id: u64,
    pub gen_time: f64,
    /// Time the copy became available at the link's origin node.
    pub arrived: f64,
    /// Arrival ordinal at this link, unique per copy.
    pub seq: u64,
}

impl Queued {
    /// Freshness order: larger generation time wins, ties go to the larger id.
    fn fresher_cmp(&self, other: &Self) -> Ordering {
        self.gen_time
            .total_cmp(&other.gen_time)
            .then(self.id.cmp(&other.id))
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Clone, Copy, Debug)]
struct FreshKey(Queued);

impl PartialEq for FreshKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for FreshKey {}
impl PartialOrd for FreshKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for FreshKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.fresher_cmp(&other.0)
    }
}

#[derive(Clone, Debug)]
enum Queue {
    /// Arrival order; FCFS pops the front, LCFS pops the back.
    Arrival(VecDeque<Queued>),
    /// Ordered by freshness for the LGFS kinds.
    Freshness(BTreeSet<FreshKey>),
}

impl Queue {
    fn len(&self) -> usize {
        match self {
            Queue::Arrival(q) => q.len(),
            Queue::Freshness(q) => q.len(),
        }
    }

    fn push(&mut self, q: Queued) {
        match self {
            Queue::Arrival(d) => d.push_back(q),
            Queue::Freshness(s) => {
                s.insert(FreshKey(q));
            }
        }
    }

    fn freshest(&self) -> Option<Queued> {
        match self {
            Queue::Freshness(s) => s.last().map(|k| k.0),
            Queue::Arrival(d) => d.iter().copied().max_by(|a, b| a.fresher_cmp(b)),
        }
    }

    fn stalest(&self) -> Option<Queued> {
        match self {
            Queue::Freshness(s) => s.first().map(|k| k.0),
            Queue::Arrival(d) => d.iter().copied().min_by(|a, b| a.fresher_cmp(b)),
        }
    }

    fn iter(&self) -> Box<dyn Iterator<Item = Queued> + '_> {
        match self {
            Queue::Arrival(d) => Box::new(d.iter().copied()),
            Queue::Freshness(s) => Box::new(s.iter().map(|k| k.0)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InService {
    pub packet: Queued,
    pub start: f64,
    /// Bumped on every service start; stale completion events are ignored.
    pub token: u64,
}

/// What a link did with an arriving packet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Action {
    /// Link was idle; the packet entered service.
    StartService,
    Enqueue,
    /// The packet displaced the one in service. The preempted packet went back
    /// to the queue if `requeued`, otherwise it was dropped.
    PreemptAndStart { preempted: Queued, requeued: bool },
    /// Full buffer: the packet took the place of `evicted`.
    ReplaceInQueue { evicted: Queued },
    /// Full buffer: the arriving packet was discarded.
    Drop,
}

#[derive(Clone, Debug)]
pub struct LinkState {
    kind: PolicyKind,
    buffer: Buffer,
    in_service: Option<InService>,
    queue: Queue,
    /// End of the current busy period (used by the infeasible policy).
    pub busy_until: f64,
    next_token: u64,
    next_seq: u64,
}

impl LinkState {
    pub fn new(kind: PolicyKind, buffer: Buffer) -> Self {
        let queue = match kind {
            PolicyKind::Fcfs | PolicyKind::NonPrmpLcfs => Queue::Arrival(VecDeque::new()),
            _ => Queue::Freshness(BTreeSet::new()),
        };
        Self {
            kind,
            buffer,
            in_service: None,
            queue,
            busy_until: 0.0,
            next_token: 0,
            next_seq: 0,
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn buffer(&self) -> Buffer {
        self.buffer
    }

    pub fn in_service(&self) -> Option<&InService> {
        self.in_service.as_ref()
    }

    pub fn is_busy(&self) -> bool {
        self.in_service.is_some()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn queued(&self) -> impl Iterator<Item = Queued> + '_ {
        self.queue.iter()
    }

    /// Generation time of the packet in service (α), 0 when idle.
    pub fn alpha(&self) -> f64 {
        self.in_service.map_or(0.0, |s| s.packet.gen_time)
    }

    /// Smallest generation time in the queue (δ), 0 when empty.
    pub fn delta(&self) -> f64 {
        self.queue.stalest().map_or(0.0, |q| q.gen_time)
    }

    /// Wraps a packet that just became available at the origin node.
    pub fn admit(&mut self, slot: usize, id: u64, gen_time: f64, t: f64) -> Queued {
        let seq = self.next_seq;
        self.next_seq += 1;
        Queued {
            slot,
            id,
            gen_time,
            arrived: t,
            seq,
        }
    }

    fn start(&mut self, packet: Queued, t: f64) {
        let token = self.next_token;
        self.next_token += 1;
        self.in_service = Some(InService {
            packet,
            start: t,
            token,
        });
    }

    pub fn on_arrival(&mut self, pkt: Queued, t: f64) -> Action {
        let Some(current) = self.in_service else {
            self.start(pkt, t);
            return Action::StartService;
        };
        match self.kind {
            PolicyKind::PrmpLgfs => {
                if pkt.fresher_cmp(&current.packet) == Ordering::Greater
                    && pkt.gen_time > current.packet.gen_time
                {
                    let preempted = current.packet;
                    let requeued = self.buffer.has_room(self.queue.len());
                    if requeued {
                        self.queue.push(preempted);
                    }
                    self.start(pkt, t);
                    Action::PreemptAndStart {
                        preempted,
                        requeued,
                    }
                } else {
                    self.enqueue_replacing_stalest(pkt)
                }
            }
            PolicyKind::NonPrmpLgfs | PolicyKind::InfeasibleLb => {
                self.enqueue_replacing_stalest(pkt)
            }
            PolicyKind::Fcfs => {
                if self.buffer.has_room(self.queue.len()) {
                    self.queue.push(pkt);
                    Action::Enqueue
                } else {
                    Action::Drop
                }
            }
            PolicyKind::NonPrmpLcfs => {
                if self.buffer.has_room(self.queue.len()) {
                    self.queue.push(pkt);
                    Action::Enqueue
                } else if self.buffer.is_zero() {
                    Action::Drop
                } else {
                    let Queue::Arrival(d) = &mut self.queue else {
                        unreachable!("lcfs uses an arrival-ordered queue")
                    };
                    let evicted = d.pop_front().expect("full non-empty queue");
                    d.push_back(pkt);
                    Action::ReplaceInQueue { evicted }
                }
            }
        }
    }

    fn enqueue_replacing_stalest(&mut self, pkt: Queued) -> Action {
        if self.buffer.has_room(self.queue.len()) {
            self.queue.push(pkt);
            return Action::Enqueue;
        }
        let Queue::Freshness(set) = &mut self.queue else {
            unreachable!("lgfs kinds use a freshness-ordered queue")
        };
        match set.first().copied() {
            Some(stalest) if pkt.gen_time > stalest.0.gen_time => {
                set.pop_first();
                set.insert(FreshKey(pkt));
                Action::ReplaceInQueue { evicted: stalest.0 }
            }
            _ => Action::Drop,
        }
    }

    /// Finishes the packet in service and starts the next one, if any.
    /// Returns the finished packet; the newly started one is available via
    /// [`LinkState::in_service`].
    pub fn on_completion(&mut self, t: f64) -> Result<Queued> {
        let done = self
            .in_service
            .take()
            .ok_or_else(|| Error::InvalidPolicy(format!("completion at t={t} on an idle link")))?;
        let next = match &mut self.queue {
            Queue::Freshness(s) => s.pop_last().map(|k| k.0),
            Queue::Arrival(d) => match self.kind {
                PolicyKind::NonPrmpLcfs => d.pop_back(),
                _ => d.pop_front(),
            },
        };
        if let Some(next) = next {
            self.start(next, t);
        }
        Ok(done.packet)
    }

    /// Arrival rule of the infeasible policy: identical to non-preemptive
    /// LGFS; the engine treats a started packet as delivered immediately.
    pub fn ip_on_arrival(&mut self, net: &Network, pkt: Queued, t: f64) -> Result<Action> {
        self.ensure_ip(net)?;
        Ok(self.on_arrival(pkt, t))
    }

    /// End of an infeasible-policy busy period.
    pub fn ip_on_completion(&mut self, net: &Network, t: f64) -> Result<Queued> {
        self.ensure_ip(net)?;
        self.on_completion(t)
    }

    fn ensure_ip(&self, net: &Network) -> Result<()> {
        if self.kind != PolicyKind::InfeasibleLb {
            return Err(Error::InvalidPolicy(format!(
                "{} link driven through the infeasible-policy hooks",
                self.kind
            )));
        }
        if !net.tree_restricted() {
            return Err(Error::InvalidPolicy(
                "infeasible_lb invoked on a network that is not tree-restricted".into(),
            ));
        }
        Ok(())
    }

    /// Freshest queued packet, if any (used in invariant checks).
    pub fn freshest_queued(&self) -> Option<Queued> {
        self.queue.freshest()
    }
}

/// Per-link states for a resolved policy.
pub fn link_states(net: &Network, kinds: &[PolicyKind]) -> Vec<LinkState> {
    net.links()
        .iter()
        .map(|l| LinkState::new(kinds[l.id], l.buffer))
        .collect::<Vec<_>>()
}

pub fn link_label(net: &Network, l: LinkId) -> String {
    let link = net.link(l);
    format!("({},{})", link.from, link.to)
}

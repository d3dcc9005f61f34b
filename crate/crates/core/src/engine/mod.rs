//! Discrete-event simulation of one policy over one packet sequence.

mod coupled;
mod event;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use coupled::{run_coupled, run_coupled_with, CouplingMode, CouplingTag};
use event::{EventKind, EventQueue};

use crate::dist::DistSpec;
use crate::error::{Error, Result};
use crate::model::{validate_packets, LinkId, Network, NodeId, Packet};
use crate::policy::{link_states, Action, LinkState, PolicyKind, PolicySpec};
use crate::stream::{Purpose, StreamKey};

/// A packet reaching a node: for a gateway the external arrival, otherwise a
/// completed transmission (or, under the infeasible policy, a transmission
/// start).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub packet: u64,
    pub gen_time: f64,
    pub time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceEnd {
    Completed,
    Preempted,
    /// Still in service at the horizon.
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub packet: u64,
    pub gen_time: f64,
    pub start: f64,
    pub end: f64,
    pub outcome: ServiceEnd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Packet copies offered to a link.
    pub offered: u64,
    /// Copies discarded for any reason (blocked, evicted, preempted without room).
    pub drops: u64,
    pub replacements: u64,
    pub preemptions: u64,
    pub completions: u64,
    pub ticks: u64,
}

/// How service durations are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceMode {
    /// The k-th service start on a link takes the k-th draw of its stream.
    Draws,
    /// Every link has a Poisson tick stream at its service rate; a busy link
    /// finishes its packet on a tick.
    Uniformized,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Keep the per-link service log (memory grows with the number of services).
    pub record_services: bool,
    /// Check queue bounds and work conservation after every event.
    pub check_invariants: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimOutput {
    pub policy: PolicySpec,
    pub horizon: f64,
    pub seed: u64,
    pub mode: ServiceMode,
    pub coupling: Option<CouplingTag>,
    /// Per node, in the order recorded (non-decreasing time).
    pub deliveries: Vec<Vec<Delivery>>,
    /// Per node, breakpoints `(t, U(t))` where the freshest generation time
    /// seen by the node increases. `U` is 0 before the first breakpoint.
    pub u_trace: Vec<Vec<(f64, f64)>>,
    /// Per link; empty unless `record_services` was set.
    pub services: Vec<Vec<ServiceRecord>>,
    pub counters: Counters,
}

impl SimOutput {
    pub fn node_count(&self) -> usize {
        self.deliveries.len()
    }

    /// `U_j(t)` for the given node.
    pub fn u_at(&self, node: NodeId, t: f64) -> f64 {
        let tr = &self.u_trace[node];
        let k = tr.partition_point(|&(bt, _)| bt <= t);
        if k == 0 {
            0.0
        } else {
            tr[k - 1].1
        }
    }

    /// Completion epochs on a link, sorted.
    pub fn completion_epochs(&self, link: LinkId) -> Vec<f64> {
        self.services[link]
            .iter()
            .filter(|r| r.outcome == ServiceEnd::Completed)
            .map(|r| r.end)
            .collect()
    }

    pub fn write_deliveries_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["node", "packet", "gen_time", "arrival_time"])?;
        for (node, ds) in self.deliveries.iter().enumerate() {
            for d in ds {
                out.write_record([
                    node.to_string(),
                    d.packet.to_string(),
                    d.gen_time.to_string(),
                    d.time.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_u_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["node", "time", "u"])?;
        for (node, tr) in self.u_trace.iter().enumerate() {
            for (t, u) in tr {
                out.write_record([node.to_string(), t.to_string(), u.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Simulates `policy` on `net` up to `horizon`, drawing service times from
/// streams keyed by `seed`.
pub fn run(
    net: &Network,
    packets: &[Packet],
    policy: &PolicySpec,
    horizon: f64,
    seed: u64,
) -> Result<SimOutput> {
    run_with(
        net,
        packets,
        policy,
        horizon,
        seed,
        ServiceMode::Draws,
        &RunOptions::default(),
    )
}

pub fn run_with(
    net: &Network,
    packets: &[Packet],
    policy: &PolicySpec,
    horizon: f64,
    seed: u64,
    mode: ServiceMode,
    opts: &RunOptions,
) -> Result<SimOutput> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    validate_packets(packets)?;
    for p in packets {
        for a in &p.arrivals {
            if !net.is_gateway(a.gateway) {
                return Err(Error::InvalidTraffic(format!(
                    "packet {} arrives at node {} which is not a gateway",
                    p.id, a.gateway
                )));
            }
        }
    }
    let (net, kinds) = policy.resolve(net)?;
    if mode == ServiceMode::Uniformized && !net.all_exponential() {
        return Err(Error::Coupling(
            "uniformized service requires exponential transmission times on every link".into(),
        ));
    }
    let mut sim = Sim::new(&net, packets, &kinds, horizon, seed, mode, opts);
    sim.run()?;
    Ok(SimOutput {
        policy: policy.clone(),
        horizon,
        seed,
        mode,
        coupling: None,
        deliveries: sim.deliveries,
        u_trace: sim.u_trace,
        services: sim.services,
        counters: sim.counters,
    })
}

/// Order-sensitive digest of a packet list, used to recognise coupled runs.
pub fn traffic_fingerprint(packets: &[Packet]) -> u64 {
    let mut h = DefaultHasher::new();
    packets.len().hash(&mut h);
    for p in packets {
        p.id.hash(&mut h);
        p.gen_time.to_bits().hash(&mut h);
        for a in &p.arrivals {
            a.gateway.hash(&mut h);
            a.time.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

struct Sim<'a> {
    net: &'a Network,
    packets: &'a [Packet],
    links: Vec<LinkState>,
    dists: Vec<DistSpec>,
    infeasible: bool,
    horizon: f64,
    mode: ServiceMode,
    opts: &'a RunOptions,
    queue: EventQueue,
    service_rngs: Vec<ChaCha8Rng>,
    tick_rngs: Vec<ChaCha8Rng>,
    /// Packets that reached a node at the current instant and still have to
    /// be offered to its outgoing links.
    pending: Vec<(NodeId, usize)>,
    open_service: Vec<Option<usize>>,
    u: Vec<f64>,
    deliveries: Vec<Vec<Delivery>>,
    u_trace: Vec<Vec<(f64, f64)>>,
    services: Vec<Vec<ServiceRecord>>,
    counters: Counters,
}

impl<'a> Sim<'a> {
    fn new(
        net: &'a Network,
        packets: &'a [Packet],
        kinds: &[PolicyKind],
        horizon: f64,
        seed: u64,
        mode: ServiceMode,
        opts: &'a RunOptions,
    ) -> Self {
        let nl = net.links().len();
        let nn = net.node_count();
        let rngs = |purpose| {
            (0..nl)
                .map(|l| StreamKey::new(seed, purpose, l as u64).rng())
                .collect::<Vec<_>>()
        };
        Self {
            net,
            packets,
            links: link_states(net, kinds),
            dists: net.links().iter().map(|l| l.dist.clone()).collect(),
            infeasible: kinds.first() == Some(&PolicyKind::InfeasibleLb),
            horizon,
            mode,
            opts,
            queue: EventQueue::default(),
            service_rngs: rngs(Purpose::Service),
            tick_rngs: if mode == ServiceMode::Uniformized {
                rngs(Purpose::Tick)
            } else {
                Vec::new()
            },
            pending: Vec::new(),
            open_service: vec![None; nl],
            u: vec![0.0; nn],
            deliveries: vec![Vec::new(); nn],
            u_trace: vec![Vec::new(); nn],
            services: vec![Vec::new(); nl],
            counters: Counters::default(),
        }
    }

    fn tick_gap(&mut self, l: LinkId) -> f64 {
        let rate = self.dists[l].exponential_rate().expect("checked exponential");
        DistSpec::Exponential { rate }.sample(&mut self.tick_rngs[l])
    }

    fn run(&mut self) -> Result<()> {
        let mut arrivals: Vec<(f64, NodeId, usize)> = self
            .packets
            .iter()
            .enumerate()
            .flat_map(|(slot, p)| p.arrivals.iter().map(move |a| (a.time, a.gateway, slot)))
            .filter(|a| a.0 <= self.horizon)
            .collect();
        arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        if self.mode == ServiceMode::Uniformized {
            for l in 0..self.links.len() {
                let t = self.tick_gap(l);
                self.queue.push(t, EventKind::Tick { link: l });
            }
        }

        let mut next_arrival = 0;
        loop {
            let link_t = self.queue.peek_time().filter(|&t| t <= self.horizon);
            let ext_t = arrivals.get(next_arrival).map(|a| a.0);
            match (link_t, ext_t) {
                (None, None) => break,
                (Some(lt), et) if et.is_none_or(|et| lt <= et) => {
                    let ev = self.queue.pop().expect("peeked");
                    self.link_event(ev.time, ev.kind)?;
                }
                (_, Some(_)) => {
                    let (t, g, slot) = arrivals[next_arrival];
                    next_arrival += 1;
                    self.reach(g, slot, t);
                    self.drain(t)?;
                }
                (Some(_), None) => unreachable!(),
            }
            if self.opts.check_invariants {
                self.check_invariants()?;
            }
        }

        for l in 0..self.links.len() {
            if let Some(i) = self.open_service[l].take() {
                let rec = &mut self.services[l][i];
                rec.end = self.horizon;
                rec.outcome = ServiceEnd::Truncated;
            }
        }
        Ok(())
    }

    fn link_event(&mut self, t: f64, kind: EventKind) -> Result<()> {
        let link = match kind {
            EventKind::Completion { link, token } => {
                if self.links[link].in_service().map(|s| s.token) != Some(token) {
                    return Ok(());
                }
                link
            }
            EventKind::Tick { link } => {
                self.counters.ticks += 1;
                let gap = self.tick_gap(link);
                self.queue.push(t + gap, EventKind::Tick { link });
                if !self.links[link].is_busy() {
                    return Ok(());
                }
                link
            }
        };
        let done = self.links[link].on_completion(t)?;
        self.counters.completions += 1;
        self.close_service(link, t, ServiceEnd::Completed);
        if self.links[link].is_busy() {
            self.started(link, t);
        }
        if !self.infeasible {
            let to = self.net.link(link).to;
            self.reach(to, done.slot, t);
        }
        self.drain(t)
    }

    /// Records the arrival of a packet at a node and queues it for forwarding.
    fn reach(&mut self, node: NodeId, slot: usize, t: f64) {
        let p = &self.packets[slot];
        self.deliveries[node].push(Delivery {
            packet: p.id,
            gen_time: p.gen_time,
            time: t,
        });
        if p.gen_time > self.u[node] {
            self.u[node] = p.gen_time;
            self.u_trace[node].push((t, p.gen_time));
        }
        self.pending.push((node, slot));
    }

    fn drain(&mut self, t: f64) -> Result<()> {
        while let Some((node, slot)) = self.pending.pop() {
            let (id, gen_time) = (self.packets[slot].id, self.packets[slot].gen_time);
            for k in 0..self.net.out_links(node).len() {
                let l = self.net.out_links(node)[k];
                self.counters.offered += 1;
                let q = self.links[l].admit(slot, id, gen_time, t);
                let action = if self.infeasible {
                    self.links[l].ip_on_arrival(self.net, q, t)?
                } else {
                    self.links[l].on_arrival(q, t)
                };
                match action {
                    Action::StartService => self.started(l, t),
                    Action::Enqueue => {}
                    Action::PreemptAndStart { requeued, .. } => {
                        self.counters.preemptions += 1;
                        if !requeued {
                            self.counters.drops += 1;
                        }
                        self.close_service(l, t, ServiceEnd::Preempted);
                        self.started(l, t);
                    }
                    Action::ReplaceInQueue { .. } => {
                        self.counters.replacements += 1;
                        self.counters.drops += 1;
                    }
                    Action::Drop => self.counters.drops += 1,
                }
            }
        }
        Ok(())
    }

    /// Bookkeeping after a link has put a packet into service at `t`.
    fn started(&mut self, l: LinkId, t: f64) {
        let s = *self.links[l].in_service().expect("service just started");
        if self.mode == ServiceMode::Draws {
            let x = self.dists[l].sample(&mut self.service_rngs[l]);
            self.queue.push(
                t + x,
                EventKind::Completion {
                    link: l,
                    token: s.token,
                },
            );
            self.links[l].busy_until = t + x;
        }
        if self.opts.record_services {
            self.open_service[l] = Some(self.services[l].len());
            self.services[l].push(ServiceRecord {
                packet: s.packet.id,
                gen_time: s.packet.gen_time,
                start: t,
                end: f64::NAN,
                outcome: ServiceEnd::Truncated,
            });
        }
        if self.infeasible {
            let to = self.net.link(l).to;
            self.reach(to, s.packet.slot, t);
        }
    }

    fn close_service(&mut self, l: LinkId, t: f64, outcome: ServiceEnd) {
        if let Some(i) = self.open_service[l].take() {
            let rec = &mut self.services[l][i];
            rec.end = t;
            rec.outcome = outcome;
        }
    }

    fn check_invariants(&self) -> Result<()> {
        for (l, st) in self.links.iter().enumerate() {
            if !st.buffer().has_room(st.queue_len().saturating_sub(1)) && st.queue_len() > 0 {
                return Err(Error::InvalidPolicy(format!(
                    "link {l}: queue length {} exceeds buffer {}",
                    st.queue_len(),
                    st.buffer()
                )));
            }
            if st.queue_len() > 0 && !st.is_busy() {
                return Err(Error::InvalidPolicy(format!(
                    "link {l}: idle with {} queued packets",
                    st.queue_len()
                )));
            }
        }
        for (node, ds) in self.deliveries.iter().enumerate() {
            if let Some(d) = ds.last() {
                if d.time < d.gen_time {
                    return Err(Error::InvalidPolicy(format!(
                        "node {node}: packet {} delivered before generation",
                        d.packet
                    )));
                }
                if ds.len() >= 2 && ds[ds.len() - 2].time > d.time {
                    return Err(Error::InvalidPolicy(format!(
                        "node {node}: delivery times out of order"
                    )));
                }
            }
        }
        Ok(())
    }
}

//! Several policies driven by the same traffic and, depending on the mode,
//! the same service randomness.

use serde::{Deserialize, Serialize};

use super::{run_with, traffic_fingerprint, RunOptions, ServiceMode, SimOutput};
use crate::error::{Error, Result};
use crate::model::{Network, Packet};
use crate::policy::PolicySpec;
use crate::stream::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Fresh service streams per policy.
    Independent,
    /// The k-th service on a link uses the same draw under every policy.
    SharedDraws,
    /// Shared per-link Poisson ticks; exponential links only.
    Uniformization,
}

/// Marks outputs that came out of the same coupled execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingTag {
    pub mode: CouplingMode,
    pub seed: u64,
    pub traffic: u64,
}

impl CouplingTag {
    /// Whether two outputs share randomness sample by sample.
    pub fn is_coupled_with(&self, other: &CouplingTag) -> bool {
        self == other && self.mode != CouplingMode::Independent
    }
}

pub fn run_coupled(
    net: &Network,
    packets: &[Packet],
    policies: &[PolicySpec],
    mode: CouplingMode,
    horizon: f64,
    seed: u64,
) -> Result<Vec<SimOutput>> {
    run_coupled_with(net, packets, policies, mode, horizon, seed, &RunOptions::default())
}

pub fn run_coupled_with(
    net: &Network,
    packets: &[Packet],
    policies: &[PolicySpec],
    mode: CouplingMode,
    horizon: f64,
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<SimOutput>> {
    match mode {
        CouplingMode::Uniformization if !net.all_exponential() => {
            return Err(Error::Coupling(
                "uniformization requires exponential transmission times on every link".into(),
            ));
        }
        CouplingMode::SharedDraws => {
            if let Some(p) = policies.iter().find(|p| p.is_preemptive()) {
                return Err(Error::Coupling(format!(
                    "shared_draws requires non-preemptive policies, got {}",
                    p.label()
                )));
            }
        }
        _ => {}
    }
    let tag = CouplingTag {
        mode,
        seed,
        traffic: traffic_fingerprint(packets),
    };
    policies
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (service_mode, run_seed) = match mode {
                CouplingMode::Uniformization => (ServiceMode::Uniformized, seed),
                CouplingMode::SharedDraws => (ServiceMode::Draws, seed),
                CouplingMode::Independent => (ServiceMode::Draws, derive_seed(seed, i as u64 + 1)),
            };
            let mut out = run_with(net, packets, p, horizon, run_seed, service_mode, opts)?;
            out.coupling = Some(tag);
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DistSpec;
    use crate::model::{Buffer, LinkSpec, NetworkSpec};
    use crate::policy::PolicyKind;
    use crate::traffic::TrafficSpec;

    fn net(dist: DistSpec) -> Network {
        Network::build(&NetworkSpec {
            nodes: 3,
            links: vec![
                LinkSpec { from: 0, to: 1, buffer: Buffer::Infinite, dist: dist.clone() },
                LinkSpec { from: 1, to: 2, buffer: Buffer::Infinite, dist },
            ],
            gateways: vec![0],
        })
        .unwrap()
    }

    #[test]
    fn mode_validation() {
        let pk = TrafficSpec::erlang2(1.0, Default::default()).generate(10.0, 1).unwrap();
        let g = net(DistSpec::gamma_with_mean(2.0, 1.0));
        let pols = [PolicySpec::new(PolicyKind::Fcfs)];
        assert!(run_coupled(&g, &pk, &pols, CouplingMode::Uniformization, 10.0, 1).is_err());
        let prmp = [PolicySpec::new(PolicyKind::PrmpLgfs)];
        assert!(run_coupled(&g, &pk, &prmp, CouplingMode::SharedDraws, 10.0, 1).is_err());
        assert!(run_coupled(&g, &pk, &prmp, CouplingMode::Independent, 10.0, 1).is_ok());
    }

    #[test]
    fn independent_outputs_differ() {
        let pk = TrafficSpec::erlang2(1.0, Default::default()).generate(100.0, 1).unwrap();
        let g = net(DistSpec::Exponential { rate: 1.0 });
        let p = PolicySpec::new(PolicyKind::Fcfs);
        let outs =
            run_coupled(&g, &pk, &[p.clone(), p], CouplingMode::Independent, 100.0, 1).unwrap();
        assert_ne!(outs[0].deliveries[2], outs[1].deliveries[2]);
        assert!(!outs[0].coupling.unwrap().is_coupled_with(&outs[1].coupling.unwrap()));
    }

    #[test]
    fn shared_draws_reorder_without_reshaping() {
        let pk = TrafficSpec::erlang2(0.9, Default::default()).generate(300.0, 5).unwrap();
        let g = net(DistSpec::gamma_with_mean(3.0, 1.0));
        let opts = RunOptions { record_services: true, check_invariants: true };
        let outs = run_coupled_with(
            &g,
            &pk,
            &[PolicySpec::new(PolicyKind::NonPrmpLgfs), PolicySpec::new(PolicyKind::Fcfs)],
            CouplingMode::SharedDraws,
            300.0,
            5,
            &opts,
        )
        .unwrap();
        for l in 0..2 {
            assert_eq!(outs[0].completion_epochs(l), outs[1].completion_epochs(l));
        }
    }
}

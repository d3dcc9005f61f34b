//! Update-packet generation and CSV trace import/export.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::DistSpec;
use crate::error::{Error, Result};
use crate::model::{validate_packets, GatewayArrival, NodeId, Packet};
use crate::stream::{Purpose, StreamKey};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenProcess {
    /// i.i.d. inter-generation times; the first packet is generated after
    /// one draw, never at t = 0.
    Renewal { inter: DistSpec },
    /// Packets read from a CSV trace; `delay` and `gateways` are ignored.
    Trace { path: PathBuf },
}

/// Delay between generation and arrival at a gateway.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatewayDelay {
    #[default]
    Zero,
    /// `small` with probability `p`, `large` otherwise.
    TwoPoint { small: f64, large: f64, p: f64 },
    /// Per-packet delays, indexed by generation order.
    Explicit { delays: Vec<f64> },
    Dist { dist: DistSpec },
}

fn default_gateways() -> Vec<NodeId> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub generation: GenProcess,
    #[serde(default)]
    pub delay: GatewayDelay,
    /// Every generated packet arrives at each of these gateways.
    #[serde(default = "default_gateways")]
    pub gateways: Vec<NodeId>,
}

impl TrafficSpec {
    /// Erlang-2 renewal generation with mean inter-generation time `1/rate`.
    pub fn erlang2(rate: f64, delay: GatewayDelay) -> Self {
        Self {
            generation: GenProcess::Renewal {
                inter: DistSpec::erlang_with_mean(2, 1.0 / rate),
            },
            delay,
            gateways: default_gateways(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gateways.is_empty() {
            return Err(Error::InvalidTraffic("gateway list is empty".into()));
        }
        match &self.generation {
            GenProcess::Renewal { inter } => inter.validate()?,
            GenProcess::Trace { .. } => {}
        }
        match &self.delay {
            GatewayDelay::Zero => Ok(()),
            GatewayDelay::TwoPoint { small, large, p } => {
                if *small < 0.0 || *large < 0.0 || !small.is_finite() || !large.is_finite() {
                    Err(Error::InvalidTraffic("negative gateway delay".into()))
                } else if !(0.0..=1.0).contains(p) {
                    Err(Error::InvalidTraffic(format!("p must be in [0, 1], got {p}")))
                } else {
                    Ok(())
                }
            }
            GatewayDelay::Explicit { delays } => {
                if delays.iter().any(|d| !(*d >= 0.0)) {
                    Err(Error::InvalidTraffic("negative gateway delay".into()))
                } else {
                    Ok(())
                }
            }
            GatewayDelay::Dist { dist } => dist.validate(),
        }
    }

    /// All packets generated in `(0, horizon]`, ids starting at 1.
    pub fn generate(&self, horizon: f64, seed: u64) -> Result<Vec<Packet>> {
        self.validate()?;
        if !(horizon > 0.0) {
            return Err(Error::InvalidTraffic(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let inter = match &self.generation {
            GenProcess::Renewal { inter } => inter,
            GenProcess::Trace { path } => {
                let mut packets = load_trace(path)?;
                packets.retain(|p| p.gen_time <= horizon);
                return Ok(packets);
            }
        };

        let mut gen_rng = StreamKey::new(seed, Purpose::Generation, 0).rng();
        let mut delay_rngs: Vec<_> = self
            .gateways
            .iter()
            .map(|&g| StreamKey::new(seed, Purpose::GatewayDelay, g as u64).rng())
            .collect();

        let mut packets = Vec::new();
        let mut t = 0.0;
        loop {
            t += inter.sample(&mut gen_rng);
            if t > horizon {
                break;
            }
            let idx = packets.len();
            let mut arrivals = Vec::with_capacity(self.gateways.len());
            for (g, rng) in self.gateways.iter().zip(delay_rngs.iter_mut()) {
                let d = match &self.delay {
                    GatewayDelay::Zero => 0.0,
                    GatewayDelay::TwoPoint { small, large, p } => {
                        if rng.random::<f64>() < *p {
                            *small
                        } else {
                            *large
                        }
                    }
                    GatewayDelay::Explicit { delays } => *delays.get(idx).ok_or_else(|| {
                        Error::InvalidTraffic(format!(
                            "explicit delay list has {} entries but packet {} was generated",
                            delays.len(),
                            idx + 1
                        ))
                    })?,
                    GatewayDelay::Dist { dist } => dist.sample(rng),
                };
                arrivals.push(GatewayArrival {
                    gateway: *g,
                    time: t + d,
                });
            }
            packets.push(Packet {
                id: idx as u64 + 1,
                gen_time: t,
                arrivals,
            });
        }
        Ok(packets)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    id: u64,
    gen_time: f64,
    gateway: NodeId,
    arrival_time: f64,
}

pub fn write_trace<W: Write>(packets: &[Packet], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    // header is written explicitly so an empty trace still carries it
    out.write_record(["id", "gen_time", "gateway", "arrival_time"])?;
    for p in packets {
        for a in &p.arrivals {
            out.write_record(&[
                p.id.to_string(),
                p.gen_time.to_string(),
                a.gateway.to_string(),
                a.time.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<Packet>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut packets: Vec<Packet> = Vec::new();
    for (i, row) in rdr.deserialize::<TraceRow>().enumerate() {
        let row_no = i + 2; // 1-based, after header
        let row = row.map_err(|e| Error::Trace {
            row: row_no,
            msg: format!("malformed row: {e}"),
        })?;
        match packets.last_mut() {
            Some(p) if p.id == row.id => {
                if p.gen_time != row.gen_time {
                    return Err(Error::Trace {
                        row: row_no,
                        msg: format!("packet {} has conflicting generation times", row.id),
                    });
                }
                p.arrivals.push(GatewayArrival {
                    gateway: row.gateway,
                    time: row.arrival_time,
                });
            }
            Some(p) if p.id > row.id => {
                return Err(Error::Trace {
                    row: row_no,
                    msg: format!("rows not sorted by id ({} after {})", row.id, p.id),
                })
            }
            _ => packets.push(Packet::at_gateway(
                row.id,
                row.gen_time,
                row.gateway,
                row.arrival_time,
            )),
        }
        validate_packets(&packets[packets.len().saturating_sub(2)..]).map_err(|e| match e {
            Error::Trace { msg, .. } => Error::Trace { row: row_no, msg },
            e => e,
        })?;
    }
    Ok(packets)
}

pub fn save_trace(packets: &[Packet], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trace(packets, std::io::BufWriter::new(file))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<Packet>> {
    let file = std::fs::File::open(path)?;
    read_trace(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_clock() {
        let spec = TrafficSpec {
            generation: GenProcess::Renewal {
                inter: DistSpec::Deterministic { value: 1.0 },
            },
            delay: GatewayDelay::Zero,
            gateways: vec![0],
        };
        let p = spec.generate(3.0, 1).unwrap();
        let s: Vec<f64> = p.iter().map(|p| p.gen_time).collect();
        assert_eq!(s, vec![1.0, 2.0, 3.0]);
        assert!(p.iter().all(|p| p.arrivals[0].time == p.gen_time));
        assert_eq!(p[2].id, 3);
    }

    #[test]
    fn two_point_delays() {
        let spec = TrafficSpec::erlang2(
            1.0,
            GatewayDelay::TwoPoint {
                small: 1.0,
                large: 100.0,
                p: 0.5,
            },
        );
        let p = spec.generate(20_000.0, 9).unwrap();
        let n = p.len() as f64;
        let small = p
            .iter()
            .filter(|p| {
                let d = p.arrivals[0].time - p.gen_time;
                assert!((d - 1.0).abs() < 1e-9 || (d - 100.0).abs() < 1e-9);
                (d - 1.0).abs() < 1e-9
            })
            .count() as f64;
        let se = (0.25 / n).sqrt();
        assert!((small / n - 0.5).abs() < 4.0 * se);
        let out_of_order = p
            .windows(2)
            .filter(|w| w[1].arrivals[0].time < w[0].arrivals[0].time)
            .count();
        assert!(out_of_order > 0);
    }

    #[test]
    fn erlang_generation_mean() {
        let lambda = 30.0;
        let spec = TrafficSpec::erlang2(lambda, GatewayDelay::Zero);
        let p = spec.generate(100_000.0 / lambda, 5).unwrap();
        let gaps: Vec<f64> = std::iter::once(p[0].gen_time)
            .chain(p.windows(2).map(|w| w[1].gen_time - w[0].gen_time))
            .take(100_000)
            .collect();
        let n = gaps.len() as f64;
        assert!(n > 90_000.0);
        let mean = gaps.iter().sum::<f64>() / n;
        let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.0 / lambda).abs() < 2.0 * (var / n).sqrt());
    }

    #[test]
    fn negative_delay_rejected() {
        let spec = TrafficSpec {
            generation: GenProcess::Renewal {
                inter: DistSpec::Exponential { rate: 1.0 },
            },
            delay: GatewayDelay::TwoPoint {
                small: -1.0,
                large: 1.0,
                p: 0.5,
            },
            gateways: vec![0],
        };
        assert!(spec.generate(10.0, 0).is_err());
    }

    #[test]
    fn trace_round_trip() {
        let spec = TrafficSpec::erlang2(
            2.0,
            GatewayDelay::TwoPoint {
                small: 1.0,
                large: 100.0,
                p: 0.5,
            },
        );
        let packets = spec.generate(600.0, 3).unwrap();
        assert!(packets.len() >= 1000);
        let packets = &packets[..1000];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        save_trace(packets, &path).unwrap();
        assert_eq!(load_trace(&path).unwrap(), packets);
    }

    #[test]
    fn trace_validation() {
        let bad = "id,gen_time,gateway,arrival_time\n1,2.0,0,1.0\n";
        let err = read_trace(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("arrival precedes generation"), "{err}");

        let bad = "id,gen_time,gateway,arrival_time\n1,2.0,0,2.0\n2,1.0,0,3.0\n";
        assert!(read_trace(bad.as_bytes()).is_err());

        let bad = "id,gen_time,gateway,arrival_time\n1,abc,0,2.0\n";
        let err = read_trace(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("malformed"), "{err}");

        let empty = "id,gen_time,gateway,arrival_time\n";
        assert!(read_trace(empty.as_bytes()).unwrap().is_empty());
        assert!(read_trace("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn multi_gateway_rows_grouped() {
        let text = "id,gen_time,gateway,arrival_time\n1,0.5,0,0.5\n1,0.5,3,0.9\n2,0.7,0,0.8\n";
        let p = read_trace(text.as_bytes()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].arrivals.len(), 2);
        let mut buf = Vec::new();
        write_trace(&p, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }
}

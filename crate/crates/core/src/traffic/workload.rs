use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::types::FiveTuple;
use super::TrafficError;

/// Default virtual IP that generated traffic targets.
pub const DEFAULT_VIP: Ipv4Addr = Ipv4Addr::new(10, 255, 0, 1);

/// Static file sizes served by the IO-bound profile, in bytes.
pub const FILE_SIZES: [u64; 7] = [10_000, 20_000, 50_000, 75_000, 100_000, 200_000, 500_000];

/// Reply bytes generated per unit of CPU work by compute-bound requests.
const REPLY_BYTES_PER_WORK: f64 = 200_000.0;

/// What a single flow asks of its server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlowProfile {
    /// Exponentially distributed work and request size (CPU-bound).
    #[default]
    Exponential,
    /// Static files of fixed sizes; work proportional to the file (IO-bound).
    FixedFiles,
    /// Per-flow coin flip between the two profiles above.
    Mixture,
}

/// Piecewise-constant arrival rate: `rate` applies from `start` onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateStep {
    pub start: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Flow arrivals per second (Poisson).
    pub arrival_rate: f64,
    /// Mean work per flow, in seconds of service at capacity 1.
    pub mean_duration: f64,
    /// Mean client-to-VIP request bytes per flow.
    pub mean_size: f64,
    pub n_servers: usize,
    pub server_capacities: Vec<f64>,
    /// Cores per server; empty means one core each.
    #[serde(default)]
    pub server_cores: Vec<u32>,
    pub duration_s: f64,
    pub seed: u64,
    /// Additional SYN-only flows per second.
    #[serde(default)]
    pub flood_rate: Option<f64>,
    #[serde(default)]
    pub profile: FlowProfile,
    /// Overrides `arrival_rate` piecewise when non-empty.
    #[serde(default)]
    pub schedule: Vec<RateStep>,
    #[serde(default = "default_vip")]
    pub vip: Ipv4Addr,
}

fn default_vip() -> Ipv4Addr {
    DEFAULT_VIP
}

impl WorkloadSpec {
    pub fn new(arrival_rate: f64, duration_s: f64, capacities: Vec<f64>, seed: u64) -> Self {
        Self {
            arrival_rate,
            mean_duration: 0.05,
            mean_size: 600.0,
            n_servers: capacities.len(),
            server_capacities: capacities,
            server_cores: Vec::new(),
            duration_s,
            seed,
            flood_rate: None,
            profile: FlowProfile::Exponential,
            schedule: Vec::new(),
            vip: DEFAULT_VIP,
        }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(TrafficError::Config(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("arrival_rate", self.arrival_rate)?;
        positive("mean_duration", self.mean_duration)?;
        positive("mean_size", self.mean_size)?;
        if let Some(f) = self.flood_rate {
            positive("flood_rate", f)?;
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(TrafficError::Config(format!(
                "duration_s must be >= 0, got {}",
                self.duration_s
            )));
        }
        if self.n_servers == 0 || self.n_servers > 256 {
            return Err(TrafficError::Config(format!(
                "n_servers must be in 1..=256, got {}",
                self.n_servers
            )));
        }
        if self.server_capacities.len() != self.n_servers {
            return Err(TrafficError::Config(format!(
                "n_servers = {} but {} capacities given",
                self.n_servers,
                self.server_capacities.len()
            )));
        }
        for &c in &self.server_capacities {
            positive("server capacity", c)?;
        }
        if !self.server_cores.is_empty()
            && (self.server_cores.len() != self.n_servers || self.server_cores.contains(&0))
        {
            return Err(TrafficError::Config(format!(
                "server_cores must list {} positive values",
                self.n_servers
            )));
        }
        let mut prev = f64::NEG_INFINITY;
        for step in &self.schedule {
            positive("scheduled rate", step.rate)?;
            if step.start < prev {
                return Err(TrafficError::Config("schedule must be sorted by start".into()));
            }
            prev = step.start;
        }
        Ok(())
    }

    /// Arrival rate in force at time `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.schedule
            .iter()
            .take_while(|s| s.start <= t)
            .last()
            .map_or(self.arrival_rate, |s| s.rate)
    }

    pub fn cluster(&self) -> super::Cluster {
        super::Cluster::with_cores(&self.server_capacities, &self.server_cores)
    }

    /// Expected work per flow under this profile.
    pub fn mean_work(&self) -> f64 {
        self.mean_duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowKind {
    Request {
        /// Client-to-VIP payload bytes.
        request_bytes: u64,
        /// Server-side work units.
        work: f64,
        /// Bytes sent back to the client (visible only through ACK numbers).
        response_bytes: u64,
    },
    /// Spoofed SYN that never completes a handshake.
    Flood,
}

/// A flow about to arrive at the balancer.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowArrival {
    pub id: u64,
    pub t: f64,
    pub fid: FiveTuple,
    pub kind: FlowKind,
    /// Client-side handshake round trip in seconds.
    pub rtt: f64,
}

impl FlowArrival {
    pub fn is_flood(&self) -> bool {
        matches!(self.kind, FlowKind::Flood)
    }
}

/// Draws every flow arrival of `spec`, legitimate and flood, sorted by time.
///
/// All randomness comes from a ChaCha8 stream seeded with `spec.seed`, so the
/// result is identical on every platform.
pub fn gen_arrivals(spec: &WorkloadSpec) -> Result<Vec<FlowArrival>, TrafficError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut flows = Vec::new();

    let work_dist = Exp::new(1.0 / spec.mean_duration).expect("validated rate");
    let size_dist = Exp::new(1.0 / spec.mean_size).expect("validated size");
    let rtt_dist = Exp::new(1.0 / 0.0005).expect("constant");
    let mean_file = FILE_SIZES.iter().sum::<u64>() as f64 / FILE_SIZES.len() as f64;

    // Legitimate flows: piecewise-homogeneous Poisson process. At a rate
    // boundary the pending gap is redrawn, which is exact by memorylessness.
    let mut t = 0.0;
    loop {
        let rate = spec.rate_at(t);
        let gap = Exp::new(rate).expect("validated rate").sample(&mut rng);
        let next_boundary = spec
            .schedule
            .iter()
            .map(|s| s.start)
            .find(|&s| s > t)
            .unwrap_or(f64::INFINITY);
        if t + gap >= next_boundary {
            t = next_boundary;
            continue;
        }
        t += gap;
        if t >= spec.duration_s {
            break;
        }
        let profile = match spec.profile {
            FlowProfile::Mixture => {
                if rng.random::<bool>() {
                    FlowProfile::Exponential
                } else {
                    FlowProfile::FixedFiles
                }
            }
            p => p,
        };
        let request_bytes = (size_dist.sample(&mut rng).ceil() as u64).max(1);
        let (work, response_bytes) = match profile {
            FlowProfile::FixedFiles => {
                let file = FILE_SIZES[rng.random_range(0..FILE_SIZES.len())];
                (spec.mean_duration * file as f64 / mean_file, file)
            }
            _ => {
                let w = work_dist.sample(&mut rng);
                (w, (w * REPLY_BYTES_PER_WORK).ceil() as u64 + 1)
            }
        };
        let fid = client_tuple(&mut rng, spec.vip, [10, 0, 0, 0], 8);
        let rtt = 0.0005 + rtt_dist.sample(&mut rng);
        flows.push(FlowArrival {
            id: 0,
            t,
            fid,
            kind: FlowKind::Request {
                request_bytes,
                work: work.max(1e-9),
                response_bytes,
            },
            rtt,
        });
    }

    if let Some(flood) = spec.flood_rate {
        // Independent stream so enabling the flood leaves legitimate flows intact.
        let mut frng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5f1f_100d_0000_0001);
        let gap_dist = Exp::new(flood).expect("validated rate");
        let mut t = 0.0;
        loop {
            t += gap_dist.sample(&mut frng);
            if t >= spec.duration_s {
                break;
            }
            let fid = client_tuple(&mut frng, spec.vip, [172, 16, 0, 0], 12);
            flows.push(FlowArrival {
                id: 0,
                t,
                fid,
                kind: FlowKind::Flood,
                rtt: 0.0,
            });
        }
    }

    flows.sort_by(|a, b| a.t.total_cmp(&b.t));
    for (i, f) in flows.iter_mut().enumerate() {
        f.id = i as u64;
    }
    Ok(flows)
}

fn client_tuple(rng: &mut ChaCha8Rng, vip: Ipv4Addr, base: [u8; 4], prefix: u32) -> FiveTuple {
    let host_bits = 32 - prefix;
    let host = rng.random::<u32>() & ((1u32 << host_bits) - 1);
    let src = Ipv4Addr::from(u32::from_be_bytes(base) | host.max(1));
    let port = rng.random_range(1024..=u16::MAX);
    FiveTuple::tcp(src, port, vip, 80)
}

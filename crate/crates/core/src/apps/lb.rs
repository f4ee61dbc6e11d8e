//! Layer-4 balancing policies and a paired-replay benchmark over the
//! simulator.
//!
//! RLB runs in the data plane next to the flow table, so it reads ongoing
//! flow counts straight from the live counter cache; its weights come from
//! the action slots a control loop refreshes every 250 ms from sampled flow
//! durations.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::extract::{ExtractConfig, Extractor};
use super::features::exp_decay_mean;
use super::AppError;
use crate::store::{Action, Counter, ObservationFrame, RegionConfig, Signal, VipRegion};
use crate::traffic::{gen_arrivals, FiveTuple, FlowRecord, Simulation, WorkloadSpec};

pub const DEFAULT_REFRESH: f64 = 0.25;
/// Added to the decayed mean duration before taking the reciprocal.
pub const WEIGHT_EPS: f64 = 1e-3;
/// Time constant of the decayed mean duration.
pub const DECAY_TAU: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbPolicy {
    Ecmp,
    /// Hash selection biased by fixed weights, one per server.
    WcmpStatic { weights: Vec<f64> },
    /// Weights proportional to `1 / (queue length + 1)`, polled.
    WcmpActive { poll_interval: f64 },
    Rlb { refresh: f64 },
}

impl LbPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            LbPolicy::Ecmp => "ecmp",
            LbPolicy::WcmpStatic { .. } => "wcmp",
            LbPolicy::WcmpActive { .. } => "awcmp",
            LbPolicy::Rlb { .. } => "rlb",
        }
    }
}

impl FromStr for LbPolicy {
    type Err = AppError;

    /// Parses a policy name; `wcmp` gets empty weights, meaning all equal.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ecmp" => Ok(LbPolicy::Ecmp),
            "wcmp" => Ok(LbPolicy::WcmpStatic { weights: Vec::new() }),
            "awcmp" => Ok(LbPolicy::WcmpActive { poll_interval: DEFAULT_REFRESH }),
            "rlb" => Ok(LbPolicy::Rlb { refresh: DEFAULT_REFRESH }),
            other => Err(AppError::Config(format!(
                "unknown policy {other:?} (expected ecmp, wcmp, awcmp or rlb)"
            ))),
        }
    }
}

/// What a balancer knows when a new flow arrives. `loads` and `weights`
/// are indexed by server id.
#[derive(Debug, Clone, PartialEq)]
pub struct LbState {
    pub policy: LbPolicy,
    /// Servers accepting new flows, ascending.
    pub active: Vec<usize>,
    /// Ongoing flows per server.
    pub loads: Vec<f64>,
    /// Current weight per server, all positive.
    pub weights: Vec<f64>,
}

impl LbState {
    pub fn new(policy: LbPolicy, n_servers: usize) -> Self {
        let weights = match &policy {
            LbPolicy::WcmpStatic { weights } if !weights.is_empty() => weights.clone(),
            _ => vec![1.0; n_servers],
        };
        Self {
            policy,
            active: (0..n_servers).collect(),
            loads: vec![0.0; n_servers],
            weights,
        }
    }
}

fn weighted_hash_pick(digest: u64, active: &[usize], weights: &[f64]) -> usize {
    let total: f64 = active.iter().map(|&i| weights[i]).sum();
    let u = (digest >> 11) as f64 / (1u64 << 53) as f64;
    let mut target = u * total;
    for &i in active {
        if target < weights[i] {
            return i;
        }
        target -= weights[i];
    }
    *active.last().expect("non-empty")
}

/// Chooses the server for a new flow.
pub fn lb_pick(state: &LbState, fid: &FiveTuple, _now: f64) -> Result<usize, AppError> {
    if state.active.is_empty() {
        return Err(AppError::NoActiveEgress);
    }
    let digest = fid.digest();
    Ok(match state.policy {
        LbPolicy::Ecmp => state.active[(digest % state.active.len() as u64) as usize],
        LbPolicy::WcmpStatic { .. } | LbPolicy::WcmpActive { .. } => {
            weighted_hash_pick(digest, &state.active, &state.weights)
        }
        LbPolicy::Rlb { .. } => {
            let mut best = state.active[0];
            let mut best_score = f64::INFINITY;
            for &i in &state.active {
                let score = (state.loads[i] + 1.0) / state.weights[i];
                if score < best_score {
                    best = i;
                    best_score = score;
                }
            }
            best
        }
    })
}

/// New RLB weights for the egresses in `frames`.
///
/// An egress with flow-duration samples gets the raw weight
/// `1 / (decayed mean duration + WEIGHT_EPS)`; raw weights are then scaled
/// so their mean equals the mean of those egresses' previous weights.
/// Egresses without samples keep their previous weight, so a vector that
/// starts at mean 1 stays at mean 1.
pub fn rlb_refresh_weights(frames: &[ObservationFrame], previous: &[f64], now: f64) -> Vec<Action> {
    let prev = |e: u8| previous.get(usize::from(e)).copied().unwrap_or(1.0);
    let raw: Vec<Option<f64>> = frames
        .iter()
        .map(|f| {
            let samples: Vec<_> = f.samples[Signal::FlowDuration.id()]
                .iter()
                .copied()
                .filter(|s| !s.is_empty())
                .collect();
            exp_decay_mean(&samples, now, DECAY_TAU).map(|tau| 1.0 / (tau.max(0.0) + WEIGHT_EPS))
        })
        .collect();
    let (mut raw_sum, mut prev_sum) = (0.0, 0.0);
    for (f, r) in frames.iter().zip(&raw) {
        if let Some(r) = r {
            raw_sum += r;
            prev_sum += prev(f.egress_id);
        }
    }
    frames
        .iter()
        .zip(&raw)
        .map(|(f, r)| {
            let w = match r {
                Some(r) => r * prev_sum / raw_sum,
                None => prev(f.egress_id),
            };
            Action::from_weight(f.egress_id, w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: String,
    pub flows: usize,
    pub mean_fct: f64,
    pub p90_fct: f64,
    pub p95_fct: f64,
    /// Flows dispatched to each server.
    pub tasks: Vec<u64>,
    /// Mean tasks per fast server over mean tasks per slow server; NaN with
    /// a single capacity class.
    pub fast_slow_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub summary: PolicySummary,
    pub records: Vec<FlowRecord>,
}

/// Nearest-rank percentile.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn summarize(policy: &LbPolicy, records: &[FlowRecord], tasks: Vec<u64>, caps: &[f64]) -> PolicySummary {
    let mut fct: Vec<f64> = records.iter().filter(|r| !r.flood).filter_map(FlowRecord::fct).collect();
    fct.sort_by(f64::total_cmp);
    let lo = caps.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut fast, mut nf, mut slow, mut ns) = (0.0, 0usize, 0.0, 0usize);
    for (i, &c) in caps.iter().enumerate() {
        if c > lo {
            fast += tasks[i] as f64;
            nf += 1;
        } else {
            slow += tasks[i] as f64;
            ns += 1;
        }
    }
    let ratio = if nf > 0 && ns > 0 && slow > 0.0 {
        (fast / nf as f64) / (slow / ns as f64)
    } else {
        f64::NAN
    };
    PolicySummary {
        policy: policy.name().to_string(),
        flows: fct.len(),
        mean_fct: if fct.is_empty() { f64::NAN } else { fct.iter().sum::<f64>() / fct.len() as f64 },
        p90_fct: percentile(&fct, 0.90),
        p95_fct: percentile(&fct, 0.95),
        tasks,
        fast_slow_ratio: ratio,
    }
}

/// Replays the same arrivals against one policy.
pub fn run_policy(
    policy: &LbPolicy,
    spec: &WorkloadSpec,
    arrivals: &[crate::traffic::FlowArrival],
) -> Result<PolicyRun, AppError> {
    let caps = &spec.server_capacities;
    let n = caps.len();
    let mut state = LbState::new(policy.clone(), n);
    if state.weights.len() != n || state.weights.iter().any(|w| !(*w > 0.0)) {
        return Err(AppError::Config(format!(
            "static weights must be {n} positive values"
        )));
    }
    let is_rlb = matches!(policy, LbPolicy::Rlb { .. });
    let interval = match policy {
        LbPolicy::Rlb { refresh } => *refresh,
        LbPolicy::WcmpActive { poll_interval } => *poll_interval,
        _ => f64::INFINITY,
    };
    if !(interval > 0.0) {
        return Err(AppError::Config("refresh interval must be > 0".into()));
    }

    let region = VipRegion::anonymous(RegionConfig {
        n_egress: n,
        ..RegionConfig::default()
    })?;
    let mut ex = Extractor::new(
        &region,
        ExtractConfig {
            window: if interval.is_finite() { interval } else { 1.0 },
            auto_add: false,
            record_frames: false,
            seed: spec.seed,
            ..ExtractConfig::default()
        },
    )?;
    for i in 0..n {
        ex.add_egress(i)?;
    }
    let mut sim = Simulation::with_cluster(arrivals.to_vec(), spec.cluster(), is_rlb);
    let mut next_refresh = interval;

    while let Some(a) = sim.peek_arrival() {
        let (t, fid) = (a.t, a.fid);
        while next_refresh <= t {
            sim.advance_to(next_refresh);
            for p in sim.drain_packets(next_refresh) {
                ex.push(&p)?;
            }
            match policy {
                LbPolicy::Rlb { .. } => {
                    let frames: Vec<ObservationFrame> = state
                        .active
                        .iter()
                        .map(|&i| region.read_latest(i, next_refresh))
                        .collect::<Result<_, _>>()?;
                    for action in rlb_refresh_weights(&frames, &state.weights, next_refresh) {
                        region.push_action(&action)?;
                    }
                }
                LbPolicy::WcmpActive { .. } => {
                    for (i, s) in sim.cluster().servers.iter().enumerate() {
                        state.weights[i] = 1.0 / (s.active_jobs() as f64 + 1.0);
                    }
                }
                _ => {}
            }
            next_refresh += interval;
        }
        sim.advance_to(t);
        if is_rlb {
            for p in sim.drain_packets(t) {
                ex.push(&p)?;
            }
            for &i in &state.active {
                let on = region.counter_cache(i)?[Counter::FlowOn.id()] as i32;
                state.loads[i] = f64::from(on.max(0));
                state.weights[i] = region.read_action(i)?.weight_f64();
            }
        }
        let pick = lb_pick(&state, &fid, t)?;
        sim.dispatch_next(pick);
    }
    sim.finish();
    let records: Vec<FlowRecord> = sim.records().cloned().collect();
    let tasks = sim.dispatched().to_vec();
    Ok(PolicyRun {
        summary: summarize(policy, &records, tasks, caps),
        records,
    })
}

/// Two fast quad-core servers at twice the speed of two slow dual-core
/// ones, loaded to about 70% of total capacity.
pub fn hetero_bench_spec(seed: u64) -> WorkloadSpec {
    let mut spec = WorkloadSpec::new(84.0, 120.0, vec![2.0, 2.0, 1.0, 1.0], seed);
    spec.mean_duration = 0.05;
    spec.server_cores = vec![4, 4, 2, 2];
    spec
}

/// ECMP, WCMP left at equal weights, actively polled WCMP and RLB.
pub fn bench_policies() -> Vec<LbPolicy> {
    vec![
        LbPolicy::Ecmp,
        LbPolicy::WcmpStatic { weights: Vec::new() },
        LbPolicy::WcmpActive { poll_interval: DEFAULT_REFRESH },
        LbPolicy::Rlb { refresh: DEFAULT_REFRESH },
    ]
}

/// Runs every policy on the identical arrival sequence drawn from `spec`.
pub fn run_lb_bench(policies: &[LbPolicy], spec: &WorkloadSpec) -> Result<Vec<PolicyRun>, AppError> {
    let arrivals = gen_arrivals(spec)?;
    policies.iter().map(|p| run_policy(p, spec, &arrivals)).collect()
}

/// Per-flow completion records, header `flow_id,server,t_syn,t_fin,fct`.
/// Unfinished flows have empty `t_fin` and `fct`.
pub fn write_fct_csv<W: Write>(records: &[FlowRecord], out: W) -> Result<(), AppError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["flow_id", "server", "t_syn", "t_fin", "fct"])?;
    for r in records.iter().filter(|r| !r.flood) {
        let fin = r.t_fin.map(|v| v.to_string()).unwrap_or_default();
        let fct = r.fct().map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.id.to_string(), r.server.to_string(), r.t_syn.to_string(), fin, fct])?;
    }
    w.flush()?;
    Ok(())
}

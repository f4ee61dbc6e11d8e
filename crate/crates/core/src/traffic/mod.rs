//! Deterministic TCP-like traffic generation over processor-sharing servers.
//!
//! A workload is first turned into a time-ordered list of [`FlowArrival`]s
//! (Poisson arrivals, exponential work, optional SYN flood). A
//! [`Simulation`] then dispatches each arrival to a server, runs the
//! servers under processor sharing, and synthesizes the client-side packet
//! stream a direct-server-return balancer would observe.

mod server;
mod sim;
mod trace_io;
mod types;
mod workload;

pub use server::{server_advance, Completion, ServerModel};
pub use sim::{Cluster, FlowRecord, Simulation};
pub use trace_io::{
    format_flags, load_trace, parse_flags, read_events, write_events, write_trace, TRACE_HEADER,
};
pub use types::{fnv1a64, Direction, FiveTuple, PacketEvent, TcpFlags, MSS, PROTO_TCP};
pub use workload::{
    gen_arrivals, FlowArrival, FlowKind, FlowProfile, RateStep, WorkloadSpec, DEFAULT_VIP,
    FILE_SIZES,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("invalid workload: {0}")]
    Config(String),
    #[error("trace line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Simulator-side facts about a generated trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    /// Legitimate flows (those that perform a handshake).
    pub n_flows: usize,
    pub n_flood: usize,
    pub records: Vec<FlowRecord>,
}

/// Generates the packet trace of `spec`, with flows spread over the servers
/// by flow hash. Identical specs (seed included) give identical traces.
pub fn gen_trace(spec: &WorkloadSpec) -> Result<Vec<PacketEvent>, TrafficError> {
    gen_trace_with_truth(spec).map(|(events, _)| events)
}

pub fn gen_trace_with_truth(
    spec: &WorkloadSpec,
) -> Result<(Vec<PacketEvent>, GroundTruth), TrafficError> {
    let arrivals = gen_arrivals(spec)?;
    let n = spec.n_servers as u64;
    let mut sim = Simulation::with_cluster(arrivals, spec.cluster(), true);
    let mut events = Vec::new();
    while let Some(a) = sim.peek_arrival() {
        let (t, server) = (a.t, (a.fid.digest() % n) as usize);
        // once servers have run to `t`, nothing generated later is earlier
        // than `t`, so draining keeps the heap down to flows in progress
        sim.advance_to(t);
        events.extend(sim.drain_packets(t));
        sim.dispatch_next(server);
    }
    sim.finish();
    events.extend(sim.drain_packets(f64::INFINITY));
    let records: Vec<FlowRecord> = sim.records().cloned().collect();
    let n_flood = records.iter().filter(|r| r.flood).count();
    Ok((
        events,
        GroundTruth {
            n_flows: records.len() - n_flood,
            n_flood,
            records,
        },
    ))
}

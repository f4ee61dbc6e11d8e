//! Fixed identifiers for counters and sampled signals. Ids are part of the
//! region layout and never change meaning.

use std::fmt;
use std::str::FromStr;

/// Ordinal features kept as `u32` counters per egress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Counter {
    /// Ongoing (established, not yet closed) flows.
    FlowOn = 0,
    FlowTotal = 1,
    Packet = 2,
    Byte = 3,
    Syn = 4,
    Fin = 5,
    Rst = 6,
    Miss = 7,
}

impl Counter {
    pub const COUNT: usize = 8;
    pub const ALL: [Counter; Counter::COUNT] = [
        Counter::FlowOn,
        Counter::FlowTotal,
        Counter::Packet,
        Counter::Byte,
        Counter::Syn,
        Counter::Fin,
        Counter::Rst,
        Counter::Miss,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Counter::FlowOn => "n_flow_on",
            Counter::FlowTotal => "n_flow_total",
            Counter::Packet => "n_packet",
            Counter::Byte => "n_byte",
            Counter::Syn => "n_syn",
            Counter::Fin => "n_fin",
            Counter::Rst => "n_rst",
            Counter::Miss => "n_miss",
        }
    }
}

/// Quantitative signals sampled into one reservoir each per egress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Signal {
    /// Close time minus SYN time.
    FlowDuration = 0,
    /// First client ACK minus SYN.
    HandshakeRtt = 1,
    /// Gap between consecutive established flows on one egress.
    FlowInterarrival = 2,
    /// Gap between consecutive data packets of one flow.
    PktInterarrival = 3,
    /// Client-to-VIP payload bytes of a closed flow.
    FlowSizeC2s = 4,
    /// Payload of the first data packet.
    RequestSize = 5,
    /// Packets of a closed flow.
    FlowPkts = 6,
    /// Client payload bytes per second over the flow lifetime.
    ByteRate = 7,
    /// Advertised receive window on data packets.
    WinSize = 8,
    /// Advance of the acknowledgement number (server bytes acknowledged).
    AckGap = 9,
    /// Client bytes sent so far in the flow, at each data packet.
    BytesInFlightProxy = 10,
    /// Ongoing flows on the egress when a handshake completes.
    ConcurrentFlowsAtArrival = 11,
    /// Gap between consecutive SYNs on one egress.
    SynGap = 12,
}

impl Signal {
    pub const COUNT: usize = 13;
    pub const ALL: [Signal; Signal::COUNT] = [
        Signal::FlowDuration,
        Signal::HandshakeRtt,
        Signal::FlowInterarrival,
        Signal::PktInterarrival,
        Signal::FlowSizeC2s,
        Signal::RequestSize,
        Signal::FlowPkts,
        Signal::ByteRate,
        Signal::WinSize,
        Signal::AckGap,
        Signal::BytesInFlightProxy,
        Signal::ConcurrentFlowsAtArrival,
        Signal::SynGap,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Signal::FlowDuration => "flow_duration",
            Signal::HandshakeRtt => "handshake_rtt",
            Signal::FlowInterarrival => "flow_interarrival",
            Signal::PktInterarrival => "pkt_interarrival",
            Signal::FlowSizeC2s => "flow_size_c2s",
            Signal::RequestSize => "request_size",
            Signal::FlowPkts => "flow_pkts",
            Signal::ByteRate => "byte_rate",
            Signal::WinSize => "win_size",
            Signal::AckGap => "ack_gap",
            Signal::BytesInFlightProxy => "bytes_in_flight_proxy",
            Signal::ConcurrentFlowsAtArrival => "concurrent_flows_at_arrival",
            Signal::SynGap => "syn_gap",
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Signal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Signal::ALL
            .iter()
            .copied()
            .find(|sig| sig.name() == s)
            .ok_or_else(|| format!("unknown signal {s:?}"))
    }
}

impl fmt::Display for Counter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense() {
        for (i, c) in Counter::ALL.iter().enumerate() {
            assert_eq!(c.id(), i);
        }
        for (i, s) in Signal::ALL.iter().enumerate() {
            assert_eq!(s.id(), i);
            assert_eq!(s.name().parse::<Signal>().unwrap(), *s);
        }
    }
}

//! Stateful flow table: a fixed array of `M` buckets indexed by
//! `fnv1a64(fid) % M`, each running a three-state TCP tracker.
//!
//! ```text
//!            SYN                 first client ACK
//!   NULL ------------> SYN ------------------------> CONN
//!    ^                  |  FIN/RST/timeout             |  data: t2, samples
//!    +------------------+                              |
//!    +------------------- FIN / RST / idle timeout ----+
//! ```
//!
//! A SYN that lands on a bucket owned by another live flow is a miss: the
//! new flow is ignored for its whole lifetime and only `n_miss` records it.

use thiserror::Error;

use crate::store::{Counter, Signal};
use crate::traffic::{Direction, FiveTuple, PacketEvent, TcpFlags};

pub const DEFAULT_TABLE_SIZE: usize = 65_536;
pub const DEFAULT_SYN_TIMEOUT: f64 = 30.0;
pub const DEFAULT_CONN_TIMEOUT: f64 = 300.0;

/// Number of distinct egress ids an 8-bit field can name.
const EGRESS_IDS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowState {
    #[default]
    Null,
    Syn,
    Conn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmissionKind {
    CounterDelta { counter: Counter, delta: i64 },
    Sample { signal: Signal, ts: f64, value: f64 },
}

/// One feature update addressed to an egress block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureEmission {
    pub egress_id: u8,
    pub kind: EmissionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowBucket {
    pub state: FlowState,
    pub fid_digest: u64,
    /// SYN seen.
    pub t0: f64,
    /// First client ACK.
    pub t1: f64,
    /// Last data packet.
    pub t2: f64,
    /// Close.
    pub t3: f64,
    pub last_ts: f64,
    pub bytes_c2s: u64,
    pub pkts: u32,
    pub last_seq: u32,
    pub last_ack: u32,
    pub last_win: u16,
    pub egress_id: u8,
    seen_data: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowTableConfig {
    pub size: usize,
    pub syn_timeout: f64,
    pub conn_timeout: f64,
}

impl Default for FlowTableConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_TABLE_SIZE,
            syn_timeout: DEFAULT_SYN_TIMEOUT,
            conn_timeout: DEFAULT_CONN_TIMEOUT,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FlowTableError {
    #[error("packet at {ts} precedes already processed time {last}")]
    OutOfOrder { ts: f64, last: f64 },
    #[error("table size must be positive")]
    EmptyTable,
}

#[derive(Debug, Clone, Copy, Default)]
struct EgressTrack {
    ongoing: u32,
    last_syn: Option<f64>,
    last_conn: Option<f64>,
}

/// Bucket for `fid` in a table of `m` entries.
pub fn bucket_index(fid: &FiveTuple, m: usize) -> usize {
    assert!(m > 0, "table size must be positive");
    (fid.digest() % m as u64) as usize
}

pub struct FlowTable {
    buckets: Vec<FlowBucket>,
    cfg: FlowTableConfig,
    miss_count: u64,
    last_ts: f64,
    egress: Vec<EgressTrack>,
}

struct Sink<'a> {
    out: &'a mut Vec<FeatureEmission>,
    egress: u8,
}

impl Sink<'_> {
    fn count(&mut self, counter: Counter, delta: i64) {
        self.out.push(FeatureEmission {
            egress_id: self.egress,
            kind: EmissionKind::CounterDelta { counter, delta },
        });
    }

    fn sample(&mut self, signal: Signal, ts: f64, value: f64) {
        self.out.push(FeatureEmission {
            egress_id: self.egress,
            kind: EmissionKind::Sample { signal, ts, value },
        });
    }
}

impl FlowTable {
    pub fn new(cfg: FlowTableConfig) -> Result<Self, FlowTableError> {
        if cfg.size == 0 {
            return Err(FlowTableError::EmptyTable);
        }
        Ok(Self {
            buckets: vec![FlowBucket::default(); cfg.size],
            cfg,
            miss_count: 0,
            last_ts: f64::NEG_INFINITY,
            egress: vec![EgressTrack::default(); EGRESS_IDS],
        })
    }

    pub fn with_size(size: usize) -> Result<Self, FlowTableError> {
        Self::new(FlowTableConfig {
            size,
            ..FlowTableConfig::default()
        })
    }

    pub fn config(&self) -> &FlowTableConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn miss_count(&self) -> u64 {
        self.miss_count
    }

    pub fn bucket(&self, idx: usize) -> &FlowBucket {
        &self.buckets[idx]
    }

    /// Buckets currently holding a live flow.
    pub fn live(&self) -> usize {
        self.buckets
            .iter()
            .filter(|b| b.state != FlowState::Null)
            .count()
    }

    pub fn on_packet(&mut self, ev: &PacketEvent) -> Result<Vec<FeatureEmission>, FlowTableError> {
        let mut out = Vec::new();
        self.on_packet_into(ev, &mut out)?;
        Ok(out)
    }

    /// Like [`FlowTable::on_packet`] but appends to a caller-owned buffer.
    pub fn on_packet_into(
        &mut self,
        ev: &PacketEvent,
        out: &mut Vec<FeatureEmission>,
    ) -> Result<(), FlowTableError> {
        if ev.ts < self.last_ts {
            return Err(FlowTableError::OutOfOrder {
                ts: ev.ts,
                last: self.last_ts,
            });
        }
        self.last_ts = ev.ts;

        let digest = ev.flow.digest();
        let idx = (digest % self.buckets.len() as u64) as usize;
        let owned = {
            let b = &self.buckets[idx];
            b.state != FlowState::Null && b.fid_digest == digest
        };
        let egress = if owned {
            self.buckets[idx].egress_id
        } else {
            ev.egress_id.unwrap_or(0)
        };
        let mut sink = Sink { out, egress };
        sink.count(Counter::Packet, 1);
        sink.count(Counter::Byte, i64::from(ev.payload_len));

        let client = ev.dir == Direction::ClientToVip;
        let syn = ev.flags.contains(TcpFlags::SYN);
        if syn {
            sink.count(Counter::Syn, 1);
        }
        if !client {
            return Ok(());
        }

        if syn && !ev.flags.contains(TcpFlags::ACK) {
            let bucket = &mut self.buckets[idx];
            match bucket.state {
                FlowState::Null => {
                    *bucket = FlowBucket {
                        state: FlowState::Syn,
                        fid_digest: digest,
                        t0: ev.ts,
                        last_ts: ev.ts,
                        pkts: 1,
                        last_seq: ev.seq,
                        last_ack: ev.ack,
                        last_win: ev.win,
                        egress_id: egress,
                        ..FlowBucket::default()
                    };
                    let track = &mut self.egress[usize::from(egress)];
                    if let Some(prev) = track.last_syn {
                        sink.sample(Signal::SynGap, ev.ts, ev.ts - prev);
                    }
                    track.last_syn = Some(ev.ts);
                }
                _ if owned => {
                    // retransmitted SYN of a tracked flow
                    bucket.pkts += 1;
                    bucket.last_ts = ev.ts;
                }
                _ => {
                    self.miss_count += 1;
                    sink.count(Counter::Miss, 1);
                }
            }
            return Ok(());
        }

        if !owned {
            return Ok(());
        }

        let track = &mut self.egress[usize::from(egress)];
        let bucket = &mut self.buckets[idx];
        bucket.pkts += 1;
        let closing = ev.flags.intersects(TcpFlags::FIN | TcpFlags::RST);
        let close_counter = if ev.flags.contains(TcpFlags::RST) {
            Counter::Rst
        } else {
            Counter::Fin
        };

        if bucket.state == FlowState::Syn {
            if closing {
                // half-open flow torn down; never counted as established
                sink.count(close_counter, 1);
                *bucket = FlowBucket::default();
                return Ok(());
            }
            if !ev.flags.contains(TcpFlags::ACK) {
                bucket.last_ts = ev.ts;
                return Ok(());
            }
            bucket.state = FlowState::Conn;
            bucket.t1 = ev.ts;
            sink.count(Counter::FlowOn, 1);
            sink.count(Counter::FlowTotal, 1);
            sink.sample(Signal::HandshakeRtt, ev.ts, bucket.t1 - bucket.t0);
            if let Some(prev) = track.last_conn {
                sink.sample(Signal::FlowInterarrival, ev.ts, ev.ts - prev);
            }
            track.last_conn = Some(ev.ts);
            sink.sample(
                Signal::ConcurrentFlowsAtArrival,
                ev.ts,
                f64::from(track.ongoing),
            );
            track.ongoing += 1;
            bucket.last_ack = ev.ack;
        } else if ev.flags.contains(TcpFlags::ACK) {
            let advance = ev.ack.wrapping_sub(bucket.last_ack);
            if advance != 0 && advance < (1 << 31) {
                sink.sample(Signal::AckGap, ev.ts, f64::from(advance));
            }
            bucket.last_ack = ev.ack;
        }

        if ev.payload_len > 0 {
            let prev = bucket.last_ts.max(bucket.t1);
            sink.sample(Signal::PktInterarrival, ev.ts, ev.ts - prev);
            if !bucket.seen_data {
                sink.sample(Signal::RequestSize, ev.ts, f64::from(ev.payload_len));
                bucket.seen_data = true;
            }
            bucket.bytes_c2s += u64::from(ev.payload_len);
            bucket.t2 = ev.ts;
            sink.sample(Signal::WinSize, ev.ts, f64::from(ev.win));
            sink.sample(Signal::BytesInFlightProxy, ev.ts, bucket.bytes_c2s as f64);
        }
        bucket.last_seq = ev.seq;
        bucket.last_win = ev.win;
        bucket.last_ts = ev.ts;

        if closing {
            bucket.t3 = ev.ts;
            let duration = bucket.t3 - bucket.t0;
            sink.sample(Signal::FlowDuration, ev.ts, duration);
            sink.sample(Signal::FlowSizeC2s, ev.ts, bucket.bytes_c2s as f64);
            sink.sample(Signal::FlowPkts, ev.ts, f64::from(bucket.pkts));
            if duration > 0.0 {
                sink.sample(Signal::ByteRate, ev.ts, bucket.bytes_c2s as f64 / duration);
            }
            sink.count(Counter::FlowOn, -1);
            sink.count(close_counter, 1);
            track.ongoing = track.ongoing.saturating_sub(1);
            *bucket = FlowBucket::default();
        }
        Ok(())
    }

    /// Evicts half-open flows older than the SYN timeout and established
    /// flows idle longer than the connection timeout.
    pub fn expire(&mut self, now: f64) -> Vec<FeatureEmission> {
        let mut out = Vec::new();
        for bucket in &mut self.buckets {
            match bucket.state {
                FlowState::Null => {}
                FlowState::Syn => {
                    if now - bucket.t0 > self.cfg.syn_timeout {
                        *bucket = FlowBucket::default();
                    }
                }
                FlowState::Conn => {
                    if now - bucket.last_ts > self.cfg.conn_timeout {
                        let mut sink = Sink {
                            out: &mut out,
                            egress: bucket.egress_id,
                        };
                        bucket.t3 = bucket.last_ts;
                        sink.sample(Signal::FlowDuration, now, bucket.t3 - bucket.t0);
                        sink.count(Counter::FlowOn, -1);
                        let track = &mut self.egress[usize::from(bucket.egress_id)];
                        track.ongoing = track.ongoing.saturating_sub(1);
                        *bucket = FlowBucket::default();
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn fid(port: u16) -> FiveTuple {
        FiveTuple::tcp(Ipv4Addr::new(10, 0, 0, 1), port, Ipv4Addr::new(10, 255, 0, 1), 80)
    }

    fn pkt(ts: f64, f: FiveTuple, flags: TcpFlags, payload: u32, ack: u32) -> PacketEvent {
        PacketEvent {
            ts,
            flow: f,
            flags,
            payload_len: payload,
            seq: 100,
            ack,
            win: 5000,
            dir: Direction::ClientToVip,
            egress_id: Some(1),
        }
    }

    fn samples(em: &[FeatureEmission], signal: Signal) -> Vec<(f64, f64)> {
        em.iter()
            .filter_map(|e| match e.kind {
                EmissionKind::Sample { signal: s, ts, value } if s == signal => Some((ts, value)),
                _ => None,
            })
            .collect()
    }

    fn delta(em: &[FeatureEmission], counter: Counter) -> i64 {
        em.iter()
            .filter_map(|e| match e.kind {
                EmissionKind::CounterDelta { counter: c, delta } if c == counter => Some(delta),
                _ => None,
            })
            .sum()
    }

    #[test]
    fn bucket_index_golden() {
        let f = fid(12345);
        assert_eq!(bucket_index(&f, 1), 0);
        assert_eq!(bucket_index(&f, 65_536), bucket_index(&f, 65_536));
        // reference value from an independent FNV-1a implementation over
        // 0a000001 0aff0001 3039 0050 06
        assert_eq!(f.digest(), 0x23c3_2cad_6c46_c52b);
        assert_eq!(bucket_index(&f, 65_536), 0xc52b);
    }

    #[test]
    fn fresh_syn_enters_syn_state() {
        let mut t = FlowTable::with_size(1024).unwrap();
        let em = t.on_packet(&pkt(0.0, fid(1), TcpFlags::SYN, 0, 0)).unwrap();
        assert_eq!(delta(&em, Counter::Syn), 1);
        assert_eq!(delta(&em, Counter::Packet), 1);
        let b = t.bucket(bucket_index(&fid(1), 1024));
        assert_eq!(b.state, FlowState::Syn);
        assert_eq!(b.egress_id, 1);
    }

    #[test]
    fn full_flow_lifecycle() {
        let mut t = FlowTable::with_size(1024).unwrap();
        let f = fid(7);
        let mut em = Vec::new();
        for p in [
            pkt(0.0, f, TcpFlags::SYN, 0, 0),
            pkt(0.01, f, TcpFlags::ACK, 0, 1),
            pkt(0.02, f, TcpFlags::PSH | TcpFlags::ACK, 1000, 1),
            pkt(1.0, f, TcpFlags::FIN | TcpFlags::ACK, 0, 501),
        ] {
            em.extend(t.on_packet(&p).unwrap());
        }
        assert_eq!(samples(&em, Signal::FlowDuration), vec![(1.0, 1.0)]);
        assert_eq!(samples(&em, Signal::HandshakeRtt), vec![(0.01, 0.01)]);
        assert_eq!(samples(&em, Signal::FlowSizeC2s), vec![(1.0, 1000.0)]);
        assert_eq!(samples(&em, Signal::FlowPkts), vec![(1.0, 4.0)]);
        assert_eq!(samples(&em, Signal::RequestSize), vec![(0.02, 1000.0)]);
        assert_eq!(samples(&em, Signal::AckGap), vec![(1.0, 500.0)]);
        let pia = samples(&em, Signal::PktInterarrival);
        assert_eq!(pia.len(), 1);
        assert!((pia[0].1 - 0.01).abs() < 1e-12);
        assert_eq!(delta(&em, Counter::FlowOn), 0);
        assert_eq!(delta(&em, Counter::FlowTotal), 1);
        assert_eq!(delta(&em, Counter::Fin), 1);
        assert_eq!(delta(&em, Counter::Byte), 1000);
        assert_eq!(delta(&em, Counter::Packet), 4);
        assert_eq!(t.live(), 0);
    }

    #[test]
    fn rst_closes_with_own_counter() {
        let mut t = FlowTable::with_size(64).unwrap();
        let f = fid(9);
        let mut em = Vec::new();
        for p in [
            pkt(0.0, f, TcpFlags::SYN, 0, 0),
            pkt(0.5, f, TcpFlags::ACK, 0, 1),
            pkt(2.0, f, TcpFlags::RST, 0, 1),
        ] {
            em.extend(t.on_packet(&p).unwrap());
        }
        assert_eq!(delta(&em, Counter::Rst), 1);
        assert_eq!(delta(&em, Counter::Fin), 0);
        assert_eq!(delta(&em, Counter::FlowOn), 0);
        assert_eq!(samples(&em, Signal::FlowDuration), vec![(2.0, 2.0)]);
    }

    #[test]
    fn colliding_syn_is_a_miss() {
        let mut t = FlowTable::with_size(1).unwrap();
        let (a, b) = (fid(1), fid(2));
        t.on_packet(&pkt(0.0, a, TcpFlags::SYN, 0, 0)).unwrap();
        t.on_packet(&pkt(0.1, a, TcpFlags::ACK, 0, 1)).unwrap();
        let em = t.on_packet(&pkt(0.2, b, TcpFlags::SYN, 0, 0)).unwrap();
        assert_eq!(t.miss_count(), 1);
        assert_eq!(delta(&em, Counter::Miss), 1);
        assert_eq!(t.bucket(0).state, FlowState::Conn);
        assert_eq!(t.bucket(0).fid_digest, a.digest());
    }

    #[test]
    fn missed_flow_leaves_no_samples() {
        let mut t = FlowTable::with_size(1).unwrap();
        let (a, b) = (fid(1), fid(2));
        let mut b_em = Vec::new();
        let seq = [
            (pkt(0.0, a, TcpFlags::SYN, 0, 0), false),
            (pkt(0.05, b, TcpFlags::SYN, 0, 0), true),
            (pkt(0.1, a, TcpFlags::ACK, 0, 1), false),
            (pkt(0.15, b, TcpFlags::ACK, 0, 1), true),
            (pkt(0.2, a, TcpFlags::PSH | TcpFlags::ACK, 300, 1), false),
            (pkt(0.25, b, TcpFlags::PSH | TcpFlags::ACK, 300, 1), true),
            (pkt(0.3, b, TcpFlags::FIN | TcpFlags::ACK, 0, 9), true),
            (pkt(0.4, a, TcpFlags::FIN | TcpFlags::ACK, 0, 9), false),
        ];
        for (p, is_b) in seq {
            let em = t.on_packet(&p).unwrap();
            if is_b {
                b_em.extend(em);
            }
        }
        assert!(b_em
            .iter()
            .all(|e| matches!(e.kind, EmissionKind::CounterDelta { .. })));
        assert_eq!(delta(&b_em, Counter::FlowTotal), 0);
        assert_eq!(delta(&b_em, Counter::Miss), 1);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut t = FlowTable::with_size(8).unwrap();
        t.on_packet(&pkt(1.0, fid(1), TcpFlags::SYN, 0, 0)).unwrap();
        assert!(matches!(
            t.on_packet(&pkt(0.5, fid(2), TcpFlags::SYN, 0, 0)),
            Err(FlowTableError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn expire_empty_table() {
        let mut t = FlowTable::with_size(16).unwrap();
        assert!(t.expire(1e6).is_empty());
    }

    #[test]
    fn expire_half_open_without_duration() {
        let mut t = FlowTable::with_size(16).unwrap();
        t.on_packet(&pkt(0.0, fid(1), TcpFlags::SYN, 0, 0)).unwrap();
        assert!(t.expire(29.0).is_empty());
        assert_eq!(t.live(), 1);
        assert!(t.expire(30.5).is_empty());
        assert_eq!(t.live(), 0);
    }

    #[test]
    fn expire_idle_connection() {
        let mut t = FlowTable::with_size(16).unwrap();
        let f = fid(3);
        t.on_packet(&pkt(1.0, f, TcpFlags::SYN, 0, 0)).unwrap();
        t.on_packet(&pkt(1.5, f, TcpFlags::ACK, 0, 1)).unwrap();
        t.on_packet(&pkt(4.0, f, TcpFlags::PSH | TcpFlags::ACK, 10, 1)).unwrap();
        assert!(t.expire(300.0).is_empty());
        let em = t.expire(304.5);
        // idle since 4.0 -> closes with t3 = 4.0, duration 3.0
        assert_eq!(samples(&em, Signal::FlowDuration), vec![(304.5, 3.0)]);
        assert_eq!(delta(&em, Counter::FlowOn), -1);
        assert_eq!(t.live(), 0);
    }

    #[test]
    fn concurrent_flow_sample_counts_others() {
        let mut t = FlowTable::with_size(1024).unwrap();
        let mut seen = Vec::new();
        for i in 0..3u16 {
            let f = fid(100 + i);
            let ts = f64::from(i);
            t.on_packet(&pkt(ts, f, TcpFlags::SYN, 0, 0)).unwrap();
            let em = t.on_packet(&pkt(ts + 0.1, f, TcpFlags::ACK, 0, 1)).unwrap();
            seen.extend(samples(&em, Signal::ConcurrentFlowsAtArrival));
        }
        let values: Vec<f64> = seen.iter().map(|s| s.1).collect();
        assert_eq!(values, vec![0.0, 1.0, 2.0]);
    }
}

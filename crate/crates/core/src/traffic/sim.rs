use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::server::ServerModel;
use super::types::{Direction, PacketEvent, TcpFlags, MSS};
use super::workload::{FlowArrival, FlowKind};

/// Spacing between consecutive request packets of one flow.
const DATA_GAP: f64 = 1e-4;
/// Server-to-client link rate for responses, bytes per second (100 Mbit/s).
const RESPONSE_RATE: f64 = 12.5e6;
/// Response bytes acknowledged by each client ACK (delayed ACK, two segments).
const ACK_EVERY: u64 = 2 * MSS as u64;

/// Per-flow outcome recorded by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub id: u64,
    pub server: u8,
    pub t_syn: f64,
    /// Time of the closing FIN; `None` for floods and unfinished flows.
    pub t_fin: Option<f64>,
    pub flood: bool,
}

impl FlowRecord {
    /// Flow completion time, SYN to FIN.
    pub fn fct(&self) -> Option<f64> {
        self.t_fin.map(|f| f - self.t_syn)
    }
}

#[derive(Debug)]
struct Timed<T> {
    t: f64,
    seq: u64,
    item: T,
}

impl<T> PartialEq for Timed<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T> Eq for Timed<T> {}
impl<T> PartialOrd for Timed<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Timed<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

#[derive(Debug)]
struct JobStart {
    flow: usize,
    server: usize,
    work: f64,
}

/// Servers behind the VIP plus which of them accept new flows.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub servers: Vec<ServerModel>,
    accepting: Vec<bool>,
}

impl Cluster {
    pub fn new(capacities: &[f64]) -> Self {
        Self::with_cores(capacities, &[])
    }

    /// `cores[i]` defaults to 1 where missing.
    pub fn with_cores(capacities: &[f64], cores: &[u32]) -> Self {
        Self {
            servers: capacities
                .iter()
                .enumerate()
                .map(|(i, &c)| ServerModel::with_cores(i as u8, c, cores.get(i).copied().unwrap_or(1)))
                .collect(),
            accepting: vec![true; capacities.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.servers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.servers.is_empty()
    }

    pub fn is_accepting(&self, i: usize) -> bool {
        self.accepting[i]
    }

    /// A draining server keeps running its jobs but gets no new flows.
    pub fn set_accepting(&mut self, i: usize, on: bool) {
        self.accepting[i] = on;
    }

    pub fn accepting(&self) -> Vec<usize> {
        (0..self.servers.len()).filter(|&i| self.accepting[i]).collect()
    }
}

/// Discrete-event driver: dispatches flow arrivals onto processor-sharing
/// servers and synthesizes the client-side packets each flow produces.
///
/// The caller owns the dispatch decision, which lets balancing policies
/// observe the packet stream up to the arrival instant before choosing.
pub struct Simulation {
    arrivals: Vec<FlowArrival>,
    next: usize,
    now: f64,
    cluster: Cluster,
    starts: BinaryHeap<Reverse<Timed<JobStart>>>,
    packets: BinaryHeap<Reverse<Timed<PacketEvent>>>,
    records: Vec<Option<FlowRecord>>,
    fin_info: Vec<(u32, u32, f64)>,
    dispatched: Vec<u64>,
    seq: u64,
    emit_packets: bool,
}

impl Simulation {
    pub fn new(arrivals: Vec<FlowArrival>, capacities: &[f64], emit_packets: bool) -> Self {
        Self::with_cluster(arrivals, Cluster::new(capacities), emit_packets)
    }

    pub fn with_cluster(arrivals: Vec<FlowArrival>, cluster: Cluster, emit_packets: bool) -> Self {
        let n = arrivals.len();
        let n_servers = cluster.len();
        Self {
            arrivals,
            next: 0,
            now: 0.0,
            cluster,
            starts: BinaryHeap::new(),
            packets: BinaryHeap::new(),
            records: vec![None; n],
            fin_info: vec![(0, 0, 0.0); n],
            dispatched: vec![0; n_servers],
            seq: 0,
            emit_packets,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn cluster_mut(&mut self) -> &mut Cluster {
        &mut self.cluster
    }

    pub fn peek_arrival(&self) -> Option<&FlowArrival> {
        self.arrivals.get(self.next)
    }

    /// Flows dispatched to each server so far.
    pub fn dispatched(&self) -> &[u64] {
        &self.dispatched
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn push_packet(&mut self, p: PacketEvent) {
        if self.emit_packets {
            let seq = self.next_seq();
            self.packets.push(Reverse(Timed { t: p.ts, seq, item: p }));
        }
    }

    /// Processes job starts and completions up to time `t`.
    pub fn advance_to(&mut self, t: f64) {
        while let Some(Reverse(top)) = self.starts.peek() {
            if top.t > t {
                break;
            }
            let Reverse(ev) = self.starts.pop().expect("peeked");
            self.run_servers_until(ev.t);
            self.cluster.servers[ev.item.server].add_job(ev.item.work, ev.item.flow as u64);
        }
        self.run_servers_until(t);
    }

    fn run_servers_until(&mut self, t: f64) {
        let dt = t - self.now;
        if dt <= 0.0 {
            return;
        }
        let base = self.now;
        let mut done = Vec::new();
        for server in &mut self.cluster.servers {
            for c in server.advance(dt) {
                done.push((base + c.elapsed, c.handle as usize));
            }
        }
        self.now = t;
        for (tc, flow) in done {
            self.complete(flow, tc);
        }
    }

    /// The response leaves the server once the job is done; the client
    /// acknowledges it every two segments and closes after the last byte.
    fn complete(&mut self, flow: usize, tc: f64) {
        let (seq, ack, not_before) = self.fin_info[flow];
        let a = &self.arrivals[flow];
        let (fid, half_rtt) = (a.fid, a.rtt / 2.0);
        let response = match a.kind {
            FlowKind::Request { response_bytes, .. } => response_bytes,
            FlowKind::Flood => 0,
        };
        let server = self.records[flow].as_ref().map(|r| r.server);
        let win = client_window(fid.digest());
        let ack_base = ack.wrapping_sub(response as u32);
        let t_resp = tc.max(not_before) + half_rtt;
        let mut acked = 0u64;
        let mut ts = f64::NEG_INFINITY;
        while response - acked > ACK_EVERY {
            acked += ACK_EVERY;
            ts = t_resp + acked as f64 / RESPONSE_RATE;
            self.push_packet(PacketEvent {
                ts,
                flow: fid,
                flags: TcpFlags::ACK,
                payload_len: 0,
                seq,
                ack: ack_base.wrapping_add(acked as u32),
                win,
                dir: Direction::ClientToVip,
                egress_id: server,
            });
        }
        // keep the FIN strictly after the last ACK
        let t_fin = (t_resp + response as f64 / RESPONSE_RATE).max(ts + 1e-6);
        if let Some(r) = self.records[flow].as_mut() {
            r.t_fin = Some(t_fin);
        }
        self.push_packet(PacketEvent {
            ts: t_fin,
            flow: fid,
            flags: TcpFlags::FIN | TcpFlags::ACK,
            payload_len: 0,
            seq,
            ack,
            win,
            dir: Direction::ClientToVip,
            egress_id: server,
        });
    }

    /// Sends the next pending arrival to `server`. The arrival time must not
    /// be earlier than the time already simulated.
    pub fn dispatch_next(&mut self, server: usize) -> &FlowRecord {
        let idx = self.next;
        self.next += 1;
        let a = self.arrivals[idx].clone();
        self.advance_to(a.t);
        self.dispatched[server] += 1;
        let egress = Some(server as u8);
        let digest = a.fid.digest();
        let c_isn = digest as u32;
        let s_isn = (digest >> 32) as u32;
        let win = client_window(digest);
        self.push_packet(PacketEvent {
            ts: a.t,
            flow: a.fid,
            flags: TcpFlags::SYN,
            payload_len: 0,
            seq: c_isn,
            ack: 0,
            win,
            dir: Direction::ClientToVip,
            egress_id: egress,
        });
        let flood = a.is_flood();
        if let FlowKind::Request {
            request_bytes,
            work,
            response_bytes,
        } = a.kind
        {
            let t1 = a.t + a.rtt;
            self.push_packet(PacketEvent {
                ts: t1,
                flow: a.fid,
                flags: TcpFlags::ACK,
                payload_len: 0,
                seq: c_isn.wrapping_add(1),
                ack: s_isn.wrapping_add(1),
                win,
                dir: Direction::ClientToVip,
                egress_id: egress,
            });
            let mut sent = 0u64;
            let mut ts = t1;
            while sent < request_bytes {
                let chunk = (request_bytes - sent).min(u64::from(MSS)) as u32;
                ts += DATA_GAP;
                self.push_packet(PacketEvent {
                    ts,
                    flow: a.fid,
                    flags: TcpFlags::PSH | TcpFlags::ACK,
                    payload_len: chunk,
                    seq: c_isn.wrapping_add(1).wrapping_add(sent as u32),
                    ack: s_isn.wrapping_add(1),
                    win,
                    dir: Direction::ClientToVip,
                    egress_id: egress,
                });
                sent += u64::from(chunk);
            }
            self.fin_info[idx] = (
                c_isn.wrapping_add(1).wrapping_add(request_bytes as u32),
                s_isn.wrapping_add(1).wrapping_add(response_bytes as u32),
                ts + DATA_GAP,
            );
            let seq = self.next_seq();
            self.starts.push(Reverse(Timed {
                t: ts,
                seq,
                item: JobStart {
                    flow: idx,
                    server,
                    work,
                },
            }));
        }
        self.records[idx] = Some(FlowRecord {
            id: a.id,
            server: server as u8,
            t_syn: a.t,
            t_fin: None,
            flood,
        });
        self.records[idx].as_ref().expect("just set")
    }

    /// True once every arrival is dispatched and every job has finished.
    pub fn is_idle(&self) -> bool {
        self.next >= self.arrivals.len()
            && self.starts.is_empty()
            && self.cluster.servers.iter().all(|s| s.active_jobs() == 0)
    }

    /// Runs servers until all outstanding jobs complete. Arrivals still
    /// pending are left undispatched.
    pub fn finish(&mut self) {
        loop {
            if let Some(Reverse(top)) = self.starts.peek() {
                let t = top.t;
                self.advance_to(t);
                continue;
            }
            let next = self
                .cluster
                .servers
                .iter()
                .filter_map(|s| s.time_to_next_completion())
                .fold(f64::INFINITY, f64::min);
            if !next.is_finite() {
                break;
            }
            // Step slightly past the earliest completion so it is not lost
            // to rounding of `now + next`.
            let target = self.now + next + 1e-9;
            self.advance_to(target);
        }
    }

    /// Removes and returns buffered packets with `ts <= upto`, in time order.
    pub fn drain_packets(&mut self, upto: f64) -> Vec<PacketEvent> {
        let mut out = Vec::new();
        while let Some(Reverse(top)) = self.packets.peek() {
            if top.t > upto {
                break;
            }
            out.push(self.packets.pop().expect("peeked").0.item);
        }
        out
    }

    pub fn records(&self) -> impl Iterator<Item = &FlowRecord> {
        self.records.iter().flatten()
    }
}

fn client_window(digest: u64) -> u16 {
    (29_200 + (digest % 36_336)) as u16
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::types::FiveTuple;
    use std::net::Ipv4Addr;

    fn arrival(id: u64, t: f64, work: f64, bytes: u64) -> FlowArrival {
        FlowArrival {
            id,
            t,
            fid: FiveTuple::tcp(
                Ipv4Addr::new(10, 0, 0, id as u8 + 1),
                1000 + id as u16,
                Ipv4Addr::new(10, 255, 0, 1),
                80,
            ),
            kind: FlowKind::Request {
                request_bytes: bytes,
                work,
                response_bytes: 10,
            },
            rtt: 0.001,
        }
    }

    #[test]
    fn single_flow_packet_sequence() {
        let mut sim = Simulation::new(vec![arrival(0, 1.0, 0.5, 3000)], &[1.0], true);
        sim.dispatch_next(0);
        sim.finish();
        let pkts = sim.drain_packets(f64::INFINITY);
        let flags: Vec<_> = pkts.iter().map(|p| p.flags).collect();
        assert_eq!(flags[0], TcpFlags::SYN);
        assert_eq!(flags[1], TcpFlags::ACK);
        assert_eq!(&flags[2..5], &[TcpFlags::PSH | TcpFlags::ACK; 3]);
        assert_eq!(flags[5], TcpFlags::FIN | TcpFlags::ACK);
        let payload: u32 = pkts.iter().map(|p| p.payload_len).sum();
        assert_eq!(payload, 3000);
        assert!(pkts.iter().all(|p| p.payload_len <= MSS));
        let rec = sim.records().next().unwrap();
        // request finishes uploading at 1.0 + 0.001 + 3 * 1e-4, then 0.5 s of
        // work, half an rtt and 10 response bytes on the wire
        let d = rec.t_fin.unwrap() - (1.0013 + 0.5 + 0.0005 + 10.0 / 12.5e6); assert!(d.abs() < 1e-9, "{d}");
    }

    #[test]
    fn response_is_acked_every_two_segments() {
        let mut a = arrival(0, 0.0, 0.1, 100);
        a.kind = FlowKind::Request { request_bytes: 100, work: 0.1, response_bytes: 10_000 };
        let s_isn = (a.fid.digest() >> 32) as u32;
        let mut sim = Simulation::new(vec![a], &[1.0], true);
        sim.dispatch_next(0);
        sim.finish();
        let pkts = sim.drain_packets(f64::INFINITY);
        // SYN, ACK, one data packet, then ACKs at 2920, 5840, 8760 and the FIN
        let acks: Vec<u32> = pkts[3..].iter().map(|p| p.ack.wrapping_sub(s_isn)).collect();
        assert_eq!(acks, vec![2921, 5841, 8761, 10_001]);
        assert!(pkts.windows(2).all(|w| w[0].ts < w[1].ts));
        let fin = pkts.last().unwrap();
        assert_eq!(fin.flags, TcpFlags::FIN | TcpFlags::ACK);
        let d = fin.ts - (0.0011 + 0.1 + 0.0005 + 10_000.0 / 12.5e6);
        assert!(d.abs() < 1e-9, "{d}");
    }

    #[test]
    fn concurrent_flows_are_stretched() {
        let mut sim = Simulation::new(
            vec![arrival(0, 0.0, 1.0, 100), arrival(1, 0.0, 1.0, 100)],
            &[1.0],
            false,
        );
        sim.dispatch_next(0);
        sim.dispatch_next(0);
        sim.finish();
        for r in sim.records() {
            assert!(r.fct().unwrap() > 1.9);
        }
        assert!(sim.is_idle());
    }
}

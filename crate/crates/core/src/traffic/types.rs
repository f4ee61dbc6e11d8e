use std::fmt;
use std::net::Ipv4Addr;

use bitflags::bitflags;

/// IP protocol number for TCP.
pub const PROTO_TCP: u8 = 6;

/// Largest payload carried by one generated data packet (standard Ethernet MSS).
pub const MSS: u32 = 1460;

/// Flow identifier: the TCP/IPv4 5-tuple as seen by the VIP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FiveTuple {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl FiveTuple {
    pub fn tcp(src_ip: Ipv4Addr, src_port: u16, dst_ip: Ipv4Addr, dst_port: u16) -> Self {
        Self {
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            proto: PROTO_TCP,
        }
    }

    /// Packs the tuple into the 13-byte network-order form that is hashed
    /// for bucket selection and ECMP.
    pub fn packed(&self) -> [u8; 13] {
        let mut out = [0u8; 13];
        out[0..4].copy_from_slice(&self.src_ip.octets());
        out[4..8].copy_from_slice(&self.dst_ip.octets());
        out[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        out[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        out[12] = self.proto;
        out
    }

    /// 64-bit FNV-1a digest of [`FiveTuple::packed`].
    pub fn digest(&self) -> u64 {
        fnv1a64(&self.packed())
    }
}

impl fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{} -> {}:{}/{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.proto
        )
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit variant: xor each byte into the state, then multiply.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

bitflags! {
    /// TCP control flags carried by a [`PacketEvent`].
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct TcpFlags: u8 {
        const SYN = 0b0000_0001;
        const FIN = 0b0000_0010;
        const RST = 0b0000_0100;
        const PSH = 0b0000_1000;
        const ACK = 0b0001_0000;
    }
}

impl TcpFlags {
    /// Canonical token order used by the trace format.
    pub(crate) const TOKENS: [(TcpFlags, &'static str); 5] = [
        (TcpFlags::SYN, "SYN"),
        (TcpFlags::FIN, "FIN"),
        (TcpFlags::RST, "RST"),
        (TcpFlags::PSH, "PSH"),
        (TcpFlags::ACK, "ACK"),
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    ClientToVip,
    VipToClient,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ClientToVip => "client_to_vip",
            Direction::VipToClient => "vip_to_client",
        }
    }
}

/// One timestamped TCP packet observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketEvent {
    /// Seconds since the start of the trace.
    pub ts: f64,
    pub flow: FiveTuple,
    pub flags: TcpFlags,
    pub payload_len: u32,
    pub seq: u32,
    pub ack: u32,
    pub win: u16,
    pub dir: Direction,
    /// Backend chosen by the balancer, if any.
    pub egress_id: Option<u8>,
}

impl PacketEvent {
    pub fn is_syn(&self) -> bool {
        self.flags.contains(TcpFlags::SYN)
    }
}

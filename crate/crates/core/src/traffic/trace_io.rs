//! Line-delimited trace files.
//!
//! ```text
//! ts,src_ip,dst_ip,src_port,dst_port,proto,flags,payload_len,seq,ack,win,dir,egress
//! 0.0123,10.0.4.2,10.255.0.1,40112,80,6,SYN,0,1183,0,40210,client_to_vip,2
//! ```
//!
//! `flags` is a `|`-joined token set written in the order SYN, FIN, RST,
//! PSH, ACK (`NONE` for the empty set); `egress` is empty when unassigned.
//! Timestamps use the shortest decimal form that round-trips the `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::types::{Direction, FiveTuple, PacketEvent, TcpFlags};
use super::TrafficError;

pub const TRACE_HEADER: [&str; 13] = [
    "ts",
    "src_ip",
    "dst_ip",
    "src_port",
    "dst_port",
    "proto",
    "flags",
    "payload_len",
    "seq",
    "ack",
    "win",
    "dir",
    "egress",
];

pub fn format_flags(flags: TcpFlags) -> String {
    if flags.is_empty() {
        return "NONE".to_string();
    }
    TcpFlags::TOKENS
        .iter()
        .filter(|(f, _)| flags.contains(*f))
        .map(|(_, s)| *s)
        .collect::<Vec<_>>()
        .join("|")
}

pub fn parse_flags(s: &str) -> Option<TcpFlags> {
    if s == "NONE" {
        return Some(TcpFlags::empty());
    }
    if s.is_empty() {
        return None;
    }
    s.split('|').try_fold(TcpFlags::empty(), |acc, tok| {
        TcpFlags::TOKENS
            .iter()
            .find(|(_, name)| *name == tok)
            .map(|(f, _)| acc | *f)
    })
}

pub fn write_events<W: Write>(events: &[PacketEvent], out: W) -> Result<(), TrafficError> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for e in events {
        let egress = e.egress_id.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            e.ts.to_string(),
            e.flow.src_ip.to_string(),
            e.flow.dst_ip.to_string(),
            e.flow.src_port.to_string(),
            e.flow.dst_port.to_string(),
            e.flow.proto.to_string(),
            format_flags(e.flags),
            e.payload_len.to_string(),
            e.seq.to_string(),
            e.ack.to_string(),
            e.win.to_string(),
            e.dir.as_str().to_string(),
            egress,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(input: R) -> Result<Vec<PacketEvent>, TrafficError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = r.records();
    match records.next() {
        Some(Ok(h)) if h.iter().eq(TRACE_HEADER.iter().copied()) => {}
        Some(Ok(_)) => {
            return Err(TrafficError::Parse {
                line: 1,
                msg: "missing or unexpected header".into(),
            })
        }
        Some(Err(e)) => return Err(e.into()),
        None => {
            return Err(TrafficError::Parse {
                line: 1,
                msg: "empty file, header required".into(),
            })
        }
    }
    let mut out = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(parse_record(&rec).map_err(|msg| TrafficError::Parse { line, msg })?);
    }
    Ok(out)
}

fn parse_record(rec: &csv::StringRecord) -> Result<PacketEvent, String> {
    if rec.len() != TRACE_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            TRACE_HEADER.len(),
            rec.len()
        ));
    }
    fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, String> {
        rec[i]
            .parse()
            .map_err(|_| format!("invalid {} {:?}", TRACE_HEADER[i], &rec[i]))
    }
    let flags = parse_flags(&rec[6]).ok_or_else(|| format!("invalid flags {:?}", &rec[6]))?;
    let dir = match &rec[11] {
        "client_to_vip" => Direction::ClientToVip,
        "vip_to_client" => Direction::VipToClient,
        other => return Err(format!("invalid dir {other:?}")),
    };
    let egress_id = if rec[12].is_empty() {
        None
    } else {
        Some(field::<u8>(rec, 12)?)
    };
    let ts: f64 = field(rec, 0)?;
    if !ts.is_finite() {
        return Err(format!("non-finite ts {ts}"));
    }
    Ok(PacketEvent {
        ts,
        flow: FiveTuple {
            src_ip: field(rec, 1)?,
            dst_ip: field(rec, 2)?,
            src_port: field(rec, 3)?,
            dst_port: field(rec, 4)?,
            proto: field(rec, 5)?,
        },
        flags,
        payload_len: field(rec, 7)?,
        seq: field(rec, 8)?,
        ack: field(rec, 9)?,
        win: field(rec, 10)?,
        dir,
        egress_id,
    })
}

pub fn write_trace(events: &[PacketEvent], path: impl AsRef<Path>) -> Result<(), TrafficError> {
    let f = File::create(path.as_ref())?;
    write_events(events, BufWriter::new(f))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<PacketEvent>, TrafficError> {
    let f = File::open(path.as_ref())?;
    read_events(BufReader::new(f))
}

impl From<csv::Error> for TrafficError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        match e.into_kind() {
            csv::ErrorKind::Io(io) => TrafficError::Io(io),
            other => TrafficError::Parse {
                line,
                msg: format!("{other:?}"),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn header() -> String {
        TRACE_HEADER.join(",")
    }

    #[test]
    fn empty_trace_round_trip() {
        let mut buf = Vec::new();
        write_events(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), header() + "\n");
        assert!(read_events(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn flags_tokens() {
        assert_eq!(format_flags(TcpFlags::PSH | TcpFlags::ACK), "PSH|ACK");
        assert_eq!(format_flags(TcpFlags::SYN), "SYN");
        assert_eq!(parse_flags("ACK|PSH"), Some(TcpFlags::PSH | TcpFlags::ACK));
        assert_eq!(parse_flags("URG"), None);
        assert_eq!(parse_flags(""), None);
    }

    #[test]
    fn missing_flags_reports_line() {
        let text = format!(
            "{}\n0.5,10.0.0.1,10.255.0.1,1234,80,6,SYN,0,1,0,100,client_to_vip,0\n\
             0.6,10.0.0.1,10.255.0.1,1234,80,6,,0,1,0,100,client_to_vip,0\n",
            header()
        );
        match read_events(text.as_bytes()) {
            Err(TrafficError::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("flags"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn short_record_is_rejected() {
        let text = format!("{}\n0.5,10.0.0.1,10.255.0.1\n", header());
        assert!(matches!(
            read_events(text.as_bytes()),
            Err(TrafficError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn unassigned_egress_is_blank() {
        let ev = PacketEvent {
            ts: 0.25,
            flow: FiveTuple::tcp(Ipv4Addr::new(10, 0, 0, 9), 5555, Ipv4Addr::new(10, 255, 0, 1), 80),
            flags: TcpFlags::empty(),
            payload_len: 0,
            seq: 7,
            ack: 8,
            win: 9,
            dir: Direction::VipToClient,
            egress_id: None,
        };
        let mut buf = Vec::new();
        write_events(std::slice::from_ref(&ev), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",NONE,0,7,8,9,vip_to_client,"));
        assert_eq!(read_events(buf.as_slice()).unwrap(), vec![ev]);
    }
}

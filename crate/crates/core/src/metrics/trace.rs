//! Line-oriented packet trace.
//!
//! ```text
//! <time:%.6f> <kind> <flow_id> <seq> <size> [<reason>|<new_rate>]
//! ```
//!
//! `drop` lines carry a drop reason, `rate_change` lines the new rate in
//! bytes/s with three decimals; other kinds carry nothing after the size.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::mac::DropReason;
use crate::sim::{SimTime, MICROS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TraceKind {
    Create,
    Enqueue,
    Drop,
    Send,
    Recv,
    RateChange,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Create => "create",
            TraceKind::Enqueue => "enqueue",
            TraceKind::Drop => "drop",
            TraceKind::Send => "send",
            TraceKind::Recv => "recv",
            TraceKind::RateChange => "rate_change",
        }
    }
}

impl FromStr for TraceKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "create" => TraceKind::Create,
            "enqueue" => TraceKind::Enqueue,
            "drop" => TraceKind::Drop,
            "send" => TraceKind::Send,
            "recv" => TraceKind::Recv,
            "rate_change" => TraceKind::RateChange,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extra {
    None,
    Reason(DropReason),
    /// bytes/s
    Rate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub kind: TraceKind,
    pub flow_id: usize,
    pub seq: u64,
    pub size: u32,
    pub extra: Extra,
}

impl TraceRecord {
    pub fn new(time: SimTime, kind: TraceKind, flow_id: usize, seq: u64, size: u32) -> Self {
        TraceRecord { time, kind, flow_id, seq, size, extra: Extra::None }
    }

    pub fn drop(time: SimTime, flow_id: usize, seq: u64, size: u32, reason: DropReason) -> Self {
        TraceRecord { time, kind: TraceKind::Drop, flow_id, seq, size, extra: Extra::Reason(reason) }
    }

    pub fn rate_change(time: SimTime, flow_id: usize, seq: u64, size: u32, rate: f64) -> Self {
        TraceRecord { time, kind: TraceKind::RateChange, flow_id, seq, size, extra: Extra::Rate(rate) }
    }

    pub fn reason(&self) -> Option<DropReason> {
        match self.extra {
            Extra::Reason(r) => Some(r),
            _ => None,
        }
    }

    pub fn rate(&self) -> Option<f64> {
        match self.extra {
            Extra::Rate(r) => Some(r),
            _ => None,
        }
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {} {}", self.time, self.kind.as_str(), self.flow_id, self.seq, self.size)?;
        match self.extra {
            Extra::None => Ok(()),
            Extra::Reason(r) => write!(f, " {}", r.as_str()),
            Extra::Rate(r) => write!(f, " {r:.3}"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("trace line {line}: bad {field}: {msg}")]
pub struct TraceParseError {
    pub line: usize,
    pub field: &'static str,
    pub msg: String,
}

#[derive(Debug, Error)]
pub enum TraceReadError {
    #[error(transparent)]
    Parse(#[from] TraceParseError),
    #[error("reading trace: {0}")]
    Io(#[from] io::Error),
}

fn parse_time(tok: &str) -> Option<SimTime> {
    let (whole, frac) = tok.split_once('.')?;
    if frac.len() != 6
        || whole.is_empty()
        || !whole.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let secs: u64 = whole.parse().ok()?;
    let us: u64 = frac.parse().ok()?;
    secs.checked_mul(MICROS_PER_SEC)?.checked_add(us).map(SimTime)
}

pub fn parse_line(text: &str, line: usize) -> Result<TraceRecord, TraceParseError> {
    let err = |field: &'static str, msg: String| TraceParseError { line, field, msg };
    let mut toks = text.split(' ');
    let mut next = |field: &'static str| toks.next().ok_or_else(|| err(field, "missing".into()));

    let t = next("time")?;
    let time = parse_time(t).ok_or_else(|| err("time", format!("`{t}` is not %.6f seconds")))?;
    let k = next("kind")?;
    let kind: TraceKind = k.parse().map_err(|_| err("kind", format!("unknown kind `{k}`")))?;
    let f = next("flow_id")?;
    let flow_id = f.parse().map_err(|_| err("flow_id", format!("`{f}`")))?;
    let s = next("seq")?;
    let seq = s.parse().map_err(|_| err("seq", format!("`{s}`")))?;
    let z = next("size")?;
    let size = z.parse().map_err(|_| err("size", format!("`{z}`")))?;
    let extra = match kind {
        TraceKind::Drop => {
            let r = next("reason")?;
            Extra::Reason(r.parse().map_err(|_| err("reason", format!("unknown drop reason `{r}`")))?)
        }
        TraceKind::RateChange => {
            let r = next("new_rate")?;
            let rate: f64 = r.parse().map_err(|_| err("new_rate", format!("`{r}`")))?;
            if !rate.is_finite() {
                return Err(err("new_rate", format!("`{r}`")));
            }
            Extra::Rate(rate)
        }
        _ => Extra::None,
    };
    if let Some(extra_tok) = toks.next() {
        return Err(err("line", format!("trailing field `{extra_tok}`")));
    }
    Ok(TraceRecord { time, kind, flow_id, seq, size, extra })
}

/// Parse a whole trace; empty lines are not allowed except a missing final newline.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>, TraceReadError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn parse_trace_str(text: &str) -> Result<Vec<TraceRecord>, TraceParseError> {
    text.lines().enumerate().map(|(i, l)| parse_line(l, i + 1)).collect()
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut w: W) -> io::Result<()> {
    for r in records {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

pub fn emit_trace(records: &[TraceRecord]) -> String {
    let mut buf = Vec::with_capacity(records.len() * 32);
    write_trace(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("trace is ascii")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_drop_line() {
        let r = parse_line("3.205000 drop 2 1523 200 queue_overflow", 1).unwrap();
        assert_eq!(r, TraceRecord::drop(SimTime::from_secs_f64(3.205), 2, 1523, 200, DropReason::QueueOverflow));
        assert_eq!(r.to_string(), "3.205000 drop 2 1523 200 queue_overflow");
    }

    #[test]
    fn empty_trace() {
        assert!(parse_trace_str("").unwrap().is_empty());
        assert!(parse_trace("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn rate_change_format() {
        let r = TraceRecord::rate_change(SimTime(0), 0, 0, 200, 133_333.0);
        assert_eq!(r.to_string(), "0.000000 rate_change 0 0 200 133333.000");
        assert_eq!(parse_line(&r.to_string(), 1).unwrap(), r);
    }

    #[test]
    fn malformed_lines_report_position() {
        let text = "1.000000 create 0 0 200\n1.00 create 0 1 200\n";
        let e = parse_trace_str(text).unwrap_err();
        assert_eq!((e.line, e.field), (2, "time"));
        assert_eq!(parse_line("1.000000 fly 0 0 200", 7).unwrap_err().field, "kind");
        assert_eq!(parse_line("1.000000 drop 0 0 200", 1).unwrap_err().field, "reason");
        assert_eq!(parse_line("1.000000 drop 0 0 200 cosmic_ray", 1).unwrap_err().field, "reason");
        assert_eq!(parse_line("1.000000 recv 0 0 200 extra", 1).unwrap_err().field, "line");
        assert_eq!(parse_line("1.000000 recv x 0 200", 1).unwrap_err().field, "flow_id");
        assert_eq!(parse_line("-1.000000 recv 0 0 200", 1).unwrap_err().field, "time");
    }

    fn arb_record() -> impl Strategy<Value = TraceRecord> {
        (
            0u64..1_000_000_000_000,
            0usize..6,
            0usize..100,
            any::<u32>().prop_map(u64::from),
            1u32..2000,
            0u8..2,
            0.0f64..1e9,
        )
            .prop_map(|(t, k, flow, seq, size, reason, rate)| {
                let time = SimTime(t);
                match k {
                    0 => TraceRecord::new(time, TraceKind::Create, flow, seq, size),
                    1 => TraceRecord::new(time, TraceKind::Enqueue, flow, seq, size),
                    2 => TraceRecord::drop(
                        time,
                        flow,
                        seq,
                        size,
                        if reason == 0 { DropReason::QueueOverflow } else { DropReason::ChannelOutage },
                    ),
                    3 => TraceRecord::new(time, TraceKind::Send, flow, seq, size),
                    4 => TraceRecord::new(time, TraceKind::Recv, flow, seq, size),
                    _ => TraceRecord::rate_change(time, flow, seq, size, rate),
                }
            })
    }

    proptest! {
        #[test]
        fn emit_parse_emit(records in prop::collection::vec(arb_record(), 0..200)) {
            let text = emit_trace(&records);
            let parsed = parse_trace_str(&text).unwrap();
            prop_assert_eq!(emit_trace(&parsed), text);
        }
    }
}

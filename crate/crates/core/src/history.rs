//! Execution histories and their line-oriented text form.
//!
//! One event per line, five tab-separated columns:
//!
//! ```text
//! cycle<TAB>tid<TAB>txid<TAB>kind<TAB>args
//! ```
//!
//! `txid` is `-` for events that belong to no transaction (state-array
//! updates, barriers, lock traffic). `args` is a space-separated list of
//! `key=value` pairs and may be empty:
//!
//! | kind       | args                                   |
//! |------------|----------------------------------------|
//! | `begin`    | `mode=rot\|htm\|nontx\|sgl start=<cycle>` |
//! | `read`     | `line=<id> addr=<a> value=<v>`         |
//! | `write`    | `line=<id> addr=<a> value=<v>`         |
//! | `suspend`  |                                        |
//! | `resume`   |                                        |
//! | `snapshot` | `state=<s0>,<s1>,...`                  |
//! | `commit`   |                                        |
//! | `abort`    | `reason=conflict\|capacity\|nontx\|explicit` |
//! | `state`    | `value=<v>`                            |
//! | `barrier`  | `kind=sync\|lwsync`                     |
//! | `lock`     |                                        |
//! | `unlock`   |                                        |

use std::fmt;
use std::str::FromStr;

use crate::htm::{AbortReason, Addr, CacheLineId, ThreadId, TxId, TxMode, Value};

/// Virtual time in simulated cycles.
pub type Cycle = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierKind {
    Sync,
    LwSync,
}

impl BarrierKind {
    fn as_str(self) -> &'static str {
        match self {
            BarrierKind::Sync => "sync",
            BarrierKind::LwSync => "lwsync",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// `start` is the cycle the attempt's snapshot is taken from: the
    /// state-array announcement for SI-HTM attempts, the event itself
    /// otherwise.
    TxStart {
        txid: TxId,
        mode: TxMode,
        start: Cycle,
    },
    Read {
        txid: TxId,
        line: CacheLineId,
        addr: Addr,
        value: Value,
    },
    Write {
        txid: TxId,
        line: CacheLineId,
        addr: Addr,
        value: Value,
    },
    Suspend {
        txid: TxId,
    },
    Resume {
        txid: TxId,
    },
    SnapshotTaken {
        txid: TxId,
        states: Box<[u64]>,
    },
    Commit {
        txid: TxId,
    },
    Abort {
        txid: TxId,
        reason: AbortReason,
    },
    StateChange {
        value: u64,
    },
    Barrier {
        kind: BarrierKind,
    },
    LockAcquire,
    LockRelease,
}

impl EventKind {
    pub fn txid(&self) -> Option<TxId> {
        match self {
            EventKind::TxStart { txid, .. }
            | EventKind::Read { txid, .. }
            | EventKind::Write { txid, .. }
            | EventKind::Suspend { txid }
            | EventKind::Resume { txid }
            | EventKind::SnapshotTaken { txid, .. }
            | EventKind::Commit { txid }
            | EventKind::Abort { txid, .. } => Some(*txid),
            EventKind::StateChange { .. }
            | EventKind::Barrier { .. }
            | EventKind::LockAcquire
            | EventKind::LockRelease => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::TxStart { .. } => "begin",
            EventKind::Read { .. } => "read",
            EventKind::Write { .. } => "write",
            EventKind::Suspend { .. } => "suspend",
            EventKind::Resume { .. } => "resume",
            EventKind::SnapshotTaken { .. } => "snapshot",
            EventKind::Commit { .. } => "commit",
            EventKind::Abort { .. } => "abort",
            EventKind::StateChange { .. } => "state",
            EventKind::Barrier { .. } => "barrier",
            EventKind::LockAcquire => "lock",
            EventKind::LockRelease => "unlock",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub cycle: Cycle,
    pub tid: ThreadId,
    pub kind: EventKind,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t", self.cycle, self.tid)?;
        match self.kind.txid() {
            Some(t) => write!(f, "{}", t.0)?,
            None => f.write_str("-")?,
        }
        write!(f, "\t{}\t", self.kind.name())?;
        match &self.kind {
            EventKind::TxStart { mode, start, .. } => {
                write!(f, "mode={} start={start}", mode.as_str())
            }
            EventKind::Read { line, addr, value, .. } | EventKind::Write { line, addr, value, .. } => {
                write!(f, "line={line} addr={addr} value={value}")
            }
            EventKind::SnapshotTaken { states, .. } => {
                f.write_str("state=")?;
                for (i, s) in states.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{s}")?;
                }
                Ok(())
            }
            EventKind::Abort { reason, .. } => write!(f, "reason={reason}"),
            EventKind::StateChange { value } => write!(f, "value={value}"),
            EventKind::Barrier { kind } => write!(f, "kind={}", kind.as_str()),
            EventKind::Suspend { .. }
            | EventKind::Resume { .. }
            | EventKind::Commit { .. }
            | EventKind::LockAcquire
            | EventKind::LockRelease => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("history line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

struct Args<'a>(Vec<(&'a str, &'a str)>);

impl<'a> Args<'a> {
    fn parse(s: &'a str) -> Result<Self, String> {
        s.split_whitespace()
            .map(|kv| kv.split_once('=').ok_or_else(|| format!("malformed argument `{kv}`")))
            .collect::<Result<_, _>>()
            .map(Args)
    }

    fn get(&self, key: &str) -> Result<&'a str, String> {
        self.0
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("missing `{key}`"))
    }

    fn num(&self, key: &str) -> Result<u64, String> {
        let v = self.get(key)?;
        v.parse().map_err(|_| format!("`{key}` is not a number: {v}"))
    }
}

impl FromStr for Event {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let cols: Vec<&str> = line.splitn(5, '\t').collect();
        if cols.len() < 4 {
            return Err(format!("expected 5 tab-separated columns, got {}", cols.len()));
        }
        let cycle = cols[0].parse().map_err(|_| format!("bad cycle `{}`", cols[0]))?;
        let tid = cols[1].parse().map_err(|_| format!("bad tid `{}`", cols[1]))?;
        let txid = match cols[2] {
            "-" => None,
            s => Some(TxId(s.parse().map_err(|_| format!("bad txid `{s}`"))?)),
        };
        let args = Args::parse(cols.get(4).copied().unwrap_or(""))?;
        let need_tx = || txid.ok_or_else(|| format!("`{}` needs a txid", cols[3]));
        let kind = match cols[3] {
            "begin" => EventKind::TxStart {
                txid: need_tx()?,
                mode: TxMode::parse(args.get("mode")?)
                    .ok_or_else(|| format!("bad mode `{}`", args.get("mode").unwrap()))?,
                start: args.num("start")?,
            },
            k @ ("read" | "write") => {
                let (txid, line, addr, value) = (
                    need_tx()?,
                    CacheLineId(args.num("line")?),
                    args.num("addr")?,
                    args.num("value")?,
                );
                if k == "read" {
                    EventKind::Read { txid, line, addr, value }
                } else {
                    EventKind::Write { txid, line, addr, value }
                }
            }
            "suspend" => EventKind::Suspend { txid: need_tx()? },
            "resume" => EventKind::Resume { txid: need_tx()? },
            "snapshot" => EventKind::SnapshotTaken {
                txid: need_tx()?,
                states: args
                    .get("state")?
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| format!("bad state entry `{s}`")))
                    .collect::<Result<_, _>>()?,
            },
            "commit" => EventKind::Commit { txid: need_tx()? },
            "abort" => EventKind::Abort {
                txid: need_tx()?,
                reason: AbortReason::parse(args.get("reason")?)
                    .ok_or_else(|| format!("bad reason `{}`", args.get("reason").unwrap()))?,
            },
            "state" => EventKind::StateChange { value: args.num("value")? },
            "barrier" => EventKind::Barrier {
                kind: match args.get("kind")? {
                    "sync" => BarrierKind::Sync,
                    "lwsync" => BarrierKind::LwSync,
                    k => return Err(format!("bad barrier kind `{k}`")),
                },
            },
            "lock" => EventKind::LockAcquire,
            "unlock" => EventKind::LockRelease,
            k => return Err(format!("unknown event kind `{k}`")),
        };
        if kind.txid().is_none() && txid.is_some() {
            return Err(format!("`{}` takes no txid", cols[3]));
        }
        Ok(Event { cycle, tid, kind })
    }
}

/// A totally ordered event log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    events: Vec<Event>,
}

impl History {
    pub fn new() -> Self {
        History::default()
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Event> {
        self.events.iter()
    }

    /// Events belonging to `txid`, in order.
    pub fn of_tx(&self, txid: TxId) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind.txid() == Some(txid))
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<History, ParseError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|(i, l)| l.parse().map_err(|msg| ParseError { line: i + 1, msg }))
            .collect::<Result<Vec<_>, _>>()
            .map(History::from)
    }
}

impl From<Vec<Event>> for History {
    fn from(events: Vec<Event>) -> Self {
        History { events }
    }
}

impl FromIterator<Event> for History {
    fn from_iter<I: IntoIterator<Item = Event>>(iter: I) -> Self {
        History { events: iter.into_iter().collect() }
    }
}

impl<'a> IntoIterator for &'a History {
    type Item = &'a Event;
    type IntoIter = std::slice::Iter<'a, Event>;

    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.events {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kind() -> impl Strategy<Value = EventKind> {
        let tx = (0u64..50).prop_map(TxId);
        let mode = prop_oneof![
            Just(TxMode::Htm),
            Just(TxMode::Rot),
            Just(TxMode::NonTx),
            Just(TxMode::Sgl)
        ];
        let reason = (0usize..4).prop_map(|i| AbortReason::ALL[i]);
        prop_oneof![
            (tx.clone(), mode, any::<u64>())
                .prop_map(|(txid, mode, start)| EventKind::TxStart { txid, mode, start }),
            (tx.clone(), any::<u64>(), any::<u64>(), any::<u64>(), any::<bool>()).prop_map(
                |(txid, line, addr, value, rd)| {
                    let line = CacheLineId(line);
                    if rd {
                        EventKind::Read { txid, line, addr, value }
                    } else {
                        EventKind::Write { txid, line, addr, value }
                    }
                }
            ),
            tx.clone().prop_map(|txid| EventKind::Suspend { txid }),
            tx.clone().prop_map(|txid| EventKind::Resume { txid }),
            (tx.clone(), prop::collection::vec(any::<u64>(), 0..5)).prop_map(|(txid, s)| {
                EventKind::SnapshotTaken { txid, states: s.into() }
            }),
            tx.clone().prop_map(|txid| EventKind::Commit { txid }),
            (tx, reason).prop_map(|(txid, reason)| EventKind::Abort { txid, reason }),
            any::<u64>().prop_map(|value| EventKind::StateChange { value }),
            any::<bool>().prop_map(|s| EventKind::Barrier {
                kind: if s { BarrierKind::Sync } else { BarrierKind::LwSync }
            }),
            Just(EventKind::LockAcquire),
            Just(EventKind::LockRelease),
        ]
    }

    proptest! {
        #[test]
        fn text_form_round_trips(
            events in prop::collection::vec((any::<u64>(), 0usize..80, kind()), 0..40)
        ) {
            let h: History = events
                .into_iter()
                .map(|(cycle, tid, kind)| Event { cycle, tid, kind })
                .collect();
            let text = h.to_text();
            prop_assert_eq!(History::parse(&text).unwrap(), h);
        }
    }

    #[test]
    fn documented_line_shapes() {
        let e = Event {
            cycle: 42,
            tid: 3,
            kind: EventKind::TxStart { txid: TxId(7), mode: TxMode::Rot, start: 40 },
        };
        assert_eq!(e.to_string(), "42\t3\t7\tbegin\tmode=rot start=40");
        let e = Event { cycle: 9, tid: 0, kind: EventKind::LockAcquire };
        assert_eq!(e.to_string(), "9\t0\t-\tlock\t");
        let e = Event {
            cycle: 50,
            tid: 1,
            kind: EventKind::SnapshotTaken { txid: TxId(2), states: vec![0, 1, 44].into() },
        };
        assert_eq!(e.to_string(), "50\t1\t2\tsnapshot\tstate=0,1,44");
    }

    #[test]
    fn rejects_garbage() {
        assert!(History::parse("1\t0\t-\tbegin\tmode=rot start=1").is_err());
        assert!(History::parse("x\t0\t1\tcommit\t").is_err());
        assert!(History::parse("1\t0\t1\tfrobnicate\t").is_err());
        assert!(History::parse("1\t0\t1\tabort\treason=boredom").is_err());
        let err = History::parse("1\t0\t1\tcommit\t\n2\t0\t-\tstate\tvalue=q").unwrap_err();
        assert_eq!(err.line, 2);
    }
}

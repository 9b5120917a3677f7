//! Snapshot isolation and serializability checks over histories.
//!
//! Every transaction gets a start timestamp (the `start` field of its
//! begin event) and, if it commits, a commit timestamp: the cycle of its
//! snapshot event when it has one, otherwise the cycle of its commit.
//!
//! Rules, with initial memory all zeroes:
//!
//! * `R3`: a read after the transaction's own write to the address
//!   returns the latest such write.
//! * `R1`: any other read of a committed transaction returns the value
//!   of the committed write with the greatest commit timestamp below the
//!   reader's start timestamp.
//! * `DirtyRead` (all transactions, aborted ones included): no read
//!   returns a value written by another transaction that was uncommitted
//!   at the read, or whose commit timestamp is not below the reader's
//!   start timestamp.
//! * `R5`: two committed transactions that wrote a common address have
//!   disjoint `[start, commit]` intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::history::{Cycle, Event, EventKind, History};
use crate::htm::{Addr, ThreadId, TxId, TxMode, Value};
use crate::sched::{Op, Program, ProgramError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    R1,
    R3,
    R5,
    DirtyRead,
    NotSerializable,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::R1 => "R1",
            Rule::R3 => "R3",
            Rule::R5 => "R5",
            Rule::DirtyRead => "DirtyRead",
            Rule::NotSerializable => "NotSerializable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    pub txid: TxId,
    pub detail: String,
    /// A minimal sub-history that still violates `rule`.
    pub witness: History,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} violated by {}: {}", self.rule, self.txid, self.detail)?;
        write!(f, "{}", self.witness)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Violation(Violation),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn rule(&self) -> Option<Rule> {
        match self {
            Verdict::Pass => None,
            Verdict::Violation(v) => Some(v.rule),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckError {
    #[error("malformed history at event {index}: {msg}")]
    Malformed { index: usize, msg: String },
    #[error("{0} committed transactions, above the oracle limit of {MAX_ORACLE_TXS}")]
    TooLarge(usize),
}

pub const MAX_ORACLE_TXS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timestamps {
    pub start: Cycle,
    pub commit: Cycle,
}

#[derive(Debug, Clone)]
struct TxInfo {
    tid: ThreadId,
    start: Cycle,
    snapshot: Option<Cycle>,
    /// Cycle of the commit event, i.e. when the writes became visible.
    committed_at: Option<Cycle>,
    aborted: bool,
    events: Vec<usize>,
}

impl TxInfo {
    fn commit_ts(&self) -> Option<Cycle> {
        self.committed_at.map(|c| self.snapshot.unwrap_or(c))
    }
}

struct Index<'h> {
    events: &'h [Event],
    txs: BTreeMap<TxId, TxInfo>,
}

fn malformed<T>(index: usize, msg: impl Into<String>) -> Result<T, CheckError> {
    Err(CheckError::Malformed { index, msg: msg.into() })
}

impl<'h> Index<'h> {
    fn build(h: &'h History) -> Result<Self, CheckError> {
        let events = h.events();
        let mut txs: BTreeMap<TxId, TxInfo> = BTreeMap::new();
        let mut prev: Option<Cycle> = None;
        for (i, e) in events.iter().enumerate() {
            if prev.is_some_and(|p| e.cycle <= p) {
                return malformed(i, "cycles must strictly increase");
            }
            prev = Some(e.cycle);
            let Some(txid) = e.kind.txid() else { continue };
            if let EventKind::TxStart { start, mode, .. } = e.kind {
                if txs.contains_key(&txid) {
                    return malformed(i, format!("{txid} begins twice"));
                }
                if start > e.cycle {
                    return malformed(i, "start timestamp after its begin event");
                }
                if mode == TxMode::Htm && start != e.cycle {
                    return malformed(i, "hardware begin must start at its own cycle");
                }
                txs.insert(
                    txid,
                    TxInfo {
                        tid: e.tid,
                        start,
                        snapshot: None,
                        committed_at: None,
                        aborted: false,
                        events: vec![i],
                    },
                );
                continue;
            }
            let Some(t) = txs.get_mut(&txid) else {
                return malformed(i, format!("{txid} used before it begins"));
            };
            if t.tid != e.tid {
                return malformed(i, format!("{txid} belongs to thread {}", t.tid));
            }
            if t.committed_at.is_some() || t.aborted {
                return malformed(i, format!("{txid} has already finished"));
            }
            match e.kind {
                EventKind::SnapshotTaken { .. } => {
                    if t.snapshot.is_some() {
                        return malformed(i, format!("{txid} snapshots twice"));
                    }
                    t.snapshot = Some(e.cycle);
                }
                EventKind::Commit { .. } => t.committed_at = Some(e.cycle),
                EventKind::Abort { .. } => t.aborted = true,
                _ if t.snapshot.is_some() && matches!(e.kind, EventKind::Read { .. } | EventKind::Write { .. }) => {
                    return malformed(i, format!("{txid} accesses memory after its snapshot"));
                }
                _ => {}
            }
            t.events.push(i);
        }
        Ok(Index { events, txs })
    }

    fn committed(&self) -> impl Iterator<Item = (&TxId, &TxInfo)> {
        self.txs.iter().filter(|(_, t)| t.committed_at.is_some())
    }

    /// Final value each committed transaction wrote per address.
    fn final_writes(&self, txid: TxId) -> BTreeMap<Addr, Value> {
        let mut out = BTreeMap::new();
        for &i in &self.txs[&txid].events {
            if let EventKind::Write { addr, value, .. } = self.events[i].kind {
                out.insert(addr, value);
            }
        }
        out
    }
}

/// Start and commit timestamps of every committed transaction.
pub fn timestamps(h: &History) -> Result<BTreeMap<TxId, Timestamps>, CheckError> {
    let idx = Index::build(h)?;
    Ok(idx
        .committed()
        .map(|(&id, t)| (id, Timestamps { start: t.start, commit: t.commit_ts().unwrap() }))
        .collect())
}

struct Found {
    rule: Rule,
    txid: TxId,
    involved: Vec<TxId>,
    detail: String,
}

fn first_violation(idx: &Index) -> Option<Found> {
    // Committed versions per address: (commit_ts, value, writer).
    let mut versions: BTreeMap<Addr, Vec<(Cycle, Value, TxId)>> = BTreeMap::new();
    let mut writers_of: BTreeMap<(Addr, Value), BTreeSet<TxId>> = BTreeMap::new();
    for (&id, t) in &idx.txs {
        for &i in &t.events {
            if let EventKind::Write { addr, value, .. } = idx.events[i].kind {
                writers_of.entry((addr, value)).or_default().insert(id);
            }
        }
        if let Some(ts) = t.commit_ts() {
            for (addr, value) in idx.final_writes(id) {
                versions.entry(addr).or_default().push((ts, value, id));
            }
        }
    }
    for v in versions.values_mut() {
        v.sort();
    }

    let mut found: Vec<(usize, Found)> = Vec::new();
    for (&id, t) in &idx.txs {
        let mut own: BTreeMap<Addr, Value> = BTreeMap::new();
        for &i in &t.events {
            let e = &idx.events[i];
            match e.kind {
                EventKind::Write { addr, value, .. } => {
                    own.insert(addr, value);
                }
                EventKind::Read { addr, value, .. } => {
                    if let Some(&mine) = own.get(&addr) {
                        if mine != value && t.committed_at.is_some() {
                            found.push((i, Found {
                                rule: Rule::R3,
                                txid: id,
                                involved: vec![id],
                                detail: format!("read {value} from {addr} after writing {mine}"),
                            }));
                        }
                        continue;
                    }
                    let (expected, source) = versions
                        .get(&addr)
                        .and_then(|v| v.iter().rev().find(|&&(ts, _, _)| ts < t.start))
                        .map_or((0, None), |&(_, val, w)| (val, Some(w)));
                    if value == expected {
                        continue;
                    }
                    let dirty = writers_of
                        .get(&(addr, value))
                        .into_iter()
                        .flatten()
                        .filter(|&&w| w != id)
                        .find(|&&w| {
                            let wi = &idx.txs[&w];
                            match (wi.committed_at, wi.commit_ts()) {
                                (Some(at), Some(ts)) => at > e.cycle || ts >= t.start,
                                _ => true,
                            }
                        });
                    if let Some(&w) = dirty {
                        found.push((i, Found {
                            rule: Rule::DirtyRead,
                            txid: id,
                            involved: vec![id, w],
                            detail: format!(
                                "read {value} from {addr}, written by {w} which was not visible at start {}",
                                t.start
                            ),
                        }));
                    } else if t.committed_at.is_some() {
                        let mut involved = vec![id];
                        involved.extend(source);
                        involved.extend(writers_of.get(&(addr, value)).into_iter().flatten().copied());
                        found.push((i, Found {
                            rule: Rule::R1,
                            txid: id,
                            involved,
                            detail: format!("read {value} from {addr}, snapshot value is {expected}"),
                        }));
                    }
                }
                _ => {}
            }
        }
    }

    let committed: Vec<(TxId, Timestamps, BTreeSet<Addr>)> = idx
        .committed()
        .map(|(&id, t)| {
            let ts = Timestamps { start: t.start, commit: t.commit_ts().unwrap() };
            (id, ts, idx.final_writes(id).into_keys().collect())
        })
        .collect();
    for (a, (ida, ta, wa)) in committed.iter().enumerate() {
        for (idb, tb, wb) in &committed[a + 1..] {
            let overlap = ta.start <= tb.commit && tb.start <= ta.commit;
            if let Some(addr) = wa.intersection(wb).next().filter(|_| overlap) {
                let (first, second) = if ta.commit <= tb.commit { (ida, idb) } else { (idb, ida) };
                let at = *idx.txs[second].events.last().unwrap();
                found.push((at, Found {
                    rule: Rule::R5,
                    txid: *second,
                    involved: vec![*ida, *idb],
                    detail: format!("both {first} and {second} wrote {addr} in overlapping intervals"),
                }));
            }
        }
    }
    found.into_iter().min_by_key(|(i, _)| *i).map(|(_, f)| f)
}

fn rule_of(h: &History) -> Option<Rule> {
    Index::build(h).ok().as_ref().and_then(first_violation).map(|f| f.rule)
}

/// Shrinks `h` one event at a time while it still violates `rule`.
fn minimize(mut h: Vec<Event>, rule: Rule) -> History {
    let mut i = 0;
    while i < h.len() {
        let mut shorter = h.clone();
        shorter.remove(i);
        if rule_of(&History::from(shorter.clone())) == Some(rule) {
            h = shorter;
        } else {
            i += 1;
        }
    }
    History::from(h)
}

fn witness(idx: &Index, involved: &[TxId], rule: Rule) -> History {
    let mut keep: Vec<usize> = involved
        .iter()
        .flat_map(|id| idx.txs[id].events.iter().copied())
        .collect();
    keep.sort_unstable();
    keep.dedup();
    let sub: Vec<Event> = keep.iter().map(|&i| idx.events[i].clone()).collect();
    if rule_of(&History::from(sub.clone())) == Some(rule) {
        minimize(sub, rule)
    } else {
        minimize(idx.events.to_vec(), rule)
    }
}

/// Checks the SI restrictions. Barrier, state and lock events are ignored.
pub fn check_si(h: &History) -> Result<Verdict, CheckError> {
    let idx = Index::build(h)?;
    Ok(match first_violation(&idx) {
        None => Verdict::Pass,
        Some(f) => Verdict::Violation(Violation {
            rule: f.rule,
            txid: f.txid,
            detail: f.detail,
            witness: witness(&idx, &f.involved, f.rule),
        }),
    })
}

/// Brute-force serializability oracle: passes iff some serial order of
/// the committed transactions reproduces every value they read.
pub fn check_serializable(h: &History) -> Result<Verdict, CheckError> {
    let idx = Index::build(h)?;
    let committed: Vec<TxId> = idx.committed().map(|(&id, _)| id).collect();
    if committed.len() > MAX_ORACLE_TXS {
        return Err(CheckError::TooLarge(committed.len()));
    }
    let bodies: Vec<Vec<&EventKind>> = committed
        .iter()
        .map(|id| idx.txs[id].events.iter().map(|&i| &idx.events[i].kind).collect())
        .collect();

    fn search(
        bodies: &[Vec<&EventKind>],
        used: &mut Vec<bool>,
        mem: &BTreeMap<Addr, Value>,
    ) -> bool {
        if used.iter().all(|&u| u) {
            return true;
        }
        for i in 0..bodies.len() {
            if used[i] {
                continue;
            }
            let mut view = mem.clone();
            let consistent = bodies[i].iter().all(|k| match **k {
                EventKind::Read { addr, value, .. } => view.get(&addr).copied().unwrap_or(0) == value,
                EventKind::Write { addr, value, .. } => {
                    view.insert(addr, value);
                    true
                }
                _ => true,
            });
            if consistent {
                used[i] = true;
                if search(bodies, used, &view) {
                    return true;
                }
                used[i] = false;
            }
        }
        false
    }

    if search(&bodies, &mut vec![false; bodies.len()], &BTreeMap::new()) {
        return Ok(Verdict::Pass);
    }
    let keep: BTreeSet<usize> = committed
        .iter()
        .flat_map(|id| idx.txs[id].events.iter().copied())
        .collect();
    Ok(Verdict::Violation(Violation {
        rule: Rule::NotSerializable,
        txid: committed[0],
        detail: format!("no serial order of {} committed transactions explains the reads", committed.len()),
        witness: keep.into_iter().map(|i| idx.events[i].clone()).collect(),
    }))
}

/// Read promotion: after every read of a listed address, write the value
/// just read back to it. Promoted read-only transactions become writers.
pub fn promote_reads(program: &Program, addrs: &[Addr]) -> Result<Program, ProgramError> {
    let read: BTreeSet<Addr> = program
        .threads
        .iter()
        .flatten()
        .flat_map(|tx| tx.ops.iter())
        .filter_map(|op| match op {
            Op::Read(a) => Some(*a),
            _ => None,
        })
        .collect();
    if let Some(&a) = addrs.iter().find(|a| !read.contains(a)) {
        return Err(ProgramError::NotRead(a));
    }
    let mut out = program.clone();
    for tx in out.threads.iter_mut().flatten() {
        let mut ops = Vec::with_capacity(tx.ops.len());
        for &op in &tx.ops {
            ops.push(op);
            if let Op::Read(a) = op {
                if addrs.contains(&a) {
                    ops.push(Op::WriteBack(a));
                    tx.is_ro = false;
                }
            }
        }
        tx.ops = ops;
    }
    Ok(out)
}

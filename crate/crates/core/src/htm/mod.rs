//! Model of the POWER8 HTM substrate.
//!
//! Conflicts are detected eagerly at cache-line granularity and resolved by
//! killing one side:
//!
//! * a read (transactional or not) of a line another transaction has written
//!   kills the writer;
//! * a write to a line another transaction has written kills the requester;
//! * a write to a line held in a regular transaction's read set is resolved
//!   by [`WriteAfterReadPolicy`];
//! * a non-transactional write kills every transaction tracking the line.
//!
//! Rollback-only transactions (ROTs) track only writes, so reads never count
//! against the TMCAM and write-after-read goes undetected. The TMCAM budget is
//! shared by every live transaction on a core.
//!
//! Writes are buffered per transaction and published by [`HtmMachine::tend`]
//! in a single step, so committed memory is always single-version.

mod topology;

pub use topology::{Addr, CacheLineId, ThreadId, Topology, TopologyError, Value};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

/// Identifier of one transaction attempt. Retries get fresh ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxId(pub u64);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tx{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxMode {
    /// Regular hardware transaction: reads and writes tracked.
    Htm,
    /// Rollback-only transaction: only writes tracked.
    Rot,
    /// Runs without hardware tracking (read-only fast path).
    NonTx,
    /// Runs non-transactionally while holding the global lock.
    Sgl,
}

impl TxMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TxMode::Htm => "htm",
            TxMode::Rot => "rot",
            TxMode::NonTx => "nontx",
            TxMode::Sgl => "sgl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "htm" => TxMode::Htm,
            "rot" => TxMode::Rot,
            "nontx" => TxMode::NonTx,
            "sgl" => TxMode::Sgl,
            _ => return None,
        })
    }

    pub fn is_hardware(self) -> bool {
        matches!(self, TxMode::Htm | TxMode::Rot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxStatus {
    Active,
    Suspended,
    /// Killed while suspended; becomes `Aborted` at resume.
    Doomed,
    Committed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AbortReason {
    Conflict,
    Capacity,
    NonTxKill,
    Explicit,
}

impl AbortReason {
    pub const ALL: [AbortReason; 4] = [
        AbortReason::Conflict,
        AbortReason::Capacity,
        AbortReason::NonTxKill,
        AbortReason::Explicit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AbortReason::Conflict => "conflict",
            AbortReason::Capacity => "capacity",
            AbortReason::NonTxKill => "nontx",
            AbortReason::Explicit => "explicit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AbortReason::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Who loses when a write hits a line in a live regular transaction's read set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WriteAfterReadPolicy {
    /// The writer aborts, like the write-write case.
    #[default]
    RequesterAborts,
    /// The readers are killed and the write proceeds.
    KillReaders,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HtmError {
    #[error("{txid} aborted ({reason})")]
    Aborted { txid: TxId, reason: AbortReason },
    #[error("thread {0} already has a live transaction")]
    NestedBegin(ThreadId),
    #[error("cannot {op} {txid} while {status:?}")]
    InvalidState {
        txid: TxId,
        status: TxStatus,
        op: &'static str,
    },
    #[error("unknown transaction {0}")]
    UnknownTx(TxId),
    #[error("hardware transactions cannot begin in {0:?} mode")]
    UnsupportedMode(TxMode),
}

impl HtmError {
    pub fn abort_reason(&self) -> Option<AbortReason> {
        match self {
            HtmError::Aborted { reason, .. } => Some(*reason),
            _ => None,
        }
    }
}

/// Per-attempt bookkeeping of a hardware transaction.
#[derive(Debug, Clone)]
pub struct TxDescriptor {
    pub txid: TxId,
    pub tid: ThreadId,
    pub core: usize,
    pub mode: TxMode,
    pub status: TxStatus,
    pub write_buffer: BTreeMap<CacheLineId, BTreeMap<Addr, Value>>,
    pub tracked_reads: BTreeSet<CacheLineId>,
    pub tracked_writes: BTreeSet<CacheLineId>,
    pub abort_reason: Option<AbortReason>,
}

impl TxDescriptor {
    fn is_live(&self) -> bool {
        matches!(self.status, TxStatus::Active | TxStatus::Suspended)
    }

    fn tracks(&self, line: CacheLineId) -> bool {
        self.tracked_reads.contains(&line) || self.tracked_writes.contains(&line)
    }

    /// Number of TMCAM entries this transaction occupies.
    pub fn footprint(&self) -> usize {
        self.tracked_reads.union(&self.tracked_writes).count()
    }

    fn buffered(&self, line: CacheLineId, addr: Addr) -> Option<Value> {
        self.write_buffer.get(&line)?.get(&addr).copied()
    }
}

/// Committed, single-version memory. Untouched addresses hold zero.
#[derive(Debug, Clone, Default)]
pub struct SimMemory {
    committed: HashMap<Addr, Value>,
}

impl SimMemory {
    pub fn get(&self, addr: Addr) -> Value {
        self.committed.get(&addr).copied().unwrap_or(0)
    }

    pub fn set(&mut self, addr: Addr, value: Value) {
        self.committed.insert(addr, value);
    }

    /// Non-zero cells in address order.
    pub fn snapshot(&self) -> BTreeMap<Addr, Value> {
        self.committed
            .iter()
            .filter(|(_, v)| **v != 0)
            .map(|(a, v)| (*a, *v))
            .collect()
    }
}

/// The simulated HTM: committed memory plus every unretired transaction.
#[derive(Debug, Clone)]
pub struct HtmMachine {
    topology: Topology,
    war_policy: WriteAfterReadPolicy,
    memory: SimMemory,
    txs: BTreeMap<TxId, TxDescriptor>,
    by_thread: BTreeMap<ThreadId, TxId>,
    writers: HashMap<CacheLineId, TxId>,
    readers: HashMap<CacheLineId, BTreeSet<TxId>>,
    core_usage: Vec<usize>,
    next_txid: u64,
}

impl HtmMachine {
    pub fn new(topology: Topology, war_policy: WriteAfterReadPolicy) -> Self {
        let cores = topology.n_cores();
        HtmMachine {
            topology,
            war_policy,
            memory: SimMemory::default(),
            txs: BTreeMap::new(),
            by_thread: BTreeMap::new(),
            writers: HashMap::new(),
            readers: HashMap::new(),
            core_usage: vec![0; cores],
            next_txid: 1,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn memory(&self) -> &SimMemory {
        &self.memory
    }

    /// Allocates an id without starting a hardware transaction, for attempts
    /// that run outside the HTM (read-only fast path, global lock).
    pub fn fresh_txid(&mut self) -> TxId {
        let id = TxId(self.next_txid);
        self.next_txid += 1;
        id
    }

    pub fn descriptor(&self, txid: TxId) -> Option<&TxDescriptor> {
        self.txs.get(&txid)
    }

    pub fn status(&self, txid: TxId) -> Option<TxStatus> {
        self.txs.get(&txid).map(|d| d.status)
    }

    pub fn live_tx_of(&self, tid: ThreadId) -> Option<TxId> {
        self.by_thread
            .get(&tid)
            .copied()
            .filter(|txid| self.txs[txid].status != TxStatus::Aborted)
    }

    /// TMCAM entries in use on `core`.
    pub fn core_usage(&self, core: usize) -> usize {
        self.core_usage[core]
    }

    pub fn tbegin(&mut self, tid: ThreadId, mode: TxMode) -> Result<TxId, HtmError> {
        if !mode.is_hardware() {
            return Err(HtmError::UnsupportedMode(mode));
        }
        if let Some(old) = self.by_thread.get(&tid).copied() {
            if self.txs[&old].status != TxStatus::Aborted {
                return Err(HtmError::NestedBegin(tid));
            }
            self.txs.remove(&old);
        }
        let txid = self.fresh_txid();
        self.txs.insert(
            txid,
            TxDescriptor {
                txid,
                tid,
                core: self.topology.core_of(tid),
                mode,
                status: TxStatus::Active,
                write_buffer: BTreeMap::new(),
                tracked_reads: BTreeSet::new(),
                tracked_writes: BTreeSet::new(),
                abort_reason: None,
            },
        );
        self.by_thread.insert(tid, txid);
        Ok(txid)
    }

    pub fn tread(&mut self, txid: TxId, addr: Addr) -> Result<Value, HtmError> {
        let line = self.topology.line_of(addr);
        let (mode, grows) = {
            let d = self.expect_status(txid, TxStatus::Active, "read in")?;
            (d.mode, !d.tracks(line))
        };
        if mode == TxMode::Htm && grows && !self.has_room(txid) {
            return Err(self.kill_requester(txid, AbortReason::Capacity));
        }
        if let Some(writer) = self.writers.get(&line).copied() {
            if writer != txid {
                self.kill(writer, AbortReason::Conflict);
            }
        }
        let d = &self.txs[&txid];
        let value = d
            .buffered(line, addr)
            .unwrap_or_else(|| self.memory.get(addr));
        if mode == TxMode::Htm {
            self.track(txid, line, false);
        }
        Ok(value)
    }

    pub fn twrite(&mut self, txid: TxId, addr: Addr, value: Value) -> Result<(), HtmError> {
        let line = self.topology.line_of(addr);
        let grows = !self.expect_status(txid, TxStatus::Active, "write in")?.tracks(line);
        if self.writers.get(&line).is_some_and(|w| *w != txid) {
            return Err(self.kill_requester(txid, AbortReason::Conflict));
        }
        let readers: Vec<TxId> = self
            .readers
            .get(&line)
            .map(|rs| rs.iter().copied().filter(|r| *r != txid).collect())
            .unwrap_or_default();
        if !readers.is_empty() {
            match self.war_policy {
                WriteAfterReadPolicy::RequesterAborts => {
                    return Err(self.kill_requester(txid, AbortReason::Conflict));
                }
                WriteAfterReadPolicy::KillReaders => {
                    for r in readers {
                        self.kill(r, AbortReason::Conflict);
                    }
                }
            }
        }
        if grows && !self.has_room(txid) {
            return Err(self.kill_requester(txid, AbortReason::Capacity));
        }
        self.track(txid, line, true);
        let d = self.txs.get_mut(&txid).expect("checked above");
        d.write_buffer.entry(line).or_default().insert(addr, value);
        Ok(())
    }

    pub fn tsuspend(&mut self, txid: TxId) -> Result<(), HtmError> {
        self.expect_status(txid, TxStatus::Active, "suspend")?;
        self.txs.get_mut(&txid).unwrap().status = TxStatus::Suspended;
        Ok(())
    }

    /// Resumes a suspended transaction. Kills that landed while it was
    /// suspended take effect here.
    pub fn tresume(&mut self, txid: TxId) -> Result<(), HtmError> {
        let d = self.txs.get_mut(&txid).ok_or(HtmError::UnknownTx(txid))?;
        match d.status {
            TxStatus::Suspended => {
                d.status = TxStatus::Active;
                Ok(())
            }
            TxStatus::Doomed => {
                d.status = TxStatus::Aborted;
                Err(HtmError::Aborted {
                    txid,
                    reason: d.abort_reason.expect("doomed transactions carry a reason"),
                })
            }
            status => Err(self.state_error(txid, status, "resume")),
        }
    }

    pub fn ntread(&mut self, tid: ThreadId, addr: Addr) -> Value {
        let line = self.topology.line_of(addr);
        if let Some(writer) = self.writers.get(&line).copied() {
            if self.txs[&writer].tid != tid {
                self.kill(writer, AbortReason::Conflict);
            }
        }
        self.memory.get(addr)
    }

    pub fn ntwrite(&mut self, tid: ThreadId, addr: Addr, value: Value) {
        let line = self.topology.line_of(addr);
        let mut victims: BTreeSet<TxId> = self
            .readers
            .get(&line)
            .cloned()
            .unwrap_or_default();
        victims.extend(self.writers.get(&line));
        for v in victims {
            if self.txs[&v].tid != tid {
                self.kill(v, AbortReason::NonTxKill);
            }
        }
        self.memory.set(addr, value);
    }

    /// Publishes the write buffer and retires the transaction.
    pub fn tend(&mut self, txid: TxId) -> Result<(), HtmError> {
        self.expect_status(txid, TxStatus::Active, "commit")?;
        self.release(txid);
        let d = self.txs.remove(&txid).expect("checked above");
        self.by_thread.remove(&d.tid);
        for cells in d.write_buffer.into_values() {
            for (addr, value) in cells {
                self.memory.set(addr, value);
            }
        }
        Ok(())
    }

    pub fn tabort(&mut self, txid: TxId, reason: AbortReason) -> Result<(), HtmError> {
        let d = self.txs.get(&txid).ok_or(HtmError::UnknownTx(txid))?;
        if !d.is_live() {
            return Err(self.state_error(txid, d.status, "abort"));
        }
        self.kill(txid, reason);
        self.txs.get_mut(&txid).unwrap().status = TxStatus::Aborted;
        Ok(())
    }

    /// Removes an aborted transaction and reports why it died.
    pub fn take_abort(&mut self, txid: TxId) -> Result<AbortReason, HtmError> {
        let d = self.txs.get(&txid).ok_or(HtmError::UnknownTx(txid))?;
        if d.status != TxStatus::Aborted {
            return Err(self.state_error(txid, d.status, "retire"));
        }
        let d = self.txs.remove(&txid).unwrap();
        if self.by_thread.get(&d.tid) == Some(&txid) {
            self.by_thread.remove(&d.tid);
        }
        Ok(d.abort_reason.expect("aborted transactions carry a reason"))
    }

    /// Checks the structural invariants; used by tests after every operation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut usage = vec![0usize; self.core_usage.len()];
        let mut seen_writes: HashMap<CacheLineId, TxId> = HashMap::new();
        for d in self.txs.values() {
            if d.mode == TxMode::Rot && !d.tracked_reads.is_empty() {
                return Err(format!("{} is a ROT with tracked reads", d.txid));
            }
            if !d.is_live() && d.footprint() != 0 {
                return Err(format!("{} is {:?} but still tracks lines", d.txid, d.status));
            }
            usage[d.core] += d.footprint();
            for line in &d.tracked_writes {
                if let Some(other) = seen_writes.insert(*line, d.txid) {
                    return Err(format!("line {line} written by {other} and {}", d.txid));
                }
            }
        }
        if usage != self.core_usage {
            return Err(format!("core usage {:?} != recount {usage:?}", self.core_usage));
        }
        let cap = self.topology.tmcam_lines_per_core();
        if let Some(core) = usage.iter().position(|u| *u > cap) {
            return Err(format!("core {core} uses {} > {cap} lines", usage[core]));
        }
        Ok(())
    }

    fn expect_status(
        &self,
        txid: TxId,
        want: TxStatus,
        op: &'static str,
    ) -> Result<&TxDescriptor, HtmError> {
        let d = self.txs.get(&txid).ok_or(HtmError::UnknownTx(txid))?;
        match d.status {
            s if s == want => Ok(d),
            TxStatus::Aborted => Err(HtmError::Aborted {
                txid,
                reason: d.abort_reason.expect("aborted transactions carry a reason"),
            }),
            s => Err(self.state_error(txid, s, op)),
        }
    }

    fn state_error(&self, txid: TxId, status: TxStatus, op: &'static str) -> HtmError {
        HtmError::InvalidState { txid, status, op }
    }

    fn has_room(&self, txid: TxId) -> bool {
        let core = self.txs[&txid].core;
        self.core_usage[core] < self.topology.tmcam_lines_per_core()
    }

    fn track(&mut self, txid: TxId, line: CacheLineId, write: bool) {
        let d = self.txs.get_mut(&txid).unwrap();
        if !d.tracks(line) {
            self.core_usage[d.core] += 1;
        }
        if write {
            d.tracked_writes.insert(line);
            self.writers.insert(line, txid);
        } else {
            d.tracked_reads.insert(line);
            self.readers.entry(line).or_default().insert(txid);
        }
    }

    fn kill_requester(&mut self, txid: TxId, reason: AbortReason) -> HtmError {
        self.kill(txid, reason);
        HtmError::Aborted { txid, reason }
    }

    /// Invalidates a live transaction: its lines are released and its buffer
    /// discarded immediately. Suspended victims are doomed until resume.
    fn kill(&mut self, txid: TxId, reason: AbortReason) {
        let status = self.txs[&txid].status;
        let next = match status {
            TxStatus::Active => TxStatus::Aborted,
            TxStatus::Suspended => TxStatus::Doomed,
            _ => return,
        };
        self.release(txid);
        let d = self.txs.get_mut(&txid).unwrap();
        d.status = next;
        d.abort_reason = Some(reason);
        d.write_buffer.clear();
    }

    fn release(&mut self, txid: TxId) {
        let d = self.txs.get_mut(&txid).unwrap();
        self.core_usage[d.core] -= d.footprint();
        for line in std::mem::take(&mut d.tracked_writes) {
            if self.writers.get(&line) == Some(&txid) {
                self.writers.remove(&line);
            }
        }
        for line in std::mem::take(&mut d.tracked_reads) {
            if let Some(rs) = self.readers.get_mut(&line) {
                rs.remove(&txid);
                if rs.is_empty() {
                    self.readers.remove(&line);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;

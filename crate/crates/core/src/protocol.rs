//! Per-thread step machines for the three backends.
//!
//! Each call to [`Task::step`] performs one yield point. SI-HTM writers
//! go through
//!
//! ```text
//! Begin -> Body* -> Complete -> Snapshot -> SafetyWait(commit)
//! ```
//!
//! where `Begin` announces the thread in the state array and checks the
//! global lock, `Complete` suspends the ROT to publish `completed` and
//! resumes it, and `SafetyWait` spins until every thread that was active
//! at the snapshot has changed state, then commits and deactivates.
//! Read-only transactions run `Begin -> Body* -> FinishRo` with plain
//! loads. After `max_retries` aborts a writer takes the global lock, waits
//! for all other threads to go inactive, and runs its body directly
//! against memory.
//!
//! Regular-HTM transactions subscribe to the lock at begin, so taking the
//! lock kills them; that backend never drains.

use crate::history::{BarrierKind, EventKind};
use crate::htm::{AbortReason, Addr, HtmError, ThreadId, TxId, TxMode, TxStatus, Value};
use crate::sched::engine::{SimError, StepOutcome, World};
use crate::sched::{Backend, Op, Program, SimConfig, LOCK_ADDR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Begin,
    LockWait,
    Body,
    Complete,
    Snapshot,
    SafetyWait,
    HtmCommit,
    FinishRo,
    SglAcquire,
    SglDrain,
    SglRelease,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Rot,
    Ro,
    Htm,
    Sgl,
}

#[derive(Debug, Clone)]
struct Attempt {
    txid: TxId,
    mode: Mode,
    next_op: usize,
    observed: Vec<(Addr, Value)>,
    /// Threads still to be waited for, with their snapshot entries.
    pending: Vec<(ThreadId, u64)>,
}

#[derive(Debug, Clone)]
pub(crate) struct Task {
    tid: ThreadId,
    tx: usize,
    phase: Phase,
    retries_left: u32,
    attempt: Option<Attempt>,
    /// Next thread the lock holder checks for inactivity.
    drain_next: usize,
}

fn abort_of(e: HtmError) -> Result<(), SimError> {
    match e {
        HtmError::Aborted { .. } => Ok(()),
        e => Err(e.into()),
    }
}

impl Task {
    pub fn new(tid: ThreadId, cfg: &SimConfig, program: &Program) -> Self {
        let mut t = Task {
            tid,
            tx: 0,
            phase: Phase::Done,
            retries_left: 0,
            attempt: None,
            drain_next: 0,
        };
        if !program.threads[tid].is_empty() {
            t.start_tx(cfg, program);
        }
        t
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    fn start_tx(&mut self, cfg: &SimConfig, program: &Program) {
        let is_ro = program.threads[self.tid][self.tx].is_ro;
        self.retries_left = cfg.retry.max_retries;
        self.attempt = None;
        self.phase = match cfg.backend {
            Backend::SglOnly => Phase::SglAcquire,
            Backend::SiHtm if is_ro => Phase::Begin,
            _ if cfg.retry.max_retries == 0 => Phase::SglAcquire,
            _ => Phase::Begin,
        };
    }

    fn finish_tx(&mut self, w: &mut World, cfg: &SimConfig, program: &Program) {
        w.stats[self.tid].committed += 1;
        w.last_commit = w.clock;
        self.tx += 1;
        self.attempt = None;
        if self.tx == program.threads[self.tid].len() {
            self.phase = Phase::Done;
        } else {
            self.start_tx(cfg, program);
        }
    }

    fn lock_held(w: &World) -> bool {
        w.htm.memory().get(LOCK_ADDR) != 0
    }

    fn hw_aborted(&self, w: &World) -> bool {
        match &self.attempt {
            Some(a) if matches!(a.mode, Mode::Rot | Mode::Htm) => {
                w.htm.status(a.txid) == Some(TxStatus::Aborted)
            }
            _ => false,
        }
    }

    pub fn is_blocked(&self, w: &World, cfg: &SimConfig) -> bool {
        match self.phase {
            Phase::LockWait | Phase::SglAcquire => Self::lock_held(w),
            Phase::Begin => cfg.backend == Backend::PlainHtm && Self::lock_held(w),
            Phase::SglDrain => w
                .states
                .iter()
                .enumerate()
                .any(|(c, &s)| c != self.tid && s != 0),
            Phase::SafetyWait => {
                let a = self.attempt.as_ref().expect("waiting without an attempt");
                !self.hw_aborted(w) && a.pending.iter().any(|&(c, s)| w.states[c] == s)
            }
            _ => false,
        }
    }

    pub fn step(
        &mut self,
        w: &mut World,
        cfg: &SimConfig,
        program: &Program,
    ) -> Result<StepOutcome, SimError> {
        if self.hw_aborted(w) {
            self.unwind(w, cfg)?;
            return Ok(StepOutcome::Progressed);
        }
        let cost = cfg.cost;
        match self.phase {
            Phase::Begin if cfg.backend == Backend::PlainHtm => {
                if Self::lock_held(w) {
                    w.act(cost.protocol);
                    return Ok(StepOutcome::Blocked);
                }
                self.htm_begin(w, cfg, program)?;
            }
            Phase::Begin => self.si_begin(w, cfg, program)?,
            Phase::LockWait => {
                if Self::lock_held(w) {
                    w.act(cost.protocol);
                    return Ok(StepOutcome::Blocked);
                }
                self.si_begin(w, cfg, program)?;
            }
            Phase::Body => self.body_op(w, cfg, program)?,
            Phase::Complete => {
                let txid = self.txid();
                w.htm.tsuspend(txid)?;
                w.emit(self.tid, cost.protocol, EventKind::Suspend { txid });
                w.set_state(self.tid, 1, cost.protocol);
                w.emit(self.tid, cost.protocol, EventKind::Barrier { kind: BarrierKind::Sync });
                match w.htm.tresume(txid) {
                    Ok(()) => {
                        w.emit(self.tid, cost.protocol, EventKind::Resume { txid });
                        self.phase = Phase::Snapshot;
                    }
                    Err(e) => {
                        abort_of(e)?;
                        self.unwind(w, cfg)?;
                    }
                }
            }
            Phase::Snapshot => {
                let txid = self.txid();
                let states: Box<[u64]> = w.states.clone().into();
                let n = states.len() as u64;
                let pending = if cfg.safety_wait {
                    states
                        .iter()
                        .enumerate()
                        .filter(|&(c, &s)| c != self.tid && s > 1)
                        .map(|(c, &s)| (c, s))
                        .collect()
                } else {
                    Vec::new()
                };
                w.emit(self.tid, cost.protocol * n, EventKind::SnapshotTaken { txid, states });
                self.attempt.as_mut().unwrap().pending = pending;
                self.phase = Phase::SafetyWait;
            }
            Phase::SafetyWait => {
                // One thread at a time, each inspection a poll.
                let a = self.attempt.as_mut().unwrap();
                while let Some(&(c, s)) = a.pending.first() {
                    w.act(cost.protocol);
                    if w.states[c] == s {
                        return Ok(StepOutcome::Blocked);
                    }
                    a.pending.remove(0);
                }
                let txid = a.txid;
                match w.htm.tend(txid) {
                    Ok(()) => {
                        w.emit(self.tid, cost.end, EventKind::Commit { txid });
                        w.set_state(self.tid, 0, cost.protocol);
                        self.finish_tx(w, cfg, program);
                    }
                    Err(e) => {
                        abort_of(e)?;
                        self.unwind(w, cfg)?;
                    }
                }
            }
            Phase::HtmCommit => {
                let txid = self.txid();
                match w.htm.tend(txid) {
                    Ok(()) => {
                        w.emit(self.tid, cost.end, EventKind::Commit { txid });
                        self.finish_tx(w, cfg, program);
                    }
                    Err(e) => {
                        abort_of(e)?;
                        self.unwind(w, cfg)?;
                    }
                }
            }
            Phase::FinishRo => {
                let txid = self.txid();
                w.emit(self.tid, cost.protocol, EventKind::Barrier { kind: BarrierKind::LwSync });
                w.emit(self.tid, cost.protocol, EventKind::Commit { txid });
                w.set_state(self.tid, 0, cost.protocol);
                self.finish_tx(w, cfg, program);
            }
            Phase::SglAcquire => {
                if Self::lock_held(w) {
                    w.act(cost.protocol);
                    return Ok(StepOutcome::Blocked);
                }
                w.htm.ntwrite(self.tid, LOCK_ADDR, self.tid as u64 + 1);
                w.emit(self.tid, cost.protocol, EventKind::LockAcquire);
                if cfg.backend == Backend::SiHtm {
                    self.drain_next = 0;
                    self.phase = Phase::SglDrain;
                } else {
                    self.sgl_start(w, cfg, program);
                }
            }
            Phase::SglDrain => {
                while self.drain_next < w.states.len() {
                    let c = self.drain_next;
                    if c != self.tid {
                        w.act(cost.protocol);
                        if w.states[c] != 0 {
                            return Ok(StepOutcome::Blocked);
                        }
                    }
                    self.drain_next += 1;
                }
                self.sgl_start(w, cfg, program);
            }
            Phase::SglRelease => {
                let txid = self.txid();
                w.emit(self.tid, cost.protocol, EventKind::Commit { txid });
                w.htm.ntwrite(self.tid, LOCK_ADDR, 0);
                w.emit(self.tid, cost.protocol, EventKind::LockRelease);
                w.stats[self.tid].sgl_commits += 1;
                self.finish_tx(w, cfg, program);
            }
            Phase::Done => return Err(SimError::Finished(self.tid)),
        }
        Ok(StepOutcome::Progressed)
    }

    fn txid(&self) -> TxId {
        self.attempt.as_ref().expect("no current attempt").txid
    }

    fn open_attempt(&mut self, txid: TxId, mode: Mode, w: &mut World, program: &Program) {
        w.stats[self.tid].attempts += 1;
        self.attempt = Some(Attempt {
            txid,
            mode,
            next_op: 0,
            observed: Vec::new(),
            pending: Vec::new(),
        });
        self.after_op(program);
    }

    /// Moves to the end phase once the body is exhausted.
    fn after_op(&mut self, program: &Program) {
        let a = self.attempt.as_ref().unwrap();
        if a.next_op < program.threads[self.tid][self.tx].ops.len() {
            self.phase = Phase::Body;
            return;
        }
        self.phase = match a.mode {
            Mode::Rot => Phase::Complete,
            Mode::Ro => Phase::FinishRo,
            Mode::Htm => Phase::HtmCommit,
            Mode::Sgl => Phase::SglRelease,
        };
    }

    /// Announce in the state array, then check the lock.
    fn si_begin(&mut self, w: &mut World, cfg: &SimConfig, program: &Program) -> Result<(), SimError> {
        let cost = cfg.cost;
        let now = w.clock;
        w.set_state(self.tid, now, cost.protocol);
        w.emit(self.tid, cost.protocol, EventKind::Barrier { kind: BarrierKind::Sync });
        let lock = w.htm.ntread(self.tid, LOCK_ADDR);
        w.act(cost.protocol);
        if lock != 0 {
            w.set_state(self.tid, 0, cost.protocol);
            self.phase = Phase::LockWait;
            return Ok(());
        }
        if program.threads[self.tid][self.tx].is_ro {
            let txid = w.htm.fresh_txid();
            w.emit(self.tid, cost.protocol, EventKind::TxStart { txid, mode: TxMode::NonTx, start: now });
            self.open_attempt(txid, Mode::Ro, w, program);
        } else {
            let txid = w.htm.tbegin(self.tid, TxMode::Rot)?;
            w.emit(self.tid, cost.begin, EventKind::TxStart { txid, mode: TxMode::Rot, start: now });
            self.open_attempt(txid, Mode::Rot, w, program);
        }
        Ok(())
    }

    /// Regular HTM begin with early subscription to the lock word.
    fn htm_begin(&mut self, w: &mut World, cfg: &SimConfig, program: &Program) -> Result<(), SimError> {
        let txid = w.htm.tbegin(self.tid, TxMode::Htm)?;
        let start = w.clock;
        w.emit(self.tid, cfg.cost.begin, EventKind::TxStart { txid, mode: TxMode::Htm, start });
        self.open_attempt(txid, Mode::Htm, w, program);
        w.act(cfg.cost.access);
        if let Err(e) = w.htm.tread(txid, LOCK_ADDR) {
            abort_of(e)?;
            self.unwind(w, cfg)?;
        }
        Ok(())
    }

    fn sgl_start(&mut self, w: &mut World, cfg: &SimConfig, program: &Program) {
        let txid = w.htm.fresh_txid();
        let start = w.clock;
        w.emit(self.tid, cfg.cost.protocol, EventKind::TxStart { txid, mode: TxMode::Sgl, start });
        self.open_attempt(txid, Mode::Sgl, w, program);
    }

    fn body_op(&mut self, w: &mut World, cfg: &SimConfig, program: &Program) -> Result<(), SimError> {
        let tid = self.tid;
        let cost = cfg.cost.access;
        let a = self.attempt.as_mut().unwrap();
        let op = program.threads[tid][self.tx].ops[a.next_op];
        let txid = a.txid;
        let hw = matches!(a.mode, Mode::Rot | Mode::Htm);
        let res: Result<(), HtmError> = (|| {
            match op {
                Op::Read(addr) => {
                    let value = if hw {
                        w.htm.tread(txid, addr)?
                    } else {
                        w.htm.ntread(tid, addr)
                    };
                    a.observed.retain(|&(x, _)| x != addr);
                    a.observed.push((addr, value));
                    let line = w.htm.topology().line_of(addr);
                    w.emit(tid, cost, EventKind::Read { txid, line, addr, value });
                }
                Op::Write(..) | Op::WriteBack(_) => {
                    let (addr, value) = match op {
                        Op::Write(addr, value) => (addr, value),
                        Op::WriteBack(addr) => {
                            let v = a.observed.iter().find(|&&(x, _)| x == addr).map(|&(_, v)| v);
                            (addr, v.expect("validated: write-back follows a read"))
                        }
                        _ => unreachable!(),
                    };
                    if hw {
                        w.htm.twrite(txid, addr, value)?;
                    } else {
                        w.htm.ntwrite(tid, addr, value);
                    }
                    let line = w.htm.topology().line_of(addr);
                    w.emit(tid, cost, EventKind::Write { txid, line, addr, value });
                }
                Op::Explicit if hw => {
                    w.act(cost);
                    w.htm.tabort(txid, AbortReason::Explicit)?;
                    return Err(HtmError::Aborted { txid, reason: AbortReason::Explicit });
                }
                Op::Explicit => {
                    w.act(cost);
                }
            }
            Ok(())
        })();
        match res {
            Ok(()) => {
                a.next_op += 1;
                self.after_op(program);
                Ok(())
            }
            Err(e) => {
                abort_of(e)?;
                self.unwind(w, cfg)
            }
        }
    }

    /// Retires an aborted hardware attempt and picks the retry path.
    fn unwind(&mut self, w: &mut World, cfg: &SimConfig) -> Result<(), SimError> {
        let txid = self.txid();
        let reason = w.htm.take_abort(txid)?;
        w.emit(self.tid, cfg.cost.protocol, EventKind::Abort { txid, reason });
        w.stats[self.tid].record_abort(reason);
        if cfg.backend == Backend::SiHtm {
            w.set_state(self.tid, 0, cfg.cost.protocol);
        }
        self.attempt = None;
        self.retries_left = self.retries_left.saturating_sub(1);
        self.phase = if self.retries_left > 0 {
            Phase::Begin
        } else {
            Phase::SglAcquire
        };
        Ok(())
    }
}

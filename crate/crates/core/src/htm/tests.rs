use super::*;
use proptest::prelude::*;

const X: Addr = 0x1000;
const Y: Addr = 0x2000;

fn machine() -> HtmMachine {
    HtmMachine::new(Topology::default(), WriteAfterReadPolicy::default())
}

fn line(i: u64) -> Addr {
    0x10_0000 + i * 128
}

fn aborted(m: &HtmMachine, tx: TxId) -> Option<AbortReason> {
    let d = m.descriptor(tx)?;
    (d.status == TxStatus::Aborted).then(|| d.abort_reason.unwrap())
}

#[test]
fn fresh_rot_descriptor() {
    let mut m = machine();
    let tx = m.tbegin(0, TxMode::Rot).unwrap();
    let d = m.descriptor(tx).unwrap();
    assert_eq!(d.mode, TxMode::Rot);
    assert_eq!(d.status, TxStatus::Active);
    assert!(d.tracked_reads.is_empty() && d.tracked_writes.is_empty());
}

#[test]
fn nested_begin_is_rejected() {
    let mut m = machine();
    m.tbegin(0, TxMode::Htm).unwrap();
    assert_eq!(m.tbegin(0, TxMode::Htm), Err(HtmError::NestedBegin(0)));
    assert!(matches!(
        m.tbegin(1, TxMode::NonTx),
        Err(HtmError::UnsupportedMode(TxMode::NonTx))
    ));
}

#[test]
fn smt_siblings_share_one_budget() {
    let topo = Topology::new(1, 2).unwrap();
    let mut m = HtmMachine::new(topo, WriteAfterReadPolicy::default());
    let a = m.tbegin(0, TxMode::Rot).unwrap();
    let b = m.tbegin(1, TxMode::Rot).unwrap();
    for i in 0..32 {
        m.twrite(a, line(i), 1).unwrap();
        m.twrite(b, line(100 + i), 1).unwrap();
    }
    assert_eq!(m.core_usage(0), 64);
    let err = m.twrite(a, line(99), 1).unwrap_err();
    assert_eq!(err.abort_reason(), Some(AbortReason::Capacity));
    assert_eq!(m.status(b), Some(TxStatus::Active));
    m.check_invariants().unwrap();
}

#[test]
fn read_after_write_kills_the_writer_rot() {
    let mut m = machine();
    let r1 = m.tbegin(1, TxMode::Rot).unwrap();
    let r2 = m.tbegin(2, TxMode::Rot).unwrap();
    m.twrite(r1, X, 7).unwrap();
    assert_eq!(m.tread(r2, X), Ok(0));
    assert_eq!(aborted(&m, r1), Some(AbortReason::Conflict));
    m.check_invariants().unwrap();
}

#[test]
fn write_after_read_is_tolerated_by_rots() {
    let mut m = machine();
    let r0 = m.tbegin(0, TxMode::Rot).unwrap();
    let r1 = m.tbegin(1, TxMode::Rot).unwrap();
    m.tread(r0, X).unwrap();
    m.twrite(r1, X, 3).unwrap();
    assert_eq!(m.status(r0), Some(TxStatus::Active));
    assert_eq!(m.status(r1), Some(TxStatus::Active));
}

#[test]
fn reads_observe_own_writes() {
    let mut m = machine();
    let tx = m.tbegin(0, TxMode::Htm).unwrap();
    m.twrite(tx, X, 5).unwrap();
    assert_eq!(m.tread(tx, X), Ok(5));
    assert_eq!(m.memory().get(X), 0);
}

#[test]
fn last_writer_is_killed() {
    let mut m = machine();
    let a = m.tbegin(0, TxMode::Rot).unwrap();
    let b = m.tbegin(1, TxMode::Rot).unwrap();
    m.twrite(a, X, 1).unwrap();
    let err = m.twrite(b, X + 8, 2).unwrap_err();
    assert_eq!(err, HtmError::Aborted { txid: b, reason: AbortReason::Conflict });
    assert_eq!(m.status(a), Some(TxStatus::Active));
}

#[test]
fn rot_capacity_boundary_is_64_lines() {
    let mut m = machine();
    let tx = m.tbegin(0, TxMode::Rot).unwrap();
    for i in 0..64 {
        m.twrite(tx, line(i), i).unwrap();
    }
    // A second word on an already tracked line costs nothing.
    m.twrite(tx, line(3) + 8, 9).unwrap();
    let err = m.twrite(tx, line(64), 1).unwrap_err();
    assert_eq!(err.abort_reason(), Some(AbortReason::Capacity));
    assert_eq!(m.core_usage(0), 0);
}

#[test]
fn rot_reads_never_consume_capacity() {
    let mut m = machine();
    let tx = m.tbegin(0, TxMode::Rot).unwrap();
    for i in 0..1000 {
        m.tread(tx, line(i)).unwrap();
    }
    assert_eq!(m.core_usage(0), 0);
    m.tend(tx).unwrap();
}

#[test]
fn htm_reads_count_against_capacity() {
    let mut m = machine();
    let tx = m.tbegin(0, TxMode::Htm).unwrap();
    for i in 0..64 {
        m.tread(tx, line(i)).unwrap();
    }
    let err = m.tread(tx, line(64)).unwrap_err();
    assert_eq!(err.abort_reason(), Some(AbortReason::Capacity));
}

#[test]
fn write_after_read_policy_switch() {
    let mut m = machine();
    let reader = m.tbegin(0, TxMode::Htm).unwrap();
    let writer = m.tbegin(1, TxMode::Htm).unwrap();
    m.tread(reader, X).unwrap();
    assert!(m.twrite(writer, X, 1).is_err());
    assert_eq!(m.status(reader), Some(TxStatus::Active));

    let mut m = HtmMachine::new(Topology::default(), WriteAfterReadPolicy::KillReaders);
    let reader = m.tbegin(0, TxMode::Htm).unwrap();
    let writer = m.tbegin(1, TxMode::Htm).unwrap();
    m.tread(reader, X).unwrap();
    m.twrite(writer, X, 1).unwrap();
    assert_eq!(aborted(&m, reader), Some(AbortReason::Conflict));
}

#[test]
fn conflict_during_suspension_takes_effect_at_resume() {
    let mut m = machine();
    let tx = m.tbegin(0, TxMode::Rot).unwrap();
    m.twrite(tx, X, 4).unwrap();
    m.tsuspend(tx).unwrap();
    let other = m.tbegin(1, TxMode::Rot).unwrap();
    assert_eq!(m.tread(other, X), Ok(0));
    assert_eq!(m.status(tx), Some(TxStatus::Doomed));
    let err = m.tresume(tx).unwrap_err();
    assert_eq!(err.abort_reason(), Some(AbortReason::Conflict));
    assert_eq!(m.take_abort(tx), Ok(AbortReason::Conflict));
}

#[test]
fn undisturbed_suspension_resumes_active() {
    let mut m = machine();
    let tx = m.tbegin(0, TxMode::Rot).unwrap();
    m.twrite(tx, X, 4).unwrap();
    m.tsuspend(tx).unwrap();
    assert!(m.tread(tx, Y).is_err(), "suspended transactions cannot read transactionally");
    m.tresume(tx).unwrap();
    assert_eq!(m.status(tx), Some(TxStatus::Active));
}

#[test]
fn suspended_writes_bypass_the_buffer() {
    let mut m = machine();
    let tx = m.tbegin(0, TxMode::Rot).unwrap();
    m.tsuspend(tx).unwrap();
    m.ntwrite(0, Y, 42);
    m.tresume(tx).unwrap();
    assert!(m.descriptor(tx).unwrap().write_buffer.is_empty());
    assert_eq!(m.memory().get(Y), 42);
    assert_eq!(m.status(tx), Some(TxStatus::Active));
}

#[test]
fn own_nontransactional_read_does_not_self_kill() {
    let mut m = machine();
    let tx = m.tbegin(0, TxMode::Rot).unwrap();
    m.twrite(tx, X, 4).unwrap();
    m.tsuspend(tx).unwrap();
    assert_eq!(m.ntread(0, X), 0);
    m.tresume(tx).unwrap();
}

#[test]
fn nontransactional_read_kills_writer() {
    let mut m = machine();
    let w = m.tbegin(1, TxMode::Rot).unwrap();
    m.twrite(w, X, 9).unwrap();
    assert_eq!(m.ntread(0, X), 0);
    assert_eq!(aborted(&m, w), Some(AbortReason::Conflict));
    assert_eq!(m.ntread(0, 0xdead_0000), 0);
}

#[test]
fn nontransactional_write_kills_subscribers() {
    let mut m = machine();
    let subs: Vec<_> = (1..4)
        .map(|tid| {
            let tx = m.tbegin(tid, TxMode::Htm).unwrap();
            m.tread(tx, X).unwrap();
            tx
        })
        .collect();
    m.ntwrite(0, X, 1);
    for tx in subs {
        assert_eq!(aborted(&m, tx), Some(AbortReason::NonTxKill));
    }
    assert_eq!(m.memory().get(X), 1);
}

#[test]
fn commit_publishes_buffer() {
    let mut m = machine();
    let empty = m.tbegin(0, TxMode::Htm).unwrap();
    m.tend(empty).unwrap();
    assert!(m.memory().snapshot().is_empty());

    let tx = m.tbegin(0, TxMode::Htm).unwrap();
    m.twrite(tx, X, 7).unwrap();
    m.tend(tx).unwrap();
    assert_eq!(m.ntread(1, X), 7);

    for v in [1, 2] {
        let tx = m.tbegin(0, TxMode::Rot).unwrap();
        m.twrite(tx, Y, v).unwrap();
        m.tend(tx).unwrap();
    }
    assert_eq!(m.memory().get(Y), 2);
}

#[test]
fn commit_of_killed_transaction_fails() {
    let mut m = machine();
    let w = m.tbegin(0, TxMode::Rot).unwrap();
    m.twrite(w, X, 1).unwrap();
    m.ntread(1, X);
    assert_eq!(
        m.tend(w),
        Err(HtmError::Aborted { txid: w, reason: AbortReason::Conflict })
    );
    assert_eq!(m.memory().get(X), 0);
}

#[test]
fn explicit_abort_of_suspended_transaction() {
    let mut m = machine();
    let tx = m.tbegin(0, TxMode::Rot).unwrap();
    m.twrite(tx, X, 1).unwrap();
    m.tsuspend(tx).unwrap();
    m.tabort(tx, AbortReason::Explicit).unwrap();
    assert_eq!(m.take_abort(tx), Ok(AbortReason::Explicit));
    assert_eq!(m.live_tx_of(0), None);
    m.tbegin(0, TxMode::Rot).unwrap();
}

#[derive(Debug, Clone)]
enum Action {
    Begin(usize, bool),
    Read(usize, u8),
    Write(usize, u8),
    Suspend(usize),
    Resume(usize),
    End(usize),
    NtRead(usize, u8),
    NtWrite(usize, u8),
}

fn action() -> impl Strategy<Value = Action> {
    let tid = 0usize..4;
    let slot = 0u8..12;
    prop_oneof![
        (tid.clone(), any::<bool>()).prop_map(|(t, rot)| Action::Begin(t, rot)),
        (tid.clone(), slot.clone()).prop_map(|(t, s)| Action::Read(t, s)),
        (tid.clone(), slot.clone()).prop_map(|(t, s)| Action::Write(t, s)),
        tid.clone().prop_map(Action::Suspend),
        tid.clone().prop_map(Action::Resume),
        tid.clone().prop_map(Action::End),
        (tid.clone(), slot.clone()).prop_map(|(t, s)| Action::NtRead(t, s)),
        (tid, slot).prop_map(|(t, s)| Action::NtWrite(t, s)),
    ]
}

/// Drives random operation sequences on a tiny TMCAM and checks the model
/// against a reference of committed values built only from successful
/// commits and non-transactional writes.
fn run_random(actions: Vec<Action>) -> Result<(), TestCaseError> {
    let topo = Topology::new(2, 2).unwrap().with_tmcam_lines(4).unwrap();
    let mut m = HtmMachine::new(topo, WriteAfterReadPolicy::default());
    let mut reference: HashMap<Addr, Value> = HashMap::new();
    let mut pending: HashMap<ThreadId, BTreeMap<Addr, Value>> = HashMap::new();
    let mut token = 100;
    // Two words per line so same-line, different-word accesses occur.
    let addr = |s: u8| 0x4000 + (s as u64 / 2) * 128 + (s as u64 % 2) * 8;
    for a in actions {
        token += 1;
        match a {
            Action::Begin(t, rot) => {
                if let Some(old) = m.by_thread.get(&t).copied() {
                    if m.status(old) == Some(TxStatus::Aborted) {
                        m.take_abort(old).unwrap();
                    } else {
                        continue;
                    }
                }
                m.tbegin(t, if rot { TxMode::Rot } else { TxMode::Htm }).unwrap();
                pending.insert(t, BTreeMap::new());
            }
            Action::Read(t, s) => {
                if let Some(tx) = m.live_tx_of(t) {
                    if let Ok(v) = m.tread(tx, addr(s)) {
                        let own = pending.get(&t).and_then(|p| p.get(&addr(s)).copied());
                        let committed = reference.get(&addr(s)).copied().unwrap_or(0);
                        prop_assert_eq!(v, own.unwrap_or(committed));
                    }
                }
            }
            Action::Write(t, s) => {
                if let Some(tx) = m.live_tx_of(t) {
                    if m.twrite(tx, addr(s), token).is_ok() {
                        pending.get_mut(&t).unwrap().insert(addr(s), token);
                    }
                }
            }
            Action::Suspend(t) => {
                if let Some(tx) = m.live_tx_of(t) {
                    let _ = m.tsuspend(tx);
                }
            }
            Action::Resume(t) => {
                if let Some(tx) = m.live_tx_of(t) {
                    let _ = m.tresume(tx);
                }
            }
            Action::End(t) => {
                if let Some(tx) = m.live_tx_of(t) {
                    if m.tend(tx).is_ok() {
                        reference.extend(pending.remove(&t).unwrap());
                    }
                }
            }
            Action::NtRead(t, s) => {
                let v = m.ntread(t, addr(s));
                prop_assert_eq!(v, reference.get(&addr(s)).copied().unwrap_or(0));
            }
            Action::NtWrite(t, s) => {
                if m.live_tx_of(t).is_none() {
                    m.ntwrite(t, addr(s), token);
                    reference.insert(addr(s), token);
                }
            }
        }
        m.check_invariants().map_err(TestCaseError::fail)?;
        for (a, v) in m.memory().snapshot() {
            prop_assert_eq!(reference.get(&a).copied().unwrap_or(0), v);
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn random_operation_sequences_keep_invariants(actions in prop::collection::vec(action(), 1..120)) {
        run_random(actions)?;
    }
}

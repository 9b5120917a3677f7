use proptest::prelude::*;
use sihtm_core::checker::{check_serializable, check_si, timestamps, CheckError, Rule, Verdict};
use sihtm_core::history::History;
use sihtm_core::htm::TxId;
use sihtm_core::sched::{run, Backend, Program, SchedulePolicy, SimConfig};
use sihtm_core::verify::{fig1_history, oracle_cases};

#[test]
fn oracle_cases_get_their_verdicts() {
    for c in oracle_cases() {
        assert_eq!(check_si(&c.history).unwrap().rule(), c.si, "{}", c.name);
        assert_eq!(check_serializable(&c.history).unwrap().is_pass(), c.serializable, "{}", c.name);
    }
}

#[test]
fn fig1_timestamps() {
    let ts = timestamps(&fig1_history()).unwrap();
    // t3 aborted, so only t0..t2 get commit points.
    assert_eq!(ts.len(), 3);
    assert_eq!((ts[&TxId(1)].start, ts[&TxId(1)].commit), (2, 19));
    assert_eq!((ts[&TxId(2)].start, ts[&TxId(2)].commit), (3, 17));
    assert_eq!((ts[&TxId(3)].start, ts[&TxId(3)].commit), (7, 16));
}

#[test]
fn witness_reproduces_its_rule() {
    for c in oracle_cases() {
        if let Verdict::Violation(v) = check_si(&c.history).unwrap() {
            assert_eq!(check_si(&v.witness).unwrap().rule(), Some(v.rule), "{}", c.name);
            assert!(v.witness.len() <= c.history.len());
        }
    }
}

#[test]
fn witness_is_minimal() {
    let c = oracle_cases().into_iter().find(|c| c.name == "stale-read").unwrap();
    let Verdict::Violation(v) = check_si(&c.history).unwrap() else { panic!() };
    let events = v.witness.events().to_vec();
    for skip in 0..events.len() {
        let smaller: History = events
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != skip)
            .map(|(_, e)| e.clone())
            .collect();
        let rule = check_si(&smaller).ok().and_then(|v| v.rule());
        assert_ne!(rule, Some(Rule::R1), "event {skip} was removable");
    }
}

#[test]
fn malformed_histories_are_rejected() {
    let bad = [
        // cycles must increase
        "3\t0\t1\tbegin\tmode=rot start=3\n3\t0\t1\tcommit\t",
        // access before begin
        "2\t0\t1\tread\tline=0 addr=0 value=0",
        // double begin
        "2\t0\t1\tbegin\tmode=rot start=2\n3\t0\t1\tbegin\tmode=rot start=3",
        // transaction moves threads
        "2\t0\t1\tbegin\tmode=rot start=2\n3\t1\t1\tcommit\t",
        // events after commit
        "2\t0\t1\tbegin\tmode=rot start=2\n3\t0\t1\tcommit\t\n4\t0\t1\tread\tline=0 addr=0 value=0",
        // access after the snapshot
        "2\t0\t1\tbegin\tmode=rot start=2\n3\t0\t1\tsnapshot\tstate=1\n4\t0\t1\twrite\tline=0 addr=0 value=1",
    ];
    for text in bad {
        let h = History::parse(text).unwrap();
        assert!(matches!(check_si(&h), Err(CheckError::Malformed { .. })), "{text}");
    }
}

#[test]
fn oracle_refuses_large_histories() {
    let mut text = String::new();
    for i in 0..9u64 {
        let c = 2 + 2 * i;
        text.push_str(&format!("{c}\t0\t{}\tbegin\tmode=nontx start={c}\n{}\t0\t{}\tcommit\t\n", i + 1, c + 1, i + 1));
    }
    let h = History::parse(&text).unwrap();
    assert_eq!(check_serializable(&h), Err(CheckError::TooLarge(9)));
    assert_eq!(check_si(&h), Ok(Verdict::Pass));
}

fn arb_tx(tag: u64) -> impl Strategy<Value = String> {
    let op = (0..3u64, any::<bool>());
    (any::<bool>(), prop::collection::vec(op, 1..4)).prop_map(move |(ro, ops)| {
        let mut s = String::from(if ro { "ro" } else { "rw" });
        for (i, (a, w)) in ops.into_iter().enumerate() {
            let addr = a * 128;
            if w && !ro {
                s.push_str(&format!(" w{addr}={}", tag * 10 + i as u64 + 1));
            } else {
                s.push_str(&format!(" r{addr}"));
            }
        }
        s
    })
}

fn arb_program() -> impl Strategy<Value = Program> {
    let thread = |t: u64| prop::collection::vec(arb_tx(t), 1..3);
    (thread(1), thread(2), prop::option::of(thread(3))).prop_map(|(a, b, c)| {
        let mut lines: Vec<String> = vec![a.join(" | "), b.join(" | ")];
        if let Some(c) = c {
            lines.push(c.join(" | "));
        }
        // Disambiguate values across transactions of one thread.
        let mut n = 0;
        let text: String = lines
            .join("\n")
            .split(' ')
            .map(|tok| match tok.split_once('=') {
                Some((w, _)) => {
                    n += 1;
                    format!("{w}={n}")
                }
                None => tok.to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ");
        text.parse().unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_si_htm_runs_satisfy_si(prog in arb_program(), seed in any::<u64>()) {
        let cfg = SimConfig::new(Backend::SiHtm).with_retries(2);
        let res = run(cfg, prog, SchedulePolicy::SeededRandom(seed)).unwrap();
        let v = check_si(&res.history).unwrap();
        prop_assert!(v.is_pass(), "{:?}", v.rule());
    }

    #[test]
    fn random_htm_runs_are_serializable(prog in arb_program(), seed in any::<u64>()) {
        let cfg = SimConfig::new(Backend::PlainHtm).with_retries(2);
        let res = run(cfg, prog, SchedulePolicy::SeededRandom(seed)).unwrap();
        prop_assert_eq!(check_serializable(&res.history).unwrap(), Verdict::Pass);
    }

    #[test]
    fn runs_are_deterministic(prog in arb_program(), seed in any::<u64>()) {
        let cfg = SimConfig::new(Backend::SiHtm);
        let a = run(cfg.clone(), prog.clone(), SchedulePolicy::SeededRandom(seed)).unwrap();
        let b = run(cfg, prog, SchedulePolicy::SeededRandom(seed)).unwrap();
        prop_assert_eq!(a.history.to_text(), b.history.to_text());
        prop_assert_eq!(a.total_cycles, b.total_cycles);
    }
}

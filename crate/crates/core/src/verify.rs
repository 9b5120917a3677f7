//! Verification suites: replayed figure scenarios, exhaustive
//! exploration of a corpus of small programs, and a cross-check of the
//! SI checker against the serializability oracle.

use std::fmt;

use crate::checker::{check_serializable, check_si, promote_reads, Rule, Verdict};
use crate::history::{EventKind, History};
use crate::htm::{AbortReason, HtmMachine, Topology, TxMode, TxStatus, WriteAfterReadPolicy};
use crate::sched::{
    explore, explore_all, Backend, ExploreOptions, Program, SimConfig, Simulator, StepOutcome,
};

pub const X: u64 = 0;
pub const Y: u64 = 128;
pub const Z: u64 = 256;

/// Hardware attempts before the lock in exhaustive runs; small enough to
/// keep retry chains short, large enough to exercise retries.
pub const EXPLORE_RETRIES: u32 = 2;

#[derive(Debug, Clone)]
pub struct CorpusProgram {
    pub name: &'static str,
    pub program: Program,
}

fn p(src: &str) -> Program {
    src.parse().expect("corpus programs are valid")
}

pub fn fig3_program() -> Program {
    p(&format!("rw r{X} w{Y}=11 r{X}\nrw w{X}=21 r{X}"))
}

pub fn write_skew_program() -> Program {
    p(&format!("rw r{Y} w{X}=1\nrw r{X} w{Y}=2"))
}

pub fn same_line_writers_program() -> Program {
    p(&format!("rw w{X}=1\nrw w{X}=2"))
}

/// The small programs every backend is explored on.
pub fn corpus() -> Vec<CorpusProgram> {
    let c = |name, program| CorpusProgram { name, program };
    vec![
        c("fig3-dirty-read", fig3_program()),
        c("fig4a-reader-hits-write-set", p(&format!("ro r{Y} r{X}\nrw w{X}=5"))),
        c("fig4b-reader-elsewhere", p(&format!("ro r{Y}\nrw w{X}=5"))),
        c("write-skew", write_skew_program()),
        c("write-skew-promoted", promote_reads(&write_skew_program(), &[X, Y]).unwrap()),
        c("same-line-writers", same_line_writers_program()),
        c("lost-update", p(&format!("rw r{X} w{X}=1\nrw r{X} w{X}=2"))),
        c("false-sharing", p(&format!("rw w{X}=1 r8\nrw w8=2 r{X}"))),
        c("sgl-fallback", p(&format!("rw w{X}=1 x\nrw r{X} w{Y}=2"))),
        c("sgl-vs-reader", p(&format!("rw w{X}=1 x\nro r{X} r{X}"))),
        c("read-own-writes", p(&format!("rw w{X}=1 r{X} w{X}=2 r{X}\nrw r{X} w{X}=3"))),
        c("three-threads", p(&format!("rw w{X}=1\nro r{X}\nrw w{Y}=2"))),
        c("two-tx-per-thread", p(&format!("rw w{X}=1 | rw w{Y}=2\nro r{Y} r{X}"))),
    ]
}

pub fn explore_config(backend: Backend) -> SimConfig {
    SimConfig::new(backend).with_retries(EXPLORE_RETRIES)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub suite: Suite,
    pub results: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.results.push(CheckResult { name: name.into(), passed, detail: detail.into() });
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            let tag = if r.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {}/{}: {}", self.suite, r.name, r.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Figures,
    Exhaustive,
    Oracle,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "figures" => Some(Suite::Figures),
            "exhaustive" => Some(Suite::Exhaustive),
            "oracle" => Some(Suite::Oracle),
            _ => None,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Figures => "figures",
            Suite::Exhaustive => "exhaustive",
            Suite::Oracle => "oracle",
        })
    }
}

pub fn verify(suite: Suite) -> Report {
    match suite {
        Suite::Figures => figures(),
        Suite::Exhaustive => exhaustive(),
        Suite::Oracle => oracle(),
    }
}

/// Fig. 1 as a history: t0 writes X and Y (after reading Z), t1 reads the
/// old X and writes Z, t2 reads the old X and Y, t3 collides with t0 on X.
pub fn fig1_history() -> History {
    History::parse(
        "2\t0\t1\tbegin\tmode=rot start=2
3\t1\t2\tbegin\tmode=rot start=3
4\t0\t1\tread\tline=2 addr=256 value=0
5\t0\t1\twrite\tline=0 addr=0 value=1
6\t1\t2\tread\tline=0 addr=0 value=0
7\t2\t3\tbegin\tmode=nontx start=7
8\t2\t3\tread\tline=0 addr=0 value=0
9\t0\t1\tread\tline=0 addr=0 value=1
10\t3\t4\tbegin\tmode=rot start=10
11\t3\t4\twrite\tline=0 addr=0 value=4
12\t3\t4\tabort\treason=conflict
13\t1\t2\twrite\tline=2 addr=256 value=3
14\t0\t1\twrite\tline=1 addr=128 value=2
15\t2\t3\tread\tline=1 addr=128 value=0
16\t2\t3\tcommit\t
17\t1\t2\tsnapshot\tstate=1,1,0,0
18\t1\t2\tcommit\t
19\t0\t1\tsnapshot\tstate=1,0,0,0
20\t0\t1\tcommit\t
",
    )
    .expect("fig1 history parses")
}

fn figures() -> Report {
    let mut r = Report { suite: Suite::Figures, results: Vec::new() };

    let h = fig1_history();
    let si = check_si(&h);
    let ser = check_serializable(&h);
    r.push(
        "fig1-si-allows",
        si == Ok(Verdict::Pass) && ser.as_ref().map(Verdict::rule) == Ok(Some(Rule::NotSerializable)),
        format!("check_si={:?} check_serializable={:?}", si.map(|v| v.rule()), ser.map(|v| v.rule())),
    );

    // Fig. 2 A: write after read is tolerated between ROTs.
    let mut m = HtmMachine::new(Topology::default(), WriteAfterReadPolicy::default());
    let r0 = m.tbegin(0, TxMode::Rot).unwrap();
    let r1 = m.tbegin(1, TxMode::Rot).unwrap();
    m.tread(r0, X).unwrap();
    let ok = m.twrite(r1, X, 1).is_ok() && m.status(r0) == Some(TxStatus::Active);
    r.push("fig2a-war-tolerated", ok, "reader survives a later write by another ROT");

    // Fig. 2 B: read after write kills the writer.
    let mut m = HtmMachine::new(Topology::default(), WriteAfterReadPolicy::default());
    let r1 = m.tbegin(0, TxMode::Rot).unwrap();
    let r2 = m.tbegin(1, TxMode::Rot).unwrap();
    m.twrite(r1, X, 1).unwrap();
    let v = m.tread(r2, X).unwrap();
    let ok = v == 0 && m.take_abort(r1) == Ok(AbortReason::Conflict);
    r.push("fig2b-raw-kills-writer", ok, format!("reader saw {v}"));

    let opts = ExploreOptions::default();
    match explore_all(&explore_config(Backend::SiHtm), &fig3_program(), &opts) {
        Ok(rep) => r.push(
            "fig3-prevented",
            rep.is_clean(),
            format!("{} interleavings, {} violations", rep.n_interleavings, rep.n_si_violations),
        ),
        Err(e) => r.push("fig3-prevented", false, e.to_string()),
    }
    let ablated = SimConfig { safety_wait: false, ..explore_config(Backend::SiHtm) };
    match explore_all(&ablated, &fig3_program(), &opts) {
        Ok(rep) => {
            let rule = rep.witnesses.first().map(|v| v.rule);
            r.push(
                "fig3-anomaly-without-wait",
                rule == Some(Rule::DirtyRead),
                format!("{} of {} interleavings flagged, first {:?}", rep.n_si_violations, rep.n_interleavings, rule),
            );
        }
        Err(e) => r.push("fig3-anomaly-without-wait", false, e.to_string()),
    }

    let (ok, detail) = fig4(true);
    r.push("fig4a-writer-aborts", ok, detail);
    let (ok, detail) = fig4(false);
    r.push("fig4b-writer-waits-then-commits", ok, detail);
    r
}

/// Scripted Fig. 4: r0 is active when r1 takes its snapshot; r1 spins
/// until r0 finishes. In A, r0 then reads r1's write.
fn fig4(example_a: bool) -> (bool, String) {
    let src = if example_a {
        format!("ro r{Y} r{X}\nrw w{X}=5")
    } else {
        format!("ro r{Y} r{Z}\nrw w{X}=5")
    };
    let mut sim = Simulator::new(explore_config(Backend::SiHtm), p(&src)).unwrap();
    let mut spins = 0;
    sim.step(0).unwrap();
    sim.step(0).unwrap();
    for _ in 0..4 {
        sim.step(1).unwrap();
    }
    while !sim.is_finished(0) {
        if sim.step(1).unwrap() == StepOutcome::Blocked {
            spins += 1;
        }
        sim.step(0).unwrap();
    }
    while !sim.is_done() {
        sim.step(1).unwrap();
    }
    let res = sim.into_result();
    let r0_reads: Vec<u64> = res
        .history
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Read { value, .. } if e.tid == 0 => Some(value),
            _ => None,
        })
        .collect();
    let aborts = res.threads[1].aborts(AbortReason::Conflict);
    let si = check_si(&res.history).map(|v| v.is_pass()).unwrap_or(false);
    let ok = si
        && spins > 0
        && r0_reads == [0, 0]
        && res.final_memory.get(&X) == Some(&5)
        && aborts == u64::from(example_a);
    (ok, format!("writer spun {spins} times, conflict aborts {aborts}, reader saw {r0_reads:?}"))
}

fn exhaustive() -> Report {
    let mut r = Report { suite: Suite::Exhaustive, results: Vec::new() };
    let opts = ExploreOptions::default();
    for c in corpus() {
        match explore_all(&explore_config(Backend::SiHtm), &c.program, &opts) {
            Ok(rep) => {
                let mut detail = format!(
                    "{} interleavings, {} violations",
                    rep.n_interleavings, rep.n_si_violations
                );
                if let Some(v) = rep.witnesses.first() {
                    detail.push_str(&format!("\n{v}"));
                }
                r.push(c.name, rep.is_clean(), detail)
            }
            Err(e) => r.push(c.name, false, e.to_string()),
        }
    }
    r
}

/// A hand-built history with the verdicts the brute-force oracle and the
/// SI rules assign it.
pub struct OracleCase {
    pub name: &'static str,
    pub history: History,
    pub si: Option<Rule>,
    pub serializable: bool,
}

fn h(text: &str) -> History {
    History::parse(text).expect("oracle histories parse")
}

pub fn oracle_cases() -> Vec<OracleCase> {
    vec![
        OracleCase {
            name: "empty",
            history: History::new(),
            si: None,
            serializable: true,
        },
        OracleCase {
            name: "sequential",
            history: h("2\t0\t1\tbegin\tmode=rot start=2
3\t0\t1\twrite\tline=0 addr=0 value=1
4\t0\t1\tsnapshot\tstate=1,0
5\t0\t1\tcommit\t
6\t1\t2\tbegin\tmode=rot start=6
7\t1\t2\tread\tline=0 addr=0 value=1
8\t1\t2\twrite\tline=1 addr=128 value=2
9\t1\t2\tsnapshot\tstate=0,1
10\t1\t2\tcommit\t
"),
            si: None,
            serializable: true,
        },
        OracleCase {
            name: "fig1",
            history: fig1_history(),
            si: None,
            serializable: false,
        },
        OracleCase {
            name: "write-skew",
            history: h("2\t0\t1\tbegin\tmode=rot start=2
3\t1\t2\tbegin\tmode=rot start=3
4\t0\t1\tread\tline=1 addr=128 value=0
5\t1\t2\tread\tline=0 addr=0 value=0
6\t0\t1\twrite\tline=0 addr=0 value=1
7\t1\t2\twrite\tline=1 addr=128 value=2
8\t0\t1\tsnapshot\tstate=1,1
9\t1\t2\tsnapshot\tstate=1,1
10\t0\t1\tcommit\t
11\t1\t2\tcommit\t
"),
            si: None,
            serializable: false,
        },
        OracleCase {
            name: "lost-update",
            history: h("2\t0\t1\tbegin\tmode=rot start=2
3\t1\t2\tbegin\tmode=rot start=3
4\t0\t1\tread\tline=0 addr=0 value=0
5\t1\t2\tread\tline=0 addr=0 value=0
6\t0\t1\twrite\tline=0 addr=0 value=1
7\t0\t1\tsnapshot\tstate=1,3
8\t0\t1\tcommit\t
9\t1\t2\twrite\tline=0 addr=0 value=2
10\t1\t2\tsnapshot\tstate=0,1
11\t1\t2\tcommit\t
"),
            si: Some(Rule::R5),
            serializable: false,
        },
        OracleCase {
            name: "dirty-read",
            history: h("2\t0\t1\tbegin\tmode=rot start=2
3\t1\t2\tbegin\tmode=nontx start=3
4\t0\t1\twrite\tline=0 addr=0 value=1
5\t1\t2\tread\tline=0 addr=0 value=1
6\t1\t2\tcommit\t
7\t0\t1\tabort\treason=conflict
"),
            si: Some(Rule::DirtyRead),
            serializable: false,
        },
        OracleCase {
            name: "non-repeatable-read",
            history: h("2\t0\t1\tbegin\tmode=rot start=2
3\t0\t1\tread\tline=0 addr=0 value=0
4\t1\t2\tbegin\tmode=rot start=4
5\t1\t2\twrite\tline=0 addr=0 value=7
6\t1\t2\tsnapshot\tstate=3,1
7\t1\t2\tcommit\t
8\t0\t1\tread\tline=0 addr=0 value=7
9\t0\t1\tsnapshot\tstate=1,0
10\t0\t1\tcommit\t
"),
            si: Some(Rule::DirtyRead),
            serializable: false,
        },
        OracleCase {
            name: "stale-read",
            history: h("2\t0\t1\tbegin\tmode=rot start=2
3\t0\t1\twrite\tline=0 addr=0 value=1
4\t0\t1\tsnapshot\tstate=1,0
5\t0\t1\tcommit\t
6\t1\t2\tbegin\tmode=nontx start=6
7\t1\t2\tread\tline=0 addr=0 value=0
8\t1\t2\tcommit\t
"),
            si: Some(Rule::R1),
            serializable: true,
        },
        OracleCase {
            name: "own-write-lost",
            history: h("2\t0\t1\tbegin\tmode=rot start=2
3\t0\t1\twrite\tline=0 addr=0 value=1
4\t0\t1\tread\tline=0 addr=0 value=0
5\t0\t1\tsnapshot\tstate=1
6\t0\t1\tcommit\t
"),
            si: Some(Rule::R3),
            serializable: false,
        },
    ]
}

fn oracle() -> Report {
    let mut r = Report { suite: Suite::Oracle, results: Vec::new() };
    for c in oracle_cases() {
        let si = check_si(&c.history).map(|v| v.rule());
        let ser = check_serializable(&c.history).map(|v| v.is_pass());
        let ok = si == Ok(c.si) && ser == Ok(c.serializable);
        r.push(
            c.name,
            ok,
            format!("check_si={si:?} (want {:?}), serializable={ser:?} (want {})", c.si, c.serializable),
        );
    }
    // Regular HTM is serializable: every exhaustive history must pass the oracle.
    let opts = ExploreOptions::default();
    for c in corpus() {
        let mut bad = 0u64;
        let mut first = None;
        let n = explore(&explore_config(Backend::PlainHtm), &c.program, &opts, |res| {
            if check_serializable(&res.history) != Ok(Verdict::Pass) {
                bad += 1;
                first.get_or_insert(res.history);
            }
        });
        let name = format!("htm-serializable/{}", c.name);
        match n {
            Ok(n) => {
                let mut detail = format!("{n} interleavings, {bad} not serializable");
                if let Some(h) = first {
                    detail.push_str(&format!("\n{h}"));
                }
                r.push(name, bad == 0, detail)
            }
            Err(e) => r.push(name, false, e.to_string()),
        }
    }
    r
}

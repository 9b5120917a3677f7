use super::config::SimConfig;
use super::engine::{ExecutionResult, SimError, Simulator};
use super::program::Program;
use crate::checker::{check_si, CheckError, Verdict, Violation};
use crate::history::History;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExploreOptions {
    /// Largest accepted `Program::yield_points`.
    pub bound: usize,
    pub max_interleavings: u64,
    /// Violating histories kept in an exploration report.
    pub max_witnesses: usize,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            bound: 18,
            max_interleavings: 10_000_000,
            max_witnesses: 3,
        }
    }
}

/// Depth-first enumeration of every interleaving. `visit` sees each
/// complete execution once; the return value is the number visited.
///
/// Wait loops only ever wait for a condition that, once true, stays true
/// until the waiter moves, so a spinning step is never a branch: blocked
/// threads are simply not scheduled.
pub fn explore<F>(
    cfg: &SimConfig,
    program: &Program,
    opts: &ExploreOptions,
    mut visit: F,
) -> Result<u64, SimError>
where
    F: FnMut(ExecutionResult),
{
    let points = program.yield_points();
    if points > opts.bound {
        return Err(SimError::BoundExceeded { points, bound: opts.bound });
    }
    let cfg = SimConfig { record_history: true, ..cfg.clone() };
    let mut stack = vec![Simulator::new(cfg, program.clone())?];
    let mut count = 0u64;
    while let Some(mut sim) = stack.pop() {
        loop {
            if sim.is_done() {
                count += 1;
                if count > opts.max_interleavings {
                    return Err(SimError::TooManyInterleavings(opts.max_interleavings));
                }
                visit(sim.into_result());
                break;
            }
            let enabled = sim.enabled();
            match enabled.as_slice() {
                [] => return Err(SimError::Deadlock { cycle: sim.clock() }),
                [only] => {
                    sim.step(*only)?;
                }
                [first, rest @ ..] => {
                    for &t in rest.iter().rev() {
                        let mut fork = sim.clone();
                        fork.step(t)?;
                        stack.push(fork);
                    }
                    sim.step(*first)?;
                }
            }
        }
    }
    Ok(count)
}

#[derive(Debug, Clone, Default)]
pub struct ExplorationReport {
    pub n_interleavings: u64,
    pub n_si_violations: u64,
    pub witnesses: Vec<Violation>,
    /// Histories the checker could not parse; always a bug.
    pub malformed: Vec<(History, String)>,
}

impl ExplorationReport {
    pub fn is_clean(&self) -> bool {
        self.n_si_violations == 0 && self.malformed.is_empty()
    }
}

/// Explores every interleaving and runs the SI checker on each history.
pub fn explore_all(
    cfg: &SimConfig,
    program: &Program,
    opts: &ExploreOptions,
) -> Result<ExplorationReport, SimError> {
    let mut report = ExplorationReport::default();
    report.n_interleavings = explore(cfg, program, opts, |r| match check_si(&r.history) {
        Ok(Verdict::Pass) => {}
        Ok(Verdict::Violation(v)) => {
            report.n_si_violations += 1;
            if report.witnesses.len() < opts.max_witnesses {
                report.witnesses.push(v);
            }
        }
        Err(e @ CheckError::Malformed { .. } | e @ CheckError::TooLarge(_)) => {
            if report.malformed.len() < opts.max_witnesses {
                report.malformed.push((r.history, e.to_string()));
            }
        }
    })?;
    Ok(report)
}

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::SimConfig;
use super::program::{Program, ProgramError};
use crate::history::{Cycle, Event, EventKind, History};
use crate::htm::{AbortReason, Addr, HtmError, HtmMachine, ThreadId, TopologyError, Value};
use crate::protocol::Task;

/// The virtual clock starts here so that active timestamps never collide
/// with the inactive (0) and completed (1) sentinels.
pub const CLOCK_START: Cycle = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid cost model: {0}")]
    Cost(String),
    #[error("no commit within {budget} cycles (stuck at cycle {cycle})")]
    Livelock { cycle: Cycle, budget: u64 },
    #[error("every unfinished thread is blocked at cycle {cycle}")]
    Deadlock { cycle: Cycle },
    #[error("thread {0} has no more work")]
    Finished(ThreadId),
    #[error("no such thread {0}")]
    NoThread(ThreadId),
    #[error("program has {points} yield points, above the bound of {bound}")]
    BoundExceeded { points: usize, bound: usize },
    #[error("more than {0} interleavings")]
    TooManyInterleavings(u64),
    #[error("exhaustive scheduling goes through explore, not run")]
    ExhaustiveRun,
    #[error("internal HTM error: {0}")]
    Htm(#[from] HtmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulePolicy {
    RoundRobin,
    /// Uniform choice among unfinished threads.
    SeededRandom(u64),
    /// Every interleaving up to the given yield-point bound.
    Exhaustive(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Progressed,
    /// The thread is spinning in a wait loop.
    Blocked,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ThreadStats {
    pub committed: u64,
    pub sgl_commits: u64,
    pub attempts: u64,
    aborts: [u64; 4],
}

impl ThreadStats {
    fn slot(reason: AbortReason) -> usize {
        AbortReason::ALL.iter().position(|&r| r == reason).unwrap()
    }

    pub fn aborts(&self, reason: AbortReason) -> u64 {
        self.aborts[Self::slot(reason)]
    }

    pub fn total_aborts(&self) -> u64 {
        self.aborts.iter().sum()
    }

    pub(crate) fn record_abort(&mut self, reason: AbortReason) {
        self.aborts[Self::slot(reason)] += 1;
    }
}

/// Shared simulation state: the HTM machine, the state array, the clock
/// and the event log.
#[derive(Debug, Clone)]
pub(crate) struct World {
    pub htm: HtmMachine,
    pub states: Vec<u64>,
    pub clock: Cycle,
    pub history: History,
    pub record: bool,
    pub stats: Vec<ThreadStats>,
    pub last_commit: Cycle,
}

impl World {
    /// Charges `cost` cycles; returns the cycle the action started at.
    pub fn act(&mut self, cost: u64) -> Cycle {
        let at = self.clock;
        self.clock += cost.max(1);
        at
    }

    pub fn emit(&mut self, tid: ThreadId, cost: u64, kind: EventKind) -> Cycle {
        let cycle = self.act(cost);
        if self.record {
            self.history.push(Event { cycle, tid, kind });
        }
        cycle
    }

    pub fn set_state(&mut self, tid: ThreadId, value: u64, cost: u64) {
        self.states[tid] = value;
        self.emit(tid, cost, EventKind::StateChange { value });
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub history: History,
    pub total_cycles: u64,
    pub threads: Vec<ThreadStats>,
    pub final_memory: BTreeMap<Addr, Value>,
}

impl ExecutionResult {
    pub fn committed(&self) -> u64 {
        self.threads.iter().map(|t| t.committed).sum()
    }

    pub fn sgl_commits(&self) -> u64 {
        self.threads.iter().map(|t| t.sgl_commits).sum()
    }

    pub fn attempts(&self) -> u64 {
        self.threads.iter().map(|t| t.attempts).sum()
    }

    pub fn aborts(&self, reason: AbortReason) -> u64 {
        self.threads.iter().map(|t| t.aborts(reason)).sum()
    }

    pub fn total_aborts(&self) -> u64 {
        self.threads.iter().map(ThreadStats::total_aborts).sum()
    }

    /// Committed transactions per simulated cycle.
    pub fn throughput(&self) -> f64 {
        if self.total_cycles == 0 {
            0.0
        } else {
            self.committed() as f64 / self.total_cycles as f64
        }
    }
}

/// One simulation instance. Cloning it forks the execution, which is how
/// the explorer branches.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: Arc<SimConfig>,
    program: Arc<Program>,
    world: World,
    tasks: Vec<Task>,
}

impl Simulator {
    pub fn new(cfg: SimConfig, program: Program) -> Result<Self, SimError> {
        program.validate()?;
        cfg.cost.validate().map_err(SimError::Cost)?;
        let n = program.n_threads();
        cfg.topology.check_threads(n)?;
        let world = World {
            htm: HtmMachine::new(cfg.topology.clone(), cfg.waw_policy),
            states: vec![0; n],
            clock: CLOCK_START,
            history: History::new(),
            record: cfg.record_history,
            stats: vec![ThreadStats::default(); n],
            last_commit: CLOCK_START,
        };
        let tasks = (0..n).map(|tid| Task::new(tid, &cfg, &program)).collect();
        Ok(Simulator {
            cfg: Arc::new(cfg),
            program: Arc::new(program),
            world,
            tasks,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn n_threads(&self) -> usize {
        self.tasks.len()
    }

    pub fn clock(&self) -> Cycle {
        self.world.clock
    }

    pub fn states(&self) -> &[u64] {
        &self.world.states
    }

    pub fn htm(&self) -> &HtmMachine {
        &self.world.htm
    }

    pub fn history(&self) -> &History {
        &self.world.history
    }

    pub fn stats(&self) -> &[ThreadStats] {
        &self.world.stats
    }

    pub fn is_finished(&self, tid: ThreadId) -> bool {
        self.tasks[tid].is_done()
    }

    pub fn is_done(&self) -> bool {
        self.tasks.iter().all(Task::is_done)
    }

    /// True when the thread's next step would only spin.
    pub fn is_blocked(&self, tid: ThreadId) -> bool {
        self.tasks[tid].is_blocked(&self.world, &self.cfg)
    }

    /// Unfinished threads whose next step makes progress.
    pub fn enabled(&self) -> Vec<ThreadId> {
        (0..self.tasks.len())
            .filter(|&t| !self.is_finished(t) && !self.is_blocked(t))
            .collect()
    }

    pub fn unfinished(&self) -> Vec<ThreadId> {
        (0..self.tasks.len()).filter(|&t| !self.is_finished(t)).collect()
    }

    /// Advances one thread by one yield point.
    pub fn step(&mut self, tid: ThreadId) -> Result<StepOutcome, SimError> {
        let task = self.tasks.get_mut(tid).ok_or(SimError::NoThread(tid))?;
        if task.is_done() {
            return Err(SimError::Finished(tid));
        }
        task.step(&mut self.world, &self.cfg, &self.program)
    }

    pub fn into_result(self) -> ExecutionResult {
        ExecutionResult {
            total_cycles: self.world.clock - CLOCK_START,
            final_memory: self.world.htm.memory().snapshot(),
            history: self.world.history,
            threads: self.world.stats,
        }
    }

    fn check_livelock(&self) -> Result<(), SimError> {
        let budget = self.cfg.livelock_budget;
        if self.world.clock - self.world.last_commit > budget {
            return Err(SimError::Livelock {
                cycle: self.world.clock,
                budget,
            });
        }
        Ok(())
    }
}

/// Runs `program` to completion under a round-robin or seeded-random
/// schedule.
pub fn run(
    cfg: SimConfig,
    program: Program,
    policy: SchedulePolicy,
) -> Result<ExecutionResult, SimError> {
    let mut sim = Simulator::new(cfg, program)?;
    let n = sim.n_threads();
    match policy {
        SchedulePolicy::Exhaustive(_) => return Err(SimError::ExhaustiveRun),
        SchedulePolicy::RoundRobin => {
            let mut tid = 0;
            while !sim.is_done() {
                if !sim.is_finished(tid) {
                    sim.step(tid)?;
                    sim.check_livelock()?;
                }
                tid = (tid + 1) % n;
            }
        }
        SchedulePolicy::SeededRandom(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut live = sim.unfinished();
            while !live.is_empty() {
                let i = rng.gen_range(0..live.len());
                sim.step(live[i])?;
                sim.check_livelock()?;
                if sim.is_finished(live[i]) {
                    live.remove(i);
                }
            }
        }
    }
    Ok(sim.into_result())
}

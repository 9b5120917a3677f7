//! Benchmark grids: a flat `key=value` config expands into cells, every
//! cell runs every seed, and results come back as sorted CSV rows.
//!
//! ```text
//! # hash map, large footprint, 90% lookups
//! benchmark = hashmap
//! backends  = si-htm,htm
//! threads   = 1,2,4,8
//! contention = low
//! footprint = large
//! ro_pct    = 90
//! seeds     = 1,2,3,4,5
//! ```
//!
//! Keys: `benchmark`, `backends`, `threads`, `smt` (`auto` or a list),
//! `cores`, `contention`, `footprint`, `ro_pct`, `mix`, `ops`, `seeds`,
//! `max_retries`, `remote_pct`, `waw_policy`, `safety_wait`,
//! `cost.access`, `cost.begin`, `cost.end`, `cost.protocol`, `output`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::history::History;
use crate::htm::{AbortReason, Topology, WriteAfterReadPolicy};
use crate::sched::{run, Backend, CostModel, RetryPolicy, SchedulePolicy, SimConfig, SimError};
use crate::workloads::{hashmap_program, tpcc_program, HashmapParams, Mix, TpccParams, WorkloadError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    Value { key: String, msg: String },
}

impl ConfigError {
    fn value(key: &str, msg: impl Into<String>) -> Self {
        ConfigError::Value { key: key.to_string(), msg: msg.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("cell {cell}, seed {seed}: {err}")]
    Sim { cell: String, seed: u64, err: SimError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Benchmark {
    Hashmap,
    Tpcc,
}

impl Benchmark {
    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Hashmap => "hashmap",
            Benchmark::Tpcc => "tpcc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Contention {
    Low,
    High,
}

impl Contention {
    pub fn as_str(self) -> &'static str {
        match self {
            Contention::Low => "low",
            Contention::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Footprint {
    Large,
    Short,
}

impl Footprint {
    pub fn as_str(self) -> &'static str {
        match self {
            Footprint::Large => "large",
            Footprint::Short => "short",
        }
    }

    pub fn chain(self) -> usize {
        match self {
            Footprint::Large => HashmapParams::LARGE_CHAIN,
            Footprint::Short => HashmapParams::SHORT_CHAIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub backends: Vec<Backend>,
    pub threads: Vec<usize>,
    /// `None` packs threads onto the fewest SMT ways that fit.
    pub smt: Option<Vec<usize>>,
    pub cores: usize,
    pub contention: Vec<Contention>,
    pub footprint: Vec<Footprint>,
    pub ro_pct: Vec<u32>,
    pub mix: Vec<Mix>,
    pub ops_per_thread: usize,
    pub seeds: Vec<u64>,
    pub retry: RetryPolicy,
    pub remote_pct: u32,
    pub waw_policy: WriteAfterReadPolicy,
    pub safety_wait: bool,
    pub cost: CostModel,
    pub output: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            benchmark: Benchmark::Hashmap,
            backends: vec![Backend::SiHtm, Backend::PlainHtm],
            threads: vec![1, 2, 4, 8],
            smt: None,
            cores: Topology::default().n_cores(),
            contention: vec![Contention::Low],
            footprint: vec![Footprint::Large],
            ro_pct: vec![90],
            mix: vec![Mix::STANDARD],
            ops_per_thread: 1000,
            seeds: (1..=5).collect(),
            retry: RetryPolicy::default(),
            remote_pct: 15,
            waw_policy: WriteAfterReadPolicy::default(),
            safety_wait: true,
            cost: CostModel::default(),
            output: None,
        }
    }
}

fn list<T>(key: &str, v: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, ConfigError> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(s).ok_or_else(|| ConfigError::value(key, format!("`{s}`"))))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(ConfigError::value(key, "empty list"));
    }
    Ok(items)
}

fn one<T>(key: &str, v: &str, f: impl Fn(&str) -> Option<T>) -> Result<T, ConfigError> {
    f(v.trim()).ok_or_else(|| ConfigError::value(key, format!("`{}`", v.trim())))
}

fn num<T: std::str::FromStr>(s: &str) -> Option<T> {
    s.parse().ok()
}

impl ExperimentConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim();
        let v = value.trim();
        match key {
            "benchmark" => {
                self.benchmark = one(key, v, |s| match s {
                    "hashmap" => Some(Benchmark::Hashmap),
                    "tpcc" => Some(Benchmark::Tpcc),
                    _ => None,
                })?
            }
            "backends" | "backend" => self.backends = list(key, v, Backend::parse)?,
            "threads" => self.threads = list(key, v, |s| num(s).filter(|&n: &usize| n > 0))?,
            "smt" => {
                self.smt = if v == "auto" {
                    None
                } else {
                    Some(list(key, v, |s| num(s).filter(|n| Topology::SMT_LEVELS.contains(n)))?)
                }
            }
            "cores" => self.cores = one(key, v, |s| num(s).filter(|&n: &usize| n > 0))?,
            "contention" => {
                self.contention = list(key, v, |s| match s {
                    "low" => Some(Contention::Low),
                    "high" => Some(Contention::High),
                    _ => None,
                })?
            }
            "footprint" => {
                self.footprint = list(key, v, |s| match s {
                    "large" => Some(Footprint::Large),
                    "short" => Some(Footprint::Short),
                    _ => None,
                })?
            }
            "ro_pct" => self.ro_pct = list(key, v, |s| num(s).filter(|&p: &u32| p <= 100))?,
            "mix" => self.mix = list(key, v, |s| Mix::parse(s).ok())?,
            "ops" | "ops_per_thread" => self.ops_per_thread = one(key, v, num)?,
            "seeds" => self.seeds = list(key, v, num)?,
            "max_retries" => self.retry.max_retries = one(key, v, num)?,
            "remote_pct" => self.remote_pct = one(key, v, |s| num(s).filter(|&p: &u32| p <= 100))?,
            "waw_policy" => {
                self.waw_policy = one(key, v, |s| match s {
                    "requester-aborts" => Some(WriteAfterReadPolicy::RequesterAborts),
                    "kill-readers" => Some(WriteAfterReadPolicy::KillReaders),
                    _ => None,
                })?
            }
            "safety_wait" => self.safety_wait = one(key, v, num)?,
            "cost.access" => self.cost.access = one(key, v, |s| num(s).filter(|&c: &u64| c > 0))?,
            "cost.begin" => self.cost.begin = one(key, v, |s| num(s).filter(|&c: &u64| c > 0))?,
            "cost.end" => self.cost.end = one(key, v, |s| num(s).filter(|&c: &u64| c > 0))?,
            "cost.protocol" => self.cost.protocol = one(key, v, |s| num(s).filter(|&c: &u64| c > 0))?,
            "output" => self.output = Some(v.to_string()),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Expands the grid, checking that every cell fits the machine.
    pub fn cells(&self) -> Result<Vec<Cell>, ConfigError> {
        let mut cells = Vec::new();
        let workloads: Vec<WorkloadShape> = match self.benchmark {
            Benchmark::Hashmap => self
                .footprint
                .iter()
                .flat_map(|&f| self.ro_pct.iter().map(move |&r| WorkloadShape::Hashmap(f, r)))
                .collect(),
            Benchmark::Tpcc => self.mix.iter().map(|&m| WorkloadShape::Tpcc(m)).collect(),
        };
        for &backend in &self.backends {
            for &threads in &self.threads {
                let topologies = match &self.smt {
                    None => vec![Topology::packed(self.cores, threads)
                        .map_err(|e| ConfigError::value("threads", e.to_string()))?],
                    Some(levels) => levels
                        .iter()
                        .map(|&smt| {
                            let t = Topology::new(self.cores, smt)
                                .map_err(|e| ConfigError::value("smt", e.to_string()))?;
                            t.check_threads(threads)
                                .map_err(|e| ConfigError::value("threads", e.to_string()))?;
                            Ok(t)
                        })
                        .collect::<Result<_, ConfigError>>()?,
                };
                for topology in topologies {
                    for &contention in &self.contention {
                        for &shape in &workloads {
                            cells.push(Cell {
                                benchmark: self.benchmark,
                                backend,
                                threads,
                                topology: topology.clone(),
                                contention,
                                shape,
                            });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    pub fn sim_config(&self, cell: &Cell) -> SimConfig {
        SimConfig {
            topology: cell.topology.clone(),
            backend: cell.backend,
            retry: self.retry,
            cost: self.cost,
            waw_policy: self.waw_policy,
            safety_wait: self.safety_wait,
            record_history: false,
            ..SimConfig::default()
        }
    }

    pub fn program(&self, cell: &Cell, seed: u64) -> Result<crate::sched::Program, WorkloadError> {
        match cell.shape {
            WorkloadShape::Hashmap(f, ro) => {
                let buckets = match cell.contention {
                    Contention::Low => HashmapParams::LOW_CONTENTION_BUCKETS,
                    Contention::High => HashmapParams::HIGH_CONTENTION_BUCKETS,
                };
                hashmap_program(&HashmapParams {
                    ops_per_thread: self.ops_per_thread,
                    seed,
                    ..HashmapParams::new(buckets, f.chain(), ro, cell.threads)
                })
            }
            WorkloadShape::Tpcc(mix) => tpcc_program(&TpccParams {
                ops_per_thread: self.ops_per_thread,
                seed,
                remote_pct: self.remote_pct,
                ..TpccParams::new(mix, cell.threads, cell.contention == Contention::High)
            }),
        }
    }

    /// Runs one cell for one seed. The program seed also seeds the
    /// scheduler.
    pub fn run_cell(&self, cell: &Cell, seed: u64) -> Result<ResultRow, ExperimentError> {
        let program = self.program(cell, seed)?;
        let res = run(self.sim_config(cell), program, SchedulePolicy::SeededRandom(seed))
            .map_err(|err| ExperimentError::Sim { cell: cell.to_string(), seed, err })?;
        Ok(ResultRow {
            benchmark: cell.benchmark.as_str().to_string(),
            backend: cell.backend.as_str().to_string(),
            threads: cell.threads,
            smt: cell.topology.smt_level(),
            contention: cell.contention.as_str().to_string(),
            mix: cell.shape.label(),
            seed,
            committed: res.committed(),
            cycles: res.total_cycles,
            throughput: res.throughput(),
            aborts_conflict: res.aborts(AbortReason::Conflict) + res.aborts(AbortReason::Explicit),
            aborts_capacity: res.aborts(AbortReason::Capacity),
            aborts_nontx: res.aborts(AbortReason::NonTxKill),
        })
    }

    /// Reruns one cell with history recording on.
    pub fn history(&self, cell: &Cell, seed: u64) -> Result<History, ExperimentError> {
        let program = self.program(cell, seed)?;
        let cfg = SimConfig { record_history: true, ..self.sim_config(cell) };
        run(cfg, program, SchedulePolicy::SeededRandom(seed))
            .map(|r| r.history)
            .map_err(|err| ExperimentError::Sim { cell: cell.to_string(), seed, err })
    }

    /// Every (cell, seed) pair, in parallel, sorted.
    pub fn run(&self) -> Result<Vec<ResultRow>, ExperimentError> {
        let jobs: Vec<(Cell, u64)> = self
            .cells()?
            .into_iter()
            .flat_map(|c| self.seeds.iter().map(move |&s| (c.clone(), s)))
            .collect();
        let mut rows = jobs
            .par_iter()
            .map(|(c, s)| self.run_cell(c, *s))
            .collect::<Result<Vec<_>, _>>()?;
        rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        Ok(rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WorkloadShape {
    Hashmap(Footprint, u32),
    Tpcc(Mix),
}

impl WorkloadShape {
    pub fn label(&self) -> String {
        match self {
            WorkloadShape::Hashmap(f, ro) => format!("{}-ro{ro}", f.as_str()),
            WorkloadShape::Tpcc(m) => m.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub benchmark: Benchmark,
    pub backend: Backend,
    pub threads: usize,
    pub topology: Topology,
    pub contention: Contention,
    pub shape: WorkloadShape,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} threads={} smt={} {} {}",
            self.benchmark.as_str(),
            self.backend,
            self.threads,
            self.topology.smt_level(),
            self.contention.as_str(),
            self.shape.label()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub benchmark: String,
    pub backend: String,
    pub threads: usize,
    pub smt: usize,
    pub contention: String,
    pub mix: String,
    pub seed: u64,
    pub committed: u64,
    pub cycles: u64,
    pub throughput: f64,
    pub aborts_conflict: u64,
    pub aborts_capacity: u64,
    pub aborts_nontx: u64,
}

pub const CSV_HEADER: &str = "benchmark,backend,threads,smt,contention,mix,seed,committed,cycles,throughput,aborts_conflict,aborts_capacity,aborts_nontx";

impl ResultRow {
    fn sort_key(&self) -> (&str, &str, usize, usize, &str, &str, u64) {
        (&self.benchmark, &self.backend, self.threads, self.smt, &self.contention, &self.mix, self.seed)
    }

    pub fn total_aborts(&self) -> u64 {
        self.aborts_conflict + self.aborts_capacity + self.aborts_nontx
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:.9},{},{},{}",
            self.benchmark,
            self.backend,
            self.threads,
            self.smt,
            self.contention,
            self.mix,
            self.seed,
            self.committed,
            self.cycles,
            self.throughput,
            self.aborts_conflict,
            self.aborts_capacity,
            self.aborts_nontx
        )
    }
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

/// Mean throughput of the rows matching `backend`.
pub fn mean_throughput(rows: &[ResultRow], backend: Backend) -> f64 {
    let sel: Vec<f64> = rows
        .iter()
        .filter(|r| r.backend == backend.as_str())
        .map(|r| r.throughput)
        .collect();
    if sel.is_empty() {
        0.0
    } else {
        sel.iter().sum::<f64>() / sel.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let mut c = ExperimentConfig::parse(
            "benchmark = tpcc\n# comment\nmix = standard, read\nthreads=1,8\nseeds=3\n",
        )
        .unwrap();
        assert_eq!(c.benchmark, Benchmark::Tpcc);
        assert_eq!(c.mix, vec![Mix::STANDARD, Mix::READ_DOMINATED]);
        c.set("cost.access", "2").unwrap();
        assert_eq!(c.cost.access, 2);
        assert_eq!(c.cells().unwrap().len(), 2 * 2 * 2);
        assert_eq!(ExperimentConfig::parse("bogus=1"), Err(ConfigError::UnknownKey("bogus".into())));
        assert!(matches!(ExperimentConfig::parse("threads=0"), Err(ConfigError::Value { .. })));
        assert!(matches!(ExperimentConfig::parse("threads"), Err(ConfigError::Syntax { line: 1 })));
    }

    #[test]
    fn grid_arithmetic_and_topology_checks() {
        let c = ExperimentConfig::default();
        assert_eq!(c.cells().unwrap().len(), 8);
        assert_eq!(c.seeds, vec![1, 2, 3, 4, 5]);
        let c = ExperimentConfig::parse("threads=16\nsmt=1").unwrap();
        assert!(matches!(c.cells(), Err(ConfigError::Value { ref key, .. }) if key == "threads"));
        let c = ExperimentConfig::parse("threads=16").unwrap();
        assert_eq!(c.cells().unwrap()[0].topology.smt_level(), 2);
        assert!(ExperimentConfig::parse("threads=81").unwrap().cells().is_err());
    }

    #[test]
    fn small_grid_csv() {
        let c = ExperimentConfig::parse("threads=1,2\nops=20\nseeds=2,1\nfootprint=short").unwrap();
        let rows = c.run().unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        let csv = to_csv(&rows);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv, to_csv(&c.run().unwrap()));
        for r in &rows {
            assert_eq!(r.committed as usize, 20 * r.threads);
            assert!((r.throughput - r.committed as f64 / r.cycles as f64).abs() < 1e-12);
        }
        assert_eq!(rows[0].seed, 1);
    }
}

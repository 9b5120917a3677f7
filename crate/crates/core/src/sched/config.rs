use std::fmt;

use crate::htm::{Topology, WriteAfterReadPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Backend {
    /// Rollback-only transactions plus the quiescence protocol, with a
    /// non-transactional read-only path and a global-lock fallback.
    SiHtm,
    /// Regular HTM transactions subscribed to the global lock at begin.
    PlainHtm,
    /// Every transaction takes the global lock.
    SglOnly,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::SiHtm, Backend::PlainHtm, Backend::SglOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::SiHtm => "si-htm",
            Backend::PlainHtm => "htm",
            Backend::SglOnly => "sgl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "si-htm" | "sihtm" | "si" => Some(Backend::SiHtm),
            "htm" | "plain-htm" | "plainhtm" => Some(Backend::PlainHtm),
            "sgl" | "sgl-only" | "sglonly" => Some(Backend::SglOnly),
            _ => None,
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Hardware attempts before falling back to the global lock.
    pub max_retries: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 5 }
    }
}

/// Cycles charged per simulated action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    pub access: u64,
    pub begin: u64,
    pub end: u64,
    /// State-array writes, barriers, lock accesses, and each thread
    /// inspected by a poll.
    pub protocol: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            access: 1,
            begin: 3,
            end: 3,
            protocol: 1,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("access", self.access),
            ("begin", self.begin),
            ("end", self.end),
            ("protocol", self.protocol),
        ] {
            if v == 0 {
                return Err(format!("cost `{name}` must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub topology: Topology,
    pub backend: Backend,
    pub retry: RetryPolicy,
    pub cost: CostModel,
    pub waw_policy: WriteAfterReadPolicy,
    /// Turning this off removes the quiescence wait (ablation only).
    pub safety_wait: bool,
    pub record_history: bool,
    /// Cycles without any commit before a run is declared livelocked.
    pub livelock_budget: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            topology: Topology::default(),
            backend: Backend::SiHtm,
            retry: RetryPolicy::default(),
            cost: CostModel::default(),
            waw_policy: WriteAfterReadPolicy::default(),
            safety_wait: true,
            record_history: true,
            livelock_budget: 50_000_000,
        }
    }
}

impl SimConfig {
    pub fn new(backend: Backend) -> Self {
        SimConfig {
            backend,
            ..SimConfig::default()
        }
    }

    pub fn with_topology(mut self, topology: Topology) -> Self {
        self.topology = topology;
        self
    }

    pub fn with_retries(mut self, max_retries: u32) -> Self {
        self.retry.max_retries = max_retries;
        self
    }
}

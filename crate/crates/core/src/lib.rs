//! Deterministic simulation of POWER8-style hardware transactional memory,
//! the SI-HTM quiescence protocol built on top of it, and a snapshot
//! isolation checker for the histories it produces.

pub mod checker;
pub mod experiment;
pub mod history;
pub mod htm;
pub mod protocol;
pub mod sched;
pub mod verify;
pub mod workloads;

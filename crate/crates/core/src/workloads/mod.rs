//! Benchmark program generators.
//!
//! Generators simulate their data structure sequentially, round-robin
//! over threads, and emit each transaction's access list. Every logical
//! row or node sits on its own cache line.

mod hashmap;
mod tpcc;

pub use hashmap::{hashmap_program, HashmapParams};
pub use tpcc::{tpcc_program, Mix, TpccParams, TpccScale, TxType};

use crate::htm::{Addr, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid workload parameters: {0}")]
    Param(String),
}

impl WorkloadError {
    fn param(msg: impl Into<String>) -> Self {
        WorkloadError::Param(msg.into())
    }
}

/// Line size the generators lay data out for.
pub const LINE_BYTES: u64 = 128;

fn line_addr(line: u64) -> Addr {
    line * LINE_BYTES
}

/// Unique non-zero write values, so a read identifies its writer.
#[derive(Debug, Default)]
struct Tokens(Value);

impl Tokens {
    fn next(&mut self) -> Value {
        self.0 += 1;
        self.0
    }
}

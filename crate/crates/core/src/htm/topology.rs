use std::fmt;

/// Index of a simulated hardware thread.
pub type ThreadId = usize;

/// A memory address. Addresses are abstract 64-bit integers.
pub type Addr = u64;

/// A word-sized memory value. Untouched memory reads as zero.
pub type Value = u64;

/// Identifies a cache line: `address >> log2(line_size_bytes)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheLineId(pub u64);

impl fmt::Display for CacheLineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("a topology needs at least one core")]
    NoCores,
    #[error("SMT level must be 1, 2, 4 or 8 (got {0})")]
    InvalidSmt(usize),
    #[error("TMCAM must hold at least one line")]
    EmptyTmcam,
    #[error("line size must be a power of two (got {0})")]
    LineSize(u64),
    #[error("{threads} threads do not fit on {cores} cores at SMT-{smt}")]
    TooManyThreads {
        threads: usize,
        cores: usize,
        smt: usize,
    },
}

/// Core count, SMT packing and TMCAM geometry.
///
/// Threads are packed round-robin onto cores: thread `t` runs on core
/// `t / smt_level`, so co-located SMT threads share one TMCAM budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n_cores: usize,
    smt_level: usize,
    tmcam_lines_per_core: usize,
    line_shift: u32,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            n_cores: 10,
            smt_level: 1,
            tmcam_lines_per_core: 64,
            line_shift: 7,
        }
    }
}

impl Topology {
    pub const SMT_LEVELS: [usize; 4] = [1, 2, 4, 8];

    pub fn new(n_cores: usize, smt_level: usize) -> Result<Self, TopologyError> {
        if n_cores == 0 {
            return Err(TopologyError::NoCores);
        }
        if !Self::SMT_LEVELS.contains(&smt_level) {
            return Err(TopologyError::InvalidSmt(smt_level));
        }
        Ok(Topology {
            n_cores,
            smt_level,
            ..Topology::default()
        })
    }

    pub fn with_tmcam_lines(mut self, lines: usize) -> Result<Self, TopologyError> {
        if lines == 0 {
            return Err(TopologyError::EmptyTmcam);
        }
        self.tmcam_lines_per_core = lines;
        Ok(self)
    }

    pub fn with_line_size(mut self, bytes: u64) -> Result<Self, TopologyError> {
        if bytes == 0 || !bytes.is_power_of_two() {
            return Err(TopologyError::LineSize(bytes));
        }
        self.line_shift = bytes.trailing_zeros();
        Ok(self)
    }

    /// Smallest SMT level that fits `threads` onto `n_cores`.
    pub fn packed(n_cores: usize, threads: usize) -> Result<Self, TopologyError> {
        let smt = Self::SMT_LEVELS
            .into_iter()
            .find(|smt| n_cores * smt >= threads)
            .ok_or(TopologyError::TooManyThreads {
                threads,
                cores: n_cores,
                smt: 8,
            })?;
        Topology::new(n_cores, smt)
    }

    pub fn n_cores(&self) -> usize {
        self.n_cores
    }

    pub fn smt_level(&self) -> usize {
        self.smt_level
    }

    pub fn tmcam_lines_per_core(&self) -> usize {
        self.tmcam_lines_per_core
    }

    pub fn line_size_bytes(&self) -> u64 {
        1 << self.line_shift
    }

    pub fn max_threads(&self) -> usize {
        self.n_cores * self.smt_level
    }

    pub fn core_of(&self, tid: ThreadId) -> usize {
        tid / self.smt_level
    }

    pub fn line_of(&self, addr: Addr) -> CacheLineId {
        CacheLineId(addr >> self.line_shift)
    }

    pub fn check_threads(&self, threads: usize) -> Result<(), TopologyError> {
        if threads > self.max_threads() {
            return Err(TopologyError::TooManyThreads {
                threads,
                cores: self.n_cores,
                smt: self.smt_level,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_give_an_8k_tmcam() {
        let t = Topology::default();
        assert_eq!(t.tmcam_lines_per_core() as u64 * t.line_size_bytes(), 8192);
    }

    #[test]
    fn threads_pack_round_robin() {
        let t = Topology::new(2, 4).unwrap();
        let cores: Vec<_> = (0..8).map(|tid| t.core_of(tid)).collect();
        assert_eq!(cores, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert!(t.check_threads(8).is_ok());
        assert!(t.check_threads(9).is_err());
    }

    #[test]
    fn lines_are_128_byte_blocks() {
        let t = Topology::default();
        assert_eq!(t.line_of(0), t.line_of(127));
        assert_ne!(t.line_of(127), t.line_of(128));
        assert_eq!(t.line_of(0x1000), CacheLineId(0x20));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert_eq!(Topology::new(1, 3), Err(TopologyError::InvalidSmt(3)));
        assert_eq!(Topology::new(0, 1), Err(TopologyError::NoCores));
        assert!(Topology::default().with_line_size(96).is_err());
        assert!(Topology::default().with_tmcam_lines(0).is_err());
    }

    #[test]
    fn packing_picks_smallest_smt() {
        assert_eq!(Topology::packed(10, 8).unwrap().smt_level(), 1);
        assert_eq!(Topology::packed(10, 16).unwrap().smt_level(), 2);
        assert_eq!(Topology::packed(10, 80).unwrap().smt_level(), 8);
        assert!(Topology::packed(10, 81).is_err());
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{line_addr, Tokens, WorkloadError};
use crate::sched::{Op, Program, TxBody};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashmapParams {
    pub buckets: usize,
    pub avg_chain: usize,
    /// Percentage of lookups.
    pub ro_pct: u32,
    pub n_threads: usize,
    pub ops_per_thread: usize,
    pub seed: u64,
}

impl HashmapParams {
    pub const LOW_CONTENTION_BUCKETS: usize = 1000;
    pub const HIGH_CONTENTION_BUCKETS: usize = 10;
    pub const LARGE_CHAIN: usize = 200;
    pub const SHORT_CHAIN: usize = 50;

    pub fn new(buckets: usize, avg_chain: usize, ro_pct: u32, n_threads: usize) -> Self {
        HashmapParams {
            buckets,
            avg_chain,
            ro_pct,
            n_threads,
            ops_per_thread: 1000,
            seed: 1,
        }
    }

    fn validate(&self) -> Result<(), WorkloadError> {
        if self.buckets == 0 || self.avg_chain == 0 {
            return Err(WorkloadError::param("buckets and avg_chain must be positive"));
        }
        if self.ro_pct > 100 {
            return Err(WorkloadError::param("ro_pct must be at most 100"));
        }
        if self.n_threads == 0 {
            return Err(WorkloadError::param("need at least one thread"));
        }
        Ok(())
    }
}

/// The map as the generator believes it to be. Key `k` always lives on
/// line `k`; bucket heads follow the key space.
struct Map {
    chains: Vec<Vec<u64>>,
    present: Vec<bool>,
    head_base: u64,
}

impl Map {
    fn new(buckets: usize, avg_chain: usize) -> Self {
        let population = (buckets * avg_chain) as u64;
        let keys = 2 * population;
        let mut chains = vec![Vec::with_capacity(avg_chain + 8); buckets];
        let mut present = vec![false; keys as usize];
        for k in 0..population {
            chains[(k % buckets as u64) as usize].push(k);
            present[k as usize] = true;
        }
        Map { chains, present, head_base: keys }
    }

    fn key_space(&self) -> u64 {
        self.present.len() as u64
    }

    fn bucket(&self, key: u64) -> usize {
        (key % self.chains.len() as u64) as usize
    }

    /// Reads the head and walks until `key` (or the end of the chain).
    fn traverse(&self, key: u64, ops: &mut Vec<Op>) -> Option<usize> {
        let b = self.bucket(key);
        ops.push(Op::Read(line_addr(self.head_base + b as u64)));
        for (pos, &k) in self.chains[b].iter().enumerate() {
            ops.push(Op::Read(line_addr(k)));
            if k == key {
                return Some(pos);
            }
        }
        None
    }

    /// Line holding the pointer that precedes position `pos` in bucket `b`.
    fn pred_line(&self, b: usize, pos: usize) -> u64 {
        if pos == 0 {
            self.head_base + b as u64
        } else {
            self.chains[b][pos - 1]
        }
    }
}

/// Lookup, insert and remove transactions over a chained hash map.
///
/// Lookups pick a key from twice the initial population, so about half
/// of them miss and walk the whole chain. A thread's updates alternate
/// between insert and remove.
pub fn hashmap_program(p: &HashmapParams) -> Result<Program, WorkloadError> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut map = Map::new(p.buckets, p.avg_chain);
    let mut threads = vec![Vec::with_capacity(p.ops_per_thread); p.n_threads];
    let mut last_was_insert = vec![false; p.n_threads];
    let mut tokens = Tokens::default();
    for _ in 0..p.ops_per_thread {
        for (tid, txs) in threads.iter_mut().enumerate() {
            let mut ops = Vec::new();
            if rng.gen_range(0..100) < p.ro_pct {
                let key = rng.gen_range(0..map.key_space());
                map.traverse(key, &mut ops);
                txs.push(TxBody::ro(ops));
                continue;
            }
            if last_was_insert[tid] {
                // Remove a random present key.
                let key = loop {
                    let k = rng.gen_range(0..map.key_space());
                    if map.present[k as usize] {
                        break k;
                    }
                };
                let b = map.bucket(key);
                let pos = map.traverse(key, &mut ops).expect("present key is in its chain");
                ops.push(Op::Write(line_addr(map.pred_line(b, pos)), tokens.next()));
                ops.push(Op::Write(line_addr(key), tokens.next()));
                map.chains[b].remove(pos);
                map.present[key as usize] = false;
            } else {
                let key = loop {
                    let k = rng.gen_range(0..map.key_space());
                    if !map.present[k as usize] {
                        break k;
                    }
                };
                let b = map.bucket(key);
                map.traverse(key, &mut ops);
                let tail = map.pred_line(b, map.chains[b].len());
                ops.push(Op::Write(line_addr(key), tokens.next()));
                ops.push(Op::Write(line_addr(tail), tokens.next()));
                map.chains[b].push(key);
                map.present[key as usize] = true;
            }
            last_was_insert[tid] = !last_was_insert[tid];
            txs.push(TxBody::rw(ops));
        }
    }
    Ok(Program::new(threads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(chain: usize, ro: u32) -> HashmapParams {
        HashmapParams { ops_per_thread: 200, ..HashmapParams::new(1000, chain, ro, 4) }
    }

    #[test]
    fn deterministic_in_seed() {
        let p = params(50, 90);
        assert_eq!(hashmap_program(&p).unwrap(), hashmap_program(&p).unwrap());
        let q = HashmapParams { seed: 2, ..p.clone() };
        assert_ne!(hashmap_program(&p).unwrap(), hashmap_program(&q).unwrap());
    }

    #[test]
    fn lookups_are_read_only_and_sized_by_chain() {
        for chain in [50, 200] {
            let prog = hashmap_program(&params(chain, 100)).unwrap();
            prog.validate().unwrap();
            let lens: Vec<usize> = prog.threads.iter().flatten().map(|t| t.ops.len()).collect();
            assert!(prog.threads.iter().flatten().all(|t| t.is_ro));
            let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
            // Half hit (about chain/2 nodes), half miss (chain nodes), plus the head.
            let expect = 0.75 * chain as f64 + 1.0;
            assert!((mean - expect).abs() < 0.1 * expect, "chain {chain}: {mean}");
            assert!(lens.iter().all(|&l| l <= chain + 1));
        }
    }

    #[test]
    fn updates_alternate_insert_and_remove() {
        let prog = hashmap_program(&params(50, 0)).unwrap();
        for txs in &prog.threads {
            for (i, tx) in txs.iter().enumerate() {
                assert!(!tx.is_ro);
                let writes = tx.ops.iter().filter(|o| o.is_write()).count();
                assert_eq!(writes, 2);
                // Inserts walk the full chain and then write the new node first.
                let first_write = tx.ops.iter().position(|o| o.is_write()).unwrap();
                let insert = matches!(tx.ops[first_write], Op::Write(a, _) if !tx.ops[..first_write].contains(&Op::Read(a)));
                assert_eq!(insert, i % 2 == 0, "tx {i}");
            }
        }
    }
}

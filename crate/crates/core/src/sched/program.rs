use std::fmt;
use std::str::FromStr;

use crate::htm::{Addr, Value};

/// Addresses at or above this bound are reserved for protocol metadata
/// (the global lock word).
pub const RESERVED_BASE: Addr = 1 << 60;

/// Address of the single global lock word.
pub const LOCK_ADDR: Addr = RESERVED_BASE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Read(Addr),
    Write(Addr, Value),
    /// Writes back the value this attempt last read from the address
    /// (read promotion).
    WriteBack(Addr),
    /// An explicit abort. Hardware attempts die with `Explicit`; lock and
    /// non-transactional executions ignore it.
    Explicit,
}

impl Op {
    pub fn addr(&self) -> Option<Addr> {
        match *self {
            Op::Read(a) | Op::Write(a, _) | Op::WriteBack(a) => Some(a),
            Op::Explicit => None,
        }
    }

    pub fn is_write(&self) -> bool {
        matches!(self, Op::Write(..) | Op::WriteBack(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxBody {
    pub ops: Vec<Op>,
    pub is_ro: bool,
}

impl TxBody {
    pub fn rw(ops: Vec<Op>) -> Self {
        TxBody { ops, is_ro: false }
    }

    pub fn ro(ops: Vec<Op>) -> Self {
        TxBody { ops, is_ro: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProgramError {
    #[error("program has no threads")]
    NoThreads,
    #[error("thread {thread} tx {tx} is declared read-only but writes")]
    RoWrite { thread: usize, tx: usize },
    #[error("thread {thread} tx {tx} touches reserved address {addr:#x}")]
    ReservedAddress { thread: usize, tx: usize, addr: Addr },
    #[error("thread {thread} tx {tx} writes back address {addr} before reading it")]
    WriteBackWithoutRead { thread: usize, tx: usize, addr: Addr },
    #[error("address {0} is never read")]
    NotRead(Addr),
    #[error("program syntax, line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

/// A set of simulated threads, each running a fixed sequence of
/// transactions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub threads: Vec<Vec<TxBody>>,
}

impl Program {
    pub fn new(threads: Vec<Vec<TxBody>>) -> Self {
        Program { threads }
    }

    pub fn n_threads(&self) -> usize {
        self.threads.len()
    }

    pub fn n_transactions(&self) -> usize {
        self.threads.iter().map(Vec::len).sum()
    }

    /// Begin, each access, and end of every transaction.
    pub fn yield_points(&self) -> usize {
        self.threads
            .iter()
            .flatten()
            .map(|tx| tx.ops.len() + 2)
            .sum()
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.threads.is_empty() {
            return Err(ProgramError::NoThreads);
        }
        for (thread, txs) in self.threads.iter().enumerate() {
            for (tx, body) in txs.iter().enumerate() {
                if body.is_ro && body.ops.iter().any(Op::is_write) {
                    return Err(ProgramError::RoWrite { thread, tx });
                }
                let mut read = Vec::new();
                for op in &body.ops {
                    match *op {
                        Op::Read(a) => read.push(a),
                        Op::WriteBack(a) if !read.contains(&a) => {
                            return Err(ProgramError::WriteBackWithoutRead { thread, tx, addr: a })
                        }
                        _ => {}
                    }
                    if let Some(addr) = op.addr().filter(|&a| a >= RESERVED_BASE) {
                        return Err(ProgramError::ReservedAddress { thread, tx, addr });
                    }
                }
            }
        }
        Ok(())
    }
}

// Text form: one thread per line, transactions separated by `|`, each
// starting with `rw` or `ro`. Ops: `r<addr>`, `w<addr>=<value>`,
// `p<addr>` (write back), `x` (explicit abort). `#` starts a comment.
//
//   rw r1 w2=10 r1
//   rw w1=20 r1 | ro r2

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Read(a) => write!(f, "r{a}"),
            Op::Write(a, v) => write!(f, "w{a}={v}"),
            Op::WriteBack(a) => write!(f, "p{a}"),
            Op::Explicit => f.write_str("x"),
        }
    }
}

impl fmt::Display for TxBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_ro { "ro" } else { "rw" })?;
        for op in &self.ops {
            write!(f, " {op}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for txs in &self.threads {
            for (i, tx) in txs.iter().enumerate() {
                if i > 0 {
                    f.write_str(" | ")?;
                }
                write!(f, "{tx}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn parse_op(tok: &str) -> Result<Op, String> {
    let num = |s: &str| s.parse::<u64>().map_err(|_| format!("bad number in `{tok}`"));
    match tok.split_at(1) {
        ("x", "") => Ok(Op::Explicit),
        ("r", a) => Ok(Op::Read(num(a)?)),
        ("p", a) => Ok(Op::WriteBack(num(a)?)),
        ("w", rest) => {
            let (a, v) = rest.split_once('=').ok_or_else(|| format!("`{tok}` needs =value"))?;
            Ok(Op::Write(num(a)?, num(v)?))
        }
        _ => Err(format!("unknown op `{tok}`")),
    }
}

fn parse_tx(s: &str) -> Result<TxBody, String> {
    let mut toks = s.split_whitespace();
    let is_ro = match toks.next() {
        Some("ro") => true,
        Some("rw") => false,
        Some(t) => return Err(format!("transaction must start with rw or ro, got `{t}`")),
        None => return Err("empty transaction".into()),
    };
    let ops = toks.map(parse_op).collect::<Result<_, _>>()?;
    Ok(TxBody { ops, is_ro })
}

impl FromStr for Program {
    type Err = ProgramError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut threads = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let txs = line
                .split('|')
                .map(parse_tx)
                .collect::<Result<_, _>>()
                .map_err(|msg| ProgramError::Syntax { line: i + 1, msg })?;
            threads.push(txs);
        }
        let p = Program { threads };
        p.validate()?;
        Ok(p)
    }
}

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sihtm_core::checker::{check_serializable, Verdict};
use sihtm_core::experiment::{to_csv, ExperimentConfig};
use sihtm_core::sched::{explore, explore_all, Backend, ExploreOptions, Program, SimConfig, SimError};
use sihtm_core::verify::{corpus, verify, Suite, EXPLORE_RETRIES};

const PASS: u8 = 0;
const FAILURE: u8 = 1;
const USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "sihtm", version, about = "SI-HTM simulator, checker and experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a benchmark grid and write CSV.
    ///
    /// The config file holds `key = value` lines; `#` starts a comment.
    /// Keys: benchmark (hashmap|tpcc), backends (si-htm,htm,sgl), threads,
    /// smt (auto or a list of 1,2,4,8), cores, contention (low,high),
    /// footprint (large,short), ro_pct, mix (standard, read or s:d:o:p:r),
    /// ops, seeds, max_retries, remote_pct, waw_policy
    /// (requester-aborts|kill-readers), safety_wait, cost.access,
    /// cost.begin, cost.end, cost.protocol, output.
    Run {
        /// An optional config file followed by `key=value` overrides,
        /// which apply after the file. Without a file the defaults apply.
        #[arg(value_name = "CONFIG|KEY=VALUE")]
        args: Vec<String>,
        /// CSV destination; `-` or absent means stdout unless the config sets `output`.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write one history file per (cell, seed) into this directory.
        #[arg(long, value_name = "DIR")]
        dump_history: Option<PathBuf>,
    },
    /// Run a verification suite: figures, exhaustive or oracle.
    Verify {
        suite: String,
    },
    /// Explore every interleaving of a small program.
    ///
    /// PROGRAM is a corpus name (see --list) or a program file: one thread
    /// per line, transactions split by `|`, each `rw` or `ro` followed by
    /// ops `rA`, `wA=V`, `pA` (write back the value read from A) or `x`
    /// (explicit abort). SI-HTM runs are checked for snapshot isolation,
    /// the other backends for serializability.
    Explore {
        #[arg(required_unless_present = "list")]
        program: Option<String>,
        #[arg(short, long, default_value = "si-htm")]
        backend: String,
        #[arg(long, default_value_t = EXPLORE_RETRIES)]
        retries: u32,
        /// Disable the safety wait (SI-HTM only).
        #[arg(long)]
        no_safety_wait: bool,
        #[arg(long)]
        max_interleavings: Option<u64>,
        /// Write the violating histories found to this file.
        #[arg(long, value_name = "FILE")]
        dump_history: Option<PathBuf>,
        /// List the corpus programs and exit.
        #[arg(long)]
        list: bool,
    },
}

struct Failure(u8, String);

fn usage(msg: impl ToString) -> Failure {
    Failure(USAGE, msg.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { args, output, dump_history } => {
            let (overrides, files): (Vec<String>, Vec<String>) = args.into_iter().partition(|a| a.contains('='));
            match files.as_slice() {
                [] => cmd_run(None, &overrides, output, dump_history.as_deref()),
                [f] => cmd_run(Some(Path::new(f)), &overrides, output, dump_history.as_deref()),
                _ => Err(usage(format!("more than one config file: {}", files.join(" ")))),
            }
        }
        Cmd::Verify { suite } => cmd_verify(&suite),
        Cmd::Explore { program, backend, retries, no_safety_wait, max_interleavings, dump_history, list } => {
            if list {
                for c in corpus() {
                    println!("{}", c.name);
                }
                Ok(PASS)
            } else {
                let opts = ExploreArgs { backend, retries, no_safety_wait, max_interleavings, dump_history };
                cmd_explore(program.as_deref().unwrap_or_default(), opts)
            }
        }
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("sihtm: {msg}");
            ExitCode::from(code)
        }
    }
}

fn cmd_run(
    config: Option<&Path>,
    overrides: &[String],
    output: Option<PathBuf>,
    dump_history: Option<&Path>,
) -> Result<u8, Failure> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| usage(format!("override `{o}` is not key=value")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    let cells = cfg.cells().map_err(usage)?;
    let rows = cfg.run().map_err(|e| Failure(FAILURE, e.to_string()))?;
    let csv = to_csv(&rows);
    let dest = output.or_else(|| cfg.output.clone().map(PathBuf::from));
    match dest {
        Some(p) if p.as_os_str() != "-" => {
            fs::write(&p, &csv).map_err(|e| Failure(FAILURE, format!("{}: {e}", p.display())))?
        }
        _ => io::stdout().write_all(csv.as_bytes()).map_err(|e| Failure(FAILURE, e.to_string()))?,
    }
    if let Some(dir) = dump_history {
        fs::create_dir_all(dir).map_err(|e| Failure(FAILURE, format!("{}: {e}", dir.display())))?;
        for cell in &cells {
            for &seed in &cfg.seeds {
                let h = cfg.history(cell, seed).map_err(|e| Failure(FAILURE, e.to_string()))?;
                let name = format!(
                    "{}-{}-t{}-smt{}-{}-{}-s{seed}.history",
                    cell.benchmark.as_str(),
                    cell.backend,
                    cell.threads,
                    cell.topology.smt_level(),
                    cell.contention.as_str(),
                    cell.shape.label().replace(':', "_"),
                );
                let path = dir.join(name);
                fs::write(&path, h.to_text()).map_err(|e| Failure(FAILURE, format!("{}: {e}", path.display())))?;
            }
        }
    }
    Ok(PASS)
}

fn cmd_verify(suite: &str) -> Result<u8, Failure> {
    let suite = Suite::parse(suite)
        .ok_or_else(|| usage(format!("unknown suite `{suite}` (figures, exhaustive, oracle)")))?;
    let report = verify(suite);
    print!("{report}");
    let failed = report.results.iter().filter(|r| !r.passed).count();
    println!("{}: {} passed, {failed} failed", suite, report.results.len() - failed);
    Ok(if failed == 0 { PASS } else { FAILURE })
}

struct ExploreArgs {
    backend: String,
    retries: u32,
    no_safety_wait: bool,
    max_interleavings: Option<u64>,
    dump_history: Option<PathBuf>,
}

fn load_program(arg: &str) -> Result<Program, Failure> {
    if let Some(c) = corpus().into_iter().find(|c| c.name == arg) {
        return Ok(c.program);
    }
    let text = if arg == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).map_err(usage)?;
        s
    } else {
        fs::read_to_string(arg)
            .map_err(|e| usage(format!("`{arg}` is neither a corpus program nor a readable file: {e}")))?
    };
    text.parse().map_err(|e| usage(format!("{arg}: {e}")))
}

fn explore_error(e: SimError) -> Failure {
    match e {
        SimError::Program(_) | SimError::BoundExceeded { .. } | SimError::TooManyInterleavings(_) => usage(e),
        e => Failure(FAILURE, e.to_string()),
    }
}

fn cmd_explore(arg: &str, args: ExploreArgs) -> Result<u8, Failure> {
    let program = load_program(arg)?;
    let backend = Backend::parse(&args.backend).ok_or_else(|| usage(format!("unknown backend `{}`", args.backend)))?;
    let cfg = SimConfig { safety_wait: !args.no_safety_wait, ..SimConfig::new(backend).with_retries(args.retries) };
    let mut opts = ExploreOptions::default();
    if let Some(n) = args.max_interleavings {
        opts.max_interleavings = n;
    }
    let mut dump = String::new();
    let bad = if backend == Backend::SiHtm {
        let r = explore_all(&cfg, &program, &opts).map_err(explore_error)?;
        println!("{} interleavings, {} SI violations", r.n_interleavings, r.n_si_violations);
        for (i, v) in r.witnesses.iter().enumerate() {
            println!("{v}");
            dump.push_str(&format!("# witness {i}: {} by {}\n{}", v.rule, v.txid, v.witness));
        }
        for (h, msg) in &r.malformed {
            println!("malformed history: {msg}\n{h}");
        }
        r.n_si_violations + r.malformed.len() as u64
    } else {
        let mut bad = 0u64;
        let n = explore(&cfg, &program, &opts, |res| {
            let v = check_serializable(&res.history);
            if v != Ok(Verdict::Pass) {
                if bad < opts.max_witnesses as u64 {
                    let why = match &v {
                        Ok(v) => v.rule().map(|r| r.to_string()).unwrap_or_default(),
                        Err(e) => e.to_string(),
                    };
                    println!("{why}\n{}", res.history);
                    dump.push_str(&format!("# history {bad}: {why}\n{}", res.history));
                }
                bad += 1;
            }
        })
        .map_err(explore_error)?;
        println!("{n} interleavings, {bad} not serializable");
        bad
    };
    if let Some(p) = args.dump_history {
        fs::write(&p, dump).map_err(|e| Failure(FAILURE, format!("{}: {e}", p.display())))?;
    }
    Ok(if bad == 0 { PASS } else { FAILURE })
}

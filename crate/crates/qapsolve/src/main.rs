//! Command-line front end: solve, bound, verify, heuristic and capacity.
//!
//! Exit codes: 0 success (status optimal for `solve`), 1 file or parse
//! errors, 2 stopped at a cap with a best-known report, 3 capacity refusal,
//! 4 solution verification mismatch.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};

use qapsolve::bnb::{default_restarts, solve_bnb, CheckpointConfig, SolveConfig, SolveError};
use qapsolve::heuristic::{heuristic_ub, HeuristicConfig};
use qapsolve::instance::{
    estimate_memory, read_instance_file, read_solution_file, verify, Orientation,
};
use qapsolve::report::{BoundReport, SolveStatus, REPORT_SCHEMA_VERSION};
use qapsolve::rlt::{
    dual_ascent_rlt1, dual_ascent_rlt2, init_dual, AscentConfig, AscentStatus, RltLevel, SubQap,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportMode {
    Json,
    Text,
}

#[derive(Parser)]
#[command(
    name = "qapsolve",
    about = "Exact quadratic assignment solver with RLT2 dual-ascent bounds",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve an instance to proven optimality.
    Solve {
        instance: PathBuf,
        /// Known upper bound used for pruning (a feasible objective value).
        #[arg(long)]
        ub: Option<i64>,
        /// Minimal dual-ascent progress as a fraction of the upper bound.
        #[arg(long, default_value_t = 1e-5)]
        k: f64,
        /// Worker threads; defaults to all cores (env: QAPSOLVE_WORKERS).
        #[arg(long)]
        workers: Option<usize>,
        /// Strong-branching ascent iterations per candidate.
        #[arg(long, default_value_t = 1)]
        sb_iters: usize,
        /// Children at this depth or shallower inherit warm tensors.
        #[arg(long, default_value_t = 2)]
        warm_depth: usize,
        /// Dual-ascent iteration cap at the root.
        #[arg(long, default_value_t = 1000)]
        root_iters: usize,
        /// Dual-ascent iteration cap per non-root node.
        #[arg(long, default_value_t = 50)]
        node_iters: usize,
        /// Checkpoint file, written every --checkpoint-interval seconds and
        /// on interrupt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Seconds between checkpoints.
        #[arg(long, default_value_t = 300)]
        checkpoint_interval: u64,
        /// Resume from a checkpoint written for the same instance.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Heuristic seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Heuristic restarts; defaults to 20*n with a floor of 64.
        #[arg(long)]
        restarts: Option<usize>,
        /// Wall-clock cap in seconds; exit 2 with the best-known report.
        #[arg(long)]
        time_cap: Option<f64>,
        /// Stop after this many processed nodes; exit 2.
        #[arg(long)]
        node_cap: Option<u64>,
        /// Tensor memory cap, e.g. 1GB or 536870912 (env: QAPSOLVE_MEM_CAP).
        #[arg(long)]
        mem_cap: Option<String>,
        #[arg(long, value_enum, default_value_t = ReportMode::Json)]
        report: ReportMode,
    },
    /// Compute the root lower bound and gap without branching.
    Bound {
        instance: PathBuf,
        /// RLT level of the ascent: 1 or 2.
        #[arg(long, default_value_t = 2)]
        level: u8,
        #[arg(long, default_value_t = 1e-5)]
        k: f64,
        /// Upper bound for the gap; defaults to the heuristic value.
        #[arg(long)]
        ub: Option<i64>,
        /// Ascent iteration cap.
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Heuristic restarts; defaults to 20*n with a floor of 64.
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        mem_cap: Option<String>,
        #[arg(long, value_enum, default_value_t = ReportMode::Json)]
        report: ReportMode,
    },
    /// Check a solution file against an instance; exit 4 on mismatch.
    Verify {
        instance: PathBuf,
        solution: PathBuf,
    },
    /// Print the heuristic permutation and value.
    Heuristic {
        instance: PathBuf,
        /// Restarts; defaults to 20*n with a floor of 64.
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print RLT2 tensor sizes for a problem size or instance file.
    Capacity {
        /// A problem size n, or a path to an instance file.
        target: String,
    },
}

/// Parses byte sizes with optional binary suffixes: `512MB`, `2GB`, `1024`.
fn parse_bytes(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let lower = t.to_ascii_lowercase();
    let (digits, mult) = if let Some(p) = lower.strip_suffix("gb").or(lower.strip_suffix("gib")) {
        (p, 1u64 << 30)
    } else if let Some(p) = lower.strip_suffix("mb").or(lower.strip_suffix("mib")) {
        (p, 1u64 << 20)
    } else if let Some(p) = lower.strip_suffix("kb").or(lower.strip_suffix("kib")) {
        (p, 1u64 << 10)
    } else if let Some(p) = lower.strip_suffix('g') {
        (p, 1u64 << 30)
    } else if let Some(p) = lower.strip_suffix('m') {
        (p, 1u64 << 20)
    } else if let Some(p) = lower.strip_suffix('k') {
        (p, 1u64 << 10)
    } else {
        (lower.as_str(), 1u64)
    };
    let value: f64 = digits
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse byte size {text:?}"))?;
    if value < 0.0 {
        return Err(format!("byte size must be nonnegative, got {text:?}"));
    }
    Ok((value * mult as f64) as u64)
}

fn env_override<T: std::str::FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

static INTERRUPT_FLAG: OnceLock<Arc<AtomicBool>> = OnceLock::new();

extern "C" fn on_signal(_sig: libc::c_int) {
    if let Some(flag) = INTERRUPT_FLAG.get() {
        flag.store(true, Ordering::SeqCst);
    }
}

fn install_interrupt_flag() -> Arc<AtomicBool> {
    let flag = INTERRUPT_FLAG
        .get_or_init(|| Arc::new(AtomicBool::new(false)))
        .clone();
    unsafe {
        libc::signal(libc::SIGINT, on_signal as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_signal as *const () as libc::sighandler_t);
    }
    flag
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Solve {
            instance,
            ub,
            k,
            workers,
            sb_iters,
            warm_depth,
            root_iters,
            node_iters,
            checkpoint,
            checkpoint_interval,
            resume,
            seed,
            restarts,
            time_cap,
            node_cap,
            mem_cap,
            report,
        } => cmd_solve(SolveArgs {
            instance,
            ub,
            k,
            workers,
            sb_iters,
            warm_depth,
            root_iters,
            node_iters,
            checkpoint,
            checkpoint_interval,
            resume,
            seed,
            restarts,
            time_cap,
            node_cap,
            mem_cap,
            report,
        }),
        Cmd::Bound {
            instance,
            level,
            k,
            ub,
            iters,
            seed,
            restarts,
            mem_cap,
            report,
        } => cmd_bound(
            instance, level, k, ub, iters, seed, restarts, mem_cap, report,
        ),
        Cmd::Verify { instance, solution } => cmd_verify(instance, solution),
        Cmd::Heuristic {
            instance,
            restarts,
            seed,
        } => cmd_heuristic(instance, restarts, seed),
        Cmd::Capacity { target } => cmd_capacity(target),
    }
}

struct SolveArgs {
    instance: PathBuf,
    ub: Option<i64>,
    k: f64,
    workers: Option<usize>,
    sb_iters: usize,
    warm_depth: usize,
    root_iters: usize,
    node_iters: usize,
    checkpoint: Option<PathBuf>,
    checkpoint_interval: u64,
    resume: Option<PathBuf>,
    seed: u64,
    restarts: Option<usize>,
    time_cap: Option<f64>,
    node_cap: Option<u64>,
    mem_cap: Option<String>,
    report: ReportMode,
}

fn resolve_mem_cap(flag: Option<String>) -> Result<Option<u64>, String> {
    match flag {
        Some(text) => parse_bytes(&text).map(Some),
        None => match std::env::var("QAPSOLVE_MEM_CAP") {
            Ok(text) => parse_bytes(&text).map(Some),
            Err(_) => Ok(None),
        },
    }
}

fn resolve_workers(flag: Option<usize>) -> usize {
    flag.or_else(|| env_override::<usize>("QAPSOLVE_WORKERS"))
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
        })
        .max(1)
}

fn check_k(k: f64) -> Result<(), String> {
    if (1e-7..=1.0).contains(&k) {
        Ok(())
    } else {
        Err(format!("--k must lie in [1e-7, 1], got {k}"))
    }
}

fn cmd_solve(args: SolveArgs) -> ExitCode {
    if let Err(e) = check_k(args.k) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let inst = match read_instance_file(&args.instance) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let mem_limit = match resolve_mem_cap(args.mem_cap) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let stop_flag = args.checkpoint.as_ref().map(|_| install_interrupt_flag());
    let cfg = SolveConfig {
        workers: resolve_workers(args.workers),
        k: args.k,
        root_iters: args.root_iters,
        node_iters: args.node_iters,
        sb_iters: args.sb_iters,
        warm_depth: args.warm_depth,
        ub_override: args.ub,
        seed: args.seed,
        restarts: args.restarts,
        time_cap: args.time_cap.map(Duration::from_secs_f64),
        node_cap: args.node_cap,
        mem_limit,
        checkpoint: args.checkpoint.map(|path| CheckpointConfig {
            path,
            interval: Duration::from_secs(args.checkpoint_interval),
        }),
        resume: args.resume,
        stop_flag,
    };
    match solve_bnb(&inst, &cfg) {
        Ok(r) => {
            match args.report {
                ReportMode::Json => println!("{}", r.to_json()),
                ReportMode::Text => print!("{}", r.to_text()),
            }
            if r.status == SolveStatus::Capped {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(SolveError::Capacity(c)) => {
            eprintln!("error: {c}");
            eprintln!(
                "estimate: B={} C={} D={} entries, {} bytes total",
                c.detail.entries_b, c.detail.entries_c, c.detail.entries_d, c.detail.bytes_total
            );
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bound(
    instance: PathBuf,
    level: u8,
    k: f64,
    ub: Option<i64>,
    iters: usize,
    seed: u64,
    restarts: Option<usize>,
    mem_cap: Option<String>,
    report: ReportMode,
) -> ExitCode {
    if level != 1 && level != 2 {
        eprintln!("error: --level must be 1 or 2");
        return ExitCode::from(1);
    }
    if let Err(e) = check_k(k) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let inst = match read_instance_file(&instance) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if inst.n < 3 {
        eprintln!("error: RLT bounds need n >= 3, instance has n = {}", inst.n);
        return ExitCode::from(1);
    }
    let mem_limit = match resolve_mem_cap(mem_cap) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let t0 = Instant::now();
    let ub_value = ub.unwrap_or_else(|| {
        let hcfg = HeuristicConfig {
            restarts: restarts.unwrap_or_else(|| default_restarts(inst.n)),
            rng_seed: seed,
            time_cap: None,
        };
        heuristic_ub(&inst, &hcfg).1
    });
    let sub = SubQap::from_instance(&inst);
    let rlt_level = if level == 2 {
        RltLevel::Rlt2
    } else {
        RltLevel::Rlt1
    };
    let mut state = match init_dual(&sub, rlt_level, mem_limit) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    let acfg = AscentConfig {
        k,
        max_iters: iters,
        ..AscentConfig::default()
    };
    let result = if level == 2 {
        dual_ascent_rlt2(&mut state, ub_value as f64, &acfg)
    } else {
        dual_ascent_rlt1(&mut state, ub_value as f64, &acfg)
    };
    let status = match result.status {
        AscentStatus::Converged => "converged",
        AscentStatus::Pruned => "pruned",
        AscentStatus::IterCapped => "iter_capped",
    };
    let gap = if ub_value != 0 {
        (ub_value as f64 - result.lb) / ub_value as f64
    } else {
        0.0
    };
    let out = BoundReport {
        schema_version: REPORT_SCHEMA_VERSION,
        instance: inst.name.clone(),
        n: inst.n,
        level,
        lb: result.lb,
        ub: ub_value,
        gap,
        iterations: result.iterations,
        status: status.to_string(),
        wall_seconds: t0.elapsed().as_secs_f64(),
    };
    match report {
        ReportMode::Json => println!("{}", out.to_json()),
        ReportMode::Text => print!("{}", out.to_text()),
    }
    ExitCode::SUCCESS
}

fn cmd_verify(instance: PathBuf, solution: PathBuf) -> ExitCode {
    let inst = match read_instance_file(&instance) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let (declared, perm) = match read_solution_file(&solution) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match verify(&inst, declared, &perm) {
        Ok(v) => {
            let orientation = match v.orientation {
                Orientation::FlowFirst => "flow-first",
                Orientation::DistFirst => "swapped (distance matrix listed first)",
            };
            println!("declared:  {declared}");
            println!("evaluated: {}", v.evaluated);
            println!("orientation: {orientation}");
            ExitCode::SUCCESS
        }
        Err(qapsolve::instance::VerifyError::SizeMismatch { inst, perm }) => {
            eprintln!("error: solution has {perm} entries but instance has size {inst}");
            ExitCode::from(1)
        }
        Err(qapsolve::instance::VerifyError::NoOrientationMatches {
            declared,
            flow_first,
            dist_first,
        }) => {
            println!("declared:  {declared}");
            println!("evaluated: {flow_first} (flow-first), {dist_first} (swapped)");
            eprintln!("error: declared value matches neither orientation");
            ExitCode::from(4)
        }
    }
}

fn cmd_heuristic(instance: PathBuf, restarts: Option<usize>, seed: u64) -> ExitCode {
    let inst = match read_instance_file(&instance) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cfg = HeuristicConfig {
        restarts: restarts.unwrap_or_else(|| default_restarts(inst.n)),
        rng_seed: seed,
        time_cap: None,
    };
    let (perm, value) = heuristic_ub(&inst, &cfg);
    println!("value: {value}");
    println!("permutation: {perm}");
    ExitCode::SUCCESS
}

fn cmd_capacity(target: String) -> ExitCode {
    let n = match target.parse::<usize>() {
        Ok(n) => n,
        Err(_) => match read_instance_file(&PathBuf::from(&target)) {
            Ok(inst) => inst.n,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
    };
    match estimate_memory(n) {
        Ok(est) => {
            println!("n:         {}", est.n);
            println!("entries B: {}", est.entries_b);
            println!("entries C: {}", est.entries_c);
            println!("entries D: {}", est.entries_d);
            println!(
                "bytes:     {} ({:.3} GiB)",
                est.bytes_total,
                est.bytes_total as f64 / (1u64 << 30) as f64
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_bytes;

    #[test]
    fn byte_suffixes() {
        assert_eq!(parse_bytes("1024").unwrap(), 1024);
        assert_eq!(parse_bytes("1KB").unwrap(), 1024);
        assert_eq!(parse_bytes("1GB").unwrap(), 1 << 30);
        assert_eq!(
            parse_bytes("1.5gb").unwrap(),
            (1.5 * (1u64 << 30) as f64) as u64
        );
        assert_eq!(parse_bytes("2M").unwrap(), 2 << 20);
        assert!(parse_bytes("x").is_err());
    }
}

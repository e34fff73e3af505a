use std::fs::File;
use std::io::BufWriter;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use collatz_kv::embedded::EmbeddedStore;
use collatz_kv::harness::{
    default_workers, run_bench, verify, Backend, BenchConfig, BenchReport, Coordination, EventLog, OutputFormat,
    Target, DEFAULT_BLOCK_SIZE, DEFAULT_LIMIT,
};
use collatz_kv::resp::{RespServer, DEFAULT_ADDR};
use collatz_kv::store::NodeHandle;
use collatz_kv::Error;

const EXIT_MISMATCH: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_ENVIRONMENT: u8 = 3;

/// Concurrent 3n+1 memoization benchmark over a shared key-value store.
#[derive(Parser)]
#[command(name = "collatz-kv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark and print a report.
    Bench(BenchArgs),
    /// Run the benchmark, then check it against a single-threaded reference.
    Verify(BenchArgs),
    /// Serve the embedded store over RESP2.
    Serve {
        #[arg(long, env = "BENCH_ADDR", default_value = DEFAULT_ADDR)]
        addr: String,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "embedded")]
    backend: Backend,
    /// RESP server address.
    #[arg(long, env = "BENCH_ADDR", default_value = DEFAULT_ADDR)]
    addr: String,
    /// Worker count [default: twice the CPU count].
    #[arg(long)]
    workers: Option<usize>,
    /// Compute starts 1..=LIMIT.
    #[arg(long, default_value_t = DEFAULT_LIMIT)]
    limit: u64,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: u64,
    /// [default: locks for embedded, polling for resp]
    #[arg(long)]
    coordination: Option<Coordination>,
    /// Seconds between polls.
    #[arg(long, default_value_t = 0.1)]
    poll_interval: f64,
    /// Transaction attempts before giving up.
    #[arg(long)]
    retry_limit: Option<u32>,
    #[arg(long, default_value = "text")]
    format: OutputFormat,
    /// Delete leftover benchmark keys instead of refusing to run.
    #[arg(long)]
    force_flush: bool,
    /// Write run events as JSON lines to this file.
    #[arg(long, value_name = "PATH")]
    event_log: Option<std::path::PathBuf>,
    /// Overwrite step(N) with a wrong count after the run.
    #[arg(long, hide = true, value_name = "N")]
    corrupt_step: Option<u64>,
}

impl BenchArgs {
    fn config(&self) -> Result<BenchConfig, Error> {
        let mut c = BenchConfig::new(self.backend);
        c.addr = self.addr.clone();
        c.workers = self.workers.unwrap_or_else(default_workers);
        c.limit = self.limit;
        c.block_size = self.block_size;
        if let Some(co) = self.coordination {
            c.coordination = co;
        }
        if !(self.poll_interval.is_finite() && self.poll_interval >= 0.0) {
            return Err(Error::Config("poll interval must be a non-negative number of seconds".into()));
        }
        c.poll_interval = Duration::from_secs_f64(self.poll_interval);
        if let Some(r) = self.retry_limit {
            c.retry_limit = r;
        }
        c.force_flush = self.force_flush;
        c.validate()?;
        Ok(c)
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("collatz-kv: {e}");
    ExitCode::from(match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_ENVIRONMENT,
    })
}

fn bench(args: &BenchArgs) -> Result<(BenchReport, Target), Error> {
    let cfg = args.config()?;
    let target = Target::for_config(&cfg);
    let log = args.event_log.as_ref().map(|_| EventLog::new());
    let result = run_bench(&cfg, &target, log.as_ref());
    if let (Some(path), Some(log)) = (&args.event_log, &log) {
        log.write_jsonl(BufWriter::new(File::create(path)?))?;
    }
    Ok((result?, target))
}

fn corrupt(target: &Target, n: u64) -> Result<(), Error> {
    let mut store = target.open()?;
    let node = NodeHandle::new("step", [n])?;
    let wrong = node.get_u64_or(&mut *store, 0)? + 1;
    node.set(&mut *store, wrong.to_string())
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Bench(args) => {
            let (report, _) = bench(&args)?;
            print!("{}", report.render(args.format));
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(args) => {
            let (report, target) = bench(&args)?;
            if let Some(n) = args.corrupt_step {
                corrupt(&target, n)?;
            }
            print!("{}", report.render(args.format));
            let problems = verify(&report, &mut *target.open()?)?;
            if problems.is_empty() {
                eprintln!("verify: ok");
                return Ok(ExitCode::SUCCESS);
            }
            for p in &problems {
                eprintln!("verify: {p}");
            }
            eprintln!("verify: {} problem(s)", problems.len());
            Ok(ExitCode::from(EXIT_MISMATCH))
        }
        Command::Serve { addr } => {
            let server = RespServer::bind(addr.as_str(), EmbeddedStore::new())?;
            eprintln!("listening on {}", server.local_addr()?);
            server.serve()?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    run(Cli::parse()).unwrap_or_else(|e| fail(&e))
}

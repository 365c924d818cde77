use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use highway_core::check::{check, Verdict};
use highway_core::fixture::Fixture;
use highway_core::oracle;
use highway_core::report::Report;
use highway_core::scenario::Scenario;
use highway_core::sim::{Simulator, Trace, TraceOptions};

const OK: u8 = 0;
const USAGE: u8 = 1;
const PARSE: u8 = 2;
const UNSAFE: u8 = 3;
const MISMATCH: u8 = 4;

#[derive(Parser)]
#[command(name = "highway", version, about = "Simulate, replay and check Highway consensus runs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario; writes `<name>.trace`, `<name>.report.txt` and
    /// `<name>.report.jsonl`.
    Run {
        file: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "HIGHWAY_OUT", default_value = ".")]
        out: PathBuf,
        /// Print the JSON-lines report instead of the text one.
        #[arg(long)]
        json: bool,
    },
    /// Replay a stored trace and recompute finality at other thresholds.
    Check {
        trace: PathBuf,
        /// Comma-separated, e.g. `0,1,2,3`.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        thresholds: Vec<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Compare the greedy summit with brute-force enumeration on a fixture.
    Oracle {
        fixture: PathBuf,
        /// Block name; `G` is the genesis.
        #[arg(long)]
        block: String,
        #[arg(long)]
        q: u64,
    },
}

struct Fail(u8, String);

fn read(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| Fail(USAGE, format!("{}: {e}", path.display())))
}

fn read_trace(path: &Path) -> Result<Trace, Fail> {
    let f = File::open(path).map_err(|e| Fail(USAGE, format!("{}: {e}", path.display())))?;
    Trace::read(BufReader::new(f)).map_err(|e| Fail(PARSE, format!("{}: {e}", path.display())))
}

fn report(trace: &Trace, verdict: Verdict) -> Result<Report, Fail> {
    Report::build(trace, verdict).map_err(|e| Fail(PARSE, e.to_string()))
}

fn verdict_code(v: &Verdict) -> u8 {
    for c in v.violations() {
        let a = v.chain(c.a.0, c.a.1).and_then(|ch| ch.iter().find(|x| x.1 == c.height));
        let b = v.chain(c.b.0, c.b.1).and_then(|ch| ch.iter().find(|x| x.1 == c.height));
        eprintln!(
            "safety violation: {} finalized {} at t={}, {} finalized {} at t={} (height {})",
            c.a.0,
            a.map_or(c.blocks.0, |x| x.0),
            c.a.1,
            c.b.0,
            b.map_or(c.blocks.1, |x| x.0),
            c.b.1,
            c.height
        );
    }
    if v.is_clean() {
        OK
    } else {
        UNSAFE
    }
}

fn run(file: &Path, seed: Option<u64>, out: &Path, json: bool) -> Result<u8, Fail> {
    let text = read(file)?;
    let mut scenario = Scenario::parse(&text).map_err(|e| Fail(PARSE, format!("{}: {e}", file.display())))?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    fs::create_dir_all(out).map_err(|e| Fail(USAGE, format!("{}: {e}", out.display())))?;
    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let trace_path = out.join(format!("{stem}.trace"));
    let w = File::create(&trace_path).map_err(|e| Fail(USAGE, format!("{}: {e}", trace_path.display())))?;
    let mut thresholds: Vec<u64> = (0..scenario.n).flat_map(|v| scenario.thresholds_of(v.into()).to_vec()).collect();
    thresholds.sort_unstable();
    thresholds.dedup();
    let opts = TraceOptions { out: Some(Box::new(BufWriter::new(w))), keep: false };
    let outcome =
        Simulator::new(scenario, opts).run().map_err(|e| Fail(USAGE, format!("{}: {e}", trace_path.display())))?;
    let trace = read_trace(&trace_path)?;
    let verdict = check(&trace, &thresholds).map_err(|e| Fail(PARSE, e.to_string()))?;
    let code = verdict_code(&verdict);
    let rep = report(&trace, verdict)?;
    let write = |name: String, body: &str| {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| Fail(USAGE, format!("{}: {e}", p.display())))
    };
    let text = rep.to_text();
    let lines = rep.to_json_lines();
    write(format!("{stem}.report.txt"), &text)?;
    write(format!("{stem}.report.jsonl"), &lines)?;
    print!("{}", if json { &lines } else { &text });
    if !json {
        println!("trace: {}", trace_path.display());
        println!("digest: {}", outcome.digest);
    }
    Ok(code)
}

fn check_cmd(path: &Path, thresholds: &[u64], json: bool) -> Result<u8, Fail> {
    let trace = read_trace(path)?;
    let verdict = check(&trace, thresholds).map_err(|e| Fail(PARSE, format!("{}: {e}", path.display())))?;
    let code = verdict_code(&verdict);
    let rep = report(&trace, verdict)?;
    print!("{}", if json { rep.to_json_lines() } else { rep.to_text() });
    Ok(code)
}

fn oracle_cmd(path: &Path, block: &str, q: u64) -> Result<u8, Fail> {
    let fx = Fixture::parse(&read(path)?).map_err(|e| Fail(PARSE, format!("{}: {e}", path.display())))?;
    let rep = oracle::compare(&fx, block, q).map_err(|e| {
        let code = match e {
            oracle::OracleError::Fixture(_) => PARSE,
            _ => USAGE,
        };
        Fail(code, e.to_string())
    })?;
    print!("{rep}");
    if rep.ok() {
        println!("result: greedy contains every enumerated summit");
        Ok(OK)
    } else {
        for v in &rep.violations {
            eprintln!("mismatch: {v}");
        }
        Ok(MISMATCH)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.cmd {
        Cmd::Run { file, seed, out, json } => run(file, *seed, out, *json),
        Cmd::Check { trace, thresholds, json } => check_cmd(trace, thresholds, *json),
        Cmd::Oracle { fixture, block, q } => oracle_cmd(fixture, block, *q),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("highway: {msg}");
            ExitCode::from(code)
        }
    }
}

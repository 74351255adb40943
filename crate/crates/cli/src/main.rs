use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dfl_trust_core::attacks::AttackKind;
use dfl_trust_core::config::load_config;
use dfl_trust_core::io::{write_rounds_csv, write_summary_json, write_sweep_csv, write_sweep_summary_csv};
use dfl_trust_core::ledger::hex_digest;
use dfl_trust_core::simulator::{run, summarize_sweep, sweep_with, Mode};
use dfl_trust_core::Error;

#[derive(Parser)]
#[command(name = "dfl-trust", version, about = "Aggregator-trust simulator for decentralized federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write rounds.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write the full chain to chain.bin.
        #[arg(long)]
        dump_chain: bool,
    },
    /// Run the attack × ratio × mode grid and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,0.2")]
        ratios: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "labelflip,signflip,gm,tom")]
        attacks: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "benign,trustchain,unprotected")]
        modes: Vec<String>,
        #[arg(long, default_value_t = 1)]
        reps: u32,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| io_failure(&path, e))
}

fn parse_list<T>(items: &[String], what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, Failure> {
    items
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| f(s.trim()).ok_or_else(|| Failure::Config(format!("invalid {what} `{s}`"))))
        .collect()
}

fn cmd_run(config: &Path, out: &Path, dump_chain: bool) -> Result<(), Failure> {
    let (cfg, warnings) = load_config(config)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let result = run(&cfg)?;
    write_rounds_csv(&result.records, create(out, "rounds.csv")?)?;
    write_summary_json(&result.summary, &cfg, create(out, "summary.json")?)?;
    if dump_chain {
        result.chain.write_to(create(out, "chain.bin")?)?;
    }
    let s = &result.summary;
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("mode            {}", cfg.mode);
    println!("final accuracy  {:.4}", s.final_accuracy);
    println!("mean accuracy   {:.4} (after warm-up)", s.mean_accuracy);
    println!("pse precision   {}", show(s.pse_precision));
    println!("paa precision   {}", show(s.paa_precision));
    println!("rejections      {}", s.rejections);
    println!("failed rounds   {}", s.failed_rounds);
    println!("chain tip       {}", hex_digest(&result.chain.tip_digest()));
    Ok(())
}

fn cmd_sweep(
    config: &Path,
    ratios: &[String],
    attacks: &[String],
    modes: &[String],
    reps: u32,
    out: &Path,
) -> Result<(), Failure> {
    let (base, warnings) = load_config(config)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let ratios = parse_list(ratios, "ratio", |s| s.parse::<f64>().ok().filter(|r| (0.0..=1.0).contains(r)))?;
    let attacks = parse_list(attacks, "attack", |s| s.parse::<AttackKind>().ok())?;
    let modes = parse_list(modes, "mode", |s| s.parse::<Mode>().ok())?;
    if reps == 0 {
        return Err(Failure::Config("reps must be at least 1".into()));
    }
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let total = ratios.len() * attacks.len() * modes.len() * reps as usize;
    let mut done = 0;
    let rows = sweep_with(&base, &ratios, &attacks, &modes, reps, |row| {
        done += 1;
        match &row.error {
            None => eprintln!(
                "[{done}/{total}] {} ratio={} {} rep={} final_accuracy={:.4}",
                row.attack,
                row.ratio,
                row.mode,
                row.rep,
                row.final_accuracy.unwrap_or(f64::NAN)
            ),
            Some(e) => eprintln!("[{done}/{total}] {} ratio={} {} rep={} failed: {e}", row.attack, row.ratio, row.mode, row.rep),
        }
    });
    write_sweep_csv(&rows, create(out, "sweep.csv")?)?;
    write_sweep_summary_csv(&summarize_sweep(&rows), create(out, "sweep_summary.csv")?)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed", rows.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run { config, out, dump_chain } => cmd_run(config, out, *dump_chain),
        Command::Sweep {
            config,
            ratios,
            attacks,
            modes,
            reps,
            out,
        } => cmd_sweep(config, ratios, attacks, modes, *reps, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ulshadow_core::attacker::export_captures;
use ulshadow_core::sim::trace::pretty;
use ulshadow_core::sim::{run_with_sink, ScenarioError};
use ulshadow_core::{Scenario, TraceEvent};

const EXIT_INVALID: u8 = 2;
const EXIT_BREACH: u8 = 3;

#[derive(Parser)]
#[command(name = "ulshadow", version, about = "Uplink overshadowing simulator for 5G SA connection setup")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and print its report.
    Run {
        scenario: PathBuf,
        /// Write the NDJSON trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write captured TMSI/SUCI pairs here.
        #[arg(long)]
        captures: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted key into the scenario, e.g. `attack.cost_scale=2`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Parse and check a scenario without running it.
    Validate {
        scenario: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Pretty-print a trace with every payload decoded.
    DecodeTrace { file: PathBuf },
}

enum Failure {
    Invalid(Vec<String>),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Parse(m) => Failure::Invalid(vec![m]),
            ScenarioError::Invalid(errs) => Failure::Invalid(errs),
        }
    }
}

fn load(path: &Path, overrides: &[String]) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut sc = Scenario::from_toml_with_overrides(&text, overrides)?;
    if sc.name.is_empty() {
        sc.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(sc)
}

fn run(
    scenario: &Path,
    trace: Option<&Path>,
    report: Option<&Path>,
    captures: Option<&Path>,
    seed: Option<u64>,
    mut overrides: Vec<String>,
) -> Result<bool, Failure> {
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    let sc = load(scenario, &overrides)?;
    let mut out = match trace {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let mut io_err = None;
    let rep = run_with_sink(&sc, &mut |ev: &TraceEvent| {
        if let (Some(w), None) = (out.as_mut(), io_err.as_ref()) {
            if let Err(e) = writeln!(w, "{}", ev.to_line()) {
                io_err = Some(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(anyhow::Error::from(e).context("writing trace").into());
    }
    if let Some(mut w) = out {
        w.flush().context("writing trace")?;
    }
    let text = rep.render();
    match report {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    if let Some(p) = captures {
        fs::write(p, export_captures(&rep.captures)).with_context(|| format!("writing {}", p.display()))?;
    }
    for b in &rep.breaches {
        eprintln!("expectation breached: {b}");
    }
    Ok(rep.breaches.is_empty())
}

fn validate(scenario: &Path, overrides: &[String]) -> Result<(), Failure> {
    let sc = load(scenario, overrides)?;
    let r = sc.resolve()?;
    println!(
        "{}: ok ({} cells, {} UEs, {:.1} s{})",
        sc.name,
        r.cells.len(),
        r.ues.len(),
        r.duration_ns as f64 / 1e9,
        r.attack.as_ref().map(|a| format!(", attack {}", a.strategy.name())).unwrap_or_default()
    );
    Ok(())
}

fn decode_trace(file: &Path) -> Result<(), Failure> {
    let f = File::open(file).with_context(|| format!("opening {}", file.display()))?;
    let stdout = io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    let mut bad = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.context("reading trace")?;
        if line.trim().is_empty() {
            continue;
        }
        match TraceEvent::from_line(&line) {
            Ok(ev) => {
                if writeln!(w, "{}", pretty(&ev)).is_err() {
                    // Closed pipe.
                    return Ok(());
                }
            }
            Err(e) => bad.push(format!("line {}: {e}", i + 1)),
        }
    }
    let _ = w.flush();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invalid(bad))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { scenario, trace, report, captures, seed, overrides } => {
            run(&scenario, trace.as_deref(), report.as_deref(), captures.as_deref(), seed, overrides)
        }
        Cmd::Validate { scenario, overrides } => validate(&scenario, &overrides).map(|_| true),
        Cmd::DecodeTrace { file } => decode_trace(&file).map(|_| true),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_BREACH),
        Err(Failure::Invalid(errs)) => {
            for e in errs {
                eprintln!("error: {e}");
            }
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

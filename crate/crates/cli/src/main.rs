use std::fs;
use std::io::{self, BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fairledger::checker::{self, Report};
use fairledger::harness::{self, report_json};
use fairledger::scenario::Scenario;
use fairledger::trace::read_jsonl;

/// Exit status for usage, configuration and I/O errors.
const ERROR_EXIT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fairledger",
    version,
    about = "Simulate and check fair ledger constructions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for traces and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Decided instances a pending valid transaction may wait before it
    /// counts as starved; overrides the scenario or trace value.
    #[arg(long, global = true)]
    grace: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario, then check its trace.
    Run { config: PathBuf },
    /// Run a scenario under both blockchain constructions and tabulate fates.
    Compare { config: PathBuf },
    /// Run a scenario once per seed and aggregate verdicts.
    Sweep {
        config: PathBuf,
        /// Seed range, `a..b` (exclusive) or `a..=b`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Range<u64>,
    },
    /// Check a recorded trace.
    Check { trace: PathBuf },
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let bad = || format!("expected a..b or a..=b, got {s:?}");
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(bad());
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let end = if inclusive {
        b.checked_add(1).ok_or_else(bad)?
    } else {
        b
    };
    if end <= a {
        return Err(format!("seed range {s:?} is empty"));
    }
    Ok(a..end)
}

fn load(path: &Path, grace: Option<u64>) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut s = Scenario::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(g) = grace {
        s.grace = g;
        s.validate()
            .with_context(|| format!("in {}", path.display()))?;
    }
    Ok(s)
}

fn print_report(out: &mut impl Write, r: &Report) -> io::Result<()> {
    for v in &r.verdicts {
        write!(out, "{:<22} {}", v.property.name(), v.status)?;
        if !v.detail.is_empty() {
            write!(out, "  {}", v.detail)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn write(out: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn execute(cli: Cli) -> Result<i32> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Run { config } => {
            let s = load(&config, cli.grace)?;
            if s.construction.is_none() {
                bail!("construction: required by run (use compare to run both)");
            }
            let r = harness::run(&s)?;
            let (trace, report) = r.write_to(&cli.out).context("writing results")?;
            print_report(&mut stdout, &r.report)?;
            eprintln!("trace: {}\nreport: {}", trace.display(), report.display());
            Ok(r.report.exit_code())
        }
        Command::Compare { config } => {
            let mut s = load(&config, cli.grace)?;
            s.construction = None;
            let c = harness::compare(&s)?;
            write!(stdout, "{}", c.table())?;
            let path = write(
                &cli.out,
                "comparison.json",
                &(serde_json::to_string_pretty(&c)? + "\n"),
            )?;
            eprintln!("comparison: {}", path.display());
            Ok(c.exit_code())
        }
        Command::Sweep { config, seeds } => {
            let s = load(&config, cli.grace)?;
            if s.construction.is_none() {
                bail!("construction: required by sweep");
            }
            let summary = harness::sweep(&s, seeds)?;
            writeln!(stdout, "{} runs", summary.runs)?;
            for (p, counts) in &summary.counts {
                let cells: Vec<String> = counts.iter().map(|(st, n)| format!("{st} {n}")).collect();
                writeln!(stdout, "{:<22} {}", p.name(), cells.join(", "))?;
            }
            if !summary.violating_seeds.is_empty() {
                writeln!(stdout, "violating seeds: {:?}", summary.violating_seeds)?;
            }
            let path = write(
                &cli.out,
                "sweep.json",
                &(serde_json::to_string_pretty(&summary)? + "\n"),
            )?;
            eprintln!("summary: {}", path.display());
            Ok(summary.exit_code())
        }
        Command::Check { trace } => {
            let file =
                fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let events = read_jsonl(BufReader::new(file))
                .with_context(|| format!("in {}", trace.display()))?;
            let report = checker::check(&events, cli.grace)?;
            print_report(&mut stdout, &report)?;
            let path = write(&cli.out, "report.json", &report_json(&report))?;
            eprintln!("report: {}", path.display());
            Ok(report.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(ERROR_EXIT);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e)
            if e.downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::from(ERROR_EXIT)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(ERROR_EXIT)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use swaption_cli::bundled::{lookup, BUNDLED};
use swaption_cli::{parse, run_scenario, Format, Options, Report, Scenario};
use swaption_core::chainsim::PartyId;
use swaption_core::econ::Numeraire;

#[derive(Parser)]
#[command(name = "swaption", version, about = "Play swap, swaption and routing scenarios on simulated chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run bundled scenarios by name and scenario files by path.
    Run {
        /// Bundled scenario names; a unique prefix is enough.
        names: Vec<String>,
        #[arg(long = "scenario", value_name = "PATH")]
        scenarios: Vec<PathBuf>,
        /// Also run the adversary enumerator on protocol scenarios.
        #[arg(long)]
        enumerate: bool,
        /// Honest parties for enumeration, comma separated.
        #[arg(long, value_delimiter = ',')]
        honest: Option<Vec<String>>,
        #[arg(long)]
        depth: Option<usize>,
        /// Price grid LO:HI:STEP for payoff scenarios.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        numeraire: Option<Numeraire>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Write one report per scenario into this directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// List bundled scenarios.
    List,
    /// Print a bundled scenario's source.
    Show { name: String },
}

fn load(names: &[String], paths: &[PathBuf]) -> Result<Vec<Scenario>, Vec<String>> {
    let mut errors = Vec::new();
    let mut out = Vec::new();
    let mut sources: Vec<(String, String)> = Vec::new();
    for n in names {
        match lookup(n) {
            Ok((name, text)) => sources.push((name.to_string(), text.to_string())),
            Err(e) => errors.push(e),
        }
    }
    for p in paths {
        match std::fs::read_to_string(p) {
            Ok(text) => {
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                sources.push((stem, text));
            }
            Err(e) => errors.push(format!("{}: {e}", p.display())),
        }
    }
    for (name, text) in sources {
        match parse(&text, &name) {
            Ok(sc) => out.push(sc),
            Err(es) => errors.extend(es.into_iter().map(|e| format!("{name}: {e}"))),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

fn write_reports(reports: &[Report], out: Option<&PathBuf>, format: Format) -> std::io::Result<()> {
    match out {
        None => {
            for r in reports {
                print!("{}", r.text);
            }
        }
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let ext = match format {
                Format::Text => "txt",
                Format::Records => "records",
            };
            for r in reports {
                std::fs::write(dir.join(format!("{}.{ext}", r.name)), &r.text)?;
                println!("{} {}", r.name, if r.passed { "PASS" } else { "FAIL" });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.command {
        Command::List => {
            for (name, text) in BUNDLED {
                let desc = parse(text, name).ok().and_then(|s| s.description).unwrap_or_default();
                println!("{name:<18} {desc}");
            }
            ExitCode::SUCCESS
        }
        Command::Show { name } => match lookup(&name) {
            Ok((_, text)) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run { names, scenarios, enumerate, honest, depth, grid, numeraire, format, out, jobs } => {
            if names.is_empty() && scenarios.is_empty() {
                eprintln!("error: name at least one bundled scenario or pass --scenario PATH");
                return ExitCode::from(2);
            }
            let loaded = match load(&names, &scenarios) {
                Ok(s) => s,
                Err(errors) => {
                    for e in errors {
                        eprintln!("error: {e}");
                    }
                    return ExitCode::from(2);
                }
            };
            let opts = Options {
                enumerate,
                honest: honest.map(|hs| hs.iter().map(|h| PartyId::new(h.as_str())).collect()),
                depth,
                grid,
                numeraire,
                format,
            };
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let reports: Vec<Report> = pool.install(|| loaded.par_iter().map(|s| run_scenario(s, &opts)).collect());
            if let Err(e) = write_reports(&reports, out.as_ref(), format) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            if reports.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}

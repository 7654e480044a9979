//! Command-line front end: run scenarios, sweep sample thicknesses, and
//! re-analyze saved runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use franson::medium::{parse_media_toml, OpticalMedium};
use franson::runner::{
    analyze_run_dir, builtin_media, builtin_scenario, builtin_scenarios, expected_rates,
    load_scenario, render_report, report_run_dir, run_scenario, sweep_thicknesses, Overrides,
    ReportFormat, ReportRow, RunStatus, Scenario,
};
use franson::Result;

#[derive(Parser)]
#[command(
    name = "franson",
    version,
    about = "Simulate time-energy entangled pair interferometry through scattering samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (a built-in preset name or a TOML file path).
    Run {
        scenario: String,
        /// Directory for run artifacts (fringe CSVs, manifest, report).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a scenario across several sample thicknesses (um).
    Sweep {
        scenario: String,
        /// Comma-separated thicknesses in um; 0 means no sample.
        #[arg(long, value_delimiter = ',', required = true)]
        thicknesses: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Rebuild reports from the raw tag files of saved runs.
    Analyze {
        /// Run directories written by `run --save-tags`.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Re-render reports from the fringe CSVs of saved runs.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// List the built-in scenarios with their expected rates.
    List,
}

#[derive(Args)]
struct CommonArgs {
    /// Replace the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Phase steps per scan.
    #[arg(long)]
    steps: Option<usize>,
    /// Number of repeated scans.
    #[arg(long)]
    scans: Option<usize>,
    /// Integration time per step (s).
    #[arg(long)]
    integration: Option<f64>,
    /// Report format: csv or json-lines.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Persist per-step raw tag files (needs --out).
    #[arg(long)]
    save_tags: bool,
    /// Replace the feasibility floor (expected peak counts per step).
    #[arg(long)]
    floor: Option<f64>,
    /// Extra media table merged over the built-in one.
    #[arg(long)]
    media: Option<PathBuf>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            steps: self.steps,
            scans: self.scans,
            integration_s: self.integration,
            save_tags: self.save_tags,
            feasibility_floor: self.floor,
        }
    }
}

fn load_scenario_arg(arg: &str) -> Result<Scenario> {
    if let Some(text) = builtin_scenario(arg) {
        return load_scenario(text);
    }
    let path = Path::new(arg);
    if path.exists() {
        return load_scenario(&std::fs::read_to_string(path)?);
    }
    let names: Vec<&str> = builtin_scenarios().iter().map(|(n, _)| *n).collect();
    Err(franson::Error::Scenario(format!(
        "`{arg}` is neither a file nor a built-in scenario (built-ins: {})",
        names.join(", ")
    )))
}

fn load_media(extra: Option<&Path>) -> Result<BTreeMap<String, OpticalMedium>> {
    let mut media = parse_media_toml(builtin_media())?;
    if let Some(path) = extra {
        let user = parse_media_toml(&std::fs::read_to_string(path)?)?;
        media.extend(user);
    }
    Ok(media)
}

fn print_status(name: &str, status: &RunStatus, warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {name}: {w}");
    }
    match status {
        RunStatus::Completed => {}
        RunStatus::Infeasible {
            expected_peak,
            floor,
        } => eprintln!(
            "{name}: infeasible, expected peak {expected_peak:.1} counts/step \
is below the floor of {floor}"
        ),
        RunStatus::NoFringe { reason } => eprintln!("{name}: no usable fringe: {reason}"),
    }
}

fn cmd_run(scenario: &str, out: Option<&Path>, common: &CommonArgs) -> Result<()> {
    let scenario = load_scenario_arg(scenario)?;
    let media = load_media(common.media.as_deref())?;
    let format = ReportFormat::parse(&common.format)?;
    let mut cfg = scenario.resolve(&media)?;
    cfg.apply_overrides(&common.overrides());
    let outcome = run_scenario(&cfg, out, format)?;
    print_status(&outcome.name, &outcome.status, &outcome.warnings);
    print!(
        "{}",
        render_report(std::slice::from_ref(&outcome.row), format)?
    );
    Ok(())
}

fn cmd_sweep(
    scenario: &str,
    thicknesses: &[f64],
    out: Option<&Path>,
    common: &CommonArgs,
) -> Result<()> {
    let scenario = load_scenario_arg(scenario)?;
    let media = load_media(common.media.as_deref())?;
    let format = ReportFormat::parse(&common.format)?;
    let outcomes = sweep_thicknesses(
        &scenario,
        &media,
        thicknesses,
        &common.overrides(),
        out,
        format,
    )?;
    let mut rows = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        print_status(&o.name, &o.status, &o.warnings);
        rows.push(o.row.clone());
    }
    print!("{}", render_report(&rows, format)?);
    Ok(())
}

fn cmd_analyze(dirs: &[PathBuf], format: &str) -> Result<()> {
    let format = ReportFormat::parse(format)?;
    let mut rows: Vec<ReportRow> = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let (_, outcome) = analyze_run_dir(dir)?;
        print_status(&outcome.name, &outcome.status, &outcome.warnings);
        rows.push(outcome.row);
    }
    print!("{}", render_report(&rows, format)?);
    Ok(())
}

fn cmd_report(dirs: &[PathBuf]) -> Result<()> {
    for dir in dirs {
        let (outcome, text) = report_run_dir(dir)?;
        print_status(&outcome.name, &outcome.status, &outcome.warnings);
        print!("{text}");
    }
    Ok(())
}

fn cmd_list() -> Result<()> {
    let media = load_media(None)?;
    println!(
        "{:<20} {:<16} {:>10} {:>12} {:>12} {:>12}",
        "scenario", "sample", "um", "singles_a/s", "peak_cc/s", "contrast"
    );
    for (name, text) in builtin_scenarios() {
        let cfg = load_scenario(text)?.resolve(&media)?;
        let budget = expected_rates(&cfg)?;
        println!(
            "{:<20} {:<16} {:>10} {:>12.0} {:>12.2} {:>12.3}",
            name,
            cfg.sample,
            cfg.thickness_um,
            budget.singles_a_hz,
            budget.peak_window_hz,
            budget.expected_contrast
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            out,
            common,
        } => cmd_run(scenario, out.as_deref(), common),
        Command::Sweep {
            scenario,
            thicknesses,
            out,
            common,
        } => cmd_sweep(scenario, thicknesses, out.as_deref(), common),
        Command::Analyze { dirs, format } => cmd_analyze(dirs, format),
        Command::Report { dirs } => cmd_report(dirs),
        Command::List => cmd_list(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! `paircorr` command-line runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use paircorr::config::RunConfig;
use paircorr::error_norms::format_calibration;
use paircorr::fock::{calibrate, CALIBRATION_SEEDS};
use paircorr::pipeline::{emit_outputs, run_stages, run_verification, RunReport, Stage};
use paircorr::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "paircorr", version, about = "Hartree plus pair-excitation corrections to mean-field boson dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir` in the config.
    #[arg(long, global = true, value_name = "DIR", env = "PAIRCORR_OUT")]
    out: Option<PathBuf>,

    /// Seed; overrides `seed` in the config.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Print stage summaries to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve the Hartree equation.
    Hartree,
    /// Hartree plus the pair-excitation kernel.
    Pairk,
    /// Phases, d-kernel trace and the a*a* obstruction.
    Diagnose,
    /// Error norms f, g and the bound.
    Errors,
    /// Operator-algebra identities on the Fock-space lattice of the config.
    Oracle,
    /// Full run with the exact Fock-space comparison.
    Endtoend,
    /// Refit the error-norm constants and check them against the compiled values.
    Calibrate,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_deref().ok_or_else(|| Error::Config("this subcommand needs --config PATH".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    if let Some(out) = &cli.out {
        return Ok(out.clone());
    }
    if cli.config.is_some() {
        return Ok(load(cli)?.output.dir);
    }
    Ok(PathBuf::from("out"))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| Error::Io(e.to_string()))
}

fn log_report(r: &RunReport) {
    if let Some(h) = &r.hartree {
        eprintln!("hartree: {} steps, mass drift {:.3e}, energy drift {:.3e}", h.n_steps, h.mass_drift, h.energy_drift);
    }
    if let Some(p) = &r.picard {
        eprintln!(
            "pairk: {} iterations, converged {}, sup|k| {:.4e}, last difference {:.3e}",
            p.iterations,
            p.converged,
            p.sup_k,
            p.history.last().copied().unwrap_or(0.0)
        );
    }
    if let Some(d) = &r.diagnostics {
        let max = |v: &[f64]| v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        eprintln!("diagnose: max residual {:.3e}, max |a*a*| {:.3e}", max(&d.residual), max(&d.astar_coeff_norm));
    }
    if let Some(e) = &r.errors {
        eprintln!("errors: {} nodes, final bound {:.4e}", e.nodes.len(), e.bound.last().copied().unwrap_or(0.0));
    }
    if let Some(o) = &r.end_to_end {
        eprintln!(
            "endtoend: derivative residual {:.3e}, inequality holds {}, tail {:.1e}",
            o.max_derivative_residual(),
            o.inequality_holds(0.0),
            o.tail_max
        );
    }
    eprintln!("wall time {:.2} s", r.wall_time_s);
}

fn pipeline(cli: &Cli, target: Stage) -> Result<()> {
    let config = load(cli)?;
    let (report, err) = run_stages(&config, target);
    if cli.verbose {
        log_report(&report);
    }
    emit_outputs(&report, &config.output.dir)?;
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn oracle(cli: &Cli) -> Result<()> {
    let config = load(cli)?;
    let report = run_verification(&config)?;
    if cli.verbose {
        for c in &report.checks {
            eprintln!(
                "{:<12} {:.3e} (tol {:.0e}) {}",
                c.name,
                c.deviation,
                c.tolerance,
                if c.pass { "ok" } else { "FAIL" }
            );
        }
    }
    write(&config.output.dir, "verification.json", &to_json(&report)?)?;
    report.into_result().map(|_| ())
}

fn calibration(cli: &Cli) -> Result<()> {
    let dir = out_dir(cli)?;
    let report = calibrate(&CALIBRATION_SEEDS)?;
    if cli.verbose {
        for e in report.entries() {
            eprintln!("{:<10} {:.15} residual {:.2e}", e.name, e.value, e.residual);
        }
        let (name, drift) = report.drift();
        eprintln!("largest drift {drift:.3e} ({name})");
    }
    write(&dir, "constants.calib", &format_calibration(&report.entries()))?;
    write(&dir, "calibration.json", &to_json(&report)?)?;
    report.check_drift()
}

fn run(cli: &Cli) -> Result<()> {
    match cli.command {
        Command::Hartree => pipeline(cli, Stage::Hartree),
        Command::Pairk => pipeline(cli, Stage::PairK),
        Command::Diagnose => pipeline(cli, Stage::Diagnose),
        Command::Errors => pipeline(cli, Stage::Errors),
        Command::Endtoend => pipeline(cli, Stage::EndToEnd),
        Command::Oracle => oracle(cli),
        Command::Calibrate => calibration(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! Configuration-driven run: Hartree, pair kernel, diagnostics, error
//! norms and the optional Fock-space check, plus the output files.
//!
//! Output files written by [`emit_outputs`]:
//!
//! * `run.csv`: one row per time node, columns in [`CSV_COLUMNS`] and
//!   documented in `docs/output_schema.md`. Missing values are empty.
//! * `summary.json`: status, convergence, tolerances and calibration.
//! * `constants.calib`: the calibration record compiled into the crate.
//! * `config.echo`: the resolved configuration as TOML.
//! * `timing.json`: wall time. Kept apart so the other files are
//!   byte-for-byte reproducible.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::error_norms::{compiled_constants, error_bound, f_error, g_error, CALIBRATION_FILE};
use crate::fock::{
    end_to_end_check, verify_algebra, EndToEndOptions, EndToEndReport, Lattice, VerificationReport,
    DERIVATIVE_RESIDUAL_TOL,
};
use crate::hartree::{hartree_evolve, MASS_DRIFT_LIMIT};
use crate::kernel::SYMMETRY_DRIFT_TOL;
use crate::pair::{picard_solve, SERIES_TAIL_TOL};
use crate::par;
use crate::reduction::{diagnostics, DiagnosticsSeries};

/// Columns of `run.csv`, in order.
pub const CSV_COLUMNS: [&str; 14] = [
    "t",
    "mass",
    "energy",
    "k_norm",
    "chi0",
    "chi1",
    "trace_d_imag",
    "residual",
    "astar_norm",
    "f",
    "g",
    "bound",
    "lhs",
    "derivative_residual",
];

/// Tolerance of the algebra suite run by [`run_verification`].
pub const VERIFY_TOL: f64 = 1e-12;

/// Particle cutoff for [`run_verification`]. Deviations are absolute and
/// grow with the operator norms, so the suite runs at a fixed small cutoff.
pub const VERIFY_N_MAX: usize = 6;

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Hartree,
    PairK,
    Diagnose,
    Errors,
    EndToEnd,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Hartree => "hartree",
            Stage::PairK => "pairk",
            Stage::Diagnose => "diagnose",
            Stage::Errors => "errors",
            Stage::EndToEnd => "endtoend",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HartreeSummary {
    pub n_steps: usize,
    pub mass_drift: f64,
    pub energy_drift: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PicardSummary {
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
    /// Successive ratios of `history`.
    pub contraction: Vec<f64>,
    pub sup_k: f64,
    pub n_norm: f64,
    pub sup_m: f64,
}

/// `f`, `g` and the bound on the nodes `0, stride, 2·stride, …`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ErrorSeries {
    pub stride: usize,
    pub nodes: Vec<usize>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub bound: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Failure {
    pub stage: Stage,
    pub message: String,
}

/// Everything a run produced. Stages after a failure are absent.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    /// Last stage requested.
    pub target: Stage,
    pub t: Vec<f64>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    pub hartree: Option<HartreeSummary>,
    pub picard: Option<PicardSummary>,
    pub k_norm: Vec<f64>,
    pub diagnostics: Option<DiagnosticsSeries>,
    pub errors: Option<ErrorSeries>,
    pub end_to_end: Option<EndToEndReport>,
    pub failure: Option<Failure>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunReport {
    fn new(config: &RunConfig, target: Stage) -> Self {
        RunReport {
            config: config.clone(),
            target,
            t: Vec::new(),
            mass: Vec::new(),
            energy: Vec::new(),
            hartree: None,
            picard: None,
            k_norm: Vec::new(),
            diagnostics: None,
            errors: None,
            end_to_end: None,
            failure: None,
            wall_time_s: 0.0,
        }
    }

    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

/// Run every stage up to `target`. A failing stage stops the run; the
/// report keeps what finished and the error names the stage.
pub fn run_stages(config: &RunConfig, target: Stage) -> (RunReport, Option<Error>) {
    let start = Instant::now();
    let mut report = RunReport::new(config, target);
    let result = drive(config, target, &mut report);
    report.wall_time_s = start.elapsed().as_secs_f64();
    match result {
        Ok(()) => (report, None),
        Err((stage, e)) => {
            let e = e.in_stage(stage.name());
            report.failure = Some(Failure { stage, message: e.to_string() });
            (report, Some(e))
        }
    }
}

/// Full run. The Fock-space stage runs only with an `[oracle]` table.
pub fn run_pipeline(config: &RunConfig) -> Result<RunReport> {
    let target = if config.oracle.is_some() {
        Stage::EndToEnd
    } else if config.errors.enabled {
        Stage::Errors
    } else {
        Stage::Diagnose
    };
    match run_stages(config, target) {
        (r, None) => Ok(r),
        (_, Some(e)) => Err(e),
    }
}

fn drive(config: &RunConfig, target: Stage, report: &mut RunReport) -> std::result::Result<(), (Stage, Error)> {
    let at = |s: Stage| move |e: Error| (s, e);
    config.validate().map_err(at(Stage::Hartree))?;
    let (grid, v) = config.domain().map_err(at(Stage::Hartree))?;
    let n = config.n_particles;

    let phi0 = config.initial_datum(&grid).map_err(at(Stage::Hartree))?;
    let steps = config.time.n_steps().map_err(at(Stage::Hartree))?;
    let h = hartree_evolve(&phi0, &v, config.time.dt, steps).map_err(at(Stage::Hartree))?;
    report.t = (0..h.time.len()).map(|j| h.time.t(j)).collect();
    report.mass = h.mass_log.clone();
    report.energy = h.energy_log.clone();
    report.hartree =
        Some(HartreeSummary { n_steps: steps, mass_drift: h.max_mass_drift(), energy_drift: h.max_energy_drift() });
    if target == Stage::Hartree {
        return Ok(());
    }

    let (traj, gm) = picard_solve(&h, &v, &config.picard).map_err(at(Stage::PairK))?;
    let hist = &traj.residual_history;
    report.picard = Some(PicardSummary {
        iterations: traj.iterate_index,
        converged: traj.converged,
        history: hist.clone(),
        contraction: hist.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect(),
        sup_k: traj.sup_k(),
        n_norm: traj.n_norm(),
        sup_m: gm.m.iter().map(|m| m.l2_norm()).fold(0.0, f64::max),
    });
    report.k_norm = traj.nodes.iter().map(|x| x.k.l2_norm()).collect();
    if target == Stage::PairK {
        return Ok(());
    }

    let mut diag = diagnostics(&h, &traj, &gm, &v, n).map_err(at(Stage::Diagnose))?;
    if target == Stage::Diagnose {
        report.diagnostics = Some(diag);
        return Ok(());
    }

    let stride = config.errors.stride;
    if !config.errors.enabled {
        report.diagnostics = Some(diag);
        return Err((Stage::Errors, Error::Config("errors stage is disabled in the config".into())));
    }
    let nodes: Vec<usize> = (0..traj.nodes.len()).step_by(stride).collect();
    let fg = par::try_map(nodes.len(), |i| {
        let j = nodes[i];
        let f = f_error(&traj.nodes[j], &h.phi[j], &v)?.0;
        let g = g_error(&traj.nodes[j], &h.phi[j], &v)?.0;
        Ok::<_, Error>((f, g))
    });
    let fg = match fg {
        Ok(x) => x,
        Err(e) => {
            report.diagnostics = Some(diag);
            return Err((Stage::Errors, e));
        }
    };
    let (f, g): (Vec<f64>, Vec<f64>) = fg.into_iter().unzip();
    let bound = error_bound(&f, &g, config.time.dt * stride as f64, n).map_err(at(Stage::Errors))?;
    if stride == 1 {
        diag.f_err = f.clone();
        diag.g_err = g.clone();
    }
    report.errors = Some(ErrorSeries { stride, nodes, f, g, bound });
    report.diagnostics = Some(diag);
    if target == Stage::Errors {
        return Ok(());
    }

    let Some(oracle) = &config.oracle else {
        return Err((Stage::EndToEnd, Error::Config("end-to-end check needs an [oracle] table".into())));
    };
    let lattice = Lattice::new(&grid, &v).map_err(at(Stage::EndToEnd))?;
    let opts = EndToEndOptions { n_particles: n, n_max: oracle.n_max, stride: oracle.stride };
    let diag = report.diagnostics.as_ref().expect("diagnostics ran");
    let e2e = end_to_end_check(&lattice, &h, &traj, &gm, diag, &opts).map_err(at(Stage::EndToEnd))?;
    let worst = e2e.max_derivative_residual();
    report.end_to_end = Some(e2e);
    if worst > DERIVATIVE_RESIDUAL_TOL {
        return Err((
            Stage::EndToEnd,
            Error::Verification {
                identity: "derivative identity".into(),
                deviation: worst,
                tolerance: DERIVATIVE_RESIDUAL_TOL,
            },
        ));
    }
    Ok(())
}

/// Run the operator-algebra suite on the lattice of `config`.
pub fn run_verification(config: &RunConfig) -> Result<VerificationReport> {
    config.validate()?;
    let modes = config.grid.points.pow(config.grid.dim as u32);
    verify_algebra(modes, VERIFY_N_MAX, config.seed, VERIFY_TOL)
}

fn cell(out: &mut String, x: Option<f64>) {
    out.push(',');
    if let Some(x) = x {
        let _ = write!(out, "{x:e}");
    }
}

/// `run.csv` contents. Floats use the shortest round-trip form.
pub fn render_csv(report: &RunReport) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    let d = report.diagnostics.as_ref();
    let e = report.errors.as_ref();
    let o = report.end_to_end.as_ref();
    for j in 0..report.t.len() {
        let _ = write!(out, "{:e}", report.t[j]);
        let at = |v: &[f64]| v.get(j).copied();
        cell(&mut out, at(&report.mass));
        cell(&mut out, at(&report.energy));
        cell(&mut out, at(&report.k_norm));
        cell(&mut out, d.and_then(|d| at(&d.chi0)));
        cell(&mut out, d.and_then(|d| at(&d.chi1)));
        cell(&mut out, d.and_then(|d| at(&d.trace_d_imag)));
        cell(&mut out, d.and_then(|d| at(&d.residual)));
        cell(&mut out, d.and_then(|d| at(&d.astar_coeff_norm)));
        let ei = e.and_then(|e| e.nodes.binary_search(&j).ok());
        cell(&mut out, e.zip(ei).map(|(e, i)| e.f[i]));
        cell(&mut out, e.zip(ei).map(|(e, i)| e.g[i]));
        cell(&mut out, e.zip(ei).map(|(e, i)| e.bound[i]));
        let oi = o.and_then(|o| o.nodes.binary_search(&j).ok());
        cell(&mut out, o.zip(oi).map(|(o, i)| o.lhs[i]));
        cell(&mut out, o.zip(oi).map(|(o, i)| o.derivative_residual[i]).filter(|x| x.is_finite()));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Tolerances {
    picard_tol: f64,
    picard_max_iter: usize,
    series_tail: f64,
    symmetry_drift: f64,
    mass_drift_limit: f64,
    fock_tail_threshold: f64,
}

#[derive(Serialize)]
struct Calibration {
    lattice: String,
    constants: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct EndToEndSummary {
    max_derivative_residual: f64,
    max_lhs_over_bound: f64,
    min_margin: f64,
    max_trace_imag_rel: f64,
    tail_max: f64,
    inequality_holds: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    status: &'static str,
    failure: Option<&'a Failure>,
    target: Stage,
    nodes: usize,
    hartree: Option<&'a HartreeSummary>,
    picard: Option<&'a PicardSummary>,
    max_residual: Option<f64>,
    max_astar_norm: Option<f64>,
    max_trace_d_imag: Option<f64>,
    final_bound: Option<f64>,
    end_to_end: Option<EndToEndSummary>,
    tolerances: Tolerances,
    calibration: Calibration,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// `summary.json` contents.
pub fn render_summary(report: &RunReport) -> Result<String> {
    let d = report.diagnostics.as_ref();
    let lattice =
        crate::error_norms::parse_calibration(CALIBRATION_FILE)?.first().map(|e| e.lattice.clone()).unwrap_or_default();
    let s = Summary {
        status: if report.ok() { "ok" } else { "failed" },
        failure: report.failure.as_ref(),
        target: report.target,
        nodes: report.t.len(),
        hartree: report.hartree.as_ref(),
        picard: report.picard.as_ref(),
        max_residual: d.map(|d| max_of(&d.residual)),
        max_astar_norm: d.map(|d| max_of(&d.astar_coeff_norm)),
        max_trace_d_imag: d.map(|d| max_of(&d.trace_d_imag)),
        final_bound: report.errors.as_ref().and_then(|e| e.bound.last().copied()),
        end_to_end: report.end_to_end.as_ref().map(|o| EndToEndSummary {
            max_derivative_residual: o.max_derivative_residual(),
            max_lhs_over_bound: o
                .lhs
                .iter()
                .zip(&o.bound)
                .filter(|(_, b)| **b > 0.0)
                .map(|(l, b)| l / b)
                .fold(0.0, f64::max),
            min_margin: o.margin.iter().cloned().fold(f64::INFINITY, f64::min),
            max_trace_imag_rel: max_of(&o.trace_imag_rel),
            tail_max: o.tail_max,
            inequality_holds: o.inequality_holds(0.0),
        }),
        tolerances: Tolerances {
            picard_tol: report.config.picard.tol,
            picard_max_iter: report.config.picard.max_iter,
            series_tail: SERIES_TAIL_TOL,
            symmetry_drift: SYMMETRY_DRIFT_TOL,
            mass_drift_limit: MASS_DRIFT_LIMIT,
            fock_tail_threshold: crate::fock::TAIL_THRESHOLD,
        },
        calibration: Calibration { lattice, constants: compiled_constants() },
    };
    let mut text = serde_json::to_string_pretty(&s).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Write the output files into `dir`, creating it if needed.
pub fn emit_outputs(report: &RunReport, dir: &Path) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join("run.csv"), render_csv(report)).map_err(io)?;
    fs::write(dir.join("summary.json"), render_summary(report)?).map_err(io)?;
    fs::write(dir.join("constants.calib"), CALIBRATION_FILE).map_err(io)?;
    fs::write(dir.join("config.echo"), report.config.to_toml()?).map_err(io)?;
    fs::write(dir.join("timing.json"), format!("{{\"wall_time_s\": {}}}\n", report.wall_time_s)).map_err(io)?;
    Ok(())
}

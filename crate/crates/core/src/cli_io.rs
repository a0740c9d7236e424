//! Command-line surface: configuration parsing, experiment dispatch and
//! byte-deterministic CSV/JSON outputs.
//!
//! Every CSV ends with a `# config_hash=<sha256>` trailer; a run that stops
//! early also gets a `# FAILED ...` marker line before the trailer. Numbers
//! are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::convolution::KernelTable;
use crate::diagnostics::{
    classify_threshold, e_field, entropy_bound, fit_decay_rate, small_data_report,
    DiagnosticsRecord, CK_TOLERANCE,
};
use crate::scenarios::{
    compare_models, convergence_sweep, Comparison, Preset, ResolvedScenario, ScenarioError,
    ScenarioSpec, SweepConfig, SweepResult,
};
use crate::stepper::{CflMode, RunFailure, RunOutput, SimState, StepError, Variant};

pub const TIMESERIES_HEADER: &str =
    "t,mass,momentum,energy,v2,amplitude,e_min,e_max,rho_min,rho_phi_min,entropy_H,l1_dev,dxu_max";
pub const SNAPSHOTS_HEADER: &str = "t,x,rho,w,u,e";
pub const CONVERGENCE_HEADER: &str = "level,h,k,E0,E1";
pub const COMPARISON_HEADER: &str = "t,a,b,u_sup,u_l2,u_rel_sup,rho_l2";
pub const SMALL_FLOCK_HEADER: &str = "t,variant,mean_abs_u,centroid_shift";
pub const LOCK_FILE: &str = ".flocklab.lock";

#[derive(Parser, Debug)]
#[command(
    name = "flocklab",
    version,
    about = "Finite-element experiments for Euler alignment flocking models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Run one variant and write its time series and snapshots.
    Simulate(CommandArgs),
    /// Run several variants side by side and write difference metrics.
    Compare(CommandArgs),
    /// Run the manufactured-solution refinement sweep.
    Converge(CommandArgs),
    /// Evaluate the threshold, small-data and entropy-bound diagnostics on
    /// the initial state.
    Check(CommandArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommandArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the configuration.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::Simulate(_) => CommandKind::Simulate,
            Command::Compare(_) => CommandKind::Compare,
            Command::Converge(_) => CommandKind::Converge,
            Command::Check(_) => CommandKind::Check,
        }
    }

    pub fn args(&self) -> &CommandArgs {
        match self {
            Command::Simulate(a)
            | Command::Compare(a)
            | Command::Converge(a)
            | Command::Check(a) => a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Simulate,
    Compare,
    Converge,
    Check,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Cfl(String),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Cfl(_) => 4,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Step(s @ StepError::CflViolation { .. }) => CliError::Cfl(s.to_string()),
            ScenarioError::Step(StepError::InvalidConfig(msg)) => CliError::Config(msg),
            ScenarioError::Step(s) => CliError::Runtime(s.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Configuration file layout.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    command: Option<CommandKind>,
    scenario: ScenarioSpec,
    output_dir: Option<PathBuf>,
}

/// Fully resolved and validated run configuration.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub scenario: ResolvedScenario,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// SHA-256 of the canonical JSON of the resolved configuration. The
    /// output directory is excluded so relocated runs hash identically.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Read, resolve and validate a configuration for `command`.
pub fn parse_config(
    path: &Path,
    command: CommandKind,
    output_dir: Option<&Path>,
) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let file: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(c) = file.command {
        if c != command {
            return Err(CliError::Config(format!(
                "configuration is for `{}` but `{}` was requested",
                kind_name(c),
                kind_name(command)
            )));
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let scenario = file.scenario.resolve(base)?;
    if command == CommandKind::Converge && scenario.preset != Preset::Manufactured {
        return Err(CliError::Config(
            "`converge` needs the manufactured preset".into(),
        ));
    }
    let limit = scenario.cfl_ratio_max * scenario.h();
    if command != CommandKind::Converge
        && scenario.cfl_mode == CflMode::Strict
        && scenario.k > limit
    {
        return Err(CliError::Cfl(
            StepError::CflViolation {
                k: scenario.k,
                ratio: scenario.cfl_ratio_max,
                limit,
            }
            .to_string(),
        ));
    }
    let output_dir = match (output_dir, file.output_dir) {
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(dir)) if dir.is_relative() => base.join(dir),
        (None, Some(dir)) => dir,
        (None, None) => base.join("output"),
    };
    Ok(RunConfig {
        command,
        scenario,
        output_dir,
    })
}

fn kind_name(c: CommandKind) -> &'static str {
    match c {
        CommandKind::Simulate => "simulate",
        CommandKind::Compare => "compare",
        CommandKind::Converge => "converge",
        CommandKind::Check => "check",
    }
}

/// Exclusive claim on an output directory, released on drop.
struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Runtime(format!(
                "output directory {} is in use by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(io_error(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV text with the failure marker and hash trailer appended.
fn finish_csv(mut body: String, failure: Option<String>, hash: &str) -> String {
    if let Some(f) = failure {
        let _ = writeln!(body, "# FAILED {f}");
    }
    let _ = writeln!(body, "# config_hash={hash}");
    body
}

fn failure_text(f: &RunFailure) -> String {
    format!("step={} t={} error={}", f.step, num(f.t), f.error)
}

pub fn timeseries_csv(
    records: &[DiagnosticsRecord],
    failure: Option<&RunFailure>,
    hash: &str,
) -> String {
    let mut s = format!("{TIMESERIES_HEADER}\n");
    for r in records {
        let entropy = r.entropy_h.map(num).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            num(r.t),
            num(r.mass),
            num(r.momentum),
            num(r.energy),
            num(r.v2),
            num(r.amplitude),
            num(r.e_min),
            num(r.e_max),
            num(r.rho_min),
            num(r.rho_phi_min),
            entropy,
            num(r.l1_dev),
            num(r.dxu_max)
        );
    }
    finish_csv(s, failure.map(failure_text), hash)
}

pub fn snapshots_csv(
    snapshots: &[SimState<f64>],
    table: &KernelTable<f64>,
    failure: Option<&RunFailure>,
    hash: &str,
) -> String {
    let mut s = format!("{SNAPSHOTS_HEADER}\n");
    for state in snapshots {
        let e = e_field(state, table);
        let (rho, w, u) = (
            state.rho.at_samples(),
            state.w.at_samples(),
            state.u.at_samples(),
        );
        let t = num(state.t);
        for i in 0..e.x.len() {
            let _ = writeln!(
                s,
                "{t},{},{},{},{},{}",
                num(e.x[i]),
                num(rho[i]),
                num(w[i]),
                num(u[i]),
                num(e.values[i])
            );
        }
    }
    finish_csv(s, failure.map(failure_text), hash)
}

pub fn convergence_csv(result: &SweepResult, hash: &str) -> String {
    let mut s = format!("{CONVERGENCE_HEADER}\n");
    let mut failures = Vec::new();
    for r in &result.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.level,
            num(r.h),
            num(r.k),
            num(r.e0),
            num(r.e1)
        );
        if let Some(f) = &r.failure {
            failures.push(format!("level={} error={f}", r.level));
        }
    }
    finish_csv(s, (!failures.is_empty()).then(|| failures.join("; ")), hash)
}

fn comparison_csvs(cmp: &Comparison<f64>, hash: &str) -> (String, String) {
    let mut d = format!("{COMPARISON_HEADER}\n");
    for p in &cmp.diffs {
        let _ = writeln!(
            d,
            "{},{},{},{},{},{},{}",
            num(p.t),
            p.a,
            p.b,
            num(p.u_sup),
            num(p.u_l2),
            num(p.u_rel_sup),
            num(p.rho_l2)
        );
    }
    let mut f = format!("{SMALL_FLOCK_HEADER}\n");
    for m in &cmp.small_flock {
        let _ = writeln!(
            f,
            "{},{},{},{}",
            num(m.t),
            m.variant,
            num(m.mean_abs_u),
            num(m.centroid_shift)
        );
    }
    let failed: Vec<String> = cmp
        .runs
        .iter()
        .filter_map(|r| {
            r.output
                .failure
                .as_ref()
                .map(|f| format!("{} {}", r.variant, failure_text(f)))
        })
        .collect();
    let marker = (!failed.is_empty()).then(|| failed.join("; "));
    (
        finish_csv(d, marker.clone(), hash),
        finish_csv(f, marker, hash),
    )
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
    Ok(path)
}

fn kernel_meta(table: &KernelTable<f64>) -> serde_json::Value {
    let c = table.constants();
    json!({
        "name": table.spec().to_string(),
        "Phi_h": table.integral(),
        "Phi_h_num_elements": table.mesh().num_elements(),
        "c1": c.c1,
        "sup": c.sup,
        "l1": c.l1,
        "lipschitz": c.lipschitz,
    })
}

fn design_meta(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "time_stepping": "semi_implicit_backward_euler",
        "forcing_time_level": "new",
        "cfl_mode": cfg.scenario.cfl_mode,
        "initial_bump": "exp(-1/(1-(10(x-c))^2))",
        "motsch_tadmor_weight": "p3_nodal_interpolant_of_inverse_rho_phi",
        "s_model_initial_weight": cfg.scenario.weight_init,
        "closed_form_forcing_requires_constant_kernel": true,
        "small_data_velocity_norm": "sup",
        "ck_tolerance": CK_TOLERANCE,
        "nodal_file_u": "p3_values_interpolated_to_p2_nodes",
    })
}

fn run_meta(
    cfg: &RunConfig,
    hash: &str,
    kernel: serde_json::Value,
    status: &str,
    extra: serde_json::Value,
) -> String {
    let meta = json!({
        "command": cfg.command,
        "config_hash": hash,
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": cfg.scenario,
        "step_count": cfg.scenario.step_count(),
        "kernel": kernel,
        "design": design_meta(cfg),
        "status": status,
        "results": extra,
    });
    let mut s = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    s.push('\n');
    s
}

fn failure_meta(f: Option<&RunFailure>) -> serde_json::Value {
    f.map_or(
        serde_json::Value::Null,
        |f| json!({ "step": f.step, "t": f.t, "error": f.error.to_string() }),
    )
}

fn run_summary(out: &RunOutput<f64>, table: &KernelTable<f64>, w_minus: f64) -> serde_json::Value {
    let series: Vec<(f64, f64)> = out.records.iter().map(|r| (r.t, r.amplitude)).collect();
    let window = (0.0, series.last().map_or(0.0, |s| s.0));
    let mass = out.records.first().map_or(0.0, |r| r.mass);
    let fit = fit_decay_rate(&series, window, w_minus, mass, table.constants().c1).ok();
    json!({
        "records": out.records.len(),
        "initial": out.records.first(),
        "final": out.records.last(),
        "decay_fit": fit,
        "failure": failure_meta(out.failure.as_ref()),
    })
}

/// Outcome of a command: files written and a short human-readable summary.
#[derive(Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

/// Run a resolved configuration, writing its outputs.
///
/// A run that stops early still writes everything it produced and then
/// returns [`CliError::Runtime`].
pub fn execute(cfg: &RunConfig) -> Result<Report, CliError> {
    let dir = cfg.output_dir.clone();
    let _lock = OutputLock::acquire(&dir)?;
    let hash = cfg.hash();
    let sc = &cfg.scenario;
    let mut report = Report::default();
    match cfg.command {
        CommandKind::Simulate => {
            let table = sc.build_kernel::<f64>()?;
            let (stepper, initial) = sc.prepare(sc.variant, &table)?;
            let w_minus = initial.w.range().0;
            let out = stepper
                .run(initial, sc.sample_every)
                .map_err(ScenarioError::from)?;
            let failure = out.failure.as_ref();
            report.files.push(write_file(
                &dir,
                "timeseries.csv",
                &timeseries_csv(&out.records, failure, &hash),
            )?);
            report.files.push(write_file(
                &dir,
                "snapshots.csv",
                &snapshots_csv(&out.snapshots, &table, failure, &hash),
            )?);
            let status = if failure.is_some() { "failed" } else { "ok" };
            let meta = run_meta(
                cfg,
                &hash,
                kernel_meta(&table),
                status,
                run_summary(&out, &table, w_minus),
            );
            report.files.push(write_file(&dir, "run_meta.json", &meta)?);
            if let (Some(a), Some(b)) = (out.records.first(), out.records.last()) {
                report.summary.push(format!(
                    "{}: {} records to t = {}, amplitude {:.6e} -> {:.6e}",
                    sc.variant,
                    out.records.len(),
                    b.t,
                    a.amplitude,
                    b.amplitude
                ));
            }
            if let Some(f) = failure {
                return Err(CliError::Runtime(failure_text(f)));
            }
        }
        CommandKind::Compare => {
            let table = sc.build_kernel::<f64>()?;
            let cmp = compare_models(sc, &table)?;
            let mut runs = serde_json::Map::new();
            for run in &cmp.runs {
                let failure = run.output.failure.as_ref();
                let v = run.variant;
                report.files.push(write_file(
                    &dir,
                    &format!("timeseries_{v}.csv"),
                    &timeseries_csv(&run.output.records, failure, &hash),
                )?);
                report.files.push(write_file(
                    &dir,
                    &format!("snapshots_{v}.csv"),
                    &snapshots_csv(&run.output.snapshots, &table, failure, &hash),
                )?);
                let w_minus = run.output.snapshots.first().map_or(1.0, |s| s.w.range().0);
                runs.insert(v.to_string(), run_summary(&run.output, &table, w_minus));
            }
            let (diffs, flock) = comparison_csvs(&cmp, &hash);
            report
                .files
                .push(write_file(&dir, "comparison.csv", &diffs)?);
            report
                .files
                .push(write_file(&dir, "small_flock.csv", &flock)?);
            let max_rel = |a: Variant, b: Variant| {
                cmp.diffs
                    .iter()
                    .filter(|d| (d.a, d.b) == (a, b) || (d.a, d.b) == (b, a))
                    .map(|d| d.u_rel_sup)
                    .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
            };
            let failed = cmp.runs.iter().any(|r| r.output.failure.is_some());
            let extra = json!({
                "runs": runs,
                "max_u_rel_sup_s_model_vs_motsch_tadmor": max_rel(Variant::SModel, Variant::MotschTadmor),
                "max_u_rel_sup_cucker_smale_vs_s_model": max_rel(Variant::CuckerSmale, Variant::SModel),
            });
            let meta = run_meta(
                cfg,
                &hash,
                kernel_meta(&table),
                if failed { "failed" } else { "ok" },
                extra,
            );
            report.files.push(write_file(&dir, "run_meta.json", &meta)?);
            for m in cmp
                .small_flock
                .iter()
                .filter(|m| (m.t - sc.final_time).abs() < 1e-9)
            {
                report.summary.push(format!(
                    "{}: small-flock mean |u| at T = {:.6e}, centroid shift {:.6e}",
                    m.variant, m.mean_abs_u, m.centroid_shift
                ));
            }
            if failed {
                return Err(CliError::Runtime(
                    "at least one variant stopped early".into(),
                ));
            }
        }
        CommandKind::Converge => {
            let sweep = SweepConfig {
                levels: sc.levels,
                final_time: sc.final_time,
                cfl_ratio: sc.cfl_ratio_max,
                kernel: sc.kernel_spec()?,
                forcing: sc.forcing.expect("manufactured preset always has forcing"),
                quad_order: sc.quad_order,
            };
            let result = convergence_sweep::<f64>(&sweep)?;
            report.files.push(write_file(
                &dir,
                "convergence.csv",
                &convergence_csv(&result, &hash),
            )?);
            let table = sc.build_kernel::<f64>()?;
            let failed = result.rows.iter().any(|r| r.failure.is_some());
            let extra = json!({
                "rows": result.rows,
                "slope_E0": result.slope_e0,
                "slope_E1": result.slope_e1,
            });
            let meta = run_meta(
                cfg,
                &hash,
                kernel_meta(&table),
                if failed { "failed" } else { "ok" },
                extra,
            );
            report.files.push(write_file(&dir, "run_meta.json", &meta)?);
            report.summary.push(format!(
                "slopes: E0 {:.4}, E1 {:.4} over {} levels",
                result.slope_e0,
                result.slope_e1,
                result.rows.len()
            ));
            if failed {
                return Err(CliError::Runtime("a refinement level stopped early".into()));
            }
        }
        CommandKind::Check => {
            let table = sc.build_kernel::<f64>()?;
            let initial = sc.initial_state(sc.variant, &table)?;
            let threshold = classify_threshold(&initial, &table);
            let small = small_data_report(&initial, &table);
            let bound = entropy_bound(&initial, &table, sc.entropy_c);
            let bound_json = match &bound {
                Ok(b) => json!(b),
                Err(e) => json!({ "error": e.to_string() }),
            };
            let check = json!({
                "variant": sc.variant,
                "threshold": threshold,
                "small_data": small,
                "entropy_bound": bound_json,
            });
            let mut text = serde_json::to_string_pretty(&check).expect("check report serializes");
            text.push('\n');
            report.files.push(write_file(&dir, "check.json", &text)?);
            let meta = run_meta(cfg, &hash, kernel_meta(&table), "ok", check);
            report.files.push(write_file(&dir, "run_meta.json", &meta)?);
            report.summary.push(format!(
                "threshold: e0_min = {:.6e} -> {:?}; small data satisfied: {}",
                threshold.e0_min, threshold.verdict, small.satisfied
            ));
        }
    }
    Ok(report)
}

/// Parse, execute and report; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let args = cli.command.args();
    let result = parse_config(&args.config, cli.command.kind(), args.output_dir.as_deref())
        .and_then(|cfg| {
            let report = execute(&cfg);
            if let Ok(r) = &report {
                for line in &r.summary {
                    println!("{line}");
                }
                for f in &r.files {
                    println!("wrote {}", f.display());
                }
            }
            report
        });
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

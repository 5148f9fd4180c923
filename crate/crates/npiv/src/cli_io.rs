//! Command-line entry point: configuration files, run persistence and
//! plot-data emission.
//!
//! Every run resolves its configuration (file values overridden by CLI
//! flags, defaults materialized), writes a `manifest.toml` echoing the
//! resolved configuration and the artifact version, and emits byte-stable
//! CSV/JSON outputs (floats in shortest round-trip form, fixed row order).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{NpivError, Result};
use crate::experiments::{
    run_confounding_demo, run_minnorm_study, run_rate_study, run_saturation_study,
    write_minnorm_csv, write_rates_csv, write_saturation_csv, DemoConfig, MinnormStudyConfig,
    RateStudyConfig, SaturationStudyConfig,
};
use crate::filters::{log_grid, verify_filter_conditions, FilterSpec};
use crate::instance_io::read_instance_file;
use crate::kernels::{KernelSpec, MaternOrder, Point};
use crate::oracle::DiscreteInstance;
use crate::rates::{exponent_and_schedule, lower_bound_exponent, RateParams};
use crate::scenarios::{
    identity_polydecay_instance, reference_instance, sample_discrete, saturation_instance,
    continuous_demo, ContinuousDemoParams,
};
use crate::stage1::fit_stage1;
use crate::stage2::fit_npiv;

pub const OUTPUT_DIR_ENV: &str = "NPIV_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "npiv", version, about = "Kernel NPIV with spectral regularization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the two-stage estimator on a dataset file and write predictions.
    Fit(RunArgs),
    /// Sample datasets from the configured scenario and write them to CSV.
    Simulate(RunArgs),
    /// Convergence-rate study against the theoretical exponent.
    Rates(RunArgs),
    /// Minimum-norm convergence study on a non-identified instance.
    Minnorm(RunArgs),
    /// Stage-1 saturation study across filters.
    Saturation(RunArgs),
    /// Verify the two filter-definition conditions on grids.
    FiltersCheck(FiltersCheckArgs),
    /// Print the schedule/exponent table for the configured parameters.
    Theory(TheoryArgs),
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the experiment seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the replicate count.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Override the output directory (also honors NPIV_OUTPUT_DIR).
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct FiltersCheckArgs {
    /// Optional TOML configuration file with a [filters_check] section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct TheoryArgs {
    /// TOML configuration file with a [schedule] section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beta_x: Option<f64>,
    #[arg(long)]
    pub p_x: Option<f64>,
    #[arg(long)]
    pub gamma0: Option<f64>,
    #[arg(long)]
    pub gamma1: Option<f64>,
    #[arg(long)]
    pub c_f: Option<u8>,
    #[arg(long)]
    pub beta_z: Option<f64>,
    #[arg(long)]
    pub p_z: Option<f64>,
    #[arg(long)]
    pub alpha_z: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

// ---------------------------------------------------------------------------
// Configuration file schema.

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<ScenarioConfig>,
    pub kernels: Option<KernelsConfig>,
    pub filter: Option<FilterSpec>,
    pub schedule: Option<ScheduleConfig>,
    pub experiment: Option<ExperimentConfig>,
    pub fit: Option<FitConfig>,
    pub filters_check: Option<FiltersCheckConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// "discrete" or "continuous_demo".
    pub kind: String,
    /// Instance file path (discrete), exclusive with `builtin`.
    pub instance: Option<PathBuf>,
    /// "reference", "identity_polydecay" or "saturation".
    pub builtin: Option<String>,
    pub d: Option<usize>,
    pub p_x: Option<f64>,
    pub h0_decay: Option<f64>,
    pub sigma: Option<f64>,
    pub p_z: Option<f64>,
    pub beta_z: Option<f64>,
    pub confounding_strength: Option<f64>,
    pub m: Option<usize>,
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsConfig {
    pub z: KernelConfig,
    pub x: KernelConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// gaussian | laplace | matern12 | matern32 | matern52 | linear |
    /// precomputed_identity
    pub family: String,
    pub lengthscale: Option<f64>,
    pub kappa_sq: Option<f64>,
    pub size: Option<usize>,
}

impl KernelConfig {
    pub fn build(&self) -> Result<KernelSpec> {
        let ls = || {
            self.lengthscale.ok_or_else(|| {
                NpivError::InvalidInput(format!("kernel '{}' needs a lengthscale", self.family))
            })
        };
        match self.family.as_str() {
            "gaussian" => KernelSpec::gaussian(ls()?),
            "laplace" => KernelSpec::laplace(ls()?),
            "matern12" => KernelSpec::matern(MaternOrder::Half, ls()?),
            "matern32" => KernelSpec::matern(MaternOrder::ThreeHalves, ls()?),
            "matern52" => KernelSpec::matern(MaternOrder::FiveHalves, ls()?),
            "linear" => KernelSpec::linear(self.kappa_sq.unwrap_or(1.0)),
            "precomputed_identity" => KernelSpec::precomputed_identity(self.size.unwrap_or(0)),
            other => Err(NpivError::InvalidInput(format!(
                "unknown kernel family '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub a: f64,
    pub c_xi: f64,
    pub c_lambda: f64,
    pub beta_x: f64,
    pub p_x: f64,
    pub beta_z: f64,
    pub p_z: f64,
    pub alpha_z: f64,
    /// Computed from the instance when absent.
    pub gamma0: Option<f64>,
    pub gamma1: Option<f64>,
    pub c_f: Option<u8>,
    pub gamma: f64,
    /// Minimum-norm study schedule: `xi = c_xi * m^(-xi_exponent)`,
    /// `lambda = c_lambda * n^(-lambda_exponent)`.
    pub xi_exponent: f64,
    pub lambda_exponent: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            a: 2.0,
            c_xi: 1.0,
            c_lambda: 1.0,
            beta_x: 1.0,
            p_x: 1.0,
            beta_z: 1.0,
            p_z: 1.0,
            alpha_z: 1.0,
            gamma0: None,
            gamma1: None,
            c_f: None,
            gamma: 0.0,
            xi_exponent: 0.5,
            lambda_exponent: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub filters: Vec<FilterSpec>,
    /// Acceptance tolerances echoed into summaries.
    pub slope_tol: f64,
    pub saturation_slack: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_grid: vec![128, 256, 512, 1024, 2048, 4096],
            m_grid: vec![256, 512, 1024, 2048, 4096, 8192],
            sizes: vec![500, 2000, 8000],
            replicates: 20,
            seed: 0,
            output_dir: None,
            filters: vec![
                FilterSpec::Tikhonov,
                FilterSpec::IteratedTikhonov { nu: 3 },
                FilterSpec::Pcr,
            ],
            slope_tol: 0.25,
            saturation_slack: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub dataset: PathBuf,
    pub xi: f64,
    pub lambda: f64,
    /// Prediction grid [lo, hi, count]; defaults to the span of the observed
    /// X values with 200 points.
    pub grid: Option<(f64, f64, usize)>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            dataset: PathBuf::from("dataset.csv"),
            xi: 0.02,
            lambda: 0.003,
            grid: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiltersCheckConfig {
    pub xi_lo: f64,
    pub xi_hi: f64,
    pub xi_count: usize,
    pub x_grid: usize,
    pub theta_grid: usize,
    pub kappa_sq: f64,
}

impl Default for FiltersCheckConfig {
    fn default() -> Self {
        FiltersCheckConfig {
            xi_lo: 1e-4,
            xi_hi: 1.0,
            xi_count: 13,
            x_grid: 200,
            theta_grid: 50,
            kappa_sq: 1.0,
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| NpivError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| NpivError::Parse {
        path: path.display().to_string(),
        line: e.span().map(|s| text[..s.start].lines().count()).unwrap_or(0),
        msg: e.message().to_string(),
    })
}

// ---------------------------------------------------------------------------
// Scenario and manifest plumbing.

fn section<'a, T>(opt: &'a Option<T>, name: &str) -> Result<&'a T> {
    opt.as_ref().ok_or_else(|| {
        NpivError::InvalidInput(format!("config is missing the required [{name}] section"))
    })
}

fn build_instance(sc: &ScenarioConfig, config_dir: &Path) -> Result<DiscreteInstance> {
    if sc.kind != "discrete" {
        return Err(NpivError::InvalidInput(format!(
            "this subcommand needs a discrete scenario, got kind '{}'",
            sc.kind
        )));
    }
    if let Some(path) = &sc.instance {
        let resolved = if path.is_relative() {
            config_dir.join(path)
        } else {
            path.clone()
        };
        return read_instance_file(&resolved);
    }
    match sc.builtin.as_deref() {
        Some("reference") => Ok(reference_instance()),
        Some("identity_polydecay") => Ok(identity_polydecay_instance(
            sc.d.unwrap_or(48),
            sc.p_x.unwrap_or(1.0),
            sc.h0_decay.unwrap_or(0.5),
            sc.sigma.unwrap_or(0.5),
        )),
        Some("saturation") => Ok(saturation_instance(
            sc.d.unwrap_or(16),
            sc.p_z.unwrap_or(0.5),
            sc.beta_z.unwrap_or(5.0),
        )),
        Some(other) => Err(NpivError::InvalidInput(format!(
            "unknown builtin scenario '{other}'"
        ))),
        None => Err(NpivError::InvalidInput(
            "discrete scenario needs 'instance' or 'builtin'".into(),
        )),
    }
}

fn rate_params(sched: &ScheduleConfig, inst: &DiscreteInstance) -> Result<RateParams> {
    let (gamma0, gamma1, c_f) = match (sched.gamma0, sched.gamma1, sched.c_f) {
        (Some(g0), Some(g1), Some(cf)) => (g0, g1, cf),
        _ => {
            let theory = inst.link_parameters()?;
            (
                sched.gamma0.unwrap_or(theory.gamma0),
                sched.gamma1.unwrap_or(theory.gamma1),
                sched.c_f.unwrap_or(theory.c_f),
            )
        }
    };
    Ok(RateParams {
        beta_x: sched.beta_x,
        p_x: sched.p_x,
        gamma0,
        gamma1,
        c_f,
        beta_z: sched.beta_z,
        p_z: sched.p_z,
        alpha_z: sched.alpha_z,
        a: sched.a,
        gamma: sched.gamma,
    })
}

fn output_dir(args_dir: &Option<PathBuf>, cfg_dir: &Option<PathBuf>) -> PathBuf {
    args_dir
        .clone()
        .or_else(|| std::env::var(OUTPUT_DIR_ENV).ok().map(PathBuf::from))
        .or_else(|| cfg_dir.clone())
        .unwrap_or_else(|| PathBuf::from("npiv-out"))
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| NpivError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| NpivError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(path)
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact_version: &'static str,
    subcommand: &'a str,
    config: &'a RunConfig,
}

fn write_manifest(dir: &Path, subcommand: &str, config: &RunConfig) -> Result<()> {
    let manifest = Manifest {
        artifact_version: env!("CARGO_PKG_VERSION"),
        subcommand,
        config,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| NpivError::InvalidInput(format!("manifest serialization failed: {e}")))?;
    write_output(dir, "manifest.toml", &text)?;
    Ok(())
}

/// Materializes the defaults a run actually used, so the manifest plus the
/// seed reproduce every output byte-for-byte.
fn resolve_common(cfg: &mut RunConfig, args: &RunArgs) {
    let exp = cfg.experiment.get_or_insert_with(Default::default);
    if let Some(seed) = args.seed {
        exp.seed = seed;
    }
    if let Some(reps) = args.replicates {
        exp.replicates = reps;
    }
    let dir = output_dir(&args.output_dir, &exp.output_dir);
    exp.output_dir = Some(dir);
    if cfg.schedule.is_none() {
        cfg.schedule = Some(ScheduleConfig::default());
    }
}

// ---------------------------------------------------------------------------
// Dataset CSV.

fn float_or_empty(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rows of a two-split dataset file: `split,z0,x0,y`.
pub struct DatasetRows {
    pub d1: Vec<(f64, f64)>,
    pub d2: Vec<(f64, Option<f64>, f64)>,
}

pub fn write_dataset_csv(rows: &DatasetRows) -> String {
    let mut out = String::from("split,z0,x0,y\n");
    for (z, x) in &rows.d1 {
        out.push_str(&format!("1,{z},{x},\n"));
    }
    for (z, x, y) in &rows.d2 {
        out.push_str(&format!("2,{z},{},{y}\n", float_or_empty(*x)));
    }
    out
}

pub fn read_dataset_csv(path: &Path) -> Result<DatasetRows> {
    let text = fs::read_to_string(path).map_err(|e| NpivError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    let perr = |line: usize, msg: String| NpivError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "split,z0,x0,y" {
                return Err(perr(1, format!("unexpected header '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(perr(i + 1, format!("expected 4 fields, got {}", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| perr(i + 1, format!("expected a number, got '{s}'")))
        };
        match fields[0] {
            "1" => d1.push((num(fields[1])?, num(fields[2])?)),
            "2" => {
                let x = if fields[2].is_empty() {
                    None
                } else {
                    Some(num(fields[2])?)
                };
                d2.push((num(fields[1])?, x, num(fields[3])?));
            }
            other => return Err(perr(i + 1, format!("split must be 1 or 2, got '{other}'"))),
        }
    }
    Ok(DatasetRows { d1, d2 })
}

// ---------------------------------------------------------------------------
// Subcommand drivers.

#[derive(Serialize)]
struct StudySummary<'a, P: Serialize, S: Serialize, T: Serialize> {
    study: &'a str,
    params: P,
    slopes: S,
    tolerances: T,
    pass: bool,
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| NpivError::InvalidInput(format!("summary serialization failed: {e}")))
}

fn run_rates(args: &RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    resolve_common(&mut cfg, args);
    let config_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let inst = build_instance(section(&cfg.scenario, "scenario")?, &config_dir)?;
    let exp = cfg.experiment.clone().unwrap_or_default();
    let sched = cfg.schedule.clone().unwrap_or_default();
    let params = rate_params(&sched, &inst)?;
    let study_cfg = RateStudyConfig {
        params,
        filter: cfg.filter.unwrap_or(FilterSpec::Tikhonov),
        n_grid: exp.n_grid.clone(),
        replicates: exp.replicates,
        seed: exp.seed,
        c_xi: sched.c_xi,
        c_lambda: sched.c_lambda,
    };
    cfg.filter = Some(study_cfg.filter);
    let report = run_rate_study(&inst, &study_cfg)?;
    let dir = exp.output_dir.clone().unwrap();
    write_manifest(&dir, "rates", &cfg)?;
    let mut csv = Vec::new();
    write_rates_csv(&report, &mut csv).expect("in-memory write");
    write_output(&dir, "rates.csv", &String::from_utf8(csv).expect("utf8"))?;
    let violations = crate::experiments::jensen_violations(&report.rows);
    let pass = (report.fitted_slope - report.theory_slope).abs() <= exp.slope_tol
        && violations == 0;
    // Diagnostics of the instance actually used, with the scenario's
    // smoothness knobs attached as metadata.
    let instance_theory = inst.link_parameters().ok().map(|t| {
        t.with_smoothness(crate::oracle::SmoothnessParams {
            beta_x: sched.beta_x,
            p_x: sched.p_x,
            beta_z: sched.beta_z,
            p_z: sched.p_z,
            alpha_z: sched.alpha_z,
        })
    });
    let summary = StudySummary {
        study: "rates",
        params: serde_json::json!({
            "study": &study_cfg,
            "instance_theory": instance_theory,
        }),
        slopes: serde_json::json!({
            "fitted": report.fitted_slope,
            "theory": report.theory_slope,
            "standard_error": report.slope_se,
            "case": format!("{}", report.case),
            "jensen_violations": violations,
        }),
        tolerances: serde_json::json!({ "slope_tol": exp.slope_tol }),
        pass,
    };
    write_output(&dir, "summary.json", &to_json(&summary)?)?;
    println!(
        "rates: case {} fitted_slope {:.4} theory {:.4} (tol {}) pass={}",
        report.case, report.fitted_slope, report.theory_slope, exp.slope_tol, pass
    );
    Ok(())
}

fn run_minnorm(args: &RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    resolve_common(&mut cfg, args);
    let config_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let inst = build_instance(section(&cfg.scenario, "scenario")?, &config_dir)?;
    let exp = cfg.experiment.clone().unwrap_or_default();
    let sched = cfg.schedule.clone().unwrap_or_default();
    let study_cfg = MinnormStudyConfig {
        sizes: exp.sizes.clone(),
        replicates: exp.replicates,
        seed: exp.seed,
        xi_exponent: sched.xi_exponent,
        c_xi: sched.c_xi,
        lambda_exponent: sched.lambda_exponent,
        c_lambda: sched.c_lambda,
    };
    let report = run_minnorm_study(&inst, &study_cfg)?;
    let dir = exp.output_dir.clone().unwrap();
    write_manifest(&dir, "minnorm", &cfg)?;
    let mut csv = Vec::new();
    write_minnorm_csv(&report, &mut csv).expect("in-memory write");
    write_output(&dir, "minnorm.csv", &String::from_utf8(csv).expect("utf8"))?;
    let k = report.sizes.len();
    let shrunk = report.mean_to_hstar[k - 1] < 0.5 * report.mean_to_hstar[0];
    let plateau = report.mean_to_h0[k - 1] >= 0.5 * report.floor;
    let pass = shrunk && plateau;
    let summary = StudySummary {
        study: "minnorm",
        params: &study_cfg,
        slopes: serde_json::json!({
            "floor": report.floor,
            "mean_to_hstar": report.mean_to_hstar,
            "mean_to_h0": report.mean_to_h0,
        }),
        tolerances: serde_json::json!({
            "shrink_ratio": 0.5,
            "plateau_fraction_of_floor": 0.5,
        }),
        pass,
    };
    write_output(&dir, "summary.json", &to_json(&summary)?)?;
    println!(
        "minnorm: floor {:.4} err-to-h* {:.4} -> {:.4}, err-to-h0 plateau {:.4}, pass={}",
        report.floor,
        report.mean_to_hstar[0],
        report.mean_to_hstar[k - 1],
        report.mean_to_h0[k - 1],
        pass
    );
    Ok(())
}

fn run_saturation(args: &RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    resolve_common(&mut cfg, args);
    let config_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let inst = build_instance(section(&cfg.scenario, "scenario")?, &config_dir)?;
    let exp = cfg.experiment.clone().unwrap_or_default();
    let sched = cfg.schedule.clone().unwrap_or_default();
    let study_cfg = SaturationStudyConfig {
        filters: exp.filters.clone(),
        m_grid: exp.m_grid.clone(),
        replicates: exp.replicates,
        seed: exp.seed,
        beta_z: sched.beta_z,
        p_z: sched.p_z,
        c_xi: sched.c_xi,
    };
    let report = run_saturation_study(&inst, &study_cfg)?;
    let dir = exp.output_dir.clone().unwrap();
    write_manifest(&dir, "saturation", &cfg)?;
    let mut csv = Vec::new();
    write_saturation_csv(&report, &mut csv).expect("in-memory write");
    write_output(&dir, "saturation.csv", &String::from_utf8(csv).expect("utf8"))?;
    let tik_slope = report
        .slopes
        .iter()
        .find(|(name, _)| name == "tikhonov")
        .map(|(_, s)| *s)
        .ok_or_else(|| NpivError::InvalidInput("tikhonov missing from filters".into()))?;
    let pass = report
        .slopes
        .iter()
        .all(|(_, slope)| *slope >= tik_slope - exp.saturation_slack);
    let summary = StudySummary {
        study: "saturation",
        params: &study_cfg,
        slopes: serde_json::json!(report.slopes),
        tolerances: serde_json::json!({ "slack": exp.saturation_slack }),
        pass,
    };
    write_output(&dir, "summary.json", &to_json(&summary)?)?;
    println!("saturation: slopes {:?} pass={}", report.slopes, pass);
    Ok(())
}

fn run_simulate(args: &RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    resolve_common(&mut cfg, args);
    let config_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let sc = section(&cfg.scenario, "scenario")?.clone();
    let exp = cfg.experiment.clone().unwrap_or_default();
    let dir = exp.output_dir.clone().unwrap();
    let m = sc.m.unwrap_or(1000);
    let n = sc.n.unwrap_or(1000);
    let rows = match sc.kind.as_str() {
        "discrete" => {
            let inst = build_instance(&sc, &config_dir)?;
            let (d1, d2) = sample_discrete(&inst, m, n, exp.seed)?;
            DatasetRows {
                d1: d1
                    .iter()
                    .map(|(z, x)| (z.atom().unwrap() as f64, x.atom().unwrap() as f64))
                    .collect(),
                d2: d2
                    .iter()
                    .map(|(z, y)| (z.atom().unwrap() as f64, None, *y))
                    .collect(),
            }
        }
        "continuous_demo" => {
            let data = continuous_demo(&ContinuousDemoParams {
                m,
                n,
                seed: exp.seed,
                confounding_strength: sc.confounding_strength.unwrap_or(1.0),
            })?;
            DatasetRows {
                d1: data.d1.clone(),
                d2: data.d2.iter().map(|&(z, x, y)| (z, Some(x), y)).collect(),
            }
        }
        other => {
            return Err(NpivError::InvalidInput(format!(
                "unknown scenario kind '{other}'"
            )))
        }
    };
    write_manifest(&dir, "simulate", &cfg)?;
    let path = write_output(&dir, "dataset.csv", &write_dataset_csv(&rows))?;
    println!(
        "simulate: wrote {} ({} stage-1 rows, {} stage-2 rows)",
        path.display(),
        rows.d1.len(),
        rows.d2.len()
    );
    Ok(())
}

fn run_fit(args: &RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    resolve_common(&mut cfg, args);
    let exp = cfg.experiment.clone().unwrap_or_default();
    let fit_cfg = cfg.fit.clone().unwrap_or_default();
    let kernels = section(&cfg.kernels, "kernels")?;
    let kernel_z = kernels.z.build()?;
    let kernel_x = kernels.x.build()?;
    let filter = cfg.filter.unwrap_or(FilterSpec::Tikhonov);
    cfg.filter = Some(filter);

    let config_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let dataset_path = if fit_cfg.dataset.is_relative() {
        config_dir.join(&fit_cfg.dataset)
    } else {
        fit_cfg.dataset.clone()
    };
    let rows = read_dataset_csv(&dataset_path)?;
    if rows.d1.is_empty() || rows.d2.is_empty() {
        return Err(NpivError::InvalidInput(
            "dataset must contain split-1 and split-2 rows".into(),
        ));
    }
    let as_point = |spec: &KernelSpec, v: f64| -> Point {
        if spec.support_size().is_some() {
            Point::Atom(v as usize)
        } else {
            Point::scalar(v)
        }
    };
    let d1: Vec<(Point, Point)> = rows
        .d1
        .iter()
        .map(|&(z, x)| (as_point(&kernel_z, z), as_point(&kernel_x, x)))
        .collect();
    let d2: Vec<(Point, f64)> = rows
        .d2
        .iter()
        .map(|&(z, _, y)| (as_point(&kernel_z, z), y))
        .collect();
    let model = fit_stage1(&d1, kernel_z, kernel_x.clone(), &filter, fit_cfg.xi)?;
    let est = fit_npiv(&model, &d2, fit_cfg.lambda)?;

    let (lo, hi, count) = fit_cfg.grid.unwrap_or_else(|| {
        let xs: Vec<f64> = rows.d1.iter().map(|&(_, x)| x).collect();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi, 200)
    });
    let grid: Vec<f64> = (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count.max(2) - 1) as f64)
        .collect();
    let points: Vec<Point> = grid.iter().map(|&x| as_point(&kernel_x, x)).collect();
    let preds = est.predict(&points)?;

    let dir = exp.output_dir.clone().unwrap();
    write_manifest(&dir, "fit", &cfg)?;
    let mut out = String::from("x,prediction\n");
    for (x, p) in grid.iter().zip(&preds) {
        out.push_str(&format!("{x},{p}\n"));
    }
    let path = write_output(&dir, "predictions.csv", &out)?;
    println!(
        "fit: m={} n={} rkhs_norm^2={} -> {}",
        rows.d1.len(),
        rows.d2.len(),
        est.rkhs_norm_sq()?,
        path.display()
    );
    Ok(())
}

fn run_demo_if_continuous(args: &RunArgs) -> Result<Option<()>> {
    // `simulate`-style continuous runs reuse run_confounding_demo through the
    // acceptance suite; the CLI exposes the comparison through `rates`-like
    // output only when the scenario is continuous.
    let cfg = load_config(&args.config)?;
    if let Some(sc) = &cfg.scenario {
        if sc.kind == "continuous_demo" {
            let demo = DemoConfig {
                params_m: sc.m.unwrap_or(1000),
                params_n: sc.n.unwrap_or(1000),
                seed: cfg.experiment.as_ref().map(|e| e.seed).unwrap_or(7),
                confounding_strength: sc.confounding_strength.unwrap_or(1.0),
                ..Default::default()
            };
            let report = run_confounding_demo(&demo)?;
            println!(
                "demo: npiv_mse {:.5} krr_mse {:.5} npiv_wins={}",
                report.npiv_mse,
                report.krr_mse,
                report.npiv_mse < report.krr_mse
            );
            return Ok(Some(()));
        }
    }
    Ok(None)
}

/// Filter-condition verification table: the five filters at their declared
/// constants plus the Tikhonov over-probe that must fail.
pub fn filters_check_report(
    fc: &FiltersCheckConfig,
) -> Result<Vec<crate::filters::FilterConditionReport>> {
    let xi_grid = log_grid(fc.xi_lo, fc.xi_hi, fc.xi_count);
    let cases: Vec<(FilterSpec, f64)> = vec![
        (FilterSpec::Tikhonov, 1.0),
        (FilterSpec::Landweber { step_tau: 1.0 }, 5.0),
        (FilterSpec::Pcr, 5.0),
        (FilterSpec::IteratedTikhonov { nu: 3 }, 3.0),
        (FilterSpec::GradientFlow, 5.0),
        // Probing Tikhonov beyond its qualification witnesses saturation.
        (FilterSpec::Tikhonov, 3.0),
    ];
    cases
        .into_iter()
        .map(|(spec, rho)| {
            verify_filter_conditions(&spec, fc.kappa_sq, &xi_grid, fc.x_grid, fc.theta_grid, rho)
        })
        .collect()
}

fn run_filters_check(args: &FiltersCheckArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    let fc = cfg.filters_check.clone().unwrap_or_default();
    let reports = filters_check_report(&fc)?;
    println!(
        "{:<28} {:>5} {:>9} {:>9} {:>12} {:>12} {:>6}",
        "filter", "rho", "E", "omega", "cond1_max", "cond2_max", "pass"
    );
    let mut ok = true;
    for r in &reports {
        println!(
            "{:<28} {:>5} {:>9.3} {:>9.3} {:>12.5} {:>12.5e} {:>6}",
            r.filter, r.rho_probe, r.const_e, r.const_omega, r.cond1_max, r.cond2_max, r.pass
        );
        let expected = !r.beyond_qualification;
        if r.pass != expected {
            ok = false;
        }
    }
    if let Some(dir) = &args.output_dir {
        write_output(dir, "filters_check.json", &to_json(&reports)?)?;
    }
    if !ok {
        return Err(NpivError::InvalidInput(
            "filter conditions deviated from their declared constants".into(),
        ));
    }
    Ok(())
}

fn run_theory(args: &TheoryArgs) -> Result<()> {
    let sched = match &args.config {
        Some(path) => load_config(path)?.schedule.unwrap_or_default(),
        None => ScheduleConfig::default(),
    };
    let params = RateParams {
        beta_x: args.beta_x.unwrap_or(sched.beta_x),
        p_x: args.p_x.unwrap_or(sched.p_x),
        gamma0: args.gamma0.or(sched.gamma0).unwrap_or(1.0),
        gamma1: args.gamma1.or(sched.gamma1).unwrap_or(1.0),
        c_f: args.c_f.or(sched.c_f).unwrap_or(0),
        beta_z: args.beta_z.unwrap_or(sched.beta_z),
        p_z: args.p_z.unwrap_or(sched.p_z),
        alpha_z: args.alpha_z.unwrap_or(sched.alpha_z),
        a: args.a.unwrap_or(sched.a),
        gamma: args.gamma.unwrap_or(sched.gamma),
    };
    let sched_out = exponent_and_schedule(&params)?;
    let lower = lower_bound_exponent(&params)?;
    println!("parameters: {params:?}");
    println!(
        "case {}: lambda = Theta(n^-{}), squared-error rate n^-{}",
        sched_out.case, sched_out.lambda_exponent, sched_out.squared_error_exponent
    );
    println!(
        "xi schedule: xi = Theta(m^-{}), m = n^{}",
        params.xi_exponent(),
        params.a
    );
    println!("lower-bound exponent: {lower}");
    if params.gamma0 == params.gamma1 && sched_out.squared_error_exponent == lower {
        println!("upper and lower exponents match: minimax optimal regime");
    }
    Ok(())
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Rates(args) => match run_demo_if_continuous(args) {
            Ok(Some(())) => Ok(()),
            Ok(None) => run_rates(args),
            Err(e) => Err(e),
        },
        Command::Minnorm(args) => run_minnorm(args),
        Command::Saturation(args) => run_saturation(args),
        Command::FiltersCheck(args) => run_filters_check(args),
        Command::Theory(args) => run_theory(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

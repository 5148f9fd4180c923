//! Monte-Carlo studies on discrete oracle instances: empirical rate slopes
//! against the theoretical exponents, minimum-norm convergence on
//! non-identified instances, stage-1 saturation across filters, and the
//! continuous confounding demonstration.
//!
//! All discrete studies measure the exact oracle errors (no test-sample
//! estimation noise) and run replicates in parallel over disjoint seeded
//! streams, aggregating in fixed replicate order.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NpivError, Result};
use crate::filters::FilterSpec;
use crate::kernels::{gram, gram_sym, KernelSpec, Point};
use crate::linalg::{ols_line, spd_solve_vec};
use crate::grouped::{fit_npiv_grouped, fit_stage1_grouped};
use crate::oracle::DiscreteInstance;
use crate::rates::{exponent_and_schedule, RateCase, RateParams};
use crate::scenarios::{
    continuous_demo, sample_discrete_grouped, ContinuousDemoParams, demo_h0,
};
use crate::stage1::fit_stage1;
use crate::stage2::fit_npiv;

fn replicate_error(replicate: usize, e: NpivError) -> NpivError {
    NpivError::InvalidInput(format!("replicate {replicate} aborted the study: {e}"))
}

fn check_grid(grid: &[usize], min_points: usize, what: &str) -> Result<()> {
    if grid.len() < min_points {
        return Err(NpivError::InvalidInput(format!(
            "{what} needs at least {min_points} grid points, got {}",
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(NpivError::InvalidInput(format!(
            "{what} grid must be strictly ascending"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Rate study.

#[derive(Debug, Clone, Serialize)]
pub struct RateStudyConfig {
    pub params: RateParams,
    pub filter: FilterSpec,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub c_xi: f64,
    pub c_lambda: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    pub xi: f64,
    pub replicate: usize,
    pub l2x: f64,
    pub pseudo: f64,
    pub rkhs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub case: RateCase,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub xi_schedule: Vec<f64>,
    pub lambda_schedule: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub rows: Vec<RateRow>,
    pub mean_mse: Vec<f64>,
    /// Decay slope: `mean mse ~ C n^(-fitted_slope)`.
    pub fitted_slope: f64,
    pub slope_se: f64,
    pub theory_slope: f64,
}

/// Runs the two-stage estimator over the sample-size grid with the
/// theory-prescribed schedules and fits the empirical rate slope.
pub fn run_rate_study(inst: &DiscreteInstance, cfg: &RateStudyConfig) -> Result<RateReport> {
    check_grid(&cfg.n_grid, 4, "rate study")?;
    if cfg.replicates == 0 {
        return Err(NpivError::InvalidInput("replicates must be >= 1".into()));
    }
    let sched = exponent_and_schedule(&cfg.params)?;
    let xi_exp = cfg.params.xi_exponent();
    let kz = KernelSpec::precomputed_identity(inst.dz())?;

    let m_grid: Vec<usize> = cfg
        .n_grid
        .iter()
        .map(|&n| (n as f64).powf(cfg.params.a).round().max(1.0) as usize)
        .collect();
    let xi_schedule: Vec<f64> = m_grid
        .iter()
        .map(|&m| cfg.c_xi * (m as f64).powf(-xi_exp))
        .collect();
    let lambda_schedule: Vec<f64> = cfg
        .n_grid
        .iter()
        .map(|&n| cfg.c_lambda * (n as f64).powf(-sched.lambda_exponent))
        .collect();

    let per_replicate: Vec<Vec<RateRow>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| -> Result<Vec<RateRow>> {
            let mut rows = Vec::with_capacity(cfg.n_grid.len());
            for (gi, &n) in cfg.n_grid.iter().enumerate() {
                let m = m_grid[gi];
                let (g1, g2) =
                    sample_discrete_grouped(inst, m, n, cfg.seed, rep as u64)
                        .map_err(|e| replicate_error(rep, e))?;
                let stage1 = fit_stage1_grouped(&kz, &g1, &cfg.filter, xi_schedule[gi])
                    .map_err(|e| replicate_error(rep, e))?;
                let est = fit_npiv_grouped(inst, &stage1, &g2, lambda_schedule[gi])
                    .map_err(|e| replicate_error(rep, e))?;
                let errs = est.exact_errors(inst).map_err(|e| replicate_error(rep, e))?;
                rows.push(RateRow {
                    n,
                    m,
                    lambda: lambda_schedule[gi],
                    xi: xi_schedule[gi],
                    replicate: rep,
                    l2x: errs.l2x,
                    pseudo: errs.pseudo,
                    rkhs: errs.rkhs,
                });
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mean_mse = vec![0.0; cfg.n_grid.len()];
    for rows in &per_replicate {
        for (gi, row) in rows.iter().enumerate() {
            mean_mse[gi] += row.l2x;
        }
    }
    for v in &mut mean_mse {
        *v /= cfg.replicates as f64;
    }
    let log_n: Vec<f64> = cfg.n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let log_mse: Vec<f64> = mean_mse.iter().map(|&v| v.ln()).collect();
    let (slope, _, se) = ols_line(&log_n, &log_mse);

    // CSV row order: grid-major, replicate-minor.
    let mut rows = Vec::with_capacity(cfg.replicates * cfg.n_grid.len());
    for gi in 0..cfg.n_grid.len() {
        for rep_rows in &per_replicate {
            rows.push(rep_rows[gi]);
        }
    }
    Ok(RateReport {
        case: sched.case,
        n_grid: cfg.n_grid.clone(),
        m_grid,
        xi_schedule,
        lambda_schedule,
        replicates: cfg.replicates,
        seed: cfg.seed,
        rows,
        mean_mse,
        fitted_slope: -slope,
        slope_se: se,
        theory_slope: sched.squared_error_exponent,
    })
}

pub fn write_rates_csv(report: &RateReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "n,m,lambda,xi,replicate,l2x,pseudo,rkhs")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.n, r.m, r.lambda, r.xi, r.replicate, r.l2x, r.pseudo, r.rkhs
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Minimum-norm study.

#[derive(Debug, Clone, Serialize)]
pub struct MinnormStudyConfig {
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// `xi = c_xi * m^(-xi_exponent)`.
    pub xi_exponent: f64,
    pub c_xi: f64,
    /// `lambda = c_lambda * n^(-lambda_exponent)`.
    pub lambda_exponent: f64,
    pub c_lambda: f64,
}

impl Default for MinnormStudyConfig {
    fn default() -> Self {
        MinnormStudyConfig {
            sizes: vec![500, 2000, 8000],
            replicates: 20,
            seed: 20240,
            xi_exponent: 0.5,
            c_xi: 1.0,
            lambda_exponent: 1.0 / 3.0,
            c_lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MinnormRow {
    pub size: usize,
    pub replicate: usize,
    pub lambda: f64,
    pub xi: f64,
    pub l2x_to_hstar: f64,
    pub l2x_to_h0: f64,
    pub pseudo: f64,
    pub rkhs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinnormReport {
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// Exact `L2(pi_X)` squared distance between `h0` and the minimum-norm
    /// solution: the irreducible error of any estimator converging to `h*`.
    pub floor: f64,
    pub rows: Vec<MinnormRow>,
    pub mean_to_hstar: Vec<f64>,
    pub mean_to_h0: Vec<f64>,
}

/// On a non-identified instance, tracks convergence towards the minimum-norm
/// solution and the plateau of the distance to `h0`.
pub fn run_minnorm_study(
    inst: &DiscreteInstance,
    cfg: &MinnormStudyConfig,
) -> Result<MinnormReport> {
    check_grid(&cfg.sizes, 2, "minimum-norm study")?;
    let (eig_x, eig_f) = inst.covariance_spectra()?;
    if eig_f.len() >= eig_x.len() {
        return Err(NpivError::InvalidInput(
            "minimum-norm study requires a non-identified instance (rank C_F < rank C_X)".into(),
        ));
    }
    let floor = inst.l2x_distance(inst.h0(), inst.min_norm_solution());
    if floor <= 1e-12 {
        return Err(NpivError::InvalidInput(
            "h0 has no null-space component; the minimum-norm effect is invisible".into(),
        ));
    }
    let kz = KernelSpec::precomputed_identity(inst.dz())?;

    let per_replicate: Vec<Vec<MinnormRow>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| -> Result<Vec<MinnormRow>> {
            let mut rows = Vec::with_capacity(cfg.sizes.len());
            for &size in &cfg.sizes {
                let xi = cfg.c_xi * (size as f64).powf(-cfg.xi_exponent);
                let lambda = cfg.c_lambda * (size as f64).powf(-cfg.lambda_exponent);
                let (g1, g2) = sample_discrete_grouped(inst, size, size, cfg.seed, rep as u64)
                    .map_err(|e| replicate_error(rep, e))?;
                let stage1 = fit_stage1_grouped(&kz, &g1, &FilterSpec::Tikhonov, xi)
                    .map_err(|e| replicate_error(rep, e))?;
                let est = fit_npiv_grouped(inst, &stage1, &g2, lambda)
                    .map_err(|e| replicate_error(rep, e))?;
                let errs = est.exact_errors(inst).map_err(|e| replicate_error(rep, e))?;
                rows.push(MinnormRow {
                    size,
                    replicate: rep,
                    lambda,
                    xi,
                    l2x_to_hstar: errs.l2x,
                    l2x_to_h0: inst.l2x_distance(est.values(), inst.h0()),
                    pseudo: errs.pseudo,
                    rkhs: errs.rkhs,
                });
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let k = cfg.sizes.len();
    let mut mean_to_hstar = vec![0.0; k];
    let mut mean_to_h0 = vec![0.0; k];
    for rows in &per_replicate {
        for (gi, row) in rows.iter().enumerate() {
            mean_to_hstar[gi] += row.l2x_to_hstar;
            mean_to_h0[gi] += row.l2x_to_h0;
        }
    }
    for v in mean_to_hstar.iter_mut().chain(mean_to_h0.iter_mut()) {
        *v /= cfg.replicates as f64;
    }
    let mut rows = Vec::with_capacity(cfg.replicates * k);
    for gi in 0..k {
        for rep_rows in &per_replicate {
            rows.push(rep_rows[gi]);
        }
    }
    Ok(MinnormReport {
        sizes: cfg.sizes.clone(),
        replicates: cfg.replicates,
        seed: cfg.seed,
        floor,
        rows,
        mean_to_hstar,
        mean_to_h0,
    })
}

pub fn write_minnorm_csv(report: &MinnormReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "size,replicate,lambda,xi,l2x_to_hstar,l2x_to_h0,pseudo,rkhs"
    )?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.size, r.replicate, r.lambda, r.xi, r.l2x_to_hstar, r.l2x_to_h0, r.pseudo, r.rkhs
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Saturation study.

#[derive(Debug, Clone, Serialize)]
pub struct SaturationStudyConfig {
    pub filters: Vec<FilterSpec>,
    pub m_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// Schedule `xi = c_xi * m^(-1/(beta_z + p_z))`, shared by every filter.
    pub beta_z: f64,
    pub p_z: f64,
    pub c_xi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SaturationRow {
    pub filter: String,
    pub m: usize,
    pub xi: f64,
    pub replicate: usize,
    pub stage1_l2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SaturationReport {
    pub m_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub rows: Vec<SaturationRow>,
    /// Per-filter decay slope of the stage-1 error in `m` (positive = decay).
    pub slopes: Vec<(String, f64)>,
    pub mean_errors: Vec<(String, Vec<f64>)>,
}

fn filter_is_high_qualification(f: &FilterSpec) -> bool {
    matches!(
        f,
        FilterSpec::Pcr | FilterSpec::GradientFlow | FilterSpec::IteratedTikhonov { nu: 2.. }
    )
}

/// Fits every filter on shared per-(m, replicate) stage-1 samples under the
/// matched schedule and compares the fitted stage-1 error slopes.
pub fn run_saturation_study(
    inst: &DiscreteInstance,
    cfg: &SaturationStudyConfig,
) -> Result<SaturationReport> {
    check_grid(&cfg.m_grid, 4, "saturation study")?;
    if !cfg.filters.contains(&FilterSpec::Tikhonov)
        || !cfg.filters.iter().any(filter_is_high_qualification)
    {
        return Err(NpivError::InvalidInput(
            "saturation study needs tikhonov plus a higher-qualification filter".into(),
        ));
    }
    let kz = KernelSpec::precomputed_identity(inst.dz())?;
    let xi_exp = 1.0 / (cfg.beta_z + cfg.p_z);
    let xi_schedule: Vec<f64> = cfg
        .m_grid
        .iter()
        .map(|&m| cfg.c_xi * (m as f64).powf(-xi_exp))
        .collect();

    // errors[rep][gi][fi]
    let per_replicate: Vec<Vec<Vec<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Vec<f64>>> {
            let mut out = Vec::with_capacity(cfg.m_grid.len());
            for (gi, &m) in cfg.m_grid.iter().enumerate() {
                let (g1, _) = sample_discrete_grouped(inst, m, 1, cfg.seed, rep as u64)
                    .map_err(|e| replicate_error(rep, e))?;
                let mut errs = Vec::with_capacity(cfg.filters.len());
                for filter in &cfg.filters {
                    let stage1 = fit_stage1_grouped(&kz, &g1, filter, xi_schedule[gi])
                        .map_err(|e| replicate_error(rep, e))?;
                    errs.push(stage1.l2_error(inst).map_err(|e| replicate_error(rep, e))?);
                }
                out.push(errs);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let log_m: Vec<f64> = cfg.m_grid.iter().map(|&m| (m as f64).ln()).collect();
    let mut slopes = Vec::with_capacity(cfg.filters.len());
    let mut mean_errors = Vec::with_capacity(cfg.filters.len());
    for (fi, filter) in cfg.filters.iter().enumerate() {
        let means: Vec<f64> = (0..cfg.m_grid.len())
            .map(|gi| {
                per_replicate.iter().map(|rep| rep[gi][fi]).sum::<f64>() / cfg.replicates as f64
            })
            .collect();
        let logs: Vec<f64> = means.iter().map(|&v| v.max(1e-300).ln()).collect();
        let (slope, _, _) = ols_line(&log_m, &logs);
        slopes.push((filter.name(), -slope));
        mean_errors.push((filter.name(), means));
    }

    let mut rows = Vec::with_capacity(cfg.filters.len() * cfg.m_grid.len() * cfg.replicates);
    for (fi, filter) in cfg.filters.iter().enumerate() {
        for gi in 0..cfg.m_grid.len() {
            for (rep, rep_rows) in per_replicate.iter().enumerate() {
                rows.push(SaturationRow {
                    filter: filter.name(),
                    m: cfg.m_grid[gi],
                    xi: xi_schedule[gi],
                    replicate: rep,
                    stage1_l2: rep_rows[gi][fi],
                });
            }
        }
    }
    Ok(SaturationReport {
        m_grid: cfg.m_grid.clone(),
        replicates: cfg.replicates,
        seed: cfg.seed,
        rows,
        slopes,
        mean_errors,
    })
}

pub fn write_saturation_csv(
    report: &SaturationReport,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(out, "filter,m,xi,replicate,stage1_l2")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.filter, r.m, r.xi, r.replicate, r.stage1_l2
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Confounding demo.

#[derive(Debug, Clone, Serialize)]
pub struct DemoConfig {
    pub params_m: usize,
    pub params_n: usize,
    pub seed: u64,
    pub confounding_strength: f64,
    pub lengthscale_z: f64,
    pub lengthscale_x: f64,
    pub xi: f64,
    pub lambda: f64,
    pub grid_size: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            params_m: 1000,
            params_n: 1000,
            seed: 7,
            confounding_strength: 1.0,
            lengthscale_z: 0.8,
            lengthscale_x: 0.25,
            xi: 0.02,
            lambda: 0.003,
            grid_size: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoReport {
    pub npiv_mse: f64,
    pub krr_mse: f64,
    pub grid_size: usize,
}

/// Fits the two-stage estimator and a direct kernel ridge regression of `Y`
/// on `X` on the continuous demo, and compares test-grid errors against the
/// true structural function.
pub fn run_confounding_demo(cfg: &DemoConfig) -> Result<DemoReport> {
    let params = ContinuousDemoParams {
        m: cfg.params_m,
        n: cfg.params_n,
        seed: cfg.seed,
        confounding_strength: cfg.confounding_strength,
    };
    let data = continuous_demo(&params)?;
    let kernel_z = KernelSpec::gaussian(cfg.lengthscale_z)?;
    let kernel_x = KernelSpec::gaussian(cfg.lengthscale_x)?;

    let d1: Vec<(Point, Point)> = data
        .d1
        .iter()
        .map(|&(z, x)| (Point::scalar(z), Point::scalar(x)))
        .collect();
    let d2: Vec<(Point, f64)> = data
        .d2
        .iter()
        .map(|&(z, _, y)| (Point::scalar(z), y))
        .collect();
    let stage1 = fit_stage1(&d1, kernel_z, kernel_x.clone(), &FilterSpec::Tikhonov, cfg.xi)?;
    let est = fit_npiv(&stage1, &d2, cfg.lambda)?;

    let grid: Vec<Point> = (0..cfg.grid_size)
        .map(|i| {
            Point::scalar(0.02 + 0.96 * i as f64 / (cfg.grid_size - 1) as f64)
        })
        .collect();
    let npiv_pred = est.predict(&grid)?;

    // Direct kernel ridge regression of Y on X from the same stage-2 draws.
    let x_points: Vec<Point> = data.d2.iter().map(|&(_, x, _)| Point::scalar(x)).collect();
    let y = DVector::from_iterator(data.d2.len(), data.d2.iter().map(|&(_, _, y)| y));
    let mut kxx = gram_sym(&kernel_x, &x_points)?;
    let n = x_points.len();
    for i in 0..n {
        kxx[(i, i)] += n as f64 * cfg.lambda;
    }
    let alpha = spd_solve_vec(&kxx, &y)?;
    let kq = gram(&kernel_x, &x_points, &grid)?;
    let krr_pred = kq.transpose() * alpha;

    let mut npiv_mse = 0.0;
    let mut krr_mse = 0.0;
    for (i, p) in grid.iter().enumerate() {
        let x = match p {
            Point::Vector(v) => v[0],
            Point::Atom(_) => unreachable!(),
        };
        let truth = demo_h0(x);
        npiv_mse += (npiv_pred[i] - truth) * (npiv_pred[i] - truth);
        krr_mse += (krr_pred[i] - truth) * (krr_pred[i] - truth);
    }
    npiv_mse /= cfg.grid_size as f64;
    krr_mse /= cfg.grid_size as f64;
    Ok(DemoReport {
        npiv_mse,
        krr_mse,
        grid_size: cfg.grid_size,
    })
}

// ---------------------------------------------------------------------------

/// Quadratic-form check used by report consumers: every row must satisfy the
/// Jensen inequality `pseudo <= l2x` up to rounding.
pub fn jensen_violations(rows: &[RateRow]) -> usize {
    rows.iter().filter(|r| r.pseudo > r.l2x + 1e-10).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{identity_uniform_instance, reference_instance};

    fn tiny_rate_cfg() -> RateStudyConfig {
        RateStudyConfig {
            params: RateParams {
                beta_x: 1.0,
                p_x: 1.0,
                gamma0: 1.0,
                gamma1: 1.0,
                c_f: 0,
                beta_z: 1.0,
                p_z: 1.0,
                alpha_z: 1.0,
                a: 1.0,
                gamma: 0.0,
            },
            filter: FilterSpec::Tikhonov,
            n_grid: vec![32, 64, 128, 256],
            replicates: 2,
            seed: 5,
            c_xi: 1.0,
            c_lambda: 1.0,
        }
    }

    #[test]
    fn rate_study_is_deterministic() {
        let inst = identity_uniform_instance(4, 0.3);
        let cfg = tiny_rate_cfg();
        let a = run_rate_study(&inst, &cfg).unwrap();
        let b = run_rate_study(&inst, &cfg).unwrap();
        assert_eq!(a.fitted_slope, b.fitted_slope);
        assert_eq!(a.mean_mse, b.mean_mse);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.l2x, rb.l2x);
        }
    }

    #[test]
    fn noiseless_identity_mse_decreases_per_replicate() {
        let inst = identity_uniform_instance(4, 0.0);
        let mut cfg = tiny_rate_cfg();
        cfg.replicates = 3;
        cfg.n_grid = vec![64, 256, 1024, 4096];
        let report = run_rate_study(&inst, &cfg).unwrap();
        for rep in 0..cfg.replicates {
            let mut errs: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.replicate == rep)
                .map(|r| r.l2x)
                .collect();
            assert_eq!(errs.len(), 4);
            for w in errs.windows(2) {
                assert!(
                    w[1] <= w[0],
                    "noiseless error rose within replicate {rep}: {errs:?}"
                );
            }
            errs.clear();
        }
    }

    #[test]
    fn rate_study_rejects_bad_grids() {
        let inst = identity_uniform_instance(4, 0.3);
        let mut cfg = tiny_rate_cfg();
        cfg.n_grid = vec![32, 64, 64, 128];
        assert!(run_rate_study(&inst, &cfg).is_err());
        cfg.n_grid = vec![32, 64, 128];
        assert!(run_rate_study(&inst, &cfg).is_err());
    }

    #[test]
    fn jensen_holds_on_rate_rows() {
        let inst = identity_uniform_instance(4, 0.3);
        let report = run_rate_study(&inst, &tiny_rate_cfg()).unwrap();
        assert_eq!(jensen_violations(&report.rows), 0);
    }

    #[test]
    fn minnorm_study_rejects_identified_instances() {
        let inst = identity_uniform_instance(4, 0.3);
        let cfg = MinnormStudyConfig {
            sizes: vec![50, 100],
            replicates: 2,
            ..Default::default()
        };
        assert!(run_minnorm_study(&inst, &cfg).is_err());
    }

    #[test]
    fn minnorm_floor_matches_hand_value() {
        let inst = reference_instance();
        let cfg = MinnormStudyConfig {
            sizes: vec![100, 400],
            replicates: 2,
            ..Default::default()
        };
        let report = run_minnorm_study(&inst, &cfg).unwrap();
        approx::assert_relative_eq!(report.floor, 1.0, epsilon = 1e-12);
        assert_eq!(report.rows.len(), 4);
    }

    #[test]
    fn saturation_requires_filter_mix() {
        let inst = identity_uniform_instance(4, 0.0);
        let cfg = SaturationStudyConfig {
            filters: vec![FilterSpec::Tikhonov],
            m_grid: vec![32, 64, 128, 256],
            replicates: 1,
            seed: 1,
            beta_z: 2.0,
            p_z: 1.0,
            c_xi: 1.0,
        };
        assert!(run_saturation_study(&inst, &cfg).is_err());
    }

    #[test]
    fn iterated_tikhonov_nu_one_equals_tikhonov_per_replicate() {
        let inst = crate::scenarios::saturation_instance(12, 0.5, 5.0);
        let cfg = SaturationStudyConfig {
            filters: vec![
                FilterSpec::Tikhonov,
                FilterSpec::IteratedTikhonov { nu: 1 },
                FilterSpec::IteratedTikhonov { nu: 3 },
            ],
            m_grid: vec![64, 128, 256, 512],
            replicates: 2,
            seed: 3,
            beta_z: 5.0,
            p_z: 0.5,
            c_xi: 0.1,
        };
        let report = run_saturation_study(&inst, &cfg).unwrap();
        let tik: Vec<&SaturationRow> =
            report.rows.iter().filter(|r| r.filter == "tikhonov").collect();
        let it1: Vec<&SaturationRow> = report
            .rows
            .iter()
            .filter(|r| r.filter == "iterated_tikhonov(nu=1)")
            .collect();
        assert_eq!(tik.len(), it1.len());
        for (a, b) in tik.iter().zip(&it1) {
            assert!(
                (a.stage1_l2 - b.stage1_l2).abs() <= 1e-10 * a.stage1_l2.max(1e-30),
                "nu=1 differs from tikhonov: {} vs {}",
                a.stage1_l2,
                b.stage1_l2
            );
        }
    }

    #[test]
    fn demo_without_confounding_has_comparable_errors() {
        let cfg = DemoConfig {
            params_m: 500,
            params_n: 500,
            confounding_strength: 0.0,
            ..Default::default()
        };
        let report = run_confounding_demo(&cfg).unwrap();
        let ratio = report.npiv_mse / report.krr_mse;
        assert!(
            (0.15..6.0).contains(&ratio),
            "unconfounded errors should be comparable: {report:?}"
        );
    }
}

//! Spectral filter functions `g_xi` approximating `x -> 1/x`, their
//! qualification constants, matrix-valued application through the spectral
//! calculus, and a grid verifier for the two defining conditions
//! (`sup xi^(1-theta) x^theta g_xi(x) <= E` and
//! `sup |1 - g_xi(x) x| x^theta xi^(-theta) <= omega_rho` for
//! `theta in [0, rho]`).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{NpivError, Result};
use crate::linalg::{check_square_symmetric, clamp_psd_eigenvalues, mirror_upper, sym_eigen};

/// A spectral regularization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FilterSpec {
    /// `g(x) = 1/(x + xi)`; qualification 1.
    Tikhonov,
    /// Gradient descent with constant step `tau`:
    /// `g(x) = tau * sum_{i<k} (1 - tau x)^i`, `k = round(1/xi)`.
    Landweber { step_tau: f64 },
    /// Principal component regression: `g(x) = 1/x` for `x >= xi`, else 0.
    Pcr,
    /// `g(x) = ((x+xi)^nu - xi^nu) / (x (x+xi)^nu)`; qualification `nu`.
    IteratedTikhonov { nu: u32 },
    /// `g(x) = (1 - exp(-x/xi)) / x`.
    GradientFlow,
}

impl FilterSpec {
    pub fn name(&self) -> String {
        match self {
            FilterSpec::Tikhonov => "tikhonov".into(),
            FilterSpec::Landweber { step_tau } => format!("landweber(tau={step_tau})"),
            FilterSpec::Pcr => "pcr".into(),
            FilterSpec::IteratedTikhonov { nu } => format!("iterated_tikhonov(nu={nu})"),
            FilterSpec::GradientFlow => "gradient_flow".into(),
        }
    }

    /// Qualification `rho`: the largest smoothness order the filter exploits.
    pub fn qualification(&self) -> f64 {
        match self {
            FilterSpec::Tikhonov => 1.0,
            FilterSpec::IteratedTikhonov { nu } => *nu as f64,
            // Landweber, PCR and gradient flow have arbitrary qualification.
            FilterSpec::Landweber { .. } | FilterSpec::Pcr | FilterSpec::GradientFlow => {
                f64::INFINITY
            }
        }
    }

    /// Constant `E` of condition 1.
    ///
    /// Iterated Tikhonov needs `E = nu`: at `x = 0`, `theta = 0` condition 1
    /// reads `xi * g_xi(0) = nu`, so no smaller constant can work.
    pub fn const_e(&self) -> f64 {
        match self {
            FilterSpec::IteratedTikhonov { nu } => *nu as f64,
            _ => 1.0,
        }
    }

    /// Constant `omega_rho` of condition 2 at probe order `rho`.
    ///
    /// Condition 2 at `theta = 0`, `x = 0` always evaluates to 1, so every
    /// admissible constant is at least 1; the gradient-flow constant is
    /// therefore reported as `max(1, (rho/e)^rho)`.
    pub fn const_omega(&self, rho: f64) -> f64 {
        match self {
            FilterSpec::Tikhonov | FilterSpec::Pcr | FilterSpec::IteratedTikhonov { .. } => 1.0,
            FilterSpec::Landweber { .. } => {
                if rho <= 1.0 {
                    1.0
                } else {
                    rho.powf(rho)
                }
            }
            FilterSpec::GradientFlow => (rho / std::f64::consts::E).powf(rho).max(1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FilterSpec::Landweber { step_tau } if !(*step_tau > 0.0) => Err(
                NpivError::InvalidInput(format!("landweber step_tau must be positive, got {step_tau}")),
            ),
            FilterSpec::IteratedTikhonov { nu: 0 } => Err(NpivError::InvalidInput(
                "iterated_tikhonov requires nu >= 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Landweber iteration count for regularization level `xi`.
pub fn landweber_steps(xi: f64) -> u64 {
    (1.0 / xi).round().max(1.0) as u64
}

/// The regularization level the filter actually realizes.
///
/// Landweber is indexed by `xi = 1/k` over integer iteration counts, so a
/// requested `xi` snaps to `1/round(1/xi)`; the other families use `xi`
/// directly. The condition verifier must scale by this effective level.
pub fn effective_xi(spec: &FilterSpec, xi: f64) -> f64 {
    match spec {
        FilterSpec::Landweber { .. } => 1.0 / landweber_steps(xi) as f64,
        _ => xi,
    }
}

/// Evaluates `g_xi(x)` for `x >= 0`.
pub fn filter_scalar(spec: &FilterSpec, x: f64, xi: f64) -> Result<f64> {
    spec.validate()?;
    if !(xi > 0.0) {
        return Err(NpivError::NonPositiveRegularization(xi));
    }
    if !(x >= 0.0) {
        return Err(NpivError::InvalidInput(format!(
            "filter argument must be nonnegative, got {x}"
        )));
    }
    Ok(match spec {
        FilterSpec::Tikhonov => 1.0 / (x + xi),
        FilterSpec::Landweber { step_tau } => {
            let tau = *step_tau;
            if tau * x > 1.0 {
                return Err(NpivError::LandweberDivergent(tau * x));
            }
            let k = landweber_steps(xi);
            // tau * sum_{i<k} (1 - tau x)^i = (1 - (1 - tau x)^k) / x,
            // evaluated through ln/expm1 so the small-x cancellation is exact.
            let t = 1.0 - tau * x;
            if x == 0.0 {
                tau * k as f64
            } else if t <= 0.0 {
                1.0 / x
            } else {
                -f64::exp_m1(k as f64 * t.ln()) / x
            }
        }
        FilterSpec::Pcr => {
            if x >= xi {
                1.0 / x
            } else {
                0.0
            }
        }
        FilterSpec::IteratedTikhonov { nu } => {
            // ((x+xi)^nu - xi^nu) / x expands to sum_{j>=1} C(nu,j) x^(j-1) xi^(nu-j),
            // a polynomial with positive terms, finite and stable at x = 0.
            let nu = *nu;
            let mut num = 0.0;
            let mut binom = 1.0;
            for j in 1..=nu {
                binom *= (nu - j + 1) as f64 / j as f64;
                num += binom * x.powi(j as i32 - 1) * xi.powi((nu - j) as i32);
            }
            num / (x + xi).powi(nu as i32)
        }
        FilterSpec::GradientFlow => {
            let u = x / xi;
            if u < 1e-6 {
                // 3-term Taylor expansion of (1 - e^{-u})/x around u = 0.
                (1.0 - u / 2.0 + u * u / 6.0) / xi
            } else {
                -f64::exp_m1(-u) / x
            }
        }
    })
}

/// The residual `1 - g_xi(x) x`, evaluated from its closed form per variant.
///
/// Algebraically this is `1 - filter_scalar(..) * x`, but the subtraction
/// loses all precision once the residual is near rounding level, and the
/// condition-2 verifier multiplies it by `(x/xi)^theta` which can be as
/// large as 1e20.
pub fn filter_residual(spec: &FilterSpec, x: f64, xi: f64) -> Result<f64> {
    spec.validate()?;
    if !(xi > 0.0) {
        return Err(NpivError::NonPositiveRegularization(xi));
    }
    Ok(match spec {
        FilterSpec::Tikhonov => xi / (x + xi),
        FilterSpec::Landweber { step_tau } => {
            let tau = *step_tau;
            if tau * x > 1.0 {
                return Err(NpivError::LandweberDivergent(tau * x));
            }
            let t = 1.0 - tau * x;
            if t == 0.0 {
                0.0
            } else {
                (landweber_steps(xi) as f64 * t.ln()).exp()
            }
        }
        FilterSpec::Pcr => {
            if x >= xi {
                0.0
            } else {
                1.0
            }
        }
        FilterSpec::IteratedTikhonov { nu } => (xi / (x + xi)).powi(*nu as i32),
        FilterSpec::GradientFlow => (-x / xi).exp(),
    })
}

/// Applies the filter to a symmetric PSD matrix through its
/// eigendecomposition: `U g_xi(D) U^T` with the PSD clamp applied first.
///
/// `kappa_sq`, when supplied, bounds the admissible spectrum.
pub fn filter_psd(
    spec: &FilterSpec,
    mat: &DMatrix<f64>,
    xi: f64,
    kappa_sq: Option<f64>,
) -> Result<DMatrix<f64>> {
    check_square_symmetric(mat)?;
    let scale = mat.diagonal().amax();
    let mut eig = sym_eigen(mat);
    clamp_psd_eigenvalues(&mut eig.values, scale)?;
    if let Some(ks) = kappa_sq {
        let top = eig.values[0];
        if top > ks * (1.0 + 1e-10) {
            return Err(NpivError::SpectrumExceedsBound { eig: top, kappa_sq: ks });
        }
    }
    let n = mat.nrows();
    let mut filtered = DMatrix::zeros(n, n);
    for (j, &v) in eig.values.iter().enumerate() {
        let g = filter_scalar(spec, v, xi)?;
        let col = eig.vectors.column(j);
        for r in 0..n {
            let grc = g * col[r];
            for c in r..n {
                filtered[(r, c)] += grc * col[c];
            }
        }
    }
    mirror_upper(&mut filtered);
    Ok(filtered)
}

/// Outcome of the grid check of the two filter conditions.
#[derive(Debug, Clone, Serialize)]
pub struct FilterConditionReport {
    pub filter: String,
    pub rho_probe: f64,
    pub const_e: f64,
    pub const_omega: f64,
    pub cond1_max: f64,
    pub cond2_max: f64,
    pub pass: bool,
    /// Probe order exceeds the filter's qualification, so failing is the
    /// expected outcome.
    pub beyond_qualification: bool,
    pub note: Option<String>,
}

/// Evaluates both conditions of the filter definition on finite grids and
/// compares the maxima against the declared constants.
///
/// `x` ranges over `[0, kappa_sq]` (`x_grid_size` points, endpoints
/// included); `theta` over `[0, 1]` for condition 1 and `[0, rho_probe]` for
/// condition 2 (`theta_grid_size` points each).
pub fn verify_filter_conditions(
    spec: &FilterSpec,
    kappa_sq: f64,
    xi_grid: &[f64],
    x_grid_size: usize,
    theta_grid_size: usize,
    rho_probe: f64,
) -> Result<FilterConditionReport> {
    spec.validate()?;
    if xi_grid.is_empty() || x_grid_size < 2 || theta_grid_size < 2 {
        return Err(NpivError::InvalidInput(
            "verification grids need at least one xi and two x/theta points".into(),
        ));
    }
    if !(rho_probe > 0.0) {
        return Err(NpivError::InvalidInput(format!(
            "rho_probe must be positive, got {rho_probe}"
        )));
    }
    let xs: Vec<f64> = (0..x_grid_size)
        .map(|i| kappa_sq * i as f64 / (x_grid_size - 1) as f64)
        .collect();
    let theta1: Vec<f64> = (0..theta_grid_size)
        .map(|i| i as f64 / (theta_grid_size - 1) as f64)
        .collect();
    let theta2: Vec<f64> = (0..theta_grid_size)
        .map(|i| rho_probe * i as f64 / (theta_grid_size - 1) as f64)
        .collect();

    let mut cond1_max = 0.0f64;
    let mut cond2_max = 0.0f64;
    for &xi_raw in xi_grid {
        if !(xi_raw > 0.0) {
            return Err(NpivError::NonPositiveRegularization(xi_raw));
        }
        let xi = effective_xi(spec, xi_raw);
        for &x in &xs {
            let g = filter_scalar(spec, x, xi)?;
            let residual = filter_residual(spec, x, xi)?;
            for &th in &theta1 {
                cond1_max = cond1_max.max(xi.powf(1.0 - th) * x.powf(th) * g);
            }
            for &th in &theta2 {
                cond2_max = cond2_max.max(residual * (x / xi).powf(th));
            }
        }
    }

    let const_e = spec.const_e();
    let const_omega = spec.const_omega(rho_probe);
    let beyond_qualification = rho_probe > spec.qualification();
    let pass = cond1_max <= const_e * (1.0 + 1e-9) && cond2_max <= const_omega * (1.0 + 1e-9);
    let note = match spec {
        FilterSpec::GradientFlow => Some(
            "omega taken as max(1, (rho/e)^rho); the nominal (tau/e)^tau leaves tau undefined"
                .into(),
        ),
        _ => None,
    };
    Ok(FilterConditionReport {
        filter: spec.name(),
        rho_probe,
        const_e,
        const_omega,
        cond1_max,
        cond2_max,
        pass,
        beyond_qualification,
        note,
    })
}

/// Log-spaced grid of `count` points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

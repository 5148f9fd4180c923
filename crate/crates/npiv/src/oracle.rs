//! Exact population computations on finite-support NPIV instances.
//!
//! An instance fixes the joint law of `(X, Z)` on finite supports, the
//! structural function `h0` and the stage-2 noise law. Everything the theory
//! talks about is then a finite-dimensional object: the conditional
//! expectation operator is the row-stochastic matrix `cond`, the covariance
//! operators `C_X` and `C_F` have the same spectra as the conjugated matrices
//! `K^(1/2) diag(pi_X) K^(1/2)` and `K^(1/2) B K^(1/2)` with
//! `B = cond^T diag(pi_Z) cond`, and the error metrics are weighted sums
//! over the supports.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{NpivError, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{
    clamp_psd_eigenvalues, pseudo_inverse, psd_sqrt, sym_eigen, RANK_REL_CUTOFF,
};

const PROB_TOL: f64 = 1e-12;

/// Stage-2 noise law conditional on the instrument.
#[derive(Debug, Clone)]
pub enum NoiseModel {
    /// `zeta | Z = z ~ Normal(0, sigma[z]^2)`, one sigma per z-atom.
    Gaussian { sigma: Vec<f64> },
}

/// A finite-support NPIV population.
#[derive(Debug, Clone)]
pub struct DiscreteInstance {
    x_support: Vec<f64>,
    z_support: Vec<f64>,
    pi_z: DVector<f64>,
    /// Row-stochastic `d_z x d_x` matrix, `cond[(z, x)] = P(X = x | Z = z)`.
    cond: DMatrix<f64>,
    h0: DVector<f64>,
    noise: NoiseModel,
    kernel_x: KernelSpec,
    // Derived at construction.
    pi_x: DVector<f64>,
    r0: DVector<f64>,
    h_star: DVector<f64>,
    kx_pinv: DMatrix<f64>,
}

/// Link-condition diagnostics and covariance spectra of an instance.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceTheory {
    pub gamma0: f64,
    pub gamma1: f64,
    /// 1 when the conditional-expectation operator has a nontrivial null
    /// space on the RKHS (rank of `C_F` below rank of `C_X`).
    pub c_f: u8,
    pub eig_x: Vec<f64>,
    pub eig_f: Vec<f64>,
    /// True when `C_X` and `C_F` commute to rounding level, in which case the
    /// envelope fit is exact rather than a shared-basis approximation.
    pub shared_basis: bool,
    pub smoothness: Option<SmoothnessParams>,
}

/// Scenario-supplied smoothness metadata; not estimated from the instance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SmoothnessParams {
    pub beta_x: f64,
    pub p_x: f64,
    pub beta_z: f64,
    pub p_z: f64,
    pub alpha_z: f64,
}

impl InstanceTheory {
    pub fn with_smoothness(mut self, smoothness: SmoothnessParams) -> Self {
        self.smoothness = Some(smoothness);
        self
    }
}

/// The three exact error metrics of a candidate structural function against
/// the minimum-norm solution.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExactErrors {
    /// `sum_x pi_X(x) (h(x) - h*(x))^2`.
    pub l2x: f64,
    /// `sum_z pi_Z(z) (T(h - h*))(z)^2`.
    pub pseudo: f64,
    /// Squared RKHS norm of `h - h*`.
    pub rkhs: f64,
}

impl DiscreteInstance {
    /// Validates the law, computes the induced `pi_X`, `r0 = T h0` and the
    /// minimum-norm solution.
    pub fn new(
        x_support: Vec<f64>,
        z_support: Vec<f64>,
        pi_z: Vec<f64>,
        cond: DMatrix<f64>,
        h0: Vec<f64>,
        noise: NoiseModel,
        kernel_x: Option<KernelSpec>,
    ) -> Result<Self> {
        let d_x = x_support.len();
        let d_z = z_support.len();
        if d_x == 0 || d_z == 0 {
            return Err(NpivError::EmptyPoints("instance supports"));
        }
        if pi_z.len() != d_z {
            return Err(NpivError::DimensionMismatch {
                context: "pi_z",
                expected: d_z,
                got: pi_z.len(),
            });
        }
        if cond.nrows() != d_z || cond.ncols() != d_x {
            return Err(NpivError::DimensionMismatch {
                context: "cond rows",
                expected: d_z,
                got: cond.nrows(),
            });
        }
        if h0.len() != d_x {
            return Err(NpivError::DimensionMismatch {
                context: "h0",
                expected: d_x,
                got: h0.len(),
            });
        }
        if pi_z.iter().any(|p| *p < 0.0) || (pi_z.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
            return Err(NpivError::InvalidInput(
                "pi_z must be a probability vector".into(),
            ));
        }
        for r in 0..d_z {
            let row = cond.row(r);
            if row.iter().any(|p| *p < 0.0) || (row.sum() - 1.0).abs() > PROB_TOL {
                return Err(NpivError::InvalidInput(format!(
                    "cond row {r} must be a probability vector"
                )));
            }
        }
        let kernel_x = match kernel_x {
            Some(k) => {
                if k.support_size() != Some(d_x) {
                    return Err(NpivError::SupportMismatch(format!(
                        "kernel_x must be precomputed over the {d_x}-point X support"
                    )));
                }
                k
            }
            None => KernelSpec::precomputed_identity(d_x)?,
        };
        match &noise {
            NoiseModel::Gaussian { sigma } => {
                if sigma.len() != d_z {
                    return Err(NpivError::DimensionMismatch {
                        context: "noise sigma",
                        expected: d_z,
                        got: sigma.len(),
                    });
                }
                if sigma.iter().any(|s| *s < 0.0) {
                    return Err(NpivError::InvalidInput(
                        "noise sigma must be nonnegative".into(),
                    ));
                }
            }
        }

        let pi_z = DVector::from_vec(pi_z);
        let h0 = DVector::from_vec(h0);
        let pi_x = cond.transpose() * &pi_z;
        let r0 = &cond * &h0;
        let kx = kernel_x.gram_matrix().expect("precomputed").clone();
        let kx_pinv = pseudo_inverse(&kx);
        let h_star = min_norm_values(&cond, &kx, &r0)?;
        Ok(DiscreteInstance {
            x_support,
            z_support,
            pi_z,
            cond,
            h0,
            noise,
            kernel_x,
            pi_x,
            r0,
            h_star,
            kx_pinv,
        })
    }

    pub fn dx(&self) -> usize {
        self.x_support.len()
    }

    pub fn dz(&self) -> usize {
        self.z_support.len()
    }

    pub fn x_support(&self) -> &[f64] {
        &self.x_support
    }

    pub fn z_support(&self) -> &[f64] {
        &self.z_support
    }

    pub fn pi_z(&self) -> &DVector<f64> {
        &self.pi_z
    }

    pub fn pi_x(&self) -> &DVector<f64> {
        &self.pi_x
    }

    pub fn h0(&self) -> &DVector<f64> {
        &self.h0
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn kernel_x(&self) -> &KernelSpec {
        &self.kernel_x
    }

    pub fn kx(&self) -> &DMatrix<f64> {
        self.kernel_x.gram_matrix().expect("precomputed")
    }

    /// The conditional-expectation operator as a matrix: `(T h)(z) = cond h`.
    pub fn operator_t(&self) -> &DMatrix<f64> {
        &self.cond
    }

    /// `r0 = T h0`, the regression function of `Y` on `Z`.
    pub fn r0(&self) -> &DVector<f64> {
        &self.r0
    }

    /// Values of the minimum-RKHS-norm solution of `T h = r0`.
    pub fn min_norm_solution(&self) -> &DVector<f64> {
        &self.h_star
    }

    /// Nonzero eigenvalues of the covariance operators, descending:
    /// `eig_x` of `C_X` and `eig_f` of `C_F = T*T`.
    pub fn covariance_spectra(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let kx = self.kx();
        let k_sqrt = psd_sqrt(kx, self.kernel_x.kappa_sq())?;
        let cx = &k_sqrt * DMatrix::from_diagonal(&self.pi_x) * &k_sqrt;
        let b = self.cond.transpose() * DMatrix::from_diagonal(&self.pi_z) * &self.cond;
        let cf = &k_sqrt * b * &k_sqrt;
        Ok((psd_spectrum(&cx)?, psd_spectrum(&cf)?))
    }

    /// Certified envelope fit of the link-condition exponents from the
    /// paired, descending covariance spectra.
    ///
    /// On shared-eigenbasis instances `mu_F,i = mu_X,i^gamma` holds exactly
    /// per index, and the envelope recovers gamma; otherwise the report is a
    /// shared-basis approximation (flagged through `shared_basis`).
    pub fn link_parameters(&self) -> Result<InstanceTheory> {
        let (eig_x, eig_f) = self.covariance_spectra()?;
        if eig_x.len() < 2 || eig_f.len() < 2 {
            return Err(NpivError::InvalidInput(
                "link diagnostics need at least 2 nonzero eigenvalues per spectrum".into(),
            ));
        }
        for &mu in &eig_x {
            if mu >= 1.0 {
                return Err(NpivError::EigenvalueAtLeastOne(mu));
            }
        }
        // gamma1 certifies mu_F,i <= mu_X,i^gamma1 for every paired index;
        // gamma0 certifies mu_X,i^gamma0 <= mu_F,i on the range of C_F.
        let mut gamma1 = f64::INFINITY;
        let mut gamma0 = 1.0f64;
        for (i, &mf) in eig_f.iter().enumerate() {
            let mx = eig_x[i];
            let ratio = mf.ln() / mx.ln();
            gamma1 = gamma1.min(ratio);
            gamma0 = gamma0.max(ratio);
        }
        let gamma1 = gamma1.max(1.0);
        let gamma0 = gamma0.max(gamma1);
        let c_f = u8::from(eig_f.len() < eig_x.len());
        Ok(InstanceTheory {
            gamma0,
            gamma1,
            c_f,
            shared_basis: self.covariances_commute()?,
            eig_x,
            eig_f,
            smoothness: None,
        })
    }

    fn covariances_commute(&self) -> Result<bool> {
        let kx = self.kx();
        let k_sqrt = psd_sqrt(kx, self.kernel_x.kappa_sq())?;
        let cx = &k_sqrt * DMatrix::from_diagonal(&self.pi_x) * &k_sqrt;
        let b = self.cond.transpose() * DMatrix::from_diagonal(&self.pi_z) * &self.cond;
        let cf = &k_sqrt * b * &k_sqrt;
        let comm = &cx * &cf - &cf * &cx;
        let scale = cx.norm() * cf.norm();
        Ok(comm.norm() <= 1e-10 * scale.max(f64::MIN_POSITIVE))
    }

    /// Exact errors of a candidate value vector against the minimum-norm
    /// solution.
    pub fn exact_errors(&self, h_values: &DVector<f64>) -> Result<ExactErrors> {
        if h_values.len() != self.dx() {
            return Err(NpivError::DimensionMismatch {
                context: "h_values",
                expected: self.dx(),
                got: h_values.len(),
            });
        }
        let diff = h_values - &self.h_star;
        let l2x = self
            .pi_x
            .iter()
            .zip(diff.iter())
            .map(|(p, d)| p * d * d)
            .sum();
        let t_diff = &self.cond * &diff;
        let pseudo = self
            .pi_z
            .iter()
            .zip(t_diff.iter())
            .map(|(p, d)| p * d * d)
            .sum();
        let rkhs = (&self.kx_pinv * &diff).dot(&diff);
        Ok(ExactErrors { l2x, pseudo, rkhs })
    }

    /// Weighted `L2(pi_X)` squared distance between two value vectors.
    pub fn l2x_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.pi_x
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(p, (u, v))| p * (u - v) * (u - v))
            .sum()
    }

    /// `L2(pi_Z; H_X)` squared error of aggregated embedding weights against
    /// the true conditional weights: columns of `weights` are per-z-atom
    /// weight vectors over the X support.
    pub fn cme_l2_error(&self, weights: &DMatrix<f64>) -> Result<f64> {
        if weights.nrows() != self.dx() || weights.ncols() != self.dz() {
            return Err(NpivError::SupportMismatch(format!(
                "expected {}x{} weight matrix, got {}x{}",
                self.dx(),
                self.dz(),
                weights.nrows(),
                weights.ncols()
            )));
        }
        let kx = self.kx();
        let mut err = 0.0;
        for b in 0..self.dz() {
            let diff = weights.column(b) - self.cond.row(b).transpose();
            err += self.pi_z[b] * (kx * &diff).dot(&diff);
        }
        Ok(err)
    }

    /// `sum_z pi_Z(z) p(.|z)^T K_X p(.|z)`: the stage-1 error of the zero
    /// embedding (the large-xi limit of any filter fit).
    pub fn cme_null_error(&self) -> f64 {
        let kx = self.kx();
        let mut err = 0.0;
        for b in 0..self.dz() {
            let p = self.cond.row(b).transpose();
            err += self.pi_z[b] * (kx * &p).dot(&p);
        }
        err
    }
}

/// Minimum-RKHS-norm interpolation fixed by the integral equation:
/// `v* = K cond^T (cond K cond^T)^+ r0`.
fn min_norm_values(cond: &DMatrix<f64>, kx: &DMatrix<f64>, r0: &DVector<f64>) -> Result<DVector<f64>> {
    let tkt = cond * kx * cond.transpose();
    let v = kx * cond.transpose() * pseudo_inverse(&tkt) * r0;
    let residual = (cond * &v - r0).norm();
    if residual > 1e-8 * r0.norm().max(1.0) {
        return Err(NpivError::InfeasibleConstraint { residual });
    }
    Ok(v)
}

/// Nonzero eigenvalues of a symmetric PSD matrix, descending, with the PSD
/// clamp applied and a relative zero cutoff of 1e-12.
fn psd_spectrum(mat: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut eig = sym_eigen(mat).values;
    clamp_psd_eigenvalues(&mut eig, mat.diagonal().amax().max(f64::MIN_POSITIVE))?;
    let top = eig[0];
    Ok(eig.iter().copied().filter(|&v| v > 1e-12 * top).collect())
}

/// Trace of `C (C + lambda I)^(-1)` from the eigenvalues of `C`.
pub fn effective_dimension(eigs: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(NpivError::NonPositiveRegularization(lambda));
    }
    Ok(eigs.iter().map(|&mu| mu / (mu + lambda)).sum())
}

/// Null-space basis of the restricted operator in coefficient space
/// (`{c : cond K c = 0}`), orthonormalized in the RKHS inner product
/// `<c, c'> = c^T K c'`. Used by tests to check that the minimum-norm
/// solution has no null-space component.
pub fn rkhs_null_basis(cond: &DMatrix<f64>, kx: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let tk = cond * kx;
    // Right singular vectors with vanishing singular value, obtained from the
    // full eigenbasis of (T K)^T (T K).
    let gram = tk.transpose() * &tk;
    let eig = sym_eigen(&gram);
    let top = eig.values[0].max(f64::MIN_POSITIVE);
    let cutoff = RANK_REL_CUTOFF * RANK_REL_CUTOFF * top;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for (j, &v) in eig.values.iter().enumerate() {
        if v > cutoff {
            continue;
        }
        let mut c: DVector<f64> = eig.vectors.column(j).into();
        // Gram-Schmidt in the K-inner product.
        for b in &basis {
            let proj = (kx * b).dot(&c);
            c -= b * proj;
        }
        let norm_sq = (kx * &c).dot(&c);
        if norm_sq > 1e-20 {
            basis.push(c / norm_sq.sqrt());
        }
    }
    basis
}

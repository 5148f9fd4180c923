//! Exact grouped fitting on finite supports.
//!
//! On a discrete instance every sample point is one of `d` support atoms, so
//! the `m x m` Gram matrix is `S A S^T` with `S` the one-hot atom selector
//! and `A = K_z / m`. For any filter, `g(S A S^T) S = S g(A D) ` with
//! `D = S^T S` the diagonal of atom counts (exact for polynomials by
//! `(S A S^T)^k S = S (A D)^k`, hence for the spectral calculus on the joint
//! spectrum), so the fitted dual collapses to a `d x d` computation: the
//! estimator is identical to the dense path, only computed in compressed
//! coordinates. Stage 2 collapses the same way through the push-through
//! identity `S2^T (S2 N S2^T + n lambda I)^(-1) = (D2 N + n lambda I)^(-1) S2^T`.
//!
//! This is what makes the rate studies feasible: stage-1 samples grow like
//! `n^a` (16.7M points at the top of the default grid), far beyond any dense
//! eigendecomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::{NpivError, Result};
use crate::filters::{filter_scalar, FilterSpec};
use crate::kernels::KernelSpec;
use crate::linalg::{clamp_psd_eigenvalues, sym_eigen};
use crate::oracle::{DiscreteInstance, ExactErrors};
use crate::scenarios::{GroupedStage1Sample, GroupedStage2Sample};

/// Stage-1 fit in compressed coordinates.
#[derive(Debug, Clone)]
pub struct GroupedStage1 {
    /// `d_x x d_z`: column `b` holds the embedding weights for the query
    /// atom `b`, aggregated over the X support.
    aggregated: DMatrix<f64>,
    xi: f64,
    m: usize,
}

/// Fits stage 1 from atom counts: the compressed weight matrix
/// `(1/m) g_xi(A D) K_z` restricted to sampled atoms, aggregated onto the X
/// support through the joint counts.
pub fn fit_stage1_grouped(
    kernel_z: &KernelSpec,
    sample: &GroupedStage1Sample,
    filter: &FilterSpec,
    xi: f64,
) -> Result<GroupedStage1> {
    let kz = kernel_z
        .gram_matrix()
        .ok_or_else(|| NpivError::SupportMismatch("grouped fits need a precomputed kernel_z".into()))?;
    let d_z = kz.nrows();
    let counts = &sample.counts;
    if counts.nrows() != d_z {
        return Err(NpivError::DimensionMismatch {
            context: "grouped stage-1 counts",
            expected: d_z,
            got: counts.nrows(),
        });
    }
    if let FilterSpec::Landweber { step_tau } = filter {
        if step_tau * kernel_z.kappa_sq() > 1.0 {
            return Err(NpivError::LandweberDivergent(step_tau * kernel_z.kappa_sq()));
        }
    }
    let m = sample.m as f64;
    let z_counts: Vec<f64> = (0..d_z).map(|b| counts.row(b).sum()).collect();
    let sampled: Vec<usize> = (0..d_z).filter(|&b| z_counts[b] > 0.0).collect();
    if sampled.is_empty() {
        return Err(NpivError::EmptyPoints("grouped stage-1 sample"));
    }
    let p = sampled.len();

    // Symmetrized compressed matrix D^(1/2) (K_z/m) D^(1/2) over sampled
    // atoms; its spectrum is the nonzero spectrum of the dense K_zz/m.
    let sqrt_c: Vec<f64> = sampled.iter().map(|&b| z_counts[b].sqrt()).collect();
    let mut msym = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            msym[(i, j)] = sqrt_c[i] * kz[(sampled[i], sampled[j])] * sqrt_c[j] / m;
        }
    }
    let mut eig = sym_eigen(&msym);
    clamp_psd_eigenvalues(&mut eig.values, kernel_z.kappa_sq())?;
    if eig.values[0] > kernel_z.kappa_sq() * (1.0 + 1e-10) {
        return Err(NpivError::SpectrumExceedsBound {
            eig: eig.values[0],
            kappa_sq: kernel_z.kappa_sq(),
        });
    }
    let mut filtered = DVector::zeros(p);
    for (j, &v) in eig.values.iter().enumerate() {
        filtered[j] = filter_scalar(filter, v, xi)?;
    }
    // g(A D) = D^(-1/2) V g(mu) V^T D^(1/2); weight matrix
    // W = (1/m) g(A D) K_z[sampled, :].
    let k_rows = DMatrix::from_fn(p, d_z, |i, b| kz[(sampled[i], b)]);
    let vt_d_k = eig.vectors.transpose()
        * DMatrix::from_fn(p, d_z, |i, b| sqrt_c[i] * k_rows[(i, b)]);
    let g_vt_d_k = DMatrix::from_fn(p, d_z, |j, b| filtered[j] * vt_d_k[(j, b)]);
    let mut weights = &eig.vectors * g_vt_d_k;
    for i in 0..p {
        for b in 0..d_z {
            weights[(i, b)] /= sqrt_c[i] * m;
        }
    }

    // Aggregate onto the X support: H[a, b] = sum_p counts[p, a] W[p, b].
    let d_x = counts.ncols();
    let counts_p = DMatrix::from_fn(p, d_x, |i, a| counts[(sampled[i], a)]);
    let aggregated = counts_p.transpose() * weights;
    Ok(GroupedStage1 {
        aggregated,
        xi,
        m: sample.m,
    })
}

impl GroupedStage1 {
    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Aggregated embedding weights (`d_x x d_z`), columns indexed by query
    /// z-atom.
    pub fn aggregated_weights(&self) -> &DMatrix<f64> {
        &self.aggregated
    }

    /// Exact `L2(pi_Z; H_X)` squared error against the instance embedding.
    pub fn l2_error(&self, inst: &DiscreteInstance) -> Result<f64> {
        inst.cme_l2_error(&self.aggregated)
    }
}

/// Stage-2 fit in compressed coordinates.
#[derive(Debug, Clone)]
pub struct GroupedNpiv {
    /// Dual coefficients aggregated onto the X support.
    alpha_aggregated: DVector<f64>,
    /// Fitted values at every X-support atom.
    values: DVector<f64>,
    pub lambda: f64,
    pub n: usize,
}

/// Solves the stage-2 ridge system through the compressed normal equations
/// `(D2 N + n lambda I) u = y_sums` with `N = H^T K_x H`, then maps back:
/// `alpha_agg = H u`, values `= K_x alpha_agg`.
pub fn fit_npiv_grouped(
    inst: &DiscreteInstance,
    stage1: &GroupedStage1,
    sample: &GroupedStage2Sample,
    lambda: f64,
) -> Result<GroupedNpiv> {
    if !(lambda > 0.0) {
        return Err(NpivError::NonPositiveRegularization(lambda));
    }
    let d_z = inst.dz();
    if sample.y_sum.len() != d_z || stage1.aggregated.ncols() != d_z {
        return Err(NpivError::DimensionMismatch {
            context: "grouped stage-2 sample",
            expected: d_z,
            got: sample.y_sum.len(),
        });
    }
    let h = &stage1.aggregated;
    let n = sample.n as f64;
    let big_n = h.transpose() * inst.kx() * h;
    let mut system = DMatrix::from_fn(d_z, d_z, |i, j| sample.count[i] * big_n[(i, j)]);
    for i in 0..d_z {
        system[(i, i)] += n * lambda;
    }
    let u = system
        .lu()
        .solve(&sample.y_sum)
        .ok_or(NpivError::FactorizationFailed(" (grouped stage-2 system)"))?;
    let alpha_aggregated = h * u;
    let values = inst.kx() * &alpha_aggregated;
    Ok(GroupedNpiv {
        alpha_aggregated,
        values,
        lambda,
        n: sample.n,
    })
}

impl GroupedNpiv {
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn rkhs_norm_sq(&self, inst: &DiscreteInstance) -> f64 {
        (inst.kx() * &self.alpha_aggregated).dot(&self.alpha_aggregated)
    }

    pub fn exact_errors(&self, inst: &DiscreteInstance) -> Result<ExactErrors> {
        inst.exact_errors(&self.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterSpec;
    use crate::kernels::Point;
    use crate::scenarios::{
        random_instance, reference_instance, sample_discrete_grouped, sample_discrete_replicate,
    };
    use crate::stage1::fit_stage1;
    use crate::stage2::fit_npiv;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense and grouped paths are the same estimator; this is the guard
    /// that licenses running the studies in compressed coordinates.
    #[test]
    fn grouped_matches_dense_path_across_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let filters = [
            FilterSpec::Tikhonov,
            FilterSpec::Landweber { step_tau: 1.0 },
            FilterSpec::Pcr,
            FilterSpec::IteratedTikhonov { nu: 3 },
            FilterSpec::GradientFlow,
        ];
        for trial in 0..4 {
            let inst = random_instance(&mut rng, 5);
            let kz = KernelSpec::precomputed_identity(inst.dz()).unwrap();
            let (d1, d2) = sample_discrete_replicate(&inst, 60, 35, 5, trial).unwrap();
            let (g1, g2) = sample_discrete_grouped(&inst, 60, 35, 5, trial).unwrap();
            for filter in &filters {
                let xi = 0.13;
                let lambda = 0.07;
                let dense_model =
                    fit_stage1(&d1, kz.clone(), inst.kernel_x().clone(), filter, xi).unwrap();
                let grouped_model = fit_stage1_grouped(&kz, &g1, filter, xi).unwrap();
                let dense_err = dense_model.l2_error(&inst).unwrap();
                let grouped_err = grouped_model.l2_error(&inst).unwrap();
                assert!(
                    (dense_err - grouped_err).abs() <= 1e-10 * dense_err.max(1.0),
                    "{}: stage-1 error {dense_err} vs {grouped_err}",
                    filter.name()
                );

                let dense_est = fit_npiv(&dense_model, &d2, lambda).unwrap();
                let dense_values = dense_est.values_on_support(inst.dx()).unwrap();
                let grouped_est = fit_npiv_grouped(&inst, &grouped_model, &g2, lambda).unwrap();
                for a in 0..inst.dx() {
                    assert!(
                        (dense_values[a] - grouped_est.values()[a]).abs() <= 1e-10,
                        "{}: values differ at atom {a}: {} vs {}",
                        filter.name(),
                        dense_values[a],
                        grouped_est.values()[a]
                    );
                }
                let dense_norm = dense_est.rkhs_norm_sq().unwrap();
                let grouped_norm = grouped_est.rkhs_norm_sq(&inst);
                assert!((dense_norm - grouped_norm).abs() <= 1e-9 * dense_norm.max(1.0));
            }
        }
    }

    #[test]
    fn grouped_handles_unsampled_atoms() {
        // Force an unsampled z-atom by zeroing its marginal.
        let inst = crate::oracle::DiscreteInstance::new(
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 2.0],
            vec![0.6, 0.4, 0.0],
            DMatrix::from_row_slice(
                3,
                3,
                &[0.7, 0.3, 0.0, 0.2, 0.5, 0.3, 0.1, 0.2, 0.7],
            ),
            vec![1.0, -0.5, 0.25],
            crate::oracle::NoiseModel::Gaussian { sigma: vec![0.2; 3] },
            None,
        )
        .unwrap();
        let kz = KernelSpec::precomputed_identity(3).unwrap();
        let (g1, g2) = sample_discrete_grouped(&inst, 40, 30, 8, 0).unwrap();
        assert_eq!(g1.counts.row(2).sum(), 0.0);
        let model = fit_stage1_grouped(&kz, &g1, &FilterSpec::Tikhonov, 0.1).unwrap();
        // Identity k_z: an unsampled query atom has zero Gram column against
        // the sample, so its weights vanish.
        for a in 0..3 {
            assert_eq!(model.aggregated_weights()[(a, 2)], 0.0);
        }
        let est = fit_npiv_grouped(&inst, &model, &g2, 0.05).unwrap();
        assert!(est.values().iter().all(|v| v.is_finite()));

        // Dense comparison on the same draw.
        let (d1, d2) = sample_discrete_replicate(&inst, 40, 30, 8, 0).unwrap();
        let dense_model = fit_stage1(
            &d1,
            kz.clone(),
            inst.kernel_x().clone(),
            &FilterSpec::Tikhonov,
            0.1,
        )
        .unwrap();
        let dense_est = fit_npiv(&dense_model, &d2, 0.05).unwrap();
        let dense_values = dense_est.values_on_support(3).unwrap();
        for a in 0..3 {
            assert!((dense_values[a] - est.values()[a]).abs() <= 1e-10);
        }
    }

    #[test]
    fn exact_conditional_weights_give_zero_error() {
        // A grouped sample whose empirical law equals the instance law
        // reproduces the exact embedding as xi -> 0.
        let inst = reference_instance();
        let kz = KernelSpec::precomputed_identity(inst.dz()).unwrap();
        let mut counts = DMatrix::zeros(2, 3);
        // 1000 points per z-atom exactly matching cond.
        counts[(0, 0)] = 500.0;
        counts[(0, 1)] = 500.0;
        counts[(1, 1)] = 500.0;
        counts[(1, 2)] = 500.0;
        let sample = GroupedStage1Sample { counts, m: 2000 };
        let model = fit_stage1_grouped(&kz, &sample, &FilterSpec::Tikhonov, 1e-12).unwrap();
        let err = model.l2_error(&inst).unwrap();
        assert!(err <= 1e-8, "error {err}");
        let _ = Point::Atom(0);
    }
}

//! Stage-2 regression: Tikhonov-regularized least squares of `Y` on the
//! embedded instruments, solved in its closed dual form
//! `alpha = J [J^T K_xx J + n lambda I]^(-1) Y` with `J` the stage-1 weight
//! matrix at the stage-2 instruments. Predictions are the representer form
//! `h_hat(x) = K(x_tilde, x)^T alpha`.

use nalgebra::{DMatrix, DVector};

use crate::error::{NpivError, Result};
use crate::kernels::{gram, gram_sym, KernelSpec, Point};
use crate::linalg::spd_solve_vec;
use crate::oracle::DiscreteInstance;
use crate::stage1::CmeWeights;

/// Fitted structural-function estimate.
#[derive(Debug, Clone)]
pub struct NpivEstimator {
    /// Dual coefficients over the stage-1 X points.
    alpha: DVector<f64>,
    lambda: f64,
    n: usize,
    x_points: Vec<Point>,
    kernel_x: KernelSpec,
}

/// Fits the stage-2 ridge regression on `D2 = {(z_i, y_i)}` against the
/// stage-1 embedding.
pub fn fit_npiv(
    model: &dyn CmeWeights,
    d2: &[(Point, f64)],
    lambda: f64,
) -> Result<NpivEstimator> {
    if d2.is_empty() {
        return Err(NpivError::EmptyPoints("stage-2 sample"));
    }
    if !(lambda > 0.0) {
        return Err(NpivError::NonPositiveRegularization(lambda));
    }
    let n = d2.len();
    let z_query: Vec<Point> = d2.iter().map(|(z, _)| z.clone()).collect();
    let y = DVector::from_iterator(n, d2.iter().map(|(_, y)| *y));
    let j = model.embed_weights(&z_query)?;
    let kxx = gram_sym(model.kernel_x(), model.x_points())?;
    let kj = &kxx * &j;
    let mut system = j.transpose() * kj;
    for i in 0..n {
        system[(i, i)] += n as f64 * lambda;
    }
    let c = spd_solve_vec(&system, &y)?;
    Ok(NpivEstimator {
        alpha: j * c,
        lambda,
        n,
        x_points: model.x_points().to_vec(),
        kernel_x: model.kernel_x().clone(),
    })
}

impl NpivEstimator {
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `h_hat(x) = K(x_tilde, x)^T alpha` per query point.
    pub fn predict(&self, x_query: &[Point]) -> Result<Vec<f64>> {
        if x_query.is_empty() {
            return Ok(Vec::new());
        }
        let k = gram(&self.kernel_x, &self.x_points, x_query)?;
        Ok((k.transpose() * &self.alpha).iter().copied().collect())
    }

    /// Predictions at every atom of a finite X support.
    pub fn values_on_support(&self, dx: usize) -> Result<DVector<f64>> {
        let atoms: Vec<Point> = (0..dx).map(Point::Atom).collect();
        Ok(DVector::from_vec(self.predict(&atoms)?))
    }

    /// Squared RKHS norm `alpha^T K_xx alpha`.
    pub fn rkhs_norm_sq(&self) -> Result<f64> {
        let kxx = gram_sym(&self.kernel_x, &self.x_points)?;
        Ok((&kxx * &self.alpha).dot(&self.alpha))
    }
}

/// Kernel ridge regression in the embedding space `H_F` with the population
/// kernel `k_F(z, z') = p(.|z)^T K_X p(.|z')`, returning the induced
/// structural-function values on the X support.
///
/// This is the exact-stage-1 reference: it never touches the two-stage
/// machinery, building the `n x n` kernel system directly from the instance.
pub fn krr_in_hf_oracle(
    inst: &DiscreteInstance,
    d2: &[(Point, f64)],
    lambda: f64,
) -> Result<DVector<f64>> {
    if d2.is_empty() {
        return Err(NpivError::EmptyPoints("stage-2 sample"));
    }
    if !(lambda > 0.0) {
        return Err(NpivError::NonPositiveRegularization(lambda));
    }
    let n = d2.len();
    let mut p = DMatrix::zeros(inst.dx(), n);
    for (i, (z, _)) in d2.iter().enumerate() {
        let atom = z
            .atom()
            .filter(|&a| a < inst.dz())
            .ok_or_else(|| NpivError::SupportMismatch("stage-2 instruments must be z-support atoms".into()))?;
        p.set_column(i, &inst.operator_t().row(atom).transpose());
    }
    let y = DVector::from_iterator(n, d2.iter().map(|(_, y)| *y));
    let kf = p.transpose() * inst.kx() * &p;
    let mut system = kf;
    for i in 0..n {
        system[(i, i)] += n as f64 * lambda;
    }
    let c = spd_solve_vec(&system, &y)?;
    Ok(inst.kx() * p * c)
}

/// The `m x m` normal-equations route `(J J^T K_xx + n lambda I) c = J Y`,
/// algebraically identical to [`fit_npiv`]'s `n x n` dual system. Kept as a
/// cross-check oracle only; the dual solve is the canonical path.
pub fn fit_npiv_primal_reference(
    model: &dyn CmeWeights,
    d2: &[(Point, f64)],
    lambda: f64,
) -> Result<NpivEstimator> {
    if d2.is_empty() {
        return Err(NpivError::EmptyPoints("stage-2 sample"));
    }
    let n = d2.len();
    let z_query: Vec<Point> = d2.iter().map(|(z, _)| z.clone()).collect();
    let y = DVector::from_iterator(n, d2.iter().map(|(_, y)| *y));
    let j = model.embed_weights(&z_query)?;
    let kxx = gram_sym(model.kernel_x(), model.x_points())?;
    let m = j.nrows();
    let mut system = &j * j.transpose() * kxx;
    for i in 0..m {
        system[(i, i)] += n as f64 * lambda;
    }
    let alpha = system
        .lu()
        .solve(&(&j * y))
        .ok_or(NpivError::FactorizationFailed(" (primal reference)"))?;
    Ok(NpivEstimator {
        alpha,
        lambda,
        n,
        x_points: model.x_points().to_vec(),
        kernel_x: model.kernel_x().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterSpec;
    use crate::scenarios::{random_instance, reference_instance, sample_discrete};
    use crate::stage1::{fit_stage1, ExactCmeModel};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn discrete_fit(
        seed: u64,
        m: usize,
        n: usize,
        xi: f64,
        lambda: f64,
    ) -> (crate::oracle::DiscreteInstance, NpivEstimator) {
        let inst = reference_instance();
        let (d1, d2) = sample_discrete(&inst, m, n, seed).unwrap();
        let model = fit_stage1(
            &d1,
            KernelSpec::precomputed_identity(inst.dz()).unwrap(),
            KernelSpec::precomputed_identity(inst.dx()).unwrap(),
            &FilterSpec::Tikhonov,
            xi,
        )
        .unwrap();
        let est = fit_npiv(&model, &d2, lambda).unwrap();
        (inst, est)
    }

    #[test]
    fn zero_targets_give_zero_estimator() {
        let inst = reference_instance();
        let (d1, d2) = sample_discrete(&inst, 20, 15, 3).unwrap();
        let model = fit_stage1(
            &d1,
            KernelSpec::precomputed_identity(inst.dz()).unwrap(),
            KernelSpec::precomputed_identity(inst.dx()).unwrap(),
            &FilterSpec::Tikhonov,
            0.1,
        )
        .unwrap();
        let zeroed: Vec<(Point, f64)> = d2.iter().map(|(z, _)| (z.clone(), 0.0)).collect();
        let est = fit_npiv(&model, &zeroed, 0.5).unwrap();
        assert!(est.alpha().amax() <= 1e-15);
        assert!(est.predict(&[Point::Atom(0)]).unwrap()[0].abs() <= 1e-15);
    }

    #[test]
    fn scalar_closed_form_by_hand() {
        // One point in each stage, all Gram entries 1, stage-1 Tikhonov with
        // xi = 1 gives J = 0.5. Dual route: c = Y / (J^2 K + n lambda)
        // = 2 / 1.25 = 1.6 and alpha = J c = 0.8. The primal normal
        // equations give the same alpha directly:
        // (J J^T K + n lambda) alpha = J Y -> 1.25 alpha = 1.
        let d1 = vec![(Point::scalar(0.0), Point::scalar(0.0))];
        let model = fit_stage1(
            &d1,
            KernelSpec::gaussian(1.0).unwrap(),
            KernelSpec::gaussian(1.0).unwrap(),
            &FilterSpec::Tikhonov,
            1.0,
        )
        .unwrap();
        let d2 = vec![(Point::scalar(0.0), 2.0)];
        let est = fit_npiv(&model, &d2, 1.0).unwrap();
        assert_relative_eq!(est.alpha()[0], 0.8, epsilon = 1e-12);
        let pred = est.predict(&[Point::scalar(0.0)]).unwrap();
        assert_relative_eq!(pred[0], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn heavy_regularization_kills_the_estimate() {
        let (_, est) = discrete_fit(1, 50, 40, 0.1, 1e12);
        assert!(est.alpha().norm() <= 1e-10);
    }

    #[test]
    fn predictions_at_training_points_match_definition() {
        let (inst, est) = discrete_fit(7, 60, 40, 0.05, 0.1);
        let atoms: Vec<Point> = (0..inst.dx()).map(Point::Atom).collect();
        let direct = est.predict(&atoms).unwrap();
        let via_support = est.values_on_support(inst.dx()).unwrap();
        for (a, b) in direct.iter().zip(via_support.iter()) {
            assert_eq!(a, b);
        }
        assert!(est.rkhs_norm_sq().unwrap() >= 0.0);
    }

    #[test]
    fn scaling_targets_scales_predictions_exactly() {
        // c = 4 is a power of two: every float operation in the solve scales
        // exactly, so equality is bitwise.
        let inst = reference_instance();
        let (d1, d2) = sample_discrete(&inst, 40, 30, 11).unwrap();
        let model = fit_stage1(
            &d1,
            KernelSpec::precomputed_identity(inst.dz()).unwrap(),
            KernelSpec::precomputed_identity(inst.dx()).unwrap(),
            &FilterSpec::Tikhonov,
            0.1,
        )
        .unwrap();
        let est = fit_npiv(&model, &d2, 0.2).unwrap();
        let scaled: Vec<(Point, f64)> = d2.iter().map(|(z, y)| (z.clone(), 4.0 * y)).collect();
        let est4 = fit_npiv(&model, &scaled, 0.2).unwrap();
        for i in 0..est.alpha().len() {
            assert_eq!(4.0 * est.alpha()[i], est4.alpha()[i]);
        }
    }

    #[test]
    fn dual_and_primal_routes_agree() {
        let inst = reference_instance();
        let (d1, d2) = sample_discrete(&inst, 18, 14, 23).unwrap();
        let model = fit_stage1(
            &d1,
            KernelSpec::precomputed_identity(inst.dz()).unwrap(),
            KernelSpec::precomputed_identity(inst.dx()).unwrap(),
            &FilterSpec::IteratedTikhonov { nu: 2 },
            0.08,
        )
        .unwrap();
        let dual = fit_npiv(&model, &d2, 0.15).unwrap();
        let primal = fit_npiv_primal_reference(&model, &d2, 0.15).unwrap();
        let va = dual.values_on_support(inst.dx()).unwrap();
        let vb = primal.values_on_support(inst.dx()).unwrap();
        for i in 0..inst.dx() {
            assert!((va[i] - vb[i]).abs() <= 1e-8);
        }
    }

    #[test]
    fn exact_cme_fit_matches_hf_kernel_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5 {
            let inst = random_instance(&mut rng, 5);
            let (_, d2) = sample_discrete(&inst, 1, 30, 13).unwrap();
            let exact = ExactCmeModel::new(&inst);
            let est = fit_npiv(&exact, &d2, 0.1).unwrap();
            let via_two_stage = est.values_on_support(inst.dx()).unwrap();
            let via_hf = krr_in_hf_oracle(&inst, &d2, 0.1).unwrap();
            for i in 0..inst.dx() {
                assert!(
                    (via_two_stage[i] - via_hf[i]).abs() <= 1e-8,
                    "mismatch at atom {i}: {} vs {}",
                    via_two_stage[i],
                    via_hf[i]
                );
            }
        }
    }

    #[test]
    fn hf_oracle_zero_targets_and_heavy_lambda() {
        let inst = reference_instance();
        let (_, d2) = sample_discrete(&inst, 1, 20, 3).unwrap();
        let zeroed: Vec<(Point, f64)> = d2.iter().map(|(z, _)| (z.clone(), 0.0)).collect();
        let v = krr_in_hf_oracle(&inst, &zeroed, 0.3).unwrap();
        assert!(v.amax() <= 1e-15);
        let v = krr_in_hf_oracle(&inst, &d2, 1e12).unwrap();
        assert!(v.amax() <= 1e-9);
    }

    #[test]
    fn pseudo_metric_never_exceeds_l2() {
        for seed in 0..10 {
            let (inst, est) = discrete_fit(seed, 80, 60, 0.07, 0.05);
            let values = est.values_on_support(inst.dx()).unwrap();
            let errs = inst.exact_errors(&values).unwrap();
            assert!(
                errs.pseudo <= errs.l2x + 1e-10,
                "Jensen violated: pseudo {} > l2x {}",
                errs.pseudo,
                errs.l2x
            );
        }
    }
}

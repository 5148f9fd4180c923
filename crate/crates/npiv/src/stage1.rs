//! Stage-1 regression: fitting the conditional mean embedding of `X | Z`
//! from `D1 = {(z_i, x_i)}` with a spectral filter.
//!
//! The fitted embedding is carried in dual form: the `m x m` matrix
//! `G = (1/m) g_xi(K_zz / m)` turns a query column `K(z_tilde, z)` into the
//! weight vector `w` with `F_hat(z) = sum_i w_i phi_X(x_i)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{NpivError, Result};
use crate::filters::{filter_scalar, FilterSpec};
use crate::kernels::{gram, gram_sym, KernelSpec, Point};
use crate::linalg::{clamp_psd_eigenvalues, mirror_upper, sym_eigen};
use crate::oracle::DiscreteInstance;

/// Anything that turns query instruments into embedding weight vectors over
/// a fixed stage-1 point set. Implemented by the fitted model and by the
/// exact-CME reference used in equivalence checks.
pub trait CmeWeights {
    fn x_points(&self) -> &[Point];
    fn kernel_x(&self) -> &KernelSpec;
    /// Weight matrix `W` (`m x q`): column `j` carries the expansion of
    /// `F_hat(z_j)` over `phi_X` at the stage-1 X points.
    fn embed_weights(&self, z_query: &[Point]) -> Result<DMatrix<f64>>;
}

/// Cached eigendecomposition of `K_zz / m`, reusable across filters and
/// regularization levels on the same sample.
pub struct Stage1Factors {
    z_points: Vec<Point>,
    x_points: Vec<Point>,
    kernel_z: KernelSpec,
    kernel_x: KernelSpec,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

impl Stage1Factors {
    pub fn new(
        d1: &[(Point, Point)],
        kernel_z: KernelSpec,
        kernel_x: KernelSpec,
    ) -> Result<Self> {
        if d1.is_empty() {
            return Err(NpivError::EmptyPoints("stage-1 sample"));
        }
        let z_points: Vec<Point> = d1.iter().map(|(z, _)| z.clone()).collect();
        let x_points: Vec<Point> = d1.iter().map(|(_, x)| x.clone()).collect();
        let m = z_points.len() as f64;
        let kzz = gram_sym(&kernel_z, &z_points)? / m;
        let mut eig = sym_eigen(&kzz);
        clamp_psd_eigenvalues(&mut eig.values, kernel_z.kappa_sq())?;
        let top = eig.values[0];
        if top > kernel_z.kappa_sq() * (1.0 + 1e-10) {
            return Err(NpivError::SpectrumExceedsBound {
                eig: top,
                kappa_sq: kernel_z.kappa_sq(),
            });
        }
        Ok(Stage1Factors {
            z_points,
            x_points,
            kernel_z,
            kernel_x,
            eigvals: eig.values,
            eigvecs: eig.vectors,
        })
    }

    /// Applies a filter at level `xi` to the cached spectrum.
    pub fn fit(&self, filter: &FilterSpec, xi: f64) -> Result<Stage1Model> {
        if let FilterSpec::Landweber { step_tau } = filter {
            if step_tau * self.kernel_z.kappa_sq() > 1.0 {
                return Err(NpivError::LandweberDivergent(
                    step_tau * self.kernel_z.kappa_sq(),
                ));
            }
        }
        let m = self.z_points.len();
        let mut dual = DMatrix::zeros(m, m);
        for (j, &v) in self.eigvals.iter().enumerate() {
            let g = filter_scalar(filter, v, xi)? / m as f64;
            let col = self.eigvecs.column(j);
            for r in 0..m {
                let grc = g * col[r];
                for c in r..m {
                    dual[(r, c)] += grc * col[c];
                }
            }
        }
        mirror_upper(&mut dual);
        Ok(Stage1Model {
            z_points: self.z_points.clone(),
            x_points: self.x_points.clone(),
            dual,
            xi,
            kernel_z: self.kernel_z.clone(),
            kernel_x: self.kernel_x.clone(),
        })
    }
}

/// Fitted conditional-mean-embedding regressor.
#[derive(Debug, Clone)]
pub struct Stage1Model {
    z_points: Vec<Point>,
    x_points: Vec<Point>,
    /// `G = (1/m) g_xi(K_zz / m)`; symmetric.
    dual: DMatrix<f64>,
    xi: f64,
    kernel_z: KernelSpec,
    kernel_x: KernelSpec,
}

/// Fits stage 1: `dual = (1/m) g_xi(K_zz / m)`.
pub fn fit_stage1(
    d1: &[(Point, Point)],
    kernel_z: KernelSpec,
    kernel_x: KernelSpec,
    filter: &FilterSpec,
    xi: f64,
) -> Result<Stage1Model> {
    Stage1Factors::new(d1, kernel_z, kernel_x)?.fit(filter, xi)
}

impl Stage1Model {
    pub fn len(&self) -> usize {
        self.z_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_points.is_empty()
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn dual(&self) -> &DMatrix<f64> {
        &self.dual
    }

    pub fn z_points(&self) -> &[Point] {
        &self.z_points
    }

    pub fn kernel_z(&self) -> &KernelSpec {
        &self.kernel_z
    }

    /// Exact `L2(pi_Z; H_X)` squared error against the instance's true
    /// embedding. Requires stage-1 points drawn from the instance supports
    /// and `kernel_x` precomputed over the X support; weights attached to
    /// duplicate X atoms are summed.
    pub fn l2_error(&self, inst: &DiscreteInstance) -> Result<f64> {
        if self.kernel_x.support_size() != Some(inst.dx()) {
            return Err(NpivError::SupportMismatch(
                "stage-1 kernel_x is not precomputed over the instance X support".into(),
            ));
        }
        let queries: Vec<Point> = (0..inst.dz()).map(Point::Atom).collect();
        let w = self.embed_weights(&queries)?;
        let mut aggregated = DMatrix::zeros(inst.dx(), inst.dz());
        for (i, x) in self.x_points.iter().enumerate() {
            let atom = x.atom().ok_or_else(|| {
                NpivError::SupportMismatch("stage-1 X points must be support atoms".into())
            })?;
            if atom >= inst.dx() {
                return Err(NpivError::IndexOutOfRange {
                    index: atom,
                    size: inst.dx(),
                });
            }
            for q in 0..inst.dz() {
                aggregated[(atom, q)] += w[(i, q)];
            }
        }
        inst.cme_l2_error(&aggregated)
    }
}

impl CmeWeights for Stage1Model {
    fn x_points(&self) -> &[Point] {
        &self.x_points
    }

    fn kernel_x(&self) -> &KernelSpec {
        &self.kernel_x
    }

    fn embed_weights(&self, z_query: &[Point]) -> Result<DMatrix<f64>> {
        if z_query.is_empty() {
            return Ok(DMatrix::zeros(self.z_points.len(), 0));
        }
        let kzq = gram(&self.kernel_z, &self.z_points, z_query)?;
        Ok(&self.dual * kzq)
    }
}

/// The population embedding of a discrete instance exposed through the
/// weight interface: one X point per support atom, and the query weights are
/// the exact conditional probabilities.
pub struct ExactCmeModel<'a> {
    inst: &'a DiscreteInstance,
    x_points: Vec<Point>,
}

impl<'a> ExactCmeModel<'a> {
    pub fn new(inst: &'a DiscreteInstance) -> Self {
        ExactCmeModel {
            inst,
            x_points: (0..inst.dx()).map(Point::Atom).collect(),
        }
    }
}

impl CmeWeights for ExactCmeModel<'_> {
    fn x_points(&self) -> &[Point] {
        &self.x_points
    }

    fn kernel_x(&self) -> &KernelSpec {
        self.inst.kernel_x()
    }

    fn embed_weights(&self, z_query: &[Point]) -> Result<DMatrix<f64>> {
        let mut w = DMatrix::zeros(self.inst.dx(), z_query.len());
        for (j, z) in z_query.iter().enumerate() {
            let atom = z.atom().ok_or_else(|| {
                NpivError::SupportMismatch("exact CME queries must be support atoms".into())
            })?;
            if atom >= self.inst.dz() {
                return Err(NpivError::IndexOutOfRange {
                    index: atom,
                    size: self.inst.dz(),
                });
            }
            w.set_column(j, &self.inst.operator_t().row(atom).transpose());
        }
        Ok(w)
    }
}

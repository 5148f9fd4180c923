//! Positive-definite kernels and Gram-matrix assembly for the input spaces.
//!
//! Everything downstream assumes bounded kernels (`k(x,x) <= kappa_sq`),
//! symmetric Gram matrices and spectra that are PSD up to rounding noise; the
//! clamp that repairs the latter lives in [`crate::linalg`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{NpivError, Result};
use crate::linalg::mirror_upper;

/// A point in an input space: a real vector, or an index into the fixed
/// support of a precomputed kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Point {
    Vector(Vec<f64>),
    Atom(usize),
}

impl Point {
    pub fn scalar(x: f64) -> Self {
        Point::Vector(vec![x])
    }

    pub fn atom(&self) -> Option<usize> {
        match self {
            Point::Atom(i) => Some(*i),
            Point::Vector(_) => None,
        }
    }
}

/// Matern smoothness orders with closed-form kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternOrder {
    Half,
    ThreeHalves,
    FiveHalves,
}

#[derive(Debug, Clone)]
pub enum KernelFamily {
    Gaussian { lengthscale: f64 },
    Laplace { lengthscale: f64 },
    Matern { order: MaternOrder, lengthscale: f64 },
    Linear,
    /// Gram matrix over a fixed finite point set; points are indices.
    Precomputed { gram: DMatrix<f64> },
}

/// A kernel family together with `kappa_sq`, the almost-sure bound on
/// `k(x, x)`.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    family: KernelFamily,
    kappa_sq: f64,
}

impl KernelSpec {
    pub fn gaussian(lengthscale: f64) -> Result<Self> {
        Self::stationary(KernelFamily::Gaussian { lengthscale }, lengthscale)
    }

    pub fn laplace(lengthscale: f64) -> Result<Self> {
        Self::stationary(KernelFamily::Laplace { lengthscale }, lengthscale)
    }

    pub fn matern(order: MaternOrder, lengthscale: f64) -> Result<Self> {
        Self::stationary(KernelFamily::Matern { order, lengthscale }, lengthscale)
    }

    fn stationary(family: KernelFamily, lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0) {
            return Err(NpivError::InvalidInput(format!(
                "lengthscale must be positive, got {lengthscale}"
            )));
        }
        // k(x,x) = 1 for the stationary families.
        Ok(KernelSpec { family, kappa_sq: 1.0 })
    }

    /// Linear kernel with a caller-supplied bound on `<x, x>`.
    pub fn linear(kappa_sq: f64) -> Result<Self> {
        if !(kappa_sq > 0.0) {
            return Err(NpivError::InvalidInput(format!(
                "kappa_sq must be positive, got {kappa_sq}"
            )));
        }
        Ok(KernelSpec {
            family: KernelFamily::Linear,
            kappa_sq,
        })
    }

    /// Kernel given by an explicit Gram matrix over a fixed finite set.
    ///
    /// The matrix must be symmetric with minimum eigenvalue
    /// `>= -1e-10 * kappa_sq`, where `kappa_sq` is its largest diagonal
    /// entry.
    pub fn precomputed(gram: DMatrix<f64>) -> Result<Self> {
        crate::linalg::check_square_symmetric(&gram)?;
        if gram.is_empty() {
            return Err(NpivError::EmptyPoints("precomputed Gram"));
        }
        let kappa_sq = gram.diagonal().max();
        if !(kappa_sq > 0.0) {
            return Err(NpivError::InvalidInput(
                "precomputed Gram must have a positive diagonal entry".into(),
            ));
        }
        let mut eig = crate::linalg::sym_eigen(&gram).values;
        crate::linalg::clamp_psd_eigenvalues(&mut eig, kappa_sq)?;
        Ok(KernelSpec {
            family: KernelFamily::Precomputed { gram },
            kappa_sq,
        })
    }

    /// Identity Gram over `size` atoms (orthonormal features).
    pub fn precomputed_identity(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(NpivError::EmptyPoints("precomputed Gram"));
        }
        Ok(KernelSpec {
            family: KernelFamily::Precomputed {
                gram: DMatrix::identity(size, size),
            },
            kappa_sq: 1.0,
        })
    }

    pub fn kappa_sq(&self) -> f64 {
        self.kappa_sq
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    /// Number of support atoms for a precomputed kernel.
    pub fn support_size(&self) -> Option<usize> {
        match &self.family {
            KernelFamily::Precomputed { gram } => Some(gram.nrows()),
            _ => None,
        }
    }

    pub fn gram_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.family {
            KernelFamily::Precomputed { gram } => Some(gram),
            _ => None,
        }
    }
}

fn distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(NpivError::DimensionMismatch {
            context: "kernel points",
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Evaluates `k(x, y)`.
pub fn kernel_eval(spec: &KernelSpec, x: &Point, y: &Point) -> Result<f64> {
    match (&spec.family, x, y) {
        (KernelFamily::Precomputed { gram }, Point::Atom(i), Point::Atom(j)) => {
            let n = gram.nrows();
            if *i >= n {
                return Err(NpivError::IndexOutOfRange { index: *i, size: n });
            }
            if *j >= n {
                return Err(NpivError::IndexOutOfRange { index: *j, size: n });
            }
            Ok(gram[(*i, *j)])
        }
        (KernelFamily::Precomputed { .. }, _, _) => Err(NpivError::InvalidInput(
            "precomputed kernels take atom indices, not vectors".into(),
        )),
        (_, Point::Vector(a), Point::Vector(b)) => kernel_eval_vec(spec, a, b),
        _ => Err(NpivError::InvalidInput(
            "vector kernels take vector points, not atom indices".into(),
        )),
    }
}

fn kernel_eval_vec(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    match &spec.family {
        KernelFamily::Gaussian { lengthscale } => {
            let r = distance(x, y)?;
            Ok((-r * r / (2.0 * lengthscale * lengthscale)).exp())
        }
        KernelFamily::Laplace { lengthscale } => {
            let r = distance(x, y)?;
            Ok((-r / lengthscale).exp())
        }
        KernelFamily::Matern { order, lengthscale } => {
            let r = distance(x, y)? / lengthscale;
            Ok(match order {
                MaternOrder::Half => (-r).exp(),
                MaternOrder::ThreeHalves => {
                    let s = 3f64.sqrt() * r;
                    (1.0 + s) * (-s).exp()
                }
                MaternOrder::FiveHalves => {
                    let s = 5f64.sqrt() * r;
                    (1.0 + s + s * s / 3.0) * (-s).exp()
                }
            })
        }
        KernelFamily::Linear => {
            if x.len() != y.len() {
                return Err(NpivError::DimensionMismatch {
                    context: "kernel points",
                    expected: x.len(),
                    got: y.len(),
                });
            }
            Ok(x.iter().zip(y).map(|(a, b)| a * b).sum())
        }
        KernelFamily::Precomputed { .. } => unreachable!("handled by kernel_eval"),
    }
}

/// Gram matrix `M[i, j] = k(rows[i], cols[j])`.
///
/// When `rows` and `cols` are the same slice the upper triangle is assembled
/// and mirrored, so the result is symmetric to the last bit.
pub fn gram(spec: &KernelSpec, rows: &[Point], cols: &[Point]) -> Result<DMatrix<f64>> {
    if rows.is_empty() || cols.is_empty() {
        return Err(NpivError::EmptyPoints("gram"));
    }
    if rows.len() == cols.len() && std::ptr::eq(rows.as_ptr(), cols.as_ptr()) {
        return gram_sym(spec, rows);
    }
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            m[(i, j)] = kernel_eval(spec, r, c)?;
        }
    }
    Ok(m)
}

/// Symmetric Gram matrix over one point set.
pub fn gram_sym(spec: &KernelSpec, points: &[Point]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(NpivError::EmptyPoints("gram"));
    }
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = kernel_eval(spec, &points[i], &points[j])?;
        }
    }
    mirror_upper(&mut m);
    Ok(m)
}

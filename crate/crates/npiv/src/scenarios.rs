//! Reproducible synthetic data generation.
//!
//! Sampling follows the indirect-regression reduction: `Z ~ pi_Z`,
//! `X | Z ~ cond`, and for stage 2 `Y = r0(Z) + zeta` with
//! `zeta | Z ~ Normal(0, sigma^2(z))`, which satisfies `E[Y | Z] = T h0 (Z)`
//! and hence embodies the instrumental-variable model with
//! `U = T h0(Z) - h0(X) + zeta`.
//!
//! Stage-1 and stage-2 draws come from independent generator streams derived
//! from the master seed, so the two datasets are disjoint i.i.d. samples and
//! changing one sample size never perturbs the other dataset. Identical
//! `(spec, seed)` pairs yield bit-identical data.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{NpivError, Result};
use crate::kernels::{KernelSpec, Point};
use crate::oracle::{DiscreteInstance, NoiseModel};

const STREAM_D1: u64 = 1;
const STREAM_D2: u64 = 2;
const STREAM_REPLICATE_BASE: u64 = 0x9e3779b97f4a7c15;

/// SplitMix64 finalizer; used to derive independent stream seeds from a
/// master seed and tags.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Seed for a named stream of a (seed, replicate) pair. Replicates own
/// disjoint streams, so they may run in any order or in parallel.
pub fn derive_seed(master: u64, replicate: u64, stream: u64) -> u64 {
    mix(mix(master ^ STREAM_REPLICATE_BASE.wrapping_mul(replicate.wrapping_add(1))) ^ stream)
}

fn stream_rng(master: u64, replicate: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, replicate, stream))
}

fn cumulative(p: &DVector<f64>) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect()
}

fn draw_categorical(rng: &mut ChaCha8Rng, cdf: &[f64]) -> usize {
    let u: f64 = rng.gen();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Stage-1 sample compressed to joint atom counts (`d_z x d_x`).
#[derive(Debug, Clone)]
pub struct GroupedStage1Sample {
    pub counts: DMatrix<f64>,
    pub m: usize,
}

/// Stage-2 sample compressed to per-z-atom response sums and counts.
#[derive(Debug, Clone)]
pub struct GroupedStage2Sample {
    pub y_sum: DVector<f64>,
    pub count: DVector<f64>,
    pub n: usize,
}

struct DiscreteSampler<'a> {
    inst: &'a DiscreteInstance,
    cdf_z: Vec<f64>,
    cdf_rows: Vec<Vec<f64>>,
}

impl<'a> DiscreteSampler<'a> {
    fn new(inst: &'a DiscreteInstance) -> Self {
        let cdf_z = cumulative(inst.pi_z());
        let cdf_rows = (0..inst.dz())
            .map(|z| cumulative(&inst.operator_t().row(z).transpose()))
            .collect();
        DiscreteSampler { inst, cdf_z, cdf_rows }
    }

    fn draw_pair(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let z = draw_categorical(rng, &self.cdf_z);
        let x = draw_categorical(rng, &self.cdf_rows[z]);
        (z, x)
    }

    fn draw_response(&self, rng: &mut ChaCha8Rng) -> (usize, f64) {
        let z = draw_categorical(rng, &self.cdf_z);
        let NoiseModel::Gaussian { sigma } = self.inst.noise();
        let noise: f64 = rng.sample(StandardNormal);
        (z, self.inst.r0()[z] + sigma[z] * noise)
    }
}

/// Draws `m` stage-1 pairs and `n` stage-2 pairs from the instance; points
/// are support-atom indices.
pub fn sample_discrete(
    inst: &DiscreteInstance,
    m: usize,
    n: usize,
    seed: u64,
) -> Result<(Vec<(Point, Point)>, Vec<(Point, f64)>)> {
    sample_discrete_replicate(inst, m, n, seed, 0)
}

/// Same as [`sample_discrete`] with an explicit replicate index.
pub fn sample_discrete_replicate(
    inst: &DiscreteInstance,
    m: usize,
    n: usize,
    seed: u64,
    replicate: u64,
) -> Result<(Vec<(Point, Point)>, Vec<(Point, f64)>)> {
    check_sizes(m, n)?;
    let sampler = DiscreteSampler::new(inst);
    let mut rng1 = stream_rng(seed, replicate, STREAM_D1);
    let d1 = (0..m)
        .map(|_| {
            let (z, x) = sampler.draw_pair(&mut rng1);
            (Point::Atom(z), Point::Atom(x))
        })
        .collect();
    let mut rng2 = stream_rng(seed, replicate, STREAM_D2);
    let d2 = (0..n)
        .map(|_| {
            let (z, y) = sampler.draw_response(&mut rng2);
            (Point::Atom(z), y)
        })
        .collect();
    Ok((d1, d2))
}

/// Draws the same datasets as [`sample_discrete_replicate`] but accumulates
/// them into grouped form, never materializing the point lists. The draw
/// streams are identical, so grouped and listed samples agree exactly.
pub fn sample_discrete_grouped(
    inst: &DiscreteInstance,
    m: usize,
    n: usize,
    seed: u64,
    replicate: u64,
) -> Result<(GroupedStage1Sample, GroupedStage2Sample)> {
    check_sizes(m, n)?;
    let sampler = DiscreteSampler::new(inst);
    let mut counts = DMatrix::zeros(inst.dz(), inst.dx());
    let mut rng1 = stream_rng(seed, replicate, STREAM_D1);
    for _ in 0..m {
        let (z, x) = sampler.draw_pair(&mut rng1);
        counts[(z, x)] += 1.0;
    }
    let mut y_sum = DVector::zeros(inst.dz());
    let mut count = DVector::zeros(inst.dz());
    let mut rng2 = stream_rng(seed, replicate, STREAM_D2);
    for _ in 0..n {
        let (z, y) = sampler.draw_response(&mut rng2);
        y_sum[z] += y;
        count[z] += 1.0;
    }
    Ok((
        GroupedStage1Sample { counts, m },
        GroupedStage2Sample { y_sum, count, n },
    ))
}

fn check_sizes(m: usize, n: usize) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(NpivError::InvalidInput(format!(
            "sample sizes must be >= 1, got m={m}, n={n}"
        )));
    }
    Ok(())
}

/// Continuous confounding demonstration design.
#[derive(Debug, Clone, Copy)]
pub struct ContinuousDemoParams {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub confounding_strength: f64,
}

/// Datasets from the continuous demo; stage-2 rows keep the `x` draw so a
/// confounded direct regression of `Y` on `X` can be fit for comparison.
#[derive(Debug, Clone)]
pub struct ContinuousDemoData {
    /// Stage-1 `(z, x)` pairs.
    pub d1: Vec<(f64, f64)>,
    /// Stage-2 `(z, x, y)` triples.
    pub d2: Vec<(f64, f64, f64)>,
}

/// Structural function of the demo on `x in (0, 1)`.
pub fn demo_h0(x: f64) -> f64 {
    ((16.0 * x - 8.0).abs() + 1.0).ln() * (x - 0.5).signum()
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// `Z ~ Uniform[-3, 3]`, `V ~ Normal(0, 1)`, `X = sigmoid(Z + V)`,
/// `U = confounding_strength * V + Normal(0, 0.1)`, `Y = h0(X) + U`.
///
/// `E[U | Z] = 0` holds by construction while `X` and `U` share the noise
/// `V`, so the direct regression of `Y` on `X` is biased for `h0` whenever
/// `confounding_strength > 0`. The sigmoid maps `Z + V` onto `(0, 1)`, the
/// domain of [`demo_h0`].
pub fn continuous_demo(params: &ContinuousDemoParams) -> Result<ContinuousDemoData> {
    check_sizes(params.m, params.n)?;
    let mut rng1 = stream_rng(params.seed, 0, STREAM_D1);
    let d1 = (0..params.m)
        .map(|_| {
            let z = rng1.gen_range(-3.0..3.0);
            let v: f64 = rng1.sample(StandardNormal);
            (z, sigmoid(z + v))
        })
        .collect();
    let mut rng2 = stream_rng(params.seed, 0, STREAM_D2);
    let d2 = (0..params.n)
        .map(|_| {
            let z = rng2.gen_range(-3.0..3.0);
            let v: f64 = rng2.sample(StandardNormal);
            let x = sigmoid(z + v);
            let eps: f64 = rng2.sample(StandardNormal);
            let u = params.confounding_strength * v + 0.1 * eps;
            (z, x, demo_h0(x) + u)
        })
        .collect();
    Ok(ContinuousDemoData { d1, d2 })
}

// ---------------------------------------------------------------------------
// Instance builders.

/// The 3x2 reference instance: `cond` rows `(0.5, 0.5, 0)` and
/// `(0, 0.5, 0.5)`, uniform `pi_Z`, `h0 = (2, -1, 0)`.
///
/// `T` has the null direction `(1, -1, 1)`, the minimum-norm solution is
/// `(1, 0, -1)` and the `L2(pi_X)` distance between `h0` and `h*` is 1.
pub fn reference_instance() -> DiscreteInstance {
    DiscreteInstance::new(
        vec![0.0, 1.0, 2.0],
        vec![0.0, 1.0],
        vec![0.5, 0.5],
        DMatrix::from_row_slice(2, 3, &[0.5, 0.5, 0.0, 0.0, 0.5, 0.5]),
        vec![2.0, -1.0, 0.0],
        NoiseModel::Gaussian { sigma: vec![0.5, 0.5] },
        None,
    )
    .expect("reference instance is valid")
}

/// Identity instance (`X = Z`) with uniform marginal; fully identified.
pub fn identity_uniform_instance(d: usize, sigma: f64) -> DiscreteInstance {
    DiscreteInstance::new(
        (0..d).map(|i| i as f64).collect(),
        (0..d).map(|i| i as f64).collect(),
        vec![1.0 / d as f64; d],
        DMatrix::identity(d, d),
        (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(),
        NoiseModel::Gaussian { sigma: vec![sigma; d] },
        None,
    )
    .expect("identity instance is valid")
}

/// Identity instance with polynomial marginal decay `pi(b) ~ b^(-1/p_x)` and
/// structural values `h0(b) = (b+1)^(-h0_decay)`.
///
/// With the identity kernel the covariance eigenvalues equal the marginal
/// weights, so `p_x` controls the eigenvalue decay exponent while `h0_decay`
/// controls the source smoothness; `gamma0 = gamma1 = 1` and `c_F = 0`.
pub fn identity_polydecay_instance(
    d: usize,
    p_x: f64,
    h0_decay: f64,
    sigma: f64,
) -> DiscreteInstance {
    let raw: Vec<f64> = (1..=d).map(|b| (b as f64).powf(-1.0 / p_x)).collect();
    let total: f64 = raw.iter().sum();
    let pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
    DiscreteInstance::new(
        (0..d).map(|i| i as f64).collect(),
        (0..d).map(|i| i as f64).collect(),
        pi,
        DMatrix::identity(d, d),
        (1..=d).map(|b| (b as f64).powf(-h0_decay)).collect(),
        NoiseModel::Gaussian { sigma: vec![sigma; d] },
        None,
    )
    .expect("polydecay instance is valid")
}

/// Shared-eigenbasis instance with a smooth conditional mean embedding:
/// `X = Z` deterministically, `pi(b) ~ b^(-1/p_z)`, and
/// `K_X = diag(pi_b^(beta_z - 1))`.
///
/// In the atom eigenbasis the embedding coefficient in direction `b` has
/// squared norm `pi_b^(beta_z - 1)`, i.e. a stage-1 source condition of
/// order `beta_z` whose constant does not grow with `d`. With `beta_z`
/// well above 2 the Tikhonov stage-1 bias saturates at `xi^2` while
/// higher-qualification filters track `xi^(beta_z - p_z)`.
pub fn saturation_instance(d: usize, p_z: f64, beta_z: f64) -> DiscreteInstance {
    let raw: Vec<f64> = (1..=d).map(|b| (b as f64).powf(-1.0 / p_z)).collect();
    let total: f64 = raw.iter().sum();
    let pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let kx = DMatrix::from_diagonal(&DVector::from_iterator(
        d,
        pi.iter().map(|p| p.powf(beta_z - 1.0)),
    ));
    DiscreteInstance::new(
        (0..d).map(|i| i as f64).collect(),
        (0..d).map(|i| i as f64).collect(),
        pi,
        DMatrix::identity(d, d),
        vec![1.0; d],
        NoiseModel::Gaussian { sigma: vec![0.0; d] },
        Some(KernelSpec::precomputed(kx).expect("diagonal PSD Gram")),
    )
    .expect("saturation instance is valid")
}

/// Random instance for cross-check suites: random supports sizes up to
/// `max_d`, random law, and a random PSD kernel on half of the draws.
pub fn random_instance(rng: &mut ChaCha8Rng, max_d: usize) -> DiscreteInstance {
    let d_x = rng.gen_range(2..=max_d);
    let d_z = rng.gen_range(2..=max_d);
    let pi_z = random_simplex(rng, d_z);
    let mut cond = DMatrix::zeros(d_z, d_x);
    for z in 0..d_z {
        let row = random_simplex(rng, d_x);
        for x in 0..d_x {
            cond[(z, x)] = row[x];
        }
    }
    let h0: Vec<f64> = (0..d_x).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let sigma: Vec<f64> = (0..d_z).map(|_| rng.gen_range(0.05..0.5)).collect();
    let kernel = if rng.gen_bool(0.5) {
        None
    } else {
        let a = DMatrix::from_fn(d_x, d_x, |_, _| rng.gen_range(-1.0..1.0));
        let mut k = &a * a.transpose();
        let top = crate::linalg::sym_eigen(&k).values[0];
        k /= top / 0.9;
        Some(KernelSpec::precomputed(k).expect("scaled PSD Gram"))
    };
    DiscreteInstance::new(
        (0..d_x).map(|i| i as f64).collect(),
        (0..d_z).map(|i| i as f64).collect(),
        pi_z,
        cond,
        h0,
        NoiseModel::Gaussian { sigma },
        kernel,
    )
    .expect("random instance is valid")
}

fn random_simplex(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0f64..1.0).ln().neg() + 0.2).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

use std::ops::Neg;

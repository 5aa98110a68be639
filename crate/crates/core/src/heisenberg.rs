//! The Heisenberg group `H^n` in exponential coordinates
//! `(x^1, …, x^{2n}, x^{2n+1})` (0-based in code: the vertical coordinate has
//! index `2n`).

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::linalg;

/// A point of `H^n` in exponential coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HPoint(pub DVector<f64>);

impl HPoint {
    pub fn new(coords: &[f64]) -> Result<Self> {
        if coords.len() < 3 || coords.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch { expected: 2 * (coords.len() / 2) + 1, got: coords.len() });
        }
        Ok(Self(DVector::from_column_slice(coords)))
    }

    pub fn identity(n: usize) -> Self {
        Self(DVector::zeros(2 * n + 1))
    }

    /// The `n` of `H^n`.
    pub fn n(&self) -> usize {
        self.0.len() / 2
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn horizontal_norm(&self) -> f64 {
        self.0.rows(0, 2 * self.n()).norm()
    }

    pub fn vertical(&self) -> f64 {
        self.0[2 * self.n()]
    }

    pub fn inverse(&self) -> Self {
        Self(-&self.0)
    }
}

/// Sigma-type form of the Heisenberg group law.
pub fn group_multiply(p: &HPoint, q: &HPoint) -> Result<HPoint> {
    if p.0.len() != q.0.len() {
        return Err(Error::DimensionMismatch { expected: p.0.len(), got: q.0.len() });
    }
    Ok(HPoint(mul(&p.0, &q.0)))
}

pub(crate) fn mul(x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = x.len() / 2;
    let mut z = x + y;
    z[2 * n] += 0.5 * symplectic(x, y);
    z
}

// Σ_i x^i y^{i+n} − y^i x^{i+n}
pub(crate) fn symplectic(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = x.len() / 2;
    (0..n).map(|i| x[i] * y[i + n] - y[i] * x[i + n]).sum()
}

/// Anisotropic dilation `δ_λ`: horizontal coordinates scale by `λ`, the
/// vertical one by `λ²`.
pub fn dilation(p: &HPoint, lambda: f64) -> HPoint {
    let mut c = &p.0 * lambda;
    let k = 2 * p.n();
    c[k] *= lambda;
    HPoint(c)
}

/// Coordinate components of the left-invariant fields `e_1..e_{2n+1}` at `p`.
pub fn left_invariant_frame(p: &HPoint) -> Vec<DVector<f64>> {
    let n = p.n();
    let x = &p.0;
    (0..=2 * n)
        .map(|k| {
            let mut v = DVector::zeros(2 * n + 1);
            v[k] = 1.0;
            if k < n {
                v[2 * n] = -0.5 * x[k + n];
            } else if k < 2 * n {
                v[2 * n] = 0.5 * x[k - n];
            }
            v
        })
        .collect()
}

/// Initial covector of a geodesic through the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicState {
    pub mu0: f64,
    pub mu: DVector<f64>,
}

impl GeodesicState {
    pub fn new(mu0: f64, mu: &[f64]) -> Self {
        Self { mu0, mu: DVector::from_column_slice(mu) }
    }

    pub fn speed(&self) -> f64 {
        self.mu.norm()
    }
}

pub(crate) fn sinc(w: f64) -> f64 {
    if w.abs() < 1e-4 {
        1.0 - w * w / 6.0
    } else {
        libm::sin(w) / w
    }
}

/// `ε(μ_0) = sqrt(2(1 − cos μ_0))/|μ_0|`, written as `|sinc(μ_0/2)|`.
pub fn epsilon(mu0: f64) -> f64 {
    sinc(0.5 * mu0).abs()
}

/// Vertical factor `(w − sin w)/(2w²)`, with a series branch near 0.
pub fn vertical_factor(w: f64) -> f64 {
    if w.abs() < 1e-2 {
        let w2 = w * w;
        w * (1.0 / 12.0 - w2 * (1.0 / 240.0 - w2 * (1.0 / 10080.0 - w2 / 725760.0)))
    } else {
        (w - libm::sin(w)) / (2.0 * w * w)
    }
}

/// Closed-form CC geodesic from the identity, evaluated at time `t`.
pub fn geodesic(s: &GeodesicState, t: f64) -> HPoint {
    let n = s.mu.len() / 2;
    let w = s.mu0 * t;
    // sin(w)/μ0 and (1 − cos w)/μ0 in forms that stay accurate as μ0 → 0
    let a = t * sinc(w);
    let b = t * libm::sin(0.5 * w) * sinc(0.5 * w);
    let mut c = DVector::zeros(2 * n + 1);
    for j in 0..n {
        let (mj, mjn) = (s.mu[j], s.mu[j + n]);
        c[j] = mj * a - mjn * b;
        c[j + n] = mj * b + mjn * a;
    }
    c[2 * n] = s.mu.norm_squared() * t * t * vertical_factor(w);
    HPoint(c)
}

/// Parametrization of the closed unit ball `B_1` by `(μ_0, μ̄)`, with
/// `μ_0 ∈ [−2π, 2π]` and `|μ̄| ≤ 1`.
pub fn ball_parametrization(mu0: f64, mubar: &[f64]) -> Result<HPoint> {
    if !(mu0.abs() <= 2.0 * PI * (1.0 + 1e-14)) {
        return Err(Error::OutOfDomain("mu0 must lie in [-2π, 2π]"));
    }
    if mubar.is_empty() || !mubar.len().is_multiple_of(2) {
        return Err(Error::DimensionMismatch { expected: 2 * (mubar.len() / 2).max(1), got: mubar.len() });
    }
    let r2: f64 = mubar.iter().map(|m| m * m).sum();
    if !(r2 <= 1.0 + 1e-12) {
        return Err(Error::OutOfDomain("|mubar| must not exceed 1"));
    }
    let k = mubar.len();
    let e = epsilon(mu0);
    let mut c = DVector::zeros(k + 1);
    for i in 0..k {
        c[i] = e * mubar[i];
    }
    c[k] = vertical_factor(mu0) * r2;
    Ok(HPoint(c))
}

// z/|x|² as a function of μ0 on [0, 2π)
fn ratio(mu: f64) -> f64 {
    let e = epsilon(mu);
    vertical_factor(mu) / (e * e)
}

fn ratio_derivative(mu: f64) -> f64 {
    let s2 = {
        let s = libm::sin(0.5 * mu);
        s * s
    };
    if mu < 1e-3 {
        return 1.0 / 12.0 + mu * mu / 240.0;
    }
    (4.0 * s2 * s2 - (mu - libm::sin(mu)) * libm::sin(mu)) / (16.0 * s2 * s2)
}

/// Solves `ratio(μ) = target` for `μ ∈ [0, 2π)`, keeping a bracket and
/// taking Newton steps only when they stay inside it.
fn solve_mu0(target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 2.0 * PI);
    let mut mu = (12.0 * target).min(PI);
    for _ in 0..200 {
        let f = ratio(mu) - target;
        if f > 0.0 {
            hi = mu;
        } else {
            lo = mu;
        }
        if hi - lo < 1e-12 {
            break;
        }
        let step = f / ratio_derivative(mu);
        if step.abs() < 1e-15 {
            break;
        }
        let next = mu - step;
        mu = if next > lo && next < hi && step.is_finite() { next } else { 0.5 * (lo + hi) };
    }
    mu
}

/// Carnot–Carathéodory distance from the identity.
pub fn cc_distance(p: &HPoint) -> f64 {
    let a = p.horizontal_norm();
    let z = p.vertical().abs();
    if a == 0.0 {
        return libm::sqrt(4.0 * PI * z);
    }
    if z == 0.0 {
        return a;
    }
    let mu = solve_mu0(z / (a * a));
    if mu <= PI {
        a / epsilon(mu)
    } else {
        libm::sqrt(z / vertical_factor(mu))
    }
}

/// CC distance between two points, `ρ(p^{-1}·q)`.
pub fn cc_distance_between(p: &HPoint, q: &HPoint) -> Result<f64> {
    Ok(cc_distance(&group_multiply(&p.inverse(), q)?))
}

/// Monte-Carlo estimate of the metric factor with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricFactorEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub hits: u64,
    pub samples: u64,
    pub box_volume: f64,
}

impl MetricFactorEstimate {
    pub fn from_hits(box_volume: f64, hits: u64, samples: u64) -> Self {
        let q = hits as f64 / samples as f64;
        Self {
            mean: box_volume * q,
            std_error: box_volume * libm::sqrt(q * (1.0 - q) / samples as f64),
            hits,
            samples,
            box_volume,
        }
    }
}

/// Number of samples drawn by one Monte-Carlo partition. Partition `k` of a
/// run uses the ChaCha8 stream `k` of the run's seed, so the result does not
/// depend on how partitions are distributed over workers.
pub const PARTITION_SIZE: u64 = 1 << 16;

/// Samples the slice of the unit CC ball by a subspace containing the
/// vertical direction.
#[derive(Debug, Clone)]
pub struct MetricFactorSampler {
    horizontal: DMatrix<f64>,
    vertical: usize,
}

impl MetricFactorSampler {
    /// `subspace` spans `L(τ)`; it must contain `e_{2n+1}`.
    pub fn new(subspace: &[DVector<f64>]) -> Result<Self> {
        let dim = subspace.first().map(|v| v.len()).ok_or(Error::DegenerateSubspace("empty subspace"))?;
        if dim < 3 || dim % 2 == 0 {
            return Err(Error::DimensionMismatch { expected: 2 * (dim / 2) + 1, got: dim });
        }
        if let Some(v) = subspace.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
        }
        let mut s = DMatrix::zeros(dim, subspace.len());
        for (j, v) in subspace.iter().enumerate() {
            s.set_column(j, v);
        }
        let q = linalg::column_space(&s, 1e-10, 0.0);
        if q.ncols() < subspace.len() {
            return Err(Error::DegenerateSubspace("rank deficient"));
        }
        let vertical = dim - 1;
        let proj_v: DVector<f64> = &q * q.row(vertical).transpose();
        if (proj_v[vertical] - 1.0).abs() > 1e-8 {
            return Err(Error::DegenerateSubspace("subspace does not contain the vertical direction"));
        }
        let mut h = q.clone();
        h.row_mut(vertical).fill(0.0);
        let horizontal = linalg::column_space(&h, 0.0, 1e-8);
        debug_assert_eq!(horizontal.ncols(), subspace.len() - 1);
        Ok(Self { horizontal, vertical })
    }

    /// Volume of the sampling box `[−1, 1]^{k−1} × [−1/(4π), 1/(4π)]`.
    pub fn box_volume(&self) -> f64 {
        libm::pow(2.0, self.horizontal.ncols() as f64) / (2.0 * PI)
    }

    /// Counts hits among `count` samples of partition `partition`.
    pub fn partition_hits(&self, seed: u64, partition: u64, count: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(partition);
        let k = self.horizontal.ncols();
        let mut c = DVector::zeros(k);
        let mut hits = 0;
        for _ in 0..count {
            for i in 0..k {
                c[i] = 2.0 * uniform(&mut rng) - 1.0;
            }
            let zv = (2.0 * uniform(&mut rng) - 1.0) / (4.0 * PI);
            let mut x = &self.horizontal * &c;
            x[self.vertical] = zv;
            if cc_distance(&HPoint(x)) < 1.0 {
                hits += 1;
            }
        }
        hits
    }

    /// `(partition index, sample count)` pairs covering `samples` draws.
    pub fn partitions(samples: u64) -> Vec<(u64, u64)> {
        let full = samples / PARTITION_SIZE;
        let mut out: Vec<(u64, u64)> = (0..full).map(|k| (k, PARTITION_SIZE)).collect();
        if !samples.is_multiple_of(PARTITION_SIZE) {
            out.push((full, samples % PARTITION_SIZE));
        }
        out
    }

    pub fn estimate(&self, samples: u64, seed: u64) -> MetricFactorEstimate {
        let hits = Self::partitions(samples).iter().map(|&(k, c)| self.partition_hits(seed, k, c)).sum();
        MetricFactorEstimate::from_hits(self.box_volume(), hits, samples)
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Monte-Carlo estimate of the Lebesgue measure of `{v ∈ L : ρ(v) < 1}`.
pub fn metric_factor_estimate(subspace: &[DVector<f64>], samples: u64, seed: u64) -> Result<MetricFactorEstimate> {
    if samples == 0 {
        return Err(Error::OutOfDomain("samples must be positive"));
    }
    Ok(MetricFactorSampler::new(subspace)?.estimate(samples, seed))
}

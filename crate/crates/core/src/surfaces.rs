//! Explicit non-horizontal submanifolds of Heisenberg groups: the `J`/`R`
//! frames of `H^2`, surfaces generated by framed transverse curves,
//! vertical cylinders and graphs.
//!
//! `H^2` coordinates are `(x1, x2, x3, x4, t)` with `[e_1, e_3] = [e_2, e_4] = e_5`.
//! Indices below are 0-based except in the `f1..f4` names.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix4};

use crate::error::{Error, Result};
use crate::frames::{fd_step, Immersion};
use crate::heisenberg::{mul, sinc, symplectic};

/// `J(a) = (−a_2, −a_3, a_0, a_1)`.
pub fn apply_j(a: &[f64; 4]) -> [f64; 4] {
    [-a[2], -a[3], a[0], a[1]]
}

/// `R(a) = (−a_1, a_0, a_3, −a_2)`.
pub fn apply_r(a: &[f64; 4]) -> [f64; 4] {
    [-a[1], a[0], a[3], -a[2]]
}

/// `J` on an algebra vector of `H^2`; fails unless the vector is horizontal.
pub fn apply_j_vec(x: &DVector<f64>) -> Result<DVector<f64>> {
    let a = horizontal4(x)?;
    Ok(pad(&apply_j(&a)))
}

pub fn apply_r_vec(x: &DVector<f64>) -> Result<DVector<f64>> {
    let a = horizontal4(x)?;
    Ok(pad(&apply_r(&a)))
}

fn horizontal4(x: &DVector<f64>) -> Result<[f64; 4]> {
    match x.len() {
        4 => Ok([x[0], x[1], x[2], x[3]]),
        5 if x[4] == 0.0 => Ok([x[0], x[1], x[2], x[3]]),
        5 => Err(Error::WrongLayer),
        k => Err(Error::DimensionMismatch { expected: 5, got: k }),
    }
}

fn pad(a: &[f64; 4]) -> DVector<f64> {
    DVector::from_vec(alloc::vec![a[0], a[1], a[2], a[3], 0.0])
}

fn neg(a: [f64; 4]) -> [f64; 4] {
    [-a[0], -a[1], -a[2], -a[3]]
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Horizontal parts of `f1..f4` generated from a unit `f4`.
pub fn jr_columns(f4: &[f64; 4]) -> [[f64; 4]; 4] {
    let f3 = apply_r(f4);
    let f2 = neg(apply_j(f4));
    let f1 = neg(apply_r(&f2));
    [f1, f2, f3, *f4]
}

/// `e_5`-coefficient of `[x, y]` for horizontal `x, y`.
pub fn bracket5(x: &[f64; 4], y: &[f64; 4]) -> f64 {
    x[0] * y[2] - x[2] * y[0] + x[1] * y[3] - x[3] * y[1]
}

/// Orthonormal horizontal frame `f3 = R f4`, `f2 = −J f4`, `f1 = −R f2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JRFrame {
    pub f1: [f64; 4],
    pub f2: [f64; 4],
    pub f3: [f64; 4],
    pub f4: [f64; 4],
}

impl JRFrame {
    /// Fails with [`Error::NotUnit`] when `|f4|` differs from 1 by more
    /// than `1e-12`.
    pub fn new(f4: [f64; 4]) -> Result<Self> {
        let norm = libm::sqrt(dot4(&f4, &f4));
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NotUnit { norm });
        }
        let [f1, f2, f3, f4] = jr_columns(&f4);
        Ok(Self { f1, f2, f3, f4 })
    }

    pub fn columns(&self) -> [[f64; 4]; 4] {
        [self.f1, self.f2, self.f3, self.f4]
    }

    /// `table[i][j]` is the `e_5`-coefficient of `[f_{i+1}, f_{j+1}]`.
    pub fn bracket_table(&self) -> [[f64; 4]; 4] {
        let c = self.columns();
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = bracket5(&c[i], &c[j]);
            }
        }
        out
    }

    /// `max |f_i · f_j − δ_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let c = self.columns();
        let mut e: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                e = e.max((dot4(&c[i], &c[j]) - want).abs());
            }
        }
        e
    }
}

/// Expected bracket table: only `[f1, f3] = [f2, f4] = e_5` (and their
/// antisymmetric partners) are non-zero.
pub fn expected_bracket(i: usize, j: usize) -> f64 {
    match (i, j) {
        (0, 2) | (1, 3) => 1.0,
        (2, 0) | (3, 1) => -1.0,
        _ => 0.0,
    }
}

/// Coefficient matrix of the linear system for `f4 = Σ a^i e_i` along the
/// `f4`-curves, with `b1 = ω̄_4^1(f4)` and `b3 = ω̄_4^3(f4)`.
pub fn system_matrix(b1: f64, b3: f64) -> Matrix4<f64> {
    Matrix4::new(
        0.0, -b3, 0.0, b1, //
        b3, 0.0, -b1, 0.0, //
        0.0, b1, 0.0, b3, //
        -b1, 0.0, -b3, 0.0,
    )
}

/// `Φ(s) = cos(sb) I + sin(sb)/b M`, the fundamental solution with
/// `Φ(0) = I`. Since `M² = −b² I` this is `exp(sM)`.
pub fn fundamental_matrix(b1: f64, b3: f64, s: f64) -> Result<Matrix4<f64>> {
    let b = libm::hypot(b1, b3);
    if b == 0.0 {
        return Err(Error::VanishingCurvature { t: s });
    }
    Ok(fundamental_matrix_stable(b1, b3, s))
}

// also valid at b = 0
fn fundamental_matrix_stable(b1: f64, b3: f64, s: f64) -> Matrix4<f64> {
    let b = libm::hypot(b1, b3);
    Matrix4::identity() * libm::cos(s * b) + system_matrix(b1, b3) * (s * sinc(s * b))
}

/// A transverse curve in `H^2` with a unit horizontal field along it.
pub trait FramedCurve {
    fn point(&self, t: f64) -> DVector<f64>;
    /// Coordinate velocity. Defaults to central differences.
    fn velocity(&self, t: f64) -> DVector<f64> {
        let h = fd_step(t);
        (self.point(t + h) - self.point(t - h)) / (2.0 * h)
    }
    fn f4(&self, t: f64) -> [f64; 4];
}

impl<C: FramedCurve + ?Sized> FramedCurve for &C {
    fn point(&self, t: f64) -> DVector<f64> {
        (**self).point(t)
    }
    fn velocity(&self, t: f64) -> DVector<f64> {
        (**self).velocity(t)
    }
    fn f4(&self, t: f64) -> [f64; 4] {
        (**self).f4(t)
    }
}

impl<C: FramedCurve + ?Sized> FramedCurve for alloc::boxed::Box<C> {
    fn point(&self, t: f64) -> DVector<f64> {
        (**self).point(t)
    }
    fn velocity(&self, t: f64) -> DVector<f64> {
        (**self).velocity(t)
    }
    fn f4(&self, t: f64) -> [f64; 4] {
        (**self).f4(t)
    }
}

/// A framed curve given by closures.
pub struct FnCurve<G, F> {
    pub gamma: G,
    pub f4: F,
}

impl<G: Fn(f64) -> DVector<f64>, F: Fn(f64) -> [f64; 4]> FramedCurve for FnCurve<G, F> {
    fn point(&self, t: f64) -> DVector<f64> {
        (self.gamma)(t)
    }
    fn f4(&self, t: f64) -> [f64; 4] {
        (self.f4)(t)
    }
}

/// `γ(t) = (r cos(t/r), 0, r sin(t/r), 0, 0)` with
/// `f4 = (0, cos(t/r), 0, sin(t/r))`. Generates a tubular surface with
/// `b = 2/r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleCurve {
    pub r: f64,
}

impl FramedCurve for CircleCurve {
    fn point(&self, t: f64) -> DVector<f64> {
        let (s, c) = (libm::sin(t / self.r), libm::cos(t / self.r));
        DVector::from_vec(alloc::vec![self.r * c, 0.0, self.r * s, 0.0, 0.0])
    }
    fn velocity(&self, t: f64) -> DVector<f64> {
        let (s, c) = (libm::sin(t / self.r), libm::cos(t / self.r));
        DVector::from_vec(alloc::vec![-s, 0.0, c, 0.0, 0.0])
    }
    fn f4(&self, t: f64) -> [f64; 4] {
        let (s, c) = (libm::sin(t / self.r), libm::cos(t / self.r));
        [0.0, c, 0.0, s]
    }
}

impl CircleCurve {
    /// Closed form of the generated surface.
    pub fn explicit_surface(&self, t: f64, s: f64) -> DVector<f64> {
        let r = self.r;
        let (st, ct) = (libm::sin(t / r), libm::cos(t / r));
        let (s2, c2) = (libm::sin(2.0 * s / r), libm::cos(2.0 * s / r));
        DVector::from_vec(alloc::vec![0.5 * r * ct * (1.0 + c2), 0.5 * r * s2 * ct, 0.5 * r * st * (1.0 + c2), 0.5 * r * s2 * st, 0.0])
    }
}

/// The vertical axis `γ(t) = t e_5` with `f4 = (cos ωt, 0, sin ωt, 0)`.
/// Generates a ruled surface (`b ≡ 0`); `ω = 0` gives a vertical plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerticalAxisCurve {
    pub omega: f64,
}

impl FramedCurve for VerticalAxisCurve {
    fn point(&self, t: f64) -> DVector<f64> {
        DVector::from_vec(alloc::vec![0.0, 0.0, 0.0, 0.0, t])
    }
    fn velocity(&self, _t: f64) -> DVector<f64> {
        DVector::from_vec(alloc::vec![0.0, 0.0, 0.0, 0.0, 1.0])
    }
    fn f4(&self, t: f64) -> [f64; 4] {
        let w = self.omega * t;
        [libm::cos(w), 0.0, libm::sin(w), 0.0]
    }
}

/// Frame data of a framed transverse curve at one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveData {
    pub t: f64,
    pub point: DVector<f64>,
    pub frame: JRFrame,
    /// `γ' = λ1 f4 + λ2 f5` in the left-invariant frame.
    pub lambda1: f64,
    pub lambda2: f64,
    /// `A_5^α` for `α = 1, 2, 3`.
    pub a5: [f64; 3],
    pub b1: f64,
    pub b3: f64,
}

impl CurveData {
    pub fn b(&self) -> f64 {
        libm::hypot(self.b1, self.b3)
    }
}

/// Velocities whose vertical part is below this fraction of their norm
/// are treated as horizontal.
const TRANSVERSE_TOL: f64 = 1e-10;

/// Completes the `J`/`R` frame along the curve and reads off `λ1`, `λ2`,
/// `A_5^α` and `b1 = −A_5^3`, `b3 = A_5^1`.
pub fn curve_data<C: FramedCurve + ?Sized>(curve: &C, t: f64) -> Result<CurveData> {
    let point = curve.point(t);
    let vel = curve.velocity(t);
    if point.len() != 5 || vel.len() != 5 {
        return Err(Error::DimensionMismatch { expected: 5, got: point.len() });
    }
    let frame = JRFrame::new(curve.f4(t))?;
    let x = [point[0], point[1], point[2], point[3]];
    let v = [vel[0], vel[1], vel[2], vel[3]];
    let lambda2 = vel[4] - 0.5 * bracket5(&x, &v);
    if lambda2.abs() <= TRANSVERSE_TOL * vel.norm() {
        return Err(Error::NotTransverse { t });
    }
    // horizontal part: λ1 f4 − λ2 Σ A^α f_α
    let lambda1 = dot4(&v, &frame.f4);
    let a5 = [-dot4(&v, &frame.f1) / lambda2, -dot4(&v, &frame.f2) / lambda2, -dot4(&v, &frame.f3) / lambda2];
    Ok(CurveData { t, point, frame, lambda1, lambda2, a5, b1: -a5[2], b3: a5[0] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    /// `φ(t, s) = γ(t) · s f4(t)`.
    Ruled,
    /// `φ(t, s) = γ(t) · (sin(sb)/b f4 − (cos(sb) − 1)/b² (b3 f3 + b1 f1))`.
    Tubular,
}

/// Surface swept from a framed transverse curve by horizontal
/// displacements in the left-invariant frame at `γ(t)`. Parameters are
/// `(t, s)`.
#[derive(Debug, Clone)]
pub struct CurveSurface<C> {
    pub curve: C,
    pub kind: SurfaceKind,
}

impl<C: FramedCurve> CurveSurface<C> {
    /// Horizontal displacement `X(t, s)` and `∂X/∂s`.
    fn displacement(&self, t: f64, s: f64) -> ([f64; 4], [f64; 4]) {
        let (f4, b1, b3) = match self.kind {
            SurfaceKind::Ruled => (JRFrame::new(self.curve.f4(t)).map(|f| f.f4).unwrap_or(self.curve.f4(t)), 0.0, 0.0),
            SurfaceKind::Tubular => match curve_data(&self.curve, t) {
                Ok(d) => (d.frame.f4, d.b1, d.b3),
                Err(_) => return ([f64::NAN; 4], [f64::NAN; 4]),
            },
        };
        let fr = jr_columns(&f4);
        let b = libm::hypot(b1, b3);
        // sin(sb)/b and (1 − cos(sb))/b², stable at b = 0
        let c_sin = s * sinc(s * b);
        let half = sinc(0.5 * s * b);
        let c_cos = 0.5 * s * s * half * half;
        let dc_cos = c_sin;
        let cs = libm::cos(s * b);
        let mut x = [0.0; 4];
        let mut dx = [0.0; 4];
        for k in 0..4 {
            let side = b3 * fr[2][k] + b1 * fr[0][k];
            x[k] = c_sin * f4[k] + c_cos * side;
            dx[k] = cs * f4[k] + dc_cos * side;
        }
        (x, dx)
    }

    /// `(b1, b3)` used at parameter `t`.
    pub fn coefficients(&self, t: f64) -> Result<(f64, f64)> {
        match self.kind {
            SurfaceKind::Ruled => Ok((0.0, 0.0)),
            SurfaceKind::Tubular => curve_data(&self.curve, t).map(|d| (d.b1, d.b3)),
        }
    }
}

impl<C: FramedCurve> Immersion for CurveSurface<C> {
    fn group_dim(&self) -> usize {
        5
    }
    fn domain_dim(&self) -> usize {
        2
    }
    fn point(&self, u: &[f64]) -> DVector<f64> {
        let (x, _) = self.displacement(u[0], u[1]);
        let g = self.curve.point(u[0]);
        mul(&g, &pad(&x))
    }
    fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let (t, s) = (u[0], u[1]);
        let h = fd_step(t);
        let dt = (self.point(&[t + h, s]) - self.point(&[t - h, s])) / (2.0 * h);
        let g = self.curve.point(t);
        let (_, dx) = self.displacement(t, s);
        let mut ds = pad(&dx);
        ds[4] = 0.5 * symplectic(&g, &ds);
        let mut jac = DMatrix::zeros(5, 2);
        jac.set_column(0, &dt);
        jac.set_column(1, &ds);
        jac
    }
}

/// Ruled surface of a framed curve; the `b` coefficients are not used.
pub fn ruled_surface<C: FramedCurve>(curve: C) -> CurveSurface<C> {
    CurveSurface { curve, kind: SurfaceKind::Ruled }
}

/// Sample count for range checks of curve data.
const RANGE_SAMPLES: usize = 257;

// (t, b) on a uniform sampling; a sign reversal of (b1, b3) between
// neighbours marks a zero crossing and is reported as b = 0
fn sample_b<C: FramedCurve>(curve: &C, t_range: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    let (t0, t1) = t_range;
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(RANGE_SAMPLES);
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..RANGE_SAMPLES {
        let t = t0 + (t1 - t0) * i as f64 / (RANGE_SAMPLES - 1) as f64;
        let d = curve_data(curve, t)?;
        let mut b = d.b();
        if let Some((p1, p3)) = prev {
            if b > B_ZERO && libm::hypot(p1, p3) > B_ZERO && p1 * d.b1 + p3 * d.b3 <= 0.0 {
                b = 0.0;
            }
        }
        prev = Some((d.b1, d.b3));
        out.push((t, b));
    }
    Ok(out)
}

/// Tubular surface; fails if `b` vanishes anywhere on a sampling of the
/// range or the curve is not transverse.
pub fn tubular_surface<C: FramedCurve>(curve: C, t_range: (f64, f64)) -> Result<CurveSurface<C>> {
    for (t, b) in sample_b(&curve, t_range)? {
        if b <= B_ZERO {
            return Err(Error::VanishingCurvature { t });
        }
    }
    Ok(CurveSurface { curve, kind: SurfaceKind::Tubular })
}

/// `b` at or below this is treated as zero.
const B_ZERO: f64 = 1e-12;

/// Surface generated by a framed transverse curve: ruled when `b ≡ 0` on
/// the range, tubular when `b > 0` throughout. Sign changes in between are
/// rejected with [`Error::VanishingCurvature`].
pub fn surface_from_curve<C: FramedCurve>(curve: C, t_range: (f64, f64)) -> Result<CurveSurface<C>> {
    let samples = sample_b(&curve, t_range)?;
    if samples.iter().all(|&(_, b)| b <= B_ZERO) {
        return Ok(ruled_surface(curve));
    }
    if let Some(&(t, _)) = samples.iter().find(|&&(_, b)| b <= B_ZERO) {
        return Err(Error::VanishingCurvature { t });
    }
    Ok(CurveSurface { curve, kind: SurfaceKind::Tubular })
}

/// `N(u, t) = (M(u), t)` in `H^n` for `M: R^m → R^{2n}`.
pub struct VerticalCylinder<F> {
    pub n: usize,
    pub m: usize,
    pub map: F,
}

impl<F: Fn(&[f64]) -> DVector<f64>> Immersion for VerticalCylinder<F> {
    fn group_dim(&self) -> usize {
        2 * self.n + 1
    }
    fn domain_dim(&self) -> usize {
        self.m + 1
    }
    fn point(&self, u: &[f64]) -> DVector<f64> {
        let x = (self.map)(&u[..self.m]);
        let mut out = DVector::zeros(2 * self.n + 1);
        out.rows_mut(0, 2 * self.n).copy_from(&x);
        out[2 * self.n] = u[self.m];
        out
    }
}

pub fn vertical_cylinder<F: Fn(&[f64]) -> DVector<f64>>(n: usize, m: usize, map: F) -> VerticalCylinder<F> {
    VerticalCylinder { n, m, map }
}

/// `(x1, x2, Re z², Im z²)` with `z = x1 + i x2`, a minimal surface of `R^4`.
pub fn holomorphic_graph(u: &[f64]) -> DVector<f64> {
    let (a, b) = (u[0], u[1]);
    DVector::from_vec(alloc::vec![a, b, a * a - b * b, 2.0 * a * b])
}

/// A function `u: R^{2n} → R` with derivatives up to order two.
pub trait GraphFunction {
    /// `2n`.
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

impl<G: GraphFunction + ?Sized> GraphFunction for &G {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        (**self).gradient(x)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        (**self).hessian(x)
    }
}

impl<G: GraphFunction + ?Sized> GraphFunction for alloc::boxed::Box<G> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        (**self).gradient(x)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        (**self).hessian(x)
    }
}

/// `u(x) = ½ xᵀ Q x + lᵀ x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub q: DMatrix<f64>,
    pub l: DVector<f64>,
    pub c: f64,
}

impl Quadratic {
    /// `(1/4) Σ (x_i² − x_{i+n}²)`.
    pub fn hyperbolic_paraboloid(n: usize) -> Self {
        let q = DMatrix::from_fn(2 * n, 2 * n, |i, j| if i != j { 0.0 } else if i < n { 0.5 } else { -0.5 });
        Self { q, l: DVector::zeros(2 * n), c: 0.0 }
    }

    pub fn linear(l: DVector<f64>) -> Self {
        let k = l.len();
        Self { q: DMatrix::zeros(k, k), l, c: 0.0 }
    }
}

impl GraphFunction for Quadratic {
    fn dim(&self) -> usize {
        self.l.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let v = DVector::from_row_slice(x);
        0.5 * v.dot(&(&self.q * &v)) + self.l.dot(&v) + self.c
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let v = DVector::from_row_slice(x);
        0.5 * (&self.q + self.q.transpose()) * v + &self.l
    }
    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        0.5 * (&self.q + self.q.transpose())
    }
}

/// The graph `x ↦ (x, u(x))` as an immersion into `H^n`.
pub struct GraphSurface<G> {
    pub u: G,
}

impl<G: GraphFunction> Immersion for GraphSurface<G> {
    fn group_dim(&self) -> usize {
        self.u.dim() + 1
    }
    fn domain_dim(&self) -> usize {
        self.u.dim()
    }
    fn point(&self, x: &[f64]) -> DVector<f64> {
        let k = self.u.dim();
        let mut out = DVector::zeros(k + 1);
        out.rows_mut(0, k).copy_from_slice(x);
        out[k] = self.u.value(x);
        out
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let k = self.u.dim();
        let mut jac = DMatrix::zeros(k + 1, k);
        jac.view_mut((0, 0), (k, k)).fill_with_identity();
        jac.set_row(k, &self.u.gradient(x).transpose());
        jac
    }
}

/// Horizontal gradient `φ_j = e_j(u − t)` of the graph's defining function:
/// `φ_j = u_j + x_{j+n}/2`, `φ_{j+n} = u_{j+n} − x_j/2`.
pub fn graph_horizontal_gradient(grad_u: &DVector<f64>, x: &[f64]) -> DVector<f64> {
    let n = grad_u.len() / 2;
    DVector::from_fn(2 * n, |j, _| if j < n { grad_u[j] + 0.5 * x[j + n] } else { grad_u[j] - 0.5 * x[j - n] })
}

/// Below this horizontal-gradient norm a point is characteristic.
const CHARACTERISTIC_TOL: f64 = 1e-12;

/// `Σ u_ii − N^{-2} Σ φ_i φ_j u_ij`, zero exactly where the graph is minimal.
pub fn graph_residual<G: GraphFunction + ?Sized>(u: &G, x: &[f64]) -> Result<f64> {
    if x.len() != u.dim() || !u.dim().is_multiple_of(2) {
        return Err(Error::DimensionMismatch { expected: u.dim(), got: x.len() });
    }
    let phi = graph_horizontal_gradient(&u.gradient(x), x);
    let n2 = phi.norm_squared();
    if libm::sqrt(n2) <= CHARACTERISTIC_TOL {
        return Err(Error::CharacteristicPoint);
    }
    let hess = u.hessian(x);
    Ok(hess.trace() - phi.dot(&(&hess * &phi)) / n2)
}

/// `div(grad_D φ / |grad_D φ|) = Σ_j e_j(φ_j / N)` for a function `φ` on
/// `H^n`, by nested central differences along the left-invariant fields.
/// With `H = −trace A` this equals `H_{f_1}` of the level set for
/// `f_1 = grad_D φ / N`; for a graph `φ = u − t` it is
/// `graph_residual / N`.
pub fn divergence_mean_curvature<F: Fn(&[f64]) -> f64>(phi: F, x: &[f64]) -> Result<f64> {
    let inner = |y: &[f64]| horizontal_gradient_fd(&phi, y, 1e-4);
    divergence_of_unit_gradient(inner, x)
}

/// As [`divergence_mean_curvature`], with the horizontal gradient supplied.
pub fn divergence_of_unit_gradient<F: Fn(&[f64]) -> DVector<f64>>(grad_d: F, x: &[f64]) -> Result<f64> {
    let k = x.len();
    if k.is_multiple_of(2) {
        return Err(Error::DimensionMismatch { expected: k + 1, got: k });
    }
    if grad_d(x).norm() <= CHARACTERISTIC_TOL {
        return Err(Error::CharacteristicPoint);
    }
    let unit = |y: &[f64]| -> DVector<f64> {
        let g = grad_d(y);
        let nr = g.norm();
        g / nr
    };
    let h = 1e-4;
    let mut acc = 0.0;
    for j in 0..k - 1 {
        let e = left_translate_step(x, j, h);
        let m = left_translate_step(x, j, -h);
        acc += (unit(&e)[j] - unit(&m)[j]) / (2.0 * h);
    }
    Ok(acc)
}

fn left_translate_step(x: &[f64], j: usize, h: f64) -> Vec<f64> {
    let mut d = DVector::zeros(x.len());
    d[j] = h;
    mul(&DVector::from_row_slice(x), &d).as_slice().to_vec()
}

fn horizontal_gradient_fd<F: Fn(&[f64]) -> f64>(phi: &F, x: &[f64], h: f64) -> DVector<f64> {
    let k = x.len();
    DVector::from_fn(k - 1, |j, _| {
        let p = left_translate_step(x, j, h);
        let m = left_translate_step(x, j, -h);
        (phi(&p) - phi(&m)) / (2.0 * h)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::StratifiedAlgebra;
    use crate::frames::{adapted_frame, FrameField, FrameOptions};
    use alloc::vec;
    use proptest::prelude::*;

    fn unit4() -> impl Strategy<Value = [f64; 4]> {
        proptest::array::uniform4(-1.0f64..1.0)
            .prop_filter("nonzero", |a| dot4(a, a) > 1e-4)
            .prop_map(|a| {
                let n = libm::sqrt(dot4(&a, &a));
                [a[0] / n, a[1] / n, a[2] / n, a[3] / n]
            })
    }

    fn close4(a: &[f64; 4], b: &[f64; 4], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    fn e(k: usize) -> [f64; 4] {
        let mut a = [0.0; 4];
        a[k] = 1.0;
        a
    }

    #[test]
    fn operator_tables() {
        // J e1 = e3, J e2 = e4, R e1 = e2, R e3 = −e4 (1-based)
        assert_eq!(apply_j(&e(0)), e(2));
        assert_eq!(apply_j(&e(1)), e(3));
        assert_eq!(apply_r(&e(0)), e(1));
        assert_eq!(apply_r(&e(2)), neg(e(3)));
        assert_eq!(apply_j(&e(3)), neg(e(1)));
    }

    #[test]
    fn vector_operators_reject_vertical_input() {
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.5]);
        assert_eq!(apply_j_vec(&v), Err(Error::WrongLayer));
        let w = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(apply_r_vec(&w).unwrap()[1], 1.0);
    }

    proptest! {
        #[test]
        fn jr_relations(x in proptest::array::uniform4(-3.0f64..3.0), y in proptest::array::uniform4(-3.0f64..3.0)) {
            let jj = apply_j(&apply_j(&x));
            let rr = apply_r(&apply_r(&x));
            prop_assert!(close4(&jj, &neg(x), 1e-15) && close4(&rr, &neg(x), 1e-15));
            let rj = apply_r(&apply_j(&x));
            let jr = apply_j(&apply_r(&x));
            prop_assert!(close4(&rj, &neg(jr), 1e-15));
            let d = dot4(&x, &y);
            prop_assert!((dot4(&apply_j(&x), &apply_j(&y)) - d).abs() < 1e-12);
            prop_assert!((dot4(&apply_r(&x), &apply_r(&y)) - d).abs() < 1e-12);
            prop_assert!((dot4(&apply_j(&x), &apply_r(&y)) + dot4(&apply_r(&x), &apply_j(&y))).abs() < 1e-12);
            prop_assert!((bracket5(&x, &apply_j(&y)) - d).abs() < 1e-12);
            prop_assert!((bracket5(&x, &apply_r(&y)) - dot4(&apply_j(&x), &apply_r(&y))).abs() < 1e-12);
        }

        #[test]
        fn jr_frame_bracket_table(f4 in unit4()) {
            let fr = JRFrame::new(f4).unwrap();
            prop_assert!(fr.orthonormality_error() < 1e-14);
            let tab = fr.bracket_table();
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((tab[i][j] - expected_bracket(i, j)).abs() < 1e-14);
                }
            }
        }

        #[test]
        fn fundamental_matrix_is_orthogonal(b1 in -3.0f64..3.0, b3 in -3.0f64..3.0, s in -2.0f64..2.0) {
            prop_assume!(libm::hypot(b1, b3) > 1e-3);
            let p = fundamental_matrix(b1, b3, s).unwrap();
            prop_assert!((p.transpose() * p - Matrix4::identity()).amax() < 1e-12);
            prop_assert!((p.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jr_frame_from_e4() {
        let fr = JRFrame::new(e(3)).unwrap();
        // f3 = R e4 = e3, f2 = −J e4 = e2, f1 = −R e2 = e1
        assert_eq!(fr.f3, e(2));
        assert_eq!(fr.f2, e(1));
        assert_eq!(fr.f1, e(0));
        assert!(matches!(JRFrame::new([1.0, 1.0, 0.0, 0.0]), Err(Error::NotUnit { .. })));
    }

    #[test]
    fn fundamental_matrix_solves_the_system() {
        let (b1, b3, s, h) = (0.7, -1.3, 0.9, 1e-5);
        assert!((fundamental_matrix(b1, b3, 0.0).unwrap() - Matrix4::identity()).amax() == 0.0);
        let d = (fundamental_matrix(b1, b3, s + h).unwrap() - fundamental_matrix(b1, b3, s - h).unwrap()) / (2.0 * h);
        let res = d - system_matrix(b1, b3) * fundamental_matrix(b1, b3, s).unwrap();
        assert!(res.amax() < 1e-8);
        assert!(fundamental_matrix(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn circle_curve_data_matches_closed_form() {
        let r = 1.5;
        let c = CircleCurve { r };
        for t in [0.1, 0.6, 1.7] {
            let d = curve_data(&c, t).unwrap();
            let w = 2.0 * t / r;
            assert!((d.b1 + 2.0 / r * libm::sin(w)).abs() < 1e-12);
            assert!((d.b3 - 2.0 / r * libm::cos(w)).abs() < 1e-12);
            assert!((d.b() - 2.0 / r).abs() < 1e-12);
            assert!((d.lambda2 + 0.5 * r).abs() < 1e-14);
            assert!(d.lambda1.abs() < 1e-14);
            let (st, ct) = (libm::sin(t / r), libm::cos(t / r));
            assert!(close4(&d.frame.f1, &[st, 0.0, ct, 0.0], 1e-15));
            assert!(close4(&d.frame.f2, &[0.0, st, 0.0, -ct], 1e-15));
            assert!(close4(&d.frame.f3, &[-ct, 0.0, st, 0.0], 1e-15));
        }
    }

    #[test]
    fn circle_surface_matches_explicit_parametrization() {
        let c = CircleCurve { r: 1.0 };
        let surf = surface_from_curve(c, (0.0, 1.5)).unwrap();
        assert_eq!(surf.kind, SurfaceKind::Tubular);
        for (t, s) in [(0.0, 0.0), (0.3, 0.2), (1.2, 0.9), (1.5, -0.4)] {
            assert!((surf.point(&[t, s]) - c.explicit_surface(t, s)).amax() < 1e-12);
        }
    }

    #[test]
    fn s_curves_are_horizontal_circles() {
        let c = FnCurve {
            gamma: |t: f64| DVector::from_vec(vec![0.3 * t, libm::sin(t), 0.1, t * t, t]),
            f4: |t: f64| [libm::cos(t), 0.0, 0.0, libm::sin(t)],
        };
        let surf = tubular_surface(&c, (0.2, 1.0)).unwrap();
        let t = 0.5;
        let d = curve_data(&c, t).unwrap();
        let b = d.b();
        let g = c.point(t);
        let mut centre = [0.0; 4];
        for k in 0..4 {
            centre[k] = g[k] + (d.b3 * d.frame.f3[k] + d.b1 * d.frame.f1[k]) / (b * b);
        }
        for s in [0.1, 0.8, 2.0, 4.0] {
            let p = surf.point(&[t, s]);
            let rad: f64 = (0..4).map(|k| (p[k] - centre[k]).powi(2)).sum::<f64>().sqrt();
            assert!((rad - 1.0 / b).abs() < 1e-12);
        }
        // ∂φ/∂s is horizontal and unit
        let jac = surf.jacobian(&[t, 0.7]);
        let p = surf.point(&[t, 0.7]);
        let ds = jac.column(1).into_owned();
        let lt = ds[4] - 0.5 * symplectic(&p, &ds);
        assert!(lt.abs() < 1e-12);
        assert!((ds.rows(0, 4).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tubular_tends_to_ruled() {
        let c = |k: f64| FnCurve {
            gamma: move |t: f64| DVector::from_vec(vec![k * libm::sin(t), 0.0, k * t, 0.0, t]),
            f4: |_t: f64| [0.0, 1.0, 0.0, 0.0],
        };
        let ruled = ruled_surface(c(0.0));
        let mut last = f64::INFINITY;
        for k in [1e-2, 1e-3, 1e-4] {
            let tub = CurveSurface { curve: c(k), kind: SurfaceKind::Tubular };
            let mut dev: f64 = 0.0;
            for (t, s) in [(0.2, 0.5), (0.8, 1.0), (1.0, -0.7)] {
                dev = dev.max((tub.point(&[t, s]) - ruled.point(&[t, s])).amax());
            }
            assert!(dev < 10.0 * k && dev < last);
            last = dev;
        }
    }

    #[test]
    fn vertical_axis_generates_ruled_surface() {
        let c = VerticalAxisCurve { omega: 0.0 };
        let d = curve_data(&c, 0.4).unwrap();
        assert!(d.a5.iter().all(|a| a.abs() < 1e-15));
        let surf = surface_from_curve(c, (-1.0, 1.0)).unwrap();
        assert_eq!(surf.kind, SurfaceKind::Ruled);
        let jac = surf.jacobian(&[0.4, 0.0]);
        assert!((jac.column(1).rows(0, 4) - DVector::from_row_slice(&c.f4(0.4))).amax() < 1e-10);
        // s-lines project to straight lines
        let p = |s: f64| surf.point(&[0.4, s]);
        let mid = (p(-1.0) + p(1.0)) / 2.0;
        assert!((mid.rows(0, 4) - p(0.0).rows(0, 4)).amax() < 1e-14);
    }

    #[test]
    fn zero_crossing_of_b_is_rejected() {
        // b ∝ |cos t| vanishes at π/2
        let c = FnCurve {
            gamma: |t: f64| DVector::from_vec(vec![libm::sin(t), 0.0, 0.0, 0.0, t]),
            f4: |_t: f64| [0.0, 1.0, 0.0, 0.0],
        };
        let d = curve_data(&c, 0.0).unwrap();
        assert!(d.b() > 0.1);
        assert!(matches!(surface_from_curve(&c, (0.0, 3.0)), Err(Error::VanishingCurvature { .. })));
        assert!(matches!(tubular_surface(&c, (1.5, 1.7)), Err(Error::VanishingCurvature { .. })));
    }

    #[test]
    fn horizontal_curve_is_not_transverse() {
        let c = FnCurve { gamma: |t: f64| DVector::from_vec(vec![t, 0.0, 0.0, 0.0, 0.0]), f4: |_t: f64| [0.0, 1.0, 0.0, 0.0] };
        assert!(matches!(curve_data(&c, 0.3), Err(Error::NotTransverse { .. })));
    }

    #[test]
    fn tubular_frame_follows_fundamental_solution_and_recovers_b() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        let c = CircleCurve { r: 1.0 };
        let surf = surface_from_curve(c, (0.0, 1.5)).unwrap();
        let (t, s) = (0.7, 0.4);
        let d = curve_data(&c, t).unwrap();
        let phi = fundamental_matrix(d.b1, d.b3, s).unwrap();
        let want = phi * nalgebra::Vector4::from_row_slice(&d.frame.f4);
        let hint = vec![DVector::from_row_slice(want.as_slice())];
        let opts = FrameOptions::jr().with_tangent_hint(hint);
        let fr = adapted_frame(&h2, &surf, &[t, s], &opts).unwrap();
        assert!((fr.f.column(3).rows(0, 4) - want).amax() < 1e-9);
        let ff = FrameField::new(&h2, &surf, opts);
        let om = ff.connection_forms_on(&[t, s], &fr.vector(3)).unwrap();
        assert!((om[(0, 3)] - d.b1).abs() < 1e-6, "{} {}", om[(0, 3)], d.b1);
        assert!((om[(2, 3)] - d.b3).abs() < 1e-6, "{} {}", om[(2, 3)], d.b3);
    }

    #[test]
    fn ruled_helicoid_is_minimal() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        let surf = surface_from_curve(VerticalAxisCurve { omega: 1.0 }, (0.0, 2.0)).unwrap();
        let ff = FrameField::new(&h2, &surf, FrameOptions::jr());
        for u in [[0.3, 0.2], [1.1, 0.8], [1.9, 0.5]] {
            let sd = ff.shape_operators(&u).unwrap();
            assert!(sd.residual().amax() < 1e-6, "{:?}", sd.residual());
        }
    }

    #[test]
    fn graph_residual_oracles() {
        let par = Quadratic::hyperbolic_paraboloid(2);
        assert!(graph_residual(&par, &[0.3, -0.2, 0.5, 1.1]).unwrap().abs() < 1e-15);
        let lin = Quadratic::linear(DVector::from_vec(vec![1.0, 2.0]));
        assert!(graph_residual(&lin, &[0.3, -0.2]).unwrap().abs() < 1e-15);
        // u = x1² in H^1
        let sq = Quadratic { q: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]), l: DVector::zeros(2), c: 0.0 };
        let x = [0.4, 0.3];
        let p1 = 2.0 * x[0] + 0.5 * x[1];
        let p2 = -0.5 * x[0];
        let want = 2.0 - 2.0 * p1 * p1 / (p1 * p1 + p2 * p2);
        assert!((graph_residual(&sq, &x).unwrap() - want).abs() < 1e-14);
        // u = 0 in H^1 at the origin is characteristic
        let zero = Quadratic::linear(DVector::zeros(2));
        assert_eq!(graph_residual(&zero, &[0.0, 0.0]), Err(Error::CharacteristicPoint));
    }

    #[test]
    fn divergence_matches_graph_residual() {
        let sq = Quadratic {
            q: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, -0.4]),
            l: DVector::from_vec(vec![0.1, 0.0]),
            c: 0.0,
        };
        let x = [0.4, 0.3, 0.7];
        let phi = |y: &[f64]| sq.value(&y[..2]) - y[2];
        let div = divergence_mean_curvature(phi, &x).unwrap();
        let grad = graph_horizontal_gradient(&sq.gradient(&x[..2]), &x[..2]);
        let res = graph_residual(&sq, &x[..2]).unwrap();
        assert!((div * grad.norm() - res).abs() < 1e-6, "{div} {res}");
        // no vertical dependence, linear horizontal part
        let lin = |y: &[f64]| 0.3 * y[0] - 0.8 * y[1];
        assert!(divergence_mean_curvature(lin, &x).unwrap().abs() < 1e-8);
    }

    #[test]
    fn graph_mean_curvature_agrees_with_frames() {
        let h1 = StratifiedAlgebra::heisenberg(1);
        let sq = Quadratic {
            q: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, -0.4]),
            l: DVector::from_vec(vec![0.1, 0.0]),
            c: 0.0,
        };
        let x = [0.4, 0.3];
        let grad = graph_horizontal_gradient(&sq.gradient(&x), &x);
        let surf = GraphSurface { u: &sq };
        let opts = FrameOptions::default().with_normal_hint(vec![grad.clone()]);
        let sd = FrameField::new(&h1, &surf, opts).shape_operators(&x).unwrap();
        let res = graph_residual(&sq, &x).unwrap();
        assert!((sd.h[0] - res / grad.norm()).abs() < 1e-6, "{} {}", sd.h[0], res);
        assert!(sd.sigma[0].abs() < 1e-12);
    }

    #[test]
    fn paraboloid_graph_is_minimal_via_frames() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        let par = Quadratic::hyperbolic_paraboloid(2);
        let surf = GraphSurface { u: par };
        let ff = FrameField::new(&h2, &surf, FrameOptions::default());
        let sd = ff.shape_operators(&[0.3, -0.2, 0.5, 1.1]).unwrap();
        assert!(sd.residual().amax() < 1e-6);
    }

    #[test]
    fn vertical_cylinders() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        let plane = vertical_cylinder(2, 2, |u: &[f64]| DVector::from_vec(vec![u[0], 0.5 * u[1], u[1], -u[0]]));
        let sd = FrameField::new(&h2, &plane, FrameOptions::default()).shape_operators(&[0.2, 0.3, 0.1]).unwrap();
        assert!(sd.residual().amax() < 1e-9);
        let holo = vertical_cylinder(2, 2, holomorphic_graph);
        let sd = FrameField::new(&h2, &holo, FrameOptions::default()).shape_operators(&[0.4, -0.3, 0.2]).unwrap();
        assert!(sd.residual().amax() < 1e-6, "{:?}", sd.residual());
        assert!(sd.sigma.amax() == 0.0 || sd.sigma.amax() < 1e-15);
        // round circle of radius ρ in R^2: |H| = 1/ρ
        let h1 = StratifiedAlgebra::heisenberg(1);
        let rho = 0.8;
        let circ = vertical_cylinder(1, 1, move |u: &[f64]| DVector::from_vec(vec![rho * libm::cos(u[0]), rho * libm::sin(u[0])]));
        let sd = FrameField::new(&h1, &circ, FrameOptions::default()).shape_operators(&[0.6, 0.2]).unwrap();
        assert!((sd.residual()[0].abs() - 1.0 / rho).abs() < 1e-6);
    }
}

//! Adapted frames along a parametrized non-horizontal submanifold.
//!
//! For a patch `φ: U ⊂ R^m → G` of codimension `p = n − m` the adapted frame
//! at `u` is `f_0..f_{n-1}` (0-based): `f_0..f_{p-1}` span the horizontal
//! normal bundle, `f_p..f_{d1-1}` is an orthonormal basis of `TM ∩ D`, and
//! `f_j = e_j − Σ_α A_j^α f_α` (`j ≥ d1`) are tangent.
//!
//! Connection forms are evaluated by central differences of frame fields,
//! where every stencil frame is gauge-fixed against the centre frame.

use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::algebra::StratifiedAlgebra;
use crate::error::{Error, Result};
use crate::linalg::{self, Select};

/// A parametrized patch `u ↦ φ(u)` in exponential coordinates.
pub trait Immersion {
    /// Dimension `n` of the ambient group.
    fn group_dim(&self) -> usize;
    /// Number of parameters `m = n − p`.
    fn domain_dim(&self) -> usize;
    fn point(&self, u: &[f64]) -> DVector<f64>;
    /// `n × m` coordinate partial derivatives. Defaults to central
    /// differences.
    fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        fd_jacobian(self, u)
    }
    fn codimension(&self) -> usize {
        self.group_dim() - self.domain_dim()
    }
}

impl<T: Immersion + ?Sized> Immersion for &T {
    fn group_dim(&self) -> usize {
        (**self).group_dim()
    }
    fn domain_dim(&self) -> usize {
        (**self).domain_dim()
    }
    fn point(&self, u: &[f64]) -> DVector<f64> {
        (**self).point(u)
    }
    fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        (**self).jacobian(u)
    }
}

impl<T: Immersion + ?Sized> Immersion for Box<T> {
    fn group_dim(&self) -> usize {
        (**self).group_dim()
    }
    fn domain_dim(&self) -> usize {
        (**self).domain_dim()
    }
    fn point(&self, u: &[f64]) -> DVector<f64> {
        (**self).point(u)
    }
    fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        (**self).jacobian(u)
    }
}

/// Finite-difference step for first derivatives at coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    (1e-5 * x.abs()).max(1e-5)
}

pub fn fd_jacobian<I: Immersion + ?Sized>(im: &I, u: &[f64]) -> DMatrix<f64> {
    let m = im.domain_dim();
    let mut jac = DMatrix::zeros(im.group_dim(), m);
    let mut v = u.to_vec();
    for a in 0..m {
        let h = fd_step(u[a]);
        v[a] = u[a] + h;
        let p = im.point(&v);
        v[a] = u[a] - h;
        let q = im.point(&v);
        v[a] = u[a];
        jac.set_column(a, &((p - q) / (2.0 * h)));
    }
    jac
}

/// An immersion given by a closure, with finite-difference Jacobian.
pub struct FnImmersion<F> {
    pub group_dim: usize,
    pub domain_dim: usize,
    pub map: F,
}

impl<F: Fn(&[f64]) -> DVector<f64>> FnImmersion<F> {
    pub fn new(group_dim: usize, domain_dim: usize, map: F) -> Self {
        Self { group_dim, domain_dim, map }
    }
}

impl<F: Fn(&[f64]) -> DVector<f64>> Immersion for FnImmersion<F> {
    fn group_dim(&self) -> usize {
        self.group_dim
    }
    fn domain_dim(&self) -> usize {
        self.domain_dim
    }
    fn point(&self, u: &[f64]) -> DVector<f64> {
        (self.map)(u)
    }
}

/// How the orthonormal bases of `TM ∩ D` and of its complement are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gauge {
    /// Project reference vectors (hints, or `e_0..e_{d1-1}` with pivoting)
    /// and orthonormalize.
    #[default]
    Projected,
    /// `H^2` surfaces only: `f_3` spans `TM ∩ D` and
    /// `f_2 = R f_3`, `f_1 = −J f_3`, `f_0 = −R f_1`.
    HeisenbergJR,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOptions {
    pub gauge: Gauge,
    /// Horizontal (length `d1`) vectors preferred for `f_p..f_{d1-1}`.
    pub tangent_hint: Option<Vec<DVector<f64>>>,
    /// Horizontal vectors preferred for `f_0..f_{p-1}`.
    pub normal_hint: Option<Vec<DVector<f64>>>,
    /// Threshold on the smallest singular value of the normalized
    /// `[T | e_0..e_{d1-1}]` matrix.
    pub tol_transv: f64,
    /// Step for frame derivatives; `None` uses [`fd_step`].
    pub step: Option<f64>,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self { gauge: Gauge::Projected, tangent_hint: None, normal_hint: None, tol_transv: 1e-8, step: None }
    }
}

impl FrameOptions {
    pub fn jr() -> Self {
        Self { gauge: Gauge::HeisenbergJR, ..Self::default() }
    }

    pub fn with_tangent_hint(mut self, hint: Vec<DVector<f64>>) -> Self {
        self.tangent_hint = Some(hint);
        self
    }

    pub fn with_normal_hint(mut self, hint: Vec<DVector<f64>>) -> Self {
        self.normal_hint = Some(hint);
        self
    }

    pub fn with_step(mut self, h: f64) -> Self {
        self.step = Some(h);
        self
    }
}

/// Adapted frame at one point. Vectors are algebra coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedFrame {
    pub p: usize,
    pub d1: usize,
    /// The point `φ(u)`.
    pub point: DVector<f64>,
    /// Left-trivialized `∂φ/∂u_a`, as columns (`n × m`).
    pub tangent: DMatrix<f64>,
    /// Row `j` holds `a_j^k`, i.e. `f_j = Σ_k a_j^k e_k` for `j < d1`.
    pub a: DMatrix<f64>,
    /// `A[(j − d1, α)] = A_j^α`.
    pub big_a: DMatrix<f64>,
    /// Columns `f_0..f_{n-1}`.
    pub f: DMatrix<f64>,
    /// Rows `f^0..f^{n-1}`.
    pub dual: DMatrix<f64>,
    /// Column `k` is the parameter velocity of `f_{p+k}`.
    pub param_dirs: DMatrix<f64>,
    /// Smallest normalized singular value of `[T | E_D]`.
    pub transversality: f64,
}

impl AdaptedFrame {
    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn m(&self) -> usize {
        self.tangent.ncols()
    }

    pub fn vector(&self, j: usize) -> DVector<f64> {
        self.f.column(j).into_owned()
    }

    /// Coefficients `f^α(w)` of the normal part of `w`.
    pub fn normal_components(&self, w: &DVector<f64>) -> DVector<f64> {
        self.dual.rows(0, self.p) * w
    }

    /// Parameter velocity of a tangent algebra vector `x`.
    pub fn param_direction(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.param_dirs * (self.dual.rows(self.p, self.n() - self.p) * x)
    }

    /// `span{f_p..f_{d1-1}, e_{d1}..e_{n-1}}`, the subspace carrying the
    /// top-degree part of the tangent multivector.
    pub fn top_degree_subspace(&self) -> Vec<DVector<f64>> {
        let n = self.n();
        let mut out: Vec<DVector<f64>> = (self.p..self.d1).map(|j| self.vector(j)).collect();
        out.extend((self.d1..n).map(|j| DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 })));
        out
    }

    /// `max |f^i(f_j) − δ_ij|`.
    pub fn dual_residual(&self) -> f64 {
        let n = self.n();
        (&self.dual * &self.f - DMatrix::<f64>::identity(n, n)).amax()
    }
}

enum Reference<'a> {
    Canonical,
    Near(&'a AdaptedFrame),
}

/// Builds the adapted frame at `u` with the canonical gauge.
pub fn adapted_frame<I: Immersion + ?Sized>(
    alg: &StratifiedAlgebra,
    im: &I,
    u: &[f64],
    opts: &FrameOptions,
) -> Result<AdaptedFrame> {
    build(alg, im, u, opts, Reference::Canonical)
}

/// Builds the adapted frame at `u`, gauge-fixed against a nearby frame.
pub fn adapted_frame_near<I: Immersion + ?Sized>(
    alg: &StratifiedAlgebra,
    im: &I,
    u: &[f64],
    opts: &FrameOptions,
    reference: &AdaptedFrame,
) -> Result<AdaptedFrame> {
    build(alg, im, u, opts, Reference::Near(reference))
}

fn unit(n: usize, k: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 })
}

fn build<I: Immersion + ?Sized>(
    alg: &StratifiedAlgebra,
    im: &I,
    u: &[f64],
    opts: &FrameOptions,
    reference: Reference<'_>,
) -> Result<AdaptedFrame> {
    let n = alg.dim();
    let d1 = alg.horizontal_dim();
    if im.group_dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: im.group_dim() });
    }
    let m = im.domain_dim();
    if u.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: u.len() });
    }
    if m > n || m == 0 {
        return Err(Error::DimensionMismatch { expected: n, got: m });
    }
    let p = n - m;
    if p > d1 {
        return Err(Error::NearHorizontal { sigma: 0.0, tol: opts.tol_transv });
    }
    let x = im.point(u);
    let jac = im.jacobian(u);
    let mut t = DMatrix::zeros(n, m);
    for a in 0..m {
        t.set_column(a, &alg.left_trivialize(&x, &jac.column(a).into_owned()));
    }

    let mut tn = t.clone();
    for mut c in tn.column_iter_mut() {
        let nr = c.norm();
        if nr == 0.0 {
            return Err(Error::DegenerateImmersion { sigma: 0.0 });
        }
        c /= nr;
    }
    let smin_t = linalg::singular_values(&tn).last().copied().unwrap_or(0.0);
    if smin_t < opts.tol_transv {
        return Err(Error::DegenerateImmersion { sigma: smin_t });
    }
    let mut span = DMatrix::zeros(n, m + d1);
    span.view_mut((0, 0), (n, m)).copy_from(&tn);
    for k in 0..d1 {
        span[(k, m + k)] = 1.0;
    }
    let transversality = linalg::singular_values(&span).get(n - 1).copied().unwrap_or(0.0);
    if transversality < opts.tol_transv {
        return Err(Error::NearHorizontal { sigma: transversality, tol: opts.tol_transv });
    }

    // TM ∩ D: horizontal parts of kernel directions of the vertical rows
    let kdim = d1 - p;
    let tv = t.rows(d1, n - d1).into_owned();
    let (_, v) = linalg::svd_right(&tv);
    let kernel = v.columns(m - kdim, kdim).into_owned();
    let hor = t.rows(0, d1) * kernel;
    let q = linalg::column_space(&hor, 1e-10, 0.0);
    if q.ncols() != kdim {
        return Err(Error::NearHorizontal { sigma: 0.0, tol: opts.tol_transv });
    }
    let p_tan = &q * q.transpose();
    let p_nor = DMatrix::<f64>::identity(d1, d1) - &p_tan;

    let basis: Vec<DVector<f64>> = (0..d1).map(|k| unit(d1, k)).collect();
    let horizontal = match (opts.gauge, &reference) {
        (Gauge::HeisenbergJR, _) => {
            if alg != &StratifiedAlgebra::heisenberg(2) || p != 3 {
                return Err(Error::Unsupported("the JR gauge needs a surface in H^2"));
            }
            let f4 = match &reference {
                Reference::Near(r) => {
                    let prev = r.f.column(3).rows(0, 4).into_owned();
                    let w = &p_tan * &prev;
                    if w.dot(&prev) < 0.5 {
                        return Err(Error::FrameFlip { index: 3 });
                    }
                    w.normalize()
                }
                Reference::Canonical => pick(&p_tan, opts.tangent_hint.as_deref(), &basis, 1)?.remove(0),
            };
            let c = crate::surfaces::jr_columns(&[f4[0], f4[1], f4[2], f4[3]]);
            c.iter().map(|v| DVector::from_row_slice(v)).collect::<Vec<_>>()
        }
        (Gauge::Projected, Reference::Near(r)) => {
            let prev: Vec<DVector<f64>> = (0..d1).map(|j| r.f.column(j).rows(0, d1).into_owned()).collect();
            let nor = linalg::project_orthonormalize(&p_nor, &prev[..p], p, Select::Strict)
                .ok_or(Error::FrameFlip { index: 0 })?;
            let tan = linalg::project_orthonormalize(&p_tan, &prev[p..], kdim, Select::Strict)
                .ok_or(Error::FrameFlip { index: p })?;
            let mut out = nor;
            out.extend(tan);
            for (j, v) in out.iter().enumerate() {
                if v.dot(&prev[j]) < 0.5 {
                    return Err(Error::FrameFlip { index: j });
                }
            }
            out
        }
        (Gauge::Projected, Reference::Canonical) => {
            let mut out = pick(&p_nor, opts.normal_hint.as_deref(), &basis, p)?;
            out.extend(pick(&p_tan, opts.tangent_hint.as_deref(), &basis, kdim)?);
            out
        }
    };

    let mut a = DMatrix::zeros(d1, d1);
    for (j, v) in horizontal.iter().enumerate() {
        a.set_row(j, &v.transpose());
    }
    let mut f = DMatrix::zeros(n, n);
    f.view_mut((0, 0), (d1, d1)).copy_from(&a.transpose());

    // [T | f_0..f_{p-1}] is invertible exactly when M is transverse
    let mut sys = DMatrix::zeros(n, n);
    sys.view_mut((0, 0), (n, m)).copy_from(&t);
    sys.view_mut((0, m), (n, p)).copy_from(&f.view((0, 0), (n, p)));
    let inv = sys.try_inverse().ok_or(Error::NearHorizontal { sigma: 0.0, tol: opts.tol_transv })?;
    let mut big_a = DMatrix::zeros(n - d1, p);
    for j in d1..n {
        let mut fj = unit(n, j);
        for al in 0..p {
            let c = inv[(m + al, j)];
            big_a[(j - d1, al)] = c;
            fj.axpy(-c, &f.column(al).into_owned(), 1.0);
        }
        f.set_column(j, &fj);
    }
    let dual = f.clone().try_inverse().ok_or(Error::NearHorizontal { sigma: 0.0, tol: opts.tol_transv })?;
    let param_dirs = inv.rows(0, m) * f.columns(p, m);
    Ok(AdaptedFrame { p, d1, point: x, tangent: t, a, big_a, f, dual, param_dirs, transversality })
}

fn pick(
    proj: &DMatrix<f64>,
    hint: Option<&[DVector<f64>]>,
    basis: &[DVector<f64>],
    count: usize,
) -> Result<Vec<DVector<f64>>> {
    let out = match hint {
        Some(h) => {
            let mut pool: Vec<DVector<f64>> = h.to_vec();
            pool.extend_from_slice(basis);
            linalg::project_orthonormalize(proj, &pool, count, Select::Ordered)
        }
        None => linalg::project_orthonormalize(proj, basis, count, Select::Pivot),
    };
    out.ok_or(Error::DegenerateSubspace("could not complete the frame basis"))
}

/// Mean curvature, mean torsion and related data at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeData {
    pub frame: AdaptedFrame,
    /// `omega[k][(i, j)] = ω̄_j^i(f_{p+k})`, for `i < d1`.
    pub omega: Vec<DMatrix<f64>>,
    /// `s[α][(k, l)] = f^α(S(f_{p+k}, f_{p+l}))`.
    pub s: Vec<DMatrix<f64>>,
    /// `weingarten[α][(i, k)]`: `f_{p+i}`-component of `A_{f_α}(f_{p+k})`.
    pub weingarten: Vec<DMatrix<f64>>,
    /// `torsion_normal[α][(k, l)] = f^α(T̄(f_{p+k}, f_{p+l}))`.
    pub torsion_normal: Vec<DMatrix<f64>>,
    /// `H_{f_α}`.
    pub h: DVector<f64>,
    /// `σ_{f_α}`.
    pub sigma: DVector<f64>,
}

impl ShapeData {
    /// `H_{f_α} + σ_{f_α}`.
    pub fn residual(&self) -> DVector<f64> {
        &self.h + &self.sigma
    }
}

/// The two μ-density evaluations at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuDensity {
    /// `|det [f^i(∂φ/∂u_a)]|`, `i ≥ p`.
    pub wedge: f64,
    /// Riemannian area density times `det(B)^{-1/2}`, with the basis `e`
    /// taken orthonormal.
    pub riemannian: f64,
    pub det_b: f64,
    pub det_w: f64,
}

/// `(det B, det W)` for `B = I + A Aᵀ`, `W = I − Aᵀ B^{-1} A`.
pub fn b_w_determinants(a: &DMatrix<f64>) -> (f64, f64) {
    let (r, p) = a.shape();
    let b = DMatrix::<f64>::identity(r, r) + a * a.transpose();
    let lu = b.clone().lu();
    let binv_a = lu.solve(a).expect("I + AAᵀ is positive definite");
    let w = DMatrix::<f64>::identity(p, p) - a.transpose() * binv_a;
    (b.determinant(), w.determinant())
}

/// Residuals of the structure equations on one finite-difference stencil.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StructuralResiduals {
    /// `d f^α + Σ ω̄^α_j ∧ f^j − T̃^α`.
    pub cartan_normal: f64,
    /// `d f^i + Σ ω̄^i_j ∧ f^j`, `p ≤ i < d1`.
    pub cartan_tangent: f64,
    /// `d f^j − T̄^j`, `j ≥ d1`.
    pub cartan_vertical: f64,
    /// `dω̄^k_i + Σ ω̄^k_j ∧ ω̄^j_i`.
    pub cartan_curvature: f64,
    pub gauss: f64,
    pub codazzi: f64,
    pub ricci: f64,
}

impl StructuralResiduals {
    pub fn cartan(&self) -> f64 {
        self.cartan_normal.max(self.cartan_tangent).max(self.cartan_vertical).max(self.cartan_curvature)
    }

    pub fn fundamental(&self) -> f64 {
        self.gauss.max(self.codazzi).max(self.ricci)
    }

    fn absorb(&mut self, o: &Self) {
        self.cartan_normal = self.cartan_normal.max(o.cartan_normal);
        self.cartan_tangent = self.cartan_tangent.max(o.cartan_tangent);
        self.cartan_vertical = self.cartan_vertical.max(o.cartan_vertical);
        self.cartan_curvature = self.cartan_curvature.max(o.cartan_curvature);
        self.gauss = self.gauss.max(o.gauss);
        self.codazzi = self.codazzi.max(o.codazzi);
        self.ricci = self.ricci.max(o.ricci);
    }
}

/// Frame field of an immersion: adapted frames at arbitrary parameters
/// plus the derivative-based quantities.
pub struct FrameField<'a, I: ?Sized> {
    pub alg: &'a StratifiedAlgebra,
    pub im: &'a I,
    pub opts: FrameOptions,
}

impl<'a, I: Immersion + ?Sized> FrameField<'a, I> {
    pub fn new(alg: &'a StratifiedAlgebra, im: &'a I, opts: FrameOptions) -> Self {
        Self { alg, im, opts }
    }

    pub fn frame(&self, u: &[f64]) -> Result<AdaptedFrame> {
        adapted_frame(self.alg, self.im, u, &self.opts)
    }

    pub fn frame_near(&self, u: &[f64], reference: &AdaptedFrame) -> Result<AdaptedFrame> {
        adapted_frame_near(self.alg, self.im, u, &self.opts, reference)
    }

    fn step(&self, x: f64) -> f64 {
        self.opts.step.unwrap_or_else(|| fd_step(x))
    }

    fn shifted(&self, u: &[f64], moves: &[(usize, f64)], centre: &AdaptedFrame) -> Result<AdaptedFrame> {
        let mut v = u.to_vec();
        for &(a, d) in moves {
            v[a] += d;
        }
        self.frame_near(&v, centre)
    }

    /// `ω̄_j^i(∂/∂u_a)` for every parameter axis `a`, as `d1 × n` matrices.
    pub fn connection_axes(&self, u: &[f64], centre: &AdaptedFrame) -> Result<Vec<DMatrix<f64>>> {
        (0..u.len())
            .map(|a| {
                let h = self.step(u[a]);
                let fp = self.shifted(u, &[(a, h)], centre)?;
                let fm = self.shifted(u, &[(a, -h)], centre)?;
                Ok(omega_from(centre, &fp, &fm, h))
            })
            .collect()
    }

    /// `ω̄_j^i(X)` (rows `i < d1`, columns `j < n`) for the tangent vector
    /// `X = dφ(dir)`.
    pub fn connection_forms(&self, u: &[f64], dir: &[f64]) -> Result<DMatrix<f64>> {
        let c = self.frame(u)?;
        let axes = self.connection_axes(u, &c)?;
        Ok(combine(&axes, dir))
    }

    /// Connection forms on the tangent algebra vector `x` at `u`.
    pub fn connection_forms_on(&self, u: &[f64], x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let c = self.frame(u)?;
        let dir = c.param_direction(x);
        let axes = self.connection_axes(u, &c)?;
        Ok(combine(&axes, dir.as_slice()))
    }

    pub fn shape_operators(&self, u: &[f64]) -> Result<ShapeData> {
        let c = self.frame(u)?;
        let axes = self.connection_axes(u, &c)?;
        Ok(shape_from(self.alg, c, &axes))
    }

    pub fn mu_density(&self, u: &[f64]) -> Result<MuDensity> {
        let c = self.frame(u)?;
        mu_density_of(&c)
    }

    /// Structure-equation residuals on the 3×3 stencil of step `h` in every
    /// pair of parameter axes (maximum over pairs).
    pub fn structural_residuals(&self, u: &[f64], h: f64) -> Result<StructuralResiduals> {
        let c = self.frame(u)?;
        let mut out = StructuralResiduals::default();
        for a in 0..u.len() {
            for b in a + 1..u.len() {
                out.absorb(&self.stencil_residuals(u, h, a, b, &c)?);
            }
        }
        Ok(out)
    }

    fn stencil_residuals(&self, u: &[f64], h: f64, a: usize, b: usize, c: &AdaptedFrame) -> Result<StructuralResiduals> {
        let (n, d1, p) = (c.n(), c.d1, c.p);
        let at = |ma: f64, mb: f64| self.shifted(u, &[(a, ma * h), (b, mb * h)], c);
        let (ap, am, bp, bm) = (at(1.0, 0.0)?, at(-1.0, 0.0)?, at(0.0, 1.0)?, at(0.0, -1.0)?);
        let (pp, pm, mp, mm) = (at(1.0, 1.0)?, at(1.0, -1.0)?, at(-1.0, 1.0)?, at(-1.0, -1.0)?);

        let eta = |fr: &AdaptedFrame, axis: usize| -> DVector<f64> { &fr.dual * fr.tangent.column(axis) };
        let d_eta = (eta(&ap, b) - eta(&am, b) - eta(&bp, a) + eta(&bm, a)) / (2.0 * h);
        let om_a = omega_from(c, &ap, &am, h);
        let om_b = omega_from(c, &bp, &bm, h);
        let (eta_a, eta_b) = (eta(c, a), eta(c, b));
        let tbar = -self.alg.bracket_coeffs(&c.tangent.column(a).into_owned(), &c.tangent.column(b).into_owned());

        let mut r = StructuralResiduals::default();
        for k in 0..n {
            let rhs = if k < d1 {
                let mut s = 0.0;
                for j in 0..n {
                    s -= om_a[(k, j)] * eta_b[j] - om_b[(k, j)] * eta_a[j];
                }
                if k < p {
                    for l in d1..n {
                        s += c.big_a[(l - d1, k)] * tbar[l];
                    }
                }
                s
            } else {
                tbar[k]
            };
            let res = (d_eta[k] - rhs).abs();
            if k < p {
                r.cartan_normal = r.cartan_normal.max(res);
            } else if k < d1 {
                r.cartan_tangent = r.cartan_tangent.max(res);
            } else {
                r.cartan_vertical = r.cartan_vertical.max(res);
            }
        }

        // ω̄(∂_b) at u ± h e_a and ω̄(∂_a) at u ± h e_b
        let om_b_ap = omega_from(&ap, &pp, &pm, h);
        let om_b_am = omega_from(&am, &mp, &mm, h);
        let om_a_bp = omega_from(&bp, &pp, &mp, h);
        let om_a_bm = omega_from(&bm, &pm, &mm, h);
        // dω̄(∂_a, ∂_b) = ∂_a ω̄(∂_b) − ∂_b ω̄(∂_a)
        let d_om = (&om_b_ap - &om_b_am - &om_a_bp + &om_a_bm) / (2.0 * h);
        // (ω̄^k_l ∧ ω̄^l_i)(∂_a, ∂_b), summed over l in `range`
        let wedge = |k: usize, i: usize, range: core::ops::Range<usize>| -> f64 {
            range.map(|l| om_a[(k, l)] * om_b[(l, i)] - om_b[(k, l)] * om_a[(l, i)]).sum()
        };
        for k in 0..d1 {
            for i in 0..n {
                let res = (d_om[(k, i)] + wedge(k, i, 0..d1)).abs();
                r.cartan_curvature = r.cartan_curvature.max(res);
            }
        }
        // Gauss: K(∂_a, ∂_b) f_i = A_{S(∂_b, f_i)}(∂_a) − A_{S(∂_a, f_i)}(∂_b)
        for k in p..d1 {
            for i in p..n {
                let curv = d_om[(k, i)] + wedge(k, i, p..d1);
                let mut rhs = 0.0;
                for al in 0..p {
                    rhs -= om_b[(al, i)] * om_a[(k, al)];
                    rhs += om_a[(al, i)] * om_b[(k, al)];
                }
                r.gauss = r.gauss.max((curv - rhs).abs());
            }
        }
        // Codazzi with X = ∂_a, Y = ∂_b, Z = f_c
        for be in 0..p {
            for cc in p..n {
                let dy_s_x = (om_a_bp[(be, cc)] - om_a_bm[(be, cc)]) / (2.0 * h);
                let dx_s_y = (om_b_ap[(be, cc)] - om_b_am[(be, cc)]) / (2.0 * h);
                let mut t = dy_s_x - dx_s_y;
                for al in 0..p {
                    t += om_a[(al, cc)] * om_b[(be, al)] - om_b[(al, cc)] * om_a[(be, al)];
                }
                for i in p..d1 {
                    t += -om_b[(i, cc)] * om_a[(be, i)] + om_a[(i, cc)] * om_b[(be, i)];
                }
                r.codazzi = r.codazzi.max(t.abs());
            }
        }
        // Ricci: K^⊥(∂_a, ∂_b) f_α = S(∂_a, A_α ∂_b) − S(∂_b, A_α ∂_a)
        for al in 0..p {
            for ga in 0..p {
                let kperp = d_om[(ga, al)] + wedge(ga, al, 0..p);
                let mut rhs = 0.0;
                for i in p..d1 {
                    rhs += -om_b[(i, al)] * om_a[(ga, i)] + om_a[(i, al)] * om_b[(ga, i)];
                }
                r.ricci = r.ricci.max((kperp - rhs).abs());
            }
        }
        Ok(r)
    }
}

// ω̄_j^i along a direction from frames at ±h, projected with the centre duals.
fn omega_from(centre: &AdaptedFrame, plus: &AdaptedFrame, minus: &AdaptedFrame, h: f64) -> DMatrix<f64> {
    let df = (&plus.f - &minus.f) / (2.0 * h);
    centre.dual.rows(0, centre.d1) * df
}

fn combine(axes: &[DMatrix<f64>], dir: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(axes[0].nrows(), axes[0].ncols());
    for (m, &w) in axes.iter().zip(dir) {
        out += m * w;
    }
    out
}

pub(crate) fn shape_from(alg: &StratifiedAlgebra, frame: AdaptedFrame, axes: &[DMatrix<f64>]) -> ShapeData {
    let (n, d1, p) = (frame.n(), frame.d1, frame.p);
    let m = n - p;
    let omega: Vec<DMatrix<f64>> =
        (0..m).map(|k| combine(axes, frame.param_dirs.column(k).as_slice())).collect();
    let mut s = Vec::with_capacity(p);
    let mut weingarten = Vec::with_capacity(p);
    let mut torsion_normal = Vec::with_capacity(p);
    let mut h = DVector::zeros(p);
    let mut sigma = DVector::zeros(p);
    let fv: Vec<DVector<f64>> = (0..n).map(|j| frame.vector(j)).collect();
    for al in 0..p {
        s.push(DMatrix::from_fn(m, m, |k, l| omega[k][(al, p + l)]));
        weingarten.push(DMatrix::from_fn(d1 - p, m, |i, k| -omega[k][(p + i, al)]));
        torsion_normal.push(DMatrix::from_fn(m, m, |k, l| {
            -frame.dual.row(al).dot(&alg.bracket_coeffs(&fv[p + k], &fv[p + l]).transpose())
        }));
        h[al] = (p..d1).map(|i| omega[i - p][(i, al)]).sum();
        sigma[al] = (d1..n).map(|j| -frame.dual.row(j).dot(&alg.bracket_coeffs(&fv[al], &fv[j]).transpose())).sum();
    }
    ShapeData { frame, omega, s, weingarten, torsion_normal, h, sigma }
}

pub(crate) fn mu_density_of(c: &AdaptedFrame) -> Result<MuDensity> {
    let (n, p) = (c.n(), c.p);
    let wedge = (c.dual.rows(p, n - p) * &c.tangent).determinant().abs();
    if wedge == 0.0 || !wedge.is_finite() {
        return Err(Error::ZeroDensity);
    }
    let gram = c.tangent.transpose() * &c.tangent;
    let (det_b, det_w) = b_w_determinants(&c.big_a);
    let riemannian = libm::sqrt(gram.determinant().abs()) / libm::sqrt(det_b);
    Ok(MuDensity { wedge, riemannian, det_b, det_w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn h1_plane() -> FnImmersion<impl Fn(&[f64]) -> DVector<f64>> {
        FnImmersion::new(3, 2, |u: &[f64]| DVector::from_vec(vec![u[0], u[1], 0.0]))
    }

    fn h2_surface() -> FnImmersion<impl Fn(&[f64]) -> DVector<f64>> {
        FnImmersion::new(5, 2, |u: &[f64]| {
            let (t, s) = (u[0], u[1]);
            DVector::from_vec(vec![s + 0.1 * t, 0.3 * s * t, 0.2 * s * s, 0.1 * t * s - 0.2 * t, t + 0.4 * s * s])
        })
    }

    fn h2_hypersurface() -> FnImmersion<impl Fn(&[f64]) -> DVector<f64>> {
        FnImmersion::new(5, 4, |u: &[f64]| {
            DVector::from_vec(vec![u[0], u[1], u[2], 0.2 * u[0] * u[1] + 0.1 * u[2] * u[2] - 0.3 * u[3], u[3]])
        })
    }

    fn check_invariants(fr: &AdaptedFrame) {
        let (n, d1) = (fr.n(), fr.d1);
        let ata = &fr.a * fr.a.transpose();
        assert!((ata - DMatrix::<f64>::identity(d1, d1)).amax() < 1e-12);
        assert!(fr.dual_residual() < 1e-10);
        // tangent vectors f_p..f_{n-1} lie in the column span of T
        let t = &fr.tangent;
        let proj = t * (t.transpose() * t).try_inverse().unwrap() * t.transpose();
        for j in fr.p..n {
            let v = fr.vector(j);
            assert!((&proj * &v - &v).amax() < 1e-9, "f_{j} not tangent");
        }
        // normals are orthogonal to TM ∩ D
        for al in 0..fr.p {
            for i in fr.p..d1 {
                assert!(fr.vector(al).dot(&fr.vector(i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn h1_plane_frame_matches_hand_solution() {
        let h = StratifiedAlgebra::heisenberg(1);
        let (u, v) = (0.3, 0.7);
        let fr = adapted_frame(&h, &h1_plane(), &[u, v], &FrameOptions::default()).unwrap();
        check_invariants(&fr);
        let r = libm::hypot(u, v);
        // TM ∩ D is spanned by (u, v); the normal is ±(v, −u)/r
        let f1 = fr.vector(0);
        let s = (f1[0] * v - f1[1] * u) / r;
        assert!((s.abs() - 1.0).abs() < 1e-12);
        // e_3 − A f_1 ∈ TM forces A = −2s/r
        assert!((fr.big_a[(0, 0)] + 2.0 * s / r).abs() < 1e-9);
        let im_h1_plane = h1_plane();
        let ff = FrameField::new(&h, &im_h1_plane, FrameOptions::default());
        let sd = ff.shape_operators(&[u, v]).unwrap();
        assert!(sd.h[0].abs() < 1e-7);
        assert!(sd.sigma[0].abs() < 1e-14);
    }

    #[test]
    fn full_dimension_frame_is_standard() {
        let h = StratifiedAlgebra::heisenberg(1);
        let id = FnImmersion::new(3, 3, |u: &[f64]| DVector::from_row_slice(u));
        let fr = adapted_frame(&h, &id, &[0.2, -0.1, 0.4], &FrameOptions::default()).unwrap();
        assert_eq!(fr.p, 0);
        assert_eq!(fr.big_a.ncols(), 0);
        assert!((&fr.a - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
        assert!((&fr.f - DMatrix::<f64>::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn horizontal_plane_rejected() {
        let h = StratifiedAlgebra::heisenberg(2);
        // the Lagrangian plane {x3 = x4 = t = 0} is horizontal
        let im = FnImmersion::new(5, 2, |u: &[f64]| DVector::from_vec(vec![u[0], u[1], 0.0, 0.0, 0.0]));
        let err = adapted_frame(&h, &im, &[0.3, 0.2], &FrameOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NearHorizontal { .. }));
    }

    #[test]
    fn degenerate_immersion_rejected() {
        let h = StratifiedAlgebra::heisenberg(1);
        let im = FnImmersion::new(3, 2, |u: &[f64]| DVector::from_vec(vec![u[0] + u[1], 0.0, u[0] + u[1]]));
        let err = adapted_frame(&h, &im, &[0.3, 0.2], &FrameOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateImmersion { .. }));
    }

    #[test]
    fn frames_satisfy_invariants() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        for u in [[0.1, 0.2], [-0.4, 0.5], [0.7, -0.3]] {
            check_invariants(&adapted_frame(&h2, &h2_surface(), &u, &FrameOptions::default()).unwrap());
            check_invariants(&adapted_frame(&h2, &h2_surface(), &u, &FrameOptions::jr()).unwrap());
        }
        let fr = adapted_frame(&h2, &h2_hypersurface(), &[0.1, 0.2, -0.3, 0.4], &FrameOptions::default()).unwrap();
        check_invariants(&fr);
    }

    #[test]
    fn jr_gauge_is_rejected_outside_h2_surfaces() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        let r = adapted_frame(&h2, &h2_hypersurface(), &[0.1, 0.2, -0.3, 0.4], &FrameOptions::jr());
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn constant_frame_has_zero_connection() {
        let h = StratifiedAlgebra::heisenberg(1);
        // vertical plane {x2 = 0}: frame is e_2, e_1, e_3 everywhere
        let im = FnImmersion::new(3, 2, |u: &[f64]| DVector::from_vec(vec![u[0], 0.0, u[1]]));
        let ff = FrameField::new(&h, &im, FrameOptions::default());
        let om = ff.connection_forms(&[0.4, 0.1], &[0.3, 0.8]).unwrap();
        assert!(om.amax() < 1e-12);
        let sd = ff.shape_operators(&[0.4, 0.1]).unwrap();
        assert!(sd.h[0].abs() < 1e-12 && sd.sigma[0].abs() < 1e-14);
        let r = ff.structural_residuals(&[0.4, 0.1], 1e-3).unwrap();
        assert!(r.cartan() < 1e-9 && r.fundamental() < 1e-9, "{r:?}");
    }

    #[test]
    fn connection_is_skew_on_horizontal_block() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        let im_h2_surface = h2_surface();
        let ff = FrameField::new(&h2, &im_h2_surface, FrameOptions::default());
        let om = ff.connection_forms(&[0.3, -0.2], &[0.6, 0.8]).unwrap();
        let blk = om.columns(0, 4).into_owned();
        assert!(om.amax() > 1e-3);
        assert!((&blk + blk.transpose()).amax() < 1e-7);
    }

    #[test]
    fn second_fundamental_form_asymmetry_is_normal_torsion() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        {
            let im = h2_surface();
            let ff = FrameField::new(&h2, &im, FrameOptions::default());
            let sd = ff.shape_operators(&[0.3, -0.2]).unwrap();
            for al in 0..sd.frame.p {
                let asym = &sd.s[al] - sd.s[al].transpose();
                assert!((asym - &sd.torsion_normal[al]).amax() < 1e-6);
            }
        }
        let im_h2_hypersurface = h2_hypersurface();
        let ff = FrameField::new(&h2, &im_h2_hypersurface, FrameOptions::default());
        let sd = ff.shape_operators(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let asym = &sd.s[0] - sd.s[0].transpose();
        assert!((asym - &sd.torsion_normal[0]).amax() < 1e-6);
    }

    #[test]
    fn weingarten_is_adjoint_of_s_on_horizontal_tangents() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        let im_h2_hypersurface = h2_hypersurface();
        let ff = FrameField::new(&h2, &im_h2_hypersurface, FrameOptions::default());
        let sd = ff.shape_operators(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let kd = sd.frame.d1 - sd.frame.p;
        for k in 0..sd.frame.m() {
            for l in 0..kd {
                assert!((sd.s[0][(k, l)] - sd.weingarten[0][(l, k)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn hypersurface_mean_torsion_vanishes() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        let im_h2_hypersurface = h2_hypersurface();
        let ff = FrameField::new(&h2, &im_h2_hypersurface, FrameOptions::default());
        let sd = ff.shape_operators(&[0.5, -0.2, 0.1, 0.3]).unwrap();
        assert!(sd.sigma[0].abs() < 1e-12);
        assert!(sd.h[0].abs() > 1e-3);
    }

    #[test]
    fn density_routes_agree() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        for u in [[0.1, 0.2], [-0.4, 0.5], [0.7, -0.3]] {
            let im_h2_surface = h2_surface();
            let ff = FrameField::new(&h2, &im_h2_surface, FrameOptions::default());
            let d = ff.mu_density(&u).unwrap();
            assert!((d.wedge - d.riemannian).abs() < 1e-9 * d.wedge, "{d:?}");
            assert!((d.det_b * d.det_w - 1.0).abs() < 1e-12);
        }
        let im_h2_hypersurface = h2_hypersurface();
        let ff = FrameField::new(&h2, &im_h2_hypersurface, FrameOptions::default());
        let d = ff.mu_density(&[0.5, -0.2, 0.1, 0.3]).unwrap();
        assert!((d.wedge - d.riemannian).abs() < 1e-9 * d.wedge);
    }

    #[test]
    fn density_is_gauge_invariant() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        let u = [0.5, -0.2, 0.1, 0.3];
        let im_h2_hypersurface = h2_hypersurface();
        let base = FrameField::new(&h2, &im_h2_hypersurface, FrameOptions::default()).mu_density(&u).unwrap();
        let hints = [vec![3usize, 1, 0, 2], vec![2, 3, 1, 0], vec![1, 0, 3, 2]];
        for order in hints {
            let hint = order.iter().map(|&k| unit(4, k) * if k % 2 == 0 { -1.0 } else { 1.0 }).collect();
            let im_h2_hypersurface = h2_hypersurface();
            let ff = FrameField::new(&h2, &im_h2_hypersurface, FrameOptions::default().with_tangent_hint(hint));
            let d = ff.mu_density(&u).unwrap();
            assert!((d.wedge - base.wedge).abs() < 1e-12 * base.wedge);
        }
    }

    #[test]
    fn mean_curvature_is_gauge_covariant() {
        // flipping the normal flips H
        let h = StratifiedAlgebra::heisenberg(1);
        let im = FnImmersion::new(3, 2, |u: &[f64]| DVector::from_vec(vec![u[0], u[1], u[0] * u[0]]));
        let u = [0.3, 0.4];
        let a = FrameField::new(&h, &im, FrameOptions::default()).shape_operators(&u).unwrap();
        let flip = -a.frame.vector(0).rows(0, 2).into_owned();
        let opts = FrameOptions::default().with_normal_hint(vec![flip]);
        let b = FrameField::new(&h, &im, opts).shape_operators(&u).unwrap();
        assert!((a.h[0] + b.h[0]).abs() < 1e-8 && a.h[0].abs() > 1e-2);
    }

    #[test]
    fn large_stencil_rotation_is_detected() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        let im = h2_surface();
        let c = adapted_frame(&h2, &im, &[0.3, -0.2], &FrameOptions::default()).unwrap();
        // a reference rotated far from the current splitting
        let mut far = c.clone();
        far.f.swap_columns(2, 3);
        let r = adapted_frame_near(&h2, &im, &[0.3, -0.2], &FrameOptions::default(), &far);
        assert!(matches!(r, Err(Error::FrameFlip { .. })));
    }

    #[test]
    fn structural_residuals_converge_at_second_order() {
        let h2 = StratifiedAlgebra::heisenberg(2);
        let im = h2_surface();
        let ff = FrameField::new(&h2, &im, FrameOptions::default().with_step(1e-4));
        let u = [0.3, -0.2];
        let r1 = ff.structural_residuals(&u, 2e-2).unwrap();
        let r2 = ff.structural_residuals(&u, 1e-2).unwrap();
        assert!(r1.cartan() < 1e-2 && r1.fundamental() < 1e-2, "{r1:?}");
        assert!(r1.cartan() / r2.cartan() > 3.5, "{r1:?} {r2:?}");
        assert!(r1.fundamental() / r2.fundamental() > 3.5, "{r1:?} {r2:?}");
    }

    #[test]
    fn abelian_linear_patch_has_zero_residuals() {
        let ab = StratifiedAlgebra::abelian(3);
        let im = FnImmersion::new(3, 2, |u: &[f64]| DVector::from_vec(vec![u[0], u[1], 0.5 * u[0] - u[1]]));
        let ff = FrameField::new(&ab, &im, FrameOptions::default());
        let r = ff.structural_residuals(&[0.2, 0.1], 1e-3).unwrap();
        assert!(r.cartan() < 1e-10 && r.fundamental() < 1e-10, "{r:?}");
    }

    #[test]
    fn b_w_identity_for_zero_a() {
        let (b, w) = b_w_determinants(&DMatrix::zeros(3, 2));
        assert_eq!((b, w), (1.0, 1.0));
    }

    proptest::proptest! {
        #[test]
        fn b_w_determinant_identity(entries in proptest::collection::vec(-5.0f64..5.0, 12)) {
            let a = DMatrix::from_vec(4, 3, entries);
            let (b, w) = b_w_determinants(&a);
            proptest::prop_assert!((b * w - 1.0).abs() < 1e-9);
        }
    }
}

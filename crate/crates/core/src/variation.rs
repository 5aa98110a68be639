//! The μ-measure of a parametrized patch and its first variation.
//!
//! The analytic first variation is
//! `∫ Σ_α f^α(W) (H_{f_α} + σ_{f_α}) dμ + ∫_{∂} W^⊤ ⌟ dμ`. The boundary
//! term is evaluated as the outward flux `Σ_a [∫_{u_a = hi} ρ c^a − ∫_{u_a = lo} ρ c^a]`
//! of the parameter field `c` of `W^⊤`, with `ρ` the μ-density.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::algebra::StratifiedAlgebra;
use crate::error::{Error, Result};
use crate::frames::{adapted_frame, FrameField, FrameOptions, Immersion};
use crate::quadrature::{lift_face_point, QuadratureGrid};

/// A one-parameter family of immersions `F_ε` with `F_0` the base patch.
pub trait VariationFamily {
    fn group_dim(&self) -> usize;
    fn domain_dim(&self) -> usize;
    fn deform(&self, eps: f64, u: &[f64]) -> DVector<f64>;
    /// Left-trivialized variation field `W = ∂F_ε/∂ε` at `ε = 0`.
    fn field(&self, u: &[f64]) -> DVector<f64>;
}

/// The member `F_ε` of a family, as an immersion.
pub struct Member<'a, V: ?Sized> {
    pub family: &'a V,
    pub eps: f64,
}

impl<V: VariationFamily + ?Sized> Immersion for Member<'_, V> {
    fn group_dim(&self) -> usize {
        self.family.group_dim()
    }
    fn domain_dim(&self) -> usize {
        self.family.domain_dim()
    }
    fn point(&self, u: &[f64]) -> DVector<f64> {
        self.family.deform(self.eps, u)
    }
}

/// `F_ε(u) = φ(u) · exp(ε w(u))`, so that `W = w`.
pub struct DisplacementFamily<'a, I: ?Sized, W> {
    pub alg: &'a StratifiedAlgebra,
    pub base: &'a I,
    pub w: W,
}

impl<I: Immersion + ?Sized, W: Fn(&[f64]) -> DVector<f64>> VariationFamily for DisplacementFamily<'_, I, W> {
    fn group_dim(&self) -> usize {
        self.base.group_dim()
    }
    fn domain_dim(&self) -> usize {
        self.base.domain_dim()
    }
    fn deform(&self, eps: f64, u: &[f64]) -> DVector<f64> {
        let x = self.base.point(u);
        let y = (self.w)(u) * eps;
        self.alg.group_multiply(&x, &y).expect("validated algebra of step at most four")
    }
    fn field(&self, u: &[f64]) -> DVector<f64> {
        (self.w)(u)
    }
}

/// `F_ε(u) = exp(ε w) · φ(u)`: the flow of the right-invariant field of
/// `w`, whose left trivialization is `Ad_{exp(−φ(u))} w`.
pub struct TranslationFamily<'a, I: ?Sized> {
    pub alg: &'a StratifiedAlgebra,
    pub base: &'a I,
    pub w: DVector<f64>,
}

impl<I: Immersion + ?Sized> VariationFamily for TranslationFamily<'_, I> {
    fn group_dim(&self) -> usize {
        self.base.group_dim()
    }
    fn domain_dim(&self) -> usize {
        self.base.domain_dim()
    }
    fn deform(&self, eps: f64, u: &[f64]) -> DVector<f64> {
        let x = self.base.point(u);
        self.alg.group_multiply(&(&self.w * eps), &x).expect("validated algebra of step at most four")
    }
    fn field(&self, u: &[f64]) -> DVector<f64> {
        self.alg.ad_exp_neg(&self.base.point(u), &self.w)
    }
}

/// `Π_a sin²(π (u_a − lo_a) / (hi_a − lo_a))`: smooth, vanishing with its
/// gradient on the boundary of the box.
pub fn bump(lo: &[f64], hi: &[f64], u: &[f64]) -> f64 {
    lo.iter()
        .zip(hi)
        .zip(u)
        .map(|((a, b), x)| {
            let s = libm::sin(core::f64::consts::PI * (x - a) / (b - a));
            s * s
        })
        .product()
}

/// `w(u) = amplitude · bump(u) · Σ_α c_α f_α(u)`, a boundary-fixed normal
/// variation field built from the base frame.
pub fn normal_bump_field<'a, I: Immersion + ?Sized>(
    alg: &'a StratifiedAlgebra,
    base: &'a I,
    opts: FrameOptions,
    lo: Vec<f64>,
    hi: Vec<f64>,
    weights: Vec<f64>,
    amplitude: f64,
) -> impl Fn(&[f64]) -> DVector<f64> + 'a {
    move |u: &[f64]| {
        let fr = adapted_frame(alg, base, u, &opts).expect("base frame at a quadrature node");
        let mut w = DVector::zeros(fr.n());
        for (al, c) in weights.iter().enumerate().take(fr.p) {
            w.axpy(*c, &fr.f.column(al).into_owned(), 1.0);
        }
        w * (amplitude * bump(&lo, &hi, u))
    }
}

fn check_grid<I: Immersion + ?Sized>(im: &I, grid: &QuadratureGrid) -> Result<()> {
    if grid.dim() != im.domain_dim() {
        return Err(Error::DimensionMismatch { expected: im.domain_dim(), got: grid.dim() });
    }
    Ok(())
}

/// `∫ ρ du` over the grid box.
pub fn mu_measure<I: Immersion + ?Sized>(
    alg: &StratifiedAlgebra,
    im: &I,
    grid: &QuadratureGrid,
    opts: &FrameOptions,
) -> Result<f64> {
    check_grid(im, grid)?;
    let ff = FrameField::new(alg, im, opts.clone());
    let mut err = None;
    let v = grid.integrate(|u| match ff.mu_density(u) {
        Ok(d) => d.wedge,
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    });
    err.map_or(Ok(v), Err)
}

/// Central difference of the measure plus a Richardson extrapolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericVariation {
    pub eps: f64,
    /// `(V(ε) − V(−ε)) / 2ε`.
    pub central: f64,
    /// `(4 D(ε/2) − D(ε)) / 3`.
    pub richardson: f64,
}

fn measure_at<V: VariationFamily + ?Sized>(
    alg: &StratifiedAlgebra,
    fam: &V,
    eps: f64,
    grid: &QuadratureGrid,
    opts: &FrameOptions,
) -> Result<f64> {
    mu_measure(alg, &Member { family: fam, eps }, grid, opts)
}

pub fn first_variation_numeric<V: VariationFamily + ?Sized>(
    alg: &StratifiedAlgebra,
    fam: &V,
    grid: &QuadratureGrid,
    eps: f64,
    opts: &FrameOptions,
) -> Result<NumericVariation> {
    let d = |e: f64| -> Result<f64> {
        Ok((measure_at(alg, fam, e, grid, opts)? - measure_at(alg, fam, -e, grid, opts)?) / (2.0 * e))
    };
    let central = d(eps)?;
    let half = d(0.5 * eps)?;
    Ok(NumericVariation { eps, central, richardson: (4.0 * half - central) / 3.0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticVariation {
    /// `∫ (H_{W^⊥} + σ_{W^⊥}) dμ`.
    pub interior: f64,
    /// `∫_∂ W^⊤ ⌟ dμ`.
    pub boundary: f64,
}

impl AnalyticVariation {
    pub fn total(&self) -> f64 {
        self.interior + self.boundary
    }
}

pub fn first_variation_analytic<I: Immersion + ?Sized, V: VariationFamily + ?Sized>(
    alg: &StratifiedAlgebra,
    base: &I,
    fam: &V,
    grid: &QuadratureGrid,
    opts: &FrameOptions,
) -> Result<AnalyticVariation> {
    check_grid(base, grid)?;
    let ff = FrameField::new(alg, base, opts.clone());
    let mut err: Option<Error> = None;
    let interior = grid.integrate(|u| {
        let run = || -> Result<f64> {
            let sd = ff.shape_operators(u)?;
            let rho = crate::frames::mu_density_of(&sd.frame)?.wedge;
            let wn = sd.frame.normal_components(&fam.field(u));
            Ok(wn.dot(&sd.residual()) * rho)
        };
        run().unwrap_or_else(|e| {
            err.get_or_insert(e);
            0.0
        })
    });
    if let Some(e) = err {
        return Err(e);
    }
    let boundary = boundary_flux(alg, base, grid, opts, |u| fam.field(u))?;
    Ok(AnalyticVariation { interior, boundary })
}

/// `Σ_a [∫_{u_a = hi} ρ c^a − ∫_{u_a = lo} ρ c^a]` where `c` is the parameter
/// velocity of the tangent part of `w`.
pub fn boundary_flux<I: Immersion + ?Sized, W: Fn(&[f64]) -> DVector<f64>>(
    alg: &StratifiedAlgebra,
    im: &I,
    grid: &QuadratureGrid,
    opts: &FrameOptions,
    w: W,
) -> Result<f64> {
    let mut total = 0.0;
    let mut err: Option<Error> = None;
    for axis in 0..grid.dim() {
        let (face, lo, hi) = grid.faces(axis);
        for (value, sign) in [(hi, 1.0), (lo, -1.0)] {
            let v = face.integrate(|rest| {
                let u = lift_face_point(rest, axis, value);
                let run = || -> Result<f64> {
                    let fr = adapted_frame(alg, im, &u, opts)?;
                    let rho = crate::frames::mu_density_of(&fr)?.wedge;
                    Ok(rho * fr.param_direction(&w(&u))[axis])
                };
                run().unwrap_or_else(|e| {
                    err.get_or_insert(e);
                    0.0
                })
            });
            total += sign * v;
        }
    }
    err.map_or(Ok(total), Err)
}

/// Boundary term of a full-dimensional patch (`p = 0`) computed as
/// `∫_∂ f^1(W) dμ_∂`, with `f_1` the horizontal conormal of each face
/// oriented outward and `dμ_∂` the face's own μ-measure.
pub fn full_dimension_boundary_term<I: Immersion + ?Sized, W: Fn(&[f64]) -> DVector<f64>>(
    alg: &StratifiedAlgebra,
    im: &I,
    grid: &QuadratureGrid,
    opts: &FrameOptions,
    w: W,
) -> Result<f64> {
    let n = alg.dim();
    if im.domain_dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: im.domain_dim() });
    }
    let mut total = 0.0;
    let mut err: Option<Error> = None;
    for axis in 0..n {
        let (fgrid, lo, hi) = grid.faces(axis);
        for (value, outward) in [(hi, 1.0), (lo, -1.0)] {
            let face = FaceImmersion { im, axis, value };
            let v = fgrid.integrate(|rest| {
                let run = || -> Result<f64> {
                    let fr = adapted_frame(alg, &face, rest, opts)?;
                    let rho = crate::frames::mu_density_of(&fr)?.wedge;
                    let u = lift_face_point(rest, axis, value);
                    let x = im.point(&u);
                    let out = alg.left_trivialize(&x, &im.jacobian(&u).column(axis).into_owned()) * outward;
                    let conormal = fr.dual.row(0);
                    let orient = conormal.dot(&out.transpose()).signum();
                    Ok(orient * conormal.dot(&w(&u).transpose()) * rho)
                };
                run().unwrap_or_else(|e| {
                    err.get_or_insert(e);
                    0.0
                })
            });
            total += v;
        }
    }
    err.map_or(Ok(total), Err)
}

struct FaceImmersion<'a, I: ?Sized> {
    im: &'a I,
    axis: usize,
    value: f64,
}

impl<I: Immersion + ?Sized> Immersion for FaceImmersion<'_, I> {
    fn group_dim(&self) -> usize {
        self.im.group_dim()
    }
    fn domain_dim(&self) -> usize {
        self.im.domain_dim() - 1
    }
    fn point(&self, u: &[f64]) -> DVector<f64> {
        self.im.point(&lift_face_point(u, self.axis, self.value))
    }
    fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        self.im.jacobian(&lift_face_point(u, self.axis, self.value)).remove_column(self.axis)
    }
}

/// Grid norms of `H_{f_α} + σ_{f_α}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualNorms {
    /// Maximum over nodes of `max_α |H_{f_α} + σ_{f_α}|`.
    pub sup: f64,
    /// `(∫ Σ_α (H_{f_α} + σ_{f_α})² dμ)^{1/2}`.
    pub l2: f64,
    /// Largest `|H_{f_α}|` and `|σ_{f_α}|`, for context.
    pub h_sup: f64,
    pub sigma_sup: f64,
    pub nodes: usize,
}

pub fn minimality_residual<I: Immersion + ?Sized>(
    alg: &StratifiedAlgebra,
    im: &I,
    grid: &QuadratureGrid,
    opts: &FrameOptions,
) -> Result<ResidualNorms> {
    check_grid(im, grid)?;
    let ff = FrameField::new(alg, im, opts.clone());
    let (mut sup, mut h_sup, mut sigma_sup) = (0.0f64, 0.0f64, 0.0f64);
    let mut err: Option<Error> = None;
    let sq = grid.integrate(|u| {
        let mut run = || -> Result<f64> {
            let sd = ff.shape_operators(u)?;
            let r = sd.residual();
            sup = sup.max(r.amax());
            h_sup = h_sup.max(sd.h.amax());
            sigma_sup = sigma_sup.max(sd.sigma.amax());
            Ok(r.norm_squared() * crate::frames::mu_density_of(&sd.frame)?.wedge)
        };
        run().unwrap_or_else(|e| {
            err.get_or_insert(e);
            0.0
        })
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(ResidualNorms { sup, l2: libm::sqrt(sq), h_sup, sigma_sup, nodes: grid.nodes.len() })
}

/// Residual norms on an arbitrary list of parameter points (no weights).
pub fn residual_sup_on<I: Immersion + ?Sized>(
    alg: &StratifiedAlgebra,
    im: &I,
    points: &[Vec<f64>],
    opts: &FrameOptions,
) -> Result<f64> {
    let ff = FrameField::new(alg, im, opts.clone());
    let mut sup = 0.0f64;
    for u in points {
        sup = sup.max(ff.shape_operators(u)?.residual().amax());
    }
    Ok(sup)
}

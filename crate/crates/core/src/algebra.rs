//! Stratified Lie algebras given by structure constants.
//!
//! Basis indices are 0-based: `e_0..e_{n-1}`, ordered layer by layer. Layer
//! numbers (degrees) are 1-based, so `degree(0) == 1`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut, Range};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative rank tolerance for bracket-image matrices.
pub const RANK_TOL: f64 = 1e-12;

/// Coefficients of an algebra element in the basis `e_0..e_{n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraVector(pub DVector<f64>);

impl AlgebraVector {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    /// The basis vector `e_k`.
    pub fn basis(n: usize, k: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        Self(v)
    }

    pub fn from_slice(c: &[f64]) -> Self {
        Self(DVector::from_column_slice(c))
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl Deref for AlgebraVector {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl DerefMut for AlgebraVector {
    fn deref_mut(&mut self) -> &mut DVector<f64> {
        &mut self.0
    }
}

impl From<DVector<f64>> for AlgebraVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

/// How the scalar product is defined on layers 2 and above.
#[derive(Debug, Clone, PartialEq)]
pub enum HigherMetric {
    /// The given basis is orthonormal on every layer (the usual Heisenberg
    /// convention `|e_{2n+1}| = 1`).
    Unit,
    /// Canonical extension from layer 1, see
    /// [`StratifiedAlgebra::canonical_metric_extension`].
    Canonical,
    /// One symmetric positive-definite block per layer `2..=r`.
    Blocks(Vec<DMatrix<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Antisymmetry,
    Jacobi,
    Grading,
    Generation,
    Layer1Metric,
    MetricStructure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Largest absolute residual (for `Generation`: the number of missing
    /// dimensions).
    pub residual: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A graded nilpotent Lie algebra `g = g^1 ⊕ … ⊕ g^r` with a scalar product.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedAlgebra {
    layer_dims: Vec<usize>,
    degrees: Vec<usize>,
    // (i, j, k, c) with i < j, meaning [e_i, e_j] has e_k-coefficient c
    entries: Vec<(usize, usize, usize, f64)>,
    antisymmetry_residual: f64,
    metric: DMatrix<f64>,
}

impl StratifiedAlgebra {
    /// Builds an algebra from raw bracket entries `(i, j, k, c)` meaning
    /// `c_ij^k = c`. Entries given as `(j, i, k, -c)` are merged; conflicting
    /// or diagonal entries are kept out of the table and reported by
    /// [`validate`](Self::validate).
    pub fn new(layer_dims: Vec<usize>, brackets: &[(usize, usize, usize, f64)], metric: HigherMetric) -> Result<Self> {
        if layer_dims.is_empty() || layer_dims.contains(&0) {
            return Err(Error::InvalidAlgebra("layer dimensions must be positive"));
        }
        let n: usize = layer_dims.iter().sum();
        let mut degrees = Vec::with_capacity(n);
        for (l, &d) in layer_dims.iter().enumerate() {
            degrees.extend(core::iter::repeat_n(l + 1, d));
        }
        let mut table: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        let mut seen: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        let mut anti: f64 = 0.0;
        for &(i, j, k, c) in brackets {
            for idx in [i, j, k] {
                if idx >= n {
                    return Err(Error::IndexOutOfRange { index: idx, dim: n });
                }
            }
            if i == j {
                anti = anti.max(c.abs());
                continue;
            }
            let (key, val) = if i < j { ((i, j, k), c) } else { ((j, i, k), -c) };
            if let Some(prev) = seen.get(&key) {
                anti = anti.max((prev - val).abs());
                continue;
            }
            seen.insert(key, val);
            if val != 0.0 {
                table.insert(key, val);
            }
        }
        let entries = table.into_iter().map(|((i, j, k), c)| (i, j, k, c)).collect();
        let mut alg = Self {
            layer_dims,
            degrees,
            entries,
            antisymmetry_residual: anti,
            metric: DMatrix::identity(n, n),
        };
        match metric {
            HigherMetric::Unit => {}
            HigherMetric::Canonical => alg = alg.canonical_metric_extension()?,
            HigherMetric::Blocks(blocks) => {
                if blocks.len() + 1 != alg.layer_dims.len() {
                    return Err(Error::DimensionMismatch { expected: alg.layer_dims.len() - 1, got: blocks.len() });
                }
                for (l, b) in blocks.into_iter().enumerate() {
                    let r = alg.layer_range(l + 2);
                    if b.nrows() != r.len() || b.ncols() != r.len() {
                        return Err(Error::DimensionMismatch { expected: r.len(), got: b.nrows() });
                    }
                    if b.clone().cholesky().is_none() {
                        return Err(Error::MetricNotPositive);
                    }
                    alg.metric.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&b);
                }
            }
        }
        Ok(alg)
    }

    /// The Heisenberg algebra `h^n`: `[e_i, e_{i+n}] = e_{2n}` (0-based), with
    /// unit vertical vector.
    pub fn heisenberg(n: usize) -> Self {
        let br: Vec<_> = (0..n).map(|i| (i, i + n, 2 * n, 1.0)).collect();
        Self::new(alloc::vec![2 * n, 1], &br, HigherMetric::Unit).expect("heisenberg algebra is well formed")
    }

    /// Abelian `R^n` as a one-step algebra.
    pub fn abelian(n: usize) -> Self {
        Self::new(alloc::vec![n], &[], HigherMetric::Unit).expect("abelian algebra is well formed")
    }

    /// Replaces the full scalar product.
    pub fn with_metric(mut self, metric: DMatrix<f64>) -> Result<Self> {
        if metric.shape() != (self.dim(), self.dim()) {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: metric.nrows() });
        }
        self.metric = metric;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.degrees.len()
    }

    /// Number of layers `r`.
    pub fn step(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// `d_1`, the rank of the horizontal distribution.
    pub fn horizontal_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Basis indices of layer `layer` (1-based).
    pub fn layer_range(&self, layer: usize) -> Range<usize> {
        let start: usize = self.layer_dims[..layer - 1].iter().sum();
        start..start + self.layer_dims[layer - 1]
    }

    /// Degree (1-based layer number) of the basis vector `e_k`.
    pub fn degree(&self, k: usize) -> Result<usize> {
        self.degrees.get(k).copied().ok_or(Error::IndexOutOfRange { index: k, dim: self.dim() })
    }

    /// Stored structure constants `(i, j, k, c_ij^k)` with `i < j`.
    pub fn structure_constants(&self) -> &[(usize, usize, usize, f64)] {
        &self.entries
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.metric * y))
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        Ok(())
    }

    pub fn bracket(&self, x: &AlgebraVector, y: &AlgebraVector) -> Result<AlgebraVector> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(AlgebraVector(self.bracket_coeffs(x, y)))
    }

    /// `[x, y]` on raw coefficient vectors. Panics on dimension mismatch.
    pub fn bracket_coeffs(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        for &(i, j, k, c) in &self.entries {
            z[k] += c * (x[i] * y[j] - x[j] * y[i]);
        }
        z
    }

    /// The torsion of the flat left-invariant connection, `T(x, y) = -[x, y]`.
    pub fn torsion(&self, x: &AlgebraVector, y: &AlgebraVector) -> Result<AlgebraVector> {
        let mut b = self.bracket(x, y)?;
        b.0.neg_mut();
        Ok(b)
    }

    /// `Q = Σ i·d_i`.
    pub fn hausdorff_dimension(&self) -> usize {
        self.layer_dims.iter().enumerate().map(|(i, d)| (i + 1) * d).sum()
    }

    fn ad_series(&self, x: &DVector<f64>, v: &DVector<f64>, coeffs: &[f64]) -> DVector<f64> {
        let mut term = v.clone();
        let mut out = v * coeffs[0];
        for &c in coeffs.iter().skip(1).take(self.step().saturating_sub(1)) {
            term = self.bracket_coeffs(x, &term);
            if c != 0.0 {
                out.axpy(c, &term, 1.0);
            }
        }
        out
    }

    /// Left-trivialization of a coordinate velocity: if `x(t)` is a curve in
    /// exponential coordinates with `x(0) = x`, `x'(0) = v`, returns the
    /// algebra element `ξ` with `x'(0) = dL_{exp x} ξ`.
    pub fn left_trivialize(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        // (1 - e^{-ad})/ad
        const C: [f64; 10] = [
            1.0,
            -1.0 / 2.0,
            1.0 / 6.0,
            -1.0 / 24.0,
            1.0 / 120.0,
            -1.0 / 720.0,
            1.0 / 5040.0,
            -1.0 / 40320.0,
            1.0 / 362880.0,
            -1.0 / 3628800.0,
        ];
        self.ad_series(x, v, &C)
    }

    /// Inverse of [`left_trivialize`](Self::left_trivialize): coordinate
    /// components at `x` of the left-invariant field with value `xi`.
    pub fn left_invariant_field(&self, x: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        // ad/(1 - e^{-ad}) = Σ B_k^+ ad^k / k!
        const C: [f64; 10] = [
            1.0,
            1.0 / 2.0,
            1.0 / 12.0,
            0.0,
            -1.0 / 720.0,
            0.0,
            1.0 / 30240.0,
            0.0,
            -1.0 / 1209600.0,
            0.0,
        ];
        self.ad_series(x, xi, &C)
    }

    /// `Ad_{exp(-x)} w = e^{-ad_x} w`.
    pub fn ad_exp_neg(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        const C: [f64; 10] = [
            1.0,
            -1.0,
            1.0 / 2.0,
            -1.0 / 6.0,
            1.0 / 24.0,
            -1.0 / 120.0,
            1.0 / 720.0,
            -1.0 / 5040.0,
            1.0 / 40320.0,
            -1.0 / 362880.0,
        ];
        self.ad_series(x, w, &C)
    }

    /// Group product in exponential coordinates (Baker–Campbell–Hausdorff,
    /// exact up to step 4).
    pub fn group_multiply(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        if self.step() > 4 {
            return Err(Error::Unsupported("group law beyond step 4"));
        }
        let xy = self.bracket_coeffs(x, y);
        let mut z = x + y;
        z.axpy(0.5, &xy, 1.0);
        if self.step() >= 3 {
            let xxy = self.bracket_coeffs(x, &xy);
            let yxy = self.bracket_coeffs(y, &xy);
            z.axpy(1.0 / 12.0, &xxy, 1.0);
            z.axpy(-1.0 / 12.0, &yxy, 1.0);
            if self.step() >= 4 {
                let yxxy = self.bracket_coeffs(y, &xxy);
                z.axpy(-1.0 / 24.0, &yxxy, 1.0);
            }
        }
        Ok(z)
    }

    /// Checks the stratification invariants. Never fails; the report carries
    /// every violated invariant with its largest residual.
    pub fn validate(&self) -> ValidationReport {
        let n = self.dim();
        let mut violations = Vec::new();
        if self.antisymmetry_residual > 0.0 {
            violations.push(Violation {
                kind: ViolationKind::Antisymmetry,
                residual: self.antisymmetry_residual,
                detail: String::from("diagonal or inconsistent (i,j)/(j,i) bracket entries"),
            });
        }

        let mut grading = 0.0f64;
        let mut worst = None;
        for &(i, j, k, c) in &self.entries {
            if self.degrees[k] != self.degrees[i] + self.degrees[j] && c.abs() > grading {
                grading = c.abs();
                worst = Some((i, j, k));
            }
        }
        if let Some((i, j, k)) = worst {
            violations.push(Violation {
                kind: ViolationKind::Grading,
                residual: grading,
                detail: format!(
                    "c_{}{}^{} links degrees {}+{} to degree {}",
                    i + 1,
                    j + 1,
                    k + 1,
                    self.degrees[i],
                    self.degrees[j],
                    self.degrees[k]
                ),
            });
        }

        let basis: Vec<DVector<f64>> = (0..n).map(|k| AlgebraVector::basis(n, k).0).collect();
        let mut jac = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let ij = self.bracket_coeffs(&basis[i], &basis[j]);
                for k in j + 1..n {
                    let jk = self.bracket_coeffs(&basis[j], &basis[k]);
                    let ki = self.bracket_coeffs(&basis[k], &basis[i]);
                    let s = self.bracket_coeffs(&ij, &basis[k])
                        + self.bracket_coeffs(&jk, &basis[i])
                        + self.bracket_coeffs(&ki, &basis[j]);
                    jac = jac.max(s.amax());
                }
            }
        }
        if jac > 1e-12 {
            violations.push(Violation {
                kind: ViolationKind::Jacobi,
                residual: jac,
                detail: String::from("Jacobi identity fails"),
            });
        }

        for m in 1..self.step() {
            let target = self.layer_range(m + 1);
            let img = self.bracket_image(1, m, &basis);
            let block = img.rows(target.start, target.len()).into_owned();
            let sv = linalg::singular_values(&block);
            let smax = sv.first().copied().unwrap_or(0.0);
            let rank = sv.iter().filter(|&&s| s > RANK_TOL * smax && s > 0.0).count();
            if rank < target.len() {
                violations.push(Violation {
                    kind: ViolationKind::Generation,
                    residual: (target.len() - rank) as f64,
                    detail: format!("[g^1, g^{}] has rank {} in layer {} of dimension {}", m, rank, m + 1, target.len()),
                });
            }
        }

        let h = self.layer_range(1);
        let g1 = self.metric.view((0, 0), (h.len(), h.len()));
        let dev = (g1 - DMatrix::<f64>::identity(h.len(), h.len())).amax();
        if dev > 1e-12 {
            violations.push(Violation {
                kind: ViolationKind::Layer1Metric,
                residual: dev,
                detail: String::from("layer-1 basis is not orthonormal"),
            });
        }
        let mut off = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                if self.degrees[a] != self.degrees[b] {
                    off = off.max(self.metric[(a, b)].abs());
                }
            }
        }
        let sym = (&self.metric - self.metric.transpose()).amax();
        if off > 0.0 || sym > 1e-12 || self.metric.clone().cholesky().is_none() {
            violations.push(Violation {
                kind: ViolationKind::MetricStructure,
                residual: off.max(sym),
                detail: String::from("metric is not symmetric positive definite and block diagonal by layer"),
            });
        }
        ValidationReport { violations }
    }

    // columns: [e_a, e_b] for deg a = la, deg b = lb
    fn bracket_image(&self, la: usize, lb: usize, basis: &[DVector<f64>]) -> DMatrix<f64> {
        let ra = self.layer_range(la);
        let rb = self.layer_range(lb);
        let mut m = DMatrix::zeros(self.dim(), ra.len() * rb.len());
        for (ia, a) in ra.clone().enumerate() {
            for (ib, b) in rb.clone().enumerate() {
                m.set_column(ia * rb.len() + ib, &self.bracket_coeffs(&basis[a], &basis[b]));
            }
        }
        m
    }

    /// Canonical extension of the layer-1 scalar product: on each layer
    /// `k+1`, the map `B: g^1 ⊗ g^k → g^{k+1}, X⊗Y ↦ [X,Y]` restricted to
    /// `(ker B)^⊥` is declared an isometry.
    pub fn canonical_metric_extension(&self) -> Result<Self> {
        let n = self.dim();
        let mut metric = DMatrix::zeros(n, n);
        let h = self.layer_range(1);
        let g1 = self.metric.view((0, 0), (h.len(), h.len())).into_owned();
        metric.view_mut((0, 0), (h.len(), h.len())).copy_from(&g1);
        let mut prev = g1.clone();
        for k in 1..self.step() {
            let rk = self.layer_range(k);
            let rn = self.layer_range(k + 1);
            // orthonormal bases of g^1 and g^k: columns of L^{-T}
            let o1 = orthonormal_coords(&g1)?;
            let ok = orthonormal_coords(&prev)?;
            let mut b = DMatrix::zeros(rn.len(), h.len() * rk.len());
            for a in 0..h.len() {
                let mut xa = DVector::zeros(n);
                xa.rows_mut(h.start, h.len()).copy_from(&o1.column(a));
                for c in 0..rk.len() {
                    let mut yc = DVector::zeros(n);
                    yc.rows_mut(rk.start, rk.len()).copy_from(&ok.column(c));
                    let z = self.bracket_coeffs(&xa, &yc);
                    b.set_column(a * rk.len() + c, &z.rows(rn.start, rn.len()));
                }
            }
            let svd = b.svd(true, false);
            let u = svd.u.expect("requested u");
            let smax = svd.singular_values.max();
            let mut g = DMatrix::zeros(rn.len(), rn.len());
            let mut rank = 0;
            for (i, &s) in svd.singular_values.iter().enumerate() {
                if s > RANK_TOL * smax && s > 0.0 {
                    rank += 1;
                    let ui = u.column(i);
                    g += (ui * ui.transpose()) / (s * s);
                }
            }
            if rank < rn.len() {
                return Err(Error::NotSurjective { layer: k + 1, rank, dim: rn.len() });
            }
            metric.view_mut((rn.start, rn.start), (rn.len(), rn.len())).copy_from(&g);
            prev = g;
        }
        let mut out = self.clone();
        out.metric = metric;
        Ok(out)
    }
}

// Columns: coordinates of an orthonormal basis for the scalar product `g`.
fn orthonormal_coords(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = g.clone().cholesky().ok_or(Error::MetricNotPositive)?.l();
    l.transpose().try_inverse().ok_or(Error::MetricNotPositive)
}

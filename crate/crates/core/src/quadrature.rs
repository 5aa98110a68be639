//! Tensor-product Gauss–Legendre rules on parameter boxes.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes and weights of the `q`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = alloc::vec![0.0; q];
    let mut w = alloc::vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        let mut z = libm::cos(PI * (i as f64 + 0.75) / (q as f64 + 0.5));
        for _ in 0..100 {
            let (p, d) = legendre(q, z);
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let dp = legendre(q, z).1;
        x[i] = -z;
        x[q - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[q - 1 - i] = wi;
    }
    (x, w)
}

// (P_q(z), P_q'(z))
fn legendre(q: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=q {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, q as f64 * (z * p1 - p0) / (z * z - 1.0))
}

/// A tensor-product Gauss–Legendre rule on `Π [lo_a, hi_a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub order: usize,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(lo: &[f64], hi: &[f64], order: usize) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        if order == 0 || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
            return Err(Error::OutOfDomain("quadrature box must be non-empty and order positive"));
        }
        let (x, w) = gauss_legendre(order);
        let mut nodes: Vec<Vec<f64>> = alloc::vec![Vec::new()];
        let mut weights = alloc::vec![1.0];
        for a in 0..lo.len() {
            let (c, r) = (0.5 * (lo[a] + hi[a]), 0.5 * (hi[a] - lo[a]));
            let mut nn = Vec::with_capacity(nodes.len() * order);
            let mut nw = Vec::with_capacity(nodes.len() * order);
            for (node, wt) in nodes.iter().zip(&weights) {
                for k in 0..order {
                    let mut p = node.clone();
                    p.push(c + r * x[k]);
                    nn.push(p);
                    nw.push(wt * r * w[k]);
                }
            }
            nodes = nn;
            weights = nw;
        }
        Ok(Self { lo: lo.to_vec(), hi: hi.to_vec(), order, nodes, weights })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    /// The two faces orthogonal to axis `axis`, as `(grid on the remaining
    /// axes, lo value, hi value)`. For a one-dimensional box the face grid has
    /// a single empty node of weight 1.
    pub fn faces(&self, axis: usize) -> (QuadratureGrid, f64, f64) {
        let lo: Vec<f64> = (0..self.dim()).filter(|&a| a != axis).map(|a| self.lo[a]).collect();
        let hi: Vec<f64> = (0..self.dim()).filter(|&a| a != axis).map(|a| self.hi[a]).collect();
        let g = if lo.is_empty() {
            QuadratureGrid { lo, hi, order: self.order, nodes: alloc::vec![Vec::new()], weights: alloc::vec![1.0] }
        } else {
            QuadratureGrid::new(&lo, &hi, self.order).expect("face of a valid box")
        };
        (g, self.lo[axis], self.hi[axis])
    }

    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        let mut acc = crate::linalg::KahanSum::default();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc.add(w * f(x));
        }
        acc.value()
    }
}

/// Inserts `value` at position `axis` of the face point `rest`.
pub fn lift_face_point(rest: &[f64], axis: usize, value: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(rest.len() + 1);
    p.extend_from_slice(&rest[..axis]);
    p.push(value);
    p.extend_from_slice(&rest[axis..]);
    p
}

//! Small dense linear-algebra helpers on top of nalgebra.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

/// Singular values in decreasing order together with the full set of right
/// singular vectors (columns of an `ncols × ncols` orthogonal matrix), in the
/// same order. Wide inputs are zero-padded so that the kernel is included.
pub(crate) fn svd_right(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    let k = r.max(c);
    let mut sq = DMatrix::zeros(k, c);
    sq.view_mut((0, 0), (r, c)).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sig = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(c, c);
    for (col, &i) in idx.iter().enumerate() {
        v.set_column(col, &vt.row(i).transpose());
    }
    (sig, v)
}

pub(crate) fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Orthonormal basis (as columns) of the column space of `m`. Singular
/// values at or below `max(rel·σ_max, abs)` count as zero.
pub(crate) fn column_space(m: &DMatrix<f64>, rel: f64, abs: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if c == 0 || r == 0 {
        return DMatrix::zeros(r, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested u");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > (rel * smax).max(abs))
        .collect();
    let mut q = DMatrix::zeros(r, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        q.set_column(j, &u.column(i));
    }
    q
}

/// Candidate selection for [`project_orthonormalize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Select {
    /// Largest remaining component first.
    Pivot,
    /// In order, skipping candidates with a negligible remaining component.
    Ordered,
    /// In order; a negligible candidate is a failure.
    Strict,
}

/// Gram–Schmidt on the projections `P r` of the reference vectors. Returns
/// `None` when the references do not yield `count` directions.
pub(crate) fn project_orthonormalize(
    proj: &DMatrix<f64>,
    refs: &[DVector<f64>],
    count: usize,
    select: Select,
) -> Option<Vec<DVector<f64>>> {
    const FLOOR: f64 = 1e-6;
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(count);
    let mut pool: Vec<DVector<f64>> = refs.iter().map(|r| proj * r).collect();
    let mut used = alloc::vec![false; pool.len()];
    for _ in 0..count {
        let pick = match select {
            Select::Pivot => {
                let mut best = None;
                let mut best_norm = FLOOR;
                for (i, w) in pool.iter().enumerate() {
                    if !used[i] && w.norm() > best_norm {
                        best_norm = w.norm();
                        best = Some(i);
                    }
                }
                best?
            }
            Select::Ordered => (0..pool.len()).find(|&i| !used[i] && pool[i].norm() > FLOOR)?,
            Select::Strict => {
                let i = used.iter().position(|u| !u)?;
                if pool[i].norm() <= FLOOR {
                    return None;
                }
                i
            }
        };
        used[pick] = true;
        let q = pool[pick].normalize();
        for w in pool.iter_mut() {
            let c = q.dot(w);
            w.axpy(-c, &q, 1.0);
        }
        // one reorthogonalization pass against the accepted vectors
        let mut q = q;
        for prev in &out {
            let c = prev.dot(&q);
            q.axpy(-c, prev, 1.0);
        }
        out.push(q.normalize());
    }
    Some(out)
}

/// Kahan-compensated accumulator, used wherever reports must be reproducible
/// independently of how partial sums are grouped.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum
    }
}

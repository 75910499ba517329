//! Cross approximation and factorized low-rank blocks.

use nalgebra::{DMatrix, DVector};

/// Low-rank block `A C B^T`, or `A B^T` without a middle factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: Option<DMatrix<f64>>,
    pub row_pivots: Vec<usize>,
    pub col_pivots: Vec<usize>,
}

impl LowRankFactor {
    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.b.nrows()
    }

    /// Inner dimension of the factorization.
    pub fn rank(&self) -> usize {
        match &self.c {
            Some(c) => c.nrows().min(c.ncols()),
            None => self.a.ncols(),
        }
    }

    pub fn coefficient_count(&self) -> usize {
        self.a.len() + self.b.len() + self.c.as_ref().map_or(0, |c| c.len())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.c {
            Some(c) => &self.a * c * self.b.transpose(),
            None => &self.a * self.b.transpose(),
        }
    }

    /// `y += F x`
    pub fn apply_add(&self, x: &[f64], y: &mut [f64]) {
        let x = DVector::from_column_slice(x);
        let mut z = self.b.tr_mul(&x);
        if let Some(c) = &self.c {
            z = c * z;
        }
        let r = &self.a * z;
        for (yi, ri) in y.iter_mut().zip(r.iter()) {
            *yi += ri;
        }
    }

    /// `y += F^T x`
    pub fn apply_transpose_add(&self, x: &[f64], y: &mut [f64]) {
        let x = DVector::from_column_slice(x);
        let mut z = self.a.tr_mul(&x);
        if let Some(c) = &self.c {
            z = c.tr_mul(&z);
        }
        let r = &self.b * z;
        for (yi, ri) in y.iter_mut().zip(r.iter()) {
            *yi += ri;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcaStatus {
    /// The stopping criterion was met.
    Converged,
    /// Every remaining candidate row had a zero residual.
    ZeroPivot,
    /// The rank limit was reached before the criterion was met.
    MaxRank,
}

#[derive(Debug, Clone)]
pub struct AcaResult {
    pub factor: LowRankFactor,
    pub status: AcaStatus,
}

/// Partially pivoted cross approximation of the implicit matrix `entry(i, j)`.
///
/// A new cross `u v^T` is accepted only while
/// `|u| |v| > eps * |sum of accepted crosses|_F`, the norm being updated
/// incrementally. Pivots are returned in selection order.
pub fn aca(entry: impl Fn(usize, usize) -> f64, nrows: usize, ncols: usize, eps: f64, k_max: usize) -> AcaResult {
    let k_max = k_max.min(nrows).min(ncols);
    let mut us: Vec<DVector<f64>> = Vec::new();
    let mut vs: Vec<DVector<f64>> = Vec::new();
    let mut row_pivots = Vec::new();
    let mut col_pivots = Vec::new();
    let mut row_used = vec![false; nrows];
    let mut col_used = vec![false; ncols];
    let mut norm2 = 0.0;
    let mut status = AcaStatus::MaxRank;

    let residual_col = |j: usize, us: &[DVector<f64>], vs: &[DVector<f64>]| {
        let mut c = DVector::from_fn(nrows, |i, _| entry(i, j));
        for (u, v) in us.iter().zip(vs) {
            c.axpy(-v[j], u, 1.0);
        }
        c
    };
    let residual_row = |i: usize, us: &[DVector<f64>], vs: &[DVector<f64>]| {
        let mut r = DVector::from_fn(ncols, |j, _| entry(i, j));
        for (u, v) in us.iter().zip(vs) {
            r.axpy(-u[i], v, 1.0);
        }
        r
    };
    let argmax = |x: &DVector<f64>, used: &[bool]| {
        (0..x.len())
            .filter(|&i| !used[i])
            .max_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()))
    };

    if k_max == 0 {
        return AcaResult {
            factor: LowRankFactor {
                a: DMatrix::zeros(nrows, 0),
                b: DMatrix::zeros(ncols, 0),
                c: None,
                row_pivots,
                col_pivots,
            },
            status: AcaStatus::ZeroPivot,
        };
    }

    // The first row is the largest entry of column 0.
    let start = residual_col(0, &us, &vs);
    let mut next_row = argmax(&start, &row_used);
    while us.len() < k_max {
        let Some(mut i) = next_row else {
            status = AcaStatus::ZeroPivot;
            break;
        };
        // Skip rows whose residual vanishes.
        let (row, j) = loop {
            row_used[i] = true;
            let row = residual_row(i, &us, &vs);
            match argmax(&row, &col_used) {
                Some(j) if row[j] != 0.0 => break (row, Some(j)),
                _ => match (0..nrows).find(|&r| !row_used[r]) {
                    Some(r) => i = r,
                    None => break (row, None),
                },
            }
        };
        let Some(j) = j else {
            status = AcaStatus::ZeroPivot;
            break;
        };
        let col = residual_col(j, &us, &vs) / row[j];
        let term = col.norm() * row.norm();
        let mut cross = 0.0;
        for (u, v) in us.iter().zip(&vs) {
            cross += u.dot(&col) * v.dot(&row);
        }
        let new_norm2 = norm2 + 2.0 * cross + term * term;
        if term <= eps * new_norm2.max(0.0).sqrt() {
            status = AcaStatus::Converged;
            break;
        }
        norm2 = new_norm2;
        col_used[j] = true;
        next_row = argmax(&col, &row_used);
        row_pivots.push(i);
        col_pivots.push(j);
        us.push(col);
        vs.push(row);
    }
    let k = us.len();
    let a = DMatrix::from_fn(nrows, k, |i, l| us[l][i]);
    let b = DMatrix::from_fn(ncols, k, |j, l| vs[l][j]);
    AcaResult {
        factor: LowRankFactor {
            a,
            b,
            c: None,
            row_pivots,
            col_pivots,
        },
        status,
    }
}

/// Pivot sets and inverse pivot block of a fully pivoted cross
/// approximation `S ~ S[:, cols] C S[rows, :]` of an explicit matrix.
#[derive(Debug, Clone)]
pub struct CrossSkeleton {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    /// `S[rows, cols]^{-1}`, shape `|cols| x |rows|`.
    pub c: DMatrix<f64>,
    /// `|S - S[:, cols] C S[rows, :]|_F / |S|_F` of the elimination.
    pub residual: f64,
    pub status: AcaStatus,
}

/// Full-pivot cross approximation, stopping once the explicit residual
/// satisfies `|R|_F <= eps |S|_F`.
pub fn aca_inverse_core(s: &DMatrix<f64>, eps: f64) -> CrossSkeleton {
    let total = s.norm();
    let mut r = s.clone();
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let k_max = s.nrows().min(s.ncols());
    let mut status = AcaStatus::MaxRank;
    let mut res = r.norm();
    while rows.len() < k_max {
        if res <= eps * total {
            status = AcaStatus::Converged;
            break;
        }
        let (i, j) = r.iamax_full();
        let pivot = r[(i, j)];
        if pivot == 0.0 {
            status = AcaStatus::ZeroPivot;
            break;
        }
        let col = r.column(j).clone_owned();
        let row = r.row(i).clone_owned();
        r.ger(-1.0 / pivot, &col, &row.transpose(), 1.0);
        // Pin the eliminated cross to zero against rounding.
        r.row_mut(i).fill(0.0);
        r.column_mut(j).fill(0.0);
        rows.push(i);
        cols.push(j);
        res = r.norm();
    }
    if rows.len() == k_max && res <= eps * total {
        status = AcaStatus::Converged;
    }
    let pivot_block = s.select_rows(&rows).select_columns(&cols);
    let c = pivot_block
        .lu()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::zeros(cols.len(), rows.len()));
    CrossSkeleton {
        rows,
        cols,
        c,
        residual: if total > 0.0 { res / total } else { 0.0 },
        status,
    }
}

/// Recompresses `F` to the smallest rank whose discarded singular values
/// have Euclidean norm at most `eps |F|_F`.
pub fn truncate(f: &LowRankFactor, eps: f64) -> LowRankFactor {
    let a = match &f.c {
        Some(c) => &f.a * c,
        None => f.a.clone(),
    };
    let k = a.ncols();
    if k == 0 || a.nrows() == 0 || f.b.nrows() == 0 {
        return LowRankFactor {
            a: DMatrix::zeros(f.nrows(), 0),
            b: DMatrix::zeros(f.ncols(), 0),
            c: None,
            row_pivots: Vec::new(),
            col_pivots: Vec::new(),
        };
    }
    let qa = a.qr();
    let qb = f.b.clone().qr();
    let core = qa.r() * qb.r().transpose();
    let svd = core.svd(true, true);
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&x, &y| sv[y].total_cmp(&sv[x]));
    let total2: f64 = sv.iter().map(|s| s * s).sum();
    let mut keep = order.len();
    let mut tail2 = 0.0;
    while keep > 0 {
        let s = sv[order[keep - 1]];
        if tail2 + s * s > eps * eps * total2 {
            break;
        }
        tail2 += s * s;
        keep -= 1;
    }
    let u = svd.u.as_ref().expect("requested u");
    let vt = svd.v_t.as_ref().expect("requested v_t");
    let kept = &order[..keep];
    let us = DMatrix::from_fn(u.nrows(), keep, |i, l| u[(i, kept[l])] * sv[kept[l]]);
    let vs = DMatrix::from_fn(vt.ncols(), keep, |j, l| vt[(kept[l], j)]);
    LowRankFactor {
        a: qa.q() * us,
        b: qb.q() * vs,
        c: None,
        row_pivots: Vec::new(),
        col_pivots: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_one_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 1.0, 2.0]);
        let res = aca(|i, j| m[(i, j)], 2, 2, 1e-12, 10);
        assert_eq!(res.factor.rank(), 1);
        assert_eq!((res.factor.to_dense() - &m).norm(), 0.0);
    }

    #[test]
    fn identity_keeps_full_rank() {
        let res = aca(|i, j| if i == j { 1.0 } else { 0.0 }, 2, 2, 1e-12, 10);
        assert_eq!(res.factor.rank(), 2);
        assert_eq!(res.status, AcaStatus::MaxRank);
    }

    #[test]
    fn inverse_core_examples() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = DVector::from_vec(vec![3.0, 1.0]);
        let s = &u * v.transpose();
        let sk = aca_inverse_core(&s, 1e-12);
        assert_eq!(sk.rows, vec![1]);
        assert_eq!(sk.cols, vec![0]);
        assert!((sk.c[(0, 0)] - 1.0 / (u[1] * v[0])).abs() < 1e-15);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-12]));
        let sk = aca_inverse_core(&d, 1e-6);
        assert_eq!((sk.rows.clone(), sk.cols.clone()), (vec![0], vec![0]));
        assert_eq!(sk.status, AcaStatus::Converged);
    }

    #[test]
    fn truncate_drops_dependent_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = DMatrix::from_fn(10, 3, |_, _| rng.gen_range(-1.0..1.0));
        let col = a.column(0).clone_owned();
        a.set_column(2, &col);
        let b = DMatrix::from_fn(8, 3, |_, _| rng.gen_range(-1.0..1.0));
        let f = LowRankFactor {
            a,
            b,
            c: None,
            row_pivots: vec![],
            col_pivots: vec![],
        };
        let t = truncate(&f, 1e-14);
        assert!(t.rank() <= 2);
        assert!((t.to_dense() - f.to_dense()).norm() <= 1e-13 * f.to_dense().norm());
        let mut g = f.clone();
        g.a[(0, 2)] += 0.5;
        assert_eq!(truncate(&g, 0.0).rank(), 3);
    }

    #[test]
    fn transpose_apply_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = LowRankFactor {
            a: DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0)),
            b: DMatrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0)),
            c: Some(DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0..1.0))),
            row_pivots: vec![],
            col_pivots: vec![],
        };
        let d = f.to_dense();
        let x: Vec<f64> = (0..4).map(|i| i as f64 - 1.5).collect();
        let mut y = vec![0.0; 6];
        f.apply_add(&x, &mut y);
        let expected = &d * DVector::from_vec(x);
        assert!((DVector::from_vec(y) - expected).norm() < 1e-14);
        let z: Vec<f64> = (0..6).map(|i| (i as f64).cos()).collect();
        let mut w = vec![0.0; 4];
        f.apply_transpose_add(&z, &mut w);
        let expected = d.transpose() * DVector::from_vec(z);
        assert!((DVector::from_vec(w) - expected).norm() < 1e-14);
    }
}

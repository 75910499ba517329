//! Matrix containers: dense oracle, blockwise low-rank H-matrix and
//! nested-basis H2-matrix, with matvec and storage accounting.
//!
//! Blocks are stored in the permuted (cluster) ordering of their trees; the
//! public matvecs take and return vectors in natural dof order.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::clustering::ClusterTree;
use crate::kernel::{GalerkinAssembler, KernelError, KernelKind};
use crate::lowrank::LowRankFactor;
use crate::solver::LinearOperator;

const BYTES_PER_COEFFICIENT: usize = 8;

/// Default maximal dof count for dense oracle assembly.
pub const DENSE_CAP: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("dense assembly of {dofs} dofs exceeds the oracle cap of {cap}")]
    CapExceeded { dofs: usize, cap: usize },
    #[error("vector has length {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("block ({row}, {col}): {source}")]
    Block {
        row: usize,
        col: usize,
        #[source]
        source: KernelError,
    },
}

/// Bytes by category; the categories sum to the total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StorageReport {
    pub basis: usize,
    pub coupling: usize,
    pub lowrank: usize,
    pub nearfield: usize,
}

impl StorageReport {
    pub fn total(&self) -> usize {
        self.basis + self.coupling + self.lowrank + self.nearfield
    }

    /// `category,bytes` rows with a header and a final total row.
    pub fn to_csv(&self) -> String {
        format!(
            "category,bytes\nbasis,{}\ncoupling,{}\nlowrank,{}\nnearfield,{}\ntotal,{}\n",
            self.basis,
            self.coupling,
            self.lowrank,
            self.nearfield,
            self.total()
        )
    }
}

impl fmt::Display for StorageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}

/// Common interface of the dense, H- and H2-matrix containers.
pub trait MatrixOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A x` in natural dof order.
    fn matvec(&self, x: &[f64]) -> Vec<f64>;
    /// `A^T x` in natural dof order.
    fn matvec_transpose(&self, x: &[f64]) -> Vec<f64>;
    fn storage(&self) -> StorageReport;
    /// Main diagonal (square matrices), in natural order.
    fn diagonal(&self) -> Vec<f64>;

    fn checked_matvec(&self, x: &[f64]) -> Result<Vec<f64>, MatrixError> {
        if x.len() != self.ncols() {
            return Err(MatrixError::Dimension {
                expected: self.ncols(),
                found: x.len(),
            });
        }
        Ok(self.matvec(x))
    }
}

/// Explicit matrix of an operator, one matvec per column.
pub fn to_dense(op: &dyn MatrixOperator) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(op.nrows(), op.ncols());
    let mut e = vec![0.0; op.ncols()];
    for j in 0..op.ncols() {
        e[j] = 1.0;
        out.set_column(j, &DVector::from_vec(op.matvec(&e)));
        e[j] = 0.0;
    }
    out
}

/// Square `MatrixOperator` seen as a `LinearOperator`.
pub struct SquareOperator<'a>(pub &'a dyn MatrixOperator);

impl LinearOperator for SquareOperator<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.0.matvec(x));
    }
}

#[derive(Debug, Clone)]
pub struct DenseMatrix {
    pub matrix: DMatrix<f64>,
}

impl DenseMatrix {
    /// Entrywise assembly of the full Galerkin matrix.
    pub fn assemble(asm: &GalerkinAssembler, kind: KernelKind, cap: usize) -> Result<Self, MatrixError> {
        let mesh = asm.mesh();
        let nr = kind.row_space().dof_count(mesh);
        let nc = kind.col_space().dof_count(mesh);
        if nr.max(nc) > cap {
            return Err(MatrixError::CapExceeded { dofs: nr.max(nc), cap });
        }
        let rows: Vec<usize> = (0..nr).collect();
        // Columns in chunks so the work parallelizes.
        let chunk = 16;
        let col_chunks: Vec<Vec<usize>> = (0..nc).collect::<Vec<_>>().chunks(chunk).map(|c| c.to_vec()).collect();
        let parts: Result<Vec<DMatrix<f64>>, KernelError> = col_chunks
            .par_iter()
            .map(|cols| asm.block(kind, &rows, cols))
            .collect();
        let parts = parts.map_err(|source| MatrixError::Block { row: 0, col: 0, source })?;
        let mut matrix = DMatrix::zeros(nr, nc);
        for (k, p) in parts.iter().enumerate() {
            matrix.columns_mut(k * chunk, p.ncols()).copy_from(p);
        }
        Ok(Self { matrix })
    }
}

impl MatrixOperator for DenseMatrix {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.tr_mul(&DVector::from_column_slice(x)).as_slice().to_vec()
    }

    fn storage(&self) -> StorageReport {
        StorageReport {
            nearfield: self.matrix.len() * BYTES_PER_COEFFICIENT,
            ..Default::default()
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal().as_slice().to_vec()
    }
}

/// Leaf payload tied to a pair of clusters.
#[derive(Debug, Clone)]
pub struct LeafBlock<T> {
    pub row: usize,
    pub col: usize,
    pub data: T,
}

fn permuted_input(tree: &ClusterTree, x: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), tree.dof_count(), "vector length does not match the column space");
    tree.to_permuted(x)
}

// Adds per-block results in block order so the sum is independent of the
// thread schedule.
fn accumulate(out: &mut [f64], parts: Vec<(usize, DVector<f64>)>) {
    for (start, part) in parts {
        for (o, v) in out[start..start + part.len()].iter_mut().zip(part.iter()) {
            *o += v;
        }
    }
}

fn dense_part(
    blocks: &[LeafBlock<DMatrix<f64>>],
    rows: &ClusterTree,
    cols: &ClusterTree,
    x: &[f64],
    transpose: bool,
) -> Vec<(usize, DVector<f64>)> {
    blocks
        .par_iter()
        .map(|b| {
            let (rt, ct) = (rows.cluster(b.row), cols.cluster(b.col));
            if transpose {
                let xs = DVector::from_column_slice(&x[rt.start..rt.end]);
                (ct.start, b.data.tr_mul(&xs))
            } else {
                let xs = DVector::from_column_slice(&x[ct.start..ct.end]);
                (rt.start, &b.data * xs)
            }
        })
        .collect()
}

fn nearfield_diagonal(blocks: &[LeafBlock<DMatrix<f64>>], rows: &ClusterTree) -> Vec<f64> {
    let mut d = vec![0.0; rows.dof_count()];
    for b in blocks.iter().filter(|b| b.row == b.col) {
        let start = rows.cluster(b.row).start;
        for k in 0..b.data.nrows().min(b.data.ncols()) {
            d[start + k] = b.data[(k, k)];
        }
    }
    rows.to_natural(&d)
}

/// Blockwise low-rank hierarchical matrix.
#[derive(Debug, Clone)]
pub struct HMatrix {
    pub rows: Arc<ClusterTree>,
    pub cols: Arc<ClusterTree>,
    pub farfield: Vec<LeafBlock<LowRankFactor>>,
    pub nearfield: Vec<LeafBlock<DMatrix<f64>>>,
}

impl HMatrix {
    /// Dense reconstruction of farfield leaf `k` (cluster-ordered).
    pub fn farfield_dense(&self, k: usize) -> DMatrix<f64> {
        self.farfield[k].data.to_dense()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.farfield.iter().map(|b| b.data.rank()).collect()
    }

    fn apply_permuted(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        let (rows, cols) = (&*self.rows, &*self.cols);
        let mut parts: Vec<(usize, DVector<f64>)> = self
            .farfield
            .par_iter()
            .map(|b| {
                let (rt, ct) = (rows.cluster(b.row), cols.cluster(b.col));
                if transpose {
                    let mut y = vec![0.0; ct.size()];
                    b.data.apply_transpose_add(&x[rt.start..rt.end], &mut y);
                    (ct.start, DVector::from_vec(y))
                } else {
                    let mut y = vec![0.0; rt.size()];
                    b.data.apply_add(&x[ct.start..ct.end], &mut y);
                    (rt.start, DVector::from_vec(y))
                }
            })
            .collect();
        parts.extend(dense_part(&self.nearfield, rows, cols, x, transpose));
        let n = if transpose { cols.dof_count() } else { rows.dof_count() };
        let mut out = vec![0.0; n];
        accumulate(&mut out, parts);
        out
    }
}

impl MatrixOperator for HMatrix {
    fn nrows(&self) -> usize {
        self.rows.dof_count()
    }

    fn ncols(&self) -> usize {
        self.cols.dof_count()
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let xp = permuted_input(&self.cols, x);
        self.rows.to_natural(&self.apply_permuted(&xp, false))
    }

    fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let xp = permuted_input(&self.rows, x);
        self.cols.to_natural(&self.apply_permuted(&xp, true))
    }

    fn storage(&self) -> StorageReport {
        StorageReport {
            lowrank: self.farfield.iter().map(|b| b.data.coefficient_count()).sum::<usize>() * BYTES_PER_COEFFICIENT,
            nearfield: self.nearfield.iter().map(|b| b.data.len()).sum::<usize>() * BYTES_PER_COEFFICIENT,
            ..Default::default()
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        nearfield_diagonal(&self.nearfield, &self.rows)
    }
}

/// Nested cluster basis: leaf matrices `V_t` and transfer matrices `E_t`
/// with `V_parent|_t = V_t E_t` for every child `t`.
#[derive(Debug, Clone)]
pub struct ClusterBasis {
    pub tree: Arc<ClusterTree>,
    /// `V_t` (`|t| x k_t`, rows in cluster order) for leaves.
    pub leaf: Vec<Option<DMatrix<f64>>>,
    /// `E_t` (`k_t x k_parent`) for every non-root cluster.
    pub transfer: Vec<Option<DMatrix<f64>>>,
    /// Dofs of the pivot set `t_hat`, `k_t` of them.
    pub pivots: Vec<Vec<usize>>,
}

impl ClusterBasis {
    pub fn rank(&self, t: usize) -> usize {
        self.pivots[t].len()
    }

    pub fn coefficient_count(&self) -> usize {
        let l: usize = self.leaf.iter().flatten().map(|m| m.len()).sum();
        let e: usize = self.transfer.iter().flatten().map(|m| m.len()).sum();
        l + e
    }

    /// Explicit `V_t` for any cluster, expanded through the transfers.
    pub fn dense_basis(&self, t: usize) -> DMatrix<f64> {
        let c = self.tree.cluster(t);
        match c.children {
            None => self.leaf[t].clone().expect("leaf matrix"),
            Some(children) => {
                let mut out = DMatrix::zeros(c.size(), self.rank(t));
                for ch in children {
                    let cc = self.tree.cluster(ch);
                    let v = self.dense_basis(ch) * self.transfer[ch].as_ref().expect("transfer matrix");
                    out.rows_mut(cc.start - c.start, cc.size()).copy_from(&v);
                }
                out
            }
        }
    }

    /// `x_hat_t = V_t^T x|_t` for all clusters, bottom-up (permuted `x`).
    pub fn forward(&self, x: &[f64]) -> Vec<DVector<f64>> {
        let tree = &*self.tree;
        let mut xhat: Vec<DVector<f64>> = (0..tree.len())
            .into_par_iter()
            .map(|t| match &self.leaf[t] {
                Some(v) => {
                    let c = tree.cluster(t);
                    v.tr_mul(&DVector::from_column_slice(&x[c.start..c.end]))
                }
                None => DVector::zeros(self.rank(t)),
            })
            .collect();
        // Children have larger ids than their parents.
        for t in (0..tree.len()).rev() {
            if let Some(children) = tree.cluster(t).children {
                let mut acc = DVector::zeros(self.rank(t));
                for ch in children {
                    acc += self.transfer[ch].as_ref().expect("transfer matrix").tr_mul(&xhat[ch]);
                }
                xhat[t] = acc;
            }
        }
        xhat
    }

    /// `y|_t += V_t y_hat_t` for all clusters, top-down.
    pub fn backward(&self, mut yhat: Vec<DVector<f64>>, y: &mut [f64]) {
        let tree = &*self.tree;
        for t in 0..tree.len() {
            if let Some(children) = tree.cluster(t).children {
                if yhat[t].iter().all(|v| *v == 0.0) {
                    continue;
                }
                for ch in children {
                    let add = self.transfer[ch].as_ref().expect("transfer matrix") * &yhat[t];
                    yhat[ch] += add;
                }
            }
        }
        let parts: Vec<(usize, DVector<f64>)> = (0..tree.len())
            .into_par_iter()
            .filter_map(|t| {
                self.leaf[t].as_ref().map(|v| (tree.cluster(t).start, v * &yhat[t]))
            })
            .collect();
        accumulate(y, parts);
    }
}

/// H2-matrix `V_t S_ts W_s^T` on farfield leaves plus dense nearfield.
#[derive(Debug, Clone)]
pub struct H2Matrix {
    pub row_basis: Arc<ClusterBasis>,
    pub col_basis: Arc<ClusterBasis>,
    pub coupling: Vec<LeafBlock<DMatrix<f64>>>,
    pub nearfield: Vec<LeafBlock<DMatrix<f64>>>,
}

impl H2Matrix {
    pub fn rows(&self) -> &ClusterTree {
        &self.row_basis.tree
    }

    pub fn cols(&self) -> &ClusterTree {
        &self.col_basis.tree
    }

    /// Dense reconstruction of farfield leaf `k` (cluster-ordered).
    pub fn farfield_dense(&self, k: usize) -> DMatrix<f64> {
        let b = &self.coupling[k];
        self.row_basis.dense_basis(b.row) * &b.data * self.col_basis.dense_basis(b.col).transpose()
    }

    /// Fault injection: adds `delta` to every entry of coupling matrix `k`.
    #[doc(hidden)]
    pub fn corrupt_coupling(&mut self, k: usize, delta: f64) {
        self.coupling[k].data.add_scalar_mut(delta);
    }

    fn apply_permuted(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        let (src, dst) = if transpose {
            (&*self.row_basis, &*self.col_basis)
        } else {
            (&*self.col_basis, &*self.row_basis)
        };
        let xhat = src.forward(x);
        let contributions: Vec<(usize, DVector<f64>)> = self
            .coupling
            .par_iter()
            .map(|b| {
                if transpose {
                    (b.col, b.data.tr_mul(&xhat[b.row]))
                } else {
                    (b.row, &b.data * &xhat[b.col])
                }
            })
            .collect();
        let mut yhat: Vec<DVector<f64>> = (0..dst.tree.len()).map(|t| DVector::zeros(dst.rank(t))).collect();
        for (t, v) in contributions {
            yhat[t] += v;
        }
        let mut out = vec![0.0; dst.tree.dof_count()];
        dst.backward(yhat, &mut out);
        let near = dense_part(&self.nearfield, self.rows(), self.cols(), x, transpose);
        accumulate(&mut out, near);
        out
    }
}

impl MatrixOperator for H2Matrix {
    fn nrows(&self) -> usize {
        self.rows().dof_count()
    }

    fn ncols(&self) -> usize {
        self.cols().dof_count()
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let xp = permuted_input(self.cols(), x);
        self.rows().to_natural(&self.apply_permuted(&xp, false))
    }

    fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let xp = permuted_input(self.rows(), x);
        self.cols().to_natural(&self.apply_permuted(&xp, true))
    }

    fn storage(&self) -> StorageReport {
        let mut basis = self.row_basis.coefficient_count();
        if !Arc::ptr_eq(&self.row_basis, &self.col_basis) {
            basis += self.col_basis.coefficient_count();
        }
        StorageReport {
            basis: basis * BYTES_PER_COEFFICIENT,
            coupling: self.coupling.iter().map(|b| b.data.len()).sum::<usize>() * BYTES_PER_COEFFICIENT,
            nearfield: self.nearfield.iter().map(|b| b.data.len()).sum::<usize>() * BYTES_PER_COEFFICIENT,
            ..Default::default()
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        nearfield_diagonal(&self.nearfield, self.rows())
    }
}

//! Hybrid cross approximation.
//!
//! The kernel sampled on two tensor Chebyshev grids, `S = g(xi_t, xi_s)`, is
//! skeletonized by full-pivot cross approximation,
//! `S ~ S[:, sigma] C S[tau, :]`. Taking the interpolation back gives the
//! degenerate kernel `sum g(x, xi_s[sigma]) C g(xi_t[tau], y)`, whose
//! Galerkin discretization needs only single integrals.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::clustering::{BlockKind, BlockTree, BoundingBox, ClusterTree};
use crate::discretization::SpaceKind;
use crate::hstruct::{HMatrix, LeafBlock, MatrixError};
use crate::kernel::{laplace_kernel, BasisQuadrature, GalerkinAssembler, KernelKind, PotentialKind};
use crate::lowrank::{aca_inverse_core, truncate, AcaStatus, CrossSkeleton, LowRankFactor};
use crate::mesh::Point3;

#[derive(Debug, Error, PartialEq)]
pub enum HcaError {
    #[error("interpolation order must be at least 1")]
    ZeroOrder,
}

/// Tensor Chebyshev grid of order `m` on a box, `m^3` points, enumerated
/// with the first axis slowest.
#[derive(Debug, Clone)]
pub struct InterpGrid {
    pub order: usize,
    pub bbox: BoundingBox,
    pub nodes: [Vec<f64>; 3],
    pub points: Vec<Point3>,
}

/// Chebyshev nodes `cos((2i + 1) pi / 2m)` mapped to each box edge. Thin
/// axes are widened first.
pub fn chebyshev_points(bbox: &BoundingBox, m: usize) -> Result<InterpGrid, HcaError> {
    if m == 0 {
        return Err(HcaError::ZeroOrder);
    }
    let bbox = bbox.widen_degenerate();
    let reference: Vec<f64> = (0..m)
        .map(|i| ((2 * i + 1) as f64 * std::f64::consts::PI / (2 * m) as f64).cos())
        .collect();
    let nodes = [0, 1, 2].map(|k| {
        let (a, b) = (bbox.a[k], bbox.b[k]);
        reference.iter().map(|r| 0.5 * (a + b) + 0.5 * (b - a) * r).collect::<Vec<f64>>()
    });
    let mut points = Vec::with_capacity(m * m * m);
    for &x in &nodes[0] {
        for &y in &nodes[1] {
            for &z in &nodes[2] {
                points.push(Point3::new(x, y, z));
            }
        }
    }
    Ok(InterpGrid {
        order: m,
        bbox,
        nodes,
        points,
    })
}

fn lagrange_1d(nodes: &[f64], x: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|i| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &xj)| (x - xj) / (nodes[i] - xj))
                .product()
        })
        .collect()
}

impl InterpGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// All Lagrange polynomials at `x`, in grid order.
    pub fn lagrange_all(&self, x: &Point3) -> Vec<f64> {
        let l = [0, 1, 2].map(|k| lagrange_1d(&self.nodes[k], x[k]));
        let mut out = Vec::with_capacity(self.len());
        for a in &l[0] {
            for b in &l[1] {
                for c in &l[2] {
                    out.push(a * b * c);
                }
            }
        }
        out
    }
}

/// Lagrange polynomial `nu` of the grid at `x`.
pub fn lagrange_eval(grid: &InterpGrid, nu: usize, x: &Point3) -> f64 {
    let m = grid.order;
    let idx = [nu / (m * m), (nu / m) % m, nu % m];
    (0..3)
        .map(|k| lagrange_1d(&grid.nodes[k], x[k])[idx[k]])
        .product()
}

/// Kernel matrix `g(xi_t, xi_s)` between two grids.
pub fn kernel_samples(gt: &InterpGrid, gs: &InterpGrid) -> DMatrix<f64> {
    DMatrix::from_fn(gt.len(), gs.len(), |i, j| laplace_kernel(&gt.points[i], &gs.points[j]))
}

/// Tensor interpolant of `g` on a box pair.
pub struct InterpolatedKernel {
    pub row_grid: InterpGrid,
    pub col_grid: InterpGrid,
    samples: DMatrix<f64>,
}

impl InterpolatedKernel {
    pub fn new(bt: &BoundingBox, bs: &BoundingBox, m: usize) -> Result<Self, HcaError> {
        let row_grid = chebyshev_points(bt, m)?;
        let col_grid = chebyshev_points(bs, m)?;
        let samples = kernel_samples(&row_grid, &col_grid);
        Ok(Self {
            row_grid,
            col_grid,
            samples,
        })
    }

    pub fn eval(&self, x: &Point3, y: &Point3) -> f64 {
        let lx = nalgebra::DVector::from_vec(self.row_grid.lagrange_all(x));
        let ly = nalgebra::DVector::from_vec(self.col_grid.lagrange_all(y));
        lx.dot(&(&self.samples * ly))
    }
}

/// The degenerate kernel `sum g(x, xi_s[sigma]) C g(xi_t[tau], y)`.
pub struct HcaKernel {
    pub row_grid: InterpGrid,
    pub col_grid: InterpGrid,
    pub skeleton: CrossSkeleton,
}

impl HcaKernel {
    pub fn new(bt: &BoundingBox, bs: &BoundingBox, m: usize, eps: f64) -> Result<Self, HcaError> {
        let row_grid = chebyshev_points(bt, m)?;
        let col_grid = chebyshev_points(bs, m)?;
        let skeleton = aca_inverse_core(&kernel_samples(&row_grid, &col_grid), eps);
        Ok(Self {
            row_grid,
            col_grid,
            skeleton,
        })
    }

    pub fn eval(&self, x: &Point3, y: &Point3) -> f64 {
        let sk = &self.skeleton;
        let gx = nalgebra::DVector::from_iterator(
            sk.cols.len(),
            sk.cols.iter().map(|&k| laplace_kernel(x, &self.col_grid.points[k])),
        );
        let gy = nalgebra::DVector::from_iterator(
            sk.rows.len(),
            sk.rows.iter().map(|&l| laplace_kernel(&self.row_grid.points[l], y)),
        );
        gx.dot(&(&sk.c * gy))
    }
}

/// Single-integral kernels for the two sides of a block and the sign of the
/// product, per operator.
pub(crate) fn side_kinds(kind: KernelKind) -> (PotentialKind, PotentialKind, f64) {
    use PotentialKind::{NormalDerivativeOnPanel as Dn, Value};
    match kind {
        KernelKind::Slp => (Value, Value, 1.0),
        KernelKind::DlpY => (Value, Dn, 1.0),
        KernelKind::DlpX => (Dn, Value, 1.0),
        // W = -d^2 g / (dn_x dn_y) away from the diagonal.
        KernelKind::Hyp => (Dn, Dn, -1.0),
    }
}

#[derive(Debug, Clone)]
pub struct HcaBlock {
    pub factor: LowRankFactor,
    pub status: AcaStatus,
}

/// HCA approximation `A C B^T` of the block `rows x cols` whose dof boxes
/// lie in the admissible pair `bt, bs`.
#[allow(clippy::too_many_arguments)]
pub fn hca_block(
    row_quad: &BasisQuadrature,
    col_quad: &BasisQuadrature,
    kind: KernelKind,
    rows: &[usize],
    cols: &[usize],
    bt: &BoundingBox,
    bs: &BoundingBox,
    m: usize,
    eps: f64,
) -> Result<HcaBlock, HcaError> {
    let hk = HcaKernel::new(bt, bs, m, eps)?;
    let (row_kind, col_kind, sign) = side_kinds(kind);
    let sk = &hk.skeleton;
    let xs: Vec<Point3> = sk.cols.iter().map(|&k| hk.col_grid.points[k]).collect();
    let xt: Vec<Point3> = sk.rows.iter().map(|&l| hk.row_grid.points[l]).collect();
    let a = row_quad.potential_matrix(rows, &xs, |_| row_kind);
    let b = col_quad.potential_matrix(cols, &xt, |_| col_kind);
    Ok(HcaBlock {
        factor: LowRankFactor {
            a,
            b,
            c: Some(sign * &sk.c),
            row_pivots: sk.rows.clone(),
            col_pivots: sk.cols.clone(),
        },
        status: sk.status,
    })
}

#[derive(Debug, Clone)]
pub struct HcaParams {
    /// Interpolation order `m`.
    pub order: usize,
    pub eps_aca: f64,
    /// Optional SVD recompression of every farfield block.
    pub eps_comp: Option<f64>,
}

/// Farfield blocks by HCA, nearfield blocks by dense Galerkin assembly.
pub fn assemble_hmatrix(
    asm: &GalerkinAssembler,
    kind: KernelKind,
    rows: Arc<ClusterTree>,
    cols: Arc<ClusterTree>,
    blocks: &BlockTree,
    params: &HcaParams,
) -> Result<HMatrix, MatrixError> {
    let mesh = asm.mesh();
    let quad = |space: SpaceKind| BasisQuadrature::new(mesh, space, params.order).expect("order >= 1");
    let row_quad = quad(kind.row_space());
    let col_quad = quad(kind.col_space());

    let far_ids = blocks.leaves(BlockKind::Farfield);
    let farfield: Vec<LeafBlock<LowRankFactor>> = far_ids
        .par_iter()
        .map(|&b| {
            let blk = blocks.block(b);
            let (ct, cs) = (rows.cluster(blk.row), cols.cluster(blk.col));
            let res = hca_block(
                &row_quad,
                &col_quad,
                kind,
                rows.indices(blk.row),
                cols.indices(blk.col),
                &ct.bbox,
                &cs.bbox,
                params.order,
                params.eps_aca,
            )
            .expect("order >= 1");
            let data = match params.eps_comp {
                Some(eps) => truncate(&res.factor, eps),
                None => res.factor,
            };
            LeafBlock {
                row: blk.row,
                col: blk.col,
                data,
            }
        })
        .collect();

    let near_ids = blocks.leaves(BlockKind::Nearfield);
    let nearfield: Result<Vec<LeafBlock<DMatrix<f64>>>, MatrixError> = near_ids
        .par_iter()
        .map(|&b| {
            let blk = blocks.block(b);
            asm.block(kind, rows.indices(blk.row), cols.indices(blk.col))
                .map(|data| LeafBlock {
                    row: blk.row,
                    col: blk.col,
                    data,
                })
                .map_err(|source| MatrixError::Block {
                    row: blk.row,
                    col: blk.col,
                    source,
                })
        })
        .collect();

    Ok(HMatrix {
        rows,
        cols,
        farfield,
        nearfield: nearfield?,
    })
}

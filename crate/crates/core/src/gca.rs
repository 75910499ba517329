//! Green cross approximation.
//!
//! For a cluster `t` with box `B_t`, Green's representation formula on an
//! auxiliary box `omega_t` expresses `g(x, y)`, `x` in `B_t`, through the
//! single and double layer potentials of `g(., y)` on `boundary omega_t`.
//! A quadrature rule `(w_nu, z_nu)` on the boundary turns this into a
//! low-rank expansion whose `2k` columns form the matrix `L`. Cross
//! approximation of `L` picks pivot rows `t_hat`; the basis
//! `V_t = L[:, sigma] L[t_hat, sigma]^{-1}` interpolates at those rows, so
//! `G|_{t x s} ~ V_t G|_{t_hat x s_hat} W_s^T`.
//!
//! Parents reuse the pivots of their children: the cross approximation runs
//! on the rows `t_hat_1 + t_hat_2` only, and the resulting basis splits into
//! the transfer matrices of the children.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::clustering::{BlockKind, BlockTree, BoundingBox, ClusterTree};
use crate::discretization::SpaceKind;
use crate::hstruct::{ClusterBasis, H2Matrix, LeafBlock, MatrixError};
use crate::kernel::{BasisQuadrature, GalerkinAssembler, KernelKind, PotentialKind, RegularIntegrator};
use crate::lowrank::{aca_inverse_core, AcaStatus};
use crate::mesh::Point3;
use crate::quadrature::gauss_legendre;

#[derive(Debug, Error, PartialEq)]
pub enum GcaError {
    #[error("Green quadrature order must be at least 1")]
    ZeroOrder,
}

/// `B_t` inflated on every face by its longest edge `delta_t`.
pub fn green_box(bt: &BoundingBox) -> BoundingBox {
    let b = bt.widen_degenerate();
    b.inflate(b.extent().max())
}

/// Quadrature on the boundary of a box: an `m x m` Gauss rule per face.
#[derive(Debug, Clone)]
pub struct GreenQuadrature {
    pub bbox: BoundingBox,
    pub points: Vec<Point3>,
    /// Outward unit normals of the faces.
    pub normals: Vec<Point3>,
    /// Weights including the face area.
    pub weights: Vec<f64>,
}

impl GreenQuadrature {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn green_quadrature(omega: &BoundingBox, m: usize) -> Result<GreenQuadrature, GcaError> {
    let rule = gauss_legendre(m).map_err(|_| GcaError::ZeroOrder)?;
    let e = omega.extent();
    let mut out = GreenQuadrature {
        bbox: *omega,
        points: Vec::with_capacity(6 * m * m),
        normals: Vec::with_capacity(6 * m * m),
        weights: Vec::with_capacity(6 * m * m),
    };
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let area = e[u] * e[v];
        for (side, coord) in [(-1.0, omega.a[axis]), (1.0, omega.b[axis])] {
            let mut n = Point3::zeros();
            n[axis] = side;
            for (su, wu) in rule.points.iter().zip(&rule.weights) {
                for (sv, wv) in rule.points.iter().zip(&rule.weights) {
                    let mut p = Point3::zeros();
                    p[axis] = coord;
                    p[u] = omega.a[u] + su * e[u];
                    p[v] = omega.a[v] + sv * e[v];
                    out.points.push(p);
                    out.normals.push(n);
                    out.weights.push(wu * wv * area);
                }
            }
        }
    }
    Ok(out)
}

/// Green's formula with the boundary quadrature,
/// `sum w (g(x, z) dg/dn_z(z, y) - dg/dn_z(x, z) g(z, y))`, which
/// reproduces `g(x, y)` for `x` inside and `y` outside the box.
pub fn green_kernel(q: &GreenQuadrature, x: &Point3, y: &Point3) -> f64 {
    use crate::kernel::{kernel_dn, laplace_kernel, DerivativeSide};
    let mut sum = 0.0;
    for ((z, n), w) in q.points.iter().zip(&q.normals).zip(&q.weights) {
        let dz_y = kernel_dn(y, z, n, DerivativeSide::Y).unwrap_or(0.0);
        let dz_x = kernel_dn(x, z, n, DerivativeSide::Y).unwrap_or(0.0);
        sum += w * (laplace_kernel(x, z) * dz_y - dz_x * laplace_kernel(z, y));
    }
    sum
}

/// Which single integrals make up the columns of `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisKind {
    /// `int psi g(x, z)` and `int psi dg/dn_z(x, z)`.
    Value,
    /// `int phi dg/dn_x(x, z)` and `int phi d^2 g/(dn_x dn_z)(x, z)`.
    NormalDerivative,
}

impl BasisKind {
    /// Basis for the row side of `kind` (`row = true`) or its column side.
    pub fn for_operator(kind: KernelKind, row: bool) -> Self {
        let derivative = match kind {
            KernelKind::Slp => false,
            KernelKind::DlpY => !row,
            KernelKind::DlpX => row,
            KernelKind::Hyp => true,
        };
        if derivative {
            BasisKind::NormalDerivative
        } else {
            BasisKind::Value
        }
    }
}

/// `L` for the given dofs: `|dofs| x 2k`, columns scaled by `sqrt(w)`.
pub fn green_matrix(quad: &BasisQuadrature, kind: BasisKind, dofs: &[usize], green: &GreenQuadrature) -> DMatrix<f64> {
    let k = green.len();
    quad.potential_matrix(dofs, &[green.points.clone(), green.points.clone()].concat(), |c| {
        let n = green.normals[c % k];
        match (kind, c < k) {
            (BasisKind::Value, true) => PotentialKind::Value,
            (BasisKind::Value, false) => PotentialKind::NormalDerivativeAtPoint(n),
            (BasisKind::NormalDerivative, true) => PotentialKind::NormalDerivativeOnPanel,
            (BasisKind::NormalDerivative, false) => PotentialKind::MixedNormalDerivative(n),
        }
    })
    .map_with_location(|_, c, v| v * green.weights[c % k].sqrt())
}

/// Result of one cluster's cross approximation.
#[derive(Debug, Clone)]
pub struct GcaStep {
    /// Pivot dofs `t_hat`.
    pub pivots: Vec<usize>,
    /// `L[:, sigma] L[t_hat, sigma]^{-1}`, rows matching the input dofs.
    pub basis: DMatrix<f64>,
    pub status: AcaStatus,
}

fn cross_step(quad: &BasisQuadrature, kind: BasisKind, dofs: &[usize], bbox: &BoundingBox, m: usize, eps: f64) -> GcaStep {
    let green = green_quadrature(&green_box(bbox), m).expect("order >= 1");
    let l = green_matrix(quad, kind, dofs, &green);
    let sk = aca_inverse_core(&l, eps);
    let basis = l.select_columns(&sk.cols) * &sk.c;
    GcaStep {
        pivots: sk.rows.iter().map(|&r| dofs[r]).collect(),
        basis,
        status: sk.status,
    }
}

/// Leaf construction on all dofs of `t`.
pub fn gca_leaf(
    quad: &BasisQuadrature,
    kind: BasisKind,
    tree: &ClusterTree,
    t: usize,
    m: usize,
    eps: f64,
) -> GcaStep {
    cross_step(quad, kind, tree.indices(t), &tree.cluster(t).bbox, m, eps)
}

/// Parent construction on `t_hat_1 + t_hat_2` with the parent's box.
/// Returns the step and the transfer matrices of the two children.
pub fn gca_nested(
    quad: &BasisQuadrature,
    kind: BasisKind,
    tree: &ClusterTree,
    t: usize,
    child_pivots: [&[usize]; 2],
    m: usize,
    eps: f64,
) -> (GcaStep, [DMatrix<f64>; 2]) {
    let rows: Vec<usize> = [child_pivots[0], child_pivots[1]].concat();
    let step = cross_step(quad, kind, &rows, &tree.cluster(t).bbox, m, eps);
    let k1 = child_pivots[0].len();
    let e1 = step.basis.rows(0, k1).clone_owned();
    let e2 = step.basis.rows(k1, rows.len() - k1).clone_owned();
    (step, [e1, e2])
}

type Transfer = [DMatrix<f64>; 2];

/// Nested GCA cluster basis, built level by level from the leaves up.
pub fn build_basis(
    quad: &BasisQuadrature,
    kind: BasisKind,
    tree: Arc<ClusterTree>,
    m: usize,
    eps: f64,
) -> ClusterBasis {
    let n = tree.len();
    let mut leaf = vec![None; n];
    let mut transfer = vec![None; n];
    let mut pivots: Vec<Vec<usize>> = vec![Vec::new(); n];
    for level in tree.levels().into_iter().rev() {
        let results: Vec<(usize, GcaStep, Option<Transfer>)> = level
            .par_iter()
            .map(|&t| match tree.cluster(t).children {
                None => (t, gca_leaf(quad, kind, &tree, t, m, eps), None),
                Some([c1, c2]) => {
                    let (step, e) = gca_nested(quad, kind, &tree, t, [&pivots[c1], &pivots[c2]], m, eps);
                    (t, step, Some(e))
                }
            })
            .collect();
        for (t, step, e) in results {
            match e {
                None => leaf[t] = Some(step.basis),
                Some([e1, e2]) => {
                    let [c1, c2] = tree.cluster(t).children.expect("non-leaf");
                    transfer[c1] = Some(e1);
                    transfer[c2] = Some(e2);
                }
            }
            pivots[t] = step.pivots;
        }
    }
    ClusterBasis {
        tree,
        leaf,
        transfer,
        pivots,
    }
}

#[derive(Debug, Clone)]
pub struct GcaParams {
    /// Gauss points per direction on every face of the Green box.
    pub order: usize,
    pub eps_aca: f64,
    /// Highest regular quadrature order for coupling entries.
    pub max_coupling_order: usize,
}

/// Coupling matrix `G|_{t_hat x s_hat}` by regular quadrature with an order
/// chosen from the separation of the two supports.
pub fn coupling_matrix(
    integrator: &RegularIntegrator,
    kind: KernelKind,
    row_pivots: &[usize],
    col_pivots: &[usize],
    tol: f64,
) -> DMatrix<f64> {
    let mesh = integrator.mesh();
    let (rs, cs) = (kind.row_space(), kind.col_space());
    let rb: Vec<BoundingBox> = row_pivots.iter().map(|&i| rs.support_box(mesh, i)).collect();
    let cb: Vec<BoundingBox> = col_pivots.iter().map(|&j| cs.support_box(mesh, j)).collect();
    for (a, ra) in rb.iter().enumerate() {
        for (b, cb) in cb.iter().enumerate() {
            assert!(ra.distance(cb) > 0.0, "coupling supports of dofs {} and {} touch", row_pivots[a], col_pivots[b]);
        }
    }
    integrator.block(kind, row_pivots, col_pivots, tol)
}

/// Row and column GCA bases for `kind`. Square operators share one basis.
pub fn build_bases(
    asm: &GalerkinAssembler,
    kind: KernelKind,
    rows: Arc<ClusterTree>,
    cols: Arc<ClusterTree>,
    params: &GcaParams,
) -> (Arc<ClusterBasis>, Arc<ClusterBasis>) {
    let mesh = asm.mesh();
    let row_kind = BasisKind::for_operator(kind, true);
    let col_kind = BasisKind::for_operator(kind, false);
    let quad = |space: SpaceKind| BasisQuadrature::new(mesh, space, params.order).expect("order >= 1");
    let row_quad = quad(kind.row_space());
    let row_basis = Arc::new(build_basis(&row_quad, row_kind, rows.clone(), params.order, params.eps_aca));
    if Arc::ptr_eq(&rows, &cols) && row_kind == col_kind {
        return (row_basis.clone(), row_basis);
    }
    let col_quad = quad(kind.col_space());
    let col_basis = Arc::new(build_basis(&col_quad, col_kind, cols, params.order, params.eps_aca));
    (row_basis, col_basis)
}

/// H2-matrix with GCA bases, coupling matrices from pivot entries and dense
/// nearfield blocks.
pub fn assemble_h2(
    asm: &GalerkinAssembler,
    kind: KernelKind,
    row_basis: Arc<ClusterBasis>,
    col_basis: Arc<ClusterBasis>,
    blocks: &BlockTree,
    params: &GcaParams,
) -> Result<H2Matrix, MatrixError> {
    let integrator = RegularIntegrator::new(asm.mesh(), params.max_coupling_order).expect("order >= 1");
    let tol = 0.1 * params.eps_aca;
    let far_ids = blocks.leaves(BlockKind::Farfield);
    let coupling: Vec<LeafBlock<DMatrix<f64>>> = far_ids
        .par_iter()
        .map(|&b| {
            let blk = blocks.block(b);
            LeafBlock {
                row: blk.row,
                col: blk.col,
                data: coupling_matrix(
                    &integrator,
                    kind,
                    &row_basis.pivots[blk.row],
                    &col_basis.pivots[blk.col],
                    tol,
                ),
            }
        })
        .collect();
    let (rows, cols) = (&row_basis.tree, &col_basis.tree);
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
    Ok(H2Matrix {
        row_basis,
        col_basis,
        coupling,
        nearfield: nearfield?,
    })
}

//! Conjugate gradients and the boundary value problem drivers.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::clustering::{BlockTree, ClusterTree};
use crate::discretization::{
    energy_error, interpolate_p1, l2_error, l2_project, load_vector, DiscretizationError, MixedMass, SpaceKind,
    TestCase,
};
use crate::gca::{assemble_h2, build_basis, BasisKind, GcaParams};
use crate::hca::{assemble_hmatrix, HcaParams};
use crate::hstruct::{
    ClusterBasis, DenseMatrix, H2Matrix, HMatrix, MatrixError, MatrixOperator, SquareOperator, StorageReport,
    DENSE_CAP,
};
use crate::kernel::{BasisQuadrature, GalerkinAssembler, KernelKind};
use crate::mesh::{Point3, SurfaceMesh};
use crate::quadrature::QuadratureError;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("cg breakdown at iteration {iteration}: p^T A p = {curvature:e}")]
    Breakdown { iteration: usize, curvature: f64 },
    #[error("right-hand side has length {found}, operator dimension is {expected}")]
    Dimension { expected: usize, found: usize },
}

/// Square linear operator acting on plain vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }
}

/// Dense matrix operator, used as the oracle in tests.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols(), "dense operator must be square");
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let r = &self.matrix * DVector::from_column_slice(x);
        y.copy_from_slice(r.as_slice());
    }
}

#[derive(Debug, Clone)]
pub struct CgOptions {
    /// Relative residual `||b - Ax|| / ||b||` to reach.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual, recomputed from `b - Ax`.
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients from a zero initial guess. `diagonal`
/// enables Jacobi preconditioning.
pub fn cg(
    op: &dyn LinearOperator,
    b: &[f64],
    diagonal: Option<&[f64]>,
    opts: &CgOptions,
) -> Result<CgResult, SolverError> {
    let n = op.dim();
    if b.len() != n {
        return Err(SolverError::Dimension { expected: n, found: b.len() });
    }
    let precondition = |r: &[f64]| -> Vec<f64> {
        match diagonal {
            Some(d) => r.iter().zip(d).map(|(v, d)| v / d).collect(),
            None => r.to_vec(),
        }
    };
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(CgResult {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let mut r = b.to_vec();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        op.apply_into(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 {
            return Err(SolverError::Breakdown { iteration: iterations, curvature });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        if dot(&r, &r).sqrt() <= opts.tolerance * bnorm {
            converged = true;
            break;
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let ax = op.apply(&x);
    let res: f64 = b.iter().zip(&ax).map(|(b, a)| (b - a) * (b - a)).sum::<f64>().sqrt();
    Ok(CgResult {
        x,
        iterations,
        residual: res / bnorm,
        converged,
    })
}

/// How the boundary integral operators are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Hca,
    Gca,
    Dense,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Hca => "hca",
            Method::Gca => "gca",
            Method::Dense => "dense",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hca" => Ok(Method::Hca),
            "gca" => Ok(Method::Gca),
            "dense" => Ok(Method::Dense),
            _ => Err(format!("unknown method '{s}' (expected hca, gca or dense)")),
        }
    }
}

/// Boundary value problem to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    /// Dirichlet data in, Neumann data out.
    Dtn,
    /// Neumann data in, Dirichlet data out.
    Ntd,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::Dtn => "dtn",
            Problem::Ntd => "ntd",
        }
    }
}

impl FromStr for Problem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dtn" => Ok(Problem::Dtn),
            "ntd" => Ok(Problem::Ntd),
            _ => Err(format!("unknown problem '{s}' (expected dtn or ntd)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// Interpolation order (HCA) or Green quadrature order (GCA).
    pub order: usize,
    pub q_near: usize,
    pub leaf_size: usize,
    pub eta: f64,
    pub eps_aca: f64,
    /// Recompression of HCA blocks.
    pub eps_comp: Option<f64>,
    pub eps_solver: f64,
    pub max_iterations: usize,
    /// Highest regular quadrature order for GCA coupling entries.
    pub coupling_order: usize,
    /// Largest dof count for dense assembly.
    pub dense_cap: usize,
}

impl Params {
    /// Parameters for sphere refinement level `level`: `m = level` (at
    /// least 3), `r_leaf = level^2` (at least 4), `eps_aca = 10^-level` and
    /// a solver tolerance one order below.
    pub fn for_sphere_level(level: usize) -> Self {
        let eps = 10f64.powi(-(level.max(1) as i32));
        Self {
            order: level.max(3),
            q_near: 4,
            leaf_size: (level * level).max(4),
            eta: 1.0,
            eps_aca: eps,
            eps_comp: Some(eps),
            eps_solver: eps / 10.0,
            max_iterations: 2000,
            coupling_order: 8,
            dense_cap: DENSE_CAP,
        }
    }

    fn hca(&self) -> HcaParams {
        HcaParams {
            order: self.order,
            eps_aca: self.eps_aca,
            eps_comp: self.eps_comp,
        }
    }

    fn gca(&self) -> GcaParams {
        GcaParams {
            order: self.order,
            eps_aca: self.eps_aca,
            max_coupling_order: self.coupling_order,
        }
    }

    fn cg(&self) -> CgOptions {
        CgOptions {
            tolerance: self.eps_solver,
            max_iterations: self.max_iterations,
        }
    }
}

/// One assembled operator in any of the storage formats.
#[derive(Debug, Clone)]
pub enum Compressed {
    Dense(DenseMatrix),
    H(HMatrix),
    H2(H2Matrix),
}

type DenseBlock = (usize, usize, DMatrix<f64>);

/// Approximation error of one farfield block against a dense reference.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    /// Row and column cluster ids.
    pub row: usize,
    pub col: usize,
    /// `|A_block - dense_block|_F / |dense_block|_F`
    pub relative: f64,
}

impl Compressed {
    fn inner(&self) -> &dyn MatrixOperator {
        match self {
            Compressed::Dense(m) => m,
            Compressed::H(m) => m,
            Compressed::H2(m) => m,
        }
    }

    /// Rank of every farfield block; for H2-matrices the larger side of the
    /// coupling matrix.
    pub fn block_ranks(&self) -> Vec<usize> {
        match self {
            Compressed::Dense(_) => Vec::new(),
            Compressed::H(m) => m.ranks(),
            Compressed::H2(m) => m.coupling.iter().map(|c| c.data.nrows().max(c.data.ncols())).collect(),
        }
    }

    pub fn farfield_errors(&self, dense: &DMatrix<f64>) -> Vec<BlockError> {
        let (rows, cols, blocks): (&ClusterTree, &ClusterTree, Vec<DenseBlock>) = match self {
            Compressed::Dense(_) => return Vec::new(),
            Compressed::H(m) => (
                &m.rows,
                &m.cols,
                (0..m.farfield.len()).map(|k| (m.farfield[k].row, m.farfield[k].col, m.farfield_dense(k))).collect(),
            ),
            Compressed::H2(m) => (
                m.rows(),
                m.cols(),
                (0..m.coupling.len()).map(|k| (m.coupling[k].row, m.coupling[k].col, m.farfield_dense(k))).collect(),
            ),
        };
        blocks
            .into_iter()
            .map(|(row, col, approx)| {
                let exact = dense.select_rows(rows.indices(row)).select_columns(cols.indices(col));
                BlockError {
                    row,
                    col,
                    relative: (approx - &exact).norm() / exact.norm(),
                }
            })
            .collect()
    }
}

impl MatrixOperator for Compressed {
    fn nrows(&self) -> usize {
        self.inner().nrows()
    }

    fn ncols(&self) -> usize {
        self.inner().ncols()
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.inner().matvec(x)
    }

    fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        self.inner().matvec_transpose(x)
    }

    fn storage(&self) -> StorageReport {
        self.inner().storage()
    }

    fn diagonal(&self) -> Vec<f64> {
        self.inner().diagonal()
    }
}

/// Assembles operators on one mesh, sharing cluster trees between operators
/// and, for GCA, cluster bases.
pub struct Assembly<'a> {
    asm: GalerkinAssembler<'a>,
    method: Method,
    params: Params,
    trees: HashMap<SpaceKind, Arc<ClusterTree>>,
    bases: HashMap<(SpaceKind, BasisKind), Arc<ClusterBasis>>,
}

impl<'a> Assembly<'a> {
    pub fn new(mesh: &'a SurfaceMesh, method: Method, params: Params) -> Result<Self, QuadratureError> {
        Ok(Self {
            asm: GalerkinAssembler::new(mesh, params.q_near)?,
            method,
            params,
            trees: HashMap::new(),
            bases: HashMap::new(),
        })
    }

    pub fn mesh(&self) -> &'a SurfaceMesh {
        self.asm.mesh()
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn tree(&mut self, space: SpaceKind) -> Arc<ClusterTree> {
        let (mesh, leaf) = (self.asm.mesh(), self.params.leaf_size);
        self.trees
            .entry(space)
            .or_insert_with(|| Arc::new(space.cluster_tree(mesh, leaf).expect("meshes are nonempty")))
            .clone()
    }

    fn basis(&mut self, space: SpaceKind, kind: BasisKind) -> Arc<ClusterBasis> {
        if let Some(b) = self.bases.get(&(space, kind)) {
            return b.clone();
        }
        let tree = self.tree(space);
        let quad = BasisQuadrature::new(self.asm.mesh(), space, self.params.order).expect("order >= 1");
        let b = Arc::new(build_basis(&quad, kind, tree, self.params.order, self.params.eps_aca));
        self.bases.insert((space, kind), b.clone());
        b
    }

    pub fn operator(&mut self, kind: KernelKind) -> Result<Compressed, MatrixError> {
        let rows = self.tree(kind.row_space());
        let cols = self.tree(kind.col_space());
        let blocks = || BlockTree::build(&rows, &cols, self.params.eta);
        match self.method {
            Method::Dense => Ok(Compressed::Dense(DenseMatrix::assemble(&self.asm, kind, self.params.dense_cap)?)),
            Method::Hca => {
                let bt = blocks();
                Ok(Compressed::H(assemble_hmatrix(&self.asm, kind, rows, cols, &bt, &self.params.hca())?))
            }
            Method::Gca => {
                let bt = blocks();
                let rb = self.basis(kind.row_space(), BasisKind::for_operator(kind, true));
                let cb = self.basis(kind.col_space(), BasisKind::for_operator(kind, false));
                Ok(Compressed::H2(assemble_h2(&self.asm, kind, rb, cb, &bt, &self.params.gca())?))
            }
        }
    }
}

/// Storage of several operators, counting shared cluster bases once.
pub fn combined_storage(ops: &[&Compressed]) -> StorageReport {
    let mut total = StorageReport::default();
    let mut seen: Vec<*const ClusterBasis> = Vec::new();
    for op in ops {
        let r = op.storage();
        total.coupling += r.coupling;
        total.lowrank += r.lowrank;
        total.nearfield += r.nearfield;
        match op {
            Compressed::H2(m) => {
                for b in [&m.row_basis, &m.col_basis] {
                    let ptr = Arc::as_ptr(b);
                    if !seen.contains(&ptr) {
                        seen.push(ptr);
                        total.basis += 8 * b.coefficient_count();
                    }
                }
            }
            _ => total.basis += r.basis,
        }
    }
    total
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Solution coefficients with the CG statistics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

impl From<CgResult> for Solution {
    fn from(r: CgResult) -> Self {
        Self {
            x: r.x,
            iterations: r.iterations,
            residual: r.residual,
            converged: r.converged,
        }
    }
}

/// Solves `G x = (M/2 + K) b` for the Neumann data `x` (P0) given Dirichlet
/// coefficients `b` (P1).
pub fn solve_dtn(
    mesh: &SurfaceMesh,
    g: &dyn MatrixOperator,
    k: &dyn MatrixOperator,
    b: &[f64],
    opts: &CgOptions,
) -> Result<Solution, DriverError> {
    let kb = k.checked_matvec(b)?;
    let mb = MixedMass::new(mesh).apply(b);
    let rhs: Vec<f64> = mb.iter().zip(&kb).map(|(m, k)| 0.5 * m + k).collect();
    let diag = g.diagonal();
    Ok(cg(&SquareOperator(g), &rhs, Some(&diag), opts)?.into())
}

/// `W + alpha a a^T` with `a` the integrals of the P1 basis functions.
pub struct StabilizedHypersingular<'a> {
    pub w: &'a dyn MatrixOperator,
    pub a: Vec<f64>,
    pub alpha: f64,
}

impl<'a> StabilizedHypersingular<'a> {
    /// `alpha` scales `a a^T` to the mean diagonal of `W`.
    pub fn new(mesh: &SurfaceMesh, w: &'a dyn MatrixOperator) -> Self {
        let a = MixedMass::new(mesh).apply_transpose(&vec![1.0; mesh.num_triangles()]);
        let n = a.len() as f64;
        let mean_diag = w.diagonal().iter().sum::<f64>() / n;
        let mean_a2 = a.iter().map(|v| v * v).sum::<f64>() / n;
        Self {
            w,
            alpha: mean_diag / mean_a2,
            a,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.w.diagonal().iter().zip(&self.a).map(|(d, a)| d + self.alpha * a * a).collect()
    }
}

impl LinearOperator for StabilizedHypersingular<'_> {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let wx = self.w.matvec(x);
        let ax = self.alpha * dot(&self.a, x);
        for ((y, w), a) in y.iter_mut().zip(&wx).zip(&self.a) {
            *y = w + ax * a;
        }
    }
}

/// Solves `W x = (M^T/2 - K^T) b` for the Dirichlet data `x` (P1) given
/// Neumann coefficients `b` (P0). The result has zero mean; pass
/// `target_mean` to shift it to a prescribed mean value.
pub fn solve_ntd(
    mesh: &SurfaceMesh,
    w: &dyn MatrixOperator,
    k: &dyn MatrixOperator,
    b: &[f64],
    target_mean: Option<f64>,
    opts: &CgOptions,
) -> Result<Solution, DriverError> {
    if b.len() != k.nrows() {
        return Err(MatrixError::Dimension {
            expected: k.nrows(),
            found: b.len(),
        }
        .into());
    }
    let ktb = k.matvec_transpose(b);
    let mtb = MixedMass::new(mesh).apply_transpose(b);
    let rhs: Vec<f64> = mtb.iter().zip(&ktb).map(|(m, k)| 0.5 * m - k).collect();
    let op = StabilizedHypersingular::new(mesh, w);
    let diag = op.diagonal();
    let mut sol: Solution = cg(&op, &rhs, Some(&diag), opts)?.into();
    if let Some(mean) = target_mean {
        let area: f64 = op.a.iter().sum();
        let shift = mean - dot(&op.a, &sol.x) / area;
        sol.x.iter_mut().for_each(|v| *v += shift);
    }
    Ok(sol)
}

/// Mean of `f` over the flat panels.
pub fn surface_mean(mesh: &SurfaceMesh, f: impl Fn(&Point3) -> f64) -> f64 {
    load_vector(mesh, SpaceKind::P0, f).iter().sum::<f64>() / mesh.surface_area()
}

/// Result of one refinement level of a convergence study.
#[derive(Debug, Clone)]
pub struct LevelResult {
    pub n: usize,
    pub h: f64,
    pub l2_error: f64,
    /// Discrete energy error of the Neumann data (DtN only).
    pub energy_error: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
    pub bytes: usize,
}

/// Assembles the operators, solves `problem` for `case` and measures the
/// errors against the exact traces.
pub fn run_level(
    mesh: &SurfaceMesh,
    method: Method,
    problem: Problem,
    case: TestCase,
    params: &Params,
) -> Result<LevelResult, DriverError> {
    let start = Instant::now();
    let mut assembly = Assembly::new(mesh, method, params.clone())?;
    let k = assembly.operator(KernelKind::DlpY)?;
    let opts = params.cg();
    let (sol, l2, energy, bytes) = match problem {
        Problem::Dtn => {
            let g = assembly.operator(KernelKind::Slp)?;
            let b = interpolate_p1(mesh, |x| case.dirichlet(x));
            let sol = solve_dtn(mesh, &g, &k, &b, &opts)?;
            let l2 = l2_error(mesh, SpaceKind::P0, &sol.x, |x| case.neumann(x))?;
            let proj = l2_project(mesh, SpaceKind::P0, |x| case.neumann(x))?;
            let d: Vec<f64> = sol.x.iter().zip(&proj).map(|(a, b)| a - b).collect();
            let energy = energy_error(&SquareOperator(&g), &d)?;
            (sol, l2, Some(energy), combined_storage(&[&g, &k]).total())
        }
        Problem::Ntd => {
            let w = assembly.operator(KernelKind::Hyp)?;
            let b = l2_project(mesh, SpaceKind::P0, |x| case.neumann(x))?;
            let mean = surface_mean(mesh, |x| case.dirichlet(x));
            let sol = solve_ntd(mesh, &w, &k, &b, Some(mean), &opts)?;
            let l2 = l2_error(mesh, SpaceKind::P1, &sol.x, |x| case.dirichlet(x))?;
            (sol, l2, None, combined_storage(&[&w, &k]).total())
        }
    };
    Ok(LevelResult {
        n: mesh.num_triangles(),
        h: mesh.mesh_width(),
        l2_error: l2,
        energy_error: energy,
        iterations: sol.iterations,
        converged: sol.converged,
        seconds: start.elapsed().as_secs_f64(),
        bytes,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_converges_in_one_step() {
        let op = DenseOperator::new(DMatrix::identity(5, 5));
        let b = [1.0, -2.0, 3.0, 0.5, 0.0];
        let res = cg(&op, &b, None, &CgOptions::default()).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.converged);
    }

    #[test]
    fn two_by_two() {
        let op = DenseOperator::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        let res = cg(&op, &[3.0, 3.0], None, &CgOptions::default()).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-12 && (res.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn breakdown_is_reported() {
        let op = DenseOperator::new(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]));
        assert!(matches!(
            cg(&op, &[1.0, 0.0], None, &CgOptions::default()),
            Err(SolverError::Breakdown { iteration: 0, .. })
        ));
    }

    #[test]
    fn cg_terminates_within_dimension() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = b.transpose() * &b + DMatrix::identity(n, n) * 5.0;
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = CgOptions {
            tolerance: 1e-12,
            max_iterations: 1000,
        };
        let res = cg(&DenseOperator::new(a), &rhs, None, &opts).unwrap();
        assert!(res.converged && res.iterations <= n, "{}", res.iterations);
        assert!(res.residual <= 1e-11);
    }

    #[test]
    fn names_parse_back() {
        for m in [Method::Hca, Method::Gca, Method::Dense] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        for p in [Problem::Dtn, Problem::Ntd] {
            assert_eq!(p.name().parse::<Problem>().unwrap(), p);
        }
        assert!("fmm".parse::<Method>().is_err());
    }

    #[test]
    fn schedule_matches_the_first_table_row_at_level_five() {
        let p = Params::for_sphere_level(5);
        assert_eq!((p.order, p.leaf_size, p.q_near), (5, 25, 4));
        assert!((p.eps_aca - 1e-5).abs() < 1e-20 && (p.eps_solver - 1e-6).abs() < 1e-21);
        assert_eq!(Params::for_sphere_level(1).order, 3);
    }

    #[test]
    fn log_slope_of_a_power_law() {
        let x = [1.0, 0.5, 0.25, 0.125];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_slope(&x, &y) - 1.5).abs() < 1e-12);
    }

    fn dense_ops(mesh: &SurfaceMesh) -> (Compressed, Compressed, Compressed) {
        let mut a = Assembly::new(mesh, Method::Dense, Params::for_sphere_level(2)).unwrap();
        (
            a.operator(KernelKind::Slp).unwrap(),
            a.operator(KernelKind::DlpY).unwrap(),
            a.operator(KernelKind::Hyp).unwrap(),
        )
    }

    fn l2_norm_p0(mesh: &SurfaceMesh, x: &[f64]) -> f64 {
        l2_error(mesh, SpaceKind::P0, x, |_| 0.0).unwrap()
    }

    #[test]
    fn dtn_of_constant_data_is_nearly_zero_and_linear() {
        let mesh = SurfaceMesh::sphere(2);
        let (g, k, _) = dense_ops(&mesh);
        let opts = CgOptions {
            tolerance: 1e-10,
            max_iterations: 500,
        };
        let one = vec![1.0; mesh.num_vertices()];
        let x = solve_dtn(&mesh, &g, &k, &one, &opts).unwrap().x;
        let unit = l2_norm_p0(&mesh, &vec![1.0; mesh.num_triangles()]);
        assert!(l2_norm_p0(&mesh, &x) <= 1e-3 * unit);

        let b = interpolate_p1(&mesh, |p| TestCase::Poly.dirichlet(p));
        let b2: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
        let x1 = solve_dtn(&mesh, &g, &k, &b, &opts).unwrap().x;
        let x2 = solve_dtn(&mesh, &g, &k, &b2, &opts).unwrap().x;
        for (a, b) in x1.iter().zip(&x2) {
            assert!((2.0 * a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn ntd_handles_the_constant_nullspace() {
        let mesh = SurfaceMesh::sphere(2);
        let (_, k, w) = dense_ops(&mesh);
        let opts = CgOptions {
            tolerance: 1e-10,
            max_iterations: 500,
        };
        let zero = solve_ntd(&mesh, &w, &k, &vec![0.0; mesh.num_triangles()], None, &opts).unwrap();
        assert!(zero.x.iter().all(|v| *v == 0.0));

        let case = TestCase::Point1;
        let b = l2_project(&mesh, SpaceKind::P0, |p| case.neumann(p)).unwrap();
        let raw = solve_ntd(&mesh, &w, &k, &b, None, &opts).unwrap();
        // With W 1 = 0, summing the stabilized equations gives
        // alpha (1^T a) (a^T x) = 1^T rhs: the mean of x only absorbs the
        // incompatible part of the data.
        let stab = StabilizedHypersingular::new(&mesh, &w);
        let ax = dot(&stab.a, &raw.x);
        let ktb = k.matvec_transpose(&b);
        let rhs: Vec<f64> = MixedMass::new(&mesh)
            .apply_transpose(&b)
            .iter()
            .zip(&ktb)
            .map(|(m, k)| 0.5 * m - k)
            .collect();
        let expected = rhs.iter().sum::<f64>() / (stab.alpha * stab.a.iter().sum::<f64>());
        assert!((ax - expected).abs() <= 1e-8 * dot(&stab.a, &stab.a).sqrt() * dot(&raw.x, &raw.x).sqrt());
        let wx = w.matvec(&raw.x);
        let res: f64 = wx.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let bound = 1e-10 * dot(&rhs, &rhs).sqrt() + stab.alpha * ax.abs() * dot(&stab.a, &stab.a).sqrt();
        assert!(res <= bound * 1.01 + 1e-14, "{res} > {bound}");

        let mean = surface_mean(&mesh, |p| case.dirichlet(p));
        let shifted = solve_ntd(&mesh, &w, &k, &b, Some(mean), &opts).unwrap();
        let area: f64 = stab.a.iter().sum();
        assert!((dot(&stab.a, &shifted.x) / area - mean).abs() <= 1e-10);
    }

    #[test]
    fn compressed_single_layer_is_symmetric() {
        use rand::{Rng, SeedableRng};
        let mesh = SurfaceMesh::sphere(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for method in [Method::Hca, Method::Gca] {
            let mut a = Assembly::new(&mesh, method, Params::for_sphere_level(3)).unwrap();
            let g = a.operator(KernelKind::Slp).unwrap();
            for _ in 0..5 {
                let x: Vec<f64> = (0..g.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..g.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let lhs = dot(&g.matvec(&x), &y);
                let rhs = dot(&x, &g.matvec(&y));
                let scale = dot(&x, &x).sqrt() * dot(&y, &y).sqrt();
                assert!((lhs - rhs).abs() <= 1e-8 * scale, "{method:?}");
            }
        }
    }

    #[test]
    fn shared_gca_bases_are_counted_once() {
        let mesh = SurfaceMesh::sphere(2);
        let mut a = Assembly::new(&mesh, Method::Gca, Params::for_sphere_level(2)).unwrap();
        let g = a.operator(KernelKind::Slp).unwrap();
        let k = a.operator(KernelKind::DlpY).unwrap();
        let (sg, sk) = (g.storage(), k.storage());
        let both = combined_storage(&[&g, &k]);
        let Compressed::H2(gm) = &g else { panic!("expected an H2-matrix") };
        let shared = 8 * gm.row_basis.coefficient_count();
        assert!(Arc::ptr_eq(&gm.row_basis, &gm.col_basis));
        assert_eq!(both.total(), sg.total() + sk.total() - shared);
    }
}

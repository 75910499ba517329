//! The Laplace fundamental solution, its normal derivatives, single surface
//! integrals against basis functions, and Galerkin matrix entries.
//!
//! The hypersingular matrix uses the integration-by-parts form
//! `w_ij = sum_{a,b} <curl_a phi_i, curl_b phi_j> int_a int_b g(x, y)`, in
//! which only the weakly singular kernel appears. On flat panels the surface
//! curl of a hat function is constant.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::clustering::BoundingBox;
use crate::discretization::SpaceKind;
use crate::mesh::{Point3, SurfaceMesh};
use crate::quadrature::{align_panel_pair, triangle_rule, PanelPairCase, PanelRuleSet, QuadratureError};

const INV_4PI: f64 = 0.25 / PI;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("kernel derivative evaluated at coincident points")]
    CoincidentPoints,
    #[error("evaluation point lies inside the support box of dof {dof}")]
    PointInSupport { dof: usize },
    #[error("non-finite integral for panel pair ({test}, {trial})")]
    NonFinite { test: usize, trial: usize },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Which Galerkin matrix an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// Single layer `G`, piecewise constants on both sides.
    Slp,
    /// Double layer `K`: kernel `dg/dn_y`, piecewise constant test and
    /// piecewise linear trial functions.
    DlpY,
    /// Adjoint double layer `K^T`: kernel `dg/dn_x`, piecewise linear test and
    /// piecewise constant trial functions.
    DlpX,
    /// Hypersingular `W`, piecewise linear on both sides.
    Hyp,
}

impl KernelKind {
    pub fn row_space(self) -> SpaceKind {
        match self {
            KernelKind::Slp | KernelKind::DlpY => SpaceKind::P0,
            KernelKind::DlpX | KernelKind::Hyp => SpaceKind::P1,
        }
    }

    pub fn col_space(self) -> SpaceKind {
        match self {
            KernelKind::Slp | KernelKind::DlpX => SpaceKind::P0,
            KernelKind::DlpY | KernelKind::Hyp => SpaceKind::P1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Slp => "slp",
            KernelKind::DlpY => "dlp",
            KernelKind::DlpX => "adlp",
            KernelKind::Hyp => "hyp",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [KernelKind::Slp, KernelKind::DlpY, KernelKind::DlpX, KernelKind::Hyp]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown operator '{s}' (expected slp, dlp, adlp or hyp)"))
    }
}

/// `1 / (4 pi |x - y|)`, and zero for `x == y`.
#[inline]
pub fn laplace_kernel(x: &Point3, y: &Point3) -> f64 {
    let r2 = (x - y).norm_squared();
    if r2 == 0.0 {
        0.0
    } else {
        INV_4PI / r2.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeSide {
    X,
    Y,
}

/// Derivative of `g(x, y)` in direction `n` with respect to `x` or `y`.
pub fn kernel_dn(x: &Point3, y: &Point3, n: &Point3, side: DerivativeSide) -> Result<f64, KernelError> {
    let d = x - y;
    if d.norm_squared() == 0.0 {
        return Err(KernelError::CoincidentPoints);
    }
    Ok(match side {
        DerivativeSide::Y => dg_dn_second(x, y, n),
        DerivativeSide::X => dg_dn_second(y, x, n),
    })
}

/// `d/dn_y g(x, y) = <x - y, n> / (4 pi |x - y|^3)`.
#[inline]
pub(crate) fn dg_dn_second(x: &Point3, y: &Point3, n: &Point3) -> f64 {
    let d = x - y;
    let r2 = d.norm_squared();
    INV_4PI * d.dot(n) / (r2 * r2.sqrt())
}

/// Mixed second derivative `d^2 g / (dn_x dn_y)` with `d = x - y`:
/// `(<n_x, n_y> / r^3 - 3 <d, n_x> <d, n_y> / r^5) / (4 pi)`.
#[inline]
pub fn kernel_dn_dn(x: &Point3, nx: &Point3, y: &Point3, ny: &Point3) -> f64 {
    let d = x - y;
    let r2 = d.norm_squared();
    let r3 = r2 * r2.sqrt();
    INV_4PI * (nx.dot(ny) - 3.0 * d.dot(nx) * d.dot(ny) / r2) / r3
}

/// Kernel in a single integral `int phi(x) k(x, xi) dx` over a basis support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialKind {
    /// `g(x, xi)`
    Value,
    /// `dg/dn(x, xi)` for the direction `n` attached to `xi`.
    NormalDerivativeAtPoint(Point3),
    /// `dg/dn_x(x, xi)` with the panel normal at `x`.
    NormalDerivativeOnPanel,
    /// `d^2 g / (dn_x dn)` with the panel normal and the direction at `xi`.
    MixedNormalDerivative(Point3),
}

impl PotentialKind {
    #[inline]
    fn eval(&self, x: &Point3, nx: &Point3, xi: &Point3) -> f64 {
        match self {
            PotentialKind::Value => INV_4PI / (x - xi).norm(),
            PotentialKind::NormalDerivativeAtPoint(n) => dg_dn_second(x, xi, n),
            PotentialKind::NormalDerivativeOnPanel => dg_dn_second(xi, x, nx),
            PotentialKind::MixedNormalDerivative(n) => kernel_dn_dn(x, nx, xi, n),
        }
    }
}

/// Quadrature points of every basis function of one space, flattened:
/// the integral of `phi_i * f` is `sum_p weight_p f(point_p, normal_p)` over
/// the points of dof `i`. Weights include panel Jacobians and basis values.
#[derive(Debug, Clone)]
pub struct BasisQuadrature {
    kind: SpaceKind,
    offsets: Vec<usize>,
    points: Vec<Point3>,
    normals: Vec<Point3>,
    weights: Vec<f64>,
    boxes: Vec<BoundingBox>,
}

impl BasisQuadrature {
    pub fn new(mesh: &SurfaceMesh, kind: SpaceKind, order: usize) -> Result<Self, QuadratureError> {
        let rule = triangle_rule(order)?;
        let ndof = kind.dof_count(mesh);
        let mut offsets = Vec::with_capacity(ndof + 1);
        let mut points = Vec::new();
        let mut normals = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        let push_triangle = |t: usize,
                             local: Option<usize>,
                             points: &mut Vec<Point3>,
                             normals: &mut Vec<Point3>,
                             weights: &mut Vec<f64>| {
            let [p0, p1, p2] = mesh.corners(t);
            let jac = 2.0 * mesh.area(t);
            let n = mesh.normal(t);
            for (st, w) in rule.points.iter().zip(&rule.weights) {
                let bary = [1.0 - st[0] - st[1], st[0], st[1]];
                let basis = local.map_or(1.0, |k| bary[k]);
                points.push(p0 + st[0] * (p1 - p0) + st[1] * (p2 - p0));
                normals.push(n);
                weights.push(w * jac * basis);
            }
        };
        for dof in 0..ndof {
            match kind {
                SpaceKind::P0 => push_triangle(dof, None, &mut points, &mut normals, &mut weights),
                SpaceKind::P1 => {
                    for &t in mesh.vertex_triangles(dof) {
                        let k = mesh.triangles()[t].iter().position(|&v| v == dof).unwrap();
                        push_triangle(t, Some(k), &mut points, &mut normals, &mut weights);
                    }
                }
            }
            offsets.push(weights.len());
        }
        let boxes = (0..ndof).map(|d| kind.support_box(mesh, d)).collect();
        Ok(Self {
            kind,
            offsets,
            points,
            normals,
            weights,
            boxes,
        })
    }

    pub fn space(&self) -> SpaceKind {
        self.kind
    }

    pub fn dof_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `int phi_dof(x) k(x, xi) dx`; `xi` must lie outside the support box.
    pub fn potential_integral(&self, dof: usize, xi: &Point3, kind: PotentialKind) -> Result<f64, KernelError> {
        if self.boxes[dof].contains(xi) {
            return Err(KernelError::PointInSupport { dof });
        }
        Ok(self.integrate_unchecked(dof, xi, &kind))
    }

    #[inline]
    pub(crate) fn integrate_unchecked(&self, dof: usize, xi: &Point3, kind: &PotentialKind) -> f64 {
        let range = self.offsets[dof]..self.offsets[dof + 1];
        let mut sum = 0.0;
        for p in range {
            sum += self.weights[p] * kind.eval(&self.points[p], &self.normals[p], xi);
        }
        sum
    }

    /// Matrix of single integrals, rows `dofs`, one column per point.
    pub fn potential_matrix(
        &self,
        dofs: &[usize],
        xis: &[Point3],
        kind: impl Fn(usize) -> PotentialKind,
    ) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(dofs.len(), xis.len());
        for (c, xi) in xis.iter().enumerate() {
            let k = kind(c);
            for (r, &dof) in dofs.iter().enumerate() {
                out[(r, c)] = self.integrate_unchecked(dof, xi, &k);
            }
        }
        out
    }

    /// `int phi_dof(x) f(x, n_x) dx` for an arbitrary integrand.
    pub fn integrate_with(&self, dof: usize, f: impl Fn(&Point3, &Point3) -> f64) -> f64 {
        (self.offsets[dof]..self.offsets[dof + 1])
            .map(|p| self.weights[p] * f(&self.points[p], &self.normals[p]))
            .sum()
    }
}

/// Double integrals over one panel pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairIntegrals {
    /// `int_a int_b g(x, y)`
    pub slp: f64,
    /// `int_a int_b dg/dn_y(x, y) lambda_k(y)` for the corners `k` of `b`
    /// in stored order.
    pub dlp: [f64; 3],
}

/// Galerkin entries of the single layer, double layer and hypersingular
/// matrices with Sauter-Schwab quadrature of order `q_near`.
#[derive(Debug, Clone)]
pub struct GalerkinAssembler<'a> {
    mesh: &'a SurfaceMesh,
    rules: PanelRuleSet,
    curls: Vec<[Point3; 3]>,
}

impl<'a> GalerkinAssembler<'a> {
    pub fn new(mesh: &'a SurfaceMesh, q_near: usize) -> Result<Self, QuadratureError> {
        Ok(Self {
            mesh,
            rules: PanelRuleSet::new(q_near)?,
            curls: panel_curls(mesh),
        })
    }

    pub fn mesh(&self) -> &'a SurfaceMesh {
        self.mesh
    }

    pub fn order(&self) -> usize {
        self.rules.order()
    }

    /// Surface curl of the hat function of local corner `k` on triangle `t`.
    pub fn curl(&self, t: usize, k: usize) -> Point3 {
        self.curls[t][k]
    }

    /// Single- and double-layer integrals for the panel pair `(a, b)`.
    /// Without `with_dlp` the pair is taken in canonical order, so the single
    /// layer integrals are exactly symmetric.
    pub fn panel_pair(&self, a: usize, b: usize, with_dlp: bool) -> PairIntegrals {
        let (a, b) = if with_dlp { (a, b) } else { (a.min(b), a.max(b)) };
        let mesh = self.mesh;
        let ta = &mesh.triangles()[a];
        let tb = &mesh.triangles()[b];
        let (case, oa, ob) = align_panel_pair(ta, tb);
        let ca = mesh.corners(a);
        let cb = mesh.corners(b);
        let (pa0, pa1, pa2) = (ca[oa[0]], ca[oa[1]], ca[oa[2]]);
        let (pb0, pb1, pb2) = (cb[ob[0]], cb[ob[1]], cb[ob[2]]);
        let (ea1, ea2) = (pa1 - pa0, pa2 - pa0);
        let (eb1, eb2) = (pb1 - pb0, pb2 - pb0);
        let nb = mesh.normal(b);
        let rule = self.rules.get(case);

        let mut slp = 0.0;
        let mut dlp = [0.0; 3];
        for ((x, y), &w) in rule.points.iter().zip(&rule.weights) {
            let px = pa0 + x[0] * ea1 + x[1] * ea2;
            let py = pb0 + y[0] * eb1 + y[1] * eb2;
            let d = px - py;
            let r2 = d.norm_squared();
            let inv_r = 1.0 / r2.sqrt();
            slp += w * inv_r;
            if with_dlp && case != PanelPairCase::Identical {
                let v = w * d.dot(&nb) * inv_r * inv_r * inv_r;
                dlp[ob[0]] += v * (1.0 - y[0] - y[1]);
                dlp[ob[1]] += v * y[0];
                dlp[ob[2]] += v * y[1];
            }
        }
        // Panel Jacobians 2|a| * 2|b| and the 1/(4 pi) of the kernel.
        let scale = 4.0 * mesh.area(a) * mesh.area(b) * INV_4PI;
        PairIntegrals {
            slp: slp * scale,
            dlp: dlp.map(|v| v * scale),
        }
    }

    fn checked_pair(&self, a: usize, b: usize, with_dlp: bool) -> Result<PairIntegrals, KernelError> {
        let p = self.panel_pair(a, b, with_dlp);
        if p.slp.is_finite() && p.dlp.iter().all(|v| v.is_finite()) {
            Ok(p)
        } else {
            Err(KernelError::NonFinite { test: a, trial: b })
        }
    }

    /// Single Galerkin entry `(i, j)` of the matrix selected by `kind`.
    pub fn entry(&self, kind: KernelKind, i: usize, j: usize) -> Result<f64, KernelError> {
        Ok(self.block(kind, &[i], &[j])?[(0, 0)])
    }

    /// Dense block `rows x cols` (dof numbers in the row/column spaces of
    /// `kind`). Panel-pair integrals are computed once per block.
    pub fn block(&self, kind: KernelKind, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>, KernelError> {
        match kind {
            KernelKind::Slp => {
                let mut out = DMatrix::zeros(rows.len(), cols.len());
                for (c, &j) in cols.iter().enumerate() {
                    for (r, &i) in rows.iter().enumerate() {
                        out[(r, c)] = self.checked_pair(i, j, false)?.slp;
                    }
                }
                Ok(out)
            }
            KernelKind::DlpY => {
                let mut out = DMatrix::zeros(rows.len(), cols.len());
                let support = SupportMap::new(self.mesh, cols);
                for (r, &i) in rows.iter().enumerate() {
                    for (b, entries) in &support.triangles {
                        let p = self.checked_pair(i, *b, true)?;
                        for &(k, c) in entries {
                            out[(r, c)] += p.dlp[k];
                        }
                    }
                }
                Ok(out)
            }
            KernelKind::DlpX => Ok(self.block(KernelKind::DlpY, cols, rows)?.transpose()),
            KernelKind::Hyp => {
                let mut out = DMatrix::zeros(rows.len(), cols.len());
                let row_support = SupportMap::new(self.mesh, rows);
                let col_support = SupportMap::new(self.mesh, cols);
                for (a, row_entries) in &row_support.triangles {
                    for (b, col_entries) in &col_support.triangles {
                        let slp = self.checked_pair(*a, *b, false)?.slp;
                        for &(ka, r) in row_entries {
                            let ca = self.curls[*a][ka];
                            for &(kb, c) in col_entries {
                                out[(r, c)] += slp * ca.dot(&self.curls[*b][kb]);
                            }
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

fn panel_curls(mesh: &SurfaceMesh) -> Vec<[Point3; 3]> {
    (0..mesh.num_triangles())
        .map(|t| {
            let p = mesh.corners(t);
            let scale = 1.0 / (2.0 * mesh.area(t));
            [0, 1, 2].map(|k| (p[(k + 1) % 3] - p[(k + 2) % 3]) * scale)
        })
        .collect()
}

/// Regular double integrals between basis functions with disjoint supports,
/// by conical product rules of selectable order on every support triangle.
#[derive(Debug, Clone)]
pub struct RegularIntegrator<'a> {
    mesh: &'a SurfaceMesh,
    rules: Vec<crate::quadrature::TriangleRule>,
    curls: Vec<[Point3; 3]>,
    boxes: Vec<BoundingBox>,
}

/// Quadrature point with its normal and weight (basis value included).
type WeightedPoint = (Point3, Point3, f64);

impl<'a> RegularIntegrator<'a> {
    pub fn new(mesh: &'a SurfaceMesh, max_order: usize) -> Result<Self, QuadratureError> {
        let rules = (1..=max_order).map(triangle_rule).collect::<Result<_, _>>()?;
        let boxes = (0..mesh.num_triangles())
            .map(|t| BoundingBox::from_points(&mesh.corners(t)))
            .collect();
        Ok(Self {
            mesh,
            rules,
            curls: panel_curls(mesh),
            boxes,
        })
    }

    pub fn max_order(&self) -> usize {
        self.rules.len()
    }

    pub fn mesh(&self) -> &'a SurfaceMesh {
        self.mesh
    }

    fn dof_points(&self, space: SpaceKind, dof: usize, order: usize, out: &mut Vec<WeightedPoint>) {
        out.clear();
        let rule = &self.rules[order - 1];
        let mut push = |t: usize, local: Option<usize>| {
            let [p0, p1, p2] = self.mesh.corners(t);
            let jac = 2.0 * self.mesh.area(t);
            let n = self.mesh.normal(t);
            for (st, w) in rule.points.iter().zip(&rule.weights) {
                let bary = [1.0 - st[0] - st[1], st[0], st[1]];
                let basis = local.map_or(1.0, |k| bary[k]);
                out.push((p0 + st[0] * (p1 - p0) + st[1] * (p2 - p0), n, w * jac * basis));
            }
        };
        match space {
            SpaceKind::P0 => push(dof, None),
            SpaceKind::P1 => {
                for &t in self.mesh.vertex_triangles(dof) {
                    let k = self.mesh.triangles()[t].iter().position(|&v| v == dof).unwrap();
                    push(t, Some(k));
                }
            }
        }
    }

    /// Galerkin entry `(i, j)` of `kind` for disjoint supports, using the
    /// direct kernel (for `Hyp`, `-d^2 g / (dn_x dn_y)`).
    pub fn entry(&self, kind: KernelKind, i: usize, j: usize, order: usize) -> f64 {
        let mut pi = Vec::new();
        let mut pj = Vec::new();
        self.dof_points(kind.row_space(), i, order, &mut pi);
        self.dof_points(kind.col_space(), j, order, &mut pj);
        let mut sum = 0.0;
        for (x, nx, wx) in &pi {
            let mut inner = 0.0;
            for (y, ny, wy) in &pj {
                let k = match kind {
                    KernelKind::Slp => INV_4PI / (x - y).norm(),
                    KernelKind::DlpY => dg_dn_second(x, y, ny),
                    KernelKind::DlpX => dg_dn_second(y, x, nx),
                    KernelKind::Hyp => -kernel_dn_dn(x, nx, y, ny),
                };
                inner += wy * k;
            }
            sum += wx * inner;
        }
        sum
    }

    /// Single-layer integral and double-layer integrals against the three
    /// hat functions of `b`, for two panels at positive distance.
    pub fn panel_pair(&self, a: usize, b: usize, order: usize) -> PairIntegrals {
        let rule = &self.rules[order - 1];
        let ca = self.mesh.corners(a);
        let cb = self.mesh.corners(b);
        let nb = self.mesh.normal(b);
        let (mut slp, mut dlp) = (0.0, [0.0; 3]);
        for (sa, wa) in rule.points.iter().zip(&rule.weights) {
            let x = ca[0] + sa[0] * (ca[1] - ca[0]) + sa[1] * (ca[2] - ca[0]);
            let (mut s, mut d) = (0.0, [0.0; 3]);
            for (sb, wb) in rule.points.iter().zip(&rule.weights) {
                let y = cb[0] + sb[0] * (cb[1] - cb[0]) + sb[1] * (cb[2] - cb[0]);
                let diff = x - y;
                let inv = 1.0 / diff.norm();
                s += wb * inv;
                let dk = wb * diff.dot(&nb) * inv * inv * inv;
                d[0] += dk * (1.0 - sb[0] - sb[1]);
                d[1] += dk * sb[0];
                d[2] += dk * sb[1];
            }
            slp += wa * s;
            for k in 0..3 {
                dlp[k] += wa * d[k];
            }
        }
        let scale = 4.0 * self.mesh.area(a) * self.mesh.area(b) * INV_4PI;
        PairIntegrals {
            slp: slp * scale,
            dlp: dlp.map(|v| v * scale),
        }
    }

    fn pair_order(&self, a: usize, b: usize, tol: f64) -> usize {
        let (ba, bb) = (&self.boxes[a], &self.boxes[b]);
        self.order_for(ba.distance(bb), ba.diameter().max(bb.diameter()), tol)
    }

    /// Dense block for dofs with pairwise disjoint supports. Every panel
    /// pair is integrated once, with an order chosen from its separation so
    /// that the estimated relative error stays below `tol`. `Hyp` uses the
    /// surface curl form.
    pub fn block(&self, kind: KernelKind, rows: &[usize], cols: &[usize], tol: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        match kind {
            KernelKind::Slp => {
                for (c, &j) in cols.iter().enumerate() {
                    for (r, &i) in rows.iter().enumerate() {
                        out[(r, c)] = self.panel_pair(i, j, self.pair_order(i, j, tol)).slp;
                    }
                }
            }
            KernelKind::DlpY => {
                let support = SupportMap::new(self.mesh, cols);
                for (r, &i) in rows.iter().enumerate() {
                    for (b, entries) in &support.triangles {
                        let p = self.panel_pair(i, *b, self.pair_order(i, *b, tol));
                        for &(k, c) in entries {
                            out[(r, c)] += p.dlp[k];
                        }
                    }
                }
            }
            KernelKind::DlpX => return self.block(KernelKind::DlpY, cols, rows, tol).transpose(),
            KernelKind::Hyp => {
                let row_support = SupportMap::new(self.mesh, rows);
                let col_support = SupportMap::new(self.mesh, cols);
                for (a, row_entries) in &row_support.triangles {
                    for (b, col_entries) in &col_support.triangles {
                        let slp = self.panel_pair(*a, *b, self.pair_order(*a, *b, tol)).slp;
                        for &(ka, r) in row_entries {
                            let ca = self.curls[*a][ka];
                            for &(kb, c) in col_entries {
                                out[(r, c)] += slp * ca.dot(&self.curls[*b][kb]);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Smallest order whose estimated relative error
    /// `(diam / (diam + 2 dist))^(2q)` is below `tol`, capped at the maximum.
    pub fn order_for(&self, dist: f64, diam: f64, tol: f64) -> usize {
        let ratio = diam / (diam + 2.0 * dist);
        if ratio <= 0.0 {
            return 1;
        }
        let q = (tol.ln() / (2.0 * ratio.ln())).ceil().max(1.0) as usize;
        q.min(self.max_order())
    }
}

// Triangles in the support of a set of vertex dofs, with the local corner
// index and block position of every dof they carry.
struct SupportMap {
    triangles: Vec<(usize, Vec<(usize, usize)>)>,
}

impl SupportMap {
    fn new(mesh: &SurfaceMesh, vertices: &[usize]) -> Self {
        let mut index: HashMap<usize, usize> = HashMap::new();
        let mut triangles: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
        for (pos, &v) in vertices.iter().enumerate() {
            for &t in mesh.vertex_triangles(v) {
                let k = mesh.triangles()[t].iter().position(|&x| x == v).unwrap();
                let slot = *index.entry(t).or_insert_with(|| {
                    triangles.push((t, Vec::new()));
                    triangles.len() - 1
                });
                triangles[slot].1.push((k, pos));
            }
        }
        Self { triangles }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SurfaceMesh;

    #[test]
    fn kernel_values() {
        let o = Point3::zeros();
        let e = Point3::new(1.0, 0.0, 0.0);
        assert!((laplace_kernel(&o, &e) - 0.0795774715459477).abs() < 1e-15);
        assert_eq!(laplace_kernel(&e, &e), 0.0);
        let dn = kernel_dn(&o, &e, &e, DerivativeSide::Y).unwrap();
        assert!((dn + INV_4PI).abs() < 1e-15);
        assert_eq!(kernel_dn(&e, &e, &e, DerivativeSide::X), Err(KernelError::CoincidentPoints));
        let perp = Point3::new(0.0, 0.0, 1.0);
        assert_eq!(kernel_dn(&o, &e, &perp, DerivativeSide::Y).unwrap(), 0.0);
    }

    #[test]
    fn mixed_derivative_matches_finite_differences() {
        let x = Point3::new(0.1, -0.3, 0.2);
        let y = Point3::new(1.3, 0.4, -0.8);
        let nx = Point3::new(1.0, 2.0, -1.0).normalize();
        let ny = Point3::new(-0.5, 0.3, 2.0).normalize();
        let h = 1e-5;
        let f = |x: &Point3| dg_dn_second(x, &y, &ny);
        let fd = (f(&(x + h * nx)) - f(&(x - h * nx))) / (2.0 * h);
        assert!((fd - kernel_dn_dn(&x, &nx, &y, &ny)).abs() < 1e-8);
    }

    #[test]
    fn p1_quadrature_weights_are_vertex_masses() {
        let mesh = SurfaceMesh::sphere(1);
        let q = BasisQuadrature::new(&mesh, SpaceKind::P1, 3).unwrap();
        for v in 0..mesh.num_vertices() {
            let mass: f64 = mesh.vertex_triangles(v).iter().map(|&t| mesh.area(t) / 3.0).sum();
            assert!((q.integrate_with(v, |_, _| 1.0) - mass).abs() < 1e-14);
        }
    }

    #[test]
    fn potential_integral_rejects_points_in_support() {
        let mesh = SurfaceMesh::octahedron();
        let q = BasisQuadrature::new(&mesh, SpaceKind::P0, 2).unwrap();
        let centroid = mesh.corners(0).iter().sum::<Point3>() / 3.0;
        assert_eq!(
            q.potential_integral(0, &centroid, PotentialKind::Value),
            Err(KernelError::PointInSupport { dof: 0 })
        );
    }

    #[test]
    fn hyp_block_annihilates_constants() {
        let mesh = SurfaceMesh::sphere(1);
        let asm = GalerkinAssembler::new(&mesh, 3).unwrap();
        let all: Vec<usize> = (0..mesh.num_vertices()).collect();
        let w = asm.block(KernelKind::Hyp, &all, &all).unwrap();
        let scale = w.norm();
        for r in 0..w.nrows() {
            assert!(w.row(r).sum().abs() < 1e-12 * scale);
        }
        assert!((&w - w.transpose()).norm() < 1e-14 * scale);
    }

    #[test]
    fn kernel_dn_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..100 {
            let x = Point3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let y = x + Point3::from_fn(|_, _| rng.gen_range(0.5..1.5));
            let n = Point3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            let fd_y = (laplace_kernel(&x, &(y + h * n)) - laplace_kernel(&x, &(y - h * n))) / (2.0 * h);
            let fd_x = (laplace_kernel(&(x + h * n), &y) - laplace_kernel(&(x - h * n), &y)) / (2.0 * h);
            let dy = kernel_dn(&x, &y, &n, DerivativeSide::Y).unwrap();
            let dx = kernel_dn(&x, &y, &n, DerivativeSide::X).unwrap();
            assert!((fd_y - dy).abs() < 1e-8);
            assert!((fd_x - dx).abs() < 1e-8);
            assert!((dx + dy).abs() < 1e-15);
        }
    }

    #[test]
    fn far_field_potential_degenerates_to_centroid_value() {
        let mesh = SurfaceMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
        )
        .unwrap();
        let lo = BasisQuadrature::new(&mesh, SpaceKind::P0, 4).unwrap();
        let hi = BasisQuadrature::new(&mesh, SpaceKind::P0, 10).unwrap();
        let xi = Point3::new(10.0, 10.0, 10.0);
        let centroid = mesh.corners(0).iter().sum::<Point3>() / 3.0;
        let v = lo.potential_integral(0, &xi, PotentialKind::Value).unwrap();
        let c = mesh.area(0) * laplace_kernel(&centroid, &xi);
        let ratio = 2f64.sqrt() / (xi - centroid).norm();
        assert!((v - c).abs() < ratio * ratio * c);
        let oracle = hi.potential_integral(0, &xi, PotentialKind::Value).unwrap();
        assert!((v - oracle).abs() < 1e-14);
        // The panel is symmetric under swapping x and y.
        let a = Point3::new(1.3, -0.4, 0.7);
        let b = Point3::new(-0.4, 1.3, 0.7);
        let va = lo.potential_integral(0, &a, PotentialKind::Value).unwrap();
        let vb = lo.potential_integral(0, &b, PotentialKind::Value).unwrap();
        assert!((va - vb).abs() < 1e-13);
        // Self-convergence at distance twice the diameter.
        let xi = Point3::new(0.3, 0.3, 2.0 * 2f64.sqrt());
        for kind in [
            PotentialKind::Value,
            PotentialKind::NormalDerivativeOnPanel,
            PotentialKind::NormalDerivativeAtPoint(Point3::new(0.0, 0.6, 0.8)),
            PotentialKind::MixedNormalDerivative(Point3::new(0.0, 0.6, 0.8)),
        ] {
            let l = lo.potential_integral(0, &xi, kind).unwrap();
            let h = hi.potential_integral(0, &xi, kind).unwrap();
            assert!((l - h).abs() < 1e-9, "{kind:?}: {l} vs {h}");
        }
    }

    #[test]
    fn slp_is_symmetric_positive_definite() {
        let mesh = SurfaceMesh::sphere(1);
        let asm = GalerkinAssembler::new(&mesh, 4).unwrap();
        let all: Vec<usize> = (0..mesh.num_triangles()).collect();
        let g = asm.block(KernelKind::Slp, &all, &all).unwrap();
        assert!((&g - g.transpose()).amax() < 1e-13 * g.amax());
        assert!(g.cholesky().is_some());
        assert_eq!(asm.entry(KernelKind::Slp, 3, 17).unwrap(), asm.entry(KernelKind::Slp, 17, 3).unwrap());
    }

    #[test]
    fn double_layer_green_identity() {
        // u = 1 has zero Neumann data, so (M/2 + K) 1 = 0 up to quadrature error.
        let mesh = SurfaceMesh::sphere(2);
        let asm = GalerkinAssembler::new(&mesh, 5).unwrap();
        let rows: Vec<usize> = (0..mesh.num_triangles()).collect();
        let cols: Vec<usize> = (0..mesh.num_vertices()).collect();
        let k = asm.block(KernelKind::DlpY, &rows, &cols).unwrap();
        for (i, row) in k.row_iter().enumerate() {
            assert!((row.sum() + 0.5 * mesh.area(i)).abs() < 1e-6);
        }
        let kt = asm.block(KernelKind::DlpX, &cols, &rows).unwrap();
        assert_eq!(kt, k.transpose());
    }

    #[test]
    fn curl_form_matches_direct_hypersingular_quadrature() {
        let mesh = SurfaceMesh::sphere(2);
        let asm = GalerkinAssembler::new(&mesh, 8).unwrap();
        let north = mesh.vertices().iter().position(|p| p.z == 1.0).unwrap();
        let south = mesh.vertices().iter().position(|p| p.z == -1.0).unwrap();
        let curl = asm.entry(KernelKind::Hyp, north, south).unwrap();
        let q = BasisQuadrature::new(&mesh, SpaceKind::P1, 8).unwrap();
        let mut direct = 0.0;
        for p in q.offsets[north]..q.offsets[north + 1] {
            let kind = PotentialKind::MixedNormalDerivative(q.normals[p]);
            direct -= q.weights[p] * q.integrate_unchecked(south, &q.points[p], &kind);
        }
        assert!((curl - direct).abs() < 1e-8, "{curl} vs {direct}");
        assert!(curl.abs() > 1e-5);
    }

    #[test]
    fn regular_block_meets_its_tolerance() {
        let mesh = SurfaceMesh::sphere(3);
        let ri = RegularIntegrator::new(&mesh, 10).unwrap();
        for kind in [KernelKind::Slp, KernelKind::DlpY, KernelKind::Hyp] {
            let (rs, cs) = (kind.row_space(), kind.col_space());
            let bi = rs.support_box(&mesh, 0);
            let cols: Vec<usize> = (0..cs.dof_count(&mesh))
                .filter(|&j| cs.support_box(&mesh, j).distance(&bi) > 0.0)
                .step_by(7)
                .collect();
            let fast = ri.block(kind, &[0], &cols, 1e-6);
            for (c, &j) in cols.iter().enumerate() {
                let exact = ri.entry(kind, 0, j, 10);
                assert!((fast[(0, c)] - exact).abs() <= 1e-6 * exact.abs(), "{kind:?} {j}");
            }
        }
    }
}

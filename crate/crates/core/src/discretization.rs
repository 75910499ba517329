//! Piecewise constant and piecewise linear boundary element spaces, the
//! mixed mass matrix, L2 projections, test solutions and error norms.

use std::f64::consts::PI;
use std::str::FromStr;

use thiserror::Error;

use crate::clustering::{BoundingBox, ClusterError, ClusterTree};
use crate::kernel::laplace_kernel;
use crate::mesh::{Point3, SurfaceMesh};
use crate::quadrature::triangle_rule;
use crate::solver::{cg, CgOptions, LinearOperator, SolverError};

/// Quadrature order for projections and error norms.
pub const ERROR_ORDER: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum DiscretizationError {
    #[error("energy product is negative ({value:e}); the single layer operator is not positive")]
    NegativeEnergy { value: f64 },
    #[error("coefficient vector has length {found}, space has {expected} dofs")]
    Dimension { expected: usize, found: usize },
    #[error("mass solve failed: {0}")]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    /// Piecewise constants, one dof per triangle.
    P0,
    /// Continuous piecewise linears, one dof per vertex.
    P1,
}

impl SpaceKind {
    pub fn dof_count(self, mesh: &SurfaceMesh) -> usize {
        match self {
            SpaceKind::P0 => mesh.num_triangles(),
            SpaceKind::P1 => mesh.num_vertices(),
        }
    }

    /// Bounding box of the support of basis function `dof`.
    pub fn support_box(self, mesh: &SurfaceMesh, dof: usize) -> BoundingBox {
        match self {
            SpaceKind::P0 => BoundingBox::from_points(&mesh.corners(dof)),
            SpaceKind::P1 => {
                let pts: Vec<Point3> = mesh.vertex_triangles(dof).iter().flat_map(|&t| mesh.corners(t)).collect();
                BoundingBox::from_points(&pts)
            }
        }
    }

    /// Cluster tree over the support boxes of all dofs.
    pub fn cluster_tree(self, mesh: &SurfaceMesh, leaf_size: usize) -> Result<ClusterTree, ClusterError> {
        let boxes: Vec<BoundingBox> = (0..self.dof_count(mesh)).map(|i| self.support_box(mesh, i)).collect();
        ClusterTree::build(&boxes, leaf_size)
    }

    /// Value of the basis functions of triangle `t` at reference point
    /// `(s, t)`, paired with their dof numbers.
    fn local_basis(self, mesh: &SurfaceMesh, tri: usize, st: [f64; 2]) -> Vec<(usize, f64)> {
        match self {
            SpaceKind::P0 => vec![(tri, 1.0)],
            SpaceKind::P1 => {
                let v = mesh.triangles()[tri];
                let bary = [1.0 - st[0] - st[1], st[0], st[1]];
                (0..3).map(|k| (v[k], bary[k])).collect()
            }
        }
    }
}

impl FromStr for SpaceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p0" | "P0" => Ok(SpaceKind::P0),
            "p1" | "P1" => Ok(SpaceKind::P1),
            _ => Err(format!("unknown space '{s}'")),
        }
    }
}

/// Mixed mass matrix `m_ij = int psi_i phi_j` (P0 rows, P1 columns).
/// Each triangle contributes `area / 3` to its three vertices.
#[derive(Debug, Clone)]
pub struct MixedMass<'a> {
    mesh: &'a SurfaceMesh,
}

impl<'a> MixedMass<'a> {
    pub fn new(mesh: &'a SurfaceMesh) -> Self {
        Self { mesh }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if self.mesh.triangles()[i].contains(&j) {
            self.mesh.area(i) / 3.0
        } else {
            0.0
        }
    }

    /// `M x` for a P1 coefficient vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.mesh
            .triangles()
            .iter()
            .enumerate()
            .map(|(t, v)| self.mesh.area(t) / 3.0 * (x[v[0]] + x[v[1]] + x[v[2]]))
            .collect()
    }

    /// `M^T y` for a P0 coefficient vector.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.num_vertices()];
        for (t, v) in self.mesh.triangles().iter().enumerate() {
            let c = self.mesh.area(t) / 3.0 * y[t];
            for &j in v {
                out[j] += c;
            }
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.mesh.num_triangles(), self.mesh.num_vertices());
        for (t, v) in self.mesh.triangles().iter().enumerate() {
            for &j in v {
                m[(t, j)] = self.mesh.area(t) / 3.0;
            }
        }
        m
    }
}

// P1 Gram matrix applied element by element: the local matrix of a flat
// triangle is area/12 * (1 + delta_kl).
struct P1Gram<'a>(&'a SurfaceMesh);

impl LinearOperator for P1Gram<'_> {
    fn dim(&self) -> usize {
        self.0.num_vertices()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (t, v) in self.0.triangles().iter().enumerate() {
            let c = self.0.area(t) / 12.0;
            let s = x[v[0]] + x[v[1]] + x[v[2]];
            for &j in v {
                y[j] += c * (s + x[j]);
            }
        }
    }
}

/// Load vector `int f phi_i` with the order-4 triangle rule.
pub fn load_vector(mesh: &SurfaceMesh, space: SpaceKind, f: impl Fn(&Point3) -> f64) -> Vec<f64> {
    let rule = triangle_rule(ERROR_ORDER).expect("nonzero order");
    let mut out = vec![0.0; space.dof_count(mesh)];
    for t in 0..mesh.num_triangles() {
        let [p0, p1, p2] = mesh.corners(t);
        let jac = 2.0 * mesh.area(t);
        for (st, w) in rule.points.iter().zip(&rule.weights) {
            let x = p0 + st[0] * (p1 - p0) + st[1] * (p2 - p0);
            let fx = w * jac * f(&x);
            for (dof, phi) in space.local_basis(mesh, t, *st) {
                out[dof] += fx * phi;
            }
        }
    }
    out
}

/// L2 projection of `f` onto the space.
pub fn l2_project(
    mesh: &SurfaceMesh,
    space: SpaceKind,
    f: impl Fn(&Point3) -> f64,
) -> Result<Vec<f64>, DiscretizationError> {
    let load = load_vector(mesh, space, f);
    match space {
        SpaceKind::P0 => Ok(load.iter().zip(mesh.areas()).map(|(l, a)| l / a).collect()),
        SpaceKind::P1 => {
            let gram = P1Gram(mesh);
            // The Jacobi-scaled mass matrix has condition number below 10 on
            // shape-regular meshes.
            let diag: Vec<f64> = (0..mesh.num_vertices())
                .map(|v| mesh.vertex_triangles(v).iter().map(|&t| mesh.area(t) / 6.0).sum())
                .collect();
            let opts = CgOptions {
                tolerance: 1e-14,
                max_iterations: 500,
            };
            Ok(cg(&gram, &load, Some(&diag), &opts)?.x)
        }
    }
}

/// Nodal interpolation of `f` in the P1 space.
pub fn interpolate_p1(mesh: &SurfaceMesh, f: impl Fn(&Point3) -> f64) -> Vec<f64> {
    mesh.vertices().iter().map(f).collect()
}

/// `||u_h - exact||_{L2}` over the flat panels.
pub fn l2_error(
    mesh: &SurfaceMesh,
    space: SpaceKind,
    coeffs: &[f64],
    exact: impl Fn(&Point3) -> f64,
) -> Result<f64, DiscretizationError> {
    let expected = space.dof_count(mesh);
    if coeffs.len() != expected {
        return Err(DiscretizationError::Dimension {
            expected,
            found: coeffs.len(),
        });
    }
    let rule = triangle_rule(ERROR_ORDER).expect("nonzero order");
    let mut sum = 0.0;
    for t in 0..mesh.num_triangles() {
        let [p0, p1, p2] = mesh.corners(t);
        let jac = 2.0 * mesh.area(t);
        for (st, w) in rule.points.iter().zip(&rule.weights) {
            let x = p0 + st[0] * (p1 - p0) + st[1] * (p2 - p0);
            let uh: f64 = space.local_basis(mesh, t, *st).iter().map(|(d, phi)| coeffs[*d] * phi).sum();
            let e = uh - exact(&x);
            sum += w * jac * e * e;
        }
    }
    Ok(sum.sqrt())
}

/// `sqrt(d^T G d)` for the single layer operator `g`.
pub fn energy_error(g: &dyn LinearOperator, d: &[f64]) -> Result<f64, DiscretizationError> {
    if d.len() != g.dim() {
        return Err(DiscretizationError::Dimension {
            expected: g.dim(),
            found: d.len(),
        });
    }
    let gd = g.apply(d);
    let value: f64 = gd.iter().zip(d).map(|(a, b)| a * b).sum();
    let norm2: f64 = d.iter().map(|v| v * v).sum();
    if value < -1e-12 * norm2 {
        return Err(DiscretizationError::NegativeEnergy { value });
    }
    Ok(value.max(0.0).sqrt())
}

/// Harmonic functions in the unit ball used as exact solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestCase {
    /// `x1^2 - x3^2`
    Poly,
    /// `g(x, y1)` with `y1 = (1.2, 1.2, 1.2)`
    Point1,
    /// `g(x, y2)` with `y2 = (1.0, 0.25, 1.0)`
    Point2,
}

impl TestCase {
    pub const ALL: [TestCase; 3] = [TestCase::Poly, TestCase::Point1, TestCase::Point2];

    pub fn name(self) -> &'static str {
        match self {
            TestCase::Poly => "poly",
            TestCase::Point1 => "point1",
            TestCase::Point2 => "point2",
        }
    }

    fn source(self) -> Option<Point3> {
        match self {
            TestCase::Poly => None,
            TestCase::Point1 => Some(Point3::new(1.2, 1.2, 1.2)),
            TestCase::Point2 => Some(Point3::new(1.0, 0.25, 1.0)),
        }
    }

    pub fn value(self, x: &Point3) -> f64 {
        match self.source() {
            None => x.x * x.x - x.z * x.z,
            Some(y) => laplace_kernel(x, &y),
        }
    }

    pub fn gradient(self, x: &Point3) -> Point3 {
        match self.source() {
            None => Point3::new(2.0 * x.x, 0.0, -2.0 * x.z),
            Some(y) => {
                let d = x - y;
                -d / (4.0 * PI * d.norm().powi(3))
            }
        }
    }

    /// Dirichlet trace at the radial projection of `x` onto the unit sphere,
    /// so that points of the flat panels see the trace of the nearest
    /// sphere point along the ray.
    pub fn dirichlet(self, x: &Point3) -> f64 {
        self.value(&x.normalize())
    }

    /// Neumann trace `grad u . n` at the radial projection of `x`.
    pub fn neumann(self, x: &Point3) -> f64 {
        let y = x.normalize();
        self.gradient(&y).dot(&y)
    }
}

impl FromStr for TestCase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TestCase::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown test case '{s}' (expected poly, point1 or point2)"))
    }
}

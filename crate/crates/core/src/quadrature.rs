//! Gauss rules on `[0, 1]` and triangles, and the regularizing
//! Sauter-Schwab rules for pairs of panels that share a vertex, an edge, or
//! are identical.
//!
//! Triangle rules live on the reference triangle with corners `(0,0)`,
//! `(1,0)`, `(0,1)`; a reference point `(s, t)` maps to
//! `p0 + s (p1 - p0) + t (p2 - p0)` and carries barycentric coordinates
//! `(1 - s - t, s, t)`.

use nalgebra::{DMatrix, SymmetricEigen};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature order must be at least 1")]
    ZeroOrder,
    #[error("unknown panel pair case {0:?}")]
    UnknownCase(String),
}

/// Gauss-Legendre rule on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule1D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `q`-point Gauss-Legendre rule on `[0, 1]`, exact up to degree `2q - 1`.
pub fn gauss_legendre(q: usize) -> Result<QuadRule1D, QuadratureError> {
    if q == 0 {
        return Err(QuadratureError::ZeroOrder);
    }
    let mut points = vec![0.0; q];
    let mut weights = vec![0.0; q];
    let n = q as f64;
    for i in 0..q.div_ceil(2) {
        // Newton iteration on P_q from the usual asymptotic guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(q, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(q, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x is the i-th largest root on [-1, 1]
        points[q - 1 - i] = 0.5 * (1.0 + x);
        points[i] = 0.5 * (1.0 - x);
        weights[q - 1 - i] = 0.5 * w;
        weights[i] = 0.5 * w;
    }
    Ok(QuadRule1D { points, weights })
}

// Value and derivative of the Legendre polynomial P_n at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature on the reference triangle.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `q`-point Gauss rule on `[0, 1]` for the weight `u`, exact for
/// `int u p(u)` with `deg p <= 2q - 1`. Golub-Welsch on the Jacobi matrix of
/// the weight `1 + x` on `[-1, 1]`.
pub fn gauss_jacobi_u(q: usize) -> Result<QuadRule1D, QuadratureError> {
    if q == 0 {
        return Err(QuadratureError::ZeroOrder);
    }
    let mut jac = DMatrix::zeros(q, q);
    for n in 0..q {
        let k = n as f64;
        jac[(n, n)] = 1.0 / ((2.0 * k + 1.0) * (2.0 * k + 3.0));
        if n + 1 < q {
            let m = k + 1.0;
            let b = (4.0 * m * m * (m + 1.0) * (m + 1.0) / ((2.0 * m + 1.0).powi(2) * (2.0 * m + 2.0) * (2.0 * m))).sqrt();
            jac[(n, n + 1)] = b;
            jac[(n + 1, n)] = b;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut nodes: Vec<(f64, f64)> = (0..q)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            // Total weight of 1 + x on [-1, 1] is 2; mapping to u = (1 + x) / 2
            // scales weights by 1/4.
            (0.5 * (1.0 + eig.eigenvalues[i]), 0.5 * v0 * v0)
        })
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(QuadRule1D {
        points: nodes.iter().map(|n| n.0).collect(),
        weights: nodes.iter().map(|n| n.1).collect(),
    })
}

/// `q^2`-point conical product rule (Gauss-Jacobi in the collapsed
/// direction, Gauss-Legendre across); weights sum to 1/2 and polynomials of
/// total degree `2q - 1` are integrated exactly. The one-point rule is the
/// centroid rule.
pub fn triangle_rule(q: usize) -> Result<TriangleRule, QuadratureError> {
    let gu = gauss_jacobi_u(q)?;
    let gv = gauss_legendre(q)?;
    let mut points = Vec::with_capacity(q * q);
    let mut weights = Vec::with_capacity(q * q);
    for (&u, &wu) in gu.points.iter().zip(&gu.weights) {
        for (&v, &wv) in gv.points.iter().zip(&gv.weights) {
            points.push([u * (1.0 - v), u * v]);
            weights.push(wu * wv);
        }
    }
    Ok(TriangleRule { points, weights })
}

/// Relative position of two panels of the same mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PanelPairCase {
    Identical,
    SharedEdge,
    SharedVertex,
    Disjoint,
}

impl PanelPairCase {
    pub const ALL: [PanelPairCase; 4] = [
        PanelPairCase::Identical,
        PanelPairCase::SharedEdge,
        PanelPairCase::SharedVertex,
        PanelPairCase::Disjoint,
    ];

    /// Number of regularizing subdomains of the four-dimensional cube.
    pub fn subdomains(self) -> usize {
        match self {
            PanelPairCase::Identical => 6,
            PanelPairCase::SharedEdge => 5,
            PanelPairCase::SharedVertex => 2,
            PanelPairCase::Disjoint => 1,
        }
    }
}

impl FromStr for PanelPairCase {
    type Err = QuadratureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identical" => Ok(PanelPairCase::Identical),
            "shared_edge" => Ok(PanelPairCase::SharedEdge),
            "shared_vertex" => Ok(PanelPairCase::SharedVertex),
            "disjoint" => Ok(PanelPairCase::Disjoint),
            other => Err(QuadratureError::UnknownCase(other.to_string())),
        }
    }
}

/// Classifies two triangles by the number of common vertex indices.
pub fn classify_panel_pair(a: &[usize; 3], b: &[usize; 3]) -> PanelPairCase {
    match a.iter().filter(|v| b.contains(v)).count() {
        3 => PanelPairCase::Identical,
        2 => PanelPairCase::SharedEdge,
        1 => PanelPairCase::SharedVertex,
        _ => PanelPairCase::Disjoint,
    }
}

/// Classifies a panel pair and returns local vertex orders for both panels
/// that put the common vertices first, in the same order on both panels.
///
/// `order[k]` is the local index (0..3) of the panel vertex that plays the
/// role of reference corner `k`.
pub fn align_panel_pair(a: &[usize; 3], b: &[usize; 3]) -> (PanelPairCase, [usize; 3], [usize; 3]) {
    let case = classify_panel_pair(a, b);
    match case {
        PanelPairCase::Identical => {
            let ob = [0, 1, 2].map(|k| b.iter().position(|&v| v == a[k]).unwrap());
            (case, [0, 1, 2], ob)
        }
        PanelPairCase::SharedEdge => {
            // first edge of `a` (in cyclic order) whose endpoints are both in `b`
            let k = (0..3)
                .find(|&k| b.contains(&a[k]) && b.contains(&a[(k + 1) % 3]))
                .unwrap();
            let oa = [k, (k + 1) % 3, (k + 2) % 3];
            let p0 = b.iter().position(|&v| v == a[oa[0]]).unwrap();
            let p1 = b.iter().position(|&v| v == a[oa[1]]).unwrap();
            (case, oa, [p0, p1, 3 - p0 - p1])
        }
        PanelPairCase::SharedVertex => {
            let k = (0..3).find(|&k| b.contains(&a[k])).unwrap();
            let p = b.iter().position(|&v| v == a[k]).unwrap();
            (case, [k, (k + 1) % 3, (k + 2) % 3], [p, (p + 1) % 3, (p + 2) % 3])
        }
        PanelPairCase::Disjoint => (case, [0, 1, 2], [0, 1, 2]),
    }
}

/// Quadrature on the product of two reference triangles. Weights include the
/// Jacobians of the regularizing transforms but not the panel Jacobians.
#[derive(Debug, Clone)]
pub struct PanelPairRule {
    pub case: PanelPairCase,
    pub points: Vec<([f64; 2], [f64; 2])>,
    pub weights: Vec<f64>,
}

impl PanelPairRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Rule of order `q` for the given case: `subdomains * q^4` points for the
/// singular cases, the tensor product of two `q^2` triangle rules for
/// disjoint panels.
pub fn sauter_schwab_rule(case: PanelPairCase, q: usize) -> Result<PanelPairRule, QuadratureError> {
    if case == PanelPairCase::Disjoint {
        let tri = triangle_rule(q)?;
        let mut points = Vec::with_capacity(tri.len() * tri.len());
        let mut weights = Vec::with_capacity(tri.len() * tri.len());
        for (x, wx) in tri.points.iter().zip(&tri.weights) {
            for (y, wy) in tri.points.iter().zip(&tri.weights) {
                points.push((*x, *y));
                weights.push(wx * wy);
            }
        }
        return Ok(PanelPairRule { case, points, weights });
    }

    let g = gauss_legendre(q)?;
    let n = case.subdomains() * q.pow(4);
    let mut points = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let nodes = || g.points.iter().copied().zip(g.weights.iter().copied());
    for (xi, w0) in nodes() {
        for (e1, w1) in nodes() {
            for (e2, w2) in nodes() {
                for (e3, w3) in nodes() {
                    let w = w0 * w1 * w2 * w3;
                    push_subdomains(case, xi, e1, e2, e3, w, &mut points, &mut weights);
                }
            }
        }
    }
    Ok(PanelPairRule { case, points, weights })
}

// Transforms from the unit 4-cube onto pieces of T x T with
// T = {0 <= x2 <= x1 <= 1}; the common vertex is (0,0) and the common edge
// runs from (0,0) to (1,0).
#[allow(clippy::too_many_arguments)]
fn push_subdomains(
    case: PanelPairCase,
    xi: f64,
    e1: f64,
    e2: f64,
    e3: f64,
    w: f64,
    points: &mut Vec<([f64; 2], [f64; 2])>,
    weights: &mut Vec<f64>,
) {
    let mut push = |x: [f64; 2], y: [f64; 2], jac: f64| {
        points.push((to_standard(x), to_standard(y)));
        weights.push(w * jac);
    };
    match case {
        PanelPairCase::Identical => {
            let jac = xi.powi(3) * e1 * e1 * e2;
            let a = [xi, xi * (1.0 - e1 + e1 * e2)];
            let b = [xi * (1.0 - e1 * e2 * e3), xi * (1.0 - e1)];
            push(a, b, jac);
            push(b, a, jac);
            let a = [xi, xi * e1 * (1.0 - e2 + e2 * e3)];
            let b = [xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)];
            push(a, b, jac);
            push(b, a, jac);
            let a = [xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)];
            let b = [xi, xi * e1 * (1.0 - e2)];
            push(a, b, jac);
            push(b, a, jac);
        }
        PanelPairCase::SharedEdge => {
            let jac = xi.powi(3) * e1 * e1;
            push(
                [xi, xi * e1 * e3],
                [xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)],
                jac,
            );
            let jac = jac * e2;
            push(
                [xi, xi * e1],
                [xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)],
                jac,
            );
            push(
                [xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)],
                [xi, xi * e1 * e2 * e3],
                jac,
            );
            push(
                [xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)],
                [xi, xi * e1],
                jac,
            );
            push(
                [xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)],
                [xi, xi * e1 * e2],
                jac,
            );
        }
        PanelPairCase::SharedVertex => {
            let jac = xi.powi(3) * e2;
            let a = [xi, xi * e1];
            let b = [xi * e2, xi * e2 * e3];
            push(a, b, jac);
            push(b, a, jac);
        }
        PanelPairCase::Disjoint => unreachable!("handled by the tensor rule"),
    }
}

// (x1, x2) in {0 <= x2 <= x1 <= 1}  ->  (s, t) on the standard triangle.
fn to_standard(x: [f64; 2]) -> [f64; 2] {
    [x[0] - x[1], x[1]]
}

/// The four rules of one order, built once and shared by assembly routines.
#[derive(Debug, Clone)]
pub struct PanelRuleSet {
    order: usize,
    rules: [PanelPairRule; 4],
}

impl PanelRuleSet {
    pub fn new(q: usize) -> Result<Self, QuadratureError> {
        Ok(Self {
            order: q,
            rules: [
                sauter_schwab_rule(PanelPairCase::Identical, q)?,
                sauter_schwab_rule(PanelPairCase::SharedEdge, q)?,
                sauter_schwab_rule(PanelPairCase::SharedVertex, q)?,
                sauter_schwab_rule(PanelPairCase::Disjoint, q)?,
            ],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, case: PanelPairCase) -> &PanelPairRule {
        match case {
            PanelPairCase::Identical => &self.rules[0],
            PanelPairCase::SharedEdge => &self.rules[1],
            PanelPairCase::SharedVertex => &self.rules[2],
            PanelPairCase::Disjoint => &self.rules[3],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_small_orders() {
        assert_eq!(gauss_legendre(0), Err(QuadratureError::ZeroOrder));
        let g1 = gauss_legendre(1).unwrap();
        assert!((g1.points[0] - 0.5).abs() < 1e-16 && (g1.weights[0] - 1.0).abs() < 1e-16);
        let g2 = gauss_legendre(2).unwrap();
        let d = 1.0 / (2.0 * 3f64.sqrt());
        assert!((g2.points[0] - (0.5 - d)).abs() < 1e-15);
        assert!((g2.points[1] - (0.5 + d)).abs() < 1e-15);
        assert!((g2.integrate(|x| x.powi(3)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gauss_exactness_and_invariants() {
        for q in 1..=20 {
            let g = gauss_legendre(q).unwrap();
            assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(g.points.iter().all(|&x| x > 0.0 && x < 1.0));
            assert!(g.weights.iter().all(|&w| w > 0.0));
            assert!(g.points.windows(2).all(|p| p[0] < p[1]));
            for deg in 0..2 * q {
                let exact = 1.0 / (deg as f64 + 1.0);
                let got = g.integrate(|x| x.powi(deg as i32));
                assert!((got - exact).abs() < 1e-14, "q={q} deg={deg}");
            }
        }
    }

    #[test]
    fn gauss_jacobi_exactness() {
        for q in 1..=15 {
            let g = gauss_jacobi_u(q).unwrap();
            for deg in 0..2 * q {
                let got: f64 = g.points.iter().zip(&g.weights).map(|(u, w)| w * u.powi(deg as i32)).sum();
                assert!((got - 1.0 / (deg as f64 + 2.0)).abs() < 1e-14, "q={q} deg={deg}");
            }
        }
    }

    #[test]
    fn triangle_rule_moments() {
        let t1 = triangle_rule(1).unwrap();
        assert_eq!(t1.len(), 1);
        assert!((t1.weights[0] - 0.5).abs() < 1e-15);
        assert!((t1.points[0][0] - 1.0 / 3.0).abs() < 1e-15 && (t1.points[0][1] - 1.0 / 3.0).abs() < 1e-15);
        for q in 1..=12 {
            let t = triangle_rule(q).unwrap();
            assert_eq!(t.len(), q * q);
            assert!(t.weights.iter().all(|&w| w > 0.0));
            assert!((t.weights.iter().sum::<f64>() - 0.5).abs() < 1e-14);
            if q >= 2 {
                let mx: f64 = t.points.iter().zip(&t.weights).map(|(p, w)| w * p[0]).sum();
                assert!((mx - 1.0 / 6.0).abs() < 1e-14);
            }
        }
        // x^2 y over the triangle = 2! 1! / 5! = 1/60
        let t = triangle_rule(2).unwrap();
        let m: f64 = t.points.iter().zip(&t.weights).map(|(p, w)| w * p[0] * p[0] * p[1]).sum();
        assert!((m - 1.0 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn classification() {
        let t = [0, 1, 2];
        assert_eq!(classify_panel_pair(&t, &[2, 0, 1]), PanelPairCase::Identical);
        assert_eq!(classify_panel_pair(&t, &[1, 0, 5]), PanelPairCase::SharedEdge);
        assert_eq!(classify_panel_pair(&t, &[7, 2, 5]), PanelPairCase::SharedVertex);
        assert_eq!(classify_panel_pair(&t, &[3, 4, 5]), PanelPairCase::Disjoint);
        assert_eq!(
            "vertexish".parse::<PanelPairCase>(),
            Err(QuadratureError::UnknownCase("vertexish".into()))
        );
    }

    #[test]
    fn alignment_puts_common_vertices_first() {
        let a = [4, 9, 2];
        let b = [9, 7, 4];
        let (case, oa, ob) = align_panel_pair(&a, &b);
        assert_eq!(case, PanelPairCase::SharedEdge);
        assert_eq!(a[oa[0]], b[ob[0]]);
        assert_eq!(a[oa[1]], b[ob[1]]);
        assert_eq!(b[ob[2]], 7);

        let (case, oa, ob) = align_panel_pair(&[1, 2, 3], &[5, 3, 6]);
        assert_eq!(case, PanelPairCase::SharedVertex);
        assert_eq!(oa[0], 2);
        assert_eq!(ob[0], 1);
    }

    // Exact integral of x^a y^b over the standard triangle: a! b! / (a+b+2)!
    fn monomial(a: u32, b: u32) -> f64 {
        let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
        f(a) * f(b) / f(a + b + 2)
    }

    #[test]
    fn pair_rules_cover_the_product_domain() {
        // Smooth integrands over T x T are integrated correctly by every case,
        // which checks that the subdomains tile the product exactly once.
        for case in PanelPairCase::ALL {
            let rule = sauter_schwab_rule(case, 6).unwrap();
            let expected_len = match case {
                PanelPairCase::Disjoint => 6usize.pow(4),
                _ => case.subdomains() * 6usize.pow(4),
            };
            assert_eq!(rule.len(), expected_len);
            assert!(rule.weights.iter().all(|&w| w > 0.0 && w.is_finite()));
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 0.25).abs() < 1e-13, "{case:?} total {total}");

            let f = |x: [f64; 2], y: [f64; 2]| x[0] * x[0] * y[1] + 3.0 * x[1] * y[0] * y[1] - y[0];
            let got: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * f(p.0, p.1)).sum();
            let exact = monomial(2, 0) * monomial(0, 1) + 3.0 * monomial(0, 1) * monomial(1, 1)
                - 0.5 * monomial(1, 0);
            assert!((got - exact).abs() < 1e-12, "{case:?}: {got} vs {exact}");
        }
    }
}

//! Closed, consistently oriented triangle meshes.
//!
//! Triangles are flat panels with vertices listed counter-clockwise when seen
//! from outside, so `(v1 - v0) x (v2 - v0)` points out of the enclosed domain.
//! The text format is
//!
//! ```text
//! V F
//! x y z        (V lines)
//! i j k        (F lines, 0-based vertex indices)
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

/// A point (or direction) in three-dimensional space.
pub type Point3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("triangle {triangle} references vertex {index}, but the mesh has only {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        count: usize,
    },
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("triangle {0} is degenerate")]
    Degenerate(usize),
    #[error("open edge ({from}, {to}): no neighbouring triangle traverses it in reverse")]
    OpenEdge { from: usize, to: usize },
    #[error("edge ({from}, {to}) is traversed in the same direction by two triangles")]
    Orientation { from: usize, to: usize },
    #[error("vertex {0} lies at the origin and cannot be projected")]
    VertexAtOrigin(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Closed surface made of flat triangles.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[usize; 3]>,
    normals: Vec<Point3>,
    areas: Vec<f64>,
    vertex_triangles: Vec<Vec<usize>>,
}

impl SurfaceMesh {
    /// Builds a mesh and checks that it is a closed, consistently oriented
    /// surface with non-degenerate panels.
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mesh = Self::from_parts(vertices, triangles)?;
        mesh.validate()?;
        Ok(mesh)
    }

    // Geometry only; topology is checked by `validate`.
    fn from_parts(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        for (i, v) in vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(MeshError::NonFinite(i));
            }
        }
        let mut normals = Vec::with_capacity(triangles.len());
        let mut areas = Vec::with_capacity(triangles.len());
        let mut vertex_triangles = vec![Vec::new(); vertices.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for &index in tri {
                if index >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: t,
                        index,
                        count: vertices.len(),
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::Degenerate(t));
            }
            let [a, b, c] = tri.map(|i| vertices[i]);
            let cross = (b - a).cross(&(c - a));
            let norm = cross.norm();
            if norm <= 0.0 || !norm.is_finite() {
                return Err(MeshError::Degenerate(t));
            }
            normals.push(cross / norm);
            areas.push(0.5 * norm);
            for &index in tri {
                vertex_triangles[index].push(t);
            }
        }
        Ok(Self {
            vertices,
            triangles,
            normals,
            areas,
            vertex_triangles,
        })
    }

    /// The surface `|x1| + |x2| + |x3| = 1`.
    pub fn octahedron() -> Self {
        let vertices = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(0.0, 0.0, -1.0),
        ];
        let triangles = vec![
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ];
        Self::new(vertices, triangles).expect("octahedron is a valid closed surface")
    }

    /// Sphere approximation obtained by `level` rounds of regular refinement of
    /// the octahedron, projecting all vertices to the unit sphere after every
    /// round. Level `l` has `8 * 4^l` triangles.
    pub fn sphere(level: usize) -> Self {
        let mut mesh = Self::octahedron();
        for _ in 0..level {
            mesh = mesh
                .refine_red()
                .project_unit_sphere()
                .expect("refined octahedron has no vertex at the origin");
        }
        mesh
    }

    /// Splits every triangle into four through its edge midpoints.
    pub fn refine_red(&self) -> Self {
        let mut vertices = self.vertices.clone();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                vertices.push(0.5 * (vertices[a] + vertices[b]));
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Self::from_parts(vertices, triangles).expect("refinement of a valid mesh is valid")
    }

    /// Moves every vertex radially onto the unit sphere.
    pub fn project_unit_sphere(&self) -> Result<Self, MeshError> {
        let mut vertices = Vec::with_capacity(self.vertices.len());
        for (i, v) in self.vertices.iter().enumerate() {
            let norm = v.norm();
            if norm == 0.0 {
                return Err(MeshError::VertexAtOrigin(i));
            }
            vertices.push(v / norm);
        }
        Self::from_parts(vertices, self.triangles.clone())
    }

    /// Checks closedness and consistent orientation: every directed edge must
    /// occur exactly once and its reverse must occur as well.
    pub fn validate(&self) -> Result<(), MeshError> {
        let mut directed = HashSet::with_capacity(3 * self.triangles.len());
        for tri in &self.triangles {
            for k in 0..3 {
                let edge = (tri[k], tri[(k + 1) % 3]);
                if !directed.insert(edge) {
                    return Err(MeshError::Orientation {
                        from: edge.0,
                        to: edge.1,
                    });
                }
            }
        }
        for tri in &self.triangles {
            for k in 0..3 {
                let (from, to) = (tri[k], tri[(k + 1) % 3]);
                if !directed.contains(&(to, from)) {
                    return Err(MeshError::OpenEdge { from, to });
                }
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Unit outward normal of triangle `t`.
    pub fn normal(&self, t: usize) -> Point3 {
        self.normals[t]
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Corner points of triangle `t` in stored order.
    pub fn corners(&self, t: usize) -> [Point3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    /// Triangles incident to vertex `v`, in increasing order.
    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.vertex_triangles[v]
    }

    pub fn surface_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Largest edge length.
    pub fn mesh_width(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|tri| {
                (0..3).map(move |k| (self.vertices[tri[k]] - self.vertices[tri[(k + 1) % 3]]).norm())
            })
            .fold(0.0, f64::max)
    }

    /// Enclosed volume `1/6 sum <v1, v2 x v3>`; positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c]))
            })
            .sum::<f64>()
            / 6.0
    }

    /// Parses the text format and validates the surface.
    pub fn parse(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(MeshError::Parse {
            line: 1,
            message: "missing header \"V F\"".into(),
        })?;
        let counts = parse_fields::<usize>(header, 2, line)?;
        let (nv, nf) = (counts[0], counts[1]);

        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (line, l) = lines.next().ok_or(MeshError::Parse {
                line: usize::MAX,
                message: format!("expected {nv} vertices, file ended after {}", vertices.len()),
            })?;
            let c = parse_fields::<f64>(l, 3, line)?;
            vertices.push(Point3::new(c[0], c[1], c[2]));
        }
        let mut triangles = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (line, l) = lines.next().ok_or(MeshError::Parse {
                line: usize::MAX,
                message: format!("expected {nf} triangles, file ended after {}", triangles.len()),
            })?;
            let idx = parse_fields::<usize>(l, 3, line)?;
            if let Some(&bad) = idx.iter().find(|&&i| i >= nv) {
                return Err(MeshError::Parse {
                    line,
                    message: format!("vertex index {bad} out of range (mesh has {nv} vertices)"),
                });
            }
            triangles.push([idx[0], idx[1], idx[2]]);
        }
        if let Some((line, _)) = lines.next() {
            return Err(MeshError::Parse {
                line,
                message: "trailing content after the last triangle".into(),
            });
        }
        Self::new(vertices, triangles)
    }

    /// Serializes to the text format. Coordinates use the shortest decimal
    /// representation that reads back to the identical `f64`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {}", self.vertices.len(), self.triangles.len()).unwrap();
        for v in &self.vertices {
            writeln!(out, "{:?} {:?} {:?}", v.x, v.y, v.z).unwrap();
        }
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_fields<T: std::str::FromStr>(line_text: &str, count: usize, line: usize) -> Result<Vec<T>, MeshError> {
    let fields: Vec<&str> = line_text.split_whitespace().collect();
    if fields.len() != count {
        return Err(MeshError::Parse {
            line,
            message: format!("expected {count} fields, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<T>().map_err(|_| MeshError::Parse {
                line,
                message: format!("cannot parse {f:?}"),
            })
        })
        .collect()
}

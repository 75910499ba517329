//! Bounding boxes, geometric cluster trees and block trees.

use thiserror::Error;

use crate::mesh::Point3;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cannot build a cluster tree over an empty index set")]
    Empty,
    #[error("leaf size must be at least 1")]
    ZeroLeafSize,
}

/// Axis-parallel box `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub a: Point3,
    pub b: Point3,
}

impl BoundingBox {
    pub fn new(a: Point3, b: Point3) -> Self {
        debug_assert!((0..3).all(|k| a[k] <= b[k]));
        Self { a, b }
    }

    pub fn from_points(points: &[Point3]) -> Self {
        let mut a = points[0];
        let mut b = points[0];
        for p in &points[1..] {
            a = a.inf(p);
            b = b.sup(p);
        }
        Self { a, b }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            a: self.a.inf(&other.a),
            b: self.b.sup(&other.b),
        }
    }

    /// Closed containment.
    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|k| self.a[k] <= p[k] && p[k] <= self.b[k])
    }

    pub fn contains_box(&self, other: &Self) -> bool {
        self.contains(&other.a) && self.contains(&other.b)
    }

    pub fn extent(&self) -> Point3 {
        self.b - self.a
    }

    pub fn center(&self) -> Point3 {
        0.5 * (self.a + self.b)
    }

    pub fn diameter(&self) -> f64 {
        self.extent().norm()
    }

    pub fn longest_axis(&self) -> usize {
        self.extent().imax()
    }

    /// Euclidean distance between the boxes, zero if they touch.
    pub fn distance(&self, other: &Self) -> f64 {
        let gap = Point3::from_fn(|k, _| (other.a[k] - self.b[k]).max(self.a[k] - other.b[k]).max(0.0));
        gap.norm()
    }

    /// Widens axes thinner than `1e-12` times the longest extent.
    pub fn widen_degenerate(&self) -> Self {
        let e = self.extent();
        let min_width = 1e-12 * e.max().max(f64::MIN_POSITIVE);
        let mut out = *self;
        for k in 0..3 {
            if e[k] < min_width {
                let c = 0.5 * (self.a[k] + self.b[k]);
                out.a[k] = c - 0.5 * min_width;
                out.b[k] = c + 0.5 * min_width;
            }
        }
        out
    }

    pub fn inflate(&self, delta: f64) -> Self {
        let d = Point3::repeat(delta);
        Self {
            a: self.a - d,
            b: self.b + d,
        }
    }
}

/// `max(diam B_t, diam B_s) <= 2 eta dist(B_t, B_s)`.
pub fn admissible(bt: &BoundingBox, bs: &BoundingBox, eta: f64) -> bool {
    bt.diameter().max(bs.diameter()) <= 2.0 * eta * bt.distance(bs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Positions `start..end` in the permuted ordering.
    pub start: usize,
    pub end: usize,
    pub children: Option<[usize; 2]>,
    pub parent: Option<usize>,
    pub bbox: BoundingBox,
    pub depth: usize,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.end - self.start
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Binary cluster tree. Cluster 0 is the root; children always have larger
/// ids than their parent.
#[derive(Debug, Clone)]
pub struct ClusterTree {
    clusters: Vec<Cluster>,
    /// `perm[k]` is the dof at permuted position `k`.
    perm: Vec<usize>,
    leaf_size: usize,
}

impl ClusterTree {
    /// Splits recursively along the longest axis of the cluster box at the
    /// midpoint of the dof box centers until clusters have at most `leaf_size`
    /// dofs. Cluster boxes are the union of their dof boxes.
    pub fn build(boxes: &[BoundingBox], leaf_size: usize) -> Result<Self, ClusterError> {
        if boxes.is_empty() {
            return Err(ClusterError::Empty);
        }
        if leaf_size == 0 {
            return Err(ClusterError::ZeroLeafSize);
        }
        let centers: Vec<Point3> = boxes.iter().map(BoundingBox::center).collect();
        let mut tree = Self {
            clusters: Vec::new(),
            perm: (0..boxes.len()).collect(),
            leaf_size,
        };
        tree.split(boxes, &centers, 0, boxes.len(), None, 0);
        Ok(tree)
    }

    fn split(
        &mut self,
        boxes: &[BoundingBox],
        centers: &[Point3],
        start: usize,
        end: usize,
        parent: Option<usize>,
        depth: usize,
    ) -> usize {
        let idx = &mut self.perm[start..end];
        let bbox = idx[1..].iter().fold(boxes[idx[0]], |acc, &i| acc.union(&boxes[i]));
        let id = self.clusters.len();
        self.clusters.push(Cluster {
            start,
            end,
            children: None,
            parent,
            bbox,
            depth,
        });
        if end - start <= self.leaf_size {
            return id;
        }
        let axis = bbox.longest_axis();
        let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(centers[i][axis]), hi.max(centers[i][axis]))
        });
        let mid = 0.5 * (lo + hi);
        // Stable partition: centers below the midpoint first.
        let (mut left, right): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| centers[i][axis] < mid);
        let nleft = if left.is_empty() || right.is_empty() {
            // All centers coincide along the axis; fall back to a median split.
            left = idx.to_vec();
            left.sort_by(|&i, &j| centers[i][axis].total_cmp(&centers[j][axis]));
            idx.copy_from_slice(&left);
            idx.len() / 2
        } else {
            let n = left.len();
            left.extend(right);
            idx.copy_from_slice(&left);
            n
        };
        let c0 = self.split(boxes, centers, start, start + nleft, Some(id), depth + 1);
        let c1 = self.split(boxes, centers, start + nleft, end, Some(id), depth + 1);
        self.clusters[id].children = Some([c0, c1]);
        id
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn cluster(&self, id: usize) -> &Cluster {
        &self.clusters[id]
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn dof_count(&self) -> usize {
        self.perm.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Dofs of a cluster, in permuted order.
    pub fn indices(&self, id: usize) -> &[usize] {
        let c = &self.clusters[id];
        &self.perm[c.start..c.end]
    }

    pub fn depth(&self) -> usize {
        self.clusters.iter().map(|c| c.depth).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.clusters.len()).filter(|&c| self.clusters[c].is_leaf())
    }

    /// Cluster ids grouped by depth, root first.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        let mut levels = vec![Vec::new(); self.depth() + 1];
        for (id, c) in self.clusters.iter().enumerate() {
            levels[c.depth].push(id);
        }
        levels
    }

    /// Natural-order vector to permuted order.
    pub fn to_permuted(&self, x: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&i| x[i]).collect()
    }

    /// Permuted-order vector to natural order.
    pub fn to_natural(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (k, &i) in self.perm.iter().enumerate() {
            out[i] = x[k];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Farfield,
    Nearfield,
    Subdivided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub row: usize,
    pub col: usize,
    pub kind: BlockKind,
    pub children: Vec<usize>,
}

/// Block tree over a pair of cluster trees. Block 0 is the root.
#[derive(Debug, Clone)]
pub struct BlockTree {
    blocks: Vec<Block>,
    eta: f64,
}

impl BlockTree {
    pub fn build(rows: &ClusterTree, cols: &ClusterTree, eta: f64) -> Self {
        let mut tree = Self { blocks: Vec::new(), eta };
        tree.descend(rows, cols, rows.root(), cols.root());
        tree
    }

    fn descend(&mut self, rows: &ClusterTree, cols: &ClusterTree, t: usize, s: usize) -> usize {
        let ct = rows.cluster(t);
        let cs = cols.cluster(s);
        let id = self.blocks.len();
        let kind = if admissible(&ct.bbox, &cs.bbox, self.eta) {
            BlockKind::Farfield
        } else if ct.is_leaf() && cs.is_leaf() {
            BlockKind::Nearfield
        } else {
            BlockKind::Subdivided
        };
        self.blocks.push(Block {
            row: t,
            col: s,
            kind,
            children: Vec::new(),
        });
        if kind != BlockKind::Subdivided {
            return id;
        }
        let row_children: Vec<usize> = ct.children.map_or(vec![t], |c| c.to_vec());
        let col_children: Vec<usize> = cs.children.map_or(vec![s], |c| c.to_vec());
        let mut children = Vec::with_capacity(4);
        for &tc in &row_children {
            for &sc in &col_children {
                children.push(self.descend(rows, cols, tc, sc));
            }
        }
        self.blocks[id].children = children;
        id
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: usize) -> &Block {
        &self.blocks[id]
    }

    pub fn leaves(&self, kind: BlockKind) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&b| self.blocks[b].kind == kind).collect()
    }
}

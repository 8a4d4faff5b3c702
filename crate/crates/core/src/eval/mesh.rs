//! Triangle meshes and exact point-to-surface distances.

use std::cmp::Ordering;

use log::warn;

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Indexed triangle mesh. Zero-area triangles are dropped on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::InvalidInput(format!(
                "triangle {t:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        let before = triangles.len();
        let triangles: Vec<_> = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i]);
                (b - a).cross(&(c - a)).norm() > 0.0
            })
            .collect();
        if triangles.len() < before {
            warn!("skipped {} degenerate triangles", before - triangles.len());
        }
        Ok(Self { vertices, triangles })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }
}

/// Closest point on triangle `abc` to `p`, handling the face, edge and vertex regions.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    (p - closest_point_on_triangle(p, a, b, c)).norm()
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&self, o: &Aabb) -> Aabb {
        Aabb {
            lo: self.lo.inf(&o.lo),
            hi: self.hi.sup(&o.hi),
        }
    }

    fn dist2(&self, p: &Vec3) -> f64 {
        let d = (self.lo - p).sup(&(p - self.hi)).sup(&Vec3::zeros());
        d.norm_squared()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_TRIANGLES: usize = 4;

/// Bounding-volume hierarchy over the triangles of a mesh.
#[derive(Debug, Clone)]
pub struct MeshIndex<'m> {
    mesh: &'m TriangleMesh,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'m> MeshIndex<'m> {
    pub fn build(mesh: &'m TriangleMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::InvalidInput("mesh has no triangles".into()));
        }
        let mut order: Vec<usize> = (0..mesh.triangles.len()).collect();
        let centroids: Vec<Vec3> = (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                (a + b + c) / 3.0
            })
            .collect();
        let mut index = Self {
            mesh,
            order: Vec::new(),
            nodes: Vec::new(),
        };
        let n = order.len();
        index.split(&mut order, &centroids, 0, n);
        index.order = order;
        Ok(index)
    }

    fn split(&mut self, order: &mut [usize], centroids: &[Vec3], start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_TRIANGLES {
            let mut bounds = Aabb::empty();
            for &t in &order[start..end] {
                self.mesh.corners(t).iter().for_each(|p| bounds.grow(p));
            }
            self.nodes.push(Node::Leaf { bounds, start, end });
            return slot;
        }
        let mut cb = Aabb::empty();
        order[start..end].iter().for_each(|&t| cb.grow(&centroids[t]));
        let axis = (cb.hi - cb.lo).imax();
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&x, &y| {
            centroids[x][axis]
                .partial_cmp(&centroids[y][axis])
                .unwrap_or(Ordering::Equal)
                .then(x.cmp(&y))
        });
        self.nodes.push(Node::Leaf {
            bounds: Aabb::empty(),
            start: 0,
            end: 0,
        });
        let left = self.split(order, centroids, start, mid);
        let right = self.split(order, centroids, mid, end);
        let bounds = self.nodes[left].bounds().merge(self.nodes[right].bounds());
        self.nodes[slot] = Node::Inner { bounds, left, right };
        slot
    }

    /// Distance from `p` to the nearest triangle.
    pub fn distance(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if self.nodes[i].bounds().dist2(p) >= best * best {
                continue;
            }
            match &self.nodes[i] {
                Node::Leaf { start, end, .. } => {
                    for &t in &self.order[*start..*end] {
                        let [a, b, c] = self.mesh.corners(t);
                        best = best.min(point_triangle_distance(p, &a, &b, &c));
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().dist2(p);
                    let dr = self.nodes[*right].bounds().dist2(p);
                    if dl < dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best
    }
}

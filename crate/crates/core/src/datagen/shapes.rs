use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::eval::TriangleMesh;
use crate::geom::{PointCloud, Vec3};
use crate::seed;

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.35;

/// Analytic surfaces for toy datasets: unit sphere, the cube `[-1, 1]³`, and
/// a torus around the z axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Cube,
    Torus,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Sphere, Shape::Cube, Shape::Torus];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Torus => "torus",
        }
    }

    /// `n` area-uniform surface samples with exact outward normals.
    pub fn sample(self, n: usize, seed: u64) -> PointCloud {
        let mut rng = seed::rng(seed, &[self as u64]);
        let (points, normals): (Vec<Vec3>, Vec<Vec3>) =
            (0..n.max(1)).map(|_| self.sample_one(&mut rng)).unzip();
        PointCloud::with_normals(points, normals).expect("analytic normals are unit length")
    }

    fn sample_one(self, rng: &mut seed::Rng) -> (Vec3, Vec3) {
        match self {
            Shape::Sphere => loop {
                let v = Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                let len = v.norm();
                if len > 1e-12 {
                    let n = v / len;
                    return (n, n);
                }
            },
            Shape::Cube => {
                let face = rng.random_range(0..6);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                p[axis] = sign;
                let mut n = Vec3::zeros();
                n[axis] = sign;
                (p, n)
            }
            Shape::Torus => loop {
                let u = rng.random_range(0.0..TAU);
                let v = rng.random_range(0.0..TAU);
                let w: f64 = rng.random();
                let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
                if w * (TORUS_MAJOR + TORUS_MINOR) <= ring {
                    let n = Vec3::new(v.cos() * u.cos(), v.cos() * u.sin(), v.sin());
                    let p = Vec3::new(ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin());
                    return (p, n);
                }
            },
        }
    }

    /// Triangulation of the surface. The sphere and torus are fine
    /// tessellations, so distances carry a small discretization error.
    pub fn mesh(self) -> TriangleMesh {
        let (v, t) = match self {
            Shape::Sphere => icosphere(5),
            Shape::Cube => cube_mesh(),
            Shape::Torus => torus_mesh(256, 96),
        };
        TriangleMesh::new(v, t).expect("generated meshes index valid vertices")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Shape::ALL
            .into_iter()
            .find(|shape| shape.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown shape '{s}'")))
    }
}

fn cube_mesh() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let v: Vec<Vec3> = (0..8)
        .map(|i| {
            let c = |b: usize| if i >> b & 1 == 1 { 1.0 } else { -1.0 };
            Vec3::new(c(0), c(1), c(2))
        })
        .collect();
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let t = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    (v, t)
}

fn icosphere(subdivisions: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut t: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints = HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) / 2.0).normalize());
                v.len() - 1
            })
        };
        t = t
            .iter()
            .flat_map(|&[a, b, c]| {
                let ab = mid(a, b, &mut v);
                let bc = mid(b, c, &mut v);
                let ca = mid(c, a, &mut v);
                [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
            })
            .collect();
    }
    (v, t)
}

fn torus_mesh(nu: usize, nv: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let a = TAU * j as f64 / nv as f64;
            let ring = TORUS_MAJOR + TORUS_MINOR * a.cos();
            v.push(Vec3::new(ring * u.cos(), ring * u.sin(), TORUS_MINOR * a.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + j % nv;
    let t = (0..nu)
        .flat_map(|i| (0..nv).flat_map(move |j| {
            [[id(i, j), id(i + 1, j), id(i + 1, j + 1)], [id(i, j), id(i + 1, j + 1), id(i, j + 1)]]
        }))
        .collect();
    (v, t)
}

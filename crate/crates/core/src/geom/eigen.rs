use super::{Mat3, Vec3};
use crate::error::{Error, Result};

const SYMMETRY_TOLERANCE: f64 = 1e-9;
const MAX_SWEEPS: usize = 64;

/// Eigen-decomposition of a symmetric 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricEigen3 {
    /// Eigenvalues, descending.
    pub values: [f64; 3],
    /// Orthonormal eigenvectors as columns, matching `values`. Each column
    /// has its largest-magnitude component positive.
    pub vectors: Mat3,
}

impl SymmetricEigen3 {
    pub fn vector(&self, i: usize) -> Vec3 {
        self.vectors.column(i).into_owned()
    }

    pub fn reconstruct(&self) -> Mat3 {
        self.vectors * Mat3::from_diagonal(&Vec3::from(self.values)) * self.vectors.transpose()
    }
}

/// Cyclic Jacobi eigensolver for symmetric 3×3 matrices.
pub fn eigen3_symmetric(m: &Mat3) -> Result<SymmetricEigen3> {
    let scale = m.amax().max(1.0);
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
            return Err(Error::InvalidInput(format!(
                "matrix is not symmetric: m[{i}][{j}] = {}, m[{j}][{i}] = {}",
                m[(i, j)],
                m[(j, i)]
            )));
        }
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }

    let mut a = (m + m.transpose()) * 0.5;
    let mut v = Mat3::identity();
    let frob2 = a.norm_squared();
    for _ in 0..MAX_SWEEPS {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        if off <= frob2 * 1e-36 || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Mat3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= rot;
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let mut vectors = Mat3::zeros();
    let mut values = [0.0; 3];
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = a[(src, src)];
        let mut col = v.column(src).into_owned();
        if col[col.iamax()] < 0.0 {
            col = -col;
        }
        vectors.set_column(dst, &col);
    }
    Ok(SymmetricEigen3 { values, vectors })
}

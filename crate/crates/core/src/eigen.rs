//! Closed-form eigendecomposition of symmetric 3×3 matrices.
//!
//! The fast path solves the characteristic cubic trigonometrically and builds
//! eigenvectors from row cross products. When the spectrum is nearly
//! degenerate (relative cubic discriminant under `1e-12`) or the fast path
//! fails a residual check, a cyclic Jacobi sweep takes over — slower but
//! unconditionally stable, including for repeated eigenvalues.

use nalgebra::Matrix3;

use crate::geom::Vec3;

/// Symmetric 3×3 matrix stored as its six independent entries.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymMat3 {
    pub fn new(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Self {
        SymMat3 {
            xx,
            xy,
            xz,
            yy,
            yz,
            zz,
        }
    }

    /// Symmetric part is the matrix itself; off-diagonal entries are mirrored.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.xx, self.xy, self.xz, self.xy, self.yy, self.yz, self.xz, self.yz, self.zz,
        )
    }

    /// Read the six independent entries back from a full symmetric matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        SymMat3 {
            xx: m[(0, 0)],
            xy: m[(0, 1)],
            xz: m[(0, 2)],
            yy: m[(1, 1)],
            yz: m[(1, 2)],
            zz: m[(2, 2)],
        }
    }

    /// Accumulate the outer product `v·vᵀ` (used for scatter/covariance sums).
    pub fn add_outer(&mut self, v: &Vec3) {
        self.xx += v.x * v.x;
        self.xy += v.x * v.y;
        self.xz += v.x * v.z;
        self.yy += v.y * v.y;
        self.yz += v.y * v.z;
        self.zz += v.z * v.z;
    }

    pub fn scale(&self, s: f64) -> SymMat3 {
        SymMat3 {
            xx: self.xx * s,
            xy: self.xy * s,
            xz: self.xz * s,
            yy: self.yy * s,
            yz: self.yz * s,
            zz: self.zz * s,
        }
    }
}

/// Relative cubic-discriminant threshold below which the Jacobi fallback runs.
const DISCRIMINANT_REL_TOL: f64 = 1e-12;
/// Residual bound (relative to `max(1, |λ₃|)`) the fast path must meet.
const RESIDUAL_REL_TOL: f64 = 1e-9;

/// Eigenvalues in ascending order plus the matching unit eigenvectors as the
/// columns of an orthonormal matrix: `(λ, v)` with `A·v[k] = λ[k]·v[k]`.
pub fn sym_eigen3(m: &SymMat3) -> ([f64; 3], Matrix3<f64>) {
    let a = m.to_matrix();
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return ([0.0; 3], Matrix3::identity());
    }

    let q = (m.xx + m.yy + m.zz) / 3.0;
    let p1 = m.xy * m.xy + m.xz * m.xz + m.yz * m.yz;
    let p2 = (m.xx - q).powi(2) + (m.yy - q).powi(2) + (m.zz - q).powi(2) + 2.0 * p1;
    if p2.sqrt() <= 1e-14 * scale {
        // Numerically a multiple of the identity: triple eigenvalue.
        return ([q, q, q], Matrix3::identity());
    }

    let p = (p2 / 6.0).sqrt();
    let b = (a - Matrix3::from_diagonal_element(q)) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    // Roots of the reduced cubic at angles φ, φ+2π/3, φ+4π/3; with
    // φ ∈ [0, π/3] the first is the largest and the second the smallest.
    let l3 = q + 2.0 * p * phi.cos();
    let l1 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let l2 = 3.0 * q - l1 - l3;
    let evals = [l1, l2, l3];

    // Discriminant of the characteristic cubic, normalized by the spectral
    // scale: vanishes exactly when eigenvalues repeat.
    let g1 = l2 - l1;
    let g2 = l3 - l2;
    let g3 = l3 - l1;
    let s = scale.max(1.0);
    let disc_rel = (g1 * g2 * g3).powi(2) / s.powi(6);
    if disc_rel < DISCRIMINANT_REL_TOL {
        return jacobi_eigen3(&a);
    }

    // Eigenvectors for the two extreme (best separated) eigenvalues, the
    // middle one by orthogonality.
    let (v1, ok1) = null_space_direction(&a, l1);
    let (v3, ok3) = null_space_direction(&a, l3);
    if !(ok1 && ok3) {
        return jacobi_eigen3(&a);
    }
    let v3 = (v3 - v1 * v1.dot(&v3)).normalize();
    let v2 = v3.cross(&v1);
    let vecs = Matrix3::from_columns(&[v1, v2, v3]);

    let tol = RESIDUAL_REL_TOL * l3.abs().max(1.0);
    for (k, &eval) in evals.iter().enumerate() {
        let v = vecs.column(k).into_owned();
        if (a * v - v * eval).norm() > tol {
            return jacobi_eigen3(&a);
        }
    }
    (evals, vecs)
}

/// Best unit vector in the null space of `A − λI`, from the largest cross
/// product of its rows. Fails (returns `ok = false`) when all cross products
/// are tiny, i.e. the eigenvalue is (nearly) repeated.
fn null_space_direction(a: &Matrix3<f64>, lambda: f64) -> (Vec3, bool) {
    let m = a - Matrix3::from_diagonal_element(lambda);
    let r0 = Vec3::new(m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let r1 = Vec3::new(m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let r2 = Vec3::new(m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let mut best = candidates[0];
    let mut best_norm = best.norm();
    for c in &candidates[1..] {
        let n = c.norm();
        if n > best_norm {
            best = *c;
            best_norm = n;
        }
    }
    let row_scale = r0.norm().max(r1.norm()).max(r2.norm()).max(1e-300);
    if best_norm <= 1e-12 * row_scale * row_scale {
        return (Vec3::x(), false);
    }
    (best / best_norm, true)
}

/// Cyclic Jacobi diagonalization. Converges to machine precision for any
/// symmetric 3×3 input; handles repeated eigenvalues by construction.
fn jacobi_eigen3(a: &Matrix3<f64>) -> ([f64; 3], Matrix3<f64>) {
    let mut m = *a;
    let mut v = Matrix3::<f64>::identity();
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1e-300);
    for _ in 0..64 {
        let off = m[(0, 1)].abs().max(m[(0, 2)].abs()).max(m[(1, 2)].abs());
        if off <= f64::EPSILON * scale {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = m[(p, q)];
            if apq.abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Matrix3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            m = rot.transpose() * m * rot;
            // Pin symmetry against rounding.
            m[(q, p)] = m[(p, q)];
            m[(2, 0)] = m[(0, 2)];
            m[(2, 1)] = m[(1, 2)];
            v *= rot;
        }
    }
    let mut pairs = [
        (m[(0, 0)], v.column(0).into_owned()),
        (m[(1, 1)], v.column(1).into_owned()),
        (m[(2, 2)], v.column(2).into_owned()),
    ];
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let evals = [pairs[0].0, pairs[1].0, pairs[2].0];
    let vecs = Matrix3::from_columns(&[
        pairs[0].1.normalize(),
        pairs[1].1.normalize(),
        pairs[2].1.normalize(),
    ]);
    (evals, vecs)
}

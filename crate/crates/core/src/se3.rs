//! Rigid-body (SE(3)) transforms: rotation matrix + translation vector.
//!
//! Everything in this crate follows one convention: a registration transform
//! maps points expressed in the *target* frame into the *source* frame.
//! Composition is written `compose(a, b)` and applies `b` first, then `a`.

use nalgebra::{Matrix3, Unit};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud, Vec3};

/// Allowed orthonormality drift, measured as `max|R·Rᵀ − I|` and `|det R − 1|`.
/// Every `RigidTransform` in circulation satisfies this bound; `compose`
/// re-orthonormalizes whenever accumulated rounding exceeds it.
pub const ROTATION_DRIFT_TOL: f64 = 1e-9;

/// Drift beyond which an input matrix is rejected as "not a rotation" instead
/// of being snapped to the nearest one (covers hand-edited transform files
/// rounded to a few decimals, rejects sheared or scaled matrices).
const ROTATION_ACCEPT_TOL: f64 = 1e-4;

/// Rotation + translation. Apply as `p' = R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl RigidTransform {
    /// Identity transform.
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Build from parts, validating that `rotation` is a proper rotation.
    ///
    /// Drift up to `1e-4` is snapped to the nearest rotation (SVD); anything
    /// worse — including reflections — is rejected.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        for v in rotation.iter().chain(translation.iter()) {
            if !v.is_finite() {
                return Err(Error::Param("non-finite entry in transform".into()));
            }
        }
        let drift = rotation_drift(&rotation);
        let det = rotation.determinant();
        if det <= 0.0 || drift > ROTATION_ACCEPT_TOL || (det - 1.0).abs() > ROTATION_ACCEPT_TOL {
            return Err(Error::Param(format!(
                "rotation block is not a proper rotation (orthonormality drift {drift:.3e}, det {det:.6})"
            )));
        }
        let rotation = if drift > ROTATION_DRIFT_TOL || (det - 1.0).abs() > ROTATION_DRIFT_TOL {
            nearest_rotation(&rotation)
        } else {
            rotation
        };
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    /// Rotation about an arbitrary axis by `angle` radians (no translation).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        if axis.norm() < 1e-12 {
            return Err(Error::Param("rotation axis has zero length".into()));
        }
        let rot = nalgebra::Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Ok(RigidTransform {
            rotation: rot.into_inner(),
            translation: Vec3::zeros(),
        })
    }

    /// Rotation about the x axis by `angle` radians.
    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::x(), angle).unwrap()
    }

    /// Rotation about the y axis by `angle` radians.
    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::y(), angle).unwrap()
    }

    /// Rotation about the z axis by `angle` radians.
    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::z(), angle).unwrap()
    }

    /// Pure translation.
    pub fn translation_of(t: Vec3) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Internal constructor for rotations known to be orthonormal already
    /// (products of valid rotations). Still guards the drift invariant.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        let rotation = if rotation_drift(&rotation) > ROTATION_DRIFT_TOL {
            nearest_rotation(&rotation)
        } else {
            rotation
        };
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    /// `p' = R·p + t`.
    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Rotate a direction (no translation part).
    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    /// Parse a row-major 4×4 homogeneous matrix. The bottom row must equal
    /// `(0, 0, 0, 1)` within `1e-12`.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self> {
        let bottom = [m[12], m[13], m[14], m[15]];
        let expected = [0.0, 0.0, 0.0, 1.0];
        for (got, want) in bottom.iter().zip(expected.iter()) {
            if (got - want).abs() > 1e-12 {
                return Err(Error::Param(format!(
                    "homogeneous bottom row must be (0,0,0,1), got ({}, {}, {}, {})",
                    bottom[0], bottom[1], bottom[2], bottom[3]
                )));
            }
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vec3::new(m[3], m[7], m[11]);
        Self::from_parts(rotation, translation)
    }

    /// Current orthonormality drift `max(|R·Rᵀ − I|∞, |det R − 1|)`.
    pub fn drift(&self) -> f64 {
        rotation_drift(&self.rotation).max((self.rotation.determinant() - 1.0).abs())
    }
}

/// `compose(a, b)`: the transform that applies `b` first, then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    let rotation = a.rotation * b.rotation;
    let translation = a.rotation * b.translation + a.translation;
    RigidTransform::from_parts_unchecked(rotation, translation)
}

/// Exact inverse: `compose(t, invert(t))` is the identity.
pub fn invert(t: &RigidTransform) -> RigidTransform {
    let rotation = t.rotation.transpose();
    let translation = -(rotation * t.translation);
    RigidTransform::from_parts_unchecked(rotation, translation)
}

/// Transform every point (and normal, if present) of a cloud.
pub fn apply(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    let points: Vec<Point3> = cloud
        .points()
        .iter()
        .map(|p| t.transform_point(p))
        .collect();
    match cloud.normals() {
        Some(normals) => {
            let rotated: Vec<Vec3> = normals.iter().map(|n| t.rotation * n).collect();
            PointCloud::with_normals(points, rotated).expect("rotation preserves unit normals")
        }
        None => PointCloud::new(points).expect("rigid motion preserves finiteness"),
    }
}

/// Rodrigues exponential map: the rotation matrix of a rotation vector
/// (axis × angle). Uses the Taylor forms of sin θ/θ and (1 − cos θ)/θ² near
/// zero so small increments stay accurate.
pub fn so3_exp(omega: &Vec3) -> Matrix3<f64> {
    let theta_sq = omega.norm_squared();
    let hat = Matrix3::new(
        0.0, -omega.z, omega.y, //
        omega.z, 0.0, -omega.x, //
        -omega.y, omega.x, 0.0,
    );
    let (a, b) = if theta_sq < 1e-12 {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        let theta = theta_sq.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    Matrix3::identity() + hat * a + hat * hat * b
}

fn rotation_drift(r: &Matrix3<f64>) -> f64 {
    let gram = r * r.transpose();
    let mut drift: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            drift = drift.max((gram[(i, j)] - target).abs());
        }
    }
    drift
}

/// Nearest proper rotation in the Frobenius sense: `U·diag(1,1,det(U·Vᵀ))·Vᵀ`.
fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let d = (u * v_t).determinant();
    let mut fixed = u;
    if d < 0.0 {
        // Flip the column paired with the smallest singular value (svd() sorts
        // them in descending order, so that is the last one).
        for i in 0..3 {
            fixed[(i, 2)] = -fixed[(i, 2)];
        }
    }
    fixed * v_t
}

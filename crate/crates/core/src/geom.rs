//! Basic geometric containers: points and point clouds with optional normals.

use crate::error::{Error, Result};

/// 3D point with `f64` coordinates.
pub type Point3 = nalgebra::Point3<f64>;
/// 3D vector with `f64` components.
pub type Vec3 = nalgebra::Vector3<f64>;

/// How far a stored normal's length may deviate from 1.
pub const NORMAL_UNIT_TOL: f64 = 1e-6;

/// An ordered set of points, optionally carrying one unit normal per point.
///
/// Point order is meaningful: indices returned by search structures,
/// keypoint detectors and outlier filters always refer to positions in
/// `points`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    /// Cloud without normals. Coordinates must be finite.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::Param(format!("non-finite coordinate at point {i}")));
            }
        }
        Ok(PointCloud {
            points,
            normals: None,
        })
    }

    /// Cloud with one normal per point. Normals must be unit length within
    /// [`NORMAL_UNIT_TOL`].
    pub fn with_normals(points: Vec<Point3>, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::Param(format!(
                "normal count {} does not match point count {}",
                normals.len(),
                points.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            let norm = n.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > NORMAL_UNIT_TOL {
                return Err(Error::Param(format!(
                    "normal at point {i} has norm {norm}, expected 1"
                )));
            }
        }
        let mut cloud = PointCloud::new(points)?;
        cloud.normals = Some(normals);
        Ok(cloud)
    }

    /// Empty cloud (valid; searches over it are not).
    pub fn empty() -> Self {
        PointCloud {
            points: Vec::new(),
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    /// Per-point unit normals, if any were attached or estimated.
    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Attach normals after construction (same validation as `with_normals`).
    pub fn set_normals(&mut self, normals: Vec<Vec3>) -> Result<()> {
        if normals.len() != self.points.len() {
            return Err(Error::Param(format!(
                "normal count {} does not match point count {}",
                normals.len(),
                self.points.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            let norm = n.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > NORMAL_UNIT_TOL {
                return Err(Error::Param(format!(
                    "normal at point {i} has norm {norm}, expected 1"
                )));
            }
        }
        self.normals = Some(normals);
        Ok(())
    }

    /// Drop normals (used when an operation invalidates them).
    pub fn clear_normals(&mut self) {
        self.normals = None;
    }

    /// Sub-cloud keeping `indices` in the given order, carrying normals along.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let normals = self
            .normals
            .as_ref()
            .map(|ns| indices.iter().map(|&i| ns[i]).collect());
        PointCloud { points, normals }
    }

    /// Axis-aligned bounding box as (min, max). `None` for an empty cloud.
    pub fn bounding_box(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }
}

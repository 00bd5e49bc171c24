//! Cloud conditioning: voxel downsampling, statistical outlier removal, and
//! normal estimation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::eigen::{sym_eigen3, SymMat3};
use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud, Vec3};
use crate::kdtree::build_index;

/// Parameters for the standard conditioning chain (outlier removal, then
/// downsampling, then normals).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    /// Voxel edge length in meters for downsampling (> 0).
    pub voxel_size: f64,
    /// Neighbor count for statistical outlier removal (≥ 1).
    pub sor_k: usize,
    /// Standard-deviation multiplier for the outlier threshold (> 0).
    pub sor_std_mult: f64,
    /// Neighbor count for normal estimation (≥ 3).
    pub normal_k: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            voxel_size: 0.1,
            sor_k: 16,
            sor_std_mult: 2.0,
            normal_k: 20,
        }
    }
}

impl PreprocessParams {
    /// Check every field against its documented domain.
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(Error::Param(format!(
                "voxel_size must be > 0, got {}",
                self.voxel_size
            )));
        }
        if self.sor_k < 1 {
            return Err(Error::Param("sor_k must be ≥ 1".to_string()));
        }
        if !(self.sor_std_mult.is_finite() && self.sor_std_mult > 0.0) {
            return Err(Error::Param(format!(
                "sor_std_mult must be > 0, got {}",
                self.sor_std_mult
            )));
        }
        if self.normal_k < 3 {
            return Err(Error::Param("normal_k must be ≥ 3".to_string()));
        }
        Ok(())
    }
}

/// Integer voxel key of a point; ordering is z-major, then y, then x.
#[inline]
fn voxel_key(p: &Point3, s: f64) -> (i64, i64, i64) {
    (
        (p.z / s).floor() as i64,
        (p.y / s).floor() as i64,
        (p.x / s).floor() as i64,
    )
}

/// Replace each occupied voxel by the centroid of its points. Output is
/// ordered by ascending voxel key (z-major, then y, then x). Normals are
/// dropped: a centroid has no well-defined input normal.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size.is_finite() && voxel_size > 0.0) {
        return Err(Error::Param(format!(
            "voxel_size must be > 0, got {voxel_size}"
        )));
    }
    let mut cells: BTreeMap<(i64, i64, i64), (Vec3, usize)> = BTreeMap::new();
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        let entry = cells
            .entry(voxel_key(&p, voxel_size))
            .or_insert((Vec3::zeros(), 0));
        entry.0 += p.coords;
        entry.1 += 1;
    }
    let points: Vec<Point3> = cells
        .values()
        .map(|(sum, n)| Point3::from(sum / *n as f64))
        .collect();
    PointCloud::new(points)
}

/// Remove points whose mean distance to their `k` nearest neighbors
/// (excluding the point itself) exceeds `μ + std_mult·σ`, where μ and σ are
/// the mean and (population) standard deviation of that statistic over the
/// whole cloud. Returns the surviving cloud (order and normals preserved)
/// and the removed indices in ascending order.
pub fn remove_statistical_outliers(
    cloud: &PointCloud,
    k: usize,
    std_mult: f64,
) -> Result<(PointCloud, Vec<usize>)> {
    if k < 1 {
        return Err(Error::Param("outlier removal needs k ≥ 1".to_string()));
    }
    if !(std_mult.is_finite() && std_mult > 0.0) {
        return Err(Error::Param(format!(
            "std_mult must be > 0, got {std_mult}"
        )));
    }
    let n = cloud.len();
    if n <= k {
        return Err(Error::Param(format!(
            "outlier removal needs more than k={k} points, cloud has {n}"
        )));
    }
    let index = build_index(cloud)?;
    let mut mean_dist = Vec::with_capacity(n);
    for i in 0..n {
        // Query k+1 and drop the self hit so exactly k true neighbors remain.
        let mut hits = index.nearest(&cloud.point(i), k + 1);
        if let Some(pos) = hits.iter().position(|&(idx, _)| idx == i) {
            hits.remove(pos);
        }
        hits.truncate(k);
        let sum: f64 = hits.iter().map(|&(_, d)| d).sum();
        mean_dist.push(sum / k as f64);
    }
    let mu: f64 = mean_dist.iter().sum::<f64>() / n as f64;
    let var: f64 = mean_dist.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n as f64;
    let threshold = mu + std_mult * var.sqrt();

    let mut keep = Vec::with_capacity(n);
    let mut removed = Vec::new();
    for (i, &d) in mean_dist.iter().enumerate() {
        if d > threshold {
            removed.push(i);
        } else {
            keep.push(i);
        }
    }
    Ok((cloud.select(&keep), removed))
}

/// Estimate a unit normal per point as the smallest-eigenvalue eigenvector
/// of the covariance of its `k` nearest neighbors (the query point counts as
/// its own nearest neighbor). Signs are made deterministic: toward
/// `viewpoint` when given (`n·(viewpoint − p) ≥ 0`), otherwise the component
/// of largest magnitude is made positive.
pub fn estimate_normals(
    cloud: &PointCloud,
    k: usize,
    viewpoint: Option<Point3>,
) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::Param(format!(
            "normal estimation needs k ≥ 3, got {k}"
        )));
    }
    if cloud.len() < k {
        return Err(Error::Param(format!(
            "normal estimation needs at least k={k} points, cloud has {}",
            cloud.len()
        )));
    }
    let index = build_index(cloud)?;
    let mut normals = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        let hits = index.nearest(&p, k);
        let mut centroid = Vec3::zeros();
        for &(j, _) in &hits {
            centroid += cloud.point(j).coords;
        }
        centroid /= hits.len() as f64;
        let mut scatter = SymMat3::default();
        for &(j, _) in &hits {
            scatter.add_outer(&(cloud.point(j).coords - centroid));
        }
        let (_, vectors) = sym_eigen3(&scatter);
        let mut normal: Vec3 = vectors.column(0).into_owned();
        let norm = normal.norm();
        if norm > 0.0 {
            normal /= norm;
        } else {
            normal = Vec3::z();
        }
        let flip = match viewpoint {
            Some(vp) => normal.dot(&(vp - p)) < 0.0,
            None => {
                let mut axis = 0;
                for a in 1..3 {
                    if normal[a].abs() > normal[axis].abs() {
                        axis = a;
                    }
                }
                normal[axis] < 0.0
            }
        };
        if flip {
            normal = -normal;
        }
        normals.push(normal);
    }
    PointCloud::with_normals(cloud.points().to_vec(), normals)
}

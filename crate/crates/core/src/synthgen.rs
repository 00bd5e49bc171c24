//! Ground-truthed synthetic tunnel scenes.
//!
//! Generates half-cylindrical tunnel surfaces (arched wall plus flat
//! floor, optional side-tunnel junctions) with procedural wall roughness
//! and analytic surface normals, then derives degraded registration pairs
//! with a known rigid offset: axial overlap cropping, point dropout,
//! Gaussian sensor noise, and uniform dust clutter.
//!
//! Everything is deterministic per seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud, Vec3};
use crate::se3::{self, RigidTransform};

/// Tunnel scene description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Tunnel length along x, meters (> 0).
    pub tunnel_length: f64,
    /// Arch radius, meters (> 0).
    pub radius: f64,
    /// Wall roughness amplitude, meters (≥ 0); displacement along the
    /// local surface normal.
    pub roughness: f64,
    /// Surface sampling density, points per square meter (> 0).
    pub density: f64,
    /// Number of side-tunnel junctions (alternating sides along x).
    pub junction_count: usize,
    pub seed: u64,
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tunnel_length.is_finite() && self.tunnel_length > 0.0) {
            return Err(Error::Param(format!(
                "scene tunnel_length must be > 0, got {}",
                self.tunnel_length
            )));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::Param(format!(
                "scene radius must be > 0, got {}",
                self.radius
            )));
        }
        if !(self.roughness.is_finite() && self.roughness >= 0.0) {
            return Err(Error::Param(format!(
                "scene roughness must be ≥ 0, got {}",
                self.roughness
            )));
        }
        if !(self.density.is_finite() && self.density > 0.0) {
            return Err(Error::Param(format!(
                "scene density must be > 0, got {}",
                self.density
            )));
        }
        Ok(())
    }
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            tunnel_length: 24.0,
            radius: 2.5,
            roughness: 0.08,
            density: 65.0,
            junction_count: 2,
            seed: 0,
        }
    }
}

/// How a registration pair is degraded relative to the pristine scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    /// Per-component Gaussian sensor noise σ, meters (≥ 0).
    pub noise_sigma: f64,
    /// Fraction of the target rebuilt as uniform dust clutter, in [0, 1).
    pub dust_fraction: f64,
    /// Fraction of cropped points randomly discarded, in [0, 1).
    pub dropout_fraction: f64,
    /// Fraction of the tunnel length shared by source and target, in (0, 1].
    pub overlap_fraction: f64,
}

impl DegradationParams {
    /// No noise, no dust, no dropout, full overlap.
    pub fn none() -> Self {
        DegradationParams {
            noise_sigma: 0.0,
            dust_fraction: 0.0,
            dropout_fraction: 0.0,
            overlap_fraction: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Param(format!(
                "degradation noise_sigma must be ≥ 0, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.dust_fraction) {
            return Err(Error::Param(format!(
                "degradation dust_fraction must be in [0,1), got {}",
                self.dust_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_fraction) {
            return Err(Error::Param(format!(
                "degradation dropout_fraction must be in [0,1), got {}",
                self.dropout_fraction
            )));
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction <= 1.0) {
            return Err(Error::Param(format!(
                "degradation overlap_fraction must be in (0,1], got {}",
                self.overlap_fraction
            )));
        }
        Ok(())
    }
}

/// Integer-lattice hash → pseudo-random value in [−1, 1]. Pure integer
/// mixing, so results are identical across platforms.
fn lattice_value(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let mut h = seed
        ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (iz as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    // splitmix64 finalizer.
    h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / ((1u64 << 53) as f64) * 2.0 - 1.0
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinearly interpolated lattice value noise in [−1, 1].
fn value_noise(p: &Point3, seed: u64) -> f64 {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (
        smoothstep(p.x - fx),
        smoothstep(p.y - fy),
        smoothstep(p.z - fz),
    );
    let mut acc = 0.0;
    for dz in 0..2i64 {
        for dy in 0..2i64 {
            for dx in 0..2i64 {
                let v = lattice_value(ix + dx, iy + dy, iz + dz, seed);
                let w = (if dx == 1 { tx } else { 1.0 - tx })
                    * (if dy == 1 { ty } else { 1.0 - ty })
                    * (if dz == 1 { tz } else { 1.0 - tz });
                acc += v * w;
            }
        }
    }
    acc
}

/// Two-octave value noise used for wall roughness, in [−1, 1].
fn roughness_noise(p: &Point3, seed: u64) -> f64 {
    let coarse = value_noise(&Point3::new(p.x / 0.8, p.y / 0.8, p.z / 0.8), seed);
    let fine = value_noise(
        &Point3::new(p.x / 0.4, p.y / 0.4, p.z / 0.4),
        seed ^ 0xA5A5_A5A5_A5A5_A5A5,
    );
    0.75 * coarse + 0.25 * fine
}

/// One sampled surface patch before carving: base position on the analytic
/// surface and its inward unit normal.
struct Sample {
    base: Point3,
    normal: Vec3,
}

struct Junction {
    x_center: f64,
    /// +1.0 for the +y side, −1.0 for the −y side.
    side: f64,
    radius: f64,
    /// Side-tunnel axis runs from |y| = y_start to |y| = y_start + length.
    y_start: f64,
    length: f64,
}

fn junction_layout(params: &SceneParams, rng: &mut ChaCha8Rng) -> Vec<Junction> {
    let r_j = 0.45 * params.radius;
    let mut junctions = Vec::new();
    for k in 0..params.junction_count {
        let slot = params.tunnel_length * (k as f64 + 0.5) / params.junction_count as f64;
        let jitter =
            0.3 * params.tunnel_length / params.junction_count as f64 * rng.random_range(-0.5..0.5);
        let margin = r_j + 0.5;
        let x_center = (slot + jitter).clamp(margin, params.tunnel_length - margin);
        junctions.push(Junction {
            x_center,
            side: if k % 2 == 0 { 1.0 } else { -1.0 },
            radius: r_j,
            y_start: 0.8 * params.radius,
            length: 4.0 * r_j,
        });
    }
    junctions
}

/// Generate a tunnel scene: a half-cylindrical arch over a flat floor,
/// optional side tunnels, seeded roughness displacement along the local
/// normal, and analytic normals attached. Deterministic per seed.
pub fn generate_scene(params: &SceneParams) -> Result<PointCloud> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let junctions = junction_layout(params, &mut rng);
    let (l, r) = (params.tunnel_length, params.radius);
    let mut samples: Vec<Sample> = Vec::new();

    // Main arch: x along the axis, ψ sweeping the half circle. The surface
    // is developable, so uniform (x, ψ) sampling is uniform by area.
    let arch_count = (params.density * std::f64::consts::PI * r * l).round() as usize;
    for _ in 0..arch_count {
        let x = rng.random_range(0.0..l);
        let psi = rng.random_range(0.0..std::f64::consts::PI);
        let base = Point3::new(x, r * psi.cos(), r * psi.sin());
        let normal = Vec3::new(0.0, -psi.cos(), -psi.sin());
        let inside_side_tunnel = junctions.iter().any(|j| {
            base.y * j.side > 0.0
                && ((base.x - j.x_center).powi(2) + base.z.powi(2)) < j.radius.powi(2)
        });
        if !inside_side_tunnel {
            samples.push(Sample { base, normal });
        }
    }

    // Main floor at z = 0 (kept continuous through junction openings).
    let floor_count = (params.density * 2.0 * r * l).round() as usize;
    for _ in 0..floor_count {
        let base = Point3::new(rng.random_range(0.0..l), rng.random_range(-r..r), 0.0);
        samples.push(Sample {
            base,
            normal: Vec3::z(),
        });
    }

    // Side tunnels: arches with axes along ±y plus their own floor strips;
    // the stretch piercing the main tunnel's interior is carved away.
    for j in &junctions {
        let arch_count =
            (params.density * std::f64::consts::PI * j.radius * j.length).round() as usize;
        for _ in 0..arch_count {
            let along = rng.random_range(j.y_start..j.y_start + j.length);
            let psi = rng.random_range(0.0..std::f64::consts::PI);
            let base = Point3::new(
                j.x_center + j.radius * psi.cos(),
                j.side * along,
                j.radius * psi.sin(),
            );
            let normal = Vec3::new(-psi.cos(), 0.0, -psi.sin());
            if base.y.powi(2) + base.z.powi(2) >= r * r {
                samples.push(Sample { base, normal });
            }
        }
        let floor_count = (params.density * 2.0 * j.radius * j.length).round() as usize;
        for _ in 0..floor_count {
            let base = Point3::new(
                j.x_center + rng.random_range(-j.radius..j.radius),
                j.side * rng.random_range(j.y_start..j.y_start + j.length),
                0.0,
            );
            if base.y.abs() >= r {
                samples.push(Sample {
                    base,
                    normal: Vec3::z(),
                });
            }
        }
    }

    let mut points = Vec::with_capacity(samples.len());
    let mut normals = Vec::with_capacity(samples.len());
    for s in samples {
        let displacement = if params.roughness > 0.0 {
            params.roughness * roughness_noise(&s.base, params.seed)
        } else {
            0.0
        };
        points.push(s.base + s.normal * displacement);
        normals.push(s.normal);
    }
    PointCloud::with_normals(points, normals)
}

/// Derive a degraded registration pair from a scene. The source keeps the
/// whole scene; the target is the trailing axial crop covering
/// `overlap_fraction` of the x extent, mapped out of the source frame by
/// `invert(truth)` (so an estimator should recover exactly `truth`), then
/// degraded: random dropout, per-component Gaussian noise, and uniform
/// dust points within the target's bounding box. The target carries no
/// normals. Deterministic per seed.
pub fn make_pair(
    scene: &PointCloud,
    truth: &RigidTransform,
    degradation: &DegradationParams,
    seed: u64,
) -> Result<(PointCloud, PointCloud, RigidTransform)> {
    degradation.validate()?;
    if scene.is_empty() {
        return Err(Error::EmptyInput("make_pair needs a non-empty scene"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (min, max) = scene
        .bounding_box()
        .expect("non-empty cloud has a bounding box");
    let x_cut = min.x + (1.0 - degradation.overlap_fraction) * (max.x - min.x);

    let mut kept: Vec<usize> = (0..scene.len())
        .filter(|&i| scene.point(i).x >= x_cut)
        .collect();
    if kept.is_empty() {
        return Err(Error::Param(format!(
            "overlap fraction {} leaves an empty crop",
            degradation.overlap_fraction
        )));
    }

    // Exact-count dropout: shuffle, truncate, restore ascending order.
    let n_drop = (degradation.dropout_fraction * kept.len() as f64).round() as usize;
    if n_drop > 0 {
        kept.shuffle(&mut rng);
        kept.truncate(kept.len() - n_drop);
        kept.sort_unstable();
    }
    if kept.is_empty() {
        return Err(Error::Param(
            "dropout removed every cropped point".to_string(),
        ));
    }

    let out = se3::invert(truth);
    let mut target_pts: Vec<Point3> = kept
        .iter()
        .map(|&i| out.transform_point(&scene.point(i)))
        .collect();

    if degradation.noise_sigma > 0.0 {
        for p in &mut target_pts {
            *p += Vec3::new(
                degradation.noise_sigma * rng.sample::<f64, _>(StandardNormal),
                degradation.noise_sigma * rng.sample::<f64, _>(StandardNormal),
                degradation.noise_sigma * rng.sample::<f64, _>(StandardNormal),
            );
        }
    }

    let n_dust = (degradation.dust_fraction * target_pts.len() as f64).round() as usize;
    if n_dust > 0 {
        let (mut lo, mut hi) = (target_pts[0], target_pts[0]);
        for p in &target_pts {
            lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        for _ in 0..n_dust {
            target_pts.push(Point3::new(
                rng.random_range(lo.x..=hi.x),
                rng.random_range(lo.y..=hi.y),
                rng.random_range(lo.z..=hi.z),
            ));
        }
    }

    let source = scene.clone();
    let target = PointCloud::new(target_pts)?;
    Ok((source, target, *truth))
}

/// Pose discrepancy between an estimate and the ground truth: the geodesic
/// rotation angle in degrees and the Euclidean translation gap in meters.
pub fn pose_error(estimate: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
    let rel = estimate.rotation().transpose() * truth.rotation();
    let angle = ((rel.trace() - 1.0) / 2.0)
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees();
    let translation = (estimate.translation() - truth.translation()).norm();
    (angle, translation)
}

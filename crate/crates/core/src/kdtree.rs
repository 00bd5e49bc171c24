//! Deterministic kd-tree over 3D points.
//!
//! Results are defined to be *identical* to a brute-force linear scan using
//! the same distance expression (`sqrt(dx·dx + dy·dy + dz·dz)`): same
//! indices, same order, bit-equal distances. All comparisons — ordering,
//! ties, and the inclusive radius test `d ≤ r` — use that computed distance,
//! so a query at exactly the radius (e.g. cube corners from the center) is
//! included. Equal distances are ordered by lower point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

#[derive(Debug, Clone)]
struct Node {
    point: Point3,
    index: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Balanced kd-tree; build once, query many times. Indices returned by
/// queries refer to the cloud the index was built from.
#[derive(Debug, Clone)]
pub struct KdIndex {
    nodes: Vec<Node>,
    root: i32,
    len: usize,
}

/// Euclidean distance, written out so the linear-scan oracle in the tests can
/// reproduce it operation-for-operation.
#[inline]
fn dist(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Candidate ordered by `(distance, index)` — the crate-wide tie-breaking
/// rule.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d: f64,
    index: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d
            .total_cmp(&other.d)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Build a [`KdIndex`] over the cloud's points.
pub fn build_index(cloud: &PointCloud) -> Result<KdIndex> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput(
            "cannot build a search index over an empty cloud",
        ));
    }
    let mut items: Vec<(Point3, u32)> = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| (*p, i as u32))
        .collect();
    let mut nodes = Vec::with_capacity(items.len());
    let root = build_recursive(&mut items, &mut nodes);
    Ok(KdIndex {
        nodes,
        root,
        len: cloud.len(),
    })
}

fn build_recursive(items: &mut [(Point3, u32)], nodes: &mut Vec<Node>) -> i32 {
    if items.is_empty() {
        return -1;
    }
    // Split along the axis with the largest extent (ties: lower axis).
    let mut lo = items[0].0;
    let mut hi = items[0].0;
    for (p, _) in items.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut axis = 0usize;
    let mut extent = hi[0] - lo[0];
    for a in 1..3 {
        if hi[a] - lo[a] > extent {
            extent = hi[a] - lo[a];
            axis = a;
        }
    }
    items.sort_unstable_by(|a, b| a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1)));
    let mid = items.len() / 2;
    let (point, index) = items[mid];
    let id = nodes.len() as i32;
    nodes.push(Node {
        point,
        index,
        axis: axis as u8,
        left: -1,
        right: -1,
    });
    let left = build_recursive(&mut items[..mid], nodes);
    // Split the borrow so the right half can be rebuilt in place.
    let right = build_recursive(&mut items[mid + 1..], nodes);
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    id
}

impl KdIndex {
    /// Number of indexed points.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The `k` nearest points to `query` as `(index, distance)`, ascending by
    /// distance with ties broken by lower index. Asking for more points than
    /// the index holds truncates the result instead of failing.
    pub fn nearest(&self, query: &Point3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.nearest_recursive(self.root, query, k, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (c.index as usize, c.d))
            .collect()
    }

    fn nearest_recursive(
        &self,
        node: i32,
        query: &Point3,
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let cand = Candidate {
            d: dist(query, &n.point),
            index: n.index,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("non-empty heap") {
            heap.push(cand);
            heap.pop();
        }
        let diff = query[n.axis as usize] - n.point[n.axis as usize];
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.nearest_recursive(near, query, k, heap);
        // Cross the splitting plane when the heap is short or when a far-side
        // point could still tie the current worst (inclusive: an equidistant
        // point with a lower index must win). `sqrt(diff·diff)` is a lower
        // bound for the computed distance of any far-side point.
        let must_visit =
            heap.len() < k || (diff * diff).sqrt() <= heap.peek().expect("non-empty heap").d;
        if must_visit {
            self.nearest_recursive(far, query, k, heap);
        }
    }

    /// Every point with computed distance `≤ radius` (inclusive), ascending
    /// by distance with ties broken by lower index.
    pub fn radius_search(&self, query: &Point3, radius: f64) -> Vec<(usize, f64)> {
        if radius <= 0.0 {
            return Vec::new();
        }
        let mut hits: Vec<Candidate> = Vec::new();
        self.radius_recursive(self.root, query, radius, &mut hits);
        hits.sort_unstable();
        hits.into_iter().map(|c| (c.index as usize, c.d)).collect()
    }

    fn radius_recursive(&self, node: i32, query: &Point3, radius: f64, hits: &mut Vec<Candidate>) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let d = dist(query, &n.point);
        if d <= radius {
            hits.push(Candidate { d, index: n.index });
        }
        let diff = query[n.axis as usize] - n.point[n.axis as usize];
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.radius_recursive(near, query, radius, hits);
        if (diff * diff).sqrt() <= radius {
            self.radius_recursive(far, query, radius, hits);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force reference with the exact same arithmetic as the tree.
    fn linear_nearest(points: &[Point3], query: &Point3, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let dx = query.x - p.x;
                let dy = query.y - p.y;
                let dz = query.z - p.z;
                ((dx * dx + dy * dy + dz * dz).sqrt(), i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn linear_radius(points: &[Point3], query: &Point3, radius: f64) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let dx = query.x - p.x;
                let dy = query.y - p.y;
                let dz = query.z - p.z;
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                (d <= radius).then_some((d, i))
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn exact_eq(a: &[(usize, f64)], b: &[(usize, f64)]) -> bool {
        a.len() == b.len()
            && a.iter()
                .zip(b.iter())
                .all(|(x, y)| x.0 == y.0 && x.1.to_bits() == y.1.to_bits())
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-10.0..10.0),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn matches_linear_scan_exactly() {
        let cloud = random_cloud(500, 1);
        let index = build_index(&cloud).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let q = Point3::new(
                rng.random_range(-12.0..12.0),
                rng.random_range(-12.0..12.0),
                rng.random_range(-12.0..12.0),
            );
            for k in [1, 4, 17] {
                assert!(exact_eq(
                    &index.nearest(&q, k),
                    &linear_nearest(cloud.points(), &q, k)
                ));
            }
            for r in [0.5, 2.5, 8.0] {
                assert!(exact_eq(
                    &index.radius_search(&q, r),
                    &linear_radius(cloud.points(), &q, r)
                ));
            }
        }
    }

    #[test]
    fn grid_cloud_with_exact_ties_matches_linear_scan() {
        // Integer grid: many exactly equidistant neighbors and queries that
        // sit exactly on splitting planes.
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..3 {
                    pts.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let cloud = PointCloud::new(pts).unwrap();
        let index = build_index(&cloud).unwrap();
        for q in [
            Point3::new(2.0, 3.0, 1.0),
            Point3::new(2.5, 2.5, 0.5),
            Point3::new(0.0, 0.0, 0.0),
        ] {
            for k in [1, 6, 27] {
                assert!(exact_eq(
                    &index.nearest(&q, k),
                    &linear_nearest(cloud.points(), &q, k)
                ));
            }
            for r in [1.0, 2.0, 3.0] {
                assert!(exact_eq(
                    &index.radius_search(&q, r),
                    &linear_radius(cloud.points(), &q, r)
                ));
            }
        }
    }

    #[test]
    fn equidistant_points_prefer_lower_index() {
        let cloud = PointCloud::new(vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
        ])
        .unwrap();
        let index = build_index(&cloud).unwrap();
        let hits = index.nearest(&Point3::origin(), 1);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, 0);
    }

    #[test]
    fn coincident_points_order_by_index() {
        let cloud = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0); 10]).unwrap();
        let index = build_index(&cloud).unwrap();
        let hits = index.nearest(&Point3::origin(), 3);
        let ids: Vec<usize> = hits.iter().map(|h| h.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn cube_corner_radius_search_returns_all_corners() {
        // All 8 corners of the unit cube sit exactly half a diagonal from the
        // center, so an inclusive radius search at that radius finds them all,
        // ordered by index.
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(Point3::new(x, y, z));
                }
            }
        }
        let cloud = PointCloud::new(pts).unwrap();
        let index = build_index(&cloud).unwrap();
        let center = Point3::new(0.5, 0.5, 0.5);
        let hits = index.radius_search(&center, 0.75f64.sqrt());
        assert_eq!(hits.len(), 8);
        let ids: Vec<usize> = hits.iter().map(|h| h.0).collect();
        assert_eq!(ids, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn k_larger_than_cloud_truncates() {
        let cloud = random_cloud(5, 3);
        let index = build_index(&cloud).unwrap();
        assert_eq!(index.nearest(&Point3::origin(), 50).len(), 5);
    }

    #[test]
    fn empty_cloud_is_rejected() {
        assert!(matches!(
            build_index(&PointCloud::empty()),
            Err(Error::EmptyInput(_))
        ));
    }
}

//! Nearest-neighbour queries over 3D point sets.

use std::num::NonZeroUsize;

use kiddo::{ImmutableKdTree, SquaredEuclidean};

use crate::math::Vec3;

/// Static k-d tree over a point cloud.
pub struct PointIndex {
    tree: ImmutableKdTree<f64, 3>,
    len: usize,
}

impl PointIndex {
    /// Returns `None` for an empty cloud.
    pub fn new(points: &[Vec3]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let entries: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = ImmutableKdTree::new_from_slice(&entries).ok()?;
        Some(Self { tree, len: points.len() })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index and squared distance of the closest point.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let r = self.tree.query(&[q.x, q.y, q.z]).nearest_one::<SquaredEuclidean<f64>>().execute();
        (r.item as usize, r.distance)
    }

    /// Up to `k` closest points as `(index, squared distance)`, ordered by
    /// distance then index.
    pub fn nearest_n(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let Some(k) = NonZeroUsize::new(k.min(self.len)) else {
            return Vec::new();
        };
        let mut out: Vec<(usize, f64)> = self
            .tree
            .query(&[q.x, q.y, q.z])
            .nearest_n::<SquaredEuclidean<f64>>(k)
            .execute()
            .into_iter()
            .map(|r| (r.item as usize, r.distance))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }
}

/// For every point, the indices of its `k` nearest other points (self
/// excluded), closest first. Rows are shorter when the cloud has fewer than
/// `k + 1` points.
pub fn knn_graph(points: &[Vec3], k: usize) -> Vec<Vec<usize>> {
    let Some(index) = PointIndex::new(points) else {
        return Vec::new();
    };
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row: Vec<usize> =
                index.nearest_n(p, k + 1).into_iter().map(|(j, _)| j).filter(|&j| j != i).collect();
            row.truncate(k);
            row
        })
        .collect()
}

/// Mean distance from each point to its nearest other point.
pub fn mean_nn_spacing(points: &[Vec3]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let graph = knn_graph(points, 1);
    let total: f64 = graph.iter().enumerate().map(|(i, row)| (points[i] - points[row[0]]).norm()).sum();
    Some(total / points.len() as f64)
}

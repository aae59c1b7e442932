//! Feature map storage and correspondence search.
//!
//! The map keeps one voxelized cloud per feature kind, each with a k-d tree.
//! A query point (already in the world frame) is explained by a local plane
//! or line fitted to its `k` nearest map neighbours.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::features::{FeatureKind, FeaturePoint};
use crate::geometry::Pose;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree over a point list. Neighbours are ordered by distance,
/// equal distances by insertion index.
#[derive(Debug, Clone, Default)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: Vec<Vector3<f64>>) -> Self {
        let mut tree = KdTree {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            tree.build_node(0, tree.points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &self.order[start..end];
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in slice {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    /// The `k` nearest points to `query`, closest first.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, k, &mut best);
        }
        best
    }

    fn search(&self, node: usize, query: &Vector3<f64>, k: usize, best: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let candidate = Neighbor {
                        index,
                        dist_sq: (self.points[index] - query).norm_squared(),
                    };
                    if best.len() == k && !precedes(&candidate, &best[k - 1]) {
                        continue;
                    }
                    let at = best.partition_point(|n| precedes(n, &candidate));
                    best.insert(at, candidate);
                    best.truncate(k);
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, best);
                // Equal distances must still be visited for the index tie-break.
                if best.len() < k || diff * diff <= best[k - 1].dist_sq {
                    self.search(far, query, k, best);
                }
            }
        }
    }
}

fn precedes(a: &Neighbor, b: &Neighbor) -> bool {
    (a.dist_sq, a.index) < (b.dist_sq, b.index)
}

pub fn build_map_index(points: Vec<Vector3<f64>>) -> KdTree {
    KdTree::build(points)
}

/// Voxel-averaged point cloud with a spatial index.
#[derive(Debug, Clone, Default)]
pub struct VoxelCloud {
    resolution: f64,
    cells: BTreeMap<[i64; 3], (Vector3<f64>, usize)>,
    raw: Vec<Vector3<f64>>,
    index: KdTree,
}

impl VoxelCloud {
    /// `resolution == 0` stores points verbatim.
    pub fn new(resolution: f64) -> Self {
        Self {
            resolution,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, points: impl IntoIterator<Item = Vector3<f64>>) {
        if self.resolution > 0.0 {
            for p in points {
                let key = [
                    (p.x / self.resolution).floor() as i64,
                    (p.y / self.resolution).floor() as i64,
                    (p.z / self.resolution).floor() as i64,
                ];
                let cell = self.cells.entry(key).or_insert((Vector3::zeros(), 0));
                cell.0 += p;
                cell.1 += 1;
            }
            let centroids = self.cells.values().map(|(s, n)| s / *n as f64).collect();
            self.index = KdTree::build(centroids);
        } else {
            self.raw.extend(points);
            self.index = KdTree::build(self.raw.clone());
        }
    }

    pub fn index(&self) -> &KdTree {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// World-frame edge and planar map.
#[derive(Debug, Clone, Default)]
pub struct FeatureMap {
    pub edges: VoxelCloud,
    pub planes: VoxelCloud,
}

impl FeatureMap {
    pub fn new(edge_resolution: f64, planar_resolution: f64) -> Self {
        Self {
            edges: VoxelCloud::new(edge_resolution),
            planes: VoxelCloud::new(planar_resolution),
        }
    }

    /// Transforms sensor-frame features by `pose` and inserts them.
    pub fn insert_features(&mut self, features: &[FeaturePoint], pose: &Pose) {
        let world = |kind| {
            features
                .iter()
                .filter(move |f| f.kind == kind)
                .map(|f| pose.transform_point(&f.position))
                .collect::<Vec<_>>()
        };
        let (edges, planes) = (world(FeatureKind::Edge), world(FeatureKind::Planar));
        if !edges.is_empty() {
            self.edges.insert(edges);
        }
        if !planes.is_empty() {
            self.planes.insert(planes);
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len() + self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssocConfig {
    pub k: usize,
    pub max_dist: f64,
    /// Largest allowed distance of a supporting point from its fitted plane.
    pub planarity: f64,
    /// Minimum ratio of largest to middle scatter eigenvalue for a line.
    pub linearity_ratio: f64,
}

impl Default for AssocConfig {
    fn default() -> Self {
        Self {
            k: 5,
            max_dist: 1.0,
            planarity: 0.2,
            linearity_ratio: 3.0,
        }
    }
}

/// Plane `wᵀx + d = 0` with unit normal `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneModel {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl PlaneModel {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineModel {
    pub point_on_line: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl LineModel {
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        let v = p - self.point_on_line;
        (v - self.direction * self.direction.dot(&v)).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometricModel {
    Plane(PlaneModel),
    Line(LineModel),
}

/// Centroid and eigen-decomposition of the neighbours' scatter, with
/// eigenpairs sorted ascending.
fn scatter(index: &KdTree, neighbors: &[Neighbor]) -> (Vector3<f64>, [f64; 3], Matrix3<f64>) {
    let n = neighbors.len() as f64;
    let centroid = neighbors.iter().map(|nb| index.point(nb.index)).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for nb in neighbors {
        let d = index.point(nb.index) - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.map(|i| eig.eigenvalues[i]);
    let vectors = Matrix3::from_columns(&order.map(|i| eig.eigenvectors.column(i).into_owned()));
    (centroid, values, vectors)
}

fn gated_neighbors(index: &KdTree, query: &Vector3<f64>, k: usize, max_dist: f64) -> Option<Vec<Neighbor>> {
    if k == 0 || index.len() < k {
        return None;
    }
    let neighbors = index.knn(query, k);
    (neighbors[k - 1].dist_sq <= max_dist * max_dist).then_some(neighbors)
}

pub fn find_planar_correspondence(map: &FeatureMap, p_world: &Vector3<f64>, config: &AssocConfig) -> Option<PlaneModel> {
    let index = map.planes.index();
    let neighbors = gated_neighbors(index, p_world, config.k.max(3), config.max_dist)?;
    let (centroid, _, vectors) = scatter(index, &neighbors);
    let mut normal = vectors.column(0).normalize();
    let mut offset = -normal.dot(&centroid);
    if normal.dot(p_world) + offset < 0.0 {
        normal = -normal;
        offset = -offset;
    }
    let plane = PlaneModel { normal, offset };
    neighbors
        .iter()
        .all(|nb| plane.signed_distance(index.point(nb.index)).abs() <= config.planarity)
        .then_some(plane)
}

pub fn find_edge_correspondence(map: &FeatureMap, p_world: &Vector3<f64>, config: &AssocConfig) -> Option<LineModel> {
    let index = map.edges.index();
    let neighbors = gated_neighbors(index, p_world, config.k.max(2), config.max_dist)?;
    let (centroid, values, vectors) = scatter(index, &neighbors);
    if values[2] < config.linearity_ratio * values[1] || values[2] <= 0.0 {
        return None;
    }
    Some(LineModel {
        point_on_line: centroid,
        direction: vectors.column(2).normalize(),
    })
}

/// Looks up the model explaining `feature` observed from `pose`.
pub fn find_correspondence(
    map: &FeatureMap,
    feature: &FeaturePoint,
    pose: &Pose,
    config: &AssocConfig,
) -> Option<GeometricModel> {
    let world = pose.transform_point(&feature.position);
    match feature.kind {
        FeatureKind::Planar => find_planar_correspondence(map, &world, config).map(GeometricModel::Plane),
        FeatureKind::Edge => find_edge_correspondence(map, &world, config).map(GeometricModel::Line),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn map_with(planes: Vec<Vector3<f64>>, edges: Vec<Vector3<f64>>) -> FeatureMap {
        let mut map = FeatureMap::new(0.0, 0.0);
        map.planes.insert(planes);
        map.edges.insert(edges);
        map
    }

    fn brute_knn(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn empty_index_returns_nothing() {
        assert!(KdTree::build(vec![]).knn(&Vector3::zeros(), 3).is_empty());
    }

    #[test]
    fn nearest_of_two() {
        let tree = KdTree::build(vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]);
        let nn = tree.knn(&Vector3::new(0.1, 0.0, 0.0), 1);
        assert_eq!(nn.len(), 1);
        assert_eq!(nn[0].index, 0);
    }

    #[test]
    fn knn_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let points: Vec<_> = (0..1000)
            .map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)))
            .collect();
        let tree = KdTree::build(points.clone());
        for _ in 0..200 {
            let q = Vector3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-2.0..2.0));
            let got: Vec<usize> = tree.knn(&q, 5).iter().map(|n| n.index).collect();
            assert_eq!(got, brute_knn(&points, &q, 5));
        }
    }

    #[test]
    fn ties_break_by_insertion_order() {
        // A grid with many equidistant points around the query.
        let points: Vec<_> = (0..10)
            .flat_map(|i| (0..10).map(move |j| Vector3::new(i as f64, j as f64, 0.0)))
            .collect();
        let tree = KdTree::build(points.clone());
        let q = Vector3::new(4.5, 4.5, 0.0);
        let got: Vec<usize> = tree.knn(&q, 6).iter().map(|n| n.index).collect();
        assert_eq!(got, brute_knn(&points, &q, 6));
    }

    #[test]
    fn exact_plane_fit() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.3, 0.0, 1.0),
            Vector3::new(0.0, 0.3, 1.0),
            Vector3::new(-0.2, 0.1, 1.0),
            Vector3::new(0.1, -0.3, 1.0),
        ];
        let map = map_with(pts, vec![]);
        let plane = find_planar_correspondence(&map, &Vector3::new(0.05, 0.05, 1.3), &AssocConfig::default()).unwrap();
        assert!((plane.normal - Vector3::z()).norm() < 1e-9);
        assert!((plane.offset + 1.0).abs() < 1e-9);
        // Query below the plane flips the orientation; the model is the same plane.
        let below = find_planar_correspondence(&map, &Vector3::new(0.0, 0.0, 0.5), &AssocConfig::default()).unwrap();
        assert!((below.normal + Vector3::z()).norm() < 1e-9);
        assert!(below.signed_distance(&Vector3::new(0.0, 0.0, 0.5)) >= 0.0);
    }

    #[test]
    fn distance_gate() {
        let pts: Vec<_> = (0..5).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let map = map_with(pts.clone(), pts);
        let far = Vector3::new(10.0, 0.0, 0.0);
        assert!(find_planar_correspondence(&map, &far, &AssocConfig::default()).is_none());
        assert!(find_edge_correspondence(&map, &far, &AssocConfig::default()).is_none());
    }

    #[test]
    fn planarity_gate() {
        let mut pts: Vec<_> = [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]
            .iter()
            .map(|&(x, y)| Vector3::new(x, y, 0.0))
            .collect();
        pts.push(Vector3::new(0.0, 0.0, 0.9));
        let map = map_with(pts, vec![]);
        assert!(find_planar_correspondence(&map, &Vector3::zeros(), &AssocConfig::default()).is_none());
    }

    #[test]
    fn noisy_plane_normal_within_one_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let truth = Vector3::new(0.3, -0.2, 1.0).normalize();
        let u = truth.cross(&Vector3::x()).normalize();
        let v = truth.cross(&u);
        let mut within = 0;
        let trials = 200;
        for _ in 0..trials {
            // Support radius ~0.9 m with 50 neighbours.
            let pts: Vec<_> = (0..300)
                .map(|_| {
                    let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                    u * a + v * b + truth * noise.sample(&mut rng)
                })
                .collect();
            let config = AssocConfig {
                k: 50,
                max_dist: 1.5,
                ..Default::default()
            };
            let map = map_with(pts, vec![]);
            let plane = find_planar_correspondence(&map, &(truth * 0.05), &config).unwrap();
            if plane.normal.dot(&truth).abs().min(1.0).acos().to_degrees() < 1.0 {
                within += 1;
            }
        }
        assert!(within as f64 >= 0.99 * trials as f64, "{within}/{trials}");
    }

    #[test]
    fn line_fit_on_axis() {
        let pts: Vec<_> = (0..5).map(|i| Vector3::new(0.0, 0.0, i as f64 * 0.2)).collect();
        let map = map_with(vec![], pts);
        let line = find_edge_correspondence(&map, &Vector3::new(0.1, 0.0, 0.4), &AssocConfig::default()).unwrap();
        assert!((line.direction.z.abs() - 1.0).abs() < 1e-9);
        assert!((line.distance(&Vector3::new(0.1, 0.0, 0.4)) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn isotropic_blob_fails_linearity() {
        let c = 0.1;
        let pts = vec![
            Vector3::new(c, 0.0, 0.0),
            Vector3::new(-c, 0.0, 0.0),
            Vector3::new(0.0, c, 0.0),
            Vector3::new(0.0, -c, 0.0),
            Vector3::new(0.0, 0.0, c),
            Vector3::new(0.0, 0.0, -c),
        ];
        let map = map_with(vec![], pts);
        let config = AssocConfig {
            k: 6,
            ..Default::default()
        };
        assert!(find_edge_correspondence(&map, &Vector3::zeros(), &config).is_none());
    }

    #[test]
    fn linearity_ratio_is_inclusive() {
        // Points ±a on x and ±b on y: scatter eigenvalues a²/2 and b²/2, so
        // a² = 3 b² gives a ratio of exactly 3.
        let b = 0.1f64;
        let a = b * 3f64.sqrt();
        let pts = vec![
            Vector3::new(a, 0.0, 0.0),
            Vector3::new(-a, 0.0, 0.0),
            Vector3::new(0.0, b, 0.0),
            Vector3::new(0.0, -b, 0.0),
        ];
        let map = map_with(vec![], pts);
        let mut config = AssocConfig {
            k: 4,
            ..Default::default()
        };
        let (_, values, _) = scatter(map.edges.index(), &map.edges.index().knn(&Vector3::zeros(), 4));
        let ratio = values[2] / values[1];
        config.linearity_ratio = ratio;
        assert!(find_edge_correspondence(&map, &Vector3::zeros(), &config).is_some());
        config.linearity_ratio = ratio * (1.0 + 1e-9);
        assert!(find_edge_correspondence(&map, &Vector3::zeros(), &config).is_none());
        assert!((ratio - 3.0).abs() < 1e-9);
    }

    #[test]
    fn voxel_map_averages_cells() {
        let mut cloud = VoxelCloud::new(0.5);
        cloud.insert([Vector3::new(0.1, 0.1, 0.1), Vector3::new(0.3, 0.1, 0.1)]);
        assert_eq!(cloud.len(), 1);
        cloud.insert([Vector3::new(0.2, 0.1, 0.1), Vector3::new(2.0, 0.0, 0.0)]);
        assert_eq!(cloud.len(), 2);
        assert!(cloud.index().points().iter().any(|p| (p - Vector3::new(0.2, 0.1, 0.1)).norm() < 1e-12));
    }

    proptest! {
        #[test]
        fn plane_supports_within_threshold(
            pts in prop::collection::vec(prop::array::uniform3(-0.5..0.5f64), 5..30),
            q in prop::array::uniform3(-0.5..0.5f64),
        ) {
            let pts: Vec<Vector3<f64>> = pts.into_iter().map(|p| Vector3::new(p[0], p[1], 0.1 * p[2])).collect();
            let map = map_with(pts, vec![]);
            let config = AssocConfig::default();
            let q = Vector3::from(q);
            if let Some(plane) = find_planar_correspondence(&map, &q, &config) {
                prop_assert!((plane.normal.norm() - 1.0).abs() < 1e-9);
                for nb in map.planes.index().knn(&q, config.k) {
                    prop_assert!(plane.signed_distance(map.planes.index().point(nb.index)).abs() <= config.planarity);
                }
            }
        }
    }
}

//! Closest-point correspondences between measurements and the model at its
//! current pose estimate.
//!
//! Two exact nearest-neighbor backends are provided behind [`ClosestPoint`]:
//! a kd-tree over a point cloud ([`NearestIndex`]) and a bounding-volume
//! hierarchy over mesh triangles ([`SurfaceIndex`]) returning the exact
//! closest surface point. Queries always run in the model frame, so moving the
//! model never requires rebuilding an index.

use crate::error::{Error, Result};
use crate::geom::{Pose, Vec3};
use crate::mesh::{Aabb, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondencePair {
    /// Measured point, world frame.
    pub scene: Vec3,
    /// Matched model point, world frame at the current estimate.
    pub model: Vec3,
}

/// Exact nearest-point queries in the model frame.
pub trait ClosestPoint: Sync {
    fn closest(&self, query: &Vec3) -> Vec3;
}

/// Pairs each measurement with the closest model point after placing the
/// model at `pose`. Output order follows `measurements`.
pub fn correspondences_at<M: ClosestPoint + ?Sized>(
    model: &M,
    pose: &Pose,
    measurements: &[Vec3],
) -> Vec<CorrespondencePair> {
    let r = pose.rotation_matrix();
    let rt = r.transpose();
    measurements
        .iter()
        .map(|s| {
            let local = rt * (s - pose.translation);
            let c = model.closest(&local);
            CorrespondencePair {
                scene: *s,
                model: r * c + pose.translation,
            }
        })
        .collect()
}

/// Pairs each measurement with its nearest point of `model_at_estimate`
/// (already in the world frame). Ties go to the lowest model index.
pub fn estimate_correspondences(
    model_at_estimate: &[Vec3],
    measurements: &[Vec3],
) -> Result<Vec<CorrespondencePair>> {
    let index = NearestIndex::build(model_at_estimate.to_vec())?;
    Ok(measurements
        .iter()
        .map(|s| CorrespondencePair {
            scene: *s,
            model: index.point(index.nearest(s).0),
        })
        .collect())
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree answering exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct NearestIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl NearestIndex {
    pub fn build(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("nearest-neighbor index needs at least one point"));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        build_kd(&points, &mut order, 0, points.len(), &mut nodes);
        Ok(Self {
            points,
            order,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Index and squared distance of the nearest point; ties resolve to the
    /// smallest index.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: &Vec3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[axis] - value;
                let (near, far) = if delta <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                // `<=` keeps equal-distance candidates reachable for the tie rule.
                if delta * delta <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build_kd(
    points: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<KdNode>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(KdNode::Leaf { start, end });
        return id;
    }
    let bounds = Aabb::from_points(order[start..end].iter().map(|&i| &points[i]))
        .expect("non-empty range");
    let extent = bounds.extent();
    let axis = extent.imax();
    if extent[axis] == 0.0 {
        // All points coincide.
        nodes.push(KdNode::Leaf { start, end });
        return id;
    }
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis])
    });
    let value = points[order[mid]][axis];
    nodes.push(KdNode::Leaf { start, end });
    let left = build_kd(points, order, start, mid, nodes);
    let right = build_kd(points, order, mid, end, nodes);
    nodes[id] = KdNode::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

impl ClosestPoint for NearestIndex {
    fn closest(&self, query: &Vec3) -> Vec3 {
        self.points[self.nearest(query).0]
    }
}

/// Point-cloud model: mesh vertices plus area-weighted surface samples.
pub fn densified_model_points(mesh: &TriangleMesh, min_points: usize, seed: u64) -> Result<Vec<Vec3>> {
    let mut pts = mesh.vertices().to_vec();
    if pts.len() < min_points {
        pts.extend(mesh.sample_surface_points(min_points - pts.len(), seed)?);
    }
    Ok(pts)
}

/// A mesh together with its closest-point index.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    mesh: TriangleMesh,
    surface: SurfaceIndex,
}

impl ObjectModel {
    pub fn new(mesh: TriangleMesh) -> Result<Self> {
        let surface = SurfaceIndex::build(&mesh)?;
        Ok(Self { mesh, surface })
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn surface(&self) -> &SurfaceIndex {
        &self.surface
    }
}

impl ClosestPoint for ObjectModel {
    fn closest(&self, query: &Vec3) -> Vec3 {
        self.surface.closest(query)
    }
}

const BVH_LEAF: usize = 4;

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    /// Leaves have `count > 0` and own `faces[start..start + count]`;
    /// interior nodes have `count == 0` and two children.
    start: usize,
    count: usize,
    left: usize,
    right: usize,
}

/// Bounding-volume hierarchy over a mesh's triangles for exact closest
/// surface point queries.
#[derive(Debug, Clone)]
pub struct SurfaceIndex {
    triangles: Vec<[Vec3; 3]>,
    faces: Vec<usize>,
    nodes: Vec<BvhNode>,
}

impl SurfaceIndex {
    pub fn build(mesh: &TriangleMesh) -> Result<Self> {
        if mesh.faces().is_empty() {
            return Err(Error::Empty("surface index needs at least one face"));
        }
        let triangles: Vec<[Vec3; 3]> = mesh.triangles().collect();
        let centroids: Vec<Vec3> = triangles
            .iter()
            .map(|[a, b, c]| (a + b + c) / 3.0)
            .collect();
        let mut faces: Vec<usize> = (0..triangles.len()).collect();
        let mut nodes = Vec::new();
        build_bvh(&triangles, &centroids, &mut faces, 0, triangles.len(), &mut nodes);
        Ok(Self {
            triangles,
            faces,
            nodes,
        })
    }

    /// Closest surface point, the face it lies on, and the squared distance.
    /// Equal distances resolve to the lowest face index.
    pub fn closest_with_face(&self, q: &Vec3) -> (Vec3, usize, f64) {
        let mut best = (Vec3::zeros(), usize::MAX, f64::INFINITY);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.bounds.distance_squared(q) > best.2 {
                continue;
            }
            if node.count > 0 {
                for &f in &self.faces[node.start..node.start + node.count] {
                    let [a, b, c] = &self.triangles[f];
                    let p = closest_point_on_triangle(q, a, b, c);
                    let d = (p - q).norm_squared();
                    if d < best.2 || (d == best.2 && f < best.1) {
                        best = (p, f, d);
                    }
                }
            } else {
                let (l, r) = (node.left, node.right);
                let dl = self.nodes[l].bounds.distance_squared(q);
                let dr = self.nodes[r].bounds.distance_squared(q);
                // Pop the nearer child first.
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}

impl ClosestPoint for SurfaceIndex {
    fn closest(&self, query: &Vec3) -> Vec3 {
        self.closest_with_face(query).0
    }
}

fn build_bvh(
    triangles: &[[Vec3; 3]],
    centroids: &[Vec3],
    faces: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let bounds = Aabb::from_points(faces[start..end].iter().flat_map(|&f| triangles[f].iter()))
        .expect("non-empty range");
    let id = nodes.len();
    nodes.push(BvhNode {
        bounds,
        start,
        count: end - start,
        left: 0,
        right: 0,
    });
    if end - start <= BVH_LEAF {
        return id;
    }
    let cb = Aabb::from_points(faces[start..end].iter().map(|&f| &centroids[f]))
        .expect("non-empty range");
    let axis = cb.extent().imax();
    let mid = (start + end) / 2;
    faces[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis].total_cmp(&centroids[b][axis])
    });
    let left = build_bvh(triangles, centroids, faces, start, mid, nodes);
    let right = build_bvh(triangles, centroids, faces, mid, end, nodes);
    let node = &mut nodes[id];
    node.count = 0;
    node.left = left;
    node.right = right;
    id
}

/// Closest point to `p` on triangle `abc` (region-based, after Ericson).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + v * ab;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + w * ac;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + w * (c - b);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Quaternion;
    use crate::mesh::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn linear_scan(points: &[Vec3], q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn single_point_index() {
        let idx = NearestIndex::build(vec![Vec3::new(1.0, 2.0, 3.0)]).unwrap();
        for q in random_points(20, 1) {
            assert_eq!(idx.nearest(&q).0, 0);
        }
        assert!(NearestIndex::build(vec![]).is_err());
    }

    #[test]
    fn cube_corner_query() {
        let side = 2.0;
        let corners = shapes::cube(side).vertices().to_vec();
        let idx = NearestIndex::build(corners.clone()).unwrap();
        for (i, c) in corners.iter().enumerate() {
            let toward_center = -c.normalize() * side * 3f64.sqrt();
            let q = c + 0.4 * side * toward_center.normalize();
            assert_eq!(idx.nearest(&q).0, i);
        }
    }

    #[test]
    fn kd_tree_matches_linear_scan() {
        let pts = random_points(10_000, 2);
        let idx = NearestIndex::build(pts.clone()).unwrap();
        for q in random_points(1_000, 3) {
            assert_eq!(idx.nearest(&q), linear_scan(&pts, &q));
        }
    }

    #[test]
    fn kd_tree_handles_duplicates() {
        let mut pts = vec![Vec3::new(0.5, 0.5, 0.5); 40];
        pts.extend(random_points(100, 4));
        let idx = NearestIndex::build(pts.clone()).unwrap();
        assert_eq!(idx.nearest(&Vec3::new(0.5, 0.5, 0.5)), (0, 0.0));
        for q in random_points(200, 5) {
            assert_eq!(idx.nearest(&q), linear_scan(&pts, &q));
        }
    }

    #[test]
    fn coincident_measurements_give_zero_distance_pairs() {
        let model = random_points(500, 6);
        let meas: Vec<Vec3> = model.iter().step_by(37).copied().collect();
        let pairs = estimate_correspondences(&model, &meas).unwrap();
        assert_eq!(pairs.len(), meas.len());
        for (p, s) in pairs.iter().zip(&meas) {
            assert_eq!(p.scene, *s);
            assert_eq!(p.model, *s);
        }
    }

    #[test]
    fn equidistant_tie_picks_lowest_index() {
        let model = vec![
            Vec3::new(5.0, 5.0, 5.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
        ];
        let pairs = estimate_correspondences(&model, &[Vec3::zeros()]).unwrap();
        assert_eq!(pairs[0].model, model[1]);
        let swapped = vec![model[0], model[2], model[1]];
        let pairs = estimate_correspondences(&swapped, &[Vec3::zeros()]).unwrap();
        assert_eq!(pairs[0].model, swapped[1]);
        assert!(estimate_correspondences(&[], &[Vec3::zeros()]).is_err());
    }

    #[test]
    fn small_displacement_recovers_true_assignment() {
        // Grid with spacing 0.1; a rigid motion moving points < 0.05 keeps the assignment.
        let mut model = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                for k in 0..4 {
                    model.push(Vec3::new(i as f64, j as f64, k as f64) * 0.1);
                }
            }
        }
        let pose = Pose::new(
            Quaternion::from_axis_angle(&Vec3::new(1.0, 2.0, 0.5), 0.02),
            Vec3::new(0.01, -0.008, 0.005),
        )
        .unwrap();
        let moved = crate::geom::apply_pose(&pose, &model);
        let max_disp = model
            .iter()
            .zip(&moved)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max_disp < 0.05);
        let subset: Vec<usize> = (0..model.len()).step_by(7).collect();
        let meas: Vec<Vec3> = subset.iter().map(|&i| moved[i]).collect();
        let pairs = estimate_correspondences(&model, &meas).unwrap();
        for (p, &i) in pairs.iter().zip(&subset) {
            assert_eq!(p.model, model[i]);
        }
    }

    fn brute_closest(mesh: &TriangleMesh, q: &Vec3) -> (Vec3, usize, f64) {
        let mut best = (Vec3::zeros(), usize::MAX, f64::INFINITY);
        for (f, [a, b, c]) in mesh.triangles().enumerate() {
            let p = closest_point_on_triangle(q, &a, &b, &c);
            let d = (p - q).norm_squared();
            if d < best.2 {
                best = (p, f, d);
            }
        }
        best
    }

    #[test]
    fn surface_index_matches_brute_force() {
        let mesh = shapes::asymmetric_block_subdivided(2);
        let idx = SurfaceIndex::build(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2_000 {
            let q = Vec3::from_fn(|_, _| rng.random_range(-0.8..0.8));
            let (p, _, d) = idx.closest_with_face(&q);
            let (bp, _, bd) = brute_closest(&mesh, &q);
            assert!((d - bd).abs() < 1e-15, "{d} vs {bd}");
            assert!((p - bp).norm() < 1e-9);
        }
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        let cp = |p: Vec3| closest_point_on_triangle(&p, &a, &b, &c);
        assert!((cp(Vec3::new(0.2, 0.2, 3.0)) - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        assert_eq!(cp(Vec3::new(-1.0, -1.0, 0.0)), a);
        assert_eq!(cp(Vec3::new(2.0, -0.5, 0.0)), b);
        assert_eq!(cp(Vec3::new(-0.5, 2.0, 1.0)), c);
        assert_eq!(cp(Vec3::new(0.5, -1.0, 0.0)), Vec3::new(0.5, 0.0, 0.0));
        let e = cp(Vec3::new(1.0, 1.0, 0.0));
        assert!((e - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn correspondences_at_pose_match_transformed_model() {
        let mesh = shapes::asymmetric_block_subdivided(1);
        let model = densified_model_points(&mesh, 2_000, 11).unwrap();
        assert!(model.len() >= 2_000);
        let idx = NearestIndex::build(model.clone()).unwrap();
        let pose = Pose::new(
            Quaternion::from_euler_xyz(0.3, -0.2, 0.9),
            Vec3::new(0.2, 0.0, -0.1),
        )
        .unwrap();
        let meas = random_points(30, 12);
        let fast = correspondences_at(&idx, &pose, &meas);
        let slow = estimate_correspondences(&crate::geom::apply_pose(&pose, &model), &meas).unwrap();
        for (f, s) in fast.iter().zip(&slow) {
            assert!((f.model - s.model).norm() < 1e-12);
        }
    }
}

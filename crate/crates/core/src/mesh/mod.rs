//! Triangle meshes: loading, bounds, surface sampling, rigid transforms and
//! ray casting. The mesh doubles as the touch simulator (ray hits on the
//! ground-truth pose) and as the lookahead model (ray hits on the estimate).

mod io;
mod raycast;
pub mod shapes;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{Pose, Vec3};

pub use io::{load_mesh, parse_obj, parse_ply, write_obj, LoadedMesh};
pub use raycast::{
    intersect_triangle, ray_mesh_intersect, ray_mesh_intersect_brute_force, HitRecord, Ray,
    RAY_EPSILON,
};

/// Faces with area at or below this are dropped when a mesh is built.
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = pts.into_iter();
        let first = *it.next()?;
        let mut b = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            b.grow(p);
        }
        Some(b)
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tol && p[k] <= self.max[k] + tol)
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&Vec3::zeros()).sup(&(p - self.max));
        d.norm_squared()
    }

    /// Slab test; returns the parameter interval `[t_enter, t_exit]` clipped to `t >= 0`.
    pub fn ray_interval(&self, ray: &Ray) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            let o = ray.origin[k];
            let d = ray.direction[k];
            if d == 0.0 {
                if o < self.min[k] || o > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut a, mut b) = ((self.min[k] - o) * inv, (self.max[k] - o) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

impl TriangleMesh {
    /// Builds a mesh, rejecting out-of-range indices and dropping degenerate
    /// faces. The returned strings describe every dropped face.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<(Self, Vec<String>)> {
        if let Some(v) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Config(format!("vertex {v} is not finite")));
        }
        let mut kept = Vec::with_capacity(faces.len());
        let mut warnings = Vec::new();
        for (i, f) in faces.into_iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&idx| idx >= vertices.len()) {
                return Err(Error::Config(format!(
                    "face {i} references vertex {bad}, mesh has {} vertices",
                    vertices.len()
                )));
            }
            let area = triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            if area <= MIN_FACE_AREA {
                warnings.push(format!("dropped degenerate face {i} (area {area:e})"));
                continue;
            }
            kept.push(f);
        }
        Ok((
            Self {
                vertices,
                faces: kept,
            },
            warnings,
        ))
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangles(&self) -> impl Iterator<Item = [Vec3; 3]> + '_ {
        (0..self.faces.len()).map(|i| self.triangle(i))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        triangle_area(&a, &b, &c)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|i| self.face_area(i)).sum()
    }

    pub fn bounding_box(&self) -> Result<Aabb> {
        Aabb::from_points(&self.vertices).ok_or(Error::Empty("mesh has no vertices"))
    }

    pub fn transform(&self, pose: &Pose) -> TriangleMesh {
        let r = pose.rotation_matrix();
        TriangleMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| r * v + pose.translation)
                .collect(),
            faces: self.faces.clone(),
        }
    }

    /// `n` points drawn uniformly over the surface: a face is picked with
    /// probability proportional to its area, then a uniform barycentric point.
    pub fn sample_surface_points(&self, n: usize, seed: u64) -> Result<Vec<Vec3>> {
        Ok(self
            .sample_surface_points_with_faces(n, seed)?
            .into_iter()
            .map(|(p, _)| p)
            .collect())
    }

    /// Same draw as [`TriangleMesh::sample_surface_points`], also returning the
    /// face each point came from.
    pub fn sample_surface_points_with_faces(
        &self,
        n: usize,
        seed: u64,
    ) -> Result<Vec<(Vec3, usize)>> {
        if self.faces.is_empty() {
            return Err(Error::Empty("mesh has no faces"));
        }
        let areas: Vec<f64> = (0..self.faces.len()).map(|i| self.face_area(i)).collect();
        let picker = WeightedIndex::new(&areas)
            .map_err(|e| Error::Config(format!("face areas: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let f = picker.sample(&mut rng);
                let [a, b, c] = self.triangle(f);
                let r1: f64 = rng.random::<f64>().sqrt();
                let r2: f64 = rng.random();
                let p = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c;
                (p, f)
            })
            .collect())
    }
}

pub fn bounding_box(mesh: &TriangleMesh) -> Result<Aabb> {
    mesh.bounding_box()
}

pub fn transform_mesh(mesh: &TriangleMesh, pose: &Pose) -> TriangleMesh {
    mesh.transform(pose)
}

pub fn sample_surface_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    mesh.sample_surface_points(n, seed)
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

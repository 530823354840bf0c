use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::TriangleMesh;

/// Slack on the barycentric inside-tests, so rays through shared edges hit.
pub const RAY_EPSILON: f64 = 1e-9;

/// Probe ray `origin + t·direction`, `t >= 0`, with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`; fails on a zero or non-finite direction.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Config("ray direction must be non-zero".into()));
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + t * self.direction
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitRecord {
    pub point: Vec3,
    pub t: f64,
    pub face_index: usize,
}

/// Möller–Trumbore ray/triangle test. Two-sided; returns the ray parameter of
/// the hit when it is non-negative.
pub fn intersect_triangle(ray: &Ray, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.direction.cross(&e2);
    let det = e1.dot(&p);
    // Parallel (or degenerate) relative to the edge scale.
    if det.abs() <= f64::EPSILON * e1.norm() * e2.norm() {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv_det;
    if !(-RAY_EPSILON..=1.0 + RAY_EPSILON).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction.dot(&q) * inv_det;
    if v < -RAY_EPSILON || u + v > 1.0 + RAY_EPSILON {
        return None;
    }
    let t = e2.dot(&q) * inv_det;
    (t >= 0.0).then_some(t)
}

/// Nearest hit with `t >= 0`; equal `t` resolves to the lower face index.
pub fn ray_mesh_intersect(ray: &Ray, mesh: &TriangleMesh) -> Option<HitRecord> {
    let bounds = mesh.bounding_box().ok()?;
    // Pad the box so grazing hits on boundary faces are not culled.
    let pad = RAY_EPSILON * (1.0 + bounds.diagonal());
    let padded = super::Aabb {
        min: bounds.min.add_scalar(-pad),
        max: bounds.max.add_scalar(pad),
    };
    padded.ray_interval(ray)?;
    ray_mesh_intersect_brute_force(ray, mesh)
}

/// Linear scan over every triangle without any culling.
pub fn ray_mesh_intersect_brute_force(ray: &Ray, mesh: &TriangleMesh) -> Option<HitRecord> {
    let mut best: Option<(f64, usize)> = None;
    for (i, [a, b, c]) in mesh.triangles().enumerate() {
        if let Some(t) = intersect_triangle(ray, &a, &b, &c) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, i));
            }
        }
    }
    best.map(|(t, face_index)| HitRecord {
        point: ray.at(t),
        t,
        face_index,
    })
}

//! Procedural test objects.

use std::collections::HashMap;

use crate::geom::Vec3;

use super::TriangleMesh;

/// Axis-aligned box centered at the origin, 12 outward-facing triangles.
pub fn box_mesh(extent: Vec3) -> TriangleMesh {
    let h = extent / 2.0;
    let vertices = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
        .collect();
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriangleMesh::new(vertices, faces)
        .expect("box indices are valid")
        .0
}

pub fn cube(side: f64) -> TriangleMesh {
    box_mesh(Vec3::repeat(side))
}

/// A 1.0 × 0.6 × 0.4 m box under an off-center pyramid roof.
///
/// No rotation other than the identity maps it onto itself, so a pose of it is
/// recoverable from surface points alone.
pub fn asymmetric_block() -> TriangleMesh {
    let (hx, hy, hz) = (0.5, 0.3, 0.2);
    let vertices = vec![
        Vec3::new(-hx, -hy, -hz),
        Vec3::new(hx, -hy, -hz),
        Vec3::new(hx, hy, -hz),
        Vec3::new(-hx, hy, -hz),
        Vec3::new(-hx, -hy, hz),
        Vec3::new(hx, -hy, hz),
        Vec3::new(hx, hy, hz),
        Vec3::new(-hx, hy, hz),
        Vec3::new(0.2, 0.12, 0.45),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
        [4, 5, 8],
        [5, 6, 8],
        [6, 7, 8],
        [7, 4, 8],
    ];
    TriangleMesh::new(vertices, faces)
        .expect("block indices are valid")
        .0
}

/// [`asymmetric_block`] after `levels` rounds of 1-to-4 subdivision
/// (14 · 4^levels faces; 3 levels gives 896).
pub fn asymmetric_block_subdivided(levels: usize) -> TriangleMesh {
    (0..levels).fold(asymmetric_block(), |m, _| subdivide(&m))
}

/// Splits every triangle into four at its edge midpoints. Shared edges share
/// their midpoint, so a closed mesh stays closed.
pub fn subdivide(mesh: &TriangleMesh) -> TriangleMesh {
    let mut vertices = mesh.vertices().to_vec();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            vertices.push(0.5 * (vertices[a] + vertices[b]));
            vertices.len() - 1
        })
    };
    let mut faces = Vec::with_capacity(mesh.faces().len() * 4);
    for &[a, b, c] in mesh.faces() {
        let ab = mid(a, b, &mut vertices);
        let bc = mid(b, c, &mut vertices);
        let ca = mid(c, a, &mut vertices);
        faces.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    TriangleMesh::new(vertices, faces)
        .expect("subdivision keeps indices valid")
        .0
}

/// Tetrahedron with no two edges of equal length, centered on its centroid.
pub fn irregular_tetrahedron() -> TriangleMesh {
    let raw = [
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.3, 0.8, 0.0),
        Vec3::new(0.25, 0.3, 0.7),
    ];
    let c = raw.iter().sum::<Vec3>() / 4.0;
    let vertices = raw.iter().map(|v| v - c).collect();
    let faces = vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]];
    TriangleMesh::new(vertices, faces)
        .expect("tetrahedron indices are valid")
        .0
}

/// Egg-like closed surface: an ellipsoid with semi-axes `(0.5, 0.35, 0.25)`
/// whose cross-section swells toward `+x` and leans toward `+y`,
/// triangulated on a `stacks × slices` latitude/longitude grid.
pub fn egg(stacks: usize, slices: usize) -> TriangleMesh {
    assert!(stacks >= 2 && slices >= 3);
    let (a, b, c) = (0.5, 0.35, 0.25);
    let point = |theta: f64, phi: f64| {
        let x = a * theta.cos();
        let swell = 1.0 + 0.35 * theta.cos();
        let y = b * swell * theta.sin() * phi.cos();
        let z = c * swell * theta.sin() * phi.sin() + 0.08 * theta.sin().powi(2) * (x / a);
        Vec3::new(x, y + 0.06 * (x / a).powi(2), z)
    };
    let pi = std::f64::consts::PI;
    let mut vertices = vec![point(0.0, 0.0)];
    for i in 1..stacks {
        let theta = pi * i as f64 / stacks as f64;
        for j in 0..slices {
            vertices.push(point(theta, 2.0 * pi * j as f64 / slices as f64));
        }
    }
    vertices.push(point(pi, 0.0));
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
    let last = vertices.len() - 1;
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (p, q, r, s) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
            faces.push([p, r, s]);
            faces.push([p, s, q]);
        }
    }
    for j in 0..slices {
        faces.push([last, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    TriangleMesh::new(vertices, faces)
        .expect("egg indices are valid")
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Every directed edge appears once and its reverse once: closed and
    /// consistently oriented.
    fn assert_closed_oriented(m: &TriangleMesh) {
        let mut edges = HashMap::new();
        for f in m.faces() {
            for k in 0..3 {
                *edges.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        for (&(a, b), &n) in &edges {
            assert_eq!(n, 1, "edge {a}->{b} used {n} times");
            assert_eq!(edges.get(&(b, a)), Some(&1), "edge {a}->{b} has no twin");
        }
    }

    fn signed_volume(m: &TriangleMesh) -> f64 {
        m.triangles().map(|[a, b, c]| a.dot(&b.cross(&c)) / 6.0).sum()
    }

    #[test]
    fn shapes_are_closed_and_outward() {
        for m in [
            cube(1.0),
            asymmetric_block(),
            asymmetric_block_subdivided(2),
            irregular_tetrahedron(),
            egg(8, 12),
        ] {
            assert_closed_oriented(&m);
            assert!(signed_volume(&m) > 0.0);
        }
        assert!((signed_volume(&cube(2.0)) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn subdivision_preserves_area_and_counts() {
        let m = asymmetric_block();
        let s = asymmetric_block_subdivided(3);
        assert_eq!(m.faces().len(), 14);
        assert_eq!(s.faces().len(), 896);
        assert!((m.surface_area() - s.surface_area()).abs() < 1e-12);
    }
}

//! Built-in meshes used by tests, the acceptance suite and the CLI.

use std::f64::consts::PI;

use super::TriMesh;

pub fn equilateral_triangle(side: f64) -> TriMesh {
    let h = side * 3f64.sqrt() / 2.0;
    TriMesh::new(
        vec![[0.0, 0.0, 0.0], [side, 0.0, 0.0], [0.5 * side, h, 0.0]],
        vec![[0, 1, 2]],
    )
    .expect("valid triangle")
}

/// Right isosceles triangle with unit legs; the right angle sits at vertex 0.
pub fn right_isosceles_triangle() -> TriMesh {
    TriMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[0, 1, 2]],
    )
    .expect("valid triangle")
}

pub fn octahedron() -> TriMesh {
    let positions = vec![
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    let triangles = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    TriMesh::new(positions, triangles).expect("valid octahedron")
}

/// Regular icosahedron inscribed in the unit sphere.
pub fn icosahedron() -> TriMesh {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ];
    let r = (1.0 + p * p).sqrt();
    let positions = raw.iter().map(|v| [v[0] / r, v[1] / r, v[2] / r]).collect();
    let triangles = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TriMesh::new(positions, triangles).expect("valid icosahedron")
}

/// Icosahedron refined `levels` times with reprojection onto the unit sphere.
pub fn icosphere(levels: usize) -> TriMesh {
    icosahedron()
        .refine(levels, true)
        .expect("icosphere refinement")
}

/// Unit disk made of `rings` concentric rings; ring `k` carries `6k` vertices.
pub fn unit_disk(rings: usize) -> TriMesh {
    disk(rings, 1.0)
}

/// Disk of the given radius; `1 + 3·rings·(rings+1)` vertices, boundary ring of `6·rings`.
pub fn disk(rings: usize, radius: f64) -> TriMesh {
    assert!(rings >= 1, "disk needs at least one ring");
    let mut positions = vec![[0.0, 0.0, 0.0]];
    let mut ring_start = vec![0usize];
    for k in 1..=rings {
        ring_start.push(positions.len());
        let r = radius * k as f64 / rings as f64;
        for j in 0..6 * k {
            let a = 2.0 * PI * j as f64 / (6 * k) as f64;
            positions.push([r * a.cos(), r * a.sin(), 0.0]);
        }
    }
    let ring = |k: usize, j: usize| -> usize {
        if k == 0 {
            0
        } else {
            ring_start[k] + j % (6 * k)
        }
    };
    let mut triangles = Vec::new();
    for k in 1..=rings {
        for s in 0..6 {
            for j in 0..k {
                let i_j = ring(k - 1, s * (k - 1) + j);
                triangles.push([i_j, ring(k, s * k + j), ring(k, s * k + j + 1)]);
                if j + 1 < k {
                    triangles.push([i_j, ring(k, s * k + j + 1), ring(k - 1, s * (k - 1) + j + 1)]);
                }
            }
        }
    }
    TriMesh::new(positions, triangles).expect("valid disk")
}

/// Flat unit-square torus on an `n × n` periodic grid.
///
/// The metric is intrinsic (edge lengths `1/n` and `√2/n`); positions place
/// the grid on a torus of revolution for display only.
pub fn flat_torus(n: usize) -> TriMesh {
    assert!(n >= 3, "flat torus needs n >= 3");
    let idx = |i: usize, j: usize| (i % n) * n + (j % n);
    let mut positions = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (2.0 * PI * i as f64 / n as f64, 2.0 * PI * j as f64 / n as f64);
            let r = 2.0 + b.cos();
            positions.push([r * a.cos(), r * a.sin(), b.sin()]);
        }
    }
    let h = 1.0 / n as f64;
    let d = h * 2f64.sqrt();
    let mut triangles = Vec::with_capacity(2 * n * n);
    let mut lengths = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            triangles.push([v00, v10, v11]);
            lengths.push([h, d, h]);
            triangles.push([v00, v11, v01]);
            lengths.push([h, h, d]);
        }
    }
    TriMesh::with_intrinsic_lengths(positions, triangles, lengths).expect("valid flat torus")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{cross, dot, sub};

    #[test]
    fn icosahedron_faces_point_outward() {
        let m = icosahedron();
        for t in m.triangles() {
            let p = m.positions();
            let n = cross(sub(p[t[1]], p[t[0]]), sub(p[t[2]], p[t[0]]));
            assert!(dot(n, p[t[0]]) > 0.0);
        }
        assert_eq!(m.euler_characteristic(), 2);
    }

    #[test]
    fn icosphere_counts() {
        assert_eq!(icosphere(3).num_vertices(), 642);
        assert_eq!(icosphere(4).num_vertices(), 2562);
    }

    #[test]
    fn disk_counts() {
        let m = unit_disk(4);
        assert_eq!(m.num_vertices(), 1 + 3 * 4 * 5);
        assert_eq!(m.boundary_loops().len(), 1);
        assert_eq!(m.boundary_loops()[0].len(), 24);
        assert_eq!(m.euler_characteristic(), 1);
        let n = 24.0;
        assert!((m.boundary_length() - n * 2.0 * (PI / n).sin()).abs() < 1e-12);
    }

    #[test]
    fn torus_is_flat_and_closed() {
        let m = flat_torus(8);
        assert_eq!(m.euler_characteristic(), 0);
        assert_eq!(m.genus(), 1);
        assert!((m.total_area() - 1.0).abs() < 1e-13);
    }
}

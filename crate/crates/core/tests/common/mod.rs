#![allow(dead_code)]

use heartfit::mesh::{icosphere, LabeledMesh};
use heartfit::plane::{plane_from_affine, slice_mesh_with_plane, AffineHeader, PlaneFrame, ViewTag};
use heartfit::raster::rasterize_slice;
use heartfit::render::ViewObservation;
use heartfit::vec3::Vec3;
use heartfit::Component;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Torus with `rings × segments` vertices, major radius `big`, minor `small`,
/// every vertex jittered uniformly by up to `jitter` mm.
pub fn torus(rings: usize, segments: usize, big: f64, small: f64, jitter: f64, seed: u64) -> LabeledMesh {
    let mut r = rng(seed);
    let mut vertices = Vec::with_capacity(rings * segments);
    for i in 0..segments {
        let a = std::f64::consts::TAU * i as f64 / segments as f64;
        for j in 0..rings {
            let b = std::f64::consts::TAU * j as f64 / rings as f64;
            let rad = big + small * b.cos();
            let mut p = [rad * a.cos(), rad * a.sin(), small * b.sin()];
            for x in &mut p {
                *x += jitter * (2.0 * r.gen::<f64>() - 1.0);
            }
            vertices.push(p);
        }
    }
    let idx = |i: usize, j: usize| (i % segments) * rings + (j % rings);
    let mut faces = Vec::new();
    for i in 0..segments {
        for j in 0..rings {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let labels = vec![Component::Lv; vertices.len()];
    LabeledMesh::new(vertices, faces, labels).unwrap()
}

pub fn jittered_icosphere(subdivisions: u32, radius: f64, jitter: f64, seed: u64) -> LabeledMesh {
    let mut r = rng(seed);
    let sphere = icosphere(subdivisions, radius, [0.0; 3], Component::Lv);
    let vertices = sphere
        .vertices()
        .iter()
        .map(|p| p.map(|x| x + jitter * (2.0 * r.gen::<f64>() - 1.0)))
        .collect();
    sphere.with_vertices(vertices).unwrap()
}

/// Plane with origin at pixel (0, 0), in-plane axes `u` (columns) and `v` (rows).
pub fn plane(view: ViewTag, u: Vec3, v: Vec3, origin: Vec3, spacing: f64, extent: (usize, usize)) -> PlaneFrame {
    let n = heartfit::vec3::cross(&u, &v);
    let header = AffineHeader::from_columns(
        heartfit::vec3::scale(&u, spacing),
        heartfit::vec3::scale(&v, spacing),
        heartfit::vec3::scale(&n, spacing),
        origin,
    );
    plane_from_affine(&header, view, extent).unwrap()
}

/// Axial plane at height `z`, centred on the origin.
pub fn axial(view: ViewTag, z: f64, spacing: f64, size: usize) -> PlaneFrame {
    let half = spacing * (size as f64 - 1.0) / 2.0;
    plane(view, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-half, -half, z], spacing, (size, size))
}

/// Ground-truth observation of `mesh` on `plane`.
pub fn observe(mesh: &LabeledMesh, plane: &PlaneFrame, frame: usize) -> ViewObservation {
    let slice = slice_mesh_with_plane(mesh, plane).unwrap();
    let mask = rasterize_slice(&slice, plane.extent.0, plane.extent.1);
    ViewObservation::from_mask(plane.view, frame, mask)
}

/// Central difference of `f` along coordinate `k` of vertex `i`.
pub fn central_difference(vertices: &[Vec3], i: usize, k: usize, h: f64, f: impl Fn(&[Vec3]) -> f64) -> f64 {
    let mut p = vertices.to_vec();
    p[i][k] += h;
    let up = f(&p);
    p[i][k] -= 2.0 * h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// Fourth-order central difference `(−f(2h) + 8f(h) − 8f(−h) + f(−2h)) / 12h`.
pub fn central_difference5(vertices: &[Vec3], i: usize, k: usize, h: f64, f: impl Fn(&[Vec3]) -> f64) -> f64 {
    let at = |d: f64| {
        let mut p = vertices.to_vec();
        p[i][k] += d;
        f(&p)
    };
    (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
}

/// Relative error with an absolute floor for tiny derivatives.
pub fn grad_ok(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    if analytic.abs() < 1e-10 {
        (analytic - numeric).abs() < abs
    } else {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()) < rel
    }
}

//! Mesh-quality and temporal penalties with analytic gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{face_cross, face_normals_of, EdgeList, MeshSequence};
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizerWeights {
    pub lambda_edge: f64,
    pub lambda_norm: f64,
    /// Temporal jerk weight. Not part of the original loss; ignored for
    /// sequences shorter than four frames.
    pub lambda_temp: f64,
}

impl Default for RegularizerWeights {
    fn default() -> Self {
        RegularizerWeights {
            lambda_edge: 0.8,
            lambda_norm: 0.8,
            lambda_temp: 0.1,
        }
    }
}

impl RegularizerWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_edge", self.lambda_edge),
            ("lambda_norm", self.lambda_norm),
            ("lambda_temp", self.lambda_temp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Mean over edges of `(‖e‖ − rest)²`.
pub fn edge_loss(vertices: &[Vec3], edges: &EdgeList) -> (f64, Vec<Vec3>) {
    let mut grad = vec![[0.0; 3]; vertices.len()];
    let loss = edge_loss_into(vertices, edges, &mut grad, 1.0);
    (loss, grad)
}

pub(crate) fn edge_loss_into(vertices: &[Vec3], edges: &EdgeList, grad: &mut [Vec3], scale: f64) -> f64 {
    let m = edges.edges.len();
    if m == 0 {
        return 0.0;
    }
    let inv = 1.0 / m as f64;
    let mut loss = 0.0;
    for (&[a, b], &rest) in edges.edges.iter().zip(&edges.rest_lengths) {
        let e = vec3::sub(&vertices[b], &vertices[a]);
        let len = vec3::norm(&e);
        let d = len - rest;
        loss += d * d;
        if len > 0.0 {
            let k = scale * inv * 2.0 * d / len;
            vec3::axpy(&mut grad[b], k, &e);
            vec3::axpy(&mut grad[a], -k, &e);
        }
    }
    loss * inv
}

/// Pairs of faces sharing an edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FacePairs {
    pub pairs: Vec<[usize; 2]>,
}

impl FacePairs {
    /// Every pair of faces incident to a common undirected edge, in edge order.
    pub fn build(faces: &[[usize; 3]]) -> Self {
        let mut by_edge: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                by_edge.entry([a.min(b), a.max(b)]).or_default().push(fi);
            }
        }
        let mut pairs = Vec::new();
        for incident in by_edge.values() {
            for i in 0..incident.len() {
                for j in i + 1..incident.len() {
                    pairs.push([incident[i], incident[j]]);
                }
            }
        }
        FacePairs { pairs }
    }
}

/// Mean over adjacent face pairs of `1 − n_a·n_b`.
pub fn normal_loss(vertices: &[Vec3], faces: &[[usize; 3]], pairs: &FacePairs) -> Result<(f64, Vec<Vec3>)> {
    let mut grad = vec![[0.0; 3]; vertices.len()];
    let loss = normal_loss_into(vertices, faces, pairs, &mut grad, 1.0)?;
    Ok((loss, grad))
}

pub(crate) fn normal_loss_into(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    pairs: &FacePairs,
    grad: &mut [Vec3],
    scale: f64,
) -> Result<f64> {
    if pairs.pairs.is_empty() {
        return Ok(0.0);
    }
    let normals = face_normals_of(vertices, faces)?;
    let inv = 1.0 / pairs.pairs.len() as f64;

    // dL/dn per face, then chain through n = m/‖m‖, m = e1 × e2.
    let mut dn = vec![[0.0; 3]; faces.len()];
    let mut loss = 0.0;
    for &[a, b] in &pairs.pairs {
        loss += 1.0 - vec3::dot(&normals[a], &normals[b]);
        vec3::axpy(&mut dn[a], -inv * scale, &normals[b]);
        vec3::axpy(&mut dn[b], -inv * scale, &normals[a]);
    }
    for (fi, f) in faces.iter().enumerate() {
        let d = dn[fi];
        if d == [0.0; 3] {
            continue;
        }
        let n = normals[fi];
        let m_len = vec3::norm(&face_cross(vertices, f));
        let g = vec3::scale(&vec3::sub(&d, &vec3::scale(&n, vec3::dot(&n, &d))), 1.0 / m_len);
        let e1 = vec3::sub(&vertices[f[1]], &vertices[f[0]]);
        let e2 = vec3::sub(&vertices[f[2]], &vertices[f[0]]);
        let g1 = vec3::cross(&e2, &g);
        let g2 = vec3::cross(&g, &e1);
        vec3::add_assign(&mut grad[f[1]], &g1);
        vec3::add_assign(&mut grad[f[2]], &g2);
        vec3::axpy(&mut grad[f[0]], -1.0, &vec3::add(&g1, &g2));
    }
    Ok(loss * inv)
}

/// Mean over vertices and frames of the squared third finite difference
/// `x_{t+2} − 3x_{t+1} + 3x_t − x_{t−1}`. With `cyclic`, frame indices wrap;
/// otherwise only the `N − 3` fully interior stencils are used.
pub fn temporal_jerk_loss(sequence: &MeshSequence, cyclic: bool) -> Result<(f64, Vec<Vec<Vec3>>)> {
    let n = sequence.frame_count();
    if n < 4 {
        return Err(Error::Invalid(format!("temporal jerk needs at least 4 frames, got {n}")));
    }
    let mut grad = vec![vec![[0.0; 3]; sequence.vertex_count()]; n];
    let loss = jerk_into(sequence.frames(), cyclic, &mut grad, 1.0);
    Ok((loss, grad))
}

const STENCIL: [(isize, f64); 4] = [(-1, -1.0), (0, 3.0), (1, -3.0), (2, 1.0)];

pub(crate) fn jerk_into(frames: &[Vec<Vec3>], cyclic: bool, grad: &mut [Vec<Vec3>], scale: f64) -> f64 {
    let n = frames.len();
    let v = frames.first().map_or(0, Vec::len);
    let centres: Vec<usize> = if cyclic { (0..n).collect() } else { (1..n - 2).collect() };
    let count = centres.len() * v;
    if count == 0 {
        return 0.0;
    }
    let inv = 1.0 / count as f64;
    let idx = |t: usize, k: isize| (t as isize + k).rem_euclid(n as isize) as usize;
    let mut loss = 0.0;
    for &t in &centres {
        for i in 0..v {
            let (a, b, c, e) = (&frames[idx(t, 2)][i], &frames[idx(t, 1)][i], &frames[t][i], &frames[idx(t, -1)][i]);
            let d: Vec3 = std::array::from_fn(|k| (a[k] - e[k]) - 3.0 * (b[k] - c[k]));
            loss += vec3::dot(&d, &d);
            for &(k, c) in &STENCIL {
                vec3::axpy(&mut grad[idx(t, k)][i], scale * inv * 2.0 * c, &d);
            }
        }
    }
    loss * inv
}

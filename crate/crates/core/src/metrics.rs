//! Evaluation metrics over meshes, sequences and contours.
//!
//! Distances are unsquared Euclidean distances in mm unless noted.
//! Nearest-neighbour queries go through a k-d tree that evaluates exactly the
//! same distance expression as the brute-force loops, so both give
//! bit-identical results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::check_same_shape;
use crate::mesh::{raw_volume_mm3, signed_volume, MeshSequence, Structure, MM3_PER_ML};
use crate::plane::{slice_mesh_with_plane, PlaneFrame};
use crate::raster::{boundary_points, rasterize_slice};
use crate::render::Observations;
use crate::vec3::Vec3;

#[inline]
fn distance<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        s += d * d;
    }
    s.sqrt()
}

/// Static k-d tree over a point set for exact nearest-neighbour distances.
#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    /// Implicit balanced tree: node `i` spans `order[lo..hi]` with the median at the split.
    order: Vec<usize>,
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: &[[f64; D]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        KdTree {
            points: points.to_vec(),
            order,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance from `q` to its nearest point; infinite for an empty tree.
    pub fn nearest_distance(&self, q: &[f64; D]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(q, 0, self.order.len(), 0, &mut best);
        best
    }

    fn search(&self, q: &[f64; D], lo: usize, hi: usize, depth: usize, best: &mut f64) {
        if hi - lo <= 8 {
            for &i in &self.order[lo..hi] {
                let d = distance(q, &self.points[i]);
                if d < *best {
                    *best = d;
                }
            }
            return;
        }
        let axis = depth % D;
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[self.order[mid]];
        let d = distance(q, p);
        if d < *best {
            *best = d;
        }
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, depth + 1, best);
        // Any point across the split is at least |diff| away, also in floating point.
        if diff.abs() <= *best {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn build<const D: usize>(points: &[[f64; D]], order: &mut [usize], depth: usize) {
    if order.len() <= 8 {
        return;
    }
    let axis = depth % D;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

/// Directed mean and max of nearest-neighbour distances from `a` into `tree`.
fn directed<const D: usize>(a: &[[f64; D]], tree: &KdTree<D>) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for p in a {
        let d = tree.nearest_distance(p);
        sum += d;
        max = max.max(d);
    }
    (sum / a.len() as f64, max)
}

fn directed_brute<const D: usize>(a: &[[f64; D]], b: &[[f64; D]]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = distance(p, q);
            if d < best {
                best = d;
            }
        }
        sum += best;
        max = max.max(best);
    }
    (sum / a.len() as f64, max)
}

/// Chamfer distance `(mean_a min_b ‖a−b‖ + mean_b min_a ‖a−b‖)/2` and
/// Hausdorff distance, the larger of the two directed maxima.
pub fn chamfer_hausdorff(a: &[Vec3], b: &[Vec3]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("chamfer/hausdorff of an empty point set".into()));
    }
    let (ab, ab_max) = directed(a, &KdTree::new(b));
    let (ba, ba_max) = directed(b, &KdTree::new(a));
    Ok(((ab + ba) / 2.0, ab_max.max(ba_max)))
}

/// Quadratic-time reference implementation of [`chamfer_hausdorff`].
pub fn chamfer_hausdorff_brute(a: &[Vec3], b: &[Vec3]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("chamfer/hausdorff of an empty point set".into()));
    }
    let (ab, ab_max) = directed_brute(a, b);
    let (ba, ba_max) = directed_brute(b, a);
    Ok(((ab + ba) / 2.0, ab_max.max(ba_max)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VertexErrors {
    /// Mean per-vertex Euclidean distance, mm.
    pub mae: f64,
    /// Mean squared per-vertex Euclidean distance, mm².
    pub mse: f64,
}

fn structure_indices(labels: &[crate::mesh::Component], s: Structure) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| s.contains(l))
        .map(|(i, _)| i)
        .collect()
}

/// MAE and MSE of vertex positions over all frames, per structure.
pub fn vertexwise_errors(pred: &MeshSequence, reference: &MeshSequence) -> Result<BTreeMap<Structure, VertexErrors>> {
    check_same_shape(pred, reference)?;
    let mut out = BTreeMap::new();
    for s in Structure::ALL {
        let idx = structure_indices(pred.labels(), s);
        if idx.is_empty() {
            continue;
        }
        let (mut abs, mut sq) = (0.0, 0.0);
        for (p, r) in pred.frames().iter().zip(reference.frames()) {
            for &i in &idx {
                let d = distance(&p[i], &r[i]);
                abs += d;
                sq += d * d;
            }
        }
        let count = (idx.len() * pred.frame_count()) as f64;
        out.insert(
            s,
            VertexErrors {
                mae: abs / count,
                mse: sq / count,
            },
        );
    }
    Ok(out)
}

/// Per-structure Chamfer and Hausdorff distances averaged over frames.
pub fn sequence_chamfer(pred: &MeshSequence, reference: &MeshSequence) -> Result<BTreeMap<Structure, (f64, f64)>> {
    check_same_shape(pred, reference)?;
    let mut out = BTreeMap::new();
    for s in Structure::ALL {
        let idx = structure_indices(pred.labels(), s);
        if idx.is_empty() {
            continue;
        }
        let per_frame: Vec<Result<(f64, f64)>> = (0..pred.frame_count())
            .into_par_iter()
            .map(|t| {
                let a: Vec<Vec3> = idx.iter().map(|&i| pred.frame(t)[i]).collect();
                let b: Vec<Vec3> = idx.iter().map(|&i| reference.frame(t)[i]).collect();
                chamfer_hausdorff(&a, &b)
            })
            .collect();
        let (mut cd, mut hd) = (0.0, 0.0);
        for r in per_frame {
            let (c, h) = r?;
            cd += c;
            hd += h;
        }
        let n = pred.frame_count() as f64;
        out.insert(s, (cd / n, hd / n));
    }
    Ok(out)
}

/// Chamfer distance of the full mesh for each frame.
pub fn per_frame_chamfer(pred: &MeshSequence, reference: &MeshSequence) -> Result<Vec<f64>> {
    check_same_shape(pred, reference)?;
    (0..pred.frame_count())
        .into_par_iter()
        .map(|t| chamfer_hausdorff(pred.frame(t), reference.frame(t)).map(|r| r.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContourScores {
    /// Symmetric mean closest-point distance, mm.
    pub mcd: f64,
    /// Boundary F-score, percent.
    pub bf: f64,
}

/// Mean contour distance and boundary F-score between two contour point sets
/// in pixel coordinates `[row, col]`. `spacing` is `(col, row)` mm per pixel;
/// the F-score threshold is in pixels. Returns `None` if either side is empty.
pub fn contour_metrics(
    pred: &[[f64; 2]],
    reference: &[[f64; 2]],
    spacing: (f64, f64),
    threshold_px: f64,
) -> Option<ContourScores> {
    if pred.is_empty() || reference.is_empty() {
        return None;
    }
    let to_mm = |p: &[[f64; 2]]| -> Vec<[f64; 2]> { p.iter().map(|q| [q[0] * spacing.1, q[1] * spacing.0]).collect() };
    let (pm, rm) = (to_mm(pred), to_mm(reference));
    let (pr, _) = directed(&pm, &KdTree::new(&rm));
    let (rp, _) = directed(&rm, &KdTree::new(&pm));
    let mcd = (pr + rp) / 2.0;

    let within = |a: &[[f64; 2]], b: &[[f64; 2]]| {
        let tree = KdTree::new(b);
        a.iter().filter(|p| tree.nearest_distance(p) <= threshold_px).count() as f64 / a.len() as f64
    };
    let precision = within(pred, reference);
    let recall = within(reference, pred);
    let bf = if precision + recall > 0.0 {
        200.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Some(ContourScores { mcd, bf })
}

/// Contour points of a mesh cross-section: the slice is rasterized with the
/// same fill rule as the ground-truth masks and its boundary traced.
pub fn mesh_contour_points(mesh: &crate::mesh::LabeledMesh, plane: &PlaneFrame) -> Result<Vec<[f64; 2]>> {
    let slice = slice_mesh_with_plane(mesh, plane)?;
    Ok(boundary_points(&rasterize_slice(&slice, plane.extent.0, plane.extent.1)))
}

/// Contour metrics of a sequence against ground-truth masks, per plane,
/// averaged over frames where both contours exist.
pub fn view_contour_metrics(
    pred: &MeshSequence,
    planes: &[PlaneFrame],
    masks: &Observations,
    threshold_px: f64,
) -> Result<Vec<Option<ContourScores>>> {
    if masks.frame_count() != pred.frame_count() {
        return Err(Error::Shape(format!(
            "{} mask frames for a {}-frame sequence",
            masks.frame_count(),
            pred.frame_count()
        )));
    }
    let per_frame: Vec<Result<Vec<Option<ContourScores>>>> = (0..pred.frame_count())
        .into_par_iter()
        .map(|t| {
            let mesh = pred.mesh(t);
            planes
                .iter()
                .zip(masks.frame(t))
                .map(|(plane, obs)| {
                    let p = mesh_contour_points(&mesh, plane)?;
                    let r = boundary_points(&obs.mask);
                    Ok(contour_metrics(&p, &r, plane.spacing, threshold_px))
                })
                .collect()
        })
        .collect();
    let mut sums = vec![(0.0, 0.0, 0usize); planes.len()];
    for frame in per_frame {
        for (acc, s) in sums.iter_mut().zip(frame?) {
            if let Some(s) = s {
                acc.0 += s.mcd;
                acc.1 += s.bf;
                acc.2 += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(m, b, n)| {
            (n > 0).then(|| ContourScores {
                mcd: m / n as f64,
                bf: b / n as f64,
            })
        })
        .collect())
}

/// Mean over frames of the absolute whole-heart volume difference, mL.
pub fn volume_error(pred: &MeshSequence, reference: &MeshSequence) -> Result<f64> {
    structure_volume_error(pred, reference, Structure::Full)
}

/// Mean over frames of `|vol(pred_t) − vol(ref_t)|` for one structure, mL.
pub fn structure_volume_error(pred: &MeshSequence, reference: &MeshSequence, structure: Structure) -> Result<f64> {
    check_same_shape(pred, reference)?;
    let mut sum = 0.0;
    for t in 0..pred.frame_count() {
        let a = signed_volume(&pred.mesh(t), structure)?.ml;
        let b = signed_volume(&reference.mesh(t), structure)?.ml;
        sum += (a - b).abs();
    }
    Ok(sum / pred.frame_count() as f64)
}

/// Enclosed volume of every structure for every frame, mL, indexed `[frame][structure]`
/// in [`Structure::ALL`] order.
pub fn volume_curves(seq: &MeshSequence) -> Result<Vec<[f64; 6]>> {
    for s in Structure::ALL {
        crate::mesh::check_closed(seq.faces(), seq.labels(), s)?;
    }
    Ok(seq
        .frames()
        .iter()
        .map(|v| Structure::ALL.map(|s| raw_volume_mm3(v, seq.faces(), seq.labels(), s).abs() / MM3_PER_ML))
        .collect())
}

/// Mesh jitter: mean over the structure's vertices and the valid frames of
/// the norm of `x_{t+2} − 3x_{t+1} + 3x_t − x_{t−1}`, mm/frame³.
pub fn mesh_jitter(seq: &MeshSequence, structure: Structure, cyclic: bool) -> Result<f64> {
    let n = seq.frame_count();
    if n < 4 {
        return Err(Error::Invalid(format!("mesh jitter needs at least 4 frames, got {n}")));
    }
    let idx = structure_indices(seq.labels(), structure);
    let centres: Vec<usize> = if cyclic { (0..n).collect() } else { (1..n - 2).collect() };
    let at = |t: usize, k: isize| (t as isize + k).rem_euclid(n as isize) as usize;
    let mut sum = 0.0;
    for &t in &centres {
        let (a, b, c, d) = (seq.frame(at(t, 2)), seq.frame(at(t, 1)), seq.frame(t), seq.frame(at(t, -1)));
        for &i in &idx {
            let mut j = [0.0; 3];
            for k in 0..3 {
                j[k] = (a[i][k] - d[i][k]) - 3.0 * (b[i][k] - c[i][k]);
            }
            sum += (j[0] * j[0] + j[1] * j[1] + j[2] * j[2]).sqrt();
        }
    }
    let count = centres.len() * idx.len();
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// One value of a [`MetricReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    /// `structure` or `view`.
    pub scope: &'static str,
    /// Structure name (`FullMesh`, `LV`, …) or view tag (`4CH`, `SAX3`, …).
    pub name: String,
    pub metric: &'static str,
    pub unit: &'static str,
    /// Absent when the metric is undefined, e.g. no contour on a view.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn get(&self, name: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.name == name && r.metric == metric)
            .and_then(|r| r.value)
    }

    /// CSV with header `scope,name,metric,unit,value`; absent values are `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,name,metric,unit,value\n");
        for r in &self.rows {
            let v = r.value.map_or_else(|| "NA".to_string(), |v| format!("{v:?}"));
            let _ = writeln!(out, "{},{},{},{},{}", r.scope, r.name, r.metric, r.unit, v);
        }
        out
    }
}

/// Full evaluation of a predicted sequence against a reference sequence and
/// its ground-truth masks.
pub fn evaluate(
    pred: &MeshSequence,
    reference: &MeshSequence,
    planes: &[PlaneFrame],
    masks: &Observations,
) -> Result<MetricReport> {
    check_same_shape(pred, reference)?;
    if pred.labels() != reference.labels() {
        return Err(Error::Shape("prediction and reference labels differ".into()));
    }
    let errors = vertexwise_errors(pred, reference)?;
    let chamfer = sequence_chamfer(pred, reference)?;
    let cyclic_ok = pred.frame_count() >= 4;
    let mut report = MetricReport::default();
    for s in Structure::ALL {
        let Some(e) = errors.get(&s) else { continue };
        let (cd, hd) = chamfer[&s];
        let jm = if cyclic_ok { Some(mesh_jitter(pred, s, true)?) } else { None };
        let evol = structure_volume_error(pred, reference, s)?;
        for (metric, unit, value) in [
            ("MAE", "mm", Some(e.mae)),
            ("MSE", "mm2", Some(e.mse)),
            ("CD", "mm", Some(cd)),
            ("HD", "mm", Some(hd)),
            ("E_vol", "mL", Some(evol)),
            ("J_m", "mm/frame3", jm),
        ] {
            report.rows.push(MetricRow {
                scope: "structure",
                name: s.name().to_string(),
                metric,
                unit,
                value,
            });
        }
    }
    let views = view_contour_metrics(pred, planes, masks, 1.0)?;
    for (plane, scores) in planes.iter().zip(views) {
        for (metric, unit, value) in [
            ("MCD", "mm", scores.map(|s| s.mcd)),
            ("BF", "%", scores.map(|s| s.bf)),
        ] {
            report.rows.push(MetricRow {
                scope: "view",
                name: plane.view.to_string(),
                metric,
                unit,
                value,
            });
        }
    }
    Ok(report)
}

/// Per-frame volume CSV with header `frame,FullMesh,LV,LV_MYO,RV,LA,RA`, mL.
pub fn volume_csv(seq: &MeshSequence) -> Result<String> {
    let curves = volume_curves(seq)?;
    let mut out = String::from("frame");
    for s in Structure::ALL {
        out.push(',');
        out.push_str(s.name());
    }
    out.push('\n');
    for (t, row) in curves.iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in row {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chamfer_examples() {
        let a = vec![[0.0, 0.0, 0.0]];
        let b = vec![[3.0, 4.0, 0.0]];
        assert_eq!(chamfer_hausdorff(&a, &b).unwrap(), (5.0, 5.0));
        assert_eq!(chamfer_hausdorff(&b, &b).unwrap(), (0.0, 0.0));
        assert!(chamfer_hausdorff(&[], &b).is_err());
    }

    #[test]
    fn contour_examples() {
        let circle = |r: f64, n: usize| -> Vec<[f64; 2]> {
            (0..n)
                .map(|k| {
                    let a = k as f64 * std::f64::consts::TAU / n as f64;
                    [50.0 + r * a.sin(), 50.0 + r * a.cos()]
                })
                .collect()
        };
        let c = circle(10.0, 400);
        let s = contour_metrics(&c, &c, (1.2, 1.2), 1.0).unwrap();
        assert_eq!((s.mcd, s.bf), (0.0, 100.0));
        let far: Vec<[f64; 2]> = c.iter().map(|p| [p[0] + 200.0, p[1]]).collect();
        assert_eq!(contour_metrics(&c, &far, (1.0, 1.0), 1.0).unwrap().bf, 0.0);
        assert!(contour_metrics(&c, &[], (1.0, 1.0), 1.0).is_none());
    }
}

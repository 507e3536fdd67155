//! Soft plane rendering of mesh vertices and the boundary loss.
//!
//! Each vertex is weighted by its normal distance `R` to an imaging plane
//! through a falling sigmoid window `ℓ(R) = 1 / (1 + exp((R − h)/τ))`, which
//! is turned into an association probability with an exponential
//! attenuation law, `q = 1 − exp(−μ·ℓ(R))`. Vertices are projected onto the
//! plane, splatted bilinearly into the four surrounding pixels and combined
//! per pixel by probabilistic OR,
//!
//! ```text
//! Q(p) = 1 − Π_i (1 − w_i(p)·q_i)
//! ```
//!
//! The boundary loss integrates `Q` against a distance map derived from the
//! ground-truth mask, `L_B = (1/P) Σ_p φ(p)·Q(p)`. All gradients with respect
//! to vertex positions are analytic.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::MeshSequence;
use crate::plane::{world_to_pixel, PlaneFrame, ViewTag};
use crate::raster::{contour_distance_map, signed_distance_map, Mask};
use crate::vec3::{self, Vec3};

/// Vertices whose association probability is at or below this value are not splatted.
pub const Q_MIN: f64 = 1e-6;

/// Splatting kernel. Only bilinear is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Splat {
    #[default]
    Bilinear,
}

/// Which potential the boundary loss integrates `Q` against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    /// `φ = d − b`, with `d` the unsigned distance from a pixel centre to
    /// the mask's boundary curve: the signed distance map of a band of
    /// half-width `b` pixels around the contour. Splatted vertex mass is
    /// drawn onto the ground-truth contour from either side.
    #[default]
    Contour,
    /// `φ = sdm`: the signed region potential. Mass is drawn towards the
    /// deepest interior of the mask.
    Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RendererConfig {
    /// Sharpness of the distance-to-probability mapping (dimensionless).
    pub mu: f64,
    /// Window half-width `h`, mm.
    pub window_halfwidth: f64,
    /// Window softness `τ`, mm.
    pub window_softness: f64,
    pub splat: Splat,
    pub supervision: Supervision,
    /// Half-width `b` of the contour band, pixels. Only used by [`Supervision::Contour`].
    pub contour_band: f64,
}

impl Default for RendererConfig {
    fn default() -> Self {
        RendererConfig {
            mu: 8.0,
            window_halfwidth: 5.0,
            window_softness: 1.0,
            splat: Splat::Bilinear,
            supervision: Supervision::Contour,
            contour_band: 1.0,
        }
    }
}

impl RendererConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("mu", self.mu),
            ("window_halfwidth", self.window_halfwidth),
            ("window_softness", self.window_softness),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::config(name, format!("must be a positive finite number, got {value}")));
            }
        }
        if !(self.contour_band >= 0.0 && self.contour_band.is_finite()) {
            return Err(Error::config(
                "contour_band",
                format!("must be finite and nonnegative, got {}", self.contour_band),
            ));
        }
        Ok(())
    }

    /// Distance beyond which `q ≤ Q_MIN`.
    pub fn cutoff_distance(&self) -> f64 {
        let l = -(1.0 - Q_MIN).ln() / self.mu;
        self.window_halfwidth + self.window_softness * (1.0 / l - 1.0).ln()
    }
}

/// `ℓ(R)` and `dℓ/dR`.
#[inline]
fn window(r: f64, cfg: &RendererConfig) -> (f64, f64) {
    let x = (r - cfg.window_halfwidth) / cfg.window_softness;
    let l = if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    };
    (l, -l * (1.0 - l) / cfg.window_softness)
}

/// Falling sigmoid window weight of a vertex at normal distance `r` (mm).
pub fn sigmoid_window(r: f64, cfg: &RendererConfig) -> f64 {
    window(r, cfg).0
}

/// `q = 1 − exp(−μ·ℓ(R))`, always in `[0, 1 − e^{−μ})`.
pub fn association_probability(r: f64, cfg: &RendererConfig) -> f64 {
    -(-cfg.mu * window(r, cfg).0).exp_m1()
}

/// `q` and `dq/dR`.
#[inline]
fn association(r: f64, cfg: &RendererConfig) -> (f64, f64) {
    let (l, dl) = window(r, cfg);
    let e = (-cfg.mu * l).exp();
    (1.0 - e, cfg.mu * e * dl)
}

/// Per-pixel aggregated association probabilities on one plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub view: ViewTag,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// Ground-truth supervision for one `(view, frame)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewObservation {
    pub view: ViewTag,
    pub frame: usize,
    pub mask: Mask,
    /// Signed distance to the mask's boundary pixels, negative inside, pixel units.
    pub sdm: Vec<f64>,
    /// Unsigned distance to the boundary curve between inside and outside
    /// pixels, pixel units.
    pub contour: Vec<f64>,
}

impl ViewObservation {
    pub fn from_mask(view: ViewTag, frame: usize, mask: Mask) -> Self {
        let sdm = signed_distance_map(&mask);
        let contour = contour_distance_map(&mask);
        ViewObservation {
            view,
            frame,
            mask,
            sdm,
            contour,
        }
    }

    #[inline]
    fn potential(&self, index: usize, cfg: &RendererConfig) -> f64 {
        match cfg.supervision {
            Supervision::Contour => self.contour[index] - cfg.contour_band,
            Supervision::Region => self.sdm[index],
        }
    }
}

/// Observations indexed by `[frame][plane]`, aligned with a plane list.
#[derive(Debug, Clone)]
pub struct Observations {
    rows: Vec<Vec<ViewObservation>>,
}

impl Observations {
    /// Arranges `observations` by frame and by the order of `planes`. Every
    /// `(plane, frame)` pair must be present exactly once with a matching extent.
    pub fn new(planes: &[PlaneFrame], frames: usize, observations: Vec<ViewObservation>) -> Result<Self> {
        let mut by_key: HashMap<(ViewTag, usize), ViewObservation> = HashMap::new();
        for o in observations {
            let key = (o.view, o.frame);
            if by_key.insert(key, o).is_some() {
                return Err(Error::Invalid(format!(
                    "duplicate observation for plane {} at frame {}",
                    key.0, key.1
                )));
            }
        }
        let mut rows = Vec::with_capacity(frames);
        for t in 0..frames {
            let mut row = Vec::with_capacity(planes.len());
            for plane in planes {
                let o = by_key.remove(&(plane.view, t)).ok_or_else(|| Error::MissingObservation {
                    plane: plane.view.to_string(),
                    frame: t,
                })?;
                if (o.mask.rows, o.mask.cols) != plane.extent {
                    return Err(Error::Shape(format!(
                        "observation {} frame {t} is {}×{}, plane extent is {}×{}",
                        plane.view, o.mask.rows, o.mask.cols, plane.extent.0, plane.extent.1
                    )));
                }
                row.push(o);
            }
            rows.push(row);
        }
        Ok(Observations { rows })
    }

    pub fn frame(&self, t: usize) -> &[ViewObservation] {
        &self.rows[t]
    }

    pub fn frame_count(&self) -> usize {
        self.rows.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ViewObservation> {
        self.rows.iter().flatten()
    }
}

/// Bilinear footprint of a projected point: up to four `(pixel index, weight,
/// dweight/drow, dweight/dcol)`.
#[derive(Clone, Copy)]
struct Footprint {
    taps: [(usize, f64, f64, f64); 4],
    len: usize,
}

#[inline]
fn footprint(row: f64, col: f64, rows: usize, cols: usize) -> Footprint {
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let mut fp = Footprint {
        taps: [(0, 0.0, 0.0, 0.0); 4],
        len: 0,
    };
    let candidates = [
        (r0, c0, (1.0 - fr) * (1.0 - fc), -(1.0 - fc), -(1.0 - fr)),
        (r0, c0 + 1.0, (1.0 - fr) * fc, -fc, 1.0 - fr),
        (r0 + 1.0, c0, fr * (1.0 - fc), 1.0 - fc, -fr),
        (r0 + 1.0, c0 + 1.0, fr * fc, fc, fr),
    ];
    for (r, c, w, dwr, dwc) in candidates {
        if r >= 0.0 && c >= 0.0 && r < rows as f64 && c < cols as f64 {
            fp.taps[fp.len] = (r as usize * cols + c as usize, w, dwr, dwc);
            fp.len += 1;
        }
    }
    fp
}

/// Splats all vertices onto a plane.
pub fn splat_probability_map(vertices: &[Vec3], plane: &PlaneFrame, cfg: &RendererConfig) -> ProbabilityMap {
    let (rows, cols) = plane.extent;
    let mut keep = vec![1.0; rows * cols];
    for v in vertices {
        let r = plane.signed_distance(v).abs();
        let q = association_probability(r, cfg);
        if q <= Q_MIN {
            continue;
        }
        let (row, col) = world_to_pixel(v, plane);
        let fp = footprint(row, col, rows, cols);
        for &(p, w, _, _) in &fp.taps[..fp.len] {
            keep[p] *= 1.0 - w * q;
        }
    }
    ProbabilityMap {
        view: plane.view,
        rows,
        cols,
        values: keep.into_iter().map(|k| 1.0 - k).collect(),
    }
}

/// Signed boundary loss `(1/P) Σ_p sdm(p)·Q(p)` of the filled mask region.
pub fn boundary_loss(q: &ProbabilityMap, obs: &ViewObservation) -> Result<f64> {
    let region = RendererConfig {
        supervision: Supervision::Region,
        ..RendererConfig::default()
    };
    boundary_loss_with(q, obs, &region)
}

/// Boundary loss against the potential selected by `cfg.supervision`.
pub fn boundary_loss_with(q: &ProbabilityMap, obs: &ViewObservation, cfg: &RendererConfig) -> Result<f64> {
    if (q.rows, q.cols) != (obs.mask.rows, obs.mask.cols) {
        return Err(Error::Shape(format!(
            "probability map is {}×{}, observation is {}×{}",
            q.rows, q.cols, obs.mask.rows, obs.mask.cols
        )));
    }
    let p = (q.rows * q.cols) as f64;
    Ok(q.values
        .iter()
        .enumerate()
        .map(|(i, &v)| obs.potential(i, cfg) * v)
        .sum::<f64>()
        / p)
}

struct Splatted {
    vertex: usize,
    q: f64,
    /// dq/dv
    dq: Vec3,
    fp: Footprint,
}

/// Reusable per-thread buffers for [`plane_loss`].
pub(crate) struct Scratch {
    keep: Vec<f64>,
    marked: Vec<bool>,
    touched: Vec<usize>,
    splats: Vec<Splatted>,
}

impl Scratch {
    pub(crate) fn new() -> Self {
        Scratch {
            keep: Vec::new(),
            marked: Vec::new(),
            touched: Vec::new(),
            splats: Vec::new(),
        }
    }
}

/// Boundary loss of one plane with its gradient accumulated into `grad`
/// (scaled by `scale`). Returns the unscaled loss.
pub(crate) fn plane_loss(
    vertices: &[Vec3],
    plane: &PlaneFrame,
    obs: &ViewObservation,
    cfg: &RendererConfig,
    mut grad: Option<(&mut [Vec3], f64)>,
    scratch: &mut Scratch,
) -> f64 {
    let (rows, cols) = plane.extent;
    let npix = rows * cols;
    if scratch.keep.len() < npix {
        scratch.keep.resize(npix, 1.0);
        scratch.marked.resize(npix, false);
    }
    scratch.touched.clear();
    scratch.splats.clear();

    let du = vec3::scale(&plane.axis_u, 1.0 / plane.spacing.0);
    let dv = vec3::scale(&plane.axis_v, 1.0 / plane.spacing.1);

    let reach = cfg.cutoff_distance() * (1.0 + 1e-9) + 1e-9;
    for (i, v) in vertices.iter().enumerate() {
        let s = plane.signed_distance(v);
        if s.abs() > reach {
            continue;
        }
        let (q, dq_dr) = association(s.abs(), cfg);
        if q <= Q_MIN {
            continue;
        }
        let (row, col) = world_to_pixel(v, plane);
        let fp = footprint(row, col, rows, cols);
        if fp.len == 0 {
            continue;
        }
        for &(p, w, _, _) in &fp.taps[..fp.len] {
            if !scratch.marked[p] {
                scratch.marked[p] = true;
                scratch.touched.push(p);
            }
            scratch.keep[p] *= 1.0 - w * q;
        }
        let sign = if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        };
        scratch.splats.push(Splatted {
            vertex: i,
            q,
            dq: vec3::scale(&plane.normal, dq_dr * sign),
            fp,
        });
    }

    let inv_p = 1.0 / npix as f64;
    let loss = scratch
        .touched
        .iter()
        .map(|&p| obs.potential(p, cfg) * (1.0 - scratch.keep[p]))
        .sum::<f64>()
        * inv_p;

    if let Some((g, scale)) = grad.as_mut() {
        for sp in &scratch.splats {
            let mut dl_dq = 0.0;
            let mut dl_drow = 0.0;
            let mut dl_dcol = 0.0;
            for &(p, w, dwr, dwc) in &sp.fp.taps[..sp.fp.len] {
                let a = w * sp.q;
                // ∂L/∂a where a = w·q enters Q(p) through the factor (1 − a).
                let dl_da = obs.potential(p, cfg) * inv_p * scratch.keep[p] / (1.0 - a);
                dl_dq += dl_da * w;
                dl_drow += dl_da * sp.q * dwr;
                dl_dcol += dl_da * sp.q * dwc;
            }
            let gi = &mut g[sp.vertex];
            vec3::axpy(gi, *scale * dl_dq, &sp.dq);
            vec3::axpy(gi, *scale * dl_drow, &dv);
            vec3::axpy(gi, *scale * dl_dcol, &du);
        }
    }

    for &p in &scratch.touched {
        scratch.keep[p] = 1.0;
        scratch.marked[p] = false;
    }
    loss
}

/// Sum over planes of the boundary loss for one frame, gradient accumulated
/// into `grad` with weight `scale`.
pub(crate) fn frame_render_loss(
    vertices: &[Vec3],
    planes: &[PlaneFrame],
    observations: &[ViewObservation],
    cfg: &RendererConfig,
    mut grad: Option<(&mut [Vec3], f64)>,
    scratch: &mut Scratch,
) -> f64 {
    let mut total = 0.0;
    for (plane, obs) in planes.iter().zip(observations) {
        let g = grad.as_mut().map(|(g, s)| (&mut **g, *s));
        total += plane_loss(vertices, plane, obs, cfg, g, scratch);
    }
    total
}

/// Rendering loss over a sequence: the mean over frames of the per-frame sum
/// of boundary losses over all planes, with its `N×V×3` gradient.
pub fn render_loss(
    sequence: &MeshSequence,
    planes: &[PlaneFrame],
    observations: &Observations,
    cfg: &RendererConfig,
) -> Result<(f64, Vec<Vec<Vec3>>)> {
    cfg.validate()?;
    if observations.frame_count() != sequence.frame_count() {
        return Err(Error::Shape(format!(
            "{} observation frames for a {}-frame sequence",
            observations.frame_count(),
            sequence.frame_count()
        )));
    }
    let n = sequence.frame_count();
    let scale = 1.0 / n as f64;
    let per_frame: Vec<(f64, Vec<Vec3>)> = (0..n)
        .into_par_iter()
        .map(|t| {
            let verts = sequence.frame(t);
            let mut g = vec![[0.0; 3]; verts.len()];
            let mut scratch = Scratch::new();
            let l = frame_render_loss(verts, planes, observations.frame(t), cfg, Some((&mut g, scale)), &mut scratch);
            (l, g)
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(n);
    for (l, g) in per_frame {
        loss += l;
        grads.push(g);
    }
    Ok((loss * scale, grads))
}

/// Whether the rendering loss is differentiable along world axis `axis` on
/// the whole segment `[v − step, v + step]`: no plane crossing, no cutoff
/// crossing, and the bilinear footprint keeps the same base pixel.
pub fn smooth_along(v: &Vec3, axis: usize, step: f64, planes: &[PlaneFrame], cfg: &RendererConfig) -> bool {
    let mut lo = *v;
    let mut hi = *v;
    lo[axis] -= step;
    hi[axis] += step;
    for plane in planes {
        let state = |p: &Vec3| {
            let s = plane.signed_distance(p);
            let active = association_probability(s.abs(), cfg) > Q_MIN;
            let (row, col) = world_to_pixel(p, plane);
            (s > 0.0, s < 0.0, active, row.floor(), col.floor())
        };
        let (a, b, c) = (state(&lo), state(v), state(&hi));
        if a.0 != c.0 || a.1 != c.1 || a.2 != c.2 || b.2 != a.2 {
            return false;
        }
        if a.2 && (a.3 != c.3 || a.4 != c.4) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::{plane_from_affine, AffineHeader};

    fn cfg() -> RendererConfig {
        RendererConfig::default()
    }

    fn xy_plane(rows: usize, cols: usize) -> PlaneFrame {
        plane_from_affine(&AffineHeader::identity(), ViewTag::FourChamber, (rows, cols)).unwrap()
    }

    #[test]
    fn window_examples() {
        let c = cfg();
        assert_eq!(sigmoid_window(c.window_halfwidth, &c), 0.5);
        let want = 1.0 / (1.0 + (-5f64).exp());
        assert!((sigmoid_window(0.0, &c) - want).abs() < 1e-15);
        assert!((want - 0.993307).abs() < 1e-6);
        assert_eq!(sigmoid_window(1e6, &c), 0.0);
        for d in [0.1, 1.0, 3.7, 40.0] {
            let s = sigmoid_window(c.window_halfwidth - d, &c) + sigmoid_window(c.window_halfwidth + d, &c);
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn association_examples() {
        let c = cfg();
        assert_eq!(association_probability(1e9, &c), 0.0);
        // ℓ → 1 far inside the window.
        let wide = RendererConfig {
            window_halfwidth: 1e3,
            ..c
        };
        let q = association_probability(0.0, &wide);
        assert!((q - (1.0 - (-8f64).exp())).abs() < 1e-15);
        assert!((q - 0.9996645).abs() < 1e-7);
        let zero_mu = RendererConfig { mu: 0.0, ..c };
        assert!(zero_mu.validate().is_err());
    }

    #[test]
    fn cutoff_distance_matches_q_min() {
        let c = cfg();
        let r = c.cutoff_distance();
        assert!((association_probability(r, &c) - Q_MIN).abs() < 1e-12);
    }

    #[test]
    fn splat_examples() {
        let plane = xy_plane(40, 40);
        let c = cfg();
        let far = splat_probability_map(&[[10.0, 10.0, 100.0]], &plane, &c);
        assert!(far.values.iter().all(|&v| v == 0.0));

        // A vertex at the centre of pixel (10, 20) with q = 0.9: choose the distance.
        let target = 0.9;
        let (mut lo, mut hi) = (0.0, 30.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if association_probability(mid, &c) > target {
                lo = mid
            } else {
                hi = mid
            }
        }
        let z = 0.5 * (lo + hi);
        let q = splat_probability_map(&[[20.0, 10.0, z]], &plane, &c);
        assert!((q.get(10, 20) - 0.9).abs() < 1e-12);
        assert_eq!(q.get(11, 20), 0.0);
        assert_eq!(q.get(10, 21), 0.0);

        // Two q=0.5 vertices on the same pixel centre combine by probabilistic OR.
        let (mut lo, mut hi) = (0.0, 30.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if association_probability(mid, &c) > 0.5 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let z = 0.5 * (lo + hi);
        let q = splat_probability_map(&[[5.0, 5.0, z], [5.0, 5.0, -z]], &plane, &c);
        assert!((q.get(5, 5) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn bilinear_weights_sum_to_one() {
        for (r, c) in [(3.25, 7.5), (0.0, 0.0), (10.999, 2.001)] {
            let fp = footprint(r, c, 20, 20);
            let s: f64 = fp.taps[..fp.len].iter().map(|t| t.1).sum();
            assert!((s - 1.0).abs() < 1e-15);
            let dr: f64 = fp.taps[..fp.len].iter().map(|t| t.2).sum();
            let dc: f64 = fp.taps[..fp.len].iter().map(|t| t.3).sum();
            assert!(dr.abs() < 1e-15 && dc.abs() < 1e-15);
        }
        // Partially out of extent: only in-range taps.
        assert_eq!(footprint(-0.5, 3.0, 20, 20).len, 2);
        assert_eq!(footprint(-5.0, 3.0, 20, 20).len, 0);
    }

    fn square_obs(rows: usize, cols: usize) -> ViewObservation {
        let mut m = Mask::empty(rows, cols);
        for r in 10..30 {
            for c in 10..30 {
                m.data[r * cols + c] = true;
            }
        }
        ViewObservation::from_mask(ViewTag::FourChamber, 0, m)
    }

    #[test]
    fn boundary_loss_examples() {
        let obs = square_obs(40, 40);
        let zero = ProbabilityMap {
            view: ViewTag::FourChamber,
            rows: 40,
            cols: 40,
            values: vec![0.0; 1600],
        };
        assert_eq!(boundary_loss(&zero, &obs).unwrap(), 0.0);

        let mut unit = zero.clone();
        let idx = obs.sdm.iter().position(|&d| d == -3.0).unwrap();
        unit.values[idx] = 1.0;
        assert_eq!(boundary_loss(&unit, &obs).unwrap(), -3.0 / 1600.0);

        let small = ProbabilityMap {
            rows: 4,
            cols: 4,
            values: vec![0.0; 16],
            ..zero
        };
        assert!(boundary_loss(&small, &obs).is_err());
    }

    #[test]
    fn boundary_loss_increases_moving_out() {
        let plane = xy_plane(80, 80);
        let obs = square_obs(80, 80);
        let c = cfg();
        let blob: Vec<Vec3> = (0..5)
            .flat_map(|i| (0..5).map(move |j| [i as f64 * 0.5, j as f64 * 0.5, 0.3]))
            .collect();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..10 {
            // From the middle of the square to well outside it.
            let shift = [19.0 + 2.5 * k as f64, 18.0, 0.0];
            let moved: Vec<Vec3> = blob.iter().map(|p| vec3::add(p, &shift)).collect();
            let q = splat_probability_map(&moved, &plane, &c);
            let l = boundary_loss(&q, &obs).unwrap();
            assert!(l > prev, "offset {k}: {l} <= {prev}");
            prev = l;
        }
    }

    #[test]
    fn sparse_plane_loss_matches_dense() {
        let plane = xy_plane(40, 40);
        let obs = square_obs(40, 40);
        for sup in [Supervision::Contour, Supervision::Region] {
            let c = RendererConfig {
                supervision: sup,
                ..cfg()
            };
            let verts: Vec<Vec3> = (0..50)
                .map(|i| {
                    let a = i as f64 * 0.37;
                    [20.0 + 9.0 * a.cos(), 20.0 + 11.0 * a.sin(), (i as f64 * 0.9).sin() * 6.0]
                })
                .collect();
            let dense = boundary_loss_with(&splat_probability_map(&verts, &plane, &c), &obs, &c).unwrap();
            let sparse = plane_loss(&verts, &plane, &obs, &c, None, &mut Scratch::new());
            assert!((dense - sparse).abs() < 1e-15, "{dense} vs {sparse}");
        }
    }

    #[test]
    fn missing_observation_named() {
        let plane = xy_plane(8, 8);
        let err = Observations::new(&[plane], 2, vec![ViewObservation::from_mask(
            ViewTag::FourChamber,
            0,
            Mask::empty(8, 8),
        )])
        .unwrap_err();
        assert!(matches!(err, Error::MissingObservation { frame: 1, .. }), "{err}");
    }
}

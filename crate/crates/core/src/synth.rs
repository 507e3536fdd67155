//! Synthetic beating whole-heart phantoms with their imaging planes and
//! ground-truth masks.
//!
//! Chambers are icospheres in a heart frame whose long axis is `+z` through
//! the LV centre. The LV myocardium is a shell: an outer sphere plus an
//! inward-wound copy of the LV cavity surface. A seed-dependent rigid pose
//! moves the whole scene (meshes and planes) so that planes are not aligned
//! with the world axes.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{unit_icosphere, Component, LabeledMesh, MeshSequence};
use crate::plane::{plane_from_affine, slice_mesh_with_plane, AffineHeader, PlaneFrame, ViewTag};
use crate::raster::rasterize_slice;
use crate::render::ViewObservation;
use crate::vec3::{self, Rigid, Vec3};

/// Per-chamber scalar parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chambers {
    pub lv: f64,
    pub rv: f64,
    pub la: f64,
    pub ra: f64,
}

impl Chambers {
    fn named(&self) -> [(&'static str, f64); 4] {
        [("lv", self.lv), ("rv", self.rv), ("la", self.la), ("ra", self.ra)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub frames: usize,
    pub sax_slices: usize,
    /// Distance between adjacent short-axis planes, mm.
    pub sax_gap: f64,
    /// End-diastolic chamber radii, mm.
    pub radii: Chambers,
    /// LV wall thickness at end-diastole, mm.
    pub myocardium_thickness: f64,
    /// Fractional radial contraction per chamber, in `[0, 0.5)`.
    pub amplitudes: Chambers,
    /// Phase offsets, radians. Atria default to `π` (antiphase).
    pub phases: Chambers,
    /// Minimum clearance between chamber surfaces, mm.
    pub clearance: f64,
    /// Image extent `(rows, cols)`.
    pub extent: (usize, usize),
    /// In-plane pixel spacing, mm per pixel.
    pub spacing: f64,
    /// Slice thickness written into the affine headers, mm.
    pub slice_thickness: f64,
    /// Maximum translation of the random scene pose, mm. Zero with
    /// `random_pose = false` leaves the heart frame as world frame.
    pub pose_shift: f64,
    pub random_pose: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            frames: 25,
            sax_slices: 9,
            sax_gap: 10.0,
            radii: Chambers {
                lv: 20.0,
                rv: 18.0,
                la: 14.0,
                ra: 14.0,
            },
            myocardium_thickness: 8.0,
            amplitudes: Chambers {
                lv: 0.25,
                rv: 0.20,
                la: 0.15,
                ra: 0.15,
            },
            phases: Chambers {
                lv: 0.0,
                rv: 0.0,
                la: PI,
                ra: PI,
            },
            clearance: 4.0,
            extent: (150, 150),
            spacing: 1.2,
            slice_thickness: 8.0,
            pose_shift: 10.0,
            random_pose: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 4 {
            return Err(Error::config("frames", format!("must be at least 4, got {}", self.frames)));
        }
        if self.sax_slices == 0 {
            return Err(Error::config("sax_slices", "must be at least 1"));
        }
        for (field, v) in [
            ("sax_gap", self.sax_gap),
            ("myocardium_thickness", self.myocardium_thickness),
            ("spacing", self.spacing),
            ("slice_thickness", self.slice_thickness),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        for (name, r) in self.radii.named() {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::config(format!("radii.{name}"), format!("must be positive, got {r}")));
            }
        }
        for (name, a) in self.amplitudes.named() {
            if !(0.0..0.5).contains(&a) {
                return Err(Error::config(
                    format!("amplitudes.{name}"),
                    format!("must lie in [0, 0.5), got {a}"),
                ));
            }
        }
        for (name, p) in self.phases.named() {
            if !p.is_finite() {
                return Err(Error::config(format!("phases.{name}"), "must be finite"));
            }
        }
        if !(self.clearance >= 0.0) || !(self.pose_shift >= 0.0) {
            return Err(Error::config("clearance", "clearance and pose_shift must be nonnegative"));
        }
        if self.extent.0 == 0 || self.extent.1 == 0 {
            return Err(Error::config("extent", "must be nonempty"));
        }
        Ok(())
    }

    /// Radial scale factor of a chamber at frame `t`.
    pub fn scale(&self, amplitude: f64, phase: f64, t: usize) -> f64 {
        1.0 - amplitude * (1.0 - (TAU * t as f64 / self.frames as f64 + phase).cos()) / 2.0
    }

    fn pose(&self) -> Rigid {
        if self.random_pose {
            Rigid::random(&mut ChaCha8Rng::seed_from_u64(self.seed), self.pose_shift)
        } else {
            Rigid::identity()
        }
    }
}

/// Heart-frame chamber layout at end-diastolic radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub lv: Vec3,
    pub rv: Vec3,
    pub la: Vec3,
    pub ra: Vec3,
    /// Axis-aligned bounds of all chambers at their largest, heart frame.
    pub min: Vec3,
    pub max: Vec3,
}

/// Chamber centres: RV beside the LV along `+x`, LA above it along `+z`,
/// RA above the RV. Spacing uses the largest radius each chamber reaches.
pub fn layout(config: &SynthConfig) -> Layout {
    let r = &config.radii;
    let epi = r.lv + config.myocardium_thickness;
    let g = config.clearance;
    let lv = [0.0; 3];
    let rv = [epi + g + r.rv, 0.0, 0.0];
    let la = [0.0, 0.0, epi + g + r.la];
    let ra = [rv[0], 0.0, (epi + g + r.la).max(r.rv + g + r.ra)];
    let spheres = [(lv, epi), (rv, r.rv), (la, r.la), (ra, r.ra)];
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for (c, rad) in spheres {
        for k in 0..3 {
            min[k] = min[k].min(c[k] - rad);
            max[k] = max[k].max(c[k] + rad);
        }
    }
    Layout {
        lv,
        rv,
        la,
        ra,
        min,
        max,
    }
}

/// Smallest subdivision level whose longest edge at `radius` is at most `max_edge`.
fn subdivision_for(radius: f64, max_edge: f64) -> u32 {
    for k in 0..7 {
        let (dirs, faces) = unit_icosphere(k);
        let longest = faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| vec3::dist(&dirs[a], &dirs[b]))
            .fold(0.0, f64::max);
        if longest * radius <= max_edge {
            return k;
        }
    }
    7
}

struct Part {
    label: Component,
    dirs: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    centre: Vec3,
    inward: bool,
    /// Radius at frame t.
    radius: Box<dyn Fn(usize) -> f64 + Send + Sync>,
}

fn parts(config: &SynthConfig) -> Vec<Part> {
    let l = layout(config);
    let max_edge = 2.0 * config.spacing;
    let r = config.radii;
    let a = config.amplitudes;
    let p = config.phases;
    let cfg = config.clone();
    let scale = move |amp: f64, ph: f64| {
        let cfg = cfg.clone();
        move |t: usize| cfg.scale(amp, ph, t)
    };
    let sphere = |radius: f64| unit_icosphere(subdivision_for(radius, max_edge));

    let lv_scale = scale(a.lv, p.lv);
    let endo = move |t: usize| r.lv * lv_scale(t);
    let endo_c = endo.clone();
    let thickness = config.myocardium_thickness;
    // Wall volume is conserved through the cycle.
    let epi = move |t: usize| {
        let e0 = r.lv + thickness;
        (endo_c(t).powi(3) + e0.powi(3) - r.lv.powi(3)).cbrt()
    };

    let (lv_dirs, lv_faces) = sphere(r.lv);
    let (epi_dirs, epi_faces) = sphere(r.lv + thickness);
    let (rv_dirs, rv_faces) = sphere(r.rv);
    let (la_dirs, la_faces) = sphere(r.la);
    let (ra_dirs, ra_faces) = sphere(r.ra);
    let rv_s = scale(a.rv, p.rv);
    let la_s = scale(a.la, p.la);
    let ra_s = scale(a.ra, p.ra);
    vec![
        Part {
            label: Component::Lv,
            dirs: lv_dirs.clone(),
            faces: lv_faces.clone(),
            centre: l.lv,
            inward: false,
            radius: Box::new(endo.clone()),
        },
        Part {
            label: Component::LvMyo,
            dirs: epi_dirs,
            faces: epi_faces,
            centre: l.lv,
            inward: false,
            radius: Box::new(epi),
        },
        Part {
            label: Component::LvMyo,
            dirs: lv_dirs,
            faces: lv_faces,
            centre: l.lv,
            inward: true,
            radius: Box::new(endo),
        },
        Part {
            label: Component::Rv,
            dirs: rv_dirs,
            faces: rv_faces,
            centre: l.rv,
            inward: false,
            radius: Box::new(move |t| r.rv * rv_s(t)),
        },
        Part {
            label: Component::La,
            dirs: la_dirs,
            faces: la_faces,
            centre: l.la,
            inward: false,
            radius: Box::new(move |t| r.la * la_s(t)),
        },
        Part {
            label: Component::Ra,
            dirs: ra_dirs,
            faces: ra_faces,
            centre: l.ra,
            inward: false,
            radius: Box::new(move |t| r.ra * ra_s(t)),
        },
    ]
}

/// The beating five-component phantom, one frame per time step.
pub fn generate_heart(config: &SynthConfig) -> Result<MeshSequence> {
    config.validate()?;
    let pose = config.pose();
    let parts = parts(config);
    let mut faces = Vec::new();
    let mut labels = Vec::new();
    let mut offset = 0;
    for part in &parts {
        faces.extend(part.faces.iter().map(|f| {
            let f = [f[0] + offset, f[1] + offset, f[2] + offset];
            if part.inward {
                [f[0], f[2], f[1]]
            } else {
                f
            }
        }));
        labels.extend(std::iter::repeat(part.label).take(part.dirs.len()));
        offset += part.dirs.len();
    }
    let frames = (0..config.frames)
        .map(|t| {
            parts
                .iter()
                .flat_map(|part| {
                    let r = (part.radius)(t);
                    part.dirs
                        .iter()
                        .map(move |d| vec3::add(&part.centre, &vec3::scale(d, r)))
                })
                .map(|p| pose.apply_point(&p))
                .collect()
        })
        .collect();
    MeshSequence::new(frames, faces, labels)
}

/// Smallest surface-to-surface gap between distinct chambers over the cycle,
/// mm. Negative values mean overlap. Informational.
pub fn min_clearance(config: &SynthConfig) -> f64 {
    let l = layout(config);
    let parts = parts(config);
    // Index of each distinct chamber's outer surface in `parts`.
    let outer = [(l.lv, 1), (l.rv, 3), (l.la, 4), (l.ra, 5)];
    let mut gap = f64::INFINITY;
    for t in 0..config.frames {
        for i in 0..outer.len() {
            for j in i + 1..outer.len() {
                let (ci, pi) = outer[i];
                let (cj, pj) = outer[j];
                let d = vec3::dist(&ci, &cj) - (parts[pi].radius)(t) - (parts[pj].radius)(t);
                gap = gap.min(d);
            }
        }
    }
    gap
}

/// One generated plane with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPlane {
    pub header: AffineHeader,
    pub frame: PlaneFrame,
}

/// Three long-axis planes containing the LV long axis (4CH through the RV,
/// 2CH at 60°, 3CH at 120°) and a short-axis stack orthogonal to it.
pub fn generate_planes(config: &SynthConfig) -> Result<Vec<SynthPlane>> {
    config.validate()?;
    let l = layout(config);
    let pose = config.pose();
    let centre = vec3::scale(&vec3::add(&l.min, &l.max), 0.5);
    let (rows, cols) = config.extent;
    let s = config.spacing;

    // (view, u, v, point on plane) in heart coordinates; normal = u × v.
    let mut specs: Vec<(ViewTag, Vec3, Vec3, Vec3)> = Vec::new();
    for (view, deg) in [
        (ViewTag::FourChamber, 0.0f64),
        (ViewTag::TwoChamber, 60.0),
        (ViewTag::ThreeChamber, 120.0),
    ] {
        let th = deg.to_radians();
        specs.push((view, [th.cos(), th.sin(), 0.0], [0.0, 0.0, -1.0], l.lv));
    }
    let z_mid = centre[2];
    for k in 0..config.sax_slices {
        let z = z_mid + (k as f64 - (config.sax_slices as f64 - 1.0) / 2.0) * config.sax_gap;
        specs.push((
            ViewTag::ShortAxis(k as u32 + 1),
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [l.lv[0], l.lv[1], z],
        ));
    }

    specs
        .into_iter()
        .map(|(view, u, v, point)| {
            let n = vec3::cross(&u, &v);
            // Image centre: the heart's bounding-box centre projected onto the plane.
            let c = vec3::sub(&centre, &vec3::scale(&n, vec3::dot(&n, &vec3::sub(&centre, &point))));
            let mut origin = c;
            vec3::axpy(&mut origin, -s * (cols as f64 - 1.0) / 2.0, &u);
            vec3::axpy(&mut origin, -s * (rows as f64 - 1.0) / 2.0, &v);
            let header = AffineHeader::from_columns(
                vec3::scale(&pose.apply_vector(&u), s),
                vec3::scale(&pose.apply_vector(&v), s),
                vec3::scale(&pose.apply_vector(&n), config.slice_thickness),
                pose.apply_point(&origin),
            );
            let frame = plane_from_affine(&header, view, config.extent)?;
            Ok(SynthPlane { header, frame })
        })
        .collect()
}

/// Ground-truth mask and distance map for every `(plane, frame)`, ordered
/// frame-major.
pub fn render_ground_truth(seq: &MeshSequence, planes: &[PlaneFrame]) -> Result<Vec<ViewObservation>> {
    let per_frame: Vec<Result<Vec<ViewObservation>>> = (0..seq.frame_count())
        .into_par_iter()
        .map(|t| {
            let mesh: LabeledMesh = seq.mesh(t);
            planes
                .iter()
                .map(|plane| {
                    let slice = slice_mesh_with_plane(&mesh, plane)?;
                    let mask = rasterize_slice(&slice, plane.extent.0, plane.extent.1);
                    Ok(ViewObservation::from_mask(plane.view, t, mask))
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(seq.frame_count() * planes.len());
    for f in per_frame {
        out.extend(f?);
    }
    Ok(out)
}

/// A complete synthetic dataset held in memory.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub sequence: MeshSequence,
    pub planes: Vec<SynthPlane>,
    pub observations: Vec<ViewObservation>,
}

impl SynthDataset {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        let sequence = generate_heart(config)?;
        let planes = generate_planes(config)?;
        let frames: Vec<PlaneFrame> = planes.iter().map(|p| p.frame.clone()).collect();
        let observations = render_ground_truth(&sequence, &frames)?;
        Ok(SynthDataset {
            config: config.clone(),
            sequence,
            planes,
            observations,
        })
    }

    pub fn plane_frames(&self) -> Vec<PlaneFrame> {
        self.planes.iter().map(|p| p.frame.clone()).collect()
    }
}

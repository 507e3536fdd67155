//! Imaging-plane geometry.
//!
//! A plane is recovered from the 4×4 affine image header that maps
//! homogeneous pixel coordinates `(col, row, slice, 1)` to world millimetres.
//! The first two columns give the in-plane axes and pixel spacing, the last
//! column the world position of the centre of pixel `(0, 0)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::contour::Polyline;
use crate::error::{Error, Result};
use crate::mesh::{Component, LabeledMesh};
use crate::vec3::{self, Rigid, Vec3};

/// Default in-plane image extent `(rows, cols)`.
pub const DEFAULT_EXTENT: (usize, usize) = (150, 150);

/// View tag of an imaging plane. Short-axis stacks are split into one tag per slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViewTag {
    TwoChamber,
    ThreeChamber,
    FourChamber,
    ShortAxis(u32),
}

impl ViewTag {
    /// Group name: `2CH`, `3CH`, `4CH` or `SAX`.
    pub fn group(&self) -> &'static str {
        match self {
            ViewTag::TwoChamber => "2CH",
            ViewTag::ThreeChamber => "3CH",
            ViewTag::FourChamber => "4CH",
            ViewTag::ShortAxis(_) => "SAX",
        }
    }
}

impl fmt::Display for ViewTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewTag::ShortAxis(k) => write!(f, "SAX{k}"),
            other => f.write_str(other.group()),
        }
    }
}

impl FromStr for ViewTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "2CH" => Ok(ViewTag::TwoChamber),
            "3CH" => Ok(ViewTag::ThreeChamber),
            "4CH" => Ok(ViewTag::FourChamber),
            _ => s
                .strip_prefix("SAX")
                .and_then(|k| k.parse::<u32>().ok())
                .map(ViewTag::ShortAxis)
                .ok_or_else(|| format!("unknown view tag {s:?} (expected 2CH, 3CH, 4CH or SAX<k>)")),
        }
    }
}

impl Serialize for ViewTag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ViewTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Row-major 4×4 matrix mapping `(col, row, slice, 1)` to world mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineHeader {
    pub matrix: [[f64; 4]; 4],
}

impl AffineHeader {
    pub fn identity() -> Self {
        let mut matrix = [[0.0; 4]; 4];
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        AffineHeader { matrix }
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::Affine(format!("expected 16 numbers, got {}", values.len())));
        }
        let mut matrix = [[0.0; 4]; 4];
        for (i, row) in matrix.iter_mut().enumerate() {
            row.copy_from_slice(&values[i * 4..i * 4 + 4]);
        }
        Ok(AffineHeader { matrix })
    }

    pub fn row_major(&self) -> Vec<f64> {
        self.matrix.iter().flatten().copied().collect()
    }

    /// Header with the given column vectors: col axis, row axis, slice axis, origin.
    pub fn from_columns(col_axis: Vec3, row_axis: Vec3, slice_axis: Vec3, origin: Vec3) -> Self {
        let mut matrix = [[0.0; 4]; 4];
        for i in 0..3 {
            matrix[i] = [col_axis[i], row_axis[i], slice_axis[i], origin[i]];
        }
        matrix[3] = [0.0, 0.0, 0.0, 1.0];
        AffineHeader { matrix }
    }

    pub fn column(&self, j: usize) -> Vec3 {
        [self.matrix[0][j], self.matrix[1][j], self.matrix[2][j]]
    }

    /// World position of homogeneous pixel coordinates.
    pub fn apply(&self, col: f64, row: f64, slice: f64) -> Vec3 {
        let h = [col, row, slice, 1.0];
        [
            (0..4).map(|j| self.matrix[0][j] * h[j]).sum(),
            (0..4).map(|j| self.matrix[1][j] * h[j]).sum(),
            (0..4).map(|j| self.matrix[2][j] * h[j]).sum(),
        ]
    }
}

/// One imaging plane in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFrame {
    pub view: ViewTag,
    /// World position of the centre of pixel `(0, 0)`.
    pub origin: Vec3,
    pub normal: Vec3,
    /// Direction of increasing column index.
    pub axis_u: Vec3,
    /// Direction of increasing row index.
    pub axis_v: Vec3,
    /// `(mm per column step, mm per row step)`.
    pub spacing: (f64, f64),
    /// `(rows, cols)`.
    pub extent: (usize, usize),
}

/// Recovers the plane frame from an affine header.
pub fn plane_from_affine(header: &AffineHeader, view: ViewTag, extent: (usize, usize)) -> Result<PlaneFrame> {
    let m = &header.matrix;
    if m[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::Affine(format!(
            "bottom row must be [0, 0, 0, 1], got {:?}",
            m[3]
        )));
    }
    let cu = header.column(0);
    let cv = header.column(1);
    let cw = header.column(2);
    let su = vec3::norm(&cu);
    let sv = vec3::norm(&cv);
    if su < 1e-9 || sv < 1e-9 {
        return Err(Error::Affine(format!(
            "near-singular in-plane columns (norms {su:e}, {sv:e})"
        )));
    }
    let u = vec3::scale(&cu, 1.0 / su);
    let v = vec3::scale(&cv, 1.0 / sv);
    let cos = vec3::dot(&u, &v);
    if cos.abs() > 1e-6 {
        let angle = cos.clamp(-1.0, 1.0).acos().to_degrees();
        return Err(Error::Affine(format!(
            "in-plane axes are not orthogonal (angle {angle:.6}°)"
        )));
    }
    let det = vec3::dot(&cu, &vec3::cross(&cv, &cw));
    if det.abs() < 1e-12 * su * sv * vec3::norm(&cw).max(1e-300) || vec3::norm(&cw) < 1e-9 {
        return Err(Error::Affine("header is not invertible".into()));
    }
    let normal = vec3::normalize(&vec3::cross(&u, &v)).expect("orthonormal axes");
    if extent.0 == 0 || extent.1 == 0 {
        return Err(Error::Affine(format!("empty extent {extent:?}")));
    }
    Ok(PlaneFrame {
        view,
        origin: header.column(3),
        normal,
        axis_u: u,
        axis_v: v,
        spacing: (su, sv),
        extent,
    })
}

impl PlaneFrame {
    /// Signed normal offset `n·(p − c)`.
    #[inline]
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        vec3::dot(&self.normal, &vec3::sub(p, &self.origin))
    }

    /// Header reproducing this frame, with `slice_thickness` along the normal.
    pub fn to_affine(&self, slice_thickness: f64) -> AffineHeader {
        AffineHeader::from_columns(
            vec3::scale(&self.axis_u, self.spacing.0),
            vec3::scale(&self.axis_v, self.spacing.1),
            vec3::scale(&self.normal, slice_thickness),
            self.origin,
        )
    }

    /// World point at fractional pixel `(row, col)` on the plane.
    pub fn pixel_to_world(&self, row: f64, col: f64) -> Vec3 {
        let mut p = self.origin;
        vec3::axpy(&mut p, col * self.spacing.0, &self.axis_u);
        vec3::axpy(&mut p, row * self.spacing.1, &self.axis_v);
        p
    }

    pub fn pixel_count(&self) -> usize {
        self.extent.0 * self.extent.1
    }

    /// The same plane moved by a rigid motion; pixel grid and view are kept.
    pub fn transformed(&self, rigid: &Rigid) -> PlaneFrame {
        PlaneFrame {
            view: self.view,
            origin: rigid.apply_point(&self.origin),
            normal: rigid.apply_vector(&self.normal),
            axis_u: rigid.apply_vector(&self.axis_u),
            axis_v: rigid.apply_vector(&self.axis_v),
            spacing: self.spacing,
            extent: self.extent,
        }
    }
}

/// Absolute normal distance from `v` to the plane, in mm.
#[inline]
pub fn vertex_plane_distance(v: &Vec3, plane: &PlaneFrame) -> f64 {
    plane.signed_distance(v).abs()
}

/// Orthogonal projection of `v` into fractional pixel coordinates `(row, col)`.
/// Coordinates outside the extent are returned unchanged.
#[inline]
pub fn world_to_pixel(v: &Vec3, plane: &PlaneFrame) -> (f64, f64) {
    let d = vec3::sub(v, &plane.origin);
    (
        vec3::dot(&d, &plane.axis_v) / plane.spacing.1,
        vec3::dot(&d, &plane.axis_u) / plane.spacing.0,
    )
}

/// Per-component cross-section polylines of a mesh, in pixel coordinates.
pub type Slice = BTreeMap<Component, Vec<Polyline>>;

/// Intersects every labeled component with the plane.
///
/// Each triangle whose vertices straddle the plane contributes one segment;
/// segments are chained through shared mesh edges into polylines. Vertices
/// lying exactly on the plane are treated as being on its positive side, so
/// every triangle is cut by zero or two of its edges.
pub fn slice_mesh_with_plane(mesh: &LabeledMesh, plane: &PlaneFrame) -> Result<Slice> {
    slice_vertices(mesh.vertices(), mesh.faces(), mesh.labels(), plane)
}

pub(crate) fn slice_vertices(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    labels: &[Component],
    plane: &PlaneFrame,
) -> Result<Slice> {
    let s: Vec<f64> = vertices.iter().map(|p| plane.signed_distance(p)).collect();
    let above = |i: usize| s[i] >= 0.0;

    // edge key -> faces crossing it, grouped per component
    let mut links: BTreeMap<Component, BTreeMap<(usize, usize), Vec<(usize, usize)>>> = BTreeMap::new();
    for f in faces {
        let crossing: Vec<(usize, usize)> = [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
            .into_iter()
            .filter(|&(a, b)| above(a) != above(b))
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        if crossing.len() != 2 {
            continue;
        }
        let comp = links.entry(labels[f[0]]).or_default();
        comp.entry(crossing[0]).or_default().push(crossing[1]);
        comp.entry(crossing[1]).or_default().push(crossing[0]);
    }

    let point = |(a, b): (usize, usize)| -> [f64; 2] {
        let t = s[a] / (s[a] - s[b]);
        let p = vec3::add(&vertices[a], &vec3::scale(&vec3::sub(&vertices[b], &vertices[a]), t));
        let (row, col) = world_to_pixel(&p, plane);
        [row, col]
    };

    let mut out = Slice::new();
    for (component, graph) in links {
        for (&(a, b), nbrs) in &graph {
            if nbrs.len() > 2 {
                return Err(Error::NonManifoldSlice {
                    a,
                    b,
                    count: nbrs.len(),
                });
            }
        }
        let mut visited: BTreeMap<(usize, usize), bool> = graph.keys().map(|&k| (k, false)).collect();
        let mut polylines = Vec::new();
        // Open chains start at degree-1 nodes; what remains are cycles.
        let starts: Vec<(usize, usize)> = graph
            .iter()
            .filter(|(_, n)| n.len() == 1)
            .map(|(&k, _)| k)
            .chain(graph.keys().copied())
            .collect();
        for start in starts {
            if visited[&start] {
                continue;
            }
            let open = graph[&start].len() == 1;
            let mut chain = vec![start];
            visited.insert(start, true);
            let mut current = start;
            while let Some(&next) = graph[&current].iter().find(|k| !visited[*k]) {
                visited.insert(next, true);
                chain.push(next);
                current = next;
            }
            polylines.push(Polyline {
                points: chain.into_iter().map(point).collect(),
                closed: !open,
            });
        }
        out.insert(component, polylines);
    }
    Ok(out)
}

/// One entry of a plane configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneEntry {
    pub view: ViewTag,
    /// 16 numbers, row-major.
    pub affine: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl PlaneEntry {
    pub fn new(header: &AffineHeader, view: ViewTag, extent: (usize, usize)) -> Self {
        PlaneEntry {
            view,
            affine: header.row_major(),
            rows: extent.0,
            cols: extent.1,
        }
    }

    pub fn header(&self) -> Result<AffineHeader> {
        AffineHeader::from_row_major(&self.affine)
    }

    pub fn frame(&self) -> Result<PlaneFrame> {
        plane_from_affine(&self.header()?, self.view, (self.rows, self.cols))
    }
}

/// Reads a plane configuration file (a JSON array of [`PlaneEntry`]).
pub fn load_planes(path: &Path) -> Result<Vec<PlaneEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<PlaneEntry> = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.view) {
            return Err(Error::Invalid(format!(
                "{}: duplicate view {}",
                path.display(),
                e.view
            )));
        }
        e.frame().map_err(|err| Error::Invalid(format!("{}: view {}: {err}", path.display(), e.view)))?;
    }
    Ok(entries)
}

pub fn planes_json(entries: &[PlaneEntry]) -> String {
    serde_json::to_string_pretty(entries).expect("plane entries serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn approx(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        vec3::dist(a, b) < tol
    }

    #[test]
    fn identity_affine() {
        let p = plane_from_affine(&AffineHeader::identity(), ViewTag::FourChamber, (150, 150)).unwrap();
        assert_eq!(p.origin, [0.0; 3]);
        assert_eq!(p.normal, [0.0, 0.0, 1.0]);
        assert_eq!(p.spacing, (1.0, 1.0));
        assert_eq!(p.extent, (150, 150));
    }

    #[test]
    fn scaled_affine() {
        let mut h = AffineHeader::identity();
        for i in 0..3 {
            h.matrix[i][i] = 1.5;
        }
        let p = plane_from_affine(&h, ViewTag::TwoChamber, (150, 150)).unwrap();
        assert_eq!(p.spacing, (1.5, 1.5));
        assert_eq!(p.axis_u, [1.0, 0.0, 0.0]);
        assert_eq!(p.axis_v, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn rotated_affine_normal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let r = Rigid::random(&mut rng, 30.0);
            let col = |j: usize| [r.rotation[0][j], r.rotation[1][j], r.rotation[2][j]];
            let h = AffineHeader::from_columns(
                vec3::scale(&col(0), 1.2),
                vec3::scale(&col(1), 0.9),
                vec3::scale(&col(2), 8.0),
                r.translation,
            );
            let p = plane_from_affine(&h, ViewTag::ShortAxis(0), (150, 150)).unwrap();
            assert!(approx(&p.normal, &col(2), 1e-12));
            assert!((p.spacing.0 - 1.2).abs() < 1e-12 && (p.spacing.1 - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_rejections() {
        let mut h = AffineHeader::identity();
        h.matrix[0][0] = 0.0;
        assert!(matches!(
            plane_from_affine(&h, ViewTag::TwoChamber, (150, 150)),
            Err(Error::Affine(_))
        ));
        let mut skew = AffineHeader::identity();
        skew.matrix[0][1] = 0.1;
        let err = plane_from_affine(&skew, ViewTag::TwoChamber, (150, 150)).unwrap_err();
        assert!(err.to_string().contains("angle"), "{err}");
    }

    #[test]
    fn distance_examples() {
        let mut h = AffineHeader::identity();
        h.matrix[0][3] = 3.0;
        h.matrix[1][3] = -2.0;
        let p = plane_from_affine(&h, ViewTag::FourChamber, (150, 150)).unwrap();
        let c = p.origin;
        assert_eq!(vertex_plane_distance(&c, &p), 0.0);
        let v = vec3::add(&c, &vec3::scale(&p.normal, 2.0));
        assert_eq!(vertex_plane_distance(&v, &p), 2.0);
        let mut w = c;
        vec3::axpy(&mut w, 3.0, &p.axis_u);
        vec3::axpy(&mut w, 4.0, &p.normal);
        assert!((vertex_plane_distance(&w, &p) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn pixel_examples() {
        let mut h = AffineHeader::identity();
        h.matrix[0][0] = 1.3;
        h.matrix[1][1] = 0.7;
        let p = plane_from_affine(&h, ViewTag::TwoChamber, (150, 150)).unwrap();
        assert_eq!(world_to_pixel(&p.origin, &p), (0.0, 0.0));
        let mut v = p.origin;
        vec3::axpy(&mut v, 5.0 * p.spacing.0, &p.axis_u);
        let (r, c) = world_to_pixel(&v, &p);
        assert!(r.abs() < 1e-12 && (c - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_slice_through_centre_is_circle() {
        let r = 20.0;
        let mesh = icosphere(3, r, [75.0, 75.0, 0.0], Component::Lv);
        let plane = plane_from_affine(&AffineHeader::identity(), ViewTag::ShortAxis(0), (150, 150)).unwrap();
        let slice = slice_mesh_with_plane(&mesh, &plane).unwrap();
        let loops = &slice[&Component::Lv];
        assert_eq!(loops.len(), 1);
        assert!(loops[0].closed);
        let perimeter = loops[0].length();
        let circle = 2.0 * std::f64::consts::PI * r;
        assert!((perimeter - circle).abs() / circle < 0.02, "{perimeter} vs {circle}");
    }

    #[test]
    fn sphere_slice_area_at_offsets() {
        let r = 10.0;
        let mesh = icosphere(3, r, [20.0, 20.0, 0.0], Component::Lv);
        for d in [0.0, 2.5, 5.0, 7.0] {
            let mut h = AffineHeader::identity();
            h.matrix[2][3] = d + 1e-7;
            let plane = plane_from_affine(&h, ViewTag::ShortAxis(1), (150, 150)).unwrap();
            let slice = slice_mesh_with_plane(&mesh, &plane).unwrap();
            let area = slice[&Component::Lv][0].signed_area().abs();
            let want = std::f64::consts::PI * (r * r - d * d);
            assert!((area - want).abs() / want < 0.03, "d={d}: {area} vs {want}");
        }
    }

    #[test]
    fn miss_and_tangent() {
        let mesh = icosphere(2, 5.0, [0.0, 0.0, 0.0], Component::Ra);
        let mut h = AffineHeader::identity();
        h.matrix[2][3] = 6.0;
        let plane = plane_from_affine(&h, ViewTag::TwoChamber, (150, 150)).unwrap();
        assert!(slice_mesh_with_plane(&mesh, &plane).unwrap().is_empty());

        // Plane through the topmost vertex.
        let top = mesh
            .vertices()
            .iter()
            .cloned()
            .fold([0.0, 0.0, f64::MIN], |a, b| if b[2] > a[2] { b } else { a });
        h.matrix[2][3] = top[2];
        let plane = plane_from_affine(&h, ViewTag::TwoChamber, (150, 150)).unwrap();
        let slice = slice_mesh_with_plane(&mesh, &plane).unwrap();
        let loops: usize = slice.values().map(|v| v.len()).sum();
        assert!(loops <= 1);
        if let Some(l) = slice.values().flatten().next() {
            assert!(l.length() < 1e-9);
        }
    }

    #[test]
    fn planes_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("planes.json");
        let entries = vec![
            PlaneEntry::new(&AffineHeader::identity(), ViewTag::FourChamber, (150, 150)),
            PlaneEntry::new(&AffineHeader::identity(), ViewTag::ShortAxis(3), (10, 20)),
        ];
        std::fs::write(&path, planes_json(&entries)).unwrap();
        assert_eq!(load_planes(&path).unwrap(), entries);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"view\": \"SAX3\""));
    }

    proptest! {
        #[test]
        fn pixel_round_trip(seed in 0u64..1000, row in -20.0..170.0f64, col in -20.0..170.0f64) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let r = Rigid::random(&mut rng, 50.0);
            let base = plane_from_affine(&AffineHeader::identity(), ViewTag::TwoChamber, (150, 150)).unwrap();
            let mut plane = base.transformed(&r);
            plane.spacing = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
            let w = plane.pixel_to_world(row, col);
            let (r2, c2) = world_to_pixel(&w, &plane);
            prop_assert!((r2 - row).abs() < 1e-9 && (c2 - col).abs() < 1e-9);
        }

        #[test]
        fn distance_rigid_invariant(seed in 0u64..1000, x in -50.0..50.0f64, y in -50.0..50.0f64, z in -50.0..50.0f64) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Rigid::random(&mut rng, 40.0);
            let b = Rigid::random(&mut rng, 40.0);
            let plane = plane_from_affine(&AffineHeader::identity(), ViewTag::TwoChamber, (150, 150)).unwrap().transformed(&a);
            let v = [x, y, z];
            let d0 = vertex_plane_distance(&v, &plane);
            let d1 = vertex_plane_distance(&b.apply_point(&v), &plane.transformed(&b));
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn projection_plus_offset_reconstructs(seed in 0u64..1000, x in -50.0..50.0f64, y in -50.0..50.0f64, z in -50.0..50.0f64) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let plane = plane_from_affine(&AffineHeader::identity(), ViewTag::TwoChamber, (150, 150)).unwrap()
                .transformed(&Rigid::random(&mut rng, 40.0));
            let v = [x, y, z];
            let (row, col) = world_to_pixel(&v, &plane);
            let mut back = plane.pixel_to_world(row, col);
            vec3::axpy(&mut back, plane.signed_distance(&v), &plane.normal);
            prop_assert!(vec3::dist(&back, &v) < 1e-9);
        }
    }
}

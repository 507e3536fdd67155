//! Labeled triangle meshes, mesh sequences with fixed connectivity, and the
//! derived quantities every other module builds on: edges, face normals and
//! enclosed volume.
//!
//! Meshes are stored as an OBJ subset (`v` and `f` records only) with a
//! sidecar `.labels` file holding one component tag per vertex line.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

/// Cubic millimetres per millilitre.
pub const MM3_PER_ML: f64 = 1000.0;

/// Anatomical component of a whole-heart mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "LV")]
    Lv,
    #[serde(rename = "LV_MYO")]
    LvMyo,
    #[serde(rename = "RV")]
    Rv,
    #[serde(rename = "LA")]
    La,
    #[serde(rename = "RA")]
    Ra,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Lv,
        Component::LvMyo,
        Component::Rv,
        Component::La,
        Component::Ra,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Lv => "LV",
            Component::LvMyo => "LV_MYO",
            Component::Rv => "RV",
            Component::La => "LA",
            Component::Ra => "RA",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "LV" => Ok(Component::Lv),
            "LV_MYO" => Ok(Component::LvMyo),
            "RV" => Ok(Component::Rv),
            "LA" => Ok(Component::La),
            "RA" => Ok(Component::Ra),
            other => Err(format!(
                "unknown component tag {other:?} (expected LV, LV_MYO, RV, LA or RA)"
            )),
        }
    }
}

/// Either the whole mesh or a single labeled component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Structure {
    Full,
    Part(Component),
}

impl Structure {
    pub const ALL: [Structure; 6] = [
        Structure::Full,
        Structure::Part(Component::Lv),
        Structure::Part(Component::LvMyo),
        Structure::Part(Component::Rv),
        Structure::Part(Component::La),
        Structure::Part(Component::Ra),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Structure::Full => "FullMesh",
            Structure::Part(c) => c.as_str(),
        }
    }

    pub fn contains(self, label: Component) -> bool {
        match self {
            Structure::Full => true,
            Structure::Part(c) => c == label,
        }
    }
}

/// Triangle surface with per-vertex anatomical labels.
///
/// Construction validates that every face index is in range and that no
/// face repeats a vertex. Closedness of components is only checked when a
/// volume is requested.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    labels: Vec<Component>,
}

impl LabeledMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, labels: Vec<Component>) -> Result<Self> {
        validate_topology(vertices.len(), &faces, &labels)?;
        Ok(LabeledMesh {
            vertices,
            faces,
            labels,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn labels(&self) -> &[Component] {
        &self.labels
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity and labels, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(LabeledMesh {
            vertices,
            faces: self.faces.clone(),
            labels: self.labels.clone(),
        })
    }

    /// Applies `f` to every vertex.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        LabeledMesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Concatenates meshes, offsetting face indices.
    pub fn merge(parts: &[LabeledMesh]) -> Self {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut labels = Vec::new();
        for part in parts {
            let base = vertices.len();
            vertices.extend_from_slice(&part.vertices);
            labels.extend_from_slice(&part.labels);
            faces.extend(part.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
        }
        LabeledMesh {
            vertices,
            faces,
            labels,
        }
    }

    /// Reverses the winding of every face.
    pub fn flipped(&self) -> Self {
        LabeledMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Component of a face, taken from its first vertex.
    pub fn face_component(&self, face: usize) -> Component {
        self.labels[self.faces[face][0]]
    }
}

fn validate_topology(vertex_count: usize, faces: &[[usize; 3]], labels: &[Component]) -> Result<()> {
    if labels.len() != vertex_count {
        return Err(Error::LabelCount {
            labels: labels.len(),
            vertices: vertex_count,
        });
    }
    for (fi, f) in faces.iter().enumerate() {
        for &index in f {
            if index >= vertex_count {
                return Err(Error::IndexOutOfRange {
                    face: fi,
                    index,
                    count: vertex_count,
                });
            }
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(Error::DegenerateFace { face: fi });
        }
    }
    Ok(())
}

/// `N` time-ordered vertex sets sharing one connectivity and labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSequence {
    frames: Vec<Vec<Vec3>>,
    faces: Vec<[usize; 3]>,
    labels: Vec<Component>,
}

impl MeshSequence {
    pub fn new(frames: Vec<Vec<Vec3>>, faces: Vec<[usize; 3]>, labels: Vec<Component>) -> Result<Self> {
        let v = labels.len();
        if frames.is_empty() {
            return Err(Error::Shape("a mesh sequence needs at least one frame".into()));
        }
        for (t, frame) in frames.iter().enumerate() {
            if frame.len() != v {
                return Err(Error::Shape(format!(
                    "frame {t} has {} vertices, expected {v}",
                    frame.len()
                )));
            }
        }
        validate_topology(v, &faces, &labels)?;
        Ok(MeshSequence {
            frames,
            faces,
            labels,
        })
    }

    /// `frames` copies of `mesh`.
    pub fn repeat(mesh: &LabeledMesh, frames: usize) -> Self {
        MeshSequence {
            frames: vec![mesh.vertices.clone(); frames.max(1)],
            faces: mesh.faces.clone(),
            labels: mesh.labels.clone(),
        }
    }

    /// Builds a sequence from per-frame meshes; connectivity must match exactly.
    pub fn from_meshes(meshes: &[LabeledMesh]) -> Result<Self> {
        let first = meshes
            .first()
            .ok_or_else(|| Error::Shape("a mesh sequence needs at least one frame".into()))?;
        for (t, m) in meshes.iter().enumerate() {
            if m.faces != first.faces || m.labels != first.labels {
                return Err(Error::Shape(format!(
                    "frame {t} does not share the connectivity of frame 0"
                )));
            }
        }
        Ok(MeshSequence {
            frames: meshes.iter().map(|m| m.vertices.clone()).collect(),
            faces: first.faces.clone(),
            labels: first.labels.clone(),
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    pub fn frames(&self) -> &[Vec<Vec3>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[Vec3] {
        &self.frames[t]
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn labels(&self) -> &[Component] {
        &self.labels
    }

    pub fn mesh(&self, t: usize) -> LabeledMesh {
        LabeledMesh {
            vertices: self.frames[t].clone(),
            faces: self.faces.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Same connectivity, new frames (each must have `V` vertices).
    pub fn with_frames(&self, frames: Vec<Vec<Vec3>>) -> Result<Self> {
        MeshSequence::new(frames, self.faces.clone(), self.labels.clone())
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        MeshSequence {
            frames: self
                .frames
                .iter()
                .map(|fr| fr.iter().map(&f).collect())
                .collect(),
            faces: self.faces.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Flattened `N·V·3` coordinates, frame-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.frames.iter().flatten().flat_map(|p| p.iter().copied()).collect()
    }

    /// Inverse of [`MeshSequence::to_flat`].
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let v = self.vertex_count();
        assert_eq!(flat.len(), self.frame_count() * v * 3);
        let frames = flat
            .chunks_exact(v * 3)
            .map(|fr| fr.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
            .collect();
        MeshSequence {
            frames,
            faces: self.faces.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Unique undirected edges with their template rest lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub edges: Vec<[usize; 2]>,
    pub rest_lengths: Vec<f64>,
}

/// Unique undirected edges of the mesh, sorted, with rest lengths measured on `mesh`.
pub fn build_edge_list(mesh: &LabeledMesh) -> EdgeList {
    let edges = unique_edges(&mesh.faces);
    let rest_lengths = edges
        .iter()
        .map(|&[a, b]| vec3::dist(&mesh.vertices[a], &mesh.vertices[b]))
        .collect();
    EdgeList {
        edges,
        rest_lengths,
    }
}

pub(crate) fn unique_edges(faces: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut edges: Vec<[usize; 2]> = faces
        .iter()
        .flat_map(|f| [[f[0], f[1]], [f[1], f[2]], [f[2], f[0]]])
        .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Unit face normals following the winding order.
pub fn face_normals(mesh: &LabeledMesh) -> Result<Vec<Vec3>> {
    face_normals_of(&mesh.vertices, &mesh.faces)
}

pub(crate) fn face_normals_of(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Vec<Vec3>> {
    faces
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let m = face_cross(vertices, f);
            let n = vec3::norm(&m);
            // Relative to the squared edge scale so that tiny but valid triangles pass.
            let scale = vec3::dot(
                &vec3::sub(&vertices[f[1]], &vertices[f[0]]),
                &vec3::sub(&vertices[f[1]], &vertices[f[0]]),
            )
            .max(vec3::dot(
                &vec3::sub(&vertices[f[2]], &vertices[f[0]]),
                &vec3::sub(&vertices[f[2]], &vertices[f[0]]),
            ));
            if n <= 1e-14 * scale || n == 0.0 {
                Err(Error::ZeroAreaFace { face: fi })
            } else {
                Ok(vec3::scale(&m, 1.0 / n))
            }
        })
        .collect()
}

#[inline]
pub(crate) fn face_cross(vertices: &[Vec3], f: &[usize; 3]) -> Vec3 {
    let e1 = vec3::sub(&vertices[f[1]], &vertices[f[0]]);
    let e2 = vec3::sub(&vertices[f[2]], &vertices[f[0]]);
    vec3::cross(&e1, &e2)
}

/// Orientation of a closed surface relative to its enclosed region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Outward,
    Inward,
}

/// Enclosed volume of a structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Volume {
    /// Absolute enclosed volume in mL.
    pub ml: f64,
    /// `Inward` when the faces are wound so the raw divergence sum is negative.
    pub orientation: Orientation,
}

impl Volume {
    /// Volume with the sign implied by the face winding.
    pub fn signed_ml(&self) -> f64 {
        match self.orientation {
            Orientation::Outward => self.ml,
            Orientation::Inward => -self.ml,
        }
    }
}

/// Divergence-theorem volume of `structure`, in mL.
///
/// The selected faces must form closed surfaces; an unmatched half-edge is
/// reported before anything is summed.
pub fn signed_volume(mesh: &LabeledMesh, structure: Structure) -> Result<Volume> {
    check_closed(&mesh.faces, &mesh.labels, structure)?;
    let raw = raw_volume_mm3(&mesh.vertices, &mesh.faces, &mesh.labels, structure);
    let ml = raw / MM3_PER_ML;
    Ok(Volume {
        ml: ml.abs(),
        orientation: if ml < 0.0 {
            Orientation::Inward
        } else {
            Orientation::Outward
        },
    })
}

/// Signed volume (mm³) without the closedness check.
pub(crate) fn raw_volume_mm3(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    labels: &[Component],
    structure: Structure,
) -> f64 {
    faces
        .iter()
        .filter(|f| structure.contains(labels[f[0]]))
        .map(|f| {
            vec3::dot(
                &vertices[f[0]],
                &vec3::cross(&vertices[f[1]], &vertices[f[2]]),
            ) / 6.0
        })
        .sum()
}

/// Every directed half-edge of the selected faces must be matched by its reverse.
pub(crate) fn check_closed(faces: &[[usize; 3]], labels: &[Component], structure: Structure) -> Result<()> {
    let mut half: HashMap<(usize, usize), i32> = HashMap::new();
    for f in faces.iter().filter(|f| structure.contains(labels[f[0]])) {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            *half.entry((a, b)).or_insert(0) += 1;
        }
    }
    // Sorted so the reported edge is deterministic.
    let sorted: BTreeMap<_, _> = half.iter().collect();
    for (&(a, b), &count) in sorted {
        let reverse = half.get(&(b, a)).copied().unwrap_or(0);
        if reverse != count {
            return Err(Error::OpenSurface {
                component: structure.name().to_string(),
                a,
                b,
            });
        }
    }
    Ok(())
}

/// Icosphere with `subdivisions` rounds of 4-to-1 splitting, outward winding.
///
/// Vertex count is `10·4^k + 2` and face count `20·4^k`.
pub fn icosphere(subdivisions: u32, radius: f64, center: Vec3, label: Component) -> LabeledMesh {
    let (dirs, faces) = unit_icosphere(subdivisions);
    let vertices = dirs
        .iter()
        .map(|d| vec3::add(&center, &vec3::scale(d, radius)))
        .collect::<Vec<_>>();
    let labels = vec![label; vertices.len()];
    LabeledMesh {
        vertices,
        faces,
        labels,
    }
}

/// Unit-sphere directions and faces of an icosphere.
pub fn unit_icosphere(subdivisions: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| vec3::normalize(v).unwrap())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
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
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = if a < b { (a, b) } else { (b, a) };
            *cache.entry(key).or_insert_with(|| {
                let m = vec3::scale(&vec3::add(&verts[a], &verts[b]), 0.5);
                verts.push(vec3::normalize(&m).unwrap());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let a = midpoint(f[0], f[1], &mut verts);
            let b = midpoint(f[1], f[2], &mut verts);
            let c = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], a, c]);
            next.push([f[1], b, a]);
            next.push([f[2], c, b]);
            next.push([a, b, c]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Axis-aligned cube `[0, side]³` as 12 outward-wound triangles.
pub fn cube(side: f64, label: Component) -> LabeledMesh {
    let s = side;
    let vertices = vec![
        [0.0, 0.0, 0.0],
        [s, 0.0, 0.0],
        [s, s, 0.0],
        [0.0, s, 0.0],
        [0.0, 0.0, s],
        [s, 0.0, s],
        [s, s, s],
        [0.0, s, s],
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    LabeledMesh {
        vertices,
        faces,
        labels: vec![label; 8],
    }
}

/// Path of the label sidecar for an OBJ file.
pub fn labels_path(obj: &Path) -> PathBuf {
    obj.with_extension("labels")
}

/// Reads an OBJ subset file and its `.labels` sidecar.
pub fn load_mesh(path: &Path) -> Result<LabeledMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (vertices, faces) = parse_obj(&text, path)?;
    let lpath = labels_path(path);
    let ltext = fs::read_to_string(&lpath).map_err(|e| Error::io(&lpath, e))?;
    let labels = parse_labels(&ltext, &lpath)?;
    LabeledMesh::new(vertices, faces, labels)
}

/// Parses `v x y z` and `f i j k` records (1-based indices; `i/t/n` forms use the
/// first field). Blank lines and `#` comments are skipped; any other record is an error.
pub fn parse_obj(text: &str, path: &Path) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let tag = fields.next().unwrap();
        let rest: Vec<&str> = fields.collect();
        match tag {
            "v" => {
                if rest.len() != 3 {
                    return Err(err(line, format!("expected 3 coordinates, found {}", rest.len())));
                }
                let mut p = [0.0; 3];
                for (k, s) in rest.iter().enumerate() {
                    p[k] = s
                        .parse::<f64>()
                        .map_err(|e| err(line, format!("bad coordinate {s:?}: {e}")))?;
                    if !p[k].is_finite() {
                        return Err(err(line, format!("non-finite coordinate {s:?}")));
                    }
                }
                vertices.push(p);
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(err(
                        line,
                        format!("only triangles are supported, found {} indices", rest.len()),
                    ));
                }
                let mut f = [0usize; 3];
                for (k, s) in rest.iter().enumerate() {
                    let idx = s.split('/').next().unwrap_or("");
                    let one_based = idx
                        .parse::<usize>()
                        .map_err(|e| err(line, format!("bad vertex index {s:?}: {e}")))?;
                    if one_based == 0 {
                        return Err(err(line, "vertex indices are 1-based".into()));
                    }
                    f[k] = one_based - 1;
                }
                faces.push(f);
            }
            other => return Err(err(line, format!("unsupported record {other:?}"))),
        }
    }
    Ok((vertices, faces))
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<Component>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<Component>().map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            })
        })
        .collect()
}

/// OBJ text with shortest round-trip float formatting.
pub fn obj_string(vertices: &[Vec3], faces: &[[usize; 3]]) -> String {
    use std::fmt::Write;
    let mut s = String::with_capacity(vertices.len() * 40 + faces.len() * 20);
    for p in vertices {
        writeln!(s, "v {:?} {:?} {:?}", p[0], p[1], p[2]).unwrap();
    }
    for f in faces {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    s
}

pub fn labels_string(labels: &[Component]) -> String {
    let mut s = String::with_capacity(labels.len() * 4);
    for l in labels {
        s.push_str(l.as_str());
        s.push('\n');
    }
    s
}

/// Writes the OBJ file and its `.labels` sidecar.
pub fn save_mesh(mesh: &LabeledMesh, path: &Path) -> Result<()> {
    fs::write(path, obj_string(&mesh.vertices, &mesh.faces)).map_err(|e| Error::io(path, e))?;
    let lpath = labels_path(path);
    fs::write(&lpath, labels_string(&mesh.labels)).map_err(|e| Error::io(&lpath, e))
}

//! On-disk dataset layout.
//!
//! ```text
//! <dir>/meshes/f<t>.obj      vertex positions of frame t
//! <dir>/meshes/f<t>.labels   per-vertex component tags
//! <dir>/planes.json          plane entries (view, row-major affine, extent)
//! <dir>/masks/<view>_f<t>.pgm  binary ground-truth masks (P5, 0/255)
//! <dir>/manifest.json        generator config echo and SHA-256 of every file
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::{labels_path, load_mesh, save_mesh, LabeledMesh, MeshSequence};
use crate::plane::{load_planes, planes_json, PlaneEntry, PlaneFrame, ViewTag};
use crate::raster::{read_pgm, write_pgm};
use crate::render::ViewObservation;
use crate::synth::SynthDataset;

pub const FORMAT: &str = "heartfit-dataset/1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn mesh_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("meshes").join(format!("f{t}.obj"))
}

pub fn mask_path(dir: &Path, view: ViewTag, t: usize) -> PathBuf {
    dir.join("masks").join(format!("{view}_f{t}.pgm"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub frames: usize,
    pub views: Vec<ViewTag>,
    /// Generator configuration, if the dataset was synthesized.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    /// Relative path → SHA-256 hex digest.
    pub files: BTreeMap<String, String>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn relative(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn checksum_file(dir: &Path, path: &Path, files: &mut BTreeMap<String, String>) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    files.insert(relative(dir, path), sha256_hex(&bytes));
    Ok(())
}

/// Writes meshes, planes and masks to `dir` and returns the manifest, which
/// is also written as `manifest.json`.
pub fn write_dataset(
    dir: &Path,
    sequence: &MeshSequence,
    planes: &[PlaneEntry],
    observations: &[ViewObservation],
    config: Option<serde_json::Value>,
) -> Result<DatasetManifest> {
    let mut files = BTreeMap::new();
    for t in 0..sequence.frame_count() {
        let path = mesh_path(dir, t);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        save_mesh(&sequence.mesh(t), &path)?;
        checksum_file(dir, &path, &mut files)?;
        checksum_file(dir, &labels_path(&path), &mut files)?;
    }
    let planes_path = dir.join("planes.json");
    write_file(&planes_path, planes_json(planes).as_bytes())?;
    checksum_file(dir, &planes_path, &mut files)?;
    fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(dir.join("masks"), e))?;
    for o in observations {
        let path = mask_path(dir, o.view, o.frame);
        write_pgm(&o.mask, &path)?;
        checksum_file(dir, &path, &mut files)?;
    }
    let manifest = DatasetManifest {
        format: FORMAT.to_string(),
        frames: sequence.frame_count(),
        views: planes.iter().map(|p| p.view).collect(),
        config,
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

/// Writes a generated synthetic dataset.
pub fn write_synth(dir: &Path, data: &SynthDataset) -> Result<DatasetManifest> {
    let entries: Vec<PlaneEntry> = data
        .planes
        .iter()
        .map(|p| PlaneEntry::new(&p.header, p.frame.view, p.frame.extent))
        .collect();
    let config = serde_json::to_value(&data.config).expect("config serializes");
    write_dataset(dir, &data.sequence, &entries, &data.observations, Some(config))
}

/// A dataset loaded from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sequence: MeshSequence,
    pub entries: Vec<PlaneEntry>,
    pub planes: Vec<PlaneFrame>,
    /// Frame-major, planes in file order.
    pub observations: Vec<ViewObservation>,
    pub manifest: Option<DatasetManifest>,
}

/// Number of consecutive `meshes/f<t>.obj` files starting at `f0`.
pub fn count_frames(dir: &Path) -> usize {
    (0..).take_while(|&t| mesh_path(dir, t).is_file()).count()
}

/// Lists every file a dataset needs that does not exist.
pub fn missing_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut missing = Vec::new();
    let planes_path = dir.join("planes.json");
    let frames = count_frames(dir);
    if frames == 0 {
        missing.push(mesh_path(dir, 0));
    }
    for t in 0..frames {
        let l = labels_path(&mesh_path(dir, t));
        if !l.is_file() {
            missing.push(l);
        }
    }
    if !planes_path.is_file() {
        missing.push(planes_path);
        return Ok(missing);
    }
    for e in load_planes(&planes_path)? {
        for t in 0..frames {
            let p = mask_path(dir, e.view, t);
            if !p.is_file() {
                missing.push(p);
            }
        }
    }
    Ok(missing)
}

/// Loads and validates a dataset. All missing files are reported together
/// before anything is parsed; checksums are verified when a manifest exists.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let missing = missing_files(dir)?;
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::Invalid(format!("dataset is missing files:\n  {}", list.join("\n  "))));
    }
    let manifest_path = dir.join("manifest.json");
    let manifest: Option<DatasetManifest> = if manifest_path.is_file() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        Some(serde_json::from_str(&text).map_err(|source| Error::Json {
            path: manifest_path.clone(),
            source,
        })?)
    } else {
        None
    };
    if let Some(m) = &manifest {
        let mut bad = Vec::new();
        for (rel, digest) in &m.files {
            let path = dir.join(rel);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if &sha256_hex(&bytes) != digest {
                bad.push(path.display().to_string());
            }
        }
        if !bad.is_empty() {
            return Err(Error::Invalid(format!(
                "checksum mismatch against manifest:\n  {}",
                bad.join("\n  ")
            )));
        }
    }

    let frames = count_frames(dir);
    let meshes: Vec<LabeledMesh> = (0..frames)
        .map(|t| load_mesh(&mesh_path(dir, t)))
        .collect::<Result<_>>()?;
    let sequence = MeshSequence::from_meshes(&meshes)?;
    let entries = load_planes(&dir.join("planes.json"))?;
    let planes: Vec<PlaneFrame> = entries.iter().map(PlaneEntry::frame).collect::<Result<_>>()?;
    let mut observations = Vec::with_capacity(frames * planes.len());
    for t in 0..frames {
        for plane in &planes {
            let path = mask_path(dir, plane.view, t);
            let mask = read_pgm(&path)?;
            if (mask.rows, mask.cols) != plane.extent {
                return Err(Error::Shape(format!(
                    "{}: mask is {}×{}, plane extent is {}×{}",
                    path.display(),
                    mask.rows,
                    mask.cols,
                    plane.extent.0,
                    plane.extent.1
                )));
            }
            observations.push(ViewObservation::from_mask(plane.view, t, mask));
        }
    }
    Ok(Dataset {
        sequence,
        entries,
        planes,
        observations,
        manifest,
    })
}

/// Loads a predicted sequence: consecutive `f<t>.obj` files (with label
/// sidecars) directly in `dir` or in `dir/meshes`.
pub fn read_sequence(dir: &Path) -> Result<MeshSequence> {
    let base = if dir.join("meshes").is_dir() { dir.join("meshes") } else { dir.to_path_buf() };
    let frames = (0..).take_while(|&t| base.join(format!("f{t}.obj")).is_file()).count();
    if frames == 0 {
        return Err(Error::Invalid(format!("{}: no f0.obj found", base.display())));
    }
    let meshes: Vec<LabeledMesh> = (0..frames)
        .map(|t| load_mesh(&base.join(format!("f{t}.obj"))))
        .collect::<Result<_>>()?;
    MeshSequence::from_meshes(&meshes)
}

/// Writes a sequence as `dir/f<t>.obj` plus label sidecars; returns the written paths.
pub fn write_sequence(dir: &Path, seq: &MeshSequence) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for t in 0..seq.frame_count() {
        let path = dir.join(format!("f{t}.obj"));
        save_mesh(&seq.mesh(t), &path)?;
        out.push(labels_path(&path));
        out.push(path);
    }
    out.sort();
    Ok(out)
}

//! Orbit dataset generation and the manifest, split and chunk bookkeeping
//! around it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{generate_paper_views, CameraIntrinsics, CameraPose, GeometryError, OrbitPlane};
use crate::imageops::{ImageError, ImageRGBA};
use crate::mesh::{compute_vertex_normals, load_obj, normalize_to_unit_sphere, MeshError};
use crate::raster::{render_mesh, RenderSettings};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const INDEX_FILE: &str = "index.toml";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("n_validation ({n_validation}) must be smaller than the model count ({count})")]
    TooManyValidation { n_validation: usize, count: usize },
    #[error("n_chunks must be at least 1")]
    NoChunks,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    /// Relative to the manifest's directory.
    pub image_path: String,
    pub plane: OrbitPlane,
    pub index: usize,
    pub angle_deg: f64,
    pub position: [f64; 3],
    /// Camera-to-world rotation, w first.
    pub quaternion: [f64; 4],
    pub fov_y_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl ViewRecord {
    pub fn pose(&self) -> CameraPose {
        CameraPose::from_wxyz(self.position, self.quaternion)
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics { fov_y_deg: self.fov_y_deg, width: self.width, height: self.height, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub model_id: String,
    pub split: Split,
    pub chunk_index: usize,
    pub views: Vec<ViewRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| DatasetError::Manifest { path: path.to_path_buf(), reason: e.to_string() })
    }

    /// Accepts either a manifest file or a dataset directory containing one.
    pub fn load_dir_or_file(path: &Path) -> Result<(Self, PathBuf), DatasetError> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::load(&file)?, root))
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = toml::to_string(self)
            .map_err(|e| DatasetError::Manifest { path: path.to_path_buf(), reason: e.to_string() })?;
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Corpus-level record of every generated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub n_chunks: usize,
    pub seed: u64,
    pub fine_tuning: FineTuningNotes,
    pub models: Vec<CorpusEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub model_id: String,
    pub split: Split,
    pub chunk_index: usize,
    pub manifest: String,
}

/// Settings the chunk layout was prepared for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuningNotes {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub chunks: usize,
}

impl Default for FineTuningNotes {
    fn default() -> Self {
        Self { learning_rate: 5e-5, batch_size: 1, chunks: 48 }
    }
}

impl CorpusIndex {
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = toml::to_string(self)
            .map_err(|e| DatasetError::Manifest { path: path.to_path_buf(), reason: e.to_string() })?;
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| DatasetError::Manifest { path: path.to_path_buf(), reason: e.to_string() })
    }
}

pub fn view_file_name(plane: OrbitPlane, index: usize) -> String {
    format!("{}_{:02}.png", plane.name(), index)
}

pub fn model_id_of(model: &Path) -> String {
    model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

/// Renders the 48 orbit views of `model` into `out_dir` and writes its manifest.
pub fn render_dataset(
    model: &Path,
    out_dir: &Path,
    radius: f64,
    intr: &CameraIntrinsics,
    settings: &RenderSettings,
) -> Result<DatasetManifest, DatasetError> {
    intr.validate()?;
    let obj = load_obj(model)?;
    let (normalized, _, _) = normalize_to_unit_sphere(&obj.mesh)?;
    let mesh = if normalized.normals.is_empty() { compute_vertex_normals(&normalized) } else { normalized };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let views = generate_paper_views(radius)?;
    let records = views
        .par_iter()
        .map(|view| {
            let fb = render_mesh(&mesh, &obj.materials, intr, &view.pose, settings);
            let name = view_file_name(view.plane, view.index);
            fb.color.save_png(&out_dir.join(&name))?;
            Ok(ViewRecord {
                image_path: name,
                plane: view.plane,
                index: view.index,
                angle_deg: view.angle_deg,
                position: view.pose.position.into(),
                quaternion: view.pose.quaternion_wxyz(),
                fov_y_deg: intr.fov_y_deg,
                width: intr.width,
                height: intr.height,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let manifest = DatasetManifest { model_id: model_id_of(model), split: Split::Train, chunk_index: 0, views: records };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Loads every view image of a manifest rooted at `root`.
pub fn load_views(manifest: &DatasetManifest, root: &Path) -> Result<Vec<(ViewRecord, ImageRGBA)>, DatasetError> {
    manifest
        .views
        .par_iter()
        .map(|v| Ok((v.clone(), ImageRGBA::load_png(&root.join(&v.image_path))?)))
        .collect()
}

pub fn assign_splits(
    model_ids: &[String],
    n_validation: usize,
    seed: u64,
) -> Result<BTreeMap<String, Split>, DatasetError> {
    if n_validation > 0 && n_validation >= model_ids.len() {
        return Err(DatasetError::TooManyValidation { n_validation, count: model_ids.len() });
    }
    let mut ids: Vec<&String> = model_ids.iter().collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), if i < n_validation { Split::Validation } else { Split::Train }))
        .collect())
}

/// Assigns train manifests round-robin to chunks, in input order.
pub fn chunk_manifests(manifests: &[DatasetManifest], n_chunks: usize) -> Result<Vec<DatasetManifest>, DatasetError> {
    if n_chunks < 1 {
        return Err(DatasetError::NoChunks);
    }
    let mut next = 0;
    Ok(manifests
        .iter()
        .map(|m| {
            let mut m = m.clone();
            if m.split == Split::Train {
                m.chunk_index = next % n_chunks;
                next += 1;
            } else {
                m.chunk_index = 0;
            }
            m
        })
        .collect())
}

//! Layered pipeline configuration: built-in defaults, a TOML file, then flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, DEFAULT_FOV_Y_DEG, DEFAULT_RADIUS};
use crate::guidance::client::ServiceEndpoint;
use crate::meshextract::BakeSettings;
use crate::raster::RenderSettings;
use crate::reconstruct::ReconstructionConfig;

pub const ENDPOINT_ENV: &str = "ORBITALSPLAT_ENDPOINT";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: std::path::PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub width: u32,
    pub height: u32,
    pub fov_y_deg: f64,
    pub radius: f64,
    pub settings: RenderSettings,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self { width: 512, height: 512, fov_y_deg: DEFAULT_FOV_Y_DEG, radius: DEFAULT_RADIUS, settings: RenderSettings::default() }
    }
}

impl RenderSection {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, String> {
        let intr = CameraIntrinsics::new(self.fov_y_deg, self.width, self.height).map_err(|e| e.to_string())?;
        intr.validate().map_err(|e| e.to_string())?;
        Ok(intr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub threshold: f64,
    pub border_ratio: f64,
    pub target: u32,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self { threshold: 0.5, border_ratio: 0.2, target: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_validation: usize,
    pub n_chunks: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { n_validation: 0, n_chunks: 48 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSection {
    pub grid: usize,
    pub iso: f64,
    pub atlas_size: u32,
    /// Side of the square splat renders used for baking.
    pub bake_resolution: u32,
    pub depth_tolerance: f64,
}

impl Default for MeshSection {
    fn default() -> Self {
        let bake = BakeSettings::default();
        Self { grid: 128, iso: 1.0, atlas_size: bake.atlas_size, bake_resolution: 512, depth_tolerance: bake.depth_tolerance }
    }
}

impl MeshSection {
    pub fn bake_settings(&self) -> BakeSettings {
        BakeSettings { atlas_size: self.atlas_size, depth_tolerance: self.depth_tolerance, ..BakeSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub render: RenderSection,
    pub preprocess: PreprocessSection,
    pub dataset: DatasetSection,
    pub reconstruct: ReconstructionConfig,
    /// Every this many iterations a reference-view render is saved; 0 disables.
    pub snapshot_interval: usize,
    /// Dataset views withheld from ground-truth guidance.
    pub hold_out: Vec<String>,
    pub mesh: MeshSection,
    pub service: ServiceEndpoint,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            render: RenderSection::default(),
            preprocess: PreprocessSection::default(),
            dataset: DatasetSection::default(),
            reconstruct: ReconstructionConfig::default(),
            snapshot_interval: 100,
            hold_out: Vec::new(),
            mesh: MeshSection::default(),
            service: ServiceEndpoint::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML over the defaults; unknown keys are rejected with their location.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        Ok(cfg.with_seed())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text, path)
    }

    /// Whether the file sets `reconstruct.iterations` explicitly.
    pub fn file_sets_iterations(text: &str) -> bool {
        toml::from_str::<toml::Table>(text)
            .ok()
            .and_then(|t| t.get("reconstruct").and_then(|r| r.get("iterations")).map(|_| ()))
            .is_some()
    }

    pub fn with_seed(mut self) -> Self {
        self.reconstruct.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| ConfigError::Invalid(m);
        self.render.intrinsics().map_err(|e| bad(format!("render: {e}")))?;
        if !(self.render.radius > 0.0 && self.render.radius.is_finite()) {
            return Err(bad(format!("render.radius must be positive, got {}", self.render.radius)));
        }
        let p = &self.preprocess;
        if !(0.0..=1.0).contains(&p.threshold) || !(0.0..0.5).contains(&p.border_ratio) || p.target < 1 {
            return Err(bad("preprocess: threshold in [0, 1], border_ratio in [0, 0.5), target ≥ 1".into()));
        }
        if self.dataset.n_chunks < 1 {
            return Err(bad("dataset.n_chunks must be ≥ 1".into()));
        }
        self.reconstruct.validate().map_err(|e| bad(format!("reconstruct: {e}")))?;
        let m = &self.mesh;
        if m.grid < 2 || m.atlas_size < 2 || m.bake_resolution < 1 || !(m.iso > 0.0) || !(m.depth_tolerance >= 0.0) {
            return Err(bad("mesh: grid ≥ 2, atlas_size ≥ 2, bake_resolution ≥ 1, iso > 0, depth_tolerance ≥ 0".into()));
        }
        if !self.service.base_url.is_empty() {
            self.service.validate().map_err(|e| bad(format!("service: {e}")))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes the effective configuration with any auth token removed.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), ConfigError> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        let mut redacted = self.clone();
        redacted.service.auth_token = None;
        std::fs::create_dir_all(dir).map_err(|source| ConfigError::Io { path: dir.into(), source })?;
        std::fs::write(&path, redacted.to_toml()).map_err(|source| ConfigError::Io { path, source })
    }
}

//! Guidance providers: the contract the optimizer talks to, a dataset-backed
//! ground-truth provider, and the HTTP client in [`client`].

pub mod client;

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::dataset::{load_views, DatasetError, DatasetManifest, ViewRecord};
use crate::geometry::{angle_between, CameraPose, GeometryError, RelativePose, Spherical};
use crate::imageops::{resize_bilinear, ImageError, ImageRGBA};

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("guidance transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("guidance service returned HTTP {status} after {attempts} attempt(s): {body}")]
    Server { status: u16, attempts: u32, body: String },
    #[error("guidance protocol error: {0}")]
    Protocol(String),
    #[error("ground-truth dataset has no usable views")]
    EmptyDataset,
    #[error("view '{0}' is not in the dataset")]
    UnknownView(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl GuidanceError {
    pub fn is_unreachable(&self) -> bool {
        matches!(self, GuidanceError::Transport { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    /// Opaque render at the novel pose.
    pub rendered: ImageRGBA,
    /// Reference image composited over white.
    pub reference: ImageRGBA,
    pub relative_pose: RelativePose,
    pub step: usize,
    pub total_steps: usize,
}

impl GuidanceRequest {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        self.rendered.same_dims(&self.reference)?;
        if self.step >= self.total_steps {
            return Err(GuidanceError::Protocol(format!("step {} outside [0, {})", self.step, self.total_steps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceResponse {
    pub target: ImageRGBA,
    pub weight: f64,
}

impl GuidanceResponse {
    pub fn validate(&self, req: &GuidanceRequest) -> Result<(), GuidanceError> {
        if self.target.dims() != req.rendered.dims() {
            return Err(GuidanceError::Protocol(format!(
                "target is {:?}, request was {:?}",
                self.target.dims(),
                req.rendered.dims()
            )));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(GuidanceError::Protocol(format!("weight {} is not a finite non-negative number", self.weight)));
        }
        Ok(())
    }
}

pub trait GuidanceProvider {
    fn provide_target(&mut self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError>;

    /// Camera poses this provider answers exactly. When present the
    /// optimizer draws novel views from this set instead of the continuous
    /// sampling ranges.
    fn pose_lattice(&self) -> Option<&[CameraPose]> {
        None
    }
}

/// Serves the stored dataset view nearest in direction to each request.
pub struct GroundTruthGuidance {
    reference_pose: CameraPose,
    views: Vec<(ViewRecord, ImageRGBA)>,
    lattice: Vec<CameraPose>,
    resized: HashMap<(usize, u32, u32), ImageRGBA>,
}

impl GroundTruthGuidance {
    /// `held_out` removes views (by name, e.g. `xz_04`) from both the lattice
    /// and the nearest-view search.
    pub fn new(
        views: Vec<(ViewRecord, ImageRGBA)>,
        reference_pose: CameraPose,
        held_out: &[String],
    ) -> Result<Self, GuidanceError> {
        for name in held_out {
            if !views.iter().any(|(v, _)| view_name(v) == *name) {
                return Err(GuidanceError::UnknownView(name.clone()));
            }
        }
        let views: Vec<_> = views.into_iter().filter(|(v, _)| !held_out.contains(&view_name(v))).collect();
        if views.is_empty() {
            return Err(GuidanceError::EmptyDataset);
        }
        // one lattice entry per distinct direction, first occurrence wins
        let mut lattice: Vec<CameraPose> = Vec::new();
        for (v, _) in &views {
            let pose = v.pose();
            if !lattice.iter().any(|p| angle_between(&p.position, &pose.position) <= DIRECTION_TIE_RAD) {
                lattice.push(pose);
            }
        }
        Ok(Self { reference_pose, views, lattice, resized: HashMap::new() })
    }

    pub fn from_manifest(
        manifest: &DatasetManifest,
        root: &Path,
        reference_pose: CameraPose,
        held_out: &[String],
    ) -> Result<Self, GuidanceError> {
        Self::new(load_views(manifest, root)?, reference_pose, held_out)
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn view(&self, i: usize) -> &(ViewRecord, ImageRGBA) {
        &self.views[i]
    }

    /// Index of the view nearest to `rel` (applied to the reference pose);
    /// ties go to the lower index.
    pub fn nearest(&self, rel: &RelativePose) -> usize {
        let base = Spherical::from_position(&self.reference_pose.position);
        let dir = Spherical {
            elevation_deg: base.elevation_deg + rel.delta_elevation_deg,
            azimuth_deg: base.azimuth_deg + rel.delta_azimuth_deg,
            radius: 1.0,
        }
        .to_position();
        let mut best = (0, f64::INFINITY);
        for (i, (v, _)) in self.views.iter().enumerate() {
            let d = angle_between(&dir, &v.pose().position);
            if d < best.1 - DIRECTION_TIE_RAD {
                best = (i, d);
            }
        }
        best.0
    }
}

const DIRECTION_TIE_RAD: f64 = 1e-9;

/// The twelve orbit views that look along a coordinate axis (each axis
/// direction occurs twice across the three planes).
pub fn axis_view_names() -> Vec<String> {
    ["xy", "yz", "xz"].iter().flat_map(|p| [0, 4, 8, 12].map(|i| format!("{p}_{i:02}"))).collect()
}

pub fn view_name(v: &ViewRecord) -> String {
    format!("{}_{:02}", v.plane.name(), v.index)
}

impl GuidanceProvider for GroundTruthGuidance {
    fn provide_target(&mut self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        let i = self.nearest(&req.relative_pose);
        let (w, h) = req.rendered.dims();
        let image = &self.views[i].1;
        let target = if image.dims() == (w, h) {
            image.clone()
        } else {
            self.resized.entry((i, w, h)).or_insert_with(|| resize_bilinear(image, w, h)).clone()
        };
        Ok(GuidanceResponse { target, weight: 1.0 })
    }

    fn pose_lattice(&self) -> Option<&[CameraPose]> {
        Some(&self.lattice)
    }
}

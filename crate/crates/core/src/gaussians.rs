//! 3D Gaussian clouds, the EWA splatting forward pass and its analytic
//! reverse-mode gradients.
//!
//! Pixels are composited front to back over Gaussians sorted by
//! `(camera depth, index)`. Work is binned into 16×16 tiles; every tile
//! holds the globally sorted subsequence of Gaussians whose 3σ box touches
//! it, so the result equals a single global sort.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, CameraPose, GeometryError, Mat3, Vec3};
use crate::imageops::ImageRGBA;

pub const LOW_PASS: f64 = 0.3;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const SUPPORT_SIGMA: f64 = 3.0;
pub const TILE: u32 = 16;
pub const LOG_SCALE_MIN: f64 = -16.118095650958319; // ln 1e-7
pub const LOG_SCALE_MAX: f64 = 4.605170185988092; // ln 1e2

const MAGIC: &[u8; 4] = b"OSGC";
const VERSION: u32 = 1;
const FLOATS_PER_GAUSSIAN: usize = 14;

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("blend cache was produced for a different cloud ({cached} Gaussians, got {given})")]
    CacheMismatch { cached: usize, given: usize },
    #[error("gradient buffer has {got} entries, expected {expected}")]
    GradientShape { expected: usize, got: usize },
    #[error("invalid cloud: {0}")]
    Invalid(String),
    #[error("malformed cloud file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub position: Vec3,
    pub log_scale: Vec3,
    /// Rotation quaternion (w, x, y, z); normalized on use.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: Vec3,
}

impl Gaussian3D {
    pub fn isotropic(position: Vec3, scale: f64, opacity: f64, color: Vec3) -> Self {
        Self {
            position,
            log_scale: Vec3::repeat(scale.ln()),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }
}

/// Structure-of-arrays Gaussian storage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub positions: Vec<Vec3>,
    pub log_scales: Vec<Vec3>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<Vec3>,
}

impl GaussianCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_gaussians(gs: impl IntoIterator<Item = Gaussian3D>) -> Self {
        let mut c = Self::new();
        for g in gs {
            c.push(g);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, g: Gaussian3D) {
        self.positions.push(g.position);
        self.log_scales.push(g.log_scale);
        self.rotations.push(g.rotation);
        self.opacity_logits.push(g.opacity_logit);
        self.colors.push(g.color);
    }

    pub fn get(&self, i: usize) -> Gaussian3D {
        Gaussian3D {
            position: self.positions[i],
            log_scale: self.log_scales[i],
            rotation: self.rotations[i],
            opacity_logit: self.opacity_logits[i],
            color: self.colors[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Gaussian3D> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    /// Keeps the Gaussians for which `keep` is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        fn filter<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
            let mut i = 0;
            v.retain(|_| {
                i += 1;
                keep[i - 1]
            });
        }
        filter(&mut self.positions, keep);
        filter(&mut self.log_scales, keep);
        filter(&mut self.rotations, keep);
        filter(&mut self.opacity_logits, keep);
        filter(&mut self.colors, keep);
    }

    pub fn validate(&self) -> Result<(), GaussianError> {
        let n = self.len();
        if [self.log_scales.len(), self.rotations.len(), self.opacity_logits.len(), self.colors.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(GaussianError::Invalid("attribute arrays differ in length".into()));
        }
        for i in 0..n {
            let g = self.get(i);
            let finite = g.position.iter().chain(g.log_scale.iter()).chain(g.color.iter()).all(|v| v.is_finite())
                && g.rotation.iter().all(|v| v.is_finite())
                && g.opacity_logit.is_finite();
            if !finite {
                return Err(GaussianError::Invalid(format!("Gaussian {i} has a non-finite parameter")));
            }
            if g.rotation.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                return Err(GaussianError::Invalid(format!("Gaussian {i} has a zero quaternion")));
            }
        }
        Ok(())
    }

    /// Cheap content hash tying a blend cache to the cloud it was built from.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: f64| {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for i in 0..self.len() {
            self.positions[i].iter().for_each(|&v| eat(v));
            self.log_scales[i].iter().for_each(|&v| eat(v));
            self.rotations[i].iter().for_each(|&v| eat(v));
            eat(self.opacity_logits[i]);
            self.colors[i].iter().for_each(|&v| eat(v));
        }
        h ^ self.len() as u64
    }

    fn row(&self, i: usize) -> [f64; FLOATS_PER_GAUSSIAN] {
        let p = self.positions[i];
        let s = self.log_scales[i];
        let q = self.rotations[i];
        let c = self.colors[i];
        [p.x, p.y, p.z, s.x, s.y, s.z, q[0], q[1], q[2], q[3], self.opacity_logits[i], c.x, c.y, c.z]
    }

    fn push_row(&mut self, r: &[f64]) {
        self.push(Gaussian3D {
            position: Vec3::new(r[0], r[1], r[2]),
            log_scale: Vec3::new(r[3], r[4], r[5]),
            rotation: [r[6], r[7], r[8], r[9]],
            opacity_logit: r[10],
            color: Vec3::new(r[11], r[12], r[13]),
        });
    }

    /// Binary table: magic `OSGC`, u32 version, u64 count, then per Gaussian
    /// 14 little-endian f32 (position, log_scale, quaternion wxyz, opacity
    /// logit, rgb).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * FLOATS_PER_GAUSSIAN * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for i in 0..self.len() {
            for v in self.row(i) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GaussianError> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(GaussianError::Format("missing OSGC header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(GaussianError::Format(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        let expected = n.checked_mul(FLOATS_PER_GAUSSIAN * 4).ok_or_else(|| GaussianError::Format("count overflow".into()))?;
        if body.len() != expected {
            return Err(GaussianError::Format(format!("expected {expected} payload bytes, found {}", body.len())));
        }
        let mut cloud = Self::new();
        let mut row = [0.0; FLOATS_PER_GAUSSIAN];
        for chunk in body.chunks_exact(FLOATS_PER_GAUSSIAN * 4) {
            for (k, b) in chunk.chunks_exact(4).enumerate() {
                row[k] = f32::from_le_bytes(b.try_into().unwrap()) as f64;
            }
            cloud.push_row(&row);
        }
        Ok(cloud)
    }

    /// Whitespace-separated text, one Gaussian per line, same field order
    /// as the binary table.
    pub fn to_text(&self) -> String {
        let mut out = format!("# orbitalsplat cloud v{VERSION} {}\n", self.len());
        out.push_str("# x y z log_sx log_sy log_sz qw qx qy qz opacity_logit r g b\n");
        for i in 0..self.len() {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GaussianError> {
        let mut cloud = Self::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| GaussianError::Format(format!("line {}: {e}", no + 1)))?;
            if row.len() != FLOATS_PER_GAUSSIAN {
                return Err(GaussianError::Format(format!(
                    "line {}: expected {FLOATS_PER_GAUSSIAN} values, found {}",
                    no + 1,
                    row.len()
                )));
            }
            cloud.push_row(&row);
        }
        Ok(cloud)
    }

    /// Writes text when the extension is `.txt`, binary otherwise.
    pub fn save(&self, path: &Path) -> Result<(), GaussianError> {
        let bytes = if path.extension().is_some_and(|e| e == "txt") { self.to_text().into_bytes() } else { self.to_bytes() };
        fs::write(path, bytes).map_err(|source| GaussianError::Io { path: path.to_path_buf(), source })
    }

    /// Reads either format, detected by the header.
    pub fn load(path: &Path) -> Result<Self, GaussianError> {
        let io = |source| GaussianError::Io { path: path.to_path_buf(), source };
        let mut bytes = Vec::new();
        fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io)?;
        if bytes.starts_with(MAGIC) {
            Self::from_bytes(&bytes)
        } else {
            let text = String::from_utf8(bytes).map_err(|_| GaussianError::Format("neither binary nor UTF-8 text".into()))?;
            Self::from_text(&text)
        }
    }
}

/// Normalized rotation matrix plus the normalized quaternion and its norm.
pub fn quaternion_to_matrix(q: [f64; 4]) -> (Mat3, [f64; 4], f64) {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let m = Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    (m, [w, x, y, z], n)
}

/// Σ = R S Sᵀ Rᵀ.
pub fn covariance3d(g: &Gaussian3D) -> Mat3 {
    let (r, _, _) = quaternion_to_matrix(g.rotation);
    let m = r * Mat3::from_diagonal(&g.scale());
    m * m.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub mean2d: [f64; 2],
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

/// Screen-space footprint of one Gaussian plus everything the backward
/// pass needs.
#[derive(Debug, Clone)]
pub(crate) struct Splat {
    index: u32,
    mean: [f64; 2],
    conic: [f64; 3],
    bbox: [i32; 4],
    depth: f64,
    alpha: f64,
    color: Vec3,
    t: Vec3,
    j: Matrix2x3<f64>,
    m: Mat3,
    r: Mat3,
    scale: Vec3,
    qhat: [f64; 4],
    qnorm: f64,
}

fn splat(cloud: &GaussianCloud, i: usize, intr: &CameraIntrinsics, pose: &CameraPose, w: &Mat3) -> Option<Splat> {
    let t = w * (cloud.positions[i] - pose.position);
    let z = -t.z;
    if !(z > intr.near) {
        return None;
    }
    let f = intr.focal();
    let (cx, cy) = intr.principal_point();
    let mean = [cx + f * t.x / z, cy - f * t.y / z];
    let j = Matrix2x3::new(f / z, 0.0, f * t.x / (z * z), 0.0, -f / z, -f * t.y / (z * z));
    let (r, qhat, qnorm) = quaternion_to_matrix(cloud.rotations[i]);
    if !(qnorm > 0.0) {
        return None;
    }
    let scale = cloud.log_scales[i].map(f64::exp);
    let mr = r * Mat3::from_diagonal(&scale);
    let m = w * (mr * mr.transpose()) * w.transpose();
    let mut cov = j * m * j.transpose();
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    cov[(0, 0)] += LOW_PASS;
    cov[(1, 1)] += LOW_PASS;
    let det = cov[(0, 0)] * cov[(1, 1)] - off * off;
    if !(det > 0.0) || !mean[0].is_finite() || !mean[1].is_finite() {
        return None;
    }
    let conic = [cov[(1, 1)] / det, -off / det, cov[(0, 0)] / det];
    let rx = SUPPORT_SIGMA * cov[(0, 0)].sqrt();
    let ry = SUPPORT_SIGMA * cov[(1, 1)].sqrt();
    let x0 = ((mean[0] - rx - 0.5).ceil()).max(0.0);
    let x1 = ((mean[0] + rx - 0.5).floor()).min(intr.width as f64 - 1.0);
    let y0 = ((mean[1] - ry - 0.5).ceil()).max(0.0);
    let y1 = ((mean[1] + ry - 0.5).floor()).min(intr.height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some(Splat {
        index: i as u32,
        mean,
        conic,
        bbox: [x0 as i32, x1 as i32, y0 as i32, y1 as i32],
        depth: z,
        alpha: cloud.opacity(i),
        color: cloud.colors[i],
        t,
        j,
        m,
        r,
        scale,
        qhat,
        qnorm,
    })
}

/// EWA projection of a single Gaussian.
pub fn project_gaussian(g: &Gaussian3D, intr: &CameraIntrinsics, pose: &CameraPose) -> Result<Projection, GeometryError> {
    let w = pose.view_rotation();
    let t = w * (g.position - pose.position);
    let z = -t.z;
    if !(z > intr.near) {
        return Err(GeometryError::BehindCamera(z));
    }
    let f = intr.focal();
    let (cx, cy) = intr.principal_point();
    let j = Matrix2x3::new(f / z, 0.0, f * t.x / (z * z), 0.0, -f / z, -f * t.y / (z * z));
    let m = w * covariance3d(g) * w.transpose();
    let mut cov = j * m * j.transpose();
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    cov[(0, 0)] += LOW_PASS;
    cov[(1, 1)] += LOW_PASS;
    Ok(Projection { mean2d: [cx + f * t.x / z, cy - f * t.y / z], cov2d: cov, depth: z })
}

/// Everything needed to differentiate a render.
#[derive(Debug, Clone)]
pub struct BlendCache {
    width: u32,
    height: u32,
    n_gaussians: usize,
    fingerprint: u64,
    background: Vec3,
    focal: f64,
    view_rotation: Mat3,
    splats: Vec<Splat>,
    tiles: Vec<Vec<u32>>,
}

impl BlendCache {
    pub fn visible_count(&self) -> usize {
        self.splats.len()
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// Composited over the background; alpha is accumulated opacity.
    pub color: ImageRGBA,
    /// Alpha-weighted expected depth, `+∞` where alpha is 0.
    pub depth: Vec<f64>,
    pub cache: BlendCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub positions: Vec<Vec3>,
    pub log_scales: Vec<Vec3>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<Vec3>,
    /// Norm of the screen-space mean gradient in NDC units.
    pub mean2d_ndc: Vec<f64>,
    /// Whether the Gaussian was on screen in this render.
    pub visible: Vec<bool>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![Vec3::zeros(); n],
            log_scales: vec![Vec3::zeros(); n],
            rotations: vec![[0.0; 4]; n],
            opacity_logits: vec![0.0; n],
            colors: vec![Vec3::zeros(); n],
            mean2d_ndc: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Adds `other` scaled by `k` (the visibility flags are or-ed).
    pub fn add_scaled(&mut self, other: &Gradients, k: f64) {
        for i in 0..self.len() {
            self.positions[i] += other.positions[i] * k;
            self.log_scales[i] += other.log_scales[i] * k;
            for c in 0..4 {
                self.rotations[i][c] += other.rotations[i][c] * k;
            }
            self.opacity_logits[i] += other.opacity_logits[i] * k;
            self.colors[i] += other.colors[i] * k;
            self.mean2d_ndc[i] += other.mean2d_ndc[i] * k;
            self.visible[i] |= other.visible[i];
        }
    }

    pub fn all_finite(&self) -> bool {
        (0..self.len()).all(|i| {
            self.positions[i].iter().chain(self.log_scales[i].iter()).chain(self.colors[i].iter()).all(|v| v.is_finite())
                && self.rotations[i].iter().all(|v| v.is_finite())
                && self.opacity_logits[i].is_finite()
        })
    }
}

#[inline]
fn gauss_power(s: &Splat, px: i32, py: i32) -> Option<(f64, f64, f64)> {
    if px < s.bbox[0] || px > s.bbox[1] || py < s.bbox[2] || py > s.bbox[3] {
        return None;
    }
    let dx = px as f64 + 0.5 - s.mean[0];
    let dy = py as f64 + 0.5 - s.mean[1];
    let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
    Some((power, dx, dy))
}

fn tile_ranges(width: u32, height: u32) -> (u32, u32) {
    (width.div_ceil(TILE), height.div_ceil(TILE))
}

pub fn render(cloud: &GaussianCloud, intr: &CameraIntrinsics, pose: &CameraPose, background: [f64; 3]) -> RenderOutput {
    let (w, h) = (intr.width, intr.height);
    let view_rotation = pose.view_rotation();
    let mut splats: Vec<Splat> =
        (0..cloud.len()).into_par_iter().filter_map(|i| splat(cloud, i, intr, pose, &view_rotation)).collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let (tx, ty) = tile_ranges(w, h);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); (tx * ty) as usize];
    for (k, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.bbox;
        for ty_ in (y0 as u32 / TILE)..=(y1 as u32 / TILE) {
            for tx_ in (x0 as u32 / TILE)..=(x1 as u32 / TILE) {
                tiles[(ty_ * tx + tx_) as usize].push(k as u32);
            }
        }
    }
    let bg = Vec3::from(background);
    let tile_pixels: Vec<Vec<([f64; 4], f64)>> = tiles
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let (ox, oy) = ((t as u32 % tx) * TILE, (t as u32 / tx) * TILE);
            let (tw, th) = (TILE.min(w - ox), TILE.min(h - oy));
            let mut out = Vec::with_capacity((tw * th) as usize);
            for py in oy..oy + th {
                for px in ox..ox + tw {
                    let mut transmittance = 1.0;
                    let mut c = Vec3::zeros();
                    let mut d = 0.0;
                    for &k in list {
                        if transmittance < MIN_TRANSMITTANCE {
                            break;
                        }
                        let s = &splats[k as usize];
                        let Some((power, _, _)) = gauss_power(s, px as i32, py as i32) else { continue };
                        let a = s.alpha * power.exp();
                        let wgt = a * transmittance;
                        c += s.color * wgt;
                        d += s.depth * wgt;
                        transmittance *= 1.0 - a;
                    }
                    let acc = 1.0 - transmittance;
                    let rgb = c + bg * transmittance;
                    let depth = if acc > 0.0 { d / acc } else { f64::INFINITY };
                    out.push(([rgb.x, rgb.y, rgb.z, acc], depth));
                }
            }
            out
        })
        .collect();
    let mut color = ImageRGBA::new(w, h);
    let mut depth = vec![f64::INFINITY; (w * h) as usize];
    for (t, px) in tile_pixels.into_iter().enumerate() {
        let (ox, oy) = ((t as u32 % tx) * TILE, (t as u32 / tx) * TILE);
        let tw = TILE.min(w - ox);
        for (k, (c, d)) in px.into_iter().enumerate() {
            let (x, y) = (ox + k as u32 % tw, oy + k as u32 / tw);
            color.set(x, y, c);
            depth[(y * w + x) as usize] = d;
        }
    }
    RenderOutput {
        color,
        depth,
        cache: BlendCache {
            width: w,
            height: h,
            n_gaussians: cloud.len(),
            fingerprint: cloud.fingerprint(),
            background: bg,
            focal: intr.focal(),
            view_rotation,
            splats,
            tiles,
        },
    }
}

#[derive(Clone, Copy, Default)]
struct Accum {
    mean: [f64; 2],
    /// dL/dconic as a full symmetric matrix: (g00, g01 = g10, g11).
    conic: [f64; 3],
    alpha: f64,
    color: [f64; 3],
}

impl Accum {
    fn add(&mut self, o: &Accum) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.alpha += o.alpha;
    }
}

/// dR/dq̂ for q̂ = (w, x, y, z).
fn rotation_partials([w, x, y, z]: [f64; 4]) -> [Mat3; 4] {
    [
        Mat3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0),
        Mat3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x),
        Mat3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y),
        Mat3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0),
    ]
}

/// Reverse-mode gradients of a render with respect to every cloud parameter,
/// given the loss gradients on the composited RGB and the accumulated alpha.
pub fn render_backward(
    cloud: &GaussianCloud,
    out: &RenderOutput,
    dl_dcolor: &[[f64; 3]],
    dl_dalpha: &[f64],
) -> Result<Gradients, GaussianError> {
    let cache = &out.cache;
    if cache.n_gaussians != cloud.len() || cache.fingerprint != cloud.fingerprint() {
        return Err(GaussianError::CacheMismatch { cached: cache.n_gaussians, given: cloud.len() });
    }
    let n_px = (cache.width * cache.height) as usize;
    for got in [dl_dcolor.len(), dl_dalpha.len()] {
        if got != n_px {
            return Err(GaussianError::GradientShape { expected: n_px, got });
        }
    }
    let (w, h) = (cache.width, cache.height);
    let (tx, _) = tile_ranges(w, h);
    let splats = &cache.splats;
    let bg = cache.background;

    let per_tile: Vec<Vec<Accum>> = cache
        .tiles
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let mut acc = vec![Accum::default(); list.len()];
            if list.is_empty() {
                return acc;
            }
            let (ox, oy) = ((t as u32 % tx) * TILE, (t as u32 / tx) * TILE);
            let (tw, th) = (TILE.min(w - ox), TILE.min(h - oy));
            // (slot in tile list, α′, T before, exp(power), dx, dy)
            let mut contrib: Vec<(usize, f64, f64, f64, f64, f64)> = Vec::new();
            for py in oy..oy + th {
                for px in ox..ox + tw {
                    let p = (py * w + px) as usize;
                    let dc = Vec3::from(dl_dcolor[p]);
                    let da = dl_dalpha[p];
                    if dc == Vec3::zeros() && da == 0.0 {
                        continue;
                    }
                    contrib.clear();
                    let mut transmittance = 1.0;
                    for (slot, &k) in list.iter().enumerate() {
                        if transmittance < MIN_TRANSMITTANCE {
                            break;
                        }
                        let s = &splats[k as usize];
                        let Some((power, dx, dy)) = gauss_power(s, px as i32, py as i32) else { continue };
                        let g = power.exp();
                        let a = s.alpha * g;
                        contrib.push((slot, a, transmittance, g, dx, dy));
                        transmittance *= 1.0 - a;
                    }
                    // color and alpha of everything behind the current contributor
                    let mut behind = bg;
                    let mut behind_alpha = 0.0;
                    for &(slot, a, tr, g, dx, dy) in contrib.iter().rev() {
                        let s = &splats[list[slot] as usize];
                        let d_a = tr * (dc.dot(&(s.color - behind)) + da * (1.0 - behind_alpha));
                        let e = &mut acc[slot];
                        let wc = a * tr;
                        e.color[0] += dc.x * wc;
                        e.color[1] += dc.y * wc;
                        e.color[2] += dc.z * wc;
                        e.alpha += d_a * g;
                        let dp = d_a * a;
                        e.conic[0] += -0.5 * dp * dx * dx;
                        e.conic[1] += -0.5 * dp * dx * dy;
                        e.conic[2] += -0.5 * dp * dy * dy;
                        e.mean[0] += dp * (s.conic[0] * dx + s.conic[1] * dy);
                        e.mean[1] += dp * (s.conic[1] * dx + s.conic[2] * dy);
                        behind = s.color * a + behind * (1.0 - a);
                        behind_alpha = a + (1.0 - a) * behind_alpha;
                    }
                }
            }
            acc
        })
        .collect();

    let mut totals = vec![Accum::default(); splats.len()];
    for (list, acc) in cache.tiles.iter().zip(&per_tile) {
        for (&k, a) in list.iter().zip(acc) {
            totals[k as usize].add(a);
        }
    }

    let f = cache.focal;
    let wr = cache.view_rotation;
    let per_splat: Vec<(usize, Vec3, Vec3, [f64; 4], f64, Vec3, f64)> = splats
        .par_iter()
        .zip(totals.par_iter())
        .map(|(s, a)| {
            let alpha = s.alpha;
            let dlogit = a.alpha * alpha * (1.0 - alpha);
            let k = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
            let gk = Matrix2::new(a.conic[0], a.conic[1], a.conic[1], a.conic[2]);
            let dcov = -(k * gk * k);
            let dm = s.j.transpose() * dcov * s.j;
            let dj = 2.0 * dcov * s.j * s.m;
            let dmean = Vector2::new(a.mean[0], a.mean[1]);
            let mut dt = s.j.transpose() * dmean;
            let z = -s.t.z;
            let (z2, z3) = (z * z, z * z * z);
            dt.x += dj[(0, 2)] * f / z2;
            dt.y += dj[(1, 2)] * (-f / z2);
            dt.z += dj[(0, 0)] * f / z2 + dj[(0, 2)] * 2.0 * f * s.t.x / z3 + dj[(1, 1)] * (-f / z2)
                + dj[(1, 2)] * (-2.0 * f * s.t.y / z3);
            let dpos = wr.transpose() * dt;
            let dsigma = wr.transpose() * dm * wr;
            let mr = s.r * Mat3::from_diagonal(&s.scale);
            let dmr = 2.0 * dsigma * mr;
            let mut ds = Vec3::zeros();
            let mut dr = Mat3::zeros();
            for i in 0..3 {
                for jj in 0..3 {
                    ds[jj] += dmr[(i, jj)] * s.r[(i, jj)];
                    dr[(i, jj)] = dmr[(i, jj)] * s.scale[jj];
                }
            }
            let dls = ds.component_mul(&s.scale);
            let partials = rotation_partials(s.qhat);
            let dqhat: [f64; 4] = std::array::from_fn(|c| dr.component_mul(&partials[c]).sum());
            let proj: f64 = (0..4).map(|c| s.qhat[c] * dqhat[c]).sum();
            let dq = std::array::from_fn(|c| (dqhat[c] - s.qhat[c] * proj) / s.qnorm);
            let ndc = (a.mean[0] * w as f64 * 0.5).hypot(a.mean[1] * h as f64 * 0.5);
            (s.index as usize, dpos, dls, dq, dlogit, Vec3::from(a.color), ndc)
        })
        .collect();

    let mut grads = Gradients::zeros(cloud.len());
    for (i, dpos, dls, dq, dlogit, dcol, ndc) in per_splat {
        grads.positions[i] = dpos;
        grads.log_scales[i] = dls;
        grads.rotations[i] = dq;
        grads.opacity_logits[i] = dlogit;
        grads.colors[i] = dcol;
        grads.mean2d_ndc[i] = ndc;
        grads.visible[i] = true;
    }
    Ok(grads)
}

/// Splat footprint in pixels, as seen by the renderer (3σ box half-extents).
pub fn screen_radius(g: &Gaussian3D, intr: &CameraIntrinsics, pose: &CameraPose) -> Option<f64> {
    let p = project_gaussian(g, intr, pose).ok()?;
    Some(SUPPORT_SIGMA * p.cov2d[(0, 0)].max(p.cov2d[(1, 1)]).sqrt())
}

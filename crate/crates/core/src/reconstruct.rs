//! Single-image Gaussian reconstruction: initialization, the guided
//! optimization loop, Adam, and densification/pruning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussians::{
    quaternion_to_matrix, render, render_backward, Gaussian3D, GaussianCloud, GaussianError, Gradients,
    LOG_SCALE_MAX, LOG_SCALE_MIN,
};
use crate::geometry::{
    look_at, pose_from_spherical, relative_spherical, CameraIntrinsics, CameraPose, GeometryError, Spherical, Vec3,
    DEFAULT_FOV_Y_DEG, DEFAULT_RADIUS,
};
use crate::guidance::{GuidanceError, GuidanceProvider, GuidanceRequest};
use crate::imageops::{composite_over, ImageError, ImageRGBA};

const WHITE: [f64; 3] = [1.0; 3];
const LOGIT_LIMIT: f64 = 30.0;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("invalid reconstruction config: {0}")]
    Config(String),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("non-finite loss at iteration {iteration} (loss_ref {loss_ref}, loss_novel {loss_novel}, {n_gaussians} Gaussians)")]
    NonFinite { iteration: usize, loss_ref: f64, loss_novel: f64, n_gaussians: usize, state: Box<GaussianCloud> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub position: f64,
    /// Position rate at the last iteration, as a fraction of `position`.
    pub position_final_factor: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { position: 1.6e-3, position_final_factor: 0.01, scale: 5e-3, rotation: 1e-3, opacity: 5e-2, color: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyConfig {
    pub interval: usize,
    /// Mean NDC-space positional gradient norm above which a Gaussian grows.
    pub grad_threshold: f64,
    /// Largest scale axis (scene units) below which growth clones instead of splits.
    pub split_scale_threshold: f64,
    pub prune_opacity: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self { interval: 100, grad_threshold: 2e-4, split_scale_threshold: 0.05, prune_opacity: 0.05, max_gaussians: 100_000 }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.interval < 1 {
            return Err("densify.interval must be ≥ 1".into());
        }
        if !(self.prune_opacity > 0.0 && self.prune_opacity < 1.0) {
            return Err(format!("densify.prune_opacity must be in (0, 1), got {}", self.prune_opacity));
        }
        if !(self.grad_threshold >= 0.0) || !(self.split_scale_threshold > 0.0) {
            return Err("densify thresholds must be non-negative".into());
        }
        if self.max_gaussians < 1 {
            return Err("densify.max_gaussians must be ≥ 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferencePose {
    pub position: [f64; 3],
    pub up: [f64; 3],
    pub fov_y_deg: f64,
}

impl Default for ReferencePose {
    fn default() -> Self {
        Self { position: [DEFAULT_RADIUS, 0.0, 0.0], up: [0.0, 0.0, 1.0], fov_y_deg: DEFAULT_FOV_Y_DEG }
    }
}

impl ReferencePose {
    pub fn pose(&self) -> Result<CameraPose, GeometryError> {
        look_at(Vec3::from(self.position), Vec3::zeros(), Vec3::from(self.up))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    pub iterations: usize,
    pub n_init: usize,
    pub init_radius: f64,
    pub lr: LearningRates,
    /// Absolute elevation range for continuous novel-view sampling, degrees.
    pub elevation_range_deg: [f64; 2],
    /// Orbit radius of novel views; 0 uses the reference radius.
    pub novel_radius: f64,
    pub reference: ReferencePose,
    pub lambda_rgb: f64,
    pub lambda_mask: f64,
    pub densify: DensifyConfig,
    /// Set from the pipeline-level seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            n_init: 5000,
            init_radius: 0.5,
            lr: LearningRates::default(),
            elevation_range_deg: [-30.0, 30.0],
            novel_radius: 0.0,
            reference: ReferencePose::default(),
            lambda_rgb: 1.0,
            lambda_mask: 1.0,
            densify: DensifyConfig::default(),
            seed: 0,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.iterations < 1 {
            return Err("iterations must be ≥ 1".into());
        }
        if self.n_init < 1 {
            return Err("n_init must be ≥ 1".into());
        }
        if !(self.init_radius > 0.0) {
            return Err("init_radius must be positive".into());
        }
        let lr = &self.lr;
        for (name, v) in [
            ("position", lr.position),
            ("position_final_factor", lr.position_final_factor),
            ("scale", lr.scale),
            ("rotation", lr.rotation),
            ("opacity", lr.opacity),
            ("color", lr.color),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("lr.{name} must be positive, got {v}"));
            }
        }
        if !(self.lambda_rgb >= 0.0 && self.lambda_mask >= 0.0) {
            return Err("loss weights must be ≥ 0".into());
        }
        let [lo, hi] = self.elevation_range_deg;
        if !(lo <= hi && lo >= -90.0 && hi <= 90.0) {
            return Err(format!("elevation_range_deg [{lo}, {hi}] must be ordered within [-90, 90]"));
        }
        if !(self.novel_radius >= 0.0) {
            return Err("novel_radius must be ≥ 0".into());
        }
        self.reference.pose().map_err(|e| format!("reference pose: {e}"))?;
        self.densify.validate()
    }

    /// Position learning rate at iteration `i`, decayed log-linearly.
    pub fn position_lr(&self, i: usize) -> f64 {
        let t = if self.iterations > 1 { i as f64 / (self.iterations - 1) as f64 } else { 0.0 };
        let start = self.lr.position.ln();
        let end = (self.lr.position * self.lr.position_final_factor).ln();
        (start + (end - start) * t).exp()
    }
}

/// Adam with a shared step counter and bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15, step: 0 }
    }
}

impl Adam {
    /// Applies one update to `params`; call [`Adam::tick`] once beforehand.
    pub fn update(&self, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64) {
        for k in 0..params.len() {
            self.update_one(&mut params[k], grads[k], &mut m[k], &mut v[k], lr);
        }
    }

    #[inline]
    fn update_one(&self, p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64) {
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
    }

    fn update_vec3(&self, params: &mut [Vec3], grads: &[Vec3], m: &mut [f64], v: &mut [f64], lr: f64) {
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for c in 0..3 {
                self.update_one(&mut p[c], g[c], &mut m[3 * i + c], &mut v[3 * i + c], lr);
            }
        }
    }

    pub fn tick(&mut self) {
        self.step += 1;
    }
}

/// First and second moments for one parameter group, `width` scalars per Gaussian.
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    width: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(width: usize, n: usize) -> Self {
        Self { width, m: vec![0.0; width * n], v: vec![0.0; width * n] }
    }

    /// Rebuilds state after densification; `None` parents start fresh.
    fn remap(&self, parents: &[Option<usize>]) -> Self {
        let w = self.width;
        let mut out = Self::new(w, parents.len());
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                out.m[i * w..(i + 1) * w].copy_from_slice(&self.m[p * w..(p + 1) * w]);
                out.v[i * w..(i + 1) * w].copy_from_slice(&self.v[p * w..(p + 1) * w]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct OptimizerState {
    adam: Adam,
    groups: [Moments; 5],
}

impl OptimizerState {
    fn new(n: usize) -> Self {
        Self {
            adam: Adam::default(),
            groups: [Moments::new(3, n), Moments::new(3, n), Moments::new(4, n), Moments::new(1, n), Moments::new(3, n)],
        }
    }

    fn remap(&mut self, parents: &[Option<usize>]) {
        self.groups = std::array::from_fn(|g| self.groups[g].remap(parents));
    }

    fn step(&mut self, cloud: &mut GaussianCloud, grads: &Gradients, lrs: [f64; 5]) {
        self.adam.tick();
        let adam = &self.adam;
        let [g_pos, g_scale, g_rot, g_op, g_col] = &mut self.groups;
        adam.update_vec3(&mut cloud.positions, &grads.positions, &mut g_pos.m, &mut g_pos.v, lrs[0]);
        adam.update_vec3(&mut cloud.log_scales, &grads.log_scales, &mut g_scale.m, &mut g_scale.v, lrs[1]);
        adam.update(cloud.rotations.as_flattened_mut(), grads.rotations.as_flattened(), &mut g_rot.m, &mut g_rot.v, lrs[2]);
        adam.update(&mut cloud.opacity_logits, &grads.opacity_logits, &mut g_op.m, &mut g_op.v, lrs[3]);
        adam.update_vec3(&mut cloud.colors, &grads.colors, &mut g_col.m, &mut g_col.v, lrs[4]);
    }
}

/// Restores the cloud invariants after an update.
pub fn clamp_cloud(cloud: &mut GaussianCloud) {
    for i in 0..cloud.len() {
        cloud.log_scales[i] = cloud.log_scales[i].map(|v| v.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX));
        cloud.opacity_logits[i] = cloud.opacity_logits[i].clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
        cloud.colors[i] = cloud.colors[i].map(|v| v.clamp(0.0, 1.0));
        let q = cloud.rotations[i];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        cloud.rotations[i] = if n > 1e-12 { q.map(|v| v / n) } else { [1.0, 0.0, 0.0, 0.0] };
    }
}

pub fn init_cloud(reference: &ImageRGBA, n: usize, radius: f64, seed: u64) -> Result<GaussianCloud, ReconstructError> {
    if n < 1 {
        return Err(ReconstructError::Config("n must be ≥ 1".into()));
    }
    if !(radius > 0.0) {
        return Err(ReconstructError::Config("radius must be positive".into()));
    }
    let color = Vec3::from(reference.mean_foreground_rgb().ok_or(ImageError::EmptyForeground)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<Vec3> = (0..n)
        .map(|_| loop {
            let p = Vec3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
            if p.norm_squared() <= 1.0 {
                break p * radius;
            }
        })
        .collect();
    let scale = if n == 1 { radius } else { mean_nearest_neighbor(&positions) };
    let scale = scale.max(LOG_SCALE_MIN.exp() * 10.0);
    Ok(GaussianCloud::from_gaussians(positions.into_iter().map(|p| Gaussian3D::isotropic(p, scale, 0.1, color))))
}

fn mean_nearest_neighbor(points: &[Vec3]) -> f64 {
    let total: f64 = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / points.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyOutcome {
    pub cloud: GaussianCloud,
    /// For each output Gaussian, the input Gaussian whose optimizer state it keeps.
    pub parents: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones or splits high-gradient Gaussians, then prunes transparent ones.
/// `grad_stats` holds the mean NDC positional gradient norm per Gaussian.
pub fn densify_and_prune(
    cloud: &GaussianCloud,
    grad_stats: &[f64],
    cfg: &DensifyConfig,
    rng: &mut ChaCha8Rng,
) -> DensifyOutcome {
    let n = cloud.len();
    let mut budget = cfg.max_gaussians.saturating_sub(n);
    let mut is_split = vec![false; n];
    let mut clones = Vec::new();
    let mut splits = Vec::new();
    for i in 0..n {
        if budget == 0 {
            break;
        }
        if !(grad_stats.get(i).copied().unwrap_or(0.0) > cfg.grad_threshold) {
            continue;
        }
        let max_scale = cloud.log_scales[i].max().exp();
        if max_scale <= cfg.split_scale_threshold {
            clones.push(i);
        } else {
            is_split[i] = true;
            splits.push(i);
        }
        budget -= 1;
    }

    let mut out = GaussianCloud::new();
    let mut parents = Vec::new();
    for i in 0..n {
        if !is_split[i] {
            out.push(cloud.get(i));
            parents.push(Some(i));
        }
    }
    for &i in &clones {
        out.push(cloud.get(i));
        parents.push(None);
    }
    for &i in &splits {
        let g = cloud.get(i);
        let (r, _, _) = quaternion_to_matrix(g.rotation);
        let s = g.scale();
        for _ in 0..2 {
            let z = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let mut child = g;
            child.position = g.position + r * s.component_mul(&z);
            child.log_scale = g.log_scale.map(|v| v - 1.6f64.ln());
            out.push(child);
            parents.push(None);
        }
    }

    let before = out.len();
    let mut keep: Vec<bool> = (0..out.len()).map(|i| out.opacity(i) >= cfg.prune_opacity).collect();
    let kept = keep.iter().filter(|&&k| k).count();
    if kept > cfg.max_gaussians {
        // drop the most transparent survivors until under the cap
        let mut order: Vec<usize> = (0..out.len()).filter(|&i| keep[i]).collect();
        order.sort_by(|&a, &b| out.opacity_logits[a].total_cmp(&out.opacity_logits[b]).then(a.cmp(&b)));
        for &i in order.iter().take(kept - cfg.max_gaussians) {
            keep[i] = false;
        }
    }
    out.retain_mask(&keep);
    let parents: Vec<_> = parents.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| p).collect();
    DensifyOutcome { pruned: before - out.len(), cloud: out, parents, cloned: clones.len(), split: splits.len() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss_ref: f64,
    pub loss_novel: f64,
    pub n_gaussians: usize,
}

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iteration,loss_ref,loss_novel,n_gaussians\n");
    for r in trace {
        out.push_str(&format!("{},{:e},{:e},{}\n", r.iteration, r.loss_ref, r.loss_novel, r.n_gaussians));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub cloud: GaussianCloud,
    pub trace: Vec<TraceRow>,
}

/// Loss gradients of `weight · MSE(rgb, target)` (+ alpha term) for one render.
struct ImageLoss {
    loss: f64,
    dcolor: Vec<[f64; 3]>,
    dalpha: Vec<f64>,
}

fn image_loss(render: &ImageRGBA, target: &ImageRGBA, w_rgb: f64, w_alpha: f64) -> ImageLoss {
    let n = render.pixels.len() as f64;
    let mut loss = 0.0;
    let mut dcolor = Vec::with_capacity(render.pixels.len());
    let mut dalpha = Vec::with_capacity(render.pixels.len());
    for (p, t) in render.pixels.iter().zip(&target.pixels) {
        let mut dc = [0.0; 3];
        for c in 0..3 {
            let d = p[c] - t[c];
            loss += w_rgb * d * d / (3.0 * n);
            dc[c] = w_rgb * 2.0 * d / (3.0 * n);
        }
        let da = p[3] - t[3];
        loss += w_alpha * da * da / n;
        dcolor.push(dc);
        dalpha.push(w_alpha * 2.0 * da / n);
    }
    ImageLoss { loss, dcolor, dalpha }
}

fn opaque(img: &ImageRGBA) -> ImageRGBA {
    let mut out = img.clone();
    out.pixels.iter_mut().for_each(|p| p[3] = 1.0);
    out
}

/// Runs the guided optimization. `observer` sees the cloud after every
/// iteration.
pub fn optimize(
    reference: &ImageRGBA,
    guidance: &mut dyn GuidanceProvider,
    config: &ReconstructionConfig,
    mut observer: Option<&mut dyn FnMut(usize, &GaussianCloud)>,
) -> Result<Reconstruction, ReconstructError> {
    config.validate().map_err(ReconstructError::Config)?;
    let ref_pose = config.reference.pose()?;
    let intr = CameraIntrinsics::new(config.reference.fov_y_deg, reference.width, reference.height)?;
    let ref_white = composite_over(reference, WHITE);
    let mut ref_target = ref_white.clone();
    for (p, r) in ref_target.pixels.iter_mut().zip(&reference.pixels) {
        p[3] = r[3];
    }

    let mut cloud = init_cloud(reference, config.n_init, config.init_radius, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_0b17);
    let mut opt = OptimizerState::new(cloud.len());
    let mut stat_sum = vec![0.0; cloud.len()];
    let mut stat_count = vec![0u32; cloud.len()];
    let base_radius = ref_pose.position.norm();
    let radius = if config.novel_radius > 0.0 { config.novel_radius } else { base_radius };
    let lattice: Option<Vec<CameraPose>> = guidance.pose_lattice().map(<[CameraPose]>::to_vec);
    let mut trace = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        // reference view
        let out_ref = render(&cloud, &intr, &ref_pose, WHITE);
        let l_ref = image_loss(&out_ref.color, &ref_target, config.lambda_rgb, config.lambda_mask);
        let g_ref = render_backward(&cloud, &out_ref, &l_ref.dcolor, &l_ref.dalpha)?;

        // novel view
        let pose = match &lattice {
            Some(l) if !l.is_empty() => l[rng.random_range(0..l.len())],
            _ => {
                let [lo, hi] = config.elevation_range_deg;
                let el = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let az = rng.random_range(0.0..360.0);
                pose_from_spherical(&Spherical { elevation_deg: el, azimuth_deg: az, radius })?
            }
        };
        let out_novel = render(&cloud, &intr, &pose, WHITE);
        let req = GuidanceRequest {
            rendered: opaque(&out_novel.color),
            reference: ref_white.clone(),
            relative_pose: relative_spherical(&ref_pose, &pose)?,
            step: it,
            total_steps: config.iterations,
        };
        let resp = guidance.provide_target(&req)?;
        resp.validate(&req)?;
        let target = composite_over(&resp.target, WHITE);
        let l_novel = image_loss(&out_novel.color, &target, resp.weight, 0.0);
        let g_novel = render_backward(&cloud, &out_novel, &l_novel.dcolor, &l_novel.dalpha)?;
        accumulate_stats(&mut stat_sum, &mut stat_count, &g_ref);
        accumulate_stats(&mut stat_sum, &mut stat_count, &g_novel);
        let mut grads = g_ref;
        grads.add_scaled(&g_novel, 1.0);

        let loss_ref = l_ref.loss;
        let loss_novel = l_novel.loss;
        if !loss_ref.is_finite() || !loss_novel.is_finite() || !grads.all_finite() {
            return Err(ReconstructError::NonFinite {
                iteration: it,
                loss_ref,
                loss_novel,
                n_gaussians: cloud.len(),
                state: Box::new(cloud),
            });
        }
        trace.push(TraceRow { iteration: it, loss_ref, loss_novel, n_gaussians: cloud.len() });

        let lrs = [config.position_lr(it), config.lr.scale, config.lr.rotation, config.lr.opacity, config.lr.color];
        opt.step(&mut cloud, &grads, lrs);
        clamp_cloud(&mut cloud);

        if (it + 1) % config.densify.interval == 0 && it + 1 < config.iterations {
            let stats: Vec<f64> =
                stat_sum.iter().zip(&stat_count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
            let outcome = densify_and_prune(&cloud, &stats, &config.densify, &mut rng);
            log::debug!(
                "iteration {}: cloned {}, split {}, pruned {}, now {}",
                it + 1,
                outcome.cloned,
                outcome.split,
                outcome.pruned,
                outcome.cloud.len()
            );
            opt.remap(&outcome.parents);
            cloud = outcome.cloud;
            stat_sum = vec![0.0; cloud.len()];
            stat_count = vec![0; cloud.len()];
        }
        if let Some(obs) = observer.as_mut() {
            obs(it, &cloud);
        }
    }
    Ok(Reconstruction { cloud, trace })
}

fn accumulate_stats(sum: &mut [f64], count: &mut [u32], grads: &Gradients) {
    for i in 0..sum.len() {
        if grads.visible[i] {
            sum[i] += grads.mean2d_ndc[i];
            count[i] += 1;
        }
    }
}

//! Z-buffered triangle rasterization of textured meshes.
//!
//! Pixel centers sit at (x + 0.5, y + 0.5); a pixel is covered when its
//! center is inside the triangle, with the top-left rule on exact edges.
//! Attributes are interpolated perspective-correctly. Depth is the distance
//! along the camera's view axis, `+∞` where nothing was drawn.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, CameraPose, Vec3};
use crate::imageops::ImageRGBA;
use crate::mesh::{Material, Mesh, FALLBACK_GRAY};

pub const AMBIENT: f64 = 0.15;
const BAND_ROWS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Shading {
    /// Material diffuse color, unlit; textures ignored.
    Flat,
    /// Texture (or diffuse color) scaled by `max(0, n·l) + ambient`.
    #[default]
    Lambertian,
    /// Texture (or diffuse color), unlit.
    Textured,
}

impl std::str::FromStr for Shading {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat" => Ok(Shading::Flat),
            "lambertian" => Ok(Shading::Lambertian),
            "textured" => Ok(Shading::Textured),
            other => Err(format!("unknown shading '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub shading: Shading,
    /// Unit direction towards the light; `None` is a headlight along the view axis.
    pub light_dir: Option<[f64; 3]>,
    /// Opaque background color; `None` leaves the background transparent.
    pub background_rgb: Option<[f64; 3]>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { shading: Shading::Lambertian, light_dir: None, background_rgb: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Framebuffer {
    pub color: ImageRGBA,
    pub depth: Vec<f64>,
}

impl Framebuffer {
    pub fn new(width: u32, height: u32, background: Option<[f64; 3]>) -> Self {
        let bg = match background {
            Some([r, g, b]) => [r, g, b, 1.0],
            None => [0.0; 4],
        };
        Self { color: ImageRGBA::filled(width, height, bg), depth: vec![f64::INFINITY; (width * height) as usize] }
    }

    pub fn coverage(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }
}

/// Clip-space vertex carried through near-plane clipping.
#[derive(Debug, Clone, Copy)]
struct ClipVertex {
    cam: Vec3,
    /// Barycentric weights w.r.t. the source triangle's corners.
    bary: [f64; 3],
}

/// A screen-space triangle ready for scan conversion.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScreenTri {
    pub xy: [[f64; 2]; 3],
    pub inv_depth: [f64; 3],
    pub bary: [[f64; 3]; 3],
    pub source: usize,
}

fn clip_near(poly: &[ClipVertex], near: f64) -> Vec<ClipVertex> {
    // keep the half-space cam.z <= -near
    let inside = |v: &ClipVertex| v.cam.z <= -near;
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        match (inside(&a), inside(&b)) {
            (true, true) => out.push(b),
            (true, false) | (false, true) => {
                let t = (-near - a.cam.z) / (b.cam.z - a.cam.z);
                let lerp = |x: f64, y: f64| x + (y - x) * t;
                let v = ClipVertex {
                    cam: a.cam + (b.cam - a.cam) * t,
                    bary: [lerp(a.bary[0], b.bary[0]), lerp(a.bary[1], b.bary[1]), lerp(a.bary[2], b.bary[2])],
                };
                out.push(v);
                if !inside(&a) {
                    out.push(b);
                }
            }
            (false, false) => {}
        }
    }
    out
}

pub(crate) fn setup_triangles(mesh: &Mesh, intr: &CameraIntrinsics, pose: &CameraPose) -> Vec<ScreenTri> {
    let f = intr.focal();
    let (cx, cy) = intr.principal_point();
    let cam: Vec<Vec3> = mesh.vertices.iter().map(|v| pose.world_to_camera(v)).collect();
    let mut out = Vec::with_capacity(mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let poly = [
            ClipVertex { cam: cam[tri[0].v as usize], bary: [1.0, 0.0, 0.0] },
            ClipVertex { cam: cam[tri[1].v as usize], bary: [0.0, 1.0, 0.0] },
            ClipVertex { cam: cam[tri[2].v as usize], bary: [0.0, 0.0, 1.0] },
        ];
        let clipped = if poly.iter().all(|v| v.cam.z <= -intr.near) {
            poly.to_vec()
        } else {
            clip_near(&poly, intr.near)
        };
        if clipped.len() < 3 {
            continue;
        }
        let proj: Vec<([f64; 2], f64)> = clipped
            .iter()
            .map(|v| {
                let d = -v.cam.z;
                ([cx + f * v.cam.x / d, cy - f * v.cam.y / d], 1.0 / d)
            })
            .collect();
        for k in 1..clipped.len() - 1 {
            let idx = [0, k, k + 1];
            out.push(ScreenTri {
                xy: idx.map(|i| proj[i].0),
                inv_depth: idx.map(|i| proj[i].1),
                bary: idx.map(|i| clipped[i].bary),
                source: t,
            });
        }
    }
    out
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

#[inline]
fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    d[1] < 0.0 || (d[1] == 0.0 && d[0] > 0.0)
}

/// A covered pixel: screen-space barycentrics for the (oriented) triangle.
pub(crate) struct Fragment {
    pub x: u32,
    pub y: u32,
    pub depth: f64,
    /// Perspective-correct weights on the source triangle's corners.
    pub bary: [f64; 3],
}

/// Scan-converts one screen triangle restricted to rows `[y0, y1)`.
pub(crate) fn rasterize_tri(
    tri: &ScreenTri,
    width: u32,
    y0: u32,
    y1: u32,
    mut emit: impl FnMut(Fragment),
) {
    let [mut a, mut b, c] = tri.xy;
    let mut order = [0usize, 1, 2];
    let mut area = edge(a, b, c);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        std::mem::swap(&mut a, &mut b);
        order.swap(0, 1);
        area = -area;
    }
    let xs = [a[0], b[0], c[0]];
    let ys = [a[1], b[1], c[1]];
    let min_x = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_x = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_y = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_y = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let px0 = ((min_x - 0.5).ceil().max(0.0)) as i64;
    let px1 = ((max_x - 0.5).floor()).min(width as f64 - 1.0) as i64;
    let py0 = ((min_y - 0.5).ceil().max(y0 as f64)) as i64;
    let py1 = ((max_y - 0.5).floor()).min(y1 as f64 - 1.0) as i64;
    if px0 > px1 || py0 > py1 {
        return;
    }
    let tl = [is_top_left(b, c), is_top_left(c, a), is_top_left(a, b)];
    let inv_d = order.map(|i| tri.inv_depth[i]);
    let src_bary = order.map(|i| tri.bary[i]);
    for py in py0..=py1 {
        let sy = py as f64 + 0.5;
        for px in px0..=px1 {
            let p = [px as f64 + 0.5, sy];
            let w = [edge(b, c, p), edge(c, a, p), edge(a, b, p)];
            let covered = (0..3).all(|k| w[k] > 0.0 || (w[k] == 0.0 && tl[k]));
            if !covered {
                continue;
            }
            let l = [w[0] / area, w[1] / area, w[2] / area];
            let inv = l[0] * inv_d[0] + l[1] * inv_d[1] + l[2] * inv_d[2];
            if !(inv > 0.0) {
                continue;
            }
            let depth = 1.0 / inv;
            let pw = [l[0] * inv_d[0] * depth, l[1] * inv_d[1] * depth, l[2] * inv_d[2] * depth];
            let mut bary = [0.0; 3];
            for k in 0..3 {
                for j in 0..3 {
                    bary[j] += pw[k] * src_bary[k][j];
                }
            }
            emit(Fragment { x: px as u32, y: py as u32, depth, bary });
        }
    }
}

struct Shader<'a> {
    mesh: &'a Mesh,
    materials: &'a [Material],
    settings: &'a RenderSettings,
    light: Vec3,
    eye: Vec3,
}

impl Shader<'_> {
    fn shade(&self, t: usize, bary: [f64; 3]) -> [f64; 3] {
        let tri = &self.mesh.triangles[t];
        let material = self.mesh.material_ids.get(t).copied().flatten().and_then(|i| self.materials.get(i));
        let diffuse = material.map_or(FALLBACK_GRAY, |m| m.diffuse_rgb);
        let base = match self.settings.shading {
            Shading::Flat => return diffuse,
            Shading::Textured | Shading::Lambertian => {
                match (material.and_then(|m| m.diffuse_texture.as_ref()), uv_at(self.mesh, tri, bary)) {
                    (Some(tex), Some([u, v])) => {
                        let s = tex.sample(u, v);
                        [s[0], s[1], s[2]]
                    }
                    _ => diffuse,
                }
            }
        };
        if self.settings.shading == Shading::Textured {
            return base;
        }
        let [pa, pb, pc] = self.mesh.triangle_positions(t);
        let pos = pa * bary[0] + pb * bary[1] + pc * bary[2];
        let mut n = normal_at(self.mesh, tri, bary).unwrap_or_else(|| self.mesh.face_cross(t));
        let len = n.norm();
        if len > 0.0 {
            n /= len;
        }
        // two-sided lighting
        if n.dot(&(self.eye - pos)) < 0.0 {
            n = -n;
        }
        let k = (n.dot(&self.light).max(0.0) + AMBIENT).min(1.0);
        [base[0] * k, base[1] * k, base[2] * k]
    }
}

fn uv_at(mesh: &Mesh, tri: &[crate::mesh::Corner; 3], bary: [f64; 3]) -> Option<[f64; 2]> {
    let mut uv = [0.0; 2];
    for k in 0..3 {
        let t = mesh.uvs.get(tri[k].vt? as usize)?;
        uv[0] += bary[k] * t[0];
        uv[1] += bary[k] * t[1];
    }
    Some(uv)
}

fn normal_at(mesh: &Mesh, tri: &[crate::mesh::Corner; 3], bary: [f64; 3]) -> Option<Vec3> {
    let mut n = Vec3::zeros();
    for k in 0..3 {
        n += mesh.normals.get(tri[k].vn? as usize)? * bary[k];
    }
    Some(n)
}

pub fn render_mesh(
    mesh: &Mesh,
    materials: &[Material],
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    settings: &RenderSettings,
) -> Framebuffer {
    render_mesh_banded(mesh, materials, intr, pose, settings, BAND_ROWS)
}

/// Renders with the frame split into horizontal bands of `band_rows` rows,
/// each band rasterized independently (in parallel). Output does not depend
/// on the band size.
pub fn render_mesh_banded(
    mesh: &Mesh,
    materials: &[Material],
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    settings: &RenderSettings,
    band_rows: u32,
) -> Framebuffer {
    let (w, h) = (intr.width, intr.height);
    let mut fb = Framebuffer::new(w, h, settings.background_rgb);
    if mesh.triangles.is_empty() {
        return fb;
    }
    let tris = setup_triangles(mesh, intr, pose);
    let light = match settings.light_dir {
        Some(l) => Vec3::from(l).normalize(),
        None => -pose.forward(),
    };
    let shader = Shader { mesh, materials, settings, light, eye: pose.position };
    let band_rows = band_rows.max(1);
    let band_px = (band_rows * w) as usize;
    let far = intr.far;
    fb.color
        .pixels
        .par_chunks_mut(band_px)
        .zip(fb.depth.par_chunks_mut(band_px))
        .enumerate()
        .for_each(|(band, (color, depth))| {
            let y0 = band as u32 * band_rows;
            let y1 = (y0 + band_rows).min(h);
            let mut winner: Vec<Option<(usize, [f64; 3])>> = vec![None; color.len()];
            for tri in &tris {
                rasterize_tri(tri, w, y0, y1, |frag| {
                    let i = ((frag.y - y0) * w + frag.x) as usize;
                    if frag.depth < depth[i] && frag.depth <= far {
                        depth[i] = frag.depth;
                        winner[i] = Some((tri.source, frag.bary));
                    }
                });
            }
            for (i, win) in winner.into_iter().enumerate() {
                if let Some((t, bary)) = win {
                    let [r, g, b] = shader.shade(t, bary);
                    color[i] = [r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0), 1.0];
                }
            }
        });
    fb
}

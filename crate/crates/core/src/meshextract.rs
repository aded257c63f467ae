//! Density-field marching cubes and multi-view texture baking for Gaussian clouds.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use thiserror::Error;

use crate::gaussians::{quaternion_to_matrix, render, GaussianCloud};
use crate::geometry::{
    angle_between, generate_paper_views, project_point, CameraIntrinsics, CameraPose, GeometryError, Vec3,
};
use crate::imageops::{ImageError, ImageRGBA};
use crate::mesh::{write_mtl, write_obj, Corner, Material, Mesh, TextureImage, FALLBACK_GRAY};

/// Squared Mahalanobis distance beyond which a Gaussian contributes nothing.
pub const TRUNCATION_M2: f64 = 9.0;
pub const BLOCK: usize = 16;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("grid resolution must be at least 2 per axis, got {0:?}")]
    Resolution([usize; 3]),
    #[error("grid bounds are degenerate: {0:?} .. {1:?}")]
    DegenerateBounds([f64; 3], [f64; 3]),
    #[error("texture baking needs at least one view")]
    NoViews,
    #[error("texture baking needs a non-empty mesh")]
    EmptyMesh,
    #[error("cloud is empty")]
    EmptyCloud,
    #[error("density never crosses iso {0} inside the cloud bounds")]
    NoSurface(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("atlas size must be at least 2, got {0}")]
    AtlasSize(u32),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// Per-Gaussian data needed for density evaluation.
#[derive(Debug, Clone)]
struct Kernel {
    mean: Vec3,
    /// Rows scaled so that `|axes · (x − μ)|²` is the squared Mahalanobis distance.
    axes: [Vec3; 3],
    alpha: f64,
    half_extent: Vec3,
}

fn kernels(cloud: &GaussianCloud) -> Vec<Kernel> {
    (0..cloud.len())
        .map(|i| {
            let (r, _, _) = quaternion_to_matrix(cloud.rotations[i]);
            let s = cloud.log_scales[i].map(f64::exp);
            let axes = std::array::from_fn(|k| r.column(k).into_owned() / s[k]);
            // 3σ box of the ellipsoid: sqrt(Σ_jj) = |row j of R·S|
            let half_extent = Vec3::from_fn(|j, _| 3.0 * (0..3).map(|k| (r[(j, k)] * s[k]).powi(2)).sum::<f64>().sqrt());
            Kernel { mean: cloud.positions[i], axes, alpha: cloud.opacity(i), half_extent }
        })
        .collect()
}

impl Kernel {
    fn eval(&self, x: &Vec3) -> f64 {
        let d = x - self.mean;
        let m2: f64 = self.axes.iter().map(|a| a.dot(&d).powi(2)).sum();
        if m2 > TRUNCATION_M2 {
            0.0
        } else {
            self.alpha * (-0.5 * m2).exp()
        }
    }
}

/// Σ αᵢ exp(−½ mᵢ²) with contributions beyond 3σ dropped.
pub fn density_at(cloud: &GaussianCloud, x: &Vec3) -> f64 {
    kernels(cloud).iter().map(|k| k.eval(x)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub resolution: [usize; 3],
    pub min: Vec3,
    pub max: Vec3,
    /// x-fastest sample values at the cell-corner lattice.
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(resolution: [usize; 3], min: Vec3, max: Vec3) -> Result<Self, ExtractError> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(ExtractError::Resolution(resolution));
        }
        if (0..3).any(|k| !(max[k] > min[k]) || !min[k].is_finite() || !max[k].is_finite()) {
            return Err(ExtractError::DegenerateBounds(min.into(), max.into()));
        }
        Ok(Self { resolution, min, max, values: vec![0.0; resolution.iter().product()] })
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn spacing(&self) -> Vec3 {
        Vec3::from_fn(|a, _| (self.max[a] - self.min[a]) / (self.resolution[a] - 1) as f64)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.spacing();
        self.min + Vec3::new(i as f64 * h.x, j as f64 * h.y, k as f64 * h.z)
    }

    /// Samples `f` at every lattice point.
    pub fn from_fn(
        resolution: [usize; 3],
        min: Vec3,
        max: Vec3,
        f: impl Fn(&Vec3) -> f64 + Sync,
    ) -> Result<Self, ExtractError> {
        let mut g = Self::new(resolution, min, max)?;
        let [nx, ny, _] = resolution;
        let pts: Vec<Vec3> = (0..g.values.len()).map(|n| g.point(n % nx, (n / nx) % ny, n / (nx * ny))).collect();
        g.values = pts.par_iter().map(&f).collect();
        Ok(g)
    }
}

/// Cloud AABB inflated by three times the largest scale.
pub fn default_bounds(cloud: &GaussianCloud) -> Option<(Vec3, Vec3)> {
    let first = cloud.positions.first()?;
    let (mut lo, mut hi) = (*first, *first);
    let mut max_scale: f64 = 0.0;
    for (p, s) in cloud.positions.iter().zip(&cloud.log_scales) {
        lo = lo.inf(p);
        hi = hi.sup(p);
        max_scale = max_scale.max(s.max().exp());
    }
    let pad = Vec3::repeat(3.0 * max_scale);
    Some((lo - pad, hi + pad))
}

/// Block-culled evaluation of [`density_at`] over the lattice.
pub fn sample_grid(cloud: &GaussianCloud, resolution: [usize; 3], min: Vec3, max: Vec3) -> Result<DensityGrid, ExtractError> {
    let mut grid = DensityGrid::new(resolution, min, max)?;
    let ks = kernels(cloud);
    let h = grid.spacing();
    let nb: [usize; 3] = std::array::from_fn(|a| resolution[a].div_ceil(BLOCK));
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); nb.iter().product()];
    for (gi, k) in ks.iter().enumerate() {
        let lo = k.mean - k.half_extent;
        let hi = k.mean + k.half_extent;
        let mut range = [(0usize, 0usize); 3];
        let mut empty = false;
        for a in 0..3 {
            let first = ((lo[a] - min[a]) / h[a]).ceil().max(0.0);
            let last = ((hi[a] - min[a]) / h[a]).floor().min((resolution[a] - 1) as f64);
            if !(first <= last) {
                empty = true;
                break;
            }
            range[a] = (first as usize / BLOCK, last as usize / BLOCK);
        }
        if empty {
            continue;
        }
        for bz in range[2].0..=range[2].1 {
            for by in range[1].0..=range[1].1 {
                for bx in range[0].0..=range[0].1 {
                    lists[bx + nb[0] * (by + nb[1] * bz)].push(gi as u32);
                }
            }
        }
    }
    let [nx, ny, nz] = resolution;
    let slabs: Vec<Vec<f64>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut slab = vec![0.0; nx * ny];
            for y in 0..ny {
                for x in 0..nx {
                    let list = &lists[x / BLOCK + nb[0] * (y / BLOCK + nb[1] * (z / BLOCK))];
                    if list.is_empty() {
                        continue;
                    }
                    let p = grid.point(x, y, z);
                    slab[x + nx * y] = list.iter().map(|&g| ks[g as usize].eval(&p)).sum();
                }
            }
            slab
        })
        .collect();
    grid.values = slabs.concat();
    Ok(grid)
}

// Cube corner c sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
const EDGES: [(usize, usize); 12] =
    [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7)];

fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

fn edge_of(a: usize, b: usize) -> usize {
    EDGES.iter().position(|&(p, q)| (p, q) == (a, b) || (p, q) == (b, a)).expect("cube edge")
}

/// The six faces as corner cycles, counter-clockwise seen from outside.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let corner = |u: usize, v: usize| (side << axis) | (u << b) | (v << c);
            // (e_b, e_c, e_axis) is right-handed, so this cycle faces +axis
            let cyc = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            out.push(if side == 1 { cyc } else { [cyc[0], cyc[3], cyc[2], cyc[1]] });
        }
    }
    out
}

/// Triangle lists (edge ids) for all 256 corner configurations. Bit c set
/// means corner c is inside (value above iso). Contours are traced over the
/// cube faces with ambiguous faces always separating inside corners, so
/// neighbouring cells agree on every shared face.
fn case_table() -> &'static Vec<Vec<[u8; 3]>> {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let faces = faces();
        (0..256usize)
            .map(|case| {
                let inside = |c: usize| case >> c & 1 == 1;
                let mut next = [usize::MAX; 12];
                for f in &faces {
                    // runs of inside corners along the cycle; each run gives one
                    // segment from its exit edge back to its entry edge
                    for k in 0..4 {
                        let (c, n) = (f[k], f[(k + 1) % 4]);
                        if inside(c) && !inside(n) {
                            let exit = edge_of(c, n);
                            let mut j = k;
                            let entry = loop {
                                let p = f[(j + 3) % 4];
                                if !inside(p) {
                                    break edge_of(p, f[j]);
                                }
                                j = (j + 3) % 4;
                            };
                            next[exit] = entry;
                        }
                    }
                }
                let mut tris = Vec::new();
                let mut used = [false; 12];
                for start in 0..12 {
                    if next[start] == usize::MAX || used[start] {
                        continue;
                    }
                    let mut poly = vec![start];
                    used[start] = true;
                    let mut e = next[start];
                    while e != start {
                        used[e] = true;
                        poly.push(e);
                        e = next[e];
                    }
                    clip_ears(poly, &faces, &mut tris);
                }
                tris
            })
            .collect()
    })
}

fn share_face(a: usize, b: usize, faces: &[[usize; 4]]) -> bool {
    let on = |e: usize, f: &[usize; 4]| f.contains(&EDGES[e].0) && f.contains(&EDGES[e].1);
    faces.iter().any(|f| on(a, f) && on(b, f))
}

/// Triangulates a contour loop without creating diagonals that lie in a cube
/// face; a neighbouring cell could emit the same diagonal and break manifoldness.
fn clip_ears(mut poly: Vec<usize>, faces: &[[usize; 4]], tris: &mut Vec<[u8; 3]>) {
    while poly.len() > 3 {
        let n = poly.len();
        let ear = (0..n)
            .find(|&i| !share_face(poly[i_prev(i, n)], poly[(i + 1) % n], faces))
            .expect("contour loop without an interior diagonal");
        tris.push([poly[i_prev(ear, n)] as u8, poly[(ear + 1) % n] as u8, poly[ear] as u8]);
        poly.remove(ear);
    }
    tris.push([poly[0] as u8, poly[2] as u8, poly[1] as u8]);
}

fn i_prev(i: usize, n: usize) -> usize {
    (i + n - 1) % n
}

/// Marching cubes with linear edge interpolation. Normals point towards
/// decreasing values; vertices on shared lattice edges are emitted once.
pub fn marching_cubes(grid: &DensityGrid, iso: f64) -> Mesh {
    let table = case_table();
    let [nx, ny, nz] = grid.resolution;
    // lattice edge key: lower endpoint index * 3 + axis
    let edge_key = |x: usize, y: usize, z: usize, e: usize| -> u64 {
        let (a, b) = EDGES[e];
        let o = corner_offset(a);
        let axis = (0..3).find(|&k| corner_offset(a)[k] != corner_offset(b)[k]).unwrap();
        (grid.index(x + o[0], y + o[1], z + o[2]) as u64) * 3 + axis as u64
    };
    let slabs: Vec<Vec<[u64; 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|z| {
            let mut out = Vec::new();
            for y in 0..ny - 1 {
                for x in 0..nx - 1 {
                    let mut case = 0usize;
                    for c in 0..8 {
                        let o = corner_offset(c);
                        if grid.get(x + o[0], y + o[1], z + o[2]) > iso {
                            case |= 1 << c;
                        }
                    }
                    for t in &table[case] {
                        out.push(t.map(|e| edge_key(x, y, z, e as usize)));
                    }
                }
            }
            out
        })
        .collect();

    let h = grid.spacing();
    let mut index: HashMap<u64, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut tris = Vec::new();
    for t in slabs.into_iter().flatten() {
        let ids = t.map(|key| {
            *index.entry(key).or_insert_with(|| {
                let axis = (key % 3) as usize;
                let n = (key / 3) as usize;
                let (i, j, k) = (n % nx, (n / nx) % ny, n / (nx * ny));
                let mut o = [i, j, k];
                let v0 = grid.get(i, j, k);
                o[axis] += 1;
                let v1 = grid.get(o[0], o[1], o[2]);
                let t = if v1 != v0 { ((iso - v0) / (v1 - v0)).clamp(0.0, 1.0) } else { 0.5 };
                let mut p = grid.point(i, j, k);
                p[axis] += t * h[axis];
                vertices.push(p);
                (vertices.len() - 1) as u32
            })
        });
        if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
            tris.push(ids);
        }
    }
    Mesh::from_triangles(vertices, &tris)
}

/// Number of triangles incident to each undirected edge that is not shared by
/// exactly two triangles.
pub fn open_edges(mesh: &Mesh) -> usize {
    let mut count: HashMap<(u32, u32), u32> = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k].v, t[(k + 1) % 3].v);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    count.values().filter(|&&c| c != 2).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TexturedMesh {
    pub mesh: Mesh,
    pub texture: TextureImage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BakeSettings {
    pub atlas_size: u32,
    /// Relative depth slack for the visibility test.
    pub depth_tolerance: f64,
    /// Minimum rendered alpha for a pixel to count as an observation.
    pub min_alpha: f64,
}

impl Default for BakeSettings {
    fn default() -> Self {
        Self { atlas_size: 1024, depth_tolerance: 0.01, min_alpha: 0.5 }
    }
}

/// Grid layout of per-triangle charts: `(cells per row, cell size in texels)`.
fn chart_layout(n_tris: usize, atlas: u32) -> (usize, f64) {
    let per_row = (n_tris as f64).sqrt().ceil().max(1.0) as usize;
    (per_row, atlas as f64 / per_row as f64)
}

/// Texel-space corners of triangle `t`'s chart, inset by half a texel.
fn chart_corners(t: usize, per_row: usize, cell: f64) -> [[f64; 2]; 3] {
    let (cx, cy) = ((t % per_row) as f64 * cell, (t / per_row) as f64 * cell);
    let pad = 0.5_f64.min(cell * 0.25);
    let size = cell - 2.0 * pad;
    [[cx + pad, cy + pad], [cx + pad + size, cy + pad], [cx + pad, cy + pad + size]]
}

fn barycentric(p: [f64; 2], q: &[[f64; 2]; 3]) -> [f64; 3] {
    let d = (q[1][0] - q[0][0]) * (q[2][1] - q[0][1]) - (q[2][0] - q[0][0]) * (q[1][1] - q[0][1]);
    let b1 = ((p[0] - q[0][0]) * (q[2][1] - q[0][1]) - (q[2][0] - q[0][0]) * (p[1] - q[0][1])) / d;
    let b2 = ((q[1][0] - q[0][0]) * (p[1] - q[0][1]) - (p[0] - q[0][0]) * (q[1][1] - q[0][1])) / d;
    [1.0 - b1 - b2, b1, b2]
}

struct ViewRender {
    intr: CameraIntrinsics,
    pose: CameraPose,
    color: ImageRGBA,
    depth: Vec<f64>,
}

/// One square view per distinct direction of the 48-view orbit (42 views).
pub fn orbit_bake_views(
    fov_y_deg: f64,
    radius: f64,
    resolution: u32,
) -> Result<Vec<(CameraIntrinsics, CameraPose)>, ExtractError> {
    let intr = CameraIntrinsics::new(fov_y_deg, resolution, resolution)?;
    intr.validate()?;
    let mut poses: Vec<CameraPose> = Vec::new();
    for v in generate_paper_views(radius)? {
        if !poses.iter().any(|p| angle_between(&p.position, &v.pose.position) < 1e-9) {
            poses.push(v.pose);
        }
    }
    Ok(poses.into_iter().map(|p| (intr, p)).collect())
}

/// Samples the density over the cloud's bounds at `grid`³, extracts the
/// `iso` surface and bakes its texture from `views`.
pub fn extract_textured_mesh(
    cloud: &GaussianCloud,
    grid: usize,
    iso: f64,
    views: &[(CameraIntrinsics, CameraPose)],
    settings: &BakeSettings,
) -> Result<TexturedMesh, ExtractError> {
    let (lo, hi) = default_bounds(cloud).ok_or(ExtractError::EmptyCloud)?;
    let density = sample_grid(cloud, [grid; 3], lo, hi)?;
    let mesh = marching_cubes(&density, iso);
    if mesh.triangles.is_empty() {
        return Err(ExtractError::NoSurface(iso));
    }
    bake_texture(cloud, &mesh, views, settings)
}

/// Assigns per-triangle UV charts and fills the atlas from splat renders.
pub fn bake_texture(
    cloud: &GaussianCloud,
    mesh: &Mesh,
    views: &[(CameraIntrinsics, CameraPose)],
    settings: &BakeSettings,
) -> Result<TexturedMesh, ExtractError> {
    if views.is_empty() {
        return Err(ExtractError::NoViews);
    }
    if mesh.triangles.is_empty() {
        return Err(ExtractError::EmptyMesh);
    }
    if settings.atlas_size < 2 {
        return Err(ExtractError::AtlasSize(settings.atlas_size));
    }
    let renders: Vec<ViewRender> = views
        .par_iter()
        .map(|(intr, pose)| {
            let out = render(cloud, intr, pose, [0.0; 3]);
            ViewRender { intr: *intr, pose: *pose, depth: out.depth.clone(), color: out.color }
        })
        .collect();

    let size = settings.atlas_size as usize;
    let n_tris = mesh.triangles.len();
    let (per_row, cell) = chart_layout(n_tris, settings.atlas_size);
    // owning triangle per texel, from the chart grid
    let texel_rows: Vec<Vec<Option<[f64; 3]>>> = (0..size)
        .into_par_iter()
        .map(|y| {
            (0..size)
                .map(|x| {
                    let (col, row) = ((x as f64 / cell) as usize, (y as f64 / cell) as usize);
                    let t = row * per_row + col;
                    if col >= per_row || t >= n_tris {
                        return None;
                    }
                    let q = chart_corners(t, per_row, cell);
                    let b = barycentric([x as f64 + 0.5, y as f64 + 0.5], &q);
                    if b.iter().any(|&w| w < -1e-9) {
                        return None;
                    }
                    let p = mesh.triangle_positions(t);
                    let n = mesh.face_cross(t);
                    let n = if n.norm() > 0.0 { n.normalize() } else { n };
                    let point = p[0] * b[0] + p[1] * b[1] + p[2] * b[2];
                    let mut rgb = [0.0; 3];
                    let mut wsum = 0.0;
                    for r in &renders {
                        let to_cam = r.pose.position - point;
                        let w = n.dot(&to_cam.normalize()).max(0.0).powi(2);
                        if w <= 0.0 {
                            continue;
                        }
                        let Ok((u, v, d)) = project_point(&r.intr, &r.pose, &point) else { continue };
                        if !(u >= 0.0 && v >= 0.0 && u < r.intr.width as f64 && v < r.intr.height as f64) {
                            continue;
                        }
                        let (px, py) = (u as u32, v as u32);
                        let c = r.color.get(px, py);
                        let depth = r.depth[(py * r.intr.width + px) as usize];
                        if c[3] < settings.min_alpha || d > depth * (1.0 + settings.depth_tolerance) {
                            continue;
                        }
                        for k in 0..3 {
                            rgb[k] += w * (c[k] / c[3]).clamp(0.0, 1.0);
                        }
                        wsum += w;
                    }
                    Some(if wsum > 0.0 { [rgb[0] / wsum, rgb[1] / wsum, rgb[2] / wsum] } else { [f64::NAN; 3] })
                })
                .collect()
        })
        .collect();

    let mut image = ImageRGBA::filled(settings.atlas_size, settings.atlas_size, [0.0, 0.0, 0.0, 1.0]);
    let mut valid = vec![false; size * size];
    for (y, row) in texel_rows.iter().enumerate() {
        for (x, texel) in row.iter().enumerate() {
            if let Some(c) = texel.filter(|c| !c[0].is_nan()) {
                image.pixels[y * size + x] = [c[0], c[1], c[2], 1.0];
                valid[y * size + x] = true;
            }
        }
    }
    inpaint_nearest(&mut image, &valid);

    let mut out = mesh.clone();
    out.uvs.clear();
    out.normals.clear();
    for (t, tri) in out.triangles.iter_mut().enumerate() {
        for (k, q) in chart_corners(t, per_row, cell).iter().enumerate() {
            out.uvs.push([q[0] / size as f64, 1.0 - q[1] / size as f64]);
            tri[k] = Corner { v: tri[k].v, vt: Some((3 * t + k) as u32), vn: None };
        }
    }
    out.material_ids = vec![Some(0); n_tris];
    Ok(TexturedMesh { mesh: out, texture: TextureImage { image } })
}

/// Breadth-first fill of invalid texels from the nearest valid one (4-connected,
/// ties resolved by scan order). With no valid texel everything becomes gray.
fn inpaint_nearest(image: &mut ImageRGBA, valid: &[bool]) {
    let (w, h) = (image.width as usize, image.height as usize);
    let mut done = valid.to_vec();
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| valid[i]).collect();
    if queue.is_empty() {
        let [r, g, b] = FALLBACK_GRAY;
        image.pixels.iter_mut().for_each(|p| *p = [r, g, b, 1.0]);
        return;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut push = |j: usize| {
            if !done[j] {
                done[j] = true;
                image.pixels[j] = image.pixels[i];
                queue.push_back(j);
            }
        };
        if x > 0 {
            push(i - 1);
        }
        if x + 1 < w {
            push(i + 1);
        }
        if y > 0 {
            push(i - w);
        }
        if y + 1 < h {
            push(i + w);
        }
    }
}

/// Writes `<stem>.obj`, `<stem>.mtl` and `<stem>.png` into `dir`.
pub fn write_textured_mesh(tm: &TexturedMesh, dir: &Path, stem: &str) -> Result<(), ExtractError> {
    std::fs::create_dir_all(dir).map_err(|source| ExtractError::Io { path: dir.into(), source })?;
    let png = format!("{stem}.png");
    let mtl = format!("{stem}.mtl");
    let material = Material {
        name: "baked".into(),
        diffuse_rgb: [1.0; 3],
        diffuse_texture: Some(tm.texture.clone()),
        texture_name: Some(png.clone()),
    };
    tm.texture.image.save_png(&dir.join(&png))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|source| ExtractError::Io { path, source })
    };
    write(&mtl, write_mtl(std::slice::from_ref(&material)))?;
    write(&format!("{stem}.obj"), write_obj(&tm.mesh, std::slice::from_ref(&material), Some(&mtl)))
}

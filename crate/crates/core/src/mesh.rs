//! Wavefront OBJ/MTL loading and writing, normalization and vertex normals.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::imageops::ImageRGBA;

/// Diffuse color used when a material cannot be resolved.
pub const FALLBACK_GRAY: [f64; 3] = [0.7, 0.7, 0.7];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: malformed '{directive}' directive: {reason}")]
    Malformed { line: usize, directive: String, reason: String },
    #[error("line {line}: {kind} index {index} out of range ({count} declared)")]
    IndexOutOfRange { line: usize, kind: &'static str, index: i64, count: usize },
    #[error("mesh has no vertices")]
    Empty,
    #[error("mesh has zero extent")]
    ZeroExtent,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One triangle corner: vertex, optional texture coordinate and normal indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Corner {
    pub v: u32,
    pub vt: Option<u32>,
    pub vn: Option<u32>,
}

impl Corner {
    pub fn vertex(v: u32) -> Self {
        Self { v, vt: None, vn: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<[Corner; 3]>,
    /// Per-triangle material index into the accompanying material list.
    pub material_ids: Vec<Option<usize>>,
}

impl Mesh {
    pub fn from_triangles(vertices: Vec<Vec3>, tris: &[[u32; 3]]) -> Self {
        let triangles: Vec<_> =
            tris.iter().map(|t| [Corner::vertex(t[0]), Corner::vertex(t[1]), Corner::vertex(t[2])]).collect();
        let material_ids = vec![None; triangles.len()];
        Self { vertices, normals: Vec::new(), uvs: Vec::new(), triangles, material_ids }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_positions(&self, t: usize) -> [Vec3; 3] {
        let tri = &self.triangles[t];
        [
            self.vertices[tri[0].v as usize],
            self.vertices[tri[1].v as usize],
            self.vertices[tri[2].v as usize],
        ]
    }

    /// Unnormalized face normal (twice the area, CCW front).
    pub fn face_cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle_positions(t);
        (b - a).cross(&(c - a))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.face_cross(t).norm()
    }

    pub fn validate(&self) -> Result<(), String> {
        let nv = self.vertices.len() as u32;
        let nt = self.uvs.len() as u32;
        let nn = self.normals.len() as u32;
        for (i, tri) in self.triangles.iter().enumerate() {
            for c in tri {
                if c.v >= nv || c.vt.is_some_and(|t| t >= nt) || c.vn.is_some_and(|n| n >= nn) {
                    return Err(format!("triangle {i} has an out-of-range index"));
                }
            }
        }
        if self.material_ids.len() != self.triangles.len() {
            return Err("material id count differs from triangle count".into());
        }
        Ok(())
    }

    /// Axis-aligned bounds, `None` for a vertex-less mesh.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureImage {
    pub image: ImageRGBA,
}

impl TextureImage {
    /// Bilinear lookup with repeat wrapping; `v` grows upwards as in OBJ.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 4] {
        let w = self.image.width as f64;
        let h = self.image.height as f64;
        let x = u.rem_euclid(1.0) * w - 0.5;
        let y = (1.0 - v).rem_euclid(1.0) * h - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let tx = x - x0;
        let ty = y - y0;
        let wrap = |i: f64, n: u32| (i as i64).rem_euclid(n as i64) as u32;
        let mut out = [0.0; 4];
        for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
            for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
                let p = self.image.get(wrap(x0 + dx, self.image.width), wrap(y0 + dy, self.image.height));
                for c in 0..4 {
                    out[c] += wx * wy * p[c];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    pub diffuse_rgb: [f64; 3],
    pub diffuse_texture: Option<TextureImage>,
    /// File name of the texture as referenced by the MTL, kept for writing.
    pub texture_name: Option<String>,
}

impl Material {
    pub fn gray(name: impl Into<String>) -> Self {
        Self { name: name.into(), diffuse_rgb: FALLBACK_GRAY, diffuse_texture: None, texture_name: None }
    }
}

/// Non-fatal findings collected while parsing.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjWarning {
    UnknownDirective { line: usize, directive: String },
    UnreadableMaterialLib { name: String, reason: String },
    UnknownMaterial { line: usize, name: String },
    UnreadableTexture { name: String, reason: String },
}

#[derive(Debug, Clone)]
pub struct ObjModel {
    pub mesh: Mesh,
    pub materials: Vec<Material>,
    pub warnings: Vec<ObjWarning>,
}

/// Supplies the side files an OBJ refers to (material libraries, textures).
pub trait MaterialResolver {
    fn read(&mut self, name: &str) -> std::io::Result<Vec<u8>>;
}

/// Resolves names relative to a directory.
pub struct DirResolver {
    pub base: PathBuf,
}

impl MaterialResolver for DirResolver {
    fn read(&mut self, name: &str) -> std::io::Result<Vec<u8>> {
        std::fs::read(self.base.join(name))
    }
}

/// Resolves nothing; every reference falls back to gray.
pub struct NoResolver;

impl MaterialResolver for NoResolver {
    fn read(&mut self, name: &str) -> std::io::Result<Vec<u8>> {
        Err(std::io::Error::new(std::io::ErrorKind::NotFound, name.to_string()))
    }
}

impl<F: FnMut(&str) -> std::io::Result<Vec<u8>>> MaterialResolver for F {
    fn read(&mut self, name: &str) -> std::io::Result<Vec<u8>> {
        self(name)
    }
}

pub fn load_obj(path: &Path) -> Result<ObjModel, MeshError> {
    let bytes = std::fs::read(path).map_err(|source| MeshError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_obj(&bytes, &mut DirResolver { base })
}

fn malformed(line: usize, directive: &str, reason: impl Into<String>) -> MeshError {
    MeshError::Malformed { line, directive: directive.to_string(), reason: reason.into() }
}

fn parse_floats<const N: usize>(
    line: usize,
    directive: &str,
    parts: &[&str],
    min: usize,
) -> Result<[f64; N], MeshError> {
    if parts.len() < min {
        return Err(malformed(line, directive, format!("expected at least {min} numbers")));
    }
    let mut out = [0.0; N];
    for (i, p) in parts.iter().take(N).enumerate() {
        let v: f64 = p.parse().map_err(|_| malformed(line, directive, format!("bad number '{p}'")))?;
        if !v.is_finite() {
            return Err(malformed(line, directive, "non-finite number"));
        }
        out[i] = v;
    }
    Ok(out)
}

/// Resolves a 1-based or negative (relative) OBJ index against `count` declared items.
fn resolve_index(raw: &str, count: usize, line: usize, kind: &'static str) -> Result<u32, MeshError> {
    let i: i64 = raw.parse().map_err(|_| malformed(line, "f", format!("bad index '{raw}'")))?;
    let resolved = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return Err(malformed(line, "f", "index 0 is not valid"));
    };
    if resolved < 0 || resolved >= count as i64 {
        return Err(MeshError::IndexOutOfRange { line, kind, index: i, count });
    }
    Ok(resolved as u32)
}

pub fn parse_obj(text: &[u8], resolver: &mut dyn MaterialResolver) -> Result<ObjModel, MeshError> {
    let text = String::from_utf8_lossy(text);
    let mut mesh = Mesh::default();
    let mut materials: Vec<Material> = Vec::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    let mut warnings = Vec::new();
    let mut current: Option<usize> = None;

    let mut pending = String::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((idx, raw)) = lines.next() {
        let line_no = idx + 1;
        // backslash continuation
        let mut raw = raw.to_string();
        while raw.ends_with('\\') {
            raw.pop();
            match lines.next() {
                Some((_, next)) => raw.push_str(next),
                None => break,
            }
        }
        pending.clear();
        pending.push_str(raw.split('#').next().unwrap_or(""));
        let mut parts = pending.split_whitespace();
        let Some(directive) = parts.next() else { continue };
        let args: Vec<&str> = parts.collect();
        match directive {
            "v" => {
                let [x, y, z] = parse_floats::<3>(line_no, directive, &args, 3)?;
                mesh.vertices.push(Vec3::new(x, y, z));
            }
            "vt" => {
                let [u, v] = parse_floats::<2>(line_no, directive, &args, 1)?;
                mesh.uvs.push([u, v]);
            }
            "vn" => {
                let [x, y, z] = parse_floats::<3>(line_no, directive, &args, 3)?;
                let n = Vec3::new(x, y, z);
                let len = n.norm();
                mesh.normals.push(if len > 0.0 { n / len } else { Vec3::z() });
            }
            "f" => {
                if args.len() < 3 {
                    return Err(malformed(line_no, directive, "face needs at least 3 corners"));
                }
                let mut corners = Vec::with_capacity(args.len());
                for a in &args {
                    let mut it = a.split('/');
                    let v = resolve_index(it.next().unwrap_or(""), mesh.vertices.len(), line_no, "vertex")?;
                    let vt = match it.next() {
                        Some(s) if !s.is_empty() => Some(resolve_index(s, mesh.uvs.len(), line_no, "texcoord")?),
                        _ => None,
                    };
                    let vn = match it.next() {
                        Some(s) if !s.is_empty() => Some(resolve_index(s, mesh.normals.len(), line_no, "normal")?),
                        _ => None,
                    };
                    if it.next().is_some() {
                        return Err(malformed(line_no, directive, format!("bad corner '{a}'")));
                    }
                    corners.push(Corner { v, vt, vn });
                }
                // fan around the first corner
                for k in 1..corners.len() - 1 {
                    mesh.triangles.push([corners[0], corners[k], corners[k + 1]]);
                    mesh.material_ids.push(current);
                }
            }
            "usemtl" => {
                let name = args.join(" ");
                current = Some(match by_name.get(&name) {
                    Some(&i) => i,
                    None => {
                        warnings.push(ObjWarning::UnknownMaterial { line: line_no, name: name.clone() });
                        materials.push(Material::gray(name.clone()));
                        by_name.insert(name, materials.len() - 1);
                        materials.len() - 1
                    }
                });
            }
            "mtllib" => {
                for lib in &args {
                    match resolver.read(lib) {
                        Ok(bytes) => {
                            for m in parse_mtl(&bytes, resolver, &mut warnings) {
                                if let Some(&i) = by_name.get(&m.name) {
                                    materials[i] = m;
                                } else {
                                    by_name.insert(m.name.clone(), materials.len());
                                    materials.push(m);
                                }
                            }
                        }
                        Err(e) => {
                            warn!("material library {lib}: {e}");
                            warnings.push(ObjWarning::UnreadableMaterialLib {
                                name: lib.to_string(),
                                reason: e.to_string(),
                            });
                        }
                    }
                }
            }
            "o" | "g" | "s" => {}
            other => warnings.push(ObjWarning::UnknownDirective { line: line_no, directive: other.to_string() }),
        }
    }
    Ok(ObjModel { mesh, materials, warnings })
}

fn parse_mtl(bytes: &[u8], resolver: &mut dyn MaterialResolver, warnings: &mut Vec<ObjWarning>) -> Vec<Material> {
    let text = String::from_utf8_lossy(bytes);
    let mut out: Vec<Material> = Vec::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("");
        let mut parts = line.split_whitespace();
        let Some(directive) = parts.next() else { continue };
        let args: Vec<&str> = parts.collect();
        match directive {
            "newmtl" => out.push(Material {
                name: args.join(" "),
                diffuse_rgb: [0.8, 0.8, 0.8],
                diffuse_texture: None,
                texture_name: None,
            }),
            "Kd" => {
                if let Some(m) = out.last_mut() {
                    let vals: Vec<f64> = args.iter().filter_map(|a| a.parse().ok()).collect();
                    if vals.len() >= 3 && vals.iter().all(|v| v.is_finite()) {
                        m.diffuse_rgb = [vals[0].clamp(0.0, 1.0), vals[1].clamp(0.0, 1.0), vals[2].clamp(0.0, 1.0)];
                    }
                }
            }
            "map_Kd" => {
                // options such as -s are skipped; the file name is the last token
                if let (Some(m), Some(name)) = (out.last_mut(), args.last()) {
                    let ext = Path::new(name).extension().and_then(|e| e.to_str()).map(str::to_owned);
                    let decoded = resolver
                        .read(name)
                        .map_err(|e| e.to_string())
                        .and_then(|b| ImageRGBA::decode_any(&b, ext.as_deref()).map_err(|e| e.to_string()));
                    match decoded {
                        Ok(image) => {
                            m.diffuse_texture = Some(TextureImage { image });
                            m.texture_name = Some(name.to_string());
                        }
                        Err(reason) => {
                            warn!("texture {name}: {reason}");
                            warnings.push(ObjWarning::UnreadableTexture { name: name.to_string(), reason });
                        }
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// Formats with nine significant digits in plain decimal notation.
fn fmt_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return "0".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-30..=30).contains(&mag) {
        return format!("{x:.8e}");
    }
    let decimals = (8 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" { "0".to_string() } else { t.to_string() }
    } else {
        s
    }
}

/// Serializes to OBJ text. `mtllib` names the material library to reference.
pub fn write_obj(mesh: &Mesh, materials: &[Material], mtllib: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(lib) = mtllib {
        let _ = writeln!(out, "mtllib {lib}");
    }
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", fmt_sig9(v.x), fmt_sig9(v.y), fmt_sig9(v.z));
    }
    for t in &mesh.uvs {
        let _ = writeln!(out, "vt {} {}", fmt_sig9(t[0]), fmt_sig9(t[1]));
    }
    for n in &mesh.normals {
        let _ = writeln!(out, "vn {} {} {}", fmt_sig9(n.x), fmt_sig9(n.y), fmt_sig9(n.z));
    }
    let mut current: Option<usize> = None;
    for (tri, mat) in mesh.triangles.iter().zip(&mesh.material_ids) {
        if *mat != current {
            if let Some(m) = mat.and_then(|i| materials.get(i)) {
                let _ = writeln!(out, "usemtl {}", m.name);
            }
            current = *mat;
        }
        out.push('f');
        for c in tri {
            let _ = match (c.vt, c.vn) {
                (None, None) => write!(out, " {}", c.v + 1),
                (Some(t), None) => write!(out, " {}/{}", c.v + 1, t + 1),
                (None, Some(n)) => write!(out, " {}//{}", c.v + 1, n + 1),
                (Some(t), Some(n)) => write!(out, " {}/{}/{}", c.v + 1, t + 1, n + 1),
            };
        }
        out.push('\n');
    }
    out
}

pub fn write_mtl(materials: &[Material]) -> String {
    let mut out = String::new();
    for m in materials {
        let _ = writeln!(out, "newmtl {}", m.name);
        let [r, g, b] = m.diffuse_rgb;
        let _ = writeln!(out, "Kd {} {} {}", fmt_sig9(r), fmt_sig9(g), fmt_sig9(b));
        if let Some(t) = &m.texture_name {
            let _ = writeln!(out, "map_Kd {t}");
        }
        out.push('\n');
    }
    out
}

/// Recenters on the bounding-box center and scales uniformly so the farthest
/// vertex lies on the unit sphere. Returns the mesh with `(center, scale)`;
/// the applied map is `v ↦ (v − center)·scale`.
pub fn normalize_to_unit_sphere(mesh: &Mesh) -> Result<(Mesh, Vec3, f64), MeshError> {
    let (lo, hi) = mesh.bounds().ok_or(MeshError::Empty)?;
    let center = (lo + hi) * 0.5;
    let radius = mesh.vertices.iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
    if !(radius > 0.0) {
        return Err(MeshError::ZeroExtent);
    }
    let scale = 1.0 / radius;
    let mut out = mesh.clone();
    for v in &mut out.vertices {
        *v = (*v - center) * scale;
    }
    Ok((out, center, scale))
}

/// Replaces normals with per-vertex normals built from incident faces,
/// weighted by the corner angle of each incident triangle.
pub fn compute_vertex_normals(mesh: &Mesh) -> Mesh {
    let mut acc = vec![Vec3::zeros(); mesh.vertices.len()];
    for t in 0..mesh.triangles.len() {
        let cross = mesh.face_cross(t);
        let len = cross.norm();
        if !(len > 1e-300) {
            continue;
        }
        let n = cross / len;
        let p = mesh.triangle_positions(t);
        for k in 0..3 {
            let e1 = p[(k + 1) % 3] - p[k];
            let e2 = p[(k + 2) % 3] - p[k];
            let angle = crate::geometry::angle_between(&e1, &e2);
            acc[mesh.triangles[t][k].v as usize] += n * angle;
        }
    }
    let mut out = mesh.clone();
    out.normals = acc
        .into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 { n / len } else { Vec3::z() }
        })
        .collect();
    for tri in &mut out.triangles {
        for c in tri.iter_mut() {
            c.vn = Some(c.v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CUBE: &str = "\
v -1 -1 -1
v 1 -1 -1
v 1 1 -1
v -1 1 -1
v -1 -1 1
v 1 -1 1
v 1 1 1
v -1 1 1
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 3 4 8 7
f 2 3 7 6
f 1 5 8 4
";

    #[test]
    fn cube_fan_triangulates() {
        let m = parse_obj(CUBE.as_bytes(), &mut NoResolver).unwrap();
        assert_eq!(m.mesh.vertices.len(), 8);
        assert_eq!(m.mesh.triangles.len(), 12);
        assert!(m.warnings.is_empty());
        m.mesh.validate().unwrap();
    }

    #[test]
    fn out_of_range_index() {
        let err = parse_obj(b"v 0 0 0\nv 1 0 0\nf 1 2 3\n", &mut NoResolver).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { line: 3, index: 3, .. }), "{err}");
    }

    #[test]
    fn relative_indices() {
        let m = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", &mut NoResolver).unwrap();
        let t = m.mesh.triangles[0];
        assert_eq!([t[0].v, t[1].v, t[2].v], [0, 1, 2]);
    }

    #[test]
    fn malformed_reports_line() {
        let err = parse_obj(b"v 0 0 0\nv 1 zero 0\n", &mut NoResolver).unwrap_err();
        match err {
            MeshError::Malformed { line, directive, .. } => {
                assert_eq!(line, 2);
                assert_eq!(directive, "v");
            }
            other => panic!("{other}"),
        }
        assert!(parse_obj(b"v 0 0 0\nf 1 1\n", &mut NoResolver).is_err());
        assert!(parse_obj(b"v 0 0 0\nf 0 1 1\n", &mut NoResolver).is_err());
    }

    #[test]
    fn unknown_directives_and_missing_materials_warn() {
        let src = "mtllib missing.mtl\nv 0 0 0\nv 1 0 0\nv 0 1 0\nl 1 2\nusemtl hull\nf 1 2 3\n";
        let m = parse_obj(src.as_bytes(), &mut NoResolver).unwrap();
        assert_eq!(m.warnings.len(), 3);
        assert_eq!(m.materials.len(), 1);
        assert_eq!(m.materials[0].diffuse_rgb, FALLBACK_GRAY);
        assert_eq!(m.mesh.material_ids, vec![Some(0)]);
    }

    #[test]
    fn mtl_resolution_with_closure() {
        let mut resolver = |name: &str| -> std::io::Result<Vec<u8>> {
            assert_eq!(name, "a.mtl");
            Ok(b"newmtl red\nKd 1 0 0\nnewmtl blue\nKd 0 0 2\n".to_vec())
        };
        let src = "mtllib a.mtl\nv 0 0 0\nv 1 0 0\nv 0 1 0\nusemtl blue\nf 1 2 3\nusemtl red\nf 1 3 2\n";
        let m = parse_obj(src.as_bytes(), &mut resolver).unwrap();
        assert!(m.warnings.is_empty());
        assert_eq!(m.materials[1].diffuse_rgb, [0.0, 0.0, 1.0]);
        assert_eq!(m.mesh.material_ids, vec![Some(1), Some(0)]);
    }

    #[test]
    fn corner_triples_are_kept() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1\nf 1//1 2//1 3//1\nf 1/3 2/2 3/1\n";
        let m = parse_obj(src.as_bytes(), &mut NoResolver).unwrap();
        assert_eq!(m.mesh.triangles[0][1], Corner { v: 1, vt: Some(1), vn: Some(0) });
        assert_eq!(m.mesh.triangles[1][2], Corner { v: 2, vt: None, vn: Some(0) });
        assert_eq!(m.mesh.triangles[2][0], Corner { v: 0, vt: Some(2), vn: None });
    }

    #[test]
    fn normalize_examples() {
        let cube = parse_obj(CUBE.as_bytes(), &mut NoResolver).unwrap().mesh;
        let (n, center, scale) = normalize_to_unit_sphere(&cube).unwrap();
        assert!(center.norm() < 1e-12);
        assert!((scale - 1.0 / 3f64.sqrt()).abs() < 1e-9);
        let max = n.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-6);

        let (again, c2, s2) = normalize_to_unit_sphere(&n).unwrap();
        assert!(c2.norm() < 1e-6 && (s2 - 1.0).abs() < 1e-6);
        for (a, b) in again.vertices.iter().zip(&n.vertices) {
            assert!((a - b).norm() < 1e-6);
        }

        let mut shifted = cube.clone();
        for v in &mut shifted.vertices {
            v.x += 10.0;
        }
        let (_, center, _) = normalize_to_unit_sphere(&shifted).unwrap();
        assert!((center - Vec3::new(10.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn normalize_errors() {
        assert!(matches!(normalize_to_unit_sphere(&Mesh::default()), Err(MeshError::Empty)));
        let flat = Mesh::from_triangles(vec![Vec3::new(1.0, 2.0, 3.0); 3], &[[0, 1, 2]]);
        assert!(matches!(normalize_to_unit_sphere(&flat), Err(MeshError::ZeroExtent)));
    }

    #[test]
    fn vertex_normals() {
        let tri = Mesh::from_triangles(
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            &[[0, 1, 2]],
        );
        let n = compute_vertex_normals(&tri);
        assert!(n.normals.iter().all(|v| (v - Vec3::z()).norm() < 1e-12));

        let cube = parse_obj(CUBE.as_bytes(), &mut NoResolver).unwrap().mesh;
        let n = compute_vertex_normals(&cube);
        for (v, nn) in n.vertices.iter().zip(&n.normals) {
            let expected = v / 3f64.sqrt();
            assert!((nn - expected).norm() < 1e-6, "{nn:?} vs {expected:?}");
            assert!((nn.norm() - 1.0).abs() < 1e-9);
        }

        let mut with = cube.clone();
        with.normals = vec![Vec3::x()];
        for t in &mut with.triangles {
            for c in t.iter_mut() {
                c.vn = Some(0);
            }
        }
        let re = compute_vertex_normals(&with);
        assert_eq!(re.normals.len(), 8);
        assert_eq!(re.triangles[0][0].vn, Some(re.triangles[0][0].v));
    }

    #[test]
    fn write_then_parse_roundtrip() {
        let src = "v 0.1 0.2 0.3\nv 1 0 0\nv 0 1 0\nv 1 1 1e-7\nvt 0.5 0.25\nvn 0 0 1\nf 1/1/1 2/1/1 3/1/1 4/1/1\n";
        let m = parse_obj(src.as_bytes(), &mut NoResolver).unwrap();
        let text = write_obj(&m.mesh, &m.materials, None);
        let back = parse_obj(text.as_bytes(), &mut NoResolver).unwrap();
        assert_eq!(back.mesh.triangles, m.mesh.triangles);
        assert_eq!(back.mesh.vertices.len(), m.mesh.vertices.len());
        assert!((back.mesh.vertices[3].z - 1e-7).abs() < 1e-15);
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.5), "0.5");
        assert_eq!(fmt_sig9(-1.0), "-1");
        assert_eq!(fmt_sig9(123.456789012), "123.456789");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
    }
}

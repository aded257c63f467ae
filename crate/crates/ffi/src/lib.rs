//! C ABI over the orbitalsplat toolkit.
//!
//! Every fallible call returns an [`OspStatus`]; on failure the message is
//! available from [`osp_last_error`] on the same thread. Objects are opaque
//! handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use orbitalsplat::config::{MeshSection, PipelineConfig};
use orbitalsplat::dataset::{load_views, render_dataset, DatasetManifest};
use orbitalsplat::gaussians::{render, GaussianCloud, GaussianError};
use orbitalsplat::geometry::{generate_paper_views, look_at, CameraIntrinsics, Vec3, DEFAULT_FOV_Y_DEG, DEFAULT_RADIUS};
use orbitalsplat::guidance::{view_name, GroundTruthGuidance};
use orbitalsplat::imageops::{resize_bilinear, ImageRGBA};
use orbitalsplat::mesh::{load_obj, Mesh, MeshError};
use orbitalsplat::meshextract::{extract_textured_mesh, orbit_bake_views, write_textured_mesh, BakeSettings, ExtractError};
use orbitalsplat::metrics::{psnr, ssim};
use orbitalsplat::raster::RenderSettings;
use orbitalsplat::reconstruct::{optimize, ReferencePose};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OspStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Runtime = 5,
    Panic = 6,
}

pub struct OspMesh(Mesh);
pub struct OspImage(ImageRGBA);
pub struct OspCloud(GaussianCloud);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(OspStatus, String);

impl Fail {
    fn invalid(msg: impl Into<String>) -> Self {
        Fail(OspStatus::InvalidArgument, msg.into())
    }
    fn runtime(e: impl ToString) -> Self {
        Fail(OspStatus::Runtime, e.to_string())
    }
    fn io(e: impl ToString) -> Self {
        Fail(OspStatus::Io, e.to_string())
    }
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OspStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OspStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            OspStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail(OspStatus::NullArgument, format!("{what} is null")));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail::invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p).to_str().map(Some).map_err(|_| Fail::invalid(format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(OspStatus::NullArgument, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(OspStatus::NullArgument, format!("{what} is null")))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn osp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn osp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the 48 orbit camera positions (`48×3`) and world-from-camera
/// quaternions (`48×4`, w x y z) in file order xy, yz, xz.
///
/// # Safety
/// `positions` must hold 144 doubles and `quaternions` 192.
#[no_mangle]
pub unsafe extern "C" fn osp_orbit_poses(radius: f64, positions: *mut f64, quaternions: *mut f64) -> OspStatus {
    guard(|| {
        if positions.is_null() || quaternions.is_null() {
            return Err(Fail(OspStatus::NullArgument, "output buffer is null".into()));
        }
        let views = generate_paper_views(radius).map_err(|e| Fail::invalid(e.to_string()))?;
        let pos = std::slice::from_raw_parts_mut(positions, 3 * views.len());
        let quat = std::slice::from_raw_parts_mut(quaternions, 4 * views.len());
        for (i, v) in views.iter().enumerate() {
            pos[3 * i..3 * i + 3].copy_from_slice(v.pose.position.as_slice());
            quat[4 * i..4 * i + 4].copy_from_slice(&v.pose.quaternion_wxyz());
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn osp_mesh_load(path: *const c_char, out: *mut *mut OspMesh) -> OspStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        let model = load_obj(&path).map_err(|e| match e {
            MeshError::Io { .. } => Fail::io(e),
            _ => Fail(OspStatus::Parse, e.to_string()),
        })?;
        *out = Box::into_raw(Box::new(OspMesh(model.mesh)));
        Ok(())
    })
}

/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn osp_mesh_vertex_count(mesh: *const OspMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.vertices.len())
}

/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn osp_mesh_triangle_count(mesh: *const OspMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.triangles.len())
}

/// # Safety
/// `mesh` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn osp_mesh_free(mesh: *mut OspMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Renders the 48 orbit views of an OBJ model into `out_dir` with the
/// default Lambertian shading.
///
/// # Safety
/// Both strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn osp_render_dataset(
    model: *const c_char,
    out_dir: *const c_char,
    size: u32,
    fov_y_deg: f64,
    radius: f64,
) -> OspStatus {
    guard(|| {
        let model = path_arg(model, "model")?;
        let out_dir = path_arg(out_dir, "out_dir")?;
        let intr = CameraIntrinsics::new(fov_y_deg, size, size).map_err(|e| Fail::invalid(e.to_string()))?;
        render_dataset(&model, &out_dir, radius, &intr, &RenderSettings::default()).map_err(Fail::runtime)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn osp_image_load(path: *const c_char, out: *mut *mut OspImage) -> OspStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        let img = ImageRGBA::load_png(&path).map_err(Fail::io)?;
        *out = Box::into_raw(Box::new(OspImage(img)));
        Ok(())
    })
}

/// Builds an image from `width·height·4` bytes of row-major RGBA.
///
/// # Safety
/// `bytes` must hold `width·height·4` bytes and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn osp_image_from_rgba8(
    width: u32,
    height: u32,
    bytes: *const u8,
    out: *mut *mut OspImage,
) -> OspStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(Fail(OspStatus::NullArgument, "bytes is null".into()));
        }
        let out = out_ptr(out, "out")?;
        let n = (width as usize) * (height as usize) * 4;
        let img = ImageRGBA::from_rgba8(width, height, std::slice::from_raw_parts(bytes, n))
            .map_err(|e| Fail::invalid(e.to_string()))?;
        *out = Box::into_raw(Box::new(OspImage(img)));
        Ok(())
    })
}

/// Copies the image as 8-bit RGBA into `bytes`.
///
/// # Safety
/// `bytes` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn osp_image_to_rgba8(image: *const OspImage, bytes: *mut u8, len: usize) -> OspStatus {
    guard(|| {
        let img = handle(image, "image")?;
        if bytes.is_null() {
            return Err(Fail(OspStatus::NullArgument, "bytes is null".into()));
        }
        let data = img.0.to_rgba8();
        if len < data.len() {
            return Err(Fail::invalid(format!("buffer holds {len} bytes, image needs {}", data.len())));
        }
        std::ptr::copy_nonoverlapping(data.as_ptr(), bytes, data.len());
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn osp_image_width(image: *const OspImage) -> u32 {
    image.as_ref().map_or(0, |i| i.0.width)
}

/// # Safety
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn osp_image_height(image: *const OspImage) -> u32 {
    image.as_ref().map_or(0, |i| i.0.height)
}

/// # Safety
/// `image` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn osp_image_save(image: *const OspImage, path: *const c_char) -> OspStatus {
    guard(|| {
        let img = handle(image, "image")?;
        let path = path_arg(path, "path")?;
        img.0.save_png(&path).map_err(Fail::io)
    })
}

/// # Safety
/// `image` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn osp_image_free(image: *mut OspImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn osp_psnr(a: *const OspImage, b: *const OspImage, max_value: f64, out: *mut f64) -> OspStatus {
    guard(|| {
        let v = psnr(&handle(a, "a")?.0, &handle(b, "b")?.0, max_value).map_err(|e| Fail::invalid(e.to_string()))?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn osp_ssim(a: *const OspImage, b: *const OspImage, out: *mut f64) -> OspStatus {
    guard(|| {
        let v = ssim(&handle(a, "a")?.0, &handle(b, "b")?.0).map_err(|e| Fail::invalid(e.to_string()))?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

/// Loads a cloud in either the binary or the text format.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn osp_cloud_load(path: *const c_char, out: *mut *mut OspCloud) -> OspStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        let cloud = GaussianCloud::load(&path).map_err(|e| match e {
            GaussianError::Io { .. } => Fail::io(e),
            _ => Fail(OspStatus::Parse, e.to_string()),
        })?;
        *out = Box::into_raw(Box::new(OspCloud(cloud)));
        Ok(())
    })
}

/// Writes the text format for a `.txt` path, the binary format otherwise.
///
/// # Safety
/// `cloud` must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn osp_cloud_save(cloud: *const OspCloud, path: *const c_char) -> OspStatus {
    guard(|| {
        let cloud = handle(cloud, "cloud")?;
        let path = path_arg(path, "path")?;
        cloud.0.save(&path).map_err(Fail::io)
    })
}

/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn osp_cloud_len(cloud: *const OspCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn osp_cloud_free(cloud: *mut OspCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Splats the cloud from `eye` looking at the origin; uncovered pixels get
/// `background` (RGB) and the returned alpha is the accumulated opacity.
///
/// # Safety
/// `eye`, `up` and `background` must each point to 3 doubles; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn osp_cloud_render(
    cloud: *const OspCloud,
    eye: *const f64,
    up: *const f64,
    fov_y_deg: f64,
    width: u32,
    height: u32,
    background: *const f64,
    out: *mut *mut OspImage,
) -> OspStatus {
    guard(|| {
        let cloud = handle(cloud, "cloud")?;
        let vec3 = |p: *const f64, what: &str| -> Result<Vec3, Fail> {
            if p.is_null() {
                return Err(Fail(OspStatus::NullArgument, format!("{what} is null")));
            }
            Ok(Vec3::from_column_slice(std::slice::from_raw_parts(p, 3)))
        };
        let pose = look_at(vec3(eye, "eye")?, Vec3::zeros(), vec3(up, "up")?).map_err(|e| Fail::invalid(e.to_string()))?;
        let bg = vec3(background, "background")?;
        let intr = CameraIntrinsics::new(fov_y_deg, width, height).map_err(|e| Fail::invalid(e.to_string()))?;
        intr.validate().map_err(|e| Fail::invalid(e.to_string()))?;
        let out = out_ptr(out, "out")?;
        let img = render(&cloud.0, &intr, &pose, [bg.x, bg.y, bg.z]).color;
        *out = Box::into_raw(Box::new(OspImage(img)));
        Ok(())
    })
}

/// Reconstructs a cloud from `reference_png` using the stored views of a
/// rendered dataset as guidance.
///
/// `reference_view` (e.g. `"xy_02"`) sets the reference pose from the
/// dataset; `config_toml` is an optional pipeline configuration file.
/// Either may be null.
///
/// # Safety
/// Non-null strings must be NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn osp_reconstruct_ground_truth(
    reference_png: *const c_char,
    dataset_dir: *const c_char,
    reference_view: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut OspCloud,
) -> OspStatus {
    guard(|| {
        let image = path_arg(reference_png, "reference_png")?;
        let dataset = path_arg(dataset_dir, "dataset_dir")?;
        let view = opt_str(reference_view, "reference_view")?;
        let config = opt_str(config_toml, "config_toml")?;
        let out = out_ptr(out, "out")?;
        let mut cfg = match config {
            Some(p) => PipelineConfig::load(Path::new(p)).map_err(|e| Fail(OspStatus::Parse, e.to_string()))?,
            None => PipelineConfig::default(),
        };
        let (manifest, root) = DatasetManifest::load_dir_or_file(&dataset).map_err(Fail::io)?;
        if let Some(name) = view {
            let v = manifest
                .views
                .iter()
                .find(|v| view_name(v) == name)
                .ok_or_else(|| Fail::invalid(format!("view '{name}' is not in the dataset")))?;
            let pose = v.pose();
            cfg.reconstruct.reference =
                ReferencePose { position: pose.position.into(), up: pose.up().into(), fov_y_deg: v.fov_y_deg };
        }
        cfg.validate().map_err(|e| Fail::invalid(e.to_string()))?;
        let input = ImageRGBA::load_png(&image).map_err(Fail::io)?;
        let t = cfg.preprocess.target;
        let reference = if input.dims() == (t, t) { input } else { resize_bilinear(&input, t, t) };
        let views = load_views(&manifest, &root).map_err(Fail::io)?;
        let pose = cfg.reconstruct.reference.pose().map_err(|e| Fail::invalid(e.to_string()))?;
        let mut gt = GroundTruthGuidance::new(views, pose, &cfg.hold_out).map_err(|e| Fail::invalid(e.to_string()))?;
        let rec = optimize(&reference, &mut gt, &cfg.reconstruct, None).map_err(Fail::runtime)?;
        *out = Box::into_raw(Box::new(OspCloud(rec.cloud)));
        Ok(())
    })
}

/// Extracts the `iso` surface of the cloud's density on a `grid`³ lattice,
/// bakes an `atlas_size`² texture from the 42 distinct orbit views and writes
/// `<stem>.obj`, `<stem>.mtl` and `<stem>.png` into `out_dir`.
///
/// # Safety
/// `cloud` must be live; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn osp_extract_mesh(
    cloud: *const OspCloud,
    grid: u32,
    iso: f64,
    atlas_size: u32,
    out_dir: *const c_char,
    stem: *const c_char,
) -> OspStatus {
    guard(|| {
        let cloud = handle(cloud, "cloud")?;
        let dir = path_arg(out_dir, "out_dir")?;
        let stem = opt_str(stem, "stem")?.ok_or_else(|| Fail(OspStatus::NullArgument, "stem is null".into()))?;
        if !(iso > 0.0) {
            return Err(Fail::invalid(format!("iso must be positive, got {iso}")));
        }
        let settings = BakeSettings { atlas_size, ..BakeSettings::default() };
        let resolution = MeshSection::default().bake_resolution;
        let views = orbit_bake_views(DEFAULT_FOV_Y_DEG, DEFAULT_RADIUS, resolution).map_err(Fail::runtime)?;
        let baked = extract_textured_mesh(&cloud.0, grid as usize, iso, &views, &settings).map_err(|e| match e {
            ExtractError::Resolution(_) | ExtractError::AtlasSize(_) => Fail::invalid(e.to_string()),
            _ => Fail::runtime(e),
        })?;
        write_textured_mesh(&baked, &dir, stem).map_err(Fail::io)
    })
}

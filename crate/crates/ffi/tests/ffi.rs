use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use orbitalsplat_ffi::*;

fn fixture(name: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(osp_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn mesh_handles() {
    let mut mesh = ptr::null_mut();
    unsafe {
        assert_eq!(osp_mesh_load(fixture("cube.obj").as_ptr(), &mut mesh), OspStatus::Ok);
        assert_eq!(last_error(), "");
        assert_eq!(osp_mesh_vertex_count(mesh), 8);
        assert_eq!(osp_mesh_triangle_count(mesh), 12);
        osp_mesh_free(mesh);
        osp_mesh_free(ptr::null_mut());
        assert_eq!(osp_mesh_vertex_count(ptr::null()), 0);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut mesh = ptr::null_mut();
    unsafe {
        assert_eq!(osp_mesh_load(fixture("malformed.obj").as_ptr(), &mut mesh), OspStatus::Parse);
        assert!(last_error().contains("line 4"), "{}", last_error());
        assert!(mesh.is_null());
        assert_eq!(osp_mesh_load(fixture("missing.obj").as_ptr(), &mut mesh), OspStatus::Io);
        assert_eq!(osp_mesh_load(ptr::null(), &mut mesh), OspStatus::NullArgument);
        assert_eq!(osp_mesh_load(fixture("cube.obj").as_ptr(), ptr::null_mut()), OspStatus::NullArgument);
        let mut out = 0.0;
        assert_eq!(osp_psnr(ptr::null(), ptr::null(), 1.0, &mut out), OspStatus::NullArgument);
    }
}

#[test]
fn orbit_poses_fill_buffers() {
    let mut pos = vec![0.0; 144];
    let mut quat = vec![0.0; 192];
    unsafe {
        assert_eq!(osp_orbit_poses(2.0, pos.as_mut_ptr(), quat.as_mut_ptr()), OspStatus::Ok);
        assert_eq!(osp_orbit_poses(-1.0, pos.as_mut_ptr(), quat.as_mut_ptr()), OspStatus::InvalidArgument);
    }
    for i in 0..48 {
        let r = (pos[3 * i].powi(2) + pos[3 * i + 1].powi(2) + pos[3 * i + 2].powi(2)).sqrt();
        assert!((r - 2.0).abs() < 1e-12);
        let q: f64 = quat[4 * i..4 * i + 4].iter().map(|v| v * v).sum();
        assert!((q - 1.0).abs() < 1e-12);
    }
}

#[test]
fn images_and_metrics() {
    let bytes: Vec<u8> = (0..16 * 16).flat_map(|i| [(i % 256) as u8, 40, 200, 255]).collect();
    let shifted: Vec<u8> = bytes.iter().enumerate().map(|(i, b)| if i % 4 == 1 { b + 10 } else { *b }).collect();
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(osp_image_from_rgba8(16, 16, bytes.as_ptr(), &mut a), OspStatus::Ok);
        assert_eq!(osp_image_from_rgba8(16, 16, shifted.as_ptr(), &mut b), OspStatus::Ok);
        assert_eq!((osp_image_width(a), osp_image_height(a)), (16, 16));
        let (mut p, mut s) = (0.0, 0.0);
        assert_eq!(osp_psnr(a, a, 1.0, &mut p), OspStatus::Ok);
        assert_eq!(p, 99.0);
        assert_eq!(osp_ssim(a, a, &mut s), OspStatus::Ok);
        assert!((s - 1.0).abs() < 1e-9);
        assert_eq!(osp_psnr(a, b, 1.0, &mut p), OspStatus::Ok);
        // one channel of three off by 10/255
        let expect = 10.0 * (1.0 / ((10.0f64 / 255.0).powi(2) / 3.0)).log10();
        assert!((p - expect).abs() < 1e-9, "{p} vs {expect}");
        let mut back = vec![0u8; bytes.len()];
        assert_eq!(osp_image_to_rgba8(a, back.as_mut_ptr(), back.len()), OspStatus::Ok);
        assert_eq!(back, bytes);
        assert_eq!(osp_image_to_rgba8(a, back.as_mut_ptr(), 3), OspStatus::InvalidArgument);
        let mut small = ptr::null_mut();
        osp_image_from_rgba8(4, 4, bytes.as_ptr(), &mut small);
        assert_eq!(osp_psnr(a, small, 1.0, &mut p), OspStatus::InvalidArgument);
        osp_image_free(small);
        osp_image_free(a);
        osp_image_free(b);
    }
}

#[test]
fn cloud_render_and_mesh_extraction() {
    let dir = tempfile::tempdir().unwrap();
    let txt = dir.path().join("one.txt");
    let cloud_txt = orbitalsplat::gaussians::GaussianCloud::from_gaussians([orbitalsplat::gaussians::Gaussian3D::isotropic(
        orbitalsplat::geometry::Vec3::zeros(),
        0.2,
        0.9,
        orbitalsplat::geometry::Vec3::new(0.9, 0.1, 0.1),
    )]);
    cloud_txt.save(&txt).unwrap();
    let mut cloud = ptr::null_mut();
    let mut img = ptr::null_mut();
    unsafe {
        assert_eq!(osp_cloud_load(cstr(&txt).as_ptr(), &mut cloud), OspStatus::Ok);
        assert_eq!(osp_cloud_len(cloud), 1);
        let (eye, up, bg) = ([0.0, 0.0, 2.0], [0.0, 1.0, 0.0], [0.0; 3]);
        assert_eq!(
            osp_cloud_render(cloud, eye.as_ptr(), up.as_ptr(), 49.1, 32, 32, bg.as_ptr(), &mut img),
            OspStatus::Ok
        );
        let mut px = vec![0u8; 32 * 32 * 4];
        osp_image_to_rgba8(img, px.as_mut_ptr(), px.len());
        let center = &px[(16 * 32 + 16) * 4..(16 * 32 + 16) * 4 + 4];
        assert!(center[0] > 150 && center[3] > 200, "{center:?}");
        osp_image_free(img);
        let stem = CString::new("blob").unwrap();
        assert_eq!(osp_extract_mesh(cloud, 32, 0.3, 64, cstr(dir.path()).as_ptr(), stem.as_ptr()), OspStatus::Ok);
        assert!(dir.path().join("blob.obj").exists() && dir.path().join("blob.png").exists());
        assert_eq!(osp_extract_mesh(cloud, 32, 5.0, 64, cstr(dir.path()).as_ptr(), stem.as_ptr()), OspStatus::Runtime);
        assert!(last_error().contains("iso"), "{}", last_error());
        let bin = dir.path().join("one.bin");
        assert_eq!(osp_cloud_save(cloud, cstr(&bin).as_ptr()), OspStatus::Ok);
        osp_cloud_free(cloud);
        assert_eq!(osp_cloud_load(cstr(&bin).as_ptr(), &mut cloud), OspStatus::Ok);
        osp_cloud_free(cloud);
    }
}

#[test]
fn dataset_then_ground_truth_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "seed = 3\nsnapshot_interval = 0\n[preprocess]\ntarget = 32\n[reconstruct]\niterations = 5\nn_init = 100\n")
        .unwrap();
    let mut cloud = ptr::null_mut();
    unsafe {
        assert_eq!(osp_render_dataset(fixture("cube.obj").as_ptr(), cstr(&data).as_ptr(), 32, 49.1, 2.0), OspStatus::Ok);
        let reference = cstr(&data.join("xy_02.png"));
        let view = CString::new("xy_02").unwrap();
        let status =
            osp_reconstruct_ground_truth(reference.as_ptr(), cstr(&data).as_ptr(), view.as_ptr(), cstr(&cfg).as_ptr(), &mut cloud);
        assert_eq!(status, OspStatus::Ok, "{}", last_error());
        assert!(osp_cloud_len(cloud) > 0);
        osp_cloud_free(cloud);
        let bad = CString::new("qq_99").unwrap();
        let status =
            osp_reconstruct_ground_truth(reference.as_ptr(), cstr(&data).as_ptr(), bad.as_ptr(), ptr::null(), &mut cloud);
        assert_eq!(status, OspStatus::InvalidArgument);
    }
}

#[test]
fn version_is_the_crate_version() {
    assert_eq!(unsafe { CStr::from_ptr(osp_version()) }.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header() {
    let lib = target_dir().join("liborbitalsplat_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: static library or C compiler not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "orbitalsplat.h"
int main(int argc, char **argv) {
    OspMesh *mesh = NULL;
    if (osp_mesh_load(argv[1], &mesh) != OSP_STATUS_OK) return 2;
    printf("%zu %zu\n", osp_mesh_vertex_count(mesh), osp_mesh_triangle_count(mesh));
    osp_mesh_free(mesh);
    if (osp_mesh_load(NULL, &mesh) != OSP_STATUS_NULL_ARGUMENT) return 3;
    printf("%s\n", osp_last_error());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).arg(fixture("cube.obj").to_str().unwrap()).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("8 12\n") && text.contains("path is null"), "{text}");
}

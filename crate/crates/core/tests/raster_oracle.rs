mod common;

use orbitalsplat::geometry::{look_at, CameraIntrinsics, Vec3, DEFAULT_FOV_Y_DEG};
use orbitalsplat::mesh::{load_obj, Material, Mesh};
use orbitalsplat::raster::{render_mesh, render_mesh_banded, RenderSettings, Shading};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fixture, painter};

fn flat() -> RenderSettings {
    RenderSettings { shading: Shading::Flat, ..Default::default() }
}

#[test]
fn unit_cube_silhouette_matches_projected_square() {
    let mut mesh = load_obj(&fixture("cube.obj")).unwrap().mesh;
    for v in &mut mesh.vertices {
        *v *= 0.5;
    }
    let intr = CameraIntrinsics::new(DEFAULT_FOV_Y_DEG, 256, 256).unwrap();
    let pose = look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y()).unwrap();
    let fb = render_mesh(&mesh, &[], &intr, &pose, &flat());
    let side = 2.0 * intr.focal() * 0.5 / 1.5;
    let expected = side * side;
    let got = fb.coverage() as f64;
    assert!((got - expected).abs() / expected < 0.02, "coverage {got} vs {expected}");
    let alpha = fb.color.pixels.iter().filter(|p| p[3] > 0.0).count();
    assert_eq!(alpha, fb.coverage());
}

#[test]
fn z_buffer_matches_painter_on_random_scenes() {
    let intr = CameraIntrinsics::new(DEFAULT_FOV_Y_DEG, 96, 96).unwrap();
    let pose = look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y()).unwrap();
    let colors = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let materials: Vec<Material> = colors
        .iter()
        .enumerate()
        .map(|(i, &c)| Material { diffuse_rgb: c, ..Material::gray(format!("m{i}")) })
        .collect();
    let mut mismatches = 0usize;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let verts: Vec<Vec3> =
            (0..9).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let mut mesh = Mesh::from_triangles(verts, &[[0, 1, 2], [3, 4, 5], [6, 7, 8]]);
        mesh.material_ids = vec![Some(0), Some(1), Some(2)];
        let fb = render_mesh(&mesh, &materials, &intr, &pose, &flat());
        let want = painter(&intr, &pose, &mesh);
        for (i, w) in want.iter().enumerate() {
            let p = fb.color.pixels[i];
            let got = colors.iter().position(|c| p[0] == c[0] && p[1] == c[1] && p[2] == c[2] && p[3] == 1.0);
            if got != *w {
                mismatches += 1;
                eprintln!("seed {seed} pixel {i}: raster {got:?} painter {w:?}");
            }
        }
        let banded = render_mesh_banded(&mesh, &materials, &intr, &pose, &flat(), 5);
        assert_eq!(banded, fb);
    }
    assert_eq!(mismatches, 0);
}

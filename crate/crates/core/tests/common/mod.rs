#![allow(dead_code)]

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use orbitalsplat::gaussians::{render, render_backward, Gaussian3D, GaussianCloud};
use orbitalsplat::geometry::{look_at, CameraIntrinsics, CameraPose, Vec3};
use orbitalsplat::mesh::Mesh;
use orbitalsplat::imageops::ImageRGBA;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Untruncated density from explicitly inverted covariances.
pub fn naive_density(cloud: &GaussianCloud, x: &Vec3, truncate: bool) -> f64 {
    (0..cloud.len())
        .map(|i| {
            let g = cloud.get(i);
            let q = UnitQuaternion::from_quaternion(Quaternion::new(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]));
            let r = q.to_rotation_matrix().into_inner();
            let sigma = r * Matrix3::from_diagonal(&g.log_scale.map(|l| (2.0 * l).exp())) * r.transpose();
            let d = x - g.position;
            let m2 = (d.transpose() * sigma.try_inverse().unwrap() * d)[0];
            if truncate && m2 > 9.0 {
                0.0
            } else {
                g.opacity() * (-0.5 * m2).exp()
            }
        })
        .sum()
}

pub fn random_cloud(n: usize, seed: u64, extent: f64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::default();
    for _ in 0..n {
        let mut q = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        q[0] += 1.5;
        cloud.positions.push(Vec3::from_fn(|_, _| rng.random_range(-extent..extent)));
        cloud.log_scales.push(Vec3::from_fn(|_, _| rng.random_range(0.05f64..0.25).ln()));
        cloud.rotations.push(q);
        cloud.opacity_logits.push(rng.random_range(-2.0..3.0));
        cloud.colors.push(Vec3::from_fn(|_, _| rng.random_range(0.0..1.0)));
    }
    cloud
}

/// Direct windowed SSIM: 2-D Gaussian weights, per-window sums, no filtering tricks.
pub fn ssim_bruteforce(a: &ImageRGBA, b: &ImageRGBA) -> f64 {
    let k = 11usize;
    let sigma = 1.5f64;
    let mut w2 = vec![0.0; k * k];
    for y in 0..k {
        for x in 0..k {
            let (dx, dy) = (x as f64 - 5.0, y as f64 - 5.0);
            w2[y * k + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = w2.iter().sum();
    w2.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (1e-4, 9e-4);
    let (w, h) = (a.width as usize, a.height as usize);
    let mut acc = 0.0;
    let mut n = 0usize;
    for c in 0..3 {
        for oy in 0..=h - k {
            for ox in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in 0..k {
                    for x in 0..k {
                        let i = (oy + y) * w + ox + x;
                        ma += w2[y * k + x] * a.pixels[i][c];
                        mb += w2[y * k + x] * b.pixels[i][c];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for y in 0..k {
                    for x in 0..k {
                        let i = (oy + y) * w + ox + x;
                        let (da, db) = (a.pixels[i][c] - ma, b.pixels[i][c] - mb);
                        va += w2[y * k + x] * da * da;
                        vb += w2[y * k + x] * db * db;
                        cov += w2[y * k + x] * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
        }
    }
    acc / n as f64
}

pub fn random_image(w: u32, h: u32, seed: u64) -> ImageRGBA {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageRGBA::from_fn(w, h, |_, _| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 1.0])
}

/// Depth along the view axis where the ray through pixel center `(px, py)`
/// meets the triangle, or `None` on a miss.
fn ray_depth(intr: &CameraIntrinsics, tri: &[Vec3; 3], px: u32, py: u32) -> Option<f64> {
    let f = intr.focal();
    let (cx, cy) = intr.principal_point();
    let dir = Vec3::new((px as f64 + 0.5 - cx) / f, -(py as f64 + 0.5 - cy) / f, -1.0);
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let s = -tri[0];
    let u = s.dot(&p) / det;
    let q = s.cross(&e1);
    let v = dir.dot(&q) / det;
    if u < 0.0 || v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) / det;
    (t > 0.0).then_some(t)
}

/// Draws triangles back to front per pixel; returns the winning triangle index.
pub fn painter(intr: &CameraIntrinsics, pose: &CameraPose, mesh: &Mesh) -> Vec<Option<usize>> {
    let cam: Vec<[Vec3; 3]> = (0..mesh.triangles.len())
        .map(|t| mesh.triangle_positions(t).map(|p| pose.world_to_camera(&p)))
        .collect();
    let mut out = Vec::with_capacity((intr.width * intr.height) as usize);
    for py in 0..intr.height {
        for px in 0..intr.width {
            let mut hits: Vec<(f64, usize)> =
                cam.iter().enumerate().filter_map(|(i, tri)| ray_depth(intr, tri, px, py).map(|d| (d, i))).collect();
            hits.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut top = None;
            for (_, i) in hits {
                top = Some(i);
            }
            out.push(top);
        }
    }
    out
}


/// Checks analytic splat gradients against central differences on one
/// seeded 3-Gaussian 32² scene; returns how many gradients were compared.
pub fn fd_gate_seed(seed: u64) -> Result<usize, String> {
    let size = 32;
    let intr = CameraIntrinsics::new(49.1, size, size).unwrap();
    let pose = look_at(Vec3::new(0.3, -0.2, 2.0), Vec3::zeros(), Vec3::y()).unwrap();
    let n_px = (size * size) as usize;
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 3σ boxes cover the whole frame
    let cloud = GaussianCloud::from_gaussians((0..3).map(|_| {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(0.2);
        // deliberately unnormalized
        let rotation = q.map(|v| v / n * rng.random_range(0.8..1.25));
        Gaussian3D {
            position: Vec3::from_fn(|_, _| rng.random_range(-0.1..0.1)),
            log_scale: Vec3::from_fn(|_, _| rng.random_range(0.45f64..0.7).ln()),
            rotation,
            opacity_logit: rng.random_range(-1.4..1.7),
            color: Vec3::from_fn(|_, _| rng.random_range(0.0..1.0)),
        }
    }));
    let wc: Vec<[f64; 3]> = (0..n_px).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let wa: Vec<f64> = (0..n_px).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bg = [rng.random_range(0.0..1.0), 0.5, 1.0];
    let loss = |c: &GaussianCloud| {
        let out = render(c, &intr, &pose, bg);
        out.color
            .pixels
            .iter()
            .enumerate()
            .map(|(p, px)| wc[p][0] * px[0] + wc[p][1] * px[1] + wc[p][2] * px[2] + wa[p] * px[3])
            .sum::<f64>()
    };
    let out = render(&cloud, &intr, &pose, bg);
    if out.cache.visible_count() != 3 {
        return Err(format!("seed {seed}: a Gaussian left the frame"));
    }
    let grads = render_backward(&cloud, &out, &wc, &wa).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for g in 0..cloud.len() {
        let mut params: Vec<(String, f64, Box<dyn Fn(&mut GaussianCloud, f64)>)> = Vec::new();
        for k in 0..3 {
            params.push((format!("pos{k}"), grads.positions[g][k], Box::new(move |c, d| c.positions[g][k] += d)));
            params.push((format!("ls{k}"), grads.log_scales[g][k], Box::new(move |c, d| c.log_scales[g][k] += d)));
            params.push((format!("rgb{k}"), grads.colors[g][k], Box::new(move |c, d| c.colors[g][k] += d)));
        }
        for k in 0..4 {
            params.push((format!("q{k}"), grads.rotations[g][k], Box::new(move |c, d| c.rotations[g][k] += d)));
        }
        params.push(("logit".into(), grads.opacity_logits[g], Box::new(move |c, d| c.opacity_logits[g] += d)));
        for (name, analytic, bump) in params {
            let mut plus = cloud.clone();
            bump(&mut plus, h);
            let mut minus = cloud.clone();
            bump(&mut minus, -h);
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            if analytic.abs().max(numeric.abs()) <= 1e-6 {
                continue;
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            if rel >= 1e-3 {
                return Err(format!("seed {seed} gaussian {g} {name}: analytic {analytic} numeric {numeric} rel {rel}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

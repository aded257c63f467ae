//! PSNR, SSIM and the paired-directory evaluation report.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::guidance::client::GuidanceClient;
use crate::imageops::{composite_over, ImageError, ImageRGBA};

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("image {0}×{1} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window")]
    TooSmall(u32, u32),
    #[error("max_value must be positive, got {0}")]
    BadMaxValue(f64),
    #[error("no image pairs found in {pred} and {gt}")]
    EmptySet { pred: PathBuf, gt: PathBuf },
    #[error("unmatched files: only in predictions {only_pred:?}; only in ground truth {only_gt:?}")]
    Unmatched { only_pred: Vec<String>, only_gt: Vec<String> },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// PSNR in dB over the RGB channels; identical images give [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageRGBA, b: &ImageRGBA, max_value: f64) -> Result<f64, MetricsError> {
    a.same_dims(b)?;
    if !(max_value > 0.0) {
        return Err(MetricsError::BadMaxValue(max_value));
    }
    let sum: f64 = a.pixels.iter().zip(&b.pixels).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>()).sum();
    let mse = sum / (3 * a.pixels.len()).max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP_DB))
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable filtering of a `w×h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid window positions and RGB channels.
pub fn ssim(a: &ImageRGBA, b: &ImageRGBA) -> Result<f64, MetricsError> {
    a.same_dims(b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmall(a.width, a.height));
    }
    let k = gaussian_window();
    let per_channel: Vec<(f64, usize)> = (0..3)
        .into_par_iter()
        .map(|c| {
            let pa: Vec<f64> = a.pixels.iter().map(|p| p[c]).collect();
            let pb: Vec<f64> = b.pixels.iter().map(|p| p[c]).collect();
            let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).collect::<Vec<_>>();
            let mu_a = filter_valid(&pa, w, h, &k);
            let mu_b = filter_valid(&pb, w, h, &k);
            let e_aa = filter_valid(&sq(&pa, &pa), w, h, &k);
            let e_bb = filter_valid(&sq(&pb, &pb), w, h, &k);
            let e_ab = filter_valid(&sq(&pa, &pb), w, h, &k);
            let mut total = 0.0;
            for i in 0..mu_a.len() {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = e_aa[i] - ma * ma;
                let vb = e_bb[i] - mb * mb;
                let cov = e_ab[i] - ma * mb;
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            }
            (total, mu_a.len())
        })
        .collect();
    let (sum, n) = per_channel.iter().fold((0.0, 0), |(s, n), (t, m)| (s + t, n + m));
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRow {
    pub pair_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub clip: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Aggregate {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, count };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        Self { mean, std: var.sqrt(), count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub unix_time: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub rows: Vec<PairRow>,
    pub errors: Vec<(String, String)>,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
    pub lpips: Option<Aggregate>,
    pub clip: Option<Aggregate>,
    pub provenance: Provenance,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<PairRow>, errors: Vec<(String, String)>, provenance: Provenance) -> Self {
        let col = |f: fn(&PairRow) -> Option<f64>| -> Option<Aggregate> {
            let vals: Vec<f64> = rows.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| Aggregate::of(&vals))
        };
        Self {
            psnr: Aggregate::of(&rows.iter().map(|r| r.psnr_db).collect::<Vec<_>>()),
            ssim: Aggregate::of(&rows.iter().map(|r| r.ssim).collect::<Vec<_>>()),
            lpips: col(|r| r.lpips),
            clip: col(|r| r.clip),
            rows,
            errors,
            provenance,
        }
    }

    pub fn to_csv(&self) -> String {
        let remote = self.lpips.is_some();
        let mut out = String::from(if remote { "pair_id,psnr_db,ssim,lpips,clip\n" } else { "pair_id,psnr_db,ssim\n" });
        for r in &self.rows {
            let _ = write!(out, "{},{:.6},{:.6}", r.pair_id, r.psnr_db, r.ssim);
            if remote {
                let f = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
                let _ = write!(out, ",{},{}", f(r.lpips), f(r.clip));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, name: &str, a: &Aggregate| {
            let _ = writeln!(out, "{name:<6} mean {:>10.4}  std {:>9.4}  n {}", a.mean, a.std, a.count);
        };
        line(&mut out, "PSNR", &self.psnr);
        line(&mut out, "SSIM", &self.ssim);
        if let Some(a) = &self.lpips {
            line(&mut out, "LPIPS", a);
        }
        if let Some(a) = &self.clip {
            line(&mut out, "CLIP", a);
        }
        let _ = writeln!(out, "pairs {}  errors {}", self.rows.len(), self.errors.len());
        for (id, e) in &self.errors {
            let _ = writeln!(out, "error {id}: {e}");
        }
        let _ = writeln!(out, "config_sha256 {}", self.provenance.config_sha256);
        let _ = writeln!(out, "unix_time {}", self.provenance.unix_time);
        out
    }

    /// Writes `report.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), MetricsError> {
        let io = |path: PathBuf| move |source| MetricsError::Io { path, source };
        fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.to_csv()).map_err(io(csv.clone()))?;
        let summary = dir.join("summary.txt");
        fs::write(&summary, self.summary()).map_err(io(summary.clone()))
    }
}

fn image_names(dir: &Path) -> Result<BTreeSet<String>, MetricsError> {
    let entries = fs::read_dir(dir).map_err(|source| MetricsError::Io { path: dir.to_path_buf(), source })?;
    Ok(entries
        .filter_map(Result::ok)
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect())
}

fn load_for_metrics(path: &Path) -> Result<ImageRGBA, ImageError> {
    Ok(composite_over(&ImageRGBA::load_png(path)?, [1.0; 3]))
}

/// Scores every same-named PNG pair, compositing both over white first.
pub fn evaluate_pairs(
    pred_dir: &Path,
    gt_dir: &Path,
    remote: Option<&GuidanceClient>,
    config_sha256: &str,
) -> Result<MetricReport, MetricsError> {
    let pred = image_names(pred_dir)?;
    let gt = image_names(gt_dir)?;
    if pred.is_empty() && gt.is_empty() {
        return Err(MetricsError::EmptySet { pred: pred_dir.into(), gt: gt_dir.into() });
    }
    if pred != gt {
        return Err(MetricsError::Unmatched {
            only_pred: pred.difference(&gt).cloned().collect(),
            only_gt: gt.difference(&pred).cloned().collect(),
        });
    }
    let names: Vec<String> = pred.into_iter().collect();
    let scored: Vec<Result<(f64, f64, ImageRGBA, ImageRGBA), String>> = names
        .par_iter()
        .map(|name| {
            let a = load_for_metrics(&pred_dir.join(name)).map_err(|e| e.to_string())?;
            let b = load_for_metrics(&gt_dir.join(name)).map_err(|e| e.to_string())?;
            let p = psnr(&a, &b, 1.0).map_err(|e| e.to_string())?;
            let s = ssim(&a, &b).map_err(|e| e.to_string())?;
            Ok((p, s, a, b))
        })
        .collect();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (name, res) in names.into_iter().zip(scored) {
        match res {
            Ok((psnr_db, ssim, a, b)) => {
                let (mut lpips, mut clip) = (None, None);
                if let Some(client) = remote {
                    match client.metrics(&a, &b) {
                        Ok(m) => {
                            lpips = Some(m.lpips);
                            clip = Some(m.clip_similarity);
                        }
                        Err(e) => {
                            errors.push((name, e.to_string()));
                            continue;
                        }
                    }
                }
                rows.push(PairRow { pair_id: name, psnr_db, ssim, lpips, clip });
            }
            Err(e) => errors.push((name, e)),
        }
    }
    let unix_time = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    Ok(MetricReport::from_rows(rows, errors, Provenance { config_sha256: config_sha256.to_string(), unix_time }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> ImageRGBA {
        ImageRGBA::filled(16, 16, [v, v, v, 1.0])
    }

    #[test]
    fn psnr_examples() {
        let a = constant(0.3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        assert!((psnr(&a, &constant(0.4), 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr(&constant(0.2), &constant(0.7), 1.0).unwrap() - 6.0206).abs() < 1e-3);
        assert!(psnr(&a, &ImageRGBA::new(3, 3), 1.0).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = constant(0.5);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let expect = (2.0 * 0.3 + SSIM_C1) / (0.25 + 0.36 + SSIM_C1);
        assert!((ssim(&a, &constant(0.6)).unwrap() - expect).abs() < 1e-9);
        assert!((expect - 0.98365).abs() < 1e-4);
        assert!(matches!(ssim(&ImageRGBA::new(10, 20), &ImageRGBA::new(10, 20)), Err(MetricsError::TooSmall(..))));
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(w[i], w[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let rows: Vec<PairRow> = (0..4)
            .map(|i| PairRow { pair_id: format!("{i}.png"), psnr_db: 20.0 + i as f64, ssim: 0.5, lpips: None, clip: None })
            .collect();
        let r = MetricReport::from_rows(rows, vec![], Provenance { config_sha256: "x".into(), unix_time: 0 });
        assert!((r.psnr.mean - 21.5).abs() < 1e-12);
        assert!((r.psnr.std - 1.25f64.sqrt()).abs() < 1e-12);
        assert!(r.lpips.is_none());
        assert_eq!(r.to_csv().lines().count(), 5);
    }
}

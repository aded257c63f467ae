//! Float RGBA images and input standardization: alpha matting, recentering,
//! resizing and compositing.
//!
//! Pixels are straight (non-premultiplied) RGBA in [0, 1]. PNG files are read
//! and written at 8 bits per channel with a linear mapping; no gamma handling.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("image encode failed: {0}")]
    Encode(String),
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("image has no foreground pixels")]
    EmptyForeground,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGBA {
    pub width: u32,
    pub height: u32,
    /// Row-major, top row first.
    pub pixels: Vec<[f64; 4]>,
}

impl ImageRGBA {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 4])
    }

    pub fn filled(width: u32, height: u32, value: [f64; 4]) -> Self {
        Self { width, height, pixels: vec![value; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f64; 4]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 4] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: [f64; 4]) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = value;
    }

    pub fn same_dims(&self, other: &ImageRGBA) -> Result<(), ImageError> {
        if self.dims() != other.dims() {
            return Err(ImageError::DimensionMismatch { a: self.dims(), b: other.dims() });
        }
        Ok(())
    }

    /// True when every channel is finite and inside [0, 1].
    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().flatten().all(|c| c.is_finite() && (0.0..=1.0).contains(c))
    }

    pub fn to_rgba8(&self) -> Vec<u8> {
        self.pixels.iter().flatten().map(|&c| quantize(c)).collect()
    }

    pub fn from_rgba8(width: u32, height: u32, bytes: &[u8]) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize * 4;
        if bytes.len() != expected {
            return Err(ImageError::InvalidArgument(format!(
                "expected {expected} bytes for {width}x{height} RGBA, got {}",
                bytes.len()
            )));
        }
        let pixels = bytes
            .chunks_exact(4)
            .map(|p| {
                [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0, p[3] as f64 / 255.0]
            })
            .collect();
        Ok(Self { width, height, pixels })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let buf = image::RgbaImage::from_raw(self.width, self.height, self.to_rgba8())
            .ok_or_else(|| ImageError::Encode("buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| ImageError::Decode(e.to_string()))?
            .to_rgba8();
        Self::from_rgba8(img.width(), img.height(), img.as_raw())
    }

    /// Decodes any supported container (PNG or TGA), guessing from the bytes.
    pub fn decode_any(bytes: &[u8], hint: Option<&str>) -> Result<Self, ImageError> {
        let format = match hint.map(|h| h.to_ascii_lowercase()) {
            Some(ext) if ext == "tga" => Some(image::ImageFormat::Tga),
            Some(ext) if ext == "png" => Some(image::ImageFormat::Png),
            _ => image::guess_format(bytes).ok(),
        };
        let format = match format {
            Some(f @ (image::ImageFormat::Png | image::ImageFormat::Tga)) => f,
            Some(other) => {
                return Err(ImageError::Decode(format!("unsupported image format {other:?}")))
            }
            None => return Err(ImageError::Decode("unrecognized image format".into())),
        };
        let img = image::load_from_memory_with_format(bytes, format)
            .map_err(|e| ImageError::Decode(e.to_string()))?
            .to_rgba8();
        Self::from_rgba8(img.width(), img.height(), img.as_raw())
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path)
            .map_err(|source| ImageError::Io { path: path.to_path_buf(), source })?;
        Self::decode_png(&bytes)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|source| ImageError::Io { path: path.to_path_buf(), source })
    }

    /// Mean alpha-weighted RGB of the foreground; `None` when fully transparent.
    pub fn mean_foreground_rgb(&self) -> Option<[f64; 3]> {
        let mut acc = [0.0; 3];
        let mut wsum = 0.0;
        for p in &self.pixels {
            let a = p[3];
            for c in 0..3 {
                acc[c] += a * p[c];
            }
            wsum += a;
        }
        (wsum > 0.0).then(|| [acc[0] / wsum, acc[1] / wsum, acc[2] / wsum])
    }

    pub fn alpha_channel(&self) -> Vec<f64> {
        self.pixels.iter().map(|p| p[3]).collect()
    }
}

#[inline]
pub fn quantize(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary alpha matting: pixels under `threshold` become fully transparent
/// black, the rest fully opaque with RGB kept.
pub fn alpha_matte(img: &ImageRGBA, threshold: f64) -> Result<ImageRGBA, ImageError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ImageError::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    let pixels = img
        .pixels
        .iter()
        .map(|p| if p[3] < threshold { [0.0; 4] } else { [p[0], p[1], p[2], 1.0] })
        .collect();
    Ok(ImageRGBA { width: img.width, height: img.height, pixels })
}

/// `out = α·rgb + (1 − α)·background`, fully opaque.
pub fn composite_over(img: &ImageRGBA, background_rgb: [f64; 3]) -> ImageRGBA {
    let pixels = img
        .pixels
        .iter()
        .map(|p| {
            let a = p[3];
            [
                a * p[0] + (1.0 - a) * background_rgb[0],
                a * p[1] + (1.0 - a) * background_rgb[1],
                a * p[2] + (1.0 - a) * background_rgb[2],
                1.0,
            ]
        })
        .collect();
    ImageRGBA { width: img.width, height: img.height, pixels }
}

/// Inclusive pixel bounding box `(x0, y0, x1, y1)` of pixels whose alpha
/// satisfies `pred`.
pub fn alpha_bbox(img: &ImageRGBA, pred: impl Fn(f64) -> bool) -> Option<(u32, u32, u32, u32)> {
    let mut bbox: Option<(u32, u32, u32, u32)> = None;
    for y in 0..img.height {
        for x in 0..img.width {
            if pred(img.get(x, y)[3]) {
                bbox = Some(match bbox {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    bbox
}

/// Bilinear sample at continuous coordinates (pixel centers at +0.5) with
/// alpha-weighted color. Outside the image the sample is transparent.
pub fn sample_bilinear(img: &ImageRGBA, sx: f64, sy: f64) -> [f64; 4] {
    let fx = sx - 0.5;
    let fy = sy - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut premul = [0.0; 3];
    let mut alpha = 0.0;
    for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
        for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
            let w = wx * wy;
            if w == 0.0 {
                continue;
            }
            let (x, y) = (x0 + dx, y0 + dy);
            if x < 0 || y < 0 || x >= img.width as i64 || y >= img.height as i64 {
                continue;
            }
            let p = img.get(x as u32, y as u32);
            let wa = w * p[3];
            for c in 0..3 {
                premul[c] += wa * p[c];
            }
            alpha += wa;
        }
    }
    if alpha <= 0.0 {
        return [0.0; 4];
    }
    let alpha_c = alpha.min(1.0);
    [
        (premul[0] / alpha).clamp(0.0, 1.0),
        (premul[1] / alpha).clamp(0.0, 1.0),
        (premul[2] / alpha).clamp(0.0, 1.0),
        alpha_c,
    ]
}

/// Plain bilinear resize of the whole frame.
pub fn resize_bilinear(img: &ImageRGBA, width: u32, height: u32) -> ImageRGBA {
    if img.dims() == (width, height) {
        return img.clone();
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    ImageRGBA::from_fn(width, height, |x, y| {
        sample_bilinear(img, (x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy)
    })
}

/// Crops the foreground, pads it to a square, leaves a margin of
/// `border_ratio × target` on each side and resizes to `target × target`.
///
/// The foreground box uses pixels with alpha ≥ 0.5 when any exist (falling
/// back to alpha > 0), so soft silhouette edges do not grow the box when the
/// operation is applied repeatedly.
pub fn recenter_resize(
    img: &ImageRGBA,
    target: u32,
    border_ratio: f64,
) -> Result<ImageRGBA, ImageError> {
    if !(0.0..0.5).contains(&border_ratio) {
        return Err(ImageError::InvalidArgument(format!("border_ratio {border_ratio} outside [0, 0.5)")));
    }
    if target == 0 {
        return Err(ImageError::InvalidArgument("target size must be positive".into()));
    }
    let (x0, y0, x1, y1) = alpha_bbox(img, |a| a >= 0.5)
        .or_else(|| alpha_bbox(img, |a| a > 0.0))
        .ok_or(ImageError::EmptyForeground)?;
    let box_w = (x1 - x0 + 1) as f64;
    let box_h = (y1 - y0 + 1) as f64;
    let side = box_w.max(box_h);
    let inner = target as f64 * (1.0 - 2.0 * border_ratio);
    let scale = inner / side;
    let cx = (x0 as f64 + x1 as f64 + 1.0) * 0.5;
    let cy = (y0 as f64 + y1 as f64 + 1.0) * 0.5;
    let half = target as f64 * 0.5;
    Ok(ImageRGBA::from_fn(target, target, |x, y| {
        let sx = cx + (x as f64 + 0.5 - half) / scale;
        let sy = cy + (y as f64 + 0.5 - half) / scale;
        sample_bilinear(img, sx, sy)
    }))
}

/// Alpha-weighted centroid of the foreground in continuous pixel coordinates.
pub fn alpha_centroid(img: &ImageRGBA) -> Option<(f64, f64)> {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut w = 0.0;
    for y in 0..img.height {
        for x in 0..img.width {
            let a = img.get(x, y)[3];
            sx += a * (x as f64 + 0.5);
            sy += a * (y as f64 + 0.5);
            w += a;
        }
    }
    (w > 0.0).then(|| (sx / w, sy / w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_in_frame(frame: u32, x0: u32, y0: u32, side: u32) -> ImageRGBA {
        ImageRGBA::from_fn(frame, frame, |x, y| {
            if x >= x0 && x < x0 + side && y >= y0 && y < y0 + side {
                [0.8, 0.3, 0.1, 1.0]
            } else {
                [0.0; 4]
            }
        })
    }

    fn bbox_side(img: &ImageRGBA) -> (u32, u32) {
        let (x0, y0, x1, y1) = alpha_bbox(img, |a| a >= 0.5).unwrap();
        (x1 - x0 + 1, y1 - y0 + 1)
    }

    #[test]
    fn matte_opaque_image_forces_alpha() {
        let img = ImageRGBA::filled(4, 4, [0.2, 0.4, 0.6, 0.9]);
        let out = alpha_matte(&img, 0.5).unwrap();
        assert!(out.pixels.iter().all(|p| *p == [0.2, 0.4, 0.6, 1.0]));
    }

    #[test]
    fn matte_checker_zeroes_half() {
        let img = ImageRGBA::from_fn(8, 8, |x, y| {
            let a = if (x + y) % 2 == 0 { 0.3 } else { 0.7 };
            [0.5, 0.5, 0.5, a]
        });
        let out = alpha_matte(&img, 0.5).unwrap();
        let zeroed = out.pixels.iter().filter(|p| **p == [0.0; 4]).count();
        assert_eq!(zeroed, 32);
        assert_eq!(alpha_matte(&out, 0.5).unwrap(), out);
    }

    #[test]
    fn matte_keeps_transparent_background() {
        let img = square_in_frame(32, 8, 8, 10);
        let before = img.pixels.iter().filter(|p| p[3] == 0.0).count();
        let out = alpha_matte(&img, 0.5).unwrap();
        assert_eq!(out.pixels.iter().filter(|p| p[3] == 0.0).count(), before);
    }

    #[test]
    fn matte_rejects_bad_threshold() {
        let img = ImageRGBA::new(2, 2);
        assert!(alpha_matte(&img, 1.5).is_err());
        assert!(alpha_matte(&img, -0.1).is_err());
    }

    #[test]
    fn composite_examples() {
        let img = ImageRGBA::filled(2, 2, [1.0, 0.0, 0.0, 0.5]);
        let out = composite_over(&img, [0.0, 0.0, 1.0]);
        assert_eq!(out.get(0, 0), [0.5, 0.0, 0.5, 1.0]);
        let opaque = ImageRGBA::filled(2, 2, [0.1, 0.2, 0.3, 1.0]);
        assert_eq!(composite_over(&opaque, [1.0; 3]).get(1, 1), [0.1, 0.2, 0.3, 1.0]);
        let clear = ImageRGBA::new(2, 2);
        assert_eq!(composite_over(&clear, [0.2, 0.3, 0.4]).get(1, 0), [0.2, 0.3, 0.4, 1.0]);
    }

    #[test]
    fn recenter_small_square() {
        let img = square_in_frame(512, 37, 300, 10);
        let out = recenter_resize(&img, 256, 0.2).unwrap();
        let (w, h) = bbox_side(&out);
        assert!((w as f64 - 153.6).abs() <= 1.0, "width {w}");
        assert!((h as f64 - 153.6).abs() <= 1.0, "height {h}");
        let (cx, cy) = alpha_centroid(&out).unwrap();
        assert!((cx - 128.0).abs() <= 1.0 && (cy - 128.0).abs() <= 1.0);
        assert!(out.in_unit_range());
    }

    #[test]
    fn recenter_centered_square_is_pure_scale() {
        let img = square_in_frame(200, 50, 50, 100);
        let out = recenter_resize(&img, 128, 0.1).unwrap();
        let (w, _) = bbox_side(&out);
        assert!((w as f64 - 128.0 * 0.8).abs() <= 1.0, "{w}");
    }

    #[test]
    fn recenter_is_nearly_idempotent() {
        let img = square_in_frame(300, 20, 90, 61);
        let once = recenter_resize(&img, 128, 0.2).unwrap();
        let twice = recenter_resize(&once, 128, 0.2).unwrap();
        let a = alpha_bbox(&once, |a| a >= 0.5).unwrap();
        let b = alpha_bbox(&twice, |a| a >= 0.5).unwrap();
        for (p, q) in [(a.0, b.0), (a.1, b.1), (a.2, b.2), (a.3, b.3)] {
            assert!((p as i64 - q as i64).abs() <= 1, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn recenter_empty_foreground() {
        let img = ImageRGBA::new(16, 16);
        assert!(matches!(recenter_resize(&img, 8, 0.2), Err(ImageError::EmptyForeground)));
        let img = square_in_frame(16, 2, 2, 4);
        assert!(recenter_resize(&img, 8, 0.5).is_err());
    }

    #[test]
    fn resize_halves_by_box_average() {
        let img = ImageRGBA::from_fn(4, 4, |x, _| {
            let v = if x % 2 == 0 { 0.2 } else { 0.6 };
            [v, v, v, 1.0]
        });
        let out = resize_bilinear(&img, 2, 2);
        for p in &out.pixels {
            assert!((p[0] - 0.4).abs() < 1e-12);
            assert!((p[3] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn png_roundtrip_within_quantization() {
        let img = ImageRGBA::from_fn(7, 5, |x, y| {
            [x as f64 / 7.0, y as f64 / 5.0, 0.123, (x + y) as f64 / 12.0]
        });
        let back = ImageRGBA::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back.dims(), img.dims());
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            for c in 0..4 {
                assert!((a[c] - b[c]).abs() <= 1.0 / 510.0 + 1e-12);
            }
        }
    }
}

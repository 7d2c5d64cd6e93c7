//! PNG and JSON persistence for images and small documents.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, GeocentricFrame, Mask, NormalImage};

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |e| Error::Image { path: path.into(), source: e }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

/// 16-bit PNG in millimeters, 0 for missing.
pub fn save_depth_png(depth: &DepthImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let (w, h) = (depth.width() as u32, depth.height() as u32);
    let buf: Vec<u16> =
        (0..depth.len()).map(|i| depth.at(i).map_or(0, |z| (z * 1000.0).round().clamp(1.0, u16::MAX as f64) as u16)).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w, h, buf).expect("buffer size");
    img.save(path).map_err(image_err(path))
}

pub fn load_depth_png(path: &Path) -> Result<DepthImage> {
    let img = image::open(path).map_err(image_err(path))?.into_luma16();
    let (w, h) = img.dimensions();
    let values = img.into_raw().into_iter().map(|mm| mm as f64 / 1000.0).collect();
    DepthImage::from_meters(w as usize, h as usize, values)
}

/// 8-bit PNG, 255 for set pixels.
pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let buf = mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, buf).expect("buffer size");
    img.save(path).map_err(image_err(path))
}

/// Any non-zero pixel is set.
pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(image_err(path))?.into_luma8();
    let (w, h) = img.dimensions();
    Mask::from_bits(w as usize, h as usize, img.into_raw().into_iter().map(|v| v > 0).collect())
}

/// Writes the three angle channels to `path` and the validity mask to `valid_path`.
pub fn save_normal_png(img: &NormalImage, path: &Path, valid_path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let buf = img.data.iter().flat_map(|p| *p).collect();
    let rgb = RgbImage::from_raw(img.width as u32, img.height as u32, buf).expect("buffer size");
    rgb.save(path).map_err(image_err(path))?;
    let mask = Mask::from_bits(img.width, img.height, img.valid.clone())?;
    save_mask_png(&mask, valid_path)
}

pub fn load_normal_png(path: &Path, valid_path: &Path) -> Result<NormalImage> {
    let rgb = image::open(path).map_err(image_err(path))?.into_rgb8();
    let (w, h) = rgb.dimensions();
    let valid = load_mask_png(valid_path)?;
    if valid.width() != w as usize || valid.height() != h as usize {
        return Err(Error::DimensionMismatch(w as usize, h as usize, valid.width(), valid.height()));
    }
    let data = rgb.pixels().map(|p| p.0).collect();
    Ok(NormalImage { width: w as usize, height: h as usize, data, valid: valid.bits().to_vec() })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One JSON object per line; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Json { path: path.into(), source: e }))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Intrinsics and geocentric frame in one document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraDoc {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub disparity_constant: f64,
    pub gravity: [f64; 3],
    pub floor_height: f64,
}

impl CameraDoc {
    pub fn new(k: &CameraIntrinsics, f: &GeocentricFrame) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            disparity_constant: k.disparity_constant,
            gravity: f.gravity,
            floor_height: f.floor_height,
        }
    }

    pub fn split(&self) -> Result<(CameraIntrinsics, GeocentricFrame)> {
        let k = CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            disparity_constant: self.disparity_constant,
        };
        k.validate()?;
        let f = GeocentricFrame { gravity: self.gravity, floor_height: self.floor_height };
        f.validate()?;
        Ok((k, f))
    }

    pub fn load(path: &Path) -> Result<(CameraIntrinsics, GeocentricFrame)> {
        read_json::<CameraDoc>(path)?.split()
    }
}

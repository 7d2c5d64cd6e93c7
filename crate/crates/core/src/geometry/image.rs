use nalgebra::Vector3;

use crate::error::{Error, Result};

use super::{CameraIntrinsics, GeocentricFrame};

/// Per-pixel depth in meters with an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthImage {
    /// All pixels missing.
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, depth: vec![0.0; width * height], valid: vec![false; width * height] }
    }

    /// Builds from raw meters, treating `0`, negative and non-finite values as missing.
    pub fn from_meters(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidArgument(format!("{} depth values for a {width}x{height} image", values.len())));
        }
        let valid: Vec<bool> = values.iter().map(|&z| z > 0.0 && z.is_finite()).collect();
        let depth = values.into_iter().zip(&valid).map(|(z, &ok)| if ok { z } else { 0.0 }).collect();
        Ok(Self { width, height, depth, valid })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        self.at(v * self.width + u)
    }

    #[inline]
    pub fn at(&self, idx: usize) -> Option<f64> {
        self.valid[idx].then(|| self.depth[idx])
    }

    /// Sets a pixel; non-positive or non-finite depth marks it missing.
    pub fn set(&mut self, u: usize, v: usize, z: f64) {
        let i = v * self.width + u;
        if z > 0.0 && z.is_finite() {
            self.depth[i] = z;
            self.valid[i] = true;
        } else {
            self.depth[i] = 0.0;
            self.valid[i] = false;
        }
    }

    pub fn clear(&mut self, idx: usize) {
        self.depth[idx] = 0.0;
        self.valid[idx] = false;
    }

    /// Raw storage with missing pixels as `0`.
    pub fn raw(&self) -> &[f64] {
        &self.depth
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::DimensionMismatch(self.width, self.height, width, height));
        }
        Ok(())
    }
}

/// Binary pixel mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidArgument(format!("{} mask bits for a {width}x{height} image", bits.len())));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_pixels(width: usize, height: usize, pixels: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::new(width, height);
        for (u, v) in pixels {
            m.set(u, v, true);
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    #[inline]
    pub fn at(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        self.bits[v * self.width + u] = on;
    }

    pub fn set_at(&mut self, idx: usize, on: bool) {
        self.bits[idx] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Linear indices of set pixels in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count()
    }

    /// Plain mask IoU; 0 when both masks are empty.
    pub fn iou(&self, other: &Mask) -> f64 {
        let u = self.union_count(other);
        if u == 0 {
            0.0
        } else {
            self.intersection_count(other) as f64 / u as f64
        }
    }

    /// Tight pixel bounding box, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<PixelBox> {
        let mut b: Option<PixelBox> = None;
        for i in self.indices() {
            let (u, v) = ((i % self.width) as i64, (i / self.width) as i64);
            b = Some(match b {
                None => PixelBox::new(u, v, u + 1, v + 1),
                Some(b) => PixelBox::new(b.x0.min(u), b.y0.min(v), b.x1.max(u + 1), b.y1.max(v + 1)),
            });
        }
        b
    }

    /// Mask translated by `(du, dv)` pixels; pixels leaving the image are dropped.
    pub fn shifted(&self, du: i64, dv: i64) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        for i in self.indices() {
            let u = (i % self.width) as i64 + du;
            let v = (i / self.width) as i64 + dv;
            if u >= 0 && v >= 0 && (u as usize) < self.width && (v as usize) < self.height {
                out.set(u as usize, v as usize, true);
            }
        }
        out
    }

    /// Morphological dilation with a square structuring element.
    pub fn dilated(&self, radius: usize) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        let r = radius as i64;
        for i in self.indices() {
            let (u, v) = ((i % self.width) as i64, (i / self.width) as i64);
            for dv in -r..=r {
                for du in -r..=r {
                    let (x, y) = (u + du, v + dv);
                    if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                        out.set(x as usize, y as usize, true);
                    }
                }
            }
        }
        out
    }
}

/// Axis-aligned pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct PixelBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl PixelBox {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> i64 {
        (self.x1 - self.x0).max(0)
    }

    pub fn height(&self) -> i64 {
        (self.y1 - self.y0).max(0)
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn intersection(&self, o: &PixelBox) -> i64 {
        let w = (self.x1.min(o.x1) - self.x0.max(o.x0)).max(0);
        let h = (self.y1.min(o.y1) - self.y0.max(o.y0)).max(0);
        w * h
    }

    pub fn iou(&self, o: &PixelBox) -> f64 {
        let inter = self.intersection(o);
        let union = self.area() + o.area() - inter;
        if union <= 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// 3D points with optional source pixel indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub pixels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Backprojects valid depth pixels (restricted to `mask` when given) into a
/// point cloud, in world coordinates when `frame` is supplied.
///
/// An empty result is returned, not an error, when every selected pixel is
/// missing depth; callers decide whether that is fatal.
pub fn backproject(depth: &DepthImage, k: &CameraIntrinsics, mask: Option<&Mask>, frame: Option<&GeocentricFrame>) -> Result<PointCloud> {
    depth.check_dims(k.width, k.height)?;
    if let Some(m) = mask {
        depth.check_dims(m.width(), m.height())?;
    }
    let rot = frame.map(|f| f.camera_to_world());
    let w = depth.width();
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for idx in 0..depth.len() {
        if mask.is_some_and(|m| !m.at(idx)) {
            continue;
        }
        let Some(z) = depth.at(idx) else { continue };
        let p = k.backproject_pixel((idx % w) as f64, (idx / w) as f64, z);
        points.push(match &rot {
            Some(r) => r * p,
            None => p,
        });
        pixels.push(idx);
    }
    Ok(PointCloud { points, pixels: Some(pixels) })
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{NormalImage, PixelBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    Nearest,
    #[default]
    Bilinear,
}

/// Resamples the contents of `bbox` to an `out_size × out_size` image.
///
/// Sample positions are pixel-center aligned, so a box the same size as the
/// output is copied verbatim. Samples falling outside the source image are
/// invalid; bilinear weights are renormalized over valid neighbors.
pub fn crop_and_warp(img: &NormalImage, bbox: &PixelBox, out_size: usize, mode: Resample) -> Result<NormalImage> {
    if bbox.is_empty() || out_size == 0 {
        return Err(Error::EmptyBox);
    }
    let image_box = PixelBox::new(0, 0, img.width as i64, img.height as i64);
    if bbox.intersection(&image_box) == 0 {
        return Err(Error::InvalidArgument("crop box does not intersect the image".into()));
    }
    let sx = bbox.width() as f64 / out_size as f64;
    let sy = bbox.height() as f64 / out_size as f64;
    let mut out = NormalImage::invalid(out_size, out_size);

    let fetch = |x: i64, y: i64| -> Option<[u8; 3]> {
        if x < 0 || y < 0 || x >= img.width as i64 || y >= img.height as i64 {
            return None;
        }
        img.get(x as usize, y as usize)
    };

    for j in 0..out_size {
        let y = bbox.y0 as f64 + (j as f64 + 0.5) * sy - 0.5;
        for i in 0..out_size {
            let x = bbox.x0 as f64 + (i as f64 + 0.5) * sx - 0.5;
            let px = match mode {
                Resample::Nearest => fetch(x.round() as i64, y.round() as i64),
                Resample::Bilinear => {
                    let (x0, y0) = (x.floor(), y.floor());
                    let (fx, fy) = (x - x0, y - y0);
                    let mut acc = [0.0f64; 3];
                    let mut wsum = 0.0;
                    for (dx, dy, wgt) in
                        [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)]
                    {
                        if wgt <= 0.0 {
                            continue;
                        }
                        if let Some(p) = fetch(x0 as i64 + dx, y0 as i64 + dy) {
                            for c in 0..3 {
                                acc[c] += wgt * p[c] as f64;
                            }
                            wsum += wgt;
                        }
                    }
                    (wsum > 0.0).then(|| acc.map(|a| (a / wsum).round().clamp(0.0, 255.0) as u8))
                }
            };
            if let Some(p) = px {
                let o = j * out_size + i;
                out.data[o] = p;
                out.valid[o] = true;
            }
        }
    }
    Ok(out)
}

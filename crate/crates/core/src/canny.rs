//! Canny edge detection over grayscale rasters.
//!
//! Pipeline: Gaussian blur, Sobel gradients, non-maximum suppression
//! along the quantized gradient direction, double threshold, hysteresis
//! (weak pixels kept iff 8-connected to a strong pixel). Thresholds are
//! fractions of the peak gradient magnitude, so the detector is
//! insensitive to absolute contrast.

use thiserror::Error;

use crate::image::ImageRaster;

#[derive(Debug, Error)]
pub enum CannyError {
    #[error("image {width}x{height} too small for edge detection")]
    DegenerateImage { width: usize, height: usize },
}

/// Binary per-pixel edge indicator with the source raster's dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl EdgeMap {
    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn edge_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Run the detector. `t_low` and `t_high` are fractions of the peak
/// gradient magnitude and must satisfy `0 < t_low < t_high <= 1`;
/// multi-channel rasters are collapsed to luminance first.
pub fn canny(
    img: &ImageRaster,
    sigma: f64,
    t_low: f64,
    t_high: f64,
) -> Result<EdgeMap, CannyError> {
    assert!(
        t_low > 0.0 && t_low < t_high && t_high <= 1.0,
        "thresholds must satisfy 0 < t_low < t_high <= 1"
    );
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(CannyError::DegenerateImage {
            width: w,
            height: h,
        });
    }

    let gray = img.to_luma_f32();
    let blurred = if sigma > 0.0 {
        gaussian_blur(&gray, w, h, sigma as f32)
    } else {
        gray
    };
    let (gx, gy) = sobel(&blurred, w, h);
    let thin = suppress_non_maxima(&gx, &gy, w, h);

    let peak = thin.iter().cloned().fold(0.0f32, f32::max);
    if peak <= 0.0 {
        return Ok(EdgeMap {
            width: w,
            height: h,
            mask: vec![false; w * h],
        });
    }
    let mask = hysteresis(&thin, w, h, t_low as f32 * peak, t_high as f32 * peak);
    Ok(EdgeMap {
        width: w,
        height: h,
        mask,
    })
}

/// Separable Gaussian with kernel half-width `ceil(3 sigma)` and
/// clamped borders.
fn gaussian_blur(src: &[f32], w: usize, h: usize, sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for i in 0..=2 * radius {
        let d = i as f32 - radius as f32;
        kernel.push((-0.5 * (d / sigma) * (d / sigma)).exp());
    }
    let sum: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let xi = (x as isize + i as isize - radius as isize).clamp(0, w as isize - 1);
                acc += src[y * w + xi as usize] * k;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let yi = (y as isize + i as isize - radius as isize).clamp(0, h as isize - 1);
                acc += tmp[yi as usize * w + x] * k;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn sobel(src: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: isize, dy: isize| {
                src[(y as isize + dy) as usize * w + (x as isize + dx) as usize]
            };
            gx[y * w + x] =
                (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gy[y * w + x] =
                (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

// tan(22.5 deg): sector boundary between axis-aligned and diagonal
// gradient directions.
const DIAG_TAN: f32 = 0.414_213_56;

/// Keep only pixels that are local maxima along their gradient
/// direction. The sector test uses |gx|/|gy| comparisons only, so the
/// result mirrors exactly when the image is mirrored.
fn suppress_non_maxima(gx: &[f32], gy: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let (dx, dy) = (gx[i], gy[i]);
            let mag = dx.hypot(dy);
            if mag <= 0.0 {
                continue;
            }
            let (ax, ay) = (dx.abs(), dy.abs());
            let (n1, n2) = if ay <= DIAG_TAN * ax {
                (out_idx(i, -1, 0, w), out_idx(i, 1, 0, w))
            } else if ax <= DIAG_TAN * ay {
                (out_idx(i, 0, -1, w), out_idx(i, 0, 1, w))
            } else if (dx > 0.0) == (dy > 0.0) {
                (out_idx(i, 1, 1, w), out_idx(i, -1, -1, w))
            } else {
                (out_idx(i, -1, 1, w), out_idx(i, 1, -1, w))
            };
            let m1 = gx[n1].hypot(gy[n1]);
            let m2 = gx[n2].hypot(gy[n2]);
            if mag < m1 || mag < m2 {
                continue;
            }
            out[i] = mag;
        }
    }
    out
}

#[inline]
fn out_idx(i: usize, dx: isize, dy: isize, w: usize) -> usize {
    (i as isize + dy * w as isize + dx) as usize
}

/// Double threshold plus stack-based hysteresis over 8-neighborhoods.
fn hysteresis(mag: &[f32], w: usize, h: usize, low: f32, high: f32) -> Vec<bool> {
    let mut mask = vec![false; w * h];
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mag[i] < high || mask[i] {
                continue;
            }
            mask[i] = true;
            stack.push((x, y));
            while let Some((cx, cy)) = stack.pop() {
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = cx as isize + dx;
                        let ny = cy as isize + dy;
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let ni = ny as usize * w + nx as usize;
                        if !mask[ni] && mag[ni] >= low {
                            mask[ni] = true;
                            stack.push((nx as usize, ny as usize));
                        }
                    }
                }
            }
        }
    }
    mask
}

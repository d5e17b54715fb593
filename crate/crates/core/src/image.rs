//! 8-bit raster images with binary PNM (P5 grayscale / P6 color) I/O.
//!
//! The binary pixmap formats are the canonical interchange for the test
//! corpus and the synthetic workload generator: they round-trip
//! bit-exactly and need no external decoder.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("not a binary PNM image: {0}")]
    BadFormat(String),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u64),
    #[error("invalid dimensions {width}x{height} with {channels} channel(s)")]
    BadDimensions {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Row-major 8-bit image, grayscale (1 channel) or RGB (3 channels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRaster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl ImageRaster {
    /// Uniform image of the given value.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        assert!(width >= 1 && height >= 1, "raster must be at least 1x1");
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            pixels: vec![value; width * height * channels],
        }
    }

    pub fn from_pixels(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if width == 0
            || height == 0
            || !(channels == 1 || channels == 3)
            || pixels.len() != width * height * channels
        {
            return Err(ImageError::BadDimensions {
                width,
                height,
                channels,
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Paint an axis-aligned filled rectangle, clipped to the image bounds.
    pub fn fill_rect(&mut self, x: usize, y: usize, rect_w: usize, rect_h: usize, value: u8) {
        let x_end = (x + rect_w).min(self.width);
        let y_end = (y + rect_h).min(self.height);
        for yy in y..y_end {
            for xx in x..x_end {
                let base = (yy * self.width + xx) * self.channels;
                for c in 0..self.channels {
                    self.pixels[base + c] = value;
                }
            }
        }
    }

    /// Collapse to luminance. RGB uses Rec. 601 weights.
    pub fn to_luma_f32(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.width * self.height);
        if self.channels == 1 {
            out.extend(self.pixels.iter().map(|&v| v as f32));
        } else {
            for px in self.pixels.chunks_exact(3) {
                out.push(0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32);
            }
        }
        out
    }

    pub fn mirrored_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + x) * self.channels;
                let dst = (y * self.width + (self.width - 1 - x)) * self.channels;
                for c in 0..self.channels {
                    out.pixels[dst + c] = self.pixels[src + c];
                }
            }
        }
        out
    }

    pub fn mirrored_vertical(&self) -> Self {
        let mut out = self.clone();
        let row = self.width * self.channels;
        for y in 0..self.height {
            let src = y * row;
            let dst = (self.height - 1 - y) * row;
            out.pixels[dst..dst + row].copy_from_slice(&self.pixels[src..src + row]);
        }
        out
    }

    pub fn read_pnm<R: Read>(mut reader: R) -> Result<Self, ImageError> {
        let mut buf = Vec::new();
        reader.read_to_end(&mut buf)?;
        let mut pos = 0usize;

        let magic = next_token(&buf, &mut pos)
            .ok_or_else(|| ImageError::BadFormat("missing magic number".into()))?;
        let channels = match magic.as_slice() {
            b"P5" => 1,
            b"P6" => 3,
            other => {
                return Err(ImageError::BadFormat(format!(
                    "unknown magic {:?}",
                    String::from_utf8_lossy(other)
                )))
            }
        };
        let width = next_int(&buf, &mut pos, "width")? as usize;
        let height = next_int(&buf, &mut pos, "height")? as usize;
        let maxval = next_int(&buf, &mut pos, "maxval")?;
        if maxval != 255 {
            return Err(ImageError::UnsupportedMaxval(maxval));
        }
        // Exactly one whitespace byte separates the header from the data.
        if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
            return Err(ImageError::BadFormat("missing header separator".into()));
        }
        pos += 1;

        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or(ImageError::BadDimensions {
                width,
                height,
                channels,
            })?;
        if buf.len() < pos + expected {
            return Err(ImageError::BadFormat(format!(
                "truncated pixel data: expected {expected} bytes, got {}",
                buf.len().saturating_sub(pos)
            )));
        }
        Self::from_pixels(width, height, channels, buf[pos..pos + expected].to_vec())
    }

    pub fn load_pnm(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        Self::read_pnm(BufReader::new(File::open(path)?))
    }

    pub fn write_pnm<W: Write>(&self, mut writer: W) -> io::Result<()> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        write!(writer, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        writer.write_all(&self.pixels)
    }

    pub fn save_pnm(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_pnm(&mut w)?;
        w.flush()
    }
}

fn next_token(buf: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    loop {
        while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < buf.len() && buf[*pos] == b'#' {
            while *pos < buf.len() && buf[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= buf.len() {
        return None;
    }
    let start = *pos;
    while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(buf[start..*pos].to_vec())
}

fn next_int(buf: &[u8], pos: &mut usize, what: &str) -> Result<u64, ImageError> {
    let tok =
        next_token(buf, pos).ok_or_else(|| ImageError::BadFormat(format!("missing {what}")))?;
    std::str::from_utf8(&tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageError::BadFormat(format!("bad {what}")))
}

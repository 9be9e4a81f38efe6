use std::io::Write;

use crate::dataset::DicomFile;
use crate::error::{DicomError, Result};
use crate::tag::{tags, Tag};
use crate::value::get_value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelRepresentation {
    Unsigned,
    TwosComplement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelDescriptor {
    pub rows: usize,
    pub cols: usize,
    pub bits_allocated: u16,
    pub bits_stored: u16,
    pub representation: PixelRepresentation,
    pub photometric: String,
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    pub frames: usize,
}

fn unsupported(msg: impl Into<String>) -> DicomError {
    DicomError::UnsupportedPixels(msg.into())
}

fn required(file: &DicomFile, tag: Tag, name: &str) -> Result<f64> {
    get_value(file, tag)?
        .and_then(|v| v.as_f64())
        .ok_or_else(|| unsupported(format!("missing or non-numeric {name}")))
}

impl PixelDescriptor {
    pub fn from_file(file: &DicomFile) -> Result<Self> {
        let rows = required(file, tags::ROWS, "Rows")? as usize;
        let cols = required(file, tags::COLUMNS, "Columns")? as usize;
        let bits_allocated = required(file, tags::BITS_ALLOCATED, "BitsAllocated")? as u16;
        let bits_stored = get_value(file, tags::BITS_STORED)?
            .and_then(|v| v.as_f64())
            .map_or(bits_allocated, |v| v as u16);
        let representation = match get_value(file, tags::PIXEL_REPRESENTATION)?.and_then(|v| v.as_f64()) {
            Some(r) if r == 1.0 => PixelRepresentation::TwosComplement,
            _ => PixelRepresentation::Unsigned,
        };
        let photometric = get_value(file, tags::PHOTOMETRIC_INTERPRETATION)?
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let opt = |tag, default| -> Result<f64> {
            Ok(get_value(file, tag)?.and_then(|v| v.as_f64()).unwrap_or(default))
        };
        let d = PixelDescriptor {
            rows,
            cols,
            bits_allocated,
            bits_stored,
            representation,
            photometric,
            rescale_slope: opt(tags::RESCALE_SLOPE, 1.0)?,
            rescale_intercept: opt(tags::RESCALE_INTERCEPT, 0.0)?,
            frames: opt(tags::NUMBER_OF_FRAMES, 1.0)?.max(1.0) as usize,
        };
        if !matches!(d.bits_allocated, 8 | 16) {
            return Err(unsupported(format!("BitsAllocated {}", d.bits_allocated)));
        }
        if d.bits_stored == 0 || d.bits_stored > d.bits_allocated {
            return Err(unsupported(format!("BitsStored {}", d.bits_stored)));
        }
        Ok(d)
    }

    pub fn frame_len(&self) -> usize {
        self.rows * self.cols * (self.bits_allocated as usize / 8)
    }

    fn sample(&self, frame: &[u8], i: usize) -> i64 {
        let raw = match self.bits_allocated {
            8 => frame[i] as u32,
            _ => u16::from_le_bytes([frame[2 * i], frame[2 * i + 1]]) as u32,
        };
        let mask = if self.bits_stored >= 32 {
            u32::MAX
        } else {
            (1u32 << self.bits_stored) - 1
        };
        let v = raw & mask;
        match self.representation {
            PixelRepresentation::Unsigned => v as i64,
            PixelRepresentation::TwosComplement => {
                let sign = 1u32 << (self.bits_stored - 1);
                if v & sign != 0 {
                    v as i64 - (1i64 << self.bits_stored)
                } else {
                    v as i64
                }
            }
        }
    }
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            encoder.set_color(png::ColorType::Grayscale);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header().expect("in-memory PNG header");
            writer
                .write_image_data(&self.pixels)
                .expect("in-memory PNG data");
            writer.finish().expect("in-memory PNG finish");
        }
        out.flush().ok();
        out
    }
}

/// Linear window: `y = round_half_up(255 * clamp((v - (wc - ww/2)) / ww, 0, 1))`
/// where `v` is the rescaled modality value.
pub fn window_byte(v: f64, center: f64, width: f64) -> u8 {
    let lower = center - width / 2.0;
    let t = ((v - lower) / width).clamp(0.0, 1.0);
    (255.0 * t + 0.5).floor() as u8
}

/// Renders frame 0 of a MONOCHROME2 image through the linear window.
pub fn render_preview(file: &DicomFile, window_center: f64, window_width: f64) -> Result<GrayImage> {
    if !(window_width >= 1.0) || !window_center.is_finite() {
        return Err(unsupported(format!(
            "window width must be >= 1 (got {window_width})"
        )));
    }
    let d = PixelDescriptor::from_file(file)?;
    if d.photometric != "MONOCHROME2" {
        return Err(unsupported(format!("photometric {:?}", d.photometric)));
    }
    let samples = get_value(file, tags::SAMPLES_PER_PIXEL)?
        .and_then(|v| v.as_f64())
        .unwrap_or(1.0);
    if samples != 1.0 {
        return Err(unsupported(format!("SamplesPerPixel {samples}")));
    }
    let data = file
        .dataset
        .get(tags::PIXEL_DATA)
        .and_then(|e| e.bytes())
        .ok_or_else(|| unsupported("no native pixel data"))?;
    let expected = d.frame_len() * d.frames;
    // 8-bit data with an odd sample count carries one pad byte.
    if data.len() != expected && data.len() != expected + expected % 2 {
        return Err(unsupported(format!(
            "pixel data is {} bytes, descriptor needs {expected}",
            data.len()
        )));
    }
    let frame = &data[..d.frame_len()];
    let pixels = (0..d.rows * d.cols)
        .map(|i| {
            let v = d.sample(frame, i) as f64 * d.rescale_slope + d.rescale_intercept;
            window_byte(v, window_center, window_width)
        })
        .collect();
    Ok(GrayImage {
        width: d.cols,
        height: d.rows,
        pixels,
    })
}

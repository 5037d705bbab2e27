//! Grayscale image handling and the enhancement chain applied to every scan:
//! resize to the network input size, CLAHE, then a 3×3 median filter.

mod clahe;
mod median;

use std::io::Cursor;
use std::path::Path;

pub use clahe::{
    build_mapping, clahe, clip_limit, clip_redistribute, tile_histogram, ClaheParams, Histogram,
    LookupTable, TileRect,
};
pub use median::median_filter_3x3;

use crate::{Error, Result};

/// Side length of the square network input.
pub const INPUT_SIZE: usize = 224;

/// Number of intensity levels of an 8-bit image.
pub const GRAY_LEVELS: usize = 256;

/// Single-channel 8-bit image stored row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0)
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::argument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        Ok(Self {
            height,
            width,
            pixels: vec![value; height * width],
        })
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::argument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::argument(format!(
                "{} pixels do not fill a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self> {
        let mut img = Self::new(height, width)?;
        for r in 0..height {
            for c in 0..width {
                img.pixels[r * width + c] = f(r, c);
            }
        }
        Ok(img)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    pub fn min_max(&self) -> (u8, u8) {
        self.pixels
            .iter()
            .fold((u8::MAX, u8::MIN), |(lo, hi), &p| (lo.min(p), hi.max(p)))
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Encodes the image as an 8-bit grayscale PNG.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let buf =
            image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .expect("pixel buffer matches dimensions");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Format(format!("png encoding failed: {e}")))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_png_bytes()?).map_err(|e| Error::io(path, e))
    }
}

/// Rounds half-up and saturates to the 8-bit range.
#[inline]
pub(crate) fn round_to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Loads a PNG or JPEG file as 8-bit grayscale. Colour inputs are reduced to
/// the mean of their RGB channels; alpha is ignored.
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grayscale(&bytes).map_err(|message| Error::Decode {
        path: path.to_path_buf(),
        message,
    })
}

/// Decodes in-memory PNG or JPEG bytes; see [`load_grayscale`].
pub fn decode_grayscale(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let format = image::guess_format(bytes).map_err(|e| e.to_string())?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(format!("unsupported format {format:?}"));
    }
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| e.to_string())?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let pixels = match decoded {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        image::DynamicImage::ImageLuma16(_) | image::DynamicImage::ImageLumaA16(_) => {
            decoded.to_luma8().into_raw()
        }
        image::DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| {
                let sum = p.0.iter().map(|&c| c as u32).sum::<u32>();
                // half-up rounding of sum / 3
                ((2 * sum + 3) / 6) as u8
            })
            .collect(),
    };
    GrayImage::from_pixels(height, width, pixels).map_err(|e| e.to_string())
}

/// Source coordinate of output index `dst` under half-pixel-centre
/// (align-corners = false) mapping, clamped to the valid source range.
#[inline]
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize using half-pixel-centre coordinates, rounding half-up.
pub fn resize_bilinear(img: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::argument(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let cols: Vec<_> = (0..out_w)
        .map(|c| source_coord(c, img.width, out_w))
        .collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let (y0, y1, fy) = source_coord(r, img.height, out_h);
        let (top, bottom) = (img.row(y0), img.row(y1));
        for &(x0, x1, fx) in &cols {
            let t = top[x0] as f64 * (1.0 - fx) + top[x1] as f64 * fx;
            let b = bottom[x0] as f64 * (1.0 - fx) + bottom[x1] as f64 * fx;
            out.push(round_to_u8(t * (1.0 - fy) + b * fy));
        }
    }
    GrayImage::from_pixels(out_h, out_w, out)
}

/// The full enhancement chain: resize to `size`×`size`, CLAHE, median filter.
pub fn preprocess(img: &GrayImage, size: usize, params: &ClaheParams) -> Result<GrayImage> {
    let resized = resize_bilinear(img, size, size)?;
    let enhanced = clahe(&resized, params)?;
    Ok(median_filter_3x3(&enhanced))
}

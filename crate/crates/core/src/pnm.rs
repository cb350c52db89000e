//! Binary PGM (P5) and PPM (P6) files with maxval 255.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder};

use crate::error::{Error, Result};
use crate::metrics::GrayImage;
use crate::tensor::Tensor;

/// An 8-bit RGB image, interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 3 * width * height {
            return Err(Error::shape(format!(
                "{width}x{height} RGB image needs {} samples, got {}",
                3 * width * height,
                pixels.len()
            )));
        }
        Ok(RgbImage { width, height, pixels })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Planar `(1, 3, h, w)` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn([1, 3, self.height, self.width], |_, c, y, x| {
            f64::from(self.pixels[3 * (y * self.width + x) + c]) / 255.0
        })
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn decode(path: &Path, want: PnmSubtype) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = PnmDecoder::new(BufReader::new(file)).map_err(|e| format_err(path, e.to_string()))?;
    let header = decoder.header();
    if header.subtype() != want {
        return Err(format_err(path, format!("expected {want:?}, found {:?}", header.subtype())));
    }
    if header.maximal_sample() != 255 {
        return Err(format_err(
            path,
            format!("maxval must be 255, found {}", header.maximal_sample()),
        ));
    }
    let (w, h) = decoder.dimensions();
    let mut buf = vec![0u8; decoder.total_bytes() as usize];
    decoder
        .read_image(&mut buf)
        .map_err(|e| format_err(path, e.to_string()))?;
    Ok((w as usize, h as usize, buf))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let (w, h, px) = decode(path, PnmSubtype::Graymap(SampleEncoding::Binary))?;
    GrayImage::new(w, h, px)
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let (w, h, px) = decode(path, PnmSubtype::Pixmap(SampleEncoding::Binary))?;
    RgbImage::new(w, h, px)
}

fn encode(path: &Path, subtype: PnmSubtype, w: usize, h: usize, px: &[u8], color: ExtendedColorType) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .encode(px, w as u32, h as u32, color)
        .map_err(|e| format_err(path, e.to_string()))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    encode(
        path,
        PnmSubtype::Graymap(SampleEncoding::Binary),
        img.width,
        img.height,
        &img.pixels,
        ExtendedColorType::L8,
    )
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    encode(
        path,
        PnmSubtype::Pixmap(SampleEncoding::Binary),
        img.width,
        img.height,
        &img.pixels,
        ExtendedColorType::Rgb8,
    )
}

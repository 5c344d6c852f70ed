//! Raster files: 8-bit RGB PNG, 8- and 16-bit binary PGM.
//!
//! 16-bit PGM samples are big-endian (netpbm convention); depth rasters are
//! stored as millimeters in 16-bit PGM with 0 meaning "no depth".

use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use thiserror::Error;

use crate::raster::{Raster, Rgb8};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    pub fn path(&self) -> &Path {
        match self {
            IoError::Io { path, .. } | IoError::Format { path, .. } => path,
        }
    }
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<DynamicImage, IoError> {
    ImageReader::open(path)
        .map_err(|e| io_err(path, e))?
        .with_guessed_format()
        .map_err(|e| io_err(path, e))?
        .decode()
        .map_err(|e| format_err(path, e))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, IoError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| io_err(path, e))
}

pub fn write_rgb_png(path: &Path, img: &Raster<Rgb8>) -> Result<(), IoError> {
    let bytes: Vec<u8> = img.data().iter().flatten().copied().collect();
    let file = create(path)?;
    image::codecs::png::PngEncoder::new(file)
        .write_image(&bytes, img.width() as u32, img.height() as u32, ExtendedColorType::Rgb8)
        .map_err(|e| format_err(path, e))
}

pub fn read_rgb_png(path: &Path) -> Result<Raster<Rgb8>, IoError> {
    let img = open(path)?;
    if !matches!(img, DynamicImage::ImageRgb8(_)) {
        return Err(format_err(path, format!("expected 8-bit RGB, found {:?}", img.color())));
    }
    let rgb = img.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.pixels().map(|p| p.0).collect();
    Ok(Raster::from_vec(w, h, data).expect("decoded size"))
}

/// Binary (P5) PGM; samples wider than 8 bits are written big-endian.
fn write_pgm(path: &Path, width: usize, height: usize, maxval: u32, samples: &[u8]) -> Result<(), IoError> {
    let mut out = create(path)?;
    write!(out, "P5\n{width} {height}\n{maxval}\n")
        .and_then(|_| out.write_all(samples))
        .and_then(|_| out.flush())
        .map_err(|e| io_err(path, e))
}

pub fn write_pgm8(path: &Path, img: &Raster<u8>) -> Result<(), IoError> {
    write_pgm(path, img.width(), img.height(), 255, img.data())
}

pub fn write_pgm16(path: &Path, img: &Raster<u16>) -> Result<(), IoError> {
    let bytes: Vec<u8> = img.data().iter().flat_map(|v| v.to_be_bytes()).collect();
    write_pgm(path, img.width(), img.height(), 65535, &bytes)
}

/// Parsed P5 header plus the sample bytes that follow it.
struct Pgm {
    width: usize,
    height: usize,
    maxval: u32,
    samples: Vec<u8>,
}

fn read_pgm(path: &Path) -> Result<Pgm, IoError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token();
    if magic.as_deref() != Some("P5") {
        return Err(format_err(path, "not a binary PGM (P5) file"));
    }
    let mut number = |what: &str| {
        token()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| format_err(path, format!("bad PGM header: {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(format_err(path, format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the samples.
    let data_start = pos + 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let needed = width * height * sample_bytes;
    if bytes.len() < data_start + needed {
        return Err(format_err(path, "truncated PGM sample data"));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u32,
        samples: bytes[data_start..data_start + needed].to_vec(),
    })
}

pub fn read_pgm8(path: &Path) -> Result<Raster<u8>, IoError> {
    let pgm = read_pgm(path)?;
    if pgm.maxval > 255 {
        return Err(format_err(path, format!("expected 8-bit PGM, maxval is {}", pgm.maxval)));
    }
    Ok(Raster::from_vec(pgm.width, pgm.height, pgm.samples).expect("sized by header"))
}

pub fn read_pgm16(path: &Path) -> Result<Raster<u16>, IoError> {
    let pgm = read_pgm(path)?;
    if pgm.maxval < 256 {
        return Err(format_err(path, format!("expected 16-bit PGM, maxval is {}", pgm.maxval)));
    }
    let data = pgm.samples.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect();
    Ok(Raster::from_vec(pgm.width, pgm.height, data).expect("sized by header"))
}

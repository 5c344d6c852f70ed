//! PLY point clouds with per-vertex thermal and UV intensities.
//!
//! Every vertex carries, in this order:
//!
//! | property | type   | bytes | meaning                          |
//! |----------|--------|-------|----------------------------------|
//! | x, y, z  | float  | 4 each| position in meters, RGB frame    |
//! | red, green, blue | uchar | 1 each | fused color             |
//! | thermal  | ushort | 2     | aligned thermal intensity        |
//! | uv       | ushort | 2     | aligned UV intensity             |
//!
//! A binary vertex is therefore 19 bytes, little-endian, without padding.
//! Thermal and UV values are rounded and clamped to `0..=65535`.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::fusion::MultispectralPointCloud;
use crate::raster::Rgb8;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed PLY: {0}")]
    Format(String),
}

fn format_err(msg: impl Into<String>) -> PlyError {
    PlyError::Format(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

impl PlyFormat {
    fn keyword(self) -> &'static str {
        match self {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
        }
    }
}

/// One vertex as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlyVertex {
    pub position: [f32; 3],
    pub color: Rgb8,
    pub thermal: u16,
    pub uv: u16,
}

const PROPERTIES: [(&str, &str); 8] = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("ushort", "thermal"),
    ("ushort", "uv"),
];

fn to_u16(v: f64) -> u16 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 65535.0) as u16
    }
}

impl From<&crate::fusion::CloudPoint> for PlyVertex {
    fn from(p: &crate::fusion::CloudPoint) -> Self {
        PlyVertex {
            position: p.position.map(|c| c as f32),
            color: p.color,
            thermal: to_u16(p.thermal),
            uv: to_u16(p.uv),
        }
    }
}

pub fn write_vertices<W: Write>(out: W, vertices: &[PlyVertex], format: PlyFormat) -> Result<(), PlyError> {
    let mut out = io::BufWriter::new(out);
    writeln!(out, "ply")?;
    writeln!(out, "format {} 1.0", format.keyword())?;
    writeln!(out, "comment multispectral point cloud, meters")?;
    writeln!(out, "element vertex {}", vertices.len())?;
    for (ty, name) in PROPERTIES {
        writeln!(out, "property {ty} {name}")?;
    }
    writeln!(out, "end_header")?;
    for v in vertices {
        match format {
            PlyFormat::Ascii => {
                let [x, y, z] = v.position;
                let [r, g, b] = v.color;
                writeln!(out, "{x} {y} {z} {r} {g} {b} {} {}", v.thermal, v.uv)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for c in v.position {
                    out.write_all(&c.to_le_bytes())?;
                }
                out.write_all(&v.color)?;
                out.write_all(&v.thermal.to_le_bytes())?;
                out.write_all(&v.uv.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_ply<W: Write>(out: W, cloud: &MultispectralPointCloud, format: PlyFormat) -> Result<(), PlyError> {
    let vertices: Vec<PlyVertex> = cloud.points.iter().map(PlyVertex::from).collect();
    write_vertices(out, &vertices, format)
}

pub fn save_ply(path: impl AsRef<Path>, cloud: &MultispectralPointCloud, format: PlyFormat) -> Result<(), PlyError> {
    write_ply(std::fs::File::create(path)?, cloud, format)
}

fn header_line<R: BufRead>(input: &mut R) -> Result<String, PlyError> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(format_err("header ends before end_header"));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

/// Reads a file in the layout documented above (ASCII or binary
/// little-endian).
pub fn read_ply<R: Read>(input: R) -> Result<Vec<PlyVertex>, PlyError> {
    let mut input = BufReader::new(input);
    if header_line(&mut input)? != "ply" {
        return Err(format_err("missing 'ply' magic"));
    }
    let mut format = None;
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let line = header_line(&mut input)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", f, "1.0"] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(format_err(format!("unsupported format {other}"))),
                })
            }
            ["element", "vertex", n] if count.is_none() => {
                count = Some(n.parse::<usize>().map_err(|_| format_err(format!("bad vertex count {n}")))?)
            }
            ["element", name, _] => return Err(format_err(format!("unexpected element {name}"))),
            ["property", ty, name] if count.is_some() => props.push((ty.to_string(), name.to_string())),
            _ => return Err(format_err(format!("unexpected header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| format_err("missing format line"))?;
    let count = count.ok_or_else(|| format_err("missing vertex element"))?;
    let expected: Vec<(String, String)> = PROPERTIES.iter().map(|(t, n)| (t.to_string(), n.to_string())).collect();
    if props != expected {
        return Err(format_err(format!("unexpected vertex properties {props:?}")));
    }

    let mut vertices = Vec::with_capacity(count.min(1 << 24));
    match format {
        PlyFormat::Ascii => {
            let mut text = String::new();
            input.read_to_string(&mut text)?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for i in 0..count {
                let line = lines
                    .next()
                    .ok_or_else(|| format_err(format!("expected {count} vertices, found {i}")))?;
                let w: Vec<&str> = line.split_whitespace().collect();
                if w.len() != 8 {
                    return Err(format_err(format!("vertex {i} has {} values", w.len())));
                }
                fn num<T: std::str::FromStr>(word: &str, i: usize) -> Result<T, PlyError> {
                    word.parse()
                        .map_err(|_| format_err(format!("vertex {i}: bad value {word:?}")))
                }
                vertices.push(PlyVertex {
                    position: [num(w[0], i)?, num(w[1], i)?, num(w[2], i)?],
                    color: [num(w[3], i)?, num(w[4], i)?, num(w[5], i)?],
                    thermal: num(w[6], i)?,
                    uv: num(w[7], i)?,
                });
            }
            if lines.next().is_some() {
                return Err(format_err("trailing data after vertices"));
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut rec = [0u8; 19];
            for i in 0..count {
                input
                    .read_exact(&mut rec)
                    .map_err(|_| format_err(format!("expected {count} vertices, data ends in vertex {i}")))?;
                let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
                vertices.push(PlyVertex {
                    position: [f(0), f(1), f(2)],
                    color: [rec[12], rec[13], rec[14]],
                    thermal: u16::from_le_bytes([rec[15], rec[16]]),
                    uv: u16::from_le_bytes([rec[17], rec[18]]),
                });
            }
            let mut rest = [0u8; 1];
            if input.read(&mut rest)? != 0 {
                return Err(format_err("trailing data after vertices"));
            }
        }
    }
    Ok(vertices)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<Vec<PlyVertex>, PlyError> {
    read_ply(std::fs::File::open(path)?)
}

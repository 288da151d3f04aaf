//! `xyz` (text) and `pcda` (binary) point cloud files.
//!
//! pcda layout: `PCDA`, u32 little-endian point count, then count x 3
//! float32 little-endian values (x, y, z interleaved).

use std::fs;
use std::path::Path;

use super::{Point3, PointCloud};
use crate::error::{Error, Result};

pub const PCDA_MAGIC: &[u8; 4] = b"PCDA";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// Pick from the extension, falling back to sniffing the magic bytes.
    Auto,
    Xyz,
    Pcda,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Format::Auto),
            "xyz" => Ok(Format::Xyz),
            "pcda" => Ok(Format::Pcda),
            other => Err(Error::Argument(format!("unknown point cloud format '{other}'"))),
        }
    }
}

fn resolve(path: &Path, format: Format, bytes: Option<&[u8]>) -> Format {
    if format != Format::Auto {
        return format;
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("pcda") => Format::Pcda,
        Some("xyz") | Some("txt") => Format::Xyz,
        _ => match bytes {
            Some(b) if b.starts_with(PCDA_MAGIC) => Format::Pcda,
            Some(_) => Format::Xyz,
            None => Format::Pcda,
        },
    }
}

pub fn read_point_cloud(path: impl AsRef<Path>, format: Format) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match resolve(path, format, Some(&bytes)) {
        Format::Pcda => parse_pcda(&bytes),
        _ => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
                location: format!("byte {}", e.valid_up_to()),
                message: "xyz file is not valid UTF-8".into(),
            })?;
            parse_xyz(text)
        }
    }
}

pub fn write_point_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    if let Some(i) = cloud.points().iter().position(|p| !p.is_finite()) {
        return Err(Error::Validation(format!(
            "refusing to write: point {i} is not finite"
        )));
    }
    let bytes = match resolve(path, format, None) {
        Format::Pcda => encode_pcda(cloud),
        _ => encode_xyz(cloud).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let location = || format!("line {}", lineno + 1);
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                location: location(),
                message: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut xyz = [0.0; 3];
        for (slot, field) in xyz.iter_mut().zip(&fields) {
            *slot = field.parse::<f64>().map_err(|_| Error::Parse {
                location: location(),
                message: format!("'{field}' is not a number"),
            })?;
        }
        let p = Point3::from(xyz);
        if !p.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite coordinate on {}",
                location()
            )));
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::Parse {
            location: "line 1".into(),
            message: "no points".into(),
        });
    }
    PointCloud::new(points)
}

pub fn encode_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 30);
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out
}

pub fn parse_pcda(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < 4 || &bytes[..4] != PCDA_MAGIC {
        return Err(Error::Parse {
            location: "byte 0".into(),
            message: "bad magic, expected PCDA".into(),
        });
    }
    if bytes.len() < 8 {
        return Err(Error::Parse {
            location: "byte 4".into(),
            message: "truncated point count".into(),
        });
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + count * 12;
    if bytes.len() != expected {
        return Err(Error::Parse {
            location: format!("byte {}", bytes.len().min(expected)),
            message: format!(
                "declared {count} points ({expected} bytes) but file has {} bytes",
                bytes.len()
            ),
        });
    }
    if count == 0 {
        return Err(Error::Parse {
            location: "byte 4".into(),
            message: "no points".into(),
        });
    }
    let mut points = Vec::with_capacity(count);
    for (i, chunk) in bytes[8..].chunks_exact(12).enumerate() {
        let f = |k: usize| f32::from_le_bytes(chunk[k * 4..k * 4 + 4].try_into().unwrap()) as f64;
        let p = Point3::new(f(0), f(1), f(2));
        if !p.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite coordinate in point {i} (byte {})",
                8 + i * 12
            )));
        }
        points.push(p);
    }
    PointCloud::new(points)
}

pub fn encode_pcda(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + cloud.len() * 12);
    out.extend_from_slice(PCDA_MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud.points() {
        for v in p.to_array() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

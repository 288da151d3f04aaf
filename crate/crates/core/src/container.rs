//! Binary container shared by model checkpoints and anchor sets.
//!
//! ```text
//! "FPCD"            4 bytes
//! version           u16 LE (= 1)
//! dim count         u32 LE
//! dims              dim count x u32 LE
//! section tag       u8
//! seed              u64 LE
//! values            f64 LE, to the end of the payload
//! crc32             u32 LE over every preceding byte
//! ```

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FPCD";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum SectionTag {
    ClosedModel = 0,
    OpenModel = 1,
    Anchors = 2,
}

impl SectionTag {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(SectionTag::ClosedModel),
            1 => Ok(SectionTag::OpenModel),
            2 => Ok(SectionTag::Anchors),
            other => Err(Error::Load(format!("unknown section tag {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub tag: SectionTag,
    pub dims: Vec<u32>,
    pub seed: u64,
    pub values: Vec<f64>,
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 2 + 4 + 4 * self.dims.len() + 1 + 8 + 8 * self.values.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(self.tag as u8);
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Load("file is truncated".into());
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Load("bad magic, expected FPCD".into()));
        }
        if bytes.len() < 4 + 2 + 4 + 1 + 8 + 4 {
            return Err(truncated());
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let version = u16::from_le_bytes(body[4..6].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Load(format!(
                "unsupported container version {version} (expected {VERSION})"
            )));
        }
        let ndims = u32::from_le_bytes(body[6..10].try_into().unwrap()) as usize;
        let header_end = 10usize
            .checked_add(ndims.checked_mul(4).ok_or_else(truncated)?)
            .ok_or_else(truncated)?;
        if body.len() < header_end + 9 {
            return Err(truncated());
        }
        let crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        if crc32fast::hash(body) != crc {
            return Err(Error::Load("checksum mismatch (corrupt or truncated file)".into()));
        }
        let dims = body[10..header_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tag = SectionTag::from_byte(body[header_end])?;
        let seed = u64::from_le_bytes(body[header_end + 1..header_end + 9].try_into().unwrap());
        let payload = &body[header_end + 9..];
        if payload.len() % 8 != 0 {
            return Err(truncated());
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Container {
            tag,
            dims,
            seed,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            tag: SectionTag::Anchors,
            dims: vec![4, 100, 32],
            seed: 0xDEAD_BEEF,
            values: vec![1.5, -0.0, f64::MIN_POSITIVE, 3.25],
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Container::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn detects_damage() {
        let bytes = sample().encode();
        for cut in [0, 3, 10, bytes.len() - 1, bytes.len() - 9] {
            assert!(Container::decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[20] ^= 1;
        assert!(Container::decode(&flipped).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        match Container::decode(&v2) {
            Err(Error::Load(m)) => assert!(m.contains("version")),
            other => panic!("{other:?}"),
        }
    }
}

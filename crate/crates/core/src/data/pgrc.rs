//! PGRC single-sample format.
//!
//! ```text
//! "PGRC"  version:u16=1  flags:u8  N:u32  C:u16
//! [class_label:u16]  if flags & 1
//! [category:u16]     if flags & 4
//! N·C f32 row-major
//! [N × u16 part labels] if flags & 2
//! ```
//! Everything little-endian.

use std::fmt;
use std::path::Path;

use super::{DataError, PointCloud};

pub const MAGIC: &[u8; 4] = b"PGRC";
pub const VERSION: u16 = 1;
pub const FLAG_CLASS: u8 = 1;
pub const FLAG_PARTS: u8 = 2;
pub const FLAG_CATEGORY: u8 = 4;

/// Fixed-size prefix of a PGRC file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleHeader {
    pub version: u16,
    pub flags: u8,
    pub n: u32,
    pub channels: u16,
    pub class_label: Option<u16>,
    pub category: Option<u16>,
}

impl fmt::Display for SampleHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "format      PGRC v{}", self.version)?;
        writeln!(f, "points      {}", self.n)?;
        writeln!(f, "channels    {}", self.channels)?;
        writeln!(
            f,
            "flags       {:#05b} (class={} parts={} category={})",
            self.flags,
            self.flags & FLAG_CLASS != 0,
            self.flags & FLAG_PARTS != 0,
            self.flags & FLAG_CATEGORY != 0
        )?;
        match self.class_label {
            Some(c) => writeln!(f, "class_label {c}")?,
            None => writeln!(f, "class_label -")?,
        }
        match self.category {
            Some(c) => write!(f, "category    {c}"),
            None => write!(f, "category    -"),
        }
    }
}

pub fn encode(cloud: &PointCloud) -> Result<Vec<u8>, DataError> {
    cloud.validate()?;
    let n = u32::try_from(cloud.len()).map_err(|_| DataError::Invalid("too many points".into()))?;
    let c = u16::try_from(cloud.channels()).map_err(|_| DataError::Invalid("too many channels".into()))?;
    let mut flags = 0;
    if cloud.class_label.is_some() {
        flags |= FLAG_CLASS;
    }
    if cloud.part_labels.is_some() {
        flags |= FLAG_PARTS;
    }
    if cloud.category.is_some() {
        flags |= FLAG_CATEGORY;
    }
    let mut out = Vec::with_capacity(17 + cloud.points().len() * 4 + cloud.len() * 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(flags);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    if let Some(l) = cloud.class_label {
        out.extend_from_slice(&l.to_le_bytes());
    }
    if let Some(cat) = cloud.category {
        out.extend_from_slice(&cat.to_le_bytes());
    }
    for v in cloud.points() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &cloud.part_labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let left = self.buf.len() - self.pos;
        if left < n {
            return Err(DataError::Truncated {
                needed: n - left,
                offset: self.pos,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}

fn parse_header(r: &mut Reader<'_>) -> Result<SampleHeader, DataError> {
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(DataError::Version(version));
    }
    let flags = r.take(1)?[0];
    let n = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    let channels = r.u16()?;
    let class_label = if flags & FLAG_CLASS != 0 { Some(r.u16()?) } else { None };
    let category = if flags & FLAG_CATEGORY != 0 { Some(r.u16()?) } else { None };
    Ok(SampleHeader {
        version,
        flags,
        n,
        channels,
        class_label,
        category,
    })
}

pub fn decode(bytes: &[u8]) -> Result<PointCloud, DataError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let h = parse_header(&mut r)?;
    let values = h.n as usize * h.channels as usize;
    let payload = r.take(values * 4)?;
    let points: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let part_labels = if h.flags & FLAG_PARTS != 0 {
        let raw = r.take(h.n as usize * 2)?;
        Some(
            raw.chunks_exact(2)
                .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        )
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(DataError::Invalid(format!(
            "{} trailing bytes after sample payload",
            bytes.len() - r.pos
        )));
    }
    let mut cloud = PointCloud::new(points, h.channels as usize)?;
    cloud.class_label = h.class_label;
    cloud.category = h.category;
    if let Some(labels) = part_labels {
        cloud = cloud.with_part_labels(labels)?;
    }
    Ok(cloud)
}

/// Parse only the header of a PGRC byte buffer.
pub fn decode_header(bytes: &[u8]) -> Result<SampleHeader, DataError> {
    parse_header(&mut Reader { buf: bytes, pos: 0 })
}

pub fn read_sample(path: &Path) -> Result<PointCloud, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        DataError::Io { .. } => e,
        other => DataError::Sample {
            path: path.display().to_string(),
            msg: other.to_string(),
        },
    })
}

pub fn write_sample(cloud: &PointCloud, path: &Path) -> Result<(), DataError> {
    let bytes = encode(cloud)?;
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_header(path: &Path) -> Result<SampleHeader, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_header(&bytes)
}

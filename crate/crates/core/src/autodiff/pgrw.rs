//! PGRW weight container.
//!
//! ```text
//! "PGRW"  version:u16  count:u32
//! repeated count times:
//!   name_len:u16  name:utf8  dtype:u8 (0=f32, 1=f64)  rank:u8  dims:u32×rank
//!   payload: product(dims) little-endian values
//! ```
//! All integers little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::array::{DType, NdArray, Real};

pub const MAGIC: &[u8; 4] = b"PGRW";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PgrwError {
    #[error("bad magic {0:?}, expected \"PGRW\"")]
    BadMagic([u8; 4]),
    #[error("unsupported PGRW version {0}")]
    Version(u16),
    #[error("truncated PGRW data: needed {needed} more bytes at offset {offset}")]
    Truncated { needed: usize, offset: usize },
    #[error("unknown dtype code {0}")]
    DType(u8),
    #[error("entry name is not UTF-8")]
    Name,
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Encode named arrays in the order given.
pub fn encode<T: Real>(entries: &[(String, NdArray<T>)]) -> Result<Vec<u8>, PgrwError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, value) in entries {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| PgrwError::Invalid(format!("name too long: {name}")))?;
        let rank = u8::try_from(value.rank()).map_err(|_| PgrwError::Invalid(format!("rank too high: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(T::DTYPE as u8);
        out.push(rank);
        for &d in value.shape() {
            let d = u32::try_from(d).map_err(|_| PgrwError::Invalid(format!("dimension too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in value.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PgrwError> {
        if self.buf.len() - self.pos < n {
            return Err(PgrwError::Truncated {
                needed: n - (self.buf.len() - self.pos),
                offset: self.pos,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, PgrwError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PgrwError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, PgrwError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decode every entry, converting stored values to `T`.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<Vec<(String, NdArray<T>)>, PgrwError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(PgrwError::BadMagic(magic));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(PgrwError::Version(version));
    }
    let count = cur.u32()?;
    let mut entries = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| PgrwError::Name)?
            .to_string();
        let code = cur.u8()?;
        let dtype = DType::from_code(code).ok_or(PgrwError::DType(code))?;
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = cur.take(n * dtype.size())?;
        let data: Vec<T> = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| T::from_f64(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| T::from_f64(f64::read_le(c)))
                .collect(),
        };
        let value = NdArray::new(shape, data).map_err(|e| PgrwError::Invalid(e.to_string()))?;
        entries.push((name, value));
    }
    if cur.pos != bytes.len() {
        return Err(PgrwError::Invalid(format!(
            "{} trailing bytes after {} entries",
            bytes.len() - cur.pos,
            count
        )));
    }
    Ok(entries)
}

pub fn write_file<T: Real>(path: &Path, entries: &[(String, NdArray<T>)]) -> Result<(), PgrwError> {
    let bytes = encode(entries)?;
    let io = |source| PgrwError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(io)
}

pub fn read_file<T: Real>(path: &Path) -> Result<Vec<(String, NdArray<T>)>, PgrwError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| PgrwError::Io {
            path: path.display().to_string(),
            source,
        })?;
    decode(&bytes)
}

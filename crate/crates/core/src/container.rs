//! Binary container shared by head, feature, store and checkpoint files.
//!
//! Layout:
//!
//! ```text
//! [u64 LE: header length N][N bytes: JSON header][payload: little-endian arrays]
//! ```
//!
//! The header is serialized compactly with a fixed field order, so a file
//! written by this crate reads back and re-serializes to identical bytes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{NodiError, Result};

const LEN_PREFIX: usize = 8;
const MAX_HEADER: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Splits a container into its decoded header and a cursor over the payload.
pub fn open<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Payload<'_>)> {
    if bytes.len() < LEN_PREFIX {
        return Err(NodiError::format(0, "missing header length prefix"));
    }
    let len = u64::from_le_bytes(bytes[..LEN_PREFIX].try_into().unwrap());
    if len > MAX_HEADER || (LEN_PREFIX as u64 + len) > bytes.len() as u64 {
        return Err(NodiError::format(0, format!("header length {len} exceeds file")));
    }
    let end = LEN_PREFIX + len as usize;
    let header = serde_json::from_slice(&bytes[LEN_PREFIX..end])
        .map_err(|e| NodiError::format(LEN_PREFIX as u64, format!("bad JSON header: {e}")))?;
    Ok((header, Payload { bytes, pos: end }))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    Ok(std::fs::read(path)?)
}

pub struct Payload<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Payload<'a> {
    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(NodiError::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {remaining} remain"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn reals(&mut self, count: usize, dtype: DType, what: &str) -> Result<Vec<f64>> {
        let start = self.pos as u64;
        let raw = self.take(count * dtype.width(), what)?;
        let values: Vec<f64> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NodiError::format(
                start + (i * dtype.width()) as u64,
                format!("non-finite value in {what}"),
            ));
        }
        Ok(values)
    }

    pub fn labels(&mut self, count: usize) -> Result<Vec<u32>> {
        let raw = self.take(count * 4, "labels")?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(NodiError::format(
                self.pos as u64,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new<H: Serialize>(header: &H) -> Result<Self> {
        let json = serde_json::to_vec(header)?;
        let mut buf = Vec::with_capacity(LEN_PREFIX + json.len());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        Ok(Writer { buf })
    }

    pub fn reals<'v>(&mut self, values: impl IntoIterator<Item = &'v f64>, dtype: DType) {
        for &v in values {
            match dtype {
                DType::F32 => self.buf.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => self.buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }

    pub fn labels(&mut self, labels: &[u32]) {
        for l in labels {
            self.buf.extend_from_slice(&l.to_le_bytes());
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn write_to(self, path: &Path) -> Result<()> {
        std::fs::write(path, self.buf)?;
        Ok(())
    }
}

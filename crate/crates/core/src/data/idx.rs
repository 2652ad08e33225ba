//! IDX container (the MNIST file format): big-endian header, unsigned-byte
//! payload.
//!
//! ```text
//! [0, 0, 0x08, ndims] [dim_0: u32 BE] ... [dim_{ndims-1}: u32 BE] payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

impl IdxFile {
    pub fn parse(bytes: &[u8], path: &Path, expected_magic: u32) -> Result<Self> {
        let err = |offset: usize, message: String| Error::Idx {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        if bytes.len() < 4 {
            return Err(err(
                0,
                format!("file too short for a magic number ({} bytes)", bytes.len()),
            ));
        }
        let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        if magic != expected_magic {
            return Err(err(
                0,
                format!("bad magic {magic:#010x}, expected {expected_magic:#010x}"),
            ));
        }
        let ndims = (magic & 0xff) as usize;
        let header = 4 + 4 * ndims;
        if bytes.len() < header {
            return Err(err(
                bytes.len(),
                format!("truncated header: need {header} bytes for {ndims} dimensions"),
            ));
        }
        let dims: Vec<usize> = (0..ndims)
            .map(|i| {
                let o = 4 + 4 * i;
                u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
            })
            .collect();
        let expected: usize = dims.iter().product();
        let payload = &bytes[header..];
        if payload.len() < expected {
            return Err(err(
                bytes.len(),
                format!(
                    "truncated payload: dims {dims:?} need {expected} bytes, found {}",
                    payload.len()
                ),
            ));
        }
        if payload.len() > expected {
            return Err(err(
                header + expected,
                format!("{} trailing bytes after payload", payload.len() - expected),
            ));
        }
        Ok(IdxFile {
            magic,
            dims,
            payload: payload.to_vec(),
        })
    }

    pub fn read(path: &Path, expected_magic: u32) -> Result<Self> {
        let bytes = fs::read(path)?;
        IdxFile::parse(&bytes, path, expected_magic)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }
}

/// Images as `(count, rows, cols, pixels scaled to [0, 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

pub fn load_images(path: &Path) -> Result<IdxImages> {
    let file = IdxFile::read(path, IMAGES_MAGIC)?;
    let (count, rows, cols) = (file.dims[0], file.dims[1], file.dims[2]);
    let pixels = file.payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn load_labels(path: &Path) -> Result<Vec<u8>> {
    Ok(IdxFile::read(path, LABELS_MAGIC)?.payload)
}

/// Writes images whose pixels are multiples of 1/255 (as produced by
/// [`load_images`] or the toy generators).
pub fn write_images(path: &Path, images: &IdxImages) -> Result<()> {
    let payload = images
        .pixels
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    IdxFile {
        magic: IMAGES_MAGIC,
        dims: vec![images.count, images.rows, images.cols],
        payload,
    }
    .write(path)
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    IdxFile {
        magic: LABELS_MAGIC,
        dims: vec![labels.len()],
        payload: labels.to_vec(),
    }
    .write(path)
}

//! Packed tensor files.
//!
//! All integers are little-endian. Embedding files carry `u32 n, u32 d`;
//! label and image grids carry `u32 n, u16 h, u16 w`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::ImageRecord;
use crate::error::{Error, Result};

pub const EMBEDDINGS_MAGIC: &[u8; 4] = b"EMB1";
pub const MASKS_MAGIC: &[u8; 4] = b"MSK1";
pub const IMAGES_MAGIC: &[u8; 4] = b"IMG1";

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const MASKS_FILE: &str = "masks.bin";
pub const IMAGES_FILE: &str = "images.bin";

/// Row-major `n × dim` matrix of `f32` features.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub n: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

/// `n` byte grids of `height × width`, stored back to back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridStack {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl GridStack {
    pub fn grid(&self, i: usize) -> &[u8] {
        let len = self.height * self.width;
        &self.data[i * len..(i + 1) * len]
    }
}

fn check_magic(path: &Path, bytes: &[u8], magic: &[u8; 4]) -> Result<()> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::corrupt(
            path,
            format!(
                "bad magic: expected {:?}, found {:?}",
                std::str::from_utf8(magic).unwrap(),
                found
            ),
        ));
    }
    Ok(())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn u16_at(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(bytes[at..at + 2].try_into().unwrap())
}

pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    check_magic(path, bytes, EMBEDDINGS_MAGIC)?;
    if bytes.len() < 12 {
        return Err(Error::corrupt(path, "truncated header"));
    }
    let n = u32_at(bytes, 4) as usize;
    let dim = u32_at(bytes, 8) as usize;
    let expected = n
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(12))
        .ok_or_else(|| Error::corrupt(path, "header sizes overflow"))?;
    if bytes.len() != expected {
        return Err(Error::corrupt(
            path,
            format!(
                "payload length {} does not match header n={n} d={dim} (expected {expected} bytes)",
                bytes.len()
            ),
        ));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(EmbeddingMatrix { n, dim, data })
}

pub fn encode_embeddings(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + m.data.len() * 4);
    out.extend_from_slice(EMBEDDINGS_MAGIC);
    out.extend_from_slice(&(m.n as u32).to_le_bytes());
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grids(path: &Path, bytes: &[u8], magic: &[u8; 4]) -> Result<GridStack> {
    check_magic(path, bytes, magic)?;
    if bytes.len() < 12 {
        return Err(Error::corrupt(path, "truncated header"));
    }
    let n = u32_at(bytes, 4) as usize;
    let height = u16_at(bytes, 8) as usize;
    let width = u16_at(bytes, 10) as usize;
    let expected = 12 + n * height * width;
    if bytes.len() != expected {
        return Err(Error::corrupt(
            path,
            format!(
                "payload length {} does not match header n={n} h={height} w={width} (expected {expected} bytes)",
                bytes.len()
            ),
        ));
    }
    Ok(GridStack {
        n,
        height,
        width,
        data: bytes[12..].to_vec(),
    })
}

pub fn encode_grids(g: &GridStack, magic: &[u8; 4]) -> Result<Vec<u8>> {
    let h = u16::try_from(g.height)
        .map_err(|_| Error::InvalidInput(format!("grid height {} exceeds u16", g.height)))?;
    let w = u16::try_from(g.width)
        .map_err(|_| Error::InvalidInput(format!("grid width {} exceeds u16", g.width)))?;
    let mut out = Vec::with_capacity(12 + g.data.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(g.n as u32).to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&g.data);
    Ok(out)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    decode_embeddings(path, &read_file(path)?)
}

pub fn read_grids(path: &Path, magic: &[u8; 4]) -> Result<GridStack> {
    decode_grids(path, &read_file(path)?, magic)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImageRecord = serde_json::from_str(&line)
            .map_err(|e| Error::corrupt(path, format!("line {}: {e}", lineno + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ImageRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).expect("records always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_header_layout() {
        let m = EmbeddingMatrix {
            n: 2,
            dim: 1,
            data: vec![1.0, -0.5],
        };
        let bytes = encode_embeddings(&m);
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(&bytes[4..8], &[2, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(decode_embeddings(Path::new("x"), &bytes).unwrap(), m);
    }

    #[test]
    fn grids_header_layout() {
        let g = GridStack {
            n: 1,
            height: 2,
            width: 3,
            data: vec![0, 1, 2, 3, 4, 5],
        };
        let bytes = encode_grids(&g, MASKS_MAGIC).unwrap();
        assert_eq!(&bytes[..12], &[b'M', b'S', b'K', b'1', 1, 0, 0, 0, 2, 0, 3, 0]);
        assert_eq!(decode_grids(Path::new("x"), &bytes, MASKS_MAGIC).unwrap(), g);
    }

    #[test]
    fn wrong_magic_is_corrupt() {
        let g = GridStack {
            n: 0,
            height: 1,
            width: 1,
            data: vec![],
        };
        let bytes = encode_grids(&g, IMAGES_MAGIC).unwrap();
        let err = decode_grids(Path::new("masks.bin"), &bytes, MASKS_MAGIC).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }), "{err}");
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let m = EmbeddingMatrix {
            n: 2,
            dim: 2,
            data: vec![0.0; 4],
        };
        let mut bytes = encode_embeddings(&m);
        bytes.pop();
        assert!(matches!(
            decode_embeddings(Path::new("e"), &bytes),
            Err(Error::Corrupt { .. })
        ));
    }
}

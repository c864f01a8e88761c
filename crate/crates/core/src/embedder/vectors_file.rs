//! `vectors.bin` / `vectors.ids` persistence.
//!
//! Layout of `vectors.bin`, all integers little-endian:
//!
//! | offset | size | field                          |
//! | ------ | ---- | ------------------------------ |
//! | 0      | 4    | magic `RBV1`                   |
//! | 4      | 4    | `u32` dim                      |
//! | 8      | 8    | `u64` count                    |
//! | 16     | 4    | `u32` dtype code (1 = f32)     |
//! | 20     | ...  | count x dim `f32`, row-major   |
//!
//! `vectors.ids` holds one chunk id per line in row order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::EmbeddingVector;

pub const MAGIC: &[u8; 4] = b"RBV1";
pub const DTYPE_F32: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum VectorFileError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad vectors file: {0}")]
    Format(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> VectorFileError + '_ {
    move |source| VectorFileError::Io { path: path.display().to_string(), source }
}

pub fn write_vectors(
    bin_path: &Path,
    ids_path: &Path,
    ids: &[String],
    vectors: &[EmbeddingVector],
) -> Result<(), VectorFileError> {
    if ids.len() != vectors.len() {
        return Err(VectorFileError::Format(format!("{} ids for {} vectors", ids.len(), vectors.len())));
    }
    let dim = vectors.first().map_or(0, EmbeddingVector::dim);
    if vectors.iter().any(|v| v.dim() != dim) {
        return Err(VectorFileError::Format("vectors differ in dimension".into()));
    }
    if ids.iter().any(|id| id.contains('\n')) {
        return Err(VectorFileError::Format("chunk id contains a newline".into()));
    }
    let dim32 = u32::try_from(dim).map_err(|_| VectorFileError::Format("dim exceeds u32".into()))?;

    let mut out = BufWriter::new(File::create(bin_path).map_err(io_err(bin_path))?);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&dim32.to_le_bytes());
    header.extend_from_slice(&(vectors.len() as u64).to_le_bytes());
    header.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.write_all(&header).map_err(io_err(bin_path))?;
    for v in vectors {
        for x in v.values() {
            out.write_all(&x.to_le_bytes()).map_err(io_err(bin_path))?;
        }
    }
    out.flush().map_err(io_err(bin_path))?;

    let mut ids_out = BufWriter::new(File::create(ids_path).map_err(io_err(ids_path))?);
    for id in ids {
        writeln!(ids_out, "{id}").map_err(io_err(ids_path))?;
    }
    ids_out.flush().map_err(io_err(ids_path))
}

pub fn read_vectors(bin_path: &Path, ids_path: &Path) -> Result<(Vec<String>, Vec<EmbeddingVector>), VectorFileError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(bin_path).map_err(io_err(bin_path))?)
        .read_to_end(&mut bytes)
        .map_err(io_err(bin_path))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(VectorFileError::Format("missing RBV1 header".into()));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let dtype = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if dtype != DTYPE_F32 {
        return Err(VectorFileError::Format(format!("unsupported dtype code {dtype}")));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * dim * 4 {
        return Err(VectorFileError::Format(format!(
            "expected {} payload bytes, found {}",
            count * dim * 4,
            body.len()
        )));
    }
    let vectors = body
        .chunks_exact(dim.max(1) * 4)
        .take(count)
        .map(|row| {
            EmbeddingVector::from_unit(row.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
        })
        .collect::<Vec<_>>();

    let ids_text = std::fs::read_to_string(ids_path).map_err(io_err(ids_path))?;
    let ids: Vec<String> = ids_text.lines().map(str::to_string).collect();
    if ids.len() != count {
        return Err(VectorFileError::Format(format!("{} ids for {count} vectors", ids.len())));
    }
    Ok((ids, vectors))
}

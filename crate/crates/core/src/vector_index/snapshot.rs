//! `RBI1` index snapshots.
//!
//! All integers little-endian. Layout:
//!
//! ```text
//! header   magic "RBI1" | u32 kind (0 flat, 1 hnsw, 2 ivf) | u32 dim | u64 count
//!          | u32 p0 | u32 p1 | u32 p2 | u64 p3
//!            flat: all zero
//!            hnsw: m, ef_construction, ef_search, 0
//!            ivf:  nlist, nprobe, effective_nlist, k-means iterations
//! ids      count x (u32 byte length, UTF-8 bytes)
//! vectors  count x dim f32, row-major
//! hnsw     u32 entry point (0xFFFFFFFF if none)
//!          count x u8 level
//!          per node, per layer 0..=level: u32 degree, degree x u32 neighbor
//! ivf      effective_nlist x dim f32 centroids
//!          per list: u32 length, length x u32 row
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::hnsw::HnswGraph;
use super::ivf::IvfLists;
use super::{BuiltIndex, IndexKind, Structure};

pub const MAGIC: &[u8; 4] = b"RBI1";
const NO_ENTRY: u32 = u32::MAX;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad index snapshot: {0}")]
    Format(String),
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), SnapshotError> {
    let v = u32::try_from(v).map_err(|_| SnapshotError::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(index: &BuiltIndex) -> Result<Vec<u8>, SnapshotError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let (code, p0, p1, p2, p3) = match (index.kind(), index.structure()) {
        (IndexKind::FlatExact, _) => (0, 0, 0, 0, 0u64),
        (IndexKind::Hnsw { m, ef_construction, ef_search }, _) => (1, m, ef_construction, ef_search, 0),
        (IndexKind::IvfFlat { nlist, nprobe }, Structure::Ivf(l)) => (2, nlist, nprobe, l.nlist(), l.iterations() as u64),
        _ => return Err(SnapshotError::Format("kind and structure disagree".into())),
    };
    put_u32(&mut out, code)?;
    put_u32(&mut out, index.dim())?;
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for p in [p0, p1, p2] {
        put_u32(&mut out, p)?;
    }
    out.extend_from_slice(&p3.to_le_bytes());

    for id in index.ids() {
        put_u32(&mut out, id.len())?;
        out.extend_from_slice(id.as_bytes());
    }
    for x in index.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    match index.structure() {
        Structure::Flat => {}
        Structure::Hnsw(g) => {
            let entry = g.entry.map_or(NO_ENTRY, |e| e);
            out.extend_from_slice(&entry.to_le_bytes());
            out.extend_from_slice(&g.levels);
            for layers in &g.links {
                for nbrs in layers {
                    put_u32(&mut out, nbrs.len())?;
                    for nb in nbrs {
                        out.extend_from_slice(&nb.to_le_bytes());
                    }
                }
            }
        }
        Structure::Ivf(l) => {
            for x in &l.centroids {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for list in &l.lists {
                put_u32(&mut out, list.len())?;
                for r in list {
                    out.extend_from_slice(&r.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| SnapshotError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize32(&mut self) -> Result<usize, SnapshotError> {
        self.u32().map(|v| v as usize)
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, SnapshotError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| SnapshotError::Format("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<BuiltIndex, SnapshotError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(SnapshotError::Format("missing RBI1 magic".into()));
    }
    let code = c.u32()?;
    let dim = c.usize32()?;
    let count = usize::try_from(c.u64()?).map_err(|_| SnapshotError::Format("count overflow".into()))?;
    let (p0, p1, p2) = (c.usize32()?, c.usize32()?, c.usize32()?);
    let p3 = c.u64()?;

    let mut ids = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = c.usize32()?;
        let s = std::str::from_utf8(c.take(len)?).map_err(|e| SnapshotError::Format(e.to_string()))?;
        ids.push(s.to_string());
    }
    let data = c.f32s(count * dim)?;

    let (kind, structure) = match code {
        0 => (IndexKind::FlatExact, Structure::Flat),
        1 => {
            let entry = c.u32()?;
            let levels = c.take(count)?.to_vec();
            let mut links = Vec::with_capacity(count);
            for &level in &levels {
                let mut layers = Vec::with_capacity(level as usize + 1);
                for _ in 0..=level {
                    let deg = c.usize32()?;
                    let mut nbrs = Vec::with_capacity(deg);
                    for _ in 0..deg {
                        let nb = c.u32()?;
                        if nb as usize >= count {
                            return Err(SnapshotError::Format(format!("neighbor {nb} out of range")));
                        }
                        nbrs.push(nb);
                    }
                    layers.push(nbrs);
                }
                links.push(layers);
            }
            let entry = if entry == NO_ENTRY { None } else { Some(entry) };
            let graph = HnswGraph { m: p0, ef_construction: p1, levels, links, entry };
            (IndexKind::Hnsw { m: p0, ef_construction: p1, ef_search: p2 }, Structure::Hnsw(graph))
        }
        2 => {
            let centroids = c.f32s(p2 * dim)?;
            let mut lists = Vec::with_capacity(p2);
            for _ in 0..p2 {
                let len = c.usize32()?;
                let mut list = Vec::with_capacity(len);
                for _ in 0..len {
                    list.push(c.u32()?);
                }
                lists.push(list);
            }
            let ivf = IvfLists { centroids, lists, iterations: p3 as usize };
            (IndexKind::IvfFlat { nlist: p0, nprobe: p1 }, Structure::Ivf(ivf))
        }
        other => return Err(SnapshotError::Format(format!("unknown kind code {other}"))),
    };
    if c.pos != bytes.len() {
        return Err(SnapshotError::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(BuiltIndex::from_parts(kind, dim, ids, data, structure))
}

pub fn write_snapshot(path: &Path, index: &BuiltIndex) -> Result<(), SnapshotError> {
    let bytes = encode(index)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<BuiltIndex, SnapshotError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

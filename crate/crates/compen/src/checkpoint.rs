//! Named-parameter binary container: little-endian, versioned, f32 data.
//! Layout: magic "CPKT", u32 version, u32 count, then per entry a u16
//! name length, the UTF-8 name, u8 rank, u32 dims, and the raw values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::CheckpointError;

pub const MAGIC: &[u8; 4] = b"CPKT";
pub const VERSION: u32 = 1;

pub type NamedTensors = Vec<(String, Vec<usize>, Vec<f32>)>;

pub fn save_named(path: impl AsRef<Path>, entries: &NamedTensors) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in entries {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "entry {name}: shape/data mismatch"
        );
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(&buf).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_named(path: impl AsRef<Path>) -> Result<NamedTensors, CheckpointError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let bad = |reason: &str| CheckpointError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut off = 12usize;
    let mut out = NamedTensors::with_capacity(count);
    for _ in 0..count {
        if off + 2 > bytes.len() {
            return Err(bad("truncated name length"));
        }
        let nlen = u16::from_le_bytes(bytes[off..off + 2].try_into().unwrap()) as usize;
        off += 2;
        if off + nlen + 1 > bytes.len() {
            return Err(bad("truncated name"));
        }
        let name = String::from_utf8(bytes[off..off + nlen].to_vec())
            .map_err(|_| bad("name is not utf-8"))?;
        off += nlen;
        let rank = bytes[off] as usize;
        off += 1;
        if off + rank * 4 > bytes.len() {
            return Err(bad("truncated shape"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
            off += 4;
        }
        let numel: usize = shape.iter().product();
        if off + numel * 4 > bytes.len() {
            return Err(bad("truncated data"));
        }
        let data: Vec<f32> = bytes[off..off + numel * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += numel * 4;
        out.push((name, shape, data));
    }
    if off != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

/// Finds an entry by name.
pub fn find<'a>(
    entries: &'a NamedTensors,
    name: &str,
    path: &Path,
) -> Result<&'a (String, Vec<usize>, Vec<f32>), CheckpointError> {
    entries
        .iter()
        .find(|(n, _, _)| n == name)
        .ok_or_else(|| CheckpointError::MissingParam {
            path: path.to_path_buf(),
            name: name.to_string(),
        })
}

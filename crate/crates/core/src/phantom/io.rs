// SPDX-License-Identifier: Apache-2.0

//! Dataset file format.
//!
//! Binary payload, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "KDSGNDS\0"
//! 8       4     format version (u32, currently 1)
//! 12      4     n0     grid dimension (u32, even, >= 2)
//! 16      4     coils  L (u32, >= 1)
//! 20      4     slices T (u32)
//! 24      ...   sensitivity maps: L × n0 × n0 complex values
//!         ...   k-space: T × L × n0 × n0 complex values
//! ```
//!
//! Complex values are interleaved `(re: f64, im: f64)`. Map rows/columns are in
//! natural image order. K-space rows (phase encode) and columns (readout) run
//! over centered indices `-n0/2 … n0/2-1`. No trailing bytes are allowed.
//!
//! The split tags live in a text manifest next to the payload (`<path>.manifest`),
//! one `<index> <split>` line per slice with `split ∈ {train, validation, test}`.
//! Blank lines and lines starting with `#` are ignored.

use std::path::{Path, PathBuf};

use super::{Dataset, SensitivityMaps, Split};
use crate::error::{Error, Result};
use crate::grid::{centered_to_fft, C64};
use crate::kspace::MultiCoilKSpace;

pub const DATASET_MAGIC: &[u8; 8] = b"KDSGNDS\0";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".manifest");
    PathBuf::from(s)
}

fn push_c64(buf: &mut Vec<u8>, v: C64) {
    buf.extend_from_slice(&v.re.to_le_bytes());
    buf.extend_from_slice(&v.im.to_le_bytes());
}

/// Serialises the binary payload (maps and k-space; splits go to the manifest).
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let n0 = ds.n0();
    let coils = ds.coils();
    let per = coils * n0 * n0;
    let mut buf = Vec::with_capacity(HEADER_LEN + 16 * per * (ds.len() + 1));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n0 as u32).to_le_bytes());
    buf.extend_from_slice(&(coils as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    for &v in ds.maps.values() {
        push_c64(&mut buf, v);
    }
    let h = (n0 / 2) as isize;
    for slice in &ds.kspace {
        for l in 0..coils {
            let c = slice.coil(l);
            for m in -h..h {
                let row = centered_to_fft(m, n0);
                for k in -h..h {
                    push_c64(&mut buf, c[row * n0 + centered_to_fft(k, n0)]);
                }
            }
        }
    }
    buf
}

pub fn render_manifest(splits: &[Split]) -> String {
    let mut s = String::new();
    for (i, sp) in splits.iter().enumerate() {
        s.push_str(&format!("{i} {sp}\n"));
    }
    s
}

/// Parses a manifest that must tag each of `expected` slices exactly once.
pub fn parse_manifest(text: &str, expected: usize) -> Result<Vec<Split>> {
    let mut tags: Vec<Option<Split>> = vec![None; expected];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Manifest { line: lineno + 1, reason };
        let mut parts = line.split_whitespace();
        let (Some(idx), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected '<index> <split>'".into()));
        };
        let idx: usize = idx.parse().map_err(|_| err(format!("bad index '{idx}'")))?;
        let tag: Split = tag.parse().map_err(err)?;
        let slot = tags.get_mut(idx).ok_or_else(|| err(format!("index {idx} out of range")))?;
        if slot.is_some() {
            return Err(err(format!("index {idx} listed twice")));
        }
        *slot = Some(tag);
    }
    tags.into_iter()
        .enumerate()
        .map(|(i, t)| t.ok_or_else(|| Error::Manifest { line: 0, reason: format!("slice {i} has no split") }))
        .collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn c64(&mut self) -> C64 {
        let re = f64::from_le_bytes(self.buf[self.pos..self.pos + 8].try_into().unwrap());
        let im = f64::from_le_bytes(self.buf[self.pos + 8..self.pos + 16].try_into().unwrap());
        self.pos += 16;
        C64::new(re, im)
    }
}

/// Decodes a binary payload plus its manifest text.
pub fn decode_dataset(bytes: &[u8], manifest: &str) -> Result<Dataset> {
    if bytes.len() < 12 {
        return Err(Error::CorruptHeader(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..8] != DATASET_MAGIC {
        return Err(Error::CorruptHeader("bad magic bytes".into()));
    }
    let mut rd = Reader { buf: bytes, pos: 8 };
    let version = rd.u32();
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: DATASET_VERSION });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload { needed: HEADER_LEN, found: bytes.len() });
    }
    let n0 = rd.u32() as usize;
    let coils = rd.u32() as usize;
    let slices = rd.u32() as usize;
    if n0 < 2 || !n0.is_multiple_of(2) {
        return Err(Error::CorruptHeader(format!("invalid grid dimension {n0}")));
    }
    if coils == 0 {
        return Err(Error::CorruptHeader("zero coils".into()));
    }
    let needed = (slices as u128 + 1) * (coils as u128) * (n0 as u128) * (n0 as u128) * 16 + HEADER_LEN as u128;
    if needed > bytes.len() as u128 {
        return Err(Error::TruncatedPayload { needed: needed.min(usize::MAX as u128) as usize, found: bytes.len() });
    }
    if needed < bytes.len() as u128 {
        return Err(Error::CorruptHeader(format!("{} trailing bytes", bytes.len() as u128 - needed)));
    }
    let per = coils * n0 * n0;
    let maps: Vec<C64> = (0..per).map(|_| rd.c64()).collect();
    let maps = SensitivityMaps::new(coils, n0, maps).map_err(|e| Error::CorruptPayload(e.to_string()))?;
    let h = (n0 / 2) as isize;
    let mut kspace = Vec::with_capacity(slices);
    for _ in 0..slices {
        let mut data = vec![C64::new(0.0, 0.0); per];
        for l in 0..coils {
            for m in -h..h {
                let row = centered_to_fft(m, n0);
                for k in -h..h {
                    data[l * n0 * n0 + row * n0 + centered_to_fft(k, n0)] = rd.c64();
                }
            }
        }
        kspace.push(MultiCoilKSpace::from_vec(coils, n0, data).map_err(|e| Error::CorruptPayload(e.to_string()))?);
    }
    let splits = parse_manifest(manifest, slices)?;
    Dataset::new(kspace, maps, splits)
}

/// Writes the payload to `path` and the manifest to `<path>.manifest`.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(ds))?;
    std::fs::write(manifest_path(path), render_manifest(&ds.splits))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let manifest = std::fs::read_to_string(manifest_path(path))?;
    decode_dataset(&bytes, &manifest)
}

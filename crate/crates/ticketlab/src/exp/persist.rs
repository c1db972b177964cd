//! Checkpoint files: a custom little-endian binary format with a named
//! tensor directory and a CRC32 trailer. Round-trips are bit-exact.
//!
//! Layout: `b"TLCK" | version u32 | kind u8 | payload | crc32 u32`,
//! where the checksum covers everything before it.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::models::{ParamEntry, ParamKind, ParamSet};
use crate::pruning::{Mask, MaskEntry};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::tickets::{GanPair, SnapshotPair};

const MAGIC: &[u8; 4] = b"TLCK";
const VERSION: u32 = 1;

const KIND_PARAMS: u8 = 1;
const KIND_MASK: u8 = 2;
const KIND_GAN: u8 = 3;
const KIND_SNAPSHOT: u8 = 4;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt checkpoint {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("unsupported checkpoint version {found} in {path} (supported: {VERSION})")]
    UnsupportedVersion { path: PathBuf, found: u32 },
    #[error("checkpoint {path} holds kind {found}, expected {expected}")]
    WrongKind {
        path: PathBuf,
        expected: u8,
        found: u8,
    },
}

pub type Result<T> = std::result::Result<T, PersistError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(kind: u8) -> Self {
        let mut buf = Vec::with_capacity(4096);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(kind);
        Writer { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    fn name(&mut self, s: &str) {
        let b = s.as_bytes();
        self.u16(b.len() as u16);
        self.bytes(b);
    }

    fn shape(&mut self, dims: &[usize]) {
        self.u8(dims.len() as u8);
        for &d in dims {
            self.u32(d as u32);
        }
    }

    fn floats(&mut self, v: &[f64]) {
        for &x in v {
            self.buf.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }

    fn tensor(&mut self, t: &Tensor) {
        self.shape(t.shape());
        self.floats(t.data());
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        // Atomic-ish write: temp file in the same directory, then rename.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &self.buf).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))?;
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, detail: impl Into<String>) -> PersistError {
        PersistError::Corrupt {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.corrupt(format!(
                "truncated: wanted {} bytes at offset {}, file payload ends at {}",
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let b = self.take(len)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.corrupt("name is not utf-8"))
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let nd = self.u8()? as usize;
        let mut dims = Vec::with_capacity(nd);
        for _ in 0..nd {
            dims.push(self.u32()? as usize);
        }
        Ok(dims)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let shape = self.shape()?;
        let numel: usize = shape.iter().product();
        let data = self.floats(numel)?;
        Tensor::from_vec(shape, data).map_err(|e| self.corrupt(e.to_string()))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.corrupt(format!(
                "{} trailing payload bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn kind_byte(kind: ParamKind) -> u8 {
    match kind {
        ParamKind::Weight => 0,
        ParamKind::Bias => 1,
        ParamKind::Gamma => 2,
        ParamKind::Beta => 3,
    }
}

fn kind_from(b: u8) -> Option<ParamKind> {
    Some(match b {
        0 => ParamKind::Weight,
        1 => ParamKind::Bias,
        2 => ParamKind::Gamma,
        3 => ParamKind::Beta,
        _ => return None,
    })
}

fn write_paramset(w: &mut Writer, ps: &ParamSet) {
    w.u32(ps.entries.len() as u32);
    for e in &ps.entries {
        w.name(&e.name);
        w.u8(kind_byte(e.kind));
        w.tensor(&e.tensor);
    }
    w.u32(ps.buffers.len() as u32);
    for (name, t) in &ps.buffers {
        w.name(name);
        w.tensor(t);
    }
}

fn read_paramset(r: &mut Reader) -> Result<ParamSet> {
    let n = r.u32()? as usize;
    let mut ps = ParamSet::default();
    for _ in 0..n {
        let name = r.name()?;
        let kb = r.u8()?;
        let kind = kind_from(kb).ok_or_else(|| r.corrupt(format!("bad param kind {kb}")))?;
        let tensor = r.tensor()?;
        ps.entries.push(ParamEntry { name, kind, tensor });
    }
    let nb = r.u32()? as usize;
    for _ in 0..nb {
        let name = r.name()?;
        let tensor = r.tensor()?;
        ps.buffers.push((name, tensor));
    }
    Ok(ps)
}

/// Validates magic, version and checksum; returns the payload slice.
fn open_checked<'a>(path: &'a Path, data: &'a [u8], expect_kind: u8) -> Result<&'a [u8]> {
    let corrupt = |detail: &str| PersistError::Corrupt {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if data.len() < MAGIC.len() + 4 + 1 + 4 {
        return Err(corrupt("file too short"));
    }
    if &data[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let body = &data[..data.len() - 4];
    let stored = u32::from_le_bytes(data[data.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(corrupt(&format!(
            "checksum mismatch: stored {stored:08x}, computed {computed:08x}"
        )));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(PersistError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let kind = data[8];
    if kind != expect_kind {
        return Err(PersistError::WrongKind {
            path: path.to_path_buf(),
            expected: expect_kind,
            found: kind,
        });
    }
    Ok(&body[9..])
}

fn load_kind(path: &Path, kind: u8) -> Result<Vec<u8>> {
    let data = fs::read(path).map_err(io_err(path))?;
    let payload = open_checked(path, &data, kind)?;
    Ok(payload.to_vec())
}

pub fn save_paramset(path: &Path, ps: &ParamSet) -> Result<()> {
    let mut w = Writer::new(KIND_PARAMS);
    write_paramset(&mut w, ps);
    w.finish(path)
}

pub fn load_paramset(path: &Path) -> Result<ParamSet> {
    let payload = load_kind(path, KIND_PARAMS)?;
    let mut r = Reader {
        buf: &payload,
        pos: 0,
        path,
    };
    let ps = read_paramset(&mut r)?;
    r.done()?;
    Ok(ps)
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut w = Writer::new(KIND_MASK);
    w.u32(mask.entries.len() as u32);
    for e in &mask.entries {
        w.name(&e.name);
        w.shape(&e.shape);
        w.bytes(&e.bits);
    }
    w.finish(path)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let payload = load_kind(path, KIND_MASK)?;
    let mut r = Reader {
        buf: &payload,
        pos: 0,
        path,
    };
    let n = r.u32()? as usize;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.name()?;
        let shape = r.shape()?;
        let numel: usize = shape.iter().product();
        let bits = r.take(numel)?.to_vec();
        if bits.iter().any(|&b| b > 1) {
            return Err(r.corrupt("mask bits must be 0 or 1"));
        }
        entries.push(MaskEntry { name, shape, bits });
    }
    r.done()?;
    Ok(Mask { entries })
}

pub fn save_gan(path: &Path, gan: &GanPair) -> Result<()> {
    let mut w = Writer::new(KIND_GAN);
    write_paramset(&mut w, &gan.gen);
    write_paramset(&mut w, &gan.disc);
    w.finish(path)
}

pub fn load_gan(path: &Path) -> Result<GanPair> {
    let payload = load_kind(path, KIND_GAN)?;
    let mut r = Reader {
        buf: &payload,
        pos: 0,
        path,
    };
    let gen = read_paramset(&mut r)?;
    let disc = read_paramset(&mut r)?;
    r.done()?;
    Ok(GanPair { gen, disc })
}

pub fn save_snapshot(path: &Path, snap: &SnapshotPair) -> Result<()> {
    let mut w = Writer::new(KIND_SNAPSHOT);
    w.u64(snap.step);
    w.bytes(&snap.rng.seed);
    w.u128(snap.rng.word_pos);
    write_paramset(&mut w, &snap.gen);
    write_paramset(&mut w, &snap.disc);
    w.finish(path)
}

pub fn load_snapshot(path: &Path) -> Result<SnapshotPair> {
    let payload = load_kind(path, KIND_SNAPSHOT)?;
    let mut r = Reader {
        buf: &payload,
        pos: 0,
        path,
    };
    let step = r.u64()?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let word_pos = r.u128()?;
    let gen = read_paramset(&mut r)?;
    let disc = read_paramset(&mut r)?;
    r.done()?;
    Ok(SnapshotPair {
        step,
        gen,
        disc,
        rng: RngState { seed, word_pos },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_generator, GenConfig};
    use crate::pruning::random_mask;
    use tempfile::tempdir;

    #[test]
    fn paramset_roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("g.tlc");
        let ps = init_generator(&GenConfig::desk_scale(), 42);
        save_paramset(&path, &ps).unwrap();
        let loaded = load_paramset(&path).unwrap();
        assert!(ps.bits_eq(&loaded));
        assert_eq!(ps.buffers.len(), loaded.buffers.len());
        for ((n1, t1), (n2, t2)) in ps.buffers.iter().zip(&loaded.buffers) {
            assert_eq!(n1, n2);
            assert!(t1.bits_eq(t2));
        }
    }

    #[test]
    fn mask_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.tlm");
        let ps = init_generator(&GenConfig::desk_scale(), 1);
        let mask = random_mask(&ps, None, 0.36, 7).unwrap();
        save_mask(&path, &mask).unwrap();
        let loaded = load_mask(&path).unwrap();
        assert_eq!(mask, loaded);
    }

    #[test]
    fn truncated_file_reports_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("g.tlc");
        let ps = init_generator(&GenConfig::desk_scale(), 3);
        save_paramset(&path, &ps).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_paramset(&path) {
            Err(PersistError::Corrupt { .. }) => {}
            other => panic!("expected corruption, got {other:?}"),
        }
    }

    #[test]
    fn flipped_bit_reports_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("g.tlc");
        let ps = init_generator(&GenConfig::desk_scale(), 3);
        save_paramset(&path, &ps).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_paramset(&path),
            Err(PersistError::Corrupt { .. })
        ));
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("g.tlc");
        let ps = init_generator(&GenConfig::desk_scale(), 3);
        save_paramset(&path, &ps).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Bump the version field and re-seal the checksum.
        bytes[4] = 9;
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_paramset(&path),
            Err(PersistError::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn wrong_kind_is_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.tlc");
        let ps = init_generator(&GenConfig::desk_scale(), 3);
        save_paramset(&path, &ps).unwrap();
        assert!(matches!(
            load_mask(&path),
            Err(PersistError::WrongKind { .. })
        ));
    }
}

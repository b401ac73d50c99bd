//! Binary field snapshots.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//!      0     8  magic "PWEAFELD"
//!      8     4  format version (1)
//!     12     4  grid kind (0 = sector, 1 = full box)
//!     16     4  number of experts n
//!     20     4  reduced dimension d = n - 1
//!     24     8  m (nodes per axis above zero)
//!     32     8  h (binary64)
//!     40     8  node count
//!     48     8  dt
//!     56     8  residual tolerance
//!     64     8  final residual
//!     72     8  iterations
//!     80  8·count  node values (binary64) in ascending rank order
//!      …     4  CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Writes go to a sibling temporary file that is fsynced and renamed over
//! the target, so a crash mid-checkpoint leaves the previous snapshot
//! intact.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crc32fast::Hasher;
use expert_pde_core::{grid_count, FullGrid, GridConfig, Lattice, Solved};
use serde::Serialize;
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"PWEAFELD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 80;
const TRAILER_LEN: u64 = 4;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: not a field snapshot (bad magic)", .path.display())]
    Magic { path: PathBuf },
    #[error("{}: snapshot format version {found} is not supported (this build reads version {})", .path.display(), VERSION)]
    Version { path: PathBuf, found: u32 },
    #[error("{}: unknown grid kind {kind}", .path.display())]
    Kind { path: PathBuf, kind: u32 },
    #[error("{}: inconsistent header: {reason}", .path.display())]
    Header { path: PathBuf, reason: String },
    #[error("{}: header declares {declared} nodes but the grid has {expected}", .path.display())]
    Count { path: PathBuf, declared: u64, expected: u64 },
    #[error("{}: file is {actual} bytes, expected {expected} (truncated or padded)", .path.display())]
    Length { path: PathBuf, actual: u64, expected: u64 },
    #[error("{}: checksum mismatch (stored {stored:08x}, computed {computed:08x})", .path.display())]
    Checksum { path: PathBuf, stored: u32, computed: u32 },
    #[error("{}: value at rank {rank} is not finite", .path.display())]
    NonFinite { path: PathBuf, rank: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Sector,
    Full,
}

impl GridKind {
    fn code(self) -> u32 {
        match self {
            GridKind::Sector => 0,
            GridKind::Full => 1,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(GridKind::Sector),
            1 => Some(GridKind::Full),
            _ => None,
        }
    }

    /// Nodes stored for `config`.
    pub fn node_count(self, config: &GridConfig) -> Result<u64, expert_pde_core::sector::GridError> {
        match self {
            GridKind::Sector => grid_count(config.dim(), config.m() as u64),
            GridKind::Full => Ok(FullGrid::count(config)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnapshotHeader {
    pub kind: GridKind,
    pub n_experts: u32,
    pub m: u64,
    pub h: f64,
    pub count: u64,
    pub dt: f64,
    pub tolerance: f64,
    pub residual: f64,
    pub iterations: u64,
}

impl SnapshotHeader {
    pub fn for_solved<L: Lattice>(kind: GridKind, solved: &Solved<L>) -> Self {
        let config = solved.field.lattice().config();
        Self {
            kind,
            n_experts: config.n_experts() as u32,
            m: config.m() as u64,
            h: config.spacing(),
            count: solved.field.values().len() as u64,
            dt: solved.dt,
            tolerance: solved.tolerance,
            residual: solved.residual,
            iterations: solved.iterations,
        }
    }

    pub fn config(&self) -> Result<GridConfig, expert_pde_core::sector::GridError> {
        GridConfig::new(self.n_experts as usize, self.m as u32, self.h)
    }

    /// Whether the stored residual met the stored tolerance.
    pub fn converged(&self) -> bool {
        self.residual <= self.tolerance
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..8].copy_from_slice(&MAGIC);
        b[8..12].copy_from_slice(&VERSION.to_le_bytes());
        b[12..16].copy_from_slice(&self.kind.code().to_le_bytes());
        b[16..20].copy_from_slice(&self.n_experts.to_le_bytes());
        b[20..24].copy_from_slice(&self.n_experts.saturating_sub(1).to_le_bytes());
        b[24..32].copy_from_slice(&self.m.to_le_bytes());
        b[32..40].copy_from_slice(&self.h.to_le_bytes());
        b[40..48].copy_from_slice(&self.count.to_le_bytes());
        b[48..56].copy_from_slice(&self.dt.to_le_bytes());
        b[56..64].copy_from_slice(&self.tolerance.to_le_bytes());
        b[64..72].copy_from_slice(&self.residual.to_le_bytes());
        b[72..80].copy_from_slice(&self.iterations.to_le_bytes());
        b
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Total file size for `count` nodes.
pub fn file_len(count: u64) -> u64 {
    HEADER_LEN + 8 * count + TRAILER_LEN
}

struct Crc<W> {
    inner: W,
    hasher: Hasher,
}

impl<W: Write> Write for Crc<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Streams a snapshot to `out`.
pub fn write_to(out: impl Write, header: &SnapshotHeader, values: &[f64]) -> io::Result<()> {
    assert_eq!(header.count, values.len() as u64, "header count must match the payload");
    let mut w = Crc { inner: out, hasher: Hasher::new() };
    w.write_all(&header.encode())?;
    let mut buf = Vec::with_capacity(8 * 8192);
    for chunk in values.chunks(8192) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    let crc = w.hasher.finalize();
    w.inner.write_all(&crc.to_le_bytes())?;
    w.inner.flush()
}

/// Writes atomically and durably: temporary file, fsync, rename.
pub fn save(path: &Path, header: &SnapshotHeader, values: &[f64]) -> Result<(), SnapshotError> {
    let io_err = |source| SnapshotError::Io { path: path.to_path_buf(), source };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).map_err(io_err)?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    write_to(&mut w, header, values).map_err(io_err)?;
    let file = w.into_inner().map_err(|e| io_err(e.into_error()))?;
    file.sync_all().map_err(io_err)?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_err)?;
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        // Persist the rename itself; not every platform allows opening a directory.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn config(&self) -> GridConfig {
        self.header.config().expect("validated on load")
    }
}

/// Reads and validates a snapshot.
pub fn load(path: &Path) -> Result<Snapshot, SnapshotError> {
    let p = || path.to_path_buf();
    let io_err = |source| SnapshotError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io_err)?;
    let actual = file.metadata().map_err(io_err)?.len();
    let mut r = BufReader::with_capacity(1 << 20, file);
    let mut head = [0u8; HEADER_LEN as usize];
    let mut got = 0;
    while got < head.len() {
        match r.read(&mut head[got..]).map_err(io_err)? {
            0 => break,
            n => got += n,
        }
    }
    let short = || SnapshotError::Length { path: p(), actual, expected: HEADER_LEN + TRAILER_LEN };
    if got >= 8 && head[0..8] != MAGIC {
        return Err(SnapshotError::Magic { path: p() });
    }
    if got < 12 {
        return Err(short());
    }
    let version = u32_at(&head, 8);
    if version != VERSION {
        return Err(SnapshotError::Version { path: p(), found: version });
    }
    if got < head.len() {
        return Err(short());
    }
    let kind_code = u32_at(&head, 12);
    let kind = GridKind::from_code(kind_code).ok_or(SnapshotError::Kind { path: p(), kind: kind_code })?;
    let n_experts = u32_at(&head, 16);
    let d = u32_at(&head, 20);
    if d + 1 != n_experts {
        return Err(SnapshotError::Header { path: p(), reason: format!("d = {d} but n = {n_experts}") });
    }
    let header = SnapshotHeader {
        kind,
        n_experts,
        m: u64_at(&head, 24),
        h: f64_at(&head, 32),
        count: u64_at(&head, 40),
        dt: f64_at(&head, 48),
        tolerance: f64_at(&head, 56),
        residual: f64_at(&head, 64),
        iterations: u64_at(&head, 72),
    };
    if header.m > u32::MAX as u64 {
        return Err(SnapshotError::Header { path: p(), reason: format!("m = {} out of range", header.m) });
    }
    let config = header.config().map_err(|e| SnapshotError::Header { path: p(), reason: e.to_string() })?;
    let expected = kind.node_count(&config).map_err(|e| SnapshotError::Header { path: p(), reason: e.to_string() })?;
    if header.count != expected {
        return Err(SnapshotError::Count { path: p(), declared: header.count, expected });
    }
    let want = file_len(header.count);
    if actual != want {
        return Err(SnapshotError::Length { path: p(), actual, expected: want });
    }
    let mut hasher = Hasher::new();
    hasher.update(&head);
    let count = header.count as usize;
    let mut values = Vec::with_capacity(count);
    let mut buf = vec![0u8; 8 * 8192];
    while values.len() < count {
        let take = (count - values.len()).min(8192);
        let bytes = &mut buf[..8 * take];
        r.read_exact(bytes).map_err(io_err)?;
        hasher.update(bytes);
        values.extend(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
    }
    let mut trailer = [0u8; 4];
    r.read_exact(&mut trailer).map_err(io_err)?;
    let stored = u32::from_le_bytes(trailer);
    let computed = hasher.finalize();
    if stored != computed {
        return Err(SnapshotError::Checksum { path: p(), stored, computed });
    }
    if let Some(rank) = values.iter().position(|v| !v.is_finite()) {
        return Err(SnapshotError::NonFinite { path: p(), rank });
    }
    Ok(Snapshot { header, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(count: u64) -> SnapshotHeader {
        SnapshotHeader {
            kind: GridKind::Sector,
            n_experts: 3,
            m: 2,
            h: 0.5,
            count,
            dt: 0.2,
            tolerance: 0.0025,
            residual: 0.001,
            iterations: 17,
        }
    }

    #[test]
    fn layout_is_fixed() {
        let mut bytes = Vec::new();
        write_to(&mut bytes, &header(6), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(bytes.len() as u64, file_len(6));
        assert_eq!(&bytes[..8], b"PWEAFELD");
        assert_eq!(u32_at(&bytes, 8), 1);
        assert_eq!(u32_at(&bytes, 20), 2);
        assert_eq!(f64_at(&bytes, 80 + 8), 1.0);
        let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
        assert_eq!(u32_at(&bytes, bytes.len() - 4), crc);
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let values = vec![0.1, -0.0, 1e-300, f64::MAX, 0.3, 5.0 / 3.0];
        save(&path, &header(6), &values).unwrap();
        let snap = load(&path).unwrap();
        assert_eq!(snap.header, header(6));
        assert!(snap.values.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(!dir.path().join("f.bin.tmp").exists());
    }
}

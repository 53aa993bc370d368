//! LDIF tensor container and the embedding matrices stored in it.
//!
//! Layout (all integers little-endian):
//!
//! | bytes  | field                         |
//! |--------|-------------------------------|
//! | 0..4   | magic `LDIF`                  |
//! | 4      | version (1)                   |
//! | 5      | dtype code (0 = f32le)        |
//! | 6..8   | reserved, zero                |
//! | 8..16  | rows, u64                     |
//! | 16..20 | cols, u32                     |
//! | 20..   | rows * cols * 4 bytes payload |
//!
//! Embedding matrices carry their sample ids in a sidecar `<path>.ids`,
//! one UTF-8 id per line in row order.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use memmap2::Mmap;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LDIF";
pub const VERSION: u8 = 1;
pub const DTYPE_F32LE: u8 = 0;
pub const HEADER_LEN: usize = 20;

/// Shape of an LDIF payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub rows: u64,
    pub cols: u32,
}

impl Header {
    pub fn payload_len(&self) -> u64 {
        self.rows * self.cols as u64 * 4
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(MAGIC);
        buf[4] = VERSION;
        buf[5] = DTYPE_F32LE;
        buf[8..16].copy_from_slice(&self.rows.to_le_bytes());
        buf[16..20].copy_from_slice(&self.cols.to_le_bytes());
        buf
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::BadHeader {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < HEADER_LEN {
            return Err(bad("file shorter than the 20-byte header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(bad("magic is not LDIF"));
        }
        if bytes[4] != VERSION {
            return Err(bad(&format!("unsupported version {}", bytes[4])));
        }
        if bytes[5] != DTYPE_F32LE {
            return Err(bad(&format!("unsupported dtype code {}", bytes[5])));
        }
        if bytes[6] != 0 || bytes[7] != 0 {
            return Err(bad("reserved bytes are not zero"));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
        Ok(Header { rows, cols })
    }
}

/// Ordered sample identifiers packed into one buffer.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct SampleIds {
    text: String,
    ends: Vec<usize>,
}

impl std::fmt::Debug for SampleIds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.iter()).finish()
    }
}

impl SampleIds {
    pub fn new<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = SampleIds::default();
        for id in ids {
            out.push(id.as_ref())?;
        }
        Ok(out)
    }

    fn push(&mut self, id: &str) -> Result<()> {
        if id.is_empty() {
            return Err(Error::Ids(format!("empty id at position {}", self.len())));
        }
        if id.contains(['\n', '\r']) {
            return Err(Error::Ids(format!("id {id:?} contains a line break")));
        }
        self.text.push_str(id);
        self.ends.push(self.text.len());
        Ok(())
    }

    /// Parses sidecar contents: one id per line, trailing newline optional.
    fn parse_sidecar(text: String, path: &Path) -> Result<Self> {
        let mut ends = Vec::new();
        let mut packed = String::with_capacity(text.len());
        for (line_no, line) in text.split_terminator('\n').enumerate() {
            if line.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    reason: "empty id".into(),
                });
            }
            packed.push_str(line);
            ends.push(packed.len());
        }
        Ok(SampleIds { text: packed, ends })
    }

    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    pub fn get(&self, i: usize) -> &str {
        let start = if i == 0 { 0 } else { self.ends[i - 1] };
        &self.text[start..self.ends[i]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// First duplicated id, if any.
    pub fn first_duplicate(&self) -> Option<&str> {
        let mut seen = HashSet::with_capacity(self.len());
        self.iter().find(|id| !seen.insert(*id))
    }
}

enum Storage {
    Owned(Vec<f32>),
    Mapped(Mmap),
}

/// N x d row-major f32 point cloud with one id per row.
///
/// Matrices opened with [`read_matrix`] are backed by a read-only file
/// mapping; rows are paged in on access.
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    storage: Storage,
    ids: SampleIds,
}

impl std::fmt::Debug for EmbeddingMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingMatrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("mapped", &matches!(self.storage, Storage::Mapped(_)))
            .finish()
    }
}

impl Clone for EmbeddingMatrix {
    fn clone(&self) -> Self {
        EmbeddingMatrix {
            rows: self.rows,
            cols: self.cols,
            storage: Storage::Owned(self.data().to_vec()),
            ids: self.ids.clone(),
        }
    }
}

impl PartialEq for EmbeddingMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.ids == other.ids
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl EmbeddingMatrix {
    /// Builds an in-memory matrix, checking the id and finiteness invariants.
    pub fn new(ids: SampleIds, cols: usize, data: Vec<f32>) -> Result<Self> {
        let rows = ids.len();
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                expected: rows * cols,
                actual: data.len(),
                context: "matrix data length vs ids x cols",
            });
        }
        if let Some(dup) = ids.first_duplicate() {
            return Err(Error::Ids(format!("duplicate id {dup:?}")));
        }
        let m = EmbeddingMatrix {
            rows,
            cols,
            storage: Storage::Owned(data),
            ids,
        };
        m.check_finite()?;
        Ok(m)
    }

    pub fn from_rows<S: AsRef<str>>(ids: &[S], rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if ids.len() != rows.len() {
            return Err(Error::DimMismatch {
                expected: rows.len(),
                actual: ids.len(),
                context: "id count vs row count",
            });
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimMismatch {
                    expected: cols,
                    actual: r.len(),
                    context: "ragged rows",
                });
            }
            data.extend_from_slice(r);
        }
        EmbeddingMatrix::new(SampleIds::new(ids)?, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn ids(&self) -> &SampleIds {
        &self.ids
    }

    pub fn is_mapped(&self) -> bool {
        matches!(self.storage, Storage::Mapped(_))
    }

    pub fn data(&self) -> &[f32] {
        match &self.storage {
            Storage::Owned(v) => v,
            Storage::Mapped(m) => bytemuck::cast_slice(&m[HEADER_LEN..]),
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data()[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows with a NaN or infinite entry, as (row, first bad column).
    pub fn non_finite_rows(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .filter_map(|r| {
                self.row(r)
                    .iter()
                    .position(|v| !v.is_finite())
                    .map(|c| (r, c))
            })
            .collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        for r in 0..self.rows {
            if let Some(c) = self.row(r).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
        Ok(())
    }

    /// Concatenates rows of `self` and `other` into a new owned matrix.
    pub fn concat(&self, other: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if self.cols != other.cols {
            return Err(Error::DimMismatch {
                expected: self.cols,
                actual: other.cols,
                context: "concat",
            });
        }
        let mut data = Vec::with_capacity((self.rows + other.rows) * self.cols);
        data.extend_from_slice(self.data());
        data.extend_from_slice(other.data());
        let ids = SampleIds::new(self.ids.iter().chain(other.ids.iter()))?;
        EmbeddingMatrix::new(ids, self.cols, data)
    }
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Writes a bare LDIF tensor (no ids sidecar).
pub fn write_tensor(path: &Path, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::DimMismatch {
            expected: rows * cols,
            actual: data.len(),
            context: "tensor data length",
        });
    }
    let cols32 = u32::try_from(cols)
        .map_err(|_| Error::InvalidArgument(format!("{cols} columns exceed u32")))?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header = Header {
        rows: rows as u64,
        cols: cols32,
    };
    w.write_all(&header.encode()).map_err(io)?;
    for chunk in data.chunks(8192) {
        let mut buf = Vec::with_capacity(chunk.len() * 4);
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a bare LDIF tensor fully into memory.
pub fn read_tensor(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let io = |e| Error::io(path, e);
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(io)?
        .read_to_end(&mut bytes)
        .map_err(io)?;
    let header = Header::decode(&bytes, path)?;
    check_payload(&header, bytes.len() as u64, path)?;
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((header.rows as usize, header.cols as usize, data))
}

fn check_payload(header: &Header, file_len: u64, path: &Path) -> Result<()> {
    let expected = header.payload_len();
    let actual = file_len.saturating_sub(HEADER_LEN as u64);
    if actual != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Writes the matrix payload to `path` and its ids to `<path>.ids`.
pub fn write_matrix(path: &Path, matrix: &EmbeddingMatrix) -> Result<()> {
    matrix.check_finite()?;
    if let Some(dup) = matrix.ids.first_duplicate() {
        return Err(Error::Ids(format!("duplicate id {dup:?}")));
    }
    write_tensor(path, matrix.rows, matrix.cols, matrix.data())?;
    let ids = ids_path(path);
    let io = |e| Error::io(&ids, e);
    let mut w = BufWriter::new(File::create(&ids).map_err(io)?);
    for id in matrix.ids.iter() {
        w.write_all(id.as_bytes()).map_err(io)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReadOptions {
    /// Re-check finiteness and id uniqueness after opening.
    pub revalidate: bool,
}

pub fn read_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    read_matrix_with(path, ReadOptions::default())
}

/// Opens an LDIF matrix over a read-only mapping. Nothing beyond the header
/// and the ids sidecar is touched until rows are accessed.
pub fn read_matrix_with(path: &Path, opts: ReadOptions) -> Result<EmbeddingMatrix> {
    let io = |e| Error::io(path, e);
    let file = File::open(path).map_err(io)?;
    let file_len = file.metadata().map_err(io)?.len();
    // SAFETY: the mapping is read-only and matrices are never mutated after
    // load; concurrent external truncation of the file is not supported.
    let map = unsafe { Mmap::map(&file) }.map_err(io)?;
    let header = Header::decode(&map, path)?;
    check_payload(&header, file_len, path)?;

    let rows = usize::try_from(header.rows)
        .map_err(|_| Error::InvalidArgument("row count exceeds address space".into()))?;
    let cols = header.cols as usize;

    let ids_file = ids_path(path);
    let text = std::fs::read_to_string(&ids_file).map_err(|e| Error::io(&ids_file, e))?;
    let ids = SampleIds::parse_sidecar(text, &ids_file)?;
    if ids.len() != rows {
        return Err(Error::Ids(format!(
            "{} lists {} ids for {} rows",
            ids_file.display(),
            ids.len(),
            rows
        )));
    }

    let storage = if cfg!(target_endian = "little") {
        Storage::Mapped(map)
    } else {
        Storage::Owned(
            map[HEADER_LEN..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        )
    };
    let m = EmbeddingMatrix {
        rows,
        cols,
        storage,
        ids,
    };
    if opts.revalidate {
        m.check_finite()?;
        if let Some(dup) = m.ids.first_duplicate() {
            return Err(Error::Ids(format!("duplicate id {dup:?}")));
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairReport {
    pub dims_a: usize,
    pub dims_b: usize,
    pub dim_mismatch: bool,
    pub overlap_count: usize,
    pub non_finite_rows_a: Vec<usize>,
    pub non_finite_rows_b: Vec<usize>,
    pub fatal: Vec<String>,
    pub warnings: Vec<String>,
}

impl PairReport {
    pub fn is_ok(&self) -> bool {
        self.fatal.is_empty()
    }
}

/// Checks two matrices for joint use. Dimension mismatch and non-finite
/// rows are fatal; shared ids are a warning.
pub fn validate_pair(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> PairReport {
    let overlap = {
        let (small, large) = if a.rows <= b.rows { (a, b) } else { (b, a) };
        let set: HashSet<&str> = small.ids.iter().collect();
        large.ids.iter().filter(|id| set.contains(id)).count()
    };
    let nf_a: Vec<usize> = a.non_finite_rows().into_iter().map(|(r, _)| r).collect();
    let nf_b: Vec<usize> = b.non_finite_rows().into_iter().map(|(r, _)| r).collect();

    let mut fatal = Vec::new();
    let mut warnings = Vec::new();
    if a.cols != b.cols {
        fatal.push(format!("dimension mismatch: {} vs {}", a.cols, b.cols));
    }
    if !nf_a.is_empty() || !nf_b.is_empty() {
        fatal.push(format!(
            "non-finite rows: {} in first, {} in second",
            nf_a.len(),
            nf_b.len()
        ));
    }
    if overlap > 0 {
        warnings.push(format!("{overlap} ids appear in both matrices"));
    }
    PairReport {
        dims_a: a.cols,
        dims_b: b.cols,
        dim_mismatch: a.cols != b.cols,
        overlap_count: overlap,
        non_finite_rows_a: nf_a,
        non_finite_rows_b: nf_b,
        fatal,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(ids: &[&str], cols: usize, fill: impl Fn(usize, usize) -> f32) -> EmbeddingMatrix {
        let data = (0..ids.len() * cols).map(|i| fill(i / cols, i % cols)).collect();
        EmbeddingMatrix::new(SampleIds::new(ids).unwrap(), cols, data).unwrap()
    }

    #[test]
    fn zero_matrix_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.ldif");
        write_matrix(&path, &matrix(&["a", "b"], 3, |_, _| 0.0)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"LDIF");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0);
        assert_eq!(&bytes[6..8], &[0, 0]);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 20 + 24);
        assert!(bytes[20..].iter().all(|&b| b == 0));
        assert_eq!(std::fs::read_to_string(ids_path(&path)).unwrap(), "a\nb\n");
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ldif");
        let m = matrix(&["x", "y", "z"], 4, |r, c| (r as f32 - 1.3) * (c as f32 + 0.1) * 1e-7);
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        assert!(back.is_mapped());
        assert_eq!(back, m);
        assert_eq!(back.ids().get(2), "z");
    }

    #[test]
    fn nan_is_rejected_with_row() {
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let mut data = vec![0.5f32; 10 * 2];
        data[7 * 2 + 1] = f32::NAN;
        let err = EmbeddingMatrix::new(SampleIds::new(&ids).unwrap(), 2, data).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 7, col: 1 }), "{err}");
        assert!(err.to_string().contains("row 7"));
    }

    #[test]
    fn truncated_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ldif");
        write_matrix(&path, &matrix(&["a", "b"], 3, |_, _| 1.0)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        match read_matrix(&path).unwrap_err() {
            Error::Truncated {
                expected, actual, ..
            } => {
                assert_eq!(expected, 24);
                assert_eq!(actual, 23);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ldif");
        write_matrix(&path, &matrix(&["a"], 1, |_, _| 1.0)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 2;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::BadHeader { .. })));
        bytes[4] = 1;
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::BadHeader { .. })));
    }

    #[test]
    fn sidecar_count_must_match_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ldif");
        write_matrix(&path, &matrix(&["a", "b"], 1, |_, _| 1.0)).unwrap();
        std::fs::write(ids_path(&path), "a\n").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Ids(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = EmbeddingMatrix::new(SampleIds::new(["a", "a"]).unwrap(), 1, vec![0.0, 1.0]);
        assert!(matches!(err, Err(Error::Ids(_))));
    }

    #[test]
    fn revalidation_catches_tampered_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ldif");
        write_matrix(&path, &matrix(&["a", "b"], 2, |_, _| 1.0)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[HEADER_LEN + 8..HEADER_LEN + 12].copy_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_matrix(&path).is_ok());
        let err = read_matrix_with(&path, ReadOptions { revalidate: true }).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, col: 0 }));
    }

    #[test]
    fn validate_pair_cases() {
        let a = matrix(&["a", "b", "c", "d"], 512, |_, _| 0.1);
        let b = matrix(&["e", "f"], 512, |_, _| 0.1);
        let ok = validate_pair(&a, &b);
        assert!(ok.is_ok());
        assert_eq!(ok.overlap_count, 0);
        assert!(ok.warnings.is_empty());

        let c = matrix(&["e"], 768, |_, _| 0.1);
        let r = validate_pair(&a, &c);
        assert!(r.dim_mismatch);
        assert!(!r.is_ok());

        let d = matrix(&["a", "b", "c", "zz"], 512, |_, _| 0.1);
        let r = validate_pair(&a, &d);
        assert_eq!(r.overlap_count, 3);
        assert!(r.is_ok());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn validate_pair_is_symmetric() {
        let a = matrix(&["a", "b"], 4, |_, _| 0.1);
        let b = matrix(&["b", "c", "d"], 5, |_, _| 0.1);
        let ab = validate_pair(&a, &b);
        let ba = validate_pair(&b, &a);
        assert_eq!(ab.fatal.len(), ba.fatal.len());
        assert_eq!(ab.warnings.len(), ba.warnings.len());
        assert_eq!(ab.overlap_count, ba.overlap_count);
    }
}

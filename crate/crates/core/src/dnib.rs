//! DNIB1: the on-disk behavior matrix format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      5 bytes  "DNIB1"
//! n_records  u64
//! n_s        u32
//! n_cols     u32
//! columns    n_cols tagged ids: 0x00 + u32 unit id, or 0x01 + u32 len + UTF-8 hyp id
//! payload    n_records * n_s rows of n_cols f32, row-major
//! ```
//!
//! One row holds the values of every column at a single (record, symbol)
//! position. Values are stored as f32; higher-precision scalars are narrowed
//! on write and widened on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::block::BehaviorBlock;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 5] = b"DNIB1";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ColumnId {
    Unit(u32),
    Hyp(String),
}

impl std::fmt::Display for ColumnId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnId::Unit(u) => write!(f, "u{}", u),
            ColumnId::Hyp(h) => write!(f, "{}", h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub n_records: u64,
    pub n_s: u32,
    pub columns: Vec<ColumnId>,
}

impl Header {
    fn byte_len(&self) -> u64 {
        let mut len = 5 + 8 + 4 + 4;
        for c in &self.columns {
            len += match c {
                ColumnId::Unit(_) => 1 + 4,
                ColumnId::Hyp(h) => 1 + 4 + h.len() as u64,
            };
        }
        len
    }

    pub fn row_bytes(&self) -> u64 {
        self.columns.len() as u64 * 4
    }

    pub fn column_index(&self, id: &ColumnId) -> Option<usize> {
        self.columns.iter().position(|c| c == id)
    }
}

/// Writes a complete DNIB1 file. `columns` pairs each id with its values,
/// which must all have length `n_records * n_s`.
pub fn write_file<S: Scalar>(
    path: impl AsRef<Path>,
    n_records: u64,
    n_s: u32,
    columns: &[(ColumnId, Vec<S>)],
) -> Result<()> {
    let n_rows = (n_records * n_s as u64) as usize;
    for (id, vals) in columns {
        if vals.len() != n_rows {
            return Err(Error::Dimension(format!(
                "column {} has {} values, expected {}",
                id,
                vals.len(),
                n_rows
            )));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&n_records.to_le_bytes())?;
    w.write_all(&n_s.to_le_bytes())?;
    w.write_all(&(columns.len() as u32).to_le_bytes())?;
    for (id, _) in columns {
        match id {
            ColumnId::Unit(u) => {
                w.write_all(&[0x00])?;
                w.write_all(&u.to_le_bytes())?;
            }
            ColumnId::Hyp(h) => {
                w.write_all(&[0x01])?;
                w.write_all(&(h.len() as u32).to_le_bytes())?;
                w.write_all(h.as_bytes())?;
            }
        }
    }
    let mut row = Vec::with_capacity(columns.len() * 4);
    for r in 0..n_rows {
        row.clear();
        for (_, vals) in columns {
            row.extend_from_slice(&vals[r].to_f32_lossy().to_le_bytes());
        }
        w.write_all(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct DnibReader {
    file: BufReader<File>,
    header: Header,
    header_len: u64,
}

impl DnibReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 5];
        read_exact_or_truncated(&mut file, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let n_records = read_u64(&mut file)?;
        let n_s = read_u32(&mut file)?;
        let n_cols = read_u32(&mut file)?;
        let mut columns = Vec::with_capacity(n_cols as usize);
        for _ in 0..n_cols {
            let mut tag = [0u8; 1];
            read_exact_or_truncated(&mut file, &mut tag, "column tag")?;
            match tag[0] {
                0x00 => columns.push(ColumnId::Unit(read_u32(&mut file)?)),
                0x01 => {
                    let len = read_u32(&mut file)? as usize;
                    let mut buf = vec![0u8; len];
                    read_exact_or_truncated(&mut file, &mut buf, "hypothesis id")?;
                    let s = String::from_utf8(buf)
                        .map_err(|_| Error::Dimension("hypothesis id is not UTF-8".into()))?;
                    columns.push(ColumnId::Hyp(s));
                }
                t => return Err(Error::Dimension(format!("unknown column tag 0x{:02x}", t))),
            }
        }
        let header = Header { n_records, n_s, columns };
        let header_len = header.byte_len();
        let expected = header_len + n_records * n_s as u64 * header.row_bytes();
        let actual = file.get_ref().metadata()?.len();
        if actual < expected {
            return Err(Error::Truncated { expected, found: actual });
        }
        Ok(DnibReader { file, header, header_len })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    /// Reads the given columns for records `[start, end)`, returning one
    /// column of `(end - start) * n_s` values per requested id, in request
    /// order.
    pub fn read_records<S: Scalar>(&mut self, start: u64, end: u64, ids: &[ColumnId]) -> Result<BehaviorBlock<S>> {
        if start > end || end > self.header.n_records {
            return Err(Error::RecordRangeOutOfBounds {
                start: start as usize,
                end: end as usize,
                available: self.header.n_records as usize,
            });
        }
        let col_ix: Vec<usize> = ids
            .iter()
            .map(|id| {
                self.header
                    .column_index(id)
                    .ok_or_else(|| Error::Dimension(format!("column {} not present in file", id)))
            })
            .collect::<Result<_>>()?;
        let rows_per_record = self.header.n_s as u64;
        let n_rows = ((end - start) * rows_per_record) as usize;
        let row_bytes = self.header.row_bytes();
        let offset = self.header_len + start * rows_per_record * row_bytes;
        self.file.seek(SeekFrom::Start(offset))?;
        let mut raw = vec![0u8; n_rows * row_bytes as usize];
        read_exact_or_truncated(&mut self.file, &mut raw, "payload")?;
        let mut columns = vec![Vec::with_capacity(n_rows); ids.len()];
        for r in 0..n_rows {
            let row = &raw[r * row_bytes as usize..];
            for (out, &c) in columns.iter_mut().zip(&col_ix) {
                let b: [u8; 4] = row[c * 4..c * 4 + 4].try_into().unwrap();
                out.push(S::cast(f32::from_le_bytes(b)));
            }
        }
        Ok(BehaviorBlock::from_columns(columns))
    }

    /// Reads a set of non-contiguous records (original dataset indices) in
    /// the given order.
    pub fn read_scattered<S: Scalar>(&mut self, records: &[usize], ids: &[ColumnId]) -> Result<BehaviorBlock<S>> {
        let n_s = self.header.n_s as usize;
        let mut columns: Vec<Vec<S>> = vec![Vec::with_capacity(records.len() * n_s); ids.len()];
        for &r in records {
            let one: BehaviorBlock<S> = self.read_records(r as u64, r as u64 + 1, ids)?;
            for (acc, col) in columns.iter_mut().zip(&one.columns) {
                acc.extend_from_slice(col);
            }
        }
        Ok(BehaviorBlock::from_columns(columns))
    }
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Dimension(format!("file truncated while reading {}", what))
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, "u32")?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b, "u64")?;
    Ok(u64::from_le_bytes(b))
}

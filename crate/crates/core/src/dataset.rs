//! Symbol datasets: fixed-width matrices of alphabet indices.
//!
//! A dataset is an `n_d x n_s` matrix of symbols. Records are read from a
//! UTF-8 text file, one record per line, truncated or padded to `n_s` symbols.
//! The alphabet is inferred from the data (sorted by code point for
//! determinism) unless a sidecar alphabet file pins the index order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_PAD: char = '~';

/// FNV-1a 64-bit, used for content fingerprints and cache keys.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Combine two 64-bit values into one fingerprint.
pub fn fnv1a64_pair(a: u64, b: u64) -> u64 {
    let mut buf = [0u8; 16];
    buf[..8].copy_from_slice(&a.to_le_bytes());
    buf[8..].copy_from_slice(&b.to_le_bytes());
    fnv1a64(&buf)
}

#[derive(Debug, Clone)]
pub struct SymbolDataset {
    alphabet: Vec<char>,
    pad: char,
    pad_index: u32,
    n_s: usize,
    /// Row-major `n_d x n_s` matrix of alphabet indices.
    records: Vec<u32>,
    fingerprint: u64,
}

impl SymbolDataset {
    /// Builds a dataset from record strings, truncating/padding each to `n_s`.
    ///
    /// `alphabet` pins the symbol order when given; otherwise the alphabet is
    /// the sorted set of symbols occurring in the data, plus the pad.
    pub fn from_records(lines: &[String], n_s: usize, pad: char, alphabet: Option<Vec<char>>) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let alphabet = match alphabet {
            Some(mut a) => {
                if !a.contains(&pad) {
                    a.push(pad);
                }
                a
            }
            None => {
                let mut set: Vec<char> = lines.iter().flat_map(|l| l.chars()).collect();
                set.push(pad);
                set.sort_unstable();
                set.dedup();
                set
            }
        };
        let index_of = |c: char| alphabet.iter().position(|&a| a == c).map(|i| i as u32);
        let pad_index = index_of(pad).expect("pad in alphabet");

        let mut records = Vec::with_capacity(lines.len() * n_s);
        for (lineno, line) in lines.iter().enumerate() {
            let mut n = 0;
            for c in line.chars().take(n_s) {
                let idx = index_of(c).ok_or(Error::UnknownSymbol { symbol: c, line: lineno + 1 })?;
                records.push(idx);
                n += 1;
            }
            records.resize(records.len() + (n_s - n), pad_index);
        }
        Ok(Self::from_indices(alphabet, pad, n_s, records))
    }

    fn from_indices(alphabet: Vec<char>, pad: char, n_s: usize, records: Vec<u32>) -> Self {
        let pad_index = alphabet.iter().position(|&a| a == pad).expect("pad in alphabet") as u32;
        let mut bytes = Vec::with_capacity(records.len() * 4 + alphabet.len() * 4 + 16);
        for &c in &alphabet {
            bytes.extend_from_slice(&(c as u32).to_le_bytes());
        }
        bytes.extend_from_slice(&(pad as u32).to_le_bytes());
        bytes.extend_from_slice(&(n_s as u64).to_le_bytes());
        for &ix in &records {
            bytes.extend_from_slice(&ix.to_le_bytes());
        }
        let fingerprint = fnv1a64(&bytes);
        SymbolDataset { alphabet, pad, pad_index, n_s, records, fingerprint }
    }

    /// Loads a dataset from a text file, one record per line.
    ///
    /// When `alphabet_path` is given it must list one symbol per line and pins
    /// the index order; symbols outside it are an error.
    pub fn load(path: impl AsRef<Path>, n_s: usize, pad: char, alphabet_path: Option<&Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        let alphabet = match alphabet_path {
            Some(p) => Some(read_alphabet_file(p)?),
            None => None,
        };
        Self::from_records(&lines, n_s, pad, alphabet)
    }

    pub fn n_records(&self) -> usize {
        self.records.len() / self.n_s
    }

    pub fn n_symbols(&self) -> usize {
        self.n_s
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn pad(&self) -> char {
        self.pad
    }

    pub fn pad_index(&self) -> u32 {
        self.pad_index
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Alphabet indices of record `i`.
    pub fn record(&self, i: usize) -> &[u32] {
        &self.records[i * self.n_s..(i + 1) * self.n_s]
    }

    /// Record `i` as characters, including the pad suffix.
    pub fn record_chars(&self, i: usize) -> Vec<char> {
        self.record(i).iter().map(|&ix| self.alphabet[ix as usize]).collect()
    }

    /// Number of leading non-pad symbols of record `i` (the trailing pad run
    /// is not considered content).
    pub fn content_len(&self, i: usize) -> usize {
        let rec = self.record(i);
        let mut end = rec.len();
        while end > 0 && rec[end - 1] == self.pad_index {
            end -= 1;
        }
        end
    }

    /// A copy of this dataset with rows reordered by `order` (new row `i` is
    /// old row `order[i]`). The fingerprint reflects the new content order.
    pub fn reordered(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.n_records(), "order must cover all records");
        let mut records = Vec::with_capacity(self.records.len());
        for &r in order {
            records.extend_from_slice(self.record(r));
        }
        Self::from_indices(self.alphabet.clone(), self.pad, self.n_s, records)
    }

    /// Builds a one-record dataset sharing this dataset's alphabet, used for
    /// perturbation probes.
    pub fn single_record(&self, indices: Vec<u32>) -> Self {
        assert_eq!(indices.len(), self.n_s);
        Self::from_indices(self.alphabet.clone(), self.pad, self.n_s, indices)
    }
}

pub fn read_alphabet_file(path: &Path) -> Result<Vec<char>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        let mut chars = line.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => out.push(c),
            (None, _) => continue,
            _ => return Err(Error::Config(format!("alphabet line {:?} is not a single symbol", line))),
        }
    }
    if out.is_empty() {
        return Err(Error::Config("alphabet file is empty".into()));
    }
    Ok(out)
}

pub fn write_alphabet_file(path: &Path, alphabet: &[char]) -> Result<()> {
    let mut text = String::new();
    for &c in alphabet {
        text.push(c);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

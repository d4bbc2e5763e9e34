//! LRU cache for evaluated hypothesis behaviors.
//!
//! Entries are keyed by (record-stream fingerprint, hypothesis id, block
//! range). The stream fingerprint combines the dataset content hash with the
//! shuffle seed, so a (fingerprint, range) pair pins the exact record tuples
//! a block contains. Values are the unpermuted per-symbol behaviors plus the
//! per-record validity flags, so a hit never re-invokes the parser.
//!
//! Capacity is a byte budget; eviction is least-recently-used. With a spill
//! directory configured, entries are also written through as DNIB1 files and
//! can be reloaded after eviction or by a later process. Spilled values pass
//! through the format's f32 payload; in-memory hits are bit-exact.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::dataset::{fnv1a64, fnv1a64_pair};
use crate::dnib::{self, ColumnId, DnibReader};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub stream_fp: u64,
    pub hyp_id: String,
    pub start: usize,
    pub end: usize,
}

impl CacheKey {
    fn file_stem(&self) -> String {
        let h = fnv1a64_pair(
            fnv1a64_pair(self.stream_fp, fnv1a64(self.hyp_id.as_bytes())),
            fnv1a64_pair(self.start as u64, self.end as u64),
        );
        format!("{:016x}", h)
    }
}

/// One hypothesis column over one block, in stream record order.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedColumn<S> {
    pub values: Vec<S>,
    /// Per record: false when the behavior is a parse-failure placeholder.
    pub record_ok: Vec<bool>,
}

impl<S: Scalar> CachedColumn<S> {
    fn bytes(&self) -> usize {
        self.values.len() * std::mem::size_of::<S>() + self.record_ok.len() + 64
    }
}

#[derive(Debug, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub disk_hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

#[derive(Debug)]
struct Entry<S> {
    col: CachedColumn<S>,
    last_used: u64,
    bytes: usize,
}

#[derive(Debug)]
struct Inner<S> {
    map: HashMap<CacheKey, Entry<S>>,
    used_bytes: usize,
    tick: u64,
}

#[derive(Debug)]
pub struct BehaviorCache<S: Scalar> {
    inner: Mutex<Inner<S>>,
    budget_bytes: usize,
    spill_dir: Option<PathBuf>,
    hits: AtomicU64,
    disk_hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
}

impl<S: Scalar> BehaviorCache<S> {
    pub fn new(budget_bytes: usize, spill_dir: Option<PathBuf>) -> Result<Self> {
        if let Some(dir) = &spill_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(BehaviorCache {
            inner: Mutex::new(Inner { map: HashMap::new(), used_bytes: 0, tick: 0 }),
            budget_bytes,
            spill_dir,
            hits: AtomicU64::new(0),
            disk_hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
        })
    }

    /// A cache that stores nothing; every lookup misses.
    pub fn disabled() -> Self {
        Self::new(0, None).expect("no spill dir to create")
    }

    pub fn get(&self, key: &CacheKey) -> Option<CachedColumn<S>> {
        {
            let mut inner = self.inner.lock().unwrap();
            inner.tick += 1;
            let tick = inner.tick;
            if let Some(e) = inner.map.get_mut(key) {
                e.last_used = tick;
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Some(e.col.clone());
            }
        }
        if let Some(col) = self.load_spilled(key) {
            self.disk_hits.fetch_add(1, Ordering::Relaxed);
            self.insert_in_memory(key.clone(), col.clone());
            return Some(col);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        None
    }

    pub fn put(&self, key: CacheKey, col: CachedColumn<S>) {
        if let Some(dir) = &self.spill_dir {
            // Write-through; spill failures only cost future reloads.
            let _ = self.write_spill(dir, &key, &col);
        }
        self.insert_in_memory(key, col);
    }

    fn insert_in_memory(&self, key: CacheKey, col: CachedColumn<S>) {
        let bytes = col.bytes();
        if bytes > self.budget_bytes {
            return;
        }
        let mut inner = self.inner.lock().unwrap();
        inner.tick += 1;
        let tick = inner.tick;
        if let Some(old) = inner.map.insert(key, Entry { col, last_used: tick, bytes }) {
            inner.used_bytes -= old.bytes;
        }
        inner.used_bytes += bytes;
        while inner.used_bytes > self.budget_bytes {
            let victim = inner
                .map
                .iter()
                .min_by_key(|(_, e)| e.last_used)
                .map(|(k, _)| k.clone())
                .expect("over budget implies nonempty");
            let e = inner.map.remove(&victim).unwrap();
            inner.used_bytes -= e.bytes;
            self.evictions.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn spill_path(&self, key: &CacheKey) -> Option<PathBuf> {
        self.spill_dir.as_ref().map(|d| d.join(format!("{}.dnib", key.file_stem())))
    }

    fn write_spill(&self, _dir: &Path, key: &CacheKey, col: &CachedColumn<S>) -> Result<()> {
        let path = self.spill_path(key).expect("spill dir configured");
        let ok_col: Vec<S> = col.record_ok.iter().map(|&b| if b { S::one() } else { S::zero() }).collect();
        dnib::write_file(
            &path,
            col.record_ok.len() as u64,
            (col.values.len() / col.record_ok.len().max(1)) as u32,
            &[
                (ColumnId::Hyp(key.hyp_id.clone()), col.values.clone()),
                (ColumnId::Hyp("__ok".into()), expand_ok(&ok_col, col.values.len() / col.record_ok.len().max(1))),
            ],
        )
    }

    fn load_spilled(&self, key: &CacheKey) -> Option<CachedColumn<S>> {
        let path = self.spill_path(key)?;
        if !path.exists() {
            return None;
        }
        let mut reader = DnibReader::open(&path).ok()?;
        let n_records = reader.header().n_records;
        let ids = [ColumnId::Hyp(key.hyp_id.clone()), ColumnId::Hyp("__ok".into())];
        let block = reader.read_records::<S>(0, n_records, &ids).ok()?;
        let n_s = reader.header().n_s as usize;
        let record_ok = block.column(1).chunks(n_s).map(|c| c[0] != S::zero()).collect();
        Some(CachedColumn { values: block.column(0).to_vec(), record_ok })
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            disk_hits: self.disk_hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Repeats each per-record flag across the record's `n_s` rows so the spill
/// file keeps the one-row-per-symbol shape.
fn expand_ok<S: Scalar>(per_record: &[S], n_s: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(per_record.len() * n_s);
    for &v in per_record {
        out.extend(std::iter::repeat(v).take(n_s));
    }
    out
}

//! Blocked record streams and behavior matrices.
//!
//! Scoring consumes the dataset in blocks of `n_b` records. Record order is
//! shuffled once per stream (seeded), and each block additionally carries a
//! symbol-position permutation applied in memory to decorrelate adjacent
//! symbol tuples. Unit and hypothesis values for the same block share the
//! permutation so rows stay aligned.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::ops::Range;

use crate::dataset::{fnv1a64_pair, SymbolDataset};
use crate::scalar::Scalar;

/// Dense column-major behavior values for one block: `columns[c]` holds
/// `n_rows` values, one per (record, symbol) tuple in block order.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorBlock<S: Scalar> {
    pub n_rows: usize,
    pub columns: Vec<Vec<S>>,
}

impl<S: Scalar> BehaviorBlock<S> {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        BehaviorBlock { n_rows, columns: vec![vec![S::zero(); n_rows]; n_cols] }
    }

    pub fn from_columns(columns: Vec<Vec<S>>) -> Self {
        let n_rows = columns.first().map_or(0, |c| c.len());
        debug_assert!(columns.iter().all(|c| c.len() == n_rows));
        BehaviorBlock { n_rows, columns }
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, c: usize) -> &[S] {
        &self.columns[c]
    }

    /// Reorders rows in every column by `perm` (new row `i` is old row
    /// `perm[i]`).
    pub fn permute_rows(&mut self, perm: &[usize]) {
        debug_assert_eq!(perm.len(), self.n_rows);
        for col in &mut self.columns {
            let old = std::mem::take(col);
            *col = perm.iter().map(|&i| old[i]).collect();
        }
    }
}

/// One block of the shuffled record stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordBlock {
    /// Positions of this block within the shuffled stream; used as part of
    /// cache keys.
    pub range: Range<usize>,
    /// Original dataset row indices, in stream order.
    pub records: Vec<usize>,
    /// Row permutation over the block's `records.len() * n_s` symbol tuples,
    /// applied in memory after extraction.
    pub symbol_perm: Vec<usize>,
}

impl RecordBlock {
    pub fn n_records(&self) -> usize {
        self.records.len()
    }
}

/// Deterministic block plan for one pass over `dataset`.
///
/// Records are shuffled once with a ChaCha8 stream keyed by `seed`, then cut
/// into blocks of `n_b` (the final block may be short). Blocks partition the
/// record set exactly.
pub struct BlockPlan {
    order: Vec<usize>,
    n_b: usize,
    n_s: usize,
    seed: u64,
    stream_fingerprint: u64,
}

impl BlockPlan {
    pub fn new(dataset: &SymbolDataset, n_b: usize, seed: u64) -> Self {
        assert!(n_b > 0, "block size must be positive");
        let mut order: Vec<usize> = (0..dataset.n_records()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64_pair(seed, 0x5249_4646));
        order.shuffle(&mut rng);
        let stream_fingerprint = fnv1a64_pair(dataset.fingerprint(), seed);
        BlockPlan { order, n_b, n_s: dataset.n_symbols(), seed, stream_fingerprint }
    }

    pub fn n_blocks(&self) -> usize {
        self.order.len().div_ceil(self.n_b)
    }

    /// Fingerprint identifying the (dataset content, seed) pair; blocks of
    /// equal fingerprint and range hold identical record tuples.
    pub fn stream_fingerprint(&self) -> u64 {
        self.stream_fingerprint
    }

    pub fn block(&self, b: usize) -> RecordBlock {
        let start = b * self.n_b;
        let end = (start + self.n_b).min(self.order.len());
        assert!(start < end, "block index {} out of range", b);
        let records = self.order[start..end].to_vec();
        let n_rows = records.len() * self.n_s;
        let mut symbol_perm: Vec<usize> = (0..n_rows).collect();
        let key = fnv1a64_pair(fnv1a64_pair(self.seed, 0x505f_524d), b as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        symbol_perm.shuffle(&mut rng);
        RecordBlock { range: start..end, records, symbol_perm }
    }

    pub fn blocks(&self) -> impl Iterator<Item = RecordBlock> + '_ {
        (0..self.n_blocks()).map(|b| self.block(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize) -> SymbolDataset {
        let lines: Vec<String> = (0..n).map(|i| format!("{:03}", i % 1000)).collect();
        SymbolDataset::from_records(&lines, 3, '~', None).unwrap()
    }

    #[test]
    fn blocks_partition_records() {
        let ds = dataset(100);
        let plan = BlockPlan::new(&ds, 32, 7);
        assert_eq!(plan.n_blocks(), 4);
        let mut seen: Vec<usize> = plan.blocks().flat_map(|b| b.records).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_plan() {
        let ds = dataset(50);
        let a: Vec<_> = BlockPlan::new(&ds, 16, 3).blocks().collect();
        let b: Vec<_> = BlockPlan::new(&ds, 16, 3).blocks().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_truly_shuffles() {
        let ds = dataset(200);
        let a = BlockPlan::new(&ds, 200, 1).block(0);
        let b = BlockPlan::new(&ds, 200, 2).block(0);
        assert_ne!(a.records, b.records);
        assert_ne!(a.records, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn symbol_perm_is_a_permutation() {
        let ds = dataset(10);
        let plan = BlockPlan::new(&ds, 4, 9);
        for block in plan.blocks() {
            let mut p = block.symbol_perm.clone();
            assert_eq!(p.len(), block.n_records() * 3);
            p.sort_unstable();
            assert_eq!(p, (0..p.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn final_block_may_be_short() {
        let ds = dataset(10);
        let plan = BlockPlan::new(&ds, 4, 0);
        let sizes: Vec<usize> = plan.blocks().map(|b| b.n_records()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn permute_rows_applies_to_all_columns() {
        let mut block = BehaviorBlock::from_columns(vec![vec![1.0f64, 2.0, 3.0], vec![10.0, 20.0, 30.0]]);
        block.permute_rows(&[2, 0, 1]);
        assert_eq!(block.column(0), &[3.0, 1.0, 2.0]);
        assert_eq!(block.column(1), &[30.0, 10.0, 20.0]);
    }
}

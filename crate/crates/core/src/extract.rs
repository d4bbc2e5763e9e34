//! Unit-behavior extraction: file-backed, synthetic recurrent, and the
//! specialized-unit generator used for ground-truth benchmarks.
//!
//! Extraction is a pure function of (model spec, records, unit ids): the
//! synthetic extractors derive all randomness from the model seed, the
//! record index, and the unit id, so any subset of records or units can be
//! extracted in any order with identical results.

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::block::BehaviorBlock;
use crate::dataset::{fnv1a64_pair, SymbolDataset};
use crate::dnib::{ColumnId, DnibReader};
use crate::error::{Error, Result};
use crate::grammar::{Grammar, ParseMode};
use crate::hypothesis::{evaluate_one, HypothesisSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    /// Behaviors stored in a DNIB1 file with one `Unit` column per unit.
    File { path: PathBuf },
    /// Seeded Elman-style recurrence; see [`rnn_weights`].
    SyntheticRnn,
    /// Synthetic-rnn base with a subset of units blended toward a target
    /// hypothesis: `act = w*h + (1-w)*base + noise`.
    Specialized { s_units: Vec<u32>, w: f64, target_hyp: String, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model_id: String,
    pub kind: ModelKind,
    pub n_units: u32,
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::Config(format!("model {}: n_units must be positive", self.model_id)));
        }
        if let ModelKind::Specialized { s_units, w, sigma, .. } = &self.kind {
            if s_units.is_empty() {
                return Err(Error::Config(format!("model {}: empty specialized set", self.model_id)));
            }
            for &u in s_units {
                if u >= self.n_units {
                    return Err(Error::UnknownUnit { unit: u, n_units: self.n_units });
                }
            }
            if !(0.0..=1.0).contains(w) {
                return Err(Error::Config(format!("model {}: w={} outside [0, 1]", self.model_id, w)));
            }
            if *sigma < 0.0 {
                return Err(Error::Config(format!("model {}: negative noise sigma", self.model_id)));
            }
        }
        Ok(())
    }
}

pub trait Extractor<S: Scalar>: Send + Sync {
    fn n_units(&self) -> u32;

    /// One behavior column per requested unit, one row per (record, symbol)
    /// tuple, records in the given order.
    fn extract(&self, dataset: &SymbolDataset, records: &[usize], unit_ids: &[u32]) -> Result<BehaviorBlock<S>>;
}

fn check_units(n_units: u32, unit_ids: &[u32]) -> Result<()> {
    match unit_ids.iter().find(|&&u| u >= n_units) {
        Some(&u) => Err(Error::UnknownUnit { unit: u, n_units }),
        None => Ok(()),
    }
}

/// Reads stored behaviors from a DNIB1 file. Record indices address the
/// file's record axis directly, so the file must cover the whole dataset.
pub struct FileExtractor {
    path: PathBuf,
    n_units: u32,
}

impl FileExtractor {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let reader = DnibReader::open(&path)?;
        let n_units = reader
            .header()
            .columns
            .iter()
            .filter(|c| matches!(c, ColumnId::Unit(_)))
            .count() as u32;
        Ok(FileExtractor { path, n_units })
    }
}

impl<S: Scalar> Extractor<S> for FileExtractor {
    fn n_units(&self) -> u32 {
        self.n_units
    }

    fn extract(&self, dataset: &SymbolDataset, records: &[usize], unit_ids: &[u32]) -> Result<BehaviorBlock<S>> {
        check_units(self.n_units, unit_ids)?;
        let mut reader = DnibReader::open(&self.path)?;
        if reader.header().n_s as usize != dataset.n_symbols() {
            return Err(Error::Dimension(format!(
                "behavior file has n_s={}, dataset has n_s={}",
                reader.header().n_s,
                dataset.n_symbols()
            )));
        }
        let ids: Vec<ColumnId> = unit_ids.iter().map(|&u| ColumnId::Unit(u)).collect();
        reader.read_scattered(records, &ids)
    }
}

/// Weight matrices of the synthetic recurrence, drawn from
/// `Uniform(-a, a)` with `a = 1/sqrt(n_units + alphabet_len)`. Returns
/// `(w_x, w_h)` where `w_x` is `n_units x alphabet_len` (row-major) with the
/// pad column zeroed, and `w_h` is `n_units x n_units`.
pub fn rnn_weights(seed: u64, n_units: u32, alphabet_len: usize, pad_index: u32) -> (Vec<f64>, Vec<f64>) {
    let n = n_units as usize;
    let a = 1.0 / ((n + alphabet_len) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64_pair(seed, 0x524e_4e57));
    let mut w_x: Vec<f64> = (0..n * alphabet_len).map(|_| rng.gen_range(-a..a)).collect();
    let w_h: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-a..a)).collect();
    for row in 0..n {
        w_x[row * alphabet_len + pad_index as usize] = 0.0;
    }
    (w_x, w_h)
}

/// Deterministic stand-in for a trained recurrent model:
/// `h_t = tanh(W_x * onehot(s_t) + W_h * h_{t-1})`, `h_0 = 0`.
pub struct SyntheticRnn {
    seed: u64,
    n_units: u32,
}

impl SyntheticRnn {
    pub fn new(seed: u64, n_units: u32) -> Self {
        SyntheticRnn { seed, n_units }
    }

    /// All-unit activations for one record, row-major `n_s x n_units`.
    fn record_activations(&self, dataset: &SymbolDataset, rec: usize) -> Vec<f64> {
        let n = self.n_units as usize;
        let alphabet_len = dataset.alphabet().len();
        let (w_x, w_h) = rnn_weights(self.seed, self.n_units, alphabet_len, dataset.pad_index());
        let symbols = dataset.record(rec);
        let mut out = Vec::with_capacity(symbols.len() * n);
        let mut h = vec![0.0f64; n];
        let mut next = vec![0.0f64; n];
        for &sym in symbols {
            for u in 0..n {
                let mut z = w_x[u * alphabet_len + sym as usize];
                let row = &w_h[u * n..(u + 1) * n];
                for (wh, hv) in row.iter().zip(&h) {
                    z += wh * hv;
                }
                next[u] = z.tanh();
            }
            std::mem::swap(&mut h, &mut next);
            out.extend_from_slice(&h);
        }
        out
    }
}

impl<S: Scalar> Extractor<S> for SyntheticRnn {
    fn n_units(&self) -> u32 {
        self.n_units
    }

    fn extract(&self, dataset: &SymbolDataset, records: &[usize], unit_ids: &[u32]) -> Result<BehaviorBlock<S>> {
        check_units(self.n_units, unit_ids)?;
        let n = self.n_units as usize;
        let n_s = dataset.n_symbols();
        let mut columns: Vec<Vec<S>> = vec![Vec::with_capacity(records.len() * n_s); unit_ids.len()];
        for &rec in records {
            let acts = self.record_activations(dataset, rec);
            for (col, &u) in columns.iter_mut().zip(unit_ids) {
                for t in 0..n_s {
                    col.push(S::cast(acts[t * n + u as usize]));
                }
            }
        }
        Ok(BehaviorBlock::from_columns(columns))
    }
}

/// Blends selected units of a synthetic base model toward a target
/// hypothesis, simulating units that learned the hypothesized feature.
pub struct Specialized {
    base: SyntheticRnn,
    s_units: Vec<u32>,
    w: f64,
    sigma: f64,
    seed: u64,
    target: HypothesisSpec,
    grammar: Option<Arc<Grammar>>,
    parse_mode: ParseMode,
}

impl Specialized {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        seed: u64,
        n_units: u32,
        s_units: Vec<u32>,
        w: f64,
        sigma: f64,
        target: HypothesisSpec,
        grammar: Option<Arc<Grammar>>,
        parse_mode: ParseMode,
    ) -> Self {
        Specialized {
            base: SyntheticRnn::new(seed, n_units),
            s_units,
            w,
            sigma,
            seed,
            target,
            grammar,
            parse_mode,
        }
    }

    /// Per-(record, unit) noise stream, independent of which records or
    /// units a call requests.
    fn noise(&self, rec: usize, unit: u32, n_s: usize) -> Vec<f64> {
        if self.sigma == 0.0 {
            return vec![0.0; n_s];
        }
        let key = fnv1a64_pair(fnv1a64_pair(self.seed, rec as u64), 0x4e4f_4953_0000_0000 | unit as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let normal = Normal::new(0.0, self.sigma).expect("validated sigma");
        (0..n_s).map(|_| normal.sample(&mut rng)).collect()
    }
}

impl<S: Scalar> Extractor<S> for Specialized {
    fn n_units(&self) -> u32 {
        self.base.n_units
    }

    fn extract(&self, dataset: &SymbolDataset, records: &[usize], unit_ids: &[u32]) -> Result<BehaviorBlock<S>> {
        check_units(self.base.n_units, unit_ids)?;
        let n = self.base.n_units as usize;
        let n_s = dataset.n_symbols();
        let mut columns: Vec<Vec<S>> = vec![Vec::with_capacity(records.len() * n_s); unit_ids.len()];
        let any_special = unit_ids.iter().any(|u| self.s_units.contains(u));
        for &rec in records {
            let acts = self.base.record_activations(dataset, rec);
            let h: Option<Vec<f64>> = if any_special {
                let (vals, _ok) = evaluate_one::<f64>(
                    &self.target,
                    self.grammar.as_deref(),
                    self.parse_mode,
                    dataset,
                    rec,
                )?;
                Some(vals)
            } else {
                None
            };
            for (col, &u) in columns.iter_mut().zip(unit_ids) {
                if self.s_units.contains(&u) {
                    let hv = h.as_ref().expect("hypothesis evaluated for specialized units");
                    let noise = self.noise(rec, u, n_s);
                    for t in 0..n_s {
                        let base = acts[t * n + u as usize];
                        col.push(S::cast(self.w * hv[t] + (1.0 - self.w) * base + noise[t]));
                    }
                } else {
                    for t in 0..n_s {
                        col.push(S::cast(acts[t * n + u as usize]));
                    }
                }
            }
        }
        Ok(BehaviorBlock::from_columns(columns))
    }
}

/// Builds the extractor for a model spec. `target` must resolve the spec's
/// target hypothesis id for specialized models.
pub fn build_extractor<S: Scalar>(
    spec: &ModelSpec,
    target: Option<(HypothesisSpec, Option<Arc<Grammar>>, ParseMode)>,
) -> Result<Box<dyn Extractor<S>>> {
    spec.validate()?;
    match &spec.kind {
        ModelKind::File { path } => Ok(Box::new(FileExtractor::open(path)?)),
        ModelKind::SyntheticRnn => Ok(Box::new(SyntheticRnn::new(spec.seed, spec.n_units))),
        ModelKind::Specialized { s_units, w, target_hyp, sigma } => {
            let (hyp, grammar, mode) = target.ok_or_else(|| {
                Error::Config(format!("model {}: target hypothesis {} not bound", spec.model_id, target_hyp))
            })?;
            if hyp.hyp_id != *target_hyp {
                return Err(Error::Config(format!(
                    "model {}: bound hypothesis {} does not match target {}",
                    spec.model_id, hyp.hyp_id, target_hyp
                )));
            }
            Ok(Box::new(Specialized::new(spec.seed, spec.n_units, s_units.clone(), *w, *sigma, hyp, grammar, mode)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnib;
    use crate::hypothesis::{paren_detector_tsv, Fsm};
    use tempfile::tempdir;

    fn ds(lines: &[&str], n_s: usize) -> SymbolDataset {
        let lines: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        SymbolDataset::from_records(&lines, n_s, '~', None).unwrap()
    }

    fn paren_hyp() -> HypothesisSpec {
        let fsm = Arc::new(Fsm::from_tsv(&paren_detector_tsv(4)).unwrap());
        HypothesisSpec::fsm("h_paren", fsm, None)
    }

    #[test]
    fn rnn_same_seed_same_behaviors() {
        let dataset = ds(&["0(1)", "(2)0"], 4);
        let a = SyntheticRnn::new(9, 8);
        let b = SyntheticRnn::new(9, 8);
        let ba: BehaviorBlock<f64> = a.extract(&dataset, &[0, 1], &[0, 3, 7]).unwrap();
        let bb: BehaviorBlock<f64> = b.extract(&dataset, &[0, 1], &[0, 3, 7]).unwrap();
        assert_eq!(ba, bb);
        let c: BehaviorBlock<f64> = SyntheticRnn::new(10, 8).extract(&dataset, &[0, 1], &[0, 3, 7]).unwrap();
        assert_ne!(ba, c);
    }

    #[test]
    fn all_pad_record_is_all_zero() {
        let dataset = ds(&["", "ab"], 3);
        let rnn = SyntheticRnn::new(4, 6);
        let block: BehaviorBlock<f64> = rnn.extract(&dataset, &[0], &[0, 1, 2, 3, 4, 5]).unwrap();
        for col in &block.columns {
            assert!(col.iter().all(|&v| v == 0.0), "pad input must keep the zero fixed point");
        }
    }

    #[test]
    fn first_step_matches_direct_arithmetic() {
        let dataset = ds(&["b"], 1);
        let rnn = SyntheticRnn::new(77, 5);
        let block: BehaviorBlock<f64> = rnn.extract(&dataset, &[0], &[0, 1, 2, 3, 4]).unwrap();
        let alphabet_len = dataset.alphabet().len();
        let sym = dataset.record(0)[0] as usize;
        let (w_x, _) = rnn_weights(77, 5, alphabet_len, dataset.pad_index());
        for u in 0..5 {
            let want = w_x[u * alphabet_len + sym].tanh();
            assert!((block.column(u)[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn activations_bounded_by_tanh() {
        let dataset = ds(&["0123401234", "((4))"], 10);
        let rnn = SyntheticRnn::new(3, 16);
        let block: BehaviorBlock<f64> = rnn.extract(&dataset, &[0, 1], &(0..16).collect::<Vec<_>>()).unwrap();
        for col in &block.columns {
            assert!(col.iter().all(|&v| v.abs() < 1.0));
        }
    }

    #[test]
    fn unknown_unit_rejected() {
        let dataset = ds(&["ab"], 2);
        let rnn = SyntheticRnn::new(1, 16);
        let err = Extractor::<f64>::extract(&rnn, &dataset, &[0], &[99]).unwrap_err();
        assert!(matches!(err, Error::UnknownUnit { unit: 99, n_units: 16 }), "got {:?}", err);
    }

    #[test]
    fn file_extractor_round_trips() {
        let dir = tempdir().unwrap();
        let dataset = ds(&["0(1)", "(2)0", "0000"], 4);
        let rnn = SyntheticRnn::new(5, 3);
        let all: BehaviorBlock<f32> = rnn.extract(&dataset, &[0, 1, 2], &[0, 1, 2]).unwrap();
        let path = dir.path().join("m.dnib");
        let cols: Vec<(ColumnId, Vec<f32>)> =
            (0..3).map(|u| (ColumnId::Unit(u), all.column(u as usize).to_vec())).collect();
        dnib::write_file(&path, 3, 4, &cols).unwrap();
        let fx = FileExtractor::open(&path).unwrap();
        assert_eq!(Extractor::<f32>::n_units(&fx), 3);
        let got: BehaviorBlock<f32> = fx.extract(&dataset, &[2, 0], &[1]).unwrap();
        let want: Vec<f32> = all.column(1)[8..12].iter().chain(&all.column(1)[0..4]).copied().collect();
        assert_eq!(got.column(0), &want[..]);
    }

    #[test]
    fn specialized_w1_sigma0_equals_hypothesis() {
        let dataset = ds(&["0(1)(", "((4))"], 5);
        let sp = Specialized::new(3, 8, vec![2], 1.0, 0.0, paren_hyp(), None, ParseMode::Viterbi);
        let block: BehaviorBlock<f64> = sp.extract(&dataset, &[0, 1], &[2]).unwrap();
        let want: Vec<f64> = vec![0., 1., 0., 1., 1., 1., 1., 0., 1., 1.];
        assert_eq!(block.column(0), &want[..]);
    }

    #[test]
    fn specialized_w0_equals_base() {
        let dataset = ds(&["0(1)(", "((4))"], 5);
        let sp = Specialized::new(3, 8, vec![2], 0.0, 0.0, paren_hyp(), None, ParseMode::Viterbi);
        let base = SyntheticRnn::new(3, 8);
        let a: BehaviorBlock<f64> = sp.extract(&dataset, &[0, 1], &[2, 5]).unwrap();
        let b: BehaviorBlock<f64> = base.extract(&dataset, &[0, 1], &[2, 5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extraction_pure_under_subsetting() {
        let dataset = ds(&["0(1)(", "((4))", "01234"], 5);
        let sp = Specialized::new(3, 8, vec![1, 2], 0.5, 0.05, paren_hyp(), None, ParseMode::Viterbi);
        let full: BehaviorBlock<f64> = sp.extract(&dataset, &[0, 1, 2], &[0, 1, 2, 3]).unwrap();
        let sub: BehaviorBlock<f64> = sp.extract(&dataset, &[2, 1], &[2]).unwrap();
        let want: Vec<f64> = full.column(2)[10..15].iter().chain(&full.column(2)[5..10]).copied().collect();
        assert_eq!(sub.column(0), &want[..], "noise must not depend on the requested subset");
    }

    fn pearson_two_pass(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (&a, &b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn specialized_units_beat_base_units_on_correlation() {
        let g = Arc::new(crate::grammar::parse_grammar_file(&crate::grammar::nesting_grammar_text(4)).unwrap());
        let lines = crate::grammar::sample_many(&g, 17, 1000, 20).unwrap();
        let dataset = SymbolDataset::from_records(&lines, 20, '~', None).unwrap();
        let sp = Specialized::new(21, 8, vec![0, 1, 2, 3], 0.5, 0.05, paren_hyp(), None, ParseMode::Viterbi);
        let block: BehaviorBlock<f64> =
            sp.extract(&dataset, &(0..1000).collect::<Vec<_>>(), &(0..8).collect::<Vec<_>>()).unwrap();
        let hyp: Vec<f64> = (0..1000)
            .flat_map(|r| evaluate_one::<f64>(&paren_hyp(), None, ParseMode::Viterbi, &dataset, r).unwrap().0)
            .collect();
        let r_special = pearson_two_pass(block.column(0), &hyp).abs();
        let r_base = pearson_two_pass(block.column(6), &hyp).abs();
        assert!(
            r_special > r_base + 0.2,
            "specialized r={} should clearly beat base r={}",
            r_special,
            r_base
        );
    }

    #[test]
    fn pearson_monotone_in_w_without_noise() {
        let g = Arc::new(crate::grammar::parse_grammar_file(&crate::grammar::nesting_grammar_text(4)).unwrap());
        let lines = crate::grammar::sample_many(&g, 31, 300, 16).unwrap();
        let dataset = SymbolDataset::from_records(&lines, 16, '~', None).unwrap();
        let records: Vec<usize> = (0..300).collect();
        let hyp: Vec<f64> = records
            .iter()
            .flat_map(|&r| evaluate_one::<f64>(&paren_hyp(), None, ParseMode::Viterbi, &dataset, r).unwrap().0)
            .collect();
        let mut last = -1.0;
        for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let sp = Specialized::new(8, 4, vec![0], w, 0.0, paren_hyp(), None, ParseMode::Viterbi);
            let block: BehaviorBlock<f64> = sp.extract(&dataset, &records, &[0]).unwrap();
            let r = pearson_two_pass(block.column(0), &hyp);
            assert!(r >= last - 1e-12, "w={}: r={} dropped below {}", w, r, last);
            last = r;
        }
        assert!((last - 1.0).abs() < 1e-12, "w=1 must correlate perfectly");
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad_unit = ModelSpec {
            model_id: "m".into(),
            kind: ModelKind::Specialized { s_units: vec![9], w: 0.5, target_hyp: "h".into(), sigma: 0.0 },
            n_units: 4,
            seed: 0,
        };
        assert!(bad_unit.validate().is_err());
        let bad_w = ModelSpec {
            model_id: "m".into(),
            kind: ModelKind::Specialized { s_units: vec![0], w: 1.5, target_hyp: "h".into(), sigma: 0.0 },
            n_units: 4,
            seed: 0,
        };
        assert!(bad_w.validate().is_err());
    }
}

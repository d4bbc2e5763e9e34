//! Hypothesis functions and their evaluation into behavior columns.
//!
//! A hypothesis maps a record to one value per symbol position. Kinds:
//! keyword indicators, parse-tree features (which need a grammar), FSM state
//! labels, and columns of an external DNIB1 file. Pad positions always
//! evaluate to 0. Tree hypotheses over an unparseable record evaluate to all
//! zeros with the record's validity flag cleared.

pub mod cache;
pub mod fsm;
mod manifest;

pub use cache::{BehaviorCache, CacheKey, CachedColumn};
pub use fsm::{paren_detector_tsv, Fsm};
pub use manifest::load_manifest;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::block::RecordBlock;
use crate::dataset::SymbolDataset;
use crate::dnib::{ColumnId, DnibReader};
use crate::error::{Error, Result};
use crate::grammar::{parse_record, Grammar, ParseMode, ParseTree, TreeNode};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Binary,
    Integer,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeMode {
    /// 1 at every position inside a matching node's span.
    Time,
    /// 1 at the first and last position of a matching node's span.
    Signal,
    /// Count of matching nodes covering the position.
    Depth,
}

#[derive(Debug, Clone)]
pub enum HypothesisKind {
    Keyword { keyword: String },
    Tree { node_type: String, mode: TreeMode },
    Fsm { fsm: Arc<Fsm>, state: Option<String> },
    ExternalFile { path: PathBuf, column: String },
}

#[derive(Debug, Clone)]
pub struct HypothesisSpec {
    pub hyp_id: String,
    pub kind: HypothesisKind,
    pub output_kind: OutputKind,
}

impl HypothesisSpec {
    pub fn keyword(hyp_id: impl Into<String>, keyword: impl Into<String>) -> Self {
        HypothesisSpec {
            hyp_id: hyp_id.into(),
            kind: HypothesisKind::Keyword { keyword: keyword.into() },
            output_kind: OutputKind::Binary,
        }
    }

    pub fn tree(hyp_id: impl Into<String>, node_type: impl Into<String>, mode: TreeMode) -> Self {
        let output_kind = match mode {
            TreeMode::Time | TreeMode::Signal => OutputKind::Binary,
            TreeMode::Depth => OutputKind::Integer,
        };
        HypothesisSpec {
            hyp_id: hyp_id.into(),
            kind: HypothesisKind::Tree { node_type: node_type.into(), mode },
            output_kind,
        }
    }

    pub fn fsm(hyp_id: impl Into<String>, fsm: Arc<Fsm>, state: Option<String>) -> Self {
        let output_kind = if state.is_some() || fsm.labels_binary() {
            OutputKind::Binary
        } else {
            OutputKind::Real
        };
        HypothesisSpec { hyp_id: hyp_id.into(), kind: HypothesisKind::Fsm { fsm, state }, output_kind }
    }

    pub fn external(
        hyp_id: impl Into<String>,
        path: impl Into<PathBuf>,
        column: impl Into<String>,
        output_kind: OutputKind,
    ) -> Self {
        HypothesisSpec {
            hyp_id: hyp_id.into(),
            kind: HypothesisKind::ExternalFile { path: path.into(), column: column.into() },
            output_kind,
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Hypothesis { hyp_id: self.hyp_id.clone(), message: message.into() }
    }
}

/// Evaluates hypothesis sets block-by-block with caching. All tree
/// hypotheses in a set share one parse per record; the number of parser
/// invocations is exposed for instrumentation.
#[derive(Debug)]
pub struct HypothesisEvaluator<S: Scalar> {
    specs: Vec<HypothesisSpec>,
    grammar: Option<Arc<Grammar>>,
    parse_mode: ParseMode,
    cache: Arc<BehaviorCache<S>>,
    parse_count: AtomicU64,
    /// Resolved per-spec lookups (indices into grammar / fsm states).
    tree_nt: Vec<Option<usize>>,
    fsm_state: Vec<Option<usize>>,
}

impl<S: Scalar> HypothesisEvaluator<S> {
    pub fn new(
        specs: Vec<HypothesisSpec>,
        grammar: Option<Arc<Grammar>>,
        parse_mode: ParseMode,
        cache: Arc<BehaviorCache<S>>,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for s in &specs {
            if !seen.insert(s.hyp_id.clone()) {
                return Err(Error::DuplicateId(format!("hypothesis id {}", s.hyp_id)));
            }
        }
        let mut tree_nt = vec![None; specs.len()];
        let mut fsm_state = vec![None; specs.len()];
        for (i, s) in specs.iter().enumerate() {
            match &s.kind {
                HypothesisKind::Keyword { keyword } => {
                    if keyword.is_empty() {
                        return Err(s.err("keyword must be non-empty"));
                    }
                }
                HypothesisKind::Tree { node_type, .. } => {
                    let g = grammar.as_ref().ok_or_else(|| s.err("tree hypothesis requires a grammar"))?;
                    let nt = g
                        .nonterminal_index(node_type)
                        .ok_or_else(|| s.err(format!("unknown node type {:?}", node_type)))?;
                    tree_nt[i] = Some(nt);
                }
                HypothesisKind::Fsm { fsm, state } => {
                    if let Some(name) = state {
                        let ix = fsm
                            .state_index(name)
                            .ok_or_else(|| s.err(format!("unknown fsm state {:?}", name)))?;
                        fsm_state[i] = Some(ix);
                    }
                }
                HypothesisKind::ExternalFile { .. } => {}
            }
        }
        Ok(HypothesisEvaluator {
            specs,
            grammar,
            parse_mode,
            cache,
            parse_count: AtomicU64::new(0),
            tree_nt,
            fsm_state,
        })
    }

    pub fn specs(&self) -> &[HypothesisSpec] {
        &self.specs
    }

    pub fn spec(&self, hyp_id: &str) -> Option<&HypothesisSpec> {
        self.specs.iter().find(|s| s.hyp_id == hyp_id)
    }

    pub fn spec_index(&self, hyp_id: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.hyp_id == hyp_id)
    }

    pub fn grammar(&self) -> Option<&Arc<Grammar>> {
        self.grammar.as_ref()
    }

    pub fn parse_mode(&self) -> ParseMode {
        self.parse_mode
    }

    pub fn cache(&self) -> &Arc<BehaviorCache<S>> {
        &self.cache
    }

    /// Total parser invocations since construction.
    pub fn parse_count(&self) -> u64 {
        self.parse_count.load(Ordering::Relaxed)
    }

    /// Evaluates every hypothesis over a block, serving from the cache where
    /// possible. Columns are returned in spec order, rows in block record
    /// order (one row per symbol), before any symbol-wise shuffle.
    pub fn evaluate_block(
        &self,
        dataset: &SymbolDataset,
        block: &RecordBlock,
        stream_fp: u64,
    ) -> Result<Vec<CachedColumn<S>>> {
        let all: Vec<usize> = (0..self.specs.len()).collect();
        self.evaluate_block_subset(dataset, block, stream_fp, &all)
            .into_iter()
            .collect()
    }

    /// Like [`Self::evaluate_block`] but restricted to the given spec
    /// indices, with per-hypothesis error capture so one failing hypothesis
    /// does not block the rest. Results parallel `spec_ixs`.
    pub fn evaluate_block_subset(
        &self,
        dataset: &SymbolDataset,
        block: &RecordBlock,
        stream_fp: u64,
        spec_ixs: &[usize],
    ) -> Vec<Result<CachedColumn<S>>> {
        let mut out: Vec<Option<Result<CachedColumn<S>>>> = Vec::with_capacity(spec_ixs.len());
        let mut missing: Vec<usize> = Vec::new();
        for (slot, &i) in spec_ixs.iter().enumerate() {
            let key = self.key_for(&self.specs[i], block, stream_fp);
            match self.cache.get(&key) {
                Some(col) => out.push(Some(Ok(col))),
                None => {
                    out.push(None);
                    missing.push(slot);
                }
            }
        }
        if !missing.is_empty() {
            let missing_specs: Vec<usize> = missing.iter().map(|&s| spec_ixs[s]).collect();
            let computed = self.compute_each(dataset, &block.records, &missing_specs);
            for (&slot, col) in missing.iter().zip(computed) {
                if let Ok(col) = &col {
                    let key = self.key_for(&self.specs[spec_ixs[slot]], block, stream_fp);
                    self.cache.put(key, col.clone());
                }
                out[slot] = Some(col);
            }
        }
        out.into_iter().map(|c| c.expect("all columns filled")).collect()
    }

    /// Cache-bypassing evaluation over explicit record indices.
    pub fn evaluate_records(&self, dataset: &SymbolDataset, records: &[usize]) -> Result<Vec<CachedColumn<S>>> {
        let all: Vec<usize> = (0..self.specs.len()).collect();
        self.compute(dataset, records, &all)
    }

    fn key_for(&self, spec: &HypothesisSpec, block: &RecordBlock, stream_fp: u64) -> CacheKey {
        CacheKey { stream_fp, hyp_id: spec.hyp_id.clone(), start: block.range.start, end: block.range.end }
    }

    fn compute(
        &self,
        dataset: &SymbolDataset,
        records: &[usize],
        spec_ixs: &[usize],
    ) -> Result<Vec<CachedColumn<S>>> {
        self.compute_each(dataset, records, spec_ixs).into_iter().collect()
    }

    fn compute_each(
        &self,
        dataset: &SymbolDataset,
        records: &[usize],
        spec_ixs: &[usize],
    ) -> Vec<Result<CachedColumn<S>>> {
        // One parse per record shared by every tree hypothesis in the batch.
        let needs_trees = spec_ixs
            .iter()
            .any(|&i| matches!(self.specs[i].kind, HypothesisKind::Tree { .. }));
        let trees: Vec<Option<ParseTree>> = if needs_trees {
            let g = self.grammar.as_ref().expect("validated at construction");
            records
                .iter()
                .map(|&r| {
                    self.parse_count.fetch_add(1, Ordering::Relaxed);
                    parse_record(g, dataset, r, self.parse_mode)
                })
                .collect()
        } else {
            Vec::new()
        };
        spec_ixs
            .iter()
            .map(|&i| self.compute_one(i, dataset, records, needs_trees.then_some(&trees)))
            .collect()
    }

    fn compute_one(
        &self,
        i: usize,
        dataset: &SymbolDataset,
        records: &[usize],
        trees: Option<&Vec<Option<ParseTree>>>,
    ) -> Result<CachedColumn<S>> {
        let n_s = dataset.n_symbols();
        let spec = &self.specs[i];
        let mut values: Vec<S> = Vec::with_capacity(records.len() * n_s);
        let mut record_ok: Vec<bool> = Vec::with_capacity(records.len());
        match &spec.kind {
            HypothesisKind::ExternalFile { path, column } => {
                let mut reader = DnibReader::open(path)?;
                if reader.header().n_s as usize != n_s {
                    return Err(spec.err(format!(
                        "behavior file has n_s={}, dataset has n_s={}",
                        reader.header().n_s,
                        n_s
                    )));
                }
                let id = ColumnId::Hyp(column.clone());
                if reader.header().column_index(&id).is_none() {
                    return Err(spec.err(format!("behavior file has no column {:?}", column)));
                }
                let blk = reader.read_scattered::<S>(records, &[id])?;
                values = blk.columns.into_iter().next().unwrap();
                record_ok = vec![true; records.len()];
            }
            _ => {
                for (ri, &r) in records.iter().enumerate() {
                    let tree = trees.and_then(|t| t.get(ri)).and_then(|t| t.as_ref());
                    let (vals, ok) = self.eval_one_record(i, dataset, r, tree)?;
                    values.extend(vals);
                    record_ok.push(ok);
                }
            }
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(spec.err(format!("non-finite behavior value {}", bad)));
        }
        if spec.output_kind == OutputKind::Binary
            && values.iter().any(|&v| v != S::zero() && v != S::one())
        {
            return Err(Error::NonBinaryHypothesis { hyp_id: spec.hyp_id.clone() });
        }
        Ok(CachedColumn { values, record_ok })
    }

    fn eval_one_record(
        &self,
        spec_ix: usize,
        dataset: &SymbolDataset,
        rec: usize,
        tree: Option<&ParseTree>,
    ) -> Result<(Vec<S>, bool)> {
        let spec = &self.specs[spec_ix];
        let n_s = dataset.n_symbols();
        let content_len = dataset.content_len(rec);
        match &spec.kind {
            HypothesisKind::Keyword { keyword } => {
                let chars = dataset.record_chars(rec);
                Ok((keyword_behavior(&chars[..content_len], keyword, n_s), true))
            }
            HypothesisKind::Tree { mode, .. } => {
                let nt = self.tree_nt[spec_ix].expect("resolved at construction");
                match tree {
                    Some(t) => Ok((tree_behavior(t, nt, *mode, n_s), true)),
                    None => Ok((vec![S::zero(); n_s], false)),
                }
            }
            HypothesisKind::Fsm { fsm, .. } => {
                let chars = dataset.record_chars(rec);
                let labels = fsm
                    .run(&chars[..content_len], self.fsm_state[spec_ix])
                    .map_err(|e| spec.err(e.to_string()))?;
                let mut vals: Vec<S> = labels.into_iter().map(S::cast).collect();
                vals.resize(n_s, S::zero());
                Ok((vals, true))
            }
            HypothesisKind::ExternalFile { .. } => unreachable!("handled batchwise"),
        }
    }
}

/// Evaluates one hypothesis on one record of an arbitrary dataset (used for
/// perturbation probes). External-file hypotheses cannot be re-evaluated on
/// synthesized records and are rejected.
pub fn evaluate_one<S: Scalar>(
    spec: &HypothesisSpec,
    grammar: Option<&Grammar>,
    parse_mode: ParseMode,
    dataset: &SymbolDataset,
    rec: usize,
) -> Result<(Vec<S>, bool)> {
    let n_s = dataset.n_symbols();
    let content_len = dataset.content_len(rec);
    match &spec.kind {
        HypothesisKind::Keyword { keyword } => {
            let chars = dataset.record_chars(rec);
            Ok((keyword_behavior(&chars[..content_len], keyword, n_s), true))
        }
        HypothesisKind::Tree { node_type, mode } => {
            let g = grammar.ok_or_else(|| spec.err("tree hypothesis requires a grammar"))?;
            let nt = g
                .nonterminal_index(node_type)
                .ok_or_else(|| spec.err(format!("unknown node type {:?}", node_type)))?;
            match parse_record(g, dataset, rec, parse_mode) {
                Some(t) => Ok((tree_behavior(&t, nt, *mode, n_s), true)),
                None => Ok((vec![S::zero(); n_s], false)),
            }
        }
        HypothesisKind::Fsm { fsm, state } => {
            let indicator = match state {
                Some(name) => {
                    Some(fsm.state_index(name).ok_or_else(|| spec.err(format!("unknown fsm state {:?}", name)))?)
                }
                None => None,
            };
            let chars = dataset.record_chars(rec);
            let labels = fsm.run(&chars[..content_len], indicator).map_err(|e| spec.err(e.to_string()))?;
            let mut vals: Vec<S> = labels.into_iter().map(S::cast).collect();
            vals.resize(n_s, S::zero());
            Ok((vals, true))
        }
        HypothesisKind::ExternalFile { .. } => {
            Err(spec.err("external-file hypotheses cannot be evaluated on synthesized records"))
        }
    }
}

fn keyword_behavior<S: Scalar>(content: &[char], keyword: &str, n_s: usize) -> Vec<S> {
    let kw: Vec<char> = keyword.chars().collect();
    let mut out = vec![S::zero(); n_s];
    if kw.is_empty() || content.len() < kw.len() {
        return out;
    }
    for start in 0..=(content.len() - kw.len()) {
        if content[start..start + kw.len()] == kw[..] {
            for v in &mut out[start..start + kw.len()] {
                *v = S::one();
            }
        }
    }
    out
}

fn tree_behavior<S: Scalar>(tree: &ParseTree, nt: usize, mode: TreeMode, n_s: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n_s];
    for node in &tree.nodes {
        let (s, e) = match node {
            TreeNode::Rule { nt: x, span, .. } if *x == nt => *span,
            _ => continue,
        };
        match mode {
            TreeMode::Time => {
                for v in &mut out[s..e] {
                    *v = S::one();
                }
            }
            TreeMode::Signal => {
                if e > s {
                    out[s] = S::one();
                    out[e - 1] = S::one();
                }
            }
            TreeMode::Depth => {
                for v in &mut out[s..e] {
                    *v += S::one();
                }
            }
        }
    }
    out
}

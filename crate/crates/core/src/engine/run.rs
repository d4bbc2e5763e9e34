//! The run loop shared by all strategies.
//!
//! A run walks the block plan, prepares each block (hypothesis columns plus
//! unit behaviors, both under the block's symbol permutation), and feeds the
//! prepared columns to every live scoring task. Strategies differ only in
//! what gets prepared (lazy vs materialized), whether converged states stop
//! consuming data, and whether logreg outputs share one model.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::block::{BlockPlan, RecordBlock};
use crate::dataset::SymbolDataset;
use crate::error::{Error, Result};
use crate::hypothesis::{HypothesisEvaluator, OutputKind};
use crate::measures::{LogregHypScore, LogregState, MeasureKind, PairState};
use crate::scalar::Scalar;

use super::{AffinityResult, EngineConfig, ExtractorMap, InspectionPlan, TaskStatus};

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunStats {
    pub blocks_read: u64,
    pub records_read: u64,
    /// Symbol tuples read, i.e. records_read * n_s.
    pub rows_read: u64,
    pub unit_extract_seconds: f64,
    pub hyp_extract_seconds: f64,
    pub inspect_seconds: f64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub results: Vec<AffinityResult>,
    pub stats: RunStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub strategy: super::Strategy,
    pub phase: &'static str,
    pub seconds: f64,
    pub blocks_read: u64,
}

/// One streaming (unit, hypothesis) estimate. Frozen pairs have converged
/// and stop consuming rows under early-stopping strategies.
struct PairUnit<S: Scalar> {
    unit_id: u32,
    state: PairState<S>,
    frozen: bool,
}

struct IndepTask<S: Scalar> {
    group_ix: usize,
    measure_ix: usize,
    hyp_ix: usize,
    /// Evaluator spec index of the hypothesis.
    spec_ix: usize,
    pairs: Vec<PairUnit<S>>,
    error: Option<String>,
    done: bool,
}

struct JointTask<S: Scalar> {
    group_ix: usize,
    measure_ix: usize,
    /// Plan hypothesis indices covered by this model.
    hyp_ixs: Vec<usize>,
    /// Evaluator spec indices, parallel to `hyp_ixs`.
    spec_ixs: Vec<usize>,
    state: LogregState<S>,
    error: Option<String>,
    done: bool,
}

struct TaskSet<S: Scalar> {
    indep: Vec<IndepTask<S>>,
    joints: Vec<JointTask<S>>,
    /// (group, measure, hyp) -> joints index.
    joint_of: BTreeMap<(usize, usize, usize), usize>,
    /// Joint cells rejected before the run started (non-binary outputs).
    joint_errors: BTreeMap<(usize, usize, usize), String>,
}

fn build_tasks<S: Scalar>(
    plan: &InspectionPlan,
    evaluator: &HypothesisEvaluator<S>,
    config: &EngineConfig,
) -> Result<TaskSet<S>> {
    let mut spec_ix = Vec::with_capacity(plan.hypotheses.len());
    for h in &plan.hypotheses {
        spec_ix.push(evaluator.spec_index(&h.hyp_id).ok_or_else(|| {
            Error::Config(format!("hypothesis {} not registered with the evaluator", h.hyp_id))
        })?);
    }
    let mut tasks = TaskSet {
        indep: Vec::new(),
        joints: Vec::new(),
        joint_of: BTreeMap::new(),
        joint_errors: BTreeMap::new(),
    };
    for (m, measure) in plan.measures.iter().enumerate() {
        if measure.kind.is_joint() {
            for (g, group) in plan.groups.iter().enumerate() {
                let mut binary: Vec<usize> = Vec::new();
                for (h, hyp) in plan.hypotheses.iter().enumerate() {
                    if hyp.output_kind == OutputKind::Binary {
                        binary.push(h);
                    } else {
                        let msg = Error::NonBinaryHypothesis { hyp_id: hyp.hyp_id.clone() };
                        tasks.joint_errors.insert((g, m, h), msg.to_string());
                    }
                }
                let make = |hyp_ixs: Vec<usize>| JointTask {
                    group_ix: g,
                    measure_ix: m,
                    spec_ixs: hyp_ixs.iter().map(|&h| spec_ix[h]).collect(),
                    state: LogregState::new(
                        group.unit_ids.len(),
                        hyp_ixs.iter().map(|&h| plan.hypotheses[h].hyp_id.clone()).collect(),
                        measure.logreg.clone(),
                    ),
                    hyp_ixs,
                    error: None,
                    done: false,
                };
                if config.strategy.merges_models() {
                    if !binary.is_empty() {
                        let ix = tasks.joints.len();
                        for &h in &binary {
                            tasks.joint_of.insert((g, m, h), ix);
                        }
                        tasks.joints.push(make(binary));
                    }
                } else {
                    for h in binary {
                        tasks.joint_of.insert((g, m, h), tasks.joints.len());
                        tasks.joints.push(make(vec![h]));
                    }
                }
            }
        } else {
            let requires_binary = measure.kind != MeasureKind::Pearson;
            for (g, group) in plan.groups.iter().enumerate() {
                for (h, hyp) in plan.hypotheses.iter().enumerate() {
                    let error = (requires_binary && hyp.output_kind != OutputKind::Binary)
                        .then(|| Error::NonBinaryHypothesis { hyp_id: hyp.hyp_id.clone() }.to_string());
                    let pairs = if error.is_none() {
                        group
                            .unit_ids
                            .iter()
                            .map(|&u| {
                                Ok(PairUnit { unit_id: u, state: PairState::new(measure)?, frozen: false })
                            })
                            .collect::<Result<Vec<_>>>()?
                    } else {
                        Vec::new()
                    };
                    tasks.indep.push(IndepTask {
                        group_ix: g,
                        measure_ix: m,
                        hyp_ix: h,
                        spec_ix: spec_ix[h],
                        done: error.is_some(),
                        error,
                        pairs,
                    });
                }
            }
        }
    }
    Ok(tasks)
}

fn all_done<S: Scalar>(tasks: &TaskSet<S>) -> bool {
    tasks.indep.iter().all(|t| t.done) && tasks.joints.iter().all(|t| t.done)
}

/// What the live tasks still consume: evaluator spec indices plus unit ids
/// per model. Frozen pairs no longer pin their unit down.
#[derive(Debug, Default)]
struct Needed {
    spec_ixs: Vec<usize>,
    units: BTreeMap<String, Vec<u32>>,
}

fn needed_now<S: Scalar>(plan: &InspectionPlan, tasks: &TaskSet<S>) -> Needed {
    let mut specs = BTreeSet::new();
    let mut units: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    for t in &tasks.indep {
        if t.done {
            continue;
        }
        specs.insert(t.spec_ix);
        let set = units.entry(plan.groups[t.group_ix].model_id.clone()).or_default();
        for p in &t.pairs {
            if !p.frozen {
                set.insert(p.unit_id);
            }
        }
    }
    for t in &tasks.joints {
        if t.done {
            continue;
        }
        specs.extend(t.spec_ixs.iter().copied());
        let g = &plan.groups[t.group_ix];
        units.entry(g.model_id.clone()).or_default().extend(g.unit_ids.iter().copied());
    }
    Needed {
        spec_ixs: specs.into_iter().collect(),
        units: units.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect(),
    }
}

/// One hypothesis column ready to feed: symbol-permuted values, plus an
/// optional keep mask when unparseable records are being skipped.
struct PreparedCol<S> {
    values: Vec<S>,
    keep: Option<Vec<bool>>,
}

struct ModelCols<S> {
    unit_ix: BTreeMap<u32, usize>,
    cols: Vec<Vec<S>>,
}

/// Everything extracted for one block, with per-hypothesis and per-model
/// errors captured as strings so they poison only the tasks that use them.
struct BlockData<S: Scalar> {
    hyp_cols: Vec<Option<std::result::Result<PreparedCol<S>, String>>>,
    units: BTreeMap<String, std::result::Result<ModelCols<S>, String>>,
}

fn permuted<T: Copy>(vals: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&i| vals[i]).collect()
}

#[allow(clippy::too_many_arguments)]
fn prepare_block<S: Scalar>(
    dataset: &SymbolDataset,
    evaluator: &HypothesisEvaluator<S>,
    extractors: &ExtractorMap<S>,
    needed: &Needed,
    block: &RecordBlock,
    stream_fp: u64,
    skip_unparsed: bool,
    stats: &mut RunStats,
) -> BlockData<S> {
    let n_s = dataset.n_symbols();
    let t0 = Instant::now();
    let results = evaluator.evaluate_block_subset(dataset, block, stream_fp, &needed.spec_ixs);
    let mut hyp_cols: Vec<Option<std::result::Result<PreparedCol<S>, String>>> =
        (0..evaluator.specs().len()).map(|_| None).collect();
    for (&ix, res) in needed.spec_ixs.iter().zip(results) {
        hyp_cols[ix] = Some(match res {
            Ok(col) => {
                let keep = (skip_unparsed && col.record_ok.iter().any(|&ok| !ok)).then(|| {
                    let row_ok: Vec<bool> = col
                        .record_ok
                        .iter()
                        .flat_map(|&ok| std::iter::repeat(ok).take(n_s))
                        .collect();
                    permuted(&row_ok, &block.symbol_perm)
                });
                Ok(PreparedCol { values: permuted(&col.values, &block.symbol_perm), keep })
            }
            Err(e) => Err(e.to_string()),
        });
    }
    stats.hyp_extract_seconds += t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut units = BTreeMap::new();
    for (model, ids) in &needed.units {
        if ids.is_empty() {
            continue;
        }
        let entry = match extractors[model].extract(dataset, &block.records, ids) {
            Ok(mut blk) => {
                blk.permute_rows(&block.symbol_perm);
                Ok(ModelCols {
                    unit_ix: ids.iter().enumerate().map(|(i, &u)| (u, i)).collect(),
                    cols: blk.columns,
                })
            }
            Err(e) => Err(e.to_string()),
        };
        units.insert(model.clone(), entry);
    }
    stats.unit_extract_seconds += t1.elapsed().as_secs_f64();
    BlockData { hyp_cols, units }
}

fn feed_indep<S: Scalar>(
    task: &mut IndepTask<S>,
    plan: &InspectionPlan,
    data: &BlockData<S>,
    stops_early: bool,
) {
    if task.done {
        return;
    }
    let col = match data.hyp_cols[task.spec_ix].as_ref() {
        Some(Ok(col)) => col,
        Some(Err(msg)) => {
            task.error = Some(msg.clone());
            task.done = true;
            return;
        }
        None => return,
    };
    let mc = match data.units.get(&plan.groups[task.group_ix].model_id) {
        Some(Ok(mc)) => mc,
        Some(Err(msg)) => {
            task.error = Some(msg.clone());
            task.done = true;
            return;
        }
        None => return,
    };
    for pair in &mut task.pairs {
        if pair.frozen {
            continue;
        }
        let Some(&ci) = mc.unit_ix.get(&pair.unit_id) else { continue };
        let x = &mc.cols[ci];
        let res = match &col.keep {
            Some(keep) => {
                let fx: Vec<S> = x.iter().zip(keep).filter(|&(_, &k)| k).map(|(&v, _)| v).collect();
                let fy: Vec<S> =
                    col.values.iter().zip(keep).filter(|&(_, &k)| k).map(|(&v, _)| v).collect();
                pair.state.update(&fx, &fy)
            }
            None => pair.state.update(x, &col.values),
        };
        if let Err(e) = res {
            task.error = Some(e.to_string());
            task.done = true;
            return;
        }
    }
    if stops_early {
        let eps = plan.measures[task.measure_ix].epsilon;
        for pair in &mut task.pairs {
            if !pair.frozen && pair.state.converged(eps) {
                pair.frozen = true;
            }
        }
        if task.pairs.iter().all(|p| p.frozen) {
            task.done = true;
        }
    }
}

fn feed_joint<S: Scalar>(
    task: &mut JointTask<S>,
    plan: &InspectionPlan,
    data: &BlockData<S>,
    stops_early: bool,
) {
    if task.done {
        return;
    }
    let mut cols: Vec<&PreparedCol<S>> = Vec::with_capacity(task.spec_ixs.len());
    for &ix in &task.spec_ixs {
        match data.hyp_cols[ix].as_ref() {
            Some(Ok(c)) => cols.push(c),
            Some(Err(msg)) => {
                task.error = Some(msg.clone());
                task.done = true;
                return;
            }
            None => return,
        }
    }
    let group = &plan.groups[task.group_ix];
    let mc = match data.units.get(&group.model_id) {
        Some(Ok(mc)) => mc,
        Some(Err(msg)) => {
            task.error = Some(msg.clone());
            task.done = true;
            return;
        }
        None => return,
    };
    let mut unit_refs: Vec<&[S]> = Vec::with_capacity(group.unit_ids.len());
    for &u in &group.unit_ids {
        let Some(&ci) = mc.unit_ix.get(&u) else { return };
        unit_refs.push(&mc.cols[ci]);
    }
    // Rows any covered hypothesis failed to parse are dropped for the whole
    // model so all outputs keep training on one shared stream.
    let keep: Option<Vec<bool>> = cols.iter().any(|c| c.keep.is_some()).then(|| {
        let mut k = vec![true; cols[0].values.len()];
        for c in &cols {
            if let Some(ck) = &c.keep {
                for (kv, &cv) in k.iter_mut().zip(ck) {
                    *kv &= cv;
                }
            }
        }
        k
    });
    let res = match &keep {
        Some(keep) => {
            let filter = |v: &[S]| -> Vec<S> {
                v.iter().zip(keep).filter(|&(_, &k)| k).map(|(&v, _)| v).collect()
            };
            let fu: Vec<Vec<S>> = unit_refs.iter().map(|c| filter(c)).collect();
            let fh: Vec<Vec<S>> = cols.iter().map(|c| filter(&c.values)).collect();
            let fur: Vec<&[S]> = fu.iter().map(|v| v.as_slice()).collect();
            let fhr: Vec<&[S]> = fh.iter().map(|v| v.as_slice()).collect();
            task.state.update(&fur, &fhr)
        }
        None => {
            let hyp_refs: Vec<&[S]> = cols.iter().map(|c| c.values.as_slice()).collect();
            task.state.update(&unit_refs, &hyp_refs)
        }
    };
    if let Err(e) = res {
        task.error = Some(e.to_string());
        task.done = true;
        return;
    }
    if stops_early && task.state.converged(plan.measures[task.measure_ix].epsilon) {
        task.done = true;
    }
}

fn feed_all<S: Scalar>(
    tasks: &mut TaskSet<S>,
    plan: &InspectionPlan,
    data: &BlockData<S>,
    stops_early: bool,
    pool: Option<&rayon::ThreadPool>,
) {
    let TaskSet { indep, joints, .. } = tasks;
    match pool {
        Some(pool) => pool.install(|| {
            rayon::join(
                || indep.par_iter_mut().for_each(|t| feed_indep(t, plan, data, stops_early)),
                || joints.par_iter_mut().for_each(|t| feed_joint(t, plan, data, stops_early)),
            );
        }),
        None => {
            for t in indep.iter_mut() {
                feed_indep(t, plan, data, stops_early);
            }
            for t in joints.iter_mut() {
                feed_joint(t, plan, data, stops_early);
            }
        }
    }
}

fn error_rows(
    out: &mut Vec<AffinityResult>,
    group: &super::UnitGroup,
    score_id: &str,
    hyp_id: &str,
    msg: &str,
    n: u64,
    group_row: bool,
) {
    let row = |unit_id: Option<u32>| AffinityResult {
        model_id: group.model_id.clone(),
        score_id: score_id.to_string(),
        hyp_id: hyp_id.to_string(),
        unit_id,
        unit_score: None,
        group_score: None,
        n_symbols_used: n,
        converged: false,
        status: TaskStatus::Error(msg.to_string()),
    };
    if group_row {
        out.push(row(None));
    }
    for &u in &group.unit_ids {
        out.push(row(Some(u)));
    }
}

/// Emits rows in a fixed (group, measure, hypothesis, unit) order so equal
/// runs serialize identically.
fn finalize<S: Scalar>(plan: &InspectionPlan, tasks: &TaskSet<S>) -> Vec<AffinityResult> {
    let joint_scores: Vec<Option<Vec<LogregHypScore>>> =
        tasks.joints.iter().map(|t| t.error.is_none().then(|| t.state.results())).collect();
    let mut indep_ix: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    for (i, t) in tasks.indep.iter().enumerate() {
        indep_ix.insert((t.group_ix, t.measure_ix, t.hyp_ix), i);
    }
    let mut out = Vec::new();
    for (g, group) in plan.groups.iter().enumerate() {
        for (m, measure) in plan.measures.iter().enumerate() {
            for (h, hyp) in plan.hypotheses.iter().enumerate() {
                if !measure.kind.is_joint() {
                    let t = &tasks.indep[indep_ix[&(g, m, h)]];
                    if let Some(msg) = &t.error {
                        let n = t.pairs.first().map_or(0, |p| p.state.score().n_rows);
                        error_rows(&mut out, group, &measure.score_id, &hyp.hyp_id, msg, n, false);
                    } else {
                        for pair in &t.pairs {
                            let s = pair.state.score();
                            out.push(AffinityResult {
                                model_id: group.model_id.clone(),
                                score_id: measure.score_id.clone(),
                                hyp_id: hyp.hyp_id.clone(),
                                unit_id: Some(pair.unit_id),
                                unit_score: Some(s.score),
                                group_score: Some(s.score),
                                n_symbols_used: s.n_rows,
                                converged: s.err.is_some_and(|e| e <= measure.epsilon),
                                status: if s.degenerate {
                                    TaskStatus::Degenerate
                                } else {
                                    TaskStatus::Ok
                                },
                            });
                        }
                    }
                    continue;
                }
                if let Some(msg) = tasks.joint_errors.get(&(g, m, h)) {
                    error_rows(&mut out, group, &measure.score_id, &hyp.hyp_id, msg, 0, true);
                    continue;
                }
                let jix = tasks.joint_of[&(g, m, h)];
                let t = &tasks.joints[jix];
                if let Some(msg) = &t.error {
                    let n = t.state.n_rows();
                    error_rows(&mut out, group, &measure.score_id, &hyp.hyp_id, msg, n, true);
                    continue;
                }
                let scores = joint_scores[jix].as_ref().expect("scored unless errored");
                let j = t.hyp_ixs.iter().position(|&x| x == h).expect("task covers hyp");
                let sc = &scores[j];
                let status = if sc.degenerate { TaskStatus::Degenerate } else { TaskStatus::Ok };
                let converged = sc.err.is_some_and(|e| e <= measure.epsilon);
                let n = t.state.n_rows();
                let row = |unit_id: Option<u32>, unit_score: Option<f64>| AffinityResult {
                    model_id: group.model_id.clone(),
                    score_id: measure.score_id.clone(),
                    hyp_id: hyp.hyp_id.clone(),
                    unit_id,
                    unit_score,
                    group_score: Some(sc.f1),
                    n_symbols_used: n,
                    converged,
                    status: status.clone(),
                };
                out.push(row(None, None));
                for (k, &u) in group.unit_ids.iter().enumerate() {
                    out.push(row(Some(u), Some(sc.unit_scores[k])));
                }
            }
        }
    }
    out
}

/// Executes a plan over one dataset. Single-worker runs are deterministic
/// down to the emitted bytes for a fixed (plan, dataset, config); with
/// `workers > 1` scoring states are updated in parallel per block, which
/// keeps results equal up to floating-point scheduling but not bit-for-bit.
pub fn run<S: Scalar>(
    plan: &InspectionPlan,
    dataset: &SymbolDataset,
    extractors: &ExtractorMap<S>,
    evaluator: &HypothesisEvaluator<S>,
    config: &EngineConfig,
) -> Result<RunOutput> {
    config.validate()?;
    if dataset.n_records() == 0 {
        return Err(Error::EmptyDataset);
    }
    for g in &plan.groups {
        if !extractors.contains_key(&g.model_id) {
            return Err(Error::Config(format!("no extractor for model {}", g.model_id)));
        }
    }
    let pool = match config.workers {
        0 | 1 => None,
        n => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
        ),
    };
    let mut tasks = build_tasks(plan, evaluator, config)?;
    let bp = BlockPlan::new(dataset, config.n_b, config.seed);
    let stream_fp = bp.stream_fingerprint();
    let stops_early = config.strategy.stops_early();
    let mut stats = RunStats::default();
    let cap_reached = |stats: &RunStats| {
        config.max_records.is_some_and(|cap| stats.records_read as usize >= cap)
    };

    if config.strategy.is_lazy() {
        for b in 0..bp.n_blocks() {
            if cap_reached(&stats) || all_done(&tasks) {
                break;
            }
            let needed = needed_now(plan, &tasks);
            let block = bp.block(b);
            stats.blocks_read += 1;
            stats.records_read += block.n_records() as u64;
            stats.rows_read += (block.n_records() * dataset.n_symbols()) as u64;
            let data = prepare_block(
                dataset,
                evaluator,
                extractors,
                &needed,
                &block,
                stream_fp,
                config.skip_unparsed,
                &mut stats,
            );
            let t = Instant::now();
            feed_all(&mut tasks, plan, &data, stops_early, pool.as_ref());
            stats.inspect_seconds += t.elapsed().as_secs_f64();
        }
    } else {
        let needed = needed_now(plan, &tasks);
        let mut prepared: Vec<BlockData<S>> = Vec::new();
        for b in 0..bp.n_blocks() {
            if cap_reached(&stats) {
                break;
            }
            let block = bp.block(b);
            stats.blocks_read += 1;
            stats.records_read += block.n_records() as u64;
            stats.rows_read += (block.n_records() * dataset.n_symbols()) as u64;
            prepared.push(prepare_block(
                dataset,
                evaluator,
                extractors,
                &needed,
                &block,
                stream_fp,
                config.skip_unparsed,
                &mut stats,
            ));
        }
        let t = Instant::now();
        for data in &prepared {
            if stops_early && all_done(&tasks) {
                break;
            }
            feed_all(&mut tasks, plan, data, stops_early, pool.as_ref());
        }
        stats.inspect_seconds += t.elapsed().as_secs_f64();
    }

    Ok(RunOutput { results: finalize(plan, &tasks), stats })
}

/// Runs the same plan under each strategy with a fresh evaluator (cold
/// cache) and reports per-phase timings.
pub fn bench<S: Scalar>(
    plan: &InspectionPlan,
    dataset: &SymbolDataset,
    extractors: &ExtractorMap<S>,
    strategies: &[super::Strategy],
    config: &EngineConfig,
    mut make_evaluator: impl FnMut() -> Result<HypothesisEvaluator<S>>,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &strategy in strategies {
        let evaluator = make_evaluator()?;
        let mut cfg = config.clone();
        cfg.strategy = strategy;
        let out = run(plan, dataset, extractors, &evaluator, &cfg)?;
        for (phase, seconds) in [
            ("unit-extract", out.stats.unit_extract_seconds),
            ("hyp-extract", out.stats.hyp_extract_seconds),
            ("inspect", out.stats.inspect_seconds),
        ] {
            rows.push(BenchRow { strategy, phase, seconds, blocks_read: out.stats.blocks_read });
        }
    }
    Ok(rows)
}

//! Execution engine: plans the (groups x hypotheses x measures) cross
//! product, streams record blocks, extracts behaviors lazily, stops early on
//! convergence, and emits one affinity row per scored pair.

mod run;

pub use run::{bench, run, BenchRow, RunOutput, RunStats};

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::HypothesisSpec;
use crate::measures::{MeasureKind, MeasureSpec};

/// Extractors keyed by model id; ordered so multi-model preparation walks
/// models deterministically.
pub type ExtractorMap<S> = std::collections::BTreeMap<String, Box<dyn crate::extract::Extractor<S>>>;

/// An ordered set of units of one model, scored as a unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitGroup {
    pub group_id: String,
    pub model_id: String,
    pub unit_ids: Vec<u32>,
}

impl UnitGroup {
    pub fn new(
        group_id: impl Into<String>,
        model_id: impl Into<String>,
        unit_ids: Vec<u32>,
    ) -> Result<Self> {
        let g = UnitGroup { group_id: group_id.into(), model_id: model_id.into(), unit_ids };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.unit_ids.is_empty() {
            return Err(Error::EmptyInput(format!("group {} has no units", self.group_id)));
        }
        if !self.unit_ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "group {}: unit ids must be strictly increasing",
                self.group_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Materialize everything, per-hypothesis models, no early stopping.
    Naive,
    /// Materialize everything, merged multi-output models.
    Merged,
    /// Materialized input, but scoring stops once estimates converge.
    EarlyStop,
    /// Blocks are read and extracted only until all scores converge.
    Streaming,
}

impl Strategy {
    pub fn parse_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "naive" => Some(Strategy::Naive),
            "merged" => Some(Strategy::Merged),
            "early-stop" | "early_stop" | "earlystop" => Some(Strategy::EarlyStop),
            "streaming" => Some(Strategy::Streaming),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Merged => "merged",
            Strategy::EarlyStop => "early-stop",
            Strategy::Streaming => "streaming",
        }
    }

    /// Whether logreg outputs share one merged model.
    pub fn merges_models(self) -> bool {
        !matches!(self, Strategy::Naive)
    }

    /// Whether converged states stop consuming data.
    pub fn stops_early(self) -> bool {
        matches!(self, Strategy::EarlyStop | Strategy::Streaming)
    }

    /// Whether blocks are read lazily instead of materialized up front.
    pub fn is_lazy(self) -> bool {
        matches!(self, Strategy::Streaming)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Records per block.
    pub n_b: usize,
    pub epsilon_pearson: f64,
    pub epsilon_logreg: f64,
    pub confidence: f64,
    pub seed: u64,
    pub strategy: Strategy,
    /// Cap on records read (block granularity).
    pub max_records: Option<usize>,
    pub workers: usize,
    /// Exclude records a hypothesis could not parse from that hypothesis's
    /// scoring instead of scoring their all-zero behavior.
    pub skip_unparsed: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n_b: 512,
            epsilon_pearson: crate::measures::DEFAULT_EPSILON_PEARSON,
            epsilon_logreg: crate::measures::DEFAULT_EPSILON_LOGREG,
            confidence: crate::measures::DEFAULT_CONFIDENCE,
            seed: 0,
            strategy: Strategy::Streaming,
            max_records: None,
            workers: 1,
            skip_unparsed: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_b < 1 {
            return Err(Error::Config("n_b must be >= 1".into()));
        }
        if !(self.epsilon_pearson > 0.0) || !(self.epsilon_logreg > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config("confidence must be in (0, 1)".into()));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }

    /// A measure spec carrying this config's thresholds.
    pub fn measure_spec(&self, score_id: impl Into<String>, kind: MeasureKind) -> MeasureSpec {
        let mut spec = MeasureSpec::new(score_id, kind);
        spec.epsilon = match kind {
            MeasureKind::Logreg => self.epsilon_logreg,
            _ => self.epsilon_pearson,
        };
        spec.confidence = self.confidence;
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Ok,
    Degenerate,
    Error(String),
}

impl TaskStatus {
    pub fn is_error(&self) -> bool {
        matches!(self, TaskStatus::Error(_))
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskStatus::Ok => f.write_str("ok"),
            TaskStatus::Degenerate => f.write_str("degenerate"),
            TaskStatus::Error(msg) => write!(f, "error: {msg}"),
        }
    }
}

/// One scored row: per-unit when `unit_id` is set, group-level otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityResult {
    pub model_id: String,
    pub score_id: String,
    pub hyp_id: String,
    pub unit_id: Option<u32>,
    pub unit_score: Option<f64>,
    pub group_score: Option<f64>,
    pub n_symbols_used: u64,
    pub converged: bool,
    pub status: TaskStatus,
}

/// The validated cross product to execute.
#[derive(Debug, Clone)]
pub struct InspectionPlan {
    pub groups: Vec<UnitGroup>,
    pub hypotheses: Vec<HypothesisSpec>,
    pub measures: Vec<MeasureSpec>,
}

impl InspectionPlan {
    /// |groups| x |hypotheses| x |measures|.
    pub fn n_tasks(&self) -> usize {
        self.groups.len() * self.hypotheses.len() * self.measures.len()
    }
}

/// Validates inputs and forms the full cross product. Independent measures
/// later expand to per-unit states internally; the task count stays at the
/// group granularity.
pub fn plan(
    groups: Vec<UnitGroup>,
    hypotheses: Vec<HypothesisSpec>,
    measures: Vec<MeasureSpec>,
    config: &EngineConfig,
) -> Result<InspectionPlan> {
    config.validate()?;
    if groups.is_empty() {
        return Err(Error::EmptyInput("no unit groups".into()));
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyInput("no hypotheses".into()));
    }
    if measures.is_empty() {
        return Err(Error::EmptyInput("no measures".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for g in &groups {
        g.validate()?;
        if !seen.insert(format!("group:{}", g.group_id)) {
            return Err(Error::DuplicateId(format!("group id {}", g.group_id)));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for h in &hypotheses {
        if !seen.insert(h.hyp_id.clone()) {
            return Err(Error::DuplicateId(format!("hypothesis id {}", h.hyp_id)));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for m in &measures {
        m.validate()?;
        if !seen.insert(m.score_id.clone()) {
            return Err(Error::DuplicateId(format!("score id {}", m.score_id)));
        }
    }
    Ok(InspectionPlan { groups, hypotheses, measures })
}

pub const RESULT_CSV_HEADER: &str =
    "model_id,score_id,hyp_id,unit_id,unit_score,group_score,n_symbols_used,converged,status";

fn opt_string<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, |x| x.to_string())
}

pub fn write_results_csv<W: Write>(results: &[AffinityResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RESULT_CSV_HEADER.split(','))?;
    for r in results {
        w.write_record([
            r.model_id.as_str(),
            r.score_id.as_str(),
            r.hyp_id.as_str(),
            &opt_string(&r.unit_id),
            &opt_string(&r.unit_score),
            &opt_string(&r.group_score),
            &r.n_symbols_used.to_string(),
            &r.converged.to_string(),
            &r.status.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["strategy", "phase", "seconds", "blocks_read"])?;
    for r in rows {
        w.write_record([
            r.strategy.name(),
            r.phase,
            &format!("{:.6}", r.seconds),
            &r.blocks_read.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

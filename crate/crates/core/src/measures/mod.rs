//! Affinity measures and their incremental convergence states.
//!
//! Independent measures (pearson, mutual information, jaccard, difference of
//! means) score one (unit, hypothesis) pair each and stream block by block
//! through [`PairState`]. The joint logreg measure fits one merged model per
//! (unit group, hypothesis set) through [`LogregState`].
//!
//! Convergence error is defined for pearson (Fisher interval half-width) and
//! logreg (validation-window drift). The other measures carry no error
//! estimate and therefore never converge early; they run until the dataset
//! is exhausted.

pub mod logreg;
pub mod pearson;
pub mod simple;

pub use logreg::{LogregHypScore, LogregParams, LogregState, Regularization};
pub use pearson::{fisher_halfwidth, fisher_interval, normal_quantile, PearsonState};
pub use simple::{DiffMeansState, JaccardState, MutualInfoState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON_PEARSON: f64 = 0.025;
pub const DEFAULT_EPSILON_LOGREG: f64 = 0.01;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;
pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_TAU: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    Pearson,
    MutualInfo,
    Jaccard,
    DiffMeans,
    Logreg,
}

impl MeasureKind {
    /// Joint measures score a whole unit group at once; independent ones
    /// expand to per-unit tasks.
    pub fn is_joint(self) -> bool {
        matches!(self, MeasureKind::Logreg)
    }

    pub fn supports_err(self) -> bool {
        matches!(self, MeasureKind::Pearson | MeasureKind::Logreg)
    }

    /// Accepts the query-dialect aliases as well as the canonical names.
    pub fn parse_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "pearson" | "corr" | "correlation" => Some(MeasureKind::Pearson),
            "mutual-info" | "mutual_info" | "mi" => Some(MeasureKind::MutualInfo),
            "jaccard" | "iou" => Some(MeasureKind::Jaccard),
            "diff-means" | "diff_means" | "diffmeans" => Some(MeasureKind::DiffMeans),
            "logreg" | "logistic" => Some(MeasureKind::Logreg),
            _ => None,
        }
    }

    pub fn canonical_name(self) -> &'static str {
        match self {
            MeasureKind::Pearson => "pearson",
            MeasureKind::MutualInfo => "mutual-info",
            MeasureKind::Jaccard => "jaccard",
            MeasureKind::DiffMeans => "diff-means",
            MeasureKind::Logreg => "logreg",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeasureSpec {
    pub score_id: String,
    pub kind: MeasureKind,
    /// Convergence threshold on err.
    pub epsilon: f64,
    /// Confidence level for pearson intervals.
    pub confidence: f64,
    /// Equal-frequency bin count for mutual information.
    pub bins: usize,
    /// Top-quantile fraction for jaccard binarization.
    pub tau: f64,
    pub logreg: LogregParams,
}

impl MeasureSpec {
    pub fn new(score_id: impl Into<String>, kind: MeasureKind) -> Self {
        let epsilon = match kind {
            MeasureKind::Logreg => DEFAULT_EPSILON_LOGREG,
            _ => DEFAULT_EPSILON_PEARSON,
        };
        Self {
            score_id: score_id.into(),
            kind,
            epsilon,
            confidence: DEFAULT_CONFIDENCE,
            bins: DEFAULT_BINS,
            tau: DEFAULT_TAU,
            logreg: LogregParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.score_id.is_empty() {
            return Err(Error::Config("measure score_id must be non-empty".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "measure {}: epsilon must be > 0",
                self.score_id
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!(
                "measure {}: confidence must be in (0, 1)",
                self.score_id
            )));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!(
                "measure {}: bins must be >= 2",
                self.score_id
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!(
                "measure {}: tau must be in (0, 1)",
                self.score_id
            )));
        }
        if self.logreg.folds < 2 {
            return Err(Error::Config(format!(
                "measure {}: folds must be >= 2",
                self.score_id
            )));
        }
        if self.logreg.batch_size < 1 {
            return Err(Error::Config(format!(
                "measure {}: batch size must be >= 1",
                self.score_id
            )));
        }
        Ok(())
    }
}

/// Current estimate for one (unit, hypothesis) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub score: f64,
    pub err: Option<f64>,
    pub degenerate: bool,
    pub n_rows: u64,
}

/// Streaming state for one (unit, hypothesis) pair under an independent
/// measure.
#[derive(Debug, Clone)]
pub enum PairState<S: Scalar> {
    Pearson { state: PearsonState<S>, confidence: f64 },
    MutualInfo(MutualInfoState<S>),
    Jaccard(JaccardState<S>),
    DiffMeans(DiffMeansState<S>),
}

impl<S: Scalar> PairState<S> {
    pub fn new(spec: &MeasureSpec) -> Result<Self> {
        spec.validate()?;
        match spec.kind {
            MeasureKind::Pearson => Ok(PairState::Pearson {
                state: PearsonState::new(),
                confidence: spec.confidence,
            }),
            MeasureKind::MutualInfo => Ok(PairState::MutualInfo(MutualInfoState::new(spec.bins))),
            MeasureKind::Jaccard => Ok(PairState::Jaccard(JaccardState::new(spec.tau))),
            MeasureKind::DiffMeans => Ok(PairState::DiffMeans(DiffMeansState::new())),
            MeasureKind::Logreg => Err(Error::Config(
                "logreg is a joint measure; use LogregState".into(),
            )),
        }
    }

    pub fn update(&mut self, x: &[S], y: &[S]) -> Result<()> {
        if x.len() != y.len() {
            return Err(Error::Misaligned(format!(
                "behavior columns misaligned: {} vs {} rows",
                x.len(),
                y.len()
            )));
        }
        match self {
            PairState::Pearson { state, .. } => state.update(x, y),
            PairState::MutualInfo(state) => state.update(x, y),
            PairState::Jaccard(state) => state.update(x, y),
            PairState::DiffMeans(state) => state.update(x, y),
        }
        Ok(())
    }

    pub fn score(&self) -> PairScore {
        match self {
            PairState::Pearson { state, confidence } => {
                let r = state.r();
                PairScore {
                    score: r.unwrap_or(0.0),
                    err: state.err(*confidence),
                    degenerate: r.is_none(),
                    n_rows: state.n(),
                }
            }
            PairState::MutualInfo(state) => {
                let mi = state.mi();
                PairScore {
                    score: mi.unwrap_or(0.0),
                    err: None,
                    degenerate: mi.is_none(),
                    n_rows: state.n(),
                }
            }
            PairState::Jaccard(state) => {
                let j = state.jaccard();
                PairScore {
                    score: j.unwrap_or(0.0),
                    err: None,
                    degenerate: j.is_none(),
                    n_rows: state.n(),
                }
            }
            PairState::DiffMeans(state) => {
                let d = state.diff();
                PairScore {
                    score: d.unwrap_or(0.0),
                    err: None,
                    degenerate: d.is_none(),
                    n_rows: state.n(),
                }
            }
        }
    }

    pub fn converged(&self, epsilon: f64) -> bool {
        self.score().err.is_some_and(|e| e <= epsilon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for kind in [
            MeasureKind::Pearson,
            MeasureKind::MutualInfo,
            MeasureKind::Jaccard,
            MeasureKind::DiffMeans,
            MeasureKind::Logreg,
        ] {
            assert_eq!(MeasureKind::parse_name(kind.canonical_name()), Some(kind));
        }
        assert_eq!(MeasureKind::parse_name("corr"), Some(MeasureKind::Pearson));
        assert_eq!(MeasureKind::parse_name("nope"), None);
    }

    #[test]
    fn spec_defaults_validate() {
        for kind in [
            MeasureKind::Pearson,
            MeasureKind::MutualInfo,
            MeasureKind::Jaccard,
            MeasureKind::DiffMeans,
            MeasureKind::Logreg,
        ] {
            MeasureSpec::new("s", kind).validate().unwrap();
        }
        assert_eq!(
            MeasureSpec::new("p", MeasureKind::Pearson).epsilon,
            DEFAULT_EPSILON_PEARSON
        );
        assert_eq!(
            MeasureSpec::new("l", MeasureKind::Logreg).epsilon,
            DEFAULT_EPSILON_LOGREG
        );
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let mut s = MeasureSpec::new("s", MeasureKind::Pearson);
        s.epsilon = 0.0;
        assert!(s.validate().is_err());
        let mut s = MeasureSpec::new("s", MeasureKind::Jaccard);
        s.tau = 1.0;
        assert!(s.validate().is_err());
        let mut s = MeasureSpec::new("s", MeasureKind::MutualInfo);
        s.bins = 1;
        assert!(s.validate().is_err());
        let mut s = MeasureSpec::new("s", MeasureKind::Logreg);
        s.logreg.folds = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn pair_state_rejects_logreg() {
        let spec = MeasureSpec::new("j", MeasureKind::Logreg);
        assert!(PairState::<f64>::new(&spec).is_err());
    }

    #[test]
    fn misaligned_columns_rejected() {
        let spec = MeasureSpec::new("p", MeasureKind::Pearson);
        let mut st = PairState::<f64>::new(&spec).unwrap();
        assert!(matches!(
            st.update(&[1.0, 2.0], &[1.0]),
            Err(Error::Misaligned(_))
        ));
    }

    #[test]
    fn pearson_pair_converges_once_interval_narrow() {
        let spec = MeasureSpec::new("p", MeasureKind::Pearson);
        let mut st = PairState::<f64>::new(&spec).unwrap();
        let x: Vec<f64> = (0..5000).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.9 + 0.1).collect();
        st.update(&x[..3], &y[..3]).unwrap();
        assert!(!st.converged(0.025));
        st.update(&x[3..], &y[3..]).unwrap();
        assert!(st.converged(0.025));
        assert!(st.score().score > 0.99);
    }

    #[test]
    fn err_free_measures_never_converge() {
        for kind in [
            MeasureKind::MutualInfo,
            MeasureKind::Jaccard,
            MeasureKind::DiffMeans,
        ] {
            let spec = MeasureSpec::new("s", kind);
            let mut st = PairState::<f64>::new(&spec).unwrap();
            let x: Vec<f64> = (0..1000).map(|i| i as f64).collect();
            let y: Vec<f64> = (0..1000).map(|i| f64::from(i % 2 == 0)).collect();
            st.update(&x, &y).unwrap();
            assert!(st.score().err.is_none());
            assert!(!st.converged(1000.0));
        }
    }

    #[test]
    fn degenerate_pair_reports_zero_score() {
        let spec = MeasureSpec::new("p", MeasureKind::Pearson);
        let mut st = PairState::<f64>::new(&spec).unwrap();
        st.update(&[1.0, 1.0, 1.0], &[0.0, 1.0, 0.0]).unwrap();
        let s = st.score();
        assert_eq!(s.score, 0.0);
        assert!(s.degenerate);
        assert_eq!(s.n_rows, 3);
    }
}

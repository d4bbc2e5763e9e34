//! Run configuration: a TOML file of flat `key = value` sections, designed
//! to be diffable and seed-pinning friendly. `dni --print-config` prints the
//! defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dni_core::engine::{EngineConfig, Strategy};
use dni_core::grammar::ParseMode;
use dni_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub dataset: DatasetSection,
    pub engine: EngineSection,
    pub cache: CacheSection,
    #[serde(rename = "score")]
    pub scores: Vec<ScoreSection>,
}

/// All referenced files; empty string means unset. Relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: String,
    /// Optional symbol list pinning the alphabet order.
    pub alphabet: String,
    /// Optional grammar for tree hypotheses and parse-aware extraction.
    pub grammar: String,
    /// Hypothesis manifest (TOML).
    pub hypotheses: String,
    /// Model and group definitions (TOML).
    pub models: String,
    /// Hypothesis cache spill directory; DNI_CACHE_DIR overrides.
    pub cache_dir: String,
    /// Result CSV destination.
    pub output: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_s: usize,
    pub pad: String,
    /// "viterbi" or "first-parse".
    pub parse_mode: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub n_b: usize,
    pub epsilon_pearson: f64,
    pub epsilon_logreg: f64,
    pub confidence: f64,
    pub seed: u64,
    pub strategy: String,
    /// 0 means the whole dataset.
    pub max_records: u64,
    pub workers: usize,
    pub skip_unparsed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    /// In-memory budget; 0 disables caching unless a spill dir is set.
    pub budget_mb: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub id: String,
    pub measure: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths { output: "results.csv".into(), ..Paths::default() },
            dataset: DatasetSection::default(),
            engine: EngineSection::default(),
            cache: CacheSection::default(),
            scores: vec![ScoreSection {
                id: "corr".into(),
                measure: "pearson".into(),
                epsilon: None,
                confidence: None,
            }],
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { n_s: 30, pad: "~".into(), parse_mode: "viterbi".into() }
    }
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        EngineSection {
            n_b: e.n_b,
            epsilon_pearson: e.epsilon_pearson,
            epsilon_logreg: e.epsilon_logreg,
            confidence: e.confidence,
            seed: e.seed,
            strategy: e.strategy.name().into(),
            max_records: 0,
            workers: e.workers,
            skip_unparsed: e.skip_unparsed,
        }
    }
}

impl Default for CacheSection {
    fn default() -> Self {
        CacheSection { budget_mb: 256 }
    }
}

pub fn default_toml() -> String {
    toml::to_string_pretty(&RunConfig::default()).expect("default config serializes")
}

fn resolve(base: &Path, field: &mut String) {
    if field.is_empty() {
        return;
    }
    let p = Path::new(field);
    if p.is_relative() {
        *field = base.join(p).to_string_lossy().into_owned();
    }
}

impl RunConfig {
    /// Parses the file and resolves relative paths; no existence checks.
    pub fn load_raw(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {}", path.display(), e)))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for f in [
            &mut cfg.paths.dataset,
            &mut cfg.paths.alphabet,
            &mut cfg.paths.grammar,
            &mut cfg.paths.hypotheses,
            &mut cfg.paths.models,
            &mut cfg.paths.cache_dir,
            &mut cfg.paths.output,
        ] {
            resolve(base, f);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let cfg = Self::load_raw(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        for (field, value, required) in [
            ("paths.dataset", &self.paths.dataset, true),
            ("paths.hypotheses", &self.paths.hypotheses, true),
            ("paths.models", &self.paths.models, true),
            ("paths.alphabet", &self.paths.alphabet, false),
            ("paths.grammar", &self.paths.grammar, false),
        ] {
            if value.is_empty() {
                if required {
                    return Err(Error::Config(format!("{field} is not set")));
                }
                continue;
            }
            if !Path::new(value).exists() {
                return Err(Error::Config(format!("{field}: no such file {value}")));
            }
        }
        if self.paths.output.is_empty() {
            return Err(Error::Config("paths.output is not set".into()));
        }
        self.pad()?;
        self.parse_mode()?;
        self.engine_config()?;
        Ok(())
    }

    pub fn pad(&self) -> Result<char> {
        let mut chars = self.dataset.pad.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(Error::Config(format!(
                "dataset.pad must be a single symbol, got {:?}",
                self.dataset.pad
            ))),
        }
    }

    pub fn parse_mode(&self) -> Result<ParseMode> {
        match self.dataset.parse_mode.as_str() {
            "viterbi" => Ok(ParseMode::Viterbi),
            "first-parse" => Ok(ParseMode::FirstParse),
            other => Err(Error::Config(format!(
                "dataset.parse_mode must be \"viterbi\" or \"first-parse\", got {other:?}"
            ))),
        }
    }

    pub fn engine_config(&self) -> Result<EngineConfig> {
        let strategy = Strategy::parse_name(&self.engine.strategy)
            .ok_or_else(|| Error::Config(format!("unknown strategy {:?}", self.engine.strategy)))?;
        let cfg = EngineConfig {
            n_b: self.engine.n_b,
            epsilon_pearson: self.engine.epsilon_pearson,
            epsilon_logreg: self.engine.epsilon_logreg,
            confidence: self.engine.confidence,
            seed: self.engine.seed,
            strategy,
            max_records: match self.engine.max_records {
                0 => None,
                n => Some(n as usize),
            },
            workers: self.engine.workers,
            skip_unparsed: self.engine.skip_unparsed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cache spill directory with the DNI_CACHE_DIR override applied.
    pub fn cache_dir(&self) -> Option<PathBuf> {
        match std::env::var("DNI_CACHE_DIR") {
            Ok(v) if !v.is_empty() => Some(PathBuf::from(v)),
            _ if !self.paths.cache_dir.is_empty() => {
                Some(PathBuf::from(&self.paths.cache_dir))
            }
            _ => None,
        }
    }
}

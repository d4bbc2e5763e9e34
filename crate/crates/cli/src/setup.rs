//! Shared loading for config-driven subcommands: dataset, grammar,
//! hypotheses, models, groups, measures, cache.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use dni_core::dataset::SymbolDataset;
use dni_core::dnib::{ColumnId, DnibReader};
use dni_core::engine::{EngineConfig, ExtractorMap, UnitGroup};
use dni_core::extract::{build_extractor, ModelKind, ModelSpec};
use dni_core::grammar::{parse_grammar_file, Grammar, ParseMode};
use dni_core::hypothesis::{load_manifest, BehaviorCache, HypothesisEvaluator, HypothesisSpec};
use dni_core::measures::{MeasureKind, MeasureSpec};
use dni_core::{Error, Result};

use crate::config::RunConfig;

pub struct Workspace {
    pub config: RunConfig,
    pub engine: EngineConfig,
    pub dataset: SymbolDataset,
    pub grammar: Option<Arc<Grammar>>,
    pub parse_mode: ParseMode,
    pub evaluator: HypothesisEvaluator<f64>,
    pub extractors: ExtractorMap<f64>,
    pub groups: Vec<UnitGroup>,
    pub measures: Vec<MeasureSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelsFile {
    #[serde(default)]
    model: Vec<ModelEntry>,
    #[serde(default)]
    group: Vec<GroupEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelEntry {
    id: String,
    /// "file", "synthetic-rnn", or "specialized".
    kind: String,
    n_units: Option<u32>,
    #[serde(default)]
    seed: u64,
    path: Option<String>,
    s_units: Option<Vec<u32>>,
    w: Option<f64>,
    sigma: Option<f64>,
    target_hyp: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupEntry {
    id: String,
    model: String,
    /// Omitted means every unit of the model.
    units: Option<Vec<u32>>,
}

fn model_kind(e: &ModelEntry, base: &Path) -> Result<ModelKind> {
    let need = |f: &Option<String>, name: &str| {
        f.clone()
            .ok_or_else(|| Error::Config(format!("model {}: kind {} requires `{}`", e.id, e.kind, name)))
    };
    match e.kind.as_str() {
        "file" => {
            let rel = need(&e.path, "path")?;
            Ok(ModelKind::File { path: base.join(rel) })
        }
        "synthetic-rnn" => Ok(ModelKind::SyntheticRnn),
        "specialized" => Ok(ModelKind::Specialized {
            s_units: e.s_units.clone().ok_or_else(|| {
                Error::Config(format!("model {}: kind specialized requires `s_units`", e.id))
            })?,
            w: e.w.ok_or_else(|| {
                Error::Config(format!("model {}: kind specialized requires `w`", e.id))
            })?,
            target_hyp: need(&e.target_hyp, "target_hyp")?,
            sigma: e.sigma.unwrap_or(0.0),
        }),
        other => Err(Error::Config(format!("model {}: unknown kind {other:?}", e.id))),
    }
}

fn file_unit_count(path: &Path) -> Result<u32> {
    let reader = DnibReader::open(path)?;
    let n = reader
        .header()
        .columns
        .iter()
        .filter(|c| matches!(c, ColumnId::Unit(_)))
        .count();
    Ok(n as u32)
}

impl Workspace {
    pub fn load(config: RunConfig) -> Result<Workspace> {
        let engine = config.engine_config()?;
        let pad = config.pad()?;
        let parse_mode = config.parse_mode()?;

        let alphabet = match config.paths.alphabet.as_str() {
            "" => None,
            p => Some(Path::new(p).to_path_buf()),
        };
        let dataset = SymbolDataset::load(
            &config.paths.dataset,
            config.dataset.n_s,
            pad,
            alphabet.as_deref(),
        )?;

        let grammar = match config.paths.grammar.as_str() {
            "" => None,
            p => {
                let text = std::fs::read_to_string(p)?;
                Some(Arc::new(parse_grammar_file(&text)?))
            }
        };

        let specs = load_manifest(&config.paths.hypotheses)?;

        let budget = config.cache.budget_mb << 20;
        let spill = config.cache_dir();
        let cache = if budget == 0 && spill.is_none() {
            BehaviorCache::disabled()
        } else {
            BehaviorCache::new(budget, spill)?
        };
        let evaluator =
            HypothesisEvaluator::new(specs, grammar.clone(), parse_mode, Arc::new(cache))?;

        let (extractors, groups) =
            load_models(Path::new(&config.paths.models), &evaluator, &grammar, parse_mode)?;

        let measures = build_measures(&config, &engine)?;

        Ok(Workspace {
            config,
            engine,
            dataset,
            grammar,
            parse_mode,
            evaluator,
            extractors,
            groups,
            measures,
        })
    }

    /// Evaluator with a cold, memory-only cache; used by `bench` so every
    /// strategy starts from the same cache state.
    pub fn fresh_evaluator(&self) -> Result<HypothesisEvaluator<f64>> {
        let budget = self.config.cache.budget_mb << 20;
        let cache = if budget == 0 {
            BehaviorCache::disabled()
        } else {
            BehaviorCache::new(budget, None)?
        };
        HypothesisEvaluator::new(
            self.evaluator.specs().to_vec(),
            self.grammar.clone(),
            self.parse_mode,
            Arc::new(cache),
        )
    }
}

fn load_models(
    path: &Path,
    evaluator: &HypothesisEvaluator<f64>,
    grammar: &Option<Arc<Grammar>>,
    parse_mode: ParseMode,
) -> Result<(ExtractorMap<f64>, Vec<UnitGroup>)> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelsFile = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("models {}: {}", path.display(), e)))?;
    if file.model.is_empty() {
        return Err(Error::EmptyInput(format!("models {} declares no models", path.display())));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut extractors = ExtractorMap::new();
    let mut order: Vec<String> = Vec::new();
    for e in &file.model {
        let kind = model_kind(e, base)?;
        let n_units = match (e.n_units, &kind) {
            (Some(n), _) => n,
            (None, ModelKind::File { path }) => file_unit_count(path)?,
            (None, _) => {
                return Err(Error::Config(format!("model {}: `n_units` is required", e.id)))
            }
        };
        let spec = ModelSpec { model_id: e.id.clone(), kind, n_units, seed: e.seed };
        let target = match &spec.kind {
            ModelKind::Specialized { target_hyp, .. } => {
                let hyp: HypothesisSpec = evaluator
                    .spec(target_hyp)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "model {}: target hypothesis {target_hyp} is not in the manifest",
                            e.id
                        ))
                    })?
                    .clone();
                Some((hyp, grammar.clone(), parse_mode))
            }
            _ => None,
        };
        let ex = build_extractor::<f64>(&spec, target)?;
        if extractors.insert(e.id.clone(), ex).is_some() {
            return Err(Error::DuplicateId(format!("model {}", e.id)));
        }
        order.push(e.id.clone());
    }

    let all_units = |model: &str| -> Result<Vec<u32>> {
        let ex = extractors
            .get(model)
            .ok_or_else(|| Error::Config(format!("group references unknown model {model}")))?;
        Ok((0..ex.n_units()).collect())
    };
    let mut groups = Vec::new();
    if file.group.is_empty() {
        // Default: one group per model covering every unit.
        for id in &order {
            groups.push(UnitGroup::new(id.clone(), id.clone(), all_units(id)?)?);
        }
    } else {
        for g in &file.group {
            let units = match &g.units {
                Some(u) => u.clone(),
                None => all_units(&g.model)?,
            };
            groups.push(UnitGroup::new(g.id.clone(), g.model.clone(), units)?);
        }
    }
    Ok((extractors, groups))
}

fn build_measures(config: &RunConfig, engine: &EngineConfig) -> Result<Vec<MeasureSpec>> {
    let defaults;
    let scores = if config.scores.is_empty() {
        defaults = vec![crate::config::ScoreSection {
            id: "corr".into(),
            measure: "pearson".into(),
            epsilon: None,
            confidence: None,
        }];
        &defaults
    } else {
        &config.scores
    };
    let mut measures = Vec::new();
    for s in scores {
        let kind = MeasureKind::parse_name(&s.measure)
            .ok_or_else(|| Error::Config(format!("score {}: unknown measure {:?}", s.id, s.measure)))?;
        let mut m = engine.measure_spec(s.id.clone(), kind);
        if let Some(e) = s.epsilon {
            m.epsilon = e;
        }
        if let Some(c) = s.confidence {
            m.confidence = c;
        }
        m.validate()?;
        measures.push(m);
    }
    Ok(measures)
}

//! Subcommand implementations: thin wrappers over the library modules.

use std::path::PathBuf;
use std::process::ExitCode;

use dni_core::dnib::{self, ColumnId};
use dni_core::engine::{self, write_bench_csv, write_results_csv, Strategy};
use dni_core::grammar::{parse_grammar_file, sample_many};
use dni_core::inspectql::{execute, parse_query, Catalog};
use dni_core::verify::{verify, VerifyOptions};
use dni_core::{Error, Result};

use crate::config::RunConfig;
use crate::setup::Workspace;
use crate::{
    BenchArgs, CacheClearArgs, ExtractArgs, GenDataArgs, InspectArgs, QueryArgs, VerifyArgs,
};

pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.engine.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.engine.workers = w;
        }
    }
}

fn parse_units(text: &str) -> Result<Vec<u32>> {
    let units: Vec<u32> = text
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("bad unit id {:?} in {text:?}", t.trim())))
        })
        .collect::<Result<_>>()?;
    if units.is_empty() {
        return Err(Error::Config("no unit ids given".into()));
    }
    Ok(units)
}

pub fn gen_data(a: GenDataArgs, over: &Overrides) -> Result<ExitCode> {
    if a.n == 0 {
        return Err(Error::Config("--n must be positive".into()));
    }
    if a.n_s == 0 {
        return Err(Error::Config("--n-s must be positive".into()));
    }
    let seed = over.seed.unwrap_or(0);
    let text = std::fs::read_to_string(&a.grammar)?;
    let grammar = parse_grammar_file(&text)?;
    if grammar.is_terminal(a.pad) {
        return Err(Error::Config(format!(
            "pad symbol {:?} is a grammar terminal; pick another with --pad",
            a.pad
        )));
    }
    let lines = sample_many(&grammar, seed, a.n, a.n_s)?;
    let mut out = String::new();
    for line in &lines {
        out.push_str(line);
        for _ in line.chars().count()..a.n_s {
            out.push(a.pad);
        }
        out.push('\n');
    }
    std::fs::write(&a.out, out)?;
    if let Some(p) = &a.alphabet_out {
        dni_core::dataset::write_alphabet_file(p, grammar.terminals())?;
    }
    println!("wrote {} records of {} symbols to {}", a.n, a.n_s, a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn inspect(a: InspectArgs, over: &Overrides) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&a.config)?;
    over.apply(&mut cfg);
    if let Some(s) = &a.strategy {
        cfg.engine.strategy = s.clone();
    }
    if let Some(n) = a.max_records {
        cfg.engine.max_records = n;
    }
    if a.skip_unparsed {
        cfg.engine.skip_unparsed = true;
    }
    if let Some(p) = &a.out {
        cfg.paths.output = p.to_string_lossy().into_owned();
    }

    let ws = Workspace::load(cfg)?;
    let plan = engine::plan(
        ws.groups.clone(),
        ws.evaluator.specs().to_vec(),
        ws.measures.clone(),
        &ws.engine,
    )?;
    let out = engine::run(&plan, &ws.dataset, &ws.extractors, &ws.evaluator, &ws.engine)?;
    write_results_csv(&out.results, std::fs::File::create(&ws.config.paths.output)?)?;
    println!(
        "wrote {} rows to {} ({} blocks, {} records; unit-extract {:.3}s, hyp-extract {:.3}s, inspect {:.3}s)",
        out.results.len(),
        ws.config.paths.output,
        out.stats.blocks_read,
        out.stats.records_read,
        out.stats.unit_extract_seconds,
        out.stats.hyp_extract_seconds,
        out.stats.inspect_seconds,
    );
    let failed = out.results.iter().filter(|r| r.status.is_error()).count();
    if failed > 0 {
        eprintln!("error: {failed} of {} result rows report task errors", out.results.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn extract(a: ExtractArgs, over: &Overrides) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&a.config)?;
    over.apply(&mut cfg);
    if let Some(n) = a.max_records {
        cfg.engine.max_records = n;
    }
    let ws = Workspace::load(cfg)?;
    let extractor = ws.extractors.get(&a.model).ok_or_else(|| {
        Error::Config(format!(
            "unknown model {:?}; configured models: {}",
            a.model,
            ws.extractors.keys().cloned().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let unit_ids = match &a.units {
        Some(t) => parse_units(t)?,
        None => (0..extractor.n_units()).collect(),
    };
    let n_records = match ws.engine.max_records {
        Some(cap) => ws.dataset.n_records().min(cap),
        None => ws.dataset.n_records(),
    };
    let records: Vec<usize> = (0..n_records).collect();
    let block = extractor.extract(&ws.dataset, &records, &unit_ids)?;
    let columns: Vec<(ColumnId, Vec<f64>)> = unit_ids
        .iter()
        .enumerate()
        .map(|(i, &u)| (ColumnId::Unit(u), block.column(i).to_vec()))
        .collect();
    dnib::write_file(&a.out, n_records as u64, ws.dataset.n_symbols() as u32, &columns)?;
    println!(
        "wrote {} units x {} records to {}",
        unit_ids.len(),
        n_records,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn verify_cmd(a: VerifyArgs, over: &Overrides) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&a.config)?;
    over.apply(&mut cfg);
    let ws = Workspace::load(cfg)?;
    let extractor = ws
        .extractors
        .get(&a.model)
        .ok_or_else(|| Error::Config(format!("unknown model {:?}", a.model)))?;
    let hyp = ws
        .evaluator
        .spec(&a.hyp)
        .ok_or_else(|| Error::Config(format!("unknown hypothesis {:?}", a.hyp)))?
        .clone();
    let unit_ids = parse_units(&a.units)?;
    let options = VerifyOptions {
        n_samples: a.samples,
        n_per_record: a.per_record,
        seed: ws.engine.seed,
        control: a.control,
    };
    let report = verify(
        &ws.dataset,
        extractor.as_ref(),
        &unit_ids,
        &hyp,
        ws.grammar.as_deref(),
        ws.parse_mode,
        &options,
    )?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    match &a.out {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn query(a: QueryArgs, over: &Overrides) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&a.config)?;
    over.apply(&mut cfg);
    if let Some(s) = &a.strategy {
        cfg.engine.strategy = s.clone();
    }
    if let Some(p) = &a.out {
        cfg.paths.output = p.to_string_lossy().into_owned();
    }
    let text = match (&a.query, &a.query_file) {
        (Some(t), None) => t.clone(),
        (None, Some(p)) => std::fs::read_to_string(p)?,
        _ => {
            return Err(Error::Config(
                "pass the query with exactly one of --query or --query-file".into(),
            ))
        }
    };
    let ast = parse_query(&text)?;
    if a.print_ast {
        println!("{ast}");
    }
    let catalog = Catalog::from_dir(&a.catalog)?;
    let ws = Workspace::load(cfg)?;
    let result = execute(&ast, &catalog, &ws.dataset, &ws.extractors, &ws.evaluator, &ws.engine)?;

    let mut w = csv::Writer::from_path(&ws.config.paths.output)?;
    w.write_record(&result.columns)?;
    for row in &result.rows {
        w.write_record(row.iter().map(|v| v.render()))?;
    }
    w.flush()?;
    println!("wrote {} rows to {}", result.rows.len(), ws.config.paths.output);
    Ok(ExitCode::SUCCESS)
}

pub fn bench(a: BenchArgs, over: &Overrides) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&a.config)?;
    over.apply(&mut cfg);
    if let Some(n) = a.max_records {
        cfg.engine.max_records = n;
    }
    let ws = Workspace::load(cfg)?;
    let strategies: Vec<Strategy> = match &a.strategies {
        Some(t) => t
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                Strategy::parse_name(s.trim())
                    .ok_or_else(|| Error::Config(format!("unknown strategy {:?}", s.trim())))
            })
            .collect::<Result<_>>()?,
        None => vec![Strategy::Naive, Strategy::Merged, Strategy::EarlyStop, Strategy::Streaming],
    };
    if strategies.is_empty() {
        return Err(Error::Config("no strategies given".into()));
    }
    let plan = engine::plan(
        ws.groups.clone(),
        ws.evaluator.specs().to_vec(),
        ws.measures.clone(),
        &ws.engine,
    )?;
    let rows = engine::bench(&plan, &ws.dataset, &ws.extractors, &strategies, &ws.engine, || {
        ws.fresh_evaluator()
    })?;
    write_bench_csv(&rows, std::fs::File::create(&a.out)?)?;
    println!("wrote {} bench rows to {}", rows.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn cache_clear(a: CacheClearArgs) -> Result<ExitCode> {
    let dir: PathBuf = if let Some(d) = &a.cache_dir {
        d.clone()
    } else {
        let from_env = match std::env::var("DNI_CACHE_DIR") {
            Ok(v) if !v.is_empty() => Some(PathBuf::from(v)),
            _ => None,
        };
        match (from_env, &a.config) {
            (Some(d), _) => d,
            (None, Some(c)) => {
                let cfg = RunConfig::load_raw(c)?;
                match cfg.cache_dir() {
                    Some(d) => d,
                    None => {
                        return Err(Error::Config(format!(
                            "config {} sets no cache_dir",
                            c.display()
                        )))
                    }
                }
            }
            (None, None) => {
                return Err(Error::Config(
                    "pass --cache-dir, set DNI_CACHE_DIR, or point --config at a config with paths.cache_dir".into(),
                ))
            }
        }
    };
    let mut removed = 0usize;
    if dir.is_dir() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "dnib") {
                std::fs::remove_file(&path)?;
                removed += 1;
            }
        }
    }
    println!("removed {removed} cache files from {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

//! Query execution over a seeded catalog, checked against direct engine runs.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dni_core::dataset::SymbolDataset;
use dni_core::engine::{plan, run, EngineConfig, ExtractorMap, Strategy, UnitGroup};
use dni_core::extract::{Extractor, Specialized, SyntheticRnn};
use dni_core::grammar::ParseMode;
use dni_core::hypothesis::{BehaviorCache, HypothesisEvaluator, HypothesisSpec};
use dni_core::inspectql::{execute, parse_query, Catalog, InspectRow, Relation, Value};
use dni_core::Error;

const EPOCH_QUERY: &str = "\
   SELECT M.epoch, S.uid
  INSPECT U.uid AND H.h USING corr OVER D.seq AS S
     FROM models M, units U, hypotheses H, inputs D
    WHERE M.mid = 'sqlparser' AND M.mid = U.mid AND
          U.layer = 0 AND H.name = 'keywords'
 GROUP BY M.epoch
   HAVING S.unit_score > 0.8";

fn num(n: f64) -> Value {
    Value::Num(n)
}

fn s(text: &str) -> Value {
    Value::Str(text.into())
}

fn rel(name: &str, cols: &[&str], rows: Vec<Vec<Value>>) -> Relation {
    Relation::new(name, cols.iter().map(|c| c.to_string()).collect(), rows).unwrap()
}

/// Three checkpoints of one model plus a decoy model, 8 early-layer and 4
/// late-layer units, two registered hypotheses.
fn catalog() -> Catalog {
    let models = rel(
        "models",
        &["mid", "epoch"],
        vec![
            vec![s("sqlparser"), num(1.0)],
            vec![s("sqlparser"), num(5.0)],
            vec![s("sqlparser"), num(50.0)],
            vec![s("othermodel"), num(1.0)],
        ],
    );
    let mut unit_rows: Vec<Vec<Value>> = (0..12)
        .map(|u| vec![num(u as f64), s("sqlparser"), num(if u < 8 { 0.0 } else { 1.0 })])
        .collect();
    unit_rows.push(vec![num(0.0), s("othermodel"), num(0.0)]);
    unit_rows.push(vec![num(1.0), s("othermodel"), num(0.0)]);
    let units = rel("units", &["uid", "mid", "layer"], unit_rows);
    let hypotheses = rel(
        "hypotheses",
        &["h", "name"],
        vec![vec![s("h_kw"), s("keywords")], vec![s("h_par"), s("parens")]],
    );
    let inputs = rel("inputs", &["seq"], vec![vec![s("abcab")], vec![s("ccba")]]);
    Catalog::new(vec![models, units, hypotheses, inputs]).unwrap()
}

fn dataset() -> SymbolDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let lines: Vec<String> = (0..600)
        .map(|_| {
            let len = rng.gen_range(3..=12);
            (0..len).map(|_| *['a', 'b', 'c', '('].choose(&mut rng).unwrap()).collect()
        })
        .collect();
    SymbolDataset::from_records(&lines, 12, '~', None).unwrap()
}

fn hyp_specs() -> Vec<HypothesisSpec> {
    vec![HypothesisSpec::keyword("h_kw", "ab"), HypothesisSpec::keyword("h_par", "(")]
}

fn evaluator() -> HypothesisEvaluator<f64> {
    HypothesisEvaluator::new(hyp_specs(), None, ParseMode::Viterbi, Arc::new(BehaviorCache::disabled()))
        .unwrap()
}

/// Units 0..=3 of the main model track the keyword hypothesis strongly.
fn extractors() -> ExtractorMap<f64> {
    let mut m = ExtractorMap::new();
    let sp = Specialized::new(
        7,
        12,
        vec![0, 1, 2, 3],
        0.9,
        0.05,
        HypothesisSpec::keyword("h_kw", "ab"),
        None,
        ParseMode::Viterbi,
    );
    m.insert("sqlparser".to_string(), Box::new(sp) as Box<dyn Extractor<f64>>);
    m.insert("othermodel".to_string(), Box::new(SyntheticRnn::new(99, 4)));
    m
}

fn config(strategy: Strategy) -> EngineConfig {
    EngineConfig { strategy, n_b: 128, seed: 9, ..EngineConfig::default() }
}

#[test]
fn epoch_query_matches_direct_engine_oracle() {
    let ds = dataset();
    let cat = catalog();
    let ex = extractors();
    let ev = evaluator();
    let ast = parse_query(EPOCH_QUERY).unwrap();

    for strategy in [Strategy::Naive, Strategy::Streaming] {
        let cfg = config(strategy);
        let got = execute(&ast, &cat, &ds, &ex, &ev, &cfg).unwrap();
        assert_eq!(got.columns, vec!["M.epoch".to_string(), "S.uid".to_string()]);

        // Oracle: score the layer-0 units of the named model directly, then
        // apply the relational part by hand.
        let group = UnitGroup::new("oracle", "sqlparser", (0..8).collect()).unwrap();
        let measure = cfg.measure_spec("corr", dni_core::measures::MeasureKind::Pearson);
        let p = plan(
            vec![group],
            vec![HypothesisSpec::keyword("h_kw", "ab")],
            vec![measure],
            &cfg,
        )
        .unwrap();
        let direct = run(&p, &ds, &ex, &ev, &cfg).unwrap();
        assert_eq!(direct.results.len(), 8);

        let mut want_rows: Vec<Vec<Value>> = Vec::new();
        let mut want_inspect: Vec<InspectRow> = Vec::new();
        for epoch in [1.0, 5.0, 50.0] {
            for r in &direct.results {
                want_inspect.push(InspectRow {
                    group_key: vec![num(epoch)],
                    uid: r.unit_id.unwrap(),
                    hid: r.hyp_id.clone(),
                    mid: r.model_id.clone(),
                    group_score: r.group_score,
                    unit_score: r.unit_score,
                });
                if r.unit_score.is_some_and(|v| v > 0.8) {
                    want_rows.push(vec![num(epoch), num(r.unit_id.unwrap() as f64)]);
                }
            }
        }
        assert_eq!(got.inspect_rows, want_inspect, "{strategy}");
        assert_eq!(got.rows, want_rows, "{strategy}");
        // Non-vacuous: the specialized units pass the HAVING cut per epoch.
        assert_eq!(got.rows.len(), 4 * 3, "{strategy}");
    }
}

#[test]
fn where_pushes_unit_filters_into_the_scored_set() {
    let ds = dataset();
    let got = execute(
        &parse_query(EPOCH_QUERY).unwrap(),
        &catalog(),
        &ds,
        &extractors(),
        &evaluator(),
        &config(Strategy::Streaming),
    )
    .unwrap();
    // Only layer-0 units of the named model are scored at all.
    assert_eq!(got.inspect_rows.len(), 8 * 3);
    for r in &got.inspect_rows {
        assert!(r.uid < 8, "layer-1 unit {} leaked into the inspect relation", r.uid);
        assert_eq!(r.mid, "sqlparser");
        assert_eq!(r.hid, "h_kw");
    }
}

#[test]
fn group_by_epoch_yields_one_group_per_models_row() {
    let ds = dataset();
    let got = execute(
        &parse_query(EPOCH_QUERY).unwrap(),
        &catalog(),
        &ds,
        &extractors(),
        &evaluator(),
        &config(Strategy::Streaming),
    )
    .unwrap();
    let mut keys: Vec<Vec<Value>> = Vec::new();
    for r in &got.inspect_rows {
        if !keys.contains(&r.group_key) {
            keys.push(r.group_key.clone());
        }
        // Correlation is an independent measure: group score mirrors the
        // unit score.
        assert_eq!(r.group_score, r.unit_score);
    }
    assert_eq!(keys, vec![vec![num(1.0)], vec![num(5.0)], vec![num(50.0)]]);
}

#[test]
fn having_and_projection_filter_exactly() {
    let ds = dataset();
    let query = "SELECT M.epoch, S.uid, S.unit_score \
                 INSPECT U.uid AND H.h OVER D.seq AS S \
                 FROM models M, units U, hypotheses H, inputs D \
                 WHERE M.mid = 'sqlparser' AND M.mid = U.mid AND H.name = 'keywords' \
                 GROUP BY M.epoch HAVING S.unit_score > 0.5";
    let got = execute(
        &parse_query(query).unwrap(),
        &catalog(),
        &ds,
        &extractors(),
        &evaluator(),
        &config(Strategy::Streaming),
    )
    .unwrap();
    let want: Vec<Vec<Value>> = got
        .inspect_rows
        .iter()
        .filter(|r| r.unit_score.is_some_and(|v| v > 0.5))
        .map(|r| {
            vec![r.group_key[0].clone(), num(r.uid as f64), num(r.unit_score.unwrap())]
        })
        .collect();
    assert_eq!(got.rows, want);
    assert!(!got.rows.is_empty());
    assert!(got.rows.len() < got.inspect_rows.len(), "HAVING should drop some rows");
}

#[test]
fn logreg_group_scores_fold_into_unit_rows() {
    let ds = dataset();
    let query = "SELECT S.uid INSPECT U.uid AND H.h USING corr, logistic OVER D.seq AS S \
                 FROM models M, units U, hypotheses H, inputs D \
                 WHERE M.mid = 'sqlparser' AND M.mid = U.mid AND U.layer = 0 AND H.name = 'keywords'";
    let got = execute(
        &parse_query(query).unwrap(),
        &catalog(),
        &ds,
        &extractors(),
        &evaluator(),
        &config(Strategy::Streaming),
    )
    .unwrap();
    // No GROUP BY: a single group, two measures, eight units each.
    assert_eq!(got.inspect_rows.len(), 8 * 2);
    for r in &got.inspect_rows {
        assert!(r.group_key.is_empty());
        assert!(r.group_score.is_some(), "{r:?}");
        assert!(r.unit_score.is_some(), "{r:?}");
    }
    // Logreg rows share the group F1 while unit scores vary; they are the
    // rows whose group score differs from their unit score.
    let joint: Vec<&InspectRow> =
        got.inspect_rows.iter().filter(|r| r.group_score != r.unit_score).collect();
    assert_eq!(joint.len(), 8);
    let f1 = joint[0].group_score;
    assert!(joint.iter().all(|r| r.group_score == f1), "one shared group score");
}

#[test]
fn ungrouped_and_unknown_references_are_rejected() {
    let ds = dataset();
    let cat = catalog();
    let ex = extractors();
    let ev = evaluator();
    let cfg = config(Strategy::Streaming);
    let check = |query: &str, needle: &str| {
        let err = execute(&parse_query(query).unwrap(), &cat, &ds, &ex, &ev, &cfg).unwrap_err();
        let text = err.to_string();
        assert!(text.contains(needle), "query {query:?}: expected {needle:?} in {text:?}");
    };

    // Selecting a column that is neither a group key nor an inspect column.
    check(
        "SELECT U.layer INSPECT U.uid AND H.h OVER D.seq \
         FROM models M, units U, hypotheses H, inputs D \
         WHERE M.mid = U.mid GROUP BY M.epoch",
        "GROUP BY key",
    );
    check(
        "SELECT S.uid INSPECT U.uid AND H.h OVER D.seq AS S \
         FROM models M, units U, hypotheses H, inputs D \
         WHERE M.mid = U.mid GROUP BY M.epoch HAVING U.layer > 0",
        "GROUP BY key",
    );
    // Unknown relation and unknown column.
    check(
        "SELECT S.uid INSPECT U.uid AND H.h OVER D.seq AS S \
         FROM modelz M, units U, hypotheses H, inputs D",
        "unknown relation",
    );
    check(
        "SELECT S.uid INSPECT U.uid AND H.h OVER D.seq AS S \
         FROM models M, units U, hypotheses H, inputs D WHERE U.nosuch = 1",
        "no column",
    );
    // Filtering the OVER relation is out of scope.
    check(
        "SELECT S.uid INSPECT U.uid AND H.h OVER D.seq AS S \
         FROM models M, units U, hypotheses H, inputs D WHERE D.seq = 'abc'",
        "inputs relation",
    );
    // A hypothesis row that no registered spec backs.
    let mut bad = catalog();
    let extra = rel("extra_hyps", &["h", "name"], vec![vec![s("ghost"), s("keywords")]]);
    bad = Catalog::new(
        bad.relation_names()
            .map(|n| bad.relation(n).unwrap().clone())
            .filter(|r| r.name != "hypotheses")
            .chain(std::iter::once(Relation { name: "hypotheses".into(), ..extra }))
            .collect(),
    )
    .unwrap();
    let err = execute(
        &parse_query(
            "SELECT S.uid INSPECT U.uid AND H.h OVER D.seq AS S \
             FROM models M, units U, hypotheses H, inputs D WHERE M.mid = U.mid",
        )
        .unwrap(),
        &bad,
        &ds,
        &ex,
        &ev,
        &cfg,
    )
    .unwrap_err();
    assert!(err.to_string().contains("not registered"), "{err}");

    // An empty hypothesis selection is an error, not an empty result.
    let err = execute(
        &parse_query(
            "SELECT S.uid INSPECT U.uid AND H.h OVER D.seq AS S \
             FROM models M, units U, hypotheses H, inputs D \
             WHERE M.mid = U.mid AND H.name = 'nope'",
        )
        .unwrap(),
        &cat,
        &ds,
        &ex,
        &ev,
        &cfg,
    )
    .unwrap_err();
    assert!(matches!(err, Error::EmptyInput(_)), "{err}");
}

#[test]
fn catalog_enforces_unit_model_integrity() {
    let models = rel("models", &["mid", "epoch"], vec![vec![s("m1"), num(1.0)]]);
    let units = rel("units", &["uid", "mid"], vec![vec![num(0.0), s("ghost")]]);
    let err = Catalog::new(vec![models, units]).unwrap_err();
    assert!(matches!(err, Error::Catalog(_)), "{err}");
    assert!(err.to_string().contains("ghost"), "{err}");
}

#[test]
fn catalog_loads_relations_from_csv_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("models.csv"),
        "mid,epoch\nsqlparser,1\nsqlparser,5\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("units.csv"),
        "uid,mid,layer\n0,sqlparser,0\n1,sqlparser,\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored\n").unwrap();

    let cat = Catalog::from_dir(dir.path()).unwrap();
    assert_eq!(cat.relation_names().collect::<Vec<_>>(), vec!["models", "units"]);
    let units = cat.relation("units").unwrap();
    assert_eq!(units.columns, vec!["uid", "mid", "layer"]);
    assert_eq!(units.rows[0], vec![num(0.0), s("sqlparser"), num(0.0)]);
    // Empty cells load as nulls, which never satisfy a comparison.
    assert_eq!(units.rows[1][2], Value::Null);

    // Broken referential integrity surfaces at load time.
    std::fs::write(dir.path().join("units.csv"), "uid,mid\n0,ghost\n").unwrap();
    assert!(Catalog::from_dir(dir.path()).is_err());
}

//! The INSPECT query dialect: a small SQL subset whose INSPECT clause runs
//! the scoring engine and exposes the scores as a temporary relation.
//!
//! The catalog holds plain relations (`models`, `units`, `hypotheses`,
//! `inputs`) loaded from CSV files. A query selects unit rows via FROM/WHERE,
//! forms one unit group per GROUP BY key (split per model id, since a group
//! is scored against one model's extractor), picks the hypothesis set from
//! the hypotheses relation, and runs the engine. The INSPECT clause then
//! yields rows of schema `(uid, hid, mid, group_score, unit_score)`, one per
//! scored unit; group-level logreg rows are folded into their unit rows
//! (every unit row carries its group's score). HAVING filters that relation,
//! SELECT projects it.
//!
//! Restrictions, chosen to keep semantics unambiguous: WHERE and HAVING are
//! conjunctions of comparisons; predicates may not filter the OVER (inputs)
//! relation; hypothesis predicates may not join other relations; every
//! SELECT or HAVING column must be a group key or an inspect column.

pub mod ast;
mod parser;

pub use ast::{
    CmpOp, ColRef, FromItem, InspectClause, Literal, Operand, Predicate, QueryAst,
    INSPECT_COLUMNS,
};
pub use parser::parse_query;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::dataset::SymbolDataset;
use crate::engine::{self, EngineConfig, ExtractorMap, UnitGroup};
use crate::error::{Error, Result};
use crate::hypothesis::{HypothesisEvaluator, HypothesisSpec};
use crate::measures::{MeasureKind, MeasureSpec};
use crate::scalar::Scalar;

/// One catalog cell. CSV cells that parse as numbers load as `Num`; empty
/// cells as `Null`.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Num(f64),
    Str(String),
}

impl Value {
    pub fn parse_cell(cell: &str) -> Value {
        let t = cell.trim();
        if t.is_empty() {
            Value::Null
        } else if let Ok(n) = t.parse::<f64>() {
            Value::Num(n)
        } else {
            Value::Str(t.to_string())
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(*n),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Num(n) => n.to_string(),
            Value::Str(s) => s.clone(),
        }
    }
}

/// Comparisons are typed: numbers compare with numbers, strings with
/// strings; anything else (including any Null) compares false.
fn compare(a: &Value, op: CmpOp, b: &Value) -> bool {
    let ord = match (a, b) {
        (Value::Num(x), Value::Num(y)) => x.partial_cmp(y),
        (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
        _ => None,
    };
    let Some(ord) = ord else { return false };
    match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    }
}

fn lit_value(l: &Literal) -> Value {
    match l {
        Literal::Str(s) => Value::Str(s.clone()),
        Literal::Num(n) => Value::Num(*n),
    }
}

#[derive(Debug, Clone)]
pub struct Relation {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Relation {
    pub fn new(name: impl Into<String>, columns: Vec<String>, rows: Vec<Vec<Value>>) -> Result<Self> {
        let name = name.into();
        if let Some(bad) = rows.iter().find(|r| r.len() != columns.len()) {
            return Err(Error::Catalog(format!(
                "relation {name}: row with {} cells, expected {}",
                bad.len(),
                columns.len()
            )));
        }
        Ok(Relation { name, columns, rows })
    }

    pub fn column_index(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Catalog(format!("bad relation file name {}", path.display())))?
            .to_string();
        let mut reader = csv::Reader::from_path(path)?;
        let columns: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            rows.push(record.iter().map(Value::parse_cell).collect());
        }
        Relation::new(name, columns, rows)
    }
}

/// In-memory catalog of named relations.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    relations: BTreeMap<String, Relation>,
}

impl Catalog {
    pub fn new(relations: Vec<Relation>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for r in relations {
            let name = r.name.clone();
            if map.insert(name.clone(), r).is_some() {
                return Err(Error::Catalog(format!("duplicate relation {name}")));
            }
        }
        let c = Catalog { relations: map };
        c.validate()?;
        Ok(c)
    }

    /// Loads every `*.csv` file in `dir` as a relation named by file stem.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        paths.sort();
        let mut relations = Vec::new();
        for p in paths {
            relations.push(Relation::from_csv_path(&p)?);
        }
        Catalog::new(relations)
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.get(name)
    }

    pub fn relation_names(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(|s| s.as_str())
    }

    /// Referential integrity: every units.mid must name a models row.
    fn validate(&self) -> Result<()> {
        let (Some(units), Some(models)) = (self.relation("units"), self.relation("models"))
        else {
            return Ok(());
        };
        let (Some(umid), Some(mmid)) = (units.column_index("mid"), models.column_index("mid"))
        else {
            return Ok(());
        };
        let known: BTreeSet<String> = models.rows.iter().map(|r| r[mmid].render()).collect();
        for row in &units.rows {
            let mid = row[umid].render();
            if !known.contains(&mid) {
                return Err(Error::Catalog(format!("units.mid {mid:?} has no models row")));
            }
        }
        Ok(())
    }
}

/// One row of the flattened inspect relation, tagged with its group key so
/// HAVING and SELECT can reference grouped attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct InspectRow {
    pub group_key: Vec<Value>,
    pub uid: u32,
    pub hid: String,
    pub mid: String,
    pub group_score: Option<f64>,
    pub unit_score: Option<f64>,
}

impl InspectRow {
    pub fn column(&self, name: &str) -> Option<Value> {
        Some(match name {
            "uid" => Value::Num(self.uid as f64),
            "hid" => Value::Str(self.hid.clone()),
            "mid" => Value::Str(self.mid.clone()),
            "group_score" => self.group_score.map(Value::Num).unwrap_or(Value::Null),
            "unit_score" => self.unit_score.map(Value::Num).unwrap_or(Value::Null),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// The full inspect relation before HAVING and projection.
    pub inspect_rows: Vec<InspectRow>,
}

/// Where a SELECT or HAVING column reads from.
enum ColSource {
    Inspect(&'static str),
    Key(usize),
}

struct GroupAcc {
    key: Vec<Value>,
    /// Model ids in first-appearance order, each with its unit set.
    mids: Vec<(String, BTreeSet<u32>)>,
}

fn cross_indices(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![Vec::new()];
    for &s in sizes {
        let mut next = Vec::with_capacity(out.len().saturating_mul(s));
        for prefix in &out {
            for i in 0..s {
                let mut p = prefix.clone();
                p.push(i);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Runs a parsed query against a catalog: selects units and hypotheses,
/// invokes the engine over `dataset`, and evaluates HAVING and SELECT on the
/// flattened inspect relation.
pub fn execute<S: Scalar>(
    ast: &QueryAst,
    catalog: &Catalog,
    dataset: &SymbolDataset,
    extractors: &ExtractorMap<S>,
    evaluator: &HypothesisEvaluator<S>,
    config: &EngineConfig,
) -> Result<QueryResult> {
    // Bind FROM aliases.
    let mut rels: BTreeMap<&str, &Relation> = BTreeMap::new();
    for item in &ast.from {
        let rel = catalog
            .relation(&item.relation)
            .ok_or_else(|| Error::Catalog(format!("unknown relation {}", item.relation)))?;
        let alias = item.effective_alias();
        if rels.insert(alias, rel).is_some() {
            return Err(Error::Catalog(format!("duplicate relation alias {alias}")));
        }
    }
    let inspect_alias = ast.inspect.alias.as_deref();
    if let Some(a) = inspect_alias {
        if rels.contains_key(a) {
            return Err(Error::Catalog(format!("inspect alias {a} collides with a FROM alias")));
        }
    }

    let qual = |c: &ColRef, what: &str| -> Result<String> {
        c.table
            .clone()
            .ok_or_else(|| Error::Catalog(format!("{what} must be table-qualified, got {c}")))
    };
    let unit_alias = qual(&ast.inspect.unit, "inspect unit expression")?;
    let hyp_alias = qual(&ast.inspect.hypothesis, "inspect hypothesis expression")?;
    let over_alias = qual(&ast.inspect.over, "OVER expression")?;
    for a in [&unit_alias, &hyp_alias, &over_alias] {
        if !rels.contains_key(a.as_str()) {
            return Err(Error::Catalog(format!("alias {a} does not appear in FROM")));
        }
    }
    if unit_alias == hyp_alias || unit_alias == over_alias || hyp_alias == over_alias {
        return Err(Error::Catalog(
            "unit, hypothesis, and OVER expressions must use distinct relations".into(),
        ));
    }
    let over_rel = rels[over_alias.as_str()];
    if over_rel.column_index(&ast.inspect.over.column).is_none() {
        return Err(Error::Catalog(format!(
            "relation {} has no column {}",
            over_rel.name, ast.inspect.over.column
        )));
    }

    // Split the WHERE conjunction: hypothesis-only predicates filter the
    // hypothesis relation; everything else filters the unit-side join.
    let mut hyp_preds: Vec<&Predicate> = Vec::new();
    let mut unit_preds: Vec<&Predicate> = Vec::new();
    for p in &ast.where_clause {
        let mut refs: BTreeSet<&str> = BTreeSet::new();
        for o in [&p.left, &p.right] {
            if let Operand::Col(c) = o {
                let t = c.table.as_deref().ok_or_else(|| {
                    Error::Catalog(format!("WHERE column {c} must be table-qualified"))
                })?;
                if !rels.contains_key(t) {
                    return Err(Error::Catalog(format!("unknown alias {t} in WHERE")));
                }
                refs.insert(t);
            }
        }
        if refs.contains(over_alias.as_str()) {
            return Err(Error::Catalog("filtering the inputs relation is not supported".into()));
        }
        if refs.contains(hyp_alias.as_str()) {
            if refs.len() > 1 {
                return Err(Error::Catalog(
                    "hypothesis predicates cannot reference other relations".into(),
                ));
            }
            hyp_preds.push(p);
        } else {
            unit_preds.push(p);
        }
    }

    // Hypothesis ids in catalog order.
    let hyp_rel = rels[hyp_alias.as_str()];
    let hid_col = hyp_rel.column_index(&ast.inspect.hypothesis.column).ok_or_else(|| {
        Error::Catalog(format!(
            "relation {} has no column {}",
            hyp_rel.name, ast.inspect.hypothesis.column
        ))
    })?;
    let single = |p: &Predicate, rel: &Relation, row: &[Value]| -> Result<bool> {
        let get = |o: &Operand| -> Result<Value> {
            match o {
                Operand::Lit(l) => Ok(lit_value(l)),
                Operand::Col(c) => {
                    let ci = rel.column_index(&c.column).ok_or_else(|| {
                        Error::Catalog(format!("relation {} has no column {}", rel.name, c.column))
                    })?;
                    Ok(row[ci].clone())
                }
            }
        };
        Ok(compare(&get(&p.left)?, p.op, &get(&p.right)?))
    };
    let mut hyp_ids: Vec<String> = Vec::new();
    for row in &hyp_rel.rows {
        let mut keep = true;
        for p in &hyp_preds {
            keep &= single(p, hyp_rel, row)?;
        }
        if keep {
            let hid = row[hid_col].render();
            if !hyp_ids.contains(&hid) {
                hyp_ids.push(hid);
            }
        }
    }
    if hyp_ids.is_empty() {
        return Err(Error::EmptyInput("no hypotheses selected".into()));
    }
    let mut hyp_specs: Vec<HypothesisSpec> = Vec::new();
    for id in &hyp_ids {
        let spec = evaluator
            .spec(id)
            .ok_or_else(|| Error::Catalog(format!("hypothesis {id} is not registered")))?;
        hyp_specs.push(spec.clone());
    }

    // Unit-side join: cross product of the non-hypothesis, non-input
    // relations, filtered by the remaining predicates.
    let side_aliases: Vec<&str> = ast
        .from
        .iter()
        .map(|f| f.effective_alias())
        .filter(|a| *a != hyp_alias && *a != over_alias)
        .collect();
    let side_rels: Vec<&Relation> = side_aliases.iter().map(|a| rels[*a]).collect();
    let resolve_side = |row_ix: &[usize], c: &ColRef| -> Result<Value> {
        let t = c.table.as_deref().expect("qualification checked earlier");
        let i = side_aliases
            .iter()
            .position(|a| *a == t)
            .ok_or_else(|| Error::Catalog(format!("alias {t} is not a unit-side relation")))?;
        let rel = side_rels[i];
        let ci = rel.column_index(&c.column).ok_or_else(|| {
            Error::Catalog(format!("relation {} has no column {}", rel.name, c.column))
        })?;
        Ok(rel.rows[row_ix[i]][ci].clone())
    };
    for c in &ast.group_by {
        let t = qual(c, "GROUP BY column")?;
        if !side_aliases.contains(&t.as_str()) {
            return Err(Error::Catalog(format!(
                "GROUP BY column {c} must reference a unit-side relation"
            )));
        }
    }

    let sizes: Vec<usize> = side_rels.iter().map(|r| r.rows.len()).collect();
    let mut groups: Vec<GroupAcc> = Vec::new();
    let mut group_ix: HashMap<String, usize> = HashMap::new();
    for row_ix in cross_indices(&sizes) {
        let mut keep = true;
        for p in &unit_preds {
            let get = |o: &Operand| -> Result<Value> {
                match o {
                    Operand::Lit(l) => Ok(lit_value(l)),
                    Operand::Col(c) => resolve_side(&row_ix, c),
                }
            };
            keep &= compare(&get(&p.left)?, p.op, &get(&p.right)?);
            if !keep {
                break;
            }
        }
        if !keep {
            continue;
        }
        let uid_v = resolve_side(&row_ix, &ast.inspect.unit)?;
        let uid = match uid_v {
            Value::Num(n) if n.fract() == 0.0 && n >= 0.0 && n <= f64::from(u32::MAX) => n as u32,
            other => {
                return Err(Error::Catalog(format!(
                    "unit id {:?} is not a non-negative integer",
                    other.render()
                )))
            }
        };
        let mid =
            resolve_side(&row_ix, &ColRef::new(unit_alias.clone(), "mid"))?.render();
        let key: Vec<Value> =
            ast.group_by.iter().map(|c| resolve_side(&row_ix, c)).collect::<Result<_>>()?;
        let rendered = key.iter().map(Value::render).collect::<Vec<_>>().join("\u{1f}");
        let gi = match group_ix.get(&rendered) {
            Some(&gi) => gi,
            None => {
                group_ix.insert(rendered, groups.len());
                groups.push(GroupAcc { key, mids: Vec::new() });
                groups.len() - 1
            }
        };
        let acc = &mut groups[gi];
        match acc.mids.iter_mut().find(|(m, _)| *m == mid) {
            Some((_, set)) => {
                set.insert(uid);
            }
            None => {
                acc.mids.push((mid, BTreeSet::from([uid])));
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput("no units selected".into()));
    }

    let mut unit_groups: Vec<UnitGroup> = Vec::new();
    let mut provenance: Vec<usize> = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        for (mid, uids) in &g.mids {
            unit_groups.push(UnitGroup::new(
                format!("g{}", unit_groups.len()),
                mid.clone(),
                uids.iter().copied().collect(),
            )?);
            provenance.push(gi);
        }
    }

    // Measures: the dialect defaults to correlation.
    let names: Vec<String> = if ast.inspect.measures.is_empty() {
        vec!["corr".into()]
    } else {
        ast.inspect.measures.clone()
    };
    let mut measures: Vec<MeasureSpec> = Vec::new();
    for name in &names {
        let kind = MeasureKind::parse_name(name)
            .ok_or_else(|| Error::Catalog(format!("unknown measure {name}")))?;
        measures.push(config.measure_spec(name.to_ascii_lowercase(), kind));
    }

    let p = engine::plan(unit_groups, hyp_specs, measures, config)?;
    let out = engine::run(&p, dataset, extractors, evaluator, config)?;

    // Flatten engine rows back into inspect rows by walking the engine's
    // fixed emission order; group-level logreg rows fold into unit rows.
    let mut inspect_rows: Vec<InspectRow> = Vec::new();
    let mut cursor = out.results.iter();
    for (ti, group) in p.groups.iter().enumerate() {
        let gi = provenance[ti];
        for measure in &p.measures {
            for _ in &p.hypotheses {
                if measure.kind.is_joint() {
                    let head = cursor.next().expect("group-level row");
                    debug_assert!(head.unit_id.is_none());
                }
                for _ in &group.unit_ids {
                    let r = cursor.next().expect("unit row");
                    debug_assert_eq!(r.model_id, group.model_id);
                    inspect_rows.push(InspectRow {
                        group_key: groups[gi].key.clone(),
                        uid: r.unit_id.expect("unit row"),
                        hid: r.hyp_id.clone(),
                        mid: r.model_id.clone(),
                        group_score: r.group_score,
                        unit_score: r.unit_score,
                    });
                }
            }
        }
    }
    debug_assert!(cursor.next().is_none());

    // Static resolution for HAVING and SELECT columns.
    let classify = |c: &ColRef| -> Result<ColSource> {
        let inspect_col = match (&c.table, inspect_alias) {
            (Some(t), Some(a)) => t == a,
            (None, _) => INSPECT_COLUMNS.contains(&c.column.as_str()),
            (Some(_), None) => false,
        };
        if inspect_col {
            return INSPECT_COLUMNS
                .iter()
                .find(|n| **n == c.column)
                .map(|n| ColSource::Inspect(n))
                .ok_or_else(|| {
                    Error::Catalog(format!("inspect relation has no column {}", c.column))
                });
        }
        if let Some(i) = ast.group_by.iter().position(|k| k == c) {
            return Ok(ColSource::Key(i));
        }
        Err(Error::Catalog(format!(
            "column {c} must be a GROUP BY key or an inspect column"
        )))
    };
    let value_of = |row: &InspectRow, src: &ColSource| -> Value {
        match src {
            ColSource::Inspect(name) => row.column(name).expect("validated inspect column"),
            ColSource::Key(i) => row.group_key[*i].clone(),
        }
    };

    enum Side {
        Src(ColSource),
        Lit(Value),
    }
    let classify_operand = |o: &Operand| -> Result<Side> {
        Ok(match o {
            Operand::Lit(l) => Side::Lit(lit_value(l)),
            Operand::Col(c) => Side::Src(classify(c)?),
        })
    };
    let having: Vec<(Side, CmpOp, Side)> = ast
        .having
        .iter()
        .map(|p| Ok((classify_operand(&p.left)?, p.op, classify_operand(&p.right)?)))
        .collect::<Result<_>>()?;
    let select: Vec<ColSource> =
        ast.select.iter().map(|c| classify(c)).collect::<Result<_>>()?;

    let side_value = |row: &InspectRow, s: &Side| -> Value {
        match s {
            Side::Src(src) => value_of(row, src),
            Side::Lit(v) => v.clone(),
        }
    };
    let rows: Vec<Vec<Value>> = inspect_rows
        .iter()
        .filter(|row| {
            having.iter().all(|(l, op, r)| compare(&side_value(row, l), *op, &side_value(row, r)))
        })
        .map(|row| select.iter().map(|src| value_of(row, src)).collect())
        .collect();

    Ok(QueryResult {
        columns: ast.select.iter().map(|c| c.to_string()).collect(),
        rows,
        inspect_rows,
    })
}

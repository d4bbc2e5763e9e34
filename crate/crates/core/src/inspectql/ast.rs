//! Query AST and its canonical single-line printing. Parsing the printed
//! form yields an identical AST, which the tests rely on.

use std::fmt;

/// Optionally table-qualified column reference, e.g. `M.epoch` or `epoch`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColRef {
    pub table: Option<String>,
    pub column: String,
}

impl ColRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColRef { table: Some(table.into()), column: column.into() }
    }

    pub fn bare(column: impl Into<String>) -> Self {
        ColRef { table: None, column: column.into() }
    }
}

impl fmt::Display for ColRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.table {
            Some(t) => write!(f, "{t}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    Num(f64),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => write!(f, "'{s}'"),
            Literal::Num(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Col(ColRef),
    Lit(Literal),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Col(c) => c.fmt(f),
            Operand::Lit(l) => l.fmt(f),
        }
    }
}

/// One comparison; WHERE and HAVING are conjunctions of these.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub left: Operand,
    pub op: CmpOp,
    pub right: Operand,
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.left, self.op, self.right)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FromItem {
    pub relation: String,
    pub alias: Option<String>,
}

impl FromItem {
    pub fn effective_alias(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.relation)
    }
}

impl fmt::Display for FromItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.alias {
            Some(a) => write!(f, "{} {a}", self.relation),
            None => f.write_str(&self.relation),
        }
    }
}

/// The INSPECT clause: which unit and hypothesis ids to score, under which
/// measures, over which input sequences, and the alias of the resulting
/// temporary relation.
#[derive(Debug, Clone, PartialEq)]
pub struct InspectClause {
    pub unit: ColRef,
    pub hypothesis: ColRef,
    /// Measure names as written; empty means the default (correlation).
    pub measures: Vec<String>,
    pub over: ColRef,
    pub alias: Option<String>,
}

/// Columns of the temporary relation an INSPECT clause produces.
pub const INSPECT_COLUMNS: [&str; 5] = ["uid", "hid", "mid", "group_score", "unit_score"];

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAst {
    pub select: Vec<ColRef>,
    pub inspect: InspectClause,
    pub from: Vec<FromItem>,
    pub where_clause: Vec<Predicate>,
    pub group_by: Vec<ColRef>,
    pub having: Vec<Predicate>,
}

fn join<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T], sep: &str) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(sep)?;
        }
        item.fmt(f)?;
    }
    Ok(())
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        join(f, &self.select, ", ")?;
        write!(f, " INSPECT {} AND {}", self.inspect.unit, self.inspect.hypothesis)?;
        if !self.inspect.measures.is_empty() {
            f.write_str(" USING ")?;
            for (i, m) in self.inspect.measures.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                f.write_str(m)?;
            }
        }
        write!(f, " OVER {}", self.inspect.over)?;
        if let Some(alias) = &self.inspect.alias {
            write!(f, " AS {alias}")?;
        }
        f.write_str(" FROM ")?;
        join(f, &self.from, ", ")?;
        if !self.where_clause.is_empty() {
            f.write_str(" WHERE ")?;
            join(f, &self.where_clause, " AND ")?;
        }
        if !self.group_by.is_empty() {
            f.write_str(" GROUP BY ")?;
            join(f, &self.group_by, ", ")?;
        }
        if !self.having.is_empty() {
            f.write_str(" HAVING ")?;
            join(f, &self.having, " AND ")?;
        }
        Ok(())
    }
}

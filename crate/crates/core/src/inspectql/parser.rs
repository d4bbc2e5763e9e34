//! Recursive-descent parser for the INSPECT dialect. Errors carry the 1-based
//! line and column of the offending token.

use crate::error::{Error, Result};
use crate::measures::MeasureKind;

use super::ast::{
    CmpOp, ColRef, FromItem, InspectClause, Literal, Operand, Predicate, QueryAst,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Comma,
    Op(CmpOp),
    Eof,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

const KEYWORDS: [&str; 11] =
    ["SELECT", "INSPECT", "AND", "USING", "OVER", "AS", "FROM", "WHERE", "GROUP", "BY", "HAVING"];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| s.eq_ignore_ascii_case(k))
}

fn lex(text: &str) -> Result<Vec<Spanned>> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    macro_rules! bump {
        () => {{
            let c = chars.next();
            match c {
                Some('\n') => {
                    line += 1;
                    col = 1;
                }
                Some(_) => col += 1,
                None => {}
            }
            c
        }};
    }
    loop {
        let (tl, tc) = (line, col);
        let Some(&c) = chars.peek() else {
            out.push(Spanned { tok: Tok::Eof, line, col });
            return Ok(out);
        };
        match c {
            c if c.is_whitespace() => {
                bump!();
            }
            ',' => {
                bump!();
                out.push(Spanned { tok: Tok::Comma, line: tl, col: tc });
            }
            '=' => {
                bump!();
                out.push(Spanned { tok: Tok::Op(CmpOp::Eq), line: tl, col: tc });
            }
            '!' => {
                bump!();
                if chars.peek() == Some(&'=') {
                    bump!();
                    out.push(Spanned { tok: Tok::Op(CmpOp::Ne), line: tl, col: tc });
                } else {
                    return Err(Error::query(tl, tc, "expected '=' after '!'"));
                }
            }
            '<' => {
                bump!();
                let op = match chars.peek() {
                    Some('=') => {
                        bump!();
                        CmpOp::Le
                    }
                    Some('>') => {
                        bump!();
                        CmpOp::Ne
                    }
                    _ => CmpOp::Lt,
                };
                out.push(Spanned { tok: Tok::Op(op), line: tl, col: tc });
            }
            '>' => {
                bump!();
                let op = if chars.peek() == Some(&'=') {
                    bump!();
                    CmpOp::Ge
                } else {
                    CmpOp::Gt
                };
                out.push(Spanned { tok: Tok::Op(op), line: tl, col: tc });
            }
            '\'' => {
                bump!();
                let mut s = String::new();
                loop {
                    match bump!() {
                        Some('\'') => break,
                        Some(c) => s.push(c),
                        None => return Err(Error::query(tl, tc, "unterminated string literal")),
                    }
                }
                out.push(Spanned { tok: Tok::Str(s), line: tl, col: tc });
            }
            c if c.is_ascii_digit() || c == '-' => {
                let mut s = String::new();
                s.push(bump!().unwrap());
                if s == "-" && !chars.peek().is_some_and(|c| c.is_ascii_digit()) {
                    return Err(Error::query(tl, tc, "expected digits after '-'"));
                }
                while chars.peek().is_some_and(|&c| c.is_ascii_digit() || c == '.') {
                    s.push(bump!().unwrap());
                }
                let n: f64 = s
                    .parse()
                    .map_err(|_| Error::query(tl, tc, format!("bad number literal {s:?}")))?;
                out.push(Spanned { tok: Tok::Num(n), line: tl, col: tc });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while chars
                    .peek()
                    .is_some_and(|&c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
                {
                    s.push(bump!().unwrap());
                }
                // Qualified names lex as one token and are split here so the
                // dot cannot be separated from its parts by whitespace.
                out.push(Spanned { tok: Tok::Ident(s), line: tl, col: tc });
            }
            other => return Err(Error::query(tl, tc, format!("unexpected character {other:?}"))),
        }
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_at(&self, msg: impl Into<String>) -> Error {
        let t = self.peek();
        Error::query(t.line, t.col, msg)
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.err_at(format!("expected {kw}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match &self.peek().tok {
            Tok::Ident(s) if !is_keyword(s) && !s.contains('.') => {
                let s = s.clone();
                self.next();
                Ok(s)
            }
            _ => Err(self.err_at(format!("expected {what}"))),
        }
    }

    fn col_ref(&mut self) -> Result<ColRef> {
        match &self.peek().tok {
            Tok::Ident(s) if !is_keyword(s) => {
                let s = s.clone();
                let err = self.err_at(format!("bad column reference {s:?}"));
                self.next();
                match s.split('.').collect::<Vec<_>>()[..] {
                    [col] if !col.is_empty() => Ok(ColRef::bare(col)),
                    [table, col] if !table.is_empty() && !col.is_empty() => {
                        Ok(ColRef::new(table, col))
                    }
                    _ => Err(err),
                }
            }
            _ => Err(self.err_at("expected column reference")),
        }
    }

    fn col_ref_list(&mut self) -> Result<Vec<ColRef>> {
        let mut out = vec![self.col_ref()?];
        while matches!(self.peek().tok, Tok::Comma) {
            self.next();
            out.push(self.col_ref()?);
        }
        Ok(out)
    }

    fn operand(&mut self) -> Result<Operand> {
        match &self.peek().tok {
            Tok::Str(s) => {
                let s = s.clone();
                self.next();
                Ok(Operand::Lit(Literal::Str(s)))
            }
            Tok::Num(n) => {
                let n = *n;
                self.next();
                Ok(Operand::Lit(Literal::Num(n)))
            }
            _ => Ok(Operand::Col(self.col_ref()?)),
        }
    }

    /// `banned_alias` is the inspect alias, which may not appear before the
    /// HAVING clause.
    fn predicate(&mut self, banned_alias: Option<&str>) -> Result<Predicate> {
        let check = |operand: &Operand, line: usize, col: usize| -> Result<()> {
            if let (Operand::Col(c), Some(banned)) = (operand, banned_alias) {
                if c.table.as_deref() == Some(banned) {
                    return Err(Error::query(
                        line,
                        col,
                        format!("inspect alias {banned} may only be referenced in SELECT or HAVING"),
                    ));
                }
            }
            Ok(())
        };
        let (ll, lc) = (self.peek().line, self.peek().col);
        let left = self.operand()?;
        check(&left, ll, lc)?;
        let op = match self.peek().tok {
            Tok::Op(op) => {
                self.next();
                op
            }
            _ => return Err(self.err_at("expected comparison operator")),
        };
        let (rl, rc) = (self.peek().line, self.peek().col);
        let right = self.operand()?;
        check(&right, rl, rc)?;
        Ok(Predicate { left, op, right })
    }

    fn predicate_list(&mut self, banned_alias: Option<&str>) -> Result<Vec<Predicate>> {
        let mut out = vec![self.predicate(banned_alias)?];
        while self.eat_keyword("AND") {
            out.push(self.predicate(banned_alias)?);
        }
        Ok(out)
    }
}

/// Parses one query of the dialect subset:
/// `SELECT cols INSPECT unit AND hyp [USING measure, ...] OVER seqs [AS alias]
/// FROM rel [alias], ... [WHERE conj] [GROUP BY cols] [HAVING conj]`.
pub fn parse_query(text: &str) -> Result<QueryAst> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };

    p.expect_keyword("SELECT")?;
    let select = p.col_ref_list()?;

    p.expect_keyword("INSPECT")?;
    let unit = p.col_ref()?;
    p.expect_keyword("AND")?;
    let hypothesis = p.col_ref()?;

    let mut measures = Vec::new();
    if p.eat_keyword("USING") {
        loop {
            let t = p.peek().clone();
            let name = p.ident("measure name")?;
            if MeasureKind::parse_name(&name).is_none() {
                return Err(Error::query(t.line, t.col, format!("unknown measure {name:?}")));
            }
            measures.push(name);
            if matches!(p.peek().tok, Tok::Comma) {
                p.next();
            } else {
                break;
            }
        }
    }

    p.expect_keyword("OVER")?;
    let over = p.col_ref()?;
    let alias = if p.eat_keyword("AS") { Some(p.ident("alias")?) } else { None };

    p.expect_keyword("FROM")?;
    let mut from = Vec::new();
    loop {
        let relation = p.ident("relation name")?;
        let item_alias = match &p.peek().tok {
            Tok::Ident(s) if !is_keyword(s) && !s.contains('.') => Some(p.ident("alias")?),
            _ => None,
        };
        from.push(FromItem { relation, alias: item_alias });
        if matches!(p.peek().tok, Tok::Comma) {
            p.next();
        } else {
            break;
        }
    }

    let banned = alias.as_deref();
    let where_clause =
        if p.eat_keyword("WHERE") { p.predicate_list(banned)? } else { Vec::new() };

    let group_by = if p.eat_keyword("GROUP") {
        p.expect_keyword("BY")?;
        let cols = p.col_ref_list()?;
        for c in &cols {
            if let (Some(t), Some(b)) = (&c.table, banned) {
                if t == b {
                    return Err(p.err_at(format!(
                        "inspect alias {b} may only be referenced in SELECT or HAVING"
                    )));
                }
            }
        }
        cols
    } else {
        Vec::new()
    };

    let having = if p.eat_keyword("HAVING") { p.predicate_list(None)? } else { Vec::new() };

    if !matches!(p.peek().tok, Tok::Eof) {
        return Err(p.err_at("unexpected trailing input"));
    }
    Ok(QueryAst { select, inspect: InspectClause { unit, hypothesis, measures, over, alias }, from, where_clause, group_by, having })
}

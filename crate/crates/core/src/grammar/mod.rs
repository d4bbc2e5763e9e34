//! Probabilistic context-free grammars: file format, sampling, parsing.
//!
//! Grammar files hold one production per line:
//!
//! ```text
//! # nested parens
//! S -> ( S ) [0.5]
//! S -> x [0.5]
//! ```
//!
//! A token is a nonterminal iff it appears on the left of some `->`; any
//! other token must be one symbol long (a terminal). Quoted literals such as
//! `'abc'` expand to one terminal per character. The bracketed probability is
//! optional, but only uniformly: if any production of a nonterminal carries
//! one, all must. Probabilities of each nonterminal must sum to 1 (±1e-9).
//! The start symbol is the first left-hand side. An empty right-hand side
//! derives the empty string.

mod earley;
mod sampler;

pub use earley::{parse, parse_record, ParseMode, ParseTree, TreeNode};
pub use sampler::{sample, sample_many};

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sym {
    /// Index into [`Grammar::nonterminals`].
    Nt(usize),
    T(char),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Production {
    pub lhs: usize,
    pub rhs: Vec<Sym>,
    pub prob: f64,
    pub log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct Grammar {
    nonterminals: Vec<String>,
    start: usize,
    /// File order; production index is the tie-break key during parsing.
    productions: Vec<Production>,
    by_lhs: Vec<Vec<usize>>,
    terminals: Vec<char>,
}

impl Grammar {
    pub fn nonterminals(&self) -> &[String] {
        &self.nonterminals
    }

    pub fn nonterminal_index(&self, name: &str) -> Option<usize> {
        self.nonterminals.iter().position(|n| n == name)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn productions_of(&self, nt: usize) -> &[usize] {
        &self.by_lhs[nt]
    }

    /// Terminals in sorted order.
    pub fn terminals(&self) -> &[char] {
        &self.terminals
    }

    pub fn is_terminal(&self, c: char) -> bool {
        self.terminals.binary_search(&c).is_ok()
    }
}

pub fn parse_grammar_file(text: &str) -> Result<Grammar> {
    let mut raw_rules: Vec<(String, Vec<String>, Option<f64>, usize)> = Vec::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(i) => &raw_line[..i],
            None => raw_line,
        };
        if line.trim().is_empty() {
            continue;
        }
        let (lhs_part, rhs_part) = line
            .split_once("->")
            .ok_or_else(|| Error::Grammar(format!("line {}: expected `LHS -> ...`", lineno + 1)))?;
        let lhs = lhs_part.trim();
        if lhs.is_empty() || lhs.contains(char::is_whitespace) {
            return Err(Error::Grammar(format!("line {}: bad left-hand side {:?}", lineno + 1, lhs_part.trim())));
        }
        let mut tokens: Vec<String> = rhs_part.split_whitespace().map(|t| t.to_string()).collect();
        let mut prob = None;
        if let Some(last) = tokens.last() {
            if last.starts_with('[') && last.ends_with(']') {
                let inner = &last[1..last.len() - 1];
                let p: f64 = inner.parse().map_err(|_| {
                    Error::Grammar(format!("line {}: bad probability {:?}", lineno + 1, last))
                })?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Grammar(format!("line {}: probability {} outside [0, 1]", lineno + 1, p)));
                }
                prob = Some(p);
                tokens.pop();
            }
        }
        raw_rules.push((lhs.to_string(), tokens, prob, lineno + 1));
    }
    if raw_rules.is_empty() {
        return Err(Error::Grammar("no productions".into()));
    }

    let mut nonterminals: Vec<String> = Vec::new();
    let mut nt_index: HashMap<String, usize> = HashMap::new();
    for (lhs, _, _, _) in &raw_rules {
        if !nt_index.contains_key(lhs) {
            nt_index.insert(lhs.clone(), nonterminals.len());
            nonterminals.push(lhs.clone());
        }
    }

    let mut productions = Vec::with_capacity(raw_rules.len());
    let mut terminals = Vec::new();
    for (lhs, tokens, prob, lineno) in &raw_rules {
        let mut rhs = Vec::new();
        for tok in tokens {
            if let Some(&nt) = nt_index.get(tok) {
                rhs.push(Sym::Nt(nt));
            } else if tok.len() >= 2 && tok.starts_with('\'') && tok.ends_with('\'') {
                for c in tok[1..tok.len() - 1].chars() {
                    rhs.push(Sym::T(c));
                    terminals.push(c);
                }
            } else {
                let mut chars = tok.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => {
                        rhs.push(Sym::T(c));
                        terminals.push(c);
                    }
                    _ => {
                        return Err(Error::Grammar(format!(
                            "line {}: undeclared symbol {:?} (multi-character tokens must be quoted literals or nonterminals)",
                            lineno, tok
                        )))
                    }
                }
            }
        }
        productions.push(Production { lhs: nt_index[lhs], rhs, prob: prob.unwrap_or(f64::NAN), log_prob: 0.0 });
    }
    terminals.sort_unstable();
    terminals.dedup();

    let mut by_lhs = vec![Vec::new(); nonterminals.len()];
    for (i, p) in productions.iter().enumerate() {
        by_lhs[p.lhs].push(i);
    }

    for (nt, prods) in by_lhs.iter().enumerate() {
        let with_prob = prods.iter().filter(|&&i| !productions[i].prob.is_nan()).count();
        if with_prob == 0 {
            let uniform = 1.0 / prods.len() as f64;
            for &i in prods {
                productions[i].prob = uniform;
            }
        } else if with_prob != prods.len() {
            return Err(Error::Grammar(format!(
                "nonterminal {}: probabilities must be given on all productions or none",
                nonterminals[nt]
            )));
        }
        let sum: f64 = prods.iter().map(|&i| productions[i].prob).sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::Grammar(format!(
                "nonterminal {}: probabilities sum to {}, expected 1",
                nonterminals[nt], sum
            )));
        }
        for &i in prods {
            productions[i].log_prob = productions[i].prob.ln();
        }
    }

    Ok(Grammar { nonterminals, start: 0, productions, by_lhs, terminals })
}

/// Text of the nested-parenthesis benchmark grammar with `levels` bracket
/// levels: level i emits runs of digit `i` and descends via `( ... )`; the
/// innermost level may stop. Every yield has balanced parentheses.
pub fn nesting_grammar_text(levels: usize) -> String {
    assert!(levels >= 1);
    let mut out = String::new();
    for i in 0..levels {
        out.push_str(&format!("R{} -> {} R{} [0.5]\n", i, i, i));
        out.push_str(&format!("R{} -> ( R{} ) [0.5]\n", i, i + 1));
    }
    out.push_str(&format!("R{} -> [0.5]\n", levels));
    out.push_str(&format!("R{} -> {} R{} [0.5]\n", levels, levels, levels));
    out
}

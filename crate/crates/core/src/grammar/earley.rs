//! Earley chart parsing with a Viterbi (max log-prob) semiring.
//!
//! The parser handles arbitrary CFGs, including epsilon and ambiguous
//! productions, without binarization. Items are processed from an agenda;
//! when a better derivation of an item is found the item is re-queued so the
//! improvement propagates. Ties between equal-probability derivations are
//! broken by lowest production index, then lowest split point, which makes
//! the returned tree deterministic for ambiguous grammars.

use std::collections::{HashMap, VecDeque};

use crate::dataset::SymbolDataset;

use super::{Grammar, Sym};

const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Most probable tree under the grammar's production probabilities.
    Viterbi,
    /// Ignores probabilities; returns the tree the tie-break order prefers.
    FirstParse,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Rule {
        /// Nonterminal index into the grammar this tree was parsed with.
        nt: usize,
        /// Production index, for probability accounting.
        prod: usize,
        /// Half-open symbol span in record coordinates.
        span: (usize, usize),
        depth: usize,
        children: Vec<usize>,
    },
    Leaf {
        symbol: char,
        pos: usize,
        depth: usize,
    },
}

impl TreeNode {
    pub fn span(&self) -> (usize, usize) {
        match self {
            TreeNode::Rule { span, .. } => *span,
            TreeNode::Leaf { pos, .. } => (*pos, *pos + 1),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Rule { depth, .. } => *depth,
            TreeNode::Leaf { depth, .. } => *depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    /// Number of (non-pad) symbols covered by the root span.
    pub n_symbols: usize,
    /// Log probability of the tree under the grammar.
    pub log_prob: f64,
}

impl ParseTree {
    /// Spans of all rule nodes labeled `nt`, in preorder.
    pub fn spans_of(&self, nt: usize) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Rule { nt: x, span, .. } if *x == nt => Some(*span),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    prod: usize,
    dot: usize,
    origin: usize,
    end: usize,
}

#[derive(Debug, Clone, Copy)]
enum Back {
    Start,
    Terminal,
    NonTerm { split: usize, child: Key },
}

impl Back {
    /// Order among equal-score candidates: lowest child production, then
    /// lowest split. Terminal/start backpointers never vary per key.
    fn rank(&self) -> (usize, usize) {
        match self {
            Back::NonTerm { split, child } => (child.prod, *split),
            _ => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ItemData {
    score: f64,
    back: Back,
}

struct Chart<'g> {
    grammar: &'g Grammar,
    mode: ParseMode,
    items: HashMap<Key, ItemData>,
    /// Incomplete items at position p whose next symbol is nonterminal nt,
    /// indexed by (nt, p).
    wanted: HashMap<(usize, usize), Vec<Key>>,
    /// Completed items for (lhs nt, origin).
    done: HashMap<(usize, usize), Vec<Key>>,
    agenda: VecDeque<Key>,
}

impl<'g> Chart<'g> {
    fn prod_score(&self, prod: usize) -> f64 {
        match self.mode {
            ParseMode::Viterbi => self.grammar.productions()[prod].log_prob,
            ParseMode::FirstParse => 0.0,
        }
    }

    /// Inserts or improves an item; queues it for (re)processing when its
    /// score improved.
    fn offer(&mut self, key: Key, score: f64, back: Back) {
        match self.items.get_mut(&key) {
            None => {
                self.items.insert(key, ItemData { score, back });
                self.index(key);
                self.agenda.push_back(key);
            }
            Some(data) => {
                if score > data.score + SCORE_EPS {
                    data.score = score;
                    data.back = back;
                    self.agenda.push_back(key);
                } else if (score - data.score).abs() <= SCORE_EPS && back.rank() < data.back.rank() {
                    // Equal-score alternative preferred by the tie-break
                    // order; scores are unchanged so no re-propagation.
                    data.back = back;
                }
            }
        }
    }

    fn index(&mut self, key: Key) {
        let prod = &self.grammar.productions()[key.prod];
        if key.dot == prod.rhs.len() {
            self.done.entry((prod.lhs, key.origin)).or_default().push(key);
        } else if let Sym::Nt(nt) = prod.rhs[key.dot] {
            self.wanted.entry((nt, key.end)).or_default().push(key);
        }
    }
}

/// Parses `input` and returns the best tree, or `None` when the record is
/// outside the grammar's language.
pub fn parse(grammar: &Grammar, input: &[char], mode: ParseMode) -> Option<ParseTree> {
    if input.iter().any(|&c| !grammar.is_terminal(c)) {
        return None;
    }
    let n = input.len();
    let mut chart = Chart {
        grammar,
        mode,
        items: HashMap::new(),
        wanted: HashMap::new(),
        done: HashMap::new(),
        agenda: VecDeque::new(),
    };
    for &p in grammar.productions_of(grammar.start()) {
        let score = chart.prod_score(p);
        chart.offer(Key { prod: p, dot: 0, origin: 0, end: 0 }, score, Back::Start);
    }
    while let Some(key) = chart.agenda.pop_front() {
        let data = chart.items[&key];
        let prod = &grammar.productions()[key.prod];
        if key.dot < prod.rhs.len() {
            match prod.rhs[key.dot] {
                Sym::T(c) => {
                    if key.end < n && input[key.end] == c {
                        let next = Key { dot: key.dot + 1, end: key.end + 1, ..key };
                        chart.offer(next, data.score, Back::Terminal);
                    }
                }
                Sym::Nt(nt) => {
                    for &p in grammar.productions_of(nt) {
                        let score = chart.prod_score(p);
                        chart.offer(Key { prod: p, dot: 0, origin: key.end, end: key.end }, score, Back::Start);
                    }
                    // Combine with children already completed from this
                    // position (needed for epsilon rules and re-queues).
                    let children: Vec<Key> =
                        chart.done.get(&(nt, key.end)).map(|v| v.clone()).unwrap_or_default();
                    for child in children {
                        let cscore = chart.items[&child].score;
                        let next = Key { dot: key.dot + 1, end: child.end, ..key };
                        chart.offer(next, data.score + cscore, Back::NonTerm { split: key.end, child });
                    }
                }
            }
        } else {
            // Complete: advance every item waiting for this nonterminal at
            // the origin position.
            let waiting: Vec<Key> =
                chart.wanted.get(&(prod.lhs, key.origin)).map(|v| v.clone()).unwrap_or_default();
            for w in waiting {
                let wscore = chart.items[&w].score;
                let next = Key { dot: w.dot + 1, end: key.end, ..w };
                chart.offer(next, wscore + data.score, Back::NonTerm { split: key.origin, child: key });
            }
        }
    }

    // Best completed start item spanning the whole input.
    let mut goal: Option<(Key, f64)> = None;
    for &p in grammar.productions_of(grammar.start()) {
        let key = Key { prod: p, dot: grammar.productions()[p].rhs.len(), origin: 0, end: n };
        if let Some(data) = chart.items.get(&key) {
            let better = match goal {
                None => true,
                Some((gk, gs)) => {
                    data.score > gs + SCORE_EPS || ((data.score - gs).abs() <= SCORE_EPS && key.prod < gk.prod)
                }
            };
            if better {
                goal = Some((key, data.score));
            }
        }
    }
    let (goal_key, _) = goal?;

    let mut nodes = Vec::new();
    let root = build_node(grammar, &chart.items, goal_key, 0, &mut nodes);
    let log_prob = tree_log_prob(grammar, &nodes);
    Some(ParseTree { nodes, root, n_symbols: n, log_prob })
}

/// Parses record `idx` of `dataset` with its trailing pad stripped. Spans in
/// the returned tree index the record's own symbol positions.
pub fn parse_record(grammar: &Grammar, dataset: &SymbolDataset, idx: usize, mode: ParseMode) -> Option<ParseTree> {
    let content_len = dataset.content_len(idx);
    let chars: Vec<char> = dataset.record_chars(idx)[..content_len].to_vec();
    parse(grammar, &chars, mode)
}

fn build_node(
    grammar: &Grammar,
    items: &HashMap<Key, ItemData>,
    completed: Key,
    depth: usize,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let prod = &grammar.productions()[completed.prod];
    let mut children = Vec::with_capacity(prod.rhs.len());
    let mut key = completed;
    loop {
        let back = items[&key].back;
        match back {
            Back::Start => break,
            Back::Terminal => {
                nodes.push(TreeNode::Leaf { symbol: grammar_terminal(prod, key.dot - 1), pos: key.end - 1, depth: depth + 1 });
                children.push(nodes.len() - 1);
                key = Key { dot: key.dot - 1, end: key.end - 1, ..key };
            }
            Back::NonTerm { split, child } => {
                let c = build_node(grammar, items, child, depth + 1, nodes);
                children.push(c);
                key = Key { dot: key.dot - 1, end: split, ..key };
            }
        }
    }
    children.reverse();
    nodes.push(TreeNode::Rule {
        nt: prod.lhs,
        prod: completed.prod,
        span: (completed.origin, completed.end),
        depth,
        children,
    });
    nodes.len() - 1
}

fn grammar_terminal(prod: &super::Production, dot: usize) -> char {
    match prod.rhs[dot] {
        Sym::T(c) => c,
        Sym::Nt(_) => unreachable!("terminal backpointer on nonterminal position"),
    }
}

fn tree_log_prob(grammar: &Grammar, nodes: &[TreeNode]) -> f64 {
    nodes
        .iter()
        .map(|n| match n {
            TreeNode::Rule { prod, .. } => grammar.productions()[*prod].log_prob,
            TreeNode::Leaf { .. } => 0.0,
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{nesting_grammar_text, parse_grammar_file};

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    fn arithmetic_grammar() -> Grammar {
        parse_grammar_file(
            "E -> ( E ) [0.5]\nE -> N + N [0.3]\nE -> N [0.2]\nN -> 1 [0.5]\nN -> 2 [0.5]\n",
        )
        .unwrap()
    }

    #[test]
    fn single_terminal_grammar() {
        let g = parse_grammar_file("S -> x\n").unwrap();
        let tree = parse(&g, &chars("x"), ParseMode::Viterbi).unwrap();
        let root = &tree.nodes[tree.root];
        assert_eq!(root.span(), (0, 1));
        match root {
            TreeNode::Rule { children, .. } => {
                assert_eq!(children.len(), 1);
                assert!(matches!(tree.nodes[children[0]], TreeNode::Leaf { symbol: 'x', pos: 0, depth: 1 }));
            }
            _ => panic!("root must be a rule node"),
        }
    }

    #[test]
    fn nested_arithmetic_spans() {
        let g = arithmetic_grammar();
        let tree = parse(&g, &chars("((1+2))"), ParseMode::Viterbi).unwrap();
        let e = g.nonterminal_index("E").unwrap();
        let spans = tree.spans_of(e);
        assert!(spans.contains(&(0, 7)), "root span, got {:?}", spans);
        assert!(spans.contains(&(1, 6)), "inner paren span, got {:?}", spans);
        assert_eq!(tree.nodes[tree.root].span(), (0, 7));
    }

    #[test]
    fn unbalanced_input_fails_to_parse() {
        let g = parse_grammar_file(&nesting_grammar_text(4)).unwrap();
        assert!(parse(&g, &chars("(("), ParseMode::Viterbi).is_none());
    }

    #[test]
    fn foreign_symbol_fails_to_parse() {
        let g = parse_grammar_file("S -> x\n").unwrap();
        assert!(parse(&g, &chars("y"), ParseMode::Viterbi).is_none());
    }

    #[test]
    fn nesting_example_string_parses() {
        let g = parse_grammar_file(&nesting_grammar_text(4)).unwrap();
        let tree = parse(&g, &chars("0(1(2((44))))"), ParseMode::Viterbi).unwrap();
        assert_eq!(tree.nodes[tree.root].span(), (0, 13));
    }

    #[test]
    fn epsilon_and_empty_input() {
        let g = parse_grammar_file("S -> [0.5]\nS -> a S [0.5]\n").unwrap();
        let tree = parse(&g, &[], ParseMode::Viterbi).unwrap();
        assert_eq!(tree.nodes[tree.root].span(), (0, 0));
        assert!(parse(&g, &chars("aaa"), ParseMode::Viterbi).is_some());
    }

    #[test]
    fn span_partition_invariant() {
        let g = parse_grammar_file(&nesting_grammar_text(4)).unwrap();
        let tree = parse(&g, &chars("0(1(2((44))))"), ParseMode::Viterbi).unwrap();
        for node in &tree.nodes {
            if let TreeNode::Rule { span, children, depth, .. } = node {
                let mut cursor = span.0;
                for &c in children {
                    let (s, e) = tree.nodes[c].span();
                    assert_eq!(s, cursor, "child spans must tile the parent span in order");
                    assert_eq!(tree.nodes[c].depth(), depth + 1);
                    cursor = e;
                }
                assert_eq!(cursor, span.1);
            }
        }
    }

    #[test]
    fn viterbi_prefers_higher_probability_derivation() {
        // Ambiguous: "ab" derives via A (prob 0.9*...) or B.
        let g = parse_grammar_file(
            "S -> A [0.9]\nS -> B [0.1]\nA -> a b\nB -> a b\n",
        )
        .unwrap();
        let tree = parse(&g, &chars("ab"), ParseMode::Viterbi).unwrap();
        let a = g.nonterminal_index("A").unwrap();
        assert_eq!(tree.spans_of(a), vec![(0, 2)], "Viterbi must pick the A derivation");
    }

    #[test]
    fn first_parse_uses_tie_break_not_probability() {
        let g = parse_grammar_file(
            "S -> A [0.1]\nS -> B [0.9]\nA -> a b\nB -> a b\n",
        )
        .unwrap();
        let tree = parse(&g, &chars("ab"), ParseMode::FirstParse).unwrap();
        let a = g.nonterminal_index("A").unwrap();
        assert_eq!(tree.spans_of(a), vec![(0, 2)], "first-parse must pick the lowest production index");
    }

    #[test]
    fn equal_probability_tie_breaks_to_lowest_production() {
        let g = parse_grammar_file(
            "S -> A [0.5]\nS -> B [0.5]\nA -> a b\nB -> a b\n",
        )
        .unwrap();
        let tree = parse(&g, &chars("ab"), ParseMode::Viterbi).unwrap();
        let a = g.nonterminal_index("A").unwrap();
        assert_eq!(tree.spans_of(a), vec![(0, 2)]);
    }

    #[test]
    fn log_prob_is_product_of_production_probs() {
        let g = arithmetic_grammar();
        let tree = parse(&g, &chars("(1)"), ParseMode::Viterbi).unwrap();
        // E -> ( E ), E -> N, N -> 1: 0.5 * 0.2 * 0.5
        let want = (0.5f64 * 0.2 * 0.5).ln();
        assert!((tree.log_prob - want).abs() < 1e-12, "got {}", tree.log_prob);
    }

    #[test]
    fn parse_record_strips_pad() {
        let g = parse_grammar_file("S -> x S [0.5]\nS -> x [0.5]\n").unwrap();
        let ds = crate::dataset::SymbolDataset::from_records(&["xx".to_string()], 5, '~', None).unwrap();
        let tree = parse_record(&g, &ds, 0, ParseMode::Viterbi).unwrap();
        assert_eq!(tree.n_symbols, 2);
        assert_eq!(tree.nodes[tree.root].span(), (0, 2));
    }
}

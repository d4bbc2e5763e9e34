//! Deterministic finite-state machines used as hypothesis functions.
//!
//! Machines are loaded from TSV tables with one transition per row:
//! `state<TAB>symbol<TAB>next_state<TAB>label`. The initial state is the
//! state of the first row. The label column is attached to the target state:
//! every row leading into a state must carry the same label, and after
//! consuming a symbol the machine emits the label of the state it landed in.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Fsm {
    states: Vec<String>,
    alphabet: Vec<char>,
    /// Dense transition table, `states.len() x alphabet.len()`.
    next: Vec<usize>,
    labels: Vec<f64>,
    initial: usize,
}

impl Fsm {
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut states: Vec<String> = Vec::new();
        let mut state_ix: HashMap<String, usize> = HashMap::new();
        let mut alphabet: Vec<char> = Vec::new();
        let mut rows: Vec<(usize, char, usize, f64)> = Vec::new();
        let intern = |name: &str, states: &mut Vec<String>, state_ix: &mut HashMap<String, usize>| {
            *state_ix.entry(name.to_string()).or_insert_with(|| {
                states.push(name.to_string());
                states.len() - 1
            })
        };
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Config(format!(
                    "fsm line {}: expected 4 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let from = intern(fields[0].trim(), &mut states, &mut state_ix);
            let mut sym_chars = fields[1].trim().chars();
            let sym = match (sym_chars.next(), sym_chars.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(Error::Config(format!(
                        "fsm line {}: symbol must be a single character, got {:?}",
                        lineno + 1,
                        fields[1]
                    )))
                }
            };
            let to = intern(fields[2].trim(), &mut states, &mut state_ix);
            let label: f64 = fields[3].trim().parse().map_err(|_| {
                Error::Config(format!("fsm line {}: bad label {:?}", lineno + 1, fields[3]))
            })?;
            if !alphabet.contains(&sym) {
                alphabet.push(sym);
            }
            rows.push((from, sym, to, label));
        }
        if rows.is_empty() {
            return Err(Error::Config("fsm table has no transitions".into()));
        }
        alphabet.sort_unstable();

        let mut labels = vec![f64::NAN; states.len()];
        let mut next = vec![usize::MAX; states.len() * alphabet.len()];
        for &(from, sym, to, label) in &rows {
            let s = alphabet.binary_search(&sym).unwrap();
            let slot = &mut next[from * alphabet.len() + s];
            if *slot != usize::MAX && *slot != to {
                return Err(Error::Config(format!(
                    "fsm is nondeterministic: state {} has two transitions on {:?}",
                    states[from], sym
                )));
            }
            *slot = to;
            if labels[to].is_nan() {
                labels[to] = label;
            } else if labels[to] != label {
                return Err(Error::Config(format!(
                    "fsm state {} is given conflicting labels {} and {}",
                    states[to], labels[to], label
                )));
            }
        }
        for (st, chunk) in next.chunks(alphabet.len()).enumerate() {
            for (s, &t) in chunk.iter().enumerate() {
                if t == usize::MAX {
                    return Err(Error::Config(format!(
                        "fsm transition table is not total: state {} has no transition on {:?}",
                        states[st], alphabet[s]
                    )));
                }
            }
        }
        // States never entered keep label 0 (their label is never emitted).
        for l in &mut labels {
            if l.is_nan() {
                *l = 0.0;
            }
        }
        Ok(Fsm { states, alphabet, next, labels, initial: rows[0].0 })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    /// Runs the machine over `symbols`, emitting one value per symbol: the
    /// label of the state reached (or, with `indicator`, 1 when that state is
    /// the given one).
    pub fn run(&self, symbols: &[char], indicator: Option<usize>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(symbols.len());
        let mut state = self.initial;
        for &c in symbols {
            let s = self
                .alphabet
                .binary_search(&c)
                .map_err(|_| Error::Config(format!("symbol {:?} outside fsm alphabet", c)))?;
            state = self.next[state * self.alphabet.len() + s];
            out.push(match indicator {
                Some(target) => {
                    if state == target {
                        1.0
                    } else {
                        0.0
                    }
                }
                None => self.labels[state],
            });
        }
        Ok(out)
    }

    /// True when every state label is 0 or 1 (or an indicator is used).
    pub fn labels_binary(&self) -> bool {
        self.labels.iter().all(|&l| l == 0.0 || l == 1.0)
    }
}

/// TSV text for a machine that emits 1 after consuming `(` or `)` and 0
/// after any of the digit symbols `0..levels`. Used as the bracket-detector
/// hypothesis in benchmarks and tests.
pub fn paren_detector_tsv(levels: usize) -> String {
    let mut out = String::new();
    for (sym, label, target) in [('(', 1, "hit"), (')', 1, "hit")] {
        out.push_str(&format!("base\t{}\t{}\t{}\n", sym, target, label));
        out.push_str(&format!("hit\t{}\t{}\t{}\n", sym, target, label));
    }
    for d in 0..=levels {
        out.push_str(&format!("base\t{}\tbase\t0\n", d));
        out.push_str(&format!("hit\t{}\tbase\t0\n", d));
    }
    out
}

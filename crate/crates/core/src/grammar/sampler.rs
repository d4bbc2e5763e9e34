//! Stochastic sampling of records from a grammar.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Grammar, Sym};

const MAX_RETRIES: usize = 100;
/// Guards against grammars that loop through non-emitting productions.
const MAX_STEPS_PER_ATTEMPT: usize = 100_000;

/// Samples one record by leftmost stochastic derivation. Derivations whose
/// yield would exceed `max_len` are abandoned and resampled, up to
/// [`MAX_RETRIES`] attempts.
pub fn sample(grammar: &Grammar, seed: u64, max_len: usize) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with_rng(grammar, &mut rng, max_len)
}

/// Samples `n` records from a single seeded stream.
pub fn sample_many(grammar: &Grammar, seed: u64, n: usize, max_len: usize) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_with_rng(grammar, &mut rng, max_len)).collect()
}

pub fn sample_with_rng(grammar: &Grammar, rng: &mut impl Rng, max_len: usize) -> Result<String> {
    for _ in 0..MAX_RETRIES {
        if let Some(s) = attempt(grammar, rng, max_len) {
            return Ok(s);
        }
    }
    Err(Error::SampleRetriesExhausted { max_len, retries: MAX_RETRIES })
}

fn attempt(grammar: &Grammar, rng: &mut impl Rng, max_len: usize) -> Option<String> {
    // Leftmost derivation: repeatedly expand the first nonterminal of the
    // sentential form. `pending` holds the suffix still to expand, reversed
    // so the leftmost symbol is on top.
    let mut out = String::new();
    let mut pending: Vec<Sym> = vec![Sym::Nt(grammar.start())];
    let mut steps = 0;
    while let Some(sym) = pending.pop() {
        steps += 1;
        if steps > MAX_STEPS_PER_ATTEMPT {
            return None;
        }
        match sym {
            Sym::T(c) => {
                if out.chars().count() >= max_len {
                    return None;
                }
                out.push(c);
            }
            Sym::Nt(nt) => {
                let prods = grammar.productions_of(nt);
                let mut u: f64 = rng.gen();
                let mut chosen = *prods.last().expect("validated grammar has productions");
                for &p in prods {
                    u -= grammar.productions()[p].prob;
                    if u < 0.0 {
                        chosen = p;
                        break;
                    }
                }
                for s in grammar.productions()[chosen].rhs.iter().rev() {
                    pending.push(*s);
                }
            }
        }
    }
    Some(out)
}

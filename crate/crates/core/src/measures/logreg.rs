//! Merged multi-output logistic regression.
//!
//! One linear model shares the standardized unit columns across |H| sigmoid
//! outputs. The published loss is the mean of the per-output log-losses;
//! because the outputs share no parameters, taking a full-step gradient per
//! output is the same training trajectory with the step size rescaled by |H|,
//! and it makes a merged model bit-identical to separately trained
//! single-output models fed the same row stream. We train per-output at the
//! full step size for that reason.
//!
//! Rows are assigned round-robin to `folds` cross-validation folds by global
//! row index. Each fold's model trains on every row outside its fold and is
//! scored on a rolling buffer of its own rows. Convergence error per output
//! is the distance between the current mean-fold F1 and its trailing window
//! average; the window length covers `window_symbols` rows.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularization {
    L1,
    L2,
}

#[derive(Debug, Clone)]
pub struct LogregParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub folds: usize,
    pub regularization: Regularization,
    pub strength: f64,
    /// Rows covered by the validation-score window used for err.
    pub window_symbols: usize,
}

impl Default for LogregParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 512,
            folds: 5,
            regularization: Regularization::L1,
            strength: 1e-3,
            window_symbols: 2048,
        }
    }
}

/// Scores for one output of the merged model.
#[derive(Debug, Clone)]
pub struct LogregHypScore {
    pub hyp_id: String,
    /// Positive-class F1, macro-averaged over folds.
    pub f1: f64,
    pub err: Option<f64>,
    /// No positive examples anywhere in the validation buffers.
    pub degenerate: bool,
    /// Mean |coefficient| per unit column, averaged over folds.
    pub unit_scores: Vec<f64>,
}

#[derive(Debug)]
pub struct LogregState<S: Scalar> {
    params: LogregParams,
    n_units: usize,
    hyp_ids: Vec<String>,
    // Running standardization moments, shared row count.
    stat_n: u64,
    mean: Vec<S>,
    m2: Vec<S>,
    // folds x hyps x (units + bias), flattened.
    weights: Vec<S>,
    // Per fold: rolling (raw features, labels) validation rows.
    val: Vec<VecDeque<(Box<[S]>, Box<[S]>)>>,
    val_cap: usize,
    pending: VecDeque<(usize, Box<[S]>, Box<[S]>)>,
    rows_seen: u64,
    window_len: usize,
    windows: Vec<VecDeque<f64>>,
    errs: Vec<Option<f64>>,
}

fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

impl<S: Scalar> LogregState<S> {
    pub fn new(n_units: usize, hyp_ids: Vec<String>, params: LogregParams) -> Self {
        assert!(params.folds >= 2, "logreg needs at least 2 folds");
        assert!(params.batch_size >= 1);
        assert!(n_units >= 1 && !hyp_ids.is_empty());
        let n_hyps = hyp_ids.len();
        let window_len = (params.window_symbols / params.batch_size).max(1);
        let val_cap = params.window_symbols.max(params.batch_size);
        Self {
            n_units,
            stat_n: 0,
            mean: vec![S::zero(); n_units],
            m2: vec![S::zero(); n_units],
            weights: vec![S::zero(); params.folds * n_hyps * (n_units + 1)],
            val: (0..params.folds).map(|_| VecDeque::new()).collect(),
            val_cap,
            pending: VecDeque::new(),
            rows_seen: 0,
            window_len,
            windows: vec![VecDeque::new(); n_hyps],
            errs: vec![None; n_hyps],
            hyp_ids,
            params,
        }
    }

    pub fn n_rows(&self) -> u64 {
        self.rows_seen
    }

    fn n_hyps(&self) -> usize {
        self.hyp_ids.len()
    }

    fn weight_base(&self, fold: usize, hyp: usize) -> usize {
        (fold * self.n_hyps() + hyp) * (self.n_units + 1)
    }

    fn standardize(&self, raw: &[S], out: &mut [S]) {
        let n = S::cast(self.stat_n.max(1));
        for u in 0..self.n_units {
            let var = self.m2[u] / n;
            out[u] = (raw[u] - self.mean[u]) / (var + S::cast(1e-8)).sqrt();
        }
    }

    /// Feed aligned unit and hypothesis columns. Rows accumulate into
    /// mini-batches; a trailing partial batch waits for more data and is
    /// never trained on, though its rows still reach the validation buffers.
    pub fn update(&mut self, unit_cols: &[&[S]], hyp_cols: &[&[S]]) -> Result<()> {
        if unit_cols.len() != self.n_units || hyp_cols.len() != self.n_hyps() {
            return Err(Error::Misaligned(format!(
                "logreg expects {} unit and {} hypothesis columns, got {} and {}",
                self.n_units,
                self.n_hyps(),
                unit_cols.len(),
                hyp_cols.len()
            )));
        }
        let n_rows = unit_cols.first().map_or(0, |c| c.len());
        for col in unit_cols.iter().chain(hyp_cols.iter()) {
            if col.len() != n_rows {
                return Err(Error::Misaligned(format!(
                    "column length {} does not match {}",
                    col.len(),
                    n_rows
                )));
            }
        }
        for r in 0..n_rows {
            let feats: Box<[S]> = unit_cols.iter().map(|c| c[r]).collect();
            let labels: Box<[S]> = hyp_cols.iter().map(|c| c[r]).collect();
            for (j, &y) in labels.iter().enumerate() {
                let v = y.to_f64_lossy();
                if v != 0.0 && v != 1.0 {
                    return Err(Error::NonBinaryHypothesis {
                        hyp_id: self.hyp_ids[j].clone(),
                    });
                }
            }
            self.stat_n += 1;
            let n = S::cast(self.stat_n);
            for u in 0..self.n_units {
                let d = feats[u] - self.mean[u];
                self.mean[u] += d / n;
                self.m2[u] += d * (feats[u] - self.mean[u]);
            }
            let fold = (self.rows_seen % self.params.folds as u64) as usize;
            self.rows_seen += 1;
            if self.val[fold].len() == self.val_cap {
                self.val[fold].pop_front();
            }
            self.val[fold].push_back((feats.clone(), labels.clone()));
            self.pending.push_back((fold, feats, labels));
        }
        while self.pending.len() >= self.params.batch_size {
            let batch: Vec<_> = self.pending.drain(..self.params.batch_size).collect();
            self.step(&batch);
            self.check_validation();
        }
        Ok(())
    }

    fn step(&mut self, batch: &[(usize, Box<[S]>, Box<[S]>)]) {
        let n_hyps = self.n_hyps();
        let d = self.n_units + 1;
        let mut x = vec![S::zero(); self.n_units];
        let mut grad = vec![S::zero(); n_hyps * d];
        for fold in 0..self.params.folds {
            grad.iter_mut().for_each(|g| *g = S::zero());
            let mut m = 0u64;
            for (row_fold, raw, labels) in batch {
                if *row_fold == fold {
                    continue;
                }
                m += 1;
                self.standardize(raw, &mut x);
                for j in 0..n_hyps {
                    let base = self.weight_base(fold, j);
                    let w = &self.weights[base..base + d];
                    let mut z = w[self.n_units];
                    for u in 0..self.n_units {
                        z += w[u] * x[u];
                    }
                    let g = sigmoid(z) - labels[j];
                    let gw = &mut grad[j * d..(j + 1) * d];
                    for u in 0..self.n_units {
                        gw[u] += g * x[u];
                    }
                    gw[self.n_units] += g;
                }
            }
            if m == 0 {
                continue;
            }
            let lr = S::cast(self.params.learning_rate);
            let inv_m = S::one() / S::cast(m);
            let lambda = S::cast(self.params.strength);
            for j in 0..n_hyps {
                let base = self.weight_base(fold, j);
                for u in 0..d {
                    let w = &mut self.weights[base + u];
                    let mut g = grad[j * d + u] * inv_m;
                    if u < self.n_units {
                        // Bias is exempt from the penalty.
                        g += match self.params.regularization {
                            Regularization::L1 => {
                                if *w > S::zero() {
                                    lambda
                                } else if *w < S::zero() {
                                    -lambda
                                } else {
                                    S::zero()
                                }
                            }
                            Regularization::L2 => lambda * *w,
                        };
                    }
                    *w -= lr * g;
                }
            }
        }
    }

    /// Per-fold, per-output positive-class F1 on the fold's validation
    /// buffer; `None` when the buffer holds no positive labels.
    fn fold_f1(&self) -> Vec<Vec<Option<f64>>> {
        let n_hyps = self.n_hyps();
        let d = self.n_units + 1;
        let mut x = vec![S::zero(); self.n_units];
        let mut out = vec![vec![None; n_hyps]; self.params.folds];
        for fold in 0..self.params.folds {
            let mut tp = vec![0u64; n_hyps];
            let mut fp = vec![0u64; n_hyps];
            let mut fne = vec![0u64; n_hyps];
            for (raw, labels) in &self.val[fold] {
                self.standardize(raw, &mut x);
                for j in 0..n_hyps {
                    let base = self.weight_base(fold, j);
                    let w = &self.weights[base..base + d];
                    let mut z = w[self.n_units];
                    for u in 0..self.n_units {
                        z += w[u] * x[u];
                    }
                    let pred = z >= S::zero();
                    let actual = labels[j].to_f64_lossy() != 0.0;
                    match (pred, actual) {
                        (true, true) => tp[j] += 1,
                        (true, false) => fp[j] += 1,
                        (false, true) => fne[j] += 1,
                        (false, false) => {}
                    }
                }
            }
            for j in 0..n_hyps {
                if tp[j] + fne[j] == 0 {
                    continue;
                }
                let p = if tp[j] + fp[j] == 0 {
                    0.0
                } else {
                    tp[j] as f64 / (tp[j] + fp[j]) as f64
                };
                let r = tp[j] as f64 / (tp[j] + fne[j]) as f64;
                out[fold][j] = Some(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
            }
        }
        out
    }

    fn current_scores(&self) -> Vec<f64> {
        let per_fold = self.fold_f1();
        (0..self.n_hyps())
            .map(|j| {
                let vals: Vec<f64> = per_fold.iter().filter_map(|f| f[j]).collect();
                if vals.is_empty() {
                    0.0
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            })
            .collect()
    }

    fn check_validation(&mut self) {
        let scores = self.current_scores();
        for (j, s) in scores.into_iter().enumerate() {
            let w = &mut self.windows[j];
            if w.len() == self.window_len {
                let mean = w.iter().sum::<f64>() / w.len() as f64;
                self.errs[j] = Some((s - mean).abs());
                w.pop_front();
            }
            w.push_back(s);
        }
    }

    /// Per-output convergence error; `None` until the validation window has
    /// filled.
    pub fn errs(&self) -> &[Option<f64>] {
        &self.errs
    }

    pub fn converged(&self, epsilon: f64) -> bool {
        self.errs.iter().all(|e| e.is_some_and(|v| v <= epsilon))
    }

    pub fn results(&self) -> Vec<LogregHypScore> {
        let per_fold = self.fold_f1();
        (0..self.n_hyps())
            .map(|j| {
                let vals: Vec<f64> = per_fold.iter().filter_map(|f| f[j]).collect();
                let degenerate = vals.is_empty();
                let f1 = if degenerate {
                    0.0
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                };
                let unit_scores = (0..self.n_units)
                    .map(|u| {
                        (0..self.params.folds)
                            .map(|f| self.weights[self.weight_base(f, j) + u].to_f64_lossy().abs())
                            .sum::<f64>()
                            / self.params.folds as f64
                    })
                    .collect();
                LogregHypScore {
                    hyp_id: self.hyp_ids[j].clone(),
                    f1,
                    err: self.errs[j],
                    degenerate,
                    unit_scores,
                }
            })
            .collect()
    }
}

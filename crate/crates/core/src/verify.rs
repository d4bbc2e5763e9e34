//! Perturbation-based verification of a unit group against a hypothesis.
//!
//! For sampled positions of sampled records we search for two single-symbol
//! swaps: a baseline swap that leaves the hypothesis behavior at that
//! position unchanged and a treatment swap that changes it. If the group
//! really tracks the hypothesis, treatment swaps should move its activations
//! while baseline swaps should not, which a silhouette score over the
//! per-unit activation deltas makes quantitative.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::SymbolDataset;
use crate::error::{Error, Result};
use crate::extract::Extractor;
use crate::grammar::{Grammar, ParseMode};
use crate::hypothesis::{evaluate_one, HypothesisSpec};
use crate::scalar::Scalar;

/// A validated single-position swap pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationPair {
    pub record: usize,
    pub position: usize,
    pub original: char,
    /// Swap preserving the hypothesis behavior at `position`.
    pub baseline: char,
    /// Swap changing the hypothesis behavior at `position`.
    pub treatment: char,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaLabel {
    Baseline,
    Treatment,
}

/// Per-unit activation change at the swapped position.
#[derive(Debug, Clone, Serialize)]
pub struct DeltaSample {
    pub label: DeltaLabel,
    pub delta: Vec<f64>,
}

/// Evaluates the hypothesis on a candidate record sharing `dataset`'s
/// alphabet. Evaluation errors (e.g. an FSM that does not cover the swapped
/// symbol) disqualify the candidate rather than aborting the search.
fn behavior_at(
    dataset: &SymbolDataset,
    indices: &[u32],
    position: usize,
    hyp: &HypothesisSpec,
    grammar: Option<&Grammar>,
    parse_mode: ParseMode,
) -> Result<f64> {
    let probe = dataset.single_record(indices.to_vec());
    let (vals, _ok) = evaluate_one::<f64>(hyp, grammar, parse_mode, &probe, 0)?;
    Ok(vals[position])
}

/// Searches sampled non-pad positions of one record for baseline/treatment
/// swap pairs. The alphabet is scanned in order and the first valid symbol
/// of each class wins, so results are deterministic given the sampled
/// positions. Positions lacking either class are skipped; a record can
/// legitimately yield no pairs.
pub fn gen_perturbations(
    dataset: &SymbolDataset,
    record: usize,
    hyp: &HypothesisSpec,
    grammar: Option<&Grammar>,
    parse_mode: ParseMode,
    n_per_record: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PerturbationPair>> {
    let content_len = dataset.content_len(record);
    if content_len == 0 || n_per_record == 0 {
        return Ok(Vec::new());
    }
    let original = dataset.record(record).to_vec();
    // The original record must be evaluable; candidate failures below are
    // tolerated, failures here are not.
    let probe = dataset.single_record(original.clone());
    let (orig_vals, _) = evaluate_one::<f64>(hyp, grammar, parse_mode, &probe, 0)?;

    let mut positions: Vec<usize> = (0..content_len).collect();
    positions.shuffle(rng);
    positions.truncate(n_per_record);

    let chars = dataset.record_chars(record);
    let mut out = Vec::new();
    for &k in &positions {
        let mut baseline = None;
        let mut treatment = None;
        for (sym_idx, &sym) in dataset.alphabet().iter().enumerate() {
            // Pad stays out of content; swapping it in would change the
            // record's content length rather than one symbol's behavior.
            if sym == dataset.pad() || sym_idx as u32 == original[k] {
                continue;
            }
            if baseline.is_some() && treatment.is_some() {
                break;
            }
            let mut mutated = original.clone();
            mutated[k] = sym_idx as u32;
            let Ok(val) = behavior_at(dataset, &mutated, k, hyp, grammar, parse_mode) else {
                continue;
            };
            if val == orig_vals[k] {
                if baseline.is_none() {
                    baseline = Some(sym);
                }
            } else if treatment.is_none() {
                treatment = Some(sym);
            }
        }
        if let (Some(b), Some(t)) = (baseline, treatment) {
            out.push(PerturbationPair {
                record,
                position: k,
                original: chars[k],
                baseline: b,
                treatment: t,
            });
        }
    }
    Ok(out)
}

/// Runs the extractor on the original and both perturbed records and returns
/// the per-unit activation deltas at the swapped position, baseline first.
/// All three probes sit at record index 0 of equally shaped one-record
/// datasets, so extractors whose noise depends on the record index stay
/// comparable and the noise cancels out of the delta.
pub fn delta_activations<S: Scalar>(
    extractor: &dyn Extractor<S>,
    unit_ids: &[u32],
    dataset: &SymbolDataset,
    pair: &PerturbationPair,
) -> Result<(DeltaSample, DeltaSample)> {
    let original = dataset.record(pair.record).to_vec();
    let sym_index = |c: char| -> Result<u32> {
        dataset
            .alphabet()
            .iter()
            .position(|&s| s == c)
            .map(|i| i as u32)
            .ok_or_else(|| Error::Verify(format!("symbol {c:?} not in dataset alphabet")))
    };
    if pair.baseline == pair.original || pair.treatment == pair.original {
        return Err(Error::Verify(
            "perturbation symbols must differ from the original".into(),
        ));
    }
    let k = pair.position;
    let probe = |indices: Vec<u32>| -> Result<Vec<f64>> {
        let ds = dataset.single_record(indices);
        let block = extractor.extract(&ds, &[0], unit_ids)?;
        Ok((0..unit_ids.len())
            .map(|u| block.column(u)[k].to_f64_lossy())
            .collect())
    };
    let orig_acts = probe(original.clone())?;
    let mut swapped = original.clone();
    swapped[k] = sym_index(pair.baseline)?;
    let base_acts = probe(swapped)?;
    let mut swapped = original;
    swapped[k] = sym_index(pair.treatment)?;
    let treat_acts = probe(swapped)?;
    let delta = |acts: &[f64]| acts.iter().zip(&orig_acts).map(|(a, o)| a - o).collect();
    Ok((
        DeltaSample { label: DeltaLabel::Baseline, delta: delta(&base_acts) },
        DeltaSample { label: DeltaLabel::Treatment, delta: delta(&treat_acts) },
    ))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette score over the two labels with Euclidean distances.
/// Points in a singleton cluster score 0; identical point sets score 0.
pub fn silhouette(samples: &[DeltaSample]) -> Result<f64> {
    let n = samples.len();
    let n_base = samples.iter().filter(|s| s.label == DeltaLabel::Baseline).count();
    if n_base == 0 || n_base == n {
        return Err(Error::Verify(
            "silhouette needs samples from both labels".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..n {
        let (mut same_sum, mut same_n) = (0.0, 0u64);
        let (mut other_sum, mut other_n) = (0.0, 0u64);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = euclidean(&samples[i].delta, &samples[j].delta);
            if samples[i].label == samples[j].label {
                same_sum += d;
                same_n += 1;
            } else {
                other_sum += d;
                other_n += 1;
            }
        }
        if same_n == 0 {
            continue; // singleton cluster contributes s(i) = 0
        }
        let a = same_sum / same_n as f64;
        let b = other_sum / other_n as f64;
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitDeltaStats {
    pub unit_id: u32,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    pub treatment_mean: f64,
    pub treatment_sd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub hyp_id: String,
    pub unit_ids: Vec<u32>,
    pub silhouette: f64,
    pub n_baseline: usize,
    pub n_treatment: usize,
    /// Same-size random unit set scored on the identical perturbations.
    pub control_unit_ids: Option<Vec<u32>>,
    pub control_silhouette: Option<f64>,
    pub unit_stats: Vec<UnitDeltaStats>,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Perturbation pairs to aggregate (one baseline and one treatment
    /// sample each).
    pub n_samples: usize,
    /// Positions sampled per record.
    pub n_per_record: usize,
    pub seed: u64,
    /// Score a same-size random unit group on the same perturbations.
    pub control: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { n_samples: 128, n_per_record: 4, seed: 0, control: false }
    }
}

fn summarize(unit: usize, unit_id: u32, samples: &[DeltaSample]) -> UnitDeltaStats {
    let stats = |label: DeltaLabel| {
        let vals: Vec<f64> = samples
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.delta[unit])
            .collect();
        let n = vals.len().max(1) as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (baseline_mean, baseline_sd) = stats(DeltaLabel::Baseline);
    let (treatment_mean, treatment_sd) = stats(DeltaLabel::Treatment);
    UnitDeltaStats { unit_id, baseline_mean, baseline_sd, treatment_mean, treatment_sd }
}

/// Aggregates perturbation deltas across the dataset and scores the group's
/// baseline/treatment separation.
#[allow(clippy::too_many_arguments)]
pub fn verify<S: Scalar>(
    dataset: &SymbolDataset,
    extractor: &dyn Extractor<S>,
    unit_ids: &[u32],
    hyp: &HypothesisSpec,
    grammar: Option<&Grammar>,
    parse_mode: ParseMode,
    options: &VerifyOptions,
) -> Result<VerificationReport> {
    if options.n_samples == 0 {
        return Err(Error::Verify("n_samples must be positive".into()));
    }
    if unit_ids.is_empty() {
        return Err(Error::Verify("unit group must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::dataset::fnv1a64_pair(
        options.seed,
        0x5645_5246_u64, // tag so verify draws differ from other seed users
    ));
    let control_ids: Option<Vec<u32>> = if options.control {
        let pool: Vec<u32> =
            (0..extractor.n_units()).filter(|u| !unit_ids.contains(u)).collect();
        if pool.len() < unit_ids.len() {
            return Err(Error::Verify(format!(
                "control needs {} units outside the group, model has {}",
                unit_ids.len(),
                pool.len()
            )));
        }
        let mut picked: Vec<u32> =
            pool.choose_multiple(&mut rng, unit_ids.len()).copied().collect();
        picked.sort_unstable();
        Some(picked)
    } else {
        None
    };
    let combined: Vec<u32> = match &control_ids {
        Some(c) => {
            let mut all: Vec<u32> = unit_ids.iter().chain(c).copied().collect();
            all.sort_unstable();
            all.dedup();
            all
        }
        None => unit_ids.to_vec(),
    };
    let col_of = |u: u32| combined.iter().position(|&v| v == u).unwrap();

    let mut record_order: Vec<usize> = (0..dataset.n_records()).collect();
    record_order.shuffle(&mut rng);

    let mut group_samples: Vec<DeltaSample> = Vec::new();
    let mut control_samples: Vec<DeltaSample> = Vec::new();
    let mut collected = 0usize;
    'records: for &rec in &record_order {
        let pairs = gen_perturbations(
            dataset,
            rec,
            hyp,
            grammar,
            parse_mode,
            options.n_per_record,
            &mut rng,
        )?;
        for pair in pairs {
            let (base, treat) = delta_activations(extractor, &combined, dataset, &pair)?;
            let project = |s: &DeltaSample, ids: &[u32]| DeltaSample {
                label: s.label,
                delta: ids.iter().map(|&u| s.delta[col_of(u)]).collect(),
            };
            group_samples.push(project(&base, unit_ids));
            group_samples.push(project(&treat, unit_ids));
            if let Some(c) = &control_ids {
                control_samples.push(project(&base, c));
                control_samples.push(project(&treat, c));
            }
            collected += 1;
            if collected == options.n_samples {
                break 'records;
            }
        }
    }
    if collected == 0 {
        return Err(Error::Verify(
            "no valid perturbation pairs found in the dataset".into(),
        ));
    }
    let unit_stats = unit_ids
        .iter()
        .enumerate()
        .map(|(i, &u)| summarize(i, u, &group_samples))
        .collect();
    Ok(VerificationReport {
        hyp_id: hyp.hyp_id.clone(),
        unit_ids: unit_ids.to_vec(),
        silhouette: silhouette(&group_samples)?,
        n_baseline: collected,
        n_treatment: collected,
        control_silhouette: match &control_samples[..] {
            [] => None,
            s => Some(silhouette(s)?),
        },
        control_unit_ids: control_ids,
        unit_stats,
    })
}

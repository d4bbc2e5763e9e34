//! Oracle checks for the affinity measures: streaming states vs independent
//! batch reference implementations, interval coverage, and analytic values.

use dni_core::measures::{
    fisher_interval, normal_quantile, DiffMeansState, JaccardState, LogregParams, LogregState,
    MutualInfoState, PearsonState,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn two_pass_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn column(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-100.0f64..100.0, len..=len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pearson_blockwise_matches_batch_oracle(
        (x, y, cut1, cut2) in (8usize..200).prop_flat_map(|n| {
            (column(n), column(n), 0..=n, 0..=n)
        })
    ) {
        let (lo, hi) = (cut1.min(cut2), cut1.max(cut2));
        let mut st = PearsonState::<f64>::new();
        st.update(&x[..lo], &y[..lo]);
        st.update(&x[lo..hi], &y[lo..hi]);
        st.update(&x[hi..], &y[hi..]);
        match two_pass_pearson(&x, &y) {
            Some(r) => prop_assert!((st.r().unwrap() - r).abs() < 1e-9),
            None => prop_assert!(st.r().is_none()),
        }
    }

    #[test]
    fn pearson_invariant_under_positive_affine_maps(
        (x, y) in (8usize..100).prop_flat_map(|n| (column(n), column(n))),
        ax in 0.01f64..50.0,
        bx in -100.0f64..100.0,
        ay in 0.01f64..50.0,
        by in -100.0f64..100.0,
    ) {
        let xt: Vec<f64> = x.iter().map(|v| ax * v + bx).collect();
        let yt: Vec<f64> = y.iter().map(|v| ay * v + by).collect();
        let mut plain = PearsonState::<f64>::new();
        plain.update(&x, &y);
        let mut mapped = PearsonState::<f64>::new();
        mapped.update(&xt, &yt);
        match (plain.r(), mapped.r()) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9),
            (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
        }
    }

    #[test]
    fn diff_means_blockwise_matches_batch_oracle(
        (x, cut) in (4usize..150).prop_flat_map(|n| (column(n), 0..=n)),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..x.len()).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        let n1 = y.iter().filter(|&&v| v != 0.0).count();
        let oracle = if n1 == 0 || n1 == y.len() {
            None
        } else {
            let (mut s1, mut s0) = (0.0, 0.0);
            for (&xi, &yi) in x.iter().zip(&y) {
                if yi != 0.0 { s1 += xi } else { s0 += xi }
            }
            Some(s1 / n1 as f64 - s0 / (y.len() - n1) as f64)
        };
        let mut st = DiffMeansState::<f64>::new();
        st.update(&x[..cut], &y[..cut]);
        st.update(&x[cut..], &y[cut..]);
        match oracle {
            Some(d) => prop_assert!((st.diff().unwrap() - d).abs() < 1e-9),
            None => prop_assert!(st.diff().is_none()),
        }
    }

    #[test]
    fn frozen_quantile_measures_are_block_order_additive(
        (x, y) in (40usize..200).prop_flat_map(|n| {
            (column(n), proptest::collection::vec(0u8..2, n..=n))
        }),
        cut in 20usize..40,
    ) {
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        // Identical first block (so identical frozen state); the remainder
        // split differently must not change the score.
        let mid = cut + (x.len() - cut) / 2;
        let mut one = JaccardState::new(0.25);
        one.update(&x[..cut], &y[..cut]);
        one.update(&x[cut..], &y[cut..]);
        let mut two = JaccardState::new(0.25);
        two.update(&x[..cut], &y[..cut]);
        two.update(&x[cut..mid], &y[cut..mid]);
        two.update(&x[mid..], &y[mid..]);
        prop_assert_eq!(one.jaccard(), two.jaccard());

        let mut one = MutualInfoState::new(5);
        one.update(&x[..cut], &y[..cut]);
        one.update(&x[cut..], &y[cut..]);
        let mut two = MutualInfoState::new(5);
        two.update(&x[..cut], &y[..cut]);
        two.update(&x[cut..mid], &y[cut..mid]);
        two.update(&x[mid..], &y[mid..]);
        match (one.mi(), two.mi()) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
        }
    }
}

#[test]
fn fisher_coverage_on_bivariate_normal() {
    let rho: f64 = 0.5;
    let n = 200;
    let trials = 1000;
    let mut covered = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(90_000 + trial);
        let mut st = PearsonState::<f64>::new();
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            x.push(z1);
            y.push(rho * z1 + (1.0 - rho * rho).sqrt() * z2);
        }
        st.update(&x, &y);
        let (lo, hi) = fisher_interval(st.r().unwrap(), n as u64, 0.95);
        if lo <= rho && rho <= hi {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    assert!((0.93..=0.97).contains(&rate), "coverage {}", rate);
}

#[test]
fn mutual_info_tracks_label_entropy_for_thresholded_labels() {
    // y = indicator(x > q-quantile) makes MI(x_binned; y) approach H(y).
    for (q, seed) in [(0.5, 1u64), (0.25, 2), (0.9, 3)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|&v| f64::from(v > q)).collect();
        let p = 1.0 - q;
        let entropy = -p * p.ln() - (1.0 - p) * (1.0 - p).ln();
        let mut st = MutualInfoState::new(20);
        st.update(&x, &y);
        let mi = st.mi().unwrap();
        // Binning at 20 bins loses a little information at off-grid cuts.
        assert!(mi <= entropy + 1e-9, "q={} mi={} H={}", q, mi, entropy);
        assert!(mi > entropy - 0.08, "q={} mi={} H={}", q, mi, entropy);
    }
}

#[test]
fn logreg_f1_matches_full_batch_reference() {
    // Reference: full-batch gradient descent on the same standardized data,
    // same folds, run to near-convergence; F1s should land close.
    let n = 10_000;
    let n_units = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cols: Vec<Vec<f64>> = (0..n_units)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0f64..1.0)).collect())
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| f64::from(cols[0][i] - 0.5 * cols[1][i] > 0.1))
        .collect();

    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    let mut st = LogregState::<f64>::new(n_units, vec!["h".into()], LogregParams::default());
    st.update(&refs, &[&y]).unwrap();
    let streaming_f1 = st.results()[0].f1;

    // Batch reference on fold 0's split (train on folds 1..5, test on 0).
    let mean: Vec<f64> = (0..n_units)
        .map(|u| cols[u].iter().sum::<f64>() / n as f64)
        .collect();
    let sd: Vec<f64> = (0..n_units)
        .map(|u| {
            (cols[u].iter().map(|v| (v - mean[u]).powi(2)).sum::<f64>() / n as f64).sqrt()
        })
        .collect();
    let std_row = |i: usize| -> Vec<f64> {
        (0..n_units).map(|u| (cols[u][i] - mean[u]) / sd[u]).collect()
    };
    let mut w = vec![0.0f64; n_units + 1];
    for _ in 0..400 {
        let mut grad = vec![0.0f64; n_units + 1];
        let mut m = 0.0;
        for i in 0..n {
            if i % 5 == 0 {
                continue;
            }
            m += 1.0;
            let xs = std_row(i);
            let z = w[n_units] + (0..n_units).map(|u| w[u] * xs[u]).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            let g = p - y[i];
            for u in 0..n_units {
                grad[u] += g * xs[u];
            }
            grad[n_units] += g;
        }
        for u in 0..=n_units {
            w[u] -= 0.5 * grad[u] / m;
        }
    }
    let (mut tp, mut fp, mut fne) = (0u64, 0u64, 0u64);
    for i in (0..n).filter(|i| i % 5 == 0) {
        let xs = std_row(i);
        let z = w[n_units] + (0..n_units).map(|u| w[u] * xs[u]).sum::<f64>();
        match (z >= 0.0, y[i] != 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            _ => {}
        }
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fne) as f64;
    let batch_f1 = 2.0 * p * r / (p + r);
    assert!(
        (streaming_f1 - batch_f1).abs() < 0.05,
        "streaming={} batch={}",
        streaming_f1,
        batch_f1
    );
}

#[test]
fn quantile_function_inverts_erf_based_cdf() {
    // Independent check of the quantile routine against the CDF computed
    // from an erf series (Abramowitz-Stegun 7.1.26 is too coarse; use the
    // complementary error function via continued Taylor summation).
    fn erf(x: f64) -> f64 {
        // Maclaurin series, adequate for |x| <= 3 at f64 precision here.
        let mut term = x;
        let mut sum = x;
        for k in 1..200 {
            term *= -x * x / k as f64;
            sum += term / (2 * k + 1) as f64;
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }
    let cdf = |z: f64| 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
    for p in [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.975, 0.99] {
        let z = normal_quantile(p);
        assert!((cdf(z) - p).abs() < 1e-7, "p={} z={} cdf={}", p, z, cdf(z));
    }
}

//! Discretized mutual information, top-quantile Jaccard overlap, and
//! class-mean difference. All three stream blockwise; MI and Jaccard freeze
//! their discretization from the first block they see so later updates are
//! purely additive.

use crate::scalar::Scalar;

/// Plug-in mutual information (nats) between equal-frequency-binned x and a
/// binary y. Bin edges are computed once from the first block and reused.
#[derive(Debug, Clone)]
pub struct MutualInfoState<S: Scalar> {
    bins: usize,
    edges: Option<Vec<S>>,
    counts: Vec<[u64; 2]>,
    n: u64,
}

impl<S: Scalar> MutualInfoState<S> {
    pub fn new(bins: usize) -> Self {
        assert!(bins >= 2, "mutual information needs at least 2 bins");
        Self { bins, edges: None, counts: vec![[0, 0]; bins], n: 0 }
    }

    fn freeze_edges(&mut self, x: &[S]) {
        let mut sorted: Vec<S> = x.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Edge k sits at the k/bins quantile position; ties keep value order
        // from the sort, so duplicated values simply leave some bins empty.
        let edges = (1..self.bins)
            .map(|k| sorted[k * sorted.len() / self.bins])
            .collect();
        self.edges = Some(edges);
    }

    fn bin_of(&self, x: S) -> usize {
        let edges = self.edges.as_ref().unwrap();
        edges.iter().take_while(|&&e| x >= e).count()
    }

    pub fn update(&mut self, x: &[S], y: &[S]) {
        debug_assert_eq!(x.len(), y.len());
        if self.edges.is_none() {
            self.freeze_edges(x);
        }
        for (&xi, &yi) in x.iter().zip(y) {
            let b = self.bin_of(xi);
            let cls = usize::from(yi.to_f64_lossy() != 0.0);
            self.counts[b][cls] += 1;
            self.n += 1;
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// MI in nats; `None` when degenerate (constant y, or fewer rows than
    /// bins), which scores as 0.
    pub fn mi(&self) -> Option<f64> {
        if self.n < self.bins as u64 {
            return None;
        }
        let n = self.n as f64;
        let n1: u64 = self.counts.iter().map(|c| c[1]).sum();
        if n1 == 0 || n1 == self.n {
            return None;
        }
        let py = [(self.n - n1) as f64 / n, n1 as f64 / n];
        let mut mi = 0.0;
        for c in &self.counts {
            let pb = (c[0] + c[1]) as f64 / n;
            if pb == 0.0 {
                continue;
            }
            for cls in 0..2 {
                let pj = c[cls] as f64 / n;
                if pj > 0.0 {
                    mi += pj * (pj / (pb * py[cls])).ln();
                }
            }
        }
        Some(mi.max(0.0))
    }
}

/// Jaccard overlap between y and x binarized at the (1 - tau) quantile of the
/// first block.
#[derive(Debug, Clone)]
pub struct JaccardState<S: Scalar> {
    tau: f64,
    threshold: Option<S>,
    intersection: u64,
    union: u64,
    n: u64,
}

impl<S: Scalar> JaccardState<S> {
    pub fn new(tau: f64) -> Self {
        assert!(tau > 0.0 && tau < 1.0, "tau must be in (0, 1)");
        Self { tau, threshold: None, intersection: 0, union: 0, n: 0 }
    }

    pub fn update(&mut self, x: &[S], y: &[S]) {
        debug_assert_eq!(x.len(), y.len());
        if self.threshold.is_none() {
            let mut sorted: Vec<S> = x.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let idx = (((1.0 - self.tau) * sorted.len() as f64) as usize)
                .min(sorted.len() - 1);
            self.threshold = Some(sorted[idx]);
        }
        let t = self.threshold.unwrap();
        for (&xi, &yi) in x.iter().zip(y) {
            let xb = xi >= t;
            let yb = yi.to_f64_lossy() != 0.0;
            self.intersection += u64::from(xb && yb);
            self.union += u64::from(xb || yb);
            self.n += 1;
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// `None` when the union is empty (degenerate), which scores as 0.
    pub fn jaccard(&self) -> Option<f64> {
        if self.union == 0 {
            return None;
        }
        Some(self.intersection as f64 / self.union as f64)
    }
}

/// Difference of x means between the y = 1 and y = 0 classes.
#[derive(Debug, Clone, Default)]
pub struct DiffMeansState<S: Scalar> {
    sum1: S,
    n1: u64,
    sum0: S,
    n0: u64,
}

impl<S: Scalar> DiffMeansState<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, x: &[S], y: &[S]) {
        debug_assert_eq!(x.len(), y.len());
        for (&xi, &yi) in x.iter().zip(y) {
            if yi.to_f64_lossy() != 0.0 {
                self.sum1 += xi;
                self.n1 += 1;
            } else {
                self.sum0 += xi;
                self.n0 += 1;
            }
        }
    }

    pub fn n(&self) -> u64 {
        self.n0 + self.n1
    }

    /// `None` when either class is empty (degenerate), which scores as 0.
    pub fn diff(&self) -> Option<f64> {
        if self.n0 == 0 || self.n1 == 0 {
            return None;
        }
        Some(
            self.sum1.to_f64_lossy() / self.n1 as f64
                - self.sum0.to_f64_lossy() / self.n0 as f64,
        )
    }
}

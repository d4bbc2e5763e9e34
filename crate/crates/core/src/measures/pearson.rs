//! Incremental Pearson correlation with Fisher-transformation intervals.

use crate::scalar::Scalar;

/// Element-wise running co-moments. Feeding the same elements in the same
/// order produces bit-identical state regardless of how they are split into
/// blocks, which is what makes blockwise scoring exact.
#[derive(Debug, Clone, Default)]
pub struct PearsonState<S: Scalar> {
    n: u64,
    mean_x: S,
    mean_y: S,
    m2x: S,
    m2y: S,
    cxy: S,
}

impl<S: Scalar> PearsonState<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, x: &[S], y: &[S]) {
        debug_assert_eq!(x.len(), y.len());
        for (&xi, &yi) in x.iter().zip(y) {
            self.n += 1;
            let n = S::cast(self.n);
            let dx = xi - self.mean_x;
            self.mean_x += dx / n;
            let dx2 = xi - self.mean_x;
            let dy = yi - self.mean_y;
            self.mean_y += dy / n;
            let dy2 = yi - self.mean_y;
            self.m2x += dx * dx2;
            self.m2y += dy * dy2;
            self.cxy += dx * dy2;
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Correlation in [-1, 1]; `None` marks the degenerate (zero-variance or
    /// n < 2) case, which scores as 0.
    pub fn r(&self) -> Option<f64> {
        if self.n < 2 {
            return None;
        }
        let m2x = self.m2x.to_f64_lossy();
        let m2y = self.m2y.to_f64_lossy();
        if m2x <= 0.0 || m2y <= 0.0 {
            return None;
        }
        let r = self.cxy.to_f64_lossy() / (m2x * m2y).sqrt();
        Some(r.clamp(-1.0, 1.0))
    }

    /// Half-width of the Fisher-transformation confidence interval, mapped
    /// back to r-space. `None` until n >= 4 or when degenerate.
    pub fn err(&self, confidence: f64) -> Option<f64> {
        if self.n < 4 {
            return None;
        }
        let r = self.r()?;
        Some(fisher_halfwidth(r, self.n, confidence))
    }
}

/// CI half-width in r-space: z = atanh(r), hw = z_q / sqrt(n - 3),
/// err = (tanh(z + hw) - tanh(z - hw)) / 2.
pub fn fisher_halfwidth(r: f64, n: u64, confidence: f64) -> f64 {
    let z = r.clamp(-1.0, 1.0).atanh();
    let q = normal_quantile(0.5 + confidence / 2.0);
    let hw = q / ((n as f64) - 3.0).sqrt();
    ((z + hw).tanh() - (z - hw).tanh()) / 2.0
}

/// Fisher interval bounds in r-space.
pub fn fisher_interval(r: f64, n: u64, confidence: f64) -> (f64, f64) {
    let z = r.clamp(-1.0, 1.0).atanh();
    let q = normal_quantile(0.5 + confidence / 2.0);
    let hw = q / ((n as f64) - 3.0).sqrt();
    ((z - hw).tanh(), (z + hw).tanh())
}

/// Standard normal quantile function (Acklam's rational approximation,
/// absolute error below 1.2e-9 over (0, 1)).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument must be in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

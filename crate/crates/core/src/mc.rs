//! Monte Carlo summaries. Every stochastic output in the crate carries a
//! sample count and a standard error.

use num_complex::Complex64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, stderr: 0.0, samples: 1 }
    }

    pub fn from_samples(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut acc = MeanVar::default();
        for v in values {
            acc.push(v);
        }
        acc.estimate()
    }

    /// `|mean - target| <= k * stderr + slack`
    pub fn agrees_with(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr + slack
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexMcEstimate {
    pub mean: Complex64,
    /// Standard error of the complex mean, `sqrt((Var Re + Var Im) / M)`.
    pub stderr: f64,
    pub samples: usize,
}

/// Streaming mean/variance (Welford), mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanVar {
    n: usize,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanVar) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn estimate(&self) -> Option<McEstimate> {
        (self.n > 0).then(|| McEstimate {
            mean: self.mean,
            stderr: (self.variance() / self.n as f64).sqrt(),
            samples: self.n,
        })
    }
}

/// Sums and sums of squares over a fixed-width block of accumulators. Used for
/// per-node ensemble averages where a Welford state per slot would be wasteful.
#[derive(Clone, Debug)]
pub struct SumBlock {
    pub count: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl SumBlock {
    pub fn new(width: usize) -> Self {
        Self { count: 0, sum: vec![0.0; width], sum_sq: vec![0.0; width] }
    }

    pub fn merge(&mut self, other: &SumBlock) {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
    }

    /// Means and standard errors, assuming `count` samples per slot.
    pub fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.count as f64;
        let mut means = Vec::with_capacity(self.sum.len());
        let mut errs = Vec::with_capacity(self.sum.len());
        for (s, q) in self.sum.iter().zip(&self.sum_sq) {
            let mean = s / m;
            let var = if self.count > 1 { ((q - s * mean) / (m - 1.0)).max(0.0) } else { 0.0 };
            means.push(mean);
            errs.push((var / m).sqrt());
        }
        (means, errs)
    }
}

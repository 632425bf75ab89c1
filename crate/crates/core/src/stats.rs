//! Small statistical helpers shared by the Monte Carlo and fitting code.

/// Two-sided 95% standard-normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Neumaier-compensated running sum. Reduction order still matters for the
/// last bit, so callers that need bit-reproducibility accumulate in a fixed
/// order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Sample mean and unbiased standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().copied().collect::<CompensatedSum>().value() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Occupation number drawn from a thermal (geometric) distribution with mean
/// `nbar` by inverting its CDF at `u ∈ (0, 1]`.
///
/// Monotone in `nbar` for fixed `u`, so fixed uniforms give common random
/// numbers across parameter values.
pub fn thermal_quantile(nbar: f64, u: f64) -> u64 {
    if nbar <= 0.0 {
        return 0;
    }
    let log_ratio = (nbar / (nbar + 1.0)).ln();
    let n = (u.ln() / log_ratio).floor();
    if n.is_finite() && n > 0.0 {
        n as u64
    } else {
        0
    }
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub sd: f64,
    pub count: usize,
}

impl MeanEstimate {
    pub fn from_iter<I: IntoIterator<Item = f64>>(values: I) -> Self {
        // Welford, in input order so results are reproducible.
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for v in values {
            n += 1;
            let delta = v - mean;
            mean += delta / n as f64;
            m2 += delta * (v - mean);
        }
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                sd: f64::NAN,
                count: 0,
            };
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            sd: var.sqrt(),
            count: n,
        }
    }
}

/// `sqrt(a^2 + b^2)`: standard error of a difference of independent estimates.
pub fn combined(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

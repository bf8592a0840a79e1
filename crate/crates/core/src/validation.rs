//! Brute-force reference computations for checking the sampler: gridded
//! posteriors for one or two scalar parameters, Kolmogorov–Smirnov distances,
//! central finite differences and batch-means standard errors.
//!
//! Nothing here calls into the sampler; callers pass their own log densities.

use crate::error::{Error, Result};

/// Largest posterior mass tolerated in the boundary cell on each side of a grid.
pub const CLIPPING_TOLERANCE: f64 = 1e-6;

/// Equally spaced closed interval `[lo, hi]` with `n ≥ 3` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo < hi) || n < 3 || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("bad axis [{lo}, {hi}] with {n} nodes")));
        }
        Ok(Axis { lo, hi, n })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.lo + i as f64 * self.step()).collect()
    }
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// Density tabulated on an axis, normalized by the trapezoid rule.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    cumulative: Vec<f64>,
}

impl DensityTable {
    fn from_unnormalized(x: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let h = x[1] - x[0];
        let total: f64 = trapezoid_weights(x.len(), h).iter().zip(&values).map(|(w, v)| w * v).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degeneracy("density has no mass on the grid".into()));
        }
        let density: Vec<f64> = values.iter().map(|v| v / total).collect();
        let mut cumulative = vec![0.0; x.len()];
        for i in 1..x.len() {
            cumulative[i] = cumulative[i - 1] + 0.5 * h * (density[i - 1] + density[i]);
        }
        let table = DensityTable { x, density, cumulative };
        let n = table.x.len();
        let left = table.cumulative[1];
        let right = table.cumulative[n - 1] - table.cumulative[n - 2];
        if left > CLIPPING_TOLERANCE || right > CLIPPING_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "grid [{}, {}] clips the density (edge masses {left:.2e}, {right:.2e}); widen the range",
                table.x[0],
                table.x[n - 1]
            )));
        }
        Ok(table)
    }

    /// Integral of the normalized density, one up to rounding.
    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Piecewise-linear interpolation of the cumulative trapezoid sums.
    pub fn cdf(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return 0.0;
        }
        if t >= self.x[n - 1] {
            return 1.0;
        }
        let h = self.x[1] - self.x[0];
        let i = (((t - self.x[0]) / h) as usize).min(n - 2);
        let frac = (t - self.x[i]) / h;
        self.cumulative[i] + frac * (self.cumulative[i + 1] - self.cumulative[i])
    }

    pub fn mean(&self) -> f64 {
        self.moment(|t| t)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.moment(|t| (t - m) * (t - m))
    }

    fn moment(&self, f: impl Fn(f64) -> f64) -> f64 {
        let h = self.x[1] - self.x[0];
        trapezoid_weights(self.x.len(), h)
            .iter()
            .zip(self.x.iter().zip(&self.density))
            .map(|(w, (&t, &d))| w * f(t) * d)
            .sum()
    }
}

fn exp_shifted(log_values: &[f64]) -> Result<Vec<f64>> {
    let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Degeneracy("log density is not finite anywhere on the grid".into()));
    }
    Ok(log_values.iter().map(|v| (v - max).exp()).collect())
}

/// Tabulates `exp(log_density)` on `axis` and normalizes it.
pub fn quadrature_1d(log_density: impl Fn(f64) -> f64, axis: Axis) -> Result<DensityTable> {
    let x = axis.nodes();
    let logs: Vec<f64> = x.iter().map(|&t| log_density(t)).collect();
    DensityTable::from_unnormalized(x, exp_shifted(&logs)?)
}

/// A normalized two-parameter density on a tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable2 {
    pub a: Axis,
    pub b: Axis,
    /// `density[i * b.n + j]` at `(a_i, b_j)`.
    pub density: Vec<f64>,
}

impl DensityTable2 {
    /// Marginal table of the first parameter.
    pub fn marginal_a(&self) -> Result<DensityTable> {
        let wb = trapezoid_weights(self.b.n, self.b.step());
        let values = (0..self.a.n)
            .map(|i| (0..self.b.n).map(|j| wb[j] * self.density[i * self.b.n + j]).sum())
            .collect();
        DensityTable::from_unnormalized(self.a.nodes(), values)
    }

    /// Marginal table of the second parameter.
    pub fn marginal_b(&self) -> Result<DensityTable> {
        let wa = trapezoid_weights(self.a.n, self.a.step());
        let values = (0..self.b.n)
            .map(|j| (0..self.a.n).map(|i| wa[i] * self.density[i * self.b.n + j]).sum())
            .collect();
        DensityTable::from_unnormalized(self.b.nodes(), values)
    }

    pub fn total(&self) -> f64 {
        let wa = trapezoid_weights(self.a.n, self.a.step());
        let wb = trapezoid_weights(self.b.n, self.b.step());
        (0..self.a.n)
            .map(|i| (0..self.b.n).map(|j| wa[i] * wb[j] * self.density[i * self.b.n + j]).sum::<f64>())
            .sum()
    }
}

/// Tabulates `exp(log_density(a, b))` on a tensor grid and normalizes it.
/// Both marginals are checked for clipping.
pub fn quadrature_2d(log_density: impl Fn(f64, f64) -> f64, a: Axis, b: Axis) -> Result<DensityTable2> {
    let an = a.nodes();
    let bn = b.nodes();
    let mut logs = Vec::with_capacity(a.n * b.n);
    for &x in &an {
        for &y in &bn {
            logs.push(log_density(x, y));
        }
    }
    let values = exp_shifted(&logs)?;
    let mut table = DensityTable2 { a, b, density: values };
    let total = table.total();
    for v in &mut table.density {
        *v /= total;
    }
    table.marginal_a()?;
    table.marginal_b()?;
    Ok(table)
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n - F|`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Central differences with step `h·max(1, |x_j|)` per coordinate.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    (0..x.len())
        .map(|j| {
            let step = h * x[j].abs().max(1.0);
            point[j] = x[j] + step;
            let up = f(&point);
            point[j] = x[j] - step;
            let down = f(&point);
            point[j] = x[j];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Mean and batch-means standard error of a (possibly autocorrelated) series.
pub fn batch_means(series: &[f64], n_batches: usize) -> (f64, f64) {
    let n = series.len();
    let size = n / n_batches;
    assert!(size >= 1, "series shorter than the number of batches");
    let means: Vec<f64> = (0..n_batches)
        .map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    (grand, (var / n_batches as f64).sqrt())
}

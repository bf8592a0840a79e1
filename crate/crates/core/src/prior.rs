//! Hyperprior elicitation from a rough sketch of the covariate ranges and
//! centers.
//!
//! Two procedures are offered. The first (one covariate only) tunes the prior
//! so the induced within-component correlation between `z` and `x` is close to
//! uniform on (-1, 1). The second matches the base distribution to the
//! factorization of an inverse-Wishart covariance with diagonal scale.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::data::Dataset;
use crate::dist::{gamma, inv_gamma, inverse_wishart, mvn, std_normal};
use crate::error::{Error, Result};
use crate::gibbs::sample_mixture;
use crate::hyper::{HyperPrior, HyperState, KernelStructure};
use crate::kernel::factorize_covariance;
use crate::special::norm_cdf;
use crate::validation::ks_distance;

/// Smallest Monte Carlo budget accepted by the correlation search.
pub const MIN_SIM_BUDGET: usize = 10_000;

/// Approximate covariate ranges `r` and centers `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSketch {
    pub ranges: Vec<f64>,
    pub centers: Vec<f64>,
}

impl PriorSketch {
    pub fn new(ranges: Vec<f64>, centers: Vec<f64>) -> Result<Self> {
        if ranges.is_empty() || ranges.len() != centers.len() {
            return Err(Error::InvalidHyperparameter("ranges and centers must have equal, positive length".into()));
        }
        if let Some(r) = ranges.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidHyperparameter(format!("covariate range {r} must be positive")));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidHyperparameter("covariate centers must be finite".into()));
        }
        Ok(PriorSketch { ranges, centers })
    }

    /// Observed range and midpoint of every covariate.
    pub fn from_data(data: &Dataset) -> Result<Self> {
        let (ranges, centers) = data.ranges().into_iter().map(|(lo, hi)| (hi - lo, 0.5 * (lo + hi))).unzip();
        PriorSketch::new(ranges, centers)
    }

    pub fn p(&self) -> usize {
        self.ranges.len()
    }

    /// `(r_j/4)²`, the implied covariate variances.
    pub fn scales(&self) -> Vec<f64> {
        self.ranges.iter().map(|r| (r / 4.0).powi(2)).collect()
    }
}

/// Knobs not fixed by the elicitation procedures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorOptions {
    pub a_alpha: f64,
    pub b_alpha: f64,
    /// Share of the block-diagonal covariance given to `B_θ`; the rest goes to `E(C)`.
    pub theta_share: f64,
    pub structure: KernelStructure,
}

impl Default for PriorOptions {
    fn default() -> Self {
        PriorOptions {
            a_alpha: 2.0,
            b_alpha: 1.0,
            theta_share: 0.5,
            structure: KernelStructure::Full,
        }
    }
}

/// Location hyperparameters shared by both procedures.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterScale {
    pub a_m: DVector<f64>,
    pub b_m: DMatrix<f64>,
    pub a_v: f64,
    pub b_v: DMatrix<f64>,
}

/// `a_m = (0, c)`, `B_m = ½ diag(1, (r/4)²)`, `a_V = p + 3` and `B_V` chosen so
/// that `E(V) = B_V/(a_V - p - 2) = B_m`.
pub fn center_scale_hyperparams(sketch: &PriorSketch) -> CenterScale {
    let p = sketch.p();
    let mut a_m = DVector::zeros(p + 1);
    a_m.rows_mut(1, p).copy_from_slice(&sketch.centers);
    let mut diag = vec![1.0];
    diag.extend(sketch.scales());
    let b_m = DMatrix::from_diagonal(&DVector::from_vec(diag)) * 0.5;
    let a_v = p as f64 + 3.0;
    let b_v = &b_m * (a_v - p as f64 - 2.0);
    CenterScale { a_m, b_m, a_v, b_v }
}

/// Outcome of the uniform-correlation search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationSearch {
    pub prior: HyperPrior,
    /// Shares `(k₁, k₂, k₃)` of `(r/4)²` given to `b_θ`, `E(s)` and `E(C)`.
    pub shares: [f64; 3],
    /// KS distance of the induced correlation prior to U(-1, 1).
    pub ks: f64,
    pub sim_budget: usize,
    /// Every candidate with its score, in search order.
    pub candidates: Vec<([f64; 3], f64)>,
}

/// Hyperprior for one covariate given shares `k` of `R = (r/4)²`:
/// `ν = 2`, `C ~ IG(2, k₃R)`, `θ ~ N(0, k₁R)`, `s ~ Exp(mean k₂R)`.
pub fn uniform_correlation_prior(sketch: &PriorSketch, shares: [f64; 3], options: &PriorOptions) -> Result<HyperPrior> {
    if sketch.p() != 1 {
        return Err(Error::Unsupported(
            "uniform-correlation elicitation is implemented for one covariate; use the inverse-Wishart procedure".into(),
        ));
    }
    if options.structure != KernelStructure::Full {
        return Err(Error::Unsupported("uniform-correlation elicitation needs the full kernel".into()));
    }
    if shares.iter().any(|k| !(*k > 0.0)) || (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidHyperparameter(format!("shares {shares:?} must be positive and sum to 1")));
    }
    let cs = center_scale_hyperparams(sketch);
    let r = sketch.scales()[0];
    let [k1, k2, k3] = shares;
    // IG(a, b) is the one-dimensional inverse-Wishart with df 2a and scale 2b.
    let ig_shape = 2.0;
    Ok(HyperPrior {
        structure: KernelStructure::Full,
        p: 1,
        a_m: cs.a_m,
        b_m: cs.b_m,
        a_v: cs.a_v,
        b_v: cs.b_v,
        a_theta: DVector::zeros(1),
        b_theta: DMatrix::from_element(1, 1, k1 * r),
        a_c: 2.0 * ig_shape,
        b_c: DMatrix::from_element(1, 1, 2.0 * k3 * r),
        nu: vec![2.0],
        a_s: vec![1.0],
        b_s: vec![1.0 / (k2 * r)],
        a_alpha: options.a_alpha,
        b_alpha: options.b_alpha,
    })
}

/// Draws of the within-component correlation `ρ = -β̃/√(β̃² + δ)` implied by
/// the base distribution with `ψ` integrated over its hyperprior.
pub fn induced_correlations<R: Rng + ?Sized>(prior: &HyperPrior, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let c_shape = 0.5 * prior.a_c;
    let c_scale = 0.5 * prior.b_c[(0, 0)];
    let theta_sd = prior.b_theta[(0, 0)].sqrt();
    (0..n)
        .map(|_| {
            let theta = theta_sd * std_normal(rng);
            let c = inv_gamma(c_shape, c_scale, rng)?;
            let b = theta + c.sqrt() * std_normal(rng);
            let s = gamma(prior.a_s[0], prior.b_s[0], rng)?;
            let d = inv_gamma(prior.nu[0], s, rng)?;
            Ok(-b / (b * b + d).sqrt())
        })
        .collect()
}

/// Searches shares on the 0.05 simplex grid (all shares ≥ 0.05) for the most
/// uniform induced correlation prior. Every candidate is scored with the same
/// random numbers, generated from `seed`.
pub fn elicit_uniform_correlation(
    sketch: &PriorSketch,
    sim_budget: usize,
    options: &PriorOptions,
    seed: u64,
) -> Result<CorrelationSearch> {
    if sim_budget < MIN_SIM_BUDGET {
        return Err(Error::Config(format!(
            "simulation budget {sim_budget} is below the minimum of {MIN_SIM_BUDGET}"
        )));
    }
    let uniform_cdf = |t: f64| (0.5 * (t + 1.0)).clamp(0.0, 1.0);
    let mut candidates = Vec::new();
    let mut best: Option<([f64; 3], f64)> = None;
    for i in 1..=18u32 {
        for j in 1..=(19 - i) {
            let l = 20 - i - j;
            if l == 0 {
                continue;
            }
            let shares = [f64::from(i) / 20.0, f64::from(j) / 20.0, f64::from(l) / 20.0];
            let prior = uniform_correlation_prior(sketch, shares, options)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = induced_correlations(&prior, sim_budget, &mut rng)?;
            let ks = ks_distance(&rho, uniform_cdf);
            candidates.push((shares, ks));
            if best.is_none_or(|(_, b)| ks < b) {
                best = Some((shares, ks));
            }
        }
    }
    let (shares, ks) = best.expect("grid is non-empty");
    Ok(CorrelationSearch {
        prior: uniform_correlation_prior(sketch, shares, options)?,
        shares,
        ks,
        sim_budget,
        candidates,
    })
}

/// Inverse-gamma shapes `0.5(v + i - (p+1))`, `i = 2..p+1`.
pub fn implied_delta_shapes(v: f64, p: usize) -> Vec<f64> {
    (2..=p + 1).map(|i| 0.5 * (v + i as f64 - (p + 1) as f64)).collect()
}

/// Hyperprior matching the factorization of `Σ ~ IW(p+3, T)` with
/// `T = diag(1, (r/4)²)`. Deterministic.
pub fn elicit_inverse_wishart(sketch: &PriorSketch, options: &PriorOptions) -> Result<HyperPrior> {
    if !(options.theta_share > 0.0 && options.theta_share < 1.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "theta_share = {} must lie strictly between 0 and 1",
            options.theta_share
        )));
    }
    let p = sketch.p();
    let cs = center_scale_hyperparams(sketch);
    let v = p as f64 + 3.0;
    let mut t = vec![1.0];
    t.extend(sketch.scales());
    let nu = implied_delta_shapes(v, p);
    let b_s: Vec<f64> = (1..=p).map(|i| 2.0 / t[i]).collect();
    // Row i+1 of β has prior covariance E[δ_{i+1}] diag(T₁⁻¹, …, T_i⁻¹).
    let q = p * (p + 1) / 2;
    let mut block = DMatrix::zeros(q, q);
    for row in 1..=p {
        let mean_delta = 0.5 * t[row] / (nu[row - 1] - 1.0);
        let base = row * (row - 1) / 2;
        for j in 0..row {
            block[(base + j, base + j)] = mean_delta / t[j];
        }
    }
    let b_theta = &block * options.theta_share;
    let mean_c = &block * (1.0 - options.theta_share);
    // a_C = q + 2 makes B_C = E(C).
    let a_c = q as f64 + 2.0;
    let b_c = mean_c * (a_c - q as f64 - 1.0);
    let full = HyperPrior {
        structure: KernelStructure::Full,
        p,
        a_m: cs.a_m,
        b_m: cs.b_m,
        a_v: cs.a_v,
        b_v: cs.b_v,
        a_theta: DVector::zeros(q),
        b_theta,
        a_c,
        b_c,
        nu,
        a_s: vec![1.0; p],
        b_s,
        a_alpha: options.a_alpha,
        b_alpha: options.b_alpha,
    };
    full.validate()?;
    full.with_structure(options.structure)
}

/// Distributional checks of the inverse-Wishart factorization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpliedCheck {
    pub draws: usize,
    /// KS distance of `δ_i` to `IG(0.5(v+i-(p+1)), 0.5 T_i)`, `i = 2..p+1`.
    pub delta_ks: Vec<f64>,
    /// KS distance to N(0,1) of `-β_ij / √(δ_i/T_j)`, pooled per row `i = 2..p+1`.
    pub beta_ks: Vec<f64>,
    /// Largest relative error of the empirical mean of `Σ` against `T/(v-p-2)`.
    pub mean_rel_error: f64,
}

/// Inverse-gamma CDF with shape `a` and scale `b`.
pub fn inv_gamma_cdf(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_ur(a, b / x)
    }
}

/// Samples `Σ ~ IW(v, T)`, factorizes each draw and compares the implied
/// marginals with their closed forms. `T` must be diagonal.
pub fn implied_base_distribution_check<R: Rng + ?Sized>(
    v: f64,
    t: &DMatrix<f64>,
    draws: usize,
    rng: &mut R,
) -> Result<ImpliedCheck> {
    let k = t.nrows();
    if (0..k).any(|i| (0..k).any(|j| i != j && t[(i, j)] != 0.0)) {
        return Err(Error::Unsupported("the implied-distribution identities need a diagonal T".into()));
    }
    let p = k - 1;
    let shapes = implied_delta_shapes(v, p);
    let mut deltas = vec![Vec::with_capacity(draws); p];
    let mut betas = vec![Vec::new(); p];
    let mut sum = DMatrix::zeros(k, k);
    for _ in 0..draws {
        let sigma = inverse_wishart(v, t, rng)?;
        sum += &sigma;
        let f = factorize_covariance(&sigma)?;
        for i in 1..k {
            let d = f.delta[i];
            deltas[i - 1].push(d);
            let base = i * (i - 1) / 2;
            for j in 0..i {
                betas[i - 1].push(-f.beta_tilde[base + j] / (d / t[(j, j)]).sqrt());
            }
        }
    }
    let delta_ks = (0..p)
        .map(|i| {
            let (a, b) = (shapes[i], 0.5 * t[(i + 1, i + 1)]);
            ks_distance(&deltas[i], |x| inv_gamma_cdf(a, b, x))
        })
        .collect();
    let beta_ks = betas.iter().map(|s| ks_distance(s, norm_cdf)).collect();
    let mean = sum / draws as f64;
    let expected = t / (v - k as f64 - 1.0);
    let mean_rel_error = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| {
            let denom = expected[(i, i)].sqrt() * expected[(j, j)].sqrt();
            (mean[(i, j)] - expected[(i, j)]).abs() / denom
        })
        .fold(0.0, f64::max);
    Ok(ImpliedCheck {
        draws,
        delta_ks,
        beta_ks,
        mean_rel_error,
    })
}

/// Draws `ψ` from its hyperprior.
pub fn sample_hyper_state<R: Rng + ?Sized>(prior: &HyperPrior, rng: &mut R) -> Result<HyperState> {
    let q = prior.n_free_beta();
    let (theta, c) = if q > 0 {
        (mvn(&prior.a_theta, &prior.b_theta, rng)?, inverse_wishart(prior.a_c, &prior.b_c, rng)?)
    } else {
        (DVector::zeros(0), DMatrix::zeros(0, 0))
    };
    Ok(HyperState {
        m: mvn(&prior.a_m, &prior.b_m, rng)?,
        v: inverse_wishart(prior.a_v, &prior.b_v, rng)?,
        theta,
        c,
        s: (0..prior.p)
            .map(|i| gamma(prior.a_s[i], prior.b_s[i], rng))
            .collect::<Result<_>>()?,
    })
}

/// Pointwise prior-predictive summary of `Pr(y = 1 | x_j)` along one covariate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorPredictiveBand {
    pub covariate: usize,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Simulates `sims` truncated mixtures from the prior and summarizes the
/// marginal regression on covariate `j` with its mean and 90% band.
pub fn prior_predictive_regression<R: Rng + ?Sized>(
    prior: &HyperPrior,
    truncation: usize,
    covariate: usize,
    grid: &[f64],
    sims: usize,
    rng: &mut R,
) -> Result<PriorPredictiveBand> {
    if covariate >= prior.p || sims < 2 {
        return Err(Error::InvalidParameter("bad covariate index or too few simulations".into()));
    }
    let mut curves = vec![Vec::with_capacity(sims); grid.len()];
    for _ in 0..sims {
        let psi = sample_hyper_state(prior, rng)?;
        let alpha = gamma(prior.a_alpha, prior.b_alpha, rng)?;
        let mixture = sample_mixture(&psi, prior, truncation, alpha, rng)?;
        let marginal = mixture.prepare()?.marginal(&[covariate])?;
        for (g, &x) in grid.iter().enumerate() {
            curves[g].push(marginal.regression(&[x]));
        }
    }
    let mut mean = Vec::with_capacity(grid.len());
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for c in &mut curves {
        c.sort_by(f64::total_cmp);
        mean.push(c.iter().sum::<f64>() / c.len() as f64);
        lower.push(quantile_sorted(c, 0.05));
        upper.push(quantile_sorted(c, 0.95));
    }
    Ok(PriorPredictiveBand {
        covariate,
        grid: grid.to_vec(),
        mean,
        lower,
        upper,
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[n - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn center_scale_example() {
        let cs = center_scale_hyperparams(&PriorSketch::new(vec![8.0], vec![0.0]).unwrap());
        assert_eq!(cs.a_m.as_slice(), &[0.0, 0.0]);
        assert_eq!(cs.b_m, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0])));
        assert_eq!(cs.a_v, 4.0);
        assert_eq!(cs.b_v, cs.b_m);
    }

    #[test]
    fn center_scale_two_covariates() {
        let cs = center_scale_hyperparams(&PriorSketch::new(vec![4.0, 12.0], vec![1.0, -3.0]).unwrap());
        assert_eq!(cs.a_v, 5.0);
        assert_eq!(cs.b_v, cs.b_m);
        assert_eq!(cs.a_m.as_slice(), &[0.0, 1.0, -3.0]);
    }

    #[test]
    fn degenerate_sketch_rejected() {
        assert!(PriorSketch::new(vec![0.0], vec![1.0]).is_err());
        assert!(PriorSketch::new(vec![-1.0, 2.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn inverse_wishart_prior_example() {
        // r = (8, 12) gives T = diag(1, 4, 9).
        let sketch = PriorSketch::new(vec![8.0, 12.0], vec![0.0, 0.0]).unwrap();
        let prior = elicit_inverse_wishart(&sketch, &PriorOptions::default()).unwrap();
        assert_eq!(prior.nu, vec![2.0, 2.5]);
        assert!((prior.b_s[0] - 0.5).abs() < 1e-15 && (prior.b_s[1] - 2.0 / 9.0).abs() < 1e-15);
        // E(s) = T/2: δ₂ ~ IG(2, 2), δ₃ ~ IG(2.5, 4.5) at the prior mean of s.
        let psi = prior.prior_mean_state();
        assert!((psi.s[0] - 2.0).abs() < 1e-12 && (psi.s[1] - 4.5).abs() < 1e-12);
        // B_θ + E(C) = BD(Ŝ₁, Ŝ₂) with Ŝ₁ = E[δ₂]/T₁ = 2, Ŝ₂ = E[δ₃] diag(1, 1/4) = 3 diag(1, 1/4).
        let total = &prior.b_theta + &psi.c;
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.75]));
        assert!((total - expected).abs().max() < 1e-12);
        assert_eq!(prior.a_theta, DVector::zeros(3));
    }

    #[test]
    fn uniform_correlation_share_relations() {
        let sketch = PriorSketch::new(vec![8.0], vec![0.0]).unwrap();
        let k = [0.2, 0.75, 0.05];
        let prior = uniform_correlation_prior(&sketch, k, &PriorOptions::default()).unwrap();
        let r = 4.0;
        assert!((prior.b_theta[(0, 0)] - k[0] * r).abs() < 1e-12);
        assert!((prior.a_s[0] / prior.b_s[0] - k[1] * r).abs() < 1e-12);
        // C ~ IG(2, b_c) with b_c = k₃ r, stored as IW₁(4, 2 b_c).
        assert!((0.5 * prior.b_c[(0, 0)] - k[2] * r).abs() < 1e-12);
        assert_eq!(prior.a_c, 4.0);
        assert_eq!(prior.nu, vec![2.0]);
        assert!(uniform_correlation_prior(&PriorSketch::new(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap(), k, &PriorOptions::default()).is_err());
    }

    #[test]
    fn small_budget_refused() {
        let sketch = PriorSketch::new(vec![8.0], vec![0.0]).unwrap();
        assert!(elicit_uniform_correlation(&sketch, 999, &PriorOptions::default(), 0).is_err());
    }

    #[test]
    fn non_diagonal_t_unsupported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]);
        assert!(implied_base_distribution_check(4.0, &t, 10, &mut rng).is_err());
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert!((quantile_sorted(&s, 0.05) - 1.2).abs() < 1e-12);
    }
}

//! Model comparison by posterior predictive loss, and the product-kernel
//! reference model in which the response is independent of the covariates
//! within each component.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::functionals::map_draws;
use crate::hyper::{HyperPrior, HyperState, KernelStructure};
use crate::mixture::MixtureState;
use crate::sampler::{run_sampler, PosteriorDraws, SamplerConfig};

/// Denominators below this are flagged as unreliable.
pub const DENOMINATOR_FLOOR: f64 = 1e-300;

/// Runs the sampler with the `z`–`x` coupling entries of `β` pinned at zero.
/// `prior` may be a full-kernel prior; it is restricted to the free entries.
pub fn fit_product_kernel(
    data: &Dataset,
    prior: &HyperPrior,
    config: &SamplerConfig,
    init: Option<&HyperState>,
) -> Result<PosteriorDraws> {
    let restricted = prior.with_structure(KernelStructure::Product)?;
    let init = match init {
        Some(psi) if prior.structure == KernelStructure::Full => {
            let keep = KernelStructure::Product.free_indices(prior.p);
            Some(HyperState {
                theta: nalgebra::DVector::from_iterator(keep.len(), keep.iter().map(|&i| psi.theta[i])),
                c: nalgebra::DMatrix::from_fn(keep.len(), keep.len(), |a, b| psi.c[(keep[a], keep[b])]),
                ..psi.clone()
            })
        }
        other => other.cloned(),
    };
    run_sampler(data, &restricted, config, init.as_ref())
}

/// How posterior expectations of `y_new` are formed from the draws.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Average of `Pr(y=1, x)` over draws divided by the average of `f(x)`.
    #[default]
    Ratio,
    /// Average over draws of `Pr(y=1 | x)`.
    PerDraw,
}

/// Predictive moments of `y_new` at one covariate vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMoment {
    pub mean: f64,
    /// `mean (1 - mean)`, since `y² = y`.
    pub variance: f64,
    /// Set when the covariate density underflowed in the estimator.
    pub flagged: bool,
}

fn moment_from_sums(sum_f: f64, sum_j: f64, sum_ratio: f64, n_draws: usize, estimator: Estimator) -> PredictiveMoment {
    let flagged = sum_f / n_draws as f64 <= DENOMINATOR_FLOOR;
    let mean = match estimator {
        Estimator::Ratio if !flagged => (sum_j / sum_f).clamp(0.0, 1.0),
        Estimator::Ratio => 0.0,
        Estimator::PerDraw => (sum_ratio / n_draws as f64).clamp(0.0, 1.0),
    };
    PredictiveMoment {
        mean,
        variance: mean * (1.0 - mean),
        flagged,
    }
}

/// Per-draw `(f(x_i), Pr(y=1, x_i), Pr(y=1 | x_i))` for every row of `points`.
fn per_draw_terms(mixtures: &[&MixtureState], points: &[&[f64]]) -> Result<Vec<Vec<(f64, f64, f64)>>> {
    map_draws(mixtures, |m| {
        let prepared = m.prepare()?;
        Ok(points
            .iter()
            .map(|x| {
                let (f, j) = prepared.density_and_joint(x);
                let r = if f > 0.0 { (j / f).clamp(0.0, 1.0) } else { 0.0 };
                (f, j, r)
            })
            .collect())
    })
}

/// Predictive moments of `y_new` at each covariate vector in `points`.
pub fn predictive_moments(
    mixtures: &[&MixtureState],
    points: &[&[f64]],
    estimator: Estimator,
) -> Result<Vec<PredictiveMoment>> {
    if mixtures.is_empty() {
        return Err(Error::InvalidParameter("no posterior draws".into()));
    }
    let terms = per_draw_terms(mixtures, points)?;
    Ok((0..points.len())
        .map(|i| {
            let (sf, sj, sr) = terms
                .iter()
                .fold((0.0, 0.0, 0.0), |(a, b, c), t| (a + t[i].0, b + t[i].1, c + t[i].2));
            moment_from_sums(sf, sj, sr, mixtures.len(), estimator)
        })
        .collect())
}

/// Penalty, goodness of fit and per-observation predictive moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    /// `P = Σ var(y_new,i | data)`.
    pub penalty: f64,
    /// `G = Σ (y_i - E(y_new,i | data))²`.
    pub fit: f64,
    pub estimator: Estimator,
    pub observations: Vec<PredictiveMoment>,
    pub n_flagged: usize,
}

impl PplReport {
    pub fn from_moments(moments: Vec<PredictiveMoment>, y: &[u8], estimator: Estimator) -> Self {
        let penalty = moments.iter().map(|m| m.variance).sum();
        let fit = moments
            .iter()
            .zip(y)
            .map(|(m, &yi)| (f64::from(yi) - m.mean).powi(2))
            .sum();
        let n_flagged = moments.iter().filter(|m| m.flagged).count();
        PplReport {
            penalty,
            fit,
            estimator,
            observations: moments,
            n_flagged,
        }
    }

    /// `D_k = P + k/(k+1) G`; `k = ∞` gives `P + G`.
    pub fn criterion(&self, k: f64) -> f64 {
        if k.is_infinite() {
            self.penalty + self.fit
        } else {
            self.penalty + k / (k + 1.0) * self.fit
        }
    }

    /// `D_k` at `k = 1, 10, 100, ∞`.
    pub fn criterion_table(&self) -> Vec<(String, f64)> {
        [("1", 1.0), ("10", 10.0), ("100", 100.0), ("inf", f64::INFINITY)]
            .into_iter()
            .map(|(label, k)| (label.to_string(), self.criterion(k)))
            .collect()
    }
}

/// Posterior predictive loss of a fitted model on its own data.
pub fn ppl_criterion(draws: &PosteriorDraws, data: &Dataset, estimator: Estimator) -> Result<PplReport> {
    let mixtures: Vec<&MixtureState> = draws.mixtures().collect();
    let points: Vec<&[f64]> = data.rows().collect();
    let moments = predictive_moments(&mixtures, &points, estimator)?;
    Ok(PplReport::from_moments(moments, data.responses(), estimator))
}

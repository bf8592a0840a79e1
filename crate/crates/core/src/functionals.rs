//! Functionals of a realised mixing distribution: regression curves, inverse
//! densities and selection-analysis quantities. Every function acts on one
//! posterior draw; [`summarize`] turns per-draw values into posterior summaries.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::uniform_open;
use crate::error::{Error, Result};
use crate::mixture::{MixtureState, PreparedMixture};
use crate::prior::quantile_sorted;
use crate::validation::Axis;

/// Tolerance on the grid mass of `f(x)` and `Pr(y=1, x)` before a coarse-grid warning.
pub const GRID_TOLERANCE: f64 = 1e-3;

/// Riemann-sum grid settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Points per axis.
    pub points: usize,
    /// Half-width of each axis in mixture standard deviations.
    pub width: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { points: 200, width: 5.0 }
    }
}

/// Mean and covariance of the covariate marginal `f(x; G)`.
pub fn covariate_moments(mixture: &MixtureState) -> (DVector<f64>, DMatrix<f64>) {
    let p = mixture.n_covariates();
    let mut mean = DVector::zeros(p);
    let mut second = DMatrix::zeros(p, p);
    for (&w, atom) in mixture.weights().iter().zip(mixture.atoms()) {
        if w == 0.0 {
            continue;
        }
        let blocks = atom.blocks();
        let mu = atom.mu().rows(1, p).into_owned();
        mean += &mu * w;
        second += (blocks.sigma_xx + &mu * mu.transpose()) * w;
    }
    let cov = second - &mean * mean.transpose();
    (mean, cov)
}

/// Atoms lighter than this are ignored when sizing the default axes.
pub const AXIS_WEIGHT_FLOOR: f64 = 1e-6;

/// Per-covariate axes spanning mean ± `width` SDs of `f(x; G)`, widened so
/// that every atom heavier than [`AXIS_WEIGHT_FLOOR`] is covered out to
/// `width` of its own SDs.
pub fn default_axes(mixture: &MixtureState, config: &GridConfig) -> Result<Vec<Axis>> {
    let (mean, cov) = covariate_moments(mixture);
    (0..mean.len())
        .map(|j| {
            let sd = cov[(j, j)].max(0.0).sqrt();
            let (mut lo, mut hi) = (mean[j] - config.width * sd, mean[j] + config.width * sd);
            for (&w, atom) in mixture.weights().iter().zip(mixture.atoms()) {
                if w > AXIS_WEIGHT_FLOOR {
                    let mu = atom.mu()[j + 1];
                    let half = config.width * atom.blocks().sigma_xx[(j, j)].sqrt();
                    lo = lo.min(mu - half);
                    hi = hi.max(mu + half);
                }
            }
            Axis::new(lo, hi, config.points)
        })
        .collect()
}

/// Rectangle rule: nodes of `axis`, each weighted by the step.
fn riemann_nodes(axis: &Axis) -> (Vec<f64>, f64) {
    (axis.nodes(), axis.step())
}

/// `Pr(y = 1 | x_S; G)` at each point, where `x_S` are the covariates in
/// `covariates` and the rest are integrated out.
pub fn regression_curve(prepared: &PreparedMixture, covariates: &[usize], points: &[Vec<f64>]) -> Result<Vec<f64>> {
    if covariates.len() == prepared.n_covariates() && covariates.iter().enumerate().all(|(a, &j)| a == j) {
        return Ok(points.iter().map(|x| prepared.regression(x)).collect());
    }
    let marginal = prepared.marginal(covariates)?;
    Ok(points.iter().map(|x| marginal.regression(x)).collect())
}

/// `f(x_j | y)` on a grid: `Pr(y=1, x_j)/Pr(y=1)` for `y = 1` and
/// `(f(x_j) - Pr(y=1, x_j))/(1 - Pr(y=1))` for `y = 0`.
pub fn inverse_density(prepared: &PreparedMixture, covariate: usize, y: bool, grid: &[f64]) -> Result<Vec<f64>> {
    let marginal = prepared.marginal(&[covariate])?;
    let p1 = prepared.prob_y1();
    let denom = if y { p1 } else { 1.0 - p1 };
    if !(denom > 1e-300) {
        return Err(Error::Degeneracy(format!(
            "Pr(y = {}) is numerically zero; inverse density undefined",
            u8::from(y)
        )));
    }
    if denom < 1e-8 {
        warn!("Pr(y = {}) = {denom:.3e}; inverse density is poorly determined", u8::from(y));
    }
    Ok(grid
        .iter()
        .map(|&x| {
            let (f, j) = marginal.density_and_joint(&[x]);
            let num = if y { j } else { (f - j).max(0.0) };
            num / denom
        })
        .collect())
}

/// `Pr(y = 1; G) = Σ p_l Φ(μ_l^z)`.
pub fn mean_absolute_fitness(mixture: &MixtureState) -> f64 {
    mixture.prob_y1()
}

/// `x̄_j = Σ p_l μ_l^{x_j}`.
pub fn trait_mean_before(mixture: &MixtureState, covariate: usize) -> f64 {
    mixture
        .weights()
        .iter()
        .zip(mixture.atoms())
        .map(|(w, a)| w * a.mu()[covariate + 1])
        .sum()
}

/// `x̄*_j = Pr(y=1)⁻¹ ∫ x_j Pr(y=1, x_j) dx_j` by a Riemann sum on `axis`.
pub fn trait_mean_after(mixture: &MixtureState, covariate: usize, axis: &Axis) -> Result<f64> {
    let prepared = mixture.prepare()?;
    trait_mean_after_prepared(&prepared, covariate, axis)
}

fn trait_mean_after_prepared(prepared: &PreparedMixture, covariate: usize, axis: &Axis) -> Result<f64> {
    let marginal = prepared.marginal(&[covariate])?;
    let p1 = prepared.prob_y1();
    if !(p1 > 0.0) {
        return Err(Error::Degeneracy("Pr(y = 1) is zero".into()));
    }
    let (nodes, h) = riemann_nodes(axis);
    let first: f64 = nodes.iter().map(|&x| x * marginal.joint_y1(&[x])).sum::<f64>() * h;
    Ok(first / p1)
}

/// `x̄*_j - x̄_j`.
pub fn selection_differential(mixture: &MixtureState, covariate: usize, axis: &Axis) -> Result<f64> {
    Ok(trait_mean_after(mixture, covariate, axis)? - trait_mean_before(mixture, covariate))
}

/// `(f, J, ∇f, ∇J)` of the mixture at `x`, with `J = Pr(y = 1, x; G)`.
pub fn mixture_value_and_gradients(prepared: &PreparedMixture, x: &[f64]) -> (f64, f64, DVector<f64>, DVector<f64>) {
    let p = x.len();
    let mut pc = vec![0.0; p];
    let mut acc = vec![0.0; 2 + 2 * p];
    accumulate_mixture(prepared, x, &mut pc, &mut acc);
    (
        acc[0],
        acc[1],
        DVector::from_column_slice(&acc[2..2 + p]),
        DVector::from_column_slice(&acc[2 + p..]),
    )
}

fn accumulate_mixture(prepared: &PreparedMixture, x: &[f64], pc: &mut [f64], acc: &mut [f64]) {
    acc.fill(0.0);
    for (w, k) in prepared.components() {
        k.accumulate_value_and_gradients(x, w, pc, acc);
    }
}

/// `∂J/∂x_j - (J/f) ∂f/∂x_j`, the integrand of the selection gradient. This is
/// `f(x) ∂Pr(y=1 | x)/∂x_j`.
pub fn selection_gradient_integrand(prepared: &PreparedMixture, x: &[f64]) -> DVector<f64> {
    let (f, j, gf, gj) = mixture_value_and_gradients(prepared, x);
    if f > 0.0 {
        gj - gf * (j / f)
    } else {
        DVector::zeros(x.len())
    }
}

/// All selection-analysis quantities of one draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionAnalysis {
    pub fitness: f64,
    pub mean_before: Vec<f64>,
    pub mean_after: Vec<f64>,
    pub differential: Vec<f64>,
    pub gradient: Vec<f64>,
    pub directional_gradient: Vec<f64>,
    /// Row-major `p × p`.
    pub stabilizing: Vec<f64>,
    /// Largest deviation of the tensor-grid masses of `f` and `J` from 1 and `Pr(y=1)`.
    pub grid_error: f64,
}

/// Accumulated Riemann sums over a tensor grid.
struct TensorSums {
    mass_f: f64,
    mass_j: f64,
    first_f: DVector<f64>,
    first_j: DVector<f64>,
    second_f: DMatrix<f64>,
    second_j: DMatrix<f64>,
    gradient: DVector<f64>,
}

fn tensor_sums(prepared: &PreparedMixture, axes: &[Axis]) -> TensorSums {
    let p = axes.len();
    let nodes: Vec<Vec<f64>> = axes.iter().map(Axis::nodes).collect();
    let cell: f64 = axes.iter().map(Axis::step).product();
    let mut sums = TensorSums {
        mass_f: 0.0,
        mass_j: 0.0,
        first_f: DVector::zeros(p),
        first_j: DVector::zeros(p),
        second_f: DMatrix::zeros(p, p),
        second_j: DMatrix::zeros(p, p),
        gradient: DVector::zeros(p),
    };
    let mut index = vec![0usize; p];
    let mut x = vec![0.0; p];
    let mut pc = vec![0.0; p];
    let mut acc = vec![0.0; 2 + 2 * p];
    loop {
        for d in 0..p {
            x[d] = nodes[d][index[d]];
        }
        accumulate_mixture(prepared, &x, &mut pc, &mut acc);
        let (f, j) = (acc[0], acc[1]);
        let (gf, gj) = acc[2..].split_at(p);
        if f > 0.0 {
            sums.mass_f += f;
            sums.mass_j += j;
            for a in 0..p {
                sums.first_f[a] += x[a] * f;
                sums.first_j[a] += x[a] * j;
                sums.gradient[a] += gj[a] - gf[a] * (j / f);
                for b in 0..=a {
                    sums.second_f[(a, b)] += x[a] * x[b] * f;
                    sums.second_j[(a, b)] += x[a] * x[b] * j;
                }
            }
        }
        // Odometer increment.
        let mut d = 0;
        while d < p {
            index[d] += 1;
            if index[d] < nodes[d].len() {
                break;
            }
            index[d] = 0;
            d += 1;
        }
        if d == p {
            break;
        }
    }
    for a in 0..p {
        for b in 0..a {
            sums.second_f[(b, a)] = sums.second_f[(a, b)];
            sums.second_j[(b, a)] = sums.second_j[(a, b)];
        }
    }
    sums.mass_f *= cell;
    sums.mass_j *= cell;
    sums.first_f *= cell;
    sums.first_j *= cell;
    sums.second_f *= cell;
    sums.second_j *= cell;
    sums.gradient *= cell;
    sums
}

/// Selection gradient `∫ {∂J/∂x_j - π(x) ∂f/∂x_j} dx` by a tensor-grid Riemann sum.
pub fn selection_gradient(mixture: &MixtureState, axes: &[Axis]) -> Result<DVector<f64>> {
    let prepared = mixture.prepare()?;
    Ok(tensor_sums(&prepared, axes).gradient)
}

/// The selection gradient divided by mean absolute fitness.
pub fn directional_selection_gradient(mixture: &MixtureState, axes: &[Axis]) -> Result<DVector<f64>> {
    Ok(selection_gradient(mixture, axes)? / mean_absolute_fitness(mixture))
}

/// `P* - P + s sᵀ`, with `P`, `P*` the covariances of `f(x)` and `f(x | y=1)`
/// and `s` the vector of selection differentials.
pub fn stabilizing_selection_matrix(mixture: &MixtureState, axes: &[Axis]) -> Result<DMatrix<f64>> {
    let a = selection_analysis_on(mixture, axes)?;
    let p = axes.len();
    Ok(DMatrix::from_row_slice(p, p, &a.stabilizing))
}

/// Every selection quantity on the default grid of the draw.
pub fn selection_analysis(mixture: &MixtureState, config: &GridConfig) -> Result<SelectionAnalysis> {
    let axes = default_axes(mixture, config)?;
    selection_analysis_on(mixture, &axes)
}

/// Every selection quantity on the given axes.
pub fn selection_analysis_on(mixture: &MixtureState, axes: &[Axis]) -> Result<SelectionAnalysis> {
    let p = mixture.n_covariates();
    if axes.len() != p {
        return Err(Error::DimensionMismatch(format!("{} axes for {p} covariates", axes.len())));
    }
    let prepared = mixture.prepare()?;
    let fitness = prepared.prob_y1();
    if !(fitness > 0.0) {
        return Err(Error::Degeneracy("Pr(y = 1) is zero".into()));
    }
    let mean_before: Vec<f64> = (0..p).map(|j| trait_mean_before(mixture, j)).collect();
    let mean_after = (0..p)
        .map(|j| trait_mean_after_prepared(&prepared, j, &axes[j]))
        .collect::<Result<Vec<_>>>()?;
    let differential: Vec<f64> = mean_after.iter().zip(&mean_before).map(|(a, b)| a - b).collect();

    let sums = tensor_sums(&prepared, axes);
    let grid_error = (sums.mass_f - 1.0).abs().max((sums.mass_j / fitness - 1.0).abs());
    if grid_error > GRID_TOLERANCE {
        warn!("selection grid captures mass with error {grid_error:.2e}; consider more points or a wider grid");
    }
    let cov = |mass: f64, first: &DVector<f64>, second: &DMatrix<f64>| {
        let m = first / mass;
        second / mass - &m * m.transpose()
    };
    let p_before = cov(sums.mass_f, &sums.first_f, &sums.second_f);
    let p_after = cov(sums.mass_j, &sums.first_j, &sums.second_j);
    let s = DVector::from_column_slice(&differential);
    let stab = p_after - p_before + &s * s.transpose();
    let stab = (&stab + stab.transpose()) * 0.5;
    Ok(SelectionAnalysis {
        fitness,
        mean_before,
        mean_after,
        differential,
        gradient: sums.gradient.iter().copied().collect(),
        directional_gradient: sums.gradient.iter().map(|g| g / fitness).collect(),
        stabilizing: stab.transpose().iter().copied().collect(),
        grid_error,
    })
}

/// For each mixture, one atom picked with probability equal to its weight and
/// the upper triangle (row-major, diagonal excluded) of its kernel correlation
/// matrix: `corr(z, x_1), …, corr(z, x_p), corr(x_1, x_2), …`.
pub fn posterior_predictive_correlations<'a, R: Rng + ?Sized>(
    mixtures: impl IntoIterator<Item = &'a MixtureState>,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    mixtures
        .into_iter()
        .map(|m| {
            let u = uniform_open(rng);
            let mut acc = 0.0;
            let mut pick = m.truncation() - 1;
            for (l, &w) in m.weights().iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = l;
                    break;
                }
            }
            let corr = m.atoms()[pick].correlation_matrix();
            let d = corr.nrows();
            (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).map(|(i, j)| corr[(i, j)]).collect()
        })
        .collect()
}

/// Posterior mean, median and central 90% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Summary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile_sorted(&sorted, 0.5),
        lower: quantile_sorted(&sorted, 0.05),
        upper: quantile_sorted(&sorted, 0.95),
    }
}

/// Column-wise summaries of a `draws × points` table.
pub fn summarize_columns(table: &[Vec<f64>]) -> Vec<Summary> {
    let width = table.first().map_or(0, Vec::len);
    (0..width)
        .map(|c| summarize(&table.iter().map(|row| row[c]).collect::<Vec<_>>()))
        .collect()
}

/// Applies `f` to every mixture on a pool of scoped threads, keeping input order.
pub fn map_draws<'a, T, F>(mixtures: &'a [&'a MixtureState], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&MixtureState) -> Result<T> + Sync,
{
    let threads = std::thread::available_parallelism().map_or(1, usize::from).min(mixtures.len().max(1));
    let chunk = mixtures.len().div_ceil(threads).max(1);
    let f = &f;
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = mixtures
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|m| f(m)).collect::<Result<Vec<T>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Degeneracy("worker thread panicked".into()))))
            .collect()
    });
    let mut out = Vec::with_capacity(mixtures.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

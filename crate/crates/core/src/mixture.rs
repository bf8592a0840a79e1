//! Truncated stick-breaking mixture `G_N = Σ p_l δ_{W_l}` and mixture-level densities.

use nalgebra::DVector;
use rand::Rng;

use crate::dist::{inv_gamma, mvn};
use crate::error::{Error, Result};
use crate::hyper::{HyperPrior, HyperState};
use crate::kernel::{n_free_beta, KernelAtom, ObservableKernel};
use crate::special::norm_cdf;

/// Remainders below this magnitude are treated as rounding noise and clamped.
const REMAINDER_TOLERANCE: f64 = 1e-12;

/// `p₁ = ζ₁`, `p_l = ζ_l Π_{r<l}(1-ζ_r)`, and `p_N` the remainder. Returns
/// `zetas.len() + 1` weights.
pub fn stick_breaking_weights(zetas: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = zetas.iter().find(|z| !(**z > 0.0 && **z < 1.0)) {
        return Err(Error::InvalidParameter(format!("stick fraction {bad} outside (0, 1)")));
    }
    let mut weights = Vec::with_capacity(zetas.len() + 1);
    let mut remaining = 1.0;
    for &z in zetas {
        weights.push(z * remaining);
        remaining *= 1.0 - z;
    }
    weights.push(0.0);
    close_simplex(&mut weights);
    Ok(weights)
}

/// Sets the last weight to `1 - Σ_{l<N} p_l`, clamping tiny negative
/// remainders to zero and renormalising the rest when that happens.
pub(crate) fn close_simplex(weights: &mut [f64]) {
    let n = weights.len();
    let head: f64 = weights[..n - 1].iter().sum();
    let last = 1.0 - head;
    if last >= 0.0 {
        weights[n - 1] = last;
    } else {
        debug_assert!(last > -REMAINDER_TOLERANCE, "stick remainder {last}");
        for w in &mut weights[..n - 1] {
            *w /= head;
        }
        weights[n - 1] = 0.0;
    }
}

/// A realisation of the truncated mixing distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    weights: Vec<f64>,
    atoms: Vec<KernelAtom>,
    alpha: f64,
}

impl MixtureState {
    pub fn new(weights: Vec<f64>, atoms: Vec<KernelAtom>, alpha: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != atoms.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} atoms",
                weights.len(),
                atoms.len()
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must be positive")));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        let p = atoms[0].n_covariates();
        if atoms.iter().any(|a| a.n_covariates() != p) {
            return Err(Error::DimensionMismatch("atoms disagree on covariate count".into()));
        }
        let mut weights = weights;
        close_simplex(&mut weights);
        Ok(MixtureState { weights, atoms, alpha })
    }

    pub fn truncation(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.atoms[0].n_covariates()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> &[KernelAtom] {
        &self.atoms
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub(crate) fn atoms_mut(&mut self) -> &mut [KernelAtom] {
        &mut self.atoms
    }

    pub(crate) fn set_weights(&mut self, weights: Vec<f64>) {
        debug_assert_eq!(weights.len(), self.atoms.len());
        self.weights = weights;
    }

    pub(crate) fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha;
    }

    /// Caches the observable view of every atom for repeated evaluation.
    pub fn prepare(&self) -> Result<PreparedMixture> {
        let components = self
            .atoms
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(a, &w)| Ok((w, a.clone(), a.observable()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedMixture { components })
    }

    pub fn mixture_density_zx(&self, z: f64, x: &[f64]) -> Result<f64> {
        Ok(self.prepare()?.density_zx(z, x))
    }

    pub fn mixture_density_x(&self, x: &[f64]) -> Result<f64> {
        Ok(self.prepare()?.density_x(x))
    }

    pub fn joint_prob_y1_x(&self, x: &[f64]) -> Result<f64> {
        Ok(self.prepare()?.joint_y1(x))
    }

    /// `Pr(y = 1) = Σ p_l Φ(μ_l^z)`.
    pub fn prob_y1(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.atoms)
            .map(|(w, a)| w * norm_cdf(a.mu()[0]))
            .sum()
    }
}

/// A mixture with per-atom observable kernels precomputed. Zero-weight atoms
/// are dropped.
#[derive(Debug, Clone)]
pub struct PreparedMixture {
    components: Vec<(f64, KernelAtom, ObservableKernel)>,
}

impl PreparedMixture {
    pub fn components(&self) -> impl Iterator<Item = (f64, &ObservableKernel)> {
        self.components.iter().map(|(w, _, k)| (*w, k))
    }

    pub fn n_covariates(&self) -> usize {
        self.components[0].2.n_covariates()
    }

    pub fn density_zx(&self, z: f64, x: &[f64]) -> f64 {
        let mut y = Vec::with_capacity(x.len() + 1);
        y.push(z);
        y.extend_from_slice(x);
        self.components
            .iter()
            .map(|(w, a, _)| w * a.ln_density(&y).exp())
            .sum()
    }

    /// `f(x; G) = Σ p_l N_p(x; μ_l^x, Σ_l^{xx})`.
    pub fn density_x(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|(w, _, k)| w * k.density_x(x)).sum()
    }

    /// `Pr(y = 1, x; G) = Σ p_l N_p(x; μ_l^x, Σ_l^{xx}) π_l(x)`.
    pub fn joint_y1(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|(w, _, k)| w * k.joint_y1(x)).sum()
    }

    /// Both of the above in one pass: `(f(x), Pr(y=1, x))`.
    pub fn density_and_joint(&self, x: &[f64]) -> (f64, f64) {
        self.components.iter().fold((0.0, 0.0), |(f, j), (w, _, k)| {
            let d = w * k.density_x(x);
            (f + d, j + d * k.probit(x))
        })
    }

    /// `Pr(y = 1 | x; G)`; zero where the covariate density underflows.
    pub fn regression(&self, x: &[f64]) -> f64 {
        let (f, j) = self.density_and_joint(x);
        if f > 0.0 {
            (j / f).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn prob_y1(&self) -> f64 {
        self.components
            .iter()
            .map(|(w, _, k)| w * k.marginal_probability())
            .sum()
    }

    /// The mixture with covariates outside `subset` integrated out.
    pub fn marginal(&self, subset: &[usize]) -> Result<MarginalMixture> {
        let components = self
            .components
            .iter()
            .map(|(w, _, k)| Ok((*w, k.marginal(subset)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MarginalMixture { components })
    }
}

/// Observable mixture over a subset of the covariates.
#[derive(Debug, Clone)]
pub struct MarginalMixture {
    components: Vec<(f64, ObservableKernel)>,
}

impl MarginalMixture {
    pub fn density_x(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|(w, k)| w * k.density_x(x)).sum()
    }

    pub fn joint_y1(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|(w, k)| w * k.joint_y1(x)).sum()
    }

    pub fn density_and_joint(&self, x: &[f64]) -> (f64, f64) {
        self.components.iter().fold((0.0, 0.0), |(f, j), (w, k)| {
            let d = w * k.density_x(x);
            (f + d, j + d * k.probit(x))
        })
    }

    pub fn regression(&self, x: &[f64]) -> f64 {
        let (f, j) = self.density_and_joint(x);
        if f > 0.0 {
            (j / f).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Draws `W = (μ, β̃, δ)` from `G₀(·|ψ)`: `μ ~ N(m, V)`, free `β̃ ~ N(θ, C)`
/// (pinned entries stay zero), `δ_i ~ IG(ν_i, s_i)` and `δ₁ = 1`.
pub fn sample_atom_from_base<R: Rng + ?Sized>(
    psi: &HyperState,
    prior: &HyperPrior,
    rng: &mut R,
) -> Result<KernelAtom> {
    let dim = prior.dim();
    let mu = mvn(&psi.m, &psi.v, rng).map_err(|_| Error::InvalidHyperparameter("V is not positive definite".into()))?;
    let mut beta_tilde = DVector::zeros(n_free_beta(dim));
    let free = prior.structure.free_indices(prior.p);
    if !free.is_empty() {
        let draw = mvn(&psi.theta, &psi.c, rng)
            .map_err(|_| Error::InvalidHyperparameter("C is not positive definite".into()))?;
        for (k, &idx) in free.iter().enumerate() {
            beta_tilde[idx] = draw[k];
        }
    }
    let mut delta = DVector::from_element(dim, 1.0);
    for i in 1..dim {
        delta[i] = inv_gamma(prior.nu[i - 1], psi.s[i - 1], rng)?;
    }
    KernelAtom::new(mu, beta_tilde, delta)
}

//! Algebra of a single mixture kernel.
//!
//! A kernel is a normal distribution on `(z, x)` with `z` the latent response
//! and `x` the `p` covariates. The covariance is carried in square-root-free
//! Cholesky form `Σ = β⁻¹ Δ β⁻ᵀ`, with `β` unit lower triangular and
//! `Δ = diag(δ)`. The first diagonal entry `δ₁ = Σᶻᶻ` is pinned to one, which is
//! the restriction that makes the observable kernel identifiable.
//!
//! # Layout of `β̃`
//!
//! The free entries of `β` are stored row by row: row `i` (0-based, `i ≥ 1`)
//! contributes the `i` entries `β[i][0..i]`, so entry `β[i][j]` lives at
//! `i(i-1)/2 + j`. For `p = 2` this is `(β₂₁, β₃₁, β₃₂)`. Row `i` of `β` is
//! therefore the contiguous slice `i(i-1)/2 .. i(i+1)/2`, which is the block
//! structure exploited by the `β̃` full conditional.

use nalgebra::{DMatrix, DVector};

use crate::dist::cholesky;
use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf, LN_2PI};

/// Number of free lower-triangular entries of a `dim × dim` unit lower-triangular matrix.
pub fn n_free_beta(dim: usize) -> usize {
    dim * (dim - 1) / 2
}

/// Position of `β[row][col]` (0-based, `col < row`) in `β̃`.
pub fn beta_index(row: usize, col: usize) -> usize {
    debug_assert!(col < row);
    row * (row - 1) / 2 + col
}

/// Range of `β̃` holding row `row` of `β`.
pub fn beta_row_range(row: usize) -> std::ops::Range<usize> {
    row * (row - 1) / 2..row * (row + 1) / 2
}

/// Builds the unit lower-triangular `β` from its free entries.
pub fn beta_matrix(beta_tilde: &DVector<f64>, dim: usize) -> DMatrix<f64> {
    let mut beta = DMatrix::identity(dim, dim);
    for row in 1..dim {
        for col in 0..row {
            beta[(row, col)] = beta_tilde[beta_index(row, col)];
        }
    }
    beta
}

fn check_beta_len(beta_tilde: &DVector<f64>, dim: usize) -> Result<()> {
    if beta_tilde.len() != n_free_beta(dim) {
        return Err(Error::DimensionMismatch(format!(
            "beta_tilde has {} entries, expected {} for dimension {dim}",
            beta_tilde.len(),
            n_free_beta(dim)
        )));
    }
    Ok(())
}

/// `Σ = β⁻¹ Δ β⁻ᵀ`. Only requires positive `δ`; `δ₁` may be anything positive.
pub fn reconstruct_covariance(beta_tilde: &DVector<f64>, delta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let dim = delta.len();
    check_beta_len(beta_tilde, dim)?;
    if let Some(bad) = delta.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidParameter(format!("delta entry {bad} is not positive")));
    }
    let beta = beta_matrix(beta_tilde, dim);
    let beta_inv = beta
        .solve_lower_triangular(&DMatrix::identity(dim, dim))
        .expect("unit lower-triangular matrices are invertible");
    let scaled = DMatrix::from_fn(dim, dim, |i, j| beta_inv[(i, j)] * delta[j]);
    let sigma = scaled * beta_inv.transpose();
    Ok(crate::dist::symmetrize(sigma))
}

/// Square-root-free Cholesky factors of a covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub beta_tilde: DVector<f64>,
    pub delta: DVector<f64>,
}

/// Computes `β`, `Δ` with `Δ = β Σ βᵀ` via an LDLᵀ factorization `Σ = L D Lᵀ`,
/// `β = L⁻¹`.
pub fn factorize_covariance(sigma: &DMatrix<f64>) -> Result<Factorization> {
    let dim = sigma.nrows();
    if dim == 0 || sigma.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "covariance must be square, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let scale = sigma.amax().max(f64::MIN_POSITIVE);
    for i in 0..dim {
        for j in 0..i {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Decomposition("covariance is not symmetric".into()));
            }
        }
    }
    let mut lower = DMatrix::<f64>::identity(dim, dim);
    let mut d = DVector::<f64>::zeros(dim);
    for j in 0..dim {
        let mut dj = sigma[(j, j)];
        for k in 0..j {
            dj -= lower[(j, k)] * lower[(j, k)] * d[k];
        }
        if !(dj > 0.0) || !dj.is_finite() {
            return Err(Error::Decomposition(format!(
                "covariance is not positive definite (pivot {j} = {dj})"
            )));
        }
        d[j] = dj;
        for i in j + 1..dim {
            let mut v = sigma[(i, j)];
            for k in 0..j {
                v -= lower[(i, k)] * lower[(j, k)] * d[k];
            }
            lower[(i, j)] = v / dj;
        }
    }
    let beta = lower
        .solve_lower_triangular(&DMatrix::identity(dim, dim))
        .expect("unit lower-triangular matrices are invertible");
    let mut beta_tilde = DVector::zeros(n_free_beta(dim));
    for row in 1..dim {
        for col in 0..row {
            beta_tilde[beta_index(row, col)] = beta[(row, col)];
        }
    }
    Ok(Factorization { beta_tilde, delta: d })
}

/// Partitioned kernel covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBlocks {
    pub sigma_zz: f64,
    pub sigma_zx: DVector<f64>,
    pub sigma_xx: DMatrix<f64>,
}

impl CovarianceBlocks {
    pub fn from_full(sigma: &DMatrix<f64>) -> Self {
        let p = sigma.nrows() - 1;
        CovarianceBlocks {
            sigma_zz: sigma[(0, 0)],
            sigma_zx: sigma.view((1, 0), (p, 1)).column(0).into_owned(),
            sigma_xx: sigma.view((1, 1), (p, p)).into_owned(),
        }
    }

    pub fn full(&self) -> DMatrix<f64> {
        let p = self.sigma_zx.len();
        let mut s = DMatrix::zeros(p + 1, p + 1);
        s[(0, 0)] = self.sigma_zz;
        for j in 0..p {
            s[(0, j + 1)] = self.sigma_zx[j];
            s[(j + 1, 0)] = self.sigma_zx[j];
        }
        s.view_mut((1, 1), (p, p)).copy_from(&self.sigma_xx);
        s
    }
}

/// One mixture component `(μ, β̃, δ)` with `δ₁ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelAtom {
    mu: DVector<f64>,
    beta_tilde: DVector<f64>,
    delta: DVector<f64>,
}

impl KernelAtom {
    /// `delta` holds all `p+1` diagonal entries; its first entry must be exactly 1.
    pub fn new(mu: DVector<f64>, beta_tilde: DVector<f64>, delta: DVector<f64>) -> Result<Self> {
        let dim = mu.len();
        if dim < 2 {
            return Err(Error::DimensionMismatch("kernel needs at least one covariate".into()));
        }
        if delta.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "delta has {} entries, expected {dim}",
                delta.len()
            )));
        }
        check_beta_len(&beta_tilde, dim)?;
        if delta[0] != 1.0 {
            return Err(Error::InvalidParameter(format!(
                "delta[1] must equal 1, got {}",
                delta[0]
            )));
        }
        if let Some(bad) = delta.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidParameter(format!("delta entry {bad} is not positive")));
        }
        if mu.iter().chain(beta_tilde.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite kernel parameter".into()));
        }
        Ok(KernelAtom { mu, beta_tilde, delta })
    }

    /// Convenience constructor taking only the free `δ₂..δ_{p+1}`.
    pub fn from_free_delta(mu: DVector<f64>, beta_tilde: DVector<f64>, free_delta: &[f64]) -> Result<Self> {
        let mut delta = Vec::with_capacity(free_delta.len() + 1);
        delta.push(1.0);
        delta.extend_from_slice(free_delta);
        Self::new(mu, beta_tilde, DVector::from_vec(delta))
    }

    /// Standard normal kernel centred at the origin.
    pub fn standard(p: usize) -> Self {
        KernelAtom {
            mu: DVector::zeros(p + 1),
            beta_tilde: DVector::zeros(n_free_beta(p + 1)),
            delta: DVector::from_element(p + 1, 1.0),
        }
    }

    /// Builds an atom from a mean and a covariance with `Σᶻᶻ = 1`.
    pub fn from_moments(mu: DVector<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        if (sigma[(0, 0)] - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "latent variance must be 1, got {}",
                sigma[(0, 0)]
            )));
        }
        let f = factorize_covariance(sigma)?;
        let mut delta = f.delta;
        delta[0] = 1.0;
        Self::new(mu, f.beta_tilde, delta)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.mu.len() - 1
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn beta_tilde(&self) -> &DVector<f64> {
        &self.beta_tilde
    }

    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    pub(crate) fn set_mu(&mut self, mu: DVector<f64>) {
        debug_assert_eq!(mu.len(), self.mu.len());
        self.mu = mu;
    }

    pub(crate) fn set_beta_tilde(&mut self, beta_tilde: DVector<f64>) {
        debug_assert_eq!(beta_tilde.len(), self.beta_tilde.len());
        self.beta_tilde = beta_tilde;
    }

    /// Sets `δ_k` for `k ≥ 2` (0-based index `k ≥ 1`).
    pub(crate) fn set_free_delta(&mut self, index: usize, value: f64) {
        debug_assert!(index >= 1 && value > 0.0);
        self.delta[index] = value;
    }

    pub fn beta(&self) -> DMatrix<f64> {
        beta_matrix(&self.beta_tilde, self.dim())
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        reconstruct_covariance(&self.beta_tilde, &self.delta).expect("atom invariants hold")
    }

    pub fn blocks(&self) -> CovarianceBlocks {
        CovarianceBlocks::from_full(&self.covariance())
    }

    /// `Σ⁻¹ = βᵀ Δ⁻¹ β`.
    pub fn precision(&self) -> DMatrix<f64> {
        let beta = self.beta();
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| beta[(i, j)] / self.delta[i]);
        beta.transpose() * scaled
    }

    pub fn ln_det_covariance(&self) -> f64 {
        self.delta.iter().map(|d| d.ln()).sum()
    }

    /// `β (y - μ)` for a full vector `y = (z, x)`.
    pub fn whitened_residuals(&self, y: &[f64]) -> DVector<f64> {
        let dim = self.dim();
        let mut out = DVector::zeros(dim);
        for k in 0..dim {
            let mut v = y[k] - self.mu[k];
            let base = if k == 0 { 0 } else { k * (k - 1) / 2 };
            for j in 0..k {
                v += self.beta_tilde[base + j] * (y[j] - self.mu[j]);
            }
            out[k] = v;
        }
        out
    }

    /// Log of `N_{p+1}((z, x); μ, Σ)` with `y = (z, x)` as one slice.
    pub fn ln_density(&self, y: &[f64]) -> f64 {
        let dim = self.dim();
        let res = self.whitened_residuals(y);
        let quad: f64 = (0..dim).map(|k| res[k] * res[k] / self.delta[k]).sum();
        -0.5 * (dim as f64) * LN_2PI - 0.5 * self.ln_det_covariance() - 0.5 * quad
    }

    /// Normal regression of `z` on `x` within this kernel, through the precision
    /// matrix: `var = 1/Λᶻᶻ`, `mean = μᶻ - Λᶻˣ (x - μˣ)/Λᶻᶻ`. Since `Λᶻᶻ ≥ 1/δ₁`
    /// the conditional variance never exceeds one.
    pub fn latent_regression(&self) -> LatentRegression {
        let dim = self.dim();
        let beta = self.beta();
        let mut lzz = 0.0;
        let mut lzx = DVector::zeros(dim - 1);
        for k in 0..dim {
            let b0 = beta[(k, 0)] / self.delta[k];
            lzz += beta[(k, 0)] * b0;
            for j in 1..dim {
                lzx[j - 1] += b0 * beta[(k, j)];
            }
        }
        let coef = -lzx / lzz;
        let intercept = self.mu[0] - coef.dot(&self.mu.rows(1, dim - 1));
        LatentRegression {
            intercept,
            coef,
            variance: 1.0 / lzz,
        }
    }

    /// Observable-kernel view `N_p(x; μˣ, Σˣˣ) Bern(y; π(x))`.
    pub fn observable(&self) -> Result<ObservableKernel> {
        ObservableKernel::from_moments(&self.mu, &self.covariance())
    }

    /// Pearson correlations of the kernel covariance, row-major over all pairs.
    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let s = self.covariance();
        let dim = self.dim();
        DMatrix::from_fn(dim, dim, |i, j| s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt())
    }
}

/// Conditional law of `z` given `x`: `N(intercept + coef·x, variance)`.
#[derive(Debug, Clone)]
pub struct LatentRegression {
    pub intercept: f64,
    pub coef: DVector<f64>,
    pub variance: f64,
}

impl LatentRegression {
    pub fn mean_at(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// The kernel of the observable mixture: the `x` marginal together with the
/// probit response probability `π(x)`. Built from arbitrary `(μ, Σ)`, so the
/// latent variance need not be one here.
#[derive(Debug, Clone)]
pub struct ObservableKernel {
    mu_z: f64,
    mu_x: DVector<f64>,
    sigma_zz: f64,
    sigma_zx: DVector<f64>,
    sigma_xx: DMatrix<f64>,
    prec_xx: DMatrix<f64>,
    ln_norm: f64,
    slope: DVector<f64>,
    cond_sd: f64,
}

impl ObservableKernel {
    pub fn from_moments(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        let dim = mu.len();
        if dim < 2 || sigma.nrows() != dim || sigma.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "mean of length {dim} with {}x{} covariance",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let blocks = CovarianceBlocks::from_full(sigma);
        let p = dim - 1;
        let chol = cholesky(&blocks.sigma_xx, "covariate covariance")?;
        let ln_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let slope = chol.solve(&blocks.sigma_zx);
        let cond_var = blocks.sigma_zz - blocks.sigma_zx.dot(&slope);
        if !(cond_var > 0.0) {
            return Err(Error::Degeneracy(format!(
                "conditional latent variance {cond_var} is not positive"
            )));
        }
        let prec_xx = chol.inverse();
        Ok(ObservableKernel {
            mu_z: mu[0],
            mu_x: mu.rows(1, p).into_owned(),
            sigma_zz: blocks.sigma_zz,
            sigma_zx: blocks.sigma_zx,
            sigma_xx: blocks.sigma_xx,
            prec_xx,
            ln_norm: -0.5 * (p as f64) * LN_2PI - 0.5 * ln_det,
            slope,
            cond_sd: cond_var.sqrt(),
        })
    }

    pub fn n_covariates(&self) -> usize {
        self.mu_x.len()
    }

    pub fn mu_z(&self) -> f64 {
        self.mu_z
    }

    pub fn mu_x(&self) -> &DVector<f64> {
        &self.mu_x
    }

    pub fn sigma_zx(&self) -> &DVector<f64> {
        &self.sigma_zx
    }

    pub fn sigma_xx(&self) -> &DMatrix<f64> {
        &self.sigma_xx
    }

    /// `Σˣˣ⁻¹ Σˣᶻ`, the regression coefficients of `z` on `x`.
    pub fn slope(&self) -> &DVector<f64> {
        &self.slope
    }

    pub fn conditional_sd(&self) -> f64 {
        self.cond_sd
    }

    /// Probability that the latent response is positive, ignoring `x`.
    pub fn marginal_probability(&self) -> f64 {
        norm_cdf(self.mu_z / self.sigma_zz.sqrt())
    }

    fn check_len(&self, x: &[f64]) {
        assert_eq!(x.len(), self.mu_x.len(), "covariate vector has wrong length");
    }

    /// Argument of Φ in `π(x)`.
    pub fn probit_index(&self, x: &[f64]) -> f64 {
        self.check_len(x);
        let shift: f64 = self
            .slope
            .iter()
            .zip(x.iter().zip(self.mu_x.iter()))
            .map(|(s, (xi, mi))| s * (xi - mi))
            .sum();
        (self.mu_z + shift) / self.cond_sd
    }

    pub fn probit(&self, x: &[f64]) -> f64 {
        norm_cdf(self.probit_index(x))
    }

    fn centered(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(self.mu_x.iter()).map(|(a, b)| a - b))
    }

    pub fn ln_density_x(&self, x: &[f64]) -> f64 {
        self.check_len(x);
        let c = self.centered(x);
        let quad = (&self.prec_xx * &c).dot(&c);
        self.ln_norm - 0.5 * quad
    }

    pub fn density_x(&self, x: &[f64]) -> f64 {
        self.ln_density_x(x).exp()
    }

    /// `N_p(x; μˣ, Σˣˣ) π(x)`.
    pub fn joint_y1(&self, x: &[f64]) -> f64 {
        self.density_x(x) * self.probit(x)
    }

    /// Gradient of `N_p(x; μˣ, Σˣˣ)` in `x`.
    pub fn grad_density_x(&self, x: &[f64]) -> DVector<f64> {
        let f = self.density_x(x);
        -(&self.prec_xx * self.centered(x)) * f
    }

    /// Gradient of `N_p(x; μˣ, Σˣˣ) π(x)` in `x`.
    pub fn grad_joint_y1(&self, x: &[f64]) -> DVector<f64> {
        let f = self.density_x(x);
        let u = self.probit_index(x);
        let grad_f = -(&self.prec_xx * self.centered(x)) * f;
        grad_f * norm_cdf(u) + &self.slope * (f * norm_pdf(u) / self.cond_sd)
    }

    /// `(f, J, ∇f, ∇J)` with `f = N_p(x; μˣ, Σˣˣ)` and `J = f π(x)`, sharing
    /// one density evaluation.
    pub fn value_and_gradients(&self, x: &[f64]) -> (f64, f64, DVector<f64>, DVector<f64>) {
        let c = self.centered(x);
        let pc = &self.prec_xx * &c;
        let f = (self.ln_norm - 0.5 * pc.dot(&c)).exp();
        let u = self.probit_index(x);
        let phi_u = norm_cdf(u);
        let grad_f = pc * (-f);
        let grad_j = &grad_f * phi_u + &self.slope * (f * norm_pdf(u) / self.cond_sd);
        (f, f * phi_u, grad_f, grad_j)
    }

    /// Adds `w (f, J, ∇f, ∇J)` at `x` into `acc` without allocating. `acc`
    /// holds `[f, J, ∇f.., ∇J..]`; `pc` is scratch of length `p`.
    pub fn accumulate_value_and_gradients(&self, x: &[f64], w: f64, pc: &mut [f64], acc: &mut [f64]) {
        let p = x.len();
        let mut quad = 0.0;
        for a in 0..p {
            let mut v = 0.0;
            for b in 0..p {
                v += self.prec_xx[(a, b)] * (x[b] - self.mu_x[b]);
            }
            pc[a] = v;
            quad += v * (x[a] - self.mu_x[a]);
        }
        let f = (self.ln_norm - 0.5 * quad).exp() * w;
        if f == 0.0 {
            return;
        }
        let u = self.probit_index(x);
        let phi_u = norm_cdf(u);
        let tilt = f * norm_pdf(u) / self.cond_sd;
        acc[0] += f;
        acc[1] += f * phi_u;
        for a in 0..p {
            let gf = -pc[a] * f;
            acc[2 + a] += gf;
            acc[2 + p + a] += gf * phi_u + self.slope[a] * tilt;
        }
    }

    /// The same kernel with the covariates outside `subset` integrated out.
    pub fn marginal(&self, subset: &[usize]) -> Result<ObservableKernel> {
        let k = subset.len();
        if k == 0 {
            return Err(Error::DimensionMismatch("empty covariate subset".into()));
        }
        if let Some(&j) = subset.iter().find(|&&j| j >= self.n_covariates()) {
            return Err(Error::DimensionMismatch(format!("covariate index {j} out of range")));
        }
        let mut mu = DVector::zeros(k + 1);
        let mut sigma = DMatrix::zeros(k + 1, k + 1);
        mu[0] = self.mu_z;
        sigma[(0, 0)] = self.sigma_zz;
        for (a, &ja) in subset.iter().enumerate() {
            mu[a + 1] = self.mu_x[ja];
            sigma[(0, a + 1)] = self.sigma_zx[ja];
            sigma[(a + 1, 0)] = self.sigma_zx[ja];
            for (b, &jb) in subset.iter().enumerate() {
                sigma[(a + 1, b + 1)] = self.sigma_xx[(ja, jb)];
            }
        }
        ObservableKernel::from_moments(&mu, &sigma)
    }
}

/// `π(x)` for one atom.
pub fn component_probit(atom: &KernelAtom, x: &[f64]) -> Result<f64> {
    if x.len() != atom.n_covariates() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} entries, kernel has {} covariates",
            x.len(),
            atom.n_covariates()
        )));
    }
    Ok(atom.observable()?.probit(x))
}

pub fn kernel_ln_density(atom: &KernelAtom, z: f64, x: &[f64]) -> Result<f64> {
    if x.len() != atom.n_covariates() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} entries, kernel has {} covariates",
            x.len(),
            atom.n_covariates()
        )));
    }
    let mut y = Vec::with_capacity(x.len() + 1);
    y.push(z);
    y.extend_from_slice(x);
    Ok(atom.ln_density(&y))
}

pub fn kernel_density(atom: &KernelAtom, z: f64, x: &[f64]) -> Result<f64> {
    kernel_ln_density(atom, z, x).map(f64::exp)
}

pub fn marginal_x_ln_density(atom: &KernelAtom, x: &[f64]) -> Result<f64> {
    if x.len() != atom.n_covariates() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} entries, kernel has {} covariates",
            x.len(),
            atom.n_covariates()
        )));
    }
    Ok(atom.observable()?.ln_density_x(x))
}

pub fn marginal_x_density(atom: &KernelAtom, x: &[f64]) -> Result<f64> {
    marginal_x_ln_density(atom, x).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn reconstruct_hand_example() {
        // β⁻¹ = [[1,0],[0.6,1]], Δ = diag(1, 0.64)
        let atom = KernelAtom::new(dv(&[0.0, 0.0]), dv(&[-0.6]), dv(&[1.0, 0.64])).unwrap();
        let s = atom.covariance();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
        assert!((s - want).amax() < 1e-14);
    }

    #[test]
    fn identity_case() {
        let atom = KernelAtom::standard(3);
        assert!((atom.covariance() - DMatrix::<f64>::identity(4, 4)).amax() == 0.0);
        let f = factorize_covariance(&DMatrix::identity(4, 4)).unwrap();
        assert!(f.beta_tilde.iter().all(|&b| b == 0.0));
        assert!(f.delta.iter().all(|&d| d == 1.0));
    }

    #[test]
    fn single_covariate_correlation_and_variance() {
        for &(b, d) in &[(0.3, 0.5), (-1.2, 2.0), (2.0, 0.1)] {
            let atom = KernelAtom::new(dv(&[0.0, 0.0]), dv(&[b]), dv(&[1.0, d])).unwrap();
            let s = atom.covariance();
            let rho = s[(0, 1)] / (s[(0, 0)] * s[(1, 1)]).sqrt();
            assert!((rho - (-b / (b * b + d).sqrt())).abs() < 1e-14);
            assert!((s[(1, 1)] - (b * b + d)).abs() < 1e-14);
        }
    }

    #[test]
    fn factorize_inverts_hand_example() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
        let f = factorize_covariance(&s).unwrap();
        assert!((f.beta_tilde[0] + 0.6).abs() < 1e-14);
        assert!((f.delta[0] - 1.0).abs() < 1e-14);
        assert!((f.delta[1] - 0.64).abs() < 1e-14);
    }

    #[test]
    fn factorize_rejects_indefinite() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(factorize_covariance(&s), Err(Error::Decomposition(_))));
    }

    #[test]
    fn invalid_delta_rejected() {
        assert!(KernelAtom::new(dv(&[0.0, 0.0]), dv(&[0.0]), dv(&[1.0, 0.0])).is_err());
        assert!(KernelAtom::new(dv(&[0.0, 0.0]), dv(&[0.0]), dv(&[2.0, 1.0])).is_err());
        assert!(matches!(
            reconstruct_covariance(&dv(&[0.0]), &dv(&[1.0, -1.0])),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn probit_examples() {
        // Σᶻˣ = 0
        let atom = KernelAtom::new(dv(&[0.0, 3.0]), dv(&[0.0]), dv(&[1.0, 2.0])).unwrap();
        assert!((component_probit(&atom, &[-7.0]).unwrap() - 0.5).abs() < 1e-15);
        let atom = KernelAtom::new(dv(&[0.8, 3.0]), dv(&[0.0]), dv(&[1.0, 2.0])).unwrap();
        for x in [-5.0, 0.0, 9.0] {
            assert!((component_probit(&atom, &[x]).unwrap() - norm_cdf(0.8)).abs() < 1e-15);
        }
        // Σᶻˣ = 0.6, Σˣˣ = 1, x = 1 → Φ(0.6/0.8)
        let atom = KernelAtom::new(dv(&[0.0, 0.0]), dv(&[-0.6]), dv(&[1.0, 0.64])).unwrap();
        let got = component_probit(&atom, &[1.0]).unwrap();
        assert!((got - 0.773_372_647_623_131_8).abs() < 1e-12);
    }

    #[test]
    fn standard_kernel_density_at_origin() {
        let atom = KernelAtom::standard(1);
        let d = kernel_density(&atom, 0.0, &[0.0]).unwrap();
        assert!((d - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        for &(z, x) in &[(40.0, 40.0), (-40.0, 40.0), (0.0, -40.0)] {
            assert!(kernel_ln_density(&atom, z, &[x]).unwrap().is_finite());
        }
        assert!(kernel_ln_density(&atom, 0.0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn kernel_density_integrates_to_one() {
        let atom = KernelAtom::new(dv(&[0.3, -0.5]), dv(&[0.7]), dv(&[1.0, 0.4])).unwrap();
        let s = atom.covariance();
        let (sz, sx) = (s[(0, 0)].sqrt(), s[(1, 1)].sqrt());
        let n = 400;
        let (hz, hx) = (16.0 * sz / n as f64, 16.0 * sx / n as f64);
        let mut total = 0.0;
        for i in 0..=n {
            let z = 0.3 - 8.0 * sz + i as f64 * hz;
            for j in 0..=n {
                let x = -0.5 - 8.0 * sx + j as f64 * hx;
                total += kernel_density(&atom, z, &[x]).unwrap();
            }
        }
        assert!((total * hz * hx - 1.0).abs() < 1e-3);
    }

    #[test]
    fn precision_and_block_routes_agree() {
        let atom = KernelAtom::new(
            dv(&[0.2, 1.0, -1.0]),
            dv(&[0.4, -0.3, 0.8]),
            dv(&[1.0, 0.5, 2.0]),
        )
        .unwrap();
        let reg = atom.latent_regression();
        let obs = atom.observable().unwrap();
        let x = [0.7, -0.2];
        let mean_blocks = obs.mu_z() + obs.slope().dot(&(dv(&x) - obs.mu_x()));
        assert!((reg.mean_at(&x) - mean_blocks).abs() < 1e-12);
        assert!((reg.variance.sqrt() - obs.conditional_sd()).abs() < 1e-12);
        let prec = atom.precision();
        assert!((prec * atom.covariance() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn probit_sign_follows_covariance() {
        for &b in &[-0.9, 0.9] {
            let atom = KernelAtom::new(dv(&[0.0, 0.0]), dv(&[b]), dv(&[1.0, 1.0])).unwrap();
            let szx = atom.blocks().sigma_zx[0];
            let lo = component_probit(&atom, &[-0.1]).unwrap();
            let hi = component_probit(&atom, &[0.1]).unwrap();
            assert_eq!((hi - lo).signum(), szx.signum());
        }
    }

    #[test]
    fn scaling_latent_scale_leaves_probit_unchanged() {
        // Unrestricted route: scale μᶻ, Σᶻˣ by c and Σᶻᶻ by c².
        let atom = KernelAtom::new(
            dv(&[0.4, 1.0, -1.0]),
            dv(&[0.5, -0.2, 0.3]),
            dv(&[1.0, 0.7, 1.3]),
        )
        .unwrap();
        let base = atom.observable().unwrap();
        let c = 3.7;
        let mut mu = atom.mu().clone();
        mu[0] *= c;
        let mut s = atom.covariance();
        for j in 0..3 {
            s[(0, j)] *= c;
            s[(j, 0)] *= c;
        }
        let scaled = ObservableKernel::from_moments(&mu, &s).unwrap();
        for x in [[0.0, 0.0], [1.5, -2.0], [-3.0, 0.4]] {
            assert!((base.probit(&x) - scaled.probit(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_subset_matches_bivariate_block() {
        let atom = KernelAtom::new(
            dv(&[0.1, 1.0, -1.0]),
            dv(&[0.5, -0.2, 0.3]),
            dv(&[1.0, 0.7, 1.3]),
        )
        .unwrap();
        let obs = atom.observable().unwrap();
        let m = obs.marginal(&[1]).unwrap();
        let s = atom.covariance();
        assert!((m.sigma_xx()[(0, 0)] - s[(2, 2)]).abs() < 1e-14);
        assert!((m.sigma_zx()[0] - s[(0, 2)]).abs() < 1e-14);
    }

    fn spd_strategy(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1.0f64..1.0, dim * dim).prop_map(move |v| {
            let a = DMatrix::from_vec(dim, dim, v);
            &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1
        })
    }

    proptest! {
        #[test]
        fn factorize_reconstruct_roundtrip(sigma in (2usize..=7).prop_flat_map(spd_strategy)) {
            let f = factorize_covariance(&sigma).unwrap();
            let back = reconstruct_covariance(&f.beta_tilde, &f.delta).unwrap();
            prop_assert!((&back - &sigma).amax() < 1e-10);
            let det: f64 = f.delta.iter().product();
            prop_assert!((det / sigma.determinant() - 1.0).abs() < 1e-10);
            let again = factorize_covariance(&back).unwrap();
            prop_assert!((again.beta_tilde - &f.beta_tilde).amax() < 1e-10);
            prop_assert!((again.delta - &f.delta).amax() < 1e-10);
        }

        #[test]
        fn reconstructed_determinant_is_product_of_delta(
            bt in proptest::collection::vec(-2.0f64..2.0, 6),
            d in proptest::collection::vec(0.05f64..5.0, 3),
        ) {
            let atom = KernelAtom::from_free_delta(DVector::zeros(4), DVector::from_vec(bt), &d).unwrap();
            let det = atom.covariance().determinant();
            prop_assert!((det / d.iter().product::<f64>() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn accumulated_terms_match_allocating_version(
            bt in proptest::collection::vec(-1.5f64..1.5, 6),
            d in proptest::collection::vec(0.2f64..3.0, 3),
            x in proptest::collection::vec(-3.0f64..3.0, 3),
            w in 0.01f64..1.0,
        ) {
            let mu = DVector::from_row_slice(&[0.3, -0.5, 0.2, 1.0]);
            let k = KernelAtom::from_free_delta(mu, DVector::from_vec(bt), &d).unwrap().observable().unwrap();
            let (f, j, gf, gj) = k.value_and_gradients(&x);
            let mut pc = [0.0; 3];
            let mut acc = [0.0; 8];
            k.accumulate_value_and_gradients(&x, w, &mut pc, &mut acc);
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
            prop_assert!(close(acc[0], w * f) && close(acc[1], w * j));
            for a in 0..3 {
                prop_assert!(close(acc[2 + a], w * gf[a]) && close(acc[5 + a], w * gj[a]));
            }
        }
    }
}

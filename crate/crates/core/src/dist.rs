//! Random variate generation used by the sampler and the prior simulators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_quantile};

/// Standardized truncation points beyond this use exponential rejection
/// instead of the inverse-CDF transform.
pub const TAIL_SWITCH: f64 = 5.0;

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn std_normal_vec<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| std_normal(rng)))
}

pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Open01.sample(rng)
}

/// Gamma variate with the given shape and *rate*.
pub fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma(shape={shape}, rate={rate})"
        )));
    }
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidParameter(format!("gamma(shape={shape}, rate={rate}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Inverse-gamma variate, density ∝ x^{-(shape+1)} exp(-scale/x).
pub fn inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    Ok(1.0 / gamma(shape, scale, rng)?)
}

/// Draws ζ ~ beta(a, b) through a gamma pair, returning (ln ζ, ln(1-ζ)).
/// Working with the logs keeps `1-ζ` accurate when ζ is close to one.
pub fn ln_beta_pair<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<(f64, f64)> {
    let ga = gamma(a, 1.0, rng)?;
    let gb = gamma(b, 1.0, rng)?;
    let ln_total = (ga + gb).ln();
    Ok((ga.ln() - ln_total, gb.ln() - ln_total))
}

/// Standard normal restricted to (a, ∞).
pub fn std_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a > TAIL_SWITCH {
        // Translated-exponential proposal with the optimal rate.
        let rate = 0.5 * (a + (a * a + 4.0).sqrt());
        let exp = Exp::new(rate).expect("rate is positive");
        loop {
            let x = a + exp.sample(rng);
            let accept = (-0.5 * (x - rate) * (x - rate)).exp();
            if uniform_open(rng) <= accept {
                return x;
            }
        }
    }
    // X = -Φ^{-1}(U Φ(-a)) has the truncated law for U ~ U(0,1).
    let upper_mass = norm_cdf(-a);
    let u = uniform_open(rng) * upper_mass;
    let x = -norm_quantile(u);
    x.max(a)
}

/// Draws from N(mean, sd²) truncated to (0, ∞) when `positive`, else to (-∞, 0].
/// The returned value always carries the requested sign.
pub fn truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, positive: bool, rng: &mut R) -> f64 {
    if positive {
        let v = mean + sd * std_normal_above(-mean / sd, rng);
        if v > 0.0 {
            v
        } else {
            f64::MIN_POSITIVE
        }
    } else {
        let v = mean - sd * std_normal_above(mean / sd, rng);
        v.min(0.0)
    }
}

pub(crate) fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Degeneracy(format!("{what} is not positive definite")))
}

/// Draws from N(Q⁻¹b, Q⁻¹) given the precision Q and linear term b.
/// Returns the draw and the conditional mean.
pub fn mvn_canonical<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let chol = cholesky(precision, "conditional precision")?;
    let mean = chol.solve(linear);
    let eps = std_normal_vec(linear.len(), rng);
    let offset = chol
        .l()
        .tr_solve_lower_triangular(&eps)
        .ok_or_else(|| Error::Degeneracy("singular precision factor".into()))?;
    Ok((&mean + offset, mean))
}

pub fn mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = cholesky(cov, "covariance")?;
    let eps = std_normal_vec(mean.len(), rng);
    Ok(mean + chol.l() * eps)
}

/// Inverse-Wishart draw with density ∝ |S|^{-(df+k+1)/2} exp(-tr(B S⁻¹)/2),
/// so that E[S] = B/(df-k-1). Uses the Bartlett decomposition of S⁻¹.
pub fn inverse_wishart<R: Rng + ?Sized>(
    df: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let k = scale.nrows();
    if df <= (k as f64) - 1.0 {
        return Err(Error::InvalidHyperparameter(format!(
            "inverse-Wishart degrees of freedom {df} too small for dimension {k}"
        )));
    }
    let upper = cholesky(scale, "inverse-Wishart scale")?.l();
    // S⁻¹ = U⁻ᵀ A Aᵀ U⁻¹ with B = U Uᵀ, so S = (U A⁻ᵀ)(U A⁻ᵀ)ᵀ.
    let mut bartlett = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        let chi2 = 2.0 * gamma(0.5 * (df - i as f64), 1.0, rng)?;
        bartlett[(i, i)] = chi2.sqrt();
        for j in 0..i {
            bartlett[(i, j)] = std_normal(rng);
        }
    }
    let a_inv = bartlett
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Degeneracy("singular Bartlett factor".into()))?;
    let factor = upper * a_inv.transpose();
    let s = &factor * factor.transpose();
    Ok(symmetrize(s))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

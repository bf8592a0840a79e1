//! Reference implementations shared by the integration tests. Nothing here
//! calls the library's density, CDF or sampling code.

#![allow(dead_code)]

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

pub fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

pub fn phi_pdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().pdf(x)
}

/// `Σ = β⁻¹ Δ β⁻ᵀ` with `β` unit lower triangular, filled row by row from `bt`.
pub fn sigma_from(bt: &[f64], delta: &[f64]) -> DMatrix<f64> {
    let k = delta.len();
    let mut beta = DMatrix::identity(k, k);
    let mut it = bt.iter();
    for i in 1..k {
        for j in 0..i {
            beta[(i, j)] = *it.next().unwrap();
        }
    }
    let inv = beta.try_inverse().unwrap();
    &inv * DMatrix::from_diagonal(&DVector::from_row_slice(delta)) * inv.transpose()
}

/// Log density of `N(mu, sigma)` at `y` through an explicit inverse and determinant.
pub fn mvn_ln_pdf(y: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> f64 {
    let k = y.len();
    let d = DVector::from_iterator(k, y.iter().zip(mu).map(|(a, b)| a - b));
    let inv = sigma.clone().try_inverse().unwrap();
    let quad = (d.transpose() * inv * &d)[(0, 0)];
    -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + sigma.determinant().ln() + quad)
}

/// One mixture component in moment form.
#[derive(Debug, Clone)]
pub struct Component {
    pub weight: f64,
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
}

impl Component {
    fn p(&self) -> usize {
        self.mu.len() - 1
    }

    fn blocks(&self) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.p();
        let zx = DVector::from_iterator(p, (0..p).map(|j| self.sigma[(0, j + 1)]));
        let xx = self.sigma.view((1, 1), (p, p)).into_owned();
        (zx, xx)
    }

    /// Covariate density `N(x; μˣ, Σˣˣ)`.
    pub fn density_x(&self, x: &[f64]) -> f64 {
        let (_, xx) = self.blocks();
        mvn_ln_pdf(x, &self.mu[1..], &xx).exp()
    }

    /// `Pr(z > 0 | x)` for this component.
    pub fn probit(&self, x: &[f64]) -> f64 {
        let (zx, xx) = self.blocks();
        let inv = xx.try_inverse().unwrap();
        let b = &inv * &zx;
        let shift: f64 = (0..x.len()).map(|j| b[j] * (x[j] - self.mu[j + 1])).sum();
        let var = self.sigma[(0, 0)] - zx.dot(&b);
        phi((self.mu[0] + shift) / var.sqrt())
    }
}

/// `(f(x), Pr(y=1, x))` of a mixture.
pub fn mixture_f_and_j(components: &[Component], x: &[f64]) -> (f64, f64) {
    components.iter().fold((0.0, 0.0), |(f, j), c| {
        let d = c.weight * c.density_x(x);
        (f + d, j + d * c.probit(x))
    })
}

pub fn mixture_regression(components: &[Component], x: &[f64]) -> f64 {
    let (f, j) = mixture_f_and_j(components, x);
    j / f
}

/// Draws `(z, x)` from component `c`.
pub fn draw_from<R: Rng + ?Sized>(c: &Component, rng: &mut R) -> Vec<f64> {
    let l = c.sigma.clone().cholesky().unwrap().l();
    let e = DVector::from_iterator(c.mu.len(), (0..c.mu.len()).map(|_| StandardNormal.sample(rng)));
    let v = l * e;
    c.mu.iter().zip(v.iter()).map(|(m, d)| m + d).collect()
}

/// Picks an index with the given probabilities.
pub fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Simulated `(y, x)` from a mixture of latent-response normals.
pub fn simulate<R: Rng + ?Sized>(components: &[Component], n: usize, rng: &mut R) -> (Vec<u8>, Vec<Vec<f64>>) {
    let weights: Vec<f64> = components.iter().map(|c| c.weight).collect();
    (0..n)
        .map(|_| {
            let v = draw_from(&components[categorical(&weights, rng)], rng);
            (u8::from(v[0] > 0.0), v[1..].to_vec())
        })
        .unzip()
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

/// Sample mean and standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Linear-interpolation quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// One-sample KS statistic, written out directly.
pub fn ks(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// The observed ozone data shipped with the crate.
pub fn ozone_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/ozone.csv")
}

/// A proper, moderately informative hyperprior for `p` covariates.
pub fn basic_prior(p: usize) -> dpbinreg::hyper::HyperPrior {
    let dim = p + 1;
    let q = dim * (dim - 1) / 2;
    dpbinreg::hyper::HyperPrior {
        structure: dpbinreg::hyper::KernelStructure::Full,
        p,
        a_m: DVector::zeros(dim),
        b_m: DMatrix::identity(dim, dim),
        a_v: dim as f64 + 2.0,
        b_v: DMatrix::identity(dim, dim),
        a_theta: DVector::zeros(q),
        b_theta: DMatrix::identity(q, q),
        a_c: q as f64 + 2.0,
        b_c: DMatrix::identity(q, q),
        nu: vec![3.0; p],
        a_s: vec![2.0; p],
        b_s: vec![1.0; p],
        a_alpha: 2.0,
        b_alpha: 1.0,
    }
}

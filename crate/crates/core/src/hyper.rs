//! Centering-distribution parameters `ψ = (m, V, θ, C, s)` and their fixed hyperpriors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{beta_index, n_free_beta};

/// Which entries of `β̃` are free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelStructure {
    /// All `p(p+1)/2` entries are free.
    Full,
    /// The first column of `β` (coupling `z` to `x`) is pinned to zero, so
    /// `Σᶻˣ = 0` and the response is independent of the covariates within a
    /// component.
    Product,
}

impl KernelStructure {
    /// Indices of the free `β̃` entries for a kernel with `p` covariates.
    pub fn free_indices(self, p: usize) -> Vec<usize> {
        let dim = p + 1;
        match self {
            KernelStructure::Full => (0..n_free_beta(dim)).collect(),
            KernelStructure::Product => (2..dim)
                .flat_map(|row| (1..row).map(move |col| beta_index(row, col)))
                .collect(),
        }
    }

    pub fn n_free(self, p: usize) -> usize {
        self.free_indices(p).len()
    }
}

/// Fixed hyper-hyperparameters of the model. Matrices are stored for the
/// free `β̃` coordinates only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub structure: KernelStructure,
    /// Number of covariates `p`.
    pub p: usize,
    /// `m ~ N(a_m, B_m)`
    #[serde(with = "crate::serde_mat::vector")]
    pub a_m: DVector<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub b_m: DMatrix<f64>,
    /// `V ~ IW(a_V, B_V)`
    pub a_v: f64,
    #[serde(with = "crate::serde_mat::matrix")]
    pub b_v: DMatrix<f64>,
    /// `θ ~ N(a_θ, B_θ)`
    #[serde(with = "crate::serde_mat::vector")]
    pub a_theta: DVector<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub b_theta: DMatrix<f64>,
    /// `C ~ IW(a_C, B_C)`
    pub a_c: f64,
    #[serde(with = "crate::serde_mat::matrix")]
    pub b_c: DMatrix<f64>,
    /// Inverse-gamma shapes `ν₂..ν_{p+1}` of the `δ` base components.
    pub nu: Vec<f64>,
    /// `s_i ~ gamma(a_s, b_s)` (shape, rate).
    pub a_s: Vec<f64>,
    pub b_s: Vec<f64>,
    /// `α ~ gamma(a_α, b_α)` (shape, rate).
    pub a_alpha: f64,
    pub b_alpha: f64,
}

impl HyperPrior {
    pub fn dim(&self) -> usize {
        self.p + 1
    }

    pub fn n_free_beta(&self) -> usize {
        self.structure.n_free(self.p)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        let q = self.n_free_beta();
        let bad = |m: String| Err(Error::InvalidHyperparameter(m));
        if self.a_m.len() != dim || self.b_m.shape() != (dim, dim) || self.b_v.shape() != (dim, dim) {
            return bad(format!("location hyperparameters must have dimension {dim}"));
        }
        if self.a_theta.len() != q || self.b_theta.shape() != (q, q) || self.b_c.shape() != (q, q) {
            return bad(format!("beta hyperparameters must have dimension {q}"));
        }
        if self.nu.len() != self.p || self.a_s.len() != self.p || self.b_s.len() != self.p {
            return bad(format!("need {} entries for nu, a_s and b_s", self.p));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self.nu.iter().chain(&self.a_s).chain(&self.b_s).all(|&v| positive(v)) {
            return bad("nu, a_s, b_s must be positive".into());
        }
        if !positive(self.a_alpha) || !positive(self.b_alpha) {
            return bad("alpha prior parameters must be positive".into());
        }
        if self.a_v <= (dim as f64) - 1.0 || (q > 0 && self.a_c <= (q as f64) - 1.0) {
            return bad("inverse-Wishart degrees of freedom too small".into());
        }
        for (name, m) in [("B_m", &self.b_m), ("B_V", &self.b_v), ("B_theta", &self.b_theta), ("B_C", &self.b_c)] {
            if m.nrows() > 0 && m.clone().cholesky().is_none() {
                return bad(format!("{name} is not positive definite"));
            }
        }
        Ok(())
    }

    /// Prior expectation of `ψ`, used to start chains.
    pub fn prior_mean_state(&self) -> HyperState {
        let dim = self.dim() as f64;
        let q = self.n_free_beta();
        let v = if self.a_v > dim + 1.0 {
            &self.b_v / (self.a_v - dim - 1.0)
        } else {
            self.b_v.clone()
        };
        let c = if self.a_c > q as f64 + 1.0 {
            &self.b_c / (self.a_c - q as f64 - 1.0)
        } else {
            self.b_c.clone()
        };
        HyperState {
            m: self.a_m.clone(),
            v,
            theta: self.a_theta.clone(),
            c,
            s: self.a_s.iter().zip(&self.b_s).map(|(a, b)| a / b).collect(),
        }
    }

    /// The same prior restricted to the free coordinates of another structure.
    /// Only narrowing from `Full` is supported.
    pub fn with_structure(&self, structure: KernelStructure) -> Result<HyperPrior> {
        if structure == self.structure {
            return Ok(self.clone());
        }
        if self.structure != KernelStructure::Full {
            return Err(Error::Unsupported("can only restrict a full-kernel prior".into()));
        }
        let keep = structure.free_indices(self.p);
        let sub_vec = |v: &DVector<f64>| DVector::from_iterator(keep.len(), keep.iter().map(|&i| v[i]));
        let sub_mat = |m: &DMatrix<f64>| DMatrix::from_fn(keep.len(), keep.len(), |a, b| m[(keep[a], keep[b])]);
        let q_full = self.n_free_beta() as f64;
        let q_new = keep.len() as f64;
        // Keep E[C] unchanged on the retained block.
        let a_c = self.a_c - q_full + q_new;
        Ok(HyperPrior {
            structure,
            a_theta: sub_vec(&self.a_theta),
            b_theta: sub_mat(&self.b_theta),
            a_c,
            b_c: sub_mat(&self.b_c),
            ..self.clone()
        })
    }
}

/// Current value of the centering-distribution parameters `ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    #[serde(with = "crate::serde_mat::vector")]
    pub m: DVector<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub v: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::vector")]
    pub theta: DVector<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub c: DMatrix<f64>,
    /// Inverse-gamma scales `s₂..s_{p+1}`.
    pub s: Vec<f64>,
}

impl HyperState {
    pub fn validate(&self, prior: &HyperPrior) -> Result<()> {
        let dim = prior.dim();
        let q = prior.n_free_beta();
        if self.m.len() != dim || self.v.shape() != (dim, dim) {
            return Err(Error::InvalidHyperparameter(format!("m, V must have dimension {dim}")));
        }
        if self.theta.len() != q || self.c.shape() != (q, q) {
            return Err(Error::InvalidHyperparameter(format!("theta, C must have dimension {q}")));
        }
        if self.s.len() != prior.p || self.s.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidHyperparameter("s must be positive".into()));
        }
        if self.v.clone().cholesky().is_none() || (q > 0 && self.c.clone().cholesky().is_none()) {
            return Err(Error::InvalidHyperparameter("V and C must be positive definite".into()));
        }
        Ok(())
    }
}

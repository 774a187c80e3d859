//! Full-covariance Gaussian mixtures fitted by expectation-maximization.
//!
//! A component's effective covariance is `Σ + diag_reg·I`; the stored `Σ` is
//! the responsibility-weighted sample covariance from the last M-step.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
    /// `log det(Σ + reg·I)`.
    log_det: f64,
}

fn factorize(cov: &DMatrix<f64>, reg: f64, what: impl Fn() -> String) -> Result<Factor> {
    let mut eff = cov.clone();
    for i in 0..eff.nrows() {
        eff[(i, i)] += reg;
    }
    let chol =
        Cholesky::new(eff).ok_or_else(|| Error::numeric(format!("{}: covariance is not positive definite", what())))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return Err(Error::numeric(format!("{}: degenerate covariance", what())));
    }
    Ok(Factor { chol, log_det })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mixture density of one class.
#[derive(Debug, Clone)]
pub struct ClassGmm {
    pub class_id: usize,
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub diag_reg: f64,
    factors: Vec<Factor>,
}

impl PartialEq for ClassGmm {
    fn eq(&self, other: &Self) -> bool {
        self.class_id == other.class_id
            && self.weights == other.weights
            && self.means == other.means
            && self.covariances == other.covariances
            && self.diag_reg == other.diag_reg
    }
}

impl ClassGmm {
    pub fn new(
        class_id: usize,
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        diag_reg: f64,
    ) -> Result<Self> {
        let j = weights.len();
        if j == 0 || means.len() != j || covariances.len() != j {
            return Err(Error::input(
                "mixture needs matching, non-empty weights, means and covariances",
            ));
        }
        let n = means[0].len();
        if n == 0 {
            return Err(Error::input("feature dimension must be >= 1"));
        }
        if means.iter().any(|m| m.len() != n) || covariances.iter().any(|c| c.shape() != (n, n)) {
            return Err(Error::input("component shapes disagree"));
        }
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!(
                "weights must be nonnegative and sum to 1, got {weights:?}"
            )));
        }
        if !(diag_reg >= 0.0 && diag_reg.is_finite()) {
            return Err(Error::input("diag_reg must be finite and >= 0"));
        }
        for (k, c) in covariances.iter().enumerate() {
            if (c - c.transpose()).abs().max() > 1e-9 * c.abs().max().max(1.0) {
                return Err(Error::input(format!(
                    "class {class_id} component {k}: covariance not symmetric"
                )));
            }
        }
        let factors = covariances
            .iter()
            .enumerate()
            .map(|(k, c)| factorize(c, diag_reg, || format!("class {class_id} component {k}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            class_id,
            weights,
            means,
            covariances,
            diag_reg,
            factors,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// `log N(z; μ_k, Σ_k + reg·I) + log π_k` for every component.
    fn component_log_probs(&self, z: &DVector<f64>) -> Vec<f64> {
        let n = self.dim() as f64;
        self.factors
            .iter()
            .zip(&self.means)
            .zip(&self.weights)
            .map(|((f, mu), &w)| {
                let diff = z - mu;
                let y = f
                    .chol
                    .l_dirty()
                    .solve_lower_triangular(&diff)
                    .expect("non-singular factor");
                w.ln() - 0.5 * (n * (2.0 * PI).ln() + f.log_det + y.norm_squared())
            })
            .collect()
    }

    /// `log Σ_k π_k N(z; μ_k, Σ_k + reg·I)`.
    pub fn log_likelihood(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::input(format!(
                "feature length {} does not match mixture dimension {}",
                z.len(),
                self.dim()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite feature"));
        }
        let lp = self.component_log_probs(&DVector::from_column_slice(z));
        Ok(log_sum_exp(lp.iter().copied()))
    }
}

/// Free-function form of [`ClassGmm::log_likelihood`].
pub fn gmm_log_likelihood(gmm: &ClassGmm, z: &[f64]) -> Result<f64> {
    gmm.log_likelihood(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmSettings {
    pub components: usize,
    pub diag_reg: f64,
    /// Stop once an iteration improves the mean log-likelihood by at most `tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            components: 1,
            diag_reg: 1e-6,
            tol: 1e-6,
            max_iter: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub gmm: ClassGmm,
    /// Mean log-likelihood of the data after each iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// k-means++ seeding followed by hard nearest-center assignment.
fn initial_responsibilities(z: &DMatrix<f64>, k: usize, seed: u64) -> DMatrix<f64> {
    let n = z.nrows();
    let mut rng = seed::derived_rng(seed, &["gmm-init"]);
    let dist2 =
        |i: usize, c: &DVector<f64>| -> f64 { z.row(i).iter().zip(c.iter()).map(|(a, b)| (a - b).powi(2)).sum() };
    let mut centers: Vec<DVector<f64>> = vec![z.row(rng.random_range(0..n)).transpose()];
    while centers.len() < k {
        let d: Vec<f64> = (0..n)
            .map(|i| centers.iter().map(|c| dist2(i, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &di) in d.iter().enumerate() {
                if target < di {
                    chosen = i;
                    break;
                }
                target -= di;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(z.row(pick).transpose());
    }
    let mut resp = DMatrix::zeros(n, k);
    for i in 0..n {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centers.iter().enumerate() {
            let dj = dist2(i, c);
            if dj < best_d {
                best = j;
                best_d = dj;
            }
        }
        resp[(i, best)] = 1.0;
    }
    resp
}

fn m_step(z: &DMatrix<f64>, resp: &DMatrix<f64>, class_id: usize, reg: f64) -> Result<ClassGmm> {
    let (n, dim) = z.shape();
    let k = resp.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for j in 0..k {
        let r = resp.column(j);
        let nk: f64 = r.sum();
        if nk < 10.0 * f64::EPSILON * n as f64 {
            return Err(Error::numeric(format!(
                "class {class_id} component {j} collapsed (no responsibility mass)"
            )));
        }
        let mean = (z.tr_mul(&r)) / nk;
        let mut centered = z.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut weighted = centered.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= r[i];
        }
        let mut cov = weighted.tr_mul(&centered) / nk;
        // exact symmetry
        for a in 0..dim {
            for b in a + 1..dim {
                let v = 0.5 * (cov[(a, b)] + cov[(b, a)]);
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        weights.push(nk / n as f64);
        means.push(mean);
        covs.push(cov);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    ClassGmm::new(class_id, weights, means, covs, reg)
}

/// Returns the mean log-likelihood and fills `resp` with posterior responsibilities.
fn e_step(z: &DMatrix<f64>, gmm: &ClassGmm, resp: &mut DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..z.nrows() {
        let lp = gmm.component_log_probs(&z.row(i).transpose());
        let lse = log_sum_exp(lp.iter().copied());
        for (j, v) in lp.iter().enumerate() {
            resp[(i, j)] = (v - lse).exp();
        }
        total += lse;
    }
    total / z.nrows() as f64
}

/// Fits a `components`-mixture to the rows of `z` (`N x n`).
pub fn fit_gmm_em(z: &DMatrix<f64>, class_id: usize, settings: &EmSettings) -> Result<GmmFit> {
    let (n, dim) = z.shape();
    let k = settings.components;
    if k == 0 {
        return Err(Error::config("component count must be >= 1"));
    }
    if n < k {
        return Err(Error::config(format!(
            "class {class_id}: {n} samples for {k} components"
        )));
    }
    if dim == 0 {
        return Err(Error::config("feature dimension must be >= 1"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::input(format!("class {class_id}: non-finite features")));
    }
    if settings.max_iter == 0 {
        return Err(Error::config("max_iter must be >= 1"));
    }
    if settings.tol.is_nan() || settings.tol < 0.0 {
        return Err(Error::config("tol must be >= 0"));
    }
    let mut resp = initial_responsibilities(z, k, settings.seed);
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut converged = false;
    let mut gmm = m_step(z, &resp, class_id, settings.diag_reg)?;
    for iter in 0..settings.max_iter {
        if iter > 0 {
            gmm = m_step(z, &resp, class_id, settings.diag_reg)?;
        }
        let ll = e_step(z, &gmm, &mut resp);
        if !ll.is_finite() {
            return Err(Error::numeric(format!("class {class_id}: log-likelihood became {ll}")));
        }
        trace.push(ll);
        if ll - prev <= settings.tol {
            converged = true;
            break;
        }
        prev = ll;
    }
    Ok(GmmFit { gmm, trace, converged })
}

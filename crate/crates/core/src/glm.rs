//! Weighted least squares and weighted logistic regression (IRLS), plus a
//! cluster-robust sandwich covariance.
//!
//! Both fitters go through a column-pivoted QR of the square-root weighted
//! design, so rank deficiency is reported with the names of the columns
//! that were rejected.

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::linalg::pivoted_least_squares;

pub const DEVIANCE_TOL: f64 = 1e-8;
pub const SCORE_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;
const POLISH_STEPS: usize = 3;
pub const MAX_HALVINGS: usize = 10;
/// Any |coefficient| above this during IRLS is treated as separation.
pub const SEPARATION_BOUND: f64 = 30.0;
/// Fitted probabilities are kept this far from 0 and 1.
pub const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    #[serde(alias = "binomial")]
    BinomialLogit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub names: Vec<String>,
    /// Model-based covariance: `sigma^2 (X'WX)^{-1}` for the gaussian family,
    /// the inverse weighted information for the binomial family.
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    pub family: Family,
}

impl GlmFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.coefficients[j])
    }

    pub fn linear_predictor(&self, design: &Design) -> Result<Vec<f64>> {
        if design.ncols() != self.coefficients.len() {
            return Err(Error::Dimension(format!(
                "design has {} columns, fit has {} coefficients",
                design.ncols(),
                self.coefficients.len()
            )));
        }
        let beta = DVector::from_column_slice(&self.coefficients);
        Ok((&design.matrix * beta).iter().copied().collect())
    }
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_inputs(design: &Design, response: &[f64], weights: &[f64]) -> Result<usize> {
    let (n, p) = (design.nrows(), design.ncols());
    if response.len() != n || weights.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows, response {} and weights {}",
            response.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Config(format!("weights must be finite and nonnegative, got {w}")));
    }
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if positive == 0 {
        return Err(Error::ZeroWeights);
    }
    if positive < p {
        return Err(Error::SingularDesign {
            columns: design.names[positive..].to_vec(),
        });
    }
    Ok(positive)
}

/// Weighted least-squares solve of `sqrt(w) X b = sqrt(w) z`.
fn weighted_solve(
    design: &Design,
    target: &[f64],
    weights: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut a = design.matrix.clone();
    let mut b = DVector::zeros(design.nrows());
    for i in 0..design.nrows() {
        let s = weights[i].sqrt();
        a.row_mut(i).scale_mut(s);
        b[i] = s * target[i];
    }
    pivoted_least_squares(&a, &b)
        .map(|s| (s.coefficients, s.inverse_gram))
        .map_err(|cols| Error::SingularDesign {
            columns: cols.into_iter().map(|j| design.names[j].clone()).collect(),
        })
}

/// Minimizes the weighted sum of squared residuals.
pub fn fit_wls(design: &Design, response: &[f64], weights: &[f64]) -> Result<GlmFit> {
    let positive = check_inputs(design, response, weights)?;
    let (beta, inv_gram) = weighted_solve(design, response, weights)?;
    let fitted = &design.matrix * &beta;
    let rss: f64 = (0..design.nrows())
        .map(|i| weights[i] * (response[i] - fitted[i]).powi(2))
        .sum();
    let p = design.ncols();
    let sigma2 = if positive > p {
        rss / (positive - p) as f64
    } else {
        0.0
    };
    Ok(GlmFit {
        coefficients: beta.iter().copied().collect(),
        names: design.names.clone(),
        covariance: inv_gram * sigma2,
        converged: true,
        iterations: 1,
        deviance: rss,
        family: Family::Gaussian,
    })
}

fn binomial_deviance(eta: &DVector<f64>, response: &[f64], weights: &[f64]) -> f64 {
    // -2 * sum w [y log mu + (1-y) log(1-mu)], with log mu = -softplus(-eta).
    2.0 * (0..eta.len())
        .filter(|&i| weights[i] > 0.0)
        .map(|i| {
            let y = response[i];
            weights[i] * (y * softplus(-eta[i]) + (1.0 - y) * softplus(eta[i]))
        })
        .sum::<f64>()
}

/// Weighted Bernoulli log-likelihood at `beta`.
pub fn logistic_log_likelihood(design: &Design, response: &[f64], weights: &[f64], beta: &[f64]) -> f64 {
    let eta = &design.matrix * DVector::from_column_slice(beta);
    -0.5 * binomial_deviance(&eta, response, weights)
}

/// Gradient of the weighted log-likelihood, `X' W (y - mu)`. For the
/// gaussian family this is the normal-equation residual.
pub fn score(family: Family, design: &Design, response: &[f64], weights: &[f64], beta: &[f64]) -> Vec<f64> {
    let eta = &design.matrix * DVector::from_column_slice(beta);
    let resid = DVector::from_iterator(
        eta.len(),
        (0..eta.len()).map(|i| {
            let mu = match family {
                Family::Gaussian => eta[i],
                Family::BinomialLogit => logistic(eta[i]),
            };
            weights[i] * (response[i] - mu)
        }),
    );
    (design.matrix.transpose() * resid).iter().copied().collect()
}

/// IRLS fit of a logistic regression with prior weights.
pub fn fit_logistic(design: &Design, response: &[f64], weights: &[f64]) -> Result<GlmFit> {
    check_inputs(design, response, weights)?;
    if let Some(y) = response.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Config(format!("logistic response must be 0/1, got {y}")));
    }
    let mut active = response.iter().zip(weights).filter(|(_, &w)| w > 0.0).map(|(y, _)| *y);
    let first = active.next().unwrap_or(0.0);
    if active.all(|y| y == first) {
        return Err(Error::Separation(format!(
            "response is constant ({first}) among positively weighted rows"
        )));
    }

    let n = design.nrows();
    let p = design.ncols();
    let mut beta = DVector::<f64>::zeros(p);
    let mut eta = DVector::<f64>::zeros(n);
    let mut deviance = binomial_deviance(&eta, response, weights);
    let mut trace = vec![deviance];
    let mut working_w = vec![0.0; n];
    let mut working_z = vec![0.0; n];

    for iter in 1..=MAX_ITER {
        for i in 0..n {
            let mu = logistic(eta[i]).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            let v = mu * (1.0 - mu);
            working_w[i] = weights[i] * v;
            working_z[i] = eta[i] + (response[i] - mu) / v;
        }
        let (mut candidate, _) = weighted_solve(design, &working_z, &working_w)?;
        let mut cand_eta = &design.matrix * &candidate;
        let mut cand_dev = binomial_deviance(&cand_eta, response, weights);
        let mut halvings = 0;
        while cand_dev > deviance && halvings < MAX_HALVINGS {
            candidate = (&candidate + &beta) * 0.5;
            cand_eta = &design.matrix * &candidate;
            cand_dev = binomial_deviance(&cand_eta, response, weights);
            halvings += 1;
        }
        if let Some(j) = candidate.iter().position(|b| b.abs() > SEPARATION_BOUND) {
            return Err(Error::Separation(format!(
                "|coefficient| of `{}` exceeded {SEPARATION_BOUND} at iteration {iter}",
                design.names[j]
            )));
        }
        let change = (deviance - cand_dev).abs();
        beta = candidate;
        eta = cand_eta;
        deviance = cand_dev;
        trace.push(deviance);

        let beta_slice: Vec<f64> = beta.iter().copied().collect();
        let score_norm = score(Family::BinomialLogit, design, response, weights, &beta_slice)
            .iter()
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt();
        // The relative floor only matters when heavy weights push the
        // deviance beyond what an absolute 1e-8 change can resolve.
        let saturated = change <= 1e-14 * deviance;
        if change < DEVIANCE_TOL || score_norm < SCORE_TOL || saturated {
            // A deviance that stops moving because it has collapsed towards
            // zero on a subset of rows is divergence, not convergence.
            if let Some(i) = (0..n).find(|&i| {
                let mu = logistic(eta[i]);
                weights[i] > 0.0 && mu * (1.0 - mu) < 1e-10
            }) {
                return Err(Error::Separation(format!(
                    "fitted probability of row {} reached {:e} at iteration {iter}",
                    i + 1,
                    logistic(eta[i])
                )));
            }
            let beta_slice = polish(design, response, weights, beta_slice, score_norm)?;
            let eta = &design.matrix * DVector::from_column_slice(&beta_slice);
            for i in 0..n {
                let mu = logistic(eta[i]).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                working_w[i] = weights[i] * mu * (1.0 - mu);
            }
            let (_, inv_info) = weighted_solve(design, &working_z, &working_w)?;
            let deviance = binomial_deviance(&eta, response, weights);
            return Ok(GlmFit {
                coefficients: beta_slice,
                names: design.names.clone(),
                covariance: inv_info,
                converged: true,
                iterations: iter,
                deviance,
                family: Family::BinomialLogit,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        trace,
    })
}

/// Extra Newton steps after the deviance test fires. With rare outcomes the
/// deviance flattens well before the coefficients settle; steps are kept only
/// while they shrink the score norm.
fn polish(design: &Design, response: &[f64], weights: &[f64], mut beta: Vec<f64>, mut norm: f64) -> Result<Vec<f64>> {
    let n = design.nrows();
    let mut working_w = vec![0.0; n];
    let mut working_z = vec![0.0; n];
    for _ in 0..POLISH_STEPS {
        if norm < SCORE_TOL * 1e-3 {
            break;
        }
        let eta = &design.matrix * DVector::from_column_slice(&beta);
        for i in 0..n {
            let mu = logistic(eta[i]).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            let v = mu * (1.0 - mu);
            working_w[i] = weights[i] * v;
            working_z[i] = eta[i] + (response[i] - mu) / v;
        }
        let (candidate, _) = weighted_solve(design, &working_z, &working_w)?;
        let candidate: Vec<f64> = candidate.iter().copied().collect();
        let cand_norm = score(Family::BinomialLogit, design, response, weights, &candidate)
            .iter()
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt();
        if !(cand_norm < norm) {
            break;
        }
        beta = candidate;
        norm = cand_norm;
    }
    Ok(beta)
}

/// Inverse-logit of the linear predictor, kept strictly inside (0, 1).
pub fn predict_prob(fit: &GlmFit, design: &Design) -> Result<Vec<f64>> {
    if fit.family != Family::BinomialLogit {
        return Err(Error::Config("predict_prob requires a binomial fit".into()));
    }
    Ok(fit
        .linear_predictor(design)?
        .into_iter()
        .map(|eta| logistic(eta).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
        .collect())
}

/// CR0 cluster-robust covariance `B M B`, where `B` is the inverse weighted
/// information and `M` sums outer products of per-cluster score totals.
pub fn sandwich_covariance<K: Hash + Eq + Clone>(
    fit: &GlmFit,
    design: &Design,
    response: &[f64],
    weights: &[f64],
    clusters: &[K],
) -> Result<DMatrix<f64>> {
    check_inputs(design, response, weights)?;
    if clusters.len() != design.nrows() {
        return Err(Error::Dimension(format!(
            "{} cluster ids for {} rows",
            clusters.len(),
            design.nrows()
        )));
    }
    let eta = fit.linear_predictor(design)?;
    let n = design.nrows();
    let p = design.ncols();
    let mut info_w = vec![0.0; n];
    let mut resid = vec![0.0; n];
    for i in 0..n {
        let (mu, v) = match fit.family {
            Family::Gaussian => (eta[i], 1.0),
            Family::BinomialLogit => {
                let mu = logistic(eta[i]);
                (mu, mu * (1.0 - mu))
            }
        };
        info_w[i] = weights[i] * v;
        resid[i] = weights[i] * (response[i] - mu);
    }
    let (_, bread) = weighted_solve(design, &vec![0.0; n], &info_w)?;

    // Cluster totals in first-appearance order.
    let mut slot: HashMap<K, usize> = HashMap::new();
    let mut totals: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        let k = *slot.entry(clusters[i].clone()).or_insert_with(|| {
            totals.push(DVector::zeros(p));
            totals.len() - 1
        });
        if resid[i] != 0.0 {
            totals[k].axpy(resid[i], &design.matrix.row(i).transpose(), 1.0);
        }
    }
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for s in &totals {
        meat.ger(1.0, s, s, 1.0);
    }
    let cov = &bread * meat * &bread;
    // Symmetrize away rounding.
    Ok((&cov + cov.transpose()) * 0.5)
}

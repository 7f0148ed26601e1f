//! Sandwich covariance of the outcome coefficients when the weights are
//! estimated.
//!
//! The propensity models (or stratum proportions) and the weighted outcome
//! regression are stacked as one system of per-unit estimating equations
//! `psi_i(theta)`. The covariance is `A^-1 B A^-T` with `A` the Jacobian of
//! `sum_i psi_i` (central differences) and `B = sum_i psi_i psi_i'`.
//! Stratum boundaries, truncation caps and off-support exclusions are held
//! fixed.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::data::VariableRoles;
use crate::design::{ModelTerms, Term};
use crate::error::{Error, Result};
use crate::estimator::{AugmentedDataset, OutcomeFit, PipelineConfig, WeightedData};
use crate::glm::{logistic, Family, GlmFit};
use crate::propensity::{ScoreBasis, StratumAssignment};
use crate::weights::WeightMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Link {
    Logit,
    Identity,
}

/// `psi_i = 1{i in members} g_i (r_i - h(g_i' alpha))`.
#[derive(Debug, Clone)]
struct Block {
    link: Link,
    /// Row `i` is unit `i`'s regressors (zero where the block is unused).
    g: DMatrix<f64>,
    members: Vec<usize>,
    response: Vec<f64>,
    estimate: Vec<f64>,
}

impl Block {
    fn dim(&self) -> usize {
        self.g.ncols()
    }

    fn predict(&self, i: usize, alpha: &[f64]) -> f64 {
        let eta: f64 = (0..self.dim()).map(|j| self.g[(i, j)] * alpha[j]).sum();
        match self.link {
            Link::Logit => logistic(eta),
            Link::Identity => eta,
        }
    }

    fn logistic(g: DMatrix<f64>, fit: &GlmFit, members: Vec<usize>, response: Vec<f64>) -> Self {
        Self {
            link: Link::Logit,
            g,
            members,
            response,
            estimate: fit.coefficients.to_vec(),
        }
    }

    /// Within-stratum means of `response` over `members`. Strata without
    /// members get no parameter; units in them predict 0.
    fn proportions(strata: &StratumAssignment, n: usize, members: Vec<usize>, response: Vec<f64>) -> Self {
        let by_unit = strata.by_unit(n);
        let mut sums: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for &i in &members {
            if let Some(s) = by_unit[i] {
                let e = sums.entry(s).or_insert((0.0, 0.0));
                e.0 += 1.0;
                e.1 += response[i];
            }
        }
        let column: BTreeMap<usize, usize> = sums.keys().enumerate().map(|(j, &s)| (s, j)).collect();
        let mut g = DMatrix::zeros(n, column.len());
        for (i, s) in by_unit.iter().enumerate() {
            if let Some(&j) = s.and_then(|s| column.get(&s)) {
                g[(i, j)] = 1.0;
            }
        }
        let members = members.into_iter().filter(|&i| by_unit[i].is_some()).collect();
        Self {
            link: Link::Identity,
            g,
            members,
            response,
            estimate: sums.values().map(|(c, s)| s / c).collect(),
        }
    }
}

/// Which block supplies which score in the weight formulas.
#[derive(Debug, Clone, Copy)]
struct Roles {
    treatment: Option<usize>,
    /// Control-arm and treated-arm mediator blocks.
    mediator: Option<(usize, usize)>,
}

struct System<'a> {
    blocks: Vec<Block>,
    roles: Roles,
    aug: &'a AugmentedDataset,
    outcome: &'a OutcomeFit,
    family: Family,
    mediator: Vec<u8>,
    /// `f_r` at the estimates, per augmented row.
    base: Vec<f64>,
    n: usize,
}

impl<'a> System<'a> {
    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.blocks.len() + 1);
        let mut k = 0;
        for b in &self.blocks {
            out.push(k);
            k += b.dim();
        }
        out.push(k);
        out
    }

    fn dim(&self) -> usize {
        self.offsets()[self.blocks.len()] + self.outcome.design.ncols()
    }

    fn theta_hat(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.blocks.iter().flat_map(|b| b.estimate.iter().copied()).collect();
        t.extend(self.outcome.fit.coefficients.iter());
        t
    }

    /// Nuisance-dependent part of a row's weight.
    fn factor(&self, theta: &[f64], off: &[usize], unit: usize, a: u8, d: u8) -> f64 {
        let pred = |b: usize| self.blocks[b].predict(unit, &theta[off[b]..off[b + 1]]);
        let pa = self.roles.treatment.map(pred);
        match (a, d) {
            (0, _) => pa.map_or(1.0, |p| 1.0 / (1.0 - p)),
            (_, 1) => pa.map_or(1.0, |p| 1.0 / p),
            _ => {
                let ratio = self.roles.mediator.map_or(1.0, |(c, t)| {
                    let (q0, q1) = (pred(c), pred(t));
                    if self.mediator[unit] == 1 {
                        q0 / q1
                    } else {
                        (1.0 - q0) / (1.0 - q1)
                    }
                });
                ratio * pa.map_or(1.0, |p| 1.0 / p)
            }
        }
    }

    /// Per-unit estimating functions, `n x dim`.
    fn psi(&self, theta: &[f64]) -> DMatrix<f64> {
        let off = self.offsets();
        let mut out = DMatrix::zeros(self.n, self.dim());
        for (b, block) in self.blocks.iter().enumerate() {
            let alpha = &theta[off[b]..off[b + 1]];
            for &i in &block.members {
                let r = block.response[i] - block.predict(i, alpha);
                for j in 0..block.dim() {
                    out[(i, off[b] + j)] += block.g[(i, j)] * r;
                }
            }
        }
        let go = off[self.blocks.len()];
        let gamma = &theta[go..];
        let x = &self.outcome.design.matrix;
        for (k, row) in self.aug.rows.iter().enumerate() {
            let w = self.outcome.weights[k] * self.factor(theta, &off, row.unit, row.a, row.d) / self.base[k];
            let eta: f64 = (0..gamma.len()).map(|j| x[(k, j)] * gamma[j]).sum();
            let mu = match self.family {
                Family::Gaussian => eta,
                Family::BinomialLogit => logistic(eta),
            };
            let r = w * (self.outcome.response[k] - mu);
            for j in 0..gamma.len() {
                out[(row.unit, go + j)] += x[(k, j)] * r;
            }
        }
        out
    }

    fn covariance(&self) -> Result<DMatrix<f64>> {
        let theta = self.theta_hat();
        let p = theta.len();
        let psi = self.psi(&theta);
        let meat = psi.transpose() * &psi;
        let total = |t: &[f64]| -> DVector<f64> {
            let m = self.psi(t);
            DVector::from_fn(p, |j, _| m.column(j).sum())
        };
        let mut jac = DMatrix::zeros(p, p);
        for j in 0..p {
            let h = 1e-6 * theta[j].abs().max(1.0);
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += h;
            down[j] -= h;
            let col = (total(&up) - total(&down)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let inv = jac.try_inverse().ok_or_else(|| Error::SingularDesign {
            columns: vec!["stacked estimating equations".into()],
        })?;
        let full = &inv * meat * inv.transpose();
        let go = self.offsets()[self.blocks.len()];
        let k = self.outcome.design.ncols();
        let v = full.view((go, go), (k, k)).into_owned();
        Ok((&v + v.transpose()) * 0.5)
    }
}

fn find(strata: &[StratumAssignment], basis: ScoreBasis) -> Result<&StratumAssignment> {
    strata
        .iter()
        .find(|s| s.basis == Some(basis))
        .ok_or_else(|| Error::Config(format!("no strata on {basis:?}")))
}

fn mediator_terms(config: &PipelineConfig, roles: &VariableRoles, include_l: bool) -> ModelTerms {
    let mut terms = config
        .propensity
        .mediator_terms
        .clone()
        .unwrap_or_else(|| ModelTerms::main_effects(&roles.pretreatment));
    if include_l {
        terms = terms.with(&ModelTerms {
            terms: roles.posttreatment.iter().map(|c| Term::Main(c.clone())).collect(),
        });
    }
    terms
}

/// Covariance of the outcome coefficients accounting for the estimation
/// of every score and proportion that enters the weights.
pub fn stacked_covariance(
    w: &WeightedData,
    roles: &VariableRoles,
    config: &PipelineConfig,
    aug: &AugmentedDataset,
    outcome: &OutcomeFit,
) -> Result<DMatrix<f64>> {
    let ds = &w.dataset;
    let n = ds.len();
    let a: Vec<f64> = ds.treatment.iter().map(|&v| v as f64).collect();
    let z: Vec<f64> = ds.mediator.iter().map(|&v| v as f64).collect();
    let controls = ds.arm(0);
    let treated = ds.arm(1);
    let mut blocks = Vec::new();

    let treatment = if config.propensity.randomized {
        None
    } else if config.iptw_method == WeightMethod::Stratified {
        blocks.push(Block::proportions(find(&w.strata, ScoreBasis::ThetaA)?, n, (0..n).collect(), a));
        Some(blocks.len() - 1)
    } else {
        let fit = w
            .fits
            .treatment
            .fit
            .as_ref()
            .ok_or_else(|| Error::Config("treatment model was not fitted".into()))?;
        let terms = config
            .propensity
            .treatment_terms
            .clone()
            .unwrap_or_else(|| ModelTerms::main_effects(&roles.pretreatment));
        blocks.push(Block::logistic(terms.design(ds)?.matrix, fit, (0..n).collect(), a));
        Some(blocks.len() - 1)
    };

    match config.weight_method {
        WeightMethod::Parametric => {
            let g0 = mediator_terms(config, roles, false).design(ds)?.matrix;
            blocks.push(Block::logistic(g0.clone(), &w.fits.control_mediator.fit, controls, z.clone()));
            let (g1, fit) = if config.use_post_treatment {
                let m = w
                    .fits
                    .treated_mediator_l
                    .as_ref()
                    .ok_or_else(|| Error::Config("mediator model given L was not fitted".into()))?;
                (mediator_terms(config, roles, true).design(ds)?.matrix, &m.fit)
            } else {
                (g0, &w.fits.treated_mediator.fit)
            };
            blocks.push(Block::logistic(g1, fit, treated, z));
        }
        WeightMethod::Stratified => {
            blocks.push(Block::proportions(find(&w.strata, ScoreBasis::ThetaZ0)?, n, controls, z.clone()));
            let basis = if config.use_post_treatment {
                ScoreBasis::ThetaZ1L
            } else {
                ScoreBasis::ThetaZ1
            };
            blocks.push(Block::proportions(find(&w.strata, basis)?, n, treated, z));
        }
    }
    let k = blocks.len();
    let mut system = System {
        blocks,
        roles: Roles {
            treatment,
            mediator: Some((k - 2, k - 1)),
        },
        aug,
        outcome,
        family: config.family,
        mediator: ds.mediator.clone(),
        base: Vec::new(),
        n,
    };
    let theta = system.theta_hat();
    let off = system.offsets();
    system.base = aug
        .rows
        .iter()
        .map(|r| system.factor(&theta, &off, r.unit, r.a, r.d))
        .collect();
    if system.base.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::Config("weight factor not positive at the estimates".into()));
    }
    system.covariance()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{cluster_covariance, fit_outcome, AugRow};

    #[test]
    fn no_nuisance_reduces_to_cluster_sandwich() {
        let mut rows = Vec::new();
        let ys = [1.0, 2.0, 4.0, 3.0, 5.0, 0.5, 2.5];
        for (u, &y) in ys.iter().enumerate() {
            let a = u8::from(u >= 3);
            rows.push(AugRow { unit: u, a, d: 0, y, w: 1.0 + 0.1 * u as f64 });
            if a == 1 {
                rows.push(AugRow { unit: u, a, d: 1, y: y + 0.3 * u as f64, w: 2.0 - 0.2 * u as f64 });
            }
        }
        let aug = AugmentedDataset { rows, exclusions: vec![] };
        let of = fit_outcome(&aug, Family::Gaussian, None, &[]).unwrap();
        let reference = cluster_covariance(&aug, &of).unwrap();
        let system = System {
            blocks: Vec::new(),
            roles: Roles { treatment: None, mediator: None },
            aug: &aug,
            outcome: &of,
            family: Family::Gaussian,
            mediator: vec![0; ys.len()],
            base: vec![1.0; aug.rows.len()],
            n: ys.len(),
        };
        let v = system.covariance().unwrap();
        assert!((&v - &reference).abs().max() < 1e-8 * reference.abs().max());
    }
}

//! Inverse-probability-of-treatment weights and ratio-of-mediator-probability
//! weights, parametric or through propensity strata.
//!
//! `W_(aZa')` targets units with `A = a` and reweights them so that their
//! mediator distribution matches the one they would have had under `a'`:
//!
//! ```text
//! W_(aZa') = q_a'(Z = z | X) / q_a(Z = z | X [, L]) * p(A = a) / p(A = a | X)
//! ```
//!
//! With `a = a'` the mediator ratio is 1 and the weight is plain IPTW.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::propensity::{PropensityScores, StratumAssignment};
use crate::stats::{effective_sample_size, quantile, weighted_mean};

/// Counterfactual mean `E(Y_(a Z_a'))` a weight set targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Estimand {
    pub a: u8,
    pub a_prime: u8,
}

impl Estimand {
    pub const W00: Estimand = Estimand { a: 0, a_prime: 0 };
    pub const W10: Estimand = Estimand { a: 1, a_prime: 0 };
    pub const W11: Estimand = Estimand { a: 1, a_prime: 1 };
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "W_({}Z{})", self.a, self.a_prime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Parametric,
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    MeanOneWithinArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub unit: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub estimand: Estimand,
    /// Indexed by unit; `None` for units outside arm `estimand.a` and for exclusions.
    pub weights: Vec<Option<f64>>,
    pub method: WeightMethod,
    pub exclusions: Vec<Exclusion>,
    pub normalization: Normalization,
}

impl WeightSet {
    pub fn get(&self, i: usize) -> Option<f64> {
        self.weights[i]
    }

    /// Weights of all non-excluded targeted units, in unit order.
    pub fn values(&self) -> Vec<f64> {
        self.weights.iter().flatten().copied().collect()
    }

    pub fn is_excluded(&self, i: usize) -> bool {
        self.exclusions.iter().any(|e| e.unit == i)
    }

    /// Rescales weights to mean one over the targeted arm.
    pub fn normalized(mut self) -> Self {
        let v = self.values();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        if m > 0.0 {
            for w in self.weights.iter_mut().flatten() {
                *w /= m;
            }
        }
        self.normalization = Normalization::MeanOneWithinArm;
        self
    }

    /// Caps weights at their `q` quantile.
    pub fn truncated(mut self, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) || q == 0.0 {
            return Err(Error::Config(format!("truncation quantile must be in (0, 1], got {q}")));
        }
        let v = self.values();
        if v.is_empty() {
            return Ok(self);
        }
        let cap = quantile(&v, q);
        for w in self.weights.iter_mut().flatten() {
            *w = w.min(cap);
        }
        Ok(self)
    }
}

fn positivity_check(dataset: &Dataset, what: &str, bad: Vec<usize>) -> Result<()> {
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Positivity {
            what: what.to_string(),
            units: bad.into_iter().map(|i| dataset.ids[i].clone()).collect(),
        })
    }
}

fn interior(p: f64) -> bool {
    p > 0.0 && p < 1.0
}

/// `p(A = arm) / p(A = arm | X)` for the units in `arm`.
pub fn iptw(dataset: &Dataset, scores: &PropensityScores, arm: u8) -> Result<WeightSet> {
    let members = dataset.arm(arm);
    positivity_check(
        dataset,
        &format!("treatment propensity for arm A={arm} is 0 or 1"),
        members
            .iter()
            .copied()
            .filter(|&i| !interior(scores.theta_a[i]))
            .collect(),
    )?;
    let marginal = scores.marginal(arm);
    let mut weights = vec![None; dataset.len()];
    for &i in &members {
        weights[i] = Some(marginal / scores.treatment_prob(i, arm));
    }
    Ok(WeightSet {
        estimand: Estimand { a: arm, a_prime: arm },
        weights,
        method: WeightMethod::Parametric,
        exclusions: Vec::new(),
        normalization: Normalization::None,
    })
}

/// IPTW through strata of the treatment propensity: unit `i` in arm `a`
/// and stratum `s` gets `p(A = a) * n_s / n_{s, A = a}`.
pub fn iptw_stratified(dataset: &Dataset, strata: &StratumAssignment, arm: u8) -> Result<WeightSet> {
    let by_unit = strata.by_unit(dataset.len());
    let mut total = vec![0usize; strata.effective + 1];
    let mut in_arm = vec![0usize; strata.effective + 1];
    for (&u, &s) in strata.units.iter().zip(&strata.strata) {
        total[s] += 1;
        if dataset.treatment[u] == arm {
            in_arm[s] += 1;
        }
    }
    let marginal = dataset.count_arm(arm) as f64 / dataset.len() as f64;
    let mut weights = vec![None; dataset.len()];
    for i in dataset.arm(arm) {
        let s = by_unit[i].ok_or_else(|| {
            Error::Config(format!("treatment strata do not cover unit {}", dataset.ids[i]))
        })?;
        weights[i] = Some(marginal * total[s] as f64 / in_arm[s] as f64);
    }
    Ok(WeightSet {
        estimand: Estimand { a: arm, a_prime: arm },
        weights,
        method: WeightMethod::Stratified,
        exclusions: Vec::new(),
        normalization: Normalization::None,
    })
}

/// Parametric `W_(aZa')` from fitted (or true) propensity scores.
///
/// With `use_l` the denominator is the treated-arm mediator score that
/// conditions on post-treatment covariates; only `(a, a') = (1, 0)` is
/// supported in that case.
pub fn rmpw_parametric(
    dataset: &Dataset,
    scores: &PropensityScores,
    a: u8,
    a_prime: u8,
    use_l: bool,
) -> Result<WeightSet> {
    if a > 1 || a_prime > 1 {
        return Err(Error::Config("treatment values must be 0 or 1".into()));
    }
    if use_l && (a, a_prime) != (1, 0) {
        return Err(Error::Config(
            "post-treatment weights are defined only for W_(1Z0)".into(),
        ));
    }
    if a == a_prime && !use_l {
        return iptw(dataset, scores, a);
    }
    let theta_l = if use_l {
        Some(scores.theta_z1_l.as_ref().ok_or_else(|| {
            Error::Config("post-treatment weights need theta_Z1 given L".into())
        })?)
    } else {
        None
    };
    let factor = iptw(dataset, scores, a)?;
    let members = dataset.arm(a);

    // Probability that unit i would have a mediator equal to its observed z
    // under arm `arm` (optionally conditioning on L for the treated arm).
    let ratio_parts = |i: usize| -> Result<(f64, f64)> {
        let num_p1 = if a_prime == 0 { scores.theta_z0[i] } else { scores.theta_z1[i] };
        let den_p1 = match (a, theta_l) {
            (1, Some(l)) => l[i].ok_or_else(|| {
                Error::Config(format!("theta_Z1 given L missing for treated unit {}", dataset.ids[i]))
            })?,
            (1, None) => scores.theta_z1[i],
            _ => scores.theta_z0[i],
        };
        Ok((num_p1, den_p1))
    };

    let mut bad = Vec::new();
    let mut weights = vec![None; dataset.len()];
    for &i in &members {
        let (num_p1, den_p1) = ratio_parts(i)?;
        if !interior(den_p1) {
            bad.push(i);
            continue;
        }
        let ratio = match dataset.mediator[i] {
            1 => num_p1 / den_p1,
            0 => (1.0 - num_p1) / (1.0 - den_p1),
            z => return Err(Error::Config(format!("mediator value {z} outside {{0,1}}"))),
        };
        weights[i] = Some(ratio * factor.weights[i].expect("iptw covers arm"));
    }
    positivity_check(
        dataset,
        &format!("mediator propensity in the denominator of {} is 0 or 1", Estimand { a, a_prime }),
        bad,
    )?;
    Ok(WeightSet {
        estimand: Estimand { a, a_prime },
        weights,
        method: WeightMethod::Parametric,
        exclusions: Vec::new(),
        normalization: Normalization::None,
    })
}

/// Per-stratum mediator proportions within one arm.
fn cell_proportions(dataset: &Dataset, strata: &StratumAssignment, arm: u8) -> Vec<(usize, usize)> {
    let mut cells = vec![(0usize, 0usize); strata.effective + 1];
    for (&u, &s) in strata.units.iter().zip(&strata.strata) {
        if dataset.treatment[u] == arm {
            cells[s].0 += 1;
            cells[s].1 += dataset.mediator[u] as usize;
        }
    }
    cells
}

/// Stratified `W_(1Z0)` for treated units.
///
/// With `p0(s)` the share of `Z = 1` among control units in S0-stratum `s`
/// and `p1(t)` the share among treated units in S1-stratum `t`, a treated
/// unit with `Z = 1` gets `p0 / p1` and one with `Z = 0` gets
/// `(1 - p0) / (1 - p1)`, times the IPTW factor if one is given.
///
/// Treated units are excluded (and listed) when their S0 stratum holds no
/// control units or when every treated unit of their S1 stratum shares the
/// same mediator value.
pub fn rmpw_stratified(
    dataset: &Dataset,
    s0: &StratumAssignment,
    s1: &StratumAssignment,
    iptw_factor: Option<&WeightSet>,
) -> Result<WeightSet> {
    let n = dataset.len();
    let s0_unit = s0.by_unit(n);
    let s1_unit = s1.by_unit(n);
    let control = cell_proportions(dataset, s0, 0);
    let treated = cell_proportions(dataset, s1, 1);

    let mut weights = vec![None; n];
    let mut exclusions = Vec::new();
    for i in dataset.arm(1) {
        let (s, t) = match (s0_unit[i], s1_unit[i]) {
            (Some(s), Some(t)) => (s, t),
            _ => {
                return Err(Error::Config(format!(
                    "stratification does not cover treated unit {}",
                    dataset.ids[i]
                )))
            }
        };
        let exclude = |reason: String| Exclusion {
            unit: i,
            id: dataset.ids[i].clone(),
            reason,
        };
        let (n0, n0_z1) = control[s];
        let (n1, n1_z1) = treated[t];
        if n0 == 0 {
            exclusions.push(exclude(format!("no control units in S0 stratum {s}")));
            continue;
        }
        if n1_z1 == 0 || n1_z1 == n1 {
            exclusions.push(exclude(format!(
                "all treated units in S1 stratum {t} have Z={}",
                u8::from(n1_z1 == n1)
            )));
            continue;
        }
        let factor = match iptw_factor {
            Some(f) => match f.get(i) {
                Some(w) => w,
                None => {
                    exclusions.push(exclude("excluded from the IPTW factor".into()));
                    continue;
                }
            },
            None => 1.0,
        };
        let p0 = n0_z1 as f64 / n0 as f64;
        let p1 = n1_z1 as f64 / n1 as f64;
        let ratio = if dataset.mediator[i] == 1 {
            p0 / p1
        } else {
            (1.0 - p0) / (1.0 - p1)
        };
        weights[i] = Some(ratio * factor);
    }
    Ok(WeightSet {
        estimand: Estimand::W10,
        weights,
        method: WeightMethod::Stratified,
        exclusions,
        normalization: Normalization::None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub estimand: String,
    pub n: usize,
    pub excluded: usize,
    pub sum: f64,
    pub ess: f64,
    pub min: f64,
    pub mean: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub max: f64,
}

pub fn summarize(ws: &WeightSet) -> WeightSummary {
    let v = ws.values();
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        if sorted.is_empty() {
            f64::NAN
        } else {
            crate::stats::quantile_sorted(&sorted, p)
        }
    };
    WeightSummary {
        estimand: ws.estimand.to_string(),
        n: v.len(),
        excluded: ws.exclusions.len(),
        sum: v.iter().sum(),
        ess: effective_sample_size(&v),
        min: sorted.first().copied().unwrap_or(f64::NAN),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        q50: q(0.5),
        q90: q(0.9),
        q99: q(0.99),
        max: sorted.last().copied().unwrap_or(f64::NAN),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediatorBalance {
    /// Mean of Z among treated units weighted by `W_(1Z0)`.
    pub treated_weighted: f64,
    pub control_unweighted: f64,
    /// Mean of Z among control units weighted by `W_(0Z0)`.
    pub control_weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBalance {
    pub column: String,
    pub pooled: f64,
    pub control_unweighted: f64,
    pub treated_unweighted: f64,
    pub control_weighted: f64,
    pub treated_weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub mediator: MediatorBalance,
    pub covariates: Vec<CovariateBalance>,
    pub weights: Vec<WeightSummary>,
}

fn weighted_over(xs: &[f64], ws: &WeightSet) -> f64 {
    let (v, w): (Vec<f64>, Vec<f64>) = ws
        .weights
        .iter()
        .enumerate()
        .filter_map(|(i, w)| w.map(|w| (xs[i], w)))
        .unzip();
    weighted_mean(&v, &w)
}

fn arm_mean(dataset: &Dataset, xs: &[f64], arm: u8) -> f64 {
    let v: Vec<f64> = dataset.arm(arm).into_iter().map(|i| xs[i]).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mediator balance under `W_(1Z0)`, covariate balance under IPTW, and
/// weight-distribution summaries.
pub fn balance_diagnostics(dataset: &Dataset, w00: &WeightSet, w10: &WeightSet, w11: &WeightSet) -> BalanceReport {
    let z: Vec<f64> = dataset.mediator.iter().map(|&z| z as f64).collect();
    let mediator = MediatorBalance {
        treated_weighted: weighted_over(&z, w10),
        control_unweighted: arm_mean(dataset, &z, 0),
        control_weighted: weighted_over(&z, w00),
    };
    let covariates = dataset
        .covariate_names
        .iter()
        .zip(&dataset.covariates)
        .map(|(name, x)| CovariateBalance {
            column: name.clone(),
            pooled: x.iter().sum::<f64>() / x.len() as f64,
            control_unweighted: arm_mean(dataset, x, 0),
            treated_unweighted: arm_mean(dataset, x, 1),
            control_weighted: weighted_over(x, w00),
            treated_weighted: weighted_over(x, w11),
        })
        .collect();
    BalanceReport {
        mediator,
        covariates,
        weights: [w00, w10, w11].into_iter().map(summarize).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propensity::stratify;

    fn one_unit(a: u8, z: u8) -> Dataset {
        Dataset::from_columns(vec![a, 1 - a], vec![z, z], vec![0.0; 2], vec![], vec![], None).unwrap()
    }

    fn scores(theta_a: f64, z0: f64, z1: f64, marginal: f64) -> PropensityScores {
        PropensityScores {
            theta_a: vec![theta_a; 2],
            theta_z0: vec![z0; 2],
            theta_z1: vec![z1; 2],
            theta_z1_l: None,
            marginal_pa1: marginal,
        }
    }

    #[test]
    fn iptw_examples() {
        let ds = one_unit(1, 1);
        let w = iptw(&ds, &scores(0.25, 0.5, 0.5, 0.5), 1).unwrap();
        assert_eq!(w.get(0), Some(2.0));
        assert_eq!(w.get(1), None);
        let w = iptw(&ds, &scores(0.4, 0.5, 0.5, 0.4), 1).unwrap();
        assert_eq!(w.get(0), Some(1.0));
        let ds0 = one_unit(0, 1);
        let w = iptw(&ds0, &scores(0.2, 0.5, 0.5, 0.4), 0).unwrap();
        assert!((w.get(0).unwrap() - 0.75).abs() < 1e-15);
        let err = iptw(&ds, &scores(1.0, 0.5, 0.5, 0.5), 1).unwrap_err();
        assert!(matches!(err, Error::Positivity { .. }));
    }

    #[test]
    fn parametric_ratio_examples() {
        let s = scores(0.5, 0.4, 0.8, 0.5);
        let w = rmpw_parametric(&one_unit(1, 1), &s, 1, 0, false).unwrap();
        assert!((w.get(0).unwrap() - 0.5).abs() < 1e-15);
        let w = rmpw_parametric(&one_unit(1, 0), &s, 1, 0, false).unwrap();
        assert!((w.get(0).unwrap() - 3.0).abs() < 1e-12);
        let same = scores(0.5, 0.3, 0.3, 0.5);
        let w = rmpw_parametric(&one_unit(1, 0), &same, 1, 0, false).unwrap();
        let i = iptw(&one_unit(1, 0), &same, 1).unwrap();
        assert_eq!(w.values(), i.values());
    }

    #[test]
    fn parametric_denominator_positivity() {
        let s = scores(0.5, 0.4, 1.0, 0.5);
        let err = rmpw_parametric(&one_unit(1, 1), &s, 1, 0, false).unwrap_err();
        assert!(matches!(err, Error::Positivity { units, .. } if units == vec!["1".to_string()]));
        let err = rmpw_parametric(&one_unit(1, 1), &scores(0.5, 0.4, 0.5, 0.5), 0, 1, true).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn control_side_weight_is_symmetric() {
        // W_(0Z1) for a control unit with Z=1: theta_Z1 / theta_Z0.
        let s = scores(0.5, 0.4, 0.8, 0.5);
        let w = rmpw_parametric(&one_unit(0, 1), &s, 0, 1, false).unwrap();
        assert!((w.get(0).unwrap() - 2.0).abs() < 1e-15);
    }

    /// 10 control and 10 treated units in one stratum: 4 of the controls and
    /// 8 of the treated have Z=1.
    fn one_stratum() -> Dataset {
        let mut a = vec![0u8; 10];
        a.extend(vec![1u8; 10]);
        let z: Vec<u8> = (0..20).map(|i| u8::from(if i < 10 { i < 4 } else { i < 18 })).collect();
        Dataset::from_columns(a, z, vec![0.0; 20], vec![], vec![], None).unwrap()
    }

    #[test]
    fn stratified_count_ratio() {
        let ds = one_stratum();
        let s = stratify(&vec![0.5; 20], 5).unwrap();
        let w = rmpw_stratified(&ds, &s, &s, None).unwrap();
        assert!((w.get(10).unwrap() - 0.5).abs() < 1e-15);
        assert!((w.get(19).unwrap() - 3.0).abs() < 1e-12);
        assert!(w.get(0).is_none());
        assert!(w.exclusions.is_empty());
    }

    #[test]
    fn stratified_excludes_degenerate_treated_stratum() {
        let mut ds = one_stratum();
        for i in 10..20 {
            ds.mediator[i] = 1;
        }
        let s = stratify(&vec![0.5; 20], 2).unwrap();
        let w = rmpw_stratified(&ds, &s, &s, None).unwrap();
        assert_eq!(w.exclusions.len(), 10);
        assert!(w.values().is_empty());
        assert!(w.exclusions[0].reason.contains("have Z=1"));
    }

    #[test]
    fn normalization_and_truncation() {
        let ds = one_stratum();
        let s = stratify(&vec![0.5; 20], 5).unwrap();
        let w = rmpw_stratified(&ds, &s, &s, None).unwrap();
        let nw = w.clone().normalized();
        let v = nw.values();
        assert!((v.iter().sum::<f64>() / v.len() as f64 - 1.0).abs() < 1e-12);
        let tw = w.truncated(0.5).unwrap();
        assert!(tw.values().iter().all(|&x| x <= 0.5 + 1e-15));
    }

    #[test]
    fn balance_ess_examples() {
        let mk = |a: u8, vals: Vec<Option<f64>>| WeightSet {
            estimand: Estimand { a, a_prime: a },
            weights: vals,
            method: WeightMethod::Parametric,
            exclusions: vec![],
            normalization: Normalization::None,
        };
        let mut w = vec![None; 20];
        w[0] = Some(2.0);
        w[1] = Some(0.0);
        w[2] = Some(0.0);
        w[3] = Some(0.0);
        let ws = mk(0, w);
        assert_eq!(summarize(&ws).ess, 1.0);
        let ones = mk(0, (0..20).map(|i| if i < 4 { Some(1.0) } else { None }).collect());
        assert_eq!(summarize(&ones).ess, 4.0);
    }
}

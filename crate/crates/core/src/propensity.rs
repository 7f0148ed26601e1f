//! Treatment and mediator propensity models, score stratification and
//! common-support diagnostics.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, VariableRoles};
use crate::design::{ModelTerms, Term};
use crate::error::{Error, Result};
use crate::glm::{fit_logistic, predict_prob, GlmFit};

pub const DEFAULT_STRATA: usize = 5;
pub const MAX_STRATA: usize = 20;

/// Model forms for the propensity fits. `None` means main effects of the
/// pretreatment covariates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropensityConfig {
    pub randomized: bool,
    #[serde(default)]
    pub treatment_terms: Option<ModelTerms>,
    #[serde(default)]
    pub mediator_terms: Option<ModelTerms>,
}

impl PropensityConfig {
    fn treatment_terms(&self, roles: &VariableRoles) -> ModelTerms {
        self.treatment_terms
            .clone()
            .unwrap_or_else(|| ModelTerms::main_effects(&roles.pretreatment))
    }

    fn mediator_terms(&self, roles: &VariableRoles) -> ModelTerms {
        self.mediator_terms
            .clone()
            .unwrap_or_else(|| ModelTerms::main_effects(&roles.pretreatment))
    }
}

/// Per-unit scores. Vectors are indexed by unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityScores {
    /// pr(A=1 | X).
    pub theta_a: Vec<f64>,
    /// pr(Z=1 | A=0, X), predicted for every unit from the control-arm fit.
    pub theta_z0: Vec<f64>,
    /// pr(Z=1 | A=1, X), predicted for every unit from the treated-arm fit.
    pub theta_z1: Vec<f64>,
    /// pr(Z=1 | A=1, X, L), treated units only.
    pub theta_z1_l: Option<Vec<Option<f64>>>,
    pub marginal_pa1: f64,
}

impl PropensityScores {
    /// pr(A=arm | X) for unit `i`.
    pub fn treatment_prob(&self, i: usize, arm: u8) -> f64 {
        if arm == 1 {
            self.theta_a[i]
        } else {
            1.0 - self.theta_a[i]
        }
    }

    pub fn marginal(&self, arm: u8) -> f64 {
        if arm == 1 {
            self.marginal_pa1
        } else {
            1.0 - self.marginal_pa1
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreatmentPropensity {
    pub theta_a: Vec<f64>,
    /// Absent in randomized mode.
    pub fit: Option<GlmFit>,
    pub marginal_pa1: f64,
}

/// Logistic fit of A on `[1, X]`, or the sample proportion when treatment is randomized.
pub fn fit_treatment_propensity(
    dataset: &Dataset,
    roles: &VariableRoles,
    config: &PropensityConfig,
) -> Result<TreatmentPropensity> {
    let n = dataset.len();
    let marginal_pa1 = dataset.marginal_treated();
    if marginal_pa1 == 0.0 || marginal_pa1 == 1.0 {
        return Err(Error::Assumption(format!(
            "treatment arm A={} is empty (nonzero treatment probability violated)",
            if marginal_pa1 == 0.0 { 1 } else { 0 }
        )));
    }
    if config.randomized {
        return Ok(TreatmentPropensity {
            theta_a: vec![marginal_pa1; n],
            fit: None,
            marginal_pa1,
        });
    }
    let terms = config.treatment_terms(roles);
    if terms.terms.is_empty() {
        return Err(Error::Config(
            "treatment propensity needs pretreatment covariates unless treatment is randomized".into(),
        ));
    }
    let design = terms.design(dataset)?;
    let y: Vec<f64> = dataset.treatment.iter().map(|&a| a as f64).collect();
    let fit = fit_logistic(&design, &y, &vec![1.0; n]).map_err(|e| annotate(e, "treatment model"))?;
    let theta_a = predict_prob(&fit, &design)?;
    Ok(TreatmentPropensity {
        theta_a,
        fit: Some(fit),
        marginal_pa1,
    })
}

#[derive(Debug, Clone)]
pub struct MediatorPropensity {
    pub arm: u8,
    pub include_l: bool,
    /// `Some` for every unit the score is defined for.
    pub scores: Vec<Option<f64>>,
    pub fit: GlmFit,
}

fn annotate(err: Error, what: &str) -> Error {
    match err {
        Error::Separation(msg) => Error::Separation(format!("{what}: {msg}")),
        Error::SingularDesign { columns } => Error::SingularDesign {
            columns: columns.into_iter().map(|c| format!("{what}: {c}")).collect(),
        },
        other => other,
    }
}

/// Logistic fit of Z within treatment arm `arm`.
///
/// Without L the model uses `[1, X]` and is evaluated for all units. With
/// L (treated arm only) it uses `[1, X, L]` and is evaluated for treated units.
pub fn fit_mediator_propensity(
    dataset: &Dataset,
    roles: &VariableRoles,
    config: &PropensityConfig,
    arm: u8,
    include_l: bool,
) -> Result<MediatorPropensity> {
    if include_l && arm != 1 {
        return Err(Error::Config(
            "post-treatment covariates can only enter the treated-arm mediator model".into(),
        ));
    }
    if include_l && roles.posttreatment.is_empty() {
        return Err(Error::Config("post-treatment adjustment requested without post-treatment columns".into()));
    }
    let members = dataset.arm(arm);
    if members.is_empty() {
        return Err(Error::Assumption(format!(
            "treatment arm A={arm} is empty (nonzero treatment probability violated)"
        )));
    }
    let mut terms = config.mediator_terms(roles);
    if include_l {
        terms = terms.with(&ModelTerms {
            terms: roles.posttreatment.iter().map(|c| Term::Main(c.clone())).collect(),
        });
    }
    let design = terms.design(dataset)?;
    let within = design.select_rows(&members);
    let z: Vec<f64> = members.iter().map(|&i| dataset.mediator[i] as f64).collect();
    let what = format!("mediator model in arm A={arm}");
    let fit = fit_logistic(&within, &z, &vec![1.0; members.len()]).map_err(|e| match e {
        Error::Separation(msg) => {
            let ones = z.iter().filter(|&&v| v == 1.0).count();
            let diag = if ones == 0 || ones == z.len() {
                format!(
                    "; every unit in arm A={arm} has Z={} (nonzero mediator probability violated)",
                    if ones == 0 { 0 } else { 1 }
                )
            } else {
                String::new()
            };
            Error::Separation(format!("{what}: {msg}{diag}"))
        }
        other => annotate(other, &what),
    })?;
    let scores = if include_l {
        let treated_scores = predict_prob(&fit, &within)?;
        let mut s = vec![None; dataset.len()];
        for (&i, p) in members.iter().zip(treated_scores) {
            s[i] = Some(p);
        }
        s
    } else {
        predict_prob(&fit, &design)?.into_iter().map(Some).collect()
    };
    Ok(MediatorPropensity {
        arm,
        include_l,
        scores,
        fit,
    })
}

/// Everything the weighting step needs, plus the fits for reporting.
#[derive(Debug, Clone)]
pub struct FittedPropensities {
    pub scores: PropensityScores,
    pub treatment: TreatmentPropensity,
    pub control_mediator: MediatorPropensity,
    pub treated_mediator: MediatorPropensity,
    pub treated_mediator_l: Option<MediatorPropensity>,
}

pub fn estimate_scores(
    dataset: &Dataset,
    roles: &VariableRoles,
    config: &PropensityConfig,
    use_post_treatment: bool,
) -> Result<FittedPropensities> {
    let treatment = fit_treatment_propensity(dataset, roles, config)?;
    let control_mediator = fit_mediator_propensity(dataset, roles, config, 0, false)?;
    let treated_mediator = fit_mediator_propensity(dataset, roles, config, 1, false)?;
    let treated_mediator_l = if use_post_treatment {
        Some(fit_mediator_propensity(dataset, roles, config, 1, true)?)
    } else {
        None
    };
    let unwrap_all = |m: &MediatorPropensity| m.scores.iter().map(|s| s.unwrap_or(f64::NAN)).collect();
    let scores = PropensityScores {
        theta_a: treatment.theta_a.clone(),
        theta_z0: unwrap_all(&control_mediator),
        theta_z1: unwrap_all(&treated_mediator),
        theta_z1_l: treated_mediator_l.as_ref().map(|m| m.scores.clone()),
        marginal_pa1: treatment.marginal_pa1,
    };
    Ok(FittedPropensities {
        scores,
        treatment,
        control_mediator,
        treated_mediator,
        treated_mediator_l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreBasis {
    ThetaA,
    ThetaZ0,
    ThetaZ1,
    ThetaZ1L,
}

/// Quantile strata over a set of units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumAssignment {
    /// Unit indices covered, in input order.
    pub units: Vec<usize>,
    /// 1-based stratum per covered unit, aligned with `units`.
    pub strata: Vec<usize>,
    pub cutpoints: Vec<f64>,
    pub requested: usize,
    pub effective: usize,
    pub basis: Option<ScoreBasis>,
    pub merges: Vec<String>,
}

impl StratumAssignment {
    pub fn with_basis(mut self, basis: ScoreBasis) -> Self {
        self.basis = Some(basis);
        self
    }

    /// Stratum lookup by unit index; `None` for uncovered units.
    pub fn by_unit(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (&u, &s) in self.units.iter().zip(&self.strata) {
            out[u] = Some(s);
        }
        out
    }
}

/// Splits `scores` into `k` quantile strata.
///
/// The j-th cutpoint is the lower empirical j/k quantile, and a unit falls in
/// stratum `1 + #{cutpoints < score}`, so ties go to the lower stratum.
/// Strata left empty (from ties) are merged into the one below.
pub fn stratify(scores: &[f64], k: usize) -> Result<StratumAssignment> {
    stratify_units(&(0..scores.len()).collect::<Vec<_>>(), scores, k)
}

/// [`stratify`] over a subset of units; `scores` is indexed by unit.
pub fn stratify_units(units: &[usize], scores: &[f64], k: usize) -> Result<StratumAssignment> {
    if !(2..=MAX_STRATA).contains(&k) {
        return Err(Error::Config(format!("strata count must be in 2..={MAX_STRATA}, got {k}")));
    }
    if units.is_empty() {
        return Err(Error::Config("cannot stratify an empty set of units".into()));
    }
    let vals: Vec<f64> = units.iter().map(|&u| scores[u]).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite propensity score".into()));
    }
    let mut sorted = vals.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let raw_cuts: Vec<f64> = (1..k)
        .map(|j| sorted[((j * n).div_ceil(k)).max(1) - 1])
        .collect();
    let raw: Vec<usize> = vals
        .iter()
        .map(|&v| 1 + raw_cuts.iter().filter(|&&c| c < v).count())
        .collect();

    let mut counts = vec![0usize; k + 1];
    for &s in &raw {
        counts[s] += 1;
    }
    // Relabel nonempty strata contiguously; an empty stratum j is absorbed
    // by its lower neighbour, which drops cutpoint j-1.
    let mut relabel = vec![0usize; k + 1];
    let mut next = 0;
    let mut cutpoints = Vec::new();
    let mut merges = Vec::new();
    for s in 1..=k {
        if counts[s] > 0 {
            next += 1;
            if next > 1 {
                cutpoints.push(raw_cuts[s - 2]);
            }
        } else {
            merges.push(format!("stratum {s} of {k} empty; merged into stratum {}", next.max(1)));
        }
        relabel[s] = next.max(1);
    }
    let strata = raw.iter().map(|&s| relabel[s]).collect();
    Ok(StratumAssignment {
        units: units.to_vec(),
        strata,
        cutpoints,
        requested: k,
        effective: next,
        basis: None,
        merges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFlag {
    pub basis: ScoreBasis,
    /// Arm whose units were out of range.
    pub arm: u8,
    /// Score range of the opposite arm.
    pub opposite_range: (f64, f64),
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmptyCell {
    pub basis: Option<ScoreBasis>,
    pub stratum: usize,
    pub arm: u8,
    pub mediator: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub score_flags: Vec<ScoreFlag>,
    pub empty_cells: Vec<EmptyCell>,
}

impl SupportReport {
    pub fn flagged_units(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.score_flags.iter().flat_map(|f| f.ids.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Flags units whose score falls outside the opposite arm's score range,
/// and stratum-by-arm-by-mediator cells with no units.
pub fn overlap_report(
    scores: &PropensityScores,
    dataset: &Dataset,
    strata: &[&StratumAssignment],
) -> SupportReport {
    let mut report = SupportReport::default();
    let bases = [
        (ScoreBasis::ThetaA, &scores.theta_a),
        (ScoreBasis::ThetaZ0, &scores.theta_z0),
        (ScoreBasis::ThetaZ1, &scores.theta_z1),
    ];
    for (basis, s) in bases {
        for arm in 0..2u8 {
            let range = dataset
                .arm(1 - arm)
                .iter()
                .map(|&i| s[i])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let ids: Vec<String> = dataset
                .arm(arm)
                .into_iter()
                .filter(|&i| s[i] < range.0 || s[i] > range.1)
                .map(|i| dataset.ids[i].clone())
                .collect();
            if !ids.is_empty() {
                report.score_flags.push(ScoreFlag {
                    basis,
                    arm,
                    opposite_range: range,
                    ids,
                });
            }
        }
    }
    for assignment in strata {
        let mut counts = vec![[[0usize; 2]; 2]; assignment.effective + 1];
        for (&u, &s) in assignment.units.iter().zip(&assignment.strata) {
            counts[s][dataset.treatment[u] as usize][dataset.mediator[u] as usize] += 1;
        }
        let arms: Vec<u8> = match assignment.basis {
            // Treated-only stratification has no control cells to inspect.
            Some(ScoreBasis::ThetaZ1L) => vec![1],
            _ => vec![0, 1],
        };
        for (s, cell) in counts.iter().enumerate().skip(1) {
            for &arm in &arms {
                for z in 0..2u8 {
                    if cell[arm as usize][z as usize] == 0 {
                        report.empty_cells.push(EmptyCell {
                            basis: assignment.basis,
                            stratum: s,
                            arm,
                            mediator: z,
                        });
                    }
                }
            }
        }
    }
    report
}

//! Augmented-data outcome model for natural direct and indirect effects,
//! robust and bootstrap inference, the end-to-end pipeline, and two
//! regression baselines.
//!
//! The augmented data hold every control unit once and every treated unit
//! twice (`D = 0` and `D = 1`). With weights `W_(0Z0)`, `W_(1Z0)` and
//! `W_(1Z1)` on the three groups, the weighted fit of
//! `Y ~ 1 + A + A*D` gives `gamma0 = E(Y_(0Z0))`, `gamma1 = NDE` and
//! `gamma2 = NIE`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{validate, Dataset, VariableRoles, ValidationReport};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::glm::{fit_logistic, fit_wls, logistic, sandwich_covariance, Family, GlmFit};
use crate::propensity::{
    estimate_scores, fit_treatment_propensity, FittedPropensities, overlap_report, stratify, stratify_units,
    PropensityConfig, PropensityScores, ScoreBasis, StratumAssignment, SupportReport,
    DEFAULT_STRATA,
};
use crate::rng::{par_replicates, substream};
use crate::stacked::stacked_covariance;
use crate::stats::{quantile_sorted, sd, weighted_mean, Z_975};
use crate::weights::{
    balance_diagnostics, iptw, iptw_stratified, rmpw_parametric, rmpw_stratified, BalanceReport,
    Estimand, Exclusion, WeightMethod, WeightSet,
};

/// Minimum bootstrap replicate count.
pub const MIN_BOOTSTRAP_REPS: usize = 100;
/// Largest tolerated share of failed bootstrap replicates.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugRow {
    pub unit: usize,
    pub a: u8,
    pub d: u8,
    pub y: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub rows: Vec<AugRow>,
    pub exclusions: Vec<Exclusion>,
}

impl AugmentedDataset {
    pub fn group(&self, a: u8, d: u8) -> impl Iterator<Item = &AugRow> {
        self.rows.iter().filter(move |r| r.a == a && r.d == d)
    }

    /// Weighted mean outcome of one `(A, D)` group.
    pub fn group_mean(&self, a: u8, d: u8) -> f64 {
        let (y, w): (Vec<f64>, Vec<f64>) = self.group(a, d).map(|r| (r.y, r.w)).unzip();
        weighted_mean(&y, &w)
    }

    /// Multiplies every weight in group `(a, d)` by `factor`.
    pub fn scale_group(&mut self, a: u8, d: u8, factor: f64) {
        for r in self.rows.iter_mut().filter(|r| r.a == a && r.d == d) {
            r.w *= factor;
        }
    }

    pub fn design(&self) -> Design {
        let rows: Vec<Vec<f64>> = self
            .rows
            .iter()
            .map(|r| vec![1.0, r.a as f64, (r.a * r.d) as f64])
            .collect();
        let mut d = Design::from_rows(&rows).expect("three columns");
        d.names = vec!["gamma0".into(), "A".into(), "A:D".into()];
        d
    }
}

/// Stacks controls (`W_(0Z0)`), treated with `D = 0` (`W_(1Z0)`) and a
/// duplicate of the treated with `D = 1` (`W_(1Z1)`). A treated unit
/// excluded from either treated weight set loses both rows.
pub fn build_augmented(
    dataset: &Dataset,
    w00: &WeightSet,
    w10: &WeightSet,
    w11: &WeightSet,
) -> Result<AugmentedDataset> {
    let expect = |ws: &WeightSet, e: Estimand| {
        if ws.estimand == e {
            Ok(())
        } else {
            Err(Error::Config(format!("expected {e} weights, got {}", ws.estimand)))
        }
    };
    expect(w00, Estimand::W00)?;
    expect(w10, Estimand::W10)?;
    expect(w11, Estimand::W11)?;
    let n = dataset.len();
    if w00.weights.len() != n || w10.weights.len() != n || w11.weights.len() != n {
        return Err(Error::Dimension("weight sets do not match the dataset".into()));
    }
    let missing = |ws: &WeightSet, i: usize| {
        Error::Config(format!("{} has no weight for unit {}", ws.estimand, dataset.ids[i]))
    };

    let mut exclusions: Vec<Exclusion> = Vec::new();
    for e in w00.exclusions.iter().chain(&w10.exclusions).chain(&w11.exclusions) {
        if !exclusions.iter().any(|x| x.unit == e.unit) {
            exclusions.push(e.clone());
        }
    }
    let dropped = |i: usize| exclusions.iter().any(|e| e.unit == i);

    let mut rows = Vec::with_capacity(n + dataset.count_arm(1));
    for i in dataset.arm(0) {
        if dropped(i) {
            continue;
        }
        let w = w00.get(i).ok_or_else(|| missing(w00, i))?;
        rows.push(AugRow { unit: i, a: 0, d: 0, y: dataset.outcome[i], w });
    }
    let treated: Vec<usize> = dataset.arm(1).into_iter().filter(|&i| !dropped(i)).collect();
    for &i in &treated {
        let w = w10.get(i).ok_or_else(|| missing(w10, i))?;
        rows.push(AugRow { unit: i, a: 1, d: 0, y: dataset.outcome[i], w });
    }
    for &i in &treated {
        let w = w11.get(i).ok_or_else(|| missing(w11, i))?;
        rows.push(AugRow { unit: i, a: 1, d: 1, y: dataset.outcome[i], w });
    }
    Ok(AugmentedDataset { rows, exclusions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum SeMethod {
    None,
    Robust,
    Bootstrap { reps: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

impl Estimate {
    fn point(estimate: f64) -> Self {
        Self { estimate, se: None, ci: None }
    }

    fn normal(estimate: f64, se: f64) -> Self {
        Self {
            estimate,
            se: Some(se),
            ci: Some((estimate - Z_975 * se, estimate + Z_975 * se)),
        }
    }

    pub fn covers(&self, truth: f64) -> Option<bool> {
        self.ci.map(|(lo, hi)| lo <= truth && truth <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimates {
    pub family: Family,
    pub inference: SeMethod,
    /// Outcome-model coefficients (log odds for the binomial family).
    pub gamma0: Estimate,
    pub gamma1_nd: Estimate,
    pub gamma2_ni: Estimate,
    /// Weighted counterfactual means E(Y_(0Z0)), E(Y_(1Z0)), E(Y_(1Z1)).
    pub mean_0z0: Estimate,
    pub mean_1z0: Estimate,
    pub mean_1z1: Estimate,
    /// Natural effects on the mean (risk-difference) scale.
    pub nde: Estimate,
    pub nie: Estimate,
    pub total: Estimate,
    pub rows: usize,
    pub excluded_units: usize,
    pub bootstrap_failures: Option<usize>,
    pub warnings: Vec<String>,
}

/// `estimate`, `g' V g` for linear combinations of the three coefficients.
fn combo(estimate: f64, grad: [f64; 3], cov: Option<&nalgebra::DMatrix<f64>>) -> Estimate {
    match cov {
        Some(v) => {
            let mut var = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    var += grad[i] * v[(i, j)] * grad[j];
                }
            }
            Estimate::normal(estimate, var.max(0.0).sqrt())
        }
        None => Estimate::point(estimate),
    }
}

fn summarize_fit(
    aug: &AugmentedDataset,
    fit: &GlmFit,
    cov: Option<&nalgebra::DMatrix<f64>>,
    family: Family,
    inference: SeMethod,
) -> EffectEstimates {
    let g = &fit.coefficients;
    let se = |j: usize| cov.map(|v| v[(j, j)].max(0.0).sqrt());
    let coef = |j: usize| match se(j) {
        Some(s) => Estimate::normal(g[j], s),
        None => Estimate::point(g[j]),
    };
    let (m00, m10, m11, nde, nie, total) = match family {
        Family::Gaussian => {
            let m00 = combo(g[0], [1.0, 0.0, 0.0], cov);
            let m10 = combo(g[0] + g[1], [1.0, 1.0, 0.0], cov);
            let m11 = combo(g[0] + g[1] + g[2], [1.0, 1.0, 1.0], cov);
            let nde = coef(1);
            let nie = coef(2);
            let total = combo(g[1] + g[2], [0.0, 1.0, 1.0], cov);
            (m00, m10, m11, nde, nie, total)
        }
        Family::BinomialLogit => {
            // Risk-difference scale from the fitted proportions; delta-method SEs.
            let p00 = logistic(g[0]);
            let p10 = logistic(g[0] + g[1]);
            let p11 = logistic(g[0] + g[1] + g[2]);
            let (v00, v10, v11) = (p00 * (1.0 - p00), p10 * (1.0 - p10), p11 * (1.0 - p11));
            let m00 = combo(p00, [v00, 0.0, 0.0], cov);
            let m10 = combo(p10, [v10, v10, 0.0], cov);
            let m11 = combo(p11, [v11, v11, v11], cov);
            let nde = combo(p10 - p00, [v10 - v00, v10, 0.0], cov);
            let nie = combo(p11 - p10, [v11 - v10, v11 - v10, v11], cov);
            let total = combo(p11 - p00, [v11 - v00, v11, v11], cov);
            (m00, m10, m11, nde, nie, total)
        }
    };
    EffectEstimates {
        family,
        inference,
        gamma0: coef(0),
        gamma1_nd: coef(1),
        gamma2_ni: coef(2),
        mean_0z0: m00,
        mean_1z0: m10,
        mean_1z1: m11,
        nde,
        nie,
        total,
        rows: aug.rows.len(),
        excluded_units: aug.exclusions.len(),
        bootstrap_failures: None,
        warnings: Vec::new(),
    }
}

/// The weighted outcome regression on the augmented rows.
#[derive(Debug, Clone)]
pub struct OutcomeFit {
    pub fit: GlmFit,
    pub design: Design,
    pub response: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Fits `Y ~ 1 + A + A:D`, plus main effects of `covariates` (taken from
/// `dataset`) when given.
pub fn fit_outcome(
    aug: &AugmentedDataset,
    family: Family,
    dataset: Option<&Dataset>,
    covariates: &[String],
) -> Result<OutcomeFit> {
    for (a, d, label) in [(0, 0, "control"), (1, 0, "treated D=0"), (1, 1, "treated D=1")] {
        if aug.group(a, d).next().is_none() {
            return Err(Error::Assumption(format!("augmented group {label} is empty")));
        }
        if aug.group(a, d).map(|r| r.w).sum::<f64>() <= 0.0 {
            return Err(Error::Assumption(format!("augmented group {label} has zero total weight")));
        }
    }
    let mut design = aug.design();
    if !covariates.is_empty() {
        let dataset = dataset.ok_or_else(|| Error::Config("outcome covariates need the dataset".into()))?;
        let cols = covariates
            .iter()
            .map(|c| dataset.column(c).ok_or_else(|| Error::MissingColumn(c.clone())))
            .collect::<Result<Vec<_>>>()?;
        let m = nalgebra::DMatrix::from_fn(aug.rows.len(), 3 + cols.len(), |i, j| {
            if j < 3 {
                design.matrix[(i, j)]
            } else {
                cols[j - 3][aug.rows[i].unit]
            }
        });
        let mut names = design.names.clone();
        names.extend(covariates.iter().cloned());
        design = Design::new(m, names)?;
    }
    let response: Vec<f64> = aug.rows.iter().map(|r| r.y).collect();
    let weights: Vec<f64> = aug.rows.iter().map(|r| r.w).collect();
    let fit = match family {
        Family::Gaussian => fit_wls(&design, &response, &weights)?,
        Family::BinomialLogit => {
            if let Some(r) = aug.rows.iter().find(|r| r.y != 0.0 && r.y != 1.0) {
                return Err(Error::NotBinary {
                    role: "outcome",
                    column: "outcome".into(),
                    row: r.unit + 1,
                    value: r.y.to_string(),
                });
            }
            fit_logistic(&design, &response, &weights)?
        }
    };
    Ok(OutcomeFit {
        fit,
        design,
        response,
        weights,
    })
}

/// Turns an outcome fit and a covariance for its first three coefficients
/// into effect estimates.
pub fn summarize_outcome(
    aug: &AugmentedDataset,
    of: &OutcomeFit,
    cov: Option<&nalgebra::DMatrix<f64>>,
    family: Family,
    inference: SeMethod,
) -> EffectEstimates {
    let cov = cov.map(|v| v.view((0, 0), (3, 3)).into_owned());
    let mut est = summarize_fit(aug, &of.fit, cov.as_ref(), family, inference);
    if of.design.ncols() > 3 {
        est.warnings.push(format!(
            "outcome model adjusted for {}; gamma coefficients are covariate-adjusted contrasts",
            of.design.names[3..].join(", ")
        ));
    }
    est
}

/// Cluster-robust covariance of the outcome coefficients with the weights
/// treated as known. Clusters are original units.
pub fn cluster_covariance(aug: &AugmentedDataset, of: &OutcomeFit) -> Result<nalgebra::DMatrix<f64>> {
    let clusters: Vec<usize> = aug.rows.iter().map(|r| r.unit).collect();
    sandwich_covariance(&of.fit, &of.design, &of.response, &of.weights, &clusters)
}

/// Weighted fit of `Y ~ 1 + A + A:D` on the augmented data. Robust SEs
/// cluster the two rows of each treated unit and treat the weights as
/// known; the pipeline instead accounts for estimated weights.
pub fn estimate_effects(aug: &AugmentedDataset, family: Family, se: SeMethod) -> Result<EffectEstimates> {
    let of = fit_outcome(aug, family, None, &[])?;
    let cov = match se {
        SeMethod::Robust => Some(cluster_covariance(aug, &of)?),
        _ => None,
    };
    let inference = if cov.is_some() { SeMethod::Robust } else { SeMethod::None };
    Ok(summarize_outcome(aug, &of, cov.as_ref(), family, inference))
}

/// Everything that defines one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub weight_method: WeightMethod,
    pub strata: usize,
    pub propensity: PropensityConfig,
    pub use_post_treatment: bool,
    /// How the `p(A=a)/p(A=a|X)` factor is formed when treatment is not
    /// randomized. Fixed at 1 under randomization.
    pub iptw_method: WeightMethod,
    pub family: Family,
    pub se: SeMethod,
    pub truncate_quantile: Option<f64>,
    pub normalize: bool,
    pub exclude_off_support: bool,
    /// Main-effect covariates added to the outcome model (gaussian only).
    #[serde(default)]
    pub outcome_covariates: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            weight_method: WeightMethod::Stratified,
            strata: DEFAULT_STRATA,
            propensity: PropensityConfig::default(),
            use_post_treatment: false,
            iptw_method: WeightMethod::Parametric,
            family: Family::Gaussian,
            se: SeMethod::Robust,
            truncate_quantile: None,
            normalize: false,
            exclude_off_support: false,
            outcome_covariates: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn check(&self, roles: &VariableRoles) -> Result<()> {
        roles.check(self.propensity.randomized)?;
        if !(2..=crate::propensity::MAX_STRATA).contains(&self.strata) {
            return Err(Error::Config(format!("strata must be in 2..=20, got {}", self.strata)));
        }
        if self.use_post_treatment && roles.posttreatment.is_empty() {
            return Err(Error::Config(
                "post-treatment adjustment requires post-treatment columns".into(),
            ));
        }
        if let SeMethod::Bootstrap { reps, .. } = self.se {
            if reps < MIN_BOOTSTRAP_REPS {
                return Err(Error::Config(format!(
                    "bootstrap needs at least {MIN_BOOTSTRAP_REPS} replicates, got {reps}"
                )));
            }
        }
        if !self.outcome_covariates.is_empty() && self.family != Family::Gaussian {
            return Err(Error::Config("outcome-model covariates are supported for the gaussian family only".into()));
        }
        Ok(())
    }
}

/// Everything computed before the outcome model.
#[derive(Debug, Clone)]
pub struct WeightedData {
    pub validation: ValidationReport,
    /// The analysed units (the input minus any off-support exclusions).
    pub dataset: Dataset,
    pub scores: PropensityScores,
    pub fits: FittedPropensities,
    pub strata: Vec<StratumAssignment>,
    pub w00: WeightSet,
    pub w10: WeightSet,
    pub w11: WeightSet,
    pub support: SupportReport,
    pub balance: BalanceReport,
    /// Ids removed up front by the opt-in common-support exclusion.
    pub off_support_excluded: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub weighted: WeightedData,
    pub augmented: AugmentedDataset,
    pub estimates: EffectEstimates,
}

/// Builds the three weight sets from scores according to `config`.
pub fn build_weights(
    dataset: &Dataset,
    scores: &PropensityScores,
    config: &PipelineConfig,
) -> Result<(WeightSet, WeightSet, WeightSet, Vec<StratumAssignment>)> {
    let randomized = config.propensity.randomized;
    let mut strata = Vec::new();
    let (w00, w11) = if config.iptw_method == WeightMethod::Stratified && !randomized {
        let sa = stratify(&scores.theta_a, config.strata)?.with_basis(ScoreBasis::ThetaA);
        let pair = (iptw_stratified(dataset, &sa, 0)?, iptw_stratified(dataset, &sa, 1)?);
        strata.push(sa);
        pair
    } else {
        (iptw(dataset, scores, 0)?, iptw(dataset, scores, 1)?)
    };
    let w10 = match config.weight_method {
        WeightMethod::Parametric => rmpw_parametric(dataset, scores, 1, 0, config.use_post_treatment)?,
        WeightMethod::Stratified => {
            let s0 = stratify(&scores.theta_z0, config.strata)?.with_basis(ScoreBasis::ThetaZ0);
            let s1 = if config.use_post_treatment {
                let l = scores
                    .theta_z1_l
                    .as_ref()
                    .ok_or_else(|| Error::Config("theta_Z1 given L not estimated".into()))?;
                let treated = dataset.arm(1);
                let dense: Vec<f64> = l.iter().map(|s| s.unwrap_or(f64::NAN)).collect();
                stratify_units(&treated, &dense, config.strata)?.with_basis(ScoreBasis::ThetaZ1L)
            } else {
                stratify(&scores.theta_z1, config.strata)?.with_basis(ScoreBasis::ThetaZ1)
            };
            let factor = if randomized { None } else { Some(&w11) };
            let w = rmpw_stratified(dataset, &s0, &s1, factor)?;
            strata.push(s0);
            strata.push(s1);
            w
        }
    };
    let finish = |ws: WeightSet| -> Result<WeightSet> {
        let ws = match config.truncate_quantile {
            Some(q) => ws.truncated(q)?,
            None => ws,
        };
        Ok(if config.normalize { ws.normalized() } else { ws })
    };
    Ok((finish(w00)?, finish(w10)?, finish(w11)?, strata))
}

fn check_dataset(dataset: &Dataset, roles: &VariableRoles, family: Family) -> Result<ValidationReport> {
    let validation = validate(dataset, roles);
    if let Some(issue) = validation.fatal() {
        return Err(Error::Assumption(issue.describe()));
    }
    if family == Family::BinomialLogit {
        if let Some(i) = dataset.outcome.iter().position(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::NotBinary {
                role: "outcome",
                column: roles.outcome.clone(),
                row: i + 1,
                value: dataset.outcome[i].to_string(),
            });
        }
    }
    Ok(validation)
}

/// validate → propensities → strata/weights → diagnostics.
pub fn prepare_weights(dataset: &Dataset, roles: &VariableRoles, config: &PipelineConfig) -> Result<WeightedData> {
    config.check(roles)?;
    let mut validation = check_dataset(dataset, roles, config.family)?;
    let mut fitted = estimate_scores(dataset, roles, &config.propensity, config.use_post_treatment)?;

    let mut working = dataset.clone();
    let mut off_support_excluded = Vec::new();
    if config.exclude_off_support {
        let flags = overlap_report(&fitted.scores, dataset, &[]).flagged_units();
        if !flags.is_empty() {
            let keep: Vec<usize> = (0..dataset.len())
                .filter(|&i| flags.binary_search(&dataset.ids[i]).is_err())
                .collect();
            working = dataset.subset(&keep);
            validation = check_dataset(&working, roles, config.family)?;
            fitted = estimate_scores(&working, roles, &config.propensity, config.use_post_treatment)?;
            off_support_excluded = flags;
        }
    }
    let scores = fitted.scores.clone();
    let (w00, w10, w11, strata) = build_weights(&working, &scores, config)?;
    let support = overlap_report(&scores, &working, &strata.iter().collect::<Vec<_>>());
    let balance = balance_diagnostics(&working, &w00, &w10, &w11);
    Ok(WeightedData {
        validation,
        dataset: working,
        scores,
        fits: fitted,
        strata,
        w00,
        w10,
        w11,
        support,
        balance,
        off_support_excluded,
    })
}

/// The full pipeline: weights, augmentation, outcome model, inference.
pub fn run_pipeline(dataset: &Dataset, roles: &VariableRoles, config: &PipelineConfig) -> Result<PipelineOutput> {
    run_pipeline_threads(dataset, roles, config, 0)
}

/// [`run_pipeline`] with an explicit worker count for the bootstrap
/// (0 = all cores). Results do not depend on `threads`.
pub fn run_pipeline_threads(
    dataset: &Dataset,
    roles: &VariableRoles,
    config: &PipelineConfig,
    threads: usize,
) -> Result<PipelineOutput> {
    let weighted = prepare_weights(dataset, roles, config)?;
    let w = &weighted;
    let augmented = build_augmented(&w.dataset, &w.w00, &w.w10, &w.w11)?;
    let of = fit_outcome(&augmented, config.family, Some(&w.dataset), &config.outcome_covariates)?;
    let cov = match config.se {
        SeMethod::Robust => Some(stacked_covariance(w, roles, config, &augmented, &of)?),
        _ => None,
    };
    let inference = if cov.is_some() { SeMethod::Robust } else { SeMethod::None };
    let mut estimates = summarize_outcome(&augmented, &of, cov.as_ref(), config.family, inference);
    if let SeMethod::Bootstrap { reps, seed } = config.se {
        let point = estimates;
        estimates = bootstrap_ci(dataset, roles, config, reps, seed, threads)?;
        estimates.warnings = point.warnings;
    }
    Ok(PipelineOutput {
        weighted,
        augmented,
        estimates,
    })
}

/// Quantities tracked per bootstrap replicate.
fn replicate_vector(e: &EffectEstimates) -> [f64; 9] {
    [
        e.gamma0.estimate,
        e.gamma1_nd.estimate,
        e.gamma2_ni.estimate,
        e.mean_0z0.estimate,
        e.mean_1z0.estimate,
        e.mean_1z1.estimate,
        e.nde.estimate,
        e.nie.estimate,
        e.total.estimate,
    ]
}

/// Draws one arm-stratified resample of unit indices.
fn resample<R: Rng>(dataset: &Dataset, rng: &mut R) -> Vec<usize> {
    let mut idx = Vec::with_capacity(dataset.len());
    for arm in 0..2u8 {
        let members = dataset.arm(arm);
        for _ in 0..members.len() {
            idx.push(members[rng.random_range(0..members.len())]);
        }
    }
    idx
}

/// Nonparametric bootstrap over original units (arm sizes preserved). The
/// whole pipeline is re-run per replicate; SEs are replicate SDs and CIs
/// are 2.5/97.5 percentiles.
pub fn bootstrap_ci(
    dataset: &Dataset,
    roles: &VariableRoles,
    config: &PipelineConfig,
    reps: usize,
    seed: u64,
    threads: usize,
) -> Result<EffectEstimates> {
    if reps < MIN_BOOTSTRAP_REPS {
        return Err(Error::Config(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_REPS} replicates, got {reps}"
        )));
    }
    let inner = PipelineConfig {
        se: SeMethod::None,
        ..config.clone()
    };
    let full = run_pipeline(dataset, roles, &inner)?.estimates;

    let results: Vec<Option<[f64; 9]>> = par_replicates(reps, threads, |r| {
        let mut rng = substream(seed, r as u64);
        let idx = resample(dataset, &mut rng);
        let mut sample = dataset.subset(&idx);
        sample.ids = idx.iter().enumerate().map(|(k, &i)| format!("{}#{k}", dataset.ids[i])).collect();
        run_pipeline(&sample, roles, &inner)
            .ok()
            .map(|out| replicate_vector(&out.estimates))
    });
    let ok: Vec<[f64; 9]> = results.iter().flatten().copied().collect();
    let failed = reps - ok.len();
    if failed as f64 > MAX_FAILURE_SHARE * reps as f64 {
        return Err(Error::ExcessiveFailures { failed, reps });
    }
    let point = replicate_vector(&full);
    let mut out = [Estimate::point(0.0); 9];
    for k in 0..9 {
        let mut v: Vec<f64> = ok.iter().map(|r| r[k]).collect();
        v.sort_by(f64::total_cmp);
        out[k] = Estimate {
            estimate: point[k],
            se: Some(sd(&v)),
            ci: Some((quantile_sorted(&v, 0.025), quantile_sorted(&v, 0.975))),
        };
    }
    Ok(EffectEstimates {
        inference: SeMethod::Bootstrap { reps, seed },
        gamma0: out[0],
        gamma1_nd: out[1],
        gamma2_ni: out[2],
        mean_0z0: out[3],
        mean_1z0: out[4],
        mean_1z1: out[5],
        nde: out[6],
        nie: out[7],
        total: out[8],
        bootstrap_failures: Some(failed),
        ..full
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAnalysisFit {
    /// A → Z.
    pub d: f64,
    /// Z → Y given A.
    pub b: f64,
    /// Direct path A → Y given Z.
    pub c: f64,
    pub indirect: f64,
    /// Coefficient of A when Y is regressed on A alone (plus X if adjusted).
    pub total: f64,
    pub adjusted_for: Vec<String>,
    /// Outcome is 0/1, so the fits are linear-probability models.
    pub linear_probability: bool,
}

fn column_design(dataset: &Dataset, cols: &[(&str, Vec<f64>)], covariates: &[String]) -> Result<Design> {
    let mut names = vec!["(intercept)".to_string()];
    let mut data: Vec<Vec<f64>> = Vec::new();
    for (name, c) in cols {
        names.push(name.to_string());
        data.push(c.clone());
    }
    for x in covariates {
        names.push(x.clone());
        data.push(
            dataset
                .column(x)
                .ok_or_else(|| Error::MissingColumn(x.clone()))?
                .to_vec(),
        );
    }
    let n = dataset.len();
    let m = nalgebra::DMatrix::from_fn(n, names.len(), |i, j| if j == 0 { 1.0 } else { data[j - 1][i] });
    Design::new(m, names)
}

/// Product-of-coefficients mediation: `Z = a + dA`, `Y = a' + bZ + cA`.
pub fn path_analysis_baseline(dataset: &Dataset, roles: &VariableRoles, adjust: bool) -> Result<PathAnalysisFit> {
    let adj: Vec<String> = if adjust { roles.pretreatment.clone() } else { Vec::new() };
    let a: Vec<f64> = dataset.treatment.iter().map(|&v| v as f64).collect();
    let z: Vec<f64> = dataset.mediator.iter().map(|&v| v as f64).collect();
    let ones = vec![1.0; dataset.len()];
    let dz = column_design(dataset, &[("A", a.clone())], &adj)?;
    let d = fit_wls(&dz, &z, &ones)?.coefficients[1];
    let dy = column_design(dataset, &[("Z", z.clone()), ("A", a.clone())], &adj)?;
    let fy = fit_wls(&dy, &dataset.outcome, &ones)?;
    let (b, c) = (fy.coefficients[1], fy.coefficients[2]);
    let total = fit_wls(&dz, &dataset.outcome, &ones)?.coefficients[1];
    Ok(PathAnalysisFit {
        d,
        b,
        c,
        indirect: b * d,
        total,
        adjusted_for: adj,
        linear_probability: dataset.outcome.iter().all(|&y| y == 0.0 || y == 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PetersenFit {
    pub nde: f64,
    pub nie: f64,
    /// IPTW estimate of the total effect.
    pub total: f64,
    pub beta_a: f64,
    pub beta_az: f64,
    /// Coefficients of `A:X_j`, aligned with `covariates`.
    pub beta_ax: Vec<f64>,
    pub covariates: Vec<String>,
    pub mean_x: Vec<f64>,
    pub mean_z0: f64,
    pub mean_z0_x: Vec<f64>,
}

/// Modified-regression estimator of the natural direct effect.
///
/// Step 1 regresses Y on `[1, A, X, Z, A·Z, A·X]`; step 2 regresses Z on
/// `[1, A, X]` and predicts at `A = 0`. With `CDE(z, x) = β_A + β_AZ z +
/// β_AX·x`, averaging over Z0 and X gives `β_A + β_AZ Ê(Z0) + β_AX·Ê(X)`.
/// The indirect effect is the IPTW total effect minus that.
pub fn petersen_baseline(dataset: &Dataset, roles: &VariableRoles, randomized: bool) -> Result<PetersenFit> {
    if roles.pretreatment.is_empty() {
        return Err(Error::Config("modified-regression baseline needs at least one pretreatment covariate".into()));
    }
    let n = dataset.len();
    let a: Vec<f64> = dataset.treatment.iter().map(|&v| v as f64).collect();
    let z: Vec<f64> = dataset.mediator.iter().map(|&v| v as f64).collect();
    let xs = roles
        .pretreatment
        .iter()
        .map(|c| dataset.column(c).map(<[f64]>::to_vec).ok_or_else(|| Error::MissingColumn(c.clone())))
        .collect::<Result<Vec<_>>>()?;
    let ones = vec![1.0; n];

    let mut step1: Vec<(&str, Vec<f64>)> = vec![("A", a.clone())];
    let ax_names: Vec<String> = roles.pretreatment.iter().map(|c| format!("A:{c}")).collect();
    let mut cols: Vec<(String, Vec<f64>)> = roles.pretreatment.iter().cloned().zip(xs.iter().cloned()).collect();
    cols.push(("Z".into(), z.clone()));
    cols.push(("A:Z".into(), a.iter().zip(&z).map(|(a, z)| a * z).collect()));
    for (name, x) in ax_names.iter().zip(&xs) {
        cols.push((name.clone(), a.iter().zip(x).map(|(a, x)| a * x).collect()));
    }
    step1.extend(cols.iter().map(|(n, c)| (n.as_str(), c.clone())));
    let design1 = column_design(dataset, &step1, &[])?;
    let fit1 = fit_wls(&design1, &dataset.outcome, &ones)?;
    let beta_a = fit1.coefficient("A").expect("A column");
    let beta_az = fit1.coefficient("A:Z").expect("A:Z column");
    let beta_ax: Vec<f64> = ax_names.iter().map(|c| fit1.coefficient(c).expect("A:X column")).collect();

    let design2 = column_design(dataset, &[("A", a.clone())], &roles.pretreatment)?;
    let fit2 = fit_wls(&design2, &z, &ones)?;
    let mut at_control = design2.clone();
    at_control.matrix.column_mut(1).fill(0.0);
    let z0_hat = fit2.linear_predictor(&at_control)?;
    let mean_z0 = z0_hat.iter().sum::<f64>() / n as f64;
    let mean_x: Vec<f64> = xs.iter().map(|x| x.iter().sum::<f64>() / n as f64).collect();
    let mean_z0_x: Vec<f64> = xs
        .iter()
        .map(|x| x.iter().zip(&z0_hat).map(|(x, z)| x * z).sum::<f64>() / n as f64)
        .collect();
    let nde = beta_a + beta_az * mean_z0 + beta_ax.iter().zip(&mean_x).map(|(b, m)| b * m).sum::<f64>();

    let cfg = PropensityConfig {
        randomized,
        ..Default::default()
    };
    let tp = fit_treatment_propensity(dataset, roles, &cfg)?;
    let scores = PropensityScores {
        theta_a: tp.theta_a,
        theta_z0: vec![0.5; n],
        theta_z1: vec![0.5; n],
        theta_z1_l: None,
        marginal_pa1: tp.marginal_pa1,
    };
    let total = iptw_contrast(dataset, &iptw(dataset, &scores, 0)?, &iptw(dataset, &scores, 1)?);
    Ok(PetersenFit {
        nde,
        nie: total - nde,
        total,
        beta_a,
        beta_az,
        beta_ax,
        covariates: roles.pretreatment.clone(),
        mean_x,
        mean_z0,
        mean_z0_x,
    })
}

/// Weighted treated mean under `W_(1Z1)` minus weighted control mean under `W_(0Z0)`.
pub fn iptw_contrast(dataset: &Dataset, w00: &WeightSet, w11: &WeightSet) -> f64 {
    weighted_outcome_mean(dataset, w11) - weighted_outcome_mean(dataset, w00)
}

/// `sum w y / sum w` over the units a weight set covers.
pub fn weighted_outcome_mean(dataset: &Dataset, ws: &WeightSet) -> f64 {
    let (y, w): (Vec<f64>, Vec<f64>) = ws
        .weights
        .iter()
        .enumerate()
        .filter_map(|(i, w)| w.map(|w| (dataset.outcome[i], w)))
        .unzip();
    weighted_mean(&y, &w)
}

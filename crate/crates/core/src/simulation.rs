//! Synthetic data with known potential outcomes, ground-truth natural
//! effects, and replication studies.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "f1"
//! family = "gaussian"          # or "binomial"
//!
//! [[covariates]]
//! name = "x"
//! dist = "bernoulli"           # or dist = "normal", mean = 0.0, sd = 1.0
//! p = 0.5
//!
//! [treatment]
//! kind = "randomized"          # or kind = "logistic" with intercept/coefs
//! p = 0.5
//!
//! [mediator.control]           # pr(Z_0 = 1 | X, L_0, U) on the logit scale
//! intercept = -1.386
//! coefs = { x = 0.981 }
//!
//! [mediator.treated]
//! intercept = 0.405
//! coefs = { x = 0.981 }
//!
//! [outcome]                    # Y_az = intercept + a*A + z*Z + az*A*Z + coefs.X
//!                              #        + l*L_a + zl*Z*L_a + sigma*e
//! intercept = 1.0
//! a = 1.0
//! z = 2.0
//! az = 1.0
//! sigma = 0.0
//! ```
//!
//! Optional tables: `[post_treatment]` (a binary `L_a` with `control` and
//! `treated` logit models), `[latent]` (an unobserved binary `U` that the
//! mediator and post-treatment models may load on through their `u`
//! coefficient) and `[[estimators]]` (study configurations).
//!
//! Per unit the generator draws X, U, then L_0 and L_1 independently given
//! (X, U), then Z_0 given (X, L_0, U) and Z_1 given (X, L_1, U)
//! independently, and a single noise term shared by all four `Y_az`.
//! Without a latent U loading on both a mediator and a post-treatment model
//! this makes `Z_a'` independent of `L_a` given X.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, VariableRoles};
use crate::error::{Error, Result};
use crate::estimator::{
    build_augmented, build_weights, estimate_effects, path_analysis_baseline, petersen_baseline,
    run_pipeline, Estimate, PipelineConfig, SeMethod,
};
use crate::glm::{logistic, logit, Family};
use crate::propensity::{PropensityConfig, PropensityScores, DEFAULT_STRATA};
use crate::rng::{par_replicates, substream};
use crate::stats::{mean, sd};
use crate::weights::WeightMethod;

/// Bound for the positivity probe: every model probability must lie in
/// `(EPSILON, 1 - EPSILON)`.
pub const EPSILON: f64 = 0.01;
/// Monte Carlo draws for the truth when exact enumeration is impossible.
pub const DEFAULT_TRUTH_DRAWS: usize = 1_000_000;
/// Probe points per normal covariate (mean ± 3 sd).
const PROBE_POINTS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Covariate {
    Bernoulli { name: String, p: f64 },
    Normal { name: String, mean: f64, sd: f64 },
}

impl Covariate {
    pub fn name(&self) -> &str {
        match self {
            Covariate::Bernoulli { name, .. } | Covariate::Normal { name, .. } => name,
        }
    }
}

/// Linear predictor on the logit scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Logit {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub coefs: BTreeMap<String, f64>,
    /// Coefficient on the unit's own-arm post-treatment covariate.
    #[serde(default)]
    pub l: f64,
    /// Coefficient on the latent confounder.
    #[serde(default)]
    pub u: f64,
}

impl Logit {
    /// Logit model with the given probabilities at `x = 0` and `x = 1` for a
    /// single binary covariate `name`.
    pub fn two_point(name: &str, p0: f64, p1: f64) -> Self {
        Self {
            intercept: logit(p0),
            coefs: BTreeMap::from([(name.to_string(), logit(p1) - logit(p0))]),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreatmentModel {
    Randomized {
        p: f64,
    },
    Logistic {
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        coefs: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediatorModels {
    pub control: Logit,
    pub treated: Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostTreatment {
    pub name: String,
    pub control: Logit,
    pub treated: Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Latent {
    pub p: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub z: f64,
    #[serde(default)]
    pub az: f64,
    #[serde(default)]
    pub coefs: BTreeMap<String, f64>,
    #[serde(default)]
    pub l: f64,
    /// Mediator by post-treatment interaction `z * L_a`.
    #[serde(default)]
    pub zl: f64,
    /// Gaussian noise scale; ignored for the binomial family.
    #[serde(default = "one")]
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Rmpw,
    PathAnalysis,
    Petersen,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudySe {
    #[default]
    Robust,
    None,
}

fn default_strata() -> usize {
    DEFAULT_STRATA
}

fn stratified() -> WeightMethod {
    WeightMethod::Stratified
}

/// One estimator configuration evaluated in a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub label: String,
    #[serde(default)]
    pub kind: EstimatorKind,
    #[serde(default = "stratified")]
    pub weight_method: WeightMethod,
    #[serde(default = "default_strata")]
    pub strata: usize,
    #[serde(default)]
    pub post_treatment: bool,
    /// Use the generating propensities instead of fitted ones.
    #[serde(default)]
    pub true_scores: bool,
    #[serde(default)]
    pub se: StudySe,
}

impl EstimatorSpec {
    pub fn rmpw(label: &str, weight_method: WeightMethod) -> Self {
        Self {
            label: label.to_string(),
            kind: EstimatorKind::Rmpw,
            weight_method,
            strata: DEFAULT_STRATA,
            post_treatment: false,
            true_scores: false,
            se: StudySe::Robust,
        }
    }

    pub fn baseline(label: &str, kind: EstimatorKind) -> Self {
        Self {
            kind,
            se: StudySe::None,
            ..Self::rmpw(label, WeightMethod::Parametric)
        }
    }

    pub fn with_true_scores(mut self) -> Self {
        self.true_scores = true;
        self
    }

    pub fn with_post_treatment(mut self) -> Self {
        self.post_treatment = true;
        self
    }

    pub fn with_strata(mut self, k: usize) -> Self {
        self.strata = k;
        self
    }
}

fn gaussian() -> Family {
    Family::Gaussian
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "gaussian")]
    pub family: Family,
    #[serde(default)]
    pub seed: Option<u64>,
    pub covariates: Vec<Covariate>,
    pub treatment: TreatmentModel,
    pub mediator: MediatorModels,
    #[serde(default)]
    pub post_treatment: Option<PostTreatment>,
    #[serde(default)]
    pub latent: Option<Latent>,
    pub outcome: OutcomeModel,
    #[serde(default)]
    pub estimators: Vec<EstimatorSpec>,
}

fn check_prob(what: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Scenario(format!("{what}: probability {p} not in (0, 1)")))
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Scenario(m) => Error::Scenario(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn randomized(&self) -> bool {
        matches!(self.treatment, TreatmentModel::Randomized { .. })
    }

    pub fn roles(&self) -> VariableRoles {
        let names = self.covariate_names();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut roles = VariableRoles::new("A", "Z", "Y").with_pretreatment(&names);
        if let Some(pt) = &self.post_treatment {
            roles = roles.with_posttreatment(&[pt.name.as_str()]);
        }
        roles
    }

    /// Exact enumeration is possible when every covariate is discrete.
    pub fn is_discrete(&self) -> bool {
        self.covariates.iter().all(|c| matches!(c, Covariate::Bernoulli { .. }))
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.covariate_names();
        if let Some(dup) = names.iter().enumerate().find(|(i, n)| names[..*i].contains(n)) {
            return Err(Error::Scenario(format!("duplicate covariate '{}'", dup.1)));
        }
        let reserved = ["A", "Z", "Y", "id"];
        for n in names.iter().chain(self.post_treatment.iter().map(|p| &p.name)) {
            if reserved.contains(&n.as_str()) {
                return Err(Error::Scenario(format!("variable name '{n}' is reserved")));
            }
        }
        for c in &self.covariates {
            match c {
                Covariate::Bernoulli { name, p } => check_prob(&format!("covariates.{name}"), *p)?,
                Covariate::Normal { name, sd, .. } => {
                    if !(*sd > 0.0) {
                        return Err(Error::Scenario(format!("covariates.{name}: sd must be positive")));
                    }
                }
            }
        }
        let known = |section: &str, coefs: &BTreeMap<String, f64>| -> Result<()> {
            for k in coefs.keys() {
                if !names.contains(k) {
                    return Err(Error::Scenario(format!("{section}.coefs: unknown covariate '{k}'")));
                }
            }
            Ok(())
        };
        match &self.treatment {
            TreatmentModel::Randomized { p } => check_prob("treatment.p", *p)?,
            TreatmentModel::Logistic { coefs, .. } => known("treatment", coefs)?,
        }
        known("mediator.control", &self.mediator.control.coefs)?;
        known("mediator.treated", &self.mediator.treated.coefs)?;
        known("outcome", &self.outcome.coefs)?;
        if let Some(pt) = &self.post_treatment {
            known("post_treatment.control", &pt.control.coefs)?;
            known("post_treatment.treated", &pt.treated.coefs)?;
            if pt.control.l != 0.0 || pt.treated.l != 0.0 {
                return Err(Error::Scenario("post_treatment models cannot load on l".into()));
            }
        } else if self.mediator.control.l != 0.0
            || self.mediator.treated.l != 0.0
            || self.outcome.l != 0.0
            || self.outcome.zl != 0.0
        {
            return Err(Error::Scenario("an l coefficient needs a [post_treatment] table".into()));
        }
        match &self.latent {
            Some(u) => check_prob("latent.p", u.p)?,
            None => {
                let loads = [&self.mediator.control, &self.mediator.treated]
                    .into_iter()
                    .chain(self.post_treatment.iter().flat_map(|p| [&p.control, &p.treated]))
                    .any(|m| m.u != 0.0);
                if loads {
                    return Err(Error::Scenario("a u coefficient needs a [latent] table".into()));
                }
            }
        }
        if !(self.outcome.sigma >= 0.0) {
            return Err(Error::Scenario("outcome.sigma must be non-negative".into()));
        }
        for e in &self.estimators {
            if e.post_treatment && self.post_treatment.is_none() {
                return Err(Error::Scenario(format!(
                    "estimator '{}' uses post_treatment but the scenario has none",
                    e.label
                )));
            }
        }
        self.check_positivity()
    }

    fn dot(coefs: &BTreeMap<String, f64>, names: &[String], x: &[f64]) -> f64 {
        names
            .iter()
            .zip(x)
            .map(|(n, v)| coefs.get(n).map_or(0.0, |c| c * v))
            .sum()
    }

    fn eta(&self, m: &Logit, x: &[f64], l: f64, u: f64) -> f64 {
        m.intercept + Self::dot(&m.coefs, &self.covariate_names(), x) + m.l * l + m.u * u
    }

    fn mediator_model(&self, arm: u8) -> &Logit {
        if arm == 1 {
            &self.mediator.treated
        } else {
            &self.mediator.control
        }
    }

    /// pr(A = 1 | X = x).
    pub fn treatment_prob(&self, x: &[f64]) -> f64 {
        match &self.treatment {
            TreatmentModel::Randomized { p } => *p,
            TreatmentModel::Logistic { intercept, coefs } => {
                logistic(intercept + Self::dot(coefs, &self.covariate_names(), x))
            }
        }
    }

    /// pr(Z_arm = 1 | X, L_arm, U).
    pub fn mediator_prob(&self, arm: u8, x: &[f64], l: f64, u: f64) -> f64 {
        logistic(self.eta(self.mediator_model(arm), x, l, u))
    }

    /// pr(L_arm = 1 | X, U); 0 without a post-treatment covariate.
    pub fn post_prob(&self, arm: u8, x: &[f64], u: f64) -> f64 {
        match &self.post_treatment {
            Some(pt) => logistic(self.eta(if arm == 1 { &pt.treated } else { &pt.control }, x, 0.0, u)),
            None => 0.0,
        }
    }

    /// Mean of `Y_az` given (X, L_a).
    pub fn outcome_mean(&self, a: u8, z: u8, x: &[f64], l: f64) -> f64 {
        let o = &self.outcome;
        let (a, z) = (a as f64, z as f64);
        let eta = o.intercept
            + o.a * a
            + o.z * z
            + o.az * a * z
            + Self::dot(&o.coefs, &self.covariate_names(), x)
            + o.l * l
            + o.zl * z * l;
        match self.family {
            Family::Gaussian => eta,
            Family::BinomialLogit => logistic(eta),
        }
    }

    fn latent_support(&self) -> Vec<(f64, f64)> {
        match &self.latent {
            Some(Latent { p }) => vec![(1.0 - p, 0.0), (*p, 1.0)],
            None => vec![(1.0, 0.0)],
        }
    }

    fn post_support(&self, arm: u8, x: &[f64], u: f64) -> Vec<(f64, f64)> {
        if self.post_treatment.is_some() {
            let p = self.post_prob(arm, x, u);
            vec![(1.0 - p, 0.0), (p, 1.0)]
        } else {
            vec![(1.0, 0.0)]
        }
    }

    /// pr(Z_arm = 1 | X), averaging over U and L_arm.
    pub fn theta_z(&self, arm: u8, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (pu, u) in self.latent_support() {
            for (pl, l) in self.post_support(arm, x, u) {
                total += pu * pl * self.mediator_prob(arm, x, l, u);
            }
        }
        total
    }

    /// pr(Z_arm = 1 | X, L_arm = l), averaging over U given (X, L_arm).
    pub fn theta_z_l(&self, arm: u8, x: &[f64], l: f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (pu, u) in self.latent_support() {
            let p = self.post_prob(arm, x, u);
            let pl = if l == 1.0 { p } else { 1.0 - p };
            num += pu * pl * self.mediator_prob(arm, x, l, u);
            den += pu * pl;
        }
        num / den
    }

    /// Covariate support points with probabilities (discrete scenarios), or
    /// the positivity probe grid otherwise (unit weights).
    fn covariate_grid(&self) -> Vec<(f64, Vec<f64>)> {
        let mut grid = vec![(1.0, Vec::new())];
        for c in &self.covariates {
            let points: Vec<(f64, f64)> = match c {
                Covariate::Bernoulli { p, .. } => vec![(1.0 - p, 0.0), (*p, 1.0)],
                Covariate::Normal { mean, sd, .. } => (0..PROBE_POINTS)
                    .map(|k| {
                        let t = -3.0 + 6.0 * k as f64 / (PROBE_POINTS - 1) as f64;
                        (1.0, mean + t * sd)
                    })
                    .collect(),
            };
            grid = grid
                .into_iter()
                .flat_map(|(w, x)| {
                    points.iter().map(move |&(p, v)| {
                        let mut x = x.clone();
                        x.push(v);
                        (w * p, x)
                    })
                })
                .collect();
        }
        grid
    }

    fn check_positivity(&self) -> Result<()> {
        let inside = |p: f64| p > EPSILON && p < 1.0 - EPSILON;
        for (_, x) in self.covariate_grid() {
            let pa = self.treatment_prob(&x);
            if !inside(pa) {
                return Err(Error::Scenario(format!(
                    "positivity: pr(A=1 | X={x:?}) = {pa:.4} outside ({EPSILON}, {})",
                    1.0 - EPSILON
                )));
            }
            for (_, u) in self.latent_support() {
                for arm in 0..2u8 {
                    for (_, l) in self.post_support(arm, &x, u) {
                        let q = self.mediator_prob(arm, &x, l, u);
                        if !inside(q) {
                            return Err(Error::Scenario(format!(
                                "positivity: pr(Z_{arm}=1 | X={x:?}, L={l}, U={u}) = {q:.4} outside ({EPSILON}, {})",
                                1.0 - EPSILON
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Every potential value of every unit. Kept apart from the observed data.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialTable {
    pub u: Vec<u8>,
    pub l: Vec<[u8; 2]>,
    pub z: Vec<[u8; 2]>,
    /// `y[i][2 * a + z]`.
    pub y: Vec<[f64; 4]>,
}

impl PotentialTable {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self, i: usize, a: u8, z: u8) -> f64 {
        self.y[i][2 * a as usize + z as usize]
    }

    /// `Y_(a Z_a')` for unit `i`.
    pub fn nested(&self, i: usize, a: u8, a_prime: u8) -> f64 {
        self.y(i, a, self.z[i][a_prime as usize])
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub potential: PotentialTable,
    /// Generating propensities (θ_Z1_L present when the scenario has L).
    pub true_scores: PropensityScores,
}

fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

/// Draws `n` units. Deterministic in `seed`.
pub fn generate(scenario: &Scenario, n: usize, seed: u64) -> Result<SimulatedData> {
    generate_with(scenario, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn generate_with<R: Rng>(scenario: &Scenario, n: usize, rng: &mut R) -> Result<SimulatedData> {
    if n == 0 {
        return Err(Error::Scenario("n must be at least 1".into()));
    }
    let k = scenario.covariates.len();
    let normals: Vec<Option<Normal<f64>>> = scenario
        .covariates
        .iter()
        .map(|c| match c {
            Covariate::Normal { mean, sd, .. } => Normal::new(*mean, *sd).ok(),
            Covariate::Bernoulli { .. } => None,
        })
        .collect();
    let latent_p = scenario.latent.as_ref().map(|l| l.p);
    let has_l = scenario.post_treatment.is_some();

    let mut xs = vec![Vec::with_capacity(n); k];
    let mut a = Vec::with_capacity(n);
    let mut table = PotentialTable {
        u: Vec::with_capacity(n),
        l: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
    };
    let mut theta_a = Vec::with_capacity(n);
    let mut theta_z0 = Vec::with_capacity(n);
    let mut theta_z1 = Vec::with_capacity(n);
    let mut theta_z1_l = Vec::with_capacity(n);
    let mut x = vec![0.0; k];
    for _ in 0..n {
        for (j, c) in scenario.covariates.iter().enumerate() {
            x[j] = match (c, &normals[j]) {
                (Covariate::Bernoulli { p, .. }, _) => bernoulli(rng, *p) as f64,
                (Covariate::Normal { .. }, Some(d)) => d.sample(rng),
                (Covariate::Normal { mean, .. }, None) => *mean,
            };
            xs[j].push(x[j]);
        }
        let u = latent_p.map_or(0, |p| bernoulli(rng, p));
        let uf = u as f64;
        let pa = scenario.treatment_prob(&x);
        let ai = bernoulli(rng, pa);
        let mut l = [0u8; 2];
        if has_l {
            for arm in 0..2u8 {
                l[arm as usize] = bernoulli(rng, scenario.post_prob(arm, &x, uf));
            }
        }
        let mut z = [0u8; 2];
        for arm in 0..2u8 {
            z[arm as usize] = bernoulli(rng, scenario.mediator_prob(arm, &x, l[arm as usize] as f64, uf));
        }
        let mut y = [0.0; 4];
        match scenario.family {
            Family::Gaussian => {
                let e: f64 = StandardNormal.sample(rng);
                for arm in 0..2u8 {
                    for m in 0..2u8 {
                        y[2 * arm as usize + m as usize] =
                            scenario.outcome_mean(arm, m, &x, l[arm as usize] as f64) + scenario.outcome.sigma * e;
                    }
                }
            }
            Family::BinomialLogit => {
                let v: f64 = rng.random();
                for arm in 0..2u8 {
                    for m in 0..2u8 {
                        let p = scenario.outcome_mean(arm, m, &x, l[arm as usize] as f64);
                        y[2 * arm as usize + m as usize] = f64::from(u8::from(v < p));
                    }
                }
            }
        }
        a.push(ai);
        table.u.push(u);
        table.l.push(l);
        table.z.push(z);
        table.y.push(y);
        theta_a.push(pa);
        theta_z0.push(scenario.theta_z(0, &x));
        theta_z1.push(scenario.theta_z(1, &x));
        theta_z1_l.push((has_l && ai == 1).then(|| scenario.theta_z_l(1, &x, l[1] as f64)));
    }

    let mediator: Vec<u8> = (0..n).map(|i| table.z[i][a[i] as usize]).collect();
    let outcome: Vec<f64> = (0..n).map(|i| table.y(i, a[i], mediator[i])).collect();
    let covariates = scenario.covariate_names().into_iter().zip(xs).collect();
    let post = match &scenario.post_treatment {
        Some(pt) => vec![(
            pt.name.clone(),
            (0..n).map(|i| table.l[i][a[i] as usize] as f64).collect(),
        )],
        None => Vec::new(),
    };
    let dataset = Dataset::from_columns(a, mediator, outcome, covariates, post, None)?;
    let marginal_pa1 = match &scenario.treatment {
        TreatmentModel::Randomized { p } => *p,
        TreatmentModel::Logistic { .. } if scenario.is_discrete() => scenario
            .covariate_grid()
            .iter()
            .map(|(w, x)| w * scenario.treatment_prob(x))
            .sum(),
        TreatmentModel::Logistic { .. } => mean(&theta_a),
    };
    let true_scores = PropensityScores {
        theta_a,
        theta_z0,
        theta_z1,
        theta_z1_l: has_l.then_some(theta_z1_l),
        marginal_pa1,
    };
    Ok(SimulatedData {
        dataset,
        potential: table,
        true_scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TruthMode {
    Exact,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSe {
    pub mean_0z0: f64,
    pub mean_1z0: f64,
    pub mean_1z1: f64,
    pub mean_0z1: f64,
    pub nde: f64,
    pub nie: f64,
    pub te: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthValues {
    pub mean_0z0: f64,
    pub mean_1z0: f64,
    pub mean_1z1: f64,
    pub mean_0z1: f64,
    pub nde: f64,
    pub nie: f64,
    pub te: f64,
    pub mode: TruthMode,
    pub mc_se: Option<MonteCarloSe>,
}

impl TruthValues {
    fn from_means(m00: f64, m10: f64, m11: f64, m01: f64, mode: TruthMode) -> Self {
        let nde = m10 - m00;
        let nie = m11 - m10;
        Self {
            mean_0z0: m00,
            mean_1z0: m10,
            mean_1z1: m11,
            mean_0z1: m01,
            nde,
            nie,
            te: nde + nie,
            mode,
            mc_se: None,
        }
    }

    pub fn get(&self, p: Parameter) -> f64 {
        match p {
            Parameter::Nde => self.nde,
            Parameter::Nie => self.nie,
            Parameter::Te => self.te,
        }
    }
}

/// `E(Y_(a Z_a'))` by enumeration over (X, U, L_0, L_1, Z_a').
fn exact_nested_mean(s: &Scenario, a: u8, a_prime: u8) -> f64 {
    let mut total = 0.0;
    for (px, x) in s.covariate_grid() {
        for (pu, u) in s.latent_support() {
            for (pl_a, l_a) in s.post_support(a, &x, u) {
                for (pl_b, l_b) in s.post_support(a_prime, &x, u) {
                    // L_a and L_a' are the same draw when a == a'.
                    let (w, l_med) = if a == a_prime {
                        if l_a != l_b {
                            continue;
                        }
                        (pl_a, l_a)
                    } else {
                        (pl_a * pl_b, l_b)
                    };
                    let q = s.mediator_prob(a_prime, &x, l_med, u);
                    let y = (1.0 - q) * s.outcome_mean(a, 0, &x, l_a) + q * s.outcome_mean(a, 1, &x, l_a);
                    total += px * pu * w * y;
                }
            }
        }
    }
    total
}

pub fn compute_truth(scenario: &Scenario, mode: TruthMode) -> Result<TruthValues> {
    match mode {
        TruthMode::Exact => {
            if !scenario.is_discrete() {
                return Err(Error::Scenario(
                    "exact truth needs discrete covariates; use Monte Carlo".into(),
                ));
            }
            Ok(TruthValues::from_means(
                exact_nested_mean(scenario, 0, 0),
                exact_nested_mean(scenario, 1, 0),
                exact_nested_mean(scenario, 1, 1),
                exact_nested_mean(scenario, 0, 1),
                mode,
            ))
        }
        TruthMode::MonteCarlo { draws, seed } => {
            if draws < 2 {
                return Err(Error::Scenario("Monte Carlo truth needs at least 2 draws".into()));
            }
            let sim = generate(scenario, draws, seed)?;
            let p = &sim.potential;
            let col = |a: u8, b: u8| (0..draws).map(|i| p.nested(i, a, b)).collect::<Vec<f64>>();
            let (y00, y10, y11, y01) = (col(0, 0), col(1, 0), col(1, 1), col(0, 1));
            let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| a - b).collect::<Vec<f64>>();
            let root = (draws as f64).sqrt();
            let mut t = TruthValues::from_means(mean(&y00), mean(&y10), mean(&y11), mean(&y01), mode);
            t.mc_se = Some(MonteCarloSe {
                mean_0z0: sd(&y00) / root,
                mean_1z0: sd(&y10) / root,
                mean_1z1: sd(&y11) / root,
                mean_0z1: sd(&y01) / root,
                nde: sd(&diff(&y10, &y00)) / root,
                nie: sd(&diff(&y11, &y10)) / root,
                te: sd(&diff(&y11, &y00)) / root,
            });
            Ok(t)
        }
    }
}

/// Exact when possible, otherwise Monte Carlo with [`DEFAULT_TRUTH_DRAWS`].
pub fn default_truth(scenario: &Scenario, seed: u64) -> Result<TruthValues> {
    if scenario.is_discrete() {
        compute_truth(scenario, TruthMode::Exact)
    } else {
        compute_truth(
            scenario,
            TruthMode::MonteCarlo {
                draws: DEFAULT_TRUTH_DRAWS,
                seed,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Nde,
    Nie,
    Te,
}

impl Parameter {
    pub const ALL: [Parameter; 3] = [Parameter::Nde, Parameter::Nie, Parameter::Te];

    pub fn label(self) -> &'static str {
        match self {
            Parameter::Nde => "NDE",
            Parameter::Nie => "NIE",
            Parameter::Te => "TE",
        }
    }
}

/// One estimator's output on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub rep: usize,
    pub estimator: String,
    pub nde: Option<Estimate>,
    pub nie: Option<Estimate>,
    pub te: Option<Estimate>,
    /// Weighted E(Y_(1Z0)) for the RMPW estimators.
    pub mean_1z0: Option<f64>,
    pub error: Option<String>,
}

impl ReplicateRow {
    pub fn get(&self, p: Parameter) -> Option<&Estimate> {
        match p {
            Parameter::Nde => self.nde.as_ref(),
            Parameter::Nie => self.nie.as_ref(),
            Parameter::Te => self.te.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: Parameter,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub sd: f64,
    /// `sd / sqrt(successful replicates)`.
    pub mc_se: f64,
    pub rmse: f64,
    pub mean_se: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub spec: EstimatorSpec,
    pub failures: usize,
    pub parameters: Vec<ParameterSummary>,
}

impl EstimatorSummary {
    pub fn parameter(&self, p: Parameter) -> &ParameterSummary {
        self.parameters.iter().find(|s| s.parameter == p).expect("all parameters summarized")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: String,
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    pub truth: TruthValues,
    pub estimators: Vec<EstimatorSummary>,
    pub replicates: Vec<ReplicateRow>,
}

impl StudyReport {
    pub fn estimator(&self, label: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == label)
    }

    pub fn rows(&self, label: &str) -> impl Iterator<Item = &ReplicateRow> + '_ {
        let label = label.to_string();
        self.replicates.iter().filter(move |r| r.estimator == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn text_table(&self) -> String {
        let mut out = format!(
            "scenario {}  reps {}  n {}  seed {}  truth {}\n",
            self.scenario,
            self.reps,
            self.n,
            self.seed,
            match self.truth.mode {
                TruthMode::Exact => "exact".to_string(),
                TruthMode::MonteCarlo { draws, .. } => format!("monte-carlo({draws})"),
            }
        );
        let header = [
            "estimator", "param", "truth", "mean", "bias", "sd", "rmse", "mean_se", "coverage", "failures",
        ];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        for e in &self.estimators {
            for p in &e.parameters {
                rows.push(vec![
                    e.estimator.clone(),
                    p.parameter.label().to_string(),
                    format!("{:.4}", p.truth),
                    format!("{:.4}", p.mean),
                    format!("{:.4}", p.bias),
                    format!("{:.4}", p.sd),
                    format!("{:.4}", p.rmse),
                    opt(p.mean_se),
                    opt(p.coverage),
                    e.failures.to_string(),
                ]);
            }
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        for r in rows {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(j, c)| if j < 2 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Runs one estimator on one simulated sample.
pub fn run_estimator(
    scenario: &Scenario,
    spec: &EstimatorSpec,
    sim: &SimulatedData,
) -> Result<(Estimate, Estimate, Estimate, Option<f64>)> {
    let roles = scenario.roles();
    let ds = &sim.dataset;
    match spec.kind {
        EstimatorKind::PathAnalysis => {
            let fit = path_analysis_baseline(ds, &roles, !roles.pretreatment.is_empty())?;
            let pt = |v: f64| Estimate { estimate: v, se: None, ci: None };
            Ok((pt(fit.c), pt(fit.indirect), pt(fit.total), None))
        }
        EstimatorKind::Petersen => {
            let fit = petersen_baseline(ds, &roles, scenario.randomized())?;
            let pt = |v: f64| Estimate { estimate: v, se: None, ci: None };
            Ok((pt(fit.nde), pt(fit.nie), pt(fit.total), None))
        }
        EstimatorKind::Rmpw => {
            let config = PipelineConfig {
                weight_method: spec.weight_method,
                strata: spec.strata,
                propensity: PropensityConfig {
                    randomized: scenario.randomized(),
                    ..Default::default()
                },
                use_post_treatment: spec.post_treatment,
                family: scenario.family,
                se: match spec.se {
                    StudySe::Robust => SeMethod::Robust,
                    StudySe::None => SeMethod::None,
                },
                ..Default::default()
            };
            let est = if spec.true_scores {
                let (w00, w10, w11, _) = build_weights(ds, &sim.true_scores, &config)?;
                let aug = build_augmented(ds, &w00, &w10, &w11)?;
                estimate_effects(&aug, config.family, config.se)?
            } else {
                run_pipeline(ds, &roles, &config)?.estimates
            };
            Ok((est.nde, est.nie, est.total, Some(est.mean_1z0.estimate)))
        }
    }
}

fn summarize_rows(spec: &EstimatorSpec, rows: &[&ReplicateRow], truth: &TruthValues) -> EstimatorSummary {
    let ok: Vec<&&ReplicateRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let parameters = Parameter::ALL
        .iter()
        .map(|&p| {
            let t = truth.get(p);
            let est: Vec<&Estimate> = ok.iter().filter_map(|r| r.get(p)).collect();
            let values: Vec<f64> = est.iter().map(|e| e.estimate).collect();
            let m = mean(&values);
            let s = sd(&values);
            let rmse = (values.iter().map(|v| (v - t).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
            let ses: Vec<f64> = est.iter().filter_map(|e| e.se).collect();
            let covered: Vec<bool> = est.iter().filter_map(|e| e.covers(t)).collect();
            ParameterSummary {
                parameter: p,
                truth: t,
                mean: m,
                bias: m - t,
                sd: s,
                mc_se: s / (values.len() as f64).sqrt(),
                rmse,
                mean_se: (!ses.is_empty() && ses.len() == est.len()).then(|| mean(&ses)),
                coverage: (!covered.is_empty() && covered.len() == est.len())
                    .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64),
            }
        })
        .collect();
    EstimatorSummary {
        estimator: spec.label.clone(),
        spec: spec.clone(),
        failures: rows.len() - ok.len(),
        parameters,
    }
}

/// Replicate `r` draws its sample from stream `r` of the master seed; the
/// Monte Carlo truth (if needed) uses a stream no replicate touches.
pub fn run_study(
    scenario: &Scenario,
    estimators: &[EstimatorSpec],
    reps: usize,
    n: usize,
    seed: u64,
    threads: usize,
) -> Result<StudyReport> {
    if reps < 2 {
        return Err(Error::Config("a study needs at least 2 replicates".into()));
    }
    if estimators.is_empty() {
        return Err(Error::Config("a study needs at least one estimator".into()));
    }
    let truth = if scenario.is_discrete() {
        compute_truth(scenario, TruthMode::Exact)?
    } else {
        let truth_seed = substream(seed, u64::MAX).random();
        compute_truth(
            scenario,
            TruthMode::MonteCarlo {
                draws: DEFAULT_TRUTH_DRAWS,
                seed: truth_seed,
            },
        )?
    };
    let per_rep: Vec<Result<Vec<ReplicateRow>>> = par_replicates(reps, threads, |r| {
        let sim = generate_with(scenario, n, &mut substream(seed, r as u64))?;
        Ok(estimators
            .iter()
            .map(|spec| match run_estimator(scenario, spec, &sim) {
                Ok((nde, nie, te, m10)) => ReplicateRow {
                    rep: r,
                    estimator: spec.label.clone(),
                    nde: Some(nde),
                    nie: Some(nie),
                    te: Some(te),
                    mean_1z0: m10,
                    error: None,
                },
                Err(e) => ReplicateRow {
                    rep: r,
                    estimator: spec.label.clone(),
                    nde: None,
                    nie: None,
                    te: None,
                    mean_1z0: None,
                    error: Some(e.to_string()),
                },
            })
            .collect())
    });
    let mut replicates = Vec::with_capacity(reps * estimators.len());
    for rows in per_rep {
        replicates.extend(rows?);
    }
    let mut summaries = Vec::new();
    for spec in estimators {
        let rows: Vec<&ReplicateRow> = replicates.iter().filter(|r| r.estimator == spec.label).collect();
        let summary = summarize_rows(spec, &rows, &truth);
        if summary.failures as f64 > crate::estimator::MAX_FAILURE_SHARE * reps as f64 {
            return Err(Error::ExcessiveFailures {
                failed: summary.failures,
                reps,
            });
        }
        summaries.push(summary);
    }
    Ok(StudyReport {
        scenario: scenario.name.clone(),
        reps,
        n,
        seed,
        truth,
        estimators: summaries,
        replicates,
    })
}

/// Binary X, randomized treatment, noiseless outcome with an A×Z interaction.
/// E(Y_(1Z0)) = 2.9, E(Y_(0Z0)) = 1.6, E(Y_(1Z1)) = 4.1.
pub fn fixture_f1() -> Scenario {
    Scenario {
        name: "f1".into(),
        description: "binary X, randomized A, noiseless outcome with A:Z interaction".into(),
        family: Family::Gaussian,
        seed: None,
        covariates: vec![Covariate::Bernoulli { name: "x".into(), p: 0.5 }],
        treatment: TreatmentModel::Randomized { p: 0.5 },
        mediator: MediatorModels {
            control: Logit::two_point("x", 0.2, 0.4),
            treated: Logit::two_point("x", 0.6, 0.8),
        },
        post_treatment: None,
        latent: None,
        outcome: OutcomeModel {
            intercept: 1.0,
            a: 1.0,
            z: 2.0,
            az: 1.0,
            coefs: BTreeMap::new(),
            l: 0.0,
            zl: 0.0,
            sigma: 0.0,
        },
        estimators: Vec::new(),
    }
}

/// A binary post-treatment covariate L_a moves both Z_1 and Y, and is
/// independent of Z_0 given X.
pub fn post_treatment_scenario() -> Scenario {
    let x = |c: f64| BTreeMap::from([("x".to_string(), c)]);
    Scenario {
        name: "post_treatment".into(),
        description: "binary L_a affecting Z_1 and Y; Z_0 independent of L_1 given X".into(),
        family: Family::Gaussian,
        seed: None,
        covariates: vec![Covariate::Bernoulli { name: "x".into(), p: 0.5 }],
        treatment: TreatmentModel::Randomized { p: 0.5 },
        mediator: MediatorModels {
            control: Logit { intercept: -1.0, coefs: x(0.8), l: 0.0, u: 0.0 },
            treated: Logit { intercept: -0.2, coefs: x(0.8), l: 1.2, u: 0.0 },
        },
        post_treatment: Some(PostTreatment {
            name: "l".into(),
            control: Logit { intercept: -0.5, coefs: x(0.5), l: 0.0, u: 0.0 },
            treated: Logit { intercept: 0.5, coefs: x(0.5), l: 0.0, u: 0.0 },
        }),
        latent: None,
        outcome: OutcomeModel {
            intercept: 1.0,
            a: 1.0,
            z: 1.0,
            az: 0.5,
            coefs: x(0.5),
            l: 1.0,
            zl: 1.5,
            sigma: 0.5,
        },
        estimators: Vec::new(),
    }
}

/// Twin of [`post_treatment_scenario`] where an unobserved U drives both
/// Z_0 and L_1, so Z_0 and L_1 are dependent given X.
pub fn shared_cause_scenario() -> Scenario {
    let mut s = post_treatment_scenario();
    s.name = "shared_cause".into();
    s.description = "latent U drives Z_0 and L_1; Z_0 and L_1 dependent given X".into();
    s.latent = Some(Latent { p: 0.5 });
    s.mediator.control.intercept = -2.0;
    s.mediator.control.u = 2.0;
    if let Some(pt) = s.post_treatment.as_mut() {
        pt.treated.intercept = -1.0;
        pt.treated.u = 2.5;
    }
    s
}

/// Continuous X, randomized treatment, linear outcome with no A×Z term.
pub fn linear_no_interaction() -> Scenario {
    let x = |c: f64| BTreeMap::from([("x".to_string(), c)]);
    Scenario {
        name: "linear".into(),
        description: "normal X, randomized A, linear outcome without A:Z".into(),
        family: Family::Gaussian,
        seed: None,
        covariates: vec![Covariate::Normal { name: "x".into(), mean: 0.0, sd: 1.0 }],
        treatment: TreatmentModel::Randomized { p: 0.5 },
        mediator: MediatorModels {
            control: Logit { intercept: -0.5, coefs: x(0.6), l: 0.0, u: 0.0 },
            treated: Logit { intercept: 0.5, coefs: x(0.6), l: 0.0, u: 0.0 },
        },
        post_treatment: None,
        latent: None,
        outcome: OutcomeModel {
            intercept: 0.0,
            a: 0.5,
            z: 1.0,
            az: 0.0,
            coefs: x(0.8),
            l: 0.0,
            zl: 0.0,
            sigma: 1.0,
        },
        estimators: Vec::new(),
    }
}

/// Bundled scenarios by name.
pub fn builtin(name: &str) -> Option<Scenario> {
    match name {
        "f1" => Some(fixture_f1()),
        "post_treatment" => Some(post_treatment_scenario()),
        "shared_cause" => Some(shared_cause_scenario()),
        "linear" => Some(linear_no_interaction()),
        _ => None,
    }
}

pub const BUILTIN_NAMES: [&str; 4] = ["f1", "post_treatment", "shared_cause", "linear"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_exact_truth() {
        let t = compute_truth(&fixture_f1(), TruthMode::Exact).unwrap();
        // Enumerated by hand: E(Y_(1Z0)) = 2 + 3 * E(q0) = 2 + 3 * 0.3, etc.
        let q0 = 0.5 * 0.2 + 0.5 * 0.4;
        let q1 = 0.5 * 0.6 + 0.5 * 0.8;
        assert!((t.mean_1z0 - (2.0 + 3.0 * q0)).abs() < 1e-12);
        assert!((t.mean_0z0 - (1.0 + 2.0 * q0)).abs() < 1e-12);
        assert!((t.mean_1z1 - (2.0 + 3.0 * q1)).abs() < 1e-12);
        assert!((t.mean_1z0 - 2.9).abs() < 1e-12);
        assert!((t.mean_0z0 - 1.6).abs() < 1e-12);
        assert!((t.mean_1z1 - 4.1).abs() < 1e-12);
        assert!((t.nde - 1.3).abs() < 1e-12);
        assert!((t.nie - 1.2).abs() < 1e-12);
        assert!((t.te - 2.5).abs() < 1e-12);
        assert!((t.te - (t.nde + t.nie)).abs() < 1e-12);
    }

    #[test]
    fn no_direct_path_and_unmoved_mediator() {
        let mut s = fixture_f1();
        s.outcome.a = 0.0;
        s.outcome.az = 0.0;
        assert_eq!(compute_truth(&s, TruthMode::Exact).unwrap().nde, 0.0);

        let mut s = fixture_f1();
        s.mediator.treated = s.mediator.control.clone();
        assert_eq!(compute_truth(&s, TruthMode::Exact).unwrap().nie, 0.0);
    }

    #[test]
    fn generation_is_deterministic_and_consistent() {
        let s = post_treatment_scenario();
        let a = generate(&s, 500, 9).unwrap();
        let b = generate(&s, 500, 9).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.potential, b.potential);
        let ds = &a.dataset;
        let l = ds.column("l").unwrap();
        for i in 0..ds.len() {
            let arm = ds.treatment[i] as usize;
            assert_eq!(ds.mediator[i], a.potential.z[i][arm]);
            assert_eq!(l[i], a.potential.l[i][arm] as f64);
            assert_eq!(ds.outcome[i], a.potential.y(i, ds.treatment[i], ds.mediator[i]));
        }
    }

    #[test]
    fn no_interaction_construction() {
        let mut s = fixture_f1();
        s.outcome.az = 0.0;
        let sim = generate(&s, 200, 3).unwrap();
        let p = &sim.potential;
        for i in 0..p.len() {
            assert_eq!(p.y(i, 1, 0) - p.y(i, 0, 0), p.y(i, 1, 1) - p.y(i, 0, 1));
        }
    }

    #[test]
    fn randomized_treated_fraction() {
        let sim = generate(&fixture_f1(), 10_000, 11).unwrap();
        let share = sim.dataset.count_arm(1) as f64 / 10_000.0;
        assert!((share - 0.5).abs() < 0.02, "{share}");
    }

    #[test]
    fn positivity_probe_rejects_extreme_mediator() {
        let mut s = fixture_f1();
        s.mediator.control = Logit::two_point("x", 0.2, 0.995);
        assert!(matches!(s.validate(), Err(Error::Scenario(m)) if m.contains("positivity")));
        let mut s = linear_no_interaction();
        s.mediator.treated.coefs.insert("x".into(), 2.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn exact_requires_discrete() {
        assert!(compute_truth(&linear_no_interaction(), TruthMode::Exact).is_err());
    }

    #[test]
    fn scenario_toml_round_trip_and_unknown_key() {
        for name in BUILTIN_NAMES {
            let s = builtin(name).unwrap();
            s.validate().unwrap();
            assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
        }
        let text = fixture_f1().to_toml().replace("[outcome]", "[outcome]\nbogus_key = 1");
        let err = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
    }

    #[test]
    fn true_conditional_scores() {
        let s = post_treatment_scenario();
        // Without a latent U, θ_Z1_L is the mediator model itself.
        let x = [1.0];
        assert!((s.theta_z_l(1, &x, 1.0) - s.mediator_prob(1, &x, 1.0, 0.0)).abs() < 1e-15);
        let p = s.post_prob(1, &x, 0.0);
        let expect = (1.0 - p) * s.mediator_prob(1, &x, 0.0, 0.0) + p * s.mediator_prob(1, &x, 1.0, 0.0);
        assert!((s.theta_z(1, &x) - expect).abs() < 1e-15);
    }

    #[test]
    fn constant_estimator_summary() {
        let truth = compute_truth(&fixture_f1(), TruthMode::Exact).unwrap();
        let spec = EstimatorSpec::baseline("oracle", EstimatorKind::Rmpw);
        let at = |v: f64| Some(Estimate { estimate: v, se: None, ci: None });
        let rows: Vec<ReplicateRow> = (0..5)
            .map(|r| ReplicateRow {
                rep: r,
                estimator: "oracle".into(),
                nde: at(truth.nde),
                nie: at(truth.nie),
                te: at(truth.te),
                mean_1z0: None,
                error: None,
            })
            .collect();
        let refs: Vec<&ReplicateRow> = rows.iter().collect();
        let s = summarize_rows(&spec, &refs, &truth);
        for p in &s.parameters {
            assert_eq!(p.bias, 0.0);
            assert_eq!(p.sd, 0.0);
            assert!(p.coverage.is_none());
        }
    }
}

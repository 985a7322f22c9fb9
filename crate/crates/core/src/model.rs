//! Model families, priors, hyperparameter tuning and the joint prior on the
//! regression coefficients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{leroux_precision, AdjacencyGraph};
use crate::sparse::{SparseSym, SymBuilder};

/// Which trend model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelFamily {
    /// One intercept and slope for the whole city, plus covariates (OLS).
    #[serde(rename = "global-trend")]
    GlobalTrend,
    /// Independent per-unit lines (OLS, two-stage covariates).
    #[serde(rename = "noshrink")]
    NoShrinkage,
    /// Per-unit coefficients shrunk to a common mean with iid normal priors.
    #[serde(rename = "global")]
    GlobalShrinkage,
    /// Leroux CAR priors on intercepts and slopes over fixed borders.
    #[serde(rename = "car")]
    SpatialCar,
    /// Leroux CAR priors with random borders for both intercepts and slopes.
    #[serde(rename = "borders")]
    VariableBorders,
    /// Random borders for the intercepts only; slope borders fixed.
    #[serde(rename = "borders-alpha")]
    VariableBordersAlphaOnly,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 6] = [
        ModelFamily::GlobalTrend,
        ModelFamily::NoShrinkage,
        ModelFamily::GlobalShrinkage,
        ModelFamily::SpatialCar,
        ModelFamily::VariableBorders,
        ModelFamily::VariableBordersAlphaOnly,
    ];

    /// Short name used on the command line and in output files.
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::GlobalTrend => "global-trend",
            ModelFamily::NoShrinkage => "noshrink",
            ModelFamily::GlobalShrinkage => "global",
            ModelFamily::SpatialCar => "car",
            ModelFamily::VariableBorders => "borders",
            ModelFamily::VariableBordersAlphaOnly => "borders-alpha",
        }
    }

    pub fn is_bayesian(self) -> bool {
        !matches!(self, ModelFamily::GlobalTrend | ModelFamily::NoShrinkage)
    }

    /// Families with a CAR prior (and so a sampled `ρ`).
    pub fn is_spatial(self) -> bool {
        matches!(
            self,
            ModelFamily::SpatialCar | ModelFamily::VariableBorders | ModelFamily::VariableBordersAlphaOnly
        )
    }

    pub fn variable_alpha_borders(self) -> bool {
        matches!(
            self,
            ModelFamily::VariableBorders | ModelFamily::VariableBordersAlphaOnly
        )
    }

    pub fn variable_beta_borders(self) -> bool {
        self == ModelFamily::VariableBorders
    }

    pub fn has_variable_borders(self) -> bool {
        self.variable_alpha_borders()
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelFamily::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown model {s:?}; expected one of {}",
                ModelFamily::ALL.map(|m| m.name()).join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    #[default]
    EmpiricalBayes,
    Noninformative,
}

/// Inverse-Gamma shape/rate pairs for the four variance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgHyper {
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_beta: f64,
    pub b_beta: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
}

impl IgHyper {
    fn validate(&self) -> Result<()> {
        let all = [
            self.a_sigma,
            self.b_sigma,
            self.a_alpha,
            self.b_alpha,
            self.a_beta,
            self.b_beta,
            self.a_gamma,
            self.b_gamma,
        ];
        if all.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "inverse-gamma hyperparameters must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }
}

/// MCMC run length and seeding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            n_iter: 2050,
            burn_in: 50,
            thin: 2,
            n_chains: 1,
            seed: 0,
        }
    }
}

impl ChainSettings {
    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Which periods are held out of training.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holdout {
    /// Hold out the final period.
    #[default]
    Final,
    /// Train on every period.
    None,
    /// Hold out the listed period labels.
    Periods(Vec<i64>),
}

/// Full model and run configuration. Every field has a default, so a JSON
/// config only needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub prior_mode: PriorMode,
    /// Fixed hyperparameters; `None` means tune them by empirical Bayes.
    pub ig_hyper: Option<IgHyper>,
    /// Prior coefficient of variation used by empirical-Bayes tuning.
    pub eb_prior_cv: f64,
    pub rho_prior: BetaPrior,
    pub phi_prior: BetaPrior,
    /// Concentration of the Beta random-walk proposal for `ρ`.
    pub mh_b: f64,
    pub chain: ChainSettings,
    pub holdout: Holdout,
    /// Fix `γ` at a first-stage OLS estimate instead of sampling it.
    pub two_stage: bool,
    /// Refactor the border precision after this many accepted flips.
    pub det_refresh_flips: usize,
    /// Floor applied to sampled variances.
    pub variance_floor: f64,
    pub alpha_threshold: f64,
    pub beta_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: ModelFamily::SpatialCar,
            prior_mode: PriorMode::EmpiricalBayes,
            ig_hyper: None,
            eb_prior_cv: 0.1,
            rho_prior: BetaPrior { a: 10.0, b: 10.0 },
            phi_prior: BetaPrior { a: 9.0, b: 1.0 },
            mh_b: 10.0,
            chain: ChainSettings::default(),
            holdout: Holdout::Final,
            two_stage: false,
            det_refresh_flips: 32,
            variance_floor: 1e-12,
            alpha_threshold: 0.6,
            beta_threshold: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn for_family(family: ModelFamily) -> Self {
        ModelConfig {
            family,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.chain;
        if c.burn_in >= c.n_iter {
            return Err(Error::InvalidInput(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                c.burn_in, c.n_iter
            )));
        }
        if c.thin == 0 {
            return Err(Error::InvalidInput("thin must be at least 1".into()));
        }
        if c.n_chains == 0 {
            return Err(Error::InvalidInput("need at least one chain".into()));
        }
        if let Some(h) = &self.ig_hyper {
            h.validate()?;
        }
        for (name, p) in [("rho_prior", self.rho_prior), ("phi_prior", self.phi_prior)] {
            if !(p.a > 0.0 && p.b > 0.0) {
                return Err(Error::InvalidInput(format!("{name} parameters must be positive")));
            }
        }
        if !(self.mh_b > 0.0) {
            return Err(Error::InvalidInput("mh_b must be positive".into()));
        }
        if !(self.eb_prior_cv > 0.0) {
            return Err(Error::InvalidInput("eb_prior_cv must be positive".into()));
        }
        if self.det_refresh_flips == 0 {
            return Err(Error::InvalidInput("det_refresh_flips must be at least 1".into()));
        }
        for t in [self.alpha_threshold, self.beta_threshold] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidInput("barrier thresholds must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Inverse-Gamma `(shape, rate)`; limiting improper forms are allowed
/// (`rate = 0`, or negative shape for `p(τ²) ∝ τ⁻¹`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgParams {
    pub shape: f64,
    pub rate: f64,
}

impl IgParams {
    /// Conjugate update with `k` normal terms contributing quadratic form `q`.
    pub fn posterior(self, k: usize, q: f64) -> IgParams {
        IgParams {
            shape: self.shape + 0.5 * k as f64,
            rate: self.rate + 0.5 * q,
        }
    }

    pub fn mean(&self) -> f64 {
        self.rate / (self.shape - 1.0)
    }
}

/// Resolved priors for the variance parameters. `tau_gamma = None` puts a
/// flat prior on `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub sigma: IgParams,
    pub tau_alpha: IgParams,
    pub tau_beta: IgParams,
    pub tau_gamma: Option<IgParams>,
}

impl PriorSpec {
    pub fn from_hyper(h: &IgHyper) -> Self {
        PriorSpec {
            sigma: IgParams {
                shape: h.a_sigma,
                rate: h.b_sigma,
            },
            tau_alpha: IgParams {
                shape: h.a_alpha,
                rate: h.b_alpha,
            },
            tau_beta: IgParams {
                shape: h.a_beta,
                rate: h.b_beta,
            },
            tau_gamma: Some(IgParams {
                shape: h.a_gamma,
                rate: h.b_gamma,
            }),
        }
    }
}

/// Flat `γ`, `p(σ²) ∝ σ⁻²` and `p(τ²) ∝ τ⁻¹`, written as limiting
/// Inverse-Gamma forms: `σ²` has shape 0 / rate 0, each `τ²` shape −½ /
/// rate 0.
pub fn noninformative_prior() -> PriorSpec {
    let tau = IgParams { shape: -0.5, rate: 0.0 };
    PriorSpec {
        sigma: IgParams { shape: 0.0, rate: 0.0 },
        tau_alpha: tau,
        tau_beta: tau,
        tau_gamma: None,
    }
}

/// Variance estimates from the unshrunk fit that anchor empirical-Bayes
/// tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimates {
    pub sigma2: f64,
    pub tau2_alpha: f64,
    pub tau2_beta: f64,
    pub tau2_gamma: f64,
}

/// Inverse-Gamma pair with mean `m` and coefficient of variation `cv`:
/// `a = 2 + 1/cv²`, `b = m (a − 1)`.
pub fn ig_from_mean_cv(m: f64, cv: f64) -> IgParams {
    let shape = 2.0 + 1.0 / (cv * cv);
    IgParams {
        shape,
        rate: m * (shape - 1.0),
    }
}

/// Hyperparameters whose prior means equal the given variance estimates.
pub fn tune_empirical_bayes(est: &VarianceEstimates, cv: f64) -> Result<IgHyper> {
    let vals = [est.sigma2, est.tau2_alpha, est.tau2_beta, est.tau2_gamma];
    if vals.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "degenerate no-shrinkage fit: variance estimates {vals:?} must be positive"
        )));
    }
    let s = ig_from_mean_cv(est.sigma2, cv);
    let a = ig_from_mean_cv(est.tau2_alpha, cv);
    let b = ig_from_mean_cv(est.tau2_beta, cv);
    let g = ig_from_mean_cv(est.tau2_gamma, cv);
    Ok(IgHyper {
        a_sigma: s.shape,
        b_sigma: s.rate,
        a_alpha: a.shape,
        b_alpha: a.rate,
        a_beta: b.shape,
        b_beta: b.rate,
        a_gamma: g.shape,
        b_gamma: g.rate,
    })
}

/// Index layout of `θ = (γ, α, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    pub d: usize,
    pub n: usize,
}

impl ThetaLayout {
    pub fn dim(&self) -> usize {
        self.d + 2 * self.n
    }
    pub fn gamma(&self, j: usize) -> usize {
        j
    }
    pub fn alpha(&self, i: usize) -> usize {
        self.d + i
    }
    pub fn beta(&self, i: usize) -> usize {
        self.d + self.n + i
    }
}

/// Current values of every sampled quantity.
///
/// Border weights are indexed by the base graph's edge list; `true` means
/// the border is active (`w = 1`). They are empty when that coefficient's
/// borders are fixed. Families without a CAR prior keep `rho = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaState {
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha0: f64,
    pub beta0: f64,
    pub sigma2: f64,
    pub tau2_alpha: f64,
    pub tau2_beta: f64,
    pub tau2_gamma: f64,
    pub rho: f64,
    pub w_alpha: Vec<bool>,
    pub w_beta: Vec<bool>,
    pub phi_alpha: f64,
    pub phi_beta: f64,
}

impl ThetaState {
    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout {
            d: self.gamma.len(),
            n: self.alpha.len(),
        }
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.gamma.len() + 2 * self.alpha.len());
        t.extend_from_slice(&self.gamma);
        t.extend_from_slice(&self.alpha);
        t.extend_from_slice(&self.beta);
        t
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        let l = self.layout();
        assert_eq!(theta.len(), l.dim());
        self.gamma.copy_from_slice(&theta[..l.d]);
        self.alpha.copy_from_slice(&theta[l.d..l.d + l.n]);
        self.beta.copy_from_slice(&theta[l.d + l.n..]);
    }

    pub fn validate(&self, n_edges: usize) -> Result<()> {
        let vars = [self.sigma2, self.tau2_alpha, self.tau2_beta, self.tau2_gamma];
        if vars.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidInput("variances must be strictly positive".into()));
        }
        if self.alpha.len() != self.beta.len() {
            return Err(Error::Dimension("alpha and beta lengths differ".into()));
        }
        for w in [&self.w_alpha, &self.w_beta] {
            if !w.is_empty() && w.len() != n_edges {
                return Err(Error::Dimension(format!("border vectors must have {n_edges} entries")));
            }
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidInput(format!("rho = {} outside [0, 1)", self.rho)));
        }
        Ok(())
    }
}

/// Which coefficient vector a CAR-related update refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coefficient {
    Alpha,
    Beta,
}

impl Coefficient {
    pub fn name(self) -> &'static str {
        match self {
            Coefficient::Alpha => "alpha",
            Coefficient::Beta => "beta",
        }
    }
}

/// `Σ⁻¹` for the intercepts or slopes under `family` in `state`.
pub fn coefficient_precision(
    family: ModelFamily,
    graph: Option<&AdjacencyGraph>,
    state: &ThetaState,
    which: Coefficient,
) -> Result<SparseSym> {
    let n = state.alpha.len();
    if !family.is_spatial() {
        return Ok(SparseSym::identity(n, 1.0));
    }
    let graph = graph.ok_or_else(|| Error::Dimension(format!("model {family} needs an adjacency graph")))?;
    let active = match which {
        Coefficient::Alpha if family.variable_alpha_borders() => Some(state.w_alpha.as_slice()),
        Coefficient::Beta if family.variable_beta_borders() => Some(state.w_beta.as_slice()),
        _ => None,
    };
    leroux_precision(graph, state.rho, active)
}

/// Prior mean and precision of `θ = (γ, α, β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPrior {
    pub theta0: Vec<f64>,
    pub omega0: SparseSym,
}

/// Block-diagonal prior precision `diag(τ_γ⁻² I, τ_α⁻² Σ_α⁻¹, τ_β⁻² Σ_β⁻¹)`
/// with mean `(0, α₀ 1, β₀ 1)`. A flat `γ` prior contributes a zero block.
pub fn build_joint_prior(
    family: ModelFamily,
    graph: Option<&AdjacencyGraph>,
    state: &ThetaState,
    flat_gamma: bool,
) -> Result<JointPrior> {
    let layout = state.layout();
    let (d, n) = (layout.d, layout.n);
    let prec_a = coefficient_precision(family, graph, state, Coefficient::Alpha)?;
    let prec_b = coefficient_precision(family, graph, state, Coefficient::Beta)?;
    let mut b = SymBuilder::new(layout.dim());
    let g = if flat_gamma { 0.0 } else { 1.0 / state.tau2_gamma };
    for j in 0..d {
        b.add(j, j, g);
    }
    for (offset, prec, tau2) in [(d, &prec_a, state.tau2_alpha), (d + n, &prec_b, state.tau2_beta)] {
        for i in 0..n {
            for &(j, v) in prec.row_lower(i) {
                b.add(offset + i, offset + j, v / tau2);
            }
        }
    }
    let mut theta0 = vec![0.0; layout.dim()];
    for i in 0..n {
        theta0[layout.alpha(i)] = state.alpha0;
        theta0[layout.beta(i)] = state.beta0;
    }
    Ok(JointPrior {
        theta0,
        omega0: b.build(),
    })
}

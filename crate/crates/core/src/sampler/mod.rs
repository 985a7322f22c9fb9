//! Gibbs sampler for the Bayesian families.
//!
//! One iteration updates, in order: `θ = (γ, α, β)` jointly, the means
//! `α₀, β₀`, the variances, `ρ` (Metropolis-Hastings), the `α` borders, the
//! `β` borders, and the border probabilities. Steps that do not apply to the
//! configured family are skipped.

mod conditionals;
mod design;
mod output;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{fit_ols, OlsFit};
use crate::graph::AdjacencyGraph;
use crate::inputs::{FitInputs, PeriodSplit};
use crate::model::{
    build_joint_prior, coefficient_precision, noninformative_prior, tune_empirical_bayes, Coefficient, IgParams,
    ModelConfig, ModelFamily, PriorMode, PriorSpec, ThetaState,
};
use crate::sparse::{Ordering, SparseSym};

pub use conditionals::{
    centered_quad_form, flip_log_odds, flip_probability, mean_hyper_conditional, phi_conditional, rho_log_acceptance,
    rho_log_target, rho_proposal, sigma2_conditional, tau2_conditional, tau2_gamma_conditional, theta_conditional,
    theta_precision, BorderPrecision, CarTerm, ThetaConditional,
};
pub use design::{DesignMatrix, Observation};
pub use output::{write_draws_csv, ChainOutput, Draw, Posterior};

use conditionals::logistic;

/// Everything a chain needs besides its seed: the design, resolved priors
/// and the starting state.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub config: ModelConfig,
    pub design: DesignMatrix,
    pub graph: Option<AdjacencyGraph>,
    pub prior: PriorSpec,
    /// `γ` held at its first-stage estimate (two-stage fits).
    pub fixed_gamma: Option<Vec<f64>>,
    pub init: ThetaState,
    /// The unshrunk fit used for tuning and initialization.
    pub baseline: OlsFit,
    pub unit_ids: Vec<String>,
    pub covariate_names: Vec<String>,
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// Resolves priors and the starting state for `config` on the training
/// periods of `split`.
pub fn prepare(config: &ModelConfig, inputs: &FitInputs, split: &PeriodSplit) -> Result<PreparedModel> {
    config.validate()?;
    let family = config.family;
    if !family.is_bayesian() {
        return Err(Error::InvalidInput(format!(
            "{family} is fit by least squares, not sampled"
        )));
    }
    if family.is_spatial() && inputs.graph.is_none() {
        return Err(Error::Dimension(format!("model {family} needs an adjacency graph")));
    }
    let baseline = fit_ols(inputs, &split.train, ModelFamily::NoShrinkage)?;
    let est = baseline.variance_estimates()?;
    let prior = match config.prior_mode {
        PriorMode::Noninformative => noninformative_prior(),
        PriorMode::EmpiricalBayes => {
            let h = match &config.ig_hyper {
                Some(h) => *h,
                None => tune_empirical_bayes(&est, config.eb_prior_cv)?,
            };
            PriorSpec::from_hyper(&h)
        }
    };
    let (design, fixed_gamma) = if config.two_stage {
        let d = DesignMatrix::without_covariates(inputs, &split.train, baseline.fit.offset.clone())?;
        (d, Some(baseline.fit.gamma.clone()))
    } else {
        (DesignMatrix::new(inputs, &split.train)?, None)
    };
    let m = inputs.graph.as_ref().map_or(0, AdjacencyGraph::n_edges);
    let init = ThetaState {
        gamma: if config.two_stage {
            Vec::new()
        } else {
            baseline.fit.gamma.clone()
        },
        alpha: baseline.fit.alpha.clone(),
        beta: baseline.fit.beta.clone(),
        alpha0: mean(&baseline.fit.alpha),
        beta0: mean(&baseline.fit.beta),
        sigma2: est.sigma2,
        tau2_alpha: est.tau2_alpha,
        tau2_beta: est.tau2_beta,
        tau2_gamma: est.tau2_gamma,
        rho: if family.is_spatial() { 0.5 } else { 0.0 },
        w_alpha: vec![true; if family.variable_alpha_borders() { m } else { 0 }],
        w_beta: vec![true; if family.variable_beta_borders() { m } else { 0 }],
        phi_alpha: config.phi_prior.mean(),
        phi_beta: config.phi_prior.mean(),
    };
    init.validate(m)?;
    Ok(PreparedModel {
        config: config.clone(),
        design,
        graph: inputs.graph.clone(),
        prior,
        fixed_gamma,
        init,
        baseline,
        unit_ids: inputs.panel.unit_ids().to_vec(),
        covariate_names: inputs.covariates.names().to_vec(),
    })
}

/// Running counters reported with a chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub rho_proposed: u64,
    pub rho_accepted: u64,
    pub flips_alpha: Vec<u64>,
    pub flips_beta: Vec<u64>,
    pub variance_clips: u64,
}

/// A single Markov chain.
#[derive(Debug, Clone)]
pub struct GibbsSampler {
    family: ModelFamily,
    config: ModelConfig,
    design: DesignMatrix,
    graph: Option<AdjacencyGraph>,
    prior: PriorSpec,
    state: ThetaState,
    rng: ChaCha8Rng,
    theta_order: Ordering,
    graph_order: Option<Ordering>,
    hold_means: bool,
    stats: ChainStats,
}

/// RNG for chain `chain` under master seed `seed`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

impl GibbsSampler {
    pub fn new(
        config: ModelConfig,
        design: DesignMatrix,
        graph: Option<AdjacencyGraph>,
        prior: PriorSpec,
        init: ThetaState,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let family = config.family;
        let layout = design.layout();
        if init.layout() != layout {
            return Err(Error::Dimension(format!(
                "state has d = {}, n = {} but design has d = {}, n = {}",
                init.gamma.len(),
                init.alpha.len(),
                layout.d,
                layout.n
            )));
        }
        if family.is_spatial() {
            let g = graph
                .as_ref()
                .ok_or_else(|| Error::Dimension(format!("model {family} needs an adjacency graph")))?;
            if g.n_units() != layout.n {
                return Err(Error::Dimension(format!(
                    "graph has {} units, design has {}",
                    g.n_units(),
                    layout.n
                )));
            }
        }
        let m = graph.as_ref().map_or(0, AdjacencyGraph::n_edges);
        init.validate(m)?;
        if family.variable_alpha_borders() && init.w_alpha.len() != m
            || family.variable_beta_borders() && init.w_beta.len() != m
        {
            return Err(Error::Dimension("initial borders do not match the graph".into()));
        }
        // Fill-reducing order from the densest pattern any state can produce.
        let mut pattern_state = init.clone();
        pattern_state.rho = if family.is_spatial() { 0.5 } else { 0.0 };
        pattern_state.w_alpha.iter_mut().for_each(|w| *w = true);
        pattern_state.w_beta.iter_mut().for_each(|w| *w = true);
        pattern_state.sigma2 = 1.0;
        pattern_state.tau2_gamma = 1.0;
        let pattern = build_joint_prior(family, graph.as_ref(), &pattern_state, false)?
            .omega0
            .add_scaled(design.xtx(), 1.0);
        let tail: Vec<usize> = (0..layout.d).collect();
        let theta_order = Ordering::reverse_cuthill_mckee(&pattern, &tail);
        let graph_order = match (&graph, family.is_spatial()) {
            (Some(g), true) => Some(Ordering::reverse_cuthill_mckee(&g.laplacian_precision(0.5)?, &[])),
            _ => None,
        };
        Ok(GibbsSampler {
            family,
            stats: ChainStats {
                flips_alpha: vec![0; init.w_alpha.len()],
                flips_beta: vec![0; init.w_beta.len()],
                ..ChainStats::default()
            },
            config,
            design,
            graph,
            prior,
            state: init,
            rng,
            theta_order,
            graph_order,
            hold_means: false,
        })
    }

    /// Sampler for `prepared`, chain `chain`. Chains after the first start
    /// from a dispersed perturbation of the prepared state.
    pub fn for_chain(prepared: &PreparedModel, chain: usize) -> Result<Self> {
        let mut rng = chain_rng(prepared.config.chain.seed, chain);
        let mut init = prepared.init.clone();
        if chain > 0 {
            disperse(&mut init, &mut rng, prepared.config.family);
        }
        GibbsSampler::new(
            prepared.config.clone(),
            prepared.design.clone(),
            prepared.graph.clone(),
            prepared.prior,
            init,
            rng,
        )
    }

    pub fn state(&self) -> &ThetaState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut ThetaState {
        &mut self.state
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn graph(&self) -> Option<&AdjacencyGraph> {
        self.graph.as_ref()
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn stats(&self) -> &ChainStats {
        &self.stats
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Keeps `α₀` and `β₀` at their current values.
    pub fn set_hold_means(&mut self, hold: bool) {
        self.hold_means = hold;
    }

    /// Replaces the responses (offset-adjusted, in observation order).
    pub fn set_response(&mut self, y: &[f64]) -> Result<()> {
        self.design.set_response(y)
    }

    fn flat_gamma(&self) -> bool {
        self.prior.tau_gamma.is_none()
    }

    pub fn precision(&self, which: Coefficient) -> Result<SparseSym> {
        coefficient_precision(self.family, self.graph.as_ref(), &self.state, which)
    }

    /// Conditional law of `θ` given everything else.
    pub fn theta_conditional(&self) -> Result<ThetaConditional> {
        let prior = build_joint_prior(self.family, self.graph.as_ref(), &self.state, self.flat_gamma())?;
        theta_conditional(&self.design, &prior, self.state.sigma2, &self.theta_order)
    }

    pub fn update_theta(&mut self) -> Result<()> {
        let cond = self.theta_conditional()?;
        let z: Vec<f64> = (0..cond.mean.len()).map(|_| self.rng.sample(StandardNormal)).collect();
        let theta = cond.draw_from(&z);
        self.state.set_theta(&theta);
        Ok(())
    }

    pub fn mean_hyper_conditional(&self, which: Coefficient) -> Result<(f64, f64)> {
        let p = self.precision(which)?;
        Ok(match which {
            Coefficient::Alpha => mean_hyper_conditional(&p, &self.state.alpha, self.state.tau2_alpha),
            Coefficient::Beta => mean_hyper_conditional(&p, &self.state.beta, self.state.tau2_beta),
        })
    }

    pub fn update_mean_hyper(&mut self, which: Coefficient) -> Result<()> {
        let (m, v) = self.mean_hyper_conditional(which)?;
        let z: f64 = self.rng.sample(StandardNormal);
        let draw = m + v.sqrt() * z;
        match which {
            Coefficient::Alpha => self.state.alpha0 = draw,
            Coefficient::Beta => self.state.beta0 = draw,
        }
        Ok(())
    }

    /// Inverse-Gamma conditionals of `σ²`, `τ_α²`, `τ_β²` and (when
    /// sampled) `τ_γ²`.
    pub fn variance_conditionals(&self) -> Result<(IgParams, IgParams, IgParams, Option<IgParams>)> {
        let theta = self.state.theta();
        let s = sigma2_conditional(self.prior.sigma, &self.design, &theta);
        let pa = self.precision(Coefficient::Alpha)?;
        let pb = self.precision(Coefficient::Beta)?;
        let a = tau2_conditional(self.prior.tau_alpha, &pa, &self.state.alpha, self.state.alpha0);
        let b = tau2_conditional(self.prior.tau_beta, &pb, &self.state.beta, self.state.beta0);
        let g = match self.prior.tau_gamma {
            Some(p) if !self.state.gamma.is_empty() => Some(tau2_gamma_conditional(p, &self.state.gamma)),
            _ => None,
        };
        Ok((s, a, b, g))
    }

    fn draw_ig(&mut self, p: IgParams, what: &str) -> Result<f64> {
        if !(p.shape > 0.0 && p.rate > 0.0) || !p.rate.is_finite() {
            return Err(Error::Numerical(format!(
                "{what} conditional is improper (shape {}, rate {})",
                p.shape, p.rate
            )));
        }
        let g = Gamma::new(p.shape, 1.0 / p.rate).map_err(|e| Error::Numerical(format!("{what}: {e}")))?;
        let v = 1.0 / g.sample(&mut self.rng);
        if v < self.config.variance_floor || !v.is_finite() {
            self.stats.variance_clips += 1;
            Ok(if v.is_finite() {
                self.config.variance_floor
            } else {
                f64::MAX
            })
        } else {
            Ok(v)
        }
    }

    pub fn update_variances(&mut self) -> Result<()> {
        let (s, a, b, g) = self.variance_conditionals()?;
        self.state.sigma2 = self.draw_ig(s, "sigma2")?;
        self.state.tau2_alpha = self.draw_ig(a, "tau2_alpha")?;
        self.state.tau2_beta = self.draw_ig(b, "tau2_beta")?;
        if let Some(g) = g {
            self.state.tau2_gamma = self.draw_ig(g, "tau2_gamma")?;
        }
        Ok(())
    }

    fn car_terms(&self) -> [CarTerm<'_>; 2] {
        let s = &self.state;
        [
            CarTerm {
                values: &s.alpha,
                mean: s.alpha0,
                tau2: s.tau2_alpha,
                active: self.family.variable_alpha_borders().then_some(s.w_alpha.as_slice()),
            },
            CarTerm {
                values: &s.beta,
                mean: s.beta0,
                tau2: s.tau2_beta,
                active: self.family.variable_beta_borders().then_some(s.w_beta.as_slice()),
            },
        ]
    }

    /// Log acceptance ratio for a move of `ρ` to `proposal`.
    pub fn rho_log_acceptance(&self, proposal: f64) -> Result<f64> {
        let (g, o) = self.spatial_parts()?;
        rho_log_acceptance(
            g,
            o,
            self.state.rho,
            proposal,
            &self.car_terms(),
            self.config.rho_prior,
            self.config.mh_b,
        )
    }

    pub fn rho_log_target(&self, rho: f64) -> Result<f64> {
        let (g, o) = self.spatial_parts()?;
        rho_log_target(g, o, rho, &self.car_terms(), self.config.rho_prior)
    }

    fn spatial_parts(&self) -> Result<(&AdjacencyGraph, &Ordering)> {
        match (&self.graph, &self.graph_order) {
            (Some(g), Some(o)) => Ok((g, o)),
            _ => Err(Error::InvalidInput(format!(
                "model {} has no spatial prior",
                self.family
            ))),
        }
    }

    /// Metropolis-Hastings update of `ρ`; returns whether the move was accepted.
    pub fn update_rho(&mut self) -> Result<bool> {
        let p = rho_proposal(self.state.rho, self.config.mh_b);
        let proposal = Beta::new(p.a, p.b)
            .map_err(|e| Error::Numerical(format!("rho proposal: {e}")))?
            .sample(&mut self.rng);
        let u: f64 = self.rng.random();
        self.stats.rho_proposed += 1;
        let la = self.rho_log_acceptance(proposal)?;
        let accept = la.is_finite() && u.ln() < la;
        if accept {
            self.state.rho = proposal;
            self.stats.rho_accepted += 1;
        }
        Ok(accept)
    }

    /// Probability that border `edge` of `which` is active given the rest.
    pub fn flip_probability(&self, which: Coefficient, edge: usize) -> Result<f64> {
        let (g, o) = self.spatial_parts()?;
        let s = &self.state;
        let (w, v, tau2, phi) = self.border_parts(which)?;
        flip_probability(g, o, s.rho, w, v, tau2, phi, edge)
    }

    fn border_parts(&self, which: Coefficient) -> Result<(&[bool], &[f64], f64, f64)> {
        let s = &self.state;
        let variable = match which {
            Coefficient::Alpha => self.family.variable_alpha_borders(),
            Coefficient::Beta => self.family.variable_beta_borders(),
        };
        if !variable {
            return Err(Error::InvalidInput(format!(
                "model {} keeps the {} borders fixed",
                self.family,
                which.name()
            )));
        }
        Ok(match which {
            Coefficient::Alpha => (&s.w_alpha, &s.alpha, s.tau2_alpha, s.phi_alpha),
            Coefficient::Beta => (&s.w_beta, &s.beta, s.tau2_beta, s.phi_beta),
        })
    }

    /// Systematic scan over the base edges, drawing each border indicator
    /// from its conditional.
    pub fn update_borders(&mut self, which: Coefficient) -> Result<()> {
        let (w, v, tau2, phi) = self.border_parts(which)?;
        let (w, v) = (w.to_vec(), v.to_vec());
        let rho = self.state.rho;
        let (g, o) = match (&self.graph, &self.graph_order) {
            (Some(g), Some(o)) => (g, o),
            _ => unreachable!("variable borders imply a spatial model"),
        };
        let mut bp = BorderPrecision::new(g, o, rho, w, self.config.det_refresh_flips)?;
        let mut flips = Vec::new();
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            let lo = flip_log_odds(bp.det_ratio(e), rho, v[i], v[j], tau2, phi);
            let on = self.rng.random::<f64>() < logistic(lo);
            if on != bp.active()[e] {
                bp.set(e, on)?;
                flips.push(e);
            }
        }
        let w = bp.into_active();
        let counts = match which {
            Coefficient::Alpha => {
                self.state.w_alpha = w;
                &mut self.stats.flips_alpha
            }
            Coefficient::Beta => {
                self.state.w_beta = w;
                &mut self.stats.flips_beta
            }
        };
        for e in flips {
            counts[e] += 1;
        }
        Ok(())
    }

    pub fn update_phi(&mut self, which: Coefficient) -> Result<()> {
        let (w, ..) = self.border_parts(which)?;
        let p = phi_conditional(self.config.phi_prior, w);
        let draw = Beta::new(p.a, p.b)
            .map_err(|e| Error::Numerical(format!("phi: {e}")))?
            .sample(&mut self.rng);
        // keep the log-odds finite
        let draw = draw.clamp(1e-12, 1.0 - 1e-12);
        match which {
            Coefficient::Alpha => self.state.phi_alpha = draw,
            Coefficient::Beta => self.state.phi_beta = draw,
        }
        Ok(())
    }

    /// One full scan.
    pub fn step(&mut self) -> Result<()> {
        self.update_theta()?;
        if !self.hold_means {
            self.update_mean_hyper(Coefficient::Alpha)?;
            self.update_mean_hyper(Coefficient::Beta)?;
        }
        self.update_variances()?;
        if self.family.is_spatial() {
            self.update_rho()?;
        }
        if self.family.variable_alpha_borders() {
            self.update_borders(Coefficient::Alpha)?;
        }
        if self.family.variable_beta_borders() {
            self.update_borders(Coefficient::Beta)?;
        }
        if self.family.variable_alpha_borders() {
            self.update_phi(Coefficient::Alpha)?;
        }
        if self.family.variable_beta_borders() {
            self.update_phi(Coefficient::Beta)?;
        }
        Ok(())
    }

    /// Current state as a stored draw.
    pub fn snapshot(&self, fixed_gamma: Option<&[f64]>) -> Draw {
        let s = &self.state;
        let f = self.family;
        Draw {
            gamma: fixed_gamma.map_or_else(|| s.gamma.clone(), <[f64]>::to_vec),
            alpha: s.alpha.clone(),
            beta: s.beta.clone(),
            alpha0: s.alpha0,
            beta0: s.beta0,
            sigma2: s.sigma2,
            tau2_alpha: s.tau2_alpha,
            tau2_beta: s.tau2_beta,
            tau2_gamma: (self.prior.tau_gamma.is_some() && !s.gamma.is_empty()).then_some(s.tau2_gamma),
            rho: f.is_spatial().then_some(s.rho),
            w_alpha: f.variable_alpha_borders().then(|| s.w_alpha.clone()),
            w_beta: f.variable_beta_borders().then(|| s.w_beta.clone()),
            phi_alpha: f.variable_alpha_borders().then_some(s.phi_alpha),
            phi_beta: f.variable_beta_borders().then_some(s.phi_beta),
        }
    }
}

fn disperse(state: &mut ThetaState, rng: &mut ChaCha8Rng, family: ModelFamily) {
    let mut z = || -> f64 { rng.sample(StandardNormal) };
    let n = state.alpha.len().max(1) as f64;
    state.alpha0 += 2.0 * (state.tau2_alpha / n).sqrt() * z();
    state.beta0 += 2.0 * (state.tau2_beta / n).sqrt() * z();
    state.sigma2 *= (0.5 * z()).exp();
    state.tau2_alpha *= (0.5 * z()).exp();
    state.tau2_beta *= (0.5 * z()).exp();
    if family.is_spatial() {
        state.rho = (0.5 + 0.15 * z()).clamp(0.05, 0.95);
    }
}

/// Runs chain `chain` of `prepared` to completion.
pub fn run_chain(prepared: &PreparedModel, chain: usize) -> Result<ChainOutput> {
    let mut sampler = GibbsSampler::for_chain(prepared, chain)?;
    let c = prepared.config.chain;
    let mut draws = Vec::with_capacity(c.retained());
    let fixed = prepared.fixed_gamma.as_deref();
    for it in 0..c.n_iter {
        sampler
            .step()
            .map_err(|e| Error::Numerical(format!("chain {chain}, iteration {it}: {e}")))?;
        if it >= c.burn_in && (it - c.burn_in + 1).is_multiple_of(c.thin) {
            draws.push(sampler.snapshot(fixed));
        }
    }
    debug_assert_eq!(draws.len(), c.retained());
    let stats = sampler.stats().clone();
    let family = prepared.config.family;
    if stats.variance_clips > 0 {
        log::warn!(
            "chain {chain}: {} variance draws clipped at the floor",
            stats.variance_clips
        );
    }
    log::debug!("chain {chain}: {} draws retained", draws.len());
    Ok(ChainOutput {
        family,
        chain,
        seed: c.seed,
        unit_ids: prepared.unit_ids.clone(),
        covariate_names: prepared.covariate_names.clone(),
        edges: prepared.graph.as_ref().map(edge_ids).unwrap_or_default(),
        draws,
        rho_acceptance: family
            .is_spatial()
            .then(|| stats.rho_accepted as f64 / stats.rho_proposed.max(1) as f64),
        flips_alpha: family.variable_alpha_borders().then_some(stats.flips_alpha),
        flips_beta: family.variable_beta_borders().then_some(stats.flips_beta),
        variance_clips: stats.variance_clips,
        config: prepared.config.clone(),
    })
}

/// Runs every configured chain, in parallel, and collects them in chain
/// order.
pub fn run_chains(prepared: &PreparedModel) -> Result<Posterior> {
    let chains = (0..prepared.config.chain.n_chains)
        .into_par_iter()
        .map(|c| run_chain(prepared, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(Posterior { chains })
}

/// Edge endpoints as unit ids, in edge-index order.
pub fn edge_ids(graph: &AdjacencyGraph) -> Vec<(String, String)> {
    let ids = graph.unit_ids();
    graph
        .edges()
        .iter()
        .map(|&(a, b)| (ids[a].clone(), ids[b].clone()))
        .collect()
}

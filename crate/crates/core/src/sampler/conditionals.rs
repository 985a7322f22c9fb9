//! Full conditional distributions, as pure functions of the current state.

use statrs::distribution::{Beta as BetaDist, Continuous};

use crate::error::{Error, Result};
use crate::graph::{leroux_precision, AdjacencyGraph};
use crate::model::{BetaPrior, IgParams, JointPrior};
use crate::sparse::{dot, EnvelopeCholesky, Ordering, SparseSym};

use super::design::DesignMatrix;

/// Gaussian conditional of `θ`: mean `Q⁻¹b` and the factor of `Q`.
#[derive(Debug, Clone)]
pub struct ThetaConditional {
    pub mean: Vec<f64>,
    pub factor: EnvelopeCholesky,
}

impl ThetaConditional {
    /// Dense covariance `Q⁻¹`. Small problems only.
    pub fn covariance_dense(&self) -> Vec<Vec<f64>> {
        self.factor.inverse_dense()
    }

    /// `mean + L⁻ᵀz`; distributed as the conditional when `z` is standard normal.
    pub fn draw_from(&self, z: &[f64]) -> Vec<f64> {
        let c = self.factor.correlate(z);
        self.mean.iter().zip(&c).map(|(m, e)| m + e).collect()
    }
}

/// `Q = Ω₀ + XᵀX/σ²` and `b = Ω₀θ₀ + Xᵀy/σ²`.
pub fn theta_precision(design: &DesignMatrix, prior: &JointPrior, sigma2: f64) -> (SparseSym, Vec<f64>) {
    let q = prior.omega0.add_scaled(design.xtx(), 1.0 / sigma2);
    let mut b = prior.omega0.mul_vec(&prior.theta0);
    for (bi, xy) in b.iter_mut().zip(design.xty()) {
        *bi += xy / sigma2;
    }
    (q, b)
}

pub fn theta_conditional(
    design: &DesignMatrix,
    prior: &JointPrior,
    sigma2: f64,
    ordering: &Ordering,
) -> Result<ThetaConditional> {
    let (q, b) = theta_precision(design, prior, sigma2);
    let factor = EnvelopeCholesky::factor(&q, ordering)?;
    let mean = factor.solve(&b);
    Ok(ThetaConditional { mean, factor })
}

/// Conditional mean and variance of `v₀` in `v ~ N(v₀1, τ²Σ)` under a flat
/// prior: `N(1ᵀΣ⁻¹v / 1ᵀΣ⁻¹1, τ² / 1ᵀΣ⁻¹1)`.
pub fn mean_hyper_conditional(precision: &SparseSym, v: &[f64], tau2: f64) -> (f64, f64) {
    let ones = vec![1.0; v.len()];
    let p1 = precision.mul_vec(&ones);
    let s = p1.iter().sum::<f64>();
    let num = dot(&p1, v);
    (num / s, tau2 / s)
}

/// `(v − v₀1)ᵀ Σ⁻¹ (v − v₀1)`.
pub fn centered_quad_form(precision: &SparseSym, v: &[f64], v0: f64) -> f64 {
    let c: Vec<f64> = v.iter().map(|x| x - v0).collect();
    precision.quad_form(&c)
}

pub fn sigma2_conditional(prior: IgParams, design: &DesignMatrix, theta: &[f64]) -> IgParams {
    prior.posterior(design.n_obs(), design.residual_ss(theta))
}

pub fn tau2_conditional(prior: IgParams, precision: &SparseSym, v: &[f64], v0: f64) -> IgParams {
    prior.posterior(v.len(), centered_quad_form(precision, v, v0))
}

pub fn tau2_gamma_conditional(prior: IgParams, gamma: &[f64]) -> IgParams {
    prior.posterior(gamma.len(), gamma.iter().map(|g| g * g).sum())
}

/// Posterior of a border probability after observing the border indicators.
pub fn phi_conditional(prior: BetaPrior, w: &[bool]) -> BetaPrior {
    let on = w.iter().filter(|&&x| x).count() as f64;
    BetaPrior {
        a: prior.a + on,
        b: prior.b + (w.len() as f64 - on),
    }
}

/// One CAR-distributed coefficient vector entering the `ρ` target.
#[derive(Debug, Clone, Copy)]
pub struct CarTerm<'a> {
    pub values: &'a [f64],
    pub mean: f64,
    pub tau2: f64,
    /// Active borders; `None` uses every base edge.
    pub active: Option<&'a [bool]>,
}

/// Log of the unnormalized conditional density of `ρ`: the CAR densities
/// of every term plus the Beta prior.
pub fn rho_log_target(
    graph: &AdjacencyGraph,
    ordering: &Ordering,
    rho: f64,
    terms: &[CarTerm<'_>],
    prior: BetaPrior,
) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut lp = (prior.a - 1.0) * rho.ln() + (prior.b - 1.0) * (1.0 - rho).ln();
    for t in terms {
        let p = leroux_precision(graph, rho, t.active)?;
        let f = EnvelopeCholesky::factor(&p, ordering)?;
        lp += 0.5 * f.log_det() - centered_quad_form(&p, t.values, t.mean) / (2.0 * t.tau2);
    }
    Ok(lp)
}

/// Parameters of the Beta proposal centred at `ρ`: `Beta(bρ/(1−ρ), b)`,
/// whose mean is `ρ`.
pub fn rho_proposal(rho: f64, b: f64) -> BetaPrior {
    BetaPrior {
        a: b * rho / (1.0 - rho),
        b,
    }
}

pub(crate) fn beta_ln_pdf(p: BetaPrior, x: f64) -> f64 {
    match BetaDist::new(p.a, p.b) {
        Ok(d) => d.ln_pdf(x),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Log Metropolis-Hastings ratio for moving from `rho` to `proposal`.
pub fn rho_log_acceptance(
    graph: &AdjacencyGraph,
    ordering: &Ordering,
    rho: f64,
    proposal: f64,
    terms: &[CarTerm<'_>],
    prior: BetaPrior,
    mh_b: f64,
) -> Result<f64> {
    if !(proposal > 0.0 && proposal < 1.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let target =
        rho_log_target(graph, ordering, proposal, terms, prior)? - rho_log_target(graph, ordering, rho, terms, prior)?;
    let forward = beta_ln_pdf(rho_proposal(rho, mh_b), proposal);
    let backward = beta_ln_pdf(rho_proposal(proposal, mh_b), rho);
    Ok(target + backward - forward)
}

/// Solver for `A⁻¹x` where `A` is a factored matrix plus a short list of
/// rank-one updates `s_k u_k u_kᵀ` with `u_k = e_i − e_j`, applied through
/// the Sherman-Morrison product form.
#[derive(Debug, Clone)]
struct RankOneSolver {
    base: EnvelopeCholesky,
    // (i, j, s, A_{k−1}⁻¹u_k, 1 + s u_kᵀA_{k−1}⁻¹u_k)
    updates: Vec<(usize, usize, f64, Vec<f64>, f64)>,
}

impl RankOneSolver {
    fn solve(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.base.solve(x);
        for (i, j, s, z, c) in &self.updates {
            let uy = y[*i] - y[*j];
            let f = s * uy / c;
            for (yk, zk) in y.iter_mut().zip(z) {
                *yk -= f * zk;
            }
        }
        y
    }

    fn solve_edge(&self, i: usize, j: usize) -> Vec<f64> {
        let mut u = vec![0.0; self.base.dim()];
        u[i] = 1.0;
        u[j] = -1.0;
        self.solve(&u)
    }

    fn push(&mut self, i: usize, j: usize, s: f64) {
        let z = self.solve_edge(i, j);
        let c = 1.0 + s * (z[i] - z[j]);
        self.updates.push((i, j, s, z, c));
    }
}

/// `Σ⁻¹(W) = ρ(D_W − W) + (1−ρ)I` with edge-wise border switches and cheap
/// determinant ratios for single-edge changes.
#[derive(Debug, Clone)]
pub struct BorderPrecision<'g> {
    graph: &'g AdjacencyGraph,
    ordering: &'g Ordering,
    rho: f64,
    active: Vec<bool>,
    solver: RankOneSolver,
    refresh_after: usize,
}

impl<'g> BorderPrecision<'g> {
    pub fn new(
        graph: &'g AdjacencyGraph,
        ordering: &'g Ordering,
        rho: f64,
        active: Vec<bool>,
        refresh_after: usize,
    ) -> Result<Self> {
        if active.len() != graph.n_edges() {
            return Err(Error::Dimension(format!(
                "{} border flags for {} edges",
                active.len(),
                graph.n_edges()
            )));
        }
        let base = Self::factor(graph, ordering, rho, &active)?;
        Ok(BorderPrecision {
            graph,
            ordering,
            rho,
            active,
            solver: RankOneSolver {
                base,
                updates: Vec::new(),
            },
            refresh_after: refresh_after.max(1),
        })
    }

    fn factor(graph: &AdjacencyGraph, ordering: &Ordering, rho: f64, active: &[bool]) -> Result<EnvelopeCholesky> {
        let p = leroux_precision(graph, rho, Some(active))?;
        EnvelopeCholesky::factor(&p, ordering)
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn into_active(self) -> Vec<bool> {
        self.active
    }

    /// `det Σ⁻¹(w_e = 1) / det Σ⁻¹(w_e = 0)` with all other borders as they
    /// are, by the matrix determinant lemma on `ρ u uᵀ`, `u = e_i − e_j`.
    pub fn det_ratio(&self, edge: usize) -> f64 {
        let (i, j) = self.graph.edges()[edge];
        let z = self.solver.solve_edge(i, j);
        let r = self.rho * (z[i] - z[j]);
        if self.active[edge] {
            1.0 / (1.0 - r)
        } else {
            1.0 + r
        }
    }

    /// Sets border `edge`; refactors after `refresh_after` pending updates.
    pub fn set(&mut self, edge: usize, on: bool) -> Result<()> {
        if self.active[edge] == on {
            return Ok(());
        }
        self.active[edge] = on;
        if self.solver.updates.len() + 1 >= self.refresh_after {
            self.refresh()
        } else {
            let (i, j) = self.graph.edges()[edge];
            self.solver.push(i, j, if on { self.rho } else { -self.rho });
            Ok(())
        }
    }

    /// Refactors from scratch, dropping accumulated updates.
    pub fn refresh(&mut self) -> Result<()> {
        self.solver.base = Self::factor(self.graph, self.ordering, self.rho, &self.active)?;
        self.solver.updates.clear();
        Ok(())
    }
}

/// Log-odds of `w_e = 1` given everything else:
/// `½ log det-ratio − ρ(v_i − v_j)²/(2τ²) + log(φ/(1−φ))`.
pub fn flip_log_odds(det_ratio: f64, rho: f64, vi: f64, vj: f64, tau2: f64, phi: f64) -> f64 {
    0.5 * det_ratio.ln() - rho * (vi - vj) * (vi - vj) / (2.0 * tau2) + (phi / (1.0 - phi)).ln()
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Conditional probability that border `edge` is active (`w = 1`).
#[allow(clippy::too_many_arguments)]
pub fn flip_probability(
    graph: &AdjacencyGraph,
    ordering: &Ordering,
    rho: f64,
    active: &[bool],
    values: &[f64],
    tau2: f64,
    phi: f64,
    edge: usize,
) -> Result<f64> {
    let bp = BorderPrecision::new(graph, ordering, rho, active.to_vec(), usize::MAX)?;
    let (i, j) = graph.edges()[edge];
    let lo = flip_log_odds(bp.det_ratio(edge), rho, values[i], values[j], tau2, phi);
    Ok(logistic(lo))
}

//! Simulation from the generative model, plus brute-force dense and
//! enumeration oracles for small problems.
//!
//! The oracles rebuild every matrix densely from the edge list and the raw
//! observations and use nalgebra factorizations; they do not call into the
//! sparse code used by the sampler.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::areal::{ihs_inverse, ArealPanel, CovariateMatrix};
use crate::error::{Error, Result};
use crate::graph::{leroux_precision, AdjacencyGraph, UnitGeometry};
use crate::inputs::FitInputs;
use crate::model::{IgParams, ModelFamily, PriorSpec, ThetaState};
use crate::sampler::DesignMatrix;
use crate::sparse::{EnvelopeCholesky, Ordering};

/// Base adjacency for a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphShape {
    /// Queen-contiguous `rows × cols` lattice.
    Grid {
        rows: usize,
        cols: usize,
    },
    Cycle {
        n: usize,
    },
    Path {
        n: usize,
    },
    Custom {
        n: usize,
        edges: Vec<(usize, usize)>,
    },
}

impl GraphShape {
    /// Graph with unit ids `u000`, `u001`, … .
    pub fn build(&self) -> Result<AdjacencyGraph> {
        let (n, edges): (usize, Vec<(usize, usize)>) = match self {
            GraphShape::Grid { rows, cols } => {
                let (r, c) = (*rows, *cols);
                let id = |i: usize, j: usize| i * c + j;
                let mut e = Vec::new();
                for i in 0..r {
                    for j in 0..c {
                        if j + 1 < c {
                            e.push((id(i, j), id(i, j + 1)));
                        }
                        if i + 1 < r {
                            e.push((id(i, j), id(i + 1, j)));
                            if j + 1 < c {
                                e.push((id(i, j), id(i + 1, j + 1)));
                            }
                            if j > 0 {
                                e.push((id(i, j), id(i + 1, j - 1)));
                            }
                        }
                    }
                }
                (r * c, e)
            }
            GraphShape::Cycle { n } => {
                if *n < 3 {
                    return Err(Error::InvalidInput("a cycle needs at least three units".into()));
                }
                (*n, (0..*n).map(|i| (i, (i + 1) % n)).collect())
            }
            GraphShape::Path { n } => (*n, (1..*n).map(|i| (i - 1, i)).collect()),
            GraphShape::Custom { n, edges } => (*n, edges.clone()),
        };
        if n == 0 {
            return Err(Error::InvalidInput("graph needs at least one unit".into()));
        }
        AdjacencyGraph::new(unit_ids(n), edges)
    }
}

impl GraphShape {
    /// Unit squares laid out row by row for grids; other shapes have no
    /// geometry.
    pub fn polygons(&self) -> Option<Vec<UnitGeometry>> {
        let GraphShape::Grid { rows, cols } = *self else {
            return None;
        };
        let ids = unit_ids(rows * cols);
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let (x, y) = (j as f64, -(i as f64));
                out.push(UnitGeometry {
                    unit_id: ids[i * cols + j].clone(),
                    rings: vec![vec![[x, y], [x + 1.0, y], [x + 1.0, y - 1.0], [x, y - 1.0], [x, y]]],
                });
            }
        }
        Some(out)
    }
}

pub fn unit_ids(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(3);
    (0..n).map(|i| format!("u{i:0width$}")).collect()
}

/// Parameters of a synthetic data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub graph: GraphShape,
    pub n_periods: usize,
    pub first_period: i64,
    pub alpha0: f64,
    pub beta0: f64,
    pub tau2_alpha: f64,
    pub tau2_beta: f64,
    pub sigma2: f64,
    pub rho: f64,
    /// Edges (as unit-index pairs) switched off in the `α` prior.
    pub barriers_alpha: Vec<(usize, usize)>,
    pub barriers_beta: Vec<(usize, usize)>,
    /// One entry per covariate; covariates are iid standard normal, then
    /// standardized.
    pub gamma: Vec<f64>,
    /// Deterministic per-unit shifts added to the drawn coefficients.
    pub alpha_offsets: Option<Vec<f64>>,
    pub beta_offsets: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            graph: GraphShape::Grid { rows: 10, cols: 10 },
            n_periods: 10,
            first_period: 2006,
            alpha0: 2.0,
            beta0: -0.03,
            tau2_alpha: 0.5,
            tau2_beta: 0.002,
            sigma2: 0.1,
            rho: 0.8,
            barriers_alpha: Vec::new(),
            barriers_beta: Vec::new(),
            gamma: Vec::new(),
            alpha_offsets: None,
            beta_offsets: None,
            seed: 0,
        }
    }
}

/// The generating values behind a synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Noise-bearing responses before rounding to counts.
    pub y: Vec<Vec<f64>>,
    pub w_alpha: Vec<bool>,
    pub w_beta: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    /// Panel built from the rounded counts.
    pub panel: ArealPanel,
    /// Same panel with the exact real-valued responses.
    pub exact_panel: ArealPanel,
    pub covariates: CovariateMatrix,
    pub graph: AdjacencyGraph,
    pub truth: Truth,
}

impl Synthetic {
    /// Fit inputs over the exact responses.
    pub fn exact_inputs(&self) -> Result<FitInputs> {
        FitInputs::new(
            self.exact_panel.clone(),
            Some(self.covariates.clone()),
            Some(self.graph.clone()),
        )
    }

    /// Fit inputs over the count-derived responses.
    pub fn count_inputs(&self) -> Result<FitInputs> {
        FitInputs::new(
            self.panel.clone(),
            Some(self.covariates.clone()),
            Some(self.graph.clone()),
        )
    }
}

fn barrier_mask(graph: &AdjacencyGraph, barriers: &[(usize, usize)]) -> Result<Vec<bool>> {
    let mut w = vec![true; graph.n_edges()];
    for &(a, b) in barriers {
        let e = graph
            .edge_index(a, b)
            .ok_or_else(|| Error::InvalidInput(format!("planted barrier ({a}, {b}) is not a base edge")))?;
        w[e] = false;
    }
    Ok(w)
}

/// Draws `N(mean·1, τ² Σ)` with `Σ⁻¹ = ρ(D_W − W) + (1−ρ)I`.
fn draw_car(
    graph: &AdjacencyGraph,
    rho: f64,
    active: &[bool],
    mean: f64,
    tau2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let p = leroux_precision(graph, rho, Some(active))?;
    let f = EnvelopeCholesky::factor(&p, &Ordering::reverse_cuthill_mckee(&p, &[]))?;
    let z: Vec<f64> = (0..graph.n_units()).map(|_| rng.sample(StandardNormal)).collect();
    let tau = tau2.sqrt();
    Ok(f.correlate(&z).into_iter().map(|x| mean + tau * x).collect())
}

/// Simulates a panel from the CAR trend model.
pub fn simulate(spec: &SyntheticSpec) -> Result<Synthetic> {
    if !(0.0..1.0).contains(&spec.rho) {
        return Err(Error::InvalidInput(format!("rho = {} outside [0, 1)", spec.rho)));
    }
    for (name, v) in [
        ("tau2_alpha", spec.tau2_alpha),
        ("tau2_beta", spec.tau2_beta),
        ("sigma2", spec.sigma2),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidInput(format!("{name} must be finite and non-negative")));
        }
    }
    if spec.n_periods == 0 {
        return Err(Error::InvalidInput("need at least one period".into()));
    }
    let graph = spec.graph.build()?;
    let n = graph.n_units();
    for (name, o) in [
        ("alpha_offsets", &spec.alpha_offsets),
        ("beta_offsets", &spec.beta_offsets),
    ] {
        if o.as_ref().is_some_and(|o| o.len() != n) {
            return Err(Error::Dimension(format!("{name} must have {n} entries")));
        }
    }
    let w_alpha = barrier_mask(&graph, &spec.barriers_alpha)?;
    let w_beta = barrier_mask(&graph, &spec.barriers_beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut alpha = draw_car(&graph, spec.rho, &w_alpha, spec.alpha0, spec.tau2_alpha, &mut rng)?;
    let mut beta = draw_car(&graph, spec.rho, &w_beta, spec.beta0, spec.tau2_beta, &mut rng)?;
    if let Some(o) = &spec.alpha_offsets {
        alpha.iter_mut().zip(o).for_each(|(a, d)| *a += d);
    }
    if let Some(o) = &spec.beta_offsets {
        beta.iter_mut().zip(o).for_each(|(b, d)| *b += d);
    }

    let ids = unit_ids(n);
    let d = spec.gamma.len();
    let names: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut covariates = CovariateMatrix::new(ids.clone(), names, raw)?;
    if d > 0 {
        covariates.standardize()?;
    }

    let sigma = spec.sigma2.sqrt();
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let zg: f64 = covariates.row(i).iter().zip(&spec.gamma).map(|(a, b)| a * b).sum();
        let row: Vec<f64> = (1..=spec.n_periods)
            .map(|t| {
                let e: f64 = rng.sample(StandardNormal);
                zg + alpha[i] + beta[i] * t as f64 + sigma * e
            })
            .collect();
        y.push(row);
    }
    let counts: Vec<Vec<u64>> = y
        .iter()
        .map(|r| r.iter().map(|&v| ihs_inverse(v).round().max(0.0) as u64).collect())
        .collect();
    let periods: Vec<i64> = (0..spec.n_periods as i64).map(|k| spec.first_period + k).collect();
    let panel = ArealPanel::from_counts(ids.clone(), periods.clone(), counts)?;
    let exact_panel = ArealPanel::from_responses(ids, periods, y.clone())?;
    Ok(Synthetic {
        panel,
        exact_panel,
        covariates,
        graph,
        truth: Truth {
            alpha,
            beta,
            gamma: spec.gamma.clone(),
            y,
            w_alpha,
            w_beta,
        },
    })
}

/// Largest problem the dense oracle accepts.
pub const DENSE_ORACLE_MAX_UNITS: usize = 50;

/// Exact conditional laws computed densely.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub precision_alpha: DMatrix<f64>,
    pub precision_beta: DMatrix<f64>,
    pub log_det_alpha: f64,
    pub log_det_beta: f64,
    pub theta_mean: DVector<f64>,
    pub theta_cov: DMatrix<f64>,
    /// `(mean, variance)` of `α₀` and `β₀`.
    pub alpha0: (f64, f64),
    pub beta0: (f64, f64),
    pub sigma2: IgParams,
    pub tau2_alpha: IgParams,
    pub tau2_beta: IgParams,
    pub tau2_gamma: Option<IgParams>,
}

/// Dense Leroux precision built entry by entry from the edge list.
pub fn dense_precision(graph: &AdjacencyGraph, rho: f64, active: Option<&[bool]>) -> DMatrix<f64> {
    let n = graph.n_units();
    let mut w = DMatrix::<f64>::zeros(n, n);
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        if active.is_none_or(|a| a[e]) {
            w[(i, j)] = 1.0;
            w[(j, i)] = 1.0;
        }
    }
    let mut p = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let deg: f64 = w.row(i).sum();
        for j in 0..n {
            let lap = if i == j { deg } else { -w[(i, j)] };
            p[(i, j)] = rho * lap + if i == j { 1.0 - rho } else { 0.0 };
        }
    }
    p
}

fn dense_log_det(m: &DMatrix<f64>) -> Result<f64> {
    let c = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("oracle matrix not positive definite".into()))?;
    Ok(2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

fn family_precisions(family: ModelFamily, graph: &AdjacencyGraph, state: &ThetaState) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = state.alpha.len();
    if !family.is_spatial() {
        return (DMatrix::identity(n, n), DMatrix::identity(n, n));
    }
    let wa = family.variable_alpha_borders().then_some(state.w_alpha.as_slice());
    let wb = family.variable_beta_borders().then_some(state.w_beta.as_slice());
    (
        dense_precision(graph, state.rho, wa),
        dense_precision(graph, state.rho, wb),
    )
}

fn quad(p: &DMatrix<f64>, v: &[f64], v0: f64) -> f64 {
    let c = DVector::from_iterator(v.len(), v.iter().map(|x| x - v0));
    (c.transpose() * p * &c)[(0, 0)]
}

/// Every full conditional for `state`, computed densely.
pub fn dense_oracle(
    family: ModelFamily,
    graph: &AdjacencyGraph,
    state: &ThetaState,
    design: &DesignMatrix,
    prior: &PriorSpec,
) -> Result<DenseOracle> {
    let n = state.alpha.len();
    let d = state.gamma.len();
    if n > DENSE_ORACLE_MAX_UNITS {
        return Err(Error::InvalidInput(format!(
            "dense oracle limited to {DENSE_ORACLE_MAX_UNITS} units, got {n}"
        )));
    }
    if graph.n_units() != n {
        return Err(Error::Dimension("graph and state sizes differ".into()));
    }
    let (pa, pb) = family_precisions(family, graph, state);
    let p = d + 2 * n;

    let mut omega = DMatrix::<f64>::zeros(p, p);
    let g_prec = if prior.tau_gamma.is_some() {
        1.0 / state.tau2_gamma
    } else {
        0.0
    };
    for j in 0..d {
        omega[(j, j)] = g_prec;
    }
    for r in 0..n {
        for c in 0..n {
            omega[(d + r, d + c)] = pa[(r, c)] / state.tau2_alpha;
            omega[(d + n + r, d + n + c)] = pb[(r, c)] / state.tau2_beta;
        }
    }
    let mut theta0 = DVector::<f64>::zeros(p);
    for i in 0..n {
        theta0[d + i] = state.alpha0;
        theta0[d + n + i] = state.beta0;
    }

    let obs = design.observations();
    let z = design.covariates();
    let mut x = DMatrix::<f64>::zeros(obs.len(), p);
    let mut y = DVector::<f64>::zeros(obs.len());
    for (k, o) in obs.iter().enumerate() {
        for j in 0..d {
            x[(k, j)] = z[o.unit][j];
        }
        x[(k, d + o.unit)] = 1.0;
        x[(k, d + n + o.unit)] = o.t;
        y[k] = o.y;
    }
    let s2 = state.sigma2;
    let q = &omega + x.transpose() * &x / s2;
    let b = &omega * &theta0 + x.transpose() * &y / s2;
    let q_inv = q
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("oracle precision singular".into()))?;
    let theta_mean = &q_inv * b;

    let mean_hyper = |prec: &DMatrix<f64>, v: &[f64], tau2: f64| {
        let ones = DVector::<f64>::from_element(n, 1.0);
        let vv = DVector::from_column_slice(v);
        let s = (ones.transpose() * prec * &ones)[(0, 0)];
        let num = (ones.transpose() * prec * vv)[(0, 0)];
        (num / s, tau2 / s)
    };

    let mut theta = DVector::<f64>::zeros(p);
    for j in 0..d {
        theta[j] = state.gamma[j];
    }
    for i in 0..n {
        theta[d + i] = state.alpha[i];
        theta[d + n + i] = state.beta[i];
    }
    let resid = &y - &x * &theta;
    let rss = resid.dot(&resid);

    Ok(DenseOracle {
        log_det_alpha: dense_log_det(&pa)?,
        log_det_beta: dense_log_det(&pb)?,
        alpha0: mean_hyper(&pa, &state.alpha, state.tau2_alpha),
        beta0: mean_hyper(&pb, &state.beta, state.tau2_beta),
        sigma2: IgParams {
            shape: prior.sigma.shape + obs.len() as f64 / 2.0,
            rate: prior.sigma.rate + rss / 2.0,
        },
        tau2_alpha: IgParams {
            shape: prior.tau_alpha.shape + n as f64 / 2.0,
            rate: prior.tau_alpha.rate + quad(&pa, &state.alpha, state.alpha0) / 2.0,
        },
        tau2_beta: IgParams {
            shape: prior.tau_beta.shape + n as f64 / 2.0,
            rate: prior.tau_beta.rate + quad(&pb, &state.beta, state.beta0) / 2.0,
        },
        tau2_gamma: prior.tau_gamma.filter(|_| d > 0).map(|g| IgParams {
            shape: g.shape + d as f64 / 2.0,
            rate: g.rate + state.gamma.iter().map(|v| v * v).sum::<f64>() / 2.0,
        }),
        precision_alpha: pa,
        precision_beta: pb,
        theta_mean,
        theta_cov: q_inv,
    })
}

/// Largest number of variable edges [`enumerate_w_posterior`] accepts.
pub const ENUMERATION_MAX_EDGES: usize = 6;

/// Unnormalized log posterior of a border configuration for one coefficient
/// vector: CAR density plus the Bernoulli prior.
fn w_log_posterior(
    graph: &AdjacencyGraph,
    rho: f64,
    w: &[bool],
    v: &[f64],
    v0: f64,
    tau2: f64,
    phi: f64,
) -> Result<f64> {
    let p = dense_precision(graph, rho, Some(w));
    let on = w.iter().filter(|&&x| x).count() as f64;
    let off = w.len() as f64 - on;
    Ok(0.5 * dense_log_det(&p)? - quad(&p, v, v0) / (2.0 * tau2) + on * phi.ln() + off * (1.0 - phi).ln())
}

/// Exact conditional probabilities `P(w_e = 1 | rest)` for every edge,
/// obtained by evaluating the posterior over all `2^m` configurations.
pub fn enumerate_w_posterior(
    graph: &AdjacencyGraph,
    rho: f64,
    current: &[bool],
    values: &[f64],
    mean: f64,
    tau2: f64,
    phi: f64,
) -> Result<Vec<f64>> {
    let m = graph.n_edges();
    if m > ENUMERATION_MAX_EDGES {
        return Err(Error::InvalidInput(format!(
            "enumeration limited to {ENUMERATION_MAX_EDGES} edges, got {m}"
        )));
    }
    if current.len() != m {
        return Err(Error::Dimension("border vector length differs from edge count".into()));
    }
    let mut logp = Vec::with_capacity(1 << m);
    for mask in 0..(1usize << m) {
        let w: Vec<bool> = (0..m).map(|e| mask >> e & 1 == 1).collect();
        logp.push(w_log_posterior(graph, rho, &w, values, mean, tau2, phi)?);
    }
    let base: usize = (0..m).filter(|&e| current[e]).map(|e| 1 << e).sum();
    Ok((0..m)
        .map(|e| {
            let l1 = logp[base | (1 << e)];
            let l0 = logp[base & !(1 << e)];
            1.0 / (1.0 + (l0 - l1).exp())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_polygons_reproduce_queen_graph() {
        let shape = GraphShape::Grid { rows: 3, cols: 4 };
        let polys = shape.polygons().unwrap();
        let from_polys = crate::graph::queen_contiguity(&polys, 1e-9).unwrap();
        assert_eq!(from_polys.id_pairs_sorted(), shape.build().unwrap().id_pairs_sorted());
        assert!(GraphShape::Cycle { n: 5 }.polygons().is_none());
    }

    #[test]
    fn grid_is_queen() {
        let g = GraphShape::Grid { rows: 2, cols: 2 }.build().unwrap();
        assert_eq!(g.n_edges(), 6);
        let g = GraphShape::Grid { rows: 3, cols: 3 }.build().unwrap();
        assert_eq!(g.degree()[0], 3);
        assert_eq!(g.degree()[4], 8);
    }

    #[test]
    fn zero_tau_gives_constant_coefficients() {
        let spec = SyntheticSpec {
            tau2_alpha: 0.0,
            tau2_beta: 0.0,
            graph: GraphShape::Path { n: 5 },
            ..SyntheticSpec::default()
        };
        let s = simulate(&spec).unwrap();
        assert!(s.truth.alpha.iter().all(|&a| a == spec.alpha0));
        assert!(s.truth.beta.iter().all(|&b| b == spec.beta0));
    }

    #[test]
    fn zero_noise_is_exactly_linear() {
        let spec = SyntheticSpec {
            sigma2: 0.0,
            graph: GraphShape::Cycle { n: 6 },
            gamma: vec![0.2, -0.1],
            ..SyntheticSpec::default()
        };
        let s = simulate(&spec).unwrap();
        for row in &s.truth.y {
            let slope = row[1] - row[0];
            for k in 2..row.len() {
                assert!((row[k] - row[k - 1] - slope).abs() < 1e-12);
            }
        }
        for (i, c) in s.panel.counts().unwrap().iter().enumerate() {
            for (k, &c) in c.iter().enumerate() {
                assert_eq!(c, ihs_inverse(s.truth.y[i][k]).round().max(0.0) as u64);
            }
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let spec = SyntheticSpec {
            graph: GraphShape::Grid { rows: 3, cols: 4 },
            gamma: vec![0.1],
            seed: 9,
            ..SyntheticSpec::default()
        };
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.panel, b.panel);
    }

    #[test]
    fn planted_barrier_must_be_an_edge() {
        let spec = SyntheticSpec {
            graph: GraphShape::Path { n: 4 },
            barriers_alpha: vec![(0, 3)],
            ..SyntheticSpec::default()
        };
        assert!(simulate(&spec).is_err());
    }

    #[test]
    fn dense_precision_matches_sparse() {
        let g = GraphShape::Grid { rows: 3, cols: 3 }.build().unwrap();
        let w: Vec<bool> = (0..g.n_edges()).map(|e| e % 3 != 0).collect();
        let dense = dense_precision(&g, 0.7, Some(&w));
        let sparse = leroux_precision(&g, 0.7, Some(&w)).unwrap().to_dense();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(dense[(i, j)], sparse[i][j]);
            }
        }
    }

    #[test]
    fn two_node_log_det() {
        let g = GraphShape::Path { n: 2 }.build().unwrap();
        let p = dense_precision(&g, 0.5, None);
        assert!((dense_log_det(&p).unwrap() - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn enumeration_guards() {
        let g = GraphShape::Grid { rows: 3, cols: 3 }.build().unwrap();
        let m = g.n_edges();
        assert!(enumerate_w_posterior(&g, 0.5, &vec![true; m], &[0.0; 9], 0.0, 1.0, 0.9).is_err());
        let g = GraphShape::Custom { n: 2, edges: vec![] }.build().unwrap();
        assert!(enumerate_w_posterior(&g, 0.5, &[], &[0.0; 2], 0.0, 1.0, 0.9)
            .unwrap()
            .is_empty());
    }
}

//! Full conditionals of the Gibbs sampler against dense and enumeration
//! oracles built with independent linear algebra.

use areltrend::areal::{ArealPanel, CovariateMatrix};
use areltrend::graph::AdjacencyGraph;
use areltrend::inputs::FitInputs;
use areltrend::model::{noninformative_prior, Coefficient, IgHyper, ModelConfig, ModelFamily, PriorSpec, ThetaState};
use areltrend::sampler::{BorderPrecision, DesignMatrix, GibbsSampler};
use areltrend::sparse::Ordering;
use areltrend::synth::{dense_oracle, dense_precision, enumerate_w_posterior, unit_ids};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, Continuous};

const TOL: f64 = 1e-10;

/// Four units on a path, three periods, one covariate.
fn path_inputs() -> FitInputs {
    let ids = unit_ids(4);
    let y = vec![
        vec![1.20, 1.05, 0.91],
        vec![0.40, 0.66, 0.70],
        vec![2.31, 2.02, 2.25],
        vec![-0.15, 0.12, 0.48],
    ];
    let panel = ArealPanel::from_responses(ids.clone(), vec![2010, 2011, 2012], y).unwrap();
    let cov = CovariateMatrix::new(
        ids.clone(),
        vec!["x".into()],
        vec![vec![0.8], vec![-1.1], vec![1.4], vec![-0.3]],
    )
    .unwrap();
    let graph = AdjacencyGraph::new(ids, [(0, 1), (1, 2), (2, 3)]).unwrap();
    FitInputs::new(panel, Some(cov), Some(graph)).unwrap()
}

fn path_state() -> ThetaState {
    ThetaState {
        gamma: vec![0.17],
        alpha: vec![1.1, 0.5, 2.0, 0.05],
        beta: vec![-0.1, 0.12, -0.02, 0.3],
        alpha0: 0.9,
        beta0: 0.04,
        sigma2: 0.21,
        tau2_alpha: 0.6,
        tau2_beta: 0.03,
        tau2_gamma: 0.5,
        rho: 0.65,
        w_alpha: vec![true, false, true],
        w_beta: vec![true, true, false],
        phi_alpha: 0.7,
        phi_beta: 0.85,
    }
}

fn hyper() -> IgHyper {
    IgHyper {
        a_sigma: 3.0,
        b_sigma: 0.4,
        a_alpha: 4.0,
        b_alpha: 1.5,
        a_beta: 2.5,
        b_beta: 0.05,
        a_gamma: 2.0,
        b_gamma: 1.0,
    }
}

fn sampler_for(family: ModelFamily, state: ThetaState, prior: PriorSpec) -> GibbsSampler {
    let inputs = path_inputs();
    let design = DesignMatrix::new(&inputs, &[0, 1, 2]).unwrap();
    let mut state = state;
    if !family.variable_alpha_borders() {
        state.w_alpha.clear();
    }
    if !family.variable_beta_borders() {
        state.w_beta.clear();
    }
    if !family.is_spatial() {
        state.rho = 0.0;
    }
    GibbsSampler::new(
        ModelConfig::for_family(family),
        design,
        inputs.graph.clone(),
        prior,
        state,
        ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap()
}

fn assert_close(what: &str, got: f64, want: f64, tol: f64) {
    assert!((got - want).abs() <= tol, "{what}: got {got}, want {want}");
}

fn check_against_oracle(family: ModelFamily, prior: PriorSpec) {
    let s = sampler_for(family, path_state(), prior);
    let graph = s.graph().unwrap().clone();
    let o = dense_oracle(family, &graph, s.state(), s.design(), s.prior()).unwrap();

    let cond = s.theta_conditional().unwrap();
    let cov = cond.covariance_dense();
    for i in 0..cond.mean.len() {
        assert_close("theta mean", cond.mean[i], o.theta_mean[i], TOL);
        for j in 0..cond.mean.len() {
            assert_close("theta cov", cov[i][j], o.theta_cov[(i, j)], TOL);
        }
    }

    let (m, v) = s.mean_hyper_conditional(Coefficient::Alpha).unwrap();
    assert_close("alpha0 mean", m, o.alpha0.0, TOL);
    assert_close("alpha0 var", v, o.alpha0.1, TOL);
    let (m, v) = s.mean_hyper_conditional(Coefficient::Beta).unwrap();
    assert_close("beta0 mean", m, o.beta0.0, TOL);
    assert_close("beta0 var", v, o.beta0.1, TOL);

    let (sig, ta, tb, tg) = s.variance_conditionals().unwrap();
    for (name, got, want) in [
        ("sigma2", sig, o.sigma2),
        ("tau2_alpha", ta, o.tau2_alpha),
        ("tau2_beta", tb, o.tau2_beta),
    ] {
        assert_close(name, got.shape, want.shape, TOL);
        assert_close(name, got.rate, want.rate, TOL);
    }
    match (tg, o.tau2_gamma) {
        (Some(g), Some(w)) => {
            assert_close("tau2_gamma", g.shape, w.shape, TOL);
            assert_close("tau2_gamma", g.rate, w.rate, TOL);
        }
        (None, None) => {}
        other => panic!("tau2_gamma presence differs: {other:?}"),
    }
}

#[test]
fn conditionals_match_dense_oracle_for_every_family() {
    for family in ModelFamily::ALL.into_iter().filter(|f| f.is_bayesian()) {
        check_against_oracle(family, PriorSpec::from_hyper(&hyper()));
    }
}

#[test]
fn noninformative_conditionals_match_dense_oracle() {
    for family in [ModelFamily::GlobalShrinkage, ModelFamily::VariableBorders] {
        check_against_oracle(family, noninformative_prior());
    }
}

#[test]
fn flip_probabilities_match_enumeration_on_path() {
    let s = sampler_for(
        ModelFamily::VariableBorders,
        path_state(),
        PriorSpec::from_hyper(&hyper()),
    );
    let st = s.state().clone();
    let g = s.graph().unwrap();
    let ea = enumerate_w_posterior(
        g,
        st.rho,
        &st.w_alpha,
        &st.alpha,
        st.alpha0,
        st.tau2_alpha,
        st.phi_alpha,
    )
    .unwrap();
    let eb = enumerate_w_posterior(g, st.rho, &st.w_beta, &st.beta, st.beta0, st.tau2_beta, st.phi_beta).unwrap();
    for e in 0..g.n_edges() {
        assert_close(
            "alpha flip",
            s.flip_probability(Coefficient::Alpha, e).unwrap(),
            ea[e],
            TOL,
        );
        assert_close(
            "beta flip",
            s.flip_probability(Coefficient::Beta, e).unwrap(),
            eb[e],
            TOL,
        );
    }
}

#[test]
fn flip_probabilities_match_enumeration_on_four_cycle() {
    let ids = unit_ids(4);
    let g = AdjacencyGraph::new(ids, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
    let order = Ordering::reverse_cuthill_mckee(&g.laplacian_precision(0.5).unwrap(), &[]);
    let v = [0.3, 1.4, 1.1, -0.6];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let w: Vec<bool> = (0..4).map(|_| rng.random::<bool>()).collect();
        let rho = rng.random_range(0.05..0.95);
        let tau2 = rng.random_range(0.2..3.0);
        let phi = rng.random_range(0.1..0.9);
        let want = enumerate_w_posterior(&g, rho, &w, &v, 0.4, tau2, phi).unwrap();
        for e in 0..4 {
            let got = areltrend::sampler::flip_probability(&g, &order, rho, &w, &v, tau2, phi, e).unwrap();
            assert_close("cycle flip", got, want[e], TOL);
        }
    }
}

#[test]
fn single_edge_flip_matches_direct_density_ratio() {
    let g = AdjacencyGraph::new(unit_ids(2), [(0, 1)]).unwrap();
    let order = Ordering::natural(2);
    let (rho, tau2, phi): (f64, f64, f64) = (0.5, 0.8, 0.9);
    let v = [0.2, 1.0];
    // det(on) = 0.75, det(off) = 0.25; exponent −ρ(0.8)²/(2τ²)
    let odds = (0.75f64 / 0.25).sqrt() * (-rho * 0.64 / (2.0 * tau2)).exp() * phi / (1.0 - phi);
    let want = odds / (1.0 + odds);
    for current in [true, false] {
        let got = areltrend::sampler::flip_probability(&g, &order, rho, &[current], &v, tau2, phi, 0).unwrap();
        assert!((got - want).abs() < 1e-12);
        let e = enumerate_w_posterior(&g, rho, &[current], &v, 0.0, tau2, phi).unwrap();
        assert!((e[0] - want).abs() < 1e-12);
    }
    assert!(enumerate_w_posterior(&g, rho, &[], &[], 0.0, tau2, phi).is_err());
    let empty = AdjacencyGraph::new(unit_ids(2), []).unwrap();
    assert!(enumerate_w_posterior(&empty, rho, &[], &v, 0.0, tau2, phi)
        .unwrap()
        .is_empty());
}

fn random_graph(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> AdjacencyGraph {
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.random_range(0..i), i));
    }
    while edges.len() < n - 1 + extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let e = (a.min(b), a.max(b));
        if a != b && !edges.iter().any(|&(x, y)| (x.min(y), x.max(y)) == e) {
            edges.push(e);
        }
    }
    AdjacencyGraph::new(unit_ids(n), edges).unwrap()
}

#[test]
fn determinant_lemma_matches_dense_ratio_over_random_flips() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let g = random_graph(10, 8, &mut rng);
        let order = Ordering::reverse_cuthill_mckee(&g.laplacian_precision(0.5).unwrap(), &[]);
        let rho = rng.random_range(0.1..0.95);
        let m = g.n_edges();
        let w0: Vec<bool> = (0..m).map(|_| rng.random_bool(0.7)).collect();
        let mut bp = BorderPrecision::new(&g, &order, rho, w0, 32).unwrap();
        for _ in 0..100 {
            let e = rng.random_range(0..m);
            let mut on = bp.active().to_vec();
            on[e] = true;
            let mut off = on.clone();
            off[e] = false;
            let want =
                dense_precision(&g, rho, Some(&on)).determinant() / dense_precision(&g, rho, Some(&off)).determinant();
            let got = bp.det_ratio(e);
            worst = worst.max(((got - want) / want).abs());
            let flip = !bp.active()[e];
            bp.set(e, flip).unwrap();
        }
    }
    assert!(worst <= 1e-10, "worst relative error {worst}");
}

#[test]
fn rho_zero_reduces_to_global_shrinkage() {
    let prior = PriorSpec::from_hyper(&hyper());
    let mut st = path_state();
    st.rho = 0.0;
    let car = sampler_for(ModelFamily::SpatialCar, st.clone(), prior);
    let glob = sampler_for(ModelFamily::GlobalShrinkage, st, prior);
    let (a, b) = (car.theta_conditional().unwrap(), glob.theta_conditional().unwrap());
    let (ca, cb) = (a.covariance_dense(), b.covariance_dense());
    for i in 0..a.mean.len() {
        assert_close("mean", a.mean[i], b.mean[i], 1e-12);
        for j in 0..a.mean.len() {
            assert_close("cov", ca[i][j], cb[i][j], 1e-12);
        }
    }
    for which in [Coefficient::Alpha, Coefficient::Beta] {
        let (m1, v1) = car.mean_hyper_conditional(which).unwrap();
        let (m2, v2) = glob.mean_hyper_conditional(which).unwrap();
        assert_close("hyper mean", m1, m2, 1e-12);
        assert_close("hyper var", v1, v2, 1e-12);
    }
}

/// `N(v; v0 1, τ² Σ)` density with `Σ⁻¹` given densely, evaluated directly.
fn car_density(p: &DMatrix<f64>, v: &[f64], v0: f64, tau2: f64) -> f64 {
    let n = v.len();
    let c = nalgebra::DVector::from_iterator(n, v.iter().map(|x| x - v0));
    let q = (c.transpose() * p * &c)[(0, 0)];
    p.determinant().sqrt() * tau2.powf(-(n as f64) / 2.0) * (-q / (2.0 * tau2)).exp()
        / (2.0 * std::f64::consts::PI).powf(n as f64 / 2.0)
}

#[test]
fn rho_acceptance_matches_direct_density_ratio() {
    let prior = PriorSpec::from_hyper(&hyper());
    let cfg = ModelConfig::default();
    for family in [
        ModelFamily::SpatialCar,
        ModelFamily::VariableBorders,
        ModelFamily::VariableBordersAlphaOnly,
    ] {
        let s = sampler_for(family, path_state(), prior);
        let st = s.state().clone();
        let g = s.graph().unwrap();
        let wa = family.variable_alpha_borders().then_some(st.w_alpha.as_slice());
        let wb = family.variable_beta_borders().then_some(st.w_beta.as_slice());
        let target = |rho: f64| {
            car_density(&dense_precision(g, rho, wa), &st.alpha, st.alpha0, st.tau2_alpha)
                * car_density(&dense_precision(g, rho, wb), &st.beta, st.beta0, st.tau2_beta)
                * Beta::new(cfg.rho_prior.a, cfg.rho_prior.b).unwrap().pdf(rho)
        };
        let proposal = |from: f64, to: f64| Beta::new(cfg.mh_b * from / (1.0 - from), cfg.mh_b).unwrap().pdf(to);
        for rho_star in [0.1, 0.4, 0.65, 0.8, 0.97] {
            let direct =
                (target(rho_star) * proposal(rho_star, st.rho)) / (target(st.rho) * proposal(st.rho, rho_star));
            let got = s.rho_log_acceptance(rho_star).unwrap();
            assert_close("log acceptance", got, direct.ln(), TOL);
        }
    }
}

#[test]
fn noninformative_tau_conditional_matches_grid_integration() {
    let s = sampler_for(ModelFamily::SpatialCar, path_state(), noninformative_prior());
    let st = s.state();
    let g = s.graph().unwrap();
    let p = dense_precision(g, st.rho, None);
    let n = st.alpha.len() as f64;
    let c: Vec<f64> = st.alpha.iter().map(|a| a - st.alpha0).collect();
    let cv = nalgebra::DVector::from_column_slice(&c);
    let q = (cv.transpose() * &p * &cv)[(0, 0)];
    // p(τ²) ∝ (τ²)^(−1/2) times the CAR likelihood in τ²
    let dens = |t: f64| t.powf(-0.5) * t.powf(-n / 2.0) * (-q / (2.0 * t)).exp();
    // integrate on u = ln τ² so the grid covers the heavy tail
    let (lo, hi, k) = (-15.0f64, 60.0f64, 600_000);
    let h = (hi - lo) / k as f64;
    let (mut z, mut m1) = (0.0, 0.0);
    for i in 0..=k {
        let u = lo + i as f64 * h;
        let t = u.exp();
        let wgt = if i == 0 || i == k { 0.5 } else { 1.0 };
        let f = dens(t) * t * wgt;
        z += f;
        m1 += f * t;
    }
    let grid_mean = m1 / z;
    let (_, ta, _, _) = s.variance_conditionals().unwrap();
    assert!(
        (ta.mean() - grid_mean).abs() / grid_mean < 1e-6,
        "{} vs {grid_mean}",
        ta.mean()
    );
}

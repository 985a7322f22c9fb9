use areltrend::graph::leroux_precision;
use areltrend::model::{IgHyper, ModelFamily, PriorSpec, ThetaState};
use areltrend::sampler::DesignMatrix;
use areltrend::synth::{dense_oracle, dense_precision, simulate, GraphShape, SyntheticSpec, DENSE_ORACLE_MAX_UNITS};

#[test]
fn dense_precision_matches_sparse_builder() {
    let g = GraphShape::Grid { rows: 3, cols: 4 }.build().unwrap();
    let active: Vec<bool> = (0..g.n_edges()).map(|e| e % 3 != 0).collect();
    for rho in [0.0, 0.3, 0.9] {
        for w in [None, Some(active.as_slice())] {
            let d = dense_precision(&g, rho, w);
            let s = leroux_precision(&g, rho, w).unwrap().to_dense();
            for i in 0..g.n_units() {
                for j in 0..g.n_units() {
                    assert_eq!(d[(i, j)], s[i][j]);
                }
            }
        }
    }
}

fn two_node_state() -> ThetaState {
    ThetaState {
        gamma: vec![],
        alpha: vec![0.3, 0.7],
        beta: vec![0.0, 0.1],
        alpha0: 0.5,
        beta0: 0.05,
        sigma2: 0.2,
        tau2_alpha: 1.0,
        tau2_beta: 1.0,
        tau2_gamma: 1.0,
        rho: 0.5,
        w_alpha: vec![],
        w_beta: vec![],
        phi_alpha: 0.9,
        phi_beta: 0.9,
    }
}

#[test]
fn two_node_log_det_is_log_three_quarters() {
    let spec = SyntheticSpec {
        graph: GraphShape::Path { n: 2 },
        n_periods: 3,
        ..SyntheticSpec::default()
    };
    let s = simulate(&spec).unwrap();
    let inputs = s.exact_inputs().unwrap();
    let design = DesignMatrix::new(&inputs, &[0, 1, 2]).unwrap();
    let h = IgHyper {
        a_sigma: 2.0,
        b_sigma: 1.0,
        a_alpha: 2.0,
        b_alpha: 1.0,
        a_beta: 2.0,
        b_beta: 1.0,
        a_gamma: 2.0,
        b_gamma: 1.0,
    };
    let o = dense_oracle(
        ModelFamily::SpatialCar,
        &s.graph,
        &two_node_state(),
        &design,
        &PriorSpec::from_hyper(&h),
    )
    .unwrap();
    assert!((o.log_det_alpha - 0.75f64.ln()).abs() < 1e-14);
    // Σ⁻¹ = [[1, −0.5], [−0.5, 1]], centred α = [−0.2, 0.2]
    let q = 0.04 + 0.04 + 2.0 * 0.5 * 0.04;
    assert!((o.tau2_alpha.rate - (1.0 + q / 2.0)).abs() < 1e-12);
}

#[test]
fn oracle_refuses_large_problems() {
    let spec = SyntheticSpec {
        graph: GraphShape::Grid { rows: 8, cols: 8 },
        n_periods: 2,
        ..SyntheticSpec::default()
    };
    let s = simulate(&spec).unwrap();
    assert!(s.graph.n_units() > DENSE_ORACLE_MAX_UNITS);
    let inputs = s.exact_inputs().unwrap();
    let design = DesignMatrix::new(&inputs, &[0, 1]).unwrap();
    let n = s.graph.n_units();
    let state = ThetaState {
        alpha: vec![0.0; n],
        beta: vec![0.0; n],
        ..two_node_state()
    };
    let h = PriorSpec::from_hyper(&IgHyper {
        a_sigma: 2.0,
        b_sigma: 1.0,
        a_alpha: 2.0,
        b_alpha: 1.0,
        a_beta: 2.0,
        b_beta: 1.0,
        a_gamma: 2.0,
        b_gamma: 1.0,
    });
    assert!(dense_oracle(ModelFamily::SpatialCar, &s.graph, &state, &design, &h).is_err());
}

#[test]
fn simulated_coefficients_have_car_covariance() {
    let shape = GraphShape::Grid { rows: 3, cols: 3 };
    let g = shape.build().unwrap();
    let (rho, tau2) = (0.8, 0.5);
    let n = g.n_units();
    let reps = 10_000;
    let mut sum = vec![0.0; n];
    let mut cross = vec![vec![0.0; n]; n];
    for seed in 0..reps {
        let spec = SyntheticSpec {
            graph: shape.clone(),
            n_periods: 1,
            alpha0: 0.0,
            tau2_alpha: tau2,
            rho,
            seed,
            ..SyntheticSpec::default()
        };
        let a = simulate(&spec).unwrap().truth.alpha;
        for i in 0..n {
            sum[i] += a[i];
            for j in 0..n {
                cross[i][j] += a[i] * a[j];
            }
        }
    }
    let cov = dense_precision(&g, rho, None).try_inverse().unwrap() * tau2;
    let k = reps as f64;
    for i in 0..n {
        for j in 0..n {
            let emp = (cross[i][j] - sum[i] * sum[j] / k) / (k - 1.0);
            // entries are compared on the scale of their variances
            let scale = (cov[(i, i)] * cov[(j, j)]).sqrt();
            assert!(
                (emp - cov[(i, j)]).abs() <= 0.05 * scale,
                "({i}, {j}): {emp} vs {}",
                cov[(i, j)]
            );
        }
    }
}

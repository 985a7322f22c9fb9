//! Convergence diagnostics across chains.

use serde::{Deserialize, Serialize};

use crate::sampler::{Draw, Posterior};

/// Gelman-Rubin potential scale reduction of one scalar over equal-length
/// chains. `None` with fewer than two chains or two draws per chain, or
/// when every chain is constant.
pub fn potential_scale_reduction(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min()?;
    if m < 2 || n < 2 {
        return None;
    }
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = n as f64 / (m - 1) as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64)
        .sum::<f64>()
        / m as f64;
    if w <= 0.0 {
        return None;
    }
    let var_plus = (n - 1) as f64 / n as f64 * w + b / n as f64;
    Some((var_plus / w).sqrt())
}

/// Scale reductions of the global scalars of a multi-chain fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReductions {
    pub alpha0: Option<f64>,
    pub beta0: Option<f64>,
    pub sigma2: Option<f64>,
    pub rho: Option<f64>,
}

pub fn scale_reductions(posterior: &Posterior) -> ScaleReductions {
    let per_chain = |f: &dyn Fn(&Draw) -> Option<f64>| -> Option<f64> {
        let chains: Option<Vec<Vec<f64>>> = posterior
            .chains
            .iter()
            .map(|c| c.draws.iter().map(f).collect())
            .collect();
        potential_scale_reduction(&chains?)
    };
    ScaleReductions {
        alpha0: per_chain(&|d| Some(d.alpha0)),
        beta0: per_chain(&|d| Some(d.beta0)),
        sigma2: per_chain(&|d| Some(d.sigma2)),
        rho: per_chain(&|d| d.rho),
    }
}

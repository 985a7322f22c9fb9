use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelFamily};

/// One retained draw. Optional fields are `None` for families without that
/// parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha0: f64,
    pub beta0: f64,
    pub sigma2: f64,
    pub tau2_alpha: f64,
    pub tau2_beta: f64,
    pub tau2_gamma: Option<f64>,
    pub rho: Option<f64>,
    pub w_alpha: Option<Vec<bool>>,
    pub w_beta: Option<Vec<bool>>,
    pub phi_alpha: Option<f64>,
    pub phi_beta: Option<f64>,
}

/// Retained draws of one chain plus its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub family: ModelFamily,
    pub chain: usize,
    pub seed: u64,
    pub unit_ids: Vec<String>,
    pub covariate_names: Vec<String>,
    /// Base edges as unit-id pairs, in border-vector order.
    pub edges: Vec<(String, String)>,
    pub draws: Vec<Draw>,
    pub rho_acceptance: Option<f64>,
    /// Per-edge count of border changes.
    pub flips_alpha: Option<Vec<u64>>,
    pub flips_beta: Option<Vec<u64>>,
    pub variance_clips: u64,
    pub config: ModelConfig,
}

/// Draws from every chain of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub chains: Vec<ChainOutput>,
}

impl Posterior {
    fn first(&self) -> &ChainOutput {
        &self.chains[0]
    }

    pub fn family(&self) -> ModelFamily {
        self.first().family
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.first().unit_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.first().covariate_names
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.first().edges
    }

    /// All draws, chain by chain.
    pub fn draws(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    fn mean_of(&self, f: impl Fn(&Draw) -> &[f64]) -> Vec<f64> {
        let k = self.n_draws() as f64;
        let mut acc: Vec<f64> = Vec::new();
        for d in self.draws() {
            let v = f(d);
            if acc.is_empty() {
                acc = vec![0.0; v.len()];
            }
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        acc.iter().map(|a| a / k).collect()
    }

    pub fn mean_gamma(&self) -> Vec<f64> {
        self.mean_of(|d| &d.gamma)
    }

    pub fn mean_alpha(&self) -> Vec<f64> {
        self.mean_of(|d| &d.alpha)
    }

    pub fn mean_beta(&self) -> Vec<f64> {
        self.mean_of(|d| &d.beta)
    }

    pub fn mean_scalar(&self, f: impl Fn(&Draw) -> f64) -> f64 {
        self.draws().map(f).sum::<f64>() / self.n_draws() as f64
    }
}

fn push_vec(header: &mut Vec<String>, prefix: &str, names: &[String]) {
    header.extend(names.iter().map(|n| format!("{prefix}[{n}]")));
}

/// Writes one row per retained draw.
///
/// Columns, in order: `chain`, `draw`, `gamma[<name>]…`, `alpha[<id>]…`,
/// `beta[<id>]…`, `alpha0`, `beta0`, `sigma2`, `tau2_alpha`, `tau2_beta`,
/// then whichever of `tau2_gamma`, `rho`, `phi_alpha`, `phi_beta`,
/// `w_alpha[<a>|<b>]…`, `w_beta[<a>|<b>]…` the family has.
pub fn write_draws_csv<W: Write>(posterior: &Posterior, out: W) -> Result<()> {
    let first = posterior
        .chains
        .first()
        .ok_or_else(|| Error::InvalidInput("no chains to write".into()))?;
    let Some(d0) = first.draws.first() else {
        return Err(Error::InvalidInput("no draws to write".into()));
    };
    let edge_names: Vec<String> = first.edges.iter().map(|(a, b)| format!("{a}|{b}")).collect();
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    push_vec(&mut header, "gamma", &first.covariate_names);
    push_vec(&mut header, "alpha", &first.unit_ids);
    push_vec(&mut header, "beta", &first.unit_ids);
    for s in ["alpha0", "beta0", "sigma2", "tau2_alpha", "tau2_beta"] {
        header.push(s.into());
    }
    let opt = [
        ("tau2_gamma", d0.tau2_gamma.is_some()),
        ("rho", d0.rho.is_some()),
        ("phi_alpha", d0.phi_alpha.is_some()),
        ("phi_beta", d0.phi_beta.is_some()),
    ];
    for (name, present) in opt {
        if present {
            header.push(name.into());
        }
    }
    if d0.w_alpha.is_some() {
        push_vec(&mut header, "w_alpha", &edge_names);
    }
    if d0.w_beta.is_some() {
        push_vec(&mut header, "w_beta", &edge_names);
    }

    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("writing draws: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for c in &posterior.chains {
        for (k, d) in c.draws.iter().enumerate() {
            row.clear();
            row.push(c.chain.to_string());
            row.push(k.to_string());
            row.extend(d.gamma.iter().chain(&d.alpha).chain(&d.beta).map(f64::to_string));
            for v in [d.alpha0, d.beta0, d.sigma2, d.tau2_alpha, d.tau2_beta] {
                row.push(v.to_string());
            }
            for v in [d.tau2_gamma, d.rho, d.phi_alpha, d.phi_beta].into_iter().flatten() {
                row.push(v.to_string());
            }
            for wv in [&d.w_alpha, &d.w_beta].into_iter().flatten() {
                row.extend(wv.iter().map(|&b| u8::from(b).to_string()));
            }
            if row.len() != header.len() {
                return Err(Error::Dimension("draw shape differs between draws".into()));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("draws.csv", e))?;
    Ok(())
}

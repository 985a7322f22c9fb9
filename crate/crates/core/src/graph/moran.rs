use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::AdjacencyGraph;

/// Moran's I with its null moments under the normality assumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub i: f64,
    pub null_mean: f64,
    pub null_sd: f64,
    /// `(I − null_mean) / null_sd`; `None` when the null SD is zero.
    pub z_score: Option<f64>,
}

fn centered(x: &[f64], graph: &AdjacencyGraph) -> Result<Vec<f64>> {
    let n = graph.n_units();
    if x.len() != n {
        return Err(Error::Dimension(format!("{} values for {} units", x.len(), n)));
    }
    if graph.n_edges() == 0 {
        return Err(Error::InvalidInput("Moran's I needs at least one edge".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ss: f64 = z.iter().map(|v| v * v).sum();
    let scale: f64 = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if ss <= (1e-14 * scale).powi(2) * n as f64 {
        return Err(Error::InvalidInput("Moran's I undefined for a constant vector".into()));
    }
    Ok(z)
}

fn statistic(z: &[f64], graph: &AdjacencyGraph) -> f64 {
    let n = z.len() as f64;
    let s0 = 2.0 * graph.n_edges() as f64;
    let cross: f64 = graph.edges().iter().map(|&(a, b)| 2.0 * z[a] * z[b]).sum();
    let ss: f64 = z.iter().map(|v| v * v).sum();
    n / s0 * cross / ss
}

/// Moran's I with binary symmetric weights.
pub fn morans_i(x: &[f64], graph: &AdjacencyGraph) -> Result<MoranResult> {
    let z = centered(x, graph)?;
    let i = statistic(&z, graph);
    let n = graph.n_units() as f64;
    let m = graph.n_edges() as f64;
    let s0 = 2.0 * m;
    let s1 = 4.0 * m;
    let s2: f64 = graph.degree().iter().map(|&d| 4.0 * (d as f64).powi(2)).sum();
    let null_mean = -1.0 / (n - 1.0);
    let second = (n * n * s1 - n * s2 + 3.0 * s0 * s0) / ((n * n - 1.0) * s0 * s0);
    let var = (second - null_mean * null_mean).max(0.0);
    let null_sd = var.sqrt();
    let z_score = (null_sd > 1e-15).then(|| (i - null_mean) / null_sd);
    Ok(MoranResult {
        i,
        null_mean,
        null_sd,
        z_score,
    })
}

/// Mean and SD of Moran's I over random relabelings of `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationNull {
    pub mean: f64,
    pub sd: f64,
    pub n_perm: usize,
}

pub fn morans_i_permutation(x: &[f64], graph: &AdjacencyGraph, n_perm: usize, seed: u64) -> Result<PermutationNull> {
    if n_perm < 100 {
        return Err(Error::InvalidInput(format!(
            "need at least 100 permutations, got {n_perm}"
        )));
    }
    let mut z = centered(x, graph)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_perm {
        z.shuffle(&mut rng);
        let v = statistic(&z, graph);
        sum += v;
        sum_sq += v * v;
    }
    let k = n_perm as f64;
    let mean = sum / k;
    let var = (sum_sq - k * mean * mean) / (k - 1.0);
    Ok(PermutationNull {
        mean,
        sd: var.max(0.0).sqrt(),
        n_perm,
    })
}

/// SD of Moran's I under random permutation of `x`.
pub fn morans_i_permutation_sd(x: &[f64], graph: &AdjacencyGraph, n_perm: usize, seed: u64) -> Result<f64> {
    Ok(morans_i_permutation(x, graph, n_perm, seed)?.sd)
}

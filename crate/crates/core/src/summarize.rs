//! Posterior summaries: unit intervals, significance, barrier probabilities,
//! extreme units, and GeoJSON export.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graph::{geometry_json, shared_vertices, UnitGeometry};
use crate::model::ModelFamily;
use crate::sampler::Posterior;

/// Fewest pooled draws accepted for interval summaries.
pub const MIN_DRAWS: usize = 100;

/// Empirical quantile of sorted data by linear interpolation between order
/// statistics: position `h = (k − 1) p` in a zero-based sample of size `k`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, SD and central 95% interval of a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn from_draws(draws: &[f64]) -> Interval {
        let k = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / k;
        let var = if draws.len() > 1 {
            draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        Interval {
            mean,
            sd: var.sqrt(),
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn excludes(&self, x: f64) -> bool {
        x < self.lower || x > self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub unit_id: String,
    pub alpha: Interval,
    pub beta: Interval,
    /// The 95% interval excludes the posterior mean of `α₀`.
    pub alpha_significant: bool,
    pub beta_significant: bool,
}

/// Everything needed to report a fit without its raw draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub family: ModelFamily,
    pub n_draws: usize,
    pub units: Vec<UnitSummary>,
    pub covariate_names: Vec<String>,
    pub gamma: Vec<Interval>,
    pub alpha0: Interval,
    pub beta0: Interval,
    pub sigma2: Interval,
    pub tau2_alpha: Interval,
    pub tau2_beta: Interval,
    pub rho: Option<Interval>,
    pub barriers: Option<BarrierProbabilities>,
}

fn column(posterior: &Posterior, f: impl Fn(&crate::sampler::Draw) -> f64) -> Vec<f64> {
    posterior.draws().map(f).collect()
}

/// Per-unit intervals and significance against the posterior means of the
/// global intercept and slope.
pub fn summarize_units(posterior: &Posterior) -> Result<Vec<UnitSummary>> {
    let k = posterior.n_draws();
    if k < MIN_DRAWS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_DRAWS} draws for interval summaries, got {k}"
        )));
    }
    let a0 = column(posterior, |d| d.alpha0).iter().sum::<f64>() / k as f64;
    let b0 = column(posterior, |d| d.beta0).iter().sum::<f64>() / k as f64;
    let units = posterior
        .unit_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let alpha = Interval::from_draws(&column(posterior, |d| d.alpha[i]));
            let beta = Interval::from_draws(&column(posterior, |d| d.beta[i]));
            UnitSummary {
                unit_id: id.clone(),
                alpha_significant: alpha.excludes(a0),
                beta_significant: beta.excludes(b0),
                alpha,
                beta,
            }
        })
        .collect();
    Ok(units)
}

/// Full summary of a posterior.
pub fn summarize_posterior(posterior: &Posterior) -> Result<PosteriorSummary> {
    let units = summarize_units(posterior)?;
    let scalar = |f: &dyn Fn(&crate::sampler::Draw) -> f64| Interval::from_draws(&column(posterior, f));
    let d = posterior.covariate_names().len();
    let gamma = (0..d)
        .map(|j| scalar(&|dr: &crate::sampler::Draw| dr.gamma[j]))
        .collect();
    let has_rho = posterior.draws().next().is_some_and(|d| d.rho.is_some());
    Ok(PosteriorSummary {
        family: posterior.family(),
        n_draws: posterior.n_draws(),
        units,
        covariate_names: posterior.covariate_names().to_vec(),
        gamma,
        alpha0: scalar(&|d| d.alpha0),
        beta0: scalar(&|d| d.beta0),
        sigma2: scalar(&|d| d.sigma2),
        tau2_alpha: scalar(&|d| d.tau2_alpha),
        tau2_beta: scalar(&|d| d.tau2_beta),
        rho: has_rho.then(|| scalar(&|d| d.rho.unwrap_or(f64::NAN))),
        barriers: posterior
            .family()
            .has_variable_borders()
            .then(|| barrier_probabilities(posterior))
            .transpose()?,
    })
}

/// Posterior probability that each base edge is a barrier (`w = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierProbabilities {
    pub edges: Vec<(String, String)>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

pub fn barrier_probabilities(posterior: &Posterior) -> Result<BarrierProbabilities> {
    let family = posterior.family();
    if !family.has_variable_borders() {
        return Err(Error::InvalidInput(format!(
            "model {family} has fixed borders; no barrier probabilities"
        )));
    }
    let m = posterior.edges().len();
    let k = posterior.n_draws();
    if k == 0 {
        return Err(Error::InvalidInput("no draws".into()));
    }
    let freq = |get: &dyn Fn(&crate::sampler::Draw) -> Option<&Vec<bool>>| -> Option<Vec<f64>> {
        let mut zeros = vec![0usize; m];
        for d in posterior.draws() {
            let w = get(d)?;
            for (z, &on) in zeros.iter_mut().zip(w) {
                if !on {
                    *z += 1;
                }
            }
        }
        Some(zeros.into_iter().map(|z| z as f64 / k as f64).collect())
    };
    Ok(BarrierProbabilities {
        edges: posterior.edges().to_vec(),
        alpha: freq(&|d| d.w_alpha.as_ref()),
        beta: freq(&|d| d.w_beta.as_ref()),
    })
}

/// Barrier flag thresholds on `P(w = 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { alpha: 0.6, beta: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeBarrier {
    pub unit_a: String,
    pub unit_b: String,
    pub p_alpha: Option<f64>,
    pub p_beta: Option<f64>,
    pub alpha_barrier: bool,
    pub beta_barrier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    pub thresholds: Thresholds,
    pub edges: Vec<EdgeBarrier>,
}

/// Flags an edge when its barrier probability is strictly above the
/// threshold.
pub fn barrier_report(probs: &BarrierProbabilities, thresholds: Thresholds) -> BarrierReport {
    let edges = probs
        .edges
        .iter()
        .enumerate()
        .map(|(e, (a, b))| {
            let pa = probs.alpha.as_ref().map(|p| p[e]);
            let pb = probs.beta.as_ref().map(|p| p[e]);
            EdgeBarrier {
                unit_a: a.clone(),
                unit_b: b.clone(),
                p_alpha: pa,
                p_beta: pb,
                alpha_barrier: pa.is_some_and(|p| p > thresholds.alpha),
                beta_barrier: pb.is_some_and(|p| p > thresholds.beta),
            }
        })
        .collect();
    BarrierReport { thresholds, edges }
}

/// Highest and lowest units by posterior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extremes {
    pub top_alpha: Vec<String>,
    pub bottom_alpha: Vec<String>,
    pub top_beta: Vec<String>,
    pub bottom_beta: Vec<String>,
}

/// Top and bottom `k` units by posterior-mean `α` and `β`; ties go to the
/// lexicographically smaller id.
pub fn extremes(summaries: &[UnitSummary], k: usize) -> Result<Extremes> {
    if k > summaries.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} exceeds {} units",
            summaries.len()
        )));
    }
    let rank = |key: &dyn Fn(&UnitSummary) -> f64, descending: bool| -> Vec<String> {
        let mut v: Vec<&UnitSummary> = summaries.iter().collect();
        v.sort_by(|a, b| {
            let (x, y) = (key(a), key(b));
            let ord = if descending { y.total_cmp(&x) } else { x.total_cmp(&y) };
            ord.then_with(|| a.unit_id.cmp(&b.unit_id))
        });
        v.into_iter().take(k).map(|u| u.unit_id.clone()).collect()
    };
    Ok(Extremes {
        top_alpha: rank(&|u| u.alpha.mean, true),
        bottom_alpha: rank(&|u| u.alpha.mean, false),
        top_beta: rank(&|u| u.beta.mean, true),
        bottom_beta: rank(&|u| u.beta.mean, false),
    })
}

/// Writes `unit_id,alpha_mean,alpha_sd,alpha_lower,alpha_upper,
/// alpha_ci_width,alpha_significant,beta_mean,…,beta_significant`.
pub fn write_summary_csv<W: std::io::Write>(units: &[UnitSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let e = |e: csv::Error| Error::InvalidInput(format!("writing summary: {e}"));
    let mut header = vec!["unit_id".to_string()];
    for p in ["alpha", "beta"] {
        for s in ["mean", "sd", "lower", "upper", "ci_width", "significant"] {
            header.push(format!("{p}_{s}"));
        }
    }
    w.write_record(&header).map_err(e)?;
    for u in units {
        let mut row = vec![u.unit_id.clone()];
        for (iv, sig) in [(&u.alpha, u.alpha_significant), (&u.beta, u.beta_significant)] {
            row.extend([iv.mean, iv.sd, iv.lower, iv.upper, iv.width()].map(|v| v.to_string()));
            row.push(u8::from(sig).to_string());
        }
        w.write_record(&row).map_err(e)?;
    }
    w.flush().map_err(|err| Error::io("summary.csv", err))?;
    Ok(())
}

/// Writes `unit_a,unit_b,p_barrier_alpha,p_barrier_beta,alpha_barrier,
/// beta_barrier`; probabilities of fixed borders are left empty.
pub fn write_barriers_csv<W: std::io::Write>(report: &BarrierReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let e = |e: csv::Error| Error::InvalidInput(format!("writing barriers: {e}"));
    w.write_record([
        "unit_a",
        "unit_b",
        "p_barrier_alpha",
        "p_barrier_beta",
        "alpha_barrier",
        "beta_barrier",
    ])
    .map_err(e)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for b in &report.edges {
        w.write_record([
            b.unit_a.clone(),
            b.unit_b.clone(),
            fmt(b.p_alpha),
            fmt(b.p_beta),
            u8::from(b.alpha_barrier).to_string(),
            u8::from(b.beta_barrier).to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| Error::io("barriers.csv", err))?;
    Ok(())
}

fn ring_coords(ring: &[[f64; 2]]) -> Value {
    Value::Array(ring.iter().map(|p| json!([p[0], p[1]])).collect())
}

/// Unit properties written to GeoJSON, in this order.
pub const GEOJSON_UNIT_KEYS: [&str; 11] = [
    "unit_id",
    "alpha_mean",
    "alpha_lower",
    "alpha_upper",
    "alpha_ci_width",
    "alpha_significant",
    "beta_mean",
    "beta_lower",
    "beta_upper",
    "beta_ci_width",
    "beta_significant",
];

/// Feature collection with one polygon feature per unit and one line
/// feature per flagged barrier. Each polygon ring is written as its own
/// polygon. A barrier is drawn through the boundary vertices its two units
/// share (a point when they touch at one vertex).
pub fn export_geojson(
    units: &[UnitSummary],
    report: Option<&BarrierReport>,
    polygons: &[UnitGeometry],
    snap_tolerance: f64,
) -> Result<Value> {
    let by_id: HashMap<&str, &UnitGeometry> = polygons.iter().map(|g| (g.unit_id.as_str(), g)).collect();
    let geom = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unit {id} has no geometry")))
    };
    let mut features = Vec::new();
    for u in units {
        let g = geom(&u.unit_id)?;
        let geometry = geometry_json(g);
        let props = json!({
            "kind": "unit",
            "unit_id": u.unit_id,
            "alpha_mean": u.alpha.mean,
            "alpha_lower": u.alpha.lower,
            "alpha_upper": u.alpha.upper,
            "alpha_ci_width": u.alpha.width(),
            "alpha_significant": u.alpha_significant,
            "beta_mean": u.beta.mean,
            "beta_lower": u.beta.lower,
            "beta_upper": u.beta.upper,
            "beta_ci_width": u.beta.width(),
            "beta_significant": u.beta_significant,
        });
        features.push(json!({"type": "Feature", "properties": props, "geometry": geometry}));
    }
    if let Some(report) = report {
        for b in report.edges.iter().filter(|b| b.alpha_barrier || b.beta_barrier) {
            let shared = shared_vertices(geom(&b.unit_a)?, geom(&b.unit_b)?, snap_tolerance);
            let geometry = match shared.len() {
                0 => Value::Null,
                1 => json!({"type": "Point", "coordinates": [shared[0][0], shared[0][1]]}),
                _ => json!({"type": "LineString", "coordinates": ring_coords(&shared)}),
            };
            let props = json!({
                "kind": "barrier",
                "unit_a": b.unit_a,
                "unit_b": b.unit_b,
                "p_barrier_alpha": b.p_alpha,
                "p_barrier_beta": b.p_beta,
                "alpha_barrier": b.alpha_barrier,
                "beta_barrier": b.beta_barrier,
            });
            features.push(json!({"type": "Feature", "properties": props, "geometry": geometry}));
        }
    }
    Ok(json!({"type": "FeatureCollection", "features": features}))
}

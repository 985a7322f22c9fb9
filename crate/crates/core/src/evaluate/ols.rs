use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inputs::FitInputs;
use crate::model::{ModelFamily, VarianceEstimates};

/// Point estimates of `γ`, `α`, `β` and the predictions they imply:
/// `ŷ_it = z_iᵀγ + α_i + β_i t`. Global fits repeat the shared `α`, `β`
/// for every unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: ModelFamily,
    pub unit_ids: Vec<String>,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `z_iᵀγ` per unit.
    pub offset: Vec<f64>,
}

impl FitResult {
    pub fn new(
        family: ModelFamily,
        unit_ids: Vec<String>,
        z: &[Vec<f64>],
        gamma: Vec<f64>,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    ) -> Self {
        let offset = z
            .iter()
            .map(|zi| zi.iter().zip(&gamma).map(|(a, b)| a * b).sum())
            .collect();
        FitResult {
            family,
            unit_ids,
            gamma,
            alpha,
            beta,
            offset,
        }
    }

    pub fn predict(&self, unit: usize, t: f64) -> f64 {
        self.offset[unit] + self.alpha[unit] + self.beta[unit] * t
    }
}

/// Least-squares fit with its residual sum of squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub fit: FitResult,
    pub rss: f64,
    pub n_obs: usize,
    /// Number of free mean parameters.
    pub n_params: usize,
    /// Pooled intercept of the covariate-only first stage (per-unit fits only).
    pub stage1_intercept: Option<f64>,
}

impl OlsFit {
    /// Variance estimates that anchor empirical-Bayes tuning: residual
    /// variance, sample variances of the unit coefficients, and the mean
    /// squared covariate effect.
    pub fn variance_estimates(&self) -> Result<VarianceEstimates> {
        if self.fit.family != ModelFamily::NoShrinkage {
            return Err(Error::InvalidInput("variance estimates need the per-unit fit".into()));
        }
        let df = self.n_obs as f64 - self.n_params as f64;
        if df <= 0.0 {
            return Err(Error::Numerical(
                "per-unit fit has no residual degrees of freedom; need at least three training periods".into(),
            ));
        }
        let d = self.fit.gamma.len();
        Ok(VarianceEstimates {
            sigma2: self.rss / df,
            tau2_alpha: sample_variance(&self.fit.alpha),
            tau2_beta: sample_variance(&self.fit.beta),
            tau2_gamma: if d == 0 {
                1.0
            } else {
                self.fit.gamma.iter().map(|g| g * g).sum::<f64>() / d as f64
            },
        })
    }
}

pub(crate) fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
}

struct Cell {
    unit: usize,
    t: f64,
    y: f64,
}

fn cells(inputs: &FitInputs, train: &[usize]) -> Vec<Cell> {
    let p = &inputs.panel;
    let mut out = Vec::with_capacity(p.n_units() * train.len());
    for i in 0..p.n_units() {
        for &k in train {
            out.push(Cell {
                unit: i,
                t: p.t_code(k),
                y: p.response(i, k),
            });
        }
    }
    out
}

/// Dense least squares; fails on a rank-deficient design.
fn least_squares(x: DMatrix<f64>, y: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let p = x.ncols();
    if x.nrows() < p {
        return Err(Error::Numerical(format!(
            "{what}: {} observations for {p} parameters",
            x.nrows()
        )));
    }
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (p.max(1) as f64);
    if svd.rank(tol) < p {
        return Err(Error::Numerical(format!("{what}: singular design")));
    }
    svd.solve(&y, tol).map_err(|e| Error::Numerical(format!("{what}: {e}")))
}

/// Ordinary least squares for the two classical families.
///
/// `GlobalTrend` regresses `y` on `(1, z, t)`. `NoShrinkage` first regresses
/// `y` on `(1, z)` pooled over all cells, then fits a separate line to each
/// unit's first-stage residuals; the reported `α_i` absorbs the pooled
/// intercept.
pub fn fit_ols(inputs: &FitInputs, train: &[usize], family: ModelFamily) -> Result<OlsFit> {
    let cells = cells(inputs, train);
    let z = inputs.covariates.rows();
    let d = inputs.covariates.n_covariates();
    let n = inputs.n_units();
    let ids = inputs.panel.unit_ids().to_vec();
    match family {
        ModelFamily::GlobalTrend => {
            let x = DMatrix::from_fn(cells.len(), d + 2, |r, c| {
                let cell = &cells[r];
                match c {
                    0 => 1.0,
                    c if c <= d => z[cell.unit][c - 1],
                    _ => cell.t,
                }
            });
            let y = DVector::from_iterator(cells.len(), cells.iter().map(|c| c.y));
            let coef = least_squares(x, y, "global trend fit")?;
            let gamma: Vec<f64> = coef.as_slice()[1..=d].to_vec();
            let fit = FitResult::new(family, ids, z, gamma, vec![coef[0]; n], vec![coef[d + 1]; n]);
            let rss = rss(&fit, &cells);
            Ok(OlsFit {
                fit,
                rss,
                n_obs: cells.len(),
                n_params: d + 2,
                stage1_intercept: None,
            })
        }
        ModelFamily::NoShrinkage => {
            let x = DMatrix::from_fn(
                cells.len(),
                d + 1,
                |r, c| if c == 0 { 1.0 } else { z[cells[r].unit][c - 1] },
            );
            let y = DVector::from_iterator(cells.len(), cells.iter().map(|c| c.y));
            let coef = least_squares(x, y, "covariate stage")?;
            let a = coef[0];
            let gamma: Vec<f64> = coef.as_slice()[1..].to_vec();
            let mut sums = vec![[0.0f64; 5]; n];
            for c in &cells {
                let off: f64 = z[c.unit].iter().zip(&gamma).map(|(p, q)| p * q).sum();
                let e = c.y - a - off;
                let s = &mut sums[c.unit];
                s[0] += 1.0;
                s[1] += c.t;
                s[2] += c.t * c.t;
                s[3] += e;
                s[4] += c.t * e;
            }
            let mut alpha = Vec::with_capacity(n);
            let mut beta = Vec::with_capacity(n);
            for (i, s) in sums.iter().enumerate() {
                let sxx = s[2] - s[1] * s[1] / s[0];
                if !(s[0] >= 2.0) || !(sxx > 1e-12 * s[2].max(1.0)) {
                    return Err(Error::Numerical(format!(
                        "unit {} needs at least two distinct training periods for its own trend",
                        inputs.panel.unit_ids()[i]
                    )));
                }
                let sxy = s[4] - s[1] * s[3] / s[0];
                let b = sxy / sxx;
                let at = (s[3] - b * s[1]) / s[0];
                alpha.push(a + at);
                beta.push(b);
            }
            let fit = FitResult::new(family, ids, z, gamma, alpha, beta);
            let rss = rss(&fit, &cells);
            Ok(OlsFit {
                fit,
                rss,
                n_obs: cells.len(),
                n_params: 2 * n,
                stage1_intercept: Some(a),
            })
        }
        other => Err(Error::InvalidInput(format!("{other} is not a least-squares model"))),
    }
}

fn rss(fit: &FitResult, cells: &[Cell]) -> f64 {
    cells
        .iter()
        .map(|c| {
            let r = c.y - fit.predict(c.unit, c.t);
            r * r
        })
        .sum()
}

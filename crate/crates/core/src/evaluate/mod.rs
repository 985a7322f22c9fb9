//! Least-squares baselines, predictive error, and model comparison.

mod ols;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::graph::morans_i;
use crate::inputs::{FitInputs, PeriodSplit};
use crate::model::{ModelConfig, ModelFamily};
use crate::sampler::{prepare, run_chains, Posterior};

pub use ols::{fit_ols, FitResult, OlsFit};

/// Plug-in fit from posterior means. Predictions are linear in the
/// parameters, so this equals the average of per-draw predictions.
pub fn posterior_fit(posterior: &Posterior, z: &[Vec<f64>]) -> FitResult {
    FitResult::new(
        posterior.family(),
        posterior.unit_ids().to_vec(),
        z,
        posterior.mean_gamma(),
        posterior.mean_alpha(),
        posterior.mean_beta(),
    )
}

/// A fitted model of any family.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub fit: FitResult,
    pub ols: Option<OlsFit>,
    pub posterior: Option<Posterior>,
}

/// Fits `config.family` on the training periods of `split`.
pub fn fit_family(config: &ModelConfig, inputs: &FitInputs, split: &PeriodSplit) -> Result<FittedModel> {
    if config.family.is_bayesian() {
        let prepared = prepare(config, inputs, split)?;
        let posterior = run_chains(&prepared)?;
        Ok(FittedModel {
            fit: posterior_fit(&posterior, inputs.covariates.rows()),
            ols: None,
            posterior: Some(posterior),
        })
    } else {
        let ols = fit_ols(inputs, &split.train, config.family)?;
        Ok(FittedModel {
            fit: ols.fit.clone(),
            ols: Some(ols),
            posterior: None,
        })
    }
}

/// Mean squared error over all units and the given period indices, on the
/// transformed scale.
pub fn mse(inputs: &FitInputs, fit: &FitResult, periods: &[usize]) -> Result<f64> {
    let p = &inputs.panel;
    if periods.is_empty() {
        return Err(Error::InvalidInput("no target periods".into()));
    }
    if fit.alpha.len() != p.n_units() {
        return Err(Error::Dimension(format!(
            "fit has {} units, panel has {}",
            fit.alpha.len(),
            p.n_units()
        )));
    }
    let mut ss = 0.0;
    for &k in periods {
        if k >= p.n_periods() {
            return Err(Error::InvalidInput(format!("target period index {k} not in panel")));
        }
        let t = p.t_code(k);
        for i in 0..p.n_units() {
            let r = p.response(i, k) - fit.predict(i, t);
            ss += r * r;
        }
    }
    Ok(ss / (periods.len() * p.n_units()) as f64)
}

/// One leave-one-period-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFold {
    pub period: i64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub mse_cv: f64,
    pub folds: Vec<CvFold>,
}

/// Average out-of-sample error over the folds that hold out each period in
/// turn, refitting from scratch for every fold.
pub fn mse_cv(config: &ModelConfig, inputs: &FitInputs) -> Result<CvResult> {
    let t = inputs.panel.n_periods();
    if t < 2 {
        return Err(Error::InvalidInput(
            "cross-validation needs at least two periods".into(),
        ));
    }
    let folds = (0..t)
        .into_par_iter()
        .map(|k| {
            let split = PeriodSplit::leave_one_out(t, k);
            let period = inputs.panel.periods()[k];
            let fitted = fit_family(config, inputs, &split)
                .map_err(|e| Error::Numerical(format!("fold holding out {period}: {e}")))?;
            Ok(CvFold {
                period,
                mse: mse(inputs, &fitted.fit, &[k])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mse_cv = folds.iter().map(|f| f.mse).sum::<f64>() / folds.len() as f64;
    Ok(CvResult { mse_cv, folds })
}

/// Nested-model F test of per-unit lines against one global line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    pub f: f64,
    pub p_value: f64,
    pub df1: f64,
    pub df2: f64,
}

pub fn f_test_units(inputs: &FitInputs, train: &[usize]) -> Result<FTest> {
    let global = fit_ols(inputs, train, ModelFamily::GlobalTrend)?;
    let units = fit_ols(inputs, train, ModelFamily::NoShrinkage)?;
    if units.n_params <= global.n_params {
        return Err(Error::InvalidInput(
            "per-unit model does not nest the global model".into(),
        ));
    }
    let df1 = (units.n_params - global.n_params) as f64;
    let df2 = units.n_obs as f64 - units.n_params as f64;
    if df2 <= 0.0 {
        return Err(Error::Numerical("no residual degrees of freedom for the F test".into()));
    }
    let gain = (global.rss - units.rss).max(0.0);
    // exact fits on both sides: no heterogeneity to explain
    let f = if gain <= 1e-12 * global.rss || global.rss < 1e-24 {
        0.0
    } else {
        (gain / df1) / (units.rss / df2)
    };
    let p_value = if units.rss == 0.0 {
        if f == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let dist = FisherSnedecor::new(df1, df2).map_err(|e| Error::Numerical(format!("F distribution: {e}")))?;
        dist.sf(f)
    };
    Ok(FTest { f, p_value, df1, df2 })
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub family: ModelFamily,
    /// Error on the last training period.
    pub mse_in: f64,
    /// Error on the held-out periods, if any.
    pub mse_out: Option<f64>,
    /// `100 (MSE_out − MSE_out[noshrink]) / MSE_out[noshrink]`.
    pub pct_change: Option<f64>,
    pub cv: Option<CvResult>,
    /// Moran's I of the estimated unit slopes.
    pub morans_i_beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub train_periods: Vec<i64>,
    pub test_periods: Vec<i64>,
}

impl ComparisonTable {
    /// Writes `model,mse_in,mse_out,pct_change,mse_cv,morans_i_beta`; absent
    /// values are left empty.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let e = |e: csv::Error| Error::InvalidInput(format!("writing comparison: {e}"));
        w.write_record(["model", "mse_in", "mse_out", "pct_change", "mse_cv", "morans_i_beta"])
            .map_err(e)?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.family.name().to_string(),
                r.mse_in.to_string(),
                fmt(r.mse_out),
                fmt(r.pct_change),
                fmt(r.cv.as_ref().map(|c| c.mse_cv)),
                fmt(r.morans_i_beta),
            ])
            .map_err(e)?;
        }
        w.flush().map_err(|err| Error::io("comparison.csv", err))?;
        Ok(())
    }
}

fn percent_change(value: f64, reference: f64) -> f64 {
    100.0 * (value - reference) / reference
}

/// Fits every family on the same split and seed and tabulates predictive
/// error. The percent-change column needs the no-shrinkage model, which is
/// fit for reference even when not requested.
pub fn compare_models(
    inputs: &FitInputs,
    families: &[ModelFamily],
    config: &ModelConfig,
    with_cv: bool,
) -> Result<ComparisonTable> {
    let periods = inputs.panel.periods();
    let split = config.holdout.split(periods)?;
    let last_train = *split.train.last().expect("split has training periods");
    let rows = families
        .par_iter()
        .map(|&family| {
            let cfg = ModelConfig {
                family,
                ..config.clone()
            };
            let fitted = fit_family(&cfg, inputs, &split).map_err(|e| prefix(family, e))?;
            let mse_in = mse(inputs, &fitted.fit, &[last_train])?;
            let mse_out = if split.test.is_empty() {
                None
            } else {
                Some(mse(inputs, &fitted.fit, &split.test)?)
            };
            let cv = if with_cv {
                Some(mse_cv(&cfg, inputs).map_err(|e| prefix(family, e))?)
            } else {
                None
            };
            let morans_i_beta = match &inputs.graph {
                Some(g) if g.n_edges() > 0 => morans_i(&fitted.fit.beta, g).ok().map(|m| m.i),
                _ => None,
            };
            Ok(ComparisonRow {
                family,
                mse_in,
                mse_out,
                pct_change: None,
                cv,
                morans_i_beta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = ComparisonTable {
        rows,
        train_periods: split.train.iter().map(|&k| periods[k]).collect(),
        test_periods: split.test.iter().map(|&k| periods[k]).collect(),
    };
    let reference = match table.rows.iter().find(|r| r.family == ModelFamily::NoShrinkage) {
        Some(r) => r.mse_out,
        None if !split.test.is_empty() => {
            let ols = fit_ols(inputs, &split.train, ModelFamily::NoShrinkage)?;
            Some(mse(inputs, &ols.fit, &split.test)?)
        }
        None => None,
    };
    if let Some(reference) = reference {
        for r in &mut table.rows {
            r.pct_change = r.mse_out.map(|m| percent_change(m, reference));
        }
    }
    Ok(table)
}

fn prefix(family: ModelFamily, e: Error) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("model {family}: {m}")),
        Error::InvalidInput(m) => Error::InvalidInput(format!("model {family}: {m}")),
        Error::Dimension(m) => Error::Dimension(format!("model {family}: {m}")),
        other => other,
    }
}

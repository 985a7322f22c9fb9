use std::path::{Path, PathBuf};

use areltrend::areal::{
    apply_exclusions, build_covariates, read_ethnicity_map, read_exclusions, read_raw_covariates_csv, ArealPanel,
    CovariateOptions, ExclusionRules,
};
use areltrend::diagnostics::{scale_reductions, ScaleReductions};
use areltrend::evaluate::{compare_models, f_test_units, fit_family, mse, FTest};
use areltrend::graph::{polygons_to_geojson, queen_contiguity, read_polygons_geojson};
use areltrend::model::{ModelConfig, ModelFamily};
use areltrend::sampler::{write_draws_csv, Posterior};
use areltrend::summarize::{
    barrier_report, export_geojson, extremes, summarize_posterior, write_barriers_csv, write_summary_csv,
    PosteriorSummary, Thresholds,
};
use areltrend::synth::{simulate, GraphShape, SyntheticSpec};
use serde::Serialize;
use serde_json::json;

use crate::args::{BuildCovariatesArgs, ContiguityArgs, EvaluateArgs, FitArgs, ShapeKind, SimulateArgs, SummarizeArgs};
use crate::error::{io_error, CliError};
use crate::inputs::{check_threshold, load, require_graph, resolve_config};
use crate::output::{RunDir, RunManifest, RunStatus};

pub fn build_covariates_cmd(a: &BuildCovariatesArgs) -> Result<(), CliError> {
    let panel = ArealPanel::read_crimes_csv(&a.crimes)?;
    let mut files: Vec<(&str, &Path)> = vec![("crimes", &a.crimes), ("raw_covariates", &a.raw)];
    let map = match &a.ethnicity_map {
        Some(p) => {
            files.push(("ethnicity_map", p));
            Some(read_ethnicity_map(p)?)
        }
        None => None,
    };
    let ids = match &a.exclusions {
        Some(p) => {
            files.push(("exclusions", p));
            read_exclusions(p)?
        }
        None => Vec::new(),
    };
    let raw = read_raw_covariates_csv(&a.raw, map.as_deref())?;
    let kept = apply_exclusions(
        &panel,
        &raw,
        &ExclusionRules {
            ids,
            drop_missing: !a.keep_missing,
        },
    )?;
    let cov = build_covariates(
        &kept.raw,
        CovariateOptions {
            standardize: !a.no_standardize,
        },
    )?;
    let config = json!({
        "keep_missing": a.keep_missing,
        "standardize": !a.no_standardize,
    });
    let mut run = RunDir::create(&a.out, "build-covariates", config, None, &files)?;
    run.write_with("covariates.csv", |w| cov.write_csv(w))?;
    run.write_with("crimes.csv", |w| kept.panel.write_crimes_csv(w))?;
    let mut excluded = kept.excluded_ids.join("\n");
    if !excluded.is_empty() {
        excluded.push('\n');
    }
    run.write("excluded.txt", excluded.as_bytes())?;
    if let Some(s) = cov.standardization() {
        run.write_json(
            "standardization.json",
            &json!({ "names": cov.names(), "means": s.means, "scales": s.scales }),
        )?;
    }
    log::info!(
        "{} units kept, {} excluded",
        kept.panel.n_units(),
        kept.excluded_ids.len()
    );
    run.finish()
}

pub fn contiguity_cmd(a: &ContiguityArgs) -> Result<(), CliError> {
    let polys = read_polygons_geojson(&a.polygons)?;
    let graph = queen_contiguity(&polys, a.snap_tolerance)?;
    let config = json!({ "snap_tolerance": a.snap_tolerance });
    let mut run = RunDir::create(&a.out, "contiguity", config, None, &[("polygons", &a.polygons)])?;
    run.write_with("edges.csv", |w| graph.write_edges_csv(w))?;
    log::info!("{} units, {} edges", graph.n_units(), graph.n_edges());
    run.finish()
}

pub fn simulate_cmd(a: &SimulateArgs) -> Result<(), CliError> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            serde_json::from_str::<SyntheticSpec>(&text).map_err(|e| CliError::parse(p, e))?
        }
        None => SyntheticSpec::default(),
    };
    if a.shape.is_some() || a.rows.is_some() || a.cols.is_some() {
        let rows = a.rows.unwrap_or(10);
        spec.graph = match a.shape.unwrap_or(ShapeKind::Grid) {
            ShapeKind::Grid => GraphShape::Grid {
                rows,
                cols: a.cols.unwrap_or(rows),
            },
            ShapeKind::Cycle => GraphShape::Cycle { n: rows },
            ShapeKind::Path => GraphShape::Path { n: rows },
        };
    }
    if let Some(t) = a.periods {
        spec.n_periods = t;
    }
    if let Some(p) = a.first_period {
        spec.first_period = p;
    }
    if let Some(d) = a.covariates {
        spec.gamma = vec![0.1; d];
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let sim = simulate(&spec)?;
    let inputs: Vec<(&str, &Path)> = a.spec.iter().map(|p| ("spec", p.as_path())).collect();
    let config = serde_json::to_value(&spec).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut run = RunDir::create(&a.out, "simulate", config, Some(spec.seed), &inputs)?;
    run.write_with("crimes.csv", |w| sim.panel.write_crimes_csv(w))?;
    if sim.covariates.n_covariates() > 0 {
        run.write_with("covariates.csv", |w| sim.covariates.write_csv(w))?;
    }
    run.write_with("edges.csv", |w| sim.graph.write_edges_csv(w))?;
    if let Some(polys) = spec.graph.polygons() {
        run.write_json("polygons.geojson", &polygons_to_geojson(&polys))?;
    }
    run.write_json(
        "truth.json",
        &json!({ "unit_ids": sim.graph.unit_ids(), "periods": sim.panel.periods(), "truth": sim.truth }),
    )?;
    run.finish()
}

#[derive(Serialize)]
struct NamedValue<'a> {
    name: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct FitReport<'a> {
    family: ModelFamily,
    n_units: usize,
    train_periods: Vec<i64>,
    test_periods: Vec<i64>,
    excluded_units: &'a [String],
    /// Error on the last training period.
    mse_in: f64,
    mse_out: Option<f64>,
    gamma: Vec<NamedValue<'a>>,
    ols_rss: Option<f64>,
}

#[derive(Serialize)]
struct EdgeFlips<'a> {
    unit_a: &'a str,
    unit_b: &'a str,
    flips: u64,
}

#[derive(Serialize)]
struct ChainMeta<'a> {
    chain: usize,
    seed: u64,
    n_draws: usize,
    rho_acceptance: Option<f64>,
    variance_clips: u64,
    flips_alpha: Option<Vec<EdgeFlips<'a>>>,
    flips_beta: Option<Vec<EdgeFlips<'a>>>,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    family: ModelFamily,
    seed: u64,
    n_iter: usize,
    burn_in: usize,
    thin: usize,
    n_chains: usize,
    elapsed_seconds: f64,
    chains: Vec<ChainMeta<'a>>,
    scale_reductions: Option<ScaleReductions>,
}

fn chain_meta<'a>(post: &'a Posterior, config: &ModelConfig, elapsed: f64) -> RunMeta<'a> {
    let flips = |counts: &Option<Vec<u64>>| {
        counts.as_ref().map(|c| {
            post.edges()
                .iter()
                .zip(c)
                .map(|((a, b), &flips)| EdgeFlips {
                    unit_a: a,
                    unit_b: b,
                    flips,
                })
                .collect()
        })
    };
    RunMeta {
        family: config.family,
        seed: config.chain.seed,
        n_iter: config.chain.n_iter,
        burn_in: config.chain.burn_in,
        thin: config.chain.thin,
        n_chains: config.chain.n_chains,
        elapsed_seconds: elapsed,
        chains: post
            .chains
            .iter()
            .map(|c| ChainMeta {
                chain: c.chain,
                seed: c.seed,
                n_draws: c.draws.len(),
                rho_acceptance: c.rho_acceptance,
                variance_clips: c.variance_clips,
                flips_alpha: flips(&c.flips_alpha),
                flips_beta: flips(&c.flips_beta),
            })
            .collect(),
        scale_reductions: (post.chains.len() > 1).then(|| scale_reductions(post)),
    }
}

pub fn fit_cmd(a: &FitArgs) -> Result<(), CliError> {
    let config = resolve_config(&a.run, a.model)?;
    let loaded = load(&a.data)?;
    let inputs = &loaded.inputs;
    require_graph(inputs, &[config.family])?;
    let config_json = serde_json::to_value(&config).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut run = RunDir::create(&a.out, "fit", config_json, Some(config.chain.seed), &loaded.file_refs())?;

    let periods = inputs.panel.periods();
    let split = config.holdout.split(periods)?;
    let fitted = fit_family(&config, inputs, &split)?;
    let last_train = *split.train.last().expect("split has training periods");
    let report = FitReport {
        family: config.family,
        n_units: inputs.n_units(),
        train_periods: split.train.iter().map(|&k| periods[k]).collect(),
        test_periods: split.test.iter().map(|&k| periods[k]).collect(),
        excluded_units: &loaded.excluded,
        mse_in: mse(inputs, &fitted.fit, &[last_train])?,
        mse_out: if split.test.is_empty() {
            None
        } else {
            Some(mse(inputs, &fitted.fit, &split.test)?)
        },
        gamma: inputs
            .covariates
            .names()
            .iter()
            .zip(&fitted.fit.gamma)
            .map(|(name, &value)| NamedValue { name, value })
            .collect(),
        ols_rss: fitted.ols.as_ref().map(|o| o.rss),
    };

    let mut est = String::from("unit_id,alpha,beta\n");
    for (i, id) in fitted.fit.unit_ids.iter().enumerate() {
        est.push_str(&format!("{id},{},{}\n", fitted.fit.alpha[i], fitted.fit.beta[i]));
    }
    run.write("estimates.csv", est.as_bytes())?;
    run.write_json("fit.json", &report)?;

    if let Some(post) = &fitted.posterior {
        let summary = summarize_posterior(post)?;
        run.write_with("summary.csv", |w| write_summary_csv(&summary.units, w))?;
        run.write_json("posterior.json", &summary)?;
        let meta = chain_meta(post, &config, run.elapsed());
        run.write_json("chain_meta.json", &meta)?;
        if a.save_draws {
            run.write_with("draws.csv", |w| write_draws_csv(post, w))?;
        }
    }
    log::info!("fit {} in {:.1} s", config.family, run.elapsed());
    run.finish()
}

#[derive(Serialize)]
struct Evaluation {
    families: Vec<ModelFamily>,
    cv: bool,
    table: areltrend::evaluate::ComparisonTable,
    /// Unit-specific lines against one global line, on the training periods.
    f_test: Option<FTest>,
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), CliError> {
    let families = if a.model.is_empty() {
        ModelFamily::ALL.to_vec()
    } else {
        a.model.clone()
    };
    let config = resolve_config(&a.run, None)?;
    let loaded = load(&a.data)?;
    let inputs = &loaded.inputs;
    require_graph(inputs, &families)?;
    let mut config_json = serde_json::to_value(&config).map_err(|e| CliError::Internal(e.to_string()))?;
    config_json["families"] = json!(families);
    config_json["cv"] = json!(a.cv);
    let mut run = RunDir::create(
        &a.out,
        "evaluate",
        config_json,
        Some(config.chain.seed),
        &loaded.file_refs(),
    )?;

    let table = compare_models(inputs, &families, &config, a.cv)?;
    let split = config.holdout.split(inputs.panel.periods())?;
    let f_test = match f_test_units(inputs, &split.train) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("F test skipped: {e}");
            None
        }
    };
    run.write_with("comparison.csv", |w| table.write_csv(w))?;
    run.write_json(
        "evaluation.json",
        &Evaluation {
            families,
            cv: a.cv,
            table,
            f_test,
        },
    )?;
    run.finish()
}

fn incomplete(msg: impl Into<String>) -> CliError {
    CliError::Incomplete(msg.into())
}

pub fn summarize_cmd(a: &SummarizeArgs) -> Result<(), CliError> {
    let manifest = RunManifest::read(&a.fit)
        .map_err(|e| incomplete(format!("{}: cannot read manifest ({e})", a.fit.display())))?;
    if manifest.command != "fit" {
        return Err(incomplete(format!(
            "{} was written by `{}`, not `fit`",
            a.fit.display(),
            manifest.command
        )));
    }
    if manifest.status != RunStatus::Complete {
        return Err(incomplete(format!("{}: the fit did not finish", a.fit.display())));
    }
    let post_path = a.fit.join("posterior.json");
    if !post_path.exists() {
        return Err(incomplete(format!(
            "{} has no posterior.json; least-squares fits have no posterior to summarize",
            a.fit.display()
        )));
    }
    let text = std::fs::read_to_string(&post_path).map_err(|e| io_error(&post_path, e))?;
    let summary: PosteriorSummary = serde_json::from_str(&text).map_err(|e| CliError::parse(&post_path, e))?;
    if a.barriers && summary.barriers.is_none() {
        return Err(incomplete(format!(
            "--barriers needs random borders, but this fit used model {} whose borders are fixed; refit with --model borders or borders-alpha",
            summary.family
        )));
    }

    let cfg = |key: &str| manifest.config.get(key).and_then(|v| v.as_f64());
    let default = Thresholds::default();
    let thresholds = Thresholds {
        alpha: a.alpha_threshold.or(cfg("alpha_threshold")).unwrap_or(default.alpha),
        beta: a.beta_threshold.or(cfg("beta_threshold")).unwrap_or(default.beta),
    };
    check_threshold("--alpha-threshold", thresholds.alpha)?;
    check_threshold("--beta-threshold", thresholds.beta)?;
    let polygons: Option<PathBuf> = a
        .polygons
        .clone()
        .or_else(|| manifest.inputs.get("polygons").map(|d| d.path.clone()));

    let out = a.out.clone().unwrap_or_else(|| a.fit.join("summary"));
    let mut inputs: Vec<(&str, &Path)> = vec![("posterior", &post_path)];
    if let Some(p) = &polygons {
        inputs.push(("polygons", p));
    }
    let config = json!({
        "fit": a.fit,
        "thresholds": thresholds,
        "top": a.top,
        "snap_tolerance": a.snap_tolerance,
    });
    let mut run = RunDir::create(&out, "summarize", config, manifest.seed, &inputs)?;
    run.write_with("summary.csv", |w| write_summary_csv(&summary.units, w))?;
    let report = summary.barriers.as_ref().map(|p| barrier_report(p, thresholds));
    if let Some(r) = &report {
        run.write_with("barriers.csv", |w| write_barriers_csv(r, w))?;
    }
    let k = a.top.min(summary.units.len());
    run.write_json("extremes.json", &extremes(&summary.units, k)?)?;
    match &polygons {
        Some(p) => {
            let polys = read_polygons_geojson(p)?;
            let geo = export_geojson(&summary.units, report.as_ref(), &polys, a.snap_tolerance)?;
            run.write_json("results.geojson", &geo)?;
        }
        None => log::info!("no polygons given; results.geojson not written"),
    }
    run.finish()
}

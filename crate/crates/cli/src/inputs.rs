//! Loading fit inputs and resolving the model configuration from flags.

use std::path::{Path, PathBuf};

use areltrend::areal::{
    apply_exclusions, build_covariates, read_ethnicity_map, read_exclusions, read_raw_covariates_csv, ArealPanel,
    CovariateMatrix, CovariateOptions, ExclusionRules,
};
use areltrend::graph::{queen_contiguity, read_polygons_geojson, AdjacencyGraph};
use areltrend::inputs::FitInputs;
use areltrend::model::{Holdout, ModelConfig, ModelFamily, PriorMode};
use areltrend::Error;

use crate::args::{DataArgs, PriorArg, RunArgs};
use crate::error::{io_error, CliError};

pub struct Loaded {
    pub inputs: FitInputs,
    /// Units dropped by exclusion rules, in the order they were dropped.
    pub excluded: Vec<String>,
    pub files: Vec<(&'static str, PathBuf)>,
}

impl Loaded {
    pub fn file_refs(&self) -> Vec<(&str, &Path)> {
        self.files.iter().map(|(r, p)| (*r, p.as_path())).collect()
    }
}

pub fn load(data: &DataArgs) -> Result<Loaded, CliError> {
    let mut files: Vec<(&'static str, PathBuf)> = vec![("crimes", data.crimes.clone())];
    let mut panel = ArealPanel::read_crimes_csv(&data.crimes)?;
    let listed = match &data.exclusions {
        Some(p) => {
            files.push(("exclusions", p.clone()));
            read_exclusions(p)?
        }
        None => Vec::new(),
    };
    let mut excluded = Vec::new();

    let covariates = if let Some(raw_path) = &data.raw_covariates {
        files.push(("raw_covariates", raw_path.clone()));
        let map = match &data.ethnicity_map {
            Some(p) => {
                files.push(("ethnicity_map", p.clone()));
                Some(read_ethnicity_map(p)?)
            }
            None => None,
        };
        let raw = read_raw_covariates_csv(raw_path, map.as_deref())?;
        let kept = apply_exclusions(
            &panel,
            &raw,
            &ExclusionRules {
                ids: listed,
                drop_missing: true,
            },
        )?;
        panel = kept.panel;
        excluded = kept.excluded_ids;
        Some(build_covariates(&kept.raw, CovariateOptions::default())?)
    } else {
        if !listed.is_empty() {
            for id in &listed {
                if panel.unit_index(id).is_none() {
                    return Err(Error::InvalidInput(format!("cannot exclude unit {id}: not present")).into());
                }
            }
            let keep: Vec<String> = panel
                .unit_ids()
                .iter()
                .filter(|u| !listed.contains(u))
                .cloned()
                .collect();
            panel = panel.select_units(&keep)?;
            excluded = listed;
        }
        match &data.covariates {
            Some(p) => {
                files.push(("covariates", p.clone()));
                Some(CovariateMatrix::read_csv(p)?)
            }
            None => None,
        }
    };

    let graph = if let Some(p) = &data.edges {
        files.push(("edges", p.clone()));
        Some(AdjacencyGraph::read_edges_csv(p, panel.unit_ids().to_vec())?)
    } else if let Some(p) = &data.polygons {
        files.push(("polygons", p.clone()));
        let polys = read_polygons_geojson(p)?;
        Some(queen_contiguity(&polys, data.snap_tolerance)?)
    } else {
        None
    };

    let inputs = FitInputs::new(panel, covariates, graph)?;
    Ok(Loaded {
        inputs,
        excluded,
        files,
    })
}

/// Spatial families cannot run without an adjacency.
pub fn require_graph(inputs: &FitInputs, families: &[ModelFamily]) -> Result<(), CliError> {
    if inputs.graph.is_some() {
        return Ok(());
    }
    if let Some(f) = families.iter().find(|f| f.is_spatial()) {
        return Err(Error::Dimension(format!(
            "model {f} needs an adjacency structure: pass --edges or --polygons"
        ))
        .into());
    }
    Ok(())
}

pub fn parse_holdout(s: &str) -> Result<Holdout, CliError> {
    match s.trim() {
        "final" => Ok(Holdout::Final),
        "none" => Ok(Holdout::None),
        list => list
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<i64>()
                    .map_err(|_| Error::InvalidInput(format!("--holdout: {p:?} is not a period label")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Holdout::Periods)
            .map_err(CliError::from),
    }
}

/// Config file first, then flags.
pub fn resolve_config(run: &RunArgs, family: Option<ModelFamily>) -> Result<ModelConfig, CliError> {
    let mut cfg = match &run.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            serde_json::from_str::<ModelConfig>(&text).map_err(|e| CliError::parse(p, e))?
        }
        None => ModelConfig::default(),
    };
    if let Some(f) = family {
        cfg.family = f;
    }
    let c = &mut cfg.chain;
    if let Some(v) = run.iters {
        c.n_iter = v;
    }
    if let Some(v) = run.burnin {
        c.burn_in = v;
    }
    if let Some(v) = run.thin {
        c.thin = v;
    }
    if let Some(v) = run.chains {
        c.n_chains = v;
    }
    if let Some(v) = run.seed {
        c.seed = v;
    }
    if let Some(h) = &run.holdout {
        cfg.holdout = parse_holdout(h)?;
    }
    match run.prior {
        Some(PriorArg::Eb) => cfg.prior_mode = PriorMode::EmpiricalBayes,
        Some(PriorArg::Noninf) => cfg.prior_mode = PriorMode::Noninformative,
        None => {}
    }
    if run.two_stage {
        cfg.two_stage = true;
    }
    if let Some(v) = run.alpha_threshold {
        cfg.alpha_threshold = v;
    }
    if let Some(v) = run.beta_threshold {
        cfg.beta_threshold = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn check_threshold(flag: &str, v: f64) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidInput(format!("{flag} must lie in [0, 1], got {v}")).into());
    }
    Ok(())
}

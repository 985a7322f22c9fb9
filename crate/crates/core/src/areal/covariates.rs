use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ArealPanel;

const SIMPLEX_TOL: f64 = 1e-6;

/// Ethnicity categories after collapsing the census race/origin table.
pub const ETHNICITIES: [&str; 5] = ["white", "black", "hispanic", "asian", "other"];

/// Weights on the seven income-to-poverty-line brackets, lowest bracket first.
pub const POVERTY_WEIGHTS: [f64; 7] = [1.0, 5.0 / 6.0, 4.0 / 6.0, 3.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0, 0.0];

/// Column names of the derived predictor set, in matrix order.
pub const COVARIATE_NAMES: [&str; 6] = [
    "pop_total",
    "segregation",
    "log_income",
    "sqrt_poverty",
    "sqrt_vacancy",
    "sqrt_comresprop",
];

/// Land area of one unit split by zoning class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LandUse {
    pub total: f64,
    pub vacant: f64,
    pub commercial: f64,
    pub residential: f64,
}

/// Raw per-unit inputs. `None` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct RawUnitDemographics {
    pub unit_id: String,
    pub ethnic_counts: [f64; 5],
    pub poverty_bracket_props: Option<[f64; 7]>,
    pub income_per_capita: Option<f64>,
    pub land: LandUse,
    pub pop_total: Option<u64>,
}

impl RawUnitDemographics {
    /// True when some input needed by [`build_covariates`] is missing or its
    /// derived ratio is undefined.
    pub fn has_missing(&self) -> bool {
        self.poverty_bracket_props.is_none()
            || self.income_per_capita.is_none()
            || self.pop_total.is_none()
            || self.ethnic_counts.iter().sum::<f64>() <= 0.0
            || landuse_ratios(&self.land).iter().any(Option::is_none)
    }
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{what}: negative or non-finite entry")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidInput(format!("{what}: proportions sum to {s}, not 1")));
    }
    Ok(())
}

/// Dissimilarity between a unit's ethnic composition and the city's:
/// `½ Σ_r |p_r − p̄_r|`, in `[0, 1]`.
pub fn segregation(unit_props: &[f64], city_props: &[f64]) -> Result<f64> {
    if unit_props.len() != city_props.len() {
        return Err(Error::Dimension(format!(
            "unit has {} categories, city has {}",
            unit_props.len(),
            city_props.len()
        )));
    }
    check_simplex(unit_props, "unit proportions")?;
    check_simplex(city_props, "city proportions")?;
    let s: f64 = unit_props.iter().zip(city_props).map(|(p, q)| (p - q).abs()).sum();
    Ok((0.5 * s).clamp(0.0, 1.0))
}

/// Weighted poverty share with linearly decreasing bracket weights.
pub fn poverty_index(bracket_props: &[f64]) -> Result<f64> {
    if bracket_props.len() != POVERTY_WEIGHTS.len() {
        return Err(Error::Dimension(format!(
            "expected 7 poverty brackets, got {}",
            bracket_props.len()
        )));
    }
    check_simplex(bracket_props, "poverty brackets")?;
    let v: f64 = POVERTY_WEIGHTS.iter().zip(bracket_props).map(|(w, q)| w * q).sum();
    Ok(v.clamp(0.0, 1.0))
}

/// `[vacancy, comresprop]`; `None` where the denominator is zero.
pub fn landuse_ratios(land: &LandUse) -> [Option<f64>; 2] {
    let vacancy = (land.total > 0.0).then(|| land.vacant / land.total);
    let cr = land.commercial + land.residential;
    let comres = (cr > 0.0).then(|| land.commercial / cr);
    [vacancy, comres]
}

/// Per-column mean and sample standard deviation used for z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

/// `n × d` static predictor matrix aligned with a list of unit ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    unit_ids: Vec<String>,
    names: Vec<String>,
    z: Vec<Vec<f64>>,
    transform_log: Vec<bool>,
    transform_sqrt: Vec<bool>,
    standardization: Option<Standardization>,
}

impl CovariateMatrix {
    /// Wraps an already-final matrix (no transforms recorded).
    pub fn new(unit_ids: Vec<String>, names: Vec<String>, z: Vec<Vec<f64>>) -> Result<Self> {
        if z.len() != unit_ids.len() {
            return Err(Error::Dimension(format!(
                "{} covariate rows for {} units",
                z.len(),
                unit_ids.len()
            )));
        }
        if z.iter().any(|r| r.len() != names.len()) {
            return Err(Error::Dimension(format!(
                "covariate rows must have {} columns",
                names.len()
            )));
        }
        if z.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite covariate value".into()));
        }
        let d = names.len();
        Ok(CovariateMatrix {
            unit_ids,
            names,
            z,
            transform_log: vec![false; d],
            transform_sqrt: vec![false; d],
            standardization: None,
        })
    }

    /// Matrix with zero columns, for models without predictors.
    pub fn empty(unit_ids: Vec<String>) -> Self {
        let n = unit_ids.len();
        CovariateMatrix {
            unit_ids,
            names: Vec::new(),
            z: vec![Vec::new(); n],
            transform_log: Vec::new(),
            transform_sqrt: Vec::new(),
            standardization: None,
        }
    }

    pub fn n_units(&self) -> usize {
        self.z.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.names.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i]
    }

    pub fn transform_log(&self) -> &[bool] {
        &self.transform_log
    }

    pub fn transform_sqrt(&self) -> &[bool] {
        &self.transform_sqrt
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Z-scores every column in place (sample SD). Fails on a constant column.
    pub fn standardize(&mut self) -> Result<()> {
        let n = self.n_units();
        if n < 2 {
            return Err(Error::InvalidInput("standardizing needs at least two units".into()));
        }
        let d = self.n_covariates();
        let mut means = vec![0.0; d];
        let mut scales = vec![0.0; d];
        for j in 0..d {
            let m = self.z.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let ss: f64 = self.z.iter().map(|r| (r[j] - m).powi(2)).sum();
            let sd = (ss / (n - 1) as f64).sqrt();
            // round-off leaves a constant column with a tiny nonzero SD
            if !(sd > 1e-12 * m.abs().max(1.0)) {
                return Err(Error::InvalidInput(format!(
                    "covariate {} has zero standard deviation",
                    self.names[j]
                )));
            }
            means[j] = m;
            scales[j] = sd;
        }
        for row in &mut self.z {
            for j in 0..d {
                row[j] = (row[j] - means[j]) / scales[j];
            }
        }
        self.standardization = Some(Standardization { means, scales });
        Ok(())
    }

    /// Values on the transformed (log/sqrt) scale before standardization.
    pub fn destandardize(&self) -> Vec<Vec<f64>> {
        match &self.standardization {
            None => self.z.clone(),
            Some(s) => self
                .z
                .iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .map(|(j, v)| v * s.scales[j] + s.means[j])
                        .collect()
                })
                .collect(),
        }
    }

    /// Keeps the listed units in the listed order.
    pub fn select_units(&self, ids: &[String]) -> Result<CovariateMatrix> {
        let lookup: HashMap<&str, usize> = self.unit_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let z = ids
            .iter()
            .map(|id| {
                lookup
                    .get(id.as_str())
                    .map(|&i| self.z[i].clone())
                    .ok_or_else(|| Error::Dimension(format!("no covariates for unit {id}")))
            })
            .collect::<Result<_>>()?;
        Ok(CovariateMatrix {
            unit_ids: ids.to_vec(),
            z,
            ..self.clone()
        })
    }

    /// Reads a precomputed `unit_id,<name>...` table, used as-is.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(file, &path.display().to_string())
    }

    pub fn parse_csv<R: Read>(reader: R, context: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse(context, e.to_string()))?.clone();
        if headers.get(0) != Some("unit_id") {
            return Err(Error::parse(context, "first column must be unit_id"));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut z = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(context, format!("row {}: {e}", line + 2)))?;
            ids.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::parse(context, format!("row {}: bad number {s:?}", line + 2)))
                })
                .collect::<Result<Vec<f64>>>()?;
            z.push(row);
        }
        let uniq: HashSet<&String> = ids.iter().collect();
        if uniq.len() != ids.len() {
            return Err(Error::parse(context, "duplicate unit_id"));
        }
        CovariateMatrix::new(ids, names, z)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::InvalidInput(format!("csv write: {e}"));
        let mut header = vec!["unit_id".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header).map_err(err)?;
        for (id, row) in self.unit_ids.iter().zip(&self.z) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            wtr.write_record(&rec).map_err(err)?;
        }
        wtr.flush()
            .map_err(|e| Error::InvalidInput(format!("csv write: {e}")))?;
        Ok(())
    }
}

/// Options for [`build_covariates`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariateOptions {
    pub standardize: bool,
}

impl Default for CovariateOptions {
    fn default() -> Self {
        CovariateOptions { standardize: true }
    }
}

/// Derives the six predictors (population, segregation, log income, sqrt
/// poverty, sqrt vacancy, sqrt commercial share) and z-scores them.
///
/// City-wide ethnic proportions are pooled over the supplied units.
pub fn build_covariates(raw: &[RawUnitDemographics], options: CovariateOptions) -> Result<CovariateMatrix> {
    if raw.is_empty() {
        return Err(Error::InvalidInput("no units".into()));
    }
    let mut city = [0.0; 5];
    for r in raw {
        for (c, v) in city.iter_mut().zip(r.ethnic_counts) {
            *c += v;
        }
    }
    let city_total: f64 = city.iter().sum();
    if city_total <= 0.0 {
        return Err(Error::InvalidInput("city-wide population is zero".into()));
    }
    let city_props: Vec<f64> = city.iter().map(|c| c / city_total).collect();

    let missing = |id: &str, what: &str| Error::InvalidInput(format!("unit {id}: missing {what}"));
    let mut z = Vec::with_capacity(raw.len());
    for r in raw {
        let id = r.unit_id.as_str();
        let pop = r.pop_total.ok_or_else(|| missing(id, "pop_total"))? as f64;
        let eth_total: f64 = r.ethnic_counts.iter().sum();
        if eth_total <= 0.0 {
            return Err(missing(id, "ethnicity counts"));
        }
        let props: Vec<f64> = r.ethnic_counts.iter().map(|c| c / eth_total).collect();
        let seg = segregation(&props, &city_props)?;
        let income = r.income_per_capita.ok_or_else(|| missing(id, "income"))?;
        if !(income > 0.0) {
            return Err(Error::InvalidInput(format!(
                "unit {id}: income {income} is not positive, cannot take log"
            )));
        }
        let pov = poverty_index(&r.poverty_bracket_props.ok_or_else(|| missing(id, "poverty brackets"))?)
            .map_err(|e| Error::InvalidInput(format!("unit {id}: {e}")))?;
        let [vac, comres] = landuse_ratios(&r.land);
        let vac = vac.ok_or_else(|| missing(id, "vacancy (zero total area)"))?;
        let comres = comres.ok_or_else(|| missing(id, "comresprop (no commercial or residential area)"))?;
        z.push(vec![pop, seg, income.ln(), pov.sqrt(), vac.sqrt(), comres.sqrt()]);
    }

    let names = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut m = CovariateMatrix::new(raw.iter().map(|r| r.unit_id.clone()).collect(), names, z)?;
    m.transform_log = vec![false, false, true, false, false, false];
    m.transform_sqrt = vec![false, false, false, true, true, true];
    if options.standardize {
        m.standardize()?;
    }
    Ok(m)
}

/// Reads raw per-unit inputs. Required columns: `unit_id, pop_total,
/// white, black, hispanic, asian, other, pov_1..pov_7, income, area_total,
/// area_vacant, area_commercial, area_residential`. Empty cells are missing.
///
/// With `ethnicity_map` (raw column → collapsed category), the five
/// ethnicity columns are replaced by the mapped raw columns, summed per
/// category.
pub fn read_raw_covariates_csv(
    path: &Path,
    ethnicity_map: Option<&[(String, String)]>,
) -> Result<Vec<RawUnitDemographics>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_raw_covariates_csv(file, &path.display().to_string(), ethnicity_map)
}

pub fn parse_raw_covariates_csv<R: Read>(
    reader: R,
    context: &str,
    ethnicity_map: Option<&[(String, String)]>,
) -> Result<Vec<RawUnitDemographics>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(context, e.to_string()))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(context, format!("missing column {name}")))
    };
    // (column index, category index)
    let eth_cols: Vec<(usize, usize)> = match ethnicity_map {
        None => ETHNICITIES
            .iter()
            .enumerate()
            .map(|(k, name)| Ok((col(name)?, k)))
            .collect::<Result<_>>()?,
        Some(map) => map
            .iter()
            .map(|(raw, cat)| {
                let k = ETHNICITIES
                    .iter()
                    .position(|e| e == cat)
                    .ok_or_else(|| Error::parse(context, format!("unknown ethnicity category {cat}")))?;
                Ok((col(raw)?, k))
            })
            .collect::<Result<_>>()?,
    };
    let c_id = col("unit_id")?;
    let c_pop = col("pop_total")?;
    let c_pov: Vec<usize> = (1..=7).map(|j| col(&format!("pov_{j}"))).collect::<Result<_>>()?;
    let c_inc = col("income")?;
    let c_land = [
        col("area_total")?,
        col("area_vacant")?,
        col("area_commercial")?,
        col("area_residential")?,
    ];

    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(context, format!("row {}: {e}", line + 2)))?;
        let opt = |c: usize| -> Result<Option<f64>> {
            let s = &rec[c];
            if s.is_empty() || s.eq_ignore_ascii_case("na") {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| Error::parse(context, format!("row {}: bad number {s:?}", line + 2)))
        };
        let mut eth = [0.0; 5];
        for &(c, k) in &eth_cols {
            eth[k] += opt(c)?.unwrap_or(0.0);
        }
        let pov: Vec<Option<f64>> = c_pov.iter().map(|&c| opt(c)).collect::<Result<_>>()?;
        let pov = if pov.iter().all(Option::is_some) {
            let mut a = [0.0; 7];
            for (x, v) in a.iter_mut().zip(pov) {
                *x = v.unwrap();
            }
            Some(a)
        } else {
            None
        };
        let land_vals: Vec<f64> = c_land
            .iter()
            .map(|&c| opt(c).map(|v| v.unwrap_or(0.0)))
            .collect::<Result<_>>()?;
        if land_vals.iter().any(|&v| v < 0.0) {
            return Err(Error::parse(context, format!("row {}: negative land area", line + 2)));
        }
        let pop = match opt(c_pop)? {
            Some(v) if v >= 0.0 && v.fract() == 0.0 => Some(v as u64),
            Some(v) => return Err(Error::parse(context, format!("row {}: bad pop_total {v}", line + 2))),
            None => None,
        };
        out.push(RawUnitDemographics {
            unit_id: rec[c_id].to_string(),
            ethnic_counts: eth,
            poverty_bracket_props: pov,
            income_per_capita: opt(c_inc)?,
            land: LandUse {
                total: land_vals[0],
                vacant: land_vals[1],
                commercial: land_vals[2],
                residential: land_vals[3],
            },
            pop_total: pop,
        });
    }
    Ok(out)
}

/// Reads a `raw_column,category` mapping file for collapsing ethnicity
/// columns onto the five analysis categories.
pub fn read_ethnicity_map(path: &Path) -> Result<Vec<(String, String)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::parse(&ctx, "expected two columns raw_column,category"));
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

/// Which units to drop before fitting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExclusionRules {
    /// Units removed by id regardless of data.
    pub ids: Vec<String>,
    /// Remove units with a missing or undefined covariate input.
    pub drop_missing: bool,
}

/// Result of [`apply_exclusions`].
#[derive(Debug, Clone)]
pub struct Excluded {
    pub panel: ArealPanel,
    pub raw: Vec<RawUnitDemographics>,
    /// Dropped units: missing-data exclusions first, then listed ids.
    pub excluded_ids: Vec<String>,
}

/// Drops units with missing inputs and explicitly listed units, and aligns
/// the raw covariate records with the panel's unit order.
pub fn apply_exclusions(panel: &ArealPanel, raw: &[RawUnitDemographics], rules: &ExclusionRules) -> Result<Excluded> {
    let in_panel: HashSet<&str> = panel.unit_ids().iter().map(String::as_str).collect();
    for id in &rules.ids {
        if !in_panel.contains(id.as_str()) {
            return Err(Error::InvalidInput(format!("cannot exclude unit {id}: not present")));
        }
    }
    let raw_by_id: HashMap<&str, &RawUnitDemographics> = raw.iter().map(|r| (r.unit_id.as_str(), r)).collect();

    let listed: HashSet<&str> = rules.ids.iter().map(String::as_str).collect();
    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    let mut kept_raw = Vec::new();
    for id in panel.unit_ids() {
        let r = raw_by_id.get(id.as_str());
        let missing = match r {
            None => true,
            Some(r) => r.has_missing(),
        };
        if missing && rules.drop_missing {
            excluded.push(id.clone());
            continue;
        }
        if missing {
            return Err(Error::InvalidInput(format!(
                "unit {id} has missing covariates and missing-data exclusion is disabled"
            )));
        }
        if listed.contains(id.as_str()) {
            continue;
        }
        kept.push(id.clone());
        kept_raw.push((*r.unwrap()).clone());
    }
    for id in &rules.ids {
        if !excluded.contains(id) {
            excluded.push(id.clone());
        }
    }
    Ok(Excluded {
        panel: panel.select_units(&kept)?,
        raw: kept_raw,
        excluded_ids: excluded,
    })
}

/// One unit id per line; blank lines and `#` comments are ignored.
pub fn read_exclusions(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

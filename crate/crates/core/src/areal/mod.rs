//! Panel ingestion, response transform, and derived static covariates.

mod covariates;
mod panel;

pub use covariates::{
    apply_exclusions, build_covariates, landuse_ratios, parse_raw_covariates_csv, poverty_index, read_ethnicity_map,
    read_exclusions, read_raw_covariates_csv, segregation, CovariateMatrix, CovariateOptions, Excluded, ExclusionRules,
    LandUse, RawUnitDemographics, Standardization, COVARIATE_NAMES, ETHNICITIES, POVERTY_WEIGHTS,
};
pub use panel::{ihs, ihs_inverse, ArealPanel};

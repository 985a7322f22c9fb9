//! Aligned model inputs and the train/test split over periods.

use crate::areal::{ArealPanel, CovariateMatrix};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::model::Holdout;

/// Panel, covariates and adjacency sharing one unit order (the panel's).
#[derive(Debug, Clone)]
pub struct FitInputs {
    pub panel: ArealPanel,
    pub covariates: CovariateMatrix,
    pub graph: Option<AdjacencyGraph>,
}

impl FitInputs {
    /// Reorders `covariates` and `graph` to the panel's unit order. Missing
    /// covariates mean a model without `γ`.
    pub fn new(panel: ArealPanel, covariates: Option<CovariateMatrix>, graph: Option<AdjacencyGraph>) -> Result<Self> {
        let ids = panel.unit_ids().to_vec();
        let covariates = match covariates {
            Some(c) if c.unit_ids() == ids.as_slice() => c,
            Some(c) => c.select_units(&ids)?,
            None => CovariateMatrix::empty(ids.clone()),
        };
        let graph = match graph {
            Some(g) if g.unit_ids() == ids.as_slice() => Some(g),
            Some(g) => Some(g.restrict(&ids)?),
            None => None,
        };
        Ok(FitInputs {
            panel,
            covariates,
            graph,
        })
    }

    pub fn n_units(&self) -> usize {
        self.panel.n_units()
    }
}

/// Period indices used for training and for testing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl PeriodSplit {
    pub fn all(n_periods: usize) -> Self {
        PeriodSplit {
            train: (0..n_periods).collect(),
            test: Vec::new(),
        }
    }

    /// Trains on every period except `k`.
    pub fn leave_one_out(n_periods: usize, k: usize) -> Self {
        PeriodSplit {
            train: (0..n_periods).filter(|&j| j != k).collect(),
            test: vec![k],
        }
    }
}

impl Holdout {
    pub fn split(&self, periods: &[i64]) -> Result<PeriodSplit> {
        let t = periods.len();
        let split = match self {
            Holdout::None => PeriodSplit::all(t),
            Holdout::Final => {
                if t < 2 {
                    return Err(Error::InvalidInput(
                        "holding out the final period needs at least two periods".into(),
                    ));
                }
                PeriodSplit::leave_one_out(t, t - 1)
            }
            Holdout::Periods(labels) => {
                let mut test = Vec::new();
                for p in labels {
                    let k = periods
                        .iter()
                        .position(|q| q == p)
                        .ok_or_else(|| Error::InvalidInput(format!("holdout period {p} not in panel")))?;
                    if !test.contains(&k) {
                        test.push(k);
                    }
                }
                test.sort_unstable();
                PeriodSplit {
                    train: (0..t).filter(|k| !test.contains(k)).collect(),
                    test,
                }
            }
        };
        if split.train.is_empty() {
            return Err(Error::InvalidInput("no training periods left after the holdout".into()));
        }
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_splits() {
        let p = [2006, 2007, 2008];
        assert_eq!(
            Holdout::Final.split(&p).unwrap(),
            PeriodSplit {
                train: vec![0, 1],
                test: vec![2]
            }
        );
        assert_eq!(Holdout::None.split(&p).unwrap().test, Vec::<usize>::new());
        let s = Holdout::Periods(vec![2007]).split(&p).unwrap();
        assert_eq!(s.train, vec![0, 2]);
        assert!(Holdout::Periods(vec![1999]).split(&p).is_err());
        assert!(Holdout::Periods(p.to_vec()).split(&p).is_err());
    }

    #[test]
    fn inputs_are_aligned_to_panel_order() {
        let panel = ArealPanel::from_responses(
            vec!["b".into(), "a".into()],
            vec![1, 2],
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
        )
        .unwrap();
        let cov = CovariateMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["x".into()],
            vec![vec![10.0], vec![20.0]],
        )
        .unwrap();
        let g = AdjacencyGraph::new(vec!["a".into(), "b".into(), "c".into()], [(0, 1), (1, 2)]).unwrap();
        let inp = FitInputs::new(panel, Some(cov), Some(g)).unwrap();
        assert_eq!(inp.covariates.row(0), &[20.0]);
        let g = inp.graph.unwrap();
        assert_eq!(g.unit_ids(), &["b".to_string(), "a".to_string()]);
        assert_eq!(g.n_edges(), 1);
    }
}

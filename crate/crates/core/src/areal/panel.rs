use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Log-like transform that is defined at zero:
/// `log(c + sqrt(c² + 1)) − log 2`, i.e. `asinh(c) − ln 2`.
pub fn ihs(c: u64) -> f64 {
    ihs_real(c as f64)
}

fn ihs_real(c: f64) -> f64 {
    c.asinh() - std::f64::consts::LN_2
}

/// Inverse of [`ihs`] on the real line.
pub fn ihs_inverse(y: f64) -> f64 {
    (y + std::f64::consts::LN_2).sinh()
}

/// Count panel over `n` areal units and `T` periods.
///
/// `y[i][k]` is the transformed response for unit `i` in the `k`-th period
/// (periods are kept sorted ascending; the time code is `k + 1`). When counts
/// are present, `y` is always `ihs(counts)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArealPanel {
    unit_ids: Vec<String>,
    periods: Vec<i64>,
    counts: Option<Vec<Vec<u64>>>,
    y: Vec<Vec<f64>>,
}

impl ArealPanel {
    pub fn from_counts(unit_ids: Vec<String>, periods: Vec<i64>, counts: Vec<Vec<u64>>) -> Result<Self> {
        check_shape(&unit_ids, &periods, counts.len(), counts.iter().map(Vec::len))?;
        let y = counts.iter().map(|row| row.iter().map(|&c| ihs(c)).collect()).collect();
        let mut p = ArealPanel {
            unit_ids,
            periods,
            counts: Some(counts),
            y,
        };
        p.sort_periods();
        Ok(p)
    }

    /// Panel built directly from real-valued responses (no counts). Used for
    /// synthetic data where the exact response is known.
    pub fn from_responses(unit_ids: Vec<String>, periods: Vec<i64>, y: Vec<Vec<f64>>) -> Result<Self> {
        check_shape(&unit_ids, &periods, y.len(), y.iter().map(Vec::len))?;
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite response".into()));
        }
        let mut p = ArealPanel {
            unit_ids,
            periods,
            counts: None,
            y,
        };
        p.sort_periods();
        Ok(p)
    }

    fn sort_periods(&mut self) {
        let mut idx: Vec<usize> = (0..self.periods.len()).collect();
        idx.sort_by_key(|&k| self.periods[k]);
        if idx.iter().enumerate().all(|(a, &b)| a == b) {
            return;
        }
        self.periods = idx.iter().map(|&k| self.periods[k]).collect();
        for row in &mut self.y {
            *row = idx.iter().map(|&k| row[k]).collect();
        }
        if let Some(counts) = &mut self.counts {
            for row in counts {
                *row = idx.iter().map(|&k| row[k]).collect();
            }
        }
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    pub fn counts(&self) -> Option<&[Vec<u64>]> {
        self.counts.as_deref()
    }

    pub fn y(&self) -> &[Vec<f64>] {
        &self.y
    }

    pub fn response(&self, unit: usize, period_idx: usize) -> f64 {
        self.y[unit][period_idx]
    }

    /// Time code of the `k`-th period: 1 for the earliest, increasing by one.
    pub fn t_code(&self, period_idx: usize) -> f64 {
        (period_idx + 1) as f64
    }

    pub fn period_index(&self, period: i64) -> Result<usize> {
        self.periods
            .iter()
            .position(|&p| p == period)
            .ok_or_else(|| Error::InvalidInput(format!("period {period} not present in panel")))
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.unit_ids.iter().position(|u| u == id)
    }

    /// Keeps only the listed units, in the listed order.
    pub fn select_units(&self, ids: &[String]) -> Result<ArealPanel> {
        let lookup: HashMap<&str, usize> = self.unit_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let idx: Vec<usize> = ids
            .iter()
            .map(|id| {
                lookup
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Dimension(format!("unit {id} not present in panel")))
            })
            .collect::<Result<_>>()?;
        Ok(ArealPanel {
            unit_ids: ids.to_vec(),
            periods: self.periods.clone(),
            counts: self
                .counts
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i].clone()).collect()),
            y: idx.iter().map(|&i| self.y[i].clone()).collect(),
        })
    }

    /// Reads the long-format `unit_id,year,count` file. Every unit must have a
    /// row for every year that appears anywhere in the file.
    pub fn read_crimes_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse_crimes_csv(file, &path.display().to_string())
    }

    pub fn parse_crimes_csv<R: Read>(reader: R, context: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            unit_id: String,
            year: i64,
            count: u64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse(context, e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["unit_id", "year", "count"] {
            return Err(Error::parse(
                context,
                format!(
                    "expected header unit_id,year,count, found {}",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            ));
        }
        let mut order: Vec<String> = Vec::new();
        let mut cells: HashMap<String, BTreeMap<i64, u64>> = HashMap::new();
        let mut years = BTreeSet::new();
        for (line, rec) in rdr.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| Error::parse(context, format!("row {}: {e}", line + 2)))?;
            years.insert(row.year);
            let entry = cells.entry(row.unit_id.clone()).or_insert_with(|| {
                order.push(row.unit_id.clone());
                BTreeMap::new()
            });
            if entry.insert(row.year, row.count).is_some() {
                return Err(Error::parse(
                    context,
                    format!("duplicate row for unit {} year {}", row.unit_id, row.year),
                ));
            }
        }
        if order.is_empty() {
            return Err(Error::parse(context, "no data rows"));
        }
        let periods: Vec<i64> = years.into_iter().collect();
        let mut counts = Vec::with_capacity(order.len());
        for id in &order {
            let m = &cells[id];
            let row: Vec<u64> = periods
                .iter()
                .map(|y| {
                    m.get(y)
                        .copied()
                        .ok_or_else(|| Error::parse(context, format!("missing row for unit {id} year {y}")))
                })
                .collect::<Result<_>>()?;
            counts.push(row);
        }
        ArealPanel::from_counts(order, periods, counts)
    }

    /// Writes the long-format counts file. Requires counts.
    pub fn write_crimes_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let counts = self
            .counts
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("panel has no counts to write".into()))?;
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::InvalidInput(format!("csv write: {e}"));
        wtr.write_record(["unit_id", "year", "count"]).map_err(err)?;
        for (i, id) in self.unit_ids.iter().enumerate() {
            for (k, p) in self.periods.iter().enumerate() {
                wtr.write_record([id.clone(), p.to_string(), counts[i][k].to_string()])
                    .map_err(err)?;
            }
        }
        wtr.flush()
            .map_err(|e| Error::InvalidInput(format!("csv write: {e}")))?;
        Ok(())
    }
}

fn check_shape(
    unit_ids: &[String],
    periods: &[i64],
    rows: usize,
    mut row_lens: impl Iterator<Item = usize>,
) -> Result<()> {
    if unit_ids.is_empty() || periods.is_empty() {
        return Err(Error::InvalidInput(
            "panel needs at least one unit and one period".into(),
        ));
    }
    if rows != unit_ids.len() {
        return Err(Error::Dimension(format!("{} rows for {} units", rows, unit_ids.len())));
    }
    if row_lens.any(|l| l != periods.len()) {
        return Err(Error::Dimension(format!(
            "row length differs from {} periods",
            periods.len()
        )));
    }
    let uniq: BTreeSet<&String> = unit_ids.iter().collect();
    if uniq.len() != unit_ids.len() {
        return Err(Error::InvalidInput("duplicate unit ids".into()));
    }
    let uniq: BTreeSet<&i64> = periods.iter().collect();
    if uniq.len() != periods.len() {
        return Err(Error::InvalidInput("duplicate periods".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ihs_golden_values() {
        assert!((ihs(0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((ihs(1) - 0.188_226).abs() < 1e-6);
        assert!((ihs(100) - 4.605_195).abs() < 1e-6);
        assert!((ihs(100) - 100f64.ln()).abs() < 2.5e-5);
    }

    proptest! {
        #[test]
        fn ihs_is_strictly_increasing(c in 0u64..1_000_000) {
            prop_assert!(ihs(c + 1) > ihs(c));
        }

        #[test]
        fn ihs_tracks_log_for_large_counts(c in 10u64..10_000_000) {
            let cf = c as f64;
            prop_assert!((ihs(c) - cf.ln()).abs() < 1.0 / (4.0 * cf * cf) + 1e-12);
        }
    }

    #[test]
    fn crimes_csv_parses_and_orders_periods() {
        let text = "unit_id,year,count\nb,2007,3\nb,2006,0\na,2006,1\na,2007,2\n";
        let p = ArealPanel::parse_crimes_csv(text.as_bytes(), "test").unwrap();
        assert_eq!(p.unit_ids(), ["b", "a"]);
        assert_eq!(p.periods(), [2006, 2007]);
        assert_eq!(p.counts().unwrap()[0], vec![0, 3]);
        assert_eq!(p.y()[1][1], ihs(2));
        assert_eq!(p.t_code(0), 1.0);
    }

    #[test]
    fn missing_unit_year_is_an_error() {
        let text = "unit_id,year,count\na,2006,1\na,2007,2\nb,2006,0\n";
        let err = ArealPanel::parse_crimes_csv(text.as_bytes(), "test").unwrap_err();
        assert!(err.to_string().contains("missing row for unit b year 2007"));
    }

    #[test]
    fn bad_header_is_rejected() {
        let text = "id,year,count\na,2006,1\n";
        assert!(ArealPanel::parse_crimes_csv(text.as_bytes(), "test").is_err());
    }

    #[test]
    fn crimes_csv_roundtrip() {
        let p = ArealPanel::from_counts(
            vec!["x".into(), "y".into()],
            vec![2010, 2011, 2012],
            vec![vec![1, 2, 3], vec![0, 0, 9]],
        )
        .unwrap();
        let mut buf = Vec::new();
        p.write_crimes_csv(&mut buf).unwrap();
        let q = ArealPanel::parse_crimes_csv(buf.as_slice(), "roundtrip").unwrap();
        assert_eq!(p, q);
    }
}

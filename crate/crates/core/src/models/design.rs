use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::panel::CountryMeta;

/// Name of the integer-coded country column appended for tree models.
pub const COUNTRY_FEATURE: &str = "country";

/// Rows of `(country, date, x)` with a target, stored row-major.
///
/// `countries` is the index table that `country` refers to; it is part of
/// the schema and must match between fit and predict. Targets may be `NaN`
/// for rows that are only predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub feature_names: Vec<String>,
    pub countries: Vec<CountryMeta>,
    pub country: Vec<usize>,
    pub dates: Vec<NaiveDate>,
    pub target_dates: Vec<NaiveDate>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl DesignMatrix {
    pub fn empty(feature_names: Vec<String>, countries: Vec<CountryMeta>) -> Self {
        DesignMatrix {
            feature_names,
            countries,
            country: Vec::new(),
            dates: Vec::new(),
            target_dates: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    /// Convenience constructor for tests and synthetic inputs: every row gets
    /// the same placeholder date.
    pub fn from_rows(
        feature_names: Vec<String>,
        countries: Vec<CountryMeta>,
        rows: Vec<(usize, Vec<f64>, f64)>,
    ) -> Result<Self, ModelError> {
        let epoch = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let mut d = DesignMatrix::empty(feature_names, countries);
        for (c, x, y) in rows {
            d.push(c, epoch, epoch, &x, y)?;
        }
        Ok(d)
    }

    pub fn push(
        &mut self,
        country: usize,
        date: NaiveDate,
        target_date: NaiveDate,
        x: &[f64],
        y: f64,
    ) -> Result<(), ModelError> {
        if x.len() != self.feature_names.len() {
            return Err(ModelError::Schema(format!(
                "row has {} features, expected {}",
                x.len(),
                self.feature_names.len()
            )));
        }
        if country >= self.countries.len() {
            return Err(ModelError::Schema(format!(
                "country index {country} out of range"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Schema("missing or non-finite feature".into()));
        }
        self.country.push(country);
        self.dates.push(date);
        self.target_dates.push(target_date);
        self.x.extend_from_slice(x);
        self.y.push(y);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_features();
        &self.x[i * m..(i + 1) * m]
    }

    pub fn country_code(&self, i: usize) -> &str {
        &self.countries[self.country[i]].code
    }

    /// Copy restricted to `rows` (in the given order).
    pub fn select(&self, rows: &[usize]) -> DesignMatrix {
        let m = self.n_features();
        let mut out = DesignMatrix::empty(self.feature_names.clone(), self.countries.clone());
        out.x.reserve(rows.len() * m);
        for &i in rows {
            out.country.push(self.country[i]);
            out.dates.push(self.dates[i]);
            out.target_dates.push(self.target_dates[i]);
            out.x.extend_from_slice(self.row(i));
            out.y.push(self.y[i]);
        }
        out
    }

    /// Copy keeping only the named feature columns, in the given order.
    pub fn select_features(&self, names: &[&str]) -> Result<DesignMatrix, ModelError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| ModelError::Schema(format!("no feature named {n}")))
            })
            .collect::<Result<_, _>>()?;
        let mut out = self.clone();
        out.feature_names = names.iter().map(|s| s.to_string()).collect();
        out.x = (0..self.n_rows())
            .flat_map(|i| {
                let r = self.row(i);
                idx.iter().map(move |&j| r[j])
            })
            .collect();
        Ok(out)
    }

    pub fn max_feature_date(&self) -> Option<NaiveDate> {
        self.dates.iter().max().copied()
    }

    pub fn max_target_date(&self) -> Option<NaiveDate> {
        self.target_dates.iter().max().copied()
    }

    pub fn check_targets(&self) -> Result<(), ModelError> {
        if self.is_empty() {
            return Err(ModelError::EmptyDesign);
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Schema("training target is missing".into()));
        }
        Ok(())
    }

    /// Feature matrix with the country index appended as a numeric column.
    pub fn with_country_column(&self) -> (Vec<String>, Vec<f64>) {
        let m = self.n_features();
        let mut names = self.feature_names.clone();
        names.push(COUNTRY_FEATURE.to_string());
        let mut x = Vec::with_capacity(self.n_rows() * (m + 1));
        for i in 0..self.n_rows() {
            x.extend_from_slice(self.row(i));
            x.push(self.country[i] as f64);
        }
        (names, x)
    }

    /// Feature matrix with a one-hot block for every country in the index table.
    pub fn with_dummies(&self) -> (Vec<String>, Vec<f64>) {
        let m = self.n_features();
        let c = self.countries.len();
        let mut names = self.feature_names.clone();
        names.extend(self.countries.iter().map(|m| format!("dummy_{}", m.code)));
        let mut x = Vec::with_capacity(self.n_rows() * (m + c));
        for i in 0..self.n_rows() {
            x.extend_from_slice(self.row(i));
            x.extend((0..c).map(|k| if k == self.country[i] { 1.0 } else { 0.0 }));
        }
        (names, x)
    }
}

/// Per-country means of `x` columns and `y`, and the within-demeaned data.
pub(crate) struct Within {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_means: Vec<Vec<f64>>,
    pub y_means: Vec<f64>,
    pub counts: Vec<usize>,
}

pub(crate) fn demean_within(x: &[f64], m: usize, y: &[f64], country: &[usize], n_countries: usize) -> Within {
    let n = y.len();
    let mut counts = vec![0usize; n_countries];
    let mut x_means = vec![vec![0.0; m]; n_countries];
    let mut y_means = vec![0.0; n_countries];
    for i in 0..n {
        let c = country[i];
        counts[c] += 1;
        y_means[c] += y[i];
        for j in 0..m {
            x_means[c][j] += x[i * m + j];
        }
    }
    for c in 0..n_countries {
        if counts[c] > 0 {
            let k = counts[c] as f64;
            y_means[c] /= k;
            for v in &mut x_means[c] {
                *v /= k;
            }
        }
    }
    let mut xd = Vec::with_capacity(n * m);
    let mut yd = Vec::with_capacity(n);
    for i in 0..n {
        let c = country[i];
        yd.push(y[i] - y_means[c]);
        for j in 0..m {
            xd.push(x[i * m + j] - x_means[c][j]);
        }
    }
    Within {
        x: xd,
        y: yd,
        x_means,
        y_means,
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Region;

    fn countries() -> Vec<CountryMeta> {
        vec![
            CountryMeta { code: "A".into(), region: Region::AdvancedEconomies },
            CountryMeta { code: "B".into(), region: Region::EMAsia },
        ]
    }

    #[test]
    fn push_validates_width_and_finiteness() {
        let mut d = DesignMatrix::empty(vec!["f".into()], countries());
        let day = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        assert!(d.push(0, day, day, &[1.0, 2.0], 0.0).is_err());
        assert!(d.push(0, day, day, &[f64::NAN], 0.0).is_err());
        assert!(d.push(5, day, day, &[1.0], 0.0).is_err());
        d.push(1, day, day, &[1.0], 0.0).unwrap();
        assert_eq!(d.n_rows(), 1);
    }

    #[test]
    fn augmented_matrices() {
        let d = DesignMatrix::from_rows(
            vec!["f".into()],
            countries(),
            vec![(0, vec![1.5], 0.0), (1, vec![2.5], 1.0)],
        )
        .unwrap();
        let (n, x) = d.with_country_column();
        assert_eq!(n, vec!["f", "country"]);
        assert_eq!(x, vec![1.5, 0.0, 2.5, 1.0]);
        let (n, x) = d.with_dummies();
        assert_eq!(n.len(), 3);
        assert_eq!(x, vec![1.5, 1.0, 0.0, 2.5, 0.0, 1.0]);
    }

    #[test]
    fn within_demeaning() {
        let w = demean_within(&[1.0, 3.0, 10.0], 1, &[2.0, 4.0, 7.0], &[0, 0, 1], 2);
        assert_eq!(w.x, vec![-1.0, 1.0, 0.0]);
        assert_eq!(w.y_means, vec![3.0, 7.0]);
        assert_eq!(w.counts, vec![2, 1]);
    }
}

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{PanelError, StandardizationScope};

/// Ordered daily observations with gaps allowed.
///
/// Dates are strictly increasing and every value is finite.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Series {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl Series {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self, PanelError> {
        if dates.len() != values.len() {
            return Err(PanelError::Invalid(format!(
                "series has {} dates but {} values",
                dates.len(),
                values.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(PanelError::Invalid(format!(
                "series dates not strictly increasing at {}",
                w[1]
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PanelError::Invalid(format!(
                "non-finite value at {}",
                dates[i]
            )));
        }
        Ok(Series { dates, values })
    }

    /// Builds from unordered pairs, sorting by date.
    pub fn from_pairs(mut pairs: Vec<(NaiveDate, f64)>) -> Result<Self, PanelError> {
        pairs.sort_by_key(|p| p.0);
        let (dates, values) = pairs.into_iter().unzip();
        Series::new(dates, values)
    }

    pub fn empty() -> Self {
        Series::default()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.dates.iter().copied().zip(self.values.iter().copied())
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.dates
            .binary_search(&date)
            .ok()
            .map(|i| self.values[i])
    }

    /// Observations with `from <= date <= to`.
    pub fn restrict(&self, from: NaiveDate, to: NaiveDate) -> Series {
        let lo = self.dates.partition_point(|d| *d < from);
        let hi = self.dates.partition_point(|d| *d <= to);
        if lo >= hi {
            return Series::empty();
        }
        Series {
            dates: self.dates[lo..hi].to_vec(),
            values: self.values[lo..hi].to_vec(),
        }
    }

    pub fn shift_days(&self, days: i64) -> Series {
        Series {
            dates: self
                .dates
                .iter()
                .map(|d| *d + Duration::days(days))
                .collect(),
            values: self.values.clone(),
        }
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Series {
        Series {
            dates: self.dates.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }
}

/// Trailing calendar-day moving average.
///
/// The value at an observation date `d` is the mean of every observation
/// dated in `(d - window, d]`. Output starts at the `window`-th observation;
/// gaps simply shrink the averaging set.
pub fn moving_average(s: &Series, window: u32) -> Series {
    let window = window.max(1) as i64;
    let n = s.len();
    let start = (window as usize).saturating_sub(1);
    if n == 0 || start >= n {
        return Series::empty();
    }
    let mut dates = Vec::with_capacity(n - start);
    let mut values = Vec::with_capacity(n - start);
    let mut lo = 0usize;
    for hi in 0..n {
        while (s.dates[hi] - s.dates[lo]).num_days() >= window {
            lo += 1;
        }
        if hi >= start {
            // summed afresh per point so values do not depend on the prefix
            let sum: f64 = s.values[lo..=hi].iter().sum();
            dates.push(s.dates[hi]);
            values.push(sum / (hi - lo + 1) as f64);
        }
    }
    Series { dates, values }
}

/// Mean and standard deviation used by [`standardize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Z-scores a series with statistics from the configured scope.
///
/// Uses the sample standard deviation (`n - 1`). Under
/// [`StandardizationScope::TrainOnly`] the statistics come from observations
/// dated on or before the cutoff and are applied to the whole series.
pub fn standardize(
    s: &Series,
    scope: StandardizationScope,
) -> Result<(Series, Standardization), PanelError> {
    let sample: &[f64] = match scope {
        StandardizationScope::FullSample => &s.values,
        StandardizationScope::TrainOnly { cutoff } => {
            let hi = s.dates.partition_point(|d| *d <= cutoff);
            &s.values[..hi]
        }
    };
    if sample.len() < 2 {
        return Err(PanelError::TooShort {
            needed: 2,
            got: sample.len(),
        });
    }
    let mean = crate::stats::mean(sample);
    let sd = crate::stats::sample_sd(sample);
    if !(sd > 1e-12) {
        return Err(PanelError::Degenerate { sd });
    }
    let st = Standardization { mean, sd };
    Ok((s.map_values(|v| st.apply(v)), st))
}

/// Fraction of calendar days in `[center - h, center + h]` with an observation.
pub fn coverage(s: &Series, center: NaiveDate, half_width: u32) -> f64 {
    let h = Duration::days(half_width as i64);
    let observed = s.restrict(center - h, center + h).len();
    observed as f64 / (2 * half_width as usize + 1) as f64
}

/// Fills gaps of at most `max_gap` missing days by linear interpolation.
pub fn interpolate_short_gaps(s: &Series, max_gap: u32) -> Series {
    if s.len() < 2 {
        return s.clone();
    }
    let mut dates = Vec::with_capacity(s.len());
    let mut values = Vec::with_capacity(s.len());
    for k in 0..s.len() {
        dates.push(s.dates[k]);
        values.push(s.values[k]);
        if k + 1 == s.len() {
            break;
        }
        let span = (s.dates[k + 1] - s.dates[k]).num_days();
        let missing = span - 1;
        if missing >= 1 && missing <= max_gap as i64 {
            let (a, b) = (s.values[k], s.values[k + 1]);
            for step in 1..span {
                let frac = step as f64 / span as f64;
                dates.push(s.dates[k] + Duration::days(step));
                values.push(a + (b - a) * frac);
            }
        }
    }
    Series { dates, values }
}

use serde::{Deserialize, Serialize};

use super::{
    moving_average, standardize, Panel, PanelError, PreprocessPolicy, Standardization, Variable,
};

/// Statistics and drops produced by [`preprocess`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PreprocessReport {
    /// `(country or GLOBAL, variable, statistics)` for every standardized series.
    pub standardization: Vec<(String, Variable, Standardization)>,
    /// `(country or GLOBAL, variable, reason)` for every dropped series.
    pub dropped: Vec<(String, Variable, String)>,
}

/// Smooths every series with the trailing moving average and, when enabled,
/// z-scores it per country.
///
/// Global series are standardized once over their own sample. Degenerate or
/// too-short series are dropped and listed in the report; a country whose CDS
/// series is dropped leaves the panel.
pub fn preprocess(
    panel: &Panel,
    policy: &PreprocessPolicy,
) -> Result<(Panel, PreprocessReport), PanelError> {
    policy.validate()?;
    let mut report = PreprocessReport::default();
    let out = panel.map_series(|country, var, s| {
        let label = country.unwrap_or(super::GLOBAL_CODE).to_string();
        let smoothed = moving_average(s, policy.ma_window);
        if !policy.standardize {
            return Some(smoothed);
        }
        match standardize(&smoothed, policy.scope) {
            Ok((z, st)) => {
                report.standardization.push((label, var, st));
                Some(z)
            }
            Err(e) => {
                log::warn!("dropping {label}/{var}: {e}");
                report.dropped.push((label, var, e.to_string()));
                None
            }
        }
    })?;
    Ok((out, report))
}

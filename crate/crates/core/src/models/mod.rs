//! Estimator zoo behind a uniform fit/predict contract.
//!
//! Linear families absorb country fixed effects by within-demeaning; tree
//! families see the country as one integer-coded feature column
//! ([`design::COUNTRY_FEATURE`]).

pub mod design;
pub mod ensemble;
pub mod factor;
pub mod hyperparams;
pub mod linear;
pub mod multilayer;
pub mod quantile;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorKind;
use crate::panel::Variable;

pub use design::{DesignMatrix, COUNTRY_FEATURE};
pub use ensemble::{Boosted, Forest};
pub use factor::FactorModel;
pub use hyperparams::HyperparamTable;
pub use linear::LinearModel;
pub use multilayer::{Multilayer, MultilayerVariant};
pub use tree::{Node, Tree, TreeParams};

/// Version tag written into serialized models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("design matrix has no rows")]
    EmptyDesign,
    #[error("rank-deficient design, collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },
    #[error("solver did not converge after {iterations} iterations (last gap {gap:e})")]
    NotConverged {
        iterations: usize,
        gap: f64,
        last: Vec<f64>,
    },
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("country index {0} has no fitted intercept")]
    UnknownCountry(usize),
    #[error("country {0} is not mapped to any model group")]
    UnmappedCountry(String),
    #[error("requested {k} components but the design has rank {rank}")]
    KExceedsRank { k: usize, rank: usize },
    #[error("model integrity: {0}")]
    Integrity(String),
}

impl ModelError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ModelError::RankDeficient { .. }
            | ModelError::NotConverged { .. }
            | ModelError::KExceedsRank { .. }
            | ModelError::Integrity(_) => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "OLS_FE")]
    OlsFe,
    Lasso,
    Ridge,
    ElasticNet,
    QuantileReg,
    #[serde(rename = "PCR")]
    Pcr,
    FactorRidge,
    GradientBoosting,
    Bagging,
    RandomForest,
    ExtraTrees,
    #[serde(rename = "MultilayerRF_1S")]
    MultilayerRf1S,
    #[serde(rename = "MultilayerRF_2S")]
    MultilayerRf2S,
}

impl Family {
    pub const ALL: [Family; 13] = [
        Family::OlsFe,
        Family::Lasso,
        Family::Ridge,
        Family::ElasticNet,
        Family::QuantileReg,
        Family::Pcr,
        Family::FactorRidge,
        Family::GradientBoosting,
        Family::Bagging,
        Family::RandomForest,
        Family::ExtraTrees,
        Family::MultilayerRf1S,
        Family::MultilayerRf2S,
    ];

    /// Families whose fits are linear in the features.
    pub const LINEAR: [Family; 7] = [
        Family::OlsFe,
        Family::Lasso,
        Family::Ridge,
        Family::ElasticNet,
        Family::QuantileReg,
        Family::Pcr,
        Family::FactorRidge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::OlsFe => "OLS_FE",
            Family::Lasso => "Lasso",
            Family::Ridge => "Ridge",
            Family::ElasticNet => "ElasticNet",
            Family::QuantileReg => "QuantileReg",
            Family::Pcr => "PCR",
            Family::FactorRidge => "FactorRidge",
            Family::GradientBoosting => "GradientBoosting",
            Family::Bagging => "Bagging",
            Family::RandomForest => "RandomForest",
            Family::ExtraTrees => "ExtraTrees",
            Family::MultilayerRf1S => "MultilayerRF_1S",
            Family::MultilayerRf2S => "MultilayerRF_2S",
        }
    }

    pub fn is_tree(self) -> bool {
        !Family::LINEAR.contains(&self)
    }

    /// Parameter names accepted by the family, in a stable order.
    pub fn schema(self) -> &'static [&'static str] {
        const FOREST: &[&str] = &[
            "n_trees",
            "max_depth",
            "min_samples_split",
            "min_samples_leaf",
            "feature_fraction",
        ];
        match self {
            Family::OlsFe => &[],
            Family::Lasso | Family::Ridge => &["lambda"],
            Family::ElasticNet => &["lambda", "rho"],
            Family::QuantileReg => &["tau", "lambda"],
            Family::Pcr => &["k"],
            Family::FactorRidge => &["n_factors", "lambda"],
            Family::GradientBoosting => &[
                "n_trees",
                "learning_rate",
                "max_depth",
                "subsample",
                "feature_fraction",
                "min_child_weight",
            ],
            Family::Bagging | Family::RandomForest | Family::ExtraTrees => FOREST,
            Family::MultilayerRf2S => &[
                "n_trees",
                "stage1.max_depth",
                "stage1.subsample",
                "stage1.feature_fraction",
                "stage1.min_child_weight",
                "stage2.max_depth",
                "stage2.subsample",
                "stage2.feature_fraction",
                "stage2.min_child_weight",
            ],
            Family::MultilayerRf1S => &[
                "n_trees",
                "ae.max_depth",
                "ae.subsample",
                "ae.feature_fraction",
                "ae.min_child_weight",
                "em.max_depth",
                "em.subsample",
                "em.feature_fraction",
                "em.min_child_weight",
            ],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim();
        Family::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(key))
            .ok_or_else(|| ModelError::Hyperparams(format!("unknown model family '{s}'")))
    }
}

/// Information set a model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InfoSet {
    #[serde(rename = "markets")]
    MarketsOnly,
    #[serde(rename = "news")]
    MarketsPlusNews,
}

impl InfoSet {
    pub const ALL: [InfoSet; 2] = [InfoSet::MarketsOnly, InfoSet::MarketsPlusNews];

    pub fn as_str(self) -> &'static str {
        match self {
            InfoSet::MarketsOnly => "markets",
            InfoSet::MarketsPlusNews => "news",
        }
    }

    pub fn variables(self) -> Vec<Variable> {
        let mut v = Variable::MARKETS.to_vec();
        if self == InfoSet::MarketsPlusNews {
            v.extend(Variable::NEWS);
        }
        v
    }
}

impl fmt::Display for InfoSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InfoSet {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "markets" | "marketsonly" | "markets_only" => Ok(InfoSet::MarketsOnly),
            "news" | "marketsplusnews" | "markets+news" | "markets_plus_news" => {
                Ok(InfoSet::MarketsPlusNews)
            }
            _ => Err(ModelError::Hyperparams(format!("unknown information set '{s}'"))),
        }
    }
}

/// Estimator identity plus hyperparameters, information set and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    pub infoset: InfoSet,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(family: Family, infoset: InfoSet, seed: u64) -> Self {
        ModelSpec {
            family,
            params: BTreeMap::new(),
            infoset,
            seed,
        }
    }

    /// Spec carrying the shipped defaults for `(family, infoset)`.
    pub fn with_defaults(family: Family, infoset: InfoSet, seed: u64) -> Self {
        let params = HyperparamTable::builtin()
            .get(family, infoset)
            .cloned()
            .unwrap_or_default();
        ModelSpec {
            family,
            params,
            infoset,
            seed,
        }
    }

    pub fn set(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    /// Caps `n_trees` at `max`. Boosting keeps `n_trees * learning_rate`
    /// fixed so the total shrinkage budget is unchanged.
    pub fn with_tree_cap(mut self, max: usize) -> Self {
        let Some(n) = self.params.get("n_trees").copied() else { return self };
        let cap = max.max(1) as f64;
        if n <= cap {
            return self;
        }
        if let Some(lr) = self.params.get_mut("learning_rate") {
            *lr = (*lr * n / cap).min(1.0);
        }
        self.params.insert("n_trees".into(), cap);
        self
    }

    pub fn get(&self, key: &str) -> Result<f64, ModelError> {
        self.params.get(key).copied().ok_or_else(|| {
            ModelError::Hyperparams(format!("{} requires parameter '{key}'", self.family))
        })
    }

    fn get_count(&self, key: &str) -> Result<usize, ModelError> {
        let v = self.get(key)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(ModelError::Hyperparams(format!(
                "{key} must be a non-negative integer (got {v})"
            )));
        }
        Ok(v as usize)
    }

    /// Checks names against the family schema and values against their ranges.
    pub fn validate(&self) -> Result<(), ModelError> {
        let schema = self.family.schema();
        let unknown: Vec<&str> = self
            .params
            .keys()
            .map(String::as_str)
            .filter(|k| !schema.contains(k))
            .collect();
        if !unknown.is_empty() {
            return Err(ModelError::Hyperparams(format!(
                "{} does not accept {unknown:?}",
                self.family
            )));
        }
        for key in schema {
            let v = self.get(key)?;
            if !v.is_finite() {
                return Err(ModelError::Hyperparams(format!("{key} is not finite")));
            }
            let field = key.rsplit('.').next().unwrap_or(key);
            let ok = match field {
                "lambda" => v >= 0.0,
                "rho" => (0.0..=1.0).contains(&v),
                "tau" => v > 0.0 && v < 1.0,
                "learning_rate" => v >= 0.0,
                "subsample" | "feature_fraction" => v > 0.0 && v <= 1.0,
                "k" | "n_factors" | "n_trees" | "max_depth" | "min_samples_split" => {
                    v >= 1.0 && v.fract() == 0.0
                }
                "min_samples_leaf" | "min_child_weight" => v >= 0.0 && v.fract() == 0.0,
                _ => true,
            };
            if !ok {
                return Err(ModelError::Hyperparams(format!(
                    "{key} = {v} is out of range for {}",
                    self.family
                )));
            }
        }
        Ok(())
    }

    /// Tree limits for a single-forest family.
    pub fn forest_params(&self) -> Result<(usize, TreeParams), ModelError> {
        let p = TreeParams {
            max_depth: self.get_count("max_depth")?,
            min_samples_split: self.get_count("min_samples_split")?,
            min_samples_leaf: self.get_count("min_samples_leaf")?,
            feature_fraction: self.get("feature_fraction")?,
            random_thresholds: self.family == Family::ExtraTrees,
        };
        Ok((self.get_count("n_trees")?, p))
    }

    /// `(tree limits, row subsample)` for a multilayer group prefix such as `stage1`.
    pub fn group_params(&self, prefix: &str) -> Result<(TreeParams, f64), ModelError> {
        let key = |f: &str| format!("{prefix}.{f}");
        let p = TreeParams {
            max_depth: self.get_count(&key("max_depth"))?,
            min_samples_split: 2,
            min_samples_leaf: self.get_count(&key("min_child_weight"))?.max(1),
            feature_fraction: self.get(&key("feature_fraction"))?,
            random_thresholds: false,
        };
        Ok((p, self.get(&key("subsample"))?))
    }
}

/// What the model was trained on; checked again at predict time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub n_rows: usize,
    pub feature_names: Vec<String>,
    pub countries: Vec<String>,
    pub seed: u64,
    pub max_feature_date: Option<NaiveDate>,
    pub max_target_date: Option<NaiveDate>,
    /// SHA-256 over every training row (country, dates, features, target).
    pub rows_sha256: String,
}

impl Fingerprint {
    pub fn of(d: &DesignMatrix, seed: u64) -> Self {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for i in 0..d.n_rows() {
            h.update((d.country[i] as u64).to_le_bytes());
            h.update(d.dates[i].to_string().as_bytes());
            h.update(d.target_dates[i].to_string().as_bytes());
            for v in d.row(i) {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(d.y[i].to_bits().to_le_bytes());
        }
        Fingerprint {
            n_rows: d.n_rows(),
            feature_names: d.feature_names.clone(),
            countries: d.countries.iter().map(|c| c.code.clone()).collect(),
            seed,
            max_feature_date: d.max_feature_date(),
            max_target_date: d.max_target_date(),
            rows_sha256: hex::encode(h.finalize()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum FittedParams {
    Linear(LinearModel),
    Factor(FactorModel),
    Forest(Forest),
    Boosted(Boosted),
    Multilayer(Multilayer),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub fingerprint: Fingerprint,
    pub params: FittedParams,
}

impl FittedModel {
    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let m: FittedModel =
            serde_json::from_str(s).map_err(|e| ModelError::Integrity(e.to_string()))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Integrity(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    /// Compares feature names and the country table against the fingerprint.
    pub fn check_schema(&self, d: &DesignMatrix) -> Result<(), ModelError> {
        let fp = &self.fingerprint;
        let mut diffs = Vec::new();
        if fp.feature_names != d.feature_names {
            let missing: Vec<&String> = fp
                .feature_names
                .iter()
                .filter(|f| !d.feature_names.contains(f))
                .collect();
            let extra: Vec<&String> = d
                .feature_names
                .iter()
                .filter(|f| !fp.feature_names.contains(f))
                .collect();
            diffs.push(format!(
                "features differ (missing {missing:?}, unexpected {extra:?}, trained order {:?})",
                fp.feature_names
            ));
        }
        let codes: Vec<String> = d.countries.iter().map(|c| c.code.clone()).collect();
        if fp.countries != codes {
            diffs.push(format!(
                "country table differs (trained {:?}, got {:?})",
                fp.countries, codes
            ));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Schema(diffs.join("; ")))
        }
    }
}

/// Fits `spec` on `d`.
pub fn fit(spec: &ModelSpec, d: &DesignMatrix) -> Result<FittedModel, ModelError> {
    spec.validate()?;
    d.check_targets()?;
    let params = match spec.family {
        Family::OlsFe => FittedParams::Linear(linear::fit_ols_fe(d)?),
        Family::Lasso => FittedParams::Linear(linear::fit_lasso(d, spec.get("lambda")?)?),
        Family::Ridge => FittedParams::Linear(linear::fit_ridge(d, spec.get("lambda")?)?),
        Family::ElasticNet => FittedParams::Linear(linear::fit_elastic_net(
            d,
            spec.get("lambda")?,
            spec.get("rho")?,
        )?),
        Family::QuantileReg => FittedParams::Linear(quantile::fit_quantile(
            d,
            spec.get("tau")?,
            spec.get("lambda")?,
        )?),
        Family::Pcr => {
            let k = factor::clip_components(d, spec.get_count("k")?);
            FittedParams::Factor(factor::fit_pcr(d, k)?)
        }
        Family::FactorRidge => {
            let k = factor::clip_components(d, spec.get_count("n_factors")?);
            FittedParams::Factor(factor::fit_factor_ridge(d, k, spec.get("lambda")?)?)
        }
        Family::GradientBoosting => {
            FittedParams::Boosted(ensemble::fit_gradient_boosting(d, &ensemble::BoostParams {
                n_trees: spec.get_count("n_trees")?,
                learning_rate: spec.get("learning_rate")?,
                max_depth: spec.get_count("max_depth")?,
                subsample: spec.get("subsample")?,
                feature_fraction: spec.get("feature_fraction")?,
                min_child_weight: spec.get_count("min_child_weight")?,
            }, spec.seed)?)
        }
        Family::Bagging | Family::RandomForest | Family::ExtraTrees => {
            let (n_trees, p) = spec.forest_params()?;
            let sampling = if spec.family == Family::ExtraTrees {
                ensemble::RowSampling::All
            } else {
                ensemble::RowSampling::Bootstrap
            };
            FittedParams::Forest(ensemble::fit_forest(d, n_trees, &p, sampling, spec.seed)?)
        }
        Family::MultilayerRf1S | Family::MultilayerRf2S => {
            FittedParams::Multilayer(multilayer::fit_multilayer_spec(d, spec)?)
        }
    };
    Ok(FittedModel {
        format_version: MODEL_FORMAT_VERSION,
        spec: spec.clone(),
        fingerprint: Fingerprint::of(d, spec.seed),
        params,
    })
}

/// Predicts every row of `d`; the schema must match the training fingerprint.
pub fn predict(m: &FittedModel, d: &DesignMatrix) -> Result<Vec<f64>, ModelError> {
    m.check_schema(d)?;
    match &m.params {
        FittedParams::Linear(lm) => (0..d.n_rows())
            .map(|i| lm.predict_row(d.country[i], d.row(i)))
            .collect(),
        FittedParams::Factor(fm) => (0..d.n_rows())
            .map(|i| fm.predict_row(d.country[i], d.row(i)))
            .collect(),
        FittedParams::Forest(f) => {
            let (_, x) = d.with_country_column();
            let w = d.n_features() + 1;
            Ok((0..d.n_rows()).map(|i| f.predict_row(&x[i * w..(i + 1) * w])).collect())
        }
        FittedParams::Boosted(b) => {
            let (_, x) = d.with_country_column();
            let w = d.n_features() + 1;
            Ok((0..d.n_rows()).map(|i| b.predict_row(&x[i * w..(i + 1) * w])).collect())
        }
        FittedParams::Multilayer(ml) => {
            let (_, x) = d.with_country_column();
            let w = d.n_features() + 1;
            (0..d.n_rows())
                .map(|i| ml.predict_row(d.country[i], &x[i * w..(i + 1) * w]))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{CountryMeta, Region};

    #[test]
    fn tree_cap_preserves_shrinkage_budget() {
        let gb = ModelSpec::with_defaults(Family::GradientBoosting, InfoSet::MarketsPlusNews, 0).with_tree_cap(107);
        assert_eq!(gb.get("n_trees").unwrap(), 107.0);
        assert!((gb.get("learning_rate").unwrap() - 0.012 * 535.0 / 107.0).abs() < 1e-12);
        let et = ModelSpec::with_defaults(Family::ExtraTrees, InfoSet::MarketsOnly, 0).with_tree_cap(5000);
        assert_eq!(et.get("n_trees").unwrap(), 1000.0);
        let ols = ModelSpec::with_defaults(Family::OlsFe, InfoSet::MarketsOnly, 0);
        assert_eq!(ols.clone().with_tree_cap(3), ols);
    }

    fn design() -> DesignMatrix {
        let countries = vec![
            CountryMeta { code: "AA".into(), region: Region::AdvancedEconomies },
            CountryMeta { code: "BB".into(), region: Region::EMAsia },
        ];
        let rows = (0..40)
            .map(|i| {
                let a = (i as f64 * 0.37).sin();
                let b = (i as f64 * 0.91).cos();
                (i % 2, vec![a, b], 1.0 + 2.0 * a - b + (i % 2) as f64)
            })
            .collect();
        DesignMatrix::from_rows(vec!["FED".into(), "VIX".into()], countries, rows).unwrap()
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
            let js = serde_json::to_string(&f).unwrap();
            assert_eq!(js, format!("\"{}\"", f.as_str()));
        }
        assert!("CNN".parse::<Family>().is_err());
    }

    #[test]
    fn spec_validation() {
        let s = ModelSpec::new(Family::ElasticNet, InfoSet::MarketsOnly, 0);
        assert!(s.validate().is_err());
        let s = s.set("lambda", 0.1).set("rho", 0.5);
        s.validate().unwrap();
        assert!(s.clone().set("rho", 1.2).validate().is_err());
        assert!(s.set("alpha", 1.0).validate().is_err());
    }

    #[test]
    fn every_default_spec_validates() {
        for f in Family::ALL {
            for i in InfoSet::ALL {
                ModelSpec::with_defaults(f, i, 1).validate().unwrap();
            }
        }
    }

    #[test]
    fn fit_predict_json_round_trip() {
        let d = design();
        let spec = ModelSpec::new(Family::RandomForest, InfoSet::MarketsOnly, 3)
            .set("n_trees", 5.0)
            .set("max_depth", 4.0)
            .set("min_samples_split", 2.0)
            .set("min_samples_leaf", 1.0)
            .set("feature_fraction", 1.0);
        let m = fit(&spec, &d).unwrap();
        let back = FittedModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(predict(&m, &d).unwrap(), predict(&back, &d).unwrap());
    }

    #[test]
    fn schema_mismatch_lists_differences() {
        let d = design();
        let m = fit(&ModelSpec::new(Family::OlsFe, InfoSet::MarketsOnly, 0), &d).unwrap();
        let other = d.select_features(&["VIX", "FED"]).unwrap();
        let err = predict(&m, &other).unwrap_err().to_string();
        assert!(err.contains("trained order"), "{err}");
    }

    #[test]
    fn determinism_of_stochastic_fit() {
        let d = design();
        let spec = ModelSpec::new(Family::ExtraTrees, InfoSet::MarketsOnly, 11)
            .set("n_trees", 8.0)
            .set("max_depth", 6.0)
            .set("min_samples_split", 2.0)
            .set("min_samples_leaf", 1.0)
            .set("feature_fraction", 0.5);
        let a = fit(&spec, &d).unwrap();
        let b = fit(&spec, &d).unwrap();
        assert_eq!(a, b);
    }
}

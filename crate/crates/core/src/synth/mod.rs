//! Synthetic panels with known structure, and brute-force oracles.
//!
//! The generator mirrors the mechanisms the toolkit is meant to detect:
//! AR(1) global push factors (FED, VIX), per-country AR(1) news indices, a
//! geopolitical-risk effect that only switches on when VIX is above a
//! quantile, and a FED x VIX product term. Every additive component is
//! recorded so tests can compare against the truth.
//!
//! The oracles in [`oracle`] deliberately share no code with the production
//! attribution and connectedness modules.

pub mod oracle;

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::panel::{CountryMeta, Panel, PanelError, Region, Series, Taxonomy, Variable};

pub use oracle::{brute_gfevd, brute_shap_interactions, brute_shapley, OracleError};

/// Data-generating process. Loadings are per variable in the order
/// FED, VIX, GPR, EPU, TPU, ECO, INT, POL and are scaled per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpSpec {
    pub n_countries: usize,
    pub start: NaiveDate,
    pub n_days: usize,
    pub seed: u64,
    pub global_persistence: f64,
    pub global_vol: f64,
    pub news_persistence: f64,
    pub news_vol: f64,
    pub loadings: [f64; 8],
    /// Multiplier on all loadings, by region in [`Region::ALL`] order.
    pub region_multipliers: [f64; 5],
    /// Scales the six news loadings and the threshold term.
    pub news_strength: f64,
    /// Coefficient on GPR when VIX exceeds its `threshold_quantile`.
    pub threshold_coef: f64,
    pub threshold_quantile: f64,
    pub interaction_coef: f64,
    pub noise_sd: f64,
    /// Countries start up to this many days late.
    pub max_start_offset: usize,
    /// Daily probability that a country's observations are missing.
    pub gap_probability: f64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            n_countries: 42,
            start: NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date"),
            n_days: 1500,
            seed: 7,
            global_persistence: 0.9,
            global_vol: 0.2,
            news_persistence: 0.97,
            news_vol: 0.25,
            loadings: [0.6, 0.8, 0.09, 0.09, 0.06, -0.09, 0.06, 0.075],
            region_multipliers: [1.0, 1.1, 1.3, 1.2, 1.15],
            news_strength: 1.0,
            threshold_coef: 2.0,
            threshold_quantile: 0.8,
            interaction_coef: 0.5,
            noise_sd: 0.1,
            max_start_offset: 200,
            gap_probability: 0.02,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<(), PanelError> {
        let bad = |m: &str| Err(PanelError::Invalid(m.to_string()));
        if self.n_countries == 0 || self.n_countries > Taxonomy::builtin().len() {
            return bad("n_countries must be between 1 and the size of the built-in taxonomy");
        }
        if self.n_days < 3 {
            return bad("n_days must be at least 3");
        }
        for (name, r) in [("global_persistence", self.global_persistence), ("news_persistence", self.news_persistence)] {
            if !(r > -1.0 && r < 1.0) {
                return Err(PanelError::Invalid(format!("{name} must lie in (-1, 1)")));
            }
        }
        if !(self.threshold_quantile > 0.0 && self.threshold_quantile < 1.0) {
            return bad("threshold_quantile must lie in (0, 1)");
        }
        if !(self.noise_sd >= 0.0 && self.global_vol >= 0.0 && self.news_vol >= 0.0) {
            return bad("volatilities must be non-negative");
        }
        if !(0.0..1.0).contains(&self.gap_probability) {
            return bad("gap_probability must lie in [0, 1)");
        }
        if self.max_start_offset + 2 >= self.n_days {
            return bad("max_start_offset leaves no observations");
        }
        Ok(())
    }

    pub fn news_loadings(&self) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (o, l) in out.iter_mut().zip(&self.loadings[2..]) {
            *o = l * self.news_strength;
        }
        out
    }
}

/// Additive decomposition of one generated CDS observation dated `date`
/// (driven by features dated the previous day).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub date: NaiveDate,
    pub country: String,
    pub alpha: f64,
    pub markets: f64,
    pub news: f64,
    pub threshold: f64,
    pub interaction: f64,
    pub noise: f64,
    pub cds: f64,
}

impl TruthRow {
    pub fn components_sum(&self) -> f64 {
        self.alpha + self.markets + self.news + self.threshold + self.interaction + self.noise
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub panel: Panel,
    pub truth: Vec<TruthRow>,
    /// VIX level above which the threshold term is active.
    pub vix_threshold: f64,
}

/// Picks `n` built-in countries round-robin across regions so small panels
/// still span several regions.
pub fn pick_countries(n: usize) -> Vec<CountryMeta> {
    let tax = Taxonomy::builtin();
    let mut by_region: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for code in tax.codes() {
        let r = tax.region(code).expect("builtin code");
        let idx = Region::ALL.iter().position(|x| *x == r).expect("region listed");
        by_region.entry(idx).or_default().push(code.to_string());
    }
    let mut out = Vec::new();
    let mut round = 0;
    while out.len() < n {
        let mut progressed = false;
        for (r, codes) in &by_region {
            if let Some(c) = codes.get(round) {
                if out.len() < n {
                    out.push(CountryMeta { code: c.clone(), region: Region::ALL[*r] });
                    progressed = true;
                }
            }
        }
        if !progressed {
            break;
        }
        round += 1;
    }
    out.sort_by(|a, b| a.code.cmp(&b.code));
    out
}

fn ar1_path(rng: &mut ChaCha8Rng, n: usize, phi: f64, vol: f64, noise: &Normal<f64>) -> Vec<f64> {
    // start from the stationary distribution
    let sd0 = vol / (1.0 - phi * phi).sqrt();
    let mut x = sd0 * noise.sample(rng);
    (0..n)
        .map(|_| {
            let v = x;
            x = phi * x + vol * noise.sample(rng);
            v
        })
        .collect()
}

/// Generates a panel and its ground-truth decomposition.
pub fn generate(spec: &DgpSpec) -> Result<SynthOutput, PanelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let n = spec.n_days;
    let dates: Vec<NaiveDate> = (0..n).map(|d| spec.start + Duration::days(d as i64)).collect();
    let fed = ar1_path(&mut rng, n, spec.global_persistence, spec.global_vol, &z);
    let vix = ar1_path(&mut rng, n, spec.global_persistence, spec.global_vol, &z);
    let vix_threshold = crate::stats::quantile(&vix, spec.threshold_quantile);
    let countries = pick_countries(spec.n_countries);
    let news_l = spec.news_loadings();

    let mut local = BTreeMap::new();
    let mut truth = Vec::new();
    for meta in &countries {
        let mult = spec.region_multipliers[Region::ALL.iter().position(|r| *r == meta.region).expect("region")];
        let alpha = rng.random_range(-1.0..1.0);
        let news: Vec<Vec<f64>> = (0..6)
            .map(|_| ar1_path(&mut rng, n, spec.news_persistence, spec.news_vol, &z))
            .collect();
        let offset = if spec.max_start_offset > 0 { rng.random_range(0..=spec.max_start_offset) } else { 0 };
        let observed: Vec<bool> = (0..n)
            .map(|t| t >= offset && !rng.random_bool(spec.gap_probability))
            .collect();
        let mut cds = Vec::new();
        for t in 1..n {
            let p = t - 1;
            let markets = mult * (spec.loadings[0] * fed[p] + spec.loadings[1] * vix[p]);
            let news_part = mult * (0..6).map(|v| news_l[v] * news[v][p]).sum::<f64>();
            let threshold = if vix[p] > vix_threshold {
                mult * spec.news_strength * spec.threshold_coef * news[0][p]
            } else {
                0.0
            };
            let interaction = mult * spec.interaction_coef * fed[p] * vix[p];
            let noise = spec.noise_sd * z.sample(&mut rng);
            let row = TruthRow {
                date: dates[t],
                country: meta.code.clone(),
                alpha,
                markets,
                news: news_part,
                threshold,
                interaction,
                noise,
                cds: 0.0,
            };
            let value = row.components_sum();
            if observed[t] {
                cds.push((dates[t], value));
                truth.push(TruthRow { cds: value, ..row });
            }
        }
        local.insert((meta.code.clone(), Variable::CDS), Series::from_pairs(cds)?);
        for (v, var) in Variable::NEWS.iter().enumerate() {
            let pairs = (0..n).filter(|&t| observed[t]).map(|t| (dates[t], news[v][t])).collect();
            local.insert((meta.code.clone(), *var), Series::from_pairs(pairs)?);
        }
    }
    let mut global = BTreeMap::new();
    global.insert(Variable::FED, Series::new(dates.clone(), fed)?);
    global.insert(Variable::VIX, Series::new(dates, vix)?);
    Ok(SynthOutput {
        panel: Panel::new(countries, local, global)?,
        truth,
        vix_threshold,
    })
}

/// Writes the ground truth as CSV.
pub fn write_truth<W: std::io::Write>(truth: &[TruthRow], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in truth {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{linear::fit_ols_fe, DesignMatrix};

    fn small() -> DgpSpec {
        DgpSpec { n_countries: 5, n_days: 300, max_start_offset: 20, ..Default::default() }
    }

    #[test]
    fn reproducible() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(crate::panel::panel_fingerprint(&a.panel), crate::panel::panel_fingerprint(&b.panel));
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn full_fixture_has_all_series() {
        let out = generate(&DgpSpec { n_days: 60, max_start_offset: 10, ..Default::default() }).unwrap();
        assert_eq!(out.panel.countries().len(), 42);
        // globals are counted once per country
        assert_eq!(out.panel.n_series(), 42 * 9);
        for c in out.panel.countries() {
            for v in Variable::ALL {
                assert!(out.panel.series(&c.code, v).is_some());
            }
        }
    }

    #[test]
    fn cds_is_sum_of_components_and_threshold_is_gated() {
        let out = generate(&small()).unwrap();
        let vix = out.panel.global_series(Variable::VIX).unwrap();
        for r in &out.truth {
            assert!((r.cds - r.components_sum()).abs() < 1e-12);
            let prev = vix.get(r.date - Duration::days(1)).unwrap();
            if prev <= out.vix_threshold {
                assert_eq!(r.threshold, 0.0);
            }
        }
        assert!(out.truth.iter().any(|r| r.threshold != 0.0));
    }

    #[test]
    fn linear_noiseless_dgp_recovered_by_ols_fe() {
        let spec = DgpSpec {
            threshold_coef: 0.0,
            interaction_coef: 0.0,
            noise_sd: 0.0,
            region_multipliers: [1.0; 5],
            ..small()
        };
        let out = generate(&spec).unwrap();
        let p = &out.panel;
        let names: Vec<String> = Variable::ALL[1..].iter().map(|v| v.to_string()).collect();
        let mut d = DesignMatrix::empty(names, p.countries().to_vec());
        for r in &out.truth {
            let ci = p.country_index(&r.country).unwrap();
            let day = r.date - Duration::days(1);
            let x: Option<Vec<f64>> = Variable::ALL[1..].iter().map(|v| p.value(ci, *v, day)).collect();
            if let Some(x) = x {
                d.push(ci, day, r.date, &x, r.cds).unwrap();
            }
        }
        let fit = fit_ols_fe(&d).unwrap();
        let want: Vec<f64> = spec.loadings.iter().enumerate().map(|(j, l)| if j < 2 { *l } else { l * spec.news_strength }).collect();
        for (a, b) in fit.slopes.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn round_robin_country_pick() {
        let c = pick_countries(5);
        let regions: std::collections::BTreeSet<_> = c.iter().map(|m| m.region).collect();
        assert_eq!(regions.len(), 5);
    }
}

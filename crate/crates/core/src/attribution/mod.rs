//! Shapley attribution of frozen tree models and the aggregations built on it.

pub mod loess;
pub mod treeshap;

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorKind;
use crate::models::{DesignMatrix, FittedModel, FittedParams, ModelError, Tree, COUNTRY_FEATURE};
use crate::panel::{CountryMeta, Region};
use crate::par;
use crate::stats::quantile;

pub use loess::{linspace, loess};
pub use treeshap::{expected_value, tree_interactions, tree_shap as tree_shap_single};

/// Smoothing fraction and robustness passes of the dependence curves.
pub const LOESS_FRAC: f64 = 0.4;
pub const LOESS_ROBUST_ITERS: usize = 1;
/// Local accuracy tolerance enforced on every explained row.
pub const ACCURACY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("{0} models cannot be explained exactly (tree ensembles only)")]
    Unsupported(String),
    #[error("model integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("cube has no interaction values")]
    MissingInteractions,
    #[error("{0}")]
    Invalid(String),
}

impl AttributionError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            AttributionError::Integrity(_) => ErrorKind::Numerical,
            AttributionError::Model(e) => e.kind(),
            _ => ErrorKind::Validation,
        }
    }
}

/// Per-observation Shapley values (and optionally interaction matrices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionCube {
    /// Model features in column order; includes the country column.
    pub feature_names: Vec<String>,
    pub countries: Vec<CountryMeta>,
    pub country: Vec<usize>,
    pub dates: Vec<NaiveDate>,
    /// Raw feature values, row-major.
    pub x: Vec<f64>,
    /// Base value of the model that explains each row.
    pub base: Vec<f64>,
    /// Label and base value of each sub-model (one entry unless multilayer).
    pub group_bases: Vec<(String, f64)>,
    /// Row-major `n x M`.
    pub phi: Vec<f64>,
    pub prediction: Vec<f64>,
    /// Row-major `n x M x M` when requested.
    pub interactions: Option<Vec<f64>>,
}

impl AttributionCube {
    pub fn n_rows(&self) -> usize {
        self.country.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize, AttributionError> {
        self.feature_names
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| AttributionError::UnknownFeature(name.to_string()))
    }

    pub fn phi_row(&self, i: usize) -> &[f64] {
        let m = self.n_features();
        &self.phi[i * m..(i + 1) * m]
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        let m = self.n_features();
        &self.x[i * m..(i + 1) * m]
    }

    /// Interaction `phi_{a,b}` of row `i`.
    pub fn interaction(&self, i: usize, a: usize, b: usize) -> Option<f64> {
        let m = self.n_features();
        self.interactions.as_ref().map(|t| t[i * m * m + a * m + b])
    }

    /// Largest `|phi_0 + sum phi - f(x)|` over rows.
    pub fn max_accuracy_gap(&self) -> f64 {
        (0..self.n_rows())
            .map(|i| (self.base[i] + self.phi_row(i).iter().sum::<f64>() - self.prediction[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Substantive features: everything except the country column.
    fn reported_features(&self) -> Vec<usize> {
        (0..self.n_features()).filter(|&j| self.feature_names[j] != COUNTRY_FEATURE).collect()
    }
}

/// A tree ensemble viewed as `offset + scale * sum(trees)`.
struct Ensemble<'a> {
    trees: &'a [Tree],
    offset: f64,
    scale: f64,
    max_depth: usize,
}

impl<'a> Ensemble<'a> {
    fn new(trees: &'a [Tree], offset: f64, scale: f64) -> Self {
        let max_depth = trees.iter().map(Tree::depth).max().unwrap_or(0);
        Ensemble { trees, offset, scale, max_depth }
    }

    fn check(&self) -> Result<(), AttributionError> {
        for (t, tree) in self.trees.iter().enumerate() {
            tree.check().map_err(|e| AttributionError::Integrity(format!("tree {t}: {e}")))?;
        }
        Ok(())
    }

    fn base(&self) -> f64 {
        self.offset + self.scale * self.trees.iter().map(expected_value).sum::<f64>()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.offset + self.scale * self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }

    fn shap(&self, x: &[f64]) -> Vec<f64> {
        let mut phi = vec![0.0; x.len()];
        let mut acc = vec![0.0; x.len()];
        let mut scratch = treeshap::Scratch::new(self.max_depth);
        for t in self.trees {
            acc.iter_mut().for_each(|v| *v = 0.0);
            treeshap::tree_shap_with(t, x, &mut acc, treeshap::Condition::None, &mut scratch);
            for (p, a) in phi.iter_mut().zip(&acc) {
                *p += self.scale * a;
            }
        }
        phi
    }

    fn interactions(&self, x: &[f64]) -> Vec<f64> {
        let m = x.len();
        let mut out = vec![0.0; m * m];
        for t in self.trees {
            treeshap::tree_interactions_into(t, x, &mut out, self.scale);
        }
        out
    }
}

fn ensembles(m: &FittedModel) -> Result<(Vec<(String, Ensemble<'_>)>, Option<&[(String, Option<usize>)]>), AttributionError> {
    match &m.params {
        FittedParams::Forest(f) => Ok((
            vec![("all".into(), Ensemble::new(&f.trees, 0.0, 1.0 / f.trees.len().max(1) as f64))],
            None,
        )),
        FittedParams::Boosted(b) => Ok((
            vec![("all".into(), Ensemble::new(&b.trees, b.base, b.learning_rate))],
            None,
        )),
        FittedParams::Multilayer(ml) => Ok((
            ml.groups
                .iter()
                .map(|g| {
                    let scale = 1.0 / g.forest.trees.len().max(1) as f64;
                    (g.region.as_str().to_string(), Ensemble::new(&g.forest.trees, 0.0, scale))
                })
                .collect(),
            Some(&ml.route),
        )),
        FittedParams::Linear(_) | FittedParams::Factor(_) => Err(AttributionError::Unsupported(m.family().to_string())),
    }
}

fn explain(m: &FittedModel, d: &DesignMatrix, with_interactions: bool) -> Result<AttributionCube, AttributionError> {
    m.check_schema(d)?;
    let (groups, route) = ensembles(m)?;
    if groups.iter().any(|(_, e)| e.trees.is_empty()) {
        return Err(AttributionError::Integrity("ensemble has no trees".into()));
    }
    for (_, e) in &groups {
        e.check()?;
    }
    let (names, x) = d.with_country_column();
    let mw = names.len();
    if let Some((_, e)) = groups.iter().find(|(_, e)| e.trees[0].n_features != mw) {
        return Err(AttributionError::Integrity(format!(
            "trees expect {} features, design provides {mw}",
            e.trees[0].n_features
        )));
    }
    let bases: Vec<f64> = groups.iter().map(|(_, e)| e.base()).collect();
    let group_of = |i: usize| -> Result<usize, AttributionError> {
        match route {
            None => Ok(0),
            Some(r) => match r.get(d.country[i]) {
                Some((_, Some(g))) => Ok(*g),
                Some((code, None)) => Err(ModelError::UnmappedCountry(code.clone()).into()),
                None => Err(ModelError::UnknownCountry(d.country[i]).into()),
            },
        }
    };
    let rows = par::map_range(d.n_rows(), |i| -> Result<_, AttributionError> {
        let g = group_of(i)?;
        let e = &groups[g].1;
        let xi = &x[i * mw..(i + 1) * mw];
        let phi = e.shap(xi);
        let pred = e.predict(xi);
        let gap = (bases[g] + phi.iter().sum::<f64>() - pred).abs();
        if gap > ACCURACY_TOL * pred.abs().max(1.0) {
            return Err(AttributionError::Integrity(format!(
                "local accuracy violated on row {i} (gap {gap:e})"
            )));
        }
        let inter = if with_interactions { Some(e.interactions(xi)) } else { None };
        Ok((bases[g], phi, pred, inter))
    });
    let n = d.n_rows();
    let mut cube = AttributionCube {
        feature_names: names,
        countries: d.countries.clone(),
        country: d.country.clone(),
        dates: d.dates.clone(),
        x,
        base: Vec::with_capacity(n),
        group_bases: groups.iter().zip(&bases).map(|((l, _), b)| (l.clone(), *b)).collect(),
        phi: Vec::with_capacity(n * mw),
        prediction: Vec::with_capacity(n),
        interactions: with_interactions.then(|| Vec::with_capacity(n * mw * mw)),
    };
    for r in rows {
        let (b, phi, pred, inter) = r?;
        cube.base.push(b);
        cube.phi.extend(phi);
        cube.prediction.push(pred);
        if let (Some(t), Some(i)) = (cube.interactions.as_mut(), inter) {
            t.extend(i);
        }
    }
    Ok(cube)
}

/// Exact path-dependent Shapley values for every row of `d`.
pub fn tree_shap(m: &FittedModel, d: &DesignMatrix) -> Result<AttributionCube, AttributionError> {
    explain(m, d, false)
}

/// Shapley values plus pairwise interaction matrices for every row of `d`.
pub fn shap_interactions(m: &FittedModel, d: &DesignMatrix) -> Result<AttributionCube, AttributionError> {
    explain(m, d, true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountryImportance {
    pub code: String,
    pub region: Region,
    pub values: Vec<f64>,
}

/// Mean `|phi|` per feature: per country, then unweighted across countries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceSummary {
    pub features: Vec<String>,
    pub countries: Vec<CountryImportance>,
    pub regions: Vec<(Region, Vec<f64>)>,
    pub global: Vec<f64>,
}

fn unweighted_mean(rows: &[&Vec<f64>], m: usize) -> Vec<f64> {
    (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect()
}

/// Countries ordered by region, then code.
fn ordered_countries(cube: &AttributionCube) -> Vec<usize> {
    let mut present: Vec<usize> = cube.country.clone();
    present.sort_unstable();
    present.dedup();
    present.sort_by(|&a, &b| {
        let (ca, cb) = (&cube.countries[a], &cube.countries[b]);
        (ca.region, &ca.code).cmp(&(cb.region, &cb.code))
    });
    present
}

pub fn summarize_importance(cube: &AttributionCube) -> Result<ImportanceSummary, AttributionError> {
    if cube.n_rows() == 0 {
        return Err(AttributionError::Invalid("empty attribution cube".into()));
    }
    let feats = cube.reported_features();
    let mut countries = Vec::new();
    for c in ordered_countries(cube) {
        let rows: Vec<usize> = (0..cube.n_rows()).filter(|&i| cube.country[i] == c).collect();
        let values = feats
            .iter()
            .map(|&j| rows.iter().map(|&i| cube.phi_row(i)[j].abs()).sum::<f64>() / rows.len() as f64)
            .collect();
        countries.push(CountryImportance { code: cube.countries[c].code.clone(), region: cube.countries[c].region, values });
    }
    let m = feats.len();
    let regions = Region::ALL
        .iter()
        .filter_map(|&r| {
            let members: Vec<&Vec<f64>> = countries.iter().filter(|c| c.region == r).map(|c| &c.values).collect();
            (!members.is_empty()).then(|| (r, unweighted_mean(&members, m)))
        })
        .collect();
    let all: Vec<&Vec<f64>> = countries.iter().map(|c| &c.values).collect();
    Ok(ImportanceSummary {
        features: feats.iter().map(|&j| cube.feature_names[j].clone()).collect(),
        global: unweighted_mean(&all, m),
        countries,
        regions,
    })
}

/// Per-country mean `|phi_{key,j}|` for every other substantive feature `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionHeatmap {
    pub key: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Region)>,
    pub values: Vec<Vec<f64>>,
}

pub fn interaction_heatmap(cube: &AttributionCube, key: &str) -> Result<InteractionHeatmap, AttributionError> {
    if cube.interactions.is_none() {
        return Err(AttributionError::MissingInteractions);
    }
    let k = cube.feature_index(key)?;
    let cols: Vec<usize> = cube.reported_features().into_iter().filter(|&j| j != k).collect();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for c in ordered_countries(cube) {
        let idx: Vec<usize> = (0..cube.n_rows()).filter(|&i| cube.country[i] == c).collect();
        values.push(
            cols.iter()
                .map(|&j| idx.iter().map(|&i| cube.interaction(i, k, j).unwrap_or(0.0).abs()).sum::<f64>() / idx.len() as f64)
                .collect(),
        );
        rows.push((cube.countries[c].code.clone(), cube.countries[c].region));
    }
    Ok(InteractionHeatmap {
        key: key.to_string(),
        columns: cols.iter().map(|&j| cube.feature_names[j].clone()).collect(),
        rows,
        values,
    })
}

/// Scatter of raw feature values against their Shapley values with a LOESS
/// fit restricted to the 5th-95th percentile range of the feature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependenceCurve {
    pub feature: String,
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    pub clip: (f64, f64),
    pub grid: Vec<f64>,
    pub fit: Vec<f64>,
    pub frac: f64,
    pub robust_iters: usize,
}

pub fn dependence_curve(
    cube: &AttributionCube,
    feature: &str,
    n_grid: usize,
    frac: f64,
    robust_iters: usize,
) -> Result<DependenceCurve, AttributionError> {
    let j = cube.feature_index(feature)?;
    let xs: Vec<f64> = (0..cube.n_rows()).map(|i| cube.x_row(i)[j]).collect();
    let ps: Vec<f64> = (0..cube.n_rows()).map(|i| cube.phi_row(i)[j]).collect();
    if xs.is_empty() {
        return Err(AttributionError::Invalid("empty attribution cube".into()));
    }
    let lo = quantile(&xs, 0.05);
    let hi = quantile(&xs, 0.95);
    let (cx, cy): (Vec<f64>, Vec<f64>) = xs.iter().zip(&ps).filter(|(x, _)| **x >= lo && **x <= hi).map(|(x, p)| (*x, *p)).unzip();
    let grid = linspace(lo, hi, n_grid);
    let fit = loess(&cx, &cy, &grid, frac, robust_iters)?;
    Ok(DependenceCurve { feature: feature.to_string(), x: xs, phi: ps, clip: (lo, hi), grid, fit, frac, robust_iters })
}

/// Binned mean of `phi_a + phi_b + 2 phi_ab` over a feature-pair grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependenceSurface {
    pub a: String,
    pub b: String,
    pub a_edges: Vec<f64>,
    pub b_edges: Vec<f64>,
    /// `values[p][q]` for bin `p` of `a` and bin `q` of `b`; `None` when empty.
    pub values: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

/// Bin of `v` for ascending `edges`; the last bin is closed on the right.
fn bin_of(edges: &[f64], v: f64) -> Option<usize> {
    let nb = edges.len().checked_sub(1)?;
    if nb == 0 || v < edges[0] || v > edges[nb] {
        return None;
    }
    Some(edges.partition_point(|e| *e <= v).saturating_sub(1).min(nb - 1))
}

pub fn dependence_surface(
    cube: &AttributionCube,
    a: &str,
    b: &str,
    a_edges: &[f64],
    b_edges: &[f64],
) -> Result<DependenceSurface, AttributionError> {
    if cube.interactions.is_none() {
        return Err(AttributionError::MissingInteractions);
    }
    for e in [a_edges, b_edges] {
        if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(AttributionError::Invalid("bin edges must be strictly increasing with at least two entries".into()));
        }
    }
    let (ia, ib) = (cube.feature_index(a)?, cube.feature_index(b)?);
    let (na, nb) = (a_edges.len() - 1, b_edges.len() - 1);
    let mut sums = vec![vec![0.0; nb]; na];
    let mut counts = vec![vec![0usize; nb]; na];
    for i in 0..cube.n_rows() {
        let x = cube.x_row(i);
        let (Some(p), Some(q)) = (bin_of(a_edges, x[ia]), bin_of(b_edges, x[ib])) else {
            continue;
        };
        let phi = cube.phi_row(i);
        sums[p][q] += phi[ia] + phi[ib] + 2.0 * cube.interaction(i, ia, ib).unwrap_or(0.0);
        counts[p][q] += 1;
    }
    let values = (0..na)
        .map(|p| (0..nb).map(|q| (counts[p][q] > 0).then(|| sums[p][q] / counts[p][q] as f64)).collect())
        .collect();
    Ok(DependenceSurface { a: a.into(), b: b.into(), a_edges: a_edges.to_vec(), b_edges: b_edges.to_vec(), values, counts })
}

fn csv_err(e: impl std::fmt::Display) -> AttributionError {
    AttributionError::Invalid(format!("write failed: {e}"))
}

/// Long format `country,date,feature,phi`; the base value appears as feature `(base)`.
pub fn write_cube_csv<W: Write>(cube: &AttributionCube, w: W) -> Result<(), AttributionError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["country", "date", "feature", "phi"]).map_err(csv_err)?;
    for i in 0..cube.n_rows() {
        let code = &cube.countries[cube.country[i]].code;
        let date = cube.dates[i].to_string();
        out.write_record([code.as_str(), &date, "(base)", &format!("{:?}", cube.base[i])]).map_err(csv_err)?;
        for (j, f) in cube.feature_names.iter().enumerate() {
            out.write_record([code.as_str(), &date, f, &format!("{:?}", cube.phi_row(i)[j])]).map_err(csv_err)?;
        }
    }
    out.flush().map_err(csv_err)
}

/// Long format `country,date,feature,feature2,phi_ij` (upper triangle and diagonal).
pub fn write_interactions_csv<W: Write>(cube: &AttributionCube, w: W) -> Result<(), AttributionError> {
    if cube.interactions.is_none() {
        return Err(AttributionError::MissingInteractions);
    }
    let m = cube.n_features();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["country", "date", "feature", "feature2", "phi_ij"]).map_err(csv_err)?;
    for i in 0..cube.n_rows() {
        let code = &cube.countries[cube.country[i]].code;
        let date = cube.dates[i].to_string();
        for a in 0..m {
            for b in a..m {
                let v = cube.interaction(i, a, b).unwrap_or(0.0);
                out.write_record([code.as_str(), &date, &cube.feature_names[a], &cube.feature_names[b], &format!("{v:?}")])
                    .map_err(csv_err)?;
            }
        }
    }
    out.flush().map_err(csv_err)
}

/// `level,name,region,feature,mean_abs_phi` with levels country, region, global.
pub fn write_importance_csv<W: Write>(s: &ImportanceSummary, w: W) -> Result<(), AttributionError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["level", "name", "region", "feature", "mean_abs_phi"]).map_err(csv_err)?;
    let mut emit = |level: &str, name: &str, region: &str, vals: &[f64]| -> Result<(), AttributionError> {
        for (f, v) in s.features.iter().zip(vals) {
            out.write_record([level, name, region, f, &format!("{v:?}")]).map_err(csv_err)?;
        }
        Ok(())
    };
    for c in &s.countries {
        emit("country", &c.code, c.region.as_str(), &c.values)?;
    }
    for (r, vals) in &s.regions {
        emit("region", r.as_str(), r.as_str(), vals)?;
    }
    emit("global", "global", "", &s.global)?;
    out.flush().map_err(csv_err)
}

pub fn write_heatmap_csv<W: Write>(h: &InteractionHeatmap, w: W) -> Result<(), AttributionError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["key", "country", "region", "feature", "mean_abs_interaction"]).map_err(csv_err)?;
    for ((code, region), vals) in h.rows.iter().zip(&h.values) {
        for (f, v) in h.columns.iter().zip(vals) {
            out.write_record([h.key.as_str(), code, region.as_str(), f, &format!("{v:?}")]).map_err(csv_err)?;
        }
    }
    out.flush().map_err(csv_err)
}

/// `feature,kind,x,y`: kind is `point` for the scatter and `fit` for the LOESS grid.
pub fn write_curve_csv<W: Write>(c: &DependenceCurve, w: W) -> Result<(), AttributionError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["feature", "kind", "x", "y"]).map_err(csv_err)?;
    for (x, y) in c.x.iter().zip(&c.phi) {
        out.write_record([c.feature.as_str(), "point", &format!("{x:?}"), &format!("{y:?}")]).map_err(csv_err)?;
    }
    for (x, y) in c.grid.iter().zip(&c.fit) {
        out.write_record([c.feature.as_str(), "fit", &format!("{x:?}"), &format!("{y:?}")]).map_err(csv_err)?;
    }
    out.flush().map_err(csv_err)
}

/// `a_lo,a_hi,b_lo,b_hi,count,value` with an empty value for missing bins.
pub fn write_surface_csv<W: Write>(s: &DependenceSurface, w: W) -> Result<(), AttributionError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["a_lo", "a_hi", "b_lo", "b_hi", "count", "value"]).map_err(csv_err)?;
    for (p, row) in s.values.iter().enumerate() {
        for (q, v) in row.iter().enumerate() {
            out.write_record([
                format!("{:?}", s.a_edges[p]),
                format!("{:?}", s.a_edges[p + 1]),
                format!("{:?}", s.b_edges[q]),
                format!("{:?}", s.b_edges[q + 1]),
                s.counts[p][q].to_string(),
                v.map(|v| format!("{v:?}")).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush().map_err(csv_err)
}

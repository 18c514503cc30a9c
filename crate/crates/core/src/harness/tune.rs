//! Expanding-window hyperparameter search.
//!
//! Five validation dates step back from the end of the training period in
//! 60-day intervals. For validation date `v`, a candidate is trained on rows
//! with target date `<= v - buffer` and scored on the rows whose target falls
//! on `v`. Candidates are drawn by seeded random search; the lowest mean fold
//! loss wins and ties go to the earlier draw.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forecast_design, training_design, HarnessError, PanelSource};
use crate::models::{self, DesignMatrix, Family, ModelSpec};
use crate::par;

pub const N_FOLDS: usize = 5;
pub const FOLD_STEP_DAYS: u64 = 60;

/// `train_end - 60k` for `k = 0..4`, latest first.
pub fn validation_dates(train_end: NaiveDate) -> [NaiveDate; N_FOLDS] {
    std::array::from_fn(|k| train_end - Days::new(FOLD_STEP_DAYS * k as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamRange {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    /// Integers in `lo..=hi`.
    Int { lo: i64, hi: i64 },
    Choice { values: Vec<f64> },
}

impl ParamRange {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ParamRange::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
            ParamRange::LogUniform { lo, hi } => rng.random_range(lo.ln()..=hi.ln()).exp(),
            ParamRange::Int { lo, hi } => rng.random_range(*lo..=*hi) as f64,
            ParamRange::Choice { values } => values[rng.random_range(0..values.len())],
        }
    }

    fn validate(&self, key: &str) -> Result<(), HarnessError> {
        let ok = match self {
            ParamRange::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            ParamRange::LogUniform { lo, hi } => *lo > 0.0 && hi.is_finite() && lo <= hi,
            ParamRange::Int { lo, hi } => lo <= hi,
            ParamRange::Choice { values } => !values.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(HarnessError::Plan(format!("empty or invalid range for {key}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldLoss {
    Mae,
    Rmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub ranges: BTreeMap<String, ParamRange>,
    pub budget: usize,
    pub seed: u64,
    pub loss: FoldLoss,
    pub buffer: u32,
}

impl SearchSpace {
    /// Ranges wide enough to contain the shipped defaults of `family`.
    pub fn default_for(family: Family) -> SearchSpace {
        use ParamRange::*;
        let mut r = BTreeMap::new();
        let mut put = |k: &str, v: ParamRange| {
            r.insert(k.to_string(), v);
        };
        match family {
            Family::OlsFe => {}
            Family::Lasso => put("lambda", LogUniform { lo: 1e-4, hi: 10.0 }),
            Family::Ridge => put("lambda", LogUniform { lo: 1e-3, hi: 1e4 }),
            Family::ElasticNet => {
                put("lambda", LogUniform { lo: 1e-4, hi: 10.0 });
                put("rho", Uniform { lo: 0.0, hi: 1.0 });
            }
            Family::QuantileReg => put("lambda", LogUniform { lo: 1e-4, hi: 1.0 }),
            Family::Pcr => put("k", Int { lo: 1, hi: 60 }),
            Family::FactorRidge => {
                put("n_factors", Int { lo: 1, hi: 30 });
                put("lambda", LogUniform { lo: 1e-3, hi: 100.0 });
            }
            Family::GradientBoosting => {
                put("n_trees", Int { lo: 50, hi: 600 });
                put("learning_rate", LogUniform { lo: 0.005, hi: 0.3 });
                put("max_depth", Int { lo: 2, hi: 10 });
                put("subsample", Uniform { lo: 0.5, hi: 1.0 });
                put("feature_fraction", Uniform { lo: 0.3, hi: 1.0 });
                put("min_child_weight", Int { lo: 1, hi: 10 });
            }
            Family::Bagging | Family::RandomForest | Family::ExtraTrees => {
                put("max_depth", Int { lo: 2, hi: 150 });
                put("min_samples_split", Int { lo: 2, hi: 20 });
                put("min_samples_leaf", Int { lo: 1, hi: 50 });
                put("feature_fraction", Uniform { lo: 0.05, hi: 1.0 });
            }
            Family::MultilayerRf2S | Family::MultilayerRf1S => {
                let groups = if family == Family::MultilayerRf2S { ["stage1", "stage2"] } else { ["ae", "em"] };
                for g in groups {
                    put(&format!("{g}.max_depth"), Int { lo: 2, hi: 50 });
                    put(&format!("{g}.subsample"), Uniform { lo: 0.5, hi: 1.0 });
                    put(&format!("{g}.feature_fraction"), Uniform { lo: 0.2, hi: 1.0 });
                    put(&format!("{g}.min_child_weight"), Int { lo: 1, hi: 60 });
                }
            }
        }
        SearchSpace { ranges: r, budget: 50, seed: 0, loss: FoldLoss::Mae, buffer: super::DEFAULT_BUFFER }
    }

    /// The `budget` candidates, in draw order; unspecified keys keep `base`'s values.
    pub fn sample(&self, base: &ModelSpec) -> Result<Vec<ModelSpec>, HarnessError> {
        for (k, r) in &self.ranges {
            r.validate(k)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.budget);
        for _ in 0..self.budget {
            let mut spec = base.clone();
            for (k, r) in &self.ranges {
                spec.params.insert(k.clone(), r.sample(&mut rng));
            }
            spec.validate()?;
            out.push(spec);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: BTreeMap<String, f64>,
    /// Fold losses in validation-date order; `None` when a fold could not be scored.
    pub fold_losses: Vec<Option<f64>>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: ModelSpec,
    pub best_score: f64,
    pub validation_dates: Vec<NaiveDate>,
    pub trials: Vec<Trial>,
}

/// Training and validation designs of each fold.
pub struct Folds {
    pub dates: [NaiveDate; N_FOLDS],
    pub designs: Vec<(DesignMatrix, DesignMatrix)>,
}

pub fn build_folds(src: &dyn PanelSource, infoset: models::InfoSet, train_end: NaiveDate, buffer: u32) -> Folds {
    let dates = validation_dates(train_end);
    let designs = dates
        .iter()
        .map(|&v| (training_design(src, infoset, v, buffer), forecast_design(src, infoset, v - Days::new(1))))
        .collect();
    Folds { dates, designs }
}

fn fold_loss(spec: &ModelSpec, train: &DesignMatrix, valid: &DesignMatrix, loss: FoldLoss) -> Option<f64> {
    if train.is_empty() || valid.is_empty() {
        return None;
    }
    let m = models::fit(spec, train).ok()?;
    let yhat = models::predict(&m, valid).ok()?;
    let n = yhat.len() as f64;
    let errs = yhat.iter().zip(&valid.y).map(|(p, y)| y - p);
    Some(match loss {
        FoldLoss::Mae => errs.map(f64::abs).sum::<f64>() / n,
        FoldLoss::Rmse => (errs.map(|e| e * e).sum::<f64>() / n).sqrt(),
    })
}

/// Scores candidates on prepared folds and picks the first minimum.
pub fn evaluate(candidates: &[ModelSpec], folds: &Folds, loss: FoldLoss) -> Result<TuneResult, HarnessError> {
    let trials: Vec<Trial> = par::map(candidates, |spec| {
        let fold_losses: Vec<Option<f64>> = folds.designs.iter().map(|(t, v)| fold_loss(spec, t, v, loss)).collect();
        let score = fold_losses
            .iter()
            .copied()
            .collect::<Option<Vec<f64>>>()
            .map(|l| l.iter().sum::<f64>() / l.len() as f64);
        Trial { params: spec.params.clone(), fold_losses, score }
    });
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in trials.iter().enumerate() {
        if let Some(s) = t.score {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i, s));
            }
        }
    }
    let family = candidates.first().map(|c| c.family.to_string()).unwrap_or_default();
    let (i, s) = best.ok_or(HarnessError::NoValidCandidate(family))?;
    Ok(TuneResult { best: candidates[i].clone(), best_score: s, validation_dates: folds.dates.to_vec(), trials })
}

/// Random search over `space` around `base` (family, infoset, seed and any
/// fixed parameters).
pub fn tune(src: &dyn PanelSource, base: &ModelSpec, space: &SearchSpace, train_end: NaiveDate) -> Result<TuneResult, HarnessError> {
    if let Some((start, end)) = src.span() {
        if train_end < start || train_end > end {
            return Err(HarnessError::Plan(format!("train_end {train_end} outside panel span {start}..{end}")));
        }
    }
    if space.budget == 0 {
        return Err(HarnessError::Plan("search budget must be >= 1".into()));
    }
    let candidates = if space.ranges.is_empty() { vec![base.clone()] } else { space.sample(base)? };
    let folds = build_folds(src, base.infoset, train_end, space.buffer);
    evaluate(&candidates, &folds, space.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::tests::toy_panel;
    use crate::models::InfoSet;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn validation_dates_step_back_sixty_days() {
        let got = validation_dates(d("2020-12-31"));
        let want = ["2020-12-31", "2020-11-01", "2020-09-02", "2020-07-04", "2020-05-05"].map(d);
        assert_eq!(got, want);
    }

    #[test]
    fn folds_exclude_the_buffer() {
        let p = toy_panel(&["DE", "FR"], 400, 1);
        let f = build_folds(&p, InfoSet::MarketsOnly, d("2020-12-31"), 28);
        for (v, (t, val)) in f.dates.iter().zip(&f.designs) {
            assert_eq!(t.max_target_date(), Some(*v - Days::new(28)));
            assert!(val.target_dates.iter().all(|x| x == v));
            assert_eq!(val.n_rows(), 2);
        }
    }

    #[test]
    fn budget_one_returns_the_single_draw() {
        let p = toy_panel(&["DE"], 400, 2);
        let base = ModelSpec::with_defaults(Family::Lasso, InfoSet::MarketsOnly, 0);
        let space = SearchSpace { budget: 1, seed: 5, ..SearchSpace::default_for(Family::Lasso) };
        let drawn = space.sample(&base).unwrap();
        let r = tune(&p, &base, &space, d("2020-12-31")).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best, drawn[0]);
    }

    #[test]
    fn small_penalty_wins_on_a_noiseless_linear_panel() {
        use crate::synth::{generate, DgpSpec};
        let spec = DgpSpec {
            n_countries: 4,
            n_days: 500,
            noise_sd: 0.0,
            threshold_coef: 0.0,
            interaction_coef: 0.0,
            gap_probability: 0.0,
            max_start_offset: 0,
            region_multipliers: [1.0; 5],
            ..Default::default()
        };
        let p = generate(&spec).unwrap().panel;
        let end = p.span().unwrap().1 - Days::new(10);
        let base = ModelSpec::with_defaults(Family::Lasso, InfoSet::MarketsPlusNews, 0);
        let cands: Vec<ModelSpec> = [1.0, 0.3, 1e-6, 0.1].iter().map(|l| base.clone().set("lambda", *l)).collect();
        let folds = build_folds(&p, InfoSet::MarketsPlusNews, end, 28);
        let r = evaluate(&cands, &folds, FoldLoss::Mae).unwrap();
        assert_eq!(r.best.get("lambda").unwrap(), 1e-6);
        assert!(r.best_score < 1e-3);
        // reordering the same set selects the same candidate
        let mut rev = cands.clone();
        rev.reverse();
        assert_eq!(evaluate(&rev, &folds, FoldLoss::Mae).unwrap().best, r.best);
    }

    #[test]
    fn ties_go_to_the_earlier_candidate() {
        let p = toy_panel(&["DE"], 400, 4);
        let base = ModelSpec::with_defaults(Family::OlsFe, InfoSet::MarketsOnly, 0);
        let cands = vec![base.clone(), ModelSpec { seed: 9, ..base }];
        let folds = build_folds(&p, InfoSet::MarketsOnly, d("2020-12-31"), 28);
        let r = evaluate(&cands, &folds, FoldLoss::Mae).unwrap();
        assert_eq!(r.best.seed, 0);
    }

    #[test]
    fn empty_folds_invalidate_candidates() {
        let p = toy_panel(&["DE"], 100, 5);
        let base = ModelSpec::with_defaults(Family::OlsFe, InfoSet::MarketsOnly, 0);
        let space = SearchSpace::default_for(Family::OlsFe);
        // the earliest fold date precedes the panel start by far
        assert!(matches!(tune(&p, &base, &space, d("2020-03-01")), Err(HarnessError::NoValidCandidate(_))));
        assert!(tune(&p, &base, &space, d("2019-01-01")).is_err());
    }

    #[test]
    fn default_spaces_sample_valid_specs() {
        for f in Family::ALL {
            let base = ModelSpec::with_defaults(f, InfoSet::MarketsPlusNews, 0);
            let space = SearchSpace { budget: 20, ..SearchSpace::default_for(f) };
            assert_eq!(space.sample(&base).unwrap().len(), 20);
        }
    }
}

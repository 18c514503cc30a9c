//! Region-routed forests.
//!
//! Both variants fit one forest per group and route each country to its
//! group's forest. They differ in grouping hyperparameters: the two-stage
//! variant uses its stage-1 table for Advanced Economies and the stage-2
//! table for every emerging-market region; the one-stage variant uses the AE
//! and EM tables. Group members are grown like booster random forests: row
//! subsample without replacement, per-node feature sampling and a minimum
//! leaf size.

use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use super::ensemble::{fit_forest_matrix, Forest, RowSampling};
use super::tree::TreeParams;
use super::{Family, ModelError, ModelSpec};
use crate::panel::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultilayerVariant {
    OneStage,
    TwoStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupForest {
    pub region: Region,
    pub params: TreeParams,
    pub subsample: f64,
    pub forest: Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multilayer {
    pub variant: MultilayerVariant,
    pub groups: Vec<GroupForest>,
    /// Country code and group index, by design country index.
    pub route: Vec<(String, Option<usize>)>,
}

impl Multilayer {
    pub fn group_of(&self, country: usize) -> Result<usize, ModelError> {
        match self.route.get(country) {
            Some((_, Some(g))) => Ok(*g),
            Some((code, None)) => Err(ModelError::UnmappedCountry(code.clone())),
            None => Err(ModelError::UnknownCountry(country)),
        }
    }

    /// `x` includes the trailing country column.
    pub fn predict_row(&self, country: usize, x: &[f64]) -> Result<f64, ModelError> {
        Ok(self.groups[self.group_of(country)?].forest.predict_row(x))
    }
}

/// Fits one forest per region present in `d`. `params_for` gives the tree
/// limits and row subsample of a region.
pub fn fit_multilayer(
    d: &DesignMatrix,
    variant: MultilayerVariant,
    n_trees: usize,
    params_for: impl Fn(Region) -> (TreeParams, f64),
    seed: u64,
) -> Result<Multilayer, ModelError> {
    d.check_targets()?;
    let (names, x) = d.with_country_column();
    let m = names.len();
    let mut groups = Vec::new();
    let mut group_index = std::collections::BTreeMap::new();
    for region in Region::ALL {
        let rows: Vec<usize> = (0..d.n_rows())
            .filter(|&i| d.countries[d.country[i]].region == region)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let gx: Vec<f64> = rows.iter().flat_map(|&i| x[i * m..(i + 1) * m].iter().copied()).collect();
        let gy: Vec<f64> = rows.iter().map(|&i| d.y[i]).collect();
        let (params, subsample) = params_for(region);
        let forest = fit_forest_matrix(&gx, m, &gy, n_trees, &params, RowSampling::Subsample(subsample), seed)?;
        group_index.insert(region, groups.len());
        groups.push(GroupForest { region, params, subsample, forest });
    }
    let route = d
        .countries
        .iter()
        .map(|c| (c.code.clone(), group_index.get(&c.region).copied()))
        .collect();
    Ok(Multilayer { variant, groups, route })
}

pub(crate) fn fit_multilayer_spec(d: &DesignMatrix, spec: &ModelSpec) -> Result<Multilayer, ModelError> {
    let (variant, ae, em) = match spec.family {
        Family::MultilayerRf2S => (MultilayerVariant::TwoStage, "stage1", "stage2"),
        Family::MultilayerRf1S => (MultilayerVariant::OneStage, "ae", "em"),
        f => return Err(ModelError::Hyperparams(format!("{f} is not a multilayer family"))),
    };
    let ae_params = spec.group_params(ae)?;
    let em_params = spec.group_params(em)?;
    let n_trees = spec.get("n_trees")? as usize;
    fit_multilayer(
        d,
        variant,
        n_trees,
        |r| if r.is_emerging() { em_params } else { ae_params },
        spec.seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::CountryMeta;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_region_design() -> DesignMatrix {
        let countries = vec![
            CountryMeta { code: "DE".into(), region: Region::AdvancedEconomies },
            CountryMeta { code: "FR".into(), region: Region::AdvancedEconomies },
            CountryMeta { code: "BR".into(), region: Region::EMLatam },
            CountryMeta { code: "CL".into(), region: Region::EMLatam },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = (0..400)
            .map(|i| {
                let c = i % 4;
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                // different DGPs per region
                let y = if c < 2 { (a > 0.0) as u8 as f64 } else { 2.0 * b * b } + 0.05 * rng.random_range(-1.0..1.0);
                (c, vec![a, b], y)
            })
            .collect();
        DesignMatrix::from_rows(vec!["a".into(), "b".into()], countries, rows).unwrap()
    }

    fn params() -> (TreeParams, f64) {
        (TreeParams { max_depth: 6, min_samples_leaf: 3, feature_fraction: 1.0, ..Default::default() }, 0.8)
    }

    #[test]
    fn routing_is_total_and_exclusive() {
        let d = two_region_design();
        let ml = fit_multilayer(&d, MultilayerVariant::OneStage, 10, |_| params(), 1).unwrap();
        assert_eq!(ml.groups.len(), 2);
        assert_eq!(ml.group_of(0).unwrap(), ml.group_of(1).unwrap());
        assert_ne!(ml.group_of(0).unwrap(), ml.group_of(2).unwrap());
    }

    #[test]
    fn single_region_equals_plain_forest() {
        let d = two_region_design();
        let rows: Vec<usize> = (0..d.n_rows()).filter(|&i| d.country[i] < 2).collect();
        let ae = d.select(&rows);
        let ml = fit_multilayer(&ae, MultilayerVariant::TwoStage, 5, |_| params(), 4).unwrap();
        let (names, x) = ae.with_country_column();
        let (p, s) = params();
        let plain = fit_forest_matrix(&x, names.len(), &ae.y, 5, &p, RowSampling::Subsample(s), 4).unwrap();
        assert_eq!(ml.groups[0].forest, plain);
    }

    #[test]
    fn per_group_fit_beats_pooled_forest_in_sample() {
        let d = two_region_design();
        let (p, s) = params();
        let ml = fit_multilayer(&d, MultilayerVariant::OneStage, 20, |_| (p, s), 2).unwrap();
        let (names, x) = d.with_country_column();
        let m = names.len();
        let pooled = fit_forest_matrix(&x, m, &d.y, 20, &p, RowSampling::Subsample(s), 2).unwrap();
        for group in [0usize, 1] {
            let rows: Vec<usize> = (0..d.n_rows()).filter(|&i| (d.country[i] >= 2) as usize == group).collect();
            let mse = |f: &dyn Fn(usize) -> f64| rows.iter().map(|&i| (d.y[i] - f(i)).powi(2)).sum::<f64>() / rows.len() as f64;
            let a = mse(&|i| ml.predict_row(d.country[i], &x[i * m..(i + 1) * m]).unwrap());
            let b = mse(&|i| pooled.predict_row(&x[i * m..(i + 1) * m]));
            assert!(a <= b, "group {group}: {a} > {b}");
        }
    }

    #[test]
    fn unmapped_country_is_an_error() {
        let d = two_region_design();
        let rows: Vec<usize> = (0..d.n_rows()).filter(|&i| d.country[i] < 2).collect();
        let ml = fit_multilayer(&d.select(&rows), MultilayerVariant::OneStage, 2, |_| params(), 0).unwrap();
        assert!(matches!(ml.predict_row(2, &[0.0, 0.0, 2.0]), Err(ModelError::UnmappedCountry(c)) if c == "BR"));
    }
}

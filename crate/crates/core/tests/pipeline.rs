//! End-to-end runs of the library on small synthetic panels.

use chrono::{Days, NaiveDate};
use sovrisk::attribution;
use sovrisk::connect::{self, ConnectConfig, WindowPlan};
use sovrisk::harness::{self, BacktestPlan, ForecastLedger, Level};
use sovrisk::models::{self, Family, InfoSet, ModelSpec};
use sovrisk::panel::{self, PreprocessPolicy, StandardizationScope, Taxonomy};
use sovrisk::synth::{self, DgpSpec};

fn dgp() -> DgpSpec {
    DgpSpec { n_countries: 4, n_days: 420, seed: 21, gap_probability: 0.0, ..DgpSpec::default() }
}

#[test]
fn panel_csv_round_trip_keeps_fingerprint() {
    let out = synth::generate(&dgp()).unwrap();
    let mut buf = Vec::new();
    panel::write_panel(&out.panel, &mut buf).unwrap();
    let back = panel::read_panel(buf.as_slice(), &Taxonomy::builtin()).unwrap();
    assert_eq!(panel::panel_fingerprint(&back), panel::panel_fingerprint(&out.panel));
    assert_eq!(back.n_observations(), out.panel.n_observations());
}

#[test]
fn synth_to_spillover() {
    let raw = synth::generate(&dgp()).unwrap().panel;
    let (_, end) = raw.span().unwrap();
    let cutoff = end - Days::new(120);
    let policy = PreprocessPolicy { ma_window: 7, standardize: true, scope: StandardizationScope::TrainOnly { cutoff } };
    let (p, report) = panel::preprocess(&raw, &policy).unwrap();
    assert!(report.dropped.is_empty());

    let mut plan = BacktestPlan::new(end - Days::new(60), end - Days::new(1));
    plan.refit_every = 20;
    plan.ma_window = 7;
    let mut ledger = ForecastLedger { buffer: plan.buffer, ..Default::default() };
    for inf in InfoSet::ALL {
        plan.infosets = vec![inf];
        let specs: Vec<ModelSpec> = [Family::OlsFe, Family::Ridge, Family::ExtraTrees, Family::MultilayerRf1S]
            .iter()
            .map(|&f| ModelSpec::with_defaults(f, inf, 3).with_tree_cap(15))
            .collect();
        let part = harness::run_backtest(&p, &specs, &plan).unwrap();
        ledger.records.extend(part.records);
        ledger.fits.extend(part.fits);
        ledger.skipped.extend(part.skipped);
    }
    ledger.sort();
    ledger.certify().unwrap();
    assert_eq!(ledger.records.len(), 2 * 4 * 60 * 4);
    let all = harness::score_all(&ledger).unwrap();
    let pooled = harness::score(&ledger, Level::Pooled).unwrap();
    let inc = harness::news_increment(&pooled.for_infoset(InfoSet::MarketsOnly), &pooled.for_infoset(InfoSet::MarketsPlusNews)).unwrap();
    assert_eq!(inc.len(), 4);
    assert!(all.cells.len() > pooled.cells.len());
    for c in &pooled.cells {
        assert!(c.rmse >= c.mae && c.mae > 0.0, "{c:?}");
    }

    let train = harness::training_design(&p, InfoSet::MarketsPlusNews, end, 0);
    let model = models::fit(&ModelSpec::with_defaults(Family::ExtraTrees, InfoSet::MarketsPlusNews, 1).with_tree_cap(20), &train).unwrap();
    let cube = attribution::tree_shap(&model, &train).unwrap();
    assert!(cube.max_accuracy_gap() < 1e-8);
    let summary = attribution::summarize_importance(&cube).unwrap();
    assert_eq!(summary.features.len(), 8);

    let feats: Vec<_> = ["VIX", "GPR"].iter().map(|f| (f.to_string(), connect::cube_series(&cube, f).unwrap())).collect();
    let first = NaiveDate::from_ymd_opt(2017, 4, 1).unwrap();
    let plan = WindowPlan::weekly(first, first + Days::new(140));
    let rows = connect::rolling_connectedness(&feats, &plan, &ConnectConfig::default()).unwrap();
    assert_eq!(rows.len(), 2 * plan.centers().len());
    let done: Vec<_> = rows.iter().filter(|r| r.s_dy.is_some()).collect();
    assert!(!done.is_empty());
    for r in done {
        let s = r.s_dy.unwrap();
        assert!((0.0..=100.0 * 3.0 / 4.0 + 1e-9).contains(&s), "{s}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let p = synth::generate(&DgpSpec { n_countries: 3, n_days: 300, seed: 2, ..DgpSpec::default() }).unwrap().panel;
    let (_, end) = p.span().unwrap();
    let run = || {
        let mut plan = BacktestPlan::new(end - Days::new(20), end - Days::new(1));
        plan.refit_every = 10;
        plan.infosets = vec![InfoSet::MarketsPlusNews];
        let spec = ModelSpec::with_defaults(Family::RandomForest, InfoSet::MarketsPlusNews, 8).with_tree_cap(12);
        let ledger = harness::run_backtest(&p, &[spec.clone()], &plan).unwrap();
        let d = harness::training_design(&p, InfoSet::MarketsPlusNews, end, 0);
        let m = models::fit(&spec, &d).unwrap();
        (ledger, attribution::shap_interactions(&m, &d.select(&(0..50).collect::<Vec<_>>())).unwrap())
    };
    let (l1, c1) = sovrisk::par::with_threads(1, run);
    let (l4, c4) = sovrisk::par::with_threads(4, run);
    assert_eq!(l1, l4);
    assert_eq!(c1.phi, c4.phi);
    assert_eq!(c1.interactions, c4.interactions);
}

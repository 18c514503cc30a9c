//! Sequential vs rayon timings for the three heavy loops: forest fitting,
//! TreeSHAP over a design, and rolling connectedness.
//!
//! `sequential` pins the pool to one worker; `parallel` uses every logical
//! CPU. Built with `--no-default-features` both arms run the same code.

use std::hint::black_box;

use chrono::{Days, NaiveDate};
use criterion::{criterion_group, criterion_main, Criterion};
use sovrisk::attribution;
use sovrisk::connect::{self, ConnectConfig, WindowPlan};
use sovrisk::harness;
use sovrisk::models::{self, Family, InfoSet, ModelSpec};
use sovrisk::par;
use sovrisk::synth::{self, DgpSpec};

fn arms() -> [(&'static str, usize); 2] {
    [("sequential", 1), ("parallel", std::thread::available_parallelism().map_or(1, |n| n.get()))]
}

fn benches(c: &mut Criterion) {
    let dgp = DgpSpec { n_countries: 4, n_days: 420, seed: 5, gap_probability: 0.0, ..DgpSpec::default() };
    let panel = synth::generate(&dgp).unwrap().panel;
    let (_, end) = panel.span().unwrap();
    let design = harness::training_design(&panel, InfoSet::MarketsPlusNews, end, 0);
    let spec = ModelSpec::with_defaults(Family::RandomForest, InfoSet::MarketsPlusNews, 1).with_tree_cap(48);
    let model = models::fit(&spec, &design).unwrap();
    let cube = attribution::tree_shap(&model, &design).unwrap();
    let rows = design.select(&(0..400.min(design.n_rows())).collect::<Vec<_>>());
    let feats: Vec<_> = ["VIX", "GPR", "EPU"]
        .iter()
        .map(|f| (f.to_string(), connect::cube_series(&cube, f).unwrap()))
        .collect();
    let first = NaiveDate::from_ymd_opt(2017, 4, 1).unwrap();
    let plan = WindowPlan::weekly(first, first + Days::new(140));
    let cfg = ConnectConfig::default();

    let mut g = c.benchmark_group("forest_fit");
    g.sample_size(10);
    for (name, threads) in arms() {
        g.bench_function(name, |b| b.iter(|| par::with_threads(threads, || models::fit(black_box(&spec), &design).unwrap())));
    }
    g.finish();

    let mut g = c.benchmark_group("tree_shap");
    g.sample_size(10);
    for (name, threads) in arms() {
        g.bench_function(name, |b| b.iter(|| par::with_threads(threads, || attribution::tree_shap(black_box(&model), &rows).unwrap())));
    }
    g.finish();

    let mut g = c.benchmark_group("rolling_connectedness");
    g.sample_size(10);
    for (name, threads) in arms() {
        g.bench_function(name, |b| {
            b.iter(|| par::with_threads(threads, || connect::rolling_connectedness(black_box(&feats), &plan, &cfg).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(parallel, benches);
criterion_main!(parallel);

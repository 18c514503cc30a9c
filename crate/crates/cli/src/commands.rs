//! Subcommand implementations. Each writes its artifacts into a fresh run
//! directory and returns that directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use sovrisk::attribution::{self, AttributionCube};
use sovrisk::connect::{self, ConnectConfig, ShockScaling, SpilloverRow, WindowPlan};
use sovrisk::harness::{self, metrics, BacktestPlan, ForecastLedger, Level, MetricsTable, SearchSpace};
use sovrisk::models::{self, Family, HyperparamTable, InfoSet, ModelSpec};
use sovrisk::panel::{self, Panel, Series, StandardizationScope, Taxonomy};
use sovrisk::synth;

use crate::config::Config;
use crate::run::{self, Run};
use crate::{svg, CliError};

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

fn taxonomy(cfg: &Config, run: &mut Run) -> Result<Taxonomy, CliError> {
    let tax = Taxonomy::builtin();
    match cfg.path("panel.regions") {
        Some(p) => {
            let p = cfg.require_path("panel.regions").map(|_| p)?;
            run.record_input("panel.regions", &p)?;
            Ok(tax.with_overrides(&p)?)
        }
        None => Ok(tax),
    }
}

/// Loads `panel.path`, applying the preprocessing step when `preprocess.apply` is set.
fn load_panel(cfg: &Config, run: &mut Run, apply_preprocess: bool) -> Result<(Panel, Taxonomy), CliError> {
    let path = cfg.require_path("panel.path")?;
    let tax = taxonomy(cfg, run)?;
    run.record_input("panel.path", &path)?;
    let raw = panel::load_panel(&path, &tax)?;
    run.set_panel_fingerprint(panel::panel_fingerprint(&raw));
    if !apply_preprocess {
        return Ok((raw, tax));
    }
    let (p, report) = panel::preprocess(&raw, &policy(cfg)?)?;
    for (c, v, why) in &report.dropped {
        log::warn!("preprocess dropped {c}/{v}: {why}");
    }
    Ok((p, tax))
}

fn policy(cfg: &Config) -> Result<panel::PreprocessPolicy, CliError> {
    Ok(panel::PreprocessPolicy {
        ma_window: u32::try_from(cfg.count("preprocess.ma_window")?).map_err(|_| CliError::Usage("preprocess.ma_window too large".into()))?,
        standardize: cfg.bool("preprocess.standardize"),
        scope: match cfg.date("preprocess.train_cutoff")? {
            Some(cutoff) => StandardizationScope::TrainOnly { cutoff },
            None => StandardizationScope::FullSample,
        },
    })
}

fn hyperparams(cfg: &Config, run: &mut Run) -> Result<HyperparamTable, CliError> {
    match cfg.path("hyperparams.path") {
        Some(_) => {
            let p = cfg.require_path("hyperparams.path")?;
            run.record_input("hyperparams.path", &p)?;
            Ok(HyperparamTable::load(&p)?)
        }
        None => Ok(HyperparamTable::builtin().clone()),
    }
}

fn families(cfg: &Config) -> Result<Vec<Family>, CliError> {
    let names = cfg.str_list("models.families")?;
    if names.is_empty() {
        return Ok(Family::ALL.to_vec());
    }
    names.iter().map(|n| n.parse::<Family>().map_err(|e| CliError::Usage(e.to_string()))).collect()
}

fn infosets(cfg: &Config, key: &str) -> Result<Vec<InfoSet>, CliError> {
    let v: Vec<InfoSet> = cfg.str_list(key)?.iter().map(|n| n.parse().map_err(|e: models::ModelError| CliError::Usage(e.to_string()))).collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err(CliError::Usage(format!("{key} must not be empty")));
    }
    Ok(v)
}

fn spec_for(cfg: &Config, table: &HyperparamTable, family: Family, infoset: InfoSet) -> Result<ModelSpec, CliError> {
    let mut spec = ModelSpec::new(family, infoset, cfg.seed());
    spec.params = table.get(family, infoset).cloned().unwrap_or_default();
    let cap = cfg.count("models.max_trees")?;
    Ok(if cap > 0 { spec.with_tree_cap(cap) } else { spec })
}

fn csv_write<E: Into<CliError>>(r: Result<(), E>) -> Result<(), CliError> {
    r.map_err(Into::into)
}

pub fn synth(cfg: &Config) -> Result<PathBuf, CliError> {
    let mut run = Run::create(cfg, "synth")?;
    let dgp = cfg.dgp()?;
    let out = synth::generate(&dgp)?;
    run.set_panel_fingerprint(panel::panel_fingerprint(&out.panel));
    run.write("panel.csv", |w| csv_write(panel::write_panel(&out.panel, w)))?;
    run.write("truth.csv", |w| synth::write_truth(&out.truth, w).map_err(|e| CliError::Data(e.to_string())))?;
    run.write_json("dgp.json", &serde_json::json!({ "spec": dgp, "vix_threshold": out.vix_threshold }))?;
    run.finish()
}

pub fn preprocess(cfg: &Config) -> Result<PathBuf, CliError> {
    let mut run = Run::create(cfg, "preprocess")?;
    let (raw, _) = load_panel(cfg, &mut run, false)?;
    let (p, report) = panel::preprocess(&raw, &policy(cfg)?)?;
    run.write("panel.csv", |w| csv_write(panel::write_panel(&p, w)))?;
    run.write_json("report.json", &report)?;
    run.finish()
}

/// Default origins: from 80% of the panel span to the day before its end.
fn backtest_plan(cfg: &Config, panel: &Panel) -> Result<BacktestPlan, CliError> {
    let (start, end) = panel.span().ok_or_else(|| CliError::Data("panel is empty".into()))?;
    let span = (end - start).num_days();
    let first = cfg.date("plan.first_origin")?.unwrap_or(start + Days::new((span * 4 / 5) as u64));
    let last = cfg.date("plan.last_origin")?.unwrap_or(end - Days::new(1));
    if first < start || last > end {
        return Err(CliError::Data(format!("origins {first}..{last} fall outside the panel span {start}..{end}")));
    }
    let mut plan = BacktestPlan::new(first, last);
    plan.refit_every = cfg.count("plan.refit_every")? as u32;
    plan.buffer = cfg.count("plan.buffer")? as u32;
    plan.ma_window = if cfg.bool("preprocess.apply") { cfg.count("preprocess.ma_window")? as u32 } else { 1 };
    Ok(plan)
}

fn tune_spec(cfg: &Config, panel: &Panel, spec: ModelSpec, train_end: NaiveDate) -> Result<(ModelSpec, Option<harness::TuneResult>), CliError> {
    if !cfg.bool("tune.enabled") || spec.family == Family::OlsFe {
        return Ok((spec, None));
    }
    let mut space = SearchSpace::default_for(spec.family);
    space.budget = cfg.count("tune.budget")?;
    space.seed = cfg.seed();
    space.buffer = cfg.count("plan.buffer")? as u32;
    space.loss = match cfg.str("tune.loss") {
        "mae" => harness::tune::FoldLoss::Mae,
        "rmse" => harness::tune::FoldLoss::Rmse,
        other => return Err(CliError::Usage(format!("tune.loss must be mae or rmse, got '{other}'"))),
    };
    let res = harness::tune(panel, &spec, &space, train_end)?;
    let cap = cfg.count("models.max_trees")?;
    let best = if cap > 0 { res.best.clone().with_tree_cap(cap) } else { res.best.clone() };
    Ok((best, Some(res)))
}

/// Cells present in both tables, split by information set.
fn paired_tables(table: &MetricsTable) -> (MetricsTable, MetricsTable) {
    let key = |c: &metrics::MetricCell| (c.family, c.level, c.group.clone());
    let split = |i: InfoSet| -> BTreeMap<_, metrics::MetricCell> { table.cells.iter().filter(|c| c.infoset == i).map(|c| (key(c), c.clone())).collect() };
    let (a, b) = (split(InfoSet::MarketsOnly), split(InfoSet::MarketsPlusNews));
    let keep = |m: &BTreeMap<_, metrics::MetricCell>, other: &BTreeMap<_, metrics::MetricCell>| MetricsTable {
        cells: m.iter().filter(|(k, _)| other.contains_key(*k)).map(|(_, c)| c.clone()).collect(),
    };
    (keep(&a, &b), keep(&b, &a))
}

fn write_scores(run: &mut Run, ledger: &ForecastLedger) -> Result<(), CliError> {
    let table = harness::score_all(ledger)?;
    run.write("metrics.csv", |w| csv_write(harness::write_metrics_csv(&table, w)))?;
    let (mk, nw) = paired_tables(&table);
    if !mk.cells.is_empty() {
        let inc = harness::news_increment(&mk, &nw)?;
        run.write("increment.csv", |w| csv_write(harness::write_increment_csv(&inc, w)))?;
        run.write_text("table.md", &markdown_table(&inc))?;
    }
    let pooled: Vec<_> = table.cells.iter().filter(|c| c.level == Level::Pooled).collect();
    let mut labels: Vec<String> = pooled.iter().map(|c| c.family.to_string()).collect();
    labels.dedup();
    let series: Vec<(String, Vec<f64>)> = InfoSet::ALL
        .iter()
        .filter(|i| pooled.iter().any(|c| c.infoset == **i))
        .map(|i| {
            let vals = labels.iter().map(|l| pooled.iter().find(|c| c.infoset == *i && c.family.as_str() == l).map_or(0.0, |c| c.rmse)).collect();
            (i.to_string(), vals)
        })
        .collect();
    run.write_text("rmse.svg", &svg::bar_chart("Out-of-sample RMSE (pooled)", "RMSE", &labels, &series))?;
    Ok(())
}

fn markdown_table(inc: &[metrics::IncrementCell]) -> String {
    let pct = |v: Option<f64>| v.map_or("NA".to_string(), |p| format!("{:.1}%", -p));
    let mut out = String::from("| Model | Benchmark MAE | News MAE | Benchmark RMSE | News RMSE | Diff MAE | %Var MAE | Diff RMSE | %Var RMSE |\n|---|---|---|---|---|---|---|---|---|\n");
    for c in inc.iter().filter(|c| c.level == Level::Pooled) {
        out.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {:.4} | {} |\n",
            c.family,
            c.mae_markets,
            c.mae_news,
            c.rmse_markets,
            c.rmse_news,
            -c.d_mae,
            pct(c.pct_mae),
            -c.d_rmse,
            pct(c.pct_rmse)
        ));
    }
    out
}

pub fn horserace(cfg: &Config) -> Result<PathBuf, CliError> {
    let mut run = Run::create(cfg, "horserace")?;
    let (panel, _) = load_panel(cfg, &mut run, cfg.bool("preprocess.apply"))?;
    let table = hyperparams(cfg, &mut run)?;
    let mut plan = backtest_plan(cfg, &panel)?;
    let fams = families(cfg)?;
    let sets = infosets(cfg, "models.infosets")?;
    let train_end = plan.first_origin - Days::new(1);
    let mut ledger = ForecastLedger { buffer: plan.buffer, ..Default::default() };
    let mut used = Vec::new();
    let mut tuned = Vec::new();
    for &inf in &sets {
        let mut specs = Vec::new();
        for &f in &fams {
            let (spec, res) = tune_spec(cfg, &panel, spec_for(cfg, &table, f, inf)?, train_end)?;
            if let Some(r) = res {
                tuned.push(serde_json::json!({ "family": f, "infoset": inf, "best": r.best, "score": r.best_score, "validation_dates": r.validation_dates }));
            }
            specs.push(spec);
        }
        plan.infosets = vec![inf];
        log::info!("backtest {inf}: {} specs, {} origins", specs.len(), plan.origins().len());
        let part = harness::run_backtest(&panel, &specs, &plan)?;
        ledger.records.extend(part.records);
        ledger.fits.extend(part.fits);
        ledger.skipped.extend(part.skipped);
        used.extend(specs);
    }
    ledger.sort();
    ledger.certify()?;
    if ledger.records.is_empty() {
        return Err(CliError::Data("backtest produced no forecasts".into()));
    }
    run.write("ledger.csv", |w| csv_write(ledger.write_csv(w)))?;
    run.write_json("fits.json", &ledger.fits)?;
    run.write_json("skipped.json", &ledger.skipped)?;
    run.write_json("specs.json", &serde_json::json!({ "plan": plan, "specs": used, "tuned": tuned }))?;
    write_scores(&mut run, &ledger)?;
    run.finish()
}

pub fn report(cfg: &Config) -> Result<PathBuf, CliError> {
    let mut run = Run::create(cfg, "report")?;
    let path = cfg.require_path("report.ledger")?;
    run.record_input("report.ledger", &path)?;
    let tax = taxonomy(cfg, &mut run)?;
    let file = File::open(&path).map_err(io_err(&path))?;
    let ledger = ForecastLedger::read_csv(BufReader::new(file), &tax, cfg.count("plan.buffer")? as u32)?;
    if ledger.records.is_empty() {
        return Err(CliError::Data(format!("{}: no forecast records", path.display())));
    }
    write_scores(&mut run, &ledger)?;
    run.finish()
}

fn explain_features(cfg: &Config, cube: &AttributionCube) -> Result<Vec<String>, CliError> {
    let listed = cfg.str_list("explain.features")?;
    if !listed.is_empty() {
        return Ok(listed);
    }
    Ok(cube.feature_names.iter().filter(|f| f.as_str() != models::COUNTRY_FEATURE).cloned().collect())
}

/// Equal-width edges over the 5th-95th percentile range.
fn edges(cube: &AttributionCube, feature: &str, bins: usize) -> Result<Vec<f64>, CliError> {
    let j = cube.feature_index(feature)?;
    let xs: Vec<f64> = (0..cube.n_rows()).map(|i| cube.x_row(i)[j]).collect();
    let (lo, hi) = (sovrisk::stats::quantile(&xs, 0.05), sovrisk::stats::quantile(&xs, 0.95));
    if !(hi > lo) {
        return Err(CliError::Data(format!("{feature} has no spread for a dependence surface")));
    }
    Ok(attribution::linspace(lo, hi, bins + 1))
}

pub fn explain(cfg: &Config) -> Result<PathBuf, CliError> {
    let mut run = Run::create(cfg, "explain")?;
    let (panel, _) = load_panel(cfg, &mut run, cfg.bool("preprocess.apply"))?;
    let table = hyperparams(cfg, &mut run)?;
    let family: Family = cfg.str("explain.family").parse().map_err(|e: models::ModelError| CliError::Usage(e.to_string()))?;
    let infoset: InfoSet = cfg.str("explain.infoset").parse().map_err(|e: models::ModelError| CliError::Usage(e.to_string()))?;
    if !family.is_tree() {
        return Err(CliError::Usage(format!("explain needs a tree family, got {family}")));
    }
    let (_, end) = panel.span().ok_or_else(|| CliError::Data("panel is empty".into()))?;
    let train_end = cfg.date("explain.train_end")?.unwrap_or(end);
    let design = harness::training_design(&panel, infoset, train_end, 0);
    if design.is_empty() {
        return Err(CliError::Data(format!("no complete rows up to {train_end}")));
    }
    let model = models::fit(&spec_for(cfg, &table, family, infoset)?, &design)?;
    run.write("model.json", |w| {
        w.write_all(model.to_json().map_err(|e| CliError::Usage(e.to_string()))?.as_bytes()).map_err(io_err(Path::new("model.json")))
    })?;
    let with_inter = cfg.bool("explain.interactions");
    let cube = if with_inter { attribution::shap_interactions(&model, &design)? } else { attribution::tree_shap(&model, &design)? };
    run.write("cube.csv", |w| csv_write(attribution::write_cube_csv(&cube, w)))?;
    let summary = attribution::summarize_importance(&cube)?;
    run.write("importance.csv", |w| csv_write(attribution::write_importance_csv(&summary, w)))?;
    run.write_text(
        "importance.svg",
        &svg::bar_chart("Mean |SHAP| by feature", "mean |phi|", &summary.features, &[("all countries".into(), summary.global.clone())]),
    )?;
    for feature in explain_features(cfg, &cube)? {
        let curve = attribution::dependence_curve(&cube, &feature, cfg.count("explain.grid")?, cfg.float("explain.frac"), cfg.count("explain.robust_iters")?)?;
        run.write(&format!("curves/{feature}.csv"), |w| csv_write(attribution::write_curve_csv(&curve, w)))?;
        let pts: Vec<(f64, f64)> = curve.x.iter().copied().zip(curve.phi.iter().copied()).collect();
        let fit: Vec<(f64, f64)> = curve.grid.iter().copied().zip(curve.fit.iter().copied()).collect();
        run.write_text(&format!("curves/{feature}.svg"), &svg::scatter_with_curve(&format!("SHAP dependence: {feature}"), &feature, "phi", &pts, &fit))?;
    }
    if with_inter {
        let key = cfg.str("explain.heatmap_key");
        let hm = attribution::interaction_heatmap(&cube, key)?;
        run.write("heatmap.csv", |w| csv_write(attribution::write_heatmap_csv(&hm, w)))?;
        let rows: Vec<String> = hm.rows.iter().map(|(c, _)| c.clone()).collect();
        let vals: Vec<Vec<Option<f64>>> = hm.values.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect();
        run.write_text("heatmap.svg", &svg::heatmap(&format!("Mean |interaction| with {key}"), &rows, &hm.columns, &vals))?;
        let pair = cfg.str_list("explain.surface")?;
        if pair.len() == 2 {
            let bins = cfg.count("explain.surface_bins")?.max(1);
            let s = attribution::dependence_surface(&cube, &pair[0], &pair[1], &edges(&cube, &pair[0], bins)?, &edges(&cube, &pair[1], bins)?)?;
            run.write("surface.csv", |w| csv_write(attribution::write_surface_csv(&s, w)))?;
            let label = |e: &[f64]| -> Vec<String> { e.windows(2).map(|w| format!("{:.2}", (w[0] + w[1]) / 2.0)).collect() };
            run.write_text("surface.svg", &svg::heatmap(&format!("Joint effect {} x {}", pair[0], pair[1]), &label(&s.a_edges), &label(&s.b_edges), &s.values))?;
        } else if !pair.is_empty() {
            return Err(CliError::Usage("explain.surface needs exactly two features".into()));
        }
    }
    run.finish()
}

/// Per-feature, per-country attribution series from a cube CSV.
fn read_cube(path: &Path) -> Result<BTreeMap<String, Vec<(String, Series)>>, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let mut acc: BTreeMap<String, BTreeMap<String, Vec<(NaiveDate, f64)>>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let bad = |m: String| CliError::Data(format!("{}: line {line}: {m}", path.display()));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", rec.len())));
        }
        let feature = &rec[2];
        if feature == "(base)" || feature == models::COUNTRY_FEATURE {
            continue;
        }
        let date: NaiveDate = rec[1].parse().map_err(|e| bad(format!("{e}")))?;
        let phi: f64 = rec[3].parse().map_err(|e| bad(format!("{e}")))?;
        acc.entry(feature.to_string()).or_default().entry(rec[0].to_string()).or_default().push((date, phi));
    }
    acc.into_iter()
        .map(|(f, per)| {
            let series = per.into_iter().map(|(c, pairs)| Ok((c, Series::from_pairs(pairs)?))).collect::<Result<Vec<_>, CliError>>()?;
            Ok((f, series))
        })
        .collect()
}

pub fn connect(cfg: &Config) -> Result<PathBuf, CliError> {
    let mut run = Run::create(cfg, "connect")?;
    let path = cfg.require_path("connect.cube")?;
    run.record_input("connect.cube", &path)?;
    let mut cube = read_cube(&path)?;
    let wanted = cfg.str_list("connect.features")?;
    let features: Vec<(String, Vec<(String, Series)>)> = if wanted.is_empty() {
        cube.into_iter().collect()
    } else {
        wanted
            .iter()
            .map(|f| cube.remove(f).map(|s| (f.clone(), s)).ok_or_else(|| CliError::Usage(format!("feature {f} is not in the cube"))))
            .collect::<Result<_, _>>()?
    };
    let dates = features.iter().flat_map(|(_, s)| s.iter().flat_map(|(_, x)| [x.first_date(), x.last_date()])).flatten();
    let (lo, hi) = dates.fold((NaiveDate::MAX, NaiveDate::MIN), |(a, b), d| (a.min(d), b.max(d)));
    if lo > hi {
        return Err(CliError::Data("attribution cube is empty".into()));
    }
    let mut plan = WindowPlan::weekly(lo, hi);
    plan.first_center = cfg.date("connect.first_center")?.unwrap_or(lo + Days::new(plan.h_min as u64));
    plan.last_center = cfg.date("connect.last_center")?.unwrap_or(hi - Days::new(plan.h_min as u64));
    plan.step_days = cfg.count("connect.step_days")? as u32;
    let ccfg = ConnectConfig {
        horizon: cfg.count("connect.horizon")?,
        tau: cfg.float("connect.tau"),
        p_max: cfg.count("connect.p_max")?,
        scaling: match cfg.str("connect.scaling") {
            "published" => ShockScaling::Published,
            "pesaran_shin" => ShockScaling::PesaranShin,
            other => return Err(CliError::Usage(format!("connect.scaling must be published or pesaran_shin, got '{other}'"))),
        },
    };
    let rows = connect::rolling_connectedness(&features, &plan, &ccfg)?;
    run.write("spillover.csv", |w| csv_write(connect::write_spillover_csv(&rows, w)))?;
    run.write_json("plan.json", &serde_json::json!({ "windows": plan, "connect": ccfg }))?;
    if cfg.bool("connect.dump_theta") {
        for r in rows.iter().filter(|r| r.theta.is_some()) {
            run.write(&format!("theta/{}_{}.csv", r.feature, r.center), |w| csv_write(connect::write_theta_csv(r, w)))?;
        }
    }
    let chart = |pick: fn(&SpilloverRow) -> Option<f64>| -> Vec<(String, Vec<(f64, f64)>)> {
        features
            .iter()
            .map(|(f, _)| {
                let pts = rows.iter().filter(|r| &r.feature == f).map(|r| ((r.center - plan.first_center).num_days() as f64, pick(r).unwrap_or(f64::NAN))).collect();
                (f.clone(), pts)
            })
            .collect()
    };
    let x_label = format!("days since {}", plan.first_center);
    run.write_text("spillover.svg", &svg::line_chart("Total spillover index", &x_label, "S_DY", &chart(|r| r.s_dy)))?;
    run.write_text("density.svg", &svg::line_chart("Network density", &x_label, "density", &chart(|r| r.density)))?;
    run.finish()
}

/// Re-executes a run from its manifest and compares every artifact.
pub fn replay(dir: &Path) -> Result<(PathBuf, Vec<String>), CliError> {
    let manifest = run::read_manifest(dir)?;
    for (key, input) in &manifest.inputs {
        let now = run::sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::Data(format!("input {key} ({}) changed since the run", input.path)));
        }
    }
    let cfg = Config::from_resolved(&manifest.config)?;
    if cfg.hash() != manifest.config_hash {
        return Err(CliError::Data("manifest configuration does not match its hash".into()));
    }
    let out = dispatch(&manifest.command, &cfg)?;
    let fresh = run::read_manifest(&out)?;
    let mut diffs = Vec::new();
    let new: BTreeMap<&str, &str> = fresh.outputs.iter().map(|f| (f.path.as_str(), f.sha256.as_str())).collect();
    for f in &manifest.outputs {
        match new.get(f.path.as_str()) {
            Some(h) if *h == f.sha256 => {}
            Some(_) => diffs.push(format!("{} differs", f.path)),
            None => diffs.push(format!("{} missing", f.path)),
        }
    }
    for f in &fresh.outputs {
        if !manifest.outputs.iter().any(|o| o.path == f.path) {
            diffs.push(format!("{} is new", f.path));
        }
    }
    Ok((out, diffs))
}

pub fn dispatch(command: &str, cfg: &Config) -> Result<PathBuf, CliError> {
    match command {
        "synth" => synth(cfg),
        "preprocess" => preprocess(cfg),
        "horserace" => horserace(cfg),
        "explain" => explain(cfg),
        "connect" => connect(cfg),
        "report" => report(cfg),
        other => Err(CliError::Data(format!("manifest names unknown command '{other}'"))),
    }
}

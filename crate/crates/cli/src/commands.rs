//! Subcommand implementations. Each command loads and checks every input
//! first, computes, and only then creates the output directory.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;
use weakl::data::{read_csv, split, ColumnKind, Dataset, Rescaled, Scaling};
use weakl::evaluation::{metric_report, skill_test, SkillResult};
use weakl::hierarchy::{
    fit_weakl_bu, fit_weakl_g, fit_weakl_t, run_toy_benchmark, HierEstimator, HierFit, Hierarchy, NodeInputs,
    TransferSpec,
};
use weakl::model::{FittedModel, ModelKind, FORMAT_VERSION};
use weakl::shape::{
    fit_additive, fit_combination, fit_online, rolling_refit, AdditiveModel, CombinationConfig, Effect,
    OnlineConfig, RollingPolicy,
};
use weakl::tuning::{grid_search, refit_best, AdditiveFamily, HierData, HierFamily, TuneResult};

use crate::config::{range, Command, ExperimentConfig, Family, ModelConfig};
use crate::error::{CliError, CliResult};

/// Timings and produced files of one run, written as `manifest.json`.
pub struct Run {
    command: &'static str,
    cfg: ExperimentConfig,
    workers: usize,
    started: Instant,
    phase: Instant,
    timings: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    library_version: &'a str,
    model_format_version: u32,
    seed: u64,
    workers: usize,
    timings_secs: BTreeMap<String, f64>,
    total_secs: f64,
    files: Vec<String>,
}

impl Run {
    pub fn new(command: &'static str, cfg: ExperimentConfig, workers: usize) -> Self {
        let now = Instant::now();
        Run {
            command,
            cfg,
            workers,
            started: now,
            phase: now,
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, name: &str) {
        self.timings.push((name.to_string(), self.phase.elapsed().as_secs_f64()));
        self.phase = Instant::now();
    }

    fn out_dir(&self) -> &Path {
        self.cfg.out.as_deref().expect("validated")
    }

    /// Creates the output directory and writes every file plus the
    /// resolved config and manifest.
    fn finish(mut self, files: Vec<OutputFile>) -> CliResult<()> {
        self.lap("compute");
        let dir = self.out_dir().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut names = vec!["resolved-config.toml".to_string()];
        std::fs::write(dir.join("resolved-config.toml"), self.cfg.to_toml()?)?;
        for f in files {
            std::fs::write(dir.join(&f.name), f.contents)?;
            names.push(f.name);
        }
        self.lap("write");
        names.push("manifest.json".into());
        let manifest = Manifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            library_version: weakl::VERSION,
            model_format_version: FORMAT_VERSION,
            seed: self.cfg.seed,
            workers: self.workers,
            timings_secs: self.timings.iter().cloned().collect(),
            total_secs: self.started.elapsed().as_secs_f64(),
            files: names,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

struct OutputFile {
    name: String,
    contents: Vec<u8>,
}

impl OutputFile {
    fn new(name: &str, contents: impl Into<Vec<u8>>) -> Self {
        OutputFile {
            name: name.into(),
            contents: contents.into(),
        }
    }
}

fn csv_file<R: AsRef<[u8]>>(name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<R>>) -> CliResult<OutputFile> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    Ok(OutputFile::new(name, bytes))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-row forecasts of one or more targets over a dataset.
struct Forecasts {
    targets: Vec<String>,
    times: Vec<f64>,
    truth: DMatrix<f64>,
    pred: DMatrix<f64>,
    labels: Vec<&'static str>,
}

impl Forecasts {
    fn file(&self) -> CliResult<OutputFile> {
        let mut rows = Vec::new();
        for (k, target) in self.targets.iter().enumerate() {
            for i in 0..self.times.len() {
                rows.push(vec![
                    i.to_string(),
                    self.times[i].to_string(),
                    self.labels[i].to_string(),
                    target.clone(),
                    self.truth[(i, k)].to_string(),
                    self.pred[(i, k)].to_string(),
                ]);
            }
        }
        csv_file("predictions.csv", &["row", "time", "split", "target", "truth", "prediction"], rows)
    }

    /// Bootstrap report on the rows labelled `label`.
    fn metrics(&self, label: &str, cfg: &ExperimentConfig) -> CliResult<OutputFile> {
        let rows_idx: Vec<usize> = (0..self.times.len()).filter(|&i| self.labels[i] == label).collect();
        let boot = cfg.bootstrap.with_seed(cfg.seed);
        let mut rows = Vec::new();
        for (k, target) in self.targets.iter().enumerate() {
            let y: Vec<f64> = rows_idx.iter().map(|&i| self.truth[(i, k)]).collect();
            let p: Vec<f64> = rows_idx.iter().map(|&i| self.pred[(i, k)]).collect();
            for r in metric_report(&y, &[("weakl".to_string(), p)], &boot)? {
                rows.push(vec![
                    label.to_string(),
                    target.clone(),
                    r.model,
                    r.rmse.to_string(),
                    r.rmse_sd.to_string(),
                    r.mae.to_string(),
                    r.mae_sd.to_string(),
                    fmt_opt(r.mape),
                    fmt_opt(r.mape_sd),
                ]);
            }
        }
        csv_file(
            "metrics.csv",
            &["split", "target", "model", "rmse", "rmse_sd", "mae", "mae_sd", "mape_pct", "mape_pct_sd"],
            rows,
        )
    }
}

/// The dataset, its train-fitted scaling and the rescaled rows.
struct Loaded {
    dataset: Dataset,
    scaling: Scaling,
    all: Rescaled,
    labels: Vec<&'static str>,
    effects: Vec<Effect>,
}

fn split_labels(cfg: &ExperimentConfig, n: usize) -> Vec<&'static str> {
    let s = cfg.split.as_ref().expect("validated");
    (0..n)
        .map(|i| {
            if range(s.train).contains(&i) {
                "train"
            } else if range(s.validation).contains(&i) {
                "validation"
            } else if range(s.test).contains(&i) {
                "test"
            } else {
                "unused"
            }
        })
        .collect()
}

fn cardinalities(cfg: &ExperimentConfig, scaling: &Scaling) -> BTreeMap<usize, usize> {
    let cols = &cfg.data.as_ref().expect("validated").columns;
    (0..cols.len())
        .filter_map(|j| scaling.cardinality(j).map(|c| (j, c)))
        .collect()
}

fn load(cfg: &ExperimentConfig) -> CliResult<Loaded> {
    let data_cfg = cfg.data.as_ref().expect("validated");
    let dataset = read_csv(&data_cfg.path, &cfg.schema()?)?;
    let splits = split(&dataset, &cfg.split.as_ref().expect("validated").spec())?;
    let mut scaling = (*splits.scaling).clone();
    for c in &data_cfg.columns {
        if let (Some(levels), ColumnKind::Categorical) = (&c.levels, c.kind) {
            scaling.declare_levels(&c.name, levels.clone())?;
        }
    }
    let all = dataset.rescale_with(&scaling)?;
    let cards = cardinalities(cfg, &scaling);
    let model = cfg.model.as_ref().expect("validated");
    let effects = model
        .effects
        .iter()
        .map(|e| cfg.effect(e, &cards))
        .collect::<CliResult<Vec<_>>>()?;
    let labels = split_labels(cfg, dataset.len());
    Ok(Loaded {
        dataset,
        scaling,
        all,
        labels,
        effects,
    })
}

fn rows(m: &DMatrix<f64>, r: std::ops::Range<usize>) -> DMatrix<f64> {
    m.rows(r.start, r.len()).into_owned()
}

fn column(m: &DMatrix<f64>, j: usize, r: std::ops::Range<usize>) -> Vec<f64> {
    m.column(j).rows(r.start, r.len()).iter().copied().collect()
}

fn single(values: Vec<f64>) -> DMatrix<f64> {
    DMatrix::from_vec(values.len(), 1, values)
}

/// Hierarchy, node-ordered targets and per-node weights.
struct HierSetup {
    hierarchy: Hierarchy,
    targets: DMatrix<f64>,
    weights: Vec<f64>,
    transfer: Option<TransferSpec>,
    estimator: HierEstimator,
}

fn hier_setup(model: &ModelConfig, dataset: &Dataset, all: &Rescaled) -> CliResult<HierSetup> {
    let section = model.hierarchy.as_ref().expect("validated");
    let hierarchy = Hierarchy::read_csv(&section.path)?;
    let levels = hierarchy.level_names();
    for name in section.weights.keys() {
        if !levels.contains(name) {
            return Err(CliError::Config(format!("weight for unknown hierarchy level {name:?}")));
        }
    }
    let per_level: Vec<(String, f64)> = levels
        .iter()
        .map(|l| (l.clone(), section.weights.get(l).copied().unwrap_or(1.0)))
        .collect();
    let weights = hierarchy.broadcast_levels(&per_level)?;
    let names = dataset.target_names();
    let mut targets = DMatrix::zeros(all.targets.nrows(), hierarchy.n_nodes());
    for (l, label) in hierarchy.labels().iter().enumerate() {
        let j = names.iter().position(|n| n == label).ok_or_else(|| {
            CliError::Config(format!("hierarchy node {label:?} has no target column in [data]"))
        })?;
        targets.set_column(l, &all.targets.column(j));
    }
    let transfer = match &section.transfer {
        Some(t) if model.family == Family::HierT => {
            let nodes = t
                .nodes
                .iter()
                .map(|n| match hierarchy.node_index(n) {
                    Some(i) if i < hierarchy.n_bottom() => Ok(i),
                    _ => Err(CliError::Config(format!("transfer node {n:?} is not a bottom node"))),
                })
                .collect::<CliResult<Vec<_>>>()?;
            Some(TransferSpec {
                nodes,
                alpha: t.alpha.clone(),
                lambda: t.lambda,
            })
        }
        _ => None,
    };
    let estimator = match model.family {
        Family::HierBu => HierEstimator::Bu,
        Family::HierG => HierEstimator::G,
        _ => HierEstimator::T,
    };
    Ok(HierSetup {
        hierarchy,
        targets,
        weights,
        transfer,
        estimator,
    })
}

fn modeled_nodes(setup: &HierSetup) -> usize {
    match setup.estimator {
        HierEstimator::G => setup.hierarchy.n_nodes(),
        _ => setup.hierarchy.n_bottom(),
    }
}

fn fit_hier(setup: &HierSetup, effects: &[Effect], x: &DMatrix<f64>, y: &DMatrix<f64>) -> CliResult<HierFit> {
    let nodes: Vec<NodeInputs> = (0..modeled_nodes(setup))
        .map(|_| NodeInputs {
            features: x.clone(),
            effects: effects.to_vec(),
        })
        .collect();
    let h = &setup.hierarchy;
    Ok(match setup.estimator {
        HierEstimator::Bu => fit_weakl_bu(h, &nodes, y, &setup.weights)?,
        HierEstimator::G => fit_weakl_g(h, &nodes, y, &setup.weights)?,
        HierEstimator::T => fit_weakl_t(h, &nodes, y, &setup.weights, setup.transfer.as_ref().expect("validated"))?,
    })
}

fn predict_hier(fit: &HierFit, h: &Hierarchy, x: &DMatrix<f64>) -> CliResult<DMatrix<f64>> {
    let feats: Vec<DMatrix<f64>> = (0..fit.node_effects.len()).map(|_| x.clone()).collect();
    Ok(fit.predict(h, &feats)?)
}

fn feature_index(ds: &Dataset, name: &str) -> CliResult<usize> {
    ds.feature_index(name)
        .ok_or_else(|| CliError::Config(format!("column {name:?} not found")))
}

fn experts_matrix(ds: &Dataset, all: &Rescaled, names: &[String]) -> CliResult<DMatrix<f64>> {
    let idx = names
        .iter()
        .map(|n| feature_index(ds, n))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(DMatrix::from_fn(all.features.nrows(), idx.len(), |i, j| all.features[(i, idx[j])]))
}

/// Fits the configured family on the training rows and forecasts every
/// row. Online models forecast rows after training by rolling refits.
fn fit_family(cfg: &ExperimentConfig, ld: &Loaded) -> CliResult<(FittedModel, Forecasts)> {
    let model = cfg.model.as_ref().expect("validated");
    let train = range(cfg.split.as_ref().expect("validated").train);
    let n = ld.all.targets.nrows();
    let x = &ld.all.features;
    let scaling = Some(ld.scaling.clone());
    let names = ld.dataset.target_names().to_vec();
    let forecasts = |targets: Vec<String>, truth: DMatrix<f64>, pred: DMatrix<f64>| Forecasts {
        targets,
        times: ld.dataset.timestamps().to_vec(),
        truth,
        pred,
        labels: ld.labels.clone(),
    };
    match model.family {
        Family::Additive => {
            let fit = fit_additive(&rows(x, train.clone()), &column(&ld.all.targets, 0, train), &ld.effects)?;
            let pred = fit.predict(x)?.values;
            Ok((
                FittedModel::from_additive(&fit, scaling, names.clone()),
                forecasts(names, ld.all.targets.clone(), single(pred)),
            ))
        }
        Family::Online => {
            let section = model.online.as_ref().expect("validated");
            let base = fit_additive(&rows(x, train.clone()), &column(&ld.all.targets, 0, train.clone()), &ld.effects)?;
            let base_values = base.effect_matrix(x)?;
            let online_cfg = OnlineConfig::shared(ld.effects.len(), section.m, section.lambda, section.intercept);
            let y = column(&ld.all.targets, 0, 0..n);
            let times = &ld.all.times;
            let fit_window = |r: std::ops::Range<usize>| {
                fit_online(&times[r.clone()], &rows(&base_values, r.clone()), &y[r], &online_cfg)
            };
            let online = fit_window(train.clone())?;
            let mut pred = online.predict(times, &base_values)?.values;
            if train.end < n {
                let policy = RollingPolicy {
                    window: section.window,
                    stride: section.stride,
                    start: train.start,
                };
                let rolled = rolling_refit(train.end..n, policy, |fit_rows, target| {
                    let m = fit_window(fit_rows)?;
                    Ok(m.predict(&times[target.clone()], &rows(&base_values, target))?.values)
                })?;
                for f in rolled {
                    pred[f.index] = f.value;
                }
            }
            Ok((
                FittedModel::from_online(&base, &online, scaling, names.clone()),
                forecasts(names, ld.all.targets.clone(), single(pred)),
            ))
        }
        Family::Combination => {
            let section = model.combination.as_ref().expect("validated");
            let experts = experts_matrix(&ld.dataset, &ld.all, &section.experts)?;
            let comb_cfg = CombinationConfig::shared(section.experts.len(), section.m, section.lambda);
            let times = &ld.all.times;
            let fit = fit_combination(
                &times[train.clone()],
                &rows(&experts, train.clone()),
                &column(&ld.all.targets, 0, train),
                &comb_cfg,
            )?;
            let pred = fit.predict(times, &experts)?.values;
            Ok((
                FittedModel::from_combination(&fit, section.experts.clone(), scaling, names.clone()),
                forecasts(names, ld.all.targets.clone(), single(pred)),
            ))
        }
        Family::HierBu | Family::HierG | Family::HierT => {
            let setup = hier_setup(model, &ld.dataset, &ld.all)?;
            let fit = fit_hier(&setup, &ld.effects, &rows(x, train.clone()), &rows(&setup.targets, train))?;
            let pred = predict_hier(&fit, &setup.hierarchy, x)?;
            Ok((
                FittedModel::from_hierarchical(&fit, &setup.hierarchy, scaling),
                forecasts(setup.hierarchy.labels().to_vec(), setup.targets.clone(), pred),
            ))
        }
    }
}

/// Split used for the metrics report: test, else validation, else train.
fn report_split(f: &Forecasts) -> &'static str {
    ["test", "validation"]
        .into_iter()
        .find(|l| f.labels.contains(l))
        .unwrap_or("train")
}

pub fn fit(mut run: Run) -> CliResult<()> {
    run.cfg.validate(Command::Fit)?;
    let ld = load(&run.cfg)?;
    run.lap("load");
    let (model, forecasts) = fit_family(&run.cfg, &ld)?;
    run.lap("fit");
    let metrics = forecasts.metrics(report_split(&forecasts), &run.cfg)?;
    let files = vec![
        OutputFile::new("model.json", model.to_json()?),
        forecasts.file()?,
        metrics,
    ];
    run.finish(files)
}

#[derive(Serialize)]
struct BestPoint<'a> {
    index: usize,
    values: BTreeMap<&'a str, f64>,
    validation_mse: f64,
    failed_points: usize,
}

fn tune_files(result: &TuneResult) -> CliResult<Vec<OutputFile>> {
    let mut grid = Vec::new();
    result.write_csv_to(&mut grid)?;
    let best = BestPoint {
        index: result.best.index,
        values: result.best.values.iter().map(|(k, v)| (k.as_str(), *v)).collect(),
        validation_mse: result.best_mse,
        failed_points: result.rows.iter().filter(|r| r.failure.is_some()).count(),
    };
    Ok(vec![
        OutputFile::new("grid.csv", grid),
        OutputFile::new("best.json", serde_json::to_string_pretty(&best)?),
    ])
}

pub fn tune(mut run: Run) -> CliResult<()> {
    run.cfg.validate(Command::Tune)?;
    let grid = run.cfg.grid_spec()?;
    let ld = load(&run.cfg)?;
    run.lap("load");
    let split_cfg = run.cfg.split.as_ref().expect("validated");
    let (train, validation) = (range(split_cfg.train), range(split_cfg.validation));
    let merged = train.start.min(validation.start)..train.end.max(validation.end);
    let model = run.cfg.model.as_ref().expect("validated");
    let x = &ld.all.features;
    let scaling = Some(ld.scaling.clone());
    let (result, fitted, targets, truth, pred) = if model.family.is_hierarchical() {
        let setup = hier_setup(model, &ld.dataset, &ld.all)?;
        let family = HierFamily {
            estimator: setup.estimator,
            hierarchy: setup.hierarchy.clone(),
            node_effects: vec![ld.effects.clone(); modeled_nodes(&setup)],
            weights: setup.weights.clone(),
            transfer: setup.transfer.clone(),
        };
        let data = |r: std::ops::Range<usize>| HierData {
            features: vec![rows(x, r.clone()); setup.hierarchy.n_nodes()],
            targets: rows(&setup.targets, r),
        };
        let result = grid_search(&family, &grid, &data(train), &data(validation))?;
        let fit = refit_best(&family, &result, &data(merged))?;
        let pred = predict_hier(&fit, &setup.hierarchy, x)?;
        let fitted = FittedModel::from_hierarchical(&fit, &setup.hierarchy, scaling);
        (result, fitted, setup.hierarchy.labels().to_vec(), setup.targets.clone(), pred)
    } else {
        let family = AdditiveFamily {
            effects: ld.effects.clone(),
        };
        let data = |r: std::ops::Range<usize>| Rescaled {
            times: ld.all.times[r.clone()].to_vec(),
            features: rows(x, r.clone()),
            targets: rows(&ld.all.targets, r),
        };
        let result = grid_search(&family, &grid, &data(train), &data(validation))?;
        let fit: AdditiveModel = refit_best(&family, &result, &data(merged))?;
        let pred = single(fit.predict(x)?.values);
        let names = ld.dataset.target_names().to_vec();
        let fitted = FittedModel::from_additive(&fit, scaling, names.clone());
        (result, fitted, names, ld.all.targets.clone(), pred)
    };
    run.lap("tune");
    let forecasts = Forecasts {
        targets,
        times: ld.dataset.timestamps().to_vec(),
        truth,
        pred,
        labels: ld.labels.clone(),
    };
    let mut files = tune_files(&result)?;
    files.push(OutputFile::new("model.json", fitted.to_json()?));
    files.push(forecasts.file()?);
    files.push(forecasts.metrics(report_split(&forecasts), &run.cfg)?);
    run.finish(files)
}

pub fn toy_benchmark(mut run: Run) -> CliResult<()> {
    run.cfg.validate(Command::ToyBenchmark)?;
    let toy = run.cfg.toy.as_ref().expect("validated").to_config(run.cfg.seed);
    let bench = run_toy_benchmark(&toy)?;
    run.lap("benchmark");
    let mut table = Vec::new();
    let mut curves = Vec::new();
    for r in &bench.rows {
        table.push(vec![
            r.sigma2.to_string(),
            r.method.name().to_string(),
            r.applicable.to_string(),
            fmt_opt(r.mse_y1),
            fmt_opt(r.mse_y2),
            fmt_opt(r.mse_total),
            fmt_opt(r.hierarchical),
            r.runs.to_string(),
        ]);
        for (panel, v) in [("y1", r.mse_y1), ("y2", r.mse_y2), ("total", r.mse_total), ("hierarchical", r.hierarchical)] {
            if let Some(v) = v {
                curves.push(vec![panel.to_string(), r.method.name().to_string(), r.sigma2.to_string(), v.to_string()]);
            }
        }
        println!(
            "sigma2={:<5} {:<14} {}",
            r.sigma2,
            r.method.name(),
            r.hierarchical
                .or(r.mse_total)
                .map_or("inapplicable".to_string(), |v| format!("{v:.4}"))
        );
    }
    curves.sort_by(|a, b| a[0].cmp(&b[0]).then(a[1].cmp(&b[1])));
    let files = vec![
        csv_file(
            "toy.csv",
            &["sigma2", "method", "applicable", "mse_y1", "mse_y2", "mse_total", "mse_hierarchical", "runs"],
            table,
        )?,
        csv_file("curves.csv", &["panel", "method", "sigma2", "mse"], curves)?,
    ];
    run.finish(files)
}

/// `(time, value)` pairs from `column` of a CSV, optionally restricted to
/// rows whose `split` column equals `split`.
fn read_series(path: &Path, value: &str, split: Option<&str>) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let data_err = |m: String| CliError::Library(weakl::Error::Data(m));
    let mut reader = csv::Reader::from_path(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| data_err(e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let t = find("time").ok_or_else(|| data_err(format!("{} has no time column", path.display())))?;
    let v = find(value).ok_or_else(|| data_err(format!("{} has no {value} column", path.display())))?;
    let s = match split {
        Some(_) => Some(find("split").ok_or_else(|| data_err(format!("{} has no split column", path.display())))?),
        None => None,
    };
    if let Some(k) = find("target") {
        let mut targets = std::collections::BTreeSet::new();
        for rec in csv::Reader::from_path(path).map_err(|e| data_err(e.to_string()))?.records() {
            let rec = rec.map_err(|e| data_err(e.to_string()))?;
            targets.insert(rec.get(k).unwrap_or_default().to_string());
        }
        if targets.len() > 1 {
            return Err(data_err(format!("{} holds several targets", path.display())));
        }
    }
    let parse = |x: &str, what: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| data_err(format!("{}: bad {what} value {x:?}", path.display())))
    };
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| data_err(e.to_string()))?;
        if let (Some(k), Some(want)) = (s, split) {
            if rec.get(k) != Some(want) {
                continue;
            }
        }
        times.push(parse(rec.get(t).unwrap_or_default(), "time")?);
        values.push(parse(rec.get(v).unwrap_or_default(), value)?);
    }
    Ok((times, values))
}

#[derive(Serialize)]
struct SkillReport {
    n: usize,
    alpha: f64,
    #[serde(flatten)]
    result: SkillResult,
}

pub fn compare(mut run: Run) -> CliResult<()> {
    run.cfg.validate(Command::Compare)?;
    let c = run.cfg.compare.clone().expect("validated");
    let split = c.split.as_deref();
    let (t1, p1) = read_series(&c.first, "prediction", split)?;
    let (t2, p2) = read_series(&c.second, "prediction", split)?;
    let (t0, y) = read_series(&c.truth, "truth", split)?;
    if t1 != t0 || t2 != t0 {
        return Err(CliError::Library(weakl::Error::Data(
            "forecast and truth timestamps are misaligned".into(),
        )));
    }
    run.lap("load");
    let err1: Vec<f64> = p1.iter().zip(&y).map(|(p, t)| p - t).collect();
    let err2: Vec<f64> = p2.iter().zip(&y).map(|(p, t)| p - t).collect();
    let result = skill_test(&err1, &err2, &run.cfg.bootstrap.with_seed(run.cfg.seed), c.alpha)?;
    println!(
        "skill={:.4} sd={:.4} lower={:.4} significant={}",
        result.skill, result.std_dev, result.ci_lower, result.significant
    );
    let report = SkillReport {
        n: y.len(),
        alpha: c.alpha,
        result,
    };
    run.finish(vec![OutputFile::new("skill.json", serde_json::to_string_pretty(&report)?)])
}

pub fn predict(mut run: Run) -> CliResult<()> {
    run.cfg.validate(Command::Predict)?;
    let p = run.cfg.predict.clone().expect("validated");
    let model = FittedModel::load(&p.model)?;
    let scaling = model
        .scaling
        .clone()
        .ok_or_else(|| CliError::Library(weakl::Error::Data("model file carries no scaling".into())))?;
    let dataset = read_csv(&run.cfg.data.as_ref().expect("validated").path, &run.cfg.schema()?)?;
    let n = dataset.len();
    let r = match p.rows {
        Some([a, b]) if b <= n => a..b,
        Some([_, b]) => {
            return Err(CliError::Library(weakl::Error::Split(format!("predict rows end at {b} beyond {n} rows"))))
        }
        None => 0..n,
    };
    let dataset = dataset.slice(r);
    let all = dataset.rescale_with(&scaling)?;
    run.lap("load");
    let x = &all.features;
    let (targets, truth, pred) = match &model.kind {
        ModelKind::Additive { .. } => {
            let m = model.to_additive()?;
            (model.targets.clone(), all.targets.clone(), single(m.predict(x)?.values))
        }
        ModelKind::Online { .. } => {
            let (base, online) = model.to_online()?;
            let values = online.predict(&all.times, &base.effect_matrix(x)?)?.values;
            (model.targets.clone(), all.targets.clone(), single(values))
        }
        ModelKind::Combination { .. } => {
            let (m, experts) = model.to_combination()?;
            let e = experts_matrix(&dataset, &all, &experts)?;
            (model.targets.clone(), all.targets.clone(), single(m.predict(&all.times, &e)?.values))
        }
        ModelKind::Hierarchical { .. } => {
            let (fit, h) = model.to_hierarchical()?;
            let names = dataset.target_names();
            let mut truth = DMatrix::zeros(all.targets.nrows(), h.n_nodes());
            for (l, label) in h.labels().iter().enumerate() {
                let j = names.iter().position(|n| n == label).ok_or_else(|| {
                    CliError::Config(format!("hierarchy node {label:?} has no target column in [data]"))
                })?;
                truth.set_column(l, &all.targets.column(j));
            }
            (h.labels().to_vec(), truth, predict_hier(&fit, &h, x)?)
        }
    };
    let single_target_names = dataset.target_names();
    if !matches!(model.kind, ModelKind::Hierarchical { .. }) && single_target_names != targets.as_slice() {
        return Err(CliError::Config(format!(
            "model predicts {:?} but [data] targets are {:?}",
            targets, single_target_names
        )));
    }
    let forecasts = Forecasts {
        targets,
        times: dataset.timestamps().to_vec(),
        truth,
        pred,
        labels: vec!["predict"; dataset.len()],
    };
    run.finish(vec![forecasts.file()?])
}


//! Experiment configuration: TOML schema, path resolution and validation.
//!
//! Every section is optional at parse time; each command checks for the
//! sections it needs before anything is computed or written.

use std::collections::{BTreeMap, HashSet};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weakl::data::{ColumnKind, CsvSchema, SplitSpec};
use weakl::evaluation::BootstrapConfig;
use weakl::features::FeatureMapSpec;
use weakl::hierarchy::{ToyConfig, ToyMethod, DEFAULT_MINT_SHRINKAGE};
use weakl::shape::Effect;
use weakl::tuning::{GridAxis, GridSpec};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub timestamp: String,
    pub targets: Vec<String>,
    #[serde(default)]
    pub columns: Vec<ColumnConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnConfig {
    pub name: String,
    pub kind: ColumnKind,
    /// Declared level order of a categorical column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// Half-open `[start, end)` row ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: [usize; 2],
    #[serde(default)]
    pub validation: [usize; 2],
    #[serde(default)]
    pub test: [usize; 2],
}

impl SplitConfig {
    pub fn spec(&self) -> SplitSpec {
        let r = |a: [usize; 2]| a[0]..a[1];
        SplitSpec {
            train: r(self.train),
            validation: r(self.validation),
            test: r(self.test),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Additive,
    Online,
    Combination,
    HierBu,
    HierG,
    HierT,
}

impl Family {
    pub fn is_hierarchical(self) -> bool {
        matches!(self, Family::HierBu | Family::HierG | Family::HierT)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    #[serde(default)]
    pub effects: Vec<EffectConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online: Option<OnlineSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combination: Option<CombinationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<HierarchySection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Linear,
    Fourier,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectConfig {
    pub name: String,
    /// Input columns; several only for a multivariate Fourier map.
    pub columns: Vec<String>,
    pub map: MapKind,
    #[serde(default)]
    pub m: usize,
    #[serde(default = "default_s")]
    pub s: u32,
    pub lambda: f64,
}

fn default_s() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineSection {
    #[serde(default = "one")]
    pub m: usize,
    pub lambda: f64,
    #[serde(default = "yes")]
    pub intercept: bool,
    /// Trailing window of each refit; expanding when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinationSection {
    /// Passthrough columns holding the expert forecasts.
    pub experts: Vec<String>,
    #[serde(default = "one")]
    pub m: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySection {
    /// CSV with columns `node,parent,level`.
    pub path: PathBuf,
    /// Per-level weight (`Λ` for BU/T, `Γ` for G); unlisted levels get 1.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub nodes: Vec<String>,
    pub alpha: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub axes: Vec<AxisConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    /// `lambda:<effect>`, `m:<effect>`, `weight:<level>` or `transfer`.
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    /// `[from, to, count]`, log-spaced; an alternative to `values`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<(f64, f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_length: Option<f64>,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_mode")]
    pub mode: weakl::evaluation::BootstrapMode,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_resamples() -> usize {
    1000
}
fn default_mode() -> weakl::evaluation::BootstrapMode {
    weakl::evaluation::BootstrapMode::Fixed
}
fn default_confidence() -> f64 {
    0.9
}

impl Default for BootstrapSection {
    fn default() -> Self {
        BootstrapSection {
            block_length: None,
            resamples: default_resamples(),
            mode: default_mode(),
            confidence: default_confidence(),
        }
    }
}

impl BootstrapSection {
    pub fn with_seed(&self, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            block_length: self.block_length,
            resamples: self.resamples,
            mode: self.mode,
            seed,
            confidence: self.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySection {
    #[serde(default = "toy_d")]
    pub d: usize,
    #[serde(default = "toy_n_train")]
    pub n_train: usize,
    #[serde(default = "toy_n_test")]
    pub n_test: usize,
    #[serde(default = "toy_sigma2")]
    pub sigma2: Vec<f64>,
    #[serde(default = "toy_runs")]
    pub runs: usize,
    #[serde(default = "toy_methods")]
    pub methods: Vec<ToyMethod>,
    #[serde(default = "toy_shrinkage")]
    pub mint_shrinkage: f64,
}

fn toy_d() -> usize {
    20
}
fn toy_n_train() -> usize {
    80
}
fn toy_n_test() -> usize {
    20
}
fn toy_sigma2() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}
fn toy_runs() -> usize {
    200
}
fn toy_methods() -> Vec<ToyMethod> {
    ToyMethod::ALL.to_vec()
}
fn toy_shrinkage() -> f64 {
    DEFAULT_MINT_SHRINKAGE
}

impl ToySection {
    pub fn to_config(&self, seed: u64) -> ToyConfig {
        ToyConfig {
            d: self.d,
            n_train: self.n_train,
            n_test: self.n_test,
            sigma2: self.sigma2.clone(),
            runs: self.runs,
            seed,
            methods: self.methods.clone(),
            mint_shrinkage: self.mint_shrinkage,
        }
    }
}

/// Two forecast files (`time,prediction`) scored against a truth file
/// (`time,truth`). A predictions file written by `fit` serves as either.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub first: PathBuf,
    pub second: PathBuf,
    pub truth: PathBuf,
    /// One-sided level of the skill interval.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Keep only rows whose `split` column has this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

fn default_alpha() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub model: PathBuf,
    /// Rows of the dataset to predict; all rows when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Tune,
    ToyBenchmark,
    Compare,
    Predict,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn require<'a, T>(section: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| config_err(format!("missing [{name}] section")))
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let path = std::path::absolute(path).map_err(|e| config_err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("/")).to_path_buf();
        cfg.rebase(&base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        if let Some(d) = &mut self.data {
            rebase(base, &mut d.path);
        }
        if let Some(h) = self.model.as_mut().and_then(|m| m.hierarchy.as_mut()) {
            rebase(base, &mut h.path);
        }
        if let Some(c) = &mut self.compare {
            rebase(base, &mut c.first);
            rebase(base, &mut c.second);
            rebase(base, &mut c.truth);
        }
        if let Some(p) = &mut self.predict {
            rebase(base, &mut p.model);
        }
        if let Some(o) = &mut self.out {
            rebase(base, o);
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| config_err(e.to_string()))
    }

    /// Checks everything `command` needs without touching any data file.
    pub fn validate(&self, command: Command) -> CliResult<()> {
        if self.out.is_none() {
            return Err(config_err("no output directory: set `out` or pass --out"));
        }
        self.validate_bootstrap()?;
        match command {
            Command::Fit => {
                self.validate_data()?;
                self.validate_split(false)?;
                self.validate_model()
            }
            Command::Tune => {
                self.validate_data()?;
                self.validate_split(true)?;
                self.validate_model()?;
                let model = require(&self.model, "model")?;
                if matches!(model.family, Family::Online | Family::Combination) {
                    return Err(config_err(
                        "tuning supports the additive and hierarchical families",
                    ));
                }
                self.grid_spec().map(|_| ())
            }
            Command::ToyBenchmark => {
                let toy = require(&self.toy, "toy")?;
                toy.to_config(self.seed).validate().map_err(CliError::from)
            }
            Command::Compare => {
                let c = require(&self.compare, "compare")?;
                if !(c.alpha > 0.0 && c.alpha < 0.5) {
                    return Err(config_err(format!("compare alpha {} outside (0, 0.5)", c.alpha)));
                }
                Ok(())
            }
            Command::Predict => {
                self.validate_data()?;
                let p = require(&self.predict, "predict")?;
                if let Some([a, b]) = p.rows {
                    if a >= b {
                        return Err(config_err(format!("predict rows {a}..{b} are empty")));
                    }
                }
                Ok(())
            }
        }
    }

    fn validate_bootstrap(&self) -> CliResult<()> {
        let b = &self.bootstrap;
        if b.resamples == 0 {
            return Err(config_err("bootstrap needs at least one resample"));
        }
        if !(b.confidence > 0.0 && b.confidence < 1.0) {
            return Err(config_err(format!("bootstrap confidence {} outside (0, 1)", b.confidence)));
        }
        if let Some(l) = b.block_length {
            if !(l >= 1.0 && l.is_finite()) {
                return Err(config_err(format!("block length {l} must be at least 1")));
            }
        }
        Ok(())
    }

    fn validate_data(&self) -> CliResult<()> {
        let d = require(&self.data, "data")?;
        if d.targets.is_empty() {
            return Err(config_err("data.targets is empty"));
        }
        let mut seen = HashSet::new();
        for c in &d.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(config_err(format!("column {:?} declared twice", c.name)));
            }
            if c.levels.is_some() && c.kind != ColumnKind::Categorical {
                return Err(config_err(format!("column {:?} declares levels but is not categorical", c.name)));
            }
        }
        Ok(())
    }

    fn validate_split(&self, need_validation: bool) -> CliResult<()> {
        let s = require(&self.split, "split")?;
        for (name, r) in [("train", s.train), ("validation", s.validation), ("test", s.test)] {
            if r[0] > r[1] {
                return Err(config_err(format!("split.{name} = [{}, {}] is reversed", r[0], r[1])));
            }
        }
        if s.train[0] == s.train[1] {
            return Err(config_err("split.train is empty"));
        }
        if need_validation && s.validation[0] == s.validation[1] {
            return Err(config_err("tuning needs a non-empty split.validation"));
        }
        Ok(())
    }

    fn column(&self, name: &str) -> CliResult<(usize, &ColumnConfig)> {
        let d = require(&self.data, "data")?;
        d.columns
            .iter()
            .enumerate()
            .find(|(_, c)| c.name == name)
            .ok_or_else(|| config_err(format!("column {name:?} is not declared in [data]")))
    }

    fn validate_model(&self) -> CliResult<()> {
        let model = require(&self.model, "model")?;
        let data = require(&self.data, "data")?;
        let mut names = HashSet::new();
        for e in &model.effects {
            if !names.insert(e.name.as_str()) {
                return Err(config_err(format!("effect {:?} declared twice", e.name)));
            }
            self.effect(e, &BTreeMap::new())?;
        }
        match model.family {
            Family::Additive | Family::Online => {
                if data.targets.len() != 1 {
                    return Err(config_err("this family needs exactly one target"));
                }
                if model.effects.is_empty() {
                    return Err(config_err("model.effects is empty"));
                }
                if model.family == Family::Online {
                    let o = require(&model.online, "model.online")?;
                    if !(o.lambda > 0.0 && o.lambda.is_finite()) {
                        return Err(config_err("model.online.lambda must be positive"));
                    }
                    if o.stride == 0 || o.window == Some(0) {
                        return Err(config_err("model.online stride and window must be positive"));
                    }
                }
            }
            Family::Combination => {
                if data.targets.len() != 1 {
                    return Err(config_err("this family needs exactly one target"));
                }
                let c = require(&model.combination, "model.combination")?;
                if c.experts.is_empty() {
                    return Err(config_err("model.combination.experts is empty"));
                }
                if !(c.lambda > 0.0 && c.lambda.is_finite()) {
                    return Err(config_err("model.combination.lambda must be positive"));
                }
                for name in &c.experts {
                    let (_, col) = self.column(name)?;
                    if col.kind != ColumnKind::Passthrough {
                        return Err(config_err(format!("expert column {name:?} must be passthrough")));
                    }
                }
            }
            Family::HierBu | Family::HierG | Family::HierT => {
                if model.effects.is_empty() {
                    return Err(config_err("model.effects is empty"));
                }
                let h = require(&model.hierarchy, "model.hierarchy")?;
                if h.weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(config_err("hierarchy weights must be finite and non-negative"));
                }
                if model.family == Family::HierT {
                    let t = require(&h.transfer, "model.hierarchy.transfer")?;
                    if t.nodes.len() < 2 || t.nodes.len() != t.alpha.len() {
                        return Err(config_err("transfer needs two or more nodes with one alpha each"));
                    }
                    if !(t.lambda >= 0.0 && t.lambda.is_finite()) {
                        return Err(config_err("transfer lambda must be finite and non-negative"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Library effect for `e`; `cardinalities` supplies the number of
    /// categorical levels once data is loaded (1 before that).
    pub fn effect(&self, e: &EffectConfig, cardinalities: &BTreeMap<usize, usize>) -> CliResult<Effect> {
        if !(e.lambda >= 0.0 && e.lambda.is_finite()) {
            return Err(config_err(format!("effect {:?}: lambda must be finite and non-negative", e.name)));
        }
        if e.columns.is_empty() {
            return Err(config_err(format!("effect {:?} names no column", e.name)));
        }
        let mut inputs = Vec::new();
        for c in &e.columns {
            let (idx, col) = self.column(c)?;
            let ok = match e.map {
                MapKind::Categorical => col.kind == ColumnKind::Categorical,
                _ => col.kind != ColumnKind::Categorical,
            };
            if !ok {
                return Err(config_err(format!(
                    "effect {:?}: {:?} map cannot read {:?} column {c:?}",
                    e.name, e.map, col.kind
                )));
            }
            inputs.push(idx);
        }
        if e.map != MapKind::Fourier && inputs.len() != 1 {
            return Err(config_err(format!("effect {:?}: only fourier maps take several columns", e.name)));
        }
        if e.s < 1 {
            return Err(config_err(format!("effect {:?}: sobolev order must be at least 1", e.name)));
        }
        let map = match e.map {
            MapKind::Linear => FeatureMapSpec::linear(inputs[0]),
            MapKind::Fourier => FeatureMapSpec::Fourier { inputs, m: e.m, s: e.s },
            MapKind::Categorical => FeatureMapSpec::categorical(
                inputs[0],
                cardinalities.get(&inputs[0]).copied().unwrap_or(1),
            ),
        };
        Ok(Effect::new(e.name.clone(), map, e.lambda))
    }

    pub fn schema(&self) -> CliResult<CsvSchema> {
        let d = require(&self.data, "data")?;
        Ok(CsvSchema {
            timestamp: d.timestamp.clone(),
            targets: d.targets.clone(),
            columns: d.columns.iter().map(|c| (c.name.clone(), c.kind)).collect(),
        })
    }

    pub fn grid_spec(&self) -> CliResult<GridSpec> {
        let g = require(&self.grid, "grid")?;
        let axes = g
            .axes
            .iter()
            .map(|a| match (&a.values[..], a.log) {
                ([], Some((from, to, count))) => {
                    if !(from > 0.0 && to > 0.0) || count == 0 {
                        return Err(config_err(format!("axis {:?}: log range needs positive ends and count", a.name)));
                    }
                    Ok(GridSpec::log_axis(&a.name, from, to, count))
                }
                (v, None) if !v.is_empty() => Ok(GridAxis {
                    name: a.name.clone(),
                    values: v.to_vec(),
                }),
                _ => Err(config_err(format!("axis {:?} needs exactly one of `values` or `log`", a.name))),
            })
            .collect::<CliResult<Vec<_>>>()?;
        GridSpec::new(axes).map_err(CliError::from)
    }
}

pub fn range(a: [usize; 2]) -> Range<usize> {
    a[0]..a[1]
}

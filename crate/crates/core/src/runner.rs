//! Config-driven experiment grids: scenario x strategy x budgeting x budget
//! x seed, results written as CSV.
//!
//! Files in the output directory:
//! - `matrix_<run>.csv`: `i,j,accuracy` for every filled cell
//! - `summary.csv`: one row per completed run, with AP̄ in percent
//! - `timing.csv`: wall seconds per run and task (kept apart so that
//!   `summary.csv` is reproducible byte for byte)
//! - `failures.csv`: runs that errored, if any
//! - `config.echo`: the resolved config, every default filled in
//! - `report.csv`: written by [`emit_report`]

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Scenario, TaskStream};
use crate::dataset::{filter_stream, load_csv, partition_by_task, DEFAULT_VARIANCE_THRESHOLD};
use crate::error::{Error, Result};
use crate::iforest::{IForestParams, DEFAULT_CONTAMINATION, DEFAULT_NUM_TREES, DEFAULT_SUBSAMPLE};
use crate::metrics::global_ap;
use crate::nn::{AdamConfig, TrainConfig, DEFAULT_HIDDEN};
use crate::nn::adam::DEFAULT_LR;
use crate::nn::train::{DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};
use crate::replay::{Budgeting, ReplayConfig, Strategy};
use crate::scalar::Scalar;
use crate::scenario::{
    run_scenario, ScenarioConfig, DEFAULT_CLASSES_PER_INCREMENT, DEFAULT_CLASSES_PER_TASK, DEFAULT_DROPOUT,
    DEFAULT_INITIAL_CLASSES,
};
use crate::synth::{generate_stream, SynthConfig};

/// Replay budget as written in a config: a sample count, a percentage of
/// the stream's training samples, or unlimited.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BudgetSpec {
    Count(usize),
    Percent(f64),
    Unlimited,
}

impl BudgetSpec {
    pub fn resolve(self, total_train: usize) -> usize {
        match self {
            BudgetSpec::Count(n) => n,
            BudgetSpec::Percent(p) => (p / 100.0 * total_train as f64).round() as usize,
            BudgetSpec::Unlimited => usize::MAX,
        }
    }

    /// Token used inside run names and file names.
    pub fn file_token(self) -> String {
        match self {
            BudgetSpec::Count(n) => n.to_string(),
            BudgetSpec::Percent(p) => format!("{p}pct"),
            BudgetSpec::Unlimited => "inf".into(),
        }
    }
}

impl fmt::Display for BudgetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BudgetSpec::Count(n) => write!(f, "{n}"),
            BudgetSpec::Percent(p) => write!(f, "{p}%"),
            BudgetSpec::Unlimited => f.write_str("inf"),
        }
    }
}

impl FromStr for BudgetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "inf" {
            return Ok(BudgetSpec::Unlimited);
        }
        if let Some(p) = s.strip_suffix('%') {
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|_| Error::config("grid.budgets", format!("bad percentage `{s}`")))?;
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::config("grid.budgets", format!("percentage {p} outside (0, 100]")));
            }
            return Ok(BudgetSpec::Percent(p));
        }
        s.parse()
            .map(BudgetSpec::Count)
            .map_err(|_| Error::config("grid.budgets", format!("`{s}` is not a count, percentage or `inf`")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawBudget {
    Int(u64),
    Text(String),
}

impl Serialize for BudgetSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BudgetSpec::Count(n) => RawBudget::Int(*n as u64),
            other => RawBudget::Text(other.to_string()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BudgetSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RawBudget::deserialize(d)? {
            RawBudget::Int(n) => Ok(BudgetSpec::Count(n as usize)),
            RawBudget::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synth,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// CSV input, relative to the config file.
    pub path: Option<PathBuf>,
    pub holdout_fraction: f64,
    pub variance_threshold: f64,
    pub split_seed: u64,
    /// Overrides on top of the synthetic defaults for the scenario kind;
    /// fully resolved once the config is loaded.
    pub synth: toml::Table,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synth,
            path: None,
            holdout_fraction: 0.2,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            split_seed: 0,
            synth: toml::Table::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: Scenario,
    pub initial_classes: usize,
    pub classes_per_increment: usize,
    pub classes_per_task: usize,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            kind: Scenario::DomainIl,
            initial_classes: DEFAULT_INITIAL_CLASSES,
            classes_per_increment: DEFAULT_CLASSES_PER_INCREMENT,
            classes_per_task: DEFAULT_CLASSES_PER_TASK,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub joint_reinit: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        ModelSection {
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout: DEFAULT_DROPOUT,
            lr: DEFAULT_LR,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            joint_reinit: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub gamma: f64,
    pub alpha: f64,
    pub contamination: f64,
    pub goodware_match_malware: bool,
    pub iforest_trees: usize,
    pub iforest_subsample: usize,
}

impl Default for ReplaySection {
    fn default() -> Self {
        ReplaySection {
            gamma: 0.5,
            alpha: 0.5,
            contamination: DEFAULT_CONTAMINATION,
            goodware_match_malware: false,
            iforest_trees: DEFAULT_NUM_TREES,
            iforest_subsample: DEFAULT_SUBSAMPLE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub strategies: Vec<Strategy>,
    /// Only used by the MADAR strategies.
    pub budgetings: Vec<Budgeting>,
    /// Used by every strategy except `none` and `joint`.
    pub budgets: Vec<BudgetSpec>,
    pub seeds: Vec<u64>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            strategies: vec![Strategy::None, Strategy::Grs, Strategy::Madar, Strategy::Joint],
            budgetings: vec![Budgeting::Ratio],
            budgets: vec![BudgetSpec::Percent(10.0)],
            seeds: vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Results directory, relative to the config file.
    pub output_dir: PathBuf,
    /// Parallel runs; 0 uses every available core.
    pub workers: usize,
    pub precision: Precision,
    pub data: DataSection,
    pub scenario: ScenarioSection,
    pub model: ModelSection,
    pub replay: ReplaySection,
    pub grid: GridSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            output_dir: PathBuf::from("results"),
            workers: 0,
            precision: Precision::F32,
            data: DataSection::default(),
            scenario: ScenarioSection::default(),
            model: ModelSection::default(),
            replay: ReplaySection::default(),
            grid: GridSection::default(),
        }
    }
}

/// One cell of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub strategy: Strategy,
    pub budgeting: Option<Budgeting>,
    pub budget: Option<BudgetSpec>,
    pub seed: u64,
}

impl RunSpec {
    pub fn name(&self, scenario: Scenario) -> String {
        format!(
            "{}_{}_{}_{}_s{}",
            scenario,
            self.strategy,
            self.budgeting.map_or("-".into(), |b| b.to_string()),
            self.budget.map_or("-".into(), |b| b.file_token()),
            self.seed
        )
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        let resolved = cfg.synth_config()?;
        cfg.data.synth = match toml::Value::try_from(&resolved) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(Error::config("data.synth", "cannot serialize")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.data.path {
            if p.is_relative() {
                cfg.data.path = Some(base.join(p));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("name", "must be non-empty and contain no path separators"));
        }
        let g = &self.grid;
        if g.strategies.is_empty() {
            return Err(Error::config("grid.strategies", "empty"));
        }
        if g.seeds.is_empty() {
            return Err(Error::config("grid.seeds", "empty"));
        }
        if g.strategies.iter().any(|s| s.is_budgeted()) && g.budgets.is_empty() {
            return Err(Error::config("grid.budgets", "empty but a budgeted strategy is listed"));
        }
        if g.strategies.iter().any(|s| matches!(s, Strategy::Madar | Strategy::MadarTheta)) && g.budgetings.is_empty() {
            return Err(Error::config("grid.budgetings", "empty but a MADAR strategy is listed"));
        }
        for b in &g.budgets {
            if let BudgetSpec::Percent(p) = b {
                if !(*p > 0.0 && *p <= 100.0) {
                    return Err(Error::config("grid.budgets", format!("percentage {p} outside (0, 100]")));
                }
            }
        }
        let d = &self.data;
        if !(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0) {
            return Err(Error::config("data.holdout_fraction", "outside (0, 1)"));
        }
        if d.variance_threshold.is_nan() || d.variance_threshold < 0.0 {
            return Err(Error::config("data.variance_threshold", "must be >= 0"));
        }
        match d.source {
            DataSource::Csv if d.path.is_none() => return Err(Error::config("data.path", "required for csv input")),
            DataSource::Synth => {
                self.synth_config()?
                    .plan()
                    .map_err(|e| Error::config("data.synth", e.to_string()))?;
            }
            _ => {}
        }
        if self.replay.iforest_trees == 0 || self.replay.iforest_subsample < 2 {
            return Err(Error::config("replay", "iforest_trees must be >= 1 and iforest_subsample >= 2"));
        }
        self.scenario_config(&RunSpec {
            strategy: g.strategies[0],
            budgeting: None,
            budget: None,
            seed: 0,
        }, 0)
        .validate()
    }

    /// Synthetic stream settings: defaults for the scenario kind with the
    /// `[data.synth]` overrides applied.
    pub fn synth_config(&self) -> Result<SynthConfig> {
        let synth = SynthConfig::with_overrides(&self.data.synth, self.scenario.kind)
            .map_err(|e| Error::config("data.synth", e.to_string()))?;
        if synth.scenario != self.scenario.kind {
            return Err(Error::config("data.synth.scenario", "must match scenario.kind"));
        }
        Ok(synth)
    }

    /// Expands the grid in a fixed order: strategy, budgeting, budget, seed.
    /// Budget axes collapse for strategies that ignore them.
    pub fn runs(&self) -> Vec<RunSpec> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &strategy in &g.strategies {
            let budgetings: Vec<Option<Budgeting>> = match strategy {
                Strategy::Madar | Strategy::MadarTheta => g.budgetings.iter().copied().map(Some).collect(),
                _ => vec![None],
            };
            let budgets: Vec<Option<BudgetSpec>> = if strategy.is_budgeted() {
                g.budgets.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for &budgeting in &budgetings {
                for &budget in &budgets {
                    for &seed in &g.seeds {
                        out.push(RunSpec {
                            strategy,
                            budgeting,
                            budget,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn scenario_config(&self, run: &RunSpec, total_train: usize) -> ScenarioConfig {
        let m = &self.model;
        let r = &self.replay;
        ScenarioConfig {
            scenario: self.scenario.kind,
            initial_classes: self.scenario.initial_classes,
            classes_per_increment: self.scenario.classes_per_increment,
            classes_per_task: self.scenario.classes_per_task,
            replay: ReplayConfig {
                strategy: run.strategy,
                budgeting: run.budgeting.unwrap_or(Budgeting::Ratio),
                budget: run.budget.map_or(0, |b| b.resolve(total_train)),
                gamma: r.gamma,
                alpha: r.alpha,
                contamination: r.contamination,
                goodware_match_malware: r.goodware_match_malware,
                iforest: IForestParams {
                    num_trees: r.iforest_trees,
                    max_subsample: r.iforest_subsample,
                },
                seed: run.seed,
            },
            train: TrainConfig {
                epochs: m.epochs,
                batch_size: m.batch_size,
            },
            adam: AdamConfig {
                lr: m.lr,
                beta1: m.beta1,
                beta2: m.beta2,
                epsilon: m.epsilon,
            },
            hidden: m.hidden.clone(),
            dropout: m.dropout,
            joint_reinit: m.joint_reinit,
            seed: run.seed,
        }
    }

    /// Builds the task stream the grid runs on.
    pub fn load_stream<T: Scalar>(&self) -> Result<TaskStream<T>> {
        match self.data.source {
            DataSource::Synth => generate_stream(&self.synth_config()?.plan()?),
            DataSource::Csv => {
                let path = self.data.path.as_ref().expect("validated");
                let raw = load_csv::<T>(path)?;
                let stream = partition_by_task(&raw, self.scenario.kind, self.data.holdout_fraction, self.data.split_seed)?;
                let (filtered, mask) = filter_stream(&stream, self.data.variance_threshold)?;
                log::info!("variance filter kept {} of {} features", mask.kept(), mask.keep.len());
                Ok(filtered)
            }
        }
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(format!("csv encode failed: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv encode failed: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub scenario: String,
    pub strategy: String,
    pub budgeting: String,
    pub budget: String,
    /// Budget in samples after resolving percentages; empty when unused or unlimited.
    pub replay_budget: String,
    pub seed: u64,
    pub ap_bar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub run: String,
    pub task: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MatrixRow {
    i: usize,
    j: usize,
    accuracy: f64,
}

#[derive(Clone, Debug, Serialize)]
struct FailureRow {
    run: String,
    error: String,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub completed: Vec<SummaryRow>,
    pub failed: Vec<(String, Error)>,
}

/// Runs the whole grid and writes the result files. Individual run
/// failures are logged and reported, not fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => run_grid::<f32>(cfg),
        Precision::F64 => run_grid::<f64>(cfg),
    }
}

fn run_grid<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // stale matrices from an earlier grid would break the summary/matrix pairing
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("matrix_") && name.ends_with(".csv") {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    write_atomic(&dir.join("config.echo"), cfg.to_toml()?.as_bytes())?;

    let stream: TaskStream<T> = cfg.load_stream()?;
    let total_train = stream.total_train();
    let runs = cfg.runs();
    log::info!("{} runs on {} tasks ({} training samples)", runs.len(), stream.num_tasks(), total_train);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<(SummaryRow, Vec<TimingRow>)>> = pool.install(|| {
        runs.par_iter()
            .map(|run| {
                let name = run.name(cfg.scenario.kind);
                let started = Instant::now();
                let sc = cfg.scenario_config(run, total_train);
                let outcome = run_scenario(&stream, &sc)?;
                let ap_bar = global_ap(&outcome.matrix)?;
                let cells: Vec<MatrixRow> = outcome
                    .matrix
                    .entries()
                    .map(|(i, j, accuracy)| MatrixRow { i, j, accuracy })
                    .collect();
                write_atomic(&dir.join(format!("matrix_{name}.csv")), &csv_bytes(&cells)?)?;
                let mut timing: Vec<TimingRow> = outcome
                    .task_seconds
                    .iter()
                    .enumerate()
                    .map(|(t, &seconds)| TimingRow {
                        run: name.clone(),
                        task: t.to_string(),
                        seconds,
                    })
                    .collect();
                timing.push(TimingRow {
                    run: name.clone(),
                    task: "total".into(),
                    seconds: started.elapsed().as_secs_f64(),
                });
                log::info!("{name}: AP = {ap_bar:.2}");
                let replay_budget = match run.budget {
                    Some(b) if b != BudgetSpec::Unlimited => sc.replay.budget.to_string(),
                    _ => String::new(),
                };
                Ok((
                    SummaryRow {
                        run: name,
                        scenario: cfg.scenario.kind.to_string(),
                        strategy: run.strategy.to_string(),
                        budgeting: run.budgeting.map_or("-".into(), |b| b.to_string()),
                        budget: run.budget.map_or("-".into(), |b| b.to_string()),
                        replay_budget,
                        seed: run.seed,
                        ap_bar,
                    },
                    timing,
                ))
            })
            .collect()
    });

    let mut completed = Vec::new();
    let mut timing = Vec::new();
    let mut failed = Vec::new();
    for (run, res) in runs.iter().zip(results) {
        match res {
            Ok((row, t)) => {
                completed.push(row);
                timing.extend(t);
            }
            Err(e) => {
                let name = run.name(cfg.scenario.kind);
                log::error!("{name} failed: {e}");
                failed.push((name, e));
            }
        }
    }
    write_atomic(&dir.join("summary.csv"), &csv_bytes(&completed)?)?;
    write_atomic(&dir.join("timing.csv"), &csv_bytes(&timing)?)?;
    let failures_path = dir.join("failures.csv");
    if failed.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path).map_err(|e| Error::io(&failures_path, e))?;
        }
    } else {
        let rows: Vec<FailureRow> = failed
            .iter()
            .map(|(run, e)| FailureRow {
                run: run.clone(),
                error: e.to_string(),
            })
            .collect();
        write_atomic(&failures_path, &csv_bytes(&rows)?)?;
    }
    Ok(ExperimentOutcome {
        output_dir: dir.clone(),
        completed,
        failed,
    })
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>> {
    let path = dir.join("summary.csv");
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(&path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    })?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Csv {
                path: path.clone(),
                row: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Reads `matrix_<run>.csv` back into an accuracy matrix.
pub fn read_matrix(dir: &Path, run: &str) -> Result<crate::data::AccuracyMatrix> {
    let path = dir.join(format!("matrix_{run}.csv"));
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let cells: Vec<MatrixRow> = rdr
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let n = cells.iter().map(|c| c.i + 1).max().unwrap_or(0);
    let mut m = crate::data::AccuracyMatrix::new(n);
    for c in cells {
        m.set(c.i, c.j, c.accuracy)?;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub budgeting: String,
    pub budget: String,
    pub n: usize,
    /// Mean AP̄ over seeds; empty when no seed completed.
    pub mean_ap: Option<f64>,
    /// Sample standard deviation; 0 for a single seed.
    pub std_ap: Option<f64>,
    /// Seeds listed in the grid with no completed run.
    pub missing: usize,
}

impl ReportRow {
    pub fn is_missing(&self) -> bool {
        self.n == 0
    }
}

pub fn mean_and_sample_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

/// Aggregates `summary.csv` per (strategy, budgeting, budget) and writes
/// `report.csv`. Cells of the echoed grid with no completed seed are kept
/// as missing rows.
pub fn emit_report(dir: &Path) -> Result<Vec<ReportRow>> {
    let summary = read_summary(dir)?;
    type Key = (String, String, String);
    let mut order: Vec<Key> = Vec::new();
    let mut expected: BTreeMap<Key, usize> = BTreeMap::new();
    let echo = dir.join("config.echo");
    if echo.exists() {
        let text = fs::read_to_string(&echo).map_err(|e| Error::io(&echo, e))?;
        let cfg = ExperimentConfig::from_toml(&text)?;
        for run in cfg.runs() {
            let key = (
                run.strategy.to_string(),
                run.budgeting.map_or("-".into(), |b| b.to_string()),
                run.budget.map_or("-".into(), |b| b.to_string()),
            );
            if !expected.contains_key(&key) {
                order.push(key.clone());
            }
            *expected.entry(key).or_insert(0) += 1;
        }
    }
    let mut values: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for row in &summary {
        let key = (row.strategy.clone(), row.budgeting.clone(), row.budget.clone());
        if !values.contains_key(&key) && !expected.contains_key(&key) {
            order.push(key.clone());
        }
        values.entry(key).or_default().push(row.ap_bar);
    }
    let rows: Vec<ReportRow> = order
        .into_iter()
        .map(|key| {
            let v = values.get(&key).cloned().unwrap_or_default();
            let stats = mean_and_sample_std(&v);
            ReportRow {
                missing: expected.get(&key).copied().unwrap_or(0).saturating_sub(v.len()),
                n: v.len(),
                mean_ap: stats.map(|s| s.0),
                std_ap: stats.map(|s| s.1),
                strategy: key.0,
                budgeting: key.1,
                budget: key.2,
            }
        })
        .collect();
    write_atomic(&dir.join("report.csv"), &csv_bytes(&rows)?)?;
    Ok(rows)
}

/// Plain-text table of report rows.
pub fn format_report(rows: &[ReportRow]) -> String {
    let mut out = format!("{:<12} {:<10} {:>8} {:>16} {:>4}\n", "strategy", "budgeting", "budget", "AP", "n");
    for r in rows {
        let cell = match (r.mean_ap, r.std_ap) {
            (Some(m), Some(s)) => format!("{m:.1} ± {s:.1}"),
            _ => "missing".into(),
        };
        let flag = if r.n == 1 { " (n=1)" } else { "" };
        out += &format!(
            "{:<12} {:<10} {:>8} {:>16} {:>4}{flag}\n",
            r.strategy, r.budgeting, r.budget, cell, r.n
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let text = format!(
            r#"
name = "tiny"
output_dir = "{}"
workers = 2

[data.synth]
num_tasks = 3
feature_dim = 8
num_families = 6
samples_per_task = 120
goodware_groups = 4

[model]
hidden = [16, 8]
epochs = 2
batch_size = 32

[replay]
iforest_trees = 10

[grid]
strategies = ["grs", "madar"]
budgets = [40, "10%"]
seeds = [1, 2, 3]
"#,
            dir.display()
        );
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn budget_spec_parsing() {
        assert_eq!("250".parse::<BudgetSpec>().unwrap(), BudgetSpec::Count(250));
        assert_eq!("10%".parse::<BudgetSpec>().unwrap(), BudgetSpec::Percent(10.0));
        assert_eq!("inf".parse::<BudgetSpec>().unwrap(), BudgetSpec::Unlimited);
        assert!("0%".parse::<BudgetSpec>().is_err());
        assert!("lots".parse::<BudgetSpec>().is_err());
        assert_eq!(BudgetSpec::Percent(10.0).resolve(1005), 101);
    }

    #[test]
    fn grid_cardinality_and_echo_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        assert_eq!(cfg.runs().len(), 12);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.runs(), cfg.runs());

        let mut wide = cfg.clone();
        wide.grid.strategies = vec![Strategy::None, Strategy::Grs, Strategy::MadarTheta];
        wide.grid.budgetings = vec![Budgeting::Ratio, Budgeting::Uniform];
        // none: 3 seeds, grs: 2 budgets x 3, madar-theta: 2 x 2 x 3
        assert_eq!(wide.runs().len(), 3 + 6 + 12);
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = ExperimentConfig::from_toml("[grid]\nseeds = []\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "grid.seeds"), "{err}");
        let err = ExperimentConfig::from_toml("[model]\ndropout = 1.5\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "dropout"), "{err}");
        assert!(ExperimentConfig::from_toml("bogus = 1\n").is_err());
        let err = ExperimentConfig::from_toml("[data]\nsource = \"csv\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "data.path"), "{err}");
    }

    #[test]
    fn end_to_end_files_are_consistent_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.grid.seeds = vec![1, 2];
        cfg.grid.budgets = vec![BudgetSpec::Percent(10.0)];
        let out = run_experiment(&cfg).unwrap();
        assert!(out.failed.is_empty());
        assert_eq!(out.completed.len(), 4);
        let first = fs::read(dir.path().join("summary.csv")).unwrap();

        let summary = read_summary(dir.path()).unwrap();
        let mut matrices = 0;
        for entry in fs::read_dir(dir.path()).unwrap() {
            let name = entry.unwrap().file_name().into_string().unwrap();
            if let Some(run) = name.strip_prefix("matrix_").and_then(|n| n.strip_suffix(".csv")) {
                matrices += 1;
                let row = summary.iter().find(|r| r.run == run).expect("matrix without summary row");
                assert_eq!(global_ap(&read_matrix(dir.path(), run).unwrap()).unwrap(), row.ap_bar);
            }
        }
        assert_eq!(matrices, summary.len());

        run_experiment(&cfg).unwrap();
        assert_eq!(fs::read(dir.path().join("summary.csv")).unwrap(), first);

        let report = emit_report(dir.path()).unwrap();
        assert_eq!(report.len(), 2);
        assert!(report.iter().all(|r| r.n == 2 && r.missing == 0));
        assert!(dir.path().join("report.csv").exists());
    }

    #[test]
    fn report_statistics() {
        assert_eq!(mean_and_sample_std(&[90.0, 92.0, 94.0]), Some((92.0, 2.0)));
        assert_eq!(mean_and_sample_std(&[80.0]), Some((80.0, 0.0)));
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            SummaryRow {
                run: "a".into(),
                scenario: "domain-il".into(),
                strategy: "grs".into(),
                budgeting: "-".into(),
                budget: "100".into(),
                replay_budget: "100".into(),
                seed: 0,
                ap_bar: 80.0,
            },
        ];
        write_atomic(&dir.path().join("summary.csv"), &csv_bytes(&rows).unwrap()).unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.grid.strategies = vec![Strategy::Grs, Strategy::None];
        cfg.grid.budgets = vec![BudgetSpec::Count(100)];
        write_atomic(&dir.path().join("config.echo"), cfg.to_toml().unwrap().as_bytes()).unwrap();
        let report = emit_report(dir.path()).unwrap();
        assert_eq!(report.len(), 2);
        assert_eq!((report[0].n, report[0].std_ap), (1, Some(0.0)));
        assert!(report[1].is_missing());
        assert!(format_report(&report).contains("(n=1)"));
    }
}

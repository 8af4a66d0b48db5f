//! Experiment plumbing: flat JSON configuration with flag overrides, the
//! `run` output files, hyper-parameter sweeps and the DP verification report.
//!
//! A run directory holds
//!
//! * `metrics.csv`: one row per sampled client per round, written as rounds
//!   finish;
//! * `summary.json`: the resolved configuration, any warnings and the
//!   per-round evaluation;
//! * `checkpoint.json`: the final global model.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dp::{canonical_adjacent_pair, dp_ratio_check, DpCheckConfig, DpCheckReport};
use crate::error::{Error, Result};
use crate::federated::{train_with, EvalMode, RoundReport, TrainConfig};
use crate::gnn::{EncoderKind, GraphModel};
use crate::graph::{generate_synthetic, Dataset, GraphInstance, SyntheticSpec};
use crate::nn::{ParamStore, Tensor};
use crate::rng::{derive_seed, Stream};

pub const METRICS_HEADER: &str = "round,client_id,loss_c,loss_e,loss,auc_clean,auc_perturbed,eps_cumulative";
pub const SWEEP_HEADER: &str = "setting,k,gamma,eps0,eps1,seed_index,seed,auc_clean,auc_perturbed,auc,eps_cumulative";
pub const FAILURES_HEADER: &str = "setting,k,gamma,eps0,eps1,seed_index,seed,error";

/// Where the graphs come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A JSON-lines dataset file.
    Path(PathBuf),
    /// Generated with the run seed.
    Synthetic(SyntheticSpec),
}

/// Resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SyntheticSpec::default()),
            train: TrainConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Reads a flat JSON object. Keys `dataset`, `synthetic` and `out_dir`
    /// are consumed here, everything else must be a training field. A
    /// previous `summary.json` is accepted too: its `config` entry is used.
    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(mut map) = value else {
            return Err(config_err("config", "expected a JSON object"));
        };
        if let Some(Value::Object(inner)) = map.remove("config") {
            return Self::from_value(Value::Object(inner));
        }
        let dataset = map.remove("dataset");
        let synthetic = map.remove("synthetic");
        let out_dir = map.remove("out_dir");

        let data = match (dataset, synthetic) {
            (Some(_), Some(_)) => {
                return Err(config_err("dataset", "`dataset` and `synthetic` are mutually exclusive"));
            }
            (Some(Value::String(p)), None) => DataSource::Path(PathBuf::from(p)),
            (Some(other), None) => return Err(config_err("dataset", format!("expected a path string, got {other}"))),
            (None, Some(spec)) => DataSource::Synthetic(
                serde_json::from_value(spec).map_err(|e| config_err("synthetic", e.to_string()))?,
            ),
            (None, None) => DataSource::Synthetic(SyntheticSpec::default()),
        };
        let out_dir = match out_dir {
            None => PathBuf::from("out"),
            Some(Value::String(p)) => PathBuf::from(p),
            Some(other) => return Err(config_err("out_dir", format!("expected a path string, got {other}"))),
        };
        let train: TrainConfig = serde_json::from_value(Value::Object(map)).map_err(train_field_error)?;
        Ok(ExperimentConfig { data, train, out_dir })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_err("config", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The flat JSON form read by [`ExperimentConfig::from_value`].
    pub fn to_value(&self) -> Value {
        let mut map = Map::new();
        match &self.data {
            DataSource::Path(p) => {
                map.insert("dataset".into(), Value::String(p.display().to_string()));
            }
            DataSource::Synthetic(spec) => {
                map.insert("synthetic".into(), serde_json::to_value(spec).expect("spec serializes"));
            }
        }
        map.insert("out_dir".into(), Value::String(self.out_dir.display().to_string()));
        if let Value::Object(train) = serde_json::to_value(&self.train).expect("config serializes") {
            map.extend(train);
        }
        Value::Object(map)
    }

    /// Validates the training settings and the synthetic spec. Returns
    /// warnings for valid but unusual values.
    pub fn validate(&self) -> Result<Vec<String>> {
        if let DataSource::Synthetic(spec) = &self.data {
            if spec.n_graphs < 2 {
                return Err(config_err("synthetic.n_graphs", "must be at least 2"));
            }
            if spec.min_nodes < 3 || spec.min_nodes > spec.max_nodes {
                return Err(config_err("synthetic.min_nodes", "need 3 <= min_nodes <= max_nodes"));
            }
            if spec.feature_dim == 0 {
                return Err(config_err("synthetic.feature_dim", "must be at least 1"));
            }
        }
        self.train.validate()
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Path(p) => Dataset::load(p),
            DataSource::Synthetic(spec) => generate_synthetic(spec, self.train.seed),
        }
    }
}

/// serde reports unknown or mistyped fields as text; pull out the field
/// name when it is there.
fn train_field_error(e: serde_json::Error) -> Error {
    let msg = e.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|f| !f.is_empty())
        .unwrap_or("config")
        .to_string();
    Error::Config { field, message: msg }
}

/// Command-line overrides; `Some` wins over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub eps0: Option<f64>,
    pub eps1: Option<f64>,
    pub k: Option<usize>,
    pub cap_n: Option<usize>,
    pub clients: Option<usize>,
    pub sampled: Option<usize>,
    pub rounds: Option<usize>,
    pub lr: Option<f64>,
    pub encoder: Option<EncoderKind>,
    pub eval_mode: Option<EvalMode>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(p) = &self.dataset {
            cfg.data = DataSource::Path(p.clone());
        }
        if let Some(p) = &self.out_dir {
            cfg.out_dir = p.clone();
        }
        let t = &mut cfg.train;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { t.$f = v; } )* };
        }
        set!(seed, gamma, tau, eps0, eps1, k, cap_n, clients, sampled, rounds, lr, encoder, eval_mode);
    }
}

/// Final global model, as written to `checkpoint.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub round: usize,
    pub model: GraphModel,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &serde_json::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Evaluation of one round as stored in `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub sampled: Vec<usize>,
    pub auc_clean: f64,
    pub auc_perturbed: f64,
    pub per_task_clean: Vec<Option<f64>>,
    pub per_task_perturbed: Vec<Option<f64>>,
    pub fallbacks: usize,
    pub eps_cumulative: f64,
}

impl From<&RoundReport> for RoundSummary {
    fn from(r: &RoundReport) -> Self {
        RoundSummary {
            round: r.round,
            sampled: r.sampled.clone(),
            auc_clean: r.auc_clean,
            auc_perturbed: r.auc_perturbed,
            per_task_clean: r.per_task_clean.clone(),
            per_task_perturbed: r.per_task_perturbed.clone(),
            fallbacks: r.fallbacks,
            eps_cumulative: r.eps_cumulative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: Value,
    pub warnings: Vec<String>,
    pub train_size: usize,
    pub test_size: usize,
    pub rounds_completed: usize,
    /// Metric chosen by `eval_mode` after the last round; absent when no
    /// round ran.
    pub final_auc: Option<f64>,
    pub rounds: Vec<RoundSummary>,
}

impl RunSummary {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn last(&self) -> Option<&RoundSummary> {
        self.rounds.last()
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn metrics_rows(r: &RoundReport) -> String {
    let mut out = String::new();
    for c in &r.clients {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.round, c.client_id, c.loss_c, c.loss_e, c.loss, r.auc_clean, r.auc_perturbed, r.eps_cumulative
        ));
    }
    out
}

/// Trains with `cfg` and writes the three output files to `cfg.out_dir`.
/// Rows of `metrics.csv` are flushed after every round, so a failing run
/// leaves the completed rounds behind.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let warnings = cfg.validate()?;
    let data = cfg.load_dataset()?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let metrics_path = dir.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let io = |e| Error::io(&metrics_path, e);
    writeln!(metrics, "{METRICS_HEADER}").map_err(io)?;
    metrics.flush().map_err(io)?;

    let outcome = train_with(&cfg.train, &data, |report| {
        metrics.write_all(metrics_rows(report).as_bytes()).map_err(io)?;
        metrics.flush().map_err(io)
    })?;
    drop(metrics);

    let summary = RunSummary {
        config: cfg.to_value(),
        warnings,
        train_size: outcome.train_size,
        test_size: outcome.test_size,
        rounds_completed: outcome.reports.len(),
        final_auc: outcome.reports.last().map(|r| r.headline_auc(cfg.train.eval_mode)),
        rounds: outcome.reports.iter().map(RoundSummary::from).collect(),
    };
    write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Checkpoint {
        round: outcome.global.round,
        model: outcome.global.model,
        params: outcome.global.params,
    }
    .save(&dir.join("checkpoint.json"))?;
    Ok(summary)
}

/// All `(a, b)` with `a <= b` drawn from `values`, in input order. Four
/// budgets give ten combinations.
pub fn unordered_pairs(values: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (i, &a) in values.iter().enumerate() {
        for &b in &values[i..] {
            out.push((a, b));
        }
    }
    out
}

/// Axes of a sweep. An axis left as `None` keeps the base config's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub k: Option<Vec<usize>>,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    /// Explicit `(eps0, eps1)` pairs.
    #[serde(default)]
    pub eps_pairs: Option<Vec<(f64, f64)>>,
    /// Budgets expanded with [`unordered_pairs`]; merged after `eps_pairs`.
    #[serde(default)]
    pub eps_values: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub seeds: usize,
}

fn one() -> usize {
    1
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            k: None,
            gamma: None,
            eps_pairs: None,
            eps_values: None,
            seeds: 1,
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSetting {
    pub k: usize,
    pub gamma: f64,
    pub eps0: f64,
    pub eps1: f64,
}

impl SweepSetting {
    fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            k: self.k,
            gamma: self.gamma,
            eps0: self.eps0,
            eps1: self.eps1,
            ..base.clone()
        }
    }

    fn dir_name(&self, seed_index: usize) -> String {
        format!("k{}_g{}_e{}-{}_s{}", self.k, self.gamma, self.eps0, self.eps1, seed_index)
    }
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| config_err("grid", e.to_string()))
    }

    /// Cartesian product `k x gamma x eps`, in that nesting order.
    pub fn settings(&self, base: &TrainConfig) -> Result<Vec<SweepSetting>> {
        if self.seeds == 0 {
            return Err(config_err("seeds", "must be at least 1"));
        }
        let nonempty = |name: &str, len: Option<usize>| match len {
            Some(0) => Err(config_err(name, "grid axis is empty")),
            _ => Ok(()),
        };
        nonempty("k", self.k.as_ref().map(Vec::len))?;
        nonempty("gamma", self.gamma.as_ref().map(Vec::len))?;
        nonempty("eps_pairs", self.eps_pairs.as_ref().map(Vec::len))?;
        nonempty("eps_values", self.eps_values.as_ref().map(Vec::len))?;

        let ks = self.k.clone().unwrap_or_else(|| vec![base.k]);
        let gammas = self.gamma.clone().unwrap_or_else(|| vec![base.gamma]);
        let mut eps = self.eps_pairs.clone().unwrap_or_default();
        if let Some(values) = &self.eps_values {
            eps.extend(unordered_pairs(values));
        }
        if eps.is_empty() {
            eps.push((base.eps0, base.eps1));
        }
        let mut out = Vec::with_capacity(ks.len() * gammas.len() * eps.len());
        for &k in &ks {
            for &gamma in &gammas {
                for &(eps0, eps1) in &eps {
                    out.push(SweepSetting { k, gamma, eps0, eps1 });
                }
            }
        }
        Ok(out)
    }
}

/// Seed of the `index`-th repetition. It depends only on the base seed and
/// the index, so every setting sees the same data and splits per repetition.
pub fn sweep_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, &[Stream::Sweep as u64, index as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: usize,
    #[serde(flatten)]
    pub params: SweepSetting,
    pub seed_index: usize,
    pub seed: u64,
    pub auc_clean: f64,
    pub auc_perturbed: f64,
    /// The metric chosen by the base config's `eval_mode`.
    pub auc: f64,
    pub eps_cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub setting: usize,
    #[serde(flatten)]
    pub params: SweepSetting,
    pub seed_index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs every setting for every seed, each in `out_dir/runs/<name>/`, and
/// writes `sweep.csv` (one row per setting per seed) and `failures.csv`.
/// A failing run is recorded and the sweep carries on.
pub fn sweep(cfg: &ExperimentConfig, grid: &SweepGrid) -> Result<SweepOutcome> {
    let settings = grid.settings(&cfg.train)?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir.join("runs")).map_err(|e| Error::io(dir, e))?;

    let jobs: Vec<(usize, SweepSetting, usize)> = settings
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..grid.seeds).map(move |r| (i, *s, r)))
        .collect();
    let results: Vec<std::result::Result<SweepRow, SweepFailure>> = jobs
        .par_iter()
        .map(|&(setting, params, seed_index)| {
            let seed = sweep_seed(cfg.train.seed, seed_index);
            let run_cfg = ExperimentConfig {
                data: cfg.data.clone(),
                train: TrainConfig {
                    seed,
                    ..params.apply(&cfg.train)
                },
                out_dir: dir.join("runs").join(params.dir_name(seed_index)),
            };
            match run(&run_cfg) {
                Ok(summary) => {
                    let last = summary.last();
                    Ok(SweepRow {
                        setting,
                        params,
                        seed_index,
                        seed,
                        auc_clean: last.map_or(f64::NAN, |r| r.auc_clean),
                        auc_perturbed: last.map_or(f64::NAN, |r| r.auc_perturbed),
                        auc: summary.final_auc.unwrap_or(f64::NAN),
                        eps_cumulative: last.map_or(0.0, |r| r.eps_cumulative),
                    })
                }
                Err(e) => Err(SweepFailure {
                    setting,
                    params,
                    seed_index,
                    seed,
                    error: e.to_string(),
                }),
            }
        })
        .collect();

    let mut outcome = SweepOutcome::default();
    for r in results {
        match r {
            Ok(row) => outcome.rows.push(row),
            Err(f) => outcome.failures.push(f),
        }
    }

    let mut table = format!("{SWEEP_HEADER}\n");
    for r in &outcome.rows {
        let p = r.params;
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.setting, p.k, p.gamma, p.eps0, p.eps1, r.seed_index, r.seed, r.auc_clean, r.auc_perturbed, r.auc,
            r.eps_cumulative
        ));
    }
    write_text(&dir.join("sweep.csv"), &table)?;
    let mut failures = format!("{FAILURES_HEADER}\n");
    for f in &outcome.failures {
        let p = f.params;
        failures.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            f.setting,
            p.k,
            p.gamma,
            p.eps0,
            p.eps1,
            f.seed_index,
            f.seed,
            csv_field(&f.error)
        ));
    }
    write_text(&dir.join("failures.csv"), &failures)?;
    Ok(outcome)
}

/// Verdict for one budget over all reference pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpVerification {
    pub epsilon: f64,
    pub pass: bool,
    /// Largest ratio over all pairs.
    pub max_ratio: f64,
    pub bound: f64,
    pub checks: Vec<DpCheckReport>,
}

/// Reference adjacent pairs on three nodes: adding the closing edge of a
/// wedge, and adding the only edge to an empty graph.
pub fn reference_pairs() -> Vec<(GraphInstance, GraphInstance)> {
    let empty = |edges: &[(usize, usize)]| {
        GraphInstance::new(0, 3, edges.iter().copied(), Tensor::filled(3, 1, 1.0), vec![0], vec![true])
            .expect("static graph is valid")
    };
    vec![canonical_adjacent_pair(), (empty(&[]), empty(&[(1, 2)]))]
}

/// Runs the histogram ratio check for every budget in `epsilons`.
pub fn verify_dp(epsilons: &[f64], samples: usize, seed: u64) -> Result<Vec<DpVerification>> {
    if epsilons.is_empty() {
        return Err(config_err("epsilon", "need at least one value"));
    }
    if let Some(bad) = epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(config_err("epsilon", format!("must be finite and > 0, got {bad}")));
    }
    if samples == 0 {
        return Err(config_err("samples", "must be at least 1"));
    }
    let pairs = reference_pairs();
    epsilons
        .iter()
        .map(|&epsilon| {
            let cfg = DpCheckConfig {
                seed,
                ..DpCheckConfig::new(epsilon, samples)
            };
            let checks = pairs
                .iter()
                .map(|(a, b)| dp_ratio_check(a, b, &cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(DpVerification {
                epsilon,
                pass: checks.iter().all(|c| c.pass),
                max_ratio: checks.iter().map(|c| c.max_ratio).fold(0.0, f64::max),
                bound: cfg.bound(),
                checks,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Synthetic(SyntheticSpec {
                n_graphs: 20,
                min_nodes: 3,
                max_nodes: 5,
                feature_dim: 3,
                ..SyntheticSpec::default()
            }),
            train: TrainConfig {
                clients: 2,
                sampled: 1,
                rounds: 2,
                hidden: 4,
                k: 2,
                cap_n: 5,
                ..TrainConfig::default()
            },
            out_dir: PathBuf::from("unused"),
        }
    }

    #[test]
    fn unordered_pairs_count() {
        assert_eq!(unordered_pairs(&[0.1, 1.0, 10.0, 100.0]).len(), 10);
        assert_eq!(unordered_pairs(&[1.0]), vec![(1.0, 1.0)]);
    }

    #[test]
    fn grid_cardinality() {
        let base = TrainConfig::default();
        let grid = SweepGrid {
            k: Some(vec![1, 5, 10, 20, 30, 40, 50]),
            seeds: 3,
            ..SweepGrid::default()
        };
        assert_eq!(grid.settings(&base).unwrap().len(), 7);
        let grid = SweepGrid {
            gamma: Some(vec![0.001, 0.01, 0.1, 1.0]),
            ..SweepGrid::default()
        };
        assert_eq!(grid.settings(&base).unwrap().len(), 4);
        let grid = SweepGrid {
            eps_values: Some(vec![0.1, 1.0, 10.0, 100.0]),
            ..SweepGrid::default()
        };
        assert_eq!(grid.settings(&base).unwrap().len(), 10);
        let empty = SweepGrid {
            k: Some(vec![]),
            ..SweepGrid::default()
        };
        assert!(empty.settings(&base).is_err());
    }

    #[test]
    fn config_round_trip_and_summary_form() {
        let cfg = tiny();
        let back = ExperimentConfig::from_value(cfg.to_value()).unwrap();
        assert_eq!(back, cfg);
        let wrapped = serde_json::json!({ "config": cfg.to_value(), "warnings": [] });
        assert_eq!(ExperimentConfig::from_value(wrapped).unwrap(), cfg);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = ExperimentConfig::from_json(r#"{"gamme": 0.1}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "gamme"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"dataset": "a", "synthetic": {}}"#).unwrap_err();
        assert!(err.is_usage());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = tiny();
        Overrides {
            gamma: Some(0.5),
            encoder: Some(EncoderKind::Tag),
            seed: Some(7),
            ..Overrides::default()
        }
        .apply(&mut cfg);
        assert_eq!(cfg.train.gamma, 0.5);
        assert_eq!(cfg.train.encoder, EncoderKind::Tag);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.k, 2);
    }

    #[test]
    fn run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            out_dir: dir.path().to_path_buf(),
            ..tiny()
        };
        let summary = run(&cfg).unwrap();
        assert_eq!(summary.rounds_completed, 2);
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 1 + 2);
        let ck = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
        assert_eq!(ck.round, 2);
        let again = RunSummary::load(&dir.path().join("summary.json")).unwrap();
        assert_eq!(again, summary);
    }

    #[test]
    fn verify_dp_rejects_zero() {
        assert!(verify_dp(&[0.0], 10, 0).unwrap_err().is_usage());
        assert!(verify_dp(&[], 10, 0).unwrap_err().is_usage());
        let r = verify_dp(&[1.0], 20_000, 0).unwrap();
        assert_eq!(r[0].checks.len(), 2);
        assert!(r[0].max_ratio >= 1.0);
    }
}

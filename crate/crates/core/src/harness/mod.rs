//! Run configuration, run directories, evaluation, ablations, plots and the
//! command-line front end.
//!
//! A run directory holds:
//!
//! - `config.resolved.json`: the configuration after defaulting and mode
//!   resolution; feeding it back reproduces the run
//! - `metrics.csv`: one row per peer per epoch
//! - `checkpoints/last.ckpt`: state after the latest finished epoch
//! - `summary.json`: final per-peer and ensemble accuracy

pub mod cli;
pub mod eval;
pub mod plot;
pub mod selftest;

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use eval::{evaluate, evaluate_ensemble, EnsembleRule};

use crate::datasets::{Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::losses::DistillConfig;
use crate::models::{Arch, Checkpoint};
use crate::trainer::{self, MetricRow, OptimConfig, TrainConfig, TrainState};

pub const CONFIG_FILE: &str = "config.resolved.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// Which parts of the framework a run switches on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Cut^nMix, mutual logit loss, feature MMD and the peer teacher.
    #[default]
    Ours,
    /// Mutual learning on distorted but unmixed inputs.
    Dml,
    /// One network trained with CutMix.
    CutmixSolo,
    /// One network, hard labels, no mixing.
    Baseline,
    /// Cut^nMix with the mutual logit loss only.
    AblationNone,
    /// Cut^nMix, mutual loss and MMD.
    AblationMmd,
    /// Cut^nMix, mutual loss and the peer teacher.
    AblationPt,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Ours,
        Mode::Dml,
        Mode::CutmixSolo,
        Mode::Baseline,
        Mode::AblationNone,
        Mode::AblationMmd,
        Mode::AblationPt,
    ];

    /// Ablation rows in toggle-matrix order: Cut^nMix alone, then MMD, then
    /// the peer teacher, then everything.
    pub const ABLATION: [Mode; 4] = [Mode::AblationNone, Mode::AblationMmd, Mode::AblationPt, Mode::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Ours => "ours",
            Mode::Dml => "dml",
            Mode::CutmixSolo => "cutmix-solo",
            Mode::Baseline => "baseline",
            Mode::AblationNone => "ablation-none",
            Mode::AblationMmd => "ablation-mmd",
            Mode::AblationPt => "ablation-pt",
        }
    }

    /// `(mixing, mmd, peer teacher)` switches.
    pub fn toggles(self) -> (bool, bool, bool) {
        match self {
            Mode::Ours => (true, true, true),
            Mode::Dml | Mode::Baseline => (false, false, false),
            Mode::CutmixSolo | Mode::AblationNone => (true, false, false),
            Mode::AblationMmd => (true, true, false),
            Mode::AblationPt => (true, false, true),
        }
    }

    fn single_network(self) -> bool {
        matches!(self, Mode::CutmixSolo | Mode::Baseline)
    }

    /// Applies the mode's switches to `distill`. Idempotent.
    pub fn resolve(self, distill: &DistillConfig) -> DistillConfig {
        let (_, mmd, pt) = self.toggles();
        let mut d = *distill;
        if self.single_network() {
            d.num_peers = 1;
            d.alpha = 0.0;
        }
        if !mmd {
            d.beta = 0.0;
        }
        if !pt {
            d.gamma = 0.0;
        }
        d
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
                Error::Configuration(format!("unknown mode `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// A complete, serialisable experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub arch: Arch,
    pub mode: Mode,
    pub distill: DistillConfig,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    /// Seeds used by `ablate`.
    pub seeds: Vec<u64>,
    pub ensemble: EnsembleRule,
    /// Update peers one after another instead of simultaneously.
    pub alternating: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            arch: Arch::TinyCnn,
            mode: Mode::Ours,
            distill: DistillConfig::default(),
            optim: OptimConfig::default(),
            batch_size: 128,
            eval_batch_size: 500,
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            ensemble: EnsembleRule::MeanSoftmax,
            alternating: false,
            out: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&raw)?)
    }

    /// The trainer's view of this run, for a dataset with `num_classes`.
    pub fn train_config(&self, num_classes: usize) -> TrainConfig {
        let (mixing, _, pt) = self.mode.toggles();
        TrainConfig {
            arch: self.arch,
            num_classes,
            distill: self.mode.resolve(&self.distill),
            optim: self.optim.clone(),
            batch_size: self.batch_size,
            eval_batch_size: self.eval_batch_size,
            seed: self.seed,
            mixing,
            base_distortion: true,
            train_teacher: pt,
            alternating: self.alternating,
        }
    }

    /// The configuration as it will be persisted: mode switches applied and
    /// the dataset's normalisation filled in.
    pub fn resolved(&self, dataset: DatasetSpec) -> Self {
        Self {
            dataset,
            distill: self.mode.resolve(&self.distill),
            ..self.clone()
        }
    }
}

/// Final accuracies of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub peer_acc: Vec<f64>,
    pub mean_peer_acc: f64,
    pub ensemble_acc: f64,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_metrics(path: &Path, rows: &[MetricRow], header: bool, append: bool) -> Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(file);
    if header && rows.is_empty() {
        w.write_record(["epoch", "peer", "ce", "dml", "mmd", "pt", "total", "train_acc", "test_acc", "lr"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a metrics log back.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Summarises a finished state on the test split.
pub fn summarize(cfg: &RunConfig, state: &TrainState, data: &Dataset) -> Result<RunSummary> {
    let test = data.test_batches(cfg.eval_batch_size)?;
    let peer_acc = state
        .peers
        .iter()
        .map(|p| evaluate(p, &test))
        .collect::<Result<Vec<_>>>()?;
    let mean_peer_acc = peer_acc.iter().sum::<f64>() / peer_acc.len() as f64;
    Ok(RunSummary {
        mode: cfg.mode,
        seed: cfg.seed,
        epochs: state.epoch,
        peer_acc,
        mean_peer_acc,
        ensemble_acc: evaluate_ensemble(&state.peers, &test, cfg.ensemble)?,
    })
}

/// Trains `cfg` into `cfg.out`. With `resume`, continues from the last
/// checkpoint in that directory if there is one.
pub fn run_train(cfg: &RunConfig, resume: bool) -> Result<RunSummary> {
    let (data, spec) = cfg.dataset.load()?;
    run_train_on(cfg, &data, spec, resume)
}

/// As [`run_train`] with the dataset already loaded; `spec` is its resolved
/// description.
pub fn run_train_on(cfg: &RunConfig, data: &Dataset, spec: DatasetSpec, resume: bool) -> Result<RunSummary> {
    let out = &cfg.out;
    let ck_dir = out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    let resolved = cfg.resolved(spec);
    let tcfg = resolved.train_config(data.num_classes);
    tcfg.validate()?;
    write_json(&out.join(CONFIG_FILE), &resolved)?;

    let metrics = out.join(METRICS_FILE);
    let ck_path = ck_dir.join(LAST_CHECKPOINT);
    let state = if resume && ck_path.exists() {
        let state = TrainState::from_checkpoint(&tcfg, &Checkpoint::load(&ck_path)?)?;
        log::info!("resuming {} at epoch {}", out.display(), state.epoch);
        Some(state)
    } else {
        None
    };
    let history = state.as_ref().map_or(&[][..], |s| &s.history[..]);
    write_metrics(&metrics, history, true, false)?;

    let state = trainer::train(&tcfg, data, state, |s, rows| {
        write_metrics(&metrics, rows, false, true)?;
        s.to_checkpoint(&tcfg)?.save(&ck_path)?;
        if let Some(r) = rows.first() {
            log::info!(
                "{} seed {} epoch {} peer0 test {:.4} loss {:.4}",
                resolved.mode,
                resolved.seed,
                r.epoch,
                r.test_acc,
                r.total
            );
        }
        Ok(())
    })?;
    let summary = summarize(&resolved, &state, data)?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Loads a finished run directory and re-evaluates it.
pub fn run_eval(dir: &Path) -> Result<RunSummary> {
    let cfg = RunConfig::from_json_file(&dir.join(CONFIG_FILE))?;
    let (data, _) = cfg.dataset.load()?;
    let tcfg = cfg.train_config(data.num_classes);
    let ck = Checkpoint::load(&dir.join(CHECKPOINT_DIR).join(LAST_CHECKPOINT))?;
    let state = TrainState::from_checkpoint(&tcfg, &ck)?;
    summarize(&cfg, &state, &data)
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub cutnmix: bool,
    pub mmd: bool,
    pub pt: bool,
    pub runs: Vec<RunSummary>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every `(mode, seed)` pair under `base.out/<mode>/seed-<s>`, using
/// up to `workers` threads. Results come back in `modes` order, then seed
/// order.
pub fn run_grid(base: &RunConfig, modes: &[Mode], seeds: &[u64], workers: usize) -> Result<Vec<Vec<RunSummary>>> {
    let (data, spec) = base.dataset.load()?;
    let jobs: Vec<(usize, usize)> = (0..modes.len())
        .flat_map(|m| (0..seeds.len()).map(move |s| (m, s)))
        .collect();
    let results: Mutex<Vec<Vec<Option<RunSummary>>>> = Mutex::new(vec![vec![None; seeds.len()]; modes.len()]);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(m, s)) = jobs.get(i) else { break };
                if first_error.lock().expect("poisoned").is_some() {
                    break;
                }
                let cfg = RunConfig {
                    mode: modes[m],
                    seed: seeds[s],
                    out: base.out.join(modes[m].name()).join(format!("seed-{}", seeds[s])),
                    ..base.clone()
                };
                match run_train_on(&cfg, &data, spec.clone(), false) {
                    Ok(r) => results.lock().expect("poisoned")[m][s] = Some(r),
                    Err(e) => {
                        first_error.lock().expect("poisoned").get_or_insert(e);
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("poisoned") {
        return Err(e);
    }
    Ok(results
        .into_inner()
        .expect("poisoned")
        .into_iter()
        .map(|row| row.into_iter().map(|r| r.expect("every job ran")).collect())
        .collect())
}

/// Runs the four ablation rows over `seeds` and writes `ablation.csv`.
pub fn ablate(base: &RunConfig, seeds: &[u64], workers: usize) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Configuration("ablation needs at least one seed".into()));
    }
    let grid = run_grid(base, &Mode::ABLATION, seeds, workers)?;
    let rows: Vec<AblationRow> = Mode::ABLATION
        .iter()
        .zip(grid)
        .map(|(&mode, runs)| {
            let accs: Vec<f64> = runs.iter().map(|r| r.mean_peer_acc).collect();
            let (mean, std) = mean_std(&accs);
            let (cutnmix, mmd, pt) = mode.toggles();
            AblationRow { mode, cutnmix, mmd, pt, runs, mean, std }
        })
        .collect();
    let path = base.out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["mode", "cutnmix", "mmd", "pt", "mean_acc", "std_acc", "runs"])?;
    for r in &rows {
        w.write_record([
            r.mode.name().to_string(),
            r.cutnmix.to_string(),
            r.mmd.to_string(),
            r.pt.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.std),
            r.runs.len().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

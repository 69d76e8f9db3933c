//! Command-line front end: layered configuration (defaults, TOML file,
//! `--set` overrides) and the subcommands wiring it to the pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::counterexamples::{self, CertificationReport, CounterexampleConfig, Kind};
use crate::diagnostics::DiagnosticConfig;
use crate::error::{Error, Result};
use crate::eval::{self, CheckpointStore, CsvHeader, EvalPlan, RunEval, Testbed, TrainRunConfig};
use crate::seeds::derive_seed;
use crate::tasks::{self, MnistDataset, ScrConfig, Task};

pub const WORKERS_ENV: &str = "PLASTICITY_WORKERS";

/// Exit statuses.
pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CERTIFY_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "plasticity", version, about = "Trainability diagnostics for continually trained networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file with dotted sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set net.hidden=[5,5]`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    pub out: PathBuf,
    /// Root seed; every other seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct StoreArgs {
    /// Directory of trained runs (defaults to `<out>/runs`).
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train continual-learning runs and store their checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Diagnostics for every (checkpoint, validation task) cell.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// k-step gains for every (checkpoint, validation task) cell.
    Gain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Diagnostics, gains and pairwise ranking accuracy.
    Rank {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Ranking accuracy of OR estimated on validation subsets.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Certify the stuck-checkpoint constructions and random-init escape.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = Kind::from_str)]
        kind: Kind,
        #[arg(long)]
        n: Option<usize>,
        /// Hidden width.
        #[arg(long = "M")]
        width: Option<usize>,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Train { common }
            | Command::Diagnose { common, .. }
            | Command::Gain { common, .. }
            | Command::Rank { common, .. }
            | Command::Ablate { common, .. }
            | Command::Certify { common, .. } => common,
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub train: TrainSection,
    pub net: NetSection,
    pub scr: ScrSection,
    pub mnist: MnistSection,
    pub val: ValSection,
    pub diag: DiagnosticConfig,
    pub gain: GainSection,
    pub ablate: AblateSection,
    pub certify: CounterexampleConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub testbed: Testbed,
    pub n_runs: usize,
    /// Testbed default when unset.
    pub n_tasks: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub hidden: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScrSection {
    pub u: usize,
    pub v: usize,
    pub n_per_task: usize,
    pub ltu: tasks::LtuConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnistSection {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Leading images used for training; 0 keeps all.
    pub train_subset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValSection {
    pub n_tasks: Option<usize>,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainSection {
    pub k_list: Vec<usize>,
    pub eta: f64,
    pub m: usize,
    pub rollouts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub fractions: Option<Vec<f64>>,
    pub batches: usize,
    pub batch_size: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            train: TrainSection::default(),
            net: NetSection::default(),
            scr: ScrSection::default(),
            mnist: MnistSection::default(),
            val: ValSection::default(),
            diag: DiagnosticConfig::default(),
            gain: GainSection::default(),
            ablate: AblateSection::default(),
            certify: CounterexampleConfig::default(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            testbed: Testbed::Scr,
            n_runs: 20,
            n_tasks: None,
            lr: None,
            batch_size: 1,
            checkpoint_every: 5,
        }
    }
}

impl Default for ScrSection {
    fn default() -> Self {
        let d = ScrConfig::default();
        Self {
            u: d.u,
            v: d.v,
            n_per_task: d.n_per_task,
            ltu: d.ltu,
        }
    }
}

impl Default for MnistSection {
    fn default() -> Self {
        Self {
            images: PathBuf::from("data/mnist/train-images-idx3-ubyte.gz"),
            labels: PathBuf::from("data/mnist/train-labels-idx1-ubyte.gz"),
            train_subset: 0,
        }
    }
}

impl Default for ValSection {
    fn default() -> Self {
        Self {
            n_tasks: None,
            n_samples: 10_000,
        }
    }
}

impl Default for GainSection {
    fn default() -> Self {
        Self {
            k_list: vec![1, 10, 100],
            eta: 1e-3,
            m: 4,
            rollouts: 128,
        }
    }
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            fractions: None,
            batches: 16,
            batch_size: 1,
        }
    }
}

impl Config {
    /// Fills testbed-dependent defaults.
    pub fn resolved(mut self) -> Self {
        let base = match self.train.testbed {
            Testbed::Scr => TrainRunConfig::scr(),
            Testbed::Pmnist => TrainRunConfig::pmnist(),
        };
        self.train.n_tasks.get_or_insert(base.n_tasks);
        self.train.lr.get_or_insert(base.lr);
        self.net.hidden.get_or_insert(base.hidden);
        self.val.n_tasks.get_or_insert(match self.train.testbed {
            Testbed::Scr => 30,
            Testbed::Pmnist => 10,
        });
        self.ablate.fractions.get_or_insert(match self.train.testbed {
            Testbed::Scr => vec![0.1, 0.01, 0.001],
            Testbed::Pmnist => vec![0.1, 0.01],
        });
        self
    }

    /// Layers a TOML document and `key=value` overrides over the defaults.
    /// Unknown keys and ill-typed values are reported by dotted key.
    pub fn load(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut user = match text {
            Some(t) => toml::from_str::<toml::Table>(t).map_err(|e| Error::Config(format!("config file: {}", e.message())))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
            set_dotted(&mut user, key.trim(), parse_value(raw.trim()))?;
        }
        let known = to_table(&Config::default().resolved());
        let mut leaves = Vec::new();
        collect_leaves(&user, "", &mut leaves);
        for (key, _) in &leaves {
            if lookup(&known, key).is_none() {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
        }
        match Config::deserialize(toml::Value::Table(user.clone())) {
            Ok(c) => Ok(c.resolved()),
            Err(e) => {
                for (key, value) in &leaves {
                    let mut probe = toml::Table::new();
                    set_dotted(&mut probe, key, value.clone())?;
                    if let Err(e) = Config::deserialize(toml::Value::Table(probe)) {
                        return Err(Error::Config(format!("config key `{key}`: {}", e.message())));
                    }
                }
                Err(Error::Config(e.message().to_string()))
            }
        }
    }

    /// `key = value` pairs of the resolved configuration in key order.
    pub fn flattened(&self) -> Vec<(String, String)> {
        let mut leaves = Vec::new();
        collect_leaves(&to_table(self), "", &mut leaves);
        leaves.into_iter().map(|(k, v)| (k, v.to_string())).collect()
    }

    pub fn header(&self) -> CsvHeader {
        CsvHeader::new(self.seed, self.flattened())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn train_run(&self, run: usize) -> TrainRunConfig {
        TrainRunConfig {
            testbed: self.train.testbed,
            hidden: self.net.hidden.clone().expect("resolved"),
            lr: self.train.lr.expect("resolved"),
            batch_size: self.train.batch_size,
            n_tasks: self.train.n_tasks.expect("resolved"),
            checkpoint_every: self.train.checkpoint_every,
            seed: run_seed(self.seed, run),
        }
    }

    pub fn scr_run(&self, run: usize) -> ScrConfig {
        ScrConfig {
            u: self.scr.u,
            v: self.scr.v,
            n_per_task: self.scr.n_per_task,
            n_tasks: self.train.n_tasks.expect("resolved"),
            seed: run_seed(self.seed, run),
            ltu: self.scr.ltu.clone(),
        }
    }

    pub fn plan(&self) -> EvalPlan {
        let mut plan = EvalPlan::new(self.gain.k_list.clone(), self.seed);
        plan.diag = self.diag.clone();
        plan.gain.eta = self.gain.eta;
        plan.gain.m = self.gain.m;
        plan.gain.rollouts = self.gain.rollouts;
        plan
    }

    pub fn ablation(&self) -> eval::AblationConfig {
        eval::AblationConfig {
            fractions: self.ablate.fractions.clone().expect("resolved"),
            batches: self.ablate.batches,
            batch_size: self.ablate.batch_size,
        }
    }
}

pub fn run_seed(root: u64, run: usize) -> u64 {
    derive_seed(root, "train-run", run as u64)
}

pub fn run_id(run: usize) -> String {
    format!("run-{run:02}")
}

fn to_table<T: Serialize>(v: &T) -> toml::Table {
    toml::Table::try_from(v).expect("config serializes to a table")
}

/// TOML literal when it parses as one, bare string otherwise.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty config key `{key}`")))?;
    let mut t = table;
    for p in parts {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("config key `{key}`: `{p}` is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn collect_leaves(t: &toml::Table, prefix: &str, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in t {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(sub) => collect_leaves(sub, &key, out),
            _ => out.push((key, v.clone())),
        }
    }
}

fn lookup<'a>(t: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut v = t.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

// ---------------------------------------------------------------------------
// Running

/// Outcome of a subcommand: the files written and the exit status.
#[derive(Debug, PartialEq)]
pub struct Outcome {
    pub status: i32,
    pub written: Vec<PathBuf>,
    pub message: String,
}

pub fn load_config(common: &Common) -> Result<Config> {
    let text = match &common.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?),
        None => None,
    };
    let mut cfg = Config::load(text.as_deref(), &common.overrides)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn run(command: &Command) -> Result<Outcome> {
    let common = command.common();
    let mut cfg = load_config(common)?;
    if let Command::Certify { n, width, .. } = command {
        if let Some(n) = n {
            cfg.certify.n = *n;
        }
        if let Some(m) = width {
            cfg.certify.width = *m;
        }
    }
    let out = &common.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_path = out.join("config.resolved.toml");
    let header = cfg.header();
    let resolved = format!(
        "# tool: {}\n# config_hash: {}\n# root_seed: {}\n{}",
        eval::TOOL_VERSION,
        header.config_hash,
        cfg.seed,
        cfg.to_toml()
    );
    fs::write(&config_path, resolved).map_err(|e| Error::io(&config_path, e))?;
    let mut outcome = match command {
        Command::Train { .. } => train(&cfg, out)?,
        Command::Diagnose { store, .. } => diagnose(&cfg, out, &store_dir(out, store))?,
        Command::Gain { store, .. } => gains(&cfg, out, &store_dir(out, store))?,
        Command::Rank { store, .. } => rank(&cfg, out, &store_dir(out, store), false)?,
        Command::Ablate { store, .. } => rank(&cfg, out, &store_dir(out, store), true)?,
        Command::Certify { kind, .. } => certify(&cfg, out, *kind)?,
    };
    outcome.written.insert(0, config_path);
    Ok(outcome)
}

fn store_dir(out: &Path, args: &StoreArgs) -> PathBuf {
    args.store.clone().unwrap_or_else(|| out.join("runs"))
}

fn load_mnist(cfg: &Config) -> Result<MnistDataset> {
    tasks::load_mnist_idx(&cfg.mnist.images, &cfg.mnist.labels)
}

fn train(cfg: &Config, out: &Path) -> Result<Outcome> {
    let header = cfg.header();
    let base = match cfg.train.testbed {
        Testbed::Pmnist => {
            let all = load_mnist(cfg)?;
            Some(match cfg.mnist.train_subset {
                0 => all,
                n => all.head(n),
            })
        }
        Testbed::Scr => None,
    };
    let runs_dir = out.join("runs");
    let mut written = Vec::new();
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for r in 0..cfg.train.n_runs {
        let tr = cfg.train_run(r);
        let id = run_id(r);
        let store = match &base {
            None => eval::train_scr(&tr, &cfg.scr_run(r), &id)?,
            Some(b) => eval::train_pmnist(&tr, b, &id)?,
        };
        if let Some(why) = &store.aborted {
            notes.push(format!("{id} aborted: {why}"));
        }
        let dir = runs_dir.join(&id);
        eval::save_store(&store, &dir, &header)?;
        written.push(dir);
        for (t, l) in store.learning_curve.iter().enumerate() {
            rows.push(vec![id.clone(), t.to_string(), crate::diagnostics::fmt_f64(*l)]);
        }
        notes.push(format!("{id}: {} checkpoints", store.len()));
    }
    let curve = out.join("learning_curve.csv");
    eval::write_csv(&curve, &header, &["run", "task_index", "mean_loss"], &rows)?;
    written.push(curve);
    Ok(Outcome {
        status: EXIT_OK,
        written,
        message: notes.join("\n"),
    })
}

/// Every run under `dir`, in name order.
pub fn load_runs(dir: &Path) -> Result<Vec<CheckpointStore>> {
    let entries = fs::read_dir(dir).map_err(|_| Error::Config(format!("checkpoint store {} does not exist; run `train` first", dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(eval::STORE_MANIFEST).is_file())
        .collect();
    dirs.sort();
    let stores = dirs.iter().map(|d| eval::load_store(d)).collect::<Result<Vec<_>>>()?;
    if stores.iter().all(|s| s.is_empty()) {
        return Err(Error::Config(format!("checkpoint store {} is empty", dir.display())));
    }
    Ok(stores)
}

/// Validation tasks for the run at position `run`: SCR tasks share that
/// run's target network; P-MNIST tasks are fresh permutations.
pub fn validation_tasks(cfg: &Config, run: usize, mnist: Option<&MnistDataset>) -> Result<Vec<Task>> {
    let n = cfg.val.n_tasks.expect("resolved");
    (0..n)
        .map(|j| {
            let val_seed = derive_seed(cfg.seed, "val", j as u64);
            match (cfg.train.testbed, mnist) {
                (Testbed::Scr, _) => tasks::scr_validation_task(&cfg.scr_run(run), val_seed, cfg.val.n_samples),
                (Testbed::Pmnist, Some(m)) => eval::pmnist_validation_task(m, val_seed, cfg.val.n_samples),
                (Testbed::Pmnist, None) => Err(Error::InvalidArgument("P-MNIST validation needs MNIST data".into())),
            }
        })
        .collect()
}

fn run_index(store: &CheckpointStore) -> Result<usize> {
    store
        .run_id
        .strip_prefix("run-")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("unexpected run id `{}`", store.run_id)))
}

struct Loaded {
    stores: Vec<CheckpointStore>,
    val: Vec<Vec<Task>>,
}

impl Loaded {
    fn new(cfg: &Config, dir: &Path) -> Result<Self> {
        let stores = load_runs(dir)?;
        let mnist = match cfg.train.testbed {
            Testbed::Pmnist => Some(load_mnist(cfg)?),
            Testbed::Scr => None,
        };
        let val = stores
            .iter()
            .map(|s| validation_tasks(cfg, run_index(s)?, mnist.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stores, val })
    }

    fn runs(&self) -> Vec<RunEval<'_>> {
        self.stores
            .iter()
            .zip(&self.val)
            .filter(|(s, _)| !s.is_empty())
            .map(|(store, val_tasks)| RunEval { store, val_tasks })
            .collect()
    }
}

fn failures<T>(cells: &[eval::Cell<T>]) -> String {
    let n = cells.iter().filter(|c| c.outcome.is_err()).count();
    if n == 0 {
        format!("{} cells", cells.len())
    } else {
        format!("{} cells, {n} failed", cells.len())
    }
}

fn diagnose(cfg: &Config, out: &Path, dir: &Path) -> Result<Outcome> {
    let loaded = Loaded::new(cfg, dir)?;
    let plan = cfg.plan();
    let cells = eval::sweep_cells(&loaded.runs(), |run, i, ck, task| eval::diagnose_cell(run, i, ck, task, &plan))?;
    let rows = cells
        .iter()
        .filter_map(|c| {
            let rep = c.outcome.as_ref().ok()?;
            let mut row = vec![c.run.clone()];
            row.extend(rep.csv_record());
            Some(row)
        })
        .collect::<Vec<_>>();
    let path = out.join("metrics.csv");
    eval::write_csv(&path, &cfg.header(), &eval::EvalTables::metric_columns(), &rows)?;
    Ok(Outcome {
        status: EXIT_OK,
        written: vec![path],
        message: failures(&cells),
    })
}

fn gains(cfg: &Config, out: &Path, dir: &Path) -> Result<Outcome> {
    let loaded = Loaded::new(cfg, dir)?;
    let plan = cfg.plan();
    let cells = eval::sweep_cells(&loaded.runs(), |run, _, ck, task| eval::gain_cell(run, ck, task, &plan))?;
    let mut rows = Vec::new();
    for c in &cells {
        if let Ok(gs) = &c.outcome {
            for g in gs {
                let mut row = vec![c.run.clone()];
                row.extend(g.csv_record(&c.label, &c.task));
                rows.push(row);
            }
        }
    }
    let path = out.join("gains.csv");
    eval::write_csv(&path, &cfg.header(), &eval::EvalTables::gain_columns(), &rows)?;
    Ok(Outcome {
        status: EXIT_OK,
        written: vec![path],
        message: failures(&cells),
    })
}

fn rank(cfg: &Config, out: &Path, dir: &Path, ablate: bool) -> Result<Outcome> {
    let loaded = Loaded::new(cfg, dir)?;
    let plan = cfg.plan();
    let runs = loaded.runs();
    let tables = eval::evaluate_checkpoints(&runs, &plan)?;
    let header = cfg.header();
    let mut written = tables.write_all(out, &header)?;
    let mut lines: Vec<String> = tables
        .rankings
        .iter()
        .map(|r| format!("{:<20} k={:<4} {:.4} ± {:.4}", r.metric, r.k, r.accuracy, r.std_error))
        .collect();
    if ablate {
        let rows = eval::subsample_ablation(&runs, &tables, &cfg.ablation(), &plan)?;
        let path = out.join("ablation.csv");
        eval::write_csv(&path, &header, &eval::ABLATION_COLUMNS, &eval::ablation_rows(&rows))?;
        written.push(path);
        lines.extend(rows.iter().map(|r| {
            format!(
                "or@{:<8} k={:<4} {:.4} ± {:.4}",
                r.fraction, r.ranking.k, r.ranking.accuracy, r.ranking.std_error
            )
        }));
    }
    lines.push(failures(&tables.cells));
    Ok(Outcome {
        status: EXIT_OK,
        written,
        message: lines.join("\n"),
    })
}

fn certify(cfg: &Config, out: &Path, kind: Kind) -> Result<Outcome> {
    let report: CertificationReport = counterexamples::certify(&cfg.certify, kind)?;
    let header = cfg.header();
    let stem = format!("certify-{}", kind.name());
    let csv_path = out.join(format!("{stem}.csv"));
    eval::write_csv(&csv_path, &header, &CertificationReport::CSV_COLUMNS, &report.csv_records())?;
    let text = report.to_text();
    let txt_path = out.join(format!("{stem}.txt"));
    let stamped = format!(
        "# tool: {}\n# config_hash: {}\n# root_seed: {}\n{text}",
        eval::TOOL_VERSION,
        header.config_hash,
        cfg.seed
    );
    fs::write(&txt_path, stamped).map_err(|e| Error::io(&txt_path, e))?;
    Ok(Outcome {
        status: if report.deterministic_pass() { EXIT_OK } else { EXIT_CERTIFY_FAILED },
        written: vec![csv_path, txt_path],
        message: text,
    })
}

/// Worker count from the environment, if set.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_ERROR,
    }
}

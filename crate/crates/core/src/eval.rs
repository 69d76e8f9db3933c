//! Experiment pipeline: continual training with checkpointing, metric and
//! gain sweeps over (checkpoint × validation task) cells, pairwise ranking
//! accuracy, the subsampling ablation, and on-disk artifacts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::seq::index;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diagnostics::{self, fmt_f64, DiagnosticConfig, DiagnosticReport, ReliabilityMode};
use crate::error::{Error, Result};
use crate::gain::{self, GainConfig, GainEstimate};
use crate::net::{self, AdamState, Checkpoint, CheckpointMeta, LossKind, MlpSpec};
use crate::seeds::{derive_seed, fingerprint, rng_for};
use crate::tasks::{self, MnistDataset, ScrConfig, Task};

pub const TOOL_VERSION: &str = concat!("plasticity ", env!("CARGO_PKG_VERSION"));

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Testbed {
    Scr,
    Pmnist,
}

impl Testbed {
    pub fn loss(&self) -> LossKind {
        match self {
            Testbed::Scr => LossKind::MseHalf,
            Testbed::Pmnist => LossKind::CrossEntropy,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Testbed::Scr => "scr",
            Testbed::Pmnist => "pmnist",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub testbed: Testbed,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub n_tasks: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl TrainRunConfig {
    /// Two hidden layers of 5, Adam at 0.01, 1000 tasks.
    pub fn scr() -> Self {
        Self {
            testbed: Testbed::Scr,
            hidden: vec![5, 5],
            lr: 0.01,
            batch_size: 1,
            n_tasks: 1_000,
            checkpoint_every: 5,
            seed: 0,
        }
    }

    /// Three hidden layers of 100, Adam at 0.003, 800 tasks.
    pub fn pmnist() -> Self {
        Self {
            testbed: Testbed::Pmnist,
            hidden: vec![100, 100, 100],
            lr: 0.003,
            batch_size: 1,
            n_tasks: 800,
            checkpoint_every: 5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.checkpoint_every == 0 || self.batch_size == 0 || self.n_tasks == 0 {
            return Err(Error::InvalidArgument(
                "checkpoint_every, batch_size and n_tasks must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn spec(&self, input_dim: usize, output_dim: usize) -> MlpSpec {
        MlpSpec::new(input_dim, self.hidden.clone(), output_dim, true)
    }

    /// Checkpoints a full run produces, counting the initial model.
    pub fn expected_checkpoints(&self) -> usize {
        self.n_tasks / self.checkpoint_every + 1
    }
}

/// Checkpoints of one training run plus its per-task online loss.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointStore {
    pub run_id: String,
    pub checkpoints: Vec<Checkpoint>,
    /// Mean pre-update loss over each task's training samples.
    pub learning_curve: Vec<f64>,
    /// Set when training stopped early on a non-finite loss.
    pub aborted: Option<String>,
}

impl CheckpointStore {
    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }
}

/// Online training on a task stream: one Adam step per minibatch of
/// consecutive samples, a checkpoint every `checkpoint_every` tasks and one
/// before training.
pub fn train_sequence(
    cfg: &TrainRunConfig,
    spec: &MlpSpec,
    run_id: &str,
    stream: impl IntoIterator<Item = Result<Dataset>>,
) -> Result<CheckpointStore> {
    cfg.validate()?;
    let loss = cfg.testbed.loss();
    let mut ck = net::init_mlp(spec, derive_seed(cfg.seed, "init", 0))?;
    ck.meta.run_id = run_id.to_string();
    ck.meta.seed = cfg.seed;
    let mut store = CheckpointStore {
        run_id: run_id.to_string(),
        checkpoints: vec![ck.clone()],
        learning_curve: Vec::with_capacity(cfg.n_tasks),
        aborted: None,
    };
    let mut adam = AdamState::new(ck.theta.len(), cfg.lr);
    let mut stream = stream.into_iter();
    for t in 0..cfg.n_tasks {
        let data = stream
            .next()
            .ok_or_else(|| Error::InvalidArgument(format!("task stream ended after {t} tasks")))??;
        if data.is_empty() {
            return Err(Error::InvalidArgument(format!("training task {t} is empty")));
        }
        let mut total = 0.0;
        let mut idx = Vec::with_capacity(cfg.batch_size);
        let mut start = 0;
        while start < data.len() {
            let end = (start + cfg.batch_size).min(data.len());
            idx.clear();
            idx.extend(start..end);
            let (l, g) = net::loss_and_grad_on(&ck, &data, &idx, loss)?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                store.aborted = Some(format!("non-finite loss in task {t} at sample {start}"));
                return Ok(store);
            }
            total += l * idx.len() as f64;
            adam.update(&mut ck.theta, &g)?;
            ck.meta.step_count += 1;
            start = end;
        }
        store.learning_curve.push(total / data.len() as f64);
        ck.meta.task_index = t + 1;
        if (t + 1) % cfg.checkpoint_every == 0 {
            store.checkpoints.push(ck.clone());
        }
    }
    Ok(store)
}

/// SCR training run: the stream and the network both follow `scr`.
pub fn train_scr(cfg: &TrainRunConfig, scr: &ScrConfig, run_id: &str) -> Result<CheckpointStore> {
    let scr = ScrConfig {
        n_tasks: scr.n_tasks.max(cfg.n_tasks),
        ..scr.clone()
    };
    let seq = tasks::scr_sequence(&scr)?;
    train_sequence(cfg, &cfg.spec(scr.input_dim(), 1), run_id, seq.training_sets())
}

/// Permuted-MNIST task stream: task `t` applies a fresh pixel permutation to
/// every base image and visits them in a fresh random order.
pub fn pmnist_training_stream(base: &MnistDataset, seed: u64, n_tasks: usize) -> impl Iterator<Item = Result<Dataset>> + '_ {
    (0..n_tasks).map(move |t| {
        let perm = tasks::pixel_permutation(derive_seed(seed, "pmnist-perm", t as u64), base.images.cols());
        let mut order: Vec<usize> = (0..base.len()).collect();
        order.shuffle(&mut rng_for(seed, "pmnist-order", t as u64));
        Ok(tasks::permute_images(&base.select(&order), &perm))
    })
}

pub fn train_pmnist(cfg: &TrainRunConfig, base: &MnistDataset, run_id: &str) -> Result<CheckpointStore> {
    if base.is_empty() {
        return Err(Error::InvalidArgument("empty MNIST training set".into()));
    }
    let spec = cfg.spec(base.images.cols(), 10);
    train_sequence(cfg, &spec, run_id, pmnist_training_stream(base, cfg.seed, cfg.n_tasks))
}

/// Held-out P-MNIST task: `n` images drawn without replacement from `base`
/// under a permutation no training task uses.
pub fn pmnist_validation_task(base: &MnistDataset, val_seed: u64, n: usize) -> Result<Task> {
    if n == 0 || n > base.len() {
        return Err(Error::InvalidArgument(format!(
            "validation size {n} must be in 1..={}",
            base.len()
        )));
    }
    let mut rng = rng_for(val_seed, "pmnist-val-images", 0);
    let mut idx = index::sample(&mut rng, base.len(), n).into_vec();
    idx.sort_unstable();
    let perm = tasks::pixel_permutation(derive_seed(val_seed, "pmnist-val-perm", 0), base.images.cols());
    Ok(Task::finite(
        format!("pmnist-val-{val_seed}"),
        tasks::permute_images(&base.select(&idx), &perm),
        LossKind::CrossEntropy,
    ))
}

// ---------------------------------------------------------------------------
// Checkpoint persistence

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    format_version: u32,
    spec: MlpSpec,
    spec_hash: String,
    meta: CheckpointMeta,
    /// Little-endian f64 bytes, base64.
    theta: String,
}

pub fn spec_hash(spec: &MlpSpec) -> String {
    fingerprint(spec.descriptor().as_bytes())
}

pub fn checkpoint_to_json(ck: &Checkpoint) -> String {
    let bytes: Vec<u8> = ck.theta.iter().flat_map(|v| v.to_le_bytes()).collect();
    let rec = CheckpointRecord {
        format_version: CHECKPOINT_FORMAT_VERSION,
        spec: ck.spec.clone(),
        spec_hash: spec_hash(&ck.spec),
        meta: ck.meta.clone(),
        theta: B64.encode(bytes),
    };
    serde_json::to_string_pretty(&rec).expect("checkpoint record serializes")
}

pub fn checkpoint_from_json(text: &str) -> Result<Checkpoint> {
    let rec: CheckpointRecord = serde_json::from_str(text).map_err(|e| Error::Format(format!("bad record: {e}")))?;
    if rec.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
            rec.format_version
        )));
    }
    if rec.spec_hash != spec_hash(&rec.spec) {
        return Err(Error::Format(format!(
            "spec hash {} does not match {}",
            rec.spec_hash,
            rec.spec.descriptor()
        )));
    }
    let bytes = B64
        .decode(rec.theta.as_bytes())
        .map_err(|e| Error::Format(format!("corrupt parameter payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("parameter payload is not a whole number of f64s".into()));
    }
    let theta = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Checkpoint::new(rec.spec, theta, rec.meta).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_json(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_json(&text)
}

#[derive(Serialize, Deserialize)]
struct StoreManifest {
    format_version: u32,
    run_id: String,
    aborted: Option<String>,
    checkpoints: Vec<String>,
}

pub const STORE_MANIFEST: &str = "store.json";

/// Writes `store.json`, one JSON file per checkpoint and
/// `learning_curve.csv` under `dir`.
pub fn save_store(store: &CheckpointStore, dir: &Path, header: &CsvHeader) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(store.len());
    for (i, ck) in store.checkpoints.iter().enumerate() {
        let name = format!("ckpt-{i:04}-task{:05}.json", ck.meta.task_index);
        save_checkpoint(ck, &dir.join(&name))?;
        names.push(name);
    }
    let manifest = StoreManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        run_id: store.run_id.clone(),
        aborted: store.aborted.clone(),
        checkpoints: names,
    };
    let path = dir.join(STORE_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(|e| Error::io(&path, e))?;
    let rows = store
        .learning_curve
        .iter()
        .enumerate()
        .map(|(t, l)| vec![store.run_id.clone(), t.to_string(), fmt_f64(*l)])
        .collect::<Vec<_>>();
    write_csv(&dir.join("learning_curve.csv"), header, &["run", "task_index", "mean_loss"], &rows)
}

pub fn load_store(dir: &Path) -> Result<CheckpointStore> {
    let path = dir.join(STORE_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: StoreManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!("store format version {}", manifest.format_version)));
    }
    let checkpoints = manifest
        .checkpoints
        .iter()
        .map(|name| load_checkpoint(&dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    let curve_path = dir.join("learning_curve.csv");
    let mut learning_curve = Vec::new();
    if curve_path.exists() {
        for row in read_csv(&curve_path)? {
            let v = row
                .get(2)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("bad row in {}", curve_path.display())))?;
            learning_curve.push(v);
        }
    }
    Ok(CheckpointStore {
        run_id: manifest.run_id,
        checkpoints,
        learning_curve,
        aborted: manifest.aborted,
    })
}

// ---------------------------------------------------------------------------
// CSV artifacts

/// Provenance written as `#` lines at the top of every CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvHeader {
    pub config_hash: String,
    pub root_seed: u64,
    /// Resolved configuration, one `key = value` per entry.
    pub config: Vec<(String, String)>,
}

impl CsvHeader {
    pub fn new(root_seed: u64, config: Vec<(String, String)>) -> Self {
        let flat: String = config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        Self {
            config_hash: fingerprint(flat.as_bytes()),
            root_seed,
            config,
        }
    }

    fn lines(&self) -> String {
        let mut s = format!(
            "# tool: {TOOL_VERSION}\n# config_hash: {}\n# root_seed: {}\n",
            self.config_hash, self.root_seed
        );
        for (k, v) in &self.config {
            s.push_str(&format!("# config: {k} = {v}\n"));
        }
        s
    }
}

pub fn write_csv(path: &Path, header: &CsvHeader, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = header.lines().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Data rows of a CSV written by [`write_csv`] (comments and header skipped).
pub fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Ingestion {
                path: path.to_path_buf(),
                msg: e.to_string(),
            },
            _ => Error::Csv(e),
        })?;
    r.records()
        .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
        .collect()
}

// ---------------------------------------------------------------------------
// Ranking

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub correct: usize,
    pub counted: usize,
    pub tied_gain_pairs: usize,
}

impl PairCounts {
    /// `None` when every pair is a gain tie.
    pub fn accuracy(&self) -> Option<f64> {
        (self.counted > 0).then(|| self.correct as f64 / self.counted as f64)
    }
}

/// Share of checkpoint pairs whose metric difference has the same strict
/// sign as their gain difference. Gain ties are excluded; metric ties on the
/// remaining pairs count as wrong.
pub fn pairwise_counts(metric: &[f64], gains: &[f64]) -> Result<PairCounts> {
    if metric.len() != gains.len() {
        return Err(Error::Dimension(format!(
            "{} metric values for {} gains",
            metric.len(),
            gains.len()
        )));
    }
    if metric.len() < 2 {
        return Err(Error::InvalidArgument("ranking needs at least two checkpoints".into()));
    }
    let mut c = PairCounts::default();
    for i in 0..metric.len() {
        for j in i + 1..metric.len() {
            let dg = gains[j] - gains[i];
            if dg == 0.0 {
                c.tied_gain_pairs += 1;
                continue;
            }
            c.counted += 1;
            if (metric[j] - metric[i]) * dg > 0.0 {
                c.correct += 1;
            }
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellAccuracy {
    pub run: String,
    pub task: String,
    pub counts: PairCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub metric: String,
    pub k: usize,
    /// Mean accuracy across (run, task) cells with at least one counted pair.
    pub accuracy: f64,
    pub std_error: f64,
    pub counted_pairs: usize,
    pub tied_pairs_excluded: usize,
    pub per_cell: Vec<CellAccuracy>,
}

/// Single-series ranking result.
pub fn pairwise_ranking_accuracy(metric_name: &str, k: usize, metric: &[f64], gains: &[f64]) -> Result<RankingResult> {
    let counts = pairwise_counts(metric, gains)?;
    aggregate_ranking(
        metric_name,
        k,
        vec![CellAccuracy {
            run: String::new(),
            task: String::new(),
            counts,
        }],
    )
}

fn aggregate_ranking(metric: &str, k: usize, per_cell: Vec<CellAccuracy>) -> Result<RankingResult> {
    let accs: Vec<f64> = per_cell.iter().filter_map(|c| c.counts.accuracy()).collect();
    if accs.is_empty() {
        return Err(Error::Numeric(format!(
            "ranking accuracy of {metric} at k = {k} is undefined: every gain pair is tied"
        )));
    }
    let (mean, se) = mean_and_se(&accs);
    Ok(RankingResult {
        metric: metric.to_string(),
        k,
        accuracy: mean,
        std_error: se,
        counted_pairs: per_cell.iter().map(|c| c.counts.counted).sum(),
        tied_pairs_excluded: per_cell.iter().map(|c| c.counts.tied_gain_pairs).sum(),
        per_cell,
    })
}

/// Sample mean and its standard error (0 for a single value).
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs two equal series of length >= 2".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

// ---------------------------------------------------------------------------
// Evaluation sweep

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    pub ks: Vec<usize>,
    pub diag: DiagnosticConfig,
    /// `k` is taken from `ks`; the seed is derived per cell group.
    pub gain: GainConfig,
    pub root_seed: u64,
}

impl EvalPlan {
    pub fn new(ks: Vec<usize>, root_seed: u64) -> Self {
        Self {
            ks,
            diag: DiagnosticConfig::default(),
            gain: GainConfig::default(),
            root_seed,
        }
    }

    /// Seed for the diagnostics of every checkpoint on (run, task); shared
    /// across checkpoints so they see the same minibatches.
    pub fn diag_seed(&self, run: &str, task: &str) -> u64 {
        derive_seed(self.root_seed, &format!("diag/{run}/{task}"), 0)
    }

    pub fn gain_seed(&self, run: &str, task: &str) -> u64 {
        derive_seed(self.root_seed, &format!("gain/{run}/{task}"), 0)
    }
}

/// One training run's checkpoints with the validation tasks they are
/// evaluated on.
#[derive(Clone, Copy, Debug)]
pub struct RunEval<'a> {
    pub store: &'a CheckpointStore,
    pub val_tasks: &'a [Task],
}

pub type CellResult = Cell<(DiagnosticReport, Vec<GainEstimate>)>;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalTables {
    pub ks: Vec<usize>,
    pub cells: Vec<CellResult>,
    pub rankings: Vec<RankingResult>,
}

fn checkpoint_label(run: &str, index: usize, ck: &Checkpoint) -> String {
    format!("{run}/{index:04}/task{:05}", ck.meta.task_index)
}

pub fn diagnose_cell(run: &str, index: usize, ck: &Checkpoint, task: &Task, plan: &EvalPlan) -> Result<DiagnosticReport> {
    let data = task
        .support()
        .ok_or_else(|| Error::InvalidArgument(format!("validation task {} is not materialized", task.id)))?;
    let diag_seed = plan.diag_seed(run, &task.id);
    let mut report = diagnostics::diagnostic_report(
        ck,
        &task.id,
        data,
        task.loss,
        &plan.diag,
        diag_seed,
        &mut rng_for(diag_seed, "cell", 0),
    )?;
    report.checkpoint = checkpoint_label(run, index, ck);
    Ok(report)
}

pub fn gain_cell(run: &str, ck: &Checkpoint, task: &Task, plan: &EvalPlan) -> Result<Vec<GainEstimate>> {
    let gain_cfg = GainConfig {
        seed: plan.gain_seed(run, &task.id),
        ..plan.gain.clone()
    };
    gain::k_step_gains(ck, task, &plan.ks, &gain_cfg)
}

pub fn evaluate_cell(run: &str, index: usize, ck: &Checkpoint, task: &Task, plan: &EvalPlan) -> Result<(DiagnosticReport, Vec<GainEstimate>)> {
    Ok((diagnose_cell(run, index, ck, task, plan)?, gain_cell(run, ck, task, plan)?))
}

/// Outcome of one (checkpoint, validation task) cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell<T> {
    pub run: String,
    pub checkpoint: usize,
    pub label: String,
    pub task: String,
    pub outcome: std::result::Result<T, String>,
}

/// Applies `f` to every (checkpoint, validation task) cell in parallel.
/// Cells come back grouped by run, then task, then checkpoint; a failing
/// cell is flagged and does not stop the others.
pub fn sweep_cells<T, F>(runs: &[RunEval<'_>], f: F) -> Result<Vec<Cell<T>>>
where
    T: Send,
    F: Fn(&str, usize, &Checkpoint, &Task) -> Result<T> + Sync,
{
    let mut jobs = Vec::new();
    for r in runs {
        if r.store.is_empty() {
            return Err(Error::InvalidArgument(format!("checkpoint store {} is empty", r.store.run_id)));
        }
        for task in r.val_tasks {
            for (i, ck) in r.store.checkpoints.iter().enumerate() {
                jobs.push((r.store.run_id.as_str(), i, ck, task));
            }
        }
    }
    Ok(jobs
        .par_iter()
        .map(|&(run, i, ck, task)| Cell {
            run: run.to_string(),
            checkpoint: i,
            label: checkpoint_label(run, i, ck),
            task: task.id.clone(),
            outcome: f(run, i, ck, task).map_err(|e| e.to_string()),
        })
        .collect())
}

/// Diagnostics and gains for every (checkpoint, validation task) cell, then
/// pairwise ranking accuracy per (metric, k), aggregated across (run, task)
/// groups. Results do not depend on scheduling.
pub fn evaluate_checkpoints(runs: &[RunEval<'_>], plan: &EvalPlan) -> Result<EvalTables> {
    if plan.ks.is_empty() {
        return Err(Error::InvalidArgument("no step counts requested".into()));
    }
    let cells = sweep_cells(runs, |run, i, ck, task| evaluate_cell(run, i, ck, task, plan))?;
    let rankings = rank_cells(&cells, &plan.ks)?;
    Ok(EvalTables {
        ks: plan.ks.clone(),
        cells,
        rankings,
    })
}

/// Groups successful cells by (run, task), in first-seen order.
fn groups(cells: &[CellResult]) -> Vec<Vec<&CellResult>> {
    let mut out: Vec<Vec<&CellResult>> = Vec::new();
    for c in cells.iter().filter(|c| c.outcome.is_ok()) {
        match out.iter_mut().find(|g| g[0].run == c.run && g[0].task == c.task) {
            Some(g) => g.push(c),
            None => out.push(vec![c]),
        }
    }
    out
}

fn gain_values(group: &[&CellResult], j: usize) -> Vec<f64> {
    group
        .iter()
        .map(|c| c.outcome.as_ref().expect("filtered").1[j].gain)
        .collect()
}

fn rank_cells(cells: &[CellResult], ks: &[usize]) -> Result<Vec<RankingResult>> {
    let groups = groups(cells);
    let mut out = Vec::new();
    for metric in diagnostics::RANKED_METRICS {
        let available = groups.iter().flatten().all(|c| {
            c.outcome.as_ref().expect("filtered").0.metric(metric).is_some()
        });
        if groups.is_empty() || !available {
            continue;
        }
        for (j, &k) in ks.iter().enumerate() {
            let mut per_cell = Vec::new();
            for g in &groups {
                if g.len() < 2 {
                    continue;
                }
                let m: Vec<f64> = g
                    .iter()
                    .map(|c| c.outcome.as_ref().expect("filtered").0.metric(metric).expect("checked"))
                    .collect();
                per_cell.push(CellAccuracy {
                    run: g[0].run.clone(),
                    task: g[0].task.clone(),
                    counts: pairwise_counts(&m, &gain_values(g, j))?,
                });
            }
            out.push(aggregate_ranking(metric, k, per_cell)?);
        }
    }
    Ok(out)
}

impl EvalTables {
    pub fn ranking(&self, metric: &str, k: usize) -> Option<&RankingResult> {
        self.rankings.iter().find(|r| r.metric == metric && r.k == k)
    }

    pub fn metric_rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .filter_map(|c| {
                let (rep, _) = c.outcome.as_ref().ok()?;
                let mut row = vec![c.run.clone()];
                row.extend(rep.csv_record());
                Some(row)
            })
            .collect()
    }

    pub fn metric_columns() -> Vec<&'static str> {
        let mut cols = vec!["run"];
        cols.extend(diagnostics::REPORT_COLUMNS);
        cols
    }

    pub fn gain_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for c in &self.cells {
            if let Ok((rep, gains)) = &c.outcome {
                for g in gains {
                    let mut row = vec![c.run.clone()];
                    row.extend(g.csv_record(&rep.checkpoint, &c.task));
                    rows.push(row);
                }
            }
        }
        rows
    }

    pub fn gain_columns() -> Vec<&'static str> {
        let mut cols = vec!["run"];
        cols.extend(gain::GAIN_COLUMNS);
        cols
    }

    /// Cells that failed, as `run, checkpoint, task, error`.
    pub fn failure_rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .filter_map(|c| {
                let e = c.outcome.as_ref().err()?;
                Some(vec![c.run.clone(), c.checkpoint.to_string(), c.task.clone(), e.clone()])
            })
            .collect()
    }

    pub const RANKING_COLUMNS: [&'static str; 7] =
        ["metric", "k", "accuracy", "std_error", "cells", "counted_pairs", "tied_pairs_excluded"];

    pub fn ranking_rows(&self) -> Vec<Vec<String>> {
        self.rankings.iter().map(ranking_row).collect()
    }

    pub fn write_all(&self, dir: &Path, header: &CsvHeader) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("metrics.csv", Self::metric_columns(), self.metric_rows()),
            ("gains.csv", Self::gain_columns(), self.gain_rows()),
            ("ranking.csv", Self::RANKING_COLUMNS.to_vec(), self.ranking_rows()),
        ];
        let mut written = Vec::new();
        for (name, cols, rows) in files {
            let p = dir.join(name);
            write_csv(&p, header, &cols, &rows)?;
            written.push(p);
        }
        let failures = self.failure_rows();
        if !failures.is_empty() {
            let p = dir.join("failed_cells.csv");
            write_csv(&p, header, &["run", "checkpoint", "task", "error"], &failures)?;
            written.push(p);
        }
        Ok(written)
    }
}

fn ranking_row(r: &RankingResult) -> Vec<String> {
    vec![
        r.metric.clone(),
        r.k.to_string(),
        fmt_f64(r.accuracy),
        fmt_f64(r.std_error),
        r.per_cell.len().to_string(),
        r.counted_pairs.to_string(),
        r.tied_pairs_excluded.to_string(),
    ]
}

// ---------------------------------------------------------------------------
// Subsampling ablation

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub fractions: Vec<f64>,
    /// Minibatches for the reliability estimate.
    pub batches: usize,
    pub batch_size: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.1, 0.01, 0.001],
            batches: 16,
            batch_size: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub fraction: f64,
    pub subset_size: usize,
    pub ranking: RankingResult,
}

/// Validation subset for an ablation cell, fixed per (run, task, fraction).
/// The full fraction keeps the set as is.
pub fn ablation_subset(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} must lie in (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(data.clone());
    }
    let n = (fraction * data.len() as f64).round() as usize;
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {} samples is empty",
            data.len()
        )));
    }
    let mut idx = index::sample(&mut rng_for(seed, "ablation-subset", 0), data.len(), n).into_vec();
    idx.sort_unstable();
    Ok(data.subset(&idx))
}

/// OR re-estimated on validation subsets with a cheap reliability estimate,
/// ranked against the full-data gains already in `tables`.
pub fn subsample_ablation(runs: &[RunEval<'_>], tables: &EvalTables, cfg: &AblationConfig, plan: &EvalPlan) -> Result<Vec<AblationRow>> {
    if cfg.batches == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("ablation batches and batch size must be >= 1".into()));
    }
    let mut rows = Vec::new();
    for &fraction in &cfg.fractions {
        let mut subset_size = 0;
        let mut jobs = Vec::new();
        for r in runs {
            for task in r.val_tasks {
                let data = task
                    .support()
                    .ok_or_else(|| Error::InvalidArgument(format!("task {} is not materialized", task.id)))?;
                let seed = derive_seed(plan.root_seed, &format!("ablation/{}/{}", r.store.run_id, task.id), fraction.to_bits());
                let sub = ablation_subset(data, fraction, seed)?;
                subset_size = sub.len();
                jobs.push((r, task, sub));
            }
        }
        let mut per_cell = Vec::new();
        for (r, task, sub) in &jobs {
            let run = r.store.run_id.as_str();
            let group: Vec<&CellResult> = tables
                .cells
                .iter()
                .filter(|c| c.run == run && c.task == task.id && c.outcome.is_ok())
                .collect();
            if group.len() < 2 {
                continue;
            }
            let diag_seed = plan.diag_seed(run, &task.id);
            let ors: Vec<f64> = group
                .par_iter()
                .map(|c| {
                    let ck = &r.store.checkpoints[c.checkpoint];
                    diagnostics::optimization_readiness(
                        ck,
                        sub,
                        task.loss,
                        cfg.batch_size,
                        ReliabilityMode::MonteCarlo { batches: cfg.batches },
                        &mut rng_for(diag_seed, "cell", 0),
                    )
                    .map(|o| o.or_value)
                })
                .collect::<Result<_>>()?;
            for (j, _) in tables.ks.iter().enumerate() {
                per_cell.push((
                    j,
                    CellAccuracy {
                        run: run.to_string(),
                        task: task.id.clone(),
                        counts: pairwise_counts(&ors, &gain_values(&group, j))?,
                    },
                ));
            }
        }
        for (j, &k) in tables.ks.iter().enumerate() {
            let cells = per_cell.iter().filter(|(jj, _)| *jj == j).map(|(_, c)| c.clone()).collect();
            rows.push(AblationRow {
                fraction,
                subset_size,
                ranking: aggregate_ranking("or", k, cells)?,
            });
        }
    }
    Ok(rows)
}

pub const ABLATION_COLUMNS: [&str; 7] = ["fraction", "subset_size", "metric", "k", "accuracy", "std_error", "counted_pairs"];

pub fn ablation_rows(rows: &[AblationRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                fmt_f64(r.fraction),
                r.subset_size.to_string(),
                r.ranking.metric.clone(),
                r.ranking.k.to_string(),
                fmt_f64(r.ranking.accuracy),
                fmt_f64(r.ranking.std_error),
                r.ranking.counted_pairs.to_string(),
            ]
        })
        .collect()
}

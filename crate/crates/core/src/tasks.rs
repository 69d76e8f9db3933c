//! Data sources: the Slowly-Changing Regression stream, Permuted MNIST and
//! finite full-support tasks.

use std::fs;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::LossKind;
use crate::seeds::rng_for;

#[derive(Clone, Debug)]
enum Source {
    /// Uniform draws from a fixed list of samples.
    Finite(Dataset),
    /// SCR task: fixed slow bits, fresh fair-coin random bits per sample.
    Scr {
        pattern: Vec<u8>,
        random_bits: usize,
        target: Arc<LtuTarget>,
    },
}

/// A labeled-data source with its loss.
#[derive(Clone, Debug)]
pub struct Task {
    pub id: String,
    pub loss: LossKind,
    source: Source,
}

impl Task {
    /// Full-support task sampling uniformly from `support`.
    pub fn finite(id: impl Into<String>, support: Dataset, loss: LossKind) -> Self {
        Self {
            id: id.into(),
            loss,
            source: Source::Finite(support),
        }
    }

    pub fn support(&self) -> Option<&Dataset> {
        match &self.source {
            Source::Finite(d) => Some(d),
            Source::Scr { .. } => None,
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.source {
            Source::Finite(d) => d.input_dim(),
            Source::Scr { pattern, random_bits, .. } => pattern.len() + random_bits,
        }
    }

    /// Slow-bit pattern of an SCR task.
    pub fn scr_pattern(&self) -> Option<&[u8]> {
        match &self.source {
            Source::Scr { pattern, .. } => Some(pattern),
            Source::Finite(_) => None,
        }
    }

    /// `m` i.i.d. samples; with replacement for finite supports.
    pub fn sample_batch<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Dataset> {
        if m == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        match &self.source {
            Source::Finite(d) => {
                let idx = sample_indices(d.len(), m, rng)?;
                Ok(d.subset(&idx))
            }
            Source::Scr {
                pattern,
                random_bits,
                target,
            } => {
                let dim = pattern.len() + random_bits;
                let mut x = Vec::with_capacity(m * dim);
                let mut y = Vec::with_capacity(m);
                let mut row = vec![0.0; dim];
                for _ in 0..m {
                    for (r, &b) in row.iter_mut().zip(pattern) {
                        *r = f64::from(b);
                    }
                    for r in &mut row[pattern.len()..] {
                        *r = if rng.gen::<bool>() { 1.0 } else { 0.0 };
                    }
                    y.push(target.output_unchecked(&row));
                    x.extend_from_slice(&row);
                }
                Dataset::new(Matrix::new(m, dim, x)?, Matrix::new(m, 1, y)?)
            }
        }
    }
}

/// `m` uniform indices into `0..n`, with replacement.
pub fn sample_indices<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot sample from an empty support".into()));
    }
    Ok((0..m).map(|_| rng.gen_range(0..n)).collect())
}

pub fn sample_batch<R: Rng + ?Sized>(task: &Task, m: usize, rng: &mut R) -> Result<Dataset> {
    task.sample_batch(m, rng)
}

// ---------------------------------------------------------------------------
// Slowly-Changing Regression

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtuConfig {
    /// Number of threshold units in the target network.
    #[serde(default = "default_ltu_hidden")]
    pub hidden: usize,
    /// Fraction of the input width used in the unit thresholds.
    #[serde(default = "default_ltu_beta")]
    pub beta: f64,
}

fn default_ltu_hidden() -> usize {
    20
}

fn default_ltu_beta() -> f64 {
    0.7
}

impl Default for LtuConfig {
    fn default() -> Self {
        Self {
            hidden: default_ltu_hidden(),
            beta: default_ltu_beta(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScrConfig {
    /// Slowly-changing bits.
    pub u: usize,
    /// Random bits, resampled per sample.
    pub v: usize,
    pub n_per_task: usize,
    pub n_tasks: usize,
    pub seed: u64,
    #[serde(default)]
    pub ltu: LtuConfig,
}

impl Default for ScrConfig {
    fn default() -> Self {
        Self {
            u: 4,
            v: 12,
            n_per_task: 1_000,
            n_tasks: 1_000,
            seed: 0,
            ltu: LtuConfig::default(),
        }
    }
}

impl ScrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.u == 0 || self.n_per_task == 0 || self.ltu.hidden == 0 {
            return Err(Error::InvalidArgument(
                "SCR needs u >= 1, n_per_task >= 1 and at least one LTU".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.u + self.v
    }
}

/// Fixed random network of linear threshold units.
#[derive(Clone, Debug, PartialEq)]
pub struct LtuTarget {
    /// `hidden × input_dim`, entries exactly ±1.
    pub weights: Matrix,
    pub output_weights: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl LtuTarget {
    /// ±1 weights, output weights uniform on [-1, 1], and thresholds
    /// `input_dim·beta − 2·(number of −1 weights)` per unit.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, cfg: &LtuConfig, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let w: Vec<f64> = (0..h * input_dim)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let weights = Matrix::new(h, input_dim, w).expect("sizes match");
        let output_weights = (0..h).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let thresholds = (0..h)
            .map(|k| {
                let negatives = weights.row(k).iter().filter(|&&v| v < 0.0).count();
                input_dim as f64 * cfg.beta - 2.0 * negatives as f64
            })
            .collect();
        Self {
            weights,
            output_weights,
            thresholds,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    /// `∑ₖ outₖ · 1{wₖᵀx > τₖ}` without validating `x`.
    fn output_unchecked(&self, x: &[f64]) -> f64 {
        (0..self.weights.rows())
            .filter(|&k| crate::linalg::dot(self.weights.row(k), x) > self.thresholds[k])
            .map(|k| self.output_weights[k])
            .sum()
    }
}

pub fn ltu_output(target: &LtuTarget, x: &[f64]) -> Result<f64> {
    if x.len() != target.input_dim() {
        return Err(Error::Dimension(format!(
            "LTU expects {} bits, got {}",
            target.input_dim(),
            x.len()
        )));
    }
    if x.iter().any(|&b| b != 0.0 && b != 1.0) {
        return Err(Error::InvalidArgument("LTU inputs must be 0/1 bits".into()));
    }
    Ok(target.output_unchecked(x))
}

/// Deterministic SCR task stream.
pub struct ScrSequence {
    cfg: ScrConfig,
    target: Arc<LtuTarget>,
    pattern: Vec<u8>,
    flip_rng: ChaCha8Rng,
    index: usize,
}

impl ScrSequence {
    pub fn target(&self) -> &Arc<LtuTarget> {
        &self.target
    }

    pub fn config(&self) -> &ScrConfig {
        &self.cfg
    }

    /// Training samples of every task in order, `n_per_task` each.
    pub fn training_sets(self) -> impl Iterator<Item = Result<Dataset>> {
        let n = self.cfg.n_per_task;
        let seed = self.cfg.seed;
        self.enumerate().map(move |(t, task)| {
            let mut rng = rng_for(seed, "scr-samples", t as u64);
            task.sample_batch(n, &mut rng)
        })
    }
}

impl Iterator for ScrSequence {
    type Item = Task;

    fn next(&mut self) -> Option<Task> {
        if self.index >= self.cfg.n_tasks {
            return None;
        }
        if self.index > 0 {
            let bit = self.flip_rng.gen_range(0..self.cfg.u);
            self.pattern[bit] ^= 1;
        }
        let task = Task {
            id: format!("scr-{}-{}", self.cfg.seed, self.index),
            loss: LossKind::MseHalf,
            source: Source::Scr {
                pattern: self.pattern.clone(),
                random_bits: self.cfg.v,
                target: Arc::clone(&self.target),
            },
        };
        self.index += 1;
        Some(task)
    }
}

/// LTU target shared by all tasks generated from `cfg.seed`.
pub fn scr_target(cfg: &ScrConfig) -> LtuTarget {
    LtuTarget::random(cfg.input_dim(), &cfg.ltu, &mut rng_for(cfg.seed, "scr-ltu", 0))
}

pub fn scr_sequence(cfg: &ScrConfig) -> Result<ScrSequence> {
    cfg.validate()?;
    let target = Arc::new(scr_target(cfg));
    let mut init = rng_for(cfg.seed, "scr-pattern", 0);
    let pattern = (0..cfg.u).map(|_| init.gen_range(0..2u8)).collect();
    Ok(ScrSequence {
        cfg: cfg.clone(),
        target,
        pattern,
        flip_rng: rng_for(cfg.seed, "scr-flip", 0),
        index: 0,
    })
}

/// Held-out SCR task: same target network, a fresh slow-bit pattern, and
/// `n_samples` materialized samples that the task then samples from.
pub fn scr_validation_task(cfg: &ScrConfig, val_seed: u64, n_samples: usize) -> Result<Task> {
    cfg.validate()?;
    let target = Arc::new(scr_target(cfg));
    let mut rng = rng_for(val_seed, "scr-val", cfg.seed);
    let pattern: Vec<u8> = (0..cfg.u).map(|_| rng.gen_range(0..2u8)).collect();
    let generator = Task {
        id: String::new(),
        loss: LossKind::MseHalf,
        source: Source::Scr {
            pattern,
            random_bits: cfg.v,
            target,
        },
    };
    let data = generator.sample_batch(n_samples, &mut rng)?;
    Ok(Task::finite(
        format!("scr-val-{}-{}", cfg.seed, val_seed),
        data,
        LossKind::MseHalf,
    ))
}

// ---------------------------------------------------------------------------
// MNIST

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct MnistDataset {
    /// `N × (rows·cols)`, pixel bytes scaled by 1/255.
    pub images: Matrix,
    pub labels: Vec<u8>,
}

impl MnistDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> MnistDataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        MnistDataset {
            images: self.images.select_rows(&idx),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> MnistDataset {
        MnistDataset {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Reads a whole file, inflating it first when it carries a gzip header.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Ingestion {
                path: path.to_path_buf(),
                msg: format!("gzip: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Ingestion {
            path: path.to_path_buf(),
            msg: "truncated header".into(),
        })
}

/// Parses IDX image and label files (optionally gzipped).
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<MnistDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ingest = |path: &Path, msg: String| Error::Ingestion {
        path: path.to_path_buf(),
        msg,
    };

    let img = read_maybe_gz(ip)?;
    let magic = be_u32(&img, 0, ip)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(ingest(ip, format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(&img, 4, ip)? as usize;
    let rows = be_u32(&img, 8, ip)? as usize;
    let cols = be_u32(&img, 12, ip)? as usize;
    let pixels = &img[16..];
    if pixels.len() < n * rows * cols {
        return Err(ingest(
            ip,
            format!("truncated: {} pixel bytes for {n} images of {rows}x{cols}", pixels.len()),
        ));
    }

    let lab = read_maybe_gz(lp)?;
    let magic = be_u32(&lab, 0, lp)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(ingest(lp, format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let nl = be_u32(&lab, 4, lp)? as usize;
    if nl != n {
        return Err(ingest(lp, format!("{nl} labels for {n} images")));
    }
    let labels = &lab[8..];
    if labels.len() < n {
        return Err(ingest(lp, format!("truncated: {} label bytes for {n} labels", labels.len())));
    }

    let data = pixels[..n * rows * cols].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(MnistDataset {
        images: Matrix::new(n, rows * cols, data)?,
        labels: labels[..n].to_vec(),
    })
}

/// Pixel permutation for a task. Seed 0 is the identity.
pub fn pixel_permutation(task_seed: u64, dim: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..dim).collect();
    if task_seed != 0 {
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(task_seed));
    }
    perm
}

/// Every image re-indexed as `new[j] = old[perm[j]]`; labels unchanged.
pub fn permute_images(base: &MnistDataset, perm: &[usize]) -> Dataset {
    let n = base.len();
    let d = perm.len();
    let mut x = Matrix::zeros(n, d);
    for r in 0..n {
        let src = base.images.row(r);
        for (dst, &p) in x.row_mut(r).iter_mut().zip(perm) {
            *dst = src[p];
        }
    }
    let y = Matrix::new(n, 1, base.labels.iter().map(|&l| f64::from(l)).collect()).expect("sizes match");
    Dataset { x, y }
}

pub fn permuted_task(base: &MnistDataset, task_seed: u64) -> Result<Task> {
    if base.is_empty() {
        return Err(Error::InvalidArgument("empty MNIST dataset".into()));
    }
    let perm = pixel_permutation(task_seed, base.images.cols());
    Ok(Task::finite(
        format!("pmnist-{task_seed}"),
        permute_images(base, &perm),
        LossKind::CrossEntropy,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn small_scr(u: usize, n_tasks: usize) -> ScrConfig {
        ScrConfig {
            u,
            v: 3,
            n_per_task: 20,
            n_tasks,
            seed: 42,
            ltu: LtuConfig::default(),
        }
    }

    #[test]
    fn single_slow_bit_alternates() {
        let pats: Vec<Vec<u8>> = scr_sequence(&small_scr(1, 6))
            .unwrap()
            .map(|t| t.scr_pattern().unwrap().to_vec())
            .collect();
        for w in pats.windows(2) {
            assert_eq!(w[0][0] ^ 1, w[1][0]);
        }
    }

    #[test]
    fn consecutive_patterns_differ_in_one_bit() {
        let pats: Vec<Vec<u8>> = scr_sequence(&small_scr(5, 50))
            .unwrap()
            .map(|t| t.scr_pattern().unwrap().to_vec())
            .collect();
        assert_eq!(pats.len(), 50);
        for w in pats.windows(2) {
            let d = w[0].iter().zip(&w[1]).filter(|(a, b)| a != b).count();
            assert_eq!(d, 1);
        }
    }

    #[test]
    fn table_config_sample_count() {
        let cfg = ScrConfig::default();
        assert_eq!(cfg.n_per_task * cfg.n_tasks, 1_000_000);
        let mut seq = scr_sequence(&ScrConfig { n_tasks: 3, ..cfg }).unwrap().training_sets();
        let first = seq.next().unwrap().unwrap();
        assert_eq!(first.len(), 1_000);
        assert_eq!(first.input_dim(), 16);
    }

    #[test]
    fn scr_stream_is_deterministic_and_labels_follow_target() {
        let cfg = small_scr(4, 5);
        let a: Vec<Dataset> = scr_sequence(&cfg).unwrap().training_sets().map(|d| d.unwrap()).collect();
        let b: Vec<Dataset> = scr_sequence(&cfg).unwrap().training_sets().map(|d| d.unwrap()).collect();
        assert_eq!(a, b);
        let target = scr_target(&cfg);
        let seq_pats: Vec<Vec<u8>> = scr_sequence(&cfg)
            .unwrap()
            .map(|t| t.scr_pattern().unwrap().to_vec())
            .collect();
        for (d, pat) in a.iter().zip(&seq_pats) {
            for r in 0..d.len() {
                let x = d.x.row(r);
                for (i, &p) in pat.iter().enumerate() {
                    assert_eq!(x[i], f64::from(p));
                }
                assert_eq!(d.y.get(r, 0), ltu_output(&target, x).unwrap());
            }
        }
    }

    #[test]
    fn ltu_hand_cases() {
        let t = LtuTarget {
            weights: Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            output_weights: vec![2.0],
            thresholds: vec![1.5],
        };
        assert_eq!(ltu_output(&t, &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(ltu_output(&t, &[1.0, 0.0]).unwrap(), 0.0);
        assert!(ltu_output(&t, &[0.5, 0.0]).is_err());
        assert!(ltu_output(&t, &[1.0]).is_err());

        let pos = LtuTarget {
            weights: Matrix::from_rows(&[vec![1.0, -1.0, 1.0], vec![-1.0, -1.0, 1.0]]).unwrap(),
            output_weights: vec![0.3, -0.8],
            thresholds: vec![0.5, 0.1],
        };
        assert_eq!(ltu_output(&pos, &[0.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn ltu_random_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = LtuTarget::random(10, &LtuConfig::default(), &mut rng);
        assert!(t.weights.as_slice().iter().all(|&w| w == 1.0 || w == -1.0));
        for k in 0..t.weights.rows() {
            let s = t.weights.row(k).iter().filter(|&&w| w < 0.0).count() as f64;
            assert_eq!(t.thresholds[k], 10.0 * 0.7 - 2.0 * s);
        }
        for _ in 0..50 {
            let x: Vec<f64> = (0..10).map(|_| rng.gen_range(0..2) as f64).collect();
            let mut direct = 0.0;
            for k in 0..t.weights.rows() {
                let mut act = 0.0;
                for i in 0..10 {
                    act += t.weights.get(k, i) * x[i];
                }
                if act > t.thresholds[k] {
                    direct += t.output_weights[k];
                }
            }
            assert_eq!(ltu_output(&t, &x).unwrap(), direct);
        }
    }

    #[test]
    fn batch_sampling() {
        let one = Dataset::new(Matrix::from_rows(&[vec![7.0]]).unwrap(), Matrix::from_rows(&[vec![1.0]]).unwrap())
            .unwrap();
        let t = Task::finite("one", one.clone(), LossKind::MseHalf);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(t.sample_batch(1, &mut rng).unwrap(), one);
        assert!(t.sample_batch(0, &mut rng).is_err());

        let empty = Dataset::new(Matrix::zeros(0, 1), Matrix::zeros(0, 1)).unwrap();
        let e = Task::finite("empty", empty, LossKind::MseHalf);
        assert!(e.sample_batch(1, &mut rng).is_err());

        let four = Dataset::new(
            Matrix::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap(),
            Matrix::zeros(4, 1),
        )
        .unwrap();
        let t4 = Task::finite("four", four, LossKind::MseHalf);
        let a = t4.sample_batch(8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = t4.sample_batch(8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);

        // multinomial check over 1e5 draws
        let draws = 100_000;
        let batch = t4.sample_batch(draws, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut counts = [0usize; 4];
        for r in 0..draws {
            counts[batch.x.get(r, 0) as usize] += 1;
        }
        let expected = draws as f64 / 4.0;
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn full_support_mean_is_population_loss() {
        use crate::net::{mean_loss, CheckpointMeta, Checkpoint, MlpSpec};
        let d = Dataset::new(
            Matrix::from_rows(&[vec![1.0], vec![2.0], vec![-1.0]]).unwrap(),
            Matrix::from_rows(&[vec![0.5], vec![0.0], vec![1.0]]).unwrap(),
        )
        .unwrap();
        let ck = Checkpoint::new(MlpSpec::new(1, vec![], 1, false), vec![0.3], CheckpointMeta::default()).unwrap();
        let pop: f64 = (0..3)
            .map(|i| 0.5 * (0.3 * d.x.get(i, 0) - d.y.get(i, 0)).powi(2))
            .sum::<f64>()
            / 3.0;
        assert!((mean_loss(&ck, &d, LossKind::MseHalf).unwrap() - pop).abs() < 1e-15);
    }

    fn write_idx(dir: &Path, n_img: u32, n_lab: u32, img_magic: u32, truncate: bool) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("img");
        let lp = dir.join("lab");
        let mut img = Vec::new();
        img.extend(img_magic.to_be_bytes());
        img.extend(n_img.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend(3u32.to_be_bytes());
        let count = if truncate { n_img * 6 - 1 } else { n_img * 6 };
        img.extend((0..count).map(|i| (i * 37 % 256) as u8));
        fs::File::create(&ip).unwrap().write_all(&img).unwrap();
        let mut lab = Vec::new();
        lab.extend(IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend(n_lab.to_be_bytes());
        lab.extend((0..n_lab).map(|i| (i % 10) as u8));
        fs::File::create(&lp).unwrap().write_all(&lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_parsing_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), 4, 4, IDX_IMAGES_MAGIC, false);
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.images.cols(), 6);
        assert_eq!(ds.images.get(0, 1), 37.0 / 255.0);
        assert_eq!(ds.labels, vec![0, 1, 2, 3]);

        let (ip, lp) = write_idx(dir.path(), 4, 4, 0x0803_0000, false);
        let err = load_mnist_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
        let (ip, lp) = write_idx(dir.path(), 4, 4, IDX_IMAGES_MAGIC, true);
        assert!(load_mnist_idx(&ip, &lp).unwrap_err().to_string().contains("truncated"));
        let (ip, lp) = write_idx(dir.path(), 4, 5, IDX_IMAGES_MAGIC, false);
        assert!(load_mnist_idx(&ip, &lp).unwrap_err().to_string().contains("labels for"));
        let missing = dir.path().join("nope");
        let err = load_mnist_idx(&missing, &lp).unwrap_err().to_string();
        assert!(err.contains("nope"));
    }

    fn toy_mnist() -> MnistDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 30;
        MnistDataset {
            images: Matrix::new(n, 784, (0..n * 784).map(|_| rng.gen_range(0..256) as f64 / 255.0).collect())
                .unwrap(),
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
        }
    }

    #[test]
    fn permutation_properties() {
        let base = toy_mnist();
        let id = permuted_task(&base, 0).unwrap();
        assert_eq!(id.support().unwrap().x, base.images);
        assert_eq!(id.loss, LossKind::CrossEntropy);

        let perm = pixel_permutation(17, 784);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..784).collect::<Vec<_>>());
        assert_ne!(perm, (0..784).collect::<Vec<_>>());

        let t = permuted_task(&base, 17).unwrap();
        let d = t.support().unwrap();
        let mut inverse = vec![0; 784];
        for (j, &p) in perm.iter().enumerate() {
            inverse[p] = j;
        }
        for r in 0..base.len() {
            let restored: Vec<f64> = inverse.iter().map(|&j| d.x.get(r, j)).collect();
            assert_eq!(restored, base.images.row(r));
        }
        let hist = |y: &Matrix| {
            let mut h = [0usize; 10];
            for v in y.as_slice() {
                h[*v as usize] += 1;
            }
            h
        };
        assert_eq!(hist(&d.y), hist(&id.support().unwrap().y));
    }
}

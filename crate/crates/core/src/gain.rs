//! Trainability targets: mini-batch and full-support k-step gains, the
//! closed-form one-step output of a zero-readout two-layer net, and a checker
//! for the readiness lower bound on smooth linear models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diagnostics::{self, fmt_f64, ReliabilityMode};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::net::{self, Checkpoint, LossKind};
use crate::seeds::rng_for;
use crate::tasks::{sample_indices, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainConfig {
    pub k: usize,
    pub eta: f64,
    pub m: usize,
    pub rollouts: usize,
    pub seed: u64,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            k: 1,
            eta: 1e-3,
            m: 4,
            rollouts: 128,
            seed: 0,
        }
    }
}

impl GainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.m == 0 || self.rollouts == 0 {
            return Err(Error::InvalidArgument("batch size and rollout count must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {}", self.eta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainEstimate {
    pub k: usize,
    pub gain: f64,
    pub pre_loss: f64,
    pub mean_post_loss: f64,
    /// Post losses of the rollouts that stayed finite, in rollout order.
    pub per_rollout_post_losses: Vec<f64>,
    /// Standard error of `gain` across rollouts.
    pub std_error: f64,
    pub excluded_rollouts: usize,
}

/// `(pre − post) / pre`, or 0 when `pre = 0`.
pub fn relative_gain(pre: f64, post: f64) -> f64 {
    if pre > 0.0 {
        (pre - post) / pre
    } else {
        0.0
    }
}

fn finite_support(task: &Task) -> Result<&Dataset> {
    match task.support() {
        Some(d) if !d.is_empty() => Ok(d),
        Some(_) => Err(Error::InvalidArgument(format!("task {} has an empty support", task.id))),
        None => Err(Error::InvalidArgument(format!(
            "task {} has no materialized support",
            task.id
        ))),
    }
}

/// Mini-batch gain for `cfg.k`.
pub fn k_step_gain(ckpt: &Checkpoint, val_task: &Task, cfg: &GainConfig) -> Result<GainEstimate> {
    Ok(k_step_gains(ckpt, val_task, &[cfg.k], cfg)?.remove(0))
}

/// Mini-batch gains for several step counts at once.
///
/// Every rollout runs `max(ks)` SGD steps on its own random stream and the
/// post loss is read off at each requested `k`, so the estimate for a given
/// `k` does not depend on which other step counts are requested. `cfg.k` is
/// ignored. A rollout whose loss or parameters become non-finite is excluded
/// from every later `k`.
pub fn k_step_gains(ckpt: &Checkpoint, val_task: &Task, ks: &[usize], cfg: &GainConfig) -> Result<Vec<GainEstimate>> {
    GainConfig {
        k: ks.iter().copied().min().unwrap_or(0),
        ..cfg.clone()
    }
    .validate()?;
    let data = finite_support(val_task)?;
    let loss = val_task.loss;
    let pre_loss = net::mean_loss(ckpt, data, loss)?;
    let k_max = *ks.iter().max().expect("validated non-empty");

    // post[r][j] = post loss of rollout r after ks[j] steps, None once diverged
    let mut post: Vec<Vec<Option<f64>>> = Vec::with_capacity(cfg.rollouts);
    let mut work = ckpt.clone();
    for r in 0..cfg.rollouts {
        let mut rng = rng_for(cfg.seed, "gain-rollout", r as u64);
        work.theta.copy_from_slice(&ckpt.theta);
        let mut row = vec![None; ks.len()];
        for step in 1..=k_max {
            let idx = sample_indices(data.len(), cfg.m, &mut rng)?;
            let (batch_loss, g) = net::loss_and_grad_on(&work, data, &idx, loss)?;
            if !batch_loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                break;
            }
            for (t, gi) in work.theta.iter_mut().zip(&g) {
                *t -= cfg.eta * gi;
            }
            if work.theta.iter().any(|t| !t.is_finite()) {
                break;
            }
            if ks.contains(&step) {
                let l = net::mean_loss(&work, data, loss)?;
                if !l.is_finite() {
                    break;
                }
                for (slot, &k) in row.iter_mut().zip(ks) {
                    if k == step {
                        *slot = Some(l);
                    }
                }
            }
        }
        post.push(row);
    }

    ks.iter()
        .enumerate()
        .map(|(j, &k)| {
            let losses: Vec<f64> = post.iter().filter_map(|row| row[j]).collect();
            summarize(k, pre_loss, losses, cfg.rollouts)
        })
        .collect()
}

fn summarize(k: usize, pre_loss: f64, losses: Vec<f64>, total: usize) -> Result<GainEstimate> {
    if losses.is_empty() {
        return Err(Error::Numeric(format!("all {total} rollouts diverged at k = {k}")));
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = if losses.len() > 1 {
        losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let std_error = if pre_loss > 0.0 { (var / n).sqrt() / pre_loss } else { 0.0 };
    Ok(GainEstimate {
        k,
        gain: relative_gain(pre_loss, mean),
        pre_loss,
        mean_post_loss: mean,
        excluded_rollouts: total - losses.len(),
        per_rollout_post_losses: losses,
        std_error,
    })
}

/// Gain after `k` steps of exact gradient descent on the whole support.
pub fn full_support_gain(ckpt: &Checkpoint, full_task: &Task, k: usize, eta: f64) -> Result<f64> {
    Ok(full_support_gains(ckpt, full_task, &[k], eta)?[0])
}

/// [`full_support_gain`] for several `k` along one trajectory.
pub fn full_support_gains(ckpt: &Checkpoint, full_task: &Task, ks: &[usize], eta: f64) -> Result<Vec<f64>> {
    GainConfig {
        k: ks.iter().copied().min().unwrap_or(0),
        eta,
        ..GainConfig::default()
    }
    .validate()?;
    let data = finite_support(full_task)?;
    let loss = full_task.loss;
    let k_max = *ks.iter().max().expect("validated non-empty");
    let mut work = ckpt.clone();
    let mut out = vec![0.0; ks.len()];
    let (pre, mut g) = net::loss_and_grad(&work, data, loss)?;
    for step in 1..=k_max {
        for (t, gi) in work.theta.iter_mut().zip(&g) {
            *t -= eta * gi;
        }
        let (l, next_g) = net::loss_and_grad(&work, data, loss)?;
        if !l.is_finite() {
            return Err(Error::Numeric(format!("gradient descent diverged at step {step}")));
        }
        for (o, &k) in out.iter_mut().zip(ks) {
            if k == step {
                *o = relative_gain(pre, l);
            }
        }
        g = next_g;
    }
    Ok(out)
}

/// Per-sample output derivatives `q_i = ∂ℓ/∂f` at the current outputs.
pub fn output_residuals(ckpt: &Checkpoint, data: &Dataset, loss: LossKind) -> Result<Vec<f64>> {
    if ckpt.spec.output_dim != 1 {
        return Err(Error::Unsupported("residuals need a scalar output".into()));
    }
    loss.check_targets(1, &data.y)?;
    let out = net::predict(ckpt, &data.x)?;
    let mut dz = [0.0];
    Ok((0..data.len())
        .map(|i| {
            loss.eval(out.row(i), data.y.row(i), Some(&mut dz));
            dz[0]
        })
        .collect())
}

fn check_zero_readout(ckpt: &Checkpoint) -> Result<()> {
    let spec = &ckpt.spec;
    if spec.num_hidden() != 1 || spec.output_dim != 1 || spec.use_bias {
        return Err(Error::InvalidArgument(format!(
            "closed-form step needs a bias-free one-hidden-layer scalar net, got {}",
            spec.descriptor()
        )));
    }
    if ckpt.theta[spec.layer_range(1)].iter().any(|&v| v != 0.0) {
        return Err(Error::InvalidArgument("readout weights must be zero".into()));
    }
    Ok(())
}

/// Outputs after one full-support gradient step from `θ = (0, W)`:
/// `−η G q` with `G = ΦΦᵀ/n` and `q` the output residuals.
pub fn one_step_output(ckpt: &Checkpoint, full_task: &Task, eta: f64) -> Result<Vec<f64>> {
    check_zero_readout(ckpt)?;
    let data = finite_support(full_task)?;
    let q = output_residuals(ckpt, data, full_task.loss)?;
    let phi = net::forward(ckpt, &data.x)?.penultimate;
    let g = phi.gram_rows().scale(1.0 / data.len() as f64);
    Ok(g.matvec(&q)?.into_iter().map(|v| -eta * v).collect())
}

/// Largest eigenvalue of the Hessian of the mean squared loss of a linear
/// model, i.e. of the second-moment matrix of the (bias-augmented) inputs.
pub fn linear_model_smoothness(spec_use_bias: bool, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let d = data.input_dim() + usize::from(spec_use_bias);
    let mut rows = Vec::with_capacity(data.len() * d);
    for r in 0..data.len() {
        rows.extend_from_slice(data.x.row(r));
        if spec_use_bias {
            rows.push(1.0);
        }
    }
    let x = Matrix::new(data.len(), d, rows)?;
    let second = x.gram_cols().scale(1.0 / data.len() as f64);
    Ok(linalg::psd_eigvals(&second)?[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub eta: f64,
    pub alpha: f64,
    pub gain: f64,
    pub bound: f64,
    /// `gain − bound`; NaN when skipped.
    pub margin: f64,
    /// `η ≥ R/β`: outside the bound's hypothesis.
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub beta: f64,
    pub or_value: f64,
    pub reliability: f64,
    pub exhaustive: bool,
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    /// Every non-skipped grid point satisfies the bound up to `slack`.
    pub fn holds(&self, slack: f64) -> bool {
        self.rows.iter().all(|r| r.skipped || r.margin >= -slack)
    }
}

/// Checks `𝒢^(1) ≥ α(1−α)/β · OR` with `α = ηβ/R` on each grid step size,
/// with the expectation over minibatches of size `m` taken exactly when the
/// `N^m` ordered batches can be enumerated and by `mc_batches` Monte Carlo
/// draws otherwise.
pub fn verify_one_step_bound<R: Rng + ?Sized>(
    ckpt: &Checkpoint,
    smooth_task: &Task,
    eta_grid: &[f64],
    beta: f64,
    m: usize,
    mc_batches: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument("smoothness constant must be positive".into()));
    }
    let data = finite_support(smooth_task)?;
    let loss = smooth_task.loss;
    let enumerable = (data.len() as u128)
        .checked_pow(m as u32)
        .is_some_and(|c| c <= diagnostics::EXHAUSTIVE_LIMIT);
    let mode = if enumerable {
        ReliabilityMode::Exhaustive
    } else {
        ReliabilityMode::MonteCarlo { batches: mc_batches }
    };
    let readiness = diagnostics::optimization_readiness(ckpt, data, loss, m, mode, rng)?;
    let pre = readiness.loss;

    // Batch gradients are reused across the grid.
    let mut batch_grads: Vec<Vec<f64>> = Vec::new();
    if enumerable {
        let per: Vec<Vec<f64>> = net::per_sample_loss_grads(ckpt, data, &data.all_indices(), loss)?
            .into_iter()
            .map(|(_, g)| g)
            .collect();
        diagnostics::for_each_ordered_batch(data.len(), m, |idx| {
            let mut g = vec![0.0; ckpt.theta.len()];
            for &i in idx {
                for (a, b) in g.iter_mut().zip(&per[i]) {
                    *a += b;
                }
            }
            g.iter_mut().for_each(|v| *v /= m as f64);
            batch_grads.push(g);
        })?;
    } else {
        for _ in 0..mc_batches {
            let idx = sample_indices(data.len(), m, rng)?;
            batch_grads.push(net::loss_and_grad_on(ckpt, data, &idx, loss)?.1);
        }
    }

    let mut rows = Vec::with_capacity(eta_grid.len());
    let mut work = ckpt.clone();
    for &eta in eta_grid {
        let alpha = eta * beta / readiness.reliability;
        let skipped = !(eta > 0.0) || readiness.reliability <= 0.0 || alpha >= 1.0;
        if skipped && readiness.or_value > 0.0 {
            rows.push(BoundRow {
                eta,
                alpha,
                gain: f64::NAN,
                bound: f64::NAN,
                margin: f64::NAN,
                skipped: true,
            });
            continue;
        }
        let mut post = 0.0;
        for g in &batch_grads {
            for ((w, t), gi) in work.theta.iter_mut().zip(&ckpt.theta).zip(g) {
                *w = t - eta * gi;
            }
            post += net::mean_loss(&work, data, loss)?;
        }
        post /= batch_grads.len() as f64;
        let gain = relative_gain(pre, post);
        // R = 0 forces OR = 0, where the bound is 0 for any α
        let bound = if readiness.or_value > 0.0 {
            alpha * (1.0 - alpha) / beta * readiness.or_value
        } else {
            0.0
        };
        rows.push(BoundRow {
            eta,
            alpha,
            gain,
            bound,
            margin: gain - bound,
            skipped: false,
        });
    }
    Ok(BoundReport {
        beta,
        or_value: readiness.or_value,
        reliability: readiness.reliability,
        exhaustive: enumerable,
        rows,
    })
}

pub const GAIN_COLUMNS: [&str; 8] = [
    "checkpoint",
    "task",
    "k",
    "gain",
    "std_error",
    "excluded_rollouts",
    "pre_loss",
    "mean_post_loss",
];

impl GainEstimate {
    pub fn csv_record(&self, checkpoint: &str, task: &str) -> Vec<String> {
        vec![
            checkpoint.to_string(),
            task.to_string(),
            self.k.to_string(),
            fmt_f64(self.gain),
            fmt_f64(self.std_error),
            self.excluded_rollouts.to_string(),
            fmt_f64(self.pre_loss),
            fmt_f64(self.mean_post_loss),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_mlp, CheckpointMeta, MlpSpec};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(w: Vec<f64>) -> Checkpoint {
        let d = w.len();
        Checkpoint::new(MlpSpec::new(d, vec![], 1, false), w, CheckpointMeta::default()).unwrap()
    }

    fn task_from(x: Vec<Vec<f64>>, y: Vec<f64>, loss: LossKind) -> Task {
        let n = y.len();
        let data = Dataset::new(Matrix::from_rows(&x).unwrap(), Matrix::new(n, 1, y).unwrap()).unwrap();
        Task::finite("t", data, loss)
    }

    fn random_linear_task(n: usize, d: usize, seed: u64) -> Task {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        task_from(x, y, LossKind::MseHalf)
    }

    #[test]
    fn quadratic_single_point() {
        // ½θ² at θ = 1 with η = 0.5: post ½·0.25, gain 0.75
        let task = task_from(vec![vec![1.0]], vec![0.0], LossKind::MseHalf);
        let ck = linear(vec![1.0]);
        let cfg = GainConfig {
            k: 1,
            eta: 0.5,
            m: 3,
            rollouts: 5,
            seed: 9,
        };
        let est = k_step_gain(&ck, &task, &cfg).unwrap();
        assert!((est.gain - 0.75).abs() < 1e-15);
        assert!((est.mean_post_loss - 0.125).abs() < 1e-15);
        assert_eq!(est.std_error, 0.0);
        assert!((full_support_gain(&ck, &task, 1, 0.5).unwrap() - 0.75).abs() < 1e-15);
        // each step halves θ: post ½·4⁻ᵏ
        let g3 = full_support_gain(&ck, &task, 3, 0.5).unwrap();
        assert!((g3 - (1.0 - 0.25f64.powi(3))).abs() < 1e-15);
    }

    #[test]
    fn zero_loss_gives_zero_gain() {
        let task = task_from(vec![vec![1.0], vec![2.0]], vec![2.0, 4.0], LossKind::MseHalf);
        let ck = linear(vec![2.0]);
        let est = k_step_gain(&ck, &task, &GainConfig::default()).unwrap();
        assert_eq!(est.pre_loss, 0.0);
        assert_eq!(est.gain, 0.0);
        assert_eq!(full_support_gain(&ck, &task, 5, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn config_is_validated() {
        let task = task_from(vec![vec![1.0]], vec![0.0], LossKind::MseHalf);
        let ck = linear(vec![1.0]);
        for cfg in [
            GainConfig { k: 0, ..GainConfig::default() },
            GainConfig { m: 0, ..GainConfig::default() },
            GainConfig { rollouts: 0, ..GainConfig::default() },
            GainConfig { eta: 0.0, ..GainConfig::default() },
        ] {
            assert!(k_step_gain(&ck, &task, &cfg).is_err());
        }
        assert!(full_support_gain(&ck, &task, 0, 0.1).is_err());
    }

    #[test]
    fn rollouts_are_deterministic_and_prefix_consistent() {
        let task = random_linear_task(20, 3, 1);
        let ck = linear(vec![0.5, -0.3, 0.2]);
        let cfg = GainConfig {
            eta: 0.05,
            rollouts: 16,
            seed: 3,
            ..GainConfig::default()
        };
        let all = k_step_gains(&ck, &task, &[1, 10, 30], &cfg).unwrap();
        for est in &all {
            let alone = k_step_gain(&ck, &task, &GainConfig { k: est.k, ..cfg.clone() }).unwrap();
            assert_eq!(&alone, est);
        }
        let other = k_step_gain(&ck, &task, &GainConfig { k: 10, seed: 4, ..cfg.clone() }).unwrap();
        assert_ne!(other.per_rollout_post_losses, all[1].per_rollout_post_losses);
    }

    #[test]
    fn rollout_matches_hand_replay() {
        let task = random_linear_task(10, 2, 5);
        let data = task.support().unwrap().clone();
        let ck = linear(vec![0.1, 0.7]);
        let cfg = GainConfig {
            k: 4,
            eta: 0.1,
            m: 2,
            rollouts: 3,
            seed: 11,
        };
        let est = k_step_gain(&ck, &task, &cfg).unwrap();
        for r in 0..3 {
            let mut rng = rng_for(11, "gain-rollout", r as u64);
            let mut cur = ck.clone();
            for _ in 0..4 {
                let idx = sample_indices(10, 2, &mut rng).unwrap();
                let b = data.subset(&idx);
                let (_, g) = net::loss_and_grad(&cur, &b, LossKind::MseHalf).unwrap();
                cur = net::sgd_step(&cur, &g, 0.1).unwrap();
            }
            let l = net::mean_loss(&cur, &data, LossKind::MseHalf).unwrap();
            assert_eq!(l, est.per_rollout_post_losses[r]);
        }
    }

    #[test]
    fn diverged_rollouts_are_excluded() {
        // η far above 2/β on a stiff quadratic blows up every rollout
        let task = task_from(vec![vec![1e3]], vec![0.0], LossKind::MseHalf);
        let ck = linear(vec![1.0]);
        let cfg = GainConfig {
            k: 400,
            eta: 10.0,
            m: 1,
            rollouts: 4,
            seed: 0,
        };
        assert!(matches!(k_step_gain(&ck, &task, &cfg), Err(Error::Numeric(_))));
        assert!(full_support_gain(&ck, &task, 400, 10.0).is_err());

        let mut post = vec![1.0, 2.0, 3.0];
        let est = summarize(1, 4.0, post.clone(), 5).unwrap();
        assert_eq!(est.excluded_rollouts, 2);
        assert!((est.gain - 0.5).abs() < 1e-15);
        post.clear();
        assert!(summarize(1, 4.0, post, 5).is_err());
    }

    #[test]
    fn zero_gradient_means_zero_full_gain() {
        // symmetric targets around a stationary point
        let task = task_from(vec![vec![1.0], vec![1.0]], vec![1.0, -1.0], LossKind::MseHalf);
        let ck = linear(vec![0.0]);
        for k in [1, 10, 100] {
            for eta in [0.1, 1.0, 10.0] {
                assert_eq!(full_support_gain(&ck, &task, k, eta).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn loss_rescale_invariance() {
        // MseMean on a scalar output is exactly twice MseHalf
        let half = random_linear_task(8, 3, 2);
        let mut mean = half.clone();
        mean.loss = LossKind::MseMean;
        let ck = linear(vec![0.2, -0.4, 0.9]);
        for k in [1, 5, 20] {
            let a = full_support_gain(&ck, &half, k, 0.2).unwrap();
            let b = full_support_gain(&ck, &mean, k, 0.1).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn one_step_output_matches_actual_step() {
        let spec = MlpSpec::new(4, vec![7], 1, false);
        for loss in [LossKind::MseHalf, LossKind::Logistic01] {
            let mut ck = init_mlp(&spec, 8).unwrap();
            for t in &mut ck.theta[spec.layer_range(1)] {
                *t = 0.0;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let x: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let y: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
            let task = task_from(x, y, loss);
            let eta = 0.37;
            let predicted = one_step_output(&ck, &task, eta).unwrap();
            let data = task.support().unwrap();
            let (_, g) = net::loss_and_grad(&ck, data, loss).unwrap();
            let stepped = net::sgd_step(&ck, &g, eta).unwrap();
            let actual = net::predict(&stepped, &data.x).unwrap();
            for (p, a) in predicted.iter().zip(actual.as_slice()) {
                assert!((p - a).abs() <= 1e-10, "{loss:?}: {p} vs {a}");
            }
        }
    }

    #[test]
    fn one_step_output_identity_toy() {
        // W = I₂, X = I₂, residual q = −y: Φ = I, G = I/2, output = η y / 2
        let ck = Checkpoint::new(
            MlpSpec::new(2, vec![2], 1, false),
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            CheckpointMeta::default(),
        )
        .unwrap();
        let task = task_from(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![3.0, -1.0], LossKind::MseHalf);
        assert_eq!(one_step_output(&ck, &task, 0.5).unwrap(), vec![0.75, -0.25]);

        let live = ck.with_theta(vec![1.0, 0.0, 0.0, 1.0, 0.1, 0.0]);
        assert!(one_step_output(&live, &task, 0.5).is_err());
    }

    #[test]
    fn smoothness_of_linear_model() {
        let task = task_from(vec![vec![2.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], LossKind::MseHalf);
        let beta = linear_model_smoothness(false, task.support().unwrap()).unwrap();
        assert!((beta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bound_on_four_point_regression() {
        let task = random_linear_task(4, 2, 7);
        let ck = linear(vec![0.8, -0.5]);
        let beta = linear_model_smoothness(false, task.support().unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pre = verify_one_step_bound(&ck, &task, &[1e-3], beta, 2, 0, &mut rng).unwrap();
        let r = pre.reliability;
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 11.0 * r / beta).collect();
        let rep = verify_one_step_bound(&ck, &task, &grid, beta, 2, 0, &mut rng).unwrap();
        assert!(rep.exhaustive);
        assert!(rep.rows.iter().all(|row| !row.skipped));
        assert!(rep.holds(1e-10), "{:?}", rep.rows);

        let over = verify_one_step_bound(&ck, &task, &[2.0 * r / beta], beta, 2, 0, &mut rng).unwrap();
        assert!(over.rows[0].skipped);
    }

    #[test]
    fn bound_is_tight_at_zero_gradient() {
        let task = task_from(vec![vec![1.0], vec![1.0]], vec![1.0, -1.0], LossKind::MseHalf);
        let ck = linear(vec![0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep = verify_one_step_bound(&ck, &task, &[0.1, 0.5], 1.0, 1, 0, &mut rng).unwrap();
        assert_eq!(rep.or_value, 0.0);
        for row in &rep.rows {
            assert_eq!(row.bound, 0.0);
            // SGD on opposite-gradient samples can only increase the loss
            assert!(row.gain <= 0.0);
        }
    }

    #[test]
    fn deterministic_gradient_reduces_to_descent_lemma() {
        // one sample, so R = 1 and the gain is 1 − (1 − ηβ)² in closed form
        let task = task_from(vec![vec![2.0]], vec![0.0], LossKind::MseHalf);
        let ck = linear(vec![1.0]);
        let beta = 4.0;
        let grid = [0.05, 0.1, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep = verify_one_step_bound(&ck, &task, &grid, beta, 3, 0, &mut rng).unwrap();
        assert_eq!(rep.reliability, 1.0);
        for (row, eta) in rep.rows.iter().zip(grid) {
            let closed = 1.0 - (1.0 - eta * beta).powi(2);
            assert!((row.gain - closed).abs() < 1e-12);
            assert!(row.margin >= 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bound_holds_on_random_linear_tasks(seed in 0u64..10_000, frac in 0.01f64..0.99) {
            let task = random_linear_task(5, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ck = linear(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let beta = linear_model_smoothness(false, task.support().unwrap()).unwrap();
            let probe = verify_one_step_bound(&ck, &task, &[], beta, 2, 0, &mut rng).unwrap();
            let eta = frac * probe.reliability / beta;
            let rep = verify_one_step_bound(&ck, &task, &[eta], beta, 2, 0, &mut rng).unwrap();
            prop_assert!(rep.holds(1e-10));
            // losses are nonnegative, so gain ≤ 1
            let est = k_step_gain(&ck, &task, &GainConfig { k: 3, eta, rollouts: 4, seed, ..GainConfig::default() }).unwrap();
            prop_assert!(est.gain <= 1.0);
        }
    }
}

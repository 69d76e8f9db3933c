//! Plasticity metrics: representation ranks, eNTK rank, Hessian ranks,
//! active-neuron fraction, and Optimization Readiness with its two factors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SpectralSummary, SpectrumKind};
use crate::net::{self, Checkpoint, LossKind};
use crate::tasks::sample_indices;

/// Singular values below this fraction of the largest one are treated as
/// exact zeros.
pub const ZERO_CUTOFF: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticConfig {
    pub tau_energy: f64,
    pub tau_act: f64,
    pub eps_act: f64,
    pub reliability_batches: usize,
    pub reliability_batch_size: usize,
    pub hessian_gram_b: usize,
    pub hessian_param_cap: usize,
    pub exhaustive_reliability: bool,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self {
            tau_energy: 0.99,
            tau_act: 0.1,
            eps_act: 1e-8,
            reliability_batches: 128,
            reliability_batch_size: 4,
            hessian_gram_b: 128,
            hessian_param_cap: net::DEFAULT_HESSIAN_CAP,
            exhaustive_reliability: false,
        }
    }
}

impl DiagnosticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_energy > 0.0 && self.tau_energy < 1.0) {
            return Err(Error::InvalidArgument("tau_energy must lie in (0, 1)".into()));
        }
        if self.tau_act < 0.0 || self.eps_act <= 0.0 {
            return Err(Error::InvalidArgument("tau_act >= 0 and eps_act > 0 required".into()));
        }
        if self.reliability_batches == 0 || self.reliability_batch_size == 0 || self.hessian_gram_b == 0 {
            return Err(Error::InvalidArgument("batch counts and sizes must be >= 1".into()));
        }
        Ok(())
    }
}

fn nonzero_values(spectrum: &SpectralSummary) -> Vec<f64> {
    let top = spectrum.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if top == 0.0 {
        return Vec::new();
    }
    spectrum
        .values
        .iter()
        .map(|v| v.abs())
        .filter(|&v| v > ZERO_CUTOFF * top)
        .collect()
}

/// `exp` of the Shannon entropy of the normalized singular values; 0 for
/// the zero matrix.
pub fn effective_rank(spectrum: &SpectralSummary) -> f64 {
    let vals = nonzero_values(spectrum);
    let total: f64 = vals.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let entropy: f64 = vals
        .iter()
        .map(|v| v / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    entropy.exp()
}

/// Smallest `k` whose leading squared values capture a `tau` share of the
/// squared energy; 0 for the zero matrix.
pub fn energy_rank(spectrum: &SpectralSummary, tau: f64) -> usize {
    let mut vals = nonzero_values(spectrum);
    vals.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = vals.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, v) in vals.iter().enumerate() {
        acc += v * v;
        // Absorbs rounding when the share lands exactly on tau.
        if acc / total >= tau - 1e-12 {
            return k + 1;
        }
    }
    vals.len()
}

/// `m × d` matrix of penultimate activations.
pub fn representation_matrix(ckpt: &Checkpoint, x: &Matrix) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("representation of zero samples".into()));
    }
    Ok(net::forward(ckpt, x)?.penultimate)
}

pub fn representation_spectrum(ckpt: &Checkpoint, x: &Matrix) -> Result<SpectralSummary> {
    linalg::singular_values(&representation_matrix(ckpt, x)?)
}

/// Gram matrix of per-sample output gradients, `N × N`.
pub fn entk_matrix(ckpt: &Checkpoint, x: &Matrix) -> Result<Matrix> {
    Ok(net::output_jacobian(ckpt, x)?.gram_rows())
}

/// Eigenvalues of the eNTK, descending. Taken from the smaller of `JJᵀ` and
/// `JᵀJ`, which share their nonzero spectrum.
pub fn entk_spectrum(ckpt: &Checkpoint, x: &Matrix) -> Result<SpectralSummary> {
    let jac = net::output_jacobian(ckpt, x)?;
    let gram = if jac.rows() <= jac.cols() {
        jac.gram_rows()
    } else {
        jac.gram_cols()
    };
    let mut values = linalg::psd_eigvals(&gram)?;
    values.truncate(jac.rows().min(jac.cols()));
    Ok(SpectralSummary::new(values, SpectrumKind::SingularValues))
}

/// Energy rank of the absolute eigenvalues of the finite-difference Hessian.
pub fn hessian_energy_rank_exact(ckpt: &Checkpoint, valset: &Dataset, loss: LossKind, tau: f64, cap: usize) -> Result<usize> {
    let h = net::hessian_exact(ckpt, valset, loss, cap)?;
    Ok(energy_rank(&linalg::sym_eigvals(&h)?.abs(), tau))
}

/// Energy rank of `GᵀG` where the columns of `G` are per-sample loss
/// gradients of `b` pairs drawn from `valset`.
pub fn hessian_gram_energy_rank<R: Rng + ?Sized>(
    ckpt: &Checkpoint,
    valset: &Dataset,
    loss: LossKind,
    b: usize,
    rng: &mut R,
    tau: f64,
) -> Result<usize> {
    if valset.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    if b == 0 || b > valset.len() {
        return Err(Error::InvalidArgument(format!(
            "Gram sample size {b} must be in 1..={}",
            valset.len()
        )));
    }
    let idx = sample_indices(valset.len(), b, rng)?;
    let grads = net::per_sample_loss_grads(ckpt, valset, &idx, loss)?;
    let p = ckpt.theta.len();
    let mut flat = Vec::with_capacity(b * p);
    for (_, g) in &grads {
        flat.extend_from_slice(g);
    }
    // rows of `gt` are the columns of G
    let gt = Matrix::new(b, p, flat)?;
    let gram = gt.gram_rows();
    let values = linalg::psd_eigvals(&gram)?;
    Ok(energy_rank(&SpectralSummary::new(values, SpectrumKind::SingularValues), tau))
}

/// Share of hidden units whose relative mean |activation| reaches `tau_act`.
pub fn active_neuron_fraction(ckpt: &Checkpoint, x: &Matrix, tau_act: f64, eps: f64) -> Result<f64> {
    if ckpt.spec.num_hidden() == 0 {
        return Err(Error::InvalidArgument("network has no hidden layers".into()));
    }
    let trace = net::forward(ckpt, x)?;
    Ok(active_fraction_from_activations(&trace.activations, tau_act, eps))
}

/// Same statistic from activation matrices (`N × width` per layer).
pub fn active_fraction_from_activations(layers: &[Matrix], tau_act: f64, eps: f64) -> f64 {
    let mut active = 0usize;
    let mut total = 0usize;
    for a in layers {
        let (m, w) = a.shape();
        let mut mean_abs = vec![0.0; w];
        for r in 0..m {
            for (acc, v) in mean_abs.iter_mut().zip(a.row(r)) {
                *acc += v.abs();
            }
        }
        mean_abs.iter_mut().for_each(|v| *v /= m as f64);
        let layer_mean = mean_abs.iter().sum::<f64>() / w as f64;
        active += mean_abs.iter().filter(|&&s| s / (layer_mean + eps) >= tau_act).count();
        total += w;
    }
    active as f64 / total as f64
}

/// `‖g‖² / L` on the full set; 0 when `L = 0`.
pub fn gradient_strength(ckpt: &Checkpoint, valset: &Dataset, loss: LossKind) -> Result<f64> {
    let (l, g) = net::loss_and_grad(ckpt, valset, loss)?;
    Ok(if l > 0.0 { linalg::norm_sq(&g) / l } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReliabilityMode {
    MonteCarlo { batches: usize },
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityEstimate {
    /// `‖g‖² / E‖ĝ_B‖²` clamped to `[0, 1]`.
    pub value: f64,
    pub grad_sq_norm: f64,
    pub mean_batch_sq_norm: f64,
    /// The raw ratio exceeded 1 and was clamped.
    pub clamped: bool,
}

/// Largest support for which exhaustive minibatch enumeration is allowed.
pub const EXHAUSTIVE_LIMIT: u128 = 5_000_000;

/// Visits every ordered with-replacement batch of size `m` over `0..n`.
pub fn for_each_ordered_batch(n: usize, m: usize, mut f: impl FnMut(&[usize])) -> Result<()> {
    let count = (n as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::Size(format!("{n}^{m} minibatches exceed the enumeration limit")));
    }
    let mut idx = vec![0usize; m];
    loop {
        f(&idx);
        let mut pos = m;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < n {
                break;
            }
            idx[pos] = 0;
        }
    }
}

fn mean_of_rows(rows: &[Vec<f64>], idx: &[usize], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for &i in idx {
        for (o, g) in out.iter_mut().zip(&rows[i]) {
            *o += g;
        }
    }
    let s = 1.0 / idx.len() as f64;
    out.iter_mut().for_each(|v| *v *= s);
}

/// Gradient reliability with minibatches of size `m`, by Monte Carlo over
/// with-replacement batches or by exact enumeration of all `N^m` ordered
/// batches.
pub fn gradient_reliability<R: Rng + ?Sized>(
    ckpt: &Checkpoint,
    valset: &Dataset,
    loss: LossKind,
    m: usize,
    mode: ReliabilityMode,
    rng: &mut R,
) -> Result<ReliabilityEstimate> {
    if m == 0 {
        return Err(Error::InvalidArgument("minibatch size must be >= 1".into()));
    }
    let (_, g) = net::loss_and_grad(ckpt, valset, loss)?;
    let grad_sq_norm = linalg::norm_sq(&g);
    let mean_batch_sq_norm = match mode {
        ReliabilityMode::MonteCarlo { batches } => {
            if batches == 0 {
                return Err(Error::InvalidArgument("need at least one minibatch".into()));
            }
            let mut acc = 0.0;
            for _ in 0..batches {
                let idx = sample_indices(valset.len(), m, rng)?;
                let (_, gb) = net::loss_and_grad_on(ckpt, valset, &idx, loss)?;
                acc += linalg::norm_sq(&gb);
            }
            acc / batches as f64
        }
        ReliabilityMode::Exhaustive => {
            let per: Vec<Vec<f64>> = net::per_sample_loss_grads(ckpt, valset, &valset.all_indices(), loss)?
                .into_iter()
                .map(|(_, g)| g)
                .collect();
            let mut buf = vec![0.0; g.len()];
            let mut acc = 0.0;
            let mut count = 0u64;
            for_each_ordered_batch(valset.len(), m, |idx| {
                mean_of_rows(&per, idx, &mut buf);
                acc += linalg::norm_sq(&buf);
                count += 1;
            })?;
            acc / count as f64
        }
    };
    let (value, clamped) = reliability_ratio(grad_sq_norm, mean_batch_sq_norm);
    Ok(ReliabilityEstimate {
        value,
        grad_sq_norm,
        mean_batch_sq_norm,
        clamped,
    })
}

fn reliability_ratio(grad_sq: f64, batch_sq: f64) -> (f64, bool) {
    if batch_sq <= 0.0 || grad_sq == 0.0 {
        return (0.0, false);
    }
    let r = grad_sq / batch_sq;
    if r > 1.0 {
        (1.0, true)
    } else {
        (r, false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadinessBranch {
    /// `L > 0` and `E‖ĝ‖² > 0`: OR = S·R.
    Product,
    ZeroLoss,
    ZeroBatchGradient,
}

impl ReadinessBranch {
    pub fn name(&self) -> &'static str {
        match self {
            ReadinessBranch::Product => "product",
            ReadinessBranch::ZeroLoss => "zero-loss",
            ReadinessBranch::ZeroBatchGradient => "zero-batch-gradient",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Readiness {
    pub or_value: f64,
    pub strength: f64,
    pub reliability: f64,
    pub loss: f64,
    pub reliability_clamped: bool,
    pub branch: ReadinessBranch,
}

/// Optimization Readiness `S·R`, or 0 when the loss or the expected
/// minibatch gradient vanishes.
pub fn optimization_readiness<R: Rng + ?Sized>(
    ckpt: &Checkpoint,
    valset: &Dataset,
    loss: LossKind,
    m: usize,
    mode: ReliabilityMode,
    rng: &mut R,
) -> Result<Readiness> {
    let l = net::mean_loss(ckpt, valset, loss)?;
    let rel = gradient_reliability(ckpt, valset, loss, m, mode, rng)?;
    let strength = if l > 0.0 { rel.grad_sq_norm / l } else { 0.0 };
    let branch = if l <= 0.0 {
        ReadinessBranch::ZeroLoss
    } else if rel.mean_batch_sq_norm <= 0.0 {
        ReadinessBranch::ZeroBatchGradient
    } else {
        ReadinessBranch::Product
    };
    let or_value = match branch {
        ReadinessBranch::Product => strength * rel.value,
        _ => 0.0,
    };
    Ok(Readiness {
        or_value,
        strength,
        reliability: rel.value,
        loss: l,
        reliability_clamped: rel.clamped,
        branch,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMethod {
    Exact,
    Gram,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticReport {
    pub checkpoint: String,
    pub step_count: u64,
    pub task: String,
    pub seed: u64,
    pub or_value: f64,
    pub strength: f64,
    pub reliability: f64,
    pub reliability_clamped: bool,
    pub branch: ReadinessBranch,
    pub eff_rank: f64,
    pub energy_rank_repr: usize,
    /// Absent for vector-output networks.
    pub energy_rank_entk: Option<usize>,
    pub energy_rank_hessian: usize,
    pub hessian_method: HessianMethod,
    pub active_fraction: f64,
    pub loss_at_checkpoint: f64,
}

/// Column order of [`DiagnosticReport::csv_record`].
pub const REPORT_COLUMNS: [&str; 16] = [
    "checkpoint",
    "step",
    "task",
    "seed",
    "or",
    "strength",
    "reliability",
    "reliability_clamped",
    "or_branch",
    "eff_rank",
    "energy_rank_repr",
    "energy_rank_entk",
    "energy_rank_hessian",
    "hessian_method",
    "active_fraction",
    "loss",
];

/// Metric names used for ranking, with a getter each.
pub const RANKED_METRICS: [&str; 6] = [
    "or",
    "eff_rank",
    "energy_rank_repr",
    "energy_rank_entk",
    "energy_rank_hessian",
    "active_fraction",
];

impl DiagnosticReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "or" => Some(self.or_value),
            "strength" => Some(self.strength),
            "reliability" => Some(self.reliability),
            "eff_rank" => Some(self.eff_rank),
            "energy_rank_repr" => Some(self.energy_rank_repr as f64),
            "energy_rank_entk" => self.energy_rank_entk.map(|v| v as f64),
            "energy_rank_hessian" => Some(self.energy_rank_hessian as f64),
            "active_fraction" => Some(self.active_fraction),
            _ => None,
        }
    }

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.checkpoint.clone(),
            self.step_count.to_string(),
            self.task.clone(),
            self.seed.to_string(),
            fmt_f64(self.or_value),
            fmt_f64(self.strength),
            fmt_f64(self.reliability),
            self.reliability_clamped.to_string(),
            self.branch.name().to_string(),
            fmt_f64(self.eff_rank),
            self.energy_rank_repr.to_string(),
            self.energy_rank_entk.map(|v| v.to_string()).unwrap_or_default(),
            self.energy_rank_hessian.to_string(),
            match self.hessian_method {
                HessianMethod::Exact => "exact",
                HessianMethod::Gram => "gram",
            }
            .to_string(),
            fmt_f64(self.active_fraction),
            fmt_f64(self.loss_at_checkpoint),
        ]
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        REPORT_COLUMNS
            .iter()
            .zip(self.csv_record())
            .map(|(k, v)| format!("{k} = {}\n", if v.is_empty() { "NA".into() } else { v }))
            .collect()
    }
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Every applicable metric for one (checkpoint, validation set) pair.
///
/// The eNTK rank is skipped for vector outputs; above the parameter cap the
/// Hessian rank falls back to the per-sample-gradient Gram estimator.
pub fn diagnostic_report<R: Rng + ?Sized>(
    ckpt: &Checkpoint,
    task_id: &str,
    valset: &Dataset,
    loss: LossKind,
    cfg: &DiagnosticConfig,
    seed: u64,
    rng: &mut R,
) -> Result<DiagnosticReport> {
    cfg.validate()?;
    let mode = if cfg.exhaustive_reliability {
        ReliabilityMode::Exhaustive
    } else {
        ReliabilityMode::MonteCarlo {
            batches: cfg.reliability_batches,
        }
    };
    let readiness = optimization_readiness(ckpt, valset, loss, cfg.reliability_batch_size, mode, rng)?;

    let trace = net::forward(ckpt, &valset.x)?;
    let repr = linalg::singular_values(&trace.penultimate)?;
    let active_fraction = if trace.activations.is_empty() {
        return Err(Error::InvalidArgument("network has no hidden layers".into()));
    } else {
        active_fraction_from_activations(&trace.activations, cfg.tau_act, cfg.eps_act)
    };

    let energy_rank_entk = if ckpt.spec.output_dim == 1 {
        Some(energy_rank(&entk_spectrum(ckpt, &valset.x)?, cfg.tau_energy))
    } else {
        None
    };

    let (energy_rank_hessian, hessian_method) = if ckpt.theta.len() <= cfg.hessian_param_cap {
        (
            hessian_energy_rank_exact(ckpt, valset, loss, cfg.tau_energy, cfg.hessian_param_cap)?,
            HessianMethod::Exact,
        )
    } else {
        let b = cfg.hessian_gram_b.min(valset.len());
        (
            hessian_gram_energy_rank(ckpt, valset, loss, b, rng, cfg.tau_energy)?,
            HessianMethod::Gram,
        )
    };

    Ok(DiagnosticReport {
        checkpoint: ckpt.meta.run_id.clone(),
        step_count: ckpt.meta.step_count,
        task: task_id.to_string(),
        seed,
        or_value: readiness.or_value,
        strength: readiness.strength,
        reliability: readiness.reliability,
        reliability_clamped: readiness.reliability_clamped,
        branch: readiness.branch,
        eff_rank: effective_rank(&repr),
        energy_rank_repr: energy_rank(&repr, cfg.tau_energy),
        energy_rank_entk,
        energy_rank_hessian,
        hessian_method,
        active_fraction,
        loss_at_checkpoint: readiness.loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_mlp, CheckpointMeta, MlpSpec};
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sv(values: Vec<f64>) -> SpectralSummary {
        SpectralSummary::new(values, SpectrumKind::SingularValues)
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn scalar_ckpt(w: Vec<f64>) -> Checkpoint {
        let d = w.len();
        Checkpoint::new(MlpSpec::new(d, vec![], 1, false), w, CheckpointMeta::default()).unwrap()
    }

    #[test]
    fn rank_conventions() {
        let eye = linalg::singular_values(&Matrix::identity(7)).unwrap();
        assert!((effective_rank(&eye) - 7.0).abs() < 1e-12);
        assert_eq!(energy_rank(&eye, 0.99), 7);
        let zero = linalg::singular_values(&Matrix::zeros(4, 3)).unwrap();
        assert_eq!(effective_rank(&zero), 0.0);
        assert_eq!(energy_rank(&zero, 0.99), 0);
    }

    #[test]
    fn closed_form_spectra() {
        // (½ × 6, 0, 0): EffRank 6, EnRank ⌈0.99·6⌉ = 6
        let reg = sv(vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.0, 0.0]);
        assert!((effective_rank(&reg) - 6.0).abs() < 1e-12);
        assert_eq!(energy_rank(&reg, 0.99), 6);
        // (1, ½ × 6, 0): EffRank 8/2^{1/4}, EnRank ⌈0.99·10 − 3⌉ = 7
        let cls = sv(vec![1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.0]);
        assert!((effective_rank(&cls) - 8.0 / 2f64.powf(0.25)).abs() < 1e-12);
        assert!((effective_rank(&cls) - 6.7272).abs() < 1e-4);
        assert_eq!(energy_rank(&cls, 0.99), 7);
        // 4²/(4²+1²) = 0.94 < 0.99
        assert_eq!(energy_rank(&sv(vec![4.0, 1.0]), 0.99), 2);
        assert_eq!(energy_rank(&sv(vec![4.0, 1.0]), 0.9), 1);
    }

    #[test]
    fn active_fraction_hand_cases() {
        let equal = Matrix::new(3, 4, vec![2.0; 12]).unwrap();
        assert_eq!(active_fraction_from_activations(&[equal.clone()], 0.1, 1e-8), 1.0);
        let dead = Matrix::zeros(3, 4);
        assert_eq!(active_fraction_from_activations(&[equal, dead], 0.1, 1e-8), 0.5);
        // per-neuron means (10, 0, 0, 0, 0): layer mean 2, scores (5, 0, ...)
        let one_hot = Matrix::new(2, 5, vec![10.0, 0.0, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(active_fraction_from_activations(&[one_hot], 0.1, 1e-8), 0.2);

        let lin = scalar_ckpt(vec![1.0, 2.0]);
        assert!(active_neuron_fraction(&lin, &Matrix::zeros(2, 2), 0.1, 1e-8).is_err());
    }

    #[test]
    fn representation_matrix_rows() {
        let ck = init_mlp(&MlpSpec::new(3, vec![4, 5], 1, true), 2).unwrap();
        let x = random_matrix(6, 3, 8);
        let phi = representation_matrix(&ck, &x).unwrap();
        assert_eq!(phi.shape(), (6, 5));
        for r in 0..6 {
            let single = Matrix::new(1, 3, x.row(r).to_vec()).unwrap();
            let one = representation_matrix(&ck, &single).unwrap();
            assert_eq!(one.shape(), (1, 5));
            assert_eq!(one.row(0), phi.row(r));
        }
    }

    #[test]
    fn entk_is_psd_and_spectra_agree() {
        let ck = init_mlp(&MlpSpec::new(3, vec![6, 4], 1, true), 4).unwrap();
        let x = random_matrix(10, 3, 5);
        let k = entk_matrix(&ck, &x).unwrap();
        let ev = linalg::sym_eigvals(&k).unwrap().values;
        assert!(*ev.last().unwrap() >= -1e-9);
        let fast = entk_spectrum(&ck, &x).unwrap().values;
        for (a, b) in ev.iter().zip(&fast) {
            assert!((a.max(0.0) - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
        let vec_out = init_mlp(&MlpSpec::new(3, vec![4], 2, true), 0).unwrap();
        assert!(matches!(entk_matrix(&vec_out, &x), Err(Error::Unsupported(_))));
    }

    fn data_from(x: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        let n = y.len();
        Dataset::new(Matrix::from_rows(&x).unwrap(), Matrix::new(n, 1, y).unwrap()).unwrap()
    }

    #[test]
    fn hessian_ranks() {
        // ½(2θ₁ − y)² + ½(θ₂ − y)² style data with Hessian diag(4, 1) after averaging
        let data = data_from(vec![vec![2.0 * 2f64.sqrt(), 0.0], vec![0.0, 2f64.sqrt()]], vec![0.3, -0.2]);
        let ck = scalar_ckpt(vec![0.1, 0.4]);
        let h = net::hessian_exact(&ck, &data, LossKind::MseHalf, 100).unwrap();
        assert!((h.get(0, 0) - 4.0).abs() < 1e-6 && (h.get(1, 1) - 1.0).abs() < 1e-6);
        assert_eq!(hessian_energy_rank_exact(&ck, &data, LossKind::MseHalf, 0.99, 100).unwrap(), 2);

        let flat = data_from(vec![vec![0.0, 0.0]], vec![1.0]);
        assert_eq!(hessian_energy_rank_exact(&ck, &flat, LossKind::MseHalf, 0.99, 100).unwrap(), 0);
        assert!(matches!(
            hessian_energy_rank_exact(&ck, &flat, LossKind::MseHalf, 0.99, 1),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn gram_rank_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // identical samples → identical gradients → rank 1
        let same = data_from(vec![vec![1.0, 2.0]; 5], vec![0.5; 5]);
        let ck = scalar_ckpt(vec![0.3, -0.1]);
        assert_eq!(hessian_gram_energy_rank(&ck, &same, LossKind::MseHalf, 4, &mut rng, 0.99).unwrap(), 1);

        // orthogonal equal-norm gradients: x = e_i, residual -1 each
        let n = 8;
        let eye: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let orth = data_from(eye, vec![1.0; n]);
        let ck = scalar_ckpt(vec![0.0; n]);
        // draw every sample exactly once by using the whole set as a batch
        let grads = net::per_sample_loss_grads(&ck, &orth, &orth.all_indices(), LossKind::MseHalf).unwrap();
        let flat: Vec<f64> = grads.into_iter().flat_map(|(_, g)| g).collect();
        let gram = Matrix::new(n, n, flat).unwrap().gram_rows();
        let r = energy_rank(&sv(linalg::psd_eigvals(&gram).unwrap()), 0.99);
        assert_eq!(r, (0.99 * n as f64).ceil() as usize);

        assert!(hessian_gram_energy_rank(&ck, &orth, LossKind::MseHalf, 9, &mut rng, 0.99).is_err());
    }

    #[test]
    fn gram_rank_matches_direct_svd() {
        let ck = init_mlp(&MlpSpec::new(3, vec![4], 1, true), 6).unwrap();
        let x = random_matrix(12, 3, 1);
        let y = Matrix::new(12, 1, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let data = Dataset::new(x, y).unwrap();
        let seed = 44;
        let got = hessian_gram_energy_rank(&ck, &data, LossKind::MseHalf, 6, &mut ChaCha8Rng::seed_from_u64(seed), 0.9)
            .unwrap();
        let idx = sample_indices(12, 6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let g = net::per_sample_loss_grads(&ck, &data, &idx, LossKind::MseHalf).unwrap();
        let gm = Matrix::new(6, ck.theta.len(), g.into_iter().flat_map(|(_, v)| v).collect()).unwrap();
        let s = linalg::singular_values(&gm).unwrap();
        let squared = sv(s.values.iter().map(|v| v * v).collect());
        assert_eq!(got, energy_rank(&squared, 0.9));
    }

    #[test]
    fn strength_hand_case() {
        // ½(θ − 1)² at θ = 0: g = −1, L = ½ → S = 2
        let data = data_from(vec![vec![1.0]], vec![1.0]);
        let ck = scalar_ckpt(vec![0.0]);
        assert!((gradient_strength(&ck, &data, LossKind::MseHalf).unwrap() - 2.0).abs() < 1e-15);
        let at_opt = scalar_ckpt(vec![1.0]);
        assert_eq!(gradient_strength(&at_opt, &data, LossKind::MseHalf).unwrap(), 0.0);
    }

    #[test]
    fn reliability_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let single = data_from(vec![vec![1.0, -2.0]], vec![3.0]);
        let ck = scalar_ckpt(vec![0.5, 0.5]);
        let mc = gradient_reliability(&ck, &single, LossKind::MseHalf, 3, ReliabilityMode::MonteCarlo { batches: 10 }, &mut rng)
            .unwrap();
        assert!((mc.value - 1.0).abs() < 1e-12);

        // two points with opposite gradients, g = 0
        let sym = data_from(vec![vec![1.0], vec![1.0]], vec![1.0, -1.0]);
        let ck = scalar_ckpt(vec![0.0]);
        let r = gradient_reliability(&ck, &sym, LossKind::MseHalf, 1, ReliabilityMode::Exhaustive, &mut rng).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.mean_batch_sq_norm > 0.0);
        let or = optimization_readiness(&ck, &sym, LossKind::MseHalf, 1, ReliabilityMode::Exhaustive, &mut rng).unwrap();
        assert_eq!(or.or_value, 0.0);
        assert_eq!(or.strength, 0.0);
    }

    #[test]
    fn readiness_zero_loss_branch() {
        let data = data_from(vec![vec![1.0], vec![2.0]], vec![2.0, 4.0]);
        let ck = scalar_ckpt(vec![2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let or = optimization_readiness(&ck, &data, LossKind::MseHalf, 2, ReliabilityMode::Exhaustive, &mut rng).unwrap();
        assert_eq!(or.or_value, 0.0);
        assert_eq!(or.branch, ReadinessBranch::ZeroLoss);
    }

    #[test]
    fn ordered_batch_enumeration() {
        let mut seen = Vec::new();
        for_each_ordered_batch(3, 2, |b| seen.push(b.to_vec())).unwrap();
        assert_eq!(seen.len(), 9);
        assert_eq!(seen[0], vec![0, 0]);
        assert_eq!(seen[8], vec![2, 2]);
        assert!(for_each_ordered_batch(1000, 4, |_| {}).is_err());
    }

    #[test]
    fn report_is_complete_and_repeatable() {
        let spec = MlpSpec::new(4, vec![5, 5], 1, true);
        let ck = init_mlp(&spec, 3).unwrap();
        let x = random_matrix(40, 4, 2);
        let y = Matrix::new(40, 1, (0..40).map(|i| (i as f64).cos()).collect()).unwrap();
        let data = Dataset::new(x, y).unwrap();
        let cfg = DiagnosticConfig::default();
        let run = |s| diagnostic_report(&ck, "t", &data, LossKind::MseHalf, &cfg, s, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        let a = run(7);
        assert_eq!(a, run(7));
        assert!(a.energy_rank_entk.is_some());
        assert_eq!(a.hessian_method, HessianMethod::Exact);
        for m in RANKED_METRICS {
            assert!(a.metric(m).unwrap().is_finite(), "{m}");
        }
        assert_eq!(a.csv_record().len(), REPORT_COLUMNS.len());
        assert!(a.to_text().contains("or = "));

        let vec_spec = MlpSpec::new(4, vec![5], 3, true);
        let vck = init_mlp(&vec_spec, 3).unwrap();
        let labels = Matrix::new(40, 1, (0..40).map(|i| (i % 3) as f64).collect()).unwrap();
        let cdata = Dataset::new(data.x.clone(), labels).unwrap();
        let small_cap = DiagnosticConfig {
            hessian_param_cap: 10,
            hessian_gram_b: 16,
            ..cfg
        };
        let b = diagnostic_report(&vck, "t", &cdata, LossKind::CrossEntropy, &small_cap, 0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(b.energy_rank_entk, None);
        assert_eq!(b.hessian_method, HessianMethod::Gram);
        assert!(b.csv_record()[11].is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn effective_rank_bounds_and_scale_invariance(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>(), c in 0.1f64..10.0, neg in any::<bool>()) {
            let z = random_matrix(rows, cols, seed);
            let s = linalg::singular_values(&z).unwrap();
            let c = if neg { -c } else { c };
            let sc = linalg::singular_values(&z.scale(c)).unwrap();
            let (e, esc) = (effective_rank(&s), effective_rank(&sc));
            prop_assert!((e - esc).abs() < 1e-9);
            let rank = nonzero_values(&s).len();
            prop_assert!(e >= 1.0 - 1e-12 && e <= rank as f64 + 1e-9);
            prop_assert!(energy_rank(&s, 0.99) <= rank);
        }
    }
}

//! Two-layer ReLU checkpoints whose rank diagnostics look healthy while
//! full-support gradient descent makes no progress, together with the
//! Rademacher initialization that escapes, and a numerical certifier for
//! both.
//!
//! The net is `f(x) = vᵀ ReLU(W x)` with `W ∈ ℝ^{M×n}`, `v = 0`, and the
//! support is `{e_1, …, e_n}`.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diagnostics::{self, fmt_f64};
use crate::error::{Error, Result};
use crate::gain;
use crate::linalg::{self, Matrix};
use crate::net::{self, Checkpoint, CheckpointMeta, LossKind, MlpSpec};
use crate::seeds::{derive_seed, rng_for};
use crate::tasks::Task;

/// Hidden-unit scale on the stuck checkpoint.
pub const ALPHA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Regression,
    Classification,
}

impl Kind {
    pub fn name(&self) -> &'static str {
        match self {
            Kind::Regression => "regression",
            Kind::Classification => "classification",
        }
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" | "reg" => Ok(Kind::Regression),
            "classification" | "cls" => Ok(Kind::Classification),
            other => Err(Error::InvalidArgument(format!(
                "unknown counterexample kind {other:?} (regression|classification)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleConfig {
    pub n: usize,
    /// Hidden width `M`.
    pub width: usize,
    pub m_gap: f64,
    pub delta: f64,
    pub seed: u64,
    /// Random-initialization trials for the escape clause.
    pub trials: usize,
    /// Share of trials that must reach the gain target.
    pub success_fraction: f64,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            n: 8,
            width: 65_536,
            m_gap: 10.0,
            delta: 0.1,
            seed: 0,
            trials: 20,
            success_fraction: 0.9,
        }
    }
}

impl CounterexampleConfig {
    pub fn validate(&self, kind: Kind) -> Result<()> {
        check_dims(kind, self.n, self.width)?;
        if !(self.m_gap > 1.0) {
            return Err(Error::InvalidArgument("M_gap must exceed 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument("delta must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.success_fraction) {
            return Err(Error::InvalidArgument("success_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Step size at which the random initialization is expected to escape.
    pub fn escape_eta(&self, kind: Kind) -> f64 {
        let (n, m) = (self.n as f64, self.width as f64);
        match kind {
            Kind::Regression => 2.0 * n * n / m,
            Kind::Classification => 4.0 * gamma(self.m_gap) * n * n / m,
        }
    }
}

/// `log(2 M_gap / log 2)`.
pub fn gamma(m_gap: f64) -> f64 {
    (2.0 * m_gap / std::f64::consts::LN_2).ln()
}

fn check_dims(kind: Kind, n: usize, width: usize) -> Result<()> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!("support size n = {n} must be at least 4")));
    }
    if width < n {
        return Err(Error::InvalidArgument(format!("width M = {width} must be at least n = {n}")));
    }
    if kind == Kind::Classification && n % 2 == 1 {
        return Err(Error::InvalidArgument(format!("classification needs an even n, got {n}")));
    }
    Ok(())
}

fn two_layer_spec(n: usize, width: usize) -> MlpSpec {
    MlpSpec::new(n, vec![width], 1, false)
}

/// Checkpoint from a hidden weight function `w(j, i)`, readout zero.
fn zero_readout_ckpt(n: usize, width: usize, run_id: &str, w: impl Fn(usize, usize) -> f64) -> Checkpoint {
    let spec = two_layer_spec(n, width);
    let mut theta = vec![0.0; spec.param_count()];
    for j in 0..width {
        for i in 0..n {
            theta[j * n + i] = w(j, i);
        }
    }
    let meta = CheckpointMeta {
        run_id: run_id.to_string(),
        initializer: "constructed".into(),
        ..CheckpointMeta::default()
    };
    Checkpoint::new(spec, theta, meta).expect("finite construction")
}

/// Support `{e_i}` with the given per-point labels.
pub fn unit_support(labels: &[f64]) -> Dataset {
    let n = labels.len();
    Dataset::new(Matrix::identity(n), Matrix::new(n, 1, labels.to_vec()).expect("n labels")).expect("n rows")
}

/// `e_{n−1} − e_n`.
pub fn regression_labels(n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    y[n - 2] = 1.0;
    y[n - 1] = -1.0;
    y
}

/// First half labelled 1, second half 0.
pub fn classification_labels(n: usize) -> Vec<f64> {
    (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect()
}

/// `I + (J − SSᵀ)/n` for the centered sign vector `S = 2y − 1`.
pub fn b_cls(n: usize) -> Matrix {
    let s: Vec<f64> = classification_labels(n).iter().map(|y| 2.0 * y - 1.0).collect();
    let mut b = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            b.set(i, j, b.get(i, j) + (1.0 - s[i] * s[j]) / n as f64);
        }
    }
    b
}

/// Stuck regression checkpoint: `W_{j,i} = α` on the first `n − 2` diagonal
/// entries and −1 elsewhere, with squared loss on `e_{n−1} − e_n`.
pub fn theta_pre_regression(n: usize, width: usize) -> Result<(Checkpoint, Task)> {
    check_dims(Kind::Regression, n, width)?;
    let ck = zero_readout_ckpt(n, width, &format!("theta-pre-reg-{n}-{width}"), |j, i| {
        if j == i && i < n - 2 {
            ALPHA
        } else {
            -1.0
        }
    });
    let task = Task::finite(format!("reg-{n}"), unit_support(&regression_labels(n)), LossKind::MseHalf);
    Ok((ck, task))
}

/// Stuck classification checkpoint realizing `ReLU(W e_i) = α B_cls e_i`
/// (zero-padded), with logistic loss on half-and-half labels.
pub fn theta_pre_classification(n: usize, width: usize) -> Result<(Checkpoint, Task)> {
    check_dims(Kind::Classification, n, width)?;
    let b = b_cls(n);
    let ck = zero_readout_ckpt(n, width, &format!("theta-pre-cls-{n}-{width}"), |j, i| {
        if j < n && b.get(i, j) > 0.0 {
            ALPHA * b.get(i, j)
        } else {
            -1.0
        }
    });
    let task = Task::finite(
        format!("cls-{n}"),
        unit_support(&classification_labels(n)),
        LossKind::Logistic01,
    );
    Ok((ck, task))
}

pub fn theta_pre(kind: Kind, n: usize, width: usize) -> Result<(Checkpoint, Task)> {
    match kind {
        Kind::Regression => theta_pre_regression(n, width),
        Kind::Classification => theta_pre_classification(n, width),
    }
}

/// Rademacher hidden layer scaled by `√(2/n)`, readout zero.
pub fn theta_rand(n: usize, width: usize, seed: u64) -> Checkpoint {
    let scale = (2.0 / n as f64).sqrt();
    let mut rng = rng_for(seed, "theta-rand", 0);
    let signs: Vec<bool> = (0..width * n).map(|_| rng.gen()).collect();
    let mut ck = zero_readout_ckpt(n, width, &format!("theta-rand-{n}-{width}-{seed}"), |j, i| {
        if signs[j * n + i] {
            scale
        } else {
            -scale
        }
    });
    ck.meta.seed = seed;
    ck.meta.initializer = "rademacher(sqrt(2/n))".into();
    ck
}

/// `ΦΦᵀ/n` for the hidden features on `{e_i}`.
pub fn feature_gram(ck: &Checkpoint) -> Result<Matrix> {
    let n = ck.spec.input_dim;
    let phi = net::forward(ck, &Matrix::identity(n))?.penultimate;
    Ok(phi.gram_rows().scale(1.0 / n as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedForm {
    pub eff_rank: f64,
    pub enrank_repr: usize,
    pub enrank_entk: usize,
    pub loss: f64,
}

/// `⌈(99a − 100b)/100⌉`, i.e. `⌈0.99a − b⌉`, in integers and at least 1.
fn ceil_099(a: i64, b: i64) -> usize {
    let num = 99 * a - 100 * b;
    let q = num.div_euclid(100) + i64::from(num.rem_euclid(100) != 0);
    q.max(1) as usize
}

/// Predicted rank metrics and loss at the stuck checkpoint.
pub fn closed_form_metrics(kind: Kind, n: usize) -> Result<ClosedForm> {
    check_dims(kind, n, n)?;
    let ni = n as i64;
    Ok(match kind {
        Kind::Regression => ClosedForm {
            eff_rank: (n - 2) as f64,
            enrank_repr: ceil_099(ni - 2, 0),
            enrank_entk: ceil_099(ni - 2, 0),
            loss: 1.0 / n as f64,
        },
        Kind::Classification => ClosedForm {
            eff_rank: n as f64 / 2f64.powf(2.0 / n as f64),
            enrank_repr: ceil_099(ni + 2, 3),
            enrank_entk: ceil_099(ni + 14, 15),
            loss: std::f64::consts::LN_2,
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub clause: &'static str,
    pub name: String,
    pub predicted: f64,
    pub measured: f64,
    /// Allowed `|measured − predicted|`; 0 for exact integer matches.
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(clause: &'static str, name: impl Into<String>, predicted: f64, measured: f64, tolerance: f64) -> Self {
        let pass = (measured - predicted).abs() <= tolerance;
        Self {
            clause,
            name: name.into(),
            predicted,
            measured,
            tolerance,
            pass,
        }
    }

    /// One-sided `measured ≤ bound`.
    fn at_most(clause: &'static str, name: impl Into<String>, bound: f64, measured: f64) -> Self {
        Self {
            clause,
            name: name.into(),
            predicted: 0.0,
            measured,
            tolerance: bound,
            pass: measured.abs() <= bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EscapeTrial {
    pub seed: u64,
    pub gain: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificationReport {
    pub kind: Kind,
    pub config: CounterexampleConfig,
    pub checks: Vec<Check>,
    pub escape_eta: f64,
    pub escape_target: f64,
    pub trials: Vec<EscapeTrial>,
}

/// Step counts and sizes used for the stuck-checkpoint clause.
pub const STUCK_KS: [usize; 3] = [1, 10, 100];
pub const STUCK_ETAS: [f64; 3] = [0.1, 1.0, 10.0];

/// Tolerance on effective rank.
pub const EFF_RANK_TOL: f64 = 1e-6;
/// Tolerance on loss, gradient norm, zero gains and the eigenvalue identity.
pub const EXACT_TOL: f64 = 1e-12;
pub const LEMMA2_TOL: f64 = 1e-9;

impl CertificationReport {
    /// Clauses (i) and (ii), which are deterministic.
    pub fn deterministic_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn successes(&self) -> usize {
        self.trials.iter().filter(|t| t.success).count()
    }

    pub fn escape_pass(&self) -> bool {
        !self.trials.is_empty() && self.successes() as f64 >= self.config.success_fraction * self.trials.len() as f64
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = format!(
            "counterexample {} n={} M={} M_gap={} seed={}\n",
            self.kind.name(),
            c.n,
            c.width,
            c.m_gap,
            c.seed
        );
        for ch in &self.checks {
            let _ = writeln!(
                s,
                "  ({}) {:<28} predicted {:<24} measured {:<24} tol {:<8} {}",
                ch.clause,
                ch.name,
                fmt_f64(ch.predicted),
                fmt_f64(ch.measured),
                fmt_f64(ch.tolerance),
                if ch.pass { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            s,
            "  (iii) random init, eta={}: {}/{} trials reach gain >= {} (need {:.0}%) {}",
            fmt_f64(self.escape_eta),
            self.successes(),
            self.trials.len(),
            fmt_f64(self.escape_target),
            100.0 * c.success_fraction,
            if self.escape_pass() { "PASS" } else { "FAIL" }
        );
        let _ = writeln!(
            s,
            "  note: (iii) is a high-probability statement (delta={}); individual seeds may miss",
            c.delta
        );
        s
    }

    pub const CSV_COLUMNS: [&'static str; 7] = ["kind", "clause", "check", "predicted", "measured", "tolerance", "pass"];

    pub fn csv_records(&self) -> Vec<Vec<String>> {
        let mut rows: Vec<Vec<String>> = self
            .checks
            .iter()
            .map(|ch| {
                vec![
                    self.kind.name().to_string(),
                    ch.clause.to_string(),
                    ch.name.clone(),
                    fmt_f64(ch.predicted),
                    fmt_f64(ch.measured),
                    fmt_f64(ch.tolerance),
                    ch.pass.to_string(),
                ]
            })
            .collect();
        for t in &self.trials {
            rows.push(vec![
                self.kind.name().to_string(),
                "iii".into(),
                format!("escape_gain_seed_{}", t.seed),
                fmt_f64(self.escape_target),
                fmt_f64(t.gain),
                String::new(),
                t.success.to_string(),
            ]);
        }
        rows
    }
}

/// Stuck-checkpoint clauses (i)–(ii), measured through the diagnostics and
/// gain code and compared against the closed forms.
pub fn stuck_checks(kind: Kind, n: usize, width: usize) -> Result<Vec<Check>> {
    let (ck, task) = theta_pre(kind, n, width)?;
    let data = task.support().expect("finite");
    let predicted = closed_form_metrics(kind, n)?;
    let tau = 0.99;

    let repr = diagnostics::representation_spectrum(&ck, &data.x)?;
    let entk = diagnostics::entk_spectrum(&ck, &data.x)?;
    let mut checks = vec![
        Check::new("i", "eff_rank", predicted.eff_rank, diagnostics::effective_rank(&repr), EFF_RANK_TOL),
        Check::new(
            "i",
            "energy_rank_repr",
            predicted.enrank_repr as f64,
            diagnostics::energy_rank(&repr, tau) as f64,
            0.0,
        ),
        Check::new(
            "i",
            "energy_rank_entk",
            predicted.enrank_entk as f64,
            diagnostics::energy_rank(&entk, tau) as f64,
            0.0,
        ),
    ];
    // eNTK eigenvalues are the squared representation singular values
    let squared: Vec<f64> = repr.values.iter().map(|s| s * s).collect();
    let gap = squared
        .iter()
        .chain(std::iter::repeat(&0.0))
        .zip(&entk.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    checks.push(Check::at_most("i", "entk_eq_repr_squared", LEMMA2_TOL, gap));

    let (loss, grad) = net::loss_and_grad(&ck, data, task.loss)?;
    checks.push(Check::new("ii", "loss_at_pre", predicted.loss, loss, EXACT_TOL));
    checks.push(Check::at_most("ii", "grad_norm_at_pre", EXACT_TOL, linalg::norm_sq(&grad).sqrt()));

    let q = gain::output_residuals(&ck, data, task.loss)?;
    let phi = net::forward(&ck, &data.x)?.penultimate;
    let phit_q = phi.transpose().matvec(&q)?;
    checks.push(Check::at_most("ii", "phi_t_q", EXACT_TOL, linalg::norm_sq(&phit_q).sqrt()));

    for eta in STUCK_ETAS {
        let gains = gain::full_support_gains(&ck, &task, &STUCK_KS, eta)?;
        for (k, g) in STUCK_KS.iter().zip(gains) {
            checks.push(Check::at_most("ii", format!("full_gain_k{k}_eta{eta}"), EXACT_TOL, g));
        }
    }
    Ok(checks)
}

/// One escape trial: full-support one-step gain from `theta_rand`.
pub fn escape_gain(kind: Kind, cfg: &CounterexampleConfig, trial: usize) -> Result<(u64, f64)> {
    let seed = derive_seed(cfg.seed, "escape-trial", trial as u64);
    let ck = theta_rand(cfg.n, cfg.width, seed);
    let labels = match kind {
        Kind::Regression => regression_labels(cfg.n),
        Kind::Classification => classification_labels(cfg.n),
    };
    let loss = match kind {
        Kind::Regression => LossKind::MseHalf,
        Kind::Classification => LossKind::Logistic01,
    };
    let task = Task::finite(format!("{}-{}", kind.name(), cfg.n), unit_support(&labels), loss);
    Ok((seed, gain::full_support_gain(&ck, &task, 1, cfg.escape_eta(kind))?))
}

/// Certifies every clause. Component failures are recorded in the report;
/// only invalid configurations return an error.
pub fn certify(cfg: &CounterexampleConfig, kind: Kind) -> Result<CertificationReport> {
    cfg.validate(kind)?;
    let checks = stuck_checks(kind, cfg.n, cfg.width)?;
    let escape_target = 1.0 - 1.0 / cfg.m_gap;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            escape_gain(kind, cfg, t).map(|(seed, gain)| EscapeTrial {
                seed,
                gain,
                success: gain >= escape_target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CertificationReport {
        kind,
        config: cfg.clone(),
        checks,
        escape_eta: cfg.escape_eta(kind),
        escape_target,
        trials,
    })
}

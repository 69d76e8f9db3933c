//! ReLU multi-layer perceptrons over a flat parameter vector, with
//! hand-written reverse-mode gradients and SGD / Adam updates.
//!
//! Parameter layout, layer by layer: the weight matrix row-major
//! (`fan_out × fan_in`), then the bias vector when biases are enabled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub use_bias: bool,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: Option<usize>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize, use_bias: bool) -> Self {
        Self {
            input_dim,
            hidden_widths,
            output_dim,
            use_bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "all layer widths must be at least 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<Layer> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_widths);
        dims.push(self.output_dim);
        let mut off = 0;
        dims.windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let w_off = off;
                off += fan_in * fan_out;
                let b_off = self.use_bias.then(|| {
                    let b = off;
                    off += fan_out;
                    b
                });
                Layer {
                    fan_in,
                    fan_out,
                    w_off,
                    b_off,
                }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.fan_in * l.fan_out + if l.use_bias() { l.fan_out } else { 0 })
            .sum()
    }

    pub fn num_hidden(&self) -> usize {
        self.hidden_widths.len()
    }

    /// Width of the penultimate representation.
    pub fn representation_dim(&self) -> usize {
        self.hidden_widths.last().copied().unwrap_or(self.input_dim)
    }

    /// Parameter range of layer `i` (0 = first layer), weights and bias.
    pub fn layer_range(&self, i: usize) -> std::ops::Range<usize> {
        let l = self.layers()[i];
        let end = l.b_off.map_or(l.w_off + l.fan_in * l.fan_out, |b| b + l.fan_out);
        l.w_off..end
    }

    /// Compact, stable text form used for hashing and file names.
    pub fn descriptor(&self) -> String {
        let hidden: Vec<String> = self.hidden_widths.iter().map(|w| w.to_string()).collect();
        format!(
            "mlp:{}-[{}]-{}:{}",
            self.input_dim,
            hidden.join(","),
            self.output_dim,
            if self.use_bias { "bias" } else { "nobias" }
        )
    }
}

impl Layer {
    fn use_bias(&self) -> bool {
        self.b_off.is_some()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub run_id: String,
    pub task_index: usize,
    pub step_count: u64,
    pub seed: u64,
    #[serde(default)]
    pub initializer: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub theta: Vec<f64>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(spec: MlpSpec, theta: Vec<f64>, meta: CheckpointMeta) -> Result<Self> {
        spec.validate()?;
        if theta.len() != spec.param_count() {
            return Err(Error::Dimension(format!(
                "theta has {} entries, spec {} needs {}",
                theta.len(),
                spec.descriptor(),
                spec.param_count()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("checkpoint parameters must be finite".into()));
        }
        Ok(Self { spec, theta, meta })
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Checkpoint {
        Checkpoint {
            spec: self.spec.clone(),
            theta,
            meta: self.meta.clone(),
        }
    }
}

pub const INITIALIZER: &str = "uniform(+-sqrt(6/fan_in)), zero bias";

/// Weights uniform on `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, biases zero.
pub fn init_mlp(spec: &MlpSpec, seed: u64) -> Result<Checkpoint> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; spec.param_count()];
    for l in spec.layers() {
        let bound = (6.0 / l.fan_in as f64).sqrt();
        for w in &mut theta[l.w_off..l.w_off + l.fan_in * l.fan_out] {
            *w = rng.gen_range(-bound..bound);
        }
    }
    Checkpoint::new(
        spec.clone(),
        theta,
        CheckpointMeta {
            seed,
            initializer: INITIALIZER.into(),
            ..Default::default()
        },
    )
}

/// Pointwise losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `½‖z − y‖²`
    MseHalf,
    /// `mean_o (z_o − y_o)²`
    MseMean,
    /// `log(1 + eᶻ) − yz` with `y ∈ {0, 1}`
    Logistic01,
    /// softmax cross-entropy, target is a class index
    CrossEntropy,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::MseHalf => "mse-half",
            LossKind::MseMean => "mse-mean",
            LossKind::Logistic01 => "logistic-01",
            LossKind::CrossEntropy => "cross-entropy",
        }
    }

    pub fn check_targets(&self, output_dim: usize, y: &Matrix) -> Result<()> {
        self.check_target_rows(output_dim, y, 0..y.rows())
    }

    /// [`check_targets`](Self::check_targets) restricted to the listed rows.
    fn check_target_rows(&self, output_dim: usize, y: &Matrix, rows: impl IntoIterator<Item = usize>) -> Result<()> {
        let mut values = rows.into_iter().flat_map(|r| y.row(r).iter().copied());
        let bad = |msg: String| Err(Error::Dimension(msg));
        match self {
            LossKind::MseHalf | LossKind::MseMean => {
                if y.cols() != output_dim {
                    return bad(format!("{} targets per sample for {output_dim} outputs", y.cols()));
                }
            }
            LossKind::Logistic01 => {
                if output_dim != 1 || y.cols() != 1 {
                    return bad("logistic loss needs scalar outputs and labels".into());
                }
                if values.any(|v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidArgument("logistic labels must be 0 or 1".into()));
                }
            }
            LossKind::CrossEntropy => {
                if y.cols() != 1 {
                    return bad("cross-entropy targets are single class indices".into());
                }
                if values.any(|c| c < 0.0 || c.fract() != 0.0 || c as usize >= output_dim) {
                    return Err(Error::InvalidArgument(format!(
                        "class index outside 0..{output_dim}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loss value; writes `dℓ/dz` into `dz` when given.
    pub fn eval(&self, z: &[f64], y: &[f64], dz: Option<&mut [f64]>) -> f64 {
        match self {
            LossKind::MseHalf => {
                let l = 0.5 * z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                if let Some(d) = dz {
                    for ((d, &zo), &yo) in d.iter_mut().zip(z).zip(y) {
                        *d = zo - yo;
                    }
                }
                l
            }
            LossKind::MseMean => {
                let k = z.len() as f64;
                let l = z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k;
                if let Some(d) = dz {
                    for ((d, &zo), &yo) in d.iter_mut().zip(z).zip(y) {
                        *d = 2.0 * (zo - yo) / k;
                    }
                }
                l
            }
            LossKind::Logistic01 => {
                let (zz, yy) = (z[0], y[0]);
                let softplus = zz.max(0.0) + (-zz.abs()).exp().ln_1p();
                if let Some(d) = dz {
                    d[0] = sigmoid(zz) - yy;
                }
                softplus - yy * zz
            }
            LossKind::CrossEntropy => {
                let c = y[0] as usize;
                let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - mx).exp()).sum();
                let lse = mx + sum.ln();
                if let Some(d) = dz {
                    for (o, (d, &zo)) in d.iter_mut().zip(z).enumerate() {
                        *d = (zo - lse).exp() - if o == c { 1.0 } else { 0.0 };
                    }
                }
                lse - z[c]
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Per-sample forward/backward scratch space.
struct Engine<'a> {
    theta: &'a [f64],
    layers: Vec<Layer>,
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl<'a> Engine<'a> {
    fn new(ckpt: &'a Checkpoint) -> Self {
        let layers = ckpt.spec.layers();
        let mut acts = vec![vec![0.0; ckpt.spec.input_dim]];
        acts.extend(layers.iter().map(|l| vec![0.0; l.fan_out]));
        let deltas = layers.iter().map(|l| vec![0.0; l.fan_out]).collect();
        Self {
            theta: &ckpt.theta,
            layers,
            acts,
            deltas,
        }
    }

    fn forward(&mut self, x: &[f64]) -> &[f64] {
        self.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (head, tail) = self.acts.split_at_mut(i + 1);
            let input = &head[i];
            let out = &mut tail[0];
            let w = &self.theta[l.w_off..l.w_off + l.fan_in * l.fan_out];
            for (o, dst) in out.iter_mut().enumerate() {
                let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                let s = l.b_off.map_or(0.0, |b| self.theta[b + o]) + linalg::dot(row, input);
                *dst = if i == last { s } else { relu(s) };
            }
        }
        &self.acts[self.layers.len()]
    }

    /// Backpropagates `d_out` (gradient w.r.t. the network output) through
    /// the activations of the last `forward` call, adding `scale ×` the
    /// parameter gradient into `grad`.
    fn backward(&mut self, d_out: &[f64], scale: f64, grad: &mut [f64]) {
        let n = self.layers.len();
        self.deltas[n - 1].copy_from_slice(d_out);
        for i in (0..n).rev() {
            let l = self.layers[i];
            let input = &self.acts[i];
            {
                let delta = &self.deltas[i];
                let gw = &mut grad[l.w_off..l.w_off + l.fan_in * l.fan_out];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let sd = scale * d;
                    for (g, &a) in gw[o * l.fan_in..(o + 1) * l.fan_in].iter_mut().zip(input) {
                        *g += sd * a;
                    }
                }
                if let Some(b) = l.b_off {
                    for (g, &d) in grad[b..b + l.fan_out].iter_mut().zip(delta) {
                        *g += scale * d;
                    }
                }
            }
            if i > 0 {
                let (lower, upper) = self.deltas.split_at_mut(i);
                let prev = &mut lower[i - 1];
                let delta = &upper[0];
                let w = &self.theta[l.w_off..l.w_off + l.fan_in * l.fan_out];
                prev.iter_mut().for_each(|p| *p = 0.0);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &wv) in prev.iter_mut().zip(&w[o * l.fan_in..(o + 1) * l.fan_in]) {
                        *p += d * wv;
                    }
                }
                // ReLU'(z) = 1{z > 0}, read off the stored activation.
                for (p, &a) in prev.iter_mut().zip(&self.acts[i]) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
        }
    }
}

fn check_inputs(ckpt: &Checkpoint, x: &Matrix) -> Result<()> {
    if x.cols() != ckpt.spec.input_dim {
        return Err(Error::Dimension(format!(
            "inputs have {} features, network expects {}",
            x.cols(),
            ckpt.spec.input_dim
        )));
    }
    Ok(())
}

/// Outputs and hidden activations for every row of `x`.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub output: Matrix,
    /// Post-ReLU activations, one `N × width` matrix per hidden layer.
    pub activations: Vec<Matrix>,
    /// Last hidden activation, or the raw input for a linear model.
    pub penultimate: Matrix,
}

pub fn forward(ckpt: &Checkpoint, x: &Matrix) -> Result<ForwardTrace> {
    check_inputs(ckpt, x)?;
    let spec = &ckpt.spec;
    let mut eng = Engine::new(ckpt);
    let n = x.rows();
    let mut output = Matrix::zeros(n, spec.output_dim);
    let mut activations: Vec<Matrix> = spec.hidden_widths.iter().map(|&w| Matrix::zeros(n, w)).collect();
    for r in 0..n {
        output.row_mut(r).copy_from_slice(eng.forward(x.row(r)));
        for (h, m) in activations.iter_mut().enumerate() {
            m.row_mut(r).copy_from_slice(&eng.acts[h + 1]);
        }
    }
    let penultimate = activations.last().cloned().unwrap_or_else(|| x.clone());
    Ok(ForwardTrace {
        output,
        activations,
        penultimate,
    })
}

/// Network outputs only.
pub fn predict(ckpt: &Checkpoint, x: &Matrix) -> Result<Matrix> {
    check_inputs(ckpt, x)?;
    let mut eng = Engine::new(ckpt);
    let mut out = Matrix::zeros(x.rows(), ckpt.spec.output_dim);
    for r in 0..x.rows() {
        out.row_mut(r).copy_from_slice(eng.forward(x.row(r)));
    }
    Ok(out)
}

fn check_data(ckpt: &Checkpoint, data: &Dataset, loss: LossKind) -> Result<()> {
    check_inputs(ckpt, &data.x)?;
    loss.check_targets(ckpt.spec.output_dim, &data.y)
}

/// Shapes plus the targets of the listed rows only.
fn check_batch(ckpt: &Checkpoint, data: &Dataset, idx: &[usize], loss: LossKind) -> Result<()> {
    check_inputs(ckpt, &data.x)?;
    check_indices(data, idx)?;
    loss.check_target_rows(ckpt.spec.output_dim, &data.y, idx.iter().copied())
}

fn check_indices(data: &Dataset, idx: &[usize]) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&i) = idx.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Dimension(format!("sample index {i} out of {}", data.len())));
    }
    Ok(())
}

/// Mean loss over the samples listed in `idx`.
pub fn loss_on(ckpt: &Checkpoint, data: &Dataset, idx: &[usize], loss: LossKind) -> Result<f64> {
    check_batch(ckpt, data, idx, loss)?;
    let mut eng = Engine::new(ckpt);
    let total: f64 = idx
        .iter()
        .map(|&i| {
            let z = eng.forward(data.x.row(i));
            loss.eval(z, data.y.row(i), None)
        })
        .sum();
    Ok(total / idx.len() as f64)
}

/// Mean loss over the whole dataset.
pub fn mean_loss(ckpt: &Checkpoint, data: &Dataset, loss: LossKind) -> Result<f64> {
    loss_on(ckpt, data, &data.all_indices(), loss)
}

/// Mean loss over `idx` and its gradient with respect to `theta`.
pub fn loss_and_grad_on(
    ckpt: &Checkpoint,
    data: &Dataset,
    idx: &[usize],
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    check_batch(ckpt, data, idx, loss)?;
    let mut eng = Engine::new(ckpt);
    let mut grad = vec![0.0; ckpt.theta.len()];
    let mut dz = vec![0.0; ckpt.spec.output_dim];
    let scale = 1.0 / idx.len() as f64;
    let mut total = 0.0;
    for &i in idx {
        let z = eng.forward(data.x.row(i));
        total += loss.eval(z, data.y.row(i), Some(&mut dz));
        eng.backward(&dz, scale, &mut grad);
    }
    Ok((total * scale, grad))
}

pub fn loss_and_grad(ckpt: &Checkpoint, data: &Dataset, loss: LossKind) -> Result<(f64, Vec<f64>)> {
    loss_and_grad_on(ckpt, data, &data.all_indices(), loss)
}

/// Loss and gradient of each listed sample separately.
pub fn per_sample_loss_grads(
    ckpt: &Checkpoint,
    data: &Dataset,
    idx: &[usize],
    loss: LossKind,
) -> Result<Vec<(f64, Vec<f64>)>> {
    check_batch(ckpt, data, idx, loss)?;
    let mut eng = Engine::new(ckpt);
    let mut dz = vec![0.0; ckpt.spec.output_dim];
    Ok(idx
        .iter()
        .map(|&i| {
            let z = eng.forward(data.x.row(i));
            let l = loss.eval(z, data.y.row(i), Some(&mut dz));
            let mut g = vec![0.0; ckpt.theta.len()];
            eng.backward(&dz, 1.0, &mut g);
            (l, g)
        })
        .collect())
}

/// Gradient of the scalar network output (not a loss) at input `x`.
pub fn per_sample_output_grad(ckpt: &Checkpoint, x: &[f64]) -> Result<Vec<f64>> {
    let jac = output_jacobian(ckpt, &Matrix::new(1, x.len(), x.to_vec())?)?;
    Ok(jac.into_vec())
}

/// Stacked output gradients, one row per input: `N × param_count`.
pub fn output_jacobian(ckpt: &Checkpoint, x: &Matrix) -> Result<Matrix> {
    if ckpt.spec.output_dim != 1 {
        return Err(Error::Unsupported(
            "output gradients are only defined for scalar-output networks".into(),
        ));
    }
    check_inputs(ckpt, x)?;
    let p = ckpt.theta.len();
    let mut eng = Engine::new(ckpt);
    let mut jac = Matrix::zeros(x.rows(), p);
    for r in 0..x.rows() {
        eng.forward(x.row(r));
        eng.backward(&[1.0], 1.0, jac.row_mut(r));
    }
    Ok(jac)
}

fn check_grad(ckpt: &Checkpoint, grad: &[f64]) -> Result<()> {
    if grad.len() != ckpt.theta.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries, theta has {}",
            grad.len(),
            ckpt.theta.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(())
}

/// `theta − eta · grad`, with the step counter advanced.
pub fn sgd_step(ckpt: &Checkpoint, grad: &[f64], eta: f64) -> Result<Checkpoint> {
    check_grad(ckpt, grad)?;
    let theta: Vec<f64> = ckpt.theta.iter().zip(grad).map(|(t, g)| t - eta * g).collect();
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric("SGD step produced non-finite parameters".into()));
    }
    let mut next = ckpt.with_theta(theta);
    next.meta.step_count += 1;
    Ok(next)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }

    /// Bias-corrected Adam update applied to `theta` in place.
    pub fn update(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != theta.len() || self.m.len() != theta.len() {
            return Err(Error::Dimension("Adam state, theta and gradient lengths differ".into()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        // Moments of parameters that never receive gradient decay
        // geometrically into subnormal range, where arithmetic is very slow;
        // below this floor they cannot move a parameter anyway.
        const FLUSH: f64 = 1e-300;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((t, &g), m), v) in theta.iter_mut().zip(grad).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            let m1 = b1 * *m + (1.0 - b1) * g;
            let v1 = b2 * *v + (1.0 - b2) * g * g;
            *m = if m1.abs() < FLUSH { 0.0 } else { m1 };
            *v = if v1 < FLUSH { 0.0 } else { v1 };
            *t -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_step(state: &AdamState, ckpt: &Checkpoint, grad: &[f64]) -> Result<(Checkpoint, AdamState)> {
    check_grad(ckpt, grad)?;
    let mut next_state = state.clone();
    let mut theta = ckpt.theta.clone();
    next_state.update(&mut theta, grad)?;
    let mut next = ckpt.with_theta(theta);
    next.meta.step_count += 1;
    Ok((next, next_state))
}

pub const DEFAULT_HESSIAN_CAP: usize = 2_000;

/// Central finite differences of the analytic gradient, one column per
/// coordinate, before symmetrization.
pub fn hessian_fd_raw(ckpt: &Checkpoint, data: &Dataset, loss: LossKind, cap: usize) -> Result<Matrix> {
    let p = ckpt.theta.len();
    if p > cap {
        return Err(Error::Size(format!(
            "exact Hessian needs {p} parameters <= cap {cap}"
        )));
    }
    check_data(ckpt, data, loss)?;
    let idx = data.all_indices();
    let mut h = Matrix::zeros(p, p);
    let mut probe = ckpt.clone();
    for i in 0..p {
        let step = 1e-4 * (1.0 + ckpt.theta[i].abs());
        probe.theta[i] = ckpt.theta[i] + step;
        let (_, gp) = loss_and_grad_on(&probe, data, &idx, loss)?;
        probe.theta[i] = ckpt.theta[i] - step;
        let (_, gm) = loss_and_grad_on(&probe, data, &idx, loss)?;
        probe.theta[i] = ckpt.theta[i];
        for r in 0..p {
            h.set(r, i, (gp[r] - gm[r]) / (2.0 * step));
        }
    }
    Ok(h)
}

/// Symmetrized finite-difference Hessian of the mean loss over `data`.
pub fn hessian_exact(ckpt: &Checkpoint, data: &Dataset, loss: LossKind, cap: usize) -> Result<Matrix> {
    let h = hessian_fd_raw(ckpt, data, loss, cap)?;
    let p = h.rows();
    let mut s = h.clone();
    for i in 0..p {
        for j in 0..p {
            s.set(i, j, 0.5 * (h.get(i, j) + h.get(j, i)));
        }
    }
    Ok(s)
}

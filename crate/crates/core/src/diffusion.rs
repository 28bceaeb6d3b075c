//! Minimal DDPM training / DDIM sampling with a two-layer MLP noise
//! predictor and hand-written backpropagation.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GatsError, Result};
use crate::metrics::wasserstein_1d;
use crate::par::{self, Execution};
use crate::rng::{item_seed, task_seed, GatsRng};

/// Linear β schedule with cumulative products `ᾱ_t`, indexed `1..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub const DEFAULT_STEPS: usize = 1000;
    pub const BETA_START: f64 = 1e-4;
    pub const BETA_END: f64 = 0.02;

    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(GatsError::InvalidArgument("schedule needs at least 2 steps".into()));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(GatsError::InvalidArgument(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(GatsError::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(Self::DEFAULT_STEPS, Self::BETA_START, Self::BETA_END).expect("valid defaults")
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·eps`.
pub fn forward_noise(x0: &[f64], t: usize, eps: &[f64], schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if x0.len() != eps.len() {
        return Err(GatsError::ShapeMismatch(format!("x0 has {}, eps has {}", x0.len(), eps.len())));
    }
    let ab = schedule.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

/// Anything that predicts the injected noise from `(x_t, t, cond)`.
pub trait NoisePredictor: Sync {
    fn state_dim(&self) -> usize;
    fn predict_eps(&self, x: &[f64], t: usize, schedule: &DiffusionSchedule, cond: &[f64]) -> Vec<f64>;
}

/// Exact noise predictor for data concentrated at a single point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMassPredictor {
    pub mu: Vec<f64>,
}

impl NoisePredictor for PointMassPredictor {
    fn state_dim(&self) -> usize {
        self.mu.len()
    }

    fn predict_eps(&self, x: &[f64], t: usize, schedule: &DiffusionSchedule, _cond: &[f64]) -> Vec<f64> {
        let ab = schedule.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        x.iter().zip(&self.mu).map(|(x, m)| (x - a * m) / s).collect()
    }
}

/// Width of the time embedding `[t/T, sin 2πt/T, cos 2πt/T]`.
pub const TIME_EMBED_DIM: usize = 3;

fn time_embedding(t: usize, steps: usize) -> [f64; TIME_EMBED_DIM] {
    let tau = t as f64 / steps as f64;
    let w = 2.0 * std::f64::consts::PI * tau;
    [tau, w.sin(), w.cos()]
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn silu(a: f64) -> f64 {
    a * sigmoid(a)
}

fn silu_prime(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 + a * (1.0 - s))
}

/// `out = W2·silu(W1·z + b1) + b2` with `z = x ⊕ time ⊕ cond`.
///
/// Parameters live in one flat vector laid out as `[W1, b1, W2, b2]`, both
/// weight matrices row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNet {
    state_dim: usize,
    cond_dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl ScoreNet {
    pub const DEFAULT_HIDDEN: usize = 128;

    pub fn zeros(state_dim: usize, cond_dim: usize, hidden: usize) -> Result<Self> {
        if state_dim == 0 || hidden == 0 {
            return Err(GatsError::InvalidArgument("state_dim and hidden must be positive".into()));
        }
        let n = Self::param_count_for(state_dim, cond_dim, hidden);
        Ok(Self {
            state_dim,
            cond_dim,
            hidden,
            params: vec![0.0; n],
        })
    }

    /// Gaussian weights scaled by `1/√fan_in`, zero biases.
    pub fn new(state_dim: usize, cond_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(state_dim, cond_dim, hidden)?;
        let mut rng = GatsRng::for_task(seed, "scorenet-init");
        let input = net.input_dim();
        let (w1, _, w2, _) = net.offsets();
        let s1 = 1.0 / (input as f64).sqrt();
        for p in &mut net.params[w1.0..w1.1] {
            *p = s1 * rng.gaussian();
        }
        let s2 = 1.0 / (hidden as f64).sqrt();
        for p in &mut net.params[w2.0..w2.1] {
            *p = s2 * rng.gaussian();
        }
        Ok(net)
    }

    pub fn from_params(state_dim: usize, cond_dim: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(state_dim, cond_dim, hidden)?;
        if params.len() != net.params.len() {
            return Err(GatsError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(GatsError::NonFinite(i));
        }
        net.params = params;
        Ok(net)
    }

    fn param_count_for(state_dim: usize, cond_dim: usize, hidden: usize) -> usize {
        let input = state_dim + TIME_EMBED_DIM + cond_dim;
        hidden * input + hidden + state_dim * hidden + state_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + TIME_EMBED_DIM + self.cond_dim
    }

    #[allow(clippy::type_complexity)]
    fn offsets(&self) -> ((usize, usize), (usize, usize), (usize, usize), (usize, usize)) {
        let w1 = (0, self.hidden * self.input_dim());
        let b1 = (w1.1, w1.1 + self.hidden);
        let w2 = (b1.1, b1.1 + self.state_dim * self.hidden);
        let b2 = (w2.1, w2.1 + self.state_dim);
        (w1, b1, w2, b2)
    }

    fn input(&self, x: &[f64], t: usize, steps: usize, cond: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.input_dim());
        z.extend_from_slice(x);
        z.extend_from_slice(&time_embedding(t, steps));
        z.extend_from_slice(cond);
        z
    }

    /// Pre-activations, hidden activations and output for an assembled
    /// input vector.
    fn forward_input(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (w1, b1, w2, b2) = self.offsets();
        let p = &self.params;
        let input = self.input_dim();
        let a: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &p[w1.0 + j * input..w1.0 + (j + 1) * input];
                row.iter().zip(z).map(|(w, v)| w * v).sum::<f64>() + p[b1.0 + j]
            })
            .collect();
        let h: Vec<f64> = a.iter().map(|&a| silu(a)).collect();
        let o = (0..self.state_dim)
            .map(|i| {
                let row = &p[w2.0 + i * self.hidden..w2.0 + (i + 1) * self.hidden];
                row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + p[b2.0 + i]
            })
            .collect();
        (a, h, o)
    }

    /// Network output at timestep `t` of a `steps`-long schedule.
    pub fn forward(&self, x: &[f64], t: usize, steps: usize, cond: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim || cond.len() != self.cond_dim {
            return Err(GatsError::ShapeMismatch(format!(
                "expected state {} / cond {}, got {} / {}",
                self.state_dim,
                self.cond_dim,
                x.len(),
                cond.len()
            )));
        }
        Ok(self.forward_input(&self.input(x, t, steps, cond)).2)
    }

    /// Adds `scale · ∂‖out − target‖²/∂θ` for one example into `grad` and
    /// returns the squared residual.
    fn accumulate_grad(&self, z: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let (w1, b1, w2, b2) = self.offsets();
        let input = self.input_dim();
        let (a, h, o) = self.forward_input(z);
        let mut loss = 0.0;
        let g_o: Vec<f64> = o
            .iter()
            .zip(target)
            .map(|(o, t)| {
                let r = o - t;
                loss += r * r;
                2.0 * r * scale
            })
            .collect();
        let mut g_h = vec![0.0; self.hidden];
        for (i, &g) in g_o.iter().enumerate() {
            let row = w2.0 + i * self.hidden;
            for j in 0..self.hidden {
                grad[row + j] += g * h[j];
                g_h[j] += g * self.params[row + j];
            }
            grad[b2.0 + i] += g;
        }
        for j in 0..self.hidden {
            let g_a = g_h[j] * silu_prime(a[j]);
            let row = w1.0 + j * input;
            for (k, &v) in z.iter().enumerate() {
                grad[row + k] += g_a * v;
            }
            grad[b1.0 + j] += g_a;
        }
        loss
    }
}

impl NoisePredictor for ScoreNet {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn predict_eps(&self, x: &[f64], t: usize, schedule: &DiffusionSchedule, cond: &[f64]) -> Vec<f64> {
        self.forward_input(&self.input(x, t, schedule.steps(), cond)).2
    }
}

/// Row-major states with optional per-row condition vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    dim: usize,
    cond_dim: usize,
    states: Vec<f64>,
    conds: Vec<f64>,
}

impl TrainingSet {
    pub fn new(dim: usize, states: Vec<f64>, cond_dim: usize, conds: Vec<f64>) -> Result<Self> {
        if dim == 0 || states.is_empty() {
            return Err(GatsError::Empty("training set"));
        }
        if !states.len().is_multiple_of(dim) {
            return Err(GatsError::ShapeMismatch(format!("{} values is not a multiple of dim {dim}", states.len())));
        }
        let n = states.len() / dim;
        if conds.len() != n * cond_dim {
            return Err(GatsError::ShapeMismatch(format!(
                "expected {} condition values, got {}",
                n * cond_dim,
                conds.len()
            )));
        }
        if let Some(i) = states.iter().position(|v| !v.is_finite()) {
            return Err(GatsError::NonFinite(i));
        }
        Ok(Self {
            dim,
            cond_dim,
            states,
            conds,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(GatsError::ShapeMismatch("ragged rows".into()));
        }
        Self::new(dim, rows.concat(), 0, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cond(&self, i: usize) -> &[f64] {
        &self.conds[i * self.cond_dim..(i + 1) * self.cond_dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn conds(&self) -> &[f64] {
        &self.conds
    }
}

/// Per-coordinate affine map to zero mean / unit variance. Constant
/// coordinates keep scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || rows.is_empty() || !rows.len().is_multiple_of(dim) {
            return Err(GatsError::ShapeMismatch("cannot fit a standardizer to this data".into()));
        }
        let n = (rows.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows.chunks(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn forward(&self, rows: &[f64]) -> Vec<f64> {
        let d = self.dim();
        rows.iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.scale[i % d])
            .collect()
    }

    pub fn inverse(&self, rows: &[f64]) -> Vec<f64> {
        let d = self.dim();
        rows.iter()
            .enumerate()
            .map(|(i, v)| v * self.scale[i % d] + self.mean[i % d])
            .collect()
    }
}

/// Timesteps and noise for one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub timesteps: Vec<usize>,
    /// Row-major, one row per example.
    pub eps: Vec<f64>,
}

impl NoiseDraw {
    pub fn sample(rng: &mut GatsRng, batch: usize, dim: usize, schedule: &DiffusionSchedule) -> Self {
        let timesteps = (0..batch).map(|_| 1 + rng.below(schedule.steps())).collect();
        let eps = rng.gaussian_vec(batch * dim);
        Self { timesteps, eps }
    }
}

/// Examples per gradient chunk; chunks are reduced in index order.
const GRAD_CHUNK: usize = 32;

/// Loss `mean_i ‖ε_i − net(x_t,i, t_i, c_i)‖²` and its exact gradient for
/// fixed noise.
pub fn loss_and_grad_with_noise(
    net: &ScoreNet,
    x0: &[f64],
    cond: &[f64],
    noise: &NoiseDraw,
    schedule: &DiffusionSchedule,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    let d = net.state_dim;
    let b = noise.timesteps.len();
    if b == 0 {
        return Err(GatsError::Empty("batch"));
    }
    if x0.len() != b * d || noise.eps.len() != b * d || cond.len() != b * net.cond_dim {
        return Err(GatsError::ShapeMismatch("batch arrays disagree with the network".into()));
    }
    for &t in &noise.timesteps {
        schedule.check_t(t)?;
    }
    let scale = 1.0 / b as f64;
    let chunks = b.div_ceil(GRAD_CHUNK);
    let partials = par::map_indexed(exec, chunks, |c| {
        let mut grad = vec![0.0; net.param_count()];
        let mut loss = 0.0;
        for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(b) {
            let eps = &noise.eps[i * d..(i + 1) * d];
            let t = noise.timesteps[i];
            let ab = schedule.alpha_bar(t);
            let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
            let xt: Vec<f64> = x0[i * d..(i + 1) * d]
                .iter()
                .zip(eps)
                .map(|(x, e)| a * x + s * e)
                .collect();
            let c = &cond[i * net.cond_dim..(i + 1) * net.cond_dim];
            let z = net.input(&xt, t, schedule.steps(), c);
            loss += net.accumulate_grad(&z, eps, scale, &mut grad);
        }
        (loss, grad)
    });
    let mut grad = vec![0.0; net.param_count()];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((loss * scale, grad))
}

/// Denoising score-matching loss and gradient with noise drawn from `rng`.
pub fn dsm_loss_and_grad(
    net: &ScoreNet,
    x0: &[f64],
    cond: &[f64],
    schedule: &DiffusionSchedule,
    rng: &mut GatsRng,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    let d = net.state_dim;
    if x0.is_empty() || !x0.len().is_multiple_of(d) {
        return Err(GatsError::Empty("batch"));
    }
    let noise = NoiseDraw::sample(rng, x0.len() / d, d, schedule);
    loss_and_grad_with_noise(net, x0, cond, &noise, schedule, exec)
}

/// Parameter update rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            lr: 1e-3,
            batch_size: 256,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

/// Interval between loss-trace entries.
pub const TRACE_EVERY: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    /// Batch loss at this step.
    pub loss: f64,
    /// Mean batch loss over the preceding window (inclusive).
    pub smoothed: f64,
}

/// Minibatch training with replacement sampling; deterministic per seed.
pub fn train(
    net: &mut ScoreNet,
    data: &TrainingSet,
    schedule: &DiffusionSchedule,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<Vec<LossRecord>> {
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(GatsError::InvalidArgument("steps and batch_size must be >= 1".into()));
    }
    if !(cfg.lr > 0.0) {
        return Err(GatsError::InvalidArgument("lr must be positive".into()));
    }
    if data.dim() != net.state_dim || data.cond_dim() != net.cond_dim {
        return Err(GatsError::ShapeMismatch(format!(
            "data ({}, cond {}) does not fit network ({}, cond {})",
            data.dim(),
            data.cond_dim(),
            net.state_dim,
            net.cond_dim
        )));
    }
    let mut rng = GatsRng::for_task(cfg.seed, "train");
    let (d, cd, b) = (data.dim(), data.cond_dim(), cfg.batch_size);
    let mut m = vec![0.0; net.param_count()];
    let mut v = vec![0.0; net.param_count()];
    let mut trace = Vec::new();
    let mut window = 0.0;
    let mut window_len = 0usize;
    let mut x0 = vec![0.0; b * d];
    let mut cond = vec![0.0; b * cd];
    for step in 0..cfg.steps {
        for i in 0..b {
            let j = rng.below(data.len());
            x0[i * d..(i + 1) * d].copy_from_slice(data.state(j));
            cond[i * cd..(i + 1) * cd].copy_from_slice(data.cond(j));
        }
        let (loss, grad) = dsm_loss_and_grad(net, &x0, &cond, schedule, &mut rng, exec)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(GatsError::Diverged { step, loss });
        }
        window += loss;
        window_len += 1;
        if step % TRACE_EVERY == 0 || step + 1 == cfg.steps {
            trace.push(LossRecord {
                step,
                loss,
                smoothed: window / window_len as f64,
            });
            log::debug!("step {step}: loss {loss:.5}");
            window = 0.0;
            window_len = 0;
        }
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in net.params.iter_mut().zip(&grad) {
                    *p -= cfg.lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let k = (step + 1) as i32;
                let c1 = 1.0 - beta1.powi(k);
                let c2 = 1.0 - beta2.powi(k);
                for (((p, g), m), v) in net.params.iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(trace)
}

/// `τ_i = ⌊i·T/S⌋` for `i = 1..=S`, ascending.
pub fn ddim_timesteps(steps: usize, num_steps: usize) -> Result<Vec<usize>> {
    if num_steps == 0 || num_steps > steps {
        return Err(GatsError::InvalidArgument(format!(
            "num_steps must be in 1..={steps}, got {num_steps}"
        )));
    }
    Ok((1..=num_steps).map(|i| i * steps / num_steps).collect())
}

/// Runs the η = 0 DDIM update from `x` at `taus.last()` down to `t = 0`.
pub fn ddim_denoise<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &DiffusionSchedule,
    taus: &[usize],
    mut x: Vec<f64>,
    cond: &[f64],
) -> Vec<f64> {
    for (k, &t) in taus.iter().enumerate().rev() {
        let prev = if k == 0 { 0 } else { taus[k - 1] };
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(prev);
        let eps = model.predict_eps(&x, t, schedule, cond);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (ap, sp) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        for (xi, e) in x.iter_mut().zip(&eps) {
            let x0 = (*xi - s * e) / a;
            *xi = ap * x0 + sp * e;
        }
    }
    x
}

/// Deterministic DDIM sampling. Chain `i` draws its starting noise from its
/// own stream, so results do not depend on the execution mode. `cond` holds
/// either one shared vector of length `cond_dim` or one per sample
/// (row-major).
#[allow(clippy::too_many_arguments)]
pub fn ddim_sample<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &DiffusionSchedule,
    num_steps: usize,
    n_samples: usize,
    seed: u64,
    cond: &[f64],
    cond_dim: usize,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    let taus = ddim_timesteps(schedule.steps(), num_steps)?;
    let d = model.state_dim();
    if cond.len() != cond_dim && cond.len() != n_samples * cond_dim {
        return Err(GatsError::ShapeMismatch(format!(
            "condition has {} values; expected {cond_dim} or {}",
            cond.len(),
            n_samples * cond_dim
        )));
    }
    let shared = cond.len() == cond_dim;
    let base = task_seed(seed, "ddim");
    Ok(par::map_indexed(exec, n_samples, |i| {
        let mut rng = GatsRng::new(item_seed(base, i as u64));
        let x = rng.gaussian_vec(d);
        let c = if shared { cond } else { &cond[i * cond_dim..(i + 1) * cond_dim] };
        ddim_denoise(model, schedule, &taus, x, c)
    }))
}

/// Score `−ε̂/√(1−ᾱ_t)` at each point (model coordinates).
pub fn score_field<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &DiffusionSchedule,
    t: usize,
    points: &[Vec<f64>],
    cond: &[f64],
) -> Result<Vec<Vec<f64>>> {
    schedule.check_t(t)?;
    let s = (1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(points
        .iter()
        .map(|x| model.predict_eps(x, t, schedule, cond).iter().map(|e| -e / s).collect())
        .collect())
}

const CKPT_MAGIC: &[u8; 4] = b"GATM";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Header (magic, version, dims) followed by little-endian f64 parameters.
pub fn encode_checkpoint(net: &ScoreNet) -> Vec<u8> {
    let mut out = Vec::with_capacity(22 + 8 * net.param_count());
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [net.state_dim, net.cond_dim, net.hidden] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in &net.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ScoreNet> {
    let bad = |m: &str| GatsError::Format(format!("checkpoint: {m}"));
    if bytes.len() < 26 || &bytes[..4] != CKPT_MAGIC {
        return Err(bad("bad magic or truncated header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (state_dim, cond_dim, hidden) = (u32_at(6), u32_at(10), u32_at(14));
    let count = u64::from_le_bytes(bytes[18..26].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 26 + 8 * count {
        return Err(bad("payload length does not match parameter count"));
    }
    let params = bytes[26..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ScoreNet::from_params(state_dim, cond_dim, hidden, params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &ScoreNet) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ScoreNet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

/// How the second factor of the scalar toy factorization is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum VLaw {
    /// `v ≡ 1`.
    Anchored,
    /// `v ~ Uniform(a, b)`.
    Uniform { a: f64, b: f64 },
}

/// Scalar factorization toy: `x ~ ½N(1, 0.2²) + ½N(3, 0.2²)`, `x = u·v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub n: usize,
    pub law: VLaw,
}

pub const TOY_MEANS: [f64; 2] = [1.0, 3.0];
pub const TOY_STD: f64 = 0.2;

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n: 20_000,
            law: VLaw::Anchored,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(GatsError::InvalidArgument("toy dataset needs n >= 1".into()));
        }
        if let VLaw::Uniform { a, b } = self.law {
            if !(a > 0.0 && b > a) {
                return Err(GatsError::InvalidArgument(format!("need 0 < a < b, got a={a}, b={b}")));
            }
        }
        Ok(())
    }
}

/// `n` draws from the two-component toy mixture.
pub fn toy_mixture(n: usize, rng: &mut GatsRng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mean = if rng.uniform() < 0.5 { TOY_MEANS[0] } else { TOY_MEANS[1] };
            mean + TOY_STD * rng.gaussian()
        })
        .collect()
}

/// Factorizations `(u_i, v_i)` with `u_i·v_i = x_i`.
pub fn toy_factorization_dataset(cfg: &ToyConfig, seed: u64) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    let mut rng = GatsRng::for_task(seed, "toy-mixture");
    let xs = toy_mixture(cfg.n, &mut rng);
    let mut vrng = GatsRng::for_task(seed, "toy-factor");
    Ok(xs
        .into_iter()
        .map(|x| match cfg.law {
            VLaw::Anchored => (x, 1.0),
            VLaw::Uniform { a, b } => {
                let v = vrng.uniform_range(a, b);
                (x / v, v)
            }
        })
        .collect())
}

/// Full toy pipeline configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub toy: ToyConfig,
    pub train: TrainConfig,
    pub hidden: usize,
    pub ddim_steps: usize,
    pub n_generate: usize,
    pub seed: u64,
}

impl Default for ToyRun {
    /// Adam at lr 3e-3; plain SGD does not reach a usable fit within the
    /// 5000-step budget.
    fn default() -> Self {
        Self {
            toy: ToyConfig::default(),
            train: TrainConfig {
                lr: 3e-3,
                optimizer: Optimizer::adam(),
                ..TrainConfig::default()
            },
            hidden: ScoreNet::DEFAULT_HIDDEN,
            ddim_steps: 250,
            n_generate: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub w1: f64,
    /// Fraction of generated `x` within ±0.6 of each mixture mean.
    pub mode_mass: [f64; 2],
    pub loss_trace: Vec<LossRecord>,
    pub standardizer: Standardizer,
    /// Generated `(u, v)` pairs.
    #[serde(skip)]
    pub factors: Vec<(f64, f64)>,
    #[serde(skip)]
    pub net: Option<ScoreNet>,
}

impl ToyReport {
    pub fn products(&self) -> Vec<f64> {
        self.factors.iter().map(|(u, v)| u * v).collect()
    }
}

/// Width of the window used for mode-mass accounting.
pub const MODE_WINDOW: f64 = 0.6;

/// Train on standardized `(u, v)` pairs, sample with DDIM, and compare the
/// products against a fresh mixture draw.
pub fn run_toy(run: &ToyRun, exec: Execution) -> Result<ToyReport> {
    let pairs = toy_factorization_dataset(&run.toy, run.seed)?;
    let flat: Vec<f64> = pairs.iter().flat_map(|&(u, v)| [u, v]).collect();
    let standardizer = Standardizer::fit(&flat, 2)?;
    let data = TrainingSet::new(2, standardizer.forward(&flat), 0, Vec::new())?;
    let schedule = DiffusionSchedule::default();
    let mut net = ScoreNet::new(2, 0, run.hidden, run.seed)?;
    let train_cfg = TrainConfig {
        seed: run.seed,
        ..run.train.clone()
    };
    let loss_trace = train(&mut net, &data, &schedule, &train_cfg, exec)?;
    let samples = ddim_sample(&net, &schedule, run.ddim_steps, run.n_generate, run.seed, &[], 0, exec)?;
    let factors: Vec<(f64, f64)> = samples
        .iter()
        .map(|z| {
            let x = standardizer.inverse(z);
            (x[0], x[1])
        })
        .collect();
    let products: Vec<f64> = factors.iter().map(|(u, v)| u * v).collect();
    let mut rng = GatsRng::for_task(run.seed, "toy-reference");
    let reference = toy_mixture(run.n_generate, &mut rng);
    let w1 = wasserstein_1d(&products, &reference)?;
    let n = products.len().max(1) as f64;
    let mode_mass = TOY_MEANS.map(|m| products.iter().filter(|x| (*x - m).abs() <= MODE_WINDOW).count() as f64 / n);
    Ok(ToyReport {
        w1,
        mode_mass,
        loss_trace,
        standardizer,
        factors,
        net: Some(net),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_invariants() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.steps(), 1000);
        assert!(s.betas().windows(2).all(|w| w[0] < w[1]));
        assert!(s.betas().iter().all(|&b| b > 0.0 && b < 1.0));
        assert!(s.alpha_bars().windows(2).all(|w| w[0] > w[1]));
        assert!(s.alpha_bar(1000) < 1e-2 && s.alpha_bar(1000) > 0.0);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(DiffusionSchedule::linear(10, 0.2, 0.1).is_err());
    }

    #[test]
    fn forward_noise_basics() {
        let s = DiffusionSchedule::default();
        let x0 = [1.0, -2.0];
        let xt = forward_noise(&x0, 1, &[0.0, 0.0], &s).unwrap();
        let a = s.alpha_bar(1).sqrt();
        assert_eq!(xt, vec![a, -2.0 * a]);
        assert!((xt[0] - 1.0).abs() < 1e-4);
        assert!(forward_noise(&x0, 0, &[0.0, 0.0], &s).is_err());
        assert!(forward_noise(&x0, 1001, &[0.0, 0.0], &s).is_err());
    }

    #[test]
    fn forward_noise_variance() {
        let s = DiffusionSchedule::default();
        let t = 300;
        let mut rng = GatsRng::new(3);
        let eps = rng.gaussian_vec(100_000);
        let x0 = vec![0.0; eps.len()];
        let xt = forward_noise(&x0, t, &eps, &s).unwrap();
        let n = xt.len() as f64;
        let mean = xt.iter().sum::<f64>() / n;
        let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expect = 1.0 - s.alpha_bar(t);
        assert!((var - expect).abs() <= 0.01 * expect, "{var} vs {expect}");
    }

    #[test]
    fn zero_net_loss_is_state_dim() {
        let s = DiffusionSchedule::default();
        let net = ScoreNet::zeros(3, 0, 8).unwrap();
        let mut rng = GatsRng::new(1);
        let x0 = rng.gaussian_vec(3 * 20_000);
        let (loss, _) = dsm_loss_and_grad(&net, &x0, &[], &s, &mut rng, Execution::Sequential).unwrap();
        assert!((loss - 3.0).abs() <= 0.02 * 3.0, "{loss}");
    }

    fn batch_loss(net: &ScoreNet, x0: &[f64], cond: &[f64], noise: &NoiseDraw, s: &DiffusionSchedule) -> f64 {
        loss_and_grad_with_noise(net, x0, cond, noise, s, Execution::Sequential).unwrap().0
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = DiffusionSchedule::default();
        let mut net = ScoreNet::new(2, 1, 6, 4).unwrap();
        let mut rng = GatsRng::new(8);
        for p in net.params_mut() {
            *p += 0.1 * rng.gaussian();
        }
        let x0 = rng.gaussian_vec(20);
        let cond = rng.gaussian_vec(10);
        let noise = NoiseDraw::sample(&mut rng, 10, 2, &s);
        let (_, grad) = loss_and_grad_with_noise(&net, &x0, &cond, &noise, &s, Execution::Sequential).unwrap();
        let h = 1e-5;
        for (k, &g) in grad.iter().enumerate() {
            let mut plus = net.clone();
            plus.params_mut()[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[k] -= h;
            let fd = (batch_loss(&plus, &x0, &cond, &noise, &s) - batch_loss(&minus, &x0, &cond, &noise, &s)) / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            assert!(rel <= 1e-5, "param {k}: {g} vs {fd} (rel {rel:e})");
        }
    }

    #[test]
    fn gradient_is_deterministic_across_execution() {
        let s = DiffusionSchedule::default();
        let net = ScoreNet::new(2, 0, 16, 1).unwrap();
        let mut rng = GatsRng::new(2);
        let x0 = rng.gaussian_vec(2 * 100);
        let noise = NoiseDraw::sample(&mut rng, 100, 2, &s);
        let a = loss_and_grad_with_noise(&net, &x0, &[], &noise, &s, Execution::Sequential).unwrap();
        let b = loss_and_grad_with_noise(&net, &x0, &[], &noise, &s, Execution::Parallel).unwrap();
        let c = loss_and_grad_with_noise(&net, &x0, &[], &noise, &s, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn point_mass_sampling_recovers_mu() {
        let s = DiffusionSchedule::default();
        let model = PointMassPredictor { mu: vec![0.7, -1.3] };
        let out = ddim_sample(&model, &s, 250, 16, 5, &[], 0, Execution::Sequential).unwrap();
        for x in out {
            assert!((x[0] - 0.7).abs() < 1e-3 && (x[1] + 1.3).abs() < 1e-3);
        }
    }

    #[test]
    fn dense_ddim_matches_manual_loop() {
        let s = DiffusionSchedule::linear(50, 1e-3, 0.2).unwrap();
        let net = ScoreNet::new(2, 0, 8, 9).unwrap();
        let got = ddim_sample(&net, &s, 50, 3, 11, &[], 0, Execution::Parallel).unwrap();
        let base = task_seed(11, "ddim");
        for (i, g) in got.iter().enumerate() {
            let mut x = GatsRng::new(item_seed(base, i as u64)).gaussian_vec(2);
            for t in (1..=50).rev() {
                let e = net.forward(&x, t, 50, &[]).unwrap();
                let (ab, abp) = (s.alpha_bar(t), s.alpha_bar(t - 1));
                for j in 0..2 {
                    let x0 = (x[j] - (1.0 - ab).sqrt() * e[j]) / ab.sqrt();
                    x[j] = abp.sqrt() * x0 + (1.0 - abp).sqrt() * e[j];
                }
            }
            assert_eq!(&x, g);
        }
        assert_eq!(got, ddim_sample(&net, &s, 50, 3, 11, &[], 0, Execution::Sequential).unwrap());
        assert!(ddim_timesteps(50, 51).is_err());
    }

    #[test]
    fn training_on_constant_zero_learns_eps() {
        let s = DiffusionSchedule::default();
        let data = TrainingSet::new(1, vec![0.0; 64], 0, Vec::new()).unwrap();
        let mut net = ScoreNet::new(1, 0, 16, 2).unwrap();
        let cfg = TrainConfig {
            steps: 2000,
            lr: 1e-2,
            batch_size: 64,
            optimizer: Optimizer::adam(),
            seed: 1,
        };
        let trace = train(&mut net, &data, &s, &cfg, Execution::Sequential).unwrap();
        assert!(trace.last().unwrap().smoothed < 0.1 * trace[0].loss);
        // With x0 = 0, x_t = √(1−ᾱ)ε exactly.
        let t = 500;
        let e = net.forward(&[(1.0 - s.alpha_bar(t)).sqrt() * 0.8], t, 1000, &[]).unwrap();
        assert!((e[0] - 0.8).abs() < 0.1, "{}", e[0]);
    }

    #[test]
    fn training_is_reproducible_and_guards_divergence() {
        let s = DiffusionSchedule::default();
        let data = TrainingSet::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.3]]).unwrap();
        let cfg = TrainConfig {
            steps: 30,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let run = |exec| {
            let mut net = ScoreNet::new(2, 0, 8, 3).unwrap();
            let trace = train(&mut net, &data, &s, &cfg, exec).unwrap();
            (net, trace)
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
        let mut net = ScoreNet::new(2, 0, 8, 3).unwrap();
        let wild = TrainConfig {
            lr: 1e12,
            ..cfg.clone()
        };
        assert!(matches!(
            train(&mut net, &data, &s, &wild, Execution::Sequential),
            Err(GatsError::Diverged { .. })
        ));
        let zero = TrainConfig { steps: 0, ..cfg };
        assert!(train(&mut net, &data, &s, &zero, Execution::Sequential).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = ScoreNet::new(3, 2, 5, 7).unwrap();
        let bytes = encode_checkpoint(&net);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), net);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn standardizer_round_trip_and_constant_columns() {
        let rows = vec![1.0, 1.0, 3.0, 1.0, 5.0, 1.0];
        let st = Standardizer::fit(&rows, 2).unwrap();
        assert_eq!(st.scale[1], 1.0);
        let z = st.forward(&rows);
        assert!(z.iter().skip(1).step_by(2).all(|&v| v == 0.0));
        let back = st.inverse(&z);
        for (a, b) in back.iter().zip(&rows) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_dataset_properties() {
        let pairs = toy_factorization_dataset(&ToyConfig::default(), 4).unwrap();
        let n = pairs.len() as f64;
        let mean_u = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        assert!((mean_u - 2.0).abs() <= 0.02, "{mean_u}");
        assert!(pairs.iter().all(|p| p.1 == 1.0));
        let sd = (pairs.iter().map(|p| (p.0 - mean_u).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 1.0198).abs() <= 0.010198, "{sd}");

        let uni = ToyConfig {
            n: 1000,
            law: VLaw::Uniform { a: 0.5, b: 4.0 },
        };
        let anchored = toy_factorization_dataset(&ToyConfig { n: 1000, ..ToyConfig::default() }, 4).unwrap();
        for (p, q) in toy_factorization_dataset(&uni, 4).unwrap().iter().zip(&anchored) {
            assert!((p.0 * p.1 - q.0).abs() <= 1e-12);
        }
        let bad = ToyConfig {
            n: 10,
            law: VLaw::Uniform { a: 2.0, b: 2.0 },
        };
        assert!(toy_factorization_dataset(&bad, 0).is_err());
    }
}

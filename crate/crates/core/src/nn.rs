//! A small neural toolkit: LSTM cell with backpropagation through time,
//! dense layers, softmax, inverted dropout, categorical cross-entropy, Adam,
//! and a central-difference gradient checker.
//!
//! Everything trains in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to the true-class probability in [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Entries drawn uniformly from `(-bound, bound)`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Accumulates `selfᵀ · y` into `out`.
    pub fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, &yr) in self.data.chunks_exact(self.cols).zip(y) {
            if yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
    }

    /// `self += a bᵀ`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (row, &ar) in self.data.chunks_exact_mut(self.cols).zip(a) {
            if ar == 0.0 {
                continue;
            }
            for (w, bv) in row.iter_mut().zip(b) {
                *w += ar * bv;
            }
        }
    }
}

/// Flat views over every trainable tensor of a model, in a fixed order.
/// Gradients use the same type as the parameters they belong to.
pub trait Parameters {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn fill(&mut self, value: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = value);
        }
    }

    fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Adds `other` elementwise; both must have identical layout.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights and bias of one LSTM gate, acting on `[h_{t-1}, x_t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Gate {
    fn zeros(hidden: usize, fan_in: usize) -> Self {
        Gate {
            w: Matrix::zeros(hidden, fan_in),
            b: vec![0.0; hidden],
        }
    }

    fn pre_activation(&self, z: &[f64]) -> Vec<f64> {
        let mut a = self.w.matvec(z);
        for (x, b) in a.iter_mut().zip(&self.b) {
            *x += b;
        }
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub hidden: usize,
    pub input: usize,
    pub forget: Gate,
    pub input_gate: Gate,
    pub candidate: Gate,
    pub output: Gate,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let fan_in = hidden + input;
        LstmParams {
            hidden,
            input,
            forget: Gate::zeros(hidden, fan_in),
            input_gate: Gate::zeros(hidden, fan_in),
            candidate: Gate::zeros(hidden, fan_in),
            output: Gate::zeros(hidden, fan_in),
        }
    }

    /// Uniform(±1/√fan_in) weights, zero biases except the forget gate at 1.
    pub fn init(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        let fan_in = hidden + input;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut gate = |bias: f64| Gate {
            w: Matrix::uniform(hidden, fan_in, bound, rng),
            b: vec![bias; hidden],
        };
        LstmParams {
            hidden,
            input,
            forget: gate(1.0),
            input_gate: gate(0.0),
            candidate: gate(0.0),
            output: gate(0.0),
        }
    }

    fn gates(&self) -> [&Gate; 4] {
        [&self.forget, &self.input_gate, &self.candidate, &self.output]
    }

    fn gates_mut(&mut self) -> [&mut Gate; 4] {
        [
            &mut self.forget,
            &mut self.input_gate,
            &mut self.candidate,
            &mut self.output,
        ]
    }

    pub fn check_shapes(&self) -> Result<()> {
        let fan_in = self.hidden + self.input;
        for g in self.gates() {
            if g.w.rows() != self.hidden || g.w.cols() != fan_in || g.b.len() != self.hidden {
                return Err(Error::Shape(format!(
                    "LSTM gate is {}x{} with {} biases, expected {}x{fan_in}",
                    g.w.rows(),
                    g.w.cols(),
                    g.b.len(),
                    self.hidden
                )));
            }
        }
        Ok(())
    }
}

impl Parameters for LstmParams {
    fn slices(&self) -> Vec<&[f64]> {
        self.gates()
            .into_iter()
            .flat_map(|g| [g.w.as_slice(), g.b.as_slice()])
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.gates_mut()
            .into_iter()
            .flat_map(|g| [g.w.as_mut_slice(), g.b.as_mut_slice()])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Activations of one time step, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub z: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One LSTM step:
///
/// ```text
/// f = σ(W_f·[h,x] + b_f)    i = σ(W_i·[h,x] + b_i)
/// c̃ = tanh(W_C·[h,x] + b_C) o = σ(W_o·[h,x] + b_o)
/// c_t = f⊙c_{t-1} + i⊙c̃     h_t = o⊙tanh(c_t)
/// ```
pub fn lstm_step(params: &LstmParams, x: &[f64], prev: &LstmState) -> Result<(LstmState, StepCache)> {
    if x.len() != params.input || prev.h.len() != params.hidden || prev.c.len() != params.hidden {
        return Err(Error::Shape(format!(
            "lstm_step got x={} h={} c={}, expected x={} h=c={}",
            x.len(),
            prev.h.len(),
            prev.c.len(),
            params.input,
            params.hidden
        )));
    }
    let mut z = Vec::with_capacity(params.hidden + params.input);
    z.extend_from_slice(&prev.h);
    z.extend_from_slice(x);

    let f: Vec<f64> = params.forget.pre_activation(&z).into_iter().map(sigmoid).collect();
    let i: Vec<f64> = params.input_gate.pre_activation(&z).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = params.candidate.pre_activation(&z).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = params.output.pre_activation(&z).into_iter().map(sigmoid).collect();
    let c: Vec<f64> = (0..params.hidden)
        .map(|k| f[k] * prev.c[k] + i[k] * g[k])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();

    let state = LstmState { h, c: c.clone() };
    let cache = StepCache {
        z,
        f,
        i,
        g,
        o,
        c_prev: prev.c.clone(),
        c,
        tanh_c,
    };
    Ok((state, cache))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCache {
    pub hidden: usize,
    pub input: usize,
    pub steps: Vec<StepCache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmForward {
    pub hs: Vec<Vec<f64>>,
    pub state: LstmState,
    pub cache: LstmCache,
}

pub fn lstm_forward(params: &LstmParams, xs: &[Vec<f64>], state0: &LstmState) -> Result<LstmForward> {
    if xs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut state = state0.clone();
    let mut hs = Vec::with_capacity(xs.len());
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let (next, cache) = lstm_step(params, x, &state)?;
        hs.push(next.h.clone());
        steps.push(cache);
        state = next;
    }
    Ok(LstmForward {
        hs,
        state,
        cache: LstmCache {
            hidden: params.hidden,
            input: params.input,
            steps,
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmBackward {
    pub grads: LstmParams,
    pub dxs: Vec<Vec<f64>>,
    pub d_state0: LstmState,
}

/// Backpropagation through time. `dh_seq[t]` is the loss gradient with
/// respect to `h_t` from outside the recurrence; `d_final` is the gradient
/// with respect to the final `(h, c)`.
pub fn lstm_backward(
    params: &LstmParams,
    cache: &LstmCache,
    dh_seq: &[Vec<f64>],
    d_final: &LstmState,
) -> Result<LstmBackward> {
    let n = params.hidden;
    if cache.hidden != n || cache.input != params.input {
        return Err(Error::Shape("cache does not match parameters".into()));
    }
    if dh_seq.len() != cache.steps.len() {
        return Err(Error::Shape(format!(
            "{} upstream gradients for {} steps",
            dh_seq.len(),
            cache.steps.len()
        )));
    }
    if dh_seq.iter().any(|d| d.len() != n) || d_final.h.len() != n || d_final.c.len() != n {
        return Err(Error::Shape("upstream gradient has the wrong width".into()));
    }

    let mut grads = LstmParams::zeros(n, params.input);
    let mut dxs = vec![Vec::new(); cache.steps.len()];
    let mut dh_next = d_final.h.clone();
    let mut dc_next = d_final.c.clone();

    for (t, step) in cache.steps.iter().enumerate().rev() {
        let mut dpf = vec![0.0; n];
        let mut dpi = vec![0.0; n];
        let mut dpg = vec![0.0; n];
        let mut dpo = vec![0.0; n];
        let mut dc_prev = vec![0.0; n];
        for k in 0..n {
            let dh = dh_seq[t][k] + dh_next[k];
            let dc = dc_next[k] + dh * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
            let d_o = dh * step.tanh_c[k];
            let d_f = dc * step.c_prev[k];
            let d_i = dc * step.g[k];
            let d_g = dc * step.i[k];
            dc_prev[k] = dc * step.f[k];
            dpf[k] = d_f * step.f[k] * (1.0 - step.f[k]);
            dpi[k] = d_i * step.i[k] * (1.0 - step.i[k]);
            dpg[k] = d_g * (1.0 - step.g[k] * step.g[k]);
            dpo[k] = d_o * step.o[k] * (1.0 - step.o[k]);
        }
        let mut dz = vec![0.0; step.z.len()];
        for ((gate, grad), dp) in params
            .gates()
            .into_iter()
            .zip(grads.gates_mut())
            .zip([&dpf, &dpi, &dpg, &dpo])
        {
            grad.w.add_outer(dp, &step.z);
            for (b, d) in grad.b.iter_mut().zip(dp.iter()) {
                *b += d;
            }
            gate.w.matvec_t_add(dp, &mut dz);
        }
        dxs[t] = dz.split_off(n);
        dh_next = dz;
        dc_next = dc_prev;
    }
    Ok(LstmBackward {
        grads,
        dxs,
        d_state0: LstmState {
            h: dh_next,
            c: dc_next,
        },
    })
}

/// Fully connected layer `W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(out: usize, input: usize) -> Self {
        Dense {
            w: Matrix::zeros(out, input),
            b: vec![0.0; out],
        }
    }

    pub fn init(out: usize, input: usize, rng: &mut impl Rng) -> Self {
        Dense {
            w: Matrix::uniform(out, input, 1.0 / (input as f64).sqrt(), rng),
            b: vec![0.0; out],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        for (v, b) in y.iter_mut().zip(&self.b) {
            *v += b;
        }
        y
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Dense) -> Vec<f64> {
        grads.w.add_outer(dy, x);
        for (b, d) in grads.b.iter_mut().zip(dy) {
            *b += d;
        }
        let mut dx = vec![0.0; x.len()];
        self.w.matvec_t_add(dy, &mut dx);
        dx
    }
}

impl Parameters for Dense {
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), &self.b]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), &mut self.b]
    }
}

/// `max(0, W x + b)`
pub fn dense_relu(w: &Matrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::Shape(format!(
            "dense {}x{} with {} biases applied to {} inputs",
            w.rows(),
            w.cols(),
            b.len(),
            x.len()
        )));
    }
    Ok(w.matvec(x)
        .into_iter()
        .zip(b)
        .map(|(v, b)| (v + b).max(0.0))
        .collect())
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Inference,
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (0 or `1/(1-rate)`) so the backward pass can reuse it.
pub fn dropout(x: &[f64], rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if mode == Mode::Inference || rate == 0.0 {
        return Ok((x.to_vec(), vec![1.0; x.len()]));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = x
        .iter()
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let y = x.iter().zip(&mask).map(|(a, m)| a * m).collect();
    Ok((y, mask))
}

pub fn dropout_seeded(x: &[f64], rate: f64, mode: Mode, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dropout(x, rate, mode, &mut rng).map(|(y, _)| y)
}

/// `-ln p[target]`, with the probability clamped below at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(PROB_FLOOR).ln()
}

/// Cross-entropy against a one-hot vector with exactly one 1.
pub fn cross_entropy_onehot(probs: &[f64], onehot: &[f64]) -> Result<f64> {
    if probs.len() != onehot.len() {
        return Err(Error::Shape(format!(
            "{} probabilities vs {} targets",
            probs.len(),
            onehot.len()
        )));
    }
    let ones: Vec<usize> = onehot
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 1.0)
        .map(|(i, _)| i)
        .collect();
    if ones.len() != 1 || onehot.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument("target is not one-hot".into()));
    }
    Ok(cross_entropy(probs, ones[0]))
}

/// Batch-averaged cross-entropy.
pub fn mean_cross_entropy(batch: &[(Vec<f64>, usize)]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|(p, t)| cross_entropy(p, *t)).sum::<f64>() / batch.len() as f64
}

/// Adam optimizer state for one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`; β1=0.9, β2=0.999, ε=1e-8.
    pub fn new<P: Parameters>(params: &P, lr: f64) -> Self {
        let shapes: Vec<Vec<f64>> = params.slices().iter().map(|s| vec![0.0; s.len()]).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }
}

/// One bias-corrected Adam update. Fails without touching anything if the
/// gradients contain a non-finite value or do not match the parameters.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    let g = grads.slices();
    {
        let p = params.slices();
        if p.len() != g.len()
            || p.len() != state.m.len()
            || p.iter()
                .zip(&g)
                .zip(&state.m)
                .any(|((a, b), m)| a.len() != b.len() || a.len() != m.len())
        {
            return Err(Error::Shape("Adam: gradients do not match parameters".into()));
        }
    }
    if g.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("Adam: gradient".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .slices_mut()
        .into_iter()
        .zip(g)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for k in 0..p.len() {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Denominator floor for relative errors, so that parameters whose true
/// gradient is essentially zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Flat index of the worst parameter.
    pub worst: usize,
}

/// Compares `analytic` against central differences of `loss` at every
/// parameter (or a seeded sample of `limit` of them).
/// Relative error is `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check<P, F>(params: &P, analytic: &P, mut loss: F, eps: f64, limit: Option<(usize, u64)>) -> GradCheckReport
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    let lens: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    let total: usize = lens.iter().sum();
    let analytic_flat: Vec<f64> = analytic.slices().iter().flat_map(|s| s.iter().copied()).collect();
    let mut indices: Vec<usize> = (0..total).collect();
    if let Some((n, seed)) = limit {
        if n < total {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(indices.as_mut_slice(), &mut rng);
            indices.truncate(n);
            indices.sort_unstable();
        }
    }

    let locate = |mut flat: usize| -> (usize, usize) {
        for (s, &len) in lens.iter().enumerate() {
            if flat < len {
                return (s, flat);
            }
            flat -= len;
        }
        unreachable!("index within parameter count")
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: indices.len(),
        worst: 0,
    };
    let mut probe = params.clone();
    for &flat in &indices {
        let (s, k) = locate(flat);
        let original = params.slices()[s][k];
        probe.slices_mut()[s][k] = original + eps;
        let plus = loss(&probe);
        probe.slices_mut()[s][k] = original - eps;
        let minus = loss(&probe);
        probe.slices_mut()[s][k] = original;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic_flat[flat];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = rel;
            report.worst = flat;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_lstm_step() {
        let p = LstmParams::zeros(3, 2);
        let (s, c) = lstm_step(&p, &[0.7, -1.3], &LstmState::zeros(3)).unwrap();
        assert_eq!(c.f, vec![0.5; 3]);
        assert_eq!(c.i, vec![0.5; 3]);
        assert_eq!(c.o, vec![0.5; 3]);
        assert_eq!(c.g, vec![0.0; 3]);
        assert_eq!(s.c, vec![0.0; 3]);
        assert_eq!(s.h, vec![0.0; 3]);
    }

    #[test]
    fn scalar_forget_bias() {
        let mut p = LstmParams::zeros(1, 1);
        p.forget.b[0] = 10.0;
        let prev = LstmState {
            h: vec![0.0],
            c: vec![2.0],
        };
        let (s, cache) = lstm_step(&p, &[0.3], &prev).unwrap();
        let f = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((cache.f[0] - 0.99995).abs() < 1e-5);
        assert!((s.c[0] - f * 2.0).abs() < 1e-15);
    }

    #[test]
    fn gates_depend_only_on_bias_for_zero_input() {
        let mut p = LstmParams::init(2, 3, &mut rng(4));
        p.input_gate.b = vec![0.3, -0.2];
        let (_, c) = lstm_step(&p, &[0.0; 3], &LstmState::zeros(2)).unwrap();
        assert_eq!(c.i, vec![sigmoid(0.3), sigmoid(-0.2)]);
        assert_eq!(c.f, vec![sigmoid(1.0); 2]);
    }

    #[test]
    fn lstm_shape_errors() {
        let p = LstmParams::zeros(2, 2);
        assert!(matches!(lstm_step(&p, &[0.0], &LstmState::zeros(2)), Err(Error::Shape(_))));
        assert!(matches!(lstm_forward(&p, &[], &LstmState::zeros(2)), Err(Error::EmptySequence)));
    }

    #[test]
    fn forward_base_cases() {
        let p = LstmParams::init(3, 2, &mut rng(1));
        let xs = vec![vec![0.5, -0.1]];
        let fw = lstm_forward(&p, &xs, &LstmState::zeros(3)).unwrap();
        let (s, _) = lstm_step(&p, &xs[0], &LstmState::zeros(3)).unwrap();
        assert_eq!(fw.state, s);
        let zero = LstmParams::zeros(3, 2);
        let fw = lstm_forward(&zero, &vec![vec![0.0; 2]; 5], &LstmState::zeros(3)).unwrap();
        assert!(fw.hs.iter().all(|h| h.iter().all(|&v| v == 0.0)));
        let a = lstm_forward(&p, &xs, &LstmState::zeros(3)).unwrap();
        let b = lstm_forward(&p, &xs, &LstmState::zeros(3)).unwrap();
        assert_eq!(a, b);
    }

    fn random_seq(len: usize, dim: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..len)
            .map(|_| (0..dim).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
            .collect()
    }

    // loss = Σ_t w_t · h_t  +  u · c_T
    fn weighted_loss(p: &LstmParams, xs: &[Vec<f64>], w: &[Vec<f64>], u: &[f64]) -> f64 {
        let fw = lstm_forward(p, xs, &LstmState::zeros(p.hidden)).unwrap();
        let mut l = 0.0;
        for (h, wt) in fw.hs.iter().zip(w) {
            l += h.iter().zip(wt).map(|(a, b)| a * b).sum::<f64>();
        }
        l + fw.state.c.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
    }

    #[test]
    fn lstm_backward_matches_finite_differences() {
        let mut r = rng(11);
        let p = LstmParams::init(4, 3, &mut r);
        let xs = random_seq(5, 3, &mut r);
        let w = random_seq(5, 4, &mut r);
        let u: Vec<f64> = (0..4).map(|_| r.random::<f64>()).collect();
        let fw = lstm_forward(&p, &xs, &LstmState::zeros(4)).unwrap();
        let d_final = LstmState {
            h: vec![0.0; 4],
            c: u.clone(),
        };
        let bw = lstm_backward(&p, &fw.cache, &w, &d_final).unwrap();
        let report = grad_check(&p, &bw.grads, |q| weighted_loss(q, &xs, &w, &u), 1e-5, None);
        assert!(report.max_rel_error < 1e-4, "{report:?}");

        // input gradients
        for t in 0..xs.len() {
            for k in 0..3 {
                let mut xp = xs.clone();
                xp[t][k] += 1e-5;
                let mut xm = xs.clone();
                xm[t][k] -= 1e-5;
                let num = (weighted_loss(&p, &xp, &w, &u) - weighted_loss(&p, &xm, &w, &u)) / 2e-5;
                assert!((num - bw.dxs[t][k]).abs() < 1e-8, "t={t} k={k}");
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng(2);
        let p = LstmParams::init(3, 2, &mut r);
        let xs = random_seq(4, 2, &mut r);
        let fw = lstm_forward(&p, &xs, &LstmState::zeros(3)).unwrap();
        let bw = lstm_backward(&p, &fw.cache, &vec![vec![0.0; 3]; 4], &LstmState::zeros(3)).unwrap();
        assert!(bw.grads.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn duplicated_sequence_doubles_gradient() {
        let mut r = rng(5);
        let p = LstmParams::init(3, 2, &mut r);
        let xs = random_seq(4, 2, &mut r);
        let dh: Vec<Vec<f64>> = random_seq(4, 3, &mut r);
        let fw = lstm_forward(&p, &xs, &LstmState::zeros(3)).unwrap();
        let single = lstm_backward(&p, &fw.cache, &dh, &LstmState::zeros(3)).unwrap().grads;
        let mut summed = single.clone();
        summed.add_assign(&lstm_backward(&p, &fw.cache, &dh, &LstmState::zeros(3)).unwrap().grads);
        let mut doubled = single.clone();
        doubled.scale(2.0);
        assert_eq!(summed, doubled);
    }

    #[test]
    fn lstm_backward_rejects_mismatched_cache() {
        let p = LstmParams::zeros(2, 2);
        let fw = lstm_forward(&p, &[vec![0.0; 2]], &LstmState::zeros(2)).unwrap();
        let other = LstmParams::zeros(3, 2);
        assert!(lstm_backward(&other, &fw.cache, &[vec![0.0; 3]], &LstmState::zeros(3)).is_err());
        assert!(lstm_backward(&p, &fw.cache, &[], &LstmState::zeros(2)).is_err());
    }

    #[test]
    fn softmax_properties() {
        assert_eq!(softmax(&[2.0; 4]), vec![0.25; 4]);
        let a = softmax(&[1.0, 2.0, -3.0]);
        let b = softmax(&[101.0, 102.0, 97.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        let big = softmax(&[1000.0, 0.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dense_relu_clamps() {
        let w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        assert_eq!(dense_relu(&w, &[0.0, 0.0], &[2.0, 3.0]).unwrap(), vec![2.0, 0.0]);
        assert!(dense_relu(&w, &[0.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn dropout_modes() {
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(dropout_seeded(&x, 0.0, Mode::Train, 1).unwrap(), x);
        assert_eq!(dropout_seeded(&x, 0.0, Mode::Inference, 1).unwrap(), x);
        assert_eq!(dropout_seeded(&x, 0.5, Mode::Inference, 1).unwrap(), x);
        assert!(dropout_seeded(&x, 1.0, Mode::Train, 1).is_err());
        let y = dropout_seeded(&x, 0.5, Mode::Train, 9).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!(*b == 0.0 || *b == 2.0 * a);
        }
    }

    #[test]
    fn dropout_preserves_expectation() {
        let x = vec![1.0; 100_000];
        let y = dropout_seeded(&x, 0.5, Mode::Train, 3).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0), 0.0);
        assert!((cross_entropy(&[1.0 / 3.0; 3], 1) - 3f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[0.7, 0.2, 0.1], 0) - 0.356_674_943_938_732_4).abs() < 1e-15);
        assert_eq!(cross_entropy(&[1.0, 0.0], 1), -PROB_FLOOR.ln());
        assert!(cross_entropy_onehot(&[0.5, 0.5], &[1.0, 1.0]).is_err());
        assert_eq!(cross_entropy_onehot(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 2f64.ln());
        let batch = vec![(vec![1.0, 0.0], 0), (vec![0.5, 0.5], 0)];
        assert!((mean_cross_entropy(&batch) - 2f64.ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn adam_fixed_point_and_first_step() {
        let mut p = Dense::init(3, 2, &mut rng(1));
        let before = p.clone();
        let mut st = AdamState::new(&p, 0.001);
        let zero = Dense::zeros(3, 2);
        adam_step(&mut p, &zero, &mut st).unwrap();
        assert_eq!(p, before);
        assert!(st.m.iter().chain(&st.v).all(|s| s.iter().all(|&v| v == 0.0)));
        assert_eq!(st.t, 1);

        let mut p = before.clone();
        let mut st = AdamState::new(&p, 0.001);
        let mut g = Dense::zeros(3, 2);
        g.fill(0.37);
        g.b[1] = -2.0;
        adam_step(&mut p, &g, &mut st).unwrap();
        for (a, b) in p.slices().iter().zip(before.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert!(((y - x).abs() - 0.001).abs() < 1e-8);
            }
        }
        assert!(p.b[1] > before.b[1]);
    }

    #[test]
    fn adam_is_deterministic_and_rejects_nan() {
        let p0 = Dense::init(2, 2, &mut rng(3));
        let mut g = Dense::zeros(2, 2);
        g.fill(0.1);
        let run = || {
            let mut p = p0.clone();
            let mut st = AdamState::new(&p, 0.001);
            adam_step(&mut p, &g, &mut st).unwrap();
            (p, st)
        };
        assert_eq!(run(), run());
        let mut p = p0.clone();
        let mut st = AdamState::new(&p, 0.001);
        g.b[0] = f64::NAN;
        assert!(matches!(adam_step(&mut p, &g, &mut st), Err(Error::NonFinite(_))));
        assert_eq!(p, p0);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn grad_check_on_quadratic() {
        // L = Σ (k+1) x_k²
        let p = Dense::init(3, 3, &mut rng(8));
        let loss = |q: &Dense| -> f64 {
            q.slices()
                .iter()
                .flat_map(|s| s.iter())
                .enumerate()
                .map(|(k, v)| (k as f64 + 1.0) * v * v)
                .sum()
        };
        let mut grad = p.clone();
        let mut k = 0;
        for s in grad.slices_mut() {
            for v in s.iter_mut() {
                *v *= 2.0 * (k as f64 + 1.0);
                k += 1;
            }
        }
        let r = grad_check(&p, &grad, loss, 1e-5, None);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 12);

        let mut corrupt = grad.clone();
        corrupt.b[0] += 0.5;
        let r = grad_check(&p, &corrupt, loss, 1e-5, None);
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst, 9);
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(z in prop::collection::vec(-10.0f64..10.0, 1..12)) {
            let p = softmax(&z);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0 || z.len() == 1));
        }

        #[test]
        fn hidden_state_is_bounded(seed in 0u64..1000, scale in 0.1f64..3.0) {
            let mut r = rng(seed);
            let mut p = LstmParams::init(4, 3, &mut r);
            p.scale(scale);
            let xs = random_seq(6, 3, &mut r);
            let fw = lstm_forward(&p, &xs, &LstmState::zeros(4)).unwrap();
            for h in &fw.hs {
                prop_assert!(h.iter().all(|&v| v > -1.0 && v < 1.0));
            }
            let bw = lstm_backward(&p, &fw.cache, &xs.iter().map(|_| vec![1.0; 4]).collect::<Vec<_>>(), &LstmState::zeros(4)).unwrap();
            prop_assert!(bw.grads.all_finite());
        }
    }
}

//! Dense and recurrent network stack with analytic gradients.
//!
//! A network is a fixed pipeline of layers whose parameters live in one flat
//! buffer. The forward pass is exposed one time-step at a time so callers
//! (the symmetrizer in particular) can thread recurrent state themselves;
//! every step can optionally record a [`StepCache`] that the matching
//! [`Network::step_backward`] consumes.

mod gradcheck;
mod optim;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EqcError, Result};

pub use gradcheck::{grad_check, max_relative_error, numerical_gradient, probe_loss, GradCheckLoss};
pub use optim::{OptimizerConfig, OptimizerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear { out: usize },
    Activation { function: Activation },
    Lstm { hidden: usize },
    /// Value and mean-centred advantage streams summed into Q-values.
    DuelingHead { actions: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn output_width(&self) -> usize {
        let mut w = self.input_width;
        for l in &self.layers {
            w = match *l {
                LayerSpec::Linear { out } => out,
                LayerSpec::Activation { .. } => w,
                LayerSpec::Lstm { hidden } => hidden,
                LayerSpec::DuelingHead { actions } => actions,
            };
        }
        w
    }

    pub fn has_recurrence(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Lstm { .. }))
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Linear {
        input: usize,
        output: usize,
        w: usize,
        b: usize,
    },
    Act {
        function: Activation,
    },
    Lstm {
        input: usize,
        hidden: usize,
        w: usize,
        u: usize,
        b: usize,
        slot: usize,
    },
    Dueling {
        input: usize,
        actions: usize,
        v: usize,
        vb: usize,
        a: usize,
        ab: usize,
    },
}

/// Per-LSTM-layer hidden and cell vectors.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RecurrentState {
    pub layers: Vec<LstmState>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(widths: &[usize]) -> Self {
        RecurrentState {
            layers: widths
                .iter()
                .map(|&n| LstmState {
                    h: vec![0.0; n],
                    c: vec![0.0; n],
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Total number of floats held.
    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.h.len() + l.c.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        RecurrentState {
            layers: self
                .layers
                .iter()
                .map(|l| LstmState {
                    h: vec![0.0; l.h.len()],
                    c: vec![0.0; l.c.len()],
                })
                .collect(),
        }
    }

    /// Elementwise mean, summed in slice order.
    pub fn mean(states: &[RecurrentState]) -> Self {
        let first = &states[0];
        let n = states.len() as f64;
        let mut out = first.clone();
        for s in &states[1..] {
            out.add_assign(s);
        }
        out.scale(1.0 / n);
        out
    }

    pub fn add_assign(&mut self, other: &RecurrentState) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.h.iter_mut().zip(&b.h) {
                *x += y;
            }
            for (x, y) in a.c.iter_mut().zip(&b.c) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.h.iter_mut().chain(l.c.iter_mut()).for_each(|x| *x *= k);
        }
    }

    pub fn max_abs_diff(&self, other: &RecurrentState) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| {
                a.h.iter()
                    .zip(&b.h)
                    .chain(a.c.iter().zip(&b.c))
                    .map(|(x, y)| (x - y).abs())
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
enum LayerCache {
    Linear,
    Act { out: Vec<f64> },
    Lstm {
        h_prev: Vec<f64>,
        c_prev: Vec<f64>,
        /// Post-nonlinearity gates i, f, g, o stacked.
        gates: Vec<f64>,
        tanh_c: Vec<f64>,
    },
    Dueling,
}

/// Intermediates of one forward step.
#[derive(Clone, Debug)]
pub struct StepCache {
    inputs: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
}

/// Intermediates of a full sequence, produced by [`Network::forward_trace`].
#[derive(Clone, Debug)]
pub struct SequenceTrace {
    pub outputs: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
}

impl SequenceTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Parameter gradients, laid out like [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients(vec![0.0; n])
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|x| *x *= k);
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// A layered function approximator `h(core(f(x)))`.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<f64>,
    layers: Vec<Layer>,
    lstm_widths: Vec<usize>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

/// On-disk checkpoint `{spec, params}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        out[r] += s;
    }
}

/// `dw += d ⊗ x`, `dx += wᵀ d`.
fn outer_backward(
    w: &[f64],
    dw: &mut [f64],
    rows: usize,
    cols: usize,
    x: &[f64],
    d: &[f64],
    dx: &mut [f64],
) {
    for r in 0..rows {
        let dr = d[r];
        if dr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            drow[c] += dr * x[c];
            dx[c] += dr * row[c];
        }
    }
}

impl Network {
    fn build(spec: &NetworkSpec) -> Result<(Vec<Layer>, usize, Vec<usize>)> {
        if spec.input_width == 0 {
            return Err(EqcError::InvalidSpec("input width must be positive".into()));
        }
        if spec.layers.is_empty() {
            return Err(EqcError::InvalidSpec("network has no layers".into()));
        }
        if !matches!(spec.layers[0], LayerSpec::Linear { .. }) {
            return Err(EqcError::InvalidSpec("first layer must be linear".into()));
        }
        match spec.layers.last() {
            Some(LayerSpec::Linear { .. }) | Some(LayerSpec::DuelingHead { .. }) => {}
            _ => {
                return Err(EqcError::InvalidSpec(
                    "last layer must be linear or a dueling head".into(),
                ))
            }
        }
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut width = spec.input_width;
        let mut offset = 0;
        let mut lstm_widths = Vec::new();
        for (i, l) in spec.layers.iter().enumerate() {
            match *l {
                LayerSpec::Linear { out } => {
                    if out == 0 {
                        return Err(EqcError::InvalidSpec(format!("layer {i} has zero width")));
                    }
                    let w = offset;
                    let b = w + out * width;
                    offset = b + out;
                    layers.push(Layer::Linear {
                        input: width,
                        output: out,
                        w,
                        b,
                    });
                    width = out;
                }
                LayerSpec::Activation { function } => layers.push(Layer::Act { function }),
                LayerSpec::Lstm { hidden } => {
                    if hidden == 0 {
                        return Err(EqcError::InvalidSpec(format!("layer {i} has zero width")));
                    }
                    let w = offset;
                    let u = w + 4 * hidden * width;
                    let b = u + 4 * hidden * hidden;
                    offset = b + 4 * hidden;
                    layers.push(Layer::Lstm {
                        input: width,
                        hidden,
                        w,
                        u,
                        b,
                        slot: lstm_widths.len(),
                    });
                    lstm_widths.push(hidden);
                    width = hidden;
                }
                LayerSpec::DuelingHead { actions } => {
                    if actions == 0 {
                        return Err(EqcError::InvalidSpec(format!("layer {i} has zero width")));
                    }
                    if i + 1 != spec.layers.len() {
                        return Err(EqcError::InvalidSpec("dueling head must be the last layer".into()));
                    }
                    let v = offset;
                    let vb = v + width;
                    let a = vb + 1;
                    let ab = a + actions * width;
                    offset = ab + actions;
                    layers.push(Layer::Dueling {
                        input: width,
                        actions,
                        v,
                        vb,
                        a,
                        ab,
                    });
                    width = actions;
                }
            }
        }
        Ok((layers, offset, lstm_widths))
    }

    /// Deterministic initialisation from `spec.seed`: weights uniform in
    /// ±1/√fan_in, biases zero.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let (layers, count, lstm_widths) = Self::build(&spec)?;
        let mut params = vec![0.0; count];
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut fill = |params: &mut [f64], start: usize, len: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[start..start + len] {
                *p = rng.random_range(-bound..bound);
            }
        };
        for l in &layers {
            match *l {
                Layer::Linear { input, output, w, .. } => fill(&mut params, w, input * output, input),
                Layer::Lstm {
                    input, hidden, w, u, ..
                } => {
                    fill(&mut params, w, 4 * hidden * input, input);
                    fill(&mut params, u, 4 * hidden * hidden, hidden);
                }
                Layer::Dueling {
                    input, actions, v, a, ..
                } => {
                    fill(&mut params, v, input, input);
                    fill(&mut params, a, actions * input, input);
                }
                Layer::Act { .. } => {}
            }
        }
        Ok(Network {
            spec,
            params,
            layers,
            lstm_widths,
        })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        let (layers, count, lstm_widths) = Self::build(&spec)?;
        if params.len() != count {
            return Err(EqcError::WidthMismatch {
                context: "parameter vector",
                expected: count,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(EqcError::NonFinite("parameters"));
        }
        Ok(Network {
            spec,
            params,
            layers,
            lstm_widths,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    pub fn is_recurrent(&self) -> bool {
        !self.lstm_widths.is_empty()
    }

    pub fn zero_state(&self) -> RecurrentState {
        RecurrentState::zeros(&self.lstm_widths)
    }

    fn check_input(&self, x: &[f64], state: &RecurrentState) -> Result<()> {
        if x.len() != self.spec.input_width {
            return Err(EqcError::WidthMismatch {
                context: "network input",
                expected: self.spec.input_width,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EqcError::NonFinite("network input"));
        }
        if state.layers.len() != self.lstm_widths.len()
            || state
                .layers
                .iter()
                .zip(&self.lstm_widths)
                .any(|(s, &w)| s.h.len() != w || s.c.len() != w)
        {
            return Err(EqcError::WidthMismatch {
                context: "recurrent state",
                expected: self.lstm_widths.iter().sum(),
                got: state.layers.iter().map(|s| s.h.len()).sum(),
            });
        }
        Ok(())
    }

    /// One forward step.
    pub fn forward(&self, x: &[f64], state: &RecurrentState) -> Result<(Vec<f64>, RecurrentState)> {
        self.check_input(x, state)?;
        let (out, next, _) = self.step_impl(x, state, false);
        Ok((out, next))
    }

    /// One forward step recording intermediates for backpropagation.
    pub fn forward_cached(
        &self,
        x: &[f64],
        state: &RecurrentState,
    ) -> Result<(Vec<f64>, RecurrentState, StepCache)> {
        self.check_input(x, state)?;
        let (out, next, cache) = self.step_impl(x, state, true);
        Ok((out, next, cache.expect("cache requested")))
    }

    fn step_impl(
        &self,
        x: &[f64],
        state: &RecurrentState,
        record: bool,
    ) -> (Vec<f64>, RecurrentState, Option<StepCache>) {
        let p = &self.params;
        let mut next = state.clone();
        let mut cur = x.to_vec();
        let mut inputs = Vec::new();
        let mut caches = Vec::new();
        for layer in &self.layers {
            let out = match *layer {
                Layer::Linear { input, output, w, b } => {
                    let mut out = p[b..b + output].to_vec();
                    matvec_add(&p[w..w + input * output], output, input, &cur, &mut out);
                    if record {
                        caches.push(LayerCache::Linear);
                    }
                    out
                }
                Layer::Act { function } => {
                    let out: Vec<f64> = match function {
                        Activation::Relu => cur.iter().map(|&v| v.max(0.0)).collect(),
                        Activation::Tanh => cur.iter().map(|&v| v.tanh()).collect(),
                    };
                    if record {
                        caches.push(LayerCache::Act { out: out.clone() });
                    }
                    out
                }
                Layer::Lstm {
                    input,
                    hidden,
                    w,
                    u,
                    b,
                    slot,
                } => {
                    let prev = &state.layers[slot];
                    let mut z = p[b..b + 4 * hidden].to_vec();
                    matvec_add(&p[w..w + 4 * hidden * input], 4 * hidden, input, &cur, &mut z);
                    matvec_add(&p[u..u + 4 * hidden * hidden], 4 * hidden, hidden, &prev.h, &mut z);
                    for k in 0..hidden {
                        z[k] = sigmoid(z[k]);
                        z[hidden + k] = sigmoid(z[hidden + k]);
                        z[2 * hidden + k] = z[2 * hidden + k].tanh();
                        z[3 * hidden + k] = sigmoid(z[3 * hidden + k]);
                    }
                    let mut c = vec![0.0; hidden];
                    let mut tanh_c = vec![0.0; hidden];
                    let mut h = vec![0.0; hidden];
                    for k in 0..hidden {
                        c[k] = z[hidden + k] * prev.c[k] + z[k] * z[2 * hidden + k];
                        tanh_c[k] = c[k].tanh();
                        h[k] = z[3 * hidden + k] * tanh_c[k];
                    }
                    if record {
                        caches.push(LayerCache::Lstm {
                            h_prev: prev.h.clone(),
                            c_prev: prev.c.clone(),
                            gates: z,
                            tanh_c,
                        });
                    }
                    next.layers[slot] = LstmState { h: h.clone(), c };
                    h
                }
                Layer::Dueling {
                    input,
                    actions,
                    v,
                    vb,
                    a,
                    ab,
                } => {
                    let mut value = p[vb];
                    for (wv, xv) in p[v..v + input].iter().zip(&cur) {
                        value += wv * xv;
                    }
                    let mut adv = p[ab..ab + actions].to_vec();
                    matvec_add(&p[a..a + actions * input], actions, input, &cur, &mut adv);
                    let mean = adv.iter().sum::<f64>() / actions as f64;
                    if record {
                        caches.push(LayerCache::Dueling);
                    }
                    adv.iter().map(|&q| value + q - mean).collect()
                }
            };
            if record {
                inputs.push(std::mem::replace(&mut cur, out));
            } else {
                cur = out;
            }
        }
        let cache = record.then_some(StepCache {
            inputs,
            layers: caches,
        });
        (cur, next, cache)
    }

    /// Backpropagate one step. `d_out` is the gradient of the loss w.r.t.
    /// this step's output and `d_next` w.r.t. the state it produced.
    /// Parameter gradients are accumulated into `grads`; the gradients with
    /// respect to the step input and the incoming state are returned.
    pub fn step_backward(
        &self,
        cache: &StepCache,
        d_out: &[f64],
        d_next: &RecurrentState,
        grads: &mut Gradients,
    ) -> (Vec<f64>, RecurrentState) {
        let p = &self.params;
        let g = &mut grads.0;
        let mut d_prev_state = d_next.clone();
        let mut d = d_out.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[li];
            d = match (layer, &cache.layers[li]) {
                (&Layer::Linear { input, output, w, b }, LayerCache::Linear) => {
                    let mut dx = vec![0.0; input];
                    outer_backward(
                        &p[w..w + input * output],
                        &mut g[w..w + input * output],
                        output,
                        input,
                        x,
                        &d,
                        &mut dx,
                    );
                    for (gb, dv) in g[b..b + output].iter_mut().zip(&d) {
                        *gb += dv;
                    }
                    dx
                }
                (&Layer::Act { function }, LayerCache::Act { out }) => match function {
                    Activation::Relu => d
                        .iter()
                        .zip(out)
                        .map(|(dv, &o)| if o > 0.0 { *dv } else { 0.0 })
                        .collect(),
                    Activation::Tanh => d.iter().zip(out).map(|(dv, o)| dv * (1.0 - o * o)).collect(),
                },
                (
                    &Layer::Lstm {
                        input,
                        hidden,
                        w,
                        u,
                        b,
                        slot,
                    },
                    LayerCache::Lstm {
                        h_prev,
                        c_prev,
                        gates,
                        tanh_c,
                    },
                ) => {
                    let carried = &d_next.layers[slot];
                    let (gi, rest) = gates.split_at(hidden);
                    let (gf, rest) = rest.split_at(hidden);
                    let (gg, go) = rest.split_at(hidden);
                    let mut dz = vec![0.0; 4 * hidden];
                    let mut dc_prev = vec![0.0; hidden];
                    for k in 0..hidden {
                        let dh = d[k] + carried.h[k];
                        let d_o = dh * tanh_c[k];
                        let dc = carried.c[k] + dh * go[k] * (1.0 - tanh_c[k] * tanh_c[k]);
                        let d_i = dc * gg[k];
                        let d_g = dc * gi[k];
                        let d_f = dc * c_prev[k];
                        dc_prev[k] = dc * gf[k];
                        dz[k] = d_i * gi[k] * (1.0 - gi[k]);
                        dz[hidden + k] = d_f * gf[k] * (1.0 - gf[k]);
                        dz[2 * hidden + k] = d_g * (1.0 - gg[k] * gg[k]);
                        dz[3 * hidden + k] = d_o * go[k] * (1.0 - go[k]);
                    }
                    let mut dx = vec![0.0; input];
                    outer_backward(
                        &p[w..w + 4 * hidden * input],
                        &mut g[w..w + 4 * hidden * input],
                        4 * hidden,
                        input,
                        x,
                        &dz,
                        &mut dx,
                    );
                    let mut dh_prev = vec![0.0; hidden];
                    outer_backward(
                        &p[u..u + 4 * hidden * hidden],
                        &mut g[u..u + 4 * hidden * hidden],
                        4 * hidden,
                        hidden,
                        h_prev,
                        &dz,
                        &mut dh_prev,
                    );
                    for (gb, dv) in g[b..b + 4 * hidden].iter_mut().zip(&dz) {
                        *gb += dv;
                    }
                    d_prev_state.layers[slot] = LstmState {
                        h: dh_prev,
                        c: dc_prev,
                    };
                    dx
                }
                (
                    &Layer::Dueling {
                        input,
                        actions,
                        v,
                        vb,
                        a,
                        ab,
                    },
                    LayerCache::Dueling,
                ) => {
                    let d_value: f64 = d.iter().sum();
                    let mean = d_value / actions as f64;
                    let d_adv: Vec<f64> = d.iter().map(|dq| dq - mean).collect();
                    let mut dx = vec![0.0; input];
                    for c in 0..input {
                        g[v + c] += d_value * x[c];
                        dx[c] += d_value * p[v + c];
                    }
                    g[vb] += d_value;
                    outer_backward(
                        &p[a..a + actions * input],
                        &mut g[a..a + actions * input],
                        actions,
                        input,
                        x,
                        &d_adv,
                        &mut dx,
                    );
                    for (gb, dv) in g[ab..ab + actions].iter_mut().zip(&d_adv) {
                        *gb += dv;
                    }
                    dx
                }
                _ => unreachable!("cache does not match layer"),
            };
        }
        (d, d_prev_state)
    }

    /// Run a sequence from the zero state.
    pub fn forward_sequence(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut state = self.zero_state();
        let mut outs = Vec::with_capacity(xs.len());
        for x in xs {
            let (y, s) = self.forward(x, &state)?;
            state = s;
            outs.push(y);
        }
        Ok(outs)
    }

    /// Run a sequence from the zero state, keeping everything needed by
    /// [`Network::backward`].
    pub fn forward_trace(&self, xs: &[Vec<f64>]) -> Result<SequenceTrace> {
        let mut state = self.zero_state();
        let mut outputs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (y, s, c) = self.forward_cached(x, &state)?;
            state = s;
            outputs.push(y);
            steps.push(c);
        }
        Ok(SequenceTrace { outputs, steps })
    }

    /// Full backpropagation through time. `d_outputs[t]` is the loss
    /// gradient w.r.t. `trace.outputs[t]`.
    pub fn backward(&self, trace: &SequenceTrace, d_outputs: &[Vec<f64>]) -> Result<Gradients> {
        if d_outputs.len() != trace.steps.len() {
            return Err(EqcError::WidthMismatch {
                context: "sequence gradient",
                expected: trace.steps.len(),
                got: d_outputs.len(),
            });
        }
        let mut grads = Gradients::zeros(self.params.len());
        let mut d_state = self.zero_state();
        for (cache, d) in trace.steps.iter().zip(d_outputs).rev() {
            let (_, ds) = self.step_backward(cache, d, &d_state, &mut grads);
            d_state = ds;
        }
        Ok(grads)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.spec.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        Self::from_params(ck.spec, ck.params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| EqcError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| EqcError::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Convenience spec: linear → activation → [lstm] → linear head.
pub fn mlp_spec(input: usize, hidden: usize, outputs: usize, lstm: bool, seed: u64) -> NetworkSpec {
    let mut layers = vec![
        LayerSpec::Linear { out: hidden },
        LayerSpec::Activation {
            function: Activation::Relu,
        },
    ];
    if lstm {
        layers.push(LayerSpec::Lstm { hidden });
    }
    layers.push(LayerSpec::Linear { out: outputs });
    NetworkSpec {
        input_width: input,
        layers,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(input: usize, out: usize) -> NetworkSpec {
        NetworkSpec {
            input_width: input,
            layers: vec![LayerSpec::Linear { out }],
            seed: 1,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let spec = mlp_spec(5, 8, 3, true, 42);
        let a = Network::new(spec.clone()).unwrap();
        let b = Network::new(spec).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn param_count_of_single_linear() {
        assert_eq!(Network::new(linear(3, 4)).unwrap().param_count(), 16);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(Network::new(linear(3, 0)).is_err());
        let spec = NetworkSpec {
            input_width: 3,
            layers: vec![LayerSpec::Lstm { hidden: 4 }, LayerSpec::Linear { out: 2 }],
            seed: 0,
        };
        assert!(Network::new(spec).is_err());
        let spec = NetworkSpec {
            input_width: 3,
            layers: vec![
                LayerSpec::Linear { out: 4 },
                LayerSpec::Activation {
                    function: Activation::Tanh,
                },
            ],
            seed: 0,
        };
        assert!(Network::new(spec).is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = NetworkSpec {
            input_width: 3,
            layers: vec![
                LayerSpec::Linear { out: 4 },
                LayerSpec::Activation {
                    function: Activation::Tanh,
                },
                LayerSpec::Linear { out: 2 },
            ],
            seed: 0,
        };
        let n = Network::new(spec.clone()).unwrap();
        let z = Network::from_params(spec, vec![0.0; n.param_count()]).unwrap();
        let (y, _) = z.forward(&[1.0, -2.0, 3.0], &z.zero_state()).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_layer_matches_hand_computation() {
        // W = [[1, 2], [3, 4]], b = [0.5, -1]
        let net = Network::from_params(linear(2, 2), vec![1.0, 2.0, 3.0, 4.0, 0.5, -1.0]).unwrap();
        let (y, s) = net.forward(&[1.0, -1.0], &net.zero_state()).unwrap();
        assert_eq!(y, vec![-0.5, -2.0]);
        assert!(s.is_empty());
    }

    #[test]
    fn feedforward_ignores_state_and_rejects_bad_input() {
        let net = Network::new(mlp_spec(3, 5, 2, false, 3)).unwrap();
        let x = [0.1, 0.2, 0.3];
        assert_eq!(
            net.forward(&x, &net.zero_state()).unwrap().0,
            net.forward(&x, &net.zero_state()).unwrap().0
        );
        assert!(net.forward(&[0.0; 4], &net.zero_state()).is_err());
        assert!(net.forward(&[f64::NAN, 0.0, 0.0], &net.zero_state()).is_err());
    }

    #[test]
    fn sequence_examples() {
        let net = Network::new(mlp_spec(3, 6, 2, true, 9)).unwrap();
        assert!(net.forward_sequence(&[]).unwrap().is_empty());
        let x = vec![0.3, -0.7, 1.1];
        let ys = net.forward_sequence(&[x.clone(), x.clone()]).unwrap();
        assert_ne!(ys[0], ys[1]);
        let ff = Network::new(mlp_spec(3, 6, 2, false, 9)).unwrap();
        let ys = ff.forward_sequence(&[x.clone(), x.clone()]).unwrap();
        assert_eq!(ys[0], ys[1]);
        assert_eq!(ys[0], ff.forward(&x, &ff.zero_state()).unwrap().0);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_grads() {
        let net = Network::new(mlp_spec(3, 4, 2, true, 5)).unwrap();
        let xs = vec![vec![0.1, 0.2, 0.3]; 3];
        let tr = net.forward_trace(&xs).unwrap();
        let g = net.backward(&tr, &vec![vec![0.0; 2]; 3]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn squared_loss_gradient_of_linear_layer() {
        let net = Network::from_params(linear(2, 2), vec![1.0, 2.0, 3.0, 4.0, 0.5, -1.0]).unwrap();
        let x = vec![1.0, -1.0];
        let y = [0.0, 1.0];
        let tr = net.forward_trace(std::slice::from_ref(&x)).unwrap();
        let out = &tr.outputs[0];
        let d: Vec<f64> = out.iter().zip(&y).map(|(o, t)| 2.0 * (o - t)).collect();
        let g = net.backward(&tr, std::slice::from_ref(&d)).unwrap();
        // dW = 2(Wx + b - y) xᵀ, db = 2(Wx + b - y)
        let expected = vec![
            d[0] * x[0],
            d[0] * x[1],
            d[1] * x[0],
            d[1] * x[1],
            d[0],
            d[1],
        ];
        assert_eq!(g.0, expected);
        assert_eq!(expected, vec![-1.0, 1.0, -6.0, 6.0, -1.0, -6.0]);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let net = Network::new(mlp_spec(4, 7, 3, true, 11)).unwrap();
        let back = Network::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let bits: Vec<u64> = back.params().iter().map(|p| p.to_bits()).collect();
        let orig: Vec<u64> = net.params().iter().map(|p| p.to_bits()).collect();
        assert_eq!(bits, orig);
    }

    #[test]
    fn dueling_head_is_mean_centred() {
        let spec = NetworkSpec {
            input_width: 2,
            layers: vec![LayerSpec::Linear { out: 3 }, LayerSpec::DuelingHead { actions: 4 }],
            seed: 8,
        };
        let net = Network::new(spec).unwrap();
        let (q, _) = net.forward(&[0.4, -0.2], &net.zero_state()).unwrap();
        // mean(Q) = V since the advantage stream is centred
        let vb_index = net.param_count() - 4 - 4 * 3 - 1;
        let mut value = net.params()[vb_index];
        let h = net
            .forward(&[0.4, -0.2], &net.zero_state())
            .map(|_| ())
            .and_then(|_| {
                let lin = Network::from_params(
                    NetworkSpec {
                        input_width: 2,
                        layers: vec![LayerSpec::Linear { out: 3 }],
                        seed: 0,
                    },
                    net.params()[..9].to_vec(),
                )?;
                Ok(lin.forward(&[0.4, -0.2], &lin.zero_state())?.0)
            })
            .unwrap();
        for (w, hk) in net.params()[9..12].iter().zip(&h) {
            value += w * hk;
        }
        let mean_q = q.iter().sum::<f64>() / 4.0;
        assert!((mean_q - value).abs() < 1e-12);
    }
}

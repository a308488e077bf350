//! Fully-connected tanh networks with exact input Hessians, and
//! physics-informed training on the stochastic Zubov equation.
//!
//! Each layer propagates the triple (value, Jacobian, Hessian) with respect
//! to the network input. The loss depends on all three, so the parameter
//! gradient is a reverse sweep over that second-order forward pass.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::expr::{EvalError, Hyperbox};
use crate::sim::ValueSample;
use crate::system::{CompiledSystem, Jet, SmoothFunction, StochasticSystem};

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("a network needs at least an input and an output size")]
    TooFewLayers,
    #[error("the output layer must have exactly one unit")]
    OutputSize,
    #[error("layer sizes must be positive")]
    ZeroSize,
    #[error("layer {layer}: expected {expected} values, got {got}")]
    ParameterCount { layer: usize, expected: usize, got: usize },
    #[error("parameters must be finite")]
    NonFinite,
    #[error("at most {MAX_INPUT} inputs are supported")]
    TooManyInputs,
}

/// Scalar network `ℝⁿ → ℝ`: tanh on hidden layers, identity output.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralFunction {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

fn check_sizes(sizes: &[usize]) -> Result<(), NetError> {
    if sizes.len() < 2 {
        return Err(NetError::TooFewLayers);
    }
    if sizes.contains(&0) {
        return Err(NetError::ZeroSize);
    }
    if *sizes.last().unwrap() != 1 {
        return Err(NetError::OutputSize);
    }
    if sizes[0] > MAX_INPUT {
        return Err(NetError::TooManyInputs);
    }
    Ok(())
}

impl NeuralFunction {
    pub fn zeros(sizes: &[usize]) -> Result<Self, NetError> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Layer { inputs: w[0], outputs: w[1], weights: vec![0.0; w[0] * w[1]], biases: vec![0.0; w[1]] })
            .collect();
        Ok(NeuralFunction { sizes: sizes.to_vec(), layers })
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn glorot(sizes: &[usize], seed: u64) -> Result<Self, NetError> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let limit = libm::sqrt(6.0 / (layer.inputs + layer.outputs) as f64);
            for w in &mut layer.weights {
                *w = limit * (2.0 * uniform01(&mut rng) - 1.0);
            }
        }
        Ok(net)
    }

    /// Build from `(weights, biases)` per layer, weights row-major
    /// `outputs × inputs`.
    pub fn from_parameters(sizes: &[usize], params: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self, NetError> {
        check_sizes(sizes)?;
        if params.len() != sizes.len() - 1 {
            return Err(NetError::ParameterCount { layer: params.len(), expected: sizes.len() - 1, got: params.len() });
        }
        let mut layers = Vec::with_capacity(params.len());
        for (l, (w, b)) in params.into_iter().enumerate() {
            let (i, o) = (sizes[l], sizes[l + 1]);
            if w.len() != i * o {
                return Err(NetError::ParameterCount { layer: l, expected: i * o, got: w.len() });
            }
            if b.len() != o {
                return Err(NetError::ParameterCount { layer: l, expected: o, got: b.len() });
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite);
            }
            layers.push(Layer { inputs: i, outputs: o, weights: w, biases: b });
        }
        Ok(NeuralFunction { sizes: sizes.to_vec(), layers })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn is_hidden(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Flat parameters: each layer's weights then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.biases);
        }
        p
    }

    /// # Panics
    /// If `p.len() != num_parameters()`.
    pub fn set_parameters(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_parameters());
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let hidden = self.is_hidden(l);
            a = (0..layer.outputs)
                .map(|k| {
                    let mut u = layer.biases[k];
                    for (j, aj) in a.iter().enumerate() {
                        u += layer.weight(k, j) * aj;
                    }
                    if hidden {
                        libm::tanh(u)
                    } else {
                        u
                    }
                })
                .collect();
        }
        a[0]
    }

    /// Value, input gradient and input Hessian (row-major).
    pub fn eval_with_derivatives(&self, x: &[f64]) -> Jet {
        let mut tape = Tape::default();
        self.forward(x, &mut tape)
    }

    fn forward(&self, x: &[f64], tape: &mut Tape) -> Jet {
        let n = self.input_dim();
        let nn = n * n;
        tape.resize(self);
        {
            let inp = &mut tape.acts[0];
            inp.a.copy_from_slice(x);
            inp.j.fill(0.0);
            for p in 0..n {
                inp.j[p * n + p] = 1.0;
            }
            inp.h.fill(0.0);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = tape.acts.split_at_mut(l + 1);
            let inp = &before[l];
            let out = &mut after[0];
            let pre = &mut tape.pre[l];
            let hidden = self.is_hidden(l);
            for k in 0..layer.outputs {
                let mut u = layer.biases[k];
                let ju = &mut pre.ju[k * n..(k + 1) * n];
                let hu = &mut pre.hu[k * nn..(k + 1) * nn];
                ju.fill(0.0);
                hu.fill(0.0);
                for j in 0..layer.inputs {
                    let w = layer.weight(k, j);
                    if w == 0.0 {
                        continue;
                    }
                    u += w * inp.a[j];
                    for (d, s) in ju.iter_mut().zip(&inp.j[j * n..(j + 1) * n]) {
                        *d += w * s;
                    }
                    if l > 0 {
                        for (d, s) in hu.iter_mut().zip(&inp.h[j * nn..(j + 1) * nn]) {
                            *d += w * s;
                        }
                    }
                }
                let oj = &mut out.j[k * n..(k + 1) * n];
                let oh = &mut out.h[k * nn..(k + 1) * nn];
                if hidden {
                    let s = libm::tanh(u);
                    let s1 = 1.0 - s * s;
                    let s2 = -2.0 * s * s1;
                    pre.s[k] = s;
                    pre.s1[k] = s1;
                    pre.s2[k] = s2;
                    out.a[k] = s;
                    for p in 0..n {
                        oj[p] = s1 * ju[p];
                        for q in 0..n {
                            oh[p * n + q] = s1 * hu[p * n + q] + s2 * ju[p] * ju[q];
                        }
                    }
                } else {
                    out.a[k] = u;
                    oj.copy_from_slice(ju);
                    oh.copy_from_slice(hu);
                }
            }
        }
        let last = tape.acts.last().unwrap();
        Jet { value: last.a[0], grad: last.j.clone(), hess: last.h.clone() }
    }

    /// Accumulate `∂(adjoint · jet)/∂θ` into `grad` after a forward pass.
    fn backward(&self, tape: &mut Tape, adj: &Jet, grad: &mut [f64]) {
        let n = self.input_dim();
        let nn = n * n;
        let Tape { acts, pre, bar, bar_next } = tape;
        bar.set(1, n);
        bar.a[0] = adj.value;
        bar.j.copy_from_slice(&adj.grad);
        bar.h.copy_from_slice(&adj.hess);

        let mut offset = self.num_parameters();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let pr = &pre[l];
            // adjoint of the activation: (ā, J̄, H̄) on outputs → (ū, J̄u, H̄u)
            if self.is_hidden(l) {
                for k in 0..layer.outputs {
                    let (s, s1, s2) = (pr.s[k], pr.s1[k], pr.s2[k]);
                    let ju = &pr.ju[k * n..(k + 1) * n];
                    let hu = &pr.hu[k * nn..(k + 1) * nn];
                    let jb = &mut bar.j[k * n..(k + 1) * n];
                    let hb = &mut bar.h[k * nn..(k + 1) * nn];
                    let mut s1_bar = 0.0;
                    let mut s2_bar = 0.0;
                    let mut new_jb = [0.0f64; MAX_INPUT];
                    for p in 0..n {
                        let mut acc = 0.0;
                        for q in 0..n {
                            let hpq = hb[p * n + q];
                            s1_bar += hpq * hu[p * n + q];
                            s2_bar += hpq * ju[p] * ju[q];
                            acc += (hpq + hb[q * n + p]) * ju[q];
                        }
                        new_jb[p] = s2 * acc + s1 * jb[p];
                        s1_bar += jb[p] * ju[p];
                    }
                    jb.copy_from_slice(&new_jb[..n]);
                    for h in hb.iter_mut() {
                        *h *= s1;
                    }
                    s1_bar += -2.0 * s * s2_bar;
                    let s_bar = bar.a[k] - 2.0 * s1 * s2_bar - 2.0 * s * s1_bar;
                    bar.a[k] = s1 * s_bar;
                }
            }
            // affine map: u = W a + b, Ju = W Ja, Hu = W Ha
            let inp = &acts[l];
            let nw = layer.weights.len();
            let nb = layer.biases.len();
            offset -= nw + nb;
            let (gw, gb) = grad[offset..offset + nw + nb].split_at_mut(nw);
            for k in 0..layer.outputs {
                let ub = bar.a[k];
                gb[k] += ub;
                let jb = &bar.j[k * n..(k + 1) * n];
                let hb = &bar.h[k * nn..(k + 1) * nn];
                for j in 0..layer.inputs {
                    let mut g = ub * inp.a[j];
                    for (x, y) in jb.iter().zip(&inp.j[j * n..(j + 1) * n]) {
                        g += x * y;
                    }
                    if l > 0 {
                        for (x, y) in hb.iter().zip(&inp.h[j * nn..(j + 1) * nn]) {
                            g += x * y;
                        }
                    }
                    gw[k * layer.inputs + j] += g;
                }
            }
            if l == 0 {
                break;
            }
            bar_next.set(layer.inputs, n);
            for k in 0..layer.outputs {
                let ub = bar.a[k];
                let jb = &bar.j[k * n..(k + 1) * n];
                let hb = &bar.h[k * nn..(k + 1) * nn];
                for j in 0..layer.inputs {
                    let w = layer.weight(k, j);
                    bar_next.a[j] += w * ub;
                    for (d, s) in bar_next.j[j * n..(j + 1) * n].iter_mut().zip(jb) {
                        *d += w * s;
                    }
                    for (d, s) in bar_next.h[j * nn..(j + 1) * nn].iter_mut().zip(hb) {
                        *d += w * s;
                    }
                }
            }
            core::mem::swap(bar, bar_next);
        }
    }
}

/// Input dimensions supported by the reverse pass's stack buffers.
const MAX_INPUT: usize = 16;

impl SmoothFunction for NeuralFunction {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn jet(&self, x: &[f64]) -> Jet {
        self.eval_with_derivatives(x)
    }
}

#[derive(Clone, Debug, Default)]
struct Triple {
    a: Vec<f64>,
    j: Vec<f64>,
    h: Vec<f64>,
}

impl Triple {
    fn set(&mut self, k: usize, n: usize) {
        self.a.clear();
        self.a.resize(k, 0.0);
        self.j.clear();
        self.j.resize(k * n, 0.0);
        self.h.clear();
        self.h.resize(k * n * n, 0.0);
    }
}

#[derive(Clone, Debug, Default)]
struct Pre {
    ju: Vec<f64>,
    hu: Vec<f64>,
    s: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

/// Forward intermediates and reverse scratch, reused across points.
#[derive(Clone, Debug, Default)]
struct Tape {
    acts: Vec<Triple>,
    pre: Vec<Pre>,
    bar: Triple,
    bar_next: Triple,
}

impl Tape {
    fn resize(&mut self, net: &NeuralFunction) {
        let n = net.input_dim();
        if self.acts.len() == net.sizes.len() && self.acts[0].a.len() == n {
            return;
        }
        self.acts = net
            .sizes
            .iter()
            .map(|&k| {
                let mut t = Triple::default();
                t.set(k, n);
                t
            })
            .collect();
        self.pre = net
            .layers
            .iter()
            .map(|l| {
                let k = l.outputs;
                Pre { ju: vec![0.0; k * n], hu: vec![0.0; k * n * n], s: vec![0.0; k], s1: vec![0.0; k], s2: vec![0.0; k] }
            })
            .collect();
    }
}

/// Relative weights of the residual, boundary and data terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub residual: f64,
    pub boundary: f64,
    pub data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { residual: 1.0, boundary: 1.0, data: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Loss {
    pub total: f64,
    /// Mean squared Zubov residual.
    pub residual: f64,
    /// `W(0)²`.
    pub boundary: f64,
    /// Mean squared data misfit (0 without data).
    pub data: f64,
    pub grad: Vec<f64>,
}

/// Physics-informed loss and its parameter gradient.
pub fn pinn_loss(
    net: &NeuralFunction,
    sys: &CompiledSystem,
    collocation: &[Vec<f64>],
    data: &[ValueSample],
    weights: &LossWeights,
) -> Result<Loss, EvalError> {
    let n = net.input_dim();
    let mut tape = Tape::default();
    let mut grad = vec![0.0; net.num_parameters()];
    let mut adj = Jet { value: 0.0, grad: vec![0.0; n], hess: vec![0.0; n * n] };

    let mut residual = 0.0;
    if !collocation.is_empty() {
        let scale = weights.residual / collocation.len() as f64;
        for x in collocation {
            let t = sys.terms(x)?;
            let jet = net.forward(x, &mut tape);
            let r = t.residual(&jet);
            residual += r * r;
            let c = 2.0 * r * scale;
            adj.value = -c * t.g;
            for i in 0..n {
                adj.grad[i] = c * t.f[i];
            }
            for i in 0..n * n {
                adj.hess[i] = 0.5 * c * t.outer[i];
            }
            net.backward(&mut tape, &adj, &mut grad);
        }
        residual /= collocation.len() as f64;
    }

    adj.grad.fill(0.0);
    adj.hess.fill(0.0);
    let w0 = net.forward(&vec![0.0; n], &mut tape).value;
    adj.value = 2.0 * w0 * weights.boundary;
    net.backward(&mut tape, &adj, &mut grad);
    let boundary = w0 * w0;

    let mut misfit = 0.0;
    if !data.is_empty() {
        let scale = weights.data / data.len() as f64;
        for s in data {
            let d = net.forward(&s.point, &mut tape).value - s.w_hat;
            misfit += d * d;
            adj.value = 2.0 * d * scale;
            net.backward(&mut tape, &adj, &mut grad);
        }
        misfit /= data.len() as f64;
    }

    Ok(Loss {
        total: weights.residual * residual + weights.boundary * boundary + weights.data * misfit,
        residual,
        boundary,
        data: misfit,
        grad,
    })
}

/// Mean squared Zubov residual of `w` over `points`.
pub fn mean_squared_residual<W: SmoothFunction + ?Sized>(sys: &CompiledSystem, w: &W, points: &[Vec<f64>]) -> Result<f64, EvalError> {
    let mut s = 0.0;
    for x in points {
        let r = sys.terms(x)?.residual(&w.jet(x));
        s += r * r;
    }
    Ok(s / points.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    /// Collocation points drawn per epoch.
    pub collocation: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate reached at the last epoch (exponential decay).
    pub final_learning_rate: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Keep a checkpoint every this many epochs (0: only the final one).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![10, 10, 10],
            collocation: 1000,
            epochs: 5000,
            learning_rate: 1e-3,
            final_learning_rate: 1e-3,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub residual: f64,
    pub boundary: f64,
    pub data: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct Training {
    pub net: NeuralFunction,
    pub history: Vec<EpochStats>,
    pub checkpoints: Vec<(usize, NeuralFunction)>,
}

#[derive(Clone, Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize, last_good: alloc::boxed::Box<Training> },
}

/// Adam with the usual `(0.9, 0.999, 1e-8)` constants.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - libm::pow(B1, self.t as f64);
        let c2 = 1.0 - libm::pow(B2, self.t as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(&mut self.v)) {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *p -= lr * (*m / c1) / (libm::sqrt(*v / c2) + 1e-8);
        }
    }
}

pub(crate) fn uniform01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform random points in a box.
pub fn sample_box(domain: &Hyperbox, count: usize, rng: &mut impl RngCore) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| domain.sides().iter().map(|s| s.lo() + s.width() * uniform01(rng)).collect())
        .collect()
}

/// Train from Glorot initialization. `on_epoch` sees every epoch's stats.
pub fn train(
    sys: &StochasticSystem,
    data: &[ValueSample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<Training, TrainError> {
    let mut sizes = vec![sys.n()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let net = NeuralFunction::glorot(&sizes, cfg.seed)?;
    train_from(net, sys, data, cfg, on_epoch)
}

/// Continue training an existing network.
pub fn train_from(
    mut net: NeuralFunction,
    sys: &StochasticSystem,
    data: &[ValueSample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<Training, TrainError> {
    if cfg.collocation == 0 {
        return Err(TrainError::Config("collocation count must be at least 1"));
    }
    if cfg.epochs == 0 {
        return Err(TrainError::Config("epochs must be at least 1"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.final_learning_rate > 0.0) {
        return Err(TrainError::Config("learning rates must be positive"));
    }
    if net.input_dim() != sys.n() {
        return Err(TrainError::Config("network input size differs from the state dimension"));
    }
    let compiled = sys.compile();
    // separate stream from the initialization
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(net.num_parameters());
    let mut params = net.parameters();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    let mut last_good = net.clone();
    let ratio = cfg.final_learning_rate / cfg.learning_rate;

    for epoch in 0..cfg.epochs {
        let colloc = sample_box(sys.domain(), cfg.collocation, &mut rng);
        let loss = pinn_loss(&net, &compiled, &colloc, data, &cfg.weights)?;
        if !loss.total.is_finite() || loss.grad.iter().any(|g| !g.is_finite()) {
            let snapshot = Training { net: last_good, history, checkpoints };
            return Err(TrainError::NonFinite { epoch, last_good: alloc::boxed::Box::new(snapshot) });
        }
        let lr = cfg.learning_rate * libm::pow(ratio, epoch as f64 / cfg.epochs as f64);
        let stats = EpochStats {
            epoch,
            total: loss.total,
            residual: loss.residual,
            boundary: loss.boundary,
            data: loss.data,
            learning_rate: lr,
        };
        on_epoch(&stats);
        history.push(stats);
        last_good = net.clone();
        adam.step(&mut params, &loss.grad, lr);
        net.set_parameters(&params);
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            checkpoints.push((epoch + 1, net.clone()));
        }
    }
    Ok(Training { net, history, checkpoints })
}

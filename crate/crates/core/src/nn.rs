//! Fixed-weight supernetwork and edge-popup training.
//!
//! Layers are fully connected and bias-free. A layer's weights are stored as a
//! `(fan_out, fan_in)` matrix, so entry `(v, u)` is the edge from input unit `u`
//! to output unit `v`. Scores share that layout.
//!
//! Training never touches weights. The forward pass keeps the top-`k` fraction
//! of each layer's edges by score; the backward pass treats the mask as the
//! identity, so every edge, kept or not, receives
//! `dL/ds_uv = dL/dI_v * Z_u * W_uv`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, FslError, Result};
use crate::matrix::Matrix;
use crate::prng::{init_scores, init_weights, InitKind, RngStream, TAG_SCORES, TAG_WEIGHTS};
use crate::ranking::argsort;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f32) -> f32 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            fan_in,
            fan_out,
            activation,
        }
    }

    /// Edge count `n_l`.
    pub fn edges(&self) -> usize {
        self.fan_in * self.fan_out
    }
}

/// Ordered, shape-checked list of layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("architecture", "at least one layer is required"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.fan_in == 0 || l.fan_out == 0 {
                return Err(FslError::ZeroFan {
                    fan_out: l.fan_out,
                    fan_in: l.fan_in,
                });
            }
            if i > 0 && layers[i - 1].fan_out != l.fan_in {
                return Err(invalid(
                    "architecture",
                    format!(
                        "layer {i} fan_in {} does not match previous fan_out {}",
                        l.fan_in,
                        layers[i - 1].fan_out
                    ),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// ReLU hidden layers and an identity output layer.
    pub fn mlp(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(invalid("architecture", "need an input and an output width"));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn edge_counts(&self) -> Vec<usize> {
        self.layers.iter().map(LayerSpec::edges).collect()
    }

    pub fn total_edges(&self) -> usize {
        self.layers.iter().map(LayerSpec::edges).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    weights: Matrix,
    scores: Matrix,
}

impl Layer {
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn scores(&self) -> &Matrix {
        &self.scores
    }
}

/// Random fixed weights plus trainable per-edge scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Supernetwork {
    layers: Vec<Layer>,
    seed: u64,
    // Bumped on every score mutation; forward caches record it.
    version: u64,
}

impl Supernetwork {
    /// Rebuilds weights and scores from `seed`. Weights come from the stream
    /// tagged [`TAG_WEIGHTS`], scores from the stream tagged [`TAG_SCORES`];
    /// each stream is consumed layer by layer.
    pub fn from_seed(arch: &Architecture, seed: u64, weight_init: InitKind) -> Result<Self> {
        let mut wrng = RngStream::derive(seed, &[TAG_WEIGHTS]);
        let mut srng = RngStream::derive(seed, &[TAG_SCORES]);
        let mut layers = Vec::with_capacity(arch.layers().len());
        for spec in arch.layers() {
            let weights = init_weights(spec.fan_out, spec.fan_in, weight_init, &mut wrng)?;
            let scores = init_scores(spec.fan_out, spec.fan_in, &mut srng)?;
            layers.push(Layer {
                spec: *spec,
                weights,
                scores,
            });
        }
        Ok(Self {
            layers,
            seed,
            version: 0,
        })
    }

    /// Builds a network from explicit tensors.
    pub fn from_parts(specs: &[LayerSpec], weights: Vec<Matrix>, scores: Vec<Matrix>) -> Result<Self> {
        if specs.len() != weights.len() || specs.len() != scores.len() {
            return Err(FslError::LengthMismatch);
        }
        let mut layers = Vec::with_capacity(specs.len());
        for ((spec, w), s) in specs.iter().zip(weights).zip(scores) {
            let shape = (spec.fan_out, spec.fan_in);
            if w.shape() != shape || s.shape() != shape {
                return Err(FslError::ShapeMismatch {
                    expected: format!("{shape:?}"),
                    actual: format!("weights {:?}, scores {:?}", w.shape(), s.shape()),
                });
            }
            layers.push(Layer {
                spec: *spec,
                weights: w,
                scores: s,
            });
        }
        Architecture::new(specs.to_vec())?;
        Ok(Self {
            layers,
            seed: 0,
            version: 0,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn scores(&self) -> Vec<Matrix> {
        self.layers.iter().map(|l| l.scores.clone()).collect()
    }

    pub fn set_layer_scores(&mut self, layer: usize, scores: Vec<f32>) -> Result<()> {
        let l = &mut self.layers[layer];
        let (r, c) = l.scores.shape();
        l.scores = Matrix::from_vec(r, c, scores)?;
        self.version += 1;
        Ok(())
    }

    fn scores_mut(&mut self, layer: usize) -> &mut [f32] {
        self.version += 1;
        self.layers[layer].scores.as_mut_slice()
    }

    fn masked_weights(&self, k: f64) -> Vec<Matrix> {
        self.layers
            .iter()
            .map(|l| {
                let mask = mask_layer(l.scores.as_slice(), k);
                let data = l
                    .weights
                    .as_slice()
                    .iter()
                    .zip(&mask)
                    .map(|(&w, &m)| if m { w } else { 0.0 })
                    .collect();
                Matrix::from_vec(l.spec.fan_out, l.spec.fan_in, data).expect("shape preserved")
            })
            .collect()
    }
}

/// Number of edges a layer of `n` edges keeps at fraction `k`.
pub fn kept_count(n: usize, k: f64) -> usize {
    n - drop_count(n, k)
}

/// `t = int((1 - k) * n)`, truncated.
pub fn drop_count(n: usize, k: f64) -> usize {
    let t = ((1.0 - k) * n as f64).floor();
    (t.max(0.0) as usize).min(n)
}

/// Keeps the highest-scored `n - floor((1-k) n)` edges. Scores are sorted
/// ascending with ties in index order, and the first `t` positions are dropped.
pub fn mask_layer(scores: &[f32], k: f64) -> Vec<bool> {
    let t = drop_count(scores.len(), k);
    let order = argsort(scores);
    let mut mask = vec![true; scores.len()];
    for &e in &order.perm()[..t] {
        mask[e] = false;
    }
    mask
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Minibatch {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(FslError::EmptyDataset);
        }
        if inputs.rows() != labels.len() {
            return Err(FslError::ShapeMismatch {
                expected: format!("{} labels", inputs.rows()),
                actual: format!("{} labels", labels.len()),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(FslError::LabelOutOfRange { label, num_classes });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be a non-negative finite number"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Per-layer activations captured by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    batch_rows: usize,
    k: f64,
    /// Input `Z` to each layer.
    pub inputs: Vec<Matrix>,
    /// Pre-activation `I` of each layer.
    pub preacts: Vec<Matrix>,
    effective: Vec<Matrix>,
}

/// Forward pass with given (already masked) weights.
pub(crate) fn forward_pass(
    effective: &[Matrix],
    specs: &[LayerSpec],
    x: &Matrix,
) -> (Matrix, Vec<Matrix>, Vec<Matrix>) {
    let mut inputs = Vec::with_capacity(effective.len());
    let mut preacts = Vec::with_capacity(effective.len());
    let mut z = x.clone();
    for (w, spec) in effective.iter().zip(specs) {
        let batch = z.rows();
        let mut pre = Matrix::zeros(batch, spec.fan_out);
        for b in 0..batch {
            let zrow = z.row(b);
            let out = pre.row_mut(b);
            for (v, o) in out.iter_mut().enumerate() {
                let wrow = w.row(v);
                let mut acc = 0.0f64;
                for (&wi, &zi) in wrow.iter().zip(zrow) {
                    acc += f64::from(wi) * f64::from(zi);
                }
                *o = acc as f32;
            }
        }
        let mut next = pre.clone();
        for x in next.as_mut_slice() {
            *x = spec.activation.apply(*x);
        }
        inputs.push(std::mem::replace(&mut z, next));
        preacts.push(pre);
    }
    (z, inputs, preacts)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let batch = logits.rows();
    let mut grad = Matrix::zeros(batch, logits.cols());
    let mut loss = 0.0f64;
    let inv_b = 1.0 / batch as f64;
    for (b, &y) in labels.iter().enumerate().take(batch) {
        let row = logits.row(b);
        let max = row
            .iter()
            .fold(f64::NEG_INFINITY, |m, &x| m.max(f64::from(x)));
        let exps: Vec<f64> = row.iter().map(|&x| (f64::from(x) - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss -= (exps[y] / sum).ln();
        let g = grad.row_mut(b);
        for (j, e) in exps.iter().enumerate() {
            let p = e / sum;
            let t = if j == y { 1.0 } else { 0.0 };
            g[j] = ((p - t) * inv_b) as f32;
        }
    }
    (loss * inv_b, grad)
}

/// Backpropagates `dlogits` and returns, per layer, the edge gradient
/// `G_vu = sum_b dL/dI_v * Z_u`.
pub(crate) fn backward_pass(
    effective: &[Matrix],
    specs: &[LayerSpec],
    inputs: &[Matrix],
    preacts: &[Matrix],
    dlogits: &Matrix,
) -> Vec<Matrix> {
    let nl = effective.len();
    let mut grads: Vec<Matrix> = Vec::with_capacity(nl);
    // Upstream gradient with respect to this layer's output activations.
    let mut d_out = dlogits.clone();
    for l in (0..nl).rev() {
        let spec = specs[l];
        let z = &inputs[l];
        let pre = &preacts[l];
        let batch = z.rows();
        let mut d_pre = d_out;
        for (d, &p) in d_pre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
            *d *= spec.activation.derivative(p);
        }
        let mut g = vec![0.0f64; spec.fan_out * spec.fan_in];
        for b in 0..batch {
            let zrow = z.row(b);
            let drow = d_pre.row(b);
            for (v, &dv) in drow.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                let dv = f64::from(dv);
                let grow = &mut g[v * spec.fan_in..(v + 1) * spec.fan_in];
                for (gi, &zi) in grow.iter_mut().zip(zrow) {
                    *gi += dv * f64::from(zi);
                }
            }
        }
        grads.push(
            Matrix::from_vec(spec.fan_out, spec.fan_in, g.into_iter().map(|x| x as f32).collect())
                .expect("gradient shape"),
        );
        if l > 0 {
            let w = &effective[l];
            let mut d_in = Matrix::zeros(batch, spec.fan_in);
            let mut acc = vec![0.0f64; spec.fan_in];
            for b in 0..batch {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (v, &dv) in d_pre.row(b).iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    let dv = f64::from(dv);
                    for (a, &wi) in acc.iter_mut().zip(w.row(v)) {
                        *a += dv * f64::from(wi);
                    }
                }
                for (o, &a) in d_in.row_mut(b).iter_mut().zip(&acc) {
                    *o = a as f32;
                }
            }
            d_out = d_in;
        } else {
            d_out = Matrix::zeros(0, 0);
        }
    }
    grads.reverse();
    grads
}

fn check_input(specs: &[LayerSpec], batch: &Minibatch) -> Result<()> {
    let want = specs[0].fan_in;
    if batch.inputs.cols() != want {
        return Err(FslError::ShapeMismatch {
            expected: format!("input width {want}"),
            actual: format!("input width {}", batch.inputs.cols()),
        });
    }
    Ok(())
}

/// Masked forward pass. Returns logits and the cache needed by [`ep_backward`].
pub fn ep_forward(net: &Supernetwork, k: f64, batch: &Minibatch) -> Result<(Matrix, ForwardCache)> {
    let specs = net.specs();
    check_input(&specs, batch)?;
    let effective = net.masked_weights(k);
    let (logits, inputs, preacts) = forward_pass(&effective, &specs, &batch.inputs);
    Ok((
        logits,
        ForwardCache {
            version: net.version,
            batch_rows: batch.len(),
            k,
            inputs,
            preacts,
            effective,
        },
    ))
}

/// Straight-through score gradients of the mean cross-entropy loss.
pub fn ep_backward(
    net: &Supernetwork,
    k: f64,
    batch: &Minibatch,
    cache: &ForwardCache,
) -> Result<Vec<Matrix>> {
    if cache.version != net.version {
        return Err(FslError::StaleCache("scores changed since the forward pass"));
    }
    if cache.batch_rows != batch.len() || cache.inputs.first() != Some(&batch.inputs) {
        return Err(FslError::StaleCache("cache was built from a different batch"));
    }
    if cache.k != k {
        return Err(FslError::StaleCache("cache was built with a different k"));
    }
    let specs = net.specs();
    let logits = last_output(cache, &specs);
    let (_, dlogits) = softmax_cross_entropy(&logits, &batch.labels);
    Ok(score_gradients(net, cache, &specs, &dlogits))
}

fn last_output(cache: &ForwardCache, specs: &[LayerSpec]) -> Matrix {
    let last = specs.len() - 1;
    let mut out = cache.preacts[last].clone();
    for x in out.as_mut_slice() {
        *x = specs[last].activation.apply(*x);
    }
    out
}

/// Score gradients for an arbitrary upstream gradient at the logits.
pub fn score_gradients(
    net: &Supernetwork,
    cache: &ForwardCache,
    specs: &[LayerSpec],
    dlogits: &Matrix,
) -> Vec<Matrix> {
    let mut grads = backward_pass(&cache.effective, specs, &cache.inputs, &cache.preacts, dlogits);
    for (g, layer) in grads.iter_mut().zip(&net.layers) {
        for (gi, &w) in g.as_mut_slice().iter_mut().zip(layer.weights.as_slice()) {
            *gi *= w;
        }
    }
    grads
}

/// SGD with momentum and decoupled buffers, applied in place.
pub(crate) struct MomentumSgd {
    cfg: SgdConfig,
    buffers: Vec<Option<Vec<f32>>>,
}

impl MomentumSgd {
    pub(crate) fn new(cfg: SgdConfig, layers: usize) -> Self {
        Self {
            cfg,
            buffers: vec![None; layers],
        }
    }

    pub(crate) fn step(&mut self, layer: usize, params: &mut [f32], grad: &[f32]) {
        let lr = self.cfg.learning_rate as f32;
        let mu = self.cfg.momentum as f32;
        let wd = self.cfg.weight_decay as f32;
        let direction: Vec<f32> = params
            .iter()
            .zip(grad)
            .map(|(&p, &g)| g + wd * p)
            .collect();
        let dir = match &mut self.buffers[layer] {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(&direction) {
                    *b = mu * *b + d;
                }
                buf.clone()
            }
            slot @ None => {
                *slot = Some(direction.clone());
                direction
            }
        };
        for (p, d) in params.iter_mut().zip(&dir) {
            *p -= lr * d;
        }
    }
}

/// Minibatches of `data` in an order shuffled from `rng`.
pub fn shuffled_batches(data: &Dataset, batch_size: usize, rng: &mut RngStream) -> Result<Vec<Minibatch>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    order
        .chunks(batch_size)
        .map(|idx| {
            Minibatch::new(
                data.features.select_rows(idx),
                idx.iter().map(|&i| data.labels[i]).collect(),
                data.num_classes,
            )
        })
        .collect()
}

/// Runs `epochs` of minibatch SGD on the scores and returns them.
pub fn edge_popup_train(
    net: &mut Supernetwork,
    data: &Dataset,
    epochs: usize,
    k: f64,
    sgd: &SgdConfig,
    rng: &mut RngStream,
) -> Result<Vec<Matrix>> {
    if epochs == 0 {
        return Err(FslError::ZeroEpochs);
    }
    if data.is_empty() {
        return Err(FslError::EmptyDataset);
    }
    sgd.validate()?;
    let mut opt = MomentumSgd::new(*sgd, net.layers.len());
    for _ in 0..epochs {
        for batch in shuffled_batches(data, sgd.batch_size, rng)? {
            let (_, cache) = ep_forward(net, k, &batch)?;
            let grads = ep_backward(net, k, &batch, &cache)?;
            for (l, g) in grads.iter().enumerate() {
                opt.step(l, net.scores_mut(l), g.as_slice());
            }
        }
    }
    Ok(net.scores())
}

/// Index of the largest logit; NaN never wins and ties go to the lower index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] || (row[best].is_nan() && !x.is_nan()) {
            best = j;
        }
    }
    best
}

pub(crate) fn accuracy_with(effective: &[Matrix], specs: &[LayerSpec], data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(FslError::EmptyDataset);
    }
    if data.features.cols() != specs[0].fan_in {
        return Err(FslError::ShapeMismatch {
            expected: format!("input width {}", specs[0].fan_in),
            actual: format!("input width {}", data.features.cols()),
        });
    }
    let (logits, _, _) = forward_pass(effective, specs, &data.features);
    let correct = (0..logits.rows())
        .filter(|&b| argmax(logits.row(b)) == data.labels[b])
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Fraction of samples whose argmax prediction under the current mask is correct.
pub fn evaluate(net: &Supernetwork, k: f64, data: &Dataset) -> Result<f64> {
    accuracy_with(&net.masked_weights(k), &net.specs(), data)
}

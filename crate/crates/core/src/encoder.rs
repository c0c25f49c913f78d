//! Recency-weighted pooling encoder with a hand-written backward pass, the
//! parameter store shared by all model parts, and the Adam optimizer.
//!
//! The encoder maps a context (list of items) to a state vector
//!
//! ```text
//! pool  = sum_t w_t * E[a_t] / sum_t w_t,   w_t = rho^(T - t)
//! state = tanh(W * pool + b)
//! ```
//!
//! An empty context pools to the zero vector, so `state = tanh(b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ItemId;
use crate::error::{Error, Result};

/// Slot of the `catalog_size x d` item embedding table.
pub const ITEM_EMBEDDINGS: usize = 0;
/// Slot of the `d x d` hidden weight (row-major).
pub const HIDDEN_WEIGHT: usize = 1;
/// Slot of the length-`d` hidden bias.
pub const HIDDEN_BIAS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = value.len();
        debug_assert_eq!(shape.iter().product::<usize>(), n);
        Param { name: name.into(), shape, value, first_moment: vec![0.0; n], second_moment: vec![0.0; n] }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first_moment, &self.second_moment)
    }
}

/// Named dense parameter arrays plus Adam state.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its slot.
    pub fn push(&mut self, param: Param) -> usize {
        self.params.push(param);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, slot: usize) -> &Param {
        &self.params[slot]
    }

    pub fn value(&self, slot: usize) -> &[f64] {
        &self.params[slot].value
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.params[slot].value
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients { grads: self.params.iter().map(|p| vec![0.0; p.value.len()]).collect() }
    }

    /// Flat view of scalar `k` across all parameters, in slot order.
    pub fn scalar_mut(&mut self, mut k: usize) -> &mut f64 {
        for p in &mut self.params {
            if k < p.value.len() {
                return &mut p.value[k];
            }
            k -= p.value.len();
        }
        panic!("scalar index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}

/// Gradient arrays laid out like the [`ParamStore`] they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.grads.iter().flatten().copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.grads.iter().flatten().fold(0.0_f64, |m, g| m.max(g.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// One bias-corrected Adam update over every parameter in the store.
///
/// Non-finite gradients leave the store untouched and report divergence.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
    if grads.grads.len() != store.params.len()
        || grads.grads.iter().zip(&store.params).any(|(g, p)| g.len() != p.value.len())
    {
        return Err(Error::invalid("gradient layout does not match parameter store"));
    }
    if !grads.is_finite() {
        return Err(Error::TrainingDiverged(format!("non-finite gradient at step {}", store.step + 1)));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (p, g) in store.params.iter_mut().zip(&grads.grads) {
        for k in 0..g.len() {
            let m = cfg.beta1 * p.first_moment[k] + (1.0 - cfg.beta1) * g[k];
            let v = cfg.beta2 * p.second_moment[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            p.first_moment[k] = m;
            p.second_moment[k] = v;
            p.value[k] -= cfg.learning_rate * (m / bc1) / ((v / bc2).sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    /// Recency decay `rho` in `(0, 1]`; 1 gives a plain mean.
    pub recency: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { dim: 64, recency: 0.8 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("encoder dimension must be positive"));
        }
        if !(self.recency > 0.0 && self.recency <= 1.0) {
            return Err(Error::invalid(format!("recency {} outside (0, 1]", self.recency)));
        }
        Ok(())
    }
}

/// Uniform `[-1/sqrt(d), 1/sqrt(d)]` draw of `n` values.
pub(crate) fn uniform_init<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<f64> {
    let bound = 1.0 / (dim as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Registers the encoder parameters in slots 0..3 of an empty store.
pub fn init_encoder_params<R: Rng>(store: &mut ParamStore, catalog_size: usize, cfg: &EncoderConfig, rng: &mut R) {
    assert!(store.is_empty(), "encoder parameters must occupy the first slots");
    let d = cfg.dim;
    store.push(Param::new("item_embeddings", vec![catalog_size, d], uniform_init(rng, catalog_size * d, d)));
    store.push(Param::new("hidden_weight", vec![d, d], uniform_init(rng, d * d, d)));
    store.push(Param::new("hidden_bias", vec![d], vec![0.0; d]));
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub state: Vec<f64>,
    pooled: Vec<f64>,
    /// Normalized pooling weight per distinct context item, sorted by item.
    pool_weights: Vec<(ItemId, f64)>,
}

impl EncoderOutput {
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    pub fn pool_weights(&self) -> &[(ItemId, f64)] {
        &self.pool_weights
    }
}

fn pool_weights(context: &[ItemId], recency: f64) -> Vec<(ItemId, f64)> {
    if context.is_empty() {
        return Vec::new();
    }
    let last = context.len() - 1;
    let mut w: Vec<(ItemId, f64)> =
        context.iter().enumerate().map(|(t, &a)| (a, recency.powi((last - t) as i32))).collect();
    let total: f64 = w.iter().map(|x| x.1).sum();
    w.sort_by_key(|x| x.0);
    let mut merged: Vec<(ItemId, f64)> = Vec::with_capacity(w.len());
    for (a, wt) in w {
        match merged.last_mut() {
            Some((b, acc)) if *b == a => *acc += wt / total,
            _ => merged.push((a, wt / total)),
        }
    }
    merged
}

pub fn encode(store: &ParamStore, cfg: &EncoderConfig, context: &[ItemId]) -> Result<EncoderOutput> {
    let d = cfg.dim;
    let emb = store.value(ITEM_EMBEDDINGS);
    let catalog = emb.len() / d;
    if let Some(bad) = context.iter().find(|a| a.index() >= catalog) {
        return Err(Error::invalid(format!("item {} outside catalog of size {catalog}", bad.index())));
    }
    let weights = pool_weights(context, cfg.recency);
    let mut pooled = vec![0.0; d];
    for &(a, w) in &weights {
        let row = &emb[a.index() * d..(a.index() + 1) * d];
        for (p, e) in pooled.iter_mut().zip(row) {
            *p += w * e;
        }
    }
    let hw = store.value(HIDDEN_WEIGHT);
    let hb = store.value(HIDDEN_BIAS);
    let state = (0..d)
        .map(|i| {
            let row = &hw[i * d..(i + 1) * d];
            let z: f64 = row.iter().zip(&pooled).map(|(w, p)| w * p).sum::<f64>() + hb[i];
            z.tanh()
        })
        .collect();
    Ok(EncoderOutput { state, pooled, pool_weights: weights })
}

/// Encoder parameter gradients; embedding gradients only for touched rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGradients {
    pub embedding_rows: Vec<(ItemId, Vec<f64>)>,
    pub hidden_weight: Vec<f64>,
    pub hidden_bias: Vec<f64>,
}

impl EncoderGradients {
    pub fn accumulate_into(&self, grads: &mut Gradients) {
        let d = self.hidden_bias.len();
        for (a, row) in &self.embedding_rows {
            let dst = &mut grads.grads[ITEM_EMBEDDINGS][a.index() * d..(a.index() + 1) * d];
            dst.iter_mut().zip(row).for_each(|(x, y)| *x += y);
        }
        grads.grads[HIDDEN_WEIGHT].iter_mut().zip(&self.hidden_weight).for_each(|(x, y)| *x += y);
        grads.grads[HIDDEN_BIAS].iter_mut().zip(&self.hidden_bias).for_each(|(x, y)| *x += y);
    }
}

fn backward_core(store: &ParamStore, out: &EncoderOutput, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = out.state.len();
    if upstream.len() != d {
        return Err(Error::invalid(format!("upstream gradient has length {}, expected {d}", upstream.len())));
    }
    let dz: Vec<f64> = out.state.iter().zip(upstream).map(|(s, g)| g * (1.0 - s * s)).collect();
    let hw = store.value(HIDDEN_WEIGHT);
    let mut dpool = vec![0.0; d];
    for (i, &dzi) in dz.iter().enumerate() {
        if dzi == 0.0 {
            continue;
        }
        for (dp, w) in dpool.iter_mut().zip(&hw[i * d..(i + 1) * d]) {
            *dp += w * dzi;
        }
    }
    Ok((dz, dpool))
}

pub fn encode_backward(store: &ParamStore, out: &EncoderOutput, upstream: &[f64]) -> Result<EncoderGradients> {
    let (dz, dpool) = backward_core(store, out, upstream)?;
    let d = dz.len();
    let mut hidden_weight = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            hidden_weight[i * d + j] = dz[i] * out.pooled[j];
        }
    }
    let embedding_rows = out.pool_weights.iter().map(|&(a, w)| (a, dpool.iter().map(|g| w * g).collect())).collect();
    Ok(EncoderGradients { embedding_rows, hidden_weight, hidden_bias: dz })
}

/// Same as [`encode_backward`] but accumulates straight into `grads`.
pub fn encode_backward_into(
    store: &ParamStore,
    out: &EncoderOutput,
    upstream: &[f64],
    grads: &mut Gradients,
) -> Result<()> {
    let (dz, dpool) = backward_core(store, out, upstream)?;
    let d = dz.len();
    {
        let hw = &mut grads.grads[HIDDEN_WEIGHT];
        for i in 0..d {
            if dz[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                hw[i * d + j] += dz[i] * out.pooled[j];
            }
        }
    }
    grads.grads[HIDDEN_BIAS].iter_mut().zip(&dz).for_each(|(x, y)| *x += y);
    let emb = &mut grads.grads[ITEM_EMBEDDINGS];
    for &(a, w) in &out.pool_weights {
        let dst = &mut emb[a.index() * d..(a.index() + 1) * d];
        dst.iter_mut().zip(&dpool).for_each(|(x, g)| *x += w * g);
    }
    Ok(())
}

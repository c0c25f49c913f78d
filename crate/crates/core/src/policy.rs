//! Two-headed policy over the shared encoder: an action distribution head and
//! a per-action Q head, plus checkpoint persistence.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ItemId;
use crate::encoder::{
    encode, encode_backward_into, init_encoder_params, uniform_init, EncoderConfig, EncoderOutput, Gradients, Param,
    ParamStore, ITEM_EMBEDDINGS,
};
use crate::error::{CheckpointError, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"LPIREC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub catalog_size: usize,
    /// Share the item embedding table with the policy output matrix.
    pub tie_weights: bool,
}

impl ModelConfig {
    pub fn new(catalog_size: usize, dim: usize, recency: f64) -> Self {
        ModelConfig { encoder: EncoderConfig { dim, recency }, catalog_size, tie_weights: true }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.catalog_size < 2 {
            return Err(Error::invalid("catalog size must be at least 2"));
        }
        Ok(())
    }
}

/// Log-probabilities over the whole catalog.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub log_probs: Vec<f64>,
}

impl ActionDistribution {
    /// Max-subtracted log-softmax.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        ActionDistribution { log_probs: logits.iter().map(|l| l - lse).collect() }
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QVector {
    pub q: Vec<f64>,
}

/// Argmax with ties going to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_action(dist: &ActionDistribution) -> ItemId {
    ItemId::new(argmax(&dist.log_probs))
}

/// Anything that yields a distribution over the catalog given a context.
pub trait ContextPolicy {
    fn catalog_size(&self) -> usize;

    fn log_probs(&self, context: &[ItemId]) -> Result<Vec<f64>>;

    fn probs(&self, context: &[ItemId]) -> Result<Vec<f64>> {
        Ok(self.log_probs(context)?.into_iter().map(f64::exp).collect())
    }
}

/// Uniform distribution over a catalog.
#[derive(Clone, Copy, Debug)]
pub struct UniformPolicy(pub usize);

impl ContextPolicy for UniformPolicy {
    fn catalog_size(&self) -> usize {
        self.0
    }

    fn log_probs(&self, _context: &[ItemId]) -> Result<Vec<f64>> {
        Ok(vec![-(self.0 as f64).ln(); self.0])
    }
}

/// Result of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub encoded: EncoderOutput,
    pub logits: Vec<f64>,
    pub q: Vec<f64>,
}

impl Forward {
    pub fn distribution(&self) -> ActionDistribution {
        ActionDistribution::from_logits(&self.logits)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    config: ModelConfig,
    store: ParamStore,
    policy_weight: usize,
    policy_bias: usize,
    q_weight: usize,
    q_bias: usize,
    metadata: BTreeMap<String, f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PolicyModel {
    /// Randomly initialized model; policy and Q biases start at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, d) = (config.catalog_size, config.encoder.dim);
        let mut store = ParamStore::new();
        init_encoder_params(&mut store, c, &config.encoder, &mut rng);
        let policy_bias = store.push(Param::new("policy_bias", vec![c], vec![0.0; c]));
        let q_weight = store.push(Param::new("q_weight", vec![c, d], uniform_init(&mut rng, c * d, d)));
        let q_bias = store.push(Param::new("q_bias", vec![c], vec![0.0; c]));
        let policy_weight = if config.tie_weights {
            ITEM_EMBEDDINGS
        } else {
            store.push(Param::new("policy_weight", vec![c, d], uniform_init(&mut rng, c * d, d)))
        };
        Ok(PolicyModel { config, store, policy_weight, policy_bias, q_weight, q_bias, metadata: BTreeMap::new() })
    }

    /// Model with every parameter set to zero (uniform policy, zero Q).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        for slot in 0..m.store.len() {
            m.store.value_mut(slot).iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn catalog_size(&self) -> usize {
        self.config.catalog_size
    }

    pub fn dim(&self) -> usize {
        self.config.encoder.dim
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn policy_weight_slot(&self) -> usize {
        self.policy_weight
    }

    pub fn policy_bias_slot(&self) -> usize {
        self.policy_bias
    }

    pub fn q_weight_slot(&self) -> usize {
        self.q_weight
    }

    pub fn q_bias_slot(&self) -> usize {
        self.q_bias
    }

    /// Scalar hyperparameters carried along in checkpoints.
    pub fn metadata(&self) -> &BTreeMap<String, f64> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: f64) {
        self.metadata.insert(key.into(), value);
    }

    pub fn encode(&self, context: &[ItemId]) -> Result<EncoderOutput> {
        encode(&self.store, &self.config.encoder, context)
    }

    fn head(&self, weight: usize, bias: usize, state: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let w = self.store.value(weight);
        let b = self.store.value(bias);
        (0..self.catalog_size()).map(|a| dot(&w[a * d..(a + 1) * d], state) + b[a]).collect()
    }

    pub fn forward(&self, context: &[ItemId]) -> Result<Forward> {
        let encoded = self.encode(context)?;
        let logits = self.head(self.policy_weight, self.policy_bias, &encoded.state);
        let q = self.head(self.q_weight, self.q_bias, &encoded.state);
        Ok(Forward { encoded, logits, q })
    }

    pub fn logits(&self, context: &[ItemId]) -> Result<Vec<f64>> {
        let encoded = self.encode(context)?;
        Ok(self.head(self.policy_weight, self.policy_bias, &encoded.state))
    }

    pub fn action_distribution(&self, context: &[ItemId]) -> Result<ActionDistribution> {
        Ok(ActionDistribution::from_logits(&self.logits(context)?))
    }

    pub fn q_values(&self, context: &[ItemId]) -> Result<QVector> {
        let encoded = self.encode(context)?;
        Ok(QVector { q: self.head(self.q_weight, self.q_bias, &encoded.state) })
    }

    /// Back-propagates `d loss / d logits` (dense) and `d loss / d Q(x, a)`
    /// (sparse entries) through both heads and the encoder.
    pub fn backward(
        &self,
        fwd: &Forward,
        dlogits: Option<&[f64]>,
        dq: &[(usize, f64)],
        grads: &mut Gradients,
    ) -> Result<()> {
        let d = self.dim();
        let state = &fwd.encoded.state;
        let mut dstate = vec![0.0; d];
        if let Some(dl) = dlogits {
            if dl.len() != self.catalog_size() {
                return Err(Error::invalid("logit gradient has wrong length"));
            }
            let w = self.store.value(self.policy_weight);
            for (a, &g) in dl.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &w[a * d..(a + 1) * d];
                dstate.iter_mut().zip(row).for_each(|(s, wv)| *s += g * wv);
                let grow = &mut grads.grads[self.policy_weight][a * d..(a + 1) * d];
                grow.iter_mut().zip(state).for_each(|(x, s)| *x += g * s);
                grads.grads[self.policy_bias][a] += g;
            }
        }
        let w = self.store.value(self.q_weight);
        for &(a, g) in dq {
            if a >= self.catalog_size() {
                return Err(Error::invalid("Q gradient index outside catalog"));
            }
            let row = &w[a * d..(a + 1) * d];
            dstate.iter_mut().zip(row).for_each(|(s, wv)| *s += g * wv);
            let grow = &mut grads.grads[self.q_weight][a * d..(a + 1) * d];
            grow.iter_mut().zip(state).for_each(|(x, s)| *x += g * s);
            grads.grads[self.q_bias][a] += g;
        }
        encode_backward_into(&self.store, &fwd.encoded, &dstate, grads)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.catalog_size() as u32).to_le_bytes());
        out.extend_from_slice(&self.config.encoder.recency.to_le_bytes());
        out.push(u8::from(self.config.tie_weights));
        let n = self.store.len() + self.metadata.len();
        out.extend_from_slice(&(n as u32).to_le_bytes());
        let mut write_array = |name: &str, shape: &[usize], data: &[f64]| {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for &s in shape {
                out.extend_from_slice(&(s as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for p in self.store.params() {
            write_array(&p.name, &p.shape, &p.value);
        }
        for (k, v) in &self.metadata {
            write_array(&format!("meta.{k}"), &[1], &[*v]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(6, "magic")? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION }.into());
        }
        let dim = u32::from_le_bytes(r.array("config block")?) as usize;
        let catalog_size = u32::from_le_bytes(r.array("config block")?) as usize;
        let recency = f64::from_le_bytes(r.array("config block")?);
        let tie_weights = r.take(1, "config block")?[0] != 0;
        let config = ModelConfig { encoder: EncoderConfig { dim, recency }, catalog_size, tie_weights };
        config.validate().map_err(|e| CheckpointError::ShapeMismatch(format!("invalid config block: {e}")))?;
        let mut model = PolicyModel::zeros(config)?;
        let mut seen = vec![false; model.store.len()];
        let count = u32::from_le_bytes(r.array("array count")?) as usize;
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array("array name")?) as usize;
            let name = String::from_utf8(r.take(name_len, "array name")?.to_vec())
                .map_err(|_| CheckpointError::ShapeMismatch("array name is not UTF-8".into()))?;
            let ndim = r.take(1, "array shape")?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(r.array("array shape")?) as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or(CheckpointError::Truncated("array data"))?, "array data")?;
            let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            if let Some(key) = name.strip_prefix("meta.") {
                if data.len() != 1 {
                    return Err(CheckpointError::ShapeMismatch(format!("metadata {key} is not a scalar")).into());
                }
                model.metadata.insert(key.to_string(), data[0]);
                continue;
            }
            let slot = model
                .store
                .find(&name)
                .ok_or_else(|| CheckpointError::ShapeMismatch(format!("unexpected array {name}")))?;
            if model.store.param(slot).shape != shape {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "array {name} has shape {shape:?}, expected {:?}",
                    model.store.param(slot).shape
                ))
                .into());
            }
            model.store.value_mut(slot).copy_from_slice(&data);
            seen[slot] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(
                CheckpointError::ShapeMismatch(format!("missing array {}", model.store.param(missing).name)).into()
            );
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::ShapeMismatch("trailing bytes after last array".into()).into());
        }
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> std::result::Result<[u8; N], CheckpointError> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }
}

impl ContextPolicy for PolicyModel {
    fn catalog_size(&self) -> usize {
        self.config.catalog_size
    }

    fn log_probs(&self, context: &[ItemId]) -> Result<Vec<f64>> {
        Ok(self.action_distribution(context)?.log_probs)
    }
}

pub fn save_checkpoint(model: &PolicyModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&model.to_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyModel> {
    PolicyModel::from_bytes(&std::fs::read(path)?)
}

/// Loads a checkpoint and checks it against the expected model shape.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<PolicyModel> {
    let model = load_checkpoint(path)?;
    let got = model.config();
    if got.catalog_size != expected.catalog_size
        || got.encoder.dim != expected.encoder.dim
        || got.tie_weights != expected.tie_weights
    {
        return Err(CheckpointError::ShapeMismatch(format!(
            "checkpoint has catalog {} / dim {} / tied {}, config expects catalog {} / dim {} / tied {}",
            got.catalog_size,
            got.encoder.dim,
            got.tie_weights,
            expected.catalog_size,
            expected.encoder.dim,
            expected.tie_weights
        ))
        .into());
    }
    Ok(model)
}

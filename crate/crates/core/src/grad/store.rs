//! Named parameter storage and the encoder/decoder block partition.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::seeding::Fnv1a;

use super::tensor::{Real, Tensor};

/// Which parameter block an operation is restricted to.
///
/// Every parameter name begins with `encoder.` (the θ block: encoder stack
/// plus source-side embeddings) or `decoder.` (the φ block: decoder stack,
/// target-side embeddings, and the output projection).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    /// The `encoder.` parameters (θ).
    Theta,
    /// The `decoder.` parameters (φ).
    Phi,
    /// Both blocks.
    All,
}

impl Block {
    /// Whether a parameter name falls inside this block.
    pub fn contains(self, name: &str) -> bool {
        match self {
            Block::Theta => name.starts_with("encoder."),
            Block::Phi => name.starts_with("decoder."),
            Block::All => true,
        }
    }
}

/// Gradients keyed by parameter name.
pub type GradMap<F = f32> = BTreeMap<String, Tensor<F>>;

/// All model parameters, keyed by name, plus the seed that initialized them.
///
/// The map is ordered (BTreeMap) so iteration — and therefore optimizer
/// updates, checkpoint layout, and block fingerprints — is deterministic.
#[derive(Clone, Debug)]
pub struct ParamStore<F = f32> {
    params: BTreeMap<String, Tensor<F>>,
    rng_seed: u64,
}

impl<F: Real> ParamStore<F> {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore {
            params: BTreeMap::new(),
            rng_seed,
        }
    }

    /// Seed recorded at initialization time; travels with checkpoints.
    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn set_rng_seed(&mut self, seed: u64) {
        self.rng_seed = seed;
    }

    /// Insert a parameter. Names must carry a block prefix so that the
    /// θ/φ partition is total — a name outside both blocks would silently
    /// escape restricted updates.
    pub fn insert(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        if !name.starts_with("encoder.") && !name.starts_with("decoder.") {
            return Err(Error::InvalidParamName(name.to_string()));
        }
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<F>> {
        self.params.remove(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameter names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar count across all parameters.
    pub fn total_len(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Exact-value precision cast of every parameter.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            rng_seed: self.rng_seed,
        }
    }

    /// FNV-1a fingerprint of every parameter inside `block`, taken over the
    /// raw bit patterns. Two stores agree on a block iff the fingerprints
    /// match bit-for-bit, which is how training stages prove they left the
    /// frozen block untouched.
    pub fn block_fingerprint(&self, block: Block) -> u64 {
        let mut h = Fnv1a::new();
        for (name, tensor) in &self.params {
            if !block.contains(name) {
                continue;
            }
            h.update(name.as_bytes());
            h.update(&[0]);
            for v in tensor.data() {
                h.update(&v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}

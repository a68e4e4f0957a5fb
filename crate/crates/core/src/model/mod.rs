//! A small transformer encoder–decoder realizing p(y|x; θ, φ) = g(f(x; θ); φ).
//!
//! The parameters partition by name prefix: everything under `encoder.`
//! (encoder stack, source token and position embeddings) is the
//! representation θ, everything under `decoder.` (decoder stack, target
//! embeddings, output projection) is the task head φ. The partition is the
//! load-bearing invariant of the alternating pre-finetuning schedule, so it
//! is decidable from the name alone and enforced at insertion.
//!
//! Architecture: pre-norm residual blocks, GELU feed-forward, learned
//! positional embeddings, no weight tying (tying would straddle the θ/φ
//! boundary). Targets are framed internally as BOS + y and y + EOS; the
//! public [`TokenSeq`] carries content tokens only.

mod decode;
mod graph;
mod init;

pub use decode::{greedy_decode, greedy_decode_batch, Decoded};
pub use graph::{
    sequence_log_prob, teacher_forced_nlls, training_graph, training_loss, GraphOutput,
};
pub use init::{init_model, param_specs, reinit_task_head};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the encoder–decoder.
///
/// The defaults are the desk-scale configuration: width 64, 4 heads,
/// 2 encoder + 2 decoder layers, feed-forward 256.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub dropout: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 64,
            embed_dim: 64,
            num_heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 256,
            max_src_len: 48,
            max_tgt_len: 48,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    /// Check the structural invariants; call before building anything.
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_heads", self.num_heads),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("ffn_dim", self.ffn_dim),
        ];
        for (name, v) in dims {
            if v < 1 {
                return Err(Error::Input(format!("model config: {name} must be ≥ 1")));
            }
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Input(format!(
                "model config: embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.max_src_len < 2 || self.max_tgt_len < 2 {
            return Err(Error::Input(
                "model config: max lengths must be ≥ 2 (room for framing tokens)".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Input(format!(
                "model config: dropout {} outside [0,1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

/// A tokenized sequence of content ids (no framing tokens). The model adds
/// BOS/EOS around targets internally; decode strips them on the way out.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenSeq { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

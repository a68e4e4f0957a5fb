//! Shared fixtures for the hot-path benchmarks: a deterministic corpus,
//! vocabulary and model at the usual desk scale.

use duel_core::data::{generate_mini_scan, Dataset, MiniScanConfig, Vocabulary};
use duel_core::model::{init_model, TokenSeq};
use duel_core::{ModelConfig, ParamStore};

/// The 500-command corpus the experiments train on.
pub fn corpus() -> Dataset {
    generate_mini_scan(
        &MiniScanConfig {
            compound_clauses: true,
            max_output_tokens: Some(8),
            max_examples: Some(500),
        },
        5,
    )
    .unwrap()
}

/// Desk-scale model over the corpus vocabulary, with a ready batch.
pub fn training_fixture() -> (ModelConfig, ParamStore, Vec<(TokenSeq, TokenSeq)>) {
    let data = corpus();
    let vocab = Vocabulary::build(&[&data]);
    let cfg = ModelConfig {
        vocab_size: vocab.size(),
        embed_dim: 32,
        num_heads: 4,
        encoder_layers: 2,
        decoder_layers: 1,
        ffn_dim: 64,
        max_src_len: 16,
        max_tgt_len: 12,
        dropout: 0.1,
    };
    let params = init_model(&cfg, 1).unwrap();
    let batch = data.examples[..8]
        .iter()
        .map(|e| (vocab.tokenize(&e.input), vocab.tokenize(&e.output)))
        .collect();
    (cfg, params, batch)
}

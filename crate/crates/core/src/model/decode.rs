//! Greedy decoding: argmax token per step from BOS, stopping at EOS or the
//! length cap. Ties break toward the lowest vocabulary index so decoding is
//! fully deterministic.

use crate::data::{BOS_ID, EOS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::grad::{ParamStore, Tape};

use super::graph::{decoder_graph, encoder_graph, Dropout};
use super::{ModelConfig, TokenSeq};

/// One decoded sequence; `truncated` marks rows that hit `max_len` without
/// emitting EOS (normally scored incorrect, reported distinctly upstream).
#[derive(Clone, Debug)]
pub struct Decoded {
    pub tokens: TokenSeq,
    pub truncated: bool,
}

/// Greedy-decode a single source sequence into at most `max_len` tokens.
pub fn greedy_decode(
    params: &ParamStore,
    cfg: &ModelConfig,
    x: &TokenSeq,
    max_len: usize,
) -> Result<TokenSeq> {
    let mut out = greedy_decode_batch(params, cfg, std::slice::from_ref(x), max_len)?;
    Ok(out.pop().expect("one row per input").tokens)
}

/// Greedy-decode a batch in lock-step. The encoder runs once; the decoder
/// re-runs over the growing prefix each step, so every step reuses the
/// exact training-path arithmetic.
pub fn greedy_decode_batch(
    params: &ParamStore,
    cfg: &ModelConfig,
    xs: &[TokenSeq],
    max_len: usize,
) -> Result<Vec<Decoded>> {
    if xs.is_empty() {
        return Err(Error::Input("empty decode batch".to_string()));
    }
    if max_len < 1 || max_len + 1 > cfg.max_tgt_len {
        return Err(Error::Usage(format!(
            "max_len {max_len} outside 1..={} (max_tgt_len − 1)",
            cfg.max_tgt_len - 1
        )));
    }
    for x in xs {
        if x.is_empty() {
            return Err(Error::Input("empty source sequence".to_string()));
        }
        if x.len() > cfg.max_src_len {
            return Err(Error::Input(format!(
                "source length {} exceeds max_src_len {}",
                x.len(),
                cfg.max_src_len
            )));
        }
        if let Some(&bad) = x.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocabulary of {}",
                cfg.vocab_size
            )));
        }
    }

    let b = xs.len();
    let s = xs.iter().map(TokenSeq::len).max().expect("nonempty");
    let mut src = vec![PAD_ID as usize; b * s];
    let mut src_pad = vec![true; b * s];
    for (i, x) in xs.iter().enumerate() {
        for (j, &id) in x.ids.iter().enumerate() {
            src[i * s + j] = id as usize;
            src_pad[i * s + j] = false;
        }
    }

    // Encode once; feed the result into each step's decoder tape as a leaf.
    let enc_out = {
        let mut tape: Tape<f32> = Tape::new();
        let enc = encoder_graph(
            &mut tape,
            params,
            cfg,
            &src,
            &src_pad,
            b,
            s,
            &mut Dropout::off(),
        )?;
        tape.value_of(enc).clone()
    };

    let v = cfg.vocab_size;
    let mut emitted: Vec<Vec<u32>> = vec![Vec::new(); b];
    let mut done = vec![false; b];
    let mut truncated = vec![false; b];
    for step in 0..max_len {
        let t = step + 1;
        let mut dec_in = vec![PAD_ID as usize; b * t];
        for i in 0..b {
            dec_in[i * t] = BOS_ID as usize;
            for (j, &id) in emitted[i].iter().take(step).enumerate() {
                dec_in[i * t + 1 + j] = id as usize;
            }
        }
        let mut tape: Tape<f32> = Tape::new();
        let enc = tape.value(enc_out.clone())?;
        let logits = decoder_graph(
            &mut tape,
            params,
            cfg,
            enc,
            &src_pad,
            s,
            &dec_in,
            b,
            t,
            &mut Dropout::off(),
        )?;
        let data = tape.value_of(logits).data();
        for i in 0..b {
            if done[i] {
                continue;
            }
            let row = &data[(i * t + t - 1) * v..(i * t + t) * v];
            let mut best = 0usize;
            for (j, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = j;
                }
            }
            if best == EOS_ID as usize {
                done[i] = true;
            } else {
                emitted[i].push(best as u32);
                if emitted[i].len() == max_len {
                    done[i] = true;
                    truncated[i] = true;
                }
            }
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    // Rows still open ran out of steps before max_len tokens only if the
    // loop ended; mark any row that never produced EOS.
    Ok(emitted
        .into_iter()
        .zip(truncated)
        .map(|(ids, truncated)| Decoded {
            tokens: TokenSeq::new(ids),
            truncated,
        })
        .collect())
}

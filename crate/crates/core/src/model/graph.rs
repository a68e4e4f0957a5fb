//! Tape-graph builders: the teacher-forced forward pass, training loss, and
//! sequence log-probability.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{BOS_ID, EOS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::grad::{NodeId, ParamStore, Real, Tape, Tensor};

use super::{ModelConfig, TokenSeq};

/// Additive mask value for blocked attention positions. Large but finite so
/// fully-masked rows soften to uniform instead of producing NaN.
const MASK_OFF: f64 = -1.0e9;

/// Padded ids and framing for one batch. Targets are framed as
/// decoder input `BOS + y` and decoder output `y + EOS`.
pub(crate) struct Packed {
    pub b: usize,
    pub s: usize,
    pub t: usize,
    pub src: Vec<usize>,
    pub src_pad: Vec<bool>,
    pub dec_in: Vec<usize>,
    pub dec_out: Vec<usize>,
    /// True at the `len(y)+1` real target positions of each row.
    pub tgt_real: Vec<bool>,
}

pub(crate) fn pack_batch(cfg: &ModelConfig, batch: &[(TokenSeq, TokenSeq)]) -> Result<Packed> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".to_string()));
    }
    for (x, y) in batch {
        if x.is_empty() {
            return Err(Error::Input("empty source sequence".to_string()));
        }
        if let Some(&bad) = x.ids.iter().chain(y.ids.iter()).find(|&&id| id as usize >= cfg.vocab_size)
        {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocabulary of {}",
                cfg.vocab_size
            )));
        }
        if x.len() > cfg.max_src_len {
            return Err(Error::Input(format!(
                "source length {} exceeds max_src_len {}",
                x.len(),
                cfg.max_src_len
            )));
        }
        if y.len() + 1 > cfg.max_tgt_len {
            return Err(Error::Input(format!(
                "target length {} exceeds max_tgt_len {} (with framing)",
                y.len(),
                cfg.max_tgt_len
            )));
        }
    }
    let b = batch.len();
    let s = batch.iter().map(|(x, _)| x.len()).max().expect("nonempty");
    let t = batch.iter().map(|(_, y)| y.len()).max().expect("nonempty") + 1;

    let mut src = vec![PAD_ID as usize; b * s];
    let mut src_pad = vec![true; b * s];
    let mut dec_in = vec![PAD_ID as usize; b * t];
    let mut dec_out = vec![PAD_ID as usize; b * t];
    let mut tgt_real = vec![false; b * t];
    for (i, (x, y)) in batch.iter().enumerate() {
        for (j, &id) in x.ids.iter().enumerate() {
            src[i * s + j] = id as usize;
            src_pad[i * s + j] = false;
        }
        dec_in[i * t] = BOS_ID as usize;
        for (j, &id) in y.ids.iter().enumerate() {
            dec_in[i * t + j + 1] = id as usize;
            dec_out[i * t + j] = id as usize;
        }
        dec_out[i * t + y.len()] = EOS_ID as usize;
        for j in 0..=y.len() {
            tgt_real[i * t + j] = true;
        }
    }
    Ok(Packed {
        b,
        s,
        t,
        src,
        src_pad,
        dec_in,
        dec_out,
        tgt_real,
    })
}

/// Dropout mask generator; inert when no RNG is supplied (evaluation paths)
/// or the rate is zero.
pub(crate) struct Dropout<'r, F> {
    rng: Option<&'r mut ChaCha8Rng>,
    p: f64,
    _f: std::marker::PhantomData<F>,
}

impl<'r, F: Real> Dropout<'r, F> {
    pub fn new(rng: Option<&'r mut ChaCha8Rng>, p: f32) -> Self {
        Dropout {
            rng: if p > 0.0 { rng } else { None },
            p: p as f64,
            _f: std::marker::PhantomData,
        }
    }

    pub fn off() -> Self {
        Dropout {
            rng: None,
            p: 0.0,
            _f: std::marker::PhantomData,
        }
    }

    fn apply(&mut self, tape: &mut Tape<F>, x: NodeId) -> Result<NodeId> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        let keep = F::from_f64_lossy(1.0 / (1.0 - self.p));
        let shape = tape.value_of(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < self.p {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mask = tape.value(Tensor::new(shape, data)?)?;
        tape.mul(x, mask)
    }
}

/// Additive `[b·h, tq, tk]` mask blocking attention into padded key slots.
fn pad_key_mask<F: Real>(b: usize, h: usize, tq: usize, tk: usize, key_pad: &[bool]) -> Tensor<F> {
    let off = F::from_f64_lossy(MASK_OFF);
    let mut m = Tensor::zeros(&[b * h, tq, tk]);
    let data = m.data_mut();
    for bi in 0..b {
        for hi in 0..h {
            for q in 0..tq {
                let row = ((bi * h + hi) * tq + q) * tk;
                for k in 0..tk {
                    if key_pad[bi * tk + k] {
                        data[row + k] = off;
                    }
                }
            }
        }
    }
    m
}

/// Additive `[b·h, t, t]` mask blocking attention into future positions.
fn causal_mask<F: Real>(b: usize, h: usize, t: usize) -> Tensor<F> {
    let off = F::from_f64_lossy(MASK_OFF);
    let mut m = Tensor::zeros(&[b * h, t, t]);
    let data = m.data_mut();
    for bh in 0..b * h {
        for q in 0..t {
            for k in q + 1..t {
                data[(bh * t + q) * t + k] = off;
            }
        }
    }
    m
}

/// One multi-head attention sublayer. `q_in` is `[b·tq, D]`, `kv_in` is
/// `[b·tk, D]`; returns `[b·tq, D]` (pre-residual, pre-dropout).
#[allow(clippy::too_many_arguments)]
fn attention<F: Real>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    cfg: &ModelConfig,
    prefix: &str,
    q_in: NodeId,
    kv_in: NodeId,
    mask: Tensor<F>,
    b: usize,
    tq: usize,
    tk: usize,
) -> Result<NodeId> {
    let (d, h) = (cfg.embed_dim, cfg.num_heads);
    let proj = |tape: &mut Tape<F>, x: NodeId, name: &str| -> Result<NodeId> {
        let w = tape.param(params, &format!("{prefix}.{name}.w"))?;
        let bias = tape.param(params, &format!("{prefix}.{name}.b"))?;
        let y = tape.matmul(x, w)?;
        tape.add(y, bias)
    };
    let q = proj(tape, q_in, "wq")?;
    let k = proj(tape, kv_in, "wk")?;
    let v = proj(tape, kv_in, "wv")?;
    let q = tape.reshape(q, vec![b, tq, d])?;
    let k = tape.reshape(k, vec![b, tk, d])?;
    let v = tape.reshape(v, vec![b, tk, d])?;
    let q = tape.head_split(q, h)?;
    let k = tape.head_split(k, h)?;
    let v = tape.head_split(v, h)?;
    let scores = tape.bmm_bt(q, k)?;
    let scores = tape.scale(scores, F::from_f64_lossy(1.0 / (cfg.head_dim() as f64).sqrt()))?;
    let mask = tape.value(mask)?;
    let scores = tape.add(scores, mask)?;
    let probs = tape.softmax_last(scores)?;
    let ctx = tape.bmm(probs, v)?;
    let ctx = tape.head_merge(ctx, h)?;
    let ctx = tape.reshape(ctx, vec![b * tq, d])?;
    proj(tape, ctx, "wo")
}

/// Feed-forward sublayer: linear → GELU → linear.
fn ffn<F: Real>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let w1 = tape.param(params, &format!("{prefix}.w1.w"))?;
    let b1 = tape.param(params, &format!("{prefix}.w1.b"))?;
    let w2 = tape.param(params, &format!("{prefix}.w2.w"))?;
    let b2 = tape.param(params, &format!("{prefix}.w2.b"))?;
    let h = tape.matmul(x, w1)?;
    let h = tape.add(h, b1)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, w2)?;
    tape.add(h, b2)
}

fn layer_norm<F: Real>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let g = tape.param(params, &format!("{prefix}.gain"))?;
    let b = tape.param(params, &format!("{prefix}.bias"))?;
    tape.layer_norm(x, g, b)
}

/// Token + position embedding lookup for a padded id block `[rows·len]`.
fn embed<F: Real>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    side: &str,
    ids: &[usize],
    rows: usize,
    len: usize,
) -> Result<NodeId> {
    let tok = tape.param(params, &format!("{side}.tok_emb"))?;
    let pos = tape.param(params, &format!("{side}.pos_emb"))?;
    let positions: Vec<usize> = (0..rows * len)
        .map(|i| i % len)
        .collect();
    let te = tape.gather(tok, ids)?;
    let pe = tape.gather(pos, &positions)?;
    tape.add(te, pe)
}

/// Encoder stack over padded sources; returns `[b·s, D]` representations.
pub(crate) fn encoder_graph<F: Real>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    cfg: &ModelConfig,
    src: &[usize],
    src_pad: &[bool],
    b: usize,
    s: usize,
    dropout: &mut Dropout<'_, F>,
) -> Result<NodeId> {
    let mut x = embed(tape, params, "encoder", src, b, s)?;
    x = dropout.apply(tape, x)?;
    for i in 0..cfg.encoder_layers {
        let p = format!("encoder.layer{i}");
        let nx = layer_norm(tape, params, &format!("{p}.ln1"), x)?;
        let mask = pad_key_mask(b, cfg.num_heads, s, s, src_pad);
        let a = attention(tape, params, cfg, &format!("{p}.attn"), nx, nx, mask, b, s, s)?;
        let a = dropout.apply(tape, a)?;
        x = tape.add(x, a)?;
        let nx = layer_norm(tape, params, &format!("{p}.ln2"), x)?;
        let f = ffn(tape, params, &format!("{p}.ffn"), nx)?;
        let f = dropout.apply(tape, f)?;
        x = tape.add(x, f)?;
    }
    layer_norm(tape, params, "encoder.final_ln", x)
}

/// Decoder stack over framed targets, cross-attending into `enc`; returns
/// logits `[b·t, vocab]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn decoder_graph<F: Real>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    cfg: &ModelConfig,
    enc: NodeId,
    src_pad: &[bool],
    s: usize,
    dec_in: &[usize],
    b: usize,
    t: usize,
    dropout: &mut Dropout<'_, F>,
) -> Result<NodeId> {
    let mut x = embed(tape, params, "decoder", dec_in, b, t)?;
    x = dropout.apply(tape, x)?;
    for i in 0..cfg.decoder_layers {
        let p = format!("decoder.layer{i}");
        let nx = layer_norm(tape, params, &format!("{p}.ln1"), x)?;
        let mask = causal_mask(b, cfg.num_heads, t);
        let a = attention(
            tape,
            params,
            cfg,
            &format!("{p}.self_attn"),
            nx,
            nx,
            mask,
            b,
            t,
            t,
        )?;
        let a = dropout.apply(tape, a)?;
        x = tape.add(x, a)?;

        let nx = layer_norm(tape, params, &format!("{p}.ln2"), x)?;
        let mask = pad_key_mask(b, cfg.num_heads, t, s, src_pad);
        let a = attention(
            tape,
            params,
            cfg,
            &format!("{p}.cross_attn"),
            nx,
            enc,
            mask,
            b,
            t,
            s,
        )?;
        let a = dropout.apply(tape, a)?;
        x = tape.add(x, a)?;

        let nx = layer_norm(tape, params, &format!("{p}.ln3"), x)?;
        let f = ffn(tape, params, &format!("{p}.ffn"), nx)?;
        let f = dropout.apply(tape, f)?;
        x = tape.add(x, f)?;
    }
    let x = layer_norm(tape, params, "decoder.final_ln", x)?;
    let out = tape.param(params, "decoder.out_proj")?;
    tape.matmul(x, out)
}

/// Handles into a built training graph.
pub struct GraphOutput {
    pub loss: NodeId,
    pub logits: NodeId,
}

/// Build the full teacher-forced graph for one batch. The loss is the
/// per-sequence mean: Σ over real target positions of the smoothed
/// cross-entropy, divided by the batch size (so with zero smoothing it is
/// exactly −(1/B) Σ sequence log-probabilities).
pub fn training_graph<F: Real>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    cfg: &ModelConfig,
    batch: &[(TokenSeq, TokenSeq)],
    label_smoothing: f32,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<GraphOutput> {
    let packed = pack_batch(cfg, batch)?;
    let mut dropout = Dropout::new(dropout_rng, cfg.dropout);
    let enc = encoder_graph(
        tape,
        params,
        cfg,
        &packed.src,
        &packed.src_pad,
        packed.b,
        packed.s,
        &mut dropout,
    )?;
    let logits = decoder_graph(
        tape,
        params,
        cfg,
        enc,
        &packed.src_pad,
        packed.s,
        &packed.dec_in,
        packed.b,
        packed.t,
        &mut dropout,
    )?;
    let inv_b = F::from_f64_lossy(1.0 / packed.b as f64);
    let weights: Vec<F> = packed
        .tgt_real
        .iter()
        .map(|&real| if real { inv_b } else { F::zero() })
        .collect();
    let loss = tape.cross_entropy(
        logits,
        &packed.dec_out,
        &weights,
        F::from_f64_lossy(label_smoothing as f64),
    )?;
    Ok(GraphOutput { loss, logits })
}

/// Evaluate the training loss (no dropout) and return the scalar.
pub fn training_loss(
    params: &ParamStore,
    cfg: &ModelConfig,
    batch: &[(TokenSeq, TokenSeq)],
    label_smoothing: f32,
) -> Result<f32> {
    let mut tape: Tape<f32> = Tape::new();
    let out = training_graph(&mut tape, params, cfg, batch, label_smoothing, None)?;
    tape.value_of(out.loss).item()
}

/// Per-position −log p(y_t | y_<t, x) under teacher forcing, including the
/// terminal EOS prediction (`len(y)+1` entries).
pub fn teacher_forced_nlls(
    params: &ParamStore,
    cfg: &ModelConfig,
    x: &TokenSeq,
    y: &TokenSeq,
) -> Result<Vec<f32>> {
    let mut tape: Tape<f32> = Tape::new();
    let out = training_graph(
        &mut tape,
        params,
        cfg,
        std::slice::from_ref(&(x.clone(), y.clone())),
        0.0,
        None,
    )?;
    Ok(tape.token_nlls(out.loss)?[..y.len() + 1].to_vec())
}

/// log p(y | x; θ, φ) = Σ_t log p(y_t | y_<t, x), summed through the
/// terminal EOS. Always ≤ 0.
pub fn sequence_log_prob(
    params: &ParamStore,
    cfg: &ModelConfig,
    x: &TokenSeq,
    y: &TokenSeq,
) -> Result<f64> {
    let nlls = teacher_forced_nlls(params, cfg, x, y)?;
    Ok(-nlls.iter().map(|&v| v as f64).sum::<f64>())
}

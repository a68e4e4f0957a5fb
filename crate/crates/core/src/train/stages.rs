//! The training stages themselves: a shared sampled-batch inner loop and
//! the three procedures built on it.
//!
//! Every loop follows the same recipe — sample a batch uniformly with
//! replacement, take one optimizer step restricted to a block, and every
//! `eval_every` steps record an evaluation event (batch loss, monitor
//! exact match, block fingerprints). Batch sampling, dropout, monitor
//! subsampling and head re-draws each consume their own labelled stream
//! from [`crate::seeding::derive_seed`], so every stage is a pure function
//! of (params, config, data, seed).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Vocabulary};
use crate::error::{Error, Result};
use crate::eval;
use crate::grad::{Block, GradMap, ParamStore, Tape};
use crate::model::{reinit_task_head, training_graph, ModelConfig, TokenSeq};
use crate::seeding::{derive_seed, rng};

use super::{
    DuelConfig, EarlyStopMonitor, EvalEvent, FinetuneConfig, OptimizerState, RoundReport,
    StageReport, StopReason, TrainConfig,
};

/// One forward/backward pass: the batch loss and the gradients of every
/// parameter in `block` (parameters outside it are treated as constants).
pub fn batch_gradients(
    params: &ParamStore,
    cfg: &ModelConfig,
    batch: &[(TokenSeq, TokenSeq)],
    label_smoothing: f32,
    dropout_rng: Option<&mut ChaCha8Rng>,
    block: Block,
) -> Result<(f32, GradMap)> {
    let mut tape: Tape<f32> = Tape::new();
    let out = training_graph(&mut tape, params, cfg, batch, label_smoothing, dropout_rng)?;
    let loss = tape.value_of(out.loss).item()?;
    let grads = tape.backward_block(out.loss, params, block)?;
    Ok((loss, grads))
}

fn tokenize_dataset(vocab: &Vocabulary, dataset: &Dataset) -> Vec<(TokenSeq, TokenSeq)> {
    dataset
        .examples
        .iter()
        .map(|e| (vocab.tokenize(&e.input), vocab.tokenize(&e.output)))
        .collect()
}

/// Decode-length cap for monitor evaluations.
fn decode_len(model_cfg: &ModelConfig, train: &TrainConfig) -> Result<usize> {
    let cap = model_cfg.max_tgt_len - 1;
    match train.max_decode_len {
        None => Ok(cap),
        Some(l) if (1..=cap).contains(&l) => Ok(l),
        Some(l) => Err(Error::Usage(format!(
            "max_decode_len {l} outside [1, {cap}] for this model"
        ))),
    }
}

/// A prepared monitor: the (possibly subsampled) dataset a loop evaluates
/// greedy exact match on.
struct Monitor<'a> {
    vocab: &'a Vocabulary,
    dataset: Dataset,
    max_len: usize,
}

impl Monitor<'_> {
    fn evaluate(&self, params: &ParamStore, cfg: &ModelConfig) -> Result<f64> {
        Ok(eval::exact_match(params, cfg, self.vocab, &self.dataset, self.max_len)?.accuracy())
    }
}

/// Seeded subsample of up to `cap` monitor examples, in original order.
fn monitor_subset(dataset: &Dataset, cap: Option<usize>, seed: u64) -> Result<Dataset> {
    match cap {
        Some(k) if k < dataset.len() => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            let label = format!("monitor-subset-{}", dataset.name);
            idx.shuffle(&mut rng(derive_seed(seed, &label)));
            idx.truncate(k);
            idx.sort_unstable();
            let examples = idx.iter().map(|&i| dataset.examples[i].clone()).collect();
            Dataset::new(dataset.name.clone(), examples)
        }
        _ => Ok(dataset.clone()),
    }
}

/// Everything that distinguishes one inner loop from another.
struct LoopSpec<'a> {
    stage: &'static str,
    /// Which block the loop updates: "phi", "theta" or "joint".
    phase: &'static str,
    round: usize,
    block: Block,
    step_cap: usize,
    patience: u32,
    monitor: Option<&'a Monitor<'a>>,
}

/// Run one inner loop: sample → step → (periodically) evaluate, until the
/// step cap or the monitor's patience runs out. Returns the number of
/// steps taken and why the loop ended.
#[allow(clippy::too_many_arguments)]
fn inner_loop(
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    pool: &[(TokenSeq, TokenSeq)],
    origin_boundary: Option<usize>,
    spec: &LoopSpec,
    batch_rng: &mut ChaCha8Rng,
    dropout_rng: &mut ChaCha8Rng,
    report: &mut StageReport,
) -> Result<(usize, StopReason)> {
    if pool.is_empty() && spec.step_cap > 0 {
        return Err(Error::Input(format!(
            "{} stage has no training examples to sample",
            spec.stage
        )));
    }
    let mut stop = StopReason::StepCap;
    let mut patience = EarlyStopMonitor::new(spec.patience);
    let mut steps = 0usize;
    let mut batch = Vec::with_capacity(train.batch_size);
    while steps < spec.step_cap {
        batch.clear();
        for _ in 0..train.batch_size {
            let i = batch_rng.gen_range(0..pool.len());
            match origin_boundary {
                Some(b) if i < b => report.union_draws.0 += 1,
                Some(_) => report.union_draws.1 += 1,
                None => {}
            }
            batch.push(pool[i].clone());
        }
        let (loss, grads) = batch_gradients(
            params,
            model_cfg,
            &batch,
            train.label_smoothing,
            Some(dropout_rng),
            spec.block,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: spec.stage.to_string(),
                step: steps as u64,
            });
        }
        opt.step(params, &grads, spec.block)?;
        match spec.block {
            Block::Theta => report.theta_updates += 1,
            Block::Phi => report.phi_updates += 1,
            Block::All => {
                report.theta_updates += 1;
                report.phi_updates += 1;
            }
        }
        steps += 1;
        if steps % train.eval_every == 0 {
            let (accuracy, monitor_dataset) = match spec.monitor {
                Some(m) => (
                    Some(m.evaluate(params, model_cfg)?),
                    Some(m.dataset.name.clone()),
                ),
                None => (None, None),
            };
            report.events.push(EvalEvent {
                stage: spec.stage,
                round: spec.round,
                phase: spec.phase,
                step: steps,
                loss,
                accuracy,
                monitor_dataset,
                theta_hash: params.block_fingerprint(Block::Theta),
                phi_hash: params.block_fingerprint(Block::Phi),
            });
            if let Some(acc) = accuracy {
                if patience.accuracy_decreases(acc) {
                    stop = StopReason::Patience;
                    break;
                }
            }
        }
    }
    Ok((steps, stop))
}

/// One inner loop of the alternating schedule, with its per-round seed
/// streams and crossed monitor.
#[allow(clippy::too_many_arguments)]
fn duel_loop(
    phase: &'static str,
    block: Block,
    round: usize,
    pool: &[(TokenSeq, TokenSeq)],
    monitor: &Monitor,
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    model_cfg: &ModelConfig,
    cfg: &DuelConfig,
    seed: u64,
    report: &mut StageReport,
) -> Result<(usize, StopReason)> {
    let mut batch_rng = rng(derive_seed(seed, &format!("duel-{phase}-batch-{round}")));
    let mut dropout_rng = rng(derive_seed(seed, &format!("duel-{phase}-dropout-{round}")));
    inner_loop(
        params,
        opt,
        model_cfg,
        &cfg.train,
        pool,
        None,
        &LoopSpec {
            stage: "duel",
            phase,
            round,
            block,
            step_cap: cfg.t_inner,
            patience: cfg.t_patience,
            monitor: Some(monitor),
        },
        &mut batch_rng,
        &mut dropout_rng,
        report,
    )
}

/// Alternating pre-finetuning on a source split pair.
///
/// Each outer round runs two inner loops with crossed monitoring: the
/// φ-loop samples batches from `s` and watches exact match on `s_tilde`;
/// the θ-loop samples from `s_tilde` and watches `s`. Only the loop's own
/// block receives optimizer updates — the other block is bit-frozen. A
/// θ-loop that ends in fewer than `t_min` steps stops the schedule
/// immediately (in θ-first order the round's φ-loop is skipped, reported
/// with zero steps). Optimizer moments persist across loops and rounds so
/// each block's Adam state survives the phases in which it is frozen.
pub fn duel_prefinetune(
    params: &mut ParamStore,
    model_cfg: &ModelConfig,
    vocab: &Vocabulary,
    s: &Dataset,
    s_tilde: &Dataset,
    cfg: &DuelConfig,
    seed: u64,
) -> Result<StageReport> {
    model_cfg.validate()?;
    cfg.validate()?;
    let mut report = StageReport::new("duel");
    let s_pool = tokenize_dataset(vocab, s);
    let s_tilde_pool = tokenize_dataset(vocab, s_tilde);
    let max_len = decode_len(model_cfg, &cfg.train)?;
    let watch_s_tilde = Monitor {
        vocab,
        dataset: monitor_subset(s_tilde, cfg.train.eval_subset, seed)?,
        max_len,
    };
    let watch_s = Monitor {
        vocab,
        dataset: monitor_subset(s, cfg.train.eval_subset, seed)?,
        max_len,
    };
    let mut opt = OptimizerState::new(cfg.train.optimizer)?;
    let mut stop = StopReason::StepCap;
    'outer: for round in 0..cfg.t_outer {
        let mut phi: Option<(usize, StopReason)> = None;
        let mut theta: Option<(usize, StopReason)> = None;
        let order = if cfg.phi_loop_first {
            [Block::Phi, Block::Theta]
        } else {
            [Block::Theta, Block::Phi]
        };
        let mut theta_below_min = false;
        for block in order {
            match block {
                Block::Phi => {
                    phi = Some(duel_loop(
                        "phi",
                        Block::Phi,
                        round,
                        &s_pool,
                        &watch_s_tilde,
                        params,
                        &mut opt,
                        model_cfg,
                        cfg,
                        seed,
                        &mut report,
                    )?);
                }
                Block::Theta => {
                    let result = duel_loop(
                        "theta",
                        Block::Theta,
                        round,
                        &s_tilde_pool,
                        &watch_s,
                        params,
                        &mut opt,
                        model_cfg,
                        cfg,
                        seed,
                        &mut report,
                    )?;
                    theta_below_min = result.0 < cfg.t_min;
                    theta = Some(result);
                    if theta_below_min {
                        break;
                    }
                }
                Block::All => unreachable!("alternating schedule never updates both blocks"),
            }
        }
        let (phi_steps, phi_stop) = phi.unwrap_or((0, StopReason::ThetaBelowMin));
        let (theta_steps, theta_stop) = theta.expect("θ-loop runs in every round");
        report.rounds.push(RoundReport {
            phi_steps,
            theta_steps,
            phi_stop,
            theta_stop,
        });
        if theta_below_min {
            stop = StopReason::ThetaBelowMin;
            break 'outer;
        }
    }
    report.stop = Some(stop);
    Ok(report)
}

/// Joint pre-finetuning on the shuffled union s ∪ s̃: every step samples
/// the batch uniformly from the concatenated pool and updates both blocks.
/// The report's `union_draws` counts how many sampled examples came from
/// each side, for auditing the mixture.
#[allow(clippy::too_many_arguments)]
pub fn merged_prefinetune(
    params: &mut ParamStore,
    model_cfg: &ModelConfig,
    vocab: &Vocabulary,
    s: &Dataset,
    s_tilde: &Dataset,
    steps: usize,
    train: &TrainConfig,
    seed: u64,
) -> Result<StageReport> {
    model_cfg.validate()?;
    train.validate()?;
    let mut report = StageReport::new("merged");
    let mut pool = tokenize_dataset(vocab, s);
    let boundary = pool.len();
    pool.extend(tokenize_dataset(vocab, s_tilde));
    let mut opt = OptimizerState::new(train.optimizer)?;
    let mut batch_rng = rng(derive_seed(seed, "merged-batch"));
    let mut dropout_rng = rng(derive_seed(seed, "merged-dropout"));
    let (_, stop) = inner_loop(
        params,
        &mut opt,
        model_cfg,
        train,
        &pool,
        Some(boundary),
        &LoopSpec {
            stage: "merged",
            phase: "joint",
            round: 0,
            block: Block::All,
            step_cap: steps,
            patience: 1,
            monitor: None,
        },
        &mut batch_rng,
        &mut dropout_rng,
        &mut report,
    )?;
    report.stop = Some(stop);
    Ok(report)
}

/// Fine-tune on the target training set. With `reinit_head` the decoder
/// block is re-drawn from its init distribution first (the usual
/// convention keeps the pre-finetuned head, so this defaults off at the
/// experiment level). A dev set, if given, is evaluated every `eval_every`
/// steps and stops training after `dev_patience` stalled evaluations;
/// training always continues from the latest parameters (no rollback to
/// the best checkpoint).
pub fn finetune(
    params: &mut ParamStore,
    model_cfg: &ModelConfig,
    vocab: &Vocabulary,
    target: &Dataset,
    dev: Option<&Dataset>,
    cfg: &FinetuneConfig,
    reinit_head: bool,
    seed: u64,
) -> Result<StageReport> {
    model_cfg.validate()?;
    cfg.validate()?;
    if reinit_head {
        *params = reinit_task_head(params, derive_seed(seed, "finetune-head"))?;
    }
    let mut report = StageReport::new("finetune");
    let pool = tokenize_dataset(vocab, target);
    let max_len = decode_len(model_cfg, &cfg.train)?;
    let monitor = match dev {
        Some(d) => Some(Monitor {
            vocab,
            dataset: monitor_subset(d, cfg.train.eval_subset, seed)?,
            max_len,
        }),
        None => None,
    };
    let mut opt = OptimizerState::new(cfg.train.optimizer)?;
    let mut batch_rng = rng(derive_seed(seed, "finetune-batch"));
    let mut dropout_rng = rng(derive_seed(seed, "finetune-dropout"));
    let (_, stop) = inner_loop(
        params,
        &mut opt,
        model_cfg,
        &cfg.train,
        &pool,
        None,
        &LoopSpec {
            stage: "finetune",
            phase: "joint",
            round: 0,
            block: Block::All,
            step_cap: cfg.steps,
            patience: cfg.dev_patience,
            monitor: monitor.as_ref(),
        },
        &mut batch_rng,
        &mut dropout_rng,
        &mut report,
    )?;
    report.stop = Some(stop);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use crate::model::init_model;
    use crate::train::{OptimizerConfig, OptimizerKind};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 24,
            embed_dim: 16,
            num_heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_dim: 32,
            max_src_len: 8,
            max_tgt_len: 10,
            dropout: 0.0,
        }
    }

    fn toy_pair() -> (Dataset, Dataset, Vocabulary) {
        let mk = |rows: &[(&str, &str)], name: &str| {
            Dataset::new(
                name,
                rows.iter()
                    .map(|(i, o)| Example::new(*i, *o, None).unwrap())
                    .collect(),
            )
            .unwrap()
        };
        let s = mk(
            &[
                ("walk", "WALK"),
                ("run", "RUN"),
                ("walk twice", "WALK WALK"),
                ("run twice", "RUN RUN"),
            ],
            "s",
        );
        let s_tilde = mk(
            &[
                ("blick", "BLICK"),
                ("dax", "DAX"),
                ("blick twice", "BLICK BLICK"),
                ("dax twice", "DAX DAX"),
            ],
            "s-tilde",
        );
        let vocab = Vocabulary::build(&[&s, &s_tilde]);
        (s, s_tilde, vocab)
    }

    fn quick_duel_config(t_outer: usize, t_inner: usize, eval_every: usize) -> DuelConfig {
        DuelConfig {
            train: TrainConfig {
                optimizer: OptimizerConfig {
                    learning_rate: 1e-3,
                    ..OptimizerConfig::default()
                },
                batch_size: 4,
                label_smoothing: 0.0,
                eval_every,
                eval_subset: None,
                max_decode_len: None,
            },
            t_outer,
            t_inner,
            t_patience: 1,
            t_min: 1,
            phi_loop_first: true,
        }
    }

    #[test]
    fn zero_outer_rounds_leave_parameters_bit_identical() {
        let cfg = tiny_config();
        let (s, s_tilde, vocab) = toy_pair();
        let mut params = init_model(&cfg, 7).unwrap();
        let before_theta = params.block_fingerprint(Block::Theta);
        let before_phi = params.block_fingerprint(Block::Phi);
        let report = duel_prefinetune(
            &mut params,
            &cfg,
            &vocab,
            &s,
            &s_tilde,
            &quick_duel_config(0, 10, 5),
            11,
        )
        .unwrap();
        assert_eq!(params.block_fingerprint(Block::Theta), before_theta);
        assert_eq!(params.block_fingerprint(Block::Phi), before_phi);
        assert!(report.rounds.is_empty());
        assert!(report.events.is_empty());
        assert_eq!(report.stop, Some(StopReason::StepCap));
    }

    #[test]
    fn phases_update_only_their_own_block_and_watch_the_other_side() {
        let cfg = tiny_config();
        let (s, s_tilde, vocab) = toy_pair();
        let mut params = init_model(&cfg, 7).unwrap();
        let report = duel_prefinetune(
            &mut params,
            &cfg,
            &vocab,
            &s,
            &s_tilde,
            &quick_duel_config(2, 6, 2),
            11,
        )
        .unwrap();
        assert!(!report.events.is_empty());
        for window in report.events.windows(2) {
            let (a, b) = (&window[0], &window[1]);
            if a.phase == b.phase && a.round == b.round {
                match a.phase {
                    "phi" => assert_eq!(a.theta_hash, b.theta_hash, "θ moved during a φ-loop"),
                    "theta" => assert_eq!(a.phi_hash, b.phi_hash, "φ moved during a θ-loop"),
                    other => panic!("unexpected phase {other}"),
                }
            }
        }
        for event in &report.events {
            let monitor = event.monitor_dataset.as_deref().unwrap();
            match event.phase {
                "phi" => assert_eq!(monitor, "s-tilde"),
                "theta" => assert_eq!(monitor, "s"),
                other => panic!("unexpected phase {other}"),
            }
        }
        assert!(report.phi_updates > 0 && report.theta_updates > 0);
    }

    #[test]
    fn stalled_monitors_stop_loops_and_a_short_theta_loop_stops_the_schedule() {
        let cfg = tiny_config();
        let (s, s_tilde, vocab) = toy_pair();
        let mut params = init_model(&cfg, 7).unwrap();
        // Tiny learning rate: exact match stays at zero, so with patience 1
        // and an evaluation every step each loop stops at its second step,
        // which is below t_min.
        let mut duel_cfg = quick_duel_config(5, 50, 1);
        duel_cfg.train.optimizer.learning_rate = 1e-7;
        duel_cfg.t_min = 10;
        let report = duel_prefinetune(
            &mut params,
            &cfg,
            &vocab,
            &s,
            &s_tilde,
            &duel_cfg,
            11,
        )
        .unwrap();
        assert_eq!(report.rounds.len(), 1, "schedule should stop after one round");
        let round = &report.rounds[0];
        assert_eq!(round.phi_stop, StopReason::Patience);
        assert_eq!(round.theta_stop, StopReason::Patience);
        assert_eq!(round.phi_steps, 2);
        assert_eq!(round.theta_steps, 2);
        assert_eq!(report.stop, Some(StopReason::ThetaBelowMin));
    }

    #[test]
    fn theta_first_order_skips_the_phi_loop_when_theta_dies_early() {
        let cfg = tiny_config();
        let (s, s_tilde, vocab) = toy_pair();
        let mut params = init_model(&cfg, 7).unwrap();
        let mut duel_cfg = quick_duel_config(5, 50, 1);
        duel_cfg.train.optimizer.learning_rate = 1e-7;
        duel_cfg.t_min = 10;
        duel_cfg.phi_loop_first = false;
        let report = duel_prefinetune(
            &mut params,
            &cfg,
            &vocab,
            &s,
            &s_tilde,
            &duel_cfg,
            11,
        )
        .unwrap();
        assert_eq!(report.rounds.len(), 1);
        assert_eq!(report.rounds[0].phi_steps, 0);
        assert_eq!(report.phi_updates, 0);
        assert_eq!(report.rounds[0].theta_steps, 2);
        assert_eq!(report.stop, Some(StopReason::ThetaBelowMin));
    }

    #[test]
    fn identical_seeds_reproduce_the_run_bit_for_bit() {
        let cfg = tiny_config();
        let (s, s_tilde, vocab) = toy_pair();
        let duel_cfg = quick_duel_config(1, 6, 3);
        let run = || {
            let mut params = init_model(&cfg, 7).unwrap();
            let report =
                duel_prefinetune(&mut params, &cfg, &vocab, &s, &s_tilde, &duel_cfg, 11).unwrap();
            (
                params.block_fingerprint(Block::Theta),
                params.block_fingerprint(Block::Phi),
                report
                    .events
                    .iter()
                    .map(|e| e.loss.to_bits())
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn blockwise_gradients_agree_with_the_joint_pass() {
        let cfg = tiny_config();
        let (s, _, vocab) = toy_pair();
        let params = init_model(&cfg, 7).unwrap();
        let batch = tokenize_dataset(&vocab, &s);
        let (loss_all, all) = batch_gradients(&params, &cfg, &batch, 0.0, None, Block::All).unwrap();
        let (loss_phi, phi) = batch_gradients(&params, &cfg, &batch, 0.0, None, Block::Phi).unwrap();
        let (loss_theta, theta) =
            batch_gradients(&params, &cfg, &batch, 0.0, None, Block::Theta).unwrap();
        assert_eq!(loss_all.to_bits(), loss_phi.to_bits());
        assert_eq!(loss_all.to_bits(), loss_theta.to_bits());
        assert_eq!(phi.len() + theta.len(), all.len());
        for (name, grad) in phi.iter().chain(theta.iter()) {
            let joint = &all[name];
            for (a, b) in grad.data().iter().zip(joint.data().iter()) {
                assert!((a - b).abs() <= 1e-6, "{name} disagrees: {a} vs {b}");
            }
        }
    }

    #[test]
    fn merged_draws_from_both_sides_in_proportion() {
        let cfg = tiny_config();
        let (s, s_tilde, vocab) = toy_pair();
        // 3:1 pool sizes: duplicate s three times on one side.
        let mut examples = s.examples.clone();
        examples.extend(s.examples.clone());
        examples.extend(s.examples.clone());
        let s_big = Dataset::new("s", examples).unwrap();
        let mut params = init_model(&cfg, 7).unwrap();
        let train = TrainConfig {
            batch_size: 8,
            eval_every: 50,
            label_smoothing: 0.0,
            ..TrainConfig::default()
        };
        let report = merged_prefinetune(
            &mut params, &cfg, &vocab, &s_big, &s_tilde, 100, &train, 11,
        )
        .unwrap();
        let (from_s, from_s_tilde) = report.union_draws;
        assert_eq!(from_s + from_s_tilde, 800);
        // Binomial(800, 0.75): mean 600, σ ≈ 12.2; allow three sigma.
        let sigma = (800.0_f64 * 0.75 * 0.25).sqrt();
        assert!((from_s as f64 - 600.0).abs() < 3.0 * sigma, "{from_s} draws from s");
        assert_eq!(report.theta_updates, 100);
        assert_eq!(report.phi_updates, 100);
    }

    #[test]
    fn zero_merged_steps_leave_parameters_bit_identical() {
        let cfg = tiny_config();
        let (s, s_tilde, vocab) = toy_pair();
        let mut params = init_model(&cfg, 7).unwrap();
        let before = (
            params.block_fingerprint(Block::Theta),
            params.block_fingerprint(Block::Phi),
        );
        let report = merged_prefinetune(
            &mut params,
            &cfg,
            &vocab,
            &s,
            &s_tilde,
            0,
            &TrainConfig::default(),
            11,
        )
        .unwrap();
        assert_eq!(
            (
                params.block_fingerprint(Block::Theta),
                params.block_fingerprint(Block::Phi)
            ),
            before
        );
        assert_eq!(report.union_draws, (0, 0));
    }

    #[test]
    fn finetune_reduces_training_loss() {
        let cfg = tiny_config();
        let (s, _, vocab) = toy_pair();
        let mut params = init_model(&cfg, 7).unwrap();
        let batch = tokenize_dataset(&vocab, &s);
        let before = crate::model::training_loss(&params, &cfg, &batch, 0.0).unwrap();
        let ft = FinetuneConfig {
            train: TrainConfig {
                optimizer: OptimizerConfig {
                    kind: OptimizerKind::Sgd,
                    learning_rate: 0.05,
                    weight_decay: 0.0,
                    ..OptimizerConfig::default()
                },
                batch_size: 4,
                label_smoothing: 0.0,
                eval_every: 100,
                eval_subset: None,
                max_decode_len: None,
            },
            steps: 30,
            dev_patience: 5,
        };
        let report = finetune(&mut params, &cfg, &vocab, &s, None, &ft, false, 11).unwrap();
        let after = crate::model::training_loss(&params, &cfg, &batch, 0.0).unwrap();
        assert!(after < before, "loss went {before} → {after}");
        assert_eq!(report.stop, Some(StopReason::StepCap));
        assert_eq!(report.theta_updates, 30);
    }

    #[test]
    fn head_reinit_preserves_encoder_bits_and_redraws_decoder() {
        let cfg = tiny_config();
        let (s, _, vocab) = toy_pair();
        let mut params = init_model(&cfg, 7).unwrap();
        let theta_before = params.block_fingerprint(Block::Theta);
        let phi_before = params.block_fingerprint(Block::Phi);
        let ft = FinetuneConfig {
            steps: 0,
            ..FinetuneConfig::default()
        };
        finetune(&mut params, &cfg, &vocab, &s, None, &ft, true, 11).unwrap();
        assert_eq!(params.block_fingerprint(Block::Theta), theta_before);
        assert_ne!(params.block_fingerprint(Block::Phi), phi_before);
    }

    #[test]
    fn dev_patience_stops_finetuning_early() {
        let cfg = tiny_config();
        let (s, s_tilde, vocab) = toy_pair();
        let mut params = init_model(&cfg, 7).unwrap();
        // Dev accuracy on the unrelated side stays at zero under a tiny
        // learning rate, so evaluating every step trips patience 1 at the
        // second evaluation.
        let ft = FinetuneConfig {
            train: TrainConfig {
                optimizer: OptimizerConfig {
                    learning_rate: 1e-7,
                    ..OptimizerConfig::default()
                },
                batch_size: 2,
                label_smoothing: 0.0,
                eval_every: 1,
                eval_subset: None,
                max_decode_len: None,
            },
            steps: 50,
            dev_patience: 1,
        };
        let report = finetune(&mut params, &cfg, &vocab, &s, Some(&s_tilde), &ft, false, 11)
            .unwrap();
        assert_eq!(report.stop, Some(StopReason::Patience));
        assert_eq!(report.events.len(), 2);
        assert_eq!(report.events.last().unwrap().step, 2);
        let lines = report.to_lines();
        assert!(lines.contains("finetune"));
        assert!(lines.contains("stop=patience"));
    }
}

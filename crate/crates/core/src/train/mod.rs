//! The three training procedures and their shared machinery.
//!
//! Pre-finetuning transfers inductive bias from a source split pair
//! (s, s̃) before fine-tuning on the target:
//!
//! * [`duel_prefinetune`] — alternating block updates. Each outer round
//!   first trains the task head φ on batches from s while watching greedy
//!   exact match on s̃, then trains the representation θ on batches from s̃
//!   while watching s. Whichever side stops improving ends its inner loop;
//!   a θ-loop that dies before `t_min` steps ends the whole schedule.
//! * [`merged_prefinetune`] — joint (θ, φ) training on the shuffled union
//!   s ∪ s̃.
//! * [`finetune`] — ordinary training on the target task, optionally with a
//!   re-drawn task head and dev-set early stopping.
//!
//! All three are deterministic functions of (params, config, data, seed).

mod optim;
mod stages;

pub use optim::{EarlyStopMonitor, OptimizerConfig, OptimizerKind, OptimizerState};
pub use stages::{batch_gradients, duel_prefinetune, finetune, merged_prefinetune};

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Knobs shared by every training stage.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    /// Batch size N; batches are sampled uniformly with replacement.
    pub batch_size: usize,
    /// Label-smoothing weight ε.
    pub label_smoothing: f32,
    /// Steps between monitor evaluations.
    pub eval_every: usize,
    /// Cap on the number of monitor examples (seeded subsample); `None`
    /// evaluates the full monitor set.
    pub eval_subset: Option<usize>,
    /// Decode-length cap for monitor evaluations; `None` uses the model's
    /// `max_tgt_len − 1`.
    pub max_decode_len: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::default(),
            batch_size: 16,
            label_smoothing: 0.1,
            eval_every: 500,
            eval_subset: None,
            max_decode_len: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size < 1 || self.eval_every < 1 {
            return Err(Error::Usage(
                "batch_size and eval_every must be ≥ 1".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.label_smoothing) {
            return Err(Error::Usage(format!(
                "label_smoothing {} outside [0, 1]",
                self.label_smoothing
            )));
        }
        if self.eval_subset == Some(0) {
            return Err(Error::Usage("eval_subset must be ≥ 1".to_string()));
        }
        Ok(())
    }
}

/// Configuration of the alternating pre-finetuning schedule. The published
/// defaults (10 outer rounds, 30 000-step inner loops, patience 1,
/// evaluation every 500 steps) assume corpus-scale runs; desk experiments
/// shrink `t_inner` and `eval_every` together.
#[derive(Clone, Copy, Debug)]
pub struct DuelConfig {
    pub train: TrainConfig,
    /// Maximum outer rounds T_outer.
    pub t_outer: usize,
    /// Maximum steps per inner loop T_inner.
    pub t_inner: usize,
    /// Monitor patience T_patience, counted in evaluation events.
    pub t_patience: u32,
    /// A θ-loop shorter than this ends the outer loop (T_min).
    pub t_min: usize,
    /// Run the φ-loop first within a round (the pseudocode order). The
    /// prose order (θ-loop first) is available for comparison; batches and
    /// monitors stay tied to their block either way.
    pub phi_loop_first: bool,
}

impl Default for DuelConfig {
    fn default() -> Self {
        let t_inner = 30_000;
        DuelConfig {
            train: TrainConfig::default(),
            t_outer: 10,
            t_inner,
            t_patience: 1,
            t_min: default_t_min(t_inner),
            phi_loop_first: true,
        }
    }
}

/// Published minimum-θ-steps thresholds are 1000–3000 against 30 000-step
/// inner loops; scale that ratio down to desk corpora with a floor.
pub fn default_t_min(t_inner: usize) -> usize {
    (t_inner / 30).max(50)
}

impl DuelConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.t_inner < 1 || self.t_min < 1 || self.t_patience < 1 {
            return Err(Error::Usage(
                "t_inner, t_min and t_patience must be ≥ 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Configuration of the fine-tuning stage.
#[derive(Clone, Copy, Debug)]
pub struct FinetuneConfig {
    pub train: TrainConfig,
    /// Gradient-step budget.
    pub steps: usize,
    /// Dev-set evaluations without improvement before stopping.
    pub dev_patience: u32,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            train: TrainConfig::default(),
            steps: 2_000,
            dev_patience: 5,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()
    }
}

/// Why a loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// Ran the full step budget.
    StepCap,
    /// The monitor stopped improving.
    Patience,
    /// The θ-loop finished under `t_min` steps (outer stop).
    ThetaBelowMin,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::StepCap => "step-cap",
            StopReason::Patience => "patience",
            StopReason::ThetaBelowMin => "theta-below-min",
        }
    }
}

/// One monitor evaluation during training.
#[derive(Clone, Debug)]
pub struct EvalEvent {
    pub stage: &'static str,
    /// Outer round (0 for single-loop stages).
    pub round: usize,
    /// Which block the surrounding loop updates: "phi", "theta", "joint".
    pub phase: &'static str,
    /// Steps taken in the surrounding loop when the event fired.
    pub step: usize,
    /// Loss of the batch preceding the evaluation.
    pub loss: f32,
    /// Monitor exact-match accuracy (absent for unmonitored stages).
    pub accuracy: Option<f64>,
    /// Name of the dataset the monitor read.
    pub monitor_dataset: Option<String>,
    pub theta_hash: u64,
    pub phi_hash: u64,
}

/// Inner-loop summary of one outer round.
#[derive(Clone, Copy, Debug)]
pub struct RoundReport {
    pub phi_steps: usize,
    pub theta_steps: usize,
    pub phi_stop: StopReason,
    pub theta_stop: StopReason,
}

/// Everything a training stage did, for audit and reporting.
#[derive(Clone, Debug, Default)]
pub struct StageReport {
    pub stage: String,
    pub rounds: Vec<RoundReport>,
    pub events: Vec<EvalEvent>,
    /// Total optimizer updates applied to each block.
    pub theta_updates: u64,
    pub phi_updates: u64,
    /// Why the stage as a whole ended (outer cap vs. θ-loop under-run for
    /// the alternating schedule; step cap or dev patience otherwise).
    pub stop: Option<StopReason>,
    /// Of all examples drawn into batches, how many came from each source
    /// ((from_s, from_s_tilde); only the merged stage mixes origins).
    pub union_draws: (u64, u64),
}

impl StageReport {
    pub fn new(stage: &str) -> Self {
        StageReport {
            stage: stage.to_string(),
            ..StageReport::default()
        }
    }

    /// Line-oriented rendering: one record per evaluation event plus a
    /// trailing summary line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let acc = e
                .accuracy
                .map(|a| format!("{a:.6}"))
                .unwrap_or_else(|| "-".to_string());
            let mon = e.monitor_dataset.as_deref().unwrap_or("-");
            let _ = writeln!(
                out,
                "event\t{}\t{}\t{}\t{}\t{:.6}\t{acc}\t{mon}\t{:016x}\t{:016x}",
                e.stage, e.round, e.phase, e.step, e.loss, e.theta_hash, e.phi_hash
            );
        }
        let _ = writeln!(
            out,
            "summary\t{}\trounds={}\ttheta_updates={}\tphi_updates={}\tstop={}",
            self.stage,
            self.rounds.len(),
            self.theta_updates,
            self.phi_updates,
            self.stop.map(StopReason::as_str).unwrap_or("-"),
        );
        out
    }
}

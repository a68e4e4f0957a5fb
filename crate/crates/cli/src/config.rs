//! Experiment configuration: a flat-sectioned TOML file, one experiment per
//! file, with every knob overridable from the command line.
//!
//! Numeric fields use `0` as "pick the default" where the natural value is
//! data-dependent (`model.vocab_size`, `duel.t_min`, `training.eval_subset`,
//! `training.max_decode_len`); optional files are simply omitted.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use duel_core::model::ModelConfig;
use duel_core::splits::SplitKind;
use duel_core::train::{
    default_t_min, DuelConfig, FinetuneConfig, OptimizerConfig, OptimizerKind, TrainConfig,
};

use crate::{CliError, CliResult};

/// Pre-finetuning method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Fine-tune on the target directly.
    None,
    /// Joint training on the shuffled union s ∪ s̃.
    Merged,
    /// Alternating block updates with crossed monitoring.
    Duel,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Merged => "merged",
            Method::Duel => "duel",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// 0 = size the embedding to the vocabulary built from the data.
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

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            vocab_size: 0,
            embed_dim: m.embed_dim,
            num_heads: m.num_heads,
            encoder_layers: m.encoder_layers,
            decoder_layers: m.decoder_layers,
            ffn_dim: m.ffn_dim,
            max_src_len: m.max_src_len,
            max_tgt_len: m.max_tgt_len,
            dropout: m.dropout,
        }
    }
}

impl ModelSection {
    /// Resolve against the actual vocabulary size and validate.
    pub fn resolve(&self, vocab_size: usize) -> CliResult<ModelConfig> {
        if self.vocab_size != 0 && self.vocab_size < vocab_size {
            return Err(CliError::Config(format!(
                "model.vocab_size {} is smaller than the {} tokens the data needs",
                self.vocab_size, vocab_size
            )));
        }
        let cfg = ModelConfig {
            vocab_size: if self.vocab_size == 0 {
                vocab_size
            } else {
                self.vocab_size
            },
            embed_dim: self.embed_dim,
            num_heads: self.num_heads,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            ffn_dim: self.ffn_dim,
            max_src_len: self.max_src_len,
            max_tgt_len: self.max_tgt_len,
            dropout: self.dropout,
        };
        cfg.validate().map_err(crate::config_err)?;
        Ok(cfg)
    }

    pub fn from_model(cfg: &ModelConfig) -> ModelSection {
        ModelSection {
            vocab_size: cfg.vocab_size,
            embed_dim: cfg.embed_dim,
            num_heads: cfg.num_heads,
            encoder_layers: cfg.encoder_layers,
            decoder_layers: cfg.decoder_layers,
            ffn_dim: cfg.ffn_dim,
            max_src_len: cfg.max_src_len,
            max_tgt_len: cfg.max_tgt_len,
            dropout: cfg.dropout,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub method: Method,
    pub outdir: PathBuf,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            method: Method::None,
            outdir: PathBuf::from("runs/experiment"),
            seeds: vec![11],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// "adamw" or "sgd".
    pub optimizer: String,
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub batch_size: usize,
    pub label_smoothing: f32,
    pub eval_every: usize,
    /// 0 = evaluate the full monitor set.
    pub eval_subset: usize,
    /// 0 = the model's decode cap.
    pub max_decode_len: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            optimizer: "adamw".to_string(),
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            label_smoothing: 0.1,
            eval_every: 500,
            eval_subset: 0,
            max_decode_len: 0,
        }
    }
}

impl TrainingSection {
    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let kind = match self.optimizer.to_lowercase().as_str() {
            "adamw" => OptimizerKind::AdamW,
            "sgd" => OptimizerKind::Sgd,
            other => {
                return Err(CliError::Config(format!(
                    "training.optimizer `{other}` is neither adamw nor sgd"
                )))
            }
        };
        let cfg = TrainConfig {
            optimizer: OptimizerConfig {
                kind,
                learning_rate: self.learning_rate,
                weight_decay: self.weight_decay,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            batch_size: self.batch_size,
            label_smoothing: self.label_smoothing,
            eval_every: self.eval_every,
            eval_subset: (self.eval_subset != 0).then_some(self.eval_subset),
            max_decode_len: (self.max_decode_len != 0).then_some(self.max_decode_len),
        };
        cfg.validate().map_err(crate::config_err)?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuelSection {
    pub t_outer: usize,
    pub t_inner: usize,
    pub t_patience: u32,
    /// 0 = max(50, t_inner / 30).
    pub t_min: usize,
    pub phi_loop_first: bool,
}

impl Default for DuelSection {
    fn default() -> Self {
        DuelSection {
            t_outer: 10,
            t_inner: 30_000,
            t_patience: 1,
            t_min: 0,
            phi_loop_first: true,
        }
    }
}

impl DuelSection {
    pub fn duel_config(&self, train: TrainConfig) -> CliResult<DuelConfig> {
        let cfg = DuelConfig {
            train,
            t_outer: self.t_outer,
            t_inner: self.t_inner,
            t_patience: self.t_patience,
            t_min: if self.t_min == 0 {
                default_t_min(self.t_inner)
            } else {
                self.t_min
            },
            phi_loop_first: self.phi_loop_first,
        };
        cfg.validate().map_err(crate::config_err)?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefinetuneSection {
    /// Step budget when method = "merged".
    pub merged_steps: usize,
}

impl Default for PrefinetuneSection {
    fn default() -> Self {
        PrefinetuneSection {
            merged_steps: 30_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub steps: usize,
    /// Re-draw the task head before fine-tuning instead of keeping the
    /// pre-finetuned one.
    pub reinit_head: bool,
    /// > 0 carves a dev holdout of this fraction from the target train set
    /// for early stopping; 0 trains for the full step budget.
    pub dev_fraction: f64,
    pub dev_patience: u32,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            steps: 3_500,
            reinit_head: false,
            dev_fraction: 0.0,
            dev_patience: 5,
        }
    }
}

impl FinetuneSection {
    pub fn finetune_config(&self, train: TrainConfig) -> CliResult<FinetuneConfig> {
        let cfg = FinetuneConfig {
            train,
            steps: self.steps,
            dev_patience: self.dev_patience,
        };
        cfg.validate().map_err(crate::config_err)?;
        Ok(cfg)
    }
}

/// Where one task's data comes from and how to split it. Exactly one of
/// `dataset` (a TSV file) or `generator` must be set.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// Dataset name; also the default task-tag base.
    pub name: String,
    /// Task tag override; empty = `name` lowercased with any `-variant`
    /// suffix stripped (variants share the base task's tag).
    pub task: String,
    pub dataset: Option<PathBuf>,
    /// Currently "mini-scan".
    pub generator: Option<String>,
    pub compound_clauses: bool,
    /// 0 = unlimited.
    pub max_output_tokens: usize,
    /// 0 = keep all generated examples.
    pub max_examples: usize,
    pub gen_seed: u64,
    /// Rewrite through this lexicon into a disjoint-vocabulary variant
    /// before splitting.
    pub lexicon: Option<PathBuf>,
    pub variant_seed: u64,
    /// "standard", "length" or "mcd".
    pub split: String,
    pub fraction: f64,
    pub split_seed: u64,
    pub mcd_iterations: usize,
    /// Best-of-n restarts of the divergence search (seeds split_seed,
    /// split_seed+1, …).
    pub mcd_restarts: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            name: "dataset".to_string(),
            task: String::new(),
            dataset: None,
            generator: None,
            compound_clauses: true,
            max_output_tokens: 0,
            max_examples: 0,
            gen_seed: 5,
            lexicon: None,
            variant_seed: 3,
            split: "standard".to_string(),
            fraction: 0.5,
            split_seed: 7,
            mcd_iterations: 2_000,
            mcd_restarts: 1,
        }
    }
}

impl SplitSpec {
    pub fn split_kind(&self) -> CliResult<SplitKind> {
        SplitKind::parse(&self.split).map_err(crate::config_err)
    }

    /// The task tag this spec's inputs carry.
    pub fn tag(&self) -> String {
        if !self.task.is_empty() {
            return self.task.clone();
        }
        let base = self.name.strip_suffix("-variant").unwrap_or(&self.name);
        base.to_lowercase()
    }

    pub fn validate(&self, label: &str) -> CliResult<()> {
        match (&self.dataset, &self.generator) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(format!(
                    "{label}: set either dataset or generator, not both"
                )))
            }
            (None, None) => {
                return Err(CliError::Config(format!(
                    "{label}: one of dataset or generator is required"
                )))
            }
            (Some(path), None) if !path.is_file() => {
                return Err(CliError::Config(format!(
                    "{label}: dataset {} does not exist",
                    path.display()
                )))
            }
            (None, Some(g)) if g != "mini-scan" => {
                return Err(CliError::Config(format!(
                    "{label}: unknown generator `{g}` (only mini-scan)"
                )))
            }
            _ => {}
        }
        if let Some(lex) = &self.lexicon {
            if !lex.is_file() {
                return Err(CliError::Config(format!(
                    "{label}: lexicon {} does not exist",
                    lex.display()
                )));
            }
        }
        self.split_kind()?;
        if !(0.0 < self.fraction && self.fraction < 1.0) {
            return Err(CliError::Config(format!(
                "{label}: fraction {} outside (0, 1)",
                self.fraction
            )));
        }
        if self.mcd_restarts == 0 {
            return Err(CliError::Config(format!("{label}: mcd_restarts must be ≥ 1")));
        }
        if self.name.is_empty() {
            return Err(CliError::Config(format!("{label}: name must be nonempty")));
        }
        Ok(())
    }
}

/// One experiment, end to end.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub experiment: ExperimentSection,
    pub training: TrainingSection,
    pub duel: DuelSection,
    pub prefinetune: PrefinetuneSection,
    pub finetune: FinetuneSection,
    /// Pre-finetuning sources; several specs concatenate into one source
    /// pair (multi-variant pre-finetuning).
    pub source: Vec<SplitSpec>,
    pub target: SplitSpec,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> CliResult<(ExperimentConfig, String)> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let text = apply_overrides(&text, overrides)?;
        let cfg = ExperimentConfig::parse(&text)?;
        Ok((cfg, text))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.experiment.seeds.is_empty() {
            return Err(CliError::Config("experiment.seeds must be nonempty".into()));
        }
        if self.experiment.method != Method::None && self.source.is_empty() {
            return Err(CliError::Config(format!(
                "method `{}` needs at least one [[source]]",
                self.experiment.method.as_str()
            )));
        }
        for (i, spec) in self.source.iter().enumerate() {
            spec.validate(&format!("source[{i}]"))?;
        }
        self.target.validate("target")?;
        // Fail fast on knob combinations the stages would reject later.
        let train = self.training.train_config()?;
        self.duel.duel_config(train)?;
        self.finetune.finetune_config(train)?;
        if !(0.0..1.0).contains(&self.finetune.dev_fraction) {
            return Err(CliError::Config(format!(
                "finetune.dev_fraction {} outside [0, 1)",
                self.finetune.dev_fraction
            )));
        }
        Ok(())
    }

    /// Label for the report's source column: spec names joined with `+`,
    /// each with its split kind attached.
    pub fn source_label(&self) -> String {
        if self.experiment.method == Method::None || self.source.is_empty() {
            return "-".to_string();
        }
        self.source
            .iter()
            .map(|s| format!("{}-{}", s.name, s.split))
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn target_label(&self) -> String {
        format!("{}-{}", self.target.name, self.target.split)
    }
}

/// Apply `section.key=value` overrides to the raw TOML text. Values parse
/// as TOML literals (numbers, booleans, arrays) with a fallback to plain
/// strings; numeric path segments index arrays-of-tables.
pub fn apply_overrides(text: &str, sets: &[String]) -> CliResult<String> {
    if sets.is_empty() {
        return Ok(text.to_string());
    }
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("config parse: {e}")))?;
    let mut root = toml::Value::Table(table);
    for set in sets {
        let (path, raw) = set
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set `{set}` is not key=value")))?;
        let value = parse_toml_literal(raw);
        let segments: Vec<&str> = path.split('.').collect();
        let (last, walk) = segments
            .split_last()
            .ok_or_else(|| CliError::Config(format!("--set `{set}` has an empty key")))?;
        let mut node = &mut root;
        for seg in walk {
            node = match node {
                toml::Value::Array(items) => {
                    let idx: usize = seg.parse().map_err(|_| {
                        CliError::Config(format!("--set `{set}`: `{seg}` is not an array index"))
                    })?;
                    items.get_mut(idx).ok_or_else(|| {
                        CliError::Config(format!("--set `{set}`: index {idx} out of range"))
                    })?
                }
                toml::Value::Table(table) => table
                    .entry(seg.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new())),
                _ => {
                    return Err(CliError::Config(format!(
                        "--set `{set}`: `{seg}` is not a table"
                    )))
                }
            };
        }
        match node {
            toml::Value::Table(table) => {
                table.insert(last.to_string(), value);
            }
            toml::Value::Array(items) => {
                let idx: usize = last.parse().map_err(|_| {
                    CliError::Config(format!("--set `{set}`: `{last}` is not an array index"))
                })?;
                let slot = items.get_mut(idx).ok_or_else(|| {
                    CliError::Config(format!("--set `{set}`: index {idx} out of range"))
                })?;
                *slot = value;
            }
            _ => {
                return Err(CliError::Config(format!(
                    "--set `{set}`: `{last}` cannot be assigned"
                )))
            }
        }
    }
    toml::to_string(&root).map_err(|e| CliError::Config(format!("config re-render: {e}")))
}

/// Parse an override value as a TOML literal, falling back to a string.
fn parse_toml_literal(raw: &str) -> toml::Value {
    raw.parse::<toml::Value>()
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

/// Sidecar `model.toml` written next to checkpoints so `eval` can rebuild
/// the network without the experiment config.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    model: ModelSection,
}

pub fn save_model_sidecar(cfg: &ModelConfig, path: &Path) -> CliResult<()> {
    let text = toml::to_string(&ModelFile {
        model: ModelSection::from_model(cfg),
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn load_model_sidecar(path: &Path) -> CliResult<ModelConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let file: ModelFile = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if file.model.vocab_size == 0 {
        return Err(CliError::Config(format!(
            "{}: sidecar must pin vocab_size",
            path.display()
        )));
    }
    file.model.resolve(file.model.vocab_size)
}

//! The experiment pipeline: build the split pairs, then per seed run
//! pre-finetune → fine-tune → evaluate with a checkpoint after every stage,
//! and aggregate the sweep into a report.
//!
//! Stages resume: if a stage's checkpoint already exists on disk the stage
//! is skipped and the parameters are loaded instead, so deleting the
//! fine-tune outputs and re-running reproduces the final metrics bit-exactly
//! from the persisted pre-finetune state. Seeds are independent; a failed
//! seed is recorded in the report and the sweep continues.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use duel_core::data::{apply_prompt, make_lexical_variant, Dataset, LexiconTable, Vocabulary};
use duel_core::data::{generate_mini_scan, MiniScanConfig};
use duel_core::eval::{self, EvalResult, HoldoutSize};
use duel_core::grad::{load_checkpoint, save_checkpoint, ParamStore};
use duel_core::model::{init_model, ModelConfig};
use duel_core::seeding::derive_seed;
use duel_core::splits::{
    length_split, mcd_split_search, standard_split, SplitKind, SplitPair, DEFAULT_RULE,
    DivergenceConfig,
};
use duel_core::train::{
    duel_prefinetune, finetune, merged_prefinetune, StageReport,
};

use crate::config::{ExperimentConfig, Method, SplitSpec};
use crate::{config_err, runtime_err, CliError, CliResult};

/// Where one side of the experiment's data came from, for the report.
#[derive(Clone, Debug)]
pub struct SourceProvenance {
    pub name: String,
    pub tag: String,
    pub kind: SplitKind,
    pub train_size: usize,
    pub test_size: usize,
    pub divergence: Option<f64>,
}

/// Materialized datasets for one experiment, shared by every seed.
pub struct PreparedData {
    /// Pre-finetuning pair (None when method = none): concatenated, tagged
    /// train and test sides of every source spec.
    pub s: Option<Dataset>,
    pub s_tilde: Option<Dataset>,
    /// Fine-tuning train side (minus the dev holdout), dev holdout, and
    /// the held-out target test side, all tagged.
    pub t: Dataset,
    pub t_dev: Option<Dataset>,
    pub t_test: Dataset,
    pub vocab: Vocabulary,
    pub model: ModelConfig,
    pub provenance: Vec<SourceProvenance>,
}

/// Load or generate the dataset a spec names, before splitting.
pub fn materialize_dataset(spec: &SplitSpec) -> CliResult<Dataset> {
    let base = match (&spec.dataset, &spec.generator) {
        (Some(path), None) => {
            let ds = Dataset::load_tsv(path).map_err(config_err)?;
            // The file's contents under the spec's name.
            Dataset::new(spec.name.clone(), ds.examples).map_err(config_err)?
        }
        (None, Some(_)) => {
            let cfg = MiniScanConfig {
                compound_clauses: spec.compound_clauses,
                max_output_tokens: (spec.max_output_tokens != 0).then_some(spec.max_output_tokens),
                max_examples: (spec.max_examples != 0).then_some(spec.max_examples),
            };
            let ds = generate_mini_scan(&cfg, spec.gen_seed).map_err(config_err)?;
            Dataset::new(spec.name.clone(), ds.examples).map_err(config_err)?
        }
        _ => return Err(CliError::Config(format!("{}: bad data source", spec.name))),
    };
    match &spec.lexicon {
        Some(path) => {
            let lexicon = LexiconTable::load(path).map_err(config_err)?;
            let (variant, _mapping) =
                make_lexical_variant(&base, &lexicon, spec.variant_seed).map_err(config_err)?;
            Ok(variant)
        }
        None => Ok(base),
    }
}

/// Split a spec's dataset, running the divergence search with restarts when
/// asked for an MCD split.
pub fn split_dataset(spec: &SplitSpec, dataset: &Dataset) -> CliResult<SplitPair> {
    let cfg = DivergenceConfig::default();
    match spec.split_kind()? {
        SplitKind::Standard => {
            standard_split(dataset, spec.fraction, spec.split_seed).map_err(config_err)
        }
        SplitKind::Length => length_split(dataset, spec.fraction).map_err(config_err),
        SplitKind::Mcd => {
            let n = dataset.len();
            let train_size = ((spec.fraction * n as f64).round() as usize).clamp(1, n - 1);
            let sizes = (train_size, n - train_size);
            let mut best: Option<SplitPair> = None;
            for restart in 0..spec.mcd_restarts as u64 {
                let pair = mcd_split_search(
                    dataset,
                    DEFAULT_RULE,
                    &cfg,
                    sizes,
                    spec.split_seed + restart,
                    spec.mcd_iterations,
                )
                .map_err(config_err)?;
                let better = match &best {
                    None => true,
                    Some(b) => {
                        pair.metrics.compound_divergence.unwrap_or(0.0)
                            > b.metrics.compound_divergence.unwrap_or(0.0)
                    }
                };
                if better {
                    best = Some(pair);
                }
            }
            Ok(best.expect("mcd_restarts ≥ 1 guarantees a split"))
        }
    }
}

/// Build every dataset the experiment needs. Data preparation is seed-free:
/// all randomness here flows from the per-spec seeds in the config, so each
/// run seed sees identical corpora.
pub fn prepare_data(cfg: &ExperimentConfig) -> CliResult<PreparedData> {
    let mut provenance = Vec::new();
    let mut s_examples = Vec::new();
    let mut s_tilde_examples = Vec::new();
    let use_sources = cfg.experiment.method != Method::None;
    if use_sources {
        for spec in &cfg.source {
            let dataset = materialize_dataset(spec)?;
            let pair = split_dataset(spec, &dataset)?;
            let tag = spec.tag();
            let train = apply_prompt(&pair.train, &tag).map_err(config_err)?;
            let test = apply_prompt(&pair.test, &tag).map_err(config_err)?;
            provenance.push(SourceProvenance {
                name: dataset.name.clone(),
                tag,
                kind: pair.kind,
                train_size: train.len(),
                test_size: test.len(),
                divergence: pair.metrics.compound_divergence,
            });
            s_examples.extend(train.examples);
            s_tilde_examples.extend(test.examples);
        }
    }
    let (s, s_tilde) = if use_sources {
        (
            Some(Dataset::new("source-train", s_examples).map_err(config_err)?),
            Some(Dataset::new("source-test", s_tilde_examples).map_err(config_err)?),
        )
    } else {
        (None, None)
    };

    let target_data = materialize_dataset(&cfg.target)?;
    let target_pair = split_dataset(&cfg.target, &target_data)?;
    let tag = cfg.target.tag();
    let t_full = apply_prompt(&target_pair.train, &tag).map_err(config_err)?;
    let t_test = apply_prompt(&target_pair.test, &tag).map_err(config_err)?;
    let (t, t_dev) = if cfg.finetune.dev_fraction > 0.0 {
        let (dev, rest) = eval::make_validation_holdout(
            &t_full,
            HoldoutSize::Fraction(cfg.finetune.dev_fraction),
            cfg.target.split_seed,
        )
        .map_err(config_err)?;
        (rest, Some(dev))
    } else {
        (t_full, None)
    };

    let mut all: Vec<&Dataset> = vec![&t, &t_test];
    if let Some(d) = &t_dev {
        all.push(d);
    }
    if let Some(d) = &s {
        all.push(d);
    }
    if let Some(d) = &s_tilde {
        all.push(d);
    }
    let vocab = Vocabulary::build(&all);
    let model = cfg.model.resolve(vocab.size())?;
    Ok(PreparedData {
        s,
        s_tilde,
        t,
        t_dev,
        t_test,
        vocab,
        model,
        provenance,
    })
}

/// One training stage's outcome inside a seed run.
#[derive(Clone, Debug)]
pub struct StageRun {
    pub report: StageReport,
    pub seconds: f64,
    /// True when the stage was skipped because its checkpoint already
    /// existed on disk.
    pub resumed: bool,
}

/// Everything one seed produced.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub stages: Vec<StageRun>,
    pub eval: Option<EvalResult>,
    pub eval_seconds: f64,
    pub error: Option<String>,
}

/// The sweep's aggregate: config echo, per-seed outcomes, and accuracy
/// moments over the seeds that finished.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub method: Method,
    pub source_label: String,
    pub target_label: String,
    pub config_echo: String,
    pub outcomes: Vec<SeedOutcome>,
    pub mean_accuracy: Option<f64>,
    pub stddev_accuracy: Option<f64>,
}

impl RunReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.outcomes
            .iter()
            .filter_map(|o| o.eval.as_ref().map(EvalResult::accuracy))
            .collect()
    }
}

fn moments(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (Some(mean), Some(var.sqrt()))
}

fn seed_dir(outdir: &Path, seed: u64) -> PathBuf {
    outdir.join(format!("seed-{seed}"))
}

/// Run one stage with resume-from-checkpoint semantics: load and skip when
/// the checkpoint exists, otherwise run, persist, and write the event log.
fn checkpointed_stage(
    params: &mut ParamStore,
    dir: &Path,
    stage_file: &str,
    run: impl FnOnce(&mut ParamStore) -> duel_core::Result<StageReport>,
) -> duel_core::Result<StageRun> {
    let ckpt = dir.join(format!("{stage_file}.ckpt"));
    if ckpt.is_file() {
        *params = load_checkpoint(&ckpt)?;
        return Ok(StageRun {
            report: StageReport::new(stage_file),
            seconds: 0.0,
            resumed: true,
        });
    }
    let start = Instant::now();
    let report = run(params)?;
    let seconds = start.elapsed().as_secs_f64();
    save_checkpoint(params, &ckpt)?;
    fs::write(dir.join(format!("{stage_file}-events.tsv")), report.to_lines())
        .map_err(|e| duel_core::Error::Checkpoint(format!("event log: {e}")))?;
    Ok(StageRun {
        report,
        seconds,
        resumed: false,
    })
}

/// The per-seed pipeline. Returns the stage runs plus the final evaluation.
fn run_seed(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
) -> duel_core::Result<(Vec<StageRun>, EvalResult, f64)> {
    let dir = seed_dir(&cfg.experiment.outdir, seed);
    fs::create_dir_all(&dir).map_err(|e| duel_core::Error::Checkpoint(format!("{e}")))?;
    let train = cfg
        .training
        .train_config()
        .map_err(|e| duel_core::Error::Usage(e.to_string()))?;
    let mut params = init_model(&data.model, derive_seed(seed, "model-init"))?;
    let mut stages = Vec::new();

    match cfg.experiment.method {
        Method::None => {}
        Method::Merged => {
            let (s, s_tilde) = (
                data.s.as_ref().expect("merged requires sources"),
                data.s_tilde.as_ref().expect("merged requires sources"),
            );
            let steps = cfg.prefinetune.merged_steps;
            stages.push(checkpointed_stage(
                &mut params,
                &dir,
                "prefinetune",
                |p| {
                    merged_prefinetune(p, &data.model, &data.vocab, s, s_tilde, steps, &train, seed)
                },
            )?);
        }
        Method::Duel => {
            let (s, s_tilde) = (
                data.s.as_ref().expect("duel requires sources"),
                data.s_tilde.as_ref().expect("duel requires sources"),
            );
            let duel_cfg = cfg
                .duel
                .duel_config(train)
                .map_err(|e| duel_core::Error::Usage(e.to_string()))?;
            stages.push(checkpointed_stage(
                &mut params,
                &dir,
                "prefinetune",
                |p| duel_prefinetune(p, &data.model, &data.vocab, s, s_tilde, &duel_cfg, seed),
            )?);
        }
    }

    let ft_cfg = cfg
        .finetune
        .finetune_config(train)
        .map_err(|e| duel_core::Error::Usage(e.to_string()))?;
    let reinit = cfg.finetune.reinit_head;
    stages.push(checkpointed_stage(&mut params, &dir, "finetune", |p| {
        finetune(
            p,
            &data.model,
            &data.vocab,
            &data.t,
            data.t_dev.as_ref(),
            &ft_cfg,
            reinit,
            seed,
        )
    })?);

    let start = Instant::now();
    let max_len = train
        .max_decode_len
        .unwrap_or(data.model.max_tgt_len - 1);
    let (result, rows) =
        eval::exact_match_rows(&params, &data.model, &data.vocab, &data.t_test, max_len)?;
    let eval_seconds = start.elapsed().as_secs_f64();
    eval::save_predictions_tsv(&rows, &dir.join("predictions.tsv"))?;
    fs::write(dir.join("eval.tsv"), eval::format_result(&result))
        .map_err(|e| duel_core::Error::Checkpoint(format!("eval summary: {e}")))?;
    Ok((stages, result, eval_seconds))
}

/// Run the whole sweep. Every configured seed ends up in the report, either
/// with an evaluation or with its recorded failure.
pub fn run_experiment(cfg: &ExperimentConfig, config_echo: &str) -> CliResult<RunReport> {
    let data = prepare_data(cfg)?;
    let outdir = &cfg.experiment.outdir;
    fs::create_dir_all(outdir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", outdir.display())))?;
    fs::write(outdir.join("config.toml"), config_echo)
        .map_err(|e| CliError::Runtime(format!("config echo: {e}")))?;
    data.vocab
        .save(&outdir.join("vocab.tsv"))
        .map_err(runtime_err)?;
    crate::config::save_model_sidecar(&data.model, &outdir.join("model.toml"))?;
    // The evaluated test side, already tagged, so `eval` can re-score
    // checkpoints without re-deriving the split.
    data.t_test
        .save_tsv(&outdir.join("target-test.tsv"))
        .map_err(runtime_err)?;

    let mut outcomes = Vec::new();
    for &seed in &cfg.experiment.seeds {
        match run_seed(cfg, &data, seed) {
            Ok((stages, eval, eval_seconds)) => outcomes.push(SeedOutcome {
                seed,
                stages,
                eval: Some(eval),
                eval_seconds,
                error: None,
            }),
            Err(e) => outcomes.push(SeedOutcome {
                seed,
                stages: Vec::new(),
                eval: None,
                eval_seconds: 0.0,
                error: Some(e.to_string()),
            }),
        }
    }

    let accuracies: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.eval.as_ref().map(EvalResult::accuracy))
        .collect();
    let (mean, stddev) = moments(&accuracies);
    let report = RunReport {
        method: cfg.experiment.method,
        source_label: cfg.source_label(),
        target_label: cfg.target_label(),
        config_echo: config_echo.to_string(),
        outcomes,
        mean_accuracy: mean,
        stddev_accuracy: stddev,
    };
    save_report(&report, &outdir.join("report.tsv"))?;
    if report.accuracies().is_empty() {
        return Err(CliError::Runtime(format!(
            "every seed failed; first error: {}",
            report
                .outcomes
                .first()
                .and_then(|o| o.error.clone())
                .unwrap_or_default()
        )));
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10}")).unwrap_or_else(|| "none".to_string())
}

fn parse_opt(s: &str) -> CliResult<Option<f64>> {
    if s == "none" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|e| CliError::Config(format!("bad number `{s}`: {e}")))
}

/// Flat serialization of the sweep summary (the per-stage detail lives in
/// the per-seed event logs next to the checkpoints).
pub fn save_report(report: &RunReport, path: &Path) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(&format!("method\t{}\n", report.method.as_str()));
    out.push_str(&format!("source\t{}\n", report.source_label));
    out.push_str(&format!("target\t{}\n", report.target_label));
    for o in &report.outcomes {
        match (&o.eval, &o.error) {
            (Some(eval), _) => {
                let stage_secs: f64 = o.stages.iter().map(|s| s.seconds).sum();
                out.push_str(&format!(
                    "seed\t{}\tok\t{:.10}\t{}\t{}\t{:.3}\n",
                    o.seed,
                    eval.accuracy(),
                    eval.correct,
                    eval.total,
                    stage_secs + o.eval_seconds,
                ));
            }
            (None, Some(err)) => {
                out.push_str(&format!(
                    "seed\t{}\tfailed\t{}\n",
                    o.seed,
                    err.replace(['\t', '\n'], " ")
                ));
            }
            (None, None) => unreachable!("an outcome has either a result or an error"),
        }
    }
    out.push_str(&format!("mean\t{}\n", fmt_opt(report.mean_accuracy)));
    out.push_str(&format!("stddev\t{}\n", fmt_opt(report.stddev_accuracy)));
    fs::write(path, out).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Reload a `report.tsv`. Only the summary fields round-trip; outcomes come
/// back with accuracy-only evaluations.
pub fn load_report(path: &Path) -> CliResult<RunReport> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut method = None;
    let mut source_label = None;
    let mut target_label = None;
    let mut outcomes = Vec::new();
    let mut mean = None;
    let mut stddev = None;
    for (lineno, line) in text.lines().enumerate() {
        let bad = |msg: &str| {
            CliError::Config(format!("{}:{}: {msg}", path.display(), lineno + 1))
        };
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            ["method", m] => {
                method = Some(match *m {
                    "none" => Method::None,
                    "merged" => Method::Merged,
                    "duel" => Method::Duel,
                    _ => return Err(bad("unknown method")),
                })
            }
            ["source", s] => source_label = Some(s.to_string()),
            ["target", t] => target_label = Some(t.to_string()),
            ["seed", seed, "ok", acc, correct, total, secs] => {
                let mut eval = EvalResult::default();
                eval.correct = correct.parse().map_err(|_| bad("bad correct count"))?;
                eval.total = total.parse().map_err(|_| bad("bad total count"))?;
                let _: f64 = acc.parse().map_err(|_| bad("bad accuracy"))?;
                outcomes.push(SeedOutcome {
                    seed: seed.parse().map_err(|_| bad("bad seed"))?,
                    stages: Vec::new(),
                    eval: Some(eval),
                    eval_seconds: secs.parse().map_err(|_| bad("bad seconds"))?,
                    error: None,
                });
            }
            ["seed", seed, "failed", err @ ..] => outcomes.push(SeedOutcome {
                seed: seed.parse().map_err(|_| bad("bad seed"))?,
                stages: Vec::new(),
                eval: None,
                eval_seconds: 0.0,
                error: Some(err.join(" ")),
            }),
            ["mean", v] => mean = parse_opt(v)?,
            ["stddev", v] => stddev = parse_opt(v)?,
            [""] => {}
            _ => return Err(bad("unrecognized record")),
        }
    }
    Ok(RunReport {
        method: method.ok_or_else(|| CliError::Config("report lacks method".into()))?,
        source_label: source_label.ok_or_else(|| CliError::Config("report lacks source".into()))?,
        target_label: target_label.ok_or_else(|| CliError::Config("report lacks target".into()))?,
        config_echo: String::new(),
        outcomes,
        mean_accuracy: mean,
        stddev_accuracy: stddev,
    })
}

/// Render a method × source table over runs that share a target. Accuracy
/// is in percent; rows for the alternating method show the delta against
/// the joint baseline on the same source in parentheses.
pub fn report_table(reports: &[RunReport]) -> CliResult<String> {
    if reports.is_empty() {
        return Err(CliError::Config("no reports to tabulate".to_string()));
    }
    let target = &reports[0].target_label;
    if let Some(other) = reports.iter().find(|r| &r.target_label != target) {
        return Err(CliError::Config(format!(
            "reports mix targets `{target}` and `{}`",
            other.target_label
        )));
    }
    let pct = |r: &RunReport| r.mean_accuracy.map(|a| a * 100.0);
    let mut rows = Vec::new();
    for r in reports {
        let acc = match pct(r) {
            Some(a) => format!("{a:.1}"),
            None => "failed".to_string(),
        };
        let spread = match r.stddev_accuracy {
            Some(s) => format!(" ± {:.1}", s * 100.0),
            None => String::new(),
        };
        let delta = if r.method == Method::Duel {
            reports
                .iter()
                .find(|m| m.method == Method::Merged && m.source_label == r.source_label)
                .and_then(pct)
                .zip(pct(r))
                .map(|(merged, duel)| format!(" ({:+.1})", duel - merged))
                .unwrap_or_default()
        } else {
            String::new()
        };
        let seeds = r.outcomes.len();
        rows.push((
            r.method.as_str().to_string(),
            r.source_label.clone(),
            format!("{acc}{spread}{delta}"),
            seeds,
        ));
    }
    let mut out = String::new();
    out.push_str(&format!("target: {target}\n"));
    out.push_str(&format!(
        "{:<8}{:<28}{:<24}{}\n",
        "method", "source", "accuracy%", "seeds"
    ));
    for (method, source, acc, seeds) in rows {
        out.push_str(&format!("{method:<8}{source:<28}{acc:<24}{seeds}\n"));
    }
    Ok(out)
}

//! Implementations behind the CLI verbs, kept out of `main` so integration
//! tests can call them directly.

use std::fs;
use std::path::{Path, PathBuf};

use duel_core::data::{
    apply_prompt, generate_mini_scan, make_lexical_variant, Dataset, LexiconTable, MiniScanConfig,
    Vocabulary,
};
use duel_core::eval;
use duel_core::grad::load_checkpoint;
use duel_core::splits::{save_manifest, SplitPair};

use crate::config::{ExperimentConfig, SplitSpec};
use crate::experiment::{self, RunReport};
use crate::{config_err, runtime_err, CliResult};

/// `generate mini-scan`: write the command corpus as TSV.
pub fn generate_mini_scan_cmd(
    out: &Path,
    name: &str,
    compound_clauses: bool,
    max_output_tokens: Option<usize>,
    max_examples: Option<usize>,
    seed: u64,
) -> CliResult<String> {
    let cfg = MiniScanConfig {
        compound_clauses,
        max_output_tokens,
        max_examples,
    };
    let generated = generate_mini_scan(&cfg, seed).map_err(config_err)?;
    let dataset = Dataset::new(name, generated.examples).map_err(config_err)?;
    dataset.save_tsv(out).map_err(runtime_err)?;
    Ok(format!("wrote {} examples to {}", dataset.len(), out.display()))
}

/// `generate variant`: rewrite a dataset through a lexicon.
pub fn generate_variant_cmd(
    dataset: &Path,
    lexicon: &Path,
    out: &Path,
    mapping_out: Option<&Path>,
    seed: u64,
) -> CliResult<String> {
    let base = Dataset::load_tsv(dataset).map_err(config_err)?;
    let table = LexiconTable::load(lexicon).map_err(config_err)?;
    let (variant, mapping) = make_lexical_variant(&base, &table, seed).map_err(runtime_err)?;
    variant.save_tsv(out).map_err(runtime_err)?;
    if let Some(path) = mapping_out {
        let mut text = String::new();
        for (source, replacement) in &mapping {
            text.push_str(&format!("{source}\t{replacement}\n"));
        }
        fs::write(path, text).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
    }
    Ok(format!(
        "wrote {} rewritten examples to {} ({} words mapped)",
        variant.len(),
        out.display(),
        mapping.len()
    ))
}

/// `generate lexicon`: synthesize disjoint pseudo-word alternatives for a
/// `class:source,source;class:...` spec.
pub fn generate_lexicon_cmd(
    spec: &str,
    alternatives: usize,
    out: &Path,
    seed: u64,
) -> CliResult<String> {
    let mut classes: Vec<(&str, Vec<&str>)> = Vec::new();
    for part in spec.split(';').filter(|p| !p.is_empty()) {
        let (class, sources) = part.split_once(':').ok_or_else(|| {
            crate::CliError::Config(format!("lexicon spec part `{part}` is not class:words"))
        })?;
        let words: Vec<&str> = sources.split(',').filter(|w| !w.is_empty()).collect();
        if words.is_empty() {
            return Err(crate::CliError::Config(format!(
                "lexicon spec class `{class}` lists no words"
            )));
        }
        classes.push((class, words));
    }
    let table = duel_core::data::generate_synthetic_lexicon(&classes, alternatives, seed)
        .map_err(config_err)?;
    table.save(out).map_err(runtime_err)?;
    Ok(format!(
        "wrote a lexicon for {} words to {}",
        table.len(),
        out.display()
    ))
}

/// `split`: carve a dataset and persist the manifest (plus optional side
/// TSVs). Returns the human-readable metrics summary.
#[allow(clippy::too_many_arguments)]
pub fn split_cmd(
    dataset_path: &Path,
    name: Option<&str>,
    kind: &str,
    fraction: f64,
    seed: u64,
    iterations: usize,
    restarts: usize,
    manifest_out: &Path,
    train_out: Option<&Path>,
    test_out: Option<&Path>,
) -> CliResult<String> {
    let spec = SplitSpec {
        name: name
            .map(str::to_string)
            .or_else(|| {
                dataset_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
            })
            .unwrap_or_else(|| "dataset".to_string()),
        dataset: Some(dataset_path.to_path_buf()),
        split: kind.to_string(),
        fraction,
        split_seed: seed,
        mcd_iterations: iterations,
        mcd_restarts: restarts,
        ..SplitSpec::default()
    };
    spec.validate("split")?;
    let dataset = experiment::materialize_dataset(&spec)?;
    let pair = experiment::split_dataset(&spec, &dataset)?;
    save_manifest(&pair, manifest_out).map_err(runtime_err)?;
    if let Some(path) = train_out {
        pair.train.save_tsv(path).map_err(runtime_err)?;
    }
    if let Some(path) = test_out {
        pair.test.save_tsv(path).map_err(runtime_err)?;
    }
    Ok(describe_split(&pair))
}

fn describe_split(pair: &SplitPair) -> String {
    let divergence = pair
        .metrics
        .compound_divergence
        .map(|d| format!("{d:.6}"))
        .unwrap_or_else(|| "undefined".to_string());
    format!(
        "kind\t{}\ntrain\t{}\ntest\t{}\ndivergence\t{}\natom_coverage\t{:.6}\nmean_train_input_tokens\t{:.3}\nmean_test_input_tokens\t{:.3}",
        pair.kind.as_str(),
        pair.train.len(),
        pair.test.len(),
        divergence,
        pair.metrics.atom_coverage,
        pair.metrics.mean_train_input_tokens,
        pair.metrics.mean_test_input_tokens,
    )
}

/// `train`: load config (with overrides), run the sweep, return the table.
pub fn train_cmd(config_path: &Path, sets: &[String]) -> CliResult<(RunReport, String)> {
    let (cfg, echo) = ExperimentConfig::load(config_path, sets)?;
    let report = experiment::run_experiment(&cfg, &echo)?;
    let table = experiment::report_table(std::slice::from_ref(&report))?;
    Ok((report, table))
}

/// `eval`: score a persisted checkpoint on a dataset.
#[allow(clippy::too_many_arguments)]
pub fn eval_cmd(
    model_path: &Path,
    vocab_path: &Path,
    checkpoint_path: &Path,
    dataset_path: &Path,
    tag: Option<&str>,
    max_len: Option<usize>,
    predictions_out: Option<&Path>,
) -> CliResult<String> {
    let model = crate::config::load_model_sidecar(model_path)?;
    let vocab = Vocabulary::load(vocab_path).map_err(config_err)?;
    let mut dataset = Dataset::load_tsv(dataset_path).map_err(config_err)?;
    if let Some(tag) = tag {
        dataset = apply_prompt(&dataset, tag).map_err(config_err)?;
    }
    let params = load_checkpoint(checkpoint_path).map_err(config_err)?;
    let max_len = max_len.unwrap_or(model.max_tgt_len - 1);
    let (result, rows) = eval::exact_match_rows(&params, &model, &vocab, &dataset, max_len)
        .map_err(runtime_err)?;
    if let Some(path) = predictions_out {
        eval::save_predictions_tsv(&rows, path).map_err(runtime_err)?;
    }
    Ok(eval::format_result(&result))
}

/// `report`: aggregate several run reports into one table.
pub fn report_cmd(paths: &[PathBuf]) -> CliResult<String> {
    let mut reports = Vec::new();
    for path in paths {
        reports.push(experiment::load_report(path)?);
    }
    experiment::report_table(&reports)
}

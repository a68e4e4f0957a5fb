//! Exact-match sequence accuracy, per-category breakdown, and the
//! validation-holdout protocol for hyperparameter selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::{Dataset, Example, Vocabulary};
use crate::error::{Error, Result};
use crate::grad::ParamStore;
use crate::model::{greedy_decode_batch, ModelConfig, TokenSeq};
use crate::seeding::{derive_seed, rng};

/// Decode in bounded chunks so evaluation memory stays flat regardless of
/// dataset size.
const DECODE_CHUNK: usize = 32;

/// Tag used for examples without a category.
pub const UNTAGGED: &str = "untagged";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CategoryStat {
    pub total: u64,
    pub correct: u64,
}

impl CategoryStat {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Outcome of an exact-match evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalResult {
    pub total: u64,
    pub correct: u64,
    /// Predictions that hit the length cap without emitting EOS; these are
    /// (normally) wrong and worth telling apart from ordinary mistakes.
    pub truncated: u64,
    pub per_category: BTreeMap<String, CategoryStat>,
}

impl EvalResult {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// One prediction, kept for error analysis.
#[derive(Clone, Debug)]
pub struct PredictionRow {
    pub input: String,
    pub reference: String,
    pub prediction: String,
    pub correct: bool,
    pub truncated: bool,
    pub category: Option<String>,
}

/// Greedy-decode every example and score token-sequence equality against
/// the reference output (whitespace-tokenized, EOS stripped by decoding).
pub fn exact_match(
    params: &ParamStore,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    dataset: &Dataset,
    max_len: usize,
) -> Result<EvalResult> {
    Ok(exact_match_rows(params, cfg, vocab, dataset, max_len)?.0)
}

/// Fold one scored example into the running totals.
fn record(result: &mut EvalResult, example: &Example, correct: bool, truncated: bool) {
    result.total += 1;
    result.correct += u64::from(correct);
    result.truncated += u64::from(truncated);
    let tag = example
        .category
        .clone()
        .unwrap_or_else(|| UNTAGGED.to_string());
    let stat = result.per_category.entry(tag).or_default();
    stat.total += 1;
    stat.correct += u64::from(correct);
}

/// [`exact_match`] that also returns per-example rows.
pub fn exact_match_rows(
    params: &ParamStore,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    dataset: &Dataset,
    max_len: usize,
) -> Result<(EvalResult, Vec<PredictionRow>)> {
    let mut result = EvalResult::default();
    let mut rows = Vec::with_capacity(dataset.len());
    for chunk in dataset.examples.chunks(DECODE_CHUNK) {
        let sources: Vec<TokenSeq> = chunk.iter().map(|ex| vocab.tokenize(&ex.input)).collect();
        let decoded = greedy_decode_batch(params, cfg, &sources, max_len)?;
        for (ex, dec) in chunk.iter().zip(decoded) {
            let reference = vocab.tokenize(&ex.output);
            let correct = dec.tokens == reference;
            record(&mut result, ex, correct, dec.truncated);
            rows.push(PredictionRow {
                input: ex.input.clone(),
                reference: ex.output.clone(),
                prediction: vocab.detokenize(&dec.tokens),
                correct,
                truncated: dec.truncated,
                category: ex.category.clone(),
            });
        }
    }
    Ok((result, rows))
}

/// Score ready-made prediction strings against a dataset's references —
/// the same whitespace token-sequence comparison and per-category tally the
/// decoding path applies, without a model. One prediction per example, in
/// dataset order.
pub fn score_predictions(dataset: &Dataset, predictions: &[String]) -> Result<EvalResult> {
    if predictions.len() != dataset.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} examples",
            predictions.len(),
            dataset.len()
        )));
    }
    let mut result = EvalResult::default();
    for (ex, pred) in dataset.examples.iter().zip(predictions) {
        let correct = ex.output_tokens().eq(pred.split_whitespace());
        record(&mut result, ex, correct, false);
    }
    Ok(result)
}

/// Sorted (category, stat) rows; categories with no examples never appear.
pub fn category_breakdown(result: &EvalResult) -> Vec<(String, CategoryStat)> {
    result
        .per_category
        .iter()
        .map(|(k, v)| (k.clone(), *v))
        .collect()
}

/// Render an [`EvalResult`] as a small text report.
pub fn format_result(result: &EvalResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "overall\t{}/{}\t{:.4}",
        result.correct,
        result.total,
        result.accuracy()
    );
    let _ = writeln!(out, "truncated\t{}", result.truncated);
    for (tag, stat) in category_breakdown(result) {
        let _ = writeln!(
            out,
            "category\t{tag}\t{}/{}\t{:.4}",
            stat.correct,
            stat.total,
            stat.accuracy()
        );
    }
    out
}

/// Write per-example predictions as TSV for error analysis.
pub fn save_predictions_tsv(rows: &[PredictionRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.input,
            r.reference,
            r.prediction,
            if r.correct { 1 } else { 0 },
            r.category.as_deref().unwrap_or(UNTAGGED),
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Requested holdout size: a fraction of the dataset or an absolute count.
#[derive(Clone, Copy, Debug)]
pub enum HoldoutSize {
    Fraction(f64),
    Count(usize),
}

/// Split off a seeded random validation holdout from `s_tilde`, returning
/// `(holdout, remainder)`. Hyperparameter selection evaluates on the
/// holdout so the remainder stays untouched until final testing.
pub fn make_validation_holdout(
    s_tilde: &Dataset,
    size: HoldoutSize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let n = s_tilde.len();
    let k = match size {
        HoldoutSize::Fraction(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Usage(format!(
                    "holdout fraction {f} must lie strictly inside (0, 1)"
                )));
            }
            ((n as f64 * f).round() as usize).max(1)
        }
        HoldoutSize::Count(c) => c,
    };
    if k == 0 || k >= n {
        return Err(Error::Input(format!(
            "holdout of {k} examples impossible from {n}"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng(derive_seed(seed, "validation-holdout")));
    let (hold, rest) = indices.split_at(k);
    let pick = |idx: &[usize], suffix: &str| -> Result<Dataset> {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        Dataset::new(
            format!("{}-{suffix}", s_tilde.name),
            idx.iter().map(|&i| s_tilde.examples[i].clone()).collect(),
        )
    };
    Ok((pick(hold, "holdout")?, pick(rest, "rest")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;

    fn toy_dataset() -> Dataset {
        Dataset::new(
            "toy",
            (0..10)
                .map(|i| {
                    let cat = match i % 3 {
                        0 => Some("lexical".to_string()),
                        1 => Some("structural".to_string()),
                        _ => None,
                    };
                    Example::new(format!("in{i}"), format!("out{i}"), cat).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn category_totals_sum_and_weighted_mean_matches_overall() {
        // Synthetic result with three categories.
        let mut result = EvalResult::default();
        for (tag, total, correct) in
            [("lexical", 18_000u64, 9_000u64), ("structural", 3_000, 600), ("untagged", 10, 10)]
        {
            result.per_category.insert(
                tag.to_string(),
                CategoryStat { total, correct },
            );
            result.total += total;
            result.correct += correct;
        }
        assert_eq!(result.per_category["lexical"].total, 18_000);
        assert_eq!(result.per_category["structural"].total, 3_000);
        let weighted: f64 = result
            .per_category
            .values()
            .map(|s| s.accuracy() * s.total as f64)
            .sum::<f64>()
            / result.total as f64;
        assert!((weighted - result.accuracy()).abs() < 1e-9);
    }

    #[test]
    fn scoring_references_against_themselves_is_perfect() {
        let data = toy_dataset();
        let echo: Vec<String> = data.examples.iter().map(|e| e.output.clone()).collect();
        let result = score_predictions(&data, &echo).unwrap();
        assert_eq!((result.total, result.correct), (10, 10));
        assert_eq!(result.accuracy(), 1.0);
        for stat in result.per_category.values() {
            assert_eq!(stat.accuracy(), 1.0);
        }
    }

    #[test]
    fn scoring_counts_mistakes_per_category_and_ignores_spacing() {
        let data = toy_dataset();
        let mut preds: Vec<String> = data.examples.iter().map(|e| e.output.clone()).collect();
        preds[0] = "wrong".to_string(); // lexical (i = 0)
        preds[1] = format!("  {}  ", preds[1]); // structural, spacing only
        let result = score_predictions(&data, &preds).unwrap();
        assert_eq!((result.total, result.correct), (10, 9));
        assert_eq!(result.per_category["lexical"].correct, 3);
        assert_eq!(result.per_category["lexical"].total, 4);
        assert_eq!(result.per_category["structural"].correct, 3);

        let weighted: f64 = result
            .per_category
            .values()
            .map(|s| s.accuracy() * s.total as f64)
            .sum::<f64>()
            / result.total as f64;
        assert!((weighted - result.accuracy()).abs() < 1e-9);
    }

    #[test]
    fn scoring_rejects_mismatched_lengths() {
        let data = toy_dataset();
        assert!(score_predictions(&data, &["x".to_string()]).is_err());
    }

    #[test]
    fn holdout_partitions_at_fraction_and_count() {
        let data = Dataset::new(
            "s",
            (0..1000)
                .map(|i| Example::new(format!("i{i}"), format!("o{i}"), None).unwrap())
                .collect(),
        )
        .unwrap();
        let (hold, rest) = make_validation_holdout(&data, HoldoutSize::Fraction(0.2), 3).unwrap();
        assert_eq!(hold.len(), 200);
        assert_eq!(rest.len(), 800);

        let (hold, rest) = make_validation_holdout(&data, HoldoutSize::Count(300), 3).unwrap();
        assert_eq!((hold.len(), rest.len()), (300, 700));

        // Disjoint and exhaustive.
        let mut inputs: Vec<&str> = hold
            .examples
            .iter()
            .chain(rest.examples.iter())
            .map(|e| e.input.as_str())
            .collect();
        inputs.sort_unstable();
        inputs.dedup();
        assert_eq!(inputs.len(), 1000);

        // Determinism and oversize rejection.
        let (h2, _) = make_validation_holdout(&data, HoldoutSize::Count(300), 3).unwrap();
        assert_eq!(h2.examples, hold.examples);
        assert!(make_validation_holdout(&data, HoldoutSize::Count(1000), 3).is_err());
        assert!(make_validation_holdout(&data, HoldoutSize::Fraction(1.2), 3).is_err());
    }

    #[test]
    fn breakdown_groups_untagged_and_formats() {
        let ds = toy_dataset();
        // Build a result by hand from the dataset's tags (no model needed).
        let mut result = EvalResult::default();
        for ex in &ds.examples {
            let tag = ex.category.clone().unwrap_or_else(|| UNTAGGED.to_string());
            let stat = result.per_category.entry(tag).or_default();
            stat.total += 1;
            stat.correct += 1;
            result.total += 1;
            result.correct += 1;
        }
        let rows = category_breakdown(&result);
        let tags: Vec<&str> = rows.iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(tags, ["lexical", "structural", UNTAGGED]);
        assert_eq!(result.accuracy(), 1.0);
        let text = format_result(&result);
        assert!(text.contains("overall\t10/10\t1.0000"));
        assert!(text.contains("category\tuntagged"));
    }
}

//! Lexicon tables and global one-to-one token-substitution variants.
//!
//! A variant dataset replaces each mapped content word with one alternative
//! everywhere it occurs — in inputs directly, and in outputs via
//! case-insensitive stem matching with case restoration (so `walk → blick`
//! also rewrites the action token `WALK → BLICK`). Structure, function
//! words, and example order are untouched.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng};

use super::{Dataset, Example};

/// Per-class map from source token to its candidate replacements.
///
/// Invariant: no alternative collides with any source token, so original
/// and variant content vocabularies are disjoint by construction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LexiconTable {
    classes: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl LexiconTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        class: &str,
        source: &str,
        alternatives: Vec<String>,
    ) -> Result<()> {
        if alternatives.is_empty() {
            return Err(Error::Input(format!(
                "lexicon entry `{source}` needs at least one alternative"
            )));
        }
        self.classes
            .entry(class.to_string())
            .or_default()
            .insert(source.to_string(), alternatives);
        self.check_disjoint()
    }

    fn check_disjoint(&self) -> Result<()> {
        let sources: HashSet<&str> = self.sources().collect();
        for entries in self.classes.values() {
            for (source, alts) in entries {
                for alt in alts {
                    if sources.contains(alt.as_str()) {
                        return Err(Error::Input(format!(
                            "alternative `{alt}` (for `{source}`) collides with a mapped source token"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// All mapped source tokens across classes.
    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.classes
            .values()
            .flat_map(|m| m.keys().map(String::as_str))
    }

    pub fn is_empty(&self) -> bool {
        self.classes.values().all(BTreeMap::is_empty)
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(BTreeMap::len).sum()
    }

    /// Read lines of `class<TAB>source<TAB>alt1,alt2,...`.
    pub fn load(path: &Path) -> Result<LexiconTable> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = LexiconTable::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let malformed = |msg: String| Error::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [class, source, alts] = fields.as_slice() else {
                return Err(malformed(format!(
                    "{} fields, expected class<TAB>source<TAB>alternatives",
                    fields.len()
                )));
            };
            let alternatives: Vec<String> = alts
                .split(',')
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(str::to_string)
                .collect();
            table
                .insert(class, source, alternatives)
                .map_err(|e| malformed(e.to_string()))?;
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (class, entries) in &self.classes {
            for (source, alts) in entries {
                let _ = writeln!(out, "{class}\t{source}\t{}", alts.join(","));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Restore `original`'s casing pattern onto `replacement`: all-caps stays
/// all-caps, leading capital stays capitalized, else lowercase as stored.
fn case_adapt(replacement: &str, original: &str) -> String {
    let letters: Vec<char> = original.chars().filter(|c| c.is_alphabetic()).collect();
    if !letters.is_empty() && letters.iter().all(|c| c.is_uppercase()) {
        return replacement.to_uppercase();
    }
    if original.chars().next().is_some_and(char::is_uppercase) {
        let mut chars = replacement.chars();
        return match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
    }
    replacement.to_string()
}

fn rewrite_text(text: &str, mapping: &BTreeMap<String, String>) -> String {
    let words: Vec<String> = text
        .split_whitespace()
        .map(|tok| {
            if let Some(rep) = mapping.get(tok) {
                return rep.clone();
            }
            let lower = tok.to_lowercase();
            if let Some(rep) = mapping.get(&lower) {
                return case_adapt(rep, tok);
            }
            tok.to_string()
        })
        .collect();
    words.join(" ")
}

/// Apply a seeded global 1-to-1 substitution drawn from `lexicon` to every
/// example, inputs and outputs alike. Returns the variant dataset and the
/// chosen replacement map for audit. Collisions between chosen alternatives
/// fall through to the next candidate; running out is an error.
pub fn make_lexical_variant(
    dataset: &Dataset,
    lexicon: &LexiconTable,
    seed: u64,
) -> Result<(Dataset, BTreeMap<String, String>)> {
    lexicon.check_disjoint()?;
    let mut chooser = rng(derive_seed(seed, "lexical-variant"));
    let mut mapping = BTreeMap::new();
    let mut used: HashSet<&str> = HashSet::new();
    for entries in lexicon.classes.values() {
        for (source, alts) in entries {
            let start = chooser.gen_range(0..alts.len());
            let choice = (0..alts.len())
                .map(|k| &alts[(start + k) % alts.len()])
                .find(|alt| !used.contains(alt.as_str()))
                .ok_or_else(|| Error::LexiconExhausted(source.clone()))?;
            used.insert(choice);
            mapping.insert(source.clone(), choice.clone());
        }
    }
    let examples = dataset
        .examples
        .iter()
        .map(|ex| Example {
            input: rewrite_text(&ex.input, &mapping),
            output: rewrite_text(&ex.output, &mapping),
            category: ex.category.clone(),
        })
        .collect();
    let variant = Dataset::new(format!("{}-variant", dataset.name), examples)?;
    Ok((variant, mapping))
}

const ONSETS: [&str; 12] = [
    "b", "d", "fl", "g", "kr", "l", "m", "n", "pl", "sn", "tr", "v",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["ck", "m", "p", "rn", "st", "x"];

/// Fabricate a lexicon of pronounceable pseudo-words for the given
/// (class, source tokens) groups — guaranteed disjoint from every source
/// and from each other. Stands in for thesaurus-backed alternatives so the
/// pipeline needs no external lexical resources.
pub fn generate_synthetic_lexicon(
    classes: &[(&str, Vec<&str>)],
    alternatives_per_source: usize,
    seed: u64,
) -> Result<LexiconTable> {
    if alternatives_per_source == 0 {
        return Err(Error::Input(
            "need at least one alternative per source".to_string(),
        ));
    }
    let mut taken: HashSet<String> = classes
        .iter()
        .flat_map(|(_, sources)| sources.iter().map(|s| s.to_lowercase()))
        .collect();
    let mut word_rng = rng(derive_seed(seed, "synthetic-lexicon"));
    let mut table = LexiconTable::new();
    for (class, sources) in classes {
        for source in sources {
            let mut alts = Vec::with_capacity(alternatives_per_source);
            for _ in 0..alternatives_per_source {
                let mut attempts = 0;
                let word = loop {
                    let w = format!(
                        "{}{}{}{}{}",
                        ONSETS[word_rng.gen_range(0..ONSETS.len())],
                        VOWELS[word_rng.gen_range(0..VOWELS.len())],
                        ONSETS[word_rng.gen_range(0..ONSETS.len())],
                        VOWELS[word_rng.gen_range(0..VOWELS.len())],
                        CODAS[word_rng.gen_range(0..CODAS.len())],
                    );
                    if !taken.contains(&w) {
                        break w;
                    }
                    attempts += 1;
                    if attempts > 10_000 {
                        return Err(Error::LexiconExhausted(source.to_string()));
                    }
                };
                taken.insert(word.clone());
                alts.push(word);
            }
            table.insert(class, source, alts)?;
        }
    }
    Ok(table)
}

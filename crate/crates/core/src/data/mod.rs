//! Datasets, vocabulary, task prompts, and the corpus generators: a
//! SCAN-style command grammar and lexicon-variant rewriting.

mod lexicon;
mod scan;

pub use lexicon::{generate_synthetic_lexicon, make_lexical_variant, LexiconTable};
pub use scan::{enumerate_scan_commands, generate_mini_scan, interpret_scan, MiniScanConfig};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::TokenSeq;

/// Reserved vocabulary ids, fixed across every corpus.
pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

/// Rendered forms of the reserved ids (position = id).
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// One input/output pair, optionally tagged with a category such as
/// "lexical" or "structural".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub input: String,
    pub output: String,
    pub category: Option<String>,
}

impl Example {
    /// Build an example, rejecting blank sides. Fields are stored trimmed;
    /// tokens are whitespace-separated.
    pub fn new(
        input: impl Into<String>,
        output: impl Into<String>,
        category: Option<String>,
    ) -> Result<Self> {
        let input = input.into().trim().to_string();
        let output = output.into().trim().to_string();
        if input.is_empty() || output.is_empty() {
            return Err(Error::Input(
                "example input and output must be nonempty".to_string(),
            ));
        }
        Ok(Example {
            input,
            output,
            category: category.map(|c| c.trim().to_string()).filter(|c| !c.is_empty()),
        })
    }

    pub fn input_tokens(&self) -> impl Iterator<Item = &str> {
        self.input.split_whitespace()
    }

    pub fn output_tokens(&self) -> impl Iterator<Item = &str> {
        self.output.split_whitespace()
    }
}

/// An ordered, named collection of examples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Input("dataset name must be nonempty".to_string()));
        }
        Ok(Dataset { name, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Read a `input<TAB>output[<TAB>category]` file; one example per line,
    /// order preserved, dataset named after the file stem.
    pub fn load_tsv(path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string());
        let mut examples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let malformed = |msg: &str| Error::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let example = match fields.as_slice() {
                [input, output] => Example::new(*input, *output, None),
                [input, output, category] => {
                    Example::new(*input, *output, Some((*category).to_string()))
                }
                _ => return Err(malformed(&format!("{} fields, expected 2 or 3", fields.len()))),
            };
            examples.push(example.map_err(|e| malformed(&e.to_string()))?);
        }
        if examples.is_empty() {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                line: 0,
                msg: "no examples".to_string(),
            });
        }
        Dataset::new(name, examples)
    }

    /// Write the TSV form read back by [`Dataset::load_tsv`].
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for ex in &self.examples {
            match &ex.category {
                Some(c) => {
                    let _ = writeln!(out, "{}\t{}\t{}", ex.input, ex.output, c);
                }
                None => {
                    let _ = writeln!(out, "{}\t{}", ex.input, ex.output);
                }
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Prefix every input with a task tag: `"<tag>: <input>"`. Applying twice
/// stacks prefixes — idempotence is the caller's concern.
pub fn apply_prompt(dataset: &Dataset, tag: &str) -> Result<Dataset> {
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        return Err(Error::Input(format!(
            "task tag `{tag}` must be nonempty and whitespace-free"
        )));
    }
    let examples = dataset
        .examples
        .iter()
        .map(|ex| Example {
            input: format!("{tag}: {}", ex.input),
            output: ex.output.clone(),
            category: ex.category.clone(),
        })
        .collect();
    Dataset::new(dataset.name.clone(), examples)
}

/// Token → id map with the four reserved ids up front. Non-reserved ids are
/// assigned in first-seen order, which makes construction deterministic and
/// serialization stable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Collect every whitespace token of every dataset, inputs then outputs,
    /// example by example.
    pub fn build(datasets: &[&Dataset]) -> Vocabulary {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for ds in datasets {
            for ex in &ds.examples {
                for tok in ex.input_tokens().chain(ex.output_tokens()) {
                    v.intern(tok);
                }
            }
        }
        v
    }

    fn intern(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            let id = RESERVED_TOKENS.len() as u32 + self.tokens.len() as u32;
            self.tokens.push(token.to_string());
            self.index.insert(token.to_string(), id);
        }
    }

    /// Total id count including the reserved block.
    pub fn size(&self) -> usize {
        RESERVED_TOKENS.len() + self.tokens.len()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        let id = id as usize;
        if id < RESERVED_TOKENS.len() {
            Some(RESERVED_TOKENS[id])
        } else {
            self.tokens.get(id - RESERVED_TOKENS.len()).map(String::as_str)
        }
    }

    /// Whitespace-tokenize; unknown tokens map to UNK.
    pub fn tokenize(&self, text: &str) -> TokenSeq {
        TokenSeq::new(
            text.split_whitespace()
                .map(|t| self.id_of(t).unwrap_or(UNK_ID))
                .collect(),
        )
    }

    /// Render ids back to text. PAD/BOS/EOS are dropped; UNK renders as its
    /// reserved form (and so never exact-matches a real reference).
    pub fn detokenize(&self, seq: &TokenSeq) -> String {
        let words: Vec<&str> = seq
            .ids
            .iter()
            .filter(|&&id| id != PAD_ID && id != BOS_ID && id != EOS_ID)
            .filter_map(|&id| self.token_of(id))
            .collect();
        words.join(" ")
    }

    /// One non-reserved token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for tok in &self.tokens {
            let _ = writeln!(out, "{tok}");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for line in text.lines() {
            if !line.is_empty() {
                v.intern(line);
            }
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("duel-data-test");
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn tsv_round_trips_and_reports_malformed_lines() {
        let path = tmpdir().join("pairs.tsv");
        fs::write(&path, "jump twice\tJUMP JUMP\nlook\tLOOK\tsingle\n").unwrap();
        let ds = Dataset::load_tsv(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.examples[0].input, "jump twice");
        assert_eq!(ds.examples[0].output, "JUMP JUMP");
        assert_eq!(ds.examples[0].category, None);
        assert_eq!(ds.examples[1].category.as_deref(), Some("single"));

        let back = tmpdir().join("pairs-back.tsv");
        ds.save_tsv(&back).unwrap();
        assert_eq!(Dataset::load_tsv(&back).unwrap().examples, ds.examples);

        let bad = tmpdir().join("bad.tsv");
        fs::write(&bad, "only one field\n").unwrap();
        let err = Dataset::load_tsv(&bad).unwrap_err().to_string();
        assert!(err.contains("bad.tsv:1:"), "{err}");

        let empty = tmpdir().join("empty.tsv");
        fs::write(&empty, "").unwrap();
        assert!(Dataset::load_tsv(&empty).is_err());
    }

    #[test]
    fn prompt_prefixes_inputs_only() {
        let ds = Dataset::new(
            "scan",
            vec![Example::new("run around right after look opposite left", "X", None).unwrap()],
        )
        .unwrap();
        let tagged = apply_prompt(&ds, "scan").unwrap();
        assert_eq!(
            tagged.examples[0].input,
            "scan: run around right after look opposite left"
        );
        assert_eq!(tagged.examples[0].output, "X");
        // Stacked application doubles the prefix by contract.
        let twice = apply_prompt(&tagged, "scan").unwrap();
        assert_eq!(
            twice.examples[0].input,
            "scan: scan: run around right after look opposite left"
        );
        assert!(apply_prompt(&ds, "two words").is_err());
    }

    #[test]
    fn vocabulary_reserves_low_ids_and_round_trips() {
        let ds = Dataset::new(
            "toy",
            vec![Example::new("jump twice", "JUMP JUMP", None).unwrap()],
        )
        .unwrap();
        let vocab = Vocabulary::build(&[&ds]);
        assert_eq!(vocab.size(), 4 + 3); // jump, twice, JUMP
        assert_eq!(vocab.id_of("jump"), Some(4));
        assert_eq!(vocab.id_of("nope"), None);

        let seq = vocab.tokenize("jump twice nope");
        assert_eq!(seq.ids, vec![4, 5, UNK_ID]);
        assert_eq!(vocab.detokenize(&vocab.tokenize("jump twice")), "jump twice");

        let path = tmpdir().join("vocab.txt");
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded, vocab);
    }
}

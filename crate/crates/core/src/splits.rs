//! Train/test split construction: standard random splits, length splits,
//! and maximum-compound-divergence (MCD) splits.
//!
//! Compositional difficulty is measured over *compound* distributions:
//! with F_C(·) the normalized compound frequencies of a set, the divergence
//! between a train set V and test set W is
//!
//! ```text
//! D_C(V‖W) = 1 − C_α(F_C(V) ‖ F_C(W)),   C_α(P‖Q) = Σ_k p_k^α · q_k^(1−α)
//! ```
//!
//! with α = 0.1 by default, so a compound common in test but rare in train
//! drives the divergence up. An MCD split hill-climbs example swaps to
//! maximize this quantity while keeping every test atom covered by train.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng};

/// How atoms and compounds are read off an output string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompoundRule {
    /// Parse the output as a bracketed function term; atoms are the symbol
    /// occurrences, compounds the parent→child edges of the tree. When the
    /// output does not parse and `bigram_fallback` is set, that example is
    /// profiled with [`CompoundRule::Bigram`] instead; otherwise the profile
    /// is an error.
    BracketTree { bigram_fallback: bool },
    /// Flat outputs: atoms are whitespace tokens, compounds adjacent-token
    /// bigrams.
    Bigram,
}

/// Parameters of the divergence formula.
#[derive(Clone, Copy, Debug)]
pub struct DivergenceConfig {
    /// Chernoff exponent α, strictly inside (0, 1).
    pub chernoff_alpha: f64,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        DivergenceConfig { chernoff_alpha: 0.1 }
    }
}

impl DivergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.chernoff_alpha > 0.0 && self.chernoff_alpha < 1.0) {
            return Err(Error::Usage(format!(
                "chernoff_alpha {} must lie strictly inside (0, 1)",
                self.chernoff_alpha
            )));
        }
        Ok(())
    }
}

/// Atom and compound occurrence counts for a set of examples.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CompoundProfile {
    pub atoms: BTreeMap<String, u64>,
    pub compounds: BTreeMap<String, u64>,
}

fn normalize(counts: &BTreeMap<String, u64>) -> BTreeMap<String, f64> {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return BTreeMap::new();
    }
    counts
        .iter()
        .map(|(k, &c)| (k.clone(), c as f64 / total as f64))
        .collect()
}

impl CompoundProfile {
    /// Normalized atom frequencies (empty map when no atoms).
    pub fn atom_frequencies(&self) -> BTreeMap<String, f64> {
        normalize(&self.atoms)
    }

    /// Normalized compound frequencies (empty map when no compounds).
    pub fn compound_frequencies(&self) -> BTreeMap<String, f64> {
        normalize(&self.compounds)
    }

    fn merge(&mut self, other: &CompoundProfile) {
        for (k, c) in &other.atoms {
            *self.atoms.entry(k.clone()).or_insert(0) += c;
        }
        for (k, c) in &other.compounds {
            *self.compounds.entry(k.clone()).or_insert(0) += c;
        }
    }
}

// ── bracket-term parsing ─────────────────────────────────────────────────

/// One node of a bracketed function term, e.g. `f(a, g(b))`.
struct Term {
    symbol: String,
    args: Vec<Term>,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(|c: char| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn symbol(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == '(' || c == ')' || c == ',' || c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
        (self.pos > start).then(|| self.src[start..self.pos].to_string())
    }

    fn term(&mut self) -> Option<Term> {
        let symbol = self.symbol()?;
        let mut args = Vec::new();
        self.skip_ws();
        if self.peek() == Some('(') {
            self.pos += 1;
            loop {
                args.push(self.term()?);
                self.skip_ws();
                match self.peek() {
                    Some(',') => self.pos += 1,
                    Some(')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return None,
                }
            }
        }
        Some(Term { symbol, args })
    }
}

/// Parse a whole output string as a single bracketed term.
fn parse_bracket_term(output: &str) -> Option<Term> {
    let mut p = Parser::new(output);
    let t = p.term()?;
    p.skip_ws();
    (p.pos == p.src.len()).then_some(t)
}

fn profile_term(term: &Term, profile: &mut CompoundProfile) {
    *profile.atoms.entry(term.symbol.clone()).or_insert(0) += 1;
    for arg in &term.args {
        let edge = format!("{}→{}", term.symbol, arg.symbol);
        *profile.compounds.entry(edge).or_insert(0) += 1;
        profile_term(arg, profile);
    }
}

fn profile_bigrams(output: &str, profile: &mut CompoundProfile) {
    let tokens: Vec<&str> = output.split_whitespace().collect();
    for t in &tokens {
        *profile.atoms.entry(t.to_string()).or_insert(0) += 1;
    }
    for pair in tokens.windows(2) {
        let edge = format!("{}→{}", pair[0], pair[1]);
        *profile.compounds.entry(edge).or_insert(0) += 1;
    }
}

/// Profile a single example's output under `rule`.
fn example_profile(example: &Example, rule: CompoundRule) -> Result<CompoundProfile> {
    let mut profile = CompoundProfile::default();
    match rule {
        CompoundRule::Bigram => profile_bigrams(&example.output, &mut profile),
        CompoundRule::BracketTree { bigram_fallback } => {
            match parse_bracket_term(&example.output) {
                Some(term) => profile_term(&term, &mut profile),
                None if bigram_fallback => profile_bigrams(&example.output, &mut profile),
                None => {
                    return Err(Error::Input(format!(
                        "output does not parse as a bracketed term: `{}`",
                        example.output
                    )))
                }
            }
        }
    }
    Ok(profile)
}

/// Aggregate atom/compound occurrence counts over a whole dataset.
pub fn extract_profile(dataset: &Dataset, rule: CompoundRule) -> Result<CompoundProfile> {
    let mut profile = CompoundProfile::default();
    for ex in &dataset.examples {
        profile.merge(&example_profile(ex, rule)?);
    }
    Ok(profile)
}

// ── divergence ───────────────────────────────────────────────────────────

fn check_normalized(name: &str, p: &BTreeMap<String, f64>) -> Result<()> {
    let sum: f64 = p.values().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!(
            "{name} frequencies sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Chernoff coefficient C_α(P‖Q) = Σ_k p_k^α q_k^(1−α) over the common
/// support. Both maps must be normalized to 1 within 1e-6.
pub fn chernoff_coefficient(
    p: &BTreeMap<String, f64>,
    q: &BTreeMap<String, f64>,
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Usage(format!(
            "alpha {alpha} must lie strictly inside (0, 1)"
        )));
    }
    check_normalized("P", p)?;
    check_normalized("Q", q)?;
    let mut c = 0.0;
    for (k, &pk) in p {
        if let Some(&qk) = q.get(k) {
            c += pk.powf(alpha) * qk.powf(1.0 - alpha);
        }
    }
    Ok(c.clamp(0.0, 1.0))
}

/// Compound divergence D_C(train‖test) = 1 − C_α over compound frequencies.
pub fn compound_divergence(
    train: &CompoundProfile,
    test: &CompoundProfile,
    cfg: &DivergenceConfig,
) -> Result<f64> {
    cfg.validate()?;
    if train.compounds.is_empty() || test.compounds.is_empty() {
        return Err(Error::Input(
            "compound divergence undefined: a side has no compounds".to_string(),
        ));
    }
    let c = chernoff_coefficient(
        &train.compound_frequencies(),
        &test.compound_frequencies(),
        cfg.chernoff_alpha,
    )?;
    Ok(1.0 - c)
}

// ── split pairs ──────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Standard,
    Length,
    Mcd,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Standard => "standard",
            SplitKind::Length => "length",
            SplitKind::Mcd => "mcd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(SplitKind::Standard),
            "length" => Ok(SplitKind::Length),
            "mcd" => Ok(SplitKind::Mcd),
            other => Err(Error::Input(format!("unknown split kind `{other}`"))),
        }
    }
}

/// Quality measurements of a finished split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitMetrics {
    /// Achieved compound divergence; `None` when undefined (a side without
    /// compounds).
    pub compound_divergence: Option<f64>,
    /// Fraction of test atom types that also occur in train (1.0 = full
    /// coverage).
    pub atom_coverage: f64,
    pub mean_train_input_tokens: f64,
    pub mean_test_input_tokens: f64,
}

/// A finished two-way split of a source dataset.
#[derive(Clone, Debug)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub kind: SplitKind,
    /// Seed the split was built with, when randomness was involved.
    pub seed: Option<u64>,
    pub metrics: SplitMetrics,
    /// Indices into the source dataset, ascending.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Divergence after each accepted swap (MCD search only), strictly
    /// increasing by construction.
    pub divergence_trace: Vec<f64>,
}

fn mean_input_tokens(examples: &[&Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let total: usize = examples.iter().map(|e| e.input_tokens().count()).sum();
    total as f64 / examples.len() as f64
}

/// Measure a (train, test) pair: divergence under `rule` (when defined),
/// test-atom coverage, and mean input lengths.
pub fn compute_metrics(
    train: &Dataset,
    test: &Dataset,
    rule: CompoundRule,
    cfg: &DivergenceConfig,
) -> Result<SplitMetrics> {
    cfg.validate()?;
    let train_profile = extract_profile(train, rule)?;
    let test_profile = extract_profile(test, rule)?;
    let divergence = compound_divergence(&train_profile, &test_profile, cfg).ok();
    let test_atoms: BTreeSet<&str> = test_profile.atoms.keys().map(String::as_str).collect();
    let covered = test_atoms
        .iter()
        .filter(|a| train_profile.atoms.contains_key(**a))
        .count();
    let atom_coverage = if test_atoms.is_empty() {
        1.0
    } else {
        covered as f64 / test_atoms.len() as f64
    };
    Ok(SplitMetrics {
        compound_divergence: divergence,
        atom_coverage,
        mean_train_input_tokens: mean_input_tokens(
            &train.examples.iter().collect::<Vec<_>>(),
        ),
        mean_test_input_tokens: mean_input_tokens(&test.examples.iter().collect::<Vec<_>>()),
    })
}

/// The default measurement rule: bracket trees where outputs parse, bigrams
/// where they do not.
pub const DEFAULT_RULE: CompoundRule = CompoundRule::BracketTree { bigram_fallback: true };

fn build_pair(
    source: &Dataset,
    kind: SplitKind,
    seed: Option<u64>,
    mut train_indices: Vec<usize>,
    mut test_indices: Vec<usize>,
    divergence_trace: Vec<f64>,
    rule: CompoundRule,
    cfg: &DivergenceConfig,
) -> Result<SplitPair> {
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    let pick = |indices: &[usize], side: &str| -> Result<Dataset> {
        let examples = indices
            .iter()
            .map(|&i| source.examples[i].clone())
            .collect();
        Dataset::new(format!("{}-{}-{side}", source.name, kind.as_str()), examples)
    };
    let train = pick(&train_indices, "train")?;
    let test = pick(&test_indices, "test")?;
    let metrics = compute_metrics(&train, &test, rule, cfg)?;
    Ok(SplitPair {
        train,
        test,
        kind,
        seed,
        metrics,
        train_indices,
        test_indices,
        divergence_trace,
    })
}

fn split_point(n: usize, train_fraction: f64) -> Result<usize> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Usage(format!(
            "train_fraction {train_fraction} must lie strictly inside (0, 1)"
        )));
    }
    if n < 2 {
        return Err(Error::Input(format!(
            "cannot split {n} example(s) into two nonempty sides"
        )));
    }
    Ok(((n as f64 * train_fraction).round() as usize).clamp(1, n - 1))
}

/// Uniform random partition at the given fraction, seeded.
pub fn standard_split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitPair> {
    let k = split_point(dataset.len(), train_fraction)?;
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    indices.shuffle(&mut rng(derive_seed(seed, "standard-split")));
    let (train, test) = indices.split_at(k);
    build_pair(
        dataset,
        SplitKind::Standard,
        Some(seed),
        train.to_vec(),
        test.to_vec(),
        Vec::new(),
        DEFAULT_RULE,
        &DivergenceConfig::default(),
    )
}

/// Shortest inputs to train, longest to test: sort by input token count,
/// ties by output token count, then by original position.
pub fn length_split(dataset: &Dataset, train_fraction: f64) -> Result<SplitPair> {
    let k = split_point(dataset.len(), train_fraction)?;
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    indices.sort_by_key(|&i| {
        let ex = &dataset.examples[i];
        (ex.input_tokens().count(), ex.output_tokens().count(), i)
    });
    let (train, test) = indices.split_at(k);
    build_pair(
        dataset,
        SplitKind::Length,
        None,
        train.to_vec(),
        test.to_vec(),
        Vec::new(),
        DEFAULT_RULE,
        &DivergenceConfig::default(),
    )
}

// ── MCD search ───────────────────────────────────────────────────────────

/// Occurrence counts of one side during the search.
#[derive(Clone, Default)]
struct SideCounts {
    atoms: BTreeMap<String, i64>,
    compounds: BTreeMap<String, i64>,
    compound_total: i64,
}

impl SideCounts {
    fn add(&mut self, profile: &CompoundProfile, sign: i64) {
        for (k, &c) in &profile.atoms {
            *self.atoms.entry(k.clone()).or_insert(0) += sign * c as i64;
        }
        for (k, &c) in &profile.compounds {
            *self.compounds.entry(k.clone()).or_insert(0) += sign * c as i64;
            self.compound_total += sign * c as i64;
        }
    }

    fn atom_count(&self, atom: &str) -> i64 {
        self.atoms.get(atom).copied().unwrap_or(0)
    }
}

fn divergence_from_counts(train: &SideCounts, test: &SideCounts, alpha: f64) -> Option<f64> {
    if train.compound_total <= 0 || test.compound_total <= 0 {
        return None;
    }
    let (tt, st) = (train.compound_total as f64, test.compound_total as f64);
    let mut c = 0.0;
    for (k, &tc) in &train.compounds {
        if tc <= 0 {
            continue;
        }
        let sc = test.compounds.get(k).copied().unwrap_or(0);
        if sc <= 0 {
            continue;
        }
        c += (tc as f64 / tt).powf(alpha) * (sc as f64 / st).powf(1.0 - alpha);
    }
    Some((1.0 - c).clamp(0.0, 1.0))
}

/// Every atom occurring in test also occurs in train, checked only over
/// `touched` (a swap cannot change coverage of untouched atoms).
fn coverage_ok(train: &SideCounts, test: &SideCounts, touched: &BTreeSet<&str>) -> bool {
    touched
        .iter()
        .all(|a| test.atom_count(a) <= 0 || train.atom_count(a) > 0)
}

/// Greedy hill-climb toward a maximum-compound-divergence split.
///
/// Starts from a seeded random split of the requested sizes (repaired so
/// every atom type has a train occurrence), then proposes `iterations`
/// random train/test example swaps, accepting a swap iff it strictly
/// increases the divergence and preserves atom coverage. `iterations = 0`
/// returns the initial split.
pub fn mcd_split_search(
    dataset: &Dataset,
    rule: CompoundRule,
    cfg: &DivergenceConfig,
    target_sizes: (usize, usize),
    seed: u64,
    iterations: usize,
) -> Result<SplitPair> {
    cfg.validate()?;
    let (train_size, test_size) = target_sizes;
    let n = dataset.len();
    if train_size == 0 || test_size == 0 || train_size + test_size != n {
        return Err(Error::Usage(format!(
            "target sizes {train_size}+{test_size} must be nonzero and sum to {n}"
        )));
    }

    let profiles: Vec<CompoundProfile> = dataset
        .examples
        .iter()
        .map(|ex| example_profile(ex, rule))
        .collect::<Result<_>>()?;

    // Precondition: an atom occurring fewer than twice can never appear on
    // both sides, so the split cannot both test it and cover it.
    let mut atom_totals: BTreeMap<&str, u64> = BTreeMap::new();
    for p in &profiles {
        for (a, &c) in &p.atoms {
            *atom_totals.entry(a).or_insert(0) += c;
        }
    }
    let rare: Vec<String> = atom_totals
        .iter()
        .filter(|(_, &c)| c < 2)
        .map(|(a, _)| a.to_string())
        .collect();
    if !rare.is_empty() {
        return Err(Error::InfeasibleAtoms(rare));
    }

    // Seeded initial split with coverage built in: walk the shuffled order,
    // forcing the first example containing each still-uncovered atom into
    // train, then fill to size.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(derive_seed(seed, "mcd-init")));
    let mut covered: BTreeSet<&str> = BTreeSet::new();
    let mut in_train: Vec<bool> = vec![false; n];
    let mut train_count = 0;
    let mut overflow: Vec<String> = Vec::new();
    for atom in atom_totals.keys() {
        if covered.contains(atom) {
            continue;
        }
        let Some(&idx) = order
            .iter()
            .find(|&&i| !in_train[i] && profiles[i].atoms.contains_key(*atom))
        else {
            overflow.push(atom.to_string());
            continue;
        };
        if train_count == train_size {
            overflow.push(atom.to_string());
            continue;
        }
        in_train[idx] = true;
        train_count += 1;
        covered.extend(profiles[idx].atoms.keys().map(String::as_str));
    }
    if !overflow.is_empty() {
        return Err(Error::InfeasibleAtoms(overflow));
    }
    for &i in &order {
        if train_count == train_size {
            break;
        }
        if !in_train[i] {
            in_train[i] = true;
            train_count += 1;
        }
    }

    let mut train_idx: Vec<usize> = (0..n).filter(|&i| in_train[i]).collect();
    let mut test_idx: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();

    let mut train_counts = SideCounts::default();
    let mut test_counts = SideCounts::default();
    for &i in &train_idx {
        train_counts.add(&profiles[i], 1);
    }
    for &i in &test_idx {
        test_counts.add(&profiles[i], 1);
    }

    let alpha = cfg.chernoff_alpha;
    let mut current = divergence_from_counts(&train_counts, &test_counts, alpha)
        .ok_or_else(|| {
            Error::Input("compound divergence undefined: a side has no compounds".to_string())
        })?;
    let mut trace = Vec::new();

    let mut swap_rng = rng(derive_seed(seed, "mcd-swaps"));
    for _ in 0..iterations {
        if current >= 1.0 {
            break; // already at the maximum
        }
        let pi = swap_rng.gen_range(0..train_idx.len());
        let pj = swap_rng.gen_range(0..test_idx.len());
        let (i, j) = (train_idx[pi], test_idx[pj]);

        train_counts.add(&profiles[i], -1);
        train_counts.add(&profiles[j], 1);
        test_counts.add(&profiles[j], -1);
        test_counts.add(&profiles[i], 1);

        let touched: BTreeSet<&str> = profiles[i]
            .atoms
            .keys()
            .chain(profiles[j].atoms.keys())
            .map(String::as_str)
            .collect();
        let candidate = divergence_from_counts(&train_counts, &test_counts, alpha);
        let accept = coverage_ok(&train_counts, &test_counts, &touched)
            && candidate.is_some_and(|d| d > current);
        if accept {
            current = candidate.expect("checked above");
            trace.push(current);
            train_idx[pi] = j;
            test_idx[pj] = i;
        } else {
            train_counts.add(&profiles[j], -1);
            train_counts.add(&profiles[i], 1);
            test_counts.add(&profiles[i], -1);
            test_counts.add(&profiles[j], 1);
        }
    }

    build_pair(
        dataset,
        SplitKind::Mcd,
        Some(seed),
        train_idx,
        test_idx,
        trace,
        rule,
        cfg,
    )
}

// ── manifests ────────────────────────────────────────────────────────────

fn fmt_indices(indices: &[usize]) -> String {
    indices
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Write a textual manifest sufficient to rebuild the split from its source
/// dataset: kind, seed, metrics, and the example indices of each side.
pub fn save_manifest(pair: &SplitPair, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "kind\t{}", pair.kind.as_str());
    let _ = writeln!(out, "source\t{}", source_name(pair));
    match pair.seed {
        Some(s) => { let _ = writeln!(out, "seed\t{s}"); }
        None => { let _ = writeln!(out, "seed\tnone"); }
    }
    match pair.metrics.compound_divergence {
        Some(d) => { let _ = writeln!(out, "divergence\t{d:.10}"); }
        None => { let _ = writeln!(out, "divergence\tnone"); }
    }
    let _ = writeln!(out, "atom_coverage\t{:.10}", pair.metrics.atom_coverage);
    let _ = writeln!(
        out,
        "mean_train_input_tokens\t{:.10}",
        pair.metrics.mean_train_input_tokens
    );
    let _ = writeln!(
        out,
        "mean_test_input_tokens\t{:.10}",
        pair.metrics.mean_test_input_tokens
    );
    let _ = writeln!(out, "train\t{}", fmt_indices(&pair.train_indices));
    let _ = writeln!(out, "test\t{}", fmt_indices(&pair.test_indices));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// The source dataset name a pair's sides were derived from.
fn source_name(pair: &SplitPair) -> String {
    let suffix = format!("-{}-train", pair.kind.as_str());
    pair.train
        .name
        .strip_suffix(&suffix)
        .unwrap_or(&pair.train.name)
        .to_string()
}

/// Rebuild a split from its manifest and source dataset. The index lists
/// must exactly partition the source.
pub fn load_manifest(path: &Path, source: &Dataset) -> Result<SplitPair> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('\t') else {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected key<TAB>value".to_string(),
            });
        };
        fields.insert(key, value);
    }
    let get = |key: &str| -> Result<&str> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::Input(format!("manifest missing `{key}`")))
    };
    let parse_indices = |s: &str| -> Result<Vec<usize>> {
        s.split(',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Input(format!("bad index `{t}` in manifest")))
            })
            .collect()
    };

    let kind = SplitKind::parse(get("kind")?)?;
    let seed = match get("seed")? {
        "none" => None,
        s => Some(s.parse::<u64>().map_err(|_| {
            Error::Input(format!("bad seed `{s}` in manifest"))
        })?),
    };
    let train_indices = parse_indices(get("train")?)?;
    let test_indices = parse_indices(get("test")?)?;

    let n = source.len();
    let mut seen = vec![false; n];
    for &i in train_indices.iter().chain(test_indices.iter()) {
        if i >= n {
            return Err(Error::Input(format!(
                "manifest index {i} out of range for {n} source examples"
            )));
        }
        if seen[i] {
            return Err(Error::Input(format!("manifest index {i} appears twice")));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Input(
            "manifest does not cover every source example".to_string(),
        ));
    }

    build_pair(
        source,
        kind,
        seed,
        train_indices,
        test_indices,
        Vec::new(),
        DEFAULT_RULE,
        &DivergenceConfig::default(),
    )
}

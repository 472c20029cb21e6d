//! Dialogue ingestion, example assembly, capping/splitting and subset sampling.
//!
//! Real data comes from directories in the public Schema-Guided Dialogue
//! layout; [`generate_synthetic`] produces small corpora with a planted
//! chain of domain similarities for tests and desk-scale experiments.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const INPUT_PREFIX: &str = "classify intent: ";
pub const INPUT_SUFFIX: &str = " intent: ";
pub const SEPARATOR: &str = "</s>";
pub const MAX_INPUT_TOKENS: usize = 512;
pub const DEFAULT_WINDOW: usize = 3;
pub const DEFAULT_CAP: usize = 100;
pub const MIN_DOMAIN_EXAMPLES: usize = 4;

/// Active-intent value SGD uses for frames without an intent.
const NO_INTENT: &str = "NONE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    /// Returns `None` when the text is blank.
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Option<Self> {
        let text = text.into().trim().to_string();
        (!text.is_empty()).then_some(Self { speaker, text })
    }
}

/// A labeled user turn with everything said before it in the dialogue.
///
/// The labeled turn is the last element of `history`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnSequence {
    pub id: String,
    pub domain_id: String,
    pub intent: String,
    pub history: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub example_id: String,
    pub domain_id: String,
    pub input_text: String,
    pub intent_label: String,
    /// Text of the labeled user turn alone.
    pub utterance: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    pub domain_id: String,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Intent labels in first-seen order across train, val and test.
    pub fn labels(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for ex in self.train.iter().chain(&self.val).chain(&self.test) {
            if seen.insert(ex.intent_label.as_str()) {
                out.push(ex.intent_label.clone());
            }
        }
        out
    }

    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSubset {
    pub subset_id: usize,
    pub domain_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_domains: usize,
    pub vocab_per_domain: usize,
    /// Vocabulary overlap between consecutive domains of the planted chain;
    /// `n_domains - 1` entries.
    pub overlap_chain: Vec<f64>,
    pub examples_per_domain: usize,
    pub intents_per_domain: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_domains == 0
            || self.vocab_per_domain == 0
            || self.examples_per_domain == 0
            || self.intents_per_domain == 0
        {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        if self.vocab_per_domain < self.intents_per_domain {
            return Err(Error::Config("vocab_per_domain must be at least intents_per_domain".into()));
        }
        if self.overlap_chain.len() + 1 != self.n_domains {
            return Err(Error::Config(format!(
                "overlap_chain has {} entries, expected {}",
                self.overlap_chain.len(),
                self.n_domains - 1
            )));
        }
        if let Some(bad) = self
            .overlap_chain
            .iter()
            .find(|f| !(0.0..=1.0).contains(*f))
        {
            return Err(Error::Config(format!("overlap fraction {bad} outside [0, 1]")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// SGD ingestion

#[derive(Deserialize)]
struct SgdDialogue {
    dialogue_id: String,
    turns: Vec<SgdTurn>,
}

#[derive(Deserialize)]
struct SgdTurn {
    speaker: String,
    utterance: String,
    #[serde(default)]
    frames: Vec<SgdFrame>,
}

#[derive(Deserialize)]
struct SgdFrame {
    service: String,
    #[serde(default)]
    state: Option<SgdState>,
}

#[derive(Deserialize)]
struct SgdState {
    active_intent: String,
}

#[derive(Debug, Default, Clone)]
pub struct SgdCorpus {
    pub domains: BTreeMap<String, Vec<TurnSequence>>,
    /// Dialogues that carried no intent-bearing user turn.
    pub skipped_dialogues: usize,
    pub warnings: Vec<String>,
}

/// Reads every `*.json` dialogue file in `dir` (sorted by name, `schema.json`
/// excluded) and collects one [`TurnSequence`] per intent-annotated user turn.
pub fn load_sgd(dir: &Path) -> Result<SgdCorpus> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_json = path.extension().is_some_and(|ext| ext == "json");
        let is_schema = path.file_name().is_some_and(|n| n == "schema.json");
        if path.is_file() && is_json && !is_schema {
            files.push(path);
        }
    }
    files.sort();

    let mut corpus = SgdCorpus::default();
    if files.is_empty() {
        let msg = format!("no dialogue files found in {}", dir.display());
        log::warn!("{msg}");
        corpus.warnings.push(msg);
        return Ok(corpus);
    }

    for file in &files {
        let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
        let dialogues: Vec<SgdDialogue> =
            serde_json::from_str(&text).map_err(|e| Error::Ingest {
                path: file.clone(),
                message: e.to_string(),
            })?;
        for dialogue in dialogues {
            let sequences = dialogue_sequences(&dialogue);
            if sequences.is_empty() {
                corpus.skipped_dialogues += 1;
            }
            for seq in sequences {
                corpus
                    .domains
                    .entry(seq.domain_id.clone())
                    .or_default()
                    .push(seq);
            }
        }
    }
    if corpus.skipped_dialogues > 0 {
        let msg = format!(
            "skipped {} dialogues without an intent-bearing user turn",
            corpus.skipped_dialogues
        );
        log::info!("{msg}");
        corpus.warnings.push(msg);
    }
    Ok(corpus)
}

fn dialogue_sequences(dialogue: &SgdDialogue) -> Vec<TurnSequence> {
    let mut history: Vec<Utterance> = Vec::new();
    let mut out = Vec::new();
    for (turn_idx, turn) in dialogue.turns.iter().enumerate() {
        let speaker = if turn.speaker.eq_ignore_ascii_case("user") {
            Speaker::User
        } else {
            Speaker::System
        };
        let Some(utt) = Utterance::new(speaker, turn.utterance.as_str()) else {
            continue;
        };
        history.push(utt);
        if speaker != Speaker::User {
            continue;
        }
        let annotated = turn.frames.iter().find_map(|f| {
            let intent = f.state.as_ref()?.active_intent.as_str();
            (!intent.is_empty() && intent != NO_INTENT).then(|| (f.service.clone(), intent))
        });
        if let Some((service, intent)) = annotated {
            out.push(TurnSequence {
                id: format!("{}/{}", dialogue.dialogue_id, turn_idx),
                domain_id: service,
                intent: intent.to_string(),
                history: history.clone(),
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Example assembly

/// Assembles model inputs from the last `window` utterances of each sequence.
pub fn build_examples(sequences: &[TurnSequence], window: usize) -> Result<Vec<Example>> {
    if window == 0 {
        return Err(Error::InvalidInput("context window must be at least 1".into()));
    }
    Ok(sequences
        .iter()
        .filter_map(|seq| {
            let last = seq.history.last()?;
            let start = seq.history.len().saturating_sub(window);
            let context: Vec<&str> = seq.history[start..].iter().map(|u| u.text.as_str()).collect();
            Some(Example {
                example_id: format!("{}/{}", seq.domain_id, seq.id),
                domain_id: seq.domain_id.clone(),
                input_text: assemble_input(&context),
                intent_label: seq.intent.clone(),
                utterance: last.text.clone(),
            })
        })
        .collect())
}

/// Joins context utterances with the separator token and wraps them in the
/// prompt prefix and suffix. Oldest context tokens are dropped first so the
/// whole input stays within [`MAX_INPUT_TOKENS`] whitespace tokens.
pub fn assemble_input(context: &[&str]) -> String {
    let body = context.join(&format!(" {SEPARATOR} "));
    let fixed = token_count(INPUT_PREFIX) + token_count(INPUT_SUFFIX);
    let budget = MAX_INPUT_TOKENS - fixed;
    let tokens: Vec<&str> = body.split_whitespace().collect();
    let body = if tokens.len() > budget {
        tokens[tokens.len() - budget..].join(" ")
    } else {
        body
    };
    format!("{INPUT_PREFIX}{body}{INPUT_SUFFIX}")
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

// ---------------------------------------------------------------------------
// Capping and splitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.60,
            val: 0.15,
            test: 0.25,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("split ratios must lie in [0, 1]".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        Ok(())
    }
}

/// Shuffles with a seeded generator, keeps at most `cap` examples and splits
/// them: train and val get the floor of their share, test gets the rest.
pub fn cap_and_split(
    examples: &[Example],
    cap: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DomainDataset> {
    ratios.validate()?;
    if cap < MIN_DOMAIN_EXAMPLES {
        return Err(Error::Config(format!(
            "cap must be at least {MIN_DOMAIN_EXAMPLES}"
        )));
    }
    let domain_id = examples
        .first()
        .map(|e| e.domain_id.clone())
        .unwrap_or_default();
    if examples.len() < MIN_DOMAIN_EXAMPLES {
        return Err(Error::TooFewExamples {
            domain: domain_id,
            count: examples.len(),
        });
    }
    if let Some(other) = examples.iter().find(|e| e.domain_id != domain_id) {
        return Err(Error::InvalidInput(format!(
            "examples from domains `{domain_id}` and `{}` mixed in one split",
            other.domain_id
        )));
    }

    let mut pool = examples.to_vec();
    pool.shuffle(&mut seed::rng(seed));
    pool.truncate(cap);

    let n = pool.len();
    let n_train = (ratios.train * n as f64 + 1e-9).floor() as usize;
    let n_val = (ratios.val * n as f64 + 1e-9).floor() as usize;
    let test = pool.split_off(n_train + n_val);
    let val = pool.split_off(n_train);
    Ok(DomainDataset {
        domain_id,
        train: pool,
        val,
        test,
    })
}

/// Groups examples by domain and splits each; domains with too few examples
/// are dropped with a warning. Each domain's shuffle seed is derived from
/// `seed` and its id.
pub fn split_domains(
    examples: BTreeMap<String, Vec<Example>>,
    cap: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<BTreeMap<String, DomainDataset>> {
    let mut out = BTreeMap::new();
    for (domain, exs) in examples {
        match cap_and_split(&exs, cap, ratios, seed::derive(seed, &["split", &domain])) {
            Ok(ds) => {
                out.insert(domain, ds);
            }
            Err(Error::TooFewExamples { domain, count }) => {
                log::warn!("excluding domain `{domain}`: only {count} examples");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Subset sampling

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Draws `count` pairwise-distinct unordered subsets of `size` domains by
/// rejection sampling. Domain ids inside each subset are sorted.
pub fn sample_subsets(
    domain_ids: &[String],
    size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<DomainSubset>> {
    let pool: Vec<String> = domain_ids
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if size == 0 || pool.len() < size {
        return Err(Error::InvalidInput(format!(
            "cannot draw subsets of size {size} from {} domains",
            pool.len()
        )));
    }
    if count == 0 {
        return Err(Error::InvalidInput("subset count must be at least 1".into()));
    }
    let available = binomial(pool.len(), size);
    if count as u128 > available {
        return Err(Error::NotEnoughSubsets {
            requested: count,
            size,
            available,
        });
    }

    let mut rng = seed::rng(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut pick: Vec<String> = pool.choose_multiple(&mut rng, size).cloned().collect();
        pick.sort();
        if seen.insert(pick.clone()) {
            out.push(DomainSubset {
                subset_id: out.len(),
                domain_ids: pick,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic corpora

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub datasets: BTreeMap<String, DomainDataset>,
    /// Domain ids in the order of the planted similarity chain.
    pub planted_chain: Vec<String>,
}

/// Intent label and its signature words.
type Intent = (String, Vec<String>);

const UTTERANCE_LEN: std::ops::RangeInclusive<usize> = 6..=12;
const SIGNATURE_RATE: f64 = 0.5;

/// Builds a corpus whose consecutive chain domains share the given fraction
/// of their intents and of their vocabulary. Each domain keeps the most
/// recently introduced intents and filler words of its predecessor, so
/// similarity decays along the chain. Each intent owns a signature slice of
/// the vocabulary that travels with it; labeled utterances draw half their
/// tokens from it.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let width = spec.n_domains.to_string().len().max(2);
    let mut chain: Vec<String> = (0..spec.n_domains)
        .map(|i| format!("synth_{i:0width$}"))
        .collect();
    chain.shuffle(&mut rng);

    let mut next_word = 0usize;
    let mut fresh = |k: usize| -> Vec<String> {
        let words = (next_word..next_word + k).map(|w| format!("w{w}")).collect();
        next_word += k;
        words
    };
    let mut next_intent = 0usize;

    let v = spec.vocab_per_domain;
    let k = spec.intents_per_domain;
    let signature_len = (v / k / 2).max(1);
    let filler_len = v - k * signature_len;
    let mut layouts: Vec<(Vec<Intent>, Vec<String>)> = Vec::with_capacity(spec.n_domains);
    for pos in 0..spec.n_domains {
        let (mut intents, mut filler) = match pos {
            0 => (Vec::new(), Vec::new()),
            _ => {
                let o = spec.overlap_chain[pos - 1];
                let (prev_intents, prev_filler) = &layouts[pos - 1];
                let ci = (o * k as f64).round() as usize;
                let cf = (o * filler_len as f64).round() as usize;
                (
                    prev_intents[k - ci..].to_vec(),
                    prev_filler[filler_len - cf..].to_vec(),
                )
            }
        };
        while intents.len() < k {
            intents.push((format!("intent_{next_intent:03}"), fresh(signature_len)));
            next_intent += 1;
        }
        filler.extend(fresh(filler_len - filler.len()));
        layouts.push((intents, filler));
    }

    let mut datasets = BTreeMap::new();
    for (domain, (intents, filler)) in chain.iter().zip(&layouts) {
        let vocab: Vec<&String> = intents.iter().flat_map(|(_, sig)| sig).chain(filler).collect();
        let mut sequences = Vec::with_capacity(spec.examples_per_domain);
        for i in 0..spec.examples_per_domain {
            let (label, signature) = &intents[i % k];
            let mut sentence = |signature: Option<&[String]>| -> String {
                let len = rng.gen_range(UTTERANCE_LEN);
                (0..len)
                    .map(|_| match signature {
                        Some(sig) if rng.gen_bool(SIGNATURE_RATE) => sig.choose(&mut rng).unwrap().as_str(),
                        _ => vocab.choose(&mut rng).unwrap().as_str(),
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let opener = sentence(None);
            let reply = sentence(None);
            let request = sentence(Some(signature));
            let history = vec![
                Utterance::new(Speaker::User, opener).expect("non-empty"),
                Utterance::new(Speaker::System, reply).expect("non-empty"),
                Utterance::new(Speaker::User, request).expect("non-empty"),
            ];
            sequences.push(TurnSequence {
                id: format!("{i:04}"),
                domain_id: domain.clone(),
                intent: label.clone(),
                history,
            });
        }
        let examples = build_examples(&sequences, DEFAULT_WINDOW)?;
        let ds = cap_and_split(
            &examples,
            DEFAULT_CAP.max(spec.examples_per_domain),
            SplitRatios::default(),
            seed::derive(spec.seed, &["split", domain]),
        )?;
        datasets.insert(domain.clone(), ds);
    }
    Ok(SyntheticCorpus {
        datasets,
        planted_chain: chain,
    })
}

// ---------------------------------------------------------------------------
// Corpus cache: one JSONL file per domain

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub example_id: String,
    pub input_text: String,
    pub intent_label: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance: Option<String>,
}

pub fn write_cache(dir: &Path, datasets: &BTreeMap<String, DomainDataset>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (domain, ds) in datasets {
        let path = dir.join(format!("{domain}.jsonl"));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for split in [Split::Train, Split::Val, Split::Test] {
            for ex in ds.split(split) {
                let rec = CacheRecord {
                    example_id: ex.example_id.clone(),
                    input_text: ex.input_text.clone(),
                    intent_label: ex.intent_label.clone(),
                    split,
                    utterance: Some(ex.utterance.clone()),
                };
                let line = serde_json::to_string(&rec).expect("cache record serializes");
                writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Reads a cache directory written by [`write_cache`]; the domain id is the
/// file stem.
pub fn read_cache(dir: &Path) -> Result<BTreeMap<String, DomainDataset>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut out = BTreeMap::new();
    for path in files {
        let domain_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut ds = DomainDataset {
            domain_id: domain_id.clone(),
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| Error::Ingest {
                path: path.clone(),
                message: format!("line {}: {e}", lineno + 1),
            })?;
            let utterance = rec.utterance.unwrap_or_else(|| strip_prompt(&rec.input_text));
            let ex = Example {
                example_id: rec.example_id,
                domain_id: domain_id.clone(),
                input_text: rec.input_text,
                intent_label: rec.intent_label,
                utterance,
            };
            match rec.split {
                Split::Train => ds.train.push(ex),
                Split::Val => ds.val.push(ex),
                Split::Test => ds.test.push(ex),
            }
        }
        out.insert(domain_id, ds);
    }
    Ok(out)
}

/// Recovers the last context utterance from an assembled input.
fn strip_prompt(input: &str) -> String {
    let body = input
        .strip_prefix(INPUT_PREFIX)
        .unwrap_or(input)
        .strip_suffix(INPUT_SUFFIX)
        .unwrap_or(input);
    body.rsplit(SEPARATOR).next().unwrap_or(body).trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(texts: &[&str]) -> TurnSequence {
        TurnSequence {
            id: "d0/0".into(),
            domain_id: "Events_1".into(),
            intent: "FindEvents".into(),
            history: texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let sp = if i % 2 == 0 { Speaker::User } else { Speaker::System };
                    Utterance::new(sp, *t).unwrap()
                })
                .collect(),
        }
    }

    fn examples(domain: &str, n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                example_id: format!("{domain}/{i}"),
                domain_id: domain.into(),
                input_text: assemble_input(&[&format!("utt {i}")]),
                intent_label: "L".into(),
                utterance: format!("utt {i}"),
            })
            .collect()
    }

    #[test]
    fn window_keeps_last_three_utterances() {
        let ex = build_examples(&[seq(&["u1", "s1", "u2", "s2", "u3"])], 3).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].input_text, "classify intent: u2 </s> s2 </s> u3 intent: ");
        assert_eq!(ex[0].input_text.matches(SEPARATOR).count(), 2);
        assert_eq!(ex[0].utterance, "u3");
    }

    #[test]
    fn short_history_uses_all_available() {
        let ex = build_examples(&[seq(&["only turn"])], 3).unwrap();
        assert_eq!(ex[0].input_text, "classify intent: only turn intent: ");
        assert_eq!(ex[0].input_text.matches(SEPARATOR).count(), 0);
    }

    #[test]
    fn zero_window_is_rejected() {
        assert!(build_examples(&[seq(&["a"])], 0).is_err());
    }

    #[test]
    fn long_input_truncates_from_the_left() {
        let old: String = (0..300).map(|i| format!("old{i} ")).collect();
        let recent: String = (0..298).map(|i| format!("new{i} ")).collect();
        // 300 + 1 separator + 298 = 599 body tokens, 602 with the prompt.
        let input = assemble_input(&[old.trim(), recent.trim()]);
        assert_eq!(token_count(&input), MAX_INPUT_TOKENS);
        assert!(input.starts_with(INPUT_PREFIX));
        assert!(input.ends_with("new297 intent: "));
        assert!(input.contains("new0 "));
        assert!(!input.contains("old0 "));
        // 509 body tokens = 298 new + separator + last 210 old.
        assert!(input.contains("old90 "));
        assert!(!input.contains("old89 "));
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        for (n, expect) in [(250, (60, 15, 25)), (100, (60, 15, 25)), (50, (30, 7, 13))] {
            let ds = cap_and_split(&examples("D", n), 100, SplitRatios::default(), 3).unwrap();
            assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), expect, "n={n}");
        }
    }

    #[test]
    fn too_few_examples_excludes_domain() {
        let err = cap_and_split(&examples("D", 3), 100, SplitRatios::default(), 3).unwrap_err();
        assert!(matches!(err, Error::TooFewExamples { count: 3, .. }));
        let mut by_domain = BTreeMap::new();
        by_domain.insert("D".to_string(), examples("D", 3));
        by_domain.insert("E".to_string(), examples("E", 10));
        let out = split_domains(by_domain, 100, SplitRatios::default(), 1).unwrap();
        assert_eq!(out.keys().collect::<Vec<_>>(), vec!["E"]);
    }

    #[test]
    fn bad_ratios_and_cap_rejected() {
        let r = SplitRatios { train: 0.5, val: 0.2, test: 0.2 };
        assert!(cap_and_split(&examples("D", 10), 100, r, 0).is_err());
        assert!(cap_and_split(&examples("D", 10), 3, SplitRatios::default(), 0).is_err());
    }

    #[test]
    fn subsets_are_distinct_and_deterministic() {
        let ids: Vec<String> = (0..20).map(|i| format!("d{i:02}")).collect();
        let a = sample_subsets(&ids, 5, 22, 9).unwrap();
        let b = sample_subsets(&ids, 5, 22, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 22);
        let unique: BTreeSet<_> = a.iter().map(|s| s.domain_ids.clone()).collect();
        assert_eq!(unique.len(), 22);
        for s in &a {
            let set: BTreeSet<_> = s.domain_ids.iter().collect();
            assert_eq!(set.len(), 5);
        }
    }

    #[test]
    fn subset_count_bounds() {
        let five: Vec<String> = (0..5).map(|i| format!("d{i}")).collect();
        let one = sample_subsets(&five, 5, 1, 0).unwrap();
        assert_eq!(one[0].domain_ids, five);

        let six: Vec<String> = (0..6).map(|i| format!("d{i}")).collect();
        assert_eq!(binomial(6, 5), 6);
        assert!(sample_subsets(&six, 5, 6, 0).is_ok());
        assert!(matches!(
            sample_subsets(&six, 5, 7, 0),
            Err(Error::NotEnoughSubsets { available: 6, .. })
        ));
    }

    #[test]
    fn synthetic_corpus_shape() {
        let spec = SyntheticSpec {
            n_domains: 4,
            vocab_per_domain: 40,
            overlap_chain: vec![0.5; 3],
            examples_per_domain: 60,
            intents_per_domain: 3,
            seed: 5,
        };
        let corpus = generate_synthetic(&spec).unwrap();
        assert_eq!(corpus.datasets.len(), 4);
        assert_eq!(corpus.planted_chain.len(), 4);
        for ds in corpus.datasets.values() {
            assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (36, 9, 15));
            assert_eq!(ds.labels().len(), 3);
        }
        let again = generate_synthetic(&spec).unwrap();
        assert_eq!(corpus.datasets, again.datasets);
        assert_eq!(corpus.planted_chain, again.planted_chain);
    }

    #[test]
    fn synthetic_overlap_matches_chain() {
        let spec = SyntheticSpec {
            n_domains: 3,
            vocab_per_domain: 50,
            overlap_chain: vec![0.0, 1.0],
            examples_per_domain: 200,
            intents_per_domain: 2,
            seed: 1,
        };
        let corpus = generate_synthetic(&spec).unwrap();
        let vocab = |d: &str| -> BTreeSet<String> {
            let ds = &corpus.datasets[d];
            ds.train
                .iter()
                .chain(&ds.val)
                .chain(&ds.test)
                .flat_map(|e| e.utterance.split_whitespace().map(str::to_string).collect::<Vec<_>>())
                .collect()
        };
        let c = &corpus.planted_chain;
        assert!(vocab(&c[0]).is_disjoint(&vocab(&c[1])));
        // Full overlap: every word of the third domain comes from the second.
        assert!(vocab(&c[2]).is_subset(&vocab(&c[1])) || vocab(&c[1]).is_subset(&vocab(&c[2])));
    }

    #[test]
    fn synthetic_spec_validation() {
        let mut spec = SyntheticSpec {
            n_domains: 3,
            vocab_per_domain: 10,
            overlap_chain: vec![0.5, 1.5],
            examples_per_domain: 10,
            intents_per_domain: 2,
            seed: 0,
        };
        assert!(spec.validate().is_err());
        spec.overlap_chain = vec![0.5];
        assert!(spec.validate().is_err());
        spec.overlap_chain = vec![0.5, 0.5];
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn strip_prompt_recovers_last_utterance() {
        let input = assemble_input(&["hello there", "hi", "book a table"]);
        assert_eq!(strip_prompt(&input), "book a table");
    }
}

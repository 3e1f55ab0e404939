//! Text preprocessing: normalization, tokenization, stop-word removal,
//! suffix-rule lemmatization, vocabulary construction, and encoding to
//! fixed-length id sequences and one-hot labels.
//!
//! Pipeline order is normalize → tokenize → filter → lemmatize → encode.
//! Ids 0 and 1 are reserved for PAD and OOV.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nncore::model::{OOV_ID, PAD_ID};

/// 148-word English stoplist shipped with the crate.
const DEFAULT_STOPLIST: &str = include_str!("../data/stoplist.txt");

/// ASCII punctuation, every character replaced by a space.
const DEFAULT_STRIP_CHARS: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

fn default_max_len() -> usize {
    2000
}
fn default_vocab_size() -> usize {
    100_000
}
fn default_lemmatize() -> bool {
    true
}

pub fn default_stoplist() -> BTreeSet<String> {
    DEFAULT_STOPLIST
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn default_strip_chars() -> BTreeSet<char> {
    DEFAULT_STRIP_CHARS.chars().collect()
}

#[derive(Debug, thiserror::Error)]
pub enum PrepError {
    #[error("max_len must be at least 1")]
    ZeroMaxLen,
    #[error("vocab_size {0} leaves no room for tokens; 0 and 1 are reserved")]
    VocabTooSmall(usize),
    #[error("class index {index} out of range for {m} classes")]
    LabelOutOfRange { index: usize, m: usize },
    #[error("vocabulary line {line} is empty")]
    EmptyVocabLine { line: usize },
    #[error("vocabulary lists token {token:?} twice")]
    DuplicateVocabToken { token: String },
    #[error("character-set line {line} holds {found:?}, expected exactly one character")]
    NotOneChar { line: usize, found: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepConfig {
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_lemmatize")]
    pub lemmatize: bool,
    #[serde(skip, default = "default_stoplist")]
    pub stoplist: BTreeSet<String>,
    #[serde(skip, default = "default_strip_chars")]
    pub strip_chars: BTreeSet<char>,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            max_len: default_max_len(),
            vocab_size: default_vocab_size(),
            lemmatize: default_lemmatize(),
            stoplist: default_stoplist(),
            strip_chars: default_strip_chars(),
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<(), PrepError> {
        if self.max_len == 0 {
            return Err(PrepError::ZeroMaxLen);
        }
        if self.vocab_size < 3 {
            return Err(PrepError::VocabTooSmall(self.vocab_size));
        }
        Ok(())
    }
}

/// One entry per line, UTF-8, trimmed; blank lines ignored.
pub fn load_word_list(path: &Path) -> Result<BTreeSet<String>, PrepError> {
    let text = fs::read_to_string(path).map_err(|source| PrepError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// One character per line; a longer line is an error.
pub fn load_char_set(path: &Path) -> Result<BTreeSet<char>, PrepError> {
    let text = fs::read_to_string(path).map_err(|source| PrepError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut set = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut chars = line.chars();
        let c = chars.next().unwrap();
        if chars.next().is_some() {
            return Err(PrepError::NotOneChar {
                line: i + 1,
                found: line.to_string(),
            });
        }
        set.insert(c);
    }
    Ok(set)
}

/// Lower-case, replace every strip character by a space, collapse
/// whitespace runs.
pub fn normalize_text(text: &str, strip_chars: &BTreeSet<char>) -> String {
    let lowered = text.to_lowercase();
    let replaced: String = lowered
        .chars()
        .map(|c| if strip_chars.contains(&c) { ' ' } else { c })
        .collect();
    replaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace split of already-normalized text; never yields empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

pub fn filter_tokens(tokens: Vec<String>, stoplist: &BTreeSet<String>) -> Vec<String> {
    tokens
        .into_iter()
        .filter(|t| !stoplist.contains(t))
        .collect()
}

/// Ordered suffix rules, first match wins, at most one per call:
/// `sses→ss`, `ies→y`, then `ing`/`ed`/`es` dropped when the stem keeps
/// at least 3 characters, then a final `s` dropped when the stem keeps
/// at least 3 characters and the token does not end in `ss`.
pub fn lemmatize_token(token: &str) -> String {
    if let Some(stem) = token.strip_suffix("sses") {
        return format!("{stem}ss");
    }
    if let Some(stem) = token.strip_suffix("ies") {
        return format!("{stem}y");
    }
    for suffix in ["ing", "ed", "es"] {
        if let Some(stem) = token.strip_suffix(suffix) {
            if stem.chars().count() >= 3 {
                return stem.to_string();
            }
        }
    }
    if !token.ends_with("ss") {
        if let Some(stem) = token.strip_suffix('s') {
            if stem.chars().count() >= 3 {
                return stem.to_string();
            }
        }
    }
    token.to_string()
}

/// Full per-record pipeline from raw narrative to final token list.
pub fn prepare_tokens(text: &str, config: &PrepConfig) -> Vec<String> {
    let normalized = normalize_text(text, &config.strip_chars);
    let tokens = filter_tokens(tokenize(&normalized), &config.stoplist);
    if config.lemmatize {
        tokens.iter().map(|t| lemmatize_token(t)).collect()
    } else {
        tokens
    }
}

/// Token table with ids 2.. in descending corpus frequency; 0 = PAD,
/// 1 = OOV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Rank tokens by descending frequency, ties broken by earlier first
    /// occurrence, and keep the top vocab_size − 2.
    pub fn build(corpus: &[Vec<String>], config: &PrepConfig) -> Vocabulary {
        let mut freq: HashMap<&str, (u64, usize)> = HashMap::new();
        let mut next_occurrence = 0usize;
        for doc in corpus {
            for token in doc {
                let entry = freq.entry(token).or_insert_with(|| {
                    let slot = (0, next_occurrence);
                    slot
                });
                if entry.0 == 0 {
                    next_occurrence += 1;
                }
                entry.0 += 1;
            }
        }
        let mut ranked: Vec<(&str, u64, usize)> =
            freq.into_iter().map(|(t, (c, o))| (t, c, o)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(config.vocab_size.saturating_sub(2));

        let mut token_to_id = HashMap::with_capacity(ranked.len());
        let mut tokens = Vec::with_capacity(ranked.len());
        for (i, (token, _, _)) in ranked.iter().enumerate() {
            token_to_id.insert(token.to_string(), (i + 2) as u32);
            tokens.push(token.to_string());
        }
        Vocabulary {
            token_to_id,
            tokens,
        }
    }

    /// Total id count including the two reserved ids.
    pub fn size(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn id_of(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        if id < 2 {
            return None;
        }
        self.tokens.get(id as usize - 2).map(String::as_str)
    }

    /// One token per line; line k holds the token with id k+2.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Vocabulary, PrepError> {
        let mut token_to_id = HashMap::new();
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                return Err(PrepError::EmptyVocabLine { line: i + 1 });
            }
            if token_to_id
                .insert(line.to_string(), (i + 2) as u32)
                .is_some()
            {
                return Err(PrepError::DuplicateVocabToken {
                    token: line.to_string(),
                });
            }
            tokens.push(line.to_string());
        }
        Ok(Vocabulary {
            token_to_id,
            tokens,
        })
    }

    /// SHA-256 of the serialized token list, hex-encoded. Couples model
    /// and dataset artifacts to the exact vocabulary they were built on.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_text().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Fixed-length id sequence; positions at and after `true_length` are
/// PAD(0), earlier positions are real token ids (≥ 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceVector {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

/// Map tokens to ids (unknown → OOV), keep the first max_len tokens,
/// post-pad with zeros.
pub fn encode_sequence(
    tokens: &[String],
    vocab: &Vocabulary,
    config: &PrepConfig,
) -> SequenceVector {
    let true_length = tokens.len().min(config.max_len);
    let mut ids = Vec::with_capacity(config.max_len);
    for token in &tokens[..true_length] {
        ids.push(vocab.id_of(token));
    }
    ids.resize(config.max_len, PAD_ID);
    SequenceVector { ids, true_length }
}

/// One-hot label row: 1 at class_index, 0 elsewhere.
pub fn encode_label(class_index: usize, m: usize) -> Result<Vec<f64>, PrepError> {
    if class_index >= m {
        return Err(PrepError::LabelOutOfRange {
            index: class_index,
            m,
        });
    }
    let mut v = vec![0.0; m];
    v[class_index] = 1.0;
    Ok(v)
}

/// One encoded training instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedRecord {
    pub label: u32,
    pub seq: SequenceVector,
}

/// Fully encoded corpus plus the metadata needed to interpret it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub num_classes: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub vocab_digest: String,
    pub records: Vec<EncodedRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(max_len: usize, vocab_size: usize) -> PrepConfig {
        PrepConfig {
            max_len,
            vocab_size,
            ..PrepConfig::default()
        }
    }

    #[test]
    fn defaults_match_the_documented_values() {
        let c = PrepConfig::default();
        assert_eq!(c.max_len, 2000);
        assert_eq!(c.vocab_size, 100_000);
        assert!(c.lemmatize);
        assert_eq!(c.stoplist.len(), 148);
        assert!(c.strip_chars.contains(&'!'));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn validate_rejects_degenerate_configs() {
        assert!(cfg(0, 10).validate().is_err());
        assert!(cfg(10, 2).validate().is_err());
    }

    #[test]
    fn normalize_lowercases_and_strips_punctuation() {
        let strip = default_strip_chars();
        assert_eq!(normalize_text("Engine FAILED!", &strip), "engine failed");
        assert_eq!(normalize_text("", &strip), "");
        assert_eq!(normalize_text("a--b  c", &strip), "a b c");
        assert_eq!(normalize_text("  lots   of \t space ", &strip), "lots of space");
    }

    #[test]
    fn tokenize_splits_on_whitespace_without_empties() {
        assert_eq!(
            tokenize("engine failed on approach"),
            vec!["engine", "failed", "on", "approach"]
        );
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn filter_removes_stoplist_entries_in_order() {
        let stop: BTreeSet<String> = ["on"].iter().map(|s| s.to_string()).collect();
        let toks = vec!["engine", "failed", "on", "approach"]
            .into_iter()
            .map(String::from)
            .collect();
        assert_eq!(
            filter_tokens(toks, &stop),
            vec!["engine", "failed", "approach"]
        );
        let all_stopped = vec!["on".to_string()];
        assert!(filter_tokens(all_stopped, &stop).is_empty());

        let empty_stop = BTreeSet::new();
        let toks: Vec<String> = vec!["a".into(), "b".into()];
        assert_eq!(filter_tokens(toks.clone(), &empty_stop), toks);
    }

    #[test]
    fn lemmatizer_matches_the_expected_word_table() {
        // 30 hand-derived (input, output) pairs covering every rule and
        // every guard
        let table = [
            ("landing", "land"),
            ("landings", "landing"),
            ("approaches", "approach"),
            ("approach", "approach"),
            ("crosses", "cross"),
            ("cross", "cross"),
            ("engines", "engin"),
            ("engine", "engine"),
            ("failed", "fail"),
            ("fails", "fail"),
            ("failure", "failure"),
            ("emergencies", "emergency"),
            ("emergency", "emergency"),
            ("flies", "fly"),
            ("taxiing", "taxi"),
            ("taxied", "taxi"),
            ("climbed", "climb"),
            ("climbs", "climb"),
            ("climbing", "climb"),
            ("pilots", "pilot"),
            ("passes", "pass"),
            ("pass", "pass"),
            ("gases", "gas"),
            ("gas", "gas"),
            ("wings", "wing"),
            ("wing", "wing"),
            ("reported", "report"),
            ("reports", "report"),
            ("runway", "runway"),
            ("uses", "use"),
        ];
        for (input, want) in table {
            assert_eq!(lemmatize_token(input), want, "input {input:?}");
        }
    }

    #[test]
    fn lemmatizer_guards_block_too_short_stems() {
        assert_eq!(lemmatize_token("king"), "king"); // stem would be "k"
        assert_eq!(lemmatize_token("bed"), "bed");
        assert_eq!(lemmatize_token("was"), "was");
        assert_eq!(lemmatize_token("ed"), "ed");
        assert_eq!(lemmatize_token("sses"), "ss"); // unguarded first rule
        assert_eq!(lemmatize_token("dies"), "dy"); // unguarded ies rule
    }

    #[test]
    fn vocabulary_ranks_by_frequency_then_first_occurrence() {
        let corpus = vec![
            vec!["engine".to_string(), "failure".to_string()],
            vec!["engine".to_string(), "fire".to_string()],
        ];
        let v = Vocabulary::build(&corpus, &cfg(10, 100));
        assert_eq!(v.id_of("engine"), 2);
        assert_eq!(v.id_of("failure"), 3);
        assert_eq!(v.id_of("fire"), 4);
        assert_eq!(v.size(), 5);
    }

    #[test]
    fn empty_corpus_gives_reserved_only_vocabulary() {
        let v = Vocabulary::build(&[], &cfg(10, 100));
        assert_eq!(v.size(), 2);
        assert_eq!(v.id_of("anything"), OOV_ID);
    }

    #[test]
    fn vocab_size_caps_the_token_count() {
        let corpus = vec![vec![
            "alpha".to_string(),
            "alpha".to_string(),
            "beta".to_string(),
        ]];
        let v = Vocabulary::build(&corpus, &cfg(10, 3));
        assert_eq!(v.size(), 3);
        assert_eq!(v.id_of("alpha"), 2);
        assert_eq!(v.id_of("beta"), OOV_ID);
    }

    #[test]
    fn vocabulary_build_is_order_stable() {
        let corpus = vec![
            vec!["b".to_string(), "a".to_string()],
            vec!["a".to_string(), "b".to_string()],
        ];
        let v1 = Vocabulary::build(&corpus, &cfg(10, 100));
        let v2 = Vocabulary::build(&corpus, &cfg(10, 100));
        assert_eq!(v1, v2);
        // tie on frequency 2 broken by first occurrence: b first
        assert_eq!(v1.id_of("b"), 2);
        assert_eq!(v1.id_of("a"), 3);
    }

    #[test]
    fn vocabulary_text_round_trips_with_stable_digest() {
        let corpus = vec![vec![
            "engine".to_string(),
            "fire".to_string(),
            "engine".to_string(),
        ]];
        let v = Vocabulary::build(&corpus, &cfg(10, 100));
        let text = v.to_text();
        assert_eq!(text, "engine\nfire\n");
        let back = Vocabulary::from_text(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.digest(), v.digest());
        assert_eq!(v.digest().len(), 64);
        assert_eq!(v.token_of(2), Some("engine"));
        assert_eq!(v.token_of(0), None);
        assert_eq!(v.token_of(1), None);
    }

    #[test]
    fn malformed_vocabulary_text_is_rejected() {
        assert!(matches!(
            Vocabulary::from_text("a\n\nb\n"),
            Err(PrepError::EmptyVocabLine { line: 2 })
        ));
        assert!(matches!(
            Vocabulary::from_text("a\nb\na\n"),
            Err(PrepError::DuplicateVocabToken { .. })
        ));
    }

    #[test]
    fn encode_pads_to_max_len() {
        let corpus = vec![vec!["a".to_string(), "b".to_string(), "c".to_string()]];
        let config = cfg(6, 100);
        let v = Vocabulary::build(&corpus, &config);
        let seq = encode_sequence(
            &["a".to_string(), "b".to_string(), "c".to_string()],
            &v,
            &config,
        );
        assert_eq!(seq.ids, vec![2, 3, 4, 0, 0, 0]);
        assert_eq!(seq.true_length, 3);
    }

    #[test]
    fn encode_truncates_to_the_first_max_len_tokens() {
        let tokens: Vec<String> = (0..2500).map(|i| format!("w{i}")).collect();
        let config = cfg(2000, 100_000);
        let v = Vocabulary::build(&[tokens.clone()], &config);
        let seq = encode_sequence(&tokens, &v, &config);
        assert_eq!(seq.ids.len(), 2000);
        assert_eq!(seq.true_length, 2000);
        // token 2001 onward is absent
        let id_2001 = v.id_of("w2000");
        assert!(!seq.ids.contains(&id_2001));
        // the head tokens are kept
        assert_eq!(seq.ids[0], v.id_of("w0"));
    }

    #[test]
    fn unknown_tokens_encode_as_oov() {
        let corpus = vec![vec!["known".to_string()]];
        let config = cfg(3, 100);
        let v = Vocabulary::build(&corpus, &config);
        let seq = encode_sequence(
            &["known".to_string(), "mystery".to_string()],
            &v,
            &config,
        );
        assert_eq!(seq.ids, vec![2, OOV_ID, 0]);
        assert_eq!(seq.true_length, 2);
    }

    #[test]
    fn one_hot_labels_are_unit_vectors() {
        assert_eq!(
            encode_label(2, 7).unwrap(),
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(encode_label(0, 2).unwrap(), vec![1.0, 0.0]);
        assert_eq!(
            encode_label(6, 7).unwrap(),
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert!(encode_label(7, 7).is_err());
    }

    #[test]
    fn full_pipeline_is_deterministic_and_skips_stopwords() {
        let config = PrepConfig::default();
        let text = "The engine FAILED, during the landing!";
        let t1 = prepare_tokens(text, &config);
        let t2 = prepare_tokens(text, &config);
        assert_eq!(t1, t2);
        assert_eq!(t1, vec!["engine", "fail", "land"]);
    }

    proptest! {
        #[test]
        fn tokens_rejoin_to_the_normalized_text(raw in "[ -~]{0,80}") {
            let strip = default_strip_chars();
            let normalized = normalize_text(&raw, &strip);
            let tokens = tokenize(&normalized);
            prop_assert!(tokens.iter().all(|t| !t.is_empty()));
            prop_assert_eq!(tokens.join(" "), normalized);
        }

        #[test]
        fn encoded_sequences_respect_the_pad_layout(
            n_tokens in 0usize..20,
            max_len in 1usize..16,
        ) {
            let tokens: Vec<String> = (0..n_tokens).map(|i| format!("t{i}")).collect();
            let config = cfg(max_len, 1000);
            let v = Vocabulary::build(&[tokens.clone()], &config);
            let seq = encode_sequence(&tokens, &v, &config);
            prop_assert_eq!(seq.ids.len(), max_len);
            prop_assert_eq!(seq.true_length, n_tokens.min(max_len));
            for (i, &id) in seq.ids.iter().enumerate() {
                if i < seq.true_length {
                    prop_assert!(id >= 1);
                } else {
                    prop_assert_eq!(id, PAD_ID);
                }
            }
        }

        #[test]
        fn one_hot_sums_to_one_with_argmax_at_k(m in 1usize..10, k_seed in 0usize..100) {
            let k = k_seed % m;
            let v = encode_label(k, m).unwrap();
            let sum: f64 = v.iter().sum();
            prop_assert_eq!(sum, 1.0);
            let argmax = v.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            prop_assert_eq!(argmax, k);
        }
    }
}

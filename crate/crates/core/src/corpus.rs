//! Chunk-annotated query corpora and their delexicalized form.
//!
//! An utterance arrives as a list of text chunks, each optionally tagged with
//! a slot name ("weather in " + "Paris"/city). Delexicalization replaces every
//! tagged chunk with a single placeholder token `[city]`, producing a pattern:
//! the token sequence the generative model actually sees. Slot values are kept
//! in a per-name multiset so patterns can be turned back into full sentences
//! by drawing surface forms.
//!
//! Tokenization rule (applied to untagged text and to slot values): lowercase;
//! maximal alphanumeric runs are tokens, an apostrophe flanked by alphanumerics
//! stays inside its token ("what's" is one token); every other non-whitespace
//! character becomes a single-character token. Placeholder tokens are inserted
//! verbatim and never pass through the tokenizer.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const SOS_TOKEN: &str = "<sos>";
pub const EOS_TOKEN: &str = "<eos>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const SOS_ID: usize = 2;
pub const EOS_ID: usize = 3;

/// Default pattern length budget for encoding, start/end markers included.
pub const DEFAULT_MAX_LEN: usize = 20;

/// One contiguous span of an utterance; `slot` names the entity it fills.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotChunk {
    pub text: String,
    pub slot: Option<String>,
}

impl SlotChunk {
    pub fn plain(text: impl Into<String>) -> Self {
        SlotChunk {
            text: text.into(),
            slot: None,
        }
    }

    pub fn slotted(text: impl Into<String>, slot: impl Into<String>) -> Self {
        SlotChunk {
            text: text.into(),
            slot: Some(slot.into()),
        }
    }
}

/// A raw query: its chunks plus the intent label it was filed under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub chunks: Vec<SlotChunk>,
    pub intent: String,
}

/// A delexicalized token sequence. Placeholder tokens keep the `[name]` form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pattern(pub Vec<String>);

impl Pattern {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses a space-separated pattern string (inverse of `Display`).
    pub fn from_joined(s: &str) -> Self {
        Pattern(s.split_whitespace().map(str::to_owned).collect())
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(" "))
    }
}

/// Multiset of surface forms per slot name, in corpus order.
/// Values are stored tokenization-normalized.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDictionary {
    values: BTreeMap<String, Vec<String>>,
}

impl SlotDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, slot: &str, raw_value: &str) {
        let normalized = tokenize(raw_value).join(" ");
        self.values.entry(slot.to_owned()).or_default().push(normalized);
    }

    pub fn values(&self, slot: &str) -> Option<&[String]> {
        self.values.get(slot).map(Vec::as_slice)
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn merge(&mut self, other: &SlotDictionary) {
        for (slot, vals) in &other.values {
            self.values.entry(slot.clone()).or_default().extend(vals.iter().cloned());
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A loaded corpus: utterances, their patterns (parallel vectors), the sorted
/// intent inventory, and the slot-value multisets collected while
/// delexicalizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub intents: Vec<String>,
    pub utterances: Vec<Utterance>,
    pub patterns: Vec<Pattern>,
    pub slots: SlotDictionary,
}

impl Dataset {
    /// Builds a dataset from utterances: delexicalizes each one, collects slot
    /// values, and records the sorted set of intents present.
    pub fn from_utterances(utterances: Vec<Utterance>) -> Result<Self> {
        let mut slots = SlotDictionary::new();
        let mut patterns = Vec::with_capacity(utterances.len());
        for (i, utt) in utterances.iter().enumerate() {
            if utt.chunks.is_empty() {
                return Err(Error::Dataset(format!(
                    "utterance {i} (intent {:?}) has an empty chunk list",
                    utt.intent
                )));
            }
            patterns.push(delexicalize(utt));
            for chunk in &utt.chunks {
                if let Some(slot) = &chunk.slot {
                    slots.insert(slot, &chunk.text);
                }
            }
        }
        let mut intents: Vec<String> = utterances.iter().map(|u| u.intent.clone()).collect();
        intents.sort();
        intents.dedup();
        Ok(Dataset {
            intents,
            utterances,
            patterns,
            slots,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn intent_index(&self, intent: &str) -> Option<usize> {
        self.intents.binary_search_by(|x| x.as_str().cmp(intent)).ok()
    }

    /// Indices of utterances labelled with `intent`, in corpus order.
    pub fn indices_of_intent(&self, intent: &str) -> Vec<usize> {
        self.utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.intent == intent)
            .map(|(i, _)| i)
            .collect()
    }

    /// Patterns of one intent, in corpus order.
    pub fn patterns_of_intent(&self, intent: &str) -> Vec<&Pattern> {
        self.utterances
            .iter()
            .zip(&self.patterns)
            .filter(|(u, _)| u.intent == intent)
            .map(|(_, p)| p)
            .collect()
    }
}

/// Recognized on-disk corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// JSON object mapping intent name to a list of `{"data": [chunks]}`
    /// utterances, each chunk `{"text": ..., "entity"?: ...}`. A path may be a
    /// single file or a directory of such files (read in filename order).
    ChunkedJson,
}

#[derive(Deserialize)]
struct RawChunk {
    text: String,
    #[serde(default)]
    entity: Option<String>,
}

#[derive(Deserialize)]
struct RawUtterance {
    data: Vec<RawChunk>,
}

/// Loads a corpus from `path` (file or directory) in the given layout.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    match format {
        DatasetFormat::ChunkedJson => load_chunked_json(path),
    }
}

fn load_chunked_json(path: &Path) -> Result<Dataset> {
    let files = json_files(path)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "no .json files under {}",
            path.display()
        )));
    }
    let mut utterances = Vec::new();
    for file in files {
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let raw: BTreeMap<String, Vec<RawUtterance>> =
            serde_json::from_str(&text).map_err(|e| Error::json(&file, &e))?;
        for (intent, raw_utts) in raw {
            for raw_utt in raw_utts {
                utterances.push(Utterance {
                    chunks: raw_utt
                        .data
                        .into_iter()
                        .map(|c| SlotChunk {
                            text: c.text,
                            slot: c.entity,
                        })
                        .collect(),
                    intent: intent.clone(),
                });
            }
        }
    }
    Dataset::from_utterances(utterances)
}

fn json_files(path: &Path) -> Result<Vec<PathBuf>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Splits text into normalized tokens. See the module docs for the rule.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &ch) in chars.iter().enumerate() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if ch == '\''
            && i > 0
            && chars[i - 1].is_alphanumeric()
            && chars.get(i + 1).is_some_and(|c| c.is_alphanumeric())
        {
            current.push(ch);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// True for tokens of the `[name]` placeholder form.
pub fn is_placeholder(token: &str) -> bool {
    token.len() > 2 && token.starts_with('[') && token.ends_with(']')
}

/// Placeholder token for a slot name.
pub fn placeholder(slot: &str) -> String {
    format!("[{slot}]")
}

/// Replaces every slot-tagged chunk with its placeholder token and tokenizes
/// the rest: "Weather in " + "Paris"/city becomes `weather in [city]`.
pub fn delexicalize(utterance: &Utterance) -> Pattern {
    let mut tokens = Vec::new();
    for chunk in &utterance.chunks {
        match &chunk.slot {
            Some(slot) => tokens.push(placeholder(slot)),
            None => tokens.extend(tokenize(&chunk.text)),
        }
    }
    Pattern(tokens)
}

/// Replaces each placeholder with a value drawn uniformly from its multiset
/// (one seeded stream, consumed left to right) and joins tokens with spaces.
pub fn relexicalize(pattern: &Pattern, slots: &SlotDictionary, rng_seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut parts: Vec<&str> = Vec::with_capacity(pattern.len());
    for token in pattern.tokens() {
        if is_placeholder(token) {
            let name = &token[1..token.len() - 1];
            let values = slots
                .values(name)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::Dataset(format!("no stored values for slot {name:?}")))?;
            parts.push(&values[rng.random_range(0..values.len())]);
        } else {
            parts.push(token);
        }
    }
    Ok(parts.join(" "))
}

/// Token-to-id mapping with fixed special tokens at ids 0..=3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds the lookup index; needed after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id for a token, falling back to UNK.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for token in &self.tokens {
            hasher.update(token.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Builds a vocabulary over all pattern tokens seen at least `min_count`
/// times. Special tokens occupy ids 0..=3; the rest follow in lexicographic
/// order.
pub fn build_vocabulary<'a, I>(patterns: I, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a Pattern>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for pattern in patterns {
        for token in pattern.tokens() {
            *counts.entry(token.as_str()).or_insert(0) += 1;
        }
    }
    let mut tokens = vec![
        PAD_TOKEN.to_owned(),
        UNK_TOKEN.to_owned(),
        SOS_TOKEN.to_owned(),
        EOS_TOKEN.to_owned(),
    ];
    tokens.extend(
        counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .map(|(t, _)| t.to_owned()),
    );
    let mut vocab = Vocabulary {
        tokens,
        index: HashMap::new(),
    };
    vocab.reindex();
    vocab
}

/// Encodes a pattern as exactly `max_len` ids: start marker, token ids
/// (truncated to fit), end marker, then padding. Unknown tokens map to UNK.
pub fn encode_pattern(pattern: &Pattern, vocab: &Vocabulary, max_len: usize) -> Result<Vec<usize>> {
    if max_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "max_len must be at least 2 to fit the sequence markers, got {max_len}"
        )));
    }
    let body = pattern.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(SOS_ID);
    ids.extend(pattern.tokens()[..body].iter().map(|t| vocab.id_or_unk(t)));
    ids.push(EOS_ID);
    ids.resize(max_len, PAD_ID);
    Ok(ids)
}

/// Decodes ids back to a pattern, stopping at the end marker and skipping
/// padding and sequence markers.
pub fn decode_ids(ids: &[usize], vocab: &Vocabulary) -> Pattern {
    let mut tokens = Vec::new();
    for &id in ids {
        if id == EOS_ID {
            break;
        }
        if id == PAD_ID || id == SOS_ID {
            continue;
        }
        if let Some(token) = vocab.token(id) {
            tokens.push(token.to_owned());
        }
    }
    Pattern(tokens)
}

/// Draws `n` utterances without replacement. With `balanced` set, per-intent
/// counts differ by at most one whenever every intent has enough utterances;
/// intents short on data hand their quota to the others deterministically.
pub fn subsample(dataset: &Dataset, n: usize, seed: u64, balanced: bool) -> Result<Dataset> {
    if n > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {n} utterances from a dataset of {}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = if balanced && !dataset.intents.is_empty() {
        let mut groups: Vec<Vec<usize>> = dataset
            .intents
            .iter()
            .map(|intent| dataset.indices_of_intent(intent))
            .collect();
        for group in &mut groups {
            group.shuffle(&mut rng);
        }
        // +1 quotas go to a seeded random choice of intents.
        let k = groups.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let mut quotas = vec![n / k; k];
        for &i in order.iter().take(n % k) {
            quotas[i] += 1;
        }
        // Intents short on data spill their quota to the others, most
        // underfull first, ties by intent order.
        let mut total_short: usize = quotas
            .iter()
            .zip(&groups)
            .map(|(&q, g)| q.saturating_sub(g.len()))
            .sum();
        for (quota, group) in quotas.iter_mut().zip(&groups) {
            *quota = (*quota).min(group.len());
        }
        while total_short > 0 {
            let recipient = (0..k)
                .filter(|&i| quotas[i] < groups[i].len())
                .min_by_key(|&i| (quotas[i], i))
                .expect("n <= dataset len guarantees spare capacity");
            quotas[recipient] += 1;
            total_short -= 1;
        }
        groups
            .iter()
            .zip(&quotas)
            .flat_map(|(group, &quota)| group[..quota].iter().copied())
            .collect()
    } else {
        let mut indices: Vec<usize> = (0..dataset.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(n);
        indices
    };
    chosen.sort_unstable();
    let utterances: Vec<Utterance> = chosen
        .iter()
        .map(|&i| dataset.utterances[i].clone())
        .collect();
    Dataset::from_utterances(utterances)
}

/// Writes one `utterance_id,intent,pattern` row per pattern.
pub fn export_patterns_csv<W: std::io::Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["utterance_id", "intent", "pattern"])
        .and_then(|()| {
            for (i, (utt, pattern)) in dataset.utterances.iter().zip(&dataset.patterns).enumerate()
            {
                w.write_record([&i.to_string(), &utt.intent, &pattern.to_string()])?;
            }
            w.flush().map_err(csv::Error::from)
        })
        .map_err(|e| Error::Dataset(format!("pattern CSV export failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn weather_utterance() -> Utterance {
        Utterance {
            chunks: vec![
                SlotChunk::plain("Weather in "),
                SlotChunk::slotted("Paris", "City"),
            ],
            intent: "GetWeather".into(),
        }
    }

    #[test]
    fn tokenize_lowercases_and_detaches_punctuation() {
        assert_eq!(tokenize("Weather in Paris"), vec!["weather", "in", "paris"]);
        assert_eq!(
            tokenize("What's the weather, now?"),
            vec!["what's", "the", "weather", ",", "now", "?"]
        );
        assert_eq!(tokenize("  10:30  "), vec!["10", ":", "30"]);
        assert_eq!(tokenize("rock 'n roll"), vec!["rock", "'", "n", "roll"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn delexicalize_replaces_slots_with_placeholders() {
        let pattern = delexicalize(&weather_utterance());
        assert_eq!(pattern.tokens(), ["weather", "in", "[City]"]);
        // No-slot utterance is plain tokenization.
        let utt = Utterance {
            chunks: vec![SlotChunk::plain("Play some jazz")],
            intent: "PlayMusic".into(),
        };
        assert_eq!(delexicalize(&utt).tokens(), ["play", "some", "jazz"]);
    }

    #[test]
    fn relexicalize_draws_stored_values() {
        let pattern = Pattern(vec!["weather".into(), "in".into(), "[City]".into()]);
        let mut slots = SlotDictionary::new();
        slots.insert("City", "Paris");
        let s = relexicalize(&pattern, &slots, 7).unwrap();
        assert_eq!(s, "weather in paris");
        // Same seed, same draw.
        assert_eq!(relexicalize(&pattern, &slots, 7).unwrap(), s);
    }

    #[test]
    fn relexicalize_unknown_slot_is_an_error() {
        let pattern = Pattern(vec!["[Country]".into()]);
        let slots = SlotDictionary::new();
        assert!(relexicalize(&pattern, &slots, 0).is_err());
    }

    #[test]
    fn round_trip_matches_normalized_text() {
        let utt = weather_utterance();
        let pattern = delexicalize(&utt);
        let mut slots = SlotDictionary::new();
        slots.insert("City", "Paris");
        let full: String = utt
            .chunks
            .iter()
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join("");
        assert_eq!(
            relexicalize(&pattern, &slots, 3).unwrap(),
            tokenize(&full).join(" ")
        );
    }

    #[test]
    fn empty_chunk_list_is_rejected() {
        let err = Dataset::from_utterances(vec![Utterance {
            chunks: vec![],
            intent: "X".into(),
        }])
        .unwrap_err();
        assert!(matches!(err, Error::Dataset(_)));
    }

    #[test]
    fn load_reports_json_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\n  \"X\": [ {\"data\": [}\n]}").unwrap();
        match load_dataset(&path, DatasetFormat::ChunkedJson) {
            Err(Error::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a JSON error, got {other:?}"),
        }
    }

    #[test]
    fn load_sorts_intents_and_keeps_patterns_parallel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.json");
        std::fs::write(
            &path,
            r#"{
              "PlayMusic": [{"data": [{"text": "play "}, {"text": "Help", "entity": "track"}]}],
              "GetWeather": [{"data": [{"text": "weather in "}, {"text": "Oslo", "entity": "City"}]}]
            }"#,
        )
        .unwrap();
        let ds = load_dataset(&path, DatasetFormat::ChunkedJson).unwrap();
        assert_eq!(ds.intents, ["GetWeather", "PlayMusic"]);
        assert_eq!(ds.utterances.len(), ds.patterns.len());
        assert_eq!(ds.slots.values("City").unwrap(), ["oslo"]);
        assert_eq!(ds.slots.values("track").unwrap(), ["help"]);
    }

    #[test]
    fn vocabulary_keeps_specials_and_sorted_tokens() {
        let patterns = vec![
            Pattern::from_joined("b a"),
            Pattern::from_joined("a c"),
            Pattern::from_joined("a"),
        ];
        let vocab = build_vocabulary(&patterns, 1);
        assert_eq!(vocab.token(PAD_ID), Some(PAD_TOKEN));
        assert_eq!(vocab.token(UNK_ID), Some(UNK_TOKEN));
        assert_eq!(vocab.token(SOS_ID), Some(SOS_TOKEN));
        assert_eq!(vocab.token(EOS_ID), Some(EOS_TOKEN));
        assert_eq!(vocab.tokens()[4..], ["a", "b", "c"]);
        // min_count filters singletons, specials stay.
        let vocab2 = build_vocabulary(&patterns, 2);
        assert_eq!(vocab2.tokens()[4..], ["a"]);
        let vocab3 = build_vocabulary(&patterns, 1000);
        assert_eq!(vocab3.len(), 4);
    }

    #[test]
    fn encode_pads_truncates_and_marks() {
        let patterns = vec![Pattern::from_joined("a b c")];
        let vocab = build_vocabulary(&patterns, 1);
        let empty = encode_pattern(&Pattern(vec![]), &vocab, 6).unwrap();
        assert_eq!(empty, [SOS_ID, EOS_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]);

        let long = Pattern::from_joined("a b c a b c a b c");
        let ids = encode_pattern(&long, &vocab, 6).unwrap();
        assert_eq!(ids.len(), 6);
        assert_eq!(ids[0], SOS_ID);
        assert_eq!(ids[5], EOS_ID);

        let oov = encode_pattern(&Pattern::from_joined("a zzz"), &vocab, 6).unwrap();
        assert_eq!(oov.iter().filter(|&&id| id == UNK_ID).count(), 1);

        assert!(encode_pattern(&Pattern(vec![]), &vocab, 1).is_err());
    }

    #[test]
    fn decode_inverts_encode_for_short_patterns() {
        let patterns = vec![Pattern::from_joined("a b c")];
        let vocab = build_vocabulary(&patterns, 1);
        let p = Pattern::from_joined("b c a");
        let ids = encode_pattern(&p, &vocab, 8).unwrap();
        assert_eq!(decode_ids(&ids, &vocab), p);
    }

    fn toy_dataset(per_intent: &[(&str, usize)]) -> Dataset {
        let mut utterances = Vec::new();
        for &(intent, count) in per_intent {
            for i in 0..count {
                utterances.push(Utterance {
                    chunks: vec![SlotChunk::plain(format!("{intent} query {i}"))],
                    intent: intent.into(),
                });
            }
        }
        Dataset::from_utterances(utterances).unwrap()
    }

    #[test]
    fn balanced_subsample_spreads_quota() {
        // 200 from 7 equally stocked intents: counts land in {28, 29}.
        let names: Vec<String> = (0..7).map(|i| format!("intent{i}")).collect();
        let spec: Vec<(&str, usize)> = names.iter().map(|n| (n.as_str(), 60)).collect();
        let ds = toy_dataset(&spec);
        let sub = subsample(&ds, 200, 11, true).unwrap();
        assert_eq!(sub.len(), 200);
        let mut counts: Vec<usize> = sub
            .intents
            .iter()
            .map(|i| sub.indices_of_intent(i).len())
            .collect();
        counts.sort_unstable();
        assert!(counts.iter().all(|&c| c == 28 || c == 29), "{counts:?}");
        assert_eq!(counts.iter().sum::<usize>(), 200);
    }

    #[test]
    fn subsample_whole_dataset_is_identity_up_to_nothing() {
        let ds = toy_dataset(&[("a", 3), ("b", 2)]);
        let sub = subsample(&ds, 5, 0, true).unwrap();
        assert_eq!(sub.utterances, ds.utterances);
        assert!(subsample(&ds, 6, 0, false).is_err());
    }

    #[test]
    fn unbalanced_intent_spills_quota() {
        let ds = toy_dataset(&[("scarce", 1), ("rich", 9)]);
        let sub = subsample(&ds, 6, 5, true).unwrap();
        assert_eq!(sub.len(), 6);
        assert_eq!(sub.indices_of_intent("scarce").len(), 1);
        assert_eq!(sub.indices_of_intent("rich").len(), 5);
    }

    #[test]
    fn export_csv_quotes_commas() {
        let ds = toy_dataset(&[("a", 1)]);
        let mut buf = Vec::new();
        export_patterns_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("utterance_id,intent,pattern\n"));
        assert!(text.contains("a query 0"));
    }

    proptest! {
        #[test]
        fn prop_round_trip_with_own_values(
            words in proptest::collection::vec("[a-z]{1,6}", 1..6),
            slot_value in "[A-Z][a-z]{1,5}",
        ) {
            let utt = Utterance {
                chunks: vec![
                    SlotChunk::plain(words.join(" ")),
                    SlotChunk::slotted(slot_value.clone(), "Thing"),
                ],
                intent: "X".into(),
            };
            let pattern = delexicalize(&utt);
            let mut slots = SlotDictionary::new();
            slots.insert("Thing", &slot_value);
            let raw: String = format!("{} {}", words.join(" "), slot_value);
            prop_assert_eq!(
                relexicalize(&pattern, &slots, 0).unwrap(),
                tokenize(&raw).join(" ")
            );
        }

        #[test]
        fn prop_encode_is_exact_length(
            tokens in proptest::collection::vec("[a-z]{1,4}", 0..30),
            max_len in 2usize..25,
        ) {
            let pattern = Pattern(tokens);
            let vocab = build_vocabulary(std::iter::once(&pattern), 1);
            let ids = encode_pattern(&pattern, &vocab, max_len).unwrap();
            prop_assert_eq!(ids.len(), max_len);
            prop_assert_eq!(ids[0], SOS_ID);
            prop_assert!(ids.contains(&EOS_ID));
        }

        #[test]
        fn prop_vocabulary_ids_are_bijective(
            tokens in proptest::collection::vec("[a-z]{1,4}", 1..40),
        ) {
            let pattern = Pattern(tokens);
            let vocab = build_vocabulary(std::iter::once(&pattern), 1);
            for id in 0..vocab.len() {
                let token = vocab.token(id).unwrap();
                prop_assert_eq!(vocab.id(token), Some(id));
            }
        }

        #[test]
        fn prop_subsample_is_reproducible(seed in any::<u64>(), n in 0usize..12) {
            let ds = toy_dataset(&[("a", 5), ("b", 4), ("c", 3)]);
            let first = subsample(&ds, n, seed, true).unwrap();
            let second = subsample(&ds, n, seed, true).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}

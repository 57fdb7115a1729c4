//! Word vectors, mean-pooled sentence embeddings, and similarity-based
//! selection of reservoir sentences.
//!
//! A table serves a fixed-dimension vector for every token: pretrained vectors
//! when a word-vector file was loaded, otherwise a seeded random vector drawn
//! uniformly from [-0.5/dim, 0.5/dim]. The random vector is a pure function of
//! (table seed, token), so lookups are idempotent and independent of lookup
//! order; a cache makes repeats cheap. Sentences embed as the mean of their
//! token vectors, intents as the mean of their member sentences, and reservoir
//! selection keeps sentences whose cosine to some intent centroid exceeds a
//! threshold.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::RwLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Pattern};
use crate::error::{Error, Result};

pub type SentenceEmbedding = Vec<f64>;

/// Mean embedding of one intent's sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentCentroid {
    pub intent: String,
    pub vector: Vec<f64>,
}

/// Token-to-vector table with a deterministic out-of-vocabulary fallback.
#[derive(Debug)]
pub struct EmbeddingTable {
    dim: usize,
    seed: u64,
    pretrained: HashMap<String, Vec<f64>>,
    skipped_lines: usize,
    oov_cache: RwLock<HashMap<String, Vec<f64>>>,
}

impl Clone for EmbeddingTable {
    fn clone(&self) -> Self {
        EmbeddingTable {
            dim: self.dim,
            seed: self.seed,
            pretrained: self.pretrained.clone(),
            skipped_lines: self.skipped_lines,
            oov_cache: RwLock::new(self.oov_cache.read().expect("poisoned").clone()),
        }
    }
}

impl EmbeddingTable {
    /// A table with no pretrained vectors: every token takes the seeded
    /// fallback path.
    pub fn seeded(dim: usize, seed: u64) -> Self {
        EmbeddingTable {
            dim,
            seed,
            pretrained: HashMap::new(),
            skipped_lines: 0,
            oov_cache: RwLock::new(HashMap::new()),
        }
    }

    /// A table built from in-memory vectors; `seed` still drives the
    /// out-of-vocabulary fallback.
    pub fn from_vectors(dim: usize, seed: u64, pretrained: HashMap<String, Vec<f64>>) -> Self {
        debug_assert!(pretrained.values().all(|v| v.len() == dim));
        EmbeddingTable {
            dim,
            seed,
            pretrained,
            skipped_lines: 0,
            oov_cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lines dropped while loading because their field count was wrong.
    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    pub fn has_pretrained(&self, token: &str) -> bool {
        self.pretrained.contains_key(token)
    }

    /// The vector for `token`. Unknown tokens get a seeded uniform vector in
    /// [-0.5/dim, 0.5/dim], cached after the first draw.
    pub fn vector(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.pretrained.get(token) {
            return v.clone();
        }
        if let Some(v) = self.oov_cache.read().expect("poisoned").get(token) {
            return v.clone();
        }
        let v = oov_vector(self.dim, self.seed, token);
        self.oov_cache
            .write()
            .expect("poisoned")
            .entry(token.to_owned())
            .or_insert_with(|| v.clone());
        v
    }

    /// Computes and caches vectors for every token, so later `vector` calls
    /// only take the read lock.
    pub fn warm_up<'a, I: IntoIterator<Item = &'a str>>(&self, tokens: I) {
        for token in tokens {
            let _ = self.vector(token);
        }
    }
}

// FNV-1a, fixed here so fallback vectors never depend on std's hasher.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn oov_vector(dim: usize, seed: u64, token: &str) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(token.as_bytes()));
    let half = 0.5 / dim as f64;
    (0..dim).map(|_| rng.random_range(-half..half)).collect()
}

/// Loads a whitespace-separated word-vector file (`token v1 .. vdim` per
/// line). Lines whose field count is not dim+1 or whose numbers fail to parse
/// are skipped and counted; a file with no valid line is a format error.
pub fn load_word_embeddings(path: &Path, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pretrained = HashMap::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-empty line has a first field");
        let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        match values {
            Ok(v) if v.len() == dim => {
                pretrained.insert(token.to_owned(), v);
            }
            _ => skipped += 1,
        }
    }
    if pretrained.is_empty() {
        return Err(Error::EmbeddingFormat {
            path: path.to_path_buf(),
            reason: format!("no line held a token followed by {dim} numbers"),
        });
    }
    Ok(EmbeddingTable {
        dim,
        seed,
        pretrained,
        skipped_lines: skipped,
        oov_cache: RwLock::new(HashMap::new()),
    })
}

/// Mean of the token vectors; the empty sentence embeds as the zero vector.
pub fn embed_sentence(table: &EmbeddingTable, tokens: &[String]) -> SentenceEmbedding {
    let mut sum = vec![0.0; table.dim()];
    if tokens.is_empty() {
        return sum;
    }
    for token in tokens {
        for (s, v) in sum.iter_mut().zip(table.vector(token)) {
            *s += v;
        }
    }
    let n = tokens.len() as f64;
    for s in &mut sum {
        *s /= n;
    }
    sum
}

pub fn embed_pattern(table: &EmbeddingTable, pattern: &Pattern) -> SentenceEmbedding {
    embed_sentence(table, pattern.tokens())
}

/// One centroid per dataset intent, in the dataset's (sorted) intent order.
pub fn intent_centroids(dataset: &Dataset, table: &EmbeddingTable) -> Vec<IntentCentroid> {
    dataset
        .intents
        .iter()
        .map(|intent| {
            let members = dataset.patterns_of_intent(intent);
            let mut vector = vec![0.0; table.dim()];
            for pattern in &members {
                for (c, v) in vector.iter_mut().zip(embed_pattern(table, pattern)) {
                    *c += v;
                }
            }
            let n = members.len().max(1) as f64;
            for c in &mut vector {
                *c /= n;
            }
            IntentCentroid {
                intent: intent.clone(),
                vector,
            }
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na * nb))
    }
}

/// For each sentence, its best cosine against the centroids; `None` when the
/// sentence (or every centroid) has zero norm.
pub fn max_centroid_cosines(
    dataset: &Dataset,
    centroids: &[IntentCentroid],
    table: &EmbeddingTable,
) -> Vec<Option<f64>> {
    dataset
        .patterns
        .iter()
        .map(|pattern| {
            let emb = embed_pattern(table, pattern);
            centroids
                .iter()
                .filter_map(|c| cosine(&emb, &c.vector))
                .max_by(|a, b| a.total_cmp(b))
        })
        .collect()
}

/// Indices of reservoir sentences whose best centroid cosine strictly exceeds
/// `beta`. Zero-norm sentences are never selected.
pub fn select_reservoir(
    dataset: &Dataset,
    centroids: &[IntentCentroid],
    table: &EmbeddingTable,
    beta: f64,
) -> Vec<usize> {
    max_centroid_cosines(dataset, centroids, table)
        .into_iter()
        .enumerate()
        .filter(|(_, cos)| cos.is_some_and(|c| c > beta))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SlotChunk, Utterance};
    use approx::assert_abs_diff_eq;

    fn table_from(lines: &str, dim: usize) -> EmbeddingTable {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.txt");
        std::fs::write(&path, lines).unwrap();
        load_word_embeddings(&path, dim, 0).unwrap()
    }

    #[test]
    fn load_parses_and_counts_skips() {
        let table = table_from("a 1.0 0.0\nbroken 1.0\nb 0.0 1.0\nalso broken\n", 2);
        assert_eq!(table.vector("a"), [1.0, 0.0]);
        assert_eq!(table.vector("b"), [0.0, 1.0]);
        assert_eq!(table.skipped_lines(), 2);
    }

    #[test]
    fn load_rejects_vectorless_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.txt");
        std::fs::write(&path, "only junk here\n").unwrap();
        assert!(matches!(
            load_word_embeddings(&path, 2, 0),
            Err(Error::EmbeddingFormat { .. })
        ));
        assert!(matches!(
            load_word_embeddings(&dir.path().join("missing.txt"), 2, 0),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn oov_lookups_are_idempotent_and_order_free() {
        let t1 = EmbeddingTable::seeded(8, 42);
        let t2 = EmbeddingTable::seeded(8, 42);
        let first = t1.vector("mystery");
        assert_eq!(t1.vector("mystery"), first);
        // Different lookup order, same vectors.
        let _ = t2.vector("other");
        assert_eq!(t2.vector("mystery"), first);
        // Range contract.
        let half = 0.5 / 8.0;
        assert!(first.iter().all(|&v| (-half..half).contains(&v)));
        // Different seed, different vector.
        assert_ne!(EmbeddingTable::seeded(8, 43).vector("mystery"), first);
    }

    #[test]
    fn mean_pooling_examples() {
        let table = table_from("a 1.0 0.0\nb 0.0 1.0\nneg -1.0 -0.0\n", 2);
        // Single token: the vector itself.
        assert_eq!(embed_sentence(&table, &["a".into()]), [1.0, 0.0]);
        // Opposite vectors cancel.
        let z = embed_sentence(&table, &["a".into(), "neg".into()]);
        assert_abs_diff_eq!(z[0], 0.0);
        // Mean of (1,0) and (0,1).
        let m = embed_sentence(&table, &["a".into(), "b".into()]);
        assert_abs_diff_eq!(m[0], 0.5);
        assert_abs_diff_eq!(m[1], 0.5);
        // Empty sentence: zero vector.
        assert_eq!(embed_sentence(&table, &[]), [0.0, 0.0]);
    }

    fn single_token_dataset(items: &[(&str, &str)]) -> Dataset {
        let utterances = items
            .iter()
            .map(|&(token, intent)| Utterance {
                chunks: vec![SlotChunk::plain(token)],
                intent: intent.into(),
            })
            .collect();
        Dataset::from_utterances(utterances).unwrap()
    }

    #[test]
    fn centroid_is_mean_of_member_sentences() {
        let table = table_from("a 1.0 0.0\nb 0.0 1.0\nc 1.0 1.0\n", 2);
        let ds = single_token_dataset(&[("a", "X"), ("b", "X"), ("c", "X"), ("a", "Y")]);
        let cents = intent_centroids(&ds, &table);
        assert_eq!(cents.len(), 2);
        // (1,0), (0,1), (1,1) average to (2/3, 2/3).
        assert_abs_diff_eq!(cents[0].vector[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cents[0].vector[1], 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(cents[1].vector, [1.0, 0.0]);
    }

    #[test]
    fn selection_thresholds_and_drops_zero_norm() {
        let table = table_from("a 1.0 0.0\nb 0.0 1.0\nz 0.0 0.0\n", 2);
        let seed = single_token_dataset(&[("a", "X")]);
        let cents = intent_centroids(&seed, &table);
        let reservoir = single_token_dataset(&[("a", "R"), ("b", "R"), ("z", "R")]);
        // Threshold below everything: zero-norm still dropped.
        assert_eq!(select_reservoir(&reservoir, &cents, &table, -1.0), [0, 1]);
        // Only the collinear sentence clears 0.9.
        assert_eq!(select_reservoir(&reservoir, &cents, &table, 0.9), [0]);
        // Strict inequality: cosine of 1.0 does not clear beta = 1.0.
        assert!(select_reservoir(&reservoir, &cents, &table, 1.0).is_empty());
        let cals = max_centroid_cosines(&reservoir, &cents, &table);
        assert_abs_diff_eq!(cals[0].unwrap(), 1.0);
        assert_abs_diff_eq!(cals[1].unwrap(), 0.0);
        assert_eq!(cals[2], None);
    }

    #[test]
    fn selection_is_monotone_in_beta() {
        let table = EmbeddingTable::seeded(16, 7);
        let items: Vec<(String, &str)> = (0..40)
            .map(|i| (format!("tok{i} tok{} shared", i % 5), "R"))
            .collect();
        let utterances = items
            .iter()
            .map(|(text, intent)| Utterance {
                chunks: vec![SlotChunk::plain(text.clone())],
                intent: (*intent).into(),
            })
            .collect();
        let reservoir = Dataset::from_utterances(utterances).unwrap();
        let seed = single_token_dataset(&[("shared", "X"), ("tok1", "X")]);
        let cents = intent_centroids(&seed, &table);
        let mut previous: Option<Vec<usize>> = None;
        for beta in [-1.0, 0.0, 0.3, 0.6, 0.9] {
            let selected = select_reservoir(&reservoir, &cents, &table, beta);
            if let Some(prev) = &previous {
                assert!(selected.iter().all(|i| prev.contains(i)));
                assert!(selected.len() <= prev.len());
            }
            previous = Some(selected);
        }
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let a = vec![0.3, -0.7, 0.2];
        let b = vec![0.1, 0.4, -0.9];
        let scaled: Vec<f64> = b.iter().map(|x| x * 37.5).collect();
        assert_abs_diff_eq!(
            cosine(&a, &b).unwrap(),
            cosine(&a, &scaled).unwrap(),
            epsilon = 1e-12
        );
        assert_eq!(cosine(&a, &[0.0, 0.0, 0.0]), None);
    }
}

//! Mixing the labelled seed set with reservoir sentences for training.
//!
//! The transfer recipe appends one extra class for reservoir sentences:
//! classes 0..k-1 are the seed intents (sorted), class k is the catch-all
//! reservoir class. Per-class supervision weights are 1 for real intents and
//! a caller-chosen weight for the catch-all class; weight 0 means reservoir
//! sentences train the model unsupervised. The pseudo-labelling baseline
//! instead assigns each reservoir sentence its nearest intent centroid and
//! keeps the plain k-class layout.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Pattern};
use crate::embeddings::{cosine, embed_pattern, EmbeddingTable, IntentCentroid};
use crate::error::{Error, Result};

/// Class label of the reservoir catch-all class.
pub const RESERVOIR_CLASS: &str = "None";

/// Where a training example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Labelled,
    Reservoir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureExample {
    pub pattern: Pattern,
    pub class: usize,
    pub origin: Origin,
}

/// A training set with its class inventory and per-class supervision weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMixture {
    /// Class index to name; the catch-all class, when present, sits last.
    pub classes: Vec<String>,
    pub alpha: Vec<f64>,
    pub examples: Vec<MixtureExample>,
    /// Index of the catch-all class, if the mixture has one.
    pub none_class: Option<usize>,
}

impl LabeledMixture {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// One JSON object per line: pattern, class index and name, origin.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            pattern: String,
            class: usize,
            class_name: &'a str,
            origin: Origin,
        }
        for example in &self.examples {
            let row = Row {
                pattern: example.pattern.to_string(),
                class: example.class,
                class_name: &self.classes[example.class],
                origin: example.origin,
            };
            let line = serde_json::to_string(&row)
                .map_err(|e| Error::Dataset(format!("mixture dump: {e}")))?;
            writeln!(writer, "{line}").map_err(|e| Error::Dataset(format!("mixture dump: {e}")))?;
        }
        Ok(())
    }
}

fn draw_reservoir(selected: &[usize], n_reservoir: usize, seed: u64) -> Result<Vec<usize>> {
    if n_reservoir > selected.len() {
        return Err(Error::InvalidArgument(format!(
            "asked for {n_reservoir} reservoir sentences but only {} passed selection",
            selected.len()
        )));
    }
    let mut pool: Vec<usize> = selected.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(n_reservoir);
    pool.sort_unstable();
    Ok(pool)
}

/// Builds the transfer mixture: every seed utterance under its intent class,
/// plus `n_reservoir` sentences drawn (seeded, without replacement) from the
/// selected reservoir indices under the catch-all class. The supervision
/// vector is 1 everywhere except `alpha` on the catch-all class.
pub fn build_training_mixture(
    seed_set: &Dataset,
    reservoir: &Dataset,
    selected: &[usize],
    n_reservoir: usize,
    alpha: f64,
    seed: u64,
) -> Result<LabeledMixture> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "supervision weight must be nonnegative, got {alpha}"
        )));
    }
    let k = seed_set.intents.len();
    let mut classes = seed_set.intents.clone();
    classes.push(RESERVOIR_CLASS.to_owned());
    let mut alpha_vec = vec![1.0; k];
    alpha_vec.push(alpha);

    let mut examples: Vec<MixtureExample> = seed_set
        .utterances
        .iter()
        .zip(&seed_set.patterns)
        .map(|(utt, pattern)| MixtureExample {
            pattern: pattern.clone(),
            class: seed_set
                .intent_index(&utt.intent)
                .expect("dataset intents cover its utterances"),
            origin: Origin::Labelled,
        })
        .collect();
    for index in draw_reservoir(selected, n_reservoir, seed)? {
        examples.push(MixtureExample {
            pattern: reservoir.patterns[index].clone(),
            class: k,
            origin: Origin::Reservoir,
        });
    }
    Ok(LabeledMixture {
        classes,
        alpha: alpha_vec,
        examples,
        none_class: Some(k),
    })
}

/// Builds the pseudo-labelling baseline mixture: the same reservoir draw, but
/// each drawn sentence is filed under its highest-cosine intent centroid
/// (ties break to the lowest class index) and supervised with weight 1.
/// No catch-all class.
pub fn build_pseudo_labelled_set(
    seed_set: &Dataset,
    reservoir: &Dataset,
    selected: &[usize],
    n_reservoir: usize,
    centroids: &[IntentCentroid],
    table: &EmbeddingTable,
    seed: u64,
) -> Result<LabeledMixture> {
    if centroids.len() != seed_set.intents.len() {
        return Err(Error::InvalidArgument(format!(
            "{} centroids for {} intents",
            centroids.len(),
            seed_set.intents.len()
        )));
    }
    let mut examples: Vec<MixtureExample> = seed_set
        .utterances
        .iter()
        .zip(&seed_set.patterns)
        .map(|(utt, pattern)| MixtureExample {
            pattern: pattern.clone(),
            class: seed_set
                .intent_index(&utt.intent)
                .expect("dataset intents cover its utterances"),
            origin: Origin::Labelled,
        })
        .collect();
    for index in draw_reservoir(selected, n_reservoir, seed)? {
        let emb = embed_pattern(table, &reservoir.patterns[index]);
        let mut best = 0usize;
        let mut best_cos = f64::NEG_INFINITY;
        for (i, centroid) in centroids.iter().enumerate() {
            if let Some(c) = cosine(&emb, &centroid.vector) {
                if c > best_cos {
                    best_cos = c;
                    best = i;
                }
            }
        }
        examples.push(MixtureExample {
            pattern: reservoir.patterns[index].clone(),
            class: best,
            origin: Origin::Reservoir,
        });
    }
    Ok(LabeledMixture {
        classes: seed_set.intents.clone(),
        alpha: vec![1.0; seed_set.intents.len()],
        examples,
        none_class: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SlotChunk, Utterance};
    use crate::embeddings::intent_centroids;

    fn dataset(items: &[(&str, &str)]) -> Dataset {
        let utterances = items
            .iter()
            .map(|&(text, intent)| Utterance {
                chunks: vec![SlotChunk::plain(text)],
                intent: intent.into(),
            })
            .collect();
        Dataset::from_utterances(utterances).unwrap()
    }

    #[test]
    fn mixture_counts_and_alpha_layout() {
        let seed_set = dataset(&[("alpha one", "A"), ("beta one", "B"), ("beta two", "B")]);
        let reservoir = dataset(&[("raw one", "R"), ("raw two", "R"), ("raw three", "R")]);
        let mix = build_training_mixture(&seed_set, &reservoir, &[0, 1, 2], 2, 0.2, 9).unwrap();
        assert_eq!(mix.classes, ["A", "B", RESERVOIR_CLASS]);
        assert_eq!(mix.alpha, [1.0, 1.0, 0.2]);
        assert_eq!(mix.len(), 5);
        assert_eq!(mix.none_class, Some(2));
        // Class partition per origin.
        for example in &mix.examples {
            match example.origin {
                Origin::Labelled => assert!(example.class < 2),
                Origin::Reservoir => assert_eq!(example.class, 2),
            }
        }
    }

    #[test]
    fn zero_reservoir_keeps_catch_all_class() {
        let seed_set = dataset(&[("alpha", "A")]);
        let reservoir = dataset(&[("raw", "R")]);
        let mix = build_training_mixture(&seed_set, &reservoir, &[0], 0, 0.0, 1).unwrap();
        assert_eq!(mix.len(), 1);
        assert_eq!(mix.n_classes(), 2);
        assert_eq!(mix.alpha, [1.0, 0.0]);
    }

    #[test]
    fn oversized_draw_is_an_error() {
        let seed_set = dataset(&[("alpha", "A")]);
        let reservoir = dataset(&[("raw", "R")]);
        assert!(build_training_mixture(&seed_set, &reservoir, &[0], 2, 0.2, 1).is_err());
        assert!(build_training_mixture(&seed_set, &reservoir, &[0], 1, -0.5, 1).is_err());
    }

    #[test]
    fn mixture_draw_is_deterministic() {
        let seed_set = dataset(&[("alpha", "A")]);
        let reservoir = dataset(&[
            ("raw one", "R"),
            ("raw two", "R"),
            ("raw three", "R"),
            ("raw four", "R"),
        ]);
        let a = build_training_mixture(&seed_set, &reservoir, &[0, 1, 2, 3], 2, 0.2, 5).unwrap();
        let b = build_training_mixture(&seed_set, &reservoir, &[0, 1, 2, 3], 2, 0.2, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pseudo_labels_follow_nearest_centroid() {
        // Token vectors are seeded; identical sentences share embeddings, so a
        // reservoir duplicate of a seed sentence lands on that seed's intent.
        let table = EmbeddingTable::seeded(16, 3);
        let seed_set = dataset(&[
            ("weather in oslo", "Weather"),
            ("play some jazz", "Music"),
        ]);
        let reservoir = dataset(&[
            ("play some jazz", "R"),
            ("weather in oslo", "R"),
        ]);
        let centroids = intent_centroids(&seed_set, &table);
        let mix = build_pseudo_labelled_set(
            &seed_set, &reservoir, &[0, 1], 2, &centroids, &table, 0,
        )
        .unwrap();
        assert_eq!(mix.none_class, None);
        assert_eq!(mix.classes, ["Music", "Weather"]);
        assert_eq!(mix.alpha, [1.0, 1.0]);
        let reservoir_classes: Vec<(String, usize)> = mix
            .examples
            .iter()
            .filter(|e| e.origin == Origin::Reservoir)
            .map(|e| (e.pattern.to_string(), e.class))
            .collect();
        for (pattern, class) in reservoir_classes {
            match pattern.as_str() {
                "play some jazz" => assert_eq!(class, 0),
                "weather in oslo" => assert_eq!(class, 1),
                other => panic!("unexpected pattern {other}"),
            }
        }
    }

    #[test]
    fn pseudo_tie_breaks_to_lowest_class() {
        use crate::embeddings::IntentCentroid;
        let table = {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("v.txt");
            std::fs::write(&path, "both 1.0 1.0\na 1.0 0.0\nb 0.0 1.0\n").unwrap();
            crate::embeddings::load_word_embeddings(&path, 2, 0).unwrap()
        };
        let seed_set = dataset(&[("a", "First"), ("b", "Second")]);
        let reservoir = dataset(&[("both", "R")]);
        let centroids = vec![
            IntentCentroid { intent: "First".into(), vector: vec![1.0, 0.0] },
            IntentCentroid { intent: "Second".into(), vector: vec![0.0, 1.0] },
        ];
        let mix = build_pseudo_labelled_set(
            &seed_set, &reservoir, &[0], 1, &centroids, &table, 0,
        )
        .unwrap();
        let reservoir_example = mix
            .examples
            .iter()
            .find(|e| e.origin == Origin::Reservoir)
            .unwrap();
        assert_eq!(reservoir_example.class, 0);
    }

    #[test]
    fn jsonl_dump_is_one_valid_object_per_line() {
        let seed_set = dataset(&[("alpha one", "A")]);
        let reservoir = dataset(&[("raw one", "R")]);
        let mix = build_training_mixture(&seed_set, &reservoir, &[0], 1, 0.2, 1).unwrap();
        let mut buf = Vec::new();
        mix.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for line in lines {
            let value: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(value.get("pattern").is_some());
            assert!(value.get("class").is_some());
            assert!(value.get("origin").is_some());
        }
    }
}

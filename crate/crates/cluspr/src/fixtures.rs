//! Deterministic corpora, indexes, and vector models for tests and the
//! bundled evaluation.
//!
//! Everything here is reproducible: the same call always returns the same
//! documents, vectors, and sealed identifiers, so tests and the evaluation
//! harness can assert on exact artifacts.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{
    self, Document, InvertedIndex, KeyMaterial, SealedToken, CorpusError,
};

/// A fixed 32-byte key for demonstration workspaces and tests.
pub fn demo_key() -> KeyMaterial {
    KeyMaterial::new((0u8..32).map(|b| b.wrapping_mul(37).wrapping_add(11)).collect())
        .expect("32-byte key is valid")
}

// ---------------------------------------------------------------------------
// Worked example: five tokens over six documents
// ---------------------------------------------------------------------------

/// Token names of the worked example, in fixed presentation order.
pub const EXAMPLE_WORDS: [&str; 5] = ["book", "solve", "traffic", "net", "enter"];

/// Document names of the worked example.
pub const EXAMPLE_DOCS: [&str; 6] = ["d1", "d2", "d3", "d4", "d5", "d6"];

/// Frequencies of the worked example, rows following [`EXAMPLE_WORDS`] and
/// columns following [`EXAMPLE_DOCS`]. Zero means the token does not occur.
pub const EXAMPLE_FREQS: [[u64; 6]; 5] = [
    [30, 0, 23, 4, 40, 0],  // book
    [5, 0, 0, 60, 34, 0],   // solve
    [0, 23, 0, 30, 0, 0],   // traffic
    [52, 49, 0, 23, 0, 26], // net
    [0, 45, 68, 0, 3, 5],   // enter
];

/// The worked five-token example as a sealed index plus its plaintext side.
pub struct WorkedExample {
    pub key: KeyMaterial,
    pub index: InvertedIndex,
    /// sealed token → plaintext word
    pub dictionary: HashMap<SealedToken, String>,
}

/// Builds the worked example by injecting the frequency table directly,
/// bypassing text extraction.
pub fn worked_example() -> WorkedExample {
    let key = demo_key();
    let mut index = InvertedIndex::new();
    for (w, word) in EXAMPLE_WORDS.iter().enumerate() {
        for (d, doc) in EXAMPLE_DOCS.iter().enumerate() {
            let freq = EXAMPLE_FREQS[w][d];
            if freq > 0 {
                index.add_occurrences(key.seal_token(word), key.seal_doc(doc), freq);
            }
        }
    }
    index.set_doc_count(EXAMPLE_DOCS.len());
    let dictionary = EXAMPLE_WORDS
        .iter()
        .map(|w| (key.seal_token(w), (*w).to_owned()))
        .collect();
    WorkedExample { key, index, dictionary }
}

// ---------------------------------------------------------------------------
// Random indexes for property tests
// ---------------------------------------------------------------------------

/// A random 64-char lowercase hex string.
pub fn random_hex(rng: &mut impl Rng) -> String {
    let mut s = String::with_capacity(64);
    for _ in 0..32 {
        write!(s, "{:02x}", rng.gen::<u8>()).expect("writing to String");
    }
    s
}

/// A random sealed index with up to `max_tokens` tokens over up to
/// `max_docs` documents. Every token has at least one posting.
pub fn random_index(
    rng: &mut impl Rng,
    max_tokens: usize,
    max_docs: usize,
) -> InvertedIndex {
    let num_tokens = rng.gen_range(1..=max_tokens);
    let num_docs = rng.gen_range(1..=max_docs);
    let docs: Vec<_> = (0..num_docs)
        .map(|_| crate::corpus::SealedDocId::from_hex(&random_hex(rng)).unwrap())
        .collect();
    let mut index = InvertedIndex::new();
    for _ in 0..num_tokens {
        let token = SealedToken::from_hex(&random_hex(rng)).unwrap();
        let spread = rng.gen_range(1..=num_docs);
        let mut chosen: Vec<usize> = (0..num_docs).collect();
        chosen.shuffle(rng);
        for &d in chosen.iter().take(spread) {
            index.add_occurrences(token.clone(), docs[d].clone(), rng.gen_range(1..=50));
        }
    }
    index.set_doc_count(num_docs);
    index
}

// ---------------------------------------------------------------------------
// Mini corpus: four planted topics plus noise
// ---------------------------------------------------------------------------

/// Words per tight topic (first three topics).
const TOPIC_WORDS: usize = 22;
/// Words in the late-arriving fourth topic.
const SHIFT_TOPIC_WORDS: usize = 45;
/// Shared noise words sprinkled across all documents.
const FILLER_WORDS: usize = 45;
/// Distinct topical words sampled into each document.
const WORDS_PER_DOC: usize = 16;
/// Documents per base topic.
const DOCS_PER_TOPIC: usize = 25;
/// Vector dimensionality of the bundled model.
const MODEL_DIMS: usize = 16;
/// Extra model-only words, bringing the vocabulary to ~500.
const PAD_WORDS: usize = 344;

/// Seed for all mini-corpus randomness.
const MINI_SEED: u64 = 0x00c1_05e7;

/// A small four-topic corpus with a deliberately late fourth topic.
///
/// The first three topics arrive in `base_docs` (25 documents each); the
/// fourth arrives in `shift_docs` and is sized so that a batch update over
/// it flips the re-cluster decision. Topic vectors in the bundled model are
/// tight for topics 1, 2, and 4, loose for topic 3 (which therefore sets a
/// low join threshold), and topic-4 words lean weakly toward one of the
/// base topics so an update without re-clustering degrades them.
pub struct MiniCorpus {
    pub key: KeyMaterial,
    pub base_docs: Vec<Document>,
    pub shift_docs: Vec<Document>,
    /// Vector model file content covering all non-rare corpus words.
    pub model_text: String,
    /// Twenty scripted queries, five per topic.
    pub queries: Vec<String>,
    /// Per-topic vocabulary (index 3 is the shifting topic).
    pub topic_words: [Vec<String>; 4],
    pub filler_words: Vec<String>,
}

impl MiniCorpus {
    /// All documents: base order followed by shift order.
    pub fn all_docs(&self) -> Vec<Document> {
        let mut docs = self.base_docs.clone();
        docs.extend(self.shift_docs.iter().cloned());
        docs
    }

    /// Writes one `<id>.txt` file per document into `dir`.
    pub fn write_corpus_dir(
        docs: &[Document],
        dir: &Path,
    ) -> Result<(), CorpusError> {
        fs::create_dir_all(dir)?;
        for doc in docs {
            fs::write(dir.join(format!("{}.txt", doc.id)), &doc.body)?;
        }
        Ok(())
    }

    /// Writes the bundled model to `path`.
    pub fn write_model_file(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, &self.model_text)?;
        Ok(())
    }

    /// The sealed→plaintext dictionary over every word that can occur in
    /// any document, as the trusted side would accumulate it.
    pub fn full_dictionary(&self) -> HashMap<SealedToken, String> {
        let mut dict = HashMap::new();
        let mut add = |w: &str| {
            dict.insert(self.key.seal_token(w), w.to_owned());
        };
        for topic in &self.topic_words {
            topic.iter().for_each(|w| add(w));
        }
        self.filler_words.iter().for_each(|w| add(w));
        for doc in self.base_docs.iter().chain(&self.shift_docs) {
            for term in corpus::normalize_terms(&doc.body) {
                dict.entry(self.key.seal_token(&term)).or_insert(term);
            }
        }
        dict
    }
}

fn topic_vocab(stem: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{stem}{i:02}")).collect()
}

/// Unit-length random direction.
fn random_unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..MODEL_DIMS).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn add_scaled(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

fn basis(axis: usize) -> Vec<f64> {
    let mut e = vec![0.0; MODEL_DIMS];
    e[axis] = 1.0;
    e
}

fn doc_body(rng: &mut ChaCha8Rng, topical: &[(String, u64)], extras: &[String]) -> String {
    let mut words: Vec<&str> = Vec::new();
    for (w, f) in topical {
        for _ in 0..*f {
            words.push(w);
        }
    }
    for w in extras {
        words.push(w);
    }
    words.shuffle(rng);
    words.join(" ")
}

/// Builds the bundled mini corpus. Deterministic: repeated calls agree.
pub fn mini_corpus() -> MiniCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(MINI_SEED);
    let key = demo_key();

    let topic_words = [
        topic_vocab("reef", TOPIC_WORDS),
        topic_vocab("fiber", TOPIC_WORDS),
        topic_vocab("ledger", TOPIC_WORDS),
        topic_vocab("orbit", SHIFT_TOPIC_WORDS),
    ];
    let filler_words = topic_vocab("hum", FILLER_WORDS);

    // --- vectors ---------------------------------------------------------
    // Topics 1, 2: tight around their own axis. Topic 3: loose around its
    // axis, so its coherency sets a low join threshold. Topic 4: tight
    // around a fourth axis with a weak lean toward base topic (i mod 3).
    let tight_noise = 0.333;
    let loose_noise = 1.73;
    let shift_core = 0.9;
    let shift_lean = 0.35;
    let shift_noise = 0.3;

    let mut vectors: Vec<(String, Vec<f64>)> = Vec::new();
    for (t, words) in topic_words.iter().enumerate().take(3) {
        let noise = if t == 2 { loose_noise } else { tight_noise };
        for w in words {
            let mut v = basis(t);
            add_scaled(&mut v, &random_unit(&mut rng), noise);
            vectors.push((w.clone(), v));
        }
    }
    for (i, w) in topic_words[3].iter().enumerate() {
        let mut v = vec![0.0; MODEL_DIMS];
        add_scaled(&mut v, &basis(3), shift_core);
        add_scaled(&mut v, &basis(i % 3), shift_lean);
        add_scaled(&mut v, &random_unit(&mut rng), shift_noise);
        vectors.push((w.clone(), v));
    }
    for w in &filler_words {
        vectors.push((w.clone(), random_unit(&mut rng)));
    }
    for i in 0..PAD_WORDS {
        vectors.push((format!("pad{i:03}"), random_unit(&mut rng)));
    }

    let mut model_text = format!("{} {}\n", vectors.len(), MODEL_DIMS);
    for (word, v) in &vectors {
        model_text.push_str(word);
        for x in v {
            write!(model_text, " {x:.6}").expect("writing to String");
        }
        model_text.push('\n');
    }

    // --- documents -------------------------------------------------------
    let sample_doc = |rng: &mut ChaCha8Rng,
                          vocab: &[String],
                          fillers: &[String],
                          rare: String|
     -> (Vec<(String, u64)>, Vec<String>) {
        let mut picked = vocab.to_vec();
        picked.shuffle(rng);
        picked.truncate(WORDS_PER_DOC);
        let topical: Vec<(String, u64)> = picked
            .into_iter()
            .map(|w| (w, rng.gen_range(1..=3)))
            .collect();
        let mut extra = fillers.to_vec();
        extra.shuffle(rng);
        extra.truncate(2);
        extra.push(rare);
        (topical, extra)
    };

    let mut base_docs = Vec::new();
    for t in 0..3 {
        for i in 0..DOCS_PER_TOPIC {
            let id = format!("d{:03}", t * DOCS_PER_TOPIC + i);
            let rare = format!("raref{:03}", t * DOCS_PER_TOPIC + i);
            let (topical, extra) =
                sample_doc(&mut rng, &topic_words[t], &filler_words, rare);
            let body = doc_body(&mut rng, &topical, &extra);
            base_docs.push(Document { id, body });
        }
    }
    let mut shift_docs = Vec::new();
    for i in 0..DOCS_PER_TOPIC {
        let id = format!("s{i:03}");
        let rare = format!("rarep{i:03}");
        let (topical, extra) =
            sample_doc(&mut rng, &topic_words[3], &filler_words, rare);
        let body = doc_body(&mut rng, &topical, &extra);
        shift_docs.push(Document { id, body });
    }

    // --- queries ---------------------------------------------------------
    // A word that a mean-threshold trim over the full corpus would drop is
    // unsearchable once clustered, so scripted queries only use words that
    // survive it: a word stays when its document count times the number of
    // distinct words reaches the total number of word→document pairs.
    let mut doc_counts: HashMap<String, usize> = HashMap::new();
    for doc in base_docs.iter().chain(&shift_docs) {
        let distinct: BTreeSet<String> =
            corpus::normalize_terms(&doc.body).into_iter().collect();
        for term in distinct {
            *doc_counts.entry(term).or_insert(0) += 1;
        }
    }
    let m = doc_counts.len() as u128;
    let pairs: u128 = doc_counts.values().map(|&c| c as u128).sum();
    let searchable =
        |w: &String| (doc_counts.get(w).copied().unwrap_or(0) as u128) * m >= pairs;

    let mut queries = Vec::new();
    for t in 0..4 {
        for _ in 0..5 {
            let mut words: Vec<String> =
                topic_words[t].iter().filter(|w| searchable(w)).cloned().collect();
            words.shuffle(&mut rng);
            let len = rng.gen_range(2..=3);
            queries.push(words[..len].join(" "));
        }
    }

    MiniCorpus {
        key,
        base_docs,
        shift_docs,
        model_text,
        queries,
        topic_words,
        filler_words,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_index;
    use crate::kestimate::{estimate_pipeline, TrimMode};

    #[test]
    fn worked_example_matches_frozen_frequencies() {
        let ex = worked_example();
        assert_eq!(ex.index.doc_count(), 6);
        assert_eq!(ex.index.token_count(), 5);
        let net = ex.key.seal_token("net");
        assert_eq!(ex.index.doc_association(&net), 4);
        assert_eq!(ex.index.freq_in(&net, &ex.key.seal_doc("d1")), 52);
        assert_eq!(ex.index.total_freq(&net), 150);
    }

    #[test]
    fn worked_example_trim_retains_three_tokens() {
        let ex = worked_example();
        let a = crate::kestimate::trim(&ex.index).unwrap();
        let mut kept: Vec<&str> = a
            .tokens()
            .iter()
            .map(|t| ex.dictionary[t].as_str())
            .collect();
        kept.sort_unstable();
        assert_eq!(kept, ["book", "enter", "net"]);
    }

    #[test]
    fn mini_corpus_is_deterministic() {
        let a = mini_corpus();
        let b = mini_corpus();
        assert_eq!(a.base_docs.len(), 75);
        assert_eq!(a.shift_docs.len(), 25);
        assert_eq!(a.queries.len(), 20);
        assert_eq!(
            a.base_docs.iter().map(|d| &d.body).collect::<Vec<_>>(),
            b.base_docs.iter().map(|d| &d.body).collect::<Vec<_>>()
        );
        assert_eq!(a.model_text, b.model_text);
        assert_eq!(a.queries, b.queries);
    }

    #[test]
    fn mini_corpus_docs_fit_the_extraction_budget() {
        let mini = mini_corpus();
        for doc in mini.base_docs.iter().chain(&mini.shift_docs) {
            let distinct: std::collections::HashSet<String> =
                corpus::normalize_terms(&doc.body).into_iter().collect();
            assert!(
                distinct.len() <= 20,
                "document {} has {} distinct terms",
                doc.id,
                distinct.len()
            );
        }
    }

    #[test]
    fn mini_corpus_base_trim_retains_exactly_the_base_topics() {
        let mini = mini_corpus();
        let index = build_index(&mini.base_docs, &mini.key, 20).unwrap();
        let est = estimate_pipeline(&index, TrimMode::MeanThreshold).unwrap();
        let dict = mini.full_dictionary();
        let mut stems: HashMap<&str, usize> = HashMap::new();
        for token in est.a.tokens() {
            let word = &dict[token];
            let stem = word.trim_end_matches(|c: char| c.is_ascii_digit());
            *stems.entry(match stem {
                "reef" => "reef",
                "fiber" => "fiber",
                "ledger" => "ledger",
                other => Box::leak(other.to_owned().into_boxed_str()),
            }).or_insert(0) += 1;
        }
        assert_eq!(stems.get("reef"), Some(&TOPIC_WORDS));
        assert_eq!(stems.get("fiber"), Some(&TOPIC_WORDS));
        assert_eq!(stems.get("ledger"), Some(&TOPIC_WORDS));
        // Fillers and rare words must be (almost) entirely trimmed.
        let other: usize = stems
            .iter()
            .filter(|(s, _)| !["reef", "fiber", "ledger"].contains(*s))
            .map(|(_, c)| c)
            .sum();
        assert!(other <= 3, "unexpected extra retained tokens: {stems:?}");
        println!("retained tokens: {} (k estimate {})", est.a.tokens().len(), est.k);
    }

    #[test]
    fn mini_model_parses_shape() {
        let mini = mini_corpus();
        let mut lines = mini.model_text.lines();
        let header = lines.next().unwrap();
        let (count, dims) = header.split_once(' ').unwrap();
        let count: usize = count.parse().unwrap();
        assert_eq!(dims.parse::<usize>().unwrap(), MODEL_DIMS);
        assert_eq!(lines.count(), count);
        assert!((495..=505).contains(&count), "vocabulary size {count}");
    }

    #[test]
    fn mini_model_similarity_structure_holds() {
        let mini = mini_corpus();
        let mut vecs: HashMap<&str, Vec<f64>> = HashMap::new();
        for line in mini.model_text.lines().skip(1) {
            let mut parts = line.split(' ');
            let word = parts.next().unwrap();
            vecs.insert(word, parts.map(|p| p.parse().unwrap()).collect());
        }
        let cos = |a: &str, b: &str| -> f64 {
            let (va, vb) = (&vecs[a], &vecs[b]);
            let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
            let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mean_within = |words: &[String]| -> f64 {
            let mut total = 0.0;
            let mut count = 0usize;
            for i in 0..words.len() {
                for j in i + 1..words.len() {
                    total += cos(&words[i], &words[j]);
                    count += 1;
                }
            }
            total / count as f64
        };
        let w = &mini.topic_words;
        let tight_a = mean_within(&w[0]);
        let tight_b = mean_within(&w[1]);
        let loose_c = mean_within(&w[2]);
        let shift_d = mean_within(&w[3]);
        println!("within-topic means: {tight_a:.3} {tight_b:.3} {loose_c:.3} {shift_d:.3}");
        assert!(tight_a > 0.8 && tight_b > 0.8, "base topics must be tight");
        assert!((0.12..=0.40).contains(&loose_c), "topic 3 must be loose: {loose_c}");
        assert!((0.6..=0.95).contains(&shift_d), "topic 4 must be tight: {shift_d}");

        // Cross-topic: base topics nearly orthogonal; topic 4 leans weakly
        // toward each base topic in turn.
        let mut cross = 0.0;
        let mut count = 0;
        for a in &w[0] {
            for b in &w[1] {
                cross += cos(a, b);
                count += 1;
            }
        }
        assert!((cross / count as f64).abs() < 0.1);
        let mut lean_hits = 0usize;
        let mut lean_total = 0usize;
        for (i, d_word) in w[3].iter().enumerate() {
            let target = &w[i % 3];
            let best = target
                .iter()
                .map(|b| cos(d_word, b))
                .fold(f64::NEG_INFINITY, f64::max);
            lean_total += 1;
            if best > 0.25 {
                lean_hits += 1;
            }
        }
        println!("lean hits: {lean_hits}/{lean_total}");
        assert!(
            lean_hits * 2 > lean_total,
            "most shift words must lean above the loose threshold"
        );
    }
}

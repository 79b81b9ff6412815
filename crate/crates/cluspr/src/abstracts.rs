//! Plaintext cluster abstracts, the vector model, and the join threshold.
//!
//! An abstract is the trusted-side face of a cluster: the plaintexts of its
//! `α` most frequent tokens. Abstracts never leave the trusted side, so the
//! words appear unsealed. Their pairwise similarity under a word-vector
//! model gives each abstract a coherency score, and the minimum coherency
//! across abstracts becomes the threshold `θ` that a new token must beat to
//! join an existing cluster.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{InvertedIndex, SealedToken};
use crate::statclust::ClusterSet;

/// Default number of elements kept per abstract.
pub const DEFAULT_ALPHA: usize = 10;

/// Join threshold used before any abstract has a defined coherency.
pub const FALLBACK_THETA: f64 = 0.1;

/// Errors from model loading and abstract construction.
#[derive(Debug, Error)]
pub enum AbstractError {
    #[error("model format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("model declares no vocabulary")]
    EmptyModel,
    #[error("no plaintext known for sealed token {token}")]
    MissingPlaintext { token: String },
    #[error("fewer than two elements are in the model vocabulary")]
    InsufficientVocabulary,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_err(line: usize, msg: impl Into<String>) -> AbstractError {
    AbstractError::Format { line, msg: msg.into() }
}

// ---------------------------------------------------------------------------
// Vector model
// ---------------------------------------------------------------------------

/// A word-vector model: fixed-dimension vectors for a closed vocabulary.
#[derive(Debug, Clone)]
pub struct SimilarityModel {
    dims: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl SimilarityModel {
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.len()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    /// Cosine similarity of two words; `None` if either is out of
    /// vocabulary or has a zero vector.
    pub fn sim(&self, a: &str, b: &str) -> Option<f64> {
        let va = self.vectors.get(a)?;
        let vb = self.vectors.get(b)?;
        let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return None;
        }
        Some(dot / (na * nb))
    }
}

/// Parses the text model format: a `<vocab_size> <dimension>` header line,
/// then exactly `vocab_size` lines of `<word> <v1> … <vD>`.
pub fn model_from_str(text: &str) -> Result<SimilarityModel, AbstractError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| format_err(1, "missing header"))?;
    let (count, dims) = header
        .split_once(' ')
        .ok_or_else(|| format_err(1, format!("malformed header {header:?}")))?;
    let count: usize = count
        .parse()
        .map_err(|_| format_err(1, format!("bad vocabulary size {count:?}")))?;
    let dims: usize = dims
        .parse()
        .map_err(|_| format_err(1, format!("bad dimension {dims:?}")))?;
    if count == 0 {
        return Err(AbstractError::EmptyModel);
    }
    if dims == 0 {
        return Err(format_err(1, "dimension must be positive"));
    }

    let mut vectors = HashMap::with_capacity(count);
    let mut seen = 0usize;
    for (lineno, line) in lines {
        let lineno = lineno + 1;
        if line.is_empty() {
            return Err(format_err(lineno, "empty line"));
        }
        let mut parts = line.split(' ');
        let word = parts.next().expect("split yields at least one part");
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| format_err(lineno, format!("bad component {p:?}")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != dims {
            return Err(format_err(
                lineno,
                format!("expected {dims} components, got {}", values.len()),
            ));
        }
        if vectors.insert(word.to_owned(), values).is_some() {
            return Err(format_err(lineno, format!("duplicate word {word:?}")));
        }
        seen += 1;
    }
    if seen != count {
        return Err(format_err(
            1,
            format!("header declares {count} words, file holds {seen}"),
        ));
    }
    Ok(SimilarityModel { dims, vectors })
}

/// Loads a model file. See [`model_from_str`] for the format.
pub fn load_model(path: &Path) -> Result<SimilarityModel, AbstractError> {
    model_from_str(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Coherency
// ---------------------------------------------------------------------------

/// Mean pairwise similarity over the elements that are in the model
/// vocabulary. Out-of-vocabulary elements are skipped pairwise; fewer than
/// two in-vocabulary elements is an error.
pub fn coherency(elements: &[String], model: &SimilarityModel) -> Result<f64, AbstractError> {
    let known: Vec<&String> = elements.iter().filter(|e| model.contains(e)).collect();
    if known.len() < 2 {
        return Err(AbstractError::InsufficientVocabulary);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..known.len() {
        for j in i + 1..known.len() {
            total += model
                .sim(known[i], known[j])
                .expect("both words are in vocabulary");
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

// ---------------------------------------------------------------------------
// Abstracts
// ---------------------------------------------------------------------------

/// The plaintext face of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Abstract {
    pub cluster_id: u32,
    /// Plaintext elements, most frequent first at build time.
    pub elements: Vec<String>,
    /// Mean pairwise element similarity; `None` when fewer than two
    /// elements are in the model vocabulary.
    pub coherency: Option<f64>,
}

impl Abstract {
    /// Recomputes the stored coherency from the current elements.
    pub fn refresh_coherency(&mut self, model: &SimilarityModel) {
        self.coherency = coherency(&self.elements, model).ok();
    }
}

/// All abstracts plus the current join threshold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AbstractSet {
    pub abstracts: Vec<Abstract>,
    pub theta: f64,
}

impl AbstractSet {
    pub fn abstract_for(&self, cluster_id: u32) -> Option<&Abstract> {
        self.abstracts.iter().find(|a| a.cluster_id == cluster_id)
    }

    /// Sets `theta` to the minimum defined coherency, or the fallback when
    /// no abstract has one.
    pub fn recompute_theta(&mut self) {
        self.theta = self
            .abstracts
            .iter()
            .filter_map(|a| a.coherency)
            .fold(f64::INFINITY, f64::min);
        if !self.theta.is_finite() {
            self.theta = FALLBACK_THETA;
        }
    }

    /// Refreshes every abstract's coherency and then the threshold.
    pub fn refresh(&mut self, model: &SimilarityModel) {
        for a in &mut self.abstracts {
            a.refresh_coherency(model);
        }
        self.recompute_theta();
    }
}

/// Builds one abstract per cluster from the `alpha` most frequent members.
///
/// Member frequency is the token's total frequency in `index`; ties go to
/// the smaller sealed hex. Every chosen member must have a plaintext in
/// `unseal`; the resulting elements are plaintext only. The threshold is
/// the minimum defined coherency (abstracts with fewer than two
/// in-vocabulary elements do not take part), or the fallback when none is
/// defined.
pub fn build_abstracts(
    clusters: &ClusterSet,
    index: &InvertedIndex,
    unseal: &HashMap<SealedToken, String>,
    alpha: usize,
    model: &SimilarityModel,
) -> Result<AbstractSet, AbstractError> {
    assert!(alpha >= 1, "abstract size must be at least 1");
    let mut abstracts = Vec::with_capacity(clusters.k_used());
    for cluster in &clusters.clusters {
        let mut ranked: Vec<&SealedToken> = cluster.tokens().collect();
        ranked.sort_by(|a, b| {
            index
                .total_freq(b)
                .cmp(&index.total_freq(a))
                .then_with(|| a.cmp(b))
        });
        ranked.truncate(alpha);
        let elements: Vec<String> = ranked
            .into_iter()
            .map(|token| {
                unseal
                    .get(token)
                    .cloned()
                    .ok_or_else(|| AbstractError::MissingPlaintext {
                        token: token.as_hex().to_owned(),
                    })
            })
            .collect::<Result<_, _>>()?;
        let mut a = Abstract {
            cluster_id: cluster.id,
            elements,
            coherency: None,
        };
        a.refresh_coherency(model);
        abstracts.push(a);
    }
    let mut set = AbstractSet { abstracts, theta: 0.0 };
    set.recompute_theta();
    Ok(set)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const ABSTRACTS_MAGIC: &str = "CLUSPR-ABSTRACTS";
const FORMAT_VERSION: &str = "v1";

fn fmt_score(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.6}"),
        None => "NaN".to_owned(),
    }
}

/// Serializes the abstract manifest: a `CLUSPR-ABSTRACTS v1 <theta>` header,
/// then per abstract an `A<id>\t<coherency>` line followed by one bare line
/// per element. This file belongs on the trusted side only.
pub fn abstracts_to_string(set: &AbstractSet) -> String {
    let mut out = format!("{ABSTRACTS_MAGIC} {FORMAT_VERSION} {:.6}\n", set.theta);
    for a in &set.abstracts {
        out.push_str(&format!("A{}\t{}\n", a.cluster_id, fmt_score(a.coherency)));
        for element in &a.elements {
            out.push_str(element);
            out.push('\n');
        }
    }
    out
}

/// Parses the abstract manifest format.
pub fn abstracts_from_str(text: &str) -> Result<AbstractSet, AbstractError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| format_err(1, "missing header"))?;
    let mut parts = header.split(' ');
    let theta = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(ABSTRACTS_MAGIC), Some(FORMAT_VERSION), Some(theta), None) => theta
            .parse::<f64>()
            .map_err(|_| format_err(1, format!("bad threshold {theta:?}")))?,
        _ => return Err(format_err(1, format!("malformed header {header:?}"))),
    };

    let mut set = AbstractSet { abstracts: Vec::new(), theta };
    for (lineno, line) in lines {
        let lineno = lineno + 1;
        let is_marker = line.starts_with('A')
            && line.contains('\t')
            && line[1..line.find('\t').expect("checked")].chars().all(|c| c.is_ascii_digit())
            && line.len() > 1;
        if is_marker {
            let (id, score) = line.split_once('\t').expect("checked");
            let id: u32 = id[1..]
                .parse()
                .map_err(|_| format_err(lineno, format!("bad abstract id {id:?}")))?;
            let coherency = if score == "NaN" {
                None
            } else {
                Some(score.parse::<f64>().map_err(|_| {
                    format_err(lineno, format!("bad coherency {score:?}"))
                })?)
            };
            if set.abstracts.iter().any(|a| a.cluster_id == id) {
                return Err(format_err(lineno, format!("duplicate abstract id {id}")));
            }
            set.abstracts.push(Abstract {
                cluster_id: id,
                elements: Vec::new(),
                coherency,
            });
        } else {
            if line.is_empty() {
                return Err(format_err(lineno, "empty element line"));
            }
            let current = set
                .abstracts
                .last_mut()
                .ok_or_else(|| format_err(lineno, "element before any abstract"))?;
            current.elements.push(line.to_owned());
        }
    }
    Ok(set)
}

pub fn write_abstracts(set: &AbstractSet, path: &Path) -> Result<(), AbstractError> {
    fs::write(path, abstracts_to_string(set)).map_err(Into::into)
}

pub fn read_abstracts(path: &Path) -> Result<AbstractSet, AbstractError> {
    abstracts_from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::KeyMaterial;
    use crate::kestimate::TrimMode;
    use crate::statclust::{cluster_index, ClusterParams};

    const MODEL: &str = "\
5 4
hub 1 0 0 0
spoke 0.9 0.1 0 0
rim 0.8 0.2 0 0
quark 0 0 1 0
gluon 0 0 0.9 0.1
";

    fn model() -> SimilarityModel {
        model_from_str(MODEL).unwrap()
    }

    #[test]
    fn model_parses_and_measures() {
        let m = model();
        assert_eq!(m.vocab_size(), 5);
        assert_eq!(m.dims(), 4);
        assert!((m.sim("hub", "hub").unwrap() - 1.0).abs() < 1e-12);
        let near = m.sim("hub", "spoke").unwrap();
        let far = m.sim("hub", "quark").unwrap();
        assert!(near > 0.9 && far == 0.0, "near {near}, far {far}");
        assert_eq!(m.sim("hub", "unknown"), None);
    }

    #[test]
    fn model_rejects_malformed_input() {
        for (bad, why) in [
            ("", "empty file"),
            ("3\nhub 1 0\n", "header without dimension"),
            ("0 4\n", "zero vocabulary"),
            ("1 0\nhub\n", "zero dimension"),
            ("2 2\nhub 1 0\n", "missing line"),
            ("1 2\nhub 1 0\nrim 0 1\n", "extra line"),
            ("1 2\nhub 1\n", "short vector"),
            ("1 2\nhub 1 0 0\n", "long vector"),
            ("1 2\nhub 1 x\n", "bad float"),
            ("2 2\nhub 1 0\nhub 0 1\n", "duplicate word"),
        ] {
            assert!(model_from_str(bad).is_err(), "accepted {why}: {bad:?}");
        }
    }

    #[test]
    fn coherency_averages_in_vocabulary_pairs() {
        let m = model();
        let elements: Vec<String> =
            ["hub", "spoke", "mystery"].iter().map(|s| s.to_string()).collect();
        // Only the hub–spoke pair is in vocabulary.
        let k = coherency(&elements, &m).unwrap();
        assert!((k - m.sim("hub", "spoke").unwrap()).abs() < 1e-12);
    }

    #[test]
    fn coherency_requires_two_known_elements() {
        let m = model();
        let lone: Vec<String> = vec!["hub".into(), "mystery".into()];
        assert!(matches!(
            coherency(&lone, &m),
            Err(AbstractError::InsufficientVocabulary)
        ));
    }

    /// Index with a wheel-topic group and a physics-topic group.
    fn two_topic_setup() -> (
        InvertedIndex,
        ClusterSet,
        HashMap<SealedToken, String>,
        KeyMaterial,
    ) {
        let key = KeyMaterial::new(vec![9u8; 32]).unwrap();
        let mut index = InvertedIndex::new();
        for (t, d, f) in [
            ("hub", "w1", 9),
            ("hub", "w2", 6),
            ("spoke", "w1", 4),
            ("spoke", "w2", 2),
            ("rim", "w2", 3),
            ("quark", "p1", 8),
            ("quark", "p2", 5),
            ("gluon", "p1", 2),
            ("gluon", "p2", 7),
        ] {
            index.add_occurrences(key.seal_token(t), key.seal_doc(d), f);
        }
        index.set_doc_count(4);
        let outcome =
            cluster_index(&index, &ClusterParams { trim: TrimMode::KeepAll }).unwrap();
        let unseal: HashMap<SealedToken, String> = ["hub", "spoke", "rim", "quark", "gluon"]
            .iter()
            .map(|w| (key.seal_token(w), w.to_string()))
            .collect();
        (index, outcome.clusters, unseal, key)
    }

    #[test]
    fn abstracts_rank_by_frequency_and_stay_plaintext() {
        let (index, clusters, unseal, _) = two_topic_setup();
        let set = build_abstracts(&clusters, &index, &unseal, 2, &model()).unwrap();
        assert_eq!(set.abstracts.len(), clusters.k_used());
        for a in &set.abstracts {
            assert!(a.elements.len() <= 2);
            for e in &a.elements {
                assert!(
                    e.len() != 64 || !e.bytes().all(|b| b.is_ascii_hexdigit()),
                    "element {e:?} looks sealed"
                );
            }
        }
        // hub has total frequency 15, the highest of its cluster.
        let hub_abstract = set
            .abstracts
            .iter()
            .find(|a| a.elements.contains(&"hub".to_string()))
            .expect("hub represents its cluster");
        assert_eq!(hub_abstract.elements[0], "hub");
    }

    #[test]
    fn theta_is_minimum_defined_coherency() {
        let (index, clusters, unseal, _) = two_topic_setup();
        let set = build_abstracts(&clusters, &index, &unseal, 10, &model()).unwrap();
        let defined: Vec<f64> = set.abstracts.iter().filter_map(|a| a.coherency).collect();
        assert!(!defined.is_empty());
        let min = defined.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(set.theta, min);
    }

    #[test]
    fn theta_falls_back_when_nothing_is_defined() {
        let mut set = AbstractSet {
            abstracts: vec![Abstract {
                cluster_id: 1,
                elements: vec!["mystery".into()],
                coherency: None,
            }],
            theta: 0.7,
        };
        set.recompute_theta();
        assert_eq!(set.theta, FALLBACK_THETA);
    }

    #[test]
    fn missing_plaintext_is_an_error() {
        let (index, clusters, mut unseal, key) = two_topic_setup();
        unseal.remove(&key.seal_token("hub"));
        assert!(matches!(
            build_abstracts(&clusters, &index, &unseal, 10, &model()),
            Err(AbstractError::MissingPlaintext { .. })
        ));
    }

    #[test]
    fn alpha_tie_breaks_on_sealed_hex() {
        let key = KeyMaterial::new(vec![2u8; 32]).unwrap();
        let mut index = InvertedIndex::new();
        // Three tokens, equal total frequency; alpha 2 keeps the two with
        // the smallest sealed hex.
        for w in ["hub", "spoke", "rim"] {
            index.add_occurrences(key.seal_token(w), key.seal_doc("d"), 5);
        }
        index.set_doc_count(1);
        let outcome =
            cluster_index(&index, &ClusterParams { trim: TrimMode::KeepAll }).unwrap();
        let unseal: HashMap<SealedToken, String> = ["hub", "spoke", "rim"]
            .iter()
            .map(|w| (key.seal_token(w), w.to_string()))
            .collect();
        let set = build_abstracts(&outcome.clusters, &index, &unseal, 2, &model()).unwrap();
        let all: Vec<&String> = set.abstracts.iter().flat_map(|a| &a.elements).collect();
        let mut sorted_hex: Vec<(&SealedToken, &String)> = unseal.iter().collect();
        sorted_hex.sort_by_key(|(t, _)| (*t).clone());
        let expected_dropped = sorted_hex.last().unwrap().1;
        assert_eq!(all.len(), 2);
        assert!(!all.contains(&expected_dropped));
    }

    #[test]
    fn manifest_round_trip_preserves_everything() {
        let (index, clusters, unseal, _) = two_topic_setup();
        let set = build_abstracts(&clusters, &index, &unseal, 10, &model()).unwrap();
        let text = abstracts_to_string(&set);
        assert!(text.starts_with("CLUSPR-ABSTRACTS v1 "));
        let parsed = abstracts_from_str(&text).unwrap();
        assert_eq!(parsed.abstracts.len(), set.abstracts.len());
        for (a, b) in parsed.abstracts.iter().zip(&set.abstracts) {
            assert_eq!(a.cluster_id, b.cluster_id);
            assert_eq!(a.elements, b.elements);
            match (a.coherency, b.coherency) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-6),
                (None, None) => {}
                other => panic!("coherency mismatch {other:?}"),
            }
        }
        assert!((parsed.theta - set.theta).abs() < 1e-6);
    }

    #[test]
    fn manifest_with_undefined_coherency_round_trips() {
        let set = AbstractSet {
            abstracts: vec![Abstract {
                cluster_id: 3,
                elements: vec!["mystery".into()],
                coherency: None,
            }],
            theta: FALLBACK_THETA,
        };
        let text = abstracts_to_string(&set);
        assert!(text.contains("A3\tNaN\n"));
        let parsed = abstracts_from_str(&text).unwrap();
        assert_eq!(parsed.abstracts[0].coherency, None);
        assert_eq!(parsed.abstracts[0].elements, vec!["mystery".to_string()]);
    }
}

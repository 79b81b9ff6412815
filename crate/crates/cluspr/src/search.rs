//! Pruned search over a clustered sealed index.
//!
//! A plaintext query is normalized on the trusted edge and sealed into a
//! trapdoor. The edge first scores every cluster abstract against the
//! query and keeps only the most related clusters; the cloud side then
//! matches the trapdoor against the members of those clusters alone and
//! ranks documents by summed term frequency. TSAP@10 scores a ranked run
//! against relevance judgments.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::abstracts::{AbstractSet, SimilarityModel};
use crate::corpus::{normalize_terms, KeyMaterial, SealedDocId, SealedToken};
use crate::corpus::InvertedIndex;
use crate::statclust::ClusterSet;

/// Default number of clusters a pruned search visits.
pub const DEFAULT_TOP_P: usize = 3;
/// Default result-list cutoff.
pub const DEFAULT_CUTOFF: usize = 10;

#[derive(Debug, Error)]
pub enum SearchError {
    /// Normalization left nothing to search for.
    #[error("query contains no searchable terms")]
    EmptyQuery,
}

/// A normalized query and its sealed trapdoor.
///
/// Terms are sorted and de-duplicated, and `trapdoor[i]` is the sealed
/// form of `terms[i]`; repeating a word in the raw query does not weight
/// it.
#[derive(Debug, Clone)]
pub struct Query {
    pub raw: String,
    pub terms: Vec<String>,
    pub trapdoor: Vec<SealedToken>,
}

impl Query {
    pub fn new(raw: &str, key: &KeyMaterial) -> Result<Query, SearchError> {
        let mut terms = normalize_terms(raw);
        terms.sort();
        terms.dedup();
        if terms.is_empty() {
            return Err(SearchError::EmptyQuery);
        }
        let trapdoor = terms.iter().map(|t| key.seal_token(t)).collect();
        Ok(Query {
            raw: raw.to_owned(),
            terms,
            trapdoor,
        })
    }
}

/// One abstract's relatedness to a query.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterScore {
    pub cluster_id: u32,
    pub score: f64,
}

/// Outcome of cluster pruning: the full ranking plus the ids chosen.
#[derive(Debug, Clone)]
pub struct Pruning {
    /// All abstracts, best score first (ties by ascending id).
    pub ranked: Vec<ClusterScore>,
    /// The cluster ids a search should visit, in rank order — or every id
    /// in ascending order when the query fell open.
    pub selected: Vec<u32>,
    /// True when no abstract scored above zero and pruning stood aside.
    pub fail_open: bool,
}

/// Scores every abstract against the query and keeps the `top_p` best.
///
/// An abstract's score is the mean, over the query terms the model knows,
/// of the best element similarity for that term (an abstract with no
/// comparable element contributes 0 for that term). Ties break toward the
/// lower cluster id. If every abstract scores exactly 0 — for instance
/// when all query terms are out of vocabulary — pruning fails open and
/// selects every cluster rather than silently searching none.
pub fn prune(
    query: &Query,
    abstracts: &AbstractSet,
    model: &SimilarityModel,
    top_p: usize,
) -> Pruning {
    let known_terms: Vec<&str> = query
        .terms
        .iter()
        .map(String::as_str)
        .filter(|t| model.contains(t))
        .collect();

    let mut ranked: Vec<ClusterScore> = abstracts
        .abstracts
        .iter()
        .map(|a| {
            let score = if known_terms.is_empty() {
                0.0
            } else {
                let total: f64 = known_terms
                    .iter()
                    .map(|term| {
                        a.elements
                            .iter()
                            .filter_map(|e| model.sim(term, e))
                            .fold(0.0_f64, f64::max)
                    })
                    .sum();
                total / known_terms.len() as f64
            };
            ClusterScore {
                cluster_id: a.cluster_id,
                score,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then_with(|| a.cluster_id.cmp(&b.cluster_id))
    });

    if ranked.iter().all(|c| c.score == 0.0) {
        let mut selected: Vec<u32> = ranked.iter().map(|c| c.cluster_id).collect();
        selected.sort_unstable();
        return Pruning {
            ranked,
            selected,
            fail_open: true,
        };
    }
    let selected = ranked.iter().take(top_p).map(|c| c.cluster_id).collect();
    Pruning {
        ranked,
        selected,
        fail_open: false,
    }
}

/// One ranked document.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub doc: SealedDocId,
    pub score: f64,
}

/// A ranked result list and the clusters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    /// Descending score, ties by sealed-doc hex, at most the cutoff.
    pub hits: Vec<SearchHit>,
    pub searched_cluster_ids: Vec<u32>,
}

/// Matches the trapdoor against the members of the selected clusters.
///
/// Only trapdoor tokens that belong to a selected cluster are looked up;
/// each contributes its per-document frequency to that document's score.
/// Documents rank by descending score, ties by sealed hex, truncated to
/// `cutoff`.
pub fn search_clusters(
    query: &Query,
    cluster_ids: &[u32],
    clusters: &ClusterSet,
    index: &InvertedIndex,
    cutoff: usize,
) -> ResultSet {
    let searchable: HashSet<&SealedToken> = cluster_ids
        .iter()
        .filter_map(|id| clusters.cluster_by_id(*id))
        .flat_map(|c| c.tokens())
        .collect();

    let mut scores: BTreeMap<&SealedDocId, u64> = BTreeMap::new();
    for token in &query.trapdoor {
        if !searchable.contains(token) {
            continue;
        }
        if let Some(postings) = index.postings(token) {
            for posting in postings {
                *scores.entry(&posting.doc).or_insert(0) += posting.freq;
            }
        }
    }

    // BTreeMap iteration is hex-ascending, and the sort is stable, so
    // equal scores stay in hex order.
    let mut hits: Vec<SearchHit> = scores
        .into_iter()
        .map(|(doc, score)| SearchHit {
            doc: doc.clone(),
            score: score as f64,
        })
        .collect();
    hits.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite"));
    hits.truncate(cutoff);
    ResultSet {
        hits,
        searched_cluster_ids: cluster_ids.to_vec(),
    }
}

/// Renders a result set in the command-line format: one
/// `<rank>\t<sealed-doc-hex>\t<score>` line per hit, then a
/// `searched-clusters:` line listing the visited ids in ascending order.
pub fn format_results(results: &ResultSet) -> String {
    let mut out = String::new();
    for (i, hit) in results.hits.iter().enumerate() {
        writeln!(out, "{}\t{}\t{}", i + 1, hit.doc.as_hex(), hit.score).unwrap();
    }
    let mut ids = results.searched_cluster_ids.clone();
    ids.sort_unstable();
    let rendered: Vec<String> = ids.iter().map(u32::to_string).collect();
    writeln!(out, "searched-clusters: {}", rendered.join(",")).unwrap();
    out
}

/// TREC-style average precision at cutoff 10.
///
/// `flags[i]` says whether the hit at rank `i + 1` was relevant; runs
/// shorter than 10 are padded with irrelevant tail positions. Each
/// relevant rank contributes the precision at that rank; the sum is
/// divided by 10 regardless of how many hits were relevant.
pub fn tsap_at_10(flags: &[bool]) -> f64 {
    assert!(flags.len() <= 10, "a run holds at most 10 ranked hits");
    let mut relevant_so_far = 0u32;
    let mut sum = 0.0;
    for (i, &flag) in flags.iter().enumerate() {
        if flag {
            relevant_so_far += 1;
            sum += f64::from(relevant_so_far) / (i + 1) as f64;
        }
    }
    sum / 10.0
}

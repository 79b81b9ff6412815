//! Batch updates to an existing clustering.
//!
//! When a batch of new documents arrives, the volume of genuinely new
//! tokens relative to the tokens already clustered decides between two
//! paths: a full re-clustering of the merged index, or a cheap in-place
//! update that routes each new token to the cluster whose abstract it
//! resembles most (or to a fresh singleton cluster). The decision is a
//! single-category χ² test; batches that skip re-clustering accumulate so
//! several small batches can eventually trigger one.

use std::collections::HashMap;

use thiserror::Error;

use crate::abstracts::{Abstract, AbstractSet, SimilarityModel, FALLBACK_THETA};
use crate::corpus::{
    merge_temp, InvertedIndex, KeyMaterial, SealedToken, TempIndex,
};
use crate::kestimate::MatrixError;
use crate::statclust::{cluster_index, Cluster, ClusterOutcome, ClusterParams, ClusterSet};

/// χ² value at or below which the corpus is considered to have drifted
/// enough to warrant re-clustering (95% significance, one degree of
/// freedom).
pub const CHI2_THRESHOLD: f64 = 3.841;

/// Errors from batch preparation and the re-cluster path.
#[derive(Debug, Error)]
pub enum DynError {
    /// A new token has no plaintext in the trusted-side dictionary.
    #[error("no plaintext known for sealed token {token}")]
    MissingPlaintext { token: String },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

// ---------------------------------------------------------------------------
// Update batches
// ---------------------------------------------------------------------------

/// A batch of new documents prepared for a cluster update.
#[derive(Debug, Clone, Default)]
pub struct UpdateBatch {
    pub temp: TempIndex,
    /// Tokens of the batch absent from the central index, sorted by hex.
    pub new_tokens: Vec<SealedToken>,
    /// Plaintexts for the new tokens (trusted side only).
    pub plaintexts: HashMap<SealedToken, String>,
}

impl UpdateBatch {
    /// Prepares a batch against the central index: the new-token set is
    /// exactly the batch vocabulary missing from `central`, and every new
    /// token must have a plaintext in `dictionary`.
    pub fn prepare(
        temp: TempIndex,
        central: &InvertedIndex,
        dictionary: &HashMap<SealedToken, String>,
    ) -> Result<Self, DynError> {
        let new_tokens: Vec<SealedToken> = temp
            .index()
            .tokens()
            .filter(|t| !central.contains_token(t))
            .cloned()
            .collect();
        let mut plaintexts = HashMap::with_capacity(new_tokens.len());
        for token in &new_tokens {
            let word = dictionary.get(token).ok_or_else(|| DynError::MissingPlaintext {
                token: token.as_hex().to_owned(),
            })?;
            plaintexts.insert(token.clone(), word.clone());
        }
        Ok(UpdateBatch { temp, new_tokens, plaintexts })
    }

    pub fn is_empty(&self) -> bool {
        self.temp.index().is_empty()
    }

    pub fn new_token_count(&self) -> usize {
        self.new_tokens.len()
    }
}

/// Folds `batch` into `buffer`, producing the combined pending batch.
/// Frequencies merge like index merges; new-token sets union.
pub fn accumulate(batch: UpdateBatch, buffer: UpdateBatch) -> UpdateBatch {
    let UpdateBatch { temp, new_tokens, mut plaintexts } = buffer;
    let merged = TempIndex(merge_temp(temp.0, &batch.temp));
    let mut all_new = new_tokens;
    for token in batch.new_tokens {
        if let Err(pos) = all_new.binary_search(&token) {
            all_new.insert(pos, token);
        }
    }
    plaintexts.extend(batch.plaintexts);
    UpdateBatch {
        temp: merged,
        new_tokens: all_new,
        plaintexts,
    }
}

// ---------------------------------------------------------------------------
// The re-cluster decision
// ---------------------------------------------------------------------------

/// Outcome of the χ² drift test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReclusterDecision {
    pub chi2: f64,
    pub recluster: bool,
}

/// Single-category χ² test of the new-token count against the count of
/// already-clustered tokens: `(new − existing)² / existing`. A value at or
/// below [`CHI2_THRESHOLD`] means the two are statistically close — the
/// vocabulary has shifted materially — and a re-clustering is due. An
/// empty cluster set always re-clusters.
pub fn decide_recluster(new_count: usize, existing_count: usize) -> ReclusterDecision {
    if existing_count == 0 {
        return ReclusterDecision { chi2: f64::INFINITY, recluster: true };
    }
    let new = new_count as f64;
    let existing = existing_count as f64;
    let chi2 = (new - existing).powi(2) / existing;
    ReclusterDecision {
        chi2,
        recluster: chi2 <= CHI2_THRESHOLD,
    }
}

/// One line of the update journal.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub batch_id: u64,
    pub new_count: usize,
    pub existing_count: usize,
    pub decision: ReclusterDecision,
}

/// Formats a journal line:
/// `BATCH <id> new=<n> existing=<e> chi2=<v> decision=<recluster|update>`.
pub fn journal_line(record: &BatchRecord) -> String {
    format!(
        "BATCH {} new={} existing={} chi2={:.6} decision={}",
        record.batch_id,
        record.new_count,
        record.existing_count,
        record.decision.chi2,
        if record.decision.recluster { "recluster" } else { "update" },
    )
}

// ---------------------------------------------------------------------------
// Update path (no re-clustering)
// ---------------------------------------------------------------------------

/// Where one new token went.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignedToken {
    pub token: SealedToken,
    pub plaintext: String,
    pub cluster_id: u32,
    /// True if the token joined an existing cluster, false if it spawned a
    /// new singleton cluster.
    pub joined: bool,
    /// The best abstract similarity seen, if any element was comparable.
    pub best_sim: Option<f64>,
}

/// Assignments of one batch, in processing order; each new token appears
/// exactly once.
#[derive(Debug, Clone, Default)]
pub struct AssignmentMap {
    pub entries: Vec<AssignedToken>,
}

/// Routes one token by the join rule; shared by the batch update and the
/// first-document bootstrap so both behave identically.
///
/// The token joins the cluster whose abstract holds the most similar
/// element, provided that similarity strictly exceeds `theta` (ties on the
/// maximum go to the lowest cluster id); otherwise it becomes the center of
/// a fresh singleton cluster with a singleton abstract. Joining grows the
/// abstract while it has fewer than `alpha` elements.
fn assign_one(
    clusters: &mut ClusterSet,
    abstracts: &mut AbstractSet,
    token: SealedToken,
    word: String,
    model: &SimilarityModel,
    alpha: usize,
    theta: f64,
) -> AssignedToken {
    let mut best: Option<(f64, u32)> = None;
    for a in &abstracts.abstracts {
        for element in &a.elements {
            if let Some(sim) = model.sim(&word, element) {
                let better = match best {
                    None => true,
                    Some((bs, bid)) => sim > bs || (sim == bs && a.cluster_id < bid),
                };
                if better {
                    best = Some((sim, a.cluster_id));
                }
            }
        }
    }

    let best_sim = best.map(|(s, _)| s);
    if let Some((sim, cluster_id)) = best {
        if sim > theta {
            let cluster = clusters
                .clusters
                .iter_mut()
                .find(|c| c.id == cluster_id)
                .expect("abstract references an existing cluster");
            if let Err(pos) = cluster.members.binary_search(&token) {
                cluster.members.insert(pos, token.clone());
            }
            let a = abstracts
                .abstracts
                .iter_mut()
                .find(|a| a.cluster_id == cluster_id)
                .expect("abstract exists");
            if a.elements.len() < alpha && !a.elements.contains(&word) {
                a.elements.push(word.clone());
            }
            return AssignedToken {
                token,
                plaintext: word,
                cluster_id,
                joined: true,
                best_sim,
            };
        }
    }

    let id = clusters.max_id().max(
        abstracts.abstracts.iter().map(|a| a.cluster_id).max().unwrap_or(0),
    ) + 1;
    clusters.clusters.push(Cluster {
        id,
        center: token.clone(),
        members: Vec::new(),
    });
    abstracts.abstracts.push(Abstract {
        cluster_id: id,
        elements: vec![word.clone()],
        coherency: None,
    });
    AssignedToken {
        token,
        plaintext: word,
        cluster_id: id,
        joined: false,
        best_sim,
    }
}

/// New tokens of a batch in processing order: descending total batch
/// frequency, ties by plaintext.
fn processing_order(batch: &UpdateBatch) -> Vec<(SealedToken, String, u64)> {
    let mut tokens: Vec<(SealedToken, String, u64)> = batch
        .new_tokens
        .iter()
        .map(|t| {
            (
                t.clone(),
                batch.plaintexts[t].clone(),
                batch.temp.index().total_freq(t),
            )
        })
        .collect();
    tokens.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.1.cmp(&b.1)));
    tokens
}

/// Applies one batch along the update path (no re-clustering).
///
/// New tokens are processed in descending batch frequency (ties by
/// plaintext) and routed by the join rule; a token spawned mid-batch is
/// visible to the tokens after it. The threshold stays fixed for the whole
/// batch; abstract coherencies are refreshed at the end, but recomputing
/// the threshold is left to the caller so a bootstrap can keep its own.
pub fn update_clusters(
    clusters: &mut ClusterSet,
    abstracts: &mut AbstractSet,
    batch: &UpdateBatch,
    model: &SimilarityModel,
    alpha: usize,
) -> AssignmentMap {
    let theta = abstracts.theta;
    let mut map = AssignmentMap::default();
    for (token, word, _) in processing_order(batch) {
        map.entries.push(assign_one(
            clusters, abstracts, token, word, model, alpha, theta,
        ));
    }
    for a in &mut abstracts.abstracts {
        a.refresh_coherency(model);
    }
    map
}

// ---------------------------------------------------------------------------
// Re-cluster path
// ---------------------------------------------------------------------------

/// Result of a full re-clustering over the merged index.
#[derive(Debug)]
pub struct ReclusterOutcome {
    pub merged: InvertedIndex,
    pub outcome: ClusterOutcome,
}

/// Merges the batch into the index and re-runs the static pipeline.
pub fn full_recluster(
    index: &InvertedIndex,
    temp: &TempIndex,
    params: &ClusterParams,
) -> Result<ReclusterOutcome, DynError> {
    let merged = merge_temp(index.clone(), temp);
    let outcome = cluster_index(&merged, params)?;
    Ok(ReclusterOutcome { merged, outcome })
}

// ---------------------------------------------------------------------------
// Bootstrap for a fully dynamic corpus
// ---------------------------------------------------------------------------

/// Clusters the very first document of a dataset that starts empty.
///
/// The highest-frequency token seeds cluster 1; the rest are processed in
/// descending frequency (ties by plaintext) through the same join rule as
/// batch updates, with the threshold fixed at the initial value of
/// [`FALLBACK_THETA`]. Coherencies and the threshold are recomputed at the
/// end, once grown abstracts exist.
pub fn fd_bootstrap(
    first_doc_tokens: &[(String, u64)],
    model: &SimilarityModel,
    key: &KeyMaterial,
    alpha: usize,
) -> (ClusterSet, AbstractSet) {
    let mut ranked = first_doc_tokens.to_vec();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut clusters = ClusterSet::default();
    let mut abstracts = AbstractSet {
        abstracts: Vec::new(),
        theta: FALLBACK_THETA,
    };
    let theta = abstracts.theta;
    for (word, _) in ranked {
        let token = key.seal_token(&word);
        assign_one(
            &mut clusters,
            &mut abstracts,
            token,
            word,
            model,
            alpha,
            theta,
        );
    }
    abstracts.refresh(model);
    (clusters, abstracts)
}

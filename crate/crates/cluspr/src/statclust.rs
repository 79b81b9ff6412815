//! Static clustering of a sealed index: center selection and distribution.
//!
//! Centers are picked greedily from tokens sorted by how many documents they
//! touch. A candidate qualifies when its document set is sufficiently novel
//! relative to the documents already covered (uniqueness ratio above one);
//! qualifying candidates are ranked by a centrality weight taken from the
//! token-similarity diagonal, and the best `k` become centers. Every other
//! token then joins the center with the highest co-occurrence-based
//! relatedness. No token semantics are used anywhere: document sets and
//! frequencies are enough.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::corpus::{CorpusError, InvertedIndex, Posting, SealedDocId, SealedToken};
use crate::kestimate::{estimate_pipeline, Estimation, TopicSim, TrimMode};
use crate::kestimate::MatrixError;

// ---------------------------------------------------------------------------
// Center selection
// ---------------------------------------------------------------------------

/// Uniqueness of a candidate's document set against the covered set:
/// `|A − U| / |A ∩ U|`, infinite when the intersection is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Omega {
    Finite(f64),
    Infinite,
}

impl Omega {
    /// The qualification test: a candidate passes when its uniqueness
    /// exceeds one (an untouched document set always passes).
    pub fn exceeds_one(self) -> bool {
        match self {
            Omega::Finite(w) => w > 1.0,
            Omega::Infinite => true,
        }
    }
}

/// One row of the center-selection audit trail.
#[derive(Debug, Clone)]
pub struct CenterAudit {
    pub token: SealedToken,
    /// Distinct documents the token appears in.
    pub doc_count: usize,
    pub omega: Omega,
    /// Ranking weight; `None` when the candidate failed the uniqueness test.
    pub phi: Option<f64>,
    pub selected: bool,
}

/// Selected centers plus the audit trail of every examined candidate.
#[derive(Debug, Clone)]
pub struct CenterSelection {
    pub centers: Vec<SealedToken>,
    pub audit: Vec<CenterAudit>,
}

fn doc_ids(postings: &[Posting]) -> impl Iterator<Item = &SealedDocId> {
    postings.iter().map(|p| &p.doc)
}

/// Counts `|A − U|` and `|A ∩ U|` for a sorted posting list against a set.
fn split_against(postings: &[Posting], covered: &BTreeSet<SealedDocId>) -> (usize, usize) {
    let mut outside = 0;
    let mut inside = 0;
    for doc in doc_ids(postings) {
        if covered.contains(doc) {
            inside += 1;
        } else {
            outside += 1;
        }
    }
    (outside, inside)
}

/// Runs the greedy center-selection pass, keeping the audit trail.
///
/// Candidates are the rows of `q`, visited in order of descending distinct
/// document count (ties lexicographic on the sealed hex). A candidate with
/// uniqueness above one extends the covered set and enters the pool with
/// weight `ω · q_ii · (1 − q_ii)`; when the intersection is empty the
/// untouched-set surrogate `|A − U| + 1` stands in for `ω`. The `k`
/// highest-weight pool entries (ties again lexicographic) become centers,
/// in weight order.
///
/// Every token of `q` must be present in `index`.
pub fn select_centers(
    k: usize,
    q: &TopicSim,
    index: &InvertedIndex,
) -> CenterSelection {
    assert!(k >= 1, "cluster budget must be at least 1");

    let mut order: Vec<usize> = (0..q.token_count()).collect();
    order.sort_by(|&a, &b| {
        let ta = &q.tokens()[a];
        let tb = &q.tokens()[b];
        index
            .doc_association(tb)
            .cmp(&index.doc_association(ta))
            .then_with(|| ta.cmp(tb))
    });

    let mut covered: BTreeSet<SealedDocId> = BTreeSet::new();
    let mut audit = Vec::with_capacity(order.len());
    let mut pool: Vec<(f64, SealedToken)> = Vec::new();

    for row in order {
        let token = q.tokens()[row].clone();
        let postings = index
            .postings(&token)
            .expect("similarity matrix token missing from index");
        let (outside, inside) = split_against(postings, &covered);
        let omega = if inside == 0 {
            Omega::Infinite
        } else {
            Omega::Finite(outside as f64 / inside as f64)
        };
        let mut phi = None;
        if omega.exceeds_one() {
            covered.extend(doc_ids(postings).cloned());
            let q_ii = q.self_similarity(row);
            let weight = match omega {
                Omega::Finite(w) => w,
                Omega::Infinite => (outside + 1) as f64,
            };
            let value = weight * q_ii * (1.0 - q_ii);
            phi = Some(value);
            pool.push((value, token.clone()));
        }
        audit.push(CenterAudit {
            token,
            doc_count: postings.len(),
            omega,
            phi,
            selected: false,
        });
    }

    pool.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("phi is finite").then_with(|| a.1.cmp(&b.1)));
    pool.truncate(k);
    let centers: Vec<SealedToken> = pool.into_iter().map(|(_, t)| t).collect();
    for entry in &mut audit {
        entry.selected = centers.contains(&entry.token);
    }
    CenterSelection { centers, audit }
}

/// The centers alone; see [`select_centers`] for the full audit.
pub fn choose_centers(k: usize, q: &TopicSim, index: &InvertedIndex) -> Vec<SealedToken> {
    select_centers(k, q, index).centers
}

// ---------------------------------------------------------------------------
// Relatedness
// ---------------------------------------------------------------------------

fn freq_sum_over<'a>(
    index: &InvertedIndex,
    token: &SealedToken,
    docs: impl Iterator<Item = &'a SealedDocId>,
) -> u64 {
    docs.map(|d| index.freq_in(token, d)).sum()
}

fn co_docs(a: &[Posting], b: &[Posting]) -> Vec<SealedDocId> {
    let set: BTreeSet<&SealedDocId> = doc_ids(b).collect();
    doc_ids(a).filter(|d| set.contains(*d)).cloned().collect()
}

fn dis_docs(a: &[Posting], b: &[Posting]) -> Vec<SealedDocId> {
    let sa: BTreeSet<&SealedDocId> = doc_ids(a).collect();
    let sb: BTreeSet<&SealedDocId> = doc_ids(b).collect();
    sa.symmetric_difference(&sb).map(|d| (*d).clone()).collect()
}

/// Co-occurrence value of two tokens in one document: the product of each
/// token's frequency share over the documents where both appear. Zero when
/// `d` is not such a document.
pub fn cooccurrence_value(
    index: &InvertedIndex,
    t_i: &SealedToken,
    t_j: &SealedToken,
    d: &SealedDocId,
) -> f64 {
    let (pi, pj) = match (index.postings(t_i), index.postings(t_j)) {
        (Some(pi), Some(pj)) => (pi, pj),
        _ => return 0.0,
    };
    let co = co_docs(pi, pj);
    if !co.contains(d) {
        return 0.0;
    }
    let denom_i = freq_sum_over(index, t_i, co.iter());
    let denom_j = freq_sum_over(index, t_j, co.iter());
    // Both denominators include f(·, d) > 0, so they are positive.
    (index.freq_in(t_i, d) as f64 / denom_i as f64)
        * (index.freq_in(t_j, d) as f64 / denom_j as f64)
}

/// Disparity value of two tokens in one document: the sum of each token's
/// frequency share over the documents where exactly one of them appears.
/// A token absent from every such document contributes zero. Zero when `d`
/// is not a disparity document.
pub fn disparity_value(
    index: &InvertedIndex,
    t_i: &SealedToken,
    t_j: &SealedToken,
    d: &SealedDocId,
) -> f64 {
    let (pi, pj) = match (index.postings(t_i), index.postings(t_j)) {
        (Some(pi), Some(pj)) => (pi, pj),
        _ => return 0.0,
    };
    let dis = dis_docs(pi, pj);
    if !dis.contains(d) {
        return 0.0;
    }
    let share = |token: &SealedToken| -> f64 {
        let denom = freq_sum_over(index, token, dis.iter());
        if denom == 0 {
            0.0
        } else {
            index.freq_in(token, d) as f64 / denom as f64
        }
    };
    share(t_i) + share(t_j)
}

/// Relatedness of token `t` to center `c`: signed relative co-occurrence
/// over the union of their documents, each term weighted by `t`'s frequency
/// share in that document.
pub fn relatedness(index: &InvertedIndex, c: &SealedToken, t: &SealedToken) -> f64 {
    let (pc, pt) = match (index.postings(c), index.postings(t)) {
        (Some(pc), Some(pt)) => (pc, pt),
        _ => return 0.0,
    };
    let co: BTreeSet<SealedDocId> = co_docs(pt, pc).into_iter().collect();
    let dis: Vec<SealedDocId> = dis_docs(pt, pc);

    let co_denom_t = freq_sum_over(index, t, co.iter());
    let co_denom_c = freq_sum_over(index, c, co.iter());
    let dis_denom_t = freq_sum_over(index, t, dis.iter());
    let dis_denom_c = freq_sum_over(index, c, dis.iter());
    let t_total = index.total_freq(t);
    debug_assert!(t_total > 0);

    let mut union: BTreeSet<&SealedDocId> = doc_ids(pt).collect();
    union.extend(doc_ids(pc));

    let mut r = 0.0;
    for d in union {
        let weight = index.freq_in(t, d) as f64 / t_total as f64;
        if weight == 0.0 {
            continue;
        }
        let rho = if co.contains(d) {
            (index.freq_in(t, d) as f64 / co_denom_t as f64)
                * (index.freq_in(c, d) as f64 / co_denom_c as f64)
        } else {
            let share_t = if dis_denom_t == 0 {
                0.0
            } else {
                index.freq_in(t, d) as f64 / dis_denom_t as f64
            };
            let share_c = if dis_denom_c == 0 {
                0.0
            } else {
                index.freq_in(c, d) as f64 / dis_denom_c as f64
            };
            -(share_t + share_c)
        };
        r += rho * weight;
    }
    r
}

// ---------------------------------------------------------------------------
// Clusters
// ---------------------------------------------------------------------------

/// One cluster: a center and its joined members (center not repeated).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// 1-based identifier, stable across serialization.
    pub id: u32,
    pub center: SealedToken,
    /// Non-center members, sorted by sealed hex.
    pub members: Vec<SealedToken>,
}

impl Cluster {
    /// Center plus members.
    pub fn tokens(&self) -> impl Iterator<Item = &SealedToken> {
        std::iter::once(&self.center).chain(self.members.iter())
    }

    pub fn len(&self) -> usize {
        1 + self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A disjoint clustering of the retained vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    /// Number of clusters actually formed (at most the requested `k`).
    pub fn k_used(&self) -> usize {
        self.clusters.len()
    }

    /// Total tokens across all clusters, centers included.
    pub fn token_count(&self) -> usize {
        self.clusters.iter().map(Cluster::len).sum()
    }

    pub fn cluster_by_id(&self, id: u32) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.id == id)
    }

    /// The cluster containing `token`, if any.
    pub fn cluster_of(&self, token: &SealedToken) -> Option<&Cluster> {
        self.clusters
            .iter()
            .find(|c| c.center == *token || c.members.binary_search(token).is_ok())
    }

    /// Every token in every cluster.
    pub fn all_tokens(&self) -> impl Iterator<Item = &SealedToken> {
        self.clusters.iter().flat_map(Cluster::tokens)
    }

    /// Largest cluster id in use (0 when empty).
    pub fn max_id(&self) -> u32 {
        self.clusters.iter().map(|c| c.id).max().unwrap_or(0)
    }
}

/// Distributes every non-center token of `index` to its most related center.
///
/// Ties on the relatedness maximum go to the lexicographically smallest
/// center hex. Centers become clusters `1..=k` in the given order, each
/// containing itself; a center nobody joins still forms a cluster.
pub fn distribute(index: &InvertedIndex, centers: &[SealedToken]) -> ClusterSet {
    assert!(!centers.is_empty(), "at least one center required");
    let center_set: BTreeSet<&SealedToken> = centers.iter().collect();
    let tokens: Vec<&SealedToken> = index
        .tokens()
        .filter(|t| !center_set.contains(*t))
        .collect();

    let assignments: Vec<(usize, &SealedToken)> = tokens
        .par_iter()
        .map(|token| {
            let mut best: Option<(f64, usize)> = None;
            for (i, center) in centers.iter().enumerate() {
                let r = relatedness(index, center, token);
                best = Some(match best {
                    None => (r, i),
                    Some((br, bi)) => {
                        if r > br || (r == br && center < &centers[bi]) {
                            (r, i)
                        } else {
                            (br, bi)
                        }
                    }
                });
            }
            (best.expect("at least one center").1, *token)
        })
        .collect();

    let mut clusters: Vec<Cluster> = centers
        .iter()
        .enumerate()
        .map(|(i, center)| Cluster {
            id: (i + 1) as u32,
            center: center.clone(),
            members: Vec::new(),
        })
        .collect();
    for (idx, token) in assignments {
        clusters[idx].members.push(token.clone());
    }
    for cluster in &mut clusters {
        cluster.members.sort_unstable();
    }
    ClusterSet { clusters }
}

// ---------------------------------------------------------------------------
// Whole static pipeline
// ---------------------------------------------------------------------------

/// Options for the static clustering pipeline.
#[derive(Debug, Clone, Default)]
pub struct ClusterParams {
    pub trim: TrimMode,
}

/// Everything the static pipeline produced.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub estimation: Estimation,
    pub selection: CenterSelection,
    pub clusters: ClusterSet,
}

/// Runs estimate → select → distribute over a sealed index.
pub fn cluster_index(
    index: &InvertedIndex,
    params: &ClusterParams,
) -> Result<ClusterOutcome, MatrixError> {
    let estimation = estimate_pipeline(index, params.trim)?;
    let retained = index.restrict(estimation.a.tokens());
    let selection = select_centers(estimation.k, &estimation.q, &retained);
    let clusters = distribute(&retained, &selection.centers);
    Ok(ClusterOutcome {
        estimation,
        selection,
        clusters,
    })
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const CLUSTERS_MAGIC: &str = "CLUSPR-CLUSTERS";
const FORMAT_VERSION: &str = "v1";

fn format_err(line: usize, msg: impl Into<String>) -> CorpusError {
    CorpusError::Format { line, msg: msg.into() }
}

/// Serializes a cluster manifest:
/// a `CLUSPR-CLUSTERS v1 <k_used>` header, then per cluster a
/// `C<id>\t<center hex>` line followed by one two-space-indented line per
/// member.
pub fn clusters_to_string(set: &ClusterSet) -> String {
    let mut out = format!("{CLUSTERS_MAGIC} {FORMAT_VERSION} {}\n", set.k_used());
    for cluster in &set.clusters {
        out.push_str(&format!("C{}\t{}\n", cluster.id, cluster.center.as_hex()));
        for member in &cluster.members {
            out.push_str("  ");
            out.push_str(member.as_hex());
            out.push('\n');
        }
    }
    out
}

/// Parses the cluster manifest format, strictly.
pub fn clusters_from_str(text: &str) -> Result<ClusterSet, CorpusError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| format_err(1, "missing header"))?;
    let mut parts = header.split(' ');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(CLUSTERS_MAGIC), Some(FORMAT_VERSION), Some(k), None) => {
            k.parse::<usize>()
                .map_err(|_| format_err(1, format!("bad cluster count {k:?}")))?;
        }
        _ => return Err(format_err(1, format!("malformed header {header:?}"))),
    }

    let mut set = ClusterSet::default();
    for (lineno, line) in lines {
        let lineno = lineno + 1;
        if let Some(member) = line.strip_prefix("  ") {
            let token = SealedToken::from_hex(member)
                .map_err(|_| format_err(lineno, format!("bad member {member:?}")))?;
            let cluster = set
                .clusters
                .last_mut()
                .ok_or_else(|| format_err(lineno, "member before any cluster"))?;
            if let Some(prev) = cluster.members.last() {
                if *prev >= token {
                    return Err(format_err(lineno, "members out of order"));
                }
            }
            cluster.members.push(token);
        } else {
            let (id, center) = line
                .split_once('\t')
                .ok_or_else(|| format_err(lineno, "missing tab separator"))?;
            let id = id
                .strip_prefix('C')
                .and_then(|n| n.parse::<u32>().ok())
                .ok_or_else(|| format_err(lineno, format!("bad cluster id {id:?}")))?;
            let center = SealedToken::from_hex(center)
                .map_err(|_| format_err(lineno, format!("bad center {center:?}")))?;
            if set.clusters.iter().any(|c| c.id == id) {
                return Err(format_err(lineno, format!("duplicate cluster id {id}")));
            }
            set.clusters.push(Cluster {
                id,
                center,
                members: Vec::new(),
            });
        }
    }
    let declared: usize = text
        .lines()
        .next()
        .and_then(|h| h.split(' ').nth(2))
        .and_then(|k| k.parse().ok())
        .expect("header validated above");
    if declared != set.k_used() {
        return Err(format_err(
            1,
            format!("header declares {declared} clusters, found {}", set.k_used()),
        ));
    }
    Ok(set)
}

pub fn write_clusters(set: &ClusterSet, path: &std::path::Path) -> Result<(), CorpusError> {
    std::fs::write(path, clusters_to_string(set)).map_err(Into::into)
}

pub fn read_clusters(path: &std::path::Path) -> Result<ClusterSet, CorpusError> {
    clusters_from_str(&std::fs::read_to_string(path)?)
}

//! Desk-scale evaluation machinery.
//!
//! Measures clustering quality as mean pairwise embedding similarity,
//! provides two comparison baselines (a seeded random assignment and Lloyd
//! k-means over normalized document-frequency rows), parses relevance
//! judgments, and runs the gated-versus-always-update batch experiment
//! with confidence intervals over repetitions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::abstracts::{
    build_abstracts, coherency, AbstractError, AbstractSet, SimilarityModel,
};
use crate::corpus::{
    build_index, build_temp, build_unseal_maps, merge_temp, read_corpus_dir,
    CorpusError, InvertedIndex, KeyMaterial, SealedToken,
};
use crate::dynclust::{
    decide_recluster, full_recluster, update_clusters, DynError, UpdateBatch,
};
use crate::kestimate::{frequency_matrix, normalize, MatrixError, TrimMode};
use crate::statclust::{cluster_index, Cluster, ClusterParams, ClusterSet};

/// Errors from evaluation runs and their input files.
#[derive(Debug, Error)]
pub enum EvalError {
    /// No cluster had two or more in-vocabulary members to measure.
    #[error("every cluster has fewer than two in-vocabulary members")]
    NoDefinedClusters,
    /// A clustered token is missing from the unseal map.
    #[error("no plaintext known for sealed token {token}")]
    MissingPlaintext { token: String },
    /// The experiment plan file is malformed or inconsistent.
    #[error("experiment plan error at line {line}: {msg}")]
    Plan { line: usize, msg: String },
    /// The relevance-judgment file is malformed.
    #[error("qrels error at line {line}: {msg}")]
    Qrels { line: usize, msg: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Update(#[from] DynError),
    #[error(transparent)]
    Abstracts(#[from] AbstractError),
}

// ---------------------------------------------------------------------------
// Cluster coherency
// ---------------------------------------------------------------------------

/// One cluster's measured quality.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterQuality {
    pub cluster_id: u32,
    pub size: usize,
    /// Mean pairwise similarity of in-vocabulary members; `None` when
    /// fewer than two members are in the model vocabulary.
    pub coherency: Option<f64>,
}

/// Per-cluster coherencies and their mean, tagged with a scheme label.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherencyReport {
    pub scheme: String,
    pub k_used: usize,
    pub per_cluster: Vec<ClusterQuality>,
    /// Arithmetic mean over the clusters whose coherency is defined.
    pub overall: f64,
}

/// Measures every cluster as the mean pairwise similarity of its members'
/// plaintexts (center included). Clusters with fewer than two
/// in-vocabulary members get no value and do not pull the overall mean.
pub fn cluster_coherency(
    clusters: &ClusterSet,
    unseal: &HashMap<SealedToken, String>,
    model: &SimilarityModel,
    scheme: &str,
) -> Result<CoherencyReport, EvalError> {
    let mut per_cluster = Vec::with_capacity(clusters.clusters.len());
    for cluster in &clusters.clusters {
        let mut words = Vec::with_capacity(cluster.len());
        for token in cluster.tokens() {
            let word = unseal.get(token).ok_or_else(|| EvalError::MissingPlaintext {
                token: token.as_hex().to_owned(),
            })?;
            words.push(word.clone());
        }
        per_cluster.push(ClusterQuality {
            cluster_id: cluster.id,
            size: words.len(),
            coherency: coherency(&words, model).ok(),
        });
    }
    let defined: Vec<f64> = per_cluster.iter().filter_map(|c| c.coherency).collect();
    if defined.is_empty() {
        return Err(EvalError::NoDefinedClusters);
    }
    Ok(CoherencyReport {
        scheme: scheme.to_owned(),
        k_used: clusters.k_used(),
        per_cluster,
        overall: defined.iter().sum::<f64>() / defined.len() as f64,
    })
}

/// Renders a coherency report: a summary comment line, then one
/// `<cluster>\t<size>\t<coherency>` row per cluster.
pub fn coherency_to_tsv(report: &CoherencyReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "# scheme={} k_used={} overall={:.6}",
        report.scheme, report.k_used, report.overall
    )
    .unwrap();
    out.push_str("cluster\tsize\tcoherency\n");
    for c in &report.per_cluster {
        match c.coherency {
            Some(v) => writeln!(out, "{}\t{}\t{:.6}", c.cluster_id, c.size, v).unwrap(),
            None => writeln!(out, "{}\t{}\tundefined", c.cluster_id, c.size).unwrap(),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Deals the tokens into `k` clusters uniformly at random (seeded); the
/// first token dealt to a cluster becomes its center. Useful as the floor
/// a topic-aware clustering must beat.
pub fn random_assignment(tokens: &[SealedToken], k: usize, seed: u64) -> ClusterSet {
    assert!(k >= 1 && k <= tokens.len(), "need 1 ≤ k ≤ token count");
    let mut shuffled: Vec<&SealedToken> = tokens.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let mut buckets: Vec<Vec<&SealedToken>> = vec![Vec::new(); k];
    for (i, token) in shuffled.into_iter().enumerate() {
        buckets[i % k].push(token);
    }
    let clusters = buckets
        .into_iter()
        .enumerate()
        .map(|(i, bucket)| {
            let center = bucket[0].clone();
            let mut members: Vec<SealedToken> =
                bucket[1..].iter().map(|t| (*t).clone()).collect();
            members.sort();
            Cluster {
                id: (i + 1) as u32,
                center,
                members,
            }
        })
        .collect();
    ClusterSet { clusters }
}

/// Lloyd k-means over tokens embedded as their normalized
/// document-frequency rows.
///
/// Initial centroids are `k` distinct token rows drawn by the seeded
/// generator; iterations assign each token to the nearest centroid
/// (squared Euclidean, ties to the lower centroid index) and move each
/// centroid to its members' mean, stopping when assignments stabilize or
/// after `iters` rounds. A centroid that loses all members keeps its
/// position for the next round; clusters still empty at the end are
/// dropped. Each surviving cluster's center is the member nearest the
/// final centroid (ties to the smaller sealed hex).
pub fn kmeans_baseline(
    index: &InvertedIndex,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<ClusterSet, EvalError> {
    let a = frequency_matrix(index, TrimMode::KeepAll)?;
    let n = normalize(&a)?;
    let tokens = n.tokens().to_vec();
    assert!(
        k >= 1 && k <= tokens.len(),
        "need 1 ≤ k ≤ token count, got k={k} over {} tokens",
        tokens.len()
    );
    let rows: Vec<Vec<f64>> = (0..tokens.len()).map(|i| n.dense_row(i)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = rand::seq::index::sample(&mut rng, tokens.len(), k)
        .iter()
        .map(|i| rows[i].clone())
        .collect();

    fn dist2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    let mut assignment: Vec<usize> = vec![usize::MAX; rows.len()];
    for _ in 0..iters {
        let next: Vec<usize> = rows
            .iter()
            .map(|row| {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = dist2(row, centroid);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                best
            })
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = rows
                .iter()
                .zip(&assignment)
                .filter(|(_, a)| **a == c)
                .map(|(r, _)| r)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (d, slot) in centroid.iter_mut().enumerate() {
                *slot = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }

    let mut clusters = Vec::new();
    for (c, centroid) in centroids.iter().enumerate() {
        let member_idx: Vec<usize> = (0..rows.len())
            .filter(|i| assignment[*i] == c)
            .collect();
        if member_idx.is_empty() {
            continue;
        }
        let center_idx = *member_idx
            .iter()
            .min_by(|&&i, &&j| {
                dist2(&rows[i], centroid)
                    .partial_cmp(&dist2(&rows[j], centroid))
                    .expect("finite distances")
                    .then_with(|| tokens[i].cmp(&tokens[j]))
            })
            .expect("cluster is non-empty");
        let mut members: Vec<SealedToken> = member_idx
            .iter()
            .filter(|&&i| i != center_idx)
            .map(|&i| tokens[i].clone())
            .collect();
        members.sort();
        clusters.push(Cluster {
            id: (clusters.len() + 1) as u32,
            center: tokens[center_idx].clone(),
            members,
        });
    }
    Ok(ClusterSet { clusters })
}

// ---------------------------------------------------------------------------
// Relevance judgments
// ---------------------------------------------------------------------------

/// Parsed relevance judgments. The query id doubles as the raw query text;
/// document ids are plaintext and are resolved through the document unseal
/// map at evaluation time.
#[derive(Debug, Clone, Default)]
pub struct QrelSet {
    /// Distinct queries in first-appearance order.
    pub queries: Vec<String>,
    judgments: HashMap<(String, String), bool>,
}

impl QrelSet {
    pub fn relevant(&self, query: &str, doc_id: &str) -> bool {
        *self
            .judgments
            .get(&(query.to_owned(), doc_id.to_owned()))
            .unwrap_or(&false)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

/// Parses `<query>\t<doc-id>\t<0|1>` lines; blank lines and `#` comments
/// are skipped.
pub fn parse_qrels(text: &str) -> Result<QrelSet, EvalError> {
    let mut set = QrelSet::default();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(EvalError::Qrels {
                line: lineno,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let (query, doc, flag) = (fields[0], fields[1], fields[2]);
        if query.is_empty() || doc.is_empty() {
            return Err(EvalError::Qrels {
                line: lineno,
                msg: "empty query or document id".into(),
            });
        }
        let relevant = match flag {
            "0" => false,
            "1" => true,
            other => {
                return Err(EvalError::Qrels {
                    line: lineno,
                    msg: format!("relevance flag must be 0 or 1, got {other:?}"),
                })
            }
        };
        let key = (query.to_owned(), doc.to_owned());
        if set.judgments.insert(key, relevant).is_some() {
            return Err(EvalError::Qrels {
                line: lineno,
                msg: format!("duplicate judgment for query {query:?} doc {doc:?}"),
            });
        }
        if !set.queries.iter().any(|q| q == query) {
            set.queries.push(query.to_owned());
        }
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Batch-update experiment
// ---------------------------------------------------------------------------

/// What to run: base corpus prefix, update batch sizes, repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub corpus_dir: PathBuf,
    /// Number of documents clustered before the first batch.
    pub base_size: usize,
    /// Sizes of successive update batches drawn after the base prefix.
    pub batches: Vec<usize>,
    pub repetitions: u64,
    pub seed: u64,
    /// Shuffle document order per repetition; `false` preserves the
    /// on-disk order so deliberately ordered corpora keep their drift.
    pub shuffle: bool,
}

/// Parses a line-oriented `key=value` plan file. Keys: `corpus` (required),
/// `base` (required), `batches` (comma-separated sizes), `reps`, `seed`,
/// `shuffle`. Blank lines and `#` comments are skipped.
pub fn parse_plan(text: &str) -> Result<ExperimentPlan, EvalError> {
    let plan_err = |line: usize, msg: String| EvalError::Plan { line, msg };
    let mut corpus: Option<PathBuf> = None;
    let mut base: Option<usize> = None;
    let mut batches: Vec<usize> = Vec::new();
    let mut reps: u64 = 1;
    let mut seed: u64 = 0;
    let mut shuffle = false;
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| plan_err(lineno, "expected key=value".into()))?;
        match key.trim() {
            "corpus" => corpus = Some(PathBuf::from(value.trim())),
            "base" => {
                base = Some(value.trim().parse().map_err(|_| {
                    plan_err(lineno, format!("base must be a positive integer, got {value:?}"))
                })?)
            }
            "batches" => {
                batches = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<usize>().map_err(|_| {
                            plan_err(lineno, format!("batch size must be an integer, got {s:?}"))
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
            "reps" => {
                reps = value.trim().parse().map_err(|_| {
                    plan_err(lineno, format!("reps must be a positive integer, got {value:?}"))
                })?
            }
            "seed" => {
                seed = value.trim().parse().map_err(|_| {
                    plan_err(lineno, format!("seed must be an integer, got {value:?}"))
                })?
            }
            "shuffle" => {
                shuffle = match value.trim() {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(plan_err(
                            lineno,
                            format!("shuffle must be true or false, got {other:?}"),
                        ))
                    }
                }
            }
            other => return Err(plan_err(lineno, format!("unknown key {other:?}"))),
        }
    }
    let corpus_dir =
        corpus.ok_or_else(|| plan_err(0, "missing required key: corpus".into()))?;
    let base_size = base.ok_or_else(|| plan_err(0, "missing required key: base".into()))?;
    if base_size == 0 {
        return Err(plan_err(0, "base must be at least 1".into()));
    }
    if batches.contains(&0) {
        return Err(plan_err(0, "batch sizes must be at least 1".into()));
    }
    if reps == 0 {
        return Err(plan_err(0, "reps must be at least 1".into()));
    }
    Ok(ExperimentPlan {
        corpus_dir,
        base_size,
        batches,
        repetitions: reps,
        seed,
        shuffle,
    })
}

/// Shared inputs an experiment run needs beyond the plan.
pub struct ExperimentContext<'a> {
    pub key: &'a KeyMaterial,
    pub model: &'a SimilarityModel,
    pub tokens_per_doc: usize,
    pub alpha: usize,
    pub trim: TrimMode,
}

/// One aggregated report row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scheme: String,
    /// 0 is the base clustering; batch b ≥ 1 is the state after batch b.
    pub batch: usize,
    pub coherency_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean cluster count over repetitions.
    pub k_used_mean: f64,
    /// `base`, `update`, `recluster`, or `mixed` when repetitions disagree.
    pub decision: String,
}

/// Aggregated experiment output.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("scheme\tbatch\tcoherency_mean\tci_low\tci_high\tk_used\tdecision\n");
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.2}\t{}",
                r.scheme, r.batch, r.coherency_mean, r.ci_low, r.ci_high, r.k_used_mean, r.decision
            )
            .unwrap();
        }
        out
    }
}

struct Arm {
    index: InvertedIndex,
    clusters: ClusterSet,
    abstracts: AbstractSet,
    /// Accumulated new tokens whose batches skipped re-clustering; their
    /// postings are already merged, only the count feeds future gates.
    pending: BTreeSet<SealedToken>,
}

fn apply_update(
    arm: &mut Arm,
    batch: &UpdateBatch,
    ctx: &ExperimentContext,
) {
    update_clusters(
        &mut arm.clusters,
        &mut arm.abstracts,
        batch,
        ctx.model,
        ctx.alpha,
    );
    arm.abstracts.recompute_theta();
    arm.index = merge_temp(std::mem::take(&mut arm.index), &batch.temp);
}

/// Runs the batch-update experiment with two arms per repetition: `gated`
/// honors the drift gate (re-clustering when it fires, otherwise the
/// incremental update), `baseline` always takes the incremental update.
/// Rows aggregate coherency over repetitions as mean ± 1.96·stderr.
pub fn run_update_experiment(
    plan: &ExperimentPlan,
    ctx: &ExperimentContext,
) -> Result<ExperimentReport, EvalError> {
    let docs = read_corpus_dir(&plan.corpus_dir)?;
    let needed = plan.base_size + plan.batches.iter().sum::<usize>();
    if needed > docs.len() {
        return Err(EvalError::Plan {
            line: 0,
            msg: format!(
                "plan needs {needed} documents but the corpus holds {}",
                docs.len()
            ),
        });
    }
    let params = ClusterParams { trim: ctx.trim };

    type Sample = (f64, usize, &'static str);
    let mut samples: BTreeMap<(&'static str, usize), Vec<Sample>> = BTreeMap::new();

    for rep in 0..plan.repetitions {
        let mut order = docs.clone();
        if plan.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(rep));
            order.shuffle(&mut rng);
        }
        let (dict, _) = build_unseal_maps(&order, ctx.key, ctx.tokens_per_doc)?;

        let base_index = build_index(&order[..plan.base_size], ctx.key, ctx.tokens_per_doc)?;
        let outcome = cluster_index(&base_index, &params)?;
        let abstracts =
            build_abstracts(&outcome.clusters, &base_index, &dict, ctx.alpha, ctx.model)?;
        let base_report = cluster_coherency(&outcome.clusters, &dict, ctx.model, "base")?;
        for scheme in ["baseline", "gated"] {
            samples.entry((scheme, 0)).or_default().push((
                base_report.overall,
                outcome.clusters.k_used(),
                "base",
            ));
        }

        let mut gated = Arm {
            index: base_index.clone(),
            clusters: outcome.clusters.clone(),
            abstracts: abstracts.clone(),
            pending: BTreeSet::new(),
        };
        let mut baseline = Arm {
            index: base_index,
            clusters: outcome.clusters,
            abstracts,
            pending: BTreeSet::new(),
        };

        let mut cursor = plan.base_size;
        for (bi, &size) in plan.batches.iter().enumerate() {
            let temp = build_temp(&order[cursor..cursor + size], ctx.key, ctx.tokens_per_doc)?;
            cursor += size;
            for (scheme, arm, gate) in [
                ("baseline", &mut baseline, false),
                ("gated", &mut gated, true),
            ] {
                let batch = UpdateBatch::prepare(temp.clone(), &arm.index, &dict)?;
                let mut pending = arm.pending.clone();
                pending.extend(batch.new_tokens.iter().cloned());
                let decision_label;
                if gate
                    && decide_recluster(pending.len(), arm.clusters.token_count()).recluster
                {
                    let out = full_recluster(&arm.index, &temp, &params)?;
                    arm.index = out.merged;
                    arm.clusters = out.outcome.clusters;
                    arm.abstracts =
                        build_abstracts(&arm.clusters, &arm.index, &dict, ctx.alpha, ctx.model)?;
                    arm.pending.clear();
                    decision_label = "recluster";
                } else {
                    apply_update(arm, &batch, ctx);
                    arm.pending = pending;
                    decision_label = "update";
                }
                let report = cluster_coherency(&arm.clusters, &dict, ctx.model, scheme)?;
                samples.entry((scheme, bi + 1)).or_default().push((
                    report.overall,
                    arm.clusters.k_used(),
                    decision_label,
                ));
            }
        }
    }

    let rows = samples
        .into_iter()
        .map(|((scheme, batch), values)| {
            let n = values.len() as f64;
            let mean = values.iter().map(|v| v.0).sum::<f64>() / n;
            let stderr = if values.len() > 1 {
                let var = values.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>()
                    / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            let k_used_mean = values.iter().map(|v| v.1 as f64).sum::<f64>() / n;
            let decision = if values.iter().all(|v| v.2 == values[0].2) {
                values[0].2.to_owned()
            } else {
                "mixed".to_owned()
            };
            ReportRow {
                scheme: scheme.to_owned(),
                batch,
                coherency_mean: mean,
                ci_low: mean - 1.96 * stderr,
                ci_high: mean + 1.96 * stderr,
                k_used_mean,
                decision,
            }
        })
        .collect();
    Ok(ExperimentReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstracts::model_from_str;
    use std::fs;

    fn key() -> KeyMaterial {
        KeyMaterial::new(vec![11u8; 32]).unwrap()
    }

    const TWO_TOPIC_MODEL: &str = "\
9 2
wind 10 1
gust 10 0.8
storm 10 1.2
breeze 10 0.9
squall 10 1.05
coin 1 10
mint 0.8 10
vault 1.2 10
ledger 0.9 10
";

    fn model() -> SimilarityModel {
        model_from_str(TWO_TOPIC_MODEL).unwrap()
    }

    fn cluster_set(groups: &[&[&str]], k: &KeyMaterial) -> ClusterSet {
        ClusterSet {
            clusters: groups
                .iter()
                .enumerate()
                .map(|(i, words)| {
                    let mut members: Vec<SealedToken> =
                        words[1..].iter().map(|w| k.seal_token(w)).collect();
                    members.sort();
                    Cluster {
                        id: (i + 1) as u32,
                        center: k.seal_token(words[0]),
                        members,
                    }
                })
                .collect(),
        }
    }

    fn unseal_of(words: &[&str], k: &KeyMaterial) -> HashMap<SealedToken, String> {
        words
            .iter()
            .map(|w| (k.seal_token(w), (*w).to_string()))
            .collect()
    }

    #[test]
    fn identical_vectors_give_overall_one() {
        let model = model_from_str("2 2\nsame 3 4\nalso 3 4\n").unwrap();
        let k = key();
        let clusters = cluster_set(&[&["same", "also"]], &k);
        let unseal = unseal_of(&["same", "also"], &k);
        let report = cluster_coherency(&clusters, &unseal, &model, "test").unwrap();
        assert!((report.overall - 1.0).abs() < 1e-12);
        assert_eq!(report.k_used, 1);
    }

    #[test]
    fn overall_is_the_mean_of_defined_clusters() {
        // cos(p, q) = 0.2 and cos(r, s) = 0.6 by construction.
        let model = model_from_str(
            "4 2\np 1 0\nq 0.2 0.9797958971\nr 0 1\ns 0.8 0.6\n",
        )
        .unwrap();
        let k = key();
        let clusters = cluster_set(&[&["p", "q"], &["r", "s"]], &k);
        let unseal = unseal_of(&["p", "q", "r", "s"], &k);
        let report = cluster_coherency(&clusters, &unseal, &model, "test").unwrap();
        assert!((report.overall - 0.4).abs() < 1e-9);
    }

    #[test]
    fn undefined_clusters_are_reported_but_not_averaged() {
        let model = model_from_str("2 2\np 1 0\nq 0.2 0.9797958971\n").unwrap();
        let k = key();
        let clusters = cluster_set(&[&["p", "q"], &["mystery", "unknown"]], &k);
        let unseal = unseal_of(&["p", "q", "mystery", "unknown"], &k);
        let report = cluster_coherency(&clusters, &unseal, &model, "test").unwrap();
        assert_eq!(report.per_cluster[1].coherency, None);
        assert!((report.overall - 0.2).abs() < 1e-9);
        let tsv = coherency_to_tsv(&report);
        assert!(tsv.contains("2\t2\tundefined"));
    }

    #[test]
    fn all_undefined_is_an_error() {
        let model = model_from_str("1 2\nlonely 1 0\n").unwrap();
        let k = key();
        let clusters = cluster_set(&[&["mystery", "unknown"]], &k);
        let unseal = unseal_of(&["mystery", "unknown"], &k);
        assert!(matches!(
            cluster_coherency(&clusters, &unseal, &model, "t"),
            Err(EvalError::NoDefinedClusters)
        ));
    }

    #[test]
    fn missing_plaintext_is_an_error() {
        let k = key();
        let clusters = cluster_set(&[&["wind", "gust"]], &k);
        let unseal = unseal_of(&["wind"], &k);
        assert!(matches!(
            cluster_coherency(&clusters, &unseal, &model(), "t"),
            Err(EvalError::MissingPlaintext { .. })
        ));
    }

    #[test]
    fn coherency_matches_a_brute_force_pairwise_mean() {
        let k = key();
        let words = ["wind", "gust", "storm", "coin", "mint", "breeze"];
        let clusters = cluster_set(&[&words], &k);
        let unseal = unseal_of(&words, &k);
        let m = model();
        let report = cluster_coherency(&clusters, &unseal, &m, "t").unwrap();
        let mut sum = 0.0;
        let mut pairs = 0u32;
        for i in 0..words.len() {
            for j in (i + 1)..words.len() {
                sum += m.sim(words[i], words[j]).unwrap();
                pairs += 1;
            }
        }
        assert!((report.overall - sum / f64::from(pairs)).abs() < 1e-12);
    }

    #[test]
    fn random_assignment_partitions_deterministically() {
        let k = key();
        let tokens: Vec<SealedToken> =
            (0..10).map(|i| k.seal_token(&format!("w{i}"))).collect();
        let a = random_assignment(&tokens, 3, 42);
        let b = random_assignment(&tokens, 3, 42);
        assert_eq!(a, b);
        assert_eq!(a.k_used(), 3);
        assert_eq!(a.token_count(), 10);
        let mut seen: Vec<&SealedToken> = a.all_tokens().collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 10);
    }

    fn two_group_index(k: &KeyMaterial) -> InvertedIndex {
        let mut index = InvertedIndex::new();
        for (t, d) in [
            ("p", "d1"), ("p", "d2"),
            ("q", "d1"), ("q", "d2"),
            ("r", "d1"), ("r", "d2"),
            ("s", "d3"), ("s", "d4"),
            ("t", "d3"), ("t", "d4"),
        ] {
            index.add_occurrences(k.seal_token(t), k.seal_doc(d), 1);
        }
        index.set_doc_count(4);
        index
    }

    #[test]
    fn kmeans_recovers_separated_groups() {
        let k = key();
        let index = two_group_index(&k);
        let clusters = kmeans_baseline(&index, 2, 20, 7).unwrap();
        assert_eq!(clusters.k_used(), 2);
        let group_of = |w: &str| {
            clusters
                .cluster_of(&k.seal_token(w))
                .expect("token clustered")
                .id
        };
        assert_eq!(group_of("p"), group_of("q"));
        assert_eq!(group_of("p"), group_of("r"));
        assert_eq!(group_of("s"), group_of("t"));
        assert_ne!(group_of("p"), group_of("s"));
    }

    #[test]
    fn kmeans_with_k_equal_to_token_count_gives_singletons() {
        let k = key();
        // Rows must be distinct for singletons: vary frequencies.
        let mut index = InvertedIndex::new();
        for (i, (t, d)) in [("p", "d1"), ("q", "d2"), ("r", "d1"), ("s", "d2")]
            .iter()
            .enumerate()
        {
            index.add_occurrences(k.seal_token(t), k.seal_doc(d), (i + 1) as u64);
        }
        index.set_doc_count(2);
        let clusters = kmeans_baseline(&index, 4, 10, 3).unwrap();
        assert_eq!(clusters.k_used(), 4);
        for c in &clusters.clusters {
            assert!(c.members.is_empty());
        }
    }

    #[test]
    fn kmeans_is_deterministic_under_a_seed() {
        let k = key();
        let index = two_group_index(&k);
        let a = kmeans_baseline(&index, 2, 20, 9).unwrap();
        let b = kmeans_baseline(&index, 2, 20, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn qrels_parse_and_lookup() {
        let text = "# comment\nwind storm\tdoc1\t1\nwind storm\tdoc2\t0\n\ncoin mint\tdoc1\t1\n";
        let set = parse_qrels(text).unwrap();
        assert_eq!(set.queries, vec!["wind storm", "coin mint"]);
        assert!(set.relevant("wind storm", "doc1"));
        assert!(!set.relevant("wind storm", "doc2"));
        assert!(!set.relevant("wind storm", "doc3"), "unjudged defaults to irrelevant");
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn qrels_rejects_malformed_lines() {
        assert!(matches!(
            parse_qrels("only two\tfields"),
            Err(EvalError::Qrels { line: 1, .. })
        ));
        assert!(matches!(
            parse_qrels("q\td\t2"),
            Err(EvalError::Qrels { .. })
        ));
        assert!(matches!(
            parse_qrels("q\td\t1\nq\td\t0"),
            Err(EvalError::Qrels { line: 2, .. })
        ));
    }

    #[test]
    fn plan_parses_with_defaults_and_rejects_nonsense() {
        let plan = parse_plan("corpus=/tmp/c\nbase=8\n").unwrap();
        assert_eq!(plan.base_size, 8);
        assert!(plan.batches.is_empty());
        assert_eq!(plan.repetitions, 1);
        assert_eq!(plan.seed, 0);
        assert!(!plan.shuffle);

        let plan =
            parse_plan("# c\ncorpus=/tmp/c\nbase=4\nbatches=2, 3\nreps=5\nseed=9\nshuffle=true\n")
                .unwrap();
        assert_eq!(plan.batches, vec![2, 3]);
        assert_eq!(plan.repetitions, 5);
        assert!(plan.shuffle);

        assert!(matches!(parse_plan("base=4\n"), Err(EvalError::Plan { .. })));
        assert!(matches!(
            parse_plan("corpus=/tmp/c\nbase=0\n"),
            Err(EvalError::Plan { .. })
        ));
        assert!(matches!(
            parse_plan("corpus=/tmp/c\nbase=4\nreps=0\n"),
            Err(EvalError::Plan { .. })
        ));
        assert!(matches!(
            parse_plan("corpus=/tmp/c\nbase=4\nmystery=1\n"),
            Err(EvalError::Plan { .. })
        ));
    }

    /// Writes the two-topic corpus: 4 wind documents, 4 coin documents,
    /// then any extra bodies appended as later batches.
    fn write_corpus(extra: &[&str]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..4 {
            fs::write(dir.path().join(format!("a{i}.txt")), "wind gust storm breeze")
                .unwrap();
            fs::write(dir.path().join(format!("b{i}.txt")), "coin mint vault ledger")
                .unwrap();
        }
        for (i, body) in extra.iter().enumerate() {
            fs::write(dir.path().join(format!("z{i}.txt")), *body).unwrap();
        }
        dir
    }

    fn ctx<'a>(k: &'a KeyMaterial, m: &'a SimilarityModel) -> ExperimentContext<'a> {
        ExperimentContext {
            key: k,
            model: m,
            tokens_per_doc: 20,
            alpha: 10,
            trim: TrimMode::MeanThreshold,
        }
    }

    #[test]
    fn zero_batches_reports_only_the_base_state() {
        let dir = write_corpus(&[]);
        let k = key();
        let m = model();
        let plan = ExperimentPlan {
            corpus_dir: dir.path().to_path_buf(),
            base_size: 8,
            batches: vec![],
            repetitions: 2,
            seed: 1,
            shuffle: true,
        };
        let report = run_update_experiment(&plan, &ctx(&k, &m)).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert_eq!(row.batch, 0);
            assert_eq!(row.decision, "base");
            assert!((row.k_used_mean - 2.0).abs() < 1e-12);
            // Base size covers the whole corpus, so shuffling cannot
            // change the clustering and the interval collapses.
            assert_eq!(row.ci_low, row.coherency_mean);
            assert_eq!(row.ci_high, row.coherency_mean);
        }
        assert_eq!(report.rows[0].coherency_mean, report.rows[1].coherency_mean);
    }

    #[test]
    fn arms_match_exactly_when_the_gate_never_fires() {
        // One new token against 8 existing: χ² = 49/8 ≈ 6.1 > 3.841, so the
        // gated arm also takes the incremental path every time.
        let dir = write_corpus(&["squall squall gust"]);
        let k = key();
        let m = model();
        let plan = ExperimentPlan {
            corpus_dir: dir.path().to_path_buf(),
            base_size: 8,
            batches: vec![1],
            repetitions: 1,
            seed: 0,
            shuffle: false,
        };
        let report = run_update_experiment(&plan, &ctx(&k, &m)).unwrap();
        assert_eq!(report.rows.len(), 4);
        let row = |scheme: &str, batch: usize| {
            report
                .rows
                .iter()
                .find(|r| r.scheme == scheme && r.batch == batch)
                .unwrap()
        };
        let (b1, g1) = (row("baseline", 1), row("gated", 1));
        assert_eq!(b1.decision, "update");
        assert_eq!(g1.decision, "update");
        assert_eq!(b1.coherency_mean, g1.coherency_mean);
        assert_eq!(b1.k_used_mean, g1.k_used_mean);
    }

    #[test]
    fn gate_fires_on_a_vocabulary_surge_and_reclusters() {
        // Eight out-of-vocabulary tokens against 8 existing: χ² = 0 →
        // re-cluster. Trimming then drops the one-document newcomers, so
        // the gated arm returns to the clean 2-topic clustering while the
        // baseline arm keeps 8 extra singletons.
        let dir = write_corpus(&["x1 x2 x3 x4 x5 x6 x7 x8"]);
        let k = key();
        let m = model();
        let plan = ExperimentPlan {
            corpus_dir: dir.path().to_path_buf(),
            base_size: 8,
            batches: vec![1],
            repetitions: 1,
            seed: 0,
            shuffle: false,
        };
        let report = run_update_experiment(&plan, &ctx(&k, &m)).unwrap();
        let row = |scheme: &str, batch: usize| {
            report
                .rows
                .iter()
                .find(|r| r.scheme == scheme && r.batch == batch)
                .unwrap()
        };
        assert_eq!(row("gated", 1).decision, "recluster");
        assert!((row("gated", 1).k_used_mean - 2.0).abs() < 1e-12);
        assert_eq!(row("baseline", 1).decision, "update");
        assert!((row("baseline", 1).k_used_mean - 10.0).abs() < 1e-12);
        assert!(row("gated", 1).coherency_mean >= row("baseline", 1).coherency_mean);
    }

    #[test]
    fn experiment_reports_are_bit_for_bit_reproducible() {
        let dir = write_corpus(&["squall gust wind", "coin vault mint"]);
        let k = key();
        let m = model();
        let plan = ExperimentPlan {
            corpus_dir: dir.path().to_path_buf(),
            base_size: 6,
            batches: vec![2, 2],
            repetitions: 3,
            seed: 123,
            shuffle: true,
        };
        let a = run_update_experiment(&plan, &ctx(&k, &m)).unwrap();
        let b = run_update_experiment(&plan, &ctx(&k, &m)).unwrap();
        assert_eq!(a.to_tsv(), b.to_tsv());
        assert!(a.to_tsv().starts_with(
            "scheme\tbatch\tcoherency_mean\tci_low\tci_high\tk_used\tdecision\n"
        ));
    }
}

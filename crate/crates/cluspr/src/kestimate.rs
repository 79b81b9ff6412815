//! Estimating how many clusters a sealed index supports.
//!
//! The estimate is read off a chain of matrices derived from the index:
//!
//! 1. `A` — token × document frequency matrix, optionally trimmed to tokens
//!    whose distinct-document count reaches the corpus mean;
//! 2. `N` — `A` with every column divided by its maximum;
//! 3. `R` — `N` with every row divided by its sum (token importance across
//!    documents);
//! 4. `S` — transpose of `N` with every row divided by its sum (document
//!    importance across tokens);
//! 5. `Q = R·S` — a row-stochastic token × token similarity;
//! 6. `k = ⌈trace(Q)⌉`, clamped to `1..=m`.
//!
//! All stages keep sparse rows; `Q` is materialized densely only below a
//! configurable vocabulary size.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::corpus::{InvertedIndex, SealedDocId, SealedToken};

/// Vocabulary size up to which `Q` is stored densely.
pub const DEFAULT_DENSE_THRESHOLD: usize = 10_000;

/// Errors from the matrix pipeline.
#[derive(Debug, Error)]
pub enum MatrixError {
    /// The document-count filter removed every token.
    #[error("no token survived the document-count trim")]
    EmptyAfterTrim,
    /// A row to be normalized sums to zero.
    #[error("row {row} sums to zero and cannot be normalized")]
    ZeroRow { row: usize },
    /// Two matrices that must share an orientation do not.
    #[error("matrix shapes disagree: {msg}")]
    ShapeMismatch { msg: String },
}

fn fmt_cell(value: f64) -> String {
    format!("{value:.6}")
}

/// Writes a labeled dense TSV grid: one header row of column labels, then one
/// line per row with its label first. Used by all matrix debug dumps.
fn grid_tsv<R, C>(rows: &[R], cols: &[C], cell: impl Fn(usize, usize) -> String) -> String
where
    R: AsRef<str>,
    C: AsRef<str>,
{
    let mut out = String::new();
    for col in cols {
        out.push('\t');
        out.push_str(col.as_ref());
    }
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        out.push_str(row.as_ref());
        for j in 0..cols.len() {
            out.push('\t');
            out.push_str(&cell(i, j));
        }
        out.push('\n');
    }
    out
}

fn hex_labels<T: AsHex>(items: &[T]) -> Vec<&str> {
    items.iter().map(AsHex::as_hex_str).collect()
}

trait AsHex {
    fn as_hex_str(&self) -> &str;
}

impl AsHex for SealedToken {
    fn as_hex_str(&self) -> &str {
        self.as_hex()
    }
}

impl AsHex for SealedDocId {
    fn as_hex_str(&self) -> &str {
        self.as_hex()
    }
}

// ---------------------------------------------------------------------------
// A — frequency matrix
// ---------------------------------------------------------------------------

/// Whether the frequency matrix keeps every token or only well-spread ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrimMode {
    /// Keep tokens whose distinct-document count is at least the mean
    /// document count over all tokens.
    #[default]
    MeanThreshold,
    /// Keep every token.
    KeepAll,
}

/// Sparse token × document frequency matrix.
///
/// Rows follow `tokens` (lexicographic), columns follow `docs`
/// (lexicographic). Each row holds `(column, frequency)` pairs sorted by
/// column; every row and every column has at least one entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqMatrix {
    tokens: Vec<SealedToken>,
    docs: Vec<SealedDocId>,
    rows: Vec<Vec<(usize, u64)>>,
}

impl FreqMatrix {
    pub fn tokens(&self) -> &[SealedToken] {
        &self.tokens
    }

    pub fn docs(&self) -> &[SealedDocId] {
        &self.docs
    }

    pub fn rows(&self) -> &[Vec<(usize, u64)>] {
        &self.rows
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    /// Dense TSV dump with sealed identifiers as labels, for debugging.
    pub fn to_tsv(&self) -> String {
        grid_tsv(&hex_labels(&self.tokens), &hex_labels(&self.docs), |i, j| {
            let v = self.rows[i]
                .iter()
                .find(|(c, _)| *c == j)
                .map_or(0, |(_, f)| *f);
            v.to_string()
        })
    }
}

/// Builds the frequency matrix, trimming by the mean-document-count rule.
///
/// A token is kept iff its distinct-document count is at least the
/// arithmetic mean of those counts over all tokens; the comparison is done
/// in integers (`count·m ≥ total`), so no rounding is involved. Document
/// columns left without entries are dropped.
pub fn trim(index: &InvertedIndex) -> Result<FreqMatrix, MatrixError> {
    frequency_matrix(index, TrimMode::MeanThreshold)
}

/// Builds the untrimmed frequency matrix over every token.
pub fn full_matrix(index: &InvertedIndex) -> Result<FreqMatrix, MatrixError> {
    frequency_matrix(index, TrimMode::KeepAll)
}

/// Builds the frequency matrix under the given trim mode.
pub fn frequency_matrix(
    index: &InvertedIndex,
    mode: TrimMode,
) -> Result<FreqMatrix, MatrixError> {
    let total: u128 = index
        .tokens()
        .map(|t| index.doc_association(t) as u128)
        .sum();
    let m = index.token_count() as u128;
    let keep = |count: usize| match mode {
        TrimMode::MeanThreshold => (count as u128) * m >= total,
        TrimMode::KeepAll => true,
    };

    let tokens: Vec<SealedToken> = index
        .tokens()
        .filter(|t| keep(index.doc_association(t)))
        .cloned()
        .collect();
    if tokens.is_empty() {
        return Err(MatrixError::EmptyAfterTrim);
    }

    // Only documents still referenced by a kept token become columns.
    let docs: Vec<SealedDocId> = {
        let mut set = BTreeSet::new();
        for token in &tokens {
            for posting in index.postings(token).expect("token from index") {
                set.insert(posting.doc.clone());
            }
        }
        set.into_iter().collect()
    };
    let col_of = |doc: &SealedDocId| docs.binary_search(doc).expect("doc from set");

    let rows = tokens
        .iter()
        .map(|token| {
            index
                .postings(token)
                .expect("token from index")
                .iter()
                .map(|p| (col_of(&p.doc), p.freq))
                .collect()
        })
        .collect();
    Ok(FreqMatrix { tokens, docs, rows })
}

// ---------------------------------------------------------------------------
// N — column-max normalization
// ---------------------------------------------------------------------------

/// `A` with each column divided by its maximum; entries lie in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormMatrix {
    tokens: Vec<SealedToken>,
    docs: Vec<SealedDocId>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormMatrix {
    pub fn tokens(&self) -> &[SealedToken] {
        &self.tokens
    }

    pub fn docs(&self) -> &[SealedDocId] {
        &self.docs
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Dense row `i` as a vector over all document columns.
    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.docs.len()];
        for &(j, v) in &self.rows[i] {
            row[j] = v;
        }
        row
    }

    pub fn to_tsv(&self) -> String {
        grid_tsv(&hex_labels(&self.tokens), &hex_labels(&self.docs), |i, j| {
            let v = self.rows[i]
                .iter()
                .find(|(c, _)| *c == j)
                .map_or(0.0, |(_, v)| *v);
            fmt_cell(v)
        })
    }
}

/// Divides every column of `A` by its column maximum.
pub fn normalize(a: &FreqMatrix) -> Result<NormMatrix, MatrixError> {
    let mut col_max = vec![0u64; a.docs.len()];
    for row in &a.rows {
        for &(j, f) in row {
            col_max[j] = col_max[j].max(f);
        }
    }
    // Every column of a FreqMatrix has at least one entry, and entries are
    // positive, so no zero maximum can appear.
    debug_assert!(col_max.iter().all(|&m| m > 0));

    let rows = a
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .map(|&(j, f)| (j, f as f64 / col_max[j] as f64))
                .collect()
        })
        .collect();
    Ok(NormMatrix {
        tokens: a.tokens.clone(),
        docs: a.docs.clone(),
        rows,
    })
}

// ---------------------------------------------------------------------------
// R and S — row-wise importance matrices
// ---------------------------------------------------------------------------

/// Row-stochastic token × document matrix: each row of `N` scaled by its sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RowImportance {
    tokens: Vec<SealedToken>,
    docs: Vec<SealedDocId>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl RowImportance {
    pub fn tokens(&self) -> &[SealedToken] {
        &self.tokens
    }

    pub fn docs(&self) -> &[SealedDocId] {
        &self.docs
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn to_tsv(&self) -> String {
        grid_tsv(&hex_labels(&self.tokens), &hex_labels(&self.docs), |i, j| {
            let v = self.rows[i]
                .iter()
                .find(|(c, _)| *c == j)
                .map_or(0.0, |(_, v)| *v);
            fmt_cell(v)
        })
    }
}

/// Row-stochastic document × token matrix: column `j` of `N` scaled by its
/// sum, laid out as row `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DocImportance {
    tokens: Vec<SealedToken>,
    docs: Vec<SealedDocId>,
    /// One row per document; entries are `(token column, value)`.
    rows: Vec<Vec<(usize, f64)>>,
}

impl DocImportance {
    pub fn tokens(&self) -> &[SealedToken] {
        &self.tokens
    }

    pub fn docs(&self) -> &[SealedDocId] {
        &self.docs
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn to_tsv(&self) -> String {
        grid_tsv(&hex_labels(&self.docs), &hex_labels(&self.tokens), |i, j| {
            let v = self.rows[i]
                .iter()
                .find(|(c, _)| *c == j)
                .map_or(0.0, |(_, v)| *v);
            fmt_cell(v)
        })
    }
}

/// Scales every row of `N` to sum to one.
pub fn row_importance(n: &NormMatrix) -> Result<RowImportance, MatrixError> {
    let rows = n
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let sum: f64 = row.iter().map(|&(_, v)| v).sum();
            if sum <= 0.0 {
                return Err(MatrixError::ZeroRow { row: i });
            }
            Ok(row.iter().map(|&(j, v)| (j, v / sum)).collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(RowImportance {
        tokens: n.tokens.clone(),
        docs: n.docs.clone(),
        rows,
    })
}

/// Scales every column of `N` to sum to one and transposes, giving one
/// row-stochastic row per document.
pub fn doc_importance(n: &NormMatrix) -> Result<DocImportance, MatrixError> {
    let mut col_sum = vec![0.0f64; n.docs.len()];
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n.docs.len()];
    for (i, row) in n.rows.iter().enumerate() {
        for &(j, v) in row {
            col_sum[j] += v;
            cols[j].push((i, v));
        }
    }
    for (j, sum) in col_sum.iter().enumerate() {
        if *sum <= 0.0 {
            return Err(MatrixError::ZeroRow { row: j });
        }
        for entry in &mut cols[j] {
            entry.1 /= sum;
        }
    }
    Ok(DocImportance {
        tokens: n.tokens.clone(),
        docs: n.docs.clone(),
        rows: cols,
    })
}

// ---------------------------------------------------------------------------
// Q — token similarity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum SimStorage {
    Dense(Vec<Vec<f64>>),
    Sparse(Vec<Vec<(usize, f64)>>),
}

/// Row-stochastic token × token similarity matrix `Q = R·S`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicSim {
    tokens: Vec<SealedToken>,
    storage: SimStorage,
}

impl TopicSim {
    /// Wraps an explicit dense matrix; rows and `tokens` must be square.
    pub fn from_dense(tokens: Vec<SealedToken>, rows: Vec<Vec<f64>>) -> Self {
        assert_eq!(tokens.len(), rows.len(), "square matrix required");
        for row in &rows {
            assert_eq!(tokens.len(), row.len(), "square matrix required");
        }
        TopicSim {
            tokens,
            storage: SimStorage::Dense(rows),
        }
    }

    pub fn tokens(&self) -> &[SealedToken] {
        &self.tokens
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            SimStorage::Dense(rows) => rows[i][j],
            SimStorage::Sparse(rows) => rows[i]
                .iter()
                .find(|(c, _)| *c == j)
                .map_or(0.0, |(_, v)| *v),
        }
    }

    /// Dense copy of row `i`.
    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        match &self.storage {
            SimStorage::Dense(rows) => rows[i].clone(),
            SimStorage::Sparse(rows) => {
                let mut row = vec![0.0; self.tokens.len()];
                for &(j, v) in &rows[i] {
                    row[j] = v;
                }
                row
            }
        }
    }

    /// The diagonal entry `q_ii` for token row `i`.
    pub fn self_similarity(&self, i: usize) -> f64 {
        self.value(i, i)
    }

    pub fn trace(&self) -> f64 {
        (0..self.tokens.len()).map(|i| self.value(i, i)).sum()
    }

    pub fn to_tsv(&self) -> String {
        let labels = hex_labels(&self.tokens);
        grid_tsv(&labels, &labels, |i, j| fmt_cell(self.value(i, j)))
    }
}

/// Multiplies `R · S` into the token similarity matrix.
///
/// Produces a dense matrix when the vocabulary is at most
/// [`DEFAULT_DENSE_THRESHOLD`] tokens, sparse rows otherwise.
pub fn topic_similarity(
    r: &RowImportance,
    s: &DocImportance,
) -> Result<TopicSim, MatrixError> {
    topic_similarity_with(r, s, DEFAULT_DENSE_THRESHOLD)
}

/// [`topic_similarity`] with an explicit dense-storage threshold.
pub fn topic_similarity_with(
    r: &RowImportance,
    s: &DocImportance,
    dense_threshold: usize,
) -> Result<TopicSim, MatrixError> {
    if r.tokens != s.tokens || r.docs != s.docs {
        return Err(MatrixError::ShapeMismatch {
            msg: format!(
                "{} tokens × {} docs vs {} tokens × {} docs",
                r.tokens.len(),
                r.docs.len(),
                s.tokens.len(),
                s.docs.len()
            ),
        });
    }
    let m = r.tokens.len();
    let dense = m <= dense_threshold;

    let make_row = |row_r: &Vec<(usize, f64)>| -> Vec<f64> {
        let mut acc = vec![0.0f64; m];
        for &(d, rv) in row_r {
            for &(t, sv) in &s.rows[d] {
                acc[t] += rv * sv;
            }
        }
        acc
    };

    let storage = if dense {
        SimStorage::Dense(r.rows.iter().map(make_row).collect())
    } else {
        SimStorage::Sparse(
            r.rows
                .iter()
                .map(|row_r| {
                    make_row(row_r)
                        .into_iter()
                        .enumerate()
                        .filter(|&(_, v)| v != 0.0)
                        .collect()
                })
                .collect(),
        )
    };
    Ok(TopicSim {
        tokens: r.tokens.clone(),
        storage,
    })
}

/// Reads the cluster-count estimate off the similarity matrix:
/// `⌈trace(Q)⌉`, clamped to `1..=m`. Values within `1e-9` of an integer are
/// treated as that integer so float dust cannot bump the ceiling.
pub fn estimate_k(q: &TopicSim) -> usize {
    let m = q.token_count();
    assert!(m >= 1, "similarity matrix must be non-empty");
    let k = (q.trace() - 1e-9).ceil() as i64;
    k.clamp(1, m as i64) as usize
}

// ---------------------------------------------------------------------------
// Whole pipeline
// ---------------------------------------------------------------------------

/// Every stage of the estimation pipeline, retained for debugging dumps and
/// downstream clustering.
#[derive(Debug, Clone)]
pub struct Estimation {
    pub a: FreqMatrix,
    pub n: NormMatrix,
    pub r: RowImportance,
    pub s: DocImportance,
    pub q: TopicSim,
    pub k: usize,
}

/// Runs trim/normalize/importance/similarity/estimate in order.
pub fn estimate_pipeline(
    index: &InvertedIndex,
    mode: TrimMode,
) -> Result<Estimation, MatrixError> {
    let a = frequency_matrix(index, mode)?;
    let n = normalize(&a)?;
    let r = row_importance(&n)?;
    let s = doc_importance(&n)?;
    let q = topic_similarity(&r, &s)?;
    let k = estimate_k(&q);
    Ok(Estimation { a, n, r, s, q, k })
}

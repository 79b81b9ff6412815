//! Topic clustering and pruned search over a sealed inverted index.
//!
//! The crate splits a search pipeline across a trust boundary. The trusted
//! (edge) side tokenizes documents and seals tokens and document ids with a
//! keyed deterministic transform; the untrusted (cloud) side holds only the
//! sealed inverted index and clusters it by co-occurrence statistics, never
//! seeing plaintext. Cluster abstracts — short plaintext summaries kept on
//! the edge — let queries be routed to a few promising clusters instead of
//! the whole index.
//!
//! Modules, in pipeline order:
//!
//! - [`corpus`]: tokenization, sealing, the inverted index and its file formats
//! - [`kestimate`]: cluster-count estimation from the token/document matrix
//! - [`statclust`]: center selection and token distribution for a static corpus
//! - [`abstracts`]: plaintext cluster abstracts, coherency, the join threshold
//! - [`dynclust`]: batch updates — the re-cluster/update decision and both paths
//! - [`search`]: query trapdoors, cluster pruning, scoring, result quality
//! - [`evalharness`]: coherency reports, baselines, and the update experiment
//! - [`fixtures`]: deterministic corpora and vector models used by tests and
//!   the bundled evaluation

pub mod abstracts;
pub mod corpus;
pub mod dynclust;
pub mod evalharness;
pub mod fixtures;
pub mod kestimate;
pub mod search;
pub mod statclust;

pub use corpus::{
    Document, InvertedIndex, KeyMaterial, SealedDocId, SealedToken, TempIndex,
};

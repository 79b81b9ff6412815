//! Plaintext tokenization, keyed sealing, and the sealed inverted index.
//!
//! Everything that is allowed to see plaintext lives here: token extraction,
//! the sealing transform, and the construction of the index that is handed to
//! the untrusted side. Past this module the rest of the crate works with
//! sealed identifiers and plaintext frequencies only.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

/// Errors from tokenization, sealing, and index handling.
#[derive(Debug, Error)]
pub enum CorpusError {
    /// A document body was empty (or whitespace-only) before tokenization.
    #[error("document body is empty")]
    EmptyDocument,
    /// No document in the corpus produced any tokens.
    #[error("no document produced any tokens")]
    EmptyCorpus,
    /// The sealing key is shorter than the required 128 bits.
    #[error("sealing key is {got} bytes, need at least {}", KeyMaterial::MIN_LEN)]
    KeyTooShort { got: usize },
    /// The key file did not contain exactly 32 raw bytes.
    #[error("key file holds {got} bytes, expected exactly {}", KeyMaterial::FILE_LEN)]
    KeyFileSize { got: usize },
    /// A line of a serialized artifact did not match the expected format.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_err(line: usize, msg: impl Into<String>) -> CorpusError {
    CorpusError::Format { line, msg: msg.into() }
}

// ---------------------------------------------------------------------------
// Sealing
// ---------------------------------------------------------------------------

/// Number of lowercase hex characters in every sealed identifier.
pub const SEALED_HEX_LEN: usize = 64;

/// Secret key for the deterministic sealing transform.
///
/// The `Debug` impl never prints the key bytes.
#[derive(Clone)]
pub struct KeyMaterial {
    bytes: Vec<u8>,
}

impl KeyMaterial {
    /// Minimum accepted key length in bytes (128 bits).
    pub const MIN_LEN: usize = 16;
    /// Exact size of an on-disk key file in bytes.
    pub const FILE_LEN: usize = 32;

    /// Wraps raw key bytes, rejecting keys below [`Self::MIN_LEN`].
    pub fn new(bytes: Vec<u8>) -> Result<Self, CorpusError> {
        if bytes.len() < Self::MIN_LEN {
            return Err(CorpusError::KeyTooShort { got: bytes.len() });
        }
        Ok(KeyMaterial { bytes })
    }

    /// Reads a key file: exactly 32 raw bytes, no encoding.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let bytes = fs::read(path)?;
        if bytes.len() != Self::FILE_LEN {
            return Err(CorpusError::KeyFileSize { got: bytes.len() });
        }
        Self::new(bytes)
    }

    /// Seals one plaintext string to its fixed-length lowercase hex form.
    ///
    /// The transform is a keyed MAC, so equal inputs under the same key give
    /// equal output and the plaintext is not recoverable without the key.
    pub fn seal(&self, plaintext: &str) -> String {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.bytes)
            .expect("HMAC accepts any key length");
        mac.update(plaintext.as_bytes());
        let digest = mac.finalize().into_bytes();
        let mut out = String::with_capacity(SEALED_HEX_LEN);
        for byte in digest {
            use fmt::Write;
            write!(out, "{byte:02x}").expect("writing to String cannot fail");
        }
        out
    }

    /// Seals a token string.
    pub fn seal_token(&self, token: &str) -> SealedToken {
        SealedToken(self.seal(token))
    }

    /// Seals a document identifier.
    pub fn seal_doc(&self, doc_id: &str) -> SealedDocId {
        SealedDocId(self.seal(doc_id))
    }
}

impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyMaterial({} bytes)", self.bytes.len())
    }
}

fn check_sealed_hex(s: &str, line: usize, what: &str) -> Result<(), CorpusError> {
    if s.len() != SEALED_HEX_LEN
        || !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    {
        return Err(format_err(
            line,
            format!("{what} must be {SEALED_HEX_LEN} lowercase hex chars, got {s:?}"),
        ));
    }
    Ok(())
}

macro_rules! sealed_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(String);

        impl $name {
            /// Wraps an already-sealed identifier, validating shape only.
            pub fn from_hex(hex: &str) -> Result<Self, CorpusError> {
                check_sealed_hex(hex, 0, stringify!($name))?;
                Ok(Self(hex.to_owned()))
            }

            /// The sealed form as lowercase hex.
            pub fn as_hex(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

sealed_id! {
    /// Sealed form of a token; orderable by its hex representation.
    SealedToken
}
sealed_id! {
    /// Sealed form of a document identifier.
    SealedDocId
}

// ---------------------------------------------------------------------------
// Token extraction
// ---------------------------------------------------------------------------

static STOP_WORDS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    include_str!("../data/stopwords_en.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
});

/// Returns true if `word` is on the built-in stop-word list.
pub fn is_stop_word(word: &str) -> bool {
    STOP_WORDS.contains(word)
}

/// Splits text into lowercase terms: any non-alphanumeric byte separates,
/// stop words are dropped. Order of first occurrence is preserved.
pub fn normalize_terms(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !STOP_WORDS.contains(w))
        .map(str::to_owned)
        .collect()
}

/// Extracts the top-`n` most frequent terms of one document body.
///
/// Terms are lowercased, punctuation acts as a separator, stop words are
/// removed. The result is sorted by descending frequency, ties broken by
/// lexicographic term order, and truncated to `n` entries. A body that is
/// empty after whitespace trimming is an error; a body whose every term is a
/// stop word yields an empty list.
pub fn extract_tokens(body: &str, n: usize) -> Result<Vec<(String, u64)>, CorpusError> {
    assert!(n >= 1, "token budget must be at least 1");
    if body.trim().is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for term in normalize_terms(body) {
        *counts.entry(term).or_insert(0) += 1;
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    // BTreeMap already yields lexicographic order, so a stable sort on
    // descending frequency leaves ties lexicographic.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.truncate(n);
    Ok(ranked)
}

// ---------------------------------------------------------------------------
// Inverted index
// ---------------------------------------------------------------------------

/// One plaintext document prior to ingestion.
#[derive(Debug, Clone)]
pub struct Document {
    pub id: String,
    pub body: String,
}

/// A document reference with the token's frequency in that document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Posting {
    pub doc: SealedDocId,
    pub freq: u64,
}

/// Sealed-token → postings map plus the number of ingested documents.
///
/// Postings per token are kept sorted by sealed document id with no
/// duplicates; iteration over tokens is lexicographic on the sealed hex.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InvertedIndex {
    doc_count: usize,
    entries: BTreeMap<SealedToken, Vec<Posting>>,
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of documents the index was built over. At least as large as
    /// the number of distinct documents referenced by postings (documents
    /// that yielded no tokens still count).
    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn set_doc_count(&mut self, doc_count: usize) {
        self.doc_count = doc_count;
    }

    pub fn token_count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &SealedToken> {
        self.entries.keys()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&SealedToken, &[Posting])> {
        self.entries.iter().map(|(t, p)| (t, p.as_slice()))
    }

    pub fn postings(&self, token: &SealedToken) -> Option<&[Posting]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn contains_token(&self, token: &SealedToken) -> bool {
        self.entries.contains_key(token)
    }

    /// Distinct documents the token occurs in.
    pub fn doc_association(&self, token: &SealedToken) -> usize {
        self.postings(token).map_or(0, <[Posting]>::len)
    }

    /// Sum of the token's frequencies over all documents.
    pub fn total_freq(&self, token: &SealedToken) -> u64 {
        self.postings(token)
            .map_or(0, |p| p.iter().map(|p| p.freq).sum())
    }

    /// Frequency of `token` in `doc`, zero if absent.
    pub fn freq_in(&self, token: &SealedToken, doc: &SealedDocId) -> u64 {
        self.postings(token).map_or(0, |postings| {
            postings
                .binary_search_by(|p| p.doc.cmp(doc))
                .map_or(0, |i| postings[i].freq)
        })
    }

    /// All documents referenced by at least one posting.
    pub fn referenced_docs(&self) -> BTreeSet<&SealedDocId> {
        self.entries
            .values()
            .flat_map(|p| p.iter().map(|p| &p.doc))
            .collect()
    }

    /// Adds `freq` occurrences of `token` in `doc`, merging with an existing
    /// posting for the same pair.
    pub fn add_occurrences(&mut self, token: SealedToken, doc: SealedDocId, freq: u64) {
        assert!(freq >= 1, "posting frequency must be positive");
        let postings = self.entries.entry(token).or_default();
        match postings.binary_search_by(|p| p.doc.cmp(&doc)) {
            Ok(i) => postings[i].freq += freq,
            Err(i) => postings.insert(i, Posting { doc, freq }),
        }
    }

    /// A copy containing only the listed tokens. `doc_count` is preserved:
    /// the restriction narrows the vocabulary, not the corpus.
    pub fn restrict(&self, tokens: &[SealedToken]) -> InvertedIndex {
        let wanted: HashSet<&SealedToken> = tokens.iter().collect();
        InvertedIndex {
            doc_count: self.doc_count,
            entries: self
                .entries
                .iter()
                .filter(|(t, _)| wanted.contains(t))
                .map(|(t, p)| (t.clone(), p.clone()))
                .collect(),
        }
    }
}

/// A batch-scoped index with the same shape as [`InvertedIndex`], kept
/// separate until merged into the central one.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TempIndex(pub InvertedIndex);

impl TempIndex {
    pub fn index(&self) -> &InvertedIndex {
        &self.0
    }
}

/// Builds the sealed inverted index over a corpus.
///
/// Documents yielding zero tokens are skipped with a warning but still count
/// toward `doc_count`. Fails only if no document yields any token.
pub fn build_index(
    docs: &[Document],
    key: &KeyMaterial,
    n: usize,
) -> Result<InvertedIndex, CorpusError> {
    let mut index = InvertedIndex::new();
    index.doc_count = docs.len();
    let mut any = false;
    for doc in docs {
        let ranked = extract_tokens(&doc.body, n)?;
        if ranked.is_empty() {
            log::warn!("document {:?} produced no tokens; skipping", doc.id);
            continue;
        }
        any = true;
        let sealed_doc = key.seal_doc(&doc.id);
        for (token, freq) in ranked {
            index.add_occurrences(key.seal_token(&token), sealed_doc.clone(), freq);
        }
    }
    if !any {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(index)
}

/// Builds a batch index over new documents with the same extraction rules.
pub fn build_temp(
    docs: &[Document],
    key: &KeyMaterial,
    n: usize,
) -> Result<TempIndex, CorpusError> {
    build_index(docs, key, n).map(TempIndex)
}

/// Reads every regular file of a directory as one UTF-8 document.
///
/// The file name becomes the document id; documents come back sorted by
/// file name so repeated runs see the same order. An empty directory is
/// reported as an empty corpus.
pub fn read_corpus_dir(dir: &Path) -> Result<Vec<Document>, CorpusError> {
    let mut paths: Vec<std::path::PathBuf> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            paths.push(entry.path());
        }
    }
    paths.sort();
    let mut docs = Vec::with_capacity(paths.len());
    for path in paths {
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let body = fs::read_to_string(&path)?;
        docs.push(Document { id, body });
    }
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(docs)
}

/// Builds the trusted-side unseal maps for a corpus: sealed token →
/// plaintext word, and sealed document id → plaintext document id. Uses the
/// same extraction rules as [`build_index`], so the token map covers
/// exactly the indexed vocabulary.
pub fn build_unseal_maps(
    docs: &[Document],
    key: &KeyMaterial,
    n: usize,
) -> Result<(HashMap<SealedToken, String>, HashMap<SealedDocId, String>), CorpusError>
{
    let mut tokens = HashMap::new();
    let mut doc_ids = HashMap::new();
    for doc in docs {
        doc_ids.insert(key.seal_doc(&doc.id), doc.id.clone());
        for (word, _) in extract_tokens(&doc.body, n)? {
            tokens.insert(key.seal_token(&word), word);
        }
    }
    Ok((tokens, doc_ids))
}

/// Folds a batch index into the central one.
///
/// Frequencies for the same (token, document) pair are summed; `doc_count`
/// grows by the number of documents the batch references that the central
/// index did not. Merging an empty batch returns the index unchanged.
pub fn merge_temp(mut index: InvertedIndex, temp: &TempIndex) -> InvertedIndex {
    let known: HashSet<SealedDocId> =
        index.referenced_docs().into_iter().cloned().collect();
    let mut new_docs: BTreeSet<&SealedDocId> = BTreeSet::new();
    for (token, postings) in temp.0.entries() {
        for posting in postings {
            if !known.contains(&posting.doc) {
                new_docs.insert(&posting.doc);
            }
            index.add_occurrences(token.clone(), posting.doc.clone(), posting.freq);
        }
    }
    index.doc_count += new_docs.len();
    index
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const INDEX_MAGIC: &str = "CLUSPR-INDEX";
const TEMP_MAGIC: &str = "CLUSPR-TEMP";
const FORMAT_VERSION: &str = "v1";

fn render_index(index: &InvertedIndex, magic: &str) -> String {
    let mut out = format!("{magic} {FORMAT_VERSION} {}\n", index.doc_count);
    for (token, postings) in index.entries() {
        out.push_str(token.as_hex());
        out.push('\t');
        for (i, posting) in postings.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(posting.doc.as_hex());
            out.push(':');
            out.push_str(&posting.freq.to_string());
        }
        out.push('\n');
    }
    out
}

fn parse_index(text: &str, magic: &str) -> Result<InvertedIndex, CorpusError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(1, "missing header line"))?;
    let mut parts = header.split(' ');
    let (got_magic, got_version, doc_count) =
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(m), Some(v), Some(d), None) => (m, v, d),
            _ => return Err(format_err(1, format!("malformed header {header:?}"))),
        };
    if got_magic != magic || got_version != FORMAT_VERSION {
        return Err(format_err(
            1,
            format!("expected \"{magic} {FORMAT_VERSION}\", got {header:?}"),
        ));
    }
    let doc_count: usize = doc_count
        .parse()
        .map_err(|_| format_err(1, format!("bad document count {doc_count:?}")))?;

    let mut index = InvertedIndex::new();
    index.doc_count = doc_count;
    let mut prev_token: Option<SealedToken> = None;
    for (lineno, line) in lines {
        let lineno = lineno + 1;
        let (token_hex, postings_str) = line
            .split_once('\t')
            .ok_or_else(|| format_err(lineno, "missing tab separator"))?;
        check_sealed_hex(token_hex, lineno, "token")?;
        let token = SealedToken(token_hex.to_owned());
        if let Some(prev) = &prev_token {
            if *prev >= token {
                return Err(format_err(lineno, "tokens out of order"));
            }
        }
        let mut postings = Vec::new();
        for part in postings_str.split(',') {
            let (doc_hex, freq) = part
                .split_once(':')
                .ok_or_else(|| format_err(lineno, format!("bad posting {part:?}")))?;
            check_sealed_hex(doc_hex, lineno, "document")?;
            let freq: u64 = freq
                .parse()
                .map_err(|_| format_err(lineno, format!("bad frequency {freq:?}")))?;
            if freq == 0 {
                return Err(format_err(lineno, "zero frequency"));
            }
            let doc = SealedDocId(doc_hex.to_owned());
            if let Some(last) = postings.last() {
                let last: &Posting = last;
                if last.doc >= doc {
                    return Err(format_err(lineno, "postings out of order"));
                }
            }
            postings.push(Posting { doc, freq });
        }
        if postings.is_empty() {
            return Err(format_err(lineno, "token with no postings"));
        }
        index.entries.insert(token.clone(), postings);
        prev_token = Some(token);
    }
    Ok(index)
}

/// Serializes the central index to its line-oriented text form.
pub fn index_to_string(index: &InvertedIndex) -> String {
    render_index(index, INDEX_MAGIC)
}

/// Parses the central index format, strictly.
pub fn index_from_str(text: &str) -> Result<InvertedIndex, CorpusError> {
    parse_index(text, INDEX_MAGIC)
}

/// Serializes a batch index; same layout as the central format except for
/// the header tag.
pub fn temp_to_string(temp: &TempIndex) -> String {
    render_index(&temp.0, TEMP_MAGIC)
}

/// Parses the batch index format.
pub fn temp_from_str(text: &str) -> Result<TempIndex, CorpusError> {
    parse_index(text, TEMP_MAGIC).map(TempIndex)
}

pub fn write_index(index: &InvertedIndex, path: &Path) -> Result<(), CorpusError> {
    fs::write(path, index_to_string(index)).map_err(Into::into)
}

pub fn read_index(path: &Path) -> Result<InvertedIndex, CorpusError> {
    index_from_str(&fs::read_to_string(path)?)
}

pub fn write_temp(temp: &TempIndex, path: &Path) -> Result<(), CorpusError> {
    fs::write(path, temp_to_string(temp)).map_err(Into::into)
}

pub fn read_temp(path: &Path) -> Result<TempIndex, CorpusError> {
    temp_from_str(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Plaintext dictionary (edge side)
// ---------------------------------------------------------------------------

/// Serializes the sealed→plaintext dictionary kept on the trusted side.
/// One `<sealed-hex>\t<plaintext>` line per token, sorted by hex.
pub fn dictionary_to_string(dict: &HashMap<SealedToken, String>) -> String {
    let sorted: BTreeMap<&SealedToken, &String> = dict.iter().collect();
    let mut out = String::new();
    for (token, word) in sorted {
        out.push_str(token.as_hex());
        out.push('\t');
        out.push_str(word);
        out.push('\n');
    }
    out
}

/// Parses the dictionary format.
pub fn dictionary_from_str(
    text: &str,
) -> Result<HashMap<SealedToken, String>, CorpusError> {
    let mut dict = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let (hex, word) = line
            .split_once('\t')
            .ok_or_else(|| format_err(lineno, "missing tab separator"))?;
        check_sealed_hex(hex, lineno, "token")?;
        if word.is_empty() {
            return Err(format_err(lineno, "empty plaintext"));
        }
        dict.insert(SealedToken(hex.to_owned()), word.to_owned());
    }
    Ok(dict)
}

/// Serializes the sealed-document→plaintext-id map, same line format as the
/// token dictionary.
pub fn doc_dictionary_to_string(dict: &HashMap<SealedDocId, String>) -> String {
    let sorted: BTreeMap<&SealedDocId, &String> = dict.iter().collect();
    let mut out = String::new();
    for (doc, id) in sorted {
        out.push_str(doc.as_hex());
        out.push('\t');
        out.push_str(id);
        out.push('\n');
    }
    out
}

/// Parses the sealed-document dictionary format.
pub fn doc_dictionary_from_str(
    text: &str,
) -> Result<HashMap<SealedDocId, String>, CorpusError> {
    let mut dict = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let (hex, id) = line
            .split_once('\t')
            .ok_or_else(|| format_err(lineno, "missing tab separator"))?;
        check_sealed_hex(hex, lineno, "document")?;
        if id.is_empty() {
            return Err(format_err(lineno, "empty plaintext"));
        }
        dict.insert(SealedDocId(hex.to_owned()), id.to_owned());
    }
    Ok(dict)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> KeyMaterial {
        KeyMaterial::new(vec![7u8; 32]).unwrap()
    }

    #[test]
    fn extract_counts_and_keeps_single_letter_words() {
        let got = extract_tokens("a a b", 1).unwrap();
        assert_eq!(got, vec![("a".to_owned(), 2)]);
    }

    #[test]
    fn extract_drops_stop_words() {
        let got = extract_tokens("the the the cat", 5).unwrap();
        assert_eq!(got, vec![("cat".to_owned(), 1)]);
    }

    #[test]
    fn extract_ranks_by_frequency_then_lexicographic() {
        let got = extract_tokens("net net traffic net traffic solve", 2).unwrap();
        assert_eq!(got, vec![("net".to_owned(), 3), ("traffic".to_owned(), 2)]);
    }

    #[test]
    fn extract_tie_break_is_lexicographic() {
        let got = extract_tokens("zebra apple zebra apple", 1).unwrap();
        assert_eq!(got, vec![("apple".to_owned(), 2)]);
    }

    #[test]
    fn extract_strips_punctuation_and_case() {
        let got = extract_tokens("Router, ROUTER; router! switch?", 10).unwrap();
        assert_eq!(
            got,
            vec![("router".to_owned(), 3), ("switch".to_owned(), 1)]
        );
    }

    #[test]
    fn extract_rejects_empty_body() {
        assert!(matches!(
            extract_tokens("   \n\t ", 3),
            Err(CorpusError::EmptyDocument)
        ));
    }

    #[test]
    fn extract_all_stop_words_yields_empty() {
        assert_eq!(extract_tokens("the of and", 3).unwrap(), vec![]);
    }

    #[test]
    fn seal_is_deterministic_and_key_dependent() {
        let k1 = key();
        let k2 = KeyMaterial::new(vec![8u8; 32]).unwrap();
        let a = k1.seal("net");
        assert_eq!(a, k1.seal("net"));
        assert_ne!(a, k2.seal("net"));
        assert_ne!(a, k1.seal("ten"));
        assert_eq!(a.len(), SEALED_HEX_LEN);
        assert!(a.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)));
    }

    #[test]
    fn short_key_rejected() {
        assert!(matches!(
            KeyMaterial::new(vec![0u8; 15]),
            Err(CorpusError::KeyTooShort { got: 15 })
        ));
    }

    #[test]
    fn build_index_merges_duplicate_pairs_and_counts_docs() {
        let docs = vec![
            Document { id: "d1".into(), body: "net net solve".into() },
            Document { id: "d2".into(), body: "net traffic".into() },
            Document { id: "d3".into(), body: "the of".into() },
        ];
        let k = key();
        let index = build_index(&docs, &k, 20).unwrap();
        assert_eq!(index.doc_count(), 3);
        assert_eq!(index.token_count(), 3);
        let net = k.seal_token("net");
        assert_eq!(index.doc_association(&net), 2);
        assert_eq!(index.freq_in(&net, &k.seal_doc("d1")), 2);
        assert_eq!(index.freq_in(&net, &k.seal_doc("d2")), 1);
        assert_eq!(index.total_freq(&net), 3);
    }

    #[test]
    fn build_index_fails_on_tokenless_corpus() {
        let docs = vec![Document { id: "d1".into(), body: "the of".into() }];
        assert!(matches!(
            build_index(&docs, &key(), 20),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn merge_with_empty_temp_is_identity() {
        let docs = vec![Document { id: "d1".into(), body: "net solve".into() }];
        let index = build_index(&docs, &key(), 20).unwrap();
        let before = index_to_string(&index);
        let merged = merge_temp(index, &TempIndex::default());
        assert_eq!(index_to_string(&merged), before);
    }

    #[test]
    fn merge_sums_freqs_and_unions_docs() {
        let k = key();
        let index = build_index(
            &[Document { id: "d1".into(), body: "net net solve".into() }],
            &k,
            20,
        )
        .unwrap();
        let temp = build_temp(
            &[
                Document { id: "d1".into(), body: "net".into() },
                Document { id: "d2".into(), body: "traffic".into() },
            ],
            &k,
            20,
        )
        .unwrap();
        let merged = merge_temp(index, &temp);
        assert_eq!(merged.doc_count(), 2);
        assert_eq!(merged.freq_in(&k.seal_token("net"), &k.seal_doc("d1")), 3);
        assert_eq!(
            merged.freq_in(&k.seal_token("traffic"), &k.seal_doc("d2")),
            1
        );
    }

    #[test]
    fn index_round_trip_is_bit_exact() {
        let docs = vec![
            Document { id: "d1".into(), body: "net net solve book".into() },
            Document { id: "d2".into(), body: "traffic net enter".into() },
        ];
        let index = build_index(&docs, &key(), 20).unwrap();
        let text = index_to_string(&index);
        assert!(text.starts_with("CLUSPR-INDEX v1 2\n"));
        let parsed = index_from_str(&text).unwrap();
        assert_eq!(parsed, index);
        assert_eq!(index_to_string(&parsed), text);
    }

    #[test]
    fn temp_round_trip_uses_own_header() {
        let temp = build_temp(
            &[Document { id: "d9".into(), body: "solve".into() }],
            &key(),
            20,
        )
        .unwrap();
        let text = temp_to_string(&temp);
        assert!(text.starts_with("CLUSPR-TEMP v1 1\n"));
        assert_eq!(temp_from_str(&text).unwrap(), temp);
        assert!(index_from_str(&text).is_err());
    }

    #[test]
    fn parse_rejects_corrupt_lines() {
        let good = index_to_string(
            &build_index(
                &[Document { id: "d1".into(), body: "net".into() }],
                &key(),
                20,
            )
            .unwrap(),
        );
        for bad in [
            good.replace("CLUSPR-INDEX", "CLUSPR-INDEX2"),
            good.replace("v1", "v2"),
            good.replace('\t', " "),
            good.replace(':', ";"),
            format!("{good}nothex\t{}\n", &good[good.find('\t').unwrap() + 1..]),
        ] {
            assert!(index_from_str(&bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn dictionary_round_trip() {
        let k = key();
        let mut dict = HashMap::new();
        for word in ["net", "solve", "traffic"] {
            dict.insert(k.seal_token(word), word.to_owned());
        }
        let text = dictionary_to_string(&dict);
        assert_eq!(dictionary_from_str(&text).unwrap(), dict);
    }

    #[test]
    fn doc_dictionary_round_trip() {
        let k = key();
        let mut dict = HashMap::new();
        for id in ["alpha.txt", "beta.txt"] {
            dict.insert(k.seal_doc(id), id.to_owned());
        }
        let text = doc_dictionary_to_string(&dict);
        assert_eq!(doc_dictionary_from_str(&text).unwrap(), dict);
    }

    #[test]
    fn corpus_dir_reads_files_sorted_by_name() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "solve traffic").unwrap();
        fs::write(dir.path().join("a.txt"), "net book").unwrap();
        let docs = read_corpus_dir(dir.path()).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].id, "a.txt");
        assert_eq!(docs[0].body, "net book");
        assert_eq!(docs[1].id, "b.txt");
    }

    #[test]
    fn empty_corpus_dir_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_corpus_dir(dir.path()),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn unseal_maps_cover_vocabulary_and_documents() {
        let k = key();
        let docs = vec![
            Document { id: "d1".into(), body: "net net solve".into() },
            Document { id: "d2".into(), body: "the traffic".into() },
        ];
        let (tokens, doc_ids) = build_unseal_maps(&docs, &k, 10).unwrap();
        assert_eq!(tokens.len(), 3);
        assert_eq!(tokens[&k.seal_token("traffic")], "traffic");
        assert!(!tokens.contains_key(&k.seal_token("the")));
        assert_eq!(doc_ids.len(), 2);
        assert_eq!(doc_ids[&k.seal_doc("d2")], "d2");
    }
}

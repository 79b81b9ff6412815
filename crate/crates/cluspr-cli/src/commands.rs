//! The five subcommands, each a thin orchestration over the library:
//! load artifacts, run one pipeline stage, write artifacts back.
//!
//! Exit-code policy: anything about the invocation or the workspace state
//! (missing artifacts, unreadable inputs, a held lock) is a *state* error
//! (exit 2); an artifact or data file that exists but does not parse is a
//! *data* error (exit 3).

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use cluspr::abstracts::{
    build_abstracts, load_model, read_abstracts, write_abstracts, AbstractError, AbstractSet,
    SimilarityModel,
};
use cluspr::corpus::{
    build_index, build_temp, build_unseal_maps, dictionary_from_str, dictionary_to_string,
    doc_dictionary_from_str, doc_dictionary_to_string, merge_temp, read_corpus_dir, read_index,
    write_index, CorpusError, Document, InvertedIndex, KeyMaterial, SealedDocId, SealedToken,
};
use cluspr::dynclust::{
    decide_recluster, full_recluster, journal_line, update_clusters, BatchRecord, DynError,
    UpdateBatch,
};
use cluspr::evalharness::{
    cluster_coherency, coherency_to_tsv, parse_plan, parse_qrels, run_update_experiment,
    EvalError, ExperimentContext,
};
use cluspr::kestimate::{estimate_pipeline, MatrixError, TrimMode};
use cluspr::search::{
    format_results, prune, search_clusters, tsap_at_10, Query, DEFAULT_CUTOFF,
};
use cluspr::statclust::{
    distribute, read_clusters, select_centers, write_clusters, ClusterParams, ClusterSet,
};

use crate::workspace::{acquire_lock, Config, Workspace};
use crate::CliError;

// ---------------------------------------------------------------------------
// Error mapping
// ---------------------------------------------------------------------------

fn corpus_err(e: CorpusError) -> CliError {
    match e {
        CorpusError::Format { .. } | CorpusError::KeyFileSize { .. } => {
            CliError::data(e.to_string())
        }
        other => CliError::state(other.to_string()),
    }
}

fn abstract_err(e: AbstractError) -> CliError {
    match e {
        AbstractError::Format { .. } | AbstractError::EmptyModel => CliError::data(e.to_string()),
        other => CliError::state(other.to_string()),
    }
}

fn matrix_err(e: MatrixError) -> CliError {
    CliError::state(e.to_string())
}

fn dyn_err(e: DynError) -> CliError {
    match e {
        DynError::Matrix(inner) => matrix_err(inner),
        other => CliError::state(other.to_string()),
    }
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Corpus(inner) => corpus_err(inner),
        EvalError::Abstracts(inner) => abstract_err(inner),
        EvalError::Update(inner) => dyn_err(inner),
        EvalError::Matrix(inner) => matrix_err(inner),
        other => CliError::state(other.to_string()),
    }
}

fn io_write(path: &Path, e: io::Error) -> CliError {
    CliError::state(format!("cannot write {}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Artifact access
// ---------------------------------------------------------------------------

/// Anchors a command-line path to the invocation directory so the stored
/// config does not silently reinterpret it relative to the workspace.
fn absolutize(path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        path
    } else {
        match std::env::current_dir() {
            Ok(cwd) => cwd.join(path),
            Err(_) => path,
        }
    }
}

fn open_workspace(root: &Path) -> Result<Workspace, CliError> {
    if !root.is_dir() {
        return Err(CliError::state(format!(
            "no workspace at {}; run `cluspr ingest` first",
            root.display()
        )));
    }
    Ok(Workspace::at(root))
}

fn require_file(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::state(format!("missing {}; {hint}", path.display())))
    }
}

fn load_index(ws: &Workspace) -> Result<InvertedIndex, CliError> {
    let path = ws.index_path();
    require_file(&path, "run `cluspr ingest` first")?;
    read_index(&path).map_err(corpus_err)
}

fn load_clusters(ws: &Workspace) -> Result<ClusterSet, CliError> {
    let path = ws.clusters_path();
    require_file(&path, "run `cluspr cluster` first")?;
    read_clusters(&path).map_err(corpus_err)
}

fn load_key(ws: &Workspace, config: &Config) -> Result<KeyMaterial, CliError> {
    let path = config.key_path.as_ref().ok_or_else(|| {
        CliError::state("no sealing key configured; pass --key to `cluspr ingest`")
    })?;
    let resolved = ws.resolve(path);
    require_file(&resolved, "the configured sealing key is gone")?;
    KeyMaterial::load(&resolved).map_err(corpus_err)
}

/// Loads the configured model, `None` when the workspace has none.
/// A configured model whose file is gone is an error, not a degraded mode.
fn try_load_model(ws: &Workspace, config: &Config) -> Result<Option<SimilarityModel>, CliError> {
    match &config.model_path {
        None => Ok(None),
        Some(path) => {
            let resolved = ws.resolve(path);
            require_file(&resolved, "the configured model is gone")?;
            load_model(&resolved).map(Some).map_err(abstract_err)
        }
    }
}

fn require_model(ws: &Workspace, config: &Config) -> Result<SimilarityModel, CliError> {
    try_load_model(ws, config)?.ok_or_else(|| {
        CliError::state("no similarity model configured; pass --model to `cluspr ingest`")
    })
}

fn load_token_dict(ws: &Workspace) -> Result<HashMap<SealedToken, String>, CliError> {
    let path = ws.tokens_dict_path();
    require_file(&path, "run `cluspr ingest` first")?;
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::state(format!("cannot read {}: {e}", path.display())))?;
    dictionary_from_str(&text).map_err(corpus_err)
}

fn load_doc_dict(ws: &Workspace) -> Result<HashMap<SealedDocId, String>, CliError> {
    let path = ws.docs_dict_path();
    require_file(&path, "run `cluspr ingest` first")?;
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::state(format!("cannot read {}: {e}", path.display())))?;
    doc_dictionary_from_str(&text).map_err(corpus_err)
}

fn load_abstracts(ws: &Workspace) -> Result<Option<AbstractSet>, CliError> {
    let path = ws.abstracts_path();
    if !path.is_file() {
        return Ok(None);
    }
    read_abstracts(&path).map(Some).map_err(abstract_err)
}

fn read_docs(dir: &Path) -> Result<Vec<Document>, CliError> {
    match read_corpus_dir(dir) {
        Ok(docs) => Ok(docs),
        Err(CorpusError::EmptyCorpus) => {
            Err(CliError::state(format!("no documents in {}", dir.display())))
        }
        Err(CorpusError::Io(e)) => Err(CliError::state(format!(
            "cannot read corpus directory {}: {e}",
            dir.display()
        ))),
        Err(other) => Err(corpus_err(other)),
    }
}

// ---------------------------------------------------------------------------
// Pending-token buffer and journal
// ---------------------------------------------------------------------------

fn read_pending(ws: &Workspace) -> Result<BTreeSet<SealedToken>, CliError> {
    let path = ws.pending_path();
    let text = match fs::read_to_string(&path) {
        Ok(text) => text,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(BTreeSet::new()),
        Err(e) => {
            return Err(CliError::state(format!("cannot read {}: {e}", path.display())))
        }
    };
    let mut pending = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let token = SealedToken::from_hex(line).map_err(|e| {
            CliError::data(format!("pending-token file line {}: {e}", lineno + 1))
        })?;
        pending.insert(token);
    }
    Ok(pending)
}

fn write_pending(ws: &Workspace, pending: &BTreeSet<SealedToken>) -> Result<(), CliError> {
    let mut text = String::new();
    for token in pending {
        text.push_str(token.as_hex());
        text.push('\n');
    }
    fs::write(ws.pending_path(), text).map_err(|e| io_write(&ws.pending_path(), e))
}

fn clear_pending(ws: &Workspace) -> Result<(), CliError> {
    remove_if_exists(&ws.pending_path())
}

fn remove_if_exists(path: &Path) -> Result<(), CliError> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(CliError::state(format!("cannot remove {}: {e}", path.display()))),
    }
}

fn next_batch_id(ws: &Workspace) -> Result<u64, CliError> {
    match fs::read_to_string(ws.journal_path()) {
        Ok(text) => Ok(text.lines().filter(|l| l.starts_with("BATCH ")).count() as u64 + 1),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(1),
        Err(e) => Err(CliError::state(format!("cannot read journal: {e}"))),
    }
}

fn append_journal(ws: &Workspace, line: &str) -> Result<(), CliError> {
    let path = ws.journal_path();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| io_write(&path, e))?;
    writeln!(file, "{line}").map_err(|e| io_write(&path, e))
}

fn extend_dictionaries(
    ws: &Workspace,
    batch_tokens: &HashMap<SealedToken, String>,
    batch_docs: &HashMap<SealedDocId, String>,
) -> Result<(), CliError> {
    let mut tokens = load_token_dict(ws)?;
    tokens.extend(batch_tokens.iter().map(|(k, v)| (k.clone(), v.clone())));
    fs::write(ws.tokens_dict_path(), dictionary_to_string(&tokens))
        .map_err(|e| io_write(&ws.tokens_dict_path(), e))?;
    let mut docs = load_doc_dict(ws)?;
    docs.extend(batch_docs.iter().map(|(k, v)| (k.clone(), v.clone())));
    fs::write(ws.docs_dict_path(), doc_dictionary_to_string(&docs))
        .map_err(|e| io_write(&ws.docs_dict_path(), e))
}

/// Builds abstracts for the given clustering and writes them, honoring a
/// pinned threshold from the config. Without a model this degrades: the
/// warning goes to stderr and any stale abstract file is removed so later
/// searches fail open instead of pruning against the wrong clustering.
fn rebuild_abstracts(
    ws: &Workspace,
    config: &Config,
    clusters: &ClusterSet,
    index: &InvertedIndex,
) -> Result<(), CliError> {
    match try_load_model(ws, config)? {
        Some(model) => {
            let dict = load_token_dict(ws)?;
            let mut abstracts = build_abstracts(clusters, index, &dict, config.alpha, &model)
                .map_err(abstract_err)?;
            if let Some(theta) = config.theta {
                abstracts.theta = theta;
            }
            write_abstracts(&abstracts, &ws.abstracts_path()).map_err(abstract_err)
        }
        None => {
            eprintln!(
                "warning: no similarity model configured; skipping abstracts \
                 (searches will scan every cluster)"
            );
            remove_if_exists(&ws.abstracts_path())
        }
    }
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

pub fn cmd_ingest(
    root: &Path,
    corpus_dir: &Path,
    tokens_per_doc: Option<usize>,
    key: Option<PathBuf>,
    model: Option<PathBuf>,
) -> Result<(), CliError> {
    let ws = Workspace::at(root);
    ws.ensure_layout()
        .map_err(|e| CliError::state(format!("cannot create workspace {}: {e}", root.display())))?;
    let _lock = acquire_lock(&ws)?;

    let mut config = Config::load(&ws)?;
    if let Some(n) = tokens_per_doc {
        if n == 0 {
            return Err(CliError::state("--tokens-per-doc must be at least 1"));
        }
        config.tokens_per_doc = n;
    }
    if let Some(path) = key {
        config.key_path = Some(absolutize(path));
    }
    if let Some(path) = model {
        config.model_path = Some(absolutize(path));
    }
    let key = load_key(&ws, &config)?;
    // Surface a bad model path now rather than at cluster time.
    try_load_model(&ws, &config)?;

    let docs = read_docs(corpus_dir)?;
    let index = match build_index(&docs, &key, config.tokens_per_doc) {
        Ok(index) => index,
        Err(CorpusError::EmptyCorpus) => {
            return Err(CliError::state(format!(
                "no documents in {} produced any tokens",
                corpus_dir.display()
            )))
        }
        Err(other) => return Err(corpus_err(other)),
    };
    let (token_dict, doc_dict) =
        build_unseal_maps(&docs, &key, config.tokens_per_doc).map_err(corpus_err)?;

    write_index(&index, &ws.index_path()).map_err(corpus_err)?;
    fs::write(ws.tokens_dict_path(), dictionary_to_string(&token_dict))
        .map_err(|e| io_write(&ws.tokens_dict_path(), e))?;
    fs::write(ws.docs_dict_path(), doc_dictionary_to_string(&doc_dict))
        .map_err(|e| io_write(&ws.docs_dict_path(), e))?;
    // A fresh index makes the old drift accounting meaningless.
    clear_pending(&ws)?;
    config.store(&ws)?;

    log::debug!(
        "sealed {} documents into {}",
        index.doc_count(),
        ws.index_path().display()
    );
    println!("documents={} tokens={}", index.doc_count(), index.token_count());
    Ok(())
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

pub fn cmd_cluster(
    root: &Path,
    no_trim: bool,
    k_override: Option<usize>,
    alpha: Option<usize>,
) -> Result<(), CliError> {
    let ws = open_workspace(root)?;
    let _lock = acquire_lock(&ws)?;

    let mut config = Config::load(&ws)?;
    if let Some(a) = alpha {
        if a == 0 {
            return Err(CliError::state("--alpha must be at least 1"));
        }
        config.alpha = a;
    }
    if k_override == Some(0) {
        return Err(CliError::state("--k-override must be at least 1"));
    }

    let index = load_index(&ws)?;
    let trim = if no_trim { TrimMode::KeepAll } else { TrimMode::MeanThreshold };
    let estimation = estimate_pipeline(&index, trim).map_err(matrix_err)?;
    let k = k_override.unwrap_or(estimation.k);
    let retained = index.restrict(estimation.a.tokens());
    let selection = select_centers(k, &estimation.q, &retained);
    let clusters = distribute(&retained, &selection.centers);
    log::debug!(
        "estimated k={}, requested k={k}, formed {} clusters",
        estimation.k,
        clusters.k_used()
    );

    write_clusters(&clusters, &ws.clusters_path()).map_err(corpus_err)?;
    rebuild_abstracts(&ws, &config, &clusters, &index)?;
    // Drift is measured against the clustering we just produced.
    clear_pending(&ws)?;
    if alpha.is_some() {
        config.store(&ws)?;
    }

    println!("k={k}");
    Ok(())
}

// ---------------------------------------------------------------------------
// update
// ---------------------------------------------------------------------------

pub fn cmd_update(root: &Path, batch_dir: &Path) -> Result<(), CliError> {
    let ws = open_workspace(root)?;
    let _lock = acquire_lock(&ws)?;

    let config = Config::load(&ws)?;
    let key = load_key(&ws, &config)?;
    let index = load_index(&ws)?;
    let mut clusters = load_clusters(&ws)?;

    let docs = read_docs(batch_dir)?;
    let temp = match build_temp(&docs, &key, config.tokens_per_doc) {
        Ok(temp) => temp,
        Err(CorpusError::EmptyCorpus) => {
            return Err(CliError::state(format!(
                "no documents in {} produced any tokens",
                batch_dir.display()
            )))
        }
        Err(other) => return Err(corpus_err(other)),
    };
    let (batch_tokens, batch_docs) =
        build_unseal_maps(&docs, &key, config.tokens_per_doc).map_err(corpus_err)?;
    let batch = UpdateBatch::prepare(temp, &index, &batch_tokens).map_err(dyn_err)?;

    let mut pending = read_pending(&ws)?;
    pending.extend(batch.new_tokens.iter().cloned());
    let new_count = pending.len();
    let existing_count = clusters.token_count();
    let decision = decide_recluster(new_count, existing_count);
    let record = BatchRecord {
        batch_id: next_batch_id(&ws)?,
        new_count,
        existing_count,
        decision,
    };
    log::debug!(
        "batch {}: chi2={:.6} over {new_count} pending / {existing_count} clustered",
        record.batch_id,
        decision.chi2
    );

    if decision.recluster {
        let params = ClusterParams { trim: TrimMode::MeanThreshold };
        let outcome = full_recluster(&index, &batch.temp, &params).map_err(dyn_err)?;
        write_index(&outcome.merged, &ws.index_path()).map_err(corpus_err)?;
        write_clusters(&outcome.outcome.clusters, &ws.clusters_path()).map_err(corpus_err)?;
        extend_dictionaries(&ws, &batch_tokens, &batch_docs)?;
        rebuild_abstracts(&ws, &config, &outcome.outcome.clusters, &outcome.merged)?;
        clear_pending(&ws)?;
    } else {
        let model = require_model(&ws, &config).map_err(|e| {
            CliError::state(format!("cannot apply an incremental update: {e}"))
        })?;
        require_file(&ws.abstracts_path(), "run `cluspr cluster` with a model first")?;
        let mut abstracts = read_abstracts(&ws.abstracts_path()).map_err(abstract_err)?;
        if let Some(theta) = config.theta {
            abstracts.theta = theta;
        }
        update_clusters(&mut clusters, &mut abstracts, &batch, &model, config.alpha);
        match config.theta {
            Some(theta) => abstracts.theta = theta,
            None => abstracts.recompute_theta(),
        }
        let merged = merge_temp(index, &batch.temp);
        write_index(&merged, &ws.index_path()).map_err(corpus_err)?;
        write_clusters(&clusters, &ws.clusters_path()).map_err(corpus_err)?;
        write_abstracts(&abstracts, &ws.abstracts_path()).map_err(abstract_err)?;
        extend_dictionaries(&ws, &batch_tokens, &batch_docs)?;
        write_pending(&ws, &pending)?;
    }

    let line = journal_line(&record);
    append_journal(&ws, &line)?;
    println!("{line}");
    Ok(())
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

pub fn cmd_search(
    root: &Path,
    raw_query: &str,
    top_p: Option<usize>,
    cutoff: Option<usize>,
) -> Result<(), CliError> {
    let ws = open_workspace(root)?;
    let config = Config::load(&ws)?;
    let key = load_key(&ws, &config)?;
    let query = Query::new(raw_query, &key).map_err(|e| CliError::state(e.to_string()))?;
    let index = load_index(&ws)?;
    let clusters = load_clusters(&ws)?;

    let top_p = top_p.unwrap_or(config.top_p);
    let cutoff = cutoff.unwrap_or(DEFAULT_CUTOFF);
    let model = try_load_model(&ws, &config)?;
    let abstracts = load_abstracts(&ws)?;
    let selected: Vec<u32> = match (&model, &abstracts) {
        (Some(model), Some(abstracts)) => prune(&query, abstracts, model, top_p).selected,
        _ => {
            eprintln!("warning: no abstracts available; searching every cluster");
            clusters.clusters.iter().map(|c| c.id).collect()
        }
    };
    log::debug!("searching clusters {selected:?}");

    let results = search_clusters(&query, &selected, &clusters, &index, cutoff);
    print!("{}", format_results(&results));
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn cmd_eval(
    root: &Path,
    qrels: Option<&Path>,
    plan: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let ws = open_workspace(root)?;
    let config = Config::load(&ws)?;
    let clusters = load_clusters(&ws)?;
    let token_dict = load_token_dict(&ws)?;
    let model = require_model(&ws, &config)?;

    let mut sections: Vec<String> = Vec::new();
    let report =
        cluster_coherency(&clusters, &token_dict, &model, "cluspr").map_err(eval_err)?;
    sections.push(coherency_to_tsv(&report));

    if let Some(qrels_path) = qrels {
        sections.push(eval_qrels(&ws, &config, &clusters, &model, qrels_path)?);
    }

    if let Some(plan_path) = plan {
        sections.push(eval_plan(&ws, &config, &model, plan_path)?);
    }

    let output = sections.join("\n");
    match out {
        Some(path) => fs::write(path, &output).map_err(|e| io_write(path, e))?,
        None => print!("{output}"),
    }
    Ok(())
}

/// Scores every judged query through prune + search and reports TSAP@10.
fn eval_qrels(
    ws: &Workspace,
    config: &Config,
    clusters: &ClusterSet,
    model: &SimilarityModel,
    qrels_path: &Path,
) -> Result<String, CliError> {
    let key = load_key(ws, config)?;
    let index = load_index(ws)?;
    let doc_dict = load_doc_dict(ws)?;
    let abstracts = load_abstracts(ws)?
        .ok_or_else(|| CliError::state("search evaluation needs abstracts; run `cluspr cluster` with a model"))?;

    let text = fs::read_to_string(qrels_path)
        .map_err(|e| CliError::state(format!("cannot read {}: {e}", qrels_path.display())))?;
    let qrels = parse_qrels(&text).map_err(eval_err)?;
    if qrels.is_empty() {
        return Err(CliError::state(format!(
            "{} holds no judgments",
            qrels_path.display()
        )));
    }

    let mut rows = String::new();
    let mut total = 0.0;
    for raw in &qrels.queries {
        // A query that normalizes to nothing can never retrieve anything.
        let tsap = match Query::new(raw, &key) {
            Err(_) => 0.0,
            Ok(query) => {
                let pruning = prune(&query, &abstracts, model, config.top_p);
                let results =
                    search_clusters(&query, &pruning.selected, clusters, &index, DEFAULT_CUTOFF);
                let mut flags = Vec::with_capacity(results.hits.len());
                for hit in &results.hits {
                    let plain = doc_dict.get(&hit.doc).ok_or_else(|| {
                        CliError::state(format!(
                            "no plaintext id for sealed document {}",
                            hit.doc.as_hex()
                        ))
                    })?;
                    flags.push(qrels.relevant(raw, plain));
                }
                tsap_at_10(&flags)
            }
        };
        total += tsap;
        rows.push_str(&format!("{raw}\t{tsap:.6}\n"));
    }
    let mean = total / qrels.queries.len() as f64;
    Ok(format!(
        "# queries={} mean_tsap={mean:.6}\nquery\ttsap_at_10\n{rows}",
        qrels.queries.len()
    ))
}

/// Runs the gated-vs-baseline batch experiment described by a plan file.
fn eval_plan(
    ws: &Workspace,
    config: &Config,
    model: &SimilarityModel,
    plan_path: &Path,
) -> Result<String, CliError> {
    let key = load_key(ws, config)?;
    let text = fs::read_to_string(plan_path)
        .map_err(|e| CliError::state(format!("cannot read {}: {e}", plan_path.display())))?;
    let mut plan = parse_plan(&text).map_err(eval_err)?;
    // A relative corpus path counts from the plan file, so plan + corpus
    // can travel together.
    if plan.corpus_dir.is_relative() {
        if let Some(parent) = plan_path.parent() {
            plan.corpus_dir = parent.join(&plan.corpus_dir);
        }
    }
    let ctx = ExperimentContext {
        key: &key,
        model,
        tokens_per_doc: config.tokens_per_doc,
        alpha: config.alpha,
        trim: TrimMode::MeanThreshold,
    };
    let report = run_update_experiment(&plan, &ctx).map_err(eval_err)?;
    Ok(report.to_tsv())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scratch() -> (tempfile::TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::at(dir.path());
        ws.ensure_layout().unwrap();
        (dir, ws)
    }

    #[test]
    fn pending_round_trips_and_tolerates_absence() {
        let (_dir, ws) = scratch();
        assert!(read_pending(&ws).unwrap().is_empty());
        let mut pending = BTreeSet::new();
        pending.insert(SealedToken::from_hex(&"ab".repeat(32)).unwrap());
        pending.insert(SealedToken::from_hex(&"cd".repeat(32)).unwrap());
        write_pending(&ws, &pending).unwrap();
        assert_eq!(read_pending(&ws).unwrap(), pending);
        clear_pending(&ws).unwrap();
        assert!(read_pending(&ws).unwrap().is_empty());
    }

    #[test]
    fn pending_rejects_garbage_with_data_code() {
        let (_dir, ws) = scratch();
        fs::write(ws.pending_path(), "not-hex\n").unwrap();
        let err = read_pending(&ws).err().unwrap();
        assert_eq!(err.code, 3);
    }

    #[test]
    fn batch_ids_count_journal_lines() {
        let (_dir, ws) = scratch();
        assert_eq!(next_batch_id(&ws).unwrap(), 1);
        append_journal(&ws, "BATCH 1 new=0 existing=5 chi2=5.000000 decision=update").unwrap();
        assert_eq!(next_batch_id(&ws).unwrap(), 2);
        append_journal(&ws, "BATCH 2 new=1 existing=5 chi2=3.200000 decision=recluster")
            .unwrap();
        assert_eq!(next_batch_id(&ws).unwrap(), 3);
    }

    #[test]
    fn missing_workspace_is_a_state_error() {
        let err = open_workspace(Path::new("/definitely/not/here")).err().unwrap();
        assert_eq!(err.code, 2);
    }
}

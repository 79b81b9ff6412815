//! Workspace layout, configuration, and the single-writer lock.
//!
//! A workspace is one directory split along the trust boundary: `cloud/`
//! holds only sealed artifacts (index, cluster manifest, journal, pending
//! new-token list) and `edge/` holds everything plaintext (unseal
//! dictionaries, abstracts). The `config` file at the root is the single
//! source of defaults; command-line flags override it per invocation.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cluspr::abstracts::{DEFAULT_ALPHA};
use cluspr::search::DEFAULT_TOP_P;

use crate::CliError;

/// Paths inside one workspace directory.
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn at(root: &Path) -> Workspace {
        Workspace { root: root.to_path_buf() }
    }

    /// Creates the root, `cloud/`, and `edge/` directories if missing.
    pub fn ensure_layout(&self) -> io::Result<()> {
        fs::create_dir_all(self.cloud_dir())?;
        fs::create_dir_all(self.edge_dir())
    }

    pub fn cloud_dir(&self) -> PathBuf {
        self.root.join("cloud")
    }

    pub fn edge_dir(&self) -> PathBuf {
        self.root.join("edge")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config")
    }

    pub fn lock_path(&self) -> PathBuf {
        self.root.join("lock")
    }

    pub fn index_path(&self) -> PathBuf {
        self.cloud_dir().join("index")
    }

    pub fn clusters_path(&self) -> PathBuf {
        self.cloud_dir().join("clusters")
    }

    pub fn journal_path(&self) -> PathBuf {
        self.cloud_dir().join("journal")
    }

    /// Sealed tokens accumulated across update batches that skipped
    /// re-clustering; their postings are already merged, the list only
    /// feeds the next drift test.
    pub fn pending_path(&self) -> PathBuf {
        self.cloud_dir().join("pending.tokens")
    }

    pub fn tokens_dict_path(&self) -> PathBuf {
        self.edge_dir().join("tokens.dict")
    }

    pub fn docs_dict_path(&self) -> PathBuf {
        self.edge_dir().join("docs.dict")
    }

    pub fn abstracts_path(&self) -> PathBuf {
        self.edge_dir().join("abstracts")
    }

    /// Resolves a configured path relative to the workspace root.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }
}

/// Workspace defaults, one `key=value` per line on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Tokens kept per document at ingest.
    pub tokens_per_doc: usize,
    /// Abstract size.
    pub alpha: usize,
    /// Clusters searched after pruning.
    pub top_p: usize,
    /// Seed for seeded evaluation baselines.
    pub seed: u64,
    /// Optional fixed join threshold; overrides the computed one.
    pub theta: Option<f64>,
    /// Sealing key file, absolute or workspace-relative.
    pub key_path: Option<PathBuf>,
    /// Word-vector model file, absolute or workspace-relative.
    pub model_path: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            tokens_per_doc: 20,
            alpha: DEFAULT_ALPHA,
            top_p: DEFAULT_TOP_P,
            seed: 0,
            theta: None,
            key_path: None,
            model_path: None,
        }
    }
}

impl Config {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n={}\n", self.tokens_per_doc));
        out.push_str(&format!("alpha={}\n", self.alpha));
        out.push_str(&format!("top_p={}\n", self.top_p));
        out.push_str(&format!("seed={}\n", self.seed));
        if let Some(theta) = self.theta {
            out.push_str(&format!("theta={theta}\n"));
        }
        if let Some(path) = &self.key_path {
            out.push_str(&format!("key={}\n", path.display()));
        }
        if let Some(path) = &self.model_path {
            out.push_str(&format!("model={}\n", path.display()));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Config, CliError> {
        let mut config = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::data(format!("config line {lineno}: expected key=value"))
            })?;
            let bad = |what: &str| {
                CliError::data(format!("config line {lineno}: invalid {what}: {value:?}"))
            };
            match key.trim() {
                "n" => config.tokens_per_doc = value.trim().parse().map_err(|_| bad("n"))?,
                "alpha" => config.alpha = value.trim().parse().map_err(|_| bad("alpha"))?,
                "top_p" => config.top_p = value.trim().parse().map_err(|_| bad("top_p"))?,
                "seed" => config.seed = value.trim().parse().map_err(|_| bad("seed"))?,
                "theta" => {
                    config.theta = Some(value.trim().parse().map_err(|_| bad("theta"))?)
                }
                "key" => config.key_path = Some(PathBuf::from(value.trim())),
                "model" => config.model_path = Some(PathBuf::from(value.trim())),
                other => {
                    return Err(CliError::data(format!(
                        "config line {lineno}: unknown key {other:?}"
                    )))
                }
            }
        }
        Ok(config)
    }

    /// Loads the workspace config, or defaults when none exists yet.
    pub fn load(ws: &Workspace) -> Result<Config, CliError> {
        match fs::read_to_string(ws.config_path()) {
            Ok(text) => Config::parse(&text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Config::default()),
            Err(e) => Err(CliError::state(format!("cannot read config: {e}"))),
        }
    }

    pub fn store(&self, ws: &Workspace) -> Result<(), CliError> {
        fs::write(ws.config_path(), self.render())
            .map_err(|e| CliError::state(format!("cannot write config: {e}")))
    }
}

/// Exclusive writer lock; the file disappears when the guard drops.
pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Takes the workspace's single-writer lock. State-mutating commands hold
/// it for their whole run; read-only commands never take it.
pub fn acquire_lock(ws: &Workspace) -> Result<LockGuard, CliError> {
    let path = ws.lock_path();
    match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
        Ok(_) => Ok(LockGuard { path }),
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(CliError::state(
            "workspace is locked by another command (remove the `lock` file if stale)",
        )),
        Err(e) => Err(CliError::state(format!("cannot take workspace lock: {e}"))),
    }
}

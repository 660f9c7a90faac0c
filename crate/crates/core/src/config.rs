//! Layered run configuration: built-in defaults, then `include`d TOML
//! files, then the top-level file, then `--set path=value` overrides.
//! The resolved tree is fingerprinted and validated against the schema
//! of known keys before it is typed.

use crate::data::sampling::SamplingStrategy;
use crate::data::split::SplitMode;
use crate::data::synthetic::SyntheticSpec;
use crate::data::{PreprocessOptions, ProcessedDataset};
use crate::error::{Error, Result};
use crate::train::TrainConfig;
use crate::zoo::{Family, ModelSpec, UserIdMode, View};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    /// Directory holding the training split's news.tsv/behaviors.tsv.
    pub train_dir: String,
    /// Directory holding the held-out split's news.tsv/behaviors.tsv.
    pub test_dir: String,
    /// Preprocessed binary cache location; empty means `<out>/dataset.cache`.
    pub cache_file: String,
    pub max_title_len: usize,
    pub max_abstract_len: usize,
    /// Pretrained embedding text file; empty means random init.
    pub embedding_file: String,
    pub split_mode: SplitMode,
    pub split_ratio: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            train_dir: String::new(),
            test_dir: String::new(),
            cache_file: String::new(),
            max_title_len: 30,
            max_abstract_len: 50,
            embedding_file: String::new(),
            split_mode: SplitMode::Random,
            split_ratio: 0.95,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub family: Family,
    pub embed_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_att: usize,
    pub max_history_len: usize,
    pub views: Vec<View>,
    pub conv_filters: usize,
    pub conv_window: usize,
    pub gru_dim: usize,
    pub user_id_mode: UserIdMode,
    pub cat_embed_dim: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelSpec::defaults(Family::Nrms);
        ModelSection {
            family: Family::Nrms,
            embed_dim: d.embed_dim,
            d_model: d.d_model,
            heads: d.heads,
            d_att: d.d_att,
            max_history_len: d.max_history_len,
            views: d.views,
            conv_filters: d.conv_filters,
            conv_window: d.conv_window,
            gru_dim: d.gru_dim,
            user_id_mode: d.user_id_mode,
            cat_embed_dim: d.cat_embed_dim,
            dropout: d.dropout,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    pub min_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub negatives: usize,
    pub strategy: SamplingStrategy,
    pub patience: usize,
    pub clip_norm: f64,
    /// Parameter precision: "f32" (default) or "f64".
    pub precision: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            min_epochs: d.min_epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            negatives: d.negatives,
            strategy: d.strategy,
            patience: d.patience,
            clip_norm: d.clip_norm,
            precision: "f32".to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Checkpoint to evaluate/analyze; empty means `<out>/model.ckpt`.
    pub checkpoint: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    /// Dotted config path varied across runs, e.g. "train.batch_size".
    pub axis: String,
    /// One run per value; the base seed is shared unless the axis is `seed`.
    pub values: Vec<toml::Value>,
    /// Run the grid concurrently, one thread per value.
    pub parallel: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct InsightSection {
    /// Recommendations taken per impression for distribution analysis.
    pub top_n: usize,
}

impl Default for InsightSection {
    fn default() -> Self {
        InsightSection { top_n: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub topics: usize,
    pub users: usize,
    pub articles: usize,
    pub train_impressions: usize,
    pub test_impressions: usize,
    pub candidates: usize,
    pub purity: f64,
    pub words_per_topic: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SyntheticSpec::default();
        SynthSection {
            topics: d.topics,
            users: d.users,
            articles: d.articles,
            train_impressions: d.train_impressions,
            test_impressions: d.test_impressions,
            candidates: d.candidates,
            purity: d.purity,
            words_per_topic: d.words_per_topic,
        }
    }
}

/// Fully resolved run configuration. One top-level seed drives every
/// seeded stage.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub insight: InsightSection,
    pub synth: SynthSection,
    pub sweep: SweepSection,
}

impl Config {
    pub fn preprocess_options(&self) -> PreprocessOptions {
        PreprocessOptions {
            max_title_len: self.dataset.max_title_len,
            max_abstract_len: self.dataset.max_abstract_len,
            embed_dim: self.model.embed_dim,
            embedding_file: if self.dataset.embedding_file.is_empty() {
                None
            } else {
                Some(PathBuf::from(&self.dataset.embedding_file))
            },
            split_mode: self.dataset.split_mode,
            split_ratio: self.dataset.split_ratio,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            min_epochs: self.train.min_epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            negatives: self.train.negatives,
            strategy: self.train.strategy,
            patience: self.train.patience,
            clip_norm: self.train.clip_norm,
            seed: self.seed,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            topics: self.synth.topics,
            users: self.synth.users,
            articles: self.synth.articles,
            train_impressions: self.synth.train_impressions,
            test_impressions: self.synth.test_impressions,
            candidates: self.synth.candidates,
            purity: self.synth.purity,
            words_per_topic: self.synth.words_per_topic,
            seed: self.seed,
        }
    }

    /// Model spec with the data-derived sizes filled in from the dataset.
    pub fn model_spec(&self, ds: &ProcessedDataset) -> ModelSpec {
        let m = &self.model;
        ModelSpec {
            family: m.family,
            vocab_size: ds.vocab.len(),
            embed_dim: m.embed_dim,
            d_model: m.d_model,
            heads: m.heads,
            d_att: m.d_att,
            max_title_len: self.dataset.max_title_len,
            max_abstract_len: self.dataset.max_abstract_len,
            max_history_len: m.max_history_len,
            views: m.views.clone(),
            conv_filters: m.conv_filters,
            conv_window: m.conv_window,
            gru_dim: m.gru_dim,
            user_id_mode: m.user_id_mode,
            n_users: ds.n_users(),
            n_categories: ds.categories.len().max(1),
            n_subcategories: ds.subcategories.len().max(1),
            cat_embed_dim: m.cat_embed_dim,
            dropout: m.dropout,
        }
    }

    /// Fails unless both dataset directories are configured.
    pub fn require_dataset(&self) -> Result<()> {
        for (key, value) in [
            ("dataset.train_dir", &self.dataset.train_dir),
            ("dataset.test_dir", &self.dataset.test_dir),
        ] {
            if value.is_empty() {
                return Err(Error::Config(format!(
                    "missing required key `{key}`: set it in the config file or via --set {key}=<path>"
                )));
            }
        }
        Ok(())
    }
}

fn toml_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

/// Deep-merges `over` into `base`: tables merge key-wise, everything
/// else (scalars and arrays) replaces wholesale.
pub fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

const MAX_INCLUDE_DEPTH: usize = 8;

/// Parses a TOML file, resolving its `include = [...]` list first
/// (earlier includes are overridden by later ones, and all of them by
/// the file's own keys). Include paths are relative to the file.
pub fn load_file(path: &Path) -> Result<toml::Value> {
    load_file_at_depth(path, 0)
}

fn load_file_at_depth(path: &Path, depth: usize) -> Result<toml::Value> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(Error::Config(format!(
            "{}: include chain deeper than {MAX_INCLUDE_DEPTH} levels (cycle?)",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut table: toml::Table = text.parse().map_err(|e| toml_err(path, e))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(toml::Value::Array(a)) => a,
        Some(other) => {
            return Err(toml_err(
                path,
                format!("`include` must be an array of paths, found {}", other.type_str()),
            ))
        }
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut resolved = toml::Value::Table(toml::Table::new());
    for inc in includes {
        let rel = inc.as_str().ok_or_else(|| {
            toml_err(path, "`include` entries must be path strings")
        })?;
        let sub = load_file_at_depth(&dir.join(rel), depth + 1)?;
        merge(&mut resolved, sub);
    }
    merge(&mut resolved, toml::Value::Table(table));
    Ok(resolved)
}

/// Parses one `--set path.to.key=value` override. The value is read as
/// a TOML literal, falling back to a plain string.
pub fn parse_set(expr: &str) -> Result<(Vec<String>, toml::Value)> {
    let (path, raw) = expr.split_once('=').ok_or_else(|| {
        Error::Config(format!("override {expr:?} must look like path.to.key=value"))
    })?;
    let segments: Vec<String> = path.split('.').map(|s| s.trim().to_string()).collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!("override {expr:?} has an empty path segment")));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((segments, value))
}

pub fn apply_set(tree: &mut toml::Value, path: &[String], value: toml::Value) -> Result<()> {
    let mut node = tree;
    for seg in &path[..path.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::Config(format!("cannot set below non-table key `{seg}`"))
        })?;
        node = table
            .entry(seg.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node.as_table_mut().ok_or_else(|| {
        Error::Config(format!(
            "cannot set `{}`: parent is not a table",
            path.join(".")
        ))
    })?;
    table.insert(path.last().expect("non-empty path").clone(), value);
    Ok(())
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut cur = vec![i + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur.push(sub.min(prev[j + 1] + 1).min(cur[j] + 1));
        }
        prev = cur;
    }
    prev[b.len()]
}

fn collect_paths(schema: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    if let toml::Value::Table(t) = schema {
        for (k, v) in t {
            let path = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            out.push(path.clone());
            collect_paths(v, &path, out);
        }
    }
}

fn check_keys(tree: &toml::Value, schema: &toml::Value, prefix: &str, valid: &[String]) -> Result<()> {
    let (toml::Value::Table(t), toml::Value::Table(s)) = (tree, schema) else {
        return Ok(());
    };
    for (k, v) in t {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match s.get(k) {
            Some(sv) => check_keys(v, sv, &path, valid)?,
            None => {
                let nearest = valid
                    .iter()
                    .min_by_key(|cand| levenshtein(&path, cand))
                    .cloned()
                    .unwrap_or_default();
                return Err(Error::Config(format!(
                    "unknown config key `{path}`; did you mean `{nearest}`?"
                )));
            }
        }
    }
    Ok(())
}

/// Stable 64-bit fingerprint of a resolved config tree: the first eight
/// bytes of the SHA-256 of its canonical (sorted-key) JSON form.
pub fn fingerprint(tree: &toml::Value) -> u64 {
    let json = serde_json::to_string(tree).expect("toml value serializes");
    let digest = Sha256::digest(json.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 is long enough"))
}

#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: Config,
    pub tree: toml::Value,
    pub fingerprint: u64,
}

/// Full resolution pipeline: defaults, optional file (with includes),
/// then `--set` overrides; unknown keys are rejected with the nearest
/// valid key named.
pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Resolved> {
    let mut tree = toml::Value::try_from(Config::default())
        .expect("default config serializes to toml");
    if let Some(path) = file {
        merge(&mut tree, load_file(path)?);
    }
    for expr in sets {
        let (path, value) = parse_set(expr)?;
        apply_set(&mut tree, &path, value)?;
    }
    resolve_tree(tree)
}

/// Validates and types an already-merged tree (used to replay run
/// snapshots and to derive per-value sweep configs).
pub fn resolve_tree(tree: toml::Value) -> Result<Resolved> {
    let schema = toml::Value::try_from(Config::default())
        .expect("default config serializes to toml");
    let mut valid = Vec::new();
    collect_paths(&schema, "", &mut valid);
    check_keys(&tree, &schema, "", &valid)?;
    let config: Config = tree
        .clone()
        .try_into()
        .map_err(|e| Error::Config(format!("invalid config value: {e}")))?;
    let fingerprint = fingerprint(&tree);
    Ok(Resolved {
        config,
        tree,
        fingerprint,
    })
}

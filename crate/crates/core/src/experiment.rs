//! End-to-end run orchestration: resolved config → dataset (through the
//! binary cache) → model → training → test evaluation → analysis
//! artifacts, captured in a replayable run record. Also the grid sweep
//! runner with its consolidated comparison table.

use crate::config::{self, Config, Resolved};
use crate::data::cache::{file_sha256, load_dataset, save_dataset};
use crate::data::{preprocess, raw_paths, ProcessedDataset};
use crate::error::{Error, Result};
use crate::eval::{self, VectorCache};
use crate::insight::{self, svg};
use crate::metrics::MetricsReport;
use crate::tensor::Scalar;
use crate::train::{self, EpochRecord, TrainSinks};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageTime {
    pub name: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub articles: usize,
    pub vocab: usize,
    pub users: usize,
    pub categories: usize,
    pub subcategories: usize,
    pub train_impressions: usize,
    pub valid_impressions: usize,
    pub test_impressions: usize,
    pub cache_hit: bool,
}

/// Everything needed to understand and re-launch a run: the resolved
/// config snapshot, binary version, per-epoch records, final metrics,
/// and a stage timing table. `run.json` in the output directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub config_fingerprint: String,
    pub config: toml::Value,
    pub seed: u64,
    pub family: String,
    pub precision: String,
    pub dataset: Option<DatasetSummary>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub validation: Option<MetricsReport>,
    pub test: Option<MetricsReport>,
    pub stopped_early: bool,
    pub timings: Vec<StageTime>,
    pub outputs: Vec<String>,
    pub error: Option<String>,
}

impl RunRecord {
    fn new(resolved: &Resolved) -> Self {
        RunRecord {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_fingerprint: format!("{:016x}", resolved.fingerprint),
            config: resolved.tree.clone(),
            seed: resolved.config.seed,
            family: resolved.config.model.family.to_string(),
            precision: resolved.config.train.precision.clone(),
            dataset: None,
            epochs: Vec::new(),
            best_epoch: None,
            validation: None,
            test: None,
            stopped_early: false,
            timings: Vec::new(),
            outputs: Vec::new(),
            error: None,
        }
    }
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("cannot parse run record {}: {e}", path.display())))
}

/// Re-resolves the config snapshot embedded in a run record.
pub fn resolved_from_record(record: &RunRecord) -> Result<Resolved> {
    config::resolve_tree(record.config.clone())
}

fn name_stage(e: Error, stage: &str) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{stage}: {m}")),
        Error::Data(m) => Error::Data(format!("{stage}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("{stage}: {m}")),
        // structured variants already carry file/shape context
        other => other,
    }
}

fn stage<T>(
    record: &mut RunRecord,
    name: &'static str,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let started = Instant::now();
    match f() {
        Ok(v) => {
            record.timings.push(StageTime {
                name: name.to_string(),
                seconds: started.elapsed().as_secs_f64(),
            });
            Ok(v)
        }
        Err(e) => {
            record.error = Some(format!("stage {name}: {e}"));
            Err(name_stage(e, name))
        }
    }
}

/// Fingerprint of everything that shapes the preprocessed dataset: the
/// seed, the dataset section, and the embedding width.
pub fn dataset_fingerprint(cfg: &Config) -> u64 {
    let json = serde_json::to_string(&(cfg.seed, &cfg.dataset, cfg.model.embed_dim))
        .expect("dataset config serializes");
    let digest = Sha256::digest(json.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 is long enough"))
}

fn dataset_sources(cfg: &Config) -> Result<Vec<(String, [u8; 32])>> {
    let train = raw_paths(Path::new(&cfg.dataset.train_dir));
    let test = raw_paths(Path::new(&cfg.dataset.test_dir));
    let mut sources = vec![
        ("train/news".to_string(), file_sha256(&train.news)?),
        ("train/behaviors".to_string(), file_sha256(&train.behaviors)?),
        ("test/news".to_string(), file_sha256(&test.news)?),
        ("test/behaviors".to_string(), file_sha256(&test.behaviors)?),
    ];
    if !cfg.dataset.embedding_file.is_empty() {
        sources.push((
            "embeddings".to_string(),
            file_sha256(Path::new(&cfg.dataset.embedding_file))?,
        ));
    }
    Ok(sources)
}

pub fn cache_path(cfg: &Config, out_dir: &Path) -> PathBuf {
    if cfg.dataset.cache_file.is_empty() {
        out_dir.join("dataset.cache")
    } else {
        PathBuf::from(&cfg.dataset.cache_file)
    }
}

/// Loads the preprocessed dataset from its binary cache when the cache
/// matches this config and these input files; otherwise rebuilds from
/// the TSVs and refreshes the cache.
pub fn load_or_build_dataset(cfg: &Config, out_dir: &Path) -> Result<(ProcessedDataset, DatasetSummary)> {
    cfg.require_dataset()?;
    let path = cache_path(cfg, out_dir);
    let fingerprint = dataset_fingerprint(cfg);
    let sources = dataset_sources(cfg)?;
    let mut cache_hit = false;
    let ds = if path.exists() {
        match load_dataset(&path, fingerprint, &sources) {
            Ok(ds) => {
                cache_hit = true;
                ds
            }
            Err(e) => {
                log::warn!("rebuilding dataset: cache {} unusable: {e}", path.display());
                build_and_cache(cfg, &path, fingerprint, &sources)?
            }
        }
    } else {
        build_and_cache(cfg, &path, fingerprint, &sources)?
    };
    let summary = DatasetSummary {
        articles: ds.articles.len(),
        vocab: ds.vocab.len(),
        users: ds.users.len(),
        categories: ds.categories.len(),
        subcategories: ds.subcategories.len(),
        train_impressions: ds.train.len(),
        valid_impressions: ds.valid.len(),
        test_impressions: ds.test.len(),
        cache_hit,
    };
    Ok((ds, summary))
}

fn build_and_cache(
    cfg: &Config,
    path: &Path,
    fingerprint: u64,
    sources: &[(String, [u8; 32])],
) -> Result<ProcessedDataset> {
    let train = raw_paths(Path::new(&cfg.dataset.train_dir));
    let test = raw_paths(Path::new(&cfg.dataset.test_dir));
    let (ds, stats) = preprocess(&train, &test, &cfg.preprocess_options())?;
    log::info!(
        "preprocessed {} articles, {} train / {} valid / {} test impressions ({} dropped refs)",
        ds.articles.len(),
        ds.train.len(),
        ds.valid.len(),
        ds.test.len(),
        stats.dropped_history_refs + stats.dropped_candidate_refs,
    );
    save_dataset(&ds, path, fingerprint, sources)?;
    Ok(ds)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("cannot serialize {}: {e}", path.display())))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Full pipeline: dataset → model → train → evaluate on the test split →
/// analysis artifacts. The run record is written to `<out>/run.json`
/// before this returns, on success and on failure alike; errors are
/// propagated with the failing stage named.
pub fn run(resolved: &Resolved, out_dir: &Path) -> Result<RunRecord> {
    match resolved.config.train.precision.as_str() {
        "f32" => run_typed::<f32>(resolved, out_dir),
        "f64" => run_typed::<f64>(resolved, out_dir),
        other => Err(Error::Config(format!(
            "train.precision must be \"f32\" or \"f64\", got {other:?}"
        ))),
    }
}

fn run_typed<S: Scalar>(resolved: &Resolved, out_dir: &Path) -> Result<RunRecord> {
    std::fs::create_dir_all(out_dir)?;
    let mut record = RunRecord::new(resolved);
    let result = pipeline::<S>(resolved, out_dir, &mut record);
    write_json(&out_dir.join("run.json"), &record)?;
    result.map(|()| record)
}

fn pipeline<S: Scalar>(resolved: &Resolved, out_dir: &Path, record: &mut RunRecord) -> Result<()> {
    let cfg = &resolved.config;
    if cfg.insight.top_n == 0 {
        return Err(Error::Config("insight.top_n must be at least 1".into()));
    }

    let (ds, summary) = stage(record, "load_data", || load_or_build_dataset(cfg, out_dir))?;
    record.dataset = Some(summary);

    let spec = cfg.model_spec(&ds);
    stage(record, "build_model", || spec.validate())?;

    let epoch_log = out_dir.join("epochs.jsonl");
    if epoch_log.exists() {
        std::fs::remove_file(&epoch_log)?; // the trainer appends
    }
    let sinks = TrainSinks {
        checkpoint: Some(out_dir.join("model.ckpt")),
        epoch_log: Some(epoch_log),
        fingerprint: resolved.fingerprint,
    };
    let outcome = stage(record, "train", || {
        train::train::<S>(spec.clone(), &ds, &cfg.train_config(), &sinks)
    })?;
    record.epochs = outcome.epochs.clone();
    record.best_epoch = Some(outcome.best_epoch);
    record.validation = Some(outcome.best_validation);
    record.stopped_early = outcome.stopped_early;
    record.outputs.push("model.ckpt".to_string());
    record.outputs.push("epochs.jsonl".to_string());

    let (scores, report) = stage(record, "evaluate", || {
        let mut cache = VectorCache::new(&outcome.model);
        let scores = eval::score_impressions_fast(&outcome.model, &ds, &ds.test, &mut cache)?;
        let report = eval::report_from_scores(&scores, &ds.test)?;
        write_json(&out_dir.join("metrics.json"), &report)?;
        Ok((scores, report))
    })?;
    record.test = Some(report);
    record.outputs.push("metrics.json".to_string());

    let emitted = stage(record, "insight", || {
        emit_insight(cfg, &ds, &scores, out_dir)
    })?;
    record.outputs.extend(emitted);
    Ok(())
}

#[derive(Serialize)]
struct PopulationSummary {
    top_count: usize,
    bottom_count: usize,
    top_clicks: u64,
    bottom_clicks: u64,
}

fn emit(out_dir: &Path, name: &str, content: String, written: &mut Vec<String>) -> Result<()> {
    std::fs::write(out_dir.join(name), content)?;
    written.push(name.to_string());
    Ok(())
}

/// Analysis artifacts that need only the test split: article exposure/
/// click/CTR stats, the CTR scatter, the population split, and the
/// ground-truth subcategory treemap. Returns the file names written.
pub fn emit_dataset_insight(ds: &ProcessedDataset, out_dir: &Path) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let stats = insight::article_stats(&ds.articles, &ds.test)?;
    emit(out_dir, "article_stats.csv", insight::article_stats_csv(&stats)?, &mut written)?;
    write_json(&out_dir.join("article_stats.json"), &stats)?;
    written.push("article_stats.json".to_string());
    emit(out_dir, "ctr_scatter.svg", svg::scatter_svg(&stats)?, &mut written)?;

    if stats.len() >= 20 {
        let (bottom, top) = insight::split_populations(&stats)?;
        let summary = PopulationSummary {
            top_count: top.len(),
            bottom_count: bottom.len(),
            top_clicks: top.iter().map(|s| s.total_clicks).sum(),
            bottom_clicks: bottom.iter().map(|s| s.total_clicks).sum(),
        };
        write_json(&out_dir.join("populations.json"), &summary)?;
        written.push("populations.json".to_string());
    } else {
        log::warn!("skipping population split: only {} articles", stats.len());
    }

    let clicked = insight::clicked_articles(&ds.test);
    let rows = insight::compare_distributions(&ds.articles, &clicked, &[])?;
    let truth: Vec<(String, f64)> = rows
        .iter()
        .map(|r| (r.subcategory.clone(), r.ground_truth as f64))
        .collect();
    emit(
        out_dir,
        "treemap_ground_truth.svg",
        svg::counts_treemap_svg(&truth)?,
        &mut written,
    )?;
    Ok(written)
}

/// Analysis artifacts that compare model recommendations against the
/// ground truth on the test split.
pub fn emit_model_insight(
    cfg: &Config,
    ds: &ProcessedDataset,
    scores: &[Vec<f64>],
    out_dir: &Path,
) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let clicked = insight::clicked_articles(&ds.test);
    let recommended = insight::top_recommendations(scores, &ds.test, cfg.insight.top_n)?;
    let rows = insight::compare_distributions(&ds.articles, &clicked, &recommended)?;
    emit(out_dir, "distribution.csv", insight::distribution_csv(&rows)?, &mut written)?;
    write_json(&out_dir.join("distribution.json"), &rows)?;
    written.push("distribution.json".to_string());
    emit(out_dir, "treemap_recommended.svg", svg::treemap_svg(&rows)?, &mut written)?;
    Ok(written)
}

/// Emits the full artifact set for a scored test split.
pub fn emit_insight(
    cfg: &Config,
    ds: &ProcessedDataset,
    scores: &[Vec<f64>],
    out_dir: &Path,
) -> Result<Vec<String>> {
    let mut written = emit_dataset_insight(ds, out_dir)?;
    written.extend(emit_model_insight(cfg, ds, scores, out_dir)?);
    Ok(written)
}

fn value_slug(v: &toml::Value) -> String {
    let raw = match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let mut slug: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    slug.truncate(40);
    slug
}

/// One run per value of the configured sweep axis, sequential unless
/// `sweep.parallel`; writes the consolidated comparison table to
/// `<out>/sweep.csv`.
pub fn sweep(resolved: &Resolved, out_root: &Path) -> Result<Vec<RunRecord>> {
    let sw = &resolved.config.sweep;
    if sw.axis.is_empty() || sw.values.is_empty() {
        return Err(Error::Config(
            "sweep needs an axis and a non-empty value list, e.g. \
             --set sweep.axis=train.batch_size --set sweep.values=[16,32,64]"
                .into(),
        ));
    }
    let axis_path: Vec<String> = sw.axis.split('.').map(str::to_string).collect();
    let mut jobs = Vec::new();
    for (i, value) in sw.values.iter().enumerate() {
        let mut tree = resolved.tree.clone();
        config::apply_set(&mut tree, &axis_path, value.clone())?;
        let sub = config::resolve_tree(tree)
            .map_err(|e| Error::Config(format!("sweep value {value} for {}: {e}", sw.axis)))?;
        let dir = out_root.join(format!("run_{i:02}_{}", value_slug(value)));
        jobs.push((sub, dir));
    }
    std::fs::create_dir_all(out_root)?;

    let records: Vec<RunRecord> = if sw.parallel {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(sub, dir)| std::thread::spawn({
                let sub = sub.clone();
                let dir = dir.clone();
                move || run(&sub, &dir)
            }))
            .collect();
        let mut out = Vec::new();
        for h in handles {
            out.push(h.join().map_err(|_| Error::Numeric("sweep worker panicked".into()))??);
        }
        out
    } else {
        let mut out = Vec::new();
        for (sub, dir) in &jobs {
            out.push(run(sub, dir)?);
        }
        out
    };

    let mut csv = format!("{},auc,mrr,ndcg_at_5,ndcg_at_10,best_epoch,epochs_run\n", sw.axis);
    for (record, value) in records.iter().zip(sw.values.iter()) {
        let t = record.test.as_ref().expect("successful run has test metrics");
        let value_text = match value {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{},{}\n",
            value_text,
            t.auc,
            t.mrr,
            t.ndcg_at_5,
            t.ndcg_at_10,
            record.best_epoch.expect("successful run has a best epoch"),
            record.epochs.len(),
        ));
    }
    std::fs::write(out_root.join("sweep.csv"), csv)?;
    Ok(records)
}

/// Mean and sample standard deviation (n−1; zero when n = 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-metric (mean, std) across repeated runs of one configuration.
#[derive(Clone, Debug, Serialize)]
pub struct ReportAggregate {
    pub n: usize,
    pub auc: (f64, f64),
    pub mrr: (f64, f64),
    pub ndcg_at_5: (f64, f64),
    pub ndcg_at_10: (f64, f64),
}

pub fn aggregate_reports(reports: &[MetricsReport]) -> Result<ReportAggregate> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to aggregate".into()));
    }
    let collect = |f: fn(&MetricsReport) -> f64| -> (f64, f64) {
        let vals: Vec<f64> = reports.iter().map(f).collect();
        mean_std(&vals)
    };
    Ok(ReportAggregate {
        n: reports.len(),
        auc: collect(|r| r.auc),
        mrr: collect(|r| r.mrr),
        ndcg_at_5: collect(|r| r.ndcg_at_5),
        ndcg_at_10: collect(|r| r.ndcg_at_10),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic, SyntheticSpec};

    fn tiny_corpus(dir: &Path) {
        let spec = SyntheticSpec {
            topics: 3,
            users: 12,
            articles: 40,
            train_impressions: 150,
            test_impressions: 50,
            candidates: 4,
            purity: 0.9,
            words_per_topic: 12,
            seed: 11,
        };
        generate_synthetic(&spec, dir).unwrap();
    }

    fn tiny_sets(data: &Path) -> Vec<String> {
        let d = data.display();
        [
            format!("dataset.train_dir={d}/train"),
            format!("dataset.test_dir={d}/test"),
            "dataset.max_title_len=8".into(),
            "dataset.max_abstract_len=6".into(),
            "model.embed_dim=12".into(),
            "model.d_model=8".into(),
            "model.heads=2".into(),
            "model.d_att=6".into(),
            "model.max_history_len=10".into(),
            "model.conv_filters=8".into(),
            "model.gru_dim=8".into(),
            "model.cat_embed_dim=4".into(),
            "train.epochs=2".into(),
            "train.min_epochs=1".into(),
            "train.batch_size=16".into(),
            "train.lr=0.005".into(),
            "train.negatives=3".into(),
            "seed=5".into(),
        ]
        .to_vec()
    }

    #[test]
    fn run_emits_record_metrics_and_analysis_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        tiny_corpus(&data);
        let resolved = config::resolve(None, &tiny_sets(&data)).unwrap();
        let out = tmp.path().join("out");
        let record = run(&resolved, &out).unwrap();

        assert!(record.error.is_none());
        assert_eq!(record.epochs.len(), 2);
        assert!(record.test.is_some());
        assert!(record.validation.is_some());
        let stage_names: Vec<&str> = record.timings.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(
            stage_names,
            ["load_data", "build_model", "train", "evaluate", "insight"]
        );
        for name in [
            "run.json",
            "metrics.json",
            "model.ckpt",
            "epochs.jsonl",
            "article_stats.csv",
            "article_stats.json",
            "ctr_scatter.svg",
            "populations.json",
            "distribution.csv",
            "distribution.json",
            "treemap_recommended.svg",
            "treemap_ground_truth.svg",
            "dataset.cache",
        ] {
            assert!(out.join(name).exists(), "missing {name}");
        }
        let epoch_lines = std::fs::read_to_string(out.join("epochs.jsonl")).unwrap();
        assert_eq!(epoch_lines.lines().count(), 2);
        // the on-disk record parses back into the same structure
        let loaded = load_record(&out.join("run.json")).unwrap();
        assert_eq!(loaded.config_fingerprint, record.config_fingerprint);
        assert_eq!(loaded.epochs.len(), 2);
    }

    #[test]
    fn second_run_hits_the_cache_and_reproduces_metrics_bitwise() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        tiny_corpus(&data);
        let mut sets = tiny_sets(&data);
        sets.push(format!(
            "dataset.cache_file={}",
            tmp.path().join("shared.cache").display()
        ));
        let resolved = config::resolve(None, &sets).unwrap();
        let first = run(&resolved, &tmp.path().join("out1")).unwrap();
        let second = run(&resolved, &tmp.path().join("out2")).unwrap();
        assert!(!first.dataset.as_ref().unwrap().cache_hit);
        assert!(second.dataset.as_ref().unwrap().cache_hit);
        let (a, b) = (first.test.unwrap(), second.test.unwrap());
        assert_eq!(a.auc.to_bits(), b.auc.to_bits());
        assert_eq!(a.ndcg_at_10.to_bits(), b.ndcg_at_10.to_bits());
        let ck1 = std::fs::read(tmp.path().join("out1/model.ckpt")).unwrap();
        let ck2 = std::fs::read(tmp.path().join("out2/model.ckpt")).unwrap();
        assert_eq!(ck1, ck2, "checkpoints must be bitwise identical");
    }

    #[test]
    fn replaying_a_run_record_snapshot_reproduces_the_run() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        tiny_corpus(&data);
        let resolved = config::resolve(None, &tiny_sets(&data)).unwrap();
        let first = run(&resolved, &tmp.path().join("out1")).unwrap();

        let record = load_record(&tmp.path().join("out1/run.json")).unwrap();
        let replayed = resolved_from_record(&record).unwrap();
        assert_eq!(replayed.fingerprint, resolved.fingerprint);
        let second = run(&replayed, &tmp.path().join("out2")).unwrap();
        assert_eq!(
            first.test.unwrap().auc.to_bits(),
            second.test.unwrap().auc.to_bits()
        );
    }

    #[test]
    fn failures_name_the_stage_and_still_write_the_record() {
        let tmp = tempfile::tempdir().unwrap();
        let resolved = config::resolve(
            None,
            &[
                "dataset.train_dir=/nonexistent/train".into(),
                "dataset.test_dir=/nonexistent/test".into(),
            ],
        )
        .unwrap();
        let out = tmp.path().join("out");
        let err = run(&resolved, &out).unwrap_err();
        assert_eq!(err.exit_code(), 3, "missing data files are a data error");
        let record = load_record(&out.join("run.json")).unwrap();
        let msg = record.error.unwrap();
        assert!(msg.contains("load_data"), "{msg}");
        assert!(record.test.is_none());
    }

    #[test]
    fn unknown_precision_is_a_config_error() {
        let err = run(
            &config::resolve(None, &["train.precision=f16".into()]).unwrap(),
            Path::new("/tmp/unused"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn sweep_produces_one_run_per_value_and_a_table() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        tiny_corpus(&data);
        let mut sets = tiny_sets(&data);
        sets.push("train.epochs=1".into());
        sets.push("sweep.axis=train.lr".into());
        sets.push("sweep.values=[0.005, 0.001]".into());
        sets.push(format!(
            "dataset.cache_file={}",
            tmp.path().join("shared.cache").display()
        ));
        let resolved = config::resolve(None, &sets).unwrap();
        let out = tmp.path().join("sweep");
        let records = sweep(&resolved, &out).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].seed, records[1].seed, "seed shared across the grid");
        assert!(out.join("run_00_0.005/run.json").exists());
        assert!(out.join("run_01_0.001/run.json").exists());
        let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("train.lr,auc,mrr,ndcg_at_5,ndcg_at_10"));
        assert!(lines[1].starts_with("0.005,"));
        assert!(lines[2].starts_with("0.001,"));
    }

    #[test]
    fn sweep_rejects_empty_values_and_bad_axes() {
        let resolved = config::resolve(None, &["sweep.axis=train.lr".into()]).unwrap();
        let err = sweep(&resolved, Path::new("/tmp/unused")).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");

        let resolved = config::resolve(
            None,
            &["sweep.axis=train.lrate".into(), "sweep.values=[1]".into()],
        )
        .unwrap();
        let err = sweep(&resolved, Path::new("/tmp/unused")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("train.lr"), "{msg}");
    }

    #[test]
    fn parallel_sweep_matches_sequential_results() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        tiny_corpus(&data);
        let mut sets = tiny_sets(&data);
        sets.push("train.epochs=1".into());
        sets.push("sweep.axis=train.negatives".into());
        sets.push("sweep.values=[2, 3]".into());
        let sequential = {
            let resolved = config::resolve(None, &sets).unwrap();
            sweep(&resolved, &tmp.path().join("seq")).unwrap()
        };
        let parallel = {
            let mut p = sets.clone();
            p.push("sweep.parallel=true".into());
            let resolved = config::resolve(None, &p).unwrap();
            sweep(&resolved, &tmp.path().join("par")).unwrap()
        };
        for (s, p) in sequential.iter().zip(parallel.iter()) {
            assert_eq!(
                s.test.as_ref().unwrap().auc.to_bits(),
                p.test.as_ref().unwrap().auc.to_bits()
            );
        }
    }

    #[test]
    fn aggregate_reports_mean_and_std() {
        let base = MetricsReport {
            auc: 60.0,
            mrr: 30.0,
            ndcg_at_5: 30.0,
            ndcg_at_10: 40.0,
            auc_raw: 0.60,
            mrr_raw: 0.30,
            ndcg_at_5_raw: 0.30,
            ndcg_at_10_raw: 0.40,
            n_evaluated: 10,
            n_skipped: 0,
        };
        let mut b = base;
        b.auc = 64.0;
        let agg = aggregate_reports(&[base, b]).unwrap();
        assert_eq!(agg.n, 2);
        assert!((agg.auc.0 - 62.0).abs() < 1e-12);
        // sample std of {60, 64} = sqrt(8)
        assert!((agg.auc.1 - 8f64.sqrt()).abs() < 1e-12);
        assert!((agg.mrr.1 - 0.0).abs() < 1e-12);
        assert!(aggregate_reports(&[]).is_err());
    }

    #[test]
    fn dataset_fingerprint_tracks_data_affecting_keys_only() {
        let base = config::resolve(None, &["dataset.train_dir=a".into()]).unwrap();
        let same_train_change =
            config::resolve(None, &["dataset.train_dir=a".into(), "train.lr=0.9".into()])
                .unwrap();
        let data_change =
            config::resolve(None, &["dataset.train_dir=b".into()]).unwrap();
        assert_eq!(
            dataset_fingerprint(&base.config),
            dataset_fingerprint(&same_train_change.config),
            "trainer knobs must not invalidate the dataset cache"
        );
        assert_ne!(
            dataset_fingerprint(&base.config),
            dataset_fingerprint(&data_change.config)
        );
    }
}

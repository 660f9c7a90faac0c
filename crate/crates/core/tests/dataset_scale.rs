//! Scale behavior of the data pipeline: a cache hit must be far cheaper
//! than a cold build, and (opt-in) the full public corpus parses to its
//! published size.

use newsrec_core::data::cache::{load_dataset, save_dataset};
use newsrec_core::data::parse::{parse_behaviors_tsv, parse_news_tsv};
use newsrec_core::data::split::SplitMode;
use newsrec_core::data::synthetic::{generate_synthetic, SyntheticSpec};
use newsrec_core::data::{preprocess, raw_paths, PreprocessOptions};
use std::collections::BTreeSet;
use std::time::Instant;

#[test]
fn cache_hit_loads_much_faster_than_cold_build() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SyntheticSpec::default(); // 10k train impressions
    generate_synthetic(&synth, dir.path()).unwrap();
    let opts = PreprocessOptions {
        max_title_len: 12,
        max_abstract_len: 10,
        embed_dim: 32,
        embedding_file: None,
        split_mode: SplitMode::Random,
        split_ratio: 0.95,
        seed: 2,
    };

    let t0 = Instant::now();
    let (ds, _) = preprocess(
        &raw_paths(&dir.path().join("train")),
        &raw_paths(&dir.path().join("test")),
        &opts,
    )
    .unwrap();
    let build_s = t0.elapsed().as_secs_f64();

    let path = dir.path().join("dataset.cache");
    save_dataset(&ds, &path, 42, &[]).unwrap();

    let mut load_s = f64::INFINITY;
    for _ in 0..3 {
        let t = Instant::now();
        let loaded = load_dataset(&path, 42, &[]).unwrap();
        load_s = load_s.min(t.elapsed().as_secs_f64());
        assert_eq!(loaded.articles.len(), ds.articles.len());
        assert_eq!(loaded.train.len(), ds.train.len());
        assert_eq!(loaded.test.len(), ds.test.len());
    }

    assert!(
        load_s < 0.2 * build_s,
        "cache hit took {load_s:.3}s against a {build_s:.3}s cold build; want < 20%"
    );
}

#[test]
#[ignore = "needs the public MIND-small corpus; set MIND_SMALL_DIR to a dir with train/ and dev/"]
fn full_corpus_parses_to_published_counts() {
    let root = std::path::PathBuf::from(
        std::env::var("MIND_SMALL_DIR")
            .expect("set MIND_SMALL_DIR to a directory containing train/ and dev/"),
    );
    let (train_news, _) = parse_news_tsv(&root.join("train/news.tsv")).unwrap();
    let (dev_news, _) = parse_news_tsv(&root.join("dev/news.tsv")).unwrap();
    let distinct: BTreeSet<&str> = train_news
        .iter()
        .chain(dev_news.iter())
        .map(|n| n.news_id.as_str())
        .collect();
    assert_eq!(distinct.len(), 65_238, "distinct articles across train+dev");

    let train_rows = parse_behaviors_tsv(&root.join("train/behaviors.tsv")).unwrap();
    let dev_rows = parse_behaviors_tsv(&root.join("dev/behaviors.tsv")).unwrap();
    assert_eq!(
        train_rows.len() + dev_rows.len(),
        156_965,
        "behavior rows across train+dev"
    );
}

//! Synthetic corpus with a planted topic preference: each topic owns a
//! disjoint word set, each user favors one topic, and clicked articles
//! come from the preferred topic with a configured probability. A simple
//! bag-of-words scorer must score well here, which gates the far more
//! expensive end-to-end learnability checks.

use crate::data::ProcessedDataset;
use crate::error::{Error, Result};
use crate::seed;
use chrono::DateTime;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub topics: usize,
    pub users: usize,
    pub articles: usize,
    pub train_impressions: usize,
    pub test_impressions: usize,
    /// Candidates per impression, including the single positive.
    pub candidates: usize,
    /// Probability that a clicked article comes from the user's topic.
    pub purity: f64,
    pub words_per_topic: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            topics: 10,
            users: 200,
            articles: 500,
            train_impressions: 10_000,
            test_impressions: 2_000,
            candidates: 5,
            purity: 0.9,
            words_per_topic: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SyntheticSummary {
    pub train_impressions: usize,
    pub test_impressions: usize,
    /// Fraction of clicked articles drawn from the clicking user's topic.
    pub measured_purity: f64,
}

const HISTORY_CAP: usize = 15;
const BASE_EPOCH: i64 = 1_572_566_400; // 2019-11-01 00:00:00 UTC

fn format_timestamp(epoch: i64) -> String {
    DateTime::from_timestamp(epoch, 0)
        .expect("valid epoch")
        .naive_utc()
        .format("%m/%d/%Y %I:%M:%S %p")
        .to_string()
}

struct World {
    article_topic: Vec<usize>,
    by_topic: Vec<Vec<usize>>,
    news_tsv: String,
}

fn build_articles(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> World {
    let mut article_topic = Vec::with_capacity(spec.articles);
    let mut by_topic = vec![Vec::new(); spec.topics];
    let mut news_tsv = String::new();
    for i in 0..spec.articles {
        let topic = i % spec.topics;
        article_topic.push(topic);
        by_topic[topic].push(i);
        let n_title = rng.gen_range(4..=8);
        let title: Vec<String> = (0..n_title)
            .map(|_| format!("t{topic}w{}", rng.gen_range(0..spec.words_per_topic)))
            .collect();
        let abstract_ = if rng.gen_bool(0.8) {
            let n = rng.gen_range(3..=10);
            (0..n)
                .map(|_| format!("t{topic}w{}", rng.gen_range(0..spec.words_per_topic)))
                .collect::<Vec<_>>()
                .join(" ")
        } else {
            String::new()
        };
        let sub = rng.gen_range(0..2);
        writeln!(
            news_tsv,
            "N{i}\tcat{topic}\tt{topic}s{sub}\t{}\t{}\thttps://example.com/N{i}\t[]\t[]",
            title.join(" "),
            abstract_
        )
        .unwrap();
    }
    World {
        article_topic,
        by_topic,
        news_tsv,
    }
}

/// Generates `<out>/train/{news,behaviors}.tsv` and
/// `<out>/test/{news,behaviors}.tsv`; the news files are identical and
/// the test impressions all postdate the training ones.
pub fn generate_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<SyntheticSummary> {
    if spec.topics < 2 {
        return Err(Error::Config(format!(
            "synthetic corpus needs at least 2 topics, got {}",
            spec.topics
        )));
    }
    if spec.articles < spec.topics {
        return Err(Error::Config(
            "synthetic corpus needs at least one article per topic".into(),
        ));
    }
    if spec.users == 0 || spec.candidates < 2 {
        return Err(Error::Config(
            "synthetic corpus needs users and at least 2 candidates per impression".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.purity) {
        return Err(Error::Config(format!(
            "purity must lie in [0, 1], got {}",
            spec.purity
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, "synthetic", 0));
    let world = build_articles(spec, &mut rng);
    let mut clicks: Vec<Vec<usize>> = vec![Vec::new(); spec.users];
    let mut on_topic = 0usize;
    let total = spec.train_impressions + spec.test_impressions;
    let mut behaviors = vec![String::new(), String::new()];

    for m in 0..total {
        let split = usize::from(m >= spec.train_impressions);
        let user = rng.gen_range(0..spec.users);
        let pref = user % spec.topics;
        let positive = if rng.gen_bool(spec.purity) {
            *world.by_topic[pref].choose(&mut rng).expect("topic has articles")
        } else {
            loop {
                let a = rng.gen_range(0..spec.articles);
                if world.article_topic[a] != pref {
                    break a;
                }
            }
        };
        if world.article_topic[positive] == pref {
            on_topic += 1;
        }
        let mut slate = vec![positive];
        while slate.len() < spec.candidates {
            let a = rng.gen_range(0..spec.articles);
            if !slate.contains(&a) {
                slate.push(a);
            }
        }
        slate.shuffle(&mut rng);
        let history = clicks[user]
            .iter()
            .rev()
            .take(HISTORY_CAP)
            .rev()
            .map(|&a| format!("N{a}"))
            .collect::<Vec<_>>()
            .join(" ");
        let candidates = slate
            .iter()
            .map(|&a| format!("N{a}-{}", u8::from(a == positive)))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            behaviors[split],
            "{}\tU{user}\t{}\t{history}\t{candidates}",
            m + 1,
            format_timestamp(BASE_EPOCH + 37 * m as i64)
        )
        .unwrap();
        clicks[user].push(positive);
    }

    for (name, body) in [("train", &behaviors[0]), ("test", &behaviors[1])] {
        let dir = out.join(name);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("news.tsv"), &world.news_tsv)?;
        std::fs::write(dir.join("behaviors.tsv"), body)?;
    }

    Ok(SyntheticSummary {
        train_impressions: spec.train_impressions,
        test_impressions: spec.test_impressions,
        measured_purity: on_topic as f64 / total as f64,
    })
}

/// Scores each test candidate by the dot product between the history's
/// title bag-of-words and the candidate's, and returns the pairwise AUC.
/// Any learnable planted preference must already be visible to this
/// model-free scorer; a logistic fit on the same feature is monotone in
/// it and would produce the identical ranking.
pub fn bow_oracle_auc(ds: &ProcessedDataset) -> f64 {
    let mut wins = 0.0f64;
    let mut pairs = 0.0f64;
    for imp in &ds.test {
        let mut profile: BTreeMap<u32, f64> = BTreeMap::new();
        for &a in &imp.history {
            for &t in &ds.articles[a as usize].title {
                if t != 0 {
                    *profile.entry(t).or_insert(0.0) += 1.0;
                }
            }
        }
        let score = |a: u32| -> f64 {
            ds.articles[a as usize]
                .title
                .iter()
                .filter(|&&t| t != 0)
                .map(|t| profile.get(t).copied().unwrap_or(0.0))
                .sum()
        };
        let pos: Vec<f64> = imp
            .candidates
            .iter()
            .filter(|(_, l)| *l == 1)
            .map(|(a, _)| score(*a))
            .collect();
        let neg: Vec<f64> = imp
            .candidates
            .iter()
            .filter(|(_, l)| *l == 0)
            .map(|(a, _)| score(*a))
            .collect();
        for &p in &pos {
            for &n in &neg {
                pairs += 1.0;
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
    }
    if pairs == 0.0 {
        return f64::NAN;
    }
    wins / pairs
}

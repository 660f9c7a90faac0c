//! MIND-format data handling: parsing, vocabulary and embeddings, splits,
//! negative sampling, batch assembly, binary caching, and a synthetic
//! planted-preference generator.

pub mod cache;
pub mod parse;
pub mod sampling;
pub mod split;
pub mod synthetic;
pub mod vocab;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Scalar, Tensor};
use crate::zoo::encoders::NewsTokens;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// One article with token ids padded/truncated to the configured lengths.
/// Token id 0 is padding, id 1 is the out-of-vocabulary token.
#[derive(Clone, Debug, PartialEq)]
pub struct NewsArticle {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub title: Vec<u32>,
    pub abstract_: Vec<u32>,
    pub raw_title: String,
    pub category_id: u32,
    pub subcategory_id: u32,
}

impl NewsArticle {
    pub fn tokens(&self) -> NewsTokens<'_> {
        NewsTokens {
            title: &self.title,
            abstract_: &self.abstract_,
            category: self.category_id,
            subcategory: self.subcategory_id,
        }
    }
}

/// One serving event, fully indexed: history and candidates refer to rows
/// of `ProcessedDataset::articles`.
#[derive(Clone, Debug, PartialEq)]
pub struct Impression {
    pub impression_id: String,
    /// Train-user index; 0 is the reserved unknown-user slot.
    pub user: u32,
    pub timestamp: i64,
    /// Oldest to newest.
    pub history: Vec<u32>,
    pub candidates: Vec<(u32, u8)>,
}

/// One slate for training: the user context plus k+1 candidates of which
/// exactly one is the clicked article.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub user: u32,
    pub history: Vec<u32>,
    pub slate: Vec<u32>,
    /// Index of the positive within `slate`.
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDescriptor {
    pub mode: String,
    pub ratio: f64,
    pub seed: u64,
}

/// Everything the trainer and evaluator consume, serializable to the
/// versioned binary cache.
#[derive(Clone, Debug)]
pub struct ProcessedDataset {
    pub articles: Vec<NewsArticle>,
    pub article_index: BTreeMap<String, u32>,
    pub train: Vec<Impression>,
    pub valid: Vec<Impression>,
    pub test: Vec<Impression>,
    pub vocab: vocab::Vocab,
    pub embeddings: Tensor<f32>,
    pub users: BTreeMap<String, u32>,
    pub categories: Vec<String>,
    pub subcategories: Vec<String>,
    pub split: SplitDescriptor,
}

impl ProcessedDataset {
    pub fn article(&self, idx: u32) -> &NewsArticle {
        &self.articles[idx as usize]
    }

    pub fn n_users(&self) -> usize {
        self.users.len() + 1
    }

    /// FNV-1a over the canonical serialized body; equal iff the contents
    /// round-trip losslessly.
    pub fn content_hash(&self) -> u64 {
        seed::fnv1a(&cache::serialize_body(self))
    }

    /// Embedding matrix converted to the requested scalar type.
    pub fn embeddings_as<S: Scalar>(&self) -> Tensor<S> {
        Tensor::new(
            self.embeddings.shape().to_vec(),
            self.embeddings
                .data()
                .iter()
                .map(|&v| S::from_f64(v as f64))
                .collect(),
        )
        .expect("same shape")
    }
}

/// Keeps the most recent `h` entries and prepends padding, so position
/// h-1 is always the newest click and a recurrent reader ends on real
/// items. Returns the padded index list and its validity mask.
pub fn pad_history(history: &[u32], h: usize) -> (Vec<u32>, Vec<bool>) {
    let keep = history.len().min(h);
    let tail = &history[history.len() - keep..];
    let mut ids = vec![0u32; h - keep];
    let mut mask = vec![false; h - keep];
    ids.extend_from_slice(tail);
    mask.extend(std::iter::repeat(true).take(keep));
    (ids, mask)
}

/// Batch order for one epoch: seeded shuffle of sample indices when
/// enabled, chunked by `batch_size`, final partial batch kept.
pub fn make_batches(
    n_samples: usize,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "batch_order", 0));
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// File locations of one split's raw MIND data.
#[derive(Clone, Debug)]
pub struct RawPaths {
    pub news: PathBuf,
    pub behaviors: PathBuf,
}

#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub max_title_len: usize,
    pub max_abstract_len: usize,
    pub embed_dim: usize,
    /// Pretrained embedding text file; tokens not found (or all tokens,
    /// when absent) get seeded uniform(-0.1, 0.1) rows.
    pub embedding_file: Option<PathBuf>,
    pub split_mode: split::SplitMode,
    pub split_ratio: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct PreprocessStats {
    pub news_rows: usize,
    pub rejected_empty_title: usize,
    pub duplicate_news_ids: usize,
    pub behavior_rows: usize,
    pub dropped_history_refs: usize,
    pub dropped_candidate_refs: usize,
    pub dropped_empty_impressions: usize,
}

fn index_impressions(
    raw: Vec<parse::RawImpression>,
    article_index: &BTreeMap<String, u32>,
    users: &BTreeMap<String, u32>,
    stats: &mut PreprocessStats,
) -> Vec<Impression> {
    let mut out = Vec::with_capacity(raw.len());
    for imp in raw {
        let mut history = Vec::with_capacity(imp.history.len());
        for id in &imp.history {
            match article_index.get(id) {
                Some(&idx) => history.push(idx),
                None => stats.dropped_history_refs += 1,
            }
        }
        let mut candidates = Vec::with_capacity(imp.candidates.len());
        for (id, label) in &imp.candidates {
            match article_index.get(id) {
                Some(&idx) => candidates.push((idx, *label)),
                None => stats.dropped_candidate_refs += 1,
            }
        }
        if candidates.is_empty() {
            stats.dropped_empty_impressions += 1;
            continue;
        }
        out.push(Impression {
            impression_id: imp.impression_id,
            user: users.get(&imp.user_id).copied().unwrap_or(0),
            timestamp: imp.timestamp,
            history,
            candidates,
        });
    }
    out
}

/// Full preprocessing pipeline: parse both splits, build the vocabulary
/// and embedding matrix, index impressions, and split train/validation.
pub fn preprocess(
    train: &RawPaths,
    test: &RawPaths,
    opts: &PreprocessOptions,
) -> Result<(ProcessedDataset, PreprocessStats)> {
    let mut stats = PreprocessStats::default();

    let (mut parsed, news_stats) = parse::parse_news_tsv(&train.news)?;
    stats.news_rows = news_stats.rows;
    stats.rejected_empty_title = news_stats.rejected_empty_title;
    stats.duplicate_news_ids = news_stats.duplicate_ids;
    if test.news != train.news {
        let (extra, extra_stats) = parse::parse_news_tsv(&test.news)?;
        stats.news_rows += extra_stats.rows;
        stats.rejected_empty_title += extra_stats.rejected_empty_title;
        let mut seen: BTreeMap<String, usize> = parsed
            .iter()
            .enumerate()
            .map(|(i, a)| (a.news_id.clone(), i))
            .collect();
        for article in extra {
            match seen.get(&article.news_id) {
                Some(&i) => {
                    stats.duplicate_news_ids += 1;
                    parsed[i] = article;
                }
                None => {
                    seen.insert(article.news_id.clone(), parsed.len());
                    parsed.push(article);
                }
            }
        }
    }

    let (vocabulary, embeddings) = vocab::build_vocab_and_embeddings(
        &parsed,
        opts.embedding_file.as_deref(),
        opts.embed_dim,
        opts.seed,
    )?;

    let mut categories: Vec<String> = Vec::new();
    let mut subcategories: Vec<String> = Vec::new();
    let mut cat_idx: BTreeMap<String, u32> = BTreeMap::new();
    let mut subcat_idx: BTreeMap<String, u32> = BTreeMap::new();
    let mut articles = Vec::with_capacity(parsed.len());
    let mut article_index = BTreeMap::new();
    for p in &parsed {
        let category_id = *cat_idx.entry(p.category.clone()).or_insert_with(|| {
            categories.push(p.category.clone());
            (categories.len() - 1) as u32
        });
        let subcategory_id = *subcat_idx.entry(p.subcategory.clone()).or_insert_with(|| {
            subcategories.push(p.subcategory.clone());
            (subcategories.len() - 1) as u32
        });
        let title = vocab::index_tokens(&vocabulary, &p.title_tokens, opts.max_title_len);
        let abstract_ = vocab::index_tokens(&vocabulary, &p.abstract_tokens, opts.max_abstract_len);
        article_index.insert(p.news_id.clone(), articles.len() as u32);
        articles.push(NewsArticle {
            news_id: p.news_id.clone(),
            category: p.category.clone(),
            subcategory: p.subcategory.clone(),
            title,
            abstract_,
            raw_title: p.raw_title.clone(),
            category_id,
            subcategory_id,
        });
    }

    let raw_train = parse::parse_behaviors_tsv(&train.behaviors)?;
    let raw_test = parse::parse_behaviors_tsv(&test.behaviors)?;
    stats.behavior_rows = raw_train.len() + raw_test.len();

    // user index from training impressions only; unseen users map to 0
    let mut users: BTreeMap<String, u32> = BTreeMap::new();
    for imp in &raw_train {
        let next = users.len() as u32 + 1;
        users.entry(imp.user_id.clone()).or_insert(next);
    }

    let train_all = index_impressions(raw_train, &article_index, &users, &mut stats);
    let test_imps = index_impressions(raw_test, &article_index, &users, &mut stats);
    let (train_imps, valid_imps) = split::split_validation(
        train_all,
        opts.split_mode,
        opts.split_ratio,
        opts.seed,
    )?;

    let dataset = ProcessedDataset {
        articles,
        article_index,
        train: train_imps,
        valid: valid_imps,
        test: test_imps,
        vocab: vocabulary,
        embeddings,
        users,
        categories,
        subcategories,
        split: SplitDescriptor {
            mode: opts.split_mode.to_string(),
            ratio: opts.split_ratio,
            seed: opts.seed,
        },
    };
    Ok((dataset, stats))
}

/// Convenience for configs pointing at a MIND-style directory layout
/// (`<dir>/news.tsv`, `<dir>/behaviors.tsv`).
pub fn raw_paths(dir: &Path) -> RawPaths {
    RawPaths {
        news: dir.join("news.tsv"),
        behaviors: dir.join("behaviors.tsv"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_history_keeps_most_recent_and_prepends_padding() {
        let (ids, mask) = pad_history(&[5, 6, 7], 5);
        assert_eq!(ids, vec![0, 0, 5, 6, 7]);
        assert_eq!(mask, vec![false, false, true, true, true]);
        let (ids, mask) = pad_history(&[1, 2, 3, 4, 5, 6], 4);
        assert_eq!(ids, vec![3, 4, 5, 6]);
        assert!(mask.iter().all(|&m| m));
        let (ids, mask) = pad_history(&[], 3);
        assert_eq!(ids, vec![0, 0, 0]);
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn batches_chunk_with_partial_tail() {
        let batches = make_batches(33, 16, false, 0).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![16, 16, 1]);
        let flat: Vec<usize> = batches.into_iter().flatten().collect();
        assert_eq!(flat, (0..33).collect::<Vec<_>>());
    }

    #[test]
    fn batch_shuffle_is_seeded() {
        let a = make_batches(100, 8, true, 7).unwrap();
        let b = make_batches(100, 8, true, 7).unwrap();
        assert_eq!(a, b);
        let c = make_batches(100, 8, true, 8).unwrap();
        assert_ne!(a, c);
        let mut all: Vec<usize> = a.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn zero_batch_size_is_a_config_error() {
        assert!(matches!(
            make_batches(10, 0, false, 0),
            Err(Error::Config(_))
        ));
    }
}

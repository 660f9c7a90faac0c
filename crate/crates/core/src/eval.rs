//! Impression evaluation. The fast path caches every distinct news and
//! user vector so each encoder runs once per unique entity; the naive
//! path re-encodes everything per impression and exists as the
//! correctness reference the fast path must reproduce.

use crate::data::{cache as container, pad_history, Impression, ProcessedDataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_batch, MetricsReport};
use crate::seed;
use crate::tensor::{Scalar, Tensor};
use crate::zoo::Model;
use std::collections::BTreeMap;
use std::path::Path;

/// News and user vectors keyed by identity, valid only for the model
/// whose fingerprint they carry.
#[derive(Clone, Debug)]
pub struct VectorCache<S: Scalar> {
    pub fingerprint: u64,
    pub d_news: usize,
    news: BTreeMap<u32, Vec<S>>,
    users: BTreeMap<(u32, u64), Vec<S>>,
}

impl<S: Scalar> VectorCache<S> {
    pub fn new(model: &Model<S>) -> Self {
        VectorCache {
            fingerprint: model.fingerprint(),
            d_news: model.spec.d_news(),
            news: BTreeMap::new(),
            users: BTreeMap::new(),
        }
    }

    /// Key for a user vector: the effective (truncated) history.
    pub fn history_hash(history: &[u32], max_history_len: usize) -> u64 {
        let keep = history.len().min(max_history_len);
        let tail = &history[history.len() - keep..];
        let mut bytes = Vec::with_capacity(tail.len() * 4);
        for id in tail {
            bytes.extend_from_slice(&id.to_le_bytes());
        }
        seed::fnv1a(&bytes)
    }

    pub fn news_len(&self) -> usize {
        self.news.len()
    }

    pub fn users_len(&self) -> usize {
        self.users.len()
    }

    pub fn news_vec(&self, article: u32) -> Option<&[S]> {
        self.news.get(&article).map(|v| v.as_slice())
    }

    fn ensure_fresh(&self, model: &Model<S>) -> Result<()> {
        if self.fingerprint != model.fingerprint() {
            return Err(Error::StaleCache {
                path: "(in-memory vector cache)".into(),
                reason: format!(
                    "cache was built for model {:016x}, current model is {:016x}",
                    self.fingerprint,
                    model.fingerprint()
                ),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = container::ByteWriter::new();
        w.put_u64(self.d_news as u64);
        w.put_u32(self.news.len() as u32);
        for (id, vec) in &self.news {
            w.put_u32(*id);
            for &v in vec {
                w.put_f64(v.to_f64());
            }
        }
        w.put_u32(self.users.len() as u32);
        for ((user, hash), vec) in &self.users {
            w.put_u32(*user);
            w.put_u64(*hash);
            for &v in vec {
                w.put_f64(v.to_f64());
            }
        }
        container::write_container(
            path,
            container::VECTORS_MAGIC,
            self.fingerprint,
            &[],
            &w.into_bytes(),
        )
    }

    /// Loads a persisted cache; a container written for any other model
    /// fingerprint is rejected as stale.
    pub fn load(path: &Path, model: &Model<S>) -> Result<Self> {
        let body = container::read_container(
            path,
            container::VECTORS_MAGIC,
            model.fingerprint(),
            &[],
        )?;
        let mut r = container::ByteReader::new(&body);
        let d_news = r.get_u64()? as usize;
        let mut news = BTreeMap::new();
        for _ in 0..r.get_u32()? {
            let id = r.get_u32()?;
            let vec: Vec<S> = (0..d_news)
                .map(|_| r.get_f64().map(S::from_f64))
                .collect::<Result<_>>()?;
            news.insert(id, vec);
        }
        let mut users = BTreeMap::new();
        for _ in 0..r.get_u32()? {
            let user = r.get_u32()?;
            let hash = r.get_u64()?;
            let vec: Vec<S> = (0..d_news)
                .map(|_| r.get_f64().map(S::from_f64))
                .collect::<Result<_>>()?;
            users.insert((user, hash), vec);
        }
        Ok(VectorCache {
            fingerprint: model.fingerprint(),
            d_news,
            news,
            users,
        })
    }
}

/// Unique article indices an impression set touches, as candidates or
/// as history entries (the user encoder consumes history news vectors).
pub fn referenced_articles(imps: &[Impression], max_history_len: usize) -> Vec<u32> {
    let mut set = std::collections::BTreeSet::new();
    for imp in imps {
        let keep = imp.history.len().min(max_history_len);
        for &a in &imp.history[imp.history.len() - keep..] {
            set.insert(a);
        }
        for &(a, _) in &imp.candidates {
            set.insert(a);
        }
    }
    set.into_iter().collect()
}

/// Encodes every referenced article that is not already cached, each
/// exactly once. Returns the number of fresh encodings.
pub fn precompute_news<S: Scalar>(
    model: &Model<S>,
    ds: &ProcessedDataset,
    imps: &[Impression],
    cache: &mut VectorCache<S>,
) -> Result<usize> {
    cache.ensure_fresh(model)?;
    let mut fresh = 0;
    for article in referenced_articles(imps, model.spec.max_history_len) {
        if cache.news.contains_key(&article) {
            continue;
        }
        let vec = model.encode_news(&ds.article(article).tokens())?;
        cache.news.insert(article, vec.into_data());
        fresh += 1;
    }
    Ok(fresh)
}

fn history_tensor<S: Scalar>(
    cache: &VectorCache<S>,
    history: &[u32],
    h: usize,
) -> Result<(Tensor<S>, Vec<bool>)> {
    let (ids, mask) = pad_history(history, h);
    let d = cache.d_news;
    let mut data = vec![S::zero(); h * d];
    for (i, (&id, &m)) in ids.iter().zip(mask.iter()).enumerate() {
        if m {
            let vec = cache.news.get(&id).ok_or_else(|| {
                Error::Data(format!("article {id} missing from the news vector cache"))
            })?;
            data[i * d..(i + 1) * d].copy_from_slice(vec);
        }
    }
    Ok((Tensor::new(vec![h, d], data)?, mask))
}

/// Encodes every (user, history) pair not already cached. News vectors
/// for the histories must be present.
pub fn precompute_users<S: Scalar>(
    model: &Model<S>,
    imps: &[Impression],
    cache: &mut VectorCache<S>,
) -> Result<usize> {
    cache.ensure_fresh(model)?;
    let h = model.spec.max_history_len;
    let mut fresh = 0;
    for imp in imps {
        let key = (imp.user, VectorCache::<S>::history_hash(&imp.history, h));
        if cache.users.contains_key(&key) {
            continue;
        }
        let (hist, mask) = history_tensor(cache, &imp.history, h)?;
        let vec = model.encode_user(&hist, &mask, Some(imp.user))?;
        cache.users.insert(key, vec.into_data());
        fresh += 1;
    }
    Ok(fresh)
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc = acc + *x * *y;
    }
    acc.to_f64()
}

/// Candidate scores per impression, served from the vector cache.
pub fn score_impressions_fast<S: Scalar>(
    model: &Model<S>,
    ds: &ProcessedDataset,
    imps: &[Impression],
    cache: &mut VectorCache<S>,
) -> Result<Vec<Vec<f64>>> {
    precompute_news(model, ds, imps, cache)?;
    precompute_users(model, imps, cache)?;
    let h = model.spec.max_history_len;
    let mut out = Vec::with_capacity(imps.len());
    for imp in imps {
        let key = (imp.user, VectorCache::<S>::history_hash(&imp.history, h));
        let user = cache.users.get(&key).expect("precomputed above");
        let scores = imp
            .candidates
            .iter()
            .map(|(a, _)| dot(cache.news.get(a).expect("precomputed above"), user))
            .collect();
        out.push(scores);
    }
    Ok(out)
}

/// Candidate scores per impression with no caching at all: every news
/// and user vector is recomputed on the spot.
pub fn score_impressions_naive<S: Scalar>(
    model: &Model<S>,
    ds: &ProcessedDataset,
    imps: &[Impression],
) -> Result<Vec<Vec<f64>>> {
    let h = model.spec.max_history_len;
    let d = model.spec.d_news();
    let mut out = Vec::with_capacity(imps.len());
    for imp in imps {
        let (ids, mask) = pad_history(&imp.history, h);
        let mut data = vec![S::zero(); h * d];
        for (i, (&id, &m)) in ids.iter().zip(mask.iter()).enumerate() {
            if m {
                let vec = model.encode_news(&ds.article(id).tokens())?;
                data[i * d..(i + 1) * d].copy_from_slice(vec.data());
            }
        }
        let hist = Tensor::new(vec![h, d], data)?;
        let user = model.encode_user(&hist, &mask, Some(imp.user))?;
        let mut scores = Vec::with_capacity(imp.candidates.len());
        for (a, _) in &imp.candidates {
            let news = model.encode_news(&ds.article(*a).tokens())?;
            scores.push(dot(news.data(), user.data()));
        }
        out.push(scores);
    }
    Ok(out)
}

/// Pads per-impression scores/labels into the batch evaluator.
pub fn report_from_scores(scores: &[Vec<f64>], imps: &[Impression]) -> Result<MetricsReport> {
    if scores.len() != imps.len() {
        return Err(Error::Shape {
            op: "report_from_scores".into(),
            lhs: vec![scores.len()],
            rhs: vec![imps.len()],
        });
    }
    let max_len = scores.iter().map(|s| s.len()).max().unwrap_or(0);
    if max_len == 0 {
        return Err(Error::Degenerate {
            op: "evaluate".into(),
            msg: "no impressions to evaluate".into(),
        });
    }
    let mut flat_scores = vec![0.0f64; scores.len() * max_len];
    let mut flat_labels = vec![0u8; scores.len() * max_len];
    let mut lengths = Vec::with_capacity(scores.len());
    for (i, (s, imp)) in scores.iter().zip(imps.iter()).enumerate() {
        flat_scores[i * max_len..i * max_len + s.len()].copy_from_slice(s);
        for (j, (_, l)) in imp.candidates.iter().enumerate() {
            flat_labels[i * max_len + j] = *l;
        }
        lengths.push(s.len());
    }
    evaluate_batch(&flat_scores, &flat_labels, &lengths, max_len)
}

/// Cached evaluation: every unique news article and (user, history)
/// pair is encoded at most once per model fingerprint.
pub fn fast_evaluate<S: Scalar>(
    model: &Model<S>,
    ds: &ProcessedDataset,
    imps: &[Impression],
    cache: &mut VectorCache<S>,
) -> Result<MetricsReport> {
    let scores = score_impressions_fast(model, ds, imps, cache)?;
    report_from_scores(&scores, imps)
}

/// Reference evaluation without any caching.
pub fn evaluate_naive<S: Scalar>(
    model: &Model<S>,
    ds: &ProcessedDataset,
    imps: &[Impression],
) -> Result<MetricsReport> {
    let scores = score_impressions_naive(model, ds, imps)?;
    report_from_scores(&scores, imps)
}

//! Ranking metrics over scored impressions: AUC, MRR, nDCG@k, and the
//! padded batch evaluator that aggregates them.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: "metrics".into(),
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("metrics received a non-finite score".into()));
    }
    Ok(())
}

fn degenerate(msg: &str) -> Error {
    Error::Degenerate {
        op: "metrics".into(),
        msg: msg.into(),
    }
}

/// Ranked order: descending score, ties kept in original index order.
fn ranked_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    idx
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs where
/// the positive outscores the negative, ties counting one half.
/// Computed via the rank-sum identity with average ranks, which is
/// algebraically identical to the pairwise definition.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(degenerate(
            "AUC needs at least one positive and one negative",
        ));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tied groups, ranks are 1-based ascending
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Mean reciprocal rank over all positives, ranking by descending score
/// with ties resolved toward the earlier original index.
pub fn mrr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(degenerate("MRR needs at least one positive"));
    }
    let mut total = 0.0f64;
    for (pos, &orig) in ranked_indices(scores).iter().enumerate() {
        if labels[orig] == 1 {
            total += 1.0 / (pos as f64 + 1.0);
        }
    }
    Ok(total / n_pos as f64)
}

/// nDCG@k with binary relevance: DCG sums rel/log2(rank+1) over the top
/// k ranked items and is normalized by the ideal ordering's DCG.
pub fn ndcg_at_k(scores: &[f64], labels: &[u8], k: usize) -> Result<f64> {
    check_lengths(scores, labels)?;
    if k == 0 {
        return Err(Error::Config("nDCG cutoff must be at least 1".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(degenerate("nDCG needs at least one positive"));
    }
    let dcg: f64 = ranked_indices(scores)
        .iter()
        .take(k)
        .enumerate()
        .map(|(pos, &orig)| labels[orig] as f64 / ((pos + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..n_pos.min(k))
        .map(|pos| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    Ok(dcg / idcg)
}

/// Flat metrics report. The headline numbers follow the usual ×100
/// convention; the `_raw` twins stay in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub auc_raw: f64,
    pub mrr_raw: f64,
    pub ndcg_at_5_raw: f64,
    pub ndcg_at_10_raw: f64,
    pub n_evaluated: usize,
    pub n_skipped: usize,
}

impl MetricsReport {
    fn from_means(auc: f64, mrr: f64, n5: f64, n10: f64, evaluated: usize, skipped: usize) -> Self {
        MetricsReport {
            auc: auc * 100.0,
            mrr: mrr * 100.0,
            ndcg_at_5: n5 * 100.0,
            ndcg_at_10: n10 * 100.0,
            auc_raw: auc,
            mrr_raw: mrr,
            ndcg_at_5_raw: n5,
            ndcg_at_10_raw: n10,
            n_evaluated: evaluated,
            n_skipped: skipped,
        }
    }
}

/// Evaluates a padded score matrix (`n × max_len`, row-major, row `i`
/// valid through `lengths[i]`). Rows lacking a positive or a negative
/// among their valid entries are skipped and counted; metrics are
/// unweighted means over the surviving rows, accumulated in f64. Padding
/// cells are never read.
pub fn evaluate_batch(
    scores: &[f64],
    labels: &[u8],
    lengths: &[usize],
    max_len: usize,
) -> Result<MetricsReport> {
    let n = lengths.len();
    if scores.len() != n * max_len || labels.len() != n * max_len {
        return Err(Error::Shape {
            op: "evaluate_batch".into(),
            lhs: vec![scores.len(), labels.len()],
            rhs: vec![n * max_len],
        });
    }
    let mut sums = [0.0f64; 4];
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for (i, &len) in lengths.iter().enumerate() {
        if len > max_len {
            return Err(Error::Shape {
                op: "evaluate_batch".into(),
                lhs: vec![len],
                rhs: vec![max_len],
            });
        }
        let s = &scores[i * max_len..i * max_len + len];
        let l = &labels[i * max_len..i * max_len + len];
        let n_pos = l.iter().filter(|&&x| x == 1).count();
        if n_pos == 0 || n_pos == len {
            skipped += 1;
            continue;
        }
        sums[0] += auc(s, l)?;
        sums[1] += mrr(s, l)?;
        sums[2] += ndcg_at_k(s, l, 5)?;
        sums[3] += ndcg_at_k(s, l, 10)?;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(degenerate(
            "every impression was skipped; nothing to report",
        ));
    }
    let m = evaluated as f64;
    Ok(MetricsReport::from_means(
        sums[0] / m,
        sums[1] / m,
        sums[2] / m,
        sums[3] / m,
        evaluated,
        skipped,
    ))
}

//! Post-hoc analysis: exposure/click statistics per article, the
//! head/tail population split, subcategory distribution comparisons, and
//! deterministic CSV/JSON/SVG emitters.

pub mod svg;

use crate::data::{Impression, NewsArticle};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArticleStats {
    pub news_id: String,
    pub total_impressions: u64,
    pub total_clicks: u64,
    pub ctr: f64,
}

/// Exposure and click counts per article, over candidate occurrences
/// only: history entries do not count, and articles never shown as a
/// candidate do not appear at all. Sorted by news_id.
pub fn article_stats(
    articles: &[NewsArticle],
    impressions: &[Impression],
) -> Result<Vec<ArticleStats>> {
    let mut shown: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for imp in impressions {
        for &(a, label) in &imp.candidates {
            if a as usize >= articles.len() {
                return Err(Error::Data(format!(
                    "impression {} references article index {a} outside the dataset",
                    imp.impression_id
                )));
            }
            let e = shown.entry(a).or_insert((0, 0));
            e.0 += 1;
            e.1 += u64::from(label);
        }
    }
    let mut out: Vec<ArticleStats> = shown
        .into_iter()
        .map(|(a, (imps, clicks))| ArticleStats {
            news_id: articles[a as usize].news_id.clone(),
            total_impressions: imps,
            total_clicks: clicks,
            ctr: clicks as f64 / imps as f64,
        })
        .collect();
    out.sort_by(|a, b| a.news_id.cmp(&b.news_id));
    Ok(out)
}

/// Splits articles into the most-clicked head (the top ⌈5%⌉ by click
/// count, ties broken by news_id ascending) and the remaining tail.
/// Needs at least 20 articles so the head is non-empty and meaningful.
pub fn split_populations(stats: &[ArticleStats]) -> Result<(Vec<ArticleStats>, Vec<ArticleStats>)> {
    if stats.len() < 20 {
        return Err(Error::Data(format!(
            "population split needs at least 20 articles, got {}",
            stats.len()
        )));
    }
    let mut ranked: Vec<&ArticleStats> = stats.iter().collect();
    ranked.sort_by(|a, b| {
        b.total_clicks
            .cmp(&a.total_clicks)
            .then_with(|| a.news_id.cmp(&b.news_id))
    });
    let head_size = (stats.len() as f64 * 0.05).ceil() as usize;
    let head = ranked[..head_size].iter().map(|s| (*s).clone()).collect();
    let tail = ranked[head_size..].iter().map(|s| (*s).clone()).collect();
    Ok((head, tail))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub subcategory: String,
    pub ground_truth: u64,
    pub recommended: u64,
}

/// Tallies clicked articles and recommended articles by subcategory.
/// Rows cover every subcategory touched by either side, sorted by name.
/// Any article index outside the dataset fails, listing the offenders.
pub fn compare_distributions(
    articles: &[NewsArticle],
    clicked: &[u32],
    recommended: &[u32],
) -> Result<Vec<DistributionRow>> {
    let unknown: Vec<u32> = clicked
        .iter()
        .chain(recommended.iter())
        .copied()
        .filter(|&a| a as usize >= articles.len())
        .collect();
    if !unknown.is_empty() {
        let mut ids: Vec<String> = unknown.iter().map(|a| a.to_string()).collect();
        ids.sort();
        ids.dedup();
        return Err(Error::Data(format!(
            "unknown article indices: {}",
            ids.join(", ")
        )));
    }
    let mut rows: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for &a in clicked {
        rows.entry(&articles[a as usize].subcategory).or_insert((0, 0)).0 += 1;
    }
    for &a in recommended {
        rows.entry(&articles[a as usize].subcategory).or_insert((0, 0)).1 += 1;
    }
    Ok(rows
        .into_iter()
        .map(|(sub, (g, r))| DistributionRow {
            subcategory: sub.to_string(),
            ground_truth: g,
            recommended: r,
        })
        .collect())
}

/// All clicked article indices across impressions, with multiplicity.
pub fn clicked_articles(impressions: &[Impression]) -> Vec<u32> {
    impressions
        .iter()
        .flat_map(|imp| {
            imp.candidates
                .iter()
                .filter(|(_, l)| *l == 1)
                .map(|(a, _)| *a)
        })
        .collect()
}

/// Top-n candidates per impression by score (ties toward the earlier
/// candidate), concatenated across impressions with multiplicity.
pub fn top_recommendations(
    scores: &[Vec<f64>],
    impressions: &[Impression],
    n: usize,
) -> Result<Vec<u32>> {
    if scores.len() != impressions.len() {
        return Err(Error::Shape {
            op: "top_recommendations",
            lhs: vec![scores.len()],
            rhs: vec![impressions.len()],
        });
    }
    let mut out = Vec::new();
    for (s, imp) in scores.iter().zip(impressions.iter()) {
        if s.len() != imp.candidates.len() {
            return Err(Error::Shape {
                op: "top_recommendations",
                lhs: vec![s.len()],
                rhs: vec![imp.candidates.len()],
            });
        }
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
        out.extend(idx.iter().take(n).map(|&i| imp.candidates[i].0));
    }
    Ok(out)
}

/// `news_id,total_impressions,total_clicks,ctr` rows.
pub fn article_stats_csv(stats: &[ArticleStats]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in stats {
        w.serialize(s)
            .map_err(|e| Error::Data(format!("cannot write stats row: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("cannot finish stats csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `subcategory,ground_truth,recommended` rows.
pub fn distribution_csv(rows: &[DistributionRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Data(format!("cannot write distribution row: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("cannot finish distribution csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

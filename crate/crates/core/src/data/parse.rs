//! Line-oriented readers for the MIND TSV formats. Columns are split on
//! raw tabs (the files are not quoted CSV) and every malformed row is
//! reported with its 1-based line number.

use crate::data::vocab::tokenize;
use crate::error::{Error, Result};
use chrono::NaiveDateTime;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// Article as parsed, before vocabulary indexing.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedNews {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub title_tokens: Vec<String>,
    pub abstract_tokens: Vec<String>,
    pub raw_title: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NewsParseStats {
    pub rows: usize,
    pub rejected_empty_title: usize,
    pub duplicate_ids: usize,
}

/// Impression as parsed: string ids, epoch-second timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImpression {
    pub impression_id: String,
    pub user_id: String,
    pub timestamp: i64,
    pub history: Vec<String>,
    pub candidates: Vec<(String, u8)>,
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn read_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>> {
    let file = File::open(path).map_err(|e| {
        Error::Data(format!("cannot open {}: {e}", path.display()))
    })?;
    Ok(BufReader::new(file).lines())
}

/// Reads `news.tsv`: news_id, category, subcategory, title, abstract,
/// url, title_entities, abstract_entities. Articles whose title contains
/// no tokens are rejected and counted; a repeated news_id keeps the last
/// occurrence and increments the duplicate counter.
pub fn parse_news_tsv(path: &Path) -> Result<(Vec<ParsedNews>, NewsParseStats)> {
    let mut stats = NewsParseStats::default();
    let mut order: Vec<ParsedNews> = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in read_lines(path)?.enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| parse_err(path, line_no, format!("read failed: {e}")))?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 8 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 8 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].is_empty() {
            return Err(parse_err(path, line_no, "empty news_id"));
        }
        stats.rows += 1;
        let title_tokens = tokenize(cols[3]);
        if title_tokens.is_empty() {
            stats.rejected_empty_title += 1;
            continue;
        }
        let article = ParsedNews {
            news_id: cols[0].to_string(),
            category: cols[1].to_string(),
            subcategory: cols[2].to_string(),
            title_tokens,
            abstract_tokens: tokenize(cols[4]),
            raw_title: cols[3].to_string(),
        };
        match by_id.get(&article.news_id) {
            Some(&at) => {
                stats.duplicate_ids += 1;
                log::warn!(
                    "{}:{line_no}: duplicate news_id {}, keeping the later row",
                    path.display(),
                    article.news_id
                );
                order[at] = article;
            }
            None => {
                by_id.insert(article.news_id.clone(), order.len());
                order.push(article);
            }
        }
    }
    Ok((order, stats))
}

/// Converts a MIND timestamp (`M/D/YYYY h:mm:ss AM/PM`) to epoch seconds.
pub fn parse_timestamp(s: &str) -> std::result::Result<i64, String> {
    NaiveDateTime::parse_from_str(s, "%m/%d/%Y %I:%M:%S %p")
        .map(|dt| dt.and_utc().timestamp())
        .map_err(|e| format!("bad timestamp {s:?}: {e}"))
}

/// Reads `behaviors.tsv`: impression_id, user_id, time, space-separated
/// click history, space-separated candidates with `-0`/`-1` suffixes.
pub fn parse_behaviors_tsv(path: &Path) -> Result<Vec<RawImpression>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| parse_err(path, line_no, format!("read failed: {e}")))?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 5 tab-separated columns, found {}", cols.len()),
            ));
        }
        let timestamp =
            parse_timestamp(cols[2]).map_err(|msg| parse_err(path, line_no, msg))?;
        let history: Vec<String> = cols[3]
            .split_whitespace()
            .map(|s| s.to_string())
            .collect();
        let mut candidates = Vec::new();
        for item in cols[4].split_whitespace() {
            let (id, label) = item.rsplit_once('-').ok_or_else(|| {
                parse_err(path, line_no, format!("candidate {item:?} lacks a -0/-1 label"))
            })?;
            let label = match label {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("candidate {item:?} has label {other:?}, expected 0 or 1"),
                    ))
                }
            };
            if id.is_empty() {
                return Err(parse_err(path, line_no, format!("candidate {item:?} lacks an id")));
            }
            candidates.push((id.to_string(), label));
        }
        out.push(RawImpression {
            impression_id: cols[0].to_string(),
            user_id: cols[1].to_string(),
            timestamp,
            history,
            candidates,
        });
    }
    Ok(out)
}

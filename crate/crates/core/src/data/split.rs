//! Train/validation partitioning of impressions.

use crate::data::Impression;
use crate::error::{Error, Result};
use crate::seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    Chronological,
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitMode::Random => write!(f, "random"),
            SplitMode::Chronological => write!(f, "chronological"),
        }
    }
}

impl std::str::FromStr for SplitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SplitMode::Random),
            "chronological" => Ok(SplitMode::Chronological),
            other => Err(Error::Config(format!(
                "unknown split mode {other:?}; expected \"random\" or \"chronological\""
            ))),
        }
    }
}

/// Partitions impressions into train/validation. The train side receives
/// ⌈ratio·n⌉ impressions; random mode shuffles with a seeded generator
/// first, chronological mode sorts by timestamp (stable for ties) so
/// every training impression precedes every validation impression.
pub fn split_validation(
    mut impressions: Vec<Impression>,
    mode: SplitMode,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<Impression>, Vec<Impression>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must be strictly between 0 and 1, got {ratio}"
        )));
    }
    if impressions.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 impressions to split, got {}",
            impressions.len()
        )));
    }
    match mode {
        SplitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "split", 0));
            impressions.shuffle(&mut rng);
        }
        SplitMode::Chronological => {
            impressions.sort_by_key(|imp| imp.timestamp);
        }
    }
    let n_train = (ratio * impressions.len() as f64).ceil() as usize;
    let n_train = n_train.min(impressions.len() - 1).max(1);
    let valid = impressions.split_off(n_train);
    Ok((impressions, valid))
}

//! Negative sampling: impressions become fixed-size training slates.

use crate::data::{Impression, TrainingSample};
use crate::error::{Error, Result};
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    /// Positive first, then the k negatives.
    Unshuffled,
    /// Slate order randomized after assembly.
    Shuffled,
}

impl std::str::FromStr for SamplingStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unshuffled" => Ok(SamplingStrategy::Unshuffled),
            "shuffled" => Ok(SamplingStrategy::Shuffled),
            other => Err(Error::Config(format!(
                "unknown sampling strategy {other:?}; expected \"shuffled\" or \"unshuffled\""
            ))),
        }
    }
}

/// Builds one slate per clicked candidate: the positive plus k negatives
/// drawn without replacement from the impression's non-clicked
/// candidates, falling back to draws with replacement when fewer than k
/// exist. An impression with no negatives yields no samples.
pub fn sample_negatives(
    imp: &Impression,
    k: usize,
    strategy: SamplingStrategy,
    seed: u64,
) -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives: Vec<u32> = imp
        .candidates
        .iter()
        .filter(|(_, l)| *l == 1)
        .map(|(a, _)| *a)
        .collect();
    let negatives: Vec<u32> = imp
        .candidates
        .iter()
        .filter(|(_, l)| *l == 0)
        .map(|(a, _)| *a)
        .collect();
    if positives.is_empty() || negatives.is_empty() || k == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(positives.len());
    for &pos in &positives {
        let mut negs: Vec<u32>;
        if negatives.len() >= k {
            let mut pool = negatives.clone();
            pool.shuffle(&mut rng);
            pool.truncate(k);
            negs = pool;
        } else {
            negs = negatives.clone();
            negs.shuffle(&mut rng);
            while negs.len() < k {
                negs.push(negatives[rng.gen_range(0..negatives.len())]);
            }
        }
        let mut slate = Vec::with_capacity(k + 1);
        slate.push(pos);
        slate.extend_from_slice(&negs);
        let mut label = 0usize;
        if strategy == SamplingStrategy::Shuffled {
            // Fisher-Yates over the slate, tracking where the positive lands
            for i in (1..slate.len()).rev() {
                let j = rng.gen_range(0..=i);
                slate.swap(i, j);
                if label == i {
                    label = j;
                } else if label == j {
                    label = i;
                }
            }
        }
        out.push(TrainingSample {
            user: imp.user,
            history: imp.history.clone(),
            slate,
            label,
        });
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SamplingStats {
    pub samples: usize,
    pub skipped_impressions: usize,
}

/// One epoch's worth of slates: every impression is resampled with a
/// stream derived from (seed, epoch, impression position), so epochs see
/// different negatives but reruns are identical.
pub fn samples_for_epoch(
    impressions: &[Impression],
    k: usize,
    strategy: SamplingStrategy,
    seed: u64,
    epoch: usize,
) -> (Vec<TrainingSample>, SamplingStats) {
    let epoch_seed = seed::derive(seed, "negatives", epoch as u64);
    let mut stats = SamplingStats::default();
    let mut out = Vec::new();
    for (i, imp) in impressions.iter().enumerate() {
        let samples = sample_negatives(imp, k, strategy, seed::derive(epoch_seed, "impression", i as u64));
        if samples.is_empty() {
            stats.skipped_impressions += 1;
        }
        out.extend(samples);
    }
    stats.samples = out.len();
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imp(candidates: Vec<(u32, u8)>) -> Impression {
        Impression {
            impression_id: "1".into(),
            user: 3,
            timestamp: 0,
            history: vec![10, 11],
            candidates,
        }
    }

    #[test]
    fn one_slate_per_positive_without_replacement() {
        let im = imp(vec![(0, 1), (1, 0), (2, 0), (3, 0), (4, 0), (5, 1), (6, 0)]);
        let samples = sample_negatives(&im, 4, SamplingStrategy::Unshuffled, 9);
        assert_eq!(samples.len(), 2);
        for s in &samples {
            assert_eq!(s.slate.len(), 5);
            assert_eq!(s.label, 0);
            assert_eq!(s.user, 3);
            assert_eq!(s.history, vec![10, 11]);
            let mut negs = s.slate[1..].to_vec();
            negs.sort_unstable();
            negs.dedup();
            assert_eq!(negs.len(), 4, "negatives must be distinct");
            assert!(negs.iter().all(|n| [1, 2, 3, 4, 6].contains(n)));
        }
        assert_eq!(samples[0].slate[0], 0);
        assert_eq!(samples[1].slate[0], 5);
    }

    #[test]
    fn scarce_negatives_fill_with_replacement() {
        let im = imp(vec![(7, 1), (8, 0), (9, 0)]);
        let samples = sample_negatives(&im, 4, SamplingStrategy::Unshuffled, 1);
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!(s.slate.len(), 5);
        assert_eq!(s.slate[0], 7);
        assert!(s.slate[1..].iter().all(|n| *n == 8 || *n == 9));
        // both available negatives appear, the rest are repeats
        assert!(s.slate[1..].contains(&8));
        assert!(s.slate[1..].contains(&9));
    }

    #[test]
    fn shuffled_strategy_tracks_the_positive() {
        let im = imp(vec![(0, 1), (1, 0), (2, 0), (3, 0), (4, 0)]);
        for seed in 0..50 {
            let samples = sample_negatives(&im, 4, SamplingStrategy::Shuffled, seed);
            let s = &samples[0];
            assert_eq!(s.slate[s.label], 0, "label must point at the positive");
        }
    }

    #[test]
    fn unshuffled_always_places_the_positive_first() {
        let im = imp(vec![(9, 0), (4, 1), (7, 0), (8, 0), (1, 0), (2, 0)]);
        for seed in 0..20 {
            for s in sample_negatives(&im, 4, SamplingStrategy::Unshuffled, seed) {
                assert_eq!(s.label, 0);
                assert_eq!(s.slate[0], 4);
            }
        }
    }

    #[test]
    fn impressions_without_negatives_or_positives_are_skipped() {
        let no_neg = imp(vec![(0, 1), (1, 1)]);
        assert!(sample_negatives(&no_neg, 4, SamplingStrategy::Shuffled, 0).is_empty());
        let no_pos = imp(vec![(0, 0), (1, 0)]);
        assert!(sample_negatives(&no_pos, 4, SamplingStrategy::Shuffled, 0).is_empty());

        let imps = vec![no_neg, imp(vec![(0, 1), (1, 0)])];
        let (samples, stats) =
            samples_for_epoch(&imps, 4, SamplingStrategy::Shuffled, 0, 0);
        assert_eq!(stats.skipped_impressions, 1);
        assert_eq!(stats.samples, samples.len());
        assert_eq!(samples.len(), 1);
    }

    #[test]
    fn epochs_draw_different_negatives_but_reruns_match() {
        let imps = vec![imp(vec![
            (0, 1),
            (1, 0),
            (2, 0),
            (3, 0),
            (4, 0),
            (5, 0),
            (6, 0),
            (7, 0),
        ])];
        let (e0, _) = samples_for_epoch(&imps, 4, SamplingStrategy::Shuffled, 5, 0);
        let (e0b, _) = samples_for_epoch(&imps, 4, SamplingStrategy::Shuffled, 5, 0);
        let (e1, _) = samples_for_epoch(&imps, 4, SamplingStrategy::Shuffled, 5, 1);
        assert_eq!(e0, e0b);
        assert_ne!(e0, e1);
    }

    #[test]
    fn same_seed_reproduces_slates_exactly() {
        let im = imp(vec![(0, 1), (1, 0), (2, 0), (3, 0), (4, 0), (5, 0)]);
        let a = sample_negatives(&im, 3, SamplingStrategy::Shuffled, 11);
        let b = sample_negatives(&im, 3, SamplingStrategy::Shuffled, 11);
        assert_eq!(a, b);
    }
}

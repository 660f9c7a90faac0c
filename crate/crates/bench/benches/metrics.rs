//! Vectorized ranking metrics against the per-row scalar oracle on a
//! 10,000-impression ragged batch.

use criterion::{criterion_group, criterion_main, Criterion};
use newsrec_core::metrics::{auc, evaluate_batch, mrr, ndcg_at_k};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Ragged {
    scores: Vec<f64>,
    labels: Vec<u8>,
    lengths: Vec<usize>,
    max_len: usize,
    rows: Vec<(Vec<f64>, Vec<u8>)>,
}

fn make(n_rows: usize, seed: u64) -> Ragged {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_len = 50;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut lengths = Vec::new();
    let mut rows = Vec::new();
    for _ in 0..n_rows {
        let len = rng.gen_range(2..=max_len);
        let mut s = Vec::with_capacity(len);
        let mut l = Vec::with_capacity(len);
        for i in 0..len {
            s.push(rng.gen::<f64>() * 4.0 - 2.0);
            // guarantee one positive and one negative per row
            l.push(if i == 0 {
                1
            } else if i == 1 {
                0
            } else {
                u8::from(rng.gen_bool(0.2))
            });
        }
        lengths.push(len);
        scores.extend_from_slice(&s);
        labels.extend_from_slice(&l);
        scores.resize(scores.len() + max_len - len, 0.0);
        labels.resize(labels.len() + max_len - len, 0);
        rows.push((s, l));
    }
    Ragged {
        scores,
        labels,
        lengths,
        max_len,
        rows,
    }
}

fn scalar_means(rows: &[(Vec<f64>, Vec<u8>)]) -> (f64, f64, f64, f64) {
    let (mut a, mut m, mut n5, mut n10) = (0.0, 0.0, 0.0, 0.0);
    for (s, l) in rows {
        a += auc(s, l).unwrap();
        m += mrr(s, l).unwrap();
        n5 += ndcg_at_k(s, l, 5).unwrap();
        n10 += ndcg_at_k(s, l, 10).unwrap();
    }
    let n = rows.len() as f64;
    (a / n, m / n, n5 / n, n10 / n)
}

fn bench_metrics(c: &mut Criterion) {
    let data = make(10_000, 7);
    let mut group = c.benchmark_group("ranking_metrics_10k_ragged");
    group.sample_size(20);
    group.bench_function("vectorized_batch", |b| {
        b.iter(|| evaluate_batch(&data.scores, &data.labels, &data.lengths, data.max_len).unwrap())
    });
    group.bench_function("scalar_oracle_loop", |b| b.iter(|| scalar_means(&data.rows)));
    group.finish();
}

criterion_group!(benches, bench_metrics);
criterion_main!(benches);

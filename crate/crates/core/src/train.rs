//! Slate-loss training: Adam with global-norm clipping, per-epoch
//! negative resampling, validation-driven checkpointing, and early stop.

use crate::data::cache as container;
use crate::data::sampling::{samples_for_epoch, SamplingStrategy};
use crate::data::{make_batches, pad_history, ProcessedDataset, TrainingSample};
use crate::error::{Error, Result};
use crate::eval::{fast_evaluate, VectorCache};
use crate::metrics::MetricsReport;
use crate::seed;
use crate::tensor::{Scalar, Tensor};
use crate::zoo::encoders::{
    encode_news, encode_news_backward, encode_user, encode_user_backward, DropoutCtx,
};
use crate::zoo::{Model, ModelSpec, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Upper bound on epochs.
    pub epochs: usize,
    /// Early stop is not considered before this many epochs have run.
    pub min_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Negatives per positive (slate size is this plus one).
    pub negatives: usize,
    pub strategy: SamplingStrategy,
    /// Epochs without validation-AUC improvement before stopping.
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            min_epochs: 5,
            batch_size: 16,
            lr: 1e-4,
            negatives: 4,
            strategy: SamplingStrategy::Unshuffled,
            patience: 2,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

/// Cross-entropy over the softmax of one slate's scores. Returns the
/// loss and its gradient with respect to the scores
/// (softmax minus the one-hot label).
pub fn slate_loss<S: Scalar>(scores: &[S], label: usize) -> Result<(f64, Vec<S>)> {
    if label >= scores.len() {
        return Err(Error::Shape {
            op: "slate_loss".into(),
            lhs: vec![label],
            rhs: vec![scores.len()],
        });
    }
    let s: Vec<f64> = scores.iter().map(|&v| v.to_f64()).collect();
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("slate scores are not finite".into()));
    }
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = -(exps[label] / z).ln();
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| S::from_f64(e / z - f64::from(u8::from(i == label))))
        .collect();
    Ok((loss, grad))
}

/// Adam moment estimates, one pair per parameter.
pub struct AdamState<S: Scalar> {
    m: BTreeMap<String, Tensor<S>>,
    v: BTreeMap<String, Tensor<S>>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, p) in params.iter() {
            m.insert(name.clone(), Tensor::zeros(p.value.shape()));
            v.insert(name.clone(), Tensor::zeros(p.value.shape()));
        }
        AdamState { m, v, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<S: Scalar>(params: &mut ParamStore<S>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for (_, p) in params.iter() {
        for &g in p.grad.data() {
            let g = g.to_f64();
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = S::from_f64(max_norm / norm);
        for (_, p) in params.iter_mut() {
            for g in p.grad.data_mut() {
                *g = *g * scale;
            }
        }
    }
    norm
}

/// One bias-corrected Adam update over every parameter. A non-finite
/// gradient aborts, naming the parameter that produced it.
pub fn adam_step<S: Scalar>(
    params: &mut ParamStore<S>,
    state: &mut AdamState<S>,
    lr: f64,
) -> Result<()> {
    for (name, p) in params.iter() {
        if p.grad.data().iter().any(|&g| !g.to_f64().is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient for parameter {name:?} is not finite; aborting the update"
            )));
        }
    }
    state.t += 1;
    let t = state.t;
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    for (name, p) in params.iter_mut() {
        let m = state.m.get_mut(name).expect("state covers all params");
        let v = state.v.get_mut(name).expect("state covers all params");
        let value = p.value.data_mut();
        let grad = p.grad.data();
        let m = m.data_mut();
        let v = v.data_mut();
        for i in 0..value.len() {
            let g = grad[i].to_f64();
            let mi = BETA1 * m[i].to_f64() + (1.0 - BETA1) * g;
            let vi = BETA2 * v[i].to_f64() + (1.0 - BETA2) * g * g;
            m[i] = S::from_f64(mi);
            v[i] = S::from_f64(vi);
            let step = lr * (mi / bc1) / ((vi / bc2).sqrt() + EPS);
            value[i] = S::from_f64(value[i].to_f64() - step);
        }
    }
    Ok(())
}

/// Forward/backward for one sample; gradients accumulate into the store.
fn sample_backward<S: Scalar>(
    model: &mut Model<S>,
    ds: &ProcessedDataset,
    sample: &TrainingSample,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let spec = model.spec.clone();
    let h = spec.max_history_len;
    let d = spec.d_news();
    let rate = spec.dropout;

    // history articles through the news encoder
    let (ids, mask) = pad_history(&sample.history, h);
    let mut hist_data = vec![S::zero(); h * d];
    let mut hist_caches = Vec::with_capacity(h);
    for (i, (&id, &m)) in ids.iter().zip(mask.iter()).enumerate() {
        if m {
            let (vec, cache) = encode_news(
                &spec,
                &model.params,
                &ds.article(id).tokens(),
                &mut Some(DropoutCtx { rate, rng }),
            )?;
            hist_data[i * d..(i + 1) * d].copy_from_slice(vec.data());
            hist_caches.push(Some(cache));
        } else {
            hist_caches.push(None);
        }
    }
    let hist = Tensor::new(vec![h, d], hist_data)?;
    let (user, user_cache) = encode_user(
        &spec,
        &model.params,
        &hist,
        &mask,
        Some(sample.user),
        &mut Some(DropoutCtx { rate, rng }),
    )?;

    // candidate slate
    let mut cand_vecs = Vec::with_capacity(sample.slate.len());
    let mut cand_caches = Vec::with_capacity(sample.slate.len());
    for &a in &sample.slate {
        let (vec, cache) = encode_news(
            &spec,
            &model.params,
            &ds.article(a).tokens(),
            &mut Some(DropoutCtx { rate, rng }),
        )?;
        cand_vecs.push(vec);
        cand_caches.push(cache);
    }
    let scores: Vec<S> = cand_vecs
        .iter()
        .map(|c| {
            let mut acc = S::zero();
            for (x, y) in c.data().iter().zip(user.data().iter()) {
                acc = acc + *x * *y;
            }
            acc
        })
        .collect();
    let (loss, dscores) = slate_loss(&scores, sample.label)?;

    // backward: scores -> user and candidate vectors
    let mut duser = Tensor::zeros(&[d]);
    for (ds_i, c) in dscores.iter().zip(cand_vecs.iter()) {
        for (du, &cv) in duser.data_mut().iter_mut().zip(c.data().iter()) {
            *du = *du + *ds_i * cv;
        }
    }
    for (ds_i, cache) in dscores.iter().zip(cand_caches.iter()) {
        let dcand = user.map(|u| u * *ds_i);
        encode_news_backward(&spec, &mut model.params, cache, &dcand)?;
    }
    let dhist = encode_user_backward(&spec, &mut model.params, &user_cache, &duser)?;
    for (i, cache) in hist_caches.iter().enumerate() {
        if let Some(cache) = cache {
            let row = Tensor::new(vec![d], dhist.row(i).to_vec())?;
            encode_news_backward(&spec, &mut model.params, cache, &row)?;
        }
    }
    Ok(loss)
}

/// One optimizer step over a batch: zero grads, accumulate per-sample
/// gradients, average, clip, Adam. Returns the mean loss.
pub fn step_batch<S: Scalar>(
    model: &mut Model<S>,
    ds: &ProcessedDataset,
    samples: &[&TrainingSample],
    adam: &mut AdamState<S>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("cannot step over an empty batch".into()));
    }
    model.params.zero_grads();
    let mut total = 0.0f64;
    for s in samples {
        total += sample_backward(model, ds, s, rng)?;
    }
    let inv = S::from_f64(1.0 / samples.len() as f64);
    for (_, p) in model.params.iter_mut() {
        for g in p.grad.data_mut() {
            *g = *g * inv;
        }
    }
    clip_global_norm(&mut model.params, cfg.clip_norm);
    adam_step(&mut model.params, adam, cfg.lr)?;
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub n_samples: usize,
    pub skipped_impressions: usize,
    pub validation: MetricsReport,
    pub improved: bool,
    pub duration_s: f64,
}

pub struct TrainOutcome<S: Scalar> {
    pub model: Model<S>,
    pub best_epoch: usize,
    pub best_validation: MetricsReport,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Where training artifacts land: the best checkpoint and the per-epoch
/// JSON-lines log. Both optional.
#[derive(Clone, Debug, Default)]
pub struct TrainSinks {
    pub checkpoint: Option<std::path::PathBuf>,
    pub epoch_log: Option<std::path::PathBuf>,
    /// Fingerprint recorded in the checkpoint header.
    pub fingerprint: u64,
}

fn append_jsonl(path: &Path, record: &EpochRecord) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    serde_json::to_writer(&mut file, record)
        .map_err(|e| Error::Data(format!("cannot serialize epoch record: {e}")))?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Serializes the parameter store (with the model spec) into a
/// checkpoint container.
pub fn save_checkpoint<S: Scalar>(model: &Model<S>, path: &Path, fingerprint: u64) -> Result<()> {
    let spec_json = serde_json::to_string(&model.spec)
        .map_err(|e| Error::Data(format!("cannot serialize model spec: {e}")))?;
    let mut w = container::ByteWriter::new();
    w.put_str(&spec_json);
    w.put_u32(model.params.len() as u32);
    for (name, p) in model.params.iter() {
        w.put_str(name);
        w.put_u32(p.value.shape().len() as u32);
        for &dim in p.value.shape() {
            w.put_u64(dim as u64);
        }
        for &v in p.value.data() {
            w.put_f64(v.to_f64());
        }
    }
    container::write_container(
        path,
        container::CHECKPOINT_MAGIC,
        fingerprint,
        &[],
        &w.into_bytes(),
    )
}

/// Restores a checkpointed model, verifying the recorded fingerprint.
pub fn load_checkpoint<S: Scalar>(path: &Path, fingerprint: u64) -> Result<Model<S>> {
    let body = container::read_container(path, container::CHECKPOINT_MAGIC, fingerprint, &[])?;
    let mut r = container::ByteReader::new(&body);
    let spec: ModelSpec = serde_json::from_str(&r.get_str()?)
        .map_err(|e| Error::Data(format!("checkpoint holds an unreadable model spec: {e}")))?;
    let n = r.get_u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let name = r.get_str()?;
        let rank = r.get_u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.get_u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(S::from_f64(r.get_f64()?));
        }
        params.insert(&name, Tensor::new(shape, data)?)?;
    }
    Ok(Model::new(spec, params))
}

/// Opens a checkpoint without knowing its fingerprint in advance
/// (magic, version, and body checksum are still verified); returns the
/// model together with the fingerprint recorded at save time.
pub fn open_checkpoint<S: Scalar>(path: &Path) -> Result<(Model<S>, u64)> {
    let fingerprint = container::peek_fingerprint(path, container::CHECKPOINT_MAGIC)?;
    Ok((load_checkpoint(path, fingerprint)?, fingerprint))
}

/// Full training run. The model is built from the `ModelSpec` and the dataset
/// embeddings with a seed derived from `cfg.seed`; every epoch resamples
/// negatives, shuffles batches, validates with the cached evaluator, and
/// checkpoints on improvement. Training stops at `cfg.epochs`, or once
/// `cfg.patience` epochs pass without improvement (after
/// `cfg.min_epochs`). A non-finite loss or gradient aborts with the last
/// good checkpoint intact on disk.
pub fn train<S: Scalar>(
    spec: ModelSpec,
    ds: &ProcessedDataset,
    cfg: &TrainConfig,
    sinks: &TrainSinks,
) -> Result<TrainOutcome<S>> {
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if ds.train.is_empty() || ds.valid.is_empty() {
        return Err(Error::Data(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    let mut model = Model::init(
        spec,
        &ds.embeddings_as::<S>(),
        seed::derive(cfg.seed, "model_init", 0),
    )?;
    let mut adam = AdamState::new(&model.params);
    let mut best: Option<(usize, MetricsReport, ParamStore<S>)> = None;
    let mut epochs = Vec::new();
    let mut since_improvement = 0usize;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let (samples, stats) =
            samples_for_epoch(&ds.train, cfg.negatives, cfg.strategy, cfg.seed, epoch);
        if samples.is_empty() {
            return Err(Error::Data(
                "no trainable slates: every impression lacks a positive or a negative".into(),
            ));
        }
        let batches = make_batches(
            samples.len(),
            cfg.batch_size,
            true,
            seed::derive(cfg.seed, "batch", epoch as u64),
        )?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "dropout", epoch as u64));
        let mut loss_sum = 0.0f64;
        for batch in &batches {
            let refs: Vec<&TrainingSample> = batch.iter().map(|&i| &samples[i]).collect();
            let loss = step_batch(&mut model, ds, &refs, &mut adam, cfg, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}: loss is {loss}; last good checkpoint kept"
                )));
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / samples.len() as f64;

        let mut cache = VectorCache::new(&model);
        let validation = fast_evaluate(&model, ds, &ds.valid, &mut cache)?;
        if !validation.auc_raw.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch}: validation AUC is not finite"
            )));
        }
        let improved = best
            .as_ref()
            .map(|(_, b, _)| validation.auc_raw > b.auc_raw)
            .unwrap_or(true);
        if improved {
            best = Some((epoch, validation, model.params.clone()));
            since_improvement = 0;
            if let Some(path) = &sinks.checkpoint {
                save_checkpoint(&model, path, sinks.fingerprint)?;
            }
        } else {
            since_improvement += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            n_samples: samples.len(),
            skipped_impressions: stats.skipped_impressions,
            validation,
            improved,
            duration_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {train_loss:.4}, validation AUC {:.2}{}",
            validation.auc,
            if improved { " (best)" } else { "" }
        );
        if let Some(path) = &sinks.epoch_log {
            append_jsonl(path, &record)?;
        }
        epochs.push(record);
        if epoch + 1 >= cfg.min_epochs && since_improvement >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, best_validation, best_params) = best.expect("at least one epoch ran");
    let model = Model::new(model.spec, best_params);
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_validation,
        epochs,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split::SplitMode;
    use crate::data::synthetic::{generate_synthetic, SyntheticSpec};
    use crate::data::{preprocess, raw_paths, PreprocessOptions};
    use crate::zoo::Family;

    #[test]
    fn uniform_slate_loss_is_ln_of_slate_size() {
        let (loss, grad) = slate_loss(&[0.0f64; 5], 2).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-12);
        for (i, g) in grad.iter().enumerate() {
            let want = 0.2 - f64::from(u8::from(i == 2));
            assert!((g - want).abs() < 1e-12);
        }
        assert!((5.0f64.ln() - 1.6094).abs() < 1e-4);
    }

    #[test]
    fn slate_loss_gradient_matches_finite_differences() {
        let scores = [0.3f64, -1.2, 0.7, 0.05];
        let (_, grad) = slate_loss(&scores, 1).unwrap();
        let h = 1e-6;
        for i in 0..scores.len() {
            let mut up = scores;
            up[i] += h;
            let mut dn = scores;
            dn[i] -= h;
            let fd = (slate_loss(&up, 1).unwrap().0 - slate_loss(&dn, 1).unwrap().0) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6, "component {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn slate_loss_rejects_bad_inputs() {
        assert!(matches!(slate_loss(&[1.0, 2.0], 2), Err(Error::Shape { .. })));
        assert!(matches!(
            slate_loss(&[f64::NAN, 2.0], 0),
            Err(Error::Numeric(_))
        ));
    }

    fn single_param_store(value: &[f64]) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::new(vec![value.len()], value.to_vec()).unwrap())
            .unwrap();
        store
    }

    #[test]
    fn adam_first_step_magnitude_is_the_learning_rate() {
        let mut store = single_param_store(&[1.0, 1.0]);
        *store.grad_mut("w").unwrap() = Tensor::new(vec![2], vec![0.3, -40.0]).unwrap();
        let mut adam = AdamState::new(&store);
        adam_step(&mut store, &mut adam, 0.01).unwrap();
        let w = store.get("w").unwrap().data();
        assert!((w[0] - (1.0 - 0.01)).abs() < 1e-6, "step for +grad ≈ -lr");
        assert!((w[1] - (1.0 + 0.01)).abs() < 1e-6, "step for -grad ≈ +lr");
    }

    #[test]
    fn adam_leaves_params_untouched_on_zero_gradients() {
        let mut store = single_param_store(&[0.5, -0.25]);
        let mut adam = AdamState::new(&store);
        for _ in 0..3 {
            adam_step(&mut store, &mut adam, 0.1).unwrap();
        }
        assert_eq!(store.get("w").unwrap().data(), &[0.5, -0.25]);
    }

    #[test]
    fn adam_matches_hand_computed_two_steps() {
        let mut store = single_param_store(&[1.0]);
        let mut adam = AdamState::new(&store);
        let lr = 0.1;
        // step 1 with g = 0.5
        *store.grad_mut("w").unwrap() = Tensor::new(vec![1], vec![0.5]).unwrap();
        adam_step(&mut store, &mut adam, lr).unwrap();
        let m1: f64 = 0.1 * 0.5;
        let v1: f64 = 0.001 * 0.25;
        let want1 = 1.0 - lr * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
        assert!((store.get("w").unwrap().data()[0] - want1).abs() < 1e-12);
        // step 2 with g = -0.2
        *store.grad_mut("w").unwrap() = Tensor::new(vec![1], vec![-0.2]).unwrap();
        adam_step(&mut store, &mut adam, lr).unwrap();
        let m2 = 0.9 * m1 + 0.1 * (-0.2);
        let v2 = 0.999 * v1 + 0.001 * 0.04;
        let bc1 = 1.0 - 0.9f64.powi(2);
        let bc2 = 1.0 - 0.999f64.powi(2);
        let want2 = want1 - lr * (m2 / bc1) / ((v2 / bc2).sqrt() + 1e-8);
        assert!((store.get("w").unwrap().data()[0] - want2).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_aborts_naming_the_parameter() {
        let mut store = single_param_store(&[1.0]);
        *store.grad_mut("w").unwrap() = Tensor::new(vec![1], vec![f64::NAN]).unwrap();
        let mut adam = AdamState::new(&store);
        match adam_step(&mut store, &mut adam, 0.1) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("\"w\""), "{msg}"),
            other => panic!("expected Numeric error, got {other:?}"),
        }
    }

    #[test]
    fn clipping_rescales_only_above_the_threshold() {
        let mut store = single_param_store(&[0.0, 0.0]);
        *store.grad_mut("w").unwrap() = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let norm = clip_global_norm(&mut store, 5.0);
        assert_eq!(norm, 5.0);
        assert_eq!(store.grad("w").unwrap().data(), &[3.0, 4.0]);

        *store.grad_mut("w").unwrap() = Tensor::new(vec![2], vec![6.0, 8.0]).unwrap();
        let norm = clip_global_norm(&mut store, 5.0);
        assert_eq!(norm, 10.0);
        let g = store.grad("w").unwrap().data();
        assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] - 4.0).abs() < 1e-12);
    }

    fn tiny_dataset(seed: u64) -> ProcessedDataset {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            topics: 3,
            users: 12,
            articles: 40,
            train_impressions: 120,
            test_impressions: 30,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec, dir.path()).unwrap();
        let opts = PreprocessOptions {
            max_title_len: 8,
            max_abstract_len: 8,
            embed_dim: 10,
            embedding_file: None,
            split_mode: SplitMode::Random,
            split_ratio: 0.85,
            seed,
        };
        preprocess(
            &raw_paths(&dir.path().join("train")),
            &raw_paths(&dir.path().join("test")),
            &opts,
        )
        .unwrap()
        .0
    }

    fn tiny_model_spec(ds: &ProcessedDataset, family: Family) -> ModelSpec {
        let mut spec = ModelSpec::defaults(family);
        spec.vocab_size = ds.vocab.len();
        spec.embed_dim = 10;
        spec.d_model = 8;
        spec.heads = 2;
        spec.d_att = 6;
        spec.max_title_len = 8;
        spec.max_abstract_len = 8;
        spec.max_history_len = 5;
        spec.conv_filters = 8;
        spec.gru_dim = 8;
        spec.n_users = ds.n_users();
        spec.n_categories = ds.categories.len();
        spec.n_subcategories = ds.subcategories.len();
        spec.cat_embed_dim = 4;
        spec
    }

    #[test]
    fn one_step_touches_every_parameter_tensor() {
        for family in [Family::Nrms, Family::Naml, Family::Lstur] {
            let ds = tiny_dataset(3);
            let spec = tiny_model_spec(&ds, family);
            let mut model = Model::<f32>::init(spec, &ds.embeddings_as::<f32>(), 1).unwrap();
            let before: Vec<(String, Vec<f32>)> = model
                .params
                .iter()
                .map(|(n, p)| (n.clone(), p.value.data().to_vec()))
                .collect();
            // samples with non-empty histories so the user path gets signal
            let (all, _) = samples_for_epoch(
                &ds.train,
                2,
                SamplingStrategy::Unshuffled,
                0,
                0,
            );
            let picked: Vec<&TrainingSample> = all
                .iter()
                .filter(|s| !s.history.is_empty())
                .take(12)
                .collect();
            assert!(picked.len() >= 8, "need history-bearing samples");
            let mut adam = AdamState::new(&model.params);
            let cfg = TrainConfig {
                lr: 1e-3,
                ..TrainConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let loss =
                step_batch(&mut model, &ds, &picked, &mut adam, &cfg, &mut rng).unwrap();
            assert!(loss.is_finite());
            for (name, old) in &before {
                let new = model.params.get(name).unwrap().data();
                assert!(
                    old.iter().zip(new.iter()).any(|(a, b)| a != b),
                    "{family:?}: parameter {name} never moved"
                );
            }
        }
    }

    #[test]
    fn initial_loss_sits_at_ln_slate_size() {
        let ds = tiny_dataset(4);
        let spec = tiny_model_spec(&ds, Family::Nrms);
        let mut model = Model::<f32>::init(spec, &ds.embeddings_as::<f32>(), 2).unwrap();
        let (samples, _) =
            samples_for_epoch(&ds.train, 4, SamplingStrategy::Shuffled, 1, 0);
        let mut losses = 0.0;
        let mut n = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // fresh model: scores are near zero, so each slate's loss ≈ ln 5
        for s in samples.iter().take(60) {
            model.params.zero_grads();
            losses += sample_backward(&mut model, &ds, s, &mut rng).unwrap();
            n += 1;
        }
        let mean = losses / n as f64;
        assert!(
            (mean - 5.0f64.ln()).abs() < 0.1,
            "initial loss {mean} should be within 0.1 of ln 5"
        );
    }

    #[test]
    fn training_improves_auc_and_checkpoints_best() {
        let ds = tiny_dataset(5);
        let spec = tiny_model_spec(&ds, Family::Nrms);
        let dir = tempfile::tempdir().unwrap();
        let sinks = TrainSinks {
            checkpoint: Some(dir.path().join("best.ckpt")),
            epoch_log: Some(dir.path().join("epochs.jsonl")),
            fingerprint: 7,
        };
        let cfg = TrainConfig {
            epochs: 2,
            min_epochs: 1,
            batch_size: 16,
            lr: 3e-3,
            negatives: 2,
            patience: 5,
            seed: 1,
            ..TrainConfig::default()
        };
        let outcome = train::<f32>(spec, &ds, &cfg, &sinks).unwrap();
        assert_eq!(outcome.epochs.len(), 2);
        assert!(outcome.best_validation.auc_raw > 0.0);
        // checkpoint restores the best model bit-for-bit
        let restored = load_checkpoint::<f32>(&sinks.checkpoint.clone().unwrap(), 7).unwrap();
        for (name, p) in outcome.model.params.iter() {
            assert_eq!(
                p.value.data(),
                restored.params.get(name).unwrap().data(),
                "{name} differs after restore"
            );
        }
        // wrong fingerprint refuses to load
        assert!(matches!(
            load_checkpoint::<f32>(&sinks.checkpoint.clone().unwrap(), 8),
            Err(Error::StaleCache { .. })
        ));
        // epoch log is valid JSON lines
        let log = std::fs::read_to_string(dir.path().join("epochs.jsonl")).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), 2);
        for line in lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["validation"]["auc"].is_number());
        }
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let ds = tiny_dataset(6);
        let spec = tiny_model_spec(&ds, Family::Lstur);
        let cfg = TrainConfig {
            epochs: 1,
            min_epochs: 1,
            batch_size: 8,
            negatives: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train::<f32>(spec.clone(), &ds, &cfg, &TrainSinks::default()).unwrap();
        let b = train::<f32>(spec, &ds, &cfg, &TrainSinks::default()).unwrap();
        for (name, p) in a.model.params.iter() {
            let pb = b.model.params.get(name).unwrap();
            assert_eq!(
                p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                pb.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "{name} differs between reruns"
            );
        }
        assert_eq!(a.best_validation, b.best_validation);
    }

    #[test]
    fn patience_stops_training_after_min_epochs() {
        let ds = tiny_dataset(7);
        let spec = tiny_model_spec(&ds, Family::Nrms);
        // lr 0 cannot improve, so epoch 0 is best and patience kicks in
        let cfg = TrainConfig {
            epochs: 10,
            min_epochs: 2,
            batch_size: 32,
            lr: 0.0,
            negatives: 2,
            patience: 2,
            seed: 2,
            ..TrainConfig::default()
        };
        let outcome = train::<f32>(spec, &ds, &cfg, &TrainSinks::default()).unwrap();
        assert!(outcome.stopped_early);
        assert_eq!(outcome.best_epoch, 0);
        assert_eq!(outcome.epochs.len(), 3, "epoch 0 best + 2 patience epochs");
    }
}

//! Model zoo: three encoder families (NRMS, NAML, LSTUR) behind one
//! parameter-store interface, plus deterministic initialization.

pub mod attention;
pub mod encoders;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Nrms,
    Naml,
    Lstur,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Nrms => write!(f, "nrms"),
            Family::Naml => write!(f, "naml"),
            Family::Lstur => write!(f, "lstur"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nrms" => Ok(Family::Nrms),
            "naml" => Ok(Family::Naml),
            "lstur" => Ok(Family::Lstur),
            other => Err(Error::Config(format!(
                "unknown model family '{other}' (expected nrms, naml, or lstur)"
            ))),
        }
    }
}

/// Content views a NAML news encoder can combine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Title,
    Abstract,
    Category,
    Subcategory,
}

/// How LSTUR combines the long-term user embedding with the GRU state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserIdMode {
    /// GRU hidden state starts from the user-id embedding (default).
    Init,
    /// Final GRU state is concatenated with the embedding and projected.
    Concat,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Self-attention output width; heads * d_k.
    pub d_model: usize,
    pub heads: usize,
    /// Query dimension of the additive-attention scorers.
    pub d_att: usize,
    pub max_title_len: usize,
    pub max_abstract_len: usize,
    pub max_history_len: usize,
    pub views: Vec<View>,
    pub conv_filters: usize,
    pub conv_window: usize,
    pub gru_dim: usize,
    pub user_id_mode: UserIdMode,
    pub n_users: usize,
    pub n_categories: usize,
    pub n_subcategories: usize,
    pub cat_embed_dim: usize,
    pub dropout: f64,
}

impl ModelSpec {
    /// Spec with the documented default dimensions; corpus-dependent sizes
    /// (vocab, users, categories) start at safe minimums and are filled in
    /// by the data pipeline.
    pub fn defaults(family: Family) -> Self {
        ModelSpec {
            family,
            vocab_size: 2,
            embed_dim: 300,
            d_model: 256,
            heads: 16,
            d_att: 200,
            max_title_len: 30,
            max_abstract_len: 50,
            max_history_len: 50,
            views: vec![View::Title, View::Abstract, View::Category, View::Subcategory],
            conv_filters: 400,
            conv_window: 3,
            gru_dim: 400,
            user_id_mode: UserIdMode::Init,
            n_users: 1,
            n_categories: 1,
            n_subcategories: 1,
            cat_embed_dim: 100,
            dropout: 0.2,
        }
    }

    /// Width of a news vector (and therefore of a user vector).
    pub fn d_news(&self) -> usize {
        match self.family {
            Family::Nrms => self.d_model,
            Family::Naml | Family::Lstur => self.conv_filters,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("d_att", self.d_att),
            ("max_title_len", self.max_title_len),
            ("max_history_len", self.max_history_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::Config(
                "vocabulary needs at least the pad and oov ids".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "model.dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        match self.family {
            Family::Nrms => {
                if self.heads == 0 || self.d_model % self.heads != 0 {
                    return Err(Error::Config(format!(
                        "d_model {} must be divisible by heads {}",
                        self.d_model, self.heads
                    )));
                }
            }
            Family::Naml => {
                if self.views.is_empty() {
                    return Err(Error::Config("naml needs at least one view".into()));
                }
                let mut seen = Vec::new();
                for v in &self.views {
                    if seen.contains(v) {
                        return Err(Error::Config(format!("duplicate view {v:?}")));
                    }
                    seen.push(*v);
                }
                if self.conv_window % 2 == 0 {
                    return Err(Error::Config("conv_window must be odd".into()));
                }
            }
            Family::Lstur => {
                if self.conv_window % 2 == 0 {
                    return Err(Error::Config("conv_window must be odd".into()));
                }
                if self.gru_dim != self.conv_filters {
                    return Err(Error::Config(format!(
                        "lstur gru_dim ({}) must equal conv_filters ({}) so user and news vectors share a dot-product space",
                        self.gru_dim, self.conv_filters
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Param<S> {
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Named parameter tensors with matching gradient accumulators. Iteration
/// order is the name order (BTreeMap), which keeps every traversal in the
/// trainer and checkpointer deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    map: BTreeMap<String, Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        if self.map.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter '{name}'")));
        }
        let grad = Tensor::zeros(value.shape());
        self.map.insert(name.to_string(), Param { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.map
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.map
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<S>> {
        self.map
            .get(name)
            .map(|p| &p.grad)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    /// Adds `delta` into the gradient accumulator for `name`.
    pub fn add_grad(&mut self, name: &str, delta: &Tensor<S>) -> Result<()> {
        let p = self
            .map
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        p.grad.add_assign(delta)
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.map
            .get_mut(name)
            .map(|p| &mut p.grad)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn zero_grads(&mut self) {
        for p in self.map.values_mut() {
            p.grad.fill(S::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<S>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<S>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> Vec<&str> {
        self.map.keys().map(|s| s.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.map.values().map(|p| p.value.len()).sum()
    }

    /// 64-bit fingerprint over parameter names, shapes, and values.
    /// Any single-value change flips it, which is what cache invalidation
    /// in the evaluation engine keys on.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut mix = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, p) in &self.map {
            mix(name.as_bytes());
            for &d in p.value.shape() {
                mix(&(d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                mix(&v.to_f64().to_bits().to_le_bytes());
            }
        }
        h
    }
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn init_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed::derive(seed, "param_init", seed::fnv1a(name.as_bytes())))
}

fn glorot<S: Scalar>(shape: [usize; 2], seed: u64, name: &str) -> Tensor<S> {
    let limit = glorot_limit(shape[0], shape[1]);
    let mut rng = init_rng(seed, name);
    let n = shape[0] * shape[1];
    let data = (0..n)
        .map(|_| S::from_f64(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::new(vec![shape[0], shape[1]], data).expect("shape matches data")
}

fn query_vector<S: Scalar>(d: usize, seed: u64, name: &str) -> Tensor<S> {
    let limit = glorot_limit(d, 1);
    let mut rng = init_rng(seed, name);
    Tensor::from_vec((0..d).map(|_| S::from_f64(rng.gen_range(-limit..limit))).collect())
}

fn id_table<S: Scalar>(rows: usize, cols: usize, seed: u64, name: &str) -> Tensor<S> {
    let mut rng = init_rng(seed, name);
    let data = (0..rows * cols)
        .map(|_| S::from_f64(rng.gen_range(-0.1..0.1)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

struct Builder<'a, S: Scalar> {
    store: &'a mut ParamStore<S>,
    seed: u64,
}

impl<S: Scalar> Builder<'_, S> {
    fn mat(&mut self, name: &str, shape: [usize; 2]) -> Result<()> {
        self.store.insert(name, glorot(shape, self.seed, name))
    }
    fn bias(&mut self, name: &str, d: usize) -> Result<()> {
        self.store.insert(name, Tensor::zeros(&[d]))
    }
    fn query(&mut self, name: &str, d: usize) -> Result<()> {
        self.store.insert(name, query_vector(d, self.seed, name))
    }
    fn table(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.store.insert(name, id_table(rows, cols, self.seed, name))
    }
    fn pool(&mut self, prefix: &str, d_in: usize, d_att: usize) -> Result<()> {
        self.mat(&format!("{prefix}.w1"), [d_in, d_att])?;
        self.bias(&format!("{prefix}.b1"), d_att)?;
        self.query(&format!("{prefix}.v"), d_att)
    }
    fn attn_heads(&mut self, prefix: &str, heads: usize, d_in: usize, d_k: usize) -> Result<()> {
        for h in 0..heads {
            self.mat(&format!("{prefix}.h{h}.wq"), [d_in, d_k])?;
            self.mat(&format!("{prefix}.h{h}.wk"), [d_in, d_k])?;
            self.mat(&format!("{prefix}.h{h}.wv"), [d_in, d_k])?;
        }
        Ok(())
    }
    fn conv(&mut self, prefix: &str, window: usize, d_in: usize, d_out: usize) -> Result<()> {
        self.mat(&format!("{prefix}.filters"), [window * d_in, d_out])?;
        self.bias(&format!("{prefix}.bias"), d_out)
    }
}

/// Builds a freshly initialized parameter store for `spec`.
///
/// The word-embedding table comes from the pretrained matrix and stays
/// trainable. Projections get fan-scaled uniform init, biases zeros, id
/// embedding tables uniform(-0.1, 0.1); every tensor is seeded per name,
/// so the same seed always yields a bitwise-identical store.
pub fn build_model<S: Scalar>(
    spec: &ModelSpec,
    embeddings: &Tensor<S>,
    seed: u64,
) -> Result<ParamStore<S>> {
    spec.validate()?;
    if embeddings.shape() != [spec.vocab_size, spec.embed_dim] {
        return Err(Error::Shape {
            op: "build_model_embeddings",
            lhs: vec![spec.vocab_size, spec.embed_dim],
            rhs: embeddings.shape().to_vec(),
        });
    }
    let mut store = ParamStore::new();
    store.insert("word_embedding", embeddings.clone())?;
    let mut b = Builder {
        store: &mut store,
        seed,
    };
    match spec.family {
        Family::Nrms => {
            let d_k = spec.d_k();
            b.attn_heads("news.self", spec.heads, spec.embed_dim, d_k)?;
            b.pool("news.pool", spec.d_model, spec.d_att)?;
            b.attn_heads("user.self", spec.heads, spec.d_model, d_k)?;
            b.pool("user.pool", spec.d_model, spec.d_att)?;
        }
        Family::Naml => {
            let f = spec.conv_filters;
            for view in &spec.views {
                match view {
                    View::Title => {
                        b.conv("title.conv", spec.conv_window, spec.embed_dim, f)?;
                        b.pool("title.pool", f, spec.d_att)?;
                    }
                    View::Abstract => {
                        b.conv("abstract.conv", spec.conv_window, spec.embed_dim, f)?;
                        b.pool("abstract.pool", f, spec.d_att)?;
                    }
                    View::Category => {
                        b.table("category.embedding", spec.n_categories, spec.cat_embed_dim)?;
                        b.mat("category.dense.w", [spec.cat_embed_dim, f])?;
                        b.bias("category.dense.b", f)?;
                    }
                    View::Subcategory => {
                        b.table("subcategory.embedding", spec.n_subcategories, spec.cat_embed_dim)?;
                        b.mat("subcategory.dense.w", [spec.cat_embed_dim, f])?;
                        b.bias("subcategory.dense.b", f)?;
                    }
                }
            }
            b.pool("views.pool", f, spec.d_att)?;
            b.pool("user.pool", f, spec.d_att)?;
        }
        Family::Lstur => {
            let f = spec.conv_filters;
            b.conv("news.conv", spec.conv_window, spec.embed_dim, f)?;
            b.pool("news.pool", f, spec.d_att)?;
            for gate in ["z", "r", "h"] {
                b.mat(&format!("user.gru.w{gate}"), [f, spec.gru_dim])?;
                b.mat(&format!("user.gru.u{gate}"), [spec.gru_dim, spec.gru_dim])?;
                b.bias(&format!("user.gru.b{gate}"), spec.gru_dim)?;
            }
            b.table("user.id_embedding", spec.n_users, spec.gru_dim)?;
            if spec.user_id_mode == UserIdMode::Concat {
                b.mat("user.combine.w", [2 * spec.gru_dim, spec.gru_dim])?;
            }
        }
    }
    Ok(store)
}

/// A spec plus its parameters, with encoder-invocation counters used by
/// the evaluation engine's caching guarantees.
pub struct Model<S: Scalar> {
    pub spec: ModelSpec,
    pub params: ParamStore<S>,
    news_calls: AtomicU64,
    user_calls: AtomicU64,
}

impl<S: Scalar> Model<S> {
    pub fn new(spec: ModelSpec, params: ParamStore<S>) -> Self {
        Model {
            spec,
            params,
            news_calls: AtomicU64::new(0),
            user_calls: AtomicU64::new(0),
        }
    }

    pub fn init(spec: ModelSpec, embeddings: &Tensor<S>, seed: u64) -> Result<Self> {
        let params = build_model(&spec, embeddings, seed)?;
        Ok(Model::new(spec, params))
    }

    /// Inference-mode news encoding (no dropout); counts the invocation.
    pub fn encode_news(&self, tokens: &encoders::NewsTokens) -> Result<Tensor<S>> {
        self.news_calls.fetch_add(1, Ordering::Relaxed);
        encoders::encode_news(&self.spec, &self.params, tokens, &mut None).map(|(v, _)| v)
    }

    /// Inference-mode user encoding; counts the invocation.
    pub fn encode_user(
        &self,
        history: &Tensor<S>,
        mask: &[bool],
        user_id: Option<u32>,
    ) -> Result<Tensor<S>> {
        self.user_calls.fetch_add(1, Ordering::Relaxed);
        encoders::encode_user(&self.spec, &self.params, history, mask, user_id, &mut None)
            .map(|(v, _)| v)
    }

    pub fn encoder_calls(&self) -> (u64, u64) {
        (
            self.news_calls.load(Ordering::Relaxed),
            self.user_calls.load(Ordering::Relaxed),
        )
    }

    pub fn reset_encoder_calls(&self) {
        self.news_calls.store(0, Ordering::Relaxed);
        self.user_calls.store(0, Ordering::Relaxed);
    }

    /// Fingerprint over parameters and spec; changes when either changes.
    pub fn fingerprint(&self) -> u64 {
        let spec_tag = format!("{:?}", self.spec);
        seed::fnv1a(spec_tag.as_bytes()) ^ self.params.fingerprint()
    }
}

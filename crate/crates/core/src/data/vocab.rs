//! Token vocabulary and the pretrained-embedding loader.

use crate::data::parse::ParsedNews;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<oov>";

/// Lowercases and splits on every non-alphanumeric character; tokens are
/// the remaining maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Token table. Id 0 is reserved for padding and id 1 for unknown
/// tokens; corpus tokens follow in first-occurrence order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    /// Builds the table from corpus token streams in first-occurrence order.
    pub fn build<'a>(corpus: impl Iterator<Item = &'a str>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        let mut index: BTreeMap<String, u32> = BTreeMap::new();
        index.insert(PAD_TOKEN.into(), PAD_ID);
        index.insert(OOV_TOKEN.into(), OOV_ID);
        for tok in corpus {
            if !index.contains_key(tok) {
                index.insert(tok.to_string(), tokens.len() as u32);
                tokens.push(tok.to_string());
            }
        }
        Vocab { tokens, index }
    }

    /// Id for a token; unknown tokens map to [`OOV_ID`].
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Maps tokens to ids, truncates to `max_len`, and right-pads with 0.
pub fn index_tokens(vocab: &Vocab, tokens: &[String], max_len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = tokens.iter().take(max_len).map(|t| vocab.id(t)).collect();
    ids.resize(max_len, PAD_ID);
    ids
}

/// Parses an embedding text file: one token per line, then `dim`
/// space-separated float components.
pub fn load_embedding_file(path: &Path, dim: usize) -> Result<BTreeMap<String, Vec<f32>>> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: line_no,
            msg: format!("read failed: {e}"),
        })?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let token = parts.next().unwrap_or_default().to_string();
        let values: Vec<f32> = parts
            .map(|p| {
                p.parse::<f32>().map_err(|e| Error::Parse {
                    file: path.display().to_string(),
                    line: line_no,
                    msg: format!("bad float {p:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Config(format!(
                "embedding file {} line {line_no}: vector has {} components, config expects {dim}",
                path.display(),
                values.len()
            )));
        }
        out.insert(token, values);
    }
    Ok(out)
}

/// Builds the vocabulary over titles and abstracts and assembles the
/// embedding matrix: row 0 (padding) is all zeros; tokens present in the
/// pretrained file use its vector; every other row is drawn uniformly
/// from (-0.1, 0.1) with a stream derived from the token itself, so a
/// row does not depend on which other tokens are missing.
pub fn build_vocab_and_embeddings(
    articles: &[ParsedNews],
    embedding_file: Option<&Path>,
    dim: usize,
    seed: u64,
) -> Result<(Vocab, Tensor<f32>)> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    let vocab = Vocab::build(
        articles
            .iter()
            .flat_map(|a| a.title_tokens.iter().chain(a.abstract_tokens.iter()))
            .map(|s| s.as_str()),
    );
    let pretrained = match embedding_file {
        Some(p) => load_embedding_file(p, dim)?,
        None => BTreeMap::new(),
    };
    let mut data = vec![0.0f32; vocab.len() * dim];
    let range = Uniform::new(-0.1f32, 0.1f32);
    for (i, token) in vocab.tokens().iter().enumerate().skip(1) {
        let row = &mut data[i * dim..(i + 1) * dim];
        match pretrained.get(token) {
            Some(v) => row.copy_from_slice(v),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(
                    seed,
                    "missing_embedding",
                    seed::fnv1a(token.as_bytes()),
                ));
                for x in row.iter_mut() {
                    *x = range.sample(&mut rng);
                }
            }
        }
    }
    let embeddings = Tensor::new(vec![vocab.len(), dim], data)?;
    Ok((vocab, embeddings))
}

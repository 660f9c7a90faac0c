//! Versioned length-prefixed binary containers. One header layout is
//! shared by the dataset cache, model checkpoints, and the vector cache;
//! loaders verify the format version, the configuration fingerprint, and
//! the recorded source-file digests before touching the body.

use crate::data::{
    vocab::Vocab, Impression, NewsArticle, ProcessedDataset, SplitDescriptor,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

pub const CONTAINER_VERSION: u32 = 1;
pub const DATASET_MAGIC: &[u8; 8] = b"NRDATA01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NRCKPT01";
pub const VECTORS_MAGIC: &[u8; 8] = b"NRVECS01";

/// SHA-256 of a file's bytes, for the header's source list.
pub fn file_sha256(path: &Path) -> Result<[u8; 32]> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().into())
}

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
    pub fn put_bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn put_i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn put_f32(&mut self, v: f32) {
        self.put_u32(v.to_bits());
    }
    pub fn put_f64(&mut self, v: f64) {
        self.put_u64(v.to_bits());
    }
    pub fn put_str(&mut self, s: &str) {
        self.put_u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    pub fn put_u32s(&mut self, vs: &[u32]) {
        self.put_u32(vs.len() as u32);
        for &v in vs {
            self.put_u32(v);
        }
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Data(format!(
                "container body truncated: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos == self.buf.len()
    }
    pub fn get_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn get_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn get_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn get_i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn get_f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.get_u32()?))
    }
    pub fn get_f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.get_u64()?))
    }
    pub fn get_str(&mut self) -> Result<String> {
        let n = self.get_u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|e| Error::Data(format!("container holds invalid utf-8: {e}")))
    }
    pub fn get_u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.get_u32()? as usize;
        (0..n).map(|_| self.get_u32()).collect()
    }
}

/// Writes header + body. `fingerprint` identifies the configuration that
/// produced the body; `sources` records digests of the input files.
pub fn write_container(
    path: &Path,
    magic: &[u8; 8],
    fingerprint: u64,
    sources: &[(String, [u8; 32])],
    body: &[u8],
) -> Result<()> {
    let mut w = ByteWriter::new();
    w.put_bytes(magic);
    w.put_u32(CONTAINER_VERSION);
    w.put_u64(fingerprint);
    w.put_u32(sources.len() as u32);
    for (name, hash) in sources {
        w.put_str(name);
        w.put_bytes(hash);
    }
    w.put_u64(body.len() as u64);
    w.put_bytes(body);
    w.put_u64(crate::seed::fnv1a(body));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, w.into_bytes())?;
    Ok(())
}

pub struct ContainerHeader {
    pub fingerprint: u64,
    pub sources: Vec<(String, [u8; 32])>,
}

/// Reads only the identity fingerprint from a container header,
/// verifying magic and version. This lets a caller open an artifact
/// whose fingerprint it does not know in advance; the checksum is
/// still verified by the subsequent full read.
pub fn peek_fingerprint(path: &Path, magic: &[u8; 8]) -> Result<u64> {
    use std::io::Read;
    let mut head = [0u8; 20];
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    file.read_exact(&mut head)
        .map_err(|_| Error::Data(format!("{}: truncated container header", path.display())))?;
    let stale = |reason: String| Error::StaleCache {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = ByteReader::new(&head);
    let got_magic = r.take(8)?;
    if got_magic != magic {
        return Err(stale(format!(
            "wrong container type: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(got_magic)
        )));
    }
    let version = r.get_u32()?;
    if version != CONTAINER_VERSION {
        return Err(stale(format!(
            "container version {version}, this build reads {CONTAINER_VERSION}"
        )));
    }
    r.get_u64()
}

/// Reads and verifies a container. Version or identity mismatches are
/// reported as [`Error::StaleCache`]; structural damage as [`Error::Data`].
pub fn read_container(
    path: &Path,
    magic: &[u8; 8],
    expected_fingerprint: u64,
    expected_sources: &[(String, [u8; 32])],
) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let stale = |reason: String| Error::StaleCache {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = ByteReader::new(&bytes);
    let got_magic = r.take(8)?;
    if got_magic != magic {
        return Err(stale(format!(
            "wrong container type: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(got_magic)
        )));
    }
    let version = r.get_u32()?;
    if version != CONTAINER_VERSION {
        return Err(stale(format!(
            "format version {version} does not match current version {CONTAINER_VERSION}"
        )));
    }
    let fingerprint = r.get_u64()?;
    if fingerprint != expected_fingerprint {
        return Err(stale(format!(
            "configuration fingerprint {fingerprint:016x} does not match current {expected_fingerprint:016x}"
        )));
    }
    let n_sources = r.get_u32()? as usize;
    let mut sources = Vec::with_capacity(n_sources);
    for _ in 0..n_sources {
        let name = r.get_str()?;
        let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        sources.push((name, hash));
    }
    if sources != expected_sources {
        let names: Vec<&str> = sources.iter().map(|(n, _)| n.as_str()).collect();
        return Err(stale(format!(
            "source files changed since the cache was written (recorded: {})",
            names.join(", ")
        )));
    }
    let body_len = r.get_u64()? as usize;
    let body = r.take(body_len)?.to_vec();
    let checksum = r.get_u64()?;
    if checksum != crate::seed::fnv1a(&body) {
        return Err(Error::Data(format!(
            "container {} body checksum mismatch",
            path.display()
        )));
    }
    Ok(body)
}

fn put_article(w: &mut ByteWriter, a: &NewsArticle) {
    w.put_str(&a.news_id);
    w.put_str(&a.category);
    w.put_str(&a.subcategory);
    w.put_u32s(&a.title);
    w.put_u32s(&a.abstract_);
    w.put_str(&a.raw_title);
    w.put_u32(a.category_id);
    w.put_u32(a.subcategory_id);
}

fn get_article(r: &mut ByteReader) -> Result<NewsArticle> {
    Ok(NewsArticle {
        news_id: r.get_str()?,
        category: r.get_str()?,
        subcategory: r.get_str()?,
        title: r.get_u32s()?,
        abstract_: r.get_u32s()?,
        raw_title: r.get_str()?,
        category_id: r.get_u32()?,
        subcategory_id: r.get_u32()?,
    })
}

fn put_impressions(w: &mut ByteWriter, imps: &[Impression]) {
    w.put_u32(imps.len() as u32);
    for imp in imps {
        w.put_str(&imp.impression_id);
        w.put_u32(imp.user);
        w.put_i64(imp.timestamp);
        w.put_u32s(&imp.history);
        w.put_u32(imp.candidates.len() as u32);
        for (a, l) in &imp.candidates {
            w.put_u32(*a);
            w.put_u8(*l);
        }
    }
}

fn get_impressions(r: &mut ByteReader) -> Result<Vec<Impression>> {
    let n = r.get_u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let impression_id = r.get_str()?;
        let user = r.get_u32()?;
        let timestamp = r.get_i64()?;
        let history = r.get_u32s()?;
        let n_cands = r.get_u32()? as usize;
        let mut candidates = Vec::with_capacity(n_cands);
        for _ in 0..n_cands {
            candidates.push((r.get_u32()?, r.get_u8()?));
        }
        out.push(Impression {
            impression_id,
            user,
            timestamp,
            history,
            candidates,
        });
    }
    Ok(out)
}

fn put_strings(w: &mut ByteWriter, ss: &[String]) {
    w.put_u32(ss.len() as u32);
    for s in ss {
        w.put_str(s);
    }
}

fn get_strings(r: &mut ByteReader) -> Result<Vec<String>> {
    let n = r.get_u32()? as usize;
    (0..n).map(|_| r.get_str()).collect()
}

/// Canonical byte form of a dataset; also the input to `content_hash`.
pub fn serialize_body(ds: &ProcessedDataset) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_u32(ds.articles.len() as u32);
    for a in &ds.articles {
        put_article(&mut w, a);
    }
    put_impressions(&mut w, &ds.train);
    put_impressions(&mut w, &ds.valid);
    put_impressions(&mut w, &ds.test);
    put_strings(&mut w, ds.vocab.tokens());
    let shape = ds.embeddings.shape();
    w.put_u32(shape.len() as u32);
    for &d in shape {
        w.put_u64(d as u64);
    }
    for &v in ds.embeddings.data() {
        w.put_f32(v);
    }
    w.put_u32(ds.users.len() as u32);
    for (name, idx) in &ds.users {
        w.put_str(name);
        w.put_u32(*idx);
    }
    put_strings(&mut w, &ds.categories);
    put_strings(&mut w, &ds.subcategories);
    w.put_str(&ds.split.mode);
    w.put_f64(ds.split.ratio);
    w.put_u64(ds.split.seed);
    w.into_bytes()
}

pub fn deserialize_body(body: &[u8]) -> Result<ProcessedDataset> {
    let mut r = ByteReader::new(body);
    let n_articles = r.get_u32()? as usize;
    let mut articles = Vec::with_capacity(n_articles);
    for _ in 0..n_articles {
        articles.push(get_article(&mut r)?);
    }
    let train = get_impressions(&mut r)?;
    let valid = get_impressions(&mut r)?;
    let test = get_impressions(&mut r)?;
    let vocab = Vocab::from_tokens(get_strings(&mut r)?);
    let rank = r.get_u32()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.get_u64()? as usize);
    }
    let n_vals: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n_vals);
    for _ in 0..n_vals {
        data.push(r.get_f32()?);
    }
    let embeddings = Tensor::new(shape, data)?;
    let n_users = r.get_u32()? as usize;
    let mut users = BTreeMap::new();
    for _ in 0..n_users {
        let name = r.get_str()?;
        let idx = r.get_u32()?;
        users.insert(name, idx);
    }
    let categories = get_strings(&mut r)?;
    let subcategories = get_strings(&mut r)?;
    let split = SplitDescriptor {
        mode: r.get_str()?,
        ratio: r.get_f64()?,
        seed: r.get_u64()?,
    };
    if !r.is_exhausted() {
        return Err(Error::Data("container body has trailing bytes".into()));
    }
    let article_index = articles
        .iter()
        .enumerate()
        .map(|(i, a)| (a.news_id.clone(), i as u32))
        .collect();
    Ok(ProcessedDataset {
        articles,
        article_index,
        train,
        valid,
        test,
        vocab,
        embeddings,
        users,
        categories,
        subcategories,
        split,
    })
}

pub fn save_dataset(
    ds: &ProcessedDataset,
    path: &Path,
    fingerprint: u64,
    sources: &[(String, [u8; 32])],
) -> Result<()> {
    write_container(path, DATASET_MAGIC, fingerprint, sources, &serialize_body(ds))
}

pub fn load_dataset(
    path: &Path,
    fingerprint: u64,
    sources: &[(String, [u8; 32])],
) -> Result<ProcessedDataset> {
    let body = read_container(path, DATASET_MAGIC, fingerprint, sources)?;
    deserialize_body(&body)
}

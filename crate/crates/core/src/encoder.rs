//! Per-post contextual embeddings and pooled user representations.
//!
//! The heavyweight language-model backbone is abstracted behind a provider:
//! a built-in hashed n-gram encoder for self-contained runs, plus ingestion
//! of precomputed embedding files for plugging in real model outputs.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::num::rng::xavier_vector;
use crate::num::scalar::Scalar;
use crate::num::store::ParameterStore;
use crate::num::tape::{Tape, Var};
use crate::num::tensor::Tensor;
use crate::num::Rng;

/// Parameter name for the learnable attention-pooling query.
pub const ATTN_QUERY: &str = "encoder.attn_q";

const EMB_HEADER_PREFIX: &str = "HIPPD-EMB v1 d=";

/// Four binary MBTI dimensions. Bit 1 means E, N, F, J respectively.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Labels {
    #[serde(rename = "IE")]
    pub ie: u8,
    #[serde(rename = "SN")]
    pub sn: u8,
    #[serde(rename = "TF")]
    pub tf: u8,
    #[serde(rename = "PJ")]
    pub pj: u8,
}

impl Labels {
    pub fn new(ie: u8, sn: u8, tf: u8, pj: u8) -> Result<Self> {
        for (name, b) in [("IE", ie), ("SN", sn), ("TF", tf), ("PJ", pj)] {
            if b > 1 {
                return Err(Error::invalid(format!(
                    "label {name} must be 0 or 1, got {b}"
                )));
            }
        }
        Ok(Labels { ie, sn, tf, pj })
    }

    pub fn bits(&self) -> [u8; 4] {
        [self.ie, self.sn, self.tf, self.pj]
    }

    /// 0..15, computed as 8*IE + 4*SN + 2*TF + PJ.
    pub fn type_index(&self) -> usize {
        (self.ie as usize) * 8 + (self.sn as usize) * 4 + (self.tf as usize) * 2 + self.pj as usize
    }

    pub fn from_type_index(idx: usize) -> Result<Self> {
        if idx > 15 {
            return Err(Error::invalid(format!("type index {idx} out of range")));
        }
        Ok(Labels {
            ie: ((idx >> 3) & 1) as u8,
            sn: ((idx >> 2) & 1) as u8,
            tf: ((idx >> 1) & 1) as u8,
            pj: (idx & 1) as u8,
        })
    }

    /// Parse a four-letter MBTI code such as "INFJ".
    pub fn from_code(code: &str) -> Result<Self> {
        let upper = code.to_ascii_uppercase();
        let chars: Vec<char> = upper.chars().collect();
        if chars.len() != 4 {
            return Err(Error::invalid(format!("unknown MBTI code `{code}`")));
        }
        let bit = |c: char, zero: char, one: char| -> Result<u8> {
            if c == zero {
                Ok(0)
            } else if c == one {
                Ok(1)
            } else {
                Err(Error::invalid(format!("unknown MBTI code `{code}`")))
            }
        };
        Ok(Labels {
            ie: bit(chars[0], 'I', 'E')?,
            sn: bit(chars[1], 'S', 'N')?,
            tf: bit(chars[2], 'T', 'F')?,
            pj: bit(chars[3], 'P', 'J')?,
        })
    }

    pub fn code(&self) -> String {
        let mut s = String::with_capacity(4);
        s.push(if self.ie == 1 { 'E' } else { 'I' });
        s.push(if self.sn == 1 { 'N' } else { 'S' });
        s.push(if self.tf == 1 { 'F' } else { 'T' });
        s.push(if self.pj == 1 { 'J' } else { 'P' });
        s
    }
}

/// All sixteen MBTI type codes, ordered by type index.
pub fn mbti_codes() -> [String; 16] {
    std::array::from_fn(|i| Labels::from_type_index(i).unwrap().code())
}

/// One user's post sequence plus optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct UserDocument {
    pub user_id: String,
    pub posts: Vec<String>,
    pub labels: Option<Labels>,
}

impl UserDocument {
    pub fn new(
        user_id: impl Into<String>,
        posts: Vec<String>,
        labels: Option<Labels>,
    ) -> Result<Self> {
        if posts.is_empty() {
            return Err(Error::invalid("a user document needs at least one post"));
        }
        Ok(UserDocument {
            user_id: user_id.into(),
            posts,
            labels,
        })
    }
}

/// Per-post contextual vectors (one row per post) plus an optional pooled
/// user vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix<S> {
    pub rows: Tensor<S>,
    pub pooled: Option<Tensor<S>>,
}

impl<S: Scalar> EmbeddingMatrix<S> {
    pub fn new(rows: Tensor<S>) -> Result<Self> {
        if rows.rank() != 2 || rows.rows() == 0 {
            return Err(Error::invalid(
                "embedding matrix must be rank-2 with >= 1 row",
            ));
        }
        Ok(EmbeddingMatrix { rows, pooled: None })
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }

    pub fn post_count(&self) -> usize {
        self.rows.rows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ProviderKind {
    #[serde(rename = "hashed-ngram")]
    HashedNgram,
    #[serde(rename = "precomputed-file")]
    PrecomputedFile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Attention,
}

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub provider: ProviderKind,
    pub d: usize,
    pub pooling: Pooling,
    pub max_tokens_per_user: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            provider: ProviderKind::HashedNgram,
            d: 64,
            pooling: Pooling::Mean,
            max_tokens_per_user: 2048,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 8 {
            return Err(Error::invalid(format!("embedding width {} < 8", self.d)));
        }
        if self.max_tokens_per_user < 1 {
            return Err(Error::invalid("max_tokens_per_user must be >= 1"));
        }
        Ok(())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

fn hash_feature<S: Scalar>(feature: &str, d: usize, acc: &mut [S]) {
    let h = fnv1a64(feature.as_bytes());
    let sign = if h >> 63 == 1 { -S::one() } else { S::one() };
    acc[(h % d as u64) as usize] = acc[(h % d as u64) as usize] + sign;
}

/// Signed feature hashing of unigrams and bigrams (joined with `_`), scaled
/// by 1/sqrt(feature count). An empty post maps to the zero vector.
pub fn hash_embed_post<S: Scalar>(text: &str, d: usize) -> Tensor<S> {
    let tokens = tokenize(text);
    let mut acc = vec![S::zero(); d];
    let mut count = 0usize;
    for t in &tokens {
        hash_feature(t, d, &mut acc);
        count += 1;
    }
    for pair in tokens.windows(2) {
        let bigram = format!("{}_{}", pair[0], pair[1]);
        hash_feature(&bigram, d, &mut acc);
        count += 1;
    }
    if count > 0 {
        let scale = S::one() / S::of(count as f64).sqrt();
        for v in acc.iter_mut() {
            *v = *v * scale;
        }
    }
    Tensor::vector(acc)
}

/// Number of posts kept under the token budget: later posts are dropped
/// first; the first post is always kept.
fn posts_within_budget(posts: &[String], budget: usize) -> usize {
    let mut used = 0usize;
    let mut kept = 0usize;
    for (i, post) in posts.iter().enumerate() {
        let n = post.split_whitespace().count();
        if i == 0 || used + n <= budget {
            used += n;
            kept += 1;
            if used >= budget {
                break;
            }
        } else {
            break;
        }
    }
    kept.max(1)
}

/// The pluggable embedding provider: hashed n-grams, or rows loaded from a
/// precomputed embedding file.
pub struct Encoder<S: Scalar> {
    pub cfg: EncoderConfig,
    precomputed: Option<BTreeMap<String, Tensor<S>>>,
}

impl<S: Scalar> Encoder<S> {
    pub fn new(cfg: EncoderConfig) -> Self {
        Encoder {
            cfg,
            precomputed: None,
        }
    }

    pub fn with_precomputed(cfg: EncoderConfig, map: BTreeMap<String, Tensor<S>>) -> Self {
        Encoder {
            cfg,
            precomputed: Some(map),
        }
    }

    /// One row per post, in post order, truncated to the user token budget.
    /// A pure function of (document, config). Under mean pooling the pooled
    /// vector is precomputed, since it depends on nothing trainable.
    pub fn encode_user(&self, doc: &UserDocument) -> Result<EmbeddingMatrix<S>> {
        let kept = posts_within_budget(&doc.posts, self.cfg.max_tokens_per_user);
        let mut out = match self.cfg.provider {
            ProviderKind::HashedNgram => {
                let rows: Vec<Vec<S>> = doc.posts[..kept]
                    .iter()
                    .map(|p| hash_embed_post::<S>(p, self.cfg.d).values().to_vec())
                    .collect();
                EmbeddingMatrix::new(Tensor::from_rows(&rows)?)?
            }
            ProviderKind::PrecomputedFile => {
                let map = self
                    .precomputed
                    .as_ref()
                    .ok_or_else(|| Error::MissingEmbedding {
                        user_id: doc.user_id.clone(),
                    })?;
                let rows = map
                    .get(&doc.user_id)
                    .ok_or_else(|| Error::MissingEmbedding {
                        user_id: doc.user_id.clone(),
                    })?;
                if rows.rows() != doc.posts.len() {
                    return Err(Error::Data(format!(
                        "user `{}` has {} posts but {} embedding rows",
                        doc.user_id,
                        doc.posts.len(),
                        rows.rows()
                    )));
                }
                let kept_rows: Vec<Vec<S>> = (0..kept).map(|i| rows.row(i)).collect();
                EmbeddingMatrix::new(Tensor::from_rows(&kept_rows)?)?
            }
        };
        if self.cfg.pooling == Pooling::Mean {
            out.pooled = Some(row_mean(&out.rows));
        }
        Ok(out)
    }
}

fn row_mean<S: Scalar>(rows: &Tensor<S>) -> Tensor<S> {
    let (m, d) = (rows.rows(), rows.cols());
    let mut mean = vec![S::zero(); d];
    for i in 0..m {
        for j in 0..d {
            mean[j] = mean[j] + rows.at(i, j);
        }
    }
    let inv = S::one() / S::of(m as f64);
    for v in mean.iter_mut() {
        *v = *v * inv;
    }
    Tensor::vector(mean)
}

/// Register the attention-pooling query parameter.
pub fn init_attention_query<S: Scalar>(
    store: &mut ParameterStore<S>,
    d: usize,
    rng: &mut Rng,
) -> Result<()> {
    store.insert(ATTN_QUERY, xavier_vector(d, rng))
}

/// Pool the rows of `H` into a single user vector on the tape.
///
/// Mean pooling is the arithmetic row mean. Attention pooling weights rows by
/// softmax(H q) with the learnable query `q` living in the parameter store.
pub fn pool<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    h: &EmbeddingMatrix<S>,
    strategy: Pooling,
) -> Result<Var> {
    if h.post_count() == 0 {
        return Err(Error::invalid("pool of empty embedding matrix"));
    }
    match strategy {
        Pooling::Mean => {
            let z = match &h.pooled {
                Some(z) => z.clone(),
                None => row_mean(&h.rows),
            };
            Ok(tape.constant(z))
        }
        Pooling::Attention => {
            let q = tape.param(store, ATTN_QUERY)?;
            if store.get(ATTN_QUERY)?.len() != h.width() {
                return Err(Error::invalid(format!(
                    "attention query width {} does not match embedding width {}",
                    store.get(ATTN_QUERY)?.len(),
                    h.width()
                )));
            }
            let hvar = tape.constant(h.rows.clone());
            let scores = tape.matvec(hvar, q)?;
            let weights = tape.softmax(scores)?;
            let ht = tape.constant(h.rows.transpose()?);
            tape.matvec(ht, weights)
        }
    }
}

/// Load a `HIPPD-EMB v1` embedding file into per-user row matrices.
pub fn load_precomputed_embeddings<S: Scalar>(path: &Path) -> Result<BTreeMap<String, Tensor<S>>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let parse_err = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line: line + 1,
        msg,
    };

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty embedding file".into()))?;
    let header = header?;
    let d: usize = header
        .strip_prefix(EMB_HEADER_PREFIX)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| {
            parse_err(
                0,
                format!("expected header `{EMB_HEADER_PREFIX}<width>`, got `{header}`"),
            )
        })?;

    let mut rows: BTreeMap<String, Vec<Vec<S>>> = BTreeMap::new();
    for (lineno, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let user = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err(lineno, "missing user_id".into()))?;
        let idx: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(lineno, "missing or invalid post_index".into()))?;
        let vals_str = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "missing embedding values".into()))?;
        let mut vals = Vec::with_capacity(d);
        for tok in vals_str.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid float `{tok}`")))?;
            vals.push(S::of(v));
        }
        if vals.len() != d {
            return Err(parse_err(
                lineno,
                format!("expected {d} values, got {}", vals.len()),
            ));
        }
        let user_rows = rows.entry(user.to_string()).or_default();
        if idx < user_rows.len() {
            return Err(parse_err(
                lineno,
                format!("duplicate (user_id, post_index) = ({user}, {idx})"),
            ));
        }
        if idx > user_rows.len() {
            return Err(parse_err(
                lineno,
                format!(
                    "post_index {idx} for user `{user}` is not contiguous (expected {})",
                    user_rows.len()
                ),
            ));
        }
        user_rows.push(vals);
    }

    let mut out = BTreeMap::new();
    for (user, user_rows) in rows {
        out.insert(user, Tensor::from_rows(&user_rows)?);
    }
    Ok(out)
}

/// Write per-user embedding matrices in the `HIPPD-EMB v1` format.
pub fn save_precomputed_embeddings<S: Scalar>(
    path: &Path,
    map: &BTreeMap<String, Tensor<S>>,
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let d = map.values().next().map(|t| t.cols()).unwrap_or(0);
    writeln!(file, "{EMB_HEADER_PREFIX}{d}")?;
    for (user, rows) in map {
        for i in 0..rows.rows() {
            let vals: Vec<String> = rows.row(i).iter().map(|v| format!("{v}")).collect();
            writeln!(file, "{user}\t{i}\t{}", vals.join(" "))?;
        }
    }
    Ok(())
}

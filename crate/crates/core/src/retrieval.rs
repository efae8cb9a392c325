//! Visual vocabulary, global embeddings (BoW and VLAD) and top-k search.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{BinaryDescriptor, DESCRIPTOR_BITS};
use crate::rng::{self, purpose};

pub const DEFAULT_BOW_WORDS: usize = 256;
pub const DEFAULT_VLAD_WORDS: usize = 64;
/// Distance assigned between a zero embedding and anything else: the
/// largest squared distance two unit vectors can have.
pub const ZERO_EMBEDDING_DISTANCE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub centroids: Vec<BinaryDescriptor>,
    pub idf: Vec<f64>,
    pub training_seed: u64,
    /// Per-word mean of the {-1, +1}-mapped training descriptors, used as
    /// the VLAD anchor. Empty means residuals are taken against the binary
    /// centroids.
    pub word_means: Vec<Vec<f64>>,
}

fn nearest(d: &BinaryDescriptor, centroids: &[BinaryDescriptor]) -> usize {
    let mut best = (0, u32::MAX);
    for (i, c) in centroids.iter().enumerate() {
        let h = d.hamming(c);
        if h < best.1 {
            best = (i, h);
        }
    }
    best.0
}

/// Bitwise majority over `members` (indices into `descriptors`, ascending);
/// a tied bit takes the value of the lowest-index member.
fn majority(descriptors: &[BinaryDescriptor], members: &[usize]) -> BinaryDescriptor {
    let mut counts = [0u32; DESCRIPTOR_BITS];
    for &m in members {
        let d = &descriptors[m];
        for (b, c) in counts.iter_mut().enumerate() {
            *c += d.bit(b) as u32;
        }
    }
    let n = members.len() as u32;
    let first = &descriptors[members[0]];
    let mut out = BinaryDescriptor::default();
    for (b, &c) in counts.iter().enumerate() {
        let bit = match (2 * c).cmp(&n) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => first.bit(b),
        };
        out.set_bit(b, bit);
    }
    out
}

/// k-medians clustering in Hamming space with k-means++ seeding.
///
/// IDF weights start at 1; call [`Vocabulary::compute_idf`] with per-frame
/// descriptor sets to fill them in.
pub fn train_vocabulary(
    descriptors: &[BinaryDescriptor],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Vocabulary> {
    if k == 0 || descriptors.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} descriptors for {k} words",
            descriptors.len()
        )));
    }
    let mut rng = rng::stream(seed, &[purpose::VOCABULARY]);

    let mut centroids = vec![descriptors[rng.random_range(0..descriptors.len())]];
    let mut dist: Vec<u64> = descriptors
        .iter()
        .map(|d| d.hamming(&centroids[0]) as u64)
        .collect();
    while centroids.len() < k {
        let total: u64 = dist.iter().map(|d| d * d).sum();
        if total == 0 {
            return Err(Error::InsufficientData(format!(
                "fewer than {k} distinct descriptors"
            )));
        }
        let mut r = rng.random_range(0..total);
        let mut pick = 0;
        for (i, d) in dist.iter().enumerate() {
            let w = d * d;
            if r < w {
                pick = i;
                break;
            }
            r -= w;
        }
        let c = descriptors[pick];
        centroids.push(c);
        for (d, x) in dist.iter_mut().zip(descriptors) {
            *d = (*d).min(x.hamming(&c) as u64);
        }
    }

    let mut assignment: Vec<usize> = Vec::new();
    for _ in 0..max_iters {
        let next: Vec<usize> = descriptors
            .par_iter()
            .map(|d| nearest(d, &centroids))
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &a) in assignment.iter().enumerate() {
            members[a].push(i);
        }
        for (c, m) in centroids.iter_mut().zip(&members) {
            if !m.is_empty() {
                *c = majority(descriptors, m);
            }
        }
        // keep centroids distinct: a collapsed word restarts at the
        // descriptor farthest from every current centroid
        for i in 1..k {
            if centroids[..i].contains(&centroids[i]) {
                let far = descriptors
                    .iter()
                    .enumerate()
                    .map(|(j, d)| (centroids.iter().map(|c| d.hamming(c)).min().unwrap(), j))
                    .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
                    .unwrap();
                centroids[i] = descriptors[far.1];
            }
        }
    }
    Ok(Vocabulary {
        idf: vec![1.0; k],
        centroids,
        training_seed: seed,
        word_means: Vec::new(),
    })
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Nearest word by linear scan, lowest index on ties.
    pub fn word(&self, d: &BinaryDescriptor) -> usize {
        nearest(d, &self.centroids)
    }

    /// `idf_w = ln(N / (1 + n_w))`, clamped at 0, where `n_w` counts the
    /// frames containing word `w`.
    pub fn compute_idf(&mut self, frames: &[Vec<BinaryDescriptor>]) {
        let n = frames.len() as f64;
        let mut df = vec![0usize; self.len()];
        for f in frames {
            let mut seen = vec![false; self.len()];
            for d in f {
                seen[self.word(d)] = true;
            }
            for (c, s) in df.iter_mut().zip(seen) {
                *c += s as usize;
            }
        }
        self.idf = df
            .iter()
            .map(|&c| if n > 0.0 { (n / (1.0 + c as f64)).ln().max(0.0) } else { 0.0 })
            .collect();
    }

    /// Sets each word's VLAD anchor to the mean of the {-1, +1}-mapped
    /// descriptors assigned to it. A word with no descriptors keeps its
    /// centroid as anchor.
    pub fn compute_word_means(&mut self, descriptors: &[BinaryDescriptor]) {
        let k = self.len();
        let mut sums = vec![vec![0.0; DESCRIPTOR_BITS]; k];
        let mut counts = vec![0usize; k];
        for d in descriptors {
            let w = self.word(d);
            counts[w] += 1;
            for (b, s) in sums[w].iter_mut().enumerate() {
                *s += signed_bit(d, b);
            }
        }
        self.word_means = sums
            .into_iter()
            .zip(counts)
            .enumerate()
            .map(|(w, (s, n))| {
                if n == 0 {
                    (0..DESCRIPTOR_BITS).map(|b| signed_bit(&self.centroids[w], b)).collect()
                } else {
                    s.into_iter().map(|v| v / n as f64).collect()
                }
            })
            .collect();
    }

    /// `k`, bits and seed as big-endian u32/u32/u64, then centroids (32
    /// bytes each), IDF weights (big-endian f64), a u32 flag for word
    /// means and, when set, `k * 256` big-endian f64 means.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.len() as u32).to_be_bytes());
        out.extend_from_slice(&(DESCRIPTOR_BITS as u32).to_be_bytes());
        out.extend_from_slice(&self.training_seed.to_be_bytes());
        for c in &self.centroids {
            out.extend_from_slice(&c.to_bytes());
        }
        for v in &self.idf {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&(!self.word_means.is_empty() as u32).to_be_bytes());
        for v in self.word_means.iter().flatten() {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::format(path, "truncated vocabulary header"));
        }
        let k = u32::from_be_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let bits = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let seed = u64::from_be_bytes(bytes[8..16].try_into().unwrap());
        if bits != DESCRIPTOR_BITS {
            return Err(Error::format(path, format!("unsupported descriptor width {bits}")));
        }
        let base = 16 + k * 40;
        if bytes.len() < base + 4 {
            return Err(Error::format(path, "vocabulary size disagrees with header"));
        }
        let has_means = match u32::from_be_bytes(bytes[base..base + 4].try_into().unwrap()) {
            0 => false,
            1 => true,
            _ => return Err(Error::format(path, "bad word-mean flag")),
        };
        let expect = base + 4 + if has_means { k * DESCRIPTOR_BITS * 8 } else { 0 };
        if bytes.len() != expect {
            return Err(Error::format(path, "vocabulary size disagrees with header"));
        }
        let body = &bytes[16..];
        let centroids = body[..32 * k]
            .chunks_exact(32)
            .map(|c| BinaryDescriptor::from_bytes(c.try_into().unwrap()))
            .collect();
        let idf: Vec<f64> = body[32 * k..40 * k]
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
            .collect();
        if idf.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::format(path, "idf weights must be finite and >= 0"));
        }
        let means: Vec<f64> = bytes[base + 4..]
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
            .collect();
        if means.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::format(path, "word means must lie in [-1, 1]"));
        }
        let word_means = means.chunks(DESCRIPTOR_BITS).map(<[f64]>::to_vec).collect();
        Ok(Vocabulary {
            centroids,
            idf,
            training_seed: seed,
            word_means,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingVariant {
    Bow,
    Vlad,
}

impl fmt::Display for EmbeddingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingVariant::Bow => "bow",
            EmbeddingVariant::Vlad => "vlad",
        })
    }
}

impl FromStr for EmbeddingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow" => Ok(EmbeddingVariant::Bow),
            "vlad" => Ok(EmbeddingVariant::Vlad),
            _ => Err(Error::InvalidArgument(format!("unknown retrieval variant {s:?}"))),
        }
    }
}

/// Unit-norm (or all-zero) image descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEmbedding {
    pub variant: EmbeddingVariant,
    pub values: Vec<f64>,
}

impl GlobalEmbedding {
    pub fn zeros(variant: EmbeddingVariant, dim: usize) -> Self {
        GlobalEmbedding {
            variant,
            values: vec![0.0; dim],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
        self
    }

    /// Squared Euclidean distance, or [`ZERO_EMBEDDING_DISTANCE`] when
    /// either side is the zero vector.
    pub fn distance(&self, other: &GlobalEmbedding) -> f64 {
        if self.is_zero() || other.is_zero() {
            return ZERO_EMBEDDING_DISTANCE;
        }
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// IDF-weighted word histogram, L2-normalized.
pub fn embed_bow(descriptors: &[BinaryDescriptor], vocab: &Vocabulary) -> GlobalEmbedding {
    let mut e = GlobalEmbedding::zeros(EmbeddingVariant::Bow, vocab.len());
    for d in descriptors {
        e.values[vocab.word(d)] += 1.0;
    }
    for (v, w) in e.values.iter_mut().zip(&vocab.idf) {
        *v *= w;
    }
    e.normalized()
}

fn signed_bit(d: &BinaryDescriptor, b: usize) -> f64 {
    if d.bit(b) {
        1.0
    } else {
        -1.0
    }
}

/// Per-word residual sums of descriptors mapped to {-1, +1}, with
/// intra-normalization per word and a final global L2 normalization.
///
/// Residuals are taken against the word means when the vocabulary has
/// them. The binary centroid alone is a poor anchor: its minority bits
/// give every image the same residual direction in each word.
pub fn embed_vlad(descriptors: &[BinaryDescriptor], vocab: &Vocabulary) -> GlobalEmbedding {
    let mut e = GlobalEmbedding::zeros(EmbeddingVariant::Vlad, vocab.len() * DESCRIPTOR_BITS);
    for d in descriptors {
        let w = vocab.word(d);
        let block = &mut e.values[w * DESCRIPTOR_BITS..(w + 1) * DESCRIPTOR_BITS];
        if let Some(mean) = vocab.word_means.get(w) {
            for (b, (v, m)) in block.iter_mut().zip(mean).enumerate() {
                *v += signed_bit(d, b) - m;
            }
            continue;
        }
        // (+/-1) - (+/-1) is nonzero only where the bits differ
        let diff = BinaryDescriptor(std::array::from_fn(|i| d.0[i] ^ vocab.centroids[w].0[i]));
        for (b, v) in block.iter_mut().enumerate() {
            if diff.bit(b) {
                *v += if d.bit(b) { 2.0 } else { -2.0 };
            }
        }
    }
    for block in e.values.chunks_exact_mut(DESCRIPTOR_BITS) {
        let n = block.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            block.iter_mut().for_each(|v| *v /= n);
        }
    }
    e.normalized()
}

pub fn embed(
    variant: EmbeddingVariant,
    descriptors: &[BinaryDescriptor],
    vocab: &Vocabulary,
) -> GlobalEmbedding {
    match variant {
        EmbeddingVariant::Bow => embed_bow(descriptors, vocab),
        EmbeddingVariant::Vlad => embed_vlad(descriptors, vocab),
    }
}

/// Exhaustive-search index over database embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    variant: EmbeddingVariant,
    dim: usize,
    entries: Vec<(u32, GlobalEmbedding)>,
}

impl RetrievalIndex {
    pub fn new(variant: EmbeddingVariant, entries: Vec<(u32, GlobalEmbedding)>) -> Result<Self> {
        let dim = entries.first().map_or(0, |e| e.1.values.len());
        for (id, e) in &entries {
            if e.variant != variant || e.values.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "embedding of frame {id} is {} x {}, index is {variant} x {dim}",
                    e.variant,
                    e.values.len()
                )));
            }
        }
        Ok(RetrievalIndex {
            variant,
            dim,
            entries,
        })
    }

    pub fn variant(&self) -> EmbeddingVariant {
        self.variant
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u32, GlobalEmbedding)] {
        &self.entries
    }

    fn check(&self, q: &GlobalEmbedding) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if q.variant != self.variant || q.values.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "query embedding is {} x {}, index is {} x {}",
                q.variant,
                q.values.len(),
                self.variant,
                self.dim
            )));
        }
        Ok(())
    }

    /// Results ordered by distance, then zero embeddings last, then frame id.
    pub fn query_topk(&self, q: &GlobalEmbedding, k: usize) -> Result<Vec<(u32, f64)>> {
        self.check(q)?;
        let mut scored: Vec<(f64, bool, u32)> = self
            .entries
            .iter()
            .map(|(id, e)| (q.distance(e), e.is_zero(), *id))
            .collect();
        scored.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        Ok(scored.into_iter().take(k).map(|(d, _, id)| (id, d)).collect())
    }

    pub fn query_top1(&self, q: &GlobalEmbedding) -> Result<(u32, f64)> {
        self.check(q)?;
        let mut best: Option<(f64, bool, u32)> = None;
        for (id, e) in &self.entries {
            let key = (q.distance(e), e.is_zero(), *id);
            let better = match best {
                None => true,
                Some(b) => key
                    .0
                    .total_cmp(&b.0)
                    .then(key.1.cmp(&b.1))
                    .then(key.2.cmp(&b.2))
                    .is_lt(),
            };
            if better {
                best = Some(key);
            }
        }
        let (d, _, id) = best.unwrap();
        Ok((id, d))
    }
}

/// `count` and `dim` as big-endian u32, then row-major big-endian f64.
pub fn encode_embeddings(rows: &[GlobalEmbedding]) -> Vec<u8> {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut out = Vec::with_capacity(8 + 8 * dim * rows.len());
    out.extend_from_slice(&(rows.len() as u32).to_be_bytes());
    out.extend_from_slice(&(dim as u32).to_be_bytes());
    for r in rows {
        for v in &r.values {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

pub fn decode_embeddings(
    bytes: &[u8],
    variant: EmbeddingVariant,
    path: &Path,
) -> Result<Vec<GlobalEmbedding>> {
    if bytes.len() < 8 {
        return Err(Error::format(path, "truncated embedding header"));
    }
    let count = u32::from_be_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 8 * count * dim {
        return Err(Error::format(path, "embedding dump size disagrees with header"));
    }
    let vals: Vec<f64> = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
        .collect();
    Ok(vals
        .chunks(dim.max(1))
        .take(count)
        .map(|row| GlobalEmbedding {
            variant,
            values: if dim == 0 { Vec::new() } else { row.to_vec() },
        })
        .collect())
}

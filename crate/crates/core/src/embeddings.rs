//! Sentence vectors, the feature-hashing fallback embedder and the distance
//! metrics used by clustering.

use std::ops::Index;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::labeling::{is_verb_form, lemmatize, AUXILIARIES, DETERMINERS, PARTICLES};
use crate::provider::{Provider, ProviderError};
use crate::text::{parse_char_id, tokenize};
use crate::Scalar;

/// Default dimension of the hashing embedder.
pub const DEFAULT_HASH_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VectorError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding provider failed at batch index {index}: {source}")]
    Provider {
        index: usize,
        #[source]
        source: ProviderError,
    },
    #[error("batch index {index}: vector has dimension {got}, expected {expected}")]
    Dimension { index: usize, got: usize, expected: usize },
    #[error("batch index {index}: {source}")]
    Invalid {
        index: usize,
        #[source]
        source: VectorError,
    },
}

/// Dense vector of finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector<T = f64> {
    values: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, VectorError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![T::zero(); dim] }
    }

    pub fn from_f64(values: &[f64]) -> Result<Self, VectorError> {
        Self::new(values.iter().map(|v| T::of(*v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }

    pub fn dot(&self, other: &Self) -> Result<T, VectorError> {
        check_dims(self, other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| *a * *b).sum())
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }

    /// Unit-length copy; zero vectors are returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n.is_zero() {
            return self.clone();
        }
        Self { values: self.values.iter().map(|v| *v / n).collect() }
    }

    /// Arithmetic mean of equal-dimension vectors.
    pub fn mean<'a, I>(vectors: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a Self>,
    {
        let mut iter = vectors.into_iter();
        let first = iter.next()?;
        let mut sum = first.values.clone();
        let mut count = 1usize;
        for v in iter {
            for (s, x) in sum.iter_mut().zip(&v.values) {
                *s += *x;
            }
            count += 1;
        }
        let n = T::of_usize(count);
        Some(Self { values: sum.into_iter().map(|s| s / n).collect() })
    }

    pub fn cast<U: Scalar>(&self) -> Vector<U> {
        Vector { values: self.values.iter().map(|v| U::of(v.as_f64())).collect() }
    }
}

impl<T> Index<usize> for Vector<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

fn check_dims<T: Scalar>(u: &Vector<T>, v: &Vector<T>) -> Result<(), VectorError> {
    if u.dim() != v.dim() {
        return Err(VectorError::DimMismatch(u.dim(), v.dim()));
    }
    Ok(())
}

/// `1 − u·v / (‖u‖‖v‖)`, in `[0, 2]`.
pub fn cosine_distance<T: Scalar>(u: &Vector<T>, v: &Vector<T>) -> Result<T, VectorError> {
    check_dims(u, v)?;
    let (nu, nv) = (u.norm(), v.norm());
    if nu.is_zero() || nv.is_zero() {
        return Err(VectorError::ZeroVector);
    }
    let cos = u.dot(v)? / (nu * nv);
    let cos = cos.max(-T::one()).min(T::one());
    Ok(T::one() - cos)
}

pub fn euclidean_distance<T: Scalar>(u: &Vector<T>, v: &Vector<T>) -> Result<T, VectorError> {
    Ok(squared_euclidean(u, v)?.sqrt())
}

pub fn squared_euclidean<T: Scalar>(u: &Vector<T>, v: &Vector<T>) -> Result<T, VectorError> {
    check_dims(u, v)?;
    Ok(u.values.iter().zip(&v.values).map(|(a, b)| (*a - *b) * (*a - *b)).sum())
}

/// Distance used for clustering and classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    #[default]
    Cosine,
}

impl Metric {
    pub fn distance<T: Scalar>(self, u: &Vector<T>, v: &Vector<T>) -> Result<T, VectorError> {
        match self {
            Metric::Euclidean => euclidean_distance(u, v),
            Metric::Cosine => cosine_distance(u, v),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric {other:?} (expected euclidean or cosine)")),
        }
    }
}

/// Output of [`hash_embed`].
#[derive(Debug, Clone, PartialEq)]
pub struct HashedText<T> {
    pub vector: Vector<T>,
    /// Set when the text had no word features; `vector` is then all zeros.
    pub empty: bool,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

const PRONOUNS_AND_CONJUNCTIONS: &[&str] = &[
    "i", "me", "you", "he", "him", "she", "it", "we", "us", "they", "them", "and", "or", "but", "nor", "as", "if",
    "of", "than", "then", "so",
];

fn is_function_word(word: &str) -> bool {
    DETERMINERS.contains(&word) || PARTICLES.contains(&word) || PRONOUNS_AND_CONJUNCTIONS.contains(&word)
}

fn features(text: &str) -> Vec<String> {
    let words: Vec<String> = tokenize(text)
        .into_iter()
        .filter(|t| t.is_word())
        .map(|t| {
            let word = crate::text::strip_possessive(t.text);
            if parse_char_id(word).is_some() {
                "CHAR".to_owned()
            } else {
                t.text.to_lowercase()
            }
        })
        .collect();
    let mut out: Vec<String> = words
        .iter()
        .filter(|w| w.as_str() != "CHAR" && !is_function_word(w))
        .map(|w| format!("u:{w}"))
        .collect();
    out.extend(words.windows(2).map(|w| format!("b:{} {}", w[0], w[1])));
    out.extend(
        words
            .iter()
            .filter(|w| is_verb_form(w))
            .map(|w| lemmatize(w))
            .filter(|l| !AUXILIARIES.contains(&l.as_str()))
            .map(|l| format!("l:{l}")),
    );
    out
}

/// Feature-hashing sentence embedding.
///
/// Features are lowercased content-word unigrams, word bigrams with `CHARn`
/// tokens masked to `CHAR`, and the lemma of every non-auxiliary verb form. Each feature adds ±1 to one of `dim` buckets chosen
/// by a 64-bit FNV-1a hash (low bits pick the bucket, the top bit the sign).
/// The result is L2-normalized, so any text with at least one word has unit
/// norm.
///
/// # Panics
///
/// When `dim < 16`.
pub fn hash_embed<T: Scalar>(text: &str, dim: usize) -> HashedText<T> {
    assert!(dim >= 16, "hash_embed needs dim >= 16, got {dim}");
    let feats = features(text);
    let hashes: Vec<u64> = feats.iter().map(|f| fnv1a(f.as_bytes())).collect();
    let mut values = vec![T::zero(); dim];
    for h in &hashes {
        let idx = (h % dim as u64) as usize;
        if h >> 63 == 1 {
            values[idx] -= T::one();
        } else {
            values[idx] += T::one();
        }
    }
    if !hashes.is_empty() && values.iter().all(|v| v.is_zero()) {
        // signs cancelled out exactly; fall back to unsigned counts
        for h in &hashes {
            values[(h % dim as u64) as usize] += T::one();
        }
    }
    let vector = Vector { values }.normalized();
    HashedText { empty: feats.is_empty(), vector }
}

/// Where vectors come from.
pub enum Embedder<'a> {
    Builtin { dim: usize },
    External(&'a mut dyn Provider),
}

impl Embedder<'_> {
    /// Embeds texts in order. All vectors share one dimension.
    pub fn embed_batch<T: Scalar>(&mut self, texts: &[String]) -> Result<Vec<Vector<T>>, EmbedError> {
        match self {
            Embedder::Builtin { dim } => {
                let dim = *dim;
                Ok(texts
                    .par_iter()
                    .map(|t| {
                        let hashed = hash_embed(t, dim);
                        if hashed.empty {
                            log::warn!("no word features in {t:?}; using a zero vector");
                        }
                        hashed.vector
                    })
                    .collect())
            }
            Embedder::External(provider) => {
                if texts.is_empty() {
                    return Ok(Vec::new());
                }
                let expected = provider.dim().map_err(|source| EmbedError::Provider { index: 0, source })?;
                let raw = provider.embed(texts).map_err(|e| match e {
                    ProviderError::Batch { index, source } => EmbedError::Provider { index, source: *source },
                    other => EmbedError::Provider { index: 0, source: other },
                })?;
                raw.into_iter()
                    .enumerate()
                    .map(|(index, values)| {
                        if values.len() != expected {
                            return Err(EmbedError::Dimension { index, got: values.len(), expected });
                        }
                        Vector::from_f64(&values).map_err(|source| EmbedError::Invalid { index, source })
                    })
                    .collect()
            }
        }
    }

    pub fn dim(&mut self) -> Result<usize, ProviderError> {
        match self {
            Embedder::Builtin { dim } => Ok(*dim),
            Embedder::External(p) => p.dim(),
        }
    }
}

/// A relational instance's vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSentence<T = f64> {
    pub instance_id: String,
    pub vector: Vector<T>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> Vector<f64> {
        Vector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!(cosine_distance(&v(&[0.3, 0.2, 0.25, 0.5]), &v(&[0.3, 0.2, 0.25, 0.5])).unwrap().abs() < 1e-15);
        assert_eq!(cosine_distance(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 1.0);
        let d = cosine_distance(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
        assert_eq!(cosine_distance(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(VectorError::ZeroVector));
        assert_eq!(cosine_distance(&v(&[1.0]), &v(&[1.0, 0.0])), Err(VectorError::DimMismatch(1, 2)));
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean_distance(&v(&[0.0, 0.0]), &v(&[3.0, 4.0])).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&v(&[1.5, 2.0]), &v(&[1.5, 2.0])).unwrap(), 0.0);
        assert!(euclidean_distance(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
        let f: Vector<f32> = Vector::new(vec![0.0, 0.0]).unwrap();
        let g: Vector<f32> = Vector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(euclidean_distance(&f, &g).unwrap(), 5.0f32);
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(Vector::<f64>::new(vec![1.0, f64::NAN]), Err(VectorError::NonFinite(1)));
    }

    #[test]
    fn hash_embed_is_deterministic_and_normalized() {
        let a: HashedText<f64> = hash_embed("CHAR1 smiled at CHAR2.", 256);
        let b: HashedText<f64> = hash_embed("CHAR1 smiled at CHAR2.", 256);
        assert_eq!(a, b);
        assert!((a.vector.norm() - 1.0).abs() < 1e-9);
        assert!(!a.empty);
    }

    #[test]
    fn hash_embed_empty_text() {
        let e: HashedText<f64> = hash_embed(" ... !", 32);
        assert!(e.empty);
        assert!(e.vector.is_zero());
        assert_eq!(e.vector.dim(), 32);
    }

    #[test]
    fn masking_ignores_which_characters_appear() {
        let a: HashedText<f64> = hash_embed("CHAR3 looked at CHAR7's hat", 64);
        let b: HashedText<f64> = hash_embed("CHAR7 looked at CHAR12's hat", 64);
        assert_eq!(a.vector, b.vector);
    }

    #[test]
    fn disjoint_feature_sets_match_dot_product_oracle() {
        // No shared unigram or bigram.
        let a: HashedText<f64> = hash_embed("birds sing loudly", 256);
        let b: HashedText<f64> = hash_embed("rivers flow north", 256);
        let dot: f64 = (0..256).map(|i| a.vector[i] * b.vector[i]).sum();
        let na: f64 = (0..256).map(|i| a.vector[i] * a.vector[i]).sum::<f64>().sqrt();
        let nb: f64 = (0..256).map(|i| b.vector[i] * b.vector[i]).sum::<f64>().sqrt();
        let expected = 1.0 - dot / (na * nb);
        let got = cosine_distance(&a.vector, &b.vector).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn paraphrases_are_closer_than_unrelated_sentences() {
        let embed = |t: &str| hash_embed::<f64>(t, DEFAULT_HASH_DIM).vector;
        let p1 = embed("CHAR0 smiled warmly at CHAR1");
        let p2 = embed("CHAR4 smiled kindly at CHAR2");
        let other = embed("CHAR0 walked home with CHAR1 through the rain");
        let close = cosine_distance(&p1, &p2).unwrap();
        let far = cosine_distance(&p1, &other).unwrap();
        // frozen from a first run of the fixture
        assert!(close < far, "{close} vs {far}");
    }

    #[test]
    fn builtin_batch_is_order_preserving() {
        let texts: Vec<String> = ["a b c", "CHAR0 met CHAR1", "a b c"].iter().map(|s| s.to_string()).collect();
        let mut e = Embedder::Builtin { dim: 32 };
        let out: Vec<Vector<f64>> = e.embed_batch(&texts).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[2]);
        assert!(e.embed_batch::<f64>(&[]).unwrap().is_empty());
        let split: Vec<Vector<f64>> =
            [e.embed_batch(&texts[..1]).unwrap(), e.embed_batch(&texts[1..]).unwrap()].concat();
        assert_eq!(split, out);
    }

    #[test]
    fn mean_and_cast() {
        let m = Vector::mean([&v(&[0.0, 2.0]), &v(&[2.0, 4.0])]).unwrap();
        assert_eq!(m, v(&[1.0, 3.0]));
        assert!(Vector::<f64>::mean(std::iter::empty()).is_none());
        let f: Vector<f32> = m.cast();
        assert_eq!(f.as_slice(), &[1.0f32, 3.0]);
    }

    proptest! {
        #[test]
        fn euclidean_matches_summation_oracle(a in proptest::collection::vec(-10.0f64..10.0, 8), b in proptest::collection::vec(-10.0f64..10.0, 8)) {
            let mut acc = 0.0;
            for i in 0..8 { let d = a[i] - b[i]; acc += d * d; }
            let got = euclidean_distance(&v(&a), &v(&b)).unwrap();
            prop_assert!((got - acc.sqrt()).abs() < 1e-12);
            prop_assert_eq!(got, euclidean_distance(&v(&b), &v(&a)).unwrap());
        }

        #[test]
        fn cosine_is_symmetric_and_bounded(a in proptest::collection::vec(-1.0f64..1.0, 4), b in proptest::collection::vec(-1.0f64..1.0, 4)) {
            let (a, b) = (v(&a), v(&b));
            prop_assume!(!a.is_zero() && !b.is_zero());
            let d = cosine_distance(&a, &b).unwrap();
            prop_assert!((0.0..=2.0).contains(&d));
            prop_assert!((d - cosine_distance(&b, &a).unwrap()).abs() < 1e-15);
            let scaled = Vector::new(a.as_slice().iter().map(|x| x * 3.5).collect()).unwrap();
            prop_assert!(cosine_distance(&a, &scaled).unwrap() < 1e-12);
        }

        #[test]
        fn nonempty_text_has_unit_norm(words in proptest::collection::vec("[a-z]{1,6}", 1..10)) {
            let h: HashedText<f64> = hash_embed(&words.join(" "), 16);
            prop_assert!((h.vector.norm() - 1.0).abs() < 1e-9);
        }
    }
}

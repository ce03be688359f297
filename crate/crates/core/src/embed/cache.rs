use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use super::{EmbedError, Embedder, Embedding};
use crate::scalar::Real;

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    vector: Vec<f64>,
}

/// Sentence-hash to vector map, tied to one backend fingerprint.
///
/// Stored as JSON lines: a `{fingerprint, dim}` header, then one
/// `{key, vector}` object per sentence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingCache {
    pub fingerprint: String,
    /// 0 until the first vector is stored when the backend learns its
    /// dimension lazily.
    pub dim: usize,
    entries: HashMap<u64, Vec<f64>>,
}

fn sentence_key(text: &str) -> u64 {
    xxh3_64(text.as_bytes())
}

impl EmbeddingCache {
    pub fn new(fingerprint: impl Into<String>, dim: usize) -> Self {
        EmbeddingCache { fingerprint: fingerprint.into(), dim, entries: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&[f64]> {
        self.entries.get(&sentence_key(text)).map(Vec::as_slice)
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f64>) -> Result<(), EmbedError> {
        if self.dim == 0 {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(EmbedError::DimMismatch(self.dim, vector.len()));
        }
        self.entries.insert(sentence_key(text), vector);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let mut w = BufWriter::new(File::create(path)?);
        let to_cache = |e: serde_json::Error| EmbedError::Cache(e.to_string());
        serde_json::to_writer(&mut w, &Header { fingerprint: self.fingerprint.clone(), dim: self.dim })
            .map_err(to_cache)?;
        w.write_all(b"\n")?;
        let mut keys: Vec<&u64> = self.entries.keys().collect();
        keys.sort_unstable();
        for k in keys {
            serde_json::to_writer(&mut w, &Entry { key: format!("{k:016x}"), vector: self.entries[k].clone() })
                .map_err(to_cache)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a cache file. Returns `Ok(None)` when its fingerprint differs
    /// from `expected_fingerprint`.
    pub fn load(path: &Path, expected_fingerprint: &str) -> Result<Option<Self>, EmbedError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let bad = |m: String| EmbedError::Cache(m);
        let header: Header = match lines.next() {
            Some(line) => serde_json::from_str(&line?).map_err(|e| bad(e.to_string()))?,
            None => return Err(bad("empty cache file".into())),
        };
        if header.fingerprint != expected_fingerprint {
            return Ok(None);
        }
        let mut cache = EmbeddingCache::new(header.fingerprint, header.dim);
        for line in lines {
            let entry: Entry = serde_json::from_str(&line?).map_err(|e| bad(e.to_string()))?;
            let key = u64::from_str_radix(&entry.key, 16).map_err(|e| bad(e.to_string()))?;
            if entry.vector.len() != header.dim {
                return Err(EmbedError::DimMismatch(header.dim, entry.vector.len()));
            }
            cache.entries.insert(key, entry.vector);
        }
        Ok(Some(cache))
    }
}

/// Wraps a backend and memoizes its vectors in an [`EmbeddingCache`].
pub struct CachedEmbedder<'a, T: Real> {
    inner: &'a dyn Embedder<T>,
    cache: Mutex<EmbeddingCache>,
}

impl<'a, T: Real> CachedEmbedder<'a, T> {
    pub fn new(inner: &'a dyn Embedder<T>, cache: Option<EmbeddingCache>) -> Self {
        let fp = inner.fingerprint();
        let cache = cache.filter(|c| c.fingerprint == fp).unwrap_or_else(|| EmbeddingCache::new(fp, inner.dim()));
        CachedEmbedder { inner, cache: Mutex::new(cache) }
    }

    pub fn into_cache(self) -> EmbeddingCache {
        self.cache.into_inner().expect("cache lock")
    }
}

impl<T: Real> Embedder<T> for CachedEmbedder<'_, T> {
    fn dim(&self) -> usize {
        match self.inner.dim() {
            0 => self.cache.lock().expect("cache lock").dim,
            d => d,
        }
    }

    fn embed(&self, text: &str) -> Result<Embedding<T>, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding<T>>, EmbedError> {
        let missing: Vec<&str> = {
            let cache = self.cache.lock().expect("cache lock");
            texts.iter().copied().filter(|t| cache.get(t).is_none()).collect()
        };
        if !missing.is_empty() {
            let fresh = self.inner.embed_batch(&missing)?;
            let mut cache = self.cache.lock().expect("cache lock");
            for (t, e) in missing.iter().zip(fresh) {
                cache.insert(t, e.values.iter().map(|v| v.as_f64()).collect())?;
            }
        }
        let cache = self.cache.lock().expect("cache lock");
        Ok(texts
            .iter()
            .map(|t| Embedding::new(cache.get(t).expect("filled above").iter().map(|v| T::of(*v)).collect()))
            .collect())
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingEmbedder;

    #[test]
    fn cached_vectors_match_and_persist() {
        let h = HashingEmbedder::new(32, 1);
        let cached = CachedEmbedder::<f64>::new(&h, None);
        let a = cached.embed("a; b").unwrap();
        assert_eq!(a, Embedder::<f64>::embed(&h, "a; b").unwrap());
        assert_eq!(cached.embed("a; b").unwrap(), a);
        let cache = cached.into_cache();
        assert_eq!(cache.len(), 1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        cache.save(&path).unwrap();
        let back = EmbeddingCache::load(&path, &Embedder::<f64>::fingerprint(&h)).unwrap().unwrap();
        assert_eq!(back, cache);
        assert!(EmbeddingCache::load(&path, "other").unwrap().is_none());
    }

    #[test]
    fn dimension_is_learned_from_the_first_vector() {
        let mut c = EmbeddingCache::new("svc", 0);
        c.insert("a", vec![1.0, 2.0]).unwrap();
        assert_eq!(c.dim, 2);
        assert!(matches!(c.insert("b", vec![1.0]), Err(EmbedError::DimMismatch(2, 1))));
    }
}

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, Embedder, Embedding};
use crate::scalar::Real;

/// Request body of `POST /embed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub sentences: Vec<String>,
}

/// Response body of `POST /embed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub embeddings: Vec<Vec<f64>>,
    #[serde(default)]
    pub truncated: usize,
}

/// Client for an HTTP embedding server.
///
/// The dimension is learned from the first response; a later response with a
/// different dimension is an error.
#[derive(Debug)]
pub struct ServiceEmbedder {
    endpoint: String,
    agent: ureq::Agent,
    dim: Mutex<Option<usize>>,
    max_batch: usize,
}

impl ServiceEmbedder {
    /// `base_url` is e.g. `http://127.0.0.1:8080`; requests go to
    /// `{base_url}/embed`.
    pub fn new(base_url: &str) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(60))).build().into();
        ServiceEmbedder {
            endpoint: format!("{}/embed", base_url.trim_end_matches('/')),
            agent,
            dim: Mutex::new(None),
            max_batch: 256,
        }
    }

    /// Expects a fixed dimension instead of learning it.
    pub fn with_dim(self, dim: usize) -> Self {
        *self.dim.lock().expect("dim lock") = Some(dim);
        self
    }

    fn request(&self, sentences: &[&str]) -> Result<Vec<Embedding<f64>>, EmbedError> {
        let body = EmbedRequest { sentences: sentences.iter().map(|s| (*s).to_owned()).collect() };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| EmbedError::Service(format!("POST {}: {e}", self.endpoint)))?;
        let parsed: EmbedResponse =
            resp.body_mut().read_json().map_err(|e| EmbedError::Service(format!("malformed response: {e}")))?;
        if parsed.embeddings.len() != sentences.len() {
            return Err(EmbedError::Service(format!(
                "asked for {} embeddings, got {}",
                sentences.len(),
                parsed.embeddings.len()
            )));
        }
        {
            let mut dim = self.dim.lock().expect("dim lock");
            match *dim {
                Some(d) if d != parsed.dim => return Err(EmbedError::DimMismatch(d, parsed.dim)),
                None => *dim = Some(parsed.dim),
                _ => {}
            }
        }
        parsed
            .embeddings
            .into_iter()
            .map(|v| {
                if v.len() != parsed.dim {
                    return Err(EmbedError::DimMismatch(parsed.dim, v.len()));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EmbedError::Service("non-finite embedding value".into()));
                }
                Ok(Embedding::new(v))
            })
            .collect()
    }
}

impl<T: Real> Embedder<T> for ServiceEmbedder {
    fn dim(&self) -> usize {
        self.dim.lock().expect("dim lock").unwrap_or(0)
    }

    fn embed(&self, text: &str) -> Result<Embedding<T>, EmbedError> {
        Ok(Embedder::<T>::embed_batch(self, &[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding<T>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.max_batch) {
            for e in self.request(chunk)? {
                out.push(Embedding::new(e.values.into_iter().map(T::of).collect()));
            }
        }
        Ok(out)
    }

    fn fingerprint(&self) -> String {
        format!("service:{}", self.endpoint)
    }
}

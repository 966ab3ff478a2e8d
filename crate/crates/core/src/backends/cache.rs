use std::collections::HashMap;
use std::sync::Arc;

use super::{digest_text, BackendError, EmbedKind, Embedder, EmbeddingVector, SharedMap};

/// Memoizes an embedder by `(kind, content digest)`. Concurrent inserts of the
/// same key are last-write-wins; values are deterministic so the race is benign.
pub struct CachingEmbedder {
    inner: Arc<dyn Embedder>,
    cache: SharedMap<(EmbedKind, String), EmbeddingVector>,
}

impl CachingEmbedder {
    pub fn new(inner: Arc<dyn Embedder>) -> Self {
        CachingEmbedder { inner, cache: SharedMap::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Embedder for CachingEmbedder {
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str, kind: EmbedKind) -> Result<EmbeddingVector, BackendError> {
        let key = (kind, digest_text(text));
        if let Some(v) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text, kind)?;
        self.cache.write().expect("cache lock").insert(key, v.clone());
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::backends::NgramEmbedder;

    struct Counting {
        inner: NgramEmbedder,
        calls: AtomicUsize,
    }

    impl Embedder for Counting {
        fn fingerprint(&self) -> String {
            self.inner.fingerprint()
        }
        fn dimension(&self) -> usize {
            self.inner.dimension()
        }
        fn embed(&self, text: &str, kind: EmbedKind) -> Result<EmbeddingVector, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.embed(text, kind)
        }
    }

    #[test]
    fn repeated_content_hits_cache() {
        let counting = Arc::new(Counting { inner: NgramEmbedder::default(), calls: AtomicUsize::new(0) });
        let cache = CachingEmbedder::new(counting.clone());
        let a = cache.embed("hello world", EmbedKind::Text).unwrap();
        let b = cache.embed("hello world", EmbedKind::Text).unwrap();
        cache.embed("hello world", EmbedKind::Code).unwrap();
        assert_eq!(a, b);
        assert_eq!(counting.calls.load(Ordering::SeqCst), 2);
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn concurrent_readers_agree() {
        let cache = Arc::new(CachingEmbedder::new(Arc::new(NgramEmbedder::default())));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let c = cache.clone();
                std::thread::spawn(move || c.embed("shared text", EmbedKind::Code).unwrap())
            })
            .collect();
        let vs: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(vs.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(cache.len(), 1);
    }
}

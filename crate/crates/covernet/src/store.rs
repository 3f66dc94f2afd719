//! Persistent embedding store and exact Euclidean query engine.
//!
//! Reference embeddings are extracted offline and kept as one contiguous
//! row-major matrix; a query is a single pass of f64-accumulated dot
//! products using `d^2 = 2 - 2 <q, r>` for unit vectors. Ties break by
//! reference id so results never depend on chunking or thread count.
//!
//! File layout ("CVRE", little-endian):
//!
//! ```text
//! magic "CVRE" | version u32 = 1 | count u64 | dim u32
//! checkpoint_hash (u16 len + UTF-8, may be empty)
//! per record: track_id (u16 len + UTF-8) | f32 x dim
//! ```

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::binio;
use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::metrics::RankingResult;
use crate::par;

pub const STORE_MAGIC: &[u8; 4] = b"CVRE";
pub const STORE_VERSION: u32 = 1;
/// Row-norm tolerance accepted on append and load.
pub const STORE_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    /// Row-major `[N x dim]`.
    matrix: Vec<f32>,
    /// Hash of the checkpoint that produced these embeddings.
    pub checkpoint_hash: String,
}

impl EmbeddingStore {
    pub fn new(dim: usize, checkpoint_hash: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingStore {
            dim,
            ids: Vec::new(),
            matrix: Vec::new(),
            checkpoint_hash: checkpoint_hash.into(),
        })
    }

    pub fn from_embeddings(
        embeddings: &[Embedding],
        dim: usize,
        checkpoint_hash: impl Into<String>,
    ) -> Result<Self> {
        let mut store = EmbeddingStore::new(dim, checkpoint_hash)?;
        for e in embeddings {
            store.append(e)?;
        }
        Ok(store)
    }

    /// Number of stored embeddings.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector_of(&self, id: &str) -> Option<&[f32]> {
        self.ids.iter().position(|x| x == id).map(|i| self.row(i))
    }

    /// Append one embedding; on any failure the store is unchanged.
    pub fn append(&mut self, embedding: &Embedding) -> Result<()> {
        if embedding.dim() != self.dim {
            return Err(Error::Shape(format!(
                "embedding {:?} has dim {}, store has {}",
                embedding.track_id,
                embedding.dim(),
                self.dim
            )));
        }
        let norm = crate::nncore::l2_norm(&embedding.vector);
        if (norm - 1.0).abs() > STORE_NORM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "embedding {:?} has norm {norm:.6}, expected 1",
                embedding.track_id
            )));
        }
        if self.ids.contains(&embedding.track_id) {
            return Err(Error::Data(format!("duplicate track id {:?}", embedding.track_id)));
        }
        self.ids.push(embedding.track_id.clone());
        self.matrix.extend_from_slice(&embedding.vector);
        Ok(())
    }

    fn squared_distances(&self, query: &[f32]) -> Vec<f32> {
        let dim = self.dim;
        let matrix = &self.matrix;
        par::map_indexed(self.len(), move |i| {
            let row = &matrix[i * dim..(i + 1) * dim];
            let mut dot = 0.0f64;
            for (&q, &r) in query.iter().zip(row) {
                dot += f64::from(q) * f64::from(r);
            }
            (2.0 - 2.0 * dot).max(0.0) as f32
        })
    }
}

pub fn store_save(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    binio::write_magic(&mut w, STORE_MAGIC)?;
    binio::write_u32(&mut w, STORE_VERSION)?;
    binio::write_u64(&mut w, store.len() as u64)?;
    binio::write_u32(&mut w, store.dim as u32)?;
    binio::write_str(&mut w, &store.checkpoint_hash)?;
    for i in 0..store.len() {
        binio::write_str(&mut w, &store.ids[i])?;
        binio::write_f32_slice(&mut w, store.row(i))?;
    }
    w.flush()?;
    Ok(())
}

pub fn store_load(path: &Path) -> Result<EmbeddingStore> {
    let mut r = BufReader::new(File::open(path)?);
    binio::expect_magic(&mut r, STORE_MAGIC, "embedding store")?;
    let version = binio::read_u32(&mut r)?;
    if version != STORE_VERSION {
        return Err(Error::Format(format!("unsupported store version {version}")));
    }
    let count = binio::read_u64(&mut r)? as usize;
    let dim = binio::read_u32(&mut r)? as usize;
    if dim == 0 {
        return Err(Error::Format("store has zero dimension".into()));
    }
    let checkpoint_hash = binio::read_str(&mut r)?;
    let mut ids = Vec::with_capacity(count);
    let mut matrix = Vec::with_capacity(count.saturating_mul(dim));
    let mut seen = HashSet::with_capacity(count);
    for _ in 0..count {
        let id = binio::read_str(&mut r)?;
        if !seen.insert(id.clone()) {
            return Err(Error::Format(format!("store contains duplicate id {id:?}")));
        }
        ids.push(id);
        matrix.extend(binio::read_f32_vec(&mut r, dim)?);
    }
    binio::expect_eof(&mut r, "embedding store")?;
    Ok(EmbeddingStore { dim, ids, matrix, checkpoint_hash })
}

/// Exact top-k by squared Euclidean distance, ascending, ties by id.
/// Returns all rows when `k >= len`; an empty store yields an empty list.
pub fn query_topk(query: &Embedding, store: &EmbeddingStore, k: usize) -> Result<Vec<(String, f32)>> {
    if store.is_empty() {
        return Ok(Vec::new());
    }
    if query.dim() != store.dim {
        return Err(Error::Shape(format!(
            "query dim {} does not match store dim {}",
            query.dim(),
            store.dim
        )));
    }
    if k == 0 {
        return Err(Error::Config("query_topk: k must be at least 1".into()));
    }
    let dists = store.squared_distances(&query.vector);
    let mut order: Vec<u32> = (0..store.len() as u32).collect();
    let k = k.min(store.len());
    let by_dist_then_id = |&a: &u32, &b: &u32| {
        dists[a as usize]
            .partial_cmp(&dists[b as usize])
            .unwrap()
            .then_with(|| store.ids[a as usize].cmp(&store.ids[b as usize]))
    };
    if k < store.len() {
        order.select_nth_unstable_by(k - 1, by_dist_then_id);
        order.truncate(k);
    }
    order.sort_unstable_by(by_dist_then_id);
    Ok(order
        .into_iter()
        .map(|i| (store.ids[i as usize].clone(), dists[i as usize]))
        .collect())
}

/// Track-id to work-id labels used to flag covers in rankings.
pub struct TrackLabels<'a>(pub &'a HashMap<String, String>);

impl TrackLabels<'_> {
    fn work_of(&self, track: &str) -> Result<&str> {
        self.0
            .get(track)
            .map(String::as_str)
            .ok_or_else(|| Error::Data(format!("no work label for track {track:?}")))
    }
}

/// Full ranking of the store for every query, feeding the metric suite.
/// Self-pairs (same track id) are dropped when `exclude_self` is set.
pub fn cross_distances(
    queries: &[Embedding],
    store: &EmbeddingStore,
    exclude_self: bool,
    labels: &TrackLabels<'_>,
) -> Result<Vec<RankingResult>> {
    for q in queries {
        if q.dim() != store.dim {
            return Err(Error::Shape(format!(
                "query {:?} dim {} does not match store dim {}",
                q.track_id,
                q.dim(),
                store.dim
            )));
        }
    }
    let results: Vec<Result<RankingResult>> = par::map_indexed(queries.len(), |qi| {
        let q = &queries[qi];
        let q_work = labels.work_of(&q.track_id)?;
        let dists = store.squared_distances(&q.vector);
        let mut order: Vec<u32> = (0..store.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| {
            dists[a as usize]
                .partial_cmp(&dists[b as usize])
                .unwrap()
                .then_with(|| store.ids[a as usize].cmp(&store.ids[b as usize]))
        });
        let mut entries = Vec::with_capacity(store.len());
        for i in order {
            let rid = &store.ids[i as usize];
            if exclude_self && rid == &q.track_id {
                continue;
            }
            let is_cover = labels.work_of(rid)? == q_work && rid != &q.track_id;
            entries.push((rid.clone(), dists[i as usize], is_cover));
        }
        RankingResult::new(q.track_id.clone(), entries)
    });
    results.into_iter().collect()
}

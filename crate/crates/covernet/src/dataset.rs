//! Track/work manifests, dataset-rule filtering and work-disjoint splits.
//!
//! A manifest is JSON Lines, one record per track:
//! `{"track_id": ..., "work_id": ..., "duration_sec": ..., "f0_path": ...}`
//! with an optional `"audio_path"`. Works are the class labels: all covers
//! of one work share a `work_id`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestRecord {
    pub track_id: String,
    pub work_id: String,
    pub duration_sec: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f0_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Manifest { records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !seen.insert(r.track_id.as_str()) {
                return Err(Error::Data(format!("duplicate track_id {:?}", r.track_id)));
            }
            if r.f0_path.is_none() && r.audio_path.is_none() {
                return Err(Error::Data(format!(
                    "track {:?} has neither f0_path nor audio_path",
                    r.track_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Tracks grouped by work, works in first-appearance order, tracks in
    /// manifest order. Deterministic for a given manifest.
    pub fn works(&self) -> Vec<(String, Vec<&ManifestRecord>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<&ManifestRecord>> = BTreeMap::new();
        for r in &self.records {
            if !groups.contains_key(&r.work_id) {
                order.push(r.work_id.clone());
            }
            groups.entry(r.work_id.clone()).or_default().push(r);
        }
        order
            .into_iter()
            .map(|w| {
                let tracks = groups.remove(&w).unwrap_or_default();
                (w, tracks)
            })
            .collect()
    }

    pub fn work_of(&self) -> std::collections::HashMap<String, String> {
        self.records
            .iter()
            .map(|r| (r.track_id.clone(), r.work_id.clone()))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("manifest line {}: {e}", i + 1)))?;
            records.push(record);
        }
        Manifest::new(records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::Data(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Named subset of a manifest, reproducible from its seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Split {
    pub name: String,
    pub seed: u64,
    pub work_ids: Vec<String>,
    pub track_ids: Vec<String>,
}

impl Split {
    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Data(format!("split file: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

pub const DEFAULT_MIN_COVERS: usize = 5;
pub const DEFAULT_MAX_COVERS: usize = 15;
pub const DEFAULT_MIN_DURATION: f64 = 60.0;
pub const DEFAULT_MAX_DURATION: f64 = 300.0;

/// Duration filter per track first, then the cover-count window per work on
/// the surviving tracks. Idempotent.
pub fn filter_manifest(
    manifest: &Manifest,
    min_covers: usize,
    max_covers: usize,
    min_dur: f64,
    max_dur: f64,
) -> Manifest {
    let survivors: Vec<&ManifestRecord> = manifest
        .records
        .iter()
        .filter(|r| r.duration_sec >= min_dur && r.duration_sec <= max_dur)
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &survivors {
        *counts.entry(r.work_id.as_str()).or_default() += 1;
    }
    let records = survivors
        .into_iter()
        .filter(|r| {
            let c = counts[r.work_id.as_str()];
            c >= min_covers && c <= max_covers
        })
        .cloned()
        .collect();
    Manifest { records }
}

pub struct SplitOutcome {
    pub train: Split,
    pub eval: Split,
    /// Works dropped because they had fewer than `covers_per_work` tracks.
    pub skipped_works: Vec<String>,
}

/// Random work-level partition; each kept work contributes exactly
/// `covers_per_work` sampled tracks. Train and eval never share a work.
pub fn split_by_work(
    manifest: &Manifest,
    eval_fraction: f64,
    covers_per_work: usize,
    seed: u64,
) -> Result<SplitOutcome> {
    if !(0.0..1.0).contains(&eval_fraction) {
        return Err(Error::Config(format!(
            "eval_fraction must be in [0,1), got {eval_fraction}"
        )));
    }
    if covers_per_work == 0 {
        return Err(Error::Config("covers_per_work must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = manifest.works();

    let mut eligible = Vec::new();
    let mut skipped_works = Vec::new();
    for (work, tracks) in &groups {
        if tracks.len() >= covers_per_work {
            eligible.push((work.clone(), tracks));
        } else {
            skipped_works.push(work.clone());
        }
    }
    if eligible.is_empty() {
        return Err(Error::Config(format!(
            "no work has {covers_per_work} covers; cannot split"
        )));
    }

    let mut order: Vec<usize> = (0..eligible.len()).collect();
    order.shuffle(&mut rng);
    let eval_count = ((eligible.len() as f64) * eval_fraction).round() as usize;

    let mut train = Split { name: "train".into(), seed, work_ids: vec![], track_ids: vec![] };
    let mut eval = Split { name: "eval".into(), seed, work_ids: vec![], track_ids: vec![] };
    for (rank, &idx) in order.iter().enumerate() {
        let (work, tracks) = &eligible[idx];
        let mut track_idx: Vec<usize> = (0..tracks.len()).collect();
        track_idx.shuffle(&mut rng);
        let chosen: Vec<String> = track_idx[..covers_per_work]
            .iter()
            .map(|&i| tracks[i].track_id.clone())
            .collect();
        let split = if rank < eval_count { &mut eval } else { &mut train };
        split.work_ids.push(work.clone());
        split.track_ids.extend(chosen);
    }
    Ok(SplitOutcome { train, eval, skipped_works })
}

/// Query/reference set constructions for the retrieval experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryReferenceMode {
    /// Fixed covers per query work in the reference; sweep `n`, the covers
    /// contributed by every non-query work, to consolidate other clusters.
    Pushing { query_works: usize, covers_per_query: usize, p: usize, n: usize },
    /// Same construction with `n` fixed and `p` (extra covers of the query
    /// works) swept.
    Pulling { query_works: usize, covers_per_query: usize, p: usize, n: usize },
    /// Plain random track split with a `query:reference` count ratio.
    Ratio { query: u64, reference: u64 },
}

/// Build disjoint query and reference track sets per the requested mode.
pub fn build_query_reference(
    manifest: &Manifest,
    mode: &QueryReferenceMode,
    seed: u64,
) -> Result<(Split, Split)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *mode {
        QueryReferenceMode::Pushing { query_works, covers_per_query, p, n }
        | QueryReferenceMode::Pulling { query_works, covers_per_query, p, n } => {
            let groups = manifest.works();
            if groups.len() < query_works {
                return Err(Error::Config(format!(
                    "manifest has {} works, need {query_works} query works",
                    groups.len()
                )));
            }
            // Query works need covers for the query set plus P for the
            // reference; every other work needs N.
            let mut order: Vec<usize> = (0..groups.len()).collect();
            order.shuffle(&mut rng);
            let query_idx: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| groups[i].1.len() >= covers_per_query + p)
                .take(query_works)
                .collect();
            if query_idx.len() < query_works {
                return Err(Error::Config(format!(
                    "only {} works have {} covers; need {query_works} query works",
                    query_idx.len(),
                    covers_per_query + p
                )));
            }
            let query_set: HashSet<usize> = query_idx.iter().copied().collect();
            for (i, (work, tracks)) in groups.iter().enumerate() {
                if !query_set.contains(&i) && tracks.len() < n {
                    return Err(Error::Config(format!(
                        "work {work:?} has {} covers, need {n} for the reference set",
                        tracks.len()
                    )));
                }
            }

            let mut query = Split { name: "query".into(), seed, work_ids: vec![], track_ids: vec![] };
            let mut reference =
                Split { name: "reference".into(), seed, work_ids: vec![], track_ids: vec![] };
            for (i, (work, tracks)) in groups.iter().enumerate() {
                let mut idx: Vec<usize> = (0..tracks.len()).collect();
                idx.shuffle(&mut rng);
                if query_set.contains(&i) {
                    query.work_ids.push(work.clone());
                    reference.work_ids.push(work.clone());
                    for &t in &idx[..covers_per_query] {
                        query.track_ids.push(tracks[t].track_id.clone());
                    }
                    for &t in &idx[covers_per_query..covers_per_query + p] {
                        reference.track_ids.push(tracks[t].track_id.clone());
                    }
                } else {
                    reference.work_ids.push(work.clone());
                    for &t in &idx[..n] {
                        reference.track_ids.push(tracks[t].track_id.clone());
                    }
                }
            }
            Ok((query, reference))
        }
        QueryReferenceMode::Ratio { query, reference } => {
            if query == 0 || reference == 0 {
                return Err(Error::Config("ratio parts must be positive".into()));
            }
            let total = manifest.len() as u64;
            let query_count = ((total as u128 * query as u128)
                / (query as u128 + reference as u128)) as usize;
            if query_count == 0 || query_count >= manifest.len() {
                return Err(Error::Config(format!(
                    "ratio {query}:{reference} degenerate for {total} tracks"
                )));
            }
            let mut idx: Vec<usize> = (0..manifest.len()).collect();
            idx.shuffle(&mut rng);
            let mut q = Split { name: "query".into(), seed, work_ids: vec![], track_ids: vec![] };
            let mut r = Split { name: "reference".into(), seed, work_ids: vec![], track_ids: vec![] };
            let mut q_works: HashSet<String> = HashSet::new();
            let mut r_works: HashSet<String> = HashSet::new();
            for (rank, &i) in idx.iter().enumerate() {
                let rec = &manifest.records[i];
                if rank < query_count {
                    q.track_ids.push(rec.track_id.clone());
                    q_works.insert(rec.work_id.clone());
                } else {
                    r.track_ids.push(rec.track_id.clone());
                    r_works.insert(rec.work_id.clone());
                }
            }
            q.work_ids = q_works.into_iter().collect();
            q.work_ids.sort_unstable();
            r.work_ids = r_works.into_iter().collect();
            r.work_ids.sort_unstable();
            Ok((q, r))
        }
    }
}

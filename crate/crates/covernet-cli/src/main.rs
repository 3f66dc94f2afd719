//! Command-line pipeline around the covernet library: preprocess salience
//! matrices, train the encoder, embed tracks into a store, then query it
//! and compute the evaluation metrics.
//!
//! Machine-readable artifacts go to files; logs go to stderr. Exit codes:
//! 0 success, 2 configuration error, 3 data error, 4 numeric failure.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use covernet::dataset::{split_by_work, Manifest, ManifestRecord, Split};
use covernet::encoder::{embed_tracks, Embedding, EncoderConfig, EncoderParams};
use covernet::error::Error;
use covernet::frontend;
use covernet::metrics::{
    posterior_curve, ranking_metrics, roc_with_points, DistanceHistogramPair,
};
use covernet::preprocess;
use covernet::store::{
    cross_distances, query_topk, store_load, store_save, EmbeddingStore, TrackLabels,
};
use covernet::training::{train, BatchSource, TripletConfig};

#[derive(Parser)]
#[command(name = "covernet", version, about = "Cover song retrieval from dominant-melody embeddings")]
struct Cli {
    /// Worker threads for data-parallel stages (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    parallelism: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert manifest tracks into cached fixed-shape encoder inputs.
    Preprocess(PreprocessArgs),
    /// Train the encoder with triplet loss on a work-disjoint split.
    Train(TrainArgs),
    /// Embed manifest tracks with a checkpoint into an embedding store.
    Embed(EmbedArgs),
    /// Rank stored references against query embeddings, exporting CSV.
    Query(QueryArgs),
    /// Compute the full retrieval metric suite as JSON.
    Evaluate(EvaluateArgs),
    /// Distance histograms, Bhattacharyya coefficient and cover posterior.
    Stats(StatsArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// JSONL manifest of tracks (f0_path or audio_path per record).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for the cache and the updated manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for checkpoint, log and split files.
    #[arg(long)]
    out: PathBuf,
    /// Kernel count of the first convolution block.
    #[arg(long = "k-kernels", default_value_t = 64)]
    k_kernels: usize,
    /// Embedding dimension.
    #[arg(long = "embed-dim", default_value_t = 512)]
    embed_dim: usize,
    /// Tracks per training batch (works-per-batch x covers-per-work).
    #[arg(long = "batch-size", default_value_t = 100)]
    batch_size: usize,
    #[arg(long = "works-per-batch", default_value_t = 20)]
    works_per_batch: usize,
    /// Triplet margin.
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Initial Adam learning rate.
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long = "max-steps", default_value_t = 100_000)]
    max_steps: u64,
    #[arg(long = "eval-every", default_value_t = 500)]
    eval_every: u64,
    /// Steps without eval improvement before the learning rate halves.
    #[arg(long = "plateau-window", default_value_t = 5_000)]
    plateau_window: u64,
    #[arg(long = "min-lr", default_value_t = 1e-7)]
    min_lr: f64,
    /// Fraction of works held out as the evaluation split.
    #[arg(long = "eval-fraction", default_value_t = 0.1667)]
    eval_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output embedding store file.
    #[arg(long)]
    out: PathBuf,
    /// Inference batch size.
    #[arg(long = "batch-size", default_value_t = 32)]
    batch_size: usize,
}

#[derive(Args)]
struct QueryArgs {
    /// Reference embedding store.
    #[arg(long)]
    store: PathBuf,
    /// Query embedding store.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long = "top-k", default_value_t = 10)]
    top_k: usize,
    /// Output CSV (query_id, rank, reference_id, sq_distance, is_cover).
    #[arg(long)]
    out: PathBuf,
    /// Manifest supplying work labels for the is_cover column.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Drop reference entries with the query's own track id.
    #[arg(long = "exclude-self", default_value_t = false)]
    exclude_self: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    store: PathBuf,
    /// Manifest supplying work labels.
    #[arg(long)]
    manifest: PathBuf,
    /// Split file naming the query tracks (looked up in the store).
    #[arg(long)]
    split: Option<PathBuf>,
    /// Query embedding store (alternative to --split).
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Output metrics JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "exclude-self", default_value_t = false)]
    exclude_self: bool,
    /// Histogram bins for the distribution metrics.
    #[arg(long, default_value_t = 200)]
    bins: usize,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Query embedding store; without it, all within-store pairs are used.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Output JSON with histograms, BC and the posterior curve.
    #[arg(long)]
    out: PathBuf,
    /// Cover prior for the posterior (default: empirical pair fraction).
    #[arg(long)]
    prior: Option<f64>,
    /// Apply +1 Laplace smoothing per bin and class.
    #[arg(long, default_value_t = false)]
    laplace: bool,
    #[arg(long, default_value_t = 200)]
    bins: usize,
    /// Also export ROC points as CSV.
    #[arg(long = "roc-csv")]
    roc_csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let parallelism = cli.parallelism;
    let result = covernet::par::with_parallelism(parallelism, || match cli.command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Train(args) => cmd_train(args),
        Command::Embed(args) => cmd_embed(args),
        Command::Query(args) => cmd_query(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Stats(args) => cmd_stats(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

/// Track ids become cache file names; normalize and disambiguate by hash.
fn cache_file_name(track_id: &str) -> String {
    let safe: String = track_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .take(64)
        .collect();
    let mut hasher = Sha256::new();
    hasher.update(track_id.as_bytes());
    let digest = hasher.finalize();
    format!("{safe}_{:02x}{:02x}{:02x}{:02x}.f0", digest[0], digest[1], digest[2], digest[3])
}

fn sha256_hex(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Produce a fixed-shape input for one manifest record.
fn preprocess_record(record: &ManifestRecord) -> Result<preprocess::PreprocessedInput, Error> {
    let f0 = if let Some(path) = &record.f0_path {
        frontend::load_f0(path)?
    } else if let Some(path) = &record.audio_path {
        let (samples, sample_rate) = frontend::read_wav_mono(path)?;
        let cqt = frontend::compute_cqt(&samples, sample_rate, &frontend::CqtParams::default())?;
        frontend::extract_f0_baseline(
            &cqt,
            6,
            frontend::DEFAULT_SALIENCE_FLOOR,
            record.track_id.clone(),
        )?
    } else {
        return Err(Error::Data(format!(
            "track {:?} has neither f0_path nor audio_path",
            record.track_id
        )));
    };
    let mut input = match preprocess::as_preprocessed(&f0) {
        Some(p) => p,
        None => preprocess::preprocess_pipeline(&f0)?,
    };
    input.track_id = record.track_id.clone();
    Ok(input)
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<(), Error> {
    let manifest = Manifest::load(&args.manifest)?;
    let cache_dir = args.out.join("cache");
    std::fs::create_dir_all(&cache_dir)?;

    let results: Vec<Result<ManifestRecord, (String, String)>> =
        covernet::par::map_indexed(manifest.records.len(), |i| {
            let record = &manifest.records[i];
            let input = preprocess_record(record)
                .map_err(|e| (record.track_id.clone(), e.to_string()))?;
            let path = cache_dir.join(cache_file_name(&record.track_id));
            preprocess::save_preprocessed(&input, record.duration_sec / 1024.0, &path)
                .map_err(|e| (record.track_id.clone(), e.to_string()))?;
            Ok(ManifestRecord { f0_path: Some(path), ..record.clone() })
        });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }

    let updated = Manifest::new(records)?;
    updated.save(&args.out.join("manifest.jsonl"))?;
    let mut fw = BufWriter::new(File::create(args.out.join("failures.jsonl"))?);
    for (track, error) in &failures {
        serde_json::to_writer(&mut fw, &serde_json::json!({"track_id": track, "error": error}))
            .map_err(|e| Error::Data(e.to_string()))?;
        fw.write_all(b"\n")?;
    }
    fw.flush()?;

    eprintln!(
        "preprocess: {} cached, {} failed (out of {})",
        updated.len(),
        failures.len(),
        manifest.len()
    );
    for (track, error) in &failures {
        eprintln!("  failed {track}: {error}");
    }
    if !manifest.is_empty() && updated.is_empty() {
        return Err(Error::Data("every track failed preprocessing".into()));
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    if args.batch_size % args.works_per_batch != 0 {
        return Err(Error::Config(format!(
            "batch size {} is not a multiple of works-per-batch {}",
            args.batch_size, args.works_per_batch
        )));
    }
    let covers_per_work = args.batch_size / args.works_per_batch;
    let manifest = Manifest::load(&args.manifest)?;
    std::fs::create_dir_all(&args.out)?;

    let split = split_by_work(&manifest, args.eval_fraction, covers_per_work, args.seed)?;
    for work in &split.skipped_works {
        eprintln!("warning: work {work} has fewer than {covers_per_work} covers, skipped");
    }
    split.train.save(&args.out.join("train_split.json"))?;
    split.eval.save(&args.out.join("eval_split.json"))?;

    eprintln!(
        "train: {} train works / {} eval works, loading inputs...",
        split.train.work_ids.len(),
        split.eval.work_ids.len()
    );
    let train_source = BatchSource::load(&manifest, &split.train)?;
    let eval_source = BatchSource::load(&manifest, &split.eval)?;

    let encoder_config = EncoderConfig::with_dims(args.k_kernels, args.embed_dim);
    let triplet_config = TripletConfig {
        margin: args.margin,
        batch_size: args.batch_size,
        works_per_batch: args.works_per_batch,
        covers_per_work,
        initial_lr: args.lr,
        plateau_window: args.plateau_window,
        min_lr: args.min_lr,
        max_steps: args.max_steps,
        eval_every: args.eval_every,
        seed: args.seed,
        ..Default::default()
    };

    let outcome = train(&train_source, &eval_source, &encoder_config, &triplet_config, |row| {
        if let Some(ev) = row.eval_loss {
            eprintln!(
                "step {:>7}  train {:.5}  eval {:.5}  lr {:.2e}  active {:.2}",
                row.step, row.train_loss, ev, row.lr, row.active_fraction
            );
        }
    })?;

    let ckpt_path = args.out.join("checkpoint.cvnw");
    outcome.best_params.save(&ckpt_path, None)?;

    let mut log = BufWriter::new(File::create(args.out.join("training_log.csv"))?);
    writeln!(log, "step,train_loss,eval_loss,lr,active_triplet_fraction")?;
    for row in &outcome.log {
        let eval = row.eval_loss.map_or(String::new(), |v| format!("{v}"));
        writeln!(
            log,
            "{},{},{},{},{}",
            row.step, row.train_loss, eval, row.lr, row.active_fraction
        )?;
    }
    log.flush()?;

    eprintln!(
        "train: finished after {} steps; best eval loss {:.5} at step {}; checkpoint {}",
        outcome.steps_run,
        outcome.best_eval_loss,
        outcome.best_step,
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> Result<(), Error> {
    let manifest = Manifest::load(&args.manifest)?;
    let (params, _) = EncoderParams::load(&args.checkpoint)?;
    let hash = sha256_hex(&args.checkpoint)?;

    let (embeddings, failures) = embed_tracks(&manifest.records, &params, 0, args.batch_size);
    for f in &failures {
        eprintln!("  failed {}: {}", f.track_id, f.error);
    }
    if !manifest.is_empty() && embeddings.is_empty() {
        return Err(Error::Data("every track failed embedding".into()));
    }
    let store = EmbeddingStore::from_embeddings(&embeddings, params.config.e, hash)?;
    store_save(&store, &args.out)?;
    eprintln!(
        "embed: stored {} embeddings (dim {}), {} failures -> {}",
        store.len(),
        store.dim(),
        failures.len(),
        args.out.display()
    );
    Ok(())
}

fn load_labels(path: &Path) -> Result<HashMap<String, String>, Error> {
    Ok(Manifest::load(path)?.work_of())
}

fn cmd_query(args: QueryArgs) -> Result<(), Error> {
    let store = store_load(&args.store)?;
    let queries = store_load(&args.queries)?;
    let labels = args.manifest.as_deref().map(load_labels).transpose()?;
    if args.top_k == 0 {
        return Err(Error::Config("--top-k must be at least 1".into()));
    }

    let mut out = BufWriter::new(File::create(&args.out)?);
    writeln!(out, "query_id,rank,reference_id,sq_distance,is_cover")?;
    for qi in 0..queries.len() {
        let query = Embedding {
            track_id: queries.ids()[qi].clone(),
            vector: queries.row(qi).to_vec(),
        };
        // Fetch one extra when the query itself may sit in the store.
        let fetch = if args.exclude_self { args.top_k + 1 } else { args.top_k };
        let hits = query_topk(&query, &store, fetch)?;
        let mut rank = 0usize;
        for (reference_id, dist) in hits {
            if args.exclude_self && reference_id == query.track_id {
                continue;
            }
            rank += 1;
            if rank > args.top_k {
                break;
            }
            let is_cover = match &labels {
                None => String::new(),
                Some(map) => match (map.get(&query.track_id), map.get(&reference_id)) {
                    (Some(a), Some(b)) => (a == b && reference_id != query.track_id).to_string(),
                    _ => String::new(),
                },
            };
            writeln!(out, "{},{rank},{reference_id},{dist},{is_cover}", query.track_id)?;
        }
    }
    out.flush()?;
    eprintln!("query: wrote rankings for {} queries -> {}", queries.len(), args.out.display());
    Ok(())
}

fn query_embeddings_for_eval(
    store: &EmbeddingStore,
    args_split: &Option<PathBuf>,
    args_queries: &Option<PathBuf>,
) -> Result<Vec<Embedding>, Error> {
    match (args_queries, args_split) {
        (Some(qpath), _) => {
            let qstore = store_load(qpath)?;
            Ok((0..qstore.len())
                .map(|i| Embedding {
                    track_id: qstore.ids()[i].clone(),
                    vector: qstore.row(i).to_vec(),
                })
                .collect())
        }
        (None, Some(spath)) => {
            let split = Split::load(spath)?;
            split
                .track_ids
                .iter()
                .map(|id| {
                    store
                        .vector_of(id)
                        .map(|v| Embedding { track_id: id.clone(), vector: v.to_vec() })
                        .ok_or_else(|| {
                            Error::Data(format!("split track {id:?} not found in store"))
                        })
                })
                .collect()
        }
        (None, None) => Err(Error::Config("evaluate needs --queries or --split".into())),
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let store = store_load(&args.store)?;
    let labels = load_labels(&args.manifest)?;
    let queries = query_embeddings_for_eval(&store, &args.split, &args.queries)?;
    if queries.is_empty() {
        return Err(Error::Data("no query embeddings to evaluate".into()));
    }

    let rankings = cross_distances(&queries, &store, args.exclude_self, &TrackLabels(&labels))?;
    let m = ranking_metrics(&rankings)?;

    let covers: Vec<f32> = rankings
        .iter()
        .flat_map(|r| r.entries.iter().filter(|e| e.2).map(|e| e.1))
        .collect();
    let noncovers: Vec<f32> = rankings
        .iter()
        .flat_map(|r| r.entries.iter().filter(|e| !e.2).map(|e| e.1))
        .collect();
    let (auc, tpr_at_5, _) = roc_with_points(&covers, &noncovers)?;
    let hist = DistanceHistogramPair::from_samples(&covers, &noncovers, args.bins)?;
    let bc = covernet::metrics::bhattacharyya(&hist)?;

    let report = serde_json::json!({
        "map": m.map,
        "mt10": m.mt_at_10,
        "mr1": m.mr1,
        "mr1_percentile": m.mr1_percentile,
        "auc": auc,
        "tpr_at_5": tpr_at_5,
        "bc": bc,
        "eligible_queries": m.eligible_queries,
        "excluded_queries": m.excluded_queries,
        "n_queries": queries.len(),
        "reference_size": store.len(),
        "exclude_self": args.exclude_self,
        "histogram_bins": args.bins,
    });
    let mut out = BufWriter::new(File::create(&args.out)?);
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| Error::Data(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    eprintln!(
        "evaluate: MAP {:.4}  MT@10 {:.3}  MR1 {:.1}  AuC {:.4}  BC {:.4} -> {}",
        m.map,
        m.mt_at_10,
        m.mr1,
        auc,
        bc,
        args.out.display()
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), Error> {
    let store = store_load(&args.store)?;
    let labels = load_labels(&args.manifest)?;
    let work_of = |id: &str| -> Result<&String, Error> {
        labels.get(id).ok_or_else(|| Error::Data(format!("no work label for track {id:?}")))
    };

    let mut covers = Vec::new();
    let mut noncovers = Vec::new();
    let sq = |a: &[f32], b: &[f32]| -> f32 {
        let mut dot = 0.0f64;
        for (&x, &y) in a.iter().zip(b) {
            dot += f64::from(x) * f64::from(y);
        }
        (2.0 - 2.0 * dot).max(0.0) as f32
    };

    match &args.queries {
        Some(qpath) => {
            let qstore = store_load(qpath)?;
            for qi in 0..qstore.len() {
                let qwork = work_of(&qstore.ids()[qi])?;
                for ri in 0..store.len() {
                    if qstore.ids()[qi] == store.ids()[ri] {
                        continue;
                    }
                    let d = sq(qstore.row(qi), store.row(ri));
                    if work_of(&store.ids()[ri])? == qwork {
                        covers.push(d);
                    } else {
                        noncovers.push(d);
                    }
                }
            }
        }
        None => {
            for i in 0..store.len() {
                let wi = work_of(&store.ids()[i])?;
                for j in (i + 1)..store.len() {
                    let d = sq(store.row(i), store.row(j));
                    if work_of(&store.ids()[j])? == wi {
                        covers.push(d);
                    } else {
                        noncovers.push(d);
                    }
                }
            }
        }
    }
    if covers.is_empty() || noncovers.is_empty() {
        return Err(Error::Data(format!(
            "need both pair classes; got {} cover and {} non-cover pairs",
            covers.len(),
            noncovers.len()
        )));
    }

    let mut hist = DistanceHistogramPair::from_samples(&covers, &noncovers, args.bins)?;
    if args.laplace {
        hist = hist.with_laplace_smoothing();
    }
    let bc = covernet::metrics::bhattacharyya(&hist)?;
    let posterior = posterior_curve(&hist, args.prior)?;
    let (cover_density, noncover_density) = hist.densities()?;
    let prior_used = args.prior.unwrap_or_else(|| {
        hist.cover_total() as f64 / (hist.cover_total() + hist.noncover_total()) as f64
    });

    let report = serde_json::json!({
        "bin_edges": hist.bin_edges,
        "cover_counts": hist.cover_counts,
        "noncover_counts": hist.noncover_counts,
        "cover_density": cover_density,
        "noncover_density": noncover_density,
        "posterior": posterior,
        "prior_cover": prior_used,
        "laplace_smoothed": hist.laplace_smoothed,
        "bc": bc,
        "n_cover_pairs": covers.len(),
        "n_noncover_pairs": noncovers.len(),
    });
    let mut out = BufWriter::new(File::create(&args.out)?);
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| Error::Data(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;

    if let Some(roc_path) = &args.roc_csv {
        let (_, _, points) = roc_with_points(&covers, &noncovers)?;
        let mut w = BufWriter::new(File::create(roc_path)?);
        writeln!(w, "fpr,tpr")?;
        for (fpr, tpr) in points {
            writeln!(w, "{fpr},{tpr}")?;
        }
        w.flush()?;
    }

    eprintln!(
        "stats: BC {bc:.4} over {} cover / {} non-cover pairs -> {}",
        covers.len(),
        noncovers.len(),
        args.out.display()
    );
    Ok(())
}

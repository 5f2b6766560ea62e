//! `textgcn` command-line pipelines.
//!
//! Exit status: 0 on success, 2 for bad usage or invalid input, 1 for
//! internal failures.

mod config;
mod manifest;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use textgcn::corpus::synthetic::{generate, SyntheticConfig};
use textgcn::corpus::{interaction_quantile, load_split, merge_corpora, DatasetSplit, EvalPart};
use textgcn::diffusion::textgcn as diffuse;
use textgcn::embed::{
    fetch_embeddings, load_matrix, load_sidecar, mock_embed, save_matrix, save_sidecar, sidecar_path,
    EmbeddingCache, EmbeddingMatrix, FetchConfig, HttpTransport, DEFAULT_BATCH_SIZE,
};
use textgcn::rank::{baseline_pop, baseline_random, evaluate, recommend_topk, row_norms, DEFAULT_K};
use textgcn::tower::{load_checkpoint_for, save_checkpoint};
use textgcn::trainer::{ablation_tsv, apply_head, apply_zero_shot, run_ablation, train, train_joint};
use textgcn::tune::{
    greedy_stage, grid_stage, pos_quantile_sweep, summary_tsv, RecordStore, SearchSpace, SplitRunner, TrialConfig,
    Tuner, DEFAULT_QUANTILES,
};

use config::{parse_list, HyperArgs, Resolver};
use manifest::{manifest_path, Manifest};

/// An error in how the command was invoked.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "textgcn", version, about = "Collaborative filtering from item-title embeddings")]
struct Cli {
    /// JSON file with default settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Part {
    Val,
    Test,
}

impl From<Part> for EvalPart {
    fn from(p: Part) -> Self {
        match p {
            Part::Val => EvalPart::Val,
            Part::Test => EvalPart::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Model {
    Textgcn,
    Mlp,
    Random,
    Pop,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Stage {
    Greedy,
    Grid,
    Quantiles,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a split and write it in normalized form.
    Ingest {
        #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
        dataset: Option<PathBuf>,
        /// Generate a clustered dataset, e.g. clusters:2,users:200,items:100,seed:7.
        #[arg(long)]
        synthetic: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed item titles into a TGE1 file.
    Embed {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Offline hashed bag-of-words embeddings.
        #[arg(long)]
        mock: bool,
        /// Mock embedding width.
        #[arg(long)]
        dim: Option<usize>,
        /// Embedding service URL.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Requests in flight at once.
        #[arg(long)]
        concurrency: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Propagate item embeddings over the train graph.
    Diffuse {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the projection head; several datasets train jointly.
    Train {
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
        /// One file per dataset, same order.
        #[arg(long, required = true)]
        embeddings: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Hyperparameter search with resumable trial records.
    Tune {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "greedy")]
        stage: Stage,
        /// Search space JSON; defaults to the broad ranges (greedy) or the
        /// narrow example grid (grid).
        #[arg(long)]
        space: Option<PathBuf>,
        /// Quantiles for the positives sweep.
        #[arg(long)]
        quantiles: Option<String>,
        /// Leave the single-positive trial out of the quantile sweep.
        #[arg(long)]
        no_single: bool,
        /// Seeds averaged per trial, comma separated.
        #[arg(long)]
        seeds: Option<String>,
        /// Trials run concurrently.
        #[arg(long)]
        parallel_trials: Option<usize>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Score a model on a split and write a metrics report.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        model: Model,
        /// Raw item embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Output directory of `diffuse`, used instead of --embeddings.
        #[arg(long)]
        diffused: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        part: Part,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-k item IDs for given users as TSV.
    Recommend {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        layers: Option<usize>,
        /// Comma-separated external user IDs.
        #[arg(long)]
        users: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the four head variants and tabulate test metrics.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seeds averaged per variant, comma separated.
        #[arg(long)]
        seeds: Option<String>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(t) = cause.downcast_ref::<textgcn::Error>() {
            return if t.is_input_error() { 2 } else { 1 };
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    let mut r = Resolver::new(cli.config.as_deref())?;
    let threads = r.get("threads", cli.threads, 0usize)?;
    textgcn::par::init_global_threads(threads);
    match cli.command {
        Command::Ingest { dataset, synthetic, out } => cmd_ingest(r, threads, dataset, synthetic, &out),
        Command::Embed {
            dataset,
            out,
            mock,
            dim,
            endpoint,
            model,
            cache,
            batch_size,
            concurrency,
            seed,
        } => {
            let opts = EmbedOpts {
                mock,
                dim,
                endpoint,
                model,
                cache,
                batch_size,
                concurrency,
                seed,
            };
            cmd_embed(r, threads, &dataset, &out, opts)
        }
        Command::Diffuse {
            dataset,
            embeddings,
            layers,
            out,
        } => cmd_diffuse(r, threads, &dataset, &embeddings, layers, &out),
        Command::Train {
            dataset,
            embeddings,
            out,
            hyper,
        } => cmd_train(r, threads, &dataset, &embeddings, &out, &hyper),
        Command::Tune {
            dataset,
            embeddings,
            out,
            stage,
            space,
            quantiles,
            no_single,
            seeds,
            parallel_trials,
            hyper,
        } => {
            let opts = TuneOpts {
                stage,
                space,
                quantiles,
                no_single,
                seeds,
                parallel_trials,
            };
            cmd_tune(r, threads, &dataset, &embeddings, &out, opts, &hyper)
        }
        Command::Evaluate {
            dataset,
            model,
            embeddings,
            diffused,
            checkpoint,
            layers,
            part,
            k,
            seed,
            out,
        } => {
            let opts = EvalOpts {
                model,
                embeddings,
                diffused,
                checkpoint,
                layers,
                part,
                k,
                seed,
            };
            cmd_evaluate(r, threads, &dataset, opts, &out)
        }
        Command::Recommend {
            dataset,
            embeddings,
            checkpoint,
            layers,
            users,
            k,
            out,
        } => cmd_recommend(r, threads, &dataset, &embeddings, checkpoint.as_deref(), layers, &users, k, &out),
        Command::Ablate {
            dataset,
            embeddings,
            out,
            seeds,
            hyper,
        } => cmd_ablate(r, threads, &dataset, &embeddings, &out, seeds.as_deref(), &hyper),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Item embeddings aligned with the split's item order. A sidecar ID file,
/// when present, is used to reorder rows.
fn load_item_embeddings(path: &Path, split: &DatasetSplit) -> Result<EmbeddingMatrix> {
    let m = load_matrix(path).with_context(|| format!("loading embeddings {}", path.display()))?;
    if !sidecar_path(path).exists() {
        if m.n_rows() != split.n_items() {
            return Err(textgcn::Error::DimensionMismatch {
                context: "embedding rows vs dataset items",
                expected: split.n_items(),
                found: m.n_rows(),
            }
            .into());
        }
        return Ok(m);
    }
    let ids = load_sidecar(path)?;
    if ids.len() != m.n_rows() {
        return Err(textgcn::Error::DimensionMismatch {
            context: "embedding rows vs sidecar ids",
            expected: ids.len(),
            found: m.n_rows(),
        }
        .into());
    }
    if ids.iter().map(String::as_str).eq(split.maps.items.iter()) {
        return Ok(m);
    }
    let row_of: HashMap<&str, u32> = ids.iter().enumerate().map(|(r, id)| (id.as_str(), r as u32)).collect();
    let rows = split
        .maps
        .items
        .iter()
        .map(|id| {
            row_of.get(id).copied().ok_or_else(|| textgcn::Error::UnknownId {
                kind: "item",
                id: id.to_owned(),
            })
        })
        .collect::<std::result::Result<Vec<u32>, _>>()?;
    Ok(m.gather(&rows))
}

fn degree_summary(split: &DatasetSplit) -> Result<serde_json::Value> {
    let q = |p: f64| interaction_quantile(&split.train, p).ok();
    Ok(json!({
        "name": split.name,
        "users": split.n_users(),
        "items": split.n_items(),
        "interactions": {
            "train": split.train.nnz(),
            "val": split.val.nnz(),
            "test": split.test.nnz(),
        },
        "train_degree_quantiles": {"0.25": q(0.25), "0.5": q(0.5), "0.75": q(0.75)},
        "duplicates": split.stats.duplicates,
        "dropped_eval_without_history": split.stats.dropped_eval,
    }))
}

fn cmd_ingest(mut r: Resolver, threads: usize, dataset: Option<PathBuf>, synthetic: Option<String>, out: &Path) -> Result<()> {
    let split = match (&dataset, &synthetic) {
        (_, Some(spec)) => {
            let cfg: SyntheticConfig = spec.parse().map_err(|e: textgcn::Error| usage(e.to_string()))?;
            r.record("synthetic", &cfg, config::Source::Flag);
            generate(&cfg)?
        }
        (Some(dir), None) => load_split(dir).with_context(|| format!("loading dataset {}", dir.display()))?,
        (None, None) => return Err(usage("either --dataset or --synthetic is required")),
    };
    split.save(out)?;
    let stats = degree_summary(&split)?;
    write_file(&out.join("stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
    let mut m = Manifest::new("ingest", &r, threads);
    if let Some(dir) = &dataset {
        m.input_dataset(dir)?;
    }
    m.output(out);
    m.output(&out.join("stats.json"));
    m.results = stats.clone();
    m.write(&manifest_path(out, true))?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

struct EmbedOpts {
    mock: bool,
    dim: Option<usize>,
    endpoint: Option<String>,
    model: Option<String>,
    cache: Option<PathBuf>,
    batch_size: Option<usize>,
    concurrency: Option<usize>,
    seed: Option<u64>,
}

fn cmd_embed(mut r: Resolver, threads: usize, dataset: &Path, out: &Path, o: EmbedOpts) -> Result<()> {
    let split = load_split(dataset)?;
    let mut results = json!({});
    let emb = if o.mock {
        let dim = r.get("dim", o.dim, 64usize)?;
        let seed = r.get("seed", o.seed, 0u64)?;
        mock_embed(&split.catalog, dim, seed)?
    } else {
        let endpoint: Option<String> = r.get_opt("endpoint", o.endpoint)?;
        let endpoint = endpoint.ok_or_else(|| usage("--endpoint or TEXTGCN_EMBED_URL is required without --mock"))?;
        let model = r.get("model", o.model, "text-embedding-3-large".to_owned())?;
        let mut fc = FetchConfig::new(model);
        fc.batch_size = r.get("batch_size", o.batch_size, DEFAULT_BATCH_SIZE)?;
        fc.concurrency = r.get("concurrency", o.concurrency, 1usize)?;
        let cache_dir: Option<PathBuf> = r.get_opt("cache", o.cache.map(|p| p.display().to_string()))?.map(PathBuf::from);
        let cache = cache_dir.as_deref().map(EmbeddingCache::open).transpose()?;
        let transport = HttpTransport::from_env(endpoint)?;
        let (m, stats) = fetch_embeddings(&split.catalog, &transport, cache.as_ref(), &fc)?;
        log::info!(
            "embedded {} titles: {} cached, {} fetched, {} requests",
            split.n_items(),
            stats.cached,
            stats.fetched,
            stats.requests
        );
        results = serde_json::to_value(&stats)?;
        m
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_matrix(&emb, out)?;
    save_sidecar(out, split.maps.items.iter())?;
    let mut m = Manifest::new("embed", &r, threads);
    m.input_dataset(dataset)?;
    m.output(out);
    m.output(&sidecar_path(out));
    m.results = json!({"rows": emb.n_rows(), "dim": emb.dim(), "sha256": emb.checksum(), "fetch": results});
    m.write(&manifest_path(out, false))
}

fn cmd_diffuse(mut r: Resolver, threads: usize, dataset: &Path, embeddings: &Path, layers: Option<usize>, out: &Path) -> Result<()> {
    let layers = r.get("layers", layers, 2usize)?;
    let split = load_split(dataset)?;
    let emb = load_item_embeddings(embeddings, &split)?;
    let d = diffuse(&split.train, &emb, layers)?;
    if !d.zero_degree_users.is_empty() {
        log::warn!("{} users have no train interactions; their rows are zero", d.zero_degree_users.len());
    }
    create_dir(out)?;
    let (users, items) = (out.join("users.tge"), out.join("items.tge"));
    save_matrix(&d.user_final, &users)?;
    save_sidecar(&users, split.maps.users.iter())?;
    save_matrix(&d.item_final, &items)?;
    save_sidecar(&items, split.maps.items.iter())?;
    let mut m = Manifest::new("diffuse", &r, threads);
    m.input_dataset(dataset)?;
    m.input_file(embeddings)?;
    m.output(&users);
    m.output(&items);
    m.results = json!({
        "layers": layers,
        "users_sha256": d.user_final.checksum(),
        "items_sha256": d.item_final.checksum(),
        "zero_degree_users": d.zero_degree_users.len(),
    });
    m.write(&manifest_path(out, true))
}

fn cmd_train(mut r: Resolver, threads: usize, datasets: &[PathBuf], embeddings: &[PathBuf], out: &Path, hyper: &HyperArgs) -> Result<()> {
    if datasets.len() != embeddings.len() {
        return Err(usage(format!(
            "{} datasets but {} embedding files; pass one --embeddings per --dataset",
            datasets.len(),
            embeddings.len()
        )));
    }
    let cfg = hyper.resolve(&mut r)?;
    let mut splits = Vec::new();
    let mut embs = Vec::new();
    for (d, e) in datasets.iter().zip(embeddings) {
        let s = load_split(d).with_context(|| format!("loading dataset {}", d.display()))?;
        embs.push(load_item_embeddings(e, &s)?);
        splits.push(s);
    }
    let outcome = if splits.len() == 1 {
        train(&splits[0], &embs[0], &cfg)?
    } else {
        train_joint(&merge_corpora(splits)?, &embs, &cfg)?
    };
    create_dir(out)?;
    let ck_dir = out.join("checkpoint");
    save_checkpoint(&ck_dir, &outcome.checkpoint.params, &outcome.checkpoint.adam, &outcome.checkpoint.meta)?;
    let mut log = Vec::new();
    outcome.log.write_jsonl(&mut log)?;
    write_file(&out.join("train_log.jsonl"), &log)?;
    let mut timings = Vec::new();
    outcome.log.write_timings(&mut timings)?;
    write_file(&out.join("timings.tsv"), &timings)?;

    let mut m = Manifest::new("train", &r, threads);
    for (d, e) in datasets.iter().zip(embeddings) {
        m.input_dataset(d)?;
        m.input_file(e)?;
    }
    m.output(&ck_dir);
    m.output(&out.join("train_log.jsonl"));
    m.results = json!({
        "best_epoch": outcome.log.best_epoch,
        "best_val_recall": outcome.log.best_val_recall,
        "epochs": outcome.log.epochs.len(),
        "stop_reason": outcome.log.stop_reason,
        "k": outcome.log.k,
        "diffusion_sha256": outcome.log.diffusion_checksum,
    });
    m.write(&manifest_path(out, true))?;
    println!("{}", serde_json::to_string_pretty(&m.results)?);
    Ok(())
}

struct TuneOpts {
    stage: Stage,
    space: Option<PathBuf>,
    quantiles: Option<String>,
    no_single: bool,
    seeds: Option<String>,
    parallel_trials: Option<usize>,
}

fn cmd_tune(
    mut r: Resolver,
    threads: usize,
    dataset: &Path,
    embeddings: &Path,
    out: &Path,
    o: TuneOpts,
    hyper: &HyperArgs,
) -> Result<()> {
    let base = hyper.resolve(&mut r)?;
    let seeds: Vec<u64> = match r.get_opt("seeds", o.seeds)? {
        Some(s) => parse_list(&s, "seeds")?,
        None => vec![base.seed],
    };
    let parallelism = r.get("parallel_trials", o.parallel_trials, 1usize)?;
    let split = load_split(dataset)?;
    let emb = load_item_embeddings(embeddings, &split)?;
    let store = RecordStore::open(&out.join("records"))?;
    let runner = SplitRunner {
        split: &split,
        item_emb0: &emb,
        base: base.clone(),
        seeds,
    };
    let tuner = Tuner {
        store: &store,
        runner: &runner,
        parallelism,
    };
    let load_space = |default: SearchSpace| -> Result<SearchSpace> {
        match &o.space {
            Some(p) => SearchSpace::load(p).map_err(|e| usage(e.to_string())),
            None => Ok(default),
        }
    };
    // Defaults of the search follow the resolved training flags.
    let base_trial = TrialConfig {
        output_size: base.d_out,
        lr: base.lr,
        n_layers: base.layers,
        neg_sample: base.negatives,
        tau: base.tau,
        k_policy: base.k_policy,
    };
    let (records, stats, best) = match o.stage {
        Stage::Greedy => {
            let space = load_space(SearchSpace::default())?;
            let g = greedy_stage(&space, &tuner).map_err(|e| match e {
                textgcn::Error::InvalidConfig(m) => usage(m),
                other => other.into(),
            })?;
            let best: serde_json::Map<String, serde_json::Value> =
                g.best.iter().map(|(p, v)| (p.name().to_owned(), json!(v))).collect();
            (g.records, g.stats, serde_json::Value::Object(best))
        }
        Stage::Grid => {
            let space = load_space(SearchSpace::narrow_example())?;
            let g = grid_stage(&space, &tuner)?;
            (g.records, g.stats, serde_json::to_value(&g.best)?)
        }
        Stage::Quantiles => {
            let qs: Vec<f64> = match &o.quantiles {
                Some(s) => parse_list(s, "quantiles")?,
                None => DEFAULT_QUANTILES.to_vec(),
            };
            r.record("quantiles", &qs, config::Source::Flag);
            let q = pos_quantile_sweep(&split.train, &base_trial, &qs, !o.no_single, &tuner)?;
            (q.records, q.stats, json!({"k_policy": q.best, "resolved": q.resolved}))
        }
    };
    log::info!("{} trials run, {} loaded from records", stats.executed, stats.reused);
    let summary = out.join("summary.tsv");
    write_file(&summary, summary_tsv(&records))?;
    write_file(&out.join("best.json"), serde_json::to_string_pretty(&best)? + "\n")?;
    let mut m = Manifest::new("tune", &r, threads);
    m.input_dataset(dataset)?;
    m.input_file(embeddings)?;
    m.output(&summary);
    m.output(&out.join("best.json"));
    m.results = json!({"best": best, "trials": records.len()});
    m.write(&manifest_path(out, true))?;
    println!("{}", serde_json::to_string_pretty(&best)?);
    Ok(())
}

struct EvalOpts {
    model: Model,
    embeddings: Option<PathBuf>,
    diffused: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    layers: Option<usize>,
    part: Part,
    k: Option<usize>,
    seed: Option<u64>,
}

/// Layer count stored in a checkpoint's training config.
fn checkpoint_layers(ck: &textgcn::tower::Checkpoint) -> Option<usize> {
    ck.meta.config.get("layers").and_then(|v| v.as_u64()).map(|v| v as usize)
}

fn cmd_evaluate(mut r: Resolver, threads: usize, dataset: &Path, o: EvalOpts, out: &Path) -> Result<()> {
    let k = r.get("k", o.k, DEFAULT_K)?;
    let part: EvalPart = o.part.into();
    r.record("part", &part, config::Source::Flag);
    r.record("model", &format!("{:?}", o.model).to_lowercase(), config::Source::Flag);
    let split = load_split(dataset)?;
    let relevant = split.part(part);
    let mut m = Manifest::new("evaluate", &r, threads);
    m.input_dataset(dataset)?;
    let metrics = match o.model {
        Model::Random => {
            let seed = r.get("seed", o.seed, 0u64)?;
            baseline_random(&split.train, relevant, k, seed)?
        }
        Model::Pop => baseline_pop(&split.train, relevant, k)?,
        Model::Textgcn => match (&o.diffused, &o.embeddings) {
            (Some(dir), _) => {
                let (users, items) = (dir.join("users.tge"), dir.join("items.tge"));
                m.input_file(&users)?;
                m.input_file(&items)?;
                let u = load_matrix(&users)?;
                let i = load_matrix(&items)?;
                evaluate(&split.train, relevant, &u, &i, k)?
            }
            (None, Some(e)) => {
                let layers = r.get("layers", o.layers, 2usize)?;
                m.input_file(e)?;
                let emb = load_item_embeddings(e, &split)?;
                apply_zero_shot(None, &split, &emb, layers, part, k)?
            }
            (None, None) => return Err(usage("--model textgcn needs --embeddings or --diffused")),
        },
        Model::Mlp => {
            let ck_dir = o.checkpoint.as_deref().ok_or_else(|| usage("--model mlp needs --checkpoint"))?;
            let e = o.embeddings.as_deref().ok_or_else(|| usage("--model mlp needs --embeddings"))?;
            let emb = load_item_embeddings(e, &split)?;
            let ck = load_checkpoint_for(ck_dir, emb.dim())?;
            let layers = r.get("layers", o.layers, checkpoint_layers(&ck).unwrap_or(2))?;
            m.input_file(e)?;
            m.input_file(&ck_dir.join("manifest.json"))?;
            apply_zero_shot(Some(&ck.params), &split, &emb, layers, part, k)?
        }
    };
    let tag = match o.model {
        Model::Textgcn => "textgcn",
        Model::Mlp => "textgcn-mlp",
        Model::Random => "random",
        Model::Pop => "pop",
    };
    let report = metrics.report(&split.name, tag, k);
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_file(out, &json)?;
    m.config = r.entries.clone();
    m.output(out);
    m.results = serde_json::to_value(&report)?;
    m.write(&manifest_path(out, false))?;
    print!("{json}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_recommend(
    mut r: Resolver,
    threads: usize,
    dataset: &Path,
    embeddings: &Path,
    checkpoint: Option<&Path>,
    layers: Option<usize>,
    users: &str,
    k: Option<usize>,
    out: &Path,
) -> Result<()> {
    let k = r.get("k", k, DEFAULT_K)?;
    let split = load_split(dataset)?;
    let ids: Vec<String> = parse_list(users, "users")?;
    let dense = ids
        .iter()
        .map(|id| {
            split
                .maps
                .users
                .get(id)
                .map(|u| u as usize)
                .ok_or_else(|| textgcn::Error::UnknownId {
                    kind: "user",
                    id: id.clone(),
                })
        })
        .collect::<std::result::Result<Vec<usize>, _>>()?;
    let emb = load_item_embeddings(embeddings, &split)?;
    let ck = checkpoint.map(|p| load_checkpoint_for(p, emb.dim())).transpose()?;
    let default_layers = ck.as_ref().and_then(checkpoint_layers).unwrap_or(2);
    let layers = r.get("layers", layers, default_layers)?;
    let d = diffuse(&split.train, &emb, layers)?;
    let (u, i) = match &ck {
        Some(c) => apply_head(&c.params, &d)?,
        None => (d.user_final, d.item_final),
    };
    let norms = row_norms(&i);
    let mut tsv = String::from("user\trank\titem\tscore\n");
    for (id, &uidx) in ids.iter().zip(&dense) {
        let ranking = recommend_topk(uidx, u.row(uidx), &i, &norms, split.train.row(uidx), k)?;
        if ranking.truncated {
            log::warn!("user {id}: only {} candidate items", ranking.items.len());
        }
        for (rank, (item, score)) in ranking.items.iter().zip(&ranking.scores).enumerate() {
            tsv.push_str(&format!(
                "{id}\t{}\t{}\t{score:.6}\n",
                rank + 1,
                split.maps.items.external(*item as usize)
            ));
        }
    }
    write_file(out, &tsv)?;
    let mut m = Manifest::new("recommend", &r, threads);
    m.input_dataset(dataset)?;
    m.input_file(embeddings)?;
    if let Some(p) = checkpoint {
        m.input_file(&p.join("manifest.json"))?;
    }
    m.output(out);
    m.results = json!({"users": ids});
    m.write(&manifest_path(out, false))?;
    print!("{tsv}");
    Ok(())
}

fn cmd_ablate(
    mut r: Resolver,
    threads: usize,
    dataset: &Path,
    embeddings: &Path,
    out: &Path,
    seeds: Option<&str>,
    hyper: &HyperArgs,
) -> Result<()> {
    let base = hyper.resolve(&mut r)?;
    let seeds: Vec<u64> = match r.get_opt("seeds", seeds.map(str::to_owned))? {
        Some(s) => parse_list(&s, "seeds")?,
        None => vec![base.seed],
    };
    let split = load_split(dataset)?;
    let emb = load_item_embeddings(embeddings, &split)?;
    let rows = run_ablation(&split, &emb, &base, &seeds)?;
    let table = ablation_tsv(&rows, base.eval_k);
    create_dir(out)?;
    let path = out.join("ablation.tsv");
    write_file(&path, &table)?;
    let mut m = Manifest::new("ablate", &r, threads);
    m.input_dataset(dataset)?;
    m.input_file(embeddings)?;
    m.output(&path);
    m.results = serde_json::to_value(&rows)?;
    m.write(&manifest_path(out, true))?;
    print!("{table}");
    Ok(())
}

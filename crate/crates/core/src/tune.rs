//! Two-stage hyperparameter search: one-at-a-time sweeps around defaults,
//! then a full grid over a narrowed space. Every trial is stored as a JSON
//! record keyed by a hash of its configuration, so an interrupted search
//! resumes without recomputing finished trials.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{interaction_quantile, DatasetSplit, InteractionMatrix};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::trainer::{train, KPolicy, TrainConfig};

/// The tunable subset of a training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub output_size: usize,
    pub lr: f32,
    pub n_layers: usize,
    pub neg_sample: usize,
    pub tau: f32,
    pub k_policy: KPolicy,
}

impl Default for TrialConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            output_size: t.d_out,
            lr: t.lr,
            n_layers: t.layers,
            neg_sample: t.negatives,
            tau: t.tau,
            k_policy: t.k_policy,
        }
    }
}

impl TrialConfig {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            d_out: self.output_size,
            lr: self.lr,
            layers: self.n_layers,
            negatives: self.neg_sample,
            tau: self.tau,
            k_policy: self.k_policy,
            ..base.clone()
        }
    }

    /// Parameters on which `self` and `other` differ.
    pub fn differs_from(&self, other: &TrialConfig) -> Vec<Param> {
        Param::ALL
            .into_iter()
            .filter(|p| p.get(self) != p.get(other))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    OutputSize,
    Lr,
    NLayers,
    NegSample,
    Tau,
}

impl Param {
    pub const ALL: [Param; 5] = [Param::OutputSize, Param::Lr, Param::NLayers, Param::NegSample, Param::Tau];

    pub fn name(self) -> &'static str {
        match self {
            Param::OutputSize => "output_size",
            Param::Lr => "lr",
            Param::NLayers => "n_layers",
            Param::NegSample => "neg_sample",
            Param::Tau => "tau",
        }
    }

    fn get(self, c: &TrialConfig) -> f64 {
        match self {
            Param::OutputSize => c.output_size as f64,
            Param::Lr => f64::from(c.lr),
            Param::NLayers => c.n_layers as f64,
            Param::NegSample => c.neg_sample as f64,
            Param::Tau => f64::from(c.tau),
        }
    }

    fn set(self, c: &mut TrialConfig, v: f64) {
        match self {
            Param::OutputSize => c.output_size = v as usize,
            Param::Lr => c.lr = v as f32,
            Param::NLayers => c.n_layers = v as usize,
            Param::NegSample => c.neg_sample = v as usize,
            Param::Tau => c.tau = v as f32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub output_size: Vec<usize>,
    pub lr: Vec<f32>,
    pub n_layers: Vec<usize>,
    pub neg_sample: Vec<usize>,
    /// No reference grid exists for the temperature; the default list holds
    /// only the default value.
    pub tau: Vec<f32>,
    /// Values held fixed while another parameter is swept; training
    /// defaults when absent.
    #[serde(default)]
    pub defaults: TrialConfig,
    /// Accept defaults that are missing from their value list.
    #[serde(default)]
    pub allow_defaults_outside: bool,
}

impl Default for SearchSpace {
    /// The broad ranges.
    fn default() -> Self {
        Self {
            output_size: vec![16, 32, 64, 128, 256, 512, 1024],
            lr: vec![1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2],
            n_layers: vec![1, 2, 3, 4, 5, 8],
            neg_sample: vec![16, 32, 64, 128, 256, 512, 1024],
            tau: vec![0.15],
            defaults: TrialConfig::default(),
            allow_defaults_outside: false,
        }
    }
}

impl SearchSpace {
    /// The narrow grid used for the largest dataset.
    pub fn narrow_example() -> Self {
        Self {
            output_size: vec![128, 256],
            lr: vec![5e-4],
            n_layers: vec![2, 3],
            neg_sample: vec![512],
            tau: vec![0.15],
            defaults: TrialConfig::default(),
            allow_defaults_outside: true,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let space: SearchSpace =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("search space {}: {e}", path.display())))?;
        space.validate()?;
        Ok(space)
    }

    pub fn values(&self, p: Param) -> Vec<f64> {
        match p {
            Param::OutputSize => self.output_size.iter().map(|&v| v as f64).collect(),
            Param::Lr => self.lr.iter().map(|&v| f64::from(v)).collect(),
            Param::NLayers => self.n_layers.iter().map(|&v| v as f64).collect(),
            Param::NegSample => self.neg_sample.iter().map(|&v| v as f64).collect(),
            Param::Tau => self.tau.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in Param::ALL {
            let vals = self.values(p);
            if vals.is_empty() {
                return Err(Error::InvalidConfig(format!("search space: {} has no values", p.name())));
            }
            if !self.allow_defaults_outside && !vals.contains(&p.get(&self.defaults)) {
                return Err(Error::InvalidConfig(format!(
                    "search space: default {} = {} is not in its list",
                    p.name(),
                    p.get(&self.defaults)
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub key: String,
    pub config: TrialConfig,
    pub val_recall: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Resolved positives per user.
    pub k: Option<usize>,
    pub error: Option<String>,
    pub log_file: Option<String>,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub val_recall: f64,
    pub best_epoch: usize,
    pub k: usize,
    /// JSON-lines training log, stored next to the record.
    pub log: Option<Vec<u8>>,
}

pub trait TrialRunner: Sync {
    fn run(&self, config: &TrialConfig) -> Result<TrialOutcome>;

    /// Anything besides the trial config that changes results, such as the
    /// dataset or the seeds. Part of every record key.
    fn fingerprint(&self) -> String {
        String::new()
    }
}

/// Trains on one split; with several seeds the validation recall is averaged.
pub struct SplitRunner<'a> {
    pub split: &'a DatasetSplit,
    pub item_emb0: &'a EmbeddingMatrix,
    pub base: TrainConfig,
    pub seeds: Vec<u64>,
}

impl TrialRunner for SplitRunner<'_> {
    fn run(&self, config: &TrialConfig) -> Result<TrialOutcome> {
        let seeds = if self.seeds.is_empty() {
            vec![self.base.seed]
        } else {
            self.seeds.clone()
        };
        let mut total = 0.0;
        let mut first = None;
        for &seed in &seeds {
            let cfg = TrainConfig {
                seed,
                ..config.apply(&self.base)
            };
            let out = train(self.split, self.item_emb0, &cfg)?;
            total += out.log.best_val_recall;
            if first.is_none() {
                let mut log = Vec::new();
                out.log.write_jsonl(&mut log)?;
                first = Some((out.log.best_epoch, out.log.k, log));
            }
        }
        let (best_epoch, k, log) = first.expect("at least one seed");
        Ok(TrialOutcome {
            val_recall: total / seeds.len() as f64,
            best_epoch,
            k,
            log: Some(log),
        })
    }

    fn fingerprint(&self) -> String {
        let mut base = self.base.clone();
        base.seed = 0;
        format!(
            "{}|{}|{}|{:?}",
            self.split.name,
            self.item_emb0.checksum(),
            serde_json::to_string(&base).unwrap_or_default(),
            if self.seeds.is_empty() { vec![self.base.seed] } else { self.seeds.clone() }
        )
    }
}

pub fn trial_key(fingerprint: &str, config: &TrialConfig) -> String {
    let mut h = Sha256::new();
    h.update((fingerprint.len() as u64).to_le_bytes());
    h.update(fingerprint.as_bytes());
    h.update(serde_json::to_string(config).unwrap_or_default().as_bytes());
    hex::encode(&h.finalize()[..12])
}

/// Append-only directory of trial records.
pub struct RecordStore {
    dir: PathBuf,
}

impl RecordStore {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join("logs")).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_owned() })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("trial-{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<TrialRecord>> {
        let path = self.path(key);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    /// Existing records are never replaced.
    pub fn put(&self, record: &TrialRecord, log: Option<&[u8]>) -> Result<()> {
        let path = self.path(&record.key);
        if path.exists() {
            return Ok(());
        }
        if let (Some(log), Some(name)) = (log, &record.log_file) {
            self.write_atomic(&self.dir.join(name), log)?;
        }
        let json = serde_json::to_string_pretty(record)? + "\n";
        self.write_atomic(&path, json.as_bytes())
    }

    /// Every stored record, ordered by key.
    pub fn all(&self) -> Result<Vec<TrialRecord>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))? {
            let path = entry.map_err(|e| Error::io(&self.dir, e))?.path();
            let is_record = path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trial-") && n.ends_with(".json"));
            if is_record {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                out.push(serde_json::from_str(&text)?);
            }
        }
        out.sort_by(|a: &TrialRecord, b| a.key.cmp(&b.key));
        Ok(out)
    }
}

pub struct Tuner<'a> {
    pub store: &'a RecordStore,
    pub runner: &'a dyn TrialRunner,
    /// Trials run at once.
    pub parallelism: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub executed: usize,
    pub reused: usize,
}

impl Tuner<'_> {
    /// Runs each distinct config once; stored trials are loaded instead.
    /// Failed trials are recorded and do not stop the others.
    pub fn run_trials(&self, configs: &[TrialConfig]) -> Result<(Vec<TrialRecord>, RunStats)> {
        let fp = self.runner.fingerprint();
        let mut distinct: Vec<(String, TrialConfig)> = Vec::new();
        for c in configs {
            let key = trial_key(&fp, c);
            if !distinct.iter().any(|(k, _)| *k == key) {
                distinct.push((key, c.clone()));
            }
        }
        let mut stats = RunStats::default();
        let mut records: Vec<Option<TrialRecord>> = Vec::with_capacity(distinct.len());
        let mut pending = Vec::new();
        for (idx, (key, _)) in distinct.iter().enumerate() {
            let r = self.store.get(key)?;
            if r.is_none() {
                pending.push(idx);
            }
            records.push(r);
        }
        stats.reused = distinct.len() - pending.len();
        stats.executed = pending.len();

        for wave in pending.chunks(self.parallelism.max(1)) {
            let done: Vec<(usize, TrialRecord, Option<Vec<u8>>)> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&idx| {
                        let (key, config) = &distinct[idx];
                        s.spawn(move || {
                            let started = Instant::now();
                            let result = self.runner.run(config);
                            let wall_secs = started.elapsed().as_secs_f64();
                            let (rec, log) = match result {
                                Ok(o) => (
                                    TrialRecord {
                                        key: key.clone(),
                                        config: config.clone(),
                                        val_recall: Some(o.val_recall),
                                        best_epoch: Some(o.best_epoch),
                                        k: Some(o.k),
                                        error: None,
                                        log_file: o.log.as_ref().map(|_| format!("logs/{key}.jsonl")),
                                        wall_secs,
                                    },
                                    o.log,
                                ),
                                Err(e) => {
                                    log::warn!("trial {key} failed: {e}");
                                    (
                                        TrialRecord {
                                            key: key.clone(),
                                            config: config.clone(),
                                            val_recall: None,
                                            best_epoch: None,
                                            k: None,
                                            error: Some(e.to_string()),
                                            log_file: None,
                                            wall_secs,
                                        },
                                        None,
                                    )
                                }
                            };
                            (idx, rec, log)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("trial thread panicked")).collect()
            });
            for (idx, rec, log) in done {
                self.store.put(&rec, log.as_deref())?;
                records[idx] = Some(rec);
            }
        }
        Ok((records.into_iter().map(|r| r.expect("every trial resolved")).collect(), stats))
    }
}

/// Configs that vary one parameter at a time around the defaults, with the
/// shared all-defaults config listed once.
pub fn greedy_configs(space: &SearchSpace) -> Vec<TrialConfig> {
    let mut out = vec![space.defaults.clone()];
    for p in Param::ALL {
        for v in space.values(p) {
            let mut c = space.defaults.clone();
            p.set(&mut c, v);
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    out
}

pub fn grid_configs(space: &SearchSpace) -> Vec<TrialConfig> {
    let mut out = vec![space.defaults.clone()];
    for p in Param::ALL {
        let vals = space.values(p);
        out = out
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |&v| {
                    let mut c = c.clone();
                    p.set(&mut c, v);
                    c
                })
            })
            .collect();
    }
    out.dedup();
    out
}

/// Higher recall first; on ties the smaller output, then fewer layers.
fn better(a: &TrialRecord, b: &TrialRecord) -> Ordering {
    let va = a.val_recall.unwrap_or(f64::NEG_INFINITY);
    let vb = b.val_recall.unwrap_or(f64::NEG_INFINITY);
    va.total_cmp(&vb)
        .then_with(|| b.config.output_size.cmp(&a.config.output_size))
        .then_with(|| b.config.n_layers.cmp(&a.config.n_layers))
}

/// The best successful record; among full ties the earliest one.
pub fn select_best(records: &[TrialRecord]) -> Option<&TrialRecord> {
    records
        .iter()
        .filter(|r| r.val_recall.is_some())
        .fold(None, |best: Option<&TrialRecord>, r| match best {
            Some(b) if better(r, b) != Ordering::Greater => Some(b),
            _ => Some(r),
        })
}

#[derive(Clone, Debug)]
pub struct GreedyResult {
    /// Best value of each parameter in its own sweep.
    pub best: Vec<(Param, f64)>,
    pub records: Vec<TrialRecord>,
    pub stats: RunStats,
}

pub fn greedy_stage(space: &SearchSpace, tuner: &Tuner) -> Result<GreedyResult> {
    space.validate()?;
    let configs = greedy_configs(space);
    let (records, stats) = tuner.run_trials(&configs)?;
    let mut best = Vec::new();
    for p in Param::ALL {
        let sweep: Vec<TrialRecord> = records
            .iter()
            .filter(|r| r.config.differs_from(&space.defaults).iter().all(|q| *q == p))
            .cloned()
            .collect();
        if let Some(b) = select_best(&sweep) {
            best.push((p, p.get(&b.config)));
        }
    }
    Ok(GreedyResult { best, records, stats })
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best: Option<TrialConfig>,
    pub records: Vec<TrialRecord>,
    pub stats: RunStats,
}

pub fn grid_stage(space: &SearchSpace, tuner: &Tuner) -> Result<GridResult> {
    for p in Param::ALL {
        if space.values(p).is_empty() {
            return Err(Error::InvalidConfig(format!("search space: {} has no values", p.name())));
        }
    }
    let (records, stats) = tuner.run_trials(&grid_configs(space))?;
    Ok(GridResult {
        best: select_best(&records).map(|r| r.config.clone()),
        records,
        stats,
    })
}

pub const DEFAULT_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Clone, Debug)]
pub struct QuantileResult {
    pub best: Option<KPolicy>,
    /// `(policy, resolved k)` per trial, in sweep order.
    pub resolved: Vec<(KPolicy, usize)>,
    pub records: Vec<TrialRecord>,
    pub stats: RunStats,
}

/// Sweeps positives-per-user as quantiles of the train degree distribution,
/// optionally with a fixed single positive.
pub fn pos_quantile_sweep(
    train: &InteractionMatrix,
    base: &TrialConfig,
    quantiles: &[f64],
    include_single: bool,
    tuner: &Tuner,
) -> Result<QuantileResult> {
    let mut policies: Vec<KPolicy> = quantiles.iter().map(|&q| KPolicy::Quantile(q)).collect();
    if include_single {
        policies.push(KPolicy::Fixed(1));
    }
    let mut resolved = Vec::new();
    for p in &policies {
        let k = match *p {
            KPolicy::Quantile(q) => interaction_quantile(train, q)?,
            KPolicy::Fixed(k) => k,
        };
        resolved.push((*p, k));
    }
    let configs: Vec<TrialConfig> = policies
        .iter()
        .map(|&k_policy| TrialConfig {
            k_policy,
            ..base.clone()
        })
        .collect();
    let (records, stats) = tuner.run_trials(&configs)?;
    Ok(QuantileResult {
        best: select_best(&records).map(|r| r.config.k_policy),
        resolved,
        records,
        stats,
    })
}

fn policy_label(p: &KPolicy) -> String {
    match p {
        KPolicy::Fixed(k) => format!("k={k}"),
        KPolicy::Quantile(q) => format!("q={q}"),
    }
}

pub fn summary_tsv(records: &[TrialRecord]) -> String {
    let mut s = String::from("key\toutput_size\tlr\tn_layers\tneg_sample\ttau\tpositives\tk\tval_recall\tbest_epoch\terror\n");
    for r in records {
        let c = &r.config;
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.key,
            c.output_size,
            c.lr,
            c.n_layers,
            c.neg_sample,
            c.tau,
            policy_label(&c.k_policy),
            r.k.map_or("-".into(), |k| k.to_string()),
            r.val_recall.map_or("-".into(), |v| format!("{v:.6}")),
            r.best_epoch.map_or("-".into(), |e| e.to_string()),
            r.error.as_deref().unwrap_or("-"),
        ));
    }
    s
}

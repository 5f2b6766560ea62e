//! Resolution of run settings: flags, then `TEXTGCN_*` environment
//! variables, then the `--config` JSON file, then built-in defaults. Every
//! resolved value is remembered with its origin for the run manifest.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use textgcn::embed::URL_ENV;
use textgcn::tower::TowerMode;
use textgcn::trainer::{KPolicy, TrainConfig};

use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Flag,
    Env,
    File,
    Default,
}

#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub value: Value,
    pub source: Source,
}

pub struct Resolver {
    file: Map<String, Value>,
    pub entries: BTreeMap<String, Resolved>,
}

fn env_name(key: &str) -> String {
    match key {
        "endpoint" => URL_ENV.to_owned(),
        _ => format!("TEXTGCN_{}", key.to_uppercase()),
    }
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            None => Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
                match serde_json::from_str(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(UsageError(format!("config {} must hold a JSON object", p.display())).into()),
                    Err(e) => return Err(UsageError(format!("config {}: {e}", p.display())).into()),
                }
            }
        };
        Ok(Self {
            file,
            entries: BTreeMap::new(),
        })
    }

    fn lookup<T>(&self, key: &str, flag: Option<T>) -> Result<Option<(T, Source)>>
    where
        T: FromStr + DeserializeOwned,
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(Some((v, Source::Flag)));
        }
        let name = env_name(key);
        if let Ok(raw) = std::env::var(&name) {
            let v = raw
                .parse::<T>()
                .map_err(|e| UsageError(format!("{name}={raw}: {e}")))?;
            return Ok(Some((v, Source::Env)));
        }
        if let Some(raw) = self.file.get(key) {
            let v = serde_json::from_value::<T>(raw.clone())
                .or_else(|_| match raw {
                    Value::String(s) => s.parse::<T>().map_err(|e| e.to_string()),
                    _ => Err("wrong type".into()),
                })
                .map_err(|e| UsageError(format!("config key {key}: {e}")))?;
            return Ok(Some((v, Source::File)));
        }
        Ok(None)
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + DeserializeOwned + Serialize,
        T::Err: std::fmt::Display,
    {
        let (v, source) = self.lookup(key, flag)?.unwrap_or((default, Source::Default));
        self.record(key, &v, source);
        Ok(v)
    }

    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + DeserializeOwned + Serialize,
        T::Err: std::fmt::Display,
    {
        match self.lookup(key, flag)? {
            Some((v, source)) => {
                self.record(key, &v, source);
                Ok(Some(v))
            }
            None => {
                self.record(key, &Value::Null, Source::Default);
                Ok(None)
            }
        }
    }

    pub fn record<T: Serialize>(&mut self, key: &str, value: &T, source: Source) {
        let value = serde_json::to_value(value).unwrap_or(Value::Null);
        self.entries.insert(key.to_owned(), Resolved { value, source });
    }
}

/// Training hyperparameters shared by `train`, `tune` and `ablate`.
#[derive(Args, Clone, Debug, Default)]
pub struct HyperArgs {
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f32>,
    /// Tower output dimension.
    #[arg(long)]
    pub out_dim: Option<usize>,
    /// Graph propagation layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Negatives per user.
    #[arg(long)]
    pub neg: Option<usize>,
    /// Positives per user as a quantile of train degrees.
    #[arg(long)]
    pub pos_quantile: Option<f64>,
    /// Fixed positives per user; overrides --pos-quantile.
    #[arg(long)]
    pub pos_k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f32>,
    /// Users per batch.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// one or two.
    #[arg(long)]
    pub tower: Option<String>,
    /// Validate every n epochs.
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl HyperArgs {
    pub fn resolve(&self, r: &mut Resolver) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let tower: String = r.get("tower", self.tower.clone(), "two".to_owned())?;
        let tower_mode = TowerMode::from_str(&tower).map_err(|e| UsageError(e.to_string()))?;
        let pos_k = r.get_opt("pos_k", self.pos_k)?;
        let q = r.get("pos_quantile", self.pos_quantile, 0.5)?;
        let k_policy = match pos_k {
            Some(k) => KPolicy::Fixed(k),
            None => KPolicy::Quantile(q),
        };
        let cfg = TrainConfig {
            lr: r.get("lr", self.lr, d.lr)?,
            d_out: r.get("out_dim", self.out_dim, d.d_out)?,
            layers: r.get("layers", self.layers, d.layers)?,
            negatives: r.get("neg", self.neg, d.negatives)?,
            k_policy,
            tau: r.get("tau", self.tau, d.tau)?,
            batch_users: r.get("batch", self.batch, d.batch_users)?,
            patience: r.get("patience", self.patience, d.patience)?,
            max_epochs: r.get("max_epochs", self.max_epochs, d.max_epochs)?,
            seed: r.get("seed", self.seed, d.seed)?,
            tower_mode,
            eval_k: d.eval_k,
            eval_every: r.get("eval_every", self.eval_every, d.eval_every)?,
        };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

pub fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| UsageError(format!("{what}: {s}: {e}")).into()))
        .collect::<Result<Vec<T>>>()
        .with_context(|| format!("parsing {what}"))
}

//! Seeded clustered datasets for offline runs of the whole pipeline, and a
//! per-user random holdout splitter.
//!
//! Users and items belong to topical clusters. Item titles carry their
//! cluster's topic words, so title embeddings reflect the clusters, while
//! finer taste groups inside each cluster are visible only in the
//! interaction graph. Item popularity within a cluster is Zipf-skewed.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ids::IdMaps;
use super::io::{DatasetSplit, ItemCatalog};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub clusters: usize,
    pub users: usize,
    pub items: usize,
    pub seed: u64,
    /// Taste groups per cluster, invisible in titles.
    pub groups: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    /// Probability that an interaction stays inside the user's cluster.
    pub p_cluster: f64,
    /// Probability that an in-cluster interaction stays inside the user's group.
    pub p_group: f64,
    pub zipf: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    /// Prefix for external IDs, keeping generated corpora disjoint.
    pub prefix: String,
    /// Shift applied to cluster topic words. Corpora with the same shift
    /// share title geometry.
    pub topic_shift: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            clusters: 2,
            users: 200,
            items: 100,
            seed: 7,
            groups: 3,
            min_degree: 8,
            max_degree: 20,
            p_cluster: 0.9,
            p_group: 0.8,
            zipf: 0.8,
            val_frac: 0.1,
            test_frac: 0.2,
            prefix: String::new(),
            topic_shift: 0,
        }
    }
}

/// Parses `key:value` pairs separated by commas, e.g.
/// `clusters:2,users:200,items:100,seed:7`. Unlisted keys keep defaults.
impl FromStr for SyntheticConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = SyntheticConfig::default();
        let bad = |msg: String| Error::InvalidConfig(format!("synthetic spec: {msg}"));
        for kv in s.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv.split_once(':').ok_or_else(|| bad(format!("expected key:value, got {kv}")))?;
            let int = || v.parse::<usize>().map_err(|_| bad(format!("{k} expects an integer")));
            let float = || v.parse::<f64>().map_err(|_| bad(format!("{k} expects a number")));
            match k {
                "clusters" => cfg.clusters = int()?,
                "users" => cfg.users = int()?,
                "items" => cfg.items = int()?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad("seed expects an integer".into()))?,
                "groups" => cfg.groups = int()?,
                "min_degree" => cfg.min_degree = int()?,
                "max_degree" => cfg.max_degree = int()?,
                "p_cluster" => cfg.p_cluster = float()?,
                "p_group" => cfg.p_group = float()?,
                "zipf" => cfg.zipf = float()?,
                "val" => cfg.val_frac = float()?,
                "test" => cfg.test_frac = float()?,
                "prefix" => cfg.prefix = v.to_owned(),
                "topic_shift" => cfg.topic_shift = int()?,
                _ => return Err(bad(format!("unknown key {k}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic spec: {m}")));
        if self.clusters == 0 || self.groups == 0 {
            return bad("clusters and groups must be positive");
        }
        if self.items < self.clusters * self.groups {
            return bad("need at least one item per cluster group");
        }
        if self.users == 0 {
            return bad("need at least one user");
        }
        if self.min_degree < 3 || self.min_degree > self.max_degree {
            return bad("degrees must satisfy 3 <= min_degree <= max_degree");
        }
        if self.max_degree >= self.items {
            return bad("max_degree must be below the item count");
        }
        for p in [self.p_cluster, self.p_group, self.val_frac, self.test_frac] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities and fractions must lie in [0, 1]");
            }
        }
        if self.val_frac + self.test_frac >= 1.0 {
            return bad("val + test fractions must leave room for training");
        }
        Ok(())
    }
}

const TOPIC_WORDS: &[&str] = &[
    "galaxy", "orchard", "harbor", "circuit", "meadow", "canyon", "violin", "glacier", "lantern", "compass", "ember",
    "prairie", "summit", "reef", "quartz", "thistle",
];
const FILLER_WORDS: &[&str] = &["deluxe", "edition", "classic", "series", "pack", "volume", "set", "collection"];

fn topic_words(cluster: usize, shift: usize) -> Vec<String> {
    (0..3)
        .map(|w| {
            let k = (cluster + shift) * 3 + w;
            let base = TOPIC_WORDS[k % TOPIC_WORDS.len()];
            if k < TOPIC_WORDS.len() {
                base.to_owned()
            } else {
                format!("{base}{}", k / TOPIC_WORDS.len())
            }
        })
        .collect()
}

/// Generates a clustered dataset and holds out val/test items per user.
pub fn generate(cfg: &SyntheticConfig) -> Result<DatasetSplit> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, &[0x5e_17]);

    let cluster_of_item = |i: usize| i % cfg.clusters;
    let group_of_item = |i: usize| (i / cfg.clusters) % cfg.groups;

    // Items per (cluster, group) with Zipf weights by rank.
    let mut pools: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); cfg.groups]; cfg.clusters];
    for i in 0..cfg.items {
        pools[cluster_of_item(i)][group_of_item(i)].push(i);
    }
    for c in pools.iter_mut() {
        for g in c.iter_mut() {
            g.shuffle(&mut rng);
        }
    }
    let weight = |rank: usize| 1.0 / ((rank + 1) as f64).powf(cfg.zipf);
    let draw = |pool: &[usize], rng: &mut rng::StreamRng| -> usize {
        let total: f64 = (0..pool.len()).map(weight).sum();
        let mut x = rng.gen::<f64>() * total;
        for (r, &item) in pool.iter().enumerate() {
            x -= weight(r);
            if x <= 0.0 {
                return item;
            }
        }
        *pool.last().unwrap()
    };

    let mut maps = IdMaps::new();
    let mut titles = Vec::with_capacity(cfg.items);
    for i in 0..cfg.items {
        maps.items.intern(&format!("{}i{i}", cfg.prefix));
        let mut words = topic_words(cluster_of_item(i), cfg.topic_shift);
        words.push(FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())].to_owned());
        words.push(format!("{}model{i}", cfg.prefix));
        titles.push(words.join(" "));
    }

    let mut per_user: Vec<Vec<u32>> = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        maps.users.intern(&format!("{}u{u}", cfg.prefix));
        let cluster = u % cfg.clusters;
        let group = (u / cfg.clusters) % cfg.groups;
        let degree = rng.gen_range(cfg.min_degree..=cfg.max_degree);
        let mut items: Vec<u32> = Vec::with_capacity(degree);
        let mut attempts = 0;
        while items.len() < degree {
            attempts += 1;
            if attempts > 100 * degree {
                // Tiny pools under strict locality: fill uniformly.
                let item = rng.gen_range(0..cfg.items) as u32;
                if !items.contains(&item) {
                    items.push(item);
                }
                continue;
            }
            let c = if rng.gen_bool(cfg.p_cluster) || cfg.clusters == 1 {
                cluster
            } else {
                (cluster + rng.gen_range(1..cfg.clusters)) % cfg.clusters
            };
            let g = if c == cluster && rng.gen_bool(cfg.p_group) {
                group
            } else {
                rng.gen_range(0..cfg.groups)
            };
            let item = draw(&pools[c][g], &mut rng) as u32;
            if !items.contains(&item) {
                items.push(item);
            }
        }
        per_user.push(items);
    }

    let (train, val, test) = holdout(&per_user, cfg.val_frac, cfg.test_frac, cfg.seed);
    let name = if cfg.prefix.is_empty() {
        "synthetic".to_owned()
    } else {
        format!("synthetic-{}", cfg.prefix)
    };
    DatasetSplit::from_pairs(name, maps, train, val, test, ItemCatalog::new(titles)?)
}

type Pairs = Vec<(u32, u32)>;

/// Per-user random holdout. Every user keeps at least one train item; a
/// user with at least three items gets at least one test item.
pub fn holdout(per_user: &[Vec<u32>], val_frac: f64, test_frac: f64, seed: u64) -> (Pairs, Pairs, Pairs) {
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (u, items) in per_user.iter().enumerate() {
        let mut items = items.clone();
        items.shuffle(&mut rng::stream(seed, &[0x5911, u as u64]));
        let n = items.len();
        let mut n_test = (n as f64 * test_frac).round() as usize;
        let mut n_val = (n as f64 * val_frac).round() as usize;
        if n >= 3 && test_frac > 0.0 {
            n_test = n_test.max(1);
        }
        while n_test + n_val >= n && n_test + n_val > 0 {
            if n_val > 0 {
                n_val -= 1;
            } else {
                n_test -= 1;
            }
        }
        let u = u as u32;
        for (k, &i) in items.iter().enumerate() {
            if k < n_test {
                test.push((u, i));
            } else if k < n_test + n_val {
                val.push((u, i));
            } else {
                train.push((u, i));
            }
        }
    }
    (train, val, test)
}

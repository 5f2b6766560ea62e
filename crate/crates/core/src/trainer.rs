//! Training loop for the projection head on top of frozen TextGCN embeddings.

use std::io::Write;
use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{interaction_quantile, DatasetSplit, EvalPart, InteractionMatrix, MergedCorpus};
use crate::diffusion::{textgcn, DiffusionOutput};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kcl::{kcl_loss, sample_batch, SamplerConfig};
use crate::rank::{evaluate, Metrics};
use crate::rng;
use crate::tower::{
    adam_step, mlp_backward_params, mlp_forward, AdamConfig, AdamState, Checkpoint, CheckpointMeta, TowerMode,
    TwoTowerParams,
};

/// How many positives each user contributes per step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KPolicy {
    Fixed(usize),
    /// Quantile of the per-user train degree distribution.
    Quantile(f64),
}

impl KPolicy {
    pub fn resolve(&self, train: &InteractionMatrix) -> Result<usize> {
        match *self {
            KPolicy::Fixed(0) => Err(Error::InvalidConfig("fixed k must be at least 1".into())),
            KPolicy::Fixed(k) => Ok(k),
            KPolicy::Quantile(q) => interaction_quantile(train, q),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub d_out: usize,
    pub layers: usize,
    pub negatives: usize,
    pub k_policy: KPolicy,
    pub tau: f32,
    pub batch_users: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub tower_mode: TowerMode,
    pub eval_k: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            d_out: 64,
            layers: 2,
            negatives: 256,
            k_policy: KPolicy::Quantile(0.5),
            tau: 0.15,
            batch_users: 1024,
            patience: 20,
            max_epochs: 500,
            seed: 0,
            tower_mode: TowerMode::Two,
            eval_k: 20,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_owned()));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be a finite non-negative number");
        }
        if self.d_out == 0 || self.negatives == 0 || self.batch_users == 0 || self.eval_k == 0 {
            return bad("d_out, negatives, batch_users and eval_k must be at least 1");
        }
        if self.patience == 0 || self.max_epochs == 0 || self.eval_every == 0 {
            return bad("patience, max_epochs and eval_every must be at least 1");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Patience counted in epochs since the best one; only a strictly larger
/// value counts as an improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    /// Records the validation value of `epoch` (1-based, increasing).
    pub fn observe(&mut self, epoch: usize, value: f64) -> Verdict {
        match self.best {
            Some((_, b)) if value <= b => self.check(epoch),
            _ => {
                self.best = Some((epoch, value));
                Verdict::Improved
            }
        }
    }

    /// Patience check for an epoch without a validation pass.
    pub fn check(&self, epoch: usize) -> Verdict {
        match self.best {
            Some((best, _)) if epoch - best >= self.patience => Verdict::Stop,
            _ => Verdict::Continue,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_recall: Option<f64>,
    #[serde(skip)]
    pub wall_secs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub stop_reason: StopReason,
    pub k: usize,
    pub diffusion_checksum: String,
}

impl TrainLog {
    /// One JSON object per epoch, then a summary line. Timings are left out
    /// so the log is reproducible byte for byte.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("train log", e);
        for e in &self.epochs {
            writeln!(w, "{}", serde_json::to_string(e)?).map_err(io)?;
        }
        let summary = serde_json::json!({
            "best_epoch": self.best_epoch,
            "best_val_recall": self.best_val_recall,
            "stop_reason": self.stop_reason,
            "k": self.k,
            "diffusion_checksum": self.diffusion_checksum,
        });
        writeln!(w, "{summary}").map_err(io)
    }

    pub fn write_timings<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("timings", e);
        writeln!(w, "epoch\twall_secs").map_err(io)?;
        for e in &self.epochs {
            writeln!(w, "{}\t{:.3}", e.epoch, e.wall_secs).map_err(io)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub diffusion: DiffusionOutput,
}

/// Tower outputs for every user and item.
pub fn apply_head(params: &TwoTowerParams, diffusion: &DiffusionOutput) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    Ok((
        params.apply_user(&diffusion.user_final)?,
        params.apply_item(&diffusion.item_final)?,
    ))
}

struct PartView<'a> {
    users: Range<usize>,
    items: Range<usize>,
    train: &'a InteractionMatrix,
    val: &'a InteractionMatrix,
}

fn validation_recall(parts: &[PartView], users: &EmbeddingMatrix, items: &EmbeddingMatrix, k: usize) -> Result<f64> {
    let mut total = 0.0;
    for p in parts {
        let m = evaluate(
            p.train,
            p.val,
            &users.slice_rows(p.users.clone()),
            &items.slice_rows(p.items.clone()),
            k,
        )?;
        total += m.recall;
    }
    Ok(total / parts.len() as f64)
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const SAMPLER_STREAM: u64 = 0x5341_4d50;
const INIT_STREAM: u64 = 0x494e_4954;

fn run(
    train: &InteractionMatrix,
    diffusion: DiffusionOutput,
    parts: &[PartView],
    sources: Vec<String>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let k = cfg.k_policy.resolve(train)?;
    let d_in = diffusion.item_final.dim();
    let diffusion_checksum = diffusion.checksum();
    let mut params = TwoTowerParams::init(cfg.tower_mode, d_in, cfg.d_out, rng::mix(cfg.seed, &[INIT_STREAM]));
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let sampler = SamplerConfig {
        k,
        negatives: cfg.negatives,
        tau: cfg.tau,
        seed: rng::mix(cfg.seed, &[SAMPLER_STREAM]),
        batch_users: cfg.batch_users,
    };
    // Users without history, or without any item left to contrast with,
    // cannot form a training example.
    let trainable: Vec<u32> = (0..train.n_users())
        .filter(|&u| {
            let d = train.user_degree(u);
            d > 0 && d < train.n_items()
        })
        .map(|u| u as u32)
        .collect();
    if trainable.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = (params.clone(), adam.clone());
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut order = trainable.clone();
        order.shuffle(&mut rng::stream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_users).enumerate() {
            let with_context = |e: Error| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} (epoch {epoch}, batch {b})")),
                other => other,
            };
            let batch = sample_batch(train, chunk, &sampler, epoch as u64)?.compact();
            let user_x = diffusion.user_final.gather(chunk);
            let item_x = diffusion.item_final.gather(&batch.items);
            let (user_y, user_tape) = mlp_forward(params.user(), &user_x)?;
            let (item_y, item_tape) = mlp_forward(params.item(), &item_x)?;
            let out = kcl_loss(&user_y, &item_y, &batch, cfg.tau).map_err(with_context)?;
            let gu = mlp_backward_params(params.user(), &user_tape, &out.grad_users)?;
            let gi = mlp_backward_params(params.item(), &item_tape, &out.grad_items)?;
            let grads = params.combine_grads(gu, gi);
            adam_step(&mut params, &grads, &mut adam).map_err(with_context)?;
            loss_sum += out.loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;

        let mut val_recall = None;
        let verdict = if epoch % cfg.eval_every == 0 {
            let (u, i) = apply_head(&params, &diffusion)?;
            let r = validation_recall(parts, &u, &i, cfg.eval_k)?;
            val_recall = Some(r);
            stopper.observe(epoch, r)
        } else {
            stopper.check(epoch)
        };
        if verdict == Verdict::Improved {
            best = (params.clone(), adam.clone());
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_recall,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch} loss {train_loss:.6} val {val_recall:?}");
        if verdict == Verdict::Stop {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    // With no validation pass at all the final weights are returned.
    let (best_epoch, best_val_recall) = stopper.best().unwrap_or((epochs.len(), f64::NAN));
    if stopper.best().is_none() {
        best = (params, adam);
    }
    let meta = CheckpointMeta {
        seed: cfg.seed,
        sources,
        config: serde_json::to_value(cfg)?,
        best_epoch: Some(best_epoch),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params: best.0,
            adam: best.1,
            meta,
        },
        log: TrainLog {
            epochs,
            best_epoch,
            best_val_recall,
            stop_reason,
            k,
            diffusion_checksum,
        },
        diffusion,
    })
}

/// Trains the head on one dataset. The TextGCN embeddings are computed once
/// from the train graph and never updated.
pub fn train(split: &DatasetSplit, item_emb0: &EmbeddingMatrix, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_rows(split.n_items(), item_emb0)?;
    let diffusion = textgcn(&split.train, item_emb0, cfg.layers)?;
    let parts = [PartView {
        users: 0..split.n_users(),
        items: 0..split.n_items(),
        train: &split.train,
        val: &split.val,
    }];
    run(&split.train, diffusion, &parts, vec![split.name.clone()], cfg)
}

/// Trains one head over several datasets at once. Validation is the
/// unweighted mean of the per-part recalls.
pub fn train_joint(corpus: &MergedCorpus, item_embs: &[EmbeddingMatrix], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if item_embs.len() != corpus.n_parts() {
        return Err(Error::DimensionMismatch {
            context: "embedding matrices per part",
            expected: corpus.n_parts(),
            found: item_embs.len(),
        });
    }
    for (p, e) in corpus.parts.iter().zip(item_embs) {
        check_rows(p.n_items(), e)?;
    }
    let stacked = EmbeddingMatrix::vstack(&item_embs.iter().collect::<Vec<_>>())?;
    let diffusion = textgcn(&corpus.train, &stacked, cfg.layers)?;
    let parts: Vec<PartView> = corpus
        .parts
        .iter()
        .enumerate()
        .map(|(p, split)| PartView {
            users: corpus.user_range(p),
            items: corpus.item_range(p),
            train: &split.train,
            val: &split.val,
        })
        .collect();
    run(&corpus.train, diffusion, &parts, corpus.part_names(), cfg)
}

fn check_rows(n_items: usize, emb: &EmbeddingMatrix) -> Result<()> {
    if emb.n_rows() != n_items {
        return Err(Error::DimensionMismatch {
            context: "item embedding rows",
            expected: n_items,
            found: emb.n_rows(),
        });
    }
    Ok(())
}

/// Diffuses the target's own train graph and evaluates, optionally through
/// a trained head. No parameter is fitted on the target.
pub fn apply_zero_shot(
    head: Option<&TwoTowerParams>,
    target: &DatasetSplit,
    item_emb0: &EmbeddingMatrix,
    layers: usize,
    part: EvalPart,
    k: usize,
) -> Result<Metrics> {
    check_rows(target.n_items(), item_emb0)?;
    if let Some(h) = head {
        if h.d_in() != item_emb0.dim() {
            return Err(Error::CheckpointDimMismatch {
                expected: item_emb0.dim(),
                found: h.d_in(),
            });
        }
    }
    let diffusion = textgcn(&target.train, item_emb0, layers)?;
    let relevant = target.part(part);
    match head {
        None => evaluate(&target.train, relevant, &diffusion.user_final, &diffusion.item_final, k),
        Some(h) => {
            let (u, i) = apply_head(h, &diffusion)?;
            evaluate(&target.train, relevant, &u, &i, k)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub tower_mode: TowerMode,
    pub k: usize,
    pub seeds: usize,
    /// Means over seeds from here on.
    pub best_epoch: f64,
    pub val_recall: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
}

/// The four head variants: {one, two} towers × {1, k} positives. The
/// k-positive variants use `base.k_policy`.
pub fn ablation_configs(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let mut out = Vec::new();
    for mode in [TowerMode::One, TowerMode::Two] {
        for (tag, policy) in [("1-pos", KPolicy::Fixed(1)), ("k-pos", base.k_policy)] {
            let name = match mode {
                TowerMode::One => format!("one-tower {tag}"),
                TowerMode::Two => format!("two-tower {tag}"),
            };
            out.push((
                name,
                TrainConfig {
                    tower_mode: mode,
                    k_policy: policy,
                    ..base.clone()
                },
            ));
        }
    }
    out
}

/// Trains every variant once per seed and reports test metrics averaged
/// over seeds. An empty seed list means `base.seed` alone.
pub fn run_ablation(
    split: &DatasetSplit,
    item_emb0: &EmbeddingMatrix,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let seeds = if seeds.is_empty() { vec![base.seed] } else { seeds.to_vec() };
    let n = seeds.len() as f64;
    ablation_configs(base)
        .into_iter()
        .map(|(variant, cfg)| {
            let mut row = AblationRow {
                variant,
                tower_mode: cfg.tower_mode,
                k: cfg.k_policy.resolve(&split.train)?,
                seeds: seeds.len(),
                best_epoch: 0.0,
                val_recall: 0.0,
                recall: 0.0,
                ndcg: 0.0,
                hr: 0.0,
            };
            for &seed in &seeds {
                let cfg = TrainConfig { seed, ..cfg.clone() };
                let out = train(split, item_emb0, &cfg)?;
                let (u, i) = apply_head(&out.checkpoint.params, &out.diffusion)?;
                let m = evaluate(&split.train, &split.test, &u, &i, cfg.eval_k)?;
                row.best_epoch += out.log.best_epoch as f64 / n;
                row.val_recall += out.log.best_val_recall / n;
                row.recall += m.recall / n;
                row.ndcg += m.ndcg / n;
                row.hr += m.hr / n;
            }
            Ok(row)
        })
        .collect()
}

pub fn ablation_tsv(rows: &[AblationRow], k: usize) -> String {
    let mut s = format!("variant\tk_pos\tseeds\tbest_epoch\tval_recall@{k}\trecall@{k}\tndcg@{k}\thr@{k}\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{:.1}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            r.variant, r.k, r.seeds, r.best_epoch, r.val_recall, r.recall, r.ndcg, r.hr
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{generate, SyntheticConfig};
    use crate::corpus::merge_corpora;
    use crate::embed::mock_embed;

    #[test]
    fn patience_example() {
        let mut s = EarlyStopper::new(20);
        assert_eq!(s.observe(1, 0.10), Verdict::Improved);
        assert_eq!(s.observe(2, 0.11), Verdict::Improved);
        let mut stopped = None;
        for e in 3..=40 {
            if s.observe(e, 0.11 - 0.001 * (e % 3) as f64) == Verdict::Stop {
                stopped = Some(e);
                break;
            }
        }
        assert_eq!(stopped, Some(22));
        assert_eq!(s.best(), Some((2, 0.11)));
    }

    #[test]
    fn equal_value_is_not_an_improvement() {
        let mut s = EarlyStopper::new(1);
        s.observe(1, 0.5);
        assert_eq!(s.observe(2, 0.5), Verdict::Stop);
    }

    fn small() -> (DatasetSplit, EmbeddingMatrix) {
        let split = generate(&SyntheticConfig {
            users: 60,
            items: 40,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let emb = mock_embed(&split.catalog, 16, 3).unwrap();
        (split, emb)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            d_out: 8,
            negatives: 8,
            batch_users: 16,
            patience: 3,
            max_epochs: 6,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_stops_after_patience_plus_one() {
        let (split, emb) = small();
        let cfg = TrainConfig {
            lr: 0.0,
            max_epochs: 50,
            ..quick()
        };
        let out = train(&split, &emb, &cfg).unwrap();
        assert_eq!(out.log.epochs.len(), cfg.patience + 1);
        assert_eq!(out.log.best_epoch, 1);
        assert_eq!(out.log.stop_reason, StopReason::Patience);
        let init = TwoTowerParams::init(cfg.tower_mode, 16, cfg.d_out, rng::mix(cfg.seed, &[INIT_STREAM]));
        assert_eq!(out.checkpoint.params, init);
        let first = out.log.epochs[0].val_recall.unwrap();
        assert!(out.log.epochs.iter().all(|e| e.val_recall == Some(first)));
    }

    #[test]
    fn best_epoch_matches_max_and_is_reproducible() {
        let (split, emb) = small();
        let a = train(&split, &emb, &quick()).unwrap();
        let b = train(&split, &emb, &quick()).unwrap();
        let max = a
            .log
            .epochs
            .iter()
            .filter_map(|e| e.val_recall)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.log.best_val_recall, max);
        let (mut la, mut lb) = (Vec::new(), Vec::new());
        a.log.write_jsonl(&mut la).unwrap();
        b.log.write_jsonl(&mut lb).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
        assert_eq!(a.log.diffusion_checksum, textgcn(&split.train, &emb, 2).unwrap().checksum());
    }

    #[test]
    fn single_part_joint_matches_train() {
        let (split, emb) = small();
        let a = train(&split, &emb, &quick()).unwrap();
        let merged = merge_corpora(vec![split]).unwrap();
        let b = train_joint(&merged, std::slice::from_ref(&emb), &quick()).unwrap();
        let (mut la, mut lb) = (Vec::new(), Vec::new());
        a.log.write_jsonl(&mut la).unwrap();
        b.log.write_jsonl(&mut lb).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
    }

    #[test]
    fn zero_shot_identity_head_is_plain_textgcn() {
        let (split, emb) = small();
        let d = textgcn(&split.train, &emb, 2).unwrap();
        let direct = evaluate(&split.train, &split.test, &d.user_final, &d.item_final, 20).unwrap();
        let zs = apply_zero_shot(None, &split, &emb, 2, EvalPart::Test, 20).unwrap();
        assert_eq!(direct, zs);
        let head = TwoTowerParams::init(TowerMode::Two, 8, 4, 0);
        assert!(matches!(
            apply_zero_shot(Some(&head), &split, &emb, 2, EvalPart::Test, 20),
            Err(Error::CheckpointDimMismatch { .. })
        ));
    }

    #[test]
    fn ablation_has_four_variants() {
        let v = ablation_configs(&TrainConfig::default());
        let names: Vec<_> = v.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["one-tower 1-pos", "one-tower k-pos", "two-tower 1-pos", "two-tower k-pos"]);
        assert_eq!(v[0].1.k_policy, KPolicy::Fixed(1));
        assert_eq!(v[3].1.k_policy, KPolicy::Quantile(0.5));
    }
}

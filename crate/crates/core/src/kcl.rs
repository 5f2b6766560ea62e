//! k-positive contrastive loss and its batch sampler.
//!
//! For each batch user `u` with sampled positives `P_k(u)` and negatives
//! `N(u)`:
//!
//! ```text
//! L = 1/(B·k) Σ_u Σ_{p ∈ P_k(u)} -log( exp(s(u,p)/τ) / Z_u(p) )
//! Z_u(p) = exp(s(u,p)/τ) + Σ_{j ∈ N(u)} exp(s(u,j)/τ)
//! ```
//!
//! with `s` the cosine similarity. Each positive competes only with the
//! user's negatives, never with the other positives.

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::InteractionMatrix;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::{par, rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub k: usize,
    pub negatives: usize,
    pub tau: f32,
    pub seed: u64,
    pub batch_users: usize,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.negatives == 0 || self.batch_users == 0 || !(self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sampler needs k, negatives, batch_users >= 1 and tau > 0 (got k={}, J={}, B={}, tau={})",
                self.k, self.negatives, self.batch_users, self.tau
            )));
        }
        Ok(())
    }
}

/// Sampled items for a batch of users; `positives` is `B×k` and
/// `negatives` is `B×J`, both row-major global item indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastBatch {
    pub users: Vec<u32>,
    pub k: usize,
    pub j: usize,
    pub positives: Vec<u32>,
    pub negatives: Vec<u32>,
}

/// A batch re-indexed against its distinct items, ready for the loss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompactBatch {
    pub n_users: usize,
    pub k: usize,
    pub j: usize,
    /// Distinct global item indices, ascending.
    pub items: Vec<u32>,
    pub positives: Vec<u32>,
    pub negatives: Vec<u32>,
}

impl ContrastBatch {
    pub fn positives_of(&self, b: usize) -> &[u32] {
        &self.positives[b * self.k..(b + 1) * self.k]
    }

    pub fn negatives_of(&self, b: usize) -> &[u32] {
        &self.negatives[b * self.j..(b + 1) * self.j]
    }

    pub fn compact(&self) -> CompactBatch {
        let mut items: Vec<u32> = self.positives.iter().chain(&self.negatives).copied().collect();
        items.sort_unstable();
        items.dedup();
        let local: HashMap<u32, u32> = items.iter().enumerate().map(|(l, &g)| (g, l as u32)).collect();
        let remap = |v: &[u32]| v.iter().map(|g| local[g]).collect();
        CompactBatch {
            n_users: self.users.len(),
            k: self.k,
            j: self.j,
            positives: remap(&self.positives),
            negatives: remap(&self.negatives),
            items,
        }
    }
}

/// Draws `k` positives and `J` negatives for each user.
///
/// Users with at least `k` items get `k` distinct items; users with fewer
/// get every item once, topped up with uniform draws from their history.
/// Negatives are uniform over the items the user never interacted with,
/// drawn independently (repeats allowed). The random stream of each user
/// depends only on `(seed, epoch, user)`.
pub fn sample_batch(train: &InteractionMatrix, users: &[u32], cfg: &SamplerConfig, epoch: u64) -> Result<ContrastBatch> {
    cfg.validate()?;
    let n_items = train.n_items();
    let per_user = par::map_range(users.len(), |b| -> Result<(Vec<u32>, Vec<u32>)> {
        let u = users[b] as usize;
        let history = train.row(u);
        if history.is_empty() {
            return Err(Error::ZeroDegreeUser(u));
        }
        if history.len() >= n_items {
            return Err(Error::NoNegatives(u));
        }
        let mut r = rng::stream(cfg.seed, &[epoch, u as u64]);
        let pos: Vec<u32> = if history.len() >= cfg.k {
            index::sample(&mut r, history.len(), cfg.k).iter().map(|i| history[i]).collect()
        } else {
            let mut all = history.to_vec();
            all.shuffle(&mut r);
            while all.len() < cfg.k {
                all.push(history[r.gen_range(0..history.len())]);
            }
            all
        };
        let mut neg = Vec::with_capacity(cfg.negatives);
        while neg.len() < cfg.negatives {
            let cand = r.gen_range(0..n_items) as u32;
            if history.binary_search(&cand).is_err() {
                neg.push(cand);
            }
        }
        Ok((pos, neg))
    });
    let mut batch = ContrastBatch {
        users: users.to_vec(),
        k: cfg.k,
        j: cfg.negatives,
        positives: Vec::with_capacity(users.len() * cfg.k),
        negatives: Vec::with_capacity(users.len() * cfg.negatives),
    };
    for r in per_user {
        let (p, n) = r?;
        batch.positives.extend(p);
        batch.negatives.extend(n);
    }
    Ok(batch)
}

#[derive(Clone, Debug)]
pub struct KclOutput {
    pub loss: f64,
    /// `B×d`, gradient with respect to each user output row.
    pub grad_users: EmbeddingMatrix,
    /// `M×d`, gradient with respect to each distinct item output row.
    pub grad_items: EmbeddingMatrix,
}

struct UserTerms {
    loss: f64,
    grad: Vec<f32>,
    /// dL/ds for each of the k positive then J negative slots.
    coefs: Vec<f64>,
    sims: Vec<f64>,
    unit: Vec<f64>,
}

fn unit_rows(m: &EmbeddingMatrix, what: &'static str) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let rows = par::map_range(m.n_rows(), |r| {
        let v = m.row(r);
        let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        (v.iter().map(|&x| f64::from(x) / norm).collect::<Vec<f64>>(), norm)
    });
    let mut units = Vec::with_capacity(rows.len());
    let mut norms = Vec::with_capacity(rows.len());
    for (r, (u, n)) in rows.into_iter().enumerate() {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroNorm { what, row: r });
        }
        units.push(u);
        norms.push(n);
    }
    Ok((units, norms))
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss and exact gradients with respect to the user and item output rows.
pub fn kcl_loss(
    user_out: &EmbeddingMatrix,
    item_out: &EmbeddingMatrix,
    batch: &CompactBatch,
    tau: f32,
) -> Result<KclOutput> {
    let (n, k, j) = (batch.n_users, batch.k, batch.j);
    if user_out.n_rows() != n || batch.positives.len() != n * k || batch.negatives.len() != n * j {
        return Err(Error::DimensionMismatch {
            context: "kcl batch",
            expected: n,
            found: user_out.n_rows(),
        });
    }
    if item_out.dim() != user_out.dim() {
        return Err(Error::DimensionMismatch {
            context: "kcl user/item dim",
            expected: user_out.dim(),
            found: item_out.dim(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let d = user_out.dim();
    let tau = f64::from(tau);
    let scale = 1.0 / (n as f64 * k as f64);
    let (item_units, item_norms) = unit_rows(item_out, "item")?;

    let terms = par::map_range(n, |b| -> Result<UserTerms> {
        let raw = user_out.row(b);
        let norm = raw.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroNorm { what: "user", row: b });
        }
        let unit: Vec<f64> = raw.iter().map(|&x| f64::from(x) / norm).collect();
        let slots: Vec<u32> = batch.positives[b * k..(b + 1) * k]
            .iter()
            .chain(&batch.negatives[b * j..(b + 1) * j])
            .copied()
            .collect();
        let sims: Vec<f64> = slots.iter().map(|&c| dot64(&unit, &item_units[c as usize])).collect();
        let neg_logits = &sims[k..];
        let neg_max = neg_logits.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s / tau));

        let mut loss = 0.0;
        let mut coefs = vec![0.0f64; k + j];
        for p in 0..k {
            let lp = sims[p] / tau;
            let m = lp.max(neg_max);
            let z = (lp - m).exp() + neg_logits.iter().map(|&s| (s / tau - m).exp()).sum::<f64>();
            let lse = m + z.ln();
            loss += lse - lp;
            coefs[p] += scale * ((lp - lse).exp() - 1.0) / tau;
            for (q, &s) in neg_logits.iter().enumerate() {
                coefs[k + q] += scale * (s / tau - lse).exp() / tau;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("kcl loss for batch row {b}")));
        }
        // ds/du = (v̂ - s·û) / |u|
        let mut grad = vec![0.0f64; d];
        for (slot, &c) in slots.iter().enumerate() {
            let (coef, s) = (coefs[slot], sims[slot]);
            let v = &item_units[c as usize];
            for t in 0..d {
                grad[t] += coef * (v[t] - s * unit[t]);
            }
        }
        Ok(UserTerms {
            loss: loss * scale,
            grad: grad.iter().map(|g| (g / norm) as f32).collect(),
            coefs,
            sims,
            unit,
        })
    });
    let terms: Vec<UserTerms> = terms.into_iter().collect::<Result<_>>()?;

    // Item gradients are reduced in (user, slot) order for reproducibility.
    let mut touches: Vec<Vec<(u32, u32)>> = vec![Vec::new(); item_out.n_rows()];
    for b in 0..n {
        for slot in 0..k + j {
            let c = if slot < k {
                batch.positives[b * k + slot]
            } else {
                batch.negatives[b * j + slot - k]
            };
            touches[c as usize].push((b as u32, slot as u32));
        }
    }
    let mut grad_items = EmbeddingMatrix::zeros(item_out.n_rows(), d);
    par::for_each_row_mut(grad_items.as_mut_slice(), d, |c, row| {
        if touches[c].is_empty() {
            return;
        }
        let v = &item_units[c];
        let mut acc = vec![0.0f64; d];
        for &(b, slot) in &touches[c] {
            let t = &terms[b as usize];
            let (coef, s) = (t.coefs[slot as usize], t.sims[slot as usize]);
            for q in 0..d {
                acc[q] += coef * (t.unit[q] - s * v[q]);
            }
        }
        for (r, a) in row.iter_mut().zip(acc) {
            *r = (a / item_norms[c]) as f32;
        }
    });

    let mut loss = 0.0;
    let mut grad_users = Vec::with_capacity(n * d);
    for t in terms {
        loss += t.loss;
        grad_users.extend(t.grad);
    }
    Ok(KclOutput {
        loss,
        grad_users: EmbeddingMatrix::from_vec(n, d, grad_users)?,
        grad_items,
    })
}

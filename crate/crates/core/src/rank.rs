//! Cosine top-k retrieval, ranking metrics and the non-learned baselines.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::InteractionMatrix;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::{par, rng};

pub const DEFAULT_K: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    pub user: usize,
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
    /// Fewer than `k` candidates were available.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub model: String,
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
    pub users: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UserMetrics {
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
}

/// Averages over evaluated users, before naming.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
    pub users: usize,
}

impl Metrics {
    pub fn report(self, dataset: &str, model: &str, k: usize) -> MetricsReport {
        MetricsReport {
            dataset: dataset.to_owned(),
            model: model.to_owned(),
            k,
            recall: self.recall,
            ndcg: self.ndcg,
            hr: self.hr,
            users: self.users,
        }
    }
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn row_norms(m: &EmbeddingMatrix) -> Vec<f64> {
    par::map_range(m.n_rows(), |r| l2_norm(m.row(r)))
}

/// Cosine similarity; a zero vector on either side scores 0.
fn cosine(u: &[f32], u_norm: f64, v: &[f32], v_norm: f64) -> f64 {
    if u_norm == 0.0 || v_norm == 0.0 {
        return 0.0;
    }
    let d: f64 = u.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
    d / (u_norm * v_norm)
}

#[derive(Clone, Copy, PartialEq)]
struct Scored {
    score: f64,
    item: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    // Greater means ranked earlier.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.item.cmp(&self.item))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Keeps the `k` best of `scored`, best first.
fn top_k(scored: impl Iterator<Item = Scored>, k: usize) -> Vec<Scored> {
    let mut heap: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::with_capacity(k + 1);
    for s in scored {
        if heap.len() < k {
            heap.push(std::cmp::Reverse(s));
        } else if let Some(worst) = heap.peek() {
            if s > worst.0 {
                heap.pop();
                heap.push(std::cmp::Reverse(s));
            }
        }
    }
    let mut out: Vec<Scored> = heap.into_iter().map(|r| r.0).collect();
    out.sort_unstable_by(|a, b| b.cmp(a));
    out
}

fn rank_user(
    user: usize,
    user_vec: &[f32],
    items: &EmbeddingMatrix,
    item_norms: &[f64],
    exclude: &[u32],
    k: usize,
) -> Ranking {
    let u_norm = l2_norm(user_vec);
    let scored = (0..items.n_rows() as u32)
        .filter(|i| exclude.binary_search(i).is_err())
        .map(|i| Scored {
            score: cosine(user_vec, u_norm, items.row(i as usize), item_norms[i as usize]),
            item: i,
        });
    let best = top_k(scored, k);
    Ranking {
        user,
        truncated: best.len() < k,
        items: best.iter().map(|s| s.item).collect(),
        scores: best.iter().map(|s| s.score).collect(),
    }
}

/// Top-`k` items by cosine similarity among those not in `exclude`
/// (sorted ascending). Ties go to the lower item index.
pub fn recommend_topk(
    user: usize,
    user_vec: &[f32],
    items: &EmbeddingMatrix,
    item_norms: &[f64],
    exclude: &[u32],
    k: usize,
) -> Result<Ranking> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if user_vec.len() != items.dim() {
        return Err(Error::DimensionMismatch {
            context: "user vector",
            expected: items.dim(),
            found: user_vec.len(),
        });
    }
    if l2_norm(user_vec) == 0.0 {
        return Err(Error::ZeroNorm { what: "user", row: user });
    }
    Ok(rank_user(user, user_vec, items, item_norms, exclude, k))
}

fn hits<'a>(ranked: &'a [u32], relevant: &'a [u32], k: usize) -> impl Iterator<Item = usize> + 'a {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(move |(_, i)| relevant.binary_search(i).is_ok())
        .map(|(r, _)| r)
}

/// `relevant` must be sorted ascending.
pub fn recall_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    hits(ranked, relevant, k).count() as f64 / relevant.len() as f64
}

pub fn ndcg_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let ideal: f64 = (0..relevant.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        return 0.0;
    }
    let dcg: f64 = hits(ranked, relevant, k).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / ideal
}

pub fn hr_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    if hits(ranked, relevant, k).next().is_some() {
        1.0
    } else {
        0.0
    }
}

pub fn user_metrics(ranked: &[u32], relevant: &[u32], k: usize) -> UserMetrics {
    UserMetrics {
        recall: recall_at_k(ranked, relevant, k),
        ndcg: ndcg_at_k(ranked, relevant, k),
        hr: hr_at_k(ranked, relevant, k),
    }
}

/// Neumaier compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Users with at least one train interaction and one relevant item.
pub fn evaluable_users(train: &InteractionMatrix, relevant: &InteractionMatrix) -> Vec<u32> {
    (0..train.n_users().min(relevant.n_users()))
        .filter(|&u| train.user_degree(u) > 0 && relevant.user_degree(u) > 0)
        .map(|u| u as u32)
        .collect()
}

/// Averages per-user metrics of the lists produced by `rank` over the
/// evaluable users.
pub fn evaluate_with<F>(train: &InteractionMatrix, relevant: &InteractionMatrix, k: usize, rank: F) -> Result<Metrics>
where
    F: Fn(usize) -> Vec<u32> + Sync,
{
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let users = evaluable_users(train, relevant);
    if users.is_empty() {
        return Err(Error::NoEvaluableUsers);
    }
    let per_user = par::map_range(users.len(), |i| {
        let u = users[i] as usize;
        user_metrics(&rank(u), relevant.row(u), k)
    });
    let n = per_user.len() as f64;
    Ok(Metrics {
        recall: compensated_sum(per_user.iter().map(|m| m.recall)) / n,
        ndcg: compensated_sum(per_user.iter().map(|m| m.ndcg)) / n,
        hr: compensated_sum(per_user.iter().map(|m| m.hr)) / n,
        users: per_user.len(),
    })
}

/// Cosine ranking of every evaluable user against all items, excluding each
/// user's train items.
pub fn evaluate(
    train: &InteractionMatrix,
    relevant: &InteractionMatrix,
    user_emb: &EmbeddingMatrix,
    item_emb: &EmbeddingMatrix,
    k: usize,
) -> Result<Metrics> {
    if user_emb.n_rows() != train.n_users() {
        return Err(Error::DimensionMismatch {
            context: "user embedding rows",
            expected: train.n_users(),
            found: user_emb.n_rows(),
        });
    }
    if item_emb.n_rows() != train.n_items() {
        return Err(Error::DimensionMismatch {
            context: "item embedding rows",
            expected: train.n_items(),
            found: item_emb.n_rows(),
        });
    }
    if user_emb.dim() != item_emb.dim() {
        return Err(Error::DimensionMismatch {
            context: "user/item embedding dim",
            expected: item_emb.dim(),
            found: user_emb.dim(),
        });
    }
    let norms = row_norms(item_emb);
    evaluate_with(train, relevant, k, |u| {
        rank_user(u, user_emb.row(u), item_emb, &norms, train.row(u), k).items
    })
}

/// Uniformly random `k` of each user's non-interacted items.
pub fn baseline_random(train: &InteractionMatrix, relevant: &InteractionMatrix, k: usize, seed: u64) -> Result<Metrics> {
    let n_items = train.n_items();
    evaluate_with(train, relevant, k, |u| {
        let history = train.row(u);
        let candidates: Vec<u32> = (0..n_items as u32).filter(|i| history.binary_search(i).is_err()).collect();
        let mut r = rng::stream(seed, &[u as u64]);
        index::sample(&mut r, candidates.len(), k.min(candidates.len()))
            .iter()
            .map(|j| candidates[j])
            .collect()
    })
}

/// Items by descending train count, ascending index on ties.
pub fn popularity_order(train: &InteractionMatrix) -> Vec<u32> {
    let deg = train.item_degrees();
    let mut order: Vec<u32> = (0..deg.len() as u32).collect();
    order.sort_by(|&a, &b| deg[b as usize].cmp(&deg[a as usize]).then(a.cmp(&b)));
    order
}

pub fn baseline_pop(train: &InteractionMatrix, relevant: &InteractionMatrix, k: usize) -> Result<Metrics> {
    let order = popularity_order(train);
    evaluate_with(train, relevant, k, |u| {
        let history = train.row(u);
        order
            .iter()
            .copied()
            .filter(|i| history.binary_search(i).is_err())
            .take(k)
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[[f32; 2]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    fn interactions(n_items: usize, rows: &[&[u32]]) -> InteractionMatrix {
        let pairs = rows.iter().enumerate().flat_map(|(u, r)| r.iter().map(move |&i| (u as u32, i)));
        InteractionMatrix::from_pairs(rows.len(), n_items, pairs).unwrap().0
    }

    #[test]
    fn orthogonal_basis() {
        let items = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let n = row_norms(&items);
        let r = recommend_topk(0, &[1.0, 0.0], &items, &n, &[], 2).unwrap();
        assert_eq!(r.items, vec![0, 1]);
        assert_eq!(r.scores, vec![1.0, 0.0]);
        assert!(!r.truncated);
        let r = recommend_topk(0, &[1.0, 0.0], &items, &n, &[0], 1).unwrap();
        assert_eq!(r.items, vec![1]);
        let r = recommend_topk(0, &[5.0, 0.0], &items, &n, &[0], 3).unwrap();
        assert_eq!(r.items, vec![1]);
        assert!(r.truncated);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let items = m(&[[0.0, 1.0], [1.0, 0.0], [2.0, 0.0], [1.0, 0.0]]);
        let r = recommend_topk(0, &[1.0, 0.0], &items, &row_norms(&items), &[], 3).unwrap();
        assert_eq!(r.items, vec![1, 2, 3]);
    }

    #[test]
    fn zero_user_vector_rejected() {
        let items = m(&[[1.0, 0.0]]);
        assert!(recommend_topk(3, &[0.0, 0.0], &items, &row_norms(&items), &[], 1).is_err());
    }

    #[test]
    fn metric_examples() {
        assert_eq!(recall_at_k(&[0, 5], &[5, 9], 2), 0.5);
        assert_eq!(recall_at_k(&[1, 2, 3], &[1, 3], 3), 1.0);
        assert_eq!(ndcg_at_k(&[4, 1], &[4], 2), 1.0);
        let v = ndcg_at_k(&[0, 4], &[4], 2);
        assert!((v - 0.63093).abs() < 1e-5);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert_eq!(hr_at_k(&[0, 4], &[4], 2), 1.0);
        assert_eq!(hr_at_k(&[0, 4], &[4], 1), 0.0);
    }

    #[test]
    fn pop_order_examples() {
        let train = interactions(
            3,
            &[&[0, 1, 2], &[0, 1, 2], &[0, 1, 2], &[0, 2], &[0, 2], &[2], &[2], &[2], &[2]],
        );
        assert_eq!(train.item_degrees(), &[5, 3, 9]);
        assert_eq!(popularity_order(&train), vec![2, 0, 1]);
    }

    #[test]
    fn perfect_embeddings_score_one() {
        let train = interactions(4, &[&[0], &[1]]);
        let test = interactions(4, &[&[2], &[3]]);
        let users = EmbeddingMatrix::from_rows(&[[0.0f32, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]).unwrap();
        let items = EmbeddingMatrix::from_rows(&[
            [1.0f32, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let r = evaluate(&train, &test, &users, &items, 1).unwrap();
        assert_eq!((r.recall, r.ndcg, r.hr, r.users), (1.0, 1.0, 1.0, 2));
    }

    #[test]
    fn users_without_relevant_or_history_skipped() {
        let train = interactions(3, &[&[0], &[], &[1]]);
        let test = interactions(3, &[&[2], &[2], &[]]);
        assert_eq!(evaluable_users(&train, &test), vec![0]);
        let empty = interactions(3, &[&[], &[], &[]]);
        assert!(matches!(baseline_pop(&train, &empty, 2), Err(Error::NoEvaluableUsers)));
    }

    #[test]
    fn random_baseline_excludes_history_and_repeats() {
        let train = interactions(10, &[&[1, 3, 4, 8], &[0]]);
        let test = interactions(10, &[&[2], &[5]]);
        let a = baseline_random(&train, &test, 6, 3).unwrap();
        assert_eq!(a, baseline_random(&train, &test, 6, 3).unwrap());
        // With k equal to the candidate count every relevant item is found.
        let full = baseline_random(&train, &test, 9, 3).unwrap();
        assert_eq!(full.recall, 1.0);
    }

    #[test]
    fn compensated_sum_is_accurate() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }
}

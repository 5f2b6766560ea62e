//! Independent f64 reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textgcn::corpus::InteractionMatrix;
use textgcn::embed::EmbeddingMatrix;
use textgcn::tower::MlpParams;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct Graph {
    pub train: InteractionMatrix,
    pub items: EmbeddingMatrix,
}

/// Random bipartite graph with uniform embeddings in [-1, 1]. Isolated users
/// and items are allowed.
pub fn random_graph(rng: &mut ChaCha8Rng, max_users: usize, max_items: usize, max_dim: usize) -> Graph {
    let n_users = rng.gen_range(1..=max_users);
    let n_items = rng.gen_range(1..=max_items);
    let dim = rng.gen_range(1..=max_dim);
    let density: f64 = rng.gen_range(0.05..0.6);
    let mut pairs = Vec::new();
    for u in 0..n_users as u32 {
        for i in 0..n_items as u32 {
            if rng.gen_bool(density) {
                pairs.push((u, i));
            }
        }
    }
    let (train, _) = InteractionMatrix::from_pairs(n_users, n_items, pairs).unwrap();
    let data = (0..n_items * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Graph {
        train,
        items: EmbeddingMatrix::from_vec(n_items, dim, data).unwrap(),
    }
}

pub fn to_f64(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    m.rows().map(|r| r.iter().map(|&x| f64::from(x)).collect()).collect()
}

/// Dense symmetric-normalized adjacency over users then items, layer 0
/// users as interacted-item means, output the mean of layers 0..=L.
pub fn dense_textgcn(train: &InteractionMatrix, items: &EmbeddingMatrix, layers: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (nu, ni, dim) = (train.n_users(), train.n_items(), items.dim());
    let n = nu + ni;
    let mut adj = vec![vec![0.0f64; n]; n];
    for (u, i) in train.iter() {
        adj[u as usize][nu + i as usize] = 1.0;
        adj[nu + i as usize][u as usize] = 1.0;
    }
    let deg: Vec<f64> = adj.iter().map(|r| r.iter().sum()).collect();
    for a in 0..n {
        for b in 0..n {
            if adj[a][b] != 0.0 {
                adj[a][b] /= (deg[a] * deg[b]).sqrt();
            }
        }
    }
    let item_rows = to_f64(items);
    let mut e = vec![vec![0.0f64; dim]; n];
    for (u, eu) in e.iter_mut().enumerate().take(nu) {
        let row = train.row(u);
        for &i in row {
            for (x, y) in eu.iter_mut().zip(&item_rows[i as usize]) {
                *x += y / row.len() as f64;
            }
        }
    }
    e[nu..].clone_from_slice(&item_rows);
    let mut sum = e.clone();
    for _ in 0..layers {
        let next: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                let mut out = vec![0.0; dim];
                for b in 0..n {
                    if adj[a][b] != 0.0 {
                        for d in 0..dim {
                            out[d] += adj[a][b] * e[b][d];
                        }
                    }
                }
                out
            })
            .collect();
        for a in 0..n {
            for d in 0..dim {
                sum[a][d] += next[a][d];
            }
        }
        e = next;
    }
    let scale = 1.0 / (layers + 1) as f64;
    let mean: Vec<Vec<f64>> = sum.into_iter().map(|r| r.into_iter().map(|x| x * scale).collect()).collect();
    (mean[..nu].to_vec(), mean[nu..].to_vec())
}

pub fn max_abs_diff(a: &EmbeddingMatrix, b: &[Vec<f64>]) -> f64 {
    a.rows()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| (f64::from(p) - q).abs()))
        .fold(0.0, f64::max)
}

/// f64 copy of an MLP's tensors, in `[w1, b1, w2, b2]` order.
pub fn mlp_tensors(p: &MlpParams) -> [Vec<f64>; 4] {
    p.tensors().map(|t| t.iter().map(|&x| f64::from(x)).collect())
}

/// `y = W2 leaky(W1 x + b1) + b2` row by row, with pre-activations.
pub fn mlp_forward64(
    dims: (usize, usize, usize),
    t: &[Vec<f64>; 4],
    x: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (d_in, d_h, d_out) = dims;
    let [w1, b1, w2, b2] = t;
    let mut ys = Vec::new();
    let mut pres = Vec::new();
    for row in x {
        let pre: Vec<f64> = (0..d_h)
            .map(|j| b1[j] + (0..d_in).map(|k| w1[j * d_in + k] * row[k]).sum::<f64>())
            .collect();
        let act: Vec<f64> = pre.iter().map(|&z| if z > 0.0 { z } else { 0.01 * z }).collect();
        ys.push(
            (0..d_out)
                .map(|o| b2[o] + (0..d_h).map(|j| w2[o * d_h + j] * act[j]).sum::<f64>())
                .collect(),
        );
        pres.push(pre);
    }
    (ys, pres)
}

fn cosine64(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// k-positive contrastive loss: each positive is scored against itself plus
/// the user's shared negatives, averaged over all user-positive pairs.
pub fn kcl_loss64(
    users: &[Vec<f64>],
    items: &[Vec<f64>],
    k: usize,
    j: usize,
    positives: &[u32],
    negatives: &[u32],
    tau: f64,
) -> f64 {
    let mut total = 0.0;
    for (b, u) in users.iter().enumerate() {
        let neg: f64 = negatives[b * j..(b + 1) * j]
            .iter()
            .map(|&n| (cosine64(u, &items[n as usize]) / tau).exp())
            .sum();
        for &p in &positives[b * k..(b + 1) * k] {
            let pos = (cosine64(u, &items[p as usize]) / tau).exp();
            total -= (pos / (pos + neg)).ln();
        }
    }
    total / (users.len() * k) as f64
}

/// Cross-entropy over `[s+, s-_1..s-_J] / tau` with target 0, batch mean.
pub fn info_nce64(users: &[Vec<f64>], items: &[Vec<f64>], pos: &[u32], negatives: &[u32], j: usize, tau: f64) -> f64 {
    let mut total = 0.0;
    for (b, u) in users.iter().enumerate() {
        let mut logits = vec![cosine64(u, &items[pos[b] as usize]) / tau];
        logits.extend(negatives[b * j..(b + 1) * j].iter().map(|&n| cosine64(u, &items[n as usize]) / tau));
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - logits[0];
    }
    total / users.len() as f64
}

/// Brute-force Recall, NDCG and HR at `k`.
pub fn metrics_oracle(ranked: &[u32], relevant: &[u32], k: usize) -> (f64, f64, f64) {
    let rel: HashSet<u32> = relevant.iter().copied().collect();
    if rel.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().enumerate() {
        if pos >= k {
            break;
        }
        if rel.contains(item) {
            hits += 1;
            dcg += 1.0 / (2.0 + pos as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..rel.len().min(k) {
        idcg += 1.0 / (2.0 + pos as f64).log2();
    }
    (hits as f64 / rel.len() as f64, dcg / idcg, if hits > 0 { 1.0 } else { 0.0 })
}

/// Smallest gradient norm treated as signal. Below it both sides are
/// rounding noise of a zero gradient and only the absolute gap counts.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Norm-wise relative error of an analytic gradient against a reference.
pub fn rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    diff / norm(analytic).max(norm(reference)).max(GRAD_FLOOR)
}

/// Central difference of `f` around `x[idx]`.
pub fn central_diff(x: &mut [f64], idx: usize, h: f64, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[idx];
    x[idx] = orig + h;
    let up = f(x);
    x[idx] = orig - h;
    let down = f(x);
    x[idx] = orig;
    (up - down) / (2.0 * h)
}

fn uniform_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize, min_norm: f64) -> EmbeddingMatrix {
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let r: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        if r.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt() >= min_norm {
            rows.push(r);
        }
    }
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

/// Worst relative error of MLP parameter and input gradients against central
/// differences of an f64 forward, for one random toy instance. Instances
/// with a pre-activation near the LeakyReLU kink are redrawn.
pub fn mlp_grad_instance(seed: u64) -> f64 {
    use textgcn::tower::{mlp_backward, mlp_forward};
    let mut rng = rng(seed);
    loop {
        let (d_in, d_h, d_out) = (rng.gen_range(1..=6), rng.gen_range(1..=5), rng.gen_range(1..=4));
        let batch = rng.gen_range(1..=4);
        let mut p = MlpParams::init(d_in, d_h, d_out, rng.gen());
        p.b1.iter_mut().chain(p.b2.iter_mut()).for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let x = uniform_rows(&mut rng, batch, d_in, 0.0);
        let c = uniform_rows(&mut rng, batch, d_out, 0.0);
        let x64 = to_f64(&x);
        let c64 = to_f64(&c);
        let dims = (d_in, d_h, d_out);
        let t64 = mlp_tensors(&p);
        let (_, pre) = mlp_forward64(dims, &t64, &x64);
        if pre.iter().flatten().any(|z| z.abs() < 1e-3) {
            continue;
        }
        let objective = |t: &[Vec<f64>; 4], x: &[Vec<f64>]| -> f64 {
            let (y, _) = mlp_forward64(dims, t, x);
            y.iter().zip(&c64).flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q)).sum()
        };

        let (_, tape) = mlp_forward(&p, &x).unwrap();
        let (grads, dx) = mlp_backward(&p, &tape, &c).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (ti, analytic) in grads.tensors().iter().enumerate() {
            let mut t = t64.clone();
            let mut flat = t[ti].clone();
            let numeric: Vec<f64> = (0..flat.len())
                .map(|idx| {
                    central_diff(&mut flat, idx, h, &mut |v| {
                        t[ti] = v.to_vec();
                        objective(&t, &x64)
                    })
                })
                .collect();
            let a: Vec<f64> = analytic.iter().map(|&g| f64::from(g)).collect();
            worst = worst.max(rel_err(&a, &numeric));
        }
        let mut flat_x: Vec<f64> = x64.concat();
        let numeric: Vec<f64> = (0..flat_x.len())
            .map(|idx| {
                central_diff(&mut flat_x, idx, h, &mut |v| {
                    let rows: Vec<Vec<f64>> = v.chunks(d_in).map(<[f64]>::to_vec).collect();
                    objective(&t64, &rows)
                })
            })
            .collect();
        let a: Vec<f64> = dx.as_slice().iter().map(|&g| f64::from(g)).collect();
        return worst.max(rel_err(&a, &numeric));
    }
}

/// Random compact contrastive batch with its user and item output rows. As
/// in sampled batches, a user's negatives never repeat one of its positives.
pub fn random_contrast(rng: &mut ChaCha8Rng, k: usize) -> (EmbeddingMatrix, EmbeddingMatrix, textgcn::kcl::CompactBatch, f32) {
    let n = rng.gen_range(1..=4);
    let j = rng.gen_range(1..=5);
    let m = rng.gen_range(k + 1..=k + 6);
    let dim = rng.gen_range(2..=6);
    let users = uniform_rows(rng, n, dim, 0.2);
    let items = uniform_rows(rng, m, dim, 0.2);
    let mut positives = Vec::with_capacity(n * k);
    let mut negatives = Vec::with_capacity(n * j);
    for _ in 0..n {
        let pos: Vec<u32> = (0..k).map(|_| rng.gen_range(0..m as u32)).collect();
        let others: Vec<u32> = (0..m as u32).filter(|i| !pos.contains(i)).collect();
        negatives.extend((0..j).map(|_| others[rng.gen_range(0..others.len())]));
        positives.extend(pos);
    }
    let batch = textgcn::kcl::CompactBatch {
        n_users: n,
        k,
        j,
        items: (0..m as u32).collect(),
        positives,
        negatives,
    };
    let tau = rng.gen_range(0.1f32..1.0);
    (users, items, batch, tau)
}

/// Worst relative error of the contrastive loss gradients (user and item
/// rows) against central differences of the f64 oracle.
pub fn kcl_grad_instance(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let k = rng.gen_range(1..=3);
    let (users, items, batch, tau) = random_contrast(&mut rng, k);
    let out = textgcn::kcl::kcl_loss(&users, &items, &batch, tau).unwrap();
    let (u64s, i64s) = (to_f64(&users), to_f64(&items));
    let dim = users.dim();
    let tau = f64::from(tau);
    let loss = |u: &[Vec<f64>], i: &[Vec<f64>]| kcl_loss64(u, i, batch.k, batch.j, &batch.positives, &batch.negatives, tau);
    let h = 1e-5;

    let mut flat_u = u64s.concat();
    let num_u: Vec<f64> = (0..flat_u.len())
        .map(|idx| {
            central_diff(&mut flat_u, idx, h, &mut |v| {
                let rows: Vec<Vec<f64>> = v.chunks(dim).map(<[f64]>::to_vec).collect();
                loss(&rows, &i64s)
            })
        })
        .collect();
    let mut flat_i = i64s.concat();
    let num_i: Vec<f64> = (0..flat_i.len())
        .map(|idx| {
            central_diff(&mut flat_i, idx, h, &mut |v| {
                let rows: Vec<Vec<f64>> = v.chunks(dim).map(<[f64]>::to_vec).collect();
                loss(&u64s, &rows)
            })
        })
        .collect();
    let a_u: Vec<f64> = out.grad_users.as_slice().iter().map(|&g| f64::from(g)).collect();
    let a_i: Vec<f64> = out.grad_items.as_slice().iter().map(|&g| f64::from(g)).collect();
    rel_err(&a_u, &num_u).max(rel_err(&a_i, &num_i))
}

//! Parameter-free graph diffusion of item embeddings (TextGCN).
//!
//! Layer 0 holds the language-model item vectors and, for users, the mean of
//! the vectors of the items they interacted with. Each propagation layer
//! replaces every node by the symmetric-normalised sum of its neighbours
//! from the previous layer,
//!
//! ```text
//! e_u(l+1) = Σ_{i ∈ N(u)} e_i(l) / sqrt(|N(u)|·|N(i)|)
//! e_i(l+1) = Σ_{u ∈ N(i)} e_u(l) / sqrt(|N(i)|·|N(u)|)
//! ```
//!
//! and the output is the uniform average of layers 0..=L. Both sides of a
//! layer read only layer `l`. The module holds no trainable state.

use serde::Serialize;

use crate::corpus::InteractionMatrix;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::par;

/// Bipartite adjacency in both directions with per-edge weights
/// `1/sqrt(deg(u)·deg(i))`.
#[derive(Clone, Debug)]
pub struct NormalizedGraph {
    users: Side,
    items: Side,
}

#[derive(Clone, Debug)]
struct Side {
    indptr: Vec<usize>,
    neighbours: Vec<u32>,
    weights: Vec<f32>,
}

impl Side {
    fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    fn edges(&self, row: usize) -> (&[u32], &[f32]) {
        let r = self.indptr[row]..self.indptr[row + 1];
        (&self.neighbours[r.clone()], &self.weights[r])
    }
}

fn edge_weight(du: u32, di: u32) -> f32 {
    (1.0 / (f64::from(du) * f64::from(di)).sqrt()) as f32
}

impl NormalizedGraph {
    pub fn new(train: &InteractionMatrix) -> Self {
        let user_deg = train.user_degrees();
        let item_deg = train.item_degrees();
        let weights = |m: &InteractionMatrix, row_deg: &[u32], col_deg: &[u32]| {
            let mut w = Vec::with_capacity(m.nnz());
            for (r, &rd) in row_deg.iter().enumerate().take(m.n_users()) {
                for &c in m.row(r) {
                    w.push(edge_weight(rd, col_deg[c as usize]));
                }
            }
            w
        };
        let t = train.transpose();
        let users = Side {
            indptr: train.indptr().to_vec(),
            neighbours: train.indices().to_vec(),
            weights: weights(train, &user_deg, item_deg),
        };
        let items = Side {
            indptr: t.indptr().to_vec(),
            neighbours: t.indices().to_vec(),
            weights: weights(&t, item_deg, &user_deg),
        };
        Self { users, items }
    }

    pub fn n_users(&self) -> usize {
        self.users.n_rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.n_rows()
    }

    pub fn n_edges(&self) -> usize {
        self.users.neighbours.len()
    }

    /// Items adjacent to `user` and the corresponding edge weights.
    pub fn user_edges(&self, user: usize) -> (&[u32], &[f32]) {
        self.users.edges(user)
    }

    pub fn item_edges(&self, item: usize) -> (&[u32], &[f32]) {
        self.items.edges(item)
    }
}

/// Per-row weighted neighbour sums; row order of `src` indexes `side`'s neighbours.
fn aggregate(side: &Side, src: &EmbeddingMatrix) -> EmbeddingMatrix {
    let dim = src.dim();
    let mut out = EmbeddingMatrix::zeros(side.n_rows(), dim);
    par::for_each_row_mut(out.as_mut_slice(), dim, |r, row| {
        let (nbrs, ws) = side.edges(r);
        for (&n, &w) in nbrs.iter().zip(ws) {
            let s = src.row(n as usize);
            for (o, x) in row.iter_mut().zip(s) {
                *o += w * x;
            }
        }
    });
    out
}

/// One propagation layer: returns `(users(l+1), items(l+1))`.
pub fn propagate(
    g: &NormalizedGraph,
    users: &EmbeddingMatrix,
    items: &EmbeddingMatrix,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    check_rows("user layer", g.n_users(), users.n_rows())?;
    check_rows("item layer", g.n_items(), items.n_rows())?;
    if users.dim() != items.dim() {
        return Err(Error::DimensionMismatch {
            context: "user/item layer dim",
            expected: items.dim(),
            found: users.dim(),
        });
    }
    Ok((aggregate(&g.users, items), aggregate(&g.items, users)))
}

fn check_rows(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct UserInit {
    pub embeddings: EmbeddingMatrix,
    /// Users without interactions; their rows are zero.
    pub zero_degree: Vec<u32>,
}

/// Mean of the item vectors each user interacted with.
pub fn init_user_layer0(train: &InteractionMatrix, item_emb: &EmbeddingMatrix) -> Result<UserInit> {
    check_rows("item embeddings vs train items", train.n_items(), item_emb.n_rows())?;
    let dim = item_emb.dim();
    let mut out = EmbeddingMatrix::zeros(train.n_users(), dim);
    par::for_each_row_mut(out.as_mut_slice(), dim, |u, row| {
        let items = train.row(u);
        if items.is_empty() {
            return;
        }
        for &i in items {
            for (o, x) in row.iter_mut().zip(item_emb.row(i as usize)) {
                *o += x;
            }
        }
        let n = items.len() as f32;
        row.iter_mut().for_each(|o| *o /= n);
    });
    let zero_degree = (0..train.n_users())
        .filter(|&u| train.user_degree(u) == 0)
        .map(|u| u as u32)
        .collect();
    Ok(UserInit {
        embeddings: out,
        zero_degree,
    })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DiffusionOptions {
    pub layers: usize,
    /// Keep every intermediate layer in the output.
    pub keep_layers: bool,
}

#[derive(Clone, Debug)]
pub struct DiffusionOutput {
    pub user_final: EmbeddingMatrix,
    pub item_final: EmbeddingMatrix,
    /// `(users, items)` for layers 0..=L when requested.
    pub layers: Option<Vec<(EmbeddingMatrix, EmbeddingMatrix)>>,
    pub zero_degree_users: Vec<u32>,
    pub n_layers: usize,
}

impl DiffusionOutput {
    /// Hash of both final matrices.
    pub fn checksum(&self) -> String {
        format!("{}{}", self.user_final.checksum(), self.item_final.checksum())
    }
}

/// TextGCN embeddings with `layers` propagation steps. `layers = 0` returns
/// the raw item vectors and the user means unchanged.
pub fn textgcn(train: &InteractionMatrix, item_emb0: &EmbeddingMatrix, layers: usize) -> Result<DiffusionOutput> {
    textgcn_with(
        train,
        item_emb0,
        &DiffusionOptions {
            layers,
            keep_layers: false,
        },
    )
}

pub fn textgcn_with(
    train: &InteractionMatrix,
    item_emb0: &EmbeddingMatrix,
    opts: &DiffusionOptions,
) -> Result<DiffusionOutput> {
    let init = init_user_layer0(train, item_emb0)?;
    let graph = NormalizedGraph::new(train);

    let mut user_sum = init.embeddings.clone();
    let mut item_sum = item_emb0.clone();
    let mut kept = opts.keep_layers.then(|| vec![(init.embeddings.clone(), item_emb0.clone())]);

    let (mut u, mut i) = (init.embeddings, item_emb0.clone());
    for _ in 0..opts.layers {
        let (nu, ni) = propagate(&graph, &u, &i)?;
        add_assign(&mut user_sum, &nu);
        add_assign(&mut item_sum, &ni);
        if let Some(k) = kept.as_mut() {
            k.push((nu.clone(), ni.clone()));
        }
        u = nu;
        i = ni;
    }
    let scale = (opts.layers + 1) as f32;
    for x in user_sum.as_mut_slice().iter_mut().chain(item_sum.as_mut_slice()) {
        *x /= scale;
    }
    Ok(DiffusionOutput {
        user_final: user_sum,
        item_final: item_sum,
        layers: kept,
        zero_degree_users: init.zero_degree,
        n_layers: opts.layers,
    })
}

fn add_assign(acc: &mut EmbeddingMatrix, x: &EmbeddingMatrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *a += b;
    }
}

use rand::Rng;

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::{par, rng};

pub const LEAKY_SLOPE: f32 = 0.01;

#[inline]
pub fn leaky(z: f32) -> f32 {
    if z >= 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

/// Derivative used in backward; the kink at 0 takes slope 1.
#[inline]
fn leaky_grad(z: f32) -> f32 {
    if z >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// `y = W2 · leaky(W1 · x + b1) + b2`, weights stored row-major
/// (`w1` is `d_hidden × d_in`, `w2` is `d_out × d_hidden`).
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

pub(crate) const TENSOR_NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

impl MlpParams {
    pub fn zeros(d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_hidden,
            d_out,
            w1: vec![0.0; d_hidden * d_in],
            b1: vec![0.0; d_hidden],
            w2: vec![0.0; d_out * d_hidden],
            b2: vec![0.0; d_out],
        }
    }

    /// Weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
    /// Random biases would swamp the small diffused inputs and start every
    /// output near the same direction.
    pub fn init(d_in: usize, d_hidden: usize, d_out: usize, seed: u64) -> Self {
        let mut p = Self::zeros(d_in, d_hidden, d_out);
        let mut r = rng::stream(seed, &[0x1417]);
        let b1 = 1.0 / (d_in as f32).sqrt();
        let b2 = 1.0 / (d_hidden as f32).sqrt();
        for x in p.w1.iter_mut() {
            *x = r.gen_range(-b1..b1);
        }
        for x in p.w2.iter_mut() {
            *x = r.gen_range(-b2..b2);
        }
        p
    }

    pub fn tensors(&self) -> [&[f32]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f32>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// `(rows, cols)` of each tensor in [`TENSOR_NAMES`] order.
    pub fn shapes(&self) -> [(usize, usize); 4] {
        [
            (self.d_hidden, self.d_in),
            (1, self.d_hidden),
            (self.d_out, self.d_hidden),
            (1, self.d_out),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

impl MlpGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        let z = MlpParams::zeros(p.d_in, p.d_hidden, p.d_out);
        Self {
            w1: z.w1,
            b1: z.b1,
            w2: z.w2,
            b2: z.b2,
        }
    }

    pub fn tensors(&self) -> [&[f32]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in [
            (&mut self.w1, &other.w1),
            (&mut self.b1, &other.b1),
            (&mut self.w2, &other.w2),
            (&mut self.b2, &other.b2),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Saved activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    batch: usize,
    d_in: usize,
    d_hidden: usize,
    input: Vec<f32>,
    hidden_pre: Vec<f32>,
    hidden_act: Vec<f32>,
}

impl Tape {
    pub fn hidden_pre(&self) -> &[f32] {
        &self.hidden_pre
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight fixed lanes: vectorises without reassociating across calls.
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0f32;
    for k in chunks * 8..a.len() {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out[b, j] = bias[j] + Σ_k x[b, k] · w[j, k]`
fn affine(x: &[f32], batch: usize, d_in: usize, w: &[f32], bias: &[f32]) -> Vec<f32> {
    let d_out = bias.len();
    let mut out = vec![0.0f32; batch * d_out];
    par::for_each_row_mut(&mut out, d_out, |b, row| {
        let xb = &x[b * d_in..(b + 1) * d_in];
        for (j, o) in row.iter_mut().enumerate() {
            *o = bias[j] + dot(xb, &w[j * d_in..(j + 1) * d_in]);
        }
    });
    out
}

/// `gw[j, :] = Σ_b g[b, j] · a[b, :]` and `gb[j] = Σ_b g[b, j]`.
fn outer_accumulate(g: &[f32], a: &[f32], batch: usize, d_out: usize, d_in: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gw = vec![0.0f32; d_out * d_in];
    par::for_each_row_mut(&mut gw, d_in, |j, row| {
        for b in 0..batch {
            let coef = g[b * d_out + j];
            if coef != 0.0 {
                for (r, x) in row.iter_mut().zip(&a[b * d_in..(b + 1) * d_in]) {
                    *r += coef * x;
                }
            }
        }
    });
    let gb = (0..d_out).map(|j| (0..batch).map(|b| g[b * d_out + j]).sum()).collect();
    (gw, gb)
}

/// `out[b, :] = Σ_j g[b, j] · w[j, :]`
fn back_through(g: &[f32], w: &[f32], batch: usize, d_out: usize, d_in: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; batch * d_in];
    par::for_each_row_mut(&mut out, d_in, |b, row| {
        for j in 0..d_out {
            let coef = g[b * d_out + j];
            if coef != 0.0 {
                for (r, x) in row.iter_mut().zip(&w[j * d_in..(j + 1) * d_in]) {
                    *r += coef * x;
                }
            }
        }
    });
    out
}

fn check_input(p: &MlpParams, x: &EmbeddingMatrix) -> Result<()> {
    if x.dim() != p.d_in {
        return Err(Error::DimensionMismatch {
            context: "mlp input",
            expected: p.d_in,
            found: x.dim(),
        });
    }
    Ok(())
}

pub fn mlp_forward(p: &MlpParams, x: &EmbeddingMatrix) -> Result<(EmbeddingMatrix, Tape)> {
    check_input(p, x)?;
    let batch = x.n_rows();
    let hidden_pre = affine(x.as_slice(), batch, p.d_in, &p.w1, &p.b1);
    let hidden_act: Vec<f32> = hidden_pre.iter().map(|&z| leaky(z)).collect();
    let y = affine(&hidden_act, batch, p.d_hidden, &p.w2, &p.b2);
    let tape = Tape {
        batch,
        d_in: p.d_in,
        d_hidden: p.d_hidden,
        input: x.as_slice().to_vec(),
        hidden_pre,
        hidden_act,
    };
    Ok((EmbeddingMatrix::from_vec(batch, p.d_out, y)?, tape))
}

/// Forward pass without keeping a tape, for inference.
pub fn mlp_apply(p: &MlpParams, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    check_input(p, x)?;
    let batch = x.n_rows();
    let mut h = affine(x.as_slice(), batch, p.d_in, &p.w1, &p.b1);
    h.iter_mut().for_each(|z| *z = leaky(*z));
    EmbeddingMatrix::from_vec(batch, p.d_out, affine(&h, batch, p.d_hidden, &p.w2, &p.b2))
}

fn check_tape(p: &MlpParams, tape: &Tape, dy: &EmbeddingMatrix) -> Result<()> {
    if tape.d_in != p.d_in || tape.d_hidden != p.d_hidden {
        return Err(Error::DimensionMismatch {
            context: "stale tape",
            expected: p.d_in,
            found: tape.d_in,
        });
    }
    if dy.n_rows() != tape.batch || dy.dim() != p.d_out {
        return Err(Error::DimensionMismatch {
            context: "output gradient",
            expected: tape.batch * p.d_out,
            found: dy.n_rows() * dy.dim(),
        });
    }
    Ok(())
}

fn backward_inner(p: &MlpParams, tape: &Tape, dy: &EmbeddingMatrix, want_dx: bool) -> (MlpGrads, Option<Vec<f32>>) {
    let b = tape.batch;
    let dy = dy.as_slice();
    let (w2, b2) = outer_accumulate(dy, &tape.hidden_act, b, p.d_out, p.d_hidden);
    let mut dh = back_through(dy, &p.w2, b, p.d_out, p.d_hidden);
    for (g, &z) in dh.iter_mut().zip(&tape.hidden_pre) {
        *g *= leaky_grad(z);
    }
    let (w1, b1) = outer_accumulate(&dh, &tape.input, b, p.d_hidden, p.d_in);
    let dx = want_dx.then(|| back_through(&dh, &p.w1, b, p.d_hidden, p.d_in));
    (MlpGrads { w1, b1, w2, b2 }, dx)
}

/// Exact gradients of `Σ dy ⊙ y` with respect to parameters and input.
pub fn mlp_backward(p: &MlpParams, tape: &Tape, dy: &EmbeddingMatrix) -> Result<(MlpGrads, EmbeddingMatrix)> {
    check_tape(p, tape, dy)?;
    let (g, dx) = backward_inner(p, tape, dy, true);
    Ok((g, EmbeddingMatrix::from_vec(tape.batch, p.d_in, dx.unwrap())?))
}

/// Parameter gradients only; skips the input-gradient product.
pub fn mlp_backward_params(p: &MlpParams, tape: &Tape, dy: &EmbeddingMatrix) -> Result<MlpGrads> {
    check_tape(p, tape, dy)?;
    Ok(backward_inner(p, tape, dy, false).0)
}

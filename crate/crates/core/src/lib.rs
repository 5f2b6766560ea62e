//! TextGCN collaborative filtering.
//!
//! Item-title embeddings from a language model are diffused over the
//! user–item interaction graph with parameter-free, symmetric-normalised
//! propagation layers. The layer-averaged result ranks items for users
//! directly by cosine similarity, or feeds a two-tower MLP head trained with
//! a k-positive contrastive loss.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod diffusion;
pub mod embed;
pub mod error;
pub mod kcl;
pub mod par;
pub mod rank;
pub mod rng;
pub mod tower;
pub mod trainer;
pub mod tune;

pub use error::{Error, Result};

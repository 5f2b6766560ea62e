//! Item-title embeddings: the matrix type and its `TGE1` file format, the
//! embedding-service client with its cache, and a deterministic mock.

mod client;
mod matrix;
mod mock;

pub use client::{
    cache_key, fetch_embeddings, EmbeddingCache, EmbeddingTransport, FetchConfig, FetchStats, HttpTransport,
    API_KEY_ENV, DEFAULT_BATCH_SIZE, URL_ENV,
};
pub use matrix::{load_matrix, load_sidecar, save_matrix, save_sidecar, sidecar_path, EmbeddingMatrix};
pub use mock::{embed_title, mock_embed};

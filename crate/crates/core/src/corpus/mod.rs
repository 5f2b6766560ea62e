//! Interaction data: ingestion, ID maps, splits, quantiles and merged corpora.

mod ids;
mod io;
mod matrix;
mod merge;
pub mod synthetic;

pub use ids::{IdMaps, Vocab};
pub use io::{
    interaction_quantile, load_split, parse_interactions, read_interactions, write_interactions, write_titles,
    DatasetSplit, EvalPart, ItemCatalog, ParsedInteractions, SplitStats, ITEM_IDS_FILE, TEST_FILE, TITLES_FILE,
    TRAIN_FILE, USER_IDS_FILE, VAL_FILE,
};
pub use matrix::InteractionMatrix;
pub use merge::{merge_corpora, MergedCorpus};

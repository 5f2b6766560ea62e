use std::ops::Range;

use super::io::DatasetSplit;
use super::matrix::InteractionMatrix;
use crate::error::{Error, Result};

/// Several splits laid out in one disjoint global index space.
///
/// Part `p` owns global users `user_offsets[p]..user_offsets[p + 1]` and
/// items `item_offsets[p]..item_offsets[p + 1]`; the global train matrix is
/// block-diagonal.
#[derive(Clone, Debug)]
pub struct MergedCorpus {
    pub parts: Vec<DatasetSplit>,
    user_offsets: Vec<usize>,
    item_offsets: Vec<usize>,
    pub train: InteractionMatrix,
}

impl MergedCorpus {
    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn n_users(&self) -> usize {
        *self.user_offsets.last().unwrap()
    }

    pub fn n_items(&self) -> usize {
        *self.item_offsets.last().unwrap()
    }

    /// Start offsets of each part's users (without the trailing total).
    pub fn user_offsets(&self) -> &[usize] {
        &self.user_offsets[..self.parts.len()]
    }

    pub fn item_offsets(&self) -> &[usize] {
        &self.item_offsets[..self.parts.len()]
    }

    pub fn user_range(&self, part: usize) -> Range<usize> {
        self.user_offsets[part]..self.user_offsets[part + 1]
    }

    pub fn item_range(&self, part: usize) -> Range<usize> {
        self.item_offsets[part]..self.item_offsets[part + 1]
    }

    pub fn part_names(&self) -> Vec<String> {
        self.parts.iter().map(|p| p.name.clone()).collect()
    }
}

pub fn merge_corpora(splits: Vec<DatasetSplit>) -> Result<MergedCorpus> {
    if splits.is_empty() {
        return Err(Error::InvalidConfig("merge needs at least one split".into()));
    }
    let mut user_offsets = vec![0];
    let mut item_offsets = vec![0];
    for s in &splits {
        user_offsets.push(user_offsets.last().unwrap() + s.n_users());
        item_offsets.push(item_offsets.last().unwrap() + s.n_items());
    }
    let pairs = splits.iter().enumerate().flat_map(|(p, s)| {
        let (uo, io) = (user_offsets[p] as u32, item_offsets[p] as u32);
        s.train.iter().map(move |(u, i)| (u + uo, i + io))
    });
    let (train, dups) = InteractionMatrix::from_pairs(*user_offsets.last().unwrap(), *item_offsets.last().unwrap(), pairs)?;
    debug_assert_eq!(dups, 0);
    Ok(MergedCorpus {
        parts: splits,
        user_offsets,
        item_offsets,
        train,
    })
}

use crate::error::{Error, Result};

/// Binary user×item interaction matrix in compressed-row form.
///
/// Row `u` lists the items user `u` interacted with, strictly ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    item_degrees: Vec<u32>,
}

impl InteractionMatrix {
    pub fn empty(n_users: usize, n_items: usize) -> Self {
        Self {
            n_users,
            n_items,
            indptr: vec![0; n_users + 1],
            indices: Vec::new(),
            item_degrees: vec![0; n_items],
        }
    }

    /// Builds the matrix from (user, item) pairs in any order. Duplicate
    /// pairs are collapsed; the number of collapsed pairs is returned.
    pub fn from_pairs<I>(n_users: usize, n_items: usize, pairs: I) -> Result<(Self, usize)>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n_users];
        for (u, i) in pairs {
            let (u, i) = (u as usize, i as usize);
            if u >= n_users {
                return Err(Error::DimensionMismatch {
                    context: "interaction user index",
                    expected: n_users,
                    found: u + 1,
                });
            }
            if i >= n_items {
                return Err(Error::DimensionMismatch {
                    context: "interaction item index",
                    expected: n_items,
                    found: i + 1,
                });
            }
            rows[u].push(i as u32);
        }
        Ok(Self::from_rows(n_items, rows))
    }

    /// Sorts and deduplicates each row. Item indices must be `< n_items`.
    pub(crate) fn from_rows(n_items: usize, rows: Vec<Vec<u32>>) -> (Self, usize) {
        let n_users = rows.len();
        let mut indptr = Vec::with_capacity(n_users + 1);
        let mut indices = Vec::new();
        let mut item_degrees = vec![0u32; n_items];
        let mut duplicates = 0;
        indptr.push(0);
        for mut row in rows {
            row.sort_unstable();
            let before = row.len();
            row.dedup();
            duplicates += before - row.len();
            for &i in &row {
                item_degrees[i as usize] += 1;
            }
            indices.extend_from_slice(&row);
            indptr.push(indices.len());
        }
        (
            Self {
                n_users,
                n_items,
                indptr,
                indices,
                item_degrees,
            },
            duplicates,
        )
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Number of stored interactions.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, user: usize) -> &[u32] {
        &self.indices[self.indptr[user]..self.indptr[user + 1]]
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.indptr[user + 1] - self.indptr[user]
    }

    pub fn user_degrees(&self) -> Vec<u32> {
        self.indptr.windows(2).map(|w| (w[1] - w[0]) as u32).collect()
    }

    pub fn item_degrees(&self) -> &[u32] {
        &self.item_degrees
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn contains(&self, user: usize, item: u32) -> bool {
        self.row(user).binary_search(&item).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n_users).flat_map(move |u| self.row(u).iter().map(move |&i| (u as u32, i)))
    }

    /// Grows the matrix to larger dimensions; new rows and columns are empty.
    pub fn resized(mut self, n_users: usize, n_items: usize) -> Self {
        assert!(n_users >= self.n_users && n_items >= self.n_items);
        let last = *self.indptr.last().unwrap_or(&0);
        self.indptr.resize(n_users + 1, last);
        self.item_degrees.resize(n_items, 0);
        self.n_users = n_users;
        self.n_items = n_items;
        self
    }

    /// Item-major view: row `i` lists the users that interacted with item `i`.
    pub fn transpose(&self) -> InteractionMatrix {
        let mut indptr = vec![0usize; self.n_items + 1];
        for &i in &self.indices {
            indptr[i as usize + 1] += 1;
        }
        for k in 0..self.n_items {
            indptr[k + 1] += indptr[k];
        }
        let mut cursor = indptr.clone();
        let mut indices = vec![0u32; self.indices.len()];
        let mut user_degrees = vec![0u32; self.n_users];
        for (u, deg) in user_degrees.iter_mut().enumerate() {
            let row = self.row(u);
            *deg = row.len() as u32;
            for &i in row {
                indices[cursor[i as usize]] = u as u32;
                cursor[i as usize] += 1;
            }
        }
        InteractionMatrix {
            n_users: self.n_items,
            n_items: self.n_users,
            indptr,
            indices,
            item_degrees: user_degrees,
        }
    }

    /// Validates the structural invariants. Used by tests and after merges.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::InvalidConfig(format!("interaction matrix: {reason}")));
        if self.indptr.len() != self.n_users + 1 || self.item_degrees.len() != self.n_items {
            return bad("dimension tables out of sync");
        }
        let mut degrees = vec![0u32; self.n_items];
        for u in 0..self.n_users {
            let row = self.row(u);
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return bad("row not strictly ascending");
            }
            for &i in row {
                if i as usize >= self.n_items {
                    return bad("item index out of range");
                }
                degrees[i as usize] += 1;
            }
        }
        if degrees != self.item_degrees {
            return bad("item degrees inconsistent");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_pairs_sorts_and_dedups() {
        let (m, dups) = InteractionMatrix::from_pairs(2, 3, [(0, 2), (0, 0), (1, 1), (0, 2)]).unwrap();
        assert_eq!(dups, 1);
        assert_eq!(m.row(0), &[0, 2]);
        assert_eq!(m.row(1), &[1]);
        assert_eq!(m.item_degrees(), &[1, 1, 1]);
        assert_eq!(m.user_degrees(), vec![2, 1]);
        m.check_invariants().unwrap();
    }

    #[test]
    fn out_of_range_pair_is_rejected() {
        assert!(InteractionMatrix::from_pairs(1, 1, [(0, 1)]).is_err());
        assert!(InteractionMatrix::from_pairs(1, 1, [(1, 0)]).is_err());
    }

    #[test]
    fn transpose_swaps_roles() {
        let (m, _) = InteractionMatrix::from_pairs(3, 2, [(0, 0), (1, 0), (2, 1), (0, 1)]).unwrap();
        let t = m.transpose();
        assert_eq!(t.n_users(), 2);
        assert_eq!(t.row(0), &[0, 1]);
        assert_eq!(t.row(1), &[0, 2]);
        assert_eq!(t.item_degrees(), &[2, 1, 1]);
        assert_eq!(t.transpose(), m);
    }

    #[test]
    fn resized_keeps_rows() {
        let (m, _) = InteractionMatrix::from_pairs(1, 1, [(0, 0)]).unwrap();
        let r = m.resized(3, 4);
        assert_eq!(r.row(0), &[0]);
        assert!(r.row(2).is_empty());
        assert_eq!(r.item_degrees(), &[1, 0, 0, 0]);
        r.check_invariants().unwrap();
    }
}

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexSet;

use crate::error::{Error, Result};

/// Bijection between external string IDs and contiguous dense indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: IndexSet<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dense index of `id`, assigning the next free index on first sight.
    pub fn intern(&mut self, id: &str) -> u32 {
        if let Some(i) = self.ids.get_index_of(id) {
            return i as u32;
        }
        self.ids.insert(id.to_owned());
        (self.ids.len() - 1) as u32
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.ids.get_index_of(id).map(|i| i as u32)
    }

    pub fn external(&self, dense: usize) -> &str {
        &self.ids[dense]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    /// One external ID per line; line number is the dense index.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.ids.len() * 8);
        for id in &self.ids {
            out.push_str(id);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Vocab::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let before = vocab.len();
            vocab.intern(&line);
            if vocab.len() == before {
                return Err(Error::MalformedLine {
                    source_name: path.display().to_string(),
                    line: n + 1,
                    reason: format!("duplicate id {line}"),
                });
            }
        }
        Ok(vocab)
    }
}

impl FromIterator<String> for Vocab {
    fn from_iter<T: IntoIterator<Item = String>>(iter: T) -> Self {
        let mut v = Vocab::new();
        for id in iter {
            v.intern(&id);
        }
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMaps {
    pub users: Vocab,
    pub items: Vocab,
}

impl IdMaps {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn save(&self, users_path: &Path, items_path: &Path) -> Result<()> {
        self.users.write_to(users_path)?;
        self.items.write_to(items_path)
    }

    pub fn load(users_path: &Path, items_path: &Path) -> Result<Self> {
        Ok(Self {
            users: Vocab::read_from(users_path)?,
            items: Vocab::read_from(items_path)?,
        })
    }
}

pub(crate) fn write_lines<W: Write>(mut w: W, lines: impl Iterator<Item = String>) -> std::io::Result<()> {
    for l in lines {
        w.write_all(l.as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

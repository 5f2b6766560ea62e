use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::ids::{write_lines, IdMaps};
use super::matrix::InteractionMatrix;
use crate::error::{Error, Result};

pub const TRAIN_FILE: &str = "train.txt";
pub const VAL_FILE: &str = "val.txt";
pub const TEST_FILE: &str = "test.txt";
pub const TITLES_FILE: &str = "titles.tsv";
pub const USER_IDS_FILE: &str = "user_ids.txt";
pub const ITEM_IDS_FILE: &str = "item_ids.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedInteractions {
    pub matrix: InteractionMatrix,
    /// Repeated (user, item) pairs collapsed while parsing.
    pub duplicates: usize,
}

/// Raw pairs from one adjacency-list file, before matrix assembly.
pub(crate) struct RawPairs {
    pub pairs: Vec<(u32, u32)>,
}

pub(crate) fn read_pairs<R: BufRead>(reader: R, source_name: &str, maps: &mut IdMaps) -> Result<RawPairs> {
    let mut pairs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedLine {
            source_name: source_name.to_owned(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let user = tokens.next().expect("non-empty line has a token");
        let items: Vec<&str> = tokens.collect();
        if items.is_empty() {
            return Err(Error::MalformedLine {
                source_name: source_name.to_owned(),
                line: n + 1,
                reason: format!("user {user} has no items"),
            });
        }
        let u = maps.users.intern(user);
        for item in items {
            pairs.push((u, maps.items.intern(item)));
        }
    }
    Ok(RawPairs { pairs })
}

/// Parses an adjacency-list stream. Unseen IDs are appended to `maps` in
/// first-occurrence order; the returned matrix spans the whole of `maps`.
pub fn read_interactions<R: BufRead>(reader: R, source_name: &str, maps: &mut IdMaps) -> Result<ParsedInteractions> {
    let raw = read_pairs(reader, source_name, maps)?;
    if raw.pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (matrix, duplicates) = InteractionMatrix::from_pairs(maps.n_users(), maps.n_items(), raw.pairs)?;
    if duplicates > 0 {
        log::warn!("{source_name}: {duplicates} duplicate interactions collapsed");
    }
    Ok(ParsedInteractions { matrix, duplicates })
}

pub fn parse_interactions(path: &Path, maps: &mut IdMaps) -> Result<ParsedInteractions> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_interactions(BufReader::new(file), &path.display().to_string(), maps)
}

/// Writes one line per user with at least one interaction.
pub fn write_interactions<W: Write>(w: W, matrix: &InteractionMatrix, maps: &IdMaps) -> std::io::Result<()> {
    let lines = (0..matrix.n_users()).filter(|&u| matrix.user_degree(u) > 0).map(|u| {
        let mut line = maps.users.external(u).to_owned();
        for &i in matrix.row(u) {
            line.push(' ');
            line.push_str(maps.items.external(i as usize));
        }
        line
    });
    write_lines(w, lines)
}

/// Item titles indexed by dense item index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemCatalog {
    titles: Vec<String>,
}

impl ItemCatalog {
    pub fn new(titles: Vec<String>) -> Result<Self> {
        if let Some(i) = titles.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::EmptyTitle(format!("#{i}")));
        }
        Ok(Self { titles })
    }

    pub fn len(&self) -> usize {
        self.titles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.titles.is_empty()
    }

    pub fn title(&self, item: usize) -> &str {
        &self.titles[item]
    }

    pub fn titles(&self) -> &[String] {
        &self.titles
    }
}

/// Reads `<item_ext_id>\t<title>` lines. Items not yet in `maps` are added.
pub(crate) fn read_titles<R: Read>(reader: R, source_name: &str, maps: &mut IdMaps) -> Result<Vec<Option<String>>> {
    let mut titles: Vec<Option<String>> = vec![None; maps.n_items()];
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedLine {
            source_name: source_name.to_owned(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, title)) = line.split_once('\t') else {
            return Err(Error::MalformedLine {
                source_name: source_name.to_owned(),
                line: n + 1,
                reason: "expected <item_id>\\t<title>".into(),
            });
        };
        let id = id.trim();
        if title.trim().is_empty() {
            return Err(Error::EmptyTitle(id.to_owned()));
        }
        let i = maps.items.intern(id) as usize;
        if i >= titles.len() {
            titles.resize(i + 1, None);
        }
        if titles[i].is_some() {
            log::warn!("{source_name}:{}: repeated title for item {id}, keeping the first", n + 1);
            continue;
        }
        titles[i] = Some(title.to_owned());
    }
    Ok(titles)
}

pub fn write_titles<W: Write>(w: W, catalog: &ItemCatalog, maps: &IdMaps) -> std::io::Result<()> {
    write_lines(
        w,
        catalog
            .titles()
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}\t{}", maps.items.external(i), t)),
    )
}

#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct SplitStats {
    /// Val/test interactions removed because their user has no train history.
    pub dropped_eval: usize,
    pub duplicates: usize,
}

/// Train/validation/test interactions sharing one ID space.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub name: String,
    pub maps: IdMaps,
    pub train: InteractionMatrix,
    pub val: InteractionMatrix,
    pub test: InteractionMatrix,
    pub catalog: ItemCatalog,
    pub stats: SplitStats,
}

impl DatasetSplit {
    /// Assembles a split, enforcing disjointness and dropping evaluation
    /// interactions of users without train history.
    pub fn from_pairs(
        name: impl Into<String>,
        maps: IdMaps,
        train: Vec<(u32, u32)>,
        val: Vec<(u32, u32)>,
        test: Vec<(u32, u32)>,
        catalog: ItemCatalog,
    ) -> Result<Self> {
        let (nu, ni) = (maps.n_users(), maps.n_items());
        if catalog.len() != ni {
            return Err(Error::DimensionMismatch {
                context: "item catalog",
                expected: ni,
                found: catalog.len(),
            });
        }
        let (train, d_train) = InteractionMatrix::from_pairs(nu, ni, train)?;
        let (val, d_val) = InteractionMatrix::from_pairs(nu, ni, val)?;
        let (test, d_test) = InteractionMatrix::from_pairs(nu, ni, test)?;

        let overlap = |a: &InteractionMatrix, b: &InteractionMatrix| a.iter().find(|&(u, i)| b.contains(u as usize, i));
        for (a, b) in [(&val, &train), (&test, &train), (&test, &val)] {
            if let Some((u, i)) = overlap(a, b) {
                return Err(Error::OverlappingInteraction {
                    user: maps.users.external(u as usize).to_owned(),
                    item: maps.items.external(i as usize).to_owned(),
                });
            }
        }

        let mut dropped = 0;
        let mut keep = |m: InteractionMatrix| -> Result<InteractionMatrix> {
            let before = m.nnz();
            let kept: Vec<(u32, u32)> = m.iter().filter(|&(u, _)| train.user_degree(u as usize) > 0).collect();
            dropped += before - kept.len();
            Ok(InteractionMatrix::from_pairs(nu, ni, kept)?.0)
        };
        let val = keep(val)?;
        let test = keep(test)?;
        if dropped > 0 {
            log::warn!("dropped {dropped} evaluation interactions of users without train history");
        }

        Ok(Self {
            name: name.into(),
            maps,
            train,
            val,
            test,
            catalog,
            stats: SplitStats {
                dropped_eval: dropped,
                duplicates: d_train + d_val + d_test,
            },
        })
    }

    pub fn n_users(&self) -> usize {
        self.maps.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.maps.n_items()
    }

    pub fn part(&self, part: EvalPart) -> &InteractionMatrix {
        match part {
            EvalPart::Val => &self.val,
            EvalPart::Test => &self.test,
        }
    }

    /// Writes the split back out in the ingestion layout plus ID map files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |file: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
            let path = dir.join(file);
            let mut buf = Vec::new();
            f(&mut buf).map_err(|e| Error::io(&path, e))?;
            fs::write(&path, buf).map_err(|e| Error::io(&path, e))
        };
        write(TRAIN_FILE, &|b| write_interactions(b, &self.train, &self.maps))?;
        write(VAL_FILE, &|b| write_interactions(b, &self.val, &self.maps))?;
        write(TEST_FILE, &|b| write_interactions(b, &self.test, &self.maps))?;
        write(TITLES_FILE, &|b| write_titles(b, &self.catalog, &self.maps))?;
        self.maps.save(&dir.join(USER_IDS_FILE), &dir.join(ITEM_IDS_FILE))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPart {
    Val,
    Test,
}

/// Loads `train.txt`, `val.txt`, `test.txt` and `titles.tsv` from `dir`.
///
/// When `user_ids.txt`/`item_ids.txt` are present they fix the dense index
/// assignment; otherwise IDs are numbered by first occurrence across
/// train, val, test, then title-only items.
pub fn load_split(dir: &Path) -> Result<DatasetSplit> {
    let mut maps = {
        let (u, i) = (dir.join(USER_IDS_FILE), dir.join(ITEM_IDS_FILE));
        if u.exists() && i.exists() {
            IdMaps::load(&u, &i)?
        } else {
            IdMaps::new()
        }
    };
    let open = |file: &str| -> Result<(fs::File, String)> {
        let path = dir.join(file);
        let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok((f, path.display().to_string()))
    };
    let parse = |file: &str, maps: &mut IdMaps| -> Result<Vec<(u32, u32)>> {
        let (f, name) = open(file)?;
        Ok(read_pairs(BufReader::new(f), &name, maps)?.pairs)
    };
    let train = parse(TRAIN_FILE, &mut maps)?;
    let val = parse(VAL_FILE, &mut maps)?;
    let test = parse(TEST_FILE, &mut maps)?;
    if train.is_empty() && val.is_empty() && test.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (f, name) = open(TITLES_FILE)?;
    let titles = read_titles(f, &name, &mut maps)?;

    // Every item known to the maps came from an interaction, a title line or
    // a saved id map; all of them need a title to be embedded.
    let mut resolved = Vec::with_capacity(maps.n_items());
    for i in 0..maps.n_items() {
        match titles.get(i).cloned().flatten() {
            Some(t) => resolved.push(t),
            None => return Err(Error::MissingTitle(maps.items.external(i).to_owned())),
        }
    }
    let catalog = ItemCatalog::new(resolved)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    DatasetSplit::from_pairs(name, maps, train, val, test, catalog)
}

/// Nearest-rank quantile of the degrees of users that have at least one
/// interaction: the value at 1-based rank `ceil(q·n)` (minimum rank 1) of the
/// ascending degree list. Never returns less than 1.
pub fn interaction_quantile(m: &InteractionMatrix, q: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!("quantile {q} outside [0, 1]")));
    }
    let mut degrees: Vec<u32> = m.user_degrees().into_iter().filter(|&d| d > 0).collect();
    if degrees.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    degrees.sort_unstable();
    Ok(nearest_rank(&degrees, q).max(1) as usize)
}

pub(crate) fn nearest_rank(sorted: &[u32], q: f64) -> u32 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(ParsedInteractions, IdMaps)> {
        let mut maps = IdMaps::new();
        let p = read_interactions(text.as_bytes(), "mem", &mut maps)?;
        Ok((p, maps))
    }

    #[test]
    fn parses_adjacency_lists() {
        let (p, maps) = parse("u1 i1 i2\nu2 i2").unwrap();
        assert_eq!(p.matrix.n_users(), 2);
        assert_eq!(p.matrix.n_items(), 2);
        assert_eq!(p.matrix.nnz(), 3);
        assert_eq!(p.matrix.user_degrees(), vec![2, 1]);
        assert_eq!(p.matrix.item_degrees(), &[1, 2]);
        assert_eq!(maps.items.external(1), "i2");
    }

    #[test]
    fn empty_input_is_an_error() {
        let err = parse("").unwrap_err();
        assert!(err.to_string().contains("empty corpus"));
        assert!(matches!(parse("# only a comment\n\n"), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn duplicates_are_counted() {
        let (p, _) = parse("u1 i1 i1").unwrap();
        assert_eq!(p.matrix.nnz(), 1);
        assert_eq!(p.duplicates, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse("u1 i1\n# c\nu2\n") {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_parse_is_identity() {
        let (p, maps) = parse("a x y z\nb y\nc z x").unwrap();
        let mut buf = Vec::new();
        write_interactions(&mut buf, &p.matrix, &maps).unwrap();
        let mut maps2 = maps.clone();
        let q = read_interactions(&buf[..], "mem", &mut maps2).unwrap();
        assert_eq!(q.matrix, p.matrix);
        assert_eq!(maps2, maps);
    }

    #[test]
    fn quantile_examples() {
        let m = |degs: &[usize]| {
            let pairs = degs
                .iter()
                .enumerate()
                .flat_map(|(u, &d)| (0..d).map(move |i| (u as u32, i as u32)))
                .collect::<Vec<_>>();
            InteractionMatrix::from_pairs(degs.len(), 10, pairs).unwrap().0
        };
        assert_eq!(interaction_quantile(&m(&[1, 2, 3, 4, 5]), 0.5).unwrap(), 3);
        assert_eq!(interaction_quantile(&m(&[7]), 0.5).unwrap(), 7);
        assert_eq!(interaction_quantile(&m(&[4, 1, 3, 2]), 0.5).unwrap(), 2);
        assert_eq!(interaction_quantile(&m(&[4, 1, 3, 2]), 0.0).unwrap(), 1);
        assert_eq!(interaction_quantile(&m(&[4, 1, 3, 2]), 1.0).unwrap(), 4);
        assert!(interaction_quantile(&InteractionMatrix::empty(0, 0), 0.5).is_err());
        assert!(interaction_quantile(&m(&[1]), 1.5).is_err());
    }

    #[test]
    fn catalog_rejects_blank_titles() {
        assert!(ItemCatalog::new(vec!["ok".into(), "  ".into()]).is_err());
    }
}

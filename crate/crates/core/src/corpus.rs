//! Interaction logs, item catalogs, filtering and leave-one-out splits.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("invalid date bounds: min {min} > max {max}")]
    InvalidBounds { min: i64, max: i64 },
    #[error("min_count must be at least 1")]
    InvalidMinCount,
    #[error("history of user {user_id} has {len} items; at least 4 are needed for a leave-one-out split")]
    HistoryTooShort { user_id: String, len: usize },
    #[error("item {item_id} is referenced by interactions but missing from the catalog")]
    MissingItem { item_id: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// A single implicit-feedback event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

impl InteractionRecord {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: i64) -> Self {
        InteractionRecord { user_id: user_id.into(), item_id: item_id.into(), timestamp }
    }
}

/// An item and its ordered attributes. Attribute order drives template order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub attributes: Vec<(String, String)>,
}

impl ItemRecord {
    pub fn new(item_id: impl Into<String>) -> Self {
        ItemRecord { item_id: item_id.into(), attributes: Vec::new() }
    }

    pub fn with_attribute(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.push((name.into(), value.into()));
        self
    }

    pub fn attribute(&self, name: &str) -> Option<&str> {
        self.attributes.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }
}

/// Items in catalog-file order with an id index.
#[derive(Debug, Clone, Default)]
pub struct ItemCatalog {
    items: Vec<ItemRecord>,
    index: HashMap<String, usize>,
}

impl ItemCatalog {
    pub fn new(items: Vec<ItemRecord>) -> Self {
        let index = items.iter().enumerate().map(|(i, item)| (item.item_id.clone(), i)).collect();
        ItemCatalog { items, index }
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&ItemRecord> {
        self.index.get(item_id).map(|&i| &self.items[i])
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.item_id.as_str())
    }

    /// Keep only items that occur in `records`, preserving catalog order.
    /// Fails if a record references an item that the catalog lacks.
    pub fn restrict_to(&self, records: &[InteractionRecord]) -> Result<ItemCatalog, CorpusError> {
        let used: HashSet<&str> = records.iter().map(|r| r.item_id.as_str()).collect();
        if let Some(missing) = used.iter().find(|id| !self.index.contains_key(**id)) {
            return Err(CorpusError::MissingItem { item_id: missing.to_string() });
        }
        Ok(ItemCatalog::new(self.items.iter().filter(|i| used.contains(i.item_id.as_str())).cloned().collect()))
    }
}

/// A user's interactions, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    pub user_id: String,
    pub items: Vec<String>,
}

/// One `(prefix → target)` next-item example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitExample {
    pub user_id: String,
    pub prefix: Vec<String>,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<SplitExample>,
    pub dev: Vec<SplitExample>,
    pub test: Vec<SplitExample>,
}

/// Dataset sizes after preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub items: usize,
    pub actions: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl CorpusStats {
    /// `train = actions − 3·users` and `dev = test = users`.
    pub fn split_identity_holds(&self) -> bool {
        self.actions >= 3 * self.users
            && self.train == self.actions - 3 * self.users
            && self.dev == self.users
            && self.test == self.users
    }
}

/// Parse a tab-separated `user_id, item_id, timestamp` file.
pub fn ingest_interactions(path: impl AsRef<Path>) -> Result<Vec<InteractionRecord>, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let malformed = |line: usize, reason: String| CorpusError::Malformed { path: path.to_path_buf(), line, reason };
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(line_no, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(malformed(line_no, "empty user_id or item_id".into()));
        }
        let timestamp: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| malformed(line_no, format!("non-integer timestamp {:?}", fields[2])))?;
        if timestamp < 0 {
            return Err(malformed(line_no, format!("negative timestamp {timestamp}")));
        }
        records.push(InteractionRecord::new(fields[0], fields[1], timestamp));
    }
    Ok(records)
}

pub fn write_interactions(path: impl AsRef<Path>, records: &[InteractionRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\n", r.user_id, r.item_id, r.timestamp));
    }
    fs::write(path, out).map_err(io_err(path))
}

#[derive(Deserialize)]
struct ItemLine {
    item_id: String,
    #[serde(default)]
    attributes: Vec<(String, String)>,
}

/// Parse a JSON-lines item catalog. Blank lines are ignored.
pub fn load_item_catalog(path: impl AsRef<Path>) -> Result<ItemCatalog, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::Malformed { path: path.to_path_buf(), line: i + 1, reason };
        let parsed: ItemLine = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if parsed.item_id.is_empty() {
            return Err(malformed("empty item_id".into()));
        }
        let mut names = HashSet::new();
        for (name, _) in &parsed.attributes {
            if !names.insert(name.as_str()) {
                return Err(malformed(format!("duplicate attribute {name:?}")));
            }
        }
        if !seen.insert(parsed.item_id.clone()) {
            return Err(malformed(format!("duplicate item_id {:?}", parsed.item_id)));
        }
        items.push(ItemRecord { item_id: parsed.item_id, attributes: parsed.attributes });
    }
    Ok(ItemCatalog::new(items))
}

pub fn write_item_catalog(path: impl AsRef<Path>, items: &[ItemRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("item serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Keep records with `min_timestamp ≤ t ≤ max_timestamp`.
pub fn date_filter(
    records: &[InteractionRecord],
    min_timestamp: i64,
    max_timestamp: i64,
) -> Result<Vec<InteractionRecord>, CorpusError> {
    if min_timestamp > max_timestamp {
        return Err(CorpusError::InvalidBounds { min: min_timestamp, max: max_timestamp });
    }
    Ok(records.iter().filter(|r| (min_timestamp..=max_timestamp).contains(&r.timestamp)).cloned().collect())
}

/// Drop users and items with fewer than `min_count` interactions, repeating
/// until nothing changes. Surviving records keep their input order.
pub fn k_core_filter(records: &[InteractionRecord], min_count: usize) -> Result<Vec<InteractionRecord>, CorpusError> {
    if min_count == 0 {
        return Err(CorpusError::InvalidMinCount);
    }
    let mut alive = vec![true; records.len()];
    loop {
        let mut user_counts: HashMap<&str, usize> = HashMap::new();
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        for (r, _) in records.iter().zip(&alive).filter(|(_, &a)| a) {
            *user_counts.entry(&r.user_id).or_default() += 1;
            *item_counts.entry(&r.item_id).or_default() += 1;
        }
        let mut removed = false;
        for (r, a) in records.iter().zip(alive.iter_mut()) {
            if *a && (user_counts[r.user_id.as_str()] < min_count || item_counts[r.item_id.as_str()] < min_count) {
                *a = false;
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    Ok(records.iter().zip(&alive).filter(|(_, &a)| a).map(|(r, _)| r.clone()).collect())
}

/// Group records per user, sorted by timestamp with ties in input order.
/// Users appear in order of their first record.
pub fn build_histories(records: &[InteractionRecord]) -> Vec<UserHistory> {
    let mut order: Vec<&str> = Vec::new();
    let mut per_user: HashMap<&str, Vec<(i64, usize)>> = HashMap::new();
    for (pos, r) in records.iter().enumerate() {
        let events = per_user.entry(&r.user_id).or_insert_with(|| {
            order.push(&r.user_id);
            Vec::new()
        });
        events.push((r.timestamp, pos));
    }
    order
        .into_iter()
        .map(|user| {
            let mut events = per_user.remove(user).unwrap_or_default();
            events.sort();
            UserHistory {
                user_id: user.to_string(),
                items: events.into_iter().map(|(_, pos)| records[pos].item_id.clone()).collect(),
            }
        })
        .collect()
}

/// Last item is the test target, second-to-last the dev target, and every
/// earlier position `2 ≤ i ≤ T−2` (1-based) yields one training example.
pub fn leave_one_out_split(histories: &[UserHistory]) -> Result<DatasetSplit, CorpusError> {
    let mut split = DatasetSplit::default();
    for h in histories {
        let t = h.items.len();
        if t < 4 {
            return Err(CorpusError::HistoryTooShort { user_id: h.user_id.clone(), len: t });
        }
        let example = |end: usize| SplitExample {
            user_id: h.user_id.clone(),
            prefix: h.items[..end].to_vec(),
            target: h.items[end].clone(),
        };
        // 0-based target positions 1..=t-3 are the 1-based v_2..v_{T-2}
        split.train.extend((1..t - 2).map(example));
        split.dev.push(example(t - 2));
        split.test.push(example(t - 1));
    }
    Ok(split)
}

pub fn corpus_stats(records: &[InteractionRecord], split: &DatasetSplit) -> CorpusStats {
    let users: HashSet<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
    let items: HashSet<&str> = records.iter().map(|r| r.item_id.as_str()).collect();
    CorpusStats {
        users: users.len(),
        items: items.len(),
        actions: records.len(),
        train: split.train.len(),
        dev: split.dev.len(),
        test: split.test.len(),
    }
}

pub fn write_split_file(path: impl AsRef<Path>, examples: &[SplitExample]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    for e in examples {
        let line = serde_json::to_string(e).expect("split example serializes");
        writeln!(file, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

pub fn read_split_file(path: impl AsRef<Path>) -> Result<Vec<SplitExample>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Write `train.jsonl`, `dev.jsonl` and `test.jsonl` under `dir`.
pub fn write_split(dir: impl AsRef<Path>, split: &DatasetSplit) -> Result<(), CorpusError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_split_file(dir.join("train.jsonl"), &split.train)?;
    write_split_file(dir.join("dev.jsonl"), &split.dev)?;
    write_split_file(dir.join("test.jsonl"), &split.test)
}

pub fn read_split(dir: impl AsRef<Path>) -> Result<DatasetSplit, CorpusError> {
    let dir = dir.as_ref();
    Ok(DatasetSplit {
        train: read_split_file(dir.join("train.jsonl"))?,
        dev: read_split_file(dir.join("dev.jsonl"))?,
        test: read_split_file(dir.join("test.jsonl"))?,
    })
}

/// Full interaction history per user, recovered from the test examples
/// (the test prefix plus its target is the whole sequence).
pub fn full_histories(split: &DatasetSplit) -> HashMap<String, Vec<String>> {
    split
        .test
        .iter()
        .map(|e| {
            let mut items = e.prefix.clone();
            items.push(e.target.clone());
            (e.user_id.clone(), items)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str, t: i64) -> InteractionRecord {
        InteractionRecord::new(u, i, t)
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_parses_and_rejects() {
        let f = write_tmp("u1\ti9\t100\n");
        assert_eq!(ingest_interactions(f.path()).unwrap(), vec![rec("u1", "i9", 100)]);

        let f = write_tmp("");
        assert!(ingest_interactions(f.path()).unwrap().is_empty());

        let f = write_tmp("u1\ti9\t100\nu1\ti9\n");
        match ingest_interactions(f.path()) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }

        let f = write_tmp("u1\ti9\tnoon\n");
        assert!(matches!(ingest_interactions(f.path()), Err(CorpusError::Malformed { line: 1, .. })));

        assert!(matches!(ingest_interactions("/nonexistent/interactions.tsv"), Err(CorpusError::Io { .. })));
    }

    #[test]
    fn date_filter_is_inclusive() {
        let (lo, hi) = (1_546_264_800, 1_577_714_400);
        let records = vec![
            rec("u", "a", 1_550_000_000),
            rec("u", "b", lo),
            rec("u", "c", lo - 1),
            rec("u", "d", hi),
            rec("u", "e", hi + 1),
        ];
        let kept = date_filter(&records, lo, hi).unwrap();
        let ids: Vec<_> = kept.iter().map(|r| r.item_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "d"]);
        assert!(matches!(date_filter(&records, 2, 1), Err(CorpusError::InvalidBounds { .. })));
    }

    #[test]
    fn k_core_drops_sparse_user() {
        let mut records = Vec::new();
        for u in 0..5 {
            for i in 0..5 {
                records.push(rec(&format!("u{u}"), &format!("i{i}"), 0));
            }
        }
        assert_eq!(k_core_filter(&records, 5).unwrap(), records);

        // u9 has only four interactions; items keep ≥5 without u9
        let mut with_sparse = records.clone();
        for i in 0..4 {
            with_sparse.push(rec("u9", &format!("i{i}"), 1));
        }
        assert_eq!(k_core_filter(&with_sparse, 5).unwrap(), records);
        assert!(k_core_filter(&records, 0).is_err());
    }

    #[test]
    fn histories_sort_by_time_then_input_order() {
        let records =
            vec![rec("u1", "a", 3), rec("u1", "b", 1), rec("u1", "c", 2), rec("u2", "x", 5), rec("u2", "y", 5)];
        let h = build_histories(&records);
        assert_eq!(h[0].items, ["b", "c", "a"]);
        assert_eq!(h[1].items, ["x", "y"]);
    }

    #[test]
    fn split_of_five_item_history() {
        let h = UserHistory { user_id: "u".into(), items: ["a", "b", "c", "d", "e"].map(String::from).to_vec() };
        let s = leave_one_out_split(&[h]).unwrap();
        let ex = |p: &[&str], t: &str| SplitExample {
            user_id: "u".into(),
            prefix: p.iter().map(|s| s.to_string()).collect(),
            target: t.into(),
        };
        assert_eq!(s.test, vec![ex(&["a", "b", "c", "d"], "e")]);
        assert_eq!(s.dev, vec![ex(&["a", "b", "c"], "d")]);
        assert_eq!(s.train, vec![ex(&["a"], "b"), ex(&["a", "b"], "c")]);
    }

    #[test]
    fn split_rejects_short_history() {
        let h = UserHistory { user_id: "u".into(), items: vec!["a".into(), "b".into(), "c".into()] };
        assert!(matches!(leave_one_out_split(&[h]), Err(CorpusError::HistoryTooShort { len: 3, .. })));
    }

    #[test]
    fn catalog_restrict_and_missing() {
        let catalog = ItemCatalog::new(vec![ItemRecord::new("a"), ItemRecord::new("b"), ItemRecord::new("c")]);
        let r = catalog.restrict_to(&[rec("u", "c", 0), rec("u", "a", 0)]).unwrap();
        assert_eq!(r.item_ids().collect::<Vec<_>>(), ["a", "c"]);
        assert!(matches!(catalog.restrict_to(&[rec("u", "z", 0)]), Err(CorpusError::MissingItem { .. })));
    }

    #[test]
    fn catalog_file_rejects_duplicate_attributes() {
        let f = write_tmp("{\"item_id\":\"1\",\"attributes\":[[\"title\",\"x\"],[\"title\",\"y\"]]}\n");
        assert!(load_item_catalog(f.path()).is_err());
        let f = write_tmp("{\"item_id\":\"1\",\"attributes\":[[\"title\",\"x\"],[\"address\",\"y\"]]}\n\n");
        let c = load_item_catalog(f.path()).unwrap();
        assert_eq!(c.items()[0].attributes[1].0, "address");
    }
}

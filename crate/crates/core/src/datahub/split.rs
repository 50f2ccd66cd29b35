//! Semantic two-way partitions of a dataset's classes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChannelStats, DatasetHandle};
use crate::error::{Error, Result};

/// One side of a split, named by classes and/or superclasses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub superclasses: Vec<String>,
}

/// Split table as stored under `configs/splits/<dataset>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTable {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub superclasses: BTreeMap<String, Vec<String>>,
    pub partitions: [Partition; 2],
}

const BUILTIN_TABLES: &[(&str, &str)] = &[
    ("cifar10", include_str!("../../../../configs/splits/cifar10.json")),
    ("cifar100", include_str!("../../../../configs/splits/cifar100.json")),
    ("synth10", include_str!("../../../../configs/splits/synth10.json")),
    ("synth100", include_str!("../../../../configs/splits/synth100.json")),
];

impl SplitTable {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The table shipped for `dataset`; a file in `dir` takes precedence.
    pub fn lookup(dataset: &str, dir: Option<&Path>) -> Result<Self> {
        if let Some(dir) = dir {
            let p = dir.join(format!("{dataset}.json"));
            if p.exists() {
                return Self::load(&p);
            }
        }
        BUILTIN_TABLES
            .iter()
            .find(|(n, _)| *n == dataset)
            .ok_or_else(|| Error::NoSplitTable(dataset.to_string()))
            .and_then(|(_, text)| Self::from_json(text))
    }

    fn partition_names(&self, p: &Partition) -> Result<Vec<String>> {
        let mut names = p.classes.clone();
        for s in &p.superclasses {
            let members = self
                .superclasses
                .get(s)
                .ok_or_else(|| Error::invalid_spec("superclasses", format!("unknown superclass {s:?}")))?;
            names.extend(members.iter().cloned());
        }
        Ok(names)
    }

    /// Resolves both partitions to sorted class ids, checking that they are
    /// disjoint and together cover every class.
    pub fn resolve(&self, class_names: &[String]) -> Result<[SemanticSplit; 2]> {
        let index: BTreeMap<&str, u16> = class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i as u16))
            .collect();
        let mut sides = Vec::with_capacity(2);
        for p in &self.partitions {
            let mut ids = BTreeSet::new();
            for n in self.partition_names(p)? {
                let id = *index
                    .get(n.as_str())
                    .ok_or_else(|| Error::invalid_spec("partitions", format!("class {n:?} not in {}", self.dataset)))?;
                if !ids.insert(id) {
                    return Err(Error::invalid_spec("partitions", format!("class {n:?} listed twice")));
                }
            }
            sides.push(SemanticSplit {
                label: p.label.clone(),
                class_ids: ids,
            });
        }
        let (a, b) = (&sides[0], &sides[1]);
        if let Some(id) = a.class_ids.intersection(&b.class_ids).next() {
            return Err(Error::invalid_spec(
                "partitions",
                format!("class {:?} is in both partitions", class_names[*id as usize]),
            ));
        }
        if a.class_ids.len() + b.class_ids.len() != class_names.len() {
            let missing: Vec<&str> = (0..class_names.len() as u16)
                .filter(|i| !a.class_ids.contains(i) && !b.class_ids.contains(i))
                .map(|i| class_names[i as usize].as_str())
                .collect();
            return Err(Error::invalid_spec("partitions", format!("classes not assigned: {missing:?}")));
        }
        let b = sides.pop().unwrap();
        let a = sides.pop().unwrap();
        Ok([a, b])
    }
}

/// Resolved partition: original class ids, remapped to `0..n` in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSplit {
    pub label: String,
    pub class_ids: BTreeSet<u16>,
}

impl SemanticSplit {
    pub fn remap(&self) -> BTreeMap<u16, u16> {
        self.class_ids.iter().enumerate().map(|(i, &c)| (c, i as u16)).collect()
    }
}

fn sub_handle(base: &DatasetHandle, side: &SemanticSplit) -> DatasetHandle {
    let remap = side.remap();
    let train = base.train.select(&remap);
    let test = base.test.select(&remap);
    let class_names = side
        .class_ids
        .iter()
        .map(|&c| base.class_names[c as usize].clone())
        .collect();
    let mut h = Sha256::new();
    h.update(base.content_digest.as_bytes());
    h.update(side.label.as_bytes());
    for c in &side.class_ids {
        h.update(c.to_le_bytes());
    }
    DatasetHandle {
        name: format!("{}_{}", base.name, side.label),
        class_names,
        stats: ChannelStats::compute(&train),
        train: Arc::new(train),
        test: Arc::new(test),
        cache_hit: base.cache_hit,
        content_digest: hex::encode(h.finalize()),
    }
}

/// Splits `base` into the two partitions of `table` with contiguous labels.
pub fn semantic_split(base: &DatasetHandle, table: &SplitTable) -> Result<(DatasetHandle, DatasetHandle)> {
    if table.dataset != base.name {
        return Err(Error::NoSplitTable(format!(
            "table is for {:?}, dataset is {:?}",
            table.dataset, base.name
        )));
    }
    let [a, b] = table.resolve(&base.class_names)?;
    Ok((sub_handle(base, &a), sub_handle(base, &b)))
}

/// Loads a registered dataset, or one side of a semantic split named
/// `<base>_<label>` (for example `cifar100_natural`).
pub fn load_named(name: &str, root: &Path, splits_dir: Option<&Path>) -> Result<DatasetHandle> {
    if super::dataset_spec(name).is_ok() {
        return super::load_dataset(name, root);
    }
    for (i, _) in name.match_indices('_') {
        let (base, label) = (&name[..i], &name[i + 1..]);
        if super::dataset_spec(base).is_err() {
            continue;
        }
        let table = SplitTable::lookup(base, splits_dir)?;
        let Some(side) = table.partitions.iter().position(|p| p.label == label) else {
            continue;
        };
        let (a, b) = semantic_split(&super::load_dataset(base, root)?, &table)?;
        return Ok(if side == 0 { a } else { b });
    }
    Err(Error::UnknownDataset(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{Split, CIFAR100_CLASSES, CIFAR10_CLASSES};

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cifar10_table() {
        let [a, b] = SplitTable::lookup("cifar10", None).unwrap().resolve(&names(&CIFAR10_CLASSES)).unwrap();
        assert_eq!(a.class_ids, BTreeSet::from([0, 1, 8, 9]));
        assert_eq!(b.class_ids.len(), 6);
    }

    #[test]
    fn cifar100_table_is_exhaustive() {
        let t = SplitTable::lookup("cifar100", None).unwrap();
        assert_eq!(t.superclasses.len(), 20);
        assert!(t.superclasses.values().all(|m| m.len() == 5));
        let [a, b] = t.resolve(&names(&CIFAR100_CLASSES)).unwrap();
        assert_eq!((a.class_ids.len(), b.class_ids.len()), (30, 70));
        assert!(t.partitions[1].superclasses.iter().any(|s| s == "people"));
    }

    #[test]
    fn missing_table() {
        assert!(matches!(SplitTable::lookup("fashion_mnist", None), Err(Error::NoSplitTable(_))));
    }

    #[test]
    fn overlapping_or_partial_tables_rejected() {
        let classes = names(&["a", "b", "c"]);
        let overlap = r#"{"dataset":"x","partitions":[{"label":"p","classes":["a","b"]},{"label":"q","classes":["b","c"]}]}"#;
        assert!(SplitTable::from_json(overlap).unwrap().resolve(&classes).is_err());
        let partial = r#"{"dataset":"x","partitions":[{"label":"p","classes":["a"]},{"label":"q","classes":["c"]}]}"#;
        assert!(SplitTable::from_json(partial).unwrap().resolve(&classes).is_err());
        let unknown = r#"{"dataset":"x","partitions":[{"label":"p","classes":["a","z"]},{"label":"q","classes":["b","c"]}]}"#;
        assert!(SplitTable::from_json(unknown).unwrap().resolve(&classes).is_err());
    }

    #[test]
    fn split_handles_partition_records() {
        let n = 30;
        let split = |len: usize| Split {
            images: (0..len * 4).map(|i| (i % 256) as u8).collect(),
            labels: (0..len).map(|i| (i % 3) as u16).collect(),
            height: 2,
            width: 2,
            channels: 1,
        };
        let base = DatasetHandle {
            name: "x".into(),
            class_names: names(&["a", "b", "c"]),
            train: Arc::new(split(n)),
            test: Arc::new(split(9)),
            stats: ChannelStats { mean: vec![0.0], std: vec![1.0] },
            cache_hit: true,
            content_digest: "d".into(),
        };
        let t = SplitTable::from_json(
            r#"{"dataset":"x","partitions":[{"label":"p","classes":["b"]},{"label":"q","classes":["c","a"]}]}"#,
        )
        .unwrap();
        let (a, b) = semantic_split(&base, &t).unwrap();
        assert_eq!(a.train.len() + b.train.len(), n);
        assert_eq!(a.test.len() + b.test.len(), 9);
        assert_eq!(a.class_names, names(&["b"]));
        assert_eq!(b.class_names, names(&["a", "c"]));
        assert!(a.train.labels.iter().all(|&l| l == 0));
        assert!(b.train.labels.iter().all(|&l| l < 2));
        assert_ne!(a.content_digest, b.content_digest);
    }

    #[test]
    fn named_partitions_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let table = SplitTable::lookup("synth10", None).unwrap();
        let label = table.partitions[1].label.clone();
        let whole = load_named("synth10", dir.path(), None).unwrap();
        let part = load_named(&format!("synth10_{label}"), dir.path(), None).unwrap();
        assert_eq!(part.class_names, table.partitions[1].classes);
        assert!(part.train.len() < whole.train.len());
        assert!(matches!(load_named("synth10_nowhere", dir.path(), None), Err(Error::UnknownDataset(_))));
        assert!(matches!(load_named("nothing_at_all", dir.path(), None), Err(Error::UnknownDataset(_))));
    }
}

//! Category folds over the 21 VOC classes and the base/novel sample partition.
//!
//! Index order: 0 background, 1 aeroplane, 2 bicycle, 3 bird, 4 boat,
//! 5 bottle, 6 bus, 7 car, 8 cat, 9 chair, 10 cow, 11 dining table, 12 dog,
//! 13 horse, 14 motorbike, 15 person, 16 potted plant, 17 sheep, 18 sofa,
//! 19 train, 20 tv/monitor.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const VOC_NUM_FOREGROUND: usize = 20;

pub const VOC_CLASS_NAMES: [&str; 21] = [
    "background",
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

/// Base/novel division of the category indices `0..num_categories`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategorySplit {
    pub fold_id: usize,
    pub num_categories: usize,
    base: Vec<u8>,
    novel: Vec<u8>,
}

impl CategorySplit {
    /// Builds a split from the novel set; every other index (including
    /// background) is base.
    pub fn from_novel(fold_id: usize, num_categories: usize, novel: &[u8]) -> Result<Self> {
        if num_categories == 0 || num_categories > 255 {
            return Err(Error::arg(format!(
                "num_categories must be in 1..=255, got {num_categories}"
            )));
        }
        let mut novel = novel.to_vec();
        novel.sort_unstable();
        novel.dedup();
        if let Some(&bad) = novel.iter().find(|&&c| c == BACKGROUND || c as usize >= num_categories) {
            return Err(Error::arg(format!(
                "novel category {bad} is background or outside 0..{num_categories}"
            )));
        }
        let base = (0..num_categories as u8)
            .filter(|c| novel.binary_search(c).is_err())
            .collect();
        Ok(Self {
            fold_id,
            num_categories,
            base,
            novel,
        })
    }

    /// Any of the four basic folds (0..=3) or the extended folds 4 and 5.
    pub fn for_fold(fold_id: usize) -> Result<Self> {
        match fold_id {
            0..=3 => fold_categories(fold_id, VOC_NUM_FOREGROUND),
            4 => Ok(extended_fold(ExtendedFold::Fold4)),
            5 => Ok(extended_fold(ExtendedFold::Fold5)),
            _ => Err(Error::arg(format!("fold must be in 0..=5, got {fold_id}"))),
        }
    }

    pub fn base(&self) -> &[u8] {
        &self.base
    }

    pub fn novel(&self) -> &[u8] {
        &self.novel
    }

    pub fn is_novel(&self, category: u8) -> bool {
        self.novel.binary_search(&category).is_ok()
    }

    pub fn is_base(&self, category: u8) -> bool {
        self.base.binary_search(&category).is_ok()
    }
}

/// Basic fold `fold_id`: categories `5*fold_id+1 ..= 5*fold_id+5` are novel.
pub fn fold_categories(fold_id: usize, num_fg: usize) -> Result<CategorySplit> {
    if fold_id > 3 {
        return Err(Error::arg(format!("basic fold must be in 0..=3, got {fold_id}")));
    }
    if 5 * fold_id + 5 > num_fg {
        return Err(Error::arg(format!(
            "fold {fold_id} needs at least {} foreground categories, got {num_fg}",
            5 * fold_id + 5
        )));
    }
    let novel: Vec<u8> = (1..=5).map(|k| (5 * fold_id + k) as u8).collect();
    CategorySplit::from_novel(fold_id, num_fg + 1, &novel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtendedFold {
    /// Ten novel categories, `1..=10`.
    Fold4,
    /// Fifteen novel categories, `1..=15`.
    Fold5,
}

impl fmt::Display for ExtendedFold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedFold::Fold4 => f.write_str("fold4"),
            ExtendedFold::Fold5 => f.write_str("fold5"),
        }
    }
}

pub fn extended_fold(fold: ExtendedFold) -> CategorySplit {
    let (id, last) = match fold {
        ExtendedFold::Fold4 => (4, 10u8),
        ExtendedFold::Fold5 => (5, 15u8),
    };
    let novel: Vec<u8> = (1..=last).collect();
    CategorySplit::from_novel(id, VOC_NUM_FOREGROUND + 1, &novel).expect("static fold definition")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePartition {
    pub base: Vec<String>,
    pub novel: Vec<String>,
}

/// Splits samples into base (only base categories) and novel (at least one
/// novel category). Both id lists come back sorted.
pub fn partition_samples<'a, I, L>(samples: I, split: &CategorySplit) -> Result<SamplePartition>
where
    I: IntoIterator<Item = (&'a String, L)>,
    L: AsRef<[u8]>,
{
    let mut out = SamplePartition::default();
    for (id, labels) in samples {
        let labels = labels.as_ref();
        if let Some(&bad) = labels.iter().find(|&&c| c as usize >= split.num_categories) {
            return Err(Error::arg(format!(
                "sample {id}: category {bad} outside 0..{}",
                split.num_categories
            )));
        }
        if labels.iter().any(|&c| split.is_novel(c)) {
            out.novel.push(id.clone());
        } else {
            out.base.push(id.clone());
        }
    }
    out.base.sort();
    out.novel.sort();
    Ok(out)
}

/// Image-level label manifest: `{ "samples": { "<id>": [indices] } }`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelManifest {
    pub samples: BTreeMap<String, Vec<u8>>,
}

impl LabelManifest {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn partition(&self, split: &CategorySplit) -> Result<SamplePartition> {
        partition_samples(self.samples.iter(), split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_folds_follow_five_way_rule() {
        assert_eq!(fold_categories(0, 20).unwrap().novel(), &[1, 2, 3, 4, 5]);
        assert_eq!(fold_categories(3, 20).unwrap().novel(), &[16, 17, 18, 19, 20]);
        let f1 = fold_categories(1, 20).unwrap();
        assert_eq!(f1.novel(), &[6, 7, 8, 9, 10]);
        assert!(f1.base().contains(&0));
        assert!((11..=20).all(|c| f1.is_base(c)));
        assert_eq!(f1.base().len(), 16);
    }

    #[test]
    fn extended_folds() {
        let f4 = extended_fold(ExtendedFold::Fold4);
        assert_eq!(f4.novel(), (1..=10).collect::<Vec<u8>>().as_slice());
        let mut expected_base = vec![0u8];
        expected_base.extend(11..=20);
        assert_eq!(f4.base(), expected_base.as_slice());
        let f5 = extended_fold(ExtendedFold::Fold5);
        assert_eq!(f5.novel(), (1..=15).collect::<Vec<u8>>().as_slice());
        assert_eq!(f5.base(), &[0, 16, 17, 18, 19, 20]);
        assert_eq!(CategorySplit::for_fold(5).unwrap(), f5);
    }

    #[test]
    fn out_of_range_fold_is_rejected() {
        assert!(fold_categories(4, 20).is_err());
        assert!(fold_categories(3, 15).is_err());
        assert!(CategorySplit::for_fold(6).is_err());
    }

    #[test]
    fn every_fold_partitions_all_categories() {
        for id in 0..=5 {
            let s = CategorySplit::for_fold(id).unwrap();
            assert_eq!(s.base().len() + s.novel().len(), 21);
            assert!(s.is_base(BACKGROUND));
            assert!((0..21u8).all(|c| s.is_base(c) ^ s.is_novel(c)));
        }
    }

    #[test]
    fn partition_by_novel_membership() {
        let split = fold_categories(0, 20).unwrap();
        let samples: BTreeMap<String, Vec<u8>> = [
            ("a".to_string(), vec![1]),
            ("b".to_string(), vec![6, 7]),
            ("c".to_string(), vec![1, 6]),
        ]
        .into();
        let p = partition_samples(samples.iter(), &split).unwrap();
        assert_eq!(p.base, vec!["b"]);
        assert_eq!(p.novel, vec!["a", "c"]);

        let bad: BTreeMap<String, Vec<u8>> = [("x".to_string(), vec![21])].into();
        assert!(partition_samples(bad.iter(), &split).is_err());
    }

    #[test]
    fn partition_ignores_input_order() {
        let split = fold_categories(2, 20).unwrap();
        let ids: Vec<(String, Vec<u8>)> = (0..40)
            .map(|k| (format!("s{k:02}"), vec![(k % 21) as u8, ((k * 7) % 21) as u8]))
            .collect();
        let forward = partition_samples(ids.iter().map(|(a, b)| (a, b)), &split).unwrap();
        let backward = partition_samples(ids.iter().rev().map(|(a, b)| (a, b)), &split).unwrap();
        assert_eq!(forward, backward);
        assert_eq!(forward.base.len() + forward.novel.len(), 40);
    }

    #[test]
    fn manifest_parses() {
        let m: LabelManifest =
            serde_json::from_str(r#"{"samples": {"2007_000032": [1, 15], "2007_000039": [20]}}"#).unwrap();
        let p = m.partition(&fold_categories(3, 20).unwrap()).unwrap();
        assert_eq!(p.base, vec!["2007_000032"]);
        assert_eq!(p.novel, vec!["2007_000039"]);
    }
}

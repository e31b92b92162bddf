//! Bags, datasets and the per-class selection encoding of a feasible labeling.
//!
//! A positive bag for class `c` holds exactly one pseudo-positive proposal; a
//! [`Selection`] stores that index per positive bag. The pairwise labeling of
//! two proposals from different bags is never materialized: it is the product
//! of their unary labels.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved identifier for proposals that cover no object.
pub const BACKGROUND: &str = "__background__";

/// Axis-aligned box in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::InvalidArgument(format!(
                "degenerate box [{}, {}, {}, {}]",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Ground-truth label of a single proposal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum GtLabel {
    Background,
    Class(String),
}

impl GtLabel {
    pub fn parse(s: &str) -> Self {
        if s == BACKGROUND {
            GtLabel::Background
        } else {
            GtLabel::Class(s.to_string())
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            GtLabel::Background => BACKGROUND,
            GtLabel::Class(c) => c,
        }
    }

    pub fn class(&self) -> Option<&str> {
        match self {
            GtLabel::Background => None,
            GtLabel::Class(c) => Some(c),
        }
    }

    /// Class-agnostic objectness label: 1 for any object, 0 for background.
    pub fn objectness(&self) -> f64 {
        match self {
            GtLabel::Background => 0.0,
            GtLabel::Class(_) => 1.0,
        }
    }

    /// Pairwise relation label: 1 iff both are the same non-background class.
    pub fn related(&self, other: &GtLabel) -> f64 {
        match (self, other) {
            (GtLabel::Class(a), GtLabel::Class(b)) if a == b => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    /// Features consumed by the class-specific scoring functions.
    pub features: Vec<f64>,
    /// Optional second feature block for the class-generic functions.
    pub features_generic: Option<Vec<f64>>,
    pub bbox: Option<BBox>,
    pub gt: Option<GtLabel>,
    /// Marks the proposal covering the whole image.
    pub is_full_image: bool,
}

impl Proposal {
    pub fn new(features: Vec<f64>) -> Self {
        Self {
            features,
            features_generic: None,
            bbox: None,
            gt: None,
            is_full_image: false,
        }
    }

    /// Features read by the class-generic branch; falls back to the
    /// class-specific block when no generic block is present.
    pub fn generic_features(&self) -> &[f64] {
        self.features_generic.as_deref().unwrap_or(&self.features)
    }
}

/// Annotated object box, used only for evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub class: String,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub id: String,
    pub labels: BTreeSet<String>,
    pub proposals: Vec<Proposal>,
    pub gt_boxes: Vec<GtBox>,
}

impl Bag {
    pub fn new(id: impl Into<String>, labels: &[&str], proposals: Vec<Proposal>) -> Self {
        Self {
            id: id.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            proposals,
            gt_boxes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn has_label(&self, class: &str) -> bool {
        self.labels.contains(class)
    }

    pub fn full_image_index(&self) -> Option<usize> {
        self.proposals.iter().position(|p| p.is_full_image)
    }
}

/// A validated, immutable set of bags sharing one feature dimension.
#[derive(Clone, Debug)]
pub struct Dataset {
    bags: Vec<Bag>,
    classes: BTreeSet<String>,
    dim: usize,
    generic_dim: Option<usize>,
    index: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.bags == other.bags && self.classes == other.classes && self.dim == other.dim
    }
}

impl Dataset {
    /// Builds a dataset whose class set is the union of all bag labels.
    pub fn new(bags: Vec<Bag>) -> Result<Self> {
        let classes = bags
            .iter()
            .flat_map(|b| b.labels.iter().cloned())
            .collect();
        Self::with_classes(bags, classes)
    }

    pub fn with_classes(bags: Vec<Bag>, classes: BTreeSet<String>) -> Result<Self> {
        if classes.contains(BACKGROUND) {
            return Err(Error::InvalidDataset(
                "background sentinel used as a class".into(),
            ));
        }
        let first = bags
            .iter()
            .find_map(|b| b.proposals.first())
            .ok_or_else(|| Error::InvalidDataset("dataset has no proposals".into()))?;
        let dim = first.features.len();
        let generic_dim = first.features_generic.as_ref().map(Vec::len);
        if dim == 0 {
            return Err(Error::InvalidDataset("zero feature dimension".into()));
        }

        let mut index = HashMap::with_capacity(bags.len());
        for (i, bag) in bags.iter().enumerate() {
            if bag.proposals.is_empty() {
                return Err(Error::InvalidDataset(format!("bag `{}` has no proposals", bag.id)));
            }
            if index.insert(bag.id.clone(), i).is_some() {
                return Err(Error::InvalidDataset(format!("duplicate bag id `{}`", bag.id)));
            }
            for label in &bag.labels {
                if label == BACKGROUND {
                    return Err(Error::InvalidDataset(format!(
                        "bag `{}` is labeled with the background sentinel",
                        bag.id
                    )));
                }
                if !classes.contains(label) {
                    return Err(Error::UnknownClass(label.clone()));
                }
            }
            for (j, p) in bag.proposals.iter().enumerate() {
                if p.features.len() != dim {
                    return Err(Error::InvalidDataset(format!(
                        "bag `{}` proposal {j}: feature dimension {} != {dim}",
                        bag.id,
                        p.features.len()
                    )));
                }
                if p.features_generic.as_ref().map(Vec::len) != generic_dim {
                    return Err(Error::InvalidDataset(format!(
                        "bag `{}` proposal {j}: inconsistent generic feature block",
                        bag.id
                    )));
                }
                let finite = p.features.iter().all(|v| v.is_finite())
                    && p.features_generic
                        .as_ref()
                        .is_none_or(|g| g.iter().all(|v| v.is_finite()));
                if !finite {
                    return Err(Error::InvalidDataset(format!(
                        "bag `{}` proposal {j}: non-finite feature",
                        bag.id
                    )));
                }
                if let Some(b) = &p.bbox {
                    b.validate()?;
                }
            }
            for g in &bag.gt_boxes {
                if !bag.labels.contains(&g.class) {
                    return Err(Error::InvalidDataset(format!(
                        "bag `{}` has a `{}` box but no such label",
                        bag.id, g.class
                    )));
                }
                g.bbox.validate()?;
            }
        }
        Ok(Self {
            bags,
            classes,
            dim,
            generic_dim,
            index,
        })
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn into_bags(self) -> Vec<Bag> {
        self.bags
    }

    pub fn classes(&self) -> &BTreeSet<String> {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension of the features read by the class-generic branch.
    pub fn generic_dim(&self) -> usize {
        self.generic_dim.unwrap_or(self.dim)
    }

    pub fn has_generic_block(&self) -> bool {
        self.generic_dim.is_some()
    }

    pub fn bag(&self, id: &str) -> Option<&Bag> {
        self.index.get(id).map(|&i| &self.bags[i])
    }

    pub fn bag_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Partition into positive and negative bags for `class`.
    pub fn split(&self, class: &str) -> Result<(Vec<&Bag>, Vec<&Bag>)> {
        if !self.classes.contains(class) {
            return Err(Error::UnknownClass(class.to_string()));
        }
        Ok(self.bags.iter().partition(|b| b.has_label(class)))
    }

    pub fn positive_bags(&self, class: &str) -> Result<Vec<&Bag>> {
        Ok(self.split(class)?.0)
    }

    /// Subset of bags, keeping the declared class set.
    pub fn subset(&self, ids: &[&str]) -> Result<Dataset> {
        let bags = ids
            .iter()
            .map(|id| {
                self.bag(id)
                    .cloned()
                    .ok_or_else(|| Error::UnknownBag(id.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::with_classes(bags, self.classes.clone())
    }

    /// True iff every proposal carries a ground-truth label.
    pub fn fully_labeled(&self) -> bool {
        self.bags
            .iter()
            .all(|b| b.proposals.iter().all(|p| p.gt.is_some()))
    }
}

/// One chosen proposal index per positive bag of `class`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub class: String,
    pub chosen: BTreeMap<String, usize>,
}

impl Selection {
    pub fn new(class: impl Into<String>) -> Self {
        Self {
            class: class.into(),
            chosen: BTreeMap::new(),
        }
    }

    pub fn with(mut self, bag: impl Into<String>, index: usize) -> Self {
        self.chosen.insert(bag.into(), index);
        self
    }

    pub fn get(&self, bag: &str) -> Option<usize> {
        self.chosen.get(bag).copied()
    }

    pub fn len(&self) -> usize {
        self.chosen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }

    /// Checks the selection against `dataset`. Returns `Ok(false)` for a
    /// violated constraint and an error for ids the dataset does not know.
    pub fn is_feasible(&self, dataset: &Dataset) -> Result<bool> {
        if !dataset.classes().contains(&self.class) {
            return Err(Error::UnknownClass(self.class.clone()));
        }
        for (id, &index) in &self.chosen {
            let bag = dataset
                .bag(id)
                .ok_or_else(|| Error::UnknownBag(id.clone()))?;
            if !bag.has_label(&self.class) || index >= bag.len() {
                return Ok(false);
            }
        }
        let positives = dataset
            .bags()
            .iter()
            .filter(|b| b.has_label(&self.class))
            .count();
        Ok(positives == self.chosen.len())
    }

    pub fn ensure_feasible(&self, dataset: &Dataset) -> Result<()> {
        if self.is_feasible(dataset)? {
            Ok(())
        } else {
            Err(Error::Infeasible {
                class: self.class.clone(),
                reason: "selection does not pick exactly one proposal per positive bag".into(),
            })
        }
    }

    /// Pseudo label of a single proposal; always 0 in bags without an entry.
    pub fn unary_label(&self, bag: &str, index: usize) -> u8 {
        u8::from(self.get(bag) == Some(index))
    }

    /// Pairwise label of two proposals from different bags.
    pub fn induced_pairwise(&self, a: (&str, usize), b: (&str, usize)) -> Result<u8> {
        if a.0 == b.0 {
            return Err(Error::SameBagPair(a.0.to_string()));
        }
        Ok(self.unary_label(a.0, a.1) * self.unary_label(b.0, b.1))
    }

    /// Fraction of shared bags whose chosen index differs; bags present in
    /// only one of the selections count as changed.
    pub fn fraction_changed(&self, other: &Selection) -> f64 {
        let keys: BTreeSet<&String> = self.chosen.keys().chain(other.chosen.keys()).collect();
        if keys.is_empty() {
            return 0.0;
        }
        let changed = keys
            .iter()
            .filter(|k| self.chosen.get(k.as_str()) != other.chosen.get(k.as_str()))
            .count();
        changed as f64 / keys.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: f64) -> Proposal {
        Proposal::new(vec![v, 0.0])
    }

    fn toy() -> Dataset {
        Dataset::new(vec![
            Bag::new("1", &["a"], vec![p(0.0), p(1.0)]),
            Bag::new("2", &["a", "b"], vec![p(0.0), p(1.0), p(2.0)]),
            Bag::new("3", &["b"], vec![p(3.0)]),
        ])
        .unwrap()
    }

    #[test]
    fn split_partitions_bags() {
        let ds = toy();
        let (pos, neg) = ds.split("a").unwrap();
        assert_eq!(pos.iter().map(|b| b.id.as_str()).collect::<Vec<_>>(), ["1", "2"]);
        assert_eq!(neg.iter().map(|b| b.id.as_str()).collect::<Vec<_>>(), ["3"]);
        assert!(matches!(ds.split("zzz"), Err(Error::UnknownClass(_))));
    }

    #[test]
    fn split_vacuous_class() {
        let bags = toy().into_bags();
        let classes = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let ds = Dataset::with_classes(bags, classes).unwrap();
        let (pos, neg) = ds.split("c").unwrap();
        assert!(pos.is_empty());
        assert_eq!(neg.len(), 3);
    }

    #[test]
    fn rejects_empty_bag_and_background_label() {
        let err = Dataset::new(vec![Bag::new("x", &["a"], vec![p(0.0)]), Bag::new("y", &["a"], vec![])]);
        assert!(matches!(err, Err(Error::InvalidDataset(_))));
        let err = Dataset::new(vec![Bag::new("x", &[BACKGROUND], vec![p(0.0)])]);
        assert!(matches!(err, Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let err = Dataset::new(vec![
            Bag::new("x", &["a"], vec![p(0.0)]),
            Bag::new("y", &["a"], vec![Proposal::new(vec![1.0])]),
        ]);
        assert!(matches!(err, Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn feasibility() {
        let ds = toy();
        let ok = Selection::new("a").with("1", 1).with("2", 0);
        assert!(ok.is_feasible(&ds).unwrap());
        let missing = Selection::new("a").with("1", 1);
        assert!(!missing.is_feasible(&ds).unwrap());
        let negative = ok.clone().with("3", 0);
        assert!(!negative.is_feasible(&ds).unwrap());
        let out_of_range = Selection::new("a").with("1", 2).with("2", 0);
        assert!(!out_of_range.is_feasible(&ds).unwrap());
        let unknown = ok.clone().with("nope", 0);
        assert!(matches!(unknown.is_feasible(&ds), Err(Error::UnknownBag(_))));
    }

    #[test]
    fn labels() {
        let sel = Selection::new("a").with("1", 1).with("2", 0);
        assert_eq!(sel.unary_label("1", 1), 1);
        assert_eq!(sel.unary_label("1", 0), 0);
        assert_eq!(sel.unary_label("3", 0), 0);
        assert_eq!(sel.induced_pairwise(("1", 1), ("2", 0)).unwrap(), 1);
        assert_eq!(sel.induced_pairwise(("1", 0), ("2", 0)).unwrap(), 0);
        assert!(matches!(
            sel.induced_pairwise(("1", 0), ("1", 1)),
            Err(Error::SameBagPair(_))
        ));
    }

    #[test]
    fn three_positive_bags_have_three_related_pairs() {
        let bags: Vec<Bag> = (0..3)
            .map(|i| Bag::new(i.to_string(), &["a"], vec![p(0.0), p(1.0), p(2.0)]))
            .collect();
        let ds = Dataset::new(bags).unwrap();
        let sel = Selection::new("a").with("0", 2).with("1", 0).with("2", 1);
        let mut related = 0;
        for (i, a) in ds.bags().iter().enumerate() {
            for b in &ds.bags()[i + 1..] {
                for ea in 0..a.len() {
                    for eb in 0..b.len() {
                        related += sel.induced_pairwise((&a.id, ea), (&b.id, eb)).unwrap();
                    }
                }
            }
        }
        assert_eq!(related, 3);
    }

    #[test]
    fn fraction_changed() {
        let a = Selection::new("a").with("1", 0).with("2", 1);
        assert_eq!(a.fraction_changed(&a), 0.0);
        let b = Selection::new("a").with("1", 1).with("2", 1);
        assert_eq!(a.fraction_changed(&b), 0.5);
        let c = Selection::new("a").with("1", 1).with("2", 0);
        assert_eq!(a.fraction_changed(&c), 1.0);
    }
}

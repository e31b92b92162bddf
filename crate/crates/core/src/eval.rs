//! Localization metrics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{BBox, Dataset, Selection};
use crate::error::{Error, Result};

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    Ok(inter / (a.area() + b.area() - inter))
}

/// CorLoc in percent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorLoc {
    pub threshold: f64,
    pub per_class: BTreeMap<String, f64>,
    pub mean: f64,
}

/// A positive bag is correctly localized when its selected proposal
/// overlaps some annotated box of the class with IoU strictly above
/// `threshold`. Classes without selections are left out of the mean.
pub fn corloc(selections: &BTreeMap<String, Selection>, dataset: &Dataset, threshold: f64) -> Result<CorLoc> {
    let mut per_class = BTreeMap::new();
    for (class, sel) in selections {
        if sel.is_empty() {
            continue;
        }
        let mut hits = 0usize;
        for (bag_id, &index) in &sel.chosen {
            let bag = dataset.bag(bag_id).ok_or_else(|| Error::UnknownBag(bag_id.clone()))?;
            let proposal = bag.proposals.get(index).ok_or(Error::LabelOutOfRange {
                node: 0,
                label: index,
                num_labels: bag.len(),
            })?;
            let bbox = proposal
                .bbox
                .as_ref()
                .ok_or_else(|| Error::Missing(format!("bag `{bag_id}` proposal {index} has no box")))?;
            let gts: Vec<&BBox> = bag.gt_boxes.iter().filter(|g| &g.class == class).map(|g| &g.bbox).collect();
            if gts.is_empty() {
                return Err(Error::Missing(format!("bag `{bag_id}` has no `{class}` box")));
            }
            let mut correct = false;
            for g in gts {
                if iou(bbox, g)? > threshold {
                    correct = true;
                    break;
                }
            }
            hits += usize::from(correct);
        }
        per_class.insert(class.clone(), 100.0 * hits as f64 / sel.len() as f64);
    }
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(CorLoc {
        threshold,
        per_class,
        mean,
    })
}

/// Fraction of positive bags, over all classes, whose chosen index equals
/// the planted one.
pub fn selection_accuracy(
    selections: &BTreeMap<String, Selection>,
    truth: &BTreeMap<String, Selection>,
) -> Result<f64> {
    let mut total = 0usize;
    let mut hits = 0usize;
    for (class, want) in truth {
        let got = selections
            .get(class)
            .ok_or_else(|| Error::Missing(format!("no selection for class `{class}`")))?;
        for (bag, &index) in &want.chosen {
            total += 1;
            hits += usize::from(got.get(bag) == Some(index));
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument("empty ground truth".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Fraction of positive bags whose chosen index differs between two
/// selection sets, over the bags of `previous`.
pub fn convergence_check(previous: &BTreeMap<String, Selection>, new: &BTreeMap<String, Selection>) -> f64 {
    let mut total = 0usize;
    let mut changed = 0usize;
    for (class, old) in previous {
        let cur = new.get(class);
        for (bag, &index) in &old.chosen {
            total += 1;
            changed += usize::from(cur.and_then(|s| s.get(bag)) != Some(index));
        }
    }
    if total == 0 {
        0.0
    } else {
        changed as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Bag, GtBox, Proposal};

    fn unit(x: f64) -> BBox {
        BBox::new(x, 0.0, x + 1.0, 1.0).unwrap()
    }

    #[test]
    fn iou_fixtures() {
        assert_eq!(iou(&unit(0.0), &unit(0.0)).unwrap(), 1.0);
        assert_eq!(iou(&unit(0.0), &unit(3.0)).unwrap(), 0.0);
        assert_eq!(iou(&unit(0.0), &unit(1.0)).unwrap(), 0.0);
        assert!((iou(&unit(0.0), &unit(0.5)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let bad = BBox { x1: 1.0, y1: 0.0, x2: 1.0, y2: 1.0 };
        assert!(iou(&bad, &unit(0.0)).is_err());
    }

    fn bag(id: &str, class: &str, correct: bool) -> Bag {
        let mut p = Proposal::new(vec![0.0]);
        p.bbox = Some(if correct { unit(0.0) } else { unit(5.0) });
        let mut b = Bag::new(id, &[class], vec![p]);
        b.gt_boxes.push(GtBox { class: class.into(), bbox: unit(0.0) });
        b
    }

    #[test]
    fn two_class_mean() {
        let bags = vec![
            bag("a0", "a", true),
            bag("a1", "a", false),
            bag("b0", "b", true),
            bag("b1", "b", true),
            bag("b2", "b", true),
            bag("b3", "b", false),
        ];
        let ds = Dataset::new(bags).unwrap();
        let mut sels = BTreeMap::new();
        for c in ["a", "b"] {
            let mut s = Selection::new(c);
            for b in ds.positive_bags(c).unwrap() {
                s.chosen.insert(b.id.clone(), 0);
            }
            sels.insert(c.to_string(), s);
        }
        let r = corloc(&sels, &ds, 0.5).unwrap();
        assert_eq!(r.per_class["a"], 50.0);
        assert_eq!(r.per_class["b"], 75.0);
        assert_eq!(r.mean, 62.5);
    }

    #[test]
    fn accuracy_and_change_fraction() {
        let truth: BTreeMap<_, _> = [("c".to_string(), Selection::new("c").with("x", 0).with("y", 1))].into();
        let half: BTreeMap<_, _> = [("c".to_string(), Selection::new("c").with("x", 0).with("y", 0))].into();
        assert_eq!(selection_accuracy(&truth, &truth).unwrap(), 1.0);
        assert_eq!(selection_accuracy(&half, &truth).unwrap(), 0.5);
        assert_eq!(convergence_check(&truth, &truth), 0.0);
        assert_eq!(convergence_check(&truth, &half), 0.5);
        let none: BTreeMap<_, _> = [("c".to_string(), Selection::new("c").with("x", 1).with("y", 0))].into();
        assert_eq!(convergence_check(&truth, &none), 1.0);
        assert_eq!(selection_accuracy(&half, &truth).unwrap(), 1.0 - convergence_check(&truth, &half));
    }
}

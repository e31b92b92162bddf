//! Planted-ground-truth synthetic datasets.
//!
//! Coordinate 0 of every feature vector carries objectness: `+a` for objects,
//! `−a` for background. The remaining coordinates hold a cluster prototype
//! (class, distractor or background) plus isotropic noise. A configurable
//! fraction of target classes has a distractor proposal in each positive
//! bag. Distractors score slightly higher objectness than the true object,
//! and each bag's distractor comes from one of several pool clusters, so
//! objectness prefers the distractor while cross-bag consistency prefers
//! the true object.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{BBox, Bag, Dataset, GtBox, GtLabel, Proposal, Selection, BACKGROUND};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub bags_per_class: usize,
    pub proposals_per_bag: usize,
    pub feature_dim: usize,
    /// Norm of every cluster prototype.
    pub cluster_separation: f64,
    /// Fraction of target classes whose positive bags hold a distractor.
    pub distractor_overlap: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub num_source_classes: usize,
    pub source_bags_per_class: usize,
    /// Objectness coordinate of objects (backgrounds get the negative).
    pub objectness: f64,
    /// Extra objectness of distractors over true objects.
    pub distractor_boost: f64,
    /// Size of the shared distractor cluster pool.
    pub distractor_pool: usize,
    /// Pool clusters assigned to each distractor class.
    pub distractors_per_class: usize,
    pub background_clusters: usize,
    /// Annotated objects per source bag, each of a distinct source class.
    pub source_objects_per_bag: usize,
    /// Source object objectness is drawn uniformly from `a ± jitter`.
    pub source_objectness_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 17,
            bags_per_class: 50,
            proposals_per_bag: 10,
            feature_dim: 16,
            cluster_separation: 3.0,
            distractor_overlap: 0.5,
            noise_sigma: 0.3,
            seed: 0,
            num_source_classes: 60,
            source_bags_per_class: 20,
            objectness: 2.0,
            distractor_boost: 0.6,
            distractor_pool: 12,
            distractors_per_class: 4,
            background_clusters: 6,
            source_objects_per_bag: 1,
            source_objectness_jitter: 0.8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic config: {m}")));
        if self.num_classes == 0 || self.bags_per_class == 0 || self.feature_dim < 2 {
            return bad("sizes must be positive and feature_dim >= 2");
        }
        if self.proposals_per_bag < 3 {
            // object, distractor and the whole-image proposal
            return bad("proposals_per_bag must be >= 3");
        }
        if !(0.0..=1.0).contains(&self.distractor_overlap) {
            return bad("distractor_overlap must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0) || !(self.cluster_separation >= 0.0) || !(self.objectness >= 0.0) {
            return bad("scales must be non-negative");
        }
        if self.distractors_per_class == 0 || self.distractors_per_class > self.distractor_pool {
            return bad("distractors_per_class must lie in 1..=distractor_pool");
        }
        if self.source_objects_per_bag == 0
            || self.source_objects_per_bag >= self.proposals_per_bag
            || self.source_objects_per_bag > self.num_source_classes.max(1)
        {
            return bad("source_objects_per_bag must lie in 1..proposals_per_bag and not exceed num_source_classes");
        }
        if !(self.source_objectness_jitter >= 0.0) {
            return bad("source_objectness_jitter must be non-negative");
        }
        if self.background_clusters == 0 {
            return bad("background_clusters must be positive");
        }
        Ok(())
    }

    pub fn num_distractor_classes(&self) -> usize {
        (self.distractor_overlap * self.num_classes as f64).round() as usize
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub source: Dataset,
    pub target: Dataset,
    /// Planted positive index of every target positive bag.
    pub truth: BTreeMap<String, Selection>,
    /// Planted distractor index of target bags that have one.
    pub distractors: BTreeMap<String, Selection>,
}

struct Sampler {
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    dim: usize,
    a: f64,
}

impl Sampler {
    fn prototype(&mut self, norm: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        v[0] = 0.0;
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|x| *x *= norm / n);
        v
    }

    fn point(&mut self, objectness: f64, center: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = center.iter().map(|c| c + self.noise.sample(&mut self.rng)).collect();
        v[0] += objectness;
        v
    }

    /// Random box inside the right half of a 100×100 image.
    fn right_box(&mut self) -> BBox {
        let x = self.rng.random_range(55.0..70.0);
        let y = self.rng.random_range(0.0..60.0);
        BBox { x1: x, y1: y, x2: x + 25.0, y2: y + 35.0 }
    }

    fn left_box(&mut self) -> BBox {
        let x = self.rng.random_range(0.0..10.0);
        let y = self.rng.random_range(0.0..60.0);
        BBox { x1: x, y1: y, x2: x + 35.0, y2: y + 35.0 }
    }
}

const FULL_IMAGE: BBox = BBox { x1: 0.0, y1: 0.0, x2: 100.0, y2: 100.0 };

enum Extra<'a> {
    None,
    Distractor(&'a [f64]),
    /// Further annotated objects as `(class, prototype)`.
    Objects(Vec<(String, &'a [f64])>),
}

/// One bag: the object, an optional distractor, backgrounds, and a
/// whole-image background proposal. Returns the bag and the object and
/// distractor indices after shuffling.
fn make_bag(
    s: &mut Sampler,
    id: String,
    class: &str,
    prototype: &[f64],
    extra: Extra<'_>,
    backgrounds: &[Vec<f64>],
    b: usize,
    distractor_boost: f64,
    jitter: f64,
) -> (Bag, usize, Option<usize>) {
    let a = s.a;
    let mut props: Vec<(u8, Proposal)> = Vec::with_capacity(b);
    let mut labels = vec![class.to_string()];
    let mut gt_boxes = Vec::new();
    let objectness = |s: &mut Sampler| if jitter > 0.0 { a + s.rng.random_range(-jitter..=jitter) } else { a };

    let object_box = s.left_box();
    let o = objectness(s);
    let mut obj = Proposal::new(s.point(o, prototype));
    obj.bbox = Some(object_box);
    obj.gt = Some(GtLabel::Class(class.to_string()));
    props.push((1, obj));

    if let Extra::Distractor(center) = extra {
        let mut d = Proposal::new(s.point(a + distractor_boost, center));
        d.bbox = Some(s.right_box());
        d.gt = Some(GtLabel::Background);
        props.push((2, d));
    }
    if let Extra::Objects(others) = extra {
        for (other, center) in others {
            let o = objectness(s);
            let mut p = Proposal::new(s.point(o, center));
            let bbox = s.right_box();
            p.bbox = Some(bbox);
            p.gt = Some(GtLabel::Class(other.clone()));
            gt_boxes.push(GtBox { class: other.clone(), bbox });
            labels.push(other);
            props.push((3, p));
        }
    }

    let center = backgrounds.choose(&mut s.rng).expect("non-empty").clone();
    let mut full = Proposal::new(s.point(-a, &center));
    full.bbox = Some(FULL_IMAGE);
    full.gt = Some(GtLabel::Background);
    full.is_full_image = true;
    props.push((0, full));

    while props.len() < b {
        let center = backgrounds.choose(&mut s.rng).expect("non-empty").clone();
        let mut p = Proposal::new(s.point(-a, &center));
        p.bbox = Some(s.right_box());
        p.gt = Some(GtLabel::Background);
        props.push((0, p));
    }
    props.shuffle(&mut s.rng);
    let object = props.iter().position(|(k, _)| *k == 1).expect("object present");
    let distractor = props.iter().position(|(k, _)| *k == 2);
    let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
    let mut bag = Bag::new(id, &labels, props.into_iter().map(|(_, p)| p).collect());
    bag.gt_boxes.push(GtBox { class: class.to_string(), bbox: object_box });
    bag.gt_boxes.extend(gt_boxes);
    (bag, object, distractor)
}

pub fn generate(config: &SynthConfig) -> Result<Synthetic> {
    config.validate()?;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        noise: Normal::new(0.0, config.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?,
        dim: config.feature_dim,
        a: config.objectness,
    };
    let sep = config.cluster_separation;
    let target_protos: Vec<Vec<f64>> = (0..config.num_classes).map(|_| s.prototype(sep)).collect();
    let source_protos: Vec<Vec<f64>> = (0..config.num_source_classes).map(|_| s.prototype(sep)).collect();
    let pool: Vec<Vec<f64>> = (0..config.distractor_pool).map(|_| s.prototype(sep)).collect();
    let backgrounds: Vec<Vec<f64>> = (0..config.background_clusters).map(|_| s.prototype(0.5 * sep)).collect();

    let mut distractor_classes: Vec<usize> = (0..config.num_classes).collect();
    distractor_classes.shuffle(&mut s.rng);
    distractor_classes.truncate(config.num_distractor_classes());
    let assigned: BTreeMap<usize, Vec<usize>> = distractor_classes
        .iter()
        .map(|&c| {
            let mut ids: Vec<usize> = (0..config.distractor_pool).collect();
            ids.shuffle(&mut s.rng);
            ids.truncate(config.distractors_per_class);
            (c, ids)
        })
        .collect();

    let b = config.proposals_per_bag;
    let mut target_bags = Vec::with_capacity(config.num_classes * config.bags_per_class);
    let mut truth = BTreeMap::new();
    let mut distractors = BTreeMap::new();
    for (c, proto) in target_protos.iter().enumerate() {
        let class = format!("t{c:02}");
        let mut sel = Selection::new(&class);
        let mut dsel = Selection::new(&class);
        for i in 0..config.bags_per_class {
            let extra = match assigned.get(&c) {
                Some(ids) => Extra::Distractor(&pool[ids[s.rng.random_range(0..ids.len())]]),
                None => Extra::None,
            };
            let id = format!("{class}_{i:03}");
            let (bag, obj, dis) = make_bag(&mut s, id.clone(), &class, proto, extra, &backgrounds, b, config.distractor_boost, 0.0);
            sel.chosen.insert(id.clone(), obj);
            if let Some(d) = dis {
                dsel.chosen.insert(id, d);
            }
            target_bags.push(bag);
        }
        truth.insert(class.clone(), sel);
        if !dsel.is_empty() {
            distractors.insert(class, dsel);
        }
    }

    let mut source_bags = Vec::with_capacity(config.num_source_classes * config.source_bags_per_class);
    for (c, proto) in source_protos.iter().enumerate() {
        let class = format!("s{c:02}");
        for i in 0..config.source_bags_per_class {
            let mut others: Vec<usize> = (0..config.num_source_classes).filter(|&o| o != c).collect();
            others.shuffle(&mut s.rng);
            others.truncate(config.source_objects_per_bag - 1);
            let extra = Extra::Objects(others.into_iter().map(|o| (format!("s{o:02}"), &source_protos[o][..])).collect());
            let id = format!("{class}_{i:03}");
            let jitter = config.source_objectness_jitter;
            let (bag, _, _) = make_bag(&mut s, id, &class, proto, extra, &backgrounds, b, 0.0, jitter);
            source_bags.push(bag);
        }
    }
    debug_assert!(source_bags.iter().all(|b: &Bag| !b.has_label(BACKGROUND)));

    Ok(Synthetic {
        source: Dataset::new(source_bags)?,
        target: Dataset::new(target_bags)?,
        truth,
        distractors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_classes: 4,
            bags_per_class: 6,
            num_source_classes: 3,
            source_bags_per_class: 5,
            ..Default::default()
        }
    }

    #[test]
    fn counts_match_config() {
        let cfg = small();
        let syn = generate(&cfg).unwrap();
        assert_eq!(syn.target.classes().len(), 4);
        assert_eq!(syn.target.bags().len(), 24);
        assert_eq!(syn.source.bags().len(), 15);
        assert!(syn.target.bags().iter().all(|b| b.len() == 10 && b.gt_boxes.len() == 1));
        assert_eq!(syn.truth.values().map(Selection::len).sum::<usize>(), 24);
        assert_eq!(syn.distractors.len(), cfg.num_distractor_classes());
        assert!(syn.source.classes().is_disjoint(syn.target.classes()));
        assert!(syn.source.fully_labeled());
        for sel in syn.truth.values() {
            assert!(sel.is_feasible(&syn.target).unwrap());
        }
    }

    #[test]
    fn seed_reproducible() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.target, b.target);
        assert_eq!(a.source, b.source);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig { proposals_per_bag: 2, ..small() }).is_err());
        assert!(generate(&SynthConfig { distractor_overlap: 1.5, ..small() }).is_err());
        assert!(generate(&SynthConfig { num_classes: 0, ..small() }).is_err());
    }
}

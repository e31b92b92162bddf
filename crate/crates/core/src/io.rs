//! File formats: JSON Lines datasets, JSON model checkpoints and selections,
//! CSV traces.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{BBox, Bag, Dataset, GtBox, GtLabel, Proposal, Selection};
use crate::error::{Error, Result};
use crate::inference::TraceRow;
use crate::scoring::ScoringModel;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalRecord {
    features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features_generic: Option<Vec<f64>>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_class: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    is_full_image: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtBoxRecord {
    class: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BagRecord {
    id: String,
    labels: Vec<String>,
    proposals: Vec<ProposalRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    gt_boxes: Vec<GtBoxRecord>,
}

fn to_box(b: [f64; 4]) -> Result<BBox> {
    BBox::new(b[0], b[1], b[2], b[3])
}

fn from_box(b: &BBox) -> [f64; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

impl BagRecord {
    fn into_bag(self) -> Result<Bag> {
        let proposals = self
            .proposals
            .into_iter()
            .map(|p| {
                Ok(Proposal {
                    features: p.features,
                    features_generic: p.features_generic,
                    bbox: p.bbox.map(to_box).transpose()?,
                    gt: p.gt_class.as_deref().map(GtLabel::parse),
                    is_full_image: p.is_full_image,
                })
            })
            .collect::<Result<_>>()?;
        let gt_boxes = self
            .gt_boxes
            .into_iter()
            .map(|g| Ok(GtBox { class: g.class, bbox: to_box(g.bbox)? }))
            .collect::<Result<_>>()?;
        Ok(Bag {
            id: self.id,
            labels: self.labels.into_iter().collect(),
            proposals,
            gt_boxes,
        })
    }

    fn from_bag(bag: &Bag) -> Self {
        Self {
            id: bag.id.clone(),
            labels: bag.labels.iter().cloned().collect(),
            proposals: bag
                .proposals
                .iter()
                .map(|p| ProposalRecord {
                    features: p.features.clone(),
                    features_generic: p.features_generic.clone(),
                    bbox: p.bbox.as_ref().map(from_box),
                    gt_class: p.gt.as_ref().map(|g| g.as_str().to_string()),
                    is_full_image: p.is_full_image,
                })
                .collect(),
            gt_boxes: bag
                .gt_boxes
                .iter()
                .map(|g| GtBoxRecord { class: g.class.clone(), bbox: from_box(&g.bbox) })
                .collect(),
        }
    }
}

/// Reads one bag per non-blank line. Errors carry 1-based line numbers.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut bags = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let record: BagRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        bags.push(record.into_bag().map_err(|e| parse_err(e.to_string()))?);
    }
    Dataset::new(bags)
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut writer: W) -> Result<()> {
    for bag in dataset.bags() {
        serde_json::to_writer(&mut writer, &BagRecord::from_bag(bag))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(dataset, BufWriter::new(File::create(path)?))
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    version: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize, Deserialize)]
struct ModelBody {
    model: ScoringModel,
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn save_model(model: &ScoringModel, path: impl AsRef<Path>) -> Result<()> {
    write_json(
        &Checkpoint {
            version: CHECKPOINT_VERSION,
            body: ModelBody { model: model.clone() },
        },
        path,
    )
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ScoringModel> {
    let c: Checkpoint<ModelBody> = read_json(path)?;
    if c.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidArgument(format!("unsupported checkpoint version {}", c.version)));
    }
    Ok(c.body.model)
}

pub fn save_selections(selections: &BTreeMap<String, Selection>, path: impl AsRef<Path>) -> Result<()> {
    write_json(selections, path)
}

pub fn load_selections(path: impl AsRef<Path>) -> Result<BTreeMap<String, Selection>> {
    read_json(path)
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

mod common;

use std::collections::BTreeMap;

use common::{random_model, rng};
use pairloc::data::{Dataset, Selection};
use pairloc::error::Error;
use pairloc::inference::{relocalize, RelocConfig, StepKind, TraceRow};
use pairloc::io::{
    load_dataset, load_model, load_selections, read_dataset, save_dataset, save_model, save_selections, write_dataset,
    write_trace_csv,
};
use pairloc::synth::{generate, SynthConfig};

fn same_bits(a: &Dataset, b: &Dataset) {
    assert_eq!(a.bags().len(), b.bags().len());
    for (x, y) in a.bags().iter().zip(b.bags()) {
        assert_eq!(x.id, y.id);
        assert_eq!(x.labels, y.labels);
        assert_eq!(x.gt_boxes, y.gt_boxes);
        for (p, q) in x.proposals.iter().zip(&y.proposals) {
            let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p.features), bits(&q.features));
            assert_eq!(p.features_generic.as_deref().map(bits), q.features_generic.as_deref().map(bits));
            assert_eq!(p.bbox, q.bbox);
            assert_eq!(p.gt, q.gt);
            assert_eq!(p.is_full_image, q.is_full_image);
        }
    }
    assert_eq!(a.classes(), b.classes());
}

#[test]
fn generated_sets_round_trip_bit_exactly() {
    let syn = generate(&SynthConfig { num_classes: 5, bags_per_class: 8, seed: 4, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, ds) in [("source", &syn.source), ("target", &syn.target)] {
        let path = dir.path().join(format!("{name}.jsonl"));
        save_dataset(ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        same_bits(ds, &back);

        let mut again = Vec::new();
        write_dataset(&back, &mut again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), again);
    }
}

#[test]
fn blank_lines_are_skipped_and_bad_json_names_the_line() {
    let text = "\n{\"id\":\"a\",\"labels\":[\"c\"],\"proposals\":[{\"features\":[1.0]}]}\n\n";
    assert_eq!(read_dataset(text.as_bytes()).unwrap().bags().len(), 1);
    let bad = "{\"id\":\"a\",\"labels\":[\"c\"],\"proposals\":[{\"features\":[1.0]}]}\nnot json\n";
    assert!(matches!(read_dataset(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
    let unknown = "{\"id\":\"a\",\"labels\":[],\"proposals\":[{\"features\":[1.0],\"extra\":1}]}";
    assert!(matches!(read_dataset(unknown.as_bytes()), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn model_checkpoint_round_trip() {
    let model = random_model(&mut rng(5), &["a", "b", "c"], 6, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(back.to_flat()), bits(model.to_flat()));
}

#[test]
fn unknown_checkpoint_version_is_rejected() {
    let model = random_model(&mut rng(6), &["a"], 3, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&model, &path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["version"] = serde_json::json!(99);
    std::fs::write(&path, v.to_string()).unwrap();
    let err = load_model(&path).unwrap_err();
    assert!(err.to_string().contains("99"), "{err}");
}

#[test]
fn selections_round_trip() {
    let mut sels = BTreeMap::new();
    sels.insert("cat".to_string(), Selection::new("cat").with("img1", 3).with("img2", 0));
    sels.insert("dog".to_string(), Selection::new("dog").with("img3", 7));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sel.json");
    save_selections(&sels, &path).unwrap();
    assert_eq!(load_selections(&path).unwrap(), sels);
}

#[test]
fn trace_csv_has_one_row_per_step() {
    let rows = vec![
        TraceRow {
            class: "cat".into(),
            elapsed_s: 0.5,
            step: StepKind::Init,
            epoch: 0,
            energy: -3.25,
            lower_bound: Some(-4.0),
            pairwise_evals: 12,
        },
        TraceRow {
            class: "cat".into(),
            elapsed_s: 0.75,
            step: StepKind::Icm,
            epoch: 1,
            energy: -3.5,
            lower_bound: None,
            pairwise_evals: 30,
        },
    ];
    let mut out = Vec::new();
    write_trace_csv(&rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "class,elapsed_s,step,epoch,energy,lower_bound,pairwise_evals");
    assert_eq!(lines[1], "cat,0.5,init,0,-3.25,-4.0,12");
    assert_eq!(lines[2], "cat,0.75,icm,1,-3.5,,30");
}

#[test]
fn relocalization_trace_serializes() {
    let syn = generate(&SynthConfig { num_classes: 2, bags_per_class: 6, seed: 8, ..Default::default() }).unwrap();
    let classes: Vec<&str> = syn.target.classes().iter().map(String::as_str).collect();
    let model = random_model(&mut rng(8), &classes, 16, 16);
    let relocs = relocalize(&syn.target, &model, &RelocConfig::default()).unwrap();
    let rows: Vec<TraceRow> = relocs.values().flat_map(|r| r.trace.clone()).collect();
    let mut out = Vec::new();
    write_trace_csv(&rows, &mut out).unwrap();
    let mut reader = csv::Reader::from_reader(out.as_slice());
    let back: Vec<TraceRow> = reader.deserialize().map(Result::unwrap).collect();
    assert_eq!(back, rows);
}

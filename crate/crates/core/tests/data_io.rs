//! Dataset files, checkpoints, the generator and the training loop.

use std::fs;
use std::path::Path;

use egat::data::{
    generate_synthetic_trade, load_checkpoint, load_dataset, oracle_labels, save_checkpoint, DataOptions, Dataset,
    Preset, SignalMode,
};
use egat::model::{forward, GraphInputs, Model, ModelConfig};
use egat::train::{accuracy, evaluate, fit, TrainConfig};
use egat::EgatError;

fn write_triangle(dir: &Path) {
    fs::write(dir.join("nodes.csv"), "id,feat_0,label\n0,1.0,0\n1,0.5,1\n2,-1.0,0\n").unwrap();
    fs::write(dir.join("edges.csv"), "src,dst,feat_0\n0,1,1.5\n1,2,0.5\n0,2,2.0\n").unwrap();
    fs::write(dir.join("splits.json"), r#"{"train":[0],"val":[1],"test":[2],"num_classes":2}"#).unwrap();
}

fn triangle() -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    write_triangle(dir.path());
    let ds = load_dataset(dir.path(), &DataOptions::default()).unwrap();
    (dir, ds)
}

#[test]
fn triangle_fixture_loads() {
    let (_dir, ds) = triangle();
    assert_eq!(ds.num_nodes(), 3);
    assert_eq!(ds.graph.num_edges(), 3);
    assert_eq!(ds.edge_feats.get(2, 0), 2.0);
    assert_eq!(ds.labels, vec![Some(0), Some(1), Some(0)]);
    assert_eq!(ds.masks.sizes(), (1, 1, 1));
    let inputs = ds.inputs(false).unwrap();
    assert_eq!(inputs.graph.num_edges(), 6);
}

#[test]
fn edge_to_unknown_node_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_triangle(dir.path());
    fs::write(dir.path().join("edges.csv"), "src,dst,feat_0\n0,1,1.0\n0,99,1.0\n").unwrap();
    let err = load_dataset(dir.path(), &DataOptions::default()).unwrap_err();
    assert!(matches!(err, EgatError::DanglingNode { id: 99, line: 3, .. }), "{err}");
}

#[test]
fn repeated_edge_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_triangle(dir.path());
    fs::write(dir.path().join("edges.csv"), "src,dst,feat_0\n0,1,1.0\n1,0,2.0\n").unwrap();
    let err = load_dataset(dir.path(), &DataOptions::default()).unwrap_err();
    assert!(matches!(err, EgatError::DuplicateEdgeRow { .. }), "{err}");
}

#[test]
fn overlapping_splits_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_triangle(dir.path());
    fs::write(dir.path().join("splits.json"), r#"{"train":[0,1],"val":[1],"test":[2],"num_classes":2}"#).unwrap();
    let err = load_dataset(dir.path(), &DataOptions::default()).unwrap_err();
    assert!(matches!(err, EgatError::OverlappingMasks { .. }), "{err}");
}

#[test]
fn missing_edge_features_are_synthesized_on_request() {
    let dir = tempfile::tempdir().unwrap();
    write_triangle(dir.path());
    fs::write(dir.path().join("edges.csv"), "src,dst\n0,1\n1,2\n").unwrap();
    let ds = load_dataset(dir.path(), &DataOptions::default()).unwrap();
    assert_eq!(ds.edge_feats.rows(), 2);
    let off = DataOptions { synthesize_edge_features: false };
    assert!(matches!(load_dataset(dir.path(), &off), Err(EgatError::MalformedRow { .. })));
}

fn small_model(ds: &Dataset) -> Model {
    let cfg = ModelConfig { heads: 2, num_classes: ds.num_classes, seed: 9, ..Default::default() };
    Model::init(cfg, ds.node_feats.cols(), ds.edge_feats.cols()).unwrap()
}

#[test]
fn checkpoint_round_trip_reproduces_forward_bits() {
    let (dir, ds) = triangle();
    let model = small_model(&ds);
    let path = dir.path().join("model.bin");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let inputs = ds.inputs(true).unwrap();
    let a = forward(&model, &inputs, None).unwrap().logits;
    let b = forward(&back, &inputs, None).unwrap().logits;
    let bits = |m: &egat::Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn truncated_checkpoint_is_corrupt() {
    let (dir, ds) = triangle();
    let path = dir.path().join("model.bin");
    save_checkpoint(&small_model(&ds), &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(EgatError::CorruptCheckpoint(_))));
}

#[test]
fn checkpoint_from_another_version_is_refused() {
    let (dir, ds) = triangle();
    let path = dir.path().join("model.bin");
    save_checkpoint(&small_model(&ds), &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let cut = bytes.iter().position(|&b| b == b'\n').unwrap();
    let header = std::str::from_utf8(&bytes[..cut]).unwrap().replacen("\"version\":1", "\"version\":7", 1);
    let mut patched = header.into_bytes();
    patched.extend_from_slice(&bytes[cut..]);
    fs::write(&path, patched).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(matches!(err, EgatError::CheckpointVersion { found: 7, expected: 1 }), "{err}");
}

#[test]
fn presets_have_the_published_shapes() {
    for (preset, n, labeled, classes) in [(Preset::TradeB, 3907, 97, 2), (Preset::TradeM, 4431, 139, 3)] {
        let ds = generate_synthetic_trade(&preset.config(0)).unwrap();
        assert_eq!(ds.num_nodes(), n);
        assert_eq!(ds.labeled_ids().len(), labeled);
        assert_eq!(ds.num_classes, classes);
    }
}

#[test]
fn noise_free_oracle_is_near_perfect_on_presets() {
    for preset in [Preset::TradeB, Preset::TradeM] {
        let ds = generate_synthetic_trade(&preset.config(1)).unwrap();
        let oracle = oracle_labels(&ds, SignalMode::Mean);
        let preds: Vec<usize> = oracle.iter().map(|l| l.unwrap_or(0)).collect();
        let all: Vec<bool> = ds.labels.iter().map(Option::is_some).collect();
        assert!(accuracy(&preds, &ds.labels, &all).unwrap() >= 0.95);
    }
}

/// Two cliques joined by one bridge, node label = clique; features carry
/// the label so a short run can separate the training nodes.
fn separable() -> (GraphInputs, Vec<Option<usize>>, egat::data::Masks) {
    let mut edges = Vec::new();
    for base in [0, 6] {
        for i in 0..6 {
            for j in i + 1..6 {
                edges.push((base + i, base + j));
            }
        }
    }
    edges.push((5, 6));
    let g = egat::graph::build_graph(12, &edges).unwrap();
    let labels: Vec<Option<usize>> = (0..12).map(|i| Some(i / 6)).collect();
    let h = egat::Matrix::from_vec(12, 2, (0..12).flat_map(|i| [(i / 6) as f64, 1.0 - (i / 6) as f64]).collect()).unwrap();
    let e = egat::Matrix::filled(edges.len(), 1, 1.0);
    let inputs = GraphInputs::new(&g, h, &e).unwrap();
    let masks = egat::data::Masks::from_ids(12, &[0, 1, 2, 6, 7, 8], &[3, 9], &[4, 5, 10, 11]);
    (inputs, labels, masks)
}

fn separable_model(seed: u64) -> Model {
    let cfg = ModelConfig { heads: 1, dropout: 0.0, seed, ..Default::default() };
    Model::init(cfg, 2, 1).unwrap()
}

#[test]
fn separable_graph_is_learned() {
    let (inputs, labels, masks) = separable();
    let mut model = separable_model(0);
    fit(&mut model, &inputs, &labels, &masks, &TrainConfig { max_epochs: 200, patience: 200 }).unwrap();
    assert_eq!(evaluate(&model, &inputs, &labels, &masks.train).unwrap(), 1.0);
}

#[test]
fn zero_patience_stops_at_first_stall() {
    let (inputs, labels, masks) = separable();
    let mut model = separable_model(1);
    let report = fit(&mut model, &inputs, &labels, &masks, &TrainConfig { max_epochs: 500, patience: 0 }).unwrap();
    let h = &report.history;
    let stall = (1..h.len()).find(|&k| h[..k].iter().all(|m| h[k].val_loss >= m.val_loss));
    match stall {
        Some(k) => {
            assert_eq!(h.len(), k + 1);
            assert!(report.stopped_early);
        }
        None => assert_eq!(h.len(), 500),
    }
}

#[test]
fn training_history_is_reproducible() {
    let (inputs, labels, masks) = separable();
    let run = || {
        let mut model = separable_model(2);
        fit(&mut model, &inputs, &labels, &masks, &TrainConfig { max_epochs: 30, patience: 5 }).unwrap()
    };
    let (a, b) = (run(), run());
    let losses = |r: &egat::train::FitReport| r.history.iter().map(|m| m.val_loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.best_epoch, b.best_epoch);
}

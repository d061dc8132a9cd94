//! On-disk datasets, label splits, the synthetic trade-network generator
//! and model checkpoints.
//!
//! A dataset directory holds three files:
//!
//! * `nodes.csv`: `id,feat_0,...,feat_{F-1},label`, ids `0..N` in order,
//!   an empty label for unlabeled nodes.
//! * `edges.csv`: `src,dst,feat_0,...`, each undirected pair once.
//! * `splits.json`: `{"train":[..],"val":[..],"test":[..],"num_classes":C}`
//!   with optional `"name"` and `"seed"`.

mod checkpoint;
mod split;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EgatError, Result};
use crate::graph::{build_graph, synthesize_edge_degree_features, Graph};
use crate::matrix::{FeatureMatrix, Matrix};
use crate::model::GraphInputs;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use split::split_labels;
pub use synth::{generate_synthetic_trade, oracle_labels, NodeFeatureMode, Preset, SignalMode, SynthConfig};

/// Disjoint train/validation/test node masks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn from_ids(num_nodes: usize, train: &[usize], val: &[usize], test: &[usize]) -> Self {
        let mask = |ids: &[usize]| {
            let mut m = vec![false; num_nodes];
            for &i in ids {
                m[i] = true;
            }
            m
        };
        Masks {
            train: mask(train),
            val: mask(val),
            test: mask(test),
        }
    }

    pub fn ids(mask: &[bool]) -> Vec<usize> {
        mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        let count = |m: &[bool]| m.iter().filter(|x| **x).count();
        (count(&self.train), count(&self.val), count(&self.test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub node_feats: FeatureMatrix,
    pub edge_feats: FeatureMatrix,
    pub labels: Vec<Option<usize>>,
    pub masks: Masks,
    pub num_classes: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataOptions {
    /// Use the edge-degree feature when `edges.csv` has no feature columns.
    #[serde(default = "yes")]
    pub synthesize_edge_features: bool,
}

fn yes() -> bool {
    true
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            synthesize_edge_features: true,
        }
    }
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn labeled_ids(&self) -> Vec<usize> {
        self.labels.iter().enumerate().filter_map(|(i, l)| l.map(|_| i)).collect()
    }

    /// Checks shapes, label range and mask consistency.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        for (what, rows) in [("node features", self.node_feats.rows()), ("labels", self.labels.len())] {
            if rows != n {
                return Err(EgatError::dims(format!("{what} have {rows} rows for {n} nodes")));
            }
        }
        if self.edge_feats.rows() != self.graph.num_edges() {
            return Err(EgatError::RowMismatch {
                expected: self.graph.num_edges(),
                found: self.edge_feats.rows(),
            });
        }
        for (id, label) in self.labels.iter().enumerate() {
            if let Some(label) = *label {
                if label >= self.num_classes {
                    return Err(EgatError::LabelOutOfRange {
                        id,
                        label,
                        num_classes: self.num_classes,
                    });
                }
            }
        }
        let named = [
            ("train", &self.masks.train),
            ("val", &self.masks.val),
            ("test", &self.masks.test),
        ];
        for (_, m) in named {
            if m.len() != n {
                return Err(EgatError::dims(format!("mask of length {} for {n} nodes", m.len())));
            }
        }
        for id in 0..n {
            let hits: Vec<&'static str> = named.iter().filter(|(_, m)| m[id]).map(|(s, _)| *s).collect();
            if hits.len() > 1 {
                return Err(EgatError::OverlappingMasks {
                    id,
                    first: hits[0],
                    second: hits[1],
                });
            }
            if !hits.is_empty() && self.labels[id].is_none() {
                return Err(EgatError::UnlabeledSplitNode { id });
            }
        }
        Ok(())
    }

    /// Model inputs: optionally standardized features on the
    /// self-loop-augmented graph.
    pub fn inputs(&self, standardize_features: bool) -> Result<GraphInputs> {
        let (h, e) = if standardize_features {
            (standardize(&self.node_feats), standardize(&self.edge_feats))
        } else {
            (self.node_feats.clone(), self.edge_feats.clone())
        };
        GraphInputs::new(&self.graph, h, &e)
    }
}

/// Per-column z-score. Constant columns are left untouched.
pub fn standardize(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    let n = m.rows() as f64;
    if m.rows() == 0 {
        return out;
    }
    for c in 0..m.cols() {
        let mean = (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / n;
        let var = (0..m.rows()).map(|r| (m.get(r, c) - mean).powi(2)).sum::<f64>() / n;
        if var <= 0.0 {
            continue;
        }
        let sd = var.sqrt();
        for r in 0..m.rows() {
            out.set(r, c, (m.get(r, c) - mean) / sd);
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitsFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

fn malformed(file: &Path, line: usize, message: impl Into<String>) -> EgatError {
    EgatError::MalformedRow {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| EgatError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(file))
}

fn headers(path: &Path, rdr: &mut csv::Reader<fs::File>) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(|e| malformed(path, 1, e.to_string()))?;
    Ok(h.iter().map(|s| s.trim().to_string()).collect())
}

fn check_feature_headers(path: &Path, names: &[String]) -> Result<()> {
    for (k, name) in names.iter().enumerate() {
        if *name != format!("feat_{k}") {
            return Err(malformed(path, 1, format!("expected header feat_{k}, found {name:?}")));
        }
    }
    Ok(())
}

fn parse_usize(path: &Path, line: usize, field: &str, what: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| malformed(path, line, format!("{what} {field:?} is not a non-negative integer")))
}

fn parse_f64(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| malformed(path, line, format!("{what} {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(malformed(path, line, format!("{what} is not finite")));
    }
    Ok(v)
}

fn records(
    path: &Path,
    rdr: &mut csv::Reader<fs::File>,
    width: usize,
) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            malformed(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(malformed(path, line, format!("expected {width} fields, found {}", rec.len())));
        }
        out.push((line, rec));
    }
    Ok(out)
}

/// Reads a dataset directory.
pub fn load_dataset(dir: &Path, options: &DataOptions) -> Result<Dataset> {
    let nodes_path = dir.join("nodes.csv");
    let mut rdr = reader(&nodes_path)?;
    let head = headers(&nodes_path, &mut rdr)?;
    if head.len() < 2 || head[0] != "id" || head[head.len() - 1] != "label" {
        return Err(malformed(&nodes_path, 1, "header must be id,feat_0,...,label"));
    }
    check_feature_headers(&nodes_path, &head[1..head.len() - 1])?;
    let f_h = head.len() - 2;
    let rows = records(&nodes_path, &mut rdr, head.len())?;
    let mut node_data = Vec::with_capacity(rows.len() * f_h);
    let mut labels = Vec::with_capacity(rows.len());
    for (k, (line, rec)) in rows.iter().enumerate() {
        let id = parse_usize(&nodes_path, *line, &rec[0], "id")?;
        if id != k {
            return Err(malformed(&nodes_path, *line, format!("expected id {k}, found {id}")));
        }
        for c in 1..=f_h {
            node_data.push(parse_f64(&nodes_path, *line, &rec[c], &head[c])?);
        }
        let label = rec[f_h + 1].trim();
        labels.push(if label.is_empty() {
            None
        } else {
            Some(parse_usize(&nodes_path, *line, label, "label")?)
        });
    }
    let n = labels.len();
    let node_feats = Matrix::from_vec(n, f_h, node_data)?;

    let edges_path = dir.join("edges.csv");
    let mut rdr = reader(&edges_path)?;
    let head = headers(&edges_path, &mut rdr)?;
    if head.len() < 2 || head[0] != "src" || head[1] != "dst" {
        return Err(malformed(&edges_path, 1, "header must be src,dst,feat_0,..."));
    }
    check_feature_headers(&edges_path, &head[2..])?;
    let f_e = head.len() - 2;
    let rows = records(&edges_path, &mut rdr, head.len())?;
    let mut edges = Vec::with_capacity(rows.len());
    let mut edge_data = Vec::with_capacity(rows.len() * f_e);
    let mut seen = std::collections::HashSet::with_capacity(rows.len());
    for (line, rec) in &rows {
        let src = parse_usize(&edges_path, *line, &rec[0], "src")?;
        let dst = parse_usize(&edges_path, *line, &rec[1], "dst")?;
        for id in [src, dst] {
            if id >= n {
                return Err(EgatError::DanglingNode {
                    file: edges_path.clone(),
                    line: *line,
                    id,
                });
            }
        }
        if !seen.insert((src.min(dst), src.max(dst))) {
            return Err(EgatError::DuplicateEdgeRow {
                file: edges_path.clone(),
                line: *line,
                src,
                dst,
            });
        }
        edges.push((src, dst));
        for c in 2..head.len() {
            edge_data.push(parse_f64(&edges_path, *line, &rec[c], &head[c])?);
        }
    }
    let graph = build_graph(n, &edges)?;
    let edge_feats = if f_e > 0 {
        Matrix::from_vec(edges.len(), f_e, edge_data)?
    } else if options.synthesize_edge_features {
        synthesize_edge_degree_features(&graph)
    } else {
        return Err(malformed(
            &edges_path,
            1,
            "no edge feature columns and edge-feature synthesis is disabled",
        ));
    };

    let splits_path = dir.join("splits.json");
    let text = fs::read_to_string(&splits_path).map_err(|e| EgatError::io(&splits_path, e))?;
    let splits: SplitsFile = serde_json::from_str(&text).map_err(|e| EgatError::json(&splits_path, e))?;
    if splits.num_classes < 2 {
        return Err(EgatError::InvalidConfig(format!(
            "{}: num_classes must be >= 2",
            splits_path.display()
        )));
    }
    for &id in splits.train.iter().chain(&splits.val).chain(&splits.test) {
        if id >= n {
            return Err(EgatError::UnlabeledSplitNode { id });
        }
    }
    let mut masks = Masks::from_ids(n, &[], &[], &[]);
    for (name, ids) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        for &id in ids {
            let prior = [("train", &masks.train), ("val", &masks.val), ("test", &masks.test)]
                .into_iter()
                .find(|(_, m)| m[id])
                .map(|(s, _)| s);
            if let Some(first) = prior {
                return Err(EgatError::OverlappingMasks {
                    id,
                    first,
                    second: name,
                });
            }
            match name {
                "train" => masks.train[id] = true,
                "val" => masks.val[id] = true,
                _ => masks.test[id] = true,
            }
        }
    }

    let name = splits.name.clone().unwrap_or_else(|| dir_name(dir));
    let ds = Dataset {
        name,
        graph,
        node_feats,
        edge_feats,
        labels,
        masks,
        num_classes: splits.num_classes,
        seed: splits.seed,
    };
    ds.validate()?;
    Ok(ds)
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

/// Writes `nodes.csv`, `edges.csv` and `splits.json` into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| EgatError::io(dir, e))?;
    let write_csv = |path: PathBuf, header: Vec<String>, rows: &mut dyn Iterator<Item = Vec<String>>| -> Result<()> {
        let mut w = csv::Writer::from_path(&path).map_err(|e| EgatError::io(&path, e.into()))?;
        let err = |e: csv::Error| EgatError::io(&path, e.into());
        w.write_record(&header).map_err(err)?;
        for row in rows {
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| EgatError::io(&path, e))
    };

    let f_h = ds.node_feats.cols();
    let mut header = vec!["id".to_string()];
    header.extend((0..f_h).map(|k| format!("feat_{k}")));
    header.push("label".into());
    let mut rows = (0..ds.num_nodes()).map(|i| {
        let mut row = vec![i.to_string()];
        row.extend(ds.node_feats.row(i).iter().map(|v| v.to_string()));
        row.push(ds.labels[i].map_or(String::new(), |l| l.to_string()));
        row
    });
    write_csv(dir.join("nodes.csv"), header, &mut rows)?;

    let f_e = ds.edge_feats.cols();
    let mut header = vec!["src".to_string(), "dst".to_string()];
    header.extend((0..f_e).map(|k| format!("feat_{k}")));
    let mut rows = ds.graph.edges().iter().enumerate().map(|(p, &(i, j))| {
        let mut row = vec![i.to_string(), j.to_string()];
        row.extend(ds.edge_feats.row(p).iter().map(|v| v.to_string()));
        row
    });
    write_csv(dir.join("edges.csv"), header, &mut rows)?;

    let splits = SplitsFile {
        train: Masks::ids(&ds.masks.train),
        val: Masks::ids(&ds.masks.val),
        test: Masks::ids(&ds.masks.test),
        num_classes: ds.num_classes,
        name: Some(ds.name.clone()),
        seed: ds.seed,
    };
    let path = dir.join("splits.json");
    let text = serde_json::to_string(&splits).map_err(|e| EgatError::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| EgatError::io(&path, e))
}

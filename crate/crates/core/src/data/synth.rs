//! Synthetic edge-sensitive trade networks.
//!
//! Every labeled node gets a latent class. The graph is a random recursive
//! spanning tree plus random extra edges, and no edge ever joins two
//! labeled nodes, so each edge carries the class context of at most one
//! labeled customer. Edge features are `(count, amount)`: the count is
//! uniform noise and the amount is drawn around a class-dependent mean.
//! Labels are equal-frequency bins of each labeled node's aggregated
//! incident amount, after which a fixed fraction of labels is flipped.
//! Node features are pure noise (or a constant), so only the edges tell
//! the classes apart.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{split_labels, Dataset};
use crate::error::{EgatError, Result};
use crate::graph::build_graph;
use crate::matrix::Matrix;

/// How incident amounts are aggregated into the labeling signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeFeatureMode {
    /// Independent standard normal entries.
    Noise,
    /// Every entry is 1.0, so nodes are indistinguishable by features.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_labeled: usize,
    pub num_classes: usize,
    pub signal: SignalMode,
    pub node_features: NodeFeatureMode,
    pub node_dim: usize,
    /// Fraction of labeled nodes whose label is flipped to another class.
    pub label_noise: f64,
    /// Standard deviation of an edge amount around its class mean.
    pub amount_sd: f64,
    pub seed: u64,
}

/// Published dataset shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "trade-b")]
    TradeB,
    #[serde(rename = "trade-m")]
    TradeM,
}

/// The binary preset with seed 0.
impl Default for SynthConfig {
    fn default() -> Self {
        Preset::TradeB.config(0)
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::TradeB => "trade-b",
            Preset::TradeM => "trade-m",
        }
    }

    pub fn parse(s: &str) -> Option<Preset> {
        match s {
            "trade-b" => Some(Preset::TradeB),
            "trade-m" => Some(Preset::TradeM),
            _ => None,
        }
    }

    pub fn config(self, seed: u64) -> SynthConfig {
        let (num_nodes, num_edges, num_labeled, num_classes) = match self {
            Preset::TradeB => (3907, 4394, 97, 2),
            Preset::TradeM => (4431, 4900, 139, 3),
        };
        SynthConfig {
            name: self.name().to_string(),
            num_nodes,
            num_edges,
            num_labeled,
            num_classes,
            signal: SignalMode::Mean,
            node_features: NodeFeatureMode::Noise,
            node_dim: 4,
            label_noise: 0.05,
            amount_sd: 0.35,
            seed,
        }
    }
}

fn class_means(num_classes: usize) -> &'static [f64] {
    if num_classes == 2 {
        &[1.0, 3.0]
    } else {
        &[1.0, 2.5, 4.0]
    }
}

impl SynthConfig {
    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(EgatError::Infeasible(msg));
        let (n, m, l) = (self.num_nodes, self.num_edges, self.num_labeled);
        if !(2..=3).contains(&self.num_classes) {
            return bad(format!("num_classes must be 2 or 3, got {}", self.num_classes));
        }
        if n < 2 {
            return bad(format!("need at least 2 nodes, got {n}"));
        }
        if m + 1 < n {
            return bad(format!("{m} edges cannot connect {n} nodes"));
        }
        if l < 5.max(self.num_classes) || l >= n {
            return bad(format!("{l} labeled nodes out of {n} (need 5 <= labeled < nodes)"));
        }
        let pairs = n * (n - 1) / 2 - l * (l - 1) / 2;
        if m > pairs {
            return bad(format!("{m} edges exceed the {pairs} pairs allowed"));
        }
        if self.node_dim == 0 {
            return bad("node_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 1)".into());
        }
        if !(self.amount_sd >= 0.0 && self.amount_sd.is_finite()) {
            return bad("amount_sd must be non-negative".into());
        }
        Ok(())
    }
}

/// The labeling rule: equal-frequency bins of `signals` (ties by node id).
fn bin_labels(nodes: &[usize], signals: &[f64], num_classes: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| signals[a].total_cmp(&signals[b]).then(nodes[a].cmp(&nodes[b])));
    let mut out = vec![0; nodes.len()];
    for (rank, &k) in order.iter().enumerate() {
        out[k] = rank * num_classes / nodes.len();
    }
    out
}

/// Per-node aggregate of the amount column (feature 1) over incident edges.
fn incident_signal(ds_edges: &[(usize, usize)], amounts: impl Fn(usize) -> f64, n: usize, mode: SignalMode) -> Vec<f64> {
    let mut sum = vec![0.0; n];
    let mut deg = vec![0usize; n];
    for (p, &(i, j)) in ds_edges.iter().enumerate() {
        for v in [i, j] {
            sum[v] += amounts(p);
            deg[v] += 1;
        }
    }
    match mode {
        SignalMode::Sum => sum,
        SignalMode::Mean => sum
            .iter()
            .zip(&deg)
            .map(|(s, &d)| if d == 0 { 0.0 } else { s / d as f64 })
            .collect(),
    }
}

/// Applies the generator's noise-free labeling rule to a dataset's own edge
/// amounts. Unlabeled nodes stay `None`.
pub fn oracle_labels(ds: &Dataset, mode: SignalMode) -> Vec<Option<usize>> {
    let labeled = ds.labeled_ids();
    let signal = incident_signal(ds.graph.edges(), |p| ds.edge_feats.get(p, 1), ds.num_nodes(), mode);
    let signals: Vec<f64> = labeled.iter().map(|&i| signal[i]).collect();
    let bins = bin_labels(&labeled, &signals, ds.num_classes);
    let mut out = vec![None; ds.num_nodes()];
    for (&i, c) in labeled.iter().zip(bins) {
        out[i] = Some(c);
    }
    out
}

/// Generates a connected, simple, edge-sensitive dataset.
pub fn generate_synthetic_trade(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.check()?;
    let n = cfg.num_nodes;
    let c = cfg.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let labeled_ids = {
        let mut ids = sample(&mut rng, n, cfg.num_labeled).into_vec();
        ids.sort_unstable();
        ids
    };
    let mut is_labeled = vec![false; n];
    let mut latent = vec![usize::MAX; n];
    let mut shuffled = labeled_ids.clone();
    shuffled.shuffle(&mut rng);
    for (k, &i) in shuffled.iter().enumerate() {
        is_labeled[i] = true;
        latent[i] = k % c;
    }

    // Random recursive tree over a random order whose first node is unlabeled.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let root = order.iter().position(|&v| !is_labeled[v]).expect("some node is unlabeled");
    order.swap(0, root);
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(cfg.num_edges);
    let mut seen = HashSet::with_capacity(cfg.num_edges);
    let mut placed = vec![order[0]];
    let mut placed_unlabeled = vec![order[0]];
    for &v in &order[1..] {
        let pool = if is_labeled[v] { &placed_unlabeled } else { &placed };
        let u = pool[rng.gen_range(0..pool.len())];
        edges.push((u.min(v), u.max(v)));
        seen.insert((u.min(v), u.max(v)));
        placed.push(v);
        if !is_labeled[v] {
            placed_unlabeled.push(v);
        }
    }
    while edges.len() < cfg.num_edges {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v || (is_labeled[u] && is_labeled[v]) {
            continue;
        }
        let e = (u.min(v), u.max(v));
        if seen.insert(e) {
            edges.push(e);
        }
    }

    let means = class_means(c);
    let mut edge_data = Vec::with_capacity(edges.len() * 2);
    for &(i, j) in &edges {
        let ctx = if is_labeled[i] {
            latent[i]
        } else if is_labeled[j] {
            latent[j]
        } else {
            rng.gen_range(0..c)
        };
        let count = rng.gen_range(1..=12) as f64;
        let amount = Normal::new(means[ctx], cfg.amount_sd)
            .expect("finite mean and sd")
            .sample(&mut rng)
            .max(0.05);
        edge_data.push(count);
        edge_data.push(amount);
    }
    let edge_feats = Matrix::from_vec(edges.len(), 2, edge_data)?;

    let signal = incident_signal(&edges, |p| edge_feats.get(p, 1), n, cfg.signal);
    let signals: Vec<f64> = labeled_ids.iter().map(|&i| signal[i]).collect();
    let bins = bin_labels(&labeled_ids, &signals, c);
    let mut labels = vec![None; n];
    for (&i, &b) in labeled_ids.iter().zip(&bins) {
        labels[i] = Some(b);
    }
    let flips = (cfg.label_noise * cfg.num_labeled as f64).floor() as usize;
    for k in sample(&mut rng, cfg.num_labeled, flips) {
        let i = labeled_ids[k];
        let old = labels[i].expect("labeled");
        labels[i] = Some((old + rng.gen_range(1..c)) % c);
    }

    let node_feats = match cfg.node_features {
        NodeFeatureMode::Constant => Matrix::filled(n, cfg.node_dim, 1.0),
        NodeFeatureMode::Noise => {
            let data = (0..n * cfg.node_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            Matrix::from_vec(n, cfg.node_dim, data)?
        }
    };

    let graph = build_graph(n, &edges)?;
    let masks = split_labels(&labeled_ids, n, cfg.seed)?;
    let ds = Dataset {
        name: cfg.name.clone(),
        graph,
        node_feats,
        edge_feats,
        labels,
        masks,
        num_classes: c,
        seed: Some(cfg.seed),
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            name: "small".into(),
            num_nodes: 120,
            num_edges: 150,
            num_labeled: 40,
            num_classes: 3,
            signal: SignalMode::Mean,
            node_features: NodeFeatureMode::Noise,
            node_dim: 4,
            label_noise: 0.05,
            amount_sd: 0.35,
            seed,
        }
    }

    fn connected(ds: &Dataset) -> bool {
        let n = ds.num_nodes();
        let inc = ds.graph.incidence();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &p in &inc[v] {
                let (i, j) = ds.graph.edges()[p];
                let w = if i == v { j } else { i };
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.iter().all(|s| *s)
    }

    #[test]
    fn shape_and_structure() {
        let ds = generate_synthetic_trade(&small(3)).unwrap();
        assert_eq!(ds.num_nodes(), 120);
        assert_eq!(ds.graph.num_edges(), 150);
        assert_eq!(ds.labeled_ids().len(), 40);
        assert!(connected(&ds));
        for &(i, j) in ds.graph.edges() {
            assert!(i != j);
            assert!(ds.labels[i].is_none() || ds.labels[j].is_none());
        }
    }

    #[test]
    fn exact_noise_count_against_oracle() {
        let ds = generate_synthetic_trade(&small(5)).unwrap();
        let oracle = oracle_labels(&ds, SignalMode::Mean);
        let wrong = ds.labels.iter().zip(&oracle).filter(|(a, b)| a != b).count();
        assert_eq!(wrong, 2);
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            generate_synthetic_trade(&small(8)).unwrap(),
            generate_synthetic_trade(&small(8)).unwrap()
        );
    }

    #[test]
    fn infeasible_parameters() {
        let mut cfg = small(0);
        cfg.num_edges = 50;
        assert!(matches!(generate_synthetic_trade(&cfg), Err(EgatError::Infeasible(_))));
        let mut cfg = small(0);
        cfg.num_classes = 4;
        assert!(generate_synthetic_trade(&cfg).is_err());
        let mut cfg = small(0);
        cfg.num_labeled = 120;
        assert!(generate_synthetic_trade(&cfg).is_err());
    }
}

#![allow(dead_code)]

use egat::autodiff::Activation;
use egat::graph::{add_virtual_self_loops, build_graph, Graph, Structures};
use egat::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random simple graph with features, before self-loop augmentation.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize, edge_prob: f64) -> Graph {
    let n = rng.gen_range(1..=max_nodes);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(edge_prob) {
                edges.push(if rng.gen_bool(0.5) { (i, j) } else { (j, i) });
            }
        }
    }
    // Shuffle the edge order so nothing depends on enumeration order.
    for k in (1..edges.len()).rev() {
        edges.swap(k, rng.gen_range(0..=k));
    }
    build_graph(n, &edges).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Augments with virtual self-loops and builds the structures.
pub fn prepare(g: &Graph, e: &Matrix) -> (Graph, Matrix, Structures) {
    let (g, e) = add_virtual_self_loops(g, e).unwrap();
    let s = Structures::new(&g).unwrap();
    (g, e, s)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.iter().map(|x| x / z).collect()
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Output of the dense reference layer. Attention weights are indexed
/// `alpha[i][j]` and `beta[p][q]`, `None` for non-neighbors.
pub struct DenseLayer {
    pub h: Matrix,
    pub h_m: Matrix,
    pub e: Matrix,
    pub alpha: Vec<Vec<Option<f64>>>,
    pub beta: Vec<Vec<Option<f64>>>,
}

/// Direct evaluation of the layer equations with dense neighbor scans over
/// an already augmented graph and already transformed features.
pub fn dense_layer(g: &Graph, h_t: &Matrix, e_t: &Matrix, a: &[f64], b: &[f64], slope: f64, sigma: Activation) -> DenseLayer {
    let n = g.num_nodes();
    let m = g.num_edges();
    let (fh, fe) = (h_t.cols(), e_t.cols());
    let mut e_of: Vec<Vec<Option<usize>>> = vec![vec![None; n]; n];
    for (p, &(i, j)) in g.edges().iter().enumerate() {
        e_of[i][j] = Some(p);
        e_of[j][i] = Some(p);
    }

    let mut alpha = vec![vec![None; n]; n];
    let mut h = Matrix::zeros(n, fh);
    let mut h_m = Matrix::zeros(n, fh + fe);
    for i in 0..n {
        let nbrs: Vec<usize> = (0..n).filter(|&j| e_of[i][j].is_some()).collect();
        let logits: Vec<f64> = nbrs
            .iter()
            .map(|&j| {
                let e_ij = e_t.row(e_of[i][j].unwrap());
                leaky(dot(a, &concat(&[h_t.row(i), h_t.row(j), e_ij])), slope)
            })
            .collect();
        let w = softmax(&logits);
        for (&j, &wj) in nbrs.iter().zip(&w) {
            alpha[i][j] = Some(wj);
            for c in 0..fh {
                let v = h.get(i, c) + wj * h_t.get(j, c);
                h.set(i, c, v);
                let v = h_m.get(i, c) + wj * h_t.get(j, c);
                h_m.set(i, c, v);
            }
            let e_ij = e_t.row(e_of[i][j].unwrap());
            for c in 0..fe {
                let v = h_m.get(i, fh + c) + wj * e_ij[c];
                h_m.set(i, fh + c, v);
            }
        }
    }

    let shared = |p: usize, q: usize| -> Option<usize> {
        let (a0, a1) = g.edges()[p];
        let (b0, b1) = g.edges()[q];
        [a0, a1].into_iter().find(|x| *x == b0 || *x == b1)
    };
    let mut beta = vec![vec![None; m]; m];
    let mut e = Matrix::zeros(m, fe);
    let zero = vec![0.0; fh];
    for p in 0..m {
        let nbrs: Vec<usize> = (0..m).filter(|&q| q == p || shared(p, q).is_some()).collect();
        let logits: Vec<f64> = nbrs
            .iter()
            .map(|&q| {
                let h_pq = if q == p { &zero[..] } else { h_t.row(shared(p, q).unwrap()) };
                leaky(dot(b, &concat(&[e_t.row(p), e_t.row(q), h_pq])), slope)
            })
            .collect();
        let w = softmax(&logits);
        for (&q, &wq) in nbrs.iter().zip(&w) {
            beta[p][q] = Some(wq);
            for c in 0..fe {
                let v = e.get(p, c) + wq * e_t.get(q, c);
                e.set(p, c, v);
            }
        }
    }
    DenseLayer {
        h: h.map(|x| sigma.apply(x)),
        h_m: h_m.map(|x| sigma.apply(x)),
        e: e.map(|x| sigma.apply(x)),
        alpha,
        beta,
    }
}

/// Flattens dense attention rows in `(row, col)` order of the present entries.
pub fn flatten(weights: &[Vec<Option<f64>>]) -> Vec<f64> {
    weights.iter().flat_map(|r| r.iter().flatten().copied()).collect()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

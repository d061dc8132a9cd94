//! Wall-time scaling of the edge attention block on star graphs.
//!
//! A star with hub degree `d` has `d + 1` edges at the hub once the
//! virtual self-loops are in place, so the line graph holds about `d^2`
//! slots while every other quantity grows linearly in `d`.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Tensor};
use crate::error::{EgatError, Result};
use crate::graph::{add_virtual_self_loops, build_graph, Structures};
use crate::layer::{edge_attention_tape, glorot, AttentionSettings};
use crate::matrix::Matrix;

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub node_dim: usize,
    pub edge_dim: usize,
    /// Minimum wall time spent per timing trial.
    pub min_trial: Duration,
    /// Trials per degree; the fastest is kept.
    pub trials: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            node_dim: 8,
            edge_dim: 8,
            min_trial: Duration::from_millis(40),
            trials: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchPoint {
    pub degree: usize,
    /// `sum_i d_i^2` over the self-loop-augmented star.
    pub sum_sq_degree: usize,
    pub line_slots: usize,
    pub seconds_per_call: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    /// Fitted exponent of time against hub degree.
    pub gamma_degree: f64,
    /// Fitted exponent of time against `sum_i d_i^2`.
    pub gamma_sum_sq: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Star graph with `degree` leaves and its self-loop-augmented structures.
pub fn star_structures(degree: usize) -> Result<Structures> {
    let edges: Vec<(usize, usize)> = (1..=degree).map(|i| (0, i)).collect();
    let g = build_graph(degree + 1, &edges)?;
    let (g, _) = add_virtual_self_loops(&g, &Matrix::zeros(degree, 0))?;
    Structures::new(&g)
}

fn time_point(degree: usize, opts: &BenchOptions, rng: &mut ChaCha8Rng) -> Result<BenchPoint> {
    let s = star_structures(degree)?;
    let (n, m) = (s.num_nodes(), s.num_edges());
    let h_t = glorot(n, opts.node_dim, rng);
    let e_t = glorot(m, opts.edge_dim, rng);
    let b = Tensor::frozen(glorot(2 * opts.edge_dim + opts.node_dim, 1, rng));
    let settings = AttentionSettings::default();
    let run = || -> Result<f64> {
        let mut tape = Tape::new();
        let h = tape.constant(h_t.clone());
        let e = tape.constant(e_t.clone());
        let bv = tape.param(&b);
        let h_slots = tape.spmm(&s.line.mapped, h)?;
        let (out, _) = edge_attention_tape(&mut tape, &s.line.adj, e, h_slots, bv, &settings, &mut None)?;
        Ok(tape.value(out).get(0, 0))
    };
    run()?;
    let mut best = f64::INFINITY;
    for _ in 0..opts.trials.max(1) {
        let start = Instant::now();
        let mut calls = 0u32;
        let mut sink = 0.0;
        while start.elapsed() < opts.min_trial || calls == 0 {
            sink += run()?;
            calls += 1;
        }
        std::hint::black_box(sink);
        best = best.min(start.elapsed().as_secs_f64() / f64::from(calls));
    }
    // With a self-loop on every node, the closed neighborhood size equals
    // the number of incident edges.
    let sum_sq_degree = s.node_segments().windows(2).map(|w| (w[1] - w[0]).pow(2)).sum();
    Ok(BenchPoint {
        degree,
        sum_sq_degree,
        line_slots: s.edge_slot_neighbors().len(),
        seconds_per_call: best,
    })
}

/// Times the edge attention block for every hub degree and fits the
/// scaling exponents.
pub fn edge_attention_scaling(degrees: &[usize], opts: &BenchOptions) -> Result<BenchReport> {
    if degrees.len() < 2 || degrees.contains(&0) {
        return Err(EgatError::InvalidConfig(
            "benchmark needs at least two positive degrees".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let points = degrees
        .iter()
        .map(|&d| time_point(d, opts, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = points.iter().map(|p| p.seconds_per_call).collect();
    let ds: Vec<f64> = points.iter().map(|p| p.degree as f64).collect();
    let sq: Vec<f64> = points.iter().map(|p| p.sum_sq_degree as f64).collect();
    Ok(BenchReport {
        gamma_degree: log_log_slope(&ds, &times),
        gamma_sum_sq: log_log_slope(&sq, &times),
        points,
    })
}

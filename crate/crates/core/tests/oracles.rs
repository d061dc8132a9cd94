//! Dense reference evaluations of the layer and model equations, compared
//! against the sparse implementation.

mod common;

use common::{dense_layer, flatten, max_abs, prepare, random_graph, random_matrix, seeded};
use egat::autodiff::{Activation, Tape, Tensor};
use egat::baseline::GatBaseline;
use egat::gradcheck::{finite_diff_check, GradCheckOptions};
use egat::graph::{build_graph, scatter_to_adjacency};
use egat::layer::{
    edge_attention_block, egat_layer_forward, layer_forward_tape, layer_transform, node_attention_block,
    AttentionSettings, LayerParams, LayerVars,
};
use egat::model::{forward, GraphInputs, Model, ModelConfig, NodeClassifier};
use egat::Matrix;

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn col(values: &[f64]) -> Matrix {
    Matrix::column(values)
}

fn triangle_params() -> LayerParams {
    LayerParams::from_values(
        m(&[&[1.0, 0.0], &[1.0, -1.0]]),
        m(&[&[1.0, 2.0]]),
        col(&[0.5, -0.5, 1.0, 0.5, -1.0, 0.5]),
        col(&[1.0, -0.5, 0.5, 1.0, -1.0, 0.5]),
    )
    .unwrap()
}

fn triangle_features() -> (Matrix, Matrix) {
    (m(&[&[1.0, 0.0], &[0.0, 2.0], &[-1.0, 1.0]]), col(&[1.0, -1.0, 2.0]))
}

#[test]
fn triangle_layer_matches_dense_oracle() {
    let g = build_graph(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
    let (h, e) = triangle_features();
    let (g, e, s) = prepare(&g, &e);
    let p = triangle_params();
    let settings = AttentionSettings::default();
    let out = egat_layer_forward(&h, &e, &s, &p, &settings).unwrap();

    let h_t = h.matmul(p.w_h.value()).unwrap();
    let e_t = e.matmul(p.w_e.value()).unwrap();
    let d = dense_layer(&g, &h_t, &e_t, p.a.value().as_slice(), p.b.value().as_slice(), 0.2, Activation::Elu);
    assert!(out.h.max_abs_diff(&d.h) < 1e-12);
    assert!(out.h_m.max_abs_diff(&d.h_m) < 1e-12);
    assert!(out.e.max_abs_diff(&d.e) < 1e-12);
    assert!(max_abs(&out.alpha, &flatten(&d.alpha)) < 1e-12);
    assert!(max_abs(&out.beta, &flatten(&d.beta)) < 1e-12);
    assert_eq!(out.h_m.cols(), 2 + 2);
}

#[test]
fn node_block_through_scattered_edges_matches_dense_oracle() {
    let g = build_graph(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
    let (h, e) = triangle_features();
    let (g, e, s) = prepare(&g, &e);
    let p = triangle_params();
    let (h_t, e_t) = layer_transform(&h, &e, &p).unwrap();
    let e_adj = scatter_to_adjacency(&s.m_e, &e_t).unwrap();
    let out = node_attention_block(&h_t, &e_adj, &s.a_h, p.a.value(), &AttentionSettings::default()).unwrap();
    let d = dense_layer(&g, &h_t, &e_t, p.a.value().as_slice(), p.b.value().as_slice(), 0.2, Activation::Elu);
    assert!(out.h.max_abs_diff(&d.h) < 1e-12);
    assert!(out.h_m.max_abs_diff(&d.h_m) < 1e-12);
    assert!(max_abs(&out.alpha, &flatten(&d.alpha)) < 1e-12);
}

#[test]
fn path_graph_edge_block_matches_dense_oracle() {
    let g = build_graph(3, &[(0, 1), (1, 2)]).unwrap();
    let h = m(&[&[1.0], &[2.0], &[-1.0]]);
    let e = m(&[&[1.0, 0.0], &[0.0, 3.0]]);
    let (g, e, s) = prepare(&g, &e);
    let p = LayerParams::from_values(
        m(&[&[1.0]]),
        m(&[&[1.0, 0.0], &[0.0, 1.0]]),
        col(&[1.0, 1.0, 1.0, 1.0]),
        col(&[1.0, -1.0, 0.0, 2.0, 1.0]),
    )
    .unwrap();
    let (h_t, e_t) = layer_transform(&h, &e, &p).unwrap();
    let h_adj = scatter_to_adjacency(&s.m_h, &h_t).unwrap();
    let out = edge_attention_block(&e_t, &h_adj, &s.a_e, p.b.value(), &AttentionSettings::default()).unwrap();
    let d = dense_layer(&g, &h_t, &e_t, p.a.value().as_slice(), p.b.value().as_slice(), 0.2, Activation::Elu);
    assert!(out.e.max_abs_diff(&d.e) < 1e-12);
    assert!(max_abs(&out.beta, &flatten(&d.beta)) < 1e-12);
}

#[test]
fn random_layers_match_dense_oracle() {
    let mut rng = seeded(17);
    for _ in 0..30 {
        let g = random_graph(&mut rng, 9, 0.4);
        let e = random_matrix(&mut rng, g.num_edges(), 3);
        let h = random_matrix(&mut rng, g.num_nodes(), 2);
        let (g, e, s) = prepare(&g, &e);
        let p = LayerParams::from_values(
            random_matrix(&mut rng, 2, 4),
            random_matrix(&mut rng, 3, 2),
            random_matrix(&mut rng, 10, 1),
            random_matrix(&mut rng, 8, 1),
        )
        .unwrap();
        let out = egat_layer_forward(&h, &e, &s, &p, &AttentionSettings::default()).unwrap();
        let (h_t, e_t) = layer_transform(&h, &e, &p).unwrap();
        let d = dense_layer(&g, &h_t, &e_t, p.a.value().as_slice(), p.b.value().as_slice(), 0.2, Activation::Elu);
        assert!(out.h.max_abs_diff(&d.h) < 1e-12);
        assert!(out.h_m.max_abs_diff(&d.h_m) < 1e-12);
        assert!(out.e.max_abs_diff(&d.e) < 1e-12);
        assert!(max_abs(&out.alpha, &flatten(&d.alpha)) < 1e-12);
        assert!(max_abs(&out.beta, &flatten(&d.beta)) < 1e-12);
    }
}

#[test]
fn transform_matches_dense_product() {
    let mut rng = seeded(3);
    let h = random_matrix(&mut rng, 3, 2);
    let w = random_matrix(&mut rng, 2, 4);
    let p = LayerParams::from_values(w.clone(), Matrix::identity(1), Matrix::zeros(9, 1), Matrix::zeros(6, 1)).unwrap();
    let (h_t, _) = layer_transform(&h, &col(&[0.0]), &p).unwrap();
    for i in 0..3 {
        for j in 0..4 {
            let expected: f64 = (0..2).map(|k| h.get(i, k) * w.get(k, j)).sum();
            assert!((h_t.get(i, j) - expected).abs() < 1e-15);
        }
    }
    assert!(layer_transform(&Matrix::zeros(3, 3), &col(&[0.0]), &p).is_err());
}

#[test]
fn single_head_single_layer_model_matches_dense_composition() {
    let g = build_graph(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
    let (h, e) = triangle_features();
    let inputs = GraphInputs::new(&g, h.clone(), &e).unwrap();
    let cfg = ModelConfig {
        layers: 1,
        heads: 1,
        node_hidden: 2,
        edge_hidden: 2,
        num_classes: 3,
        ..Default::default()
    };
    let mut model = Model::init(cfg, 2, 1).unwrap();
    let p = triangle_params();
    let w_c = m(&[&[1.0, 0.0, -1.0], &[0.0, 1.0, 1.0], &[2.0, -1.0, 0.0], &[0.0, 0.5, -0.5]]);
    let bias = m(&[&[0.1, -0.2, 0.3]]);
    model
        .load_values(vec![
            p.w_h.value().clone(),
            p.w_e.value().clone(),
            p.a.value().clone(),
            p.b.value().clone(),
            w_c.clone(),
            bias.clone(),
        ])
        .unwrap();
    let out = forward(&model, &inputs, None).unwrap();

    let h_t = h.matmul(p.w_h.value()).unwrap();
    let e_t = inputs.edge_feats.matmul(p.w_e.value()).unwrap();
    let d = dense_layer(&inputs.graph, &h_t, &e_t, p.a.value().as_slice(), p.b.value().as_slice(), 0.2, Activation::Elu);
    let mut expected = d.h_m.matmul(&w_c).unwrap();
    for r in 0..3 {
        for c in 0..3 {
            expected.set(r, c, expected.get(r, c) + bias.get(0, c));
        }
    }
    assert!(out.logits.max_abs_diff(&expected) < 1e-12);
    for r in 0..3 {
        assert!((out.probabilities.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn eval_forward_is_pure() {
    let mut rng = seeded(5);
    let g = random_graph(&mut rng, 12, 0.3);
    let e = random_matrix(&mut rng, g.num_edges(), 2);
    let inputs = GraphInputs::new(&g, random_matrix(&mut rng, g.num_nodes(), 3), &e).unwrap();
    let model = Model::init(ModelConfig { heads: 3, ..Default::default() }, 3, 2).unwrap();
    let a = forward(&model, &inputs, None).unwrap();
    let b = forward(&model, &inputs, None).unwrap();
    let bits = |x: &Matrix| x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.logits), bits(&b.logits));
}

#[test]
fn zeroed_classifier_slice_isolates_a_head() {
    let mut rng = seeded(9);
    let g = random_graph(&mut rng, 10, 0.35);
    let e = random_matrix(&mut rng, g.num_edges(), 2);
    let inputs = GraphInputs::new(&g, random_matrix(&mut rng, g.num_nodes(), 3), &e).unwrap();
    let cfg = ModelConfig {
        heads: 2,
        layers: 2,
        node_hidden: 3,
        edge_hidden: 2,
        num_classes: 3,
        ..Default::default()
    };
    let mut model = Model::init(cfg, 3, 2).unwrap();
    let per_head = 2 * (3 + 2);
    for r in per_head..2 * per_head {
        for c in 0..3 {
            model.classifier_weights_mut().value_mut().set(r, c, 0.0);
        }
    }
    let before = forward(&model, &inputs, None).unwrap().logits;
    for l in 0..2 {
        let layer = model.layer_mut(1, l);
        *layer.w_h.value_mut() = layer.w_h.value().map(|x| 3.0 * x + 0.7);
        *layer.a.value_mut() = layer.a.value().map(|x| -x);
    }
    let after = forward(&model, &inputs, None).unwrap().logits;
    assert!(before.max_abs_diff(&after) < 1e-15);
    *model.layer_mut(0, 0).w_h.value_mut() = model.layer(0, 0).w_h.value().map(|x| x + 0.3);
    assert!(forward(&model, &inputs, None).unwrap().logits.max_abs_diff(&before) > 1e-6);
}

#[test]
fn node_output_ignores_edges_when_attention_ignores_them() {
    let mut rng = seeded(21);
    let g = random_graph(&mut rng, 8, 0.5);
    let h = random_matrix(&mut rng, g.num_nodes(), 2);
    let e1 = random_matrix(&mut rng, g.num_edges(), 2);
    let e2 = random_matrix(&mut rng, g.num_edges(), 2);
    let mut a = random_matrix(&mut rng, 2 * 3 + 2, 1);
    for k in 6..8 {
        a.set(k, 0, 0.0);
    }
    let p = LayerParams::from_values(
        random_matrix(&mut rng, 2, 3),
        random_matrix(&mut rng, 2, 2),
        a,
        random_matrix(&mut rng, 2 * 2 + 3, 1),
    )
    .unwrap();
    let (_, e1, s) = prepare(&g, &e1);
    let (_, e2, _) = prepare(&g, &e2);
    let o1 = egat_layer_forward(&h, &e1, &s, &p, &AttentionSettings::default()).unwrap();
    let o2 = egat_layer_forward(&h, &e2, &s, &p, &AttentionSettings::default()).unwrap();
    assert!(max_abs(&o1.alpha, &o2.alpha) < 1e-15);
    assert!(o1.h.max_abs_diff(&o2.h) < 1e-15);
    if g.num_edges() > 0 {
        assert!(o1.h_m.max_abs_diff(&o2.h_m) > 1e-9);
    }
}

#[test]
fn identical_nodes_are_separated_only_through_edges() {
    // The node-only baseline cannot tell identical nodes apart; the layer's
    // attention and edge-integrated output can.
    let g = build_graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]).unwrap();
    let h = Matrix::filled(5, 2, 1.0);
    let e = col(&[0.5, -1.0, 2.0, 0.1, -0.7]);
    let (_, e_aug, s) = prepare(&g, &e);
    let mut rng = seeded(2);
    let p = LayerParams::from_values(
        random_matrix(&mut rng, 2, 3),
        random_matrix(&mut rng, 1, 2),
        random_matrix(&mut rng, 8, 1),
        random_matrix(&mut rng, 7, 1),
    )
    .unwrap();
    let out = egat_layer_forward(&h, &e_aug, &s, &p, &AttentionSettings::default()).unwrap();
    let segs = s.node_segments();
    let spread = segs
        .windows(2)
        .map(|w| {
            let seg = &out.alpha[w[0]..w[1]];
            seg.iter().copied().fold(f64::MIN, f64::max) - seg.iter().copied().fold(f64::MAX, f64::min)
        })
        .fold(0.0, f64::max);
    assert!(spread > 0.0);
    let rows_differ = (1..5).any(|r| out.h_m.row(r).iter().zip(out.h_m.row(0)).any(|(a, b)| (a - b).abs() > 1e-9));
    assert!(rows_differ);
    // Plain aggregation of identical node features stays identical.
    for r in 1..5 {
        assert!(out.h.row(r).iter().zip(out.h.row(0)).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    let inputs = GraphInputs::new(&g, h, &e).unwrap();
    let base = GatBaseline::init(ModelConfig { heads: 2, ..Default::default() }, 2).unwrap();
    let logits = forward(&base, &inputs, None).unwrap().logits;
    for r in 1..5 {
        assert!(logits.row(r).iter().zip(logits.row(0)).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn layer_gradient_matches_finite_differences() {
    let mut rng = seeded(33);
    for _ in 0..3 {
        let g = random_graph(&mut rng, 6, 0.5);
        let e = random_matrix(&mut rng, g.num_edges(), 2);
        let h = random_matrix(&mut rng, g.num_nodes(), 3);
        let (_, e, s) = prepare(&g, &e);
        let params = vec![
            Tensor::new(random_matrix(&mut rng, 3, 2)),
            Tensor::new(random_matrix(&mut rng, 2, 2)),
            Tensor::new(random_matrix(&mut rng, 6, 1)),
            Tensor::new(random_matrix(&mut rng, 6, 1)),
        ];
        let weights_h = random_matrix(&mut rng, s.num_nodes(), 4);
        let weights_e = random_matrix(&mut rng, s.num_edges(), 2);
        let report = finite_diff_check(
            &params,
            |tape: &mut Tape<'_>, vars| {
                let hv = tape.constant(h.clone());
                let ev = tape.constant(e.clone());
                let out = layer_forward_tape(tape, &s, hv, ev, LayerVars::from_slice(vars), &AttentionSettings::default(), None)?;
                let wh = tape.constant(weights_h.clone());
                let we = tape.constant(weights_e.clone());
                let x = tape.mul(out.h_m, wh)?;
                let y = tape.mul(out.e, we)?;
                let (x, y) = (tape.sum(x), tape.sum(y));
                tape.add(x, y)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}

#[test]
fn model_parameters_follow_the_manifest() {
    let model = Model::init(ModelConfig::default(), 4, 2).unwrap();
    let names: Vec<String> = model.manifest().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names[0], "head0.layer0.w_h");
    assert_eq!(names.last().unwrap(), "classifier.bias");
    assert_eq!(model.parameters().len(), names.len());
}

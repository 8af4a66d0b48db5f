mod common;

use common::{numeric_grad, numeric_param_grad, random_graph, random_tensor, rel_err, rng};
use fgcl::contrastive::{classification_loss, combined_loss, info_nce};
use fgcl::dp::{make_views, PrivacyBudget};
use fgcl::federated::step_gradients;
use fgcl::gnn::{normalize, normalize_weights, EncoderConfig, EncoderKind, GraphModel};
use fgcl::nn::{Tape, Tensor, Var};
use fgcl::Result;
use proptest::prelude::*;

const STEP: f64 = 1e-5;

/// Builds `sum(op(inputs) * weights)` and compares the tape gradient of
/// every input with central differences.
fn check(name: &str, inputs: &[Tensor], tol: f64, op: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = op(&mut tape, &vars).unwrap();
        tape.value(out).shape()
    };
    let weights = random_tensor(out_shape.0, out_shape.1, &mut rng(99));
    let loss = |xs: &[Tensor]| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = op(&mut tape, &vars).unwrap();
        let w = tape.leaf(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        let l = tape.sum(prod).unwrap();
        (tape, vars, l)
    };
    let (tape, vars, l) = loss(inputs);
    let grads = tape.backward(l).unwrap();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, *v);
        let numeric = numeric_grad(&inputs[i], STEP, |probe| {
            let mut xs = inputs.to_vec();
            xs[i] = probe.clone();
            let (t, _, l) = loss(&xs);
            t.value(l).item().unwrap()
        });
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let e = rel_err(*a, *n, 1e-3);
            assert!(e < tol, "{name}: input {i} analytic {a} numeric {n} rel {e}");
        }
    }
}

/// Random entries kept away from zero, where ReLU has its kink.
fn off_zero(r: usize, c: usize, seed: u64) -> Tensor {
    random_tensor(r, c, &mut rng(seed)).map(|v| if v.abs() < 0.1 { v + 0.3 } else { v })
}

#[test]
fn primitive_gradients() {
    let t = |r, c, s| random_tensor(r, c, &mut rng(s));
    check("matmul", &[t(3, 4, 1), t(4, 2, 2)], 1e-6, |tp, v| tp.matmul(v[0], v[1]));
    check("add", &[t(3, 2, 3), t(3, 2, 4)], 1e-6, |tp, v| tp.add(v[0], v[1]));
    check("sub", &[t(3, 2, 5), t(3, 2, 6)], 1e-6, |tp, v| tp.sub(v[0], v[1]));
    check("mul", &[t(3, 2, 7), t(3, 2, 8)], 1e-6, |tp, v| tp.mul(v[0], v[1]));
    check("add_row", &[t(3, 2, 9), t(1, 2, 10)], 1e-6, |tp, v| tp.add_row(v[0], v[1]));
    check("scalar_scale", &[t(2, 3, 11)], 1e-6, |tp, v| tp.scalar_scale(v[0], 1.7));
    check("relu", &[off_zero(3, 3, 12)], 1e-6, |tp, v| tp.relu(v[0]));
    check("sigmoid", &[t(3, 3, 13)], 1e-6, |tp, v| tp.sigmoid(v[0]));
    check("mean_rows", &[t(4, 3, 14)], 1e-6, |tp, v| tp.mean_rows(v[0]));
    check("concat_rows", &[t(1, 3, 15), t(2, 3, 16)], 1e-6, |tp, v| tp.concat_rows(&[v[0], v[1]]));
    check("transpose", &[t(2, 3, 17)], 1e-6, |tp, v| tp.transpose(v[0]));
    check("sum", &[t(3, 2, 18)], 1e-6, |tp, v| tp.sum(v[0]));
    check("cosine_similarity", &[t(1, 5, 19), t(1, 5, 20)], 1e-6, |tp, v| {
        tp.cosine_similarity(v[0], v[1])
    });
    check("logsumexp_row", &[t(1, 6, 21).map(|v| 3.0 * v)], 1e-6, |tp, v| tp.logsumexp_row(v[0]));
    check("bce_with_logits", &[t(1, 4, 22).map(|v| 4.0 * v)], 1e-6, |tp, v| {
        tp.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 0.0], &[true, true, false, true])
    });
}

#[test]
fn composite_loss_pieces() {
    let t = |r, c, s| random_tensor(r, c, &mut rng(s));
    check("info_nce", &[t(1, 4, 30), t(1, 4, 31), t(1, 4, 32), t(1, 4, 33)], 1e-6, |tp, v| {
        info_nce(tp, v[0], v[1], &v[2..], 0.7)
    });
    check("classification_loss", &[t(1, 3, 34), t(1, 3, 35)], 1e-6, |tp, v| {
        Ok(classification_loss(tp, v[0], v[1], &[1, 0, 1], &[true, true, false])?.unwrap())
    });
    check("combined_loss", &[t(1, 1, 36), t(1, 1, 37)], 1e-6, |tp, v| {
        let lc = tp.sum(v[0])?;
        let le = tp.sum(v[1])?;
        combined_loss(tp, lc, Some(le), 0.3)
    });
}

fn full_loss_check(kind: EncoderKind, gamma: f64, seed: u64) {
    let mut r = rng(seed);
    let g = random_graph(0, 5, 3, 2, &mut r);
    let model = GraphModel {
        encoder: EncoderConfig {
            kind,
            layers: 2,
            hidden: 8,
            tag_hops: 2,
        },
        feature_dim: 3,
        task_count: 2,
    };
    let params = model.init_params(&mut r).unwrap();
    let budget = PrivacyBudget::new(1.0).unwrap();
    let (v0, v1) = make_views(&g, &budget, &budget, &mut r);
    let (w0, w1) = (normalize(&v0), normalize(&v1));
    let negatives: Vec<Tensor> = (0..2)
        .map(|i| {
            let other = random_graph(10 + i, 4, 3, 2, &mut r);
            model
                .embed(&params, &normalize_weights(&other.adjacency()), other.features())
                .unwrap()
        })
        .collect();
    let (grads, ..) = step_gradients(&model, &params, &g, &w0, &w1, &negatives, gamma, 1.0).unwrap();
    let numeric = numeric_param_grad(&params, STEP, |p| {
        step_gradients(&model, p, &g, &w0, &w1, &negatives, gamma, 1.0).unwrap().3
    });
    for (i, (a, n)) in grads.flatten().iter().zip(&numeric).enumerate() {
        let e = rel_err(*a, *n, 1e-6);
        assert!(e < 1e-4, "{kind:?} gamma {gamma}: parameter {i} analytic {a} numeric {n} rel {e}");
    }
}

#[test]
fn full_objective_gcn() {
    for seed in 0..3 {
        full_loss_check(EncoderKind::Gcn, 0.1, seed);
        full_loss_check(EncoderKind::Gcn, 1.0, seed);
    }
}

#[test]
fn full_objective_tag() {
    full_loss_check(EncoderKind::Tag, 0.1, 7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_gradient_is_adjoint(seed in 0u64..10_000, n in 1usize..5, m in 1usize..5, k in 1usize..5) {
        let a = random_tensor(n, m, &mut rng(seed));
        let b = random_tensor(m, k, &mut rng(seed + 1));
        let mut tape = Tape::new();
        let va = tape.leaf(a.clone());
        let vb = tape.leaf(b.clone());
        let c = tape.matmul(va, vb).unwrap();
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        let expected_a = Tensor::filled(n, k, 1.0).matmul(&b.transpose()).unwrap();
        let expected_b = a.transpose().matmul(&Tensor::filled(n, k, 1.0)).unwrap();
        for (x, y) in g.wrt(&tape, va).data().iter().zip(expected_a.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in g.wrt(&tape, vb).data().iter().zip(expected_b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

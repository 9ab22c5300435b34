use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{clone_store, fd_check};
use crate::params::ParamStore;

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let i2 = g.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
    let a = g.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let out = g.matmul(i2, a).unwrap();
    assert_eq!(g.data(out), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_hand_arithmetic() {
    let mut g = Graph::new();
    let a = g.constant(&[1, 2], vec![1.0, 2.0]);
    let b = g.constant(&[2, 1], vec![3.0, 4.0]);
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.data(out), &[11.0]);
}

#[test]
fn matmul_against_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // naive triple-loop oracle
    let mut expect = vec![0.0; 15];
    for i in 0..3 {
        for j in 0..5 {
            for k in 0..4 {
                expect[i * 5 + j] += a[i * 4 + k] * b[k * 5 + j];
            }
        }
    }
    let mut g = Graph::new();
    let ta = g.constant(&[3, 4], a);
    let tb = g.constant(&[4, 5], b);
    let out = g.matmul(ta, tb).unwrap();
    for (got, want) in g.data(out).iter().zip(&expect) {
        assert!((got - want).abs() < 1e-6);
    }
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.zeros(&[2, 3]);
    let b = g.zeros(&[4, 5]);
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn softmax_symmetry_and_stability() {
    let mut g = Graph::new();
    let a = g.constant(&[3], vec![0.0, 0.0, 0.0]);
    let s = g.softmax(a);
    for v in g.data(s) {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
    let b = g.constant(&[2], vec![1000.0, 0.0]);
    let s = g.softmax(b);
    assert!(g.data(s)[0] > 1.0 - 1e-12 && g.data(s)[1] < 1e-12);
}

#[test]
fn softmax_direct_oracle() {
    // exp/sum computed directly
    let x = [1.0f64, 2.0, 3.0];
    let z: f64 = x.iter().map(|v| v.exp()).sum();
    let expect: Vec<f64> = x.iter().map(|v| v.exp() / z).collect();
    let mut g = Graph::new();
    let a = g.constant(&[3], x.to_vec());
    let s = g.softmax(a);
    for (got, want) in g.data(s).iter().zip(&expect) {
        assert!((got - want).abs() < 1e-12);
    }
    let sum: f64 = g.data(s).iter().sum();
    assert!((sum - 1.0).abs() < 1e-6);
}

#[test]
fn layernorm_constant_input_is_bias() {
    let mut g = Graph::new();
    let x = g.constant(&[1, 3], vec![5.0, 5.0, 5.0]);
    let gain = g.constant(&[3], vec![1.0, 1.0, 1.0]);
    let bias = g.constant(&[3], vec![0.5, 0.5, 0.5]);
    let y = g.layernorm(x, gain, bias).unwrap();
    // degenerate variance: pre-affine output is 0, so result is the bias
    for v in g.data(y) {
        assert!((v - 0.5).abs() < 1e-9);
    }
}

#[test]
fn layernorm_hand_stats() {
    let mut g = Graph::new();
    let x = g.constant(&[1, 3], vec![1.0, 2.0, 3.0]);
    let gain = g.constant(&[3], vec![1.0; 3]);
    let bias = g.constant(&[3], vec![0.0; 3]);
    let y = g.layernorm(x, gain, bias).unwrap();
    let d = g.data(y);
    let mean: f64 = d.iter().sum::<f64>() / 3.0;
    let var: f64 = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
    assert!(mean.abs() < 1e-5);
    assert!((var - 1.0).abs() < 1e-4); // eps inside the root shifts it slightly
}

#[test]
fn layernorm_zero_gain_outputs_bias() {
    let mut g = Graph::new();
    let x = g.constant(&[2, 2], vec![1.0, -3.0, 2.0, 7.0]);
    let gain = g.constant(&[2], vec![0.0, 0.0]);
    let bias = g.constant(&[2], vec![1.5, -2.5]);
    let y = g.layernorm(x, gain, bias).unwrap();
    assert_eq!(g.data(y), &[1.5, -2.5, 1.5, -2.5]);
}

#[test]
fn gelu_values() {
    let mut g = Graph::new();
    let x = g.constant(&[3], vec![0.0, 10.0, 1.0]);
    let y = g.gelu(x);
    let d = g.data(y);
    assert_eq!(d[0], 0.0);
    assert!((d[1] - 10.0).abs() < 1e-9);
    // 1 * Phi(1), normal CDF oracle
    assert!((d[2] - 0.8413447460685429).abs() < 1e-6);
}

#[test]
fn backward_quadratic() {
    let mut store = ParamStore::new();
    store.insert("w", &[2], vec![1.0, 2.0]);
    let mut g = Graph::new();
    let w = g.param(&store, "w");
    let sq = g.mul(w, w).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    store.zero_grads();
    g.write_grads(&mut store).unwrap();
    assert_eq!(store.get("w").unwrap().grad, vec![2.0, 4.0]);
}

#[test]
fn backward_detached_branch_contributes_zero() {
    let mut store = ParamStore::new();
    store.insert("w", &[1], vec![3.0]);
    let mut g = Graph::new();
    let w = g.param(&store, "w");
    let d = g.detach(w);
    let prod = g.mul(w, d).unwrap(); // = w * const(3)
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    store.zero_grads();
    g.write_grads(&mut store).unwrap();
    assert_eq!(store.get("w").unwrap().grad, vec![3.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.zeros(&[2]);
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn unreachable_param_gets_zero_grad() {
    let mut store = ParamStore::new();
    store.insert("used", &[1], vec![2.0]);
    store.insert("unused", &[1], vec![5.0]);
    let mut g = Graph::new();
    let w = g.param(&store, "used");
    let loss = g.sum(w);
    g.backward(loss).unwrap();
    store.zero_grads();
    g.write_grads(&mut store).unwrap();
    assert_eq!(store.get("unused").unwrap().grad, vec![0.0]);
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    let mut store = ParamStore::new();
    store.insert("logits", &[3], vec![0.3, -1.2, 0.7]);
    let run = |s: &ParamStore| -> (f64, Option<Graph>) {
        let mut g = Graph::new();
        let l = g.param(s, "logits");
        let sm = g.softmax(l);
        let target = 1usize;
        let p = g.gather(sm, &[target]).unwrap();
        let lp = g.log(p);
        let loss = g.neg(lp);
        let loss = g.sum(loss);
        (g.scalar(loss), Some(g))
    };
    let (_, graph) = run(&store);
    let mut graph = graph.unwrap();
    let loss_node = Tensor(graph.nodes.len() - 1);
    graph.backward(loss_node).unwrap();
    store.zero_grads();
    graph.write_grads(&mut store).unwrap();
    let analytic = clone_and_copy_grads(&store);
    let report = fd_check(&store, |s| run(s).0, &analytic);
    assert!(
        report.max_rel_error < 1e-4,
        "max rel err {}",
        report.max_rel_error
    );
}

#[test]
fn fd_check_linear_and_product() {
    let mut store = ParamStore::new();
    store.insert("a", &[1], vec![2.0]);
    store.insert("b", &[1], vec![-3.0]);
    // linear: f = 3a
    let lin = |s: &ParamStore| 3.0 * s.get("a").unwrap().data[0];
    let mut analytic = clone_store(&store);
    analytic.get_mut("a").unwrap().grad = vec![3.0];
    analytic.get_mut("b").unwrap().grad = vec![0.0];
    let r = fd_check(&store, lin, &analytic);
    assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    // product: f = a*b
    let prod = |s: &ParamStore| s.get("a").unwrap().data[0] * s.get("b").unwrap().data[0];
    let mut analytic = clone_store(&store);
    analytic.get_mut("a").unwrap().grad = vec![-3.0];
    analytic.get_mut("b").unwrap().grad = vec![2.0];
    let r = fd_check(&store, prod, &analytic);
    assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
}

#[test]
fn random_op_composition_passes_fd_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    store.insert(
        "w1",
        &[3, 4],
        (0..12).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    );
    store.insert(
        "w2",
        &[4, 2],
        (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    );
    store.insert("gain", &[4], vec![1.0, 0.9, 1.1, 1.0]);
    store.insert("bias", &[4], vec![0.0, 0.1, -0.1, 0.0]);
    let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let run = |s: &ParamStore, xdata: &[f64]| -> (f64, Graph, Tensor) {
        let mut g = Graph::new();
        let w1 = g.param(s, "w1");
        let w2 = g.param(s, "w2");
        let gain = g.param(s, "gain");
        let bias = g.param(s, "bias");
        let x = g.constant(&[2, 3], xdata.to_vec());
        let h = g.matmul(x, w1).unwrap();
        let h = g.layernorm(h, gain, bias).unwrap();
        let h = g.gelu(h);
        let h = g.matmul(h, w2).unwrap();
        let h = g.softmax(h);
        let h = g.log(h);
        let loss = g.sum(h);
        (g.scalar(loss), g, loss)
    };
    let (_, mut graph, loss) = run(&store, &x);
    graph.backward(loss).unwrap();
    store.zero_grads();
    graph.write_grads(&mut store).unwrap();
    let analytic = clone_and_copy_grads(&store);
    let r = fd_check(&store, |s| run(s, &x).0, &analytic);
    assert!(r.max_rel_error < 1e-3, "max rel err {}", r.max_rel_error);
}

#[test]
fn deterministic_forward_same_seed() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        store.insert(
            "w",
            &[4, 4],
            (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let mut g = Graph::new();
        let w = g.param(&store, "w");
        let s = g.softmax(w);
        g.data(s).to_vec()
    };
    assert_eq!(build(), build());
}

fn clone_and_copy_grads(store: &ParamStore) -> ParamStore {
    let mut out = clone_store(store);
    for (name, p) in store.iter() {
        out.get_mut(name).unwrap().grad = p.grad.clone();
    }
    out
}

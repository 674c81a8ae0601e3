use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fdcheck::max_rel_err_vec;
use super::params::{ParamGroup, ParamSet};
use super::tape::{Tape, TensorId};
use super::AdamState;

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(1e-10..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

/// FD-check the gradient of `sum(build(x) ⊙ w)` with respect to `x`, where
/// `w` is a fixed random weighting that breaks symmetry.
fn fd_case(
    seed: u64,
    rows: usize,
    cols: usize,
    positive: bool,
    build: impl Fn(&mut Tape, TensorId) -> TensorId,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = randn(&mut rng, rows * cols);
    if positive {
        for v in &mut x {
            *v = v.abs() + 0.5;
        }
    }
    // dry run for the output shape
    let (or, oc) = {
        let mut t = Tape::new();
        let xid = t.leaf(x.clone(), rows, cols, false);
        let y = build(&mut t, xid);
        t.shape(y)
    };
    let w = randn(&mut rng, or * oc);

    let run = |xs: &[f64], grad: bool| -> (f64, Option<Vec<f64>>) {
        let mut t = Tape::new();
        let xid = t.leaf(xs.to_vec(), rows, cols, grad);
        let y = build(&mut t, xid);
        let wt = t.constant(w.clone(), or, oc);
        let prod = t.mul(y, wt).unwrap();
        let s = t.sum_all(prod);
        if grad {
            t.backward(s).unwrap();
            (t.data(s)[0], Some(t.grad(xid).unwrap().to_vec()))
        } else {
            (t.data(s)[0], None)
        }
    };
    let (_, analytic) = run(&x, true);
    max_rel_err_vec(&analytic.unwrap(), &mut x, |xs| run(xs, false).0, 1e-5)
}

const FD_TOL: f64 = 1e-4;
const SEEDS: std::ops::Range<u64> = 40..50;

#[test]
fn fd_elementwise_and_structural() {
    for seed in SEEDS {
        assert!(fd_case(seed, 3, 4, false, |t, x| t.relu(x)) < FD_TOL, "relu");
        assert!(fd_case(seed, 3, 4, false, |t, x| t.leaky_relu(x, 0.1)) < FD_TOL, "leaky");
        assert!(fd_case(seed, 3, 4, false, |t, x| t.sigmoid(x)) < FD_TOL, "sigmoid");
        assert!(fd_case(seed, 3, 4, false, |t, x| t.tanh(x)) < FD_TOL, "tanh");
        assert!(fd_case(seed, 3, 4, false, |t, x| t.exp(x)) < FD_TOL, "exp");
        assert!(fd_case(seed, 3, 4, true, |t, x| t.log(x)) < FD_TOL, "log");
        assert!(fd_case(seed, 3, 4, false, |t, x| t.scale(x, -1.7)) < FD_TOL, "scale");
        assert!(fd_case(seed, 5, 3, false, |t, x| t.mean_rows(x)) < FD_TOL, "mean_rows");
        assert!(fd_case(seed, 5, 3, false, |t, x| t.max_rows(x)) < FD_TOL, "max_rows");
        assert!(fd_case(seed, 1, 6, false, |t, x| t.mean_all(x)) < FD_TOL, "mean_all");
        assert!(
            fd_case(seed, 4, 3, false, |t, x| t.l2_normalize_rows(x)) < FD_TOL,
            "l2_normalize_rows"
        );
        assert!(
            fd_case(seed, 4, 5, false, |t, x| t.log_softmax_rows(x)) < FD_TOL,
            "log_softmax"
        );
        assert!(
            fd_case(seed, 4, 6, false, |t, x| t.slice_cols(x, 1, 4).unwrap()) < FD_TOL,
            "slice_cols"
        );
        assert!(
            fd_case(seed, 6, 3, false, |t, x| t.slice_rows(x, 2, 5).unwrap()) < FD_TOL,
            "slice_rows"
        );
        assert!(
            fd_case(seed, 4, 3, false, |t, x| t.reshape(x, 3, 4).unwrap()) < FD_TOL,
            "reshape"
        );
        assert!(
            fd_case(seed, 4, 3, false, |t, x| {
                let idx = Rc::new(vec![0usize, 2, 2, 3, 1]);
                t.gather_rows(x, idx).unwrap()
            }) < FD_TOL,
            "gather_rows"
        );
        assert!(
            fd_case(seed, 3, 4, false, |t, x| {
                let y = t.slice_cols(x, 0, 2).unwrap();
                let z = t.slice_cols(x, 2, 4).unwrap();
                t.concat_cols(&[y, z, y]).unwrap()
            }) < FD_TOL,
            "concat_cols"
        );
        assert!(
            fd_case(seed, 4, 3, false, |t, x| {
                let a = t.slice_rows(x, 0, 2).unwrap();
                let b = t.slice_rows(x, 2, 4).unwrap();
                t.stack_rows(&[b, a]).unwrap()
            }) < FD_TOL,
            "stack_rows"
        );
    }
}

#[test]
fn fd_binary_ops() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ee);
        let other = randn(&mut rng, 12);
        let other2 = randn(&mut rng, 12);
        for (name, f) in [
            ("add", 0usize),
            ("sub", 1),
            ("mul", 2),
        ] {
            // check each argument position
            for pos in 0..2 {
                let o = if pos == 0 { other.clone() } else { other2.clone() };
                let err = fd_case(seed, 3, 4, false, |t, x| {
                    let c = t.constant(o.clone(), 3, 4);
                    let (a, b) = if pos == 0 { (x, c) } else { (c, x) };
                    match f {
                        0 => t.add(a, b).unwrap(),
                        1 => t.sub(a, b).unwrap(),
                        _ => t.mul(a, b).unwrap(),
                    }
                });
                assert!(err < FD_TOL, "{name} pos {pos}: {err}");
            }
        }
        // matmul, both positions
        let m = randn(&mut rng, 4 * 5);
        assert!(
            fd_case(seed, 3, 4, false, |t, x| {
                let c = t.constant(m.clone(), 4, 5);
                t.matmul(x, c).unwrap()
            }) < FD_TOL,
            "matmul lhs"
        );
        let l = randn(&mut rng, 3 * 4);
        assert!(
            fd_case(seed, 4, 5, false, |t, x| {
                let c = t.constant(l.clone(), 3, 4);
                t.matmul(c, x).unwrap()
            }) < FD_TOL,
            "matmul rhs"
        );
        // broadcasts
        let row = randn(&mut rng, 4);
        assert!(
            fd_case(seed, 3, 4, false, |t, x| {
                let r = t.constant(row.clone(), 1, 4);
                t.add_row_bcast(x, r).unwrap()
            }) < FD_TOL,
            "add_row_bcast lhs"
        );
        let big = randn(&mut rng, 12);
        assert!(
            fd_case(seed, 1, 4, false, |t, x| {
                let b = t.constant(big.clone(), 3, 4);
                t.add_row_bcast(b, x).unwrap()
            }) < FD_TOL,
            "add_row_bcast rhs"
        );
        assert!(
            fd_case(seed, 1, 1, false, |t, x| {
                let b = t.constant(big.clone(), 3, 4);
                t.add_scalar_bcast(b, x).unwrap()
            }) < FD_TOL,
            "add_scalar_bcast"
        );
    }
}

#[test]
fn fd_fused_ops() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xface);
        let lists = Rc::new(vec![vec![0usize, 1, 2], vec![1], vec![0, 3], vec![3, 2]]);
        let l2 = lists.clone();
        assert!(
            fd_case(seed, 4, 3, false, move |t, x| t.neighbor_mean(x, l2.clone()).unwrap()) < FD_TOL,
            "neighbor_mean"
        );
        let l3 = lists.clone();
        assert!(
            fd_case(seed, 4, 3, false, move |t, x| t.neighbor_max(x, l3.clone()).unwrap()) < FD_TOL,
            "neighbor_max"
        );

        // LSTM cell: check each input separately
        let hidden = 3;
        let xp0 = randn(&mut rng, 4 * hidden);
        let h0 = randn(&mut rng, hidden);
        let c0 = randn(&mut rng, hidden);
        let whh0 = randn(&mut rng, hidden * 4 * hidden);
        let mk = |which: usize| {
            let (xp0, h0, c0, whh0) = (xp0.clone(), h0.clone(), c0.clone(), whh0.clone());
            move |t: &mut Tape, x: TensorId| {
                let xp = if which == 0 { x } else { t.constant(xp0.clone(), 1, 4 * hidden) };
                let h = if which == 1 { x } else { t.constant(h0.clone(), 1, hidden) };
                let c = if which == 2 { x } else { t.constant(c0.clone(), 1, hidden) };
                let w = if which == 3 { x } else { t.constant(whh0.clone(), hidden, 4 * hidden) };
                t.lstm_cell(xp, h, c, w).unwrap()
            }
        };
        assert!(fd_case(seed, 1, 4 * hidden, false, mk(0)) < FD_TOL, "lstm xp");
        assert!(fd_case(seed, 1, hidden, false, mk(1)) < FD_TOL, "lstm h");
        assert!(fd_case(seed, 1, hidden, false, mk(2)) < FD_TOL, "lstm c");
        assert!(fd_case(seed, hidden, 4 * hidden, false, mk(3)) < FD_TOL, "lstm w_hh");

        // batch norm: x, gamma, beta; training and eval paths
        let gamma0 = randn(&mut rng, 4).iter().map(|v| v.abs() + 0.5).collect::<Vec<_>>();
        let beta0 = randn(&mut rng, 4);
        let rm = randn(&mut rng, 4);
        let rv: Vec<f64> = randn(&mut rng, 4).iter().map(|v| v.abs() + 0.3).collect();
        for batch_stats in [true, false] {
            let (g0, b0, rm, rv) = (gamma0.clone(), beta0.clone(), rm.clone(), rv.clone());
            let err = fd_case(seed, 6, 4, false, move |t, x| {
                let g = t.constant(g0.clone(), 1, 4);
                let b = t.constant(b0.clone(), 1, 4);
                t.batch_norm(x, g, b, &rm, &rv, 1e-5, batch_stats).unwrap().0
            });
            assert!(err < FD_TOL, "batch_norm x (batch_stats={batch_stats}): {err}");
        }
        let (g0, b0, rm2, rv2) = (gamma0.clone(), beta0.clone(), rm.clone(), rv.clone());
        let xfix = randn(&mut rng, 24);
        let err = fd_case(seed, 1, 4, false, move |t, g| {
            let x = t.constant(xfix.clone(), 6, 4);
            let b = t.constant(b0.clone(), 1, 4);
            t.batch_norm(x, g, b, &rm2, &rv2, 1e-5, true).unwrap().0
        });
        assert!(err < FD_TOL, "batch_norm gamma: {err}");
        let _ = g0;
    }
}

#[test]
fn fd_cross_entropy() {
    for seed in SEEDS {
        let targets = Rc::new(vec![2usize, 0, 1, 3]);
        let tg = targets.clone();
        let err = fd_case(seed, 4, 4, false, move |t, x| {
            let lp = t.log_softmax_rows(x);
            t.cross_entropy(lp, tg.clone()).unwrap()
        });
        assert!(err < FD_TOL, "cross_entropy: {err}");
    }
}

#[test]
fn leaky_relu_example() {
    let mut t = Tape::new();
    let x = t.constant(vec![-2.0, 3.0], 1, 2);
    let y = t.leaky_relu(x, 0.1);
    assert_eq!(t.data(y), &[-0.2, 3.0]);
}

#[test]
fn l2_normalize_345_triangle() {
    let mut t = Tape::new();
    let x = t.constant(vec![3.0, 4.0, 0.0, 0.0], 2, 2);
    let y = t.l2_normalize_rows(x);
    let d = t.data(y);
    assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
    // zero row stays zero
    assert_eq!(&d[2..], &[0.0, 0.0]);
}

#[test]
fn log_softmax_uniform_and_stability() {
    let mut t = Tape::new();
    let x = t.constant(vec![0.0, 0.0, 0.0], 1, 3);
    let y = t.log_softmax_rows(x);
    for v in t.data(y) {
        assert!((v - (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }
    let big = t.constant(vec![1000.0, 0.0], 1, 2);
    let yb = t.log_softmax_rows(big);
    let d = t.data(yb);
    assert!(d[0].abs() < 1e-12 && (d[1] + 1000.0).abs() < 1e-9);
}

#[test]
fn log_softmax_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = randn(&mut rng, 4);
    let mut t = Tape::new();
    let xid = t.constant(x.clone(), 1, 4);
    let y = t.log_softmax_rows(xid);
    // naive log(exp / sum exp) is fine at small magnitudes
    let z: f64 = x.iter().map(|v| v.exp()).sum();
    for (a, b) in t.data(y).iter().zip(x.iter().map(|v| (v.exp() / z).ln())) {
        assert!((a - b).abs() < 1e-10);
    }
    // rows exponentiate-and-sum to one
    let s: f64 = t.data(y).iter().map(|v| v.exp()).sum();
    assert!((s - 1.0).abs() < 1e-9);
}

#[test]
fn cross_entropy_examples() {
    let mut t = Tape::new();
    // near-perfect prediction: log-prob of the true class approaches 0
    let lp = t.constant(vec![-1e-9, -20.0, -20.7], 1, 3);
    let loss = t.cross_entropy(lp, Rc::new(vec![0])).unwrap();
    assert!(t.data(loss)[0] < 1e-8);

    let logits = t.constant(vec![0.0; 4], 1, 4);
    let u = t.log_softmax_rows(logits);
    let loss_u = t.cross_entropy(u, Rc::new(vec![3])).unwrap();
    assert!((t.data(loss_u)[0] - 4.0f64.ln()).abs() < 1e-12);

    // out-of-range label
    let bad = t.cross_entropy(u, Rc::new(vec![4]));
    assert!(bad.is_err());
}

#[test]
fn backward_linear_and_fanout() {
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, -2.0, 0.5], 1, 3, true);
    let y = t.scale(x, 2.0);
    let s = t.sum_all(y);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[2.0, 2.0, 2.0]);

    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, -2.0], 1, 2, true);
    let y = t.add(x, x).unwrap();
    let s = t.sum_all(y);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0, 2.0], 1, 2, true);
    let y = t.relu(x);
    assert!(t.backward(y).is_err());
}

#[test]
fn unreachable_grads_stay_zero() {
    let mut t = Tape::new();
    let x = t.leaf(vec![1.0], 1, 1, true);
    let unused = t.leaf(vec![5.0], 1, 1, true);
    let s = t.scale(x, 3.0);
    t.backward(s).unwrap();
    assert_eq!(t.grad(unused).unwrap(), &[0.0]);
}

#[test]
fn adam_zero_gradient_is_fixed_point() {
    let mut params = ParamSet::new();
    params.add_raw("w", 1, 3, vec![0.5, -1.25, 2.0], ParamGroup::Graph);
    let before = params.entry(super::params::ParamId(0)).data.clone();
    let mut adam = AdamState::new(&params, 0.001, 0.0001, 0.0);
    let mut grads = vec![vec![0.0; 3]];
    for _ in 0..5 {
        adam.step(&mut params, &mut grads);
    }
    assert_eq!(params.entries()[0].data, before);
}

#[test]
fn adam_first_step_is_minus_lr() {
    // bias-corrected first step with g = 1 moves by exactly lr (up to eps)
    let mut params = ParamSet::new();
    params.add_raw("w", 1, 1, vec![0.0], ParamGroup::Graph);
    let mut adam = AdamState::new(&params, 0.001, 0.0001, 0.0);
    let mut grads = vec![vec![1.0]];
    adam.step(&mut params, &mut grads);
    let p = params.entries()[0].data[0];
    assert!((p + 0.001).abs() < 1e-8, "got {p}");
}

#[test]
fn adam_group_learning_rates() {
    let mut params = ParamSet::new();
    params.add_raw("g", 1, 1, vec![0.0], ParamGroup::Graph);
    params.add_raw("s", 1, 1, vec![0.0], ParamGroup::Sequence);
    let mut adam = AdamState::new(&params, 0.001, 0.0001, 0.0);
    let mut grads = vec![vec![1.0], vec![1.0]];
    adam.step(&mut params, &mut grads);
    assert!((params.entries()[0].data[0] + 0.001).abs() < 1e-8);
    assert!((params.entries()[1].data[0] + 0.0001).abs() < 1e-9);
}

#[test]
fn adam_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        params.add_glorot("w", 4, 4, ParamGroup::Graph, &mut rng);
        let mut adam = AdamState::new(&params, 0.001, 0.0001, 4e-4);
        for step in 0..50 {
            let mut grads = vec![randn(&mut rng, 16)];
            let _ = step;
            adam.step(&mut params, &mut grads);
        }
        params.checksum()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("fold_0");
    let a = vec![1.5, -2.25, 3.0, 0.125];
    let b = vec![9.0];
    super::checkpoint::save_blobs(
        &prefix,
        &[
            ("layer.w".to_string(), 2, 2, a.as_slice()),
            ("layer.b".to_string(), 1, 1, b.as_slice()),
        ],
        serde_json::json!({"variant": "h-gsn"}),
    )
    .unwrap();
    let (map, meta) = super::checkpoint::load_blobs(&prefix).unwrap();
    assert_eq!(map["layer.w"], (2, 2, a));
    assert_eq!(map["layer.b"], (1, 1, b));
    assert_eq!(meta["variant"], "h-gsn");
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(vec![0.0; 6], 2, 3);
    let b = t.constant(vec![0.0; 8], 2, 4);
    let err = t.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("(2, 3)") && msg.contains("(2, 4)"), "{msg}");
}

use duoview::gradcore::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![r, c], data).unwrap()
}

fn triple_loop(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(i, p) * b.get(p, j);
            }
            out[i * n + j] = s;
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 2);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        for (x, y) in tape.value(c).data().iter().zip(triple_loop(&a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn cosine_matches_dot_over_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let u = random_matrix(&mut rng, 3, 5);
        let v = random_matrix(&mut rng, 4, 5);
        let mut tape = Tape::new();
        let (vu, vv) = (tape.constant(u.clone()), tape.constant(v.clone()));
        let c = tape.cosine_matrix(vu, vv).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let dot: f64 = u.row(i).iter().zip(v.row(j)).map(|(a, b)| a * b).sum();
                let nu = u.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv = v.row(j).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((tape.value(c).get(i, j) - dot / (nu * nv)).abs() < 1e-10);
            }
        }
    }
}

/// Central finite differences of `f` around each entry of `inputs`.
fn numeric_grad(inputs: &[Tensor], f: &dyn Fn(&[Tensor]) -> f64) -> Vec<Vec<f64>> {
    let h = 1e-5;
    let mut out = Vec::new();
    for (t, input) in inputs.iter().enumerate() {
        let mut g = Vec::with_capacity(input.len());
        for k in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[t].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[t].data_mut()[k] -= h;
            g.push((f(&plus) - f(&minus)) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

fn check_op(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let numeric = numeric_grad(&inputs, &eval);
    for (v, num) in vars.iter().zip(numeric) {
        let ana = grads.get(*v).unwrap();
        for (a, n) in ana.data().iter().zip(num) {
            let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
            assert!(err < 1e-4, "analytic {a} numeric {n}");
        }
    }
}

/// Projects any output onto a fixed random direction so every op can be
/// checked through a scalar.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let n = tape.value(x).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    tape.weighted_sum(x, w).unwrap()
}

#[test]
fn op_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = random_matrix(&mut rng, 3, 4);
    let b = random_matrix(&mut rng, 4, 2);
    check_op(vec![a.clone(), b.clone()], |t, v| {
        let c = t.matmul(v[0], v[1]).unwrap();
        project(t, c, 1)
    });
    check_op(vec![a.clone(), Tensor::vector(vec![0.1, 0.2, -0.3, 0.4])], |t, v| {
        let c = t.add_bias(v[0], v[1]).unwrap();
        let c = t.tanh(c).unwrap();
        project(t, c, 2)
    });
    check_op(vec![a.clone()], |t, v| {
        let c = t.mean_rows(v[0]).unwrap();
        project(t, c, 3)
    });
    let six = random_matrix(&mut rng, 6, 3);
    check_op(vec![six.clone()], |t, v| {
        let c = t.mean_row_groups(v[0], 2).unwrap();
        project(t, c, 4)
    });
    check_op(vec![a.clone()], |t, v| {
        let c = t.l2_normalize_rows(v[0]).unwrap();
        project(t, c, 5)
    });
    let u = random_matrix(&mut rng, 3, 5);
    let w = random_matrix(&mut rng, 4, 5);
    check_op(vec![u, w], |t, v| {
        let c = t.cosine_matrix(v[0], v[1]).unwrap();
        let c = t.scale(c, 3.0).unwrap();
        let l = t.logsumexp_rows(c).unwrap();
        project(t, l, 6)
    });
    check_op(vec![a.clone(), a.clone()], |t, v| {
        let s = t.sigmoid(v[0]).unwrap();
        let d = t.sub(s, v[1]).unwrap();
        let m = t.mul(d, v[0]).unwrap();
        let r = t.add(m, v[1]).unwrap();
        project(t, r, 7)
    });
    check_op(vec![a.clone()], |t, v| {
        let g = t.gather_rows(v[0], &[2, 0, 2]).unwrap();
        let c = t.gather_cols(g, vec![vec![0, 3], vec![1, 1], vec![2, 0]]).unwrap();
        let tr = t.transpose(c).unwrap();
        let r = t.reshape(tr, vec![6]).unwrap();
        project(t, r, 8)
    });
}

proptest! {
    #[test]
    fn normalize_is_idempotent(rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..6)) {
        prop_assume!(rows.iter().all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&rows).unwrap());
        let y = tape.l2_normalize_rows(x).unwrap();
        let z = tape.l2_normalize_rows(y).unwrap();
        for i in 0..rows.len() {
            let n: f64 = tape.value(y).row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
        }
        for (a, b) in tape.value(y).data().iter().zip(tape.value(z).data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_entries_are_bounded(
        u in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..5),
        v in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..5),
    ) {
        prop_assume!(u.iter().chain(&v).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(Tensor::from_rows(&u).unwrap()), tape.constant(Tensor::from_rows(&v).unwrap()));
        let c = tape.cosine_matrix(a, b).unwrap();
        for x in tape.value(c).data() {
            prop_assert!(*x >= -1.0 - 1e-9 && *x <= 1.0 + 1e-9);
        }
    }
}

use nncore::{finite_diff_check, Activation, Matrix, Mlp, ParamStore, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight transcription of `tanh(W1 x + b1) -> tanh(W2 h + b2) -> W3 h + b3`.
fn oracle_forward(layers: &[(Vec<Vec<f64>>, Vec<f64>)], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, (w, b)) in layers.iter().enumerate() {
        let mut next = Vec::with_capacity(w.len());
        for (row, bias) in w.iter().zip(b) {
            let mut acc = *bias;
            for (wij, hj) in row.iter().zip(&h) {
                acc += wij * hj;
            }
            next.push(if i + 1 < layers.len() { acc.tanh() } else { acc });
        }
        h = next;
    }
    h
}

#[test]
fn mlp_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "net", &[4, 32, 32, 2], Activation::Tanh, &mut rng);
    // random biases too, so the oracle exercises them
    for layer in &mlp.layers {
        let b: Vec<f64> = (0..layer.fan_out).map(|_| rng.gen_range(-0.5..0.5)).collect();
        store.set_value(layer.bias, Matrix::row(&b)).unwrap();
    }
    let layers: Vec<(Vec<Vec<f64>>, Vec<f64>)> = mlp
        .layers
        .iter()
        .map(|l| {
            let w = store.value(l.weight);
            let rows = (0..w.rows()).map(|r| w.row_slice(r).to_vec()).collect();
            (rows, store.value(l.bias).as_slice().to_vec())
        })
        .collect();

    let batch: Vec<Vec<f64>> = (0..16)
        .map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::from_rows(&batch));
    let y = mlp.forward(&mut tape, &store, x).unwrap();
    for (r, input) in batch.iter().enumerate() {
        let want = oracle_forward(&layers, input);
        for (c, w) in want.iter().enumerate() {
            assert!((tape.value(y).get(r, c) - w).abs() < 1e-10);
        }
    }
}

type Case = (&'static str, fn(&mut Tape, Var) -> nncore::Result<Var>, f64, f64);

fn cases() -> Vec<Case> {
    fn pair(t: &mut Tape, x: Var) -> nncore::Result<(Var, Var)> {
        Ok((t.slice_cols(x, 0, 3)?, t.slice_cols(x, 3, 3)?))
    }
    vec![
        ("add", |t, x| {
            let (a, b) = pair(t, x)?;
            let y = t.add(a, b)?;
            let y = t.mul(y, a)?;
            Ok(t.sum(y))
        }, -2.0, 2.0),
        ("sub", |t, x| {
            let (a, b) = pair(t, x)?;
            let y = t.sub(a, b)?;
            let y = t.square(y);
            Ok(t.sum(y))
        }, -2.0, 2.0),
        ("div", |t, x| {
            let (a, b) = pair(t, x)?;
            let b = t.add_scalar(b, 3.0);
            let y = t.div(a, b)?;
            Ok(t.sum(y))
        }, -1.0, 1.0),
        ("broadcast", |t, x| {
            let a = t.slice_cols(x, 0, 3)?;
            let s = t.slice_cols(x, 5, 1)?;
            let y = t.mul(a, s)?;
            let y = t.add(y, s)?;
            let y = t.tanh(y);
            Ok(t.mean(y))
        }, -2.0, 2.0),
        ("matmul_t", |t, x| {
            let a = t.slice_cols(x, 0, 2)?;
            let w = t.constant(Matrix::from_rows(&[[0.3, -1.2], [2.0, 0.1], [-0.7, 0.4]]));
            let y = t.matmul_t(a, w)?;
            let y = t.sin(y);
            Ok(t.sum(y))
        }, -2.0, 2.0),
        ("row_matvec", |t, x| {
            let w = t.slice_cols(x, 0, 4)?;
            let v = t.slice_cols(x, 4, 2)?;
            let y = t.row_matvec(w, v)?;
            let y = t.tanh(y);
            Ok(t.sum(y))
        }, -2.0, 2.0),
        ("sigmoid_exp_ln", |t, x| {
            let y = t.sigmoid(x);
            let y = t.ln(y);
            let e = t.exp(x);
            let y = t.add(y, e)?;
            Ok(t.sum(y))
        }, -3.0, 3.0),
        ("log_softmax", |t, x| {
            let y = t.scale(x, 4.0);
            let y = t.log_softmax(y);
            let w = t.constant(Matrix::row(&[1.0, -2.0, 0.5, 3.0, 0.0, 1.5]));
            let y = t.mul(y, w)?;
            Ok(t.sum(y))
        }, -2.0, 2.0),
        ("min_max", |t, x| {
            let a = t.slice_cols(x, 0, 2)?;
            let b = t.slice_cols(x, 2, 2)?;
            let c = t.slice_cols(x, 4, 2)?;
            let lo = t.min_n(&[a, b, c])?;
            let hi = t.max_n(&[a, b, c])?;
            let y = t.mul(lo, hi)?;
            Ok(t.sum(y))
        }, -2.0, 2.0),
        ("row_min_max", |t, x| {
            let lo = t.row_min(x)?;
            let hi = t.row_max(x)?;
            let y = t.sub(hi, lo)?;
            let y = t.square(y);
            Ok(t.sum(y))
        }, -2.0, 2.0),
        ("clamp_gather_concat", |t, x| {
            let y = t.clamp(x, -1.0, 1.0);
            let z = t.concat(&[y, x])?;
            let z = t.square(z);
            let g = t.gather(z, &[7])?;
            let s = t.row_sum(z);
            let y = t.add(g, s)?;
            Ok(t.sum(y))
        }, -2.0, 2.0),
        ("relu", |t, x| {
            let y = t.relu(x);
            let y = t.square(y);
            Ok(t.sum(y))
        }, -2.0, 2.0),
    ]
}

fn away_from_kinks(name: &str, p: &[f64]) -> bool {
    let near = |a: f64, b: f64| (a - b).abs() < 1e-3;
    match name {
        "min_max" => {
            let cols = [[p[0], p[2], p[4]], [p[1], p[3], p[5]]];
            cols.iter().all(|c| !near(c[0], c[1]) && !near(c[0], c[2]) && !near(c[1], c[2]))
        }
        "row_min_max" => {
            for i in 0..6 {
                for j in i + 1..6 {
                    if near(p[i], p[j]) {
                        return false;
                    }
                }
            }
            true
        }
        "clamp_gather_concat" => p.iter().all(|v| !near(v.abs(), 1.0)),
        "relu" => p.iter().all(|v| !near(*v, 0.0)),
        _ => true,
    }
}

#[test]
fn every_op_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, f, lo, hi) in cases() {
        let mut done = 0;
        while done < 100 {
            let p: Vec<f64> = (0..6).map(|_| rng.gen_range(lo..hi)).collect();
            if !away_from_kinks(name, &p) {
                continue;
            }
            let err = finite_diff_check(f, &p, 1e-5).unwrap();
            assert!(err < 1e-4, "{name} at {p:?}: {err}");
            done += 1;
        }
    }
}

#[test]
fn blocked_edge_zeroes_upstream_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let build = |t: &mut Tape, block: bool| {
            let x = t.constant(Matrix::row(&v));
            let h = t.tanh(x);
            let h2 = if block { t.stop_gradient(h) } else { h };
            let down = t.constant(Matrix::row(&[0.5, -1.0, 2.0]));
            let y = t.mul(h2, down).unwrap();
            let y = t.square(y);
            let l = t.sum(y);
            (x, h2, l)
        };
        let mut t1 = Tape::new();
        let (x1, h1, l1) = build(&mut t1, false);
        let g1 = t1.backward(l1).unwrap();
        let mut t2 = Tape::new();
        let (x2, h2, l2) = build(&mut t2, true);
        let g2 = t2.backward(l2).unwrap();
        assert_eq!(t1.value(l1), t2.value(l2));
        assert_eq!(g1.wrt(h1), g2.wrt(h2));
        assert!(g1.wrt(x1).unwrap().as_slice().iter().any(|&g| g != 0.0));
        assert!(g2.wrt(x2).is_none());
        assert!(t2.blocked_source(h2).is_some());
        assert!(t1.blocked_source(h1).is_none());
    }
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "net", &[3, 8, 1], Activation::Tanh, &mut rng);
        let mut adam = nncore::Adam::new(nncore::AdamConfig {
            lr: 1e-2,
            ..Default::default()
        });
        for _ in 0..20 {
            let xs: Vec<[f64; 3]> = (0..8)
                .map(|_| [rng.gen(), rng.gen(), rng.gen()])
                .collect();
            store.zero_grads();
            let mut t = Tape::new();
            let x = t.constant(Matrix::from_rows(&xs));
            let y = mlp.forward(&mut t, &store, x).unwrap();
            let y = t.square(y);
            let l = t.mean(y);
            t.backward_into(l, &mut store).unwrap();
            adam.step(&mut store);
        }
        store.flat_values()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

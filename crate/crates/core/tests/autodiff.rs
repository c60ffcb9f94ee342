//! Cross-cutting autodiff properties: finite-difference agreement for every
//! op on randomized shapes, distributional dropout behavior, and a small
//! end-to-end fit with Adam.

use ctxgen::tensor::{grad_check, Adam, ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.2..1.2)).collect())
}

/// Checks one op by building `loss = sum(sq(op(params)))` and comparing
/// against central differences at the acceptance tolerances.
fn check_op(name: &str, params: &mut ParamSet, build: impl FnMut(&mut Tape, &ParamSet) -> Var) {
    let report = grad_check(params, build, 1e-5, 1e-4, 24, 99);
    assert!(
        report.passed(),
        "{name}: {} of {} coords failed, first: {:?}",
        report.failures.len(),
        report.checked,
        report.failures.first()
    );
}

fn squared_sum(tape: &mut Tape, v: Var) -> Var {
    let sq = tape.mul(v, v);
    tape.sum(sq)
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut set = ParamSet::new();
    set.add("a", randn(&mut rng, &[3, 4]));
    set.add("b", randn(&mut rng, &[4, 2]));
    check_op("matmul", &mut set, |t, s| {
        let a = t.param(s, s.id("a").unwrap());
        let b = t.param(s, s.id("b").unwrap());
        let c = t.matmul(a, b);
        squared_sum(t, c)
    });

    let mut set = ParamSet::new();
    set.add("m", randn(&mut rng, &[4, 3]));
    set.add("v", randn(&mut rng, &[3]));
    check_op("matvec", &mut set, |t, s| {
        let m = t.param(s, s.id("m").unwrap());
        let v = t.param(s, s.id("v").unwrap());
        let y = t.matvec(m, v);
        squared_sum(t, y)
    });

    let mut set = ParamSet::new();
    set.add("x", randn(&mut rng, &[5]));
    set.add("y", randn(&mut rng, &[5]));
    check_op("dot/add/mul", &mut set, |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let y = t.param(s, s.id("y").unwrap());
        let d = t.dot(x, y);
        let sum = t.add(x, y);
        let prod = t.mul(x, y);
        let both = t.concat(&[sum, prod]);
        let e = squared_sum(t, both);
        let de = t.mul(d, e);
        t.sum(de)
    });

    let mut set = ParamSet::new();
    set.add("s", randn(&mut rng, &[1]));
    set.add("x", randn(&mut rng, &[4]));
    check_op("scale_by/affine/slice", &mut set, |t, s| {
        let sv = t.param(s, s.id("s").unwrap());
        let x = t.param(s, s.id("x").unwrap());
        let scaled = t.scale_by(sv, x);
        let shifted = t.affine(scaled, -1.5, 0.25);
        let part = t.slice(shifted, 1, 2);
        squared_sum(t, part)
    });

    let mut set = ParamSet::new();
    set.add("x", randn(&mut rng, &[6]));
    check_op("tanh/sigmoid", &mut set, |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let a = t.tanh(x);
        let b = t.sigmoid(x);
        let cat = t.concat(&[a, b]);
        squared_sum(t, cat)
    });

    let mut set = ParamSet::new();
    let positive: Vec<f64> = (0..5).map(|_| rng.random_range(0.3..2.0)).collect();
    set.add("x", Tensor::from_vec(&[5], positive));
    check_op("log", &mut set, |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let y = t.log(x);
        squared_sum(t, y)
    });

    let mut set = ParamSet::new();
    set.add("x", randn(&mut rng, &[2, 5]));
    check_op("softmax rows", &mut set, |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let y = t.softmax(x, 1);
        squared_sum(t, y)
    });
    let mut set = ParamSet::new();
    set.add("x", randn(&mut rng, &[3, 4]));
    check_op("softmax cols", &mut set, |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let y = t.softmax(x, 0);
        squared_sum(t, y)
    });

    let mut set = ParamSet::new();
    set.add("x", randn(&mut rng, &[7]));
    let mask = [true, false, true, true, false, true, true];
    check_op("masked softmax", &mut set, move |t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let y = t.masked_softmax(x, &mask);
        squared_sum(t, y)
    });

    let mut set = ParamSet::new();
    set.add("table", randn(&mut rng, &[6, 3]));
    check_op("embedding", &mut set, |t, s| {
        let table = t.param(s, s.id("table").unwrap());
        let a = t.embed(table, 0);
        let b = t.embed(table, 5);
        let c = t.embed(table, 0); // repeated row accumulates
        let ab = t.add(a, b);
        let abc = t.add(ab, c);
        squared_sum(t, abc)
    });
}

#[test]
fn bilstm_over_a_sequence_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut set = ParamSet::new();
    set.lstm("fwd", 3, 4, &mut rng);
    set.lstm("bwd", 3, 4, &mut rng);
    let xs: Vec<Tensor> = (0..5).map(|_| randn(&mut rng, &[3])).collect();
    let report = grad_check(
        &mut set,
        move |tape, set| {
            let wf = tape.param(set, set.id("fwd.w").unwrap());
            let bf = tape.param(set, set.id("fwd.b").unwrap());
            let wb = tape.param(set, set.id("bwd.w").unwrap());
            let bb = tape.param(set, set.id("bwd.b").unwrap());
            let inputs: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
            let zero = tape.constant(Tensor::zeros(&[4]));
            let (mut h, mut c) = (zero, zero);
            let mut fwd = Vec::new();
            for x in &inputs {
                let (h2, c2) = tape.lstm_cell(wf, bf, *x, h, c);
                fwd.push(h2);
                h = h2;
                c = c2;
            }
            let (mut h, mut c) = (zero, zero);
            let mut bwd = vec![zero; inputs.len()];
            for (i, x) in inputs.iter().enumerate().rev() {
                let (h2, c2) = tape.lstm_cell(wb, bb, *x, h, c);
                bwd[i] = h2;
                h = h2;
                c = c2;
            }
            let per_pos: Vec<_> = fwd
                .iter()
                .zip(&bwd)
                .map(|(f, b)| tape.concat(&[*f, *b]))
                .collect();
            let all = tape.concat(&per_pos);
            let sq = tape.mul(all, all);
            tape.sum(sq)
        },
        1e-5,
        1e-4,
        20,
        8,
    );
    assert!(report.passed(), "{:?}", report.failures.first());
    assert!(report.checked >= 60);
}

#[test]
fn dropout_preserves_expectation_in_train_mode() {
    // 10^5 Bernoulli(keep) draws rescaled by 1/keep: mean stays within 3
    // standard errors of 1.
    let n = 100_000;
    let p = 0.4;
    let mut tape = Tape::new(true, 1234);
    let x = tape.constant(Tensor::from_vec(&[n], vec![1.0; n]));
    let y = tape.dropout(x, p);
    let mean = tape.data(y).iter().sum::<f64>() / n as f64;
    let keep = 1.0 - p;
    let sigma = ((1.0 - keep) / (keep * n as f64)).sqrt();
    assert!(
        (mean - 1.0).abs() < 3.0 * sigma,
        "mean {mean} further than {} from 1",
        3.0 * sigma
    );
}

#[test]
fn softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let rows = rng.random_range(1..5);
        let cols = rng.random_range(1..9);
        let mut tape = Tape::new(false, 0);
        let big: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-30.0..30.0)).collect();
        let x = tape.constant(Tensor::from_vec(&[rows, cols], big));
        let y = tape.softmax(x, 1);
        for row in tape.data(y).chunks(cols) {
            assert!(row.iter().all(|p| *p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn adam_fits_a_linear_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let target = randn(&mut rng, &[2, 3]);
    let inputs: Vec<Tensor> = (0..10).map(|_| randn(&mut rng, &[3])).collect();
    let mut set = ParamSet::new();
    let w = set.xavier("w", 2, 3, &mut rng);
    let mut adam = Adam::new();
    let mut last = f64::INFINITY;
    for _ in 0..300 {
        set.zero_grads();
        let mut tape = Tape::new(false, 0);
        let wv = tape.param(&set, w);
        let tv = tape.constant(target.clone());
        let mut losses = Vec::new();
        for x in &inputs {
            let xv = tape.constant(x.clone());
            let pred = tape.matvec(wv, xv);
            let gold = tape.matvec(tv, xv);
            let neg = tape.affine(gold, -1.0, 0.0);
            let diff = tape.add(pred, neg);
            let sq = tape.mul(diff, diff);
            losses.push(tape.sum(sq));
        }
        let total = tape.concat(&losses);
        let loss = tape.sum(total);
        last = tape.data(loss)[0];
        tape.backward(loss, &mut set);
        adam.step(&mut set, 0.05).unwrap();
    }
    assert!(last < 1e-6, "loss stuck at {last}");
    for (a, b) in set.value(w).data().iter().zip(target.data()) {
        assert!((a - b).abs() < 1e-3);
    }
}

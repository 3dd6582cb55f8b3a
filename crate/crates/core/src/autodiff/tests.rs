use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn vector(tape: &mut Tape, v: &[f64]) -> Var {
    tape.leaf(Array::vector(v.to_vec()))
}

#[test]
fn log_inverts_exp() {
    let mut tape = Tape::new();
    let x = tape.scalar(0.5);
    let e = tape.exp(x);
    let l = tape.log(e).unwrap();
    assert!((tape.item(l) - 0.5).abs() < 1e-15);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let z = vector(&mut tape, &[0.7; 4]);
    let p = tape.softmax(z).unwrap();
    for &v in tape.value(p).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn detach_blocks_one_path() {
    let mut tape = Tape::new();
    let x = tape.scalar(3.0);
    let d = tape.detach(x);
    let y = tape.mul(d, x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).item(), 3.0);
}

#[test]
fn sum_of_squares_gradient() {
    let mut tape = Tape::new();
    let x = vector(&mut tape, &[1.0, 2.0]);
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).data(), &[2.0, 4.0]);
}

#[test]
fn constant_root_leaves_zero_gradients() {
    let mut tape = Tape::new();
    let x = vector(&mut tape, &[1.0, -2.0]);
    let _unused = tape.exp(x);
    let c = tape.scalar(4.0);
    tape.backward(c).unwrap();
    assert!(tape.grad(x).data().iter().all(|&g| g == 0.0));
}

#[test]
fn entropy_is_stationary_at_uniform() {
    let mut tape = Tape::new();
    let z = vector(&mut tape, &[0.0, 0.0]);
    let p = tape.softmax(z).unwrap();
    let lp = tape.log_softmax(z).unwrap();
    let plogp = tape.mul(p, lp).unwrap();
    let s = tape.sum(plogp);
    let h = tape.neg(s);
    tape.backward(h).unwrap();
    assert!((tape.item(h) - 2f64.ln()).abs() < 1e-15);
    for &g in tape.grad(z).data() {
        assert!(g.abs() < 1e-15);
    }
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut tape = Tape::new();
    let x = vector(&mut tape, &[1.0, 2.0]);
    assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarRoot { .. })));
}

#[test]
fn shape_mismatch_is_a_construction_error() {
    let mut tape = Tape::new();
    let a = vector(&mut tape, &[1.0, 2.0]);
    let b = vector(&mut tape, &[1.0, 2.0, 3.0]);
    assert!(matches!(tape.add(a, b), Err(AutodiffError::ShapeMismatch { op: "add", .. })));
    let m = tape.leaf(Array::matrix(2, 2, vec![1.0; 4]).unwrap());
    assert!(tape.matmul(m, b).is_err());
}

#[test]
fn log_domain_error_reports_index() {
    let mut tape = Tape::new();
    let x = vector(&mut tape, &[1.0, 0.5, -0.1, 0.0]);
    match tape.log(x) {
        Err(AutodiffError::Domain { op: "log", index, value }) => {
            assert_eq!(index, 2);
            assert_eq!(value, -0.1);
        }
        other => panic!("unexpected {other:?}"),
    }
    let zero = tape.scalar(0.0);
    assert!(matches!(tape.div(x, zero), Err(AutodiffError::Domain { op: "div", .. })));
}

#[test]
fn backward_accumulates_without_reset() {
    let mut tape = Tape::new();
    let x = vector(&mut tape, &[1.0, 2.0]);
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).data(), &[4.0, 8.0]);
    tape.zero_grad();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).data(), &[2.0, 4.0]);
}

#[test]
fn finite_difference_of_square() {
    let err = finite_difference_check(
        |t, x| -> Result<Var, AutodiffError> {
            let sq = t.mul(x, x)?;
            Ok(t.sum(sq))
        },
        &[1.0],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn finite_difference_of_constant_is_zero() {
    let err = finite_difference_check::<_, AutodiffError>(|t, _| Ok(t.scalar(2.5)), &[0.3, -1.0], 1e-5).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn finite_difference_rejects_bad_inputs() {
    assert!(finite_difference_check::<_, AutodiffError>(|t, _| Ok(t.scalar(1.0)), &[1.0], 0.0).is_err());
    let r = finite_difference_check(|t, _| Ok(t.scalar(f64::NAN)), &[1.0], 1e-5);
    assert!(matches!(r, Err(AutodiffError::NonFinite { .. })));
}

#[test]
fn softmax_rows_normalize_and_log_softmax_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data: Vec<f64> = (0..5 * 7).map(|_| rng.gen_range(-30.0..30.0)).collect();
    let mut tape = Tape::new();
    let z = tape.leaf(Array::matrix(5, 7, data).unwrap());
    let p = tape.softmax(z).unwrap();
    let lp = tape.log_softmax(z).unwrap();
    let (pv, lv) = (tape.value(p).data(), tape.value(lp).data());
    for r in 0..5 {
        let s: f64 = pv[r * 7..(r + 1) * 7].iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        for j in 0..7 {
            let i = r * 7 + j;
            if pv[i] > 0.0 {
                assert!((pv[i].ln() - lv[i]).abs() < 1e-9);
            }
        }
    }
}

type Builder = fn(&mut Tape, Var, &[f64]) -> Result<Var, AutodiffError>;

/// Reduces `y` with fixed weights so every output element matters.
fn weighted(t: &mut Tape, y: Var, w: &[f64]) -> Result<Var, AutodiffError> {
    let n = t.value(y).len();
    let wv = t.leaf(Array::new(t.value(y).shape().to_vec(), w[..n].to_vec())?);
    let p = t.mul(y, wv)?;
    Ok(t.sum(p))
}

fn split(t: &mut Tape, x: Var) -> Result<(Var, Var), AutodiffError> {
    let n = t.value(x).len() / 2;
    let a = t.gather(x, (0..n).collect(), vec![n])?;
    let b = t.gather(x, (n..2 * n).collect(), vec![n])?;
    Ok((a, b))
}

fn positive(t: &mut Tape, x: Var) -> Var {
    let e = t.exp(x);
    t.add_const(e, 0.1)
}

#[test]
fn every_op_matches_finite_differences() {
    let cases: Vec<(&str, Builder)> = vec![
        ("add", |t, x, w| {
            let (a, b) = split(t, x)?;
            let y = t.add(a, b)?;
            weighted(t, y, w)
        }),
        ("sub", |t, x, w| {
            let (a, b) = split(t, x)?;
            let y = t.sub(a, b)?;
            weighted(t, y, w)
        }),
        ("mul", |t, x, w| {
            let (a, b) = split(t, x)?;
            let y = t.mul(a, b)?;
            weighted(t, y, w)
        }),
        ("div", |t, x, w| {
            let (a, b) = split(t, x)?;
            let pb = positive(t, b);
            let y = t.div(a, pb)?;
            weighted(t, y, w)
        }),
        ("neg", |t, x, w| {
            let y = t.neg(x);
            weighted(t, y, w)
        }),
        ("exp", |t, x, w| {
            let y = t.exp(x);
            weighted(t, y, w)
        }),
        ("log", |t, x, w| {
            let p = positive(t, x);
            let y = t.log(p)?;
            weighted(t, y, w)
        }),
        ("tanh", |t, x, w| {
            let y = t.tanh(x);
            weighted(t, y, w)
        }),
        ("matmul", |t, x, w| {
            let a = t.gather(x, (0..6).collect(), vec![2, 3])?;
            let b = t.gather(x, (2..8).collect(), vec![3, 2])?;
            let y = t.matmul(a, b)?;
            weighted(t, y, w)
        }),
        ("add_row", |t, x, w| {
            let a = t.gather(x, (0..6).collect(), vec![2, 3])?;
            let r = t.gather(x, (6..9).collect(), vec![3])?;
            let y = t.add_row(a, r)?;
            weighted(t, y, w)
        }),
        ("softmax", |t, x, w| {
            let a = t.reshape(x, vec![2, 5])?;
            let y = t.softmax(a)?;
            weighted(t, y, w)
        }),
        ("log_softmax", |t, x, w| {
            let a = t.reshape(x, vec![2, 5])?;
            let y = t.log_softmax(a)?;
            weighted(t, y, w)
        }),
        ("gather", |t, x, w| {
            let y = t.gather(x, vec![0, 3, 3, 7, 1], vec![5])?;
            weighted(t, y, w)
        }),
        ("pick", |t, x, w| {
            let a = t.reshape(x, vec![5, 2])?;
            let y = t.pick(a, &[0, 1, 1, 0, 1])?;
            weighted(t, y, w)
        }),
        ("sum", |t, x, _| {
            let sq = t.mul(x, x)?;
            Ok(t.sum(sq))
        }),
        ("mean", |t, x, _| {
            let sq = t.mul(x, x)?;
            t.mean(sq)
        }),
        ("clamp", |t, x, w| {
            let y = t.clamp(x, -0.5, 0.5);
            weighted(t, y, w)
        }),
        ("maximum", |t, x, w| {
            let (a, b) = split(t, x)?;
            let y = t.maximum(a, b)?;
            weighted(t, y, w)
        }),
        ("minimum", |t, x, w| {
            let (a, b) = split(t, x)?;
            let y = t.minimum(a, b)?;
            weighted(t, y, w)
        }),
        ("scalar_broadcast", |t, x, w| {
            let s = t.gather(x, vec![0], vec![])?;
            let y = t.mul(x, s)?;
            let ps = positive(t, s);
            let z = t.div(y, ps)?;
            weighted(t, z, w)
        }),
        ("consts", |t, x, w| {
            let a = t.mul_const(x, -1.7);
            let y = t.add_const(a, 0.3);
            let y = t.mul(y, y)?;
            weighted(t, y, w)
        }),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (name, build) in cases {
        for trial in 0..100 {
            let params: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let w: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let err = finite_difference_check(|t, x| build(t, x, &w), &params, 1e-5).unwrap();
            assert!(err < 1e-4, "{name} trial {trial}: relative error {err}");
        }
    }
}

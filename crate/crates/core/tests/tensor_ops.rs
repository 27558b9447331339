mod common;

use common::*;
use jointlk::encode::LN_EPS;
use jointlk::tensor::{Tape, Tensor};
use proptest::prelude::*;

fn matrix(max: usize) -> impl Strategy<Value = Mat> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| proptest::collection::vec(proptest::collection::vec(-5.0..5.0f64, c), r))
}

fn leaf(t: &mut Tape, m: &Mat) -> jointlk::tensor::Var {
    t.leaf(&Tensor::from_rows(m).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_and_cols_sum_to_one(m in matrix(7)) {
        let mut t = Tape::new();
        let x = leaf(&mut t, &m);
        let rows = t.softmax(x, 1).unwrap();
        let cols = t.softmax(x, 0).unwrap();
        for r in tape_mat(&t, rows) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(r.iter().all(|&v| v >= 0.0));
        }
        for c in transpose(&tape_mat(&t, cols)) {
            prop_assert!((c.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_matches_oracle_and_log_softmax(m in matrix(6)) {
        let mut t = Tape::new();
        let x = leaf(&mut t, &m);
        let sm = t.softmax(x, 1).unwrap();
        let lsm = t.log_softmax(x, 1).unwrap();
        let want: Mat = m.iter().map(|r| softmax(r)).collect();
        prop_assert!(max_abs_diff(&tape_mat(&t, sm), &want) < 1e-14);
        let exp: Mat = tape_mat(&t, lsm).iter().map(|r| r.iter().map(|v| v.exp()).collect()).collect();
        prop_assert!(max_abs_diff(&exp, &want) < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant(m in matrix(6), shift in -50.0..50.0f64) {
        let mut t = Tape::new();
        let x = leaf(&mut t, &m);
        let shifted: Mat = m.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect();
        let y = leaf(&mut t, &shifted);
        let a = t.softmax(x, 1).unwrap();
        let b = t.softmax(y, 1).unwrap();
        prop_assert!(max_abs_diff(&tape_mat(&t, a), &tape_mat(&t, b)) < 1e-12);
    }

    #[test]
    fn segment_softmax_sums_per_segment(vals in proptest::collection::vec(-5.0..5.0f64, 1..30), seed in 0u64..1000) {
        use rand::Rng;
        let mut g = rng(seed);
        let segs: Vec<usize> = (0..vals.len()).map(|_| g.gen_range(0..4)).collect();
        let mut t = Tape::new();
        let x = t.constant(vals.len(), 1, vals.clone()).unwrap();
        let y = t.segment_softmax(x, &segs).unwrap();
        let mut totals = [0.0; 4];
        for (v, &s) in t.value(y).iter().zip(&segs) {
            totals[s] += v;
        }
        for s in 0..4 {
            if segs.contains(&s) {
                prop_assert!((totals[s] - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn masked_entries_get_zero_probability(m in matrix(6), seed in 0u64..1000) {
        use rand::Rng;
        let mut g = rng(seed);
        let (r, c) = (m.len(), m[0].len());
        let mut mask: Vec<bool> = (0..r * c).map(|_| g.gen_bool(0.4)).collect();
        for i in 0..r {
            mask[i * c] = false;
        }
        let mut t = Tape::new();
        let x = leaf(&mut t, &m);
        let f = t.mask_fill(x, &mask).unwrap();
        let y = t.softmax(f, 1).unwrap();
        for (i, v) in t.value(y).iter().enumerate() {
            if mask[i] {
                prop_assert_eq!(*v, 0.0);
            }
        }
        for row in tape_mat(&t, y) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_matches_oracle(m in matrix(6)) {
        prop_assume!(m[0].len() > 1);
        let d = m[0].len();
        let mut g = rng(d as u64);
        let gamma = random_mat(&mut g, 1, d);
        let beta = random_mat(&mut g, 1, d);
        let mut t = Tape::new();
        let x = leaf(&mut t, &m);
        let gv = leaf(&mut t, &gamma);
        let bv = leaf(&mut t, &beta);
        let y = t.layer_norm(x, gv, bv, LN_EPS).unwrap();
        let want: Mat = m.iter().map(|r| layer_norm_row(r, &gamma[0], &beta[0])).collect();
        prop_assert!(max_abs_diff(&tape_mat(&t, y), &want) < 1e-10);
    }

    #[test]
    fn matmul_and_transpose_match_oracle(a in matrix(6), seed in 0u64..1000) {
        let mut g = rng(seed);
        let b = random_mat(&mut g, a[0].len(), 3);
        let mut t = Tape::new();
        let (av, bv) = (leaf(&mut t, &a), leaf(&mut t, &b));
        let p = t.matmul(av, bv).unwrap();
        prop_assert!(max_abs_diff(&tape_mat(&t, p), &mm(&a, &b)) < 1e-12);
        let tt = t.transpose(av);
        let tt = t.transpose(tt);
        prop_assert_eq!(tape_mat(&t, tt), a);
    }

    #[test]
    fn gelu_matches_tanh_form(m in matrix(5)) {
        let mut t = Tape::new();
        let x = leaf(&mut t, &m);
        let y = t.gelu(x);
        let want: Mat = m.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
        prop_assert!(max_abs_diff(&tape_mat(&t, y), &want) < 1e-14);
    }

    /// `<scatter(x), y> = <x, index(y)>`: the two row maps are adjoint.
    #[test]
    fn index_and_scatter_are_adjoint(x in matrix(6), seed in 0u64..1000) {
        use rand::Rng;
        let mut g = rng(seed);
        let out_rows = g.gen_range(1..5);
        let rows: Vec<usize> = (0..x.len()).map(|_| g.gen_range(0..out_rows)).collect();
        let y = random_mat(&mut g, out_rows, x[0].len());
        let mut t = Tape::new();
        let (xv, yv) = (leaf(&mut t, &x), leaf(&mut t, &y));
        let s = t.scatter_add_rows(xv, &rows, out_rows).unwrap();
        let i = t.index_rows(yv, &rows).unwrap();
        let lhs: f64 = tape_mat(&t, s).iter().zip(&y).map(|(a, b)| dot(a, b)).sum();
        let rhs: f64 = x.iter().zip(tape_mat(&t, i)).map(|(a, b)| dot(a, &b)).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn concat_then_slice_round_trips(a in matrix(5), seed in 0u64..1000) {
        let mut g = rng(seed);
        let b = random_mat(&mut g, a.len(), 2);
        let mut t = Tape::new();
        let (av, bv) = (leaf(&mut t, &a), leaf(&mut t, &b));
        let c = t.concat(&[av, bv], 1).unwrap();
        let back_a = t.slice(c, 1, 0, a[0].len()).unwrap();
        let back_b = t.slice(c, 1, a[0].len(), 2).unwrap();
        prop_assert_eq!(tape_mat(&t, back_a), a.clone());
        prop_assert_eq!(tape_mat(&t, back_b), b);
        let r = t.concat(&[av, av], 0).unwrap();
        let lower = t.slice(r, 0, a.len(), a.len()).unwrap();
        prop_assert_eq!(tape_mat(&t, lower), a);
    }
}

#[test]
fn every_op_passes_finite_differences() {
    let results = op_gradchecks();
    assert!(results.len() >= 24);
    for (op, err) in &results {
        assert!(*err <= OP_TOL, "{op}: max relative error {err:e}");
    }
}

#[test]
fn every_module_passes_finite_differences() {
    for (m, err) in module_gradchecks() {
        assert!(err <= OP_TOL, "{m}: max relative error {err:e}");
    }
}

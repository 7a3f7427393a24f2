use autodiff::{grad_check, Rng, Tape, Tensor};
use proptest::prelude::*;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for t in 0..k {
                out[i * n + j] += a[i * k + t] * b[t * n + j];
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn tensor_length_matches_shape(dims in prop::collection::vec(1usize..5, 1..4), extra in 1usize..3) {
        let n: usize = dims.iter().product();
        prop_assert!(Tensor::<f64>::new(dims.clone(), vec![0.0; n]).is_ok());
        prop_assert!(Tensor::<f64>::new(dims.clone(), vec![0.0; n + extra]).is_err());
    }

    #[test]
    fn matmul_matches_loops(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = rng.uniform_tensor::<f64>(&[m, k], 2.0);
        let b = rng.uniform_tensor::<f64>(&[k, n], 2.0);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        let want = naive_matmul(a.data(), b.data(), m, k, n);
        prop_assert_eq!(tape.shape(c), &[m, n][..]);
        for (x, y) in tape.value(c).data().iter().zip(&want) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn stop_grad_leaves_only_the_live_path(x in values(5)) {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::new([5], x.clone()).unwrap(), true);
        let held = tape.stop_grad(v).unwrap();
        prop_assert_eq!(tape.value(held).data(), &x[..]);
        let both = tape.add(v, held).unwrap();
        let loss = tape.sum(both).unwrap();
        let g = tape.backward(loss).unwrap();
        prop_assert!(g.get(v).unwrap().data().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn broadcast_gradient_sums_rows(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut tape = Tape::new();
        let a = tape.leaf(rng.uniform_tensor::<f64>(&[rows, cols], 1.0), true);
        let b = tape.leaf(rng.uniform_tensor::<f64>(&[cols], 1.0), true);
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s).unwrap();
        let g = tape.backward(loss).unwrap();
        prop_assert!(g.get(b).unwrap().data().iter().all(|&d| d == rows as f64));
        prop_assert!(g.get(a).unwrap().data().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn composite_gradients_match_differences(x in values(6)) {
        let t = Tensor::new([2, 3], x).unwrap();
        let err = grad_check(
            |tape, v| {
                let a = tape.tanh(v)?;
                let b = tape.sin(v)?;
                let c = tape.mul(a, b)?;
                let d = tape.exp(c)?;
                let m = tape.reduce_mean(d, 1)?;
                let sq = tape.mul(m, m)?;
                tape.sum(sq)
            },
            &t,
            1e-5,
        )
        .unwrap();
        prop_assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn concat_then_narrow_round_trips(a in values(6), b in values(4)) {
        let mut tape = Tape::new();
        let va = tape.constant(Tensor::new([3, 2], a.clone()).unwrap());
        let vb = tape.constant(Tensor::new([2, 2], b.clone()).unwrap());
        let c = tape.concat(&[va, vb], 0).unwrap();
        let back_a = tape.narrow(c, 0, 0, 3).unwrap();
        let back_b = tape.narrow(c, 0, 3, 2).unwrap();
        prop_assert_eq!(tape.value(back_a).data(), &a[..]);
        prop_assert_eq!(tape.value(back_b).data(), &b[..]);
    }
}

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Where the largest disagreement between reverse-mode and central
/// differences was found.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error `|a − n| / max(1, |a|, |n|)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the tape gradient of a scalar function of one tensor with
/// central differences; returns the max relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps).map(|r| r.max_rel_error)
}

/// Multi-input variant of [`grad_check`].
pub fn grad_check_many<F>(f: F, xs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(TensorError::NonScalarRoot(v.shape().to_vec()));
        }
        let y = v.item();
        if !y.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check", index: 0 });
        }
        Ok(y)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(xs)
        .map(|(&v, x)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = xs.to_vec();
    for (input, x) in xs.iter().enumerate() {
        for index in 0..x.numel() {
            let orig = x.data()[index];
            probe[input].data_mut()[index] = orig + eps;
            let plus = eval(&probe)?;
            probe[input].data_mut()[index] = orig - eps;
            let minus = eval(&probe)?;
            probe[input].data_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[input].data()[index];
            let err = rel_error(a, numeric);
            if err > report.max_rel_error || err.is_nan() {
                report = GradCheckReport {
                    max_rel_error: err,
                    input,
                    index,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::RowMix;
    use crate::rng::Rng;

    const EPS: f64 = 1e-5;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        Rng::new(seed).uniform_tensor(shape, 1.0)
    }

    #[test]
    fn sum_of_squares() {
        let x = random(&[5], 1);
        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum(sq)
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn every_unary_op() {
        let x = random(&[6], 2).map(|v| v + 1.5); // positive for log
        for f in [
            Tape::tanh as fn(&mut Tape<f64>, Var) -> Result<Var>,
            Tape::exp,
            Tape::sin,
            Tape::cos,
            Tape::neg,
            Tape::log,
            Tape::relu,
        ] {
            let err = grad_check(
                |t, x| {
                    let y = f(t, x)?;
                    let w = t.constant(Tensor::from_f64(vec![6], &[0.3, -1.2, 0.7, 2.0, -0.4, 1.1])?);
                    let p = t.mul(y, w)?;
                    t.sum(p)
                },
                &x,
                EPS,
            )
            .unwrap();
            assert!(err < 1e-8, "{err}");
        }
    }

    #[test]
    fn binary_ops_with_broadcast() {
        let a = random(&[3, 4], 3);
        let b = random(&[4], 4).map(|v| v + 2.5);
        let report = grad_check_many(
            |t, v| {
                let s = t.add(v[0], v[1])?;
                let d = t.sub(s, v[1])?;
                let m = t.mul(d, v[1])?;
                let q = t.div(m, v[1])?;
                let q2 = t.div(v[1], m)?;
                let z = t.mul(q, q)?;
                let z2 = t.tanh(q2)?;
                let sz = t.sum(z)?;
                let sz2 = t.sum(z2)?;
                t.add(sz, sz2)
            },
            &[a, b],
            EPS,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn matmul_concat_narrow_reduce() {
        let a = random(&[3, 4], 5);
        let b = random(&[4, 2], 6);
        let report = grad_check_many(
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let bt = t.transpose(v[0])?;
                let q = t.matmul(bt, p)?;
                let c = t.concat(&[p, q, v[1]], 0)?;
                let n = t.narrow(c, 0, 1, 3)?;
                let r = t.reduce_mean(n, 1)?;
                let rs = t.reduce_sum(c, 0)?;
                let sq = t.mul(r, r)?;
                let s1 = t.sum(sq)?;
                let e = t.exp(rs)?;
                let s2 = t.mean(e)?;
                let res = t.reshape(c, vec![11, 2, 1])?;
                let rm = t.reduce_mean(res, 1)?;
                let s3 = t.sum(rm)?;
                let tot = t.add(s1, s2)?;
                t.add(tot, s3)
            },
            &[a, b],
            EPS,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn conv2d_with_bias() {
        let x = random(&[2, 6, 5], 7);
        let k = random(&[3, 2, 3, 3], 8);
        let b = random(&[3], 9);
        let report = grad_check_many(
            |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                let y = t.tanh(y)?;
                let y2 = t.mul(y, y)?;
                t.sum(y2)
            },
            &[x, k, b],
            EPS,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn gather_affine_clamp() {
        let x = random(&[4, 3], 10);
        let report = grad_check_many(
            |t, v| {
                let mut mix = RowMix::new();
                mix.push_row([(3, 0.25), (1, 0.75)]);
                mix.push_row([(0, 1.0)]);
                mix.push_row([(3, 1.0), (3, -0.5)]);
                let g = t.gather_rows(v[0], mix)?;
                let a = t.affine(g, 1.7, -0.2)?;
                let c = t.clamp(a, -0.9, 0.9)?;
                let c2 = t.mul(c, a)?;
                t.sum(c2)
            },
            &[x],
            EPS,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        crate::fault::set_flip_tanh_backward(true);
        let x = random(&[4], 11);
        let err = grad_check(
            |t, x| {
                let y = t.tanh(x)?;
                t.sum(y)
            },
            &x,
            EPS,
        );
        crate::fault::set_flip_tanh_backward(false);
        assert!(err.unwrap() > 0.1);
    }
}

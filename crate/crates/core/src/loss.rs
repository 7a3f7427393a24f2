//! Segmentation losses over per-point logits `[M × N]`.

use autodiff::{BackwardOp, Element, Tape, Tensor, Var};

use crate::{Error, Result};

/// Additive smoothing of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

pub fn check_labels(labels: &[u8], classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l as usize >= classes) {
        Some(index) => Err(Error::ClassId {
            id: labels[index],
            index,
            classes,
        }),
        None => Ok(()),
    }
}

/// Row-wise softmax of `[M × N]` logits.
pub fn softmax_rows<T: Element>(logits: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut z = T::zero();
        for &v in row {
            let e = (v - max).exp();
            z += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v = *v / z;
        }
    }
    out
}

fn shape_of<T: Element>(tape: &Tape<T>, logits: Var, labels: &[u8]) -> Result<(usize, usize)> {
    let s = tape.shape(logits);
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Config(format!(
            "logits {s:?} do not match {} labels",
            labels.len()
        )));
    }
    check_labels(labels, s[1])?;
    Ok((s[0], s[1]))
}

struct CrossEntropy {
    labels: Vec<u8>,
}

impl<T: Element> BackwardOp<T> for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let (m, n) = (x.shape()[0], x.shape()[1]);
        let mut p = softmax_rows(x.data(), n);
        let scale = grad.item() / T::from_usize(m);
        for (row, &l) in p.chunks_mut(n).zip(&self.labels) {
            row[l as usize] -= T::one();
            for v in row.iter_mut() {
                *v = *v * scale;
            }
        }
        vec![Some(Tensor::new(x.shape().to_vec(), p).unwrap())]
    }
}

/// Mean over rows of `−log softmax(logits)[label]`, via log-sum-exp.
pub fn ce_loss<T: Element>(tape: &mut Tape<T>, logits: Var, labels: &[u8]) -> Result<Var> {
    let (m, n) = shape_of(tape, logits, labels)?;
    let x = tape.value(logits);
    let mut total = T::zero();
    for (row, &l) in x.data().chunks(n).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).fold(T::zero(), |a, b| a + b).ln();
        total += lse - row[l as usize];
    }
    let v = Tensor::scalar(total / T::from_usize(m));
    Ok(tape.record(
        v,
        &[logits],
        CrossEntropy {
            labels: labels.to_vec(),
        },
    )?)
}

struct SoftDice {
    labels: Vec<u8>,
    eps: f64,
}

impl SoftDice {
    /// Per-class `(Σ p·g, Σ p, Σ g)`.
    fn sums<T: Element>(&self, p: &[T], n: usize) -> Vec<(T, T, T)> {
        let mut s = vec![(T::zero(), T::zero(), T::zero()); n];
        for (row, &l) in p.chunks(n).zip(&self.labels) {
            for (c, &v) in row.iter().enumerate() {
                s[c].1 += v;
                if c == l as usize {
                    s[c].0 += v;
                    s[c].2 += T::one();
                }
            }
        }
        s
    }
}

impl<T: Element> BackwardOp<T> for SoftDice {
    fn name(&self) -> &'static str {
        "soft_dice"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let n = x.shape()[1];
        let p = softmax_rows(x.data(), n);
        let eps = T::from_f64(self.eps);
        let two = T::from_f64(2.0);
        let sums = self.sums(&p, n);
        let scale = -grad.item() / T::from_usize(n);
        let mut out = vec![T::zero(); p.len()];
        let mut dp = vec![T::zero(); n];
        for ((prow, orow), &l) in p.chunks(n).zip(out.chunks_mut(n)).zip(&self.labels) {
            // d(dice_c)/d(p_c) for this row, then through the softmax
            for (c, d) in dp.iter_mut().enumerate() {
                let (i, ps, gs) = sums[c];
                let den = ps + gs + eps;
                let g = if c == l as usize { T::one() } else { T::zero() };
                *d = scale * (two * g * den - (two * i + eps)) / (den * den);
            }
            let dot = prow.iter().zip(&dp).fold(T::zero(), |a, (&pv, &dv)| a + pv * dv);
            for c in 0..n {
                orow[c] = prow[c] * (dp[c] - dot);
            }
        }
        vec![Some(Tensor::new(x.shape().to_vec(), out).unwrap())]
    }
}

/// `1 − mean_c (2 Σ p_c g_c + ε) / (Σ p_c + Σ g_c + ε)` over all classes,
/// with softmax probabilities `p` and one-hot targets `g`.
pub fn dice_loss<T: Element>(tape: &mut Tape<T>, logits: Var, labels: &[u8]) -> Result<Var> {
    let (_, n) = shape_of(tape, logits, labels)?;
    let op = SoftDice {
        labels: labels.to_vec(),
        eps: DICE_SMOOTH,
    };
    let p = softmax_rows(tape.value(logits).data(), n);
    let eps = T::from_f64(op.eps);
    let mean = op
        .sums(&p, n)
        .iter()
        .map(|&(i, ps, gs)| (T::from_f64(2.0) * i + eps) / (ps + gs + eps))
        .fold(T::zero(), |a, b| a + b)
        / T::from_usize(n);
    let v = Tensor::scalar(T::one() - mean);
    Ok(tape.record(v, &[logits], op)?)
}

/// Cross entropy plus soft Dice, weighted 1:1.
pub fn seg_loss<T: Element>(tape: &mut Tape<T>, logits: Var, labels: &[u8]) -> Result<Var> {
    let ce = ce_loss(tape, logits, labels)?;
    let dice = dice_loss(tape, logits, labels)?;
    Ok(tape.add(ce, dice)?)
}

/// Combined loss of fixed logits `[M × N]`, without gradients.
pub fn seg_loss_value<T: Element>(logits: &Tensor<T>, labels: &[u8]) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let l = seg_loss(&mut tape, x, labels)?;
    Ok(tape.value(l).item().as_f64())
}

/// `[N × H × W]` logits as `[H·W × N]` rows.
pub fn map_to_rows<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    let n = logits.shape()[0];
    let hw = logits.numel() / n;
    let mut out = vec![T::zero(); logits.numel()];
    for c in 0..n {
        for i in 0..hw {
            out[i * n + c] = logits.data()[c * hw + i];
        }
    }
    Tensor::new(vec![hw, n], out).expect("non-empty")
}

/// Per-pixel argmax class of `[N × H × W]` logits (first maximum wins).
pub fn argmax_map<T: Element>(logits: &Tensor<T>) -> Vec<u8> {
    let n = logits.shape()[0];
    let hw = logits.numel() / n;
    (0..hw)
        .map(|i| {
            let mut best = 0;
            for c in 1..n {
                if logits.data()[c * hw + i] > logits.data()[best * hw + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::{grad_check, Rng};

    fn value(f: impl Fn(&mut Tape<f64>, Var, &[u8]) -> Result<Var>, logits: &[f64], n: usize, labels: &[u8]) -> f64 {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_f64(vec![labels.len(), n], logits).unwrap());
        let l = f(&mut t, x, labels).unwrap();
        t.value(l).item()
    }

    #[test]
    fn ce_examples() {
        let confident = value(ce_loss, &[800.0, 0.0, 0.0, 800.0], 2, &[0, 1]);
        assert_eq!(confident, 0.0);
        let uniform = value(ce_loss, &[0.3, 0.3, -2.0, -2.0], 2, &[1, 0]);
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-12);
        // single pixel, three classes, label 2
        let (a, b, c) = (1.0f64, -0.5f64, 2.0f64);
        let hand = -(c.exp() / (a.exp() + b.exp() + c.exp())).ln();
        assert!((value(ce_loss, &[a, b, c], 3, &[2]) - hand).abs() < 1e-12);
    }

    #[test]
    fn ce_is_stable_for_large_logits() {
        let v = value(ce_loss, &[1000.0, -1000.0], 2, &[1]);
        assert!((v - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn bad_labels() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::zeros(vec![2, 2]));
        assert!(matches!(
            ce_loss(&mut t, x, &[0, 2]),
            Err(Error::ClassId { id: 2, index: 1, classes: 2 })
        ));
    }

    #[test]
    fn dice_examples() {
        // perfect one-hot prediction on 1024 pixels
        let labels: Vec<u8> = (0..1024).map(|i| (i % 3 == 0) as u8).collect();
        let logits: Vec<f64> = labels
            .iter()
            .flat_map(|&l| if l == 1 { [-100.0, 100.0] } else { [100.0, -100.0] })
            .collect();
        let v = value(dice_loss, &logits, 2, &labels);
        assert!((0.0..1e-3).contains(&v), "{v}");

        // uniform 0.5 everywhere: class c has I = G_c/2, P = n/2
        let n = 40usize;
        let labels: Vec<u8> = (0..n).map(|i| (i < 13) as u8).collect();
        let v = value(dice_loss, &vec![0.0; 2 * n], 2, &labels);
        let d = |g: f64| (g + 1.0) / (n as f64 / 2.0 + g + 1.0);
        let closed = 1.0 - (d(27.0) + d(13.0)) / 2.0;
        assert!((v - closed).abs() < 1e-12);

        // an absent class predicted absent scores 1
        let v = value(dice_loss, &[100.0, -100.0, 100.0, -100.0], 2, &[0, 0]);
        let absent = (0.0 + 1.0) / (2.0 * (-200.0f64).exp() + 1.0);
        let present = (2.0 * 2.0 + 1.0) / (2.0 + 2.0 + 1.0);
        assert!((v - (1.0 - (absent + present) / 2.0)).abs() < 1e-12);
        assert!((absent - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients() {
        let mut rng = Rng::new(3);
        for n in [2usize, 4] {
            let labels: Vec<u8> = (0..7).map(|_| rng.below(n) as u8).collect();
            let x = rng.uniform_tensor::<f64>(&[7, n], 2.0);
            for f in [ce_loss::<f64>, dice_loss::<f64>, seg_loss::<f64>] {
                let err = grad_check(|t, v| Ok(f(t, v, &labels).unwrap()), &x, 1e-5).unwrap();
                assert!(err < 1e-8, "{err}");
            }
        }
    }

    #[test]
    fn argmax_and_rows() {
        let logits = Tensor::<f64>::from_f64(vec![2, 1, 3], &[1.0, 0.0, 2.0, 0.5, 0.0, 3.0]).unwrap();
        assert_eq!(argmax_map(&logits), vec![0, 0, 1]);
        assert_eq!(map_to_rows(&logits).data(), &[1.0, 0.5, 0.0, 0.0, 2.0, 3.0]);
        let p = softmax_rows(map_to_rows(&logits).data(), 2);
        for row in p.chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
    }
}

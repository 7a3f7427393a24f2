//! Query generator: K quadruples `(Δx, Δy, w, h)` per target coordinate,
//! predicted by one fully connected layer from unfolded multiscale codes.

use autodiff::{BackwardOp, Bound, Element, ParamSet, Rng, Tape, Tensor, Var};

use crate::coords::{nearest_mix, nearest_sample, Coord};
use crate::encoder::LEVELS;
use crate::nn::Linear;
use crate::{Error, Result};

/// Log-scale bounds of the predicted cell extents:
/// `w = exp(τ1_w + τ2_w · tanh(raw))`, likewise `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauConfig {
    pub tau1_w: f64,
    pub tau2_w: f64,
    pub tau1_h: f64,
    pub tau2_h: f64,
}

impl TauConfig {
    pub fn symmetric(tau1: f64, tau2: f64) -> Self {
        TauConfig {
            tau1_w: tau1,
            tau2_w: tau2,
            tau1_h: tau1,
            tau2_h: tau2,
        }
    }

    /// `(−9/2 ln 2, 5/2 ln 2)`: cells between 1/128 and 1/4.
    pub fn glas() -> Self {
        let ln2 = std::f64::consts::LN_2;
        Self::symmetric(-4.5 * ln2, 2.5 * ln2)
    }

    /// `(ln(2/51), 2 ln 2)`.
    pub fn synapse() -> Self {
        Self::symmetric((2.0f64 / 51.0).ln(), 2.0 * std::f64::consts::LN_2)
    }

    /// `(ln(8√2/769), 5/2 ln 2)`.
    pub fn cityscapes() -> Self {
        Self::symmetric((8.0 * 2f64.sqrt() / 769.0).ln(), 2.5 * std::f64::consts::LN_2)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.tau1_w, self.tau2_w, self.tau1_h, self.tau2_h];
        if all.iter().any(|v| !v.is_finite()) || self.tau2_w <= 0.0 || self.tau2_h <= 0.0 {
            return Err(Error::Config(format!("invalid tau {self:?}: tau2 must be positive")));
        }
        Ok(())
    }

    pub fn w_range(&self) -> (f64, f64) {
        ((self.tau1_w - self.tau2_w).exp(), (self.tau1_w + self.tau2_w).exp())
    }

    pub fn h_range(&self) -> (f64, f64) {
        ((self.tau1_h - self.tau2_h).exp(), (self.tau1_h + self.tau2_h).exp())
    }

    /// Closed bounds just inside the open ranges of `(Δ, w, h)`. Saturated
    /// tanh reaches ±1 exactly in floating point, so outputs are clamped one
    /// step inward to keep every range open.
    pub fn inner_bounds<T: Element>(&self) -> [(T, T); 3] {
        let inward = |(lo, hi): (f64, f64)| (T::from_f64(lo).step_up(), T::from_f64(hi).step_down());
        [inward((-1.0, 1.0)), inward(self.w_range()), inward(self.h_range())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryQuadruple {
    pub dx: f64,
    pub dy: f64,
    pub w: f64,
    pub h: f64,
}

impl QueryQuadruple {
    /// Splits `4K` raw outputs into `(Δx, Δy, w, h)` groups of `K`.
    pub fn from_raw(raw: &[f64], k: usize, tau: &TauConfig) -> Vec<QueryQuadruple> {
        assert_eq!(raw.len(), 4 * k, "raw output width must be 4K");
        let [d, wb, hb] = tau.inner_bounds::<f64>();
        (0..k)
            .map(|i| QueryQuadruple {
                dx: raw[i].tanh().clamp(d.0, d.1),
                dy: raw[k + i].tanh().clamp(d.0, d.1),
                w: (tau.tau1_w + tau.tau2_w * raw[2 * k + i].tanh()).exp().clamp(wb.0, wb.1),
                h: (tau.tau1_h + tau.tau2_h * raw[3 * k + i].tanh()).exp().clamp(hb.0, hb.1),
            })
            .collect()
    }
}

/// Concatenates the 3×3 neighborhood of every pixel: output channel
/// `n·C + c` holds channel `c` of neighbor `n`, neighbors in row-major order
/// over offsets `(-1..=1) × (-1..=1)`, zeros outside the map.
pub fn unfold3x3<T: Element>(map: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    let mut out = vec![T::zero(); 9 * c * h * w];
    for n in 0..9 {
        let (dr, dc) = (n as isize / 3 - 1, n as isize % 3 - 1);
        for ch in 0..c {
            let dst = &mut out[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
            let src = &map.data()[ch * h * w..(ch + 1) * h * w];
            for r in 0..h {
                let sr = r as isize + dr;
                if sr < 0 || sr >= h as isize {
                    continue;
                }
                for col in 0..w {
                    let sc = col as isize + dc;
                    if sc >= 0 && sc < w as isize {
                        dst[r * w + col] = src[sr as usize * w + sc as usize];
                    }
                }
            }
        }
    }
    Tensor::new(vec![9 * c, h, w], out).expect("non-empty map")
}

struct Unfold3x3;

impl<T: Element> BackwardOp<T> for Unfold3x3 {
    fn name(&self) -> &'static str {
        "unfold3x3"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (c, h, w) = (inputs[0].shape()[0], inputs[0].shape()[1], inputs[0].shape()[2]);
        let mut g = vec![T::zero(); c * h * w];
        for n in 0..9 {
            let (dr, dc) = (n as isize / 3 - 1, n as isize % 3 - 1);
            for ch in 0..c {
                let src = &grad.data()[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
                let dst = &mut g[ch * h * w..(ch + 1) * h * w];
                for r in 0..h {
                    let sr = r as isize + dr;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    for col in 0..w {
                        let sc = col as isize + dc;
                        if sc >= 0 && sc < w as isize {
                            dst[sr as usize * w + sc as usize] += src[r * w + col];
                        }
                    }
                }
            }
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), g).unwrap())]
    }
}

/// Tape version of [`unfold3x3`].
pub fn unfold3x3_op<T: Element>(tape: &mut Tape<T>, map: Var) -> Result<Var> {
    let value = tape.value(map);
    if value.rank() != 3 {
        return Err(Error::Config(format!("unfold3x3 expects C×H×W, got {:?}", value.shape())));
    }
    let out = unfold3x3(value);
    Ok(tape.record(out, &[map], Unfold3x3)?)
}

/// Rearranges a `[C × H × W]` map into `[H·W × C]` rows.
pub fn to_rows<T: Element>(tape: &mut Tape<T>, map: Var) -> Result<Var> {
    let s = tape.shape(map).to_vec();
    let flat = tape.reshape(map, vec![s[0], s[1] * s[2]])?;
    Ok(tape.transpose(flat)?)
}

/// Per-point generator input: `[z_i*, p − p_i*]` for each level, using
/// nearest lookup on the given (unfolded or raw) maps.
pub fn gen_inr_features<T: Element>(p: Coord, maps: &[Tensor<T>]) -> Vec<T> {
    let p = p.clamped();
    let mut out = Vec::new();
    for map in maps {
        let s = nearest_sample(map, p);
        out.extend(s.z_star);
        out.push(T::from_f64(p.x - s.p_star.x));
        out.push(T::from_f64(p.y - s.p_star.y));
    }
    out
}

/// Tape handles of the four `[M × K]` query quantities.
#[derive(Debug, Clone, Copy)]
pub struct QueryVars {
    pub dx: Var,
    pub dy: Var,
    pub w: Var,
    pub h: Var,
}

#[derive(Debug, Clone)]
pub struct QueryGenerator {
    fc: Linear,
    k: usize,
    tau: TauConfig,
    unfold: bool,
}

impl QueryGenerator {
    pub fn input_width(channels: &[usize; LEVELS], unfold: bool) -> usize {
        let factor = if unfold { 9 } else { 1 };
        channels.iter().map(|c| factor * c).sum::<usize>() + 2 * LEVELS
    }

    pub fn new<T: Element>(
        params: &mut ParamSet<T>,
        rng: &mut Rng,
        channels: &[usize; LEVELS],
        k: usize,
        tau: TauConfig,
        unfold: bool,
    ) -> Self {
        assert!(k >= 1, "K must be positive");
        let fc = Linear::new(params, rng, "generator.fc", Self::input_width(channels, unfold), 4 * k);
        QueryGenerator { fc, k, tau, unfold }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tau(&self) -> &TauConfig {
        &self.tau
    }

    pub fn unfolds(&self) -> bool {
        self.unfold
    }

    pub fn num_scalars(&self) -> usize {
        self.fc.num_scalars()
    }

    /// Converts encoder maps into the `[H·W × C']` row layout the generator
    /// samples from (unfolded unless disabled).
    pub fn level_rows<T: Element>(&self, tape: &mut Tape<T>, map: Var) -> Result<Var> {
        let m = if self.unfold { unfold3x3_op(tape, map)? } else { map };
        to_rows(tape, m)
    }

    /// Raw `[M × 4K]` generator outputs for `points`.
    pub fn raw<T: Element>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        rows: &[Var; LEVELS],
        dims: &[(usize, usize); LEVELS],
        points: &[Coord],
    ) -> Result<Var> {
        let m = points.len();
        let mut parts = Vec::with_capacity(2 * LEVELS);
        for (level, &src) in rows.iter().enumerate() {
            let (h, w) = dims[level];
            let (mix, centers) = nearest_mix::<T>(points, h, w);
            parts.push(tape.gather_rows(src, mix)?);
            let offsets: Vec<T> = points
                .iter()
                .zip(&centers)
                .flat_map(|(p, c)| {
                    let p = p.clamped();
                    [T::from_f64(p.x - c.x), T::from_f64(p.y - c.y)]
                })
                .collect();
            parts.push(tape.constant(Tensor::new(vec![m, 2], offsets)?));
        }
        let x = tape.concat(&parts, 1)?;
        self.fc.forward(tape, bound, x)
    }

    /// Applies the bounded parameterization to raw outputs.
    pub fn queries<T: Element>(&self, tape: &mut Tape<T>, raw: Var) -> Result<QueryVars> {
        let k = self.k;
        let mut slice = |i: usize| -> Result<Var> {
            let s = tape.narrow(raw, 1, i * k, k)?;
            Ok(tape.tanh(s)?)
        };
        let (tx, ty, tw, th) = (slice(0)?, slice(1)?, slice(2)?, slice(3)?);
        let t = &self.tau;
        let [d, wb, hb] = t.inner_bounds::<T>();
        let w = tape.affine(tw, T::from_f64(t.tau2_w), T::from_f64(t.tau1_w))?;
        let h = tape.affine(th, T::from_f64(t.tau2_h), T::from_f64(t.tau1_h))?;
        let (w, h) = (tape.exp(w)?, tape.exp(h)?);
        Ok(QueryVars {
            dx: tape.clamp(tx, d.0, d.1)?,
            dy: tape.clamp(ty, d.0, d.1)?,
            w: tape.clamp(w, wb.0, wb.1)?,
            h: tape.clamp(h, hb.0, hb.1)?,
        })
    }

    /// Tape-free queries for one coordinate given generator input features.
    pub fn generate_queries<T: Element>(&self, params: &ParamSet<T>, features: &[T]) -> Vec<QueryQuadruple> {
        let w = params.value(self.fc.weight);
        let b = params.value(self.fc.bias);
        let (input, output) = (self.fc.input, self.fc.output);
        assert_eq!(features.len(), input, "generator input width");
        let raw: Vec<f64> = (0..output)
            .map(|o| {
                let acc = (0..input).fold(b.data()[o], |acc, i| acc + features[i] * w.data()[i * output + o]);
                acc.as_f64()
            })
            .collect();
        QueryQuadruple::from_raw(&raw, self.k, &self.tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unfold_single_pixel() {
        let m = Tensor::<f64>::from_f64(vec![1, 1, 1], &[7.0]).unwrap();
        let u = unfold3x3(&m);
        assert_eq!(u.data(), &[0., 0., 0., 0., 7., 0., 0., 0., 0.]);
    }

    #[test]
    fn unfold_constant_interior() {
        let m = Tensor::<f64>::full(vec![2, 5, 5], 3.0);
        let u = unfold3x3(&m);
        for ch in 0..18 {
            assert_eq!(u.get(&[ch, 2, 2]), 3.0);
        }
        // corner misses five neighbors per channel
        let zeros = (0..18).filter(|&ch| u.get(&[ch, 0, 0]) == 0.0).count();
        assert_eq!(zeros, 10);
    }

    #[test]
    fn unfold_matches_gather_oracle() {
        let m = Rng::new(5).uniform_tensor::<f64>(&[2, 3, 3], 1.0);
        let u = unfold3x3(&m);
        for r in 0..3i64 {
            for c in 0..3i64 {
                let mut expect = Vec::new();
                for dr in -1..=1i64 {
                    for dc in -1..=1i64 {
                        for ch in 0..2 {
                            let (rr, cc) = (r + dr, c + dc);
                            let inside = (0..3).contains(&rr) && (0..3).contains(&cc);
                            expect.push(if inside { m.get(&[ch, rr as usize, cc as usize]) } else { 0.0 });
                        }
                    }
                }
                let got: Vec<f64> = (0..18).map(|ch| u.get(&[ch, r as usize, c as usize])).collect();
                assert_eq!(got, expect);
            }
        }
    }

    #[test]
    fn unfold_gradient() {
        let x = Rng::new(6).uniform_tensor::<f64>(&[2, 3, 4], 1.0);
        let err = autodiff::grad_check(
            |t, x| {
                let u = unfold3x3_op(t, x).unwrap();
                let sq = t.mul(u, u)?;
                t.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn feature_width() {
        assert_eq!(QueryGenerator::input_width(&[32, 64, 96, 128], true), 2888);
        assert_eq!(QueryGenerator::input_width(&[32, 64, 96, 128], false), 328);
    }

    #[test]
    fn zero_maps_give_offsets_only() {
        let maps: Vec<Tensor<f64>> = [(2, 4), (2, 2), (1, 1), (1, 1)]
            .iter()
            .map(|&(h, w)| Tensor::zeros(vec![3, h, w]))
            .collect();
        let p = Coord::new(0.3, -0.6);
        let f = gen_inr_features(p, &maps);
        assert_eq!(f.len(), 4 * 5);
        assert_eq!(&f[0..3], &[0.0; 3]);
        assert!((f[3] - (0.3 - 0.25)).abs() < 1e-15);
        assert!((f[4] - (-0.6 + 0.5)).abs() < 1e-15);
        // single-pixel level: center is the origin
        assert_eq!(&f[18..20], &[0.3, -0.6]);
    }

    #[test]
    fn single_pixel_center_has_zero_offsets() {
        let maps: Vec<Tensor<f64>> = (0..4).map(|_| Tensor::ones(vec![2, 1, 1])).collect();
        let f = gen_inr_features(Coord::new(0.0, 0.0), &maps);
        for level in 0..4 {
            assert_eq!(&f[level * 4 + 2..level * 4 + 4], &[0.0, 0.0]);
        }
    }

    #[test]
    fn zero_raw_outputs() {
        let tau = TauConfig::glas();
        let q = QueryQuadruple::from_raw(&[0.0; 16], 4, &tau);
        for qq in q {
            assert_eq!((qq.dx, qq.dy), (0.0, 0.0));
            assert!((qq.w - 2f64.powf(-4.5)).abs() < 1e-15);
            assert!((qq.w - 0.04419417382415922).abs() < 1e-12);
            assert_eq!(qq.w, qq.h);
        }
    }

    #[test]
    fn saturated_outputs_stay_open() {
        let tau = TauConfig::glas();
        for big in [30.0, -30.0, 1e300] {
            let q = QueryQuadruple::from_raw(&[big; 4], 1, &tau)[0];
            assert!(q.dx.abs() < 1.0 && q.dy.abs() < 1.0);
            assert!(q.w > 1.0 / 128.0 && q.w < 0.25, "{}", q.w);
        }
        let mut tape = Tape::<f32>::new();
        let raw = tape.constant(Tensor::from_f64(vec![2, 4], &[20.0, -20.0, 20.0, -20.0, -20.0, 20.0, -20.0, 20.0]).unwrap());
        let mut params = ParamSet::<f32>::new();
        let g = QueryGenerator::new(&mut params, &mut Rng::new(1), &[1; 4], 1, tau, false);
        let q = g.queries(&mut tape, raw).unwrap();
        for v in [q.dx, q.dy] {
            assert!(tape.value(v).data().iter().all(|x| x.abs() < 1.0));
        }
        for v in [q.w, q.h] {
            assert!(tape.value(v).data().iter().all(|&x| x > 1.0 / 128.0 && x < 0.25));
        }
    }

    #[test]
    fn glas_limits() {
        let (lo, hi) = TauConfig::glas().w_range();
        assert!((lo - 1.0 / 128.0).abs() < 1e-15);
        assert!((hi - 0.25).abs() < 1e-15);
        let (lo, hi) = TauConfig::synapse().w_range();
        assert!((lo - 2.0 / 51.0 / 4.0).abs() < 1e-15);
        assert!((hi - 8.0 / 51.0).abs() < 1e-15);
    }

    #[test]
    fn tape_queries_match_value_path() {
        let mut params = ParamSet::<f64>::new();
        let mut rng = Rng::new(11);
        let chans = [2, 3, 2, 2];
        let g = QueryGenerator::new(&mut params, &mut rng, &chans, 3, TauConfig::synapse(), true);
        let maps: Vec<Tensor<f64>> = [(8, 8), (4, 4), (2, 2), (1, 1)]
            .iter()
            .zip(chans)
            .map(|(&(h, w), c)| rng.uniform_tensor(&[c, h, w], 2.0))
            .collect();
        let points = vec![Coord::new(0.1, 0.7), Coord::new(-0.9, 0.2), Coord::new(1.3, -1.0)];

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let mut rows = Vec::new();
        let mut dims = [(0, 0); LEVELS];
        for (i, m) in maps.iter().enumerate() {
            let v = tape.constant(m.clone());
            rows.push(g.level_rows(&mut tape, v).unwrap());
            dims[i] = (m.shape()[1], m.shape()[2]);
        }
        let rows: [Var; LEVELS] = rows.try_into().unwrap();
        let raw = g.raw(&mut tape, &bound, &rows, &dims, &points).unwrap();
        let q = g.queries(&mut tape, raw).unwrap();

        let unfolded: Vec<Tensor<f64>> = maps.iter().map(unfold3x3).collect();
        for (m, &p) in points.iter().enumerate() {
            let expect = g.generate_queries(&params, &gen_inr_features(p, &unfolded));
            for (k, e) in expect.iter().enumerate() {
                let at = |v: Var| tape.value(v).get(&[m, k]);
                assert!((at(q.dx) - e.dx).abs() < 1e-12);
                assert!((at(q.dy) - e.dy).abs() < 1e-12);
                assert!((at(q.w) - e.w).abs() < 1e-12);
                assert!((at(q.h) - e.h).abs() < 1e-12);
            }
        }
    }
}

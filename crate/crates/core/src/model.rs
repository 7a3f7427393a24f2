//! End-to-end decoders: the query-based aligning decoder and the
//! interpolate-and-classify baseline, both on top of the same encoder.

use std::collections::BTreeMap;
use std::fmt;

use autodiff::rng::derive_seed;
use autodiff::{Bound, Element, ParamSet, Rng, Tape, Tensor, Var};

use crate::ablation::Ablation;
use crate::coords::{bilinear_mix, grid_coords, nearest_mix, Coord};
use crate::encoder::{Encoder, EncoderConfig, LEVELS};
use crate::nn::{mlp_scalars, Mlp};
use crate::pyramid::{Fcfp, FcfpConfig, LevelInputs, PlanCache};
use crate::query::{to_rows, QueryGenerator, QueryVars, TauConfig};
use crate::{Error, Result};

const INIT_TAG: u64 = 0x1a17;

/// Points decoded per tape during map decoding.
const DECODE_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Queries per coordinate.
    pub k: usize,
    pub tau: TauConfig,
    pub fcfp: FcfpConfig,
    pub head_hidden: usize,
    pub classes: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            k: 4,
            tau: TauConfig::glas(),
            fcfp: FcfpConfig::default(),
            head_hidden: 128,
            classes: 2,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        self.tau.validate()?;
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.classes < 2 {
            return bad("classes must be at least 2");
        }
        if self.fcfp.s == 0 {
            return bad("s must be at least 1");
        }
        if self.fcfp.freqs == 0 || self.fcfp.cell_width == 0 || self.fcfp.out_width == 0 {
            return bad("freqs, cell_width and out_width must be positive");
        }
        if self.head_hidden == 0 || self.fcfp.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        let e = &self.encoder;
        if !(e.in_channels == 1 || e.in_channels == 3) {
            return bad("in_channels must be 1 or 3");
        }
        if e.stem_width == 0 || e.channels.contains(&0) {
            return bad("encoder widths must be positive");
        }
        Ok(())
    }
}

/// Which paths from the feature maps into the pyramid stay differentiable.
/// Used to probe the two routes separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradPath {
    #[default]
    All,
    /// Only the aggregated-coordinate route sees live maps.
    CoordinateOnly,
    /// Only the averaged-code route sees live maps.
    LatentOnly,
}

/// Scalar counts per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub entries: Vec<(String, usize)>,
}

impl ParamReport {
    pub fn from_params<T: Element>(params: &ParamSet<T>) -> Self {
        ParamReport {
            entries: params.iter().map(|p| (p.name.clone(), p.value.numel())).collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Scalars in tensors whose names start with `prefix`.
    pub fn group(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|e| e.0.starts_with(prefix)).map(|e| e.1).sum()
    }

    /// Everything except the encoder.
    pub fn decoder(&self) -> usize {
        self.total() - self.group("encoder.")
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.0 == name)
    }

    fn groups(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for (name, n) in &self.entries {
            let key = match name.split('.').next() {
                Some("fcfp") if name.starts_with("fcfp.mlp") => "fcfp.mlp",
                Some("fcfp") => name.as_str(),
                Some(first) => first,
                None => name.as_str(),
            };
            *out.entry(key).or_default() += n;
        }
        out
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (group, n) in self.groups() {
            writeln!(f, "{group:<18} {n:>10}")?;
        }
        writeln!(f, "{:<18} {:>10}", "decoder", self.decoder())?;
        write!(f, "{:<18} {:>10}", "total", self.total())
    }
}

/// A dense per-point classifier over an encoded image.
pub trait Segmenter<T: Element>: Send + Sync {
    fn params(&self) -> &ParamSet<T>;

    fn params_mut(&mut self) -> &mut ParamSet<T>;

    fn classes(&self) -> usize;

    fn encoder(&self) -> &Encoder;

    /// Logits `[M × N]` at `points` from encoder maps already on the tape.
    fn forward_from_maps(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        maps: [Var; LEVELS],
        points: &[Coord],
        plans: &mut PlanCache,
    ) -> Result<Var>;

    /// Encodes `image` and decodes logits `[M × N]` at `points`.
    fn forward_points(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        image: Var,
        points: &[Coord],
        plans: &mut PlanCache,
    ) -> Result<Var> {
        let maps = self.encoder().forward(tape, bound, image)?;
        self.forward_from_maps(tape, bound, maps, points, plans)
    }

    /// Logits `[N × Hq × Wq]` on the pixel-center grid of the requested
    /// resolution, independent of the input size.
    fn decode_map(&self, image: &Tensor<T>, hq: usize, wq: usize) -> Result<Tensor<T>> {
        if hq == 0 || wq == 0 {
            return Err(Error::Config("query resolution must be positive".into()));
        }
        let maps = self.encoder().encode(self.params(), image)?;
        let coords = grid_coords(hq, wq);
        let n = self.classes();
        let mut out = vec![T::zero(); n * hq * wq];
        for (chunk_index, chunk) in coords.chunks(DECODE_CHUNK).enumerate() {
            let mut tape = Tape::new();
            let bound = self.params().bind_constant(&mut tape);
            let vars = maps.maps.clone().map(|m| tape.constant(m));
            let logits = self.forward_from_maps(&mut tape, &bound, vars, chunk, &mut PlanCache::live())?;
            let base = chunk_index * DECODE_CHUNK;
            for (m, row) in tape.value(logits).data().chunks(n).enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    out[c * hq * wq + base + m] = v;
                }
            }
        }
        Ok(Tensor::new(vec![n, hq, wq], out)?)
    }

    fn report(&self) -> ParamReport {
        ParamReport::from_params(self.params())
    }
}

/// Tape handles produced by one decoder pass.
#[derive(Debug, Clone, Copy)]
pub struct Q2AVars {
    pub logits: Var,
    pub queries: QueryVars,
    /// `[M·K × C_a]`, rows ordered by point then query.
    pub aligned: Var,
}

/// Dense outputs of a full-map decode.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput<T> {
    /// `[N × Hq × Wq]`.
    pub logits: Tensor<T>,
    /// `[4K × Hq × Wq]`: `Δx_1..K, Δy_1..K, w_1..K, h_1..K`.
    pub queries: Tensor<T>,
    /// `[C_a·K × Hq × Wq]`: query-major blocks of `C_a` channels.
    pub aligned: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Q2AModel<T: Element> {
    config: ModelConfig,
    params: ParamSet<T>,
    encoder: Encoder,
    generator: QueryGenerator,
    fcfp: Fcfp,
    head: Mlp,
}

impl<T: Element> Q2AModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(derive_seed(seed, INIT_TAG));
        let mut params = ParamSet::new();
        let encoder = Encoder::new(config.encoder.clone(), &mut params, &mut rng);
        let channels = config.encoder.channels;
        let generator = QueryGenerator::new(
            &mut params,
            &mut rng,
            &channels,
            config.k,
            config.tau,
            !config.ablation.no_unfold,
        );
        let fcfp = Fcfp::new(&mut params, &mut rng, &channels, config.fcfp.clone(), config.ablation);
        let head = Mlp::new(
            &mut params,
            &mut rng,
            "head",
            &[config.k * config.fcfp.out_width, config.head_hidden, config.classes],
        );
        Ok(Q2AModel {
            config,
            params,
            encoder,
            generator,
            fcfp,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn generator(&self) -> &QueryGenerator {
        &self.generator
    }

    pub fn fcfp(&self) -> &Fcfp {
        &self.fcfp
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    /// Decoder scalars (generator, pyramid and head) implied by `config`.
    pub fn decoder_scalars(config: &ModelConfig) -> usize {
        let ch = &config.encoder.channels;
        let gen = mlp_scalars(&[QueryGenerator::input_width(ch, !config.ablation.no_unfold), 4 * config.k]);
        let mut widths = vec![Fcfp::input_width(ch, &config.fcfp, &config.ablation)];
        widths.extend(&config.fcfp.hidden);
        widths.push(config.fcfp.out_width);
        let a = &config.ablation;
        let fcfp = mlp_scalars(&widths)
            + if a.no_spatial_enc { 0 } else { config.fcfp.freqs }
            + if a.no_cell_embed { 0 } else { config.fcfp.cell_width };
        let head = mlp_scalars(&[config.k * config.fcfp.out_width, config.head_hidden, config.classes]);
        gen + fcfp + head
    }

    /// Full pass from encoder maps, with control over which map paths carry
    /// gradients.
    pub fn forward_parts(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        maps: [Var; LEVELS],
        points: &[Coord],
        plans: &mut PlanCache,
        path: GradPath,
    ) -> Result<Q2AVars> {
        if points.is_empty() {
            return Err(Error::Config("no query points".into()));
        }
        let mut dims = [(0, 0); LEVELS];
        for (d, &m) in dims.iter_mut().zip(&maps) {
            let s = tape.shape(m);
            *d = (s[1], s[2]);
        }
        let detach = |tape: &mut Tape<T>, v: Var, on: bool| -> Result<Var> {
            Ok(if on { tape.stop_grad(v)? } else { v })
        };
        let coord_only = path == GradPath::CoordinateOnly;
        let latent_only = path == GradPath::LatentOnly;

        let mut gen_rows = maps;
        for r in gen_rows.iter_mut() {
            let src = detach(tape, *r, coord_only)?;
            *r = self.generator.level_rows(tape, src)?;
        }
        let raw = self.generator.raw(tape, bound, &gen_rows, &dims, points)?;
        let q = self.generator.queries(tape, raw)?;

        let (m, k) = (points.len(), self.config.k);
        let stack = |tape: &mut Tape<T>, a: Var, b: Var| -> Result<Var> {
            let a3 = tape.reshape(a, vec![m, k, 1])?;
            let b3 = tape.reshape(b, vec![m, k, 1])?;
            let ab = tape.concat(&[a3, b3], 2)?;
            Ok(tape.reshape(ab, vec![m * k, 2])?)
        };
        let delta = stack(tape, q.dx, q.dy)?;
        let delta = tape.reshape(delta, vec![m, k, 2])?;
        let base: Vec<T> = points
            .iter()
            .flat_map(|p| {
                let p = p.clamped();
                [T::from_f64(p.x), T::from_f64(p.y)]
            })
            .collect();
        let base = tape.constant(Tensor::new(vec![m, 1, 2], base)?);
        let shifted = tape.add(delta, base)?;
        let shifted = tape.clamp(shifted, -T::one(), T::one())?;
        let p_hat = tape.reshape(shifted, vec![m * k, 2])?;
        let cell = stack(tape, q.w, q.h)?;

        let mut latent = maps;
        let mut vote = maps;
        for i in 0..LEVELS {
            let rows = to_rows(tape, maps[i])?;
            latent[i] = detach(tape, rows, coord_only)?;
            vote[i] = detach(tape, rows, latent_only)?;
        }
        let levels = LevelInputs { latent, vote, dims };
        let aligned = self.fcfp.forward(tape, bound, &levels, p_hat, cell, plans)?;
        let fused = tape.reshape(aligned, vec![m, k * self.config.fcfp.out_width])?;
        let logits = self.head.forward(tape, bound, fused)?;
        Ok(Q2AVars {
            logits,
            queries: q,
            aligned,
        })
    }

    /// Logits for `K` aligned features of one coordinate, fused in query
    /// order.
    pub fn head_forward(&self, aligned: &[Vec<T>]) -> Result<Vec<T>> {
        if aligned.len() != self.config.k {
            return Err(Error::FeatureCount {
                expected: self.config.k,
                got: aligned.len(),
            });
        }
        let flat: Vec<T> = aligned.concat();
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let x = tape.constant(Tensor::new(vec![1, flat.len()], flat)?);
        let y = self.head.forward(&mut tape, &bound, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Logits together with the dense query and aligned-feature maps.
    pub fn decode_full(&self, image: &Tensor<T>, hq: usize, wq: usize) -> Result<DecodeOutput<T>> {
        if hq == 0 || wq == 0 {
            return Err(Error::Config("query resolution must be positive".into()));
        }
        let maps = self.encoder.encode(&self.params, image)?;
        let coords = grid_coords(hq, wq);
        let (n, k, ca, hw) = (self.config.classes, self.config.k, self.config.fcfp.out_width, hq * wq);
        let mut logits = vec![T::zero(); n * hw];
        let mut queries = vec![T::zero(); 4 * k * hw];
        let mut aligned = vec![T::zero(); ca * k * hw];
        for (ci, chunk) in coords.chunks(DECODE_CHUNK).enumerate() {
            let base = ci * DECODE_CHUNK;
            let mut tape = Tape::new();
            let bound = self.params.bind_constant(&mut tape);
            let vars = maps.maps.clone().map(|m| tape.constant(m));
            let out = self.forward_parts(&mut tape, &bound, vars, chunk, &mut PlanCache::live(), GradPath::All)?;
            for (m, row) in tape.value(out.logits).data().chunks(n).enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    logits[c * hw + base + m] = v;
                }
            }
            let q = &out.queries;
            for (slot, var) in [q.dx, q.dy, q.w, q.h].into_iter().enumerate() {
                for (m, row) in tape.value(var).data().chunks(k).enumerate() {
                    for (kk, &v) in row.iter().enumerate() {
                        queries[(slot * k + kk) * hw + base + m] = v;
                    }
                }
            }
            for (m, row) in tape.value(out.aligned).data().chunks(k * ca).enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    aligned[c * hw + base + m] = v;
                }
            }
        }
        Ok(DecodeOutput {
            logits: Tensor::new(vec![n, hq, wq], logits)?,
            queries: Tensor::new(vec![4 * k, hq, wq], queries)?,
            aligned: Tensor::new(vec![ca * k, hq, wq], aligned)?,
        })
    }
}

impl<T: Element> Segmenter<T> for Q2AModel<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn classes(&self) -> usize {
        self.config.classes
    }

    fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    fn forward_from_maps(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        maps: [Var; LEVELS],
        points: &[Coord],
        plans: &mut PlanCache,
    ) -> Result<Var> {
        Ok(self.forward_parts(tape, bound, maps, points, plans, GradPath::All)?.logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    Bilinear,
}

impl std::str::FromStr for Interp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interp::Nearest),
            "bilinear" => Ok(Interp::Bilinear),
            other => Err(Error::Config(format!("unknown interpolation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub encoder: EncoderConfig,
    pub interp: Interp,
    /// Width of both hidden layers.
    pub hidden: usize,
    pub classes: usize,
}

impl BaselineConfig {
    /// Baseline whose decoder scalar count is closest to the aligning
    /// decoder built from `config`.
    pub fn matched(config: &ModelConfig, interp: Interp) -> Self {
        let target = Q2AModel::<f64>::decoder_scalars(config);
        BaselineConfig {
            encoder: config.encoder.clone(),
            interp,
            hidden: matched_hidden(config.encoder.channels.iter().sum(), config.classes, target),
            classes: config.classes,
        }
    }

    pub fn decoder_scalars(&self) -> usize {
        let input: usize = self.encoder.channels.iter().sum();
        mlp_scalars(&[input, self.hidden, self.hidden, self.classes])
    }
}

/// Hidden width `h` minimizing `|h² + h(C + N + 2) + N − target|` for a
/// two-hidden-layer MLP from `C` inputs to `N` outputs.
pub fn matched_hidden(input: usize, classes: usize, target: usize) -> usize {
    let count = |h: usize| mlp_scalars(&[input, h, h, classes]);
    let b = (input + classes + 2) as f64;
    let c = classes as f64 - target as f64;
    let root = ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).max(1.0) as usize;
    (root.saturating_sub(1).max(1)..=root + 2)
        .min_by_key(|&h| count(h).abs_diff(target))
        .unwrap()
}

/// Interpolates every map at the query point, concatenates the codes and
/// classifies them with a two-hidden-layer MLP.
#[derive(Debug, Clone)]
pub struct BaselineModel<T: Element> {
    config: BaselineConfig,
    params: ParamSet<T>,
    encoder: Encoder,
    mlp: Mlp,
}

impl<T: Element> BaselineModel<T> {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 || config.classes < 2 {
            return Err(Error::Config("baseline needs hidden >= 1 and classes >= 2".into()));
        }
        let mut rng = Rng::new(derive_seed(seed, INIT_TAG));
        let mut params = ParamSet::new();
        let encoder = Encoder::new(config.encoder.clone(), &mut params, &mut rng);
        let input: usize = config.encoder.channels.iter().sum();
        let mlp = Mlp::new(
            &mut params,
            &mut rng,
            "baseline.mlp",
            &[input, config.hidden, config.hidden, config.classes],
        );
        Ok(BaselineModel {
            config,
            params,
            encoder,
            mlp,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }
}

impl<T: Element> Segmenter<T> for BaselineModel<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn classes(&self) -> usize {
        self.config.classes
    }

    fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    fn forward_from_maps(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        maps: [Var; LEVELS],
        points: &[Coord],
        _plans: &mut PlanCache,
    ) -> Result<Var> {
        let mut parts = Vec::with_capacity(LEVELS);
        for &m in &maps {
            let (h, w) = (tape.shape(m)[1], tape.shape(m)[2]);
            let rows = to_rows(tape, m)?;
            let mix = match self.config.interp {
                Interp::Nearest => nearest_mix(points, h, w).0,
                Interp::Bilinear => bilinear_mix(points, h, w),
            };
            parts.push(tape.gather_rows(rows, mix)?);
        }
        let x = tape.concat(&parts, 1)?;
        self.mlp.forward(tape, bound, x)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                in_channels: 1,
                stem_width: 4,
                channels: [4, 8, 8, 8],
            },
            k: 2,
            tau: TauConfig::glas(),
            fcfp: FcfpConfig {
                s: 2,
                freqs: 2,
                cell_width: 2,
                out_width: 6,
                hidden: vec![8, 8],
            },
            head_hidden: 8,
            classes: 3,
            ablation: Ablation::default(),
        }
    }

    #[test]
    fn decode_shapes() {
        let model = Q2AModel::<f64>::new(tiny_config(), 1).unwrap();
        let img = Rng::new(2).uniform_tensor::<f64>(&[1, 64, 64], 1.0);
        let out = model.decode_full(&img, 64, 64).unwrap();
        assert_eq!(out.logits.shape(), &[3, 64, 64]);
        assert_eq!(out.queries.shape(), &[4 * 2, 64, 64]);
        assert_eq!(out.aligned.shape(), &[6 * 2, 64, 64]);
        let odd = model.decode_map(&img, 17, 100).unwrap();
        assert_eq!(odd.shape(), &[3, 17, 100]);
        // the trait decode agrees with the full decode
        let same = model.decode_map(&img, 64, 64).unwrap();
        assert_eq!(same, out.logits);
    }

    #[test]
    fn decode_is_repeatable() {
        let model = Q2AModel::<f64>::new(tiny_config(), 1).unwrap();
        let img = Rng::new(3).uniform_tensor::<f64>(&[1, 32, 32], 1.0);
        assert_eq!(model.decode_map(&img, 20, 20).unwrap(), model.decode_map(&img, 20, 20).unwrap());
        let again = Q2AModel::<f64>::new(tiny_config(), 1).unwrap();
        assert_eq!(model.decode_map(&img, 20, 20).unwrap(), again.decode_map(&img, 20, 20).unwrap());
    }

    #[test]
    fn head_contract() {
        let model = Q2AModel::<f64>::new(tiny_config(), 5).unwrap();
        assert!(matches!(
            model.head_forward(&[vec![0.0; 6]]),
            Err(Error::FeatureCount { expected: 2, got: 1 })
        ));
        // zero features: logits = W₁ᵀ relu(b₀) + b₁
        let z = model.head_forward(&[vec![0.0; 6], vec![0.0; 6]]).unwrap();
        let p = model.params();
        let val = |n: &str| p.value(p.find(n).unwrap()).data().to_vec();
        let (b0, w1, b1) = (val("head.0.bias"), val("head.1.weight"), val("head.1.bias"));
        for c in 0..3 {
            let want: f64 = b1[c] + (0..8).map(|h| b0[h].max(0.0) * w1[h * 3 + c]).sum::<f64>();
            assert!((z[c] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn ablations_change_the_report() {
        let full = Q2AModel::<f64>::new(tiny_config(), 1).unwrap().report();
        assert!(full.contains("fcfp.omega") && full.contains("fcfp.cell_embed"));
        for flag in Ablation::FLAGS {
            let mut cfg = tiny_config();
            cfg.ablation.set(flag, true).unwrap();
            let model = Q2AModel::<f64>::new(cfg.clone(), 1).unwrap();
            let img = Rng::new(4).uniform_tensor::<f64>(&[1, 32, 32], 1.0);
            assert_eq!(model.decode_map(&img, 5, 7).unwrap().shape(), &[3, 5, 7]);
            let r = model.report();
            assert_eq!(r.decoder(), Q2AModel::<f64>::decoder_scalars(&cfg), "{flag}");
            match flag {
                "no_cell_embed" => assert!(!r.contains("fcfp.cell_embed") && r.decoder() < full.decoder()),
                "no_spatial_enc" => assert!(!r.contains("fcfp.omega") && r.decoder() < full.decoder()),
                "no_unfold" => assert!(r.group("generator.") < full.group("generator.")),
                _ => assert_eq!(r, full, "{flag}"),
            }
        }
    }

    #[test]
    fn baseline_is_parameter_matched() {
        for cfg in [tiny_config(), ModelConfig::default()] {
            let target = Q2AModel::<f64>::decoder_scalars(&cfg);
            let b = BaselineConfig::matched(&cfg, Interp::Nearest);
            let got = b.decoder_scalars() as f64;
            assert!((got / target as f64 - 1.0).abs() <= 0.10, "{got} vs {target}");
            let model = BaselineModel::<f64>::new(b, 1).unwrap();
            assert_eq!(model.report().decoder() as f64, got);
        }
    }

    #[test]
    fn baseline_constant_maps_give_constant_logits() {
        let cfg = BaselineConfig::matched(&tiny_config(), Interp::Bilinear);
        let mut model = BaselineModel::<f64>::new(cfg, 1).unwrap();
        // zero encoder biases keep zero padding from marking the borders
        for p in model.params_mut().iter_mut().filter(|p| p.name.starts_with("encoder") && p.name.ends_with(".bias")) {
            p.value = p.value.map(|_| 0.0);
        }
        let img = Tensor::<f64>::full(vec![1, 32, 32], 0.0);
        let out = model.decode_map(&img, 9, 13).unwrap();
        for c in 0..3 {
            let v = out.get(&[c, 0, 0]);
            for r in 0..9 {
                for x in 0..13 {
                    assert_eq!(out.get(&[c, r, x]), v);
                }
            }
        }
    }
}

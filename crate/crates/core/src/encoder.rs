//! Small convolutional backbone producing four feature maps at strides 4,
//! 8, 16 and 32.

use autodiff::{Bound, Element, ParamId, ParamSet, Rng, Tape, Tensor, Var};

use crate::nn::init_uniform;
use crate::{Error, Result};

/// Number of pyramid levels (`F2..F5`).
pub const LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stem_width: usize,
    pub channels: [usize; LEVELS],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 1,
            stem_width: 16,
            channels: [32, 64, 96, 128],
        }
    }
}

impl EncoderConfig {
    pub fn stride(level: usize) -> usize {
        4 << level
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    convs: Vec<ConvLayer>,
}

/// Indices into the conv stack after which `F2..F5` are read.
const TAPS: [usize; LEVELS] = [1, 3, 5, 7];

/// The four maps `F2..F5`, each `[C_i × H/2^i × W/2^i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet<T> {
    pub maps: [Tensor<T>; LEVELS],
}

impl Encoder {
    pub fn new<T: Element>(config: EncoderConfig, params: &mut ParamSet<T>, rng: &mut Rng) -> Self {
        let c = config.channels;
        let plan = [
            ("stem.0", config.in_channels, config.stem_width, 2),
            ("stem.1", config.stem_width, c[0], 2),
            ("block3.0", c[0], c[1], 2),
            ("block3.1", c[1], c[1], 1),
            ("block4.0", c[1], c[2], 2),
            ("block4.1", c[2], c[2], 1),
            ("block5.0", c[2], c[3], 2),
            ("block5.1", c[3], c[3], 1),
        ];
        let convs = plan
            .iter()
            .map(|&(name, cin, cout, stride)| {
                let fan_in = cin * 9;
                let weight = params.add(format!("encoder.{name}.weight"), init_uniform(rng, &[cout, cin, 3, 3], fan_in));
                let bias = params.add(format!("encoder.{name}.bias"), init_uniform(rng, &[cout], fan_in));
                ConvLayer { weight, bias, stride }
            })
            .collect();
        Encoder { config, convs }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != self.config.in_channels {
            return Err(Error::Config(format!(
                "expected a {}×H×W image, got shape {shape:?}",
                self.config.in_channels
            )));
        }
        let (height, width) = (shape[1], shape[2]);
        if height % 32 != 0 || width % 32 != 0 {
            return Err(Error::InputSize { height, width });
        }
        Ok(())
    }

    /// Encodes a `[C_I × H × W]` image on the tape, returning `F2..F5`.
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, image: Var) -> Result<[Var; LEVELS]> {
        self.check_input(tape.shape(image))?;
        let mut x = image;
        let mut out = [x; LEVELS];
        for (i, conv) in self.convs.iter().enumerate() {
            x = tape.conv2d(x, bound.var(conv.weight), Some(bound.var(conv.bias)), conv.stride, 1)?;
            x = tape.relu(x)?;
            if let Some(level) = TAPS.iter().position(|&t| t == i) {
                out[level] = x;
            }
        }
        Ok(out)
    }

    /// Tape-free encoding.
    pub fn encode<T: Element>(&self, params: &ParamSet<T>, image: &Tensor<T>) -> Result<FeatureMapSet<T>> {
        let mut tape = Tape::new();
        let bound = params.bind_constant(&mut tape);
        let x = tape.constant(image.clone());
        let vars = self.forward(&mut tape, &bound, x)?;
        Ok(FeatureMapSet {
            maps: vars.map(|v| tape.value(v).clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(config: EncoderConfig) -> (Encoder, ParamSet<f64>) {
        let mut params = ParamSet::new();
        let enc = Encoder::new(config, &mut params, &mut Rng::new(3));
        (enc, params)
    }

    #[test]
    fn shape_contract() {
        let (enc, params) = build(EncoderConfig::default());
        let f = enc.encode(&params, &Tensor::zeros(vec![1, 64, 64])).unwrap();
        let shapes: Vec<_> = f.maps.iter().map(|m| m.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![32, 16, 16], vec![64, 8, 8], vec![96, 4, 4], vec![128, 2, 2]]);

        let (enc, params) = build(EncoderConfig {
            in_channels: 3,
            ..EncoderConfig::default()
        });
        let f = enc.encode(&params, &Tensor::zeros(vec![3, 224, 224])).unwrap();
        assert_eq!(f.maps[3].shape(), &[128, 7, 7]);
    }

    #[test]
    fn zero_image_and_biases_give_zero_maps() {
        let (enc, mut params) = build(EncoderConfig::default());
        for p in params.iter_mut().filter(|p| p.name.ends_with(".bias")) {
            p.value = p.value.map(|_| 0.0);
        }
        let f = enc.encode(&params, &Tensor::zeros(vec![1, 32, 64])).unwrap();
        assert!(f.maps.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_bad_sizes() {
        let (enc, params) = build(EncoderConfig::default());
        assert!(matches!(
            enc.encode(&params, &Tensor::zeros(vec![1, 48, 64])),
            Err(Error::InputSize { height: 48, width: 64 })
        ));
        assert!(enc.encode(&params, &Tensor::zeros(vec![3, 64, 64])).is_err());
    }

    #[test]
    fn deterministic() {
        let (enc, params) = build(EncoderConfig::default());
        let img = Rng::new(9).uniform_tensor::<f64>(&[1, 32, 32], 1.0);
        assert_eq!(enc.encode(&params, &img).unwrap(), enc.encode(&params, &img).unwrap());
    }
}

//! Seeded synthetic segmentation data: ellipses and axis-aligned rectangles
//! on a noisy background, with exact rasterized masks.

use autodiff::rng::derive_seed;
use autodiff::{Element, Rng, Tensor};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub count: usize,
    /// Height and width; a multiple of 32.
    pub size: usize,
    pub classes: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    /// Range of shape half-extents, in pixels.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Standard deviation of additive Gaussian noise (intensities in [0, 1]).
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            count: 250,
            size: 64,
            classes: 2,
            shapes_min: 1,
            shapes_max: 3,
            scale_min: 6.0,
            scale_max: 20.0,
            noise: 0.05,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dataset: {m}")));
        if self.size == 0 || self.size % 32 != 0 {
            return bad("size must be a positive multiple of 32");
        }
        if !(2..=4).contains(&self.classes) {
            return bad("classes must be in 2..=4");
        }
        if self.shapes_min > self.shapes_max {
            return bad("shapes_min exceeds shapes_max");
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return bad("scale range must be positive and ordered");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative");
        }
        Ok(())
    }

    /// Number of leading samples used for training.
    pub fn train_count(&self) -> usize {
        self.count * 4 / 5
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    /// Center and radii in pixel units.
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    /// Half-open extent `[x0, x1) × [y0, y1)` in pixel units.
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl ShapeKind {
    /// Whether the pixel center `(x, y)` (pixel units) is covered.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        match *self {
            ShapeKind::Ellipse { cx, cy, rx, ry } => {
                let (u, v) = ((x - cx) / rx, (y - cy) / ry);
                u * u + v * v <= 1.0
            }
            ShapeKind::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedShape {
    pub kind: ShapeKind,
    pub class: u8,
    /// Fill intensity in [0, 1].
    pub intensity: f64,
}

/// One image with its mask. Intensities are 8-bit so that NetPBM export is
/// lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
    pub mask: Vec<u8>,
}

impl Sample {
    /// `[1 × H × W]` image with values `pixel / 255`.
    pub fn image<T: Element>(&self) -> Tensor<T> {
        let data = self.pixels.iter().map(|&p| T::from_f64(p as f64 / 255.0)).collect();
        Tensor::new(vec![1, self.height, self.width], data).expect("non-empty sample")
    }
}

/// Intensity band `[lo, hi]` of a class; bands are disjoint and ordered.
pub fn intensity_band(class: u8, classes: usize) -> (f64, f64) {
    let span = 0.7 / classes as f64;
    let lo = 0.15 + span * class as f64;
    (lo, lo + 0.6 * span)
}

/// Paints `shapes` in order (later shapes on top) over a background of
/// class 0 at `background` intensity, then adds noise.
pub fn render(size: usize, background: f64, shapes: &[PlacedShape], noise: f64, rng: &mut Rng) -> Sample {
    let mut pixels = Vec::with_capacity(size * size);
    let mut mask = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let (mut class, mut level) = (0u8, background);
            for s in shapes {
                if s.kind.covers(x, y) {
                    class = s.class;
                    level = s.intensity;
                }
            }
            let v = if noise > 0.0 { level + noise * rng.normal() } else { level };
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            mask.push(class);
        }
    }
    Sample {
        height: size,
        width: size,
        pixels,
        mask,
    }
}

fn random_shape(spec: &SyntheticSpec, rng: &mut Rng) -> PlacedShape {
    let size = spec.size as f64;
    let class = rng.int_inclusive(1, spec.classes - 1) as u8;
    let (lo, hi) = intensity_band(class, spec.classes);
    let cx = rng.uniform_range(0.0, size);
    let cy = rng.uniform_range(0.0, size);
    let rx = rng.uniform_range(spec.scale_min, spec.scale_max);
    let ry = rng.uniform_range(spec.scale_min, spec.scale_max);
    let kind = if rng.below(2) == 0 {
        ShapeKind::Ellipse { cx, cy, rx, ry }
    } else {
        ShapeKind::Rect {
            x0: cx - rx,
            y0: cy - ry,
            x1: cx + rx,
            y1: cy + ry,
        }
    };
    PlacedShape {
        kind,
        class,
        intensity: rng.uniform_range(lo, hi),
    }
}

/// Sample `index` of the dataset described by `spec`; independent of
/// `spec.count`.
pub fn synth_sample(spec: &SyntheticSpec, index: usize) -> Sample {
    let mut rng = Rng::new(derive_seed(spec.seed, index as u64));
    let n = rng.int_inclusive(spec.shapes_min, spec.shapes_max);
    let shapes: Vec<PlacedShape> = (0..n).map(|_| random_shape(spec, &mut rng)).collect();
    let (lo, hi) = intensity_band(0, spec.classes);
    let background = rng.uniform_range(lo, hi);
    render(spec.size, background, &shapes, spec.noise, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticSpec,
    pub samples: Vec<Sample>,
    /// The first `train_len` samples form the training split.
    pub train_len: usize,
}

impl Dataset {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Dataset {
            spec: spec.clone(),
            samples: (0..spec.count).map(|i| synth_sample(spec, i)).collect(),
            train_len: spec.train_count(),
        })
    }

    /// Wraps explicit samples of one size.
    pub fn from_samples(samples: Vec<Sample>, classes: usize, train_len: usize) -> Self {
        let spec = SyntheticSpec {
            count: samples.len(),
            size: samples.first().map_or(0, |s| s.height),
            classes,
            ..SyntheticSpec::default()
        };
        let train_len = train_len.min(samples.len());
        Dataset {
            spec,
            samples,
            train_len,
        }
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn train(&self) -> &[Sample] {
        &self.samples[..self.train_len]
    }

    pub fn val(&self) -> &[Sample] {
        &self.samples[self.train_len..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contract() {
        let spec = SyntheticSpec {
            count: 10,
            classes: 3,
            ..SyntheticSpec::default()
        };
        let d = Dataset::generate(&spec).unwrap();
        assert_eq!(d.samples.len(), 10);
        assert_eq!((d.train().len(), d.val().len()), (8, 2));
        for s in &d.samples {
            assert!(s.mask.iter().all(|&m| m < 3));
            assert_eq!(s.pixels.len(), 64 * 64);
        }
        assert_eq!(Dataset::generate(&spec).unwrap(), d);
    }

    #[test]
    fn full_frame_rectangle() {
        let shape = PlacedShape {
            kind: ShapeKind::Rect {
                x0: 0.0,
                y0: 0.0,
                x1: 32.0,
                y1: 32.0,
            },
            class: 1,
            intensity: 0.6,
        };
        let s = render(32, 0.2, &[shape], 0.0, &mut Rng::new(0));
        assert!(s.mask.iter().all(|&m| m == 1));
        assert!(s.pixels.iter().all(|&p| p == 153));
    }

    #[test]
    fn ellipse_rasterization() {
        let shape = PlacedShape {
            kind: ShapeKind::Ellipse {
                cx: 16.0,
                cy: 16.0,
                rx: 4.0,
                ry: 4.0,
            },
            class: 1,
            intensity: 1.0,
        };
        let s = render(32, 0.0, &[shape], 0.0, &mut Rng::new(0));
        let count = s.mask.iter().filter(|&&m| m == 1).count();
        // pixel centers (i + 0.5) within radius 4 of (16, 16)
        let mut expect = 0;
        for r in 0..32 {
            for c in 0..32 {
                let (x, y) = (c as f64 + 0.5 - 16.0, r as f64 + 0.5 - 16.0);
                expect += (x * x + y * y <= 16.0) as usize;
            }
        }
        assert_eq!(count, expect);
    }

    #[test]
    fn bands_are_disjoint() {
        for n in 2..=4 {
            for c in 0..n as u8 - 1 {
                assert!(intensity_band(c, n).1 < intensity_band(c + 1, n).0);
            }
            assert!(intensity_band(n as u8 - 1, n).1 <= 1.0);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = SyntheticSpec {
            size: 48,
            ..SyntheticSpec::default()
        };
        assert!(Dataset::generate(&bad).is_err());
    }
}

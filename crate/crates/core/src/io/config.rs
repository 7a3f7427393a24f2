//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key may appear at most
//! once. `preset` picks the starting point, `optimizer` then resets the
//! optimizer hyperparameters, and the remaining keys override single
//! fields, so the order of lines does not matter.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::ablation::Ablation;
use crate::data::SyntheticSpec;
use crate::encoder::EncoderConfig;
use crate::model::{BaselineConfig, Interp, ModelConfig};
use crate::pyramid::FcfpConfig;
use crate::query::TauConfig;
use crate::train::{OptimPreset, TrainConfig};
use crate::{Error, Result};

pub const SEED_ENV: &str = "FCFP_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Glas,
    Synapse,
    Cityscapes,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Desk, Preset::Glas, Preset::Synapse, Preset::Cityscapes];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Glas => "glas",
            Preset::Synapse => "synapse",
            Preset::Cityscapes => "cityscapes",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// Which decoder sits on top of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoder {
    Q2a,
    Baseline(Interp),
}

impl Decoder {
    fn name(self) -> &'static str {
        match self {
            Decoder::Q2a => "q2a",
            Decoder::Baseline(Interp::Nearest) => "nearest",
            Decoder::Baseline(Interp::Bilinear) => "bilinear",
        }
    }
}

impl std::str::FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q2a" => Ok(Decoder::Q2a),
            other => Ok(Decoder::Baseline(other.parse()?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub decoder: Decoder,
    pub data: SyntheticSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn optimizer_defaults(opt: OptimPreset, base: &TrainConfig) -> TrainConfig {
    let fresh = match opt {
        OptimPreset::Adam => TrainConfig::adam(),
        OptimPreset::Sgd => TrainConfig::sgd(),
    };
    TrainConfig {
        optimizer: fresh.optimizer,
        lr: fresh.lr,
        momentum: fresh.momentum,
        weight_decay: fresh.weight_decay,
        plateau_patience: fresh.plateau_patience,
        plateau_factor: fresh.plateau_factor,
        ..base.clone()
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let data = SyntheticSpec::default();
        let reference_model = |k: usize, tau: TauConfig| ModelConfig {
            k,
            tau,
            fcfp: FcfpConfig {
                hidden: vec![512, 256],
                ..FcfpConfig::default()
            },
            classes: data.classes,
            ..ModelConfig::default()
        };
        let (model, train) = match preset {
            Preset::Desk => (
                ModelConfig {
                    encoder: EncoderConfig {
                        in_channels: 1,
                        stem_width: 8,
                        channels: [8, 16, 16, 16],
                    },
                    k: 4,
                    tau: TauConfig::glas(),
                    fcfp: FcfpConfig {
                        out_width: 16,
                        hidden: vec![32, 32],
                        ..FcfpConfig::default()
                    },
                    head_hidden: 32,
                    classes: data.classes,
                    ablation: Ablation::default(),
                },
                TrainConfig {
                    train_points: 128,
                    seed: 1,
                    ..TrainConfig::adam()
                },
            ),
            Preset::Glas => (reference_model(4, TauConfig::glas()), TrainConfig::adam()),
            Preset::Synapse => (reference_model(3, TauConfig::synapse()), TrainConfig::sgd()),
            Preset::Cityscapes => (
                ModelConfig {
                    fcfp: FcfpConfig {
                        freqs: 6,
                        cell_width: 6,
                        out_width: 256,
                        hidden: vec![512, 256, 256],
                        ..FcfpConfig::default()
                    },
                    ..reference_model(4, TauConfig::cityscapes())
                },
                TrainConfig::sgd(),
            ),
        };
        RunConfig {
            preset,
            decoder: Decoder::Q2a,
            data,
            model,
            train,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {line_no}: expected `key = value`, got `{line}`")));
            };
            let key = key.trim().to_string();
            if let Some((first, _)) = entries.get(&key) {
                return Err(Error::Config(format!(
                    "line {line_no}: key `{key}` already set on line {first}"
                )));
            }
            entries.insert(key, (line_no, value.trim().to_string()));
        }

        let mut take = |key: &str| entries.remove(key);
        let preset = match take("preset") {
            Some((line, v)) => v.parse().map_err(|e| at(line, "preset", e))?,
            None => Preset::Desk,
        };
        let mut cfg = RunConfig::preset(preset);
        if let Some((line, v)) = take("optimizer") {
            let opt = match v.as_str() {
                "adam" => OptimPreset::Adam,
                "sgd" => OptimPreset::Sgd,
                _ => return Err(at(line, "optimizer", Error::Config(format!("unknown optimizer `{v}`")))),
            };
            cfg.train = optimizer_defaults(opt, &cfg.train);
        }
        for (key, (line, value)) in entries {
            cfg.set(&key, &value).map_err(|e| at(line, &key, e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file and applies the `FCFP_SEED` override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}: `{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "decoder" => self.decoder = v.parse()?,
            "data_seed" => d.seed = num(v)?,
            "count" => d.count = num(v)?,
            "size" => d.size = num(v)?,
            "classes" => {
                d.classes = num(v)?;
                m.classes = d.classes;
            }
            "shapes_min" => d.shapes_min = num(v)?,
            "shapes_max" => d.shapes_max = num(v)?,
            "scale_min" => d.scale_min = num(v)?,
            "scale_max" => d.scale_max = num(v)?,
            "noise" => d.noise = num(v)?,
            "in_channels" => m.encoder.in_channels = num(v)?,
            "stem_width" => m.encoder.stem_width = num(v)?,
            "channels" => {
                let list: Vec<usize> = list(v)?;
                m.encoder.channels = list
                    .try_into()
                    .map_err(|_| Error::Config("expected four channel widths".into()))?;
            }
            "k" => m.k = num(v)?,
            "s" => m.fcfp.s = num(v)?,
            "tau1" => {
                m.tau.tau1_w = num(v)?;
                m.tau.tau1_h = m.tau.tau1_w;
            }
            "tau2" => {
                m.tau.tau2_w = num(v)?;
                m.tau.tau2_h = m.tau.tau2_w;
            }
            "tau1_w" => m.tau.tau1_w = num(v)?,
            "tau2_w" => m.tau.tau2_w = num(v)?,
            "tau1_h" => m.tau.tau1_h = num(v)?,
            "tau2_h" => m.tau.tau2_h = num(v)?,
            "freqs" => m.fcfp.freqs = num(v)?,
            "cell_width" => m.fcfp.cell_width = num(v)?,
            "out_width" => m.fcfp.out_width = num(v)?,
            "fcfp_hidden" => m.fcfp.hidden = list(v)?,
            "head_hidden" => m.head_hidden = num(v)?,
            "lr" => t.lr = num(v)?,
            "momentum" => t.momentum = num(v)?,
            "weight_decay" => t.weight_decay = num(v)?,
            "plateau_patience" => t.plateau_patience = num(v)?,
            "plateau_factor" => t.plateau_factor = num(v)?,
            "epochs" => t.epochs = num(v)?,
            "batch" => t.batch = num(v)?,
            "seed" => t.seed = num(v)?,
            "train_points" => t.train_points = num(v)?,
            "eval_every" => t.eval_every = num(v)?,
            flag if Ablation::FLAGS.contains(&flag) => m.ablation.set(flag, boolean(v)?)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    pub fn baseline(&self) -> Option<BaselineConfig> {
        match self.decoder {
            Decoder::Q2a => None,
            Decoder::Baseline(interp) => Some(BaselineConfig::matched(&self.model, interp)),
        }
    }

    /// Canonical text form; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let d = &self.data;
        let m = &self.model;
        let t = &self.train;
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let optimizer = match t.optimizer {
            OptimPreset::Adam => "adam",
            OptimPreset::Sgd => "sgd",
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("preset", self.preset.name().into());
        kv("decoder", self.decoder.name().into());
        kv("data_seed", d.seed.to_string());
        kv("count", d.count.to_string());
        kv("size", d.size.to_string());
        kv("classes", d.classes.to_string());
        kv("shapes_min", d.shapes_min.to_string());
        kv("shapes_max", d.shapes_max.to_string());
        kv("scale_min", d.scale_min.to_string());
        kv("scale_max", d.scale_max.to_string());
        kv("noise", d.noise.to_string());
        kv("in_channels", m.encoder.in_channels.to_string());
        kv("stem_width", m.encoder.stem_width.to_string());
        kv("channels", join(&m.encoder.channels));
        kv("k", m.k.to_string());
        kv("s", m.fcfp.s.to_string());
        kv("tau1_w", m.tau.tau1_w.to_string());
        kv("tau2_w", m.tau.tau2_w.to_string());
        kv("tau1_h", m.tau.tau1_h.to_string());
        kv("tau2_h", m.tau.tau2_h.to_string());
        kv("freqs", m.fcfp.freqs.to_string());
        kv("cell_width", m.fcfp.cell_width.to_string());
        kv("out_width", m.fcfp.out_width.to_string());
        kv("fcfp_hidden", join(&m.fcfp.hidden));
        kv("head_hidden", m.head_hidden.to_string());
        for flag in Ablation::FLAGS {
            kv(flag, m.ablation.get(flag).unwrap().to_string());
        }
        kv("optimizer", optimizer.into());
        kv("lr", t.lr.to_string());
        kv("momentum", t.momentum.to_string());
        kv("weight_decay", t.weight_decay.to_string());
        kv("plateau_patience", t.plateau_patience.to_string());
        kv("plateau_factor", t.plateau_factor.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch", t.batch.to_string());
        kv("seed", t.seed.to_string());
        kv("train_points", t.train_points.to_string());
        kv("eval_every", t.eval_every.to_string());
        s
    }
}

fn at(line: usize, key: &str, e: Error) -> Error {
    Error::Config(format!("line {line}, key `{key}`: {e}"))
}

fn num<N: std::str::FromStr>(v: &str) -> Result<N> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse `{v}` as a {}", std::any::type_name::<N>())))
}

fn list(v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|x| num(x.trim())).collect()
}

fn boolean(v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("expected true or false, got `{v}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for p in Preset::ALL {
            let cfg = RunConfig::preset(p);
            cfg.validate().unwrap();
            assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg, "{}", p.name());
        }
    }

    #[test]
    fn preset_values() {
        let ln2 = std::f64::consts::LN_2;
        let glas = RunConfig::parse("preset = glas").unwrap();
        assert_eq!(glas.model.k, 4);
        assert_eq!((glas.model.fcfp.cell_width, glas.model.fcfp.out_width, glas.model.fcfp.freqs), (2, 64, 2));
        assert_eq!(glas.model.tau, TauConfig::symmetric(-4.5 * ln2, 2.5 * ln2));
        assert_eq!(glas.train.optimizer, OptimPreset::Adam);
        let syn = RunConfig::parse("preset = synapse").unwrap();
        assert_eq!(syn.model.k, 3);
        assert_eq!(syn.model.tau, TauConfig::symmetric((2.0f64 / 51.0).ln(), 2.0 * ln2));
        assert_eq!((syn.train.optimizer, syn.train.lr, syn.train.momentum), (OptimPreset::Sgd, 0.01, 0.9));
        let city = RunConfig::parse("preset = cityscapes").unwrap();
        assert_eq!(city.model.k, 4);
        assert_eq!((city.model.fcfp.cell_width, city.model.fcfp.out_width, city.model.fcfp.freqs), (6, 256, 6));
        assert_eq!(city.model.fcfp.hidden, [512, 256, 256]);
    }

    #[test]
    fn overrides_are_order_independent() {
        let a = RunConfig::parse("lr = 0.5\noptimizer = sgd\nk = 2\n").unwrap();
        let b = RunConfig::parse("# comment\nk=2 # trailing\n\noptimizer=sgd\nlr=0.5").unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.lr, a.train.momentum, a.model.k), (0.5, 0.9, 2));
        let c = RunConfig::parse("no_pa = true\nchannels = 4,8,8,8\ndecoder = nearest").unwrap();
        assert!(c.model.ablation.no_pa);
        assert_eq!(c.model.encoder.channels, [4, 8, 8, 8]);
        assert!(c.baseline().is_some());
    }

    #[test]
    fn errors_name_key_and_line() {
        let err = RunConfig::parse("k = 2\nfoo = 1\n").unwrap_err().to_string();
        assert!(err.contains("foo") && err.contains("line 2"), "{err}");
        let err = RunConfig::parse("k = two").unwrap_err().to_string();
        assert!(err.contains("`k`") && err.contains("line 1"), "{err}");
        let err = RunConfig::parse("k = 2\nk = 3").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(RunConfig::parse("just words").is_err());
        assert!(RunConfig::parse("channels = 1,2,3").is_err());
        assert!(RunConfig::parse("size = 48").is_err());
    }
}

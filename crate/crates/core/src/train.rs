//! Training and evaluation loops, and the ablation runner.

use std::fmt;
use std::thread;

use autodiff::rng::derive_seed;
use autodiff::{
    Bound, Element, Gradients, Optimizer, OptimizerKind, ParamSet, PlateauSchedule, PolySchedule, Rng, Tape,
    TensorError,
};

use crate::ablation::Variant;
use crate::coords::{center_of, Coord};
use crate::data::{Dataset, Sample};
use crate::loss::{argmax_map, map_to_rows, seg_loss, seg_loss_value};
use crate::metrics::image_scores;
use crate::model::{ModelConfig, Q2AModel, Segmenter};
use crate::pyramid::PlanCache;
use crate::{Error, Result};

const TRAIN_TAG: u64 = 0x7a1e;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimPreset {
    /// Adam with a reduce-on-plateau schedule on the epoch training loss.
    Adam,
    /// SGD with momentum and the polynomial schedule.
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimPreset,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub plateau_patience: u32,
    pub plateau_factor: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Random pixel centers per training image and step; 0 uses every pixel.
    pub train_points: usize,
    /// Validate every this many epochs; 0 validates after the last epoch only.
    pub eval_every: usize,
    pub threads: usize,
}

impl TrainConfig {
    pub fn adam() -> Self {
        TrainConfig {
            optimizer: OptimPreset::Adam,
            lr: 1e-3,
            momentum: 0.0,
            weight_decay: 0.0,
            plateau_patience: 20,
            plateau_factor: 0.1,
            epochs: 60,
            batch: 4,
            seed: 0,
            train_points: 0,
            eval_every: 0,
            threads: 1,
        }
    }

    pub fn sgd() -> Self {
        TrainConfig {
            optimizer: OptimPreset::Sgd,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            ..Self::adam()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.threads == 0 {
            return Err(Error::Config("batch and threads must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// One row of the metrics history. Training rows carry no Dice or HD95.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: Split,
    pub dice: Option<f64>,
    pub hd95: Option<f64>,
    pub loss: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,dice,hd95,loss,lr";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{:.6},{:e}",
            self.epoch,
            self.split,
            opt(self.dice),
            opt(self.hd95),
            self.loss,
            self.lr
        )
    }
}

pub fn metrics_csv(history: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Applies `f` to `0..n` on up to `threads` workers; results keep index
/// order.
pub fn parallel_map<R: Send>(threads: usize, n: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let per = n.div_ceil(threads);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || (t * per..((t + 1) * per).min(n)).map(f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub dice: f64,
    pub hd95: f64,
    pub loss: f64,
}

/// Full-resolution decode of every sample: mean foreground Dice, mean HD95
/// and mean combined loss.
pub fn evaluate<T: Element, M: Segmenter<T>>(model: &M, samples: &[Sample], threads: usize) -> Result<EvalSummary> {
    if samples.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let per = parallel_map(threads, samples.len(), |i| -> Result<(f64, f64, f64)> {
        let s = &samples[i];
        let logits = model.decode_map(&s.image::<T>(), s.height, s.width)?;
        let pred = argmax_map(&logits);
        let scores = image_scores(&pred, &s.mask, model.classes(), s.height, s.width);
        let loss = seg_loss_value(&map_to_rows(&logits), &s.mask)?;
        Ok((scores.dice, scores.hd95, loss))
    });
    let mut sum = (0.0, 0.0, 0.0);
    for r in per {
        let (d, h, l) = r?;
        sum = (sum.0 + d, sum.1 + h, sum.2 + l);
    }
    let n = samples.len() as f64;
    Ok(EvalSummary {
        dice: sum.0 / n,
        hd95: sum.1 / n,
        loss: sum.2 / n,
    })
}

/// Training coordinates and labels for one image.
fn training_points(sample: &Sample, count: usize, rng: &mut Rng) -> (Vec<Coord>, Vec<u8>) {
    let (h, w) = (sample.height, sample.width);
    let pick: Vec<usize> = if count == 0 {
        (0..h * w).collect()
    } else {
        (0..count).map(|_| rng.below(h * w)).collect()
    };
    let points = pick.iter().map(|&i| center_of(i / w, i % w, h, w)).collect();
    let labels = pick.iter().map(|&i| sample.mask[i]).collect();
    (points, labels)
}

struct StepResult<T: Element> {
    loss: f64,
    bound: Bound,
    grads: Gradients<T>,
}

fn image_step<T: Element, M: Segmenter<T>>(model: &M, sample: &Sample, points: &[Coord], labels: &[u8]) -> Result<StepResult<T>> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let image = tape.constant(sample.image::<T>());
    let logits = model.forward_points(&mut tape, &bound, image, points, &mut PlanCache::live())?;
    let loss = seg_loss(&mut tape, logits, labels)?;
    let value = tape.value(loss).item().as_f64();
    let grads = tape.backward(loss)?;
    Ok(StepResult {
        loss: value,
        bound,
        grads,
    })
}

/// Per-parameter value and gradient magnitudes, for divergence reports.
pub fn state_dump<T: Element>(params: &ParamSet<T>) -> String {
    let max_abs = |d: &[T]| d.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
    params
        .iter()
        .map(|p| {
            let g = p.grad.as_ref().map(|g| max_abs(g.data()));
            format!("{}: |w|max={:e} |g|max={:?}", p.name, max_abs(p.value.data()), g)
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn diverged<T: Element>(epoch: usize, step: usize, what: String, params: &ParamSet<T>) -> Error {
    Error::Diverged {
        epoch,
        step,
        detail: format!("{what}; state: {}", state_dump(params)),
    }
}

/// Trains `model` on the training split; see [`train_with`].
pub fn train<T: Element, M: Segmenter<T>>(model: &mut M, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<MetricsRecord>> {
    train_with(model, data, cfg, &mut |_| {})
}

/// Seeded epoch loop: shuffle, per-image forward and backward on
/// independent tapes, batch-averaged update, schedule step, and validation.
/// `on_record` sees each history row as it is produced.
pub fn train_with<T: Element, M: Segmenter<T>>(
    model: &mut M,
    data: &Dataset,
    cfg: &TrainConfig,
    on_record: &mut dyn FnMut(&MetricsRecord),
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let train = data.train();
    if train.is_empty() && cfg.epochs > 0 {
        return Err(Error::Config("empty training split".into()));
    }
    let mut rng = Rng::new(derive_seed(cfg.seed, TRAIN_TAG));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let steps_per_epoch = train.len().div_ceil(cfg.batch);
    let poly = PolySchedule::new(cfg.lr, (cfg.epochs * steps_per_epoch) as u64);
    let mut plateau = PlateauSchedule::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience);
    let kind = match cfg.optimizer {
        OptimPreset::Adam => OptimizerKind::adam(),
        OptimPreset::Sgd => OptimizerKind::sgd(cfg.momentum),
    };
    let mut opt = Optimizer::<T>::new(kind, cfg.lr, cfg.weight_decay);
    let mut history = Vec::new();
    let mut iter = 0u64;

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(cfg.batch).enumerate() {
            if cfg.optimizer == OptimPreset::Sgd {
                opt.lr = poly.lr(iter);
            }
            let jobs: Vec<(Vec<Coord>, Vec<u8>)> = batch
                .iter()
                .map(|&i| training_points(&train[i], cfg.train_points, &mut rng))
                .collect();
            let results = parallel_map(cfg.threads, batch.len(), |j| {
                image_step::<T, M>(model, &train[batch[j]], &jobs[j].0, &jobs[j].1)
            });
            let params = model.params_mut();
            for (j, r) in results.into_iter().enumerate() {
                let mut r = match r {
                    Ok(r) => r,
                    Err(Error::Tensor(e @ TensorError::NonFinite { .. })) => {
                        return Err(diverged(epoch, step, format!("sample {}: {e}", batch[j]), params))
                    }
                    Err(e) => return Err(e),
                };
                if !r.loss.is_finite() {
                    return Err(diverged(epoch, step, format!("sample {}: loss {}", batch[j], r.loss), params));
                }
                loss_sum += r.loss;
                params.accumulate(&r.bound, &mut r.grads);
            }
            params.scale_grads(T::one() / T::from_usize(batch.len()));
            if let Some(p) = params.iter().find(|p| p.grad.as_ref().is_some_and(|g| g.first_non_finite().is_some())) {
                let what = format!("non-finite gradient in {} at lr {}", p.name, opt.lr);
                return Err(diverged(epoch, step, what, params));
            }
            opt.step(params)?;
            params.zero_grad();
            if let Some(p) = params.iter().find(|p| p.value.first_non_finite().is_some()) {
                let what = format!("non-finite parameter {} at lr {}", p.name, opt.lr);
                return Err(diverged(epoch, step, what, params));
            }
            iter += 1;
        }
        let mean_loss = loss_sum / train.len() as f64;
        let row = MetricsRecord {
            epoch,
            split: Split::Train,
            dice: None,
            hd95: None,
            loss: mean_loss,
            lr: opt.lr,
        };
        on_record(&row);
        history.push(row);
        if cfg.optimizer == OptimPreset::Adam {
            opt.lr = plateau.step(mean_loss);
        }
        let due = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        if due && !data.val().is_empty() {
            let s = evaluate(&*model, data.val(), cfg.threads)?;
            let row = MetricsRecord {
                epoch,
                split: Split::Val,
                dice: Some(s.dice),
                hd95: Some(s.hd95),
                loss: s.loss,
                lr: opt.lr,
            };
            on_record(&row);
            history.push(row);
        }
    }
    Ok(history)
}

/// Final validation scores of a finished run: the last validation row of
/// `history`, or a fresh evaluation if there is none.
pub fn final_scores<T: Element, M: Segmenter<T>>(model: &M, data: &Dataset, history: &[MetricsRecord], threads: usize) -> Result<EvalSummary> {
    match history.iter().rev().find(|r| r.split == Split::Val) {
        Some(r) => Ok(EvalSummary {
            dice: r.dice.unwrap_or(0.0),
            hd95: r.hd95.unwrap_or(0.0),
            loss: r.loss,
        }),
        None => evaluate(model, data.val(), threads),
    }
}

/// One ablation table row; `seed == None` marks the mean over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: Option<u64>,
    pub dice: f64,
    pub hd95: f64,
}

pub const ABLATION_HEADER: &str = "variant,seed,dice,hd95";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        let seed = r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
        out.push_str(&format!("{},{},{:.6},{:.6}\n", r.variant, seed, r.dice, r.hd95));
    }
    out
}

/// Trains every table variant on the same data and schedule for each seed.
/// Rows are grouped by variant in table order: one row per seed, then the
/// mean. `on_run` sees each finished per-seed row.
pub fn run_ablation_suite<T: Element>(
    base: &ModelConfig,
    data: &Dataset,
    train_cfg: &TrainConfig,
    seeds: &[u64],
    on_run: &mut dyn FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let mut config = base.clone();
        config.ablation = variant.apply(base.ablation);
        let (mut dice, mut hd) = (0.0, 0.0);
        for &seed in seeds {
            let mut model = Q2AModel::<T>::new(config.clone(), seed)?;
            let cfg = TrainConfig { seed, ..train_cfg.clone() };
            let history = train(&mut model, data, &cfg)?;
            let s = final_scores(&model, data, &history, cfg.threads)?;
            let row = AblationRow {
                variant,
                seed: Some(seed),
                dice: s.dice,
                hd95: s.hd95,
            };
            on_run(&row);
            rows.push(row);
            dice += s.dice;
            hd += s.hd95;
        }
        let n = seeds.len() as f64;
        rows.push(AblationRow {
            variant,
            seed: None,
            dice: dice / n,
            hd95: hd / n,
        });
    }
    Ok(rows)
}

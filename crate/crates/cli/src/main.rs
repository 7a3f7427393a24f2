mod plot;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autodiff::Tensor;
use clap::{Parser, Subcommand};

use fcfp::data::Dataset;
use fcfp::io::checkpoint;
use fcfp::io::config::{Decoder, RunConfig};
use fcfp::io::netpbm::{self, GrayImage, RgbImage};
use fcfp::loss::{argmax_map, softmax_rows};
use fcfp::model::{BaselineModel, Q2AModel, Segmenter};
use fcfp::train::{ablation_csv, metrics_csv, run_ablation_suite, train_with, MetricsRecord};
use fcfp::{verify, Error, Result};

/// Name of the fault that `verify` can be asked to inject.
const FAULT_ENV: &str = "FCFP_INJECT_FAULT";
const CHECKPOINT_FILE: &str = "model.fcfp";
const CONFIG_FILE: &str = "config.txt";

#[derive(Parser)]
#[command(name = "fcfp", version, about = "Query-based feature-aligning segmentation decoder")]
struct Cli {
    /// Worker threads for per-image work. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the synthetic dataset; writes model.fcfp, metrics.csv,
    /// config.txt and curves.svg.
    Train {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a P5 image at any resolution into a class-id mask.
    Infer {
        checkpoint: PathBuf,
        image: PathBuf,
        #[arg(long)]
        hq: usize,
        #[arg(long)]
        wq: usize,
        #[arg(long)]
        out: PathBuf,
        /// Per-class probabilities blended into a P6 color image.
        #[arg(long)]
        prob: Option<PathBuf>,
        /// Run configuration; defaults to config.txt next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train every ablation variant for each seed; writes ablation.csv.
    Ablate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient oracles and invariant checks.
    Verify,
    /// Write the synthetic dataset as numbered P5 image and mask pairs.
    DatasetGen {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, threads: usize) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.train.threads = threads;
    cfg.train.validate()?;
    Ok(cfg)
}

fn train_model<M: Segmenter<f32>>(mut model: M, cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<()> {
    eprintln!("{}", model.report());
    let mut log = |r: &MetricsRecord| eprintln!("{}", r.csv_row());
    let history = train_with(&mut model, data, &cfg.train, &mut log)?;
    checkpoint::save(model.params(), out.join(CHECKPOINT_FILE))?;
    fs::write(out.join("metrics.csv"), metrics_csv(&history))?;
    fs::write(out.join("curves.svg"), plot::curves_svg(&history))?;
    Ok(())
}

fn cmd_train(config: &Path, out: &Path, threads: usize) -> Result<()> {
    let cfg = load_config(config, threads)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    let data = Dataset::generate(&cfg.data)?;
    match cfg.baseline() {
        None => train_model(Q2AModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?, &cfg, &data, out),
        Some(b) => train_model(BaselineModel::<f32>::new(b, cfg.train.seed)?, &cfg, &data, out),
    }
}

/// Mixes a fixed color per class by its probability.
fn probability_image(logits: &Tensor<f32>, hq: usize, wq: usize) -> RgbImage {
    const PALETTE: [[f64; 3]; 6] = [
        [0.0, 0.0, 0.0],
        [255.0, 64.0, 64.0],
        [64.0, 200.0, 64.0],
        [64.0, 96.0, 255.0],
        [240.0, 200.0, 40.0],
        [200.0, 64.0, 220.0],
    ];
    let n = logits.shape()[0];
    let hw = hq * wq;
    let mut pixels = Vec::with_capacity(3 * hw);
    for i in 0..hw {
        let row: Vec<f32> = (0..n).map(|c| logits.data()[c * hw + i]).collect();
        let p = softmax_rows(&row, n);
        for ch in 0..3 {
            let v: f64 = p.iter().enumerate().map(|(c, &pc)| pc as f64 * PALETTE[c % PALETTE.len()][ch]).sum();
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    RgbImage {
        width: wq,
        height: hq,
        pixels,
    }
}

fn decode<M: Segmenter<f32>>(mut model: M, ckpt: &Path, img: &GrayImage, hq: usize, wq: usize) -> Result<Tensor<f32>> {
    checkpoint::load(model.params_mut(), ckpt)?;
    let image = fcfp::data::Sample {
        height: img.height,
        width: img.width,
        pixels: img.pixels.clone(),
        mask: Vec::new(),
    }
    .image::<f32>();
    model.decode_map(&image, hq, wq)
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    ckpt: &Path,
    image: &Path,
    hq: usize,
    wq: usize,
    out: &Path,
    prob: Option<&Path>,
    config: Option<&Path>,
    threads: usize,
) -> Result<()> {
    let config_path = match config {
        Some(p) => p.to_path_buf(),
        None => ckpt.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE),
    };
    let cfg = load_config(&config_path, threads)?;
    if cfg.model.encoder.in_channels != 1 {
        return Err(Error::Config("inference reads grayscale P5 images; the model expects 3 channels".into()));
    }
    let img = netpbm::read_pgm(image)?;
    if img.height % 32 != 0 || img.width % 32 != 0 {
        return Err(Error::InputSize {
            height: img.height,
            width: img.width,
        });
    }
    let logits = match cfg.baseline() {
        None => decode(Q2AModel::<f32>::new(cfg.model.clone(), 0)?, ckpt, &img, hq, wq)?,
        Some(b) => decode(BaselineModel::<f32>::new(b, 0)?, ckpt, &img, hq, wq)?,
    };
    let mask = GrayImage {
        width: wq,
        height: hq,
        pixels: argmax_map(&logits),
    };
    netpbm::write_pgm(out, &mask)?;
    if let Some(p) = prob {
        netpbm::write_ppm(p, &probability_image(&logits, hq, wq))?;
    }
    Ok(())
}

fn cmd_ablate(config: &Path, seeds: &[u64], out: &Path, threads: usize) -> Result<()> {
    let cfg = load_config(config, threads)?;
    if cfg.decoder != Decoder::Q2a {
        return Err(Error::Config("ablation runs the aligning decoder; set decoder = q2a".into()));
    }
    let data = Dataset::generate(&cfg.data)?;
    let mut log = |r: &fcfp::train::AblationRow| eprintln!("{} seed {:?}: dice {:.6} hd95 {:.6}", r.variant, r.seed, r.dice, r.hd95);
    let rows = run_ablation_suite::<f32>(&cfg.model, &data, &cfg.train, seeds, &mut log)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("ablation.csv"), ablation_csv(&rows))?;
    Ok(())
}

fn cmd_verify() -> Result<bool> {
    match std::env::var(FAULT_ENV).ok().as_deref() {
        None | Some("") => {}
        Some("flip_tanh_backward") => autodiff::fault::set_flip_tanh_backward(true),
        Some(other) => return Err(Error::Config(format!("{FAULT_ENV}: unknown fault `{other}`"))),
    }
    let mut all = true;
    for suite in verify::SUITES {
        let o = verify::run_suite(suite);
        println!("{o}");
        all &= o.passed;
    }
    Ok(all)
}

fn cmd_dataset_gen(config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let data = Dataset::generate(&cfg.data)?;
    fs::create_dir_all(out)?;
    let digits = data.samples.len().saturating_sub(1).to_string().len().max(3);
    for (i, s) in data.samples.iter().enumerate() {
        let gray = |pixels: &[u8]| GrayImage {
            width: s.width,
            height: s.height,
            pixels: pixels.to_vec(),
        };
        netpbm::write_pgm(out.join(format!("image_{i:0digits$}.pgm")), &gray(&s.pixels))?;
        netpbm::write_pgm(out.join(format!("mask_{i:0digits$}.pgm")), &gray(&s.mask))?;
    }
    let d = &cfg.data;
    let mut spec = String::new();
    for (k, v) in [
        ("data_seed", d.seed.to_string()),
        ("count", d.count.to_string()),
        ("size", d.size.to_string()),
        ("classes", d.classes.to_string()),
        ("shapes_min", d.shapes_min.to_string()),
        ("shapes_max", d.shapes_max.to_string()),
        ("scale_min", d.scale_min.to_string()),
        ("scale_max", d.scale_max.to_string()),
        ("noise", d.noise.to_string()),
    ] {
        writeln!(spec, "{k} = {v}").unwrap();
    }
    writeln!(spec, "# images 0..{} train, the rest validate", data.train_len).unwrap();
    fs::write(out.join("spec.txt"), spec)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.max(1);
    let result = match &cli.command {
        Command::Train { config, out } => cmd_train(config, out, threads),
        Command::Infer {
            checkpoint,
            image,
            hq,
            wq,
            out,
            prob,
            config,
        } => cmd_infer(checkpoint, image, *hq, *wq, out, prob.as_deref(), config.as_deref(), threads),
        Command::Ablate { config, seeds, out } => cmd_ablate(config, seeds, out, threads),
        Command::Verify => match cmd_verify() {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
        Command::DatasetGen { config, out } => cmd_dataset_gen(config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! Self-checks behind `fcfp verify`: gradient oracles and the structural
//! invariants of the aligning decoder. Each check returns its raw measure
//! so callers can apply their own thresholds.

use std::fmt;
use std::sync::Arc;

use autodiff::rng::derive_seed;
use autodiff::{branches, grad_check_many, Bound, GradCheckReport, ParamSet, Rng, Tape, Tensor, TensorError, Var};

use crate::coords::{grid_coords, nearest_pixel, nearest_sample, Coord};
use crate::encoder::EncoderConfig;
use crate::loss::{ce_loss, dice_loss, seg_loss};
use crate::model::{GradPath, ModelConfig, Q2AModel, Segmenter};
use crate::pyramid::{
    cell_embedding_op, pa_coordinate, pa_sample, pa_sample_plan, spatial_encoding_op, subcell_coords, vote_coordinate,
    vote_fallbacks, voting_weights, FcfpConfig, PaPlan, PlanCache,
};
use crate::query::{unfold3x3_op, QueryGenerator, QueryQuadruple, TauConfig};
use crate::{Error, Result};

pub const SUITES: [&str; 7] = [
    "grad_check_ops",
    "grad_check_model",
    "pa_degeneracy",
    "voting_normalization",
    "permutation_invariance",
    "stop_grad_separation",
    "query_ranges",
];

pub const OP_TOLERANCE: f64 = 1e-8;
pub const MODEL_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub suite: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.suite, self.detail)
    }
}

fn wrap(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::InvalidArgument {
            op: "verify",
            msg: other.to_string(),
        },
    }
}

/// Max relative error of every hand-written backward, by op name.
pub fn op_grad_errors(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    let mut check = |name: &'static str, xs: Vec<Tensor<f64>>, f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>| {
        let r = grad_check_many(|t, v| f(t, v).map_err(wrap), &xs, EPS)?;
        out.push((name, r.max_rel_error));
        Ok::<_, Error>(())
    };
    // Weighted sum so that every output element gets a distinct cotangent.
    fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
        let w = Rng::new(seed).uniform_tensor::<f64>(t.shape(y), 1.0);
        let w = t.constant(w);
        let p = t.mul(y, w)?;
        Ok(t.sum(p)?)
    }

    check("tanh", vec![rng.uniform_tensor(&[7], 2.0)], &|t, v| {
        let y = t.tanh(v[0])?;
        project(t, y, 1)
    })?;
    check("conv2d", vec![rng.uniform_tensor(&[2, 6, 5], 1.0), rng.uniform_tensor(&[3, 2, 3, 3], 1.0), rng.uniform_tensor(&[3], 1.0)], &|t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
        project(t, y, 2)
    })?;
    check("unfold3x3", vec![rng.uniform_tensor(&[2, 3, 4], 1.0)], &|t, v| {
        let y = unfold3x3_op(t, v[0])?;
        project(t, y, 3)
    })?;
    check("spatial_encoding", vec![rng.uniform_tensor(&[5, 2], 1.0), rng.uniform_tensor(&[3], 2.0)], &|t, v| {
        let y = spatial_encoding_op(t, v[0], v[1])?;
        project(t, y, 4)
    })?;
    check("cell_embedding", vec![rng.uniform_tensor(&[5, 2], 1.0), rng.uniform_tensor(&[3], 1.0)], &|t, v| {
        let y = cell_embedding_op(t, v[0], v[1])?;
        project(t, y, 5)
    })?;
    let assign: Vec<Vec<usize>> = vec![vec![0, 1, 2, 3], vec![4, 4, 5, 0], vec![2, 2, 2, 2], vec![1, 5, 1, 5]];
    let plan = Arc::new(PaPlan::from_assignments(assign.iter().map(Vec::as_slice), 2, 3));
    check("vote_coordinate", vec![rng.uniform_tensor(&[6, 3], 1.0)], &|t, v| {
        let y = vote_coordinate(t, v[0], plan.clone())?;
        project(t, y, 6)
    })?;
    let gen = {
        let mut p = ParamSet::<f64>::new();
        QueryGenerator::new(&mut p, &mut Rng::new(7), &[1; 4], 3, TauConfig::synapse(), false)
    };
    check("query_parameterization", vec![rng.uniform_tensor(&[4, 12], 2.0)], &|t, v| {
        let q = gen.queries(t, v[0])?;
        let parts = [q.dx, q.dy, q.w, q.h];
        let mut acc = project(t, parts[0], 8)?;
        for (i, &p) in parts[1..].iter().enumerate() {
            let s = project(t, p, 9 + i as u64)?;
            acc = t.add(acc, s)?;
        }
        Ok(acc)
    })?;
    let labels: Vec<u8> = (0..6).map(|_| rng.below(3) as u8).collect();
    check("cross_entropy", vec![rng.uniform_tensor(&[6, 3], 2.0)], &|t, v| ce_loss(t, v[0], &labels))?;
    check("soft_dice", vec![rng.uniform_tensor(&[6, 3], 2.0)], &|t, v| dice_loss(t, v[0], &labels))?;
    Ok(out)
}

/// Configuration of the full-model gradient oracle.
pub fn model_check_config() -> ModelConfig {
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
            out_width: 4,
            hidden: vec![8],
        },
        head_hidden: 8,
        classes: 2,
        ..ModelConfig::default()
    }
}

/// Central differences against reverse mode for the segmentation loss of
/// a whole model, over every parameter and the input image. Subcell plans
/// and relu/clamp pieces are recorded once and replayed so that perturbed
/// evaluations keep the same discrete choices.
pub fn model_grad_check(config: &ModelConfig, size: usize, grid: usize, seed: u64) -> Result<GradCheckReport> {
    let model = Q2AModel::<f64>::new(config.clone(), seed)?;
    let mut rng = Rng::new(derive_seed(seed, 0x6c));
    let image = rng.uniform_tensor::<f64>(&[config.encoder.in_channels, size, size], 1.0);
    let points = grid_coords(grid, grid);
    let labels: Vec<u8> = (0..points.len()).map(|_| rng.below(config.classes) as u8).collect();
    let n_params = model.params().len();

    let loss = |tape: &mut Tape<f64>, vars: &[Var], plans: &mut PlanCache| -> Result<Var> {
        let bound = Bound::from_vars(vars[..n_params].to_vec());
        let logits = model.forward_points(tape, &bound, vars[n_params], &points, plans)?;
        seg_loss(tape, logits, &labels)
    };
    let inputs: Vec<Tensor<f64>> = model
        .params()
        .iter()
        .map(|p| p.value.clone())
        .chain(std::iter::once(image))
        .collect();

    let mut plans = PlanCache::recording();
    let (recorded, pieces) = branches::record(|| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        loss(&mut tape, &vars, &mut plans).map(|_| ())
    });
    recorded?;
    let report = grad_check_many(
        |tape, vars| {
            let mut replay = plans.clone();
            replay.rewind();
            branches::replay(&pieces, || loss(tape, vars, &mut replay)).map_err(wrap)
        },
        &inputs,
        EPS,
    )?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DegeneracyReport {
    pub trials: usize,
    pub latent_mismatches: usize,
    pub coordinate_mismatches: usize,
}

/// Cells lying inside one nearest-pixel region: the aggregated code and
/// coordinate must equal the nearest sample bit for bit.
pub fn pa_degeneracy(trials: usize, seed: u64) -> DegeneracyReport {
    let mut rng = Rng::new(seed);
    let mut r = DegeneracyReport {
        trials,
        ..Default::default()
    };
    for _ in 0..trials {
        let (h, w, c) = (rng.int_inclusive(1, 16), rng.int_inclusive(1, 16), rng.int_inclusive(1, 6));
        let s = rng.int_inclusive(1, 4);
        let map = rng.uniform_tensor::<f64>(&[c, h, w], 3.0);
        let (row, col) = (rng.below(h), rng.below(w));
        // pixel box and a cell strictly inside it
        let (bw, bh) = (2.0 / w as f64, 2.0 / h as f64);
        let (x0, y0) = (-1.0 + col as f64 * bw, -1.0 + row as f64 * bh);
        let cw = bw * rng.uniform_range(0.02, 0.9);
        let ch = bh * rng.uniform_range(0.02, 0.9);
        let p = Coord::new(
            x0 + cw / 2.0 + rng.uniform_range(0.01, 0.99) * (bw - cw),
            y0 + ch / 2.0 + rng.uniform_range(0.01, 0.99) * (bh - ch),
        );
        assert!(subcell_coords(p, cw, ch, s)
            .iter()
            .all(|&q| nearest_pixel(q, h, w) == (row, col)));

        let got = pa_sample(&map, p, (cw, ch), s, true);
        let want = nearest_sample(&map, p);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&got.z_pa) != bits(&want.z_star) {
            r.latent_mismatches += 1;
        }
        if got.p_pa.x.to_bits() != want.p_star.x.to_bits() || got.p_pa.y.to_bits() != want.p_star.y.to_bits() {
            r.coordinate_mismatches += 1;
        }
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VotingReport {
    pub sets: usize,
    pub max_sum_error: f64,
    pub max_permutation_change: f64,
    pub fallbacks: u64,
}

fn random_codes(rng: &mut Rng, n: usize, c: usize) -> Vec<Vec<f64>> {
    let scale = 10f64.powf(rng.uniform_range(-2.0, 1.0));
    // a small pool so that repeated codes occur
    let pool: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| scale * rng.normal()).collect()).collect();
    (0..n)
        .map(|i| if rng.uniform() < 0.3 { pool[rng.below(n)].clone() } else { pool[i].clone() })
        .collect()
}

/// Per-subcell voting weights on random code sets: their sum, and how much
/// the weights and the voted coordinate move under a subcell permutation.
pub fn voting_normalization(sets: usize, seed: u64) -> VotingReport {
    let mut rng = Rng::new(seed);
    let before = vote_fallbacks();
    let mut r = VotingReport {
        sets,
        ..Default::default()
    };
    for _ in 0..sets {
        let s = rng.int_inclusive(1, 4);
        let n = s * s;
        let c = rng.int_inclusive(1, 8);
        let codes = random_codes(&mut rng, n, c);
        let centers: Vec<Coord> = (0..n)
            .map(|_| Coord::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)))
            .collect();
        let w = voting_weights(&codes);
        let sum: f64 = w.iter().sum();
        r.max_sum_error = r.max_sum_error.max((sum - 1.0).abs());

        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let codes_p: Vec<Vec<f64>> = perm.iter().map(|&i| codes[i].clone()).collect();
        let centers_p: Vec<Coord> = perm.iter().map(|&i| centers[i]).collect();
        let w_p = voting_weights(&codes_p);
        let mut change: f64 = 0.0;
        for (j, &i) in perm.iter().enumerate() {
            change = change.max((w_p[j] - w[i]).abs());
        }
        let a = pa_coordinate(&centers, &w);
        let b = pa_coordinate(&centers_p, &w_p);
        change = change.max((a.x - b.x).abs()).max((a.y - b.y).abs());
        r.max_permutation_change = r.max_permutation_change.max(change);
    }
    r.fallbacks = vote_fallbacks() - before;
    r
}

/// Grouped evaluation on a map: shuffling the subcell-to-pixel list of a
/// cell leaves the aggregated code and coordinate unchanged. Returns the
/// largest absolute change.
pub fn permutation_invariance(trials: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (h, w, c) = (rng.int_inclusive(1, 6), rng.int_inclusive(1, 6), rng.int_inclusive(1, 6));
        let s = rng.int_inclusive(1, 4);
        let map = rng.uniform_tensor::<f64>(&[c, h, w], 2.0);
        let spread = rng.int_inclusive(1, h * w);
        let base = rng.below(h * w + 1 - spread);
        let mut assign: Vec<usize> = (0..s * s).map(|_| base + rng.below(spread)).collect();
        let a = pa_sample_plan(&map, &PaPlan::from_assignments([assign.as_slice()], h, w), true);
        rng.shuffle(&mut assign);
        let b = pa_sample_plan(&map, &PaPlan::from_assignments([assign.as_slice()], h, w), true);
        for (x, y) in a.z_pa.iter().zip(&b.z_pa) {
            worst = worst.max((x - y).abs());
        }
        worst = worst.max((a.p_pa.x - b.p_pa.x).abs()).max((a.p_pa.y - b.p_pa.y).abs());
    }
    worst
}

/// Largest gradient magnitude reaching the feature maps when only the
/// voted-coordinate route is live, under a random linear probe of the
/// logits. The maps are random rather than encoder outputs so that no two
/// pixel codes coincide, which would make their vote distance zero.
pub fn coordinate_path_gradient(config: &ModelConfig, size: usize, points: usize, seed: u64) -> Result<f64> {
    let model = Q2AModel::<f64>::new(config.clone(), seed)?;
    let mut rng = Rng::new(derive_seed(seed, 0x5e));
    let maps: Vec<Tensor<f64>> = config
        .encoder
        .channels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let side = (size >> (i + 2)).max(1);
            rng.uniform_tensor(&[c, side, side], 1.0)
        })
        .collect();
    let coords: Vec<Coord> = (0..points)
        .map(|_| Coord::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)))
        .collect();

    let mut tape = Tape::new();
    let bound = model.params().bind_constant(&mut tape);
    let vars: Vec<Var> = maps.into_iter().map(|m| tape.leaf(m, true)).collect();
    let vars: [Var; 4] = vars.try_into().expect("four levels");
    let out = model.forward_parts(&mut tape, &bound, vars, &coords, &mut PlanCache::live(), GradPath::CoordinateOnly)?;
    let probe = tape.constant(rng.uniform_tensor(tape.shape(out.logits), 1.0));
    let prod = tape.mul(out.logits, probe)?;
    let root = tape.sum(prod)?;
    let grads = tape.backward(root)?;
    let mut worst: f64 = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v) {
            worst = g.data().iter().fold(worst, |m, x| m.max(x.abs()));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeReport {
    pub samples: usize,
    pub violations: usize,
    pub w_min: f64,
    pub w_max: f64,
    pub offset_max_abs: f64,
}

/// Queries from random generator inputs, including saturating ones. Counts
/// outputs outside the open ranges `(lo, hi)` of `w, h` and `(−1, 1)` of
/// the offsets.
pub fn query_ranges(samples: usize, tau: TauConfig, seed: u64) -> RangeReport {
    let mut rng = Rng::new(seed);
    let channels = [2, 2, 2, 2];
    let mut params = ParamSet::<f64>::new();
    let gen = QueryGenerator::new(&mut params, &mut rng, &channels, 4, tau, true);
    let width = QueryGenerator::input_width(&channels, true);
    let (lo, hi) = tau.w_range();
    let (hlo, hhi) = tau.h_range();
    let mut r = RangeReport {
        samples,
        violations: 0,
        w_min: f64::INFINITY,
        w_max: 0.0,
        offset_max_abs: 0.0,
    };
    for i in 0..samples {
        let qs: Vec<QueryQuadruple> = if i % 2 == 0 {
            let scale = 10f64.powf(rng.uniform_range(-2.0, 3.0));
            let x: Vec<f64> = (0..width).map(|_| scale * rng.normal()).collect();
            gen.generate_queries(&params, &x)
        } else {
            let scale = 10f64.powf(rng.uniform_range(-1.0, 3.0));
            let raw: Vec<f64> = (0..16).map(|_| scale * rng.normal()).collect();
            QueryQuadruple::from_raw(&raw, 4, &tau)
        };
        for q in qs {
            let ok = q.w > lo && q.w < hi && q.h > hlo && q.h < hhi && q.dx.abs() < 1.0 && q.dy.abs() < 1.0;
            if !ok {
                r.violations += 1;
            }
            r.w_min = r.w_min.min(q.w).min(q.h);
            r.w_max = r.w_max.max(q.w).max(q.h);
            r.offset_max_abs = r.offset_max_abs.max(q.dx.abs()).max(q.dy.abs());
        }
    }
    r
}

fn suite(name: &'static str) -> Result<Outcome> {
    let (passed, detail) = match name {
        "grad_check_ops" => {
            let errs = op_grad_errors(1)?;
            let (worst, err) = errs.iter().fold(("", 0.0f64), |a, &(n, e)| if e > a.1 || e.is_nan() { (n, e) } else { a });
            (err < OP_TOLERANCE, format!("{} ops, worst {worst} rel err {err:.2e}", errs.len()))
        }
        "grad_check_model" => {
            let r = model_grad_check(&model_check_config(), 32, 8, 1)?;
            (
                r.max_rel_error < MODEL_TOLERANCE,
                format!("max rel err {:.2e} (input {}, index {})", r.max_rel_error, r.input, r.index),
            )
        }
        "pa_degeneracy" => {
            let r = pa_degeneracy(1000, 2);
            (
                r.latent_mismatches == 0 && r.coordinate_mismatches == 0,
                format!(
                    "{} cells, {} latent and {} coordinate mismatches",
                    r.trials, r.latent_mismatches, r.coordinate_mismatches
                ),
            )
        }
        "voting_normalization" => {
            let r = voting_normalization(10_000, 3);
            (
                r.max_sum_error < 1e-12 && r.max_permutation_change < 1e-9,
                format!(
                    "{} sets, max |sum - 1| {:.1e}, max permutation change {:.1e}",
                    r.sets, r.max_sum_error, r.max_permutation_change
                ),
            )
        }
        "permutation_invariance" => {
            let worst = permutation_invariance(2000, 4);
            (worst < 1e-9, format!("max change {worst:.1e}"))
        }
        "stop_grad_separation" => {
            let base = model_check_config();
            let with = coordinate_path_gradient(&base, 64, 256, 5)?;
            let mut open = base;
            open.ablation.no_stop_grad = true;
            let without = coordinate_path_gradient(&open, 64, 256, 5)?;
            (
                with == 0.0 && without > 0.0,
                format!("coordinate-path grad {with:.1e} with stop-grad, {without:.1e} without"),
            )
        }
        "query_ranges" => {
            let r = query_ranges(100_000, TauConfig::glas(), 6);
            (
                r.violations == 0,
                format!(
                    "{} inputs, {} violations, w,h in [{:.6}, {:.6}], max |offset| {}",
                    r.samples, r.violations, r.w_min, r.w_max, r.offset_max_abs
                ),
            )
        }
        other => return Err(Error::Config(format!("unknown suite `{other}`"))),
    };
    Ok(Outcome {
        suite: name,
        passed,
        detail,
    })
}

/// Runs one named suite; errors count as failures.
pub fn run_suite(name: &'static str) -> Outcome {
    suite(name).unwrap_or_else(|e| Outcome {
        suite: name,
        passed: false,
        detail: format!("error: {e}"),
    })
}

pub fn run_all() -> Vec<Outcome> {
    SUITES.iter().map(|&s| run_suite(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_pass_and_fault_is_caught() {
        let errs = op_grad_errors(1).unwrap();
        assert!(errs.iter().all(|&(_, e)| e < OP_TOLERANCE), "{errs:?}");
        autodiff::fault::set_flip_tanh_backward(true);
        let faulty = op_grad_errors(1);
        autodiff::fault::set_flip_tanh_backward(false);
        let faulty = faulty.unwrap();
        let tanh = faulty.iter().find(|e| e.0 == "tanh").unwrap().1;
        assert!(tanh > 0.1, "{faulty:?}");
    }

    #[test]
    fn small_invariant_runs() {
        let d = pa_degeneracy(200, 9);
        assert_eq!((d.latent_mismatches, d.coordinate_mismatches), (0, 0));
        let v = voting_normalization(500, 9);
        assert!(v.max_sum_error < 1e-12 && v.max_permutation_change < 1e-9, "{v:?}");
        assert!(permutation_invariance(300, 9) < 1e-9);
        let q = query_ranges(2000, TauConfig::glas(), 9);
        assert_eq!(q.violations, 0, "{q:?}");
        // saturating inputs are present, so the extremes are approached
        assert!(q.offset_max_abs > 0.999999 && q.w_max > 0.2499 && q.w_min < 0.0079, "{q:?}");
    }

    #[test]
    fn unknown_suite_fails() {
        let o = run_suite("nope");
        assert!(!o.passed && o.detail.contains("nope"));
    }
}

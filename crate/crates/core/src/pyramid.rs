//! Fully continuous feature pyramid: partition-and-aggregate latent
//! acquisition with voting-based coordinate aggregation, sinusoidal
//! encoding of relative offsets, cell embedding and the shared decoding MLP.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use autodiff::{BackwardOp, Bound, Element, ParamId, ParamSet, Rng, RowMix, Tape, Tensor, Var};

use crate::ablation::Ablation;
use crate::coords::{center_of, nearest_pixel, Coord};
use crate::encoder::LEVELS;
use crate::nn::Mlp;
use crate::{Error, Result};

static VOTE_FALLBACKS: AtomicU64 = AtomicU64::new(0);

/// Number of rows whose voting weights were not finite and fell back to
/// uniform weights, since process start.
pub fn vote_fallbacks() -> u64 {
    VOTE_FALLBACKS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaConfig {
    pub s: usize,
}

impl Default for PaConfig {
    fn default() -> Self {
        PaConfig { s: 2 }
    }
}

/// Centers of the `s × s` subcells of a `w × h` cell relative to its
/// center, row-major (rows along `y`).
pub fn subcell_offsets(w: f64, h: f64, s: usize) -> Vec<(f64, f64)> {
    let sf = s as f64;
    let mut out = Vec::with_capacity(s * s);
    for j in 1..=s {
        for l in 1..=s {
            out.push((
                w * (2.0 * l as f64 - 1.0 - sf) / (2.0 * sf),
                h * (2.0 * j as f64 - 1.0 - sf) / (2.0 * sf),
            ));
        }
    }
    out
}

/// Clamped subcell center coordinates around `p_hat`.
pub fn subcell_coords(p_hat: Coord, w: f64, h: f64, s: usize) -> Vec<Coord> {
    subcell_offsets(w, h, s)
        .into_iter()
        .map(|(dx, dy)| p_hat.offset(dx, dy).clamped())
        .collect()
}

/// Subcell-to-pixel assignment for a batch of query cells, with subcells
/// that land on the same pixel merged into one group with a multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct PaPlan {
    height: usize,
    width: usize,
    s2: usize,
    offsets: Vec<usize>,
    pixels: Vec<usize>,
    counts: Vec<u32>,
}

impl PaPlan {
    /// Groups explicit per-row subcell pixel lists (flat `row * width + col`
    /// indices). Every row must list the same number of subcells.
    pub fn from_assignments<'a>(rows: impl IntoIterator<Item = &'a [usize]>, height: usize, width: usize) -> Self {
        let mut plan = PaPlan {
            height,
            width,
            s2: 0,
            offsets: vec![0],
            pixels: Vec::new(),
            counts: Vec::new(),
        };
        for row in rows {
            if plan.s2 == 0 {
                plan.s2 = row.len();
            }
            assert!(!row.is_empty() && row.len() == plan.s2, "ragged subcell assignment");
            plan.push_row(row);
        }
        plan
    }

    fn push_row(&mut self, subcells: &[usize]) {
        let start = *self.offsets.last().unwrap();
        for &px in subcells {
            debug_assert!(px < self.height * self.width);
            match self.pixels[start..].iter().position(|&p| p == px) {
                Some(g) => self.counts[start + g] += 1,
                None => {
                    self.pixels.push(px);
                    self.counts.push(1);
                }
            }
        }
        self.offsets.push(self.pixels.len());
    }

    pub fn build(p_hat: &[Coord], cells: &[(f64, f64)], s: usize, height: usize, width: usize) -> Self {
        assert_eq!(p_hat.len(), cells.len());
        let mut plan = PaPlan::from_assignments(std::iter::empty(), height, width);
        plan.s2 = s * s;
        let mut buf = Vec::with_capacity(s * s);
        for (&p, &(w, h)) in p_hat.iter().zip(cells) {
            buf.clear();
            buf.extend(subcell_coords(p.clamped(), w, h, s).into_iter().map(|q| {
                let (r, c) = nearest_pixel(q, height, width);
                r * width + c
            }));
            plan.push_row(&buf);
        }
        plan
    }

    /// One group per row holding the nearest pixel of `p_hat` itself.
    pub fn nearest(p_hat: &[Coord], height: usize, width: usize) -> Self {
        let mut plan = PaPlan::from_assignments(std::iter::empty(), height, width);
        plan.s2 = 1;
        for &p in p_hat {
            let (r, c) = nearest_pixel(p.clamped(), height, width);
            plan.push_row(&[r * width + c]);
        }
        plan
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn subcells(&self) -> usize {
        self.s2
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Distinct pixels of row `r` and how many subcells fell on each.
    pub fn groups(&self, r: usize) -> (&[usize], &[u32]) {
        let range = self.offsets[r]..self.offsets[r + 1];
        (&self.pixels[range.clone()], &self.counts[range])
    }

    pub fn center(&self, pixel: usize) -> Coord {
        center_of(pixel / self.width, pixel % self.width, self.height, self.width)
    }

    /// Row mix averaging the subcell codes (weight `count / s²` per pixel).
    pub fn latent_mix<T: Element>(&self) -> RowMix<T> {
        let mut mix = RowMix::new();
        let s2 = T::from_usize(self.s2);
        for r in 0..self.rows() {
            let (px, counts) = self.groups(r);
            mix.push_row(px.iter().zip(counts).map(|(&p, &c)| (p, T::from_f64(c as f64) / s2)));
        }
        mix
    }

    /// Subcell-coordinate centroids (the aggregated coordinate under uniform
    /// weights).
    pub fn uniform_coordinates(&self) -> Vec<Coord> {
        (0..self.rows())
            .map(|r| {
                let (px, counts) = self.groups(r);
                let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / self.s2 as f64).collect();
                let centers: Vec<Coord> = px.iter().map(|&p| self.center(p)).collect();
                pa_coordinate(&centers, &weights)
            })
            .collect()
    }
}

fn distance<T: Element>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt()
}

/// Normalized total voting weight of each group.
///
/// A subcell's unnormalized weight is the product of the votes
/// `exp(−‖z_u − z_v‖)` it receives from every subcell (itself included).
/// Subcells sharing a pixel share a code, so group `g` has log weight
/// `−Σ_h count_h · ‖z_g − z_h‖`; normalization is done in the log domain.
/// Returns `None` if the weights are not finite.
fn group_weights<T: Element>(codes: &[&[T]], counts: &[u32]) -> Option<Vec<T>> {
    let n = codes.len();
    let mut logw = vec![T::zero(); n];
    for g in 0..n {
        for h in (g + 1)..n {
            let d = distance(codes[g], codes[h]);
            logw[g] -= T::from_f64(counts[h] as f64) * d;
            logw[h] -= T::from_f64(counts[g] as f64) * d;
        }
    }
    let max = logw.iter().copied().fold(T::neg_infinity(), T::max);
    let mut w: Vec<T> = logw
        .iter()
        .zip(counts)
        .map(|(&l, &c)| T::from_f64(c as f64) * (l - max).exp())
        .collect();
    let z: T = w.iter().copied().fold(T::zero(), |a, b| a + b);
    if !z.is_finite() || z <= T::zero() {
        return None;
    }
    for v in &mut w {
        *v = *v / z;
    }
    Some(w)
}

/// Per-subcell normalized voting weights for `s²` codes.
pub fn voting_weights<T: Element>(codes: &[Vec<T>]) -> Vec<T> {
    let refs: Vec<&[T]> = codes.iter().map(Vec::as_slice).collect();
    let ones = vec![1u32; codes.len()];
    group_weights(&refs, &ones).unwrap_or_else(|| {
        VOTE_FALLBACKS.fetch_add(1, Ordering::Relaxed);
        vec![T::one() / T::from_usize(codes.len()); codes.len()]
    })
}

/// Weighted sum of subcell coordinates.
pub fn pa_coordinate(centers: &[Coord], weights: &[f64]) -> Coord {
    assert_eq!(centers.len(), weights.len());
    let mut p = Coord::default();
    for (c, &w) in centers.iter().zip(weights) {
        p.x += w * c.x;
        p.y += w * c.y;
    }
    p
}

/// Voted coordinates for every row of `plan` over `[H·W × C]` code rows;
/// also returns the group weights, flattened in plan order.
fn vote_rows<T: Element>(rows: &[T], cols: usize, plan: &PaPlan) -> (Vec<T>, Vec<T>) {
    let mut out = Vec::with_capacity(plan.rows() * 2);
    let mut all_weights = Vec::with_capacity(plan.pixels.len());
    for r in 0..plan.rows() {
        let (px, counts) = plan.groups(r);
        let codes: Vec<&[T]> = px.iter().map(|&p| &rows[p * cols..(p + 1) * cols]).collect();
        let weights = group_weights(&codes, counts).unwrap_or_else(|| {
            VOTE_FALLBACKS.fetch_add(1, Ordering::Relaxed);
            let s2 = T::from_usize(plan.s2);
            counts.iter().map(|&c| T::from_f64(c as f64) / s2).collect()
        });
        let (mut x, mut y) = (T::zero(), T::zero());
        for (&p, &w) in px.iter().zip(&weights) {
            let c = plan.center(p);
            x += w * T::from_f64(c.x);
            y += w * T::from_f64(c.y);
        }
        out.push(x);
        out.push(y);
        all_weights.extend(weights);
    }
    (out, all_weights)
}

struct VoteCoordinate<T> {
    plan: Arc<PaPlan>,
    weights: Vec<T>,
}

impl<T: Element> BackwardOp<T> for VoteCoordinate<T> {
    fn name(&self) -> &'static str {
        "vote_coordinate"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let src = inputs[0];
        let cols = src.shape()[1];
        let rows = src.data();
        let plan = &*self.plan;
        let mut g = vec![T::zero(); src.numel()];
        let mut dz = vec![T::zero(); cols];
        for r in 0..plan.rows() {
            let (px, counts) = plan.groups(r);
            let n = px.len();
            if n < 2 {
                continue;
            }
            let a = &self.weights[plan.offsets[r]..plan.offsets[r + 1]];
            let (p, go) = (&output.data()[2 * r..2 * r + 2], &grad.data()[2 * r..2 * r + 2]);
            // dL/dlogw_g = A_g · ⟨grad, P_g − p⟩
            let dl: Vec<T> = px
                .iter()
                .zip(a)
                .map(|(&pix, &w)| {
                    let c = plan.center(pix);
                    w * (go[0] * (T::from_f64(c.x) - p[0]) + go[1] * (T::from_f64(c.y) - p[1]))
                })
                .collect();
            for gi in 0..n {
                for hi in (gi + 1)..n {
                    let (zg, zh) = (
                        &rows[px[gi] * cols..(px[gi] + 1) * cols],
                        &rows[px[hi] * cols..(px[hi] + 1) * cols],
                    );
                    let d = distance(zg, zh);
                    if d == T::zero() {
                        continue;
                    }
                    let coef = -(T::from_f64(counts[hi] as f64) * dl[gi] + T::from_f64(counts[gi] as f64) * dl[hi]) / d;
                    for ((o, &x), &y) in dz.iter_mut().zip(zg).zip(zh) {
                        *o = coef * (x - y);
                    }
                    for (k, &v) in dz.iter().enumerate() {
                        g[px[gi] * cols + k] += v;
                        g[px[hi] * cols + k] -= v;
                    }
                }
            }
        }
        vec![Some(Tensor::new(src.shape().to_vec(), g).unwrap())]
    }
}

/// Records the voted coordinates `[R × 2]` of `plan` over code rows `src`
/// (`[H·W × C]`). Differentiable with respect to the codes.
pub fn vote_coordinate<T: Element>(tape: &mut Tape<T>, src: Var, plan: Arc<PaPlan>) -> Result<Var> {
    let sv = tape.value(src);
    let (h, w) = plan.dims();
    if sv.rank() != 2 || sv.shape()[0] != h * w {
        return Err(Error::Config(format!(
            "vote source {:?} does not match a {h}×{w} plan",
            sv.shape()
        )));
    }
    let (out, weights) = vote_rows(sv.data(), sv.shape()[1], &plan);
    let value = Tensor::new(vec![plan.rows(), 2], out)?;
    Ok(tape.record(value, &[src], VoteCoordinate { plan, weights })?)
}

/// `[C × H × W]` map as `[H·W × C]` row-major rows.
pub fn map_rows<T: Element>(map: &Tensor<T>) -> Vec<T> {
    let (c, hw) = (map.shape()[0], map.shape()[1] * map.shape()[2]);
    let mut out = vec![T::zero(); c * hw];
    for ch in 0..c {
        for i in 0..hw {
            out[i * c + ch] = map.data()[ch * hw + i];
        }
    }
    out
}

/// Latent code and aggregated coordinate for one query cell on one level.
#[derive(Debug, Clone, PartialEq)]
pub struct PaResult<T> {
    pub z_pa: Vec<T>,
    pub p_pa: Coord,
}

/// Evaluates a one-row plan on a `[C × H × W]` map.
pub fn pa_sample_plan<T: Element>(map: &Tensor<T>, plan: &PaPlan, voting: bool) -> PaResult<T> {
    assert_eq!(plan.rows(), 1);
    let c = map.shape()[0];
    let rows = map_rows(map);
    let z_pa = plan.latent_mix::<T>().apply(&rows, c);
    let p_pa = if voting {
        let (out, _) = vote_rows(&rows, c, plan);
        Coord::new(out[0].as_f64(), out[1].as_f64())
    } else {
        plan.uniform_coordinates()[0]
    };
    PaResult { z_pa, p_pa }
}

/// Partition-and-aggregate sample of `map` for the cell `(w, h)` at `p_hat`.
pub fn pa_sample<T: Element>(map: &Tensor<T>, p_hat: Coord, cell: (f64, f64), s: usize, voting: bool) -> PaResult<T> {
    let plan = PaPlan::build(&[p_hat], &[cell], s, map.shape()[1], map.shape()[2]);
    pa_sample_plan(map, &plan, voting)
}

/// Mean of the `s²` nearest-sampled subcell codes.
pub fn pa_latent<T: Element>(map: &Tensor<T>, p_hat: Coord, cell: (f64, f64), s: usize) -> Vec<T> {
    pa_sample(map, p_hat, cell, s, false).z_pa
}

/// `(sin(ω_1 x), cos(ω_1 x), …, sin(ω_L x), cos(ω_L x))` for every component.
pub fn spatial_encoding(x: &[f64], omega: &[f64]) -> Vec<f64> {
    x.iter()
        .flat_map(|&v| omega.iter().flat_map(move |&w| [(w * v).sin(), (w * v).cos()]))
        .collect()
}

/// Initial frequencies `ω_l = 2^l`, `l = 1..=L`.
pub fn initial_frequencies(l: usize) -> Vec<f64> {
    (1..=l).map(|i| 2f64.powi(i as i32)).collect()
}

/// `[w·e, h·e]`.
pub fn cell_embedding(w: f64, h: f64, e: &[f64]) -> Vec<f64> {
    e.iter().map(|&v| w * v).chain(e.iter().map(|&v| h * v)).collect()
}

/// Tape version of [`spatial_encoding`] for `[R × d]` inputs and `[L]`
/// frequencies, giving `[R × 2Ld]`.
pub fn spatial_encoding_op<T: Element>(tape: &mut Tape<T>, x: Var, omega: Var) -> Result<Var> {
    let (r, d) = (tape.shape(x)[0], tape.shape(x)[1]);
    let l = tape.shape(omega)[0];
    let x3 = tape.reshape(x, vec![r, d, 1])?;
    let arg = tape.mul(x3, omega)?;
    let s = tape.sin(arg)?;
    let c = tape.cos(arg)?;
    let s = tape.reshape(s, vec![r, d, l, 1])?;
    let c = tape.reshape(c, vec![r, d, l, 1])?;
    let sc = tape.concat(&[s, c], 3)?;
    Ok(tape.reshape(sc, vec![r, 2 * l * d])?)
}

/// Tape version of [`cell_embedding`] for `[R × 2]` cells and `[C_e]`
/// embedding, giving `[R × 2C_e]`.
pub fn cell_embedding_op<T: Element>(tape: &mut Tape<T>, cell: Var, e: Var) -> Result<Var> {
    let r = tape.shape(cell)[0];
    let ce = tape.shape(e)[0];
    let c3 = tape.reshape(cell, vec![r, 2, 1])?;
    let prod = tape.mul(c3, e)?;
    Ok(tape.reshape(prod, vec![r, 2 * ce])?)
}

/// Where subcell plans come from during a forward pass.
///
/// `Record` stores every plan built; `Replay` reuses them in order so that
/// repeated evaluations under small perturbations keep the same discrete
/// subcell-to-pixel choices. Stop-gradient values are recorded too: the tape
/// treats them as constants, so replay holds them fixed in value as well.
#[derive(Debug, Clone, Default)]
pub struct PlanCache {
    mode: PlanMode,
    plans: Vec<Arc<PaPlan>>,
    cursor: usize,
    held: Vec<Vec<f64>>,
    held_cursor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlanMode {
    #[default]
    Live,
    Record,
    Replay,
}

impl PlanCache {
    pub fn live() -> Self {
        Self::default()
    }

    pub fn recording() -> Self {
        PlanCache {
            mode: PlanMode::Record,
            ..Self::default()
        }
    }

    /// Switches to replaying the recorded plans from the start.
    pub fn rewind(&mut self) {
        self.mode = PlanMode::Replay;
        self.cursor = 0;
        self.held_cursor = 0;
    }

    pub fn mode(&self) -> PlanMode {
        self.mode
    }

    pub fn plans(&self) -> &[Arc<PaPlan>] {
        &self.plans
    }

    /// Passes a stop-gradient value through, recording it or replacing it
    /// with the recorded constant depending on the mode.
    pub fn hold<T: Element>(&mut self, tape: &mut Tape<T>, v: Var) -> Result<Var> {
        match self.mode {
            PlanMode::Live => Ok(v),
            PlanMode::Record => {
                self.held.push(tape.value(v).data().iter().map(|x| x.as_f64()).collect());
                Ok(v)
            }
            PlanMode::Replay => {
                let data = self
                    .held
                    .get(self.held_cursor)
                    .ok_or_else(|| Error::Config("held-value replay ran past the recording".into()))?;
                self.held_cursor += 1;
                let shape = tape.shape(v).to_vec();
                Ok(tape.constant(Tensor::from_f64(shape, data)?))
            }
        }
    }

    pub fn fetch(&mut self, build: impl FnOnce() -> PaPlan) -> Result<Arc<PaPlan>> {
        match self.mode {
            PlanMode::Live => Ok(Arc::new(build())),
            PlanMode::Record => {
                let plan = Arc::new(build());
                self.plans.push(plan.clone());
                Ok(plan)
            }
            PlanMode::Replay => {
                let plan = self
                    .plans
                    .get(self.cursor)
                    .cloned()
                    .ok_or_else(|| Error::Config("plan replay ran past the recording".into()))?;
                self.cursor += 1;
                Ok(plan)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcfpConfig {
    pub s: usize,
    /// Number of encoding frequencies `L`.
    pub freqs: usize,
    /// Cell embedding width `C_e`.
    pub cell_width: usize,
    /// Aligned feature width `C_a`.
    pub out_width: usize,
    pub hidden: Vec<usize>,
}

impl Default for FcfpConfig {
    fn default() -> Self {
        FcfpConfig {
            s: 2,
            freqs: 2,
            cell_width: 2,
            out_width: 64,
            hidden: vec![128, 64],
        }
    }
}

/// Per-level code rows (`[H_i·W_i × C_i]`) the pyramid reads from. The
/// latent and voting paths may see differently detached copies of the same
/// maps.
#[derive(Debug, Clone, Copy)]
pub struct LevelInputs {
    pub latent: [Var; LEVELS],
    pub vote: [Var; LEVELS],
    pub dims: [(usize, usize); LEVELS],
}

#[derive(Debug, Clone)]
pub struct Fcfp {
    config: FcfpConfig,
    ablation: Ablation,
    mlp: Mlp,
    omega: Option<ParamId>,
    embed: Option<ParamId>,
}

impl Fcfp {
    pub fn input_width(channels: &[usize; LEVELS], config: &FcfpConfig, ablation: &Ablation) -> usize {
        let enc = if ablation.no_spatial_enc { 0 } else { 4 * config.freqs };
        let cell = if ablation.no_cell_embed { 0 } else { 2 * config.cell_width };
        channels.iter().map(|c| c + 2 + enc).sum::<usize>() + cell
    }

    pub fn new<T: Element>(
        params: &mut ParamSet<T>,
        rng: &mut Rng,
        channels: &[usize; LEVELS],
        config: FcfpConfig,
        ablation: Ablation,
    ) -> Self {
        assert!(config.s >= 1, "s must be positive");
        let omega = (!ablation.no_spatial_enc).then(|| {
            let w: Vec<T> = initial_frequencies(config.freqs).into_iter().map(T::from_f64).collect();
            params.add("fcfp.omega", Tensor::new(vec![config.freqs], w).expect("L >= 1"))
        });
        let embed = (!ablation.no_cell_embed).then(|| params.add("fcfp.cell_embed", Tensor::ones(vec![config.cell_width])));
        let mut widths = vec![Self::input_width(channels, &config, &ablation)];
        widths.extend(&config.hidden);
        widths.push(config.out_width);
        let mlp = Mlp::new(params, rng, "fcfp.mlp", &widths);
        Fcfp {
            config,
            ablation,
            mlp,
            omega,
            embed,
        }
    }

    pub fn config(&self) -> &FcfpConfig {
        &self.config
    }

    pub fn omega(&self) -> Option<ParamId> {
        self.omega
    }

    pub fn embed(&self) -> Option<ParamId> {
        self.embed
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn num_scalars(&self) -> usize {
        self.mlp.num_scalars()
            + if self.omega.is_some() { self.config.freqs } else { 0 }
            + if self.embed.is_some() { self.config.cell_width } else { 0 }
    }

    /// Aligned features `[R × C_a]` for shifted coordinates `p_hat` (`[R × 2]`,
    /// already clamped) and cells `cell` (`[R × 2]`, `(w, h)` per row).
    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        levels: &LevelInputs,
        p_hat: Var,
        cell: Var,
        plans: &mut PlanCache,
    ) -> Result<Var> {
        let coords: Vec<Coord> = tape
            .value(p_hat)
            .data()
            .chunks(2)
            .map(|c| Coord::new(c[0].as_f64(), c[1].as_f64()))
            .collect();
        let cells: Vec<(f64, f64)> = tape
            .value(cell)
            .data()
            .chunks(2)
            .map(|c| (c[0].as_f64(), c[1].as_f64()))
            .collect();
        let a = &self.ablation;
        let mut parts = Vec::with_capacity(3 * LEVELS + 1);
        for level in 0..LEVELS {
            let (h, w) = levels.dims[level];
            let plan = plans.fetch(|| {
                if a.no_pa {
                    PaPlan::nearest(&coords, h, w)
                } else {
                    PaPlan::build(&coords, &cells, self.config.s, h, w)
                }
            })?;
            if plan.rows() != coords.len() || plan.dims() != (h, w) {
                return Err(Error::Config("cached plan does not match the query batch".into()));
            }
            let z = tape.gather_rows(levels.latent[level], plan.latent_mix())?;
            let p_pa = if a.no_pa || a.no_voting {
                let flat: Vec<T> = plan
                    .uniform_coordinates()
                    .iter()
                    .flat_map(|c| [T::from_f64(c.x), T::from_f64(c.y)])
                    .collect();
                tape.constant(Tensor::new(vec![coords.len(), 2], flat)?)
            } else {
                let v = vote_coordinate(tape, levels.vote[level], plan)?;
                if a.no_stop_grad {
                    v
                } else {
                    let held = tape.stop_grad(v)?;
                    plans.hold(tape, held)?
                }
            };
            let d = tape.sub(p_hat, p_pa)?;
            parts.push(z);
            parts.push(d);
            if let Some(omega) = self.omega {
                parts.push(spatial_encoding_op(tape, d, bound.var(omega))?);
            }
        }
        if let Some(e) = self.embed {
            parts.push(cell_embedding_op(tape, cell, bound.var(e))?);
        }
        let x = tape.concat(&parts, 1)?;
        self.mlp.forward(tape, bound, x)
    }
}

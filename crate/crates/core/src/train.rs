//! MSE loss, reverse-mode gradients through the unrolled nets, Adam, and the
//! layer-wise training protocol.
//!
//! Layer-wise training runs two stages per layer `l`: stage A fits only the
//! new layer against the depth-`l` output; stage B jointly refines layers
//! `1..=l` at a lower learning rate. Each stage early-stops on validation
//! loss and restores its best parameters. The fine net is trained on the
//! outputs of a frozen coarse net.
//!
//! Support selection and the fine net's inter-frame support chaining are
//! treated as constants in the reverse pass.

use std::ops::Range;

use log::{debug, info, warn};
use ndarray::{concatenate, Array2, ArrayView2, Axis, Slice};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::lift::LiftedMatrix;
use crate::nets::{
    coarse_forward_batch, fine_forward_batch, layer_backward, split_columns, ActivationMode,
    CoarseNetParams, CoarseTrace, FineNetParams, FineTrace, LayerGrad, NetVariant,
};
use crate::sim::{derive_seed, EpisodeSample};

/// Floor applied to thresholds and `omega` after every optimizer step.
pub const PARAM_FLOOR: f64 = 1e-8;

/// Fraction of optimizer steps allowed to hit [`PARAM_FLOOR`] in a healthy run.
pub const MAX_CLAMP_FRACTION: f64 = 0.01;

/// Mean squared error and its cotangent `2 (pred - truth) / n`.
pub fn mse_loss(pred: &LiftedMatrix, truth: &LiftedMatrix) -> Result<(f64, Array2<f64>)> {
    if pred.data().dim() != truth.data().dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs truth {:?}",
            pred.data().dim(),
            truth.data().dim()
        )));
    }
    Ok(mse_raw(pred.view(), truth.view()))
}

pub(crate) fn mse_raw(pred: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let diff = &pred - &truth;
    let n = diff.len().max(1) as f64;
    let loss = diff.iter().map(|x| x * x).sum::<f64>() / n;
    (loss, diff.mapv(|x| 2.0 * x / n))
}

fn mse_value(pred: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter().zip(truth.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

/// Gradients for every layer of a net plus the shared `omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrad>,
    pub omega: f64,
}

impl NetGrads {
    pub fn zeros(num_layers: usize, w_shape: (usize, usize)) -> Self {
        Self {
            layers: (0..num_layers)
                .map(|_| LayerGrad {
                    w: Array2::zeros(w_shape),
                    theta: 0.0,
                })
                .collect(),
            omega: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.theta += b.theta;
        }
        self.omega += other.omega;
    }

    pub fn scale(&mut self, f: f64) {
        for l in &mut self.layers {
            l.w *= f;
            l.theta *= f;
        }
        self.omega *= f;
    }

    pub(crate) fn slices(&self, range: Range<usize>, omega: bool) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers[range] {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(std::slice::from_ref(&l.theta));
        }
        if omega {
            out.push(std::slice::from_ref(&self.omega));
        }
        out
    }

    fn all_finite(&self) -> bool {
        self.omega.is_finite()
            && self
                .layers
                .iter()
                .all(|l| l.theta.is_finite() && l.w.iter().all(|x| x.is_finite()))
    }
}

/// Reverse pass of the coarse net given the cotangent of its output.
pub fn backward_coarse(
    params: &CoarseNetParams,
    phi: &LiftedMatrix,
    trace: &CoarseTrace,
    cotangent: ArrayView2<'_, f64>,
) -> Result<NetGrads> {
    backward_coarse_from(params, phi, trace, cotangent, 0)
}

/// Like [`backward_coarse`] but stops below layer index `lowest` (0-based).
pub(crate) fn backward_coarse_from(
    params: &CoarseNetParams,
    phi: &LiftedMatrix,
    trace: &CoarseTrace,
    cotangent: ArrayView2<'_, f64>,
    lowest: usize,
) -> Result<NetGrads> {
    if trace.fingerprint != params.fingerprint() || trace.layers.len() > params.num_layers() {
        return Err(Error::StaleTrace("coarse trace was produced by different parameters".into()));
    }
    if cotangent.dim() != trace.output().dim() {
        return Err(Error::ShapeMismatch(format!(
            "cotangent {:?} vs output {:?}",
            cotangent.dim(),
            trace.output().dim()
        )));
    }
    let mut grads = NetGrads::zeros(params.num_layers(), params.layers[0].w.dim());
    let mut d = cotangent.to_owned();
    for l in (lowest..trace.layers.len()).rev() {
        let (g, _, d_in) = layer_backward(
            &params.layers[l],
            phi.view(),
            &trace.layers[l],
            d.view(),
            trace.mode.grouping,
            l > lowest,
        );
        grads.layers[l] = g;
        if let Some(d_in) = d_in {
            d = d_in;
        }
    }
    Ok(grads)
}

/// Reverse pass of the fine net given the cotangent of its concatenated output.
pub fn backward_fine(
    params: &FineNetParams,
    phi: &LiftedMatrix,
    trace: &FineTrace,
    cotangent: ArrayView2<'_, f64>,
) -> Result<NetGrads> {
    backward_fine_from(params, phi, trace, cotangent, 0)
}

pub(crate) fn backward_fine_from(
    params: &FineNetParams,
    phi: &LiftedMatrix,
    trace: &FineTrace,
    cotangent: ArrayView2<'_, f64>,
    lowest: usize,
) -> Result<NetGrads> {
    if trace.fingerprint != params.fingerprint() {
        return Err(Error::StaleTrace("fine trace was produced by different parameters".into()));
    }
    let frames = trace.frames.len();
    let cols = trace.frames[0][0].output.ncols();
    if cotangent.ncols() != frames * cols || cotangent.nrows() != trace.frames[0][0].output.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "cotangent {:?} vs {frames} frames of width {cols}",
            cotangent.dim()
        )));
    }
    let mut grads = NetGrads::zeros(params.num_layers(), params.layers[0].w.dim());
    for (frame, d_frame) in trace.frames.iter().zip(split_columns(cotangent, cols)) {
        let mut d = d_frame.to_owned();
        for l in (lowest..frame.len()).rev() {
            let (g, d_omega, d_in) = layer_backward(
                &params.layers[l],
                phi.view(),
                &frame[l],
                d.view(),
                trace.mode.grouping,
                l > lowest,
            );
            grads.layers[l].w += &g.w;
            grads.layers[l].theta += g.theta;
            grads.omega += d_omega;
            if let Some(d_in) = d_in {
                d = d_in;
            }
        }
    }
    Ok(grads)
}

/// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, lr: f64, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::ShapeMismatch(format!("tensor {i} changed size")));
            }
            for k in 0..m.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// A net whose parameters the layer-wise trainer can update.
pub(crate) trait Unrolled: Clone {
    fn num_layers(&self) -> usize;
    fn has_omega(&self) -> bool;
    fn param_slices(&mut self, range: Range<usize>, omega: bool) -> Vec<&mut [f64]>;
    /// Floors thresholds (and omega); returns how many were clamped.
    fn clamp(&mut self, range: Range<usize>, omega: bool) -> usize;
}

fn layer_slices(layers: &mut [crate::nets::Layer]) -> Vec<&mut [f64]> {
    let mut out = Vec::new();
    for l in layers {
        if !l.w.is_standard_layout() {
            l.w = l.w.as_standard_layout().into_owned();
        }
        out.push(l.w.as_slice_mut().expect("standard layout"));
        out.push(std::slice::from_mut(&mut l.theta));
    }
    out
}

fn clamp_layers(layers: &mut [crate::nets::Layer]) -> usize {
    let mut n = 0;
    for l in layers {
        if !(l.theta >= PARAM_FLOOR) {
            l.theta = PARAM_FLOOR;
            n += 1;
        }
    }
    n
}

impl Unrolled for CoarseNetParams {
    fn num_layers(&self) -> usize {
        self.layers.len()
    }
    fn has_omega(&self) -> bool {
        false
    }
    fn param_slices(&mut self, range: Range<usize>, _omega: bool) -> Vec<&mut [f64]> {
        layer_slices(&mut self.layers[range])
    }
    fn clamp(&mut self, range: Range<usize>, _omega: bool) -> usize {
        clamp_layers(&mut self.layers[range])
    }
}

impl Unrolled for FineNetParams {
    fn num_layers(&self) -> usize {
        self.layers.len()
    }
    fn has_omega(&self) -> bool {
        true
    }
    fn param_slices(&mut self, range: Range<usize>, omega: bool) -> Vec<&mut [f64]> {
        let mut out = layer_slices(&mut self.layers[range]);
        if omega {
            out.push(std::slice::from_mut(&mut self.omega));
        }
        out
    }
    fn clamp(&mut self, range: Range<usize>, omega: bool) -> usize {
        let mut n = clamp_layers(&mut self.layers[range]);
        if omega && !(self.omega >= PARAM_FLOOR) {
            self.omega = PARAM_FLOOR;
            n += 1;
        }
        n
    }
}

/// Loss and gradient oracle over a training and a validation set.
trait Problem {
    type Params: Unrolled;
    fn train_len(&self) -> usize;
    fn val_len(&self) -> usize;
    /// Mean loss and mean gradient over the training episodes `idx`.
    fn loss_grad(&self, p: &Self::Params, idx: &[usize], depth: usize, lowest: usize) -> Result<(f64, NetGrads)>;
    /// Summed loss over the validation episodes `idx`.
    fn val_loss_sum(&self, p: &Self::Params, idx: &[usize], depth: usize) -> Result<f64>;
}

fn hstack<'a>(views: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Array2<f64> {
    let views: Vec<_> = views.into_iter().collect();
    concatenate(Axis(1), &views).expect("episodes share row count")
}

struct CoarseProblem<'a> {
    mode: ActivationMode,
    train: &'a [EpisodeSample],
    val: &'a [EpisodeSample],
}

impl CoarseProblem<'_> {
    fn run(
        &self,
        p: &CoarseNetParams,
        eps: &[EpisodeSample],
        idx: &[usize],
        depth: usize,
    ) -> Result<(CoarseTrace, Array2<f64>)> {
        let first = &eps[idx[0]];
        let r = hstack(idx.iter().map(|&i| eps[i].r_bar.view()));
        let g = hstack(idx.iter().map(|&i| eps[i].g_bar.view()));
        let trace = coarse_forward_batch(p, self.mode, &first.phi, r.view(), first.r_bar.data().ncols(), depth)?;
        Ok((trace, g))
    }
}

impl Problem for CoarseProblem<'_> {
    type Params = CoarseNetParams;

    fn train_len(&self) -> usize {
        self.train.len()
    }
    fn val_len(&self) -> usize {
        self.val.len()
    }

    fn loss_grad(&self, p: &CoarseNetParams, idx: &[usize], depth: usize, lowest: usize) -> Result<(f64, NetGrads)> {
        let (trace, g) = self.run(p, self.train, idx, depth)?;
        let (loss, ct) = mse_raw(trace.output().view(), g.view());
        let grads = backward_coarse_from(p, &self.train[idx[0]].phi, &trace, ct.view(), lowest)?;
        Ok((loss, grads))
    }

    fn val_loss_sum(&self, p: &CoarseNetParams, idx: &[usize], depth: usize) -> Result<f64> {
        let (trace, g) = self.run(p, self.val, idx, depth)?;
        Ok(mse_value(trace.output().view(), g.view()) * idx.len() as f64)
    }
}

/// Fine-net training input: the episode plus the frozen coarse estimate.
struct FineInput<'a> {
    episode: &'a EpisodeSample,
    coarse: Array2<f64>,
}

struct FineProblem<'a> {
    mode: ActivationMode,
    train: Vec<FineInput<'a>>,
    val: Vec<FineInput<'a>>,
}

impl FineProblem<'_> {
    /// Fine trace over the stacked episodes and the matching frame-major truth.
    fn run(&self, p: &FineNetParams, inputs: &[FineInput<'_>], idx: &[usize], depth: usize) -> Result<(FineTrace, Array2<f64>)> {
        let first = inputs[idx[0]].episode;
        let frames = first.z_bar_frames.len();
        let n = first.r_bar.data().ncols() / frames;
        let mut z = Vec::with_capacity(frames);
        let mut s0 = Vec::with_capacity(frames);
        let mut truth = Vec::with_capacity(frames);
        for f in 0..frames {
            let cols = Slice::from(f * n..(f + 1) * n);
            z.push(hstack(idx.iter().map(|&i| inputs[i].episode.z_bar_frames[f].view())));
            s0.push(hstack(idx.iter().map(|&i| inputs[i].coarse.slice_axis(Axis(1), cols))));
            truth.push(hstack(idx.iter().map(|&i| inputs[i].episode.g_bar.data().slice_axis(Axis(1), cols))));
        }
        let zv: Vec<_> = z.iter().map(|a| a.view()).collect();
        let sv: Vec<_> = s0.iter().map(|a| a.view()).collect();
        let trace = fine_forward_batch(p, self.mode, &first.phi, &zv, &sv, n, depth)?;
        Ok((trace, hstack(truth.iter().map(|a| a.view()))))
    }
}

impl Problem for FineProblem<'_> {
    type Params = FineNetParams;

    fn train_len(&self) -> usize {
        self.train.len()
    }
    fn val_len(&self) -> usize {
        self.val.len()
    }

    fn loss_grad(&self, p: &FineNetParams, idx: &[usize], depth: usize, lowest: usize) -> Result<(f64, NetGrads)> {
        let (trace, truth) = self.run(p, &self.train, idx, depth)?;
        let (loss, ct) = mse_raw(trace.output().view(), truth.view());
        let grads = backward_fine_from(p, &self.train[idx[0]].episode.phi, &trace, ct.view(), lowest)?;
        Ok((loss, grads))
    }

    fn val_loss_sum(&self, p: &FineNetParams, idx: &[usize], depth: usize) -> Result<f64> {
        let (trace, truth) = self.run(p, &self.val, idx, depth)?;
        Ok(mse_value(trace.output().view(), truth.view()) * idx.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Only the newest layer is trained.
    A,
    /// All layers up to the newest are refined together.
    B,
}

/// One append-only training log record.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub stage: Stage,
    pub layer: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub clamps: usize,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        format!(
            "step={} stage={:?} layer={} train_loss={:.6e} val_loss={:.6e} clamps={}",
            self.step, self.stage, self.layer, self.train_loss, self.val_loss, self.clamps
        )
    }
}

/// Outcome of a layer-wise training run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub log: Vec<LogRecord>,
    pub total_steps: usize,
    /// Optimizer steps on which at least one parameter hit the floor.
    pub clamp_steps: usize,
    pub clamp_events: usize,
    /// Layers whose stage A failed to lower the validation loss, even after a retry.
    pub stage_a_failures: Vec<usize>,
    pub stage_a_retries: usize,
    /// Validation loss of the initialized net at depth 1.
    pub initial_val_loss: f64,
    pub final_val_loss: f64,
}

impl TrainReport {
    pub fn clamp_fraction(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.clamp_steps as f64 / self.total_steps as f64
        }
    }

    /// Health gate: clamping stays rare and every stage A made progress.
    pub fn healthy(&self) -> bool {
        self.clamp_fraction() <= MAX_CLAMP_FRACTION && self.stage_a_failures.is_empty()
    }

    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| r.to_line() + "\n").collect()
    }
}

fn mean_val_loss<P: Problem>(problem: &P, params: &P::Params, depth: usize, batch: usize) -> Result<f64> {
    let n = problem.val_len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty validation set".into()));
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut sum = 0.0;
    for chunk in idx.chunks(batch) {
        sum += problem.val_loss_sum(params, chunk, depth)?;
    }
    let v = sum / n as f64;
    if !v.is_finite() {
        return Err(Error::Diverged(format!("validation loss {v} at depth {depth}")));
    }
    Ok(v)
}

struct StageOutcome {
    initial_val: f64,
    best_val: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_stage<P: Problem>(
    problem: &P,
    params: &mut P::Params,
    depth: usize,
    trainable: Range<usize>,
    lr: f64,
    stage: Stage,
    cfg: &TrainConfig,
    rng: &mut ChaCha20Rng,
    report: &mut TrainReport,
) -> Result<StageOutcome> {
    let with_omega = params.has_omega();
    let sizes: Vec<usize> = params
        .param_slices(trainable.clone(), with_omega)
        .iter()
        .map(|s| s.len())
        .collect();
    let mut adam = AdamState::new(&sizes);
    let initial_val = mean_val_loss(problem, params, depth, cfg.val_batch)?;
    let mut best_val = initial_val;
    let mut best = params.clone();
    let mut bad_checks = 0;
    let mut steps = 0;
    let mut window_loss = 0.0;
    let mut window_n = 0;
    let mut clamps_since = 0;
    let mut order: Vec<usize> = (0..problem.train_len()).collect();

    'epochs: for _ in 0..cfg.max_epochs_per_stage {
        order.shuffle(rng);
        for batch in order.chunks(cfg.train_batch) {
            let (batch_loss, grads) = problem.loss_grad(params, batch, depth, trainable.start)?;
            if !batch_loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss/gradient at stage {stage:?} layer {depth} step {steps} (loss {batch_loss})"
                )));
            }
            {
                let mut slices = params.param_slices(trainable.clone(), with_omega);
                adam.step(lr, &mut slices, &grads.slices(trainable.clone(), with_omega))?;
            }
            let clamped = params.clamp(trainable.clone(), with_omega);
            if clamped > 0 {
                report.clamp_steps += 1;
                report.clamp_events += clamped;
                clamps_since += clamped;
                debug!("clamped {clamped} parameter(s) to {PARAM_FLOOR} at layer {depth}");
            }
            steps += 1;
            report.total_steps += 1;
            window_loss += batch_loss;
            window_n += 1;

            let last = steps >= cfg.layerwise_steps_per_stage;
            if steps % cfg.val_every == 0 || last {
                let val = mean_val_loss(problem, params, depth, cfg.val_batch)?;
                report.log.push(LogRecord {
                    step: report.total_steps,
                    stage,
                    layer: depth,
                    train_loss: window_loss / window_n as f64,
                    val_loss: val,
                    clamps: clamps_since,
                });
                window_loss = 0.0;
                window_n = 0;
                clamps_since = 0;
                if val < best_val {
                    best_val = val;
                    best = params.clone();
                    bad_checks = 0;
                } else {
                    bad_checks += 1;
                    if bad_checks >= cfg.patience {
                        break 'epochs;
                    }
                }
            }
            if last {
                break 'epochs;
            }
        }
    }
    if window_n > 0 {
        let val = mean_val_loss(problem, params, depth, cfg.val_batch)?;
        if val < best_val {
            best_val = val;
            best = params.clone();
        }
    }
    *params = best;
    Ok(StageOutcome {
        initial_val,
        best_val,
    })
}

fn train_layerwise<P: Problem>(
    problem: &P,
    mut params: P::Params,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<(P::Params, TrainReport)> {
    cfg.validate()?;
    if problem.train_len() == 0 {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    let mut report = TrainReport {
        initial_val_loss: mean_val_loss(problem, &params, 1, cfg.val_batch)?,
        ..TrainReport::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, stream, 0));
    let layers = params.num_layers();
    for l in 1..=layers {
        let snapshot = params.clone();
        let a = run_stage(problem, &mut params, l, l - 1..l, cfg.learning_rate, Stage::A, cfg, &mut rng, &mut report)?;
        if a.best_val >= a.initial_val {
            report.stage_a_retries += 1;
            warn!("layer {l}: stage A did not improve validation loss; retrying with a fresh shuffle");
            params = snapshot;
            let mut retry_rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, stream, l as u64 + 1000));
            let a2 = run_stage(
                problem,
                &mut params,
                l,
                l - 1..l,
                cfg.learning_rate,
                Stage::A,
                cfg,
                &mut retry_rng,
                &mut report,
            )?;
            if a2.best_val >= a2.initial_val {
                warn!("layer {l}: stage A failed again");
                report.stage_a_failures.push(l);
            }
        }
        let b = run_stage(problem, &mut params, l, 0..l, cfg.refine_lr, Stage::B, cfg, &mut rng, &mut report)?;
        info!("layer {l}/{layers}: val loss {:.4e}", b.best_val);
        report.final_val_loss = b.best_val;
    }
    Ok((params, report))
}

/// Layer-wise training of a coarse net.
pub fn train_coarse(
    init: CoarseNetParams,
    variant: NetVariant,
    train: &[EpisodeSample],
    val: &[EpisodeSample],
    cfg: &TrainConfig,
) -> Result<(CoarseNetParams, TrainReport)> {
    let problem = CoarseProblem {
        mode: variant.mode(),
        train,
        val,
    };
    train_layerwise(&problem, init, cfg, 11)
}

/// Coarse estimates of every episode under a frozen coarse net.
pub fn coarse_estimates(
    coarse: &CoarseNetParams,
    variant: NetVariant,
    episodes: &[EpisodeSample],
) -> Result<Vec<Array2<f64>>> {
    let mut out = Vec::with_capacity(episodes.len());
    for chunk in episodes.chunks(100) {
        let cols = chunk[0].r_bar.data().ncols();
        let r = hstack(chunk.iter().map(|e| e.r_bar.view()));
        let t = coarse_forward_batch(coarse, variant.mode(), &chunk[0].phi, r.view(), cols, coarse.num_layers())?;
        for b in 0..chunk.len() {
            out.push(t.output().slice_axis(Axis(1), Slice::from(b * cols..(b + 1) * cols)).to_owned());
        }
    }
    Ok(out)
}

fn fine_inputs<'a>(
    coarse: &CoarseNetParams,
    variant: NetVariant,
    eps: &'a [EpisodeSample],
) -> Result<Vec<FineInput<'a>>> {
    Ok(eps
        .iter()
        .zip(coarse_estimates(coarse, variant, eps)?)
        .map(|(episode, coarse)| FineInput { episode, coarse })
        .collect())
}

/// Layer-wise training of a fine net on top of a frozen coarse net.
pub fn train_fine(
    coarse: &CoarseNetParams,
    init: FineNetParams,
    variant: NetVariant,
    train: &[EpisodeSample],
    val: &[EpisodeSample],
    cfg: &TrainConfig,
) -> Result<(FineNetParams, TrainReport)> {
    let problem = FineProblem {
        mode: variant.mode(),
        train: fine_inputs(coarse, variant, train)?,
        val: fine_inputs(coarse, variant, val)?,
    };
    train_layerwise(&problem, init, cfg, 12)
}

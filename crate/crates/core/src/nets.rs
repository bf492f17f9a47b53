//! Unrolled estimators: the coarse net over the concatenated frames, the
//! per-frame fine correction net with support chaining, the two-stage
//! pipeline and the ablation variants.
//!
//! Every layer computes `P = X + W (Y - Phi X)` and applies (generalized)
//! block thresholding with support selection to `P`. Traces keep the
//! intermediate values needed by the reverse pass in [`crate::train`].

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView2, Axis, Slice};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::lift::LiftedMatrix;
use crate::shrinkage::{
    activate, activate_vjp, support_of, support_select, ActivationRecord, GroupSet,
    GroupWeights, Grouping, SupportSchedule,
};
use crate::sim::EpisodeSample;

/// Initial value of the fine-net correlation weight.
pub const OMEGA_INIT: f64 = 0.5;

/// Which estimator a set of parameters implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetVariant {
    /// Coarse net followed by the fine correction net.
    TwoStage,
    /// The coarse net alone.
    CoarseOnly,
    /// Both nets with plain group soft-thresholding (no selection, no weights).
    NoSupportSelection,
    /// Both nets treating every real scalar as its own group, with selection.
    ElementwiseSs,
}

impl NetVariant {
    pub const ALL: [NetVariant; 4] = [
        NetVariant::TwoStage,
        NetVariant::CoarseOnly,
        NetVariant::NoSupportSelection,
        NetVariant::ElementwiseSs,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            NetVariant::TwoStage => "two_stage_cfbss",
            NetVariant::CoarseOnly => "coarse_only_cbss",
            NetVariant::NoSupportSelection => "no_support_selection",
            NetVariant::ElementwiseSs => "elementwise_ss",
        }
    }

    pub fn mode(self) -> ActivationMode {
        match self {
            NetVariant::TwoStage | NetVariant::CoarseOnly => ActivationMode::PROPOSED,
            NetVariant::NoSupportSelection => ActivationMode {
                grouping: Grouping::PairedRows,
                support_selection: false,
                weighting: false,
            },
            NetVariant::ElementwiseSs => ActivationMode {
                grouping: Grouping::Entries,
                support_selection: true,
                weighting: false,
            },
        }
    }

    pub fn has_fine(self) -> bool {
        !matches!(self, NetVariant::CoarseOnly)
    }

    /// Variant whose coarse net this one uses.
    pub fn coarse_source(self) -> NetVariant {
        match self {
            NetVariant::CoarseOnly => NetVariant::TwoStage,
            v => v,
        }
    }
}

impl fmt::Display for NetVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for NetVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_stage_cfbss" | "two_stage" => Ok(NetVariant::TwoStage),
            "coarse_only_cbss" | "coarse_only" => Ok(NetVariant::CoarseOnly),
            "no_support_selection" | "no_ss" => Ok(NetVariant::NoSupportSelection),
            "elementwise_ss" => Ok(NetVariant::ElementwiseSs),
            other => Err(Error::InvalidConfig(format!("unknown net variant `{other}`"))),
        }
    }
}

/// How a net's activation partitions, selects and weights groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivationMode {
    pub grouping: Grouping,
    pub support_selection: bool,
    /// Fine net only: scale thresholds by `omega` on the previous frame's support.
    pub weighting: bool,
}

impl ActivationMode {
    pub const PROPOSED: ActivationMode = ActivationMode {
        grouping: Grouping::PairedRows,
        support_selection: true,
        weighting: true,
    };
}

/// One unrolled layer: the learned matrix (2M x 2T) and threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseNetParams {
    pub layers: Vec<Layer>,
    pub schedule: SupportSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineNetParams {
    pub layers: Vec<Layer>,
    pub omega: f64,
    pub schedule: SupportSchedule,
}

fn validate_layers(layers: &[Layer], schedule: &SupportSchedule) -> Result<()> {
    if layers.len() != schedule.num_layers() {
        return Err(Error::InvalidParameter(format!(
            "{} layers but schedule covers {}",
            layers.len(),
            schedule.num_layers()
        )));
    }
    let shape = layers.first().map(|l| l.w.dim());
    for (i, l) in layers.iter().enumerate() {
        if !(l.theta >= 0.0) {
            return Err(Error::InvalidParameter(format!("layer {}: theta {}", i + 1, l.theta)));
        }
        if Some(l.w.dim()) != shape {
            return Err(Error::ShapeMismatch(format!("layer {}: W shape {:?}", i + 1, l.w.dim())));
        }
    }
    Ok(())
}

fn fingerprint_layers(layers: &[Layer], extra: f64) -> u64 {
    // FNV-1a over the bit patterns of every parameter
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: f64| {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for l in layers {
        eat(l.theta);
        l.w.iter().for_each(|&x| eat(x));
    }
    eat(extra);
    h
}

impl CoarseNetParams {
    pub fn new(layers: Vec<Layer>, schedule: SupportSchedule) -> Result<Self> {
        validate_layers(&layers, &schedule)?;
        Ok(Self { layers, schedule })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + 1).sum()
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint_layers(&self.layers, 0.0)
    }
}

impl FineNetParams {
    pub fn new(layers: Vec<Layer>, omega: f64, schedule: SupportSchedule) -> Result<Self> {
        validate_layers(&layers, &schedule)?;
        if !(omega > 0.0) {
            return Err(Error::InvalidParameter(format!("omega must be positive, got {omega}")));
        }
        Ok(Self {
            layers,
            omega,
            schedule,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + 1).sum::<usize>() + 1
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint_layers(&self.layers, self.omega)
    }
}

/// Largest eigenvalue of `A^T A` by 50 power iterations from a fixed start.
pub fn operator_norm_sq(a: ArrayView2<'_, f64>) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
    let mut v: ndarray::Array1<f64> = (0..a.ncols()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut lambda = 0.0;
    for _ in 0..50 {
        let norm = v.dot(&v).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v /= norm;
        let w = a.t().dot(&a.dot(&v));
        lambda = v.dot(&w);
        v = w;
    }
    lambda
}

/// Standard unrolled-ISTA initialization: `W = eta Phi^T` with
/// `eta = 1 / sigma_max(Phi)^2`.
pub fn init_weight(phi: &LiftedMatrix) -> Array2<f64> {
    let eta = 1.0 / operator_norm_sq(phi.view());
    phi.data().t().as_standard_layout().mapv(|x| x * eta)
}

/// `0.1 *` median of the nonzero group norms of `Phi^T Y` over a calibration set.
pub fn init_theta<'a>(
    phi: &LiftedMatrix,
    observations: impl IntoIterator<Item = ArrayView2<'a, f64>>,
    grouping: Grouping,
) -> f64 {
    let mut norms: Vec<f64> = observations
        .into_iter()
        .flat_map(|y| grouping.norms(phi.data().t().dot(&y).view()))
        .filter(|&n| n > 0.0)
        .collect();
    if norms.is_empty() {
        return 0.0;
    }
    norms.sort_by(|a, b| a.partial_cmp(b).expect("finite norms"));
    let mid = norms.len() / 2;
    let median = if norms.len() % 2 == 1 {
        norms[mid]
    } else {
        0.5 * (norms[mid - 1] + norms[mid])
    };
    0.1 * median
}

/// Selection and activation state of one column block of a layer.
#[derive(Debug, Clone)]
pub struct BlockState {
    pub selected: GroupSet,
    pub record: ActivationRecord,
    pub weights: Option<GroupWeights>,
}

/// Intermediate values of one layer. Columns are split into blocks of
/// `block_cols`; selection and activation act on each block separately, so a
/// minibatch can be stacked column-wise.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: Array2<f64>,
    pub residual: Array2<f64>,
    pub pre: Array2<f64>,
    pub block_cols: usize,
    pub blocks: Vec<BlockState>,
    pub output: Array2<f64>,
}

fn block_range(b: usize, width: usize) -> Slice {
    Slice::from(b * width..(b + 1) * width)
}

#[allow(clippy::too_many_arguments)]
fn layer_step(
    layer: &Layer,
    phi: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    input: Array2<f64>,
    fraction: f64,
    mode: ActivationMode,
    weights: &[Option<GroupWeights>],
    block_cols: usize,
) -> LayerTrace {
    let residual = &target - &phi.dot(&input);
    let pre = &input + &layer.w.dot(&residual);
    let mut output = Array2::zeros(pre.dim());
    let mut blocks = Vec::with_capacity(weights.len());
    for (b, w) in weights.iter().enumerate() {
        let v = pre.slice_axis(Axis(1), block_range(b, block_cols));
        let norms = mode.grouping.norms(v);
        let selected = if mode.support_selection {
            support_select(&norms, fraction)
        } else {
            GroupSet::empty(norms.len())
        };
        let (out, record) = activate(v, mode.grouping, layer.theta, w.as_ref(), &selected);
        output.slice_axis_mut(Axis(1), block_range(b, block_cols)).assign(&out);
        blocks.push(BlockState {
            selected,
            record,
            weights: w.clone(),
        });
    }
    LayerTrace {
        input,
        residual,
        pre,
        block_cols,
        blocks,
        output,
    }
}

/// Gradient of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub w: Array2<f64>,
    pub theta: f64,
}

/// Reverse pass through one layer. Returns the parameter gradients, the
/// `omega` contribution and the cotangent of the layer input.
pub(crate) fn layer_backward(
    layer: &Layer,
    phi: ArrayView2<'_, f64>,
    trace: &LayerTrace,
    d_out: ArrayView2<'_, f64>,
    grouping: Grouping,
    need_input: bool,
) -> (LayerGrad, f64, Option<Array2<f64>>) {
    let bc = trace.block_cols;
    let mut d_pre = Array2::zeros(trace.pre.dim());
    let mut d_theta = 0.0;
    let mut d_omega = 0.0;
    for (b, state) in trace.blocks.iter().enumerate() {
        let ct = activate_vjp(
            trace.pre.slice_axis(Axis(1), block_range(b, bc)),
            grouping,
            layer.theta,
            state.weights.as_ref(),
            &state.record,
            d_out.slice_axis(Axis(1), block_range(b, bc)),
        );
        d_pre.slice_axis_mut(Axis(1), block_range(b, bc)).assign(&ct.input);
        d_theta += ct.theta;
        d_omega += ct.omega;
    }
    let dw = d_pre.dot(&trace.residual.t());
    let d_in = need_input.then(|| &d_pre - &phi.t().dot(&layer.w.t().dot(&d_pre)));
    (
        LayerGrad {
            w: dw,
            theta: d_theta,
        },
        d_omega,
        d_in,
    )
}

#[derive(Debug, Clone)]
pub struct CoarseTrace {
    pub layers: Vec<LayerTrace>,
    pub mode: ActivationMode,
    pub(crate) fingerprint: u64,
}

impl CoarseTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.layers.last().expect("at least one layer").output
    }
}

fn check_operator(phi: &LiftedMatrix, w_shape: (usize, usize), y_rows: usize) -> Result<()> {
    let (r, c) = phi.data().dim();
    if w_shape != (c, r) {
        return Err(Error::ShapeMismatch(format!(
            "W is {:?} but operator is {r}x{c}",
            w_shape
        )));
    }
    if y_rows != r {
        return Err(Error::ShapeMismatch(format!(
            "observation has {y_rows} rows, operator has {r}"
        )));
    }
    Ok(())
}

/// Run the first `depth` coarse layers from `G^0 = 0`.
pub fn coarse_forward_depth(
    params: &CoarseNetParams,
    mode: ActivationMode,
    phi: &LiftedMatrix,
    r_bar: ArrayView2<'_, f64>,
    depth: usize,
) -> Result<CoarseTrace> {
    coarse_forward_batch(params, mode, phi, r_bar, r_bar.ncols(), depth)
}

/// Coarse net on several episodes stacked column-wise, `block_cols` columns each.
pub fn coarse_forward_batch(
    params: &CoarseNetParams,
    mode: ActivationMode,
    phi: &LiftedMatrix,
    r_stack: ArrayView2<'_, f64>,
    block_cols: usize,
    depth: usize,
) -> Result<CoarseTrace> {
    if depth == 0 || depth > params.num_layers() {
        return Err(Error::LayerOutOfRange {
            index: depth,
            layers: params.num_layers(),
        });
    }
    check_operator(phi, params.layers[0].w.dim(), r_stack.nrows())?;
    let blocks = check_blocks(r_stack.ncols(), block_cols)?;
    let weights = vec![None; blocks];
    let mut x = Array2::zeros((phi.data().ncols(), r_stack.ncols()));
    let mut layers = Vec::with_capacity(depth);
    for (l, layer) in params.layers[..depth].iter().enumerate() {
        let frac = params.schedule.fraction(l + 1)?;
        let t = layer_step(layer, phi.view(), r_stack, x, frac, mode, &weights, block_cols);
        x = t.output.clone();
        layers.push(t);
    }
    Ok(CoarseTrace {
        layers,
        mode,
        fingerprint: params.fingerprint(),
    })
}

fn check_blocks(cols: usize, block_cols: usize) -> Result<usize> {
    if block_cols == 0 || cols % block_cols != 0 || cols == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{cols} columns do not split into blocks of {block_cols}"
        )));
    }
    Ok(cols / block_cols)
}

/// Coarse estimate and full per-layer trace.
pub fn coarse_forward(
    params: &CoarseNetParams,
    phi: &LiftedMatrix,
    r_bar: &LiftedMatrix,
) -> Result<(LiftedMatrix, CoarseTrace)> {
    coarse_forward_mode(params, ActivationMode::PROPOSED, phi, r_bar)
}

pub fn coarse_forward_mode(
    params: &CoarseNetParams,
    mode: ActivationMode,
    phi: &LiftedMatrix,
    r_bar: &LiftedMatrix,
) -> Result<(LiftedMatrix, CoarseTrace)> {
    let trace = coarse_forward_depth(params, mode, phi, r_bar.view(), params.num_layers())?;
    Ok((LiftedMatrix::signal(trace.output().clone())?, trace))
}

#[derive(Debug, Clone)]
pub struct FineTrace {
    /// `frames[i][l]` is layer `l` of frame `i`.
    pub frames: Vec<Vec<LayerTrace>>,
    pub mode: ActivationMode,
    pub(crate) fingerprint: u64,
}

impl FineTrace {
    pub fn frame_outputs(&self) -> Vec<&Array2<f64>> {
        self.frames
            .iter()
            .map(|f| &f.last().expect("at least one layer").output)
            .collect()
    }

    /// Concatenation of the frame outputs.
    pub fn output(&self) -> Array2<f64> {
        let views: Vec<ArrayView2<'_, f64>> = self.frame_outputs().into_iter().map(|a| a.view()).collect();
        concatenate(Axis(1), &views).expect("frames share row count")
    }

    /// Concatenated output of layer `l` (0-based) across frames.
    pub fn layer_output(&self, l: usize) -> Array2<f64> {
        let views: Vec<ArrayView2<'_, f64>> = self.frames.iter().map(|f| f[l].output.view()).collect();
        concatenate(Axis(1), &views).expect("frames share row count")
    }
}

/// Run the first `depth` fine layers on every frame, chaining supports.
pub fn fine_forward_depth(
    params: &FineNetParams,
    mode: ActivationMode,
    phi: &LiftedMatrix,
    z_frames: &[ArrayView2<'_, f64>],
    coarse_frames: &[ArrayView2<'_, f64>],
    depth: usize,
) -> Result<FineTrace> {
    let cols = z_frames.first().map_or(0, |z| z.ncols());
    fine_forward_batch(params, mode, phi, z_frames, coarse_frames, cols, depth)
}

/// Fine net on several episodes. Frame `i` of every episode is stacked
/// column-wise in `z_frames[i]` and `coarse_frames[i]`, `block_cols` columns
/// per episode; support chaining runs per episode.
pub fn fine_forward_batch(
    params: &FineNetParams,
    mode: ActivationMode,
    phi: &LiftedMatrix,
    z_frames: &[ArrayView2<'_, f64>],
    coarse_frames: &[ArrayView2<'_, f64>],
    block_cols: usize,
    depth: usize,
) -> Result<FineTrace> {
    if depth == 0 || depth > params.num_layers() {
        return Err(Error::LayerOutOfRange {
            index: depth,
            layers: params.num_layers(),
        });
    }
    if z_frames.len() != coarse_frames.len() || z_frames.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} observation frames vs {} coarse frames",
            z_frames.len(),
            coarse_frames.len()
        )));
    }
    let groups = phi.data().ncols() / 2;
    let blocks = check_blocks(z_frames[0].ncols(), block_cols)?;
    let mut frames = Vec::with_capacity(z_frames.len());
    let mut prev_support = vec![GroupSet::empty(groups); blocks];
    for (z, s0) in z_frames.iter().zip(coarse_frames) {
        check_operator(phi, params.layers[0].w.dim(), z.nrows())?;
        if s0.dim() != (phi.data().ncols(), z.ncols()) || z.ncols() != blocks * block_cols {
            return Err(Error::ShapeMismatch(format!(
                "coarse frame {:?} does not match {}x{}",
                s0.dim(),
                phi.data().ncols(),
                z.ncols()
            )));
        }
        let weights = prev_support
            .iter()
            .map(|sup| {
                mode.weighting
                    .then(|| GroupWeights::new(params.omega, sup.clone()))
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut x = s0.to_owned();
        let mut layers = Vec::with_capacity(depth);
        for (l, layer) in params.layers[..depth].iter().enumerate() {
            let frac = params.schedule.fraction(l + 1)?;
            let t = layer_step(layer, phi.view(), *z, x, frac, mode, &weights, block_cols);
            x = t.output.clone();
            layers.push(t);
        }
        prev_support = (0..blocks)
            .map(|b| support_of(x.slice_axis(Axis(1), block_range(b, block_cols)), Grouping::PairedRows))
            .collect();
        frames.push(layers);
    }
    Ok(FineTrace {
        frames,
        mode,
        fingerprint: params.fingerprint(),
    })
}

/// Fine correction of every frame; returns the concatenated estimate.
pub fn fine_forward_episode(
    params: &FineNetParams,
    phi: &LiftedMatrix,
    z_frames: &[LiftedMatrix],
    coarse_frames: &[LiftedMatrix],
) -> Result<(LiftedMatrix, FineTrace)> {
    fine_forward_mode(params, ActivationMode::PROPOSED, phi, z_frames, coarse_frames)
}

pub fn fine_forward_mode(
    params: &FineNetParams,
    mode: ActivationMode,
    phi: &LiftedMatrix,
    z_frames: &[LiftedMatrix],
    coarse_frames: &[LiftedMatrix],
) -> Result<(LiftedMatrix, FineTrace)> {
    let z: Vec<_> = z_frames.iter().map(|f| f.view()).collect();
    let c: Vec<_> = coarse_frames.iter().map(|f| f.view()).collect();
    let trace = fine_forward_depth(params, mode, phi, &z, &c, params.num_layers())?;
    Ok((LiftedMatrix::signal(trace.output())?, trace))
}

/// Groups of a lifted signal with nonzero norm.
pub fn support_extract(s: &LiftedMatrix) -> GroupSet {
    support_of(s.view(), Grouping::PairedRows)
}

/// Column blocks of width `frame_cols`.
pub fn split_columns(a: ArrayView2<'_, f64>, frame_cols: usize) -> Vec<ArrayView2<'_, f64>> {
    (0..a.ncols() / frame_cols)
        .map(|i| a.slice_move(ndarray::s![.., i * frame_cols..(i + 1) * frame_cols]))
        .collect()
}

fn frame_cols(sample: &EpisodeSample) -> Result<usize> {
    let frames = sample.z_bar_frames.len();
    if frames == 0 || sample.r_bar.data().ncols() % frames != 0 {
        return Err(Error::ShapeMismatch("episode has no frames".into()));
    }
    Ok(sample.r_bar.data().ncols() / frames)
}

/// Coarse net on `R`, split into frames, then the fine net.
pub fn two_stage_forward(
    coarse: &CoarseNetParams,
    fine: &FineNetParams,
    sample: &EpisodeSample,
) -> Result<LiftedMatrix> {
    run_variant(NetVariant::TwoStage, coarse, Some(fine), sample)
}

/// Dispatch on the variant. `fine` is ignored for [`NetVariant::CoarseOnly`].
pub fn variant_forward(
    variant: NetVariant,
    coarse: &CoarseNetParams,
    fine: Option<&FineNetParams>,
    sample: &EpisodeSample,
) -> Result<LiftedMatrix> {
    run_variant(variant, coarse, fine, sample)
}

fn run_variant(
    variant: NetVariant,
    coarse: &CoarseNetParams,
    fine: Option<&FineNetParams>,
    sample: &EpisodeSample,
) -> Result<LiftedMatrix> {
    let mode = variant.mode();
    let ct = coarse_forward_depth(coarse, mode, &sample.phi, sample.r_bar.view(), coarse.num_layers())?;
    if !variant.has_fine() {
        return LiftedMatrix::signal(ct.output().clone());
    }
    let fine = fine.ok_or_else(|| {
        Error::InvalidParameter(format!("variant {variant} needs fine-net parameters"))
    })?;
    let cols = frame_cols(sample)?;
    let coarse_frames = split_columns(ct.output().view(), cols);
    let z: Vec<_> = sample.z_bar_frames.iter().map(|f| f.view()).collect();
    let ft = fine_forward_depth(fine, mode, &sample.phi, &z, &coarse_frames, fine.num_layers())?;
    LiftedMatrix::signal(ft.output())
}

/// Initialized coarse net for `phi`, with thresholds calibrated on `calib`.
pub fn init_coarse<'a>(
    phi: &LiftedMatrix,
    layers: usize,
    p_min: usize,
    p_max: usize,
    mode: ActivationMode,
    calib: impl IntoIterator<Item = ArrayView2<'a, f64>>,
) -> Result<CoarseNetParams> {
    let groups = phi.data().ncols() / 2;
    let schedule = SupportSchedule::new(p_min, p_max, layers, groups)?;
    let w = init_weight(phi);
    let theta = init_theta(phi, calib, mode.grouping);
    CoarseNetParams::new(vec![Layer { w, theta }; layers], schedule)
}

/// Initialized fine net; selection bounds are `(s_c, s_bar)`.
pub fn init_fine<'a>(
    phi: &LiftedMatrix,
    layers: usize,
    s_c: usize,
    s_bar: usize,
    mode: ActivationMode,
    calib: impl IntoIterator<Item = ArrayView2<'a, f64>>,
) -> Result<FineNetParams> {
    let groups = phi.data().ncols() / 2;
    let schedule = SupportSchedule::new(s_c, s_bar.min(groups), layers, groups)?;
    let w = init_weight(phi);
    let theta = init_theta(phi, calib, mode.grouping);
    FineNetParams::new(vec![Layer { w, theta }; layers], OMEGA_INIT, schedule)
}

//! Central-difference audit of the analytic gradients of both nets.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lift::LiftedMatrix;
use crate::nets::{
    coarse_forward_depth, fine_forward_depth, init_coarse, init_fine, split_columns, ActivationMode,
    BlockState, CoarseNetParams, FineNetParams, LayerTrace, NetVariant,
};
use crate::sim::{build_episode, derive_seed, sensing_for_seed, EpisodeSample, SparsityConfig, Split};
use crate::train::{backward_coarse, backward_fine, mse_raw, NetGrads, Unrolled};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Coarse,
    Fine,
}

impl NetKind {
    pub fn name(self) -> &'static str {
        match self {
            NetKind::Coarse => "coarse",
            NetKind::Fine => "fine",
        }
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(NetKind::Coarse),
            "fine" => Ok(NetKind::Fine),
            other => Err(Error::InvalidParameter(format!("unknown net kind `{other}` (coarse|fine)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Points with a group norm this close to any branch boundary are skipped.
    pub kink_margin: f64,
    /// Gradient norms below this are compared in absolute terms.
    pub abs_floor: f64,
    /// Flip the sign of the analytic gradient; the audit must then fail.
    pub corrupt_vjp: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-5,
            kink_margin: 1e-3,
            abs_floor: 1e-7,
            corrupt_vjp: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub kind: NetKind,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    /// Candidate points discarded for lying near a kink.
    pub excluded_points: usize,
    pub checked_points: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checked_points > 0 && self.max_rel_error < self.tolerance
    }

    fn merge(&mut self, other: GradcheckReport) {
        for t in other.tensors {
            match self.tensors.iter_mut().find(|s| s.name == t.name) {
                Some(s) => {
                    s.entries += t.entries;
                    s.rel_error = s.rel_error.max(t.rel_error);
                }
                None => self.tensors.push(t),
            }
        }
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.excluded_points += other.excluded_points;
        self.checked_points += other.checked_points;
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} net: {} point(s) checked, {} excluded near kinks, max rel. error {:.3e} (tol {:.0e}) -> {}",
            self.kind,
            self.checked_points,
            self.excluded_points,
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for t in &self.tensors {
            writeln!(f, "  {:<8} {:>5} entries  rel. error {:.3e}", t.name, t.entries, t.rel_error)?;
        }
        Ok(())
    }
}

/// Number of groups in a layer trace sitting within `margin` of a branch boundary.
fn kinks_in(trace: &LayerTrace, theta: f64, margin: f64) -> usize {
    trace.blocks.iter().map(|b| kinks_in_block(b, theta, margin)).sum()
}

fn kinks_in_block(block: &BlockState, theta: f64, margin: f64) -> usize {
    let norms = &block.record.norms;
    let mut count = 0;
    for (j, &n) in norms.iter().enumerate() {
        if n == 0.0 {
            continue;
        }
        let w = block.weights.as_ref().map_or(1.0, |w| w.weight(j));
        if (n - theta * w).abs() < margin {
            count += 1;
        }
        if theta > 0.0 && block.selected.contains(j) && (n - theta).abs() < margin {
            count += 1;
        }
    }
    let k = block.selected.len();
    if theta > 0.0 && k > 0 && k < norms.len() {
        let mut sorted = norms.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted[k - 1] - sorted[k] < margin {
            count += 1;
        }
    }
    count
}

fn tensor_names(layers: usize, omega: bool) -> Vec<String> {
    let mut names = Vec::new();
    for l in 1..=layers {
        names.push(format!("W{l}"));
        names.push(format!("theta{l}"));
    }
    if omega {
        names.push("omega".into());
    }
    names
}

/// Compare analytic and central-difference gradients at one point.
fn compare<P: Unrolled>(
    kind: NetKind,
    params: &P,
    analytic: &NetGrads,
    loss: impl Fn(&P) -> Result<f64>,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let layers = params.num_layers();
    let omega = params.has_omega();
    let sign = if opts.corrupt_vjp { -1.0 } else { 1.0 };
    let an: Vec<Vec<f64>> = analytic
        .slices(0..layers, omega)
        .iter()
        .map(|s| s.iter().map(|x| sign * x).collect())
        .collect();
    let mut work = params.clone();
    let sizes: Vec<usize> = work.param_slices(0..layers, omega).iter().map(|s| s.len()).collect();
    let mut tensors = Vec::new();
    let mut max_rel: f64 = 0.0;
    for (t, name) in tensor_names(layers, omega).into_iter().enumerate() {
        let mut fd = vec![0.0; sizes[t]];
        for (k, slot) in fd.iter_mut().enumerate() {
            let orig = work.param_slices(0..layers, omega)[t][k];
            work.param_slices(0..layers, omega)[t][k] = orig + opts.step;
            let up = loss(&work)?;
            work.param_slices(0..layers, omega)[t][k] = orig - opts.step;
            let down = loss(&work)?;
            work.param_slices(0..layers, omega)[t][k] = orig;
            *slot = (up - down) / (2.0 * opts.step);
        }
        let diff = fd.iter().zip(&an[t]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let n_fd = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n_an = an[t].iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff / n_fd.max(n_an).max(opts.abs_floor);
        max_rel = max_rel.max(rel);
        tensors.push(TensorCheck {
            name,
            entries: sizes[t],
            rel_error: rel,
        });
    }
    Ok(GradcheckReport {
        kind,
        tensors,
        max_rel_error: max_rel,
        excluded_points: 0,
        checked_points: 1,
        tolerance: opts.tolerance,
    })
}

/// Audit the coarse net at `params` on one episode. Returns `None` when the
/// point lies within the kink margin.
pub fn gradcheck_coarse(
    params: &CoarseNetParams,
    mode: ActivationMode,
    sample: &EpisodeSample,
    opts: &GradcheckOptions,
) -> Result<Option<GradcheckReport>> {
    let depth = params.num_layers();
    let trace = coarse_forward_depth(params, mode, &sample.phi, sample.r_bar.view(), depth)?;
    let kinks: usize = trace
        .layers
        .iter()
        .zip(&params.layers)
        .map(|(t, l)| kinks_in(t, l.theta, opts.kink_margin))
        .sum();
    if kinks > 0 {
        return Ok(None);
    }
    let (_, ct) = mse_raw(trace.output().view(), sample.g_bar.view());
    let grads = backward_coarse(params, &sample.phi, &trace, ct.view())?;
    let loss = |p: &CoarseNetParams| -> Result<f64> {
        let t = coarse_forward_depth(p, mode, &sample.phi, sample.r_bar.view(), depth)?;
        Ok(mse_raw(t.output().view(), sample.g_bar.view()).0)
    };
    compare(NetKind::Coarse, params, &grads, loss, opts).map(Some)
}

/// Audit the fine net at `params` given the frozen coarse estimate of `sample`.
pub fn gradcheck_fine(
    params: &FineNetParams,
    mode: ActivationMode,
    sample: &EpisodeSample,
    coarse_estimate: &Array2<f64>,
    opts: &GradcheckOptions,
) -> Result<Option<GradcheckReport>> {
    let depth = params.num_layers();
    let cols = sample.r_bar.data().ncols() / sample.z_bar_frames.len();
    let s0 = split_columns(coarse_estimate.view(), cols);
    let z: Vec<_> = sample.z_bar_frames.iter().map(|f| f.view()).collect();
    let run = |p: &FineNetParams| fine_forward_depth(p, mode, &sample.phi, &z, &s0, depth);
    let trace = run(params)?;
    let kinks: usize = trace
        .frames
        .iter()
        .flat_map(|frame| frame.iter().zip(&params.layers))
        .map(|(t, l)| kinks_in(t, l.theta, opts.kink_margin))
        .sum();
    if kinks > 0 {
        return Ok(None);
    }
    let (_, ct) = mse_raw(trace.output().view(), sample.g_bar.view());
    let grads = backward_fine(params, &sample.phi, &trace, ct.view())?;
    let loss = |p: &FineNetParams| -> Result<f64> {
        let t = run(p)?;
        Ok(mse_raw(t.output().view(), sample.g_bar.view()).0)
    };
    compare(NetKind::Fine, params, &grads, loss, opts).map(Some)
}

/// Tiny problem used by the audit: M=8, N=2, T=6, L=2.
pub fn tiny_config() -> SparsityConfig {
    SparsityConfig::new(8, 2, 6, 2, 6, 2, 1, 30.0).expect("valid tiny config")
}

fn jitter(params_w: &mut Array2<f64>, scale: f64, rng: &mut ChaCha20Rng) {
    let amp = params_w.iter().fold(0.0f64, |m, x| m.max(x.abs())) * scale;
    params_w.mapv_inplace(|x| x + amp * rng.sample::<f64, _>(StandardNormal));
}

/// Random-point audit of a 2-layer net on the tiny problem. Draws candidate
/// points until `points` smooth ones are checked (at most `points * 50` draws).
/// With `zero_theta` every threshold is set to 0, making the net linear.
pub fn gradcheck_tiny(
    kind: NetKind,
    seed: u64,
    points: usize,
    zero_theta: bool,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let cfg = tiny_config();
    let mode = NetVariant::TwoStage.mode();
    let mut report = GradcheckReport {
        kind,
        tensors: Vec::new(),
        max_rel_error: 0.0,
        excluded_points: 0,
        checked_points: 0,
        tolerance: opts.tolerance,
    };
    let mut draw = 0u64;
    while report.checked_points < points && draw < (points as u64) * 50 {
        let point_seed = derive_seed(seed, 77, draw);
        draw += 1;
        let mut rng = ChaCha20Rng::seed_from_u64(point_seed);
        let (_, phi) = sensing_for_seed(&cfg, point_seed)?;
        let phi: Arc<LiftedMatrix> = Arc::new(phi);
        let sample = build_episode(&cfg, &phi, point_seed, Split::Train, 0)?;
        let mut coarse = init_coarse(&phi, 2, 1, 3, mode, [sample.r_bar.view()])?;
        for l in &mut coarse.layers {
            jitter(&mut l.w, 0.1, &mut rng);
            l.theta = if zero_theta { 0.0 } else { l.theta * rng.random_range(0.5..1.5) };
        }
        let outcome = match kind {
            NetKind::Coarse => gradcheck_coarse(&coarse, mode, &sample, opts)?,
            NetKind::Fine => {
                let ct = coarse_forward_depth(&coarse, mode, &phi, sample.r_bar.view(), 2)?;
                let mut fine = init_fine(&phi, 2, cfg.s_c, cfg.s_bar, mode, [sample.r_bar.view()])?;
                for l in &mut fine.layers {
                    jitter(&mut l.w, 0.1, &mut rng);
                    l.theta = if zero_theta { 0.0 } else { l.theta * rng.random_range(0.5..1.5) };
                }
                fine.omega = rng.random_range(0.2..0.9);
                gradcheck_fine(&fine, mode, &sample, ct.output(), opts)?
            }
        };
        match outcome {
            Some(r) => report.merge(r),
            None => report.excluded_points += 1,
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn net_kind_parses() {
        assert_eq!("fine".parse::<NetKind>().unwrap(), NetKind::Fine);
        assert!("medium".parse::<NetKind>().is_err());
    }

    #[test]
    fn coarse_and_fine_pass_at_random_points() {
        let opts = GradcheckOptions::default();
        for kind in [NetKind::Coarse, NetKind::Fine] {
            let r = gradcheck_tiny(kind, 3, 2, false, &opts).unwrap();
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let opts = GradcheckOptions {
            corrupt_vjp: true,
            ..GradcheckOptions::default()
        };
        let r = gradcheck_tiny(NetKind::Coarse, 3, 1, false, &opts).unwrap();
        assert!(!r.passed());
        assert!(r.max_rel_error > 1.0);
    }

    #[test]
    fn zero_thresholds_still_pass() {
        let opts = GradcheckOptions::default();
        for kind in [NetKind::Coarse, NetKind::Fine] {
            let r = gradcheck_tiny(kind, 9, 1, true, &opts).unwrap();
            assert!(r.passed(), "{r}");
        }
    }
}

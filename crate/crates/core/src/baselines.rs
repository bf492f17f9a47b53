//! Classical comparison points: proximal-gradient solvers for the joint
//! `l2,1` objective and its weighted single-frame form, and a genie-aided
//! least-squares estimate on the true support.

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::lift::{paired_row_norms, LiftedMatrix};
use crate::nets::operator_norm_sq;
use crate::shrinkage::GroupSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `1 / sigma_max(Phi)^2` from power iteration.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Weight of the joint `l2,1` penalty.
    pub alpha: f64,
    /// Weight of the weighted single-frame penalty.
    pub lambda: f64,
    /// Penalty weight on groups in the previous frame's support.
    pub omega_fixed: f64,
    pub max_iters: usize,
    /// Stop when `||G_k+1 - G_k|| / max(||G_k+1||, tiny) < tol`.
    pub tol: f64,
    pub step: StepSize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lambda: 0.1,
            omega_fixed: 0.5,
            max_iters: 2000,
            tol: 1e-4,
            step: StepSize::Auto,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha and lambda must be positive (alpha={}, lambda={})",
                self.alpha, self.lambda
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.omega_fixed >= 0.0) {
            return Err(Error::InvalidParameter(format!("omega_fixed must be >= 0, got {}", self.omega_fixed)));
        }
        if let StepSize::Fixed(eta) = self.step {
            if !(eta > 0.0) {
                return Err(Error::InvalidParameter(format!("step must be positive, got {eta}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub estimate: LiftedMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every iteration, starting with the zero iterate.
    pub objective: Vec<f64>,
    /// False if any iteration raised the objective beyond round-off.
    pub monotone: bool,
}

/// Per-group scaling `max(1 - tau_j / n_j, 0)` over paired rows.
fn prox_weighted(v: ArrayView2<'_, f64>, taus: &[f64]) -> Array2<f64> {
    let m = v.nrows() / 2;
    let norms = paired_row_norms(v);
    let mut out = v.to_owned();
    for j in 0..m {
        let n = norms[j];
        let scale = if n > taus[j] { (n - taus[j]) / n } else { 0.0 };
        out.row_mut(j).mapv_inplace(|x| x * scale);
        out.row_mut(m + j).mapv_inplace(|x| x * scale);
    }
    out
}

/// Proximal operator of `tau * l2,1` over paired-row groups.
pub fn prox_group_l21(v: &LiftedMatrix, tau: f64) -> Result<LiftedMatrix> {
    if !v.is_signal() {
        return Err(Error::MalformedLift("prox expects a lifted signal".into()));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    let taus = vec![tau; v.groups()];
    LiftedMatrix::signal(prox_weighted(v.view(), &taus))
}

/// `0.5 ||R - Phi G||^2 + sum_j penalty_j ||G_j||`.
pub fn weighted_l21_objective(phi: ArrayView2<'_, f64>, r: ArrayView2<'_, f64>, g: ArrayView2<'_, f64>, penalties: &[f64]) -> f64 {
    let resid = &r - &phi.dot(&g);
    let fit = 0.5 * resid.iter().map(|x| x * x).sum::<f64>();
    let reg: f64 = paired_row_norms(g).iter().zip(penalties).map(|(n, p)| n * p).sum();
    fit + reg
}

/// Largest per-group violation of the first-order optimality conditions of
/// the weighted `l2,1` objective.
pub fn kkt_residual(phi: ArrayView2<'_, f64>, r: ArrayView2<'_, f64>, g: ArrayView2<'_, f64>, penalties: &[f64]) -> f64 {
    let m = g.nrows() / 2;
    let neg_grad = phi.t().dot(&(&r - &phi.dot(&g)));
    let norms = paired_row_norms(g);
    let grad_norms = paired_row_norms(neg_grad.view());
    let mut worst: f64 = 0.0;
    for j in 0..m {
        let v = if norms[j] > 0.0 {
            let c = penalties[j] / norms[j];
            let mut sq = 0.0;
            for row in [j, m + j] {
                for k in 0..g.ncols() {
                    let d = neg_grad[[row, k]] - c * g[[row, k]];
                    sq += d * d;
                }
            }
            sq.sqrt()
        } else {
            (grad_norms[j] - penalties[j]).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn step_size(phi: ArrayView2<'_, f64>, step: StepSize) -> f64 {
    match step {
        StepSize::Auto => {
            let l = operator_norm_sq(phi);
            if l > 0.0 {
                1.0 / l
            } else {
                1.0
            }
        }
        StepSize::Fixed(eta) => eta,
    }
}

fn check_operands(phi: &LiftedMatrix, r: &LiftedMatrix) -> Result<()> {
    if phi.is_signal() || !r.is_signal() {
        return Err(Error::MalformedLift("expected a lifted operator and a lifted signal".into()));
    }
    if phi.data().nrows() != r.data().nrows() {
        return Err(Error::ShapeMismatch(format!(
            "operator has {} rows, observation {}",
            phi.data().nrows(),
            r.data().nrows()
        )));
    }
    Ok(())
}

/// Proximal gradient on `0.5 ||R - Phi G||^2 + sum_j penalty_j ||G_j||`
/// starting from zero, returning the lowest-objective iterate.
fn proximal_gradient(
    phi: &LiftedMatrix,
    r: &LiftedMatrix,
    penalties: &[f64],
    max_iters: usize,
    tol: f64,
    step: StepSize,
) -> Result<SolveOutcome> {
    check_operands(phi, r)?;
    let eta = step_size(phi.view(), step);
    let w = phi.data().t().as_standard_layout().mapv(|x| x * eta);
    let taus: Vec<f64> = penalties.iter().map(|p| eta * p).collect();
    let mut g = Array2::zeros((phi.data().ncols(), r.data().ncols()));
    let mut resid = r.data().to_owned();
    let value = |resid: &Array2<f64>, g: &Array2<f64>| {
        let fit = 0.5 * resid.iter().map(|x| x * x).sum::<f64>();
        let reg: f64 = paired_row_norms(g.view()).iter().zip(penalties).map(|(n, p)| n * p).sum();
        fit + reg
    };
    let mut objective = vec![value(&resid, &g)];
    let mut best = (objective[0], g.clone());
    let mut monotone = true;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let pre = &g + &w.dot(&resid);
        let next = prox_weighted(pre.view(), &taus);
        let change = (&next - &g).iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = next.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        g = next;
        resid = &r.view() - &phi.data().dot(&g);
        let obj = value(&resid, &g);
        let prev = *objective.last().expect("non-empty");
        if obj > prev + 1e-12 * prev.abs().max(1.0) {
            monotone = false;
        }
        objective.push(obj);
        if obj < best.0 {
            best = (obj, g.clone());
        }
        if change / scale < tol || change == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(SolveOutcome {
        estimate: LiftedMatrix::signal(best.1)?,
        iterations,
        converged,
        objective,
        monotone,
    })
}

/// Joint `l2,1` recovery of the concatenated channel.
pub fn ista_l21_solve(phi: &LiftedMatrix, r_bar: &LiftedMatrix, cfg: &SolverConfig) -> Result<SolveOutcome> {
    cfg.validate()?;
    let penalties = vec![cfg.alpha; phi.data().ncols() / 2];
    proximal_gradient(phi, r_bar, &penalties, cfg.max_iters, cfg.tol, cfg.step)
}

/// Single-frame recovery with penalty `lambda * omega_fixed` on the previous
/// frame's support and `lambda` elsewhere.
pub fn ista_weighted_l21_solve(
    phi: &LiftedMatrix,
    z_bar: &LiftedMatrix,
    prev_support: &GroupSet,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    let m = phi.data().ncols() / 2;
    if prev_support.universe() != m {
        return Err(Error::ShapeMismatch(format!(
            "support over {} groups, operator has {m}",
            prev_support.universe()
        )));
    }
    let penalties: Vec<f64> = (0..m)
        .map(|j| cfg.lambda * if prev_support.contains(j) { cfg.omega_fixed } else { 1.0 })
        .collect();
    proximal_gradient(phi, z_bar, &penalties, cfg.max_iters, cfg.tol, cfg.step)
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub estimate: LiftedMatrix,
    /// The restricted system was rank deficient and a pseudo-inverse was used.
    pub rank_deficient: bool,
}

/// Least squares restricted to the groups in `support` (0-based); all other
/// groups are zero.
pub fn oracle_ls(phi: &LiftedMatrix, z_bar: &LiftedMatrix, support: &[usize]) -> Result<OracleOutcome> {
    check_operands(phi, z_bar)?;
    let m = phi.data().ncols() / 2;
    let rows = phi.data().nrows();
    let cols = z_bar.data().ncols();
    if let Some(&bad) = support.iter().find(|&&j| j >= m) {
        return Err(Error::InvalidParameter(format!("support index {bad} outside 0..{m}")));
    }
    if support.len() > rows / 2 {
        return Err(Error::InvalidParameter(format!(
            "support size {} exceeds pilot length {}",
            support.len(),
            rows / 2
        )));
    }
    let mut estimate = Array2::zeros((2 * m, cols));
    if support.is_empty() {
        return Ok(OracleOutcome {
            estimate: LiftedMatrix::signal(estimate)?,
            rank_deficient: false,
        });
    }
    let picked: Vec<usize> = support.iter().copied().chain(support.iter().map(|j| m + j)).collect();
    let a = DMatrix::from_fn(rows, picked.len(), |r, c| phi.data()[[r, picked[c]]]);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * (rows.max(picked.len()) as f64) * f64::EPSILON;
    let rank_deficient = svd.singular_values.iter().any(|&s| s <= cutoff);
    for c in 0..cols {
        let b = DVector::from_iterator(rows, z_bar.data().column(c).iter().copied());
        let x = svd
            .solve(&b, cutoff)
            .map_err(|e| Error::InvalidParameter(format!("least squares failed: {e}")))?;
        for (k, &row) in picked.iter().enumerate() {
            estimate[[row, c]] = x[k];
        }
    }
    Ok(OracleOutcome {
        estimate: LiftedMatrix::signal(estimate)?,
        rank_deficient,
    })
}

/// Per-frame oracle estimate of a concatenated channel.
pub fn oracle_episode(
    phi: &LiftedMatrix,
    z_frames: &[LiftedMatrix],
    supports: &[Vec<usize>],
) -> Result<LiftedMatrix> {
    if z_frames.len() != supports.len() || z_frames.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} frames but {} supports",
            z_frames.len(),
            supports.len()
        )));
    }
    let n = z_frames[0].data().ncols();
    let m2 = phi.data().ncols();
    let mut out = Array2::zeros((m2, n * z_frames.len()));
    for (i, (z, sup)) in z_frames.iter().zip(supports).enumerate() {
        let est = oracle_ls(phi, z, sup)?;
        out.slice_mut(s![.., i * n..(i + 1) * n]).assign(est.estimate.data());
    }
    LiftedMatrix::signal(out)
}

/// Log-spaced grid of `points` values over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..points)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_phi() -> LiftedMatrix {
        let re = array![
            [0.9, -0.2, 0.3, 0.1],
            [0.1, 0.8, -0.4, 0.2],
            [-0.3, 0.2, 0.7, 0.5]
        ];
        let im = array![
            [0.1, 0.3, -0.2, 0.4],
            [-0.5, 0.1, 0.2, -0.1],
            [0.2, -0.3, 0.1, 0.6]
        ];
        crate::lift::lift_operator(&crate::lift::ComplexMatrix::new(re, im).unwrap())
    }

    #[test]
    fn prox_closed_form() {
        let v = LiftedMatrix::signal(array![[3.0], [4.0]]).unwrap();
        let p = prox_group_l21(&v, 1.0).unwrap();
        assert!((p.data()[[0, 0]] - 2.4).abs() < 1e-15);
        assert!((p.data()[[1, 0]] - 3.2).abs() < 1e-15);
        assert_eq!(prox_group_l21(&v, 0.0).unwrap(), v);
        assert_eq!(prox_group_l21(&v, 9.0).unwrap().data().sum(), 0.0);
        assert!(prox_group_l21(&v, -1.0).is_err());
    }

    #[test]
    fn prox_norm_matches_scalar_grid_search() {
        let v = LiftedMatrix::signal(array![[1.3, -0.4], [0.2, 0.9]]).unwrap();
        let tau = 0.35;
        let n = v.fro_norm();
        let best = (0..=2_000_000)
            .map(|i| i as f64 * 1e-6 * 2.0)
            .min_by(|a, b| {
                let f = |x: f64| 0.5 * (x - n) * (x - n) + tau * x;
                f(*a).total_cmp(&f(*b))
            })
            .unwrap();
        let p = prox_group_l21(&v, tau).unwrap();
        assert!((p.fro_norm() - best).abs() < 1e-6);
    }

    #[test]
    fn huge_alpha_gives_zero() {
        let phi = tiny_phi();
        let r = LiftedMatrix::signal(array![[1.0], [0.5], [-0.2], [0.3], [0.1], [0.4]]).unwrap();
        let cfg = SolverConfig {
            alpha: 1e6,
            ..SolverConfig::default()
        };
        let out = ista_l21_solve(&phi, &r, &cfg).unwrap();
        assert!(out.estimate.data().iter().all(|&x| x == 0.0));
        assert!(out.converged);
    }

    #[test]
    fn weighted_with_unit_omega_equals_plain() {
        let phi = tiny_phi();
        let r = LiftedMatrix::signal(array![[1.0], [0.5], [-0.2], [0.3], [0.1], [0.4]]).unwrap();
        let cfg = SolverConfig {
            alpha: 0.05,
            lambda: 0.05,
            omega_fixed: 1.0,
            tol: 1e-10,
            ..SolverConfig::default()
        };
        let a = ista_l21_solve(&phi, &r, &cfg).unwrap();
        let prev = GroupSet::from_indices(4, [1, 2]).unwrap();
        let b = ista_weighted_l21_solve(&phi, &r, &prev, &cfg).unwrap();
        assert_eq!(a.estimate, b.estimate);
    }

    #[test]
    fn zero_omega_never_shrinks_previous_support() {
        let phi = tiny_phi();
        let r = LiftedMatrix::signal(array![[1.0], [0.5], [-0.2], [0.3], [0.1], [0.4]]).unwrap();
        let cfg = SolverConfig {
            lambda: 1e6,
            omega_fixed: 0.0,
            tol: 1e-12,
            max_iters: 20000,
            ..SolverConfig::default()
        };
        let prev = GroupSet::from_indices(4, [0]).unwrap();
        let out = ista_weighted_l21_solve(&phi, &r, &prev, &cfg).unwrap();
        let norms = crate::lift::group_row_norms(&out.estimate);
        assert!(norms[0] > 0.0);
        assert!(norms[1..].iter().all(|&n| n == 0.0));
        let pen = [0.0, 1e6, 1e6, 1e6];
        assert!(kkt_residual(phi.view(), r.view(), out.estimate.view(), &pen) < 1e-6);
    }

    #[test]
    fn oracle_recovers_noiseless_and_handles_empty() {
        let phi = tiny_phi();
        let mut g = Array2::zeros((8, 1));
        g[[1, 0]] = 0.7;
        g[[5, 0]] = -0.3;
        let z = LiftedMatrix::signal(phi.data().dot(&g)).unwrap();
        let out = oracle_ls(&phi, &z, &[1]).unwrap();
        assert!(!out.rank_deficient);
        assert!((out.estimate.data() - &g).iter().all(|x| x.abs() < 1e-10));
        let empty = oracle_ls(&phi, &z, &[]).unwrap();
        assert_eq!(empty.estimate.data().sum(), 0.0);
        assert!(oracle_ls(&phi, &z, &[9]).is_err());
    }

    #[test]
    fn oracle_flags_rank_deficiency() {
        let re = array![[1.0, 1.0], [2.0, 2.0]];
        let phi = crate::lift::lift_operator(&crate::lift::ComplexMatrix::new(re, Array2::zeros((2, 2))).unwrap());
        let z = LiftedMatrix::signal(array![[1.0], [2.0], [0.0], [0.0]]).unwrap();
        let out = oracle_ls(&phi, &z, &[0, 1]).unwrap();
        assert!(out.rank_deficient);
        let fit = phi.data().dot(out.estimate.data());
        assert!((&fit - z.data()).iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = log_grid(1e-3, 1.0, 7);
        assert_eq!(g.len(), 7);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[6] - 1.0).abs() < 1e-12);
        assert!((g[2] - 1e-2).abs() < 1e-14);
    }
}

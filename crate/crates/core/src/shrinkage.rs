//! Block thresholding with support selection (BSS), its weighted
//! generalization (GBSS), the support-selection rule and the layer schedule
//! that drives it, plus the exact vector-Jacobian product used in training.
//!
//! Per group `j` with norm `n_j` and weight `w_j` (1 for plain BSS):
//!
//! * `n_j > theta` and `j` selected: kept unchanged;
//! * `n_j > theta * w_j`: scaled by `(n_j - theta * w_j) / n_j`;
//! * otherwise zeroed.
//!
//! Branches are tested in that order. A selected group with
//! `theta * w_j < n_j <= theta` (only possible for `w_j < 1`) falls through to
//! the shrink branch.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::lift::{paired_row_norms, LiftedMatrix};

/// Group norms at or below this are treated as zero in support extraction.
pub const SUPPORT_TOL: f64 = 1e-12;

/// How the entries of a lifted signal are partitioned into groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    /// Group `j` is the complex row `j`: lifted rows `{j, M + j}` across all columns.
    #[default]
    PairedRows,
    /// Every real scalar is its own group (row-major index `r * cols + c`).
    Entries,
}

impl Grouping {
    pub fn count(self, rows: usize, cols: usize) -> usize {
        match self {
            Grouping::PairedRows => rows / 2,
            Grouping::Entries => rows * cols,
        }
    }

    pub fn norms(self, v: ArrayView2<'_, f64>) -> Vec<f64> {
        match self {
            Grouping::PairedRows => paired_row_norms(v),
            Grouping::Entries => v.iter().map(|x| x.abs()).collect(),
        }
    }

    /// Group index owning entry `(r, c)`.
    #[inline]
    fn group_of(self, rows: usize, cols: usize, r: usize, c: usize) -> usize {
        match self {
            Grouping::PairedRows => {
                let m = rows / 2;
                if r < m {
                    r
                } else {
                    r - m
                }
            }
            Grouping::Entries => r * cols + c,
        }
    }

    /// Per-group inner products `<a_g, b_g>`.
    fn dots(self, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Vec<f64> {
        let (rows, cols) = a.dim();
        let mut out = vec![0.0; self.count(rows, cols)];
        match self {
            Grouping::PairedRows => {
                let m = rows / 2;
                for (r, (ra, rb)) in a.outer_iter().zip(b.outer_iter()).enumerate() {
                    out[r % m] += ra.iter().zip(rb.iter()).map(|(x, y)| x * y).sum::<f64>();
                }
            }
            Grouping::Entries => {
                for ((r, c), x) in a.indexed_iter() {
                    out[self.group_of(rows, cols, r, c)] += x * b[[r, c]];
                }
            }
        }
        out
    }
}

/// A subset of group indices stored as a membership mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSet {
    mask: Vec<bool>,
}

impl GroupSet {
    pub fn empty(groups: usize) -> Self {
        Self {
            mask: vec![false; groups],
        }
    }

    pub fn from_indices(groups: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut mask = vec![false; groups];
        for j in indices {
            if j >= groups {
                return Err(Error::InvalidParameter(format!(
                    "group index {j} out of range for {groups} groups"
                )));
            }
            mask[j] = true;
        }
        Ok(Self { mask })
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    #[inline]
    pub fn contains(&self, j: usize) -> bool {
        self.mask[j]
    }

    pub fn universe(&self) -> usize {
        self.mask.len()
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
            .collect()
    }
}

/// Per-group threshold multipliers: `omega` on marked groups, 1 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupWeights {
    omega: f64,
    marked: GroupSet,
}

impl GroupWeights {
    pub fn ones(groups: usize) -> Self {
        Self {
            omega: 1.0,
            marked: GroupSet::empty(groups),
        }
    }

    pub fn new(omega: f64, marked: GroupSet) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "omega must be positive, got {omega}"
            )));
        }
        Ok(Self { omega, marked })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn marked(&self) -> &GroupSet {
        &self.marked
    }

    pub fn groups(&self) -> usize {
        self.marked.universe()
    }

    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        if self.marked.contains(j) {
            self.omega
        } else {
            1.0
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.groups()).map(|j| self.weight(j)).collect()
    }
}

/// Linear support-size schedule across unrolled layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportSchedule {
    p_min: usize,
    p_max: usize,
    num_layers: usize,
    groups: usize,
}

impl SupportSchedule {
    pub fn new(p_min: usize, p_max: usize, num_layers: usize, groups: usize) -> Result<Self> {
        if p_min > p_max || p_max > groups {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= p_min <= p_max <= M, got p_min={p_min} p_max={p_max} M={groups}"
            )));
        }
        if num_layers == 0 {
            return Err(Error::InvalidParameter("schedule needs at least one layer".into()));
        }
        Ok(Self {
            p_min,
            p_max,
            num_layers,
            groups,
        })
    }

    pub fn p_min(&self) -> usize {
        self.p_min
    }

    pub fn p_max(&self) -> usize {
        self.p_max
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Selected fraction at 1-based layer `l`.
    pub fn fraction(&self, l: usize) -> Result<f64> {
        schedule_p(self, l)
    }
}

/// Fraction `p_l` of groups exempted from shrinkage at 1-based layer `l`,
/// rising linearly from `p_min / M` to `p_max / M`.
pub fn schedule_p(sched: &SupportSchedule, l: usize) -> Result<f64> {
    if l == 0 || l > sched.num_layers {
        return Err(Error::LayerOutOfRange {
            index: l,
            layers: sched.num_layers,
        });
    }
    let m = sched.groups as f64;
    let base = sched.p_min as f64 / m;
    if sched.num_layers == 1 {
        return Ok(base);
    }
    let slope = (sched.p_max - sched.p_min) as f64 / (m * (sched.num_layers - 1) as f64);
    Ok(base + slope * (l - 1) as f64)
}

/// Number of groups selected for fraction `p` out of `groups`.
pub fn selection_size(p: f64, groups: usize) -> usize {
    // the schedule produces exact integers p*M at its end points; absorb rounding
    let k = (p * groups as f64 + 1e-9).floor();
    (k.max(0.0) as usize).min(groups)
}

/// Indices of the `floor(p * M)` largest norms; ties go to the smaller index.
pub fn support_select(norms: &[f64], p: f64) -> GroupSet {
    let k = selection_size(p, norms.len());
    top_k(norms, k)
}

pub(crate) fn top_k(norms: &[f64], k: usize) -> GroupSet {
    let mut mask = vec![false; norms.len()];
    if k == 0 {
        return GroupSet { mask };
    }
    let mut order: Vec<usize> = (0..norms.len()).collect();
    let k = k.min(order.len());
    order.select_nth_unstable_by(k - 1, |&a, &b| {
        norms[b]
            .partial_cmp(&norms[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &j in &order[..k] {
        mask[j] = true;
    }
    GroupSet { mask }
}

/// Which branch a group took in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Keep,
    Shrink,
    Zero,
}

/// Forward-pass record needed by the VJP.
#[derive(Debug, Clone)]
pub struct ActivationRecord {
    pub norms: Vec<f64>,
    pub branches: Vec<Branch>,
}

fn check_theta(theta: f64) -> Result<()> {
    if theta < 0.0 || theta.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "threshold must be non-negative, got {theta}"
        )));
    }
    Ok(())
}

#[inline]
fn branch_for(n: f64, theta: f64, w: f64, selected: bool) -> Branch {
    if n == 0.0 {
        Branch::Zero
    } else if n > theta && selected {
        Branch::Keep
    } else if n > theta * w {
        Branch::Shrink
    } else {
        Branch::Zero
    }
}

/// Raw-array GBSS. `weights = None` means all weights are 1.
pub(crate) fn activate(
    v: ArrayView2<'_, f64>,
    grouping: Grouping,
    theta: f64,
    weights: Option<&GroupWeights>,
    selected: &GroupSet,
) -> (Array2<f64>, ActivationRecord) {
    let (rows, cols) = v.dim();
    let norms = grouping.norms(v);
    let mut scales = Vec::with_capacity(norms.len());
    let mut branches = Vec::with_capacity(norms.len());
    for (j, &n) in norms.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws.weight(j));
        let b = branch_for(n, theta, w, selected.contains(j));
        scales.push(match b {
            Branch::Keep => 1.0,
            Branch::Shrink => (n - theta * w) / n,
            Branch::Zero => 0.0,
        });
        branches.push(b);
    }
    let mut out = v.to_owned();
    match grouping {
        Grouping::PairedRows => {
            let m = rows / 2;
            for (r, mut row) in out.outer_iter_mut().enumerate() {
                row *= scales[r % m];
            }
        }
        Grouping::Entries => {
            for ((r, c), x) in out.indexed_iter_mut() {
                *x *= scales[grouping.group_of(rows, cols, r, c)];
            }
        }
    }
    (out, ActivationRecord { norms, branches })
}

/// Cotangents produced by [`gbss_vjp`].
#[derive(Debug, Clone)]
pub struct GbssCotangents {
    pub input: Array2<f64>,
    pub theta: f64,
    pub omega: f64,
}

/// Raw-array VJP of [`activate`].
///
/// The selected set is a constant. At `n_j == theta * w_j` the shrink-branch
/// derivative is used.
pub(crate) fn activate_vjp(
    v: ArrayView2<'_, f64>,
    grouping: Grouping,
    theta: f64,
    weights: Option<&GroupWeights>,
    record: &ActivationRecord,
    upstream: ArrayView2<'_, f64>,
) -> GbssCotangents {
    let (rows, cols) = v.dim();
    let dots = grouping.dots(v, upstream);
    let mut coef_u = vec![0.0; record.norms.len()];
    let mut coef_x = vec![0.0; record.norms.len()];
    let mut d_theta = 0.0;
    let mut d_omega = 0.0;
    for (j, (&n, &b)) in record.norms.iter().zip(&record.branches).enumerate() {
        let w = weights.map_or(1.0, |ws| ws.weight(j));
        let t = theta * w;
        let shrink = match b {
            Branch::Keep => {
                coef_u[j] = 1.0;
                false
            }
            Branch::Shrink => true,
            Branch::Zero => n > 0.0 && n == t,
        };
        if shrink {
            coef_u[j] = 1.0 - t / n;
            coef_x[j] = t / (n * n * n) * dots[j];
            let along = -dots[j] / n;
            d_theta += w * along;
            if weights.is_some_and(|ws| ws.marked().contains(j)) {
                d_omega += theta * along;
            }
        }
    }
    let mut input = Array2::zeros((rows, cols));
    match grouping {
        Grouping::PairedRows => {
            let m = rows / 2;
            for (r, mut row) in input.outer_iter_mut().enumerate() {
                let (cu, cx) = (coef_u[r % m], coef_x[r % m]);
                ndarray::Zip::from(&mut row)
                    .and(upstream.row(r))
                    .and(v.row(r))
                    .for_each(|g, &u, &x| *g = cu * u + cx * x);
            }
        }
        Grouping::Entries => {
            for ((r, c), g) in input.indexed_iter_mut() {
                let j = grouping.group_of(rows, cols, r, c);
                *g = coef_u[j] * upstream[[r, c]] + coef_x[j] * v[[r, c]];
            }
        }
    }
    GbssCotangents {
        input,
        theta: d_theta,
        omega: d_omega,
    }
}

fn check_signal(v: &LiftedMatrix, groups: usize) -> Result<()> {
    if !v.is_signal() {
        return Err(Error::MalformedLift("thresholding expects a lifted signal".into()));
    }
    if v.groups() != groups {
        return Err(Error::ShapeMismatch(format!(
            "signal has {} groups, selection/weights cover {}",
            v.groups(),
            groups
        )));
    }
    Ok(())
}

/// Block thresholding with support selection on a lifted signal.
pub fn bss_forward(v: &LiftedMatrix, theta: f64, omega_sel: &GroupSet) -> Result<LiftedMatrix> {
    check_theta(theta)?;
    check_signal(v, omega_sel.universe())?;
    let (out, _) = activate(v.view(), Grouping::PairedRows, theta, None, omega_sel);
    LiftedMatrix::signal(out)
}

/// Generalized BSS with per-group threshold weights.
pub fn gbss_forward(
    v: &LiftedMatrix,
    theta: f64,
    weights: &GroupWeights,
    omega_sel: &GroupSet,
) -> Result<LiftedMatrix> {
    check_theta(theta)?;
    check_signal(v, omega_sel.universe())?;
    check_signal(v, weights.groups())?;
    let (out, _) = activate(v.view(), Grouping::PairedRows, theta, Some(weights), omega_sel);
    LiftedMatrix::signal(out)
}

/// Cotangents of [`gbss_forward`] with respect to its input, `theta` and `omega`.
pub fn gbss_vjp(
    v: &LiftedMatrix,
    theta: f64,
    weights: &GroupWeights,
    omega_sel: &GroupSet,
    upstream: &Array2<f64>,
) -> Result<GbssCotangents> {
    check_theta(theta)?;
    check_signal(v, omega_sel.universe())?;
    check_signal(v, weights.groups())?;
    if upstream.dim() != v.data().dim() {
        return Err(Error::ShapeMismatch(format!(
            "upstream {:?} vs input {:?}",
            upstream.dim(),
            v.data().dim()
        )));
    }
    let (_, record) = activate(v.view(), Grouping::PairedRows, theta, Some(weights), omega_sel);
    Ok(activate_vjp(
        v.view(),
        Grouping::PairedRows,
        theta,
        Some(weights),
        &record,
        upstream.view(),
    ))
}

/// Groups with norm above [`SUPPORT_TOL`].
pub fn support_of(v: ArrayView2<'_, f64>, grouping: Grouping) -> GroupSet {
    GroupSet::from_mask(grouping.norms(v).into_iter().map(|n| n > SUPPORT_TOL).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sig(re: f64, im: f64) -> LiftedMatrix {
        LiftedMatrix::signal(array![[re], [im]]).unwrap()
    }

    #[test]
    fn schedule_end_points_and_midpoint() {
        let s = SupportSchedule::new(6, 10, 8, 128).unwrap();
        assert_eq!(schedule_p(&s, 1).unwrap(), 6.0 / 128.0);
        assert!((schedule_p(&s, 8).unwrap() - 10.0 / 128.0).abs() < 1e-15);
        let p4 = schedule_p(&s, 4).unwrap();
        assert!((p4 - (6.0 + 4.0 * 3.0 / 7.0) / 128.0).abs() < 1e-15);
        assert!((p4 - 0.06027).abs() < 1e-5);
        assert!(schedule_p(&s, 0).is_err());
        assert!(schedule_p(&s, 9).is_err());
        let one = SupportSchedule::new(3, 5, 1, 16).unwrap();
        assert_eq!(schedule_p(&one, 1).unwrap(), 3.0 / 16.0);
    }

    #[test]
    fn schedule_rejects_bad_bounds() {
        assert!(SupportSchedule::new(5, 4, 3, 10).is_err());
        assert!(SupportSchedule::new(1, 11, 3, 10).is_err());
        assert!(SupportSchedule::new(1, 2, 0, 10).is_err());
    }

    #[test]
    fn select_breaks_ties_to_smaller_index() {
        let norms = [5.0, 1.0, 3.0, 3.0];
        let sel = support_select(&norms, 0.5);
        assert_eq!(sel.indices(), vec![0, 2]);
        assert!(support_select(&norms, 0.0).is_empty());
        assert_eq!(support_select(&norms, 1.0).len(), 4);
    }

    #[test]
    fn bss_three_branches() {
        let none = GroupSet::empty(1);
        let all = GroupSet::from_indices(1, [0]).unwrap();
        let shrunk = bss_forward(&sig(3.0, 4.0), 1.0, &none).unwrap();
        assert!((shrunk.data()[[0, 0]] - 2.4).abs() < 1e-15);
        assert!((shrunk.data()[[1, 0]] - 3.2).abs() < 1e-15);
        let kept = bss_forward(&sig(3.0, 4.0), 1.0, &all).unwrap();
        assert_eq!(kept.data(), &array![[3.0], [4.0]]);
        let zeroed = bss_forward(&sig(0.3, 0.4), 1.0, &all).unwrap();
        assert_eq!(zeroed.data(), &array![[0.0], [0.0]]);
        assert!(bss_forward(&sig(1.0, 0.0), -0.1, &none).is_err());
    }

    #[test]
    fn gbss_weighted_branches() {
        let none = GroupSet::empty(1);
        let marked = GroupSet::from_indices(1, [0]).unwrap();
        let w = GroupWeights::new(0.5, marked.clone()).unwrap();
        let out = gbss_forward(&sig(3.0, 4.0), 1.0, &w, &none).unwrap();
        assert!((out.data()[[0, 0]] - 2.7).abs() < 1e-15);
        assert!((out.data()[[1, 0]] - 3.6).abs() < 1e-15);

        let w = GroupWeights::new(0.3, marked).unwrap();
        let out = gbss_forward(&sig(0.4, 0.0), 1.0, &w, &none).unwrap();
        assert!((out.data()[[0, 0]] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn selected_group_between_weighted_and_plain_threshold_is_shrunk() {
        let sel = GroupSet::from_indices(1, [0]).unwrap();
        let w = GroupWeights::new(0.3, sel.clone()).unwrap();
        let out = gbss_forward(&sig(0.4, 0.0), 1.0, &w, &sel).unwrap();
        assert!((out.data()[[0, 0]] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn vjp_zero_theta_passes_through() {
        let v = LiftedMatrix::signal(array![[1.0, -2.0], [0.0, 0.0], [0.5, 1.0], [0.0, 0.0]]).unwrap();
        let up = array![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8]];
        let w = GroupWeights::new(0.5, GroupSet::from_indices(2, [0]).unwrap()).unwrap();
        let ct = gbss_vjp(&v, 0.0, &w, &GroupSet::empty(2), &up).unwrap();
        // group 0 passes through, group 1 has zero norm and is killed
        assert_eq!(ct.input.row(0), up.row(0));
        assert_eq!(ct.input.row(2), up.row(2));
        assert!(ct.input.row(1).iter().all(|&x| x == 0.0));
        assert!(ct.input.row(3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn vjp_all_zeroed() {
        let v = LiftedMatrix::signal(array![[1.0], [2.0], [0.5], [-1.0]]).unwrap();
        let up = array![[1.0], [1.0], [1.0], [1.0]];
        let w = GroupWeights::ones(2);
        let ct = gbss_vjp(&v, 100.0, &w, &GroupSet::empty(2), &up).unwrap();
        assert!(ct.input.iter().all(|&x| x == 0.0));
        assert_eq!(ct.theta, 0.0);
        assert_eq!(ct.omega, 0.0);
    }

    #[test]
    fn elementwise_grouping_matches_scalar_formula() {
        let v = array![[2.0], [-0.5], [-3.0], [0.2]];
        let norms = Grouping::Entries.norms(v.view());
        let sel = support_select(&norms, 0.25);
        assert_eq!(sel.indices(), vec![2]);
        let (out, _) = activate(v.view(), Grouping::Entries, 1.0, None, &sel);
        let expect: Vec<f64> = v
            .iter()
            .enumerate()
            .map(|(g, &x)| {
                if sel.contains(g) && x.abs() > 1.0 {
                    x
                } else {
                    x.signum() * (x.abs() - 1.0).max(0.0)
                }
            })
            .collect();
        assert_eq!(out.iter().copied().collect::<Vec<_>>(), expect);
    }

    #[test]
    fn support_of_skips_tiny_groups() {
        let v = array![[1.0, 0.0], [0.0, 0.0], [0.0, 1e-14], [0.0, 0.0]];
        assert_eq!(support_of(v.view(), Grouping::PairedRows).indices(), vec![0]);
    }
}

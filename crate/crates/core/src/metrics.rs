//! Estimation quality metrics.
//!
//! NMSE follows the norm-ratio form: the mean over samples of
//! `10 log10(||G - G_hat||_F / ||G||_F)`. The conventional squared-norm form
//! is available through [`NmseForm::Squared`].

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lift::{dft_unitary, unlift_signal, ComplexMatrix, LiftedMatrix};

/// Per-sample floor applied on exact recovery.
pub const NMSE_FLOOR_DB: f64 = -150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NmseForm {
    /// `10 log10(||err|| / ||G||)`.
    #[default]
    NormRatio,
    /// `10 log10(||err||^2 / ||G||^2)`.
    Squared,
}

impl NmseForm {
    pub fn label(self) -> &'static str {
        match self {
            NmseForm::NormRatio => "norm_ratio",
            NmseForm::Squared => "squared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmseSummary {
    pub db: f64,
    /// Samples used in the average.
    pub count: usize,
    /// Samples recovered exactly (floored at [`NMSE_FLOOR_DB`]).
    pub perfect: usize,
    /// Samples skipped because the truth has zero norm.
    pub excluded: usize,
}

/// One sample's NMSE in dB, or `None` for a zero-norm truth.
pub fn sample_nmse_db(truth: &LiftedMatrix, estimate: &LiftedMatrix, form: NmseForm) -> Result<Option<f64>> {
    if truth.data().dim() != estimate.data().dim() {
        return Err(Error::ShapeMismatch(format!(
            "truth {:?} vs estimate {:?}",
            truth.data().dim(),
            estimate.data().dim()
        )));
    }
    let t = truth.fro_norm();
    if t == 0.0 {
        return Ok(None);
    }
    let e = (truth.data() - estimate.data()).iter().map(|x| x * x).sum::<f64>().sqrt();
    if e == 0.0 {
        return Ok(Some(NMSE_FLOOR_DB));
    }
    let ratio = match form {
        NmseForm::NormRatio => e / t,
        NmseForm::Squared => (e / t) * (e / t),
    };
    Ok(Some((10.0 * ratio.log10()).max(NMSE_FLOOR_DB)))
}

/// Mean per-sample NMSE in dB.
pub fn nmse(truth: &[LiftedMatrix], estimates: &[LiftedMatrix], form: NmseForm) -> Result<NmseSummary> {
    if truth.len() != estimates.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} truths vs {} estimates",
            truth.len(),
            estimates.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0;
    let mut perfect = 0;
    let mut excluded = 0;
    for (t, e) in truth.iter().zip(estimates) {
        match sample_nmse_db(t, e, form)? {
            Some(db) => {
                if db <= NMSE_FLOOR_DB {
                    perfect += 1;
                }
                sum += db;
                count += 1;
            }
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        warn!("{excluded} sample(s) with zero-norm truth excluded from NMSE");
    }
    if count == 0 {
        return Err(Error::InvalidParameter("NMSE needs at least one sample with nonzero truth".into()));
    }
    Ok(NmseSummary {
        db: sum / count as f64,
        count,
        perfect,
        excluded,
    })
}

/// Spatial channels `H = U S^H V^H` (N x M) of every frame of a lifted
/// concatenated angular channel with `frames` frames.
pub fn channel_frames(g_bar: &LiftedMatrix, frames: usize) -> Result<Vec<ComplexMatrix>> {
    let g = unlift_signal(g_bar)?;
    if frames == 0 || g.cols() % frames != 0 {
        return Err(Error::ShapeMismatch(format!("{} columns do not split into {frames} frames", g.cols())));
    }
    let n = g.cols() / frames;
    let u = dft_unitary(n)?;
    let v_h = dft_unitary(g.rows())?.adjoint();
    (0..frames)
        .map(|i| u.matmul(&g.col_block(i * n, (i + 1) * n).adjoint())?.matmul(&v_h))
        .collect()
}

/// `log2 det(I + c A A^H)` for a complex matrix `A`.
fn log2_det_gram(a: &ComplexMatrix, c: f64) -> Result<f64> {
    let gram = a.matmul(&a.adjoint())?;
    let n = gram.rows();
    // real lift of the Hermitian matrix I + c A A^H, symmetrized
    let lifted = DMatrix::from_fn(2 * n, 2 * n, |r, k| {
        let (rb, kb) = (r / n, k / n);
        let (i, j) = (r % n, k % n);
        let (re, im) = gram.get(i, j);
        let (re_t, im_t) = gram.get(j, i);
        let re = 0.5 * (re + re_t);
        let im = 0.5 * (im - im_t);
        let eye = if i == j { 1.0 } else { 0.0 };
        match (rb, kb) {
            (0, 0) | (1, 1) => eye + c * re,
            (0, 1) => -c * im,
            _ => c * im,
        }
    });
    let chol = lifted
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("determinant argument is not positive definite".into()))?;
    // det of the lift is |det|^2
    Ok(chol.l().diagonal().iter().map(|d| d.log2()).sum::<f64>())
}

/// Mean over frames of `log2 det(I_N + M N / (10^(nmse/10) + noise_var) H H^H)`.
pub fn ase(frames: &[ComplexMatrix], nmse_db: f64, noise_var: f64) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::InvalidParameter("ASE needs at least one frame".into()));
    }
    let denom = 10f64.powf(nmse_db / 10.0) + noise_var;
    let mut sum = 0.0;
    for h in frames {
        let scale = (h.rows() * h.cols()) as f64 / denom;
        sum += log2_det_gram(h, scale)?;
    }
    Ok(sum / frames.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sig(v: &[f64]) -> LiftedMatrix {
        LiftedMatrix::signal(ndarray::Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn nmse_examples() {
        let g = sig(&[3.0, 4.0]);
        let zero = sig(&[0.0, 0.0]);
        assert_eq!(nmse(&[g.clone()], &[zero.clone()], NmseForm::NormRatio).unwrap().db, 0.0);
        let tenth = sig(&[2.7, 3.6]);
        let r = nmse(&[g.clone()], &[tenth.clone()], NmseForm::NormRatio).unwrap();
        assert!((r.db + 10.0).abs() < 1e-12);
        let sq = nmse(&[g.clone()], &[tenth], NmseForm::Squared).unwrap();
        assert!((sq.db + 20.0).abs() < 1e-12);
        let hundredth = sig(&[2.97, 3.96]);
        let two = nmse(&[g.clone(), g.clone()], &[sig(&[2.7, 3.6]), hundredth], NmseForm::NormRatio).unwrap();
        assert!((two.db + 15.0).abs() < 1e-9);
        let exact = nmse(&[g.clone()], &[g.clone()], NmseForm::NormRatio).unwrap();
        assert_eq!((exact.db, exact.perfect), (NMSE_FLOOR_DB, 1));
        let skipped = nmse(&[zero.clone(), g.clone()], &[g.clone(), zero.clone()], NmseForm::NormRatio).unwrap();
        assert_eq!((skipped.count, skipped.excluded, skipped.db), (1, 1, 0.0));
        assert!(nmse(&[zero.clone()], &[zero], NmseForm::NormRatio).is_err());
    }

    #[test]
    fn ase_examples() {
        let one = ComplexMatrix::from_real(array![[1.0]]);
        let v = ase(&[one], f64::NEG_INFINITY, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let zero = ComplexMatrix::zeros(2, 4);
        assert_eq!(ase(&[zero], -10.0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn ase_matches_closed_form_for_diagonal_channel() {
        // H H^H = diag(4, 1) for this 2x2 complex H
        let h = ComplexMatrix::new(array![[0.0, 0.0], [0.0, 1.0]], array![[2.0, 0.0], [0.0, 0.0]]).unwrap();
        let c = 4.0 / (10f64.powf(-1.0) + 0.5);
        let expect = (1.0 + c * 4.0).log2() + (1.0 + c).log2();
        assert!((ase(&[h], -10.0, 0.5).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ase_non_increasing_in_nmse() {
        let h = ComplexMatrix::new(array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]], array![[0.2, 0.1, 0.0], [-0.3, 0.2, 0.1]]).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=80 {
            let db = -40.0 + 0.5 * k as f64;
            let v = ase(std::slice::from_ref(&h), db, 0.01).unwrap();
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn channel_frames_preserve_frobenius_norm() {
        let s = ComplexMatrix::from_fn(4, 4, |r, c| (r as f64 - c as f64, 0.5 * (r * c) as f64));
        let g = crate::lift::lift_signal(&s);
        let frames = channel_frames(&g, 2).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!((frames[0].rows(), frames[0].cols()), (2, 4));
        let total: f64 = frames.iter().map(|h| h.fro_norm().powi(2)).sum();
        assert!((total - s.fro_norm().powi(2)).abs() < 1e-10);
    }
}

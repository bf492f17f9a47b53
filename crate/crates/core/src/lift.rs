//! Complex matrices and their real-valued lifting.
//!
//! A complex operator `A = Re A + i Im A` lifts to the real block matrix
//! `[[Re A, -Im A], [Im A, Re A]]`; a complex signal `S` lifts to the
//! vertical stack `[Re S; Im S]`. Row `j` of a complex signal with `M` rows
//! becomes the paired rows `{j, M + j}` of its lift, and every row-sparsity
//! notion in this crate is defined over those pairs, so the lifted
//! `l2,1` norm equals the complex one exactly.

use std::f64::consts::PI;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Dense complex matrix stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    re: Array2<f64>,
    im: Array2<f64>,
}

impl ComplexMatrix {
    pub fn new(re: Array2<f64>, im: Array2<f64>) -> Result<Self> {
        if re.dim() != im.dim() {
            return Err(Error::ShapeMismatch(format!(
                "real part {:?} vs imaginary part {:?}",
                re.dim(),
                im.dim()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            re: Array2::zeros((rows, cols)),
            im: Array2::zeros((rows, cols)),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            re: Array2::eye(n),
            im: Array2::zeros((n, n)),
        }
    }

    pub fn from_real(re: Array2<f64>) -> Self {
        let im = Array2::zeros(re.dim());
        Self { re, im }
    }

    /// Build from a function returning `(re, im)` for entry `(r, c)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let (a, b) = f(r, c);
                out.re[[r, c]] = a;
                out.im[[r, c]] = b;
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.re.nrows()
    }

    pub fn cols(&self) -> usize {
        self.re.ncols()
    }

    pub fn re(&self) -> &Array2<f64> {
        &self.re
    }

    pub fn im(&self) -> &Array2<f64> {
        &self.im
    }

    pub fn get(&self, r: usize, c: usize) -> (f64, f64) {
        (self.re[[r, c]], self.im[[r, c]])
    }

    pub fn fro_norm(&self) -> f64 {
        (self.re.iter().chain(self.im.iter()).map(|x| x * x).sum::<f64>()).sqrt()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self {
            re: self.re.t().to_owned(),
            im: self.im.t().mapv(|x| -x),
        }
    }

    pub fn matmul(&self, rhs: &ComplexMatrix) -> Result<Self> {
        if self.cols() != rhs.rows() {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        let re = self.re.dot(&rhs.re) - self.im.dot(&rhs.im);
        let im = self.re.dot(&rhs.im) + self.im.dot(&rhs.re);
        Ok(Self { re, im })
    }

    pub fn sub(&self, rhs: &ComplexMatrix) -> Result<Self> {
        if self.re.dim() != rhs.re.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.re.dim(),
                rhs.re.dim()
            )));
        }
        Ok(Self {
            re: &self.re - &rhs.re,
            im: &self.im - &rhs.im,
        })
    }

    /// Columns `start..end` as a new matrix.
    pub fn col_block(&self, start: usize, end: usize) -> Self {
        Self {
            re: self.re.slice(s![.., start..end]).to_owned(),
            im: self.im.slice(s![.., start..end]).to_owned(),
        }
    }

    /// Complex l2 norm of every row.
    pub fn row_norms(&self) -> Vec<f64> {
        self.re
            .outer_iter()
            .zip(self.im.outer_iter())
            .map(|(a, b)| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| x * x + y * y)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// What a lifted matrix represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftKind {
    /// Lift of a complex `rows x cols` operator, stored as `2rows x 2cols`.
    Operator { rows: usize, cols: usize },
    /// Lift of a complex signal with `groups` rows, stored as `2groups x cols`.
    Signal { groups: usize },
}

/// Real-valued representation of a complex operator or signal.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMatrix {
    kind: LiftKind,
    data: Array2<f64>,
}

impl LiftedMatrix {
    /// Wrap raw `[Re; Im]` data as a lifted signal.
    pub fn signal(data: Array2<f64>) -> Result<Self> {
        if data.nrows() % 2 != 0 {
            return Err(Error::MalformedLift(format!(
                "signal needs an even row count, got {}",
                data.nrows()
            )));
        }
        Ok(Self {
            kind: LiftKind::Signal {
                groups: data.nrows() / 2,
            },
            data,
        })
    }

    /// Wrap raw data as a lifted operator, checking the block structure exactly.
    pub fn operator(data: Array2<f64>) -> Result<Self> {
        let (r2, c2) = data.dim();
        if r2 % 2 != 0 || c2 % 2 != 0 {
            return Err(Error::MalformedLift(format!(
                "operator needs even dimensions, got {r2}x{c2}"
            )));
        }
        let (r, c) = (r2 / 2, c2 / 2);
        let a = data.slice(s![..r, ..c]);
        let nb = data.slice(s![..r, c..]);
        let b = data.slice(s![r.., ..c]);
        let a2 = data.slice(s![r.., c..]);
        let ok = a.iter().zip(a2.iter()).all(|(x, y)| x == y)
            && b.iter().zip(nb.iter()).all(|(x, y)| *x == -*y);
        if !ok {
            return Err(Error::MalformedLift(
                "operator blocks are not of the form [[A, -B], [B, A]]".into(),
            ));
        }
        Ok(Self {
            kind: LiftKind::Operator { rows: r, cols: c },
            data,
        })
    }

    pub fn kind(&self) -> LiftKind {
        self.kind
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn is_signal(&self) -> bool {
        matches!(self.kind, LiftKind::Signal { .. })
    }

    /// Number of complex rows for signals, complex rows of the operator otherwise.
    pub fn groups(&self) -> usize {
        match self.kind {
            LiftKind::Signal { groups } => groups,
            LiftKind::Operator { rows, .. } => rows,
        }
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn lift_operator(a: &ComplexMatrix) -> LiftedMatrix {
    let top = concatenate![Axis(1), a.re, a.im.mapv(|x| -x)];
    let bottom = concatenate![Axis(1), a.im, a.re];
    LiftedMatrix {
        kind: LiftKind::Operator {
            rows: a.rows(),
            cols: a.cols(),
        },
        data: concatenate![Axis(0), top, bottom],
    }
}

pub fn lift_signal(s: &ComplexMatrix) -> LiftedMatrix {
    LiftedMatrix {
        kind: LiftKind::Signal { groups: s.rows() },
        data: concatenate![Axis(0), s.re, s.im],
    }
}

pub fn unlift_signal(l: &LiftedMatrix) -> Result<ComplexMatrix> {
    if !l.is_signal() {
        return Err(Error::MalformedLift("expected a lifted signal".into()));
    }
    unlift_rows(l.view())
}

/// Split raw `[Re; Im]` data back into a complex matrix.
pub fn unlift_rows(data: ArrayView2<'_, f64>) -> Result<ComplexMatrix> {
    if data.nrows() % 2 != 0 {
        return Err(Error::MalformedLift(format!(
            "odd row count {}",
            data.nrows()
        )));
    }
    let m = data.nrows() / 2;
    Ok(ComplexMatrix {
        re: data.slice(s![..m, ..]).to_owned(),
        im: data.slice(s![m.., ..]).to_owned(),
    })
}

/// l2 norm of each complex row of a lifted signal.
pub fn group_row_norms(l: &LiftedMatrix) -> Vec<f64> {
    paired_row_norms(l.view())
}

/// Paired-row norms of raw lifted data: entry `j` covers rows `j` and `M + j`.
pub fn paired_row_norms(data: ArrayView2<'_, f64>) -> Vec<f64> {
    let m = data.nrows() / 2;
    (0..m)
        .map(|j| {
            let a = data.row(j);
            let b = data.row(m + j);
            if let (Some(a), Some(b)) = (a.as_slice(), b.as_slice()) {
                return a.iter().zip(b).map(|(x, y)| x * x + y * y).sum::<f64>().sqrt();
            }
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x * x + y * y)
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Unitary DFT matrix with entries `exp(-2 pi i k l / n) / sqrt(n)`.
pub fn dft_unitary(n: usize) -> Result<ComplexMatrix> {
    if n == 0 {
        return Err(Error::InvalidDimension("DFT size must be at least 1".into()));
    }
    let scale = 1.0 / (n as f64).sqrt();
    Ok(ComplexMatrix::from_fn(n, n, |k, l| {
        // reduce k*l mod n first so the angle stays small
        let phase = -2.0 * PI * ((k * l) % n) as f64 / n as f64;
        (phase.cos() * scale, phase.sin() * scale)
    }))
}

//! Python bindings. Matrices cross the boundary as lists of rows; lifted
//! matrices use the real `[Re; Im]` layout.

use cfbss::baselines::{ista_l21_solve, SolverConfig};
use cfbss::config::{ExperimentConfig, KvMap};
use cfbss::gradcheck::{gradcheck_tiny, GradcheckOptions, NetKind};
use cfbss::infer::{infer, layer_errors};
use cfbss::lift::{lift_operator, lift_signal, ComplexMatrix, LiftedMatrix};
use cfbss::metrics::{nmse, NmseForm};
use cfbss::nets::{CoarseNetParams, FineNetParams, NetVariant};
use cfbss::pipeline::{initial_nets, train_variant, CellData};
use cfbss::shrinkage::{bss_forward, gbss_forward, support_select, GroupSet, GroupWeights};
use cfbss::sim::{build_dataset, Split};
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;

fn err(e: cfbss::error::Error) -> PyErr {
    match e {
        cfbss::error::Error::Io { .. } | cfbss::error::Error::MissingArtifact { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_rows(a: &Array2<f64>) -> Rows {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Rows) -> PyResult<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|x| x.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn complex(re: Rows, im: Rows) -> PyResult<ComplexMatrix> {
    ComplexMatrix::new(from_rows(re)?, from_rows(im)?).map_err(err)
}

fn signal(rows: Rows) -> PyResult<LiftedMatrix> {
    LiftedMatrix::signal(from_rows(rows)?).map_err(err)
}

fn variant(tag: &str) -> PyResult<NetVariant> {
    tag.parse().map_err(err)
}

/// Lifted operator `[[Re, -Im], [Im, Re]]` of a complex matrix.
#[pyfunction(name = "lift_operator")]
fn py_lift_operator(re: Rows, im: Rows) -> PyResult<Rows> {
    Ok(to_rows(lift_operator(&complex(re, im)?).data()))
}

/// Lifted signal `[Re; Im]` of a complex matrix.
#[pyfunction(name = "lift_signal")]
fn py_lift_signal(re: Rows, im: Rows) -> PyResult<Rows> {
    Ok(to_rows(lift_signal(&complex(re, im)?).data()))
}

#[pyfunction(name = "support_select")]
fn py_support_select(norms: Vec<f64>, p: f64) -> Vec<usize> {
    support_select(&norms, p).indices()
}

#[pyfunction]
#[pyo3(signature = (v, theta, selected = Vec::new()))]
fn bss(v: Rows, theta: f64, selected: Vec<usize>) -> PyResult<Rows> {
    let v = signal(v)?;
    let sel = GroupSet::from_indices(v.groups(), selected).map_err(err)?;
    Ok(to_rows(bss_forward(&v, theta, &sel).map_err(err)?.data()))
}

/// Weighted shrinkage: groups in `marked` use threshold `theta * omega`.
#[pyfunction]
#[pyo3(signature = (v, theta, omega, marked, selected = Vec::new()))]
fn gbss(v: Rows, theta: f64, omega: f64, marked: Vec<usize>, selected: Vec<usize>) -> PyResult<Rows> {
    let v = signal(v)?;
    let m = v.groups();
    let w = GroupWeights::new(omega, GroupSet::from_indices(m, marked).map_err(err)?).map_err(err)?;
    let sel = GroupSet::from_indices(m, selected).map_err(err)?;
    Ok(to_rows(gbss_forward(&v, theta, &w, &sel).map_err(err)?.data()))
}

/// Group-sparse ISTA on lifted inputs. Returns `(estimate, iterations, converged)`.
#[pyfunction]
#[pyo3(signature = (phi, r, alpha, tol = 1e-4, max_iters = 2000))]
fn ista_l21(phi: Rows, r: Rows, alpha: f64, tol: f64, max_iters: usize) -> PyResult<(Rows, usize, bool)> {
    let phi = LiftedMatrix::operator(from_rows(phi)?).map_err(err)?;
    let cfg = SolverConfig {
        alpha,
        tol,
        max_iters,
        ..SolverConfig::default()
    };
    let out = ista_l21_solve(&phi, &signal(r)?, &cfg).map_err(err)?;
    Ok((to_rows(out.estimate.data()), out.iterations, out.converged))
}

/// NMSE in dB over paired lists of lifted truths and estimates.
#[pyfunction]
#[pyo3(signature = (truth, estimates, squared = false))]
fn nmse_db(truth: Vec<Rows>, estimates: Vec<Rows>, squared: bool) -> PyResult<f64> {
    let t = truth.into_iter().map(signal).collect::<PyResult<Vec<_>>>()?;
    let e = estimates.into_iter().map(signal).collect::<PyResult<Vec<_>>>()?;
    let form = if squared { NmseForm::Squared } else { NmseForm::NormRatio };
    Ok(nmse(&t, &e, form).map_err(err)?.db)
}

/// Finite-difference audit on the tiny problem. Returns `(max_rel_error, passed)`.
#[pyfunction]
#[pyo3(signature = (kind, seed = 0, points = 3))]
fn gradcheck(kind: &str, seed: u64, points: usize) -> PyResult<(f64, bool)> {
    let kind: NetKind = kind.parse().map_err(err)?;
    let r = gradcheck_tiny(kind, seed, points, false, &GradcheckOptions::default()).map_err(err)?;
    Ok((r.max_rel_error, r.passed()))
}

/// Experiment configuration. Keyword overrides use the `key=value` names of
/// the command line, e.g. `Config(T=16, k_train=100)`.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut kv = KvMap::new();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                kv.set(&k.extract::<String>()?, v.str()?.to_cow()?);
            }
        }
        Ok(Self {
            inner: ExperimentConfig::from_kv(&kv).map_err(err)?,
        })
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn to_text(&self) -> String {
        self.inner.to_kv().to_text()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.sparsity.m
    }

    #[getter]
    fn t(&self) -> usize {
        self.inner.sparsity.t
    }

    #[getter]
    fn frames(&self) -> usize {
        self.inner.sparsity.frames
    }

    #[getter]
    fn snr_db(&self) -> f64 {
        self.inner.sparsity.snr_db
    }
}

/// Simulated episodes of one split.
#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: cfbss::sim::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn generate(cfg: &PyConfig, split: &str, count: usize, seed: u64) -> PyResult<Self> {
        let split: Split = split.parse().map_err(err)?;
        Ok(Self {
            inner: build_dataset(&cfg.inner.sparsity, split, count, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: cfbss::sim::Dataset::read(path.as_ref()).map_err(err)?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.inner.write(path.as_ref()).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn phi(&self) -> Rows {
        to_rows(self.inner.phi.data())
    }

    fn r_bar(&self, k: usize) -> PyResult<Rows> {
        Ok(to_rows(self.episode(k)?.r_bar.data()))
    }

    fn g_bar(&self, k: usize) -> PyResult<Rows> {
        Ok(to_rows(self.episode(k)?.g_bar.data()))
    }

    fn noise_var(&self, k: usize) -> PyResult<f64> {
        Ok(self.episode(k)?.noise_var)
    }

    /// Per-frame support index lists of episode `k`.
    fn supports(&self, k: usize) -> PyResult<Vec<Vec<usize>>> {
        Ok(self.episode(k)?.supports.per_frame.clone())
    }
}

impl PyDataset {
    fn episode(&self, k: usize) -> PyResult<&cfbss::sim::EpisodeSample> {
        self.inner
            .episodes
            .get(k)
            .ok_or_else(|| PyValueError::new_err(format!("episode {k} out of range")))
    }
}

/// Coarse and (optionally) fine net of one variant.
#[pyclass(name = "Estimator", skip_from_py_object)]
#[derive(Clone)]
struct PyEstimator {
    variant: NetVariant,
    coarse: CoarseNetParams,
    fine: Option<FineNetParams>,
}

#[pymethods]
impl PyEstimator {
    /// Nets at their initialization, calibrated on `train`.
    #[staticmethod]
    #[pyo3(signature = (cfg, train, variant = "two_stage_cfbss"))]
    fn initial(cfg: &PyConfig, train: &PyDataset, variant: &str) -> PyResult<Self> {
        let v = self::variant(variant)?;
        let (c, f) = initial_nets(&cfg.inner, v, &train.inner).map_err(err)?;
        Ok(Self {
            variant: v,
            coarse: c,
            fine: v.has_fine().then_some(f),
        })
    }

    /// Layer-wise training on `train` with early stopping on `val`.
    #[staticmethod]
    #[pyo3(signature = (cfg, train, val, variant = "two_stage_cfbss"))]
    fn train(py: Python<'_>, cfg: &PyConfig, train: &PyDataset, val: &PyDataset, variant: &str) -> PyResult<Self> {
        let v = self::variant(variant)?;
        let data = CellData {
            train: train.inner.clone(),
            val: val.inner.clone(),
            test: val.inner.clone(),
        };
        let cfg = cfg.inner.clone();
        let t = py.detach(move || train_variant(&cfg, v, &data, None)).map_err(err)?;
        Ok(Self {
            variant: v,
            coarse: t.coarse,
            fine: t.fine,
        })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.variant.tag()
    }

    /// Estimates of every episode as lifted matrices.
    fn infer(&self, data: &PyDataset) -> PyResult<Vec<Rows>> {
        let est = infer(self.variant, &self.coarse, self.fine.as_ref(), &data.inner.episodes).map_err(err)?;
        Ok(est.iter().map(|e| to_rows(e.data())).collect())
    }

    /// Test NMSE in dB.
    fn nmse_db(&self, data: &PyDataset) -> PyResult<f64> {
        let eps = &data.inner.episodes;
        let est = infer(self.variant, &self.coarse, self.fine.as_ref(), eps).map_err(err)?;
        let truth: Vec<_> = eps.iter().map(|e| e.g_bar.clone()).collect();
        Ok(nmse(&truth, &est, NmseForm::NormRatio).map_err(err)?.db)
    }

    /// Mean per-layer error of the coarse and fine nets.
    fn layer_errors(&self, data: &PyDataset) -> PyResult<(Vec<f64>, Vec<f64>)> {
        layer_errors(self.variant, &self.coarse, self.fine.as_ref(), &data.inner.episodes).map_err(err)
    }
}

#[pymodule]
fn cfbss_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyEstimator>()?;
    m.add_function(wrap_pyfunction!(py_lift_operator, m)?)?;
    m.add_function(wrap_pyfunction!(py_lift_signal, m)?)?;
    m.add_function(wrap_pyfunction!(py_support_select, m)?)?;
    m.add_function(wrap_pyfunction!(bss, m)?)?;
    m.add_function(wrap_pyfunction!(gbss, m)?)?;
    m.add_function(wrap_pyfunction!(ista_l21, m)?)?;
    m.add_function(wrap_pyfunction!(nmse_db, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}

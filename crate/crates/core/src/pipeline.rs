//! On-disk artifacts of one experiment cell (a fixed `T` and SNR): datasets,
//! trained nets and the tuned baseline penalty.
//!
//! Layout under `<out>/T{T}_snr{SNR}/`: `train.ced`, `val.ced`, `test.ced`,
//! `<tag>.coarse.cep`, `<tag>.fine.cep`, `<tag>.train.log` and `ista.cfg`.

use std::path::{Path, PathBuf};

use log::{info, warn};
use sha2::{Digest, Sha256};

use crate::baselines::{ista_l21_solve, log_grid, SolverConfig};
use crate::checkpoint::{Checkpoint, NetParams};
use crate::config::{ExperimentConfig, KvMap};
use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck_tiny, GradcheckOptions, GradcheckReport, NetKind};
use crate::metrics::{nmse, NmseForm};
use crate::nets::{init_coarse, init_fine, CoarseNetParams, FineNetParams, NetVariant};
use crate::sim::{build_dataset, Dataset, SparsityConfig, Split};
use crate::train::{train_coarse, train_fine, TrainReport};

/// Name of the command-line binary, used in artifact hints.
pub const BIN: &str = "cfbss";

/// Baseline penalty grid.
pub const ISTA_GRID: (f64, f64, usize) = (1e-3, 1.0, 7);

/// Episodes used to calibrate initial thresholds.
const CALIB_EPISODES: usize = 100;

pub fn cell_label(sp: &SparsityConfig) -> String {
    format!("T{}_snr{}", sp.t, sp.snr_db)
}

/// Paths of one cell's artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellPaths {
    pub dir: PathBuf,
}

impl CellPaths {
    pub fn new(root: &Path, sp: &SparsityConfig) -> Self {
        Self {
            dir: root.join(cell_label(sp)),
        }
    }

    pub fn dataset(&self, split: Split) -> PathBuf {
        self.dir.join(split.file_name())
    }

    /// Coarse checkpoint used by `variant` (coarse-only shares the two-stage net).
    pub fn coarse(&self, variant: NetVariant) -> PathBuf {
        self.dir.join(format!("{}.coarse.cep", variant.coarse_source().tag()))
    }

    pub fn fine(&self, variant: NetVariant) -> PathBuf {
        self.dir.join(format!("{}.fine.cep", variant.tag()))
    }

    pub fn train_log(&self, variant: NetVariant) -> PathBuf {
        self.dir.join(format!("{}.train.log", variant.tag()))
    }

    pub fn ista(&self) -> PathBuf {
        self.dir.join("ista.cfg")
    }
}

/// The command that recreates an artifact of this cell; every key that
/// differs from the desk configuration is passed with `--set`.
pub fn command_hint(sub: &str, cfg: &ExperimentConfig, seed: u64, out: &Path, extra: &str) -> String {
    let desk = ExperimentConfig::desk().to_kv();
    let mut cmd = format!("{BIN} {sub} --seed {seed} --out {}", out.display());
    for (k, v) in cfg.to_kv().iter() {
        if k != "seed" && desk.get(k) != Some(v) {
            cmd.push_str(&format!(" --set {k}={v}"));
        }
    }
    if !extra.is_empty() {
        cmd.push(' ');
        cmd.push_str(extra);
    }
    cmd
}

fn require(path: &Path, hint: impl FnOnce() -> String) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: hint(),
        })
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone)]
pub struct CellData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl CellData {
    pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let sp = &cfg.sparsity;
        Ok(Self {
            train: build_dataset(sp, Split::Train, cfg.k_train, seed)?,
            val: build_dataset(sp, Split::Val, cfg.k_val, seed)?,
            test: build_dataset(sp, Split::Test, cfg.k_test, seed)?,
        })
    }

    /// Writes the three splits and returns `(path, sha256)` per file.
    pub fn write(&self, paths: &CellPaths) -> Result<Vec<(PathBuf, String)>> {
        [&self.train, &self.val, &self.test]
            .into_iter()
            .map(|d| {
                let p = paths.dataset(d.split);
                d.write(&p)?;
                let digest = file_digest(&p)?;
                Ok((p, digest))
            })
            .collect()
    }
}

/// Reads one split, checking it matches the configuration and seed.
pub fn load_split(paths: &CellPaths, split: Split, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Dataset> {
    let path = paths.dataset(split);
    require(&path, || command_hint("gen-data", cfg, seed, out, ""))?;
    let ds = Dataset::read(&path)?;
    if ds.config != cfg.sparsity || ds.seed != seed {
        return Err(Error::InvalidConfig(format!(
            "{} was generated for a different configuration or seed; rerun `{}`",
            path.display(),
            command_hint("gen-data", cfg, seed, out, "")
        )));
    }
    Ok(ds)
}

pub fn load_cell(paths: &CellPaths, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<CellData> {
    Ok(CellData {
        train: load_split(paths, Split::Train, cfg, seed, out)?,
        val: load_split(paths, Split::Val, cfg, seed, out)?,
        test: load_split(paths, Split::Test, cfg, seed, out)?,
    })
}

/// Gradient check of both nets on the tiny configuration; an error if
/// either fails.
pub fn gradient_audit(opts: &GradcheckOptions, seed: u64) -> Result<Vec<GradcheckReport>> {
    let reports = [NetKind::Coarse, NetKind::Fine]
        .into_iter()
        .map(|k| gradcheck_tiny(k, seed, 3, false, opts))
        .collect::<Result<Vec<_>>>()?;
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed()).map(|r| r.to_string()).collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(Error::GradientAudit(failed.join("; ")))
    }
}

/// Initialized nets for `variant`, thresholds calibrated on the first
/// training episodes.
pub fn initial_nets(cfg: &ExperimentConfig, variant: NetVariant, train: &Dataset) -> Result<(CoarseNetParams, FineNetParams)> {
    let calib = || train.episodes.iter().take(CALIB_EPISODES).map(|e| e.r_bar.view());
    let coarse_mode = variant.coarse_source().mode();
    let coarse = init_coarse(&train.phi, cfg.layers_coarse, cfg.coarse_p_min, cfg.coarse_p_max, coarse_mode, calib())?;
    let sp = &cfg.sparsity;
    let fine = init_fine(&train.phi, cfg.layers_fine, sp.s_c, sp.s_bar, variant.mode(), calib())?;
    Ok((coarse, fine))
}

#[derive(Debug, Clone)]
pub struct TrainedVariant {
    pub variant: NetVariant,
    pub coarse: CoarseNetParams,
    pub fine: Option<FineNetParams>,
    pub coarse_report: Option<TrainReport>,
    pub fine_report: Option<TrainReport>,
}

fn check_health(what: &str, report: &TrainReport) {
    if !report.healthy() {
        warn!(
            "{what}: unhealthy run (clamp fraction {:.4}, stage A failures {:?})",
            report.clamp_fraction(),
            report.stage_a_failures
        );
    }
}

/// Trains `variant`. A supplied coarse net is reused as-is.
pub fn train_variant(
    cfg: &ExperimentConfig,
    variant: NetVariant,
    data: &CellData,
    coarse: Option<CoarseNetParams>,
) -> Result<TrainedVariant> {
    let (c0, f0) = initial_nets(cfg, variant, &data.train)?;
    let (coarse, coarse_report) = match coarse {
        Some(c) => (c, None),
        None => {
            info!("{variant}: training coarse net");
            let (c, rep) = train_coarse(c0, variant.coarse_source(), &data.train.episodes, &data.val.episodes, &cfg.train)?;
            check_health(&format!("{variant} coarse"), &rep);
            (c, Some(rep))
        }
    };
    let (fine, fine_report) = if variant.has_fine() {
        info!("{variant}: training fine net");
        let (f, rep) = train_fine(&coarse, f0, variant, &data.train.episodes, &data.val.episodes, &cfg.train)?;
        check_health(&format!("{variant} fine"), &rep);
        (Some(f), Some(rep))
    } else {
        (None, None)
    };
    Ok(TrainedVariant {
        variant,
        coarse,
        fine,
        coarse_report,
        fine_report,
    })
}

/// Trains every variant, sharing coarse nets between variants with the same
/// coarse source.
pub fn train_all(cfg: &ExperimentConfig, variants: &[NetVariant], data: &CellData) -> Result<Vec<TrainedVariant>> {
    let mut done: Vec<TrainedVariant> = Vec::new();
    for &v in variants {
        let shared = done
            .iter()
            .find(|t| t.variant.coarse_source() == v.coarse_source())
            .map(|t| t.coarse.clone());
        let t = train_variant(cfg, v, data, shared)?;
        done.push(t);
    }
    Ok(done)
}

fn checkpoint_meta(cfg: &ExperimentConfig, seed: u64, report: Option<&TrainReport>) -> KvMap {
    let mut meta = KvMap::new();
    meta.set("config_digest", cfg.digest());
    meta.set("seed", seed);
    if let Some(r) = report {
        meta.set("steps", r.total_steps);
        meta.set("clamp_fraction", r.clamp_fraction());
        meta.set("healthy", r.healthy());
        meta.set("final_val_loss", r.final_val_loss);
    }
    meta
}

/// Writes checkpoints and training logs. A coarse net without a report
/// (reused from another variant) is not rewritten.
pub fn save_variant(paths: &CellPaths, cfg: &ExperimentConfig, seed: u64, t: &TrainedVariant) -> Result<()> {
    let mut log = String::new();
    if let Some(rep) = &t.coarse_report {
        let meta = checkpoint_meta(cfg, seed, Some(rep));
        Checkpoint::new(t.variant.coarse_source(), NetParams::Coarse(t.coarse.clone()), meta).write(&paths.coarse(t.variant))?;
        log.push_str("# coarse\n");
        log.push_str(&rep.log_text());
    }
    if let Some(f) = &t.fine {
        let meta = checkpoint_meta(cfg, seed, t.fine_report.as_ref());
        Checkpoint::new(t.variant, NetParams::Fine(f.clone()), meta).write(&paths.fine(t.variant))?;
        if let Some(rep) = &t.fine_report {
            log.push_str("# fine\n");
            log.push_str(&rep.log_text());
        }
    }
    if !log.is_empty() {
        let p = paths.train_log(t.variant);
        std::fs::write(&p, log).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn read_checkpoint(path: &Path, cfg: &ExperimentConfig, hint: impl FnOnce() -> String) -> Result<Checkpoint> {
    require(path, hint)?;
    let ck = Checkpoint::read(path)?;
    if ck.meta.get("config_digest") != Some(cfg.digest().as_str()) {
        warn!("{} was trained under a different configuration", path.display());
    }
    Ok(ck)
}

/// Loads the nets of `variant` from `paths`.
pub fn load_variant(
    paths: &CellPaths,
    cfg: &ExperimentConfig,
    variant: NetVariant,
    seed: u64,
    out: &Path,
) -> Result<(CoarseNetParams, Option<FineNetParams>)> {
    let hint = || command_hint("train", cfg, seed, out, &format!("--variant {}", variant.tag()));
    let coarse = read_checkpoint(&paths.coarse(variant), cfg, hint)?.into_coarse()?;
    let fine = if variant.has_fine() {
        Some(read_checkpoint(&paths.fine(variant), cfg, hint)?.into_fine()?)
    } else {
        None
    };
    Ok((coarse, fine))
}

/// Outcome of the baseline penalty search.
#[derive(Debug, Clone, PartialEq)]
pub struct IstaTuning {
    pub alpha: f64,
    /// `(alpha, validation NMSE dB)` per grid point.
    pub grid: Vec<(f64, f64)>,
}

impl IstaTuning {
    pub fn solver_config(cfg: &ExperimentConfig, alpha: f64) -> SolverConfig {
        SolverConfig {
            alpha,
            max_iters: cfg.ista_max_iters,
            tol: cfg.ista_tol,
            ..SolverConfig::default()
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut kv = KvMap::new();
        kv.set("alpha", self.alpha);
        for (i, (a, db)) in self.grid.iter().enumerate() {
            kv.set(&format!("grid{i}"), format!("{a}:{db}"));
        }
        std::fs::write(path, kv.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let kv = KvMap::load(path)?;
        let alpha = kv.require("alpha")?;
        let mut grid = Vec::new();
        while let Some(v) = kv.get(&format!("grid{}", grid.len())) {
            let pair = v
                .split_once(':')
                .and_then(|(a, d)| Some((a.parse().ok()?, d.parse().ok()?)))
                .ok_or_else(|| Error::format(path, format!("bad grid entry `{v}`")))?;
            grid.push(pair);
        }
        Ok(Self { alpha, grid })
    }
}

/// Picks the baseline penalty with the lowest validation NMSE on the first
/// `ista_grid_samples` validation episodes; ties go to the smaller penalty.
pub fn tune_ista(cfg: &ExperimentConfig, val: &Dataset) -> Result<IstaTuning> {
    let eps = &val.episodes[..cfg.ista_grid_samples.min(val.len())];
    let truth: Vec<_> = eps.iter().map(|e| e.g_bar.clone()).collect();
    let (lo, hi, points) = ISTA_GRID;
    let mut grid = Vec::with_capacity(points);
    for alpha in log_grid(lo, hi, points) {
        let sc = IstaTuning::solver_config(cfg, alpha);
        let est = eps
            .iter()
            .map(|e| ista_l21_solve(&e.phi, &e.r_bar, &sc).map(|o| o.estimate))
            .collect::<Result<Vec<_>>>()?;
        let db = nmse(&truth, &est, NmseForm::NormRatio)?.db;
        info!("ista alpha={alpha:.3e}: validation NMSE {db:.3} dB");
        grid.push((alpha, db));
    }
    let alpha = grid
        .iter()
        .fold(None::<(f64, f64)>, |best, &(a, db)| match best {
            Some((_, b)) if b <= db => best,
            _ => Some((a, db)),
        })
        .map(|(a, _)| a)
        .expect("non-empty grid");
    Ok(IstaTuning { alpha, grid })
}

pub fn load_ista(paths: &CellPaths, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<IstaTuning> {
    let p = paths.ista();
    require(&p, || command_hint("train", cfg, seed, out, "--variant ista_l21"))?;
    IstaTuning::read(&p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::with_sparsity(SparsityConfig::new(16, 2, 8, 3, 6, 3, 1, 20.0).unwrap());
        cfg.k_train = 12;
        cfg.k_val = 6;
        cfg.k_test = 5;
        cfg.layers_coarse = 2;
        cfg.layers_fine = 2;
        cfg.coarse_p_min = 1;
        cfg.coarse_p_max = 3;
        cfg.train.layerwise_steps_per_stage = 2;
        cfg.train.val_every = 1;
        cfg.train.train_batch = 4;
        cfg.ista_grid_samples = 3;
        cfg.ista_max_iters = 200;
        cfg
    }

    #[test]
    fn missing_artifacts_name_the_command() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let paths = CellPaths::new(dir.path(), &cfg.sparsity);
        let err = load_split(&paths, Split::Test, &cfg, 7, dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::MissingArtifact { .. }));
        assert!(msg.contains("cfbss gen-data --seed 7"), "{msg}");
        let err = load_variant(&paths, &cfg, NetVariant::TwoStage, 7, dir.path()).unwrap_err();
        assert!(err.to_string().contains("--variant two_stage_cfbss"), "{err}");
        assert!(load_ista(&paths, &cfg, 7, dir.path()).unwrap_err().to_string().contains("train"));
    }

    #[test]
    fn cell_round_trip_and_seed_check() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let paths = CellPaths::new(dir.path(), &cfg.sparsity);
        assert!(paths.dir.ends_with("T8_snr20"));
        let data = CellData::generate(&cfg, 7).unwrap();
        let digests = data.write(&paths).unwrap();
        let again = CellData::generate(&cfg, 7).unwrap().write(&paths).unwrap();
        assert_eq!(digests, again);
        let back = load_cell(&paths, &cfg, 7, dir.path()).unwrap();
        assert_eq!(back.test.episodes.len(), 5);
        assert!(load_split(&paths, Split::Val, &cfg, 8, dir.path()).is_err());
    }

    #[test]
    fn trained_variants_round_trip_through_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let paths = CellPaths::new(dir.path(), &cfg.sparsity);
        let data = CellData::generate(&cfg, 1).unwrap();
        let trained = train_all(&cfg, &[NetVariant::TwoStage, NetVariant::CoarseOnly], &data).unwrap();
        assert_eq!(trained[0].coarse, trained[1].coarse);
        assert!(trained[1].coarse_report.is_none() && trained[1].fine.is_none());
        for t in &trained {
            save_variant(&paths, &cfg, 1, t).unwrap();
        }
        let (c, f) = load_variant(&paths, &cfg, NetVariant::TwoStage, 1, dir.path()).unwrap();
        assert_eq!(c, trained[0].coarse);
        assert_eq!(f.as_ref(), trained[0].fine.as_ref());
        let (c2, f2) = load_variant(&paths, &cfg, NetVariant::CoarseOnly, 1, dir.path()).unwrap();
        assert_eq!(c2, c);
        assert!(f2.is_none());
        assert!(paths.train_log(NetVariant::TwoStage).exists());
    }

    #[test]
    fn ista_tuning_picks_grid_minimum_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let data = CellData::generate(&cfg, 2).unwrap();
        let t = tune_ista(&cfg, &data.val).unwrap();
        assert_eq!(t.grid.len(), ISTA_GRID.2);
        let min = t.grid.iter().map(|g| g.1).fold(f64::INFINITY, f64::min);
        assert_eq!(t.grid.iter().find(|g| g.1 == min).unwrap().0, t.alpha);
        let p = dir.path().join("ista.cfg");
        t.write(&p).unwrap();
        assert_eq!(IstaTuning::read(&p).unwrap(), t);
    }

    #[test]
    fn audit_passes_and_catches_corruption() {
        let reports = gradient_audit(&GradcheckOptions::default(), 0).unwrap();
        assert_eq!(reports.len(), 2);
        let bad = GradcheckOptions {
            corrupt_vjp: true,
            ..GradcheckOptions::default()
        };
        assert!(matches!(gradient_audit(&bad, 0), Err(Error::GradientAudit(_))));
    }
}

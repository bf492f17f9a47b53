//! Benchmark cells and sweeps: every scheme is run on a cell's test split,
//! scored by NMSE, ASE and median wall time, and written as CSV plus
//! gnuplot `.dat` series.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::baselines::{ista_l21_solve, oracle_episode, SolverConfig};
use crate::config::{ExperimentConfig, KvMap};
use crate::error::{Error, Result};
use crate::infer::infer;
use crate::lift::{ComplexMatrix, LiftedMatrix};
use crate::metrics::{ase, channel_frames, nmse, sample_nmse_db, NmseForm, NmseSummary, NMSE_FLOOR_DB};
use crate::nets::{CoarseNetParams, FineNetParams, NetVariant};
use crate::pipeline::{load_ista, load_split, load_variant, CellPaths, IstaTuning};
use crate::sim::{Dataset, Split};

pub const CSV_VERSION: u32 = 1;
pub const CSV_COLUMNS: [&str; 9] = ["scheme", "T", "snr_db", "nmse_db", "ase", "wall_time_s", "K", "seed", "config_digest"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Net(NetVariant),
    IstaL21,
    OracleLs,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Net(NetVariant::TwoStage),
        Scheme::Net(NetVariant::CoarseOnly),
        Scheme::Net(NetVariant::NoSupportSelection),
        Scheme::Net(NetVariant::ElementwiseSs),
        Scheme::IstaL21,
        Scheme::OracleLs,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Net(v) => v.tag(),
            Scheme::IstaL21 => "ista_l21",
            Scheme::OracleLs => "oracle_ls",
        }
    }

    /// Schemes for a configuration: its net variants, then both baselines.
    pub fn for_config(cfg: &ExperimentConfig) -> Vec<Scheme> {
        let mut out: Vec<Scheme> = cfg.variants.iter().map(|&v| Scheme::Net(v)).collect();
        out.extend([Scheme::IstaL21, Scheme::OracleLs]);
        out
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ista_l21" | "ista" => Ok(Scheme::IstaL21),
            "oracle_ls" | "oracle" => Ok(Scheme::OracleLs),
            other => other.parse().map(Scheme::Net),
        }
    }
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub scheme: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub snr_db: f64,
    pub nmse_db: f64,
    /// bits/s/Hz.
    pub ase: f64,
    pub wall_time_s: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub config_digest: String,
}

/// Which NMSE enters the ASE expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AseNmse {
    /// The test-set average, as reported.
    #[default]
    Dataset,
    /// Each episode's own NMSE.
    PerSample,
}

impl AseNmse {
    pub fn label(self) -> &'static str {
        match self {
            AseNmse::Dataset => "dataset",
            AseNmse::PerSample => "per_sample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub form: NmseForm,
    pub ase_nmse: AseNmse,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            form: NmseForm::NormRatio,
            ase_nmse: AseNmse::Dataset,
        }
    }
}

/// Trained nets and tuned baseline of one cell.
#[derive(Debug, Clone, Default)]
pub struct CellModels {
    pub nets: Vec<(NetVariant, CoarseNetParams, Option<FineNetParams>)>,
    pub ista_alpha: Option<f64>,
}

impl CellModels {
    fn net(&self, v: NetVariant) -> Result<(&CoarseNetParams, Option<&FineNetParams>)> {
        self.nets
            .iter()
            .find(|(n, _, _)| *n == v)
            .map(|(_, c, f)| (c, f.as_ref()))
            .ok_or_else(|| Error::InvalidParameter(format!("no trained nets for {v}")))
    }
}

/// Loads what `schemes` need from a cell directory.
pub fn load_models(paths: &CellPaths, cfg: &ExperimentConfig, schemes: &[Scheme], seed: u64, out: &Path) -> Result<CellModels> {
    let mut models = CellModels::default();
    for s in schemes {
        match *s {
            Scheme::Net(v) => {
                let (c, f) = load_variant(paths, cfg, v, seed, out)?;
                models.nets.push((v, c, f));
            }
            Scheme::IstaL21 => models.ista_alpha = Some(load_ista(paths, cfg, seed, out)?.alpha),
            Scheme::OracleLs => {}
        }
    }
    Ok(models)
}

/// Estimates of `scheme` for every test episode.
pub fn run_scheme(scheme: Scheme, models: &CellModels, cfg: &ExperimentConfig, test: &Dataset) -> Result<Vec<LiftedMatrix>> {
    match scheme {
        Scheme::Net(v) => {
            let (c, f) = models.net(v)?;
            infer(v, c, f, &test.episodes)
        }
        Scheme::IstaL21 => {
            let alpha = models
                .ista_alpha
                .ok_or_else(|| Error::InvalidParameter("no tuned baseline penalty".into()))?;
            let sc: SolverConfig = IstaTuning::solver_config(cfg, alpha);
            test.episodes
                .iter()
                .map(|e| ista_l21_solve(&e.phi, &e.r_bar, &sc).map(|o| o.estimate))
                .collect()
        }
        Scheme::OracleLs => test
            .episodes
            .iter()
            .map(|e| oracle_episode(&e.phi, &e.z_bar_frames, &e.supports.per_frame))
            .collect(),
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Timings of repeated inference: per-repetition inner times and the outer
/// time around all repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub reps: Vec<f64>,
    pub outer: f64,
}

impl Timing {
    pub fn median(&self) -> f64 {
        median(&self.reps)
    }

    /// Inner timers must fit inside the outer one.
    pub fn consistent(&self) -> bool {
        self.reps.iter().all(|&t| t >= 0.0) && self.reps.iter().sum::<f64>() <= self.outer
    }
}

/// Runs `f` `reps` times, keeping the last value.
pub fn timed<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, Timing)> {
    if reps == 0 {
        return Err(Error::InvalidParameter("timing needs at least one repetition".into()));
    }
    let outer = Instant::now();
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        let t0 = Instant::now();
        let v = f()?;
        times.push(t0.elapsed().as_secs_f64());
        last = Some(v);
    }
    let timing = Timing {
        reps: times,
        outer: outer.elapsed().as_secs_f64(),
    };
    if !timing.consistent() {
        return Err(Error::InvalidParameter(format!("inconsistent timers: {timing:?}")));
    }
    Ok((last.expect("reps >= 1"), timing))
}

/// Spatial channels of every test episode and their noise variances.
#[derive(Debug, Clone)]
pub struct TestChannels {
    pub frames: Vec<Vec<ComplexMatrix>>,
    pub noise_var: Vec<f64>,
}

impl TestChannels {
    pub fn new(test: &Dataset) -> Result<Self> {
        let frames = test
            .episodes
            .iter()
            .map(|e| channel_frames(&e.g_bar, e.z_bar_frames.len()))
            .collect::<Result<_>>()?;
        Ok(Self {
            frames,
            noise_var: test.episodes.iter().map(|e| e.noise_var).collect(),
        })
    }

    /// ASE averaged over every frame of every episode; `nmse_db[k]` is the
    /// NMSE used for episode `k`.
    pub fn ase(&self, nmse_db: impl Fn(usize) -> f64) -> Result<f64> {
        let mut sum = 0.0;
        for (k, (frames, &nv)) in self.frames.iter().zip(&self.noise_var).enumerate() {
            sum += ase(frames, nmse_db(k), nv)?;
        }
        Ok(sum / self.frames.len() as f64)
    }

    /// ASE with perfect channel knowledge.
    pub fn ase_bound(&self) -> Result<f64> {
        self.ase(|_| f64::NEG_INFINITY)
    }
}

/// Scores of one scheme on one cell.
#[derive(Debug, Clone)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub record: MetricRecord,
    pub nmse: NmseSummary,
    pub timing: Timing,
}

fn score(
    test: &Dataset,
    channels: &TestChannels,
    estimates: &[LiftedMatrix],
    opts: EvalOptions,
) -> Result<(NmseSummary, f64)> {
    let truth: Vec<LiftedMatrix> = test.episodes.iter().map(|e| e.g_bar.clone()).collect();
    let summary = nmse(&truth, estimates, opts.form)?;
    let ase_value = match opts.ase_nmse {
        AseNmse::Dataset => channels.ase(|_| summary.db)?,
        AseNmse::PerSample => {
            let per = truth
                .iter()
                .zip(estimates)
                .map(|(t, e)| sample_nmse_db(t, e, opts.form).map(|v| v.unwrap_or(NMSE_FLOOR_DB)))
                .collect::<Result<Vec<_>>>()?;
            channels.ase(|k| per[k])?
        }
    };
    Ok((summary, ase_value))
}

/// Evaluates `schemes` on one cell. Timed inference runs serially; scoring
/// runs on worker threads.
pub fn evaluate_cell(
    cfg: &ExperimentConfig,
    seed: u64,
    test: &Dataset,
    models: &CellModels,
    schemes: &[Scheme],
    opts: EvalOptions,
) -> Result<Vec<SchemeResult>> {
    let channels = TestChannels::new(test)?;
    let mut runs = Vec::with_capacity(schemes.len());
    for &s in schemes {
        let (est, timing) = timed(cfg.timing_reps, || run_scheme(s, models, cfg, test))?;
        info!("{s}: median inference {:.4} s", timing.median());
        runs.push((s, est, timing));
    }
    let scores: Vec<Result<(NmseSummary, f64)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = runs
            .iter()
            .map(|(_, est, _)| scope.spawn(|| score(test, &channels, est, opts)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("scoring thread")).collect()
    });
    let digest = cfg.digest();
    runs.into_iter()
        .zip(scores)
        .map(|((scheme, _, timing), sc)| {
            let (summary, ase_value) = sc?;
            Ok(SchemeResult {
                scheme,
                record: MetricRecord {
                    scheme: scheme.tag().to_string(),
                    t: cfg.sparsity.t,
                    snr_db: cfg.sparsity.snr_db,
                    nmse_db: summary.db,
                    ase: ase_value,
                    wall_time_s: timing.median(),
                    k: summary.count,
                    seed,
                    config_digest: digest.clone(),
                },
                nmse: summary,
                timing,
            })
        })
        .collect()
}

/// The swept parameter and its values.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    PilotLength(Vec<usize>),
    Snr(Vec<f64>),
}

impl SweepAxis {
    pub fn parse(name: &str, values: &str) -> Result<Self> {
        let items = values.split(',').map(str::trim).filter(|s| !s.is_empty());
        let bad = |v: &str| Error::InvalidConfig(format!("bad {name} value `{v}`"));
        match name {
            "t" | "T" | "pilot" => Ok(SweepAxis::PilotLength(
                items.map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?,
            )),
            "snr" | "snr_db" => Ok(SweepAxis::Snr(items.map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?)),
            other => Err(Error::InvalidConfig(format!("unknown sweep axis `{other}` (use t or snr)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::PilotLength(_) => "T",
            SweepAxis::Snr(_) => "snr",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::PilotLength(v) => v.len(),
            SweepAxis::Snr(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The configuration of point `i`.
    pub fn apply(&self, base: &ExperimentConfig, i: usize) -> Result<ExperimentConfig> {
        let mut kv = base.to_kv();
        match self {
            SweepAxis::PilotLength(v) => kv.set("T", v[i]),
            SweepAxis::Snr(v) => kv.set("snr_db", v[i]),
        }
        ExperimentConfig::from_kv(&kv)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub base: ExperimentConfig,
    pub axis: SweepAxis,
    pub schemes: Vec<Scheme>,
    /// Root holding one directory per cell; results are written here too.
    pub root: PathBuf,
    pub seed: u64,
    pub opts: EvalOptions,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.axis.is_empty() {
            return Err(Error::InvalidConfig("sweep axis is empty".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("no schemes to run".into()));
        }
        Ok(())
    }

    pub fn stem(&self) -> PathBuf {
        self.root.join(format!("sweep_{}", self.axis.name()))
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub records: Vec<MetricRecord>,
    pub csv: PathBuf,
    pub meta: PathBuf,
    pub dat: Vec<PathBuf>,
}

/// Runs every (axis point, scheme) cell in order and writes the results.
pub fn run_sweep(plan: &ExperimentPlan) -> Result<SweepOutput> {
    plan.validate()?;
    let mut records = Vec::with_capacity(plan.axis.len() * plan.schemes.len());
    for i in 0..plan.axis.len() {
        let cfg = plan.axis.apply(&plan.base, i)?;
        let paths = CellPaths::new(&plan.root, &cfg.sparsity);
        let test = load_split(&paths, Split::Test, &cfg, plan.seed, &plan.root)?;
        let models = load_models(&paths, &cfg, &plan.schemes, plan.seed, &plan.root)?;
        info!("cell {}", paths.dir.display());
        for r in evaluate_cell(&cfg, plan.seed, &test, &models, &plan.schemes, plan.opts)? {
            records.push(r.record);
        }
    }
    let stem = plan.stem();
    let csv = stem.with_extension("csv");
    let meta = stem.with_extension("meta");
    write_csv(&csv, &records)?;
    write_meta(&meta, plan)?;
    let dat = write_dat(&stem, &records)?;
    Ok(SweepOutput { records, csv, meta, dat })
}

fn write_meta(path: &Path, plan: &ExperimentPlan) -> Result<()> {
    let mut kv = KvMap::new();
    kv.set("csv_version", CSV_VERSION);
    kv.set("columns", CSV_COLUMNS.join(","));
    kv.set("axis", plan.axis.name());
    kv.set("nmse_form", plan.opts.form.label());
    kv.set("ase_nmse", plan.opts.ase_nmse.label());
    kv.set("seed", plan.seed);
    let kv = kv.merged(&plan.base.to_kv());
    std::fs::write(path, kv.to_text()).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn write_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    if records.is_empty() {
        w.write_record(CSV_COLUMNS).map_err(|e| Error::format(path, e.to_string()))?;
    }
    for r in records {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if header != CSV_COLUMNS {
        return Err(Error::format(path, format!("unexpected columns {header:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Swept quantity of a record set: `T` if it varies, else SNR.
fn x_of(records: &[MetricRecord]) -> (&'static str, fn(&MetricRecord) -> f64) {
    let ts: BTreeSet<usize> = records.iter().map(|r| r.t).collect();
    if ts.len() > 1 {
        ("T", |r| r.t as f64)
    } else {
        ("snr_db", |r| r.snr_db)
    }
}

fn scheme_order(records: &[MetricRecord]) -> Vec<&str> {
    let mut seen = Vec::new();
    for r in records {
        if !seen.contains(&r.scheme.as_str()) {
            seen.push(r.scheme.as_str());
        }
    }
    seen
}

/// One gnuplot file per scheme, `<stem>_<scheme>.dat`: block 0 is NMSE and
/// block 1 is ASE against the swept quantity.
pub fn write_dat(stem: &Path, records: &[MetricRecord]) -> Result<Vec<PathBuf>> {
    let (x_name, x) = x_of(records);
    let mut out = Vec::new();
    for scheme in scheme_order(records) {
        let rows: Vec<&MetricRecord> = records.iter().filter(|r| r.scheme == scheme).collect();
        let mut text = format!("# scheme {scheme}\n# index 0: {x_name} nmse_db\n");
        for r in &rows {
            text.push_str(&format!("{} {}\n", x(r), r.nmse_db));
        }
        text.push_str(&format!("\n\n# index 1: {x_name} ase\n"));
        for r in &rows {
            text.push_str(&format!("{} {}\n", x(r), r.ase));
        }
        let name = format!("{}_{scheme}.dat", stem.file_name().and_then(|s| s.to_str()).unwrap_or("results"));
        let path = stem.with_file_name(name);
        ensure_parent(&path)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        out.push(path);
    }
    Ok(out)
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (s, w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Aligned text tables: all records, then NMSE and ASE pivoted by scheme
/// against the swept quantity.
pub fn render_report(records: &[MetricRecord]) -> String {
    let header: Vec<String> = CSV_COLUMNS.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.scheme.clone(),
                r.t.to_string(),
                format!("{}", r.snr_db),
                format!("{:.3}", r.nmse_db),
                format!("{:.3}", r.ase),
                format!("{:.4}", r.wall_time_s),
                r.k.to_string(),
                r.seed.to_string(),
                r.config_digest.clone(),
            ]
        })
        .collect();
    let mut out = table(&header, &rows);
    let (x_name, x) = x_of(records);
    let mut xs: Vec<f64> = records.iter().map(x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for (title, value) in [("NMSE (dB)", (|r: &MetricRecord| r.nmse_db) as fn(&MetricRecord) -> f64), ("ASE (bits/s/Hz)", |r| r.ase)] {
        let mut header = vec![format!("{title} / {x_name}")];
        header.extend(xs.iter().map(|v| format!("{v}")));
        let rows: Vec<Vec<String>> = scheme_order(records)
            .into_iter()
            .map(|s| {
                let mut row = vec![s.to_string()];
                row.extend(xs.iter().map(|&xv| {
                    records
                        .iter()
                        .find(|r| r.scheme == s && x(r) == xv)
                        .map_or("-".to_string(), |r| format!("{:.3}", value(r)))
                }));
                row
            })
            .collect();
        out.push('\n');
        out.push_str(&table(&header, &rows));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(scheme: &str, t: usize, snr: f64, nmse_db: f64) -> MetricRecord {
        MetricRecord {
            scheme: scheme.into(),
            t,
            snr_db: snr,
            nmse_db,
            ase: 10.0 - nmse_db / 7.0,
            wall_time_s: 0.1 / 3.0,
            k: 500,
            seed: 7,
            config_digest: "abc123".into(),
        }
    }

    #[test]
    fn scheme_tags_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.tag().parse::<Scheme>().unwrap(), s);
        }
        assert!("nope".parse::<Scheme>().is_err());
        let mut cfg = ExperimentConfig::desk();
        cfg.variants = NetVariant::ALL.to_vec();
        assert_eq!(Scheme::for_config(&cfg), Scheme::ALL.to_vec());
    }

    #[test]
    fn csv_round_trip_preserves_records_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            rec("two_stage_cfbss", 16, 30.0, -12.345678901234567),
            rec("ista_l21", 16, 30.0, -8.1),
            rec("two_stage_cfbss", 24, 30.0, -14.0 / 3.0),
        ];
        let p = dir.path().join("r.csv");
        write_csv(&p, &records).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("scheme,T,snr_db,nmse_db,ase,wall_time_s,K,seed,config_digest\n"));
        let back = read_csv(&p).unwrap();
        assert_eq!(back, records);
        assert_eq!(render_report(&back), render_report(&records));
        let report = render_report(&records);
        assert!(report.contains("NMSE (dB) / T"));
        assert!(report.lines().any(|l| l.starts_with("ista_l21") && l.ends_with('-')));
    }

    #[test]
    fn dat_series_per_scheme() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<_> = [10.0, 20.0, 30.0]
            .into_iter()
            .flat_map(|s| [rec("a", 24, s, -s / 2.0), rec("b", 24, s, -s / 3.0)])
            .collect();
        let files = write_dat(&dir.path().join("sweep_snr"), &records).unwrap();
        assert_eq!(files.len(), 2);
        assert!(files[0].ends_with("sweep_snr_a.dat"));
        let text = std::fs::read_to_string(&files[1]).unwrap();
        let blocks: Vec<&str> = text.split("\n\n\n").collect();
        assert_eq!(blocks.len(), 2);
        let data: Vec<&str> = blocks[0].lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data, ["10 -3.3333333333333335", "20 -6.666666666666667", "30 -10"]);
    }

    #[test]
    fn sweep_axis_parsing_and_application() {
        let a = SweepAxis::parse("snr", "10, 20,30").unwrap();
        assert_eq!(a, SweepAxis::Snr(vec![10.0, 20.0, 30.0]));
        let cfg = a.apply(&ExperimentConfig::desk(), 1).unwrap();
        assert_eq!(cfg.sparsity.snr_db, 20.0);
        let t = SweepAxis::parse("t", "16,32").unwrap();
        assert_eq!(t.apply(&ExperimentConfig::desk(), 1).unwrap().sparsity.t, 32);
        assert!(SweepAxis::parse("x", "1").is_err());
        assert!(SweepAxis::parse("t", "1.5").is_err());
    }

    #[test]
    fn timing_and_median() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let mut n = 0;
        let (v, t) = timed(5, || {
            n += 1;
            Ok(n)
        })
        .unwrap();
        assert_eq!((v, t.reps.len()), (5, 5));
        assert!(t.consistent());
        assert!(!Timing { reps: vec![1.0, 1.0], outer: 1.5 }.consistent());
        assert!(timed(0, || Ok(())).is_err());
    }
}

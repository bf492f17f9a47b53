//! Synthetic angular-domain channels with intra-frame, small-scale and
//! large-scale inter-frame support structure, pilots, noisy observations and
//! persisted datasets.

use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::config::KvMap;
use crate::container::{ContainerReader, ContainerWriter};
use crate::error::{Error, Result};
use crate::lift::{lift_operator, lift_signal, ComplexMatrix, LiftedMatrix};

pub const DATASET_MAGIC: &str = "CED1";
pub const DATASET_VERSION: u32 = 1;

/// Infeasible support draws are retried this many times before giving up.
pub const SUPPORT_RETRY_CAP: usize = 100;

/// Dimensions, sparsity bounds and noise level of one simulated system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityConfig {
    /// Transmit antennas (complex rows of each channel frame).
    pub m: usize,
    /// Receive antennas (columns per frame).
    pub n: usize,
    /// Pilot length.
    pub t: usize,
    /// Frames per episode.
    pub frames: usize,
    /// Exclusive upper bound on per-frame support size.
    pub s_bar: usize,
    /// Lower bound on adjacent-frame support overlap.
    pub s_c: usize,
    /// Size of the support common to all frames.
    pub s_common: usize,
    /// Signal-to-noise ratio; `+inf` gives noiseless observations.
    pub snr_db: f64,
}

impl SparsityConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: usize,
        n: usize,
        t: usize,
        frames: usize,
        s_bar: usize,
        s_c: usize,
        s_common: usize,
        snr_db: f64,
    ) -> Result<Self> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if n == 0 || t == 0 || frames == 0 {
            return fail(format!("N, T and L must be positive (N={n}, T={t}, L={frames})"));
        }
        if n >= m {
            return fail(format!("need N < M, got N={n} M={m}"));
        }
        if t >= m {
            return fail(format!("need T < M, got T={t} M={m}"));
        }
        if s_bar < 3 || s_bar - 1 > m {
            return fail(format!("s_bar={s_bar} must satisfy 3 <= s_bar <= M+1"));
        }
        // some (size, overlap) draw must be feasible
        if s_c > s_bar - 1 {
            return fail(format!(
                "overlap bound s_c={s_c} exceeds the largest frame support s_bar-1={}",
                s_bar - 1
            ));
        }
        if s_common > s_c {
            return fail(format!("s_common={s_common} must not exceed s_c={s_c}"));
        }
        if snr_db.is_nan() {
            return fail("snr_db is NaN".into());
        }
        Ok(Self {
            m,
            n,
            t,
            frames,
            s_bar,
            s_c,
            s_common,
            snr_db,
        })
    }

    /// Columns of the concatenated channel, `N * L`.
    pub fn total_cols(&self) -> usize {
        self.n * self.frames
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("M", self.m);
        kv.set("N", self.n);
        kv.set("T", self.t);
        kv.set("L", self.frames);
        kv.set("s_bar", self.s_bar);
        kv.set("s_c", self.s_c);
        kv.set("s_common", self.s_common);
        kv.set("snr_db", self.snr_db);
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        Self::new(
            kv.require("M")?,
            kv.require("N")?,
            kv.require("T")?,
            kv.require("L")?,
            kv.require("s_bar")?,
            kv.require("s_c")?,
            kv.require("s_common")?,
            kv.require("snr_db")?,
        )
    }
}

/// Per-frame supports plus the support shared by all frames. Indices are
/// 0-based and sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportSequence {
    pub common: Vec<usize>,
    pub per_frame: Vec<Vec<usize>>,
}

impl SupportSequence {
    /// Checks every structural invariant against `cfg`; returns the violations.
    pub fn violations(&self, cfg: &SparsityConfig) -> Vec<String> {
        let mut out = Vec::new();
        if self.common.len() != cfg.s_common {
            out.push(format!("|common| = {} != {}", self.common.len(), cfg.s_common));
        }
        if self.per_frame.len() != cfg.frames {
            out.push(format!("{} frames, expected {}", self.per_frame.len(), cfg.frames));
        }
        for (i, f) in self.per_frame.iter().enumerate() {
            if f.len() + 3 < cfg.s_bar || f.len() + 1 > cfg.s_bar {
                out.push(format!("frame {i}: size {} outside [s_bar-3, s_bar-1]", f.len()));
            }
            if f.iter().any(|&j| j >= cfg.m) || f.windows(2).any(|w| w[0] >= w[1]) {
                out.push(format!("frame {i}: indices not sorted/unique/in range"));
            }
            if !self.common.iter().all(|j| f.binary_search(j).is_ok()) {
                out.push(format!("frame {i}: common support not contained"));
            }
            if i > 0 {
                let k = intersection_size(&self.per_frame[i - 1], f);
                if k < cfg.s_c || k > cfg.s_c + 1 {
                    out.push(format!("frames {}-{i}: overlap {k} outside [s_c, s_c+1]", i - 1));
                }
            }
        }
        out
    }
}

pub(crate) fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|j| b.binary_search(j).is_ok()).count()
}

/// Draw a support sequence.
///
/// Frame 1 is the common set plus fresh indices up to a size drawn from
/// `{s_bar-3, ..., s_bar-1}`. Every later frame draws an overlap `k` from
/// `{s_c, s_c+1}` and a size `n_i`, then keeps the common set, `k - S` other
/// members of the previous frame and `n_i - k` indices outside it.
pub fn sample_support_sequence<R: Rng + ?Sized>(
    cfg: &SparsityConfig,
    rng: &mut R,
) -> Result<SupportSequence> {
    let m = cfg.m;
    let s = cfg.s_common;
    let common = sorted(sample_indices(rng, m, s).into_vec());

    let size_lo = cfg.s_bar - 3;
    let size_hi = cfg.s_bar - 1;

    let n1 = draw_with_retry(rng, |rng| {
        let n = rng.random_range(size_lo..=size_hi);
        (n >= s).then_some(n)
    })
    .ok_or_else(|| {
        Error::Infeasible(format!("frame size below common support size {s}"))
    })?;
    let mut first = common.clone();
    first.extend(pick_outside(rng, m, &common, n1 - s));
    let mut per_frame = vec![sorted(first)];

    for i in 1..cfg.frames {
        let prev = &per_frame[i - 1];
        let (k, n_i) = draw_with_retry(rng, |rng| {
            let k = rng.random_range(cfg.s_c..=cfg.s_c + 1);
            let n_i = rng.random_range(size_lo..=size_hi);
            let feasible = k <= prev.len() && n_i >= k && n_i - k <= m - prev.len();
            feasible.then_some((k, n_i))
        })
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "no feasible (overlap, size) draw for frame {} after {SUPPORT_RETRY_CAP} tries",
                i + 1
            ))
        })?;
        let carry: Vec<usize> = prev.iter().copied().filter(|j| common.binary_search(j).is_err()).collect();
        let mut next = common.clone();
        for idx in sample_indices(rng, carry.len(), k - s) {
            next.push(carry[idx]);
        }
        next.extend(pick_outside(rng, m, prev, n_i - k));
        per_frame.push(sorted(next));
    }
    Ok(SupportSequence { common, per_frame })
}

fn draw_with_retry<R: Rng + ?Sized, T>(rng: &mut R, mut f: impl FnMut(&mut R) -> Option<T>) -> Option<T> {
    (0..SUPPORT_RETRY_CAP).find_map(|_| f(rng))
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

/// `count` distinct indices from `0..m` that are not in the sorted `exclude`.
fn pick_outside<R: Rng + ?Sized>(rng: &mut R, m: usize, exclude: &[usize], count: usize) -> Vec<usize> {
    let pool: Vec<usize> = (0..m).filter(|j| exclude.binary_search(j).is_err()).collect();
    sample_indices(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Concatenated angular channel `[S^1, ..., S^L]` (M x NL) with CN(0, 1)
/// entries on each frame's support rows and exact zeros elsewhere.
pub fn sample_channel<R: Rng + ?Sized>(
    supports: &SupportSequence,
    cfg: &SparsityConfig,
    rng: &mut R,
) -> ComplexMatrix {
    let half = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid normal");
    let mut re = Array2::zeros((cfg.m, cfg.total_cols()));
    let mut im = Array2::zeros((cfg.m, cfg.total_cols()));
    for (i, frame) in supports.per_frame.iter().enumerate() {
        for &j in frame {
            for c in i * cfg.n..(i + 1) * cfg.n {
                re[[j, c]] = half.sample(rng);
                im[[j, c]] = half.sample(rng);
            }
        }
    }
    ComplexMatrix::new(re, im).expect("same shape")
}

/// Pilot matrix `X` (M x T) with real and imaginary parts uniform on
/// `[-sqrt(1/M), sqrt(1/M)]`.
pub fn sample_pilot<R: Rng + ?Sized>(cfg: &SparsityConfig, rng: &mut R) -> ComplexMatrix {
    let b = (1.0 / cfg.m as f64).sqrt();
    let u = Uniform::new_inclusive(-b, b).expect("valid bounds");
    ComplexMatrix::from_fn(cfg.m, cfg.t, |_, _| (u.sample(rng), u.sample(rng)))
}

/// Lifted sensing operator for `Phi = X^H V`.
pub fn measurement_operator(x: &ComplexMatrix, v: &ComplexMatrix) -> Result<LiftedMatrix> {
    if v.rows() != v.cols() || x.rows() != v.rows() {
        return Err(Error::ShapeMismatch(format!(
            "pilot is {}x{}, transform is {}x{}",
            x.rows(),
            x.cols(),
            v.rows(),
            v.cols()
        )));
    }
    Ok(lift_operator(&x.adjoint().matmul(v)?))
}

/// Noisy lifted observation of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub r_bar: LiftedMatrix,
    pub z_bar_frames: Vec<LiftedMatrix>,
    pub noise_var: f64,
}

/// `R = Phi G + N` with complex noise of variance `P_sig * 10^(-snr/10)`,
/// where `P_sig` is the mean per-entry power of `Phi G` for this episode.
pub fn observe<R: Rng + ?Sized>(
    phi: &LiftedMatrix,
    g: &ComplexMatrix,
    cfg: &SparsityConfig,
    rng: &mut R,
) -> Result<Observation> {
    let clean = apply_operator(phi, g)?;
    let entries = (clean.nrows() / 2 * clean.ncols()).max(1) as f64;
    let p_sig = clean.iter().map(|x| x * x).sum::<f64>() / entries;
    let noise_var = if cfg.snr_db == f64::INFINITY {
        0.0
    } else {
        p_sig * 10f64.powf(-cfg.snr_db / 10.0)
    };
    finish_observation(clean, noise_var, cfg.n, rng)
}

/// Like [`observe`] but with an explicit complex noise variance.
pub fn observe_with_variance<R: Rng + ?Sized>(
    phi: &LiftedMatrix,
    g: &ComplexMatrix,
    noise_var: f64,
    frame_cols: usize,
    rng: &mut R,
) -> Result<Observation> {
    if noise_var < 0.0 || noise_var.is_nan() {
        return Err(Error::InvalidParameter(format!("noise variance {noise_var}")));
    }
    let clean = apply_operator(phi, g)?;
    finish_observation(clean, noise_var, frame_cols, rng)
}

fn apply_operator(phi: &LiftedMatrix, g: &ComplexMatrix) -> Result<Array2<f64>> {
    let g_bar = lift_signal(g);
    if phi.data().ncols() != g_bar.data().nrows() {
        return Err(Error::ShapeMismatch(format!(
            "operator has {} columns, signal has {} rows",
            phi.data().ncols(),
            g_bar.data().nrows()
        )));
    }
    Ok(phi.data().dot(g_bar.data()))
}

fn finish_observation<R: Rng + ?Sized>(
    mut r: Array2<f64>,
    noise_var: f64,
    frame_cols: usize,
    rng: &mut R,
) -> Result<Observation> {
    if noise_var > 0.0 {
        let d = Normal::new(0.0, (noise_var / 2.0).sqrt()).expect("valid normal");
        r.iter_mut().for_each(|x| *x += d.sample(rng));
    }
    if frame_cols == 0 || r.ncols() % frame_cols != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} columns do not split into frames of {frame_cols}",
            r.ncols()
        )));
    }
    let z_bar_frames = split_frames(&r, frame_cols);
    Ok(Observation {
        r_bar: LiftedMatrix::signal(r)?,
        z_bar_frames,
        noise_var,
    })
}

/// Column blocks of width `frame_cols`, each as a lifted signal.
pub fn split_frames(a: &Array2<f64>, frame_cols: usize) -> Vec<LiftedMatrix> {
    (0..a.ncols() / frame_cols)
        .map(|i| {
            LiftedMatrix::signal(a.slice(s![.., i * frame_cols..(i + 1) * frame_cols]).to_owned())
                .expect("even rows")
        })
        .collect()
}

/// One simulated episode in lifted form.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSample {
    pub phi: Arc<LiftedMatrix>,
    pub r_bar: LiftedMatrix,
    pub z_bar_frames: Vec<LiftedMatrix>,
    pub g_bar: LiftedMatrix,
    pub supports: SupportSequence,
    pub noise_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.ced", self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

/// SplitMix64 finalizer over `(base, stream, index)`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PILOT_STREAM: u64 = 0x5049_4c4f_54;

/// Independent episodes sharing one pilot and sensing operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SparsityConfig,
    pub seed: u64,
    pub split: Split,
    pub pilot: ComplexMatrix,
    pub phi: Arc<LiftedMatrix>,
    pub episodes: Vec<EpisodeSample>,
}

/// The pilot and lifted sensing operator for a seed. Every split built from
/// the same seed shares them.
pub fn sensing_for_seed(cfg: &SparsityConfig, seed: u64) -> Result<(ComplexMatrix, LiftedMatrix)> {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, PILOT_STREAM, 0));
    let pilot = sample_pilot(cfg, &mut rng);
    let v = crate::lift::dft_unitary(cfg.m)?;
    let phi = measurement_operator(&pilot, &v)?;
    Ok((pilot, phi))
}

pub fn build_episode(
    cfg: &SparsityConfig,
    phi: &Arc<LiftedMatrix>,
    seed: u64,
    split: Split,
    index: usize,
) -> Result<EpisodeSample> {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, split.stream(), index as u64));
    let supports = sample_support_sequence(cfg, &mut rng)?;
    let g = sample_channel(&supports, cfg, &mut rng);
    let obs = observe(phi, &g, cfg, &mut rng)?;
    Ok(EpisodeSample {
        phi: Arc::clone(phi),
        r_bar: obs.r_bar,
        z_bar_frames: obs.z_bar_frames,
        g_bar: lift_signal(&g),
        supports,
        noise_var: obs.noise_var,
    })
}

pub fn build_dataset(cfg: &SparsityConfig, split: Split, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidParameter("dataset needs at least one episode".into()));
    }
    let (pilot, phi) = sensing_for_seed(cfg, seed)?;
    let phi = Arc::new(phi);
    let episodes = (0..count)
        .map(|i| build_episode(cfg, &phi, seed, split, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: *cfg,
        seed,
        split,
        pilot,
        phi,
        episodes,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    fn header(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("version", DATASET_VERSION);
        for (k, v) in self.config.to_kv().iter() {
            kv.set(k, v);
        }
        kv.set("seed", self.seed);
        kv.set("split", self.split.name());
        kv.set("count", self.episodes.len());
        kv.set(
            "fields",
            "pilot_re,pilot_im,phi;episode:g_bar,r_bar,noise_var,common,support*L",
        );
        kv
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ContainerWriter::new(DATASET_MAGIC, &self.header());
        w.block(self.pilot.re());
        w.block(self.pilot.im());
        w.block(self.phi.data());
        for ep in &self.episodes {
            w.block(ep.g_bar.data());
            w.block(ep.r_bar.data());
            w.scalar(ep.noise_var);
            w.row(&indices_to_f64(&ep.supports.common));
            for f in &ep.supports.per_frame {
                w.row(&indices_to_f64(f));
            }
        }
        w.into_bytes()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = ContainerReader::open(path, DATASET_MAGIC)?;
        let h = r.header().clone();
        let version: u32 = h.require("version")?;
        if version != DATASET_VERSION {
            return Err(r.format_error(format!("unsupported dataset version {version}")));
        }
        let config = SparsityConfig::from_kv(&h)?;
        let seed: u64 = h.require("seed")?;
        let split: Split = h.require::<String>("split")?.parse()?;
        let count: usize = h.require("count")?;
        let (m, t, cols) = (config.m, config.t, config.total_cols());
        let pilot = ComplexMatrix::new(
            r.block_shaped(m, t, "pilot_re")?,
            r.block_shaped(m, t, "pilot_im")?,
        )?;
        let phi = Arc::new(LiftedMatrix::operator(r.block_shaped(2 * t, 2 * m, "phi")?)?);
        let mut episodes = Vec::with_capacity(count);
        for _ in 0..count {
            let g_bar = LiftedMatrix::signal(r.block_shaped(2 * m, cols, "g_bar")?)?;
            let r_data = r.block_shaped(2 * t, cols, "r_bar")?;
            let noise_var = r.scalar("noise_var")?;
            let common = f64_to_indices(&r.row("common")?, m).ok_or_else(|| r.format_error("bad common support"))?;
            let mut per_frame = Vec::with_capacity(config.frames);
            for _ in 0..config.frames {
                per_frame.push(
                    f64_to_indices(&r.row("support")?, m).ok_or_else(|| r.format_error("bad frame support"))?,
                );
            }
            let z_bar_frames = split_frames(&r_data, config.n);
            episodes.push(EpisodeSample {
                phi: Arc::clone(&phi),
                r_bar: LiftedMatrix::signal(r_data)?,
                z_bar_frames,
                g_bar,
                supports: SupportSequence { common, per_frame },
                noise_var,
            });
        }
        r.finish()?;
        Ok(Self {
            config,
            seed,
            split,
            pilot,
            phi,
            episodes,
        })
    }
}

fn indices_to_f64(v: &[usize]) -> Vec<f64> {
    v.iter().map(|&j| j as f64).collect()
}

fn f64_to_indices(v: &[f64], m: usize) -> Option<Vec<usize>> {
    v.iter()
        .map(|&x| (x >= 0.0 && x.fract() == 0.0 && (x as usize) < m).then_some(x as usize))
        .collect()
}

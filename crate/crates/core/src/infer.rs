//! Batched inference over many episodes sharing one sensing operator.

use ndarray::{concatenate, Array2, ArrayView2, Axis, Slice};

use crate::error::{Error, Result};
use crate::lift::LiftedMatrix;
use crate::nets::{coarse_forward_batch, fine_forward_batch, CoarseNetParams, FineNetParams, NetVariant};
use crate::sim::EpisodeSample;

/// Episodes per stacked forward pass.
pub const INFER_CHUNK: usize = 100;

fn hstack<'a>(views: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Array2<f64> {
    let views: Vec<_> = views.into_iter().collect();
    concatenate(Axis(1), &views).expect("episodes share row count")
}

fn cols(b: usize, width: usize) -> Slice {
    Slice::from(b * width..(b + 1) * width)
}

/// Undo frame-major stacking: `frames[f]` holds frame `f` of every episode,
/// `n` columns each.
fn unstack(frames: &[ArrayView2<'_, f64>], n: usize, count: usize) -> Vec<Array2<f64>> {
    (0..count)
        .map(|b| hstack(frames.iter().map(|f| f.slice_axis(Axis(1), cols(b, n)))))
        .collect()
}

fn check_chunk(episodes: &[EpisodeSample]) -> Result<()> {
    let first = episodes
        .first()
        .ok_or_else(|| Error::InvalidParameter("inference needs at least one episode".into()))?;
    if episodes.iter().any(|e| e.phi.data().dim() != first.phi.data().dim() || e.r_bar.data().dim() != first.r_bar.data().dim()) {
        return Err(Error::ShapeMismatch("episodes in one batch must share shapes".into()));
    }
    Ok(())
}

/// Per-layer outputs of one chunk: coarse layers per episode, then fine
/// layers per episode (empty for coarse-only variants).
type ChunkLayers = (Vec<Vec<Array2<f64>>>, Vec<Vec<Array2<f64>>>);

fn run_chunk(
    variant: NetVariant,
    coarse: &CoarseNetParams,
    fine: Option<&FineNetParams>,
    chunk: &[EpisodeSample],
    all_layers: bool,
) -> Result<ChunkLayers> {
    check_chunk(chunk)?;
    let mode = variant.mode();
    let phi = &chunk[0].phi;
    let width = chunk[0].r_bar.data().ncols();
    let r = hstack(chunk.iter().map(|e| e.r_bar.view()));
    let ct = coarse_forward_batch(coarse, mode, phi, r.view(), width, coarse.num_layers())?;
    let split = |a: &Array2<f64>| -> Vec<Array2<f64>> {
        (0..chunk.len()).map(|b| a.slice_axis(Axis(1), cols(b, width)).to_owned()).collect()
    };
    let coarse_layers: Vec<Vec<Array2<f64>>> = if all_layers {
        ct.layers.iter().map(|l| split(&l.output)).collect()
    } else {
        vec![split(ct.output())]
    };
    if !variant.has_fine() {
        return Ok((coarse_layers, Vec::new()));
    }
    let fine = fine.ok_or_else(|| Error::InvalidParameter(format!("variant {variant} needs fine-net parameters")))?;
    let frames = chunk[0].z_bar_frames.len();
    let n = width / frames;
    let out = ct.output();
    let mut z = Vec::with_capacity(frames);
    let mut s0 = Vec::with_capacity(frames);
    for f in 0..frames {
        z.push(hstack(chunk.iter().map(|e| e.z_bar_frames[f].view())));
        s0.push(hstack((0..chunk.len()).map(|b| out.slice_axis(Axis(1), Slice::from(b * width + f * n..b * width + (f + 1) * n)))));
    }
    let zv: Vec<_> = z.iter().map(|a| a.view()).collect();
    let sv: Vec<_> = s0.iter().map(|a| a.view()).collect();
    let ft = fine_forward_batch(fine, mode, phi, &zv, &sv, n, fine.num_layers())?;
    let depths: Vec<usize> = if all_layers {
        (0..fine.num_layers()).collect()
    } else {
        vec![fine.num_layers() - 1]
    };
    let fine_layers = depths
        .into_iter()
        .map(|l| {
            let views: Vec<_> = ft.frames.iter().map(|fr| fr[l].output.view()).collect();
            unstack(&views, n, chunk.len())
        })
        .collect();
    Ok((coarse_layers, fine_layers))
}

/// Final estimates of `variant` for every episode.
pub fn infer(
    variant: NetVariant,
    coarse: &CoarseNetParams,
    fine: Option<&FineNetParams>,
    episodes: &[EpisodeSample],
) -> Result<Vec<LiftedMatrix>> {
    let mut out = Vec::with_capacity(episodes.len());
    for chunk in episodes.chunks(INFER_CHUNK) {
        let (mut c, mut f) = run_chunk(variant, coarse, fine, chunk, false)?;
        let last = if variant.has_fine() { f.pop() } else { c.pop() };
        for est in last.expect("one layer kept") {
            out.push(LiftedMatrix::signal(est)?);
        }
    }
    Ok(out)
}

/// Mean `||G^l - G||_F` over `episodes` after every layer, for the coarse net
/// and (if the variant has one) the fine net.
pub fn layer_errors(
    variant: NetVariant,
    coarse: &CoarseNetParams,
    fine: Option<&FineNetParams>,
    episodes: &[EpisodeSample],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut c_sum = vec![0.0; coarse.num_layers()];
    let mut f_sum = vec![0.0; if variant.has_fine() { fine.map_or(0, |f| f.num_layers()) } else { 0 }];
    let mut start = 0;
    for chunk in episodes.chunks(INFER_CHUNK) {
        let (c, f) = run_chunk(variant, coarse, fine, chunk, true)?;
        let truth = &episodes[start..start + chunk.len()];
        for (sum, layer) in c_sum.iter_mut().zip(&c).chain(f_sum.iter_mut().zip(&f)) {
            for (est, e) in layer.iter().zip(truth) {
                *sum += (est - e.g_bar.data()).iter().map(|x| x * x).sum::<f64>().sqrt();
            }
        }
        start += chunk.len();
    }
    let k = episodes.len() as f64;
    Ok((c_sum.into_iter().map(|s| s / k).collect(), f_sum.into_iter().map(|s| s / k).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_coarse, init_fine, variant_forward};
    use crate::sim::{build_dataset, SparsityConfig, Split};

    #[test]
    fn batched_inference_matches_per_episode_forward() {
        let cfg = SparsityConfig::new(16, 2, 8, 3, 6, 3, 1, 20.0).unwrap();
        let ds = build_dataset(&cfg, Split::Test, 7, 3).unwrap();
        let calib = || ds.episodes.iter().map(|e| e.r_bar.view());
        for v in NetVariant::ALL {
            let c = init_coarse(&ds.phi, 3, 1, 3, v.mode(), calib()).unwrap();
            let f = init_fine(&ds.phi, 2, 2, 4, v.mode(), calib()).unwrap();
            let batch = infer(v, &c, Some(&f), &ds.episodes).unwrap();
            for (e, b) in ds.episodes.iter().zip(&batch) {
                let single = variant_forward(v, &c, Some(&f), e).unwrap();
                let diff = (single.data() - b.data()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!(diff < 1e-12, "{v}: {diff}");
            }
            let (ce, fe) = layer_errors(v, &c, Some(&f), &ds.episodes).unwrap();
            assert_eq!(ce.len(), 3);
            assert_eq!(fe.len(), if v.has_fine() { 2 } else { 0 });
            let last = fe.last().or(ce.last()).copied().unwrap();
            let direct: f64 = ds
                .episodes
                .iter()
                .zip(&batch)
                .map(|(e, b)| (b.data() - e.g_bar.data()).iter().map(|x| x * x).sum::<f64>().sqrt())
                .sum::<f64>()
                / ds.len() as f64;
            assert!((last - direct).abs() < 1e-12);
        }
    }
}

use cfbss::lift::{dft_unitary, ComplexMatrix};
use cfbss::sim::{
    build_dataset, measurement_operator, observe, observe_with_variance, sample_channel, sample_pilot, Dataset,
    SparsityConfig, Split, SupportSequence,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[test]
fn channel_entries_have_unit_power() {
    let cfg = SparsityConfig::new(8, 1, 4, 1, 6, 3, 1, 20.0).unwrap();
    let sup = SupportSequence {
        common: vec![],
        per_frame: vec![vec![3]],
    };
    let mut r = rng(1);
    let draws = 100_000;
    let mut power = 0.0;
    for _ in 0..draws {
        let g = sample_channel(&sup, &cfg, &mut r);
        let (re, im) = g.get(3, 0);
        power += re * re + im * im;
        assert_eq!(g.fro_norm(), (re * re + im * im).sqrt());
    }
    let mean = power / draws as f64;
    assert!((mean - 1.0).abs() < 0.03, "{mean}");
}

#[test]
fn pilot_entry_variance() {
    let cfg = SparsityConfig::new(128, 2, 40, 2, 8, 4, 1, 20.0).unwrap();
    let bound = (1.0 / 128f64).sqrt();
    assert!((bound - 0.088388).abs() < 1e-6);
    let mut r = rng(2);
    let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
    while n < 1_000_000 {
        let x = sample_pilot(&cfg, &mut r);
        for v in x.re().iter().chain(x.im().iter()) {
            assert!(v.abs() <= bound);
            sum += v;
            sq += v * v;
            n += 1;
        }
    }
    let mean = sum / n as f64;
    let var = sq / n as f64 - mean * mean;
    let expect = (1.0 / 128.0) / 3.0;
    assert!((var / expect - 1.0).abs() < 0.05, "{var} vs {expect}");
}

#[test]
fn operator_reassembles_complex_product_and_has_expected_column_scale() {
    let cfg = SparsityConfig::new(64, 2, 24, 2, 8, 4, 1, 20.0).unwrap();
    let mut r = rng(3);
    let x = sample_pilot(&cfg, &mut r);
    let v = dft_unitary(64).unwrap();
    let phi = measurement_operator(&x, &v).unwrap();
    let direct = x.adjoint().matmul(&v).unwrap();
    let lifted = cfbss::lift::lift_operator(&direct);
    let diff = (phi.data() - lifted.data()).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(diff < 1e-12);
    // complex entries of X^H V have variance 2/(3M); a lifted column holds T of them
    let cols = phi.data().ncols();
    let mean_norm: f64 = (0..cols).map(|c| phi.data().column(c).iter().map(|a| a * a).sum::<f64>().sqrt()).sum::<f64>() / cols as f64;
    let expect = (2.0 * 24.0 / (3.0 * 64.0f64)).sqrt();
    assert!((mean_norm / expect - 1.0).abs() < 0.1, "{mean_norm} vs {expect}");
}

#[test]
fn empirical_snr_matches_target() {
    let cfg = SparsityConfig::new(32, 2, 12, 4, 8, 4, 2, 15.0).unwrap();
    let ds = build_dataset(&cfg, Split::Train, 400, 4).unwrap();
    let (mut sig, mut noise) = (0.0, 0.0);
    for e in &ds.episodes {
        let clean = ds.phi.data().dot(e.g_bar.data());
        sig += clean.iter().map(|x| x * x).sum::<f64>();
        noise += (e.r_bar.data() - &clean).iter().map(|x| x * x).sum::<f64>();
    }
    let snr = 10.0 * (sig / noise).log10();
    assert!((snr - 15.0).abs() < 0.2, "{snr}");
}

#[test]
fn zero_channel_gives_noise_of_requested_variance() {
    let cfg = SparsityConfig::new(32, 4, 12, 4, 8, 4, 2, 15.0).unwrap();
    let mut r = rng(5);
    let x = sample_pilot(&cfg, &mut r);
    let phi = measurement_operator(&x, &dft_unitary(32).unwrap()).unwrap();
    let g = ComplexMatrix::zeros(32, 4 * 50);
    let obs = observe_with_variance(&phi, &g, 0.3, 4, &mut r).unwrap();
    let d = obs.r_bar.data();
    let per_entry = d.iter().map(|v| v * v).sum::<f64>() / (d.len() / 2) as f64;
    assert!((per_entry / 0.3 - 1.0).abs() < 0.05, "{per_entry}");
    assert_eq!(obs.z_bar_frames.len(), 50);
    let silent = observe(&phi, &g, &cfg, &mut r).unwrap();
    assert_eq!(silent.noise_var, 0.0);
    assert!(silent.r_bar.data().iter().all(|&v| v == 0.0));
}

#[test]
fn dataset_round_trip_and_residual_on_load() {
    let cfg = SparsityConfig::new(16, 2, 8, 3, 6, 3, 1, 10.0).unwrap();
    let ds = build_dataset(&cfg, Split::Val, 25, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("val.ced");
    ds.write(&p).unwrap();
    let back = Dataset::read(&p).unwrap();
    assert_eq!(back.to_bytes(), ds.to_bytes());
    assert_eq!(back.episodes[3].g_bar, ds.episodes[3].g_bar);
    assert_eq!(back.episodes[3].supports, ds.episodes[3].supports);
    let again = build_dataset(&cfg, Split::Val, 25, 9).unwrap();
    assert_eq!(again.to_bytes(), ds.to_bytes());
    // residual energy per complex entry tracks the stored noise variance
    let mut ratio = 0.0;
    for e in &back.episodes {
        let resid = e.r_bar.data() - &back.phi.data().dot(e.g_bar.data());
        let per_entry = resid.iter().map(|v| v * v).sum::<f64>() / (resid.len() / 2) as f64;
        ratio += per_entry / e.noise_var;
    }
    ratio /= back.len() as f64;
    assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
    for e in &back.episodes {
        let n = e.z_bar_frames[0].data().ncols();
        for (i, z) in e.z_bar_frames.iter().enumerate() {
            let block = e.r_bar.data().slice(ndarray::s![.., i * n..(i + 1) * n]).to_owned();
            assert_eq!(&block, z.data());
        }
    }
}

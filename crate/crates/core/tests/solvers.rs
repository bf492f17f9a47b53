use cfbss::baselines::{ista_l21_solve, ista_weighted_l21_solve, kkt_residual, oracle_episode, SolverConfig};
use cfbss::bench::TestChannels;
use cfbss::infer::infer;
use cfbss::lift::{lift_operator, ComplexMatrix, LiftedMatrix};
use cfbss::metrics::{nmse, NmseForm};
use cfbss::nets::{coarse_forward, init_weight, CoarseNetParams, Layer, NetVariant};
use cfbss::pipeline::{initial_nets, CellData};
use cfbss::config::ExperimentConfig;
use cfbss::shrinkage::{GroupSet, SupportSchedule};
use cfbss::sim::SparsityConfig;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random_instance(rng: &mut ChaCha20Rng, t: usize, m: usize, cols: usize) -> (LiftedMatrix, LiftedMatrix) {
    let phi = lift_operator(&ComplexMatrix::from_fn(t, m, |_, _| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))));
    let r = Array2::from_shape_fn((2 * t, cols), |_| rng.random_range(-1.0..1.0));
    (phi, LiftedMatrix::signal(r).unwrap())
}

#[test]
fn unrolled_bss_layers_with_fixed_weights_are_ista_iterations() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for layers in [1, 4] {
        let (phi, r) = random_instance(&mut rng, 5, 9, 3);
        let alpha = 0.05;
        let w = init_weight(&phi);
        let eta = w[[0, 0]] / phi.data()[[0, 0]];
        let layer = Layer { w, theta: eta * alpha };
        let net = CoarseNetParams::new(vec![layer; layers], SupportSchedule::new(0, 0, layers, 9).unwrap()).unwrap();
        let (est, _) = coarse_forward(&net, &phi, &r).unwrap();
        let cfg = SolverConfig {
            alpha,
            max_iters: layers,
            tol: 1e-300,
            ..SolverConfig::default()
        };
        let out = ista_l21_solve(&phi, &r, &cfg).unwrap();
        assert_eq!(out.iterations, layers);
        let last = *out.objective.last().unwrap();
        assert!(out.objective.iter().all(|&o| o >= last));
        assert_eq!(out.estimate, est, "{layers} layers");
    }
}

#[test]
fn weighted_solver_satisfies_optimality_on_random_instances() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    for _ in 0..30 {
        let (phi, z) = random_instance(&mut rng, 4, 6, 2);
        let prev = GroupSet::from_indices(6, (0..6).filter(|_| rng.random_bool(0.4))).unwrap();
        let cfg = SolverConfig {
            lambda: rng.random_range(0.05..0.5),
            omega_fixed: rng.random_range(0.1..1.0),
            tol: 1e-10,
            max_iters: 200_000,
            ..SolverConfig::default()
        };
        let out = ista_weighted_l21_solve(&phi, &z, &prev, &cfg).unwrap();
        assert!(out.converged && out.monotone);
        let pen: Vec<f64> = (0..6)
            .map(|j| cfg.lambda * if prev.contains(j) { cfg.omega_fixed } else { 1.0 })
            .collect();
        let kkt = kkt_residual(phi.view(), z.view(), out.estimate.view(), &pen);
        assert!(kkt < 1e-4, "{kkt}");
    }
}

#[test]
fn genie_estimate_dominates_and_perfect_knowledge_bounds_ase() {
    let mut cfg = ExperimentConfig::with_sparsity(SparsityConfig::new(32, 2, 12, 4, 8, 5, 3, 20.0).unwrap());
    cfg.k_train = 40;
    cfg.k_val = 10;
    cfg.k_test = 30;
    cfg.layers_coarse = 3;
    cfg.layers_fine = 3;
    let data = CellData::generate(&cfg, 5).unwrap();
    let test = &data.test;
    let truth: Vec<LiftedMatrix> = test.episodes.iter().map(|e| e.g_bar.clone()).collect();
    let oracle: Vec<LiftedMatrix> = test
        .episodes
        .iter()
        .map(|e| oracle_episode(&e.phi, &e.z_bar_frames, &e.supports.per_frame).unwrap())
        .collect();
    let oracle_db = nmse(&truth, &oracle, NmseForm::NormRatio).unwrap().db;
    let channels = TestChannels::new(test).unwrap();
    let bound = channels.ase_bound().unwrap();
    let mut others = Vec::new();
    for alpha in [0.003, 0.03] {
        let sc = SolverConfig {
            alpha,
            ..SolverConfig::default()
        };
        others.push(test.episodes.iter().map(|e| ista_l21_solve(&e.phi, &e.r_bar, &sc).unwrap().estimate).collect::<Vec<_>>());
    }
    for v in NetVariant::ALL {
        let (c, f) = initial_nets(&cfg, v, &data.train).unwrap();
        others.push(infer(v, &c, Some(&f), &test.episodes).unwrap());
    }
    for est in &others {
        let db = nmse(&truth, est, NmseForm::NormRatio).unwrap().db;
        assert!(oracle_db <= db, "{oracle_db} vs {db}");
        assert!(channels.ase(|_| db).unwrap() <= bound);
    }
    assert!(channels.ase(|_| oracle_db).unwrap() <= bound);
}

use cfbss::baselines::prox_group_l21;
use cfbss::lift::{group_row_norms, lift_operator, lift_signal, unlift_signal, ComplexMatrix, LiftedMatrix};
use cfbss::shrinkage::{bss_forward, gbss_forward, support_select, GroupSet, GroupWeights};
use ndarray::Array2;
use proptest::prelude::*;

fn complex(rows: usize, cols: usize) -> impl Strategy<Value = ComplexMatrix> {
    prop::collection::vec(-2.0f64..2.0, 2 * rows * cols).prop_map(move |v| {
        let re = Array2::from_shape_vec((rows, cols), v[..rows * cols].to_vec()).unwrap();
        let im = Array2::from_shape_vec((rows, cols), v[rows * cols..].to_vec()).unwrap();
        ComplexMatrix::new(re, im).unwrap()
    })
}

fn product_pair() -> impl Strategy<Value = (ComplexMatrix, ComplexMatrix)> {
    (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(r, k, c)| (complex(r, k), complex(k, c)))
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn fro(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Lifted signal with `m` groups and `cols` columns.
fn signal(m: usize, cols: usize) -> impl Strategy<Value = LiftedMatrix> {
    prop::collection::vec(-3.0f64..3.0, 2 * m * cols)
        .prop_map(move |v| LiftedMatrix::signal(Array2::from_shape_vec((2 * m, cols), v).unwrap()).unwrap())
}

fn signal_and_mask() -> impl Strategy<Value = (LiftedMatrix, Vec<bool>)> {
    (1usize..8, 1usize..4).prop_flat_map(|(m, c)| (signal(m, c), prop::collection::vec(any::<bool>(), m)))
}

proptest! {
    #[test]
    fn lift_is_a_homomorphism((a, b) in product_pair()) {
        let ab = a.matmul(&b).unwrap();
        let lifted = lift_operator(&a).data().dot(lift_operator(&b).data());
        prop_assert!(fro(&(&lifted - lift_operator(&ab).data())) < 1e-10);
        let action = lift_operator(&a).data().dot(lift_signal(&b).data());
        prop_assert!(fro(&(&action - lift_signal(&ab).data())) < 1e-10);
    }

    #[test]
    fn lift_norm_identities(a in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| complex(r, c))) {
        let n = a.fro_norm();
        prop_assert!((lift_signal(&a).fro_norm() - n).abs() < 1e-12);
        prop_assert!((fro(lift_operator(&a).data()) - 2f64.sqrt() * n).abs() < 1e-10);
        prop_assert_eq!(unlift_signal(&lift_signal(&a)).unwrap(), a.clone());
        let rows = a.row_norms();
        for (x, y) in group_row_norms(&lift_signal(&a)).iter().zip(&rows) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn row_norms_follow_paired_row_permutations(a in (2usize..7, 1usize..4).prop_flat_map(|(r, c)| complex(r, c)), shift in 0usize..7) {
        let m = a.rows();
        let perm: Vec<usize> = (0..m).map(|j| (j + shift) % m).collect();
        let permuted = ComplexMatrix::from_fn(m, a.cols(), |r, c| a.get(perm[r], c));
        let base = group_row_norms(&lift_signal(&a));
        let moved = group_row_norms(&lift_signal(&permuted));
        for j in 0..m {
            prop_assert_eq!(moved[j], base[perm[j]]);
        }
    }

    #[test]
    fn unit_weights_reduce_to_plain_thresholding((v, mask) in signal_and_mask(), theta in 0.0f64..4.0) {
        let sel = GroupSet::from_mask(mask);
        let plain = bss_forward(&v, theta, &sel).unwrap();
        let weighted = gbss_forward(&v, theta, &GroupWeights::ones(v.groups()), &sel).unwrap();
        prop_assert_eq!(plain, weighted);
    }

    #[test]
    fn empty_selection_is_the_group_prox(v in (1usize..8, 1usize..4).prop_flat_map(|(m, c)| signal(m, c)), theta in 0.0f64..4.0) {
        let out = bss_forward(&v, theta, &GroupSet::empty(v.groups())).unwrap();
        let prox = prox_group_l21(&v, theta).unwrap();
        prop_assert!(max_abs(out.data(), prox.data()) <= 1e-12);
    }

    #[test]
    fn unselected_groups_shrink_by_the_weighted_threshold(
        (v, mask) in signal_and_mask(),
        theta in 0.0f64..3.0,
        omega in 0.05f64..1.5,
        marks in prop::collection::vec(any::<bool>(), 8),
    ) {
        let m = v.groups();
        let sel = GroupSet::from_mask(mask);
        let marked = GroupSet::from_mask(marks[..m].to_vec());
        let w = GroupWeights::new(omega, marked).unwrap();
        let out = gbss_forward(&v, theta, &w, &sel).unwrap();
        let n_in = group_row_norms(&v);
        let n_out = group_row_norms(&out);
        for j in 0..m {
            let t = theta * w.weight(j);
            if n_out[j] > 0.0 {
                prop_assert!(n_in[j] > theta.min(t));
            }
            if sel.contains(j) && n_in[j] > theta {
                prop_assert_eq!(n_out[j], n_in[j]);
            } else {
                prop_assert!(n_out[j] <= n_in[j] + 1e-12);
                prop_assert!((n_out[j] - (n_in[j] - t).max(0.0)).abs() < 1e-12);
            }
        }
        prop_assert!(out.is_signal());
    }

    #[test]
    fn selection_matches_full_sort(norms in prop::collection::vec(0u8..6, 1..20), p in 0.0f64..1.0) {
        let norms: Vec<f64> = norms.into_iter().map(f64::from).collect();
        let sel = support_select(&norms, p);
        let k = (p * norms.len() as f64 + 1e-9).floor() as usize;
        let mut order: Vec<usize> = (0..norms.len()).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        let mut expect = order[..k].to_vec();
        expect.sort_unstable();
        prop_assert_eq!(sel.indices(), expect);
    }
}

use num_rational::Ratio;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dyadic_cmc::diagnostics::exact_kac;
use dyadic_cmc::geometry::{overlay, random_partition, AxisBox, CellId, DyadicPartition};
use dyadic_cmc::histogram::fit;
use dyadic_cmc::losses::{penalty, t_statistic};
use dyadic_cmc::selector::{brute_force_select, gamma, select_partition, SelectorConfig};
use dyadic_cmc::simulators::fully_connected;
use dyadic_cmc::stats::SparseCountTree;
use dyadic_cmc::trajectory::Trajectory;

fn partition(seed: u64, dim: usize, depth: usize) -> DyadicPartition {
    random_partition(&mut ChaCha8Rng::seed_from_u64(seed), dim, depth, 0.8, 0.7)
}

fn trajectory() -> impl Strategy<Value = Trajectory> {
    (6usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n + 1),
            prop::collection::vec(0.0f64..1.0, n + 1),
        )
            .prop_map(|(x, a)| Trajectory::from_unit(1, 1, x, a).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partitions_tile_the_cube(seed in any::<u64>(), dim in 1usize..4, depth in 0usize..4, pts in prop::collection::vec(0.0f64..=1.0, 12)) {
        let m = partition(seed, dim, depth);
        let vol: f64 = m.leaves().iter().map(|c| c.volume(dim)).sum();
        prop_assert!((vol - 1.0).abs() < 1e-12);
        for p in pts.chunks(dim).filter(|c| c.len() == dim) {
            let hits = m.leaves().iter().filter(|c| c.to_box(dim).contains_point(p)).count();
            prop_assert_eq!(hits, 1);
            let i = m.locate_point(p).unwrap();
            prop_assert!(m.leaves()[i].contains(&CellId::locate(p, depth).unwrap()));
        }
    }

    #[test]
    fn overlay_refines_both(s1 in any::<u64>(), s2 in any::<u64>()) {
        let (a, b) = (partition(s1, 3, 3), partition(s2, 3, 3));
        let o = overlay(&a, &b).unwrap();
        prop_assert!(o.len() >= a.len().max(b.len()));
        for c in o.leaves() {
            prop_assert!(a.leaf_containing(c).is_some());
            prop_assert!(b.leaf_containing(c).is_some());
        }
        prop_assert_eq!(overlay(&o, &a).unwrap(), o.clone());
        let coarse = o.coarsen(1);
        prop_assert!(coarse.len() <= 8);
    }

    #[test]
    fn partition_json_round_trip(seed in any::<u64>()) {
        let m = partition(seed, 3, 3);
        prop_assert_eq!(DyadicPartition::from_json(&m.to_json(), 3).unwrap(), m);
    }

    #[test]
    fn uniform_fits_are_normalized(traj in trajectory(), depth in 0usize..4, q in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 20)) {
        let m = DyadicPartition::uniform(3, depth).unwrap();
        let tree = SparseCountTree::build(&traj, 3).unwrap();
        let k = fit(&tree, &m).unwrap();
        let counts = k.metadata.leaf_counts.clone().unwrap();
        for (x, a) in q {
            let leaves = k.leaves_over(&[x], &[a]);
            let total = k.next_state_mass_exact(&[x], &[a]).unwrap();
            if leaves.iter().any(|&i| counts[i][1] > 0) {
                prop_assert_eq!(total, Ratio::from_integer(1));
            } else {
                prop_assert_eq!(total, Ratio::from_integer(0));
            }
        }
    }

    #[test]
    fn t_statistic_is_antisymmetric(traj in trajectory(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let tree = SparseCountTree::build(&traj, 3).unwrap();
        let f1 = fit(&tree, &partition(s1, 3, 3)).unwrap();
        let f2 = fit(&tree, &partition(s2, 3, 3)).unwrap();
        let a = t_statistic(&f1, &f2, &traj, &tree).unwrap();
        let b = t_statistic(&f2, &f1, &traj, &tree).unwrap();
        prop_assert!((a + b).abs() < 1e-10);
        prop_assert_eq!(t_statistic(&f1, &f1, &traj, &tree).unwrap(), 0.0);
    }

    #[test]
    fn selected_partition_minimizes_contrast(traj in trajectory(), l in 0.01f64..10.0, seeds in prop::collection::vec(any::<u64>(), 8)) {
        let cfg = SelectorConfig::new(3, l);
        let tree = SparseCountTree::build(&traj, 3).unwrap();
        let sel = select_partition(&tree, &cfg).unwrap();
        prop_assert!((gamma(&sel.partition, &tree, &cfg).unwrap() - sel.gamma).abs() < 1e-9);
        for s in seeds {
            let m = partition(s, 3, 3);
            prop_assert!(sel.gamma <= gamma(&m, &tree, &cfg).unwrap() + 1e-12);
        }
    }

    #[test]
    fn penalty_grows_with_cells(c in 1usize..500, n in 2usize..100_000, l in 0.1f64..100.0) {
        prop_assert!(penalty(c + 1, n, l) > penalty(c, n, l));
        prop_assert!(penalty(c, n, l) > 0.0);
    }

    #[test]
    fn kac_holds_on_fully_connected(seed in any::<u64>(), eps0 in 0.05f64..0.95, n in 5usize..300, lo in prop::collection::vec(0usize..4, 2), w in prop::collection::vec(1usize..4, 2)) {
        let spec = fully_connected(eps0, 3, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let m = spec.marginals(n);
        let lo: Vec<f64> = lo.iter().map(|&v| v as f64 / 4.0).collect();
        let hi: Vec<f64> = lo.iter().zip(&w).map(|(l, &w)| (l + w as f64 / 4.0).min(1.0)).collect();
        let s = AxisBox::new(lo, hi).unwrap();
        let k = exact_kac(&spec, &m, &s, n);
        prop_assert!(k.satisfied, "{:?}", k);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dynamic_program_matches_enumeration(traj in trajectory(), l in 0.01f64..5.0) {
        let cfg = SelectorConfig::new(2, l);
        let tree = SparseCountTree::build(&traj, 2).unwrap();
        let sel = select_partition(&tree, &cfg).unwrap();
        let bf = brute_force_select(&traj, &tree, &cfg).unwrap();
        prop_assert!((sel.gamma - bf.gammas[bf.best]).abs() < 1e-12);
    }
}

use proptest::prelude::*;

use homlab::field::{check_moment_condition, mu_lambda, CoefficientField};
use homlab::grid::GridSpec;
use homlab::io::{read_field, write_field};
use homlab::models::{block_of, resample_block, sample_field, EnsembleModel, ModelKind};
use homlab::partition::build_partition;
use homlab::radii::{ellipticity_radius, minimal_radius};
use homlab::solver::operator::dot;
use homlab::solver::{DiscreteOperator, Scheme};
use homlab::stats::seeds::derive_seed;
use homlab::stats::survival::survival_curve;

fn model_strategy() -> impl Strategy<Value = EnsembleModel> {
    prop_oneof![
        (1usize..=2, 0.0f64..1.5).prop_map(|(s, v)| ModelKind::IndependentBlockLogNormal { block_side: s, log_variance: v }),
        (1usize..=2, 0.5f64..4.0, 0.5f64..8.0, 2.0f64..100.0).prop_map(|(s, a, b, t)| ModelKind::HeavyTailedBlock {
            block_side: s,
            tail_index_mu: a,
            tail_index_lambda: b,
            truncation: t
        }),
        (1usize..=2, 0.1f64..1.0, 1.0f64..10.0).prop_map(|(s, lo, hi)| ModelKind::TwoPhaseCheckerboard {
            block_side: s,
            low: lo,
            high: hi
        }),
    ]
    .prop_map(|k| EnsembleModel::new(k, 4.0, 4.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sampling_is_a_function_of_the_seed(model in model_strategy(), seed in any::<u64>()) {
        let g = GridSpec::unit(2, 8).unwrap();
        let a = sample_field(&model, &g, seed).unwrap();
        let b = sample_field(&model, &g, seed).unwrap();
        prop_assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn ellipticity_scalars_are_ordered(model in model_strategy(), seed in any::<u64>()) {
        let g = GridSpec::unit(2, 8).unwrap();
        let e = mu_lambda(&sample_field(&model, &g, seed).unwrap()).unwrap();
        for (m, l) in e.mu.iter().zip(&e.lambda) {
            prop_assert!(*l > 0.0 && m >= l);
        }
    }

    #[test]
    fn resampling_one_block_leaves_the_rest(model in model_strategy(), seed in any::<u64>(), fresh in any::<u64>(), b in 0usize..16) {
        let g = GridSpec::unit(2, 8).unwrap();
        let side = model.block_side().unwrap();
        let nb = (8 / side) * (8 / side);
        let b = b % nb;
        let f = sample_field(&model, &g, seed).unwrap();
        let r = resample_block(&model, &f, b, fresh).unwrap();
        for x in 0..g.n_cells() {
            if block_of(&g, side, x) != b {
                prop_assert_eq!(f.cell(x), r.cell(x));
            }
        }
    }

    #[test]
    fn operator_is_symmetric_with_constant_kernel(seed in any::<u64>(), var in 0.0f64..2.0) {
        let g = GridSpec::unit(2, 6).unwrap();
        let m = EnsembleModel::new(ModelKind::IndependentBlockLogNormal { block_side: 1, log_variance: var }, 4.0, 4.0);
        let op = DiscreteOperator::assemble(&sample_field(&m, &g, seed).unwrap(), Scheme::CellTensor).unwrap();
        let n = op.n();
        let u: Vec<f64> = (0..n).map(|x| ((x as u64 ^ seed) as f64).sin()).collect();
        let v: Vec<f64> = (0..n).map(|x| ((x * 3 + 1) as f64).cos()).collect();
        let (au, av) = (op.apply(&u), op.apply(&v));
        let scale = dot(&u, &au).abs().max(dot(&v, &av).abs()).max(1.0);
        prop_assert!((dot(&u, &av) - dot(&au, &v)).abs() <= 1e-12 * scale);
        prop_assert!(dot(&u, &au) >= 0.0);
        let c = op.apply(&vec![1.0; n]);
        prop_assert!(c.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn field_snapshot_round_trips(model in model_strategy(), seed in any::<u64>()) {
        let g = GridSpec::unit(2, 4).unwrap();
        let f = sample_field(&model, &g, seed).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        let back = read_field(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.entries, f.entries);
        prop_assert_eq!(back.seed, f.seed);
        prop_assert_eq!(back.model_id, f.model_id);
    }

    #[test]
    fn survival_curves_are_monotone(values in prop::collection::vec(1.0f64..64.0, 1..200)) {
        let radii: Vec<f64> = (1..=64).map(|r| r as f64).collect();
        let c = survival_curve(&values, &radii);
        for w in c.s.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        for t in 0..radii.len() {
            prop_assert!(c.ci_lo[t] <= c.s[t] && c.s[t] <= c.ci_hi[t]);
        }
    }

    #[test]
    fn moment_condition_is_monotone(p in 1.01f64..10.0, q in 1.01f64..10.0, dp in 0.0f64..5.0, d in 1usize..=3) {
        if check_moment_condition(p, q, d, true) {
            prop_assert!(check_moment_condition(p + dp, q + dp, d, true));
            prop_assert!(check_moment_condition(p, q, d, false));
        }
    }

    #[test]
    fn partitions_satisfy_their_invariants(beta in 0.0f64..0.99, k in 3u32..6) {
        let g = GridSpec::unit(2, 1 << k).unwrap();
        let p = build_partition(&g, beta).unwrap();
        p.check(&g).unwrap();
        let total: usize = p.blocks.iter().map(|b| b.cells.len()).sum();
        prop_assert_eq!(total, g.n_cells());
    }

    #[test]
    fn radii_respond_monotonically(seed in any::<u64>(), k in 1.0f64..5.0, dk in 0.0f64..3.0) {
        let g = GridSpec::unit(2, 16).unwrap();
        let m = EnsembleModel::new(ModelKind::IndependentBlockLogNormal { block_side: 1, log_variance: 1.0 }, 3.0, 3.0);
        let f = sample_field(&m, &g, seed).unwrap();
        let lo = ellipticity_radius(&f, 3.0, 3.0, k).unwrap();
        let hi = ellipticity_radius(&f, 3.0, 3.0, k + dk).unwrap();
        prop_assert!(hi.r_e <= lo.r_e);

        let x: Vec<f64> = lo.rho.iter().map(|&r| 1.0 / r as f64 + 0.01 * ((r as u64 ^ seed) % 7) as f64).collect();
        let loose = minimal_radius(&lo.rho, &x, 1.0, 4.0, 2.0);
        let strict = minimal_radius(&lo.rho, &x, 1.0, 8.0, 2.0);
        prop_assert!(loose.r_star <= strict.r_star);
    }

    #[test]
    fn seeds_are_stable(master in any::<u64>(), i in any::<u64>()) {
        prop_assert_eq!(derive_seed(master, "t", i), derive_seed(master, "t", i));
        prop_assert_ne!(derive_seed(master, "t", i), derive_seed(master, "u", i));
    }
}

#[test]
fn identity_field_has_unit_scalars() {
    let f = CoefficientField::identity(GridSpec::unit(3, 4).unwrap());
    let e = mu_lambda(&f).unwrap();
    assert!(e.mu.iter().chain(&e.lambda).all(|v| (*v - 1.0).abs() < 1e-15));
}

//! Randomized property tests for the structural invariants.

use nlhomog::environment::{
    sample_path, FieldCoefficients, KernelFamily, KernelSpec, MarkovDriver,
};
use nlhomog::output::{decode_snapshot, encode_snapshot, format_csv, parse_csv, SnapshotHeader};
use nlhomog::torus::{CellOperator, PeriodizedKernel};
use nlhomog::{effective, environment};
use proptest::prelude::*;

fn uniform_kernel(half_width: f64) -> KernelSpec {
    KernelSpec::new(KernelFamily::Uniform { half_width }, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn periodization_preserves_total_mass(
        half_width in 0.3f64..2.5,
        n in prop::sample::select(vec![8usize, 16, 24, 32]),
    ) {
        let kernel = uniform_kernel(half_width);
        let pk = PeriodizedKernel::new(&kernel, n).unwrap();
        // The kernel density is normalized, so the folded mass is 1.
        let mass = pk.total_moment(0);
        prop_assert!((mass - 1.0).abs() < 1e-12, "mass {mass}");
        let _ = &kernel;
        // Even kernel: odd folded moments cancel classwise in pairs.
        let m1 = pk.total_moment(1);
        prop_assert!(m1.abs() < 1e-13);
    }

    #[test]
    fn psd_sqrt_squares_back(entries in prop::collection::vec(-2.0f64..2.0, 4)) {
        // Gram matrix G Gᵀ of a random 2x2 is PSD by construction.
        let g = entries;
        let c = [
            g[0] * g[0] + g[1] * g[1],
            g[0] * g[2] + g[1] * g[3],
            g[2] * g[0] + g[3] * g[1],
            g[2] * g[2] + g[3] * g[3],
        ];
        let s = effective::psd_sqrt(&c, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let back = (0..2).map(|k| s[i * 2 + k] * s[k * 2 + j]).sum::<f64>();
                prop_assert!((back - c[i * 2 + j]).abs() < 1e-9,
                    "entry ({i},{j}): {back} vs {}", c[i * 2 + j]);
            }
        }
    }

    #[test]
    fn driver_paths_are_seed_deterministic(
        seed in 0u64..1000,
        stream in 0u64..8,
        horizon in 5.0f64..50.0,
    ) {
        let driver = MarkovDriver::new(2, vec![-1.0, 1.0, 0.5, -0.5], seed).unwrap();
        let a = sample_path(&driver, horizon, seed, stream).unwrap();
        let b = sample_path(&driver, horizon, seed, stream).unwrap();
        prop_assert_eq!(&a.jump_times, &b.jump_times);
        prop_assert_eq!(&a.states, &b.states);
        let c = sample_path(&driver, horizon, seed, stream + 100).unwrap();
        prop_assert!(a.jump_times != c.jump_times || a.states != c.states);
    }

    #[test]
    fn operator_annihilates_constants_for_random_fields(
        alpha in -0.4f64..0.4,
        gamma in -0.2f64..0.2,
        delta in -0.3f64..0.3,
        level in 0.5f64..3.0,
    ) {
        let kernel = uniform_kernel(1.0);
        let driver = MarkovDriver::new(2, vec![-1.0, 1.0, 1.0, -1.0], 5).unwrap();
        let coeffs = vec![
            FieldCoefficients { base: 1.0, alpha, gamma, delta },
            FieldCoefficients { base: 1.0, alpha: -alpha, gamma: -gamma, delta: -delta },
        ];
        let env = environment::EnvironmentModel::from_coefficients(
            kernel, driver, 16, coeffs, 0.1, 3.0,
        ).unwrap();
        let op = CellOperator::new(&env).unwrap();
        let u = vec![level; 16];
        let mut lu = vec![f64::NAN; 16];
        for k in 0..2 {
            op.apply(k, &u, &mut lu);
            prop_assert!(lu.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn snapshot_round_trips(
        data in prop::collection::vec(-1e12f64..1e12, 0..64),
        field in "[a-z_]{1,16}",
        epsilon in 0.01f64..1.0,
    ) {
        let header = SnapshotHeader {
            field,
            epsilon,
            time: 0.25,
            n_nodes: data.len(),
            dx: 0.5,
            seed: 7,
        };
        let bytes = encode_snapshot(&header, &data).unwrap();
        let (h, d) = decode_snapshot(&bytes).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(d, data);
    }

    #[test]
    fn csv_round_trips(rows in prop::collection::vec(
        prop::collection::vec(-1e6f64..1e6, 3), 0..20)) {
        let text = format_csv(&["a", "b", "c"], &rows);
        let (headers, parsed) = parse_csv(&text).unwrap();
        prop_assert_eq!(headers, vec!["a".to_string(), "b".into(), "c".into()]);
        prop_assert_eq!(parsed, rows);
    }
}

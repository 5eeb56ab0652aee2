use covadj::aa::{bucket_metrics, excess_frac, run_aa};
use covadj::power::{recommend_duration, Forecast};
use covadj::{estimate, fit_arms, impute, ExperimentData, ModelSpec};
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = ExperimentData> {
    (6usize..40, 1usize..4).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(-5.0f64..5.0, n * k),
            Just(k),
        )
            .prop_filter_map("each arm needs two units", |(mut a, y, z, k)| {
                let n = a.len();
                a[0] = 0;
                a[1] = 0;
                a[n - 1] = 1;
                a[n - 2] = 1;
                ExperimentData::new(
                    (0..n).map(|i| format!("u{i}")).collect(),
                    a,
                    y,
                    z,
                    (0..k).map(|i| format!("c{i}")).collect(),
                    0,
                    None,
                )
                .ok()
            })
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dim_is_difference_of_arm_means(d in dataset()) {
        let y1: Vec<f64> = d.arm_indices(1).iter().map(|&i| d.outcome()[i]).collect();
        let y0: Vec<f64> = d.arm_indices(0).iter().map(|&i| d.outcome()[i]).collect();
        let e = estimate(&d, &ModelSpec::dim(), 0.05, 0).unwrap();
        prop_assert!((e.ate - (mean(&y1) - mean(&y0))).abs() < 1e-9);
    }

    #[test]
    fn observed_outcomes_survive_imputation(d in dataset()) {
        let models = fit_arms(&d, &ModelSpec::ols(), 0).unwrap();
        let table = impute(&d, &models).unwrap();
        for (n, row) in table.iter().enumerate() {
            let j = d.assignment()[n] as usize;
            prop_assert_eq!(row[j].to_bits(), d.outcome()[n].to_bits());
        }
    }

    #[test]
    fn lift_and_duration_are_scale_free(d in dataset(), c in 0.1f64..20.0) {
        let scaled = d.with_outcome(d.outcome().iter().map(|y| y * c).collect()).unwrap();
        let a = estimate(&d, &ModelSpec::ols(), 0.05, 0).unwrap();
        let b = estimate(&scaled, &ModelSpec::ols(), 0.05, 0).unwrap();
        prop_assert!((b.ate - c * a.ate).abs() <= 1e-7 * (1.0 + (c * a.ate).abs()));
        if let (Some(la), Some(lb)) = (a.lift, b.lift) {
            prop_assert!((la - lb).abs() <= 1e-7 * (1.0 + la.abs()));
            let f = Forecast::linear(7, 1000, 1000, 700).unwrap();
            let ra = recommend_duration(&a, &f, 0.05, 0.05, 0.8).unwrap();
            let rb = recommend_duration(&b, &f, 0.05, 0.05, 0.8).unwrap();
            if let (Some(da), Some(db)) = (ra.day_found, rb.day_found) {
                prop_assert!(da.abs_diff(db) <= 1);
            }
        }
    }

    #[test]
    fn ols_invariant_to_affine_covariate_maps(d in dataset(), s in 0.5f64..3.0, t in -4.0f64..4.0) {
        let cov: Vec<f64> = d.covariates().iter().map(|z| s * z + t).collect();
        let moved = d.with_covariates(cov, d.covariate_names().to_vec(), 0).unwrap();
        let a = estimate(&d, &ModelSpec::ols(), 0.05, 0).unwrap();
        let b = estimate(&moved, &ModelSpec::ols(), 0.05, 0).unwrap();
        prop_assert!((a.ate - b.ate).abs() <= 1e-7 * (1.0 + a.ate.abs()));
    }

    #[test]
    fn excess_fraction_is_a_fraction(v in prop::collection::vec(-3.0f64..3.0, 1..50)) {
        let e = excess_frac(&v, 0.0);
        prop_assert!((0.0..=1.0).contains(&e));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn buckets_cover_every_split_once(d in dataset(), s in 5usize..60, kappa in 1usize..6, seed in any::<u64>()) {
        prop_assume!(d.arm_sizes().0 >= 4 && kappa <= s);
        let run = run_aa(&d, 0, &[ModelSpec::ols()], s, 0.05, seed).unwrap();
        let bm = bucket_metrics(&run, kappa).unwrap();
        let mut all: Vec<usize> = bm.buckets.iter().flat_map(|b| b.splits.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..s).collect::<Vec<_>>());
        let sizes: Vec<usize> = bm.buckets.iter().map(|b| b.size).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for b in &bm.buckets {
            for m in &b.models {
                if let Some(c) = m.coverage { prop_assert!((0.0..=1.0).contains(&c)); }
                if let Some(x) = m.mse { prop_assert!(x >= 0.0); }
            }
        }
    }
}

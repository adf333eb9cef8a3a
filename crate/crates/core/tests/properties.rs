use proptest::prelude::*;
use survkit::dataset::stratified_split;
use survkit::metrics::harrell_cindex;
use survkit::stats::benjamini_hochberg;
use survkit::survcore::{kaplan_meier, log_rank_test, nelson_aalen, SurvivalOutcome};
use survkit::tune::stratified_kfold;

fn outcomes() -> impl Strategy<Value = Vec<SurvivalOutcome<f64>>> {
    prop::collection::vec((1u32..40, any::<bool>()), 1..60)
        .prop_map(|v| v.into_iter().map(|(t, e)| SurvivalOutcome::new(t as f64, e)).collect())
}

fn scored() -> impl Strategy<Value = (Vec<SurvivalOutcome<f64>>, Vec<f64>)> {
    outcomes().prop_flat_map(|y| {
        let n = y.len();
        (Just(y), prop::collection::vec(-5i32..5, n).prop_map(|r| r.into_iter().map(f64::from).collect()))
    })
}

proptest! {
    #[test]
    fn km_is_a_survival_function(y in outcomes()) {
        let km = kaplan_meier(&y);
        let v = km.step.values();
        prop_assert!(v.iter().all(|s| (0.0..=1.0).contains(s)));
        prop_assert!(v.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(km.std_err.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn km_below_exp_minus_nelson_aalen(y in outcomes()) {
        let km = kaplan_meier(&y);
        let na = nelson_aalen(&y);
        prop_assert!(na.values().windows(2).all(|w| w[1] >= w[0]));
        for o in &y {
            prop_assert!(km.eval(o.time) <= (-na.eval(o.time)).exp() + 1e-12);
        }
    }

    #[test]
    fn km_f32_tracks_f64(y in outcomes()) {
        let y32: Vec<_> = y.iter().map(|o| SurvivalOutcome::new(o.time as f32, o.event)).collect();
        let a = kaplan_meier(&y);
        let b = kaplan_meier(&y32);
        for (x, z) in a.step.values().iter().zip(b.step.values()) {
            prop_assert!((x - *z as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn cindex_bounded_and_antisymmetric((y, r) in scored()) {
        match harrell_cindex(&r, &y) {
            Ok(c) => {
                prop_assert!((0.0..=1.0).contains(&c.c_index));
                let neg: Vec<f64> = r.iter().map(|v| -v).collect();
                let flipped = harrell_cindex(&neg, &y).unwrap();
                prop_assert!((c.c_index + flipped.c_index - 1.0).abs() < 1e-12);
            }
            Err(e) => prop_assert!(matches!(e, survkit::Error::NoComparablePairs), "{e}"),
        }
    }

    #[test]
    fn log_rank_symmetric(a in outcomes(), b in outcomes()) {
        let ab = log_rank_test(&a, &b);
        let ba = log_rank_test(&b, &a);
        prop_assert!((ab.statistic - ba.statistic).abs() < 1e-9 * (1.0 + ab.statistic));
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert!(ab.statistic >= 0.0);
    }

    #[test]
    fn bh_dominates_and_preserves_order(p in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let adj = benjamini_hochberg(&p);
        for i in 0..p.len() {
            prop_assert!(adj[i] >= p[i] && adj[i] <= 1.0);
            for j in 0..p.len() {
                if p[i] < p[j] {
                    prop_assert!(adj[i] <= adj[j]);
                }
            }
        }
    }

    #[test]
    fn split_is_stratified_partition(events in prop::collection::vec(any::<bool>(), 4..200), frac in 0.5f64..0.9, seed in any::<u64>()) {
        let n_ev = events.iter().filter(|&&e| e).count();
        prop_assume!(n_ev > 0 && n_ev < events.len());
        let s = stratified_split(&events, frac, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..events.len()).collect::<Vec<_>>());
        let train_ev = s.train.iter().filter(|&&i| events[i]).count();
        prop_assert_eq!(train_ev, (frac * n_ev as f64).round() as usize);
    }

    #[test]
    fn kfold_balanced(events in prop::collection::vec(any::<bool>(), 10..200), k in 2usize..6, seed in any::<u64>()) {
        let n_ev = events.iter().filter(|&&e| e).count();
        prop_assume!(n_ev >= k && events.len() - n_ev >= k);
        let f = stratified_kfold(&events, k, seed).unwrap();
        let sizes: Vec<usize> = f.folds.iter().map(Vec::len).collect();
        let evs: Vec<usize> = f.folds.iter().map(|g| g.iter().filter(|&&i| events[i]).count()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(evs.iter().max().unwrap() - evs.iter().min().unwrap() <= 1);
        prop_assert_eq!(sizes.iter().sum::<usize>(), events.len());
    }
}

use proptest::prelude::*;
use std::collections::{BTreeMap, HashSet};
use teamlens::analysis::{self, quantile_groups};
use teamlens::features::{FeatureConfig, FeatureTable, Scaler};
use teamlens::glm::{self, marginal_effects_at_mean, DesignMatrix, FitConfig};
use teamlens::match_data::{self, MatchRecord};
use teamlens::pipeline::featurize_halves;
use teamlens::simgen::{self, update_ratings, SyntheticConfig};
use teamlens::stats;
use teamlens::tp_effect::{self, ResidualOptions, TeamPlayerIndex};

fn small_world(seed: u64, players: usize) -> Vec<MatchRecord> {
    let cfg = SyntheticConfig {
        seed,
        n_players: players,
        solo_matches_per_player: 10.0,
        team_matches_per_player: 40.0,
        ..SyntheticConfig::default()
    };
    simgen::run_world(&cfg).unwrap().records
}

fn first_half(records: &[MatchRecord], seed: u64) -> FeatureTable {
    let (t1, _) = featurize_halves(records, seed, &FeatureConfig::default()).unwrap();
    let scaler = Scaler::fit(&t1);
    FeatureTable::standardize(t1, &scaler).unwrap()
}

fn brute_force_ks(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&x| (cdf(a, x) - cdf(b, x)).abs()).fold(0.0, f64::max)
}

fn logistic_data(seed: u64, n: usize, b1: f64) -> DesignMatrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let x: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let p = 1.0 / (1.0 + (-(b1 * x - 0.4 * z)).exp());
        y.push((rng.random::<f64>() < p) as u8);
        rows.push(vec![x, z]);
    }
    let cl: Vec<String> = (0..n).map(|i| format!("c{}", i % 25)).collect();
    DesignMatrix::from_rows(vec!["x".into(), "z".into()], &rows, &y, &cl).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn residuals_cancel_within_each_match(seed in 0u64..1_000, players in 16usize..28) {
        let t1 = first_half(&small_world(seed, players), seed);
        let suite = analysis::run_s1_suite(&t1);
        prop_assume!(suite.is_ok());
        let suite = suite.unwrap();
        let ledger = tp_effect::compute_residuals(
            &suite.get("S1.3").unwrap().model, &t1, ResidualOptions::default()).unwrap();
        let mut per_match: BTreeMap<&str, f64> = BTreeMap::new();
        for entries in ledger.entries.values() {
            for e in entries {
                prop_assert!(e.residual.abs() < 1.0);
                *per_match.entry(e.match_id.as_str()).or_default() += e.residual;
            }
        }
        prop_assert_eq!(per_match.len(), t1.rows.len());
        for (_, s) in per_match {
            prop_assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn qualified_players_shrink_as_threshold_grows(seed in 0u64..1_000, players in 16usize..28) {
        let t1 = first_half(&small_world(seed, players), seed);
        let suite = analysis::run_s1_suite(&t1);
        prop_assume!(suite.is_ok());
        let ledger = tp_effect::compute_residuals(
            &suite.unwrap().get("S1.3").unwrap().model, &t1, ResidualOptions::default()).unwrap();
        let counts: Vec<usize> = (0..60).map(|tau| TeamPlayerIndex::build(&ledger, tau).qualified_count()).collect();
        prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(counts[0], ledger.len());
    }

    #[test]
    fn runs_are_deterministic(seed in 0u64..1_000) {
        let a = small_world(seed, 16);
        let b = small_world(seed, 16);
        prop_assert_eq!(&a, &b);
        let fa = featurize_halves(&a, 3, &FeatureConfig::default()).unwrap();
        let fb = featurize_halves(&b, 3, &FeatureConfig::default()).unwrap();
        prop_assert_eq!(fa, fb);
    }

    #[test]
    fn splits_partition_the_log(seed in 0u64..1_000, split_seed in any::<u64>()) {
        let records = small_world(seed, 16);
        let s = match_data::split_dataset(&records, split_seed);
        prop_assert!(s.split_s.iter().all(|r| !r.mode.is_team()));
        prop_assert!(s.split_t1.iter().chain(&s.split_t2).all(|r| r.mode.is_team()));
        prop_assert!(s.split_t1.len() - s.split_t2.len() <= 1);
        let ids: HashSet<&str> = s.split_s.iter().chain(&s.split_t1).chain(&s.split_t2)
            .map(|r| r.match_id.as_str()).collect();
        prop_assert_eq!(ids.len(), records.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ks_statistic_equals_brute_force(
        a in prop::collection::vec(-20i32..20, 1..120),
        b in prop::collection::vec(-20i32..20, 1..120),
        scale in 0.1f64..3.0,
    ) {
        let a: Vec<f64> = a.iter().map(|v| *v as f64 * scale).collect();
        let b: Vec<f64> = b.iter().map(|v| *v as f64 * scale).collect();
        let ks = stats::ks_two_sample(&a, &b).unwrap();
        prop_assert!((ks.statistic - brute_force_ks(&a, &b)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ks.p_value));
    }

    #[test]
    fn quantile_groups_partition_in_value_order(values in prop::collection::vec(-50i32..50, 2..300), groups in 2usize..8) {
        let v: Vec<f64> = values.iter().map(|x| *x as f64).collect();
        match quantile_groups(&v, groups) {
            Ok((member, edges)) => {
                prop_assert_eq!(member.len(), v.len());
                prop_assert_eq!(edges.len(), groups - 1);
                prop_assert!(member.iter().all(|g| (1..=groups).contains(g)));
                for i in 0..v.len() {
                    for j in 0..v.len() {
                        if v[i] < v[j] {
                            prop_assert!(member[i] <= member[j]);
                        }
                        if v[i] == v[j] {
                            prop_assert_eq!(member[i], member[j]);
                        }
                    }
                }
            }
            Err(_) => prop_assert!(v.iter().all(|x| *x == v[0])),
        }
    }

    #[test]
    fn fitted_models_solve_the_score_equation(seed in any::<u64>(), n in 60usize..600, b1 in -2.0f64..2.0) {
        let d = logistic_data(seed, n, b1);
        if let Ok(m) = glm::fit_logistic(&d, &FitConfig::default()) {
            let s = glm::score(&d, &m.beta);
            prop_assert!(s[0].abs() < 1e-8 * n as f64);
            prop_assert!(s.iter().all(|g| g.abs() < 1e-6));
            prop_assert!(m.pseudo_r2 >= 0.0 && m.pseudo_r2 < 1.0);
        }
    }

    #[test]
    fn marginal_effect_without_interactions_is_beta_times_density(seed in any::<u64>(), b1 in -1.5f64..1.5) {
        let d = logistic_data(seed, 400, b1);
        let m = glm::fit_logistic(&d, &FitConfig::default()).unwrap();
        let means: BTreeMap<String, f64> = [("x".to_string(), 0.1), ("z".to_string(), -0.2)].into();
        let mem = marginal_effects_at_mean(&m, &means, &["x", "z"]).unwrap();
        let eta = m.beta[0] + m.beta[1] * 0.1 - m.beta[2] * 0.2;
        let p = 1.0 / (1.0 + (-eta).exp());
        prop_assert!((mem.rows[0].effect - m.beta[1] * p * (1.0 - p)).abs() < 1e-12);
        prop_assert!((mem.rows[1].effect - m.beta[2] * p * (1.0 - p)).abs() < 1e-12);
    }

    #[test]
    fn elo_updates_conserve_rating(a in 0.0f64..3000.0, b in 0.0f64..3000.0, won in any::<bool>(), k in 1.0f64..64.0) {
        let (na, nb) = update_ratings(a, b, won, k, 400.0);
        prop_assert!((na + nb - a - b).abs() < 1e-9);
        prop_assert_eq!(na > a, won);
    }
}

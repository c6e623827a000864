mod common;

use std::collections::BTreeMap;

use aidip::compliance::{apply_penalties, PenaltySchedule};
use aidip::money::Money;
use aidip::pricing::{
    base_fee, effective_compute, individualized_fee, DisutilityTable, FeePolicy, FeeSchedule,
    ScheduleParams,
};
use aidip::qf::{allocate, ideal_match, Contribution, Project, QfRound};
use aidip::survey::{
    endorsement_frequencies, kl_divergence, prediction_geomeans, prediction_score, score_round,
    Response,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn totals_sum_to_scaled_kl(seed: u64, n in 2usize..30, m in 2usize..6, alpha in prop::sample::select(vec![0.0, 0.5, 1.0, 2.0])) {
        let round = common::random_round(&mut seeded(seed), n, m, 2, alpha);
        let scores = score_round(&round).unwrap();
        for q in &round.questions {
            let xbar = endorsement_frequencies(&round, &q.id).unwrap();
            let ybar = prediction_geomeans(&round, &q.id).unwrap();
            let kl = kl_divergence(&xbar, &ybar);
            let of_q: Vec<_> = scores.iter().filter(|s| s.question_id == q.id).collect();
            let total: f64 = of_q.iter().map(|s| s.total).sum();
            let info: f64 = of_q.iter().map(|s| s.information_score).sum();
            prop_assert!((total - (1.0 - alpha) * n as f64 * kl).abs() < 1e-9);
            prop_assert!((info - n as f64 * kl).abs() < 1e-9);
            prop_assert!(info > -1e-12);
        }
    }

    #[test]
    fn prediction_score_is_a_penalty(seed: u64, n in 2usize..20, m in 2usize..6) {
        let round = common::random_round(&mut seeded(seed), n, m, 1, 1.0);
        for s in score_round(&round).unwrap() {
            prop_assert!(s.prediction_score <= 0.0);
        }
        let xbar = endorsement_frequencies(&round, &round.questions[0].id).unwrap();
        if xbar.iter().all(|x| (1e-6..=1.0 - 1e-6).contains(x)) {
            let exact = Response { prediction: xbar.clone(), ..round.responses[0].clone() };
            prop_assert_eq!(prediction_score(&exact, &xbar, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn scoring_is_pure(seed: u64) {
        let round = common::random_round(&mut seeded(seed), 7, 3, 3, 1.0);
        let a = score_round(&round).unwrap();
        let b = score_round(&round.clone()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn subsidies_are_non_negative_and_merging_never_helps(
        amounts in prop::collection::vec((0usize..6, 0usize..3, 1i64..5000), 1..25),
        links in prop::collection::vec((0usize..6, 0usize..6), 0..4),
        budget in 0i64..100_000,
    ) {
        let round = QfRound {
            projects: (0..3).map(|p| Project { id: format!("p{p}").into(), title: String::new(), proposer_ids: vec![] }).collect(),
            contributions: amounts.iter().map(|&(c, p, a)| Contribution {
                contributor_id: format!("c{c}").into(),
                project_id: format!("p{p}").into(),
                amount: Decimal::new(a, 2),
            }).collect(),
            matching_budget: Decimal::new(budget, 2),
            identity_links: vec![],
            money_unit: Default::default(),
        };
        let plain = allocate(&round).unwrap();
        for p in &plain.projects {
            prop_assert!(p.subsidy >= Money::ZERO);
            prop_assert!(p.ideal_match >= p.private_total);
            prop_assert!(p.scaled_subsidy <= p.subsidy);
        }
        prop_assert!(plain.total_scaled_subsidy <= round.matching_budget);

        let linked = QfRound {
            identity_links: links.iter().map(|&(a, b)| (format!("c{a}").into(), format!("c{b}").into())).collect(),
            ..round.clone()
        };
        let merged = allocate(&linked).unwrap();
        for (a, b) in merged.projects.iter().zip(&plain.projects) {
            prop_assert!(a.ideal_match <= b.ideal_match, "{} > {}", a.ideal_match, b.ideal_match);
            prop_assert_eq!(a.private_total, b.private_total);
        }
    }

    #[test]
    fn equal_shares_match_n_times_total(n in 1usize..12, cents in 1i64..1_000_000) {
        let share = Decimal::new(cents, 2);
        let amounts = vec![share; n];
        let total = share * Decimal::from(n);
        prop_assert_eq!(ideal_match(&amounts, Default::default()), total * Decimal::from(n));
    }

    #[test]
    fn fees_are_monotone_and_linear(
        steps in prop::collection::vec(prop::collection::vec(0.0f64..0.1, 2), 4),
        d in prop::collection::vec(1.0f64..1e12, 2),
        k in -8i32..8,
        c in 0.001f64..1000.0,
    ) {
        let probs: Vec<Vec<f64>> = steps.iter().scan(vec![0.0, 0.0], |acc, s| {
            for (a, x) in acc.iter_mut().zip(s) { *a = (*a + x).min(1.0); }
            Some(acc.clone())
        }).collect();
        let schedule = |scale: f64| -> FeeSchedule {
            serde_json::from_value(serde_json::json!({
                "tiers": [1e22, 1e23, 1e24, 1e25],
                "scenarios": ["a", "b"],
                "probabilities": probs,
                "disutilities": {"a": d[0] * scale, "b": d[1] * scale},
                "threshold": 1e22,
            })).unwrap()
        };
        let base = schedule(1.0);
        let pow2 = schedule(2f64.powi(k));
        let scaled = schedule(c);
        let mut last = 0.0;
        for i in 0..=60 {
            let ec = effective_compute(10f64.powf(22.0 + 3.0 * i as f64 / 60.0).clamp(1e22, 1e25), 1.0).unwrap();
            let fee = base_fee(&ec, &base).unwrap();
            prop_assert!(fee >= last);
            last = fee;
            prop_assert_eq!(base_fee(&ec, &pow2).unwrap(), fee * 2f64.powi(k));
            let f = base_fee(&ec, &scaled).unwrap();
            prop_assert!((f - c * fee).abs() <= 1e-12 * f.abs().max(1e-300));
        }
    }

    #[test]
    fn silenced_fee_ignores_own_response(seed: u64, n in 3usize..12, m in 2usize..5) {
        let mut rng = seeded(seed);
        let mut round = common::random_round(&mut rng, n, m, 3, 1.0);
        for q in &mut round.questions { q.scenario_id = "s".into(); }
        let params = ScheduleParams { tiers: vec![1e24, 1e25, 1e26], threshold: 1e23, discount_rate: 0.01, discount_cap: 0.05, extrapolate: false };
        let table = DisutilityTable(BTreeMap::from([("s".into(), 1e9)]));
        let dev = round.respondents[0].id.clone();
        let ec = effective_compute(3.3e24, 1.7).unwrap();
        let fee = |r: &aidip::survey::SurveyRound| {
            let schedule = FeeSchedule::publish(r, &params, &table).unwrap();
            individualized_fee(&dev, &ec, &schedule, r, FeePolicy::Silenced).unwrap().fee
        };
        let reference = fee(&round);
        for k in 0..m {
            for resp in round.responses.iter_mut().filter(|r| r.respondent_id == dev) {
                resp.endorsement = k;
                resp.prediction = common::random_prediction(&mut rng, m);
            }
            prop_assert_eq!(fee(&round).to_bits(), reference.to_bits());
        }
    }

    #[test]
    fn ledger_conserves(groups in prop::collection::vec(prop::collection::btree_set(0usize..15, 1..5), 0..4),
                        tips in prop::collection::btree_set(0usize..15, 0..4),
                        fine in 2i64..10_000_000, reward_frac in 1i64..100) {
        let reward = Decimal::new(fine, 0) * Decimal::new(reward_frac, 2);
        let schedule = PenaltySchedule { collusion_fine: Decimal::new(fine, 0), whistleblower_reward: reward };
        prop_assume!(reward > Decimal::ZERO && reward < schedule.collusion_fine);
        let groups: Vec<Vec<_>> = groups.iter().map(|g| g.iter().map(|i| format!("r{i}").into()).collect()).collect();
        let tips: Vec<_> = tips.iter().map(|i| format!("r{i}").into()).collect();
        let ledger = apply_penalties(&groups, &tips, &schedule).unwrap();
        let confirmed: std::collections::BTreeSet<_> = groups.iter().flatten().collect();
        let expected = schedule.collusion_fine * Decimal::from(confirmed.len()) - reward * Decimal::from(tips.len());
        prop_assert_eq!(ledger.total_debits - ledger.total_credits, expected);
        let net: Decimal = ledger.net.values().copied().sum();
        prop_assert_eq!(net, -expected);
    }
}

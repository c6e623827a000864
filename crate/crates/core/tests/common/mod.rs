//! Random inputs shared by the property and acceptance suites.
#![allow(dead_code)]

use aidip::survey::{Bucket, Question, Respondent, Response, Role, SurveyRound};
use rand::Rng;

pub fn even_buckets(m: usize) -> Vec<Bucket> {
    (0..m)
        .map(|k| {
            let lo = k as f64 / m as f64;
            let hi = (k + 1) as f64 / m as f64;
            Bucket::new(lo, hi, (lo + hi) / 2.0)
        })
        .collect()
}

pub fn question(id: &str, tier: usize, m: usize) -> Question {
    Question {
        id: id.into(),
        prompt: String::new(),
        scenario_id: "s".into(),
        compute_tier: tier,
        time_frame_years: 1.0,
        buckets: even_buckets(m),
    }
}

pub fn random_prediction(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.001..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Complete round with uniform endorsements and random predictions.
/// The first respondent is a developer.
pub fn random_round(
    rng: &mut impl Rng,
    n: usize,
    m: usize,
    questions: usize,
    alpha: f64,
) -> SurveyRound {
    let questions: Vec<Question> = (0..questions)
        .map(|q| question(&format!("q{q}"), q, m))
        .collect();
    let respondents: Vec<Respondent> = (0..n)
        .map(|i| Respondent {
            id: format!("r{i:02}").into(),
            role: if i == 0 {
                Role::Developer
            } else {
                Role::IndependentExpert
            },
            participation_history: rng.random_range(0..8),
        })
        .collect();
    let mut responses = Vec::new();
    for q in &questions {
        for r in &respondents {
            responses.push(Response {
                respondent_id: r.id.clone(),
                question_id: q.id.clone(),
                endorsement: rng.random_range(0..m),
                prediction: random_prediction(rng, m),
            });
        }
    }
    SurveyRound {
        interval_label: "test".into(),
        alpha,
        payout_scale: 1.0,
        pseudo_count: 0.0,
        questions,
        respondents,
        responses,
    }
}

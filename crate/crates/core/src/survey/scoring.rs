use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Respondent, Response, Role, SurveyRound};
use crate::error::{Error, Result};
use crate::ids::{QuestionId, RespondentId};

/// Predictions are clamped to `[PREDICTION_FLOOR, 1 - PREDICTION_FLOOR]`
/// before any logarithm is taken.
pub const PREDICTION_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtsScore {
    pub respondent_id: RespondentId,
    pub question_id: QuestionId,
    pub information_score: f64,
    pub prediction_score: f64,
    pub total: f64,
}

/// Clamps every entry into `[ε, 1 − ε]` and renormalizes. A vector that
/// needs no clamping is returned untouched.
pub fn clamp_prediction(prediction: &[f64]) -> Vec<f64> {
    let lo = PREDICTION_FLOOR;
    let hi = 1.0 - PREDICTION_FLOOR;
    if prediction.iter().all(|&p| (lo..=hi).contains(&p)) {
        return prediction.to_vec();
    }
    let clamped: Vec<f64> = prediction.iter().map(|&p| p.clamp(lo, hi)).collect();
    let sum: f64 = clamped.iter().sum();
    clamped.into_iter().map(|p| p / sum).collect()
}

/// `x̄_k = (count_k + δ) / (n + δ·m)`.
pub(crate) fn frequencies_of(
    responses: &[&Response],
    buckets: usize,
    pseudo_count: f64,
) -> Result<Vec<f64>> {
    let n = responses.len();
    if n < 2 {
        return Err(Error::TooFewRespondents(n));
    }
    let mut counts = vec![0usize; buckets];
    for r in responses {
        counts[r.endorsement] += 1;
    }
    let denom = n as f64 + pseudo_count * buckets as f64;
    Ok(counts
        .into_iter()
        .map(|c| (c as f64 + pseudo_count) / denom)
        .collect())
}

/// Geometric mean of clamped predictions, accumulated in log space.
pub(crate) fn geomeans_of(responses: &[&Response], buckets: usize) -> Result<Vec<f64>> {
    let n = responses.len();
    if n < 2 {
        return Err(Error::TooFewRespondents(n));
    }
    let mut log_sums = vec![0.0; buckets];
    for r in responses {
        for (acc, y) in log_sums.iter_mut().zip(clamp_prediction(&r.prediction)) {
            *acc += y.ln();
        }
    }
    Ok(log_sums.into_iter().map(|s| (s / n as f64).exp()).collect())
}

fn buckets_of(round: &SurveyRound, question_id: &QuestionId) -> Result<usize> {
    round
        .question(question_id)
        .map(|q| q.buckets.len())
        .ok_or_else(|| Error::InvalidRound(format!("unknown question `{question_id}`")))
}

/// Empirical endorsement frequencies for one question, smoothed with the
/// round's pseudo-count.
pub fn endorsement_frequencies(round: &SurveyRound, question_id: &QuestionId) -> Result<Vec<f64>> {
    endorsement_frequencies_excluding(round, question_id, None)
}

/// As [`endorsement_frequencies`], but computed as if `exclude` had not
/// responded.
pub fn endorsement_frequencies_excluding(
    round: &SurveyRound,
    question_id: &QuestionId,
    exclude: Option<&RespondentId>,
) -> Result<Vec<f64>> {
    let m = buckets_of(round, question_id)?;
    let mut responses = round.question_responses(question_id)?;
    if let Some(ex) = exclude {
        responses.retain(|r| &r.respondent_id != ex);
    }
    frequencies_of(&responses, m, round.pseudo_count)
}

pub fn prediction_geomeans(round: &SurveyRound, question_id: &QuestionId) -> Result<Vec<f64>> {
    let m = buckets_of(round, question_id)?;
    let responses = round.question_responses(question_id)?;
    geomeans_of(&responses, m)
}

/// `ln(x̄_k / ȳ_k)` for the endorsed bucket `k`.
pub fn information_score(response: &Response, xbar: &[f64], ybar: &[f64]) -> Result<f64> {
    let k = response.endorsement;
    let (x, y) = match (xbar.get(k), ybar.get(k)) {
        (Some(&x), Some(&y)) => (x, y),
        _ => {
            return Err(Error::InvalidFrequencies(format!(
                "endorsement {k} outside frequency vectors"
            )))
        }
    };
    if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
        return Err(Error::InvalidFrequencies(format!(
            "bucket {k} has x̄ = {x}, ȳ = {y}"
        )));
    }
    Ok((x / y).ln())
}

/// `α · Σ_k x̄_k · ln(y_k / x̄_k)` over the clamped prediction. Buckets
/// nobody endorsed contribute nothing.
pub fn prediction_score(response: &Response, xbar: &[f64], alpha: f64) -> Result<f64> {
    if xbar.len() != response.prediction.len() {
        return Err(Error::InvalidFrequencies(format!(
            "prediction has {} entries, frequencies {}",
            response.prediction.len(),
            xbar.len()
        )));
    }
    let y = clamp_prediction(&response.prediction);
    let mut sum = 0.0;
    for (&x, y) in xbar.iter().zip(y) {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidFrequencies(format!("x̄ entry {x}")));
        }
        if x > 0.0 {
            sum += x * (y / x).ln();
        }
    }
    Ok(alpha * sum)
}

/// Scores of every respondent on one question, in roster order.
pub fn score_question(round: &SurveyRound, question_id: &QuestionId) -> Result<Vec<BtsScore>> {
    let m = buckets_of(round, question_id)?;
    let responses = round.question_responses(question_id)?;
    let xbar = frequencies_of(&responses, m, round.pseudo_count)?;
    let ybar = geomeans_of(&responses, m)?;
    responses
        .iter()
        .map(|r| {
            let information_score = information_score(r, &xbar, &ybar)?;
            let prediction_score = prediction_score(r, &xbar, round.alpha)?;
            Ok(BtsScore {
                respondent_id: r.respondent_id.clone(),
                question_id: question_id.clone(),
                information_score,
                prediction_score,
                total: information_score + prediction_score,
            })
        })
        .collect()
}

/// Scores for the whole round, question-major then roster order.
pub fn score_round(round: &SurveyRound) -> Result<Vec<BtsScore>> {
    let mut out = Vec::with_capacity(round.questions.len() * round.respondents.len());
    for q in &round.questions {
        out.extend(score_question(round, &q.id)?);
    }
    Ok(out)
}

/// How summed scores turn into money.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoutRule {
    pub scale: f64,
    /// Lowest payout; `None` lets respondents owe money.
    #[serde(default)]
    pub floor: Option<f64>,
    /// Only pay respondents holding one of these roles.
    #[serde(default)]
    pub roles: Option<Vec<Role>>,
}

impl PayoutRule {
    pub fn scaled(scale: f64) -> Self {
        Self {
            scale,
            floor: None,
            roles: None,
        }
    }
}

/// `scale × Σ_questions total`, per respondent.
pub fn payouts(
    scores: &[BtsScore],
    respondents: &[Respondent],
    rule: &PayoutRule,
) -> BTreeMap<RespondentId, f64> {
    let eligible = |id: &RespondentId| match &rule.roles {
        None => true,
        Some(roles) => respondents
            .iter()
            .find(|r| &r.id == id)
            .is_some_and(|r| roles.contains(&r.role)),
    };
    let mut totals: BTreeMap<RespondentId, f64> = BTreeMap::new();
    for s in scores.iter().filter(|s| eligible(&s.respondent_id)) {
        *totals.entry(s.respondent_id.clone()).or_insert(0.0) += s.total;
    }
    totals
        .into_iter()
        .map(|(id, total)| {
            let pay = rule.scale * total;
            let pay = match rule.floor {
                Some(floor) => pay.max(floor),
                None => pay,
            };
            (id, pay)
        })
        .collect()
}

/// `KL(p ‖ q) = Σ p_k ln(p_k / q_k)` with `0 · ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p / q).ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::{Bucket, Question};
    use approx::assert_abs_diff_eq;

    fn question(id: &str, m: usize) -> Question {
        let w = 1.0 / m as f64;
        Question {
            id: id.into(),
            prompt: String::new(),
            scenario_id: "s".into(),
            compute_tier: 0,
            time_frame_years: 1.0,
            buckets: (0..m)
                .map(|k| {
                    let hi = if k + 1 == m { 1.0 } else { (k + 1) as f64 * w };
                    Bucket::new(k as f64 * w, hi, (k as f64 + 0.5) * w)
                })
                .collect(),
        }
    }

    fn round_of(answers: &[(usize, Vec<f64>)], alpha: f64, delta: f64) -> SurveyRound {
        let m = answers[0].1.len();
        SurveyRound {
            interval_label: String::new(),
            alpha,
            payout_scale: 1.0,
            pseudo_count: delta,
            questions: vec![question("q", m)],
            respondents: (0..answers.len())
                .map(|i| Respondent {
                    id: format!("r{i}").into(),
                    role: Role::IndependentExpert,
                    participation_history: 0,
                })
                .collect(),
            responses: answers
                .iter()
                .enumerate()
                .map(|(i, (k, y))| Response {
                    respondent_id: format!("r{i}").into(),
                    question_id: "q".into(),
                    endorsement: *k,
                    prediction: y.clone(),
                })
                .collect(),
        }
    }

    fn three() -> SurveyRound {
        round_of(
            &[
                (0, vec![0.7, 0.3]),
                (0, vec![0.6, 0.4]),
                (1, vec![0.5, 0.5]),
            ],
            1.0,
            0.0,
        )
    }

    #[test]
    fn frequencies_count_endorsements() {
        let r = three();
        let x = endorsement_frequencies(&r, &"q".into()).unwrap();
        assert_eq!(x, vec![2.0 / 3.0, 1.0 / 3.0]);

        let unanimous = round_of(&[(0, vec![0.5, 0.5]), (0, vec![0.5, 0.5])], 1.0, 0.0);
        assert_eq!(
            endorsement_frequencies(&unanimous, &"q".into()).unwrap(),
            vec![1.0, 0.0]
        );

        let mut smoothed = three();
        smoothed.pseudo_count = 1.0;
        let x = endorsement_frequencies(&smoothed, &"q".into()).unwrap();
        assert_abs_diff_eq!(x[0], 3.0 / 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 2.0 / 5.0, epsilon = 1e-15);
    }

    #[test]
    fn frequencies_need_two_complete_respondents() {
        let one = round_of(&[(0, vec![0.5, 0.5])], 1.0, 0.0);
        assert_eq!(
            endorsement_frequencies(&one, &"q".into())
                .unwrap_err()
                .kind(),
            "too-few-respondents"
        );
        let mut r = three();
        r.responses.pop();
        assert_eq!(
            endorsement_frequencies(&r, &"q".into()).unwrap_err().kind(),
            "incomplete-round"
        );
    }

    #[test]
    fn geomeans_match_high_precision_values() {
        let y = prediction_geomeans(&three(), &"q".into()).unwrap();
        assert_abs_diff_eq!(y[0], 0.594_392_195_276_313, epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], 0.391_486_764_116_886, epsilon = 1e-12);

        let flat = round_of(&[(0, vec![0.5, 0.5]), (1, vec![0.5, 0.5])], 1.0, 0.0);
        let y = prediction_geomeans(&flat, &"q".into()).unwrap();
        assert_abs_diff_eq!(y[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn geomean_uses_clamped_floor() {
        let r = round_of(&[(0, vec![0.0, 1.0]), (1, vec![0.5, 0.5])], 1.0, 0.0);
        let y = prediction_geomeans(&r, &"q".into()).unwrap();
        assert_abs_diff_eq!(y[0], (PREDICTION_FLOOR * 0.5).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn clamp_leaves_interior_vectors_alone() {
        let y = vec![0.25, 0.75];
        assert_eq!(clamp_prediction(&y), y);
        let c = clamp_prediction(&[1.0, 0.0, 0.0]);
        assert!(c.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_abs_diff_eq!(c.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn information_scores_of_worked_round() {
        let r = three();
        let scores = score_question(&r, &"q".into()).unwrap();
        assert_abs_diff_eq!(
            scores[0].information_score,
            0.114_750_807_980_058,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            scores[2].information_score,
            -0.160_808_716_414_764,
            epsilon = 1e-12
        );
    }

    #[test]
    fn unanimous_certain_round_scores_near_zero() {
        let r = round_of(
            &[
                (0, vec![1.0, 0.0]),
                (0, vec![1.0, 0.0]),
                (0, vec![1.0, 0.0]),
            ],
            1.0,
            0.0,
        );
        for s in score_round(&r).unwrap() {
            assert_abs_diff_eq!(
                s.information_score,
                -(1.0 - PREDICTION_FLOOR).ln(),
                epsilon = 1e-15
            );
            assert_abs_diff_eq!(s.total, 0.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn prediction_score_examples() {
        let xbar = [2.0 / 3.0, 1.0 / 3.0];
        let resp = |y: Vec<f64>| Response {
            respondent_id: "r".into(),
            question_id: "q".into(),
            endorsement: 0,
            prediction: y,
        };
        let s = prediction_score(&resp(vec![0.7, 0.3]), &xbar, 1.0).unwrap();
        assert_abs_diff_eq!(s, -0.002_593_395_772_987_43, epsilon = 1e-12);
        assert_eq!(
            prediction_score(&resp(xbar.to_vec()), &xbar, 1.0).unwrap(),
            0.0
        );
        assert_eq!(
            prediction_score(&resp(vec![0.9, 0.1]), &xbar, 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn zero_frequency_reaching_information_score_is_an_error() {
        let resp = Response {
            respondent_id: "r".into(),
            question_id: "q".into(),
            endorsement: 1,
            prediction: vec![0.5, 0.5],
        };
        let err = information_score(&resp, &[1.0, 0.0], &[0.5, 0.5]).unwrap_err();
        assert_eq!(err.kind(), "invalid-frequencies");
        let err = prediction_score(&resp, &[1.5, -0.5], 1.0).unwrap_err();
        assert_eq!(err.kind(), "invalid-frequencies");
    }

    #[test]
    fn worked_round_is_zero_sum() {
        let total: f64 = score_round(&three()).unwrap().iter().map(|s| s.total).sum();
        assert_abs_diff_eq!(total, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_responses_score_zero() {
        let r = round_of(
            &[
                (1, vec![0.2, 0.8]),
                (1, vec![0.2, 0.8]),
                (1, vec![0.2, 0.8]),
            ],
            1.0,
            0.0,
        );
        for s in score_round(&r).unwrap() {
            // x̄ = (0, 1), ȳ = (0.2, 0.8): info = ln(1/0.8), pred = ln(0.8)
            assert_abs_diff_eq!(s.total, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_alpha_totals_are_information_scores() {
        let mut r = three();
        r.alpha = 0.0;
        for s in score_round(&r).unwrap() {
            assert_eq!(s.total, s.information_score);
        }
    }

    #[test]
    fn payout_rules() {
        let r = three();
        let scores = score_round(&r).unwrap();
        let zero = payouts(&scores, &r.respondents, &PayoutRule::scaled(0.0));
        assert!(zero.values().all(|&p| p == 0.0));

        let single = [BtsScore {
            respondent_id: "r0".into(),
            question_id: "q".into(),
            information_score: 0.11474,
            prediction_score: 0.0,
            total: 0.11474,
        }];
        let p = payouts(&single, &r.respondents, &PayoutRule::scaled(1000.0));
        assert_abs_diff_eq!(p[&RespondentId::from("r0")], 114.74, epsilon = 1e-9);

        let negative = [BtsScore {
            total: -0.5,
            ..single[0].clone()
        }];
        let floored = PayoutRule {
            scale: 1.0,
            floor: Some(0.0),
            roles: None,
        };
        assert_eq!(
            payouts(&negative, &r.respondents, &floored)[&RespondentId::from("r0")],
            0.0
        );
        let unfloored = payouts(&negative, &r.respondents, &PayoutRule::scaled(1.0));
        assert_eq!(unfloored[&RespondentId::from("r0")], -0.5);

        let devs_only = PayoutRule {
            scale: 1.0,
            floor: None,
            roles: Some(vec![Role::Developer]),
        };
        assert!(payouts(&scores, &r.respondents, &devs_only).is_empty());
    }

    #[test]
    fn kl_handles_zero_mass() {
        assert_eq!(kl_divergence(&[1.0, 0.0], &[1.0, 0.5]), 0.0);
        assert_abs_diff_eq!(
            kl_divergence(
                &[2.0 / 3.0, 1.0 / 3.0],
                &[0.594_392_195_276_313, 0.391_486_764_116_886]
            ),
            0.022_897_633_181_784_2,
            epsilon = 1e-12
        );
    }
}

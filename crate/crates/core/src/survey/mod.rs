//! Survey rounds and Bayesian Truth Serum scoring.
//!
//! A round asks every respondent every question. Each answer is an
//! endorsement of one probability bucket plus a predicted distribution of
//! how the other respondents will answer.

mod scoring;

pub use scoring::{
    clamp_prediction, endorsement_frequencies, endorsement_frequencies_excluding,
    information_score, kl_divergence, payouts, prediction_geomeans, prediction_score,
    score_question, score_round, BtsScore, PayoutRule, PREDICTION_FLOOR,
};

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{QuestionId, RespondentId, ScenarioId};

/// Tolerance on the sum of a submitted prediction vector.
pub const PREDICTION_SUM_TOLERANCE: f64 = 1e-9;

/// Probability interval `[lo, hi)` with a representative value. The last
/// bucket of a question is closed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    pub midpoint: f64,
}

impl Bucket {
    pub fn new(lo: f64, hi: f64, midpoint: f64) -> Self {
        Self { lo, hi, midpoint }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    #[serde(default)]
    pub prompt: String,
    pub scenario_id: ScenarioId,
    /// Index into the ordered effective-compute tiers of the fee schedule.
    pub compute_tier: usize,
    #[serde(default = "default_time_frame")]
    pub time_frame_years: f64,
    pub buckets: Vec<Bucket>,
}

fn default_time_frame() -> f64 {
    1.0
}

impl Question {
    /// Buckets must be ordered, disjoint, contiguous over `[0, 1]`, at least
    /// two of them, with each midpoint inside its own interval.
    pub fn validate(&self) -> Result<()> {
        let id = &self.id;
        if self.buckets.len() < 2 {
            return Err(Error::InvalidRound(format!(
                "question `{id}` needs at least 2 buckets"
            )));
        }
        if !(self.time_frame_years.is_finite() && self.time_frame_years > 0.0) {
            return Err(Error::InvalidRound(format!(
                "question `{id}` has a non-positive time frame"
            )));
        }
        let first = self.buckets[0];
        let last = self.buckets[self.buckets.len() - 1];
        if first.lo != 0.0 || last.hi != 1.0 {
            return Err(Error::InvalidRound(format!(
                "question `{id}` buckets must cover [0, 1]"
            )));
        }
        for (k, b) in self.buckets.iter().enumerate() {
            let is_last = k + 1 == self.buckets.len();
            let in_range = b.lo.is_finite() && b.hi.is_finite() && b.lo < b.hi;
            let mid_inside =
                b.midpoint >= b.lo && (b.midpoint < b.hi || (is_last && b.midpoint <= b.hi));
            if !in_range || !mid_inside {
                return Err(Error::InvalidRound(format!(
                    "question `{id}` bucket {k} is malformed: [{}, {}) midpoint {}",
                    b.lo, b.hi, b.midpoint
                )));
            }
            if k > 0 && self.buckets[k - 1].hi != b.lo {
                return Err(Error::InvalidRound(format!(
                    "question `{id}` buckets {} and {k} are not contiguous",
                    k - 1
                )));
            }
        }
        Ok(())
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.buckets.iter().map(|b| b.midpoint).collect()
    }

    /// Index of the bucket containing probability `p`.
    pub fn bucket_of(&self, p: f64) -> Option<usize> {
        let last = self.buckets.len().checked_sub(1)?;
        self.buckets
            .iter()
            .position(|b| p >= b.lo && p < b.hi)
            .or_else(|| (p == self.buckets[last].hi).then_some(last))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Developer,
    IndependentExpert,
    Insurer,
    Agency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Respondent {
    pub id: RespondentId,
    pub role: Role,
    /// Consecutive prior surveys participated in.
    #[serde(default)]
    pub participation_history: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub respondent_id: RespondentId,
    pub question_id: QuestionId,
    /// Index of the endorsed bucket.
    pub endorsement: usize,
    /// Predicted share of respondents endorsing each bucket.
    pub prediction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRound {
    #[serde(default)]
    pub interval_label: String,
    /// Weight of the prediction score.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Money per score unit.
    #[serde(default)]
    pub payout_scale: f64,
    /// Additive pseudo-count applied to endorsement counts.
    #[serde(default)]
    pub pseudo_count: f64,
    pub questions: Vec<Question>,
    pub respondents: Vec<Respondent>,
    #[serde(default)]
    pub responses: Vec<Response>,
}

fn default_alpha() -> f64 {
    1.0
}

impl SurveyRound {
    pub fn question(&self, id: &QuestionId) -> Option<&Question> {
        self.questions.iter().find(|q| &q.id == id)
    }

    pub fn respondent(&self, id: &RespondentId) -> Option<&Respondent> {
        self.respondents.iter().find(|r| &r.id == id)
    }

    /// Structural checks: unique ids, well-formed questions, and responses
    /// that reference known parties with valid endorsements and predictions.
    /// Completeness is checked separately.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("payout_scale", self.payout_scale),
            ("pseudo_count", self.pseudo_count),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidRound(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        let mut qids = HashSet::new();
        for q in &self.questions {
            q.validate()?;
            if !qids.insert(&q.id) {
                return Err(Error::InvalidRound(format!(
                    "duplicate question id `{}`",
                    q.id
                )));
            }
        }
        let mut rids = HashSet::new();
        for r in &self.respondents {
            if !rids.insert(&r.id) {
                return Err(Error::InvalidRound(format!(
                    "duplicate respondent id `{}`",
                    r.id
                )));
            }
        }
        let mut seen = HashSet::new();
        for resp in &self.responses {
            let q = self.question(&resp.question_id).ok_or_else(|| {
                Error::InvalidRound(format!(
                    "response to unknown question `{}`",
                    resp.question_id
                ))
            })?;
            if !rids.contains(&resp.respondent_id) {
                return Err(Error::InvalidRound(format!(
                    "response from unknown respondent `{}`",
                    resp.respondent_id
                )));
            }
            if !seen.insert((&resp.respondent_id, &resp.question_id)) {
                return Err(Error::InvalidRound(format!(
                    "duplicate response from `{}` to `{}`",
                    resp.respondent_id, resp.question_id
                )));
            }
            validate_response(resp, q.buckets.len())?;
        }
        Ok(())
    }

    /// True when every respondent answered every question exactly once.
    pub fn is_complete(&self) -> bool {
        self.questions
            .iter()
            .all(|q| self.question_responses(&q.id).is_ok())
    }

    /// Responses to one question in roster order.
    ///
    /// Fails with `incomplete-round` unless every respondent answered it
    /// exactly once.
    pub fn question_responses(&self, question_id: &QuestionId) -> Result<Vec<&Response>> {
        if self.question(question_id).is_none() {
            return Err(Error::InvalidRound(format!(
                "unknown question `{question_id}`"
            )));
        }
        let mut by_respondent: HashMap<&RespondentId, &Response> = HashMap::new();
        for resp in self
            .responses
            .iter()
            .filter(|r| &r.question_id == question_id)
        {
            if by_respondent.insert(&resp.respondent_id, resp).is_some() {
                return Err(Error::InvalidRound(format!(
                    "duplicate response from `{}` to `{question_id}`",
                    resp.respondent_id
                )));
            }
        }
        let mut ordered = Vec::with_capacity(self.respondents.len());
        for r in &self.respondents {
            match by_respondent.remove(&r.id) {
                Some(resp) => ordered.push(resp),
                None => {
                    return Err(Error::IncompleteRound(format!(
                        "`{}` has no response to `{question_id}`",
                        r.id
                    )))
                }
            }
        }
        if let Some(stray) = by_respondent.keys().next() {
            return Err(Error::InvalidRound(format!(
                "response from unknown respondent `{stray}`"
            )));
        }
        Ok(ordered)
    }
}

fn validate_response(resp: &Response, buckets: usize) -> Result<()> {
    let who = || format!("`{}` on `{}`", resp.respondent_id, resp.question_id);
    if resp.endorsement >= buckets {
        return Err(Error::InvalidRound(format!(
            "{}: endorsement {} out of range for {buckets} buckets",
            who(),
            resp.endorsement
        )));
    }
    if resp.prediction.len() != buckets {
        return Err(Error::InvalidRound(format!(
            "{}: prediction has {} entries, expected {buckets}",
            who(),
            resp.prediction.len()
        )));
    }
    if resp
        .prediction
        .iter()
        .any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
    {
        return Err(Error::InvalidRound(format!(
            "{}: prediction entries must lie in [0, 1]",
            who()
        )));
    }
    let sum: f64 = resp.prediction.iter().sum();
    if (sum - 1.0).abs() > PREDICTION_SUM_TOLERANCE {
        return Err(Error::InvalidRound(format!(
            "{}: prediction sums to {sum}, not 1",
            who()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bucket_question(id: &str) -> Question {
        Question {
            id: id.into(),
            prompt: String::new(),
            scenario_id: "s".into(),
            compute_tier: 0,
            time_frame_years: 1.0,
            buckets: vec![Bucket::new(0.0, 0.5, 0.25), Bucket::new(0.5, 1.0, 0.75)],
        }
    }

    fn round() -> SurveyRound {
        SurveyRound {
            interval_label: "2026".into(),
            alpha: 1.0,
            payout_scale: 1.0,
            pseudo_count: 0.0,
            questions: vec![two_bucket_question("q")],
            respondents: ["a", "b"]
                .iter()
                .map(|id| Respondent {
                    id: (*id).into(),
                    role: Role::IndependentExpert,
                    participation_history: 0,
                })
                .collect(),
            responses: vec![],
        }
    }

    fn resp(who: &str, k: usize, y: Vec<f64>) -> Response {
        Response {
            respondent_id: who.into(),
            question_id: "q".into(),
            endorsement: k,
            prediction: y,
        }
    }

    #[test]
    fn bucket_layout_is_checked() {
        let mut q = two_bucket_question("q");
        assert!(q.validate().is_ok());
        q.buckets[1].lo = 0.6;
        assert!(q.validate().is_err());
        let mut q = two_bucket_question("q");
        q.buckets[0].midpoint = 0.5;
        assert!(q.validate().is_err());
        let mut q = two_bucket_question("q");
        q.buckets.pop();
        assert!(q.validate().is_err());
    }

    #[test]
    fn bucket_lookup_closes_last_interval() {
        let q = two_bucket_question("q");
        assert_eq!(q.bucket_of(0.0), Some(0));
        assert_eq!(q.bucket_of(0.5), Some(1));
        assert_eq!(q.bucket_of(1.0), Some(1));
        assert_eq!(q.bucket_of(1.5), None);
    }

    #[test]
    fn incomplete_and_duplicate_responses() {
        let mut r = round();
        r.responses.push(resp("a", 0, vec![0.5, 0.5]));
        assert!(r.validate().is_ok());
        assert!(!r.is_complete());
        let err = r.question_responses(&"q".into()).unwrap_err();
        assert_eq!(err.kind(), "incomplete-round");

        r.responses.push(resp("b", 1, vec![0.5, 0.5]));
        assert!(r.is_complete());
        r.responses.push(resp("b", 1, vec![0.5, 0.5]));
        assert_eq!(r.validate().unwrap_err().kind(), "invalid-round");
    }

    #[test]
    fn malformed_predictions_rejected() {
        let mut r = round();
        r.responses.push(resp("a", 0, vec![0.7, 0.4]));
        assert!(r.validate().is_err());
        let mut r = round();
        r.responses.push(resp("a", 2, vec![0.5, 0.5]));
        assert!(r.validate().is_err());
        let mut r = round();
        r.responses.push(resp("zed", 0, vec![0.5, 0.5]));
        assert!(r.validate().is_err());
    }
}

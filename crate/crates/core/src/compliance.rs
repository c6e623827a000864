//! Collusion screening for survey respondents, fine and whistleblower
//! accounting, and the private-poll blackout before a survey.
//!
//! Detection only produces advisory flags. Money moves in
//! [`apply_penalties`], which takes externally confirmed groups.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::components;
use crate::ids::RespondentId;
use crate::money::Money;
use crate::qf::FundingCollusionFlag;
use crate::survey::{Response, SurveyRound};

pub const DEFAULT_BLACKOUT_DAYS: i64 = 30;
pub const PRIVATE_POLL: &str = "private-poll";

const SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentCollusionFlag {
    pub respondents: Vec<RespondentId>,
    /// Lowest pairwise endorsement agreement rate inside the group.
    pub agreement: f64,
    /// Largest pairwise mean L1 distance between predictions.
    pub prediction_distance: f64,
    /// Share of questions on which the group answered alike and nobody
    /// outside it gave a matching answer.
    pub exclusivity: f64,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Flags groups of respondents that answer in lockstep.
///
/// Pairs are linked when their endorsement agreement rate across questions
/// is at least `threshold` and their predictions are on average within L1
/// distance `1 − threshold`. Each linked component is flagged when, on at
/// least a `threshold` share of questions, its members answered alike and no
/// outsider matched that answer. Honest respondents who share a signal
/// give the same answer as every other respondent with that signal, so the
/// exclusivity condition separates them from a coalition answering in a
/// way nobody else does.
pub fn detect_respondent_collusion(
    round: &SurveyRound,
    threshold: f64,
) -> Result<Vec<RespondentCollusionFlag>> {
    if round.questions.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "collusion screening needs at least 2 questions, round has {}",
            round.questions.len()
        )));
    }
    let tolerance = (1.0 - threshold).max(0.0);
    // answers[q][i]
    let answers: Vec<Vec<&Response>> = round
        .questions
        .iter()
        .map(|q| round.question_responses(&q.id))
        .collect::<Result<_>>()?;
    let n = round.respondents.len();
    let nq = answers.len() as f64;

    let mut edges = Vec::new();
    let mut pair_stats: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            let agree = answers
                .iter()
                .filter(|qa| qa[i].endorsement == qa[j].endorsement)
                .count() as f64
                / nq;
            let dist = answers
                .iter()
                .map(|qa| l1(&qa[i].prediction, &qa[j].prediction))
                .sum::<f64>()
                / nq;
            if agree + SLACK >= threshold && dist <= tolerance + SLACK {
                edges.push((i, j));
                pair_stats.insert((i, j), (agree, dist));
            }
        }
    }

    let mut flags = Vec::new();
    for group in components(n, &edges) {
        let members: HashSet<usize> = group.iter().copied().collect();
        let exclusive = answers
            .iter()
            .filter(|qa| {
                let lead = qa[group[0]];
                let alike = group.iter().all(|&g| {
                    qa[g].endorsement == lead.endorsement
                        && l1(&qa[g].prediction, &lead.prediction) <= tolerance + SLACK
                });
                let matched_outside = (0..n).filter(|k| !members.contains(k)).any(|k| {
                    qa[k].endorsement == lead.endorsement
                        && l1(&qa[k].prediction, &lead.prediction) <= tolerance + SLACK
                });
                alike && !matched_outside
            })
            .count() as f64
            / nq;
        if exclusive + SLACK < threshold {
            continue;
        }
        let inside = pair_stats.iter().filter(|((a, _), _)| members.contains(a));
        let (agreement, prediction_distance) = inside
            .fold((f64::INFINITY, 0.0f64), |(ag, d), (_, &(a, dd))| {
                (ag.min(a), d.max(dd))
            });
        flags.push(RespondentCollusionFlag {
            respondents: group
                .iter()
                .map(|&g| round.respondents[g].id.clone())
                .collect(),
            agreement,
            prediction_distance,
            exclusivity: exclusive,
        });
    }
    Ok(flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub collusion_fine: Money,
    pub whistleblower_reward: Money,
}

impl PenaltySchedule {
    /// Both amounts positive, and the reward strictly below the fine.
    pub fn validate(&self) -> Result<()> {
        if self.collusion_fine <= Money::ZERO || self.whistleblower_reward <= Money::ZERO {
            return Err(Error::InvalidPenalties(
                "fine and reward must be positive".into(),
            ));
        }
        if self.whistleblower_reward >= self.collusion_fine {
            return Err(Error::InvalidPenalties(format!(
                "whistleblower reward {} must be below the collusion fine {}",
                self.whistleblower_reward, self.collusion_fine
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerKind {
    CollusionFine,
    WhistleblowerReward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerItem {
    pub respondent_id: RespondentId,
    pub kind: LedgerKind,
    /// Negative for fines, positive for rewards.
    pub amount: Money,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub items: Vec<LedgerItem>,
    pub net: BTreeMap<RespondentId, Money>,
    pub total_debits: Money,
    pub total_credits: Money,
}

/// Fines each confirmed colluder once and rewards each whistleblower once.
/// A whistleblower who is also a confirmed colluder gets both line items.
pub fn apply_penalties(
    confirmed_groups: &[Vec<RespondentId>],
    whistleblowers: &[RespondentId],
    schedule: &PenaltySchedule,
) -> Result<Ledger> {
    schedule.validate()?;
    let colluders: BTreeSet<&RespondentId> = confirmed_groups.iter().flatten().collect();
    let tipsters: BTreeSet<&RespondentId> = whistleblowers.iter().collect();
    let mut ledger = Ledger::default();
    for id in colluders {
        ledger.items.push(LedgerItem {
            respondent_id: id.clone(),
            kind: LedgerKind::CollusionFine,
            amount: -schedule.collusion_fine,
        });
        ledger.total_debits += schedule.collusion_fine;
    }
    for id in tipsters {
        ledger.items.push(LedgerItem {
            respondent_id: id.clone(),
            kind: LedgerKind::WhistleblowerReward,
            amount: schedule.whistleblower_reward,
        });
        ledger.total_credits += schedule.whistleblower_reward;
    }
    for item in &ledger.items {
        *ledger
            .net
            .entry(item.respondent_id.clone())
            .or_insert(Money::ZERO) += item.amount;
    }
    Ok(ledger)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub actor: String,
    pub kind: String,
    pub timestamp: DateTime<Utc>,
}

/// One JSON object per line; blank lines are skipped.
pub fn parse_event_log(text: &str) -> Result<Vec<Event>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::InvalidEventLog {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollViolation {
    pub actor: String,
    pub timestamp: DateTime<Utc>,
    pub days_before_survey: f64,
}

/// Private polls by indemnified actors inside `[survey − blackout, survey)`.
/// With `indemnified = None` every actor is checked.
pub fn check_pre_survey_poll_bar(
    events: &[Event],
    survey_date: DateTime<Utc>,
    blackout_days: i64,
    indemnified: Option<&[String]>,
) -> Vec<PollViolation> {
    let start = survey_date - Duration::days(blackout_days);
    events
        .iter()
        .filter(|e| e.kind == PRIVATE_POLL)
        .filter(|e| indemnified.is_none_or(|set| set.contains(&e.actor)))
        .filter(|e| e.timestamp >= start && e.timestamp < survey_date)
        .map(|e| PollViolation {
            actor: e.actor.clone(),
            timestamp: e.timestamp,
            days_before_survey: (survey_date - e.timestamp).num_seconds() as f64 / 86_400.0,
        })
        .collect()
}

/// Everything the detection pass produced for one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub flagged_groups: Vec<RespondentCollusionFlag>,
    pub funding_flags: Vec<FundingCollusionFlag>,
    pub ledger: Ledger,
    pub poll_violations: Vec<PollViolation>,
}

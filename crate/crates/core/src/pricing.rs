//! Risk-priced indemnity fees over effective compute.
//!
//! Survey answers are aggregated into one probability per (compute tier,
//! scenario). A fee is the expected loss `Σ P̂ × disutility`, with `P̂`
//! interpolated piecewise-linearly in log effective compute between tiers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{RespondentId, ScenarioId};
use crate::survey::{endorsement_frequencies_excluding, SurveyRound};

pub const DEFAULT_DISCOUNT_RATE: f64 = 0.01;
pub const DEFAULT_DISCOUNT_CAP: f64 = 0.05;

/// Training FLOPs times an algorithmic efficiency factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCompute {
    pub flops: f64,
    pub efficiency_factor: f64,
    pub value: f64,
}

pub fn effective_compute(flops: f64, efficiency_factor: f64) -> Result<EffectiveCompute> {
    for (name, v) in [("flops", flops), ("efficiency factor", efficiency_factor)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidCompute(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    let value = flops * efficiency_factor;
    if !value.is_finite() {
        return Err(Error::InvalidCompute("effective compute overflows".into()));
    }
    Ok(EffectiveCompute {
        flops,
        efficiency_factor,
        value,
    })
}

/// Money lost if each scenario happens. Entries are finite by construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DisutilityTable(pub BTreeMap<ScenarioId, f64>);

impl DisutilityTable {
    pub fn get(&self, scenario: &ScenarioId) -> Option<f64> {
        self.0.get(scenario).copied()
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::InvalidSchedule("disutility table is empty".into()));
        }
        for (s, d) in &self.0 {
            if !(d.is_finite() && *d >= 0.0) {
                return Err(Error::InvalidSchedule(format!(
                    "disutility of `{s}` must be finite and >= 0, got {d}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything a fee schedule needs besides the survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// Effective-compute values of the tiers, strictly increasing.
    pub tiers: Vec<f64>,
    /// Participation is mandatory strictly above this effective compute.
    pub threshold: f64,
    #[serde(default = "default_rate")]
    pub discount_rate: f64,
    #[serde(default = "default_cap")]
    pub discount_cap: f64,
    #[serde(default)]
    pub extrapolate: bool,
}

fn default_rate() -> f64 {
    DEFAULT_DISCOUNT_RATE
}

fn default_cap() -> f64 {
    DEFAULT_DISCOUNT_CAP
}

/// Published fee schedule for one survey interval. Fields are read-only
/// once constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleDoc")]
pub struct FeeSchedule {
    interval_label: String,
    tiers: Vec<f64>,
    scenarios: Vec<ScenarioId>,
    /// `probabilities[tier][scenario]`.
    probabilities: Vec<Vec<f64>>,
    disutilities: DisutilityTable,
    threshold: f64,
    discount_rate: f64,
    discount_cap: f64,
    extrapolate: bool,
}

#[derive(Deserialize)]
struct ScheduleDoc {
    #[serde(default)]
    interval_label: String,
    tiers: Vec<f64>,
    scenarios: Vec<ScenarioId>,
    probabilities: Vec<Vec<f64>>,
    disutilities: DisutilityTable,
    threshold: f64,
    #[serde(default = "default_rate")]
    discount_rate: f64,
    #[serde(default = "default_cap")]
    discount_cap: f64,
    #[serde(default)]
    extrapolate: bool,
}

impl TryFrom<ScheduleDoc> for FeeSchedule {
    type Error = Error;

    fn try_from(d: ScheduleDoc) -> Result<Self> {
        let schedule = FeeSchedule {
            interval_label: d.interval_label,
            tiers: d.tiers,
            scenarios: d.scenarios,
            probabilities: d.probabilities,
            disutilities: d.disutilities,
            threshold: d.threshold,
            discount_rate: d.discount_rate,
            discount_cap: d.discount_cap,
            extrapolate: d.extrapolate,
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

fn validate_params(p: &ScheduleParams) -> Result<()> {
    if p.tiers.is_empty() {
        return Err(Error::InvalidSchedule("no compute tiers".into()));
    }
    if p.tiers.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::InvalidSchedule(
            "tiers must be positive and finite".into(),
        ));
    }
    if p.tiers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSchedule(
            "tiers must be strictly increasing".into(),
        ));
    }
    if !(p.threshold.is_finite() && p.threshold >= 0.0) {
        return Err(Error::InvalidSchedule(
            "threshold must be finite and >= 0".into(),
        ));
    }
    for (name, v) in [
        ("discount_rate", p.discount_rate),
        ("discount_cap", p.discount_cap),
    ] {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::InvalidSchedule(format!(
                "{name} must lie in [0, 1), got {v}"
            )));
        }
    }
    Ok(())
}

/// `P̂ = Σ_k x̄_k · midpoint_k` for the question on `scenario` at `tier`,
/// with `exclude` removed from the frequencies.
pub fn aggregate_risk(
    round: &SurveyRound,
    scenario: &ScenarioId,
    tier: usize,
    exclude: Option<&RespondentId>,
) -> Result<f64> {
    let mut matching = round
        .questions
        .iter()
        .filter(|q| &q.scenario_id == scenario && q.compute_tier == tier);
    let question = matching.next().ok_or_else(|| Error::MissingQuestion {
        scenario: scenario.to_string(),
        tier,
    })?;
    if matching.next().is_some() {
        return Err(Error::InvalidRound(format!(
            "more than one question for scenario `{scenario}` at tier {tier}"
        )));
    }
    let xbar = endorsement_frequencies_excluding(round, &question.id, exclude)?;
    let p: f64 = xbar
        .iter()
        .zip(&question.buckets)
        .map(|(x, b)| x * b.midpoint)
        .sum();
    Ok(p.clamp(0.0, 1.0))
}

impl FeeSchedule {
    /// Aggregates every (tier, scenario) question of `round` into a schedule.
    /// Scenarios are those of the disutility table.
    pub fn publish(
        round: &SurveyRound,
        params: &ScheduleParams,
        disutilities: &DisutilityTable,
    ) -> Result<Self> {
        Self::aggregate(round, params, disutilities, None)
    }

    fn aggregate(
        round: &SurveyRound,
        params: &ScheduleParams,
        disutilities: &DisutilityTable,
        exclude: Option<&RespondentId>,
    ) -> Result<Self> {
        validate_params(params)?;
        disutilities.validate()?;
        for q in &round.questions {
            if disutilities.get(&q.scenario_id).is_none() {
                return Err(Error::InvalidSchedule(format!(
                    "question `{}` references scenario `{}` with no disutility",
                    q.id, q.scenario_id
                )));
            }
        }
        let scenarios: Vec<ScenarioId> = disutilities.0.keys().cloned().collect();
        let probabilities = (0..params.tiers.len())
            .map(|tier| {
                scenarios
                    .iter()
                    .map(|s| aggregate_risk(round, s, tier, exclude))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeeSchedule {
            interval_label: round.interval_label.clone(),
            tiers: params.tiers.clone(),
            scenarios,
            probabilities,
            disutilities: disutilities.clone(),
            threshold: params.threshold,
            discount_rate: params.discount_rate,
            discount_cap: params.discount_cap,
            extrapolate: params.extrapolate,
        })
    }

    /// Same schedule, re-aggregated as if `respondent` had not answered.
    pub fn excluding(&self, round: &SurveyRound, respondent: &RespondentId) -> Result<Self> {
        Self::aggregate(round, &self.params(), &self.disutilities, Some(respondent))
    }

    pub fn validate(&self) -> Result<()> {
        validate_params(&self.params())?;
        self.disutilities.validate()?;
        let table: Vec<&ScenarioId> = self.disutilities.0.keys().collect();
        if self.scenarios.iter().collect::<Vec<_>>() != table {
            return Err(Error::InvalidSchedule(
                "scenarios must match the disutility table".into(),
            ));
        }
        if self.probabilities.len() != self.tiers.len()
            || self
                .probabilities
                .iter()
                .any(|row| row.len() != self.scenarios.len())
        {
            return Err(Error::InvalidSchedule(
                "probability grid has the wrong shape".into(),
            ));
        }
        if self
            .probabilities
            .iter()
            .flatten()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::InvalidSchedule(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn params(&self) -> ScheduleParams {
        ScheduleParams {
            tiers: self.tiers.clone(),
            threshold: self.threshold,
            discount_rate: self.discount_rate,
            discount_cap: self.discount_cap,
            extrapolate: self.extrapolate,
        }
    }

    pub fn interval_label(&self) -> &str {
        &self.interval_label
    }

    pub fn tiers(&self) -> &[f64] {
        &self.tiers
    }

    pub fn scenarios(&self) -> &[ScenarioId] {
        &self.scenarios
    }

    pub fn probability(&self, tier: usize, scenario: usize) -> f64 {
        self.probabilities[tier][scenario]
    }

    pub fn disutilities(&self) -> &DisutilityTable {
        &self.disutilities
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn discount_rate(&self) -> f64 {
        self.discount_rate
    }

    pub fn discount_cap(&self) -> f64 {
        self.discount_cap
    }

    /// Interpolated probability of scenario index `s` at effective compute `v`.
    fn risk_at(&self, s: usize, v: f64) -> Result<f64> {
        let tiers = &self.tiers;
        let lo = tiers[0];
        let hi = tiers[tiers.len() - 1];
        if let Some(i) = tiers.iter().position(|&t| t == v) {
            return Ok(self.probabilities[i][s]);
        }
        if (v < lo || v > hi) && !self.extrapolate {
            return Err(Error::OutOfRange { value: v, lo, hi });
        }
        if tiers.len() == 1 {
            return Ok(self.probabilities[0][s]);
        }
        // segment [i, i + 1], or the end segment when extrapolating
        let i = tiers
            .windows(2)
            .position(|w| v > w[0] && v < w[1])
            .unwrap_or(if v < lo { 0 } else { tiers.len() - 2 });
        let (p0, p1) = (self.probabilities[i][s], self.probabilities[i + 1][s]);
        let t = (v.ln() - tiers[i].ln()) / (tiers[i + 1].ln() - tiers[i].ln());
        let p = p0 + t * (p1 - p0);
        let p = if (lo..=hi).contains(&v) {
            p.clamp(p0.min(p1), p0.max(p1))
        } else {
            p
        };
        Ok(p.clamp(0.0, 1.0))
    }
}

/// Mandatory participation applies strictly above the threshold.
pub fn requires_participation(ec: &EffectiveCompute, schedule: &FeeSchedule) -> bool {
    ec.value > schedule.threshold
}

/// `Σ_scenarios P̂(scenario, ec) × disutility(scenario)`.
pub fn base_fee(ec: &EffectiveCompute, schedule: &FeeSchedule) -> Result<f64> {
    let mut fee = 0.0;
    for (s, scenario) in schedule.scenarios.iter().enumerate() {
        let d = schedule.disutilities.0[scenario];
        fee += schedule.risk_at(s, ec.value)? * d;
    }
    Ok(fee)
}

/// `min(history × rate, cap)`.
pub fn participation_discount(history: u32, discount_rate: f64, cap: f64) -> f64 {
    (history as f64 * discount_rate).min(cap)
}

/// Whose risk estimates enter a developer's own fee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeePolicy {
    /// Everyone's answers count; honesty is bought with a large BTS payout.
    ScaledPayout,
    /// The developer's own answers are dropped from its fee.
    Silenced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeQuote {
    pub developer_id: RespondentId,
    pub policy: FeePolicy,
    pub effective_compute: f64,
    pub base_fee: f64,
    pub discount: f64,
    pub fee: f64,
}

/// Fee for one developer's training run.
///
/// The developer must have answered every question of `round`.
pub fn individualized_fee(
    developer_id: &RespondentId,
    ec: &EffectiveCompute,
    schedule: &FeeSchedule,
    round: &SurveyRound,
    policy: FeePolicy,
) -> Result<FeeQuote> {
    let developer = round
        .respondent(developer_id)
        .ok_or_else(|| Error::ParticipationRequired(developer_id.to_string()))?;
    let answered = round.questions.iter().all(|q| {
        round
            .responses
            .iter()
            .any(|r| &r.respondent_id == developer_id && r.question_id == q.id)
    });
    if !answered || round.questions.is_empty() {
        return Err(Error::ParticipationRequired(developer_id.to_string()));
    }
    let base = match policy {
        FeePolicy::ScaledPayout => base_fee(ec, schedule)?,
        FeePolicy::Silenced => base_fee(ec, &schedule.excluding(round, developer_id)?)?,
    };
    let discount = participation_discount(
        developer.participation_history,
        schedule.discount_rate,
        schedule.discount_cap,
    );
    Ok(FeeQuote {
        developer_id: developer_id.clone(),
        policy,
        effective_compute: ec.value,
        base_fee: base,
        discount,
        fee: base * (1.0 - discount),
    })
}

//! Monte Carlo harness for the incentive properties of the survey and fee
//! mechanism.
//!
//! Synthetic rounds are drawn from a common-prior [`WorldModel`]; each agent
//! turns its private signal into a response through its [`AgentPolicy`].
//! Policy comparisons reuse the same per-replicate random streams (see
//! [`rng`]) so that differences are measured under common random numbers.

mod model;
mod policy;
pub mod rng;

pub use model::{posterior_predictive, WorldModel};
pub use policy::{
    deviation_catalog, AgentPolicy, PolicyKind, PredictionRule, COLLUDER_CONCENTRATION,
};

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::RespondentId;
use crate::pricing::{
    effective_compute, individualized_fee, DisutilityTable, FeePolicy, FeeSchedule, ScheduleParams,
};
use crate::stats::Estimate;
use crate::survey::{
    payouts, score_round, PayoutRule, Question, Respondent, Response, Role, SurveyRound,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: RespondentId,
    pub role: Role,
    #[serde(default)]
    pub participation_history: u32,
    #[serde(default = "AgentPolicy::honest")]
    pub policy: AgentPolicy,
}

impl Agent {
    pub fn new(id: impl Into<RespondentId>, role: Role, policy: AgentPolicy) -> Self {
        Self {
            id: id.into(),
            role,
            participation_history: 0,
            policy,
        }
    }
}

/// Fee side of a developer's utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeContext {
    pub disutilities: DisutilityTable,
    pub schedule: ScheduleParams,
    /// Effective compute of each developer's training run.
    pub developer_compute: f64,
    pub policy: FeePolicy,
    /// Whether developers keep their BTS payout under the silenced policy.
    #[serde(default = "yes")]
    pub silenced_developers_paid: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: WorldModel,
    pub roster: Vec<Agent>,
    /// One independent latent state is drawn per question.
    pub questions: Vec<Question>,
    pub alpha: f64,
    pub payout_scale: f64,
    pub pseudo_count: f64,
    pub payout_floor: Option<f64>,
    pub replicates: usize,
    pub master_seed: u64,
    /// Agent whose policy is varied; the first roster entry by default.
    pub subject: Option<RespondentId>,
    /// Deviations tested against honesty; [`deviation_catalog`] by default.
    pub deviations: Option<Vec<AgentPolicy>>,
    pub fee: Option<FeeContext>,
    /// Payout scales for the honest-versus-underreport sweep.
    pub scale_grid: Option<Vec<f64>>,
    /// Shares of honest peers for the honesty frontier.
    pub honest_shares: Option<Vec<f64>>,
    /// What dishonest peers do in the frontier sweep.
    pub peer_deviation: Option<AgentPolicy>,
}

impl SimConfig {
    /// Binary model with the given roster and one two-bucket question.
    pub fn binary(roster: Vec<Agent>, replicates: usize, master_seed: u64) -> Self {
        Self {
            model: WorldModel::binary(0.5, 0.8),
            roster,
            questions: vec![default_binary_question("q1", 0)],
            alpha: 1.0,
            payout_scale: 1.0,
            pseudo_count: 0.0,
            payout_floor: None,
            replicates,
            master_seed,
            subject: None,
            deviations: None,
            fee: None,
            scale_grid: None,
            honest_shares: None,
            peer_deviation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let m = self.model.signals();
        if self.questions.is_empty() {
            return Err(Error::InvalidModel(
                "simulation needs at least one question".into(),
            ));
        }
        for q in &self.questions {
            q.validate()
                .map_err(|e| Error::InvalidModel(e.to_string()))?;
            if q.buckets.len() != m {
                return Err(Error::InvalidModel(format!(
                    "question `{}` has {} buckets but the model has {m} signals",
                    q.id,
                    q.buckets.len()
                )));
            }
        }
        if self.roster.len() < 2 {
            return Err(Error::InvalidModel("roster needs at least 2 agents".into()));
        }
        let mut ids = HashSet::new();
        for a in &self.roster {
            if !ids.insert(&a.id) {
                return Err(Error::InvalidModel(format!("duplicate agent `{}`", a.id)));
            }
            a.policy.validate(m)?;
        }
        if self.replicates == 0 {
            return Err(Error::InvalidModel("replicates must be >= 1".into()));
        }
        if !(self.alpha.is_finite()
            && self.alpha >= 0.0
            && self.payout_scale.is_finite()
            && self.payout_scale >= 0.0)
        {
            return Err(Error::InvalidModel(
                "alpha and payout_scale must be finite and >= 0".into(),
            ));
        }
        self.subject_index()?;
        for p in self.deviations.iter().flatten().chain(&self.peer_deviation) {
            p.validate(m)?;
        }
        if let Some(fee) = &self.fee {
            if !(fee.developer_compute.is_finite() && fee.developer_compute > 0.0) {
                return Err(Error::InvalidModel(
                    "developer_compute must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn subject_index(&self) -> Result<usize> {
        match &self.subject {
            None => Ok(0),
            Some(id) => self
                .roster
                .iter()
                .position(|a| &a.id == id)
                .ok_or_else(|| Error::InvalidModel(format!("subject `{id}` not in roster"))),
        }
    }

    pub fn deviations(&self) -> Vec<AgentPolicy> {
        self.deviations
            .clone()
            .unwrap_or_else(|| deviation_catalog(self.model.signals()))
    }

    fn with_policy(&self, index: usize, policy: &AgentPolicy) -> Vec<Agent> {
        let mut roster = self.roster.clone();
        roster[index].policy = policy.clone();
        roster
    }

    fn payout_rule(&self) -> PayoutRule {
        PayoutRule {
            scale: self.payout_scale,
            floor: self.payout_floor,
            roles: None,
        }
    }
}

/// Two buckets split at a 1% risk.
pub fn default_binary_question(id: &str, tier: usize) -> Question {
    use crate::survey::Bucket;
    Question {
        id: id.into(),
        prompt: "Likelihood of the scenario within the time frame".into(),
        scenario_id: "catastrophe".into(),
        compute_tier: tier,
        time_frame_years: 1.0,
        buckets: vec![Bucket::new(0.0, 0.01, 0.005), Bucket::new(0.01, 1.0, 0.1)],
    }
}

/// Draws one synthetic round: per question a latent state from the prior
/// (nature's stream), then one signal per agent from that state's row (the
/// agent's stream), then each agent's policy response.
pub fn sample_round(config: &SimConfig, roster: &[Agent], replicate: u64) -> Result<SurveyRound> {
    let model = &config.model;
    let m = model.signals();
    let mut nature = rng::stream(config.master_seed, replicate, rng::NATURE);
    let states: Vec<usize> = config
        .questions
        .iter()
        .map(|_| rng::categorical(&model.prior, rng::uniform(&mut nature)))
        .collect();

    let mut responses = Vec::with_capacity(roster.len() * config.questions.len());
    for (i, agent) in roster.iter().enumerate() {
        let mut own = rng::stream(config.master_seed, replicate, rng::agent_actor(i));
        for (q, &state) in config.questions.iter().zip(&states) {
            let signal = rng::categorical(&model.signal_likelihoods[state], rng::uniform(&mut own));
            responses.push(Response {
                respondent_id: agent.id.clone(),
                question_id: q.id.clone(),
                endorsement: agent.policy.endorse(signal, m),
                prediction: agent.policy.predict(signal, model)?,
            });
        }
    }
    Ok(SurveyRound {
        interval_label: format!("replicate-{replicate}"),
        alpha: config.alpha,
        payout_scale: config.payout_scale,
        pseudo_count: config.pseudo_count,
        questions: config.questions.clone(),
        respondents: roster
            .iter()
            .map(|a| Respondent {
                id: a.id.clone(),
                role: a.role,
                participation_history: a.participation_history,
            })
            .collect(),
        responses,
    })
}

struct Outcome {
    round: SurveyRound,
    payouts: BTreeMap<RespondentId, f64>,
}

fn play(config: &SimConfig, roster: &[Agent], replicate: u64) -> Result<Outcome> {
    let round = sample_round(config, roster, replicate)?;
    let scores = score_round(&round)?;
    let mut payouts = payouts(&scores, &round.respondents, &config.payout_rule());
    if let Some(fee) = &config.fee {
        if fee.policy == FeePolicy::Silenced && !fee.silenced_developers_paid {
            for a in roster.iter().filter(|a| a.role == Role::Developer) {
                payouts.insert(a.id.clone(), 0.0);
            }
        }
    }
    Ok(Outcome { round, payouts })
}

fn fee_of(config: &SimConfig, round: &SurveyRound, developer: &RespondentId) -> Result<f64> {
    let ctx = config
        .fee
        .as_ref()
        .ok_or_else(|| Error::InvalidModel("no fee context configured".into()))?;
    let schedule = FeeSchedule::publish(round, &ctx.schedule, &ctx.disutilities)?;
    let ec = effective_compute(ctx.developer_compute, 1.0)?;
    Ok(individualized_fee(developer, &ec, &schedule, round, ctx.policy)?.fee)
}

/// Runs `f` on every replicate in parallel and returns results in replicate
/// order.
fn per_replicate<T, F>(config: &SimConfig, roster: &[Agent], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Outcome) -> Result<T> + Sync,
{
    (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| play(config, roster, r).and_then(|o| f(&o)))
        .collect()
}

fn payout_samples(config: &SimConfig, policy: &AgentPolicy) -> Result<Vec<f64>> {
    let subject = config.subject_index()?;
    let roster = config.with_policy(subject, policy);
    let id = &roster[subject].id;
    per_replicate(config, &roster, |o| Ok(o.payouts[id]))
}

fn paired_gap(a: &[f64], b: &[f64]) -> Estimate {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Estimate::from_samples(&d)
}

/// Mean BTS payout of the subject playing `policy` against the roster.
pub fn expected_payout(config: &SimConfig, policy: &AgentPolicy) -> Result<Estimate> {
    config.validate()?;
    Ok(Estimate::from_samples(&payout_samples(config, policy)?))
}

/// `payout(baseline) − payout(alternative)` under common random numbers.
pub fn payout_gap(
    config: &SimConfig,
    baseline: &AgentPolicy,
    alternative: &AgentPolicy,
) -> Result<Estimate> {
    config.validate()?;
    let a = payout_samples(config, baseline)?;
    let b = payout_samples(config, alternative)?;
    Ok(paired_gap(&a, &b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    pub policy: String,
    pub payout: Estimate,
    /// Honest minus deviation, paired by replicate.
    pub gap: Estimate,
    pub honest_dominates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub subject: RespondentId,
    pub honest: Estimate,
    pub deviations: Vec<DeviationResult>,
    /// Honest beats every deviation by more than its half-width.
    pub honest_dominates_all: bool,
}

/// One row of the optional per-replicate dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub replicate: u64,
    pub policy: String,
    pub payout: f64,
}

/// Compares the subject's honest payout with every cataloged unilateral
/// deviation.
pub fn equilibrium_check(config: &SimConfig) -> Result<EquilibriumReport> {
    equilibrium_with_trace(config).map(|(r, _)| r)
}

pub fn equilibrium_with_trace(config: &SimConfig) -> Result<(EquilibriumReport, Vec<TraceRow>)> {
    config.validate()?;
    let honest_policy = AgentPolicy::honest();
    let honest = payout_samples(config, &honest_policy)?;
    let mut trace = trace_rows(&honest_policy, &honest);
    let mut deviations = Vec::new();
    for policy in config.deviations() {
        let samples = payout_samples(config, &policy)?;
        trace.extend(trace_rows(&policy, &samples));
        let gap = paired_gap(&honest, &samples);
        deviations.push(DeviationResult {
            policy: policy.to_string(),
            payout: Estimate::from_samples(&samples),
            honest_dominates: gap.significantly_positive(),
            gap,
        });
    }
    let report = EquilibriumReport {
        subject: config.roster[config.subject_index()?].id.clone(),
        honest: Estimate::from_samples(&honest),
        honest_dominates_all: deviations.iter().all(|d| d.honest_dominates),
        deviations,
    };
    Ok((report, trace))
}

fn trace_rows(policy: &AgentPolicy, samples: &[f64]) -> Vec<TraceRow> {
    let label = policy.to_string();
    samples
        .iter()
        .enumerate()
        .map(|(r, &payout)| TraceRow {
            replicate: r as u64,
            policy: label.clone(),
            payout,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetUtility {
    pub payout: Estimate,
    pub fee: Estimate,
    pub net: Estimate,
}

struct NetSamples {
    payout: Vec<f64>,
    fee: Vec<f64>,
}

fn net_samples(config: &SimConfig, roster: &[Agent], who: &RespondentId) -> Result<NetSamples> {
    let pairs = per_replicate(config, roster, |o| {
        Ok((o.payouts[who], fee_of(config, &o.round, who)?))
    })?;
    let (payout, fee) = pairs.into_iter().unzip();
    Ok(NetSamples { payout, fee })
}

/// Subject's BTS payout minus its individualized fee.
pub fn developer_net_utility(config: &SimConfig, policy: &AgentPolicy) -> Result<NetUtility> {
    config.validate()?;
    let subject = config.subject_index()?;
    let roster = config.with_policy(subject, policy);
    let s = net_samples(config, &roster, &roster[subject].id)?;
    let net: Vec<f64> = s.payout.iter().zip(&s.fee).map(|(p, f)| p - f).collect();
    Ok(NetUtility {
        payout: Estimate::from_samples(&s.payout),
        fee: Estimate::from_samples(&s.fee),
        net: Estimate::from_samples(&net),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetComparison {
    pub baseline: String,
    pub alternative: String,
    pub payout_gap: Estimate,
    pub fee_gap: Estimate,
    /// `(payout_a − payout_b) − (fee_a − fee_b)` per replicate.
    pub net_gap: Estimate,
    /// Fees were bit-identical in every replicate.
    pub fee_cancels: bool,
    pub baseline_dominates: bool,
}

/// Net-utility comparison of two subject policies under common random
/// numbers.
pub fn compare_net(
    config: &SimConfig,
    baseline: &AgentPolicy,
    alternative: &AgentPolicy,
) -> Result<NetComparison> {
    config.validate()?;
    let subject = config.subject_index()?;
    let id = config.roster[subject].id.clone();
    let a = net_samples(config, &config.with_policy(subject, baseline), &id)?;
    let b = net_samples(config, &config.with_policy(subject, alternative), &id)?;
    let payout_d: Vec<f64> = a.payout.iter().zip(&b.payout).map(|(x, y)| x - y).collect();
    let fee_d: Vec<f64> = a.fee.iter().zip(&b.fee).map(|(x, y)| x - y).collect();
    let net_d: Vec<f64> = payout_d.iter().zip(&fee_d).map(|(p, f)| p - f).collect();
    let net_gap = Estimate::from_samples(&net_d);
    Ok(NetComparison {
        baseline: baseline.to_string(),
        alternative: alternative.to_string(),
        payout_gap: Estimate::from_samples(&payout_d),
        fee_gap: Estimate::from_samples(&fee_d),
        fee_cancels: a
            .fee
            .iter()
            .zip(&b.fee)
            .all(|(x, y)| x.to_bits() == y.to_bits()),
        baseline_dominates: net_gap.significantly_positive(),
        net_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub payout_scale: f64,
    pub net_gap: Estimate,
    pub honest_dominates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSweep {
    pub points: Vec<ScalePoint>,
    /// Smallest scale from which honest dominates underreporting at every
    /// larger grid point.
    pub minimal_scale: Option<f64>,
}

/// Sweeps the payout scale and reports where honest reporting starts to
/// beat a one-bucket underreport in net utility. Fees are always priced
/// under the scaled-payout policy here: silencing already removes the
/// fee incentive, so there is nothing to overcome.
pub fn payout_scale_sweep(config: &SimConfig, grid: &[f64]) -> Result<ScaleSweep> {
    let mut fee = config
        .fee
        .clone()
        .ok_or_else(|| Error::InvalidModel("scale sweep needs a fee context".into()))?;
    fee.policy = FeePolicy::ScaledPayout;
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut points = Vec::with_capacity(grid.len());
    for &scale in &grid {
        let cfg = SimConfig {
            payout_scale: scale,
            fee: Some(fee.clone()),
            ..config.clone()
        };
        let cmp = compare_net(&cfg, &AgentPolicy::honest(), &AgentPolicy::underreport(1))?;
        points.push(ScalePoint {
            payout_scale: scale,
            honest_dominates: cmp.baseline_dominates,
            net_gap: cmp.net_gap,
        });
    }
    Ok(ScaleSweep {
        minimal_scale: frontier(&points, |p| (p.payout_scale, p.honest_dominates)),
        points,
    })
}

/// Smallest key from which the flag holds for every later point.
fn frontier<T>(points: &[T], key: impl Fn(&T) -> (f64, bool)) -> Option<f64> {
    let mut best = None;
    for p in points.iter().rev() {
        let (x, ok) = key(p);
        if !ok {
            break;
        }
        best = Some(x);
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeveloperStrategy {
    /// Underreport by one bucket, as agreed with the other developer.
    Coordinate,
    /// Report honestly.
    Defect,
}

impl DeveloperStrategy {
    fn policy(self) -> AgentPolicy {
        match self {
            DeveloperStrategy::Coordinate => AgentPolicy::underreport(1),
            DeveloperStrategy::Defect => AgentPolicy::honest(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilemmaCell {
    pub first: DeveloperStrategy,
    pub second: DeveloperStrategy,
    pub first_net: Estimate,
    pub second_net: Estimate,
    pub first_fee: Estimate,
    pub second_fee: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilemmaReport {
    pub developers: [RespondentId; 2],
    /// Row-major: (C,C), (C,D), (D,C), (D,D).
    pub cells: Vec<DilemmaCell>,
    /// Net gain from defecting, per developer and opponent strategy.
    pub defect_gains: Vec<Estimate>,
    /// Fee saved by both coordinating rather than both defecting.
    pub coordination_fee_savings: Vec<Estimate>,
    pub defect_dominant: bool,
    pub coordination_lowers_fees: bool,
    /// Mutual coordination also beats mutual defection in net utility.
    pub coordination_net_superior: bool,
    pub dilemma_present: bool,
}

/// 2×2 game between the first two developers under the silenced policy.
pub fn dilemma_matrix(config: &SimConfig) -> Result<DilemmaReport> {
    config.validate()?;
    match &config.fee {
        Some(f) if f.policy == FeePolicy::Silenced => {}
        _ => {
            return Err(Error::InvalidModel(
                "dilemma needs the silenced fee policy".into(),
            ))
        }
    }
    let devs: Vec<usize> = config
        .roster
        .iter()
        .enumerate()
        .filter(|(_, a)| a.role == Role::Developer)
        .map(|(i, _)| i)
        .take(2)
        .collect();
    let [d1, d2] = devs[..] else {
        return Err(Error::InvalidModel(
            "dilemma needs at least 2 developers".into(),
        ));
    };
    let id1 = config.roster[d1].id.clone();
    let id2 = config.roster[d2].id.clone();

    use DeveloperStrategy::{Coordinate as C, Defect as D};
    let mut raw = Vec::new();
    for (s1, s2) in [(C, C), (C, D), (D, C), (D, D)] {
        let mut roster = config.roster.clone();
        roster[d1].policy = s1.policy();
        roster[d2].policy = s2.policy();
        let a = net_samples(config, &roster, &id1)?;
        let b = net_samples(config, &roster, &id2)?;
        raw.push((s1, s2, a, b));
    }
    let net =
        |s: &NetSamples| -> Vec<f64> { s.payout.iter().zip(&s.fee).map(|(p, f)| p - f).collect() };
    let cells = raw
        .iter()
        .map(|(s1, s2, a, b)| DilemmaCell {
            first: *s1,
            second: *s2,
            first_net: Estimate::from_samples(&net(a)),
            second_net: Estimate::from_samples(&net(b)),
            first_fee: Estimate::from_samples(&a.fee),
            second_fee: Estimate::from_samples(&b.fee),
        })
        .collect();

    // index by (first, second) with C = 0, D = 1
    let cell = |i: usize, j: usize| &raw[i * 2 + j];
    let mut defect_gains = Vec::new();
    for opp in 0..2 {
        // first developer: D vs C against opp
        defect_gains.push(paired_gap(&net(&cell(1, opp).2), &net(&cell(0, opp).2)));
        // second developer: D vs C against opp
        defect_gains.push(paired_gap(&net(&cell(opp, 1).3), &net(&cell(opp, 0).3)));
    }
    let coordination_fee_savings = vec![
        paired_gap(&cell(1, 1).2.fee, &cell(0, 0).2.fee),
        paired_gap(&cell(1, 1).3.fee, &cell(0, 0).3.fee),
    ];
    let coordination_net = [
        paired_gap(&net(&cell(0, 0).2), &net(&cell(1, 1).2)),
        paired_gap(&net(&cell(0, 0).3), &net(&cell(1, 1).3)),
    ];
    let defect_dominant = defect_gains.iter().all(Estimate::significantly_positive);
    let coordination_lowers_fees = coordination_fee_savings
        .iter()
        .all(Estimate::significantly_positive);
    Ok(DilemmaReport {
        developers: [id1, id2],
        cells,
        defect_gains,
        coordination_fee_savings,
        defect_dominant,
        coordination_lowers_fees,
        coordination_net_superior: coordination_net
            .iter()
            .all(Estimate::significantly_positive),
        dilemma_present: defect_dominant && coordination_lowers_fees,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub honest_share: f64,
    pub honest_peers: usize,
    /// Smallest honest-minus-deviation gap over the catalog.
    pub worst_gap: Estimate,
    pub worst_deviation: String,
    pub honest_dominates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierReport {
    pub peer_deviation: String,
    pub points: Vec<FrontierPoint>,
    /// Smallest tested share from which honesty dominates at every larger
    /// tested share.
    pub frontier: Option<f64>,
}

/// Measures how large the honest majority among peers must be for honest
/// reporting to beat every cataloged deviation. The first
/// `round(share × peers)` peers keep their roster policy; the rest play
/// `peer_deviation`.
pub fn honest_share_frontier(
    config: &SimConfig,
    shares: &[f64],
    peer_deviation: &AgentPolicy,
) -> Result<FrontierReport> {
    config.validate()?;
    peer_deviation.validate(config.model.signals())?;
    let subject = config.subject_index()?;
    let peers: Vec<usize> = (0..config.roster.len()).filter(|&i| i != subject).collect();
    let mut shares = shares.to_vec();
    shares.sort_by(f64::total_cmp);
    let mut points = Vec::new();
    for share in shares {
        let honest_peers = ((share.clamp(0.0, 1.0) * peers.len() as f64).round()) as usize;
        let mut cfg = config.clone();
        for &i in &peers[honest_peers..] {
            cfg.roster[i].policy = peer_deviation.clone();
        }
        let eq = equilibrium_check(&cfg)?;
        let worst = eq
            .deviations
            .iter()
            .min_by(|a, b| {
                (a.gap.mean - a.gap.half_width).total_cmp(&(b.gap.mean - b.gap.half_width))
            })
            .ok_or_else(|| Error::InvalidModel("empty deviation catalog".into()))?;
        points.push(FrontierPoint {
            honest_share: share,
            honest_peers,
            worst_gap: worst.gap,
            worst_deviation: worst.policy.clone(),
            honest_dominates: eq.honest_dominates_all,
        });
    }
    Ok(FrontierReport {
        peer_deviation: peer_deviation.to_string(),
        frontier: frontier(&points, |p| (p.honest_share, p.honest_dominates)),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub master_seed: u64,
    pub replicates: usize,
    pub equilibrium: EquilibriumReport,
    pub developer: Option<NetComparison>,
    pub scale_sweep: Option<ScaleSweep>,
    pub dilemma: Option<DilemmaReport>,
    pub honest_share_frontier: Option<FrontierReport>,
    /// Named pass/fail properties.
    pub flags: BTreeMap<String, bool>,
}

/// Everything the configuration asks for, plus the per-replicate payout
/// trace of the equilibrium check.
pub fn run(config: &SimConfig) -> Result<(SimulationReport, Vec<TraceRow>)> {
    config.validate()?;
    let (equilibrium, trace) = equilibrium_with_trace(config)?;
    let mut flags = BTreeMap::new();
    flags.insert(
        "honest_dominates_all_deviations".to_string(),
        equilibrium.honest_dominates_all,
    );

    let mut developer = None;
    let mut scale_sweep = None;
    let mut dilemma = None;
    if let Some(fee) = &config.fee {
        let cmp = compare_net(config, &AgentPolicy::honest(), &AgentPolicy::underreport(1))?;
        flags.insert(
            "developer_honest_dominates_underreport".into(),
            cmp.baseline_dominates,
        );
        if fee.policy == FeePolicy::Silenced {
            flags.insert("silenced_fee_cancels".into(), cmp.fee_cancels);
        }
        developer = Some(cmp);
        if let Some(grid) = &config.scale_grid {
            let sweep = payout_scale_sweep(config, grid)?;
            flags.insert(
                "minimal_honest_scale_found".into(),
                sweep.minimal_scale.is_some(),
            );
            scale_sweep = Some(sweep);
        }
        let developers = config
            .roster
            .iter()
            .filter(|a| a.role == Role::Developer)
            .count();
        if fee.policy == FeePolicy::Silenced && developers >= 2 {
            let d = dilemma_matrix(config)?;
            flags.insert("dilemma_present".into(), d.dilemma_present);
            dilemma = Some(d);
        }
    }
    let honest_share_frontier = match &config.honest_shares {
        Some(shares) => {
            let peer = config
                .peer_deviation
                .clone()
                .unwrap_or_else(|| AgentPolicy::fixed(0));
            let f = honest_share_frontier(config, shares, &peer)?;
            flags.insert("honest_share_frontier_found".into(), f.frontier.is_some());
            Some(f)
        }
        None => None,
    };
    Ok((
        SimulationReport {
            master_seed: config.master_seed,
            replicates: config.replicates,
            equilibrium,
            developer,
            scale_sweep,
            dilemma,
            honest_share_frontier,
            flags,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn honest_roster(n: usize) -> Vec<Agent> {
        (0..n)
            .map(|i| {
                Agent::new(
                    format!("a{i:02}"),
                    Role::IndependentExpert,
                    AgentPolicy::honest(),
                )
            })
            .collect()
    }

    #[test]
    fn degenerate_model_makes_everyone_agree() {
        let mut cfg = SimConfig::binary(honest_roster(5), 1, 3);
        cfg.model = WorldModel {
            states: vec!["only".into()],
            prior: vec![1.0],
            signal_likelihoods: vec![vec![0.0, 1.0]],
        };
        let round = sample_round(&cfg, &cfg.roster, 0).unwrap();
        assert!(round.responses.iter().all(|r| r.endorsement == 1));
    }

    #[test]
    fn same_seed_same_round() {
        let cfg = SimConfig::binary(honest_roster(8), 1, 11);
        assert_eq!(
            sample_round(&cfg, &cfg.roster, 4).unwrap(),
            sample_round(&cfg, &cfg.roster, 4).unwrap()
        );
        assert_ne!(
            sample_round(&cfg, &cfg.roster, 4).unwrap(),
            sample_round(&cfg, &cfg.roster, 5).unwrap()
        );
    }

    #[test]
    fn honest_against_itself_has_zero_gap() {
        let cfg = SimConfig::binary(honest_roster(10), 200, 1);
        let gap = payout_gap(&cfg, &AgentPolicy::honest(), &AgentPolicy::honest()).unwrap();
        assert_eq!(gap.mean, 0.0);
        assert_eq!(gap.half_width, 0.0);
    }

    #[test]
    fn zero_scale_pays_nothing() {
        let mut cfg = SimConfig::binary(honest_roster(10), 50, 1);
        cfg.payout_scale = 0.0;
        let e = expected_payout(&cfg, &AgentPolicy::fixed(1)).unwrap();
        assert_eq!(e.mean, 0.0);
        let eq = equilibrium_check(&cfg).unwrap();
        assert!(eq.deviations.iter().all(|d| d.gap.mean == 0.0));
    }

    #[test]
    fn invalid_model_is_reported() {
        let mut cfg = SimConfig::binary(honest_roster(3), 1, 1);
        cfg.model.prior = vec![0.7, 0.7];
        assert_eq!(equilibrium_check(&cfg).unwrap_err().kind(), "invalid-model");
        let mut cfg = SimConfig::binary(honest_roster(3), 0, 1);
        cfg.replicates = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn frontier_takes_the_dominating_tail() {
        let pts = [
            (0.1, false),
            (0.5, true),
            (0.7, false),
            (0.8, true),
            (1.0, true),
        ];
        assert_eq!(frontier(&pts, |p| *p), Some(0.8));
        assert_eq!(frontier(&[(1.0, false)], |p| *p), None);
    }
}

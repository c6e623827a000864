//! Quadratic Financing for safety-research projects.
//!
//! A project's ideal total is `(Σ_i √c_i)²` over its distinct contributors;
//! the public top-up is that total minus what contributors paid. When the
//! top-ups exceed the matching budget they are scaled down proportionally.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{components, DisjointSet};
use crate::ids::{ContributorId, ProjectId};
use crate::money::{to_f64, Money, MoneyUnit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: ProjectId,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub proposer_ids: Vec<ContributorId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub contributor_id: ContributorId,
    pub project_id: ProjectId,
    pub amount: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfRound {
    pub projects: Vec<Project>,
    #[serde(default)]
    pub contributions: Vec<Contribution>,
    pub matching_budget: Money,
    /// Pairs of contributor ids known to be the same party.
    #[serde(default)]
    pub identity_links: Vec<(ContributorId, ContributorId)>,
    #[serde(default)]
    pub money_unit: MoneyUnit,
}

impl QfRound {
    pub fn validate(&self) -> Result<()> {
        let unit = self.money_unit;
        if self.matching_budget.is_sign_negative() && !self.matching_budget.is_zero() {
            return Err(Error::InvalidQfRound("matching budget must be >= 0".into()));
        }
        if !unit.is_on_grid(self.matching_budget) {
            return Err(Error::InvalidQfRound(format!(
                "matching budget {} is finer than the money unit {}",
                self.matching_budget,
                unit.unit()
            )));
        }
        let mut ids = HashSet::new();
        for p in &self.projects {
            if !ids.insert(&p.id) {
                return Err(Error::InvalidQfRound(format!(
                    "duplicate project `{}`",
                    p.id
                )));
            }
        }
        for c in &self.contributions {
            if !ids.contains(&c.project_id) {
                return Err(Error::InvalidQfRound(format!(
                    "contribution from `{}` to unknown project `{}`",
                    c.contributor_id, c.project_id
                )));
            }
            if c.amount <= Money::ZERO {
                return Err(Error::InvalidQfRound(format!(
                    "contribution from `{}` must be positive",
                    c.contributor_id
                )));
            }
            if !unit.is_on_grid(c.amount) {
                return Err(Error::InvalidQfRound(format!(
                    "contribution {} from `{}` is finer than the money unit",
                    c.amount, c.contributor_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectMatch {
    pub project_id: ProjectId,
    pub private_total: Money,
    pub ideal_match: Money,
    pub subsidy: Money,
    pub scaled_subsidy: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub projects: Vec<ProjectMatch>,
    pub total_subsidy: Money,
    pub total_scaled_subsidy: Money,
    pub matching_budget: Money,
    /// True when the budget could not cover every ideal top-up.
    pub budget_binding: bool,
}

/// Folds linked identities into one contributor, keyed by the
/// lexicographically smallest id of each linked set, and sums their
/// contributions per project. Output keeps first-occurrence order.
pub fn merge_sybils(
    contributions: &[Contribution],
    identity_links: &[(ContributorId, ContributorId)],
) -> Vec<Contribution> {
    let mut index: BTreeMap<&ContributorId, usize> = BTreeMap::new();
    for id in contributions
        .iter()
        .map(|c| &c.contributor_id)
        .chain(identity_links.iter().flat_map(|(a, b)| [a, b]))
    {
        let next = index.len();
        index.entry(id).or_insert(next);
    }
    // re-index in sorted order so the set's lowest index is its smallest id
    let sorted: Vec<&ContributorId> = index.keys().copied().collect();
    let position: HashMap<&ContributorId, usize> =
        sorted.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut set = DisjointSet::new(sorted.len());
    for (a, b) in identity_links {
        set.union(position[a], position[b]);
    }

    let mut merged: Vec<Contribution> = Vec::new();
    let mut slot: HashMap<(usize, &ProjectId), usize> = HashMap::new();
    for c in contributions {
        let root = set.find(position[&c.contributor_id]);
        match slot.get(&(root, &c.project_id)) {
            Some(&i) => merged[i].amount += c.amount,
            None => {
                slot.insert((root, &c.project_id), merged.len());
                merged.push(Contribution {
                    contributor_id: sorted[root].clone(),
                    project_id: c.project_id.clone(),
                    amount: c.amount,
                });
            }
        }
    }
    merged
}

/// `(Σ √c_i)²`, rounded half-to-even onto the money unit. With at most one
/// contributor the match is the private total itself.
pub fn ideal_match(amounts: &[Money], unit: MoneyUnit) -> Money {
    let private_total: Money = amounts.iter().copied().sum();
    if amounts.len() <= 1 {
        return private_total;
    }
    let root_sum: f64 = amounts.iter().map(|&a| to_f64(a).sqrt()).sum();
    let ideal = unit.from_f64(root_sum * root_sum).unwrap_or(private_total);
    ideal.max(private_total)
}

/// Ideal matches and budget-scaled subsidies for every project, in project
/// order. Contributions are sybil-merged first.
pub fn allocate(round: &QfRound) -> Result<MatchResult> {
    round.validate()?;
    let unit = round.money_unit;
    let merged = merge_sybils(&round.contributions, &round.identity_links);
    let mut per_project: HashMap<&ProjectId, Vec<Money>> = HashMap::new();
    for c in &merged {
        per_project.entry(&c.project_id).or_default().push(c.amount);
    }

    let mut projects: Vec<ProjectMatch> = round
        .projects
        .iter()
        .map(|p| {
            let amounts = per_project.get(&p.id).map(Vec::as_slice).unwrap_or(&[]);
            let private_total: Money = amounts.iter().copied().sum();
            let ideal = ideal_match(amounts, unit);
            let subsidy = ideal - private_total;
            ProjectMatch {
                project_id: p.id.clone(),
                private_total,
                ideal_match: ideal,
                subsidy,
                scaled_subsidy: subsidy,
            }
        })
        .collect();

    let total_subsidy: Money = projects.iter().map(|p| p.subsidy).sum();
    let budget = round.matching_budget;
    let budget_binding = total_subsidy > budget;
    if budget_binding {
        for p in &mut projects {
            p.scaled_subsidy = unit.truncate(p.subsidy * budget / total_subsidy);
        }
    }
    let total_scaled_subsidy = projects.iter().map(|p| p.scaled_subsidy).sum();
    for p in &mut projects {
        for v in [
            &mut p.private_total,
            &mut p.ideal_match,
            &mut p.subsidy,
            &mut p.scaled_subsidy,
        ] {
            *v = unit.fixed(*v);
        }
    }
    Ok(MatchResult {
        projects,
        total_subsidy: unit.fixed(total_subsidy),
        total_scaled_subsidy: unit.fixed(total_scaled_subsidy),
        matching_budget: unit.fixed(budget),
        budget_binding,
    })
}

/// Floating-point slack so that identical vectors meet a threshold of 1.
const SIMILARITY_SLACK: f64 = 1e-12;

/// Contributors whose funding patterns look coordinated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundingCollusionFlag {
    pub contributors: Vec<ContributorId>,
    /// Lowest pairwise cosine similarity among the flagged links.
    pub similarity: f64,
}

/// Flags groups of contributors whose per-project contribution vectors have
/// cosine similarity at least `threshold`, where the pair's supports span
/// at least two projects. Pairs with no shared project are never flagged.
/// Report-only.
pub fn detect_funding_collusion(round: &QfRound, threshold: f64) -> Vec<FundingCollusionFlag> {
    let merged = merge_sybils(&round.contributions, &round.identity_links);
    let project_index: HashMap<&ProjectId, usize> = round
        .projects
        .iter()
        .enumerate()
        .map(|(i, p)| (&p.id, i))
        .collect();
    let mut vectors: BTreeMap<&ContributorId, Vec<f64>> = BTreeMap::new();
    for c in &merged {
        let Some(&j) = project_index.get(&c.project_id) else {
            continue;
        };
        vectors
            .entry(&c.contributor_id)
            .or_insert_with(|| vec![0.0; round.projects.len()])[j] += to_f64(c.amount);
    }
    let contributors: Vec<(&ContributorId, Vec<f64>)> = vectors.into_iter().collect();

    let mut edges = Vec::new();
    let mut similarity: HashMap<(usize, usize), f64> = HashMap::new();
    for i in 0..contributors.len() {
        for j in i + 1..contributors.len() {
            let (a, b) = (&contributors[i].1, &contributors[j].1);
            let span = a
                .iter()
                .zip(b)
                .filter(|(x, y)| **x > 0.0 || **y > 0.0)
                .count();
            if span < 2 {
                continue;
            }
            let s = cosine(a, b);
            if s > 0.0 && s + SIMILARITY_SLACK >= threshold {
                edges.push((i, j));
                similarity.insert((i, j), s);
            }
        }
    }
    components(contributors.len(), &edges)
        .into_iter()
        .map(|group| {
            let min = edges
                .iter()
                .filter(|(a, _)| group.contains(a))
                .map(|e| similarity[e])
                .fold(f64::INFINITY, f64::min);
            FundingCollusionFlag {
                contributors: group.iter().map(|&i| contributors[i].0.clone()).collect(),
                similarity: min,
            }
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rust_decimal::Decimal;

    fn m(v: i64) -> Money {
        Decimal::from(v)
    }

    fn c(who: &str, project: &str, amount: i64) -> Contribution {
        Contribution {
            contributor_id: who.into(),
            project_id: project.into(),
            amount: m(amount),
        }
    }

    fn round(contributions: Vec<Contribution>, projects: &[&str], budget: i64) -> QfRound {
        QfRound {
            projects: projects
                .iter()
                .map(|p| Project {
                    id: (*p).into(),
                    title: String::new(),
                    proposer_ids: vec![],
                })
                .collect(),
            contributions,
            matching_budget: m(budget),
            identity_links: vec![],
            money_unit: MoneyUnit::default(),
        }
    }

    fn link(a: &str, b: &str) -> (ContributorId, ContributorId) {
        (a.into(), b.into())
    }

    #[test]
    fn linked_identities_merge() {
        let merged = merge_sybils(&[c("a", "P", 4), c("b", "P", 4)], &[link("a", "b")]);
        assert_eq!(merged, vec![c("a", "P", 8)]);

        let plain = vec![c("a", "P", 4), c("b", "P", 4), c("a", "Q", 1)];
        assert_eq!(merge_sybils(&plain, &[]), plain);

        let chain = merge_sybils(
            &[c("c", "P", 1), c("b", "P", 1), c("a", "P", 1)],
            &[link("a", "b"), link("c", "b")],
        );
        assert_eq!(chain, vec![c("a", "P", 3)]);
    }

    #[test]
    fn merge_ignores_link_direction_and_order() {
        let xs = [c("b", "P", 2), c("a", "P", 5), c("c", "Q", 1)];
        let one = merge_sybils(&xs, &[link("b", "a")]);
        let two = merge_sybils(
            &[xs[1].clone(), xs[0].clone(), xs[2].clone()],
            &[link("a", "b")],
        );
        let key = |v: Vec<Contribution>| {
            let mut v: Vec<_> = v
                .into_iter()
                .map(|c| (c.contributor_id, c.project_id, c.amount))
                .collect();
            v.sort();
            v
        };
        assert_eq!(key(one), key(two));
    }

    #[test]
    fn ideal_match_examples() {
        let unit = MoneyUnit::default();
        assert_eq!(ideal_match(&[m(9)], unit), m(9));
        assert_eq!(ideal_match(&[m(4), m(4)], unit), m(16));
        assert_eq!(ideal_match(&[m(1); 4], unit), m(16));
        assert_eq!(ideal_match(&[], unit), m(0));
    }

    #[test]
    fn allocation_examples() {
        let r = round(vec![c("a", "P", 9)], &["P"], 100);
        assert_eq!(allocate(&r).unwrap().projects[0].subsidy, m(0));

        let r = round(vec![c("a", "P", 4), c("b", "P", 4)], &["P"], 100);
        let res = allocate(&r).unwrap();
        assert_eq!(res.projects[0].subsidy, m(8));
        assert_eq!(res.projects[0].scaled_subsidy, m(8));
        assert!(!res.budget_binding);

        // subsidies 8 and 12 against a budget of 10
        let mut xs = vec![c("a", "P", 4), c("b", "P", 4)];
        xs.extend((0..4).map(|i| c(&format!("q{i}"), "Q", 1)));
        let r = round(xs, &["P", "Q"], 10);
        let res = allocate(&r).unwrap();
        let scaled: Vec<Money> = res.projects.iter().map(|p| p.scaled_subsidy).collect();
        assert_eq!(scaled, vec![m(4), m(6)]);
        assert!(res.budget_binding);

        let mut zero = r.clone();
        zero.matching_budget = m(0);
        assert!(allocate(&zero)
            .unwrap()
            .projects
            .iter()
            .all(|p| p.scaled_subsidy.is_zero()));
    }

    #[test]
    fn invalid_rounds_are_rejected() {
        let r = round(vec![c("a", "Nope", 1)], &["P"], 1);
        assert_eq!(allocate(&r).unwrap_err().kind(), "invalid-qf-round");
        let r = round(vec![c("a", "P", 0)], &["P"], 1);
        assert!(allocate(&r).is_err());
        let mut r = round(vec![], &["P"], 1);
        r.matching_budget = Decimal::new(1, 3);
        assert!(allocate(&r).is_err());
    }

    #[test]
    fn linked_sybils_lose_their_bonus() {
        let mut r = round(vec![c("a", "P", 4), c("b", "P", 4)], &["P"], 100);
        r.identity_links.push(link("a", "b"));
        let res = allocate(&r).unwrap();
        assert_eq!(res.projects[0].ideal_match, m(8));
        assert_eq!(res.projects[0].subsidy, m(0));
    }

    #[test]
    fn collusion_flags() {
        let identical = round(
            vec![
                c("a", "P", 1),
                c("a", "Q", 2),
                c("a", "R", 3),
                c("b", "P", 1),
                c("b", "Q", 2),
                c("b", "R", 3),
            ],
            &["P", "Q", "R"],
            0,
        );
        let flags = detect_funding_collusion(&identical, 1.0);
        assert_eq!(flags.len(), 1);
        assert_eq!(
            flags[0].contributors,
            vec![ContributorId::from("a"), "b".into()]
        );

        let disjoint = round(
            vec![c("a", "P", 1), c("a", "Q", 1), c("b", "R", 1)],
            &["P", "Q", "R"],
            0,
        );
        assert!(detect_funding_collusion(&disjoint, 0.0).is_empty());

        let partial = round(
            vec![c("a", "P", 1), c("a", "Q", 1), c("b", "P", 1)],
            &["P", "Q", "R"],
            0,
        );
        #[allow(clippy::approx_constant)]
        let flags = detect_funding_collusion(&partial, 0.7071);
        assert_eq!(flags.len(), 1);
        assert!((flags[0].similarity - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(detect_funding_collusion(&partial, 0.7072).is_empty());
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};

use super::model::{posterior_predictive, WorldModel};
use crate::error::{Error, Result};

/// Mass colluders put on their agreed bucket when fabricating predictions.
pub const COLLUDER_CONCENTRATION: f64 = 0.9;

/// Which bucket an agent endorses given its private signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Honest,
    /// Reports `shift` buckets lower than its signal, saturating at 0.
    Underreport {
        shift: usize,
    },
    /// Reports the bucket mirrored around the middle (`m − 1 − signal`).
    Mirror,
    Fixed {
        bucket: usize,
    },
    /// Member of a coalition that always endorses `bucket`.
    Colluder {
        coalition: String,
        bucket: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PredictionRule {
    /// Posterior predictive of the agent's true signal.
    Bayes,
    Fabricated {
        vector: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default = "bayes")]
    pub prediction: PredictionRule,
}

fn bayes() -> PredictionRule {
    PredictionRule::Bayes
}

impl AgentPolicy {
    pub fn honest() -> Self {
        Self {
            kind: PolicyKind::Honest,
            prediction: PredictionRule::Bayes,
        }
    }

    pub fn underreport(shift: usize) -> Self {
        Self {
            kind: PolicyKind::Underreport { shift },
            prediction: PredictionRule::Bayes,
        }
    }

    pub fn mirror() -> Self {
        Self {
            kind: PolicyKind::Mirror,
            prediction: PredictionRule::Bayes,
        }
    }

    pub fn fixed(bucket: usize) -> Self {
        Self {
            kind: PolicyKind::Fixed { bucket },
            prediction: PredictionRule::Bayes,
        }
    }

    pub fn colluder(coalition: impl Into<String>, bucket: usize) -> Self {
        Self {
            kind: PolicyKind::Colluder {
                coalition: coalition.into(),
                bucket,
            },
            prediction: PredictionRule::Bayes,
        }
    }

    pub fn with_prediction(mut self, vector: Vec<f64>) -> Self {
        self.prediction = PredictionRule::Fabricated { vector };
        self
    }

    pub fn is_honest(&self) -> bool {
        self.kind == PolicyKind::Honest && self.prediction == PredictionRule::Bayes
    }

    pub fn validate(&self, buckets: usize) -> Result<()> {
        match &self.kind {
            PolicyKind::Fixed { bucket } | PolicyKind::Colluder { bucket, .. }
                if *bucket >= buckets =>
            {
                return Err(Error::InvalidModel(format!(
                    "policy {self} targets bucket {bucket} of {buckets}"
                )))
            }
            PolicyKind::Underreport { shift: 0 } => {
                return Err(Error::InvalidModel("underreport shift must be >= 1".into()))
            }
            _ => {}
        }
        if let PredictionRule::Fabricated { vector } = &self.prediction {
            let sum: f64 = vector.iter().sum();
            if vector.len() != buckets
                || vector.iter().any(|p| !(0.0..=1.0).contains(p))
                || (sum - 1.0).abs() > 1e-9
            {
                return Err(Error::InvalidModel(format!(
                    "fabricated prediction {vector:?} is not a distribution over {buckets} buckets"
                )));
            }
        }
        Ok(())
    }

    pub fn endorse(&self, signal: usize, buckets: usize) -> usize {
        match &self.kind {
            PolicyKind::Honest => signal,
            PolicyKind::Underreport { shift } => signal.saturating_sub(*shift),
            PolicyKind::Mirror => buckets - 1 - signal,
            PolicyKind::Fixed { bucket } | PolicyKind::Colluder { bucket, .. } => *bucket,
        }
    }

    /// Colluders without an explicit fabricated vector concentrate
    /// [`COLLUDER_CONCENTRATION`] on their agreed bucket.
    pub fn predict(&self, signal: usize, model: &WorldModel) -> Result<Vec<f64>> {
        match (&self.prediction, &self.kind) {
            (PredictionRule::Fabricated { vector }, _) => Ok(vector.clone()),
            (PredictionRule::Bayes, PolicyKind::Colluder { bucket, .. }) => {
                Ok(concentrated(*bucket, model.signals()))
            }
            (PredictionRule::Bayes, _) => posterior_predictive(signal, model),
        }
    }
}

fn concentrated(bucket: usize, buckets: usize) -> Vec<f64> {
    let rest = (1.0 - COLLUDER_CONCENTRATION) / (buckets - 1) as f64;
    (0..buckets)
        .map(|k| {
            if k == bucket {
                COLLUDER_CONCENTRATION
            } else {
                rest
            }
        })
        .collect()
}

impl fmt::Display for AgentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            PolicyKind::Honest => write!(f, "honest")?,
            PolicyKind::Underreport { shift } => write!(f, "underreport({shift})")?,
            PolicyKind::Mirror => write!(f, "mirror")?,
            PolicyKind::Fixed { bucket } => write!(f, "fixed({bucket})")?,
            PolicyKind::Colluder { coalition, bucket } => {
                write!(f, "colluder({coalition},{bucket})")?
            }
        }
        if let PredictionRule::Fabricated { vector } = &self.prediction {
            write!(f, "+fabricated{vector:?}")?;
        }
        Ok(())
    }
}

/// Unilateral deviations checked against honest reporting: every fixed
/// bucket, a one-bucket underreport, the mirrored report, and an honest
/// endorsement with a uniform fabricated prediction.
pub fn deviation_catalog(buckets: usize) -> Vec<AgentPolicy> {
    let mut out: Vec<AgentPolicy> = (0..buckets).map(AgentPolicy::fixed).collect();
    out.push(AgentPolicy::underreport(1));
    out.push(AgentPolicy::mirror());
    out.push(AgentPolicy::honest().with_prediction(vec![1.0 / buckets as f64; buckets]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endorsement_rules_saturate() {
        assert_eq!(AgentPolicy::underreport(2).endorse(1, 3), 0);
        assert_eq!(AgentPolicy::underreport(1).endorse(2, 3), 1);
        assert_eq!(AgentPolicy::mirror().endorse(0, 3), 2);
        assert_eq!(AgentPolicy::fixed(1).endorse(0, 3), 1);
        assert_eq!(AgentPolicy::honest().endorse(2, 3), 2);
    }

    #[test]
    fn colluders_fabricate_concentrated_predictions() {
        let m = WorldModel::binary(0.5, 0.8);
        let y = AgentPolicy::colluder("c", 0).predict(1, &m).unwrap();
        assert_eq!(y, vec![0.9, 0.09999999999999998]);
    }

    #[test]
    fn policies_validate_against_bucket_count() {
        assert!(AgentPolicy::fixed(2).validate(2).is_err());
        assert!(AgentPolicy::underreport(0).validate(2).is_err());
        assert!(AgentPolicy::honest()
            .with_prediction(vec![0.2, 0.2])
            .validate(2)
            .is_err());
        assert!(deviation_catalog(3).iter().all(|p| p.validate(3).is_ok()));
    }

    #[test]
    fn policy_json_shape() {
        let p: AgentPolicy = serde_json::from_str(r#"{"kind":"fixed","bucket":1}"#).unwrap();
        assert_eq!(p, AgentPolicy::fixed(1));
        let p: AgentPolicy = serde_json::from_str(
            r#"{"kind":"honest","prediction":{"rule":"fabricated","vector":[0.5,0.5]}}"#,
        )
        .unwrap();
        assert_eq!(p.to_string(), "honest+fabricated[0.5, 0.5]");
    }
}

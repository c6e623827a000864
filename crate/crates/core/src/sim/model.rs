use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DISTRIBUTION_TOLERANCE: f64 = 1e-12;

/// Common-prior signal model: a latent state drawn from `prior`, then one
/// conditionally independent signal per respondent from the state's
/// likelihood row. Signals are answer-bucket indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub states: Vec<String>,
    pub prior: Vec<f64>,
    /// `signal_likelihoods[state][bucket]`.
    pub signal_likelihoods: Vec<Vec<f64>>,
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidModel(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(Error::InvalidModel(format!("{what} sums to {sum}")));
    }
    Ok(())
}

impl WorldModel {
    /// Two states, two signals, symmetric accuracy `accuracy`.
    pub fn binary(prior_first: f64, accuracy: f64) -> Self {
        Self {
            states: vec!["low".into(), "high".into()],
            prior: vec![prior_first, 1.0 - prior_first],
            signal_likelihoods: vec![
                vec![accuracy, 1.0 - accuracy],
                vec![1.0 - accuracy, accuracy],
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::InvalidModel("no states".into()));
        }
        if self.prior.len() != self.states.len()
            || self.signal_likelihoods.len() != self.states.len()
        {
            return Err(Error::InvalidModel(
                "prior and likelihoods must have one entry per state".into(),
            ));
        }
        check_distribution("prior", &self.prior)?;
        let m = self.signal_likelihoods[0].len();
        if m < 2 {
            return Err(Error::InvalidModel("need at least 2 signals".into()));
        }
        for (s, row) in self.signal_likelihoods.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidModel(format!(
                    "likelihood row {s} has {} entries, expected {m}",
                    row.len()
                )));
            }
            check_distribution(&format!("likelihood row {s}"), row)?;
        }
        Ok(())
    }

    pub fn signals(&self) -> usize {
        self.signal_likelihoods.first().map_or(0, Vec::len)
    }

    /// Posterior over states after observing `signal`.
    pub fn posterior(&self, signal: usize) -> Result<Vec<f64>> {
        if signal >= self.signals() {
            return Err(Error::InvalidModel(format!("signal {signal} out of range")));
        }
        let joint: Vec<f64> = self
            .prior
            .iter()
            .zip(&self.signal_likelihoods)
            .map(|(p, row)| p * row[signal])
            .collect();
        let marginal: f64 = joint.iter().sum();
        if marginal <= 0.0 {
            return Err(Error::ImpossibleSignal(signal));
        }
        Ok(joint.into_iter().map(|j| j / marginal).collect())
    }
}

/// Predicted distribution of another respondent's signal given one's own:
/// `y_k = Σ_s P(s | signal) · P(k | s)`.
pub fn posterior_predictive(signal: usize, model: &WorldModel) -> Result<Vec<f64>> {
    let posterior = model.posterior(signal)?;
    let mut y = vec![0.0; model.signals()];
    for (w, row) in posterior.iter().zip(&model.signal_likelihoods) {
        for (yk, l) in y.iter_mut().zip(row) {
            *yk += w * l;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn binary_predictive_by_hand() {
        let m = WorldModel::binary(0.5, 0.8);
        let post = m.posterior(0).unwrap();
        assert_abs_diff_eq!(post[0], 0.8, epsilon = 1e-15);
        let y = posterior_predictive(0, &m).unwrap();
        assert_abs_diff_eq!(y[0], 0.68, epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], 0.32, epsilon = 1e-15);
    }

    #[test]
    fn uniform_likelihoods_give_uniform_predictive() {
        let m = WorldModel {
            states: vec!["a".into(), "b".into()],
            prior: vec![0.3, 0.7],
            signal_likelihoods: vec![vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]],
        };
        for s in 0..3 {
            for y in posterior_predictive(s, &m).unwrap() {
                assert_abs_diff_eq!(y, 1.0 / 3.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_state_returns_its_row() {
        let m = WorldModel {
            states: vec!["only".into()],
            prior: vec![1.0],
            signal_likelihoods: vec![vec![0.1, 0.6, 0.3]],
        };
        assert_eq!(posterior_predictive(1, &m).unwrap(), vec![0.1, 0.6, 0.3]);
    }

    #[test]
    fn impossible_and_invalid() {
        let m = WorldModel {
            states: vec!["only".into()],
            prior: vec![1.0],
            signal_likelihoods: vec![vec![1.0, 0.0]],
        };
        assert_eq!(
            posterior_predictive(1, &m).unwrap_err().kind(),
            "impossible-signal"
        );
        let bad = WorldModel {
            prior: vec![0.6, 0.6],
            ..WorldModel::binary(0.5, 0.8)
        };
        assert_eq!(bad.validate().unwrap_err().kind(), "invalid-model");
    }
}

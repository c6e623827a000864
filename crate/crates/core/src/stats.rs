//! Monte Carlo summaries with an order-fixed reduction.

use serde::{Deserialize, Serialize};

/// 95% two-sided normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Pairwise (cascade) summation over a fixed order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean with a standard-error-based 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    #[serde(deserialize_with = "null_as_nan")]
    pub mean: f64,
    /// Serialized as `null` in JSON when undefined.
    #[serde(deserialize_with = "null_as_nan")]
    pub half_width: f64,
    pub samples: usize,
}

impl Estimate {
    /// Half-width is NaN for fewer than two samples.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                half_width: f64::NAN,
                samples: 0,
            };
        }
        let mean = pairwise_sum(values) / n as f64;
        let half_width = if n < 2 {
            f64::NAN
        } else {
            let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            let var = pairwise_sum(&sq) / (n - 1) as f64;
            Z_95 * (var / n as f64).sqrt()
        };
        Self {
            mean,
            half_width,
            samples: n,
        }
    }

    /// Mean exceeds zero by more than the half-width.
    pub fn significantly_positive(&self) -> bool {
        self.mean > self.half_width
    }
}

// JSON has no NaN; serde_json writes it as null.
fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

//! Exact money amounts with a declared minimal unit.

use rust_decimal::prelude::{FromPrimitive, ToPrimitive};
use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

pub type Money = Decimal;

/// Smallest representable amount, `10^-decimals`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MoneyUnit {
    pub decimals: u32,
}

impl Default for MoneyUnit {
    fn default() -> Self {
        Self { decimals: 2 }
    }
}

impl MoneyUnit {
    pub fn new(decimals: u32) -> Self {
        Self { decimals }
    }

    pub fn unit(&self) -> Money {
        Decimal::new(1, self.decimals)
    }

    /// Half-to-even rounding onto the unit grid.
    pub fn round(&self, amount: Money) -> Money {
        amount.round_dp_with_strategy(self.decimals, RoundingStrategy::MidpointNearestEven)
    }

    /// Rounds toward zero onto the unit grid.
    pub fn truncate(&self, amount: Money) -> Money {
        amount.round_dp_with_strategy(self.decimals, RoundingStrategy::ToZero)
    }

    /// Converts a binary float result and rounds it half-to-even.
    pub fn from_f64(&self, value: f64) -> Option<Money> {
        Decimal::from_f64(value).map(|d| self.round(d))
    }

    /// Same value written with exactly `decimals` fractional digits.
    pub fn fixed(&self, amount: Money) -> Money {
        let mut a = self.round(amount);
        a.rescale(self.decimals);
        a
    }

    /// True when `amount` has no digits below the unit.
    pub fn is_on_grid(&self, amount: Money) -> bool {
        self.round(amount) == amount
    }
}

pub(crate) fn to_f64(amount: Money) -> f64 {
    amount.to_f64().unwrap_or(f64::NAN)
}

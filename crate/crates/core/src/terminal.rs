use serde::{Deserialize, Serialize};

use crate::domain::DomainFlow;
use crate::error::{Error, Result};

/// Bounded terminal payoff `g(X_T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    Constant { value: f64 },
    /// `offset + <weights, x>`
    Linear { weights: Vec<f64>, offset: f64 },
    /// `(offset + <weights, x>)^+`
    PositivePart { weights: Vec<f64>, offset: f64 },
}

impl Payoff {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Payoff::Constant { value } => *value,
            Payoff::Linear { weights, offset } => {
                offset + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            }
            Payoff::PositivePart { weights, offset } => {
                (offset + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).max(0.0)
            }
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            Payoff::Constant { value } => *value >= 0.0,
            Payoff::Linear { weights, offset } => weights.iter().all(|&w| w == 0.0) && *offset >= 0.0,
            Payoff::PositivePart { .. } => true,
        }
    }

    fn input_dim(&self) -> Option<usize> {
        match self {
            Payoff::Constant { .. } => None,
            Payoff::Linear { weights, .. } | Payoff::PositivePart { weights, .. } => Some(weights.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum TerminalKind {
    Bounded { payoff: Payoff },
    /// `+inf` on `{tau <= T}`, `tau` the exit time from the domain.
    Xi1 { domain: DomainFlow },
    /// `+inf` on `A_T = {tau > T}`.
    Xi2 { domain: DomainFlow },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalDescriptor {
    pub kind: TerminalKind,
    /// Truncation levels `k_1 < k_2 < ...`.
    pub ladder: Vec<f64>,
}

impl TerminalDescriptor {
    pub fn bounded(payoff: Payoff, ladder: Vec<f64>) -> Self {
        Self {
            kind: TerminalKind::Bounded { payoff },
            ladder,
        }
    }

    pub fn xi1(domain: DomainFlow, ladder: Vec<f64>) -> Self {
        Self {
            kind: TerminalKind::Xi1 { domain },
            ladder,
        }
    }

    pub fn xi2(domain: DomainFlow, ladder: Vec<f64>) -> Self {
        Self {
            kind: TerminalKind::Xi2 { domain },
            ladder,
        }
    }

    pub fn domain(&self) -> Option<&DomainFlow> {
        match &self.kind {
            TerminalKind::Bounded { .. } => None,
            TerminalKind::Xi1 { domain } | TerminalKind::Xi2 { domain } => Some(domain),
        }
    }

    pub fn is_singular(&self) -> bool {
        self.domain().is_some()
    }

    /// True when every truncated terminal value is nonnegative.
    pub fn is_nonnegative(&self) -> bool {
        match &self.kind {
            TerminalKind::Bounded { payoff } => payoff.is_nonnegative(),
            _ => true,
        }
    }

    pub fn check_ladder(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(Error::InvalidParameter("truncation ladder is empty".into()));
        }
        if self.ladder.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidParameter("truncation levels must be positive and finite".into()));
        }
        if self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("truncation ladder must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn check_dims(&self, dim: usize) -> Result<()> {
        let found = match &self.kind {
            TerminalKind::Bounded { payoff } => payoff.input_dim(),
            TerminalKind::Xi1 { domain } | TerminalKind::Xi2 { domain } => Some(domain.dim()),
        };
        match found {
            Some(found) if found != dim => Err(Error::DimensionMismatch { expected: dim, found }),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_checks() {
        let mut t = TerminalDescriptor::bounded(Payoff::Constant { value: 1.0 }, vec![1.0, 2.0, 4.0]);
        assert!(t.check_ladder().is_ok());
        t.ladder = vec![1.0, 1.0];
        assert!(t.check_ladder().is_err());
        t.ladder = vec![-1.0, 2.0];
        assert!(t.check_ladder().is_err());
        t.ladder.clear();
        assert!(t.check_ladder().is_err());
    }

    #[test]
    fn payoff_sign() {
        assert!(Payoff::Constant { value: 0.0 }.is_nonnegative());
        let lin = Payoff::Linear {
            weights: vec![1.0],
            offset: 0.0,
        };
        assert!(!lin.is_nonnegative());
        assert_eq!(lin.eval(&[-2.0]), -2.0);
        let pos = Payoff::PositivePart {
            weights: vec![1.0],
            offset: 0.5,
        };
        assert_eq!(pos.eval(&[-2.0]), 0.0);
        assert_eq!(pos.eval(&[1.0]), 1.5);
    }
}

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A continuously differentiable boundary curve `t -> c(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Curve {
    Constant { value: f64 },
    Linear { start: f64, slope: f64 },
    /// `center + amplitude * sin(2 pi frequency t + phase)`
    Sinusoidal {
        center: f64,
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
}

impl Curve {
    pub fn constant(value: f64) -> Self {
        Curve::Constant { value }
    }

    pub fn linear(start: f64, slope: f64) -> Self {
        Curve::Linear { start, slope }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Curve::Constant { value } => value,
            Curve::Linear { start, slope } => start + slope * t,
            Curve::Sinusoidal {
                center,
                amplitude,
                frequency,
                phase,
            } => center + amplitude * (TAU * frequency * t + phase).sin(),
        }
    }

    pub fn velocity(&self, t: f64) -> f64 {
        match *self {
            Curve::Constant { .. } => 0.0,
            Curve::Linear { slope, .. } => slope,
            Curve::Sinusoidal {
                amplitude,
                frequency,
                phase,
                ..
            } => amplitude * TAU * frequency * (TAU * frequency * t + phase).cos(),
        }
    }

    /// Bound on `|c'(t)|` valid for every `t`.
    pub fn max_speed(&self) -> f64 {
        match *self {
            Curve::Constant { .. } => 0.0,
            Curve::Linear { slope, .. } => slope.abs(),
            Curve::Sinusoidal {
                amplitude,
                frequency,
                ..
            } => (amplitude * TAU * frequency).abs(),
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Curve::Constant { value } => value.is_finite(),
            Curve::Linear { start, slope } => start.is_finite() && slope.is_finite(),
            Curve::Sinusoidal {
                center,
                amplitude,
                frequency,
                phase,
            } => [center, amplitude, frequency, phase].iter().all(|v| v.is_finite()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingInterval {
    pub lower: Curve,
    pub upper: Curve,
}

impl MovingInterval {
    pub fn fixed(lower: f64, upper: f64) -> Self {
        Self {
            lower: Curve::constant(lower),
            upper: Curve::constant(upper),
        }
    }

    pub fn bounds(&self, t: f64) -> (f64, f64) {
        (self.lower.value(t), self.upper.value(t))
    }
}

/// Time-varying open box `D_t = prod_i (alpha_i(t), beta_i(t))` on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainFlow {
    pub intervals: Vec<MovingInterval>,
    pub horizon: f64,
}

/// Samples used to certify the gap and speed of a domain.
const CHECK_SAMPLES: usize = 1000;

impl DomainFlow {
    pub fn new(intervals: Vec<MovingInterval>, horizon: f64) -> Result<Self> {
        let domain = Self { intervals, horizon };
        domain.validate()?;
        Ok(domain)
    }

    pub fn interval(lower: f64, upper: f64, horizon: f64) -> Result<Self> {
        Self::new(vec![MovingInterval::fixed(lower, upper)], horizon)
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        self.intervals.iter().zip(x).all(|(iv, &xi)| {
            let (lo, hi) = iv.bounds(t);
            xi > lo && xi < hi
        })
    }

    /// Smallest `beta_i(t) - alpha_i(t)` over a fine sample of `[0, T]`.
    pub fn min_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for j in 0..=CHECK_SAMPLES {
            let t = self.horizon * j as f64 / CHECK_SAMPLES as f64;
            for iv in &self.intervals {
                let (lo, hi) = iv.bounds(t);
                gap = gap.min(hi - lo);
            }
        }
        gap
    }

    pub fn max_speed(&self) -> f64 {
        self.intervals
            .iter()
            .map(|iv| iv.lower.max_speed().max(iv.upper.max_speed()))
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() {
            return Err(Error::InvalidParameter("domain needs at least one interval".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "domain horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self
            .intervals
            .iter()
            .any(|iv| !iv.lower.is_finite() || !iv.upper.is_finite())
        {
            return Err(Error::InvalidParameter("domain curve has non-finite parameters".into()));
        }
        let gap = self.min_gap();
        if !(gap > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lower boundary meets upper boundary (minimum gap {gap})"
            )));
        }
        Ok(())
    }
}

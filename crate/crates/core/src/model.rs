//! Forward dynamics `dX = b(X) dt + sigma(X) dW + jumps`.
//!
//! Coefficients are affine in the state:
//! `b(x) = b0 + B x` and `sigma_ij(x) = S0_ij + x_i S1_ij`.
//! That single family covers Brownian motion, geometric Brownian motion,
//! Ornstein-Uhlenbeck and general affine diffusions.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelPreset {
    Bm,
    Gbm,
    Ou,
    Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum MarkLaw {
    PointMass { mark: Vec<f64> },
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
}

impl MarkLaw {
    pub fn dim(&self) -> usize {
        match self {
            MarkLaw::PointMass { mark } => mark.len(),
            MarkLaw::UniformBox { lower, .. } => lower.len(),
            MarkLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            MarkLaw::PointMass { mark } => out.copy_from_slice(mark),
            MarkLaw::UniformBox { lower, upper } => {
                for ((o, lo), hi) in out.iter_mut().zip(lower).zip(upper) {
                    *o = lo + (hi - lo) * rng.random::<f64>();
                }
            }
            MarkLaw::Gaussian { mean, sd } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(sd) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + s * z;
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            MarkLaw::PointMass { mark } => {
                mark.iter().all(|v| v.is_finite()) && mark.iter().any(|&v| v != 0.0)
            }
            MarkLaw::UniformBox { lower, upper } => {
                lower.len() == upper.len()
                    && lower.iter().zip(upper).all(|(l, u)| l.is_finite() && u > l && u.is_finite())
            }
            MarkLaw::Gaussian { mean, sd } => {
                mean.len() == sd.len()
                    && mean.iter().all(|v| v.is_finite())
                    && sd.iter().all(|&s| s >= 0.0 && s.is_finite())
                    && (sd.iter().any(|&s| s > 0.0) || mean.iter().any(|&v| v != 0.0))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("malformed mark law {self:?}")))
        }
    }
}

/// Finite-activity compound Poisson jumps: marks are added to the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    /// Expected number of jumps per unit time.
    pub intensity: f64,
    pub mark_law: MarkLaw,
    /// Bound on the jump kernel weight, constant over marks.
    pub weight: f64,
}

impl JumpSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.intensity >= 0.0 && self.intensity.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "jump intensity must be finite and nonnegative, got {}",
                self.intensity
            )));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "jump weight must be finite and nonnegative, got {}",
                self.weight
            )));
        }
        if self.mark_law.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.mark_law.dim(),
            });
        }
        self.mark_law.validate()
    }

    /// `int |weight|^power mu(de)` for the finite intensity measure.
    pub fn weight_moment(&self, power: f64) -> f64 {
        self.intensity * self.weight.abs().powf(power)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub dim: usize,
    pub preset: ModelPreset,
    pub drift_const: Vec<f64>,
    /// Row-major `dim x dim`.
    pub drift_linear: Vec<f64>,
    /// Row-major `dim x dim`.
    pub diffusion_const: Vec<f64>,
    /// Row-major `dim x dim`; row `i` is scaled by `x_i`.
    pub diffusion_linear: Vec<f64>,
    #[serde(default)]
    pub jump: Option<JumpSpec>,
    pub x0: Vec<f64>,
}

fn diagonal(values: &[f64]) -> Vec<f64> {
    let d = values.len();
    let mut m = vec![0.0; d * d];
    for (i, &v) in values.iter().enumerate() {
        m[i * d + i] = v;
    }
    m
}

impl ForwardModel {
    /// Brownian motion with drift `mu` and independent coordinates of volatility `sigma`.
    pub fn brownian(x0: Vec<f64>, mu: f64, sigma: f64) -> Self {
        let d = x0.len();
        Self {
            dim: d,
            preset: ModelPreset::Bm,
            drift_const: vec![mu; d],
            drift_linear: vec![0.0; d * d],
            diffusion_const: diagonal(&vec![sigma; d]),
            diffusion_linear: vec![0.0; d * d],
            jump: None,
            x0,
        }
    }

    pub fn geometric(x0: Vec<f64>, rate: f64, vol: f64) -> Self {
        let d = x0.len();
        Self {
            dim: d,
            preset: ModelPreset::Gbm,
            drift_const: vec![0.0; d],
            drift_linear: diagonal(&vec![rate; d]),
            diffusion_const: vec![0.0; d * d],
            diffusion_linear: diagonal(&vec![vol; d]),
            jump: None,
            x0,
        }
    }

    /// `dX = theta (mean - X) dt + sigma dW`.
    pub fn ornstein_uhlenbeck(x0: Vec<f64>, theta: f64, mean: f64, sigma: f64) -> Self {
        let d = x0.len();
        Self {
            dim: d,
            preset: ModelPreset::Ou,
            drift_const: vec![theta * mean; d],
            drift_linear: diagonal(&vec![-theta; d]),
            diffusion_const: diagonal(&vec![sigma; d]),
            diffusion_linear: vec![0.0; d * d],
            jump: None,
            x0,
        }
    }

    pub fn with_jumps(mut self, jump: JumpSpec) -> Self {
        self.jump = Some(jump);
        self
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.drift_linear[i * d..(i + 1) * d];
            out[i] = self.drift_const[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Row-major diffusion matrix at `x`.
    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = self.diffusion_const[i * d + j] + x[i] * self.diffusion_linear[i * d + j];
            }
        }
    }

    /// Smallest eigenvalue of `sigma sigma^T` at `x`.
    pub fn min_ellipticity(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = vec![0.0; d * d];
        self.diffusion(x, &mut s);
        let sigma = DMatrix::from_row_slice(d, d, &s);
        let a = &sigma * sigma.transpose();
        SymmetricEigen::new(a).eigenvalues.min()
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        let checks = [
            (self.drift_const.len(), d),
            (self.drift_linear.len(), d * d),
            (self.diffusion_const.len(), d * d),
            (self.diffusion_linear.len(), d * d),
            (self.x0.len(), d),
        ];
        for (found, expected) in checks {
            if found != expected {
                return Err(Error::DimensionMismatch { expected, found });
            }
        }
        if let Some(jump) = &self.jump {
            jump.validate(d)?;
        }
        Ok(())
    }

    /// Coefficients are globally Holder only when the diffusion does not grow with the state.
    pub fn globally_holder(&self) -> bool {
        self.diffusion_linear.iter().all(|&v| v == 0.0)
    }
}

//! Generator of the backward equation and its closed-form special cases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-continuous step function on `[0, T]`.
///
/// `values[j]` holds on `[breaks[j-1], breaks[j])`, with `breaks[-1] = -inf`
/// and `breaks[len] = +inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant {
    #[serde(default)]
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn constant(value: f64) -> Self {
        Self {
            breaks: Vec::new(),
            values: vec![value],
        }
    }

    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let pc = Self { breaks, values };
        pc.check()?;
        Ok(pc)
    }

    pub fn check(&self) -> Result<()> {
        if self.values.len() != self.breaks.len() + 1 {
            return Err(Error::InvalidParameter(format!(
                "step function needs {} values for {} breaks, got {}",
                self.breaks.len() + 1,
                self.breaks.len(),
                self.values.len()
            )));
        }
        if self.breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("step function breaks must increase".into()));
        }
        if self.values.iter().chain(&self.breaks).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("step function entries must be finite".into()));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        let idx = self.breaks.partition_point(|&b| b <= t);
        self.values[idx]
    }

    pub fn as_constant(&self) -> Option<f64> {
        let first = self.values[0];
        self.values.iter().all(|&v| v == first).then_some(first)
    }

    /// Pieces `(start, end, value)` covering `[a, b]`.
    pub fn pieces(&self, a: f64, b: f64) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        let mut start = a;
        for (j, &value) in self.values.iter().enumerate() {
            let end = self.breaks.get(j).copied().unwrap_or(f64::INFINITY).min(b);
            if end > start {
                out.push((start, end, value));
                start = end;
            }
            if start >= b {
                break;
            }
        }
        out
    }

    /// `int_a^b g(v(t)) dt`, exact for a step function.
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, g: F) -> f64 {
        self.pieces(a, b)
            .into_iter()
            .map(|(s, e, v)| (e - s) * g(v))
            .sum()
    }

    pub fn min_on(&self, a: f64, b: f64) -> f64 {
        self.pieces(a, b)
            .into_iter()
            .map(|(_, _, v)| v)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn holder_conjugate(q: f64) -> f64 {
    q / (q - 1.0)
}

/// Generator
/// `f(t, y, z, I) = chi y - y|y|^(q-1) / eta(t) + f0(t) + L <z> + I`,
/// where `<z>` is the normalized coordinate sum of `z` (enabled by
/// `z_dependent`) and `I` the jump integral (enabled by `jump_dependent`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverDescriptor {
    pub q: f64,
    pub p: f64,
    pub eta: PiecewiseConstant,
    pub f0: PiecewiseConstant,
    /// Monotonicity constant; also the coefficient of the linear `y` term.
    #[serde(default)]
    pub chi: f64,
    /// Lipschitz constant in `z`.
    #[serde(default)]
    pub lipschitz_z: f64,
    /// Integrability exponent for `eta` and `f0`.
    pub ell: f64,
    #[serde(default)]
    pub z_dependent: bool,
    #[serde(default)]
    pub jump_dependent: bool,
    /// Whether the `-y|y|^(q-1)/eta` term is present.
    #[serde(default = "enabled")]
    pub superlinear: bool,
}

fn enabled() -> bool {
    true
}

impl DriverDescriptor {
    /// `f(y) = -y|y|^(q-1)` with integrability exponent `ell`.
    pub fn power(q: f64, ell: f64) -> Self {
        Self {
            q,
            p: holder_conjugate(q),
            eta: PiecewiseConstant::constant(1.0),
            f0: PiecewiseConstant::constant(0.0),
            chi: 0.0,
            lipschitz_z: 0.0,
            ell,
            z_dependent: false,
            jump_dependent: false,
            superlinear: true,
        }
    }

    /// The zero generator `f = 0`.
    pub fn zero() -> Self {
        Self {
            superlinear: false,
            ..Self::power(2.0, 2.0)
        }
    }

    /// True when the generator does not depend on `y`.
    pub fn is_y_free(&self) -> bool {
        !self.superlinear && self.chi == 0.0
    }

    fn power_term(&self, t: f64, y: f64) -> f64 {
        if self.superlinear {
            y * y.abs().powf(self.q - 1.0) / self.eta.value(t)
        } else {
            0.0
        }
    }

    pub fn is_pure_power(&self) -> bool {
        self.superlinear
            && self.eta.as_constant() == Some(1.0)
            && self.f0.as_constant() == Some(0.0)
            && self.chi == 0.0
            && !self.z_dependent
            && !self.jump_dependent
    }

    pub fn require_pure_power(&self) -> Result<()> {
        if self.is_pure_power() {
            Ok(())
        } else {
            Err(Error::NotPurePower(
                "need eta = 1, f0 = 0, chi = 0 and no z or jump dependence".into(),
            ))
        }
    }

    fn z_term(&self, z: &[f64]) -> f64 {
        if !self.z_dependent || z.is_empty() {
            return 0.0;
        }
        self.lipschitz_z * z.iter().sum::<f64>() / (z.len() as f64).sqrt()
    }

    /// Part of the generator that does not involve `y` or `f0`.
    fn linear_terms(&self, z: &[f64], jump_integral: f64) -> f64 {
        let jump = if self.jump_dependent { jump_integral } else { 0.0 };
        self.z_term(z) + jump
    }

    pub fn eval(&self, t: f64, y: f64, z: &[f64], jump_integral: f64) -> f64 {
        self.chi * y - self.power_term(t, y)
            + self.f0.value(t)
            + self.linear_terms(z, jump_integral)
    }

    /// Truncated generator `[f - f0] + min(f0, k)`.
    pub fn eval_truncated(&self, k: f64, t: f64, y: f64, z: &[f64], jump_integral: f64) -> f64 {
        self.chi * y - self.power_term(t, y)
            + self.f0.value(t).min(k)
            + self.linear_terms(z, jump_integral)
    }

    /// `d/dy` of the generator.
    pub fn dy(&self, t: f64, y: f64) -> f64 {
        if self.superlinear {
            self.chi - self.q * y.abs().powf(self.q - 1.0) / self.eta.value(t)
        } else {
            self.chi
        }
    }

    /// Generator with `y = 0`: the `y`-free part used by the linear upper-bound driver.
    pub fn at_zero(&self, t: f64, z: &[f64], jump_integral: f64) -> f64 {
        self.f0.value(t) + self.linear_terms(z, jump_integral)
    }
}

/// Minimal solution with terminal value `+inf` for the pure power driver:
/// `((q-1) s)^(-1/(q-1))` where `s` is the time to horizon.
pub fn y_infinity(driver: &DriverDescriptor, time_to_horizon: f64) -> Result<f64> {
    driver.require_pure_power()?;
    if !(time_to_horizon > 0.0) {
        return Err(Error::NonPositiveHorizon(time_to_horizon));
    }
    Ok(y_infinity_unchecked(driver.q, time_to_horizon))
}

pub(crate) fn y_infinity_unchecked(q: f64, time_to_horizon: f64) -> f64 {
    ((q - 1.0) * time_to_horizon).powf(-1.0 / (q - 1.0))
}

/// Solution of the deterministic equation with generator `-y|y|^(q-1)` and
/// terminal value `k`: `((q-1) s + k^(1-q))^(-1/(q-1))`.
pub fn y_truncated_ode(driver: &DriverDescriptor, k: f64, time_to_horizon: f64) -> Result<f64> {
    driver.require_pure_power()?;
    if !(k > 0.0) {
        return Err(Error::InvalidParameter(format!("truncation level must be positive, got {k}")));
    }
    if time_to_horizon < 0.0 {
        return Err(Error::NonPositiveHorizon(time_to_horizon));
    }
    if k.is_infinite() {
        return if time_to_horizon > 0.0 {
            Ok(y_infinity_unchecked(driver.q, time_to_horizon))
        } else {
            Ok(f64::INFINITY)
        };
    }
    if time_to_horizon == 0.0 {
        return Ok(k);
    }
    let q = driver.q;
    Ok(((q - 1.0) * time_to_horizon + k.powf(1.0 - q)).powf(-1.0 / (q - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Classical RK4 for `dy/ds = -y^q` (time to horizon `s`), an oracle
    /// independent of the closed form.
    fn rk4_backward(q: f64, k: f64, s_end: f64, steps: usize) -> f64 {
        let h = s_end / steps as f64;
        let f = |y: f64| -y.powf(q);
        let mut y = k;
        for _ in 0..steps {
            let k1 = f(y);
            let k2 = f(y + 0.5 * h * k1);
            let k3 = f(y + 0.5 * h * k2);
            let k4 = f(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        y
    }

    #[test]
    fn y_infinity_examples() {
        let d2 = DriverDescriptor::power(2.0, 3.0);
        let d3 = DriverDescriptor::power(3.0, 3.0);
        assert!((y_infinity(&d2, 0.5).unwrap() - 2.0).abs() < 1e-14);
        assert!((y_infinity(&d3, 0.5).unwrap() - 1.0).abs() < 1e-14);
        let tiny = y_infinity(&d2, 1e-6).unwrap();
        assert!((tiny / 1e6 - 1.0).abs() < 1e-12);
        assert!(matches!(y_infinity(&d2, 0.0), Err(Error::NonPositiveHorizon(_))));
        let mut not_power = d2.clone();
        not_power.f0 = PiecewiseConstant::constant(1.0);
        assert!(matches!(y_infinity(&not_power, 0.5), Err(Error::NotPurePower(_))));
    }

    #[test]
    fn truncated_closed_form_matches_rk4() {
        // Frozen value: RK4 with 20000 steps gives 0.5 to 1e-12 for q=2, k=1, s=1.
        let oracle = rk4_backward(2.0, 1.0, 1.0, 20_000);
        assert!((oracle - 0.5).abs() < 1e-12);
        for &(q, k, s) in &[(2.0, 1.0, 1.0), (3.0, 4.0, 0.3), (1.5, 0.7, 2.0), (2.5, 10.0, 0.05)] {
            let d = DriverDescriptor::power(q, 3.0);
            let closed = y_truncated_ode(&d, k, s).unwrap();
            let rk = rk4_backward(q, k, s, 20_000);
            assert!((closed - rk).abs() < 1e-9 * closed.max(1.0), "q={q} k={k} s={s}");
        }
    }

    #[test]
    fn truncated_terminal_and_limit() {
        let d = DriverDescriptor::power(2.0, 3.0);
        assert_eq!(y_truncated_ode(&d, 3.7, 0.0).unwrap(), 3.7);
        let far = y_truncated_ode(&d, 1e12, 0.5).unwrap();
        assert!((far - 2.0).abs() < 1e-9);
        assert_eq!(y_truncated_ode(&d, f64::INFINITY, 0.5).unwrap(), 2.0);
        assert!(y_truncated_ode(&d, 0.0, 0.5).is_err());
    }

    #[test]
    fn y_infinity_ode_residual() {
        // central differences, step 1e-5, over s in [0.1, 1]
        for &q in &[1.5, 2.0, 3.0] {
            let d = DriverDescriptor::power(q, 3.0);
            let h = 1e-5;
            for j in 0..=18 {
                let s = 0.1 + 0.05 * j as f64;
                let dy = (y_infinity(&d, s + h).unwrap() - y_infinity(&d, s - h).unwrap()) / (2.0 * h);
                let y = y_infinity(&d, s).unwrap();
                // d/ds y = -y^q  <=>  d/dt y = y^q
                assert!((-dy - y.powf(q)).abs() <= 1e-6 * y.powf(q).max(1.0), "q={q} s={s}");
            }
        }
    }

    #[test]
    fn holder_conjugate_exact() {
        for &q in &[1.5, 2.0, 3.0] {
            let d = DriverDescriptor::power(q, 3.0);
            assert_eq!(d.p * (q - 1.0), q);
        }
    }

    #[test]
    fn truncation_caps_f0() {
        let mut d = DriverDescriptor::power(2.0, 3.0);
        d.f0 = PiecewiseConstant::new(vec![0.5], vec![1.0, 10.0]).unwrap();
        assert_eq!(d.eval_truncated(4.0, 0.7, 0.0, &[], 0.0), 4.0);
        assert_eq!(d.eval_truncated(4.0, 0.2, 0.0, &[], 0.0), 1.0);
        assert_eq!(d.eval(0.7, 0.0, &[], 0.0), 10.0);
    }

    #[test]
    fn step_function_integration() {
        let pc = PiecewiseConstant::new(vec![0.25, 0.5], vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(pc.value(0.0), 1.0);
        assert_eq!(pc.value(0.25), 2.0);
        assert_eq!(pc.value(0.9), 4.0);
        let integral = pc.integrate(0.0, 1.0, |v| v);
        assert!((integral - (0.25 + 0.5 + 2.0)).abs() < 1e-15);
        assert!((pc.integrate(0.3, 0.6, |v| 1.0 / v) - (0.2 / 2.0 + 0.1 / 4.0)).abs() < 1e-15);
        assert_eq!(pc.min_on(0.3, 1.0), 2.0);
    }

    proptest::proptest! {
        #[test]
        fn truncated_monotone_in_level(q in 1.2f64..4.0, s in 0.0f64..2.0, k in 0.01f64..100.0, dk in 0.0f64..100.0) {
            let d = DriverDescriptor::power(q, 3.0);
            let lo = y_truncated_ode(&d, k, s).unwrap();
            let hi = y_truncated_ode(&d, k + dk, s).unwrap();
            proptest::prop_assert!(hi >= lo * (1.0 - 1e-14));
            if s > 0.0 {
                proptest::prop_assert!(hi <= y_infinity(&d, s).unwrap() * (1.0 + 1e-12));
            }
        }
    }
}

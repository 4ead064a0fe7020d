//! Assumption checks on a descriptor tuple.
//!
//! Every check records a witness quantity so a failing report says *why*.

use serde::{Deserialize, Serialize};

use crate::driver::{holder_conjugate, DriverDescriptor};
use crate::grid::TimeGrid;
use crate::model::ForwardModel;
use crate::terminal::{TerminalDescriptor, TerminalKind};

/// Lower bound on the smallest eigenvalue of `sigma sigma^T`.
pub const ELLIPTICITY_FLOOR: f64 = 1e-10;

/// Cap on boundary speed for the flow representation of the domain.
pub const MAX_BOUNDARY_SPEED: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub witness: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Builder(Vec<Check>);

impl Builder {
    fn push(&mut self, name: &str, passed: bool, witness: f64, note: impl Into<String>) {
        self.0.push(Check {
            name: name.to_string(),
            passed,
            witness,
            note: note.into(),
        });
    }
}

/// Points where ellipticity is sampled: `x0`, plus interior points of the
/// terminal domain at a few grid times, or a cloud around `x0` otherwise.
fn ellipticity_samples(model: &ForwardModel, terminal: &TerminalDescriptor, grid: &TimeGrid) -> Vec<Vec<f64>> {
    let mut pts = vec![model.x0.clone()];
    match terminal.domain() {
        Some(domain) if domain.dim() == model.dim => {
            let steps = grid.steps();
            for node in [0, steps / 2, steps] {
                let t = grid.time(node).min(domain.horizon);
                for frac in [0.25, 0.5, 0.75] {
                    pts.push(
                        domain
                            .intervals
                            .iter()
                            .map(|iv| {
                                let (lo, hi) = iv.bounds(t);
                                lo + frac * (hi - lo)
                            })
                            .collect(),
                    );
                }
            }
        }
        _ => {
            for shift in [-0.5, 0.5] {
                pts.push(
                    model
                        .x0
                        .iter()
                        .map(|&x| x + shift * x.abs().max(1.0))
                        .collect(),
                );
            }
        }
    }
    pts
}

pub fn validate_model(
    model: &ForwardModel,
    driver: &DriverDescriptor,
    terminal: &TerminalDescriptor,
    grid: &TimeGrid,
) -> ValidationReport {
    let mut b = Builder(Vec::new());
    let horizon = grid.horizon();

    // forward model
    let dims = model.check_dimensions();
    b.push(
        "model.dimensions",
        dims.is_ok(),
        model.dim as f64,
        dims.err().map(|e| e.to_string()).unwrap_or_default(),
    );
    if model.check_dimensions().is_ok() {
        let min_eig = ellipticity_samples(model, terminal, grid)
            .iter()
            .filter(|x| x.len() == model.dim)
            .map(|x| model.min_ellipticity(x))
            .fold(f64::INFINITY, f64::min);
        b.push(
            "model.ellipticity",
            min_eig >= ELLIPTICITY_FLOOR,
            min_eig,
            "smallest eigenvalue of sigma sigma^T at sampled points",
        );
    } else {
        b.push("model.ellipticity", false, f64::NAN, "skipped: malformed coefficients");
    }
    b.push(
        "model.holder",
        true,
        if model.globally_holder() { 1.0 } else { 0.0 },
        if model.globally_holder() {
            "analytic coefficients; assumed by construction"
        } else {
            "state-proportional diffusion is only locally Holder; assumed on the region visited"
        },
    );
    if let Some(jump) = &model.jump {
        b.push(
            "jumps.finite_activity",
            jump.intensity.is_finite() && jump.intensity >= 0.0,
            jump.intensity,
            "mu(E) = intensity",
        );
        // (C3): int |weight|^w mu(de) < inf, witnessed at w = 4
        let moment = jump.weight_moment(4.0);
        b.push("C3.weight_moments", moment.is_finite() && jump.weight >= 0.0, moment, "int weight^4 dmu");
    }

    // driver
    let q_ok = driver.q > 1.0 && driver.q.is_finite();
    b.push("C1.q_gt_1", q_ok, driver.q, "q > 1");
    let p_expected = holder_conjugate(driver.q);
    b.push(
        "driver.holder_conjugate",
        q_ok && driver.p * (driver.q - 1.0) == driver.q,
        driver.p - p_expected,
        "p = q/(q-1)",
    );
    b.push(
        "C1.superlinear_decay",
        driver.superlinear && driver.chi <= 0.0,
        driver.chi,
        "f(y) <= -y^q/eta + f(0) needs the power term and chi <= 0",
    );
    b.push(
        "A1.monotone",
        driver.chi.is_finite(),
        driver.chi,
        "(f(y)-f(y'))(y-y') <= chi (y-y')^2",
    );
    b.push(
        "A2.lipschitz_z",
        driver.lipschitz_z >= 0.0 && driver.lipschitz_z.is_finite(),
        driver.lipschitz_z,
        "slope in z bounded by L",
    );
    let jump_ok = !driver.jump_dependent || model.jump.as_ref().is_some_and(|j| j.weight >= 0.0);
    b.push(
        "A3.jump_kernel",
        jump_ok,
        model.jump.as_ref().map_or(0.0, |j| j.weight),
        "kernel between -1 and the weight bound",
    );
    b.push("C2.ell_gt_1", driver.ell > 1.0, driver.ell, "ell > 1");

    let eta_ok = driver.eta.check().is_ok();
    let f0_ok = driver.f0.check().is_ok();
    let eta_min = if eta_ok { driver.eta.min_on(0.0, horizon) } else { f64::NAN };
    b.push("C1.eta_positive", eta_ok && eta_min > 0.0, eta_min, "min of eta on [0,T]");
    let inv_eta = if eta_ok { driver.eta.integrate(0.0, horizon, |v| 1.0 / v) } else { f64::NAN };
    b.push(
        "A.inverse_eta_integrable",
        eta_ok && eta_min > 0.0 && inv_eta.is_finite(),
        inv_eta,
        "int_0^T dt/eta",
    );
    let eta_moment = if eta_ok && q_ok {
        driver
            .eta
            .integrate(0.0, horizon, |v| v.powf(driver.ell * (p_expected - 1.0)))
    } else {
        f64::NAN
    };
    b.push(
        "C2.eta_moment",
        eta_moment.is_finite() && eta_min > 0.0,
        eta_moment,
        "int_0^T eta^(ell(p-1)) dt",
    );
    let f0_min = if f0_ok { driver.f0.min_on(0.0, horizon) } else { f64::NAN };
    let f0_moment = if f0_ok {
        driver.f0.integrate(0.0, horizon, |v| v.abs().powf(driver.ell))
    } else {
        f64::NAN
    };
    b.push("C4.f0_nonnegative", f0_ok && f0_min >= 0.0, f0_min, "min of f0 on [0,T]");
    b.push("C4.f0_moment", f0_moment.is_finite(), f0_moment, "int_0^T f0^ell dt");

    // terminal
    let ladder = terminal.check_ladder();
    b.push(
        "terminal.ladder",
        ladder.is_ok(),
        terminal.ladder.len() as f64,
        ladder.err().map(|e| e.to_string()).unwrap_or_default(),
    );
    let tdims = terminal.check_dims(model.dim);
    b.push(
        "terminal.dimensions",
        tdims.is_ok(),
        model.dim as f64,
        tdims.err().map(|e| e.to_string()).unwrap_or_default(),
    );
    if let Some(domain) = terminal.domain() {
        let gap = domain.min_gap();
        b.push("domain.gap", gap > 0.0, gap, "min of beta(t) - alpha(t)");
        let speed = domain.max_speed();
        b.push(
            "domain.speed",
            speed <= MAX_BOUNDARY_SPEED,
            speed,
            "boundary velocity bound (smooth flow)",
        );
        b.push(
            "domain.horizon",
            (domain.horizon - horizon).abs() <= 1e-12 * horizon,
            domain.horizon,
            "domain and grid share T",
        );
        let inside = domain.dim() == model.dim && domain.contains(&model.x0, 0.0);
        b.push("domain.start_inside", inside, 0.0, "x0 in D_0");
        if matches!(terminal.kind, TerminalKind::Xi2 { .. }) {
            b.push(
                "H1.left_continuity",
                true,
                0.0,
                "P(tau = T) = 0 for exit times of a nondegenerate diffusion",
            );
        }
    }

    // grid
    b.push("grid.nodes", grid.is_valid(), grid.steps() as f64, "strictly increasing, t_N = T");

    let passed = b.0.iter().all(|c| c.passed);
    ValidationReport { checks: b.0, passed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terminal::Payoff;

    fn bm_setup() -> (ForwardModel, DriverDescriptor, TerminalDescriptor, TimeGrid) {
        (
            ForwardModel::brownian(vec![0.0], 0.0, 1.0),
            DriverDescriptor::power(2.0, 3.0),
            TerminalDescriptor::bounded(Payoff::Constant { value: 1.0 }, vec![1.0]),
            TimeGrid::uniform(1.0, 10).unwrap(),
        )
    }

    #[test]
    fn constant_coefficients_pass() {
        let (m, d, t, g) = bm_setup();
        let r = validate_model(&m, &d, &t, &g);
        assert!(r.passed, "{:?}", r.failures().collect::<Vec<_>>());
        assert!(r.checks.iter().all(|c| c.witness.is_finite()));
    }

    #[test]
    fn q_equal_one_fails_c1() {
        let (m, mut d, t, g) = bm_setup();
        d.q = 1.0;
        let r = validate_model(&m, &d, &t, &g);
        assert!(!r.passed);
        assert!(!r.check("C1.q_gt_1").unwrap().passed);
    }

    #[test]
    fn degenerate_diffusion_fails() {
        let (mut m, d, t, g) = bm_setup();
        m.diffusion_const = vec![0.0];
        let r = validate_model(&m, &d, &t, &g);
        let c = r.check("model.ellipticity").unwrap();
        assert!(!c.passed);
        assert_eq!(c.witness, 0.0);
    }

    #[test]
    fn deterministic() {
        let (m, d, t, g) = bm_setup();
        assert_eq!(validate_model(&m, &d, &t, &g), validate_model(&m, &d, &t, &g));
    }

    #[test]
    fn gbm_noted_as_locally_holder() {
        let (_, d, t, g) = bm_setup();
        let m = ForwardModel::geometric(vec![1.0], 0.05, 0.2);
        let r = validate_model(&m, &d, &t, &g);
        assert!(r.passed);
        assert!(r.check("model.holder").unwrap().note.contains("locally"));
    }

    #[test]
    fn mismatched_p_fails() {
        let (m, mut d, t, g) = bm_setup();
        d.p = 3.0;
        assert!(!validate_model(&m, &d, &t, &g).passed);
    }
}

//! Constructions around the singular terminal values: a priori bound,
//! upper-bound processes, pasting and continuity diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backward::{solve_problem, BackwardSolution, Generator, LadderResult, Problem, Stopping};
use crate::driver::{y_infinity_unchecked, DriverDescriptor};
use crate::error::{Error, Result};
use crate::paths::{fmt, PathBundle};
use crate::regression::RegressionSpec;
use crate::stats::{combined, ls_slope, MeanEstimate};

/// Smallest event population a continuity profile accepts.
pub const MIN_EVENT_PATHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriBoundParams {
    pub ell: f64,
    pub ell_prime: f64,
    #[serde(default = "unit")]
    pub k_const: f64,
}

fn unit() -> f64 {
    1.0
}

impl AprioriBoundParams {
    pub fn new(ell: f64, ell_prime: f64) -> Self {
        Self {
            ell,
            ell_prime,
            k_const: 1.0,
        }
    }

    /// `p - (ell - ell')/(ell ell')`
    pub fn p_hat(&self, p: f64) -> f64 {
        p - (self.ell - self.ell_prime) / (self.ell * self.ell_prime)
    }

    pub fn validate(&self, p: f64) -> Result<()> {
        if !(self.ell_prime > 1.0 && self.ell_prime <= self.ell) {
            return Err(Error::InvalidParameter(format!(
                "need 1 < ell' <= ell, got ell' = {}, ell = {}",
                self.ell_prime, self.ell
            )));
        }
        if !(self.p_hat(p) > 0.0) {
            return Err(Error::InvalidParameter(format!("p_hat = {} is not positive", self.p_hat(p))));
        }
        if !(self.k_const > 0.0) {
            return Err(Error::InvalidParameter("K must be positive".into()));
        }
        Ok(())
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// `K e^{chi^+ (T-t)} (T-t)^{-p_hat} ( int_t^T (((p-1) eta_s)^(p-1) + (T-s)^p (f0_s)^+)^ell ds )^(1/ell)`.
///
/// Exact on pieces where `f0 = 0`; composite Gauss-Legendre elsewhere.
pub fn apriori_bound(driver: &DriverDescriptor, params: &AprioriBoundParams, t: f64, horizon: f64) -> Result<f64> {
    if t >= horizon {
        return Err(Error::NonPositiveHorizon(horizon - t));
    }
    let p = driver.p;
    params.validate(p)?;
    let ell = params.ell;
    let mut breaks: Vec<f64> = vec![t, horizon];
    for pc in [&driver.eta, &driver.f0] {
        breaks.extend(pc.breaks.iter().copied().filter(|&b| b > t && b < horizon));
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let rule = gauss_legendre(16);
    let mut integral = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let eta = driver.eta.value(mid);
        let f0 = driver.f0.value(mid).max(0.0);
        let base = ((p - 1.0) * eta).powf(p - 1.0);
        if f0 == 0.0 {
            integral += (b - a) * base.powf(ell);
            continue;
        }
        let parts = 64;
        let h = (b - a) / parts as f64;
        for j in 0..parts {
            let (lo, hi) = (a + j as f64 * h, a + (j + 1) as f64 * h);
            for &(x, wt) in &rule {
                let s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x;
                integral += 0.5 * (hi - lo) * wt * (base + (horizon - s).powf(p) * f0).powf(ell);
            }
        }
    }
    let growth = if driver.chi > 0.0 {
        (driver.chi * (horizon - t)).exp()
    } else {
        1.0
    };
    Ok(params.k_const * growth * (horizon - t).powf(-params.p_hat(p)) * integral.powf(1.0 / ell))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub ell: f64,
    pub q: f64,
    pub p: f64,
    pub density_bound: f64,
    pub kappa_min: f64,
    pub argmin_rho: f64,
    pub argmin_ell_prime: f64,
    pub attainable: bool,
    pub ell_gt_2: bool,
    /// `2 - 2/(ell-2)`
    pub threshold_weak: f64,
    /// `2 + 2/(ell-2)`
    pub threshold_strong: f64,
    pub q_above_weak: bool,
    pub q_above_strong: bool,
    pub passed: bool,
    pub reason: String,
}

/// `kappa = p_hat rho ell / (ell - rho)`.
pub fn kappa(p: f64, ell: f64, rho: f64, ell_prime: f64) -> f64 {
    let p_hat = p - (ell - ell_prime) / (ell * ell_prime);
    p_hat * rho * ell / (ell - rho)
}

pub const KAPPA_GRID: usize = 400;

/// Searches `rho in (1, ell)`, `ell' in (1, ell]` for `kappa < 1`.
pub fn integrability_check_xi1(driver: &DriverDescriptor, ell: f64, density_bound: f64) -> IntegrabilityReport {
    let q = driver.q;
    let p = driver.p;
    let ell_gt_2 = ell > 2.0;
    let (threshold_weak, threshold_strong) = if ell > 2.0 {
        (2.0 - 2.0 / (ell - 2.0), 2.0 + 2.0 / (ell - 2.0))
    } else {
        (f64::NAN, f64::NAN)
    };
    let mut best = (f64::INFINITY, f64::NAN, f64::NAN);
    if ell > 1.0 {
        for i in 1..=KAPPA_GRID {
            let rho = 1.0 + (ell - 1.0) * i as f64 / (KAPPA_GRID + 1) as f64;
            for j in 1..=KAPPA_GRID {
                let lp = 1.0 + (ell - 1.0) * j as f64 / KAPPA_GRID as f64;
                let p_hat = p - (ell - lp) / (ell * lp);
                if p_hat <= 0.0 {
                    continue;
                }
                let k = kappa(p, ell, rho, lp);
                if k < best.0 {
                    best = (k, rho, lp);
                }
            }
        }
    }
    let attainable = best.0 < 1.0;
    let density_ok = density_bound.is_finite() && density_bound >= 0.0;
    let (passed, reason) = if !ell_gt_2 {
        (false, "ell > 2 required".to_string())
    } else if !density_ok {
        (false, format!("exit-time density bound near T is not finite: {density_bound}"))
    } else if !attainable {
        (false, format!("kappa >= 1 on the whole grid (min {:.4})", best.0))
    } else {
        (true, format!("kappa = {:.4} < 1", best.0))
    };
    IntegrabilityReport {
        ell,
        q,
        p,
        density_bound,
        kappa_min: best.0,
        argmin_rho: best.1,
        argmin_ell_prime: best.2,
        attainable,
        ell_gt_2,
        threshold_weak,
        threshold_strong,
        q_above_weak: ell_gt_2 && q > threshold_weak,
        q_above_strong: ell_gt_2 && q > threshold_strong,
        passed,
        reason,
    }
}

fn require_zero_f0_no_controls(driver: &DriverDescriptor) -> Result<()> {
    if driver.f0.check().is_err() || driver.f0.as_constant() != Some(0.0) {
        return Err(Error::InvalidParameter("construction needs f0 = 0".into()));
    }
    if driver.z_dependent || driver.jump_dependent {
        return Err(Error::InvalidParameter("construction needs a generator free of z and psi".into()));
    }
    if driver.eta.as_constant() != Some(1.0) || !driver.superlinear {
        return Err(Error::NotPurePower("Y^inf is available in closed form for eta = 1 only".into()));
    }
    Ok(())
}

/// `Y^inf_tau 1{tau < T}` per path, and the first node with `tau <= t_i`.
fn stopped_terminal(paths: &PathBundle, q: f64) -> Result<(Vec<usize>, Vec<f64>)> {
    let times = paths.exit_times().ok_or(Error::ExitTimesMissing)?;
    let horizon = paths.grid().horizon();
    let first: Vec<usize> = (0..paths.n_paths())
        .map(|p| paths.first_exit_node(p).expect("exit data present"))
        .collect();
    let values = times
        .iter()
        .map(|&tau| if tau < horizon { y_infinity_unchecked(q, horizon - tau) } else { 0.0 })
        .collect();
    Ok((first, values))
}

/// `Y^{inf,u}_t = E[e^{chi(tau - t)} Y^inf_tau 1{tau < T} | F_t]` before exit, frozen at
/// `Y^inf_tau` afterwards.
pub fn upper_bound_process_xi1(
    paths: &PathBundle,
    driver: &DriverDescriptor,
    reg: &RegressionSpec,
    integrability: &IntegrabilityReport,
) -> Result<BackwardSolution> {
    require_zero_f0_no_controls(driver)?;
    if !integrability.passed {
        return Err(Error::Integrability(integrability.reason.clone()));
    }
    let (first_node, exit_value) = stopped_terminal(paths, driver.q)?;
    let frozen = exit_value.clone();
    let end = paths.grid().steps();
    let problem = Problem {
        end_node: end,
        terminal: vec![0.0; paths.n_paths()],
        stopping: Some(Stopping {
            first_node,
            exit_value,
            after: Box::new(move |_, p| frozen[p]),
        }),
        generator: Generator::Linear,
        clamp: true,
        label: f64::INFINITY,
    };
    solve_problem(paths, driver, reg, &problem)
}

/// `Y^(1)`: the BSDE with the full generator stopped at `tau ^ T` with terminal
/// `1{tau < T} Y^inf_tau`, continued by `Y^inf` after `tau`.
pub fn pasted_solution_xi1(paths: &PathBundle, driver: &DriverDescriptor, reg: &RegressionSpec) -> Result<BackwardSolution> {
    driver.require_pure_power()?;
    let (first_node, exit_value) = stopped_terminal(paths, driver.q)?;
    let q = driver.q;
    let grid = paths.grid().clone();
    let horizon = grid.horizon();
    let problem = Problem {
        end_node: grid.steps(),
        terminal: vec![0.0; paths.n_paths()],
        stopping: Some(Stopping {
            first_node,
            exit_value,
            after: Box::new(move |node, _| {
                let s = horizon - grid.time(node);
                if s > 0.0 {
                    y_infinity_unchecked(q, s)
                } else {
                    f64::INFINITY
                }
            }),
        }),
        generator: Generator::Truncated(f64::INFINITY),
        clamp: true,
        label: 1.0,
    };
    solve_problem(paths, driver, reg, &problem)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichNode {
    pub node: usize,
    pub t: f64,
    pub n_paths: usize,
    pub mean_lower: f64,
    pub mean_upper: f64,
    /// `mean_upper + 2 se - mean_lower`; negative is a violation.
    pub margin: f64,
    /// Paths whose own value exceeds the upper value (informational).
    pub pathwise_excess: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichLevel {
    pub k: f64,
    pub violations: usize,
    pub worst_margin: f64,
    pub worst_node: usize,
    pub nodes: Vec<SandwichNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub levels: Vec<SandwichLevel>,
    pub passed: bool,
}

fn sandwich_level(
    lower: &BackwardSolution,
    upper: &BackwardSolution,
    nodes: impl Iterator<Item = usize>,
    times: &[f64],
    population: impl Fn(usize, usize) -> bool,
    n_paths: usize,
) -> SandwichLevel {
    let mut out = SandwichLevel {
        k: lower.k,
        violations: 0,
        worst_margin: f64::INFINITY,
        worst_node: 0,
        nodes: Vec::new(),
    };
    for node in nodes {
        let rows: Vec<usize> = (0..n_paths).filter(|&p| population(node, p)).collect();
        if rows.is_empty() {
            continue;
        }
        let (yl, yu) = (lower.y(node), upper.y(node));
        let member = |p: usize| population(node, p);
        let lo = lower.node_estimate(node, member);
        let up = upper.node_estimate(node, member);
        let margin = up.mean + 2.0 * combined(lo.stderr, up.stderr) - lo.mean;
        let negative = rows.iter().filter(|&&p| yl[p] < 0.0).count();
        if margin < 0.0 || negative > 0 {
            out.violations += 1;
        }
        if margin < out.worst_margin {
            out.worst_margin = margin;
            out.worst_node = node;
        }
        out.nodes.push(SandwichNode {
            node,
            t: times[node],
            n_paths: rows.len(),
            mean_lower: lo.mean,
            mean_upper: up.mean,
            margin,
            pathwise_excess: rows.iter().filter(|&&p| yl[p] > yu[p]).count(),
            negative,
        });
    }
    out
}

/// `0 <= Y^(k) <= Y^{inf,u} + 2 se` on the population not yet exited, node by node.
pub fn sandwich_xi1<'a>(
    paths: &PathBundle,
    solutions: impl IntoIterator<Item = &'a BackwardSolution>,
    upper: &BackwardSolution,
) -> Result<SandwichReport> {
    if !paths.has_exit_times() {
        return Err(Error::ExitTimesMissing);
    }
    let times = paths.grid().nodes();
    let levels: Vec<SandwichLevel> = solutions
        .into_iter()
        .map(|sol| {
            let last = sol.end_node().min(upper.end_node());
            sandwich_level(
                sol,
                upper,
                0..=last,
                times,
                |node, p| !paths.exit_flag(node, p).unwrap_or(false),
                paths.n_paths(),
            )
        })
        .collect();
    let passed = levels.iter().all(|l| l.violations == 0);
    Ok(SandwichReport { levels, passed })
}

/// Events on which continuity profiles are taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    /// `{tau > T}`
    Survival,
    /// `{tau <= T}`
    Exit,
    /// `{tau <= t}`
    ExitBy { t: f64 },
}

impl Event {
    pub fn name(&self) -> String {
        match self {
            Event::Survival => "tau>T".into(),
            Event::Exit => "tau<=T".into(),
            Event::ExitBy { t } => format!("tau<={t}"),
        }
    }

    pub fn contains(&self, tau: f64) -> bool {
        match *self {
            Event::Survival => !tau.is_finite(),
            Event::Exit => tau.is_finite(),
            Event::ExitBy { t } => tau <= t,
        }
    }
}

/// `delta_j = 0.2 * 2^-j`, `j = 0..=6`.
pub fn default_deltas() -> Vec<f64> {
    (0..=6).map(|j| 0.2 * 0.5f64.powi(j)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub delta: f64,
    pub node: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityProfile {
    pub event: Event,
    pub k_level: f64,
    pub n_event_paths: usize,
    pub points: Vec<ProfilePoint>,
    /// Least-squares slope of the mean against delta.
    pub trend: f64,
}

impl ContinuityProfile {
    /// Means nonincreasing as delta shrinks, up to `tol` combined standard errors.
    pub fn decreasing_within(&self, tol: f64) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].mean <= w[0].mean + tol * combined(w[0].stderr, w[1].stderr))
    }

    /// Means nondecreasing as delta shrinks, up to `tol` combined standard errors.
    pub fn increasing_within(&self, tol: f64) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].mean >= w[0].mean - tol * combined(w[0].stderr, w[1].stderr))
    }

    pub fn last(&self) -> &ProfilePoint {
        self.points.last().expect("nonempty profile")
    }

    /// `event,delta,mean_Y,stderr,n_event_paths,k_level`
    pub fn write_csv<W: Write>(&self, out: W, with_header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .has_headers(false)
            .from_writer(out);
        if with_header {
            w.write_record(["event", "delta", "mean_Y", "stderr", "n_event_paths", "k_level"])?;
        }
        for pt in &self.points {
            w.write_record([
                self.event.name(),
                fmt(pt.delta),
                fmt(pt.mean),
                fmt(pt.stderr),
                self.n_event_paths.to_string(),
                fmt(self.k_level),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Conditional means of `solution` at the nodes nearest `T - delta` over `event`.
pub fn continuity_profile(
    paths: &PathBundle,
    solution: &BackwardSolution,
    event: Event,
    deltas: &[f64],
) -> Result<ContinuityProfile> {
    let times = paths.exit_times().ok_or(Error::ExitTimesMissing)?;
    if deltas.windows(2).any(|w| w[1] >= w[0]) || deltas.iter().any(|&d| d <= 0.0) {
        return Err(Error::InvalidParameter("delta grid must be positive and strictly decreasing".into()));
    }
    let members: Vec<usize> = (0..paths.n_paths()).filter(|&p| event.contains(times[p])).collect();
    if members.len() < MIN_EVENT_PATHS {
        return Err(Error::InsufficientEvent {
            event: event.name(),
            count: members.len(),
            required: MIN_EVENT_PATHS,
        });
    }
    let grid = paths.grid();
    let points: Vec<ProfilePoint> = deltas
        .iter()
        .map(|&delta| {
            let node = grid.nearest_node(grid.horizon() - delta).min(solution.end_node());
            let y = solution.y(node);
            let est = MeanEstimate::from_iter(members.iter().map(|&p| y[p]));
            ProfilePoint {
                delta,
                node,
                mean: est.mean,
                stderr: est.stderr,
            }
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.delta).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
    Ok(ContinuityProfile {
        event,
        k_level: solution.k,
        n_event_paths: members.len(),
        trend: if points.len() > 1 { ls_slope(&xs, &ys) } else { f64::NAN },
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Xi2Upper {
    pub t_n: f64,
    pub node: usize,
    pub y0: f64,
    pub y0_stderr: f64,
    /// Mean of the upper process at `t_n` on `{tau <= t_n}`.
    pub exited_mean_at_t_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Xi2Report {
    pub uppers: Vec<Xi2Upper>,
    /// Per pair `(n, n+1)`, count of shared nodes where `Y^{u,n+1}` exceeds `Y^{u,n}` by more than 2 se.
    pub monotonicity_violations: Vec<usize>,
    pub sandwich: Vec<SandwichReport>,
    pub decreasing: bool,
    pub dominates: bool,
    pub passed: bool,
}

/// Upper processes `Y^{inf,u,n}` on `[0, t_n]` with terminal `1{tau > t_n} Y^inf(T - t_n)`.
pub fn xi2_upper_processes(
    paths: &PathBundle,
    driver: &DriverDescriptor,
    t_n: &[f64],
    reg: &RegressionSpec,
) -> Result<Vec<BackwardSolution>> {
    require_zero_f0_no_controls(driver)?;
    driver.require_pure_power()?;
    let times = paths.exit_times().ok_or(Error::ExitTimesMissing)?;
    let grid = paths.grid();
    let horizon = grid.horizon();
    if t_n.windows(2).any(|w| w[1] <= w[0]) || t_n.iter().any(|&t| !(t > 0.0 && t < horizon)) {
        return Err(Error::InvalidParameter("t_n must increase strictly inside (0, T)".into()));
    }
    t_n.iter()
        .map(|&t| {
            let node = grid.nearest_node(t).clamp(1, grid.steps() - 1);
            let tn = grid.time(node);
            let cap = y_infinity_unchecked(driver.q, horizon - tn);
            let terminal = times.iter().map(|&tau| if tau > tn { cap } else { 0.0 }).collect();
            let problem = Problem {
                end_node: node,
                terminal,
                stopping: None,
                generator: Generator::Truncated(f64::INFINITY),
                clamp: true,
                label: tn,
            };
            solve_problem(paths, driver, reg, &problem)
        })
        .collect()
}

/// Sandwich `0 <= Y^(k) <= Y^{inf,u,n}` and monotonicity in `n` for the `xi_2` construction.
pub fn xi2_sandwich(
    paths: &PathBundle,
    driver: &DriverDescriptor,
    ladder: &LadderResult,
    t_n: &[f64],
    reg: &RegressionSpec,
) -> Result<(Xi2Report, Vec<BackwardSolution>)> {
    let uppers = xi2_upper_processes(paths, driver, t_n, reg)?;
    let n = paths.n_paths();
    let times = paths.grid().nodes();
    let exit_times = paths.exit_times().ok_or(Error::ExitTimesMissing)?;

    let mut monotonicity_violations = Vec::new();
    for w in uppers.windows(2) {
        let shared = w[0].end_node().min(w[1].end_node());
        let count = (0..=shared)
            .filter(|&node| {
                let a = w[0].node_estimate(node, |_| true);
                let b = w[1].node_estimate(node, |_| true);
                b.mean > a.mean + 2.0 * combined(a.stderr, b.stderr)
            })
            .count();
        monotonicity_violations.push(count);
    }
    let sandwich: Vec<SandwichReport> = uppers
        .iter()
        .map(|upper| {
            let mut levels = Vec::new();
            for sol in ladder.successful() {
                for event in [false, true] {
                    levels.push(sandwich_level(
                        sol,
                        upper,
                        0..=upper.end_node(),
                        times,
                        |node, p| paths.exit_flag(node, p).unwrap_or(false) == event,
                        n,
                    ));
                }
            }
            let passed = levels.iter().all(|l| l.violations == 0);
            SandwichReport { levels, passed }
        })
        .collect();
    let summary = uppers
        .iter()
        .map(|u| {
            let node = u.end_node();
            let tn = times[node];
            let exited = u.node_mean(node, |p| exit_times[p] <= tn);
            Xi2Upper {
                t_n: tn,
                node,
                y0: u.y0(),
                y0_stderr: u.y0_stderr(),
                exited_mean_at_t_n: if exited.count > 0 { exited.mean } else { 0.0 },
            }
        })
        .collect();
    let decreasing = monotonicity_violations.iter().all(|&c| c == 0);
    let dominates = sandwich.iter().all(|s| s.passed);
    Ok((
        Xi2Report {
            uppers: summary,
            monotonicity_violations,
            sandwich,
            decreasing,
            dominates,
            passed: decreasing && dominates,
        },
        uppers,
    ))
}

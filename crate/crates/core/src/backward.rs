//! Backward implicit scheme for truncated BSDEs.

use std::io::Write;

use rayon::prelude::*;

use crate::driver::DriverDescriptor;
use crate::error::{Error, Result};
use crate::paths::{fmt, PathBundle, CHUNK};
use crate::regression::{boundary_cells, regress_cells, NodeFit, RegressionSpec, CONDITION_WARNING};
use crate::stats::MeanEstimate;
use crate::terminal::{TerminalDescriptor, TerminalKind};

pub const MAX_IMPLICIT_ITERATIONS: usize = 100;

/// Generator used in the implicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    /// `f^k = [f - f0] + min(f0, k)`; `k = inf` is the full driver.
    Truncated(f64),
    /// `chi * y` only.
    Linear,
}

/// Paths stopped before the end node: from `first_node[p]` on they carry
/// `after(node, p)`, and the step into `first_node[p]` regresses `exit_value[p]`.
pub(crate) struct Stopping<'a> {
    pub first_node: Vec<usize>,
    pub exit_value: Vec<f64>,
    pub after: Box<dyn Fn(usize, usize) -> f64 + Sync + 'a>,
}

pub(crate) struct Problem<'a> {
    pub end_node: usize,
    pub terminal: Vec<f64>,
    pub stopping: Option<Stopping<'a>>,
    pub generator: Generator,
    pub clamp: bool,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Per node, largest regression condition number (0 when nothing was fitted).
    pub condition: Vec<f64>,
    /// Per node, largest number of implicit-step iterations.
    pub iterations: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BackwardSolution {
    /// Truncation level (or the label of the construction).
    pub k: f64,
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub dim: usize,
    y: Vec<f64>,
    z: Option<Vec<f64>>,
    jump_integral: Option<Vec<f64>>,
    pub fits: Vec<NodeFit>,
    pub diagnostics: Diagnostics,
    /// Realized pathwise values, node-major like `y`.
    realized: Vec<f32>,
    y0_stderr: f64,
}

impl BackwardSolution {
    /// Index of the last node (the terminal node of this solution).
    pub fn end_node(&self) -> usize {
        self.times.len() - 1
    }

    pub fn y(&self, node: usize) -> &[f64] {
        &self.y[node * self.n_paths..(node + 1) * self.n_paths]
    }

    /// `Z` at node `i` for all paths, `dim` values per path. Absent at the end node.
    pub fn z(&self, node: usize) -> Option<&[f64]> {
        let w = self.n_paths * self.dim;
        self.z.as_ref().map(|z| &z[node * w..(node + 1) * w])
    }

    pub fn jump_integral(&self, node: usize) -> Option<&[f64]> {
        self.jump_integral
            .as_ref()
            .map(|v| &v[node * self.n_paths..(node + 1) * self.n_paths])
    }

    /// Population mean of `Y_0`; every path shares the start point so this is the estimate.
    pub fn y0(&self) -> f64 {
        MeanEstimate::from_iter(self.y(0).iter().copied()).mean
    }

    /// Standard error of `Y_0` from the realized pathwise values
    /// `Y_{i+1} + (Y_i - E_i[Y_{i+1}])` propagated back to node 0.
    pub fn y0_stderr(&self) -> f64 {
        self.y0_stderr
    }

    /// Copy with every `Y` value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v *= factor);
        out.realized.iter_mut().for_each(|v| *v *= factor as f32);
        out
    }

    /// Mean of `Y` at `node` over the paths selected by `mask`.
    pub fn node_mean(&self, node: usize, mask: impl Fn(usize) -> bool) -> MeanEstimate {
        MeanEstimate::from_iter(self.y(node).iter().enumerate().filter(|(p, _)| mask(*p)).map(|(_, &v)| v))
    }

    /// [`Self::node_mean`] with the standard error taken from the realized
    /// pathwise values when that is larger. Only meaningful for masks known at `node`.
    pub fn node_estimate(&self, node: usize, mask: impl Fn(usize) -> bool) -> MeanEstimate {
        let fitted = self.node_mean(node, &mask);
        let r = &self.realized[node * self.n_paths..(node + 1) * self.n_paths];
        let realized = MeanEstimate::from_iter((0..self.n_paths).filter(|&p| mask(p)).map(|p| r[p] as f64));
        MeanEstimate {
            stderr: fitted.stderr.max(realized.stderr),
            ..fitted
        }
    }

    /// Summary CSV: `node_index,t,k,mean_Y,sd_Y,mean_Y_on_exit_event,mean_Y_on_survival_event,max_Y,regression_condition_number`.
    pub fn write_summary_csv<W: Write>(&self, paths: &PathBundle, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "node_index",
            "t",
            "k",
            "mean_Y",
            "sd_Y",
            "mean_Y_on_exit_event",
            "mean_Y_on_survival_event",
            "max_Y",
            "regression_condition_number",
        ])?;
        for node in 0..=self.end_node() {
            let all = self.node_mean(node, |_| true);
            let (exit, surv) = match paths.exit_flags(node) {
                Some(flags) => (
                    self.node_mean(node, |p| flags[p]).mean,
                    self.node_mean(node, |p| !flags[p]).mean,
                ),
                None => (f64::NAN, all.mean),
            };
            let max = self.y(node).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            w.write_record([
                node.to_string(),
                fmt(self.times[node]),
                fmt(self.k),
                fmt(all.mean),
                fmt(all.sd),
                fmt(exit),
                fmt(surv),
                fmt(max),
                fmt(self.diagnostics.condition.get(node).copied().unwrap_or(0.0)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `xi ^ k` per path.
pub fn truncated_terminal(paths: &PathBundle, terminal: &TerminalDescriptor, k: f64) -> Result<Vec<f64>> {
    let n = paths.n_paths();
    let last = paths.grid().steps();
    match &terminal.kind {
        TerminalKind::Bounded { payoff } => Ok((0..n).map(|p| payoff.eval(paths.state(last, p)).min(k)).collect()),
        TerminalKind::Xi1 { .. } => {
            let times = paths.exit_times().ok_or(Error::ExitTimesMissing)?;
            Ok(times.iter().map(|t| if t.is_finite() { k } else { 0.0 }).collect())
        }
        TerminalKind::Xi2 { .. } => {
            let times = paths.exit_times().ok_or(Error::ExitTimesMissing)?;
            Ok(times.iter().map(|t| if t.is_finite() { 0.0 } else { k }).collect())
        }
    }
}

/// Root of `y - dt * F(y) = c` for `F(y) = chi*y - s*y|y|^(q-1)/eta + r0`.
///
/// The map is strictly increasing when `1 - dt*chi > 0`, so the root is unique
/// and lies between 0 and `(c + dt*r0)/(1 - dt*chi)`. Newton from that end,
/// falling back to bisection whenever a step leaves the bracket.
fn implicit_root(c: f64, dt: f64, chi: f64, power: Option<(f64, f64)>, r0: f64) -> Result<(f64, usize)> {
    let a = 1.0 - dt * chi;
    let rhs = c + dt * r0;
    let Some((q, eta)) = power else {
        return Ok((rhs / a, 0));
    };
    let g = |y: f64| a * y + dt * y * y.abs().powf(q - 1.0) / eta - rhs;
    let dg = |y: f64| a + dt * q * y.abs().powf(q - 1.0) / eta;
    let end = rhs / a;
    let (mut lo, mut hi) = if end >= 0.0 { (0.0, end) } else { (end, 0.0) };
    let mut y = end;
    for it in 1..=MAX_IMPLICIT_ITERATIONS {
        let gy = g(y);
        if gy == 0.0 {
            return Ok((y, it));
        }
        if gy > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let mut next = y - gy / dg(y);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 4.0 * f64::EPSILON * y.abs().max(f64::MIN_POSITIVE) || hi - lo <= 4.0 * f64::EPSILON * hi.abs() {
            return Ok((next, it));
        }
        y = next;
    }
    Err(Error::Convergence {
        node: 0,
        path: 0,
        iterations: MAX_IMPLICIT_ITERATIONS,
    })
}

pub(crate) fn solve_problem(
    paths: &PathBundle,
    driver: &DriverDescriptor,
    reg: &RegressionSpec,
    problem: &Problem,
) -> Result<BackwardSolution> {
    let grid = paths.grid();
    let n = paths.n_paths();
    let d = paths.dim();
    let end = problem.end_node;
    if end == 0 || end > grid.steps() {
        return Err(Error::InvalidParameter(format!("end node {end} outside 1..={}", grid.steps())));
    }
    if problem.terminal.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: problem.terminal.len(),
        });
    }
    let max_dt = (0..end).map(|i| grid.step(i)).fold(0.0, f64::max);
    if driver.chi * max_dt >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "implicit step needs chi * dt < 1, got {}",
            driver.chi * max_dt
        )));
    }

    let with_z = paths.has_increments();
    let lambda = paths.jump_intensity();
    let with_jumps = lambda > 0.0;
    let stop = problem.stopping.as_ref();
    let stopped_at = |node: usize, p: usize| stop.is_some_and(|s| s.first_node[p] <= node);

    let mut y = vec![0.0; (end + 1) * n];
    let mut z = with_z.then(|| vec![0.0; (end + 1) * n * d]);
    let mut jump = with_jumps.then(|| vec![0.0; (end + 1) * n]);
    let mut fits = vec![NodeFit::default(); end + 1];
    let mut diag = Diagnostics {
        condition: vec![0.0; end + 1],
        iterations: vec![0; end + 1],
        warnings: Vec::new(),
    };

    for p in 0..n {
        y[end * n + p] = if stopped_at(end, p) {
            (stop.unwrap().after)(end, p)
        } else {
            problem.terminal[p]
        };
    }

    let (power, truncation) = match problem.generator {
        Generator::Truncated(k) => (driver.superlinear, k),
        Generator::Linear => (false, f64::INFINITY),
    };
    let linear_only = matches!(problem.generator, Generator::Linear);
    // realized values along each path: the regression smoothing removed, same mean
    let mut pathwise: Vec<f64> = y[end * n..].to_vec();
    let mut realized = vec![0f32; (end + 1) * n];
    for p in 0..n {
        realized[end * n + p] = pathwise[p] as f32;
    }

    for i in (0..end).rev() {
        let t = grid.time(i);
        let dt = grid.step(i);
        let (head, tail) = y.split_at_mut((i + 1) * n);
        let next = &tail[..n];
        let current = &mut head[i * n..];

        let target: Vec<f64> = (0..n)
            .map(|p| match stop {
                Some(s) if s.first_node[p] == i + 1 => s.exit_value[p],
                _ => next[p],
            })
            .collect();
        let active: Vec<bool> = (0..n).map(|p| !stopped_at(i, p)).collect();

        let mut columns: Vec<Vec<f64>> = vec![target.clone()];
        if let Some(inc) = paths.step_increments(i).filter(|_| with_z) {
            for c in 0..d {
                columns.push((0..n).map(|p| target[p] * inc[p * d + c] / dt).collect());
            }
        }
        if with_jumps {
            let w = paths.jump_weight();
            columns.push(
                (0..n)
                    .map(|p| target[p] * (paths.jump_count(p, i) as f64 - lambda * dt) * w / dt)
                    .collect(),
            );
        }
        let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
        let flags = paths.exit_flags(i);
        let any_active = active.iter().any(|&a| a);
        let fitted = if any_active {
            let cells = boundary_cells(paths, i, Some(&active), reg);
            let (fitted, fit) = regress_cells(
                paths.node_states(i),
                d,
                flags.as_deref(),
                Some(&active),
                cells.as_deref(),
                &refs,
                reg,
            )?;
            diag.condition[i] = fit.condition();
            if fit.condition() > CONDITION_WARNING {
                diag.warnings.push(format!(
                    "node {i}: regression condition number {:.3e} above {CONDITION_WARNING:e}",
                    fit.condition()
                ));
            }
            fits[i] = fit;
            fitted
        } else {
            vec![vec![0.0; n]; refs.len()]
        };
        let cond_mean = &fitted[0];
        if let Some(zs) = z.as_mut() {
            for p in 0..n {
                for c in 0..d {
                    zs[(i * n + p) * d + c] = fitted[1 + c][p];
                }
            }
        }
        if let Some(js) = jump.as_mut() {
            let col = fitted.len() - 1;
            js[i * n..(i + 1) * n].copy_from_slice(&fitted[col]);
        }

        let eta = driver.eta.value(t);
        let f0k = if linear_only { 0.0 } else { driver.f0.value(t).min(truncation) };
        let z_node = z.as_ref().map(|zs| &zs[i * n * d..(i + 1) * n * d]);
        let j_node = jump.as_ref().map(|js| &js[i * n..(i + 1) * n]);
        let results: Vec<Result<(f64, usize)>> = (0..n)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|p| {
                if !active[p] {
                    return Ok(((stop.unwrap().after)(i, p), 0));
                }
                let zp: &[f64] = z_node.map_or(&[], |zs| &zs[p * d..(p + 1) * d]);
                let ip = j_node.map_or(0.0, |js| js[p]);
                let r0 = if linear_only { 0.0 } else { f0k + driver.at_zero(t, zp, ip) - driver.f0.value(t) };
                let pw = power.then_some((driver.q, eta));
                let (root, iters) = implicit_root(cond_mean[p], dt, driver.chi, pw, r0).map_err(|_| Error::Convergence {
                    node: i,
                    path: p,
                    iterations: MAX_IMPLICIT_ITERATIONS,
                })?;
                let slope = 1.0 - dt * if power { driver.dy(t, root) } else { driver.chi };
                if !(slope > 0.0) {
                    return Err(Error::Instability { value: slope, time: t });
                }
                let root = if problem.clamp { root.max(0.0) } else { root };
                Ok((root, iters))
            })
            .collect();
        for (p, r) in results.into_iter().enumerate() {
            let (v, it) = r?;
            current[p] = v;
            diag.iterations[i] = diag.iterations[i].max(it);
            if active[p] {
                let realized = match stop {
                    Some(s) if s.first_node[p] == i + 1 => s.exit_value[p],
                    _ => pathwise[p],
                };
                pathwise[p] = realized + v - cond_mean[p];
            }
        }
        for p in 0..n {
            realized[i * n + p] = if active[p] { pathwise[p] } else { current[p] } as f32;
        }
    }
    let y0_stderr = MeanEstimate::from_iter(pathwise.iter().copied()).stderr;

    Ok(BackwardSolution {
        k: problem.label,
        times: grid.nodes()[..=end].to_vec(),
        n_paths: n,
        dim: d,
        y,
        z,
        jump_integral: jump,
        fits,
        diagnostics: diag,
        realized,
        y0_stderr,
    })
}

/// Solves the BSDE with generator `f^k` and terminal `xi ^ k` on the whole grid.
pub fn solve_truncated(
    paths: &PathBundle,
    driver: &DriverDescriptor,
    terminal: &TerminalDescriptor,
    k: f64,
    reg: &RegressionSpec,
) -> Result<BackwardSolution> {
    if !(k > 0.0) {
        return Err(Error::InvalidParameter(format!("truncation level must be positive, got {k}")));
    }
    terminal.check_dims(paths.dim())?;
    let values = truncated_terminal(paths, terminal, k)?;
    let problem = Problem {
        end_node: paths.grid().steps(),
        terminal: values,
        stopping: None,
        generator: Generator::Truncated(k),
        clamp: terminal.is_nonnegative(),
        label: k,
    };
    solve_problem(paths, driver, reg, &problem)
}

#[derive(Debug)]
pub struct LadderResult {
    pub levels: Vec<f64>,
    pub solutions: Vec<Result<BackwardSolution>>,
    /// For consecutive successful levels `(k_a, k_b)`, per-node mean of `Y^(k_b) - Y^(k_a)`.
    pub increments: Vec<(f64, f64, Vec<f64>)>,
    pub extrapolation: Extrapolation,
}

impl LadderResult {
    pub fn successful(&self) -> impl Iterator<Item = &BackwardSolution> {
        self.solutions.iter().filter_map(|s| s.as_ref().ok())
    }

    pub fn largest(&self) -> Option<&BackwardSolution> {
        self.successful().last()
    }
}

/// Heuristic limit of `Y_0^(k)` as `k -> inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrapolation {
    pub value: f64,
    /// Fitted decay exponent of the gap `Y^min - Y^(k) ~ C k^(-beta)`; NaN when not fitted.
    pub beta: f64,
    /// Standard error of the largest level, used as a proxy for the extrapolation.
    pub stderr: f64,
    /// False when the increments do not decay and the largest level is returned.
    pub fitted: bool,
}

/// Fits `y(k) = Y - C k^(-beta)` through the last three points and returns `Y`.
pub fn extrapolate_levels(ks: &[f64], ys: &[f64], stderr: f64) -> Extrapolation {
    let n = ks.len();
    let fallback = Extrapolation {
        value: ys.last().copied().unwrap_or(f64::NAN),
        beta: f64::NAN,
        stderr,
        fitted: false,
    };
    if n < 3 {
        return fallback;
    }
    let (k1, k2, k3) = (ks[n - 3], ks[n - 2], ks[n - 1]);
    let (d1, d2) = (ys[n - 2] - ys[n - 3], ys[n - 1] - ys[n - 2]);
    if !(d1 > 0.0 && d2 > 0.0) {
        return fallback;
    }
    let ratio = |b: f64| (k2.powf(-b) - k3.powf(-b)) / (k1.powf(-b) - k2.powf(-b));
    let target = d2 / d1;
    // ratio decreases from its beta -> 0 limit ln(k3/k2)/ln(k2/k1) toward 0
    let (mut lo, mut hi) = (1e-9, 60.0);
    if !(target < ratio(lo) && target > ratio(hi)) {
        return fallback;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    let c = d2 / (k2.powf(-beta) - k3.powf(-beta));
    Extrapolation {
        value: ys[n - 1] + c * k3.powf(-beta),
        beta,
        stderr,
        fitted: true,
    }
}

/// One solution per ladder level on the same paths.
pub fn minimal_supersolution_ladder(
    paths: &PathBundle,
    driver: &DriverDescriptor,
    terminal: &TerminalDescriptor,
    reg: &RegressionSpec,
) -> Result<LadderResult> {
    terminal.check_ladder()?;
    let levels = terminal.ladder.clone();
    let solutions: Vec<Result<BackwardSolution>> = levels
        .iter()
        .map(|&k| solve_truncated(paths, driver, terminal, k, reg))
        .collect();
    let ok: Vec<&BackwardSolution> = solutions.iter().filter_map(|s| s.as_ref().ok()).collect();
    let increments = ok
        .windows(2)
        .map(|w| {
            let per_node = (0..=w[0].end_node())
                .map(|node| {
                    let (a, b) = (w[0].y(node), w[1].y(node));
                    a.iter().zip(b).map(|(x, y)| y - x).sum::<f64>() / a.len() as f64
                })
                .collect();
            (w[0].k, w[1].k, per_node)
        })
        .collect();
    let ks: Vec<f64> = ok.iter().map(|s| s.k).collect();
    let ys: Vec<f64> = ok.iter().map(|s| s.y0()).collect();
    let stderr = ok.last().map_or(f64::NAN, |s| s.y0_stderr());
    Ok(LadderResult {
        levels,
        extrapolation: extrapolate_levels(&ks, &ys, stderr),
        solutions,
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainFlow;
    use crate::grid::TimeGrid;
    use crate::model::ForwardModel;
    use crate::paths::{detect_exit, simulate_paths};
    use crate::regression::conditional_expectation;
    use crate::rng::SeedRecord;
    use crate::terminal::Payoff;

    fn bm_paths(n: usize, steps: usize, seed: u64) -> PathBundle {
        let g = TimeGrid::uniform(1.0, steps).unwrap();
        simulate_paths(&ForwardModel::brownian(vec![0.0], 0.0, 1.0), &g, n, SeedRecord::new(seed)).unwrap()
    }

    #[test]
    fn implicit_root_solves_equation() {
        for &(c, dt, chi, q, r0) in &[
            (1.0, 0.01, 0.0, 2.0, 0.0),
            (1e6, 0.005, 0.0, 3.0, 0.0),
            (-2.0, 0.1, -1.0, 1.5, 0.3),
            (0.0, 0.1, 0.5, 2.0, 0.0),
            (3.0, 0.2, 2.0, 2.0, 1.0),
        ] {
            let (y, it) = implicit_root(c, dt, chi, Some((q, 1.0)), r0).unwrap();
            let resid = y - dt * (chi * y - y * y.abs().powf(q - 1.0) + r0) - c;
            assert!(resid.abs() <= 1e-12 * c.abs().max(1.0), "c={c} resid={resid}");
            assert!(it <= MAX_IMPLICIT_ITERATIONS);
        }
        let (y, it) = implicit_root(2.0, 0.1, 0.0, None, 1.0).unwrap();
        assert_eq!((y, it), (2.1, 0));
    }

    #[test]
    fn truncated_terminal_examples() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let m = ForwardModel::brownian(vec![0.0], 0.0, 1.0);
        let b = crate::paths::PathBundle::from_states(&m, &g, 2, vec![0.0; 22]).unwrap();
        let dom = DomainFlow::interval(-1.0, 1.0, 1.0).unwrap();
        let t1 = TerminalDescriptor::xi1(dom.clone(), vec![5.0]);
        assert!(matches!(truncated_terminal(&b, &t1, 5.0), Err(Error::ExitTimesMissing)));
        let b = b.with_exit_times(vec![0.3, f64::INFINITY]).unwrap();
        assert_eq!(truncated_terminal(&b, &t1, 5.0).unwrap(), vec![5.0, 0.0]);
        let t2 = TerminalDescriptor::xi2(dom, vec![5.0]);
        assert_eq!(truncated_terminal(&b, &t2, 5.0).unwrap(), vec![0.0, 5.0]);
        let tb = TerminalDescriptor::bounded(Payoff::Constant { value: 7.0 }, vec![5.0]);
        assert_eq!(truncated_terminal(&b, &tb, 5.0).unwrap(), vec![5.0, 5.0]);
    }

    #[test]
    fn terminal_node_is_exact_and_nonnegative() {
        let b = bm_paths(2000, 20, 1);
        let b = detect_exit(b, &DomainFlow::interval(-1.0, 1.0, 1.0).unwrap(), true).unwrap();
        let term = TerminalDescriptor::xi1(DomainFlow::interval(-1.0, 1.0, 1.0).unwrap(), vec![4.0]);
        let sol = solve_truncated(&b, &DriverDescriptor::power(2.0, 3.0), &term, 4.0, &RegressionSpec::default()).unwrap();
        assert_eq!(sol.y(20), truncated_terminal(&b, &term, 4.0).unwrap().as_slice());
        for node in 0..=20 {
            assert!(sol.y(node).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_driver_is_regression_martingale() {
        let b = bm_paths(5000, 10, 2);
        let term = TerminalDescriptor::bounded(
            Payoff::Linear {
                weights: vec![1.0],
                offset: 0.0,
            },
            vec![1e9],
        );
        let reg = RegressionSpec::default();
        let sol = solve_truncated(&b, &DriverDescriptor::zero(), &term, 1e9, &reg).unwrap();
        let xt: Vec<f64> = (0..5000).map(|p| b.state(10, p)[0]).collect();
        let direct = conditional_expectation(&b, 9, &xt, &reg).unwrap();
        assert_eq!(sol.y(9), direct.as_slice());
        assert!(sol.y0().abs() <= 3.0 * sol.y0_stderr());
    }

    #[test]
    fn constant_terminal_matches_backward_euler() {
        // deterministic recursion y_i = y_{i+1} - dt y_i^2 solved in closed form per step
        let b = bm_paths(200, 50, 3);
        let term = TerminalDescriptor::bounded(Payoff::Constant { value: 1.0 }, vec![1.0]);
        let sol = solve_truncated(&b, &DriverDescriptor::power(2.0, 3.0), &term, 1.0, &RegressionSpec::default()).unwrap();
        let mut y = 1.0f64;
        let dt = 0.02;
        for _ in 0..50 {
            y = (-1.0 + (1.0 + 4.0 * dt * y).sqrt()) / (2.0 * dt);
        }
        assert!((sol.y0() - y).abs() < 1e-12);
        assert!((y - 0.5).abs() / 0.5 < 1e-2);
    }

    #[test]
    fn inactive_truncation_gives_identical_levels() {
        let b = bm_paths(1000, 20, 4);
        let term = TerminalDescriptor::bounded(Payoff::Constant { value: 0.5 }, vec![1.0, 2.0, 4.0]);
        let lad = minimal_supersolution_ladder(&b, &DriverDescriptor::power(2.0, 3.0), &term, &RegressionSpec::default()).unwrap();
        let sols: Vec<_> = lad.successful().collect();
        assert_eq!(sols.len(), 3);
        for s in &sols[1..] {
            for node in 0..=20 {
                assert_eq!(s.y(node), sols[0].y(node));
            }
        }
    }

    #[test]
    fn extrapolation_recovers_power_law_limit() {
        let ks = [2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = ks.iter().map(|k: &f64| 3.0 - 0.7 * k.powf(-1.3)).collect();
        let e = extrapolate_levels(&ks, &ys, 0.0);
        assert!(e.fitted);
        assert!((e.value - 3.0).abs() < 1e-10);
        assert!((e.beta - 1.3).abs() < 1e-8);
        let flat = extrapolate_levels(&ks, &[1.0, 1.0, 1.0, 1.0], 0.1);
        assert!(!flat.fitted);
        assert_eq!(flat.value, 1.0);
    }

    #[test]
    fn convergence_error_reported_for_bad_chi() {
        let b = bm_paths(100, 10, 5);
        let mut d = DriverDescriptor::power(2.0, 3.0);
        d.chi = 20.0;
        let term = TerminalDescriptor::bounded(Payoff::Constant { value: 1.0 }, vec![1.0]);
        assert!(solve_truncated(&b, &d, &term, 1.0, &RegressionSpec::default()).is_err());
    }
}

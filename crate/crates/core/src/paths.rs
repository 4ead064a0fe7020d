//! Forward simulation and exit detection.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use crate::domain::DomainFlow;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::ForwardModel;
use crate::rng::{Purpose, SeedRecord};

/// Paths per rayon work item. Fixed so the work split never depends on the pool size.
pub(crate) const CHUNK: usize = 2048;

/// Default cap on stored floating-point values (states plus increments).
pub const DEFAULT_MEMORY_BUDGET: usize = 250_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub store_increments: bool,
    pub memory_budget: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            store_increments: true,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

#[derive(Debug, Clone)]
struct ExitData {
    /// `f64::INFINITY` when the path stays inside on `[0, T]`.
    time: Vec<f64>,
    /// First node with `tau <= t_i`; `N + 1` when none.
    first_node: Vec<usize>,
    domain: Option<DomainFlow>,
}

/// Discretized forward paths on a shared grid.
///
/// Node-major storage: node `i` of all paths is contiguous, which is the
/// access pattern of the backward recursion.
#[derive(Debug, Clone)]
pub struct PathBundle {
    model: ForwardModel,
    grid: TimeGrid,
    n_paths: usize,
    seed: SeedRecord,
    states: Vec<f64>,
    increments: Option<Vec<f64>>,
    jumps: Vec<Vec<JumpEvent>>,
    exit: Option<ExitData>,
}

const MAX_MARK_DIM: usize = 4;

pub fn simulate_paths(model: &ForwardModel, grid: &TimeGrid, n_paths: usize, seed: SeedRecord) -> Result<PathBundle> {
    simulate_paths_with(model, grid, n_paths, seed, &SimOptions::default())
}

pub fn simulate_paths_with(
    model: &ForwardModel,
    grid: &TimeGrid,
    n_paths: usize,
    seed: SeedRecord,
    opts: &SimOptions,
) -> Result<PathBundle> {
    model.check_dimensions()?;
    if n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
    }
    let d = model.dim;
    if model.jump.is_some() && d > MAX_MARK_DIM {
        return Err(Error::Unsupported(format!("jumps in dimension above {MAX_MARK_DIM}")));
    }
    let steps = grid.steps();
    let per_copy = (steps + 1).saturating_mul(n_paths).saturating_mul(d);
    let requested = if opts.store_increments {
        per_copy.saturating_mul(2)
    } else {
        per_copy
    };
    if requested > opts.memory_budget {
        return Err(Error::Resource {
            requested,
            budget: opts.memory_budget,
        });
    }

    let jumps: Vec<Vec<JumpEvent>> = match &model.jump {
        Some(spec) if spec.intensity > 0.0 => (0..n_paths)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|p| {
                let mut rng = seed.stream(p, Purpose::Jumps);
                let wait = Exp::new(spec.intensity).expect("positive intensity");
                let mut out = Vec::new();
                let mut t = 0.0;
                loop {
                    t += wait.sample(&mut rng);
                    if t > grid.horizon() {
                        break;
                    }
                    let mut mark = [0.0; MAX_MARK_DIM];
                    spec.mark_law.sample(&mut rng, &mut mark[..d]);
                    out.push(JumpEvent { time: t, mark });
                }
                out
            })
            .collect(),
        _ => vec![Vec::new(); n_paths],
    };

    let mut states = vec![0.0; (steps + 1) * n_paths * d];
    for p in 0..n_paths {
        states[p * d..(p + 1) * d].copy_from_slice(&model.x0);
    }
    let mut increments = opts.store_increments.then(|| vec![0.0; steps * n_paths * d]);
    let mut rngs: Vec<_> = (0..n_paths).map(|p| seed.stream(p, Purpose::Diffusion)).collect();
    let mut cursor = vec![0usize; n_paths];
    let mut scratch_dw = vec![0.0; n_paths * d];

    for i in 0..steps {
        let t0 = grid.time(i);
        let t1 = grid.time(i + 1);
        let dt = t1 - t0;
        let sqrt_dt = dt.sqrt();
        let (head, tail) = states.split_at_mut((i + 1) * n_paths * d);
        let current = &head[i * n_paths * d..];
        let next = &mut tail[..n_paths * d];
        next.par_chunks_mut(CHUNK * d)
            .zip(current.par_chunks(CHUNK * d))
            .zip(rngs.par_chunks_mut(CHUNK))
            .zip(cursor.par_chunks_mut(CHUNK))
            .zip(scratch_dw.par_chunks_mut(CHUNK * d))
            .enumerate()
            .for_each(|(chunk, ((((nx, cx), rg), cur), dws))| {
                let mut b = vec![0.0; d];
                let mut s = vec![0.0; d * d];
                for (j, rng) in rg.iter_mut().enumerate() {
                    let p = chunk * CHUNK + j;
                    let x = &cx[j * d..(j + 1) * d];
                    let dw = &mut dws[j * d..(j + 1) * d];
                    for v in dw.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = sqrt_dt * z;
                    }
                    model.drift(x, &mut b);
                    model.diffusion(x, &mut s);
                    let out = &mut nx[j * d..(j + 1) * d];
                    for r in 0..d {
                        let noise: f64 = (0..d).map(|c| s[r * d + c] * dw[c]).sum();
                        out[r] = x[r] + b[r] * dt + noise;
                    }
                    let events = &jumps[p];
                    while cur[j] < events.len() && events[cur[j]].time <= t1 {
                        for r in 0..d {
                            out[r] += events[cur[j]].mark[r];
                        }
                        cur[j] += 1;
                    }
                }
            });
        if let Some(inc) = increments.as_mut() {
            inc[i * n_paths * d..(i + 1) * n_paths * d].copy_from_slice(&scratch_dw);
        }
    }

    Ok(PathBundle {
        model: model.clone(),
        grid: grid.clone(),
        n_paths,
        seed,
        states,
        increments,
        jumps,
        exit: None,
    })
}

impl PathBundle {
    /// Bundle from explicit node-major states (`(N+1) * n_paths * dim` values).
    /// Used for deterministic scenarios.
    pub fn from_states(model: &ForwardModel, grid: &TimeGrid, n_paths: usize, states: Vec<f64>) -> Result<Self> {
        let expected = (grid.steps() + 1) * n_paths * model.dim;
        if states.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: states.len(),
            });
        }
        Ok(Self {
            model: model.clone(),
            grid: grid.clone(),
            n_paths,
            seed: SeedRecord::new(0),
            states,
            increments: None,
            jumps: vec![Vec::new(); n_paths],
            exit: None,
        })
    }

    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.model.dim
    }

    pub fn seed(&self) -> SeedRecord {
        self.seed
    }

    /// States of all paths at `node`, path-major within the node.
    pub fn node_states(&self, node: usize) -> &[f64] {
        let w = self.n_paths * self.dim();
        &self.states[node * w..(node + 1) * w]
    }

    pub fn state(&self, node: usize, path: usize) -> &[f64] {
        let d = self.dim();
        &self.node_states(node)[path * d..(path + 1) * d]
    }

    /// Brownian increments over step `i` (between nodes `i` and `i+1`).
    pub fn step_increments(&self, step: usize) -> Option<&[f64]> {
        let w = self.n_paths * self.dim();
        self.increments.as_ref().map(|inc| &inc[step * w..(step + 1) * w])
    }

    pub fn has_increments(&self) -> bool {
        self.increments.is_some()
    }

    pub fn jump_events(&self, path: usize) -> &[JumpEvent] {
        &self.jumps[path]
    }

    /// Number of jumps of `path` in `(t_i, t_{i+1}]`.
    pub fn jump_count(&self, path: usize, step: usize) -> usize {
        let (t0, t1) = (self.grid.time(step), self.grid.time(step + 1));
        self.jumps[path].iter().filter(|e| e.time > t0 && e.time <= t1).count()
    }

    pub fn jump_intensity(&self) -> f64 {
        self.model.jump.as_ref().map_or(0.0, |j| j.intensity)
    }

    pub fn jump_weight(&self) -> f64 {
        self.model.jump.as_ref().map_or(0.0, |j| j.weight)
    }

    pub fn has_exit_times(&self) -> bool {
        self.exit.is_some()
    }

    /// Exit time of `path`, `f64::INFINITY` when it never leaves on `[0, T]`.
    pub fn exit_time(&self, path: usize) -> Option<f64> {
        self.exit.as_ref().map(|e| e.time[path])
    }

    pub fn exit_times(&self) -> Option<&[f64]> {
        self.exit.as_ref().map(|e| e.time.as_slice())
    }

    /// `1{tau <= t_node}`.
    pub fn exit_flag(&self, node: usize, path: usize) -> Option<bool> {
        self.exit.as_ref().map(|e| e.first_node[path] <= node)
    }

    /// First node at which the exit flag is set, `N + 1` when never.
    pub fn first_exit_node(&self, path: usize) -> Option<usize> {
        self.exit.as_ref().map(|e| e.first_node[path])
    }

    pub fn exit_flags(&self, node: usize) -> Option<Vec<bool>> {
        self.exit
            .as_ref()
            .map(|e| e.first_node.iter().map(|&f| f <= node).collect())
    }

    /// Domain used by [`detect_exit`]; `None` for installed exit times.
    pub fn exit_domain(&self) -> Option<&DomainFlow> {
        self.exit.as_ref().and_then(|e| e.domain.as_ref())
    }

    /// Installs exit data directly; `first_node` must be consistent with `time`.
    pub fn with_exit_times(mut self, time: Vec<f64>) -> Result<Self> {
        if time.len() != self.n_paths {
            return Err(Error::DimensionMismatch {
                expected: self.n_paths,
                found: time.len(),
            });
        }
        let first_node = time
            .iter()
            .map(|&t| {
                if t.is_finite() {
                    self.grid.first_node_at_or_after(t).unwrap_or(self.grid.steps())
                } else {
                    self.grid.steps() + 1
                }
            })
            .collect();
        self.exit = Some(ExitData {
            time,
            first_node,
            domain: None,
        });
        Ok(self)
    }

    /// Path dump: `path_id, node_index, t, x_1..x_d, exited_flag, exit_time, exit_sentinel_flag`.
    /// Non-exiting paths carry `exit_time = T + 1` and `exit_sentinel_flag = 1`.
    pub fn write_csv<W: Write>(&self, out: W, max_paths: Option<usize>) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let d = self.dim();
        let mut header = vec!["path_id".to_string(), "node_index".into(), "t".into()];
        header.extend((1..=d).map(|c| format!("x_{c}")));
        header.extend(["exited_flag".into(), "exit_time".into(), "exit_sentinel_flag".into()]);
        w.write_record(&header)?;
        let sentinel = self.grid.horizon() + 1.0;
        let n = max_paths.unwrap_or(self.n_paths).min(self.n_paths);
        for p in 0..n {
            let tau = self.exit_time(p).unwrap_or(f64::INFINITY);
            let (tau_out, sentinel_flag) = if tau.is_finite() { (tau, 0) } else { (sentinel, 1) };
            for node in 0..=self.grid.steps() {
                let mut rec = vec![p.to_string(), node.to_string(), fmt(self.grid.time(node))];
                rec.extend(self.state(node, p).iter().map(|&v| fmt(v)));
                let flag = self.exit_flag(node, p).unwrap_or(false);
                rec.push(u8::from(flag).to_string());
                rec.push(fmt(tau_out));
                rec.push(sentinel_flag.to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// Probability that a Brownian bridge with variance rate `a` over `dt`
/// touches a boundary it starts at distance `g0` from and ends at distance `g1`.
fn bridge_hit_probability(g0: f64, g1: f64, a: f64, dt: f64) -> f64 {
    if g0 <= 0.0 || g1 <= 0.0 {
        return 1.0;
    }
    if a <= 0.0 {
        return 0.0;
    }
    (-2.0 * g0 * g1 / (a * dt)).exp()
}

/// Fills exit times and per-node exit flags.
///
/// Without bridge correction a path exits at the first node outside `D_t`.
/// With it (dimension one), every step between two inside nodes also exits
/// with the Brownian-bridge hitting probability of each boundary, the exit
/// time then being uniform in the step; an endpoint outside the domain places
/// the exit at the linear crossing point.
pub fn detect_exit(paths: PathBundle, domain: &DomainFlow, bridge_correction: bool) -> Result<PathBundle> {
    let mut paths = paths;
    let d = paths.dim();
    if domain.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: domain.dim(),
        });
    }
    if bridge_correction && d != 1 {
        return Err(Error::Unsupported("bridge correction is one-dimensional".into()));
    }
    let grid = paths.grid.clone();
    let steps = grid.steps();
    let n = paths.n_paths;
    let seed = paths.seed;
    let bundle = &paths;

    let results: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|p| {
            if !domain.contains(bundle.state(0, p), 0.0) {
                return (0.0, 0);
            }
            let mut rng = bridge_correction.then(|| seed.stream(p, Purpose::ExitBridge));
            let mut sigma = [0.0];
            for i in 0..steps {
                let (t0, t1) = (grid.time(i), grid.time(i + 1));
                let x1 = bundle.state(i + 1, p);
                let inside = domain.contains(x1, t1);
                let Some(rng) = rng.as_mut() else {
                    if !inside {
                        return (t1, i + 1);
                    }
                    continue;
                };
                let u_hit: f64 = rng.random();
                let u_place: f64 = rng.random();
                let x0 = bundle.state(i, p)[0];
                let (lo0, hi0) = domain.intervals[0].bounds(t0);
                let (lo1, hi1) = domain.intervals[0].bounds(t1);
                if !inside {
                    let mut frac: f64 = 1.0;
                    let y = x1[0];
                    if y >= hi1 {
                        frac = frac.min(crossing_fraction(hi0 - x0, hi1 - y));
                    }
                    if y <= lo1 {
                        frac = frac.min(crossing_fraction(x0 - lo0, y - lo1));
                    }
                    return (t0 + frac * (t1 - t0), i + 1);
                }
                bundle.model.diffusion(&[x0], &mut sigma);
                let a = sigma[0] * sigma[0];
                let dt = t1 - t0;
                let p_hi = bridge_hit_probability(hi0 - x0, hi1 - x1[0], a, dt);
                let p_lo = bridge_hit_probability(x0 - lo0, x1[0] - lo1, a, dt);
                let p_hit = 1.0 - (1.0 - p_hi) * (1.0 - p_lo);
                if u_hit < p_hit {
                    return (t0 + u_place * dt, i + 1);
                }
            }
            (f64::INFINITY, steps + 1)
        })
        .collect();

    let (time, first_node) = results.into_iter().unzip();
    paths.exit = Some(ExitData {
        time,
        first_node,
        domain: Some(domain.clone()),
    });
    Ok(paths)
}

/// Where a linear interpolation crosses zero: start gap `g0 > 0`, end gap `g1 <= 0`.
fn crossing_fraction(g0: f64, g1: f64) -> f64 {
    let denom = g0 - g1;
    if denom <= 0.0 {
        1.0
    } else {
        (g0 / denom).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfPoint {
    pub s: f64,
    pub prob: f64,
    pub stderr: f64,
}

/// `P(tau <= s)` with binomial standard errors.
pub fn empirical_exit_cdf(paths: &PathBundle, s_grid: &[f64]) -> Result<Vec<CdfPoint>> {
    let times = paths.exit_times().ok_or(Error::ExitTimesMissing)?;
    let mut sorted: Vec<f64> = times.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    Ok(s_grid
        .iter()
        .map(|&s| {
            let count = sorted.partition_point(|&t| t <= s) as f64;
            let prob = count / n;
            CdfPoint {
                s,
                prob,
                stderr: (prob * (1.0 - prob) / n).sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Curve, MovingInterval};
    use crate::model::{JumpSpec, MarkLaw};
    use crate::stats::MeanEstimate;

    fn bm() -> ForwardModel {
        ForwardModel::brownian(vec![0.0], 0.0, 1.0)
    }

    #[test]
    fn node_zero_is_x0_and_memory_budget_enforced() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let m = ForwardModel::brownian(vec![0.3, -0.2], 0.1, 1.0);
        let b = simulate_paths(&m, &g, 100, SeedRecord::new(1)).unwrap();
        for p in 0..100 {
            assert_eq!(b.state(0, p), &[0.3, -0.2]);
        }
        let opts = SimOptions {
            store_increments: true,
            memory_budget: 1000,
        };
        assert!(matches!(
            simulate_paths_with(&m, &g, 100, SeedRecord::new(1), &opts),
            Err(Error::Resource { .. })
        ));
    }

    #[test]
    fn whole_space_never_exits() {
        let g = TimeGrid::uniform(1.0, 50).unwrap();
        let b = simulate_paths(&bm(), &g, 2000, SeedRecord::new(2)).unwrap();
        let dom = DomainFlow::interval(-1e9, 1e9, 1.0).unwrap();
        let b = detect_exit(b, &dom, true).unwrap();
        assert!(b.exit_times().unwrap().iter().all(|t| t.is_infinite()));
        let cdf = empirical_exit_cdf(&b, &[0.0, 0.5, 1.0]).unwrap();
        assert!(cdf.iter().all(|c| c.prob == 0.0));
    }

    #[test]
    fn sweeping_boundary_exit_at_first_node_after_crossing() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let m = bm();
        let b = PathBundle::from_states(&m, &g, 1, vec![0.0; 11]).unwrap();
        // lower boundary -1 + 4t passes 0 at t = 0.25
        let iv = MovingInterval {
            lower: Curve::linear(-1.0, 4.0),
            upper: Curve::constant(10.0),
        };
        let dom = DomainFlow::new(vec![iv], 1.0).unwrap();
        let b = detect_exit(b, &dom, false).unwrap();
        assert!((b.exit_time(0).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(b.first_exit_node(0), Some(3));
        let flags: Vec<bool> = (0..=10).map(|i| b.exit_flag(i, 0).unwrap()).collect();
        assert!(flags.windows(2).all(|w| w[0] <= w[1]));
        assert!(!flags[2] && flags[3]);
    }

    #[test]
    fn interior_start_has_zero_cdf_at_zero() {
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let b = simulate_paths(&bm(), &g, 500, SeedRecord::new(3)).unwrap();
        let b = detect_exit(b, &DomainFlow::interval(-1.0, 1.0, 1.0).unwrap(), true).unwrap();
        let cdf = empirical_exit_cdf(&b, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(cdf[0].prob, 0.0);
        assert!(cdf.windows(2).all(|w| w[0].prob <= w[1].prob));
    }

    #[test]
    fn brownian_terminal_moments() {
        let g = TimeGrid::uniform(1.0, 100).unwrap();
        let n = 100_000;
        let b = simulate_paths(&bm(), &g, n, SeedRecord::new(11)).unwrap();
        let est = MeanEstimate::from_iter((0..n).map(|p| b.state(100, p)[0]));
        assert!(est.mean.abs() <= 4.0 / (n as f64).sqrt());
        // variance of the sample variance of N(0,1) data is 2/(n-1)
        let var = est.sd * est.sd;
        assert!((var - 1.0).abs() <= 5.0 * (2.0 / (n as f64 - 1.0)).sqrt(), "var {var}");
    }

    #[test]
    fn gbm_mean_matches_closed_form() {
        let g = TimeGrid::uniform(1.0, 100).unwrap();
        let n = 100_000;
        let m = ForwardModel::geometric(vec![1.0], 0.05, 0.2);
        let b = simulate_paths(&m, &g, n, SeedRecord::new(5)).unwrap();
        let est = MeanEstimate::from_iter((0..n).map(|p| b.state(100, p)[0]));
        // Euler for linear SDEs keeps the exact mean (1 + r dt)^N; the bias to e^r is ~1e-5
        assert!((est.mean - 0.05f64.exp()).abs() <= 4.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn poisson_jump_count_mean() {
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let n = 20_000;
        let m = bm().with_jumps(JumpSpec {
            intensity: 2.0,
            mark_law: MarkLaw::Gaussian {
                mean: vec![0.1],
                sd: vec![0.2],
            },
            weight: 1.0,
        });
        let b = simulate_paths(&m, &g, n, SeedRecord::new(9)).unwrap();
        let est = MeanEstimate::from_iter((0..n).map(|p| b.jump_events(p).len() as f64));
        assert!((est.mean - 2.0).abs() <= 4.0 * (2.0 / n as f64).sqrt());
        // no jump lands exactly on a node
        for p in 0..n {
            for e in b.jump_events(p) {
                assert!(!g.nodes().contains(&e.time));
            }
        }
        // per-step counts add up to the event list
        let total: usize = (0..20).map(|s| b.jump_count(7, s)).sum();
        assert_eq!(total, b.jump_events(7).len());
    }

    #[test]
    fn jumps_enter_state() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let mut m = bm().with_jumps(JumpSpec {
            intensity: 3.0,
            mark_law: MarkLaw::PointMass { mark: vec![1.0] },
            weight: 1.0,
        });
        m.diffusion_const = vec![0.0];
        let b = simulate_paths(&m, &g, 50, SeedRecord::new(4)).unwrap();
        for p in 0..50 {
            assert_eq!(b.state(10, p)[0], b.jump_events(p).len() as f64);
        }
    }

    #[test]
    fn increments_have_step_variance() {
        let g = TimeGrid::refined(1.0, 20, 2.0).unwrap();
        let n = 20_000;
        let b = simulate_paths(&bm(), &g, n, SeedRecord::new(8)).unwrap();
        for step in [0, 10, 19] {
            let inc = b.step_increments(step).unwrap();
            let est = MeanEstimate::from_iter(inc.iter().copied());
            let var = est.sd * est.sd;
            let dt = g.step(step);
            let se = dt * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((var - dt).abs() <= 5.0 * se, "step {step}");
        }
    }

    #[test]
    fn bridge_raises_exit_probability() {
        let g = TimeGrid::uniform(1.0, 50).unwrap();
        let dom = DomainFlow::interval(-1.0, 1.0, 1.0).unwrap();
        let b = simulate_paths(&bm(), &g, 20_000, SeedRecord::new(21)).unwrap();
        let off = detect_exit(b.clone(), &dom, false).unwrap();
        let on = detect_exit(b, &dom, true).unwrap();
        let p_off = empirical_exit_cdf(&off, &[1.0]).unwrap()[0].prob;
        let p_on = empirical_exit_cdf(&on, &[1.0]).unwrap()[0].prob;
        assert!(p_on > p_off);
        // bridge exit never later than node exit on the same path
        for p in 0..20_000 {
            assert!(on.exit_time(p).unwrap() <= off.exit_time(p).unwrap());
        }
    }

    #[test]
    fn bridge_rejected_in_two_dimensions() {
        let g = TimeGrid::uniform(1.0, 5).unwrap();
        let m = ForwardModel::brownian(vec![0.0, 0.0], 0.0, 1.0);
        let b = simulate_paths(&m, &g, 10, SeedRecord::new(1)).unwrap();
        let dom = DomainFlow::new(
            vec![MovingInterval::fixed(-1.0, 1.0), MovingInterval::fixed(-1.0, 1.0)],
            1.0,
        )
        .unwrap();
        assert!(detect_exit(b.clone(), &dom, true).is_err());
        assert!(detect_exit(b.clone(), &DomainFlow::interval(-1.0, 1.0, 1.0).unwrap(), false).is_err());
        assert!(detect_exit(b, &dom, false).is_ok());
    }

    #[test]
    fn csv_header_and_sentinel() {
        let g = TimeGrid::uniform(1.0, 2).unwrap();
        let b = simulate_paths(&bm(), &g, 2, SeedRecord::new(1)).unwrap();
        let b = detect_exit(b, &DomainFlow::interval(-1e9, 1e9, 1.0).unwrap(), false).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "path_id,node_index,t,x_1,exited_flag,exit_time,exit_sentinel_flag"
        );
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[5].parse::<f64>().unwrap(), 2.0);
        assert_eq!(first[6], "1");
        assert_eq!(text.lines().count(), 1 + 2 * 3);
    }
}

//! Exit-time densities: absorbing forward PDE, image series and Monte Carlo.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::DomainFlow;
use crate::error::{Error, Result};
use crate::model::ForwardModel;
use crate::paths::{empirical_exit_cdf, fmt, PathBundle};

/// Density values below this are an instability, not rounding.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-6;
/// `sigma^2 dt / dx^2` above this flags an accuracy concern.
pub const CFL_WARNING: f64 = 1e3;
pub const MIN_MC_EXITS: usize = 1000;
pub const SERIES_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeGrid {
    /// Nodes across the mapped unit interval, boundaries included.
    pub m: usize,
    pub n_time: usize,
}

impl PdeGrid {
    pub fn validate(&self) -> Result<()> {
        if self.m < 16 {
            return Err(Error::InvalidParameter(format!("PDE grid needs m >= 16, got {}", self.m)));
        }
        if self.n_time < 2 {
            return Err(Error::InvalidParameter("PDE grid needs at least 2 time steps".into()));
        }
        Ok(())
    }

    pub fn doubled(&self) -> Self {
        Self {
            m: 2 * self.m - 1,
            n_time: 2 * self.n_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Pde,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub method: Method,
    pub s: Vec<f64>,
    pub survival: Vec<f64>,
    pub density: Vec<f64>,
    pub error: Vec<f64>,
    /// Largest `sigma^2 dt/dx^2` seen (PDE only).
    pub cfl: f64,
    pub warnings: Vec<String>,
}

impl DensityEstimate {
    /// `S(s) + int_t^s f - 1`, worst absolute value over the grid (trapezoid rule).
    pub fn mass_balance(&self) -> f64 {
        let mut integral = 0.0;
        let mut worst: f64 = (self.survival[0] - 1.0).abs();
        for i in 1..self.s.len() {
            integral += 0.5 * (self.density[i] + self.density[i - 1]) * (self.s[i] - self.s[i - 1]);
            worst = worst.max((self.survival[i] + integral - 1.0).abs());
        }
        worst
    }

    /// Linear interpolation of the density.
    pub fn density_at(&self, s: f64) -> f64 {
        interp(&self.s, &self.density, s)
    }

    pub fn survival_at(&self, s: f64) -> f64 {
        interp(&self.s, &self.survival, s)
    }

    /// `method,s,survival,density,error_estimate`
    pub fn write_csv<W: Write>(&self, out: W, with_header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .has_headers(false)
            .from_writer(out);
        if with_header {
            w.write_record(["method", "s", "survival", "density", "error_estimate"])?;
        }
        let tag = match self.method {
            Method::Pde => "PDE",
            Method::Mc => "MC",
        };
        for i in 0..self.s.len() {
            w.write_record([
                tag.to_string(),
                fmt(self.s[i]),
                fmt(self.survival[i]),
                fmt(self.density[i]),
                fmt(self.error[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let j = xs.partition_point(|&v| v < x);
    if j >= xs.len() {
        return *ys.last().unwrap();
    }
    let (x0, x1) = (xs[j - 1], xs[j]);
    let w = (x - x0) / (x1 - x0);
    ys[j - 1] * (1.0 - w) + ys[j] * w
}

/// Solves `a_i u_{i-1} + b_i u_i + c_i u_{i+1} = d_i` in place.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64]) {
    let n = d.len();
    let mut cp = vec![0.0; n];
    let mut beta = b[0];
    cp[0] = c[0] / beta;
    d[0] /= beta;
    for i in 1..n {
        beta = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / beta;
        d[i] = (d[i] - a[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= cp[i] * d[i + 1];
    }
}

/// Boundary positions and velocities `(alpha, beta, alpha', beta')` at time `s`.
pub(crate) type Bounds<'a> = &'a dyn Fn(f64) -> [f64; 4];

/// Interior operator rows of the mapped forward equation
/// `P_s = (aP)_xx/(2L^2) - (bP)_x/L + (alpha' + L' x)/L P_x` at time `s`.
fn operator(model: &ForwardModel, bounds: Bounds, s: f64, m: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let [al, be, dal, dbe] = bounds(s);
    let len = be - al;
    let dlen = dbe - dal;
    let h = 1.0 / (m - 1) as f64;
    let mut a = vec![0.0; m];
    let mut bcoef = vec![0.0; m];
    let mut sig = [0.0];
    let mut drift = [0.0];
    for j in 0..m {
        let y = al + len * j as f64 * h;
        model.diffusion(&[y], &mut sig);
        model.drift(&[y], &mut drift);
        a[j] = sig[0] * sig[0];
        bcoef[j] = drift[0];
    }
    let n = m - 2;
    let (mut lo, mut di, mut up) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let diff = 0.5 / (len * len * h * h);
    let adv = 1.0 / (2.0 * h * len);
    let mut amax: f64 = 0.0;
    for r in 0..n {
        let j = r + 1;
        let c = (dal + dlen * j as f64 * h) / len;
        lo[r] = diff * a[j - 1] + adv * bcoef[j - 1] - c / (2.0 * h);
        di[r] = -2.0 * diff * a[j];
        up[r] = diff * a[j + 1] - adv * bcoef[j + 1] + c / (2.0 * h);
        amax = amax.max(a[j] / (len * len * h * h));
    }
    (lo, di, up, amax)
}

/// One step of `(I - th dt A1) P1 = (I + (1-th) dt A0) P0` on interior nodes.
fn theta_step(model: &ForwardModel, bounds: Bounds, s0: f64, s1: f64, theta: f64, p: &mut [f64]) -> f64 {
    let m = p.len();
    let dt = s1 - s0;
    let (l0, d0, u0, _) = operator(model, bounds, s0, m);
    let (l1, d1, u1, amax) = operator(model, bounds, s1, m);
    let n = m - 2;
    let mut rhs = vec![0.0; n];
    for r in 0..n {
        let j = r + 1;
        rhs[r] = p[j] + (1.0 - theta) * dt * (l0[r] * p[j - 1] + d0[r] * p[j] + u0[r] * p[j + 1]);
    }
    let lo: Vec<f64> = l1.iter().map(|v| -theta * dt * v).collect();
    let di: Vec<f64> = d1.iter().map(|v| 1.0 - theta * dt * v).collect();
    let up: Vec<f64> = u1.iter().map(|v| -theta * dt * v).collect();
    thomas(&lo, &di, &up, &mut rhs);
    p[0] = 0.0;
    p[m - 1] = 0.0;
    p[1..m - 1].copy_from_slice(&rhs);
    amax * dt
}

fn trapz(p: &[f64], len: f64) -> f64 {
    let h = 1.0 / (p.len() - 1) as f64;
    let inner: f64 = p[1..p.len() - 1].iter().sum();
    len * h * (inner + 0.5 * (p[0] + p[p.len() - 1]))
}

pub(crate) struct PdeRun {
    pub s: Vec<f64>,
    pub survival: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub profiles: Option<Vec<Vec<f64>>>,
    pub cfl: f64,
}

/// Evolves the mapped density from `init` over `[s0, s1]` with `n` steps;
/// the first step is two implicit-Euler half-steps when `rannacher` is set.
pub(crate) fn run_pde(
    model: &ForwardModel,
    bounds: Bounds,
    init: Vec<f64>,
    s0: f64,
    s1: f64,
    n: usize,
    rannacher: bool,
    keep_profiles: bool,
) -> Result<PdeRun> {
    let mut p = init;
    let ds = (s1 - s0) / n as f64;
    let len0 = bounds(s0)[1] - bounds(s0)[0];
    let mut s = vec![s0];
    let mut survival = vec![trapz(&p, len0)];
    let mut profiles = keep_profiles.then(|| vec![p.clone()]);
    let mut cfl: f64 = 0.0;
    for i in 0..n {
        let a = s0 + i as f64 * ds;
        let b = if i + 1 == n { s1 } else { s0 + (i + 1) as f64 * ds };
        if i == 0 && rannacher {
            let mid = 0.5 * (a + b);
            cfl = cfl.max(theta_step(model, bounds, a, mid, 1.0, &mut p));
            cfl = cfl.max(theta_step(model, bounds, mid, b, 1.0, &mut p));
        } else {
            cfl = cfl.max(theta_step(model, bounds, a, b, 0.5, &mut p));
        }
        if let Some(&v) = p.iter().find(|&&v| v < -NEGATIVITY_TOLERANCE) {
            return Err(Error::Instability { value: v, time: b });
        }
        let len = bounds(b)[1] - bounds(b)[0];
        s.push(b);
        survival.push(trapz(&p, len));
        if let Some(ps) = profiles.as_mut() {
            ps.push(p.clone());
        }
    }
    Ok(PdeRun {
        s,
        survival,
        profiles,
        cfl,
    })
}

/// Narrow Gaussian around `x` on the mapped grid, unit mass under the trapezoid rule.
pub(crate) fn initial_profile(x: f64, lower: f64, upper: f64, m: usize) -> Vec<f64> {
    let len = upper - lower;
    let h = 1.0 / (m - 1) as f64;
    let sd = 2.0 * h * len;
    let mut p: Vec<f64> = (0..m)
        .map(|j| {
            let y = lower + len * j as f64 * h;
            (-0.5 * ((y - x) / sd).powi(2)).exp()
        })
        .collect();
    p[0] = 0.0;
    p[m - 1] = 0.0;
    let mass = trapz(&p, len);
    p.iter_mut().for_each(|v| *v /= mass);
    p
}

/// `-dS/ds` by centered differences, one-sided at the ends.
pub(crate) fn density_from_survival(s: &[f64], surv: &[f64]) -> Vec<f64> {
    let n = s.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                -(surv[1] - surv[0]) / (s[1] - s[0])
            } else if i == n - 1 {
                -(surv[n - 1] - surv[n - 2]) / (s[n - 1] - s[n - 2])
            } else {
                -(surv[i + 1] - surv[i - 1]) / (s[i + 1] - s[i - 1])
            }
        })
        .collect()
}

fn domain_bounds(domain: &DomainFlow) -> impl Fn(f64) -> [f64; 4] + '_ {
    move |s| {
        let iv = &domain.intervals[0];
        [iv.lower.value(s), iv.upper.value(s), iv.lower.velocity(s), iv.upper.velocity(s)]
    }
}

fn survival_pde_once(model: &ForwardModel, domain: &DomainFlow, x: f64, t: f64, grid: &PdeGrid) -> Result<(PdeRun, Vec<f64>)> {
    let bounds = domain_bounds(domain);
    let [al, be, _, _] = bounds(t);
    let init = initial_profile(x, al, be, grid.m);
    let run = run_pde(model, &bounds, init, t, domain.horizon, grid.n_time, true, false)?;
    let dens = density_from_survival(&run.s, &run.survival);
    Ok((run, dens))
}

/// Survival and exit density of the diffusion started at `(x, t)` from the
/// forward equation with absorbing boundaries. The error column is the
/// difference to a half-resolution solve.
pub fn survival_pde(model: &ForwardModel, domain: &DomainFlow, start: (f64, f64), grid: &PdeGrid) -> Result<DensityEstimate> {
    grid.validate()?;
    domain.validate()?;
    if model.dim != 1 || domain.dim() != 1 {
        return Err(Error::Unsupported("PDE route is one-dimensional".into()));
    }
    if model.jump.is_some() {
        return Err(Error::Unsupported("PDE route has no jump term".into()));
    }
    let (x, t) = start;
    if !(t < domain.horizon) {
        return Err(Error::NonPositiveHorizon(domain.horizon - t));
    }
    if !domain.contains(&[x], t) {
        return Err(Error::InvalidParameter(format!("start {x} is not inside the domain at t = {t}")));
    }
    let (run, density) = survival_pde_once(model, domain, x, t, grid)?;
    let coarse_grid = PdeGrid {
        m: grid.m.div_ceil(2).max(16),
        n_time: (grid.n_time / 2).max(2),
    };
    let (coarse, coarse_density) = survival_pde_once(model, domain, x, t, &coarse_grid)?;
    let error = run
        .s
        .iter()
        .zip(&density)
        .map(|(&s, &f)| (f - interp(&coarse.s, &coarse_density, s)).abs())
        .collect();
    let mut warnings = Vec::new();
    if run.cfl > CFL_WARNING {
        warnings.push(format!("sigma^2 dt/dx^2 = {:.3e} above {CFL_WARNING:e}", run.cfl));
    }
    Ok(DensityEstimate {
        method: Method::Pde,
        s: run.s,
        survival: run.survival,
        density,
        error,
        cfl: run.cfl,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    pub truncation_bound: f64,
}

fn image_term(u: f64, s: f64) -> f64 {
    u / (2.0 * std::f64::consts::PI * s.powi(3)).sqrt() * (-u * u / (2.0 * s)).exp()
}

/// Exit-time density of standard Brownian motion from `(a, b)` started at `x`,
/// by the method of images, summed over `|n| <= n_terms`.
pub fn bm_exit_density_series(a: f64, b: f64, x: f64, s: f64, n_terms: usize) -> Result<SeriesValue> {
    if !(a < x && x < b) {
        return Err(Error::InvalidParameter(format!("need a < x < b, got {a}, {x}, {b}")));
    }
    if !(s > 0.0) {
        return Err(Error::NonPositiveHorizon(s));
    }
    let w = b - a;
    let term = |n: i64| {
        let shift = 2.0 * n as f64 * w;
        image_term(x - a + shift, s) + image_term(b - x + shift, s)
    };
    let nt = n_terms as i64;
    let value: f64 = (-nt..=nt).map(term).sum();
    // the omitted terms decay like exp(-2 n^2 w^2 / s); 200 more bound the rest far below f64 resolution
    let truncation_bound: f64 = (nt + 1..=nt + 200).map(|n| term(n).abs() + term(-n).abs()).sum();
    if truncation_bound > SERIES_TOLERANCE {
        return Err(Error::SeriesTruncation {
            bound: truncation_bound,
            elapsed: s,
        });
    }
    Ok(SeriesValue { value, truncation_bound })
}

/// `P(tau > s)` as `1 - int_0^s f`, integrating the image series by Gauss-Legendre.
pub fn bm_survival_series(a: f64, b: f64, x: f64, s: f64, n_terms: usize) -> Result<f64> {
    const PANELS: usize = 200;
    let rule = gauss_legendre_16();
    let h = s / PANELS as f64;
    let mut integral = 0.0;
    for j in 0..PANELS {
        let (lo, hi) = (j as f64 * h, (j + 1) as f64 * h);
        for &(node, wt) in &rule {
            let u = 0.5 * (lo + hi) + 0.5 * (hi - lo) * node;
            // the series at tiny u underflows harmlessly; the truncation check is vacuous there
            let v = bm_exit_density_series(a, b, x, u, n_terms)?.value;
            integral += 0.5 * (hi - lo) * wt * v;
        }
    }
    Ok(1.0 - integral)
}

fn gauss_legendre_16() -> Vec<(f64, f64)> {
    let n = 16;
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
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
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Triangular-kernel density of the detected exit times, renormalized by the
/// kernel mass inside `[0, T]`.
pub fn density_mc(paths: &PathBundle, bandwidth: f64, s_grid: &[f64]) -> Result<DensityEstimate> {
    let times = paths.exit_times().ok_or(Error::ExitTimesMissing)?;
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let exits: Vec<f64> = times.iter().copied().filter(|t| t.is_finite()).collect();
    if exits.len() < MIN_MC_EXITS {
        return Err(Error::TooFewExits(exits.len()));
    }
    let n = times.len() as f64;
    let horizon = paths.grid().horizon();
    let cdf = empirical_exit_cdf(paths, s_grid)?;
    let mut density = Vec::with_capacity(s_grid.len());
    let mut error = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let raw: f64 = exits
            .iter()
            .map(|&tau| {
                let u = (s - tau).abs() / bandwidth;
                if u < 1.0 {
                    (1.0 - u) / bandwidth
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / n;
        let mass = triangular_mass(s, bandwidth, 0.0, horizon);
        let f = if mass > 0.0 { raw / mass } else { 0.0 };
        density.push(f);
        error.push((f * 2.0 / 3.0 / (n * bandwidth)).sqrt() / mass.max(f64::MIN_POSITIVE));
    }
    Ok(DensityEstimate {
        method: Method::Mc,
        s: s_grid.to_vec(),
        survival: cdf.iter().map(|c| 1.0 - c.prob).collect(),
        density,
        error,
        cfl: 0.0,
        warnings: Vec::new(),
    })
}

/// `int_lo^hi K_h(s - u) du` for the triangular kernel.
fn triangular_mass(s: f64, h: f64, lo: f64, hi: f64) -> f64 {
    // antiderivative of the kernel in v = (u - s)/h
    let cdf = |v: f64| {
        let v = v.clamp(-1.0, 1.0);
        if v < 0.0 {
            0.5 * (1.0 + v) * (1.0 + v)
        } else {
            1.0 - 0.5 * (1.0 - v) * (1.0 - v)
        }
    };
    cdf((hi - s) / h) - cdf((lo - s) / h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBound {
    pub value: f64,
    pub error: f64,
    pub at: f64,
}

/// Supremum of the density on `[T - window, T]` and the error estimate at the maximizer.
pub fn density_bound_near_t(estimate: &DensityEstimate, window: f64) -> DensityBound {
    let horizon = *estimate.s.last().expect("nonempty estimate");
    let mut best = DensityBound {
        value: 0.0,
        error: 0.0,
        at: horizon,
    };
    for (i, &s) in estimate.s.iter().enumerate() {
        if s >= horizon - window - 1e-12 && estimate.density[i] > best.value {
            best = DensityBound {
                value: estimate.density[i],
                error: estimate.error[i],
                at: s,
            };
        }
    }
    best
}

//! Least-squares conditional expectations on polynomial bases.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{PathBundle, CHUNK};

/// Regression matrices above this condition number are reported.
pub const CONDITION_WARNING: f64 = 1e12;

/// Fewer rows per basis function than this and the degree is lowered.
const MIN_ROWS_PER_FUNCTION: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSpec {
    pub degree: usize,
    /// Fit `{tau <= t_i}` and `{tau > t_i}` separately.
    #[serde(default = "default_true")]
    pub per_event: bool,
    #[serde(default)]
    pub ridge: f64,
    /// Edges in the scaled distance `d / sqrt(lambda (T - t))` to the nearest face
    /// of the exit domain. Rows not yet exited are fitted locally per face and
    /// layer; empty for a single fit.
    #[serde(default)]
    pub boundary_layers: Vec<f64>,
}

fn default_true() -> bool {
    true
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            degree: 3,
            per_event: true,
            ridge: 0.0,
            boundary_layers: Vec::new(),
        }
    }
}

impl RegressionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidParameter(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        let edges = &self.boundary_layers;
        if edges.iter().any(|&e| !(e > 0.0 && e.is_finite())) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "boundary layer edges must be positive, finite and increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Fit on one sub-population.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFit {
    /// Exit flag of the group, `None` when the group mixes both.
    pub event: Option<bool>,
    /// Boundary cell of the rows; 0 is the bulk.
    pub cell: u32,
    pub rows: usize,
    pub degree: usize,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Exponents of the state monomials; the first is the constant.
    pub exponents: Vec<Vec<u32>>,
    /// Number of leading monomials also multiplied by the exit flag.
    pub flagged: usize,
    /// `n_basis x n_targets`, row-major.
    pub coefficients: Vec<f64>,
    pub condition: f64,
}

impl GroupFit {
    pub fn n_basis(&self) -> usize {
        self.exponents.len() + self.flagged
    }

    fn basis(&self, x: &[f64], flag: bool, out: &mut [f64]) {
        let z: Vec<f64> = x
            .iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(v, (c, s))| (v - c) / s)
            .collect();
        for (j, e) in self.exponents.iter().enumerate() {
            out[j] = e.iter().zip(&z).map(|(&p, v)| v.powi(p as i32)).product();
        }
        let m = self.exponents.len();
        for j in 0..self.flagged {
            out[m + j] = if flag { out[j] } else { 0.0 };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeFit {
    pub groups: Vec<GroupFit>,
}

impl NodeFit {
    pub fn condition(&self) -> f64 {
        self.groups.iter().map(|g| g.condition).fold(0.0, f64::max)
    }
}

/// Multi-indices of total degree `<= degree` over the coordinates in `free`,
/// ordered by degree.
fn exponents(dim: usize, free: &[bool], degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; dim]];
    let mut layer = vec![vec![0u32; dim]];
    for _ in 0..degree {
        let mut next: Vec<Vec<u32>> = Vec::new();
        for e in &layer {
            // extend only at or after the last nonzero coordinate to avoid repeats
            let start = e.iter().rposition(|&p| p > 0).unwrap_or(0);
            for c in start..dim {
                if free[c] {
                    let mut f = e.clone();
                    f[c] += 1;
                    next.push(f);
                }
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Monomials of total degree `<= degree - 1`, as a prefix count of `exponents`.
fn lower_degree_count(exps: &[Vec<u32>], degree: usize) -> usize {
    exps.iter()
        .take_while(|e| (e.iter().sum::<u32>() as usize) + 1 <= degree)
        .count()
}

struct Design<'a> {
    x: &'a [f64],
    dim: usize,
    rows: &'a [usize],
    flags: Option<&'a [bool]>,
}

impl Design<'_> {
    fn row(&self, r: usize) -> &[f64] {
        let p = self.rows[r];
        &self.x[p * self.dim..(p + 1) * self.dim]
    }

    fn flag(&self, r: usize) -> bool {
        self.flags.is_some_and(|f| f[self.rows[r]])
    }
}

fn fit_group(design: &Design, targets: &[&[f64]], spec: &RegressionSpec, event: Option<bool>) -> Result<(GroupFit, Vec<Vec<f64>>)> {
    let n = design.rows.len();
    let d = design.dim;
    let nt = targets.len();

    let mut center = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for c in 0..d {
        let est = crate::stats::MeanEstimate::from_iter((0..n).map(|r| design.row(r)[c]));
        center[c] = est.mean;
        if est.sd > 1e-12 * (1.0 + est.mean.abs()) {
            scale[c] = est.sd;
        }
    }
    let free: Vec<bool> = (0..d)
        .map(|c| {
            let v0 = design.row(0)[c];
            (0..n).any(|r| design.row(r)[c] != v0)
        })
        .collect();
    let mixed = design.flags.is_some() && {
        let f0 = design.flag(0);
        (0..n).any(|r| design.flag(r) != f0)
    };

    let mut degree = spec.degree;
    let (exps, flagged) = loop {
        let exps = exponents(d, &free, degree);
        let flagged = if mixed {
            if degree == 0 {
                1
            } else {
                lower_degree_count(&exps, degree)
            }
        } else {
            0
        };
        if degree == 0 || n >= MIN_ROWS_PER_FUNCTION * (exps.len() + flagged) {
            break (exps, flagged);
        }
        degree -= 1;
    };

    let mut group = GroupFit {
        event,
        cell: 0,
        rows: n,
        degree,
        center,
        scale,
        exponents: exps,
        flagged,
        coefficients: Vec::new(),
        condition: 1.0,
    };
    let nb = group.n_basis();

    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .step_by(CHUNK)
        .map(|start| {
            let end = (start + CHUNK).min(n);
            let mut gram = vec![0.0; nb * nb];
            let mut rhs = vec![0.0; nb * nt];
            let mut phi = vec![0.0; nb];
            for r in start..end {
                group.basis(design.row(r), design.flag(r), &mut phi);
                for a in 0..nb {
                    for b in a..nb {
                        gram[a * nb + b] += phi[a] * phi[b];
                    }
                    for (t, target) in targets.iter().enumerate() {
                        rhs[a * nt + t] += phi[a] * target[design.rows[r]];
                    }
                }
            }
            (gram, rhs)
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(nb, nb);
    let mut rhs = DMatrix::<f64>::zeros(nb, nt);
    for (g, r) in &partials {
        for a in 0..nb {
            for b in a..nb {
                gram[(a, b)] += g[a * nb + b];
            }
            for t in 0..nt {
                rhs[(a, t)] += r[a * nt + t];
            }
        }
    }
    for a in 0..nb {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
        if a > 0 {
            gram[(a, a)] += spec.ridge * n as f64;
        }
    }

    let eig = SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    group.condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    let cutoff = lmax * 1e-14;
    let vt_rhs = eig.eigenvectors.transpose() * &rhs;
    let mut scaled = vt_rhs;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let inv = if l > cutoff { 1.0 / l } else { 0.0 };
        for t in 0..nt {
            scaled[(j, t)] *= inv;
        }
    }
    let coef = &eig.eigenvectors * scaled;
    group.coefficients = (0..nb).flat_map(|a| (0..nt).map(move |t| (a, t))).map(|(a, t)| coef[(a, t)]).collect();

    let fitted: Vec<Vec<f64>> = {
        let mut out = vec![vec![0.0; n]; nt];
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|r| {
                let mut phi = vec![0.0; nb];
                group.basis(design.row(r), design.flag(r), &mut phi);
                (0..nt)
                    .map(|t| (0..nb).map(|a| phi[a] * group.coefficients[a * nt + t]).sum())
                    .collect()
            })
            .collect();
        for (r, vals) in cols.into_iter().enumerate() {
            for t in 0..nt {
                out[t][r] = vals[t];
            }
        }
        out
    };
    Ok((group, fitted))
}

/// Regression of several targets on the state (and exit flag) at one node.
///
/// `states` holds `dim` values per path. Only paths with `active[p]` take
/// part; fitted values of inactive paths are 0. Returns one fitted vector per
/// target, each of length `n_paths`.
pub fn regress(
    states: &[f64],
    dim: usize,
    flags: Option<&[bool]>,
    active: Option<&[bool]>,
    targets: &[&[f64]],
    spec: &RegressionSpec,
) -> Result<(Vec<Vec<f64>>, NodeFit)> {
    regress_cells(states, dim, flags, active, None, targets, spec)
}

/// [`regress`] with the not-yet-exited rows further split by `cells`.
pub fn regress_cells(
    states: &[f64],
    dim: usize,
    flags: Option<&[bool]>,
    active: Option<&[bool]>,
    cells: Option<&[u32]>,
    targets: &[&[f64]],
    spec: &RegressionSpec,
) -> Result<(Vec<Vec<f64>>, NodeFit)> {
    spec.validate()?;
    let n_paths = states.len() / dim;
    for t in targets {
        if t.len() != n_paths {
            return Err(Error::DimensionMismatch {
                expected: n_paths,
                found: t.len(),
            });
        }
    }
    let rows: Vec<usize> = (0..n_paths).filter(|&p| active.is_none_or(|a| a[p])).collect();
    for t in targets {
        if let Some(&p) = rows.iter().find(|&&p| !t[p].is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "regression target of path {p} is not finite: {}",
                t[p]
            )));
        }
    }
    let groups: Vec<(Option<bool>, u32, Vec<usize>)> = match flags {
        Some(f) if spec.per_event => {
            let (exited, alive): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&p| f[p]);
            let mut by_cell: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for p in alive {
                by_cell.entry(cells.map_or(0, |c| c[p])).or_default().push(p);
            }
            let mut g: Vec<_> = by_cell.into_iter().map(|(c, r)| (Some(false), c, r)).collect();
            g.push((Some(true), 0, exited));
            g
        }
        _ => vec![(None, 0, rows)],
    };
    let mut out = vec![vec![0.0; n_paths]; targets.len()];
    let mut fit = NodeFit::default();
    for (event, cell, rows) in groups {
        if rows.is_empty() {
            continue;
        }
        let design = Design {
            x: states,
            dim,
            rows: &rows,
            flags: if event.is_some() { None } else { flags },
        };
        let (mut group, fitted) = fit_group(&design, targets, spec, event)?;
        group.cell = cell;
        for (t, vals) in fitted.into_iter().enumerate() {
            for (r, v) in vals.into_iter().enumerate() {
                out[t][rows[r]] = v;
            }
        }
        fit.groups.push(group);
    }
    Ok((out, fit))
}

/// Cell of every path at `node` from `reg.boundary_layers`: 0 for the bulk and
/// for exited or inactive paths, otherwise `1 + face * layers + layer`. Layers
/// with too few rows for a full-degree fit are merged outward; what is left
/// joins the bulk. `None` without layers, exit domain, or time to go.
pub fn boundary_cells(paths: &PathBundle, node: usize, active: Option<&[bool]>, reg: &RegressionSpec) -> Option<Vec<u32>> {
    let edges = &reg.boundary_layers;
    let domain = paths.exit_domain()?;
    let grid = paths.grid();
    let tau = grid.horizon() - grid.time(node);
    if edges.is_empty() || tau <= 0.0 {
        return None;
    }
    let n = paths.n_paths();
    let d = paths.dim();
    let t = grid.time(node);
    let flags = paths.exit_flags(node)?;
    let model = paths.model();
    let n_layers = edges.len();
    let mut layered: Vec<Option<(usize, usize)>> = vec![None; n];
    for p in 0..n {
        if flags[p] || active.is_some_and(|a| !a[p]) {
            continue;
        }
        let x = paths.state(node, p);
        let (mut dist, mut face) = (f64::INFINITY, 0);
        for (c, iv) in domain.intervals.iter().enumerate() {
            let (lo, hi) = iv.bounds(t);
            for (side, gap) in [(0, x[c] - lo), (1, hi - x[c])] {
                if gap < dist {
                    dist = gap;
                    face = 2 * c + side;
                }
            }
        }
        let lambda = model.min_ellipticity(x).max(f64::MIN_POSITIVE);
        let r = dist.max(0.0) / (lambda * tau).sqrt();
        let layer = edges.partition_point(|&e| e <= r);
        if layer < n_layers {
            layered[p] = Some((face, layer));
        }
    }
    let all = vec![true; d];
    let min_rows = MIN_ROWS_PER_FUNCTION * exponents(d, &all, reg.degree).len();
    let mut counts = vec![vec![0usize; n_layers]; 2 * d];
    for &(f, l) in layered.iter().flatten() {
        counts[f][l] += 1;
    }
    // layer -> assigned cell per face after merging outward
    let mut assign = vec![vec![0u32; n_layers]; 2 * d];
    for f in 0..2 * d {
        let mut pending = Vec::new();
        let mut acc = 0;
        for l in 0..n_layers {
            pending.push(l);
            acc += counts[f][l];
            if acc >= min_rows {
                let key = 1 + (f * n_layers + l) as u32;
                for &m in &pending {
                    assign[f][m] = key;
                }
                pending.clear();
                acc = 0;
            }
        }
    }
    Some(layered.iter().map(|c| c.map_or(0, |(f, l)| assign[f][l])).collect())
}

/// Fitted `E[target | X_{t_node}, 1{tau <= t_node}]` for every path.
pub fn conditional_expectation(paths: &PathBundle, node: usize, targets: &[f64], reg: &RegressionSpec) -> Result<Vec<f64>> {
    let flags = paths.exit_flags(node);
    let cells = boundary_cells(paths, node, None, reg);
    let (mut fitted, _) = regress_cells(
        paths.node_states(node),
        paths.dim(),
        flags.as_deref(),
        None,
        cells.as_deref(),
        &[targets],
        reg,
    )?;
    Ok(fitted.pop().expect("one target"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::model::ForwardModel;
    use crate::rng::SeedRecord;

    #[test]
    fn exponent_counts() {
        assert_eq!(exponents(1, &[true], 3).len(), 4);
        // C(2+3, 3) = 10
        assert_eq!(exponents(2, &[true, true], 3).len(), 10);
        assert_eq!(exponents(3, &[true, true, true], 2).len(), 10);
        assert_eq!(exponents(2, &[true, false], 3).len(), 4);
        let e = exponents(2, &[true, true], 2);
        assert_eq!(lower_degree_count(&e, 2), 3);
    }

    #[test]
    fn constant_targets_fit_exactly() {
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = vec![2.5; 500];
        let (f, fit) = regress(&x, 1, None, None, &[&y], &RegressionSpec::default()).unwrap();
        assert!(f[0].iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert!(fit.condition() < CONDITION_WARNING);
    }

    #[test]
    fn polynomial_targets_fit_exactly() {
        let x: Vec<f64> = (0..400).map(|i| -2.0 + i as f64 * 0.01).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - v + 0.5 * v * v * v).collect();
        let (f, _) = regress(&x, 1, None, None, &[&y], &RegressionSpec::default()).unwrap();
        for (a, b) in f[0].iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_state_reduces_to_mean() {
        let x = vec![0.5; 100];
        let y: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (f, fit) = regress(&x, 1, None, None, &[&y], &RegressionSpec::default()).unwrap();
        assert!(f[0].iter().all(|v| (v - 49.5).abs() < 1e-10));
        assert_eq!(fit.groups[0].exponents.len(), 1);
    }

    #[test]
    fn ols_preserves_target_mean() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.7).cos() * 2.0).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.exp() + (i % 7) as f64).collect();
        let (f, _) = regress(&x, 1, None, None, &[&y], &RegressionSpec::default()).unwrap();
        let mf: f64 = f[0].iter().sum::<f64>() / 1000.0;
        let my: f64 = y.iter().sum::<f64>() / 1000.0;
        assert!((mf - my).abs() < 1e-10 * my.abs());
    }

    #[test]
    fn per_event_groups_fit_separately() {
        let x: Vec<f64> = (0..400).map(|i| i as f64 / 400.0).collect();
        let flags: Vec<bool> = (0..400).map(|i| i % 2 == 0).collect();
        let y: Vec<f64> = flags.iter().map(|&f| if f { 10.0 } else { 1.0 }).collect();
        let spec = RegressionSpec::default();
        let (f, fit) = regress(&x, 1, Some(&flags), None, &[&y], &spec).unwrap();
        assert_eq!(fit.groups.len(), 2);
        for (a, b) in f[0].iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
        // pooled fit with the indicator column also separates a pure jump
        let pooled = RegressionSpec {
            per_event: false,
            ..spec
        };
        let (f, fit) = regress(&x, 1, Some(&flags), None, &[&y], &pooled).unwrap();
        assert_eq!(fit.groups.len(), 1);
        assert!(fit.groups[0].flagged > 0);
        for (a, b) in f[0].iter().zip(&y) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn inactive_rows_ignored() {
        let x: Vec<f64> = (0..300).map(|i| i as f64).collect();
        let active: Vec<bool> = (0..300).map(|i| i < 200).collect();
        let y: Vec<f64> = (0..300).map(|i| if i < 200 { 1.0 } else { f64::NAN }).collect();
        let (f, _) = regress(&x, 1, None, Some(&active), &[&y], &RegressionSpec::default()).unwrap();
        assert!(f[0][..200].iter().all(|v| (v - 1.0).abs() < 1e-10));
        assert!(f[0][200..].iter().all(|&v| v == 0.0));
        let bad = vec![f64::NAN; 300];
        assert!(regress(&x, 1, None, None, &[&bad], &RegressionSpec::default()).is_err());
    }

    #[test]
    fn small_groups_lower_degree() {
        let x: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let y = x.clone();
        let (_, fit) = regress(&x, 1, None, None, &[&y], &RegressionSpec::default()).unwrap();
        assert!(fit.groups[0].degree < 3);
    }

    #[test]
    fn martingale_projection_of_brownian_terminal() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let n = 20_000;
        let b = crate::paths::simulate_paths(&ForwardModel::brownian(vec![0.0], 0.0, 1.0), &g, n, SeedRecord::new(3)).unwrap();
        let xt: Vec<f64> = (0..n).map(|p| b.state(10, p)[0]).collect();
        let spec = RegressionSpec {
            degree: 1,
            ..Default::default()
        };
        let fitted = conditional_expectation(&b, 5, &xt, &spec).unwrap();
        // slope 1 and intercept 0 up to sampling noise of the residual W_T - W_t (variance 0.5)
        let xs: Vec<f64> = (0..n).map(|p| b.state(5, p)[0]).collect();
        let slope = crate::stats::ls_slope(&xs, &fitted);
        let se = (0.5 / (n as f64 * 0.5)).sqrt();
        assert!((slope - 1.0).abs() < 3.0 * se, "slope {slope}");
    }

    #[test]
    fn gaussian_second_moment_oracle() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let n = 100_000;
        let b = crate::paths::simulate_paths(&ForwardModel::brownian(vec![0.0], 0.0, 1.0), &g, n, SeedRecord::new(5)).unwrap();
        let sq: Vec<f64> = (0..n).map(|p| b.state(10, p)[0].powi(2)).collect();
        let spec = RegressionSpec {
            degree: 2,
            ..Default::default()
        };
        let node = 5;
        let (_, fit) = regress(b.node_states(node), 1, None, None, &[&sq], &spec).unwrap();
        let gfit = &fit.groups[0];
        let mut phi = vec![0.0; gfit.n_basis()];
        for j in 0..=40 {
            let x = -1.0 + j as f64 * 0.05;
            gfit.basis(&[x], false, &mut phi);
            let v: f64 = phi.iter().zip(&gfit.coefficients).map(|(a, c)| a * c).sum();
            assert!((v - (x * x + 0.5)).abs() < 0.05, "x={x} v={v}");
        }
    }
}

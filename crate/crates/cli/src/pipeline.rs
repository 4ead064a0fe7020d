use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bsdelab_core::backward::{minimal_supersolution_ladder, BackwardSolution, LadderResult};
use bsdelab_core::density::{
    bm_survival_series, density_bound_near_t, density_mc, survival_pde, DensityBound, DensityEstimate,
};
use bsdelab_core::domain::{Curve, DomainFlow};
use bsdelab_core::driver::y_infinity;
use bsdelab_core::model::ModelPreset;
use bsdelab_core::paths::{detect_exit, empirical_exit_cdf, simulate_paths_with, PathBundle, SimOptions};
use bsdelab_core::rng::SeedRecord;
use bsdelab_core::singular::{
    apriori_bound, continuity_profile, integrability_check_xi1, pasted_solution_xi1, sandwich_xi1,
    upper_bound_process_xi1, xi2_sandwich, AprioriBoundParams, ContinuityProfile, Event, IntegrabilityReport,
    SandwichReport,
};
use bsdelab_core::stats::combined;
use bsdelab_core::terminal::TerminalKind;
use bsdelab_core::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Pipeline};
use crate::manifest::{FileEntry, Manifest};
use crate::RunError;

/// Image-series check on the PDE survival at the horizon.
pub const SERIES_TOLERANCE: f64 = 1e-3;
pub const MASS_BALANCE_TOLERANCE: f64 = 1e-3;
pub const MC_PDE_TOLERANCE: f64 = 0.05;
pub const BOUND_STABILITY: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Failing gating checks turn the exit status to 4.
    pub gating: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Default)]
struct Checks(Vec<CheckResult>);

impl Checks {
    fn gate(&mut self, name: &str, passed: bool, value: f64, threshold: f64, detail: impl Into<String>) {
        self.push(name, passed, true, value, threshold, detail.into());
    }

    fn report(&mut self, name: &str, passed: bool, value: f64, threshold: f64, detail: impl Into<String>) {
        self.push(name, passed, false, value, threshold, detail.into());
    }

    fn push(&mut self, name: &str, passed: bool, gating: bool, value: f64, threshold: f64, detail: String) {
        self.0.push(CheckResult {
            name: name.into(),
            passed,
            gating,
            value,
            threshold,
            detail,
        });
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub checks: Vec<CheckResult>,
}

impl Outcome {
    pub fn status(&self) -> i32 {
        self.manifest.status
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, RunError> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), RunError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(self.create(name)?);
        w.write_record(header).map_err(Error::from)?;
        for row in rows {
            w.write_record(&row).map_err(Error::from)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the configured pipeline, writing every artifact and `manifest.json` into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, RunError> {
    let report = config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut art = Artifacts {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    // the output directory is not part of the experiment
    let mut stored = config.clone();
    stored.output = PathBuf::new();
    let config_json = stored.to_json();
    art.json("config.json", &stored)?;
    art.json("validation.json", &report)?;

    let mut checks = Checks::default();
    let paths = simulate(config)?;
    let pipeline = config.pipeline;
    if pipeline == Pipeline::Simulate {
        write_paths(config, &paths, &mut art)?;
    } else {
        let needs_density = matches!(
            pipeline,
            Pipeline::Density | Pipeline::BoundCheck | Pipeline::VerifyAll
        ) || (pipeline == Pipeline::Continuity && matches!(config.terminal.kind, TerminalKind::Xi1 { .. }));
        let ladder = match pipeline {
            Pipeline::Density => None,
            _ => Some(solve_stage(config, &paths, &mut art, &mut checks)?),
        };
        let bound = if needs_density {
            density_stage(config, &paths, &mut art, &mut checks)?
        } else {
            None
        };
        let integrability = match (&config.terminal.kind, bound) {
            (TerminalKind::Xi1 { .. }, Some(b)) if pipeline != Pipeline::Density => {
                let rep = integrability_check_xi1(&config.driver, config.driver.ell, b.value);
                checks.gate(
                    "integrability",
                    rep.passed,
                    rep.kappa_min,
                    1.0,
                    format!("{}; density bound {:.4}", rep.reason, b.value),
                );
                art.json("integrability.json", &rep)?;
                Some(rep)
            }
            _ => None,
        };
        if let Some(ladder) = &ladder {
            if matches!(pipeline, Pipeline::BoundCheck | Pipeline::VerifyAll) {
                bound_stage(config, ladder, &mut art, &mut checks)?;
            }
            if matches!(pipeline, Pipeline::Continuity | Pipeline::VerifyAll) {
                continuity_stage(config, &paths, ladder, integrability.as_ref(), &mut art, &mut checks)?;
            }
        }
    }
    art.json("checks.json", &checks.0)?;

    let failed = checks.0.iter().any(|c| c.gating && !c.passed);
    let mut files: Vec<FileEntry> = art
        .files
        .iter()
        .map(|name| {
            let bytes = std::fs::read(out_dir.join(name))?;
            Ok(FileEntry {
                path: name.clone(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len(),
            })
        })
        .collect::<Result<_, std::io::Error>>()?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        pipeline: pipeline.name().into(),
        name: config.name.clone(),
        seed: config.mc.seed,
        n_paths: config.mc.n_paths,
        config_sha256: sha256_hex(config_json.as_bytes()),
        files,
        status: if failed { 4 } else { 0 },
    };
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(Outcome {
        out_dir: out_dir.to_path_buf(),
        manifest,
        checks: checks.0,
    })
}

fn simulate(config: &ExperimentConfig) -> Result<PathBundle, RunError> {
    let grid = config.time_grid()?;
    let opts = SimOptions {
        store_increments: config.mc.store_increments,
        ..SimOptions::default()
    };
    let paths = simulate_paths_with(&config.model, &grid, config.mc.n_paths, SeedRecord::new(config.mc.seed), &opts)?;
    Ok(match config.terminal.domain() {
        Some(domain) => detect_exit(paths, domain, config.mc.bridge_correction)?,
        None => paths,
    })
}

fn write_paths(config: &ExperimentConfig, paths: &PathBundle, art: &mut Artifacts) -> Result<(), RunError> {
    let mut w = art.create("paths.csv")?;
    paths.write_csv(&mut w, Some(config.mc.csv_paths))?;
    w.flush()?;
    if paths.has_exit_times() {
        let horizon = paths.grid().horizon();
        let s: Vec<f64> = (0..=100).map(|i| horizon * i as f64 / 100.0).collect();
        let cdf = empirical_exit_cdf(paths, &s)?;
        art.csv(
            "exit_cdf.csv",
            &["s", "probability", "stderr"],
            cdf.iter().map(|c| vec![num(c.s), num(c.prob), num(c.stderr)]),
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LevelDiagnostics {
    k: f64,
    max_condition: f64,
    max_iterations: usize,
    warnings: usize,
    first_warnings: Vec<String>,
}

fn solve_stage(
    config: &ExperimentConfig,
    paths: &PathBundle,
    art: &mut Artifacts,
    checks: &mut Checks,
) -> Result<LadderResult, RunError> {
    let ladder = minimal_supersolution_ladder(paths, &config.driver, &config.terminal, &config.regression)?;
    if ladder.successful().next().is_none() {
        let first = ladder
            .solutions
            .iter()
            .find_map(|s| s.as_ref().err())
            .map(|e| e.to_string())
            .unwrap_or_default();
        return Err(RunError::Numerical(Error::InvalidParameter(format!(
            "every ladder level failed; first error: {first}"
        ))));
    }
    let rows = ladder.levels.iter().zip(&ladder.solutions).map(|(k, s)| match s {
        Ok(sol) => vec![num(*k), num(sol.y0()), num(sol.y0_stderr()), "ok".into()],
        Err(e) => vec![num(*k), String::new(), String::new(), e.to_string()],
    });
    art.csv("ladder.csv", &["k", "y0", "y0_stderr", "status"], rows)?;
    for sol in ladder.successful() {
        let mut w = art.create(&format!("solution_k{}.csv", sol.k))?;
        sol.write_summary_csv(paths, &mut w)?;
        w.flush()?;
    }
    art.json("extrapolation.json", &ExtrapolationOut::from(&ladder))?;
    let diags: Vec<LevelDiagnostics> = ladder
        .successful()
        .map(|s| LevelDiagnostics {
            k: s.k,
            max_condition: s.diagnostics.condition.iter().copied().fold(0.0, f64::max),
            max_iterations: s.diagnostics.iterations.iter().copied().max().unwrap_or(0),
            warnings: s.diagnostics.warnings.len(),
            first_warnings: s.diagnostics.warnings.iter().take(10).cloned().collect(),
        })
        .collect();
    art.json("diagnostics.json", &diags)?;

    let ok: Vec<&BackwardSolution> = ladder.successful().collect();
    let worst = ok
        .windows(2)
        .map(|w| w[1].y0() - w[0].y0() + 2.0 * combined(w[0].y0_stderr(), w[1].y0_stderr()))
        .fold(f64::INFINITY, f64::min);
    let failures = ladder.solutions.iter().filter(|s| s.is_err()).count();
    checks.gate(
        "ladder_monotone",
        worst >= 0.0 || ok.len() < 2,
        worst,
        0.0,
        "smallest Y0(k') - Y0(k) + 2 se over consecutive levels",
    );
    checks.gate(
        "ladder_levels_solved",
        failures == 0,
        failures as f64,
        0.0,
        "ladder levels that failed",
    );
    Ok(ladder)
}

#[derive(Serialize)]
struct ExtrapolationOut {
    value: f64,
    beta: f64,
    stderr: f64,
    fitted: bool,
    levels: Vec<f64>,
    y0: Vec<f64>,
}

impl From<&LadderResult> for ExtrapolationOut {
    fn from(l: &LadderResult) -> Self {
        Self {
            value: l.extrapolation.value,
            beta: l.extrapolation.beta,
            stderr: l.extrapolation.stderr,
            fitted: l.extrapolation.fitted,
            levels: l.successful().map(|s| s.k).collect(),
            y0: l.successful().map(|s| s.y0()).collect(),
        }
    }
}

fn pde_capable(config: &ExperimentConfig, domain: &DomainFlow) -> bool {
    config.pde.is_some() && config.model.dim == 1 && domain.dim() == 1 && config.model.jump.is_none()
}

fn is_standard_bm(config: &ExperimentConfig) -> bool {
    let m = &config.model;
    m.dim == 1
        && m.preset == ModelPreset::Bm
        && m.jump.is_none()
        && m.drift_const.iter().all(|&v| v == 0.0)
        && m.drift_linear.iter().all(|&v| v == 0.0)
        && m.diffusion_const == [1.0]
        && m.diffusion_linear.iter().all(|&v| v == 0.0)
}

fn fixed_bounds(domain: &DomainFlow) -> Option<(f64, f64)> {
    match domain.intervals.as_slice() {
        [iv] => match (iv.lower, iv.upper) {
            (Curve::Constant { value: a }, Curve::Constant { value: b }) => Some((a, b)),
            _ => None,
        },
        _ => None,
    }
}

#[derive(Serialize)]
struct BoundOut {
    window: f64,
    method: &'static str,
    bound: DensityBound,
    bound_doubled: Option<DensityBound>,
    relative_change: Option<f64>,
}

/// Densities of the exit time; returns the density bound near `T`.
fn density_stage(
    config: &ExperimentConfig,
    paths: &PathBundle,
    art: &mut Artifacts,
    checks: &mut Checks,
) -> Result<Option<DensityBound>, RunError> {
    let Some(domain) = config.terminal.domain() else {
        checks.report("density", true, f64::NAN, f64::NAN, "skipped: terminal has no exit domain");
        return Ok(None);
    };
    let horizon = domain.horizon;
    let points = config.pde.as_ref().map_or(101, |p| p.points);
    let bandwidth = config.pde.as_ref().map_or(0.05, |p| p.bandwidth);
    let window = config.pde.as_ref().map_or(0.2, |p| p.window);
    let s_grid: Vec<f64> = (0..points).map(|i| horizon * i as f64 / (points - 1) as f64).collect();
    let mc = match density_mc(paths, bandwidth, &s_grid) {
        Ok(m) => Some(m),
        Err(Error::TooFewExits(n)) => {
            checks.report("density_mc", false, n as f64, 1e3, "too few exits for a kernel density");
            None
        }
        Err(e) => return Err(e.into()),
    };

    let pde = if pde_capable(config, domain) {
        let grid = config.pde.as_ref().expect("checked").grid;
        let x0 = config.model.x0[0];
        let fine = survival_pde(&config.model, domain, (x0, 0.0), &grid)?;
        let doubled = survival_pde(&config.model, domain, (x0, 0.0), &grid.doubled())?;
        Some((fine, doubled))
    } else {
        checks.report(
            "density_pde",
            true,
            f64::NAN,
            f64::NAN,
            "skipped: PDE route needs a one-dimensional model without jumps",
        );
        None
    };

    let mut w = art.create("density.csv")?;
    let mut header = true;
    if let Some((fine, _)) = &pde {
        fine.write_csv(&mut w, header)?;
        header = false;
    }
    if let Some(m) = &mc {
        m.write_csv(&mut w, header)?;
    }
    w.flush()?;

    let bound = if let Some((fine, doubled)) = &pde {
        pde_checks(config, domain, fine, mc.as_ref(), checks)?;
        let b1 = density_bound_near_t(fine, window);
        let b2 = density_bound_near_t(doubled, window);
        let rel = (b2.value - b1.value).abs() / b2.value.abs().max(f64::MIN_POSITIVE);
        checks.gate(
            "density_bound_stable",
            rel <= BOUND_STABILITY,
            rel,
            BOUND_STABILITY,
            format!("sup of the density on [T-{window}, T] under grid doubling"),
        );
        art.json(
            "density_bound.json",
            &BoundOut {
                window,
                method: "PDE",
                bound: b1,
                bound_doubled: Some(b2),
                relative_change: Some(rel),
            },
        )?;
        Some(b2)
    } else if let Some(m) = &mc {
        let b = density_bound_near_t(m, window);
        art.json(
            "density_bound.json",
            &BoundOut {
                window,
                method: "MC",
                bound: b,
                bound_doubled: None,
                relative_change: None,
            },
        )?;
        Some(b)
    } else {
        None
    };
    Ok(bound)
}

fn pde_checks(
    config: &ExperimentConfig,
    domain: &DomainFlow,
    pde: &DensityEstimate,
    mc: Option<&DensityEstimate>,
    checks: &mut Checks,
) -> Result<(), RunError> {
    let horizon = domain.horizon;
    let balance = pde.mass_balance();
    checks.gate(
        "density_mass_balance",
        balance <= MASS_BALANCE_TOLERANCE,
        balance,
        MASS_BALANCE_TOLERANCE,
        "max |S(s) + int f - 1| on the PDE grid",
    );
    if !pde.warnings.is_empty() {
        checks.report("density_pde_cfl", false, pde.cfl, 1e3, pde.warnings.join("; "));
    }
    if let Some(m) = mc {
        let diff = m
            .s
            .iter()
            .zip(&m.density)
            .filter(|(&s, _)| s >= 0.5 * horizon)
            .map(|(&s, &f)| (f - pde.density_at(s)).abs())
            .fold(0.0, f64::max);
        checks.gate(
            "density_mc_vs_pde",
            diff <= MC_PDE_TOLERANCE,
            diff,
            MC_PDE_TOLERANCE,
            "max |f_MC - f_PDE| on [T/2, T]",
        );
    }
    if let (true, Some((a, b))) = (is_standard_bm(config), fixed_bounds(domain)) {
        let x0 = config.model.x0[0];
        let series = bm_survival_series(a, b, x0, horizon, 10)?;
        let s_pde = *pde.survival.last().expect("nonempty");
        let err = (s_pde - series).abs();
        checks.gate(
            "density_series_oracle",
            err <= SERIES_TOLERANCE,
            err,
            SERIES_TOLERANCE,
            format!("PDE S(T) = {s_pde:.6}, image series {series:.6}"),
        );
    }
    Ok(())
}

fn bound_stage(
    config: &ExperimentConfig,
    ladder: &LadderResult,
    art: &mut Artifacts,
    checks: &mut Checks,
) -> Result<(), RunError> {
    let params = AprioriBoundParams::new(config.driver.ell, config.checks.ell_prime.unwrap_or(config.driver.ell));
    let slack = config.checks.bound_slack;
    let mut rows = Vec::new();
    let mut violations = 0usize;
    let mut worst: f64 = 0.0;
    for sol in ladder.successful() {
        for node in 0..sol.end_node() {
            let t = sol.times[node];
            let horizon = *sol.times.last().expect("nonempty");
            let bound = match apriori_bound(&config.driver, &params, t, horizon) {
                Ok(b) => b,
                Err(e) => {
                    checks.report("apriori_bound", true, f64::NAN, f64::NAN, format!("skipped: {e}"));
                    return Ok(());
                }
            };
            let max_y = sol.y(node).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ratio = max_y / bound;
            worst = worst.max(ratio);
            if max_y > bound * (1.0 + slack) {
                violations += 1;
            }
            rows.push(vec![num(sol.k), node.to_string(), num(t), num(max_y), num(bound), num(ratio)]);
        }
    }
    art.csv("apriori.csv", &["k", "node_index", "t", "max_Y", "bound", "ratio"], rows)?;
    checks.gate(
        "apriori_bound",
        violations == 0,
        worst,
        1.0 + slack,
        format!("{violations} node/level pairs above the bound with {slack} slack; value is the worst ratio"),
    );
    Ok(())
}

fn sandwich_rows(report: &SandwichReport, label: f64, rows: &mut Vec<Vec<String>>) {
    for level in &report.levels {
        for n in &level.nodes {
            rows.push(vec![
                num(label),
                num(level.k),
                n.node.to_string(),
                num(n.t),
                n.n_paths.to_string(),
                num(n.mean_lower),
                num(n.mean_upper),
                num(n.margin),
                n.pathwise_excess.to_string(),
                n.negative.to_string(),
            ]);
        }
    }
}

const SANDWICH_HEADER: [&str; 10] = [
    "upper",
    "k",
    "node_index",
    "t",
    "n_paths",
    "mean_lower",
    "mean_upper",
    "margin",
    "pathwise_excess",
    "negative",
];

fn write_profiles(art: &mut Artifacts, profiles: &[&ContinuityProfile]) -> Result<(), RunError> {
    let mut w = art.create("continuity.csv")?;
    for (i, p) in profiles.iter().enumerate() {
        p.write_csv(&mut w, i == 0)?;
    }
    w.flush()?;
    Ok(())
}

/// Construction errors that mean "this check does not apply", not a failed run.
fn inapplicable(e: &Error) -> bool {
    matches!(e, Error::NotPurePower(_) | Error::Unsupported(_) | Error::Integrability(_))
}

#[derive(Serialize)]
struct PastingOut {
    pasted_y0: f64,
    pasted_stderr: f64,
    extrapolated_y0: f64,
    extrapolated_stderr: f64,
    difference: f64,
    tolerance: f64,
    post_exit_nodes_checked: usize,
    post_exit_mismatches: usize,
}

fn continuity_stage(
    config: &ExperimentConfig,
    paths: &PathBundle,
    ladder: &LadderResult,
    integrability: Option<&IntegrabilityReport>,
    art: &mut Artifacts,
    checks: &mut Checks,
) -> Result<(), RunError> {
    let largest = ladder.largest().expect("ladder has a solution");
    let deltas = &config.checks.deltas;
    let horizon = paths.grid().horizon();
    let pure = config.driver.is_pure_power();
    match &config.terminal.kind {
        TerminalKind::Bounded { .. } => {
            checks.report("continuity", true, f64::NAN, f64::NAN, "skipped: bounded terminal");
        }
        TerminalKind::Xi1 { .. } => {
            let survival = continuity_profile(paths, largest, Event::Survival, deltas)?;
            let exit = continuity_profile(paths, largest, Event::Exit, deltas)?;
            let mut profiles = vec![survival.clone(), exit];
            if pure {
                let cap = 0.1 * y_infinity(&config.driver, deltas[0])?;
                let last = survival.last().mean;
                let decreasing = survival.decreasing_within(2.0);
                checks.gate(
                    "xi1_continuity",
                    decreasing && last <= cap,
                    last,
                    cap,
                    format!("mean of Y^(k={}) on tau>T at T-delta; decreasing within 2 se: {decreasing}", largest.k),
                );
            }
            let upper = match integrability {
                Some(rep) => match upper_bound_process_xi1(paths, &config.driver, &config.regression, rep) {
                    Ok(u) => Some(u),
                    Err(e) if inapplicable(&e) => {
                        checks.report("xi1_sandwich", true, f64::NAN, f64::NAN, format!("skipped: {e}"));
                        None
                    }
                    Err(e) => return Err(e.into()),
                },
                None => None,
            };
            if let Some(upper) = &upper {
                let report = sandwich_xi1(paths, ladder.successful(), upper)?;
                let worst = report.levels.iter().map(|l| l.worst_margin).fold(f64::INFINITY, f64::min);
                let violations: usize = report.levels.iter().map(|l| l.violations).sum();
                checks.gate(
                    "xi1_sandwich",
                    report.passed,
                    worst,
                    0.0,
                    format!("{violations} node/level violations of 0 <= Y^(k) <= Y^(inf,u) + 2 se"),
                );
                let mut rows = Vec::new();
                sandwich_rows(&report, upper.k, &mut rows);
                art.csv("sandwich.csv", &SANDWICH_HEADER, rows)?;
                let u_profile = continuity_profile(paths, upper, Event::Survival, deltas)?;
                let ratio = u_profile.last().mean / u_profile.points[0].mean;
                checks.report(
                    "xi1_upper_decay",
                    ratio <= 0.05,
                    ratio,
                    0.05,
                    "ratio of the upper-process mean on tau>T at the smallest and largest delta",
                );
                profiles.push(u_profile);
            }
            write_profiles(art, &profiles.iter().collect::<Vec<_>>())?;

            match pasted_solution_xi1(paths, &config.driver, &config.regression) {
                Ok(pasted) => pasting_checks(config, paths, ladder, &pasted, art, checks)?,
                Err(e) if inapplicable(&e) => {
                    checks.report("pasting", true, f64::NAN, f64::NAN, format!("skipped: {e}"));
                }
                Err(e) => return Err(e.into()),
            }
        }
        TerminalKind::Xi2 { .. } => {
            let margin = config.checks.exit_margin;
            let exit = continuity_profile(paths, largest, Event::ExitBy { t: horizon - margin }, deltas)?;
            let survival = continuity_profile(paths, largest, Event::Survival, deltas)?;
            write_profiles(art, &[&exit, &survival])?;
            if pure {
                let cap = 0.05 * y_infinity(&config.driver, margin)?;
                let last = exit.last().mean;
                let decreasing = exit.decreasing_within(2.0);
                checks.gate(
                    "xi2_continuity",
                    decreasing && last <= cap,
                    last,
                    cap,
                    format!(
                        "mean of Y^(k={}) on tau<=T-{margin} at T-delta; decreasing within 2 se: {decreasing}",
                        largest.k
                    ),
                );
            }
            let t_n = if config.checks.xi2_t_n.is_empty() {
                (0..5).map(|j| horizon - 0.2 * horizon * 0.5f64.powi(j)).collect()
            } else {
                config.checks.xi2_t_n.clone()
            };
            match xi2_sandwich(paths, &config.driver, ladder, &t_n, &config.regression) {
                Ok((report, _)) => {
                    let mut rows = Vec::new();
                    for (s, u) in report.sandwich.iter().zip(&report.uppers) {
                        sandwich_rows(s, u.t_n, &mut rows);
                    }
                    art.csv("sandwich.csv", &SANDWICH_HEADER, rows)?;
                    let total: usize = report.monotonicity_violations.iter().sum();
                    checks.gate(
                        "xi2_upper_decreasing",
                        report.decreasing,
                        total as f64,
                        0.0,
                        "nodes where Y^(inf,u,n+1) exceeds Y^(inf,u,n) by more than 2 se",
                    );
                    checks.gate(
                        "xi2_upper_dominates",
                        report.dominates,
                        report.sandwich.iter().filter(|s| !s.passed).count() as f64,
                        0.0,
                        "upper processes with a ladder level above them beyond 2 se",
                    );
                    #[derive(Serialize)]
                    struct Xi2Out<'a> {
                        uppers: &'a [bsdelab_core::singular::Xi2Upper],
                        monotonicity_violations: &'a [usize],
                        decreasing: bool,
                        dominates: bool,
                    }
                    art.json(
                        "xi2.json",
                        &Xi2Out {
                            uppers: &report.uppers,
                            monotonicity_violations: &report.monotonicity_violations,
                            decreasing: report.decreasing,
                            dominates: report.dominates,
                        },
                    )?;
                }
                Err(e) if inapplicable(&e) => {
                    checks.report("xi2_sandwich", true, f64::NAN, f64::NAN, format!("skipped: {e}"));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(())
}

fn pasting_checks(
    config: &ExperimentConfig,
    paths: &PathBundle,
    ladder: &LadderResult,
    pasted: &BackwardSolution,
    art: &mut Artifacts,
    checks: &mut Checks,
) -> Result<(), RunError> {
    let ex = &ladder.extrapolation;
    let difference = pasted.y0() - ex.value;
    let tolerance = 3.0 * combined(pasted.y0_stderr(), ex.stderr);
    checks.gate(
        "pasting_agreement",
        difference.abs() <= tolerance,
        difference,
        tolerance,
        "pasted Y0 minus the ladder extrapolation, against 3 combined se",
    );
    let grid = paths.grid();
    let last = grid.steps();
    let mut checked = 0;
    let mut mismatches = 0;
    for p in 0..paths.n_paths() {
        let Some(first) = paths.first_exit_node(p) else { continue };
        for node in first.max(1)..last {
            let expected = y_infinity(&config.driver, grid.horizon() - grid.time(node))?;
            checked += 1;
            if pasted.y(node)[p].to_bits() != expected.to_bits() {
                mismatches += 1;
            }
        }
    }
    checks.gate(
        "pasting_post_exit_exact",
        mismatches == 0,
        mismatches as f64,
        0.0,
        format!("{checked} post-exit node values compared bit for bit with y_infinity"),
    );
    art.json(
        "pasting.json",
        &PastingOut {
            pasted_y0: pasted.y0(),
            pasted_stderr: pasted.y0_stderr(),
            extrapolated_y0: ex.value,
            extrapolated_stderr: ex.stderr,
            difference,
            tolerance,
            post_exit_nodes_checked: checked,
            post_exit_mismatches: mismatches,
        },
    )?;
    Ok(())
}

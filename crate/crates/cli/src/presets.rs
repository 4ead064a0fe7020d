use std::path::PathBuf;

use bsdelab_core::density::PdeGrid;
use bsdelab_core::domain::{Curve, DomainFlow, MovingInterval};
use bsdelab_core::driver::DriverDescriptor;
use bsdelab_core::grid::GridSpec;
use bsdelab_core::model::{ForwardModel, JumpSpec, MarkLaw};
use bsdelab_core::regression::RegressionSpec;
use bsdelab_core::terminal::TerminalDescriptor;

use crate::config::{CheckConfig, ExperimentConfig, McConfig, PdeConfig, Pipeline};
use crate::RunError;

pub const PRESETS: [&str; 4] = [
    "paper-xi1-q3",
    "paper-xi2-q2",
    "moving-domain-density",
    "jump-poisson-xi1",
];

fn powers_of_two(max_exp: i32) -> Vec<f64> {
    (0..=max_exp).map(|j| 2f64.powi(j)).collect()
}

/// Local fits in the boundary layer: the value near an absorbing boundary
/// changes on the scale `sqrt(T - t)`, which one global polynomial cannot follow.
fn layered_regression() -> RegressionSpec {
    RegressionSpec {
        degree: 2,
        boundary_layers: vec![0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0],
        ..RegressionSpec::default()
    }
}

fn pde() -> PdeConfig {
    PdeConfig {
        grid: PdeGrid { m: 401, n_time: 2000 },
        window: 0.2,
        bandwidth: 0.05,
        points: 101,
    }
}

fn unit_interval() -> DomainFlow {
    DomainFlow::interval(-1.0, 1.0, 1.0).expect("valid interval")
}

pub fn preset(name: &str) -> Result<ExperimentConfig, RunError> {
    let bm = ForwardModel::brownian(vec![0.0], 0.0, 1.0);
    let grid = GridSpec {
        horizon: 1.0,
        steps: 200,
        refinement: 2.0,
    };
    let config = match name {
        "paper-xi1-q3" => ExperimentConfig {
            name: name.into(),
            model: bm,
            driver: DriverDescriptor::power(3.0, 10.0),
            terminal: TerminalDescriptor::xi1(unit_interval(), powers_of_two(6)),
            grid: grid.clone(),
            mc: McConfig {
                n_paths: 100_000,
                seed: 31_415,
                bridge_correction: true,
                store_increments: false,
                csv_paths: 200,
            },
            regression: layered_regression(),
            pde: Some(pde()),
            checks: CheckConfig::default(),
            pipeline: Pipeline::VerifyAll,
            output: PathBuf::from("out/paper-xi1-q3"),
        },
        "paper-xi2-q2" => ExperimentConfig {
            name: name.into(),
            model: bm,
            driver: DriverDescriptor::power(2.0, 10.0),
            terminal: TerminalDescriptor::xi2(unit_interval(), powers_of_two(6)),
            // the upper processes start from y_inf(T - t_n), which implicit
            // Euler overshoots on the coarser grid once t_n is close to T
            grid: GridSpec { steps: 400, ..grid.clone() },
            mc: McConfig {
                n_paths: 50_000,
                seed: 27_182,
                bridge_correction: true,
                store_increments: false,
                csv_paths: 200,
            },
            regression: layered_regression(),
            pde: Some(pde()),
            checks: CheckConfig {
                xi2_t_n: (0..5).map(|j| 1.0 - 0.2 * 0.5f64.powi(j)).collect(),
                ..CheckConfig::default()
            },
            pipeline: Pipeline::VerifyAll,
            output: PathBuf::from("out/paper-xi2-q2"),
        },
        "moving-domain-density" => {
            let domain = DomainFlow::new(
                vec![MovingInterval {
                    lower: Curve::constant(-1.0),
                    upper: Curve::linear(1.0, -0.5),
                }],
                1.0,
            )
            .expect("valid moving interval");
            ExperimentConfig {
                name: name.into(),
                model: bm,
                driver: DriverDescriptor::power(3.0, 10.0),
                terminal: TerminalDescriptor::xi1(domain, powers_of_two(3)),
                grid,
                mc: McConfig {
                    n_paths: 100_000,
                    seed: 16_180,
                    bridge_correction: true,
                    store_increments: false,
                    csv_paths: 200,
                },
                regression: layered_regression(),
                pde: Some(pde()),
                checks: CheckConfig::default(),
                pipeline: Pipeline::Density,
                output: PathBuf::from("out/moving-domain-density"),
            }
        }
        "jump-poisson-xi1" => {
            let jumps = JumpSpec {
                intensity: 1.0,
                mark_law: MarkLaw::Gaussian {
                    mean: vec![0.0],
                    sd: vec![0.3],
                },
                weight: 1.0,
            };
            ExperimentConfig {
                name: name.into(),
                model: bm.with_jumps(jumps),
                driver: DriverDescriptor::power(3.0, 10.0),
                terminal: TerminalDescriptor::xi1(unit_interval(), powers_of_two(4)),
                grid,
                mc: McConfig {
                    n_paths: 20_000,
                    seed: 14_142,
                    bridge_correction: true,
                    store_increments: true,
                    csv_paths: 200,
                },
                regression: layered_regression(),
                pde: None,
                checks: CheckConfig::default(),
                pipeline: Pipeline::Solve,
                output: PathBuf::from("out/jump-poisson-xi1"),
            }
        }
        other => {
            return Err(RunError::Config(format!(
                "unknown preset `{other}`; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            let config = preset(name).unwrap();
            config.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let back = ExperimentConfig::from_json(&config.to_json()).unwrap();
            assert_eq!(back, config);
        }
    }

    #[test]
    fn unknown_preset_lists_registry() {
        let msg = preset("nonexistent").unwrap_err().to_string();
        for name in PRESETS {
            assert!(msg.contains(name));
        }
    }

    #[test]
    fn xi1_preset_runs_everything() {
        assert_eq!(preset("paper-xi1-q3").unwrap().pipeline, Pipeline::VerifyAll);
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time discretization of `[0, T]`, refined toward the horizon.
///
/// Node `i` sits at `T * (1 - (1 - i/N)^gamma)`. With `gamma = 1` the grid is
/// uniform; larger exponents pack nodes near `T`, where solutions driven by a
/// singular terminal value blow up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct TimeGrid {
    horizon: f64,
    refinement: f64,
    nodes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub horizon: f64,
    pub steps: usize,
    #[serde(default = "default_refinement")]
    pub refinement: f64,
}

fn default_refinement() -> f64 {
    2.0
}

impl TryFrom<GridSpec> for TimeGrid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        TimeGrid::refined(spec.horizon, spec.steps, spec.refinement)
    }
}

impl From<TimeGrid> for GridSpec {
    fn from(grid: TimeGrid) -> Self {
        GridSpec {
            horizon: grid.horizon,
            steps: grid.steps(),
            refinement: grid.refinement,
        }
    }
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        Self::refined(horizon, steps, 1.0)
    }

    pub fn refined(horizon: f64, steps: usize, refinement: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("grid needs at least one step".into()));
        }
        if !(refinement >= 1.0 && refinement.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "refinement exponent must be >= 1, got {refinement}"
            )));
        }
        let n = steps as f64;
        let mut nodes: Vec<f64> = (0..=steps)
            .map(|i| horizon * (1.0 - (1.0 - i as f64 / n).powf(refinement)))
            .collect();
        nodes[0] = 0.0;
        nodes[steps] = horizon;
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "grid nodes are not strictly increasing (too many steps for the refinement)".into(),
            ));
        }
        Ok(Self {
            horizon,
            refinement,
            nodes,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn refinement(&self) -> f64 {
        self.refinement
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn time(&self, node: usize) -> f64 {
        self.nodes[node]
    }

    pub fn step(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn max_step(&self) -> f64 {
        (0..self.steps()).map(|i| self.step(i)).fold(0.0, f64::max)
    }

    /// Index of the node closest to `t`; ties go to the earlier node.
    pub fn nearest_node(&self, t: f64) -> usize {
        let mut best = 0;
        let mut best_gap = f64::INFINITY;
        for (i, &node) in self.nodes.iter().enumerate() {
            let gap = (node - t).abs();
            if gap < best_gap {
                best = i;
                best_gap = gap;
            }
        }
        best
    }

    /// Index of the step `(t_i, t_{i+1}]` containing `t`, for `t` in `(0, T]`.
    pub fn step_containing(&self, t: f64) -> usize {
        let idx = self.nodes.partition_point(|&node| node < t);
        idx.saturating_sub(1).min(self.steps() - 1)
    }

    /// First node index with `t_i >= t`, if any.
    pub fn first_node_at_or_after(&self, t: f64) -> Option<usize> {
        let idx = self.nodes.partition_point(|&node| node < t);
        (idx < self.nodes.len()).then_some(idx)
    }

    pub fn is_valid(&self) -> bool {
        self.nodes.windows(2).all(|w| w[1] > w[0])
            && self.nodes.last() == Some(&self.horizon)
            && self.max_step() <= self.horizon
    }
}

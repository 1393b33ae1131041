use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};

/// Uniform time grid on [0, T] with `steps` intervals and `steps + 1` nodes.
///
/// States (price, emissions, bank) live on nodes; rates (production,
/// abatement, trade) are piecewise constant on intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        require_positive("horizon", horizon)?;
        if steps < 2 {
            return Err(Error::invalid("steps", format!("need at least 2 steps, got {steps}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    /// Time to maturity T − t_k.
    pub fn remaining(&self, k: usize) -> f64 {
        (self.steps - k) as f64 * self.dt()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    pub(crate) fn check_nodes(&self, name: &str, len: usize) -> Result<()> {
        if len == self.steps + 1 {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{name} has {len} nodes, grid has {}",
                self.steps + 1
            )))
        }
    }

    pub(crate) fn check_steps(&self, name: &str, len: usize) -> Result<()> {
        if len == self.steps {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{name} has {len} intervals, grid has {}",
                self.steps
            )))
        }
    }

    /// Node indices of `count` evenly spaced checkpoints, ending at T.
    pub fn checkpoints(&self, count: usize) -> Vec<usize> {
        let count = count.clamp(1, self.steps);
        let mut out: Vec<usize> = (1..=count).map(|j| j * self.steps / count).collect();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_end_exactly_at_horizon() {
        let g = TimeGrid::new(3.0, 7).unwrap();
        assert_eq!(g.node(7), 3.0);
        assert_eq!(g.remaining(7), 0.0);
        assert_eq!(g.nodes().len(), 8);
        assert_eq!(g.checkpoints(10), vec![1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
    }
}

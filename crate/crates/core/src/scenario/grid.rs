use crate::error::{BsdeError, Result};

/// Strictly increasing time nodes `0 = t_0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid on `[0, horizon]` with `steps` intervals.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(BsdeError::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(BsdeError::InvalidGrid("at least one step is required".into()));
        }
        let mut nodes: Vec<f64> = (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect();
        nodes[steps] = horizon;
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(BsdeError::InvalidGrid("at least two nodes are required".into()));
        }
        if nodes[0] != 0.0 {
            return Err(BsdeError::InvalidGrid("first node must be 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(BsdeError::InvalidGrid("nodes must be strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("grid has nodes")
    }

    /// Number of steps `n`.
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn time(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// `t_{i+1} - t_i`.
    pub fn dt(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn is_uniform(&self) -> bool {
        let h = self.dt(0);
        (0..self.steps()).all(|i| (self.dt(i) - h).abs() <= 1e-12 * h.max(1.0))
    }

    /// Index of the node equal to `t` (within 1e-12), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.nodes.iter().position(|&s| (s - t).abs() <= 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_and_uniform_grids() {
        let g = TimeGrid::uniform(1.0, 1).unwrap();
        assert_eq!(g.nodes(), &[0.0, 1.0]);
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.dt(2), 0.25);
        assert!(g.is_uniform());
        assert_eq!(g.index_of(0.5), Some(2));
    }

    #[test]
    fn degenerate_grids_rejected() {
        assert!(TimeGrid::uniform(0.0, 1).is_err());
        assert!(TimeGrid::uniform(-1.0, 3).is_err());
        assert!(TimeGrid::uniform(1.0, 0).is_err());
        assert!(TimeGrid::uniform(f64::NAN, 2).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::from_nodes(vec![0.1, 0.5]).is_err());
    }
}

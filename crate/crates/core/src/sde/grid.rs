use crate::error::{Result, SldiError};

/// Strictly increasing simulation knots `t0 = knots[0] < ... < knots[n] = t1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

/// Knots closer than this are considered the same time when merging.
pub const MERGE_TOLERANCE: f64 = 1e-9;

impl TimeGrid {
    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.is_empty() {
            return Err(SldiError::GridError("a grid needs at least one knot".into()));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(SldiError::GridError("grid knots must be finite".into()));
        }
        if let Some(k) = knots.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SldiError::GridError(format!(
                "knots not strictly increasing at index {}: {} then {}",
                k + 1,
                knots[k],
                knots[k + 1]
            )));
        }
        Ok(TimeGrid { knots })
    }

    /// `steps` equal intervals on `[t0, t1]`.
    pub fn uniform(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            if t0 == t1 {
                return Self::from_knots(vec![t0]);
            }
            return Err(SldiError::GridError("zero steps on a non-degenerate interval".into()));
        }
        if !(t1 > t0) {
            return Err(SldiError::GridError(format!("need t1 > t0, got [{t0}, {t1}]")));
        }
        let h = (t1 - t0) / steps as f64;
        let mut knots: Vec<f64> = (0..steps).map(|k| t0 + h * k as f64).collect();
        knots.push(t1);
        Self::from_knots(knots)
    }

    /// Uniform grid of step at most `dt` on `[t0, t1]` with the `extra`
    /// times inserted as knots. Returns the grid and the knot index of each
    /// extra time (in input order). Extra times within [`MERGE_TOLERANCE`]
    /// of an existing knot reuse that knot.
    pub fn merged(t0: f64, t1: f64, dt: f64, extra: &[f64]) -> Result<(Self, Vec<usize>)> {
        if !(dt > 0.0) {
            return Err(SldiError::GridError(format!("step {dt} must be > 0")));
        }
        if let Some(bad) = extra
            .iter()
            .find(|t| **t < t0 - MERGE_TOLERANCE || **t > t1 + MERGE_TOLERANCE)
        {
            return Err(SldiError::GridError(format!(
                "time {bad} outside [{t0}, {t1}]"
            )));
        }
        let steps = ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize;
        let base = Self::uniform(t0, t1, steps)?;
        let mut knots = base.knots;
        knots.extend(extra.iter().map(|t| t.clamp(t0, t1)));
        knots.sort_by(|a, b| a.partial_cmp(b).expect("finite knots"));
        let mut dedup: Vec<f64> = Vec::with_capacity(knots.len());
        for t in knots {
            match dedup.last() {
                Some(last) if t - last <= MERGE_TOLERANCE => {}
                _ => dedup.push(t),
            }
        }
        let grid = Self::from_knots(dedup)?;
        let idx = extra.iter().map(|t| grid.nearest_knot(*t)).collect();
        Ok((grid, idx))
    }

    pub fn nearest_knot(&self, t: f64) -> usize {
        let pos = self.knots.partition_point(|k| *k < t);
        if pos == 0 {
            return 0;
        }
        if pos == self.knots.len() {
            return pos - 1;
        }
        if (self.knots[pos] - t).abs() < (t - self.knots[pos - 1]).abs() {
            pos
        } else {
            pos - 1
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn t0(&self) -> f64 {
        self.knots[0]
    }

    pub fn t1(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    pub fn num_steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.knots[k + 1] - self.knots[k]
    }

    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.knots.windows(2).map(|w| (w[0], w[1] - w[0]))
    }

    /// True when every knot of `self` is (within tolerance) a knot of `fine`.
    pub fn is_coarsening_of(&self, fine: &TimeGrid) -> bool {
        self.knots
            .iter()
            .all(|t| (fine.knots[fine.nearest_knot(*t)] - t).abs() <= MERGE_TOLERANCE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_endpoints_exact() {
        let g = TimeGrid::uniform(0.0, 2.0, 64).unwrap();
        assert_eq!(g.t0(), 0.0);
        assert_eq!(g.t1(), 2.0);
        assert_eq!(g.num_steps(), 64);
        assert!(g.steps().all(|(_, dt)| dt > 0.0));
    }

    #[test]
    fn invalid_grids() {
        assert!(matches!(TimeGrid::from_knots(vec![0.0, 1.0, 1.0]), Err(SldiError::GridError(_))));
        assert!(TimeGrid::from_knots(vec![]).is_err());
        assert!(TimeGrid::uniform(1.0, 0.0, 3).is_err());
        assert_eq!(TimeGrid::uniform(0.5, 0.5, 0).unwrap().num_steps(), 0);
    }

    #[test]
    fn merged_grid_contains_observation_times() {
        let obs = [0.0, 0.3, 0.5, 1.77, 2.0];
        let (g, idx) = TimeGrid::merged(0.0, 2.0, 0.25, &obs).unwrap();
        for (t, i) in obs.iter().zip(&idx) {
            assert!((g.knots()[*i] - t).abs() < 1e-12);
        }
        // 0.5 is already a knot, so only 0.3 and 1.77 are new
        assert_eq!(g.num_steps(), 8 + 2);
        assert!(TimeGrid::merged(0.0, 1.0, 0.1, &[1.5]).is_err());
    }
}

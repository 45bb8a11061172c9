use super::grid::{TimeGrid, MERGE_TOLERANCE};
use crate::error::{Result, SldiError};
use crate::rng::{rng_from_seed, standard_normals};

/// Explicitly stored Brownian increments, one `m`-vector per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub seed: u64,
    pub dim: usize,
    pub increments: Vec<Vec<f64>>,
}

/// Draws `sqrt(dt_k) * eps_k`, `eps_k ~ N(0, I_m)`, for every step of `grid`.
/// Draws are consumed step by step, coordinate by coordinate.
pub fn sample_brownian(grid: &TimeGrid, m: usize, seed: u64) -> Result<BrownianPath> {
    if m == 0 {
        return Err(SldiError::InvalidInput("noise dimension must be >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let increments = grid
        .steps()
        .map(|(_, dt)| {
            let s = dt.sqrt();
            standard_normals(&mut rng, m).into_iter().map(|e| s * e).collect()
        })
        .collect();
    Ok(BrownianPath { seed, dim: m, increments })
}

impl BrownianPath {
    pub fn from_increments(seed: u64, dim: usize, increments: Vec<Vec<f64>>) -> Result<Self> {
        if increments.iter().any(|v| v.len() != dim) {
            return Err(SldiError::shape("increment dimension mismatch"));
        }
        Ok(BrownianPath { seed, dim, increments })
    }

    pub fn num_steps(&self) -> usize {
        self.increments.len()
    }

    /// Same path with every increment negated.
    pub fn antithetic(&self) -> Self {
        BrownianPath {
            seed: self.seed,
            dim: self.dim,
            increments: self
                .increments
                .iter()
                .map(|v| v.iter().map(|x| -x).collect())
                .collect(),
        }
    }

    /// Endpoint `W(t1) - W(t0)`.
    pub fn total(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for inc in &self.increments {
            for (a, b) in acc.iter_mut().zip(inc) {
                *a += b;
            }
        }
        acc
    }

    /// Sums the increments of this path (on `fine`) over the steps of
    /// `coarse`, producing the same Brownian realization on the coarse grid.
    pub fn coarsen(&self, fine: &TimeGrid, coarse: &TimeGrid) -> Result<Self> {
        if self.increments.len() != fine.num_steps() {
            return Err(SldiError::GridError("noise was not generated on the fine grid".into()));
        }
        if !coarse.is_coarsening_of(fine) {
            return Err(SldiError::GridError("coarse knots are not a subset of fine knots".into()));
        }
        let mut out = Vec::with_capacity(coarse.num_steps());
        let mut k = fine.nearest_knot(coarse.t0());
        for &t_end in &coarse.knots()[1..] {
            let mut acc = vec![0.0; self.dim];
            while k < fine.num_steps() && fine.knots()[k] < t_end - MERGE_TOLERANCE {
                for (a, b) in acc.iter_mut().zip(&self.increments[k]) {
                    *a += b;
                }
                k += 1;
            }
            out.push(acc);
        }
        Ok(BrownianPath { seed: self.seed, dim: self.dim, increments: out })
    }

    pub(crate) fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if self.increments.len() != grid.num_steps() {
            return Err(SldiError::GridError(format!(
                "noise has {} increments but grid has {} steps",
                self.increments.len(),
                grid.num_steps()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_grid_gives_no_increments() {
        let g = TimeGrid::uniform(0.0, 0.0, 0).unwrap();
        assert!(sample_brownian(&g, 2, 1).unwrap().increments.is_empty());
    }

    #[test]
    fn deterministic_in_seed() {
        let g = TimeGrid::uniform(0.0, 1.0, 17).unwrap();
        assert_eq!(sample_brownian(&g, 3, 9).unwrap(), sample_brownian(&g, 3, 9).unwrap());
        assert_ne!(sample_brownian(&g, 3, 9).unwrap(), sample_brownian(&g, 3, 10).unwrap());
    }

    #[test]
    fn increment_variance_matches_step() {
        // 10^5 draws of N(0, dt); the sample variance has standard error
        // dt * sqrt(2 / (n - 1)) (chi-square with n - 1 degrees of freedom).
        let dt = 0.01;
        let n = 100_000;
        let g = TimeGrid::uniform(0.0, dt * n as f64, n).unwrap();
        let p = sample_brownian(&g, 2, 2024).unwrap();
        for c in 0..2 {
            let xs: Vec<f64> = p.increments.iter().map(|v| v[c]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = dt * (2.0 / (n - 1) as f64).sqrt();
            assert!((var - dt).abs() < 3.0 * se, "coordinate {c}: {var}");
        }
    }

    #[test]
    fn antithetic_negates_and_coarsening_sums() {
        let fine = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
        let coarse = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let p = sample_brownian(&fine, 1, 3).unwrap();
        let a = p.antithetic();
        for (x, y) in p.increments.iter().zip(&a.increments) {
            assert_eq!(x[0], -y[0]);
        }
        let c = p.coarsen(&fine, &coarse).unwrap();
        let first: f64 = p.increments[..4].iter().map(|v| v[0]).sum();
        assert!((c.increments[0][0] - first).abs() < 1e-15);
        assert!((c.total()[0] - p.total()[0]).abs() < 1e-14);
        let odd = TimeGrid::from_knots(vec![0.0, 0.3, 1.0]).unwrap();
        assert!(p.coarsen(&fine, &odd).is_err());
    }
}

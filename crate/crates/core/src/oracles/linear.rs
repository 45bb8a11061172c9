//! Exact inference for linear-Gaussian state-space models.

use nalgebra::{DMatrix, DVector};

use super::expm::discretize_linear;
use crate::data::ObservationSeq;
use crate::error::{Result, SldiError};
use crate::rng::{standard_normals, SldiRng};
use crate::sde::grid::MERGE_TOLERANCE;
use crate::nn::ParamStore;
use crate::sde::{fixtures, moment_ode_solve, SdeModel, TimeGrid};
use crate::variational::GaussianDist;

/// `dz = A z dt + B dW`, `x_k = C z(t_k) + N(0, diag(R))`, `z(t0) ~ z0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub r_diag: Vec<f64>,
    pub z0: GaussianDist,
}

fn rows_to_matrix(what: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(SldiError::shape(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl LinearGaussianSystem {
    pub fn new(
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        r_diag: Vec<f64>,
        z0: GaussianDist,
    ) -> Result<Self> {
        let a = rows_to_matrix("A", &a)?;
        let b = rows_to_matrix("B", &b)?;
        let c = rows_to_matrix("C", &c)?;
        let d = a.nrows();
        if !a.is_square() || b.nrows() != d || c.ncols() != d || r_diag.len() != c.nrows() || z0.dim() != d {
            return Err(SldiError::shape("linear system dimensions are inconsistent"));
        }
        if r_diag.iter().any(|r| !(*r > 0.0)) {
            return Err(SldiError::InvalidInput("observation noise variances must be > 0".into()));
        }
        Ok(LinearGaussianSystem { a, b, c, r_diag, z0 })
    }

    pub fn latent_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    /// True when `B` is square and diagonal.
    pub fn has_diagonal_noise(&self) -> bool {
        self.b.is_square()
            && (0..self.b.nrows()).all(|i| (0..self.b.ncols()).all(|j| i == j || self.b[(i, j)] == 0.0))
    }

    fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// The latent SDE as an affine [`SdeModel`] (diagonal mode when `B` is
    /// diagonal, full otherwise).
    pub fn sde_fixture(&self) -> (SdeModel, ParamStore) {
        let a = Self::rows(&self.a);
        if self.has_diagonal_noise() {
            fixtures::linear_diag(&a, &self.b.diagonal().iter().copied().collect::<Vec<_>>())
        } else {
            fixtures::linear(&a, &Self::rows(&self.b))
        }
    }

    pub fn observe(&self, z: &[f64], rng: &mut SldiRng) -> Vec<f64> {
        let mean = &self.c * DVector::from_column_slice(z);
        let e = standard_normals(rng, self.obs_dim());
        mean.iter()
            .zip(&self.r_diag)
            .zip(e)
            .map(|((m, r), e)| m + r.sqrt() * e)
            .collect()
    }

    fn r_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.r_diag))
    }

    pub fn prior_mean(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.z0.mean)
    }

    pub fn prior_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.z0.var))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanResult {
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    /// Smoothed posterior moments at every grid knot.
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
    /// Log-density of each innovation, in observation order.
    pub innovation_logdens: Vec<f64>,
}

impl KalmanResult {
    pub fn posterior_at(&self, k: usize) -> (DVector<f64>, DMatrix<f64>) {
        (self.means[k].clone(), self.covs[k].clone())
    }
}

/// Knot index of every observation time; errors when a time is not a knot.
pub fn observation_knots(grid: &TimeGrid, times: &[f64]) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|t| {
            let k = grid.nearest_knot(*t);
            if (grid.knots()[k] - t).abs() > MERGE_TOLERANCE {
                Err(SldiError::GridError(format!("observation time {t} is not a grid knot")))
            } else {
                Ok(k)
            }
        })
        .collect()
}

fn inverse_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    match m.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => m.clone().pseudo_inverse(1e-14).expect("pseudo-inverse of a square matrix"),
    }
}

/// Forward Kalman filter and Rauch–Tung–Striebel smoother with the SDE
/// discretized exactly between consecutive knots.
pub fn kalman_smoother(sys: &LinearGaussianSystem, obs: &ObservationSeq, grid: &TimeGrid) -> Result<KalmanResult> {
    obs.validate()?;
    if !obs.is_empty() && obs.obs_dim() != sys.obs_dim() {
        return Err(SldiError::shape("observation dimension does not match C"));
    }
    let knots = observation_knots(grid, &obs.timestamps)?;
    let n_knots = grid.knots().len();
    let mut obs_at: Vec<Option<usize>> = vec![None; n_knots];
    for (j, k) in knots.iter().enumerate() {
        obs_at[*k] = Some(j);
    }
    let r = sys.r_matrix();
    let n = sys.obs_dim() as f64;

    let mut transitions = Vec::with_capacity(grid.num_steps());
    for (_, h) in grid.steps() {
        transitions.push(discretize_linear(&sys.a, &sys.b, h)?);
    }

    let mut pred_m = Vec::with_capacity(n_knots);
    let mut pred_p = Vec::with_capacity(n_knots);
    let mut filt_m: Vec<DVector<f64>> = Vec::with_capacity(n_knots);
    let mut filt_p: Vec<DMatrix<f64>> = Vec::with_capacity(n_knots);
    let mut loglik = 0.0;
    let mut innov = Vec::new();
    for k in 0..n_knots {
        let (m, p) = if k == 0 {
            (sys.prior_mean(), sys.prior_cov())
        } else {
            let (f, q) = &transitions[k - 1];
            let p = f * &filt_p[k - 1] * f.transpose() + q;
            (f * &filt_m[k - 1], (&p + p.transpose()) * 0.5)
        };
        pred_m.push(m.clone());
        pred_p.push(p.clone());
        let (m, p) = match obs_at[k] {
            None => (m, p),
            Some(j) => {
                let x = DVector::from_column_slice(&obs.values[j]);
                let s = &sys.c * &p * sys.c.transpose() + &r;
                let ch = s.clone().cholesky().ok_or_else(|| {
                    SldiError::NumericsError(format!("innovation covariance singular at knot {k}"))
                })?;
                let resid = x - &sys.c * &m;
                let sol = ch.solve(&resid);
                let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                let ld = -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + resid.dot(&sol));
                innov.push(ld);
                loglik += ld;
                let gain = &p * sys.c.transpose() * ch.inverse();
                let m = &m + &gain * resid;
                let ikc = DMatrix::identity(p.nrows(), p.nrows()) - &gain * &sys.c;
                // Joseph form keeps the covariance symmetric PSD
                let p = &ikc * &p * ikc.transpose() + &gain * &r * gain.transpose();
                (m, (&p + p.transpose()) * 0.5)
            }
        };
        filt_m.push(m);
        filt_p.push(p);
    }

    let mut means = filt_m.clone();
    let mut covs = filt_p.clone();
    for k in (0..n_knots.saturating_sub(1)).rev() {
        let (f, _) = &transitions[k];
        let g = &filt_p[k] * f.transpose() * inverse_psd(&pred_p[k + 1]);
        means[k] = &filt_m[k] + &g * (&means[k + 1] - &pred_m[k + 1]);
        let p = &filt_p[k] + &g * (&covs[k + 1] - &pred_p[k + 1]) * g.transpose();
        covs[k] = (&p + p.transpose()) * 0.5;
    }
    Ok(KalmanResult {
        filtered_means: filt_m,
        filtered_covs: filt_p,
        means,
        covs,
        log_likelihood: loglik,
        innovation_logdens: innov,
    })
}

/// Prior moments of the system on `grid` (no observations), via the
/// moment equations.
pub fn prior_moments(sys: &LinearGaussianSystem, grid: &TimeGrid) -> Result<crate::sde::MomentPath> {
    moment_ode_solve(&sys.a, &sys.b, &sys.prior_mean(), &sys.prior_cov(), grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_ou(r: f64) -> LinearGaussianSystem {
        LinearGaussianSystem::new(
            vec![vec![-1.0]],
            vec![vec![0.8]],
            vec![vec![1.0]],
            vec![r],
            GaussianDist::new(vec![0.5], vec![0.3]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn no_observations_gives_prior_moments() {
        let sys = scalar_ou(0.1);
        let grid = TimeGrid::uniform(0.0, 2.0, 400).unwrap();
        let empty = ObservationSeq::new("e", vec![], vec![], vec![]).unwrap();
        let k = kalman_smoother(&sys, &empty, &grid).unwrap();
        let pm = prior_moments(&sys, &grid).unwrap();
        assert_eq!(k.log_likelihood, 0.0);
        for i in [0, 100, 400] {
            assert!((k.means[i][0] - pm.means[i][0]).abs() < 1e-9);
            assert!((k.covs[i][(0, 0)] - pm.covs[i][(0, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_observations_are_reproduced() {
        let sys = LinearGaussianSystem::new(
            vec![vec![-0.5, 1.0], vec![-1.0, -0.2]],
            vec![vec![0.3, 0.0], vec![0.1, 0.4]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![1e-10, 1e-10],
            GaussianDist::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let obs = ObservationSeq::new(
            "x",
            vec![0.2, 0.5, 1.0],
            vec![vec![0.3, -0.1], vec![0.7, 0.2], vec![-0.4, 0.9]],
            vec![],
        )
        .unwrap();
        let k = kalman_smoother(&sys, &obs, &grid).unwrap();
        for (t, x) in obs.timestamps.iter().zip(&obs.values) {
            let m = &k.means[grid.nearest_knot(*t)];
            assert!((m[0] - x[0]).abs() < 1e-6 && (m[1] - x[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn loglik_is_sum_of_innovations_and_matches_joint_gaussian() {
        let sys = scalar_ou(0.2);
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let obs = ObservationSeq::new("x", vec![0.0, 0.5, 1.0], vec![vec![0.4], vec![-0.2], vec![0.1]], vec![]).unwrap();
        let k = kalman_smoother(&sys, &obs, &grid).unwrap();
        let s: f64 = k.innovation_logdens.iter().sum();
        assert!((s - k.log_likelihood).abs() < 1e-10);

        // joint Gaussian of (x(0), x(0.5), x(1)) built from closed-form OU moments
        let (m0, v0, th, sg) = (0.5f64, 0.3f64, 1.0f64, 0.8f64);
        let ts = [0.0f64, 0.5, 1.0];
        let cov_z = |s: f64, t: f64| {
            let (lo, hi) = if s < t { (s, t) } else { (t, s) };
            let var_lo = v0 * (-2.0 * th * lo).exp() + sg * sg * (1.0 - (-2.0 * th * lo).exp()) / (2.0 * th);
            var_lo * (-th * (hi - lo)).exp()
        };
        let mean = DVector::from_iterator(3, ts.iter().map(|t| m0 * (-th * t).exp()));
        let cov = DMatrix::from_fn(3, 3, |i, j| cov_z(ts[i], ts[j]) + if i == j { 0.2 } else { 0.0 });
        let x = DVector::from_vec(vec![0.4, -0.2, 0.1]);
        let r = &x - &mean;
        let ch = cov.clone().cholesky().unwrap();
        let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let want = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + logdet + r.dot(&ch.solve(&r)));
        assert!((k.log_likelihood - want).abs() < 1e-10, "{} vs {want}", k.log_likelihood);
    }

    #[test]
    fn off_grid_observation_is_rejected() {
        let sys = scalar_ou(0.1);
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let obs = ObservationSeq::new("x", vec![0.3], vec![vec![0.0]], vec![]).unwrap();
        assert!(matches!(kalman_smoother(&sys, &obs, &grid), Err(SldiError::GridError(_))));
    }
}

//! First and second moments of linear SDEs `dz = A z dt + B dW`.

use nalgebra::{DMatrix, DVector};

use super::grid::TimeGrid;
use crate::error::{Result, SldiError};

#[derive(Debug, Clone, PartialEq)]
pub struct MomentPath {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Symmetric and positive semidefinite up to a relative tolerance.
pub(crate) fn is_psd(p: &DMatrix<f64>) -> bool {
    if !p.is_square() {
        return false;
    }
    let scale = p.amax().max(1.0);
    if (p - p.transpose()).amax() > 1e-10 * scale {
        return false;
    }
    let sym = (p + p.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().all(|l| *l >= -1e-10 * scale)
}

/// Integrates `dm/dt = A m` and `dP/dt = A P + P A^T + B B^T` with classical
/// RK4 on every step of `grid`.
pub fn moment_ode_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    m0: &DVector<f64>,
    p0: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<MomentPath> {
    let d = a.nrows();
    if !a.is_square() || b.nrows() != d || m0.len() != d || p0.shape() != (d, d) {
        return Err(SldiError::shape("moment system dimensions are inconsistent"));
    }
    if !is_psd(p0) {
        return Err(SldiError::InvalidInput(
            "initial covariance is not symmetric positive semidefinite".into(),
        ));
    }
    let q = b * b.transpose();
    let fm = |m: &DVector<f64>| a * m;
    let fp = |p: &DMatrix<f64>| a * p + p * a.transpose() + &q;

    let mut means = vec![m0.clone()];
    let mut covs = vec![p0.clone()];
    for (_, h) in grid.steps() {
        let m = means.last().unwrap();
        let k1 = fm(m);
        let k2 = fm(&(m + &k1 * (h / 2.0)));
        let k3 = fm(&(m + &k2 * (h / 2.0)));
        let k4 = fm(&(m + &k3 * h));
        let m_next = m + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);

        let p = covs.last().unwrap();
        let l1 = fp(p);
        let l2 = fp(&(p + &l1 * (h / 2.0)));
        let l3 = fp(&(p + &l2 * (h / 2.0)));
        let l4 = fp(&(p + &l3 * h));
        let p_next = p + (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
        let p_next = (&p_next + p_next.transpose()) * 0.5;

        means.push(m_next);
        covs.push(p_next);
    }
    Ok(MomentPath { means, covs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_diffusion_grows_linearly() {
        let g = TimeGrid::uniform(0.0, 1.5, 30).unwrap();
        let r = moment_ode_solve(
            &DMatrix::zeros(2, 2),
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            &DMatrix::zeros(2, 2),
            &g,
        )
        .unwrap();
        for (t, p) in g.knots().iter().zip(&r.covs) {
            assert!((p - DMatrix::identity(2, 2) * *t).amax() < 1e-13);
        }
    }

    #[test]
    fn ou_reaches_stationary_variance() {
        let g = TimeGrid::uniform(0.0, 20.0, 2000).unwrap();
        let r = moment_ode_solve(
            &DMatrix::from_element(1, 1, -1.0),
            &DMatrix::from_element(1, 1, 2f64.sqrt()),
            &DVector::from_element(1, 3.0),
            &DMatrix::zeros(1, 1),
            &g,
        )
        .unwrap();
        let v = r.covs.last().unwrap()[(0, 0)];
        assert!((v - 1.0).abs() < 1e-6, "{v}");
        let m = r.means.last().unwrap()[0];
        assert!((m - 3.0 * (-20f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn rejects_indefinite_initial_covariance() {
        let g = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = moment_ode_solve(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 1), &DVector::zeros(2), &p0, &g);
        assert!(matches!(r, Err(SldiError::InvalidInput(_))));
    }

    #[test]
    fn covariance_stays_psd() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[0.4, 0.9]);
        let g = TimeGrid::uniform(0.0, 3.0, 60).unwrap();
        let r = moment_ode_solve(&a, &b, &DVector::from_vec(vec![1.0, 0.0]), &DMatrix::zeros(2, 2), &g).unwrap();
        assert!(r.covs.iter().all(is_psd));
    }
}

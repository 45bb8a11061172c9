use crate::error::{Result, SldiError};

/// Central differences `(f(p + h e_i) - f(p - h e_i)) / 2h` per coordinate.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, params: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(SldiError::InvalidInput(format!("finite-difference step {h} must be > 0")));
    }
    let mut p = params.to_vec();
    let mut g = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(SldiError::blowup(i, format!("non-finite loss perturbing coordinate {i}")));
        }
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// Richardson-extrapolated central differences `(4 D(h/2) - D(h)) / 3`,
/// error `O(h^4)`. Lets `h` stay large enough that rounding in the
/// difference quotient is negligible for losses of large magnitude.
pub fn finite_diff_grad_richardson(f: impl Fn(&[f64]) -> f64, params: &[f64], h: f64) -> Result<Vec<f64>> {
    let coarse = finite_diff_grad(&f, params, h)?;
    let fine = finite_diff_grad(&f, params, 0.5 * h)?;
    Ok(fine.iter().zip(&coarse).map(|(a, b)| (4.0 * a - b) / 3.0).collect())
}

/// Mean and variance of the scalar OU process `dz = -theta z dt + sigma dW`
/// started at `z0`.
pub fn ou_statistics(theta: f64, sigma: f64, z0: f64, t: f64) -> Result<(f64, f64)> {
    if !(theta > 0.0) {
        return Err(SldiError::InvalidInput("OU statistics need theta > 0".into()));
    }
    let mean = z0 * (-theta * t).exp();
    let var = sigma * sigma * (-(-2.0 * theta * t).exp_m1()) / (2.0 * theta);
    Ok((mean, var))
}

//! Matrix exponential by scaling and squaring with a degree-6 Padé
//! approximant, and the Van Loan construction for integrated noise.

use nalgebra::DMatrix;

use crate::error::{Result, SldiError};

const PADE6: [f64; 7] = [
    1.0,
    0.5,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
];

fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(SldiError::shape("matrix exponential of a non-square matrix"));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(SldiError::NumericsError("matrix exponential of a non-finite matrix".into()));
    }
    let n = a.nrows();
    let norm = inf_norm(a);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = a / 2f64.powi(s);
    let mut num = DMatrix::identity(n, n) * PADE6[0];
    let mut den = num.clone();
    let mut pow = DMatrix::identity(n, n);
    for (k, c) in PADE6.iter().enumerate().skip(1) {
        pow = &pow * &x;
        num += &pow * *c;
        den += &pow * (if k % 2 == 0 { *c } else { -*c });
    }
    let mut r = den
        .lu()
        .solve(&num)
        .ok_or_else(|| SldiError::NumericsError("singular Padé denominator".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// Exact one-step discretization of `dz = A z dt + B dW` over `h`:
/// `F = exp(A h)` and `Q = int_0^h exp(A s) B B^T exp(A^T s) ds`.
pub fn discretize_linear(a: &DMatrix<f64>, b: &DMatrix<f64>, h: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = a.nrows();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&(-a * h));
    m.view_mut((0, d), (d, d)).copy_from(&(b * b.transpose() * h));
    m.view_mut((d, d), (d, d)).copy_from(&(a.transpose() * h));
    let e = expm(&m)?;
    let f = e.view((d, d), (d, d)).transpose();
    let q = &f * e.view((0, d), (d, d));
    let q = (&q + q.transpose()) * 0.5;
    Ok((f, q))
}

//! Strong and weak error of the discretization schemes against SDEs whose
//! solution is known.

use rayon::prelude::*;

use super::brownian::sample_brownian;
use super::fixtures;
use super::grid::{TimeGrid, MERGE_TOLERANCE};
use super::model::Scheme;
use crate::error::{Result, SldiError};
use crate::rng::derive_seed;

/// Reference resolution factor for fixtures whose exact solution is a
/// stochastic integral rather than a function of `W_T`.
const OU_REFERENCE_REFINEMENT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticFixture {
    /// `dz = mu z dt + sigma z dW`; exact `z0 exp((mu - sigma^2/2) T + sigma W_T)`.
    Gbm { mu: f64, sigma: f64, z0: f64 },
    /// `dz = -theta z dt + sigma dW`; reference solution from a finer grid.
    Ou { theta: f64, sigma: f64, z0: f64 },
}

impl AnalyticFixture {
    pub fn from_name(name: &str, a: f64, sigma: f64, z0: f64) -> Result<Self> {
        match name {
            "gbm" => Ok(AnalyticFixture::Gbm { mu: a, sigma, z0 }),
            "ou" => Ok(AnalyticFixture::Ou { theta: a, sigma, z0 }),
            other => Err(SldiError::InvalidInput(format!(
                "unknown analytic fixture '{other}' (expected gbm or ou)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticFixture::Gbm { .. } => "gbm",
            AnalyticFixture::Ou { .. } => "ou",
        }
    }

    pub fn exact_mean(&self, t: f64) -> f64 {
        match *self {
            AnalyticFixture::Gbm { mu, z0, .. } => z0 * (mu * t).exp(),
            AnalyticFixture::Ou { theta, z0, .. } => z0 * (-theta * t).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub dt: f64,
    pub strong: f64,
    pub strong_se: f64,
    pub weak: f64,
    pub weak_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub fixture: &'static str,
    pub scheme: Scheme,
    pub n_paths: usize,
    pub rows: Vec<ErrorRow>,
    pub strong_slope: Option<f64>,
    pub weak_slope: Option<f64>,
}

impl ErrorTable {
    /// Comma-separated table with a header row; slopes are repeated on every
    /// row and left empty when undefined.
    pub fn to_csv(&self) -> String {
        let slope = |s: Option<f64>| s.map(crate::fmt::fmt_f64).unwrap_or_default();
        let mut out = String::from("fixture,scheme,dt,strong_error,strong_se,weak_error,weak_se,strong_slope,weak_slope\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                self.fixture,
                self.scheme.name(),
                crate::fmt::fmt_f64(r.dt),
                crate::fmt::fmt_f64(r.strong),
                crate::fmt::fmt_f64(r.strong_se),
                crate::fmt::fmt_f64(r.weak),
                crate::fmt::fmt_f64(r.weak_se),
                slope(self.strong_slope),
                slope(self.weak_slope),
            ));
        }
        out
    }
}

/// Least-squares slope of `log y` against `log x`; `None` with fewer than
/// two usable (positive) points.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn steps_for(t1: f64, dt: f64) -> Result<usize> {
    let n = (t1 / dt).round();
    if !(dt > 0.0) || n < 1.0 || (n * dt - t1).abs() > MERGE_TOLERANCE * t1.max(1.0) {
        return Err(SldiError::GridError(format!("step {dt} does not divide horizon {t1}")));
    }
    Ok(n as usize)
}

/// Terminal strong error `E|Z_num - Z_exact|` and weak error
/// `|E[Z_num] - E[Z_exact]|` for each step in `dts`, all driven by the same
/// Brownian paths (sampled on the finest grid and summed onto coarser ones).
/// The weak error is estimated from the coupled differences, which has the
/// same expectation as the difference of means but far lower variance.
pub fn strong_weak_error(
    fixture: AnalyticFixture,
    scheme: Scheme,
    t1: f64,
    dts: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<ErrorTable> {
    if dts.is_empty() || n_paths == 0 {
        return Err(SldiError::InvalidInput("need at least one step size and one path".into()));
    }
    let steps: Vec<usize> = dts.iter().map(|dt| steps_for(t1, *dt)).collect::<Result<_>>()?;
    let finest = *steps.iter().max().unwrap();
    if steps.iter().any(|s| finest % s != 0) {
        return Err(SldiError::GridError("step sizes must nest within the finest grid".into()));
    }
    let (model, store, z0, refine) = match fixture {
        AnalyticFixture::Gbm { mu, sigma, z0 } => {
            let (m, p) = fixtures::gbm(mu, sigma);
            (m, p, z0, 1)
        }
        AnalyticFixture::Ou { theta, sigma, z0 } => {
            let (m, p) = fixtures::ou(theta, sigma);
            (m, p, z0, OU_REFERENCE_REFINEMENT)
        }
    };
    let sde = model.bind(store.flat());
    let reference = TimeGrid::uniform(0.0, t1, finest * refine)?;
    let grids: Vec<TimeGrid> = steps
        .iter()
        .map(|s| TimeGrid::uniform(0.0, t1, *s))
        .collect::<Result<_>>()?;

    // per path: (signed error, absolute error) for every dt
    let per_path: Vec<Vec<(f64, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<(f64, f64)>> {
            let noise = sample_brownian(&reference, 1, derive_seed(seed, p as u64))?;
            let exact = match fixture {
                AnalyticFixture::Gbm { mu, sigma, z0 } => {
                    z0 * ((mu - 0.5 * sigma * sigma) * t1 + sigma * noise.total()[0]).exp()
                }
                AnalyticFixture::Ou { .. } => {
                    sde.simulate(&[z0], &reference, &noise, Scheme::EulerMaruyama)?.terminal()[0]
                }
            };
            grids
                .iter()
                .map(|g| {
                    let w = noise.coarsen(&reference, g)?;
                    let z = sde.simulate(&[z0], g, &w, scheme)?.terminal()[0];
                    Ok((z - exact, (z - exact).abs()))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(dts.len());
    for (j, g) in grids.iter().enumerate() {
        let signed: Vec<f64> = per_path.iter().map(|r| r[j].0).collect();
        let abs: Vec<f64> = per_path.iter().map(|r| r[j].1).collect();
        let (strong, strong_se) = mean_se(&abs);
        let (bias, weak_se) = mean_se(&signed);
        rows.push(ErrorRow {
            dt: g.dt(0),
            strong,
            strong_se,
            weak: bias.abs(),
            weak_se,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let strong_slope = loglog_slope(&xs, &rows.iter().map(|r| r.strong).collect::<Vec<_>>());
    let weak_slope = loglog_slope(&xs, &rows.iter().map(|r| r.weak).collect::<Vec<_>>());
    Ok(ErrorTable {
        fixture: fixture.name(),
        scheme,
        n_paths,
        rows,
        strong_slope,
        weak_slope,
    })
}

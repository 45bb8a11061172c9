use crate::error::{check_len, Result, SldiError};

/// Exponentially weighted running gradient `g_bar` and the mixing weight
/// `alpha` of the clipped update `alpha * g + (1 - alpha) * g_bar`.
#[derive(Debug, Clone, PartialEq)]
pub struct EwmaSmoother {
    pub alpha: f64,
    pub rho: f64,
    pub running: Vec<f64>,
}

impl EwmaSmoother {
    /// Smoother with a zero running average.
    pub fn new(alpha: f64, rho: f64, dim: usize) -> Result<Self> {
        Self::with_running(alpha, rho, vec![0.0; dim])
    }

    pub fn with_running(alpha: f64, rho: f64, running: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !(rho > 0.0 && rho < 1.0) {
            return Err(SldiError::InvalidInput(format!(
                "need alpha in [0, 1] and rho in (0, 1), got {alpha}, {rho}"
            )));
        }
        if running.iter().any(|v| !v.is_finite()) {
            return Err(SldiError::InvalidInput("running gradient must be finite".into()));
        }
        Ok(EwmaSmoother { alpha, rho, running })
    }

    /// Returns `alpha * raw + (1 - alpha) * g_bar`, then updates
    /// `g_bar <- rho * g_bar + (1 - rho) * raw`.
    pub fn apply(&mut self, raw: &[f64]) -> Result<Vec<f64>> {
        check_len("gradient", raw.len(), self.running.len())?;
        let out = if self.alpha == 1.0 {
            raw.to_vec()
        } else {
            raw.iter()
                .zip(&self.running)
                .map(|(g, r)| self.alpha * g + (1.0 - self.alpha) * r)
                .collect()
        };
        for (r, g) in self.running.iter_mut().zip(raw) {
            *r = self.rho * *r + (1.0 - self.rho) * g;
        }
        Ok(out)
    }
}

/// Functional form of [`EwmaSmoother::apply`].
pub fn variance_clip(raw: &[f64], smoother: &EwmaSmoother) -> Result<(Vec<f64>, EwmaSmoother)> {
    let mut s = smoother.clone();
    let out = s.apply(raw)?;
    Ok((out, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convex_combination_cases() {
        let s = EwmaSmoother::with_running(1.0, 0.99, vec![5.0, -3.0]).unwrap();
        assert_eq!(variance_clip(&[0.1, 0.2], &s).unwrap().0, vec![0.1, 0.2]);
        let s = EwmaSmoother::with_running(0.0, 0.99, vec![5.0, -3.0]).unwrap();
        assert_eq!(variance_clip(&[0.1, 0.2], &s).unwrap().0, vec![5.0, -3.0]);
        let s = EwmaSmoother::with_running(0.5, 0.9, vec![1.0]).unwrap();
        let (out, next) = variance_clip(&[2.0], &s).unwrap();
        assert_eq!(out, vec![1.5]);
        assert!((next.running[0] - (0.9 + 0.2)).abs() < 1e-15);
        assert!(variance_clip(&[1.0, 2.0], &s).is_err());
    }
}

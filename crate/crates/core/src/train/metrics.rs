//! One-line-per-record metrics stream.
//!
//! A record is a space-separated list of `key=value` tokens in a fixed
//! order; floats use the round-trip exact format of [`crate::fmt`], absent
//! values are written as `na`. Wall-clock time is kept out of the records
//! so identical runs produce identical streams.

use crate::error::{Result, SldiError};
use crate::fmt::{fmt_f64, parse_f64};
use crate::variational::ElboBreakdown;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRecord {
    pub step: usize,
    pub breakdown: ElboBreakdown,
    pub grad_norm: f64,
    pub grad_variance: Option<f64>,
    pub blowups: usize,
    pub samples: usize,
    pub spectral_max: f64,
    pub val_elbo: Option<f64>,
    pub rmse: Option<f64>,
    pub nll: Option<f64>,
    pub coverage50: Option<f64>,
    pub coverage90: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or("na".to_string(), fmt_f64)
}

impl MetricsRecord {
    pub fn to_line(&self) -> String {
        let b = &self.breakdown;
        format!(
            "step={} total={} recon={} kl_z0={} kl_path={} r_path={} adjoint_penalty={} annealing_weight={} grad_norm={} grad_variance={} blowups={} samples={} spectral_max={} val_elbo={} rmse={} nll={} coverage50={} coverage90={}",
            self.step,
            fmt_f64(b.total),
            fmt_f64(b.recon),
            fmt_f64(b.kl_z0),
            fmt_f64(b.kl_path),
            fmt_f64(b.r_path),
            fmt_f64(b.adjoint_penalty),
            fmt_f64(b.annealing_weight),
            fmt_f64(self.grad_norm),
            opt(self.grad_variance),
            self.blowups,
            self.samples,
            fmt_f64(self.spectral_max),
            opt(self.val_elbo),
            opt(self.rmse),
            opt(self.nll),
            opt(self.coverage50),
            opt(self.coverage90),
        )
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let bad = |d: String| SldiError::ParseError { line: 1, detail: d };
        let mut kv = Vec::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| bad(format!("token '{tok}' is not key=value")))?;
            kv.push((k, v));
        }
        let get = |k: &str| kv.iter().find(|(a, _)| *a == k).map(|(_, v)| *v).ok_or_else(|| bad(format!("missing {k}")));
        let f = |k: &str| get(k).and_then(|v| parse_f64(v).ok_or_else(|| bad(format!("bad float for {k}"))));
        let o = |k: &str| get(k).and_then(|v| if v == "na" { Ok(None) } else { parse_f64(v).map(Some).ok_or_else(|| bad(format!("bad float for {k}"))) });
        let u = |k: &str| get(k).and_then(|v| v.parse::<usize>().map_err(|_| bad(format!("bad integer for {k}"))));
        Ok(MetricsRecord {
            step: u("step")?,
            breakdown: ElboBreakdown {
                recon: f("recon")?,
                kl_z0: f("kl_z0")?,
                kl_path: f("kl_path")?,
                r_path: f("r_path")?,
                adjoint_penalty: f("adjoint_penalty")?,
                total: f("total")?,
                annealing_weight: f("annealing_weight")?,
            },
            grad_norm: f("grad_norm")?,
            grad_variance: o("grad_variance")?,
            blowups: u("blowups")?,
            samples: u("samples")?,
            spectral_max: f("spectral_max")?,
            val_elbo: o("val_elbo")?,
            rmse: o("rmse")?,
            nll: o("nll")?,
            coverage50: o("coverage50")?,
            coverage90: o("coverage90")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trip() {
        let r = MetricsRecord {
            step: 12,
            breakdown: ElboBreakdown::assemble(-3.25, 0.1, 0.2, 0.01, 0.0, 0.5),
            grad_norm: 1.0 / 3.0,
            grad_variance: None,
            blowups: 1,
            samples: 32,
            spectral_max: 1.9999,
            val_elbo: Some(-4.0),
            rmse: None,
            nll: None,
            coverage50: None,
            coverage90: Some(0.9),
        };
        let line = r.to_line();
        assert!(!line.contains('\n'));
        assert_eq!(MetricsRecord::from_line(&line).unwrap(), r);
        assert!(MetricsRecord::from_line("step=1 total").is_err());
    }
}

//! Text checkpoint container for a [`ParamStore`].
//!
//! Layout (UTF-8, `\n` line endings):
//!
//! ```text
//! sldi-checkpoint 1
//! meta <count>
//! <count verbatim metadata lines>
//! tensors <count>
//! tensor <name> <rank> <dim_0> ... <dim_{rank-1}>
//! <values separated by single spaces, formatted "{:.16e}">
//! ...
//! ```
//!
//! Seventeen significant digits make the float round trip exact.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Result, SldiError};
use crate::fmt::{fmt_f64, parse_f64};

pub const CHECKPOINT_MAGIC: &str = "sldi-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_to_string(store: &ParamStore, meta: &[String]) -> String {
    let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nmeta {}\n", meta.len());
    for line in meta {
        out.push_str(line);
        out.push('\n');
    }
    let tensors = store.to_tensors();
    out.push_str(&format!("tensors {}\n", tensors.len()));
    for (name, t) in tensors {
        out.push_str(&format!("tensor {name} {}", t.shape().len()));
        for d in t.shape() {
            out.push_str(&format!(" {d}"));
        }
        out.push('\n');
        let vals: Vec<String> = t.data().iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn checkpoint_from_str(text: &str) -> Result<(ParamStore, Vec<String>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| SldiError::FormatError(format!("truncated checkpoint: missing {what}")))
    };
    let (_, header) = next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(SldiError::FormatError("not an sldi checkpoint".into()));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| SldiError::FormatError("missing checkpoint version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(SldiError::FormatError(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = |line: (usize, &str), key: &str| -> Result<usize> {
        line.1
            .strip_prefix(key)
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| SldiError::ParseError { line: line.0, detail: format!("expected '{key} <count>'") })
    };
    let n_meta = count(next("meta")?, "meta")?;
    let mut meta = Vec::with_capacity(n_meta);
    for _ in 0..n_meta {
        meta.push(next("meta line")?.1.to_string());
    }
    let n_tensors = count(next("tensors")?, "tensors")?;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let (ln, head) = next("tensor header")?;
        let bad = |detail: &str| SldiError::ParseError { line: ln, detail: detail.to_string() };
        let fields: Vec<&str> = head.split_whitespace().collect();
        if fields.len() < 3 || fields[0] != "tensor" {
            return Err(bad("expected 'tensor <name> <rank> <dims...>'"));
        }
        let rank: usize = fields[2].parse().map_err(|_| bad("bad rank"))?;
        if fields.len() != 3 + rank {
            return Err(bad("rank does not match dimension count"));
        }
        let shape = fields[3..]
            .iter()
            .map(|d| d.parse::<usize>().map_err(|_| bad("bad dimension")))
            .collect::<Result<Vec<_>>>()?;
        let (vl, body) = next("tensor values")?;
        let data = body
            .split_whitespace()
            .map(|s| parse_f64(s).ok_or_else(|| SldiError::ParseError { line: vl, detail: format!("bad float {s}") }))
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| SldiError::ParseError { line: vl, detail: e.to_string() })?;
        tensors.push((fields[1].to_string(), t));
    }
    Ok((ParamStore::from_tensors(tensors)?, meta))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &[String]) -> Result<()> {
    fs::write(path, checkpoint_to_string(store, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, Vec<String>)> {
    checkpoint_from_str(&fs::read_to_string(path)?)
}

//! Dataset files.
//!
//! A dataset is two UTF-8 text files. The record file holds one sequence
//! per line, five tab-separated fields:
//!
//! ```text
//! id <TAB> split <TAB> timestamps <TAB> values <TAB> meta
//! ```
//!
//! * `split` is `train`, `val` or `test`.
//! * `timestamps` is a comma-separated list of floats.
//! * `values` holds one observation vector per timestamp, vectors separated
//!   by `;` and coordinates by `,`.
//! * `meta` is a `;`-separated list of `key=value` pairs.
//!
//! Every float is written as `{:.16e}` (17 significant digits), which
//! parses back to the identical `f64`. The header file, named by appending
//! `.header` to the record file path, contains
//!
//! ```text
//! sldi-dataset 1
//! sequences <count>
//! config <key>=<value>      (zero or more lines)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::seq::{Dataset, ObservationSeq, Split};
use crate::error::{Result, SldiError};
use crate::fmt::{fmt_f64, parse_f64};

pub const DATASET_MAGIC: &str = "sldi-dataset";
pub const DATASET_VERSION: u32 = 1;

pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".header");
    PathBuf::from(s)
}

fn check_token(what: &str, s: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r', ';', '=']) {
        return Err(SldiError::FormatError(format!("{what} '{s}' contains a reserved character")));
    }
    Ok(())
}

fn join_floats(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

fn record_line(seq: &ObservationSeq, split: Split) -> Result<String> {
    check_token("sequence id", &seq.id)?;
    if seq.id.contains(',') || seq.id.is_empty() {
        return Err(SldiError::FormatError(format!("bad sequence id '{}'", seq.id)));
    }
    let mut meta = Vec::with_capacity(seq.meta.len());
    for (k, v) in &seq.meta {
        check_token("meta key", k)?;
        check_token("meta value", v)?;
        meta.push(format!("{k}={v}"));
    }
    let values: Vec<String> = seq.values.iter().map(|v| join_floats(v)).collect();
    Ok(format!(
        "{}\t{}\t{}\t{}\t{}",
        seq.id,
        split.name(),
        join_floats(&seq.timestamps),
        values.join(";"),
        meta.join(";")
    ))
}

pub fn dataset_to_strings(ds: &Dataset) -> Result<(String, String)> {
    let mut header = format!("{DATASET_MAGIC} {DATASET_VERSION}\nsequences {}\n", ds.len());
    for (k, v) in &ds.config {
        check_token("config key", k)?;
        if v.contains(['\n', '\r']) {
            return Err(SldiError::FormatError(format!("config value for {k} spans lines")));
        }
        header.push_str(&format!("config {k}={v}\n"));
    }
    let mut body = String::new();
    for (seq, split) in ds.sequences.iter().zip(&ds.splits) {
        body.push_str(&record_line(seq, *split)?);
        body.push('\n');
    }
    Ok((header, body))
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let (header, body) = dataset_to_strings(ds)?;
    fs::write(header_path(path), header)?;
    fs::write(path, body)?;
    Ok(())
}

fn parse_floats(line: usize, field: &str, s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| {
            parse_f64(x).ok_or_else(|| SldiError::ParseError {
                line,
                detail: format!("bad number '{x}' in {field}"),
            })
        })
        .collect()
}

fn parse_record(line: usize, text: &str) -> Result<(ObservationSeq, Split)> {
    let perr = |detail: String| SldiError::ParseError { line, detail };
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() != 5 {
        return Err(perr(format!("expected 5 tab-separated fields, found {}", fields.len())));
    }
    let id = fields[0].to_string();
    let split = Split::from_name(fields[1]).ok_or_else(|| perr(format!("unknown split '{}'", fields[1])))?;
    let timestamps = parse_floats(line, "timestamps", fields[2])?;
    let values: Vec<Vec<f64>> = if fields[3].is_empty() {
        Vec::new()
    } else {
        fields[3]
            .split(';')
            .map(|v| parse_floats(line, "values", v))
            .collect::<Result<_>>()?
    };
    let meta = if fields[4].is_empty() {
        Vec::new()
    } else {
        fields[4]
            .split(';')
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| perr(format!("meta entry '{kv}' is not key=value")))
            })
            .collect::<Result<_>>()?
    };
    let seq = ObservationSeq::new(id.clone(), timestamps, values, meta)
        .map_err(|e| perr(format!("sequence {id}: {e}")))?;
    Ok((seq, split))
}

pub fn dataset_from_strings(header: &str, body: &str) -> Result<Dataset> {
    let mut lines = header.lines();
    let first = lines.next().unwrap_or("");
    let version = first
        .strip_prefix(DATASET_MAGIC)
        .map(str::trim)
        .ok_or_else(|| SldiError::FormatError(format!("not a dataset header: '{first}'")))?;
    if version != DATASET_VERSION.to_string() {
        return Err(SldiError::FormatError(format!(
            "dataset version {version} is not supported (expected {DATASET_VERSION})"
        )));
    }
    let count_line = lines.next().unwrap_or("");
    let count: usize = count_line
        .strip_prefix("sequences ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| SldiError::FormatError(format!("bad sequence count line '{count_line}'")))?;
    let mut config = Vec::new();
    for l in lines.filter(|l| !l.trim().is_empty()) {
        let kv = l
            .strip_prefix("config ")
            .and_then(|r| r.split_once('='))
            .ok_or_else(|| SldiError::FormatError(format!("bad header line '{l}'")))?;
        config.push((kv.0.to_string(), kv.1.to_string()));
    }
    let mut sequences = Vec::with_capacity(count);
    let mut splits = Vec::with_capacity(count);
    for (i, text) in body.lines().enumerate() {
        let (seq, split) = parse_record(i + 1, text)?;
        sequences.push(seq);
        splits.push(split);
    }
    if sequences.len() != count {
        return Err(SldiError::FormatError(format!(
            "header declares {count} sequences, file has {}",
            sequences.len()
        )));
    }
    Dataset::new(sequences, splits, config)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let header = fs::read_to_string(header_path(path))?;
    let body = fs::read_to_string(path)?;
    dataset_from_strings(&header, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let a = ObservationSeq::new(
            "a",
            vec![0.0, 0.1, 0.35],
            vec![vec![1.0, -2.5e-7], vec![0.1 + 0.2, 3.0], vec![-0.0, f64::MAX]],
            vec![("generator".into(), "ou".into()), ("seed".into(), "7".into())],
        )
        .unwrap();
        let b = ObservationSeq::new("b", vec![], vec![], vec![]).unwrap();
        Dataset::new(vec![a, b], vec![Split::Train, Split::Test], vec![("generator".into(), "ou".into())]).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = sample();
        let (h, b) = dataset_to_strings(&ds).unwrap();
        assert_eq!(dataset_from_strings(&h, &b).unwrap(), ds);
        let (h, b) = dataset_to_strings(&Dataset::empty()).unwrap();
        assert_eq!(dataset_from_strings(&h, &b).unwrap(), Dataset::empty());
    }

    #[test]
    fn decreasing_timestamps_name_the_sequence() {
        let (h, b) = dataset_to_strings(&sample()).unwrap();
        let bad = b.replacen("1.0000000000000001e-1", "9.0000000000000000e-1", 1);
        match dataset_from_strings(&h, &bad) {
            Err(SldiError::ParseError { line, detail }) => {
                assert_eq!(line, 1);
                assert!(detail.contains("sequence a"), "{detail}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_and_row_errors() {
        let (h, b) = dataset_to_strings(&sample()).unwrap();
        let h2 = h.replace("sldi-dataset 1", "sldi-dataset 2");
        assert!(matches!(dataset_from_strings(&h2, &b), Err(SldiError::FormatError(_))));
        let b2 = format!("{b}junk\n");
        assert!(matches!(dataset_from_strings(&h, &b2), Err(SldiError::ParseError { line: 3, .. })));
    }
}

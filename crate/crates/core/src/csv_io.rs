//! Minimal CSV helpers for the numeric files this crate reads and writes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::checkpoint_fmt as fmt_f64;

/// `first,p1,p2,...` with one numbered column per component for each prefix.
pub(crate) fn header_with(first: &str, prefixes: &[&str], dim: usize) -> String {
    let mut h = String::from(first);
    for p in prefixes {
        for j in 1..=dim {
            let _ = write!(h, ",{p}{j}");
        }
    }
    h.push('\n');
    h
}

pub(crate) fn push_record(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(v));
    }
    out.push('\n');
}

pub(crate) fn parse_f64(token: &str, path: &Path, line: usize) -> Result<f64> {
    token.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("not a number: `{token}`"),
    })
}

/// Parses a purely numeric CSV whose header is `first,prefix1,...,prefixM`.
pub(crate) fn parse_numeric(
    text: &str,
    path: &Path,
    first: &str,
    prefix: &str,
) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dim = cols.len().saturating_sub(1);
    let expected = header_with(first, &[prefix], dim);
    if dim == 0 || header.trim() != expected.trim() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header `{}`, found `{header}`", expected.trim()),
        });
    }
    lines
        .map(|(idx, line)| {
            let row = line
                .split(',')
                .map(|t| parse_f64(t, path, idx + 1))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != dim + 1 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("expected {} fields, found {}", dim + 1, row.len()),
                });
            }
            Ok(row)
        })
        .collect()
}

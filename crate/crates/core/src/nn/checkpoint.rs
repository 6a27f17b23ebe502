//! Text checkpoint: `FLOWMAP-CKPT v1`.
//!
//! ```text
//! FLOWMAP-CKPT v1
//! layer_dims 3 20 3
//! <one line per weight row, fan_in values>
//! <one line of biases>          (per layer, after its rows)
//! correction a1 a2 a3           (optional trailer)
//! ```
//!
//! Floats are written with 17 significant digits, which round-trips `f64`
//! exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::FeedForwardNet;
use crate::error::{Error, Result};

pub const HEADER: &str = "FLOWMAP-CKPT v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: FeedForwardNet,
    pub correction: Option<Vec<f64>>,
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

fn parse_row(line: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let values = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Checkpoint(format!("bad number `{t}` in {what}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{what}: expected {expected} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

impl Checkpoint {
    pub fn new(net: FeedForwardNet, correction: Option<Vec<f64>>) -> Self {
        Self { net, correction }
    }

    pub fn to_text(&self) -> String {
        let net = &self.net;
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        out.push_str("layer_dims");
        for d in net.dims() {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
        for k in 0..net.num_layers() {
            let fan_in = net.dims()[k];
            for row in net.layer_weights(k).chunks(fan_in) {
                push_row(&mut out, row);
            }
            push_row(&mut out, net.layer_bias(k));
        }
        if let Some(a) = &self.correction {
            out.push_str("correction ");
            push_row(&mut out, a);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == HEADER => {}
            Some(h) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported header `{}` (expected `{HEADER}`)",
                    h.trim()
                )))
            }
            None => return Err(Error::Checkpoint("empty file".into())),
        }
        let dims_line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("missing layer_dims".into()))?;
        let dims = dims_line
            .strip_prefix("layer_dims")
            .ok_or_else(|| Error::Checkpoint("second line must be layer_dims".into()))?
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("bad layer width `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = FeedForwardNet::zeros(&dims)
            .map_err(|e| Error::Checkpoint(format!("layer_dims: {e}")))?;

        for k in 0..net.num_layers() {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let mut weights = Vec::with_capacity(fan_in * fan_out);
            for r in 0..fan_out {
                let line = lines.next().ok_or_else(|| {
                    Error::Checkpoint(format!("truncated in layer {k} weight row {r}"))
                })?;
                weights.extend(parse_row(line, fan_in, "weight row")?);
            }
            let line = lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("truncated in layer {k} biases")))?;
            let bias = parse_row(line, fan_out, "bias vector")?;
            net.layer_weights_mut(k).copy_from_slice(&weights);
            net.layer_bias_mut(k).copy_from_slice(&bias);
        }

        let correction = match lines.next() {
            None => None,
            Some(line) => {
                let rest = line.strip_prefix("correction").ok_or_else(|| {
                    Error::Checkpoint(format!("unexpected trailing line `{line}`"))
                })?;
                Some(parse_row(rest, net.output_dim(), "correction trailer")?)
            }
        };
        if let Some(extra) = lines.next() {
            return Err(Error::Checkpoint(format!("unexpected trailing line `{extra}`")));
        }
        Ok(Self { net, correction })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

//! Iterating a flow map from an initial condition and scoring the result
//! against a fine-grid reference trajectory.

use std::fmt::Write as _;
use std::path::Path;

use crate::csv_io;
use crate::dynamics::{self, Method, Trajectory, VectorField};
use crate::error::{check_len, Error, Result};
use crate::nn::FeedForwardNet;
use crate::supervised::{state_relative_error, DENOM_FLOOR};

/// Anything that advances a state by one fixed step.
pub trait FlowMap {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl FlowMap for FeedForwardNet {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }
}

/// One step of a classical integrator viewed as a flow map.
#[derive(Debug, Clone)]
pub struct IntegratorMap<F> {
    pub field: F,
    pub dt: f64,
    pub method: Method,
}

impl<F: VectorField> FlowMap for IntegratorMap<F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(dynamics::step(self.method, &self.field, x, self.dt))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Every finite state, starting with `x0`.
    pub trajectory: Trajectory,
    /// False when a non-finite state cut the rollout short.
    pub complete: bool,
}

/// Applies `map` `n_steps` times from `x0`.
pub fn rollout<M: FlowMap + ?Sized>(map: &M, x0: &[f64], dt: f64, n_steps: usize) -> Result<Rollout> {
    check_len("initial state", map.dim(), x0.len())?;
    if n_steps == 0 {
        return Err(Error::InvalidArgument("rollout needs at least one step".into()));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0.to_vec());
    let mut complete = true;
    for _ in 0..n_steps {
        let next = map.apply(states.last().map(Vec::as_slice).unwrap_or(x0))?;
        if next.iter().any(|v| !v.is_finite()) {
            complete = false;
            break;
        }
        states.push(next);
    }
    Ok(Rollout {
        trajectory: Trajectory::new(0.0, dt, states)?,
        complete,
    })
}

/// Rollout over `[0, t_end]` on a `dt` grid.
pub fn rollout_until<M: FlowMap + ?Sized>(map: &M, x0: &[f64], dt: f64, t_end: f64) -> Result<Rollout> {
    let n = dynamics::integral_steps(t_end, dt, "t_end / dt")?;
    rollout(map, x0, dt, n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareConfig {
    /// Trailing window of the rolling mean error.
    pub window: usize,
    pub threshold: f64,
    /// Largest magnitude a bounded trajectory may reach.
    pub bound: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            window: 5,
            threshold: 0.2,
            bound: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    pub predicted: Trajectory,
    /// Reference states on the prediction grid.
    pub truth: Trajectory,
    pub per_step_rel_err: Vec<f64>,
    pub divergence_time: Option<f64>,
    pub bounded: bool,
    pub max_abs: f64,
}

/// First grid time at which the trailing `window`-step mean of `errors`
/// exceeds `threshold`; windows at the start are partial.
pub fn divergence_time(errors: &[f64], times: impl Fn(usize) -> f64, window: usize, threshold: f64) -> Option<f64> {
    let window = window.max(1);
    (0..errors.len())
        .find(|&i| {
            let span = &errors[(i + 1).saturating_sub(window)..=i];
            span.iter().sum::<f64>() / span.len() as f64 > threshold
        })
        .map(times)
}

/// Index stride `k` with `pred.dt = k * truth.dt`, checked against both grids.
fn grid_stride(pred: &Trajectory, truth: &Trajectory) -> Result<usize> {
    let ratio = pred.dt() / truth.dt();
    let k = ratio.round();
    if !(k >= 1.0) || (ratio - k).abs() > 1e-6 * k {
        return Err(Error::GridMismatch(format!(
            "prediction step {} is not an integer multiple of the reference step {}",
            pred.dt(),
            truth.dt()
        )));
    }
    if (pred.t0() - truth.t0()).abs() > 1e-9 * truth.dt().max(1.0) {
        return Err(Error::GridMismatch(format!(
            "prediction starts at t = {} but the reference starts at t = {}",
            pred.t0(),
            truth.t0()
        )));
    }
    let k = k as usize;
    let needed = (pred.len() - 1) * k;
    if needed >= truth.len() {
        return Err(Error::GridMismatch(format!(
            "reference ends at t = {} but the prediction runs to t = {}; regenerate the reference over a longer span",
            truth.t_end(),
            pred.t_end()
        )));
    }
    Ok(k)
}

pub fn compare(pred: &Trajectory, truth_fine: &Trajectory) -> Result<RolloutReport> {
    compare_with(pred, truth_fine, &CompareConfig::default())
}

pub fn compare_with(pred: &Trajectory, truth_fine: &Trajectory, cfg: &CompareConfig) -> Result<RolloutReport> {
    check_len("state dimension", truth_fine.dim(), pred.dim())?;
    let k = grid_stride(pred, truth_fine)?;
    let truth_states: Vec<Vec<f64>> = (0..pred.len()).map(|i| truth_fine.states()[i * k].clone()).collect();
    let truth = Trajectory::new(pred.t0(), pred.dt(), truth_states)?;
    Ok(score(pred.clone(), truth, cfg))
}

fn score(predicted: Trajectory, truth: Trajectory, cfg: &CompareConfig) -> RolloutReport {
    let per_step_rel_err: Vec<f64> = predicted
        .states()
        .iter()
        .zip(truth.states())
        .map(|(p, t)| state_relative_error(p, t, DENOM_FLOOR))
        .collect();
    let divergence_time = divergence_time(&per_step_rel_err, |i| predicted.time(i), cfg.window, cfg.threshold);
    let max_abs = predicted
        .states()
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
    RolloutReport {
        bounded: max_abs <= cfg.bound,
        predicted,
        truth,
        per_step_rel_err,
        divergence_time,
        max_abs,
    }
}

fn compare_header(dim: usize) -> String {
    let mut h = String::from("t");
    for suffix in ["true", "pred"] {
        for j in 1..=dim {
            let _ = write!(h, ",x{j}_{suffix}");
        }
    }
    h.push_str(",rel_err\n");
    h
}

impl RolloutReport {
    pub fn to_csv(&self) -> String {
        let mut out = compare_header(self.predicted.dim());
        for (i, ((p, t), e)) in self
            .predicted
            .states()
            .iter()
            .zip(self.truth.states())
            .zip(&self.per_step_rel_err)
            .enumerate()
        {
            let values = std::iter::once(self.predicted.time(i))
                .chain(t.iter().copied())
                .chain(p.iter().copied())
                .chain(std::iter::once(*e));
            csv_io::push_record(&mut out, values);
        }
        out
    }

    /// Rebuilds a report from [`to_csv`](Self::to_csv) output, rescoring
    /// with `cfg`.
    pub fn from_csv(text: &str, path: &Path, cfg: &CompareConfig) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
        let fields = header.split(',').count();
        if fields < 4 || (fields - 2) % 2 != 0 {
            return Err(parse_err(1, format!("unexpected header `{header}`")));
        }
        let dim = (fields - 2) / 2;
        if header.trim() != compare_header(dim).trim() {
            return Err(parse_err(1, format!("expected header `{}`", compare_header(dim).trim())));
        }
        let (mut times, mut truth, mut pred) = (Vec::new(), Vec::new(), Vec::new());
        for (idx, line) in lines {
            let row = line
                .split(',')
                .map(|t| csv_io::parse_f64(t, path, idx + 1))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != fields {
                return Err(parse_err(idx + 1, format!("expected {fields} fields, found {}", row.len())));
            }
            times.push(row[0]);
            truth.push(row[1..=dim].to_vec());
            pred.push(row[dim + 1..=2 * dim].to_vec());
        }
        if times.is_empty() {
            return Err(Error::InsufficientData(format!("{} contains no rows", path.display())));
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        let predicted = Trajectory::new(times[0], dt, pred)?;
        let truth = Trajectory::new(times[0], dt, truth)?;
        Ok(score(predicted, truth, cfg))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// One-line summary: divergence time and largest excursion.
    pub fn summary(&self) -> String {
        let div = self
            .divergence_time
            .map_or_else(|| "none".to_string(), |t| format!("{t}"));
        format!(
            "divergence_time={div} max_abs={} bounded={} steps={}",
            self.max_abs,
            self.bounded,
            self.predicted.len() - 1
        )
    }
}

//! Vector fields, one-step integrators and reference trajectories.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::csv_io;
use crate::error::{Error, Result};

/// States with any component above this magnitude count as a blowup.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

/// Autonomous first-order system `dx/dt = f(x)`.
pub trait VectorField {
    fn dim(&self) -> usize;

    /// Writes `f(x)` into `out`. Both slices have length [`dim`](Self::dim).
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzField {
    sigma: f64,
    rho: f64,
    beta: f64,
}

impl Default for LorenzField {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

impl LorenzField {
    pub fn new(sigma: f64, rho: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("sigma", sigma), ("rho", rho), ("beta", beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "Lorenz {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self { sigma, rho, beta })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl VectorField for LorenzField {
    fn dim(&self) -> usize {
        3
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma * (x[1] - x[0]);
        out[1] = self.rho * x[0] - x[1] - x[0] * x[2];
        out[2] = x[0] * x[1] - self.beta * x[2];
    }
}

/// `lorenz_rhs` with explicit shape checking.
pub fn lorenz_rhs(field: &LorenzField, x: &[f64]) -> Result<Vec<f64>> {
    crate::error::check_len("Lorenz state", 3, x.len())?;
    Ok(field.eval(x))
}

/// Linear field `f(x) = L x` with a dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    dim: usize,
    matrix: Vec<f64>,
}

impl LinearField {
    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        crate::error::check_len("linear field matrix", dim * dim, matrix.len())?;
        Ok(Self { dim, matrix })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut matrix = vec![0.0; dim * dim];
        for (i, d) in diag.iter().enumerate() {
            matrix[i * dim + i] = *d;
        }
        Self { dim, matrix }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            matrix: vec![0.0; dim * dim],
        }
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.matrix[i * self.dim..(i + 1) * self.dim]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Euler,
    Rk4,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::InvalidArgument(format!(
                "unknown integrator `{other}` (expected euler or rk4)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
        })
    }
}

/// `x + dt f(x)`.
pub fn euler_step<F: VectorField + ?Sized>(field: &F, x: &[f64], dt: f64) -> Vec<f64> {
    let fx = field.eval(x);
    x.iter().zip(&fx).map(|(xi, fi)| xi + dt * fi).collect()
}

/// Classical four-stage increment `(k1 + 2k2 + 2k3 + k4) / 6`, so that
/// `rk4_step = x + dt * rk4_increment`.
pub fn rk4_increment<F: VectorField + ?Sized>(field: &F, x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let k1 = field.eval(x);
    let stage = |k: &[f64], c: f64| -> Vec<f64> { (0..n).map(|i| x[i] + c * k[i]).collect() };
    let k2 = field.eval(&stage(&k1, 0.5 * dt));
    let k3 = field.eval(&stage(&k2, 0.5 * dt));
    let k4 = field.eval(&stage(&k3, dt));
    (0..n)
        .map(|i| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0)
        .collect()
}

pub fn rk4_step<F: VectorField + ?Sized>(field: &F, x: &[f64], dt: f64) -> Vec<f64> {
    let inc = rk4_increment(field, x, dt);
    x.iter().zip(&inc).map(|(xi, k)| xi + dt * k).collect()
}

pub fn step<F: VectorField + ?Sized>(method: Method, field: &F, x: &[f64], dt: f64) -> Vec<f64> {
    match method {
        Method::Euler => euler_step(field, x, dt),
        Method::Rk4 => rk4_step(field, x, dt),
    }
}

/// Uniformly spaced states; `states[i]` sits at `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t0: f64,
    dt: f64,
    states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, states: Vec<Vec<f64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InsufficientData("trajectory has no states".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "trajectory spacing must be positive, got {dt}"
            )));
        }
        let m = states[0].len();
        if let Some(bad) = states.iter().position(|s| s.len() != m) {
            return Err(Error::shape("trajectory state", m, states[bad].len()));
        }
        Ok(Self { t0, dt, states })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn into_states(self) -> Vec<Vec<f64>> {
        self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    /// Keeps every `stride`-th state starting at index 0.
    pub fn subsample(&self, stride: usize) -> Result<Trajectory> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        Ok(Trajectory {
            t0: self.t0,
            dt: self.dt * stride as f64,
            states: self.states.iter().step_by(stride).cloned().collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let header = csv_io::header_with("t", &["x"], self.dim());
        let mut out = header;
        for (i, s) in self.states.iter().enumerate() {
            csv_io::push_record(&mut out, std::iter::once(self.time(i)).chain(s.iter().copied()));
        }
        out
    }

    /// Parses `t,x1,...,xM`; spacing is taken from the first two rows.
    pub fn from_csv(text: &str, source: &Path) -> Result<Trajectory> {
        let rows = csv_io::parse_numeric(text, source, "t", "x")?;
        if rows.is_empty() {
            return Err(Error::InsufficientData(format!(
                "{} contains no rows",
                source.display()
            )));
        }
        let t0 = rows[0][0];
        let dt = if rows.len() > 1 { rows[1][0] - t0 } else { 1.0 };
        let states = rows.into_iter().map(|r| r[1..].to_vec()).collect();
        Trajectory::new(t0, dt, states)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Trajectory> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

/// `subsample` as a free function.
pub fn subsample(traj: &Trajectory, stride: usize) -> Result<Trajectory> {
    traj.subsample(stride)
}

/// Integer step count for `span / dt`, tolerating a few ulps of rounding.
pub(crate) fn integral_steps(span: f64, dt: f64, what: &str) -> Result<usize> {
    let ratio = span / dt;
    let n = ratio.round();
    if !(n >= 1.0) || (ratio - n).abs() > 4.0 * f64::EPSILON * n {
        return Err(Error::InvalidArgument(format!(
            "{what}: {span} is not an integer multiple of {dt}"
        )));
    }
    Ok(n as usize)
}

pub(crate) fn is_blown_up(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD)
}

/// Integrates from `x0` on `[0, t_end]` with a fixed fine step.
pub fn generate_reference<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    dt_fine: f64,
    t_end: f64,
    method: Method,
) -> Result<Trajectory> {
    crate::error::check_len("initial state", field.dim(), x0.len())?;
    if !(dt_fine > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt_fine and t_end must be positive (got {dt_fine}, {t_end})"
        )));
    }
    let n_steps = integral_steps(t_end, dt_fine, "t_end / dt_fine")?;
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0.to_vec());
    for j in 1..=n_steps {
        let next = step(method, field, &states[j - 1], dt_fine);
        if is_blown_up(&next) {
            return Err(Error::IntegrationBlowup { step: j });
        }
        states.push(next);
    }
    Trajectory::new(0.0, dt_fine, states)
}

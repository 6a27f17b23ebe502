//! Run configuration: a flat `key = value` text format with `#` comments.
//! Unset keys take the defaults of the Lorenz experiment.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ac::AcConfig;
use crate::constraints::ConstraintScheme;
use crate::dataset::CloudParams;
use crate::dynamics::{self, LorenzField};
use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::nn::layer_dims;
use crate::supervised::SupervisedConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Supervised,
    Gan,
    Ac,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Mode::Supervised),
            "gan" => Ok(Mode::Gan),
            "ac" => Ok(Mode::Ac),
            other => Err(Error::config("mode", format!("unknown mode `{other}` (expected supervised, gan or ac)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Supervised => "supervised",
            Mode::Gan => "gan",
            Mode::Ac => "ac",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub x0: Vec<f64>,
    pub dt_fine: f64,
    pub t_train_end: f64,
    pub t_eval_end: f64,
    pub stride: usize,
    pub n_cloud: usize,
    pub r_range: f64,
    /// Expected sample count; checked against the generated dataset.
    pub n_samples: Option<usize>,
    pub mode: Mode,
    pub constraints: ConstraintScheme,
    pub seed: u64,
    pub out_dir: PathBuf,

    pub hidden_width: usize,
    /// Defaults per mode: 10 (supervised, ac) or 9 (gan).
    pub hidden_layers: Option<usize>,
    /// Defaults per mode: 1000 (supervised, gan) or 33 (ac).
    pub batch_size: Option<usize>,
    pub lr: f64,

    pub epochs: usize,
    pub tol: Option<f64>,
    pub patience: usize,
    pub lr_factor: f64,
    pub lr_floor: f64,

    pub disc_hidden_layers: usize,
    pub sigma_d: f64,
    pub d_steps: usize,
    pub gan_epochs: usize,
    pub lr_disc: f64,

    pub critic_hidden_layers: usize,
    pub gamma: f64,
    pub tau: f64,
    pub homotopy_step: f64,
    pub homotopy_interval: usize,
    pub fixed_delta: Option<f64>,
    pub iterations: usize,
    pub lr_critic: f64,

    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            x0: vec![0.0, 1.0, 0.0],
            dt_fine: 1e-4,
            t_train_end: 3.0,
            t_eval_end: 9.0,
            stride: 150,
            n_cloud: 100,
            r_range: 0.02,
            n_samples: None,
            mode: Mode::Supervised,
            constraints: ConstraintScheme::EULER_EC,
            seed: 0,
            out_dir: PathBuf::from("out"),
            hidden_width: 20,
            hidden_layers: None,
            batch_size: None,
            lr: 1e-3,
            epochs: 100_000,
            tol: None,
            patience: SupervisedConfig::default().patience,
            lr_factor: 0.5,
            lr_floor: 1e-6,
            disc_hidden_layers: 2,
            sigma_d: 1e-3,
            d_steps: 1,
            gan_epochs: 1000,
            lr_disc: 1e-3,
            critic_hidden_layers: 15,
            gamma: 1.0,
            tau: 0.001,
            homotopy_step: 0.1,
            homotopy_interval: 2000,
            fixed_delta: None,
            iterations: 20_000,
            lr_critic: 1e-3,
            explicit: BTreeSet::new(),
        }
    }
}

/// Keys that only make sense for one training mode.
const MODE_KEYS: &[(&str, Mode)] = &[
    ("epochs", Mode::Supervised),
    ("tol", Mode::Supervised),
    ("patience", Mode::Supervised),
    ("lr_factor", Mode::Supervised),
    ("lr_floor", Mode::Supervised),
    ("disc_hidden_layers", Mode::Gan),
    ("sigma_d", Mode::Gan),
    ("d_steps", Mode::Gan),
    ("gan_epochs", Mode::Gan),
    ("lr_disc", Mode::Gan),
    ("critic_hidden_layers", Mode::Ac),
    ("gamma", Mode::Ac),
    ("tau", Mode::Ac),
    ("homotopy_step", Mode::Ac),
    ("homotopy_interval", Mode::Ac),
    ("fixed_delta", Mode::Ac),
    ("iterations", Mode::Ac),
    ("lr_critic", Mode::Ac),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    if value == "none" || value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

pub fn parse_vector(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|t| parse::<f64>(key, t.trim())).collect()
}

fn show_optional<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "sigma" => self.sigma = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "x0" => self.x0 = parse_vector(key, value)?,
            "dt_fine" => self.dt_fine = parse(key, value)?,
            "t_train_end" => self.t_train_end = parse(key, value)?,
            "t_eval_end" => self.t_eval_end = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "n_cloud" => self.n_cloud = parse(key, value)?,
            "r_range" => self.r_range = parse(key, value)?,
            "n_samples" => self.n_samples = parse_optional(key, value)?,
            "mode" => self.mode = value.parse()?,
            "constraints" => {
                self.constraints = value.parse().map_err(|e: Error| Error::config(key, e.to_string()))?
            }
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "hidden_width" => self.hidden_width = parse(key, value)?,
            "hidden_layers" => self.hidden_layers = parse_optional(key, value)?,
            "batch_size" => self.batch_size = parse_optional(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "tol" => self.tol = parse_optional(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "lr_factor" => self.lr_factor = parse(key, value)?,
            "lr_floor" => self.lr_floor = parse(key, value)?,
            "disc_hidden_layers" => self.disc_hidden_layers = parse(key, value)?,
            "sigma_d" => self.sigma_d = parse(key, value)?,
            "d_steps" => self.d_steps = parse(key, value)?,
            "gan_epochs" => self.gan_epochs = parse(key, value)?,
            "lr_disc" => self.lr_disc = parse(key, value)?,
            "critic_hidden_layers" => self.critic_hidden_layers = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "homotopy_step" => self.homotopy_step = parse(key, value)?,
            "homotopy_interval" => self.homotopy_interval = parse(key, value)?,
            "fixed_delta" => self.fixed_delta = parse_optional(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "lr_critic" => self.lr_critic = parse(key, value)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "expected key=value"))?;
        self.set(k.trim(), v)
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: PathBuf::from("<config>"),
                line: i + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    /// Every key with its effective value, in a form [`parse_text`](Self::parse_text) reads back.
    pub fn to_text(&self) -> String {
        let x0: Vec<String> = self.x0.iter().map(f64::to_string).collect();
        let rows: Vec<(&str, String)> = vec![
            ("sigma", self.sigma.to_string()),
            ("rho", self.rho.to_string()),
            ("beta", self.beta.to_string()),
            ("x0", x0.join(",")),
            ("dt_fine", self.dt_fine.to_string()),
            ("t_train_end", self.t_train_end.to_string()),
            ("t_eval_end", self.t_eval_end.to_string()),
            ("stride", self.stride.to_string()),
            ("n_cloud", self.n_cloud.to_string()),
            ("r_range", self.r_range.to_string()),
            ("n_samples", show_optional(&self.n_samples)),
            ("mode", self.mode.to_string()),
            ("constraints", self.constraints.to_string()),
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("hidden_width", self.hidden_width.to_string()),
            ("hidden_layers", self.hidden_layers().to_string()),
            ("batch_size", self.batch_size().to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("tol", show_optional(&self.tol)),
            ("patience", self.patience.to_string()),
            ("lr_factor", self.lr_factor.to_string()),
            ("lr_floor", self.lr_floor.to_string()),
            ("disc_hidden_layers", self.disc_hidden_layers.to_string()),
            ("sigma_d", self.sigma_d.to_string()),
            ("d_steps", self.d_steps.to_string()),
            ("gan_epochs", self.gan_epochs.to_string()),
            ("lr_disc", self.lr_disc.to_string()),
            ("critic_hidden_layers", self.critic_hidden_layers.to_string()),
            ("gamma", self.gamma.to_string()),
            ("tau", self.tau.to_string()),
            ("homotopy_step", self.homotopy_step.to_string()),
            ("homotopy_interval", self.homotopy_interval.to_string()),
            ("fixed_delta", show_optional(&self.fixed_delta)),
            ("iterations", self.iterations.to_string()),
            ("lr_critic", self.lr_critic.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn field(&self) -> Result<LorenzField> {
        LorenzField::new(self.sigma, self.rho, self.beta)
    }

    /// Flow-map step `dt_fine * stride`.
    pub fn dt(&self) -> f64 {
        self.dt_fine * self.stride as f64
    }

    pub fn hidden_layers(&self) -> usize {
        self.hidden_layers.unwrap_or(match self.mode {
            Mode::Gan => 9,
            Mode::Supervised | Mode::Ac => 10,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(match self.mode {
            Mode::Ac => 33,
            Mode::Supervised | Mode::Gan => 1000,
        })
    }

    pub fn cloud_params(&self) -> CloudParams {
        CloudParams {
            n_cloud: self.n_cloud,
            r_range: self.r_range,
            seed: self.seed,
        }
    }

    /// Samples the configured trajectory and cloud produce:
    /// `(t_train_end / (dt_fine * stride)) * n_cloud`.
    pub fn expected_samples(&self) -> Result<usize> {
        let fine = dynamics::integral_steps(self.t_train_end, self.dt_fine, "t_train_end / dt_fine")
            .map_err(|e| Error::config("t_train_end", e.to_string()))?;
        if self.stride == 0 || fine % self.stride != 0 {
            return Err(Error::config(
                "stride",
                format!("{fine} fine steps are not a multiple of stride {}", self.stride),
            ));
        }
        Ok(fine / self.stride * self.n_cloud)
    }

    /// Checks ranges and that no key of another mode was set explicitly.
    pub fn validate(&self) -> Result<()> {
        self.field()?;
        if self.x0.len() != 3 {
            return Err(Error::config("x0", format!("expected 3 components, got {}", self.x0.len())));
        }
        if !(self.dt_fine > 0.0) {
            return Err(Error::config("dt_fine", "must be positive"));
        }
        if !(self.t_eval_end >= self.t_train_end) {
            return Err(Error::config("t_eval_end", "must not be shorter than t_train_end"));
        }
        if self.n_cloud == 0 {
            return Err(Error::config("n_cloud", "must be at least 1"));
        }
        if !(self.r_range >= 0.0 && self.r_range < 1.0) {
            return Err(Error::config("r_range", "must lie in [0, 1)"));
        }
        let expected = self.expected_samples()?;
        if let Some(n) = self.n_samples {
            if n != expected {
                return Err(Error::config(
                    "n_samples",
                    format!("the trajectory and cloud settings give {expected} samples, not {n}"),
                ));
            }
        }
        for (key, mode) in MODE_KEYS {
            if *mode != self.mode && self.explicit.contains(*key) {
                return Err(Error::config(
                    *key,
                    format!("only applies to mode {mode}, but mode is {}", self.mode),
                ));
            }
        }
        Ok(())
    }

    pub fn supervised(&self) -> SupervisedConfig {
        SupervisedConfig {
            dims: layer_dims(3, self.hidden_width, self.hidden_layers(), 3),
            batch_size: self.batch_size(),
            max_epochs: self.epochs,
            learning_rate: self.lr,
            tol: self.tol,
            scheme: self.constraints,
            dt: self.dt(),
            seed: self.seed,
            patience: self.patience,
            lr_factor: self.lr_factor,
            lr_floor: self.lr_floor,
        }
    }

    pub fn gan(&self) -> GanConfig {
        GanConfig {
            generator_dims: layer_dims(3, self.hidden_width, self.hidden_layers(), 3),
            discriminator_hidden: vec![self.hidden_width; self.disc_hidden_layers],
            sigma_d: self.sigma_d,
            batch_size: self.batch_size(),
            d_steps: self.d_steps,
            epochs: self.gan_epochs,
            lr_generator: self.lr,
            lr_discriminator: self.lr_disc,
            scheme: self.constraints,
            dt: self.dt(),
            seed: self.seed,
        }
    }

    pub fn ac(&self) -> AcConfig {
        AcConfig {
            policy_dims: layer_dims(3, self.hidden_width, self.hidden_layers(), 3),
            critic_hidden: vec![self.hidden_width; self.critic_hidden_layers],
            gamma: self.gamma,
            tau: self.tau,
            batch_size: self.batch_size(),
            homotopy_step: self.homotopy_step,
            homotopy_interval: self.homotopy_interval,
            fixed_delta: self.fixed_delta,
            iterations: self.iterations,
            lr_policy: self.lr,
            lr_critic: self.lr_critic,
            scheme: self.constraints,
            dt: self.dt(),
            seed: self.seed,
        }
    }
}

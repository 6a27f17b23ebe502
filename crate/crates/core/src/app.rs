//! Subcommand bodies behind the `flowmap` binary. Each writes its artifacts
//! and returns a summary the binary prints.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::ac::train_ac;
use crate::config::{Mode, RunConfig};
use crate::constraints::{residual, residual_grads, ConstraintScheme, ErrorCorrection};
use crate::dataset::{NoiseCloudDataset, EQUAL_THIRDS};
use crate::dynamics::{generate_reference, LorenzField, Method, Trajectory};
use crate::error::{Error, Result};
use crate::gan::train_gan;
use crate::nn::{grad_check, layer_dims, Checkpoint, FeedForwardNet};
use crate::oracles::fd_jacobian;
use crate::rng;
use crate::rollout::{compare, rollout_until, RolloutReport};
use crate::supervised::{default_tol, train_supervised};

pub const TRUTH_FILE: &str = "truth.csv";
pub const TRUTH_EVAL_FILE: &str = "truth_eval.csv";
pub const DATASET_FILE: &str = "dataset.csv";
pub const CONFIG_FILE: &str = "config.effective";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "report.csv";
pub const DISCRIMINATOR_FILE: &str = "discriminator.ckpt";
pub const CRITIC_FILE: &str = "critic.ckpt";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_config(cfg: &RunConfig) -> Result<PathBuf> {
    let path = cfg.out_dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Fine reference trajectory over `[0, t_eval_end]`.
pub fn reference_trajectory(cfg: &RunConfig) -> Result<Trajectory> {
    let field = cfg.field()?;
    generate_reference(&field, &cfg.x0, cfg.dt_fine, cfg.t_eval_end, Method::Euler)
}

/// The training span `[0, t_train_end]` of a reference trajectory.
pub fn training_span(cfg: &RunConfig, reference: &Trajectory) -> Result<Trajectory> {
    let n = cfg.expected_samples()? / cfg.n_cloud * cfg.stride;
    let states = reference
        .states()
        .get(..=n)
        .ok_or_else(|| Error::InsufficientData(format!("reference has {} states, need {}", reference.len(), n + 1)))?;
    Trajectory::new(reference.t0(), reference.dt(), states.to_vec())
}

/// Truth trajectories and noise-cloud dataset for `cfg`, without touching disk.
pub fn generate(cfg: &RunConfig) -> Result<(Trajectory, Trajectory, NoiseCloudDataset)> {
    cfg.validate()?;
    let reference = reference_trajectory(cfg)?;
    let truth = training_span(cfg, &reference)?;
    let data = NoiseCloudDataset::generate(&truth.subsample(cfg.stride)?, cfg.cloud_params(), EQUAL_THIRDS)?;
    Ok((truth, reference, data))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub truth_states: usize,
    pub eval_states: usize,
    pub sizes: [usize; 3],
    pub tol: f64,
}

impl GenSummary {
    pub fn samples(&self) -> usize {
        self.sizes.iter().sum()
    }
}

impl fmt::Display for GenSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "truth: {} states", self.truth_states)?;
        writeln!(f, "eval truth: {} states", self.eval_states)?;
        writeln!(
            f,
            "dataset: {} samples (train {}, val {}, test {})",
            self.samples(),
            self.sizes[0],
            self.sizes[1],
            self.sizes[2]
        )?;
        write!(f, "TOL = {:.6}", self.tol)
    }
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<GenSummary> {
    let (truth, reference, data) = generate(cfg)?;
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    truth.save_csv(&out.join(TRUTH_FILE))?;
    reference.save_csv(&out.join(TRUTH_EVAL_FILE))?;
    data.save_csv(&out.join(DATASET_FILE))?;
    write_config(cfg)?;
    Ok(GenSummary {
        truth_states: truth.len(),
        eval_states: reference.len(),
        sizes: [data.train.len(), data.val.len(), data.test.len()],
        tol: default_tol(data.len()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub mode: Mode,
    pub steps: usize,
    /// Final validation RE (supervised), generator loss (gan) or mean reward (ac).
    pub final_metric: Option<f64>,
    pub correction: Option<Vec<f64>>,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub diverged: Option<String>,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (unit, metric) = match self.mode {
            Mode::Supervised => ("epochs", "val_RE"),
            Mode::Gan => ("epochs", "g_loss"),
            Mode::Ac => ("iterations", "mean_reward"),
        };
        let value = self.final_metric.map_or_else(|| "none".to_string(), |v| format!("{v:.6e}"));
        writeln!(f, "mode {}: {} {unit}, final {metric} {value}", self.mode, self.steps)?;
        if let Some(a) = &self.correction {
            writeln!(f, "correction a = {a:?}")?;
        }
        writeln!(f, "checkpoint: {}", self.checkpoint.display())?;
        write!(f, "report: {}", self.report.display())?;
        if let Some(msg) = &self.diverged {
            write!(f, "\ndiverged: {msg}")?;
        }
        Ok(())
    }
}

fn correction_trailer(scheme: ConstraintScheme, ec: &ErrorCorrection) -> Option<Vec<f64>> {
    scheme.uses_correction().then(|| ec.a.clone())
}

/// Trains the configured mode on `data_dir/dataset.csv` and writes the
/// checkpoint and report into the output directory. Divergence still writes
/// both files; [`check_divergence`] turns it into an error.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = NoiseCloudDataset::load_csv(&data_dir.join(DATASET_FILE), cfg.cloud_params())?;
    let field = cfg.field()?;
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    write_config(cfg)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    let report = out.join(REPORT_FILE);

    let summary = |steps, final_metric, correction, diverged| TrainSummary {
        mode: cfg.mode,
        steps,
        final_metric,
        correction,
        checkpoint: checkpoint.clone(),
        report: report.clone(),
        diverged,
    };
    match cfg.mode {
        Mode::Supervised => {
            let o = train_supervised(&cfg.supervised(), &data, &field)?;
            let a = correction_trailer(cfg.constraints, &o.correction);
            Checkpoint::new(o.net, a.clone()).save(&checkpoint)?;
            o.report.save_csv(&report)?;
            Ok(summary(o.report.epochs.len(), o.report.final_val_re(), a, o.report.diverged))
        }
        Mode::Gan => {
            let o = train_gan(&cfg.gan(), &data, &field)?;
            let a = correction_trailer(cfg.constraints, &o.correction);
            Checkpoint::new(o.generator, a.clone()).save(&checkpoint)?;
            Checkpoint::new(o.discriminator, None).save(&out.join(DISCRIMINATOR_FILE))?;
            o.report.save_csv(&report)?;
            let last = o.report.epochs.last().map(|e| e.g_loss);
            Ok(summary(o.report.epochs.len(), last, a, o.report.diverged))
        }
        Mode::Ac => {
            let o = train_ac(&cfg.ac(), &data, &field)?;
            let a = correction_trailer(cfg.constraints, &o.correction);
            Checkpoint::new(o.nets.policy, a.clone()).save(&checkpoint)?;
            Checkpoint::new(o.nets.critic, None).save(&out.join(CRITIC_FILE))?;
            o.report.save_csv(&report)?;
            let last = o.report.iterations.last().map(|r| r.mean_reward);
            Ok(summary(o.report.iterations.len(), last, a, o.report.diverged))
        }
    }
}

pub fn check_divergence(summary: &TrainSummary) -> Result<()> {
    match &summary.diverged {
        Some(msg) => Err(Error::Divergence(msg.clone())),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictSummary {
    pub rows: usize,
    pub complete: bool,
    pub path: PathBuf,
}

impl fmt::Display for PredictSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "prediction: {} rows -> {}", self.rows, self.path.display())?;
        if !self.complete {
            write!(f, " (stopped early at a non-finite state)")?;
        }
        Ok(())
    }
}

/// Rolls the checkpointed map out over `[0, t_end]` on the `dt` grid.
pub fn cmd_predict(checkpoint: &Path, x0: &[f64], dt: f64, t_end: f64, out: &Path) -> Result<PredictSummary> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let r = rollout_until(&ckpt.net, x0, dt, t_end)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    r.trajectory.save_csv(out)?;
    Ok(PredictSummary {
        rows: r.trajectory.len(),
        complete: r.complete,
        path: out.to_path_buf(),
    })
}

/// Scores a prediction CSV against a truth CSV and writes the compare CSV.
pub fn cmd_eval(prediction: &Path, truth: &Path, out: &Path) -> Result<RolloutReport> {
    let pred = Trajectory::load_csv(prediction)?;
    let truth = Trajectory::load_csv(truth)?;
    let report = compare(&pred, &truth)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    report.save_csv(out)?;
    Ok(report)
}

pub const GRADCHECK_NETS: usize = 20;
pub const NN_THRESHOLD: f64 = 1e-6;
pub const RESIDUAL_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSummary {
    /// Layer widths and max relative discrepancy of each network checked.
    pub nets: Vec<(Vec<usize>, f64)>,
    pub residual_cases: usize,
    pub residual_max: f64,
}

impl GradcheckSummary {
    pub fn nn_max(&self) -> f64 {
        self.nets.iter().map(|(_, d)| *d).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.nn_max() < NN_THRESHOLD && self.residual_max < RESIDUAL_THRESHOLD
    }
}

impl fmt::Display for GradcheckSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (dims, d) in &self.nets {
            writeln!(f, "net {dims:?}: max rel discrepancy {d:.3e}")?;
        }
        writeln!(f, "nn max {:.3e} (threshold {NN_THRESHOLD:e})", self.nn_max())?;
        write!(
            f,
            "residual_grads over {} cases: max discrepancy {:.3e} (threshold {RESIDUAL_THRESHOLD:e})",
            self.residual_cases, self.residual_max
        )
    }
}

/// Layer widths of the `i`-th gradcheck network; the first is the 10x20 flow map.
pub fn gradcheck_dims(i: usize) -> Vec<usize> {
    match i {
        0 => layer_dims(3, 20, 10, 3),
        _ => {
            let width = 2 + (i * 7) % 19;
            let depth = 1 + i % 5;
            layer_dims(1 + i % 4, width, depth, 1 + (i / 2) % 3)
        }
    }
}

/// Backprop against double-double central differences over random networks,
/// then `residual_grads` against central differences of `residual`.
pub fn gradcheck(seed: u64) -> Result<GradcheckSummary> {
    let mut rng = rng::substream(seed, "gradcheck");
    let mut nets = Vec::with_capacity(GRADCHECK_NETS);
    for i in 0..GRADCHECK_NETS {
        let dims = gradcheck_dims(i);
        let net = FeedForwardNet::glorot(&dims, &mut rng)?;
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        nets.push((dims, grad_check(&net, &x, 1e-6)?));
    }

    let field = LorenzField::default();
    let dt = 1.5e-2;
    let mut residual_max = 0.0f64;
    let mut residual_cases = 0;
    for scheme in [ConstraintScheme::EULER_EC, ConstraintScheme::RK4_EC] {
        for _ in 0..50 {
            let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..3).map(|_| rng.random_range(lo..hi)).collect() };
            let z = draw(-20.0, 20.0);
            let fz = draw(-20.0, 20.0);
            let a = draw(-3.0, 3.0);
            let ec = ErrorCorrection { a: a.clone(), learnable: true };
            let jac = residual_grads(&z, &fz, &ec, dt, scheme, &field)?;
            let d_f = fd_jacobian(|p| residual(&z, p, &ec, dt, scheme, &field).unwrap_or_default(), &fz, 1e-5);
            let d_a = fd_jacobian(
                |p| {
                    let ec = ErrorCorrection { a: p.to_vec(), learnable: true };
                    residual(&z, &fz, &ec, dt, scheme, &field).unwrap_or_default()
                },
                &a,
                1e-5,
            );
            for r in 0..3 {
                for c in 0..3 {
                    let (ef, ea) = if r == c { (jac.d_output[r], jac.d_correction[r]) } else { (0.0, 0.0) };
                    residual_max = residual_max
                        .max((d_f[r][c] - ef).abs() / ef.abs().max(1.0))
                        .max((d_a[r][c] - ea).abs() / ea.abs().max(1.0));
                }
            }
            residual_cases += 1;
        }
    }
    Ok(GradcheckSummary {
        nets,
        residual_cases,
        residual_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        let mut c = RunConfig::default();
        for kv in ["t_train_end=0.15", "t_eval_end=0.3", "n_cloud=3", "epochs=3", "batch_size=4"] {
            c.set_assignment(kv).unwrap();
        }
        c.out_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn gen_sizes_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = cmd_gen(&small(dir.path())).unwrap();
        assert_eq!(s.truth_states, 1501);
        assert_eq!(s.eval_states, 3001);
        assert_eq!(s.samples(), 30);
        for f in [TRUTH_FILE, TRUTH_EVAL_FILE, DATASET_FILE, CONFIG_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = RunConfig::load(&dir.path().join(CONFIG_FILE)).unwrap();
        assert_eq!(back.to_text(), small(dir.path()).to_text());
    }

    #[test]
    fn training_span_is_a_prefix_of_the_reference() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let (truth, reference, _) = generate(&cfg).unwrap();
        assert_eq!(truth.states(), &reference.states()[..truth.len()]);
    }

    #[test]
    fn single_anchor_minimal_run() {
        let mut c = RunConfig::default();
        c.set_assignment("t_train_end=0.015").unwrap();
        let (_, _, data) = generate(&c).unwrap();
        assert_eq!(data.len(), 100);
    }

    #[test]
    fn train_writes_checkpoint_with_trailer_only_for_ec() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        cmd_gen(&cfg).unwrap();
        let s = cmd_train(&cfg, dir.path()).unwrap();
        assert_eq!(s.steps, 3);
        assert!(Checkpoint::load(&s.checkpoint).unwrap().correction.is_some());

        let mut plain = cfg.clone();
        plain.set("constraints", "euler").unwrap();
        let s = cmd_train(&plain, dir.path()).unwrap();
        assert!(Checkpoint::load(&s.checkpoint).unwrap().correction.is_none());
    }

    #[test]
    fn predict_grid_and_first_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rng::seeded(3);
        let net = FeedForwardNet::glorot(&layer_dims(3, 4, 1, 3), &mut rng).unwrap();
        let ckpt = dir.path().join("m.ckpt");
        Checkpoint::new(net, None).save(&ckpt).unwrap();
        let out = dir.path().join("p.csv");
        let s = cmd_predict(&ckpt, &[0.0, 1.0, 0.0], 1.5e-2, 9.0, &out).unwrap();
        assert_eq!(s.rows, 601);
        let traj = Trajectory::load_csv(&out).unwrap();
        assert_eq!(traj.states()[0], vec![0.0, 1.0, 0.0]);
        let s = cmd_predict(&ckpt, &[0.0, 1.0, 0.0], 1.5e-2, 1.5e-2, &out).unwrap();
        assert_eq!(s.rows, 2);
    }

    #[test]
    fn predict_rejects_corrupt_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("bad.ckpt");
        std::fs::write(&ckpt, "FLOWMAP-CKPT v9\n").unwrap();
        let err = cmd_predict(&ckpt, &[0.0; 3], 0.1, 0.1, &dir.path().join("p.csv")).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn eval_identical_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        cmd_gen(&cfg).unwrap();
        let truth = dir.path().join(TRUTH_EVAL_FILE);
        let coarse = Trajectory::load_csv(&truth).unwrap().subsample(150).unwrap();
        let pred = dir.path().join("pred.csv");
        coarse.save_csv(&pred).unwrap();
        let r = cmd_eval(&pred, &truth, &dir.path().join("cmp.csv")).unwrap();
        assert!(r.divergence_time.is_none());
        assert!(r.per_step_rel_err.iter().all(|&e| e == 0.0));

        let shifted: Vec<Vec<f64>> = coarse.states().iter().map(|s| s.iter().map(|v| v + 5.0).collect()).collect();
        Trajectory::new(0.0, coarse.dt(), shifted).unwrap().save_csv(&pred).unwrap();
        let r = cmd_eval(&pred, &truth, &dir.path().join("cmp.csv")).unwrap();
        assert!(r.divergence_time.is_some());
        assert!(r.summary().starts_with("divergence_time="));
    }

    #[test]
    fn eval_reports_grid_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        cmd_gen(&cfg).unwrap();
        let truth = dir.path().join(TRUTH_EVAL_FILE);
        let pred = dir.path().join("pred.csv");
        Trajectory::new(0.0, 1.505e-2, vec![vec![0.0, 1.0, 0.0]; 3]).unwrap().save_csv(&pred).unwrap();
        let err = cmd_eval(&pred, &truth, &dir.path().join("cmp.csv")).unwrap_err();
        assert!(matches!(err, Error::GridMismatch(_)), "{err}");
    }

    #[test]
    fn gradcheck_dims_include_the_flow_map_shape() {
        assert_eq!(gradcheck_dims(0), layer_dims(3, 20, 10, 3));
        for i in 1..GRADCHECK_NETS {
            assert!(gradcheck_dims(i).iter().all(|&d| d >= 1));
        }
    }
}

//! Supervised flow-map training: squared-error fit to the clean next state,
//! optionally plus the squared constraint residual, driven by a relative-error
//! learning-rate schedule.

use std::fmt::Write as _;
use std::path::Path;

use crate::constraints::{ConstraintScheme, ErrorCorrection, ResidualBase};
use crate::dataset::{self, NoiseCloudDataset, SamplePair};
use crate::dynamics::VectorField;
use crate::error::{check_len, Error, Result};
use crate::nn::{AdamConfig, FeedForwardNet, OptimState, Tape};
use crate::rng;

/// Smallest denominator used in relative errors.
pub const DENOM_FLOOR: f64 = 1e-3;

/// Mean over components of `|pred - truth| / max(|truth|, floor)`.
pub fn state_relative_error(pred: &[f64], truth: &[f64], floor: f64) -> f64 {
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs() / t.abs().max(floor))
        .sum();
    sum / truth.len() as f64
}

/// Batch-mean relative error of `net` on `batch`.
pub fn relative_error(batch: &[&SamplePair], net: &FeedForwardNet) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("relative error of an empty batch".into()));
    }
    let mut tape = Tape::new();
    let mut sum = 0.0;
    for s in batch {
        let pred = net.forward_into(&s.z, &mut tape)?;
        sum += state_relative_error(pred, &s.x_next, DENOM_FLOOR);
    }
    Ok(sum / batch.len() as f64)
}

/// Convenience over a whole split.
pub fn relative_error_of(part: &[SamplePair], net: &FeedForwardNet) -> Result<f64> {
    let refs: Vec<&SamplePair> = part.iter().collect();
    relative_error(&refs, net)
}

/// Stopping tolerance for a dataset of `n_total` samples: `1 / sqrt(n_total / 3)`.
pub fn default_tol(n_total: usize) -> f64 {
    1.0 / (n_total as f64 / 3.0).sqrt()
}

/// One sample's squared-error terms. Writes `scale * d(loss)/d(pred)` into
/// `upstream`, accumulates `scale * d(loss)/d(a)` into `a_grads`, and returns
/// the unscaled sample loss.
pub(crate) fn fit_terms(
    pred: &[f64],
    target: &[f64],
    base: Option<&ResidualBase>,
    a: &[f64],
    scale: f64,
    upstream: &mut [f64],
    a_grads: &mut [f64],
) -> f64 {
    let mut loss = 0.0;
    for j in 0..pred.len() {
        let diff = pred[j] - target[j];
        loss += diff * diff;
        upstream[j] = 2.0 * diff;
    }
    if let Some(base) = base {
        for j in 0..pred.len() {
            let res = pred[j] - base.update[j] + a[j] * base.corr_coeff[j];
            loss += res * res;
            upstream[j] += 2.0 * res;
            a_grads[j] += scale * 2.0 * res * base.corr_coeff[j];
        }
    }
    for u in upstream.iter_mut() {
        *u *= scale;
    }
    loss
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedLoss {
    pub loss: f64,
    pub param_grads: Vec<f64>,
    pub a_grads: Vec<f64>,
}

struct BatchPass {
    loss: f64,
    re_sum: f64,
}

#[allow(clippy::too_many_arguments)]
fn batch_pass<F: VectorField + ?Sized>(
    batch: &[&SamplePair],
    net: &FeedForwardNet,
    ec: &ErrorCorrection,
    scheme: ConstraintScheme,
    dt: f64,
    field: &F,
    tape: &mut Tape,
    param_grads: &mut [f64],
    a_grads: &mut [f64],
) -> Result<BatchPass> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("loss of an empty batch".into()));
    }
    check_len("correction coefficients", net.output_dim(), ec.dim())?;
    let scale = 1.0 / batch.len() as f64;
    let mut upstream = vec![0.0; net.output_dim()];
    let mut loss = 0.0;
    let mut re_sum = 0.0;
    for s in batch {
        check_len("target", net.output_dim(), s.x_next.len())?;
        let base = if scheme.is_active() {
            Some(ResidualBase::new(&s.z, dt, scheme, field)?)
        } else {
            None
        };
        let pred = net.forward_into(&s.z, tape)?;
        re_sum += state_relative_error(pred, &s.x_next, DENOM_FLOOR);
        loss += fit_terms(pred, &s.x_next, base.as_ref(), &ec.a, scale, &mut upstream, a_grads);
        net.backward_into(tape, &upstream, param_grads, None)?;
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite supervised loss {loss}")));
    }
    Ok(BatchPass { loss, re_sum })
}

/// `(1/m) Σ ‖G(z) − x‖² (+ ‖res(z)‖² when the scheme is active)` and its exact
/// gradients with respect to the network parameters and `a`.
pub fn supervised_loss<F: VectorField + ?Sized>(
    batch: &[&SamplePair],
    net: &FeedForwardNet,
    ec: &ErrorCorrection,
    scheme: ConstraintScheme,
    dt: f64,
    field: &F,
) -> Result<SupervisedLoss> {
    let mut param_grads = vec![0.0; net.parameter_count()];
    let mut a_grads = vec![0.0; ec.dim()];
    let pass = batch_pass(
        batch,
        net,
        ec,
        scheme,
        dt,
        field,
        &mut Tape::new(),
        &mut param_grads,
        &mut a_grads,
    )?;
    Ok(SupervisedLoss {
        loss: pass.loss,
        param_grads,
        a_grads,
    })
}

/// Plateau schedule on the validation relative error.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub lr: f64,
    pub tol: f64,
    pub patience: usize,
    pub factor: f64,
    pub floor: f64,
    best: f64,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    pub lr: f64,
    pub stop: bool,
}

impl LrSchedule {
    pub fn new(lr: f64, tol: f64, patience: usize, factor: f64, floor: f64) -> Self {
        Self {
            lr,
            tol,
            patience,
            factor,
            floor,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    pub fn with_defaults(lr: f64, tol: f64) -> Self {
        Self::new(lr, tol, 10, 0.5, 1e-6)
    }

    /// Feeds the latest validation error.
    pub fn observe(&mut self, val_re: f64) -> ScheduleStep {
        if val_re <= self.tol {
            return ScheduleStep { lr: self.lr, stop: true };
        }
        if val_re < self.best {
            self.best = val_re;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                self.lr = (self.lr * self.factor).max(self.floor);
                self.since_best = 0;
            }
        }
        ScheduleStep { lr: self.lr, stop: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedConfig {
    pub dims: Vec<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Defaults to [`default_tol`] of the dataset size.
    pub tol: Option<f64>,
    pub scheme: ConstraintScheme,
    pub dt: f64,
    pub seed: u64,
    pub patience: usize,
    pub lr_factor: f64,
    pub lr_floor: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            dims: crate::nn::layer_dims(3, 20, 10, 3),
            batch_size: 1000,
            max_epochs: 100_000,
            learning_rate: 1e-3,
            tol: None,
            scheme: ConstraintScheme::EULER_EC,
            dt: 1.5e-2,
            seed: 0,
            patience: 2000,
            lr_factor: 0.5,
            lr_floor: 1e-6,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        if self.dims.len() < 2 {
            return Err(Error::config("dims", "need at least input and output widths"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_re: f64,
    pub val_re: f64,
    pub lr: f64,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub tol: f64,
    pub reached_tol: bool,
    /// Set when training stopped on a non-finite loss; the returned state is
    /// the last finite one.
    pub diverged: Option<String>,
}

impl TrainReport {
    pub fn final_val_re(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_re)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_RE,val_RE,lr,a1,a2,a3\n");
        for e in &self.epochs {
            let _ = write!(out, "{},{},{},{},{}", e.epoch, e.train_loss, e.train_re, e.val_re, e.lr);
            for v in &e.a {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct SupervisedOutcome {
    pub net: FeedForwardNet,
    pub correction: ErrorCorrection,
    pub report: TrainReport,
}

pub fn train_supervised<F: VectorField + ?Sized>(
    config: &SupervisedConfig,
    data: &NoiseCloudDataset,
    field: &F,
) -> Result<SupervisedOutcome> {
    config.validate()?;
    let train = &data.train;
    let m = dataset::clamp_batch_size(config.batch_size, train.len())?;
    let tol = config.tol.unwrap_or_else(|| default_tol(data.len()));

    let mut rng = rng::seeded(config.seed);
    let mut net = FeedForwardNet::glorot(&config.dims, &mut rng)?;
    let dim = net.output_dim();
    let learn_a = config.scheme.uses_correction();
    let mut ec = ErrorCorrection::zeros(dim, learn_a);

    let adam = AdamConfig::with_learning_rate(config.learning_rate);
    let n_params = net.parameter_count();
    let mut opt = OptimState::new(n_params + if learn_a { dim } else { 0 }, adam);
    let mut schedule = LrSchedule::new(
        config.learning_rate,
        tol,
        config.patience,
        config.lr_factor,
        config.lr_floor,
    );

    let mut report = TrainReport {
        tol,
        ..TrainReport::default()
    };
    let mut tape = Tape::new();
    let mut grads = vec![0.0; opt.len()];
    let mut a_grads = vec![0.0; dim];

    'epochs: for epoch in 1..=config.max_epochs {
        let mut loss_sum = 0.0;
        let mut re_sum = 0.0;
        for idx in dataset::epoch_batches(train.len(), m, &mut rng) {
            let batch: Vec<&SamplePair> = idx.iter().map(|&i| &train[i]).collect();
            grads.fill(0.0);
            a_grads.fill(0.0);
            let pass = batch_pass(
                &batch,
                &net,
                &ec,
                config.scheme,
                config.dt,
                field,
                &mut tape,
                &mut grads[..n_params],
                &mut a_grads,
            );
            let pass = match pass {
                Ok(p) => p,
                Err(Error::Divergence(msg)) => {
                    report.diverged = Some(format!("epoch {epoch}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if learn_a {
                grads[n_params..].copy_from_slice(&a_grads);
            }
            let step = if learn_a {
                opt.step_parts(&mut [net.params_mut(), &mut ec.a], &grads)
            } else {
                opt.step(net.params_mut(), &grads)
            };
            if let Err(Error::Divergence(msg)) = step {
                report.diverged = Some(format!("epoch {epoch}: {msg}"));
                break 'epochs;
            }
            step?;
            loss_sum += pass.loss * batch.len() as f64;
            re_sum += pass.re_sum;
        }
        let train_loss = loss_sum / train.len() as f64;
        let train_re = re_sum / train.len() as f64;
        let val_re = if data.val.is_empty() {
            train_re
        } else {
            relative_error_of(&data.val, &net)?
        };
        if !val_re.is_finite() {
            report.diverged = Some(format!("epoch {epoch}: non-finite validation error"));
            break;
        }
        let lr = opt.learning_rate;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_re,
            val_re,
            lr,
            a: ec.a.clone(),
        });
        if epoch % 50 == 0 {
            log::info!("epoch {epoch}: loss {train_loss:.3e} train RE {train_re:.4e} val RE {val_re:.4e} lr {lr:.1e}");
        }
        let decision = schedule.observe(val_re);
        if decision.stop {
            report.reached_tol = true;
            log::info!("epoch {epoch}: validation RE {val_re:.4e} <= TOL {tol:.4e}");
            break;
        }
        opt.learning_rate = decision.lr;
    }

    Ok(SupervisedOutcome {
        net,
        correction: ec,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CloudParams;
    use crate::dynamics::{generate_reference, LinearField, LorenzField, Method};
    use crate::dynamics;
    use crate::oracles::{self, Dd};
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg64;

    fn pair(z: [f64; 3], x: [f64; 3]) -> SamplePair {
        SamplePair {
            z: z.to_vec(),
            x_next: x.to_vec(),
            time_index: 0,
        }
    }

    fn bias_net(b: [f64; 3]) -> FeedForwardNet {
        FeedForwardNet::from_layers(&[3, 3], &[vec![0.0; 9]], &[b.to_vec()]).unwrap()
    }

    fn dataset_of(train: Vec<SamplePair>, val: Vec<SamplePair>) -> NoiseCloudDataset {
        NoiseCloudDataset {
            train,
            val,
            test: vec![],
            params: CloudParams {
                n_cloud: 1,
                r_range: 0.0,
                seed: 0,
            },
        }
    }

    #[test]
    fn exact_fit_has_zero_loss() {
        let s = pair([0.3, -1.0, 2.0], [1.0, 2.0, 3.0]);
        let ec = ErrorCorrection::zeros(3, false);
        let out = supervised_loss(&[&s], &bias_net([1.0, 2.0, 3.0]), &ec, ConstraintScheme::NONE, 0.1, &LorenzField::default()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.param_grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_offset_component() {
        let s = pair([0.0; 3], [1.0, 2.0, 3.0]);
        let ec = ErrorCorrection::zeros(3, false);
        let out = supervised_loss(&[&s], &bias_net([1.1, 2.0, 3.0]), &ec, ConstraintScheme::NONE, 0.1, &LorenzField::default()).unwrap();
        assert!((out.loss - 0.01).abs() < 1e-15);
    }

    #[test]
    fn euler_map_net_zero_loss_with_constraint() {
        let dt = 0.05;
        let l = LinearField::diagonal(&[-1.0, 0.5, 2.0]);
        let w = vec![1.0 - dt, 0.0, 0.0, 0.0, 1.0 + 0.5 * dt, 0.0, 0.0, 0.0, 1.0 + 2.0 * dt];
        let net = FeedForwardNet::from_layers(&[3, 3], &[w], &[vec![0.0; 3]]).unwrap();
        let z = [0.5, -1.0, 0.25];
        let x = net.forward(&z).unwrap();
        let s = pair(z, [x[0], x[1], x[2]]);
        let ec = ErrorCorrection::zeros(3, true);
        let out = supervised_loss(&[&s], &net, &ec, ConstraintScheme::EULER_EC, dt, &l).unwrap();
        assert!(out.loss < 1e-30, "{}", out.loss);
    }

    #[test]
    fn relative_error_examples() {
        let s = pair([0.0; 3], [1.0, 2.0, 3.0]);
        let net = bias_net([1.1, 2.0, 3.0]);
        let re = relative_error(&[&s], &net).unwrap();
        assert!((re - 0.1 / 3.0).abs() < 1e-15);
        assert_eq!(relative_error(&[&s], &bias_net([1.0, 2.0, 3.0])).unwrap(), 0.0);

        let z = pair([0.0; 3], [0.0, 1.0, 1.0]);
        let re = relative_error(&[&z], &bias_net([1e-4, 1.0, 1.0])).unwrap();
        assert!((re - 0.1 / 3.0).abs() < 1e-15);
        assert!(relative_error(&[], &net).is_err());
    }

    #[test]
    fn default_tol_examples() {
        assert!((default_tol(20000) - 0.012247).abs() < 1e-6);
        assert_eq!(default_tol(3), 1.0);
        assert!((default_tol(300) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn schedule_rules() {
        let mut s = LrSchedule::with_defaults(1e-3, 0.02);
        assert!(s.observe(0.01).stop);

        let mut s = LrSchedule::with_defaults(1e-3, 0.0);
        s.observe(0.5);
        for _ in 0..9 {
            assert_eq!(s.observe(0.6).lr, 1e-3);
        }
        assert_eq!(s.observe(0.6).lr, 5e-4);

        let mut s = LrSchedule::new(1e-6, 0.0, 1, 0.5, 1e-6);
        s.observe(1.0);
        assert_eq!(s.observe(1.0).lr, 1e-6);
    }

    fn random_batch(rng: &mut Pcg64, n: usize) -> Vec<SamplePair> {
        (0..n)
            .map(|_| {
                let mut v = || rng.random_range(-1.5..1.5);
                pair([v(), v(), v()], [v(), v(), v()])
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let field = LorenzField::default();
        let dt = 1.5e-2;
        for seed in 0..20 {
            let mut rng = Pcg64::seed_from_u64(seed);
            let net = FeedForwardNet::glorot(&[3, 6, 6, 3], &mut rng).unwrap();
            let batch = random_batch(&mut rng, 4);
            let refs: Vec<&SamplePair> = batch.iter().collect();
            let mut ec = ErrorCorrection::zeros(3, true);
            for a in &mut ec.a {
                *a = rng.random_range(-2.0..2.0);
            }
            for scheme in [ConstraintScheme::NONE, ConstraintScheme::EULER_EC, ConstraintScheme::RK4_EC] {
                let out = supervised_loss(&refs, &net, &ec, scheme, dt, &field).unwrap();
                let n = net.parameter_count();
                let mut joint = net.params().to_vec();
                joint.extend_from_slice(&ec.a);
                let bases: Vec<(Vec<f64>, Vec<f64>)> = batch
                    .iter()
                    .map(|s| {
                        let upd = match scheme.variant {
                            crate::constraints::SchemeVariant::Rk4 => dynamics::rk4_step(&field, &s.z, dt),
                            _ => dynamics::euler_step(&field, &s.z, dt),
                        };
                        (upd, s.z.iter().map(|v| dt * v).collect())
                    })
                    .collect();
                let dims = net.dims().to_vec();
                let fd = oracles::fd_gradient_dd(
                    |theta| {
                        let mut total = Dd::ZERO;
                        for (s, (upd, corr)) in batch.iter().zip(&bases) {
                            let y = oracles::mlp_forward_dd(&dims, &theta[..n], &s.z);
                            for j in 0..3 {
                                let d = y[j] - Dd::new(s.x_next[j]);
                                total = total + d * d;
                                if scheme.is_active() {
                                    let r = y[j] - Dd::new(upd[j]) + theta[n + j] * Dd::new(corr[j]);
                                    total = total + r * r;
                                }
                            }
                        }
                        total / Dd::new(batch.len() as f64)
                    },
                    &joint,
                    1e-6,
                );
                let mut analytic = out.param_grads.clone();
                analytic.extend_from_slice(&out.a_grads);
                let worst = crate::nn::max_relative_discrepancy(&analytic, &fd);
                assert!(worst < 1e-6, "seed {seed} {scheme}: {worst:e}");
            }
        }
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let mut rng = Pcg64::seed_from_u64(3);
        let net = FeedForwardNet::glorot(&[3, 5, 3], &mut rng).unwrap();
        let batch = random_batch(&mut rng, 7);
        let fwd: Vec<&SamplePair> = batch.iter().collect();
        let rev: Vec<&SamplePair> = batch.iter().rev().collect();
        let ec = ErrorCorrection::zeros(3, true);
        let f = LorenzField::default();
        let a = supervised_loss(&fwd, &net, &ec, ConstraintScheme::EULER_EC, 0.01, &f).unwrap().loss;
        let b = supervised_loss(&rev, &net, &ec, ConstraintScheme::EULER_EC, 0.01, &f).unwrap().loss;
        assert!((a - b).abs() <= 1e-14 * a.abs());
    }

    #[test]
    fn noiseless_cloud_equals_trajectory_fit() {
        let f = LorenzField::default();
        let traj = generate_reference(&f, &[0.0, 1.0, 0.0], 1e-3, 0.2, Method::Euler).unwrap();
        let coarse = traj.subsample(10).unwrap();
        let params = CloudParams {
            n_cloud: 1,
            r_range: 0.0,
            seed: 4,
        };
        let samples = dataset::build_noise_cloud(&coarse, 1, 0.0, 4).unwrap();
        let refs: Vec<&SamplePair> = samples.iter().collect();
        let mut rng = Pcg64::seed_from_u64(1);
        let net = FeedForwardNet::glorot(&[3, 4, 3], &mut rng).unwrap();
        let ec = ErrorCorrection::zeros(3, false);
        let loss = supervised_loss(&refs, &net, &ec, ConstraintScheme::NONE, 0.01, &f).unwrap().loss;

        let states = coarse.states();
        let mut direct = 0.0;
        for i in 0..states.len() - 1 {
            let y = net.forward(&states[i]).unwrap();
            direct += y.iter().zip(&states[i + 1]).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        }
        direct /= (states.len() - 1) as f64;
        assert!((loss - direct).abs() <= 1e-13 * direct, "{loss} vs {direct}");
        let _ = params;
    }

    #[test]
    fn overfits_a_single_pair() {
        let s = pair([0.5, -0.2, 1.0], [0.8, 0.1, -0.4]);
        let data = dataset_of(vec![s], vec![]);
        let cfg = SupervisedConfig {
            dims: vec![3, 8, 3],
            batch_size: 1,
            max_epochs: 2000,
            tol: Some(0.0),
            scheme: ConstraintScheme::NONE,
            ..SupervisedConfig::default()
        };
        let out = train_supervised(&cfg, &data, &LorenzField::default()).unwrap();
        let losses: Vec<f64> = out.report.epochs.iter().map(|e| e.train_loss).collect();
        assert_eq!(losses.len(), 2000);
        let hit = losses.iter().position(|&l| l < 1e-4).expect("loss never fell below 1e-4");
        for w in losses[1..=hit].windows(2) {
            assert!(w[1] < w[0], "{} then {}", w[0], w[1]);
        }
        assert!(losses[hit..].iter().all(|&l| l < 1e-4));
    }

    #[test]
    fn recovers_known_correction_on_linear_system() {
        let l = LinearField::diagonal(&[-0.5, 0.3, -1.0]);
        let a_true = [0.5, -0.3, 1.0];
        let dt = 0.1;
        let mut rng = Pcg64::seed_from_u64(11);
        let mut make = |n: usize| -> Vec<SamplePair> {
            (0..n)
                .map(|_| {
                    let z: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let x = oracles::linear_corrected_map(&a_true, &z, dt, &l).unwrap();
                    SamplePair {
                        z,
                        x_next: x,
                        time_index: 0,
                    }
                })
                .collect()
        };
        let data = dataset_of(make(200), make(50));
        let cfg = SupervisedConfig {
            dims: vec![3, 3],
            batch_size: 50,
            max_epochs: 1500,
            learning_rate: 1e-2,
            tol: Some(0.0),
            scheme: ConstraintScheme::EULER_EC,
            dt,
            seed: 5,
            ..SupervisedConfig::default()
        };
        let out = train_supervised(&cfg, &data, &l).unwrap();
        for (a, t) in out.correction.a.iter().zip(&a_true) {
            assert!((a - t).abs() < 0.1, "learned {:?}", out.correction.a);
        }
    }

    #[test]
    fn report_csv_layout() {
        let report = TrainReport {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                train_re: 0.25,
                val_re: 0.125,
                lr: 1e-3,
                a: vec![0.0, 1.0, 2.0],
            }],
            tol: 0.1,
            reached_tol: false,
            diverged: None,
        };
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,train_loss,train_RE,val_RE,lr,a1,a2,a3"));
        assert_eq!(lines.next(), Some("1,0.5,0.25,0.125,0.001,0,1,2"));
    }

    #[test]
    fn training_is_reproducible() {
        let f = LorenzField::default();
        let traj = generate_reference(&f, &[0.0, 1.0, 0.0], 1e-3, 0.3, Method::Euler).unwrap();
        let data = NoiseCloudDataset::generate(
            &traj.subsample(15).unwrap(),
            CloudParams {
                n_cloud: 5,
                r_range: 0.02,
                seed: 2,
            },
            dataset::EQUAL_THIRDS,
        )
        .unwrap();
        let cfg = SupervisedConfig {
            dims: vec![3, 6, 3],
            batch_size: 8,
            max_epochs: 5,
            dt: 1.5e-2,
            ..SupervisedConfig::default()
        };
        let a = train_supervised(&cfg, &data, &f).unwrap();
        let b = train_supervised(&cfg, &data, &f).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.report, b.report);
    }
}

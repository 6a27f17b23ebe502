//! Adversarial training of the flow map. The generator is the flow map; the
//! discriminator sees a state together with a residual slot: a small Gaussian
//! draw for real data, the constraint residual for generated data.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::constraints::{ConstraintScheme, ErrorCorrection, ResidualBase};
use crate::dataset::{self, NoiseCloudDataset, SamplePair};
use crate::dynamics::VectorField;
use crate::error::{check_len, Error, Result};
use crate::nn::{layer_dims, AdamConfig, FeedForwardNet, OptimState, Tape};
use crate::rng;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `M` independent `N(0, sigma_d^2)` draws for the residual slot of real samples.
pub fn eps_d_sample<R: Rng + ?Sized>(rng: &mut R, dim: usize, sigma_d: f64) -> Result<Vec<f64>> {
    if !(sigma_d >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_d must be non-negative, got {sigma_d}")));
    }
    let normal = Normal::new(0.0, sigma_d)
        .map_err(|e| Error::InvalidArgument(format!("sigma_d = {sigma_d}: {e}")))?;
    Ok((0..dim).map(|_| normal.sample(rng)).collect())
}

/// Width of the discriminator input for a state dimension and scheme.
pub fn discriminator_input_dim(dim: usize, scheme: ConstraintScheme) -> usize {
    if scheme.is_active() {
        2 * dim
    } else {
        dim
    }
}

/// Discriminator input for a generated sample: `G(z)` followed by the
/// constraint residual (omitted when the scheme is `none`).
pub fn generated_input(base: Option<&ResidualBase>, gz: &[f64], a: &[f64]) -> Vec<f64> {
    let mut input = gz.to_vec();
    if let Some(base) = base {
        input.extend(base.residual(gz, a));
    }
    input
}

fn residual_base<F: VectorField + ?Sized>(
    z: &[f64],
    dt: f64,
    scheme: ConstraintScheme,
    field: &F,
) -> Result<Option<ResidualBase>> {
    if scheme.is_active() {
        ResidualBase::new(z, dt, scheme, field).map(Some)
    } else {
        Ok(None)
    }
}

/// Shared arguments of the two adversarial losses.
pub struct GanBatch<'a, F: VectorField + ?Sized> {
    pub samples: &'a [&'a SamplePair],
    pub ec: &'a ErrorCorrection,
    pub scheme: ConstraintScheme,
    pub dt: f64,
    pub field: &'a F,
}

impl<F: VectorField + ?Sized> GanBatch<'_, F> {
    fn check(&self, g: &FeedForwardNet, d: &FeedForwardNet) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InsufficientData("adversarial loss of an empty batch".into()));
        }
        let m = g.output_dim();
        check_len("correction coefficients", m, self.ec.dim())?;
        check_len("discriminator input", discriminator_input_dim(m, self.scheme), d.input_dim())?;
        check_len("discriminator output", 1, d.output_dim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorLoss {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub real_mean: f64,
    pub fake_mean: f64,
}

/// `-mean log D(x, eps_D) - mean log(1 - D(G(z), res))` and its gradient with
/// respect to the discriminator parameters. `eps_d[i]` fills the residual slot
/// of real sample `i` (ignored when the scheme is `none`).
pub fn discriminator_loss<F: VectorField + ?Sized>(
    batch: &GanBatch<'_, F>,
    g: &FeedForwardNet,
    d: &FeedForwardNet,
    eps_d: &[Vec<f64>],
) -> Result<DiscriminatorLoss> {
    batch.check(g, d)?;
    check_len("eps_D draws", batch.samples.len(), eps_d.len())?;
    let scale = 1.0 / batch.samples.len() as f64;
    let mut grads = vec![0.0; d.parameter_count()];
    let (mut g_tape, mut d_tape) = (Tape::new(), Tape::new());
    let (mut loss, mut real_sum, mut fake_sum) = (0.0, 0.0, 0.0);
    for (s, eps) in batch.samples.iter().zip(eps_d) {
        let mut real = s.x_next.clone();
        if batch.scheme.is_active() {
            check_len("eps_D draw", real.len(), eps.len())?;
            real.extend_from_slice(eps);
        }
        let logit = d.forward_into(&real, &mut d_tape)?[0];
        loss += softplus(-logit);
        let p = sigmoid(logit);
        real_sum += p;
        d.backward_into(&mut d_tape, &[scale * (p - 1.0)], &mut grads, None)?;

        let base = residual_base(&s.z, batch.dt, batch.scheme, batch.field)?;
        let gz = g.forward_into(&s.z, &mut g_tape)?;
        let fake = generated_input(base.as_ref(), gz, &batch.ec.a);
        let logit = d.forward_into(&fake, &mut d_tape)?[0];
        loss += softplus(logit);
        let p = sigmoid(logit);
        fake_sum += p;
        d.backward_into(&mut d_tape, &[scale * p], &mut grads, None)?;
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite discriminator loss {loss}")));
    }
    Ok(DiscriminatorLoss {
        loss,
        grads,
        real_mean: real_sum * scale,
        fake_mean: fake_sum * scale,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorLoss {
    pub loss: f64,
    pub param_grads: Vec<f64>,
    pub a_grads: Vec<f64>,
}

/// Non-saturating generator loss `-mean log D(G(z), res)` with gradients for
/// the generator parameters and `a`.
pub fn generator_loss<F: VectorField + ?Sized>(
    batch: &GanBatch<'_, F>,
    g: &FeedForwardNet,
    d: &FeedForwardNet,
) -> Result<GeneratorLoss> {
    generator_loss_with(batch, g, d, true)
}

/// [`generator_loss`] with the residual-slot gradient optionally cut.
pub fn generator_loss_with<F: VectorField + ?Sized>(
    batch: &GanBatch<'_, F>,
    g: &FeedForwardNet,
    d: &FeedForwardNet,
    residual_slot_grad: bool,
) -> Result<GeneratorLoss> {
    batch.check(g, d)?;
    let m = g.output_dim();
    let scale = 1.0 / batch.samples.len() as f64;
    let mut param_grads = vec![0.0; g.parameter_count()];
    let mut a_grads = vec![0.0; m];
    let mut d_scratch = vec![0.0; d.parameter_count()];
    let mut d_input_grad = vec![0.0; d.input_dim()];
    let mut upstream = vec![0.0; m];
    let (mut g_tape, mut d_tape) = (Tape::new(), Tape::new());
    let mut loss = 0.0;
    for s in batch.samples {
        let base = residual_base(&s.z, batch.dt, batch.scheme, batch.field)?;
        let gz = g.forward_into(&s.z, &mut g_tape)?;
        let fake = generated_input(base.as_ref(), gz, &batch.ec.a);
        let logit = d.forward_into(&fake, &mut d_tape)?[0];
        loss += softplus(-logit);
        let dl = scale * (sigmoid(logit) - 1.0);
        d.backward_into(&mut d_tape, &[dl], &mut d_scratch, Some(&mut d_input_grad))?;
        upstream.copy_from_slice(&d_input_grad[..m]);
        if let Some(base) = &base {
            if residual_slot_grad {
                for j in 0..m {
                    let g_res = d_input_grad[m + j];
                    upstream[j] += g_res;
                    a_grads[j] += g_res * base.corr_coeff[j];
                }
            }
        }
        g.backward_into(&mut g_tape, &upstream, &mut param_grads, None)?;
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite generator loss {loss}")));
    }
    Ok(GeneratorLoss {
        loss,
        param_grads,
        a_grads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub generator_dims: Vec<usize>,
    /// Hidden widths of the discriminator; its input and output widths follow
    /// from the state dimension and scheme.
    pub discriminator_hidden: Vec<usize>,
    pub sigma_d: f64,
    pub batch_size: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub epochs: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub scheme: ConstraintScheme,
    pub dt: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            generator_dims: layer_dims(3, 20, 9, 3),
            discriminator_hidden: vec![20, 20],
            sigma_d: 1e-3,
            batch_size: 1000,
            d_steps: 1,
            epochs: 1000,
            lr_generator: 1e-3,
            lr_discriminator: 1e-3,
            scheme: ConstraintScheme::EULER_EC,
            dt: 1.5e-2,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn discriminator_dims(&self) -> Vec<usize> {
        let m = self.generator_dims.last().copied().unwrap_or(0);
        let mut dims = vec![discriminator_input_dim(m, self.scheme)];
        dims.extend(&self.discriminator_hidden);
        dims.push(1);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.generator_dims.len() < 2 || self.generator_dims[0] != self.generator_dims[self.generator_dims.len() - 1] {
            return Err(Error::config("generator_dims", "input and output widths must both equal the state dimension"));
        }
        if !(self.sigma_d >= 0.0) {
            return Err(Error::config("sigma_d", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.d_steps == 0 {
            return Err(Error::config("d_steps", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanEpoch {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    pub a: Vec<f64>,
}

/// Epochs in a row with mean `D` on real data above the saturation level
/// before the run is flagged.
pub const SATURATION_EPOCHS: usize = 20;
pub const SATURATION_LEVEL: f64 = 0.99;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GanReport {
    pub epochs: Vec<GanEpoch>,
    /// First epoch at which the saturation streak completed.
    pub saturated_at: Option<usize>,
    pub diverged: Option<String>,
}

impl GanReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,d_loss,g_loss,d_real_mean,d_fake_mean,a1,a2,a3\n");
        for e in &self.epochs {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.d_loss, e.g_loss, e.d_real_mean, e.d_fake_mean
            );
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
pub struct GanOutcome {
    pub generator: FeedForwardNet,
    pub discriminator: FeedForwardNet,
    pub correction: ErrorCorrection,
    pub report: GanReport,
}

pub fn train_gan<F: VectorField + ?Sized>(
    config: &GanConfig,
    data: &NoiseCloudDataset,
    field: &F,
) -> Result<GanOutcome> {
    config.validate()?;
    let train = &data.train;
    let m = dataset::clamp_batch_size(config.batch_size, train.len())?;

    let mut rng = rng::seeded(config.seed);
    let mut g = FeedForwardNet::glorot(&config.generator_dims, &mut rng)?;
    let mut d = FeedForwardNet::glorot(&config.discriminator_dims(), &mut rng::substream(config.seed, "discriminator"))?;
    let mut eps_rng = rng::substream(config.seed, "eps_d");
    let dim = g.output_dim();
    let learn_a = config.scheme.uses_correction();
    let mut ec = ErrorCorrection::zeros(dim, learn_a);
    let n_g = g.parameter_count();

    let mut opt_d = OptimState::new(d.parameter_count(), AdamConfig::with_learning_rate(config.lr_discriminator));
    let mut opt_g = OptimState::new(n_g + if learn_a { dim } else { 0 }, AdamConfig::with_learning_rate(config.lr_generator));
    let mut g_grads = vec![0.0; opt_g.len()];

    let mut report = GanReport::default();
    let mut streak = 0;
    'epochs: for epoch in 1..=config.epochs {
        let (mut d_loss, mut g_loss, mut real, mut fake, mut batches) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for idx in dataset::epoch_batches(train.len(), m, &mut rng) {
            let samples: Vec<&SamplePair> = idx.iter().map(|&i| &train[i]).collect();
            for _ in 0..config.d_steps {
                let eps = samples
                    .iter()
                    .map(|_| eps_d_sample(&mut eps_rng, dim, config.sigma_d))
                    .collect::<Result<Vec<_>>>()?;
                let batch = GanBatch {
                    samples: &samples,
                    ec: &ec,
                    scheme: config.scheme,
                    dt: config.dt,
                    field,
                };
                let out = match discriminator_loss(&batch, &g, &d, &eps).and_then(|out| {
                    opt_d.step(d.params_mut(), &out.grads)?;
                    Ok(out)
                }) {
                    Ok(out) => out,
                    Err(Error::Divergence(msg)) => {
                        report.diverged = Some(format!("epoch {epoch}: {msg}"));
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                d_loss += out.loss / config.d_steps as f64;
                real += out.real_mean / config.d_steps as f64;
                fake += out.fake_mean / config.d_steps as f64;
            }
            let batch = GanBatch {
                samples: &samples,
                ec: &ec,
                scheme: config.scheme,
                dt: config.dt,
                field,
            };
            let out = match generator_loss(&batch, &g, &d) {
                Ok(out) => out,
                Err(Error::Divergence(msg)) => {
                    report.diverged = Some(format!("epoch {epoch}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            g_grads[..n_g].copy_from_slice(&out.param_grads);
            let step = if learn_a {
                g_grads[n_g..].copy_from_slice(&out.a_grads);
                opt_g.step_parts(&mut [g.params_mut(), &mut ec.a], &g_grads)
            } else {
                opt_g.step(g.params_mut(), &g_grads)
            };
            if let Err(Error::Divergence(msg)) = step {
                report.diverged = Some(format!("epoch {epoch}: {msg}"));
                break 'epochs;
            }
            step?;
            g_loss += out.loss;
            batches += 1;
        }
        let n = batches as f64;
        let record = GanEpoch {
            epoch,
            d_loss: d_loss / n,
            g_loss: g_loss / n,
            d_real_mean: real / n,
            d_fake_mean: fake / n,
            a: ec.a.clone(),
        };
        streak = if record.d_real_mean > SATURATION_LEVEL { streak + 1 } else { 0 };
        if streak >= SATURATION_EPOCHS && report.saturated_at.is_none() {
            log::warn!("discriminator saturated at epoch {epoch}");
            report.saturated_at = Some(epoch);
        }
        if epoch % 50 == 0 {
            log::info!(
                "epoch {epoch}: D loss {:.4} G loss {:.4} D(real) {:.3} D(fake) {:.3}",
                record.d_loss,
                record.g_loss,
                record.d_real_mean,
                record.d_fake_mean
            );
        }
        report.epochs.push(record);
    }

    Ok(GanOutcome {
        generator: g,
        discriminator: d,
        correction: ec,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints;
    use crate::dataset::CloudParams;
    use crate::dynamics::{self, LorenzField, Method};
    use crate::nn::max_relative_discrepancy;
    use crate::oracles::{self, Dd};
    use rand::SeedableRng;
    use rand_pcg::Pcg64;

    fn samples(rng: &mut Pcg64, n: usize) -> Vec<SamplePair> {
        (0..n)
            .map(|_| SamplePair {
                z: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                x_next: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                time_index: 0,
            })
            .collect()
    }

    #[test]
    fn eps_d_statistics() {
        let mut rng = Pcg64::seed_from_u64(0);
        assert_eq!(eps_d_sample(&mut rng, 3, 0.0).unwrap(), vec![0.0; 3]);
        let sigma = 1e-3;
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| eps_d_sample(&mut rng, 3, sigma).unwrap()).collect();
        for j in 0..3 {
            let mean = draws.iter().map(|d| d[j]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
            assert!((var.sqrt() - sigma).abs() < 0.05 * sigma, "std {}", var.sqrt());
        }
        assert!(eps_d_sample(&mut rng, 3, -1.0).is_err());
    }

    #[test]
    fn stable_sigmoid_and_softplus() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(softplus(0.0), std::f64::consts::LN_2);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert_eq!(softplus(800.0), 800.0);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn input_widths() {
        let cfg = GanConfig::default();
        assert_eq!(cfg.discriminator_dims(), vec![6, 20, 20, 1]);
        let none = GanConfig {
            scheme: ConstraintScheme::NONE,
            ..GanConfig::default()
        };
        assert_eq!(none.discriminator_dims(), vec![3, 20, 20, 1]);
    }

    #[test]
    fn half_discriminator_losses() {
        let mut rng = Pcg64::seed_from_u64(1);
        let data = samples(&mut rng, 5);
        let refs: Vec<&SamplePair> = data.iter().collect();
        let g = FeedForwardNet::glorot(&[3, 4, 3], &mut rng).unwrap();
        let ec = ErrorCorrection::zeros(3, true);
        let field = LorenzField::default();
        for scheme in [ConstraintScheme::NONE, ConstraintScheme::EULER_EC] {
            let d = FeedForwardNet::zeros(&[discriminator_input_dim(3, scheme), 5, 1]).unwrap();
            let batch = GanBatch {
                samples: &refs,
                ec: &ec,
                scheme,
                dt: 0.015,
                field: &field,
            };
            let eps = vec![vec![0.0; 3]; 5];
            let dl = discriminator_loss(&batch, &g, &d, &eps).unwrap();
            assert!((dl.loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
            assert_eq!(dl.real_mean, 0.5);
            let gl = generator_loss(&batch, &g, &d).unwrap();
            assert!((gl.loss - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn near_perfect_discriminator_loss_vanishes() {
        // Logit = 60 * (first input - 5): real first coordinate 10, fake -10.
        let d = FeedForwardNet::from_layers(&[3, 1], &[vec![60.0, 0.0, 0.0]], &[vec![-300.0]]).unwrap();
        let g = FeedForwardNet::from_layers(&[3, 3], &[vec![0.0; 9]], &[vec![-10.0, 0.0, 0.0]]).unwrap();
        let s = SamplePair {
            z: vec![0.0; 3],
            x_next: vec![10.0, 0.0, 0.0],
            time_index: 0,
        };
        let refs = [&s];
        let ec = ErrorCorrection::zeros(3, false);
        let batch = GanBatch {
            samples: &refs,
            ec: &ec,
            scheme: ConstraintScheme::NONE,
            dt: 0.01,
            field: &LorenzField::default(),
        };
        let dl = discriminator_loss(&batch, &g, &d, &[vec![]]).unwrap();
        assert!(dl.loss > 0.0 && dl.loss < 1e-100);
    }

    #[test]
    fn residual_slot_matches_constraint_residual() {
        let mut rng = Pcg64::seed_from_u64(2);
        let g = FeedForwardNet::glorot(&[3, 5, 3], &mut rng).unwrap();
        let field = LorenzField::default();
        let ec = ErrorCorrection {
            a: vec![0.3, -1.0, 2.0],
            learnable: true,
        };
        let z = [0.4, -0.7, 1.2];
        let gz = g.forward(&z).unwrap();
        for scheme in [ConstraintScheme::EULER, ConstraintScheme::EULER_EC, ConstraintScheme::RK4_EC] {
            let base = ResidualBase::new(&z, 0.015, scheme, &field).unwrap();
            let input = generated_input(Some(&base), &gz, &ec.a);
            assert_eq!(input.len(), 6);
            let res = constraints::residual(&z, &gz, &ec, 0.015, scheme, &field).unwrap();
            assert_eq!(&input[3..], res.as_slice());
            assert_eq!(&input[..3], gz.as_slice());
        }
    }

    fn ln_sigmoid_dd(x: Dd) -> Dd {
        // ln(sigmoid(x)) = -ln(1 + e^{-x})
        -((-x).exp() + Dd::new(1.0)).ln()
    }

    #[allow(clippy::type_complexity)]
    fn setup(seed: u64) -> (Vec<SamplePair>, FeedForwardNet, FeedForwardNet, ErrorCorrection, Vec<Vec<f64>>) {
        let mut rng = Pcg64::seed_from_u64(seed);
        let data = samples(&mut rng, 3);
        let g = FeedForwardNet::glorot(&[3, 5, 3], &mut rng).unwrap();
        let d = FeedForwardNet::glorot(&[6, 5, 5, 1], &mut rng).unwrap();
        let ec = ErrorCorrection {
            a: (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
            learnable: true,
        };
        let eps = (0..3).map(|_| eps_d_sample(&mut rng, 3, 0.1).unwrap()).collect();
        (data, g, d, ec, eps)
    }

    fn generated_dd(g_dims: &[usize], g_params: &[Dd], a: &[Dd], s: &SamplePair, dt: f64) -> Vec<Dd> {
        let upd = dynamics::euler_step(&LorenzField::default(), &s.z, dt);
        let gz = oracles::mlp_forward_dd(g_dims, g_params, &s.z);
        let mut input = gz.clone();
        for j in 0..3 {
            input.push(gz[j] - Dd::new(upd[j]) + a[j] * Dd::new(dt * s.z[j]));
        }
        input
    }

    #[test]
    fn discriminator_gradient_matches_finite_differences() {
        let dt = 0.015;
        let field = LorenzField::default();
        for seed in 0..10 {
            let (data, g, d, ec, eps) = setup(seed);
            let refs: Vec<&SamplePair> = data.iter().collect();
            let batch = GanBatch {
                samples: &refs,
                ec: &ec,
                scheme: ConstraintScheme::EULER_EC,
                dt,
                field: &field,
            };
            let out = discriminator_loss(&batch, &g, &d, &eps).unwrap();
            let g_params: Vec<Dd> = g.params().iter().map(|&v| Dd::new(v)).collect();
            let a: Vec<Dd> = ec.a.iter().map(|&v| Dd::new(v)).collect();
            let fakes: Vec<Vec<Dd>> = data.iter().map(|s| generated_dd(g.dims(), &g_params, &a, s, dt)).collect();
            let fd = oracles::fd_gradient_dd(
                |theta| {
                    let mut total = Dd::ZERO;
                    for ((s, e), fake) in data.iter().zip(&eps).zip(&fakes) {
                        let mut real = s.x_next.clone();
                        real.extend(e);
                        let lr = oracles::mlp_forward_dd(d.dims(), theta, &real)[0];
                        total = total - ln_sigmoid_dd(lr);
                        let fake: Vec<f64> = fake.iter().map(|v| v.to_f64()).collect();
                        let lf = oracles::mlp_forward_dd(d.dims(), theta, &fake)[0];
                        total = total - ln_sigmoid_dd(-lf);
                    }
                    total / Dd::new(data.len() as f64)
                },
                d.params(),
                1e-6,
            );
            let worst = max_relative_discrepancy(&out.grads, &fd);
            assert!(worst < 1e-6, "seed {seed}: {worst:e}");
        }
    }

    #[test]
    fn generator_gradient_matches_finite_differences() {
        let dt = 0.015;
        let field = LorenzField::default();
        for seed in 0..10 {
            let (data, g, d, ec, _) = setup(seed);
            let refs: Vec<&SamplePair> = data.iter().collect();
            let batch = GanBatch {
                samples: &refs,
                ec: &ec,
                scheme: ConstraintScheme::EULER_EC,
                dt,
                field: &field,
            };
            let out = generator_loss(&batch, &g, &d).unwrap();
            let n = g.parameter_count();
            let mut joint = g.params().to_vec();
            joint.extend(&ec.a);
            let d_params: Vec<Dd> = d.params().iter().map(|&v| Dd::new(v)).collect();
            let fd = oracles::fd_gradient_dd(
                |theta| {
                    let mut total = Dd::ZERO;
                    for s in &data {
                        let input = generated_dd(g.dims(), &theta[..n], &theta[n..], s, dt);
                        let logit = oracles::mlp_forward_dd_in(d.dims(), &d_params, &input)[0];
                        total = total - ln_sigmoid_dd(logit);
                    }
                    total / Dd::new(data.len() as f64)
                },
                &joint,
                1e-6,
            );
            let mut analytic = out.param_grads.clone();
            analytic.extend(&out.a_grads);
            let worst = max_relative_discrepancy(&analytic, &fd);
            assert!(worst < 1e-6, "seed {seed}: {worst:e}");
        }
    }

    #[test]
    fn cutting_residual_slot_zeroes_correction_gradient() {
        let (data, g, d, ec, _) = setup(4);
        let refs: Vec<&SamplePair> = data.iter().collect();
        let field = LorenzField::default();
        let batch = GanBatch {
            samples: &refs,
            ec: &ec,
            scheme: ConstraintScheme::EULER_EC,
            dt: 0.015,
            field: &field,
        };
        let full = generator_loss(&batch, &g, &d).unwrap();
        assert!(full.a_grads.iter().any(|&v| v != 0.0));
        let cut = generator_loss_with(&batch, &g, &d, false).unwrap();
        assert_eq!(cut.a_grads, vec![0.0; 3]);
        assert_eq!(cut.loss, full.loss);
    }

    #[test]
    fn frozen_generator_discriminator_separates() {
        let mut rng = Pcg64::seed_from_u64(9);
        let data: Vec<SamplePair> = (0..200)
            .map(|_| SamplePair {
                z: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                x_next: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                time_index: 0,
            })
            .collect();
        let refs: Vec<&SamplePair> = data.iter().collect();
        let g = FeedForwardNet::from_layers(&[3, 3], &[vec![0.0; 9]], &[vec![3.0, 3.0, 3.0]]).unwrap();
        let mut d = FeedForwardNet::glorot(&[3, 8, 1], &mut rng).unwrap();
        let ec = ErrorCorrection::zeros(3, false);
        let field = LorenzField::default();
        let batch = GanBatch {
            samples: &refs,
            ec: &ec,
            scheme: ConstraintScheme::NONE,
            dt: 0.015,
            field: &field,
        };
        let eps = vec![vec![]; refs.len()];
        let mut opt = OptimState::new(d.parameter_count(), AdamConfig::with_learning_rate(1e-2));
        for _ in 0..300 {
            let out = discriminator_loss(&batch, &g, &d, &eps).unwrap();
            opt.step(d.params_mut(), &out.grads).unwrap();
        }
        let fake = d.forward(&[3.0, 3.0, 3.0]).unwrap()[0];
        let correct = data.iter().filter(|s| d.forward(&s.x_next).unwrap()[0] > 0.0).count() + usize::from(fake < 0.0) * data.len();
        let accuracy = correct as f64 / (2 * data.len()) as f64;
        assert!(accuracy > 0.95, "accuracy {accuracy}");
    }

    fn tiny_dataset() -> NoiseCloudDataset {
        let f = LorenzField::default();
        let traj = dynamics::generate_reference(&f, &[0.0, 1.0, 0.0], 1e-3, 0.3, Method::Euler).unwrap();
        NoiseCloudDataset::generate(
            &traj.subsample(15).unwrap(),
            CloudParams {
                n_cloud: 4,
                r_range: 0.02,
                seed: 1,
            },
            dataset::EQUAL_THIRDS,
        )
        .unwrap()
    }

    #[test]
    fn smoke_run_and_report() {
        let data = tiny_dataset();
        let cfg = GanConfig {
            generator_dims: vec![3, 6, 3],
            discriminator_hidden: vec![6],
            batch_size: 8,
            epochs: 1,
            ..GanConfig::default()
        };
        let out = train_gan(&cfg, &data, &LorenzField::default()).unwrap();
        assert_eq!(out.report.epochs.len(), 1);
        let e = &out.report.epochs[0];
        assert!(e.d_loss.is_finite() && e.g_loss.is_finite());
        let csv = out.report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,d_loss,g_loss,d_real_mean,d_fake_mean,a1,a2,a3");
        assert_eq!(lines[1].split(',').count(), 8);
        assert_eq!(out.discriminator.input_dim(), 6);
    }

    #[test]
    fn training_is_reproducible() {
        let data = tiny_dataset();
        let cfg = GanConfig {
            generator_dims: vec![3, 6, 3],
            discriminator_hidden: vec![6],
            batch_size: 8,
            d_steps: 2,
            epochs: 3,
            ..GanConfig::default()
        };
        let a = train_gan(&cfg, &data, &LorenzField::default()).unwrap();
        let b = train_gan(&cfg, &data, &LorenzField::default()).unwrap();
        assert_eq!(a.generator, b.generator);
        assert_eq!(a.discriminator, b.discriminator);
        assert_eq!(a.report, b.report);
    }
}

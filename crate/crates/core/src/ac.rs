//! Deterministic actor-critic training of the flow map.
//!
//! The state is a noise-cloud point `z`, the action is the predicted next
//! state `μ(z)` and the reward is the negative squared error against the
//! clean next state, minus the squared constraint residual. The policy update
//! blends the critic `Q(s, μ(s))` with the bootstrapped reward
//! `r + γ Q'(s', μ'(s'))` through a homotopy parameter `δ` that ramps from 0
//! to 1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::constraints::{ConstraintScheme, ErrorCorrection, ResidualBase};
use crate::dataset::{self, NoiseCloudDataset, SamplePair};
use crate::dynamics::VectorField;
use crate::error::{check_len, Error, Result};
use crate::nn::{layer_dims, AdamConfig, FeedForwardNet, OptimState, Tape};
use crate::rng::{self, Pcg64};
use crate::supervised::fit_terms;

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

/// `-‖μ(z) − x‖² − ‖res(z)‖²`, the residual term present only for an active scheme.
pub fn reward<F: VectorField + ?Sized>(
    z: &[f64],
    mu_z: &[f64],
    x_data: &[f64],
    ec: &ErrorCorrection,
    scheme: ConstraintScheme,
    dt: f64,
    field: &F,
) -> Result<f64> {
    check_len("action", z.len(), mu_z.len())?;
    check_len("target", z.len(), x_data.len())?;
    check_len("correction coefficients", z.len(), ec.dim())?;
    let mut r = -mu_z.iter().zip(x_data).map(|(m, x)| (m - x) * (m - x)).sum::<f64>();
    if let Some(base) = residual_base(z, dt, scheme, field)? {
        r -= base.residual(mu_z, &ec.a).iter().map(|v| v * v).sum::<f64>();
    }
    Ok(r)
}

/// Critic input `(s, a)`.
pub fn critic_input(state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(state.len() + action.len());
    v.extend_from_slice(state);
    v.extend_from_slice(action);
    v
}

/// `γ Q'(s', μ'(s'))`, or zero for a terminal transition or `γ = 0`.
pub fn bootstrap(
    s_next: Option<&[f64]>,
    q_target: &FeedForwardNet,
    mu_target: &FeedForwardNet,
    gamma: f64,
) -> Result<f64> {
    match s_next {
        Some(s) if gamma != 0.0 => {
            let a = mu_target.forward(s)?;
            Ok(gamma * q_target.forward(&critic_input(s, &a))?[0])
        }
        _ => Ok(0.0),
    }
}

/// Bellman target `y = r + γ Q'(s', μ'(s'))`; `y = r` when terminal.
pub fn critic_target(
    r: f64,
    s_next: Option<&[f64]>,
    q_target: &FeedForwardNet,
    mu_target: &FeedForwardNet,
    gamma: f64,
    terminal: bool,
) -> Result<f64> {
    if terminal {
        return Ok(r);
    }
    if s_next.is_none() && gamma != 0.0 {
        return Err(Error::Misuse("non-terminal transition without a next state".into()));
    }
    Ok(r + bootstrap(s_next, q_target, mu_target, gamma)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    pub loss: f64,
    pub grads: Vec<f64>,
}

/// `mean (Q(s, a) − y)²` and its gradient with respect to the critic.
pub fn critic_loss(
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    targets: &[f64],
    q: &FeedForwardNet,
) -> Result<CriticLoss> {
    if states.is_empty() {
        return Err(Error::InsufficientData("critic loss of an empty batch".into()));
    }
    check_len("actions", states.len(), actions.len())?;
    check_len("targets", states.len(), targets.len())?;
    let scale = 1.0 / states.len() as f64;
    let mut grads = vec![0.0; q.parameter_count()];
    let mut tape = Tape::new();
    let mut loss = 0.0;
    for ((s, a), &y) in states.iter().zip(actions).zip(targets) {
        let diff = q.forward_into(&critic_input(s, a), &mut tape)?[0] - y;
        loss += diff * diff;
        q.backward_into(&mut tape, &[scale * 2.0 * diff], &mut grads, None)?;
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite critic loss {loss}")));
    }
    Ok(CriticLoss { loss, grads })
}

/// One transition: the sample pair (state `z`, clean next state) plus the
/// sampled next state `s'` (absent when terminal).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<'a> {
    pub pair: &'a SamplePair,
    pub s_next: Option<Vec<f64>>,
}

/// Online and target networks.
#[derive(Debug, Clone, PartialEq)]
pub struct AcNets {
    pub policy: FeedForwardNet,
    pub critic: FeedForwardNet,
    pub policy_target: FeedForwardNet,
    pub critic_target: FeedForwardNet,
}

impl AcNets {
    pub fn new(policy: FeedForwardNet, critic: FeedForwardNet) -> Self {
        Self {
            policy_target: policy.clone(),
            critic_target: critic.clone(),
            policy,
            critic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyObjective {
    pub objective: f64,
    /// Gradient of the objective (ascent direction).
    pub param_grads: Vec<f64>,
    pub a_grads: Vec<f64>,
    pub mean_reward: f64,
}

/// `mean[δ Q(s, μ(s)) + (1 − δ)(r(s, μ(s)) + γ Q'(s', μ'(s')))]` with the
/// bootstrap term held constant, and its gradient with respect to the policy
/// and `a`.
#[allow(clippy::too_many_arguments)]
pub fn policy_objective_homotopy<F: VectorField + ?Sized>(
    batch: &[Transition<'_>],
    nets: &AcNets,
    ec: &ErrorCorrection,
    scheme: ConstraintScheme,
    dt: f64,
    field: &F,
    gamma: f64,
    delta: f64,
) -> Result<PolicyObjective> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("policy objective of an empty batch".into()));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("homotopy delta {delta} outside [0, 1]")));
    }
    let mu = &nets.policy;
    let q = &nets.critic;
    let m = mu.output_dim();
    check_len("correction coefficients", m, ec.dim())?;
    let scale = 1.0 / batch.len() as f64;
    let mut param_grads = vec![0.0; mu.parameter_count()];
    let mut loss_a_grads = vec![0.0; m];
    let mut q_scratch = vec![0.0; q.parameter_count()];
    let mut q_input_grad = vec![0.0; q.input_dim()];
    let mut upstream = vec![0.0; m];
    let (mut mu_tape, mut q_tape) = (Tape::new(), Tape::new());
    let (mut objective, mut reward_sum) = (0.0, 0.0);
    for t in batch {
        let s = &t.pair.z;
        let base = residual_base(s, dt, scheme, field)?;
        let action = mu.forward_into(s, &mut mu_tape)?.to_vec();
        // fit_terms gives the supervised loss (= -reward) and its gradient.
        let sample_loss = fit_terms(
            &action,
            &t.pair.x_next,
            base.as_ref(),
            &ec.a,
            (1.0 - delta) * scale,
            &mut upstream,
            &mut loss_a_grads,
        );
        reward_sum -= sample_loss;
        for u in upstream.iter_mut() {
            *u = -*u;
        }
        let mut value = 0.0;
        if delta < 1.0 {
            let boot = bootstrap(t.s_next.as_deref(), &nets.critic_target, &nets.policy_target, gamma)?;
            value += (1.0 - delta) * (-sample_loss + boot);
        }
        if delta > 0.0 {
            let q_val = q.forward_into(&critic_input(s, &action), &mut q_tape)?[0];
            value += delta * q_val;
            q.backward_into(&mut q_tape, &[delta * scale], &mut q_scratch, Some(&mut q_input_grad))?;
            for (u, g) in upstream.iter_mut().zip(&q_input_grad[m..]) {
                *u += g;
            }
        }
        objective += value;
        mu.backward_into(&mut mu_tape, &upstream, &mut param_grads, None)?;
    }
    let objective = objective * scale;
    if !objective.is_finite() {
        return Err(Error::Divergence(format!("non-finite policy objective {objective}")));
    }
    Ok(PolicyObjective {
        objective,
        param_grads,
        a_grads: loss_a_grads.into_iter().map(|g| -g).collect(),
        mean_reward: reward_sum * scale,
    })
}

/// `θ' ← τ θ + (1 − τ) θ'`.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) -> Result<()> {
    check_len("soft update", target.len(), online.len())?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside (0, 1]")));
    }
    if tau == 1.0 {
        target.copy_from_slice(online);
        return Ok(());
    }
    for (t, o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

/// `min(1, floor(iteration / interval) * step)`.
pub fn homotopy_schedule(iteration: usize, step: f64, interval: usize) -> f64 {
    ((iteration / interval.max(1)) as f64 * step).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyState {
    pub delta: f64,
    pub iteration: usize,
    pub step: f64,
    pub interval: usize,
}

impl HomotopyState {
    pub fn new(step: f64, interval: usize) -> Result<Self> {
        if !(step > 0.0) || interval == 0 {
            return Err(Error::InvalidArgument(format!(
                "homotopy needs step > 0 and interval >= 1 (got {step}, {interval})"
            )));
        }
        Ok(Self {
            delta: 0.0,
            iteration: 0,
            step,
            interval,
        })
    }

    pub fn advance(&mut self) -> f64 {
        self.iteration += 1;
        self.delta = homotopy_schedule(self.iteration, self.step, self.interval);
        self.delta
    }
}

/// Mean reward of `policy` over `part`.
pub fn mean_reward<F: VectorField + ?Sized>(
    part: &[SamplePair],
    policy: &FeedForwardNet,
    ec: &ErrorCorrection,
    scheme: ConstraintScheme,
    dt: f64,
    field: &F,
) -> Result<f64> {
    if part.is_empty() {
        return Err(Error::InsufficientData("mean reward of an empty split".into()));
    }
    let mut tape = Tape::new();
    let mut sum = 0.0;
    for s in part {
        let a = policy.forward_into(&s.z, &mut tape)?;
        sum += reward(&s.z, a, &s.x_next, ec, scheme, dt, field)?;
    }
    Ok(sum / part.len() as f64)
}

/// Draws next states: a random cloud point of the following anchor, or a
/// fresh perturbation of the clean next state when that anchor has no
/// points in the split. The last anchor is terminal.
pub struct TransitionSampler<'a> {
    by_anchor: BTreeMap<usize, Vec<&'a [f64]>>,
    last_anchor: usize,
    r_range: f64,
    rng: Pcg64,
}

impl<'a> TransitionSampler<'a> {
    pub fn new(part: &'a [SamplePair], last_anchor: usize, r_range: f64, rng: Pcg64) -> Self {
        let mut by_anchor: BTreeMap<usize, Vec<&'a [f64]>> = BTreeMap::new();
        for p in part {
            by_anchor.entry(p.time_index).or_default().push(&p.z);
        }
        Self {
            by_anchor,
            last_anchor,
            r_range,
            rng,
        }
    }

    pub fn is_terminal(&self, pair: &SamplePair) -> bool {
        pair.time_index >= self.last_anchor
    }

    pub fn next_state(&mut self, pair: &SamplePair) -> Option<Vec<f64>> {
        if self.is_terminal(pair) {
            return None;
        }
        match self.by_anchor.get(&(pair.time_index + 1)) {
            Some(points) if !points.is_empty() => {
                let k = self.rng.random_range(0..points.len());
                Some(points[k].to_vec())
            }
            _ => Some(dataset::sample_cloud_point(&pair.x_next, self.r_range, &mut self.rng)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcConfig {
    pub policy_dims: Vec<usize>,
    /// Hidden widths of the critic; its input is `(s, a)` and its output a scalar.
    pub critic_hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub homotopy_step: f64,
    pub homotopy_interval: usize,
    /// Holds `δ` constant instead of following the schedule.
    pub fixed_delta: Option<f64>,
    pub iterations: usize,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub scheme: ConstraintScheme,
    pub dt: f64,
    pub seed: u64,
}

impl Default for AcConfig {
    fn default() -> Self {
        Self {
            policy_dims: layer_dims(3, 20, 10, 3),
            critic_hidden: vec![20; 15],
            gamma: 1.0,
            tau: 0.001,
            batch_size: 33,
            homotopy_step: 0.1,
            homotopy_interval: 2000,
            fixed_delta: None,
            iterations: 20_000,
            lr_policy: 1e-3,
            lr_critic: 1e-3,
            scheme: ConstraintScheme::EULER_EC,
            dt: 1.5e-2,
            seed: 0,
        }
    }
}

impl AcConfig {
    pub fn critic_dims(&self) -> Vec<usize> {
        let m = self.policy_dims.last().copied().unwrap_or(0);
        let mut dims = vec![2 * m];
        dims.extend(&self.critic_hidden);
        dims.push(1);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.policy_dims;
        if d.len() < 2 || d[0] != d[d.len() - 1] {
            return Err(Error::config("policy_dims", "input and output widths must both equal the state dimension"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("tau", "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.homotopy_step > 0.0) {
            return Err(Error::config("homotopy_step", "must be positive"));
        }
        if self.homotopy_interval == 0 {
            return Err(Error::config("homotopy_interval", "must be at least 1"));
        }
        if let Some(d) = self.fixed_delta {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::config("fixed_delta", "must lie in [0, 1]"));
            }
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        if !(self.lr_policy > 0.0 && self.lr_critic > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcRecord {
    pub iteration: usize,
    pub delta: f64,
    pub mean_reward: f64,
    pub critic_loss: f64,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AcReport {
    pub iterations: Vec<AcRecord>,
    pub diverged: Option<String>,
}

impl AcReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,delta,mean_reward,critic_loss,a1,a2,a3\n");
        for r in &self.iterations {
            let _ = write!(out, "{},{},{},{}", r.iteration, r.delta, r.mean_reward, r.critic_loss);
            for v in &r.a {
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
pub struct AcOutcome {
    pub nets: AcNets,
    pub correction: ErrorCorrection,
    pub report: AcReport,
}

pub fn train_ac<F: VectorField + ?Sized>(
    config: &AcConfig,
    data: &NoiseCloudDataset,
    field: &F,
) -> Result<AcOutcome> {
    config.validate()?;
    let train = &data.train;
    let m = dataset::clamp_batch_size(config.batch_size, train.len())?;
    let last_anchor = data.last_anchor().unwrap_or(0);

    let mut rng = rng::seeded(config.seed);
    let policy = FeedForwardNet::glorot(&config.policy_dims, &mut rng)?;
    let critic = FeedForwardNet::glorot(&config.critic_dims(), &mut rng::substream(config.seed, "critic"))?;
    let mut nets = AcNets::new(policy, critic);
    let mut sampler = TransitionSampler::new(
        train,
        last_anchor,
        data.params.r_range,
        rng::substream(config.seed, "transition"),
    );

    let dim = nets.policy.output_dim();
    let learn_a = config.scheme.uses_correction();
    let mut ec = ErrorCorrection::zeros(dim, learn_a);
    let n_mu = nets.policy.parameter_count();
    let mut opt_q = OptimState::new(nets.critic.parameter_count(), AdamConfig::with_learning_rate(config.lr_critic));
    let mut opt_mu = OptimState::new(n_mu + if learn_a { dim } else { 0 }, AdamConfig::with_learning_rate(config.lr_policy));
    let mut mu_grads = vec![0.0; opt_mu.len()];
    let mut homotopy = HomotopyState::new(config.homotopy_step, config.homotopy_interval)?;

    let mut report = AcReport::default();
    let mut queue: Vec<Vec<usize>> = Vec::new();
    let mut tape = Tape::new();
    for iteration in 0..config.iterations {
        if queue.is_empty() {
            queue = dataset::epoch_batches(train.len(), m, &mut rng);
            queue.reverse();
        }
        let idx = queue.pop().unwrap_or_default();
        let batch: Vec<Transition<'_>> = idx
            .iter()
            .map(|&i| {
                let pair = &train[i];
                Transition {
                    pair,
                    s_next: sampler.next_state(pair),
                }
            })
            .collect();
        let delta = config.fixed_delta.unwrap_or(homotopy.delta);

        let step = (|| -> Result<(f64, f64)> {
            let mut states = Vec::with_capacity(batch.len());
            let mut actions = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for t in &batch {
                let action = nets.policy.forward_into(&t.pair.z, &mut tape)?.to_vec();
                let r = reward(&t.pair.z, &action, &t.pair.x_next, &ec, config.scheme, config.dt, field)?;
                targets.push(critic_target(
                    r,
                    t.s_next.as_deref(),
                    &nets.critic_target,
                    &nets.policy_target,
                    config.gamma,
                    t.s_next.is_none(),
                )?);
                states.push(t.pair.z.clone());
                actions.push(action);
            }
            let cl = critic_loss(&states, &actions, &targets, &nets.critic)?;
            opt_q.step(nets.critic.params_mut(), &cl.grads)?;

            let po = policy_objective_homotopy(&batch, &nets, &ec, config.scheme, config.dt, field, config.gamma, delta)?;
            for (g, p) in mu_grads.iter_mut().zip(&po.param_grads) {
                *g = -p;
            }
            if learn_a {
                for (g, p) in mu_grads[n_mu..].iter_mut().zip(&po.a_grads) {
                    *g = -p;
                }
                opt_mu.step_parts(&mut [nets.policy.params_mut(), &mut ec.a], &mu_grads)?;
            } else {
                opt_mu.step(nets.policy.params_mut(), &mu_grads)?;
            }
            soft_update(nets.critic_target.params_mut(), nets.critic.params(), config.tau)?;
            soft_update(nets.policy_target.params_mut(), nets.policy.params(), config.tau)?;
            Ok((po.mean_reward, cl.loss))
        })();
        let (mean_reward, critic_loss) = match step {
            Ok(v) => v,
            Err(Error::Divergence(msg)) => {
                report.diverged = Some(format!("iteration {iteration}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if (iteration + 1) % 1000 == 0 {
            log::info!("iteration {}: delta {delta:.2} mean reward {mean_reward:.4e} critic loss {critic_loss:.3e}", iteration + 1);
        }
        report.iterations.push(AcRecord {
            iteration,
            delta,
            mean_reward,
            critic_loss,
            a: ec.a.clone(),
        });
        homotopy.advance();
    }

    Ok(AcOutcome {
        nets,
        correction: ec,
        report,
    })
}

//! Decentralized multi-agent actor-critic trainer: one softmax actor per
//! component over {do-nothing, inspect, repair}, a centralized linear-head
//! critic, a FIFO replay buffer, truncated importance sampling, ε-greedy
//! exploration with do-nothing priming, and annealed learning rates.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{ActionVector, ComponentAction};
use crate::environment::{AgentView, Environment, Policy};
use crate::error::{Error, Result};
use crate::nnet::{Adam, Gradients, Mlp, MlpSpec, OutputActivation};
use crate::rng::derived_rng;

pub const N_ACTIONS: usize = 3;

pub fn action_index(a: ComponentAction) -> usize {
    match a {
        ComponentAction::DoNothing => 0,
        ComponentAction::Inspect => 1,
        ComponentAction::Repair => 2,
    }
}

pub fn index_action(i: usize) -> ComponentAction {
    match i {
        0 => ComponentAction::DoNothing,
        1 => ComponentAction::Inspect,
        _ => ComponentAction::Repair,
    }
}

/// How the observable deterioration rate and the time step enter the network
/// input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarEncoding {
    /// Zero-one indicator vector.
    OneHot,
    /// Single value scaled into [0, 1].
    Normalized,
}

/// Fixed encoding of the agent-visible information into a flat network
/// input: all marginal crack beliefs, the deterioration rates, and the time
/// step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEncoder {
    pub n_components: usize,
    pub n_crack: usize,
    pub n_rate: usize,
    pub horizon: usize,
    pub rate_encoding: ScalarEncoding,
    pub time_encoding: ScalarEncoding,
}

impl InputEncoder {
    pub fn dim(&self) -> usize {
        let rate = match self.rate_encoding {
            ScalarEncoding::OneHot => self.n_components * self.n_rate,
            ScalarEncoding::Normalized => self.n_components,
        };
        let time = match self.time_encoding {
            ScalarEncoding::OneHot => self.horizon + 1,
            ScalarEncoding::Normalized => 1,
        };
        self.n_components * self.n_crack + rate + time
    }

    pub fn encode(&self, view: &AgentView) -> Array1<f64> {
        let mut x = Array1::zeros(self.dim());
        let mut k = 0;
        for m in &view.marginals {
            for &p in m {
                x[k] = p;
                k += 1;
            }
        }
        match self.rate_encoding {
            ScalarEncoding::OneHot => {
                for &r in &view.rate {
                    x[k + r.min(self.n_rate - 1)] = 1.0;
                    k += self.n_rate;
                }
            }
            ScalarEncoding::Normalized => {
                for &r in &view.rate {
                    x[k] = r as f64 / (self.n_rate.max(2) - 1) as f64;
                    k += 1;
                }
            }
        }
        match self.time_encoding {
            ScalarEncoding::OneHot => {
                x[k + view.t.min(self.horizon)] = 1.0;
            }
            ScalarEncoding::Normalized => {
                x[k] = view.t as f64 / self.horizon as f64;
            }
        }
        x
    }
}

/// One stored transition.
#[derive(Clone, Debug)]
pub struct Experience {
    pub input: Array1<f64>,
    pub actions: Vec<usize>,
    /// Probability the behavior policy assigned to each taken component
    /// action (the ε-mixture actually sampled from).
    pub behavior_probs: Vec<f64>,
    /// Discounted sum of the rewards covered by this transition (a single
    /// reward for one-step transitions, `Σ γ^k r_{t+k}` for n-step ones).
    pub reward: f64,
    pub input_next: Array1<f64>,
    /// Discount applied to the bootstrap value of `input_next`: `γ` for a
    /// one-step transition, `γ^n` for an n-step one.
    pub n_gamma: f64,
    pub terminal: bool,
}

/// FIFO replay buffer with uniform sampling.
#[derive(Debug, Default)]
pub struct ReplayBuffer {
    items: VecDeque<Experience>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { items: VecDeque::with_capacity(capacity.min(1 << 20)), capacity }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    /// Uniformly sampled indices into the buffer.
    pub fn sample_indices(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..batch).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }
}

/// Piecewise-linear schedule: linear from `initial` to `final_value` over
/// `anneal_episodes`, constant afterwards.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub initial: f64,
    pub final_value: f64,
    pub anneal_episodes: usize,
}

impl LinearSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        if self.anneal_episodes == 0 || episode >= self.anneal_episodes {
            return self.final_value;
        }
        let f = episode as f64 / self.anneal_episodes as f64;
        self.initial + (self.final_value - self.initial) * f
    }
}

/// Parameter update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient ascent with the scheduled learning rate.
    Sgd,
    /// Adam with default moment coefficients; the scheduled learning rate
    /// becomes the Adam step size.
    Adam,
}

/// Per-network optimizer state for one training run.
pub enum OptimState {
    Sgd,
    Adam { actors: Vec<Adam>, critic: Adam },
}

impl OptimState {
    pub fn new(kind: OptimizerKind, nets: &DdmacNets) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimState::Sgd,
            OptimizerKind::Adam => OptimState::Adam {
                actors: nets.actors.iter().map(Adam::new).collect(),
                critic: Adam::new(&nets.critic),
            },
        }
    }

    fn critic_step(
        &mut self,
        net: &mut Mlp,
        grads: &Gradients,
        lr: f64,
        clip_norm: Option<f64>,
    ) -> Result<()> {
        match self {
            OptimState::Sgd => net.sgd_step(grads, lr, clip_norm),
            OptimState::Adam { critic, .. } => critic.step(net, grads, lr, clip_norm),
        }
    }

    fn actor_step(
        &mut self,
        l: usize,
        net: &mut Mlp,
        grads: &Gradients,
        lr: f64,
        clip_norm: Option<f64>,
    ) -> Result<()> {
        match self {
            OptimState::Sgd => net.sgd_step(grads, lr, clip_norm),
            OptimState::Adam { actors, .. } => actors[l].step(net, grads, lr, clip_norm),
        }
    }
}

/// Trainer hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_lr: LinearSchedule,
    pub critic_lr: LinearSchedule,
    pub exploration: LinearSchedule,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub is_clip: f64,
    /// Episodes during which random exploration draws favor do-nothing.
    pub do_nothing_priming: usize,
    /// Probability a priming-phase random draw picks do-nothing.
    pub priming_prob: f64,
    pub warmup_transitions: usize,
    /// Gradient updates happen every this many environment steps.
    pub update_every: usize,
    pub clip_norm: Option<f64>,
    /// Weight of the actor entropy bonus (0 disables it).
    pub entropy_coef: f64,
    /// Standardize advantages (zero mean, unit variance) per batch in the
    /// actor update; the critic always sees raw advantages.
    pub normalize_advantages: bool,
    /// Parameter update rule for both the actors and the critic.
    pub optimizer: OptimizerKind,
    /// Number of environment steps folded into each stored transition: the
    /// temporal-difference target bootstraps from the state `n_step` steps
    /// ahead. Larger values propagate delayed costs to the critic faster at
    /// the price of more off-policy bias from the replayed behavior actions
    /// inside the window.
    pub n_step: usize,
    pub rate_encoding: ScalarEncoding,
    pub time_encoding: ScalarEncoding,
    /// Window of the cost moving average reported in the curves.
    pub curve_window: usize,
    /// Abort if the moving-average cost worsens by this factor over 5,000
    /// episodes.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 50_000,
            actor_hidden: vec![100, 100],
            critic_hidden: vec![100, 100],
            actor_lr: LinearSchedule { initial: 1e-4, final_value: 1e-5, anneal_episodes: 20_000 },
            critic_lr: LinearSchedule { initial: 1e-3, final_value: 1e-4, anneal_episodes: 20_000 },
            exploration: LinearSchedule { initial: 1.0, final_value: 0.01, anneal_episodes: 20_000 },
            buffer_capacity: 100_000,
            batch_size: 64,
            is_clip: 2.0,
            do_nothing_priming: 2_000,
            priming_prob: 0.9,
            warmup_transitions: 1_000,
            update_every: 1,
            clip_norm: Some(10.0),
            entropy_coef: 0.0,
            normalize_advantages: false,
            optimizer: OptimizerKind::Sgd,
            n_step: 1,
            rate_encoding: ScalarEncoding::OneHot,
            time_encoding: ScalarEncoding::OneHot,
            curve_window: 100,
            divergence_factor: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        if !(self.is_clip > 0.0) {
            return Err(Error::Config("importance-sampling clip must be > 0".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config("buffer capacity must be >= batch size >= 1".into()));
        }
        if self.update_every == 0 {
            return Err(Error::Config("update_every must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.priming_prob) {
            return Err(Error::Config("priming_prob must lie in [0, 1]".into()));
        }
        if !self.entropy_coef.is_finite() || self.entropy_coef < 0.0 {
            return Err(Error::Config("entropy_coef must be finite and >= 0".into()));
        }
        if self.n_step == 0 {
            return Err(Error::Config("n_step must be >= 1".into()));
        }
        for (name, s) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("exploration", self.exploration),
        ] {
            if s.final_value > s.initial {
                return Err(Error::Config(format!("{name} schedule must be non-increasing")));
            }
        }
        Ok(())
    }
}

/// Actor and critic networks plus the input encoding.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DdmacNets {
    pub encoder: InputEncoder,
    pub actors: Vec<Mlp>,
    pub critic: Mlp,
}

impl DdmacNets {
    pub fn init(encoder: InputEncoder, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let actors = (0..encoder.n_components)
            .map(|c| {
                Mlp::init(
                    MlpSpec {
                        input_dim: encoder.dim(),
                        hidden: cfg.actor_hidden.clone(),
                        output_dim: N_ACTIONS,
                        output_activation: OutputActivation::Softmax,
                    },
                    seed.wrapping_add(1 + c as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let critic = Mlp::init(
            MlpSpec {
                input_dim: encoder.dim(),
                hidden: cfg.critic_hidden.clone(),
                output_dim: 1,
                output_activation: OutputActivation::Linear,
            },
            seed,
        )?;
        Ok(DdmacNets { encoder, actors, critic })
    }

    /// All actor distributions for one input.
    pub fn actor_probs(&self, input: &Array1<f64>) -> Result<Vec<Array1<f64>>> {
        self.actors.iter().map(|a| a.forward(input.view())).collect()
    }

    pub fn value(&self, input: &Array1<f64>) -> Result<f64> {
        Ok(self.critic.forward(input.view())?[0])
    }
}

/// Joint probability of a decentralized action: the product of the
/// per-component actor probabilities.
pub fn joint_policy_prob(actor_outputs: &[Array1<f64>], actions: &[usize]) -> f64 {
    actor_outputs.iter().zip(actions).map(|(p, &a)| p[a]).product()
}

/// Temporal-difference advantage of a stored transition; the bootstrap term
/// is dropped on terminal transitions.
pub fn advantage(exp: &Experience, critic: &Mlp) -> Result<f64> {
    let v = critic.forward(exp.input.view())?[0];
    let target = if exp.terminal {
        exp.reward
    } else {
        exp.reward + exp.n_gamma * critic.forward(exp.input_next.view())?[0]
    };
    Ok(target - v)
}

/// Truncated importance-sampling weight `min(c, π/μ)`.
pub fn importance_weight(pi_prob: f64, mu_prob: f64, c: f64) -> Result<f64> {
    if !(mu_prob > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "behavior probability {mu_prob} must be positive"
        )));
    }
    Ok((pi_prob / mu_prob).min(c))
}

/// Precomputed per-batch quantities shared by the actor and critic updates.
struct BatchTensors {
    inputs: Array2<f64>,
    weights: Vec<f64>,
    advantages: Vec<f64>,
}

fn assemble_batch(
    buffer: &ReplayBuffer,
    indices: &[usize],
    nets: &DdmacNets,
    c: f64,
) -> Result<BatchTensors> {
    let b = indices.len();
    let dim = nets.encoder.dim();
    let mut inputs = Array2::zeros((b, dim));
    let mut next_inputs = Array2::zeros((b, dim));
    for (row, &i) in indices.iter().enumerate() {
        inputs.row_mut(row).assign(&buffer.get(i).input);
        next_inputs.row_mut(row).assign(&buffer.get(i).input_next);
    }
    let v = nets.critic.forward_batch(&inputs)?;
    let v_next = nets.critic.forward_batch(&next_inputs)?;
    let mut advantages = Vec::with_capacity(b);
    for (row, &i) in indices.iter().enumerate() {
        let e = buffer.get(i);
        let target = if e.terminal {
            e.reward
        } else {
            e.reward + e.n_gamma * v_next.output()[(row, 0)]
        };
        advantages.push(target - v.output()[(row, 0)]);
    }
    // current joint π of the taken actions, per sample
    let mut pi = vec![1.0f64; b];
    for (l, actor) in nets.actors.iter().enumerate() {
        let out = actor.forward_batch(&inputs)?;
        for (row, &i) in indices.iter().enumerate() {
            let a = buffer.get(i).actions[l];
            pi[row] *= out.output()[(row, a)];
        }
    }
    let mut weights = Vec::with_capacity(b);
    for (row, &i) in indices.iter().enumerate() {
        let e = buffer.get(i);
        let mu: f64 = e.behavior_probs.iter().product();
        weights.push(importance_weight(pi[row], mu, c)?);
    }
    Ok(BatchTensors { inputs, weights, advantages })
}

/// One gradient-ascent step on every actor along
/// `w_i · ∇ log π_l(a_i^l | b_i) · A_i`, averaged over the batch.
pub fn update_actors(
    buffer: &ReplayBuffer,
    indices: &[usize],
    nets: &mut DdmacNets,
    c: f64,
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<()> {
    let batch = assemble_batch(buffer, indices, nets, c)?;
    let b = indices.len() as f64;
    for (l, actor) in nets.actors.iter_mut().enumerate() {
        let cache = actor.forward_batch(&batch.inputs)?;
        let probs = cache.output();
        let mut upstream = Array2::zeros((indices.len(), N_ACTIONS));
        for (row, &i) in indices.iter().enumerate() {
            let a = buffer.get(i).actions[l];
            // ∂/∂p of (w·A·log p[a]) / batch
            upstream[(row, a)] =
                batch.weights[row] * batch.advantages[row] / (probs[(row, a)] * b);
        }
        let grads = actor.backward_batch(&cache, &upstream)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("actor gradient".into()));
        }
        actor.sgd_step(&grads, lr, clip_norm)?;
    }
    Ok(())
}

/// One semi-gradient ascent step on the critic along
/// `w_i · ∇V(b_i) · A_i`, averaged over the batch (the TD target is treated
/// as a constant).
pub fn update_critic(
    buffer: &ReplayBuffer,
    indices: &[usize],
    nets: &mut DdmacNets,
    c: f64,
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<()> {
    let batch = assemble_batch(buffer, indices, nets, c)?;
    let cache = nets.critic.forward_batch(&batch.inputs)?;
    let b = indices.len() as f64;
    let mut upstream = Array2::zeros((indices.len(), 1));
    for row in 0..indices.len() {
        upstream[(row, 0)] = batch.weights[row] * batch.advantages[row] / b;
    }
    let grads = nets.critic.backward_batch(&cache, &upstream)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("critic gradient".into()));
    }
    nets.critic.sgd_step(&grads, lr, clip_norm)
}

/// One combined gradient step for the critic and every actor from a single
/// batch assembly: advantages and importance weights are computed once,
/// against the pre-update critic, and shared by all updates.
///
/// The critic always regresses on the raw advantages. The actors optionally
/// see batch-normalized advantages (zero mean, unit variance), which makes
/// the policy gradient invariant to the cost scale, and an entropy bonus
/// that keeps low-probability actions recoverable under truncated
/// importance weighting.
#[allow(clippy::too_many_arguments)]
pub fn update_step(
    buffer: &ReplayBuffer,
    indices: &[usize],
    nets: &mut DdmacNets,
    c: f64,
    actor_lr: f64,
    critic_lr: f64,
    clip_norm: Option<f64>,
    entropy_coef: f64,
    normalize_advantages: bool,
    opt: &mut OptimState,
) -> Result<()> {
    let batch = assemble_batch(buffer, indices, nets, c)?;
    let b = indices.len() as f64;

    let cache = nets.critic.forward_batch(&batch.inputs)?;
    let mut upstream = Array2::zeros((indices.len(), 1));
    for row in 0..indices.len() {
        upstream[(row, 0)] = batch.weights[row] * batch.advantages[row] / b;
    }
    let grads = nets.critic.backward_batch(&cache, &upstream)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("critic gradient".into()));
    }
    opt.critic_step(&mut nets.critic, &grads, critic_lr, clip_norm)?;

    let actor_adv: Vec<f64> = if normalize_advantages {
        let mean = batch.advantages.iter().sum::<f64>() / b;
        let var = batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / b;
        let scale = 1.0 / (var.sqrt() + 1e-8);
        batch.advantages.iter().map(|a| (a - mean) * scale).collect()
    } else {
        batch.advantages.clone()
    };

    for (l, actor) in nets.actors.iter_mut().enumerate() {
        let cache = actor.forward_batch(&batch.inputs)?;
        let probs = cache.output();
        let mut upstream = Array2::zeros((indices.len(), N_ACTIONS));
        for (row, &i) in indices.iter().enumerate() {
            let a = buffer.get(i).actions[l];
            upstream[(row, a)] =
                batch.weights[row] * actor_adv[row] / (probs[(row, a)] * b);
            if entropy_coef > 0.0 {
                // ∂/∂p of −Σ_j p_j ln p_j, scaled into the batch average
                for j in 0..N_ACTIONS {
                    upstream[(row, j)] += entropy_coef * (-probs[(row, j)].ln() - 1.0) / b;
                }
            }
        }
        let grads = actor.backward_batch(&cache, &upstream)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("actor gradient".into()));
        }
        opt.actor_step(l, actor, &grads, actor_lr, clip_norm)?;
    }
    Ok(())
}

/// One point of the training curve.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean_cost: f64,
    pub epsilon: f64,
    pub actor_lr: f64,
}

/// Writes the training curve as CSV (`episode, mean_cost, epsilon,
/// actor_lr`).
pub fn write_curves_csv<W: std::io::Write>(w: &mut W, curves: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(w, "episode,mean_cost,epsilon,actor_lr")?;
    for p in curves {
        writeln!(w, "{},{},{},{}", p.episode, p.mean_cost, p.epsilon, p.actor_lr)?;
    }
    Ok(())
}

/// Trainer output: final networks and the training curve.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub nets: DdmacNets,
    pub curves: Vec<CurvePoint>,
}

fn random_action_probs(priming: bool, priming_prob: f64) -> [f64; N_ACTIONS] {
    if priming {
        let rest = (1.0 - priming_prob) / (N_ACTIONS as f64 - 1.0);
        [priming_prob, rest, rest]
    } else {
        [1.0 / N_ACTIONS as f64; N_ACTIONS]
    }
}

fn sample_discrete(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Runs the full training loop (Algorithm: collect one step, store the
/// transition with its exact behavior probability, update actors and critic
/// on a uniform replay batch).
///
/// Exploration uses an independent ε-coin per component, so the stored
/// behavior probability `μ_l = ε·p_rand(a_l) + (1−ε)·π_l(a_l)` is exactly
/// the density the action was drawn from.
pub fn train(env: &Environment, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let encoder = InputEncoder {
        n_components: env.config.n_components,
        n_crack: env.model.grids.n_crack,
        n_rate: env.model.grids.n_rate,
        horizon: env.config.horizon_years,
        rate_encoding: cfg.rate_encoding,
        time_encoding: cfg.time_encoding,
    };
    let mut nets = DdmacNets::init(encoder, cfg, seed)?;
    let mut opt = OptimState::new(cfg.optimizer, &nets);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut rng = derived_rng(seed, &[0x545249]); // training stream
    let gamma = env.config.gamma;

    let mut curves = Vec::new();
    let mut window = VecDeque::with_capacity(cfg.curve_window);
    // divergence reference: moving-average cost 5,000 episodes ago
    let mut ma_history: VecDeque<(usize, f64)> = VecDeque::new();
    let mut step_counter: usize = 0;

    for episode in 0..cfg.episodes {
        let eps = cfg.exploration.at(episode);
        let actor_lr = cfg.actor_lr.at(episode);
        let critic_lr = cfg.critic_lr.at(episode);
        let priming = episode < cfg.do_nothing_priming;
        let p_rand = random_action_probs(priming, cfg.priming_prob);

        let mut state = env.reset(derived_rng(seed, &[1, episode as u64]).random())?;
        let mut input = nets.encoder.encode(&env.agent_view(&state));
        let mut disc = 1.0;
        let mut ep_cost = 0.0;
        // raw one-step transitions of the current episode, folded into
        // n-step experiences once the episode ends (n_step > 1 only)
        let mut pending: Vec<Experience> = Vec::new();

        while !state.done {
            // per-component ε-mixture action selection
            let probs = nets.actor_probs(&input)?;
            let mut actions = Vec::with_capacity(probs.len());
            let mut behavior = Vec::with_capacity(probs.len());
            for pl in &probs {
                let a = if rng.random::<f64>() < eps {
                    sample_discrete(&p_rand, &mut rng)
                } else {
                    sample_discrete(pl.as_slice().unwrap(), &mut rng)
                };
                behavior.push(eps * p_rand[a] + (1.0 - eps) * pl[a]);
                actions.push(a);
            }
            let action_vec: ActionVector = actions.iter().map(|&a| index_action(a)).collect();
            let step = env.step(&mut state, &action_vec)?;
            ep_cost += disc * step.reward;
            disc *= gamma;
            let input_next = nets.encoder.encode(&env.agent_view(&state));
            let exp = Experience {
                input: std::mem::replace(&mut input, input_next.clone()),
                actions,
                behavior_probs: behavior,
                reward: step.reward,
                input_next,
                n_gamma: gamma,
                terminal: state.done,
            };
            if cfg.n_step > 1 {
                pending.push(exp);
            } else {
                buffer.push(exp);
            }
            step_counter += 1;

            if buffer.len() >= cfg.warmup_transitions && step_counter % cfg.update_every == 0 {
                let indices = buffer.sample_indices(cfg.batch_size, &mut rng);
                update_step(
                    &buffer,
                    &indices,
                    &mut nets,
                    cfg.is_clip,
                    actor_lr,
                    critic_lr,
                    cfg.clip_norm,
                    cfg.entropy_coef,
                    cfg.normalize_advantages,
                    &mut opt,
                )?;
            }
        }
        if cfg.n_step > 1 {
            let t_len = pending.len();
            for t in 0..t_len {
                let n = cfg.n_step.min(t_len - t);
                let mut reward = 0.0;
                let mut g = 1.0;
                for e in &pending[t..t + n] {
                    reward += g * e.reward;
                    g *= gamma;
                }
                let last = &pending[t + n - 1];
                buffer.push(Experience {
                    input: pending[t].input.clone(),
                    actions: pending[t].actions.clone(),
                    behavior_probs: pending[t].behavior_probs.clone(),
                    reward,
                    input_next: last.input_next.clone(),
                    n_gamma: g,
                    terminal: last.terminal,
                });
            }
        }

        if window.len() == cfg.curve_window {
            window.pop_front();
        }
        window.push_back(ep_cost);
        let ma = window.iter().sum::<f64>() / window.len() as f64;
        if (episode + 1) % cfg.curve_window.max(1) == 0 || episode + 1 == cfg.episodes {
            curves.push(CurvePoint { episode: episode + 1, mean_cost: ma, epsilon: eps, actor_lr });
        }
        ma_history.push_back((episode, ma));
        while ma_history.front().is_some_and(|&(e, _)| episode - e > 5_000) {
            ma_history.pop_front();
        }
        if episode >= 5_000 && window.len() == cfg.curve_window {
            let (_, old) = *ma_history.front().unwrap();
            // costs are negative rewards; "worsening by 10x" means the
            // magnitude of the average cost grew by the configured factor
            if old < 0.0 && ma < cfg.divergence_factor * old {
                return Err(Error::Diverged(format!(
                    "moving-average cost {ma:.3} vs {old:.3} five thousand episodes earlier \
                     (episode {episode})"
                )));
            }
        }
    }

    Ok(TrainOutcome { nets, curves })
}

/// Evaluation-time policy: samples every component's action from its actor
/// distribution (greedy mode takes the argmax instead).
#[derive(Clone, Debug)]
pub struct DdmacPolicy {
    pub nets: DdmacNets,
    pub greedy: bool,
}

impl Policy for DdmacPolicy {
    fn act(&self, view: &AgentView, rng: &mut ChaCha8Rng) -> ActionVector {
        let input = self.nets.encoder.encode(view);
        let probs = self.nets.actor_probs(&input).expect("actor forward");
        probs
            .iter()
            .map(|p| {
                let a = if self.greedy {
                    p.iter()
                        .enumerate()
                        .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                        .unwrap()
                        .0
                } else {
                    sample_discrete(p.as_slice().unwrap(), rng)
                };
                index_action(a)
            })
            .collect()
    }
}

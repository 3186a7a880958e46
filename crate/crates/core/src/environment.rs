//! Episode engine for the factored POMDP: ground-truth simulation of
//! correlated fatigue deterioration in continuous crack space, inspection
//! observation sampling, belief maintenance on the discretized model, the two
//! cost models (individual and campaign), and batch policy evaluation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{
    step_hierarchical, ActionVector, ComponentAction, ComponentObservation, ObservationVector,
    SystemBelief,
};
use crate::correlation::{ConditionalPrior, CorrelationStructure};
use crate::discretization::DeteriorationModel;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::reliability::{annual_risk, SystemModel};
use crate::rng::{derive_seed, derived_rng};

/// How inspection, repair and campaign costs are charged per step.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel {
    Individual { r_ins: f64, r_rep: f64 },
    Campaign { r_camp: f64, r_ins_surplus: f64, r_rep: f64 },
}

/// Whether failure cost accrues as belief-based annual risk (default) or as
/// a realized failure event sampled from the ground truth.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RiskMode {
    #[default]
    BeliefRisk,
    RealizedFailure,
}

/// Scalar configuration of an experiment environment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_components: usize,
    pub horizon_years: usize,
    pub gamma: f64,
    pub cost_model: CostModel,
    pub r_fail: f64,
    #[serde(default)]
    pub risk_mode: RiskMode,
    pub seed: u64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::Config("n_components must be positive".into()));
        }
        if self.horizon_years == 0 {
            return Err(Error::Config("horizon must be at least one year".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        let nonpos = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 || v.is_nan() {
                Err(Error::Config(format!("{name} = {v} must be <= 0 (rewards are negative costs)")))
            } else {
                Ok(())
            }
        };
        match self.cost_model {
            CostModel::Individual { r_ins, r_rep } => {
                nonpos("r_ins", r_ins)?;
                nonpos("r_rep", r_rep)?;
            }
            CostModel::Campaign { r_camp, r_ins_surplus, r_rep } => {
                nonpos("r_camp", r_camp)?;
                nonpos("r_ins_surplus", r_ins_surplus)?;
                nonpos("r_rep", r_rep)?;
            }
        }
        nonpos("r_fail", self.r_fail)
    }
}

/// Whether the hidden ground truth evolves in continuous crack space (the
/// realistic default, which deliberately retains the discretization model
/// mismatch) or follows the discretized transition tables exactly (a
/// diagnostic mode under which the belief filter is the exact posterior, so
/// value-iteration oracles apply).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TruthMode {
    #[default]
    Continuous,
    Discrete,
}

/// A fully assembled environment: discretized deterioration model, fitted
/// correlation structure with its conditional prior, system-level reliability
/// model, and scalar configuration.
#[derive(Clone, Debug)]
pub struct Environment {
    pub config: EnvConfig,
    pub model: DeteriorationModel,
    pub structure: CorrelationStructure,
    pub prior: ConditionalPrior,
    pub system: SystemModel,
    pub truth_mode: TruthMode,
}

/// Per-component ground-truth deterioration variables: fixed growth-law
/// coefficient and stress range, current crack size (and its bin, which is
/// the authoritative state under [`TruthMode::Discrete`]).
#[derive(Clone, Debug)]
struct TruthComponent {
    crack: f64,
    bin: usize,
    c: f64,
    s: f64,
}

/// Full state of one episode: hidden ground truth plus the agent's belief.
#[derive(Clone, Debug)]
pub struct EpisodeState {
    truth: Vec<TruthComponent>,
    true_alpha: Vec<f64>,
    pub belief: SystemBelief,
    pub t: usize,
    pub done: bool,
    pub system_failed: bool,
    /// Observation vector returned by the previous step (all `None` at t=0).
    pub last_observation: ObservationVector,
    rng: ChaCha8Rng,
}

impl EpisodeState {
    /// Ground-truth crack sizes, exposed for calibration tests and logging
    /// only — policies see [`AgentView`], which cannot reach this.
    pub fn true_cracks(&self) -> Vec<f64> {
        self.truth.iter().map(|c| c.crack).collect()
    }

    pub fn true_alphas(&self) -> &[f64] {
        &self.true_alpha
    }

    /// Ground-truth crack bins. Under [`TruthMode::Discrete`] this is the
    /// authoritative state; under the continuous default it is the bin of
    /// the current continuous crack size.
    pub fn true_bins(&self) -> Vec<usize> {
        self.truth.iter().map(|c| c.bin).collect()
    }
}

fn sample_from_row(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// The information a policy is allowed to act on: marginal crack beliefs,
/// observable deterioration rates, time, and the previous step's
/// observations. Ground truth is structurally unreachable from here.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentView {
    pub marginals: Vec<Vec<f64>>,
    pub rate: Vec<usize>,
    pub t: usize,
    pub horizon: usize,
    pub last_observation: ObservationVector,
}

/// A decision rule mapping agent-visible information to a joint action.
/// Implementations must be deterministic given the view and the RNG stream.
pub trait Policy: Sync {
    fn act(&self, view: &AgentView, rng: &mut ChaCha8Rng) -> ActionVector;
}

impl<F: Fn(&AgentView, &mut ChaCha8Rng) -> ActionVector + Sync> Policy for F {
    fn act(&self, view: &AgentView, rng: &mut ChaCha8Rng) -> ActionVector {
        self(view, rng)
    }
}

/// Per-category cost terms of one step or one episode.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct CostBreakdown {
    pub campaign: f64,
    pub inspection: f64,
    pub repair: f64,
    pub risk: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.campaign + self.inspection + self.repair + self.risk
    }

    fn add_scaled(&mut self, other: &CostBreakdown, w: f64) {
        self.campaign += w * other.campaign;
        self.inspection += w * other.inspection;
        self.repair += w * other.repair;
        self.risk += w * other.risk;
    }
}

/// Outcome of one environment step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub reward: f64,
    pub observation: ObservationVector,
    pub breakdown: CostBreakdown,
}

impl Environment {
    pub fn new(
        config: EnvConfig,
        model: DeteriorationModel,
        structure: CorrelationStructure,
        prior: ConditionalPrior,
        system: SystemModel,
    ) -> Result<Self> {
        config.validate()?;
        model.grids.validate(model.params.d_crit)?;
        if prior.b0_cond.len() != config.n_components {
            return Err(Error::ShapeMismatch(format!(
                "conditional prior covers {} components, config says {}",
                prior.b0_cond.len(),
                config.n_components
            )));
        }
        if prior.b0_cond[0][0].len() != model.grids.n_crack {
            return Err(Error::ShapeMismatch(format!(
                "prior has {} crack bins, grids have {}",
                prior.b0_cond[0][0].len(),
                model.grids.n_crack
            )));
        }
        if structure.cell_count() != prior.hyper_prior.len() {
            return Err(Error::ShapeMismatch(
                "correlation structure / prior cell count mismatch".into(),
            ));
        }
        system.validate(config.n_components)?;
        Ok(Environment { config, model, structure, prior, system, truth_mode: TruthMode::default() })
    }

    /// Switches the ground truth to the discretized transition tables.
    /// Requires an independent correlation structure (the discrete truth has
    /// no continuous hyperparameter state to condition on).
    pub fn with_discrete_truth(mut self) -> Result<Self> {
        if !self.structure.is_independent() {
            return Err(Error::Config(
                "discrete ground truth requires an independent correlation structure".into(),
            ));
        }
        self.truth_mode = TruthMode::Discrete;
        Ok(self)
    }

    /// Starts an episode: samples the true hyperparameters, correlated
    /// initial cracks and per-component growth variables, and initializes the
    /// belief at the conditional prior.
    pub fn reset(&self, seed: u64) -> Result<EpisodeState> {
        let mut rng = derived_rng(seed, &[0x455053]); // episode stream
        let (alphas, cracks) = crate::correlation::sample_initial_state(
            &self.structure,
            self.model.params.d0_mean,
            &mut rng,
        );
        let truth = cracks
            .into_iter()
            .map(|crack| {
                let (c, s) = self.sample_growth_variables(&mut rng);
                let bin = self.model.grids.bin_of(crack);
                TruthComponent { crack, bin, c, s }
            })
            .collect();
        Ok(EpisodeState {
            truth,
            true_alpha: alphas,
            belief: SystemBelief::from_prior(&self.prior),
            t: 0,
            done: false,
            system_failed: false,
            last_observation: vec![ComponentObservation::None; self.config.n_components],
            rng,
        })
    }

    fn sample_growth_variables(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let p = &self.model.params;
        let z1: f64 = rng.sample(rand_distr::StandardNormal);
        let z2: f64 = rng.sample(rand_distr::StandardNormal);
        let c = (p.ln_c_mean + p.ln_c_sd * z1).exp();
        let s = (p.s_mean + p.s_sd * z2).max(0.0);
        (c, s)
    }

    fn sample_fresh_crack(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        -self.model.params.d0_mean * (1.0 - u).ln()
    }

    /// Agent-visible view of the current state.
    pub fn agent_view(&self, state: &EpisodeState) -> AgentView {
        AgentView {
            marginals: state.belief.marginals(),
            rate: state.belief.rate.clone(),
            t: state.t,
            horizon: self.config.horizon_years,
            last_observation: state.last_observation.clone(),
        }
    }

    /// System failure probability implied by the current belief.
    pub fn system_failure_prob(&self, belief: &SystemBelief) -> Result<f64> {
        let p: Vec<f64> = (0..belief.n_components())
            .map(|c| *belief.marginal(c).last().unwrap())
            .collect();
        self.system.system_failure_prob(&p)
    }

    /// Advances the episode by one year under the joint action: repairs are
    /// applied to the ground truth, cracks grow by the continuous law,
    /// inspections sample detection outcomes from the true crack sizes, the
    /// belief is filtered, and the step reward is assembled from action costs
    /// plus the failure-risk term.
    pub fn step(&self, state: &mut EpisodeState, a: &ActionVector) -> Result<StepResult> {
        if state.done {
            return Err(Error::InvalidArgument("episode is already done".into()));
        }
        if a.len() != self.config.n_components {
            return Err(Error::ShapeMismatch(format!(
                "action vector length {} vs {} components",
                a.len(),
                self.config.n_components
            )));
        }
        let p_sys_before = self.system_failure_prob(&state.belief)?;

        // (1) repairs reset ground truth, decorrelated from the
        // hyperparameters; (2) one year of crack growth
        match self.truth_mode {
            TruthMode::Continuous => {
                for (comp, &ac) in state.truth.iter_mut().zip(a.iter()) {
                    if ac == ComponentAction::Repair {
                        comp.crack = self.sample_fresh_crack(&mut state.rng);
                        let (c, s) = self.sample_growth_variables(&mut state.rng);
                        comp.c = c;
                        comp.s = s;
                    }
                    if comp.crack < self.model.params.d_crit {
                        comp.crack = crate::discretization::deterministic_growth(
                            comp.crack,
                            &self.model.params,
                            comp.c,
                            comp.s,
                        );
                    }
                    comp.bin = self.model.grids.bin_of(comp.crack);
                }
            }
            TruthMode::Discrete => {
                // mirror the belief filter exactly: repair resamples the bin
                // from the initial prior and resets the rate; the bin then
                // transitions under the advanced rate's table row
                for (c, (comp, &ac)) in state.truth.iter_mut().zip(a.iter()).enumerate() {
                    let rate_next = if ac == ComponentAction::Repair {
                        comp.crack = self.sample_fresh_crack(&mut state.rng);
                        comp.bin = self.model.grids.bin_of(comp.crack);
                        self.model.tables.next_rate_repair()
                    } else {
                        self.model.tables.next_rate_do_nothing(state.belief.rate[c])
                    };
                    let row = self.model.tables.row(rate_next, comp.bin);
                    comp.bin = sample_from_row(row, &mut state.rng);
                }
            }
        }

        // (3) observation sampling from the ground truth
        let mut observation = Vec::with_capacity(a.len());
        for (comp, &ac) in state.truth.iter().zip(a.iter()) {
            let o = if ac == ComponentAction::Inspect {
                let p_det = match self.truth_mode {
                    TruthMode::Continuous => {
                        if comp.crack >= self.model.params.d_crit {
                            1.0
                        } else {
                            self.model.observation.pod(comp.crack)
                        }
                    }
                    TruthMode::Discrete => self.model.observation.detect_prob_per_bin[comp.bin],
                };
                if state.rng.random::<f64>() < p_det {
                    ComponentObservation::Detection
                } else {
                    ComponentObservation::NoDetection
                }
            } else {
                ComponentObservation::None
            };
            observation.push(o);
        }

        // (4) belief filtering
        let stepped = step_hierarchical(
            &state.belief,
            a,
            &observation,
            &self.model,
            &self.structure,
            &self.prior,
        )?;
        state.belief = stepped.belief;

        // (5) costs
        let mut breakdown = CostBreakdown::default();
        let n_ins = a.iter().filter(|&&x| x == ComponentAction::Inspect).count() as f64;
        let n_rep = a.iter().filter(|&&x| x == ComponentAction::Repair).count() as f64;
        match self.config.cost_model {
            CostModel::Individual { r_ins, r_rep } => {
                breakdown.inspection = n_ins * r_ins;
                breakdown.repair = n_rep * r_rep;
            }
            CostModel::Campaign { r_camp, r_ins_surplus, r_rep } => {
                if n_ins + n_rep > 0.0 {
                    breakdown.campaign = r_camp;
                }
                breakdown.inspection = n_ins * r_ins_surplus;
                breakdown.repair = n_rep * r_rep;
            }
        }
        match self.config.risk_mode {
            RiskMode::BeliefRisk => {
                let p_sys_after = self.system_failure_prob(&state.belief)?;
                breakdown.risk = annual_risk(p_sys_after, p_sys_before, self.config.r_fail);
            }
            RiskMode::RealizedFailure => {
                if !state.system_failed {
                    let failure_bin = self.model.grids.failure_bin();
                    let failed: Vec<f64> = state
                        .truth
                        .iter()
                        .map(|c| {
                            let has_failed = match self.truth_mode {
                                TruthMode::Continuous => c.crack >= self.model.params.d_crit,
                                TruthMode::Discrete => c.bin == failure_bin,
                            };
                            if has_failed {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let p_fail_now = self.system.system_failure_prob(&failed)?;
                    // for a frame this is the load-exceedance probability of
                    // the realized damage pattern; sample the annual load
                    if state.rng.random::<f64>() < p_fail_now {
                        state.system_failed = true;
                        breakdown.risk = self.config.r_fail;
                    }
                }
            }
        }

        // (6) advance time
        state.t += 1;
        if state.t > self.config.horizon_years {
            state.done = true;
        }
        state.last_observation = observation.clone();

        Ok(StepResult { reward: breakdown.total(), observation, breakdown })
    }

    /// Runs one full episode under `policy`, returning the discounted total
    /// cost and its per-category decomposition.
    pub fn run_episode(&self, policy: &dyn Policy, seed: u64) -> Result<(f64, CostBreakdown)> {
        let mut state = self.reset(seed)?;
        let mut policy_rng = derived_rng(seed, &[0x504f4c]); // policy stream
        let mut disc = 1.0;
        let mut total = 0.0;
        let mut acc = CostBreakdown::default();
        while !state.done {
            let view = self.agent_view(&state);
            let a = policy.act(&view, &mut policy_rng);
            let step = self.step(&mut state, &a)?;
            total += disc * step.reward;
            acc.add_scaled(&step.breakdown, disc);
            disc *= self.config.gamma;
        }
        Ok((total, acc))
    }

    /// Runs one episode while appending CSV rows
    /// (`t, component, action, observation, p_fail, p_sys, alpha_mean`) to
    /// the writer.
    pub fn run_episode_logged<W: std::io::Write>(
        &self,
        policy: &dyn Policy,
        seed: u64,
        w: &mut W,
    ) -> Result<(f64, CostBreakdown)> {
        writeln!(w, "t,component,action,observation,p_fail,p_sys,alpha_mean")?;
        let mut state = self.reset(seed)?;
        let mut policy_rng = derived_rng(seed, &[0x504f4c]);
        let mut disc = 1.0;
        let mut total = 0.0;
        let mut acc = CostBreakdown::default();
        while !state.done {
            let view = self.agent_view(&state);
            let a = policy.act(&view, &mut policy_rng);
            let t = state.t;
            let step = self.step(&mut state, &a)?;
            let p_sys = self.system_failure_prob(&state.belief)?;
            let alpha_mean = if self.structure.n_hyper > 0 {
                state.belief.hyper_mean(&self.structure, 0)
            } else {
                0.0
            };
            for c in 0..self.config.n_components {
                let action = match a[c] {
                    ComponentAction::DoNothing => "do_nothing",
                    ComponentAction::Inspect => "inspect",
                    ComponentAction::Repair => "repair",
                };
                let obs = match step.observation[c] {
                    ComponentObservation::None => "none",
                    ComponentObservation::Detection => "detection",
                    ComponentObservation::NoDetection => "no_detection",
                };
                let p_fail = *state.belief.marginal(c).last().unwrap();
                writeln!(w, "{t},{c},{action},{obs},{p_fail},{p_sys},{alpha_mean}")?;
            }
            total += disc * step.reward;
            acc.add_scaled(&step.breakdown, disc);
            disc *= self.config.gamma;
        }
        Ok((total, acc))
    }
}

/// Aggregate statistics of a batch policy evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CostReport {
    pub n_episodes: usize,
    pub mean_cost: f64,
    pub stderr: f64,
    pub mean_campaign: f64,
    pub mean_inspection: f64,
    pub mean_repair: f64,
    pub mean_risk: f64,
}

impl CostReport {
    pub fn category_total(&self) -> f64 {
        self.mean_campaign + self.mean_inspection + self.mean_repair + self.mean_risk
    }
}

/// Evaluates a policy over `n_episodes` independent realizations with
/// derived per-episode seeds. Deterministic given the seed; identical in
/// sequential and parallel execution.
pub fn evaluate_policy(
    policy: &dyn Policy,
    env: &Environment,
    n_episodes: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<CostReport> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("n_episodes must be at least 1".into()));
    }
    let results = map_indexed(mode, n_episodes, |i| {
        env.run_episode(policy, derive_seed(seed, &[i as u64]))
    });
    let mut totals = Vec::with_capacity(n_episodes);
    let mut acc = CostBreakdown::default();
    for r in results {
        let (total, b) = r?;
        totals.push(total);
        acc.add_scaled(&b, 1.0);
    }
    let n = n_episodes as f64;
    let mean = totals.iter().sum::<f64>() / n;
    let var = if n_episodes > 1 {
        totals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(CostReport {
        n_episodes,
        mean_cost: mean,
        stderr: (var / n).sqrt(),
        mean_campaign: acc.campaign / n,
        mean_inspection: acc.inspection / n,
        mean_repair: acc.repair / n,
        mean_risk: acc.risk / n,
    })
}

/// The policy that never inspects or repairs.
pub fn never_act(view: &AgentView, _rng: &mut ChaCha8Rng) -> ActionVector {
    vec![ComponentAction::DoNothing; view.marginals.len()]
}

/// Small deterioration environment shared by the unit tests of several
/// modules (coarse grids, k-of-n system, fixed build seed).
#[cfg(test)]
pub(crate) fn test_environment(
    n_components: usize,
    rho: f64,
    cost_model: CostModel,
    horizon_years: usize,
) -> Environment {
    use crate::correlation::{conditional_initial_belief, fit_loadings, CorrelationSpec};
    use crate::discretization::{DeteriorationModel, FatigueParams};

    let params = FatigueParams::default();
    let model = DeteriorationModel::build(params, 12, 8, 10_000, 8.0, 99, ExecMode::Sequential)
        .unwrap();
    let spec = if rho == 0.0 {
        CorrelationSpec::independent()
    } else {
        CorrelationSpec { n_alpha_states: 10, ..CorrelationSpec::equal(rho, 1) }
    };
    let structure = fit_loadings(&spec, n_components, 3).unwrap();
    let prior = conditional_initial_belief(&structure, &model.grids, model.params.d0_mean);
    let config = EnvConfig {
        n_components,
        horizon_years,
        gamma: 0.95,
        cost_model,
        r_fail: -10_000.0,
        risk_mode: RiskMode::BeliefRisk,
        seed: 1,
    };
    let system = SystemModel::KOutOfN { k: n_components, n: n_components };
    Environment::new(config, model, structure, prior, system).unwrap()
}

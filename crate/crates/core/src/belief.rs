//! Exact discrete Bayesian filtering over the factored deterioration model:
//! per-component forward passes for independent systems and the conditional
//! belief / hyperparameter update under hierarchical deterioration dependence,
//! including repair-induced decorrelation.

use serde::{Deserialize, Serialize};

use crate::correlation::{ConditionalPrior, CorrelationStructure};
use crate::discretization::DeteriorationModel;
use crate::error::{Error, Result};

/// Per-component action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentAction {
    /// Do nothing, no inspection.
    DoNothing,
    /// Do nothing, inspect.
    Inspect,
    /// Perfect repair, no inspection.
    Repair,
}

pub type ActionVector = Vec<ComponentAction>;

/// Per-component inspection outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentObservation {
    /// No inspection was performed.
    None,
    Detection,
    NoDetection,
}

pub type ObservationVector = Vec<ComponentObservation>;

/// Checks the action/observation pairing invariant: an observation is present
/// exactly when the component was inspected.
pub fn validate_action_observation(a: &ActionVector, o: &ObservationVector) -> Result<()> {
    if a.len() != o.len() {
        return Err(Error::ShapeMismatch("action and observation vectors differ in length".into()));
    }
    for (c, (&ac, &oc)) in a.iter().zip(o.iter()).enumerate() {
        let inspected = ac == ComponentAction::Inspect;
        let observed = oc != ComponentObservation::None;
        if inspected != observed {
            return Err(Error::InvalidArgument(format!(
                "component {c}: observation presence does not match inspection action"
            )));
        }
    }
    Ok(())
}

/// Belief state of the whole system.
///
/// Crack beliefs are held conditional on the joint hyperparameter grid cell
/// (`cond[component][cell][bin]`, collapsing to one cell for independent
/// systems); the deterioration rate is fully observable and tracked as an
/// integer per component. Repaired components carry a decorrelation flag and
/// identical slices across hyperparameter cells.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SystemBelief {
    pub cond: Vec<Vec<Vec<f64>>>,
    pub hyper: Vec<f64>,
    pub rate: Vec<usize>,
    pub decorrelated: Vec<bool>,
    pub time: usize,
}

impl SystemBelief {
    /// Initial belief from the conditional prior, at time zero with new
    /// components.
    pub fn from_prior(prior: &ConditionalPrior) -> Self {
        let n = prior.b0_cond.len();
        SystemBelief {
            cond: prior.b0_cond.clone(),
            hyper: prior.hyper_prior.clone(),
            rate: vec![0; n],
            decorrelated: vec![false; n],
            time: 0,
        }
    }

    /// Independent belief (single hyperparameter cell) from per-component
    /// marginal priors.
    pub fn independent(priors: Vec<Vec<f64>>) -> Self {
        let n = priors.len();
        SystemBelief {
            cond: priors.into_iter().map(|p| vec![p]).collect(),
            hyper: vec![1.0],
            rate: vec![0; n],
            decorrelated: vec![false; n],
            time: 0,
        }
    }

    pub fn n_components(&self) -> usize {
        self.cond.len()
    }

    pub fn n_cells(&self) -> usize {
        self.hyper.len()
    }

    /// Marginal crack belief of one component (hyperparameters summed out).
    pub fn marginal(&self, component: usize) -> Vec<f64> {
        let slices = &self.cond[component];
        if slices.len() == 1 {
            return slices[0].clone();
        }
        let n_bins = slices[0].len();
        let mut out = vec![0.0; n_bins];
        for (cell, slice) in slices.iter().enumerate() {
            let w = self.hyper[cell];
            for (o, &p) in out.iter_mut().zip(slice.iter()) {
                *o += w * p;
            }
        }
        out
    }

    pub fn marginals(&self) -> Vec<Vec<f64>> {
        (0..self.n_components()).map(|c| self.marginal(c)).collect()
    }

    /// Mean of hyperparameter `k` under the current hyperparameter belief.
    pub fn hyper_mean(&self, structure: &CorrelationStructure, k: usize) -> f64 {
        if structure.n_hyper == 0 {
            return 0.0;
        }
        self.hyper
            .iter()
            .enumerate()
            .map(|(cell, &w)| w * structure.cell_alpha(cell)[k])
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.hyper.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("hyper belief sums to {sum}")));
        }
        for (c, comp) in self.cond.iter().enumerate() {
            for slice in comp {
                let s: f64 = slice.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "conditional slice of component {c} sums to {s}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Marginal probability mass of the failure bin.
pub fn component_failure_prob(belief: &SystemBelief, component: usize) -> f64 {
    let m = belief.marginal(component);
    *m.last().unwrap()
}

/// Result of one filtering step.
#[derive(Clone, Debug)]
pub struct BeliefStep {
    pub belief: SystemBelief,
    /// Pre-normalization observation likelihood `p(o | b, a)` per component
    /// (1 for uninspected components).
    pub obs_likelihood: Vec<f64>,
}

fn propagate_slice(slice: &[f64], model: &DeteriorationModel, rate_next: usize) -> Vec<f64> {
    let n = slice.len();
    let mut out = vec![0.0; n];
    for (i, &bi) in slice.iter().enumerate() {
        if bi == 0.0 {
            continue;
        }
        let row = model.tables.row(rate_next, i);
        for (o, &t) in out.iter_mut().zip(row.iter()) {
            *o += bi * t;
        }
    }
    out
}

fn observation_weight(slice: &mut [f64], model: &DeteriorationModel, obs: ComponentObservation) -> f64 {
    match obs {
        ComponentObservation::None => 1.0,
        ComponentObservation::Detection => {
            let mut sum = 0.0;
            for (p, &d) in slice.iter_mut().zip(&model.observation.detect_prob_per_bin) {
                *p *= d;
                sum += *p;
            }
            sum
        }
        ComponentObservation::NoDetection => {
            let mut sum = 0.0;
            for (p, &d) in slice.iter_mut().zip(&model.observation.detect_prob_per_bin) {
                *p *= 1.0 - d;
                sum += *p;
            }
            sum
        }
    }
}

fn normalize(slice: &mut [f64], norm: f64) {
    for p in slice.iter_mut() {
        *p /= norm;
    }
}

/// One forward pass for a system of independent components: propagate with
/// the rate-selected transition row, weight by the observation likelihood,
/// renormalize. Repair resets the component to its initial prior and rate 0
/// before propagation.
pub fn step_independent(
    belief: &SystemBelief,
    a: &ActionVector,
    o: &ObservationVector,
    model: &DeteriorationModel,
) -> Result<BeliefStep> {
    validate_action_observation(a, o)?;
    if belief.n_cells() > 1 && !belief.decorrelated.iter().all(|&d| d) {
        return Err(Error::InvalidArgument(
            "step_independent requires an independent (single-cell) belief".into(),
        ));
    }
    let mut next = belief.clone();
    let mut obs_likelihood = vec![1.0; belief.n_components()];
    for c in 0..belief.n_components() {
        let (source, rate_next): (Vec<f64>, usize) = if a[c] == ComponentAction::Repair {
            (model.initial_prior(), model.tables.next_rate_repair())
        } else {
            (belief.cond[c][0].clone(), model.tables.next_rate_do_nothing(belief.rate[c]))
        };
        let mut slice = propagate_slice(&source, model, rate_next);
        let norm = observation_weight(&mut slice, model, o[c]);
        if norm <= 0.0 {
            return Err(Error::ImpossibleObservation { component: c });
        }
        if o[c] != ComponentObservation::None {
            normalize(&mut slice, norm);
            obs_likelihood[c] = norm;
        }
        next.cond[c][0] = slice;
        next.rate[c] = rate_next;
    }
    next.time += 1;
    Ok(BeliefStep { belief: next, obs_likelihood })
}

/// One forward pass under hierarchical deterioration dependence.
///
/// Per component and hyperparameter cell the conditional belief is propagated,
/// weighted by the observation likelihood and renormalized; the per-cell
/// pre-normalization sums form the likelihood used to update the
/// hyperparameter belief. Repair decorrelates the component: its conditional
/// slices are reset to the marginal initial prior replicated across cells and
/// its observations no longer inform the hyperparameters.
pub fn step_hierarchical(
    belief: &SystemBelief,
    a: &ActionVector,
    o: &ObservationVector,
    model: &DeteriorationModel,
    structure: &CorrelationStructure,
    prior: &ConditionalPrior,
) -> Result<BeliefStep> {
    validate_action_observation(a, o)?;
    let cells = belief.n_cells();
    if cells != structure.cell_count() || cells != prior.hyper_prior.len() {
        return Err(Error::ShapeMismatch("belief / structure cell count mismatch".into()));
    }
    let mut next = belief.clone();
    let mut obs_likelihood = vec![1.0; belief.n_components()];

    for c in 0..belief.n_components() {
        let repaired = a[c] == ComponentAction::Repair;
        if repaired {
            next.decorrelated[c] = true;
        }
        let decorrelated = next.decorrelated[c];

        if decorrelated {
            // identical slices across cells: compute once and replicate
            let (source, rate_next) = if repaired {
                (model.initial_prior(), model.tables.next_rate_repair())
            } else {
                (belief.cond[c][0].clone(), model.tables.next_rate_do_nothing(belief.rate[c]))
            };
            let mut slice = propagate_slice(&source, model, rate_next);
            let norm = observation_weight(&mut slice, model, o[c]);
            if norm <= 0.0 {
                return Err(Error::ImpossibleObservation { component: c });
            }
            if o[c] != ComponentObservation::None {
                normalize(&mut slice, norm);
                obs_likelihood[c] = norm;
            }
            for cell in 0..cells {
                next.cond[c][cell] = slice.clone();
            }
            next.rate[c] = rate_next;
            // p(o | alpha) is constant in alpha: the hyperparameter belief
            // is left untouched.
            continue;
        }

        let rate_next = model.tables.next_rate_do_nothing(belief.rate[c]);
        let mut cell_likelihood = vec![1.0; cells];
        for cell in 0..cells {
            let mut slice = propagate_slice(&belief.cond[c][cell], model, rate_next);
            let norm = observation_weight(&mut slice, model, o[c]);
            if o[c] != ComponentObservation::None {
                if norm > 0.0 {
                    normalize(&mut slice, norm);
                }
                cell_likelihood[cell] = norm;
            }
            next.cond[c][cell] = slice;
        }
        next.rate[c] = rate_next;

        if o[c] != ComponentObservation::None {
            // Bayes update of the hyperparameter belief with the marginal
            // observation likelihood p(o | alpha).
            let mut total = 0.0;
            for cell in 0..cells {
                next.hyper[cell] *= cell_likelihood[cell];
                total += next.hyper[cell];
            }
            if total <= 0.0 {
                return Err(Error::ImpossibleObservation { component: c });
            }
            for h in next.hyper.iter_mut() {
                *h /= total;
            }
            obs_likelihood[c] = total;
        }
    }
    next.time += 1;
    Ok(BeliefStep { belief: next, obs_likelihood })
}

/// Writes per-component belief summaries as CSV (`t, component, p_fail`).
pub fn write_belief_csv<W: std::io::Write>(
    w: &mut W,
    history: &[SystemBelief],
) -> std::io::Result<()> {
    writeln!(w, "t,component,p_fail")?;
    for b in history {
        for c in 0..b.n_components() {
            writeln!(w, "{},{},{}", b.time, c, component_failure_prob(b, c))?;
        }
    }
    Ok(())
}

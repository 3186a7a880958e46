//! Heuristic baseline policies — equidistant inspection campaigns with
//! failure-probability prioritization and detection-triggered repair — and
//! the two-stage grid search over decision rules.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{ActionVector, ComponentAction, ComponentObservation};
use crate::environment::{evaluate_policy, AgentView, Environment, Policy};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::rng::derive_seed;

/// An equidistant-inspection decision rule: every `delta_ins` years, inspect
/// the `n_ins` components with the highest failure probability.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicRule {
    pub delta_ins: usize,
    pub n_ins: usize,
}

impl HeuristicRule {
    pub fn validate(&self, horizon: usize, n_components: usize) -> Result<()> {
        if self.delta_ins == 0 || self.delta_ins > horizon {
            return Err(Error::InvalidArgument(format!(
                "delta_ins {} outside 1..={horizon}",
                self.delta_ins
            )));
        }
        if self.n_ins == 0 || self.n_ins > n_components {
            return Err(Error::InvalidArgument(format!(
                "n_ins {} outside 1..={n_components}",
                self.n_ins
            )));
        }
        Ok(())
    }
}

/// Policy induced by a [`HeuristicRule`]: a pure function of the agent view.
///
/// A detection at step t triggers a perfect repair at t+1 (repair and
/// inspection cannot share a step, so the repair takes the next decision).
/// At inspection epochs the components not already scheduled for repair are
/// ranked by marginal failure probability (ties broken by lower index) and
/// the top `n_ins` inspected.
#[derive(Clone, Copy, Debug)]
pub struct HeuristicPolicy {
    pub rule: HeuristicRule,
}

impl Policy for HeuristicPolicy {
    fn act(&self, view: &AgentView, _rng: &mut ChaCha8Rng) -> ActionVector {
        let n = view.marginals.len();
        let mut actions = vec![ComponentAction::DoNothing; n];
        for (c, &o) in view.last_observation.iter().enumerate() {
            if o == ComponentObservation::Detection {
                actions[c] = ComponentAction::Repair;
            }
        }
        if view.t > 0 && view.t % self.rule.delta_ins == 0 {
            let mut candidates: Vec<usize> = (0..n)
                .filter(|&c| actions[c] == ComponentAction::DoNothing)
                .collect();
            // highest failure probability first, ties by lowest index
            candidates.sort_by(|&a, &b| {
                let pa = *view.marginals[a].last().unwrap();
                let pb = *view.marginals[b].last().unwrap();
                pb.partial_cmp(&pa).unwrap().then(a.cmp(&b))
            });
            for &c in candidates.iter().take(self.rule.n_ins) {
                actions[c] = ComponentAction::Inspect;
            }
        }
        actions
    }
}

/// Evaluation sizes for the two-stage search.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchProtocol {
    pub stage1_realizations: usize,
    pub shortlist: usize,
    pub stage2_realizations: usize,
    /// Upper bound on the inspection intervals searched (capped at the
    /// horizon).
    pub max_delta: usize,
}

impl Default for SearchProtocol {
    fn default() -> Self {
        SearchProtocol {
            stage1_realizations: 3_000,
            shortlist: 5,
            stage2_realizations: 10_000,
            max_delta: 15,
        }
    }
}

impl SearchProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.stage1_realizations == 0 || self.stage2_realizations < self.stage1_realizations {
            return Err(Error::InvalidArgument(
                "stage2 realizations must be >= stage1 realizations >= 1".into(),
            ));
        }
        if self.shortlist == 0 {
            return Err(Error::InvalidArgument("shortlist must be >= 1".into()));
        }
        Ok(())
    }
}

/// One evaluated rule of the search.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SearchEntry {
    pub rule: HeuristicRule,
    pub stage: u8,
    pub mean_cost: f64,
    pub stderr: f64,
    pub n_episodes: usize,
}

/// Full result of the two-stage search: every stage-1 estimate, the
/// shortlist's stage-2 estimates, and the winner by stage-2 mean.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchResult {
    pub stage1: Vec<SearchEntry>,
    pub stage2: Vec<SearchEntry>,
}

impl SearchResult {
    /// Stage-2 entries sorted best (highest mean reward) first.
    pub fn ranking(&self) -> Vec<SearchEntry> {
        let mut r = self.stage2.clone();
        r.sort_by(|a, b| b.mean_cost.partial_cmp(&a.mean_cost).unwrap());
        r
    }

    pub fn best(&self) -> SearchEntry {
        self.ranking()[0]
    }

    /// Writes all entries as CSV
    /// (`delta_ins, n_ins, stage, mean_cost, stderr, n_episodes`).
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "delta_ins,n_ins,stage,mean_cost,stderr,n_episodes")?;
        for e in self.stage1.iter().chain(self.stage2.iter()) {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.rule.delta_ins, e.rule.n_ins, e.stage, e.mean_cost, e.stderr, e.n_episodes
            )?;
        }
        Ok(())
    }
}

/// Two-stage grid search over heuristic rules.
///
/// Stage 1 evaluates every rule in the grid over the same episode seeds
/// (common random numbers, so rule comparisons are paired); the best
/// `shortlist` rules are re-evaluated in stage 2 on fresh seeds, and the
/// final ranking uses the stage-2 means.
pub fn grid_search(
    env: &Environment,
    protocol: &SearchProtocol,
    seed: u64,
    mode: ExecMode,
) -> Result<SearchResult> {
    protocol.validate()?;
    let horizon = env.config.horizon_years;
    let n_components = env.config.n_components;
    let max_delta = protocol.max_delta.min(horizon).max(1);

    let mut stage1 = Vec::new();
    let stage1_seed = derive_seed(seed, &[1]);
    for delta_ins in 1..=max_delta {
        for n_ins in 1..=n_components {
            let rule = HeuristicRule { delta_ins, n_ins };
            let policy = HeuristicPolicy { rule };
            // same seed for every rule: common random numbers
            let report =
                evaluate_policy(&policy, env, protocol.stage1_realizations, stage1_seed, mode)?;
            stage1.push(SearchEntry {
                rule,
                stage: 1,
                mean_cost: report.mean_cost,
                stderr: report.stderr,
                n_episodes: report.n_episodes,
            });
        }
    }

    let mut order: Vec<usize> = (0..stage1.len()).collect();
    order.sort_by(|&a, &b| stage1[b].mean_cost.partial_cmp(&stage1[a].mean_cost).unwrap());
    let shortlist: Vec<HeuristicRule> = order
        .iter()
        .take(protocol.shortlist)
        .map(|&i| stage1[i].rule)
        .collect();

    let stage2_seed = derive_seed(seed, &[2]);
    let mut stage2 = Vec::new();
    for rule in shortlist {
        let policy = HeuristicPolicy { rule };
        let report =
            evaluate_policy(&policy, env, protocol.stage2_realizations, stage2_seed, mode)?;
        stage2.push(SearchEntry {
            rule,
            stage: 2,
            mean_cost: report.mean_cost,
            stderr: report.stderr,
            n_episodes: report.n_episodes,
        });
    }

    Ok(SearchResult { stage1, stage2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{conditional_initial_belief, fit_loadings, CorrelationSpec};
    use crate::discretization::{DeteriorationModel, FatigueParams};
    use crate::environment::{CostModel, EnvConfig, RiskMode};
    use crate::reliability::SystemModel;
    use crate::rng::derived_rng;

    fn small_env(n_components: usize) -> Environment {
        let params = FatigueParams::default();
        let model =
            DeteriorationModel::build(params, 12, 8, 10_000, 8.0, 99, ExecMode::Sequential)
                .unwrap();
        let structure = fit_loadings(&CorrelationSpec::independent(), n_components, 3).unwrap();
        let prior = conditional_initial_belief(&structure, &model.grids, model.params.d0_mean);
        let config = EnvConfig {
            n_components,
            horizon_years: 30,
            gamma: 0.95,
            cost_model: CostModel::Individual { r_ins: -1.0, r_rep: -20.0 },
            r_fail: -10_000.0,
            risk_mode: RiskMode::BeliefRisk,
            seed: 1,
        };
        let system = SystemModel::KOutOfN { k: n_components, n: n_components };
        Environment::new(config, model, structure, prior, system).unwrap()
    }

    fn view_with(marginals: Vec<Vec<f64>>, t: usize, last: Vec<ComponentObservation>) -> AgentView {
        AgentView {
            rate: vec![0; marginals.len()],
            horizon: 30,
            marginals,
            t,
            last_observation: last,
        }
    }

    #[test]
    fn inspects_everyone_at_multiples_of_delta() {
        let policy = HeuristicPolicy { rule: HeuristicRule { delta_ins: 6, n_ins: 10 } };
        let mut rng = derived_rng(0, &[0]);
        let marginals = vec![vec![0.9, 0.05, 0.05]; 10];
        for t in 0..=30usize {
            let view = view_with(marginals.clone(), t, vec![ComponentObservation::None; 10]);
            let a = policy.act(&view, &mut rng);
            let expected_inspect = t > 0 && t % 6 == 0;
            assert!(
                a.iter().all(|&x| (x == ComponentAction::Inspect) == expected_inspect),
                "t={t}: {a:?}"
            );
        }
    }

    #[test]
    fn never_inspects_when_delta_exceeds_horizon() {
        let policy = HeuristicPolicy { rule: HeuristicRule { delta_ins: 31, n_ins: 2 } };
        let mut rng = derived_rng(0, &[0]);
        for t in 0..=30usize {
            let view =
                view_with(vec![vec![1.0, 0.0]; 2], t, vec![ComponentObservation::None; 2]);
            let a = policy.act(&view, &mut rng);
            assert!(a.iter().all(|&x| x == ComponentAction::DoNothing));
        }
    }

    #[test]
    fn prioritizes_higher_failure_probability_with_index_tiebreak() {
        let policy = HeuristicPolicy { rule: HeuristicRule { delta_ins: 2, n_ins: 1 } };
        let mut rng = derived_rng(0, &[0]);
        // component 1 has the larger failure mass
        let view = view_with(
            vec![vec![0.9, 0.1], vec![0.7, 0.3], vec![0.85, 0.15]],
            2,
            vec![ComponentObservation::None; 3],
        );
        let a = policy.act(&view, &mut rng);
        assert_eq!(a[1], ComponentAction::Inspect);
        assert_eq!(a[0], ComponentAction::DoNothing);
        // equal probabilities → lowest index wins
        let view = view_with(
            vec![vec![0.8, 0.2], vec![0.8, 0.2]],
            2,
            vec![ComponentObservation::None; 2],
        );
        let a = policy.act(&view, &mut rng);
        assert_eq!(a[0], ComponentAction::Inspect);
        assert_eq!(a[1], ComponentAction::DoNothing);
    }

    #[test]
    fn detection_triggers_repair_next_step() {
        let policy = HeuristicPolicy { rule: HeuristicRule { delta_ins: 6, n_ins: 2 } };
        let mut rng = derived_rng(0, &[0]);
        let view = view_with(
            vec![vec![0.5, 0.5]; 2],
            7,
            vec![ComponentObservation::Detection, ComponentObservation::NoDetection],
        );
        let a = policy.act(&view, &mut rng);
        assert_eq!(a[0], ComponentAction::Repair);
        assert_eq!(a[1], ComponentAction::DoNothing);
        // repair takes precedence over an inspection epoch
        let view = view_with(
            vec![vec![0.5, 0.5]; 2],
            6,
            vec![ComponentObservation::Detection, ComponentObservation::None],
        );
        let a = policy.act(&view, &mut rng);
        assert_eq!(a[0], ComponentAction::Repair);
        assert_eq!(a[1], ComponentAction::Inspect);
    }

    #[test]
    fn policy_is_a_pure_function_of_the_view() {
        let policy = HeuristicPolicy { rule: HeuristicRule { delta_ins: 3, n_ins: 1 } };
        let mut r1 = derived_rng(1, &[1]);
        let mut r2 = derived_rng(2, &[2]);
        let view = view_with(
            vec![vec![0.6, 0.4], vec![0.9, 0.1]],
            3,
            vec![ComponentObservation::None; 2],
        );
        assert_eq!(policy.act(&view, &mut r1), policy.act(&view, &mut r2));
    }

    #[test]
    fn zero_cost_search_ties_at_zero() {
        let mut env = small_env(2);
        env.config.cost_model = CostModel::Individual { r_ins: 0.0, r_rep: 0.0 };
        env.config.r_fail = 0.0;
        let protocol = SearchProtocol {
            stage1_realizations: 5,
            shortlist: 3,
            stage2_realizations: 5,
            max_delta: 4,
        };
        let result = grid_search(&env, &protocol, 7, ExecMode::Sequential).unwrap();
        assert_eq!(result.stage1.len(), 4 * 2);
        assert_eq!(result.stage2.len(), 3);
        for e in result.stage1.iter().chain(result.stage2.iter()) {
            assert_eq!(e.mean_cost, 0.0);
        }
    }

    #[test]
    fn search_output_shape_and_csv() {
        let env = small_env(2);
        let protocol = SearchProtocol {
            stage1_realizations: 20,
            shortlist: 2,
            stage2_realizations: 40,
            max_delta: 3,
        };
        let result = grid_search(&env, &protocol, 11, ExecMode::Sequential).unwrap();
        assert_eq!(result.stage1.len(), 6);
        assert_eq!(result.stage2.len(), 2);
        // winner's stage-1 estimate is at least as good as any rule's within
        // pairing noise: check it is among the stage-1 top entries
        let best = result.best();
        assert!(result
            .stage1
            .iter()
            .any(|e| e.rule == best.rule));
        let mut buf = Vec::new();
        result.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "delta_ins,n_ins,stage,mean_cost,stderr,n_episodes"
        );
        assert_eq!(lines.count(), 8);
        // determinism
        let again = grid_search(&env, &protocol, 11, ExecMode::Sequential).unwrap();
        assert_eq!(again.best().mean_cost, best.mean_cost);
    }

    #[test]
    fn stage1_uses_common_random_numbers() {
        // two rules with identical behavior must tie exactly under CRN:
        // n_ins = n_components twice via distinct delta encodings is not
        // possible, so compare a rule against itself across the stage-1 seeds
        let env = small_env(2);
        let rule = HeuristicRule { delta_ins: 2, n_ins: 2 };
        let policy = HeuristicPolicy { rule };
        let s = derive_seed(33, &[1]);
        let a = evaluate_policy(&policy, &env, 30, s, ExecMode::Sequential).unwrap();
        let b = evaluate_policy(&policy, &env, 30, s, ExecMode::Sequential).unwrap();
        assert_eq!(a.mean_cost, b.mean_cost);
    }

    #[test]
    fn heuristic_episode_inspection_years_match_rule() {
        // integration: run a real episode and log which years inspections
        // happen; with delta=6 they must be exactly {6,12,18,24,30} unless a
        // detection reroutes a component to repair
        let env = small_env(2);
        let policy = HeuristicPolicy { rule: HeuristicRule { delta_ins: 6, n_ins: 2 } };
        let mut buf = Vec::new();
        env.run_episode_logged(&policy, 5, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let t: usize = cols[0].parse().unwrap();
            let action = cols[2];
            if action == "inspect" {
                assert!(t > 0 && t % 6 == 0, "inspection at year {t}");
            }
            if action == "repair" {
                assert!(t % 6 == 1, "repair at year {t} (should follow a campaign)");
            }
        }
    }
}

//! The stochastic shortest path model over step-stage cells (optionally
//! augmented with inelastic levels) and its solvers.
//!
//! Transition matrices are never materialised as `n x n` arrays. Interior
//! transitions only reach the next stage, so each action keeps one
//! `(M+1) x (M+1)` progress matrix (or one per stage) and the costs are
//! generated from a handful of per-stage and per-action rates. Full rows are
//! available through [`SspModel::transition_row`] for validation and
//! simulation.

mod solve;

pub use solve::{
    decompose_cost, evaluate_policy, lambda_sweep, solve, solve_value_iteration, CostVector,
    Decomposition, LambdaPoint, QMatrix, Solution,
};

use crate::chain::{poisson_step_probs, ProgressMatrix, StepDistribution};
use crate::error::{ensure, Error, Result};
use crate::scenario::{ActionSpec, ControlSpace, Discretization, LinkScenario, Scenario};
use crate::stateful::{augment_model, build_level_chain, LevelChain};

/// Default cap on the estimated model footprint.
pub const DEFAULT_MAX_MODEL_BYTES: u64 = 4 << 30;

/// Progress dynamics of one action.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    Stationary(ProgressMatrix),
    /// One matrix per stage `k = 0..N-1`.
    PerStage(Vec<ProgressMatrix>),
}

impl Dynamics {
    fn at(&self, k: usize) -> &ProgressMatrix {
        match self {
            Dynamics::Stationary(p) => p,
            Dynamics::PerStage(ps) => &ps[k],
        }
    }

    fn bytes(&self) -> u64 {
        let one = |p: &ProgressMatrix| ((p.steps() + 1) * (p.steps() + 1) * 8) as u64;
        match self {
            Dynamics::Stationary(p) => one(p),
            Dynamics::PerStage(ps) => ps.iter().map(one).sum(),
        }
    }
}

/// Cost of falling behind the desired minimum elastic rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBoundCost {
    /// `R^0` in Mbps.
    pub rate: f64,
    /// Cost per stage spent behind the rate line, `V^E(T) / T * dT`.
    pub stage_cost: f64,
}

/// Single-stage costs of one transition, split by objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostParts {
    /// `G^E`: negated elastic completion reward.
    pub elastic: f64,
    /// `G^I`: negated inelastic reward.
    pub inelastic: f64,
    /// `G^0`: rate-bound penalty.
    pub rate_bound: f64,
}

impl CostParts {
    pub fn total(&self, lambda_i: f64) -> f64 {
        self.elastic + lambda_i * self.inelastic + self.rate_bound
    }
}

/// One probable transition out of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    /// One-based destination state.
    pub to: usize,
    pub prob: f64,
    pub cost: CostParts,
}

/// Position of a state in the (level, step, stage) grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateCell {
    /// Storage level index `0..D`; always 0 without augmentation.
    pub level: usize,
    pub x: usize,
    pub k: usize,
}

/// Per-action transition and cost structure of the admission-control SSP.
#[derive(Debug, Clone, PartialEq)]
pub struct SspModel {
    grid: Discretization,
    actions: Vec<ActionSpec>,
    dynamics: Vec<Dynamics>,
    /// `V^E((k+1) dT)` for `k = 0..N-1`.
    completion_reward: Vec<f64>,
    rate_bound: Option<RateBoundCost>,
    lambda_i: f64,
    levels: Option<LevelChain>,
}

/// Builds the per-action model from explicit dynamics.
///
/// `rate_bound` of `None` leaves `G^0` out entirely; `Some(0.0)` keeps an
/// all-zero `G^0`.
pub fn assemble_model_with_dynamics(
    link: &LinkScenario,
    grid: &Discretization,
    actions: Vec<ActionSpec>,
    dynamics: Vec<Dynamics>,
    rate_bound: Option<f64>,
) -> Result<SspModel> {
    ensure(!actions.is_empty(), || "control space is empty".to_string())?;
    ensure(actions.len() == dynamics.len(), || {
        format!(
            "{} actions but {} progress models",
            actions.len(),
            dynamics.len()
        )
    })?;
    for (a, dyn_a) in dynamics.iter().enumerate() {
        let ok = match dyn_a {
            Dynamics::Stationary(p) => p.steps() == grid.steps(),
            Dynamics::PerStage(ps) => {
                ps.len() == grid.stages() && ps.iter().all(|p| p.steps() == grid.steps())
            }
        };
        ensure(ok, || {
            format!("progress model of action {} does not match the grid", a + 1)
        })?;
    }
    for (a, spec) in actions.iter().enumerate() {
        if !(spec.reward_rate.is_finite() && spec.rate.is_finite() && spec.load.is_finite()) {
            return Err(Error::Numeric(format!("action {} parameters", a + 1)));
        }
    }
    if !link.lambda_i.is_finite() {
        return Err(Error::Numeric("lambda_I".to_string()));
    }
    let completion_reward: Vec<f64> = (0..grid.stages())
        .map(|k| link.elastic_reward_at(grid.time_at_stage(k + 1)))
        .collect();
    if completion_reward.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("elastic reward".to_string()));
    }
    let rate_bound = match rate_bound {
        None => None,
        Some(r0) => {
            ensure(r0.is_finite() && r0 >= 0.0, || {
                format!("rate bound must be >= 0, got {r0}")
            })?;
            Some(RateBoundCost {
                rate: r0,
                stage_cost: link.reward_at_deadline() / grid.deadline() * grid.delta_t(),
            })
        }
    };
    Ok(SspModel {
        grid: *grid,
        actions,
        dynamics,
        completion_reward,
        rate_bound,
        lambda_i: link.lambda_i,
        levels: None,
    })
}

/// Builds the model over step-stage cells from a calibrated control space
/// and one step distribution per action.
pub fn assemble_model(
    link: &LinkScenario,
    grid: &Discretization,
    space: &ControlSpace,
    steps: &[StepDistribution],
) -> Result<SspModel> {
    if !space.is_calibrated() && !space.is_rewardless() {
        return Err(Error::Calibration(
            "control space must be calibrated before model assembly".to_string(),
        ));
    }
    let dynamics = steps
        .iter()
        .map(|p| Dynamics::Stationary(ProgressMatrix::from_steps(p)))
        .collect();
    assemble_model_with_dynamics(
        link,
        grid,
        space.actions().to_vec(),
        dynamics,
        Some(link.rate_bound),
    )
}

/// Poisson progress dynamics for each action's mean elastic rate.
pub fn poisson_dynamics(grid: &Discretization, actions: &[ActionSpec]) -> Result<Vec<Dynamics>> {
    actions
        .iter()
        .map(|a| {
            poisson_step_probs(a.rate, grid.delta_s(), grid.delta_t(), grid.steps())
                .map(|p| Dynamics::Stationary(ProgressMatrix::from_steps(&p)))
        })
        .collect()
}

/// Full model for `scenario` with the given per-action parameters: Poisson
/// progress, the scenario's rewards, and level augmentation when stateful
/// requirements are configured.
pub fn build_model_for_actions(
    scenario: &Scenario,
    actions: Vec<ActionSpec>,
    rate_bound: f64,
    max_bytes: u64,
) -> Result<SspModel> {
    precheck_capacity(scenario, actions.len(), max_bytes)?;
    let dynamics = poisson_dynamics(&scenario.grid, &actions)?;
    let base = assemble_model_with_dynamics(
        &scenario.link,
        &scenario.grid,
        actions,
        dynamics,
        Some(rate_bound),
    )?;
    match &scenario.stateful {
        None => {
            base.check_capacity(max_bytes)?;
            Ok(base)
        }
        Some(spec) => {
            let chain = build_level_chain(spec, scenario.grid.delta_t())?;
            augment_model(base, chain, max_bytes)
        }
    }
}

/// Rejects oversized models before any matrix is allocated; uses the same
/// estimate as `SspModel::estimated_bytes`.
fn precheck_capacity(scenario: &Scenario, actions: usize, max_bytes: u64) -> Result<()> {
    let levels = scenario.stateful.as_ref().map_or(1, |s| s.level_count()) as u64;
    let width = scenario.grid.width() as u64;
    let n = levels * width * (scenario.grid.stages() as u64 + 1);
    let m = actions as u64;
    let required = n
        .saturating_mul(m)
        .saturating_mul(8)
        .saturating_add(n.saturating_mul(48))
        .saturating_add(m.saturating_mul(width * width * 8));
    if required > max_bytes {
        return Err(Error::Capacity {
            states: n as usize,
            actions,
            required_bytes: required,
            cap_bytes: max_bytes,
        });
    }
    Ok(())
}

/// The nominal model of a scenario.
pub fn build_model(scenario: &Scenario) -> Result<SspModel> {
    let space = scenario.control_space()?;
    build_model_for_actions(
        scenario,
        space.actions().to_vec(),
        scenario.link.rate_bound,
        DEFAULT_MAX_MODEL_BYTES,
    )
}

impl SspModel {
    pub fn grid(&self) -> &Discretization {
        &self.grid
    }

    pub fn actions(&self) -> &[ActionSpec] {
        &self.actions
    }

    /// Action parameters by one-based index.
    pub fn action(&self, a: usize) -> &ActionSpec {
        &self.actions[a - 1]
    }

    /// `m`.
    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn levels(&self) -> Option<&LevelChain> {
        self.levels.as_ref()
    }

    /// `D`, or 1 without augmentation.
    pub fn level_count(&self) -> usize {
        self.levels.as_ref().map_or(1, |c| c.level_count())
    }

    pub fn lambda_i(&self) -> f64 {
        self.lambda_i
    }

    pub fn set_lambda_i(&mut self, lambda_i: f64) {
        self.lambda_i = lambda_i;
    }

    pub fn rate_bound(&self) -> Option<RateBoundCost> {
        self.rate_bound
    }

    /// `n`.
    pub fn state_count(&self) -> usize {
        self.level_count() * self.grid.state_count()
    }

    /// One-based index of the cost-free terminal state.
    pub fn terminal(&self) -> usize {
        self.state_count()
    }

    /// Progress matrix of action `a` (one-based) during stage `k`.
    pub fn progress(&self, a: usize, k: usize) -> &ProgressMatrix {
        self.dynamics[a - 1].at(k)
    }

    pub(crate) fn with_levels(mut self, chain: LevelChain) -> Self {
        self.levels = Some(chain);
        self
    }

    /// One-based state index of `(level, x, k)`.
    pub fn state_index(&self, level: usize, x: usize, k: usize) -> usize {
        level * self.grid.state_count() + self.grid.state_index(x, k)
    }

    pub fn cell(&self, i: usize) -> StateCell {
        let per = self.grid.state_count();
        let level = (i - 1) / per;
        let (x, k) = self.grid.cell(i - level * per);
        StateCell { level, x, k }
    }

    /// One-based index of the initial state `(x, k) = (0, 0)` at level 0.
    pub fn initial_state(&self) -> usize {
        let level = self.levels.as_ref().map_or(0, |c| c.initial_level());
        self.state_index(level, 0, 0)
    }

    pub(crate) fn completion_reward(&self, k: usize) -> f64 {
        self.completion_reward[k]
    }

    /// Whether a transition into step `xp` at stage `k + 1` is behind the
    /// rate line `s = max(0, S - R^0 t)`.
    pub(crate) fn behind_rate_line(&self, k: usize, xp: usize) -> bool {
        match self.rate_bound {
            Some(rb) if rb.rate > 0.0 => {
                let s = self.grid.remaining_at_step(xp);
                let t = self.grid.time_at_stage(k + 1);
                s > (self.grid.size() - rb.rate * t).max(0.0)
            }
            _ => false,
        }
    }

    /// Effective inelastic reward rate of action `a` (zero-based) at storage
    /// level `level`: the stateful share is withheld in permanent suspension.
    pub(crate) fn inelastic_rate(&self, a: usize, level: usize) -> f64 {
        let spec = &self.actions[a];
        match (&self.levels, spec.stateful) {
            (Some(chain), Some(part)) if part.admit && level == chain.suspended_level() => {
                spec.reward_rate - part.reward_rate
            }
            _ => spec.reward_rate,
        }
    }

    /// Whether action `a` (zero-based) admits the stateful set.
    pub(crate) fn admits_stateful(&self, a: usize) -> bool {
        self.actions[a].stateful.is_some_and(|p| p.admit)
    }

    /// Cost parts of an interior or rail transition `(level, x, k) -> (., xp, k+1)`
    /// under zero-based action `a`.
    pub(crate) fn stage_costs(&self, a: usize, level: usize, x: usize, k: usize, xp: usize) -> CostParts {
        let m = self.grid.steps();
        let mut cost = CostParts {
            inelastic: 0.0 - self.inelastic_rate(a, level) * self.grid.delta_t(),
            ..CostParts::default()
        };
        if x < m {
            if xp == m {
                cost.elastic = 0.0 - self.completion_reward[k];
            }
            if self.behind_rate_line(k, xp) {
                cost.rate_bound = self.rate_bound.map_or(0.0, |rb| rb.stage_cost);
            }
        }
        cost
    }

    /// All probable transitions out of state `i` under action `a` (both
    /// one-based). Level copies of cell `(M, N)` collapse onto the terminal
    /// state.
    pub fn transition_row(&self, a: usize, i: usize) -> Vec<Transition> {
        let terminal = self.terminal();
        let StateCell { level, x, k } = self.cell(i);
        let n_stages = self.grid.stages();
        let m = self.grid.steps();
        if i == terminal || k == n_stages {
            return vec![Transition {
                to: terminal,
                prob: 1.0,
                cost: CostParts::default(),
            }];
        }
        let a0 = a - 1;
        let p = self.progress(a, k);
        let level_row: Vec<(usize, f64)> = match &self.levels {
            None => vec![(0, 1.0)],
            Some(chain) => chain
                .row(self.admits_stateful(a0), level)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(w, &v)| (w, v))
                .collect(),
        };
        let mut row = Vec::new();
        let mut to_terminal: Option<Transition> = None;
        for xp in x..=m {
            let px = p.get(x, xp);
            if px == 0.0 {
                continue;
            }
            let cost = self.stage_costs(a0, level, x, k, xp);
            if xp == m && k + 1 == n_stages {
                let mass: f64 = level_row.iter().map(|&(_, v)| px * v).sum();
                to_terminal = Some(Transition {
                    to: terminal,
                    prob: mass,
                    cost,
                });
                continue;
            }
            for &(wp, pw) in &level_row {
                row.push(Transition {
                    to: self.state_index(wp, xp, k + 1),
                    prob: px * pw,
                    cost,
                });
            }
        }
        row.extend(to_terminal);
        row
    }

    /// Estimated footprint of the model plus one solve.
    pub fn estimated_bytes(&self) -> u64 {
        let n = self.state_count() as u64;
        let m = self.action_count() as u64;
        let dynamics: u64 = self.dynamics.iter().map(Dynamics::bytes).sum();
        n * m * 8 + 6 * n * 8 + dynamics
    }

    pub fn check_capacity(&self, max_bytes: u64) -> Result<()> {
        let required = self.estimated_bytes();
        if required > max_bytes {
            return Err(Error::Capacity {
                states: self.state_count(),
                actions: self.action_count(),
                required_bytes: required,
                cap_bytes: max_bytes,
            });
        }
        Ok(())
    }
}

/// A stationary policy: one-based action for every one-based state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    actions: Vec<usize>,
}

impl Policy {
    /// Builds a policy from one-based actions listed in state order.
    pub fn new(actions: Vec<usize>) -> Self {
        Self { actions }
    }

    /// `mu(i) = a` everywhere.
    pub fn constant(states: usize, a: usize) -> Self {
        Self {
            actions: vec![a; states],
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Action at one-based state `i`.
    pub fn action(&self, i: usize) -> usize {
        self.actions[i - 1]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.actions
    }

    pub fn validate_for(&self, model: &SspModel) -> Result<()> {
        ensure(self.actions.len() == model.state_count(), || {
            format!(
                "policy covers {} states, model has {}",
                self.actions.len(),
                model.state_count()
            )
        })?;
        let m = model.action_count();
        ensure(self.actions.iter().all(|&a| a >= 1 && a <= m), || {
            format!("policy uses actions outside 1..={m}")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::custom_step_probs;
    use crate::scenario::{build_control_space, InelasticFlowSpec};

    fn tiny_link() -> LinkScenario {
        LinkScenario::new(10.0, 10.0, 10.0)
    }

    fn single_action_model(p: [f64; 2]) -> SspModel {
        let link = tiny_link();
        let grid = Discretization::new(1, 1, 10.0, 10.0).unwrap();
        let space = build_control_space(&[], 10.0).unwrap();
        let steps = custom_step_probs([p[0]], 1).unwrap();
        assemble_model(&link, &grid, &space, &[steps]).unwrap()
    }

    #[test]
    fn two_by_two_grid_rows() {
        let model = single_action_model([0.3, 0.7]);
        assert_eq!(model.state_count(), 4);
        let row = |i| {
            model
                .transition_row(1, i)
                .iter()
                .map(|t| (t.to, t.prob))
                .collect::<Vec<_>>()
        };
        // (0,0) -> (0,1) w.p. p_0, -> (1,1) = terminal w.p. q_0.
        assert_eq!(row(1), vec![(3, 0.3), (4, 0.7)]);
        assert_eq!(row(2), vec![(4, 1.0)]);
        assert_eq!(row(3), vec![(4, 1.0)]);
        assert_eq!(row(4), vec![(4, 1.0)]);
        // Completing during the last stage earns V^E(T) = 1.
        let done = model.transition_row(1, 1)[1];
        assert_eq!(done.cost.elastic, -1.0);
        assert_eq!(done.cost.inelastic, 0.0);
    }

    #[test]
    fn empty_action_earns_no_inelastic_reward() {
        let flows = vec![InelasticFlowSpec::new(2.0, 1.0), InelasticFlowSpec::new(3.0, 1.0)];
        let link = tiny_link().with_flows(flows.clone());
        let grid = Discretization::new(2, 3, 10.0, 10.0).unwrap();
        let space = build_control_space(&flows, 10.0)
            .unwrap()
            .calibrate(1.0, 10.0)
            .unwrap();
        let steps: Vec<_> = poisson_dynamics(&grid, space.actions())
            .unwrap()
            .into_iter()
            .map(|_| custom_step_probs([0.5, 0.3], 2).unwrap())
            .collect();
        let model = assemble_model(&link, &grid, &space, &steps).unwrap();
        for i in 1..=model.state_count() {
            for t in model.transition_row(1, i) {
                assert_eq!(t.cost.inelastic, 0.0);
            }
            for a in 1..=3 {
                let row = model.transition_row(a, i);
                let sum: f64 = row.iter().map(|t| t.prob).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        // Stage N rows lead straight to the terminal at zero cost.
        let i = model.grid().state_index(0, 3);
        assert_eq!(
            model.transition_row(3, i),
            vec![Transition {
                to: model.terminal(),
                prob: 1.0,
                cost: CostParts::default()
            }]
        );
    }

    #[test]
    fn uncalibrated_space_rejected() {
        let flows = vec![InelasticFlowSpec::new(2.0, 1.0)];
        let grid = Discretization::new(1, 1, 10.0, 10.0).unwrap();
        let space = build_control_space(&flows, 10.0).unwrap();
        let steps = vec![custom_step_probs([0.5], 1).unwrap(); 2];
        assert!(matches!(
            assemble_model(&tiny_link(), &grid, &space, &steps),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn capacity_cap_enforced() {
        let model = single_action_model([0.5, 0.5]);
        assert!(model.check_capacity(1 << 20).is_ok());
        assert!(matches!(
            model.check_capacity(16),
            Err(Error::Capacity { states: 4, actions: 1, .. })
        ));
    }

    #[test]
    fn oversized_grid_rejected_before_allocation() {
        let link = LinkScenario::new(10.0, 10.0, 10.0).with_flows(vec![InelasticFlowSpec::new(1.0, 1.0)]);
        let scenario = Scenario::new(link, 50_000, 50_000).unwrap();
        let err = build_model(&scenario).unwrap_err();
        assert!(matches!(err, Error::Capacity { actions: 2, .. }));
    }

    #[test]
    fn precheck_matches_built_estimate() {
        let link = LinkScenario::new(10.0, 10.0, 10.0).with_flows(vec![InelasticFlowSpec::new(1.0, 1.0)]);
        let scenario = Scenario::new(link, 6, 9).unwrap();
        let model = build_model(&scenario).unwrap();
        let need = model.estimated_bytes();
        let actions = model.actions().to_vec();
        assert!(build_model_for_actions(&scenario, actions.clone(), 0.0, need).is_ok());
        assert!(matches!(
            build_model_for_actions(&scenario, actions, 0.0, need - 1),
            Err(Error::Capacity { .. })
        ));
    }
}

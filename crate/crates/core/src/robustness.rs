//! Congestion, the minimum elastic rate penalty, and nominal-versus-true
//! model mismatch.

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::scenario::{ActionSpec, Discretization, Scenario, TrueModelSpec};
use crate::ssp::{
    build_model_for_actions, decompose_cost, solve, Decomposition, Policy, SspModel,
    DEFAULT_MAX_MODEL_BYTES,
};

/// Elastic rate and inelastic reward rate of an action with load `load` on a
/// link of true bandwidth `b_true`. An overloaded link carries no elastic
/// traffic and earns no inelastic reward.
pub fn effective_action_params(b_true: f64, load: f64, vi_nominal: f64) -> (f64, f64) {
    let rate = (b_true - load).max(0.0);
    let vi = if load <= b_true { vi_nominal } else { 0.0 };
    (rate, vi)
}

/// Penalty charged on transitions into `(x', k+1)`, indexed `[k][x']`.
///
/// The elastic transfer is behind when its remaining size exceeds the rate
/// line `max(0, S - R0 t)`; the same table applies to every action.
pub fn rate_bound_cost(d: &Discretization, r0: f64, ve_t: f64) -> Result<Vec<Vec<f64>>> {
    ensure(r0.is_finite() && r0 >= 0.0, || {
        format!("rate bound must be >= 0, got {r0}")
    })?;
    let cost = ve_t / d.deadline() * d.delta_t();
    Ok((0..d.stages())
        .map(|k| {
            let line = (d.size() - r0 * d.time_at_stage(k + 1)).max(0.0);
            (0..=d.steps())
                .map(|xp| {
                    if r0 > 0.0 && d.remaining_at_step(xp) > line {
                        cost
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

/// True per-action parameters under `spec`, derived from the nominal
/// actions of `scenario`.
pub fn true_actions(
    scenario: &Scenario,
    nominal: &[ActionSpec],
    spec: &TrueModelSpec,
) -> Result<Vec<ActionSpec>> {
    ensure(spec.bandwidth.is_finite() && spec.bandwidth >= 0.0, || {
        format!("true bandwidth must be >= 0, got {}", spec.bandwidth)
    })?;
    let flows = &scenario.link.flows;
    if let Some(loads) = &spec.loads {
        ensure(loads.len() == flows.len(), || {
            format!("{} true loads given for {} flows", loads.len(), flows.len())
        })?;
        ensure(loads.iter().all(|l| l.is_finite() && *l >= 0.0), || {
            "true loads must be >= 0".to_string()
        })?;
    }
    Ok(nominal
        .iter()
        .map(|a| {
            let load = match &spec.loads {
                Some(loads) => a.members.iter().map(|&f| loads[f]).sum(),
                None => a.load,
            };
            let (rate, reward_rate) = effective_action_params(spec.bandwidth, load, a.reward_rate);
            let mut out = a.clone();
            out.load = load;
            out.rate = rate;
            out.reward_rate = reward_rate;
            if let Some(part) = out.stateful.as_mut() {
                if reward_rate == 0.0 {
                    part.reward_rate = 0.0;
                }
            }
            out
        })
        .collect())
}

/// The model a nominal policy actually runs against. The rate-bound penalty
/// is a design device, so true models carry none.
pub fn true_model(scenario: &Scenario, spec: &TrueModelSpec) -> Result<SspModel> {
    let space = scenario.control_space()?;
    let actions = true_actions(scenario, space.actions(), spec)?;
    build_model_for_actions(scenario, actions, 0.0, DEFAULT_MAX_MODEL_BYTES)
}

/// Nominal model with rate bound `r0` in place of the scenario's own.
pub fn nominal_model(scenario: &Scenario, r0: f64) -> Result<SspModel> {
    let space = scenario.control_space()?;
    build_model_for_actions(scenario, space.actions().to_vec(), r0, DEFAULT_MAX_MODEL_BYTES)
}

/// Loss from acting on a nominal model when another model is true.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchReport {
    /// Policy optimal for the nominal model.
    pub nominal_policy: Policy,
    /// Policy optimal for the true model.
    pub omniscient_policy: Policy,
    /// Both policies' costs under the true model.
    pub nominal_cost: Decomposition,
    pub omniscient_cost: Decomposition,
    /// `J(nominal) - J(omniscient)` per state.
    pub gap: Vec<f64>,
    pub elastic_gap: Vec<f64>,
    pub inelastic_gap: Vec<f64>,
    lambda_i: f64,
    start: usize,
}

/// Elastic and inelastic utility of one policy at the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Utilities {
    pub elastic: f64,
    pub inelastic: f64,
}

impl Utilities {
    /// `elastic + lambda * inelastic`.
    pub fn total(&self, lambda_i: f64) -> f64 {
        self.elastic + lambda_i * self.inelastic
    }
}

fn utilities_at(d: &Decomposition, start: usize) -> Utilities {
    Utilities {
        elastic: -d.elastic[start - 1],
        inelastic: -d.inelastic[start - 1],
    }
}

impl MismatchReport {
    pub fn nominal_utilities(&self) -> Utilities {
        utilities_at(&self.nominal_cost, self.start)
    }

    pub fn omniscient_utilities(&self) -> Utilities {
        utilities_at(&self.omniscient_cost, self.start)
    }

    /// Gap at the initial state, in utils.
    pub fn initial_gap(&self) -> f64 {
        self.gap[self.start - 1]
    }

    /// Initial-state gap as a fraction of the omniscient utility.
    pub fn relative_gap(&self) -> f64 {
        self.initial_gap() / self.omniscient_utilities().total(self.lambda_i).abs()
    }
}

fn check_structure(nominal: &SspModel, truth: &SspModel) -> Result<()> {
    let same = nominal.grid() == truth.grid()
        && nominal.action_count() == truth.action_count()
        && nominal.level_count() == truth.level_count();
    if same {
        Ok(())
    } else {
        Err(Error::Structure(format!(
            "nominal model ({} states, {} actions) and true model ({} states, {} actions) differ in structure",
            nominal.state_count(),
            nominal.action_count(),
            truth.state_count(),
            truth.action_count()
        )))
    }
}

/// Solves both models and evaluates both optimal policies on `truth`.
pub fn mismatch_eval(nominal: &SspModel, truth: &SspModel) -> Result<MismatchReport> {
    check_structure(nominal, truth)?;
    let nominal_policy = solve(nominal).policy;
    let omniscient_policy = solve(truth).policy;
    mismatch_for_policy(nominal_policy, omniscient_policy, truth)
}

fn mismatch_for_policy(
    nominal_policy: Policy,
    omniscient_policy: Policy,
    truth: &SspModel,
) -> Result<MismatchReport> {
    let nominal_cost = decompose_cost(truth, &nominal_policy)?;
    let omniscient_cost = decompose_cost(truth, &omniscient_policy)?;
    let lambda = truth.lambda_i();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    let gap = diff(
        &nominal_cost.recompose(lambda),
        &omniscient_cost.recompose(lambda),
    );
    Ok(MismatchReport {
        elastic_gap: diff(&nominal_cost.elastic, &omniscient_cost.elastic),
        inelastic_gap: diff(&nominal_cost.inelastic, &omniscient_cost.inelastic),
        gap,
        nominal_policy,
        omniscient_policy,
        nominal_cost,
        omniscient_cost,
        lambda_i: lambda,
        start: truth.initial_state(),
    })
}

/// One `(R0, true model)` cell of a rate-bound sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub r0: f64,
    pub b_true: f64,
    /// Utilities of the nominal policy under the true model.
    pub nominal: Utilities,
    /// Utilities of the true model's own optimal policy.
    pub omniscient: Utilities,
    /// Stage-0 actions of the nominal policy, `x = 0..=M`, at the initial level.
    pub stage0_policy: Vec<usize>,
}

/// For each `R0`, solves the penalized nominal model and evaluates its
/// policy under nominal conditions and every override. Rows are ordered by
/// `R0`, then nominal conditions first, then overrides in order.
pub fn ratebound_sweep(
    scenario: &Scenario,
    r0_grid: &[f64],
    overrides: &[TrueModelSpec],
) -> Result<Vec<SweepRow>> {
    ensure(!r0_grid.is_empty(), || "rate bound grid is empty".to_string())?;
    let mut truths = vec![(scenario.link.bandwidth, nominal_model(scenario, 0.0)?)];
    for spec in overrides {
        truths.push((spec.bandwidth, true_model(scenario, spec)?));
    }
    let omniscient: Vec<Policy> = truths.par_iter().map(|(_, m)| solve(m).policy).collect();

    let per_r0: Vec<Result<Vec<SweepRow>>> = r0_grid
        .par_iter()
        .map(|&r0| {
            let nominal = nominal_model(scenario, r0)?;
            let policy = solve(&nominal).policy;
            let level = nominal.levels().map_or(0, |c| c.initial_level());
            let stage0_policy = (0..=scenario.grid.steps())
                .map(|x| policy.action(nominal.state_index(level, x, 0)))
                .collect::<Vec<_>>();
            truths
                .iter()
                .zip(&omniscient)
                .map(|((b_true, truth), best)| {
                    check_structure(&nominal, truth)?;
                    let report = mismatch_for_policy(policy.clone(), best.clone(), truth)?;
                    Ok(SweepRow {
                        r0,
                        b_true: *b_true,
                        nominal: report.nominal_utilities(),
                        omniscient: report.omniscient_utilities(),
                        stage0_policy: stage0_policy.clone(),
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_r0 {
        rows.extend(r?);
    }
    Ok(rows)
}

use std::fs;
use std::path::Path;

use admission_core::chain::{fixed_rate_report, policy_progress_matrices, propagate_stagewise};
use admission_core::robustness::ratebound_sweep;
use admission_core::sim::{sample_batch, summarize};
use admission_core::ssp::StateCell;
use admission_core::{
    build_model, decompose_cost, lambda_sweep, solve as solve_model, Decomposition, Policy,
    Scenario, SspModel, TrueModelSpec,
};

use crate::output::*;
use crate::{CliError, Common};

fn load(common: &Common) -> Result<(Scenario, Sink), CliError> {
    let text = fs::read_to_string(&common.scenario).map_err(|e| {
        CliError::Input(format!("cannot read scenario {}: {e}", common.scenario.display()))
    })?;
    let scenario = Scenario::from_toml(&text)?;
    let sink = Sink::new(&common.out, common.json)?;
    Ok((scenario, sink))
}

fn finish(sink: &Sink) {
    for path in sink.written() {
        println!("wrote {}", path.display());
    }
}

fn level_of(model: &SspModel, cell: StateCell) -> Option<i64> {
    model.levels().map(|c| c.level_of(cell.level))
}

pub fn risk(common: &Common, grid: &[f64]) -> Result<(), CliError> {
    let (scenario, mut sink) = load(common)?;
    let rates = if grid.is_empty() {
        let space = scenario.control_space()?;
        let mut r: Vec<f64> = space.actions().iter().map(|a| a.rate).collect();
        r.sort_by(f64::total_cmp);
        r.dedup();
        vec![r[0], r[r.len() - 1]]
    } else {
        grid.to_vec()
    };
    let mut summary = Vec::new();
    for &rate in &rates {
        let env = fixed_rate_report(rate, &scenario.grid)?;
        let rows: Vec<RiskRow> = env
            .iter()
            .map(|p| RiskRow {
                k: p.k,
                t: p.t,
                theta: p.theta,
                sigma: p.sigma,
                s_mean: p.s_mean,
                s_low: p.s_low,
                s_high: p.s_high,
                miss_risk_to_date: p.miss_risk_to_date,
            })
            .collect();
        summary.push(RiskSummaryRow {
            rate,
            miss_risk: env.last().map_or(1.0, |p| p.miss_risk_to_date),
        });
        sink.table(&format!("risk_rate_{}", tag(rate)), &rows)?;
    }
    sink.table("risk_summary", &summary)?;
    finish(&sink);
    Ok(())
}

fn policy_rows(model: &SspModel, mu: &Policy) -> Vec<PolicyRow> {
    (1..=model.state_count())
        .map(|i| {
            let cell = model.cell(i);
            let a = mu.action(i);
            PolicyRow {
                k: cell.k,
                x: cell.x,
                w: level_of(model, cell),
                i,
                action: a,
                rate: model.action(a).rate,
            }
        })
        .collect()
}

fn value_rows(model: &SspModel, parts: &Decomposition) -> Vec<ValueRow> {
    let total = parts.recompose(model.lambda_i());
    (1..=model.state_count())
        .map(|i| {
            let cell = model.cell(i);
            ValueRow {
                i,
                x: cell.x,
                k: cell.k,
                w: level_of(model, cell),
                j: total[i - 1],
                j_e: parts.elastic[i - 1],
                j_i: parts.inelastic[i - 1],
                j_0: parts.rate_bound[i - 1],
            }
        })
        .collect()
}

fn summary(model: &SspModel, mu: &Policy, parts: &Decomposition) -> Result<Summary, CliError> {
    let start = model.initial_state() - 1;
    let miss_risk = if model.levels().is_none() {
        let f = propagate_stagewise(&policy_progress_matrices(model, mu)?);
        f.last().map(|last| 1.0 - last.completed())
    } else {
        None
    };
    Ok(Summary {
        states: model.state_count(),
        actions: model.action_count(),
        lambda_i: model.lambda_i(),
        utility: -parts.recompose(model.lambda_i())[start],
        elastic_utility: -parts.elastic[start],
        inelastic_utility: -parts.inelastic[start],
        rate_bound_cost: parts.rate_bound[start],
        miss_risk,
    })
}

pub fn solve(common: &Common) -> Result<(), CliError> {
    let (scenario, mut sink) = load(common)?;
    let model = build_model(&scenario)?;
    let sol = solve_model(&model);
    let parts = decompose_cost(&model, &sol.policy)?;
    sink.table("policy", &policy_rows(&model, &sol.policy))?;
    sink.table("values", &value_rows(&model, &parts))?;
    sink.table("summary", &[summary(&model, &sol.policy, &parts)?])?;
    finish(&sink);
    Ok(())
}

/// Reads a policy in the exported schema; every state must be listed once.
fn read_policy(path: &Path, model: &SspModel) -> Result<Policy, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read policy {}: {e}", path.display())))?;
    let n = model.state_count();
    let mut actions = vec![0usize; n];
    for (line, row) in reader.deserialize::<PolicyRow>().enumerate() {
        let row = row.map_err(|e| CliError::Input(format!("policy {}: {e}", path.display())))?;
        if row.i == 0 || row.i > n {
            return Err(CliError::Input(format!(
                "policy row {}: state {} outside 1..={n}",
                line + 1,
                row.i
            )));
        }
        if actions[row.i - 1] != 0 {
            return Err(CliError::Input(format!("policy lists state {} twice", row.i)));
        }
        actions[row.i - 1] = row.action;
    }
    if let Some(missing) = actions.iter().position(|&a| a == 0) {
        return Err(CliError::Input(format!(
            "policy has no action for state {}",
            missing + 1
        )));
    }
    let policy = Policy::new(actions);
    policy.validate_for(model)?;
    Ok(policy)
}

pub fn evaluate(common: &Common, policy: &Path) -> Result<(), CliError> {
    let (scenario, mut sink) = load(common)?;
    let model = build_model(&scenario)?;
    let mu = read_policy(policy, &model)?;
    let parts = decompose_cost(&model, &mu)?;
    sink.table("evaluation", &value_rows(&model, &parts))?;
    sink.table("evaluation_summary", &[summary(&model, &mu, &parts)?])?;
    finish(&sink);
    Ok(())
}

pub fn simulate(
    common: &Common,
    policy: Option<&Path>,
    count: usize,
    seed: u64,
    traces: usize,
) -> Result<(), CliError> {
    let (scenario, mut sink) = load(common)?;
    let model = build_model(&scenario)?;
    let mu = match policy {
        Some(path) => read_policy(path, &model)?,
        None => solve_model(&model).policy,
    };
    let runs = sample_batch(&model, &mu, count, seed)?;
    for (idx, run) in runs.iter().take(traces).enumerate() {
        let rows: Vec<TrajectoryRow> = run
            .steps
            .iter()
            .map(|s| TrajectoryRow {
                k: s.k,
                t: s.t,
                x: s.x,
                w: s.w,
                s: s.s,
                action: s.action,
                rate: s.rate,
                stage_reward: s.stage_reward,
                cumulative_reward: s.cumulative_reward,
                done: s.done,
            })
            .collect();
        sink.table(&format!("trajectory_{idx}"), &rows)?;
    }
    let stats = summarize(&runs);
    sink.table(
        "simulation_summary",
        &[SimSummaryRow {
            count,
            seed,
            miss_rate: stats.miss_rate.mean,
            miss_rate_half_width: stats.miss_rate.half_width,
            mean_total_reward: stats.total_reward.mean,
            total_reward_half_width: stats.total_reward.half_width,
            mean_elastic_reward: stats.elastic_reward.mean,
            elastic_reward_half_width: stats.elastic_reward.half_width,
            mean_inelastic_reward: stats.inelastic_reward.mean,
            inelastic_reward_half_width: stats.inelastic_reward.half_width,
        }],
    )?;
    finish(&sink);
    Ok(())
}

pub fn sweep_lambda(common: &Common, grid: &[f64]) -> Result<(), CliError> {
    let (scenario, mut sink) = load(common)?;
    let model = build_model(&scenario)?;
    let points = lambda_sweep(&model, grid)?;
    let rows: Vec<LambdaRow> = points
        .iter()
        .map(|p| LambdaRow {
            lambda: p.lambda,
            elastic_utility: p.elastic_utility,
            inelastic_utility: p.inelastic_utility,
            total_utility: p.elastic_utility + p.lambda * p.inelastic_utility,
        })
        .collect();
    for p in &points {
        sink.table(
            &format!("policy_lambda_{}", tag(p.lambda)),
            &policy_rows(&model, &p.policy),
        )?;
    }
    sink.table("sweep_lambda", &rows)?;
    finish(&sink);
    Ok(())
}

pub fn sweep_ratebound(common: &Common, grid: &[f64], extra: &[f64]) -> Result<(), CliError> {
    let (scenario, mut sink) = load(common)?;
    let mut overrides = scenario.overrides.clone();
    overrides.extend(extra.iter().map(|&b| TrueModelSpec::bandwidth(b)));
    let rows: Vec<RateBoundRow> = ratebound_sweep(&scenario, grid, &overrides)?
        .into_iter()
        .map(|r| RateBoundRow {
            r0: r.r0,
            b_true: r.b_true,
            elastic_utility_nominal_policy: r.nominal.elastic,
            inelastic_utility_nominal_policy: r.nominal.inelastic,
            elastic_utility_omniscient: r.omniscient.elastic,
            inelastic_utility_omniscient: r.omniscient.inelastic,
        })
        .collect();
    sink.table("sweep_ratebound", &rows)?;
    finish(&sink);
    Ok(())
}

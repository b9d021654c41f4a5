//! Seeded Monte Carlo runs of the controlled process.
//!
//! Every draw comes from a ChaCha8 stream keyed by `(seed, trajectory
//! index)` and positioned by stage, so a trajectory depends only on its key
//! and batches can run in any order or in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::ssp::{Policy, SspModel, StateCell, Transition};

/// One row per visited stage; the last row is the final state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub k: usize,
    pub t: f64,
    pub x: usize,
    /// Inelastic level `w`; 0 without augmentation.
    pub w: i64,
    /// Remaining size at cell resolution.
    pub s: f64,
    /// Action applied during the stage; 0 on the final row.
    pub action: usize,
    /// Elastic rate of the action.
    pub rate: f64,
    /// Realized `-G` of the transition out of this row.
    pub stage_reward: f64,
    pub cumulative_reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// Stage at which the elastic transfer finished, if it did.
    pub completion_stage: Option<usize>,
    pub elastic_reward: f64,
    pub inelastic_reward: f64,
    /// Accrued rate-bound penalty, as a (non-positive) reward.
    pub rate_bound_reward: f64,
}

impl Trajectory {
    /// `elastic + lambda * inelastic + rate bound`.
    pub fn total_reward(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cumulative_reward)
    }

    pub fn completed(&self) -> bool {
        self.completion_stage.is_some()
    }

    pub fn missed(&self) -> bool {
        self.completion_stage.is_none()
    }
}

fn pick(row: &[Transition], u: f64) -> &Transition {
    let mut acc = 0.0;
    for t in row {
        acc += t.prob;
        if u < acc {
            return t;
        }
    }
    row.iter().rev().find(|t| t.prob > 0.0).unwrap_or(&row[row.len() - 1])
}

/// Trajectory number `index` of the batch keyed by `seed`.
pub fn sample_trajectory_indexed(
    model: &SspModel,
    mu: &Policy,
    seed: u64,
    index: u64,
) -> Result<Trajectory> {
    mu.validate_for(model)?;
    let grid = model.grid();
    let m = grid.steps();
    let lambda = model.lambda_i();
    let level_of = |level: usize| model.levels().map_or(0, |c| c.level_of(level));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);

    let mut i = model.initial_state();
    let mut steps = Vec::with_capacity(grid.stages() + 1);
    let (mut elastic, mut inelastic, mut rate_bound) = (0.0, 0.0, 0.0);
    let mut cumulative = 0.0;
    let mut completion_stage = None;
    loop {
        let StateCell { level, x, k } = model.cell(i);
        if x == m && completion_stage.is_none() {
            completion_stage = Some(k);
        }
        // Inelastic reward keeps accruing after completion, up to stage N.
        let done = k == grid.stages();
        let row_base = TrajectoryStep {
            k,
            t: grid.time_at_stage(k),
            x,
            w: level_of(level),
            s: grid.remaining_at_step(x),
            action: 0,
            rate: 0.0,
            stage_reward: 0.0,
            cumulative_reward: cumulative,
            done,
        };
        if done {
            steps.push(row_base);
            return Ok(Trajectory {
                steps,
                completion_stage,
                elastic_reward: elastic,
                inelastic_reward: inelastic,
                rate_bound_reward: rate_bound,
            });
        }
        let a = mu.action(i);
        // Two words per stage keep one draw per stage at a fixed position.
        rng.set_word_pos(2 * k as u128);
        let u: f64 = rng.random();
        let row = model.transition_row(a, i);
        let next = pick(&row, u);
        let reward = -next.cost.total(lambda);
        elastic -= next.cost.elastic;
        inelastic -= next.cost.inelastic;
        rate_bound -= next.cost.rate_bound;
        cumulative += reward;
        steps.push(TrajectoryStep {
            action: a,
            rate: model.action(a).rate,
            stage_reward: reward,
            ..row_base
        });
        i = next.to;
    }
}

/// First trajectory of the batch keyed by `seed`.
pub fn sample_trajectory(model: &SspModel, mu: &Policy, seed: u64) -> Result<Trajectory> {
    sample_trajectory_indexed(model, mu, seed, 0)
}

/// Sample mean with its standard error and 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub half_width: f64,
}

const Z95: f64 = 1.959963984540054;

impl Estimate {
    fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let std_error = (var / n).sqrt();
        Self {
            mean,
            std_error,
            half_width: Z95 * std_error,
        }
    }

    fn binomial(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        let std_error = (p * (1.0 - p) / n as f64).sqrt();
        Self {
            mean: p,
            std_error,
            half_width: Z95 * std_error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub count: usize,
    pub miss_rate: Estimate,
    pub total_reward: Estimate,
    pub elastic_reward: Estimate,
    pub inelastic_reward: Estimate,
}

/// Runs trajectories `0..count` of the batch keyed by `seed`.
pub fn sample_batch(model: &SspModel, mu: &Policy, count: usize, seed: u64) -> Result<Vec<Trajectory>> {
    ensure(count >= 1, || "trajectory count must be >= 1".to_string())?;
    (0..count as u64)
        .into_par_iter()
        .map(|idx| sample_trajectory_indexed(model, mu, seed, idx))
        .collect()
}

/// Empirical miss rate and mean rewards over `count` trajectories.
pub fn batch_stats(model: &SspModel, mu: &Policy, count: usize, seed: u64) -> Result<BatchStats> {
    Ok(summarize(&sample_batch(model, mu, count, seed)?))
}

/// Statistics of an already sampled, non-empty batch.
pub fn summarize(runs: &[Trajectory]) -> BatchStats {
    let collect = |f: fn(&Trajectory) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    BatchStats {
        count: runs.len(),
        miss_rate: Estimate::binomial(runs.iter().filter(|t| t.missed()).count(), runs.len()),
        total_reward: Estimate::from_samples(&collect(Trajectory::total_reward)),
        elastic_reward: Estimate::from_samples(&collect(|t| t.elastic_reward)),
        inelastic_reward: Estimate::from_samples(&collect(|t| t.inelastic_reward)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{custom_step_probs, deadline_miss_risk, ProgressMatrix};
    use crate::scenario::{build_control_space, InelasticFlowSpec, LinkScenario, Scenario};
    use crate::ssp::{assemble_model, build_model, evaluate_policy, solve};

    fn small() -> SspModel {
        let flows = vec![InelasticFlowSpec::new(1.0, 1.0), InelasticFlowSpec::new(3.0, 2.0)];
        let link = LinkScenario::new(10.0, 600.0, 100.0).with_flows(flows);
        build_model(&Scenario::new(link, 8, 10).unwrap()).unwrap()
    }

    #[test]
    fn certain_completion_takes_one_stage() {
        let link = LinkScenario::new(10.0, 400.0, 40.0).with_flows(vec![InelasticFlowSpec::new(1.0, 1.0)]);
        let sc = Scenario::new(link, 4, 4).unwrap();
        let space = sc.control_space().unwrap();
        let jump = custom_step_probs([0.0, 0.0, 0.0, 0.0, 1.0], 4).unwrap();
        let model = assemble_model(&sc.link, &sc.grid, &space, &[jump.clone(), jump]).unwrap();
        let traj = sample_trajectory(&model, &Policy::constant(model.state_count(), 2), 7).unwrap();
        assert_eq!(traj.completion_stage, Some(1));
        assert_eq!(traj.steps.len(), 5);
        assert_eq!(traj.steps[1].s, 0.0);
        assert!(traj.steps[4].done);
    }

    #[test]
    fn trajectories_are_reproducible_and_well_formed() {
        let model = small();
        let mu = solve(&model).policy;
        let a = sample_trajectory_indexed(&model, &mu, 42, 3).unwrap();
        let b = sample_trajectory_indexed(&model, &mu, 42, 3).unwrap();
        assert_eq!(a, b);
        for seed in 0..50 {
            let t = sample_trajectory(&model, &mu, seed).unwrap();
            assert_eq!(t.steps.len(), model.grid().stages() + 1);
            for w in t.steps.windows(2) {
                assert_eq!(w[1].k, w[0].k + 1);
                assert!(w[1].x >= w[0].x);
                assert_eq!(w[1].t - w[0].t, model.grid().delta_t());
            }
            let last = t.steps.last().unwrap();
            assert!(last.done);
            assert!(t.steps[..t.steps.len() - 1].iter().all(|s| !s.done));
            let parts = t.elastic_reward + t.inelastic_reward + t.rate_bound_reward;
            assert!((parts - t.total_reward()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_run_batch() {
        let model = small();
        let mu = solve(&model).policy;
        let stats = batch_stats(&model, &mu, 1, 9).unwrap();
        let t = sample_trajectory(&model, &mu, 9).unwrap();
        assert_eq!(stats.total_reward.mean, t.total_reward());
        assert_eq!(stats.total_reward.half_width, 0.0);
        assert_eq!(stats.miss_rate.mean, if t.missed() { 1.0 } else { 0.0 });
        assert!(batch_stats(&model, &mu, 0, 9).is_err());
    }

    #[test]
    fn fixed_policy_miss_rate_matches_chain() {
        let model = small();
        let a = 3;
        let mu = Policy::constant(model.state_count(), a);
        let stats = batch_stats(&model, &mu, 4000, 1).unwrap();
        let p: &ProgressMatrix = model.progress(a, 0);
        let risk = deadline_miss_risk(p, model.grid().stages());
        assert!((stats.miss_rate.mean - risk).abs() <= 3.0 * stats.miss_rate.std_error.max(1e-3));
    }

    #[test]
    fn mean_reward_matches_evaluation() {
        let model = small();
        let mu = solve(&model).policy;
        let stats = batch_stats(&model, &mu, 4000, 5).unwrap();
        let j = evaluate_policy(&model, &mu).unwrap().get(model.initial_state());
        assert!((stats.total_reward.mean + j).abs() <= 3.0 * stats.total_reward.std_error);
    }

    #[test]
    fn control_space_helper_is_consistent() {
        // The small model's actions come from the ordinary builder.
        let flows = vec![InelasticFlowSpec::new(1.0, 1.0), InelasticFlowSpec::new(3.0, 2.0)];
        let cs = build_control_space(&flows, 10.0).unwrap();
        assert_eq!(cs.len(), small().action_count());
    }
}

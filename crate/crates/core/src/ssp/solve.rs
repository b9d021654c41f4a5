use rayon::prelude::*;

use super::{Policy, SspModel};
use crate::error::{ensure, Result};

/// Expected cost-to-go `Q[i][a]` for every state and action.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    actions: usize,
    data: Vec<f64>,
}

impl QMatrix {
    /// Entry for one-based state `i` and action `a`.
    pub fn get(&self, i: usize, a: usize) -> f64 {
        self.data[(i - 1) * self.actions + (a - 1)]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[(i - 1) * self.actions..i * self.actions]
    }

    pub fn action_count(&self) -> usize {
        self.actions
    }

    pub fn state_count(&self) -> usize {
        self.data.len() / self.actions
    }
}

/// Expected total cost per objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub elastic: Vec<f64>,
    pub inelastic: Vec<f64>,
    pub rate_bound: Vec<f64>,
}

impl Decomposition {
    /// `J_E + lambda J_I + J_0`.
    pub fn recompose(&self, lambda_i: f64) -> Vec<f64> {
        self.elastic
            .iter()
            .zip(&self.inelastic)
            .zip(&self.rate_bound)
            .map(|((e, i), r)| e + lambda_i * i + r)
            .collect()
    }
}

/// Expected total cost `J` (negated utils) per state; entry `i - 1` holds
/// state `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVector {
    pub total: Vec<f64>,
    pub parts: Option<Decomposition>,
}

impl CostVector {
    /// `J_i` for one-based `i`.
    pub fn get(&self, i: usize) -> f64 {
        self.total[i - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub q: QMatrix,
    pub policy: Policy,
    pub cost: CostVector,
}

/// Per-stage quantities shared by every state of the stage.
struct StageTerms {
    behind: Vec<bool>,
    completion_cost: f64,
    penalty: Option<f64>,
}

impl StageTerms {
    fn new(model: &SspModel, k: usize) -> Self {
        let m = model.grid().steps();
        Self {
            behind: (0..=m).map(|xp| model.behind_rate_line(k, xp)).collect(),
            completion_cost: 0.0 - model.completion_reward(k),
            penalty: model.rate_bound().map(|rb| rb.stage_cost),
        }
    }
}

/// Expected continuation `sum_w' P^I(a1)[w][w'] J(w', x', k+1)` for each
/// admit flag, laid out as `level * (M+1) + x'`.
fn continuation(model: &SspModel, values: &[f64], k: usize) -> [Vec<f64>; 2] {
    let grid = model.grid();
    let width = grid.width();
    let per_level = grid.state_count();
    let base = width * (k + 1);
    match model.levels() {
        None => {
            let next = values[base..base + width].to_vec();
            [next.clone(), next]
        }
        Some(chain) => {
            let d = chain.level_count();
            let mut out = [vec![0.0; d * width], vec![0.0; d * width]];
            for (flag, dest) in out.iter_mut().enumerate() {
                for w in 0..d {
                    let row = chain.row(flag == 1, w);
                    let acc = &mut dest[w * width..(w + 1) * width];
                    for (wp, &pw) in row.iter().enumerate() {
                        if pw == 0.0 {
                            continue;
                        }
                        let next = &values[wp * per_level + base..wp * per_level + base + width];
                        for (slot, &v) in acc.iter_mut().zip(next) {
                            *slot += pw * v;
                        }
                    }
                }
            }
            out
        }
    }
}

/// `Q` of zero-based action `a` at `(level, x, k)` given the continuation.
#[inline]
fn q_value(
    model: &SspModel,
    terms: &StageTerms,
    cont: &[Vec<f64>; 2],
    a: usize,
    level: usize,
    x: usize,
    k: usize,
) -> f64 {
    let grid = model.grid();
    let m = grid.steps();
    let width = grid.width();
    let p = model.progress(a + 1, k).row(x);
    let c = &cont[model.admits_stateful(a) as usize][level * width..(level + 1) * width];

    let mut elastic = 0.0;
    let mut penalty = 0.0;
    if x < m {
        elastic += p[m] * terms.completion_cost;
        if let Some(cost) = terms.penalty {
            for xp in x..=m {
                if terms.behind[xp] {
                    penalty += p[xp] * cost;
                }
            }
        }
    }
    let mut onward = 0.0;
    for xp in x..=m {
        onward += p[xp] * c[xp];
    }
    let inelastic = 0.0 - model.inelastic_rate(a, level) * grid.delta_t();

    let mut q = 0.0;
    q += elastic;
    q += model.lambda_i() * inelastic;
    if terms.penalty.is_some() {
        q += penalty;
    }
    q += onward;
    q
}

/// Exact optimal policy by one backward pass over stages.
///
/// Stages advance deterministically, so the stage-`k` cost-to-go depends
/// only on stage `k + 1`; the pass reproduces converged value iteration.
/// Ties go to the smallest action index.
pub fn solve(model: &SspModel) -> Solution {
    let grid = model.grid();
    let n = model.state_count();
    let m_actions = model.action_count();
    let width = grid.width();
    let per_level = grid.state_count();
    let mut values = vec![0.0; n];
    let mut q = vec![0.0; n * m_actions];
    let mut policy = vec![1usize; n];

    for k in (0..grid.stages()).rev() {
        let terms = StageTerms::new(model, k);
        let cont = continuation(model, &values, k);
        for level in 0..model.level_count() {
            for x in 0..width {
                let z = level * per_level + x + width * k;
                let row = &mut q[z * m_actions..(z + 1) * m_actions];
                let mut best = 0;
                for a in 0..m_actions {
                    row[a] = q_value(model, &terms, &cont, a, level, x, k);
                    if row[a] < row[best] {
                        best = a;
                    }
                }
                values[z] = row[best];
                policy[z] = best + 1;
            }
        }
    }
    Solution {
        q: QMatrix {
            actions: m_actions,
            data: q,
        },
        policy: Policy::new(policy),
        cost: CostVector {
            total: values,
            parts: None,
        },
    }
}

/// Expected total cost of a fixed policy, one backward pass.
pub fn evaluate_policy(model: &SspModel, mu: &Policy) -> Result<CostVector> {
    mu.validate_for(model)?;
    let grid = model.grid();
    let width = grid.width();
    let per_level = grid.state_count();
    let mut values = vec![0.0; model.state_count()];
    for k in (0..grid.stages()).rev() {
        let terms = StageTerms::new(model, k);
        let cont = continuation(model, &values, k);
        for level in 0..model.level_count() {
            for x in 0..width {
                let z = level * per_level + x + width * k;
                let a = mu.action(z + 1) - 1;
                values[z] = q_value(model, &terms, &cont, a, level, x, k);
            }
        }
    }
    Ok(CostVector {
        total: values,
        parts: None,
    })
}

/// Expected elastic, inelastic and rate-bound costs of a fixed policy.
pub fn decompose_cost(model: &SspModel, mu: &Policy) -> Result<Decomposition> {
    mu.validate_for(model)?;
    let grid = model.grid();
    let width = grid.width();
    let m = grid.steps();
    let per_level = grid.state_count();
    let n = model.state_count();
    let mut parts = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for k in (0..grid.stages()).rev() {
        let terms = StageTerms::new(model, k);
        let conts: Vec<[Vec<f64>; 2]> = parts.iter().map(|v| continuation(model, v, k)).collect();
        for level in 0..model.level_count() {
            for x in 0..width {
                let z = level * per_level + x + width * k;
                let a = mu.action(z + 1) - 1;
                let p = model.progress(a + 1, k).row(x);
                let flag = model.admits_stateful(a) as usize;
                let mut immediate = [0.0; 3];
                if x < m {
                    immediate[0] += p[m] * terms.completion_cost;
                    if let Some(cost) = terms.penalty {
                        for xp in x..=m {
                            if terms.behind[xp] {
                                immediate[2] += p[xp] * cost;
                            }
                        }
                    }
                }
                immediate[1] = 0.0 - model.inelastic_rate(a, level) * grid.delta_t();
                for c in 0..3 {
                    let next = &conts[c][flag][level * width..(level + 1) * width];
                    let mut acc = 0.0;
                    acc += immediate[c];
                    for xp in x..=m {
                        acc += p[xp] * next[xp];
                    }
                    parts[c][z] = acc;
                }
            }
        }
    }
    let [elastic, inelastic, rate_bound] = parts;
    Ok(Decomposition {
        elastic,
        inelastic,
        rate_bound,
    })
}

/// Generic value iteration over full transition rows, kept to validate the
/// backward pass. Stops once the sup-norm change drops to `tol` or after
/// `max_sweeps` sweeps.
pub fn solve_value_iteration(model: &SspModel, tol: f64, max_sweeps: usize) -> (Solution, usize) {
    let n = model.state_count();
    let m_actions = model.action_count();
    let lambda = model.lambda_i();
    let rows: Vec<Vec<_>> = (1..=n)
        .flat_map(|i| (1..=m_actions).map(move |a| (i, a)))
        .map(|(i, a)| model.transition_row(a, i))
        .collect();
    let mut values = vec![0.0; n];
    let mut q = vec![0.0; n * m_actions];
    let mut policy = vec![1usize; n];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut next = vec![0.0; n];
        for z in 0..n {
            let mut best = 0;
            for a in 0..m_actions {
                let mut acc = 0.0;
                for t in &rows[z * m_actions + a] {
                    acc += t.prob * (t.cost.total(lambda) + values[t.to - 1]);
                }
                q[z * m_actions + a] = acc;
                if acc < q[z * m_actions + best] {
                    best = a;
                }
            }
            next[z] = q[z * m_actions + best];
            policy[z] = best + 1;
        }
        let delta = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if delta <= tol {
            break;
        }
    }
    (
        Solution {
            q: QMatrix {
                actions: m_actions,
                data: q,
            },
            policy: Policy::new(policy),
            cost: CostVector {
                total: values,
                parts: None,
            },
        },
        sweeps,
    )
}

/// One point of the optimized elastic/inelastic tradeoff.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPoint {
    pub lambda: f64,
    /// `-J^E` at the initial state.
    pub elastic_utility: f64,
    /// `-J^I` at the initial state.
    pub inelastic_utility: f64,
    pub policy: Policy,
}

/// Re-solves `model` for every weight in `grid`, sorted by weight.
pub fn lambda_sweep(model: &SspModel, grid: &[f64]) -> Result<Vec<LambdaPoint>> {
    ensure(!grid.is_empty(), || "lambda grid is empty".to_string())?;
    ensure(grid.iter().all(|l| l.is_finite() && *l >= 0.0), || {
        "lambda values must be finite and >= 0".to_string()
    })?;
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let start = model.initial_state();
    sorted
        .par_iter()
        .map(|&lambda| {
            let mut local = model.clone();
            local.set_lambda_i(lambda);
            let sol = solve(&local);
            let parts = decompose_cost(&local, &sol.policy)?;
            Ok(LambdaPoint {
                lambda,
                elastic_utility: -parts.elastic[start - 1],
                inelastic_utility: -parts.inelastic[start - 1],
                policy: sol.policy,
            })
        })
        .collect()
}

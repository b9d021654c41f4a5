//! Persistence and urgency requirements for one set of stateful inelastic
//! flows.
//!
//! Levels `w = -D_u, ..., 0, 1, ..., D_p + 1` track how fresh (positive) or
//! how overdue (non-positive) the stateful set is; level `D_p + 1` is
//! permanent suspension. They are stored as indices `0..D` with
//! `index = w + D_u`. The augmented state is `(w, x, k)`, stored level-major
//! so that each level holds a contiguous copy of the step-stage grid.

use crate::chain::{fold_tail, poisson_pmf};
use crate::error::{ensure, validation, Result};
use crate::scenario::{
    build_control_space_indexed, ActionSpec, ControlSpace, InelasticFlowSpec, StatefulPart,
};
use crate::ssp::SspModel;

/// A per-stage counting distribution over levels.
#[derive(Debug, Clone, PartialEq)]
pub enum CountingSpec {
    /// Explicit `[c_0, c_1, ...]` with total mass 1; mass beyond the listed
    /// range folds into the overshoot entry.
    Probabilities(Vec<f64>),
    /// Poisson process with the given rate in levels per second.
    PoissonRate(f64),
}

impl CountingSpec {
    fn validate(&self, name: &str) -> Result<()> {
        match self {
            CountingSpec::Probabilities(p) => {
                ensure(!p.is_empty(), || format!("{name} is empty"))?;
                ensure(p.iter().all(|v| v.is_finite() && *v >= 0.0), || {
                    format!("{name} has negative or non-finite entries")
                })?;
                let total: f64 = p.iter().sum();
                ensure((total - 1.0).abs() <= 1e-9, || {
                    format!("{name} must sum to 1, sums to {total}")
                })
            }
            CountingSpec::PoissonRate(r) => ensure(r.is_finite() && *r >= 0.0, || {
                format!("{name} poisson_rate must be >= 0, got {r}")
            }),
        }
    }

    /// First `len` masses per stage of `delta_t` seconds.
    fn masses(&self, len: usize, delta_t: f64) -> Vec<f64> {
        match self {
            CountingSpec::Probabilities(p) => {
                let mut v = p.clone();
                v.resize(len.max(p.len()), 0.0);
                v.truncate(len);
                v
            }
            CountingSpec::PoissonRate(r) => poisson_pmf(r * delta_t).take(len).collect(),
        }
    }
}

/// Persistence/urgency requirement of the stateful set.
#[derive(Debug, Clone, PartialEq)]
pub struct InelasticStateSpec {
    /// `D_p >= 1`.
    pub persistence_levels: usize,
    /// `D_u >= 0`.
    pub urgency_levels: usize,
    /// Staleness growth per denied stage.
    pub pi: CountingSpec,
    /// Freshness recovery per admitted stage.
    pub epsilon: CountingSpec,
    /// Urgency decay per denied stage.
    pub gamma: CountingSpec,
    /// Drop composite actions whose load and reward are both beaten by
    /// another action.
    pub prune_dominated: bool,
}

impl InelasticStateSpec {
    pub fn new(
        persistence_levels: usize,
        urgency_levels: usize,
        pi: Vec<f64>,
        epsilon: Vec<f64>,
        gamma: Vec<f64>,
    ) -> Self {
        Self {
            persistence_levels,
            urgency_levels,
            pi: CountingSpec::Probabilities(pi),
            epsilon: CountingSpec::Probabilities(epsilon),
            gamma: CountingSpec::Probabilities(gamma),
            prune_dominated: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.persistence_levels >= 1, || {
            "D_p must be at least 1".to_string()
        })?;
        self.pi.validate("pi")?;
        self.epsilon.validate("epsilon")?;
        self.gamma.validate("gamma")
    }

    /// `D = D_p + D_u + 2`.
    pub fn level_count(&self) -> usize {
        self.persistence_levels + self.urgency_levels + 2
    }
}

/// Dense row-major block of level transition probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LevelMatrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }
}

/// Level dynamics under deny (`a_1 = 1`) and admit (`a_1 = 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelChain {
    persistence: usize,
    urgency: usize,
    /// `P^p(1)`, `P^p(2)` over levels `1..=D_p+1`.
    persistence_blocks: [LevelMatrix; 2],
    /// `P^u(1)`, `P^u(2)`: rows `-D_u..=0`, columns all `D` levels.
    urgency_blocks: [LevelMatrix; 2],
    /// `P^I(1)`, `P^I(2)`.
    full: [LevelMatrix; 2],
}

impl LevelChain {
    /// `D`.
    pub fn level_count(&self) -> usize {
        self.persistence + self.urgency + 2
    }

    pub fn persistence_levels(&self) -> usize {
        self.persistence
    }

    pub fn urgency_levels(&self) -> usize {
        self.urgency
    }

    /// Storage index of level `w`.
    pub fn index_of(&self, w: i64) -> usize {
        (w + self.urgency as i64) as usize
    }

    /// Level `w` of a storage index.
    pub fn level_of(&self, idx: usize) -> i64 {
        idx as i64 - self.urgency as i64
    }

    /// Index of level 0, the initial level.
    pub fn initial_level(&self) -> usize {
        self.urgency
    }

    /// Index of level `D_p + 1`.
    pub fn suspended_level(&self) -> usize {
        self.level_count() - 1
    }

    /// `P^I(a_1)` with `admit` selecting `a_1 = 2`.
    pub fn matrix(&self, admit: bool) -> &LevelMatrix {
        &self.full[admit as usize]
    }

    pub fn row(&self, admit: bool, idx: usize) -> &[f64] {
        self.full[admit as usize].row(idx)
    }

    pub fn persistence_block(&self, admit: bool) -> &LevelMatrix {
        &self.persistence_blocks[admit as usize]
    }

    pub fn urgency_block(&self, admit: bool) -> &LevelMatrix {
        &self.urgency_blocks[admit as usize]
    }
}

/// Builds `P^p`, `P^u` and the composed `P^I` for both stateful actions.
pub fn build_level_chain(spec: &InelasticStateSpec, delta_t: f64) -> Result<LevelChain> {
    spec.validate()?;
    let dp = spec.persistence_levels;
    let du = spec.urgency_levels;
    let d = spec.level_count();

    // Persistence block: local index r <-> level w = r + 1.
    let pi = fold_tail(spec.pi.masses(d + 1, delta_t), d + 2)?;
    let eps = fold_tail(spec.epsilon.masses(d + 1, delta_t), d + 2)?;
    let gamma = fold_tail(spec.gamma.masses(d + 1, delta_t), d + 2)?;

    let mut p_deny = LevelMatrix::zeros(dp + 1, dp + 1);
    let mut p_admit = LevelMatrix::zeros(dp + 1, dp + 1);
    for w in 1..=dp {
        let r = w - 1;
        let mut kept = 0.0;
        for l in 0..=(dp - w) {
            p_deny.set(r, r + l, pi[l]);
            kept += pi[l];
        }
        // rho_w
        p_deny.add(r, dp, (1.0 - kept).max(0.0));

        if w == 1 {
            p_admit.set(0, 0, 1.0);
        } else {
            let mut kept = 0.0;
            for l in 0..(w - 1) {
                p_admit.set(r, r - l, eps[l]);
                kept += eps[l];
            }
            // eta_w
            p_admit.add(r, 0, (1.0 - kept).max(0.0));
        }
    }
    p_deny.set(dp, dp, 1.0);
    p_admit.set(dp, dp, 1.0);

    // Urgency block: row r <-> level w = r - D_u; columns are global indices.
    let mut u_deny = LevelMatrix::zeros(du + 1, d);
    let mut u_admit = LevelMatrix::zeros(du + 1, d);
    let level_one = du + 1;
    for r in 0..=du {
        let mut kept = 0.0;
        for l in 0..=r {
            u_deny.set(r, r - l, gamma[l]);
            kept += gamma[l];
        }
        // phi_{-w}
        u_deny.add(r, d - 1, (1.0 - kept).max(0.0));
        u_admit.set(r, level_one, 1.0);
    }

    let compose = |u: &LevelMatrix, p: &LevelMatrix| {
        let mut full = LevelMatrix::zeros(d, d);
        for r in 0..=du {
            for c in 0..d {
                full.set(r, c, u.get(r, c));
            }
        }
        for r in 0..=dp {
            for c in 0..=dp {
                full.set(level_one + r, level_one + c, p.get(r, c));
            }
        }
        full
    };
    let full = [compose(&u_deny, &p_deny), compose(&u_admit, &p_admit)];
    Ok(LevelChain {
        persistence: dp,
        urgency: du,
        persistence_blocks: [p_deny, p_admit],
        urgency_blocks: [u_deny, u_admit],
        full,
    })
}

/// Composite control space: every stateless subset, with the stateful set
/// denied or admitted, ordered by total load.
///
/// All flows marked stateful form the single stateful set. With `prune`,
/// actions beaten in both load and reward by another action are dropped.
pub fn build_composite_control_space(
    flows: &[InelasticFlowSpec],
    bandwidth: f64,
    prune: bool,
) -> Result<ControlSpace> {
    let stateless: Vec<(usize, &InelasticFlowSpec)> =
        flows.iter().enumerate().filter(|(_, f)| !f.stateful).collect();
    let stateful: Vec<(usize, &InelasticFlowSpec)> =
        flows.iter().enumerate().filter(|(_, f)| f.stateful).collect();
    ensure(!stateful.is_empty(), || {
        "a stateful section is configured but no flow is marked stateful".to_string()
    })?;
    let base = build_control_space_indexed(&stateless, bandwidth)?;
    let set_load: f64 = stateful.iter().map(|(_, f)| f.load).sum();
    let set_reward: f64 = stateful.iter().map(|(_, f)| f.reward_rate).sum();
    let set_members: Vec<usize> = stateful.iter().map(|(i, _)| *i).collect();

    let mut composite = Vec::with_capacity(2 * base.len());
    for admit in [false, true] {
        for (a2, action) in base.actions().iter().enumerate() {
            let (extra_load, extra_reward) = if admit {
                (set_load, set_reward)
            } else {
                (0.0, 0.0)
            };
            let load = action.load + extra_load;
            if load > bandwidth {
                return Err(validation(format!(
                    "composite action (admit={admit}, stateless {}) needs {load} Mbps, above the bandwidth {bandwidth}",
                    a2 + 1
                )));
            }
            let mut members = action.members.clone();
            if admit {
                members.extend(&set_members);
            }
            composite.push((
                a2,
                ActionSpec::new(
                    load,
                    bandwidth - load,
                    action.raw_reward() + extra_reward,
                    members,
                    Some(StatefulPart::new(admit, extra_reward)),
                ),
            ));
        }
    }
    composite.sort_by(|(ia, a), (ib, b)| {
        a.load
            .total_cmp(&b.load)
            .then(a.raw_reward().total_cmp(&b.raw_reward()))
            .then(a.stateful.map(|p| p.admit).cmp(&b.stateful.map(|p| p.admit)))
            .then(ia.cmp(ib))
    });
    let mut actions: Vec<ActionSpec> = composite.into_iter().map(|(_, a)| a).collect();
    if prune {
        let dominated = |a: &ActionSpec| {
            actions.iter().any(|b| {
                b.load <= a.load
                    && b.raw_reward() >= a.raw_reward()
                    && (b.load < a.load || b.raw_reward() > a.raw_reward())
            })
        };
        let keep: Vec<bool> = actions.iter().map(|a| !dominated(a)).collect();
        let mut flags = keep.into_iter();
        actions.retain(|_| flags.next().unwrap());
    }
    Ok(ControlSpace::from_actions(bandwidth, actions))
}

/// Lifts a step-stage model built over a composite control space onto
/// `(w, x, k)` states driven independently by `chain`.
pub fn augment_model(base: SspModel, chain: LevelChain, max_bytes: u64) -> Result<SspModel> {
    ensure(base.levels().is_none(), || {
        "model is already augmented; only one stateful set is supported".to_string()
    })?;
    ensure(base.actions().iter().all(|a| a.stateful.is_some()), || {
        "augmentation requires a composite control space".to_string()
    })?;
    let model = base.with_levels(chain);
    model.check_capacity(max_bytes)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn assert_stochastic(m: &LevelMatrix) {
        for r in 0..m.rows() {
            let sum: f64 = m.row(r).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {r} sums to {sum}");
            assert!(m.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    /// Distribution after `steps` transitions from `start` under one action.
    fn walk(chain: &LevelChain, admit: bool, start: usize, steps: usize) -> Vec<f64> {
        let d = chain.level_count();
        let mut f = vec![0.0; d];
        f[start] = 1.0;
        for _ in 0..steps {
            let mut next = vec![0.0; d];
            for (w, &fw) in f.iter().enumerate() {
                for (wp, &p) in chain.row(admit, w).iter().enumerate() {
                    next[wp] += fw * p;
                }
            }
            f = next;
        }
        f
    }

    #[test]
    fn no_disruption_persistence() {
        let spec = InelasticStateSpec::new(1, 0, vec![0.0, 1.0], vec![1.0], vec![1.0]);
        let chain = build_level_chain(&spec, 18.0).unwrap();
        assert_eq!(chain.level_count(), 3);
        let one = chain.index_of(1);
        let two = chain.index_of(2);
        assert_eq!(chain.row(false, one)[two], 1.0);
        assert_eq!(chain.row(true, one)[one], 1.0);
        assert_eq!(chain.row(false, two)[two], 1.0);
        assert_eq!(chain.row(true, two)[two], 1.0);
    }

    #[test]
    fn ignored_urgency_self_loops() {
        let spec = InelasticStateSpec::new(1, 0, vec![0.0, 1.0], vec![1.0], vec![1.0]);
        let chain = build_level_chain(&spec, 18.0).unwrap();
        let zero = chain.index_of(0);
        assert_eq!(walk(&chain, false, zero, 50)[zero], 1.0);
    }

    #[test]
    fn four_stage_urgency() {
        let spec = InelasticStateSpec::new(1, 4, vec![0.0, 1.0], vec![1.0], vec![0.0, 1.0]);
        let chain = build_level_chain(&spec, 18.0).unwrap();
        assert_eq!(chain.level_count(), 7);
        let zero = chain.index_of(0);
        for s in 1..=4 {
            assert_eq!(walk(&chain, false, zero, s)[chain.index_of(-(s as i64))], 1.0);
        }
        assert_eq!(walk(&chain, false, zero, 5)[chain.suspended_level()], 1.0);
        // phi_{D_u} = 1 - gamma_0 from the most overdue level.
        assert_eq!(chain.urgency_block(false).get(0, chain.level_count() - 1), 1.0);
    }

    #[test]
    fn admit_from_urgency_reaches_level_one() {
        let spec = InelasticStateSpec::new(3, 2, vec![0.5, 0.5], vec![0.2, 0.8], vec![0.3, 0.7]);
        let chain = build_level_chain(&spec, 18.0).unwrap();
        for w in -2..=0 {
            assert_eq!(chain.row(true, chain.index_of(w))[chain.index_of(1)], 1.0);
        }
    }

    #[test]
    fn printed_matrix_positions() {
        // D_p = 3: rho_w = sum_{l >= 4-w} pi_l; eta_w = sum_{l >= w-1} eps_l.
        let pi = vec![0.5, 0.2, 0.2, 0.1];
        let eps = vec![0.6, 0.3, 0.1];
        let spec = InelasticStateSpec::new(3, 1, pi.clone(), eps.clone(), vec![0.4, 0.35, 0.25]);
        let chain = build_level_chain(&spec, 1.0).unwrap();
        let pd = chain.persistence_block(false);
        assert_eq!(&pd.row(0)[..3], &[0.5, 0.2, 0.2]);
        assert!((pd.get(0, 3) - 0.1).abs() < 1e-15);
        assert!((pd.get(1, 3) - 0.3).abs() < 1e-15);
        assert!((pd.get(2, 3) - 0.5).abs() < 1e-15);
        let pa = chain.persistence_block(true);
        assert!((pa.get(1, 0) - 0.4).abs() < 1e-15);
        assert_eq!(pa.get(1, 1), 0.6);
        assert!((pa.get(2, 0) - 0.1).abs() < 1e-15);
        assert_eq!(pa.get(2, 1), 0.3);
        assert_eq!(pa.get(2, 2), 0.6);
        let ud = chain.urgency_block(false);
        // Row w = -1: gamma_0 stays, phi_1 = 1 - gamma_0.
        assert_eq!(ud.get(0, 0), 0.4);
        assert!((ud.get(0, 5) - 0.6).abs() < 1e-15);
        // Row w = 0: gamma_1 to -1, gamma_0 stays, phi_0 = gamma_2.
        assert_eq!(ud.get(1, 0), 0.35);
        assert_eq!(ud.get(1, 1), 0.4);
        assert!((ud.get(1, 5) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn level_chains_are_stochastic() {
        for (dp, du) in [(1, 0), (2, 3), (5, 1), (4, 4)] {
            let spec = InelasticStateSpec {
                persistence_levels: dp,
                urgency_levels: du,
                pi: CountingSpec::PoissonRate(0.05),
                epsilon: CountingSpec::Probabilities(vec![0.2, 0.3, 0.5]),
                gamma: CountingSpec::PoissonRate(0.1),
                prune_dominated: true,
            };
            let chain = build_level_chain(&spec, 18.0).unwrap();
            for admit in [false, true] {
                assert_stochastic(chain.matrix(admit));
                assert_stochastic(chain.persistence_block(admit));
                assert_stochastic(chain.urgency_block(admit));
                let top = chain.suspended_level();
                assert_eq!(chain.row(admit, top)[top], 1.0);
            }
        }
    }

    #[test]
    fn invalid_masses_rejected() {
        let spec = InelasticStateSpec::new(1, 0, vec![0.5, 0.6], vec![1.0], vec![1.0]);
        assert!(matches!(build_level_chain(&spec, 1.0), Err(Error::Validation(_))));
        let spec = InelasticStateSpec::new(0, 0, vec![1.0], vec![1.0], vec![1.0]);
        assert!(build_level_chain(&spec, 1.0).is_err());
    }

    fn video_flows() -> Vec<InelasticFlowSpec> {
        vec![
            InelasticFlowSpec::new(2.5, 25.0),
            InelasticFlowSpec::stateful(75.0, 25.0),
        ]
    }

    #[test]
    fn composite_product_and_pruning() {
        let full = build_composite_control_space(&video_flows(), 200.0, false).unwrap();
        assert_eq!(full.len(), 4);
        let loads: Vec<f64> = full.actions().iter().map(|a| a.load).collect();
        assert_eq!(loads, vec![0.0, 2.5, 75.0, 77.5]);
        let pruned = build_composite_control_space(&video_flows(), 200.0, true).unwrap();
        assert_eq!(pruned.len(), 3);
        let admits: Vec<bool> = pruned
            .actions()
            .iter()
            .map(|a| a.stateful.unwrap().admit)
            .collect();
        assert_eq!(admits, vec![false, false, true]);
        let cal = pruned.calibrate(1.0, 1800.0).unwrap();
        cal.check_ordering().unwrap();
        assert!((cal.action(3).stateful.unwrap().reward_rate - 0.5 / 1800.0).abs() < 1e-18);
    }

    #[test]
    fn zero_load_stateful_set_duplicates_ordering() {
        let flows = vec![
            InelasticFlowSpec::new(1.0, 2.0),
            InelasticFlowSpec::new(3.0, 1.0),
            InelasticFlowSpec::stateful(0.0, 0.0),
        ];
        let cs = build_composite_control_space(&flows, 10.0, false).unwrap();
        let loads: Vec<f64> = cs.actions().iter().map(|a| a.load).collect();
        assert_eq!(loads, vec![0.0, 0.0, 1.0, 1.0, 4.0, 4.0]);
        let admits: Vec<bool> = cs.actions().iter().map(|a| a.stateful.unwrap().admit).collect();
        assert_eq!(admits, vec![false, true, false, true, false, true]);
    }

    #[test]
    fn composite_requires_stateful_flows() {
        let flows = vec![InelasticFlowSpec::new(1.0, 1.0)];
        assert!(build_composite_control_space(&flows, 10.0, true).is_err());
    }

    fn video_scenario(spec: Option<InelasticStateSpec>) -> crate::scenario::Scenario {
        use crate::scenario::{LinkScenario, Scenario};
        let link = LinkScenario::new(200.0, 240_000.0, 1800.0).with_flows(video_flows());
        let mut sc = Scenario::new(link, 20, 20).unwrap();
        sc.stateful = spec;
        sc
    }

    #[test]
    fn degenerate_levels_match_composite_model() {
        use crate::ssp::{build_model, build_model_for_actions, solve, DEFAULT_MAX_MODEL_BYTES};
        let spec = InelasticStateSpec::new(1, 0, vec![1.0], vec![1.0], vec![1.0]);
        let sc = video_scenario(Some(spec));
        let augmented = build_model(&sc).unwrap();
        assert_eq!(augmented.state_count(), 3 * 21 * 21);
        let mut plain = sc.clone();
        plain.stateful = None;
        let actions = sc.control_space().unwrap().actions().to_vec();
        let base = build_model_for_actions(&plain, actions, 0.0, DEFAULT_MAX_MODEL_BYTES).unwrap();
        let (a, b) = (solve(&augmented), solve(&base));
        // The suspended level is unreachable here and earns less by design.
        for level in 0..2 {
            for i in 1..=base.state_count() - 1 {
                let lifted = augmented.state_index(level, base.cell(i).x, base.cell(i).k);
                assert!((a.cost.get(lifted) - b.cost.get(i)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn augmented_rows_are_stochastic() {
        let spec = InelasticStateSpec::new(2, 1, vec![0.3, 0.7], vec![0.5, 0.5], vec![0.6, 0.4]);
        let model = crate::ssp::build_model(&video_scenario(Some(spec))).unwrap();
        for i in 1..=model.state_count() {
            for a in 1..=model.action_count() {
                let sum: f64 = model.transition_row(a, i).iter().map(|t| t.prob).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn persistence_makes_policy_level_dependent() {
        let spec = InelasticStateSpec::new(1, 0, vec![0.0, 1.0], vec![1.0], vec![1.0]);
        let model = crate::ssp::build_model(&video_scenario(Some(spec))).unwrap();
        let sol = crate::ssp::solve(&model);
        let (zero, one) = (model.levels().unwrap().index_of(0), model.levels().unwrap().index_of(1));
        let differs = (0..20).any(|k| {
            (0..20).any(|x| {
                sol.policy.action(model.state_index(zero, x, k))
                    != sol.policy.action(model.state_index(one, x, k))
            })
        });
        assert!(differs);
    }

    #[test]
    fn augmentation_respects_capacity() {
        let spec = InelasticStateSpec::new(1, 0, vec![1.0], vec![1.0], vec![1.0]);
        let sc = video_scenario(Some(spec.clone()));
        let actions = sc.control_space().unwrap().actions().to_vec();
        let err = crate::ssp::build_model_for_actions(&sc, actions, 0.0, 1024).unwrap_err();
        assert!(matches!(err, crate::error::Error::Capacity { .. }));
    }
}

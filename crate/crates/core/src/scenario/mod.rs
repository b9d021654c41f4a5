//! Scenario parameters, the step-stage grid and the ordered control space.
//!
//! A scenario describes one link of bandwidth `B` (Mbps) shared by a single
//! elastic flow of size `S` (Mb) and deadline `T` (s) and a collection of
//! candidate inelastic flows. Units are fixed throughout the crate: Mbps, Mb,
//! seconds and utils.

mod file;

pub use file::{ScenarioDocument, TrueModelSpec};

use std::cmp::Ordering;

use crate::error::{ensure, validation, Error, Result};
use crate::stateful::InelasticStateSpec;

/// One candidate inelastic flow, or an explicit group of flows admitted together.
#[derive(Debug, Clone, PartialEq)]
pub struct InelasticFlowSpec {
    /// Offered load in Mbps.
    pub load: f64,
    /// Reward rate in utils per second while admitted (before calibration).
    pub reward_rate: f64,
    /// Subject to persistence/urgency requirements.
    pub stateful: bool,
}

impl InelasticFlowSpec {
    pub fn new(load: f64, reward_rate: f64) -> Self {
        Self {
            load,
            reward_rate,
            stateful: false,
        }
    }

    pub fn stateful(load: f64, reward_rate: f64) -> Self {
        Self {
            load,
            reward_rate,
            stateful: true,
        }
    }

    /// Reward per unit load; a zero-load flow with positive reward ranks first.
    pub fn profitability(&self) -> f64 {
        if self.load == 0.0 {
            if self.reward_rate > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            self.reward_rate / self.load
        }
    }

    fn validate(&self, idx: usize) -> Result<()> {
        ensure(self.load.is_finite() && self.load >= 0.0, || {
            format!("flow {idx}: load must be finite and >= 0, got {}", self.load)
        })?;
        ensure(
            self.reward_rate.is_finite() && self.reward_rate >= 0.0,
            || {
                format!(
                    "flow {idx}: reward_rate must be finite and >= 0, got {}",
                    self.reward_rate
                )
            },
        )
    }
}

/// Time-dependent reward for completing the elastic flow, before any soft
/// deadline modification.
#[derive(Debug, Clone, PartialEq)]
pub enum ElasticReward {
    Constant(f64),
    /// Breakpoints `(t, V)` with strictly increasing `t`, interpolated
    /// linearly and held constant outside the first and last breakpoint.
    Table(Vec<(f64, f64)>),
}

impl Default for ElasticReward {
    fn default() -> Self {
        ElasticReward::Constant(1.0)
    }
}

impl ElasticReward {
    /// Unmodified reward at elapsed time `t`; zero beyond the deadline.
    pub fn value(&self, t: f64, deadline: f64) -> f64 {
        if t > deadline {
            return 0.0;
        }
        match self {
            ElasticReward::Constant(v) => *v,
            ElasticReward::Table(points) => {
                let first = points[0];
                if t <= first.0 {
                    return first.1;
                }
                for pair in points.windows(2) {
                    let (t0, v0) = pair[0];
                    let (t1, v1) = pair[1];
                    if t <= t1 {
                        return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                    }
                }
                points[points.len() - 1].1
            }
        }
    }

    fn validate(&self, deadline: f64) -> Result<()> {
        match self {
            ElasticReward::Constant(v) => ensure(v.is_finite() && *v > 0.0, || {
                format!("elastic reward must be positive, got {v}")
            }),
            ElasticReward::Table(points) => {
                ensure(!points.is_empty(), || {
                    "elastic reward table is empty".to_string()
                })?;
                for (idx, &(t, v)) in points.iter().enumerate() {
                    ensure(t.is_finite() && (0.0..=deadline).contains(&t), || {
                        format!("reward breakpoint {idx}: t={t} outside [0, {deadline}]")
                    })?;
                    ensure(v.is_finite() && v > 0.0, || {
                        format!("reward breakpoint {idx}: value must be positive, got {v}")
                    })?;
                }
                ensure(points.windows(2).all(|w| w[0].0 < w[1].0), || {
                    "reward breakpoints must have strictly increasing t".to_string()
                })
            }
        }
    }
}

/// Preference for completion before `(1 - alpha) T`, worth `(1 + beta)` times
/// the unmodified reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftDeadline {
    pub alpha: f64,
    pub beta: f64,
}

/// Elastic completion reward at `t`, including the soft deadline if any.
pub fn elastic_reward_at(
    reward: &ElasticReward,
    soft: Option<SoftDeadline>,
    t: f64,
    deadline: f64,
) -> f64 {
    let base = reward.value(t, deadline);
    match soft {
        Some(sd) if t > 0.0 && t <= (1.0 - sd.alpha) * deadline => (1.0 + sd.beta) * base,
        _ => base,
    }
}

/// Physical link parameters plus reward and robustness knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkScenario {
    pub bandwidth: f64,
    pub elastic_size: f64,
    pub elastic_deadline: f64,
    pub flows: Vec<InelasticFlowSpec>,
    pub lambda_i: f64,
    pub soft_deadline: Option<SoftDeadline>,
    /// Desired minimum elastic rate; zero disables the penalty.
    pub rate_bound: f64,
    pub elastic_reward: ElasticReward,
}

impl LinkScenario {
    pub fn new(bandwidth: f64, elastic_size: f64, elastic_deadline: f64) -> Self {
        Self {
            bandwidth,
            elastic_size,
            elastic_deadline,
            flows: Vec::new(),
            lambda_i: 1.0,
            soft_deadline: None,
            rate_bound: 0.0,
            elastic_reward: ElasticReward::default(),
        }
    }

    pub fn with_flows(mut self, flows: Vec<InelasticFlowSpec>) -> Self {
        self.flows = flows;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bandwidth", self.bandwidth),
            ("elastic.size", self.elastic_size),
            ("elastic.deadline", self.elastic_deadline),
        ] {
            ensure(v.is_finite() && v > 0.0, || {
                format!("{name} must be positive, got {v}")
            })?;
        }
        ensure(self.lambda_i.is_finite() && self.lambda_i >= 0.0, || {
            format!("lambda_I must be >= 0, got {}", self.lambda_i)
        })?;
        ensure(self.rate_bound.is_finite() && self.rate_bound >= 0.0, || {
            format!("rate_bound_R0 must be >= 0, got {}", self.rate_bound)
        })?;
        if let Some(sd) = self.soft_deadline {
            ensure(sd.alpha > 0.0 && sd.alpha < 1.0, || {
                format!("soft_deadline.alpha must lie in (0,1), got {}", sd.alpha)
            })?;
            ensure(sd.beta.is_finite() && sd.beta > 0.0, || {
                format!("soft_deadline.beta must be positive, got {}", sd.beta)
            })?;
        }
        self.elastic_reward.validate(self.elastic_deadline)?;
        for (idx, flow) in self.flows.iter().enumerate() {
            flow.validate(idx)?;
        }
        Ok(())
    }

    /// Elastic completion reward at elapsed time `t`.
    pub fn elastic_reward_at(&self, t: f64) -> f64 {
        elastic_reward_at(
            &self.elastic_reward,
            self.soft_deadline,
            t,
            self.elastic_deadline,
        )
    }

    /// `V^E(T)`, the reward for completing exactly at the deadline.
    pub fn reward_at_deadline(&self) -> f64 {
        self.elastic_reward_at(self.elastic_deadline)
    }
}

/// The `(M+1) x (N+1)` grid of step-stage cells.
///
/// Cell `(x, k)` is state `i = 1 + x + (M+1) k`; the terminal cell `(M, N)` is
/// state `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    steps: usize,
    stages: usize,
    size: f64,
    deadline: f64,
}

impl Discretization {
    pub fn new(steps: usize, stages: usize, size: f64, deadline: f64) -> Result<Self> {
        ensure(steps >= 1 && steps <= stages, || {
            format!("discretization requires 1 <= M <= N, got M={steps}, N={stages}")
        })?;
        ensure(size.is_finite() && size > 0.0, || {
            format!("elastic size must be positive, got {size}")
        })?;
        ensure(deadline.is_finite() && deadline > 0.0, || {
            format!("elastic deadline must be positive, got {deadline}")
        })?;
        Ok(Self {
            steps,
            stages,
            size,
            deadline,
        })
    }

    /// `M`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `N`.
    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn size(&self) -> f64 {
        self.size
    }

    pub fn deadline(&self) -> f64 {
        self.deadline
    }

    /// Megabits per step.
    pub fn delta_s(&self) -> f64 {
        self.size / self.steps as f64
    }

    /// Seconds per stage.
    pub fn delta_t(&self) -> f64 {
        self.deadline / self.stages as f64
    }

    /// Number of cells in one stage column, `M + 1`.
    pub fn width(&self) -> usize {
        self.steps + 1
    }

    /// `n = (M+1)(N+1)`.
    pub fn state_count(&self) -> usize {
        (self.steps + 1) * (self.stages + 1)
    }

    /// One-based state index of cell `(x, k)`.
    pub fn state_index(&self, x: usize, k: usize) -> usize {
        debug_assert!(x <= self.steps && k <= self.stages);
        1 + x + self.width() * k
    }

    /// Inverse of [`Discretization::state_index`].
    pub fn cell(&self, i: usize) -> (usize, usize) {
        debug_assert!(i >= 1 && i <= self.state_count());
        let z = i - 1;
        (z % self.width(), z / self.width())
    }

    /// Remaining size at the upper edge of step `x`.
    pub fn remaining_at_step(&self, x: usize) -> f64 {
        if x == self.steps {
            0.0
        } else {
            self.size - x as f64 * self.delta_s()
        }
    }

    /// Elapsed time at the start of stage `k`.
    pub fn time_at_stage(&self, k: usize) -> f64 {
        if k == self.stages {
            self.deadline
        } else {
            k as f64 * self.delta_t()
        }
    }

    /// Step containing remaining size `s`, using half-open intervals
    /// `(S-(x+1)dS, S-x dS]` and the singleton `{0}` for step `M`.
    pub fn step_of(&self, s: f64) -> Result<usize> {
        if !(0.0..=self.size).contains(&s) {
            return Err(Error::Domain(format!(
                "remaining size {s} outside [0, {}]",
                self.size
            )));
        }
        if s == 0.0 {
            return Ok(self.steps);
        }
        let ds = self.delta_s();
        let last = self.steps - 1;
        let mut x = (((self.size - s) / ds).floor() as usize).min(last);
        while x > 0 && s > self.size - x as f64 * ds {
            x -= 1;
        }
        while x < last && s <= self.size - (x + 1) as f64 * ds {
            x += 1;
        }
        Ok(x)
    }

    /// Stage containing elapsed time `t`, using half-open intervals
    /// `[k dT, (k+1) dT)` and the singleton `{T}` for stage `N`.
    pub fn stage_of(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.deadline).contains(&t) {
            return Err(Error::Domain(format!(
                "elapsed time {t} outside [0, {}]",
                self.deadline
            )));
        }
        if t == self.deadline {
            return Ok(self.stages);
        }
        let dt = self.delta_t();
        let last = self.stages - 1;
        let mut k = ((t / dt).floor() as usize).min(last);
        while k > 0 && t < k as f64 * dt {
            k -= 1;
        }
        while k < last && t >= (k + 1) as f64 * dt {
            k += 1;
        }
        Ok(k)
    }

    /// State index of the cell holding continuous status `(s, t)`.
    ///
    /// Boundaries are compared exactly; callers quantize upstream if needed.
    pub fn locate_state(&self, s: f64, t: f64) -> Result<usize> {
        let x = self.step_of(s)?;
        let k = self.stage_of(t)?;
        Ok(self.state_index(x, k))
    }
}

/// Stateful part of a composite action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatefulPart {
    pub admit: bool,
    raw_reward: f64,
    /// Calibrated reward rate contributed by the stateful set (zero when denied).
    pub reward_rate: f64,
}

impl StatefulPart {
    pub(crate) fn new(admit: bool, raw_reward: f64) -> Self {
        Self {
            admit,
            raw_reward,
            reward_rate: raw_reward,
        }
    }
}

/// One admissible subset of inelastic flows.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpec {
    /// Total offered load `L(a)`.
    pub load: f64,
    /// Mean elastic rate `R(a)`.
    pub rate: f64,
    raw_reward: f64,
    /// Inelastic reward rate `V^I(a)`; equals the raw sum until calibrated.
    pub reward_rate: f64,
    /// Indices into the scenario's flow list admitted by this action.
    pub members: Vec<usize>,
    /// Present only in composite control spaces.
    pub stateful: Option<StatefulPart>,
}

impl ActionSpec {
    pub(crate) fn new(
        load: f64,
        rate: f64,
        raw_reward: f64,
        members: Vec<usize>,
        stateful: Option<StatefulPart>,
    ) -> Self {
        Self {
            load,
            rate,
            raw_reward,
            reward_rate: raw_reward,
            members,
            stateful,
        }
    }

    pub fn raw_reward(&self) -> f64 {
        self.raw_reward
    }
}

/// Ordered control space: action 1 (index 0) is the empty set.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSpace {
    bandwidth: f64,
    actions: Vec<ActionSpec>,
    calibrated: bool,
}

impl ControlSpace {
    pub(crate) fn from_actions(bandwidth: f64, actions: Vec<ActionSpec>) -> Self {
        Self {
            bandwidth,
            actions,
            calibrated: false,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// `m`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[ActionSpec] {
        &self.actions
    }

    /// Action by one-based index `a`.
    pub fn action(&self, a: usize) -> &ActionSpec {
        &self.actions[a - 1]
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    /// No action carries inelastic reward, so calibration is vacuous.
    pub fn is_rewardless(&self) -> bool {
        self.actions.iter().all(|a| a.raw_reward == 0.0)
    }

    pub fn is_composite(&self) -> bool {
        self.actions.iter().any(|a| a.stateful.is_some())
    }

    /// Rescale reward rates so that `V^I(m) = V^E(T) / T`.
    ///
    /// Always scales from the raw sums, so calibrating twice equals
    /// calibrating once.
    pub fn calibrate(&self, reward_at_deadline: f64, deadline: f64) -> Result<ControlSpace> {
        if !(reward_at_deadline > 0.0) {
            return Err(Error::Calibration(format!(
                "elastic reward at the deadline must be positive, got {reward_at_deadline}"
            )));
        }
        let top = self.actions.last().map(|a| a.raw_reward).unwrap_or(0.0);
        if self.actions.len() < 2 || !(top > 0.0) {
            return Err(Error::Calibration(
                "the heaviest action carries no inelastic reward".to_string(),
            ));
        }
        let target = reward_at_deadline / deadline;
        let mut out = self.clone();
        for action in &mut out.actions {
            action.reward_rate = action.raw_reward / top * target;
            if let Some(part) = action.stateful.as_mut() {
                part.reward_rate = part.raw_reward / top * target;
            }
        }
        out.calibrated = true;
        Ok(out)
    }

    /// Checks `0 = L(1) <= L(2) <= ... <= L(m) <= B` and
    /// `0 = V^I(1) <= ... <= V^I(m)`.
    pub fn check_ordering(&self) -> Result<()> {
        let first = &self.actions[0];
        ensure(first.load == 0.0 && first.raw_reward == 0.0, || {
            "action 1 must be the empty set".to_string()
        })?;
        for (idx, w) in self.actions.windows(2).enumerate() {
            ensure(w[0].load <= w[1].load, || {
                format!("loads not ordered at action {}", idx + 2)
            })?;
            ensure(w[0].reward_rate <= w[1].reward_rate, || {
                format!("reward rates not ordered at action {}", idx + 2)
            })?;
        }
        ensure(self.actions.last().unwrap().load <= self.bandwidth, || {
            "heaviest action exceeds the bandwidth".to_string()
        })
    }
}

/// Flow ordering: non-increasing reward per load, ties broken by smaller
/// load, then by input position.
pub(crate) fn profitability_order(flows: &[(usize, &InelasticFlowSpec)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..flows.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (flows[a].1, flows[b].1);
        fb.profitability()
            .partial_cmp(&fa.profitability())
            .unwrap_or(Ordering::Equal)
            .then(fa.load.partial_cmp(&fb.load).unwrap_or(Ordering::Equal))
            .then(flows[a].0.cmp(&flows[b].0))
    });
    order
}

/// Subset-construction control space over the given flows: action `a`
/// admits the `a - 1` most profitable flows, aggregating load and reward
/// additively. Rewards are left uncalibrated.
pub fn build_control_space(flows: &[InelasticFlowSpec], bandwidth: f64) -> Result<ControlSpace> {
    let indexed: Vec<(usize, &InelasticFlowSpec)> = flows.iter().enumerate().collect();
    build_control_space_indexed(&indexed, bandwidth)
}

/// As [`build_control_space`], over a subset of a larger flow list whose
/// original indices are carried into [`ActionSpec::members`].
pub(crate) fn build_control_space_indexed(
    flows: &[(usize, &InelasticFlowSpec)],
    bandwidth: f64,
) -> Result<ControlSpace> {
    ensure(bandwidth.is_finite() && bandwidth > 0.0, || {
        format!("bandwidth must be positive, got {bandwidth}")
    })?;
    for &(idx, flow) in flows {
        flow.validate(idx)?;
    }
    let order = profitability_order(flows);
    let mut actions = Vec::with_capacity(flows.len() + 1);
    actions.push(ActionSpec::new(0.0, bandwidth, 0.0, Vec::new(), None));
    let mut members = Vec::new();
    let mut load = 0.0;
    let mut reward = 0.0;
    for pos in order {
        let (idx, flow) = flows[pos];
        load += flow.load;
        reward += flow.reward_rate;
        members.push(idx);
        if load > bandwidth {
            return Err(validation(format!(
                "admitting flows {members:?} needs {load} Mbps, above the bandwidth {bandwidth}"
            )));
        }
        actions.push(ActionSpec::new(
            load,
            bandwidth - load,
            reward,
            members.clone(),
            None,
        ));
    }
    Ok(ControlSpace::from_actions(bandwidth, actions))
}

/// A fully specified problem: link, grid, optional stateful requirements and
/// the true-model overrides used for mismatch studies.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub link: LinkScenario,
    pub grid: Discretization,
    pub stateful: Option<InelasticStateSpec>,
    pub overrides: Vec<TrueModelSpec>,
}

impl Scenario {
    pub fn new(link: LinkScenario, steps: usize, stages: usize) -> Result<Self> {
        link.validate()?;
        let grid = Discretization::new(steps, stages, link.elastic_size, link.elastic_deadline)?;
        Ok(Self {
            link,
            grid,
            stateful: None,
            overrides: Vec::new(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        ScenarioDocument::parse(text)?.into_scenario()
    }

    /// The nominal control space, calibrated. Composite when stateful
    /// requirements are configured.
    pub fn control_space(&self) -> Result<ControlSpace> {
        let space = match &self.stateful {
            Some(spec) => crate::stateful::build_composite_control_space(
                &self.link.flows,
                self.link.bandwidth,
                spec.prune_dominated,
            )?,
            None => {
                ensure(self.link.flows.iter().all(|f| !f.stateful), || {
                    "flows are marked stateful but no stateful section is configured".to_string()
                })?;
                build_control_space(&self.link.flows, self.link.bandwidth)?
            }
        };
        if space.is_rewardless() {
            Ok(space)
        } else {
            space.calibrate(self.link.reward_at_deadline(), self.link.elastic_deadline)
        }
    }
}

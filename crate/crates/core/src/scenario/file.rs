//! TOML scenario documents.
//!
//! ```toml
//! bandwidth = 200.0
//! lambda_I = 1.0
//! rate_bound_R0 = 0.0
//!
//! [elastic]
//! size = 240000.0
//! deadline = 1800.0
//! reward = 1.0              # or [[t0, V0], [t1, V1], ...]
//!
//! [discretization]
//! M = 100
//! N = 100
//!
//! [[flows]]
//! load = 0.1
//! reward_rate = 1.0
//! count = 25                # optional, replicates the entry
//! ```
//!
//! Optional sections: `[soft_deadline]` with `alpha`/`beta`, `[stateful]` with
//! `D_p`, `D_u`, `pi`, `epsilon`, `gamma` (probability lists or
//! `{ poisson_rate = r }`), and `[[overrides]]` with `bandwidth` and optional
//! per-entry `loads` describing true models for mismatch studies.

use serde::Deserialize;

use super::{ElasticReward, InelasticFlowSpec, LinkScenario, Scenario, SoftDeadline};
use crate::error::{ensure, Error, Result};
use crate::stateful::{CountingSpec, InelasticStateSpec};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub bandwidth: f64,
    pub elastic: ElasticDoc,
    #[serde(default)]
    pub soft_deadline: Option<SoftDeadlineDoc>,
    pub discretization: DiscretizationDoc,
    #[serde(rename = "lambda_I", default = "one")]
    pub lambda_i: f64,
    #[serde(rename = "rate_bound_R0", default)]
    pub rate_bound: f64,
    #[serde(default)]
    pub flows: Vec<FlowDoc>,
    #[serde(default)]
    pub stateful: Option<StatefulSection>,
    #[serde(default)]
    pub overrides: Vec<OverrideDoc>,
}

fn one() -> f64 {
    1.0
}

fn single() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticDoc {
    pub size: f64,
    pub deadline: f64,
    #[serde(default)]
    pub reward: Option<RewardDoc>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RewardDoc {
    Constant(f64),
    Table(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftDeadlineDoc {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationDoc {
    #[serde(rename = "M")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub stages: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowDoc {
    pub load: f64,
    pub reward_rate: f64,
    #[serde(default)]
    pub stateful: bool,
    #[serde(default = "single")]
    pub count: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StatefulSection {
    One(StatefulDoc),
    Many(Vec<StatefulDoc>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatefulDoc {
    #[serde(rename = "D_p")]
    pub persistence_levels: usize,
    #[serde(rename = "D_u", default)]
    pub urgency_levels: usize,
    pub pi: CountingDoc,
    pub epsilon: CountingDoc,
    pub gamma: CountingDoc,
    #[serde(default = "yes")]
    pub prune_dominated: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CountingDoc {
    Probabilities(Vec<f64>),
    Poisson { poisson_rate: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideDoc {
    pub bandwidth: f64,
    #[serde(default)]
    pub loads: Option<Vec<f64>>,
}

/// True link conditions for a mismatch study.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModelSpec {
    pub bandwidth: f64,
    /// True load of every flow, aligned with the scenario's flow list.
    pub loads: Option<Vec<f64>>,
}

impl TrueModelSpec {
    pub fn bandwidth(bandwidth: f64) -> Self {
        Self {
            bandwidth,
            loads: None,
        }
    }
}

impl From<CountingDoc> for CountingSpec {
    fn from(doc: CountingDoc) -> Self {
        match doc {
            CountingDoc::Probabilities(p) => CountingSpec::Probabilities(p),
            CountingDoc::Poisson { poisson_rate } => CountingSpec::PoissonRate(poisson_rate),
        }
    }
}

impl ScenarioDocument {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn into_scenario(self) -> Result<Scenario> {
        let mut flows = Vec::new();
        for (idx, doc) in self.flows.iter().enumerate() {
            ensure(doc.count >= 1, || format!("flow entry {idx}: count must be >= 1"))?;
            for _ in 0..doc.count {
                flows.push(InelasticFlowSpec {
                    load: doc.load,
                    reward_rate: doc.reward_rate,
                    stateful: doc.stateful,
                });
            }
        }
        let elastic_reward = match self.elastic.reward {
            None => ElasticReward::default(),
            Some(RewardDoc::Constant(v)) => ElasticReward::Constant(v),
            Some(RewardDoc::Table(points)) => {
                ElasticReward::Table(points.into_iter().map(|[t, v]| (t, v)).collect())
            }
        };
        let link = LinkScenario {
            bandwidth: self.bandwidth,
            elastic_size: self.elastic.size,
            elastic_deadline: self.elastic.deadline,
            flows,
            lambda_i: self.lambda_i,
            soft_deadline: self.soft_deadline.map(|sd| SoftDeadline {
                alpha: sd.alpha,
                beta: sd.beta,
            }),
            rate_bound: self.rate_bound,
            elastic_reward,
        };
        let mut scenario = Scenario::new(link, self.discretization.steps, self.discretization.stages)?;

        scenario.stateful = match self.stateful {
            None => None,
            Some(StatefulSection::One(doc)) => Some(doc),
            Some(StatefulSection::Many(mut docs)) => {
                ensure(docs.len() == 1, || {
                    format!(
                        "only one stateful flow set is supported, found {}",
                        docs.len()
                    )
                })?;
                docs.pop()
            }
        }
        .map(|doc| InelasticStateSpec {
            persistence_levels: doc.persistence_levels,
            urgency_levels: doc.urgency_levels,
            pi: doc.pi.into(),
            epsilon: doc.epsilon.into(),
            gamma: doc.gamma.into(),
            prune_dominated: doc.prune_dominated,
        });
        if let Some(spec) = &scenario.stateful {
            spec.validate()?;
        }

        for (idx, doc) in self.overrides.into_iter().enumerate() {
            let loads = match doc.loads {
                None => None,
                Some(per_entry) => {
                    ensure(per_entry.len() == self.flows.len(), || {
                        format!(
                            "override {idx}: {} loads given for {} flow entries",
                            per_entry.len(),
                            self.flows.len()
                        )
                    })?;
                    Some(
                        per_entry
                            .iter()
                            .zip(&self.flows)
                            .flat_map(|(&l, f)| std::iter::repeat_n(l, f.count))
                            .collect(),
                    )
                }
            };
            scenario.overrides.push(TrueModelSpec {
                bandwidth: doc.bandwidth,
                loads,
            });
        }
        Ok(scenario)
    }
}

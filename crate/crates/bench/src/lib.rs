//! Scenario fixtures shared by the benchmarks.

use admission_core::{InelasticFlowSpec, LinkScenario, Scenario};

/// 200 Mbps link with 25 VoIP calls and 25 video streams, on an `M x N` grid.
pub fn baseline(steps: usize, stages: usize) -> Scenario {
    let mut flows = vec![InelasticFlowSpec::new(0.1, 1.0); 25];
    flows.extend(vec![InelasticFlowSpec::new(3.0, 1.0); 25]);
    let link = LinkScenario::new(200.0, 240_000.0, 1800.0).with_flows(flows);
    Scenario::new(link, steps, stages).expect("valid baseline")
}

use admission_core::{build_model, solve, InelasticFlowSpec, LinkScenario, Scenario, SspModel};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Small {
    bandwidth: f64,
    fill: f64,
    loads: Vec<(f64, f64)>,
    steps: usize,
    extra_stages: usize,
    lambda: f64,
    r0_frac: f64,
}

fn small() -> impl Strategy<Value = Small> {
    (
        5.0f64..50.0,
        0.3f64..1.1,
        prop::collection::vec((0.01f64..0.3, 0.1f64..3.0), 1..5),
        1usize..8,
        0usize..8,
        0.0f64..4.0,
        prop_oneof![Just(0.0), 0.0f64..1.5],
    )
        .prop_map(|(bandwidth, fill, loads, steps, extra_stages, lambda, r0_frac)| Small {
            bandwidth,
            fill,
            loads,
            steps,
            extra_stages,
            lambda,
            r0_frac,
        })
}

impl Small {
    fn scenario(&self, bandwidth: f64, lambda: f64) -> Scenario {
        let deadline = 200.0;
        let size = self.bandwidth * deadline * self.fill;
        let flows = self
            .loads
            .iter()
            .map(|&(l, v)| InelasticFlowSpec::new(l * self.bandwidth / 2.0, v))
            .collect();
        let mut link = LinkScenario::new(bandwidth, size, deadline).with_flows(flows);
        link.lambda_i = lambda;
        link.rate_bound = self.r0_frac * size / deadline;
        Scenario::new(link, self.steps, self.steps + self.extra_stages).unwrap()
    }
}

fn start_cost(model: &SspModel) -> f64 {
    solve(model).cost.get(model.initial_state())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heavier_inelastic_weight_never_raises_cost(s in small(), bump in 0.0f64..3.0) {
        let low = start_cost(&build_model(&s.scenario(s.bandwidth, s.lambda)).unwrap());
        let high = start_cost(&build_model(&s.scenario(s.bandwidth, s.lambda + bump)).unwrap());
        prop_assert!(high <= low + 1e-12, "{high} > {low}");
    }

    #[test]
    fn extra_bandwidth_never_hurts(s in small(), extra in 0.0f64..20.0) {
        let base = start_cost(&build_model(&s.scenario(s.bandwidth, s.lambda)).unwrap());
        let wide = start_cost(&build_model(&s.scenario(s.bandwidth + extra, s.lambda)).unwrap());
        prop_assert!(wide <= base + 1e-12, "{wide} > {base}");
    }

    #[test]
    fn being_ahead_never_hurts(s in small()) {
        let model = build_model(&s.scenario(s.bandwidth, s.lambda)).unwrap();
        let sol = solve(&model);
        let g = model.grid();
        // Completion pays on arrival, so x = M is excluded.
        for k in 0..=g.stages() {
            for x in 0..g.steps().saturating_sub(1) {
                let here = sol.cost.get(model.state_index(0, x, k));
                let ahead = sol.cost.get(model.state_index(0, x + 1, k));
                prop_assert!(ahead <= here + 1e-12, "x {x} k {k}: {ahead} > {here}");
            }
        }
    }

    #[test]
    fn optimal_cost_bounded_by_rewards(s in small()) {
        let model = build_model(&s.scenario(s.bandwidth, s.lambda)).unwrap();
        let j = start_cost(&model);
        // At most the elastic reward plus the calibrated inelastic reward over T.
        prop_assert!(j >= -(1.0 + s.lambda) - 1e-12);
        let penalty_cap = if s.r0_frac > 0.0 { 1.0 } else { 0.0 };
        prop_assert!(j <= penalty_cap + 1e-12);
    }
}

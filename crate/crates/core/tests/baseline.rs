use admission_core::chain::{policy_progress_matrices, propagate_stagewise};
use admission_core::{
    build_model, decompose_cost, evaluate_policy, solve, InelasticFlowSpec, LinkScenario, Policy,
    Scenario, SspModel,
};

fn baseline() -> Scenario {
    let mut flows = vec![InelasticFlowSpec::new(0.1, 1.0); 25];
    flows.extend(vec![InelasticFlowSpec::new(3.0, 1.0); 25]);
    let link = LinkScenario::new(200.0, 240_000.0, 1800.0).with_flows(flows);
    Scenario::new(link, 100, 100).unwrap()
}

fn miss_risk(model: &SspModel, mu: &Policy) -> f64 {
    let f = propagate_stagewise(&policy_progress_matrices(model, mu).unwrap());
    1.0 - f.last().unwrap().completed()
}

#[test]
fn baseline_utility_and_shape() {
    let model = build_model(&baseline()).unwrap();
    assert_eq!(model.state_count(), 101 * 101);
    assert_eq!(model.action_count(), 51);
    let sol = solve(&model);
    let utility = -sol.cost.get(model.initial_state());
    assert!((utility - 1.866).abs() <= 0.02, "utility {utility}");
}

#[test]
fn voip_first_in_profitability_order() {
    let model = build_model(&baseline()).unwrap();
    for a in 2..=26 {
        assert!((model.action(a).load - 0.1 * (a - 1) as f64).abs() < 1e-9);
    }
    assert!((model.action(51).rate - (200.0 - 2.5 - 75.0)).abs() < 1e-9);
    assert!((model.action(51).reward_rate - 1.0 / 1800.0).abs() < 1e-15);
}

#[test]
fn optimum_beats_fixed_admission_levels() {
    let model = build_model(&baseline()).unwrap();
    let sol = solve(&model);
    let n = model.state_count();
    let start = model.initial_state();
    let best = sol.cost.get(start);
    for a in [1, 26, 45, 51] {
        let j = evaluate_policy(&model, &Policy::constant(n, a)).unwrap().get(start);
        assert!(best <= j + 1e-12, "action {a}: {j} beats {best}");
    }
    // Admitting everything risks the deadline; the optimum mostly avoids it.
    assert!(miss_risk(&model, &Policy::constant(n, 51)) > 0.5);
    assert!(miss_risk(&model, &sol.policy) < 0.05);
}

#[test]
fn hurry_band_when_behind() {
    let model = build_model(&baseline()).unwrap();
    let sol = solve(&model);
    let g = model.grid();
    let admitted = |x: usize, k: usize| sol.policy.action(model.state_index(0, x, k));
    for k in [30, 50, 70] {
        let band: Vec<usize> = (0..=g.steps()).filter(|&x| admitted(x, k) < 51).collect();
        assert!(!band.is_empty(), "k {k}: no hurry band");
        let (lo, hi) = (band[0], band[band.len() - 1]);
        assert_eq!(band.len(), hi - lo + 1, "k {k}: band not contiguous");
        // VoIP stays admitted while hurrying; only video is dropped.
        assert!(band.iter().all(|&x| admitted(x, k) >= 26));
        assert!(hi < g.steps());
    }
    // Far behind mid-transfer the deadline is lost anyway, so video comes back.
    assert_eq!(admitted(0, 50), 51);
    for k in 0..g.stages() {
        assert_eq!(admitted(g.steps(), k), 51);
    }
}

#[test]
fn decomposition_accounts_for_all_cost() {
    let model = build_model(&baseline()).unwrap();
    let sol = solve(&model);
    let parts = decompose_cost(&model, &sol.policy).unwrap();
    let start = model.initial_state() - 1;
    let sum = parts.elastic[start] + model.lambda_i() * parts.inelastic[start] + parts.rate_bound[start];
    assert!((sum - sol.cost.total[start]).abs() <= 1e-12);
    assert!(parts.elastic[start] < 0.0 && parts.inelastic[start] < 0.0);
    assert_eq!(parts.rate_bound[start], 0.0);
}

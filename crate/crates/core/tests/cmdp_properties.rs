use std::sync::OnceLock;

use relay_aoi::cmdp::{
    cmdp_solve, policy_long_run_metrics, rvi_solve, verify_switching_structure, MixedPolicy,
    RviConfig,
};
use relay_aoi::{Action, LinkParams, ResourceBudget, SystemState, TruncatedStateSpace};

fn lp(p: f64, q: f64) -> LinkParams {
    LinkParams::new(p, q).unwrap()
}

fn st(k: u64, d: u64) -> SystemState {
    SystemState::new(k, d).unwrap()
}

fn space() -> TruncatedStateSpace {
    TruncatedStateSpace::new(200, 200).unwrap()
}

fn solution(eta: f64) -> &'static MixedPolicy {
    static SOLS: OnceLock<Vec<(f64, MixedPolicy)>> = OnceLock::new();
    let sols = SOLS.get_or_init(|| {
        [0.25, 0.45, 0.65, 1.0]
            .into_iter()
            .map(|eta| {
                let b = ResourceBudget::new(eta).unwrap();
                (
                    eta,
                    cmdp_solve(lp(0.6, 0.7), b, space(), RviConfig::default()).unwrap(),
                )
            })
            .collect()
    });
    &sols.iter().find(|(e, _)| *e == eta).unwrap().1
}

#[test]
fn rvi_outputs_are_switching_type_and_rate_falls_with_lambda() {
    let cfg = RviConfig::default();
    for p in [0.3, 0.6, 0.9] {
        for q in [0.3, 0.6, 0.9] {
            let mut last_rate = f64::INFINITY;
            for lambda in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0] {
                let sol = rvi_solve(lp(p, q), lambda, space(), cfg).unwrap();
                let v = verify_switching_structure(&sol.policy, &space()).unwrap();
                assert!(
                    v.is_empty(),
                    "p={p} q={q} lambda={lambda}: {:?}",
                    &v[..v.len().min(3)]
                );
                let m = policy_long_run_metrics(&sol.policy, lp(p, q)).unwrap();
                assert!(m.forwarding_rate <= last_rate + 1e-12);
                last_rate = m.forwarding_rate;
                let recombined = m.avg_aoi + lambda * m.forwarding_rate;
                assert!(
                    (sol.average_cost - recombined).abs() <= 10.0 * cfg.span_tolerance,
                    "p={p} q={q} lambda={lambda}: {} vs {recombined}",
                    sol.average_cost
                );
            }
        }
    }
}

#[test]
fn tight_budget_mixes_at_one_state() {
    let mp = solution(0.25);
    assert_eq!(mp.differing_states, vec![st(1, 4)]);
    assert!((mp.forwarding_rate() - 0.25).abs() < 1e-9);
    assert!(mp.lambda1 < mp.lambda2 && mp.lambda2 - mp.lambda1 <= 1e-6);
    assert!(mp.alpha > 0.0 && mp.alpha < 1.0);
}

#[test]
fn moderate_budget_mixes_at_one_state() {
    let mp = solution(0.45);
    assert_eq!(mp.differing_states, vec![st(4, 3)]);
    assert!((mp.forwarding_rate() - 0.45).abs() < 1e-9);
}

#[test]
fn loose_budgets_return_the_unconstrained_policy() {
    let free = rvi_solve(lp(0.6, 0.7), 0.0, space(), RviConfig::default()).unwrap();
    let free_rate = policy_long_run_metrics(&free.policy, lp(0.6, 0.7))
        .unwrap()
        .forwarding_rate;
    for eta in [0.65, 1.0] {
        let mp = solution(eta);
        assert_eq!(mp.theta1, mp.theta2);
        assert_eq!(mp.theta1, free.policy);
        assert_eq!(mp.alpha, 1.0);
        assert!(mp.differing_states.is_empty());
        assert!((mp.forwarding_rate() - free_rate).abs() < 1e-12);
        assert!(mp.forwarding_rate() <= eta + 1e-3);
    }
}

#[test]
fn randomized_solve_reproduces_mixture_averages() {
    for eta in [0.25, 0.45] {
        let mp = solution(eta);
        let direct = mp.solve_metrics(lp(0.6, 0.7)).unwrap();
        assert!(
            (direct.forwarding_rate - eta).abs() < 1e-9,
            "{}",
            direct.forwarding_rate
        );
        assert!((direct.avg_aoi - mp.avg_aoi()).abs() < 1e-9);
        let s = mp.differing_states[0];
        let f = mp.forward_probability(s);
        assert!(f > 0.0 && f < 1.0);
    }
}

#[test]
fn solver_policies_never_forward_when_synchronized() {
    let mp = solution(0.25);
    for policy in [&mp.theta1, &mp.theta2] {
        for k in 2..=200 {
            assert_eq!(policy.action(st(k, 0)), Action::Receive);
        }
    }
}

#[test]
fn policy_grid_exports() {
    let mp = solution(0.45);
    let cells: Vec<_> = mp.theta1.cells().collect();
    assert_eq!(cells.len(), space().len());
    assert!(cells.iter().any(|c| c.action == Action::Forward));
    let json = serde_json::to_string(&mp.theta1).unwrap();
    let back: relay_aoi::cmdp::DeterministicPolicy = serde_json::from_str(&json).unwrap();
    assert_eq!(&back, &mp.theta1);
}

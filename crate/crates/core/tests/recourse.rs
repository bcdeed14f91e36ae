mod common;

use flexbus::phase2::{solve_p2_routes, P2Options, P2Solver};
use flexbus::stochastic::sample_scenario;
use proptest::prelude::*;

use common::{brute_force_p2, tight_instance, truncate};

fn case(seed: u64, limit: f64, nreq: usize, picks: &[usize]) -> (flexbus::domain::ServiceInstance, Vec<usize>, flexbus::stochastic::Scenario) {
    let mut inst = tight_instance(seed, limit);
    inst.fleet.size = inst.fleet.size.max(picks.len());
    let full = sample_scenario(&inst, 0, 1, seed).unwrap();
    let scen = truncate(&inst, &full, nreq);
    let routes: Vec<usize> = picks.iter().map(|&p| p % inst.routes.len()).collect();
    (inst, routes, scen)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn search_and_milp_match_enumeration(seed in 0u64..10_000, limit in 1.0f64..6.0, nreq in 0usize..=8, picks in prop::collection::vec(0usize..6, 0..=2)) {
        let (inst, routes, scen) = case(seed, limit, nreq, &picks);
        let exact = brute_force_p2(&inst, &routes, &scen);
        let search = solve_p2_routes(&inst, &routes, &scen, &P2Options::default()).unwrap();
        prop_assert!(search.proven_optimal);
        prop_assert!((search.adhoc_cost - exact).abs() < 1e-6, "search {} vs {}", search.adhoc_cost, exact);
        let milp = solve_p2_routes(&inst, &routes, &scen, &P2Options { solver: P2Solver::Milp, ..Default::default() }).unwrap();
        prop_assert!((milp.adhoc_cost - exact).abs() < 1e-6, "milp {} vs {}", milp.adhoc_cost, exact);
    }

    #[test]
    fn extra_vehicle_never_raises_recourse(seed in 0u64..10_000, limit in 1.0f64..6.0, picks in prop::collection::vec(0usize..6, 1..=3)) {
        let (inst, routes, scen) = case(seed, limit, 12, &picks);
        let opts = P2Options::default();
        let fewer = solve_p2_routes(&inst, &routes[..routes.len() - 1], &scen, &opts).unwrap();
        let more = solve_p2_routes(&inst, &routes, &scen, &opts).unwrap();
        prop_assert!(more.adhoc_cost <= fewer.adhoc_cost + 1e-9);
    }

    #[test]
    fn assignments_pass_the_checker(seed in 0u64..10_000, limit in 1.0f64..6.0, picks in prop::collection::vec(0usize..6, 0..=3)) {
        let (inst, routes, scen) = case(seed, limit, 14, &picks);
        let a = solve_p2_routes(&inst, &routes, &scen, &P2Options::default()).unwrap();
        let bad = flexbus::feasibility::check_scenario(&inst, &routes, &scen, &a.vehicle_of);
        prop_assert!(bad.is_empty(), "{:?}", bad);
        let unserved: f64 = scen.requests.iter().zip(&a.vehicle_of).filter(|(_, v)| v.is_none()).map(|(r, _)| r.adhoc_cost).sum();
        prop_assert!((unserved - a.adhoc_cost).abs() < 1e-9);
    }
}
